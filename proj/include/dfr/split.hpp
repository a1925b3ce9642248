#pragma once

// Identity-safe dataset splitting. Actors are graph nodes and every fake video
// joins its source and target actor, so connected components are the smallest
// units that can be placed in a split without leaking an identity across
// train/validation/test. Frames are then sampled class-balanced per split.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <cstdio>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dfr/core.hpp"
#include "dfr/disjoint_set.hpp"
#include "dfr/random.hpp"

namespace dfr {

enum class VideoKind { real, fake };
enum class Split { train = 0, validation = 1, test = 2 };

inline constexpr std::array<Split, 3> kSplits{Split::train, Split::validation, Split::test};

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val") return Split::validation;
  if (s == "test") return Split::test;
  throw Error("unknown split '" + s + "'");
}

inline std::size_t idx(Split s) { return static_cast<std::size_t>(s); }

struct VideoRecord {
  std::string id;
  VideoKind kind = VideoKind::real;
  std::vector<std::string> actors;  // 1 for real, {source, target} for fake
  std::uint64_t frame_count = 0;
  std::string path;
  std::string method;  // passthrough tag, e.g. manipulation method

  void validate() const {
    if (id.empty()) throw Error("video record without id");
    const std::size_t want = kind == VideoKind::real ? 1 : 2;
    if (actors.size() != want)
      throw Error("video '" + id + "': " + (kind == VideoKind::real ? "real" : "fake") + " video needs " +
                  std::to_string(want) + " actor(s), got " + std::to_string(actors.size()));
    for (const auto& a : actors)
      if (a.empty()) throw Error("video '" + id + "' has an empty actor id");
  }
};

struct ActorPartition {
  std::vector<std::vector<std::string>> components;  // each sorted; ordered by smallest actor
  std::unordered_map<std::string, std::size_t> component_of;

  std::size_t component_of_video(const VideoRecord& v) const { return component_of.at(v.actors.front()); }
};

inline ActorPartition build_actor_components(std::span<const VideoRecord> videos) {
  std::unordered_map<std::string, std::size_t> node;
  std::vector<std::string> names;
  DisjointSet<std::size_t> dsu;
  auto node_of = [&](const std::string& actor) {
    auto [it, inserted] = node.try_emplace(actor, names.size());
    if (inserted) {
      names.push_back(actor);
      dsu.add();
    }
    return it->second;
  };
  for (const auto& v : videos) {
    v.validate();
    const auto a = node_of(v.actors.front());
    if (v.kind == VideoKind::fake) dsu.unite(a, node_of(v.actors.back()));
  }
  std::map<std::size_t, std::vector<std::string>> by_root;
  for (std::size_t i = 0; i < names.size(); ++i) by_root[dsu.find(i)].push_back(names[i]);
  ActorPartition p;
  for (auto& [root, members] : by_root) {
    std::sort(members.begin(), members.end());
    p.components.push_back(std::move(members));
  }
  std::sort(p.components.begin(), p.components.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  for (std::size_t c = 0; c < p.components.size(); ++c)
    for (const auto& a : p.components[c]) p.component_of[a] = c;
  return p;
}

struct SplitRatios {
  std::array<double, 3> values{0.8, 0.1, 0.1};

  void validate() const {
    double sum = 0.0;
    for (double r : values) {
      if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1, got " + std::to_string(sum));
  }

  static SplitRatios parse(const std::string& text) {
    SplitRatios r;
    std::stringstream ss(text);
    std::string item;
    std::size_t n = 0;
    while (std::getline(ss, item, ',')) {
      if (n == 3) throw ConfigError("expected three comma-separated ratios");
      r.values[n++] = parse_fraction(item);
    }
    if (n != 3) throw ConfigError("expected three comma-separated ratios");
    r.validate();
    return r;
  }
};

struct ComponentOverflow {
  std::size_t component = 0;
  std::uint64_t weight = 0;
  double capacity = 0.0;  // frames allotted to the largest split
  double excess = 0.0;
};

struct SplitAssignment {
  std::unordered_map<std::string, Split> video_split;
  std::vector<Split> component_split;
  std::array<double, 3> target{};
  std::array<double, 3> achieved{};
  std::array<std::uint64_t, 3> frames{};
  std::vector<ComponentOverflow> overflows;

  Split of(const std::string& video_id) const {
    auto it = video_split.find(video_id);
    if (it == video_split.end()) throw Error("video '" + video_id + "' has no split assignment");
    return it->second;
  }

  /// target - achieved, per split.
  std::array<double, 3> deficits() const {
    return {target[0] - achieved[0], target[1] - achieved[1], target[2] - achieved[2]};
  }
};

/// Shuffles components with the seed, then greedily places each (weighted by
/// frame count) into the split with the largest remaining deficit. Splits with
/// a zero ratio never receive components.
inline SplitAssignment assign_components(const ActorPartition& partition, std::span<const VideoRecord> videos,
                                         const SplitRatios& ratios, std::uint64_t seed) {
  ratios.validate();
  std::vector<std::uint64_t> weight(partition.components.size(), 0);
  std::uint64_t total = 0;
  for (const auto& v : videos) {
    weight[partition.component_of_video(v)] += v.frame_count;
    total += v.frame_count;
  }

  std::vector<std::size_t> order(partition.components.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  SplitAssignment out;
  out.target = ratios.values;
  out.component_split.assign(partition.components.size(), Split::train);
  const double largest = *std::max_element(ratios.values.begin(), ratios.values.end()) * static_cast<double>(total);
  for (auto c : order) {
    std::size_t best = 3;
    double best_deficit = 0.0;
    for (std::size_t s = 0; s < 3; ++s) {
      if (ratios.values[s] <= 0.0) continue;
      const double deficit = ratios.values[s] * static_cast<double>(total) - static_cast<double>(out.frames[s]);
      if (best == 3 || deficit > best_deficit) {
        best = s;
        best_deficit = deficit;
      }
    }
    out.component_split[c] = kSplits[best];
    out.frames[best] += weight[c];
    if (static_cast<double>(weight[c]) > largest)
      out.overflows.push_back({c, weight[c], largest, static_cast<double>(weight[c]) - largest});
  }
  for (std::size_t s = 0; s < 3; ++s)
    out.achieved[s] = total == 0 ? 0.0 : static_cast<double>(out.frames[s]) / static_cast<double>(total);
  for (const auto& v : videos) out.video_split[v.id] = out.component_split[partition.component_of_video(v)];
  return out;
}

struct ContaminationViolation {
  std::string actor;
  std::set<Split> splits;
};

struct ContaminationReport {
  std::vector<ContaminationViolation> violations;
  bool clean() const { return violations.empty(); }
};

/// Lists every actor whose videos span more than one split.
inline ContaminationReport verify_no_contamination(const SplitAssignment& assignment,
                                                   std::span<const VideoRecord> videos) {
  std::map<std::string, std::set<Split>> seen;
  for (const auto& v : videos) {
    const Split s = assignment.of(v.id);
    for (const auto& a : v.actors) seen[a].insert(s);
  }
  ContaminationReport report;
  for (auto& [actor, splits] : seen)
    if (splits.size() > 1) report.violations.push_back({actor, splits});
  return report;
}

struct FrameSampleSpec {
  std::array<std::uint64_t, 3> frames_per_split{};
  bool class_balanced = true;
  std::uint64_t seed = 0;
};

struct ManifestEntry {
  std::string frame_path;
  Label label = Label::real;
  std::string video_id;
  std::optional<Split> split;
  std::uint64_t frame_index = 0;
};

inline std::string frame_path_for(const VideoRecord& v, std::uint64_t frame) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%05llu.png", static_cast<unsigned long long>(frame));
  return (v.path.empty() ? v.id : v.path) + "/" + name;
}

namespace detail {

/// k distinct values from [0, n), ascending (Floyd's algorithm).
inline std::vector<std::uint64_t> sample_distinct(std::uint64_t n, std::uint64_t k, Rng& rng) {
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(k) * 2);
  for (std::uint64_t j = n - k; j < n; ++j) {
    const auto t = std::uniform_int_distribution<std::uint64_t>(0, j)(rng);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  std::vector<std::uint64_t> out(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Per split: uniformly samples frames without replacement, half real and half
/// fake when class-balanced. Every frame of a class in a split is equally
/// likely, so per-video counts are proportional to frame_count in expectation.
inline std::vector<ManifestEntry> sample_frames_balanced(const SplitAssignment& assignment,
                                                         std::span<const VideoRecord> videos,
                                                         const FrameSampleSpec& spec) {
  std::vector<ManifestEntry> manifest;
  for (Split split : kSplits) {
    const std::uint64_t want = spec.frames_per_split[idx(split)];
    if (want == 0) continue;
    if (spec.class_balanced && want % 2 != 0)
      throw ConfigError(std::string("class-balanced sampling needs an even frame count for split '") +
                        to_string(split) + "'");
    struct Pool {
      std::vector<const VideoRecord*> videos;
      std::uint64_t frames = 0;
    };
    auto gather = [&](std::optional<VideoKind> kind) {
      Pool p;
      for (const auto& v : videos)
        if (assignment.of(v.id) == split && (!kind || v.kind == *kind) && v.frame_count > 0) {
          p.videos.push_back(&v);
          p.frames += v.frame_count;
        }
      return p;
    };
    auto draw = [&](const Pool& pool, std::uint64_t k, std::uint64_t stream, const char* cls) {
      if (k > pool.frames)
        throw Error(std::string("split '") + to_string(split) + "' has only " + std::to_string(pool.frames) + " " +
                    cls + " frames, " + std::to_string(k) + " requested");
      Rng rng(derive_seed(spec.seed, stream));
      std::size_t vi = 0;
      std::uint64_t base = 0;
      for (auto g : detail::sample_distinct(pool.frames, k, rng)) {
        while (g >= base + pool.videos[vi]->frame_count) base += pool.videos[vi++]->frame_count;
        const VideoRecord& v = *pool.videos[vi];
        manifest.push_back({frame_path_for(v, g - base), v.kind == VideoKind::fake ? Label::fake : Label::real, v.id,
                            split, g - base});
      }
    };
    const std::uint64_t stream = idx(split) * 3;
    if (spec.class_balanced) {
      draw(gather(VideoKind::real), want / 2, stream, "real");
      draw(gather(VideoKind::fake), want / 2, stream + 1, "fake");
    } else {
      draw(gather(std::nullopt), want, stream + 2, "any-class");
    }
  }
  return manifest;
}

// ---------------------------------------------------------------------------
// Catalog and manifest files

inline VideoKind parse_kind(const std::string& s) {
  if (s == "real") return VideoKind::real;
  if (s == "fake") return VideoKind::fake;
  throw Error("unknown video kind '" + s + "'");
}

inline VideoRecord video_from_json(const nlohmann::json& j) {
  try {
    VideoRecord v;
    v.id = j.at("id").get<std::string>();
    v.kind = parse_kind(j.at("kind").get<std::string>());
    v.actors = j.at("actors").get<std::vector<std::string>>();
    v.frame_count = j.at("frame_count").get<std::uint64_t>();
    if (j.contains("path")) v.path = j["path"].get<std::string>();
    if (j.contains("method")) v.method = j["method"].get<std::string>();
    v.validate();
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed catalog record: ") + e.what());
  }
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, delim)) out.push_back(f);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

}  // namespace detail

/// JSON-lines records, or delimited text (.csv / .tsv) with a header naming
/// id, kind, actors ('|'-separated), frame_count and optional path, method.
inline std::vector<VideoRecord> read_catalog(std::istream& in, bool delimited, char delim = ',') {
  std::vector<VideoRecord> out;
  std::string line;
  std::size_t lineno = 0;
  std::unordered_map<std::string, std::size_t> col;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      if (!delimited) {
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw Error("invalid JSON");
        out.push_back(video_from_json(j));
        continue;
      }
      const auto fields = detail::split_fields(line, delim);
      if (col.empty()) {
        for (std::size_t i = 0; i < fields.size(); ++i) col[fields[i]] = i;
        for (const char* need : {"id", "kind", "actors", "frame_count"})
          if (!col.contains(need)) throw Error(std::string("catalog header lacks column '") + need + "'");
        continue;
      }
      auto field = [&](const char* name) -> std::string {
        auto it = col.find(name);
        if (it == col.end() || it->second >= fields.size()) return {};
        return fields[it->second];
      };
      VideoRecord v;
      v.id = field("id");
      v.kind = parse_kind(field("kind"));
      v.actors = detail::split_fields(field("actors"), '|');
      v.frame_count = std::stoull(field("frame_count"));
      v.path = field("path");
      v.method = field("method");
      v.validate();
      out.push_back(std::move(v));
    } catch (const std::exception& e) {
      throw Error("catalog line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::unordered_set<std::string> ids;
  for (const auto& v : out)
    if (!ids.insert(v.id).second) throw Error("duplicate video id '" + v.id + "' in catalog");
  return out;
}

inline std::vector<VideoRecord> read_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open catalog " + path.string());
  const auto ext = path.extension().string();
  if (ext == ".csv") return read_catalog(in, true, ',');
  if (ext == ".tsv") return read_catalog(in, true, '\t');
  return read_catalog(in, false);
}

inline nlohmann::json to_json(const ManifestEntry& e) {
  nlohmann::json j = {{"frame_path", e.frame_path}, {"label", to_int(e.label)}, {"video_id", e.video_id},
                      {"frame_index", e.frame_index}};
  j["split"] = e.split ? nlohmann::json(to_string(*e.split)) : nlohmann::json(nullptr);
  return j;
}

inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
  try {
    ManifestEntry e;
    e.frame_path = j.at("frame_path").get<std::string>();
    const auto& l = j.at("label");
    e.label = l.is_string() ? parse_label(l.get<std::string>()) : label_from_int(l.get<long>());
    if (j.contains("video_id")) e.video_id = j["video_id"].get<std::string>();
    if (j.contains("split") && !j["split"].is_null()) e.split = parse_split(j["split"].get<std::string>());
    if (j.contains("frame_index")) e.frame_index = j["frame_index"].get<std::uint64_t>();
    return e;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed manifest record: ") + e.what());
  }
}

inline void write_manifest(std::ostream& out, std::span<const ManifestEntry> entries) {
  for (const auto& e : entries) out << to_json(e).dump() << '\n';
}

inline std::vector<ManifestEntry> read_manifest(std::istream& in) {
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error("manifest line " + std::to_string(lineno) + ": invalid JSON");
    try {
      out.push_back(manifest_entry_from_json(j));
    } catch (const Error& e) {
      throw Error("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  return read_manifest(in);
}

}  // namespace dfr
