// dfr: command-line front end for the robustness harness.
//
// Exit status: 0 ok, 1 other failure, 2 configuration/usage error,
// 3 oracle error, 4 partial failure (some items failed and were excluded).

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/opensslv.h>
#include <png.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dfr/dfr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dfr;

namespace {

constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kOracle = 3, kPartial = 4 };

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Config echo, versions and timings; written beside a command's outputs.
class RunManifest {
 public:
  RunManifest(std::string command, const std::vector<std::string>& argv)
      : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["argv"] = argv;
    doc_["started_at"] = utc_now();
    doc_["versions"] = {{"dfr", kVersion},
                        {"cli11", CLI11_VERSION},
                        {"httplib", CPPHTTPLIB_VERSION},
                        {"libpng", PNG_LIBPNG_VER_STRING},
                        {"openssl", OPENSSL_VERSION_TEXT},
                        {"compiler", __VERSION__}};
  }

  json& config() { return doc_["config"]; }
  json& results() { return doc_["results"]; }

  void write(const fs::path& path, int exit_code) {
    doc_["finished_at"] = utc_now();
    doc_["elapsed_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    doc_["exit_code"] = exit_code;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << doc_.dump(2) << '\n';
  }

 private:
  json doc_;
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Oracles

struct OracleOptions {
  std::string spec;
  std::uint64_t detector_seed = 1;
  int channels = 0;  // 0: from the input images, else 3
  std::string shape;
  double bias = 0.0;
  std::optional<double> weight_std;
  std::string weights_file;
  int blur = 9;
  int timeout = 60;
  std::string vlm_model;
  int vlm_samples = 5;
};

struct OracleHandle {
  std::shared_ptr<ScoreOracle> oracle;
  std::shared_ptr<ReferenceDetector> reference;  // set for builtin detectors
  json description;
};

Shape parse_shape(const std::string& text, int default_channels) {
  std::vector<int> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      std::size_t used = 0;
      dims.push_back(std::stoi(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("bad shape '" + text + "', expected WxH or WxHxC");
    }
  }
  if (dims.size() == 2) dims.push_back(default_channels);
  if (dims.size() != 3) throw ConfigError("bad shape '" + text + "', expected WxH or WxHxC");
  Shape s{dims[0], dims[1], dims[2]};
  validate_shape(s);
  return s;
}

struct WeightsFile {
  std::vector<double> weights;
  double bias = 0.0;
};

WeightsFile read_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open weights file " + path);
  const auto j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("weights") || !j["weights"].is_array())
    throw ConfigError("weights file must hold {\"weights\": [...], \"bias\": number}");
  WeightsFile w;
  w.weights = j["weights"].get<std::vector<double>>();
  if (j.contains("bias")) w.bias = j["bias"].get<double>();
  return w;
}

bool is_url(const std::string& s) { return s.starts_with("http://") || s.starts_with("https://"); }

OracleHandle make_oracle(const OracleOptions& o, std::optional<Shape> input_shape) {
  OracleHandle h;
  h.description = {{"spec", o.spec}};
  const int channels = o.channels > 0 ? o.channels : (input_shape ? input_shape->channels : 3);
  auto patch = [&]() -> std::shared_ptr<ReferenceDetector> {
    if (!o.weights_file.empty()) {
      auto w = read_weights(o.weights_file);
      h.description["weights_file"] = o.weights_file;
      return std::make_shared<PatchPoolDetector>(9, channels, std::move(w.weights), w.bias);
    }
    h.description["detector_seed"] = o.detector_seed;
    h.description["weight_std"] = o.weight_std.value_or(1.0);
    h.description["bias"] = o.bias;
    return std::make_shared<PatchPoolDetector>(
        make_patch_detector(o.detector_seed, channels, 9, o.weight_std.value_or(1.0), o.bias));
  };

  if (o.spec == "builtin:patch") {
    h.reference = patch();
    h.description["channels"] = channels;
  } else if (o.spec == "builtin:blur") {
    h.reference = std::make_shared<BlurredInputDetector>(patch(), o.blur);
    h.description["channels"] = channels;
    h.description["blur"] = o.blur;
  } else if (o.spec == "builtin:linear") {
    std::optional<Shape> shape = input_shape;
    if (!o.shape.empty()) shape = parse_shape(o.shape, channels);
    if (!shape) throw ConfigError("builtin:linear needs --shape or an input image");
    h.description["shape"] = to_string(*shape);
    if (!o.weights_file.empty()) {
      auto w = read_weights(o.weights_file);
      h.description["weights_file"] = o.weights_file;
      h.reference = std::make_shared<GlobalLinearDetector>(*shape, std::move(w.weights), w.bias);
    } else {
      h.description["detector_seed"] = o.detector_seed;
      h.description["weight_std"] = o.weight_std.value_or(0.05);
      h.description["bias"] = o.bias;
      h.reference = std::make_shared<GlobalLinearDetector>(
          make_linear_detector(o.detector_seed, *shape, o.weight_std.value_or(0.05), o.bias));
    }
  } else if (is_url(o.spec)) {
    auto remote = std::make_shared<RemoteOracle>(o.spec, std::chrono::seconds(o.timeout));
    h.description["remote"] = protocol::encode_info(remote->info());
    h.oracle = remote;
    return h;
  } else if (o.spec == "vlm" || o.spec.starts_with("vlm:")) {
    VlmConfig cfg;
    cfg.fill_from_environment();
    if (o.spec.size() > 4) cfg.model = o.spec.substr(4);
    if (!o.vlm_model.empty()) cfg.model = o.vlm_model;
    cfg.samples = o.vlm_samples;
    cfg.timeout = std::chrono::seconds(o.timeout);
    if (cfg.endpoint.empty()) throw ConfigError("vlm oracle needs DFR_VLM_ENDPOINT");
    cfg.validate();
    h.description["model"] = cfg.model;
    h.description["samples"] = cfg.samples;
    h.oracle = std::make_shared<VlmOracle>(cfg);
    return h;
  } else {
    throw ConfigError("unknown oracle '" + o.spec + "' (builtin:patch, builtin:linear, builtin:blur, URL, vlm[:model])");
  }
  h.oracle = h.reference;
  return h;
}

void add_oracle_options(CLI::App* cmd, OracleOptions& o, bool required) {
  auto* opt = cmd->add_option("--oracle", o.spec, "builtin:patch | builtin:linear | builtin:blur | <url> | vlm[:model]");
  if (required) opt->required();
  cmd->add_option("--detector-seed", o.detector_seed, "seed for builtin detector weights")->capture_default_str();
  cmd->add_option("--channels", o.channels, "builtin detector channels (default: from input)");
  cmd->add_option("--shape", o.shape, "builtin:linear input shape WxH[xC]");
  cmd->add_option("--bias", o.bias, "builtin detector bias")->capture_default_str();
  cmd->add_option("--weight-std", o.weight_std, "builtin detector weight standard deviation");
  cmd->add_option("--weights", o.weights_file, "JSON file {weights:[...], bias} for builtin detectors");
  cmd->add_option("--blur", o.blur, "box blur side for builtin:blur")->capture_default_str();
  cmd->add_option("--timeout", o.timeout, "remote oracle timeout in seconds")->capture_default_str();
  cmd->add_option("--vlm-model", o.vlm_model, "model name for the vlm oracle");
  cmd->add_option("--vlm-samples", o.vlm_samples, "samples per image for the vlm oracle")->capture_default_str();
}

json oracle_options_json(const OracleOptions& o) {
  json j = {{"oracle", o.spec},     {"detector_seed", o.detector_seed}, {"channels", o.channels},
            {"shape", o.shape},     {"bias", o.bias},                   {"weights", o.weights_file},
            {"blur", o.blur},       {"timeout", o.timeout}};
  j["weight_std"] = o.weight_std ? json(*o.weight_std) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Inputs

struct Inputs {
  std::vector<PipelineItem> items;
  fs::path root;
};

Inputs load_inputs(const std::string& in, const std::string& root, const std::string& single_label) {
  Inputs out;
  const fs::path p(in);
  if (!fs::exists(p)) throw ConfigError("input not found: " + in);
  if (p.extension() == ".png") {
    out.items.push_back({p.string(), parse_label(single_label)});
    out.root = root;
    return out;
  }
  for (const auto& e : read_manifest(p)) out.items.push_back({e.frame_path, e.label});
  out.root = root.empty() ? p.parent_path() : fs::path(root);
  return out;
}

ImageLoader make_loader(const fs::path& root) {
  return [root](const PipelineItem& item) {
    const fs::path p(item.id);
    return read_png(p.is_absolute() || root.empty() ? p : root / p);
  };
}

std::string numbered(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu.png", index);
  return buf;
}

// ---------------------------------------------------------------------------
// Commands

struct CommonAttack {
  std::string in;
  std::string root;
  std::string label = "fake";
  std::string out;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  int workers = 1;
  int verbose = 0;
};

void add_common_attack(CLI::App* cmd, CommonAttack& c) {
  cmd->add_option("--in", c.in, "input PNG or manifest (.jsonl)")->required();
  cmd->add_option("--root", c.root, "directory manifest frame paths are relative to (default: manifest dir)");
  cmd->add_option("--label", c.label, "label for a single PNG input")->capture_default_str();
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_option("--seed", c.seed, "global seed")->capture_default_str();
  cmd->add_option("--threshold", c.threshold, "fake/real decision threshold")->capture_default_str();
  cmd->add_option("--workers", c.workers, "items processed concurrently")->capture_default_str();
  cmd->add_flag("-v,--verbose", c.verbose, "per-item progress on stderr");
}

json common_attack_json(const CommonAttack& c) {
  return {{"in", c.in},     {"root", c.root},           {"label", c.label},   {"out", c.out},
          {"seed", c.seed}, {"threshold", c.threshold}, {"workers", c.workers}};
}

struct GeneticArgs {
  std::string eps = "10/255";
  int pop = 10;
  int gens = 100;
  int elites = 5;
  double pmut = 0.05;
  std::string wmut = "0.5eps";
};

struct PgdArgs {
  std::string eps = "10/255";
  std::string step;  // default eps/4
  int iters = 40;
  bool random_start = false;
};

struct TypoArgs {
  double opacity = 0.07;
  double size = 29.0;
  double dpi = 72.0;
  int margin = 8;
  std::string corner = "bottom-right";
  std::string color = "255,255,255";
  std::string templ{DecoyPathTemplate::kDefault};
  std::string text;
};

Corner parse_corner(const std::string& s) {
  if (s == "bottom-right") return Corner::bottom_right;
  if (s == "bottom-left") return Corner::bottom_left;
  if (s == "top-right") return Corner::top_right;
  if (s == "top-left") return Corner::top_left;
  throw ConfigError("unknown corner '" + s + "'");
}

std::array<std::uint8_t, 3> parse_color(const std::string& s) {
  std::array<std::uint8_t, 3> c{};
  std::stringstream ss(s);
  std::string part;
  std::size_t n = 0;
  while (std::getline(ss, part, ',')) {
    int v = -1;
    try {
      v = std::stoi(part);
    } catch (const std::exception&) {
    }
    if (n == 3 || v < 0 || v > 255) throw ConfigError("bad color '" + s + "', expected R,G,B");
    c[n++] = static_cast<std::uint8_t>(v);
  }
  if (n != 3) throw ConfigError("bad color '" + s + "', expected R,G,B");
  return c;
}

OverlaySpec overlay_from(const TypoArgs& t) {
  OverlaySpec spec;
  spec.text = t.text;
  spec.opacity = t.opacity;
  spec.point_size = t.size;
  spec.dpi = t.dpi;
  spec.margin = t.margin;
  spec.anchor = parse_corner(t.corner);
  spec.color = parse_color(t.color);
  return spec;
}

int finish_items(std::size_t failures, std::size_t total) {
  if (failures == 0) return kOk;
  std::cerr << failures << " of " << total << " items failed and were excluded (see log.jsonl)\n";
  return kPartial;
}

void write_log(const fs::path& path, const std::vector<ItemRecord>& records) {
  std::ofstream log(path);
  for (const auto& r : records) log << to_json(r).dump() << '\n';
}

int run_attack_command(AttackKind kind, const CommonAttack& c, const OracleOptions& oo, const GeneticArgs& ga,
                       const PgdArgs& pa, const TypoArgs& ta, RunManifest& manifest) {
  const fs::path out(c.out);
  fs::create_directories(out / "adversarial");
  auto& cfgj = manifest.config();
  cfgj = common_attack_json(c);
  cfgj["attack"] = to_string(kind);

  PipelineConfig cfg;
  cfg.kind = kind;
  cfg.seed = c.seed;
  cfg.threshold = c.threshold;
  cfg.workers = c.workers;
  if (kind == AttackKind::genetic) {
    cfg.ga.epsilon = parse_fraction(ga.eps);
    cfg.ga.population = ga.pop;
    cfg.ga.generations = ga.gens;
    cfg.ga.elites = ga.elites;
    cfg.ga.p_mut = ga.pmut;
    cfg.ga.w_mut = parse_fraction(ga.wmut, cfg.ga.epsilon);
    cfg.ga.validate();
    cfgj.update({{"pop", ga.pop}, {"gens", ga.gens}, {"elites", ga.elites}, {"eps", ga.eps},
                 {"eps_value", cfg.ga.epsilon}, {"pmut", ga.pmut}, {"wmut", ga.wmut}, {"wmut_value", cfg.ga.w_mut},
                 {"max_queries_per_item", cfg.ga.max_queries()}});
  } else if (kind == AttackKind::pgd) {
    cfg.pgd.epsilon = parse_fraction(pa.eps);
    cfg.pgd.step = pa.step.empty() ? cfg.pgd.epsilon / 4.0 : parse_fraction(pa.step, cfg.pgd.epsilon);
    cfg.pgd.iters = pa.iters;
    cfg.pgd.random_start = pa.random_start;
    cfgj.update({{"eps", pa.eps}, {"eps_value", cfg.pgd.epsilon}, {"step", pa.step.empty() ? "0.25eps" : pa.step},
                 {"step_value", cfg.pgd.step}, {"iters", pa.iters}, {"random_start", pa.random_start}});
  } else if (kind == AttackKind::typographic) {
    cfg.overlay = overlay_from(ta);
    cfg.decoy = DecoyPathTemplate::parse(ta.templ);
    cfgj.update({{"opacity", ta.opacity}, {"size", ta.size}, {"dpi", ta.dpi}, {"margin", ta.margin},
                 {"corner", ta.corner}, {"color", ta.color}, {"template", ta.templ}, {"text", ta.text}});
  }
  if (c.workers < 1) throw ConfigError("--workers must be >= 1");

  const Inputs inputs = load_inputs(c.in, c.root, c.label);
  const auto load = make_loader(inputs.root);
  cfgj["items"] = inputs.items.size();

  // Typographic runs need no oracle: composite and write only.
  if (kind == AttackKind::typographic && oo.spec.empty()) {
    std::vector<ItemRecord> records;
    std::size_t failures = 0;
    for (std::size_t i = 0; i < inputs.items.size(); ++i) {
      ItemRecord rec;
      rec.index = i;
      rec.id = inputs.items[i].id;
      rec.label = inputs.items[i].label;
      try {
        const Image img = load(inputs.items[i]);
        OverlaySpec spec = cfg.overlay;
        if (spec.text.empty()) {
          Rng rng(derive_seed(c.seed, i));
          spec.text = generate_decoy_path(cfg.decoy, rng, TextFit{img.width(), spec.point_size, spec.dpi, spec.margin});
        }
        rec.overlay_text = spec.text;
        rec.attacked = true;
        write_png(out / "adversarial" / numbered(i), composite_overlay(img, spec));
      } catch (const std::exception& e) {
        rec.error = e.what();
        ++failures;
      }
      if (c.verbose) std::cerr << "[" << i << "] " << rec.id << (rec.error ? " error: " + *rec.error : "") << '\n';
      records.push_back(std::move(rec));
    }
    write_log(out / "log.jsonl", records);
    manifest.results() = {{"items", records.size()}, {"failures", failures}};
    return finish_items(failures, records.size());
  }

  std::optional<Shape> first_shape;
  if (!inputs.items.empty() && oo.spec.starts_with("builtin:")) first_shape = load(inputs.items.front()).shape();
  OracleHandle handle = make_oracle(oo, first_shape);
  cfgj["oracle"] = oracle_options_json(oo);
  cfgj["oracle_resolved"] = handle.description;
  if (kind == AttackKind::pgd && !handle.reference)
    throw ConfigError("pgd needs gradient access; use builtin:patch, builtin:linear or builtin:blur");

  QueryCounter counter(*handle.oracle);
  const bool heatmaps = kind == AttackKind::pgd;
  if (heatmaps) fs::create_directories(out / "heatmap");
  const AdversarialSink sink = [&](const ItemRecord& rec, const Image& adv) {
    write_png(out / "adversarial" / numbered(rec.index), adv);
    if (heatmaps) {
      const Image orig = load(inputs.items[rec.index]);
      write_png(out / "heatmap" / numbered(rec.index), perturbation_heatmap(difference(to_norm(adv), to_norm(orig))));
    }
    if (c.verbose)
      std::cerr << "[" << rec.index << "] " << rec.id << " success=" << rec.success << " queries=" << rec.queries
                << '\n';
  };
  const auto outcome = pipeline_attack_and_eval(inputs.items, counter, cfg, load, handle.reference.get(), sink);

  write_log(out / "log.jsonl", outcome.records);
  json report = {{"items", outcome.records.size()},
                 {"failures", outcome.failures},
                 {"oracle_queries", counter.total_queries()},
                 {"threshold", c.threshold}};
  report["benign"] = outcome.benign ? to_json(*outcome.benign) : json(nullptr);
  report["attacked"] = outcome.attacked ? to_json(*outcome.attacked) : json(nullptr);
  std::ofstream(out / "report.json") << report.dump(2) << '\n';
  manifest.results() = report;

  if (outcome.benign && outcome.attacked) print_table(std::cout, {{"benign", *outcome.benign}, {to_string(kind), *outcome.attacked}});
  return finish_items(outcome.failures, outcome.records.size());
}

// --- split -----------------------------------------------------------------

struct SplitArgs {
  std::string catalog;
  std::string ratios = "0.8,0.1,0.1";
  std::string frames = "0";
  std::uint64_t seed = 0;
  bool unbalanced = false;
  std::string out;
};

std::array<std::uint64_t, 3> parse_frames(const std::string& s) {
  std::vector<std::uint64_t> v;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stoull(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("bad --frames-per-split '" + s + "'");
    }
  }
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw ConfigError("--frames-per-split takes N or N,N,N");
}

int run_split(const SplitArgs& a, RunManifest& manifest) {
  manifest.config() = {{"catalog", a.catalog}, {"ratios", a.ratios}, {"frames_per_split", a.frames},
                       {"seed", a.seed},       {"class_balanced", !a.unbalanced}, {"out", a.out}};
  const auto ratios = SplitRatios::parse(a.ratios);
  const auto frames = parse_frames(a.frames);
  const auto videos = read_catalog(fs::path(a.catalog));
  const auto partition = build_actor_components(videos);
  const auto assignment = assign_components(partition, videos, ratios, a.seed);
  const auto contamination = verify_no_contamination(assignment, videos);

  std::vector<ManifestEntry> entries;
  if (frames[0] + frames[1] + frames[2] > 0) {
    entries = sample_frames_balanced(assignment, videos, {frames, !a.unbalanced, a.seed});
  } else {
    for (const auto& v : videos)
      entries.push_back({v.path.empty() ? v.id : v.path, v.kind == VideoKind::fake ? Label::fake : Label::real, v.id,
                         assignment.of(v.id), 0});
  }
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out);
  if (!f) throw Error("cannot write " + a.out);
  write_manifest(f, entries);

  json summary = {{"videos", videos.size()},
                  {"components", partition.components.size()},
                  {"target", assignment.target},
                  {"achieved", assignment.achieved},
                  {"frames", assignment.frames},
                  {"manifest_entries", entries.size()},
                  {"contamination_violations", contamination.violations.size()}};
  json overflow = json::array();
  for (const auto& o : assignment.overflows)
    overflow.push_back({{"component", o.component}, {"weight", o.weight}, {"capacity", o.capacity}, {"excess", o.excess}});
  summary["overflows"] = overflow;
  manifest.results() = summary;
  std::cerr << "components: " << partition.components.size() << "  achieved train/validation/test: "
            << assignment.achieved[0] << " / " << assignment.achieved[1] << " / " << assignment.achieved[2] << '\n';
  for (const auto& o : assignment.overflows)
    std::cerr << "warning: component " << o.component << " (" << o.weight << " frames) exceeds the largest split ("
              << o.capacity << ")\n";
  if (!contamination.clean()) {
    for (const auto& v : contamination.violations) std::cerr << "contamination: actor " << v.actor << '\n';
    return kFailure;
  }
  return kOk;
}

// --- serve -----------------------------------------------------------------

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  double max_seconds = 0.0;
};

int run_serve(const ServeArgs& a, const OracleOptions& oo, RunManifest& manifest) {
  OracleHandle h = make_oracle(oo, std::nullopt);
  manifest.config() = oracle_options_json(oo);
  manifest.config()["host"] = a.host;
  manifest.config()["port"] = a.port;
  OracleServer server(h.oracle, a.host, a.port);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on " << server.url() << std::endl;
  const auto start = std::chrono::steady_clock::now();
  while (!g_stop) {
    if (a.max_seconds > 0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >= a.max_seconds)
      break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server.stop();
  std::cerr << "scored " << server.images_scored() << " images\n";
  return kOk;
}

// --- vlm-classify ------------------------------------------------------------

struct VlmArgs {
  std::string in;
  std::string root;
  std::string label = "fake";
  std::string out;
  std::string endpoint;
  std::string model = "gpt-4o";
  std::string key_env = "DFR_VLM_API_KEY";
  int samples = 5;
  int max_retries = 3;
  int parallel = 1;
  int interval_ms = 0;
  int timeout = 60;
  std::optional<double> temperature;
  double threshold = 0.5;
};

int run_vlm(const VlmArgs& a, RunManifest& manifest) {
  VlmConfig cfg;
  cfg.endpoint = a.endpoint;
  cfg.model = a.model;
  cfg.samples = a.samples;
  cfg.max_retries = a.max_retries;
  cfg.parallel_samples = a.parallel;
  cfg.min_request_interval = std::chrono::milliseconds(a.interval_ms);
  cfg.timeout = std::chrono::seconds(a.timeout);
  cfg.temperature = a.temperature;
  cfg.fill_from_environment(a.key_env);
  if (cfg.endpoint.empty()) throw ConfigError("no endpoint: pass --endpoint or set DFR_VLM_ENDPOINT");
  cfg.validate();
  manifest.config() = {{"in", a.in},           {"root", a.root},     {"endpoint", cfg.endpoint},
                       {"model", cfg.model},   {"samples", cfg.samples}, {"max_retries", cfg.max_retries},
                       {"parallel", cfg.parallel_samples}, {"min_request_interval_ms", a.interval_ms},
                       {"prompt", std::string(kZeroShotPrompt)}, {"out", a.out}, {"threshold", a.threshold}};
  manifest.config()["temperature"] = cfg.temperature ? json(*cfg.temperature) : json("service default");

  const Inputs inputs = load_inputs(a.in, a.root, a.label);
  const auto load = make_loader(inputs.root);
  HttpChatTransport transport(cfg);
  RateLimiter limiter(cfg.min_request_interval);

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out);
  if (!f) throw Error("cannot write " + a.out);
  std::vector<ScoredSample> scored;
  std::size_t failures = 0;
  std::uint64_t retries = 0, requests = 0;
  for (std::size_t i = 0; i < inputs.items.size(); ++i) {
    const auto& item = inputs.items[i];
    json rec = {{"index", i}, {"path", item.id}, {"label", to_int(item.label)}};
    auto transcript_json = [](const std::vector<AttemptRecord>& t) {
      json arr = json::array();
      for (const auto& r : t)
        arr.push_back({{"sample", r.sample}, {"attempt", r.attempt}, {"accepted", r.accepted}, {"detail", r.detail}});
      return arr;
    };
    try {
      const auto r = classify_zero_shot(cfg, load(item), transport, &limiter);
      rec["score"] = r.score.p_fake();
      json verdicts = json::array();
      for (const auto& v : r.verdicts) verdicts.push_back({{"verdict", to_string(v.verdict)}, {"reason", v.reason}});
      rec["verdicts"] = verdicts;
      rec["retries"] = r.retries;
      rec["requests"] = r.requests;
      retries += r.retries;
      requests += r.requests;
      scored.push_back({r.score, item.label, item.id});
    } catch (const VlmClassificationError& e) {
      rec["error"] = e.what();
      rec["transcript"] = transcript_json(e.transcript());
      requests += e.transcript().size();
      ++failures;
    } catch (const std::exception& e) {
      rec["error"] = e.what();
      ++failures;
    }
    f << rec.dump() << '\n';
  }
  json results = {{"items", inputs.items.size()}, {"failures", failures}, {"requests", requests}, {"retries", retries}};
  if (!scored.empty()) {
    const auto report = evaluate(scored, a.threshold);
    results["report"] = to_json(report);
    print_table(std::cout, {{"zero-shot", report}});
  }
  manifest.results() = results;
  return finish_items(failures, inputs.items.size());
}

// --- evaluate ----------------------------------------------------------------

struct ScoredFile {
  std::vector<ScoredSample> samples;
  std::vector<std::uint64_t> queries;
  std::size_t skipped = 0;
};

ScoredFile read_scored(const std::string& path, const std::vector<const char*>& score_keys) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  ScoredFile out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(path + ":" + std::to_string(lineno) + ": invalid JSON record");
    if (j.contains("error") && !j["error"].is_null()) {
      ++out.skipped;
      continue;
    }
    std::string id = std::to_string(lineno);
    for (const char* k : {"id", "path", "frame_path"})
      if (j.contains(k) && j[k].is_string()) {
        id = j[k].get<std::string>();
        break;
      }
    const json* score = nullptr;
    for (const char* k : score_keys)
      if (j.contains(k) && j[k].is_number()) {
        score = &j[k];
        break;
      }
    if (!score || !j.contains("label"))
      throw Error(path + ":" + std::to_string(lineno) + ": record needs a label and a score");
    const auto& l = j["label"];
    const Label label = l.is_string() ? parse_label(l.get<std::string>()) : label_from_int(l.get<long>());
    out.samples.push_back({Score(score->get<double>()), label, id});
    const bool attacked = !j.contains("attacked") || (j["attacked"].is_boolean() && j["attacked"].get<bool>());
    if (attacked && j.contains("queries") && j["queries"].is_number_unsigned() && j["queries"].get<std::uint64_t>() > 0)
      out.queries.push_back(j["queries"].get<std::uint64_t>());
  }
  return out;
}

struct EvalArgs {
  std::string pred;
  std::string post;
  double threshold = 0.5;
  bool json_out = false;
  std::string out;
};

int run_evaluate(const EvalArgs& a, RunManifest& manifest) {
  manifest.config() = {{"pred", a.pred}, {"post_attack", a.post}, {"threshold", a.threshold}};
  const auto pre = read_scored(a.pred, {"score", "p_fake", "pre_score"});
  const auto benign = evaluate(pre.samples, a.threshold);
  json report = {{"benign", to_json(benign)}, {"skipped", pre.skipped}};
  std::vector<std::pair<std::string, EvaluationReport>> rows{{"benign", benign}};
  if (!a.post.empty()) {
    const auto post = read_scored(a.post, {"score", "p_fake", "final_score"});
    auto attacked = evaluate(post.samples, a.threshold);
    if (benign.counts.tp > 0) attacked.asr = attack_success_rate(pre.samples, post.samples, a.threshold);
    if (!post.queries.empty()) attacked.nq = mean_queries(post.queries);
    report["attacked"] = to_json(attacked);
    report["skipped"] = pre.skipped + post.skipped;
    rows.emplace_back("attacked", attacked);
  }
  if (a.json_out) std::cout << report.dump(2) << '\n';
  else print_table(std::cout, rows);
  manifest.results() = report;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::ofstream(fs::path(a.out) / "report.json") << report.dump(2) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial-robustness harness for real/fake image detectors"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // split
  SplitArgs split_args;
  auto* split = app.add_subcommand("split", "identity-safe train/validation/test split and frame manifest");
  split->add_option("--catalog", split_args.catalog, "video catalog (.csv, .tsv or JSON lines)")->required();
  split->add_option("--ratios", split_args.ratios, "train,validation,test ratios")->capture_default_str();
  split->add_option("--frames-per-split", split_args.frames, "frames sampled per split: N or N,N,N (0: one entry per video)")
      ->capture_default_str();
  split->add_option("--seed", split_args.seed, "seed")->capture_default_str();
  split->add_flag("--unbalanced", split_args.unbalanced, "sample frames without class balancing");
  split->add_option("--out", split_args.out, "output manifest (.jsonl)")->required();

  // serve
  ServeArgs serve_args;
  OracleOptions serve_oracle;
  auto* serve = app.add_subcommand("serve", "expose an oracle over the HTTP scoring protocol");
  add_oracle_options(serve, serve_oracle, true);
  serve->add_option("--host", serve_args.host, "bind address")->capture_default_str();
  serve->add_option("--port", serve_args.port, "port (0: any free port)")->capture_default_str();
  serve->add_option("--max-seconds", serve_args.max_seconds, "stop after this many seconds (0: until signalled)");

  // attack
  auto* attack = app.add_subcommand("attack", "run an attack over images and evaluate");
  attack->require_subcommand(1);
  CommonAttack ga_common, pgd_common, typo_common;
  OracleOptions ga_oracle, pgd_oracle, typo_oracle;
  GeneticArgs ga_args;
  PgdArgs pgd_args;
  TypoArgs typo_args;

  auto* genetic = attack->add_subcommand("genetic", "black-box genetic attack");
  add_common_attack(genetic, ga_common);
  add_oracle_options(genetic, ga_oracle, true);
  genetic->add_option("--eps", ga_args.eps, "L-infinity bound, e.g. 10/255")->capture_default_str();
  genetic->add_option("--pop", ga_args.pop, "population size")->capture_default_str();
  genetic->add_option("--gens", ga_args.gens, "maximum generations")->capture_default_str();
  genetic->add_option("--elites", ga_args.elites, "elites kept per generation")->capture_default_str();
  genetic->add_option("--pmut", ga_args.pmut, "per-element mutation probability")->capture_default_str();
  genetic->add_option("--wmut", ga_args.wmut, "mutation step bound, e.g. 0.5eps")->capture_default_str();

  auto* pgd = attack->add_subcommand("pgd", "white-box projected gradient descent (builtin detectors)");
  add_common_attack(pgd, pgd_common);
  add_oracle_options(pgd, pgd_oracle, true);
  pgd->add_option("--eps", pgd_args.eps, "L-infinity bound")->capture_default_str();
  pgd->add_option("--step", pgd_args.step, "step size (default 0.25eps)");
  pgd->add_option("--iters", pgd_args.iters, "iterations")->capture_default_str();
  pgd->add_flag("--random-start", pgd_args.random_start, "start from a uniform point in the ball");

  auto* typo = attack->add_subcommand("typographic", "overlay a decoy file path as faint text");
  add_common_attack(typo, typo_common);
  add_oracle_options(typo, typo_oracle, false);
  typo->add_option("--opacity", typo_args.opacity, "text opacity")->capture_default_str();
  typo->add_option("--size", typo_args.size, "point size")->capture_default_str();
  typo->add_option("--dpi", typo_args.dpi, "dots per inch")->capture_default_str();
  typo->add_option("--margin", typo_args.margin, "margin from the corner in pixels")->capture_default_str();
  typo->add_option("--corner", typo_args.corner, "bottom-right | bottom-left | top-right | top-left")
      ->capture_default_str();
  typo->add_option("--color", typo_args.color, "text color R,G,B")->capture_default_str();
  typo->add_option("--template", typo_args.templ, "decoy path template")->capture_default_str();
  typo->add_option("--text", typo_args.text, "fixed overlay text instead of a generated decoy path");

  // vlm-classify
  VlmArgs vlm_args;
  auto* vlm = app.add_subcommand("vlm-classify", "zero-shot scoring through a chat-completions endpoint");
  vlm->add_option("--manifest,--in", vlm_args.in, "manifest (.jsonl) or single PNG")->required();
  vlm->add_option("--root", vlm_args.root, "directory manifest frame paths are relative to");
  vlm->add_option("--label", vlm_args.label, "label for a single PNG input")->capture_default_str();
  vlm->add_option("--out", vlm_args.out, "per-image records (.jsonl)")->required();
  vlm->add_option("--endpoint", vlm_args.endpoint, "base URL (default: DFR_VLM_ENDPOINT)");
  vlm->add_option("--model", vlm_args.model, "model name")->capture_default_str();
  vlm->add_option("--api-key-env", vlm_args.key_env, "environment variable holding the API key")->capture_default_str();
  vlm->add_option("--samples", vlm_args.samples, "independent samples per image")->capture_default_str();
  vlm->add_option("--max-retries", vlm_args.max_retries, "retries per sample after a refusal")->capture_default_str();
  vlm->add_option("--parallel", vlm_args.parallel, "samples requested concurrently")->capture_default_str();
  vlm->add_option("--min-interval-ms", vlm_args.interval_ms, "minimum spacing between requests")->capture_default_str();
  vlm->add_option("--timeout", vlm_args.timeout, "request timeout in seconds")->capture_default_str();
  vlm->add_option("--temperature", vlm_args.temperature, "sampling temperature (default: service default)");
  vlm->add_option("--threshold", vlm_args.threshold, "decision threshold for the summary")->capture_default_str();

  // evaluate
  EvalArgs eval_args;
  auto* evalc = app.add_subcommand("evaluate", "metrics from scored records");
  evalc->add_option("--pred", eval_args.pred, "benign predictions (.jsonl with label and score)")->required();
  evalc->add_option("--post-attack", eval_args.post, "post-attack predictions (.jsonl)");
  evalc->add_option("--threshold", eval_args.threshold, "decision threshold")->capture_default_str();
  evalc->add_flag("--json", eval_args.json_out, "print the machine-readable report");
  evalc->add_option("--out", eval_args.out, "directory for report.json and run.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  std::vector<std::string> args(argv, argv + argc);
  std::string command;
  for (auto* sub : app.get_subcommands()) {
    command = sub->get_name();
    for (auto* s2 : sub->get_subcommands()) command += " " + s2->get_name();
  }
  RunManifest manifest(command, args);
  std::optional<fs::path> manifest_path;
  int code = kFailure;
  try {
    if (split->parsed()) {
      manifest_path = fs::path(split_args.out + ".run.json");
      code = run_split(split_args, manifest);
    } else if (serve->parsed()) {
      code = run_serve(serve_args, serve_oracle, manifest);
    } else if (genetic->parsed()) {
      manifest_path = fs::path(ga_common.out) / "run.json";
      code = run_attack_command(AttackKind::genetic, ga_common, ga_oracle, ga_args, pgd_args, typo_args, manifest);
    } else if (pgd->parsed()) {
      manifest_path = fs::path(pgd_common.out) / "run.json";
      code = run_attack_command(AttackKind::pgd, pgd_common, pgd_oracle, ga_args, pgd_args, typo_args, manifest);
    } else if (typo->parsed()) {
      manifest_path = fs::path(typo_common.out) / "run.json";
      code = run_attack_command(AttackKind::typographic, typo_common, typo_oracle, ga_args, pgd_args, typo_args,
                                manifest);
    } else if (vlm->parsed()) {
      manifest_path = fs::path(vlm_args.out + ".run.json");
      code = run_vlm(vlm_args, manifest);
    } else if (evalc->parsed()) {
      if (!eval_args.out.empty()) manifest_path = fs::path(eval_args.out) / "run.json";
      code = run_evaluate(eval_args, manifest);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    code = kConfig;
  } catch (const OracleError& e) {
    std::cerr << "oracle error: " << e.what() << '\n';
    code = kOracle;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = kFailure;
  }
  if (manifest_path) {
    try {
      manifest.write(*manifest_path, code);
    } catch (const std::exception& e) {
      std::cerr << "cannot write run manifest: " << e.what() << '\n';
    }
  }
  return code;
}
