#include <gtest/gtest.h>

#include <sstream>

#include "dfr/split.hpp"
#include "support.hpp"

using namespace dfr;

namespace {

VideoRecord real_video(std::string id, std::string actor, std::uint64_t frames = 100) {
  return {std::move(id), VideoKind::real, {std::move(actor)}, frames, {}, {}};
}

VideoRecord fake_video(std::string id, std::string src, std::string dst, std::uint64_t frames = 100) {
  return {std::move(id), VideoKind::fake, {std::move(src), std::move(dst)}, frames, {}, {}};
}

std::vector<std::vector<std::string>> components_of(const std::vector<VideoRecord>& v) {
  return build_actor_components(v).components;
}

/// Random catalog: one real video per actor, random fake edges between actors.
std::vector<VideoRecord> random_graph(Rng& rng, int actors, int fakes) {
  std::vector<VideoRecord> out;
  std::uniform_int_distribution<int> pick(0, actors - 1);
  std::uniform_int_distribution<std::uint64_t> frames(20, 400);
  for (int a = 0; a < actors; ++a) out.push_back(real_video("r" + std::to_string(a), "a" + std::to_string(a), frames(rng)));
  for (int f = 0; f < fakes; ++f) {
    const int s = pick(rng);
    int t = pick(rng);
    if (t == s) t = (s + 1) % actors;
    out.push_back(fake_video("f" + std::to_string(f), "a" + std::to_string(s), "a" + std::to_string(t), frames(rng)));
  }
  return out;
}

}  // namespace

TEST(Components, DisjointEdgesStaySeparate) {
  const auto c = components_of({fake_video("f1", "A", "B"), fake_video("f2", "C", "D")});
  EXPECT_EQ(c, (std::vector<std::vector<std::string>>{{"A", "B"}, {"C", "D"}}));
}

TEST(Components, PathsAreTransitive) {
  const auto c = components_of({fake_video("f1", "A", "B"), fake_video("f2", "C", "B")});
  EXPECT_EQ(c, (std::vector<std::vector<std::string>>{{"A", "B", "C"}}));
}

TEST(Components, NoFakesMeansSingletons) {
  const auto c = components_of({real_video("r1", "X"), real_video("r2", "Y"), real_video("r3", "X")});
  EXPECT_EQ(c, (std::vector<std::vector<std::string>>{{"X"}, {"Y"}}));
}

TEST(Components, MalformedRecordsAreRejected) {
  std::vector<VideoRecord> v{{"f", VideoKind::fake, {"A"}, 10, {}, {}}};
  EXPECT_THROW(build_actor_components(v), Error);
  v = {{"r", VideoKind::real, {"A", "B"}, 10, {}, {}}};
  EXPECT_THROW(build_actor_components(v), Error);
  v = {{"", VideoKind::real, {"A"}, 10, {}, {}}};
  EXPECT_THROW(build_actor_components(v), Error);
}

TEST(Assign, SingleComponentLandsInOneSplitWithOverflow) {
  const std::vector<VideoRecord> v{fake_video("f1", "A", "B"), real_video("r1", "A"), real_video("r2", "B")};
  const auto p = build_actor_components(v);
  const auto a = assign_components(p, v, SplitRatios{}, 1);
  const Split s = a.of("f1");
  EXPECT_EQ(a.of("r1"), s);
  EXPECT_EQ(a.of("r2"), s);
  EXPECT_DOUBLE_EQ(a.achieved[idx(s)], 1.0);
  ASSERT_EQ(a.overflows.size(), 1u);
  EXPECT_EQ(a.overflows[0].weight, 300u);
  EXPECT_NEAR(a.overflows[0].capacity, 240.0, 1e-9);
  EXPECT_NEAR(a.deficits()[idx(Split::train)], s == Split::train ? -0.2 : 0.8, 1e-12);
}

TEST(Assign, TwoEqualComponentsSplitHalfAndHalf) {
  const std::vector<VideoRecord> v{real_video("r1", "A"), real_video("r2", "B")};
  const auto p = build_actor_components(v);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = assign_components(p, v, SplitRatios{{0.5, 0.5, 0.0}}, seed);
    EXPECT_NE(a.of("r1"), a.of("r2"));
    EXPECT_NE(a.of("r1"), Split::test);
    EXPECT_NE(a.of("r2"), Split::test);
    EXPECT_TRUE(a.overflows.empty());
  }
}

TEST(Assign, FiftyComponentsHitRatiosOverManySeeds) {
  Rng rng(7);
  std::vector<VideoRecord> v;
  std::uniform_int_distribution<std::uint64_t> frames(50, 150);
  for (int c = 0; c < 50; ++c) {
    const std::string a = "a" + std::to_string(c), b = "b" + std::to_string(c);
    v.push_back(real_video("r" + std::to_string(c), a, frames(rng)));
    v.push_back(fake_video("f" + std::to_string(c), a, b, frames(rng)));
  }
  const auto p = build_actor_components(v);
  ASSERT_EQ(p.components.size(), 50u);
  const SplitRatios ratios;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto a = assign_components(p, v, ratios, seed);
    for (std::size_t s = 0; s < 3; ++s) EXPECT_NEAR(a.achieved[s], ratios.values[s], 0.05) << "seed " << seed;
  }
}

TEST(Assign, DeterministicAndTotal) {
  Rng rng(8);
  const auto v = random_graph(rng, 60, 40);
  const auto p = build_actor_components(v);
  const auto a = assign_components(p, v, SplitRatios{}, 3);
  const auto b = assign_components(p, v, SplitRatios{}, 3);
  EXPECT_EQ(a.video_split, b.video_split);
  EXPECT_EQ(a.video_split.size(), v.size());
  std::uint64_t total = 0;
  for (auto f : a.frames) total += f;
  std::uint64_t expected = 0;
  for (const auto& r : v) expected += r.frame_count;
  EXPECT_EQ(total, expected);
}

TEST(Assign, RejectsBadRatios) {
  const std::vector<VideoRecord> v{real_video("r1", "A")};
  const auto p = build_actor_components(v);
  EXPECT_THROW(assign_components(p, v, SplitRatios{{0.5, 0.5, 0.5}}, 0), ConfigError);
  EXPECT_THROW(assign_components(p, v, SplitRatios{{1.2, -0.1, -0.1}}, 0), ConfigError);
  EXPECT_THROW(SplitRatios::parse("0.8,0.2"), ConfigError);
  EXPECT_EQ(SplitRatios::parse("0.8,0.1,0.1").values[0], 0.8);
}

TEST(Contamination, CleanAssignmentHasNoViolations) {
  const std::vector<VideoRecord> v{fake_video("f1", "A", "B"), real_video("r1", "A"), real_video("r2", "C")};
  const auto a = assign_components(build_actor_components(v), v, SplitRatios{}, 0);
  EXPECT_TRUE(verify_no_contamination(a, v).clean());
}

TEST(Contamination, HandBuiltViolationNamesTheActor) {
  const std::vector<VideoRecord> v{real_video("r1", "A"), fake_video("f1", "A", "B"), real_video("r2", "C")};
  SplitAssignment a;
  a.video_split = {{"r1", Split::train}, {"f1", Split::test}, {"r2", Split::test}};
  const auto report = verify_no_contamination(a, v);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_EQ(report.violations[0].actor, "A");
  EXPECT_EQ(report.violations[0].splits, (std::set<Split>{Split::train, Split::test}));
}

TEST(Contamination, AssignmentOutputAlwaysPasses) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int actors = std::uniform_int_distribution<int>(2, 120)(rng);
    const int fakes = std::uniform_int_distribution<int>(0, actors * 2)(rng);
    const auto v = random_graph(rng, actors, fakes);
    const auto a = assign_components(build_actor_components(v), v, SplitRatios{}, static_cast<std::uint64_t>(trial));
    EXPECT_TRUE(verify_no_contamination(a, v).clean()) << "trial " << trial;
  }
}

namespace {

struct SampledCatalog {
  std::vector<VideoRecord> videos;
  SplitAssignment assignment;
};

SampledCatalog sampling_fixture() {
  SampledCatalog c;
  for (int i = 0; i < 6; ++i) {
    const std::string a = "a" + std::to_string(i), b = "b" + std::to_string(i);
    c.videos.push_back(real_video("r" + std::to_string(i), a, 300));
    for (int k = 0; k < 3; ++k)
      c.videos.push_back(fake_video("f" + std::to_string(i) + "_" + std::to_string(k), a, b, 100 + 50 * k));
  }
  for (const auto& v : c.videos) {
    const int group = v.actors.front().back() - '0';
    c.assignment.video_split[v.id] = group < 4 ? Split::train : (group == 4 ? Split::validation : Split::test);
  }
  return c;
}

}  // namespace

TEST(Sampling, BalancedCountsPerSplit) {
  const auto c = sampling_fixture();
  const auto m = sample_frames_balanced(c.assignment, c.videos, {{100, 100, 100}, true, 5});
  ASSERT_EQ(m.size(), 300u);
  std::map<std::pair<Split, Label>, int> counts;
  std::set<std::string> unique;
  for (const auto& e : m) {
    counts[{*e.split, e.label}]++;
    EXPECT_EQ(c.assignment.of(e.video_id), *e.split);
    unique.insert(e.frame_path);
  }
  EXPECT_EQ(unique.size(), m.size());
  for (Split s : kSplits) {
    EXPECT_EQ((counts[{s, Label::real}]), 50);
    EXPECT_EQ((counts[{s, Label::fake}]), 50);
  }
}

TEST(Sampling, DeterministicForSeed) {
  const auto c = sampling_fixture();
  const FrameSampleSpec spec{{40, 20, 20}, true, 11};
  std::stringstream a, b;
  write_manifest(a, sample_frames_balanced(c.assignment, c.videos, spec));
  write_manifest(b, sample_frames_balanced(c.assignment, c.videos, spec));
  EXPECT_EQ(a.str(), b.str());
}

TEST(Sampling, InsufficientFramesNameSplitAndClass) {
  const auto c = sampling_fixture();
  try {
    sample_frames_balanced(c.assignment, c.videos, {{0, 1000, 0}, true, 1});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("validation"), std::string::npos) << msg;
    EXPECT_NE(msg.find("real"), std::string::npos) << msg;
  }
  EXPECT_THROW(sample_frames_balanced(c.assignment, c.videos, {{3, 0, 0}, true, 1}), ConfigError);
}

TEST(Sampling, SelectionIsProportionalToFrameCount) {
  // Pearson chi-square of per-video hit counts against frame_count-proportional
  // expectations; 5 fake videos in train -> 4 degrees of freedom.
  std::vector<VideoRecord> v;
  const std::vector<std::uint64_t> frames{50, 100, 200, 400, 800};
  for (std::size_t i = 0; i < frames.size(); ++i) v.push_back(fake_video("f" + std::to_string(i), "a", "b", frames[i]));
  v.push_back(real_video("r", "a", 5000));
  SplitAssignment a;
  for (const auto& r : v) a.video_split[r.id] = Split::train;
  std::map<std::string, double> hits;
  double drawn = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed)
    for (const auto& e : sample_frames_balanced(a, v, {{200, 0, 0}, true, seed}))
      if (e.label == Label::fake) {
        hits[e.video_id] += 1.0;
        drawn += 1.0;
      }
  double chi2 = 0.0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const double expected = drawn * static_cast<double>(frames[i]) / 1550.0;
    const double d = hits["f" + std::to_string(i)] - expected;
    chi2 += d * d / expected;
  }
  EXPECT_LT(chi2, 18.47);  // chi-square(4) upper 0.1% point
}

TEST(Catalog, ReadsCsvAndJsonLines) {
  std::istringstream csv(
      "id,kind,actors,frame_count,path\n"
      "v1,real,A,120,videos/v1\n"
      "v2,fake,A|B,80,videos/v2\n");
  const auto c = read_catalog(csv, true, ',');
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[1].actors, (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(c[1].frame_count, 80u);
  EXPECT_EQ(frame_path_for(c[0], 7), "videos/v1/frame_00007.png");

  std::istringstream jsonl(
      R"({"id": "v1", "kind": "real", "actors": ["A"], "frame_count": 3})"
      "\n\n"
      R"({"id": "v2", "kind": "fake", "actors": ["A", "B"], "frame_count": 4, "method": "FaceSwap"})"
      "\n");
  const auto j = read_catalog(jsonl, false);
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[1].method, "FaceSwap");
  EXPECT_EQ(frame_path_for(j[0], 2), "v1/frame_00002.png");
}

TEST(Catalog, RejectsBadInput) {
  std::istringstream dup(R"({"id": "v", "kind": "real", "actors": ["A"], "frame_count": 3})"
                         "\n"
                         R"({"id": "v", "kind": "real", "actors": ["B"], "frame_count": 3})");
  EXPECT_THROW(read_catalog(dup, false), Error);
  std::istringstream no_header("v1,real,A,120\n");
  EXPECT_THROW(read_catalog(no_header, true), Error);
  std::istringstream bad_kind("id,kind,actors,frame_count\nv1,morph,A,1\n");
  EXPECT_THROW(read_catalog(bad_kind, true), Error);
}

TEST(Manifest, RoundTrips) {
  const std::vector<ManifestEntry> m{{"x/frame_00001.png", Label::fake, "x", Split::test, 1},
                                     {"y/frame_00002.png", Label::real, "y", std::nullopt, 2}};
  std::stringstream ss;
  write_manifest(ss, m);
  const auto back = read_manifest(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].frame_path, m[0].frame_path);
  EXPECT_EQ(back[0].label, Label::fake);
  EXPECT_EQ(back[0].split, Split::test);
  EXPECT_FALSE(back[1].split.has_value());
  std::istringstream str_label(R"({"frame_path": "a.png", "label": "fake"})");
  EXPECT_EQ(read_manifest(str_label)[0].label, Label::fake);
}
