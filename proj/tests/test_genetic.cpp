#include <gtest/gtest.h>

#include <set>

#include "dfr/detectors.hpp"
#include "dfr/genetic.hpp"
#include "support.hpp"

using namespace dfr;

namespace {

Candidate with_fitness(Field f, double fit) { return {std::move(f), fit}; }

/// Fails every batch after the first `ok_batches`.
class FlakyOracle final : public ScoreOracle {
 public:
  FlakyOracle(ScoreOracle& inner, int ok_batches) : inner_(inner), left_(ok_batches) {}
  std::vector<Score> score_batch(std::span<const Image> images) override {
    if (left_-- <= 0) throw OracleError("connection reset");
    return inner_.score_batch(images);
  }
  OracleInfo info() const override { return inner_.info(); }

 private:
  ScoreOracle& inner_;
  int left_;
};

struct LinearInstance {
  Image image;
  std::shared_ptr<GlobalLinearDetector> det;
};

/// 64x64 grayscale linear detector with eps*||w||_1 = 4 and the given logit margin.
LinearInstance linear_instance(std::uint64_t seed, double margin_fraction) {
  Rng rng(seed);
  const Shape s{64, 64, 1};
  Image img = test::random_image(s, rng, 10, 245);
  auto w = random_weights(s.size(), 1.0, rng);
  double l1 = 0.0;
  for (double v : w) l1 += std::abs(v);
  const double eps = 10.0 / 255.0;
  for (auto& v : w) v *= 4.0 / (eps * l1);
  const double z0 = GlobalLinearDetector(s, w, 0.0).logit(to_norm(img));
  return {img, std::make_shared<GlobalLinearDetector>(s, w, margin_fraction * 4.0 - z0)};
}

}  // namespace

TEST(Fitness, LogProbabilityOfRealWithFloor) {
  EXPECT_NEAR(fitness_from_score(Score(0.5)), -0.6931, 1e-4);
  EXPECT_NEAR(fitness_from_score(Score(0.0)), 0.0, 1e-11);
  EXPECT_NEAR(fitness_from_score(Score(1.0)), -27.631, 1e-3);
}

TEST(Fitness, ConsumesExactlyOneQuery) {
  auto det = make_patch_detector(1, 1);
  QueryCounter counter(det);
  Rng rng(1);
  const auto img = to_norm(test::random_image({18, 18, 1}, rng));
  GaConfig cfg;
  const auto pop = init_population(cfg, img.shape(), rng);
  const double f = fitness(counter, img, pop[0]);
  EXPECT_EQ(counter.total_queries(), 1u);
  EXPECT_DOUBLE_EQ(f, fitness_from_score(det.score(candidate_image(img, pop[0].perturbation))));
}

TEST(Population, SizeBoundsAndDeterminism) {
  GaConfig cfg;
  const Shape s{12, 10, 3};
  Rng a(42), b(42);
  const auto p1 = init_population(cfg, s, a);
  const auto p2 = init_population(cfg, s, b);
  ASSERT_EQ(p1.size(), 10u);
  for (std::size_t i = 0; i < p1.size(); ++i) {
    EXPECT_EQ(p1[i].perturbation, p2[i].perturbation);
    EXPECT_LE(p1[i].perturbation.linf_norm(), cfg.epsilon);
    EXPECT_FALSE(p1[i].fitness.has_value());
  }
}

TEST(Elites, TopKWithLowerIndexTieBreak) {
  const Field z(Shape{1, 1, 1});
  std::vector<Candidate> pop{with_fitness(z, -1), with_fitness(z, -3), with_fitness(z, -2)};
  auto idx = elite_indices(pop, 2);
  EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()), (std::set<std::size_t>{0, 2}));

  std::vector<Candidate> tied{with_fitness(z, -1), with_fitness(z, -1), with_fitness(z, -1)};
  idx = elite_indices(tied, 2);
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1}));

  EXPECT_EQ(select_elites(pop, 3).size(), 3u);
  EXPECT_THROW(select_elites(pop, 4), ConfigError);
  pop[1].fitness.reset();
  EXPECT_THROW(select_elites(pop, 1), Error);
}

TEST(Crossover, IdenticalParentsGiveTheParent) {
  Rng rng(2);
  GaConfig cfg;
  auto pop = init_population(cfg, {8, 8, 1}, rng);
  const Candidate a = with_fitness(pop[0].perturbation, -1.0);
  EXPECT_EQ(crossover(a, a, rng).perturbation, a.perturbation);
}

TEST(Crossover, EqualFitnessIsAFairCoin) {
  const Shape s{1000, 100, 1};
  Candidate a = with_fitness(Field(s, 1.0), -2.0);
  Candidate b = with_fitness(Field(s, -1.0), -2.0);
  Rng rng(3);
  const auto child = crossover(a, b, rng);
  std::size_t from_a = 0;
  for (double v : child.perturbation.data()) from_a += v > 0.0;
  EXPECT_NEAR(static_cast<double>(from_a) / 1e5, 0.5, 0.01);
}

TEST(Crossover, SaturatesTowardMuchFitterParent) {
  EXPECT_GT(inherit_probability(0.0, -20.0), 1.0 - 1e-8);
  const Shape s{1000, 100, 1};
  Candidate a = with_fitness(Field(s, 1.0), 0.0);
  Candidate b = with_fitness(Field(s, -1.0), -20.0);
  Rng rng(4);
  EXPECT_EQ(crossover(a, b, rng).perturbation, a.perturbation);
}

TEST(Mutate, ZeroProbabilityLeavesCandidateUnchanged) {
  Rng rng(5);
  GaConfig cfg;
  cfg.p_mut = 0.0;
  auto pop = init_population(cfg, {16, 16, 3}, rng);
  EXPECT_EQ(mutate(pop[0], cfg, rng).perturbation, pop[0].perturbation);
}

TEST(Mutate, ClippingKeepsEpsilonBall) {
  Rng rng(6);
  GaConfig cfg;
  cfg.p_mut = 1.0;
  cfg.w_mut = 2.0 * cfg.epsilon;
  auto pop = init_population(cfg, {32, 32, 3}, rng);
  for (int r = 0; r < 5; ++r) {
    auto m = mutate(pop[0], cfg, rng);
    EXPECT_LE(m.perturbation.linf_norm(), cfg.epsilon);
    pop[0] = m;
  }
}

TEST(Mutate, MutatedFractionMatchesProbability) {
  GaConfig cfg;
  cfg.p_mut = 0.3;
  cfg.w_mut = cfg.epsilon / 2.0;  // from zero, no step reaches the clip bound
  const Candidate zero{Field(Shape{1000, 100, 1}), std::nullopt};
  Rng rng(7);
  const auto m = mutate(zero, cfg, rng);
  std::size_t changed = 0;
  for (double v : m.perturbation.data()) changed += v != 0.0;
  EXPECT_NEAR(static_cast<double>(changed) / 1e5, 0.30, 0.01);
}

TEST(RunAttack, ExhaustionCostsExactlyPopulationTimesGenerationsPlusOne) {
  const Shape s{64, 64, 1};
  GlobalLinearDetector det(s, std::vector<double>(s.size(), 0.0), 30.0);  // never flips
  QueryCounter counter(det);
  Rng rng(8);
  const auto r = run_attack(counter, test::random_image(s, rng), GaConfig{});
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.queries_used, 1010u);
  EXPECT_EQ(counter.total_queries(), 1010u);
  EXPECT_EQ(r.generations_run, 100u);
  EXPECT_FALSE(r.error.has_value());
}

TEST(RunAttack, ZeroGenerationsReturnsBestOfInitialPopulation) {
  const Shape s{18, 18, 1};
  auto det = make_patch_detector(9, 1, 9, 1.0, 3.0);
  Rng rng(9);
  GaConfig cfg;
  cfg.generations = 0;
  cfg.seed = 77;
  const Image img = test::random_image(s, rng);
  std::vector<double> seen;
  const auto r = run_attack(det, img, cfg, [&](const GenerationTrace& t) {
    for (auto sc : t.scores) seen.push_back(sc.p_fake());
  });
  EXPECT_EQ(r.queries_used, 10u);
  EXPECT_EQ(r.generations_run, 0u);
  ASSERT_EQ(seen.size(), 10u);
  EXPECT_EQ(r.final_score.p_fake(), *std::min_element(seen.begin(), seen.end()));
  EXPECT_EQ(det.score(r.adversarial).p_fake(), r.final_score.p_fake());
}

TEST(RunAttack, InvariantsHoldEveryGeneration) {
  auto inst = linear_instance(10, 0.5);
  GaConfig cfg;
  cfg.seed = 3;
  double best_prev = -1e300;
  std::uint64_t generations_seen = 0;
  const auto r = run_attack(*inst.det, inst.image, cfg, [&](const GenerationTrace& t) {
    double best = -1e300;
    for (const auto& c : t.population) {
      EXPECT_LE(c.perturbation.linf_norm(), cfg.epsilon);
      best = std::max(best, *c.fitness);
    }
    EXPECT_GE(best, best_prev) << "generation " << t.generation;
    best_prev = best;
    EXPECT_EQ(t.queries_so_far, 10u * (t.generation + 1));
    ++generations_seen;
  });
  EXPECT_EQ(r.queries_used, 10u * (r.generations_run + 1));
  EXPECT_EQ(generations_seen, r.generations_run + 1);
  EXPECT_LE(linf_distance(to_norm(r.adversarial), to_norm(inst.image)), cfg.epsilon + 1.0 / 510.0);
}

TEST(RunAttack, DeterministicForSameSeed) {
  auto inst = linear_instance(11, 0.3);
  GaConfig cfg;
  cfg.seed = 99;
  cfg.generations = 20;
  const auto a = run_attack(*inst.det, inst.image, cfg);
  const auto b = run_attack(*inst.det, inst.image, cfg);
  EXPECT_EQ(a.adversarial, b.adversarial);
  EXPECT_EQ(a.perturbation, b.perturbation);
  EXPECT_EQ(a.queries_used, b.queries_used);
  EXPECT_EQ(a.final_score, b.final_score);
}

TEST(RunAttack, StopsOnFirstSuccessAndReportsQuantizedScore) {
  int flipped = 0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    auto inst = linear_instance(100 + t, 0.05);
    GaConfig cfg;
    cfg.seed = t;
    const auto r = run_attack(*inst.det, inst.image, cfg);
    if (!r.success) continue;
    ++flipped;
    EXPECT_LT(r.final_score.p_fake(), 0.5);
    EXPECT_EQ(inst.det->score(r.adversarial).p_fake(), r.final_score.p_fake());
    EXPECT_LT(r.generations_run, 100u);
    EXPECT_EQ(r.queries_used, 10u * (r.generations_run + 1));
  }
  EXPECT_EQ(flipped, 20);
}

TEST(RunAttack, OracleFailureYieldsPartialResult) {
  auto inst = linear_instance(12, 0.9);
  FlakyOracle flaky(*inst.det, 3);
  const auto r = run_attack(flaky, inst.image, GaConfig{});
  ASSERT_TRUE(r.error.has_value());
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.queries_used, 30u);
  EXPECT_EQ(r.generations_run, 2u);
}

TEST(RunAttack, RejectsInvalidConfig) {
  auto det = make_patch_detector(13, 1);
  const Image img(Shape{9, 9, 1});
  GaConfig cfg;
  cfg.elites = 11;
  EXPECT_THROW(run_attack(det, img, cfg), ConfigError);
  cfg = GaConfig{};
  cfg.epsilon = 0.0;
  EXPECT_THROW(run_attack(det, img, cfg), ConfigError);
  cfg = GaConfig{};
  cfg.w_mut = 0.0;
  EXPECT_THROW(run_attack(det, img, cfg), ConfigError);
}
