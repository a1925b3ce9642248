#pragma once

// Gradient-free evasion attack: evolves a population of L-inf bounded
// perturbations against a score oracle until the quantized adversarial image
// is scored below the "fake" threshold or the generation budget runs out.
//
// Per generation: score all n candidates (n queries, elites included), keep
// the k fittest unmodified, and refill the population with mutated children of
// elite pairs. A run to exhaustion therefore costs exactly n * (m + 1) queries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfr/attack.hpp"
#include "dfr/core.hpp"
#include "dfr/oracle.hpp"
#include "dfr/random.hpp"

namespace dfr {

struct GaConfig {
  int population = 10;                 // n
  int generations = 100;               // m
  int elites = 5;                      // k
  double epsilon = 10.0 / 255.0;
  double p_mut = 0.05;
  double w_mut = 5.0 / 255.0;          // epsilon / 2 at the default epsilon
  double success_threshold = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (population < 1) throw ConfigError("population must be >= 1");
    if (elites < 1 || elites > population) throw ConfigError("elites must satisfy 1 <= k <= population");
    if (generations < 0) throw ConfigError("generations must be >= 0");
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must be in (0, 1]");
    if (!(p_mut >= 0.0 && p_mut <= 1.0)) throw ConfigError("p_mut must be in [0, 1]");
    if (!(w_mut > 0.0)) throw ConfigError("w_mut must be > 0");
    if (!(success_threshold > 0.0 && success_threshold <= 1.0))
      throw ConfigError("success_threshold must be in (0, 1]");
  }

  std::uint64_t max_queries() const {
    return static_cast<std::uint64_t>(population) * (static_cast<std::uint64_t>(generations) + 1);
  }
};

struct Candidate {
  Field perturbation;
  std::optional<double> fitness;
};

inline constexpr double kFitnessFloor = 1e-12;

/// log P(real) with a floor; higher is better for the evasion target.
inline double fitness_from_score(Score s) { return std::log(1.0 - s.p_fake() + kFitnessFloor); }

/// The 8-bit image an attacker would actually deliver for this perturbation.
inline Image candidate_image(const NormImage& input, const Field& perturbation) {
  return from_norm(apply_perturbation(input, perturbation));
}

/// One oracle query.
inline double fitness(ScoreOracle& oracle, const NormImage& input, const Candidate& cand) {
  return fitness_from_score(oracle.score(candidate_image(input, cand.perturbation)));
}

inline std::vector<Candidate> init_population(const GaConfig& cfg, const Shape& shape, Rng& rng) {
  std::vector<Candidate> pop;
  pop.reserve(static_cast<std::size_t>(cfg.population));
  for (int i = 0; i < cfg.population; ++i) {
    Field delta(shape);
    for (auto& v : delta.data()) v = uniform(rng, -cfg.epsilon, cfg.epsilon);
    pop.push_back({std::move(delta), std::nullopt});
  }
  return pop;
}

/// Indices of the k fittest candidates, best first; ties go to the lower index.
inline std::vector<std::size_t> elite_indices(std::span<const Candidate> pop, int k) {
  if (k < 0 || static_cast<std::size_t>(k) > pop.size())
    throw ConfigError("cannot select " + std::to_string(k) + " elites from " + std::to_string(pop.size()));
  for (const auto& c : pop)
    if (!c.fitness) throw Error("select_elites: unevaluated candidate");
  std::vector<std::size_t> idx(pop.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return *pop[a].fitness > *pop[b].fitness; });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

inline std::vector<Candidate> select_elites(std::span<const Candidate> pop, int k) {
  std::vector<Candidate> out;
  for (auto i : elite_indices(pop, k)) out.push_back(pop[i]);
  return out;
}

/// Probability of inheriting an element from parent a: softmax over the two fitnesses.
inline double inherit_probability(double fitness_a, double fitness_b) { return sigmoid(fitness_a - fitness_b); }

inline Candidate crossover(const Candidate& a, const Candidate& b, Rng& rng) {
  require_same_shape(a.perturbation.shape(), b.perturbation.shape());
  if (!a.fitness || !b.fitness) throw Error("crossover: parents must have evaluated fitness");
  const double p_a = inherit_probability(*a.fitness, *b.fitness);
  std::bernoulli_distribution from_a(p_a);
  Field child(a.perturbation.shape());
  for (std::size_t i = 0; i < child.size(); ++i) child[i] = from_a(rng) ? a.perturbation[i] : b.perturbation[i];
  return {std::move(child), std::nullopt};
}

inline Candidate mutate(Candidate cand, const GaConfig& cfg, Rng& rng) {
  std::bernoulli_distribution hit(cfg.p_mut);
  std::uniform_real_distribution<double> step(-cfg.w_mut, cfg.w_mut);
  for (auto& v : cand.perturbation.data())
    if (hit(rng)) v = std::clamp(v + step(rng), -cfg.epsilon, cfg.epsilon);
  cand.fitness.reset();
  return cand;
}

/// Snapshot handed to an observer after each population has been scored.
struct GenerationTrace {
  std::uint64_t generation = 0;
  std::span<const Candidate> population;
  std::span<const Score> scores;
  std::uint64_t queries_so_far = 0;
};

using GenerationObserver = std::function<void(const GenerationTrace&)>;

inline AttackResult run_attack(ScoreOracle& oracle, const Image& input, const GaConfig& cfg,
                               const GenerationObserver& observer = {}) {
  cfg.validate();
  const NormImage x = to_norm(input);
  Rng rng(cfg.seed);
  auto pop = init_population(cfg, x.shape(), rng);

  AttackResult result;
  result.adversarial = input;
  result.perturbation = Field(x.shape());

  std::vector<Image> batch(pop.size());
  std::uint64_t generation = 0;
  while (true) {
    for (std::size_t i = 0; i < pop.size(); ++i) batch[i] = candidate_image(x, pop[i].perturbation);
    std::vector<Score> scores;
    try {
      scores = oracle.score_batch(batch);
      if (scores.size() != batch.size()) throw ProtocolError("oracle returned wrong number of scores");
    } catch (const std::exception& e) {
      result.error = e.what();
      return result;
    }
    result.queries_used += batch.size();
    for (std::size_t i = 0; i < pop.size(); ++i) pop[i].fitness = fitness_from_score(scores[i]);

    if (observer) observer({generation, pop, scores, result.queries_used});

    const auto ranked = elite_indices(pop, cfg.elites);
    const std::size_t best = ranked.front();
    result.adversarial = batch[best];
    result.perturbation = pop[best].perturbation;
    result.final_score = scores[best];
    result.generations_run = generation;
    result.success = scores[best].p_fake() < cfg.success_threshold;
    if (result.success || generation == static_cast<std::uint64_t>(cfg.generations)) return result;

    std::vector<Candidate> next;
    next.reserve(pop.size());
    for (auto i : ranked) next.push_back(pop[i]);
    const int k = cfg.elites;
    std::uniform_int_distribution<int> first(0, k - 1);
    std::uniform_int_distribution<int> second(0, std::max(0, k - 2));
    while (next.size() < pop.size()) {
      const int a = first(rng);
      int b = a;
      if (k > 1) {
        b = second(rng);
        if (b >= a) ++b;
      }
      next.push_back(mutate(crossover(next[static_cast<std::size_t>(a)], next[static_cast<std::size_t>(b)], rng), cfg, rng));
    }
    pop = std::move(next);
    ++generation;
  }
}

}  // namespace dfr
