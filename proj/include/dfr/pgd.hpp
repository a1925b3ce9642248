#pragma once

// White-box L-inf PGD that descends p_fake, plus a central-difference
// gradient used to cross-check analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dfr/attack.hpp"
#include "dfr/core.hpp"
#include "dfr/oracle.hpp"
#include "dfr/random.hpp"

namespace dfr {

struct PgdConfig {
  double epsilon = 10.0 / 255.0;
  double step = 2.5 / 255.0;  // epsilon / 4 at the default epsilon
  int iters = 40;
  bool random_start = false;
  std::uint64_t seed = 0;
  double success_threshold = 0.5;

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (!(step > 0.0)) throw ConfigError("step must be > 0");
    if (iters < 0) throw ConfigError("iters must be >= 0");
  }
};

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Projects x onto the eps-ball around `center`, then onto [0, 1].
inline std::vector<double> project(std::vector<double> x, const NormImage& center, double eps) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(std::clamp(x[i], center[i] - eps, center[i] + eps), 0.0, 1.0);
  return x;
}

inline AttackResult run_pgd(const GradientOracle& oracle, const NormImage& input, const PgdConfig& cfg) {
  cfg.validate();
  std::vector<double> x(input.data().begin(), input.data().end());
  if (cfg.random_start) {
    Rng rng(cfg.seed);
    for (auto& v : x) v += uniform(rng, -cfg.epsilon, cfg.epsilon);
    x = project(std::move(x), input, cfg.epsilon);
  }
  AttackResult result;
  for (int it = 0; it < cfg.iters; ++it) {
    const Field g = oracle.gradient(NormImage(input.shape(), x));
    ++result.queries_used;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(g[i])) throw OracleError("non-finite gradient at element " + std::to_string(i));
      x[i] -= cfg.step * sign0(g[i]);
    }
    x = project(std::move(x), input, cfg.epsilon);
    result.generations_run = static_cast<std::uint64_t>(it + 1);
  }
  const NormImage final_image(input.shape(), std::move(x));
  result.perturbation = difference(final_image, input);
  result.adversarial = from_norm(final_image);
  result.final_score = oracle.score_norm(to_norm(result.adversarial));
  ++result.queries_used;
  result.success = result.final_score.p_fake() < cfg.success_threshold;
  return result;
}

/// Central differences (f(x + h e_j) - f(x - h e_j)) / 2h. Evaluation points
/// are not clipped, so `score` must accept values slightly outside [0, 1].
inline Field finite_diff_gradient(const std::function<double(std::span<const double>)>& score,
                                  const NormImage& input, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be > 0");
  std::vector<double> x(input.data().begin(), input.data().end());
  Field g(input.shape());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    x[j] = orig + h;
    const double up = score(x);
    x[j] = orig - h;
    const double down = score(x);
    x[j] = orig;
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Convenience overload for oracles scoring in-range images; input pixels are
/// kept at least h away from the box edges by the caller.
inline Field finite_diff_gradient(const GradientOracle& oracle, const NormImage& input, double h) {
  return finite_diff_gradient(
      [&](std::span<const double> x) {
        return oracle.score_norm(NormImage(input.shape(), std::vector<double>(x.begin(), x.end()))).p_fake();
      },
      input, h);
}

/// |delta| scaled so the largest magnitude maps to 255, single channel
/// (max over channels).
inline Image perturbation_heatmap(const Field& delta) {
  const Shape& s = delta.shape();
  const double peak = delta.linf_norm();
  Image out(Shape{s.width, s.height, 1});
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      double m = 0.0;
      for (int c = 0; c < s.channels; ++c) m = std::max(m, std::abs(delta[s.index(x, y, c)]));
      out.at(x, y) = peak > 0.0 ? quantize(m / peak) : 0;
    }
  return out;
}

}  // namespace dfr
