#pragma once

// Benign scoring -> attack on pre-attack true positives -> re-scoring ->
// paired evaluation reports. Items are processed by a bounded worker pool but
// results are always ordered by manifest index.

#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dfr/core.hpp"
#include "dfr/genetic.hpp"
#include "dfr/metrics.hpp"
#include "dfr/oracle.hpp"
#include "dfr/pgd.hpp"
#include "dfr/random.hpp"
#include "dfr/typographic.hpp"

namespace dfr {

enum class AttackKind { none, genetic, pgd, typographic };

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::none: return "none";
    case AttackKind::genetic: return "genetic";
    case AttackKind::pgd: return "pgd";
    case AttackKind::typographic: return "typographic";
  }
  return "?";
}

struct PipelineConfig {
  AttackKind kind = AttackKind::none;
  GaConfig ga;
  PgdConfig pgd;
  OverlaySpec overlay;  // empty text: a decoy path is generated per item
  DecoyPathTemplate decoy = DecoyPathTemplate::default_template();
  std::uint64_t seed = 0;
  double threshold = 0.5;
  int workers = 1;
};

struct PipelineItem {
  std::string id;  // frame path as written in the manifest
  Label label = Label::real;
};

struct ItemRecord {
  std::size_t index = 0;
  std::string id;
  Label label = Label::real;
  std::optional<double> pre_score;
  bool attacked = false;
  bool success = false;
  std::uint64_t queries = 0;
  std::uint64_t generations = 0;
  std::optional<double> post_score;
  std::optional<std::string> overlay_text;
  std::optional<std::string> error;
};

inline nlohmann::json to_json(const ItemRecord& r) {
  auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"index", r.index},         {"path", r.id},           {"label", to_int(r.label)},
          {"pre_score", opt(r.pre_score)}, {"attacked", r.attacked}, {"success", r.success},
          {"queries", r.queries},     {"generations", r.generations}, {"final_score", opt(r.post_score)},
          {"overlay_text", opt(r.overlay_text)}, {"error", opt(r.error)}};
}

struct PipelineOutcome {
  std::vector<ItemRecord> records;  // manifest order
  std::optional<EvaluationReport> benign;
  std::optional<EvaluationReport> attacked;
  std::size_t failures = 0;
};

using ImageLoader = std::function<Image(const PipelineItem&)>;
/// Receives each attacked image; may be called concurrently from workers.
using AdversarialSink = std::function<void(const ItemRecord&, const Image&)>;

namespace detail {

inline ItemRecord process_item(std::size_t index, const PipelineItem& item, const PipelineConfig& cfg,
                               ScoreOracle& oracle, const GradientOracle* grad, const ImageLoader& load,
                               const AdversarialSink& sink) {
  ItemRecord rec;
  rec.index = index;
  rec.id = item.id;
  rec.label = item.label;
  try {
    const Image img = load(item);
    const Score pre = oracle.score(img);
    rec.pre_score = pre.p_fake();
    rec.post_score = pre.p_fake();
    const bool true_positive = item.label == Label::fake && predicted_fake(pre, cfg.threshold);
    if (cfg.kind == AttackKind::none || !true_positive) return rec;

    rec.attacked = true;
    const std::uint64_t seed = derive_seed(cfg.seed, index);
    Image adversarial;
    switch (cfg.kind) {
      case AttackKind::genetic: {
        GaConfig ga = cfg.ga;
        ga.seed = seed;
        ga.success_threshold = cfg.threshold;
        const AttackResult r = run_attack(oracle, img, ga);
        rec.queries = r.queries_used;
        rec.generations = r.generations_run;
        if (r.error) throw OracleError(*r.error);
        adversarial = r.adversarial;
        rec.post_score = r.final_score.p_fake();
        break;
      }
      case AttackKind::pgd: {
        if (!grad) throw ConfigError("pgd needs an in-process gradient oracle");
        PgdConfig pgd = cfg.pgd;
        pgd.seed = seed;
        pgd.success_threshold = cfg.threshold;
        const AttackResult r = run_pgd(*grad, to_norm(img), pgd);
        rec.queries = r.queries_used;
        rec.generations = r.generations_run;
        adversarial = r.adversarial;
        rec.post_score = oracle.score(adversarial).p_fake();
        break;
      }
      case AttackKind::typographic: {
        OverlaySpec spec = cfg.overlay;
        if (spec.text.empty()) {
          Rng rng(seed);
          spec.text = generate_decoy_path(cfg.decoy, rng,
                                          TextFit{img.width(), spec.point_size, spec.dpi, spec.margin});
        }
        rec.overlay_text = spec.text;
        adversarial = composite_overlay(img, spec);
        rec.post_score = oracle.score(adversarial).p_fake();
        rec.queries = 1;
        break;
      }
      case AttackKind::none: break;
    }
    rec.success = *rec.post_score < cfg.threshold;
    if (sink) sink(rec, adversarial);
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
  return rec;
}

}  // namespace detail

inline PipelineOutcome pipeline_attack_and_eval(std::span<const PipelineItem> items, ScoreOracle& oracle,
                                                const PipelineConfig& cfg, const ImageLoader& load,
                                                const GradientOracle* grad = nullptr,
                                                const AdversarialSink& sink = {}) {
  if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
  PipelineOutcome out;
  out.records.resize(items.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++)
      out.records[i] = detail::process_item(i, items[i], cfg, oracle, grad, load, sink);
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), std::max<std::size_t>(items.size(), 1));
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  std::vector<ScoredSample> pre, post;
  std::vector<std::uint64_t> queries;
  for (const auto& r : out.records) {
    if (r.error) {
      ++out.failures;
      continue;
    }
    pre.push_back({Score(*r.pre_score), r.label, r.id});
    post.push_back({Score(*r.post_score), r.label, r.id});
    if (r.attacked) queries.push_back(r.queries);
  }
  if (pre.empty()) return out;
  out.benign = evaluate(pre, cfg.threshold);
  out.attacked = evaluate(post, cfg.threshold);
  if (out.benign->counts.tp > 0) out.attacked->asr = attack_success_rate(pre, post, cfg.threshold);
  if (!queries.empty()) out.attacked->nq = mean_queries(queries);
  return out;
}

}  // namespace dfr
