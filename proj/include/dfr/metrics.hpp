#pragma once

// Detection and attack metrics: thresholded confusion counts, average
// precision, ROC AUC (rank statistic, ties count one half), attack success
// rate over pre-attack true positives, and mean query count.

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dfr/core.hpp"

namespace dfr {

struct ScoredSample {
  Score score;
  Label label = Label::real;
  std::string id;
};

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const { return tp + fp + tn + fn; }
};

struct EvaluationReport {
  double acc = 0.0;
  std::optional<double> precision;  // absent when nothing is predicted fake
  std::optional<double> recall;     // absent without fake samples
  std::optional<double> map;        // absent without fake samples
  std::optional<double> roc_auc;    // absent unless both classes are present
  std::optional<double> asr;
  std::optional<double> nq;
  ConfusionCounts counts;
  double threshold = 0.5;
};

/// A sample is predicted fake when its score is >= threshold.
inline bool predicted_fake(Score s, double threshold) { return s.p_fake() >= threshold; }

/// Descending score; ties ordered by ascending id.
inline std::vector<std::size_t> ranking(std::span<const ScoredSample> samples) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (samples[a].score.p_fake() != samples[b].score.p_fake())
      return samples[a].score.p_fake() > samples[b].score.p_fake();
    return samples[a].id < samples[b].id;
  });
  return order;
}

/// Mean of precision@r over the ranks r of positive samples.
inline double average_precision(std::span<const ScoredSample> samples) {
  double sum = 0.0;
  std::uint64_t positives = 0;
  std::uint64_t seen = 0;
  for (auto i : ranking(samples)) {
    ++seen;
    if (samples[i].label == Label::fake) {
      ++positives;
      sum += static_cast<double>(positives) / static_cast<double>(seen);
    }
  }
  if (positives == 0) throw Error("average precision needs at least one fake sample");
  return sum / static_cast<double>(positives);
}

/// Mann-Whitney U / (P * N) with mid-ranks for tied scores.
inline double roc_auc(std::span<const ScoredSample> samples) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return samples[a].score.p_fake() < samples[b].score.p_fake(); });
  // Twice the rank sum keeps mid-ranks integral.
  std::uint64_t twice_rank_sum = 0;
  std::uint64_t pos = 0;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    while (end < order.size() && samples[order[end]].score.p_fake() == samples[order[start]].score.p_fake()) ++end;
    const std::uint64_t twice_mid_rank = static_cast<std::uint64_t>(start + 1 + end);  // (start+1) + end
    for (std::size_t k = start; k < end; ++k)
      if (samples[order[k]].label == Label::fake) {
        twice_rank_sum += twice_mid_rank;
        ++pos;
      }
    start = end;
  }
  const std::uint64_t neg = samples.size() - pos;
  if (pos == 0 || neg == 0) throw Error("ROC AUC needs both fake and real samples");
  const std::uint64_t twice_u = twice_rank_sum - pos * (pos + 1);
  return static_cast<double>(twice_u) / 2.0 / (static_cast<double>(pos) * static_cast<double>(neg));
}

inline EvaluationReport evaluate(std::span<const ScoredSample> samples, double threshold = 0.5) {
  if (samples.empty()) throw Error("cannot evaluate an empty sample set");
  EvaluationReport r;
  r.threshold = threshold;
  bool any_pos = false, any_neg = false;
  for (const auto& s : samples) {
    const bool fake = s.label == Label::fake;
    any_pos = any_pos || fake;
    any_neg = any_neg || !fake;
    const bool pred = predicted_fake(s.score, threshold);
    if (fake && pred) ++r.counts.tp;
    else if (fake) ++r.counts.fn;
    else if (pred) ++r.counts.fp;
    else ++r.counts.tn;
  }
  const auto& c = r.counts;
  r.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tp + c.fp > 0) r.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) r.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (any_pos) r.map = average_precision(samples);
  if (any_pos && any_neg) r.roc_auc = roc_auc(samples);
  return r;
}

/// Fraction of fake-labeled, pre-attack-positive samples whose post-attack
/// score falls below the threshold. Samples are matched by id.
inline double attack_success_rate(std::span<const ScoredSample> pre, std::span<const ScoredSample> post,
                                  double threshold = 0.5) {
  std::map<std::string, const ScoredSample*> after;
  for (const auto& s : post) after[s.id] = &s;
  std::uint64_t positives = 0, flipped = 0;
  for (const auto& s : pre) {
    if (s.label != Label::fake || !predicted_fake(s.score, threshold)) continue;
    auto it = after.find(s.id);
    if (it == after.end()) throw Error("post-attack results lack sample '" + s.id + "'");
    ++positives;
    if (!predicted_fake(it->second->score, threshold)) ++flipped;
  }
  if (positives == 0) throw Error("attack success rate needs at least one pre-attack true positive");
  return static_cast<double>(flipped) / static_cast<double>(positives);
}

inline double mean_queries(std::span<const std::uint64_t> queries) {
  if (queries.empty()) throw Error("mean query count of an empty set");
  long double sum = 0;
  for (auto q : queries) sum += q;
  return static_cast<double>(sum / queries.size());
}

inline nlohmann::json to_json(const EvaluationReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"acc", r.acc},
          {"precision", opt(r.precision)},
          {"recall", opt(r.recall)},
          {"map", opt(r.map)},
          {"roc_auc", opt(r.roc_auc)},
          {"asr", opt(r.asr)},
          {"nq", opt(r.nq)},
          {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}}},
          {"threshold", r.threshold}};
}

/// Human-readable rows in the column order ACC, Precision, Recall, mAP, ROC AUC, ASR, NQ.
inline void print_table(std::ostream& out, const std::vector<std::pair<std::string, EvaluationReport>>& rows) {
  auto cell = [](const std::optional<double>& v, bool integral = false) {
    if (!v) return std::string("-");
    std::ostringstream s;
    if (integral) s << std::fixed << std::setprecision(0) << *v;
    else s << std::fixed << std::setprecision(4) << *v;
    return s.str();
  };
  out << std::left << std::setw(14) << "" << std::right;
  for (const char* h : {"ACC", "Precision", "Recall", "mAP", "ROC AUC", "ASR", "NQ"}) out << std::setw(11) << h;
  out << '\n';
  for (const auto& [name, r] : rows) {
    out << std::left << std::setw(14) << name << std::right;
    for (const auto& v : {cell(r.acc), cell(r.precision), cell(r.recall), cell(r.map), cell(r.roc_auc), cell(r.asr),
                          cell(r.nq, true)})
      out << std::setw(11) << v;
    out << '\n';
  }
}

}  // namespace dfr
