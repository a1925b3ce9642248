#pragma once

// Test-only helpers: random inputs, brute-force metric oracles, and a scripted
// chat endpoint. Nothing here calls into the code paths it is used to check.

#include <httplib.h>
#include <json.hpp>

#include <cstdint>
#include <deque>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dfr/core.hpp"
#include "dfr/metrics.hpp"
#include "dfr/random.hpp"

namespace dfr::test {

inline Image random_image(Shape shape, Rng& rng, int lo = 0, int hi = 255) {
  std::uniform_int_distribution<int> d(lo, hi);
  std::vector<std::uint8_t> px(shape.size());
  for (auto& v : px) v = static_cast<std::uint8_t>(d(rng));
  return Image(shape, std::move(px));
}

/// Random normalized image whose values stay at least `margin` inside [0, 1].
inline NormImage random_norm_image(Shape shape, Rng& rng, double margin = 0.0) {
  std::uniform_real_distribution<double> d(margin, 1.0 - margin);
  std::vector<double> v(shape.size());
  for (auto& x : v) x = d(rng);
  return NormImage(shape, std::move(v));
}

/// All-pairs count: (#{pos > neg} + 0.5 #{ties}) / (P N).
inline double brute_force_auc(const std::vector<ScoredSample>& s) {
  double wins = 0.0;
  std::uint64_t p = 0, n = 0;
  for (const auto& a : s) (a.label == Label::fake ? p : n)++;
  for (const auto& a : s)
    for (const auto& b : s) {
      if (a.label != Label::fake || b.label != Label::real) continue;
      if (a.score.p_fake() > b.score.p_fake()) wins += 1.0;
      else if (a.score.p_fake() == b.score.p_fake()) wins += 0.5;
    }
  return wins / (static_cast<double>(p) * static_cast<double>(n));
}

/// Full rank scan: for every cutoff rank r holding a positive, count positives
/// among ranks 1..r from scratch. Order: score descending, then id ascending
/// (selection sort, independent of std::sort).
inline double brute_force_ap(std::vector<ScoredSample> s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::size_t best = i;
    for (std::size_t j = i + 1; j < s.size(); ++j) {
      const bool higher = s[j].score.p_fake() > s[best].score.p_fake() ||
                          (s[j].score.p_fake() == s[best].score.p_fake() && s[j].id < s[best].id);
      if (higher) best = j;
    }
    std::swap(s[i], s[best]);
  }
  double sum = 0.0;
  int positives = 0;
  for (std::size_t r = 0; r < s.size(); ++r) {
    if (s[r].label != Label::fake) continue;
    ++positives;
    int hits = 0;
    for (std::size_t q = 0; q <= r; ++q) hits += s[q].label == Label::fake;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return sum / positives;
}

/// Chat-completions reply whose message content is `content`.
inline std::string chat_reply(const std::string& content) {
  return nlohmann::json{{"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

inline std::string verdict_reply(const std::string& verdict, const std::string& reason = "looks consistent") {
  return chat_reply(nlohmann::json{{"verdict", verdict}, {"reason", reason}}.dump());
}

inline std::string refusal_reply(const std::string& why = "I can't help with identifying people.") {
  return nlohmann::json{{"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", nullptr}, {"refusal", why}}}}}}}.dump();
}

struct ScriptedReply {
  int status = 200;
  std::string body;
};

/// Serves /v1/chat/completions from a fixed script, one entry per request;
/// repeats the last entry once the script is exhausted.
class MockChatServer {
 public:
  explicit MockChatServer(std::vector<ScriptedReply> script) : script_(script.begin(), script.end()) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      bodies_.push_back(req.body);
      auth_.push_back(req.get_header_value("Authorization"));
      ScriptedReply r = script_.empty() ? last_ : script_.front();
      if (!script_.empty()) {
        last_ = script_.front();
        script_.pop_front();
      }
      res.status = r.status;
      res.set_content(r.body, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockChatServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  std::size_t requests() const {
    std::lock_guard lock(mu_);
    return bodies_.size();
  }
  std::vector<std::string> bodies() const {
    std::lock_guard lock(mu_);
    return bodies_;
  }
  std::vector<std::string> auth_headers() const {
    std::lock_guard lock(mu_);
    return auth_;
  }

 private:
  mutable std::mutex mu_;
  std::deque<ScriptedReply> script_;
  ScriptedReply last_{200, ""};
  std::vector<std::string> bodies_;
  std::vector<std::string> auth_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace dfr::test
