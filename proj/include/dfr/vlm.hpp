#pragma once

// Zero-shot real/fake scoring through a chat-completions style vision-language
// endpoint. Each image is sent with one fixed question and a declared JSON
// response schema; the score is the fraction of "fake" verdicts over several
// independent samples. Refusals (transport errors, schema violations, explicit
// refusal fields) are retried up to a cap, after which classification fails.

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <future>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "dfr/base64.hpp"
#include "dfr/core.hpp"
#include "dfr/oracle.hpp"
#include "dfr/png.hpp"
#include "dfr/remote.hpp"

namespace dfr {

inline constexpr std::string_view kZeroShotPrompt = "Is this image real or fake?";

enum class Verdict { real, fake };

inline const char* to_string(Verdict v) { return v == Verdict::fake ? "fake" : "real"; }

struct VlmVerdict {
  Verdict verdict = Verdict::real;
  std::string reason;
};

struct VlmConfig {
  std::string endpoint;  // base URL, e.g. https://host/v1; requests go to <endpoint>/chat/completions
  std::string model = "gpt-4o";
  std::string api_key;
  int samples = 5;
  int max_retries = 3;
  std::chrono::seconds timeout{60};
  std::optional<double> temperature;  // unset: service default
  std::chrono::milliseconds min_request_interval{0};
  int parallel_samples = 1;

  void validate() const {
    if (samples < 1) throw ConfigError("samples must be >= 1");
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (parallel_samples < 1) throw ConfigError("parallel_samples must be >= 1");
  }

  /// Endpoint and credential from DFR_VLM_ENDPOINT / DFR_VLM_API_KEY (or the
  /// variable named by key_env) when not already set.
  void fill_from_environment(const std::string& key_env = "DFR_VLM_API_KEY") {
    if (endpoint.empty())
      if (const char* e = std::getenv("DFR_VLM_ENDPOINT")) endpoint = e;
    if (api_key.empty())
      if (const char* k = std::getenv(key_env.c_str())) api_key = k;
  }
};

/// Outcome of interpreting one upstream reply.
struct StructuredParse {
  std::optional<VlmVerdict> verdict;
  std::string refusal;  // why the reply was treated as a refusal

  bool accepted() const { return verdict.has_value(); }
};

/// Strict parse of the {"verdict": "real"|"fake", "reason": string} object.
inline StructuredParse parse_structured_output(std::string_view content) {
  const auto j = nlohmann::json::parse(content, nullptr, false);
  if (j.is_discarded()) return {std::nullopt, "output is not valid JSON"};
  if (!j.is_object()) return {std::nullopt, "output is not a JSON object"};
  if (!j.contains("verdict") || !j["verdict"].is_string()) return {std::nullopt, "missing string field 'verdict'"};
  if (!j.contains("reason") || !j["reason"].is_string()) return {std::nullopt, "missing string field 'reason'"};
  if (j.size() != 2) return {std::nullopt, "unexpected extra fields"};
  const auto v = j["verdict"].get<std::string>();
  VlmVerdict out;
  if (v == "fake") out.verdict = Verdict::fake;
  else if (v == "real") out.verdict = Verdict::real;
  else return {std::nullopt, "verdict '" + v + "' is neither 'real' nor 'fake'"};
  out.reason = j["reason"].get<std::string>();
  return {out, {}};
}

/// Unwraps a chat-completions reply body and parses the message content.
inline StructuredParse interpret_chat_response(int status, std::string_view body) {
  if (status != 200) return {std::nullopt, "HTTP " + std::to_string(status)};
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return {std::nullopt, "reply is not a JSON object"};
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
    return {std::nullopt, "reply has no choices"};
  const auto& choice = j["choices"][0];
  if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object())
    return {std::nullopt, "reply has no message"};
  const auto& msg = choice["message"];
  if (msg.contains("refusal") && !msg["refusal"].is_null())
    return {std::nullopt, "refusal: " + (msg["refusal"].is_string() ? msg["refusal"].get<std::string>() : msg["refusal"].dump())};
  if (!msg.contains("content") || !msg["content"].is_string()) return {std::nullopt, "message has no text content"};
  return parse_structured_output(msg["content"].get<std::string>());
}

inline nlohmann::json verdict_schema() {
  return {{"type", "object"},
          {"properties", {{"verdict", {{"type", "string"}, {"enum", {"real", "fake"}}}}, {"reason", {{"type", "string"}}}}},
          {"required", {"verdict", "reason"}},
          {"additionalProperties", false}};
}

inline nlohmann::json build_chat_request(const VlmConfig& cfg, const Image& img) {
  const std::string data_url = "data:image/png;base64," + base64_encode(encode_png(img));
  nlohmann::json content = nlohmann::json::array(
      {{{"type", "text"}, {"text", std::string(kZeroShotPrompt)}},
       {{"type", "image_url"}, {"image_url", {{"url", data_url}}}}});
  nlohmann::json body = {
      {"model", cfg.model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})},
      {"response_format",
       {{"type", "json_schema"},
        {"json_schema", {{"name", "real_or_fake"}, {"strict", true}, {"schema", verdict_schema()}}}}}};
  if (cfg.temperature) body["temperature"] = *cfg.temperature;
  return body;
}

struct ChatReply {
  int status = 0;  // 0: transport failure
  std::string body;
};

/// Upstream transport; implementations must allow concurrent post() calls.
class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual ChatReply post(const std::string& body) = 0;
};

class HttpChatTransport final : public ChatTransport {
 public:
  explicit HttpChatTransport(const VlmConfig& cfg)
      : endpoint_(Endpoint::parse(cfg.endpoint)), api_key_(cfg.api_key), timeout_(cfg.timeout) {}

  ChatReply post(const std::string& body) override {
    httplib::Client cli(endpoint_.origin);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Post(endpoint_.prefix + "/chat/completions", headers, body, "application/json");
    if (!res) return {0, httplib::to_string(res.error())};
    return {res->status, res->body};
  }

 private:
  Endpoint endpoint_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

/// Enforces a minimum spacing between request starts across all users.
class RateLimiter {
 public:
  explicit RateLimiter(std::chrono::milliseconds interval) : interval_(interval) {}

  void acquire() {
    if (interval_.count() <= 0) return;
    std::unique_lock lock(mu_);
    const auto now = std::chrono::steady_clock::now();
    const auto slot = std::max(now, next_);
    next_ = slot + interval_;
    lock.unlock();
    std::this_thread::sleep_until(slot);
  }

 private:
  std::chrono::milliseconds interval_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_{};
};

struct AttemptRecord {
  int sample = 0;
  int attempt = 0;  // 0 = first try
  bool accepted = false;
  std::string detail;  // verdict on success, refusal reason otherwise
};

struct ZeroShotResult {
  Score score;
  std::vector<VlmVerdict> verdicts;   // one per sample, in sample order
  std::vector<AttemptRecord> transcript;
  std::uint64_t requests = 0;
  std::uint64_t retries = 0;
};

class VlmClassificationError : public OracleError {
 public:
  VlmClassificationError(const std::string& what, std::vector<AttemptRecord> transcript)
      : OracleError(what), transcript_(std::move(transcript)) {}
  const std::vector<AttemptRecord>& transcript() const { return transcript_; }

 private:
  std::vector<AttemptRecord> transcript_;
};

namespace detail {

struct SampleRun {
  std::optional<VlmVerdict> verdict;
  std::vector<AttemptRecord> attempts;
};

inline SampleRun run_sample(const VlmConfig& cfg, ChatTransport& transport, RateLimiter* limiter,
                            const std::string& body, int sample) {
  SampleRun run;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (limiter) limiter->acquire();
    const ChatReply reply = transport.post(body);
    StructuredParse parsed = reply.status == 0 ? StructuredParse{std::nullopt, "transport error: " + reply.body}
                                               : interpret_chat_response(reply.status, reply.body);
    if (parsed.accepted()) {
      run.attempts.push_back({sample, attempt, true, to_string(parsed.verdict->verdict)});
      run.verdict = std::move(parsed.verdict);
      return run;
    }
    run.attempts.push_back({sample, attempt, false, parsed.refusal});
  }
  return run;
}

}  // namespace detail

inline ZeroShotResult classify_zero_shot(const VlmConfig& cfg, const Image& img, ChatTransport& transport,
                                         RateLimiter* limiter = nullptr) {
  cfg.validate();
  const std::string body = build_chat_request(cfg, img).dump();
  std::vector<detail::SampleRun> runs(static_cast<std::size_t>(cfg.samples));
  for (int start = 0; start < cfg.samples; start += cfg.parallel_samples) {
    const int end = std::min(cfg.samples, start + cfg.parallel_samples);
    if (end - start == 1) {
      runs[static_cast<std::size_t>(start)] = detail::run_sample(cfg, transport, limiter, body, start);
      continue;
    }
    std::vector<std::future<detail::SampleRun>> futures;
    for (int s = start; s < end; ++s)
      futures.push_back(std::async(std::launch::async, [&, s] { return detail::run_sample(cfg, transport, limiter, body, s); }));
    for (int s = start; s < end; ++s) runs[static_cast<std::size_t>(s)] = futures[static_cast<std::size_t>(s - start)].get();
  }

  ZeroShotResult result;
  int fakes = 0;
  std::optional<int> failed;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    result.requests += runs[s].attempts.size();
    result.retries += runs[s].attempts.size() - 1;
    result.transcript.insert(result.transcript.end(), runs[s].attempts.begin(), runs[s].attempts.end());
    if (!runs[s].verdict) {
      if (!failed) failed = static_cast<int>(s);
      continue;
    }
    fakes += runs[s].verdict->verdict == Verdict::fake ? 1 : 0;
    result.verdicts.push_back(*runs[s].verdict);
  }
  if (failed)
    throw VlmClassificationError("sample " + std::to_string(*failed) + " exhausted " + std::to_string(cfg.max_retries) +
                                     " retries",
                                 std::move(result.transcript));
  result.score = Score(static_cast<double>(fakes) / static_cast<double>(cfg.samples));
  return result;
}

inline ZeroShotResult classify_zero_shot(const VlmConfig& cfg, const Image& img) {
  HttpChatTransport transport(cfg);
  RateLimiter limiter(cfg.min_request_interval);
  return classify_zero_shot(cfg, img, transport, &limiter);
}

/// Exposes zero-shot classification through the ScoreOracle contract.
class VlmOracle final : public ScoreOracle {
 public:
  explicit VlmOracle(VlmConfig cfg)
      : cfg_(std::move(cfg)), transport_(cfg_), limiter_(cfg_.min_request_interval) {}

  std::vector<Score> score_batch(std::span<const Image> images) override {
    std::vector<Score> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(classify_zero_shot(cfg_, img, transport_, &limiter_).score);
    return out;
  }

  OracleInfo info() const override { return {"vlm:" + cfg_.model, std::nullopt, std::nullopt, 3}; }

 private:
  VlmConfig cfg_;
  HttpChatTransport transport_;
  RateLimiter limiter_;
};

}  // namespace dfr
