#pragma once

// Oracle wire protocol over HTTP:
//   POST /v1/score_batch  {"images": ["<base64 PNG>", ...]} -> {"scores": [p, ...]}
//   POST /v1/info         -> {"name": s, "input": {"width": n|null, "height": n|null, "channels": n}}
// Failures answer {"error": "<message>"} with a non-200 status.

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <memory>
#include <regex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dfr/base64.hpp"
#include "dfr/core.hpp"
#include "dfr/oracle.hpp"
#include "dfr/png.hpp"

namespace dfr {

namespace protocol {

inline constexpr const char* kScoreBatchPath = "/v1/score_batch";
inline constexpr const char* kInfoPath = "/v1/info";

inline nlohmann::json encode_request(std::span<const Image> images) {
  auto arr = nlohmann::json::array();
  for (const auto& img : images) arr.push_back(base64_encode(encode_png(img)));
  return {{"images", std::move(arr)}};
}

/// Throws ProtocolError on anything but a well-formed request.
inline std::vector<Image> decode_request(const std::string& body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw ProtocolError("request body is not valid JSON");
  if (!j.is_object() || !j.contains("images") || !j["images"].is_array())
    throw ProtocolError("request must be an object with an \"images\" array");
  std::vector<Image> images;
  images.reserve(j["images"].size());
  for (std::size_t i = 0; i < j["images"].size(); ++i) {
    const auto& item = j["images"][i];
    if (!item.is_string()) throw ProtocolError("images[" + std::to_string(i) + "] is not a string");
    try {
      images.push_back(decode_png(base64_decode(item.get<std::string>())));
    } catch (const Error& e) {
      throw ProtocolError("images[" + std::to_string(i) + "]: " + e.what());
    }
  }
  return images;
}

inline nlohmann::json encode_scores(std::span<const Score> scores) {
  auto arr = nlohmann::json::array();
  for (auto s : scores) arr.push_back(s.p_fake());
  return {{"scores", std::move(arr)}};
}

/// Strict: exactly `expected` finite numbers, each in [0, 1].
inline std::vector<Score> decode_scores(const std::string& body, std::size_t expected) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw ProtocolError("response body is not valid JSON");
  if (!j.is_object() || !j.contains("scores") || !j["scores"].is_array())
    throw ProtocolError("response must be an object with a \"scores\" array");
  const auto& arr = j["scores"];
  if (arr.size() != expected)
    throw ProtocolError("expected " + std::to_string(expected) + " scores, got " + std::to_string(arr.size()));
  std::vector<Score> out;
  out.reserve(expected);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw ProtocolError("scores[" + std::to_string(i) + "] is not a number");
    const double v = arr[i].get<double>();
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw ProtocolError("scores[" + std::to_string(i) + "] = " + std::to_string(v) + " is not a probability");
    out.emplace_back(v);
  }
  return out;
}

inline nlohmann::json encode_info(const OracleInfo& info) {
  nlohmann::json input = {{"width", nullptr}, {"height", nullptr}, {"channels", info.channels}};
  if (info.width) input["width"] = *info.width;
  if (info.height) input["height"] = *info.height;
  return {{"name", info.name}, {"input", input}};
}

inline OracleInfo decode_info(const std::string& body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ProtocolError("info body is not a JSON object");
  try {
    OracleInfo info;
    info.name = j.at("name").get<std::string>();
    const auto& in = j.at("input");
    if (!in.at("width").is_null()) info.width = in.at("width").get<int>();
    if (!in.at("height").is_null()) info.height = in.at("height").get<int>();
    info.channels = in.at("channels").get<int>();
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed info response: ") + e.what());
  }
}

inline std::string error_body(const std::string& message) { return nlohmann::json{{"error", message}}.dump(); }

}  // namespace protocol

/// "http://host:port/prefix" -> ("http://host:port", "/prefix")
struct Endpoint {
  std::string origin;
  std::string prefix;

  static Endpoint parse(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw ConfigError("not an http(s) URL: '" + url + "'");
    std::string prefix = m[2].matched ? m[2].str() : "";
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {m[1].str(), prefix};
  }
};

/// Client side of the oracle protocol. One HTTP request per batch; each call
/// opens its own connection so concurrent use is safe.
class RemoteOracle final : public ScoreOracle {
 public:
  explicit RemoteOracle(const std::string& url, std::chrono::seconds timeout = std::chrono::seconds(60))
      : endpoint_(Endpoint::parse(url)), timeout_(timeout) {}

  std::vector<Score> score_batch(std::span<const Image> images) override {
    if (images.empty()) return {};
    const auto res = post(protocol::kScoreBatchPath, protocol::encode_request(images).dump());
    return protocol::decode_scores(res, images.size());
  }

  OracleInfo info() const override { return protocol::decode_info(post(protocol::kInfoPath, "{}")); }

 private:
  std::string post(const std::string& path, const std::string& body) const {
    httplib::Client cli(endpoint_.origin);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    auto res = cli.Post(endpoint_.prefix + path, body, "application/json");
    if (!res) throw OracleError("request to " + endpoint_.origin + endpoint_.prefix + path + " failed: " +
                                httplib::to_string(res.error()));
    if (res->status != 200) {
      std::string msg = res->body;
      const auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (!j.is_discarded() && j.is_object() && j.contains("error") && j["error"].is_string())
        msg = j["error"].get<std::string>();
      throw OracleError("oracle server returned HTTP " + std::to_string(res->status) + ": " + msg);
    }
    return res->body;
  }

  Endpoint endpoint_;
  std::chrono::seconds timeout_;
};

/// Serves a ScoreOracle over the protocol on a background thread until
/// stop() or destruction.
class OracleServer {
 public:
  OracleServer(std::shared_ptr<ScoreOracle> oracle, std::string host = "127.0.0.1", int port = 0)
      : oracle_(std::move(oracle)), host_(std::move(host)) {
    if (!oracle_) throw ConfigError("server needs an oracle");
    server_.Post(protocol::kScoreBatchPath, [this](const httplib::Request& req, httplib::Response& res) {
      handle_score(req, res);
    });
    server_.Post(protocol::kInfoPath, [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(protocol::encode_info(oracle_->info()).dump(), "application/json");
    });
    port_ = port == 0 ? server_.bind_to_any_port(host_) : (server_.bind_to_port(host_, port) ? port : -1);
    if (port_ < 0) throw Error("cannot bind oracle server to " + host_ + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~OracleServer() { stop(); }
  OracleServer(const OracleServer&) = delete;
  OracleServer& operator=(const OracleServer&) = delete;

  int port() const { return port_; }
  std::string url() const { return "http://" + host_ + ":" + std::to_string(port_); }
  std::uint64_t images_scored() const { return scored_.load(); }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  /// Blocks the calling thread until the server stops.
  void wait() {
    if (thread_.joinable()) thread_.join();
  }

 private:
  void handle_score(const httplib::Request& req, httplib::Response& res) {
    std::vector<Image> images;
    try {
      images = protocol::decode_request(req.body);
    } catch (const Error& e) {
      res.status = 400;
      res.set_content(protocol::error_body(e.what()), "application/json");
      return;
    }
    try {
      const auto scores = oracle_->score_batch(images);
      scored_ += images.size();
      res.set_content(protocol::encode_scores(scores).dump(), "application/json");
    } catch (const ShapeError& e) {
      res.status = 400;
      res.set_content(protocol::error_body(e.what()), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(protocol::error_body(e.what()), "application/json");
    }
  }

  std::shared_ptr<ScoreOracle> oracle_;
  std::string host_;
  int port_ = -1;
  httplib::Server server_;
  std::thread thread_;
  std::atomic<std::uint64_t> scored_{0};
};

}  // namespace dfr
