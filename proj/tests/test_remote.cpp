#include <gtest/gtest.h>

#include <thread>

#include "dfr/detectors.hpp"
#include "dfr/remote.hpp"
#include "support.hpp"

using namespace dfr;

namespace {

std::shared_ptr<PatchPoolDetector> patch_detector() {
  return std::make_shared<PatchPoolDetector>(make_patch_detector(21, 3, 9, 0.5, 0.1));
}

/// Answers every score_batch with a fixed body.
class RawServer {
 public:
  RawServer(int status, std::string body) {
    server_.Post("/v1/score_batch", [status, body](const httplib::Request&, httplib::Response& res) {
      res.status = status;
      res.set_content(body, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~RawServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST(Remote, EmptyBatchMakesNoRequest) {
  RemoteOracle remote("http://127.0.0.1:1");  // nothing listens here
  QueryCounter counter(remote);
  EXPECT_TRUE(counter.score_batch({}).empty());
  EXPECT_EQ(counter.total_queries(), 0u);
}

TEST(Remote, LoopbackMatchesInProcessScores) {
  auto det = patch_detector();
  OracleServer server(det);
  RemoteOracle remote(server.url());
  Rng rng(1);
  std::vector<Image> images;
  for (int i = 0; i < 3; ++i) images.push_back(test::random_image({20, 18, 3}, rng));
  const auto scores = remote.score_batch(images);
  ASSERT_EQ(scores.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(scores[i].p_fake(), det->score(images[i]).p_fake(), 1e-6);
  EXPECT_EQ(server.images_scored(), 3u);
}

TEST(Remote, InfoRoundTrips) {
  const Shape s{16, 12, 1};
  auto lin = std::make_shared<GlobalLinearDetector>(make_linear_detector(3, s));
  OracleServer server(lin);
  const auto info = RemoteOracle(server.url()).info();
  EXPECT_EQ(info.name, "builtin:linear");
  EXPECT_EQ(info.width, 16);
  EXPECT_EQ(info.height, 12);
  EXPECT_EQ(info.channels, 1);

  OracleServer patch_server(patch_detector());
  const auto pinfo = RemoteOracle(patch_server.url()).info();
  EXPECT_FALSE(pinfo.width.has_value());
  EXPECT_FALSE(pinfo.height.has_value());
  EXPECT_EQ(pinfo.channels, 3);
}

TEST(Remote, OutOfRangeScoreIsAProtocolError) {
  RawServer bad(200, R"({"scores": [0.2, 1.5]})");
  RemoteOracle remote(bad.url());
  QueryCounter counter(remote);
  Rng rng(2);
  std::vector<Image> images{test::random_image({9, 9, 1}, rng), test::random_image({9, 9, 1}, rng)};
  EXPECT_THROW(counter.score_batch(images), ProtocolError);
  EXPECT_EQ(counter.total_queries(), 0u);
}

TEST(Remote, MalformedResponsesAreRejected) {
  Rng rng(3);
  const std::vector<Image> one{test::random_image({9, 9, 1}, rng)};
  for (const char* body : {"not json", R"({"scores": [0.1, 0.2]})", R"({"scores": ["0.1"]})", R"({"score": [0.1]})",
                           R"({"scores": [-0.0001]})"}) {
    RawServer bad(200, body);
    EXPECT_THROW(RemoteOracle(bad.url()).score_batch(one), ProtocolError) << body;
  }
  RawServer err(503, R"({"error": "model unavailable"})");
  try {
    RemoteOracle(err.url()).score_batch(one);
    FAIL() << "expected OracleError";
  } catch (const OracleError& e) {
    EXPECT_NE(std::string(e.what()).find("model unavailable"), std::string::npos);
  }
}

TEST(Remote, NetworkFailureSurfaces) {
  RemoteOracle remote("http://127.0.0.1:1", std::chrono::seconds(2));
  Rng rng(4);
  EXPECT_THROW(remote.score(test::random_image({9, 9, 1}, rng)), OracleError);
}

TEST(Server, MalformedRequestGetsStructuredErrorAndIsNotCounted) {
  auto det = patch_detector();
  OracleServer server(det);
  httplib::Client cli(server.url());
  for (const char* body : {"{", R"({"imgs": []})", R"({"images": [3]})", R"({"images": ["!!!!"]})",
                           R"({"images": ["AAAA"]})"}) {
    auto res = cli.Post("/v1/score_batch", body, "application/json");
    ASSERT_TRUE(res) << body;
    EXPECT_EQ(res->status, 400) << body;
    const auto j = nlohmann::json::parse(res->body);
    EXPECT_TRUE(j.contains("error") && j["error"].is_string()) << body;
  }
  EXPECT_EQ(server.images_scored(), 0u);
}

TEST(Server, OracleShapeErrorIsAClientError) {
  OracleServer server(patch_detector());
  Rng rng(5);
  const std::vector<Image> tiny{test::random_image({4, 4, 3}, rng)};
  httplib::Client cli(server.url());
  auto res = cli.Post("/v1/score_batch", protocol::encode_request(tiny).dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(server.images_scored(), 0u);
}

TEST(Server, ConcurrentClientsAreCountedExactly) {
  auto det = patch_detector();
  auto counter = std::make_shared<QueryCounter>(*det);
  OracleServer server(counter);
  Rng rng(6);
  const Image img = test::random_image({18, 18, 3}, rng);
  const double expected_score = det->score(img).p_fake();
  std::vector<std::thread> clients;
  std::atomic<int> mismatches{0};
  std::uint64_t expected_total = 0;
  for (int t = 0; t < 6; ++t) {
    const int batch = 1 + t % 3;
    expected_total += static_cast<std::uint64_t>(batch) * 10;
    clients.emplace_back([&, batch] {
      RemoteOracle remote(server.url());
      std::vector<Image> images(static_cast<std::size_t>(batch), img);
      for (int i = 0; i < 10; ++i)
        for (auto s : remote.score_batch(images))
          if (std::abs(s.p_fake() - expected_score) > 1e-6) ++mismatches;
    });
  }
  for (auto& c : clients) c.join();
  EXPECT_EQ(mismatches.load(), 0);
  EXPECT_EQ(counter->total_queries(), expected_total);
  EXPECT_EQ(server.images_scored(), expected_total);
}

TEST(Endpoint, ParsesOriginAndPrefix) {
  auto e = Endpoint::parse("http://localhost:8080/api/v1/");
  EXPECT_EQ(e.origin, "http://localhost:8080");
  EXPECT_EQ(e.prefix, "/api/v1");
  EXPECT_EQ(Endpoint::parse("http://h:1").prefix, "");
  EXPECT_THROW(Endpoint::parse("ftp://x"), ConfigError);
}
