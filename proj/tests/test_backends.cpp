#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include "frsaudit/backends.hpp"
#include "frsaudit/digest.hpp"
#include "helpers.hpp"

using namespace frsaudit;
using namespace frsaudit::backends;

namespace {

// Remote-kind backend that answers the record's label and counts invocations.
// `script` holds error codes to raise on successive calls before answering.
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(double rate = 100, std::vector<ErrorCode> script = {})
      : script_(std::move(script)) {
    desc_ = {"scripted", BackendKind::Remote, model::Task::Gender, rate, "v1"};
  }
  const BackendDescriptor& descriptor() const override { return desc_; }
  RawAnswer infer(const InferenceInput& in) override {
    const auto n = static_cast<std::size_t>(calls++);
    if (n < script_.size()) fail(script_[n], "scripted failure");
    if (jitter) std::this_thread::sleep_for(std::chrono::microseconds((n * 7919) % 3000));
    return {truth_label(in.record, desc_.task), 0.75};
  }
  BackendDescriptor desc_;
  std::atomic<int> calls{0};
  bool jitter = false;

 private:
  std::vector<ErrorCode> script_;
};

struct Fixture {
  Manifest manifest = testing::synthetic_manifest({"AUS", "IND"}, 2, 2);
  MemoryImageSource source;
  Fixture() {
    std::uint64_t s = 1;
    for (const auto& r : manifest.records) source.put(r.record_id, testing::random_image(20, 24, s++));
  }
};

class FakeTransport final : public HttpTransport {
 public:
  HttpResponse send(const HttpRequest& request) override {
    requests.push_back(request);
    if (responses.empty()) fail(ErrorCode::TransportError, "no canned response");
    auto r = responses.front();
    if (responses.size() > 1) responses.erase(responses.begin());
    return r;
  }
  std::vector<HttpRequest> requests;
  std::vector<HttpResponse> responses;
};

}  // namespace

TEST_CASE("remote descriptors need a positive rate limit") {
  BackendDescriptor d{"x", BackendKind::Remote, model::Task::Gender, 0, "1"};
  CHECK_THROWS_AS(d.validate(), Error);
  d.rate_limit = 2;
  CHECK_NOTHROW(d.validate());
}

TEST_CASE("stub backend through the service") {
  Fixture f;
  PredictionService svc(std::make_shared<StubBackend>("stub", StubBackend::Mode::Correct), nullptr,
                        std::make_shared<FakeClock>());
  for (const auto& r : f.manifest.records) {
    const auto p = svc.predict(r, f.source);
    REQUIRE(p.ok());
    CHECK(*p.label == std::string(to_string(r.gender)));
    CHECK(p.content_hash.size() == 64);
  }
  CHECK(svc.call_log().size() == f.manifest.records.size());
  PredictionService male(std::make_shared<StubBackend>("stub-male", StubBackend::Mode::Fixed),
                         nullptr, std::make_shared<FakeClock>());
  for (const auto& r : f.manifest.records) CHECK(*male.predict(r, f.source).label == "Male");
}

TEST_CASE("cache store then lookup returns the same prediction") {
  const auto dir = testing::temp_dir("cache_rt");
  PredictionCache cache(dir);
  BackendDescriptor d{"b", BackendKind::Local, model::Task::Gender, 0, "1"};
  Prediction p;
  p.label = "Female";
  p.confidence = 0.625;
  p.backend = "b";
  p.version = "1";
  p.content_hash = "abc";
  cache.store("abc", d, p);
  const auto hit = cache.lookup("abc", d);
  REQUIRE(hit);
  CHECK(*hit->label == "Female");
  CHECK(*hit->confidence == 0.625);
  CHECK(std::filesystem::exists(dir / "b" / "abc.json"));

  auto bumped = d;
  bumped.version = "2";
  CHECK_FALSE(cache.lookup("abc", bumped));
  auto country = d;
  country.task = model::Task::Country;
  CHECK_FALSE(cache.lookup("abc", country));

  // Append-only: a second version adds an entry and keeps the first.
  cache.store("abc", bumped, p);
  CHECK(cache.lookup("abc", d));
  const auto bytes = read_file_bytes(dir / "b" / "abc.json");
  CHECK(nlohmann::json::parse(bytes.begin(), bytes.end()).size() == 2);
}

TEST_CASE("cached batch issues no backend calls") {
  Fixture f;
  const auto dir = testing::temp_dir("cache_batch");
  auto backend = std::make_shared<ScriptedBackend>();
  auto cache = std::make_shared<PredictionCache>(dir);
  PredictionService first(backend, cache, std::make_shared<FakeClock>());
  const auto a = first.predict_batch(f.manifest.records, f.source);
  CHECK(backend->calls == static_cast<int>(f.manifest.records.size()));

  backend->calls = 0;
  PredictionService second(backend, cache, std::make_shared<FakeClock>());
  const auto b = second.predict_batch(f.manifest.records, f.source);
  CHECK(backend->calls == 0);
  REQUIRE(b.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(b[i].cache_hit);
    CHECK(*b[i].label == *a[i].label);
  }
  CHECK(second.predict_batch({}, f.source).empty());
}

TEST_CASE("byte-identical images at different paths share one call") {
  auto manifest = testing::synthetic_manifest({"AUS"}, 2, 0);
  MemoryImageSource source;
  const auto img = testing::random_image(10, 10, 3);
  for (const auto& r : manifest.records) source.put(r.record_id, img);
  auto backend = std::make_shared<ScriptedBackend>();
  PredictionService svc(backend, std::make_shared<PredictionCache>(testing::temp_dir("dedupe")),
                        std::make_shared<FakeClock>());
  const auto out = svc.predict_batch(manifest.records, source);
  CHECK(backend->calls == 1);
  CHECK(out[0].content_hash == out[1].content_hash);
}

TEST_CASE("unreadable image fails without a cache entry") {
  auto manifest = testing::synthetic_manifest({"AUS"}, 1, 0);
  const auto dir = testing::temp_dir("unreadable");
  write_file_bytes(dir / manifest.records[0].image_ref, std::vector<std::uint8_t>{1, 2, 3});
  FileImageSource source(dir);
  const auto cache_dir = dir / "cache";
  auto backend = std::make_shared<ScriptedBackend>();
  PredictionService svc(backend, std::make_shared<PredictionCache>(cache_dir),
                        std::make_shared<FakeClock>());
  const auto p = svc.predict(manifest.records[0], source);
  CHECK_FALSE(p.ok());
  CHECK(p.error == ErrorCode::TransportError);
  CHECK(backend->calls == 0);
  CHECK_FALSE(std::filesystem::exists(cache_dir));
}

TEST_CASE("rate limit 2/s over 10 uncached items takes at least 4.5 s") {
  Fixture f;
  auto manifest = testing::synthetic_manifest({"AUS", "IND", "ENG"}, 2, 2);
  MemoryImageSource source;
  std::uint64_t s = 50;
  for (const auto& r : manifest.records) source.put(r.record_id, testing::random_image(8, 8, s++));
  manifest.records.resize(10);
  auto clock = std::make_shared<FakeClock>();
  PredictionService svc(std::make_shared<ScriptedBackend>(2.0), nullptr, clock);
  const double start = clock->now();
  svc.predict_batch(manifest.records, source);
  // Oracle: grants at 0, 0.5, ..., 4.5 when requests are always waiting.
  double expected_last = 0;
  for (int i = 1; i < 10; ++i) expected_last += 0.5;
  CHECK(clock->now() - start >= 4.5 - 1e-12);
  CHECK(clock->now() - start == doctest::Approx(expected_last));
}

TEST_CASE("rate limiter never exceeds its budget in any one-second window") {
  for (const double rate : {1.0, 2.0, 2.5, 7.0, 13.3}) {
    FakeClock clock;
    RateLimiter limiter(rate, clock);
    rng::Stream s(static_cast<std::uint64_t>(rate * 100));
    std::vector<double> grants;
    for (int i = 0; i < 10000; ++i) {
      if (s.below(4) == 0) clock.advance(s.uniform(0, 2.0));
      grants.push_back(limiter.acquire());
    }
    const auto budget = static_cast<std::size_t>(std::floor(rate));
    std::size_t worst = 0;
    for (std::size_t i = 0, j = 0; i < grants.size(); ++i) {
      while (j < grants.size() && grants[j] < grants[i] + 1.0) ++j;
      worst = std::max(worst, j - i);
    }
    CHECK_MESSAGE(worst <= budget, "rate " << rate << " worst window " << worst);
    CHECK(std::is_sorted(grants.begin(), grants.end()));
  }
}

TEST_CASE("transport errors are retried with exponential backoff") {
  Fixture f;
  auto clock = std::make_shared<FakeClock>();
  auto backend = std::make_shared<ScriptedBackend>(
      1000, std::vector{ErrorCode::TransportError, ErrorCode::TransportError});
  PredictionService svc(backend, nullptr, clock);
  const auto p = svc.predict(f.manifest.records[0], f.source);
  CHECK(p.ok());
  CHECK(backend->calls == 3);
  CHECK(svc.call_log().back().attempts == 3);
  CHECK(clock->now() >= 0.5 + 1.0);

  auto dead = std::make_shared<ScriptedBackend>(1000, std::vector<ErrorCode>(10, ErrorCode::TransportError));
  const auto dir = testing::temp_dir("retry");
  PredictionService svc2(dead, std::make_shared<PredictionCache>(dir), std::make_shared<FakeClock>());
  const auto q = svc2.predict(f.manifest.records[0], f.source);
  CHECK(q.error == ErrorCode::TransportError);
  CHECK(dead->calls == 4);
  CHECK(std::filesystem::is_empty(dir));
}

TEST_CASE("auth errors fail fast and stop later calls") {
  Fixture f;
  auto backend = std::make_shared<ScriptedBackend>(1000, std::vector{ErrorCode::AuthError});
  PredictionService svc(backend, nullptr, std::make_shared<FakeClock>());
  const auto out = svc.predict_batch(f.manifest.records, f.source);
  CHECK(backend->calls == 1);
  CHECK(svc.auth_failed());
  for (const auto& p : out) CHECK(p.error == ErrorCode::AuthError);
}

TEST_CASE("face not detected is an answer and is cached") {
  Fixture f;
  const auto dir = testing::temp_dir("fnd");
  auto backend = std::make_shared<ScriptedBackend>(1000, std::vector{ErrorCode::FaceNotDetected});
  auto cache = std::make_shared<PredictionCache>(dir);
  PredictionService svc(backend, cache, std::make_shared<FakeClock>());
  CHECK(svc.predict(f.manifest.records[0], f.source).face_not_detected());
  CHECK(svc.predict(f.manifest.records[0], f.source).face_not_detected());
  CHECK(backend->calls == 1);
}

TEST_CASE("batch output order matches input order under parallel completion") {
  auto manifest = testing::synthetic_manifest(testing::eight_countries(), 3, 3);
  MemoryImageSource source;
  std::uint64_t s = 900;
  for (const auto& r : manifest.records) source.put(r.record_id, testing::random_image(6, 6, s++));
  auto backend = std::make_shared<ScriptedBackend>(1e6);
  backend->jitter = true;
  ServiceOptions opts;
  opts.parallelism = 6;
  PredictionService svc(backend, nullptr, std::make_shared<FakeClock>(), opts);
  const auto out = svc.predict_batch(manifest.records, source);
  REQUIRE(out.size() == manifest.records.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(*out[i].label == std::string(to_string(manifest.records[i].gender)));
    CHECK(out[i].content_hash == digest::sha256_hex(source.bytes(manifest.records[i])));
  }
}

TEST_CASE("local CNN backend reports the forward-pass argmax") {
  model::ClassifierConfig cfg;
  cfg.input_width = 10;
  cfg.input_height = 12;
  cfg.conv_blocks = {{4, 3, 2}};
  cfg.dense = {5};
  cfg.weight_init_seed = 3;
  model::Checkpoint ckpt{model::Network::initialized(cfg), {}};
  const auto img = testing::random_image(20, 24, 7);
  const auto probs = ckpt.network.predict(model::to_input(img, cfg));
  auto backend = std::make_shared<LocalCnnBackend>(ckpt);
  CHECK(backend->descriptor().version.rfind("ckpt-", 0) == 0);
  auto manifest = testing::synthetic_manifest({"AUS"}, 1, 0);
  MemoryImageSource source;
  source.put(manifest.records[0].record_id, img);
  PredictionService svc(backend, nullptr, std::make_shared<FakeClock>());
  const auto p = svc.predict(manifest.records[0], source);
  REQUIRE(p.ok());
  const int best = probs[0] >= probs[1] ? 0 : 1;
  CHECK(*p.label == cfg.class_labels[static_cast<std::size_t>(best)]);
  CHECK(*p.confidence == doctest::Approx(probs[static_cast<std::size_t>(best)]).epsilon(1e-12));
}

TEST_CASE("SigV4 signs the get-vanilla request") {
  HttpRequest req;
  req.method = "GET";
  req.host = "example.amazonaws.com";
  req.path = "/";
  AwsCredentials creds{"AKIDEXAMPLE", "wJalrXUtnFEMI/K7MDENG+bPxRfiCYEXAMPLEKEY", "", "us-east-1"};
  sigv4_sign(req, creds, "service", "20150830T123600Z");
  CHECK(req.headers["Authorization"] ==
        "AWS4-HMAC-SHA256 Credential=AKIDEXAMPLE/20150830/us-east-1/service/aws4_request, "
        "SignedHeaders=host;x-amz-date, "
        "Signature=5fa00fa31553b73ebf1942676e86291e8372ff2a2260956d9b8aae1d763fbf31");
}

TEST_CASE("rekognition adapter parses fixtures and maps errors") {
  auto t = std::make_shared<FakeTransport>();
  t->responses = {{200, R"({"FaceDetails":[{"BoundingBox":{"Width":0.1,"Height":0.1},
      "Gender":{"Value":"Female","Confidence":12.0}},{"BoundingBox":{"Width":0.5,"Height":0.6},
      "Gender":{"Value":"Male","Confidence":99.5}}]})"}};
  AwsRekognitionBackend aws({"AK", "SK", "", "eu-west-1"}, t);
  const auto img = testing::random_image(8, 8, 1);
  const auto manifest = testing::synthetic_manifest({"AUS"}, 1, 0);
  const std::vector<std::uint8_t> png = encode_png(img);
  const auto a = aws.infer({manifest.records[0], img, png});
  CHECK(a.label == "Male");
  CHECK(*a.confidence == doctest::Approx(0.995));
  const auto& req = t->requests.at(0);
  CHECK(req.host == "rekognition.eu-west-1.amazonaws.com");
  CHECK(req.headers.at("X-Amz-Target") == "RekognitionService.DetectFaces");
  CHECK(req.headers.at("Authorization").find("/eu-west-1/rekognition/aws4_request") != std::string::npos);
  const auto body = nlohmann::json::parse(req.body);
  const auto sent = body["Image"]["Bytes"].get<std::string>();
  CHECK(sent.rfind("/9j/", 0) == 0);  // base64 of a JPEG SOI marker

  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  CHECK(code_of([] { AwsRekognitionBackend::parse(200, R"({"FaceDetails":[]})"); }) ==
        ErrorCode::FaceNotDetected);
  CHECK(code_of([] { AwsRekognitionBackend::parse(400, R"({"__type":"UnrecognizedClientException"})"); }) ==
        ErrorCode::AuthError);
  CHECK(code_of([] { AwsRekognitionBackend::parse(400, R"({"__type":"ThrottlingException"})"); }) ==
        ErrorCode::TransportError);
  CHECK(code_of([] { AwsRekognitionBackend::parse(503, ""); }) == ErrorCode::TransportError);
  CHECK(code_of([] { AwsRekognitionBackend::parse(200, "not json"); }) == ErrorCode::BadResponse);
}

TEST_CASE("azure adapter parses fixtures and maps errors") {
  auto t = std::make_shared<FakeTransport>();
  t->responses = {{200, R"([{"faceId":"x","faceRectangle":{"width":50,"height":60},
      "faceAttributes":{"gender":"female"}}])"}};
  AzureFaceBackend az("https://demo.cognitiveservices.azure.com/", "KEY", t);
  const auto img = testing::random_image(8, 8, 1);
  const auto manifest = testing::synthetic_manifest({"AUS"}, 1, 0);
  const auto jpeg = encode_jpeg(img);
  CHECK(az.infer({manifest.records[0], img, jpeg}).label == "Female");
  const auto& req = t->requests.at(0);
  CHECK(req.host == "demo.cognitiveservices.azure.com");
  CHECK(req.path == "/face/v1.0/detect");
  CHECK(req.headers.at("Ocp-Apim-Subscription-Key") == "KEY");
  CHECK(req.body == std::string(jpeg.begin(), jpeg.end()));
  CHECK_THROWS_AS(AzureFaceBackend::parse(200, "[]"), Error);
  try {
    AzureFaceBackend::parse(401, "{}");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AuthError);
  }
}

TEST_CASE("face++ adapter parses fixtures and maps errors") {
  auto t = std::make_shared<FakeTransport>();
  t->responses = {{200, R"({"faces":[{"face_rectangle":{"width":10,"height":10},
      "attributes":{"gender":{"value":"Male"}}}],"image_id":"i"})"}};
  FacePlusPlusBackend fpp("k ey", "s&c", t);
  const auto img = testing::random_image(8, 8, 1);
  const auto manifest = testing::synthetic_manifest({"AUS"}, 1, 0);
  const auto png = encode_png(img);
  CHECK(fpp.infer({manifest.records[0], img, png}).label == "Male");
  const auto& req = t->requests.at(0);
  CHECK(req.path == "/facepp/v3/detect");
  CHECK(req.body.find("api_key=k%20ey") != std::string::npos);
  CHECK(req.body.find("api_secret=s%26c") != std::string::npos);
  CHECK(req.body.find("image_base64=") != std::string::npos);
  try {
    FacePlusPlusBackend::parse(403, R"({"error_message":"CONCURRENCY_LIMIT_EXCEEDED"})");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TransportError);
  }
  try {
    FacePlusPlusBackend::parse(401, R"({"error_message":"AUTHENTICATION_ERROR"})");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AuthError);
  }
  try {
    FacePlusPlusBackend::parse(200, R"({"faces":[]})");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FaceNotDetected);
  }
}

TEST_CASE("prediction JSON round trip") {
  Prediction p;
  p.error = ErrorCode::FaceNotDetected;
  p.message = "none";
  p.backend = "x";
  const nlohmann::json j = p;
  const auto q = j.get<Prediction>();
  CHECK(q.error == ErrorCode::FaceNotDetected);
  CHECK_FALSE(q.label);
  CHECK(q.message == "none");
}
