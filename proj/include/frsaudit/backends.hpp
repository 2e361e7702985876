#pragma once

// Prediction backends: a uniform interface over the local classifier and
// remote face-attribute APIs, plus the shared plumbing around them (content
// addressed cache, rate limiter, retries, call log).

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "frsaudit/corpus.hpp"
#include "frsaudit/error.hpp"
#include "frsaudit/model.hpp"

namespace frsaudit::backends {

enum class BackendKind { Remote, Local };

std::string_view to_string(BackendKind k);

struct BackendDescriptor {
  std::string name;
  BackendKind kind = BackendKind::Local;
  model::Task task = model::Task::Gender;
  /// Requests per second; 0 means unlimited (local backends only).
  double rate_limit = 0;
  std::string version;

  void validate() const;
};

void to_json(nlohmann::json& j, const BackendDescriptor& d);

struct Prediction {
  std::optional<std::string> label;
  std::optional<double> confidence;  // in [0, 1]
  std::optional<ErrorCode> error;
  std::string message;
  double latency_ms = 0;
  std::string backend;
  std::string version;
  std::string content_hash;
  bool cache_hit = false;

  bool ok() const { return label.has_value(); }
  bool face_not_detected() const { return error == ErrorCode::FaceNotDetected; }
};

void to_json(nlohmann::json& j, const Prediction& p);
void from_json(const nlohmann::json& j, Prediction& p);

// --- Clocks and rate limiting -------------------------------------------

class Clock {
 public:
  virtual ~Clock() = default;
  /// Seconds since an arbitrary epoch.
  virtual double now() = 0;
  virtual void sleep_until(double t) = 0;
  void sleep_for(double seconds) { sleep_until(now() + seconds); }
};

class SystemClock final : public Clock {
 public:
  double now() override;
  void sleep_until(double t) override;

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Virtual time: sleeping advances the clock instantly.
class FakeClock final : public Clock {
 public:
  explicit FakeClock(double start = 0) : now_(start) {}
  double now() override;
  void sleep_until(double t) override;
  void advance(double seconds);

 private:
  std::mutex mu_;
  double now_;
};

/// Grants at most floor(rate) requests in any half-open one-second window and
/// spaces consecutive grants by at least 1/rate seconds.
class RateLimiter {
 public:
  RateLimiter(double rate, Clock& clock);

  /// Blocks (via the clock) until a slot is available; returns the grant time.
  double acquire();
  double rate() const noexcept { return rate_; }

 private:
  double rate_;
  std::size_t burst_;
  Clock& clock_;
  std::mutex mu_;
  std::deque<double> recent_;
  std::optional<double> last_;
};

// --- Cache ----------------------------------------------------------------

/// `<root>/<backend>/<content_hash>.json` holds an append-only array of
/// {version, task, prediction} entries. Only answers from the backend are
/// stored (labels and FaceNotDetected), never transport or auth failures.
class PredictionCache {
 public:
  explicit PredictionCache(std::filesystem::path root) : root_(std::move(root)) {}

  std::optional<Prediction> lookup(const std::string& content_hash,
                                   const BackendDescriptor& backend) const;
  void store(const std::string& content_hash, const BackendDescriptor& backend,
             const Prediction& prediction);
  std::filesystem::path path_for(const std::string& content_hash,
                                 const std::string& backend_name) const;

 private:
  std::filesystem::path root_;
  mutable std::mutex mu_;
};

// --- Backends ---------------------------------------------------------------

struct InferenceInput {
  const FaceRecord& record;
  const ImageBuffer& image;
  const std::vector<std::uint8_t>& bytes;
};

struct RawAnswer {
  std::string label;
  std::optional<double> confidence;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual const BackendDescriptor& descriptor() const = 0;
  /// Throws Error with FaceNotDetected, TransportError, AuthError or BadResponse.
  virtual RawAnswer infer(const InferenceInput& input) = 0;
};

/// Deterministic test backends. Correct answers the record's own label;
/// Fixed always answers `fixed_label`.
class StubBackend final : public Backend {
 public:
  enum class Mode { Correct, Fixed };
  StubBackend(std::string name, Mode mode, model::Task task = model::Task::Gender,
              std::string fixed_label = "Male");
  const BackendDescriptor& descriptor() const override { return desc_; }
  RawAnswer infer(const InferenceInput& input) override;

 private:
  BackendDescriptor desc_;
  Mode mode_;
  std::string fixed_label_;
};

/// The trainable classifier; version is derived from the checkpoint bytes.
class LocalCnnBackend final : public Backend {
 public:
  explicit LocalCnnBackend(model::Checkpoint checkpoint, std::string name = "local-cnn");
  const BackendDescriptor& descriptor() const override { return desc_; }
  RawAnswer infer(const InferenceInput& input) override;
  const model::Checkpoint& checkpoint() const { return checkpoint_; }

 private:
  model::Checkpoint checkpoint_;
  BackendDescriptor desc_;
};

/// Ground-truth label of a record for a task ("Male"/"Female" or country code).
std::string truth_label(const FaceRecord& record, model::Task task);

// --- HTTP and remote adapters ---------------------------------------------

struct HttpRequest {
  std::string method = "POST";
  std::string host;  // e.g. "rekognition.us-east-1.amazonaws.com"
  std::string path = "/";
  std::string query;  // without '?'
  std::map<std::string, std::string> headers;
  std::string body;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  /// Throws TransportError when no response was received.
  virtual HttpResponse send(const HttpRequest& request) = 0;
};

/// HTTPS via cpp-httplib.
class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(double timeout_seconds = 30) : timeout_(timeout_seconds) {}
  HttpResponse send(const HttpRequest& request) override;

 private:
  double timeout_;
};

struct AwsCredentials {
  std::string access_key_id;
  std::string secret_access_key;
  std::string session_token;
  std::string region = "us-east-1";

  /// AWS_ACCESS_KEY_ID, AWS_SECRET_ACCESS_KEY, AWS_SESSION_TOKEN, AWS_REGION.
  static AwsCredentials from_env();
};

/// Adds X-Amz-Date, x-amz-content-sha256 (if asked) and Authorization headers
/// using Signature Version 4. `amz_date` is "YYYYMMDDTHHMMSSZ".
void sigv4_sign(HttpRequest& request, const AwsCredentials& creds, const std::string& service,
                const std::string& amz_date, bool add_content_sha = false);

std::string amz_timestamp_now();

/// Rekognition DetectFaces (gender attribute).
class AwsRekognitionBackend final : public Backend {
 public:
  AwsRekognitionBackend(AwsCredentials creds, std::shared_ptr<HttpTransport> transport,
                        double rate_limit = 5);
  const BackendDescriptor& descriptor() const override { return desc_; }
  RawAnswer infer(const InferenceInput& input) override;
  /// Parses a DetectFaces response body.
  static RawAnswer parse(int status, const std::string& body);

 private:
  AwsCredentials creds_;
  std::shared_ptr<HttpTransport> transport_;
  BackendDescriptor desc_;
};

/// Azure Face detect with returnFaceAttributes=gender.
/// AZURE_FACE_ENDPOINT (https://<name>.cognitiveservices.azure.com), AZURE_FACE_KEY.
class AzureFaceBackend final : public Backend {
 public:
  AzureFaceBackend(std::string endpoint, std::string key,
                   std::shared_ptr<HttpTransport> transport, double rate_limit = 10);
  static std::unique_ptr<AzureFaceBackend> from_env(std::shared_ptr<HttpTransport> transport);
  const BackendDescriptor& descriptor() const override { return desc_; }
  RawAnswer infer(const InferenceInput& input) override;
  static RawAnswer parse(int status, const std::string& body);

 private:
  std::string host_;
  std::string key_;
  std::shared_ptr<HttpTransport> transport_;
  BackendDescriptor desc_;
};

/// Face++ v3 detect with return_attributes=gender.
/// FACEPP_API_KEY, FACEPP_API_SECRET, optional FACEPP_ENDPOINT host.
class FacePlusPlusBackend final : public Backend {
 public:
  FacePlusPlusBackend(std::string api_key, std::string api_secret,
                      std::shared_ptr<HttpTransport> transport,
                      std::string host = "api-us.faceplusplus.com", double rate_limit = 1);
  static std::unique_ptr<FacePlusPlusBackend> from_env(std::shared_ptr<HttpTransport> transport);
  const BackendDescriptor& descriptor() const override { return desc_; }
  RawAnswer infer(const InferenceInput& input) override;
  static RawAnswer parse(int status, const std::string& body);

 private:
  std::string api_key_;
  std::string api_secret_;
  std::string host_;
  std::shared_ptr<HttpTransport> transport_;
  BackendDescriptor desc_;
};

/// JPEG bytes for upload: passes JPEG input through, re-encodes anything else.
std::vector<std::uint8_t> as_jpeg(const InferenceInput& input);

std::string url_encode(std::string_view s);

// --- Service ----------------------------------------------------------------

struct CallLogEntry {
  std::string backend;
  std::string record_id;
  std::string content_hash;
  bool cache_hit = false;
  int attempts = 0;
  std::string outcome;  // label or error code name
  double latency_ms = 0;
};

nlohmann::json to_json_line(const CallLogEntry& e);

struct ServiceOptions {
  int max_retries = 3;
  double backoff_seconds = 0.5;  // doubled after each failed attempt
  int parallelism = 4;
};

/// Wraps one backend with caching, rate limiting, retries and logging.
/// Safe for concurrent callers. Backend calls are serialised until the first
/// one returns without AuthError; after an AuthError no further calls are made.
class PredictionService {
 public:
  PredictionService(std::shared_ptr<Backend> backend, std::shared_ptr<PredictionCache> cache,
                    std::shared_ptr<Clock> clock, ServiceOptions options = {});

  Prediction predict(const FaceRecord& record, const ImageSource& source);
  /// Output order matches input order; failures are per item.
  std::vector<Prediction> predict_batch(const std::vector<FaceRecord>& records,
                                        const ImageSource& source);

  const BackendDescriptor& descriptor() const { return backend_->descriptor(); }
  /// Number of times the wrapped backend was actually invoked.
  long backend_calls() const;
  std::vector<CallLogEntry> call_log() const;
  /// Set once the backend reports AuthError; later calls fail fast.
  bool auth_failed() const;

 private:
  Prediction compute(const FaceRecord& record, const ImageBuffer& image,
                     const std::vector<std::uint8_t>& bytes, const std::string& hash,
                     int& attempts);
  void log(CallLogEntry entry);

  std::shared_ptr<Backend> backend_;
  std::shared_ptr<PredictionCache> cache_;
  std::shared_ptr<Clock> clock_;
  ServiceOptions options_;
  std::unique_ptr<RateLimiter> limiter_;

  mutable std::mutex mu_;
  std::map<std::string, std::shared_future<Prediction>> inflight_;
  std::vector<CallLogEntry> log_;
  long calls_ = 0;
  bool auth_failed_ = false;
  std::mutex probe_mu_;
  std::atomic<bool> probed_{false};
};

}  // namespace frsaudit::backends
