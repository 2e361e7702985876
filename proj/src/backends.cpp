#include "frsaudit/backends.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <thread>

#include "frsaudit/digest.hpp"

namespace frsaudit::backends {

std::string_view to_string(BackendKind k) { return k == BackendKind::Remote ? "remote" : "local"; }

void BackendDescriptor::validate() const {
  if (name.empty()) fail(ErrorCode::InvalidArgument, "backend name is empty");
  if (kind == BackendKind::Remote && !(rate_limit > 0)) {
    fail(ErrorCode::InvalidArgument, "remote backend '" + name + "' needs rate_limit > 0");
  }
  if (rate_limit < 0) fail(ErrorCode::InvalidArgument, "rate_limit must be >= 0");
}

void to_json(nlohmann::json& j, const BackendDescriptor& d) {
  j = {{"name", d.name},
       {"kind", to_string(d.kind)},
       {"task", model::to_string(d.task)},
       {"rate_limit", d.rate_limit},
       {"version", d.version}};
}

void to_json(nlohmann::json& j, const Prediction& p) {
  j = nlohmann::json::object();
  j["label"] = p.label ? nlohmann::json(*p.label) : nlohmann::json(nullptr);
  j["confidence"] = p.confidence ? nlohmann::json(*p.confidence) : nlohmann::json(nullptr);
  j["error"] = p.error ? nlohmann::json(to_string(*p.error)) : nlohmann::json(nullptr);
  if (!p.message.empty()) j["message"] = p.message;
  j["latency_ms"] = p.latency_ms;
  j["backend"] = p.backend;
  j["version"] = p.version;
  j["content_hash"] = p.content_hash;
}

void from_json(const nlohmann::json& j, Prediction& p) {
  p = Prediction{};
  if (j.contains("label") && !j["label"].is_null()) p.label = j["label"].get<std::string>();
  if (j.contains("confidence") && !j["confidence"].is_null()) {
    p.confidence = j["confidence"].get<double>();
  }
  if (j.contains("error") && !j["error"].is_null()) {
    p.error = parse_error_code(j["error"].get<std::string>());
    if (!p.error) fail(ErrorCode::BadResponse, "unknown error code in cached prediction");
  }
  p.message = j.value("message", "");
  p.latency_ms = j.value("latency_ms", 0.0);
  p.backend = j.value("backend", "");
  p.version = j.value("version", "");
  p.content_hash = j.value("content_hash", "");
}

// --- Clocks -------------------------------------------------------------------

double SystemClock::now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

void SystemClock::sleep_until(double t) {
  const double wait = t - now();
  if (wait > 0) std::this_thread::sleep_for(std::chrono::duration<double>(wait));
}

double FakeClock::now() {
  std::lock_guard lock(mu_);
  return now_;
}

void FakeClock::sleep_until(double t) {
  std::lock_guard lock(mu_);
  now_ = std::max(now_, t);
}

void FakeClock::advance(double seconds) {
  std::lock_guard lock(mu_);
  now_ += seconds;
}

RateLimiter::RateLimiter(double rate, Clock& clock)
    : rate_(rate),
      burst_(std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(rate)))),
      clock_(clock) {
  if (!(rate > 0)) fail(ErrorCode::InvalidArgument, "rate limit must be positive");
}

double RateLimiter::acquire() {
  double grant;
  {
    std::lock_guard lock(mu_);
    grant = clock_.now();
    if (last_) grant = std::max(grant, *last_ + 1.0 / rate_);
    if (recent_.size() >= burst_) grant = std::max(grant, recent_.front() + 1.0);
    recent_.push_back(grant);
    while (recent_.size() > burst_) recent_.pop_front();
    last_ = grant;
  }
  clock_.sleep_until(grant);
  return grant;
}

// --- Cache ----------------------------------------------------------------------

std::filesystem::path PredictionCache::path_for(const std::string& content_hash,
                                                const std::string& backend_name) const {
  return root_ / backend_name / (content_hash + ".json");
}

namespace {

nlohmann::json read_entries(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return nlohmann::json::array();
  const auto bytes = read_file_bytes(path);
  try {
    auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    if (!j.is_array()) fail(ErrorCode::Io, "cache file is not an array: " + path.string());
    return j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, "corrupt cache file " + path.string() + ": " + e.what());
  }
}

}  // namespace

std::optional<Prediction> PredictionCache::lookup(const std::string& content_hash,
                                                  const BackendDescriptor& backend) const {
  std::lock_guard lock(mu_);
  const auto entries = read_entries(path_for(content_hash, backend.name));
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->value("version", "") == backend.version &&
        it->value("task", "") == model::to_string(backend.task)) {
      return it->at("prediction").get<Prediction>();
    }
  }
  return std::nullopt;
}

void PredictionCache::store(const std::string& content_hash, const BackendDescriptor& backend,
                            const Prediction& prediction) {
  std::lock_guard lock(mu_);
  const auto path = path_for(content_hash, backend.name);
  auto entries = read_entries(path);
  nlohmann::json stored = prediction;
  stored["latency_ms"] = 0.0;  // keep cache files reproducible
  entries.push_back({{"version", backend.version},
                     {"task", model::to_string(backend.task)},
                     {"prediction", stored}});
  std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, entries.dump(1));
}

// --- Local backends -------------------------------------------------------------

std::string truth_label(const FaceRecord& record, model::Task task) {
  return task == model::Task::Gender ? std::string(to_string(record.gender)) : record.country;
}

StubBackend::StubBackend(std::string name, Mode mode, model::Task task, std::string fixed_label)
    : mode_(mode), fixed_label_(std::move(fixed_label)) {
  desc_.name = std::move(name);
  desc_.kind = BackendKind::Local;
  desc_.task = task;
  desc_.version = mode == Mode::Correct ? "stub-1" : "stub-fixed-" + fixed_label_;
}

RawAnswer StubBackend::infer(const InferenceInput& input) {
  if (mode_ == Mode::Correct) return {truth_label(input.record, desc_.task), 1.0};
  return {fixed_label_, 1.0};
}

LocalCnnBackend::LocalCnnBackend(model::Checkpoint checkpoint, std::string name)
    : checkpoint_(std::move(checkpoint)) {
  desc_.name = std::move(name);
  desc_.kind = BackendKind::Local;
  desc_.task = checkpoint_.network.config().task;
  desc_.version = "ckpt-" + digest::sha256_hex(model::serialize(checkpoint_)).substr(0, 16);
}

RawAnswer LocalCnnBackend::infer(const InferenceInput& input) {
  const auto& net = checkpoint_.network;
  const auto p = net.predict(model::to_input(input.image, net.config()));
  const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  return {net.config().class_labels[best], p[best]};
}

// --- Remote adapters -----------------------------------------------------------

std::vector<std::uint8_t> as_jpeg(const InferenceInput& input) {
  const auto& b = input.bytes;
  if (b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF) return b;
  return encode_jpeg(input.image, 95);
}

std::string url_encode(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (const unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 15];
    }
  }
  return out;
}

namespace {

std::string env_or(const char* name, std::string fallback = {}) {
  const char* v = std::getenv(name);
  return v != nullptr ? std::string(v) : fallback;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

nlohmann::json parse_body(const std::string& body) {
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadResponse, std::string("response is not JSON: ") + e.what());
  }
}

std::string canonical_gender(std::string v) {
  v = lower(std::move(v));
  if (v == "male") return "Male";
  if (v == "female") return "Female";
  fail(ErrorCode::BadResponse, "unrecognised gender value '" + v + "'");
}

std::string host_of(std::string endpoint) {
  for (const std::string scheme : {"https://", "http://"}) {
    if (endpoint.rfind(scheme, 0) == 0) endpoint = endpoint.substr(scheme.size());
  }
  while (!endpoint.empty() && endpoint.back() == '/') endpoint.pop_back();
  return endpoint;
}

}  // namespace

AwsCredentials AwsCredentials::from_env() {
  AwsCredentials c;
  c.access_key_id = env_or("AWS_ACCESS_KEY_ID");
  c.secret_access_key = env_or("AWS_SECRET_ACCESS_KEY");
  c.session_token = env_or("AWS_SESSION_TOKEN");
  c.region = env_or("AWS_REGION", env_or("AWS_DEFAULT_REGION", "us-east-1"));
  if (c.access_key_id.empty() || c.secret_access_key.empty()) {
    fail(ErrorCode::AuthError, "AWS_ACCESS_KEY_ID and AWS_SECRET_ACCESS_KEY must be set");
  }
  return c;
}

std::string amz_timestamp_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

void sigv4_sign(HttpRequest& request, const AwsCredentials& creds, const std::string& service,
                const std::string& amz_date, bool add_content_sha) {
  const std::string payload_hash = digest::sha256_hex(request.body);
  request.headers["X-Amz-Date"] = amz_date;
  if (!creds.session_token.empty()) request.headers["X-Amz-Security-Token"] = creds.session_token;
  if (add_content_sha) request.headers["x-amz-content-sha256"] = payload_hash;

  std::map<std::string, std::string> canon;
  canon["host"] = request.host;
  for (const auto& [k, v] : request.headers) canon[lower(k)] = trim(v);
  std::string canonical_headers, signed_headers;
  for (const auto& [k, v] : canon) {
    canonical_headers += k + ":" + v + "\n";
    if (!signed_headers.empty()) signed_headers += ";";
    signed_headers += k;
  }
  const std::string canonical_request = request.method + "\n" + request.path + "\n" +
                                        request.query + "\n" + canonical_headers + "\n" +
                                        signed_headers + "\n" + payload_hash;
  const std::string date = amz_date.substr(0, 8);
  const std::string scope = date + "/" + creds.region + "/" + service + "/aws4_request";
  const std::string string_to_sign = "AWS4-HMAC-SHA256\n" + amz_date + "\n" + scope + "\n" +
                                     digest::sha256_hex(canonical_request);
  auto key = digest::hmac_sha256(digest::as_bytes("AWS4" + creds.secret_access_key), date);
  key = digest::hmac_sha256(key, creds.region);
  key = digest::hmac_sha256(key, service);
  key = digest::hmac_sha256(key, "aws4_request");
  const std::string signature = digest::hex(digest::hmac_sha256(key, string_to_sign));
  request.headers["Authorization"] = "AWS4-HMAC-SHA256 Credential=" + creds.access_key_id + "/" +
                                     scope + ", SignedHeaders=" + signed_headers +
                                     ", Signature=" + signature;
}

AwsRekognitionBackend::AwsRekognitionBackend(AwsCredentials creds,
                                             std::shared_ptr<HttpTransport> transport,
                                             double rate_limit)
    : creds_(std::move(creds)), transport_(std::move(transport)) {
  desc_ = {"aws-rekognition", BackendKind::Remote, model::Task::Gender, rate_limit,
           "DetectFaces-2016-06-27"};
  desc_.validate();
}

RawAnswer AwsRekognitionBackend::infer(const InferenceInput& input) {
  HttpRequest req;
  req.host = "rekognition." + creds_.region + ".amazonaws.com";
  req.headers["Content-Type"] = "application/x-amz-json-1.1";
  req.headers["X-Amz-Target"] = "RekognitionService.DetectFaces";
  const nlohmann::json body{{"Image", {{"Bytes", digest::base64(as_jpeg(input))}}},
                            {"Attributes", {"ALL"}}};
  req.body = body.dump();
  sigv4_sign(req, creds_, "rekognition", amz_timestamp_now());
  const auto res = transport_->send(req);
  return parse(res.status, res.body);
}

RawAnswer AwsRekognitionBackend::parse(int status, const std::string& body) {
  if (status != 200) {
    std::string type;
    try {
      type = nlohmann::json::parse(body).value("__type", "");
    } catch (const nlohmann::json::exception&) {
    }
    const auto has = [&](const char* s) { return type.find(s) != std::string::npos; };
    if (status >= 500 || has("Throttling") || has("ProvisionedThroughputExceeded") ||
        has("LimitExceeded")) {
      fail(ErrorCode::TransportError, "rekognition HTTP " + std::to_string(status) + " " + type);
    }
    if (status == 401 || status == 403 || has("AccessDenied") || has("UnrecognizedClient") ||
        has("InvalidSignature") || has("ExpiredToken") || has("MissingAuthenticationToken")) {
      fail(ErrorCode::AuthError, "rekognition rejected credentials: " + type);
    }
    fail(ErrorCode::BadResponse, "rekognition HTTP " + std::to_string(status) + " " + type);
  }
  const auto j = parse_body(body);
  if (!j.contains("FaceDetails") || !j["FaceDetails"].is_array()) {
    fail(ErrorCode::BadResponse, "DetectFaces response lacks FaceDetails");
  }
  const auto& faces = j["FaceDetails"];
  if (faces.empty()) fail(ErrorCode::FaceNotDetected, "no face in image");
  // Largest face wins.
  const nlohmann::json* best = nullptr;
  double best_area = -1;
  for (const auto& f : faces) {
    const auto bb = f.value("BoundingBox", nlohmann::json::object());
    const double area = bb.value("Width", 0.0) * bb.value("Height", 0.0);
    if (area > best_area) {
      best_area = area;
      best = &f;
    }
  }
  if (!best->contains("Gender")) fail(ErrorCode::BadResponse, "face lacks Gender attribute");
  const auto& g = (*best)["Gender"];
  RawAnswer a{canonical_gender(g.at("Value").get<std::string>()), std::nullopt};
  if (g.contains("Confidence")) a.confidence = std::clamp(g["Confidence"].get<double>() / 100.0, 0.0, 1.0);
  return a;
}

AzureFaceBackend::AzureFaceBackend(std::string endpoint, std::string key,
                                   std::shared_ptr<HttpTransport> transport, double rate_limit)
    : host_(host_of(std::move(endpoint))), key_(std::move(key)), transport_(std::move(transport)) {
  desc_ = {"azure-face", BackendKind::Remote, model::Task::Gender, rate_limit, "face-v1.0"};
  desc_.validate();
}

std::unique_ptr<AzureFaceBackend> AzureFaceBackend::from_env(
    std::shared_ptr<HttpTransport> transport) {
  const auto endpoint = env_or("AZURE_FACE_ENDPOINT");
  const auto key = env_or("AZURE_FACE_KEY");
  if (endpoint.empty() || key.empty()) {
    fail(ErrorCode::AuthError, "AZURE_FACE_ENDPOINT and AZURE_FACE_KEY must be set");
  }
  return std::make_unique<AzureFaceBackend>(endpoint, key, std::move(transport));
}

RawAnswer AzureFaceBackend::infer(const InferenceInput& input) {
  HttpRequest req;
  req.host = host_;
  req.path = "/face/v1.0/detect";
  req.query = "returnFaceAttributes=gender&detectionModel=detection_01";
  req.headers["Content-Type"] = "application/octet-stream";
  req.headers["Ocp-Apim-Subscription-Key"] = key_;
  const auto jpeg = as_jpeg(input);
  req.body.assign(jpeg.begin(), jpeg.end());
  const auto res = transport_->send(req);
  return parse(res.status, res.body);
}

RawAnswer AzureFaceBackend::parse(int status, const std::string& body) {
  if (status == 401 || status == 403) fail(ErrorCode::AuthError, "azure rejected the subscription key");
  if (status == 429 || status >= 500) {
    fail(ErrorCode::TransportError, "azure HTTP " + std::to_string(status));
  }
  if (status != 200) fail(ErrorCode::BadResponse, "azure HTTP " + std::to_string(status) + ": " + body);
  const auto j = parse_body(body);
  if (!j.is_array()) fail(ErrorCode::BadResponse, "azure detect response is not an array");
  if (j.empty()) fail(ErrorCode::FaceNotDetected, "no face in image");
  const nlohmann::json* best = nullptr;
  double best_area = -1;
  for (const auto& f : j) {
    const auto r = f.value("faceRectangle", nlohmann::json::object());
    const double area = r.value("width", 0.0) * r.value("height", 0.0);
    if (area > best_area) {
      best_area = area;
      best = &f;
    }
  }
  const auto attrs = best->value("faceAttributes", nlohmann::json::object());
  if (!attrs.contains("gender")) fail(ErrorCode::BadResponse, "face lacks gender attribute");
  return {canonical_gender(attrs["gender"].get<std::string>()), std::nullopt};
}

FacePlusPlusBackend::FacePlusPlusBackend(std::string api_key, std::string api_secret,
                                         std::shared_ptr<HttpTransport> transport,
                                         std::string host, double rate_limit)
    : api_key_(std::move(api_key)),
      api_secret_(std::move(api_secret)),
      host_(host_of(std::move(host))),
      transport_(std::move(transport)) {
  desc_ = {"facepp", BackendKind::Remote, model::Task::Gender, rate_limit, "v3"};
  desc_.validate();
}

std::unique_ptr<FacePlusPlusBackend> FacePlusPlusBackend::from_env(
    std::shared_ptr<HttpTransport> transport) {
  const auto key = env_or("FACEPP_API_KEY");
  const auto secret = env_or("FACEPP_API_SECRET");
  if (key.empty() || secret.empty()) {
    fail(ErrorCode::AuthError, "FACEPP_API_KEY and FACEPP_API_SECRET must be set");
  }
  return std::make_unique<FacePlusPlusBackend>(
      key, secret, std::move(transport), env_or("FACEPP_ENDPOINT", "api-us.faceplusplus.com"));
}

RawAnswer FacePlusPlusBackend::infer(const InferenceInput& input) {
  HttpRequest req;
  req.host = host_;
  req.path = "/facepp/v3/detect";
  req.headers["Content-Type"] = "application/x-www-form-urlencoded";
  req.body = "api_key=" + url_encode(api_key_) + "&api_secret=" + url_encode(api_secret_) +
             "&return_attributes=gender&image_base64=" + url_encode(digest::base64(as_jpeg(input)));
  const auto res = transport_->send(req);
  return parse(res.status, res.body);
}

RawAnswer FacePlusPlusBackend::parse(int status, const std::string& body) {
  if (status != 200) {
    std::string msg;
    try {
      msg = nlohmann::json::parse(body).value("error_message", "");
    } catch (const nlohmann::json::exception&) {
    }
    if (status >= 500 || msg.find("CONCURRENCY_LIMIT_EXCEEDED") != std::string::npos) {
      fail(ErrorCode::TransportError, "face++ HTTP " + std::to_string(status) + " " + msg);
    }
    if (status == 401 || msg.find("AUTHENTICATION_ERROR") != std::string::npos ||
        msg.find("AUTHORIZATION_ERROR") != std::string::npos) {
      fail(ErrorCode::AuthError, "face++ rejected credentials: " + msg);
    }
    fail(ErrorCode::BadResponse, "face++ HTTP " + std::to_string(status) + " " + msg);
  }
  const auto j = parse_body(body);
  if (!j.contains("faces") || !j["faces"].is_array()) {
    fail(ErrorCode::BadResponse, "face++ response lacks faces");
  }
  const auto& faces = j["faces"];
  if (faces.empty()) fail(ErrorCode::FaceNotDetected, "no face in image");
  const nlohmann::json* best = nullptr;
  double best_area = -1;
  for (const auto& f : faces) {
    const auto r = f.value("face_rectangle", nlohmann::json::object());
    const double area = r.value("width", 0.0) * r.value("height", 0.0);
    if (area > best_area) {
      best_area = area;
      best = &f;
    }
  }
  const auto attrs = best->value("attributes", nlohmann::json::object());
  if (!attrs.contains("gender")) fail(ErrorCode::BadResponse, "face lacks gender attribute");
  return {canonical_gender(attrs["gender"].at("value").get<std::string>()), std::nullopt};
}

// --- Service --------------------------------------------------------------------

nlohmann::json to_json_line(const CallLogEntry& e) {
  return {{"backend", e.backend},   {"record_id", e.record_id}, {"content_hash", e.content_hash},
          {"cache_hit", e.cache_hit}, {"attempts", e.attempts}, {"outcome", e.outcome},
          {"latency_ms", e.latency_ms}};
}

PredictionService::PredictionService(std::shared_ptr<Backend> backend,
                                     std::shared_ptr<PredictionCache> cache,
                                     std::shared_ptr<Clock> clock, ServiceOptions options)
    : backend_(std::move(backend)),
      cache_(std::move(cache)),
      clock_(clock ? std::move(clock) : std::make_shared<SystemClock>()),
      options_(options) {
  const auto& d = backend_->descriptor();
  d.validate();
  if (d.rate_limit > 0) limiter_ = std::make_unique<RateLimiter>(d.rate_limit, *clock_);
}

long PredictionService::backend_calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::vector<CallLogEntry> PredictionService::call_log() const {
  std::lock_guard lock(mu_);
  return log_;
}

bool PredictionService::auth_failed() const {
  std::lock_guard lock(mu_);
  return auth_failed_;
}

void PredictionService::log(CallLogEntry entry) {
  std::lock_guard lock(mu_);
  log_.push_back(std::move(entry));
}

namespace {

std::string outcome_of(const Prediction& p) {
  if (p.label) return *p.label;
  return p.error ? std::string(to_string(*p.error)) : "unknown";
}

}  // namespace

Prediction PredictionService::compute(const FaceRecord& record, const ImageBuffer& image,
                                      const std::vector<std::uint8_t>& bytes,
                                      const std::string& hash, int& attempts) {
  const auto& d = backend_->descriptor();
  Prediction p;
  p.backend = d.name;
  p.version = d.version;
  p.content_hash = hash;
  // Until one call has come back without an auth rejection, calls run one at
  // a time so a bad credential costs a single request.
  std::unique_lock probe(probe_mu_, std::defer_lock);
  if (!probed_.load()) probe.lock();
  for (int attempt = 0;; ++attempt) {
    if (auth_failed()) {
      p.error = ErrorCode::AuthError;
      p.message = "backend credentials were rejected earlier in this run";
      return p;
    }
    if (limiter_) limiter_->acquire();
    {
      std::lock_guard lock(mu_);
      ++calls_;
    }
    ++attempts;
    const double t0 = clock_->now();
    try {
      const auto answer = backend_->infer({record, image, bytes});
      p.latency_ms = (clock_->now() - t0) * 1000.0;
      probed_ = true;
      p.label = answer.label;
      p.confidence = answer.confidence;
      if (p.confidence && !(*p.confidence >= 0.0 && *p.confidence <= 1.0)) {
        p.label.reset();
        p.confidence.reset();
        p.error = ErrorCode::BadResponse;
        p.message = "confidence outside [0, 1]";
      }
      return p;
    } catch (const Error& e) {
      p.latency_ms = (clock_->now() - t0) * 1000.0;
      p.error = e.code();
      p.message = e.what();
      if (e.code() == ErrorCode::AuthError) {
        std::lock_guard lock(mu_);
        auth_failed_ = true;
        return p;
      }
      probed_ = true;
      if (e.code() == ErrorCode::TransportError && attempt < options_.max_retries) {
        clock_->sleep_for(options_.backoff_seconds * std::pow(2.0, attempt));
        continue;
      }
      return p;
    }
  }
}

Prediction PredictionService::predict(const FaceRecord& record, const ImageSource& source) {
  const auto& d = backend_->descriptor();
  CallLogEntry entry{d.name, record.record_id, "", false, 0, "", 0};
  const double t0 = clock_->now();
  auto finish = [&](Prediction p) {
    entry.outcome = outcome_of(p);
    entry.content_hash = p.content_hash;
    entry.latency_ms = (clock_->now() - t0) * 1000.0;
    log(entry);
    return p;
  };

  std::vector<std::uint8_t> bytes;
  try {
    bytes = source.bytes(record);
  } catch (const Error& e) {
    Prediction p;
    p.backend = d.name;
    p.version = d.version;
    p.error = ErrorCode::TransportError;
    p.message = std::string("image unreadable: ") + e.what();
    return finish(p);
  }
  const std::string hash = digest::sha256_hex(bytes);

  if (cache_) {
    if (auto hit = cache_->lookup(hash, d)) {
      hit->cache_hit = true;
      hit->content_hash = hash;
      entry.cache_hit = true;
      return finish(*hit);
    }
  }

  std::promise<Prediction> promise;
  {
    std::unique_lock lock(mu_);
    if (auto it = inflight_.find(hash); it != inflight_.end()) {
      auto fut = it->second;
      lock.unlock();
      auto shared = fut.get();
      shared.cache_hit = true;
      entry.cache_hit = true;
      return finish(shared);
    }
    inflight_.emplace(hash, promise.get_future().share());
  }

  Prediction p;
  try {
    const ImageBuffer image = decode_image(bytes);
    p = compute(record, image, bytes, hash, entry.attempts);
  } catch (const Error& e) {
    p = Prediction{};
    p.backend = d.name;
    p.version = d.version;
    p.content_hash = hash;
    p.error = e.code() == ErrorCode::UnreadableImage ? ErrorCode::TransportError : e.code();
    p.message = e.what();
  }
  const bool cacheable = p.ok() || p.face_not_detected();
  if (cache_ && cacheable) cache_->store(hash, d, p);
  promise.set_value(p);
  {
    std::lock_guard lock(mu_);
    inflight_.erase(hash);
  }
  return finish(p);
}

std::vector<Prediction> PredictionService::predict_batch(const std::vector<FaceRecord>& records,
                                                         const ImageSource& source) {
  std::vector<Prediction> out(records.size());
  if (records.empty()) return out;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      out[i] = predict(records[i], source);
    }
  };
  const std::size_t n_workers =
      std::min<std::size_t>(records.size(), static_cast<std::size_t>(std::max(1, options_.parallelism)));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_workers; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  return out;
}

}  // namespace frsaudit::backends
