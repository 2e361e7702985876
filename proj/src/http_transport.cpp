#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "frsaudit/backends.hpp"

namespace frsaudit::backends {

HttpResponse HttplibTransport::send(const HttpRequest& request) {
  httplib::SSLClient client(request.host, 443);
  const auto secs = static_cast<time_t>(timeout_);
  client.set_connection_timeout(secs, 0);
  client.set_read_timeout(secs, 0);
  client.set_write_timeout(secs, 0);

  httplib::Headers headers;
  std::string content_type = "application/octet-stream";
  for (const auto& [k, v] : request.headers) {
    if (k == "Content-Type") content_type = v;
    else if (k != "host" && k != "Host") headers.emplace(k, v);
  }
  const std::string target = request.query.empty() ? request.path : request.path + "?" + request.query;
  httplib::Result res = request.method == "GET"
                            ? client.Get(target, headers)
                            : client.Post(target, headers, request.body, content_type);
  if (!res) {
    fail(ErrorCode::TransportError,
         "request to " + request.host + " failed: " + httplib::to_string(res.error()));
  }
  return {res->status, res->body};
}

}  // namespace frsaudit::backends
