#pragma once

#include <cstdlib>
#include <string>
#include <utility>

#include <httplib.h>

#include "brace/error.hpp"
#include "brace/service.hpp"

namespace brace {

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8080;

  /// "host:port", ":port" or "port".
  static BindAddress parse(const std::string& text) {
    BindAddress b;
    const auto colon = text.rfind(':');
    std::string port = text;
    if (colon != std::string::npos) {
      if (colon > 0) b.host = text.substr(0, colon);
      port = text.substr(colon + 1);
    }
    try {
      std::size_t used = 0;
      b.port = std::stoi(port, &used);
      if (used != port.size() || b.port < 0 || b.port > 65535) throw std::out_of_range("port");
    } catch (const std::exception&) {
      throw ConfigError("invalid bind address: " + text);
    }
    return b;
  }

  /// BRACE_BIND beats the flag, which beats the default.
  static BindAddress resolve(const std::string& flag) {
    if (const char* env = std::getenv("BRACE_BIND"); env && *env) return parse(env);
    if (!flag.empty()) return parse(flag);
    return {};
  }
};

template <typename T>
void mount(httplib::Server& svr, GenerationService<T>& service) {
  auto send = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    for (const auto& [k, v] : r.headers)
      if (k != "Content-Type") res.set_header(k, v);
    res.set_content(r.body, "application/json");
  };
  svr.Get("/health", [&service, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.health());
  });
  svr.Get("/attributes", [&service, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.attributes());
  });
  svr.Post("/generate", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.generate(req.body));
  });
}

}  // namespace brace
