#pragma once

// Transport-independent request handling for the generation service. The
// HTTP binding lives in service_http.hpp.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "brace/attributes.hpp"
#include "brace/generate.hpp"
#include "brace/model.hpp"

namespace brace {

struct ServiceResponse {
  int status = 200;
  std::string body;
  std::map<std::string, std::string> headers;
};

struct ServiceOptions {
  std::size_t max_in_flight = 4;
  std::size_t max_tokens_limit = 256;
};

struct GenerateRequest {
  std::string prompt;
  std::optional<std::string> attribute;
  double s = 0.0;
  std::size_t max_tokens = 32;
  double temperature = 1.0;
  std::size_t top_k = 0;
  std::optional<std::uint64_t> seed;
  bool include_timing = false;

  /// Throws Error with a client-facing message on malformed input.
  static GenerateRequest from_json(const std::string& body) {
    using nlohmann::json;
    json j;
    try {
      j = json::parse(body);
    } catch (const json::parse_error& e) {
      throw Error(std::string("malformed JSON body: ") + e.what());
    }
    if (!j.is_object()) throw Error("request body must be a JSON object");
    GenerateRequest r;
    static const std::vector<std::string> known = {"prompt", "attribute", "s", "max_tokens",
                                                   "temperature", "top_k", "seed",
                                                   "include_timing"};
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
        throw Error("unknown field: " + it.key());
      }
    }
    if (!j.contains("prompt") || !j["prompt"].is_string()) {
      throw Error("field 'prompt' is required and must be a string");
    }
    r.prompt = j["prompt"].get<std::string>();
    if (j.contains("attribute") && !j["attribute"].is_null()) {
      if (!j["attribute"].is_string()) throw Error("field 'attribute' must be a string or null");
      r.attribute = j["attribute"].get<std::string>();
    }
    auto number = [&](const char* key, double& out) {
      if (!j.contains(key)) return;
      if (!j[key].is_number()) throw Error(std::string("field '") + key + "' must be a number");
      out = j[key].get<double>();
      if (!std::isfinite(out)) throw Error(std::string("field '") + key + "' must be finite");
    };
    auto count = [&](const char* key, std::size_t& out) {
      if (!j.contains(key)) return;
      if (!j[key].is_number_integer() || j[key].get<long long>() < 0) {
        throw Error(std::string("field '") + key + "' must be a non-negative integer");
      }
      out = static_cast<std::size_t>(j[key].get<long long>());
    };
    number("s", r.s);
    number("temperature", r.temperature);
    count("max_tokens", r.max_tokens);
    count("top_k", r.top_k);
    if (j.contains("seed") && !j["seed"].is_null()) {
      if (!j["seed"].is_number_integer() || j["seed"].get<long long>() < 0) {
        throw Error("field 'seed' must be a non-negative integer");
      }
      r.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("include_timing")) {
      if (!j["include_timing"].is_boolean()) throw Error("field 'include_timing' must be a boolean");
      r.include_timing = j["include_timing"].get<bool>();
    }
    if (r.max_tokens < 1) throw Error("max_tokens must be at least 1");
    if (r.temperature < 0.0) throw Error("temperature must be non-negative");
    return r;
  }
};

template <typename T>
class GenerationService {
 public:
  GenerationService(Model<T> model, std::vector<AttributeSet> sets, ServiceOptions opt = {})
      : model_(std::move(model)), opt_(opt) {
    model_.refresh_caches();
    if (model_.has_steering()) {
      for (auto& set : sets) encoded_.emplace(set.name, model_.encode_attribute(set));
    } else if (!sets.empty()) {
      throw Error("attribute sets supplied but the checkpoint has no steering projectors");
    }
    for (auto& set : sets) names_.push_back(set.name);
  }

  const Model<T>& model() const { return model_; }
  std::size_t in_flight() const { return in_flight_.load(); }

  ServiceResponse health() const {
    const auto& c = model_.config();
    nlohmann::json m = {{"n_layers", c.n_layers},  {"d", c.d},
                        {"d_m", c.d_m},            {"n_heads", c.n_heads},
                        {"vocab_size", c.vocab_size}, {"max_seq", c.max_seq},
                        {"brace", model_.has_brace()}, {"steering", model_.has_steering()}};
    if (model_.has_brace()) m["brace_rank"] = model_.brace_config().rank;
    return json_response(200, {{"status", "ok"}, {"model", m}});
  }

  ServiceResponse attributes() const {
    return json_response(200, {{"attributes", names_}});
  }

  ServiceResponse generate(const std::string& body) {
    InFlight slot(in_flight_);
    if (slot.count > opt_.max_in_flight) {
      return error(429, "server busy: too many concurrent generations");
    }
    const auto start = std::chrono::steady_clock::now();
    GenerateRequest req;
    try {
      req = GenerateRequest::from_json(body);
    } catch (const Error& e) {
      return error(400, e.what());
    }
    if (req.max_tokens > opt_.max_tokens_limit) {
      return error(400, detail::concat("max_tokens exceeds the limit of ", opt_.max_tokens_limit));
    }
    std::optional<SteeringInput<T>> steer;
    if (req.attribute) {
      auto it = encoded_.find(*req.attribute);
      if (it == encoded_.end()) return error(400, "unknown attribute: " + *req.attribute);
      steer = it->second.steer(static_cast<T>(req.s));
    }
    const std::uint64_t seed = req.seed ? *req.seed : random_seed();
    SamplingOptions so{req.temperature, req.top_k, req.max_tokens, seed};
    Generation g;
    try {
      g = brace::generate(model_, req.prompt, so, steer ? &*steer : nullptr);
    } catch (const Error& e) {
      return error(400, e.what());
    }
    const double elapsed =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    nlohmann::json out = {{"text", g.text},
                          {"token_count", g.ids.size()},
                          {"applied_s", req.s},
                          {"attribute_used", req.attribute ? nlohmann::json(*req.attribute)
                                                           : nlohmann::json(nullptr)},
                          {"seed_used", seed}};
    if (req.include_timing) out["elapsed_ms"] = elapsed;
    auto resp = json_response(200, out);
    resp.headers["X-Elapsed-Ms"] = detail::concat(elapsed);
    return resp;
  }

 private:
  struct InFlight {
    std::atomic<std::size_t>& c;
    std::size_t count;
    explicit InFlight(std::atomic<std::size_t>& ctr) : c(ctr), count(++ctr) {}
    ~InFlight() { --c; }
  };

  static std::uint64_t random_seed() {
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32 | rd()) & 0x7fffffffffffffffULL;
  }

  static ServiceResponse json_response(int status, const nlohmann::json& j) {
    return {status, j.dump(), {{"Content-Type", "application/json"}}};
  }

  static ServiceResponse error(int status, const std::string& msg) {
    return json_response(status, {{"error", msg}});
  }

  Model<T> model_;
  ServiceOptions opt_;
  std::map<std::string, EncodedAttribute<T>> encoded_;
  std::vector<std::string> names_;
  std::atomic<std::size_t> in_flight_{0};
};

}  // namespace brace
