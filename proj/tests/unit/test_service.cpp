#include <gtest/gtest.h>

#include <thread>

#include <json.hpp>

#include "brace/checkpoint.hpp"
#include "brace/service.hpp"
#include "brace/service_http.hpp"
#include "helpers.hpp"

using nlohmann::json;

namespace {

brace::Model<float> service_model() {
  brace::Rng rng(91);
  auto m = testing_util::tiny_model<float>(91);
  m.attach_brace({.rank = 4});
  m.attach_steering();
  m.freeze_backbone();
  testing_util::randomize(m, brace::ParamGroup::steer_weight, rng, 0.3);
  return m;
}

std::vector<brace::AttributeSet> sets() {
  return {{"positive", {"great", "lovely"}}, {"negative", {"bad", "grim"}}};
}

}  // namespace

TEST(Service, HealthAndAttributes) {
  brace::GenerationService<float> svc(service_model(), sets());
  auto h = json::parse(svc.health().body);
  EXPECT_EQ(h["status"], "ok");
  EXPECT_EQ(h["model"]["d"], 16);
  EXPECT_EQ(h["model"]["brace_rank"], 4);
  auto a = json::parse(svc.attributes().body);
  EXPECT_EQ(a["attributes"], json::array({"positive", "negative"}));
}

TEST(Service, IdenticalSeededRequestsAreByteIdentical) {
  brace::GenerationService<float> svc(service_model(), sets());
  const std::string body = R"({"prompt":"It is","s":0,"seed":7})";
  auto r1 = svc.generate(body), r2 = svc.generate(body);
  ASSERT_EQ(r1.status, 200) << r1.body;
  EXPECT_EQ(r1.body, r2.body);
  auto j = json::parse(r1.body);
  EXPECT_EQ(j["applied_s"], 0.0);
  EXPECT_TRUE(j["attribute_used"].is_null());
  EXPECT_EQ(j["seed_used"], 7);
  // Default cap is 32 new tokens; eos may end it sooner.
  auto direct = brace::generate(svc.model(), "It is", {1.0, 0, 32, 7});
  EXPECT_EQ(j["token_count"], direct.ids.size());
  EXPECT_LE(j["token_count"].get<int>(), 32);
  EXPECT_EQ(j["text"], direct.text);
  EXPECT_FALSE(j.contains("elapsed_ms"));
  EXPECT_TRUE(r1.headers.count("X-Elapsed-Ms"));
  auto timed = json::parse(svc.generate(R"({"prompt":"It is","seed":7,"include_timing":true})").body);
  EXPECT_TRUE(timed["elapsed_ms"].is_number());
  EXPECT_EQ(timed["text"], j["text"]);
}

TEST(Service, ResponsesMatchDirectLibraryCalls) {
  auto m = service_model();
  brace::GenerationService<float> svc(service_model(), sets());
  auto j = json::parse(
      svc.generate(R"({"prompt":"a ","attribute":"positive","s":2.5,"seed":3,"max_tokens":9,"top_k":4})")
          .body);
  auto enc = m.encode_attribute(sets()[0]);
  auto in = enc.steer(2.5f);
  brace::SamplingOptions o{1.0, 4, 9, 3};
  EXPECT_EQ(j["text"], brace::generate(m, "a ", o, &in).text);
  EXPECT_EQ(j["attribute_used"], "positive");
  EXPECT_EQ(j["applied_s"], 2.5);
}

TEST(Service, ZeroSteeringMatchesNoAttribute) {
  brace::GenerationService<float> svc(service_model(), sets());
  auto a = json::parse(svc.generate(R"({"prompt":"x","attribute":"negative","s":0,"seed":5})").body);
  auto b = json::parse(svc.generate(R"({"prompt":"x","seed":5})").body);
  EXPECT_EQ(a["text"], b["text"]);
}

TEST(Service, BadRequestsReturn400) {
  brace::GenerationService<float> svc(service_model(), sets());
  const std::vector<std::string> bad = {
      "not json",
      "[1,2]",
      R"({"s":1})",
      R"({"prompt":3})",
      R"({"prompt":"a","attribute":"sarcastic"})",
      R"({"prompt":"a","max_tokens":0})",
      R"({"prompt":"a","max_tokens":100000})",
      R"({"prompt":"a","s":"big"})",
      R"({"prompt":"a","temperature":-1})",
      R"({"prompt":"a","seed":-4})",
      R"({"prompt":"a","colour":"red"})",
      R"({"prompt":"café"})"};
  for (const auto& body : bad) {
    auto r = svc.generate(body);
    EXPECT_EQ(r.status, 400) << body;
    EXPECT_TRUE(json::parse(r.body).contains("error")) << body;
  }
  auto r = svc.generate(R"({"prompt":"a","attribute":"sarcastic"})");
  EXPECT_NE(json::parse(r.body)["error"].get<std::string>().find("sarcastic"), std::string::npos);
}

TEST(Service, MissingSeedStillReportsTheSeedUsed) {
  brace::GenerationService<float> svc(service_model(), sets());
  auto j = json::parse(svc.generate(R"({"prompt":"a","max_tokens":4})").body);
  const auto seed = j["seed_used"].get<std::uint64_t>();
  auto again = json::parse(
      svc.generate(json({{"prompt", "a"}, {"max_tokens", 4}, {"seed", seed}}).dump()).body);
  EXPECT_EQ(again["text"], j["text"]);
}

TEST(Service, OverloadReturns429) {
  brace::GenerationService<float> none(service_model(), sets(), {.max_in_flight = 0});
  EXPECT_EQ(none.generate(R"({"prompt":"a"})").status, 429);
  EXPECT_EQ(none.in_flight(), 0u);

  brace::GenerationService<float> one(service_model(), sets(), {.max_in_flight = 1});
  std::vector<int> status(8);
  std::vector<std::thread> pool;
  for (int i = 0; i < 8; ++i)
    pool.emplace_back([&, i] {
      status[i] = one.generate(R"({"prompt":"a","max_tokens":60,"seed":1})").status;
    });
  for (auto& t : pool) t.join();
  for (int s : status) EXPECT_TRUE(s == 200 || s == 429) << s;
  EXPECT_EQ(one.in_flight(), 0u);
}

TEST(Service, NeverMutatesTheModel) {
  brace::GenerationService<float> svc(service_model(), sets());
  const auto before = brace::checkpoint_digest(brace::serialize_checkpoint(svc.model()));
  for (int i = 0; i < 5; ++i) {
    svc.generate(json({{"prompt", "q"}, {"attribute", "positive"}, {"s", i - 2}, {"seed", i}}).dump());
    svc.generate("garbage");
  }
  EXPECT_EQ(brace::checkpoint_digest(brace::serialize_checkpoint(svc.model())), before);
}

TEST(Service, AttributesWithoutSteeringAreRejected) {
  EXPECT_THROW(brace::GenerationService<float>(testing_util::tiny_model<float>(92), sets()),
               brace::Error);
  brace::GenerationService<float> plain(testing_util::tiny_model<float>(92), {});
  EXPECT_EQ(json::parse(plain.attributes().body)["attributes"], json::array());
}

TEST(BindAddress, ParsingAndPrecedence) {
  auto a = brace::BindAddress::parse("0.0.0.0:9000");
  EXPECT_EQ(a.host, "0.0.0.0");
  EXPECT_EQ(a.port, 9000);
  EXPECT_EQ(brace::BindAddress::parse(":81").host, "127.0.0.1");
  EXPECT_EQ(brace::BindAddress::parse("82").port, 82);
  EXPECT_THROW(brace::BindAddress::parse("host:port"), brace::ConfigError);
  EXPECT_THROW(brace::BindAddress::parse("h:70000"), brace::ConfigError);
  ::unsetenv("BRACE_BIND");
  EXPECT_EQ(brace::BindAddress::resolve("").port, 8080);
  EXPECT_EQ(brace::BindAddress::resolve(":7000").port, 7000);
  ::setenv("BRACE_BIND", "10.0.0.1:7100", 1);
  auto e = brace::BindAddress::resolve(":7000");
  EXPECT_EQ(e.host, "10.0.0.1");
  EXPECT_EQ(e.port, 7100);
  ::unsetenv("BRACE_BIND");
}
