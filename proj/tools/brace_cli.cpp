#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "brace/service.hpp"
#include "brace/service_http.hpp"
#include "brace/workflow.hpp"

using namespace brace;
using nlohmann::json;

namespace {

struct Flags {
  std::string config;
  std::string checkpoint;
  std::string attribute;
  std::optional<double> s;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string report;
  std::string selector;
  std::string prompt;
  std::size_t max_tokens = 32;
  double temperature = 1.0;
  std::size_t top_k = 0;
  std::string shape;
  bool all = false;
  std::string grid = "-2..2";
  std::string markers;
  std::string bind;
  std::string attributes_dir;
  std::size_t max_in_flight = 4;
};

Model<float> load_model(const std::string& path) {
  if (path.empty()) throw Error("--checkpoint is required");
  if (!std::filesystem::exists(path)) throw Error("checkpoint not found: " + path);
  return load_checkpoint<float>(path);
}

void write_out(const std::string& path, const std::string& content) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write output: " + path);
  out << content;
}

void warn_if_untrained(const Model<float>& m) {
  if (steering_untrained(m))
    std::cerr << "warning: steering projectors are untrained; steering has no effect\n";
}

std::optional<SteeringInput<float>> steering_for(const Model<float>& m, const Flags& f) {
  if (f.attribute.empty()) {
    if (f.s && *f.s != 0.0) throw Error("--s needs --attribute");
    return std::nullopt;
  }
  if (!m.has_steering()) throw Error("checkpoint has no steering projectors; run steer-train first");
  warn_if_untrained(m);
  return m.encode_attribute(find_attribute(m, f.attribute)).steer(static_cast<float>(f.s.value_or(0.0)));
}

std::string stage_summary(const StageResult& r, const Model<float>& m) {
  std::ostringstream os;
  os.precision(9);
  os << "selector\t" << to_string(r.report.selector) << "\n"
     << "steps\t" << r.report.total_steps << "\n"
     << "trainable\t" << count_trainable(m) << "\n"
     << "final_loss\t" << (r.report.steps.empty() ? 0.0 : r.report.steps.back().loss) << "\n"
     << "val_ppl_before\t" << r.val_ppl_before << "\n"
     << "val_ppl_after\t" << r.val_ppl_after << "\n";
  return os.str();
}

void finish_stage(const Flags& f, const StageResult& r, const Model<float>& m) {
  if (f.out.empty()) throw Error("--out is required");
  save_checkpoint(m, f.out);
  if (!f.report.empty()) r.report.save(f.report);
  std::cout << stage_summary(r, m);
}

int cmd_train(const Flags& f) {
  Experiment e = Experiment::load(f.config);
  TrainConfig cfg = e.train;
  if (!f.selector.empty()) cfg.selector = parse_selector(f.selector);
  if (cfg.selector == Selector::backbone) cfg = e.pretrain;
  if (f.seed) cfg.seed = *f.seed;
  const Corpora c = load_corpora(e.data);
  Model<float> m = f.checkpoint.empty() ? new_model(e, c) : load_model(f.checkpoint);
  if (f.checkpoint.empty() && cfg.selector != Selector::backbone)
    std::cerr << "warning: no --checkpoint; fine-tuning a randomly initialized backbone\n";
  const auto r = run_train(m, e, cfg, c);
  finish_stage(f, r, m);
  return 0;
}

int cmd_steer_train(const Flags& f) {
  Experiment e = Experiment::load(f.config);
  if (f.seed) e.steer.seed = *f.seed;
  Model<float> m = load_model(f.checkpoint);
  const Corpora c = load_corpora(e.data);
  const auto r = run_steer_train(m, e, c, attribute_sets(e.data));
  finish_stage(f, r, m);
  return 0;
}

int cmd_eval(const Flags& f) {
  const Experiment e = Experiment::load(f.config);
  const Model<float> m = load_model(f.checkpoint);
  const auto steer = steering_for(m, f);
  const Corpora c = load_corpora(e.data);
  const auto r = run_eval(m, e, c, steer ? &*steer : nullptr, f.seed.value_or(0));
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j = {{"perplexity", r.perplexity}, {"mean_nll", r.mean_nll},  {"tokens", r.tokens},
            {"dist_1", num(r.dist[0])},   {"dist_2", num(r.dist[1])}, {"dist_3", num(r.dist[2])},
            {"samples", r.samples}};
  std::cout.precision(9);
  std::cout << "perplexity\t" << r.perplexity << "\nmean_nll\t" << r.mean_nll << "\ntokens\t"
            << r.tokens << "\n";
  for (int k = 0; k < 3; ++k) std::cout << "dist_" << k + 1 << "\t" << r.dist[k] << "\n";
  write_out(f.out, j.dump(2) + "\n");
  return 0;
}

int cmd_generate(const Flags& f) {
  const Model<float> m = load_model(f.checkpoint);
  const auto steer = steering_for(m, f);
  const std::uint64_t seed = f.seed.value_or(0);
  const auto g = generate(m, f.prompt, {f.temperature, f.top_k, f.max_tokens, seed},
                          steer ? &*steer : nullptr);
  std::cout << g.text << "\n";
  json j = {{"text", g.text},
            {"token_count", g.ids.size()},
            {"applied_s", f.s.value_or(0.0)},
            {"attribute_used", f.attribute.empty() ? json(nullptr) : json(f.attribute)},
            {"seed_used", seed},
            {"ids", g.ids},
            {"logprobs", g.logprobs}};
  write_out(f.out, j.dump(2) + "\n");
  return 0;
}

int cmd_count_params(const Flags& f) {
  const ModelShape shape = ModelShape::parse(f.shape);
  std::string text;
  if (f.all) {
    for (Selector s : {Selector::brace, Selector::brace_steering, Selector::lora,
                       Selector::ablation_no_rel}) {
      text += to_string(s) + "\t" + format_count(count_params(shape, s)) + "\n";
    }
  } else {
    const Selector s = f.selector.empty() ? Selector::brace : parse_selector(f.selector);
    text = format_count(count_params(shape, s)) + "\n";
  }
  std::cout << text;
  write_out(f.out, text);
  return 0;
}

int cmd_sweep(const Flags& f) {
  if (f.attribute.empty()) throw Error("--attribute is required");
  const Experiment e = Experiment::load(f.config);
  const Model<float> m = load_model(f.checkpoint);
  if (!m.has_steering()) throw Error("checkpoint has no steering projectors; run steer-train first");
  warn_if_untrained(m);
  const auto grid = parse_grid(f.grid);
  const auto curve = run_sweep(m, f.attribute, f.markers, grid, e.data.prompts);
  const std::string table = format_sweep(grid, curve);
  std::cout << table;
  write_out(f.out, table);
  return 0;
}

int cmd_serve(const Flags& f) {
  Model<float> m = load_model(f.checkpoint);
  auto sets = f.attributes_dir.empty() ? m.attribute_sets() : load_attribute_dir(f.attributes_dir);
  if (!m.has_steering()) sets.clear();
  else warn_if_untrained(m);
  GenerationService<float> svc(std::move(m), sets, {.max_in_flight = f.max_in_flight});
  const BindAddress addr = BindAddress::resolve(f.bind);
  httplib::Server server;
  mount(server, svc);
  std::cerr << "listening on " << addr.host << ":" << addr.port << std::endl;
  if (!server.listen(addr.host, addr.port))
    throw Error("cannot bind " + addr.host + ":" + std::to_string(addr.port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Brace: relevance-augmented fine-tuning and attribute steering"};
  app.require_subcommand(1);
  Flags f;

  auto config = [&](CLI::App* c) { c->add_option("--config", f.config, "key = value config file"); };
  auto checkpoint = [&](CLI::App* c, bool required) {
    auto* o = c->add_option("--checkpoint", f.checkpoint, "model checkpoint");
    if (required) o->required();
  };
  auto seed = [&](CLI::App* c) { c->add_option("--seed", f.seed, "random seed"); };
  auto out = [&](CLI::App* c, const char* what) { c->add_option("--out", f.out, what); };
  auto steer = [&](CLI::App* c) {
    c->add_option("--attribute", f.attribute, "attribute set name");
    c->add_option("--s", f.s, "steering value");
  };

  auto* train = app.add_subcommand("train", "pretrain a backbone or fine-tune Brace/LoRA/ablation");
  config(train);
  checkpoint(train, false);
  seed(train);
  out(train, "output checkpoint");
  train->add_option("--selector", f.selector, "brace, lora, ablation_no_rel or backbone");
  train->add_option("--report", f.report, "per-step TSV report");

  auto* steer_train = app.add_subcommand("steer-train", "conditional training for attribute steering");
  config(steer_train);
  checkpoint(steer_train, true);
  seed(steer_train);
  out(steer_train, "output checkpoint");
  steer_train->add_option("--report", f.report, "per-step TSV report");

  auto* eval = app.add_subcommand("eval", "validation perplexity and Dist-n");
  config(eval);
  checkpoint(eval, true);
  steer(eval);
  seed(eval);
  out(eval, "JSON results");

  auto* gen = app.add_subcommand("generate", "sample a continuation");
  checkpoint(gen, true);
  steer(gen);
  seed(gen);
  out(gen, "JSON results");
  gen->add_option("--prompt", f.prompt, "prompt text")->required();
  gen->add_option("--max-tokens", f.max_tokens, "tokens to generate");
  gen->add_option("--temperature", f.temperature, "0 = greedy");
  gen->add_option("--top-k", f.top_k, "0 = full vocabulary");

  auto* count = app.add_subcommand("count-params", "exact trainable-parameter counts");
  count->add_option("--shape", f.shape, "e.g. L=32,d=4096,r=16")->required();
  count->add_option("--selector", f.selector, "brace (default), brace+steering, lora, ablation_no_rel");
  count->add_flag("--all", f.all, "every fine-tuning selector");
  out(count, "output text");

  auto* sweep = app.add_subcommand("sweep-s", "marker log-prob over a grid of steering values");
  config(sweep);
  checkpoint(sweep, true);
  sweep->add_option("--attribute", f.attribute, "attribute to steer with")->required();
  sweep->add_option("--markers", f.markers, "attribute whose tokens are scored (default: same)");
  sweep->add_option("--grid", f.grid, "lo..hi[:step] or a,b,c");
  out(sweep, "TSV table");

  auto* serve = app.add_subcommand("serve", "HTTP generation service");
  checkpoint(serve, true);
  serve->add_option("--bind", f.bind, "host:port (BRACE_BIND overrides)");
  serve->add_option("--attributes", f.attributes_dir, "directory of attribute lists");
  serve->add_option("--max-in-flight", f.max_in_flight, "concurrent generations before 429");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(f);
    if (*steer_train) return cmd_steer_train(f);
    if (*eval) return cmd_eval(f);
    if (*gen) return cmd_generate(f);
    if (*count) return cmd_count_params(f);
    if (*sweep) return cmd_sweep(f);
    if (*serve) return cmd_serve(f);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
