#pragma once

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "brace/workflow.hpp"

namespace fixtures {

namespace fs = std::filesystem;

inline fs::path dir() {
  fs::path d = BRACE_FIXTURE_DIR;
  fs::create_directories(d);
  return d;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int status = -1;
  std::string out;
  std::string err;
};

// Runs brace_cli with `args` through the shell.
inline Run cli(const std::string& args) {
  static int counter = 0;
  const fs::path err = dir() / ("stderr_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  const std::string cmd = std::string(BRACE_CLI_PATH) + " " + args + " 2>" + err.string();
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  r.err = slurp(err);
  fs::remove(err);
  return r;
}

inline std::string demo_config(const std::string& name) {
  return std::string(BRACE_SOURCE_DIR) + "/demo/" + name;
}

// Pretrain, Brace fine-tune and steer-train on the word-level desk config.
// Cached across test processes; about half a minute the first time.
inline fs::path steered_words_checkpoint() {
  const fs::path path = dir() / "steer_words.ckpt";
  if (fs::exists(path)) return path;
  const auto e = brace::Experiment::load(demo_config("desk_words.conf"));
  const auto c = brace::load_corpora(e.data);
  auto m = brace::new_model(e, c);
  brace::run_train(m, e, e.pretrain, c);
  brace::run_train(m, e, e.train, c);
  brace::run_steer_train(m, e, c, brace::attribute_sets(e.data));
  brace::save_checkpoint(m, path);
  return path;
}

}  // namespace fixtures
