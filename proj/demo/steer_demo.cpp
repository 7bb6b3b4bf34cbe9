// Library walk-through: pretrain a tiny backbone, fine-tune Brace, train the
// steering path, then sample the same prompt at several strengths.
//
//   brace_demo [config]        (default: demo/desk_words.conf, ~30 s)

#include <cstdio>
#include <string>

#include "brace/workflow.hpp"

int main(int argc, char** argv) {
  const std::string path = argc > 1 ? argv[1] : "demo/desk_words.conf";
  try {
    const auto e = brace::Experiment::load(path);
    const auto corpora = brace::load_corpora(e.data);
    auto m = brace::new_model(e, corpora);

    brace::run_train(m, e, e.pretrain, corpora);
    const auto fine = brace::run_train(m, e, e.train, corpora);
    std::printf("brace: val ppl %.3f -> %.3f\n", fine.val_ppl_before, fine.val_ppl_after);

    const auto sets = brace::attribute_sets(e.data);
    brace::run_steer_train(m, e, corpora, sets);

    const auto& pos = brace::find_attribute(m, "positive");
    const auto enc = m.encode_attribute(pos);
    for (double s : {-2.0, 0.0, 2.0}) {
      const auto in = enc.steer(static_cast<float>(s));
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto g = brace::generate(m, "the movie was", {1.0, 0, 12, seed}, &in);
        const char* sep = g.text.empty() || g.text[0] == ' ' ? "" : " ";
        std::printf("s=%+.0f  the movie was%s%s\n", s, sep, g.text.c_str());
      }
    }
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 0;
}
