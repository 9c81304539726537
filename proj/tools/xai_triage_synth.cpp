// xai-triage-synth: writes a synthetic shell corpus (images, masks, manifest)
// and a base model whose head was fit on the imbalanced train split.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xai_triage/synthetic.hpp"

int main(int argc, char** argv) {
  namespace syn = xai_triage::synthetic;
  CLI::App app{"Generate a synthetic insulator-shell corpus"};
  syn::CorpusSpec spec;
  std::string out;
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--train", spec.train_counts, "train shells per class (broken flash healthy)")
      ->expected(3);
  app.add_option("--test", spec.test_counts, "test shells per class (broken flash healthy)")
      ->expected(3);
  app.add_option("--seed", spec.seed, "corpus seed");
  app.add_option("--blur-fraction", spec.blur_fraction, "share of blurred shells per class")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--size", spec.params.size, "shell edge in pixels")->check(CLI::Range(12, 256));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << nlohmann::json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 2;
  }
  try {
    const syn::WrittenCorpus c = syn::write_corpus(out, spec);
    std::cout << nlohmann::ordered_json{{"manifest", c.manifest.string()},
                                        {"model", c.model.string()},
                                        {"train", c.train},
                                        {"test", c.test}}
                     .dump()
              << "\n";
  } catch (const xai_triage::Error& e) {
    std::cerr << nlohmann::json{{"error", {{"kind", to_string(e.kind())}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return 1;
  }
  return 0;
}
