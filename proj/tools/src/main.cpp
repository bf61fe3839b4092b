/*
 * Copyright 2026 The smatd Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "smatd/cli/commands.hpp"

namespace {

using smatd::cli::ExperimentConfig;
namespace fs = std::filesystem;

std::pair<std::string, std::string> split_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) {
    throw smatd::Error(smatd::ErrorKind::kUsage, "expected name=path, got '" + text + "'");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smatd: detect machine translations from surrogate decoder states"};
  app.require_subcommand(1);

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "experiment config (key = value)")->required();
  };

  fs::path ingest_input;
  auto* ingest = app.add_subcommand("ingest-validate", "validate a labeled JSONL dataset");
  ingest->add_option("input", ingest_input)->required();

  auto* extract = app.add_subcommand("extract", "populate the extraction cache");
  add_config(extract);
  auto* train_lm = app.add_subcommand("train-lm", "fine-tune the LM baseline");
  add_config(train_lm);
  auto* train = app.add_subcommand("train", "train detector replicates");
  add_config(train);

  std::vector<int> blocks;
  auto* sweep = app.add_subcommand("sweep", "per-block layer sweep");
  add_config(sweep);
  sweep->add_option("--blocks", blocks, "blocks to sweep (default: all)")->delimiter(',');

  smatd::cli::EvalOptions eval_opt;
  auto* eval = app.add_subcommand("eval", "score a test set with a trained model");
  eval->add_option("model", eval_opt.model_dir)->required();
  eval->add_option("test", eval_opt.test)->required();
  eval->add_option("--report", eval_opt.report)->required();
  eval->add_option("--predictions", eval_opt.predictions);
  eval->add_option("--cache", eval_opt.cache);

  smatd::cli::CrossEvalOptions cross_opt;
  std::vector<std::string> cross_models;
  auto* cross = app.add_subcommand("cross-eval", "evaluate every model on every test condition");
  cross->add_option("--model", cross_models, "name=model_dir")->required();
  cross->add_option("--test", cross_opt.tests)->required();
  cross->add_option("--report", cross_opt.report_json)->required();
  cross->add_option("--tsv", cross_opt.report_tsv);
  cross->add_option("--baseline", cross_opt.baseline, "model name to test against");
  cross->add_option("--iterations", cross_opt.iterations);
  cross->add_option("--cache", cross_opt.cache);

  smatd::cli::SigtestOptions sig_opt;
  auto* sig = app.add_subcommand("sigtest", "paired approximate randomization test");
  sig->add_option("a", sig_opt.predictions_a)->required();
  sig->add_option("b", sig_opt.predictions_b)->required();
  sig->add_option("--iterations", sig_opt.iterations);
  sig->add_option("--seed", sig_opt.seed);
  sig->add_option("--output", sig_opt.output);

  smatd::cli::PerplexityOptions ppl_opt;
  auto* ppl = app.add_subcommand("perplexity", "per-word perplexity under the surrogate");
  ppl->add_option("surrogate", ppl_opt.surrogate)->required();
  ppl->add_option("input", ppl_opt.input)->required();
  ppl->add_option("--output", ppl_opt.output)->required();

  smatd::cli::FilterOptions filter_opt;
  auto* filter = app.add_subcommand("filter", "keep pairs scored as human translations");
  filter->add_option("model", filter_opt.model_dir)->required();
  filter->add_option("input", filter_opt.input)->required();
  filter->add_option("--output", filter_opt.output)->required();
  filter->add_option("--threshold", filter_opt.threshold);
  filter->add_option("--report", filter_opt.report);
  filter->add_option("--cache", filter_opt.cache);

  std::vector<double> values;
  std::optional<fs::path> var_out;
  auto* var = app.add_subcommand("variability", "min/mean/max/sd over run accuracies");
  var->add_option("values", values)->required();
  var->add_option("--output", var_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : smatd::cli::kExitUsage;
  }

  try {
    auto config = [&] { return ExperimentConfig::load(config_path); };
    if (*ingest) return smatd::cli::cmd_ingest_validate(ingest_input, std::cout);
    if (*extract) return smatd::cli::cmd_extract(config(), std::cout);
    if (*train_lm) return smatd::cli::cmd_train_lm(config(), std::cout);
    if (*train) return smatd::cli::cmd_train(config(), std::cout);
    if (*sweep) return smatd::cli::cmd_sweep(config(), blocks, std::cout);
    if (*eval) return smatd::cli::cmd_eval(eval_opt, std::cout);
    if (*cross) {
      for (const auto& m : cross_models) {
        auto [name, dir] = split_assignment(m);
        cross_opt.models[name] = dir;
      }
      return smatd::cli::cmd_cross_eval(cross_opt, std::cout);
    }
    if (*sig) return smatd::cli::cmd_sigtest(sig_opt, std::cout);
    if (*ppl) return smatd::cli::cmd_perplexity(ppl_opt, std::cout);
    if (*filter) return smatd::cli::cmd_filter(filter_opt, std::cout);
    if (*var) return smatd::cli::cmd_variability(values, var_out, std::cout);
  } catch (const smatd::Error& e) {
    std::cerr << "smatd: " << e.what() << "\n";
    return smatd::cli::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "smatd: " << e.what() << "\n";
    return smatd::cli::kExitCompute;
  }
  return smatd::cli::kExitUsage;
}
