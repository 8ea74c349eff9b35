#include <CLI11.hpp>
#include <iostream>

#include "isostruct/commands.hpp"
#include "isostruct/error.hpp"
#include "isostruct/parallel.hpp"

using namespace isostruct;

namespace {

void add_common(CLI::App* cmd, CommonOptions& common) {
  cmd->add_option("--seed", common.seed, "Random seed")->default_val(0);
  cmd->add_option("--config", common.config, "JSON configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--out", common.out, "Output path")->required();
  cmd->add_option("--threads", common.threads, "Worker threads")->default_val(1)->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Molecular structure from rotational spectroscopy observables"};
  app.require_subcommand(1);

  CommonOptions common;

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Observation JSON from an XYZ structure");
  add_common(simulate, common);
  simulate->add_option("--xyz", sim.xyz, "Input structure")->required()->check(CLI::ExistingFile);
  simulate->add_option("--noise", sim.noise, "Relative noise on rotational constants")->default_val(0.0);

  fs::path kr_obs;
  auto* kraitchman = app.add_subcommand("kraitchman", "Substitution coordinates from an observation");
  add_common(kraitchman, common);
  kraitchman->add_option("--observation", kr_obs, "Observation JSON")->required()->check(CLI::ExistingFile);

  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "Train the denoiser on a directory of XYZ files");
  add_common(train, common);
  train->add_option("--data", train_opts.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--resume", train_opts.resume, "Checkpoint to resume")->check(CLI::ExistingFile);
  train->add_option("--steps", train_opts.steps, "Total optimizer steps (overrides config)");
  train->add_option("--log", train_opts.log, "Loss log (JSON lines)");

  SampleOptions sample_opts;
  auto* sample = app.add_subcommand("sample", "Draw and rank K structures for an observation");
  add_common(sample, common);
  sample->add_option("--checkpoint", sample_opts.checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  sample->add_option("--observation", sample_opts.observation, "Observation JSON")->required()->check(CLI::ExistingFile);
  sample->add_option("-k,--k", sample_opts.k, "Number of samples")->default_val(1)->check(CLI::PositiveNumber);
  sample->add_flag("!--raw-params", sample_opts.use_ema, "Use raw parameters instead of the EMA copy");

  GaOptions ga_opts;
  auto* ga = app.add_subcommand("ga", "Genetic-algorithm structure search");
  add_common(ga, common);
  ga->add_option("--observation", ga_opts.observation, "Observation JSON")->required()->check(CLI::ExistingFile);
  auto* hist_opt = ga->add_option("--histogram", ga_opts.histogram, "Distance histogram JSON")->check(CLI::ExistingFile);
  ga->add_option("--corpus", ga_opts.corpus, "XYZ directory to build the histogram from")
      ->check(CLI::ExistingDirectory)
      ->excludes(hist_opt);

  EvaluateOptions eval_opts;
  auto* evaluate = app.add_subcommand("evaluate", "Connectivity and RMSD metrics for ranked predictions");
  add_common(evaluate, common);
  evaluate->add_option("--pred", eval_opts.pred, "Prediction directory")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--truth", eval_opts.truth, "Truth XYZ file or directory")->required()->check(CLI::ExistingPath);
  evaluate->add_option("--top-k", eval_opts.top_k, "Aggregate cut-offs")->default_str("1 5");

  GenDatasetOptions gen_opts;
  auto* gen = app.add_subcommand("gen-dataset", "Synthetic small-molecule corpus");
  add_common(gen, common);
  gen->add_option("--count", gen_opts.count, "Number of molecules (overrides config)");
  gen->add_option("--histogram-out", gen_opts.histogram_out, "Also write the heavy-atom distance histogram");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) command_simulate(common, sim);
    else if (*kraitchman) command_kraitchman(common, kr_obs);
    else if (*train) command_train(common, train_opts);
    else if (*sample) command_sample(common, sample_opts);
    else if (*ga) command_ga(common, ga_opts);
    else if (*evaluate) command_evaluate(common, eval_opts);
    else if (*gen) command_gen_dataset(common, gen_opts);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
