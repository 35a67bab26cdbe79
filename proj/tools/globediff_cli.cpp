// globediff command-line entry point.
//
//   globediff gen-data      --config run.cfg --out data.jsonl
//   globediff train         --config run.cfg --data data.jsonl --out model.ckpt
//   globediff sample        --checkpoint model.ckpt --x xs.jsonl --n 1000 --out samples.jsonl
//   globediff verify-bounds --checkpoint model.ckpt --config run.cfg --out report
//   globediff gradcheck     --dims 2,2,2,2 --seed 0
//
// Exit codes: 0 success, 1 usage/config error, 2 numerical failure,
// 3 bound violation (verify-bounds).

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "globediff/commands.hpp"

namespace gd = globediff;
namespace cli = globediff::cli;

namespace {

gd::RunConfig resolve_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  gd::RunConfig cfg = path.empty() ? gd::RunConfig{} : gd::load_config(path);
  if (seed) cfg.seed = *seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-conditioned diffusion for one-to-many state inference"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path, history_path, ckpt_path, x_path, hist_path;
  std::optional<std::uint64_t> seed;
  std::size_t n_per_x = 100;
  std::vector<std::size_t> dims{2, 2, 2, 2};
  std::size_t hidden = 4;

  auto* gen = app.add_subcommand("gen-data", "Generate a JSON Lines dataset from the configured task");
  gen->add_option("--config", config_path, "Run config file (defaults when omitted)");
  gen->add_option("--out", out_path, "Output dataset path")->required();
  gen->add_option("--seed", seed, "Override the config seed");

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint plus loss history CSV");
  train->add_option("--config", config_path, "Run config file");
  train->add_option("--data", data_path, "Dataset produced by gen-data")->required();
  train->add_option("--out", out_path, "Output checkpoint path")->required();
  train->add_option("--history", history_path, "Loss history CSV (default: <out>.history.csv)");
  train->add_option("--seed", seed, "Override the config seed");

  auto* samp = app.add_subcommand("sample", "Draw states for each condition in a JSON Lines file");
  samp->add_option("--checkpoint", ckpt_path, "Checkpoint from train")->required();
  samp->add_option("--x", x_path, "Conditions file, one JSON array per line")->required();
  samp->add_option("--n", n_per_x, "Samples per condition");
  samp->add_option("--out", out_path, "Output samples path")->required();
  samp->add_option("--hist", hist_path, "Optional histogram CSV of the first coordinate");
  samp->add_option("--seed", seed, "Root seed (default 0)");

  auto* verify = app.add_subcommand("verify-bounds", "Evaluate the error bounds against the analytic task");
  verify->add_option("--checkpoint", ckpt_path, "Checkpoint from train")->required();
  verify->add_option("--config", config_path, "Run config describing the task");
  verify->add_option("--out", out_path, "Output prefix; writes <out>.csv and <out>.txt")->required();
  verify->add_option("--seed", seed, "Override the config seed");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of all analytic gradients");
  grad->add_option("--dims", dims, "d,d_x,d_z,K")->delimiter(',')->expected(4);
  grad->add_option("--hidden", hidden, "Hidden width of the tiny networks");
  grad->add_option("--seed", seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  return cli::run_guarded([&]() -> int {
    if (*gen) return cli::cmd_gen_data(resolve_config(config_path, seed), out_path, std::cout);
    if (*train) {
      if (history_path.empty()) history_path = out_path + ".history.csv";
      return cli::cmd_train(resolve_config(config_path, seed), data_path, out_path, history_path, std::cout);
    }
    if (*samp) return cli::cmd_sample(ckpt_path, x_path, n_per_x, seed.value_or(0), out_path, hist_path, std::cout);
    if (*verify) return cli::cmd_verify_bounds(ckpt_path, resolve_config(config_path, seed), out_path, std::cout);
    gd::TinyModelSpec spec;
    spec.state = dims[0];
    spec.cond = dims[1];
    spec.latent = dims[2];
    spec.num_steps = static_cast<int>(dims[3]);
    spec.hidden = hidden;
    return cli::cmd_gradcheck(spec, seed.value_or(0), std::cout);
  });
}
