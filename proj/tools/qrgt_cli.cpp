#include "qrgt/qrgt.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace {

void put(qrgt::RawConfig& raw, const std::string& key, const std::string& value) {
  if (!value.empty()) raw[key] = value;
}

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = qrgt::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized PCA on the Stiefel manifold with Q-RGT and RGT"};
  app.require_subcommand(1);

  std::string config, preset, bits, algo, topology, n, t, alpha_hat, seed, max_epochs, ds_tol, out;
  std::string key, values;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "key = value config file");
    sub->add_option("--preset", preset, "fig2-synthetic or fig3-mnist");
    sub->add_option("--bits", bits, "quantizer bit width N");
    sub->add_option("--algo", algo, "qrgt or rgt");
    sub->add_option("--topology", topology, "ring, er, complete or edges");
    sub->add_option("--n", n, "number of agents");
    sub->add_option("--t", t, "consensus steps per epoch");
    sub->add_option("--alpha-hat", alpha_hat, "normalized step size");
    sub->add_option("--seed", seed, "64-bit run seed");
    sub->add_option("--max-epochs", max_epochs, "epoch cap");
    sub->add_option("--ds-tol", ds_tol, "early stop threshold on d_s");
    sub->add_option("--out", out, "output CSV path");
  };

  auto* run_cmd = app.add_subcommand("run", "run one configuration");
  add_common(run_cmd);
  auto* sweep_cmd = app.add_subcommand("sweep", "run one configuration per value of a key");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--key", key, "bits, alpha_hat, t, topology.p or n")->required();
  sweep_cmd->add_option("--values", values, "comma-separated values")->required();

  CLI11_PARSE(app, argc, argv);

  qrgt::RawConfig file;
  qrgt::RawConfig overrides;
  try {
    if (!config.empty()) file = qrgt::read_config_file(config);
  } catch (const qrgt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  put(overrides, "preset", preset);
  put(overrides, "bits", bits);
  put(overrides, "algorithm", algo);
  put(overrides, "topology", topology);
  put(overrides, "n", n);
  put(overrides, "t", t);
  put(overrides, "alpha_hat", alpha_hat);
  put(overrides, "seed", seed);
  put(overrides, "max_epochs", max_epochs);
  put(overrides, "ds_tol", ds_tol);
  put(overrides, "output", out);

  if (*sweep_cmd) return qrgt::sweep(file, overrides, key, split_values(values), std::cout);

  qrgt::RunConfig cfg;
  try {
    cfg = qrgt::resolve_config(file, overrides);
  } catch (const qrgt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return qrgt::execute(cfg, std::cout).exit_code;
}
