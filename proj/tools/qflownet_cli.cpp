// Copyright 2026 The QFlowNet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// qflownet: train, evaluate, synthesize, build test sets, query the oracle.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "qflownet/qflownet.hpp"

namespace {

using namespace qflownet;

// Exit codes.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitInput = 3;
constexpr int kExitBudget = 4;
constexpr int kExitNumerical = 5;
constexpr int kExitNotFound = 6;

// Keep large activation buffers in the heap instead of mapping and
// unmapping them on every forward pass.
void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

void parse_lengths(const std::string& spec, int& lo, int& hi) {
  const auto dots = spec.find("..");
  try {
    if (dots == std::string::npos) {
      lo = hi = std::stoi(spec);
    } else {
      lo = std::stoi(spec.substr(0, dots));
      hi = std::stoi(spec.substr(dots + 2));
    }
  } catch (const std::exception&) {
    throw ConfigError("--lengths expects A..B, got '" + spec + "'");
  }
  if (lo < 0 || hi < lo) throw ConfigError("--lengths range is empty: '" + spec + "'");
}

Json circuit_json(const ActionSpace& space, const std::vector<int>& actions) {
  Circuit c{space.num_qubits(), {}};
  for (int a : actions) c.gates.push_back(space[static_cast<std::size_t>(a)]);
  return circuit_to_json(c);
}

int cmd_train(const std::string& config_path, const std::string& resume, const std::string& out_dir, bool quiet) {
  TrainConfig cfg = train_config_from_json(read_json_file(config_path));
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  const auto every = std::max<std::int64_t>(1, cfg.n_iters / 50);
  const TrainResult r = train(cfg, resume, [&](const StepMetrics& m) {
    if (!quiet && (m.step % every == 0 || m.step + 1 == cfg.n_iters)) {
      std::fprintf(stderr, "step %lld  loss %.4g  success %.3f  log_z %.4f  len %.2f\n",
                   static_cast<long long>(m.step), m.loss, m.success_fraction, m.log_z, m.mean_length);
    }
  });
  std::cout << r.final_checkpoint << '\n';
  return kExitOk;
}

int cmd_evaluate(const std::string& ckpt, const std::string& test_set, int k_max, const std::string& out,
                 std::uint64_t seed) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const TestSet ts = read_test_set(test_set);
  Rng rng(seed);
  const EvalReport er = evaluate(ck, ts, k_max, rng);
  write_report(er, out);
  std::printf("targets %zu  success %.4f  mean_attempts %.4f\n", er.records.size(), er.overall_success_rate(),
              er.mean_attempts());
  return kExitOk;
}

int cmd_synthesize(const std::string& ckpt, const std::string& target_path, int k_max, std::uint64_t seed) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const ActionSpace space = ck.action_space();
  const UnitaryMatrix target = target_from_json(read_json_file(target_path));
  if (target.num_qubits() != space.num_qubits()) {
    throw ValidationError("target has " + std::to_string(target.num_qubits()) + " qubit(s), checkpoint expects " +
                          std::to_string(space.num_qubits()));
  }
  if (k_max < 1) throw ConfigError("--k-max must be >= 1");
  Rng rng(seed);
  const std::vector<UnitaryMatrix> copies(static_cast<std::size_t>(k_max), target);
  const auto trajs = rollout_batch(NetworkPolicy(ck.params, ck.config.encoder), space, copies, ck.config.reward, rng);
  const Trajectory* best = nullptr;
  int attempts = 0;
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    if (!trajs[k].success) continue;
    if (best == nullptr) attempts = static_cast<int>(k) + 1;
    if (best == nullptr || trajs[k].length() < best->length()) best = &trajs[k];
  }
  if (best == nullptr) {
    std::cout << Json{{"success", false}, {"attempts", k_max + 1}}.dump() << '\n';
    return kExitNotFound;
  }
  Json j = circuit_json(space, best->actions);
  j["success"] = true;
  j["fidelity"] = best->terminal_fidelity;
  j["attempts"] = attempts;
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_build_testset(const std::string& gate_set, int n, const std::string& lengths, int per_length, int oracle_cap,
                      std::uint64_t seed, const std::string& out) {
  const ActionSpace space(GateSet::parse(gate_set), n);
  TestSetOptions opt;
  parse_lengths(lengths, opt.min_length, opt.max_length);
  opt.per_length = per_length;
  opt.oracle_cap = oracle_cap;
  Rng rng(seed);
  const TestSet ts = build_test_set(space, opt, rng);
  write_test_set(ts, out);
  std::size_t oracle = 0;
  for (const auto& tc : ts.cases) oracle += tc.provenance == kProvenanceOracle ? 1 : 0;
  std::printf("%zu targets (%zu oracle-confirmed) -> %s\n", ts.cases.size(), oracle, out.c_str());
  return kExitOk;
}

int cmd_oracle(const std::string& target_path, const std::string& gate_set, int cap, bool enumerate,
               std::size_t limit, double budget) {
  const UnitaryMatrix target = target_from_json(read_json_file(target_path));
  const ActionSpace space(GateSet::parse(gate_set), target.num_qubits());
  OracleOptions opt;
  opt.node_budget = budget;
  const OracleResult r = bfs_min_length(target, space, cap, opt);
  Json j;
  j["min_length"] = r.min_length ? Json(*r.min_length) : Json(nullptr);
  j["witness"] = circuit_json(space, r.witness);
  j["count"] = r.count_at_min;
  if (enumerate) {
    Json all = Json::array();
    for (const auto& seq : enumerate_solutions(target, space, cap, limit, opt)) all.push_back(circuit_json(space, seq));
    j["solutions"] = std::move(all);
  }
  std::cout << j.dump() << '\n';
  return r.min_length ? kExitOk : kExitNotFound;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Unitary synthesis with a trajectory-balance trained policy"};
  app.require_subcommand(1);

  std::string config_path, resume, train_out;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a policy from a JSON config");
  train->add_option("--config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Output directory (overrides the config)");
  train->add_flag("--quiet", quiet, "No progress lines");

  std::string ckpt, test_set, eval_out = "eval";
  int k_max = 256;
  std::uint64_t eval_seed = 0;
  auto* evaluate = app.add_subcommand("evaluate", "Sampled evaluation on a test set");
  evaluate->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--test-set", test_set)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--k-max", k_max, "Rollouts per target")->capture_default_str();
  evaluate->add_option("--out", eval_out, "Report directory")->capture_default_str();
  evaluate->add_option("--seed", eval_seed)->capture_default_str();

  std::string target_path;
  int synth_k = 256;
  std::uint64_t synth_seed = 0;
  auto* synthesize = app.add_subcommand("synthesize", "Sample circuits for one target");
  synthesize->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  synthesize->add_option("--target", target_path, "Circuit or matrix JSON")->required()->check(CLI::ExistingFile);
  synthesize->add_option("--k-max", synth_k)->capture_default_str();
  synthesize->add_option("--seed", synth_seed)->capture_default_str();

  std::string gate_set = "G1", lengths = "1..6", ts_out;
  int n = 3, per_length = 25, oracle_cap = 6;
  std::uint64_t ts_seed = 0;
  auto* build = app.add_subcommand("build-testset", "Random targets with oracle reference lengths");
  build->add_option("--gate-set", gate_set)->capture_default_str();
  build->add_option("--n", n, "Qubits")->capture_default_str();
  build->add_option("--lengths", lengths, "Generation depths A..B")->capture_default_str();
  build->add_option("--per-length", per_length)->capture_default_str();
  build->add_option("--oracle-cap", oracle_cap)->capture_default_str();
  build->add_option("--seed", ts_seed)->capture_default_str();
  build->add_option("--out", ts_out)->required();

  std::string oracle_gate_set = "G1";
  int cap = 4;
  bool do_enumerate = false;
  std::size_t limit = 1000;
  double budget = OracleOptions{}.node_budget;
  auto* oracle = app.add_subcommand("oracle", "Minimal length by breadth-first search");
  oracle->add_option("--target", target_path, "Circuit or matrix JSON")->required()->check(CLI::ExistingFile);
  oracle->add_option("--gate-set", oracle_gate_set)->capture_default_str();
  oracle->add_option("--cap", cap, "Length cap")->capture_default_str();
  oracle->add_flag("--enumerate", do_enumerate, "Also list every solution up to the cap");
  oracle->add_option("--limit", limit, "Maximum solutions listed")->capture_default_str();
  oracle->add_option("--node-budget", budget)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(config_path, resume, train_out, quiet);
    if (*evaluate) return cmd_evaluate(ckpt, test_set, k_max, eval_out, eval_seed);
    if (*synthesize) return cmd_synthesize(ckpt, target_path, synth_k, synth_seed);
    if (*build) return cmd_build_testset(gate_set, n, lengths, per_length, oracle_cap, ts_seed, ts_out);
    if (*oracle) return cmd_oracle(target_path, oracle_gate_set, cap, do_enumerate, limit, budget);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const BudgetExceeded& e) {
    std::cerr << "budget exceeded: " << e.what() << '\n';
    return kExitBudget;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitUsage;
}
