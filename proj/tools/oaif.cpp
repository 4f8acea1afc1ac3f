// Command-line surface for the desk-scale alignment laboratory.
//
// Subcommands: train-online, train-offline, make-dataset, eval, multiway,
// probe-shift, agreement. Exit codes: 0 success, 1 validation error,
// 2 I/O error, 3 remote-annotation failure budget exceeded.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oaif/checkpoint.hpp"
#include "oaif/config.hpp"
#include "oaif/evaluate.hpp"
#include "oaif/remote.hpp"
#include "oaif/trainer.hpp"

namespace fs = std::filesystem;
using namespace oaif;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitAnnotationBudget = 3;

struct AnnotationBudgetExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOpts {
  std::string config_path;
  std::string preset = "desk";
  std::string out_dir;
  std::string endpoint;
  std::string template_name;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common_flags(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "experiment config file");
  cmd->add_option("--preset", opts.preset, "preset name (desk | paper)");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--endpoint", opts.endpoint, "remote annotator endpoint URL");
  cmd->add_option("--template", opts.template_name, "prompt template name");
  cmd->add_option("--seed", opts.seed, "run seed")->each([&](const std::string&) {
    opts.seed_set = true;
  });
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
  ExperimentConfig cfg = opts.config_path.empty() ? preset_by_name(opts.preset)
                                                  : load_config_file(opts.config_path);
  if (opts.seed_set) cfg.train.seed = opts.seed;
  if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
  if (!opts.endpoint.empty()) {
    cfg.annotator.remote.endpoint = opts.endpoint;
    cfg.annotator.source = AnnotatorSource::kRemote;
  }
  if (!opts.template_name.empty()) cfg.annotator.template_name = opts.template_name;
#ifdef OAIF_DEFAULT_TEMPLATE_DIR
  if (cfg.annotator.template_dir == "templates" && !fs::exists("templates")) {
    cfg.annotator.template_dir = OAIF_DEFAULT_TEMPLATE_DIR;
  }
#endif
  apply_env_overrides(cfg);
  cfg.validate();
  return cfg;
}

std::unique_ptr<Annotator> make_annotator(const ExperimentConfig& cfg) {
  const Vocab vocab(cfg.policy.vocab_size);
  if (cfg.annotator.source == AnnotatorSource::kOracle) {
    return std::make_unique<OracleAnnotator>(cfg.annotator.oracle, vocab);
  }
  PromptTemplate tmpl =
      load_builtin_template(cfg.annotator.template_name, cfg.annotator.template_dir);
  return std::make_unique<RemoteAnnotator>(cfg.annotator.remote, std::move(tmpl), vocab);
}

std::vector<TokenSeq> resolve_prompts(const ExperimentConfig& cfg) {
  if (!cfg.prompts.file.empty()) {
    return load_prompt_file(cfg.prompts.file, Vocab(cfg.policy.vocab_size),
                            cfg.policy.prompt_cap);
  }
  return make_prompt_set(cfg.policy, cfg.prompts.count, cfg.train.seed);
}

void write_resolved_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  std::ofstream out(fs::path(cfg.output_dir) / "config.resolved.ini",
                    std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write resolved config under " + cfg.output_dir);
  out << config_to_ini(cfg);
}

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06lld.bin", static_cast<long long>(step));
  return buf;
}

EvalConfig eval_config(const ExperimentConfig& cfg) {
  EvalConfig e;
  e.temperature = cfg.eval.temperature;
  e.max_len = cfg.policy.max_len;
  e.tie_epsilon = cfg.eval.tie_epsilon;
  e.seed = detail::split_seed(cfg.train.seed, 0xe7a1ULL);
  return e;
}

std::vector<TokenSeq> eval_prompts(const ExperimentConfig& cfg) {
  return make_prompt_set(cfg.policy, cfg.eval.prompts,
                         detail::split_seed(cfg.train.seed, 0xe7a2ULL));
}

void print_win_rate_table(const WinRateReport& r, const std::string& a,
                          const std::string& b) {
  std::printf("%-24s %-24s %6s %6s %6s %6s %9s\n", "policy_a", "policy_b", "wins",
              "ties", "losses", "n", "win_rate");
  std::printf("%-24s %-24s %6d %6d %6d %6d %9.4f\n", a.c_str(), b.c_str(), r.wins,
              r.ties, r.losses, r.n, r.win_rate);
}

int cmd_train_online(const CommonOpts& opts, bool resume, int annotation_budget) {
  ExperimentConfig cfg = resolve_config(opts);
  write_resolved_config(cfg);

  PolicyParams theta =
      PolicyParams::zeros(cfg.policy.vocab_size, cfg.policy.order, cfg.policy.features);
  std::int64_t start_step = 0;
  const fs::path out_dir(cfg.output_dir);
  const fs::path ref_path = out_dir / "ckpt_ref.bin";

  if (resume && fs::exists(ref_path)) {
    std::int64_t latest = -1;
    for (const auto& entry : fs::directory_iterator(out_dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("ckpt_", 0) == 0 && name != "ckpt_ref.bin" &&
          name != "ckpt_final.bin") {
        latest = std::max<std::int64_t>(latest, std::stoll(name.substr(5, 6)));
      }
    }
    if (latest >= 0) {
      const PolicySnapshot snap =
          load_checkpoint((out_dir / checkpoint_name(latest)).string());
      theta = snap.params;
      start_step = static_cast<std::int64_t>(snap.step);
      std::cerr << "resuming from step " << start_step << "\n";
    }
  }

  PolicySnapshot theta0 = fs::exists(ref_path) && resume
                              ? load_checkpoint(ref_path.string())
                              : PolicySnapshot::of(theta, "sft", 0);
  if (!(resume && fs::exists(ref_path))) save_checkpoint(theta0, ref_path.string());

  auto annotator = make_annotator(cfg);
  const std::vector<TokenSeq> prompts = resolve_prompts(cfg);

  std::ofstream metrics(out_dir / "metrics.jsonl",
                        (resume && start_step > 0 ? std::ios::app : std::ios::trunc));
  if (!metrics) throw IoError("cannot open metrics file under " + cfg.output_dir);

  int annotation_failures = 0;
  auto on_step = [&](const StepRecord& rec, const PolicyParams& params) {
    metrics << to_json(rec).dump() << '\n';
    annotation_failures += rec.annotation_failures;
    if (annotation_failures > annotation_budget) {
      throw AnnotationBudgetExceeded("annotation failure budget exceeded (" +
                                     std::to_string(annotation_failures) + " failures)");
    }
    if ((rec.step + 1) % cfg.train.eval_every == 0) {
      save_checkpoint(PolicySnapshot::of(params, "theta", rec.step + 1),
                      (out_dir / checkpoint_name(rec.step + 1)).string());
    }
  };

  run_online(theta, theta0, *annotator, prompts, cfg.train, cfg.policy.max_len, on_step,
             start_step);
  save_checkpoint(PolicySnapshot::of(theta, "theta", cfg.train.max_steps),
                  (out_dir / "ckpt_final.bin").string());
  std::cout << "trained " << (cfg.train.max_steps - start_step) << " steps -> "
            << (out_dir / "ckpt_final.bin").string() << "\n";
  return kExitOk;
}

int cmd_train_offline(const CommonOpts& opts, const std::string& dataset_path) {
  ExperimentConfig cfg = resolve_config(opts);
  write_resolved_config(cfg);

  const Vocab vocab(cfg.policy.vocab_size);
  const std::vector<PreferenceTriplet> dataset = read_dataset(dataset_path, vocab);

  PolicyParams theta =
      PolicyParams::zeros(cfg.policy.vocab_size, cfg.policy.order, cfg.policy.features);
  PolicySnapshot theta0 = PolicySnapshot::of(theta, "sft", 0);
  const fs::path out_dir(cfg.output_dir);
  save_checkpoint(theta0, (out_dir / "ckpt_ref.bin").string());

  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw IoError("cannot open metrics file under " + cfg.output_dir);
  auto on_step = [&](const StepRecord& rec, const PolicyParams& params) {
    metrics << to_json(rec).dump() << '\n';
    if ((rec.step + 1) % cfg.train.eval_every == 0) {
      save_checkpoint(PolicySnapshot::of(params, "theta_offline", rec.step + 1),
                      (out_dir / checkpoint_name(rec.step + 1)).string());
    }
  };

  offline_train(theta, theta0, dataset, cfg.train, on_step);
  save_checkpoint(PolicySnapshot::of(theta, "theta_offline", cfg.train.max_steps),
                  (out_dir / "ckpt_final.bin").string());
  std::cout << "trained " << cfg.train.max_steps << " offline steps on "
            << dataset.size() << " triplets\n";
  return kExitOk;
}

int cmd_make_dataset(const CommonOpts& opts, const std::string& rho_path, int n,
                     const std::string& out_path) {
  ExperimentConfig cfg = resolve_config(opts);
  write_resolved_config(cfg);

  PolicyParams rho =
      PolicyParams::zeros(cfg.policy.vocab_size, cfg.policy.order, cfg.policy.features);
  std::string rho_id = "rho:uniform";
  if (!rho_path.empty()) {
    const PolicySnapshot snap = load_checkpoint(rho_path);
    rho = snap.params;
    rho_id = "rho:" + snap.policy_id;
  }

  auto annotator = make_annotator(cfg);
  const std::vector<TokenSeq> prompts = resolve_prompts(cfg);
  const DatasetYield yield = generate_offline_dataset(rho, rho_id, *annotator, prompts,
                                                      n, cfg.train, cfg.policy.max_len);
  write_dataset(out_path, yield.triplets);
  nlohmann::json summary = {{"requested", n},
                            {"emitted", yield.triplets.size()},
                            {"ties", yield.ties},
                            {"failures", yield.failures}};
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_a,
             const std::string& ckpt_b) {
  ExperimentConfig cfg = resolve_config(opts);
  write_resolved_config(cfg);

  const PolicySnapshot a = load_checkpoint(ckpt_a);
  const PolicySnapshot b = load_checkpoint(ckpt_b);
  auto judge = make_annotator(cfg);
  const auto prompts = eval_prompts(cfg);
  const WinRateReport report =
      win_rate(a.params, b.params, *judge, prompts, eval_config(cfg));

  print_win_rate_table(report, ckpt_a, ckpt_b);
  std::ofstream out(fs::path(cfg.output_dir) / "winrate.jsonl", std::ios::app);
  out << to_json(report).dump() << '\n';
  return kExitOk;
}

int cmd_multiway(const CommonOpts& opts, const std::vector<std::string>& ckpts) {
  ExperimentConfig cfg = resolve_config(opts);
  write_resolved_config(cfg);

  std::vector<PolicySnapshot> snaps;
  std::vector<const PolicyParams*> policies;
  for (const auto& path : ckpts) snaps.push_back(load_checkpoint(path));
  for (const auto& s : snaps) policies.push_back(&s.params);

  auto judge = make_annotator(cfg);
  const auto prompts = eval_prompts(cfg);
  const auto fractions = multiway_fraction(policies, *judge, prompts, eval_config(cfg));

  nlohmann::json report = nlohmann::json::array();
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    std::printf("%-40s %9.4f\n", ckpts[i].c_str(), fractions[i]);
    report.push_back({{"checkpoint", ckpts[i]}, {"fraction", fractions[i]}});
  }
  std::ofstream out(fs::path(cfg.output_dir) / "multiway.jsonl", std::ios::app);
  out << report.dump() << '\n';
  return kExitOk;
}

int cmd_probe_shift(const CommonOpts& opts, const std::string& policy_ckpt,
                    const std::string& gen_a_ckpt, const std::string& gen_b_ckpt,
                    int n) {
  ExperimentConfig cfg = resolve_config(opts);
  write_resolved_config(cfg);

  const PolicySnapshot pi = load_checkpoint(policy_ckpt);
  const PolicySnapshot gen_a = load_checkpoint(gen_a_ckpt);
  const PolicySnapshot gen_b = load_checkpoint(gen_b_ckpt);
  const auto prompts = eval_prompts(cfg);
  const EvalConfig ecfg = eval_config(cfg);

  std::mt19937_64 rng(ecfg.seed);
  auto sample_group = [&](const PolicyParams& gen, const std::string& lbl) {
    ResponseGroup g;
    g.label = lbl;
    for (int i = 0; i < n; ++i) {
      const TokenSeq& x = prompts[rng() % prompts.size()];
      g.items.emplace_back(x, sample_response(gen, x, ecfg.temperature, ecfg.max_len, rng));
    }
    return g;
  };
  const std::vector<ResponseGroup> groups = {sample_group(gen_a.params, "a"),
                                             sample_group(gen_b.params, "b")};
  const ShiftReport report = shift_probe(pi.params, groups);

  for (const auto& g : report.groups) {
    std::printf("group %-12s n=%-5d mean_logprob=%10.4f stderr=%8.4f\n", g.label.c_str(),
                g.n, g.mean_logprob, g.stderr_logprob);
  }
  std::printf("gap = %.4f\n", report.gap);
  std::ofstream out(fs::path(cfg.output_dir) / "shift.jsonl", std::ios::app);
  out << to_json(report).dump() << '\n';
  return kExitOk;
}

int cmd_agreement(const CommonOpts& opts, int n) {
  ExperimentConfig cfg = resolve_config(opts);
  write_resolved_config(cfg);

  const Vocab vocab(cfg.policy.vocab_size);
  OracleSpec clean = cfg.annotator.oracle;
  clean.noise = 0.0;
  clean.position_bias = 0.0;
  OracleAnnotator reference(clean, vocab);
  auto candidate = make_annotator(cfg);

  const PolicyParams generator =
      PolicyParams::zeros(cfg.policy.vocab_size, cfg.policy.order, cfg.policy.features);
  const auto prompts = eval_prompts(cfg);
  const EvalConfig ecfg = eval_config(cfg);
  std::mt19937_64 rng(ecfg.seed);

  std::vector<ReferencePair> pairs;
  while (static_cast<int>(pairs.size()) < n) {
    const TokenSeq& x = prompts[rng() % prompts.size()];
    const TokenSeq a = sample_response(generator, x, ecfg.temperature, ecfg.max_len, rng);
    const TokenSeq b = sample_response(generator, x, ecfg.temperature, ecfg.max_len, rng);
    if (a == b) continue;
    const auto ref = label(reference.score_pair(x, a, b), a, b, 0.0);
    if (!ref) continue;  // reference tie carries no ground truth
    pairs.push_back({x, a, b, ref->y_plus == a});
  }
  const double accuracy = annotator_agreement(*candidate, pairs, ecfg.tie_epsilon);
  nlohmann::json report = {{"pairs", n}, {"accuracy", accuracy},
                           {"candidate", candidate->id()}, {"reference", reference.id()}};
  std::cout << report.dump() << "\n";
  std::ofstream out(fs::path(cfg.output_dir) / "agreement.jsonl", std::ios::app);
  out << report.dump() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale direct alignment laboratory"};
  app.require_subcommand(1);

  CommonOpts opts;
  bool resume = false;
  int annotation_budget = 100;
  std::string dataset_path, rho_path, out_path;
  std::string ckpt_a, ckpt_b, policy_ckpt, gen_a_ckpt, gen_b_ckpt;
  std::vector<std::string> multi_ckpts;
  int n_items = 1000;

  auto* train_online = app.add_subcommand("train-online", "OAIF online training run");
  add_common_flags(train_online, opts);
  train_online->add_flag("--resume", resume, "resume from the latest checkpoint");
  train_online->add_option("--annotation-budget", annotation_budget,
                           "max tolerated annotation failures");

  auto* train_offline = app.add_subcommand("train-offline", "offline DAP baseline run");
  add_common_flags(train_offline, opts);
  train_offline->add_option("--dataset", dataset_path, "preference dataset (JSONL)")
      ->required();

  auto* make_ds = app.add_subcommand("make-dataset", "pre-collect a preference dataset");
  add_common_flags(make_ds, opts);
  make_ds->add_option("--rho", rho_path, "behavior policy checkpoint (default uniform)");
  make_ds->add_option("--n", n_items, "number of pairs to draw")->required();
  make_ds->add_option("--dataset-out", out_path, "output dataset path")->required();

  auto* eval_cmd = app.add_subcommand("eval", "pairwise win rate between checkpoints");
  add_common_flags(eval_cmd, opts);
  eval_cmd->add_option("checkpoint_a", ckpt_a)->required();
  eval_cmd->add_option("checkpoint_b", ckpt_b)->required();

  auto* multiway_cmd = app.add_subcommand("multiway", "multi-way preferred fractions");
  add_common_flags(multiway_cmd, opts);
  multiway_cmd->add_option("checkpoints", multi_ckpts)->expected(2, 16);

  auto* probe = app.add_subcommand("probe-shift", "distribution-shift logprob probe");
  add_common_flags(probe, opts);
  probe->add_option("--policy", policy_ckpt, "probing policy checkpoint")->required();
  probe->add_option("--gen-a", gen_a_ckpt, "first generator checkpoint")->required();
  probe->add_option("--gen-b", gen_b_ckpt, "second generator checkpoint")->required();
  probe->add_option("--n", n_items, "responses per group");

  auto* agree = app.add_subcommand("agreement", "annotator agreement vs clean oracle");
  add_common_flags(agree, opts);
  agree->add_option("--n", n_items, "number of labeled pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (train_online->parsed()) return cmd_train_online(opts, resume, annotation_budget);
    if (train_offline->parsed()) return cmd_train_offline(opts, dataset_path);
    if (make_ds->parsed()) return cmd_make_dataset(opts, rho_path, n_items, out_path);
    if (eval_cmd->parsed()) return cmd_eval(opts, ckpt_a, ckpt_b);
    if (multiway_cmd->parsed()) return cmd_multiway(opts, multi_ckpts);
    if (probe->parsed())
      return cmd_probe_shift(opts, policy_ckpt, gen_a_ckpt, gen_b_ckpt, n_items);
    if (agree->parsed()) return cmd_agreement(opts, n_items);
  } catch (const AnnotationBudgetExceeded& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitAnnotationBudget;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}
