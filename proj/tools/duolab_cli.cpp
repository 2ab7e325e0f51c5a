// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include <omp.h>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "config.hpp"
#include "duolab/binaryduo.hpp"
#include "duolab/checkpoint.hpp"
#include "duolab/cosim.hpp"
#include "duolab/duo_transform.hpp"
#include "duolab/errors.hpp"
#include "duolab/reports.hpp"
#include "duolab/train.hpp"

namespace fs = std::filesystem;
using namespace duolab;

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

// Bad option values found after CLI11 accepted the syntax.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::uint64_t seed = 1;
  std::string out = "duolab-out";
  int workers = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "flat key = value file; command-line flags win");
  sub->add_option("--seed", c.seed, "root seed");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--workers", c.workers, "worker threads (0: all); never changes outputs")->check(CLI::NonNegativeNumber);
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : text + ",") {
    if (ch == ',') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  return parts;
}

double parse_real(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw UsageError("bad number '" + s + "' for " + what);
  return v;
}

std::vector<double> real_list(const std::string& text, const std::string& what) {
  std::vector<double> v;
  for (const auto& p : split(text)) v.push_back(parse_real(p, what));
  if (v.empty()) throw UsageError(what + ": empty list");
  return v;
}

std::vector<std::size_t> size_list(const std::string& text, const std::string& what) {
  std::vector<std::size_t> v;
  for (const auto& p : split(text)) {
    const double d = parse_real(p, what);
    if (!(d >= 1.0) || d != static_cast<double>(static_cast<std::size_t>(d)))
      throw UsageError(what + ": '" + p + "' is not a positive integer");
    v.push_back(static_cast<std::size_t>(d));
  }
  if (v.empty()) throw UsageError(what + ": empty list");
  return v;
}

template <class F>
auto as_usage(F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

// Every option of the subcommand that carries a value, minus the ones that
// do not affect results.
std::string manifest_for(const CLI::App* sub) {
  std::vector<std::pair<std::string, std::string>> rows;
  rows.emplace_back("command", sub->get_name());
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config" || name == "workers" || name == "out") continue;
    std::string value = opt->count() > 0 && !opt->results().empty() ? opt->results().back() : opt->get_default_str();
    if (value.empty()) continue;
    rows.emplace_back(name, value);
  }
  return cli::render_manifest(rows);
}

void write_manifest(const CLI::App* sub, const Common& c) {
  write_text_file(fs::path(c.out) / "config.txt", manifest_for(sub));
}

TrainTestSplit mixture(std::uint64_t seed, int classes, std::size_t dim, std::size_t n_train, std::size_t n_test,
                       double separation) {
  return gaussian_mixture(Rng::derive_seed(seed, "dataset"), classes, dim, n_train, n_test, separation);
}

// ---------------------------------------------------------------- cosim

struct CosimArgs {
  Common common;
  std::string activation;
  std::string ste = "relu1";
  std::string experiment = "cdg";
  double epsilon = 1e-3;
  double sigma = 1e-2;
  std::size_t directions = 1024;
  std::string sweep = "none";
  std::string values;
  std::size_t samples = 100000;
  std::size_t width = 32;
  std::size_t layers = 3;
};

int run_cosim(const CLI::App* sub, const CosimArgs& a) {
  CosimConfig cfg;
  std::vector<double> values;
  as_usage([&] {
    cfg.activation = parse_activation(a.activation, parse_ste(a.ste));
    if (a.sweep == "epsilon") values = real_list(a.values.empty() ? "1e-4,1e-3,1e-2" : a.values, "--values");
    if (a.sweep == "sigma") values = real_list(a.values.empty() ? "1e-3,1e-2,1e-1" : a.values, "--values");
    for (double v : values)
      if (!(v > 0.0)) throw UsageError("--values must be positive");
    return 0;
  });
  cfg.weight_layers = a.layers;
  cfg.width = a.width;
  cfg.samples = a.samples;
  cfg.epsilon = a.epsilon;
  cfg.seed = a.common.seed;
  cfg.workers = a.common.workers;

  std::vector<CosimReport> reports;
  if (a.sweep == "epsilon") {
    reports = epsilon_sweep(cfg, values);
  } else if (a.sweep == "sigma") {
    reports = sigma_sweep(cfg, values, a.directions);
  } else if (a.experiment == "esg") {
    reports = sigma_sweep(cfg, {a.sigma}, a.directions);
  } else {
    reports.push_back(run_cosim_experiment(cfg));
  }
  const fs::path out(a.common.out);
  write_text_file(out / "cosim.csv", cosim_csv(reports));
  write_text_file(out / "cosim.json", cosim_json(reports));
  write_manifest(sub, a.common);
  for (const CosimReport& r : reports)
    std::cout << r.experiment << " " << r.activation_desc << "/" << r.ste_desc << " @ " << format_real(r.epsilon_or_sigma)
              << ": total cosine " << format_real(r.total_cosim) << "\n";
  return kPass;
}

// ---------------------------------------------------------------- train / duo

struct DataArgs {
  int classes = 4;
  std::size_t dim = 32;
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
  double separation = 3.0;
};

void add_data(CLI::App* sub, DataArgs& d) {
  sub->add_option("--classes", d.classes, "mixture classes")->check(CLI::Range(2, 1 << 20));
  sub->add_option("--dim", d.dim, "input dimension")->check(CLI::PositiveNumber);
  sub->add_option("--train-size", d.train_size, "training samples")->check(CLI::PositiveNumber);
  sub->add_option("--test-size", d.test_size, "test samples")->check(CLI::PositiveNumber);
  sub->add_option("--separation", d.separation, "expected distance scale between class means");
}

struct PlanArgs {
  std::size_t epochs = 30;
  double lr = 5e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 100;
};

void add_plan(CLI::App* sub, PlanArgs& p) {
  sub->add_option("--epochs", p.epochs, "training epochs");
  sub->add_option("--lr", p.lr, "learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--weight-decay", p.weight_decay, "decoupled weight decay")->check(CLI::NonNegativeNumber);
  sub->add_option("--batch-size", p.batch_size, "mini-batch size")->check(CLI::PositiveNumber);
}

TrainPlan make_plan(const PlanArgs& p, std::uint64_t seed, Stage stage) {
  TrainPlan plan;
  plan.epochs = p.epochs;
  plan.learning_rate = p.lr;
  plan.weight_decay = p.weight_decay;
  plan.batch_size = p.batch_size;
  plan.seed = seed;
  plan.stage = stage;
  return plan;
}

struct TrainArgs {
  Common common;
  DataArgs data;
  PlanArgs plan;
  std::string widths = "64,64";
  std::string activation = "ternary";
  std::string ste = "relu1";
};

int run_train(const CLI::App* sub, const TrainArgs& a) {
  std::vector<std::size_t> widths;
  ActivationSpec act;
  as_usage([&] {
    widths = size_list(a.widths, "--widths");
    act = parse_activation(a.activation, parse_ste(a.ste));
    return 0;
  });
  const TrainTestSplit data =
      mixture(a.common.seed, a.data.classes, a.data.dim, a.data.train_size, a.data.test_size, a.data.separation);
  Rng rng = Rng(a.common.seed).child("init");
  std::vector<LayerShape> shapes;
  for (std::size_t w : widths) shapes.push_back({w, act, true, false});
  shapes.push_back({static_cast<std::size_t>(a.data.classes), ActivationSpec::linear(), false, true});
  Network net = make_network(a.data.dim, shapes, rng);
  const TrainResult r = train(std::move(net), data.train, make_plan(a.plan, a.common.seed, Stage::Pretrain), &data.test);

  const fs::path out(a.common.out);
  save_checkpoint(r.network, out / "model.ckpt");
  write_text_file(out / "history.csv", history_csv(r.history));
  nlohmann::ordered_json j;
  j["train_acc"] = accuracy(r.network, data.train);
  j["test_acc"] = accuracy(r.network, data.test);
  j["weight_count"] = r.network.weight_count();
  j["parameter_count"] = r.network.parameter_count();
  write_text_file(out / "summary.json", j.dump(2) + "\n");
  write_manifest(sub, a.common);
  std::cout << "train acc " << format_real(j["train_acc"].get<double>()) << ", test acc "
            << format_real(j["test_acc"].get<double>()) << "\n";
  return kPass;
}

struct DuoArgs {
  Common common;
  DataArgs data;
  PlanArgs plan;
  std::string widths = "64,64";
  std::string mode = "half";
  std::string ste = "relu1";
  std::size_t ft_epochs = 10;
  std::string ft_lr = "auto";
  std::string ft_weight_decay = "auto";
  std::size_t equiv_trials = 20;
  std::string coupled_checkpoint;
};

int run_duo(const CLI::App* sub, const DuoArgs& a) {
  BinaryDuoConfig cfg;
  as_usage([&] {
    cfg.baseline_widths = size_list(a.widths, "--widths");
    cfg.mode = parse_width_mode(a.mode);
    cfg.ste = parse_ste(a.ste);
    return 0;
  });
  cfg.seed = a.common.seed;
  cfg.equivalence_trials = a.equiv_trials;
  cfg.pretrain = make_plan(a.plan, a.common.seed, Stage::Pretrain);
  TrainPlan ft = cfg.resolved_finetune();
  ft.epochs = a.ft_epochs;
  as_usage([&] {
    if (a.ft_lr != "auto") ft.learning_rate = parse_real(a.ft_lr, "--ft-lr");
    if (a.ft_weight_decay != "auto") ft.weight_decay = parse_real(a.ft_weight_decay, "--ft-weight-decay");
    if (!(ft.learning_rate > 0.0 && ft.learning_rate < cfg.pretrain.learning_rate))
      throw UsageError("--ft-lr must be positive and below --lr");
    return 0;
  });
  cfg.finetune = ft;
  if (!a.coupled_checkpoint.empty()) cfg.coupled_init = load_checkpoint(a.coupled_checkpoint);

  const TrainTestSplit data =
      mixture(a.common.seed, a.data.classes, a.data.dim, a.data.train_size, a.data.test_size, a.data.separation);
  const BinaryDuoResult r = run_binaryduo(cfg, data.train, data.test);

  const fs::path out(a.common.out);
  std::vector<EpochRecord> history = r.baseline.history;
  for (const ArmResult* arm : {&r.coupled, &r.decoupled, &r.scratch})
    history.insert(history.end(), arm->history.begin(), arm->history.end());
  write_text_file(out / "history.csv", history_csv(history));
  write_text_file(out / "summary.json", binaryduo_summary_json(cfg, r));
  write_text_file(out / "decouple_map.json", decouple_map_to_json(r.map));
  save_checkpoint(r.coupled_network, out / "coupled.ckpt");
  save_checkpoint(r.decoupled_network, out / "decoupled.ckpt");
  save_checkpoint(r.finetuned_network, out / "finetuned.ckpt");
  write_manifest(sub, a.common);
  std::cout << "baseline " << format_real(r.baseline_acc) << ", coupled " << format_real(r.coupled_acc)
            << ", decoupled " << format_real(r.decoupled_acc_pre_ft) << " -> " << format_real(r.decoupled_acc_post_ft)
            << ", scratch " << format_real(r.scratch_acc) << "\n";
  return kPass;
}

// ---------------------------------------------------------------- decouple / equiv / cumdiff

struct DecoupleArgs {
  Common common;
  std::string input;
  std::string mode = "half";
};

int run_decouple(const CLI::App* sub, const DecoupleArgs& a) {
  const WidthMode mode = as_usage([&] { return parse_width_mode(a.mode); });
  const Network net = load_checkpoint(a.input);
  const DecoupleResult d = decouple(net, mode);
  const fs::path out(a.common.out);
  save_checkpoint(d.network, out / "decoupled.ckpt");
  write_text_file(out / "decouple_map.json", decouple_map_to_json(d.map));
  write_manifest(sub, a.common);
  std::cout << "decoupled " << net.weight_count() << " -> " << d.network.weight_count() << " weights\n";
  return kPass;
}

struct EquivArgs {
  Common common;
  std::string coupled;
  std::string decoupled;
  std::string map;
  std::string mode = "half";
  std::size_t trials = 100;
};

int run_equiv(const CLI::App* sub, const EquivArgs& a) {
  const WidthMode mode = as_usage([&] { return parse_width_mode(a.mode); });
  const Network coupled = load_checkpoint(a.coupled);
  const Network decoupled = load_checkpoint(a.decoupled);
  EquivalenceReport rep;
  std::string reason;
  try {
    const DecoupleMap map =
        a.map.empty() ? decouple(coupled, mode).map : decouple_map_from_json(read_text_file(a.map));
    Rng rng = Rng(a.common.seed).child("equivalence");
    rep = verify_equivalence(coupled, decoupled, map, a.trials, rng);
    if (!rep.pass) reason = "outputs differ";
  } catch (const ShapeError& e) {
    rep.pass = false;
    reason = e.what();
  } catch (const TransformError& e) {
    rep.pass = false;
    reason = e.what();
  }
  nlohmann::ordered_json j;
  j["pass"] = rep.pass;
  j["max_abs_diff"] = reason.empty() || rep.max_abs_diff > 0.0 ? nlohmann::ordered_json(rep.max_abs_diff) : nullptr;
  j["resampled"] = rep.resampled;
  if (!reason.empty()) j["reason"] = reason;
  write_text_file(fs::path(a.common.out) / "equivalence.json", j.dump(2) + "\n");
  write_manifest(sub, a.common);
  std::cout << (rep.pass ? "PASS" : "FAIL") << " max |diff| " << format_real(rep.max_abs_diff)
            << (reason.empty() ? "" : " (" + reason + ")") << "\n";
  return rep.pass ? kPass : kFail;
}

struct CumdiffArgs {
  Common common;
  std::string stes = "relu1,steep2,steep4";
  std::string activation = "binary";
};

int run_cumdiff(const CLI::App* sub, const CumdiffArgs& a) {
  std::vector<Ste> stes;
  ActivationSpec act;
  as_usage([&] {
    for (const auto& s : split(a.stes)) stes.push_back(parse_ste(s));
    act = parse_activation(a.activation, Ste::relu1());
    if (!act.is_quantized()) throw UsageError("--activation must be quantized");
    if (stes.empty()) throw UsageError("--stes: empty list");
    return 0;
  });
  std::vector<std::pair<std::string, CumulativeDifference>> rows;
  for (const Ste& s : stes) rows.emplace_back(to_string(s), cumulative_difference(s, *act.levels));
  write_text_file(fs::path(a.common.out) / "cumdiff.csv", cumdiff_csv(rows));
  write_manifest(sub, a.common);
  for (const auto& [name, cd] : rows) std::cout << name << " " << format_real(cd.value) << "\n";
  return kPass;
}

// ---------------------------------------------------------------- main

std::set<std::string> long_names(const CLI::App* sub) {
  std::set<std::string> names;
  for (const CLI::Option* o : sub->get_options())
    for (const auto& n : o->get_lnames()) names.insert(n);
  return names;
}

// Config entries are placed before the user's flags; with TakeLast the
// command line wins.
std::vector<std::string> expand_config(const CLI::App& app, const std::vector<std::string>& args) {
  if (args.empty()) return args;
  const CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args.front());
  } catch (const CLI::OptionNotFound&) {
    return args;
  }
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw cli::ConfigError(e.what());
  }
  const auto entries = cli::parse_config(text, path);
  cli::check_keys(entries, long_names(sub), path);
  std::vector<std::string> out{args.front()};
  for (auto& s : cli::to_arguments(entries)) out.push_back(std::move(s));
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"duolab: gradient-mismatch probes and decoupled binary networks"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  CosimArgs cosim;
  auto* c_cosim = app.add_subcommand("cosim", "cosine similarity of coarse gradients against CDG/ESG");
  add_common(c_cosim, cosim.common);
  c_cosim->add_option("--activation", cosim.activation, "binary | ternary | levelsN | full | linear")->required();
  c_cosim->add_option("--ste", cosim.ste, "relu1 | steepS | swishsign | poly | identity");
  c_cosim->add_option("--experiment", cosim.experiment, "cdg | esg")->check(CLI::IsMember({"cdg", "esg"}));
  c_cosim->add_option("--epsilon", cosim.epsilon, "CDG step")->check(CLI::PositiveNumber);
  c_cosim->add_option("--sigma", cosim.sigma, "ESG smoothing scale")->check(CLI::PositiveNumber);
  c_cosim->add_option("--directions", cosim.directions, "ESG antithetic pairs")->check(CLI::PositiveNumber);
  c_cosim->add_option("--sweep", cosim.sweep, "none | epsilon | sigma")
      ->check(CLI::IsMember({"none", "epsilon", "sigma"}));
  c_cosim->add_option("--values", cosim.values, "comma-separated sweep values");
  c_cosim->add_option("--samples", cosim.samples, "Gaussian input samples")->check(CLI::PositiveNumber);
  c_cosim->add_option("--width", cosim.width, "input and hidden width")->check(CLI::PositiveNumber);
  c_cosim->add_option("--layers", cosim.layers, "weight layers (last one is the linear output)")
      ->check(CLI::Range(2, 64));

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train one classifier on the Gaussian-mixture task");
  add_common(c_train, tr.common);
  add_data(c_train, tr.data);
  add_plan(c_train, tr.plan);
  c_train->add_option("--widths", tr.widths, "comma-separated hidden widths");
  c_train->add_option("--activation", tr.activation, "binary | ternary | levelsN | full");
  c_train->add_option("--ste", tr.ste, "STE for quantized layers");

  DuoArgs duo;
  auto* c_duo = app.add_subcommand("duo", "baseline / coupled / decoupled / scratch comparison");
  add_common(c_duo, duo.common);
  add_data(c_duo, duo.data);
  add_plan(c_duo, duo.plan);
  c_duo->add_option("--widths", duo.widths, "comma-separated baseline hidden widths");
  c_duo->add_option("--mode", duo.mode, "half | quarter")->check(CLI::IsMember({"half", "quarter"}));
  c_duo->add_option("--ste", duo.ste, "STE for quantized layers");
  c_duo->add_option("--ft-epochs", duo.ft_epochs, "fine-tune epochs");
  c_duo->add_option("--ft-lr", duo.ft_lr, "fine-tune learning rate (auto: lr x 0.02)");
  c_duo->add_option("--ft-weight-decay", duo.ft_weight_decay, "fine-tune weight decay (auto: weight-decay / 20)");
  c_duo->add_option("--equiv-trials", duo.equiv_trials, "random batches for the equivalence check")
      ->check(CLI::PositiveNumber);
  c_duo->add_option("--coupled-checkpoint", duo.coupled_checkpoint, "use this pretrained coupled model");

  DecoupleArgs dec;
  auto* c_dec = app.add_subcommand("decouple", "split each multi-level unit into binary units");
  add_common(c_dec, dec.common);
  c_dec->add_option("--in", dec.input, "coupled checkpoint")->required();
  c_dec->add_option("--mode", dec.mode, "half | quarter")->check(CLI::IsMember({"half", "quarter"}));

  EquivArgs eq;
  auto* c_eq = app.add_subcommand("equiv", "check a coupled/decoupled pair computes the same function");
  add_common(c_eq, eq.common);
  c_eq->add_option("--coupled", eq.coupled, "coupled checkpoint")->required();
  c_eq->add_option("--decoupled", eq.decoupled, "decoupled checkpoint")->required();
  c_eq->add_option("--map", eq.map, "decouple map JSON (default: derived from --coupled)");
  c_eq->add_option("--mode", eq.mode, "half | quarter, used without --map")
      ->check(CLI::IsMember({"half", "quarter"}));
  c_eq->add_option("--trials", eq.trials, "random input batches")->check(CLI::PositiveNumber);

  CumdiffArgs cd;
  auto* c_cd = app.add_subcommand("cumdiff", "integral of |quantizer - STE approximation|");
  add_common(c_cd, cd.common);
  c_cd->add_option("--stes", cd.stes, "comma-separated STEs");
  c_cd->add_option("--activation", cd.activation, "quantizer: binary | ternary | levelsN");

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = expand_config(app, args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  } catch (const cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  }

  const std::map<const CLI::App*, std::function<int()>> commands{
      {c_cosim, [&] { return run_cosim(c_cosim, cosim); }}, {c_train, [&] { return run_train(c_train, tr); }},
      {c_duo, [&] { return run_duo(c_duo, duo); }},         {c_dec, [&] { return run_decouple(c_dec, dec); }},
      {c_eq, [&] { return run_equiv(c_eq, eq); }},          {c_cd, [&] { return run_cumdiff(c_cd, cd); }},
  };
  const CLI::App* chosen = app.get_subcommands().front();
  const Common* common = chosen == c_cosim   ? &cosim.common
                         : chosen == c_train ? &tr.common
                         : chosen == c_duo   ? &duo.common
                         : chosen == c_dec   ? &dec.common
                         : chosen == c_eq    ? &eq.common
                                             : &cd.common;
  if (common->workers > 0) omp_set_num_threads(common->workers);
  try {
    return commands.at(chosen)();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << chosen->help();
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFail;
  }
}
