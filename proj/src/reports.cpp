// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include "duolab/reports.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace duolab {

using ojson = nlohmann::ordered_json;

std::string format_real(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

namespace {

// JSON has no NaN; such values are written as null.
ojson real(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

ojson widths_json(const std::vector<std::size_t>& w) {
  ojson a = ojson::array();
  for (std::size_t x : w) a.push_back(x);
  return a;
}

}  // namespace

std::string cosim_csv(const std::vector<CosimReport>& reports) {
  std::ostringstream os;
  os << "experiment,activation,ste,epsilon_or_sigma,seed,samples,layer,cosine\n";
  for (const CosimReport& r : reports) {
    const std::string prefix = r.experiment + "," + r.activation_desc + "," + r.ste_desc + "," +
                               format_real(r.epsilon_or_sigma) + "," + std::to_string(r.seed) + "," +
                               std::to_string(r.sample_count) + ",";
    for (std::size_t i = 0; i < r.per_layer_cosim.size(); ++i)
      os << prefix << layer_label(i) << "," << format_real(r.per_layer_cosim[i]) << "\n";
    os << prefix << "total," << format_real(r.total_cosim) << "\n";
  }
  return os.str();
}

std::string cosim_json(const std::vector<CosimReport>& reports) {
  ojson arr = ojson::array();
  for (const CosimReport& r : reports) {
    ojson j;
    j["experiment"] = r.experiment;
    j["activation"] = r.activation_desc;
    j["ste"] = r.ste_desc;
    j["epsilon_or_sigma"] = real(r.epsilon_or_sigma);
    j["seed"] = r.seed;
    j["samples"] = r.sample_count;
    if (r.experiment == "esg") j["directions"] = r.esg_directions;
    ojson layers = ojson::object();
    for (std::size_t i = 0; i < r.per_layer_cosim.size(); ++i) layers[layer_label(i)] = real(r.per_layer_cosim[i]);
    j["per_layer"] = layers;
    j["total"] = real(r.total_cosim);
    arr.push_back(j);
  }
  return arr.dump(2) + "\n";
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << "stage,epoch,train_loss,train_acc,test_acc\n";
  for (const EpochRecord& e : history) {
    os << e.stage << "," << e.epoch << "," << format_real(e.train_loss) << "," << format_real(e.train_acc) << ","
       << format_real(e.test_acc) << "\n";
  }
  return os.str();
}

std::string binaryduo_summary_json(const BinaryDuoConfig& cfg, const BinaryDuoResult& r) {
  ojson j;
  j["mode"] = to_string(cfg.mode);
  j["seed"] = cfg.seed;
  j["baseline_acc"] = r.baseline_acc;
  j["coupled_acc"] = r.coupled_acc;
  j["decoupled_acc_pre_ft"] = r.decoupled_acc_pre_ft;
  j["decoupled_acc_post_ft"] = r.decoupled_acc_post_ft;
  j["scratch_acc"] = r.scratch_acc;
  ojson arms = ojson::object();
  auto arm = [](const ArmResult& a) {
    ojson o;
    o["widths"] = widths_json(a.widths);
    o["weight_count"] = a.weight_count;
    o["parameter_count"] = a.parameter_count;
    return o;
  };
  arms["baseline"] = arm(r.baseline);
  arms["coupled"] = arm(r.coupled);
  arms["decoupled"] = arm(r.decoupled);
  arms["scratch"] = arm(r.scratch);
  j["arms"] = arms;
  ojson eq;
  eq["pass"] = r.equivalence.pass;
  eq["max_abs_diff"] = r.equivalence.max_abs_diff;
  eq["resampled"] = r.equivalence.resampled;
  j["equivalence"] = eq;
  return j.dump(2) + "\n";
}

std::string cumdiff_csv(const std::vector<std::pair<std::string, CumulativeDifference>>& rows) {
  std::ostringstream os;
  os << "activation,value,error_estimate\n";
  for (const auto& [name, cd] : rows) os << name << "," << format_real(cd.value) << "," << format_real(cd.error_estimate) << "\n";
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace duolab
