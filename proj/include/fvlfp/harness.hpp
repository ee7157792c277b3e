#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fvlfp/federation.hpp"

namespace fvlfp::harness {

struct Config {
  std::uint64_t seed = 1;
  std::string method = "fvlfp";
  std::string task = "smiling";
  std::string attribute = "gender";
  std::string bias_metric = "phi_eq";

  // federation
  std::size_t clients = 5;
  std::size_t rounds = 20;
  std::size_t batch_size = 16;
  std::size_t local_epochs = 1;
  std::size_t local_steps = 10;
  double lr = 2e-4;
  double weight_decay = 0.01;
  double alpha = 0.5;
  double lambda2 = 1.0;
  std::size_t refine_steps = 10;
  double refine_lr = 2e-4;
  std::size_t threads = 1;
  std::size_t fglobal_eval = 160;

  // losses
  double mu = 0.3;
  double lambda1 = 1.0;
  std::size_t k = 1;
  bool task_loss_strict = false;
  bool task_loss_symmetric = false;

  // encoder
  std::size_t dim = 32;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t prompt_tokens = 2;
  std::size_t mlp_ratio = 2;
  double tau = 0.07;
  bool compounding = true;
  std::uint64_t backbone_seed = 2024;
  std::size_t align_samples = 2000;
  double align_ridge = 1e-2;

  // data
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t n_train = 4000;
  std::size_t n_test = 400;
  std::size_t n_val = 200;
  double rho = 0.8;
  double label_signal = 0.15;
  double group_signal = 0.3;
  double noise_sigma = 0.3;
  std::uint64_t pattern_seed = 7;
  std::string train_data;  // embedding files; both empty for synthetic data
  std::string eval_data;

  std::string out = "runs";

  friend bool operator==(const Config&, const Config&) = default;
};

// Keys accepted in files and by set_value, in serialization order.
const std::vector<std::string>& config_keys();

// Applies one key=value pair; unknown keys and bad values throw ConfigError.
void set_value(Config& c, std::string_view key, std::string_view value);
std::string get_value(const Config& c, std::string_view key);

// Flat key=value text, '#' comments. Validates the result.
Config parse_config(std::string_view text, const std::string& source = "<config>");
Config load_config(const std::string& path);
void validate(const Config& c);

std::string serialize(const Config& c);
// Covers every key except out and threads.
std::uint64_t config_hash(const Config& c);

struct RunResult {
  Config config;
  std::uint64_t config_hash = 0;
  fed::FederationReport report;
};

// Builds data, backbone and clients from the config and runs the federation.
RunResult run_experiment(const Config& c);
fed::FederationInputs build_inputs(const Config& c);
fed::FederationConfig federation_config(const Config& c);

std::string render_csv(const RunResult& r);
std::string render_summary(const RunResult& r);
// metrics.csv, summary.md, config.txt under dir.
void emit_report(const RunResult& r, const std::string& dir);

struct SweepSpec {
  std::string axis;  // alpha | clients | method
  std::vector<std::string> values;
  // Methods run at every axis value; ignored when the axis is method.
  std::vector<std::string> methods;
  std::size_t repeats = 1;
  // key=value settings the preset layers under any user config.
  std::vector<std::pair<std::string, std::string>> overrides;
};

// table1, table2, table3_4, table5.
SweepSpec preset(const std::string& name);
// The preset's overrides as config text, ready to prepend to a config file.
std::string preset_config_text(const std::string& name);

struct SweepCell {
  std::string value;
  std::string method;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  metrics::MetricRecord final;
  std::uint64_t backbone_hash = 0;
};

struct SweepResult {
  SweepSpec spec;
  std::vector<SweepCell> cells;
  bool all_ok() const;
};

// Seed of repeat r; shared by every axis value and method so cells compare
// on identical data.
std::uint64_t sweep_seed(std::uint64_t master, std::size_t repeat);
Config cell_config(const Config& base, const SweepSpec& spec, const std::string& value, const std::string& method,
                   std::size_t repeat);

// Runs every cell; cells that throw are recorded as failed. With a
// non-empty out_dir each cell writes its files under <out_dir>/<cell>/ and
// the combined sweep.csv / sweep.md land in out_dir.
SweepResult sweep(const Config& base, const SweepSpec& spec, const std::string& out_dir);

std::string render_sweep_csv(const SweepResult& s);
std::string render_sweep_markdown(const SweepResult& s);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

// Markdown table with the final global metrics of every run directory
// (config.txt + metrics.csv) below dir, in path order.
std::string collect_report(const std::string& dir);

// Writes train.emb (the configured rho) and eval.emb (rho = 0) holding the
// mean patch embedding of each synthetic image, ready for train_data /
// eval_data.
void generate_embedding_files(const Config& c, const std::string& dir);

}  // namespace fvlfp::harness
