// Command-line front end. Talks to the simulator only through the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fvlfp/fvlfp.h"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> method;
  std::optional<std::string> alpha;
  std::optional<std::string> clients;
  std::optional<std::string> rounds;
  std::optional<std::string> mu;
  std::optional<std::string> lambda1;
  std::optional<std::string> k;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "key=value config file");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--method", f.method, "fvlfp | fedavg_baseline | wo-cdfp | wo-dsop | wo-fpf");
  cmd->add_option("--alpha", f.alpha, "Dirichlet concentration");
  cmd->add_option("--clients", f.clients, "number of clients");
  cmd->add_option("--rounds", f.rounds, "federation rounds");
  cmd->add_option("--mu", f.mu, "fairness hinge margin");
  cmd->add_option("--lambda1", f.lambda1, "fairness loss weight");
  cmd->add_option("--k", f.k, "retained demographic directions");
  cmd->add_option("--set", f.sets, "extra key=value setting (repeatable)");
}

struct Failure {
  int code;
};

void check(fvlfp_status s) {
  if (s != FVLFP_OK) {
    std::cerr << "error (" << fvlfp_status_name(s) << "): " << fvlfp_last_error() << "\n";
    throw Failure{2};
  }
}

std::string take(char* s) {
  std::string out = s ? s : "";
  fvlfp_string_free(s);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot read " << path << "\n";
    throw Failure{2};
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Preset overrides, then the file, then flags; later settings win.
fvlfp_config* build_config(const CommonFlags& f, const std::string& preset = "") {
  std::string text;
  if (!preset.empty()) {
    char* t = nullptr;
    check(fvlfp_preset_overrides(preset.c_str(), &t));
    text = take(t);
  }
  if (!f.config_path.empty()) text += "\n" + read_file(f.config_path);
  fvlfp_config* c = nullptr;
  check(fvlfp_config_parse(text.c_str(), &c));
  auto set = [&](const char* key, const std::optional<std::string>& v) {
    if (v) check(fvlfp_config_set(c, key, v->c_str()));
  };
  if (f.seed) check(fvlfp_config_set(c, "seed", std::to_string(*f.seed).c_str()));
  set("out", f.out);
  set("method", f.method);
  set("alpha", f.alpha);
  set("clients", f.clients);
  set("rounds", f.rounds);
  set("mu", f.mu);
  set("lambda1", f.lambda1);
  set("k", f.k);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
      throw Failure{2};
    }
    check(fvlfp_config_set(c, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  check(fvlfp_config_validate(c));
  return c;
}

std::string config_value(const fvlfp_config* c, const char* key) {
  char* v = nullptr;
  check(fvlfp_config_get(c, key, &v));
  return take(v);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_gen_data(const CommonFlags& f) {
  fvlfp_config* c = build_config(f);
  const std::string dir = config_value(c, "out");
  const fvlfp_status s = fvlfp_generate_data(c, dir.c_str());
  fvlfp_config_free(c);
  check(s);
  std::cout << "wrote " << dir << "/train.emb and " << dir << "/eval.emb\n";
  return 0;
}

int cmd_run(const CommonFlags& f) {
  fvlfp_config* c = build_config(f);
  const std::string dir = config_value(c, "out");
  fvlfp_report* r = nullptr;
  const fvlfp_status s = fvlfp_run(c, &r);
  fvlfp_config_free(c);
  check(s);
  int complete = 0;
  char* failure = nullptr;
  check(fvlfp_report_write(r, dir.c_str()));
  check(fvlfp_report_complete(r, &complete, &failure));
  char* md = nullptr;
  check(fvlfp_report_markdown(r, &md));
  std::cout << take(md);
  const std::string why = take(failure);
  fvlfp_report_free(r);
  if (!complete) {
    std::cerr << "run incomplete: " << why << "\n";
    return 1;
  }
  return 0;
}

int cmd_sweep(const CommonFlags& f, const std::string& preset, const std::string& axis, const std::string& values,
              const std::string& methods, std::size_t repeats) {
  fvlfp_config* c = build_config(f, preset);
  const std::string dir = config_value(c, "out");
  fvlfp_sweep* sw = nullptr;
  fvlfp_status s;
  if (!preset.empty()) {
    s = fvlfp_sweep_preset(c, preset.c_str(), dir.c_str(), &sw);
  } else {
    if (axis.empty() || values.empty()) {
      fvlfp_config_free(c);
      std::cerr << "error: sweep needs --preset or --axis with --values\n";
      throw Failure{2};
    }
    const auto vs = split_list(values);
    const auto ms = split_list(methods);
    std::vector<const char*> vp, mp;
    for (const auto& v : vs) vp.push_back(v.c_str());
    for (const auto& m : ms) mp.push_back(m.c_str());
    s = fvlfp_sweep_run(c, axis.c_str(), vp.data(), vp.size(), mp.data(), mp.size(), repeats, dir.c_str(), &sw);
  }
  fvlfp_config_free(c);
  check(s);
  char* md = nullptr;
  check(fvlfp_sweep_markdown(sw, &md));
  std::cout << take(md);
  int ok = 0;
  check(fvlfp_sweep_all_ok(sw, &ok));
  std::size_t n = 0;
  check(fvlfp_sweep_cell_count(sw, &n));
  for (std::size_t i = 0; i < n; ++i) {
    fvlfp_sweep_cell cell;
    check(fvlfp_sweep_get_cell(sw, i, &cell));
    if (!cell.ok) std::cerr << "cell " << cell.value << "/" << cell.method << "/r" << cell.repeat << " failed: " << cell.error << "\n";
  }
  fvlfp_sweep_free(sw);
  return ok ? 0 : 1;
}

int cmd_report(const std::string& dir) {
  char* text = nullptr;
  check(fvlfp_collect_report(dir.c_str(), &text));
  std::cout << take(text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated fair prompt-tuning simulator"};
  app.require_subcommand(1);

  CommonFlags gen_flags, run_flags, sweep_flags;
  auto* gen = app.add_subcommand("gen-data", "write synthetic embedding files (train.emb, eval.emb)");
  add_common(gen, gen_flags);

  auto* run = app.add_subcommand("run", "run one federation and write metrics.csv, summary.md, config.txt");
  add_common(run, run_flags);

  auto* sweep = app.add_subcommand("sweep", "run a preset or an axis sweep");
  add_common(sweep, sweep_flags);
  std::string preset, axis, values, methods;
  std::size_t repeats = 1;
  sweep->add_option("--preset", preset, "table1 | table2 | table3_4 | table5");
  sweep->add_option("--axis", axis, "alpha | clients | method");
  sweep->add_option("--values", values, "comma-separated axis values");
  sweep->add_option("--methods", methods, "comma-separated methods run at every value");
  sweep->add_option("--repeats", repeats, "seeds per cell");

  auto* report = app.add_subcommand("report", "tabulate the final metrics of finished runs under a directory");
  std::string report_dir;
  report->add_option("dir", report_dir, "directory holding run outputs")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen_data(gen_flags);
    if (*run) return cmd_run(run_flags);
    if (*sweep) return cmd_sweep(sweep_flags, preset, axis, values, methods, repeats);
    if (*report) return cmd_report(report_dir);
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}
