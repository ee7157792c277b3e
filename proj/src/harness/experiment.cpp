#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <sstream>
#include <numeric>

#include "fvlfp/error.hpp"
#include "fvlfp/harness.hpp"
#include "fvlfp/rng.hpp"

namespace fvlfp::harness {

namespace {

enc::EncoderConfig encoder_config(const Config& c) {
  enc::EncoderConfig e;
  e.dim = c.dim;
  e.layers = c.layers;
  e.heads = c.heads;
  e.image_size = c.image_size;
  e.patch_size = c.patch_size;
  e.prompt_tokens = c.prompt_tokens;
  e.mlp_ratio = c.mlp_ratio;
  e.tau = c.tau;
  e.compounding = c.compounding;
  e.seed = c.backbone_seed;
  return e;
}

data::SyntheticSpec synthetic_spec(const Config& c, std::size_t n, double rho, std::uint64_t seed) {
  data::SyntheticSpec s;
  s.n = n;
  s.image_size = c.image_size;
  s.patch_size = c.patch_size;
  s.label_signal = c.label_signal;
  s.group_signal = c.group_signal;
  s.spurious_strength = rho;
  s.noise_sigma = c.noise_sigma;
  s.pattern_seed = c.pattern_seed;
  s.seed = seed;
  return s;
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

fed::FederationConfig federation_config(const Config& c) {
  fed::FederationConfig f;
  f.rounds = c.rounds;
  f.train.batch_size = c.batch_size;
  f.train.epochs = c.local_epochs;
  f.train.max_steps = c.local_steps;
  f.train.adam.lr = c.lr;
  f.train.adam.weight_decay = c.weight_decay;
  f.train.mu = c.mu;
  f.train.lambda1 = c.lambda1;
  f.train.task.tau = c.tau;
  f.train.task.strict_as_printed = c.task_loss_strict;
  f.train.task.symmetric = c.task_loss_symmetric;
  f.refine.lambda2 = c.lambda2;
  f.refine.steps = c.refine_steps;
  f.refine.batch_size = c.batch_size;
  f.refine.adam.lr = c.refine_lr;
  f.refine.adam.weight_decay = c.weight_decay;
  f.method = fed::MethodFlags::from_name(c.method);
  f.bias = c.bias_metric == "phi_demo" ? fed::BiasMetric::phi_demo
           : c.bias_metric == "phi_a"  ? fed::BiasMetric::phi_a
                                       : fed::BiasMetric::phi_eq;
  f.threads = c.threads;
  f.seed = derive_seed(c.seed, "federation");
  return f;
}

fed::FederationInputs build_inputs(const Config& c) {
  validate(c);
  const enc::EncoderConfig ecfg = encoder_config(c);
  const enc::FrozenBackbone raw = enc::FrozenBackbone::create(ecfg);
  const enc::TextEncoder text(c.dim, derive_seed(c.backbone_seed, "text-tower"));
  const auto templates = enc::build_prompt_templates(c.task, c.attribute);

  fed::FederationInputs in;
  in.world.tau = c.tau;
  in.world.class_text = text.encode_all({templates.for_label(0), templates.for_label(1)});
  in.world.subspace = dsop::build_subspace(text, templates.groups, c.k, c.attribute);
  const num::Tensor group_text = text.encode_all(templates.groups);

  data::Dataset train, pool;
  if (c.train_data.empty()) {
    const auto corpus = data::generate_synthetic(
        synthetic_spec(c, c.align_samples, 0.0, derive_seed(c.backbone_seed, "alignment-corpus")));
    in.world.backbone = fed::align_backbone(raw, in.world.class_text, group_text, corpus, c.align_ridge);
    train = data::generate_synthetic(synthetic_spec(c, c.n_train, c.rho, derive_seed(c.seed, "train")));
    pool = data::generate_synthetic(
        synthetic_spec(c, 2 * (c.n_test + c.n_val), 0.0, derive_seed(c.seed, "eval-pool")));
  } else {
    train = data::load_embeddings(c.train_data);
    pool = data::load_embeddings(c.eval_data);
    in.world.backbone = fed::align_backbone(raw, in.world.class_text, group_text, train, c.align_ridge);
  }

  const auto test_ids = data::balanced_test_sample(pool.labels, pool.groups, c.n_test, derive_seed(c.seed, "test"));
  const auto val_ids =
      data::balanced_test_sample(pool.labels, pool.groups, c.n_val, derive_seed(c.seed, "val"), test_ids);
  const fed::SampleSet pool_set = fed::prepare_samples(in.world.backbone, pool);
  in.test = pool_set.subset(test_ids);
  in.val = pool_set.subset(val_ids);

  const fed::SampleSet train_set = fed::prepare_samples(in.world.backbone, train);
  const auto part =
      data::dirichlet_partition(train.labels, train.groups, c.clients, c.alpha, derive_seed(c.seed, "partition"));
  for (std::size_t i = 0; i < part.shards.size(); ++i) {
    fed::ClientState st;
    st.id = i;
    st.shard = train_set.subset(part.shards[i]);
    st.seed = derive_seed(c.seed, "client-streams");
    std::vector<std::size_t> ids(st.shard.size());
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(c.seed, {fnv1a("client-eval"), static_cast<std::uint64_t>(i)}));
    std::shuffle(ids.begin(), ids.end(), rng);
    if (c.fglobal_eval > 0 && ids.size() > c.fglobal_eval) ids.resize(c.fglobal_eval);
    std::sort(ids.begin(), ids.end());
    st.eval_ids = std::move(ids);
    in.clients.push_back(std::move(st));
  }

  std::vector<std::string> categories;
  for (std::size_t k = 0; k < c.prompt_tokens; ++k) categories.push_back(c.attribute + "/" + std::to_string(k));
  in.initial = enc::PromptSet::initial(ecfg, std::move(categories), derive_seed(c.seed, "prompts"));
  return in;
}

RunResult run_experiment(const Config& c) {
  RunResult r;
  r.config = c;
  r.config_hash = config_hash(c);
  r.report = fed::run_federation(federation_config(c), build_inputs(c));
  return r;
}

std::string render_csv(const RunResult& r) {
  std::string out = "round,client,a_b,phi_a,phi_demo,phi_eq,f_global,score,weight\n";
  for (const auto& rec : r.report.rounds) {
    if (rec.round == 0) continue;
    const std::string round = std::to_string(rec.round);
    for (std::size_t i = 0; i < rec.clients.size(); ++i) {
      const auto& c = rec.clients[i];
      out += round + "," + std::to_string(i) + "," + fmt(c.val.a_b) + "," + fmt(c.val.phi_a) + "," +
             fmt(c.val.phi_demo) + "," + fmt(c.val.phi_eq) + ",," + opt(c.score) + "," + fmt(c.weight) + "\n";
    }
    const auto& g = rec.global;
    out += round + ",global," + fmt(g.a_b) + "," + fmt(g.phi_a) + "," + fmt(g.phi_demo) + "," + fmt(g.phi_eq) + "," +
           opt(g.f_global) + ",,\n";
  }
  return out;
}

namespace {

std::string metric_row(const std::string& label, const metrics::MetricRecord& m) {
  return "| " + label + " | " + fmt(m.a_b) + " | " + fmt(m.phi_a) + " | " + fmt(m.phi_demo) + " | " + fmt(m.phi_eq) +
         " | " + (m.f_global ? fmt(*m.f_global) : std::string("n/a")) + " |\n";
}

}  // namespace

std::string render_summary(const RunResult& r) {
  const auto& rep = r.report;
  std::string out = "# Run summary\n\n";
  out += "- method: " + r.config.method + "\n";
  out += "- seed: " + std::to_string(r.config.seed) + "\n";
  out += "- clients: " + std::to_string(r.config.clients) + ", alpha: " + get_value(r.config, "alpha") +
         ", rounds: " + std::to_string(r.config.rounds) + "\n";
  out += "- config hash: " + hex(r.config_hash) + "\n";
  out += "- backbone hash: " + hex(rep.backbone_hash) + "\n";
  out += "- status: " + std::string(rep.complete ? "complete" : "incomplete (" + rep.failure + ")") + "\n\n";
  out += "| Round | A_B | Phi_A | Phi_demo | Phi_eq | F_global |\n";
  out += "|---|---|---|---|---|---|\n";
  if (!rep.rounds.empty()) {
    out += metric_row("0 (initial)", rep.rounds.front().global);
    if (rep.rounds.size() > 1) {
      out += metric_row(std::to_string(rep.rounds.back().round) + " (final)", rep.rounds.back().global);
    }
    const auto& ex = rep.rounds.back().fglobal_excluded;
    if (!ex.empty()) {
      out += "\nClients left out of F_global (no positive sample in a group):";
      for (auto i : ex) out += " " + std::to_string(i);
      out += "\n";
    }
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  f.close();
  if (!f) throw IoError("write failed for " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void emit_report(const RunResult& r, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
  write_text(dir + "/metrics.csv", render_csv(r));
  write_text(dir + "/summary.md", render_summary(r));
  write_text(dir + "/config.txt", serialize(r.config));
}

SweepSpec preset(const std::string& name) {
  // 200 local steps at learning rates around 2e-4 barely move prompts in the
  // toy tower, so the presets train faster.
  const std::vector<std::pair<std::string, std::string>> toy = {{"lr", "0.01"}, {"refine_lr", "0.01"}};
  if (name == "table1") return {"method", {"fvlfp", "fedavg_baseline"}, {}, 3, toy};
  if (name == "table2") return {"method", {"fvlfp", "wo-cdfp", "wo-dsop", "wo-fpf"}, {}, 3, toy};
  if (name == "table3_4") return {"alpha", {"100", "1", "0.5", "0.1"}, {"fvlfp", "fedavg_baseline"}, 3, toy};
  if (name == "table5") return {"clients", {"5", "10", "20", "40"}, {"fvlfp"}, 3, toy};
  throw ConfigError("unknown preset '" + name + "' (expected table1, table2, table3_4, table5)");
}

std::string preset_config_text(const std::string& name) {
  std::string out = "# preset " + name + "\n";
  for (const auto& [k, v] : preset(name).overrides) out += k + "=" + v + "\n";
  return out;
}

bool SweepResult::all_ok() const {
  return std::all_of(cells.begin(), cells.end(), [](const SweepCell& c) { return c.ok; });
}

std::uint64_t sweep_seed(std::uint64_t master, std::size_t repeat) {
  return derive_seed(master, {fnv1a("sweep-repeat"), static_cast<std::uint64_t>(repeat)});
}

Config cell_config(const Config& base, const SweepSpec& spec, const std::string& value, const std::string& method,
                   std::size_t repeat) {
  if (spec.axis != "alpha" && spec.axis != "clients" && spec.axis != "method") {
    throw ConfigError("sweep axis must be alpha, clients or method");
  }
  Config c = base;
  set_value(c, spec.axis, value);
  if (spec.axis != "method") c.method = method;
  c.seed = sweep_seed(base.seed, repeat);
  validate(c);
  return c;
}

namespace {

std::vector<std::string> cell_methods(const SweepSpec& spec, const Config& base) {
  if (spec.axis == "method") return {""};
  if (spec.methods.empty()) return {base.method};
  return spec.methods;
}

std::string cell_name(const SweepSpec& spec, const SweepCell& cell) {
  std::string n = spec.axis + "-" + cell.value;
  if (spec.axis != "method") n += "-" + cell.method;
  return n + "-r" + std::to_string(cell.repeat);
}

}  // namespace

SweepResult sweep(const Config& base, const SweepSpec& spec, const std::string& out_dir) {
  if (spec.axis != "alpha" && spec.axis != "clients" && spec.axis != "method") {
    throw ConfigError("sweep axis must be alpha, clients or method");
  }
  if (spec.values.empty()) throw ConfigError("sweep needs at least one axis value");
  if (spec.repeats == 0) throw ConfigError("sweep needs at least one repeat");
  SweepResult res;
  res.spec = spec;
  for (const auto& value : spec.values) {
    for (const auto& m : cell_methods(spec, base)) {
      for (std::size_t r = 0; r < spec.repeats; ++r) {
        SweepCell cell;
        cell.value = value;
        cell.repeat = r;
        cell.method = spec.axis == "method" ? value : m;
        cell.seed = sweep_seed(base.seed, r);
        try {
          Config c = cell_config(base, spec, value, m, r);
          if (!out_dir.empty()) c.out = out_dir + "/" + cell_name(spec, cell);
          const RunResult run = run_experiment(c);
          if (!out_dir.empty()) emit_report(run, c.out);
          cell.backbone_hash = run.report.backbone_hash;
          cell.final = run.report.rounds.back().global;
          cell.ok = run.report.complete;
          if (!cell.ok) cell.error = run.report.failure;
        } catch (const std::exception& e) {
          cell.ok = false;
          cell.error = e.what();
        }
        res.cells.push_back(std::move(cell));
      }
    }
  }
  if (!out_dir.empty()) {
    write_text(out_dir + "/sweep.csv", render_sweep_csv(res));
    write_text(out_dir + "/sweep.md", render_sweep_markdown(res));
  }
  return res;
}

std::string render_sweep_csv(const SweepResult& s) {
  std::string out = s.spec.axis + ",method,repeat,seed,status,a_b,phi_a,phi_demo,phi_eq,f_global\n";
  for (const auto& c : s.cells) {
    out += c.value + "," + c.method + "," + std::to_string(c.repeat) + "," + std::to_string(c.seed) + "," +
           (c.ok ? "ok" : "failed");
    if (c.ok) {
      out += "," + fmt(c.final.a_b) + "," + fmt(c.final.phi_a) + "," + fmt(c.final.phi_demo) + "," +
             fmt(c.final.phi_eq) + "," + opt(c.final.f_global) + "\n";
    } else {
      out += ",,,,,\n";
    }
  }
  return out;
}

std::string render_sweep_markdown(const SweepResult& s) {
  std::vector<std::string> methods;
  for (const auto& c : s.cells)
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
  const bool by_method = s.spec.axis == "method";
  std::string out = "# Sweep over " + s.spec.axis + " (" + std::to_string(s.spec.repeats) + " seeds, mean +- sd)\n";
  const std::vector<std::pair<std::string, std::function<std::optional<double>(const metrics::MetricRecord&)>>>
      columns = {
          {"A_B", [](const metrics::MetricRecord& m) { return std::optional<double>(m.a_b); }},
          {"Phi_A", [](const metrics::MetricRecord& m) { return std::optional<double>(m.phi_a); }},
          {"Phi_demo", [](const metrics::MetricRecord& m) { return std::optional<double>(m.phi_demo); }},
          {"Phi_eq", [](const metrics::MetricRecord& m) { return std::optional<double>(m.phi_eq); }},
          {"F_global", [](const metrics::MetricRecord& m) { return m.f_global; }},
      };
  auto stat = [&](const std::string& value, const std::string& method, const auto& get) {
    std::vector<double> xs;
    std::size_t failed = 0;
    for (const auto& c : s.cells) {
      if (c.value != value || c.method != method) continue;
      if (!c.ok) {
        ++failed;
        continue;
      }
      if (auto v = get(c.final)) xs.push_back(*v);
    }
    if (xs.empty()) return std::string(failed ? "failed" : "n/a");
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f +- %.4f", mean, sd);
    std::string r = buf;
    if (failed) r += " (" + std::to_string(failed) + " failed)";
    return r;
  };
  if (by_method) {
    out += "\n| Method | A_B | Phi_A | Phi_demo | Phi_eq | F_global |\n|---|---|---|---|---|---|\n";
    for (const auto& v : s.spec.values) {
      out += "| " + v;
      for (const auto& [name, get] : columns) out += " | " + stat(v, v, get);
      out += " |\n";
    }
    return out;
  }
  for (const auto& [name, get] : columns) {
    out += "\n## " + name + "\n\n| Method |";
    for (const auto& v : s.spec.values) out += " " + s.spec.axis + "=" + v + " |";
    out += "\n|---|";
    for (std::size_t i = 0; i < s.spec.values.size(); ++i) out += "---|";
    out += "\n";
    for (const auto& m : methods) {
      out += "| " + m + " |";
      for (const auto& v : s.spec.values) out += " " + stat(v, m, get) + " |";
      out += "\n";
    }
  }
  return out;
}

std::string collect_report(const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir);
  std::vector<fs::path> runs;
  for (auto it = fs::recursive_directory_iterator(dir, ec); !ec && it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (it->is_directory() && fs::exists(it->path() / "metrics.csv") && fs::exists(it->path() / "config.txt")) {
      runs.push_back(it->path());
    }
  }
  if (fs::exists(fs::path(dir) / "metrics.csv") && fs::exists(fs::path(dir) / "config.txt")) runs.push_back(dir);
  std::sort(runs.begin(), runs.end());
  std::string out = "| Run | Method | alpha | N | Seed | Rounds | A_B | Phi_A | Phi_demo | Phi_eq | F_global |\n";
  out += "|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& run : runs) {
    const std::string cfg_path = (run / "config.txt").string();
    const Config c = parse_config(read_text(cfg_path), cfg_path);
    std::istringstream csv(read_text((run / "metrics.csv").string()));
    std::string line, last;
    while (std::getline(csv, line))
      if (line.find(",global,") != std::string::npos) last = line;
    std::vector<std::string> f;
    std::string_view rest(last);
    while (!last.empty()) {
      const auto comma = rest.find(',');
      f.emplace_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    const std::string name = fs::relative(run, dir, ec).string();
    out += "| " + (name.empty() ? std::string(".") : name) + " | " + c.method + " | " + get_value(c, "alpha") + " | " +
           std::to_string(c.clients) + " | " + std::to_string(c.seed) + " | ";
    if (f.size() < 7) {
      out += "0 | n/a | n/a | n/a | n/a | n/a |\n";
    } else {
      out += f[0] + " | " + f[2] + " | " + f[3] + " | " + f[4] + " | " + f[5] + " | " +
             (f[6].empty() ? std::string("n/a") : f[6]) + " |\n";
    }
  }
  return out;
}

void generate_embedding_files(const Config& c, const std::string& dir) {
  validate(c);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
  const auto backbone = enc::FrozenBackbone::create(encoder_config(c));
  auto pooled = [&](const data::Dataset& images) {
    const fed::SampleSet set = fed::prepare_samples(backbone, images);
    data::Dataset out;
    out.feature_dim = c.dim;
    out.labels = images.labels;
    out.groups = images.groups;
    out.values.assign(images.size() * c.dim, 0.0);
    for (std::size_t i = 0; i < images.size(); ++i)
      for (std::size_t j = 0; j < set.tokens; ++j)
        for (std::size_t d = 0; d < c.dim; ++d)
          out.values[i * c.dim + d] += set.patches.at(i * set.tokens + j, d) / static_cast<double>(set.tokens);
    return out;
  };
  data::write_embeddings(
      dir + "/train.emb",
      pooled(data::generate_synthetic(synthetic_spec(c, c.n_train, c.rho, derive_seed(c.seed, "train")))));
  data::write_embeddings(dir + "/eval.emb", pooled(data::generate_synthetic(synthetic_spec(
                                                c, 2 * (c.n_test + c.n_val), 0.0, derive_seed(c.seed, "eval-pool")))));
}

}  // namespace fvlfp::harness
