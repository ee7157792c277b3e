#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fvlfp/error.hpp"
#include "fvlfp/harness.hpp"
#include "fvlfp/rng.hpp"

namespace fvlfp::harness {

namespace {

struct Field {
  std::function<void(Config&, std::string_view)> set;
  std::function<std::string(const Config&)> get;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) + " (expected " + expected +
                    ")");
}

std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
Field integer_field(const char* key, T Config::*member) {
  return {[key, member](Config& c, std::string_view v) {
            T out{};
            auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
            if (v.empty() || ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
            c.*member = out;
          },
          [member](const Config& c) { return std::to_string(c.*member); }};
}

Field double_field(const char* key, double Config::*member) {
  return {[key, member](Config& c, std::string_view v) {
            double out = 0.0;
            std::string_view s = v;
            if (!s.empty() && s.front() == '+') s.remove_prefix(1);
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
            if (s.empty() || ec != std::errc() || p != s.data() + s.size() || !std::isfinite(out)) {
              bad_value(key, v, "a finite number");
            }
            c.*member = out;
          },
          [member](const Config& c) { return format_double(c.*member); }};
}

Field bool_field(const char* key, bool Config::*member) {
  return {[key, member](Config& c, std::string_view v) {
            if (v == "true" || v == "1") {
              c.*member = true;
            } else if (v == "false" || v == "0") {
              c.*member = false;
            } else {
              bad_value(key, v, "true or false");
            }
          },
          [member](const Config& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field string_field(std::string Config::*member) {
  return {[member](Config& c, std::string_view v) { c.*member = std::string(v); },
          [member](const Config& c) { return c.*member; }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed", integer_field("seed", &Config::seed)},
      {"method", string_field(&Config::method)},
      {"task", string_field(&Config::task)},
      {"attribute", string_field(&Config::attribute)},
      {"bias_metric", string_field(&Config::bias_metric)},
      {"clients", integer_field("clients", &Config::clients)},
      {"rounds", integer_field("rounds", &Config::rounds)},
      {"batch_size", integer_field("batch_size", &Config::batch_size)},
      {"local_epochs", integer_field("local_epochs", &Config::local_epochs)},
      {"local_steps", integer_field("local_steps", &Config::local_steps)},
      {"lr", double_field("lr", &Config::lr)},
      {"weight_decay", double_field("weight_decay", &Config::weight_decay)},
      {"alpha", double_field("alpha", &Config::alpha)},
      {"lambda2", double_field("lambda2", &Config::lambda2)},
      {"refine_steps", integer_field("refine_steps", &Config::refine_steps)},
      {"refine_lr", double_field("refine_lr", &Config::refine_lr)},
      {"threads", integer_field("threads", &Config::threads)},
      {"fglobal_eval", integer_field("fglobal_eval", &Config::fglobal_eval)},
      {"mu", double_field("mu", &Config::mu)},
      {"lambda1", double_field("lambda1", &Config::lambda1)},
      {"k", integer_field("k", &Config::k)},
      {"task_loss_strict", bool_field("task_loss_strict", &Config::task_loss_strict)},
      {"task_loss_symmetric", bool_field("task_loss_symmetric", &Config::task_loss_symmetric)},
      {"dim", integer_field("dim", &Config::dim)},
      {"layers", integer_field("layers", &Config::layers)},
      {"heads", integer_field("heads", &Config::heads)},
      {"prompt_tokens", integer_field("prompt_tokens", &Config::prompt_tokens)},
      {"mlp_ratio", integer_field("mlp_ratio", &Config::mlp_ratio)},
      {"tau", double_field("tau", &Config::tau)},
      {"compounding", bool_field("compounding", &Config::compounding)},
      {"backbone_seed", integer_field("backbone_seed", &Config::backbone_seed)},
      {"align_samples", integer_field("align_samples", &Config::align_samples)},
      {"align_ridge", double_field("align_ridge", &Config::align_ridge)},
      {"image_size", integer_field("image_size", &Config::image_size)},
      {"patch_size", integer_field("patch_size", &Config::patch_size)},
      {"n_train", integer_field("n_train", &Config::n_train)},
      {"n_test", integer_field("n_test", &Config::n_test)},
      {"n_val", integer_field("n_val", &Config::n_val)},
      {"rho", double_field("rho", &Config::rho)},
      {"label_signal", double_field("label_signal", &Config::label_signal)},
      {"group_signal", double_field("group_signal", &Config::group_signal)},
      {"noise_sigma", double_field("noise_sigma", &Config::noise_sigma)},
      {"pattern_seed", integer_field("pattern_seed", &Config::pattern_seed)},
      {"train_data", string_field(&Config::train_data)},
      {"eval_data", string_field(&Config::eval_data)},
      {"out", string_field(&Config::out)},
  };
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& [name, f] : fields())
    if (name == key) return f;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_value(Config& c, std::string_view key, std::string_view value) { field(key).set(c, trim(value)); }

std::string get_value(const Config& c, std::string_view key) { return field(key).get(c); }

void validate(const Config& c) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  fed::MethodFlags::from_name(c.method);
  require(c.bias_metric == "phi_eq" || c.bias_metric == "phi_demo" || c.bias_metric == "phi_a",
          "bias_metric must be phi_eq, phi_demo or phi_a");
  require(c.task == "smiling" || c.task == "age", "task must be smiling or age");
  require(c.attribute == "gender", "attribute must be gender");
  require(c.clients >= 1, "clients must be at least 1");
  require(c.batch_size >= 1, "batch_size must be at least 1");
  require(c.lr > 0.0, "lr must be positive");
  require(c.refine_lr > 0.0, "refine_lr must be positive");
  require(c.weight_decay >= 0.0, "weight_decay must be non-negative");
  require(c.alpha > 0.0, "alpha must be positive (Dirichlet concentration)");
  require(c.lambda1 >= 0.0, "lambda1 must be non-negative");
  require(c.lambda2 >= 0.0, "lambda2 must be non-negative");
  require(c.mu >= 0.0 && c.mu < 1.0, "mu must lie in [0, 1)");
  require(c.k >= 1 && c.k <= 2, "k must lie in [1, 2] for the two gender templates");
  require(c.prompt_tokens >= 1, "prompt_tokens (K) must be at least 1");
  require(c.threads >= 1, "threads must be at least 1");
  require(c.refine_steps == 0 || c.batch_size >= 2, "refinement needs batch_size >= 2");
  require(c.rho >= 0.0 && c.rho <= 1.0, "rho must lie in [0, 1]");
  require(c.noise_sigma >= 0.0, "noise_sigma must be non-negative");
  require(c.align_ridge > 0.0, "align_ridge must be positive");
  require(c.align_samples >= 1, "align_samples must be at least 1");
  require(c.n_test > 0 && c.n_test % 4 == 0, "n_test must be a positive multiple of 4");
  require(c.n_val > 0 && c.n_val % 4 == 0, "n_val must be a positive multiple of 4");
  require(c.train_data.empty() == c.eval_data.empty(), "train_data and eval_data must be given together");
  require(!c.train_data.empty() || c.n_train >= c.clients, "n_train must be at least the number of clients");
  require(!c.out.empty(), "out must not be empty");
  enc::EncoderConfig e;
  e.dim = c.dim;
  e.layers = c.layers;
  e.heads = c.heads;
  e.image_size = c.image_size;
  e.patch_size = c.patch_size;
  e.prompt_tokens = c.prompt_tokens;
  e.mlp_ratio = c.mlp_ratio;
  e.tau = c.tau;
  e.validate();
  require(c.image_size / c.patch_size >= 2, "image_size / patch_size must be at least 2");
}

Config parse_config(std::string_view text, const std::string& source) {
  Config c;
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    try {
      set_value(c, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate(c);
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string serialize(const Config& c) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + "=" + f.get(c) + "\n";
  return out;
}

std::uint64_t config_hash(const Config& c) {
  // Where results land and how many threads produce them do not change them.
  std::string text;
  for (const auto& [name, f] : fields())
    if (name != "out" && name != "threads") text += name + "=" + f.get(c) + "\n";
  return fnv1a(text);
}

}  // namespace fvlfp::harness
