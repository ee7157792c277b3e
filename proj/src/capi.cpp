#include "fvlfp/fvlfp.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <string>

#include "fvlfp/error.hpp"
#include "fvlfp/harness.hpp"

struct fvlfp_config {
  fvlfp::harness::Config value;
};

struct fvlfp_report {
  fvlfp::harness::RunResult value;
};

struct fvlfp_sweep {
  fvlfp::harness::SweepResult value;
};

namespace {

thread_local std::string g_last_error;

fvlfp_status fail(fvlfp_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
fvlfp_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return FVLFP_OK;
  } catch (const fvlfp::ParseError& e) {
    return fail(FVLFP_PARSE, e.what());
  } catch (const fvlfp::ConfigError& e) {
    return fail(FVLFP_CONFIG, e.what());
  } catch (const fvlfp::DimensionError& e) {
    return fail(FVLFP_DIMENSION, e.what());
  } catch (const fvlfp::NumericError& e) {
    return fail(FVLFP_NUMERIC, e.what());
  } catch (const fvlfp::IoError& e) {
    return fail(FVLFP_IO, e.what());
  } catch (const fvlfp::DataError& e) {
    return fail(FVLFP_DATA, e.what());
  } catch (const std::exception& e) {
    return fail(FVLFP_INTERNAL, e.what());
  } catch (...) {
    return fail(FVLFP_INTERNAL, "unknown exception");
  }
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

fvlfp_metrics to_c(const fvlfp::metrics::MetricRecord& m) {
  fvlfp_metrics out{};
  out.a_b = m.a_b;
  out.phi_a = m.phi_a;
  out.phi_demo = m.phi_demo;
  out.phi_eq = m.phi_eq;
  out.has_f_global = m.f_global.has_value() ? 1 : 0;
  out.f_global = m.f_global.value_or(0.0);
  return out;
}

#define REQUIRE_ARG(cond, name) \
  if (!(cond)) return fail(FVLFP_INVALID_ARGUMENT, std::string("null argument: ") + (name))

}  // namespace

extern "C" {

const char* fvlfp_last_error(void) { return g_last_error.c_str(); }

const char* fvlfp_status_name(fvlfp_status status) {
  switch (status) {
    case FVLFP_OK: return "ok";
    case FVLFP_INVALID_ARGUMENT: return "invalid argument";
    case FVLFP_PARSE: return "parse error";
    case FVLFP_CONFIG: return "config error";
    case FVLFP_DIMENSION: return "dimension error";
    case FVLFP_NUMERIC: return "numeric error";
    case FVLFP_IO: return "i/o error";
    case FVLFP_DATA: return "data error";
    case FVLFP_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void fvlfp_string_free(char* s) { std::free(s); }

fvlfp_status fvlfp_config_new(fvlfp_config** out) {
  REQUIRE_ARG(out, "out");
  return guarded([&] { *out = new fvlfp_config{}; });
}

fvlfp_status fvlfp_config_parse(const char* text, fvlfp_config** out) {
  REQUIRE_ARG(text, "text");
  REQUIRE_ARG(out, "out");
  return guarded([&] { *out = new fvlfp_config{fvlfp::harness::parse_config(text)}; });
}

fvlfp_status fvlfp_config_load(const char* path, fvlfp_config** out) {
  REQUIRE_ARG(path, "path");
  REQUIRE_ARG(out, "out");
  return guarded([&] { *out = new fvlfp_config{fvlfp::harness::load_config(path)}; });
}

fvlfp_status fvlfp_config_set(fvlfp_config* config, const char* key, const char* value) {
  REQUIRE_ARG(config, "config");
  REQUIRE_ARG(key, "key");
  REQUIRE_ARG(value, "value");
  return guarded([&] { fvlfp::harness::set_value(config->value, key, value); });
}

fvlfp_status fvlfp_config_get(const fvlfp_config* config, const char* key, char** value) {
  REQUIRE_ARG(config, "config");
  REQUIRE_ARG(key, "key");
  REQUIRE_ARG(value, "value");
  return guarded([&] { *value = dup(fvlfp::harness::get_value(config->value, key)); });
}

fvlfp_status fvlfp_config_validate(const fvlfp_config* config) {
  REQUIRE_ARG(config, "config");
  return guarded([&] { fvlfp::harness::validate(config->value); });
}

fvlfp_status fvlfp_config_serialize(const fvlfp_config* config, char** text) {
  REQUIRE_ARG(config, "config");
  REQUIRE_ARG(text, "text");
  return guarded([&] { *text = dup(fvlfp::harness::serialize(config->value)); });
}

fvlfp_status fvlfp_config_hash(const fvlfp_config* config, uint64_t* hash) {
  REQUIRE_ARG(config, "config");
  REQUIRE_ARG(hash, "hash");
  return guarded([&] { *hash = fvlfp::harness::config_hash(config->value); });
}

void fvlfp_config_free(fvlfp_config* config) { delete config; }

fvlfp_status fvlfp_run(const fvlfp_config* config, fvlfp_report** out) {
  REQUIRE_ARG(config, "config");
  REQUIRE_ARG(out, "out");
  return guarded([&] { *out = new fvlfp_report{fvlfp::harness::run_experiment(config->value)}; });
}

fvlfp_status fvlfp_report_write(const fvlfp_report* report, const char* dir) {
  REQUIRE_ARG(report, "report");
  REQUIRE_ARG(dir, "dir");
  return guarded([&] { fvlfp::harness::emit_report(report->value, dir); });
}

fvlfp_status fvlfp_report_complete(const fvlfp_report* report, int* complete, char** failure) {
  REQUIRE_ARG(report, "report");
  REQUIRE_ARG(complete, "complete");
  return guarded([&] {
    *complete = report->value.report.complete ? 1 : 0;
    if (failure) *failure = dup(report->value.report.failure);
  });
}

fvlfp_status fvlfp_report_round_count(const fvlfp_report* report, size_t* count) {
  REQUIRE_ARG(report, "report");
  REQUIRE_ARG(count, "count");
  *count = report->value.report.rounds.size();
  return FVLFP_OK;
}

fvlfp_status fvlfp_report_round(const fvlfp_report* report, size_t index, fvlfp_metrics* out) {
  REQUIRE_ARG(report, "report");
  REQUIRE_ARG(out, "out");
  const auto& rounds = report->value.report.rounds;
  if (index >= rounds.size()) {
    return fail(FVLFP_INVALID_ARGUMENT, "round index " + std::to_string(index) + " out of range");
  }
  *out = to_c(rounds[index].global);
  return FVLFP_OK;
}

fvlfp_status fvlfp_report_backbone_hash(const fvlfp_report* report, uint64_t* hash) {
  REQUIRE_ARG(report, "report");
  REQUIRE_ARG(hash, "hash");
  *hash = report->value.report.backbone_hash;
  return FVLFP_OK;
}

fvlfp_status fvlfp_report_csv(const fvlfp_report* report, char** text) {
  REQUIRE_ARG(report, "report");
  REQUIRE_ARG(text, "text");
  return guarded([&] { *text = dup(fvlfp::harness::render_csv(report->value)); });
}

fvlfp_status fvlfp_report_markdown(const fvlfp_report* report, char** text) {
  REQUIRE_ARG(report, "report");
  REQUIRE_ARG(text, "text");
  return guarded([&] { *text = dup(fvlfp::harness::render_summary(report->value)); });
}

void fvlfp_report_free(fvlfp_report* report) { delete report; }

fvlfp_status fvlfp_sweep_preset(const fvlfp_config* base, const char* preset, const char* out_dir,
                                fvlfp_sweep** out) {
  REQUIRE_ARG(base, "base");
  REQUIRE_ARG(preset, "preset");
  REQUIRE_ARG(out, "out");
  return guarded([&] {
    const auto spec = fvlfp::harness::preset(preset);
    *out = new fvlfp_sweep{fvlfp::harness::sweep(base->value, spec, out_dir ? out_dir : "")};
  });
}

fvlfp_status fvlfp_sweep_run(const fvlfp_config* base, const char* axis, const char* const* values,
                             size_t value_count, const char* const* methods, size_t method_count, size_t repeats,
                             const char* out_dir, fvlfp_sweep** out) {
  REQUIRE_ARG(base, "base");
  REQUIRE_ARG(axis, "axis");
  REQUIRE_ARG(values || value_count == 0, "values");
  REQUIRE_ARG(methods || method_count == 0, "methods");
  REQUIRE_ARG(out, "out");
  return guarded([&] {
    fvlfp::harness::SweepSpec spec;
    spec.axis = axis;
    for (size_t i = 0; i < value_count; ++i) spec.values.emplace_back(values[i]);
    for (size_t i = 0; i < method_count; ++i) spec.methods.emplace_back(methods[i]);
    spec.repeats = repeats;
    *out = new fvlfp_sweep{fvlfp::harness::sweep(base->value, spec, out_dir ? out_dir : "")};
  });
}

fvlfp_status fvlfp_sweep_cell_count(const fvlfp_sweep* sweep, size_t* count) {
  REQUIRE_ARG(sweep, "sweep");
  REQUIRE_ARG(count, "count");
  *count = sweep->value.cells.size();
  return FVLFP_OK;
}

fvlfp_status fvlfp_sweep_get_cell(const fvlfp_sweep* sweep, size_t index, fvlfp_sweep_cell* out) {
  REQUIRE_ARG(sweep, "sweep");
  REQUIRE_ARG(out, "out");
  if (index >= sweep->value.cells.size()) {
    return fail(FVLFP_INVALID_ARGUMENT, "cell index " + std::to_string(index) + " out of range");
  }
  const auto& c = sweep->value.cells[index];
  out->value = c.value.c_str();
  out->method = c.method.c_str();
  out->repeat = c.repeat;
  out->seed = c.seed;
  out->ok = c.ok ? 1 : 0;
  out->error = c.error.c_str();
  out->final_metrics = to_c(c.final);
  out->backbone_hash = c.backbone_hash;
  return FVLFP_OK;
}

fvlfp_status fvlfp_sweep_all_ok(const fvlfp_sweep* sweep, int* ok) {
  REQUIRE_ARG(sweep, "sweep");
  REQUIRE_ARG(ok, "ok");
  *ok = sweep->value.all_ok() ? 1 : 0;
  return FVLFP_OK;
}

fvlfp_status fvlfp_sweep_markdown(const fvlfp_sweep* sweep, char** text) {
  REQUIRE_ARG(sweep, "sweep");
  REQUIRE_ARG(text, "text");
  return guarded([&] { *text = dup(fvlfp::harness::render_sweep_markdown(sweep->value)); });
}

void fvlfp_sweep_free(fvlfp_sweep* sweep) { delete sweep; }

fvlfp_status fvlfp_preset_overrides(const char* preset, char** text) {
  REQUIRE_ARG(preset, "preset");
  REQUIRE_ARG(text, "text");
  return guarded([&] { *text = dup(fvlfp::harness::preset_config_text(preset)); });
}

fvlfp_status fvlfp_generate_data(const fvlfp_config* config, const char* dir) {
  REQUIRE_ARG(config, "config");
  REQUIRE_ARG(dir, "dir");
  return guarded([&] { fvlfp::harness::generate_embedding_files(config->value, dir); });
}

fvlfp_status fvlfp_collect_report(const char* dir, char** text) {
  REQUIRE_ARG(dir, "dir");
  REQUIRE_ARG(text, "text");
  return guarded([&] { *text = dup(fvlfp::harness::collect_report(dir)); });
}

}  // extern "C"
