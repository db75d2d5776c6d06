#include "seelab/seelab.h"

#include <cstring>
#include <exception>
#include <string>

#include "seelab/commands.hpp"
#include "seelab/errors.hpp"
#include "seelab/metrics.hpp"
#include "seelab/objectives.hpp"
#include "seelab/serialize.hpp"

struct seelab_config {
  seelab::ExperimentConfig value;
};

struct seelab_result {
  seelab::CommandResult value;
};

namespace {

thread_local std::string g_last_error;

seelab_status fail(seelab_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs fn and maps exceptions onto status codes.
template <class Fn>
seelab_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const std::exception& e) {
    return fail(static_cast<seelab_status>(seelab::exit_code_for(e)), e.what());
  } catch (...) {
    return fail(SEELAB_INTERNAL_ERROR, "unknown error");
  }
}

seelab::CommandOptions to_options(const seelab_options* o) {
  seelab::CommandOptions out;
  if (!o) return out;
  if (o->has_seed) out.seed = o->seed;
  out.force = o->force != 0;
  if (o->jobs < 1) throw seelab::ConfigError("jobs must be at least 1");
  out.jobs = o->jobs;
  if (o->output_root) out.output_root = o->output_root;
  out.iteration_limit = o->iteration_limit;
  if (o->mutation) out.mutation = seelab::parse_mutation(o->mutation);
  if (o->log) {
    seelab_log_fn fn = o->log;
    void* user = o->log_user;
    out.log = [fn, user](const std::string& line) { fn(line.c_str(), user); };
  }
  return out;
}

char* dup_string(const std::string& s) {
  char* p = new char[s.size() + 1];
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

seelab_status finish(seelab::CommandResult r, seelab_result** out) {
  const int code = r.exit_code;
  *out = new seelab_result{std::move(r)};
  if (code != 0) g_last_error = (*out)->value.summary;
  return static_cast<seelab_status>(code);
}

using Command = seelab::CommandResult (*)(const seelab::ExperimentConfig&, const seelab::CommandOptions&);

seelab_status run_command(Command cmd, const seelab_config* config, const seelab_options* options,
                          seelab_result** out) {
  return guarded([&] {
    if (!config || !out) return fail(SEELAB_INTERNAL_ERROR, "null argument");
    *out = nullptr;
    return finish(cmd(config->value, to_options(options)), out);
  });
}

seelab::GrayImage image(const double* px, int w, int h) {
  if (!px || w < 1 || h < 1) throw seelab::ConfigError("image needs positive dimensions and pixel data");
  return seelab::GrayImage(w, h, std::vector<double>(px, px + static_cast<std::size_t>(w) * h));
}

}  // namespace

extern "C" {

void seelab_options_init(seelab_options* o) {
  if (!o) return;
  *o = seelab_options{};
  o->jobs = 1;
  o->iteration_limit = -1;
}

const char* seelab_last_error(void) { return g_last_error.c_str(); }

const char* seelab_version(void) { return "0.1.0"; }

seelab_status seelab_config_load(const char* path, const seelab_options* options, seelab_config** out) {
  return guarded([&] {
    if (!path || !out) return fail(SEELAB_INTERNAL_ERROR, "null argument");
    *out = new seelab_config{seelab::load_config(path, to_options(options))};
    return SEELAB_OK;
  });
}

seelab_status seelab_config_parse(const char* json_text, seelab_config** out) {
  return guarded([&] {
    if (!json_text || !out) return fail(SEELAB_INTERNAL_ERROR, "null argument");
    *out = new seelab_config{seelab::experiment_config_from_json(json_text)};
    return SEELAB_OK;
  });
}

seelab_status seelab_config_default(const char* dataset, seelab_config** out) {
  return guarded([&] {
    if (!dataset || !out) return fail(SEELAB_INTERNAL_ERROR, "null argument");
    *out = new seelab_config{seelab::default_experiment(seelab::parse_dataset_id(dataset))};
    return SEELAB_OK;
  });
}

seelab_status seelab_config_set_seed(seelab_config* config, uint64_t seed) {
  return guarded([&] {
    if (!config) return fail(SEELAB_INTERNAL_ERROR, "null argument");
    config->value.seed = seed;
    config->value.propagate();
    return SEELAB_OK;
  });
}

seelab_status seelab_config_to_json(const seelab_config* config, char** out) {
  return guarded([&] {
    if (!config || !out) return fail(SEELAB_INTERNAL_ERROR, "null argument");
    *out = dup_string(seelab::experiment_config_to_json(config->value));
    return SEELAB_OK;
  });
}

seelab_status seelab_config_output_dir(const seelab_config* config, const seelab_options* options, char** out) {
  return guarded([&] {
    if (!config || !out) return fail(SEELAB_INTERNAL_ERROR, "null argument");
    *out = dup_string(seelab::output_directory(config->value, to_options(options)).string());
    return SEELAB_OK;
  });
}

void seelab_config_free(seelab_config* config) { delete config; }

void seelab_string_free(char* s) { delete[] s; }

seelab_status seelab_pretrain(const seelab_config* c, const seelab_options* o, seelab_result** out) {
  return run_command(seelab::cmd_pretrain, c, o, out);
}

seelab_status seelab_train(const seelab_config* c, const seelab_options* o, seelab_result** out) {
  return run_command(seelab::cmd_train, c, o, out);
}

seelab_status seelab_sweep(const seelab_config* c, const seelab_options* o, seelab_result** out) {
  return run_command(seelab::cmd_sweep, c, o, out);
}

seelab_status seelab_toy(const seelab_config* c, const seelab_options* o, seelab_result** out) {
  return run_command(seelab::cmd_toy, c, o, out);
}

seelab_status seelab_verify(const seelab_options* options, const char* report_path, seelab_result** out) {
  return guarded([&] {
    if (!out) return fail(SEELAB_INTERNAL_ERROR, "null argument");
    *out = nullptr;
    return finish(seelab::cmd_verify(to_options(options), report_path ? report_path : ""), out);
  });
}

int seelab_result_exit_code(const seelab_result* r) { return r ? r->value.exit_code : SEELAB_INTERNAL_ERROR; }

const char* seelab_result_summary(const seelab_result* r) { return r ? r->value.summary.c_str() : ""; }

const char* seelab_result_report(const seelab_result* r) { return r ? r->value.report.c_str() : ""; }

void seelab_result_free(seelab_result* r) { delete r; }

seelab_status seelab_flatten_distribution(const double* probs, size_t n, double gamma, double* out) {
  return guarded([&] {
    if (!probs || !out || n == 0) return fail(SEELAB_CONFIG_ERROR, "empty distribution");
    seelab::DiscretePolicy p{std::vector<double>(probs, probs + n), {}};
    const auto f = seelab::flatten_distribution(p, gamma);
    std::copy(f.probs.begin(), f.probs.end(), out);
    return SEELAB_OK;
  });
}

seelab_status seelab_closed_form_policy(const double* p_ref, const double* rewards, size_t n, double beta,
                                        double gamma, double* out) {
  return guarded([&] {
    if (!p_ref || !rewards || !out || n == 0) return fail(SEELAB_CONFIG_ERROR, "empty distribution");
    seelab::DiscretePolicy p{std::vector<double>(p_ref, p_ref + n), {}};
    const auto pi = seelab::closed_form_policy(p, std::vector<double>(rewards, rewards + n), beta, gamma);
    std::copy(pi.probs.begin(), pi.probs.end(), out);
    return SEELAB_OK;
  });
}

seelab_status seelab_bt_probability(double r_w, double r_l, double* out) {
  return guarded([&] {
    if (!out) return fail(SEELAB_INTERNAL_ERROR, "null argument");
    *out = seelab::bt_probability(r_w, r_l);
    return SEELAB_OK;
  });
}

seelab_status seelab_psnr(const double* a, const double* b, int w, int h, double peak, double* out) {
  return guarded([&] {
    if (!out) return fail(SEELAB_INTERNAL_ERROR, "null argument");
    *out = seelab::psnr(image(a, w, h), image(b, w, h), peak);
    return SEELAB_OK;
  });
}

seelab_status seelab_ssim(const double* a, const double* b, int w, int h, double peak, double* out) {
  return guarded([&] {
    if (!out) return fail(SEELAB_INTERNAL_ERROR, "null argument");
    *out = seelab::ssim(image(a, w, h), image(b, w, h), peak);
    return SEELAB_OK;
  });
}

seelab_status seelab_entropy_1d(const double* img, int w, int h, int bins, double* out) {
  return guarded([&] {
    if (!out) return fail(SEELAB_INTERNAL_ERROR, "null argument");
    *out = seelab::entropy_1d(image(img, w, h), bins);
    return SEELAB_OK;
  });
}

}  // extern "C"
