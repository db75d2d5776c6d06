#include "seelab/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "seelab/errors.hpp"

namespace seelab {

using json = nlohmann::ordered_json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used, 16);
    if (used != s.size()) throw ConfigError("bad hex value '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("bad hex value '" + s + "'");
  }
}

json parse_document(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // Translate the byte offset into line and column.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(what + ": syntax error at line " + std::to_string(line) + ", column " + std::to_string(col));
  }
}

void check_format(const json& j, const std::string& format) {
  if (!j.is_object() || !j.contains("format") || j["format"] != format) {
    throw ConfigError("document is not a " + format + " record");
  }
  if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() > kFormatVersion) {
    throw ConfigError(format + ": unsupported version");
  }
}

// Typed access with the dotted field path in every diagnostic. done()
// rejects keys that were never read.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  T get(const char* key, T fallback) {
    if (!j_.contains(key)) return fallback;
    return required<T>(key);
  }

  template <class T>
  T required(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError("missing required field '" + name(key) + "'");
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw 0;
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw 0;
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) throw 0;
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw 0;
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw 0;
      } else if constexpr (std::is_same_v<T, std::vector<double>>) {
        if (!v.is_array()) throw 0;
        for (const auto& e : v) {
          if (!e.is_number()) throw 0;
        }
      }
      return v.get<T>();
    } catch (int) {
      throw ConfigError("field '" + name(key) + "' has the wrong type");
    }
  }

  Fields child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Fields(j_.contains(key) ? j_.at(key) : empty, name(key));
  }

  void done() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown field '" + name(k.c_str()) + "'");
    }
  }

  std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "document" : "'" + path_ + "'"; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class Parse>
auto parse_enum(Fields& f, const char* key, Parse parse, decltype(parse(std::string())) fallback) {
  if (!f.has(key)) {
    f.get<std::string>(key, "");
    return fallback;
  }
  const auto s = f.required<std::string>(key);
  try {
    return parse(s);
  } catch (const ConfigError& e) {
    throw ConfigError("field '" + f.name(key) + "': " + e.what());
  }
}

json params_json(const ParamBuffer& p) {
  return json{{"shape",
               {{"input", p.shape.input_dim},
                {"output", p.shape.output_dim},
                {"width", p.shape.width},
                {"depth", p.shape.depth}}},
              {"values", p.values}};
}

ParamBuffer params_from(const json& j) {
  ParamBuffer p;
  const auto& s = j.at("shape");
  p.shape = NetworkShape{s.at("input").get<int>(), s.at("output").get<int>(), s.at("width").get<int>(),
                         s.at("depth").get<int>()};
  p.values = j.at("values").get<std::vector<double>>();
  if (p.values.size() != parameter_count(p.shape)) throw ConfigError("parameter count does not match the shape");
  return p;
}

json spec_json(const DenoiserSpec& s) {
  return json{{"data_dim", s.data_dim},
              {"cond_dim", s.cond_dim},
              {"timesteps", s.timesteps},
              {"width", s.width},
              {"depth", s.depth}};
}

DenoiserSpec spec_from(const json& j) {
  return DenoiserSpec{j.at("data_dim").get<int>(), j.at("cond_dim").get<int>(), j.at("timesteps").get<int>(),
                      j.at("width").get<int>(), j.at("depth").get<int>()};
}

json denoiser_json(const DenoiserParams& p) { return json{{"spec", spec_json(p.spec)}, {"net", params_json(p.net)}}; }

DenoiserParams denoiser_from(const json& j) {
  DenoiserParams p{spec_from(j.at("spec")), params_from(j.at("net"))};
  if (!(p.net.shape == p.spec.shape())) throw ConfigError("denoiser network shape does not match its spec");
  return p;
}

json rm_json(const RewardModelParams& rm) {
  return json{{"data_dim", rm.data_dim},
              {"cond_dim", rm.cond_dim},
              {"time_conditioned", rm.time_conditioned},
              {"timesteps", rm.timesteps},
              {"net", params_json(rm.net)}};
}

RewardModelParams rm_from(const json& j) {
  RewardModelParams rm;
  rm.data_dim = j.at("data_dim").get<int>();
  rm.cond_dim = j.at("cond_dim").get<int>();
  rm.time_conditioned = j.at("time_conditioned").get<bool>();
  rm.timesteps = j.at("timesteps").get<int>();
  rm.net = params_from(j.at("net"));
  return rm;
}

json pair_json(const PreferencePair& p) {
  return json{{"v", kFormatVersion}, {"c", p.c}, {"x_w", p.x_w}, {"x_l", p.x_l}, {"confidence", p.confidence},
              {"t", p.t}};
}

PreferencePair pair_from(const json& j) {
  if (j.value("v", 0) > kFormatVersion || !j.contains("v")) throw ConfigError("preference pair: unsupported version");
  PreferencePair p;
  p.c = j.at("c").get<std::vector<double>>();
  p.x_w = j.at("x_w").get<std::vector<double>>();
  p.x_l = j.at("x_l").get<std::vector<double>>();
  p.confidence = j.at("confidence").get<double>();
  p.t = j.value("t", 0);
  return p;
}

json row_json(const RunLogRow& r) {
  return json{{"step", r.step},          {"proxy_reward", r.proxy_reward}, {"true_reward", r.true_reward},
              {"kl", r.kl},              {"kl_stderr", r.kl_stderr},       {"diversity", r.diversity},
              {"e2", r.e2},              {"coverage", r.coverage}};
}

RunLogRow row_from(const json& j) {
  RunLogRow r;
  r.step = j.at("step").get<int>();
  r.proxy_reward = j.at("proxy_reward").get<double>();
  r.true_reward = j.at("true_reward").get<double>();
  r.kl = j.at("kl").get<double>();
  r.kl_stderr = j.at("kl_stderr").get<double>();
  r.diversity = j.at("diversity").get<double>();
  r.e2 = j.at("e2").get<double>();
  r.coverage = j.at("coverage").get<std::vector<double>>();
  return r;
}

json log_json(const RunLog& log) {
  json rows = json::array();
  for (const auto& r : log.rows) rows.push_back(row_json(r));
  return rows;
}

RunLog log_from(const json& rows) {
  RunLog log;
  for (const auto& r : rows) log.append(row_from(r));
  return log;
}

json reward_spec_json(const RewardSpec& s) { return json{{"kind", to_string(s.kind)}, {"parameters", s.parameters}}; }

RewardSpec reward_spec_from(Fields f) {
  RewardSpec s;
  s.kind = parse_enum(f, "kind", parse_reward_kind, RewardKind::ModeSeeking);
  s.parameters = f.get<std::vector<double>>("parameters", {});
  f.done();
  return s;
}

json run_json(const RunConfig& r) {
  return json{
      {"loss",
       {{"variant", to_string(r.loss.variant)},
        {"beta", r.loss.beta},
        {"gamma", r.loss.gamma},
        {"pairing", to_string(r.loss.pairing)}}},
      {"iterations", r.iterations},
      {"pairs_per_iteration", r.pairs_per_iteration},
      {"updates_per_iteration", r.updates_per_iteration},
      {"optimizer",
       {{"learning_rate", r.adam.learning_rate},
        {"beta1", r.adam.beta1},
        {"beta2", r.adam.beta2},
        {"epsilon", r.adam.epsilon}}},
      {"eval_every", r.eval_every},
      {"eval_samples", r.eval_samples},
      {"kl_samples", r.kl_samples},
      {"online", r.online},
      {"labeling", to_string(r.labeling)},
      {"proxy", reward_spec_json(r.proxy)},
      {"truth", reward_spec_json(r.truth)},
      {"reward_model",
       {{"fit_pairs", r.reward_model.fit_pairs},
        {"width", r.reward_model.width},
        {"depth", r.reward_model.depth},
        {"epochs", r.reward_model.epochs},
        {"learning_rate", r.reward_model.learning_rate},
        {"noisy_copies", r.reward_model.noisy_copies}}}};
}

// Reads the run section on top of `r`, which already holds the defaults.
void run_from(Fields f, RunConfig& r) {
  {
    Fields l = f.child("loss");
    r.loss.variant = parse_enum(l, "variant", parse_loss_variant, r.loss.variant);
    r.loss.beta = l.get("beta", r.loss.beta);
    r.loss.gamma = l.get("gamma", r.loss.gamma);
    r.loss.pairing = parse_enum(l, "pairing", parse_pairing, default_pairing(r.loss.variant));
    l.done();
  }
  r.iterations = f.get("iterations", r.iterations);
  r.pairs_per_iteration = f.get("pairs_per_iteration", r.pairs_per_iteration);
  r.updates_per_iteration = f.get("updates_per_iteration", r.updates_per_iteration);
  {
    Fields o = f.child("optimizer");
    r.adam.learning_rate = o.get("learning_rate", r.adam.learning_rate);
    r.adam.beta1 = o.get("beta1", r.adam.beta1);
    r.adam.beta2 = o.get("beta2", r.adam.beta2);
    r.adam.epsilon = o.get("epsilon", r.adam.epsilon);
    o.done();
  }
  r.eval_every = f.get("eval_every", r.eval_every);
  r.eval_samples = f.get("eval_samples", r.eval_samples);
  r.kl_samples = f.get("kl_samples", r.kl_samples);
  r.online = f.get("online", r.online);
  r.labeling = parse_enum(f, "labeling", parse_label_mode, r.labeling);
  if (f.has("proxy")) r.proxy = reward_spec_from(f.child("proxy"));
  if (f.has("truth")) r.truth = reward_spec_from(f.child("truth"));
  {
    Fields m = f.child("reward_model");
    auto& s = r.reward_model;
    s.fit_pairs = m.get("fit_pairs", s.fit_pairs);
    s.width = m.get("width", s.width);
    s.depth = m.get("depth", s.depth);
    s.epochs = m.get("epochs", s.epochs);
    s.learning_rate = m.get("learning_rate", s.learning_rate);
    s.noisy_copies = m.get("noisy_copies", s.noisy_copies);
    m.done();
  }
  f.done();
}

json optimizer_json(const OptimizerState& o) {
  return json{{"learning_rate", o.settings.learning_rate},
              {"beta1", o.settings.beta1},
              {"beta2", o.settings.beta2},
              {"epsilon", o.settings.epsilon},
              {"step", o.step},
              {"first_moment", o.first_moment},
              {"second_moment", o.second_moment}};
}

OptimizerState optimizer_from(const json& j) {
  OptimizerState o;
  o.settings = AdamSettings{j.at("learning_rate").get<double>(), j.at("beta1").get<double>(),
                            j.at("beta2").get<double>(), j.at("epsilon").get<double>()};
  o.step = j.at("step").get<long>();
  o.first_moment = j.at("first_moment").get<std::vector<double>>();
  o.second_moment = j.at("second_moment").get<std::vector<double>>();
  return o;
}

std::vector<double> flatten_states(const std::vector<std::vector<double>>& v) {
  std::vector<double> out;
  for (const auto& x : v) out.insert(out.end(), x.begin(), x.end());
  return out;
}

template <class Fn>
auto wrap_schema(const std::string& what, Fn fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ConfigError(what + ": malformed record (" + e.what() + ")");
  }
}

}  // namespace

std::string denoiser_to_json(const DenoiserParams& params, ScheduleKind schedule) {
  json j{{"format", "seelab-denoiser"},
         {"version", kFormatVersion},
         {"schedule", to_string(schedule)},
         {"checksum", hex64(checksum(params.net))}};
  j.update(denoiser_json(params));
  return j.dump(1) + "\n";
}

DenoiserParams denoiser_from_json(const std::string& text, ScheduleKind* schedule) {
  const json j = parse_document(text, "checkpoint");
  check_format(j, "seelab-denoiser");
  return wrap_schema("checkpoint", [&] {
    DenoiserParams p = denoiser_from(j);
    if (parse_hex64(j.at("checksum").get<std::string>()) != checksum(p.net)) {
      throw ConfigError("checkpoint checksum mismatch");
    }
    if (schedule) *schedule = parse_schedule_kind(j.at("schedule").get<std::string>());
    return p;
  });
}

std::string trajectory_to_json(const Trajectory& traj) {
  json steps = json::array();
  for (const auto& s : traj.steps) {
    steps.push_back(json{{"mean", s.mean}, {"variance", s.variance}, {"noise", s.noise}});
  }
  json states = json::array();
  for (const auto& x : traj.states) states.push_back(x);
  const json j{{"format", "seelab-trajectory"},
               {"version", kFormatVersion},
               {"T", traj.T()},
               {"condition", traj.condition},
               {"states", states},
               {"steps", steps}};
  (void)flatten_states;
  return j.dump() + "\n";
}

Trajectory trajectory_from_json(const std::string& text) {
  const json j = parse_document(text, "trajectory");
  check_format(j, "seelab-trajectory");
  return wrap_schema("trajectory", [&] {
    Trajectory t;
    t.condition = j.at("condition").get<std::vector<double>>();
    for (const auto& s : j.at("states")) t.states.push_back(s.get<std::vector<double>>());
    for (const auto& s : j.at("steps")) {
      t.steps.push_back(StepRecord{s.at("mean").get<std::vector<double>>(), s.at("variance").get<double>(),
                                   s.at("noise").get<std::vector<double>>()});
    }
    if (t.states.size() != t.steps.size() + 1 || j.at("T").get<int>() != t.T()) {
      throw ConfigError("trajectory: state and step counts disagree");
    }
    return t;
  });
}

std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs) {
  std::string out;
  for (const auto& p : pairs) out += pair_json(p).dump() + "\n";
  return out;
}

std::vector<PreferencePair> pairs_from_jsonl(const std::string& text) {
  std::vector<PreferencePair> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = parse_document(line, "preference pair line " + std::to_string(out.size() + 1));
    out.push_back(wrap_schema("preference pair", [&] { return pair_from(j); }));
  }
  return out;
}

std::string runlog_to_csv(const RunLog& log) {
  std::ostringstream os;
  os.precision(17);
  os << "# seelab-runlog v" << kFormatVersion << "\n";
  const std::size_t k = log.rows.empty() ? 0 : log.rows.front().coverage.size();
  os << "step,proxy_reward,true_reward,kl,kl_stderr,diversity,e2";
  for (std::size_t i = 0; i < k; ++i) os << ",coverage_" << i;
  os << "\n";
  for (const auto& r : log.rows) {
    os << r.step << "," << r.proxy_reward << "," << r.true_reward << "," << r.kl << "," << r.kl_stderr << ","
       << r.diversity << "," << r.e2;
    for (double c : r.coverage) os << "," << c;
    os << "\n";
  }
  return os.str();
}

std::string runlog_to_json(const RunLog& log) {
  const json j{{"format", "seelab-runlog"}, {"version", kFormatVersion}, {"rows", log_json(log)}};
  return j.dump(1) + "\n";
}

RunLog runlog_from_json(const std::string& text) {
  const json j = parse_document(text, "run log");
  check_format(j, "seelab-runlog");
  return wrap_schema("run log", [&] { return log_from(j.at("rows")); });
}

std::string trainer_state_to_json(const TrainerState& s) {
  json pairs = json::array();
  for (const auto& p : s.dataset) pairs.push_back(pair_json(p));
  const json j{{"format", "seelab-trainer-state"},
               {"version", kFormatVersion},
               {"dataset_id", to_string(s.config.dataset)},
               {"schedule", to_string(s.config.schedule)},
               {"seed", s.config.seed},
               {"T", s.config.loss.T},
               {"config", run_json(s.config)},
               {"reference_checksum", hex64(s.reference_checksum)},
               {"iteration", s.iteration},
               {"policy", denoiser_json(s.policy)},
               {"optimizer", optimizer_json(s.optimizer)},
               {"proxy_model", rm_json(s.proxy_model)},
               {"step_model", s.step_model ? rm_json(*s.step_model) : json(nullptr)},
               {"proxy_fit",
                {{"final_train_loss", s.proxy_fit.final_train_loss},
                 {"heldout_accuracy", s.proxy_fit.heldout_accuracy},
                 {"train_pairs", s.proxy_fit.train_pairs},
                 {"heldout_pairs", s.proxy_fit.heldout_pairs}}},
               {"dataset", pairs},
               {"log", log_json(s.log)}};
  return j.dump() + "\n";
}

TrainerState trainer_state_from_json(const std::string& text, const DenoiserParams& reference) {
  const json j = parse_document(text, "trainer state");
  check_format(j, "seelab-trainer-state");
  return wrap_schema("trainer state", [&] {
    TrainerState s;
    s.config.dataset = parse_dataset_id(j.at("dataset_id").get<std::string>());
    s.config.schedule = parse_schedule_kind(j.at("schedule").get<std::string>());
    s.config.seed = j.at("seed").get<std::uint64_t>();
    s.config.loss.T = j.at("T").get<int>();
    run_from(Fields(j.at("config"), "config"), s.config);
    s.reference_checksum = parse_hex64(j.at("reference_checksum").get<std::string>());
    if (checksum(reference.net) != s.reference_checksum) {
      throw ConfigError("trainer state was produced from a different reference checkpoint");
    }
    s.reference = reference;
    s.schedule = make_schedule(reference.spec.timesteps, s.config.schedule);
    s.iteration = j.at("iteration").get<int>();
    s.policy = denoiser_from(j.at("policy"));
    s.optimizer = optimizer_from(j.at("optimizer"));
    s.proxy_model = rm_from(j.at("proxy_model"));
    if (!j.at("step_model").is_null()) s.step_model = rm_from(j.at("step_model"));
    const auto& f = j.at("proxy_fit");
    s.proxy_fit = RewardFitReport{f.at("final_train_loss").get<double>(), f.at("heldout_accuracy").get<double>(),
                                  f.at("train_pairs").get<int>(), f.at("heldout_pairs").get<int>()};
    for (const auto& p : j.at("dataset")) s.dataset.push_back(pair_from(p));
    s.log = log_from(j.at("log"));
    return s;
  });
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  const json j{{"version", kFormatVersion},
               {"seed", c.seed},
               {"output_dir", c.output_dir},
               {"dataset", to_string(c.dataset)},
               {"schedule", {{"kind", to_string(c.schedule)}, {"T", c.T}}},
               {"model", {{"width", c.width}, {"depth", c.depth}}},
               {"pretrain",
                {{"steps", c.pretrain.steps},
                 {"batch_size", c.pretrain.batch_size},
                 {"learning_rate", c.pretrain.adam.learning_rate}}},
               {"run", run_json(c.run)},
               {"sweep", {{"gammas", c.sweep_gammas}, {"betas", c.sweep_betas}}},
               {"toy",
                {{"p_ref", c.toy.p_ref},
                 {"rewards", c.toy.rewards},
                 {"gammas", c.toy.gammas},
                 {"steps", c.toy.steps},
                 {"pairs_per_step", c.toy.pairs_per_step},
                 {"beta", c.toy.beta},
                 {"learning_rate", c.toy.learning_rate},
                 {"clip", c.toy.clip}}}};
  return j.dump(2) + "\n";
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
  const json j = parse_document(text, "config");
  Fields f(j, "");
  const int version = f.get("version", kFormatVersion);
  if (version != kFormatVersion) throw ConfigError("field 'version': unsupported config version " + std::to_string(version));
  const DatasetId dataset = [&] {
    const auto s = f.required<std::string>("dataset");
    try {
      return parse_dataset_id(s);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("field 'dataset': ") + e.what());
    }
  }();
  ExperimentConfig c = default_experiment(dataset);
  c.seed = f.get<std::uint64_t>("seed", c.seed);
  c.output_dir = f.get("output_dir", c.output_dir);
  {
    Fields s = f.child("schedule");
    c.schedule = parse_enum(s, "kind", parse_schedule_kind, c.schedule);
    c.T = s.get("T", c.T);
    s.done();
  }
  {
    Fields m = f.child("model");
    c.width = m.get("width", c.width);
    c.depth = m.get("depth", c.depth);
    m.done();
  }
  {
    Fields p = f.child("pretrain");
    c.pretrain.steps = p.get("steps", c.pretrain.steps);
    c.pretrain.batch_size = p.get("batch_size", c.pretrain.batch_size);
    c.pretrain.adam.learning_rate = p.get("learning_rate", c.pretrain.adam.learning_rate);
    p.done();
  }
  c.propagate();
  run_from(f.child("run"), c.run);
  {
    Fields s = f.child("sweep");
    c.sweep_gammas = s.get("gammas", c.sweep_gammas);
    c.sweep_betas = s.get("betas", c.sweep_betas);
    s.done();
  }
  {
    Fields t = f.child("toy");
    c.toy.p_ref = t.get("p_ref", c.toy.p_ref);
    c.toy.rewards = t.get("rewards", c.toy.rewards);
    c.toy.gammas = t.get("gammas", c.toy.gammas);
    c.toy.steps = t.get("steps", c.toy.steps);
    c.toy.pairs_per_step = t.get("pairs_per_step", c.toy.pairs_per_step);
    c.toy.beta = t.get("beta", c.toy.beta);
    c.toy.learning_rate = t.get("learning_rate", c.toy.learning_rate);
    c.toy.clip = t.get("clip", c.toy.clip);
    t.done();
  }
  f.done();
  c.propagate();
  c.validate();
  return c;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw ConfigError("failed writing '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace seelab
