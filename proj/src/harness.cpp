#include "mpcflow/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include <CLI11.hpp>

#include "mpcflow/checkpoint.hpp"
#include "mpcflow/data.hpp"
#include "mpcflow/errors.hpp"
#include "mpcflow/image_io.hpp"

namespace mpcflow::harness {

using nlohmann::json;

namespace {

constexpr std::size_t kImageSide = 16;

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void reject_unknown(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError(join(path, key), "unknown field");
  }
}

const json& require_object(const json& doc, const std::string& path) {
  if (!doc.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  return doc;
}

double get_number(const json& obj, const std::string& key, const std::string& path, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(join(path, key), "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(join(path, key), "must be finite");
  return x;
}

std::uint64_t get_count(const json& obj, const std::string& key, const std::string& path, std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw ConfigError(join(path, key), "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

bool get_bool(const json& obj, const std::string& key, const std::string& path, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_boolean()) throw ConfigError(join(path, key), "expected true or false");
  return obj.at(key).get<bool>();
}

std::string get_string(const json& obj, const std::string& key, const std::string& path, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_string()) throw ConfigError(join(path, key), "expected a string");
  return obj.at(key).get<std::string>();
}

Vec get_vector(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw ConfigError(path, "expected a non-empty array of numbers");
  Vec out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected a number");
    out.push_back(v[i].get<double>());
  }
  return out;
}

Prediction parse_prediction(const json& v, const std::string& path) {
  if (v == "velocity") return Prediction::Velocity;
  if (v == "data") return Prediction::Data;
  throw ConfigError(path, "expected \"velocity\" or \"data\"");
}

std::string prediction_name(Prediction p) { return p == Prediction::Data ? "data" : "velocity"; }

TrainConfig parse_train(const json& obj, const std::string& path, std::uint64_t seed) {
  require_object(obj, path);
  reject_unknown(obj, path,
                 {"dataset", "hidden", "iterations", "batch_size", "learning_rate", "frequencies", "seed", "prediction"});
  TrainConfig c;
  c.dataset = get_string(obj, "dataset", path, c.dataset);
  try {
    dataset_sampler(c.dataset);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(join(path, "dataset"), e.what());
  }
  if (obj.contains("hidden")) {
    c.hidden.clear();
    for (double w : get_vector(obj.at("hidden"), join(path, "hidden"))) {
      if (w < 1 || w != std::floor(w)) throw ConfigError(join(path, "hidden"), "widths must be positive integers");
      c.hidden.push_back(static_cast<std::size_t>(w));
    }
  }
  c.iterations = get_count(obj, "iterations", path, c.iterations);
  c.batch_size = get_count(obj, "batch_size", path, c.batch_size);
  c.learning_rate = get_number(obj, "learning_rate", path, c.learning_rate);
  c.frequency_count = get_count(obj, "frequencies", path, c.frequency_count);
  c.seed = get_count(obj, "seed", path, seed);
  if (obj.contains("prediction")) c.prediction = parse_prediction(obj.at("prediction"), join(path, "prediction"));
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw ConfigError(path, e.what());
  }
  return c;
}

ModelSpec parse_model(const json& obj) {
  require_object(obj, "model");
  reject_unknown(obj, "model", {"checkpoint", "train", "prediction"});
  ModelSpec m;
  if (obj.contains("checkpoint") == obj.contains("train")) {
    throw ConfigError("model", "give exactly one of \"checkpoint\" or \"train\"");
  }
  if (obj.contains("checkpoint")) {
    m.checkpoint = get_string(obj, "checkpoint", "model", "");
    if (!fs::exists(*m.checkpoint)) throw ConfigError("model.checkpoint", "no such file: " + m.checkpoint->string());
    if (obj.contains("prediction")) m.prediction = parse_prediction(obj.at("prediction"), "model.prediction");
  } else {
    if (obj.contains("prediction")) throw ConfigError("model.prediction", "set it inside model.train");
    m.train = parse_train(obj.at("train"), "model.train", 0);
  }
  return m;
}

OperatorSpec parse_operator(const json& obj, const std::string& path) {
  require_object(obj, path);
  reject_unknown(obj, path, {"op", "keep_fraction", "seed", "box", "blur_sigma", "angles", "gamma"});
  OperatorSpec s;
  s.op = get_string(obj, "op", path, s.op);
  s.keep_fraction = get_number(obj, "keep_fraction", path, s.keep_fraction);
  s.seed = get_count(obj, "seed", path, s.seed);
  s.box = get_count(obj, "box", path, s.box);
  s.blur_sigma = get_number(obj, "blur_sigma", path, s.blur_sigma);
  s.angles = get_count(obj, "angles", path, s.angles);
  s.gamma = get_number(obj, "gamma", path, s.gamma);
  try {
    make_operator(s, kImageSide, kImageSide);
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
  return s;
}

TaskSpec parse_task(const json& obj) {
  require_object(obj, "task");
  reject_unknown(obj, "task", {"kind", "name", "target", "operator", "sigma", "likelihood", "count", "image_seed"});
  TaskSpec t;
  const std::string kind = get_string(obj, "kind", "task", "target");
  t.count = get_count(obj, "count", "task", 1);
  if (t.count < 1) throw ConfigError("task.count", "must be at least 1");
  if (kind == "target") {
    t.kind = TaskKind::Target;
    t.name = get_string(obj, "name", "task", "corner");
    t.target = obj.contains("target") ? get_vector(obj.at("target"), "task.target") : hexagon_lower_right_corner();
    for (const char* key : {"operator", "sigma", "likelihood", "image_seed"}) {
      if (obj.contains(key)) throw ConfigError(join("task", key), "only valid for image tasks");
    }
  } else if (kind == "image") {
    t.kind = TaskKind::Image;
    if (!obj.contains("operator")) throw ConfigError("task.operator", "required for image tasks");
    t.op = parse_operator(obj.at("operator"), "task.operator");
    t.name = get_string(obj, "name", "task", t.op.op);
    t.sigma = get_number(obj, "sigma", "task", 0.0);
    if (t.sigma < 0.0) throw ConfigError("task.sigma", "must be non-negative");
    const std::string scale = get_string(obj, "likelihood", "task", "inverse-variance");
    if (scale == "inverse-variance") {
      t.scale = LikelihoodScale::InverseVariance;
    } else if (scale == "unscaled") {
      t.scale = LikelihoodScale::Unscaled;
    } else {
      throw ConfigError("task.likelihood", "expected \"inverse-variance\" or \"unscaled\"");
    }
    if (obj.contains("image_seed")) t.image_seed = get_count(obj, "image_seed", "task", 0);
    if (obj.contains("target")) throw ConfigError("task.target", "only valid for target tasks");
  } else {
    throw ConfigError("task.kind", "expected \"target\" or \"image\", got \"" + kind + "\"");
  }
  return t;
}

/// Returns whether K was given.
bool parse_guidance(const json& obj, GuidanceConfig& g) {
  require_object(obj, "guidance");
  reject_unknown(obj, "guidance", {"lambda", "N", "K", "inner_iterations", "lr", "rescale_lambda", "warm_start",
                                   "single_step", "rel_tol", "patience"});
  g.lambda = get_number(obj, "lambda", "guidance", g.lambda);
  g.steps = get_count(obj, "N", "guidance", g.steps);
  bool has_k = false;
  if (obj.contains("K")) {
    has_k = true;
    if (obj.at("K").is_string()) {
      if (obj.at("K").get<std::string>() != "full") throw ConfigError("guidance.K", "expected an integer or \"full\"");
      g.horizon = 0;
    } else {
      g.horizon = get_count(obj, "K", "guidance", 1);
      if (g.horizon < 1) throw ConfigError("guidance.K", "must be at least 1 (use \"full\" for the whole grid)");
    }
  }
  g.inner_iterations = get_count(obj, "inner_iterations", "guidance", g.inner_iterations);
  g.learning_rate = get_number(obj, "lr", "guidance", g.learning_rate);
  g.rescale_lambda = get_bool(obj, "rescale_lambda", "guidance", g.rescale_lambda);
  g.warm_start = get_bool(obj, "warm_start", "guidance", g.warm_start);
  const std::string mode = get_string(obj, "single_step", "guidance", "short");
  if (mode == "short") {
    g.single_step = SingleStepMode::ShortStep;
  } else if (mode == "one-shot") {
    g.single_step = SingleStepMode::OneShot;
  } else {
    throw ConfigError("guidance.single_step", "expected \"short\" or \"one-shot\"");
  }
  g.rel_tol = get_number(obj, "rel_tol", "guidance", g.rel_tol);
  g.patience = get_count(obj, "patience", "guidance", g.patience);
  try {
    g.validate();
  } catch (const DomainError& e) {
    throw ConfigError("guidance", e.what());
  }
  return has_k;
}

SweepSpec parse_sweep(const json& obj) {
  require_object(obj, "sweep");
  reject_unknown(obj, "sweep", {"K", "lambda", "N"});
  if (obj.size() != 1) throw ConfigError("sweep", "give exactly one of \"K\", \"lambda\" or \"N\"");
  SweepSpec s;
  s.parameter = obj.begin().key();
  s.values = get_vector(obj.begin().value(), join("sweep", s.parameter));
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double v = s.values[i];
    const std::string where = join("sweep", s.parameter) + "[" + std::to_string(i) + "]";
    if (s.parameter == "lambda") {
      if (v < 0.0) throw ConfigError(where, "must be non-negative");
    } else if (v < 1.0 || v != std::floor(v)) {
      throw ConfigError(where, "must be a positive integer");
    }
  }
  return s;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json number_or_null(std::optional<double> v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

void append_results(const fs::path& path, const std::vector<std::string>& lines) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  if (fresh) out << results_csv_header() << '\n';
  for (const auto& line : lines) out << line << '\n';
}

std::string indexed(const std::string& stem, std::size_t i, const std::string& ext) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%03zu", i);
  return stem + buf + ext;
}

Image as_image(const Vec& pixels) { return Image{kImageSide, kImageSide, pixels}; }

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::optional<std::size_t> reported_horizon(Method method, const GuidanceConfig& g) {
  if (method == Method::Rhc) return g.horizon;
  if (method == Method::RhcSingle) return 1;
  return std::nullopt;
}

std::string solver_context(const std::string& where, const SolverError& e) {
  std::string what = e.what();
  const auto cut = what.rfind(" (outer step");
  if (cut != std::string::npos) what.resize(cut);
  return where + ": " + what;
}

}  // namespace

RunConfig parse_config(const json& doc, const std::string& command) {
  static const std::set<std::string> commands{"train", "sample", "guide", "sweep-k"};
  if (!commands.count(command)) throw ConfigError("<command>", "unknown command \"" + command + "\"");
  require_object(doc, "");
  reject_unknown(doc, "", {"seed", "output", "parallel", "train", "model", "task", "method", "guidance", "sample",
                           "sweep"});
  RunConfig c;
  c.command = command;
  c.seed = get_count(doc, "seed", "", 0);
  if (doc.contains("output")) c.output = get_string(doc, "output", "", "");
  c.parallel = get_count(doc, "parallel", "", 1);
  if (c.parallel < 1) throw ConfigError("parallel", "must be at least 1");

  if (command == "train") {
    if (!doc.contains("train")) throw ConfigError("train", "required for the train command");
    c.train = parse_train(doc.at("train"), "train", c.seed);
    return c;
  }

  if (!doc.contains("model")) throw ConfigError("model", "required for the " + command + " command");
  c.model = parse_model(doc.at("model"));

  if (command == "sample") {
    if (doc.contains("sample")) {
      const json& s = require_object(doc.at("sample"), "sample");
      reject_unknown(s, "sample", {"n", "steps", "trajectories"});
      c.sample.n = get_count(s, "n", "sample", c.sample.n);
      c.sample.steps = get_count(s, "steps", "sample", c.sample.steps);
      c.sample.trajectories = get_count(s, "trajectories", "sample", c.sample.trajectories);
      if (c.sample.n < 1) throw ConfigError("sample.n", "must be at least 1");
      if (c.sample.steps < 1) throw ConfigError("sample.steps", "must be at least 1");
    }
    return c;
  }

  if (!doc.contains("task")) throw ConfigError("task", "required for the " + command + " command");
  c.task = parse_task(doc.at("task"));
  const bool sweeping = command == "sweep-k";
  if (sweeping) {
    if (!doc.contains("sweep")) throw ConfigError("sweep", "required for the sweep-k command");
    c.sweep = parse_sweep(doc.at("sweep"));
  }

  std::string method = sweeping && c.sweep.parameter == "K" ? "rhc" : "";
  method = get_string(doc, "method", "", method);
  if (method.empty()) throw ConfigError("method", "required (global, rhc, rhc1 or deltat)");
  try {
    c.method = parse_method(method);
  } catch (const DomainError& e) {
    throw ConfigError("method", e.what());
  }
  if (sweeping && c.sweep.parameter == "K" && c.method != Method::Rhc) {
    throw ConfigError("method", "a K sweep runs rhc");
  }

  const bool has_k = doc.contains("guidance") && parse_guidance(doc.at("guidance"), c.guidance);
  if (has_k && c.method != Method::Rhc) throw ConfigError("guidance.K", "only valid for method rhc");
  if (has_k && sweeping && c.sweep.parameter == "K") throw ConfigError("guidance.K", "is set by the sweep");
  if (!has_k && c.method == Method::Rhc && !(sweeping && c.sweep.parameter == "K")) {
    throw ConfigError("guidance.K", "required for method rhc");
  }
  return c;
}

RunConfig load_config(const fs::path& path, const std::string& command) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc, command);
}

fs::path resolve_output(const std::optional<fs::path>& flag, const RunConfig& config) {
  if (flag) return *flag;
  if (const char* env = std::getenv("MPCFLOW_OUT"); env != nullptr && *env != '\0') return env;
  if (config.output) return *config.output;
  return "runs";
}

Vec job_start(std::size_t dim, std::uint64_t seed) { return sample_base(1, dim, seed).front(); }

fs::path sidecar_path(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".json"); }

FieldPtr as_field(MlpVectorField network, Prediction prediction) {
  if (prediction == Prediction::Data) return std::make_shared<DataPredictionField>(std::move(network));
  return std::make_shared<MlpVectorField>(std::move(network));
}

FieldPtr obtain_model(const ModelSpec& spec) {
  if (spec.train) return as_field(train(dataset_sampler(spec.train->dataset), *spec.train).model, spec.train->prediction);
  if (!spec.checkpoint) throw ConfigError("model", "no checkpoint or training block");
  Prediction prediction = Prediction::Velocity;
  if (spec.prediction) {
    prediction = *spec.prediction;
  } else if (const fs::path side = sidecar_path(*spec.checkpoint); fs::exists(side)) {
    std::ifstream in(side, std::ios::binary);
    json meta;
    try {
      meta = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("model.checkpoint", side.string() + " is not valid JSON: " + e.what());
    }
    if (meta.contains("prediction")) prediction = parse_prediction(meta.at("prediction"), side.string() + ":prediction");
  }
  return as_field(load_checkpoint(*spec.checkpoint), prediction);
}

std::vector<Job> make_jobs(const TaskSpec& task, std::size_t dim, std::uint64_t seed) {
  std::vector<Job> jobs(task.count);
  if (task.kind == TaskKind::Target) {
    if (task.target.size() != dim) {
      throw ConfigError("task.target", "has " + std::to_string(task.target.size()) + " coordinates but the model has " +
                                           std::to_string(dim));
    }
    const LossPtr loss = corner_target_loss(task.target);
    for (std::size_t j = 0; j < jobs.size(); ++j) jobs[j] = Job{j, job_start(dim, seed + j), loss, task.target, {}, {}};
    return jobs;
  }
  if (dim != kImageSide * kImageSide) {
    throw ConfigError("task", "image tasks need a 256-dimensional model, got " + std::to_string(dim));
  }
  const OperatorPtr op = make_operator(task.op, kImageSide, kImageSide);
  std::vector<Vec> fixed;
  if (task.image_seed) fixed = sample_discs16(task.count, *task.image_seed);
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const Rng streams(seed + j);
    Vec truth = task.image_seed ? fixed[j] : sample_discs16(1, streams.split(1).next_u64()).front();
    Observation obs = simulate_measurement(op, truth, task.sigma, streams.split(2).next_u64());
    Vec degraded = op->observation_image(obs.y);
    jobs[j] = Job{j, job_start(dim, seed + j), terminal_loss(std::move(obs), task.scale), truth, truth,
                  std::move(degraded)};
  }
  return jobs;
}

JobOutcome run_job(const VectorField& field, const Job& job, Method method, const GuidanceConfig& config) {
  JobOutcome out;
  out.result = solve(method, field, job.x0, *job.loss, config);
  const Vec& terminal = out.result.terminal();
  out.metrics.terminal_loss = out.result.terminal_loss;
  out.metrics.control_energy = out.result.energy;
  out.terminal_error = distance(terminal, job.reference);
  if (job.truth) {
    Vec restored = terminal;
    for (double& v : restored) v = std::clamp(v, 0.0, 1.0);
    out.metrics.psnr = psnr(restored, *job.truth);
    out.metrics.ssim = ssim(restored, *job.truth, kImageSide, kImageSide);
    out.degraded_psnr = psnr(*job.degraded, *job.truth);
  }
  return out;
}

std::vector<SweepRow> sweep(const VectorField& field, const Job& job, Method method, const GuidanceConfig& config,
                            const SweepSpec& spec) {
  auto row_for = [&](double value, const GuidanceResult& r, const GuidanceResult& global) {
    return SweepRow{value, trajectory_distance(r.trajectory, global.trajectory), distance(r.terminal(), job.reference),
                    r.energy, r.objective};
  };
  std::vector<SweepRow> rows;
  if (spec.parameter == "K") {
    const GuidanceResult global = global_control_solve(field, job.x0, *job.loss, config);
    for (double k : spec.values) {
      GuidanceConfig g = config;
      g.horizon = static_cast<std::size_t>(k);
      rows.push_back(row_for(k, mpc_rhc(field, job.x0, *job.loss, g), global));
    }
    return rows;
  }
  for (double v : spec.values) {
    GuidanceConfig g = config;
    if (spec.parameter == "lambda") {
      g.lambda = v;
    } else {
      g.steps = static_cast<std::size_t>(v);
    }
    const GuidanceResult global = global_control_solve(field, job.x0, *job.loss, g);
    rows.push_back(row_for(v, solve(method, field, job.x0, *job.loss, g), global));
  }
  return rows;
}

std::string sweep_csv(const SweepSpec& spec, const std::vector<SweepRow>& rows) {
  std::string text = spec.parameter + ",traj_distance,terminal_error,energy,J\n";
  for (const SweepRow& r : rows) {
    text += fmt(r.value) + "," + fmt(r.trajectory_distance) + "," + fmt(r.terminal_error) + "," + fmt(r.energy) + "," +
            fmt(r.objective) + "\n";
  }
  return text;
}

TrainOutput cmd_train(const RunConfig& config, const fs::path& out) {
  fs::create_directories(out);
  TrainOutput o{train(dataset_sampler(config.train.dataset), config.train), out / "model.ckpt", out / "loss.csv"};
  save_checkpoint(o.result.model, o.checkpoint);
  const json meta{{"dataset", config.train.dataset},
                  {"prediction", prediction_name(config.train.prediction)},
                  {"iterations", config.train.iterations},
                  {"batch_size", config.train.batch_size},
                  {"learning_rate", config.train.learning_rate},
                  {"seed", config.train.seed}};
  write_text(sidecar_path(o.checkpoint), meta.dump(2) + "\n");
  std::string text = "iter,loss\n";
  for (std::size_t i = 0; i < o.result.losses.size(); ++i) text += std::to_string(i) + "," + fmt(o.result.losses[i]) + "\n";
  write_text(o.loss_csv, text);
  return o;
}

void cmd_sample(const RunConfig& config, const fs::path& out) {
  fs::create_directories(out);
  const FieldPtr field = obtain_model(config.model);
  const VectorField& model = *field;
  const std::size_t d = model.dim();
  std::vector<Vec> starts;
  for (std::size_t i = 0; i < config.sample.n; ++i) starts.push_back(job_start(d, config.seed + i));
  std::string text = "i";
  for (std::size_t k = 0; k < d; ++k) text += ",x_" + std::to_string(k);
  text += "\n";
  std::size_t near = 0;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const Trajectory traj = euler_sample(model, starts[i], config.sample.steps);
    const Vec& x = traj.terminal();
    text += std::to_string(i);
    for (double v : x) text += "," + fmt(v);
    text += "\n";
    if (i < config.sample.trajectories) {
      write_trajectory_csv(out / indexed("trajectory", i, ".csv"), traj);
      if (d == kImageSide * kImageSide) write_pgm(out / indexed("sample", i, ".pgm"), as_image(x));
    }
    if (d == 2 && distance_to_hexagon(x) < 0.15) ++near;
  }
  write_text(out / "samples.csv", text);
  json summary{{"command", "sample"}, {"n", config.sample.n}, {"N", config.sample.steps}, {"seed", config.seed},
               {"dim", d}};
  if (d == 2) summary["hexagon_fraction_within_0.15"] = static_cast<double>(near) / static_cast<double>(starts.size());
  write_text(out / "summary.json", summary.dump(2) + "\n");
}

std::vector<JobOutcome> cmd_guide(const RunConfig& config, const fs::path& out) {
  fs::create_directories(out);
  const FieldPtr field = obtain_model(config.model);
  const VectorField& model = *field;
  const std::vector<Job> jobs = make_jobs(config.task, model.dim(), config.seed);
  std::vector<std::optional<JobOutcome>> slots(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::vector<std::optional<SolverError>> failures(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        slots[j] = run_job(model, jobs[j], config.method, config.guidance);
      } catch (const SolverError& e) {
        failures[j].emplace(solver_context(to_string(config.method) + " job " + std::to_string(j), e), e.outer_step(),
                            e.inner_iteration());
      }
    }
  };
  const std::size_t threads = std::min(config.parallel, jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failures) {
    if (f) throw *f;
  }

  std::vector<JobOutcome> outcomes;
  for (auto& s : slots) outcomes.push_back(std::move(*s));
  const bool image = config.task.kind == TaskKind::Image;
  const std::optional<std::size_t> horizon = reported_horizon(config.method, config.guidance);
  std::vector<std::string> lines;
  json runs = json::array();
  double sum_j = 0, sum_e = 0, sum_l = 0, sum_err = 0, sum_t = 0, sum_p = 0, sum_s = 0, sum_dp = 0;
  for (std::size_t j = 0; j < outcomes.size(); ++j) {
    const JobOutcome& o = outcomes[j];
    write_trajectory_csv(out / indexed("trajectory", j, ".csv"), o.result.trajectory);
    if (image) {
      Vec restored = o.result.terminal();
      write_pgm(out / indexed("truth", j, ".pgm"), as_image(*jobs[j].truth));
      write_pgm(out / indexed("degraded", j, ".pgm"), as_image(*jobs[j].degraded));
      write_pgm(out / indexed("restored", j, ".pgm"), as_image(restored));
      sum_p += *o.metrics.psnr;
      sum_s += *o.metrics.ssim;
      sum_dp += *o.degraded_psnr;
    }
    sum_j += o.result.objective;
    sum_e += o.result.energy;
    sum_l += o.result.terminal_loss;
    sum_err += o.terminal_error;
    sum_t += o.result.wall_time_s;
    lines.push_back(results_csv_line(ResultRow{to_string(config.method), config.task.name, config.guidance.lambda,
                                               config.guidance.steps, horizon, config.seed + j, o.metrics,
                                               o.result.wall_time_s}));
    runs.push_back({{"job", j},
                    {"J", o.result.objective},
                    {"energy", o.result.energy},
                    {"terminal_loss", o.result.terminal_loss},
                    {"terminal_error", o.terminal_error},
                    {"psnr", number_or_null(o.metrics.psnr)},
                    {"ssim", number_or_null(o.metrics.ssim)},
                    {"degraded_psnr", number_or_null(o.degraded_psnr)},
                    {"inner_iterations", o.result.inner_iterations},
                    {"wall_time_s", o.result.wall_time_s}});
  }
  const double n = static_cast<double>(outcomes.size());
  MetricReport mean;
  mean.terminal_loss = sum_l / n;
  mean.control_energy = sum_e / n;
  if (image) {
    mean.psnr = sum_p / n;
    mean.ssim = sum_s / n;
  }
  lines.push_back(results_csv_line(ResultRow{to_string(config.method), config.task.name + "/mean",
                                             config.guidance.lambda, config.guidance.steps, horizon, config.seed, mean,
                                             sum_t}));
  append_results(out / "results.csv", lines);

  const GuidanceResult& first = outcomes.front().result;
  json summary{{"command", "guide"},
               {"method", to_string(config.method)},
               {"task", config.task.name},
               {"lambda", config.guidance.lambda},
               {"lambda_effective", first.lambda_effective},
               {"N", config.guidance.steps},
               {"K", horizon ? json(*horizon) : json(nullptr)},
               {"n_ctrl", first.applied.controls.size()},
               {"lr", config.guidance.learning_rate},
               {"seed", config.seed},
               {"jobs", outcomes.size()},
               {"J", sum_j / n},
               {"energy", sum_e / n},
               {"terminal_loss", sum_l / n},
               {"terminal_error", sum_err / n},
               {"psnr", number_or_null(mean.psnr)},
               {"ssim", number_or_null(mean.ssim)},
               {"degraded_psnr", image ? number_or_null(sum_dp / n) : json(nullptr)},
               {"wall_time_s", sum_t},
               {"runs", runs}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  return outcomes;
}

std::vector<SweepRow> cmd_sweep_k(const RunConfig& config, const fs::path& out) {
  fs::create_directories(out);
  const FieldPtr field = obtain_model(config.model);
  const VectorField& model = *field;
  TaskSpec first = config.task;
  first.count = 1;
  const Job job = make_jobs(first, model.dim(), config.seed).front();
  std::vector<SweepRow> rows;
  try {
    rows = sweep(model, job, config.method, config.guidance, config.sweep);
  } catch (const SolverError& e) {
    throw SolverError(solver_context("sweep over " + config.sweep.parameter + " with " + to_string(config.method), e),
                      e.outer_step(), e.inner_iteration());
  }
  write_text(out / ("sweep_" + config.sweep.parameter + ".csv"), sweep_csv(config.sweep, rows));
  return rows;
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Flow-matching models guided by model predictive control"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t parallel = 0;
  const std::pair<const char*, const char*> commands[] = {
      {"train", "Train a flow model and write a checkpoint"},
      {"sample", "Draw unconditional samples"},
      {"guide", "Solve a guided generation task"},
      {"sweep-k", "Sweep K, lambda or N against the global solution"},
  };
  for (const auto& [name, description] : commands) {
    CLI::App* sub = app.add_subcommand(name, description);
    sub->add_option("--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--seed", seed, "Seed overriding the configuration");
    sub->add_option("--parallel", parallel, "Concurrent jobs")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  const CLI::App* sub = app.get_subcommands().front();
  try {
    RunConfig config = load_config(config_path, command);
    if (sub->count("--seed") > 0) {
      config.seed = seed;
      config.train.seed = seed;
    }
    if (parallel > 0) config.parallel = parallel;
    const fs::path out = resolve_output(out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir), config);
    if (command == "train") {
      const TrainOutput o = cmd_train(config, out);
      std::cout << "wrote " << o.checkpoint.string() << " and " << o.loss_csv.string() << "\n";
    } else if (command == "sample") {
      cmd_sample(config, out);
      std::cout << "wrote samples to " << out.string() << "\n";
    } else if (command == "guide") {
      const auto outcomes = cmd_guide(config, out);
      std::cout << "guided " << outcomes.size() << " job(s); results in " << out.string() << "\n";
    } else {
      const auto rows = cmd_sweep_k(config, out);
      std::cout << "swept " << rows.size() << " value(s); results in " << out.string() << "\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace mpcflow::harness
