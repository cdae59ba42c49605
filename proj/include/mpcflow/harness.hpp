#pragma once

// Run configuration, experiment drivers and result files behind the CLI.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpcflow/control.hpp"
#include "mpcflow/inverse.hpp"
#include "mpcflow/metrics.hpp"
#include "mpcflow/mlp.hpp"
#include "mpcflow/training.hpp"

namespace mpcflow::harness {

namespace fs = std::filesystem;

/// Where the flow model comes from: a checkpoint file or an in-process training run.
struct ModelSpec {
  std::optional<fs::path> checkpoint;
  std::optional<TrainConfig> train;
  /// For checkpoints: how to read the network. Taken from the checkpoint's
  /// sidecar "<checkpoint>.json" when not given.
  std::optional<Prediction> prediction;
};

enum class TaskKind { Target, Image };

/// Target: terminal loss ||x - target||^2. Image: Gaussian likelihood of a
/// simulated measurement of a discs16 ground truth.
struct TaskSpec {
  TaskKind kind = TaskKind::Target;
  std::string name = "corner";
  Vec target;
  OperatorSpec op;
  double sigma = 0.0;
  LikelihoodScale scale = LikelihoodScale::InverseVariance;
  /// Number of independent jobs (images or initial states).
  std::size_t count = 1;
  std::optional<std::uint64_t> image_seed;
};

struct SampleSpec {
  std::size_t n = 16;
  std::size_t steps = 20;
  /// Full trajectories written for the first this-many samples.
  std::size_t trajectories = 1;
};

/// One swept parameter: "K", "lambda" or "N".
struct SweepSpec {
  std::string parameter = "K";
  std::vector<double> values;
};

struct RunConfig {
  std::string command;
  TrainConfig train;
  ModelSpec model;
  TaskSpec task;
  Method method = Method::Global;
  GuidanceConfig guidance;
  SampleSpec sample;
  SweepSpec sweep;
  std::uint64_t seed = 0;
  std::optional<fs::path> output;
  std::size_t parallel = 1;
};

/// Validates `doc` for `command` (train, sample, guide or sweep-k). Throws
/// ConfigError with the dotted path of the offending field.
RunConfig parse_config(const nlohmann::json& doc, const std::string& command);
RunConfig load_config(const fs::path& path, const std::string& command);

/// Output root: explicit flag, else $MPCFLOW_OUT, else the config's "output", else "runs".
fs::path resolve_output(const std::optional<fs::path>& flag, const RunConfig& config);

using FieldPtr = std::shared_ptr<const VectorField>;

/// The network as a velocity field, wrapped in DataPredictionField when it predicts data.
FieldPtr as_field(MlpVectorField network, Prediction prediction);
FieldPtr obtain_model(const ModelSpec& spec);

/// Sidecar written next to every checkpoint by cmd_train.
fs::path sidecar_path(const fs::path& checkpoint);

/// Base sample that job (or unconditional sample) j of a run with seed s starts
/// from: sample_base(1, dim, s + j).
Vec job_start(std::size_t dim, std::uint64_t seed);

/// Everything one guidance job needs. Job j runs with seed s + j, which fixes its
/// start point, its ground-truth image (unless the task pins an image seed) and
/// its measurement noise.
struct Job {
  std::size_t index = 0;
  Vec x0;
  LossPtr loss;
  /// Point the terminal error is measured against: the target or the ground truth.
  Vec reference;
  std::optional<Vec> truth;
  std::optional<Vec> degraded;
};

std::vector<Job> make_jobs(const TaskSpec& task, std::size_t dim, std::uint64_t seed);

struct JobOutcome {
  GuidanceResult result;
  MetricReport metrics;
  double terminal_error = 0.0;
  std::optional<double> degraded_psnr;
};

JobOutcome run_job(const VectorField& field, const Job& job, Method method, const GuidanceConfig& config);

struct SweepRow {
  double value = 0.0;
  double trajectory_distance = 0.0;
  double terminal_error = 0.0;
  double energy = 0.0;
  double objective = 0.0;
};

/// For "K": one global solve, then rhc for each K. For "lambda" and "N": a
/// fresh global baseline per value and `method` against it.
std::vector<SweepRow> sweep(const VectorField& field, const Job& job, Method method, const GuidanceConfig& config,
                            const SweepSpec& spec);

std::string sweep_csv(const SweepSpec& spec, const std::vector<SweepRow>& rows);

struct TrainOutput {
  TrainResult result;
  fs::path checkpoint;
  fs::path loss_csv;
};

TrainOutput cmd_train(const RunConfig& config, const fs::path& out);
void cmd_sample(const RunConfig& config, const fs::path& out);
std::vector<JobOutcome> cmd_guide(const RunConfig& config, const fs::path& out);
std::vector<SweepRow> cmd_sweep_k(const RunConfig& config, const fs::path& out);

/// Parses argv and dispatches. Returns 0 on success, 1 on configuration
/// errors and 2 on solver errors.
int cli_main(int argc, char** argv);

}  // namespace mpcflow::harness
