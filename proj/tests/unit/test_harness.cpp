#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mpcflow/checkpoint.hpp"
#include "mpcflow/data.hpp"
#include "mpcflow/errors.hpp"
#include "mpcflow/harness.hpp"

using namespace mpcflow;
using namespace mpcflow::harness;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mpcflow_harness_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<double> numbers_of(const std::string& line) {
  std::vector<double> out;
  std::istringstream in(line);
  for (std::string cell; std::getline(in, cell, ',');) out.push_back(std::stod(cell));
  return out;
}

std::string without_last_column(const std::string& text) {
  std::string out;
  for (const auto& line : lines_of(text)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

fs::path hexagon_checkpoint(const fs::path& dir) {
  const fs::path path = dir / "hex.ckpt";
  save_checkpoint(MlpVectorField::random(2, {16, 16}, 4), path);
  return path;
}

std::string config_error_field(const json& doc, const std::string& command) {
  try {
    parse_config(doc, command);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<accepted>";
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mpcflow");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

json guide_doc(const fs::path& ckpt) {
  return json{{"seed", 5},
              {"model", {{"checkpoint", ckpt.string()}}},
              {"task", {{"kind", "target"}, {"count", 3}}},
              {"method", "rhc"},
              {"guidance", {{"lambda", 10.0}, {"N", 8}, {"K", 2}, {"inner_iterations", 20}}}};
}

void write_json(const fs::path& path, const json& doc) { std::ofstream(path) << doc.dump(2); }

}  // namespace

TEST_CASE("rhc without a lookahead is a config error") {
  const fs::path dir = fresh_dir("missing_k");
  json doc = guide_doc(hexagon_checkpoint(dir));
  doc["guidance"].erase("K");
  CHECK(config_error_field(doc, "guide") == "guidance.K");
  doc["method"] = "deltat";
  CHECK(config_error_field(doc, "guide") == "<accepted>");
  doc["guidance"]["K"] = 3;
  CHECK(config_error_field(doc, "guide") == "guidance.K");
}

TEST_CASE("config errors name the offending field") {
  const fs::path dir = fresh_dir("fields");
  const json good = guide_doc(hexagon_checkpoint(dir));
  CHECK(config_error_field(good, "guide") == "<accepted>");

  json doc = good;
  doc["guidance"]["lamda"] = 1.0;
  CHECK(config_error_field(doc, "guide") == "guidance.lamda");
  doc = good;
  doc["guidance"]["lambda"] = -1.0;
  CHECK(config_error_field(doc, "guide") == "guidance");
  doc = good;
  doc["method"] = "dflow";
  CHECK(config_error_field(doc, "guide") == "method");
  doc = good;
  doc["model"]["checkpoint"] = (dir / "missing.ckpt").string();
  CHECK(config_error_field(doc, "guide") == "model.checkpoint");
  doc = good;
  doc["task"] = {{"kind", "image"}, {"operator", {{"op", "fourier"}}}};
  CHECK(config_error_field(doc, "guide") == "task.operator");
  doc = good;
  doc["task"]["target"] = {1.0, "x"};
  CHECK(config_error_field(doc, "guide") == "task.target[1]");
  doc = good;
  doc.erase("guidance");
  doc["method"] = "global";
  doc["sweep"] = {{"K", {1, 2}}};
  CHECK(config_error_field(doc, "sweep-k") == "method");
  doc.erase("method");
  CHECK(config_error_field(doc, "sweep-k") == "<accepted>");
  doc["sweep"] = {{"K", {1, 2.5}}};
  CHECK(config_error_field(doc, "sweep-k") == "sweep.K[1]");
  CHECK(config_error_field(json{{"train", {{"dataset", "mnist"}}}}, "train") == "train.dataset");
  CHECK(config_error_field(json{{"train", {{"iterations", 0}}}}, "train") == "train");
  CHECK(config_error_field(json{{"train", {{"prediction", "noise"}}}}, "train") == "train.prediction");
}

TEST_CASE("output root precedence") {
  RunConfig config;
  config.output = "from_config";
  ::unsetenv("MPCFLOW_OUT");
  CHECK(resolve_output(std::nullopt, config) == "from_config");
  ::setenv("MPCFLOW_OUT", "from_env", 1);
  CHECK(resolve_output(std::nullopt, config) == "from_env");
  CHECK(resolve_output(fs::path("from_flag"), config) == "from_flag");
  ::unsetenv("MPCFLOW_OUT");
  config.output.reset();
  CHECK(resolve_output(std::nullopt, config) == "runs");
}

TEST_CASE("train writes a reloadable checkpoint, one loss row per iteration, and identical bytes on rerun") {
  const fs::path dir = fresh_dir("train");
  const json doc{{"seed", 2},
                 {"train", {{"dataset", "hexagon"}, {"hidden", {16, 16}}, {"iterations", 40}, {"batch_size", 32}}}};
  const RunConfig config = parse_config(doc, "train");
  const TrainOutput a = cmd_train(config, dir / "a");
  const TrainOutput b = cmd_train(config, dir / "b");
  CHECK(slurp(a.checkpoint) == slurp(b.checkpoint));
  CHECK(slurp(a.loss_csv) == slurp(b.loss_csv));
  const auto rows = lines_of(slurp(a.loss_csv));
  CHECK(rows.front() == "iter,loss");
  CHECK(rows.size() == 41);
  const MlpVectorField back = load_checkpoint(a.checkpoint);
  CHECK(back.dim() == 2);
  CHECK(back.eval(Vec{0.1, 0.2}, 0.5).size() == 2);
  CHECK(json::parse(slurp(sidecar_path(a.checkpoint)))["prediction"] == "velocity");
}

TEST_CASE("lambda zero reproduces the unconditional sample for the same seed") {
  const fs::path dir = fresh_dir("lambda_zero");
  const fs::path ckpt = hexagon_checkpoint(dir);
  json doc = guide_doc(ckpt);
  doc["method"] = "deltat";
  doc["guidance"].erase("K");
  doc["guidance"]["lambda"] = 0.0;
  cmd_guide(parse_config(doc, "guide"), dir / "guide");

  const json sample_doc{{"seed", 5}, {"model", {{"checkpoint", ckpt.string()}}}, {"sample", {{"n", 3}, {"steps", 8}}}};
  cmd_sample(parse_config(sample_doc, "sample"), dir / "sample");
  const auto samples = lines_of(slurp(dir / "sample" / "samples.csv"));
  REQUIRE(samples.size() == 4);
  for (std::size_t j = 0; j < 3; ++j) {
    char name[32];
    std::snprintf(name, sizeof name, "trajectory_%03zu.csv", j);
    const Trajectory traj = read_trajectory_csv(dir / "guide" / name);
    const auto row = numbers_of(samples[j + 1]);
    CHECK(row[1] == traj.terminal()[0]);
    CHECK(row[2] == traj.terminal()[1]);
  }
}

TEST_CASE("sample output is deterministic and its trajectories parse back") {
  const fs::path dir = fresh_dir("sample");
  const json doc{{"seed", 1},
                 {"model", {{"checkpoint", hexagon_checkpoint(dir).string()}}},
                 {"sample", {{"n", 5}, {"steps", 12}, {"trajectories", 2}}}};
  const RunConfig config = parse_config(doc, "sample");
  cmd_sample(config, dir / "a");
  cmd_sample(config, dir / "b");
  CHECK(slurp(dir / "a" / "samples.csv") == slurp(dir / "b" / "samples.csv"));
  CHECK(lines_of(slurp(dir / "a" / "samples.csv")).size() == 6);
  const Trajectory traj = read_trajectory_csv(dir / "a" / "trajectory_001.csv");
  CHECK(traj.states.size() == 13);
  CHECK_FALSE(fs::exists(dir / "a" / "trajectory_002.csv"));
}

TEST_CASE("guide writes one results row per job plus the mean row, deterministically") {
  const fs::path dir = fresh_dir("guide");
  const RunConfig config = parse_config(guide_doc(hexagon_checkpoint(dir)), "guide");
  cmd_guide(config, dir / "a");
  RunConfig parallel = config;
  parallel.parallel = 3;
  cmd_guide(parallel, dir / "b");

  const std::string results = slurp(dir / "a" / "results.csv");
  const auto rows = lines_of(results);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == results_csv_header());
  CHECK(rows[1].rfind("rhc,corner,10,8,2,5,", 0) == 0);
  CHECK(rows[3].rfind("rhc,corner,10,8,2,7,", 0) == 0);
  CHECK(rows[4].rfind("rhc,corner/mean,", 0) == 0);
  CHECK(without_last_column(results) == without_last_column(slurp(dir / "b" / "results.csv")));
  for (const char* name : {"trajectory_000.csv", "trajectory_001.csv", "trajectory_002.csv"}) {
    CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
  }

  json a = json::parse(slurp(dir / "a" / "summary.json"));
  json b = json::parse(slurp(dir / "b" / "summary.json"));
  for (const char* key : {"method", "lambda", "lambda_effective", "N", "K", "n_ctrl", "lr", "seed", "J", "energy",
                          "terminal_loss", "psnr", "ssim", "wall_time_s"}) {
    CHECK(a.contains(key));
  }
  CHECK(a["K"] == 2);
  CHECK(a["n_ctrl"] == 8);
  CHECK(a["psnr"].is_null());
  a.erase("wall_time_s");
  b.erase("wall_time_s");
  for (auto* s : {&a, &b}) {
    for (auto& run : (*s)["runs"]) run.erase("wall_time_s");
  }
  CHECK(a == b);

  // A second run into the same directory appends.
  cmd_guide(config, dir / "a");
  CHECK(lines_of(slurp(dir / "a" / "results.csv")).size() == 9);
}

TEST_CASE("image guidance writes the ground truth, degraded and restored images") {
  const fs::path dir = fresh_dir("image");
  const fs::path ckpt = dir / "img.ckpt";
  save_checkpoint(MlpVectorField::random(256, {32}, 3), ckpt);
  const json doc{{"seed", 0},
                 {"model", {{"checkpoint", ckpt.string()}, {"prediction", "data"}}},
                 {"task",
                  {{"kind", "image"},
                   {"name", "inpaint"},
                   {"operator", {{"op", "mask"}, {"keep_fraction", 0.3}, {"seed", 1}}},
                   {"sigma", 0.05},
                   {"count", 2}}},
                 {"method", "deltat"},
                 {"guidance", {{"lambda", 1.0}, {"N", 4}, {"inner_iterations", 5}}}};
  const auto outcomes = cmd_guide(parse_config(doc, "guide"), dir / "out");
  REQUIRE(outcomes.size() == 2);
  for (const char* stem : {"truth", "degraded", "restored"}) {
    for (int j = 0; j < 2; ++j) {
      char name[32];
      std::snprintf(name, sizeof name, "%s_%03d.pgm", stem, j);
      CHECK(fs::exists(dir / "out" / name));
    }
  }
  CHECK(outcomes[0].metrics.psnr.has_value());
  CHECK(outcomes[0].degraded_psnr.has_value());
  const json summary = json::parse(slurp(dir / "out" / "summary.json"));
  CHECK(summary["psnr"].is_number());
  CHECK(summary["K"].is_null());
}

TEST_CASE("jobs differ by seed and pin their images when asked") {
  TaskSpec task;
  task.kind = TaskKind::Image;
  task.op.op = "identity";
  task.sigma = 0.1;
  task.count = 2;
  const auto a = make_jobs(task, 256, 10);
  const auto b = make_jobs(task, 256, 11);
  CHECK(a[1].x0 == b[0].x0);
  CHECK(*a[1].truth == *b[0].truth);
  task.image_seed = 99;
  const auto c = make_jobs(task, 256, 10);
  const auto d = make_jobs(task, 256, 50);
  CHECK(*c[0].truth == *d[0].truth);
  CHECK(*c[0].truth == sample_discs16(2, 99)[0]);
  CHECK(c[0].x0 != d[0].x0);
  CHECK_THROWS_AS(make_jobs(task, 2, 0), ConfigError);
}

TEST_CASE("sweep-k emits one row per K") {
  const fs::path dir = fresh_dir("sweep");
  const json doc{{"model", {{"checkpoint", hexagon_checkpoint(dir).string()}}},
                 {"task", {{"kind", "target"}}},
                 {"guidance", {{"lambda", 10.0}, {"N", 8}, {"inner_iterations", 30}}},
                 {"sweep", {{"K", {1, 2, 4}}}}};
  const auto rows = cmd_sweep_k(parse_config(doc, "sweep-k"), dir / "out");
  CHECK(rows.size() == 3);
  const auto lines = lines_of(slurp(dir / "out" / "sweep_K.csv"));
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "K,traj_distance,terminal_error,energy,J");
  CHECK(numbers_of(lines[3])[0] == 4.0);

  json lam = doc;
  lam["method"] = "deltat";
  lam["sweep"] = {{"lambda", {1.0, 10.0}}};
  CHECK(cmd_sweep_k(parse_config(lam, "sweep-k"), dir / "lam").size() == 2);
  CHECK(lines_of(slurp(dir / "lam" / "sweep_lambda.csv")).size() == 3);
}

TEST_CASE("command line exit codes") {
  const fs::path dir = fresh_dir("cli");
  const fs::path ckpt = hexagon_checkpoint(dir);
  json doc = guide_doc(ckpt);
  write_json(dir / "ok.json", doc);
  CHECK(run_cli({"guide", "--config", (dir / "ok.json").string(), "--out", (dir / "ok").string()}) == 0);
  CHECK(fs::exists(dir / "ok" / "summary.json"));
  CHECK(run_cli({"guide", "--config", (dir / "ok.json").string(), "--out", (dir / "seeded").string(), "--seed",
                 "9", "--parallel", "2"}) == 0);
  CHECK(json::parse(slurp(dir / "seeded" / "summary.json"))["seed"] == 9);

  doc["guidance"].erase("K");
  write_json(dir / "bad.json", doc);
  CHECK(run_cli({"guide", "--config", (dir / "bad.json").string(), "--out", (dir / "bad").string()}) == 1);
  CHECK(run_cli({"guide", "--config", (dir / "nowhere.json").string()}) == 1);
  CHECK(run_cli({"launch"}) == 1);

  MlpVectorField huge = MlpVectorField::random(2, {4}, 1);
  for (auto& block : huge.mutable_parameters()) {
    for (double& v : block) v *= 1e300;
  }
  save_checkpoint(huge, dir / "huge.ckpt");
  json diverging = guide_doc(dir / "huge.ckpt");
  diverging["method"] = "global";
  diverging["guidance"].erase("K");
  write_json(dir / "diverge.json", diverging);
  CHECK(run_cli({"guide", "--config", (dir / "diverge.json").string(), "--out", (dir / "diverge").string()}) == 2);
}
