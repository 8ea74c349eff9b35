#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "isostruct/ga.hpp"
#include "isostruct/io.hpp"

namespace isostruct {

namespace fs = std::filesystem;

/// Flags shared by every command.
struct CommonOptions {
  std::uint64_t seed = 0;
  std::optional<fs::path> config;
  fs::path out;
  int threads = 1;
};

struct SimulateOptions {
  fs::path xyz;
  /// Relative standard deviation applied multiplicatively to every
  /// rotational constant; 0 gives exact constants.
  double noise = 0.0;
};

/// PAS-aligns the molecule and writes an observation with one isotopologue
/// per naturally abundant heavy atom, in canonical atom order.
ObservationFile simulate_observation(const Molecule& mol, double noise, std::mt19937_64& rng);
void command_simulate(const CommonOptions& common, const SimulateOptions& opts);

/// Writes the resolved substitution table as JSON.
nlohmann::json substitution_report(const ObservationData& data);
void command_kraitchman(const CommonOptions& common, const fs::path& observation);

/// Molecules from every *.xyz file under `dir`, sorted by file name,
/// PAS-aligned and in canonical atom order.
std::vector<Molecule> load_dataset(const fs::path& dir);

struct TrainOptions {
  fs::path data;
  std::optional<fs::path> resume;
  std::optional<long> steps;
  std::optional<fs::path> log;  // JSON lines; defaults to <out>.log.jsonl
};
void command_train(const CommonOptions& common, const TrainOptions& opts);

struct SampleOptions {
  fs::path checkpoint;
  fs::path observation;
  int k = 1;
  bool use_ema = true;
};
void command_sample(const CommonOptions& common, const SampleOptions& opts);

struct GaOptions {
  fs::path observation;
  std::optional<fs::path> histogram;
  std::optional<fs::path> corpus;  // build the histogram from XYZ files instead
};
GaConfig ga_config_from_json(const nlohmann::json& j);
void command_ga(const CommonOptions& common, const GaOptions& opts);

struct EvaluateOptions {
  fs::path pred;   // directory of ranked XYZ files, or of per-example subdirectories
  fs::path truth;  // XYZ file, or directory of <name>.xyz matching the subdirectories
  std::vector<int> top_k{1, 5};
};
/// Per-example rows followed by one aggregate row per k.
std::vector<nlohmann::json> evaluate_predictions(const EvaluateOptions& opts);
void command_evaluate(const CommonOptions& common, const EvaluateOptions& opts);

struct GenDatasetOptions {
  std::optional<fs::path> histogram_out;
  std::optional<int> count;
};
void command_gen_dataset(const CommonOptions& common, const GenDatasetOptions& opts);

/// Sorted *.xyz paths directly inside `dir`.
std::vector<fs::path> xyz_files(const fs::path& dir);

}  // namespace isostruct
