#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "isostruct/denoiser.hpp"
#include "isostruct/ga.hpp"
#include "isostruct/geometry.hpp"
#include "isostruct/kraitchman.hpp"

namespace isostruct {

// ---- XYZ ----------------------------------------------------------------

/// Parses "count / comment / Element x y z" text. Throws ParseError with the
/// 1-based line number, or UnknownElement.
Molecule parse_xyz(std::string_view text);
/// Positions printed with 8 decimals.
std::string write_xyz(const Molecule& mol, std::string_view comment = "");

Molecule read_xyz_file(const std::filesystem::path& path);
void write_xyz_file(const std::filesystem::path& path, const Molecule& mol, std::string_view comment = "");

/// Stable reorder by descending atomic number, so hydrogens come last.
Molecule canonical_order(const Molecule& mol);

// ---- Observations ---------------------------------------------------------

/// Element symbol -> count, iterated in canonical order by callers.
using Formula = std::map<int, int>;

Formula formula_of(const Molecule& mol);
/// Atomic numbers in canonical order (descending, hydrogens last).
std::vector<int> formula_atoms(const Formula& formula);
std::string formula_string(const Formula& formula);

struct PrecomputedCoordinate {
  int element;
  std::array<std::optional<double>, 3> abs;
};

struct ObservationFile {
  Formula formula;
  RotationalConstants parent{3.0, 2.0, 1.0};
  std::vector<IsotopologueObservation> isotopologues;
  std::vector<PrecomputedCoordinate> precomputed;  // used instead of isotopologues when present
};

nlohmann::json observation_to_json(const ObservationFile& obs);
/// Throws SchemaError on missing or mistyped fields.
ObservationFile observation_from_json(const nlohmann::json& j);

/// What the structure solvers consume.
struct ObservationData {
  Formula formula;
  std::vector<int> atoms;  // canonical order; rows of `table`
  std::vector<double> masses;
  PlanarMoments moments;
  SubstitutionTable table;
};

/// Converts constants to planar moments, runs Kraitchman per isotopologue,
/// and fills the table by element in file order. Throws SchemaError when an
/// element has more records than atoms.
ObservationData resolve_observation(const ObservationFile& obs);
ObservationData load_observation(const std::filesystem::path& path);

// ---- Checkpoints -----------------------------------------------------------

struct AdamState {
  long step = 0;
  std::map<std::string, ad::Matrix> m;
  std::map<std::string, ad::Matrix> v;
  std::vector<double> grad_norms;  // trailing window for adaptive clipping
};

struct Checkpoint {
  static constexpr int kFormatVersion = 1;
  ModelConfig config;
  FeatureScaling scaling;
  std::string schedule_kind = "polynomial-2";
  DenoiserParameters params;
  DenoiserParameters ema;
  std::uint64_t seed = 0;
  long step = 0;
  std::optional<AdamState> optimizer;
  std::string rng_state;        // textual engine state, for resuming
  nlohmann::json train_config;  // copy of the run's configuration
};

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

/// Shape plus base64 little-endian float64 data, row-major.
nlohmann::json tensor_to_json(const ad::Matrix& m);
ad::Matrix tensor_from_json(const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

// ---- Histograms and generic files -----------------------------------------

nlohmann::json histogram_to_json(const DistanceHistogram& h);
DistanceHistogram histogram_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
/// One compact JSON document per line.
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace isostruct
