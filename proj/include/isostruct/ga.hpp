#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "isostruct/geometry.hpp"
#include "isostruct/kraitchman.hpp"

namespace isostruct {

/// Smoothed density of heavy-atom pair distances.
struct DistanceHistogram {
  double bin_width = 0.05;
  std::vector<double> counts;
  std::vector<double> log_probs;  // log density (1/Å) per bin
  double floor_log_prob = 0.0;    // used beyond the last bin

  double log_prob(double distance) const;
  std::size_t bins() const { return counts.size(); }
};

inline constexpr double kHistogramSmoothing = 1e-6;

/// Throws EmptyCorpus unless some molecule has two or more heavy atoms.
DistanceHistogram build_histogram(std::span<const Molecule> mols, double bin_width = 0.05);

/// Rebuilds log_probs and floor_log_prob from counts and bin_width.
void normalize_histogram(DistanceHistogram& hist);

struct GaConfig {
  int generations = 20;
  int population = 20000;
  double mutation_rate = 0.7;
  double crossover_rate = 0.9;
  int tournament_size = 3;
  double position_sigma = 0.3;   // Å, mutation step for continuous genes
  double init_sigma = 2.0;       // Å, initial spread of continuous genes
  int decoration_repeats = 1000;
  int top_k = 5;
  bool literal_clash_penalty = false;
  int threads = 1;

  void validate() const;
};

/// Heavy-atom search problem. Rows of `abs_coords`/`mask` follow the atom
/// order of `atomic_numbers`.
struct GaInstance {
  std::vector<int> atomic_numbers;
  std::vector<double> masses;
  Coords abs_coords;
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> mask;
  PlanarMoments moments;

  GaInstance(std::vector<int> atomic_numbers, std::vector<double> masses, Coords abs_coords,
             Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> mask, PlanarMoments moments);

  /// Instance from a PAS-aligned heavy-atom molecule and its table.
  static GaInstance from_table(const Molecule& heavy, const SubstitutionTable& table,
                               const PlanarMoments& pm);

  std::size_t size() const { return atomic_numbers.size(); }
  const std::vector<int>& constrained() const { return constrained_; }
  const std::vector<int>& unconstrained() const { return unconstrained_; }
  /// Masked components of constrained atoms, as (atom, axis) pairs.
  const std::vector<std::pair<int, int>>& hidden_components() const { return hidden_; }

 private:
  std::vector<int> constrained_;
  std::vector<int> unconstrained_;
  std::vector<std::pair<int, int>> hidden_;
};

struct Candidate {
  std::vector<std::int8_t> signs;      // 3 per constrained atom, ±1
  std::vector<double> hidden_values;   // one per hidden component
  std::vector<double> free_positions;  // 3 per unconstrained atom
};

struct FitnessTerms {
  double moment_error = 0.0;
  double com_error = 0.0;
  double pairwise_nll = 0.0;
  double total() const { return moment_error + com_error + pairwise_nll; }
};

/// Heavy-atom positions encoded by a candidate. Throws DimensionMismatch.
Coords realize(const Candidate& c, const GaInstance& inst);

/// Badness of a candidate (lower is better). Without a histogram the
/// pairwise term is 0.
FitnessTerms fitness_terms(const Candidate& c, const GaInstance& inst, const DistanceHistogram* hist);
double fitness(const Candidate& c, const GaInstance& inst, const DistanceHistogram* hist);

struct Framework {
  Candidate candidate;
  Coords positions;
  FitnessTerms terms;
  double badness = 0.0;
};

/// Generational search; returns up to cfg.top_k lowest-badness frameworks
/// with distinct sign vectors (a global reflection counts as the same).
std::vector<Framework> evolve(const GaInstance& inst, const GaConfig& cfg,
                              const DistanceHistogram* hist, std::mt19937_64& rng);

inline constexpr double kBruteForceLimit = 1e7;

/// Exhaustive search over signs with the first atom fixed to (+,+,+).
/// Throws HasFreeAtoms or TooLarge.
Framework brute_force_signs(const GaInstance& inst, const DistanceHistogram* hist);

inline constexpr double kHydrogenBond = 1.09;  // Å

struct Decoration {
  Molecule molecule;
  double score = 0.0;
};

/// Clash-aware hydrogen placement around a heavy framework, best of
/// cfg.decoration_repeats attempts. Throws NegativeHydrogenCount.
Decoration decorate_hydrogens(const std::vector<int>& heavy_elements, const Coords& heavy_positions,
                              int hydrogen_count, const GaConfig& cfg, std::mt19937_64& rng);

/// com_error + 1000·max(0, 1.09 − d_min)², or the min(·) form when `literal`.
double decoration_score(const Molecule& mol, bool literal = false);

}  // namespace isostruct
