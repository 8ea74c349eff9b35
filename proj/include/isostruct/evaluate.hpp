#pragma once

#include <Eigen/Dense>
#include <array>
#include <limits>
#include <span>
#include <vector>

#include "isostruct/geometry.hpp"
#include "isostruct/kraitchman.hpp"

namespace isostruct {

inline constexpr double kBondSlack = 0.40;    // Å added to the radius sum
inline constexpr double kOverlapCutoff = 0.4;  // Å; closer pairs are not bonds

struct BondGraph {
  std::vector<int> elements;
  std::vector<std::vector<int>> neighbors;  // sorted ascending
  bool has_overlap = false;                 // some pair closer than kOverlapCutoff

  std::size_t size() const { return elements.size(); }
  std::size_t edge_count() const;
  bool bonded(int i, int j) const;
};

BondGraph perceive_bonds(const Molecule& mol);

/// Element-labeled graph isomorphism test.
bool graphs_isomorphic(const BondGraph& a, const BondGraph& b);

/// True when pred and truth have isomorphic bond graphs. `heavy_only`
/// drops hydrogens from both first.
bool connectivity_correct(const Molecule& pred, const Molecule& truth, bool heavy_only = false);

/// Cost entries equal to kForbidden may not be used.
inline constexpr double kForbidden = std::numeric_limits<double>::infinity();

struct Assignment {
  std::vector<int> row_to_col;
  double total_cost = 0.0;
};

/// Minimum-cost perfect assignment on a square matrix. Throws Infeasible
/// when every perfect assignment uses a forbidden entry.
Assignment hungarian(const Eigen::MatrixXd& cost);

struct MatchReport {
  double rmsd = 0.0;
  Vec3 reflection = Vec3::Ones();
  std::vector<int> assignment;  // truth atom i matched to pred atom assignment[i]
  bool connectivity_correct = false;
  bool heavy_connectivity_correct = false;
};

/// Lowest all-atom RMSD over the 8 axial reflections of pred with optimal
/// same-element matching. Both inputs must already be PAS-aligned. Throws
/// ElementMismatch when the element multisets differ.
MatchReport min_rmsd_over_reflections(const Molecule& pred, const Molecule& truth);

enum class DeviationNorm { L1, L2 };

struct RankedSample {
  std::size_t index;
  double score;
};

/// Mean deviation between |sample position| and the table over the
/// unmasked entries, ascending and stable. L2 uses the root mean square.
std::vector<RankedSample> rank_by_deviation(std::span<const Molecule> samples,
                                            const SubstitutionTable& table,
                                            DeviationNorm norm = DeviationNorm::L1);
double deviation_score(const Coords& positions, const SubstitutionTable& table,
                       DeviationNorm norm = DeviationNorm::L1);

}  // namespace isostruct
