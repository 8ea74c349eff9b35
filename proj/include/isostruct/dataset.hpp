#pragma once

#include <random>
#include <vector>

#include "isostruct/geometry.hpp"

namespace isostruct {

/// Random small organic-like molecules: a heavy-atom tree with
/// covalent-radius bond lengths and tetrahedral-ish angles, then hydrogens
/// on open valences. Output is PAS-aligned, in canonical atom order, and an
/// asymmetric top whose perceived bonds equal the constructed ones.
struct SyntheticConfig {
  int n_molecules = 8;
  int n_atoms = 5;
  int min_heavy = 2;
  int max_heavy = 4;
  std::vector<int> heavy_elements{6, 6, 7, 8};  // drawn uniformly, so repeats weight the draw
  double bond_jitter = 0.02;                   // Å
  double min_relative_gap = 0.05;              // between successive planar moments, relative to P_X
  double min_nonbonded_margin = 0.25;          // Å beyond the bond cutoff

  void validate() const;
};

Molecule generate_molecule(const SyntheticConfig& cfg, std::mt19937_64& rng);
std::vector<Molecule> generate_molecules(const SyntheticConfig& cfg, std::mt19937_64& rng);

}  // namespace isostruct
