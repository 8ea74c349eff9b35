#include "isostruct/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "isostruct/elements.hpp"
#include "isostruct/error.hpp"
#include "isostruct/evaluate.hpp"
#include "isostruct/io.hpp"

namespace isostruct {

void SyntheticConfig::validate() const {
  if (n_molecules < 1 || n_atoms < 2 || min_heavy < 1 || max_heavy < min_heavy || min_heavy > n_atoms)
    throw Error(Errc::InvalidArgument, "synthetic dataset sizes are inconsistent");
  if (heavy_elements.empty()) throw Error(Errc::InvalidArgument, "no heavy elements to draw from");
  for (int z : heavy_elements)
    if (z <= 1 || z > kMaxAtomicNumber) throw Error(Errc::InvalidArgument, "heavy elements must have Z > 1");
}

namespace {

constexpr int kAttempts = 500;
constexpr int kDirectionSamples = 256;
const double kMinBondAngleCos = std::cos(100.0 * std::numbers::pi / 180.0);

struct Builder {
  std::vector<int> z;
  std::vector<Vec3> x;
  std::vector<std::vector<int>> bonds;

  int open_valence(int i) const {
    return element(z[static_cast<std::size_t>(i)]).valence - static_cast<int>(bonds[static_cast<std::size_t>(i)].size());
  }
};

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 v(normal(rng), normal(rng), normal(rng));
  while (v.norm() < 1e-8) v = Vec3(normal(rng), normal(rng), normal(rng));
  return v.normalized();
}

// Bonds `parent` to a new atom of element `elem`; false when no clash-free
// direction was found.
bool attach(Builder& b, int parent, int elem, const SyntheticConfig& cfg, std::mt19937_64& rng) {
  const auto p = static_cast<std::size_t>(parent);
  std::normal_distribution<double> jitter(0.0, cfg.bond_jitter);
  const double r_new = element(elem).covalent_radius;
  const double length = element(b.z[p]).covalent_radius + r_new + (elem == 1 ? 0.0 : jitter(rng));

  std::vector<Vec3> existing;
  for (int j : b.bonds[p]) existing.push_back((b.x[static_cast<std::size_t>(j)] - b.x[p]).normalized());

  std::vector<Vec3> good;
  std::optional<Vec3> widest;
  double widest_cos = 2.0;
  for (int s = 0; s < kDirectionSamples; ++s) {
    const Vec3 d = random_unit(rng);
    double max_cos = -1.0;
    for (const Vec3& e : existing) max_cos = std::max(max_cos, d.dot(e));
    const Vec3 pos = b.x[p] + length * d;
    bool clear = true;
    for (std::size_t k = 0; k < b.z.size() && clear; ++k) {
      if (k == p) continue;
      const double cutoff = element(b.z[k]).covalent_radius + r_new + kBondSlack + cfg.min_nonbonded_margin;
      clear = (pos - b.x[k]).norm() > cutoff;
    }
    if (!clear) continue;
    if (max_cos <= kMinBondAngleCos) good.push_back(d);
    if (max_cos < widest_cos) {
      widest_cos = max_cos;
      widest = d;
    }
  }
  Vec3 d;
  if (!good.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, good.size() - 1);
    d = good[pick(rng)];
  } else if (widest && widest_cos < 0.0) {
    d = *widest;
  } else {
    return false;
  }
  const int idx = static_cast<int>(b.z.size());
  b.z.push_back(elem);
  b.x.push_back(b.x[p] + length * d);
  b.bonds.emplace_back();
  b.bonds[p].push_back(idx);
  b.bonds.back().push_back(parent);
  return true;
}

std::optional<Molecule> try_generate(const SyntheticConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> heavy_count(cfg.min_heavy, std::min(cfg.max_heavy, cfg.n_atoms));
  std::uniform_int_distribution<std::size_t> pick_elem(0, cfg.heavy_elements.size() - 1);
  const int n_heavy = heavy_count(rng);
  const int n_h = cfg.n_atoms - n_heavy;

  Builder b;
  b.z.push_back(cfg.heavy_elements[pick_elem(rng)]);
  b.x.push_back(Vec3::Zero());
  b.bonds.emplace_back();
  for (int k = 1; k < n_heavy; ++k) {
    const int elem = cfg.heavy_elements[pick_elem(rng)];
    std::vector<int> parents;
    for (int i = 0; i < static_cast<int>(b.z.size()); ++i)
      if (b.open_valence(i) >= 1) parents.push_back(i);
    if (parents.empty()) return std::nullopt;
    std::uniform_int_distribution<std::size_t> pick(0, parents.size() - 1);
    if (!attach(b, parents[pick(rng)], elem, cfg, rng)) return std::nullopt;
  }
  for (int k = 0; k < n_h; ++k) {
    std::vector<int> parents;
    for (int i = 0; i < n_heavy; ++i)
      if (b.open_valence(i) >= 1) parents.push_back(i);
    if (parents.empty()) return std::nullopt;
    std::uniform_int_distribution<std::size_t> pick(0, parents.size() - 1);
    if (!attach(b, parents[pick(rng)], 1, cfg, rng)) return std::nullopt;
  }

  Coords pos(static_cast<Eigen::Index>(b.z.size()), 3);
  for (std::size_t i = 0; i < b.z.size(); ++i) pos.row(static_cast<Eigen::Index>(i)) = b.x[i].transpose();
  const Molecule raw = Molecule::from_elements(b.z, pos);

  // The perceived graph must be exactly the constructed tree.
  const BondGraph g = perceive_bonds(raw);
  if (g.has_overlap) return std::nullopt;
  for (std::size_t i = 0; i < b.z.size(); ++i) {
    auto expected = b.bonds[i];
    std::sort(expected.begin(), expected.end());
    if (expected != g.neighbors[i]) return std::nullopt;
  }

  PasAlignment pas;
  try {
    pas = align_to_pas(raw);
  } catch (const Error&) {
    return std::nullopt;
  }
  const PlanarMoments& pm = pas.planar_moments;
  const double gap = cfg.min_relative_gap * pm.p_x;
  if (pm.p_x - pm.p_y < gap || pm.p_y - pm.p_z < gap) return std::nullopt;
  return canonical_order(raw.with_positions(pas.aligned_positions));
}

}  // namespace

Molecule generate_molecule(const SyntheticConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  for (int attempt = 0; attempt < kAttempts; ++attempt)
    if (auto mol = try_generate(cfg, rng)) return *mol;
  throw Error(Errc::InvalidArgument, "could not generate a molecule satisfying the synthetic constraints");
}

std::vector<Molecule> generate_molecules(const SyntheticConfig& cfg, std::mt19937_64& rng) {
  std::vector<Molecule> out;
  out.reserve(static_cast<std::size_t>(cfg.n_molecules));
  for (int i = 0; i < cfg.n_molecules; ++i) out.push_back(generate_molecule(cfg, rng));
  return out;
}

}  // namespace isostruct
