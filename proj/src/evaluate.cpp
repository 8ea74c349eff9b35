#include "isostruct/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "isostruct/elements.hpp"
#include "isostruct/error.hpp"

namespace isostruct {

std::size_t BondGraph::edge_count() const {
  std::size_t total = 0;
  for (const auto& nb : neighbors) total += nb.size();
  return total / 2;
}

bool BondGraph::bonded(int i, int j) const {
  const auto& nb = neighbors[static_cast<std::size_t>(i)];
  return std::binary_search(nb.begin(), nb.end(), j);
}

BondGraph perceive_bonds(const Molecule& mol) {
  BondGraph g;
  g.elements = mol.atomic_numbers();
  g.neighbors.assign(mol.size(), {});
  const auto& x = mol.positions();
  const auto n = static_cast<int>(mol.size());
  for (int i = 0; i < n; ++i) {
    const double ri = element(g.elements[static_cast<std::size_t>(i)]).covalent_radius;
    for (int j = i + 1; j < n; ++j) {
      const double d = (x.row(i) - x.row(j)).norm();
      if (d < kOverlapCutoff) {
        g.has_overlap = true;
        continue;
      }
      const double rj = element(g.elements[static_cast<std::size_t>(j)]).covalent_radius;
      if (d < ri + rj + kBondSlack) {
        g.neighbors[static_cast<std::size_t>(i)].push_back(j);
        g.neighbors[static_cast<std::size_t>(j)].push_back(i);
      }
    }
  }
  for (auto& nb : g.neighbors) std::sort(nb.begin(), nb.end());
  return g;
}

namespace {

// Colour refinement over the disjoint union so colour ids are shared.
std::vector<int> refine_colors(const BondGraph& a, const BondGraph& b) {
  const std::size_t na = a.size();
  const std::size_t n = na + b.size();
  auto node_neighbors = [&](std::size_t v) -> std::vector<std::size_t> {
    std::vector<std::size_t> out;
    if (v < na) {
      for (int u : a.neighbors[v]) out.push_back(static_cast<std::size_t>(u));
    } else {
      for (int u : b.neighbors[v - na]) out.push_back(static_cast<std::size_t>(u) + na);
    }
    return out;
  };

  std::vector<int> color(n);
  for (std::size_t v = 0; v < n; ++v) color[v] = v < na ? a.elements[v] : b.elements[v - na];
  std::size_t classes = 0;
  while (true) {
    std::map<std::pair<int, std::vector<int>>, int> ids;
    std::vector<int> next(n);
    for (std::size_t v = 0; v < n; ++v) {
      std::vector<int> sig;
      for (std::size_t u : node_neighbors(v)) sig.push_back(color[u]);
      std::sort(sig.begin(), sig.end());
      auto key = std::make_pair(color[v], std::move(sig));
      auto it = ids.find(key);
      if (it == ids.end()) it = ids.emplace(std::move(key), static_cast<int>(ids.size())).first;
      next[v] = it->second;
    }
    color = std::move(next);
    if (ids.size() == classes) break;
    classes = ids.size();
  }
  return color;
}

bool extend_match(const BondGraph& a, const BondGraph& b, const std::vector<int>& ca,
                  const std::vector<int>& cb, const std::vector<int>& order, std::size_t depth,
                  std::vector<int>& map_ab, std::vector<bool>& used_b) {
  if (depth == order.size()) return true;
  const int u = order[depth];
  for (int v = 0; v < static_cast<int>(b.size()); ++v) {
    if (used_b[static_cast<std::size_t>(v)] || ca[static_cast<std::size_t>(u)] != cb[static_cast<std::size_t>(v)])
      continue;
    bool consistent = true;
    for (std::size_t k = 0; k < depth && consistent; ++k) {
      const int w = order[k];
      consistent = a.bonded(u, w) == b.bonded(v, map_ab[static_cast<std::size_t>(w)]);
    }
    if (!consistent) continue;
    map_ab[static_cast<std::size_t>(u)] = v;
    used_b[static_cast<std::size_t>(v)] = true;
    if (extend_match(a, b, ca, cb, order, depth + 1, map_ab, used_b)) return true;
    used_b[static_cast<std::size_t>(v)] = false;
  }
  return false;
}

BondGraph drop_hydrogens(const BondGraph& g) {
  std::vector<int> keep;
  std::vector<int> new_index(g.size(), -1);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!is_hydrogen(g.elements[i])) {
      new_index[i] = static_cast<int>(keep.size());
      keep.push_back(static_cast<int>(i));
    }
  BondGraph out;
  out.has_overlap = g.has_overlap;
  for (int i : keep) {
    out.elements.push_back(g.elements[static_cast<std::size_t>(i)]);
    std::vector<int> nb;
    for (int j : g.neighbors[static_cast<std::size_t>(i)])
      if (new_index[static_cast<std::size_t>(j)] >= 0) nb.push_back(new_index[static_cast<std::size_t>(j)]);
    out.neighbors.push_back(std::move(nb));
  }
  return out;
}

}  // namespace

bool graphs_isomorphic(const BondGraph& a, const BondGraph& b) {
  if (a.size() != b.size() || a.edge_count() != b.edge_count()) return false;
  const std::vector<int> color = refine_colors(a, b);
  const std::vector<int> ca(color.begin(), color.begin() + static_cast<std::ptrdiff_t>(a.size()));
  const std::vector<int> cb(color.begin() + static_cast<std::ptrdiff_t>(a.size()), color.end());
  std::vector<int> sa = ca, sb = cb;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  if (sa != sb) return false;

  // Match rarest colours first to keep the search narrow.
  std::map<int, int> freq;
  for (int c : ca) ++freq[c];
  std::vector<int> order(a.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return freq[ca[static_cast<std::size_t>(x)]] < freq[ca[static_cast<std::size_t>(y)]];
  });
  std::vector<int> map_ab(a.size(), -1);
  std::vector<bool> used_b(b.size(), false);
  return extend_match(a, b, ca, cb, order, 0, map_ab, used_b);
}

bool connectivity_correct(const Molecule& pred, const Molecule& truth, bool heavy_only) {
  std::vector<int> ep = pred.atomic_numbers(), et = truth.atomic_numbers();
  if (heavy_only) {
    std::erase_if(ep, is_hydrogen);
    std::erase_if(et, is_hydrogen);
  }
  std::sort(ep.begin(), ep.end());
  std::sort(et.begin(), et.end());
  if (ep != et) return false;
  BondGraph gp = perceive_bonds(pred);
  BondGraph gt = perceive_bonds(truth);
  if (heavy_only) {
    gp = drop_hydrogens(gp);
    gt = drop_hydrogens(gt);
  }
  return graphs_isomorphic(gp, gt);
}

Assignment hungarian(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<int>(cost.rows());
  if (n < 1 || cost.cols() != n) throw Error(Errc::InvalidArgument, "cost matrix must be square and non-empty");

  double largest = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double c = cost(i, j);
      if (c == kForbidden) continue;
      if (!std::isfinite(c)) throw Error(Errc::InvalidArgument, "cost entries must be finite or kForbidden");
      largest = std::max(largest, std::abs(c));
    }
  // Any assignment touching a big-M entry costs more than any that does not.
  const double big = 1.0 + 2.0 * n * largest;
  auto a = [&](int i, int j) {
    const double c = cost(i - 1, j - 1);
    return c == kForbidden ? big : c;
  };

  // Shortest augmenting paths with potentials, 1-indexed.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<int> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) continue;
        const double cur = a(i0, j) - u[static_cast<std::size_t>(i0)] - v[sj];
        if (cur < minv[sj]) {
          minv[sj] = cur;
          way[sj] = j0;
        }
        if (minv[sj] < delta) {
          delta = minv[sj];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) {
          u[static_cast<std::size_t>(p[sj])] += delta;
          v[sj] -= delta;
        } else {
          minv[sj] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment out;
  out.row_to_col.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) out.row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  for (int i = 0; i < n; ++i) {
    const double c = cost(i, out.row_to_col[static_cast<std::size_t>(i)]);
    if (c == kForbidden) throw Error(Errc::Infeasible, "no assignment avoids forbidden entries");
    out.total_cost += c;
  }
  return out;
}

MatchReport min_rmsd_over_reflections(const Molecule& pred, const Molecule& truth) {
  std::vector<int> ep = pred.atomic_numbers(), et = truth.atomic_numbers();
  std::sort(ep.begin(), ep.end());
  std::sort(et.begin(), et.end());
  if (ep != et) throw Error(Errc::ElementMismatch, "pred and truth have different element multisets");

  const auto n = static_cast<Eigen::Index>(truth.size());
  MatchReport best;
  best.rmsd = std::numeric_limits<double>::infinity();
  for (int r = 0; r < 8; ++r) {
    const Vec3 s = axial_reflection(r);
    const Coords reflected = pred.positions() * s.asDiagonal();
    Eigen::MatrixXd cost(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        cost(i, j) = truth.atomic_numbers()[static_cast<std::size_t>(i)] ==
                             pred.atomic_numbers()[static_cast<std::size_t>(j)]
                         ? (truth.positions().row(i) - reflected.row(j)).squaredNorm()
                         : kForbidden;
    const Assignment asg = hungarian(cost);
    const double rmsd = std::sqrt(std::max(0.0, asg.total_cost) / static_cast<double>(n));
    if (rmsd < best.rmsd) {
      best.rmsd = rmsd;
      best.reflection = s;
      best.assignment = asg.row_to_col;
    }
  }
  best.connectivity_correct = connectivity_correct(pred, truth, false);
  best.heavy_connectivity_correct = connectivity_correct(pred, truth, true);
  return best;
}

double deviation_score(const Coords& positions, const SubstitutionTable& table, DeviationNorm norm) {
  if (positions.rows() != table.rows())
    throw Error(Errc::ShapeMismatch, "sample atom count differs from the substitution table");
  double total = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < positions.rows(); ++i)
    for (int c = 0; c < 3; ++c) {
      if (table.mask(i, c) == 0.0) continue;
      const double d = std::abs(std::abs(positions(i, c)) - table.values(i, c));
      total += norm == DeviationNorm::L1 ? d : d * d;
      ++count;
    }
  if (count == 0) return 0.0;
  const double mean = total / count;
  return norm == DeviationNorm::L1 ? mean : std::sqrt(mean);
}

std::vector<RankedSample> rank_by_deviation(std::span<const Molecule> samples,
                                            const SubstitutionTable& table, DeviationNorm norm) {
  std::vector<RankedSample> ranked;
  ranked.reserve(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k)
    ranked.push_back({k, deviation_score(samples[k].positions(), table, norm)});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedSample& a, const RankedSample& b) { return a.score < b.score; });
  return ranked;
}

}  // namespace isostruct
