#include "isostruct/ga.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "isostruct/elements.hpp"
#include "isostruct/error.hpp"
#include "isostruct/evaluate.hpp"
#include "isostruct/parallel.hpp"

namespace isostruct {

double DistanceHistogram::log_prob(double distance) const {
  if (!(distance >= 0.0)) return floor_log_prob;
  const double idx = std::floor(distance / bin_width);
  if (idx >= static_cast<double>(log_probs.size())) return floor_log_prob;
  return log_probs[static_cast<std::size_t>(idx)];
}

void normalize_histogram(DistanceHistogram& hist) {
  if (!(hist.bin_width > 0.0) || hist.counts.empty())
    throw Error(Errc::InvalidArgument, "histogram needs a positive bin width and at least one bin");
  double total = 0.0;
  for (double c : hist.counts) total += c + kHistogramSmoothing;
  hist.log_probs.resize(hist.counts.size());
  for (std::size_t i = 0; i < hist.counts.size(); ++i)
    hist.log_probs[i] = std::log((hist.counts[i] + kHistogramSmoothing) / (total * hist.bin_width));
  hist.floor_log_prob = std::log(kHistogramSmoothing / (total * hist.bin_width));
}

DistanceHistogram build_histogram(std::span<const Molecule> mols, double bin_width) {
  if (!(bin_width > 0.0)) throw Error(Errc::InvalidArgument, "bin width must be positive");
  std::vector<double> distances;
  for (const Molecule& mol : mols) {
    const std::vector<int> heavy = mol.heavy_indices();
    for (std::size_t a = 0; a < heavy.size(); ++a)
      for (std::size_t b = a + 1; b < heavy.size(); ++b)
        distances.push_back((mol.positions().row(heavy[a]) - mol.positions().row(heavy[b])).norm());
  }
  if (distances.empty()) throw Error(Errc::EmptyCorpus, "no heavy-atom pairs in the corpus");
  const double d_max = *std::max_element(distances.begin(), distances.end()) + bin_width;
  DistanceHistogram hist;
  hist.bin_width = bin_width;
  hist.counts.assign(static_cast<std::size_t>(std::ceil(d_max / bin_width)), 0.0);
  for (double d : distances) {
    const auto idx = std::min(static_cast<std::size_t>(std::floor(d / bin_width)), hist.counts.size() - 1);
    hist.counts[idx] += 1.0;
  }
  normalize_histogram(hist);
  return hist;
}

void GaConfig::validate() const {
  if (generations < 0 || population < 2 || tournament_size < 1 || decoration_repeats < 1 || top_k < 1 ||
      threads < 1)
    throw Error(Errc::InvalidArgument, "GA sizes must be positive");
  if (mutation_rate < 0.0 || mutation_rate > 1.0 || crossover_rate < 0.0 || crossover_rate > 1.0)
    throw Error(Errc::InvalidArgument, "GA rates must lie in [0, 1]");
  if (!(position_sigma >= 0.0) || !(init_sigma >= 0.0))
    throw Error(Errc::InvalidArgument, "GA step sizes must be non-negative");
}

GaInstance::GaInstance(std::vector<int> z, std::vector<double> m, Coords abs,
                       Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> msk, PlanarMoments pm)
    : atomic_numbers(std::move(z)),
      masses(std::move(m)),
      abs_coords(std::move(abs)),
      mask(std::move(msk)),
      moments(pm) {
  const auto n = static_cast<Eigen::Index>(atomic_numbers.size());
  if (static_cast<Eigen::Index>(masses.size()) != n || abs_coords.rows() != n || mask.rows() != n)
    throw Error(Errc::DimensionMismatch, "instance arrays disagree in atom count");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mask.row(i).sum() > 0.0) {
      constrained_.push_back(static_cast<int>(i));
      for (int c = 0; c < 3; ++c)
        if (mask(i, c) == 0.0) hidden_.emplace_back(static_cast<int>(i), c);
    } else {
      unconstrained_.push_back(static_cast<int>(i));
    }
  }
}

GaInstance GaInstance::from_table(const Molecule& heavy, const SubstitutionTable& table,
                                  const PlanarMoments& pm) {
  if (table.rows() != static_cast<Eigen::Index>(heavy.size()))
    throw Error(Errc::DimensionMismatch, "table rows differ from heavy atom count");
  Coords abs = table.values.cwiseAbs();
  return GaInstance(heavy.atomic_numbers(), heavy.masses(), std::move(abs), table.mask, pm);
}

namespace {

void check_dims(const Candidate& c, const GaInstance& inst) {
  if (c.signs.size() != 3 * inst.constrained().size() ||
      c.hidden_values.size() != inst.hidden_components().size() ||
      c.free_positions.size() != 3 * inst.unconstrained().size())
    throw Error(Errc::DimensionMismatch, "candidate does not match the instance");
}

}  // namespace

Coords realize(const Candidate& c, const GaInstance& inst) {
  check_dims(c, inst);
  Coords x = Coords::Zero(static_cast<Eigen::Index>(inst.size()), 3);
  for (std::size_t k = 0; k < inst.constrained().size(); ++k) {
    const int i = inst.constrained()[k];
    for (int a = 0; a < 3; ++a) x(i, a) = c.signs[3 * k + static_cast<std::size_t>(a)] * inst.abs_coords(i, a);
  }
  for (std::size_t k = 0; k < inst.hidden_components().size(); ++k) {
    const auto [i, a] = inst.hidden_components()[k];
    x(i, a) = c.hidden_values[k];
  }
  for (std::size_t k = 0; k < inst.unconstrained().size(); ++k)
    for (int a = 0; a < 3; ++a)
      x(inst.unconstrained()[k], a) = c.free_positions[3 * k + static_cast<std::size_t>(a)];
  return x;
}

FitnessTerms fitness_terms(const Candidate& c, const GaInstance& inst, const DistanceHistogram* hist) {
  const Coords x = realize(c, inst);
  FitnessTerms f;
  const Mat3 p = planar_dyadic_about_origin(x, inst.masses);
  const Vec3 target(inst.moments.p_x, inst.moments.p_y, inst.moments.p_z);
  double sq = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int col = r; col < 3; ++col) {
      const double d = p(r, col) - (r == col ? target[r] : 0.0);
      sq += d * d;
    }
  f.moment_error = std::sqrt(sq);
  f.com_error = x.rows() > 0 ? weighted_com(x, inst.masses).norm() : 0.0;
  if (hist != nullptr)
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = i + 1; j < x.rows(); ++j) f.pairwise_nll -= hist->log_prob((x.row(i) - x.row(j)).norm());
  return f;
}

double fitness(const Candidate& c, const GaInstance& inst, const DistanceHistogram* hist) {
  return fitness_terms(c, inst, hist).total();
}

namespace {

struct Individual {
  Candidate genes;
  double badness = 0.0;
};

Candidate random_candidate(const GaInstance& inst, double sigma, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, sigma);
  Candidate c;
  c.signs.resize(3 * inst.constrained().size());
  for (auto& s : c.signs) s = coin(rng) ? 1 : -1;
  c.hidden_values.resize(inst.hidden_components().size());
  for (auto& v : c.hidden_values) v = normal(rng);
  c.free_positions.resize(3 * inst.unconstrained().size());
  for (auto& v : c.free_positions) v = normal(rng);
  return c;
}

void mutate(Candidate& c, double sigma, std::mt19937_64& rng) {
  if (!c.signs.empty()) {
    const double p = 1.0 / static_cast<double>(c.signs.size());
    std::bernoulli_distribution flip(p);
    bool any = false;
    for (auto& s : c.signs)
      if (flip(rng)) {
        s = static_cast<std::int8_t>(-s);
        any = true;
      }
    if (!any) {
      std::uniform_int_distribution<std::size_t> pick(0, c.signs.size() - 1);
      auto& s = c.signs[pick(rng)];
      s = static_cast<std::int8_t>(-s);
    }
  }
  std::normal_distribution<double> step(0.0, sigma);
  for (auto& v : c.hidden_values) v += step(rng);
  for (auto& v : c.free_positions) v += step(rng);
}

void crossover(Candidate& a, Candidate& b, std::mt19937_64& rng) {
  if (a.signs.size() < 2) return;
  std::uniform_int_distribution<std::size_t> cut(1, a.signs.size() - 1);
  const std::size_t at = cut(rng);
  for (std::size_t k = at; k < a.signs.size(); ++k) std::swap(a.signs[k], b.signs[k]);
}

// Signs of the components that carry information, with each axis flipped
// so its first informative sign is positive.
std::vector<std::int8_t> canonical_signs(const Candidate& c, const GaInstance& inst) {
  std::vector<std::int8_t> key(c.signs.size(), 0);
  for (std::size_t k = 0; k < inst.constrained().size(); ++k) {
    const int i = inst.constrained()[k];
    for (int a = 0; a < 3; ++a)
      if (inst.mask(i, a) != 0.0 && inst.abs_coords(i, a) != 0.0) key[3 * k + static_cast<std::size_t>(a)] = c.signs[3 * k + static_cast<std::size_t>(a)];
  }
  for (std::size_t a = 0; a < 3; ++a) {
    std::int8_t first = 0;
    for (std::size_t k = a; k < key.size() && first == 0; k += 3) first = key[k];
    if (first < 0)
      for (std::size_t k = a; k < key.size(); k += 3) key[k] = static_cast<std::int8_t>(-key[k]);
  }
  return key;
}

Framework make_framework(const Candidate& c, const GaInstance& inst, const DistanceHistogram* hist) {
  Framework f;
  f.candidate = c;
  f.positions = realize(c, inst);
  f.terms = fitness_terms(c, inst, hist);
  f.badness = f.terms.total();
  return f;
}

std::mt19937_64 child_rng(std::uint64_t generation_seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(generation_seed), static_cast<std::uint32_t>(generation_seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

void evaluate_all(std::vector<Individual>& pop, const GaInstance& inst, const DistanceHistogram* hist,
                  int threads) {
  parallel_for(pop.size(), threads, [&](std::size_t i) { pop[i].badness = fitness(pop[i].genes, inst, hist); });
}

class HallOfFame {
 public:
  HallOfFame(const GaInstance& inst, std::size_t capacity) : inst_(inst), capacity_(capacity) {}

  void offer(const std::vector<Individual>& sorted_pop) {
    for (const Individual& ind : sorted_pop) {
      if (entries_.size() >= capacity_ && ind.badness >= entries_.back().badness) break;
      insert(ind);
    }
  }

  std::vector<Framework> frameworks(const DistanceHistogram* hist) const {
    std::vector<Framework> out;
    for (const auto& e : entries_) out.push_back(make_framework(e.genes, inst_, hist));
    return out;
  }

 private:
  void insert(const Individual& ind) {
    const auto key = canonical_signs(ind.genes, inst_);
    for (std::size_t k = 0; k < entries_.size(); ++k) {
      if (keys_[k] != key) continue;
      if (ind.badness < entries_[k].badness) {
        entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(k));
        keys_.erase(keys_.begin() + static_cast<std::ptrdiff_t>(k));
        break;
      }
      return;
    }
    std::size_t pos = 0;
    while (pos < entries_.size() && entries_[pos].badness <= ind.badness) ++pos;
    entries_.insert(entries_.begin() + static_cast<std::ptrdiff_t>(pos), ind);
    keys_.insert(keys_.begin() + static_cast<std::ptrdiff_t>(pos), key);
    if (entries_.size() > capacity_) {
      entries_.pop_back();
      keys_.pop_back();
    }
  }

  const GaInstance& inst_;
  std::size_t capacity_;
  std::vector<Individual> entries_;
  std::vector<std::vector<std::int8_t>> keys_;
};

void sort_by_badness(std::vector<Individual>& pop) {
  std::stable_sort(pop.begin(), pop.end(),
                   [](const Individual& a, const Individual& b) { return a.badness < b.badness; });
}

}  // namespace

std::vector<Framework> evolve(const GaInstance& inst, const GaConfig& cfg, const DistanceHistogram* hist,
                              std::mt19937_64& rng) {
  cfg.validate();
  if (inst.size() == 0) throw Error(Errc::InvalidArgument, "instance has no heavy atoms");
  const auto n_pop = static_cast<std::size_t>(cfg.population);

  std::vector<Individual> pop(n_pop);
  {
    const std::uint64_t seed = rng();
    parallel_for(n_pop, cfg.threads, [&](std::size_t i) {
      auto r = child_rng(seed, i);
      pop[i].genes = random_candidate(inst, cfg.init_sigma, r);
    });
  }
  evaluate_all(pop, inst, hist, cfg.threads);
  sort_by_badness(pop);
  HallOfFame hof(inst, static_cast<std::size_t>(cfg.top_k));
  hof.offer(pop);

  std::uniform_int_distribution<std::size_t> pick(0, n_pop - 1);
  for (int gen = 0; gen < cfg.generations; ++gen) {
    std::vector<Individual> offspring(n_pop);
    for (auto& child : offspring) {
      std::size_t best = pick(rng);
      for (int k = 1; k < cfg.tournament_size; ++k) best = std::min(best, pick(rng));  // pop is sorted
      child = pop[best];
    }
    const std::uint64_t seed = rng();
    parallel_for((n_pop + 1) / 2, cfg.threads, [&](std::size_t pair) {
      auto r = child_rng(seed, pair);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const std::size_t a = 2 * pair;
      const std::size_t b = a + 1;
      if (b < n_pop && unit(r) < cfg.crossover_rate) crossover(offspring[a].genes, offspring[b].genes, r);
      if (unit(r) < cfg.mutation_rate) mutate(offspring[a].genes, cfg.position_sigma, r);
      if (b < n_pop && unit(r) < cfg.mutation_rate) mutate(offspring[b].genes, cfg.position_sigma, r);
    });
    evaluate_all(offspring, inst, hist, cfg.threads);
    sort_by_badness(offspring);
    // Elitism: the previous best replaces the worst child.
    offspring.back() = pop.front();
    sort_by_badness(offspring);
    pop = std::move(offspring);
    hof.offer(pop);
  }
  return hof.frameworks(hist);
}

Framework brute_force_signs(const GaInstance& inst, const DistanceHistogram* hist) {
  if (!inst.unconstrained().empty() || !inst.hidden_components().empty())
    throw Error(Errc::HasFreeAtoms, "brute force requires every coordinate to be constrained");
  const std::size_t m = inst.constrained().size();
  if (m == 0) throw Error(Errc::InvalidArgument, "instance has no heavy atoms");
  if (std::pow(8.0, static_cast<double>(m - 1)) > kBruteForceLimit)
    throw Error(Errc::TooLarge, "8^(m-1) sign arrangements exceed the brute-force limit");

  const std::uint64_t total = std::uint64_t{1} << (3 * (m - 1));
  Candidate c;
  c.signs.assign(3 * m, 1);
  Framework best;
  bool have = false;
  for (std::uint64_t code = 0; code < total; ++code) {
    for (std::size_t bit = 0; bit < 3 * (m - 1); ++bit) c.signs[3 + bit] = ((code >> bit) & 1U) ? -1 : 1;
    const FitnessTerms t = fitness_terms(c, inst, hist);
    const double b = t.total();
    const bool better = !have || b < best.badness - 1e-12 ||
                        (std::abs(b - best.badness) <= 1e-12 && t.moment_error < best.terms.moment_error);
    if (better) {
      best.candidate = c;
      best.terms = t;
      best.badness = b;
      have = true;
    }
  }
  best.positions = realize(best.candidate, inst);
  return best;
}

double decoration_score(const Molecule& mol, bool literal) {
  const double com = mol.size() > 0 ? weighted_com(mol).norm() : 0.0;
  double d_min = std::numeric_limits<double>::infinity();
  const auto& x = mol.positions();
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) d_min = std::min(d_min, (x.row(i) - x.row(j)).norm());
  if (!std::isfinite(d_min)) return com;
  const double gap = kHydrogenBond - d_min;
  const double clash = literal ? std::min(0.0, gap) : std::max(0.0, gap);
  return com + 1000.0 * clash * clash;
}

namespace {

std::vector<Vec3> fibonacci_sphere(int count) {
  std::vector<Vec3> dirs;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int k = 0; k < count; ++k) {
    const double y = 1.0 - 2.0 * (k + 0.5) / count;
    const double r = std::sqrt(1.0 - y * y);
    dirs.emplace_back(r * std::cos(golden * k), y, r * std::sin(golden * k));
  }
  return dirs;
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
  q.normalize();
  return q.toRotationMatrix();
}

// Unit direction whose smallest angle to the existing bond directions is largest.
Vec3 open_direction(const std::vector<Vec3>& bonds, const std::vector<Vec3>& candidates) {
  if (bonds.empty()) return candidates.front();
  Vec3 best = candidates.front();
  double best_cos = std::numeric_limits<double>::infinity();
  for (const Vec3& d : candidates) {
    double worst = -1.0;
    for (const Vec3& b : bonds) worst = std::max(worst, d.dot(b));
    if (worst < best_cos) {
      best_cos = worst;
      best = d;
    }
  }
  return best;
}

}  // namespace

Decoration decorate_hydrogens(const std::vector<int>& heavy_elements, const Coords& heavy_positions,
                              int hydrogen_count, const GaConfig& cfg, std::mt19937_64& rng) {
  if (hydrogen_count < 0) throw Error(Errc::NegativeHydrogenCount, "formula has fewer atoms than the framework");
  if (heavy_positions.rows() != static_cast<Eigen::Index>(heavy_elements.size()))
    throw Error(Errc::DimensionMismatch, "framework elements and positions disagree");
  const Molecule heavy = Molecule::from_elements(heavy_elements, heavy_positions);
  if (hydrogen_count == 0) return {heavy, decoration_score(heavy, cfg.literal_clash_penalty)};

  const auto n_heavy = static_cast<int>(heavy.size());
  const BondGraph graph = perceive_bonds(heavy);
  std::vector<int> slots;
  for (int i = 0; i < n_heavy; ++i) {
    const int open = element(heavy_elements[static_cast<std::size_t>(i)]).valence -
                     static_cast<int>(graph.neighbors[static_cast<std::size_t>(i)].size());
    for (int k = 0; k < open; ++k) slots.push_back(i);
  }

  std::vector<int> elements = heavy_elements;
  elements.insert(elements.end(), static_cast<std::size_t>(hydrogen_count), 1);
  const std::vector<Vec3> sphere = fibonacci_sphere(64);
  std::normal_distribution<double> jitter(0.0, 0.05);
  std::normal_distribution<double> loose(0.0, 1.0);

  std::optional<Decoration> best;
  for (int rep = 0; rep < cfg.decoration_repeats; ++rep) {
    std::vector<int> owners = slots;
    std::shuffle(owners.begin(), owners.end(), rng);
    owners.resize(std::min(owners.size(), static_cast<std::size_t>(hydrogen_count)));
    if (n_heavy > 0) {
      std::uniform_int_distribution<int> any_heavy(0, n_heavy - 1);
      while (owners.size() < static_cast<std::size_t>(hydrogen_count)) owners.push_back(any_heavy(rng));
    }

    const Mat3 rot = random_rotation(rng);
    std::vector<Vec3> candidates;
    candidates.reserve(sphere.size());
    for (const Vec3& d : sphere) candidates.push_back(rot * d);

    std::vector<std::vector<Vec3>> bond_dirs(static_cast<std::size_t>(n_heavy));
    for (int i = 0; i < n_heavy; ++i)
      for (int j : graph.neighbors[static_cast<std::size_t>(i)])
        bond_dirs[static_cast<std::size_t>(i)].push_back(
            (heavy_positions.row(j) - heavy_positions.row(i)).transpose().normalized());

    Coords x(n_heavy + hydrogen_count, 3);
    x.topRows(n_heavy) = heavy_positions;
    for (int h = 0; h < hydrogen_count; ++h) {
      Vec3 pos;
      if (n_heavy == 0) {
        pos = Vec3(loose(rng), loose(rng), loose(rng));
      } else {
        const int owner = owners[static_cast<std::size_t>(h)];
        auto& dirs = bond_dirs[static_cast<std::size_t>(owner)];
        Vec3 d = open_direction(dirs, candidates) + Vec3(jitter(rng), jitter(rng), jitter(rng));
        d.normalize();
        dirs.push_back(d);
        pos = heavy_positions.row(owner).transpose() + kHydrogenBond * d;
      }
      x.row(n_heavy + h) = pos.transpose();
    }
    Molecule mol = Molecule::from_elements(elements, std::move(x));
    const double score = decoration_score(mol, cfg.literal_clash_penalty);
    if (!best || score < best->score) best = Decoration{std::move(mol), score};
  }
  return *best;
}

}  // namespace isostruct
