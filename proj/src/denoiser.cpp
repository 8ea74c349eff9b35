#include "isostruct/denoiser.hpp"

#include <cmath>

#include "isostruct/elements.hpp"
#include "isostruct/error.hpp"
#include "isostruct/parallel.hpp"

namespace isostruct {

using ad::Matrix;
using ad::Var;

void ModelConfig::validate() const {
  if (hidden_dim <= 0 || message_dim <= 0 || cond_mlp_dim <= 0 || time_embed_dim <= 0 ||
      atom_embed_dim <= 0 || n_blocks < 1 || n_heads <= 0 || head_dim <= 0 || t_max < 1)
    throw Error(Errc::InvalidArgument, "model dimensions must be positive");
  if (n_heads * head_dim != hidden_dim)
    throw Error(Errc::InvalidArgument, "n_heads * head_dim must equal hidden_dim");
  if (time_embed_dim % 2 != 0) throw Error(Errc::InvalidArgument, "time_embed_dim must be even");
}

std::size_t DenoiserParameters::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : tensors) total += static_cast<std::size_t>(t.size());
  return total;
}

const Matrix& DenoiserParameters::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(Errc::InvalidArgument, "missing parameter '" + name + "'");
  return it->second;
}

Matrix& DenoiserParameters::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(Errc::InvalidArgument, "missing parameter '" + name + "'");
  return it->second;
}

ConditioningFeatures build_conditioning(const Molecule& mol, const SubstitutionTable& table,
                                        const PlanarMoments& pm, const FeatureScaling& scaling) {
  const auto n = static_cast<Eigen::Index>(mol.size());
  if (table.rows() != n || table.mask.rows() != n)
    throw Error(Errc::ShapeMismatch, "substitution table rows differ from atom count");
  ConditioningFeatures cond;
  cond.atomic_numbers = mol.atomic_numbers();
  cond.masses = mol.masses();
  cond.features.resize(n, kConditioningWidth);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    cond.features(i, 0) = scaling.atomic_number * mol.atomic_numbers()[k];
    cond.features(i, 1) = scaling.mass * mol.masses()[k];
    for (int c = 0; c < 3; ++c) {
      const double m = table.mask(i, c) != 0.0 ? 1.0 : 0.0;
      cond.features(i, 2 + c) = scaling.coordinate * m * table.values(i, c);
      cond.features(i, 5 + c) = m;
      cond.features(i, 8 + c) = scaling.moment * pm[c];
    }
  }
  return cond;
}

Eigen::Matrix<double, 13, 1> distance_features(const Vec3& x, const Vec3& x_prime) {
  const Vec3 d = x - x_prime;
  Eigen::Matrix<double, 13, 1> f;
  f << d.squaredNorm(), x.dot(x_prime), x.squaredNorm(), x_prime.squaredNorm(),
      d.cwiseProduct(d), x.cwiseProduct(x), x_prime.cwiseProduct(x_prime);
  return f;
}

Eigen::RowVectorXd time_embedding(int t, int t_max, int dim) {
  const int half = dim / 2;
  const double tau = static_cast<double>(t) / t_max;
  Eigen::RowVectorXd emb(dim);
  for (int k = 0; k < half; ++k) {
    const double freq = half > 1 ? std::pow(1e4, static_cast<double>(k) / (half - 1)) : 1.0;
    emb[2 * k] = std::sin(tau * freq);
    emb[2 * k + 1] = std::cos(tau * freq);
  }
  return emb;
}

namespace {

constexpr int kEmbeddingRows = kMaxAtomicNumber + 1;

int input_width(const ModelConfig& c) {
  return kConditioningWidth + c.atom_embed_dim + 1 + c.time_embed_dim;
}

std::string block_prefix(int i) { return "block" + std::to_string(i); }
const std::string kFinalPrefix = "final.eqblock";

// Fully connected directed pairs (target i, source j), i != j, ordered by i.
struct Edges {
  std::vector<int> target;
  std::vector<int> source;
};

Edges make_edges(Eigen::Index n) {
  Edges e;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) {
        e.target.push_back(i);
        e.source.push_back(j);
      }
  return e;
}

// Binds parameters to a tape as zero-copy leaves, created on first use.
class Graph {
 public:
  Graph(ad::Tape& tape, const DenoiserParameters& params) : tape_(tape), params_(params) {}

  Var operator()(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    Var v = tape_.external(params_.at(name), true);
    vars_.emplace(name, v);
    return v;
  }

  Var linear(const std::string& prefix, Var x) { return ad::linear(x, (*this)(prefix + ".w"), (*this)(prefix + ".b")); }
  Var linear(const std::string& prefix, const std::string& suffix, Var x) {
    return ad::linear(x, (*this)(prefix + ".w" + suffix), (*this)(prefix + ".b" + suffix));
  }

  ad::Tape& tape() { return tape_; }
  const std::map<std::string, Var>& vars() const { return vars_; }

 private:
  ad::Tape& tape_;
  const DenoiserParameters& params_;
  std::map<std::string, Var> vars_;
};

Var pair_distance_features(Var x, const Edges& e) {
  Var xi = ad::gather_rows(x, e.target);
  Var xj = ad::gather_rows(x, e.source);
  Var d = ad::sub(xi, xj);
  Var sd = ad::mul(d, d);
  Var si = ad::mul(xi, xi);
  Var sj = ad::mul(xj, xj);
  const std::array<Var, 7> parts{ad::row_sum(sd), ad::row_sum(ad::mul(xi, xj)), ad::row_sum(si),
                                 ad::row_sum(sj), sd, si, sj};
  return ad::concat_cols(parts);
}

struct EqResult {
  Var x;
  Var h;  // invalid when features were not requested
};

EqResult eq_block_graph(Graph& g, const std::string& prefix, const ModelConfig& cfg, Var x, Var h,
                        Var dist0, const Edges& e, Eigen::Index n, bool with_features) {
  Var hi = ad::gather_rows(h, e.target);
  Var hj = ad::gather_rows(h, e.source);
  Var dist = pair_distance_features(x, e);
  const std::array<Var, 4> inputs{hi, hj, dist, dist0};
  Var m = ad::silu(g.linear(prefix + ".message_mlp", "1", ad::concat_cols(inputs)));
  m = ad::silu(g.linear(prefix + ".message_mlp", "2", m));

  // x_i + Σ_j (x_i - x_j) / (|x_i - x_j|² + 1) ⊙ gate(m_ji)
  Var diff = ad::sub(ad::gather_rows(x, e.target), ad::gather_rows(x, e.source));
  Var kernel = ad::mul_rowwise(diff, ad::reciprocal(ad::add_scalar(ad::row_sum(ad::mul(diff, diff)), 1.0)));
  Var gate = g.linear(prefix + ".coord_gate", m);
  Var x_out = ad::add(x, ad::scatter_add_rows(ad::mul(kernel, gate), e.target, n));

  if (!with_features) return {x_out, Var()};
  Var logits = g.linear(prefix + ".attn_logits", m);
  Var values = g.linear(prefix + ".attn_values", m);
  Var attn = ad::segment_softmax(logits, e.target, n);
  Var o = ad::scatter_add_rows(ad::head_scale(attn, values), e.target, n);
  (void)cfg;
  return {x_out, g.linear(prefix + ".out_proj", o)};
}

Var adaptive_norm(Graph& g, const std::string& prefix, Var h, Var c) {
  Var scale = ad::add_scalar(g.linear(prefix + ".scale", c), 1.0);
  Var shift = g.linear(prefix + ".shift", c);
  return ad::add(ad::mul(ad::layer_norm(h), scale), shift);
}

void check_finite(Var v, const char* where) {
  if (!v.value().allFinite())
    throw Error(Errc::NonFiniteActivation, std::string("non-finite activation in ") + where);
}

// Full network; returns the N×3 noise prediction.
Var forward(Graph& g, const Coords& z, const ConditioningFeatures& cond, int t,
            const ModelConfig& cfg, const MassWeights& w) {
  ad::Tape& tape = g.tape();
  const Eigen::Index n = z.rows();
  const Edges edges = make_edges(n);

  Matrix constant_features(n, kConditioningWidth);
  constant_features = cond.features;
  Matrix mass_col(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) mass_col(i, 0) = w.normalized_masses()[static_cast<std::size_t>(i)];
  const Eigen::RowVectorXd temb = time_embedding(t, cfg.t_max, cfg.time_embed_dim);
  Matrix time_rows(n, cfg.time_embed_dim);
  time_rows.rowwise() = temb;

  Var atoms = ad::gather_rows(g("atom_embed"), cond.atomic_numbers);
  const std::array<Var, 4> c_parts{tape.constant(std::move(constant_features)), atoms,
                                   tape.constant(std::move(mass_col)), tape.constant(std::move(time_rows))};
  Var c_in = ad::concat_cols(c_parts);

  Var h = g.linear("input_proj", c_in);
  Var h_res = h;
  Var c = ad::silu(g.linear("cond_mlp", "2", ad::silu(g.linear("cond_mlp", "1", c_in))));

  Var x0 = tape.constant(project_zero_com(z, w));
  Var dist0 = pair_distance_features(x0, edges);
  Var x = x0;
  for (int i = 0; i < cfg.n_blocks - 1; ++i) {
    const std::string p = block_prefix(i);
    EqResult eq = eq_block_graph(g, p + ".eqblock", cfg, x, h, dist0, edges, n, true);
    x = ad::project_zero_com(eq.x, w);
    h_res = ad::add(h_res, eq.h);
    h = adaptive_norm(g, p + ".norm1", ad::add(h, eq.h), c);
    Var ff = g.linear(p + ".ffn", "2", ad::silu(g.linear(p + ".ffn", "1", h)));
    h_res = ad::add(h_res, ff);
    h = adaptive_norm(g, p + ".norm2", ad::add(h, ff), c);
    if (i == cfg.n_blocks - 2) h = ad::add(h, adaptive_norm(g, p + ".norm_res", h_res, c));
    check_finite(h, "hidden features");
  }
  EqResult last = eq_block_graph(g, kFinalPrefix, cfg, x, h, dist0, edges, n, false);
  x = ad::project_zero_com(last.x, w);
  Var out = ad::sub(x, x0);
  check_finite(out, "coordinate output");
  return out;
}

void add_linear(DenoiserParameters& p, const std::string& prefix, int in, int out,
                std::mt19937_64& rng, bool zero = false, const std::string& suffix = "") {
  Matrix w = Matrix::Zero(in, out);
  if (!zero) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = normal(rng);
  }
  p.tensors[prefix + ".w" + suffix] = std::move(w);
  p.tensors[prefix + ".b" + suffix] = Matrix::Zero(1, out);
}

void add_eq_block(DenoiserParameters& p, const std::string& prefix, const ModelConfig& c,
                  std::mt19937_64& rng, bool with_features) {
  add_linear(p, prefix + ".message_mlp", 2 * c.hidden_dim + 26, c.message_dim, rng, false, "1");
  add_linear(p, prefix + ".message_mlp", c.message_dim, c.message_dim, rng, false, "2");
  add_linear(p, prefix + ".coord_gate", c.message_dim, 3, rng, true);
  if (!with_features) return;
  add_linear(p, prefix + ".attn_logits", c.message_dim, c.n_heads, rng);
  add_linear(p, prefix + ".attn_values", c.message_dim, c.hidden_dim, rng);
  add_linear(p, prefix + ".out_proj", c.hidden_dim, c.hidden_dim, rng);
}

void add_adaptive_norm(DenoiserParameters& p, const std::string& prefix, const ModelConfig& c,
                       std::mt19937_64& rng) {
  add_linear(p, prefix + ".scale", c.cond_mlp_dim, c.hidden_dim, rng, true);
  add_linear(p, prefix + ".shift", c.cond_mlp_dim, c.hidden_dim, rng, true);
}

void require_shapes(const Coords& z, const ConditioningFeatures& cond) {
  if (static_cast<std::size_t>(z.rows()) != cond.size() || cond.features.rows() != z.rows() ||
      cond.features.cols() != kConditioningWidth || cond.masses.size() != cond.size())
    throw Error(Errc::ShapeMismatch, "coordinates and conditioning disagree in shape");
}

}  // namespace

DenoiserParameters init_params(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  DenoiserParameters p;
  {
    Matrix embed(kEmbeddingRows, config.atom_embed_dim);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index r = 0; r < embed.rows(); ++r)
      for (Eigen::Index c = 0; c < embed.cols(); ++c) embed(r, c) = normal(rng);
    p.tensors["atom_embed"] = std::move(embed);
  }
  const int d_in = input_width(config);
  add_linear(p, "input_proj", d_in, config.hidden_dim, rng);
  add_linear(p, "cond_mlp", d_in, config.cond_mlp_dim, rng, false, "1");
  add_linear(p, "cond_mlp", config.cond_mlp_dim, config.cond_mlp_dim, rng, false, "2");
  for (int i = 0; i < config.n_blocks - 1; ++i) {
    const std::string b = block_prefix(i);
    add_eq_block(p, b + ".eqblock", config, rng, true);
    add_adaptive_norm(p, b + ".norm1", config, rng);
    add_linear(p, b + ".ffn", config.hidden_dim, config.message_dim, rng, false, "1");
    add_linear(p, b + ".ffn", config.message_dim, config.hidden_dim, rng, false, "2");
    add_adaptive_norm(p, b + ".norm2", config, rng);
    if (i == config.n_blocks - 2) add_adaptive_norm(p, b + ".norm_res", config, rng);
  }
  add_eq_block(p, kFinalPrefix, config, rng, false);
  return p;
}

EqBlockOutput eq_block(const DenoiserParameters& params, const std::string& prefix,
                       const ModelConfig& config, const Coords& x, const Matrix& h, const Coords& x0) {
  const Eigen::Index n = x.rows();
  if (n < 2 || h.rows() != n || x0.rows() != n || h.cols() != config.hidden_dim)
    throw Error(Errc::ShapeMismatch, "eq_block needs N >= 2 consistent rows");
  ad::Tape tape(false);
  Graph g(tape, params);
  const Edges edges = make_edges(n);
  Var dist0 = pair_distance_features(tape.constant(x0), edges);
  const bool with_features = params.tensors.count(prefix + ".attn_logits.w") > 0;
  EqResult r = eq_block_graph(g, prefix, config, tape.constant(x), tape.constant(h), dist0, edges, n,
                              with_features);
  EqBlockOutput out;
  out.x = r.x.value();
  out.h = with_features ? r.h.value() : Matrix();
  return out;
}

Coords denoise_eps(const DenoiserParameters& params, const Coords& z_t,
                   const ConditioningFeatures& cond, int t, const ModelConfig& config) {
  require_shapes(z_t, cond);
  if (z_t.rows() < 2) return Coords::Zero(z_t.rows(), 3);
  const MassWeights w(cond.masses);
  ad::Tape tape(false);
  Graph g(tape, params);
  return forward(g, z_t, cond, t, config, w).value();
}

DenoiseFn make_denoise_fn(const DenoiserParameters& params, const ConditioningFeatures& cond,
                          const ModelConfig& config) {
  return [&params, &cond, &config](const Coords& z, int t) {
    return denoise_eps(params, z, cond, t, config);
  };
}

namespace {

LossAndGrads example_grads(const DenoiserParameters& params, const TrainingExample& ex,
                           const TrainingDraw& draw, const NoiseSchedule& sched,
                           const ModelConfig& config, double weight) {
  LossAndGrads out;
  require_shapes(ex.x, ex.cond);
  if (ex.x.rows() < 2) return out;
  const MassWeights w(ex.cond.masses);
  const Coords z = corrupt_with(ex.x, draw.eps, draw.t, sched);
  ad::Tape tape(true);
  Graph g(tape, params);
  Var pred = forward(g, z, ex.cond, draw.t, config, w);
  Var loss = ad::sum_squares(ad::sub(tape.constant(draw.eps), pred));
  out.loss = weight * loss.value()(0, 0);
  tape.backward(ad::scale(loss, weight));
  for (const auto& [name, v] : g.vars()) out.grads[name] = tape.grad(v);
  return out;
}

}  // namespace

LossAndGrads grad_loss(const DenoiserParameters& params, std::span<const TrainingExample> batch,
                       std::span<const TrainingDraw> draws, const NoiseSchedule& sched,
                       const ModelConfig& config, int threads) {
  if (batch.empty()) throw Error(Errc::InvalidArgument, "empty batch");
  if (draws.size() != batch.size()) throw Error(Errc::ShapeMismatch, "one draw per example required");
  const double weight = 1.0 / static_cast<double>(batch.size());
  std::vector<LossAndGrads> parts(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t b) {
    parts[b] = example_grads(params, batch[b], draws[b], sched, config, weight);
  });

  LossAndGrads total;
  for (const auto& [name, t] : params.tensors) total.grads[name] = Matrix::Zero(t.rows(), t.cols());
  for (const auto& part : parts) {
    total.loss += part.loss;
    for (const auto& [name, g] : part.grads) total.grads[name] += g;
  }
  for (const auto& [name, g] : total.grads)
    if (!g.allFinite()) throw Error(Errc::NonFiniteActivation, "non-finite gradient for " + name);
  return total;
}

LossAndGrads grad_loss(const DenoiserParameters& params, std::span<const TrainingExample> batch,
                       const NoiseSchedule& sched, const ModelConfig& config, std::mt19937_64& rng,
                       int threads) {
  std::vector<TrainingDraw> draws;
  draws.reserve(batch.size());
  for (const auto& ex : batch)
    draws.push_back(draw_training_noise(ex.cond.size(), MassWeights(ex.cond.masses), sched, rng));
  return grad_loss(params, batch, draws, sched, config, threads);
}

double batch_loss(const DenoiserParameters& params, std::span<const TrainingExample> batch,
                  std::span<const TrainingDraw> draws, const NoiseSchedule& sched,
                  const ModelConfig& config) {
  if (batch.empty() || draws.size() != batch.size())
    throw Error(Errc::ShapeMismatch, "one draw per example required");
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Coords z = corrupt_with(batch[b].x, draws[b].eps, draws[b].t, sched);
    total += (draws[b].eps - denoise_eps(params, z, batch[b].cond, draws[b].t, config)).squaredNorm();
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace isostruct
