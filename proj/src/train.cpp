#include "isostruct/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "isostruct/error.hpp"
#include "isostruct/evaluate.hpp"
#include "isostruct/parallel.hpp"
#include "isostruct/subspace.hpp"

namespace isostruct {

using nlohmann::json;

void TrainConfig::validate() const {
  model.validate();
  if (steps < 0 || batch_size < 1 || warmup_steps < 0 || clip_window < 2 || threads < 1 || log_every < 1)
    throw Error(Errc::InvalidArgument, "training sizes must be positive");
  if (!(learning_rate > 0.0) || !(ema_decay >= 0.0 && ema_decay < 1.0) || !(beta1 >= 0.0 && beta1 < 1.0) ||
      !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0))
    throw Error(Errc::InvalidArgument, "optimizer settings out of range");
  if (dropout.p_min < 0.0 || dropout.p_max > 1.0 || dropout.p_min > dropout.p_max)
    throw Error(Errc::InvalidArgument, "dropout interval must satisfy 0 <= p_min <= p_max <= 1");
}

json TrainConfig::to_json() const {
  return {{"model", model_config_to_json(model)},
          {"feature_scaling",
           {{"atomic_number", scaling.atomic_number},
            {"mass", scaling.mass},
            {"coordinate", scaling.coordinate},
            {"moment", scaling.moment}}},
          {"schedule", schedule},
          {"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"warmup_steps", warmup_steps},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"ema_decay", ema_decay},
          {"clip_window", clip_window},
          {"dropout",
           {{"p_min", dropout.p_min},
            {"p_max", dropout.p_max},
            {"carbon_only", dropout.carbon_only},
            {"near_axis_threshold", dropout.near_axis_threshold}}},
          {"threads", threads},
          {"log_every", log_every}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::SchemaError, "training config must be a JSON object");
  TrainConfig c;
  try {
    if (j.contains("model")) c.model = model_config_from_json(j["model"]);
    if (j.contains("feature_scaling")) {
      const auto& f = j["feature_scaling"];
      c.scaling.atomic_number = f.value("atomic_number", c.scaling.atomic_number);
      c.scaling.mass = f.value("mass", c.scaling.mass);
      c.scaling.coordinate = f.value("coordinate", c.scaling.coordinate);
      c.scaling.moment = f.value("moment", c.scaling.moment);
    }
    c.schedule = j.value("schedule", c.schedule);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.clip_window = j.value("clip_window", c.clip_window);
    if (j.contains("dropout")) {
      const auto& d = j["dropout"];
      c.dropout.p_min = d.value("p_min", c.dropout.p_min);
      c.dropout.p_max = d.value("p_max", c.dropout.p_max);
      c.dropout.carbon_only = d.value("carbon_only", c.dropout.carbon_only);
      c.dropout.near_axis_threshold = d.value("near_axis_threshold", c.dropout.near_axis_threshold);
    }
    c.threads = j.value("threads", c.threads);
    c.log_every = j.value("log_every", c.log_every);
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, std::string("training config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(Errc::SchemaError, std::string("training config: ") + e.what());
  }
  return c;
}

TrainingExample make_training_example(const Molecule& mol, const DropoutConfig& dropout,
                                      const FeatureScaling& scaling, std::mt19937_64& rng) {
  const SubstitutionTable table = build_substitution_table(mol, dropout, rng);
  const Mat3 p = planar_dyadic(mol);
  const PlanarMoments pm(p(0, 0), p(1, 1), p(2, 2));
  return {mol.positions(), build_conditioning(mol, table, pm, scaling)};
}

double clip_threshold(std::span<const double> norms) {
  if (norms.empty()) return std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(norms.size());
  const double mean = std::accumulate(norms.begin(), norms.end(), 0.0) / n;
  double var = 0.0;
  for (double x : norms) var += (x - mean) * (x - mean);
  return 1.5 * mean + 2.0 * std::sqrt(var / n);
}

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::map<std::string, ad::Matrix> zeros_like(const DenoiserParameters& p) {
  std::map<std::string, ad::Matrix> out;
  for (const auto& [name, t] : p.tensors) out[name] = ad::Matrix::Zero(t.rows(), t.cols());
  return out;
}

void check_dataset(const std::vector<Molecule>& dataset) {
  if (dataset.empty()) throw Error(Errc::EmptyCorpus, "training set is empty");
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, std::vector<Molecule> dataset, std::uint64_t seed)
    : cfg_(std::move(cfg)), dataset_(std::move(dataset)), seed_(seed), rng_(seed) {
  cfg_.validate();
  check_dataset(dataset_);
  sched_ = make_schedule(cfg_.model.t_max, cfg_.schedule);
  params_ = init_params(cfg_.model, rng_);
  ema_ = params_;
  adam_.m = zeros_like(params_);
  adam_.v = zeros_like(params_);
}

Trainer::Trainer(TrainConfig cfg, std::vector<Molecule> dataset, const Checkpoint& resume)
    : cfg_(std::move(cfg)), dataset_(std::move(dataset)), seed_(resume.seed) {
  cfg_.model = resume.config;
  cfg_.scaling = resume.scaling;
  cfg_.schedule = resume.schedule_kind;
  cfg_.validate();
  check_dataset(dataset_);
  if (!resume.optimizer || resume.rng_state.empty())
    throw Error(Errc::SchemaError, "checkpoint carries no optimizer state to resume from");
  sched_ = make_schedule(cfg_.model.t_max, cfg_.schedule);
  params_ = resume.params;
  ema_ = resume.ema;
  adam_ = *resume.optimizer;
  std::istringstream is(resume.rng_state);
  is >> rng_;
  if (!is) throw Error(Errc::SchemaError, "checkpoint rng state is unreadable");
}

// Each step reshuffles, so the rng alone determines future batches and a
// resumed run continues exactly where the checkpoint left off.
std::vector<std::size_t> Trainer::next_batch() {
  std::vector<std::size_t> batch;
  batch.reserve(static_cast<std::size_t>(cfg_.batch_size));
  std::vector<std::size_t> order(dataset_.size());
  while (batch.size() < static_cast<std::size_t>(cfg_.batch_size)) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    for (std::size_t i : order) {
      if (batch.size() == static_cast<std::size_t>(cfg_.batch_size)) break;
      batch.push_back(i);
    }
  }
  return batch;
}

StepReport Trainer::step() {
  const std::vector<std::size_t> idx = next_batch();
  std::vector<TrainingExample> batch;
  std::vector<TrainingDraw> draws;
  for (std::size_t i : idx) {
    batch.push_back(make_training_example(dataset_[i], cfg_.dropout, cfg_.scaling, rng_));
    draws.push_back(draw_training_noise(dataset_[i].size(), MassWeights(dataset_[i].masses()), sched_, rng_));
  }
  LossAndGrads lg = grad_loss(params_, batch, draws, sched_, cfg_.model, cfg_.threads);

  double sq = 0.0;
  for (const auto& [name, g] : lg.grads) sq += g.squaredNorm();
  StepReport report;
  report.loss = lg.loss;
  report.grad_norm = std::sqrt(sq);

  double recorded = report.grad_norm;
  double factor = 1.0;
  const auto window = static_cast<std::size_t>(cfg_.clip_window);
  if (adam_.grad_norms.size() >= window) {
    const double limit = clip_threshold(adam_.grad_norms);
    if (report.grad_norm > limit) {
      factor = limit / report.grad_norm;
      recorded = limit;
      report.clipped = true;
    }
  }
  adam_.grad_norms.push_back(recorded);
  if (adam_.grad_norms.size() > window)
    adam_.grad_norms.erase(adam_.grad_norms.begin(),
                           adam_.grad_norms.begin() + static_cast<std::ptrdiff_t>(adam_.grad_norms.size() - window));

  adam_.step += 1;
  const double t = static_cast<double>(adam_.step);
  const double warm = cfg_.warmup_steps > 0 ? std::min(1.0, t / static_cast<double>(cfg_.warmup_steps)) : 1.0;
  report.learning_rate = cfg_.learning_rate * warm;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (auto& [name, p] : params_.tensors) {
    const ad::Matrix g = lg.grads.at(name) * factor;
    ad::Matrix& m = adam_.m.at(name);
    ad::Matrix& v = adam_.v.at(name);
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.array() -= report.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.adam_eps);
    ad::Matrix& e = ema_.tensors.at(name);
    e = cfg_.ema_decay * e + (1.0 - cfg_.ema_decay) * p;
  }
  report.step = adam_.step;
  return report;
}

void Trainer::run(long steps, const std::function<void(const StepReport&)>& on_step) {
  for (long s = 0; s < steps; ++s) {
    const StepReport r = step();
    if (on_step) on_step(r);
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = cfg_.model;
  c.scaling = cfg_.scaling;
  c.schedule_kind = cfg_.schedule;
  c.params = params_;
  c.ema = ema_;
  c.seed = seed_;
  c.step = adam_.step;
  c.optimizer = adam_;
  c.rng_state = rng_to_string(rng_);
  c.train_config = cfg_.to_json();
  return c;
}

std::vector<RankedStructure> sample_and_rank(const Checkpoint& ckpt, const SampleRequest& req) {
  if (req.k < 1) throw Error(Errc::InvalidArgument, "K must be at least 1");
  const auto n = static_cast<Eigen::Index>(req.atoms.size());
  if (req.masses.size() != req.atoms.size() || req.table.rows() != n)
    throw Error(Errc::ShapeMismatch, "sample request arrays disagree in atom count");
  const NoiseSchedule sched = make_schedule(ckpt.config.t_max, ckpt.schedule_kind);
  const DenoiserParameters& params = req.use_ema ? ckpt.ema : ckpt.params;

  const Molecule stub(req.atoms, req.masses, Coords::Zero(n, 3));
  const ConditioningFeatures cond = build_conditioning(stub, req.table, req.moments, ckpt.scaling);
  const MassWeights w(req.masses);
  const DenoiseFn denoise = make_denoise_fn(params, cond, ckpt.config);

  std::vector<Molecule> samples(static_cast<std::size_t>(req.k), stub);
  parallel_for(samples.size(), req.threads, [&](std::size_t k) {
    std::seed_seq seq{static_cast<std::uint32_t>(req.seed), static_cast<std::uint32_t>(req.seed >> 32),
                      static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(seq);
    Coords x = sample(denoise, w, sched, rng);
    Molecule mol = stub.with_positions(x);
    try {
      mol = mol.with_positions(align_to_pas(mol).aligned_positions);
    } catch (const Error&) {
      // Degenerate sample: keep the sampler's frame.
    }
    samples[k] = std::move(mol);
  });

  const auto ranking = rank_by_deviation(samples, req.table);
  std::vector<RankedStructure> out;
  for (const auto& r : ranking) out.push_back({samples[r.index], r.score, r.index});
  return out;
}

}  // namespace isostruct
