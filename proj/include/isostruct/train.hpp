#pragma once

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "isostruct/denoiser.hpp"
#include "isostruct/diffusion.hpp"
#include "isostruct/io.hpp"
#include "isostruct/kraitchman.hpp"

namespace isostruct {

struct TrainConfig {
  ModelConfig model;
  FeatureScaling scaling;
  std::string schedule = "polynomial-2";
  long steps = 3000;
  int batch_size = 8;
  double learning_rate = 4e-4;
  long warmup_steps = 2000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_decay = 0.999;
  int clip_window = 50;
  DropoutConfig dropout{0.0, 1.0, false, 0.0};
  int threads = 1;
  long log_every = 100;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults. Throws SchemaError.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Conditioning for one PAS-aligned molecule with a freshly drawn dropout mask.
TrainingExample make_training_example(const Molecule& mol_in_pas, const DropoutConfig& dropout,
                                      const FeatureScaling& scaling, std::mt19937_64& rng);

struct StepReport {
  long step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  bool clipped = false;
  double learning_rate = 0.0;
};

/// Adam with linear warmup, adaptive gradient clipping at 1.5μ + 2σ of the
/// trailing gradient norms, and an EMA copy of the parameters.
class Trainer {
 public:
  /// Fresh run. `dataset` molecules must be PAS-aligned.
  Trainer(TrainConfig cfg, std::vector<Molecule> dataset, std::uint64_t seed);
  /// Resumes from a checkpoint written by checkpoint().
  Trainer(TrainConfig cfg, std::vector<Molecule> dataset, const Checkpoint& resume);

  StepReport step();
  void run(long steps, const std::function<void(const StepReport&)>& on_step = {});

  Checkpoint checkpoint() const;
  const DenoiserParameters& params() const { return params_; }
  const DenoiserParameters& ema() const { return ema_; }
  long steps_done() const { return adam_.step; }
  const TrainConfig& config() const { return cfg_; }

 private:
  std::vector<std::size_t> next_batch();

  TrainConfig cfg_;
  std::vector<Molecule> dataset_;
  NoiseSchedule sched_;
  std::uint64_t seed_;
  std::mt19937_64 rng_;
  DenoiserParameters params_;
  DenoiserParameters ema_;
  AdamState adam_;
};

/// Threshold 1.5μ + 2σ (population σ) over `norms`.
double clip_threshold(std::span<const double> norms);

struct SampleRequest {
  std::vector<int> atoms;
  std::vector<double> masses;
  PlanarMoments moments;
  SubstitutionTable table;
  int k = 1;
  std::uint64_t seed = 0;
  int threads = 1;
  bool use_ema = true;
};

struct RankedStructure {
  Molecule molecule;
  double score;
  std::size_t sample_index;
};

/// K samples with per-sample seeds, ranked by substitution-coordinate deviation.
std::vector<RankedStructure> sample_and_rank(const Checkpoint& ckpt, const SampleRequest& req);

}  // namespace isostruct
