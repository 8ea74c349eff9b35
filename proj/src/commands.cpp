#include "isostruct/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>

#include "isostruct/dataset.hpp"
#include "isostruct/elements.hpp"
#include "isostruct/error.hpp"
#include "isostruct/evaluate.hpp"
#include "isostruct/train.hpp"

namespace isostruct {

using nlohmann::json;

namespace {

json config_or_empty(const CommonOptions& common) {
  return common.config ? read_json_file(*common.config) : json::object();
}

std::string numbered(const std::string& stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%03zu", i);
  return stem + buf;
}

Molecule pas_aligned(const Molecule& mol) {
  return mol.with_positions(align_to_pas(mol).aligned_positions);
}

Molecule pas_aligned_or_same(const Molecule& mol) {
  try {
    return pas_aligned(mol);
  } catch (const Error&) {
    return mol;
  }
}

json abs_row(const SubstitutionTable& t, Eigen::Index i) {
  json row = json::array();
  for (int c = 0; c < 3; ++c) row.push_back(t.mask(i, c) != 0.0 ? json(t.values(i, c)) : json(nullptr));
  return row;
}

}  // namespace

std::vector<fs::path> xyz_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::IoError, dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".xyz") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

ObservationFile simulate_observation(const Molecule& mol, double noise, std::mt19937_64& rng) {
  if (noise < 0.0) throw Error(Errc::InvalidArgument, "noise must be non-negative");
  const Molecule canon = canonical_order(mol);
  const PasAlignment pas = align_to_pas(canon);
  const Molecule aligned = canon.with_positions(pas.aligned_positions);

  std::normal_distribution<double> normal(0.0, 1.0);
  auto perturb = [&](const RotationalConstants& rc) {
    if (noise == 0.0) return rc;
    std::array<double, 3> v{rc.a * (1.0 + noise * normal(rng)), rc.b * (1.0 + noise * normal(rng)),
                            rc.c * (1.0 + noise * normal(rng))};
    std::sort(v.begin(), v.end(), std::greater<>());
    return RotationalConstants(v[0], v[1], v[2]);
  };

  ObservationFile obs;
  obs.formula = formula_of(aligned);
  obs.parent = perturb(planar_moments_to_constants(pas.planar_moments));
  for (std::size_t i = 0; i < aligned.size(); ++i) {
    const int z = aligned.atomic_numbers()[i];
    if (!is_naturally_abundant(z)) continue;
    const auto delta = default_isotope_delta(z);
    if (!delta) continue;
    const PlanarMoments iso = simulate_isotopologue(aligned, static_cast<int>(i), *delta);
    obs.isotopologues.push_back({z, *delta, perturb(planar_moments_to_constants(iso))});
  }
  return obs;
}

void command_simulate(const CommonOptions& common, const SimulateOptions& opts) {
  const json cfg = config_or_empty(common);
  const double noise = cfg.value("noise", opts.noise);
  std::mt19937_64 rng(common.seed);
  const ObservationFile obs = simulate_observation(read_xyz_file(opts.xyz), noise, rng);
  write_json_file(common.out, observation_to_json(obs));
}

json substitution_report(const ObservationData& data) {
  json atoms = json::array();
  for (std::size_t i = 0; i < data.atoms.size(); ++i)
    atoms.push_back({{"index", i},
                     {"element", std::string(element(data.atoms[i]).symbol)},
                     {"abs_angstrom", abs_row(data.table, static_cast<Eigen::Index>(i))}});
  return {{"formula", formula_string(data.formula)},
          {"planar_moments_amu_angstrom2", {data.moments.p_x, data.moments.p_y, data.moments.p_z}},
          {"atoms", atoms}};
}

void command_kraitchman(const CommonOptions& common, const fs::path& observation) {
  write_json_file(common.out, substitution_report(load_observation(observation)));
}

std::vector<Molecule> load_dataset(const fs::path& dir) {
  std::vector<Molecule> out;
  for (const auto& p : xyz_files(dir)) out.push_back(pas_aligned(canonical_order(read_xyz_file(p))));
  if (out.empty()) throw Error(Errc::EmptyCorpus, "no .xyz files in " + dir.string());
  return out;
}

void command_train(const CommonOptions& common, const TrainOptions& opts) {
  TrainConfig cfg = TrainConfig::from_json(config_or_empty(common));
  cfg.threads = common.threads;
  if (opts.steps) cfg.steps = *opts.steps;
  std::vector<Molecule> data = load_dataset(opts.data);

  std::optional<Trainer> trainer;
  if (opts.resume)
    trainer.emplace(cfg, std::move(data), load_checkpoint(*opts.resume));
  else
    trainer.emplace(cfg, std::move(data), common.seed);

  const fs::path log_path = opts.log ? *opts.log : fs::path(common.out.string() + ".log.jsonl");
  std::vector<json> rows;
  const long remaining = std::max(0L, cfg.steps - trainer->steps_done());
  trainer->run(remaining, [&](const StepReport& r) {
    if (r.step % cfg.log_every == 0 || r.step == cfg.steps) {
      rows.push_back({{"step", r.step},
                      {"loss", r.loss},
                      {"grad_norm", r.grad_norm},
                      {"clipped", r.clipped},
                      {"learning_rate", r.learning_rate}});
      std::cerr << "step " << r.step << " loss " << r.loss << '\n';
    }
  });
  save_checkpoint(common.out, trainer->checkpoint());
  write_jsonl(log_path, rows);
}

void command_sample(const CommonOptions& common, const SampleOptions& opts) {
  const json cfg = config_or_empty(common);
  const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
  const ObservationData obs = load_observation(opts.observation);
  SampleRequest req;
  req.atoms = obs.atoms;
  req.masses = obs.masses;
  req.moments = obs.moments;
  req.table = obs.table;
  req.k = cfg.value("k", opts.k);
  req.seed = common.seed;
  req.threads = common.threads;
  req.use_ema = cfg.value("use_ema", opts.use_ema);
  const auto ranked = sample_and_rank(ckpt, req);

  fs::create_directories(common.out);
  std::vector<json> rows;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const std::string file = numbered("rank", r) + ".xyz";
    write_xyz_file(common.out / file, ranked[r].molecule, "score=" + std::to_string(ranked[r].score));
    rows.push_back({{"rank", r}, {"file", file}, {"sample_index", ranked[r].sample_index}, {"score", ranked[r].score}});
  }
  write_jsonl(common.out / "ranking.jsonl", rows);
}

GaConfig ga_config_from_json(const json& j) {
  GaConfig c;
  if (!j.is_object()) throw Error(Errc::SchemaError, "GA config must be an object");
  try {
    c.generations = j.value("generations", c.generations);
    c.population = j.value("population", c.population);
    c.mutation_rate = j.value("mutation_rate", c.mutation_rate);
    c.crossover_rate = j.value("crossover_rate", c.crossover_rate);
    c.tournament_size = j.value("tournament_size", c.tournament_size);
    c.position_sigma = j.value("position_sigma", c.position_sigma);
    c.init_sigma = j.value("init_sigma", c.init_sigma);
    c.decoration_repeats = j.value("decoration_repeats", c.decoration_repeats);
    c.top_k = j.value("top_k", c.top_k);
    c.literal_clash_penalty = j.value("literal_clash_penalty", c.literal_clash_penalty);
    c.validate();
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, std::string("GA config: ") + e.what());
  } catch (const Error& e) {
    throw Error(Errc::SchemaError, std::string("GA config: ") + e.what());
  }
  return c;
}

void command_ga(const CommonOptions& common, const GaOptions& opts) {
  const json cfg_json = config_or_empty(common);
  GaConfig cfg = ga_config_from_json(cfg_json);
  cfg.threads = common.threads;
  const ObservationData obs = load_observation(opts.observation);

  std::optional<DistanceHistogram> hist;
  if (opts.histogram) {
    hist = histogram_from_json(read_json_file(*opts.histogram));
  } else if (opts.corpus) {
    std::vector<Molecule> corpus;
    for (const auto& p : xyz_files(*opts.corpus)) corpus.push_back(read_xyz_file(p));
    hist = build_histogram(corpus, cfg_json.value("bin_width", 0.05));
  }

  std::vector<int> heavy_rows;
  for (std::size_t i = 0; i < obs.atoms.size(); ++i)
    if (!is_hydrogen(obs.atoms[i])) heavy_rows.push_back(static_cast<int>(i));
  const auto n_heavy = static_cast<Eigen::Index>(heavy_rows.size());
  std::vector<int> hz;
  std::vector<double> hm;
  Coords abs(n_heavy, 3);
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> mask(n_heavy, 3);
  for (Eigen::Index k = 0; k < n_heavy; ++k) {
    const int i = heavy_rows[static_cast<std::size_t>(k)];
    hz.push_back(obs.atoms[static_cast<std::size_t>(i)]);
    hm.push_back(obs.masses[static_cast<std::size_t>(i)]);
    abs.row(k) = obs.table.values.row(i);
    mask.row(k) = obs.table.mask.row(i);
  }
  const GaInstance inst(hz, hm, abs, mask, obs.moments);
  const DistanceHistogram* hp = hist ? &*hist : nullptr;

  std::mt19937_64 rng(common.seed);
  std::vector<Framework> frameworks;
  if (cfg_json.value("brute_force", false))
    frameworks.push_back(brute_force_signs(inst, hp));
  else
    frameworks = evolve(inst, cfg, hp, rng);

  const int n_h = static_cast<int>(obs.atoms.size()) - static_cast<int>(n_heavy);
  fs::create_directories(common.out);
  std::vector<json> rows;
  for (std::size_t r = 0; r < frameworks.size(); ++r) {
    const Framework& f = frameworks[r];
    const Decoration dec = decorate_hydrogens(hz, f.positions, n_h, cfg, rng);
    const Molecule full = pas_aligned_or_same(dec.molecule);
    const std::string file = numbered("rank", r) + ".xyz";
    write_xyz_file(common.out / file, full, "badness=" + std::to_string(f.badness));
    write_xyz_file(common.out / (numbered("framework", r) + ".xyz"), Molecule::from_elements(hz, f.positions));
    rows.push_back({{"rank", r},
                    {"file", file},
                    {"badness", f.badness},
                    {"moment_error", f.terms.moment_error},
                    {"com_error", f.terms.com_error},
                    {"pairwise_nll", f.terms.pairwise_nll},
                    {"decoration_score", dec.score},
                    {"deviation", deviation_score(full.positions(), obs.table)}});
  }
  write_jsonl(common.out / "ranking.jsonl", rows);
}

namespace {

double heavy_rmsd(const Molecule& pred, const Molecule& truth) {
  const Molecule hp = pred.subset(pred.heavy_indices());
  const Molecule ht = truth.subset(truth.heavy_indices());
  if (ht.size() == 0) return 0.0;
  return min_rmsd_over_reflections(hp, ht).rmsd;
}

json evaluate_example(const std::string& name, const std::vector<fs::path>& preds, const Molecule& truth_raw) {
  const Molecule truth = pas_aligned_or_same(truth_raw);
  json ranks = json::array();
  for (const auto& p : preds) {
    const Molecule pred = pas_aligned_or_same(read_xyz_file(p));
    json row = {{"file", p.filename().string()}};
    try {
      const MatchReport m = min_rmsd_over_reflections(pred, truth);
      row["rmsd"] = m.rmsd;
      row["heavy_rmsd"] = heavy_rmsd(pred, truth);
      row["connectivity_correct"] = m.connectivity_correct;
      row["heavy_connectivity_correct"] = m.heavy_connectivity_correct;
    } catch (const Error& e) {
      row["error"] = e.what();
      row["connectivity_correct"] = false;
      row["heavy_connectivity_correct"] = false;
    }
    ranks.push_back(row);
  }
  return {{"example", name}, {"predictions", ranks}};
}

}  // namespace

std::vector<json> evaluate_predictions(const EvaluateOptions& opts) {
  std::vector<json> rows;
  if (fs::is_directory(opts.truth)) {
    for (const auto& t : xyz_files(opts.truth)) {
      const std::string name = t.stem().string();
      rows.push_back(evaluate_example(name, xyz_files(opts.pred / name), read_xyz_file(t)));
    }
  } else {
    rows.push_back(evaluate_example(opts.truth.stem().string(), xyz_files(opts.pred), read_xyz_file(opts.truth)));
  }

  const std::size_t n_examples = rows.size();
  for (int k : opts.top_k) {
    if (k < 1) throw Error(Errc::InvalidArgument, "top-k values must be positive");
    std::size_t conn = 0, heavy = 0, with_rmsd = 0;
    double rmsd_sum = 0.0;
    for (std::size_t e = 0; e < n_examples; ++e) {
      const auto& preds = rows[e]["predictions"];
      bool any_conn = false, any_heavy = false;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < preds.size() && r < static_cast<std::size_t>(k); ++r) {
        any_conn = any_conn || preds[r]["connectivity_correct"].get<bool>();
        any_heavy = any_heavy || preds[r]["heavy_connectivity_correct"].get<bool>();
        if (preds[r].contains("rmsd")) best = std::min(best, preds[r]["rmsd"].get<double>());
      }
      conn += any_conn;
      heavy += any_heavy;
      if (std::isfinite(best)) {
        rmsd_sum += best;
        ++with_rmsd;
      }
    }
    const double denom = n_examples > 0 ? static_cast<double>(n_examples) : 1.0;
    rows.push_back({{"aggregate", true},
                    {"k", k},
                    {"examples", n_examples},
                    {"connectivity_correct", static_cast<double>(conn) / denom},
                    {"heavy_connectivity_correct", static_cast<double>(heavy) / denom},
                    {"mean_min_rmsd", with_rmsd > 0 ? json(rmsd_sum / static_cast<double>(with_rmsd)) : json(nullptr)}});
  }
  return rows;
}

void command_evaluate(const CommonOptions& common, const EvaluateOptions& opts) {
  EvaluateOptions o = opts;
  const json cfg = config_or_empty(common);
  if (cfg.contains("top_k")) o.top_k = cfg["top_k"].get<std::vector<int>>();
  write_jsonl(common.out, evaluate_predictions(o));
}

void command_gen_dataset(const CommonOptions& common, const GenDatasetOptions& opts) {
  const json j = config_or_empty(common);
  SyntheticConfig cfg;
  try {
    cfg.n_molecules = j.value("n_molecules", cfg.n_molecules);
    cfg.n_atoms = j.value("n_atoms", cfg.n_atoms);
    cfg.min_heavy = j.value("min_heavy", cfg.min_heavy);
    cfg.max_heavy = j.value("max_heavy", cfg.max_heavy);
    if (j.contains("heavy_elements")) {
      cfg.heavy_elements.clear();
      for (const auto& s : j["heavy_elements"]) cfg.heavy_elements.push_back(atomic_number_of(s.get<std::string>()));
    }
    cfg.bond_jitter = j.value("bond_jitter", cfg.bond_jitter);
    cfg.min_relative_gap = j.value("min_relative_gap", cfg.min_relative_gap);
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, std::string("dataset config: ") + e.what());
  }
  if (opts.count) cfg.n_molecules = *opts.count;
  std::mt19937_64 rng(common.seed);
  const std::vector<Molecule> mols = generate_molecules(cfg, rng);
  fs::create_directories(common.out);
  for (std::size_t i = 0; i < mols.size(); ++i)
    write_xyz_file(common.out / (numbered("mol", i) + ".xyz"), mols[i], formula_string(formula_of(mols[i])));
  if (opts.histogram_out)
    write_json_file(*opts.histogram_out, histogram_to_json(build_histogram(mols, j.value("bin_width", 0.05))));
}

}  // namespace isostruct
