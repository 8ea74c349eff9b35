#include <gtest/gtest.h>

#include <filesystem>

#include "isostruct/commands.hpp"
#include "isostruct/error.hpp"
#include "isostruct/io.hpp"
#include "test_support.hpp"

using namespace isostruct;
namespace fs = std::filesystem;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::InvalidArgument;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("isostruct_io_" + std::to_string(::getpid())) / name;
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Xyz, ParsesMinimalFile) {
  const Molecule m = parse_xyz("1\n\nC 0.0 0.0 0.0");
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.atomic_numbers()[0], 6);
  EXPECT_DOUBLE_EQ(m.masses()[0], 12.0);
  EXPECT_EQ(m.positions(), Coords::Zero(1, 3));
}

TEST(Xyz, WhitespaceTolerant) {
  const Molecule m = parse_xyz("  2 \r\n comment here\r\n\tO   1.0  -2.0\t3.5\n  H 0 0 0.96  \n\n");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.atomic_numbers()[0], 8);
  EXPECT_EQ(m.atomic_numbers()[1], 1);
  EXPECT_DOUBLE_EQ(m.positions()(0, 2), 3.5);
}

TEST(Xyz, Errors) {
  try {
    parse_xyz("3\n\nC 0 0 0\nC 1 0 0\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos) << e.what();
  }
  EXPECT_EQ(code_of([] { parse_xyz("1\n\nXx 0 0 0\n"); }), Errc::UnknownElement);
  EXPECT_EQ(code_of([] { parse_xyz("1\n\nC 0 zero 0\n"); }), Errc::ParseError);
  EXPECT_EQ(code_of([] { parse_xyz("many\n\nC 0 0 0\n"); }), Errc::ParseError);
}

TEST(Xyz, RoundTripsAtEightDecimals) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 50; ++k) {
    const Molecule m = isostruct::testing::random_molecule(1 + k % 20, rng, 5.0);
    const Molecule back = parse_xyz(write_xyz(m, "round trip"));
    EXPECT_EQ(back.atomic_numbers(), m.atomic_numbers());
    EXPECT_LT((back.positions() - m.positions()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE((back.positions() - m.positions()).cwiseAbs().maxCoeff(), 5e-9 + 1e-15);
  }
}

TEST(Xyz, CanonicalOrderPutsHydrogensLast) {
  Coords x = Coords::Zero(4, 3);
  x(0, 0) = 1;
  x(2, 0) = 2;
  const Molecule m = Molecule::from_elements({1, 6, 1, 8}, x);
  const Molecule c = canonical_order(m);
  EXPECT_EQ(c.atomic_numbers(), (std::vector<int>{8, 6, 1, 1}));
  EXPECT_EQ(c.positions()(2, 0), 1.0);  // stable among hydrogens
  EXPECT_EQ(c.positions()(3, 0), 2.0);
}

TEST(Formula, StringAndAtoms) {
  const Formula f{{1, 4}, {6, 2}, {8, 1}};
  EXPECT_EQ(formula_string(f), "C2H4O");
  EXPECT_EQ(formula_atoms(f), (std::vector<int>{8, 6, 6, 1, 1, 1, 1}));
}

TEST(Base64, KnownVectorsAndRoundTrip) {
  EXPECT_EQ(base64_encode(""), "");
  EXPECT_EQ(base64_encode("f"), "Zg==");
  EXPECT_EQ(base64_encode("fo"), "Zm8=");
  EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
  EXPECT_EQ(base64_decode("Zm9vYg=="), "foob");
  std::string bytes;
  for (int i = 0; i < 256; ++i) bytes.push_back(static_cast<char>(i));
  EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  EXPECT_THROW(base64_decode("@@@@"), Error);
}

TEST(Tensor, LittleEndianLayout) {
  ad::Matrix m(1, 1);
  m(0, 0) = 1.0;  // 0x3FF0000000000000
  const nlohmann::json j = tensor_to_json(m);
  EXPECT_EQ(j.at("data").get<std::string>(), base64_encode(std::string("\0\0\0\0\0\0\xf0\x3f", 8)));
  EXPECT_EQ(j.at("dtype").get<std::string>(), "float64-le");
}

TEST(Tensor, BitExactRoundTripIncludingSpecials) {
  ad::Matrix m(2, 3);
  m << 0.1, -0.0, 1e-310, std::numeric_limits<double>::max(), -7.25, 1.0 / 3.0;
  const ad::Matrix back = tensor_from_json(tensor_to_json(m));
  ASSERT_EQ(back.rows(), 2);
  ASSERT_EQ(back.cols(), 3);
  EXPECT_EQ(std::memcmp(back.data(), m.data(), sizeof(double) * 6), 0);
}

TEST(Checkpoint, SaveLoadIsBitExact) {
  ModelConfig cfg;
  cfg.hidden_dim = 8;
  cfg.message_dim = 12;
  cfg.cond_mlp_dim = 6;
  cfg.time_embed_dim = 4;
  cfg.atom_embed_dim = 2;
  cfg.n_blocks = 2;
  cfg.n_heads = 2;
  cfg.head_dim = 4;
  std::mt19937_64 rng(2);
  Checkpoint ck;
  ck.config = cfg;
  ck.scaling.moment = 0.125;
  ck.params = init_params(cfg, rng);
  ck.ema = init_params(cfg, rng);
  ck.seed = 99;
  ck.step = 17;
  AdamState adam;
  adam.step = 17;
  adam.m = ck.params.tensors;
  adam.v = ck.ema.tensors;
  adam.grad_norms = {0.5, 1.0 / 3.0};
  ck.optimizer = adam;
  std::ostringstream state;
  state << rng;
  ck.rng_state = state.str();
  ck.train_config = {{"steps", 17}};

  const fs::path path = scratch("ckpt") / "model.json";
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.config.hidden_dim, 8);
  EXPECT_EQ(back.config.n_blocks, 2);
  EXPECT_EQ(back.scaling.moment, 0.125);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.step, 17);
  EXPECT_EQ(back.rng_state, ck.rng_state);
  ASSERT_TRUE(back.optimizer.has_value());
  EXPECT_EQ(back.optimizer->grad_norms, adam.grad_norms);
  for (const auto& [name, t] : ck.params.tensors) {
    EXPECT_EQ(back.params.at(name), t) << name;
    EXPECT_EQ(back.ema.at(name), ck.ema.at(name)) << name;
    EXPECT_EQ(back.optimizer->m.at(name), t) << name;
  }
  // Saving the loaded checkpoint reproduces the same bytes.
  const fs::path again = path.parent_path() / "again.json";
  save_checkpoint(again, back);
  EXPECT_EQ(read_text_file(path), read_text_file(again));
}

TEST(Checkpoint, RejectsUnknownVersion) {
  nlohmann::json j = {{"format_version", 999}};
  EXPECT_EQ(code_of([&] { checkpoint_from_json(j); }), Errc::SchemaError);
}

TEST(Observation, SchemaRoundTripAndErrors) {
  ObservationFile obs;
  obs.formula = {{6, 2}, {8, 1}};
  obs.parent = RotationalConstants(30000.0, 9000.0, 7000.0);
  obs.isotopologues.push_back({6, 1.00335484, RotationalConstants(29000.0, 8900.0, 6900.0)});
  const ObservationFile back = observation_from_json(observation_to_json(obs));
  EXPECT_EQ(back.formula, obs.formula);
  EXPECT_EQ(back.parent.a, 30000.0);
  ASSERT_EQ(back.isotopologues.size(), 1u);
  EXPECT_EQ(back.isotopologues[0].substituted_element, 6);

  nlohmann::json j = observation_to_json(obs);
  j.erase("parent_constants_mhz");
  EXPECT_EQ(code_of([&] { observation_from_json(j); }), Errc::SchemaError);
  nlohmann::json k = observation_to_json(obs);
  k["formula"] = 5;
  EXPECT_EQ(code_of([&] { observation_from_json(k); }), Errc::SchemaError);
}

TEST(Observation, ZeroIsotopologuesGiveEmptyMask) {
  ObservationFile obs;
  obs.formula = {{6, 3}};
  obs.parent = RotationalConstants(30000.0, 9000.0, 7000.0);
  const ObservationData d = resolve_observation(obs);
  EXPECT_EQ(d.table.available_count(), 0);
  EXPECT_EQ(d.atoms.size(), 3u);
  EXPECT_GT(d.moments.p_x, 0.0);
}

TEST(Observation, TooManyIsotopologuesIsSchemaError) {
  ObservationFile obs;
  obs.formula = {{6, 1}, {8, 1}};
  obs.parent = RotationalConstants(30000.0, 9000.0, 7000.0);
  obs.isotopologues.push_back({8, 2.0, RotationalConstants(29000.0, 8900.0, 6900.0)});
  obs.isotopologues.push_back({8, 2.0, RotationalConstants(29100.0, 8950.0, 6950.0)});
  EXPECT_EQ(code_of([&] { resolve_observation(obs); }), Errc::SchemaError);
}

TEST(Observation, SimulatedFileRoundTripsCoordinates) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 20; ++k) {
    std::vector<int> z{6, 6, 8, 7, 1, 1};
    z.resize(static_cast<std::size_t>(3 + k % 4));
    const Molecule mol = Molecule::from_elements(z, isostruct::testing::random_coords(static_cast<Eigen::Index>(z.size()), rng, 1.3));
    const ObservationFile obs = simulate_observation(mol, 0.0, rng);
    const ObservationData d = resolve_observation(observation_from_json(observation_to_json(obs)));
    const Molecule canon = canonical_order(mol);
    const Coords truth = align_to_pas(canon).aligned_positions.cwiseAbs();
    EXPECT_EQ(d.atoms, canon.atomic_numbers());
    for (Eigen::Index i = 0; i < truth.rows(); ++i)
      for (int c = 0; c < 3; ++c)
        if (d.table.mask(i, c) != 0.0) {
          // A zero coordinate comes back as sqrt(roundoff); compare its square instead.
          if (truth(i, c) > 1e-3)
            EXPECT_NEAR(d.table.values(i, c), truth(i, c), 1e-8) << k;
          else
            EXPECT_NEAR(d.table.values(i, c) * d.table.values(i, c), truth(i, c) * truth(i, c), 1e-12) << k;
        }
    for (std::size_t i = 0; i < d.atoms.size(); ++i)
      if (d.atoms[i] != 1) EXPECT_GT(d.table.mask.row(static_cast<Eigen::Index>(i)).sum(), 0.0);
  }
}

TEST(Observation, PrecomputedCoordinatesAreUsedDirectly) {
  ObservationFile obs;
  obs.formula = {{6, 1}, {1, 2}};
  obs.parent = RotationalConstants(30000.0, 9000.0, 7000.0);
  obs.precomputed.push_back({6, {0.5, std::nullopt, 0.25}});
  const ObservationFile back = observation_from_json(observation_to_json(obs));
  const ObservationData d = resolve_observation(back);
  EXPECT_EQ(d.table.mask(0, 0), 1.0);
  EXPECT_EQ(d.table.mask(0, 1), 0.0);
  EXPECT_EQ(d.table.values(0, 2), 0.25);
}

TEST(Histogram, JsonRoundTrip) {
  DistanceHistogram h;
  h.bin_width = 0.1;
  h.counts = {0, 2, 5, 1};
  normalize_histogram(h);
  const DistanceHistogram back = histogram_from_json(histogram_to_json(h));
  EXPECT_EQ(back.counts, h.counts);
  EXPECT_EQ(back.bin_width, h.bin_width);
  for (std::size_t i = 0; i < h.log_probs.size(); ++i) EXPECT_DOUBLE_EQ(back.log_probs[i], h.log_probs[i]);
}

TEST(Jsonl, RoundTrip) {
  const fs::path p = scratch("jsonl") / "rows.jsonl";
  const std::vector<nlohmann::json> rows{{{"a", 1}}, {{"b", "x"}, {"c", {1, 2}}}};
  write_jsonl(p, rows);
  EXPECT_EQ(read_jsonl(p), rows);
  const std::string text = read_text_file(p);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
}
