#include "isostruct/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "isostruct/elements.hpp"
#include "isostruct/error.hpp"

namespace isostruct {

using nlohmann::json;

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  std::string buf(s);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size() || errno == ERANGE || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

Molecule parse_xyz(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = end + 1;
  }
  // Trailing blank lines are not atoms.
  while (lines.size() > 2 && split_ws(lines.back()).empty()) lines.pop_back();

  const auto count_tokens = split_ws(lines.empty() ? std::string_view{} : lines[0]);
  if (count_tokens.size() != 1) throw ParseError(1, "expected a single atom count");
  long count = 0;
  {
    const std::string s(count_tokens[0]);
    char* end = nullptr;
    count = std::strtol(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || count < 0) throw ParseError(1, "atom count is not a non-negative integer");
  }
  const std::size_t available = lines.size() >= 2 ? lines.size() - 2 : 0;
  if (available != static_cast<std::size_t>(count))
    throw ParseError(1, "atom count " + std::to_string(count) + " does not match " + std::to_string(available) +
                            " atom rows");

  std::vector<int> z;
  Coords x(count, 3);
  for (long i = 0; i < count; ++i) {
    const int line_no = static_cast<int>(i) + 3;
    const auto tok = split_ws(lines[static_cast<std::size_t>(i) + 2]);
    if (tok.size() < 4) throw ParseError(line_no, "expected 'Element x y z'");
    const auto zi = try_atomic_number_of(tok[0]);
    if (!zi) throw Error(Errc::UnknownElement, "unknown element '" + std::string(tok[0]) + "' on line " +
                                                   std::to_string(line_no));
    z.push_back(*zi);
    for (int c = 0; c < 3; ++c) {
      const auto v = parse_double(tok[static_cast<std::size_t>(c) + 1]);
      if (!v) throw ParseError(line_no, "bad coordinate '" + std::string(tok[static_cast<std::size_t>(c) + 1]) + "'");
      x(i, c) = *v;
    }
  }
  return Molecule::from_elements(std::move(z), std::move(x));
}

std::string write_xyz(const Molecule& mol, std::string_view comment) {
  std::ostringstream os;
  os << mol.size() << '\n';
  std::string c(comment);
  std::replace(c.begin(), c.end(), '\n', ' ');
  os << c << '\n';
  os << std::fixed << std::setprecision(8);
  for (std::size_t i = 0; i < mol.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    os << std::left << std::setw(3) << element(mol.atomic_numbers()[i]).symbol << std::right;
    for (int k = 0; k < 3; ++k) os << ' ' << std::setw(16) << mol.positions()(r, k);
    os << '\n';
  }
  return os.str();
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

Molecule read_xyz_file(const std::filesystem::path& path) { return parse_xyz(read_text_file(path)); }

void write_xyz_file(const std::filesystem::path& path, const Molecule& mol, std::string_view comment) {
  write_text_file(path, write_xyz(mol, comment));
}

Molecule canonical_order(const Molecule& mol) {
  std::vector<int> order(mol.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return mol.atomic_numbers()[static_cast<std::size_t>(a)] > mol.atomic_numbers()[static_cast<std::size_t>(b)];
  });
  return mol.subset(order);
}

Formula formula_of(const Molecule& mol) {
  Formula f;
  for (int z : mol.atomic_numbers()) ++f[z];
  return f;
}

std::vector<int> formula_atoms(const Formula& formula) {
  std::vector<int> atoms;
  for (auto it = formula.rbegin(); it != formula.rend(); ++it)
    atoms.insert(atoms.end(), static_cast<std::size_t>(it->second), it->first);
  return atoms;
}

std::string formula_string(const Formula& formula) {
  // Hill order: C, H, then alphabetical.
  std::vector<std::pair<std::string, int>> parts;
  for (const auto& [z, n] : formula) parts.emplace_back(std::string(element(z).symbol), n);
  const bool has_carbon = formula.count(6) > 0;
  std::sort(parts.begin(), parts.end(), [&](const auto& a, const auto& b) {
    auto rank = [&](const std::string& s) { return has_carbon ? (s == "C" ? 0 : s == "H" ? 1 : 2) : 2; };
    if (rank(a.first) != rank(b.first)) return rank(a.first) < rank(b.first);
    return a.first < b.first;
  });
  std::string out;
  for (const auto& [sym, n] : parts) out += sym + (n > 1 ? std::to_string(n) : "");
  return out;
}

// ---- observation JSON ------------------------------------------------------

namespace {

json constants_json(const RotationalConstants& rc) { return {{"A", rc.a}, {"B", rc.b}, {"C", rc.c}}; }

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw Error(Errc::SchemaError, where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(Errc::SchemaError, where + ": field '" + key + "' has the wrong type");
  }
}

RotationalConstants constants_from_json(const json& j, const std::string& where) {
  const double a = field<double>(j, "A", where);
  const double b = field<double>(j, "B", where);
  const double c = field<double>(j, "C", where);
  try {
    return RotationalConstants(a, b, c);
  } catch (const Error& e) {
    throw Error(Errc::SchemaError, where + ": " + e.what());
  }
}

int element_from_json(const json& j, const std::string& where) {
  const auto sym = field<std::string>(j, "element", where);
  const auto z = try_atomic_number_of(sym);
  if (!z) throw Error(Errc::SchemaError, where + ": unknown element '" + sym + "'");
  return *z;
}

}  // namespace

json observation_to_json(const ObservationFile& obs) {
  json j;
  json formula = json::object();
  for (const auto& [z, n] : obs.formula) formula[std::string(element(z).symbol)] = n;
  j["formula"] = formula;
  j["parent_constants_mhz"] = constants_json(obs.parent);
  json isos = json::array();
  for (const auto& iso : obs.isotopologues)
    isos.push_back({{"element", std::string(element(iso.substituted_element).symbol)},
                    {"mass_delta_amu", iso.mass_delta},
                    {"constants_mhz", constants_json(iso.constants)}});
  j["isotopologues"] = isos;
  if (!obs.precomputed.empty()) {
    json pre = json::array();
    for (const auto& p : obs.precomputed) {
      json abs = json::array();
      for (const auto& v : p.abs) abs.push_back(v ? json(*v) : json(nullptr));
      pre.push_back({{"element", std::string(element(p.element).symbol)}, {"abs_angstrom", abs}});
    }
    j["substitution_coordinates"] = pre;
  }
  return j;
}

ObservationFile observation_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::SchemaError, "observation must be a JSON object");
  ObservationFile obs;
  const auto formula = field<json>(j, "formula", "observation");
  if (!formula.is_object() || formula.empty()) throw Error(Errc::SchemaError, "formula must be a non-empty object");
  for (const auto& [sym, count] : formula.items()) {
    const auto z = try_atomic_number_of(sym);
    if (!z) throw Error(Errc::SchemaError, "formula: unknown element '" + sym + "'");
    if (!count.is_number_integer() || count.get<long>() < 1)
      throw Error(Errc::SchemaError, "formula: count for " + sym + " must be a positive integer");
    obs.formula[*z] = count.get<int>();
  }
  obs.parent = constants_from_json(field<json>(j, "parent_constants_mhz", "observation"), "parent_constants_mhz");
  const auto isos = j.value("isotopologues", json::array());
  if (!isos.is_array()) throw Error(Errc::SchemaError, "isotopologues must be an array");
  for (std::size_t k = 0; k < isos.size(); ++k) {
    const std::string where = "isotopologues[" + std::to_string(k) + "]";
    const int z = element_from_json(isos[k], where);
    const double delta = field<double>(isos[k], "mass_delta_amu", where);
    if (delta == 0.0) throw Error(Errc::SchemaError, where + ": mass_delta_amu must be non-zero");
    obs.isotopologues.push_back({z, delta, constants_from_json(field<json>(isos[k], "constants_mhz", where), where)});
  }
  if (j.contains("substitution_coordinates")) {
    const auto& pre = j["substitution_coordinates"];
    if (!pre.is_array()) throw Error(Errc::SchemaError, "substitution_coordinates must be an array");
    for (std::size_t k = 0; k < pre.size(); ++k) {
      const std::string where = "substitution_coordinates[" + std::to_string(k) + "]";
      PrecomputedCoordinate p{element_from_json(pre[k], where), {}};
      const auto abs = field<json>(pre[k], "abs_angstrom", where);
      if (!abs.is_array() || abs.size() != 3) throw Error(Errc::SchemaError, where + ": abs_angstrom needs 3 entries");
      for (std::size_t c = 0; c < 3; ++c) {
        if (abs[c].is_null()) continue;
        if (!abs[c].is_number() || abs[c].get<double>() < 0.0)
          throw Error(Errc::SchemaError, where + ": coordinates must be non-negative numbers or null");
        p.abs[c] = abs[c].get<double>();
      }
      obs.precomputed.push_back(p);
    }
  }
  return obs;
}

ObservationData resolve_observation(const ObservationFile& obs) {
  ObservationData data;
  data.formula = obs.formula;
  data.atoms = formula_atoms(obs.formula);
  double total_mass = 0.0;
  for (int z : data.atoms) {
    data.masses.push_back(element(z).mass);
    total_mass += element(z).mass;
  }
  data.moments = constants_to_planar_moments(obs.parent);
  data.table = SubstitutionTable::empty(static_cast<Eigen::Index>(data.atoms.size()));

  std::map<int, std::vector<int>> rows_of;
  for (std::size_t i = 0; i < data.atoms.size(); ++i) rows_of[data.atoms[i]].push_back(static_cast<int>(i));
  std::map<int, std::size_t> used;
  auto next_row = [&](int z) {
    auto& rows = rows_of[z];
    std::size_t& k = used[z];
    if (k >= rows.size())
      throw Error(Errc::SchemaError, "more substitution records for " + std::string(element(z).symbol) +
                                         " than the formula has atoms");
    return rows[k++];
  };
  auto store = [&](int row, const std::array<std::optional<double>, 3>& abs) {
    for (int c = 0; c < 3; ++c)
      if (abs[static_cast<std::size_t>(c)]) {
        data.table.values(row, c) = *abs[static_cast<std::size_t>(c)];
        data.table.mask(row, c) = 1.0;
      }
  };

  if (!obs.precomputed.empty()) {
    for (const auto& p : obs.precomputed) store(next_row(p.element), p.abs);
    return data;
  }
  for (const auto& iso : obs.isotopologues) {
    const int row = next_row(iso.substituted_element);
    const PlanarMoments iso_pm = constants_to_planar_moments(iso.constants);
    store(row, kraitchman_coordinates(data.moments, iso_pm, total_mass, iso.mass_delta));
  }
  return data;
}

json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::SchemaError, path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

ObservationData load_observation(const std::filesystem::path& path) {
  return resolve_observation(observation_from_json(read_json_file(path)));
}

// ---- base64 / tensors --------------------------------------------------------

namespace {
constexpr std::string_view kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto n = (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << 16) |
                   (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + 1])) << 8) |
                   static_cast<unsigned char>(bytes[i + 2]);
    for (int s = 18; s >= 0; s -= 6) out.push_back(kB64[(n >> s) & 63U]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t n = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << 16;
    if (rest == 2) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + 1])) << 8;
    out.push_back(kB64[(n >> 18) & 63U]);
    out.push_back(kB64[(n >> 12) & 63U]);
    out.push_back(rest == 2 ? kB64[(n >> 6) & 63U] : '=');
    out.push_back('=');
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(Errc::SchemaError, "base64 length is not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t n = 0;
    int pad = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char ch = text[i + k];
      std::uint32_t v = 0;
      if (ch == '=') {
        if (i + 4 != text.size() || k < 2) throw Error(Errc::SchemaError, "misplaced base64 padding");
        ++pad;
      } else {
        const auto p = kB64.find(ch);
        if (p == std::string_view::npos || pad > 0) throw Error(Errc::SchemaError, "invalid base64 character");
        v = static_cast<std::uint32_t>(p);
      }
      n = (n << 6) | v;
    }
    out.push_back(static_cast<char>((n >> 16) & 0xFF));
    if (pad < 2) out.push_back(static_cast<char>((n >> 8) & 0xFF));
    if (pad < 1) out.push_back(static_cast<char>(n & 0xFF));
  }
  return out;
}

namespace {

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int b = 0; b < 8; ++b) r |= ((v >> (8 * b)) & 0xFFU) << (8 * (7 - b));
  return r;
}

}  // namespace

json tensor_to_json(const ad::Matrix& m) {
  std::string bytes(static_cast<std::size_t>(m.size()) * 8, '\0');
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    const std::uint64_t le = to_little(std::bit_cast<std::uint64_t>(m.data()[k]));
    std::memcpy(bytes.data() + 8 * k, &le, 8);
  }
  return {{"shape", {m.rows(), m.cols()}}, {"dtype", "float64-le"}, {"data", base64_encode(bytes)}};
}

ad::Matrix tensor_from_json(const json& j) {
  const auto shape = field<std::vector<long>>(j, "shape", "tensor");
  if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) throw Error(Errc::SchemaError, "tensor shape must be [rows, cols]");
  const std::string bytes = base64_decode(field<std::string>(j, "data", "tensor"));
  if (bytes.size() != static_cast<std::size_t>(shape[0] * shape[1]) * 8)
    throw Error(Errc::SchemaError, "tensor data length does not match its shape");
  ad::Matrix m(shape[0], shape[1]);
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    std::uint64_t le = 0;
    std::memcpy(&le, bytes.data() + 8 * k, 8);
    m.data()[k] = std::bit_cast<double>(to_little(le));
  }
  return m;
}

json model_config_to_json(const ModelConfig& c) {
  return {{"hidden_dim", c.hidden_dim},     {"message_dim", c.message_dim},       {"cond_mlp_dim", c.cond_mlp_dim},
          {"time_embed_dim", c.time_embed_dim}, {"atom_embed_dim", c.atom_embed_dim}, {"n_blocks", c.n_blocks},
          {"n_heads", c.n_heads},           {"head_dim", c.head_dim},             {"t_max", c.t_max}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  if (!j.is_object()) throw Error(Errc::SchemaError, "model config must be an object");
  auto read = [&](const char* key, int& dst) {
    if (j.contains(key)) dst = field<int>(j, key, "model");
  };
  read("hidden_dim", c.hidden_dim);
  read("message_dim", c.message_dim);
  read("cond_mlp_dim", c.cond_mlp_dim);
  read("time_embed_dim", c.time_embed_dim);
  read("atom_embed_dim", c.atom_embed_dim);
  read("n_blocks", c.n_blocks);
  read("n_heads", c.n_heads);
  read("head_dim", c.head_dim);
  read("t_max", c.t_max);
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(Errc::SchemaError, std::string("model config: ") + e.what());
  }
  return c;
}

namespace {

json tensors_to_json(const std::map<std::string, ad::Matrix>& tensors) {
  json out = json::object();
  for (const auto& [name, t] : tensors) out[name] = tensor_to_json(t);
  return out;
}

std::map<std::string, ad::Matrix> tensors_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::SchemaError, "tensor map must be an object");
  std::map<std::string, ad::Matrix> out;
  for (const auto& [name, t] : j.items()) out[name] = tensor_from_json(t);
  return out;
}

}  // namespace

json checkpoint_to_json(const Checkpoint& ckpt) {
  json j;
  j["format_version"] = Checkpoint::kFormatVersion;
  j["model_config"] = model_config_to_json(ckpt.config);
  j["feature_scaling"] = {{"atomic_number", ckpt.scaling.atomic_number},
                          {"mass", ckpt.scaling.mass},
                          {"coordinate", ckpt.scaling.coordinate},
                          {"moment", ckpt.scaling.moment}};
  j["schedule"] = {{"kind", ckpt.schedule_kind}, {"t_max", ckpt.config.t_max}};
  j["params"] = tensors_to_json(ckpt.params.tensors);
  j["ema"] = tensors_to_json(ckpt.ema.tensors);
  j["metadata"] = {{"seed", ckpt.seed}, {"step", ckpt.step}};
  if (ckpt.optimizer) {
    ad::Matrix norms(1, static_cast<Eigen::Index>(ckpt.optimizer->grad_norms.size()));
    for (std::size_t k = 0; k < ckpt.optimizer->grad_norms.size(); ++k)
      norms(0, static_cast<Eigen::Index>(k)) = ckpt.optimizer->grad_norms[k];
    j["optimizer"] = {{"step", ckpt.optimizer->step},
                      {"m", tensors_to_json(ckpt.optimizer->m)},
                      {"v", tensors_to_json(ckpt.optimizer->v)},
                      {"grad_norms", tensor_to_json(norms)}};
  }
  if (!ckpt.rng_state.empty()) j["rng_state"] = ckpt.rng_state;
  if (!ckpt.train_config.is_null()) j["train_config"] = ckpt.train_config;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  const int version = field<int>(j, "format_version", "checkpoint");
  if (version != Checkpoint::kFormatVersion)
    throw Error(Errc::SchemaError, "unsupported checkpoint format_version " + std::to_string(version));
  Checkpoint c;
  c.config = model_config_from_json(field<json>(j, "model_config", "checkpoint"));
  const auto fs = field<json>(j, "feature_scaling", "checkpoint");
  c.scaling.atomic_number = field<double>(fs, "atomic_number", "feature_scaling");
  c.scaling.mass = field<double>(fs, "mass", "feature_scaling");
  c.scaling.coordinate = field<double>(fs, "coordinate", "feature_scaling");
  c.scaling.moment = field<double>(fs, "moment", "feature_scaling");
  const auto sched = field<json>(j, "schedule", "checkpoint");
  c.schedule_kind = field<std::string>(sched, "kind", "schedule");
  c.params.tensors = tensors_from_json(field<json>(j, "params", "checkpoint"));
  c.ema.tensors = tensors_from_json(field<json>(j, "ema", "checkpoint"));
  const auto meta = field<json>(j, "metadata", "checkpoint");
  c.seed = field<std::uint64_t>(meta, "seed", "metadata");
  c.step = field<long>(meta, "step", "metadata");
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    AdamState s;
    s.step = field<long>(o, "step", "optimizer");
    s.m = tensors_from_json(field<json>(o, "m", "optimizer"));
    s.v = tensors_from_json(field<json>(o, "v", "optimizer"));
    const ad::Matrix norms = tensor_from_json(field<json>(o, "grad_norms", "optimizer"));
    s.grad_norms.assign(norms.data(), norms.data() + norms.size());
    c.optimizer = std::move(s);
  }
  if (j.contains("rng_state")) c.rng_state = field<std::string>(j, "rng_state", "checkpoint");
  if (j.contains("train_config")) c.train_config = j["train_config"];
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_text_file(path, checkpoint_to_json(ckpt).dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_json_file(path)); }

json histogram_to_json(const DistanceHistogram& h) {
  return {{"bin_width_angstrom", h.bin_width}, {"smoothing", kHistogramSmoothing}, {"counts", h.counts}};
}

DistanceHistogram histogram_from_json(const json& j) {
  DistanceHistogram h;
  h.bin_width = field<double>(j, "bin_width_angstrom", "histogram");
  h.counts = field<std::vector<double>>(j, "counts", "histogram");
  for (double c : h.counts)
    if (!(c >= 0.0)) throw Error(Errc::SchemaError, "histogram counts must be non-negative");
  try {
    normalize_histogram(h);
  } catch (const Error& e) {
    throw Error(Errc::SchemaError, std::string("histogram: ") + e.what());
  }
  return h;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  write_text_file(path, text);
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<json> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_ws(line).empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error&) {
      throw ParseError(line_no, "invalid JSON line in " + path.string());
    }
  }
  return rows;
}

}  // namespace isostruct
