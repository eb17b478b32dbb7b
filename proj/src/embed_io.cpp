#include "bcalign/embed_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "bcalign/error.hpp"
#include "bcalign/rng.hpp"
#include "json.hpp"

namespace bcalign::embed {

namespace {

using Json = nlohmann::ordered_json;

Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.normal();
  return m;
}

Eigen::MatrixXd orthonormal_columns(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(rng, rows, cols));
  return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
}

std::vector<double> noisy_image(Rng& rng, const Eigen::MatrixXd& map, const Eigen::VectorXd& u, double sigma) {
  const Eigen::VectorXd clean = map * u;
  std::vector<double> out(static_cast<std::size_t>(clean.size()));
  for (Eigen::Index i = 0; i < clean.size(); ++i) out[static_cast<std::size_t>(i)] = clean(i) + sigma * rng.normal();
  return out;
}

int clip_rating(double x) { return static_cast<int>(std::clamp(std::lround(x), 1L, 5L)); }

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = a.norm() * b.norm();
  return denom > 0.0 ? a.dot(b) / denom : 0.0;
}

}  // namespace

std::string_view kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::CtxText: return "ctx_text";
    case FeatureKind::CtxAudio: return "ctx_audio";
    case FeatureKind::BcAudio: return "bc_audio";
  }
  return "ctx_text";
}

FeatureKind parse_kind_name(std::string_view name) {
  if (name == "ctx_text") return FeatureKind::CtxText;
  if (name == "ctx_audio") return FeatureKind::CtxAudio;
  if (name == "bc_audio") return FeatureKind::BcAudio;
  throw Error(ErrorKind::BadSchema, "unknown feature kind '" + std::string(name) + "'");
}

void FeatureStore::insert(FeatureKind kind, const std::string& id, std::vector<double> values) {
  const auto k = index(kind);
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteValue, "non-finite value in " + std::string(kind_name(kind)) + " '" + id + "'");
  }
  if (dims_[k] && *dims_[k] != values.size()) {
    throw Error(ErrorKind::DimensionMismatch, std::string(kind_name(kind)) + " '" + id + "' has dim " +
                                                  std::to_string(values.size()) + ", store has " +
                                                  std::to_string(*dims_[k]));
  }
  if (maps_[k].contains(id)) {
    throw Error(ErrorKind::DuplicateId, "duplicate " + std::string(kind_name(kind)) + " id '" + id + "'");
  }
  dims_[k] = values.size();
  maps_[k].emplace(id, std::move(values));
}

const std::vector<double>* FeatureStore::find(FeatureKind kind, const std::string& id) const {
  const auto& m = maps_[index(kind)];
  const auto it = m.find(id);
  return it == m.end() ? nullptr : &it->second;
}

const std::vector<double>& FeatureStore::at(FeatureKind kind, const std::string& id) const {
  if (const auto* v = find(kind, id)) return *v;
  throw Error(ErrorKind::UnknownId, "no " + std::string(kind_name(kind)) + " vector for '" + id + "'");
}

std::optional<std::size_t> FeatureStore::dim(FeatureKind kind) const { return dims_[index(kind)]; }

std::size_t FeatureStore::size() const { return maps_[0].size() + maps_[1].size() + maps_[2].size(); }

FeatureStore read_vectors(std::istream& in) {
  FeatureStore store;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::out_of_range& e) {
      throw Error(ErrorKind::NonFiniteValue, where + e.what());  // number overflow
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::BadSchema, where + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("kind") || !j.contains("dim") || !j.contains("values") ||
        !j["id"].is_string() || !j["kind"].is_string() || !j["dim"].is_number_unsigned() || !j["values"].is_array()) {
      throw Error(ErrorKind::BadSchema, where + "expected {id, kind, dim, values}");
    }
    const auto kind = parse_kind_name(j["kind"].get<std::string>());
    const auto dim = j["dim"].get<std::size_t>();
    std::vector<double> values;
    values.reserve(j["values"].size());
    for (const auto& v : j["values"]) {
      if (!v.is_number()) throw Error(ErrorKind::BadSchema, where + "values must be numbers");
      values.push_back(v.get<double>());
    }
    if (values.size() != dim) {
      throw Error(ErrorKind::DimensionMismatch, where + "dim " + std::to_string(dim) + " but " +
                                                    std::to_string(values.size()) + " values");
    }
    try {
      store.insert(kind, j["id"].get<std::string>(), std::move(values));
    } catch (const Error& e) {
      throw Error(e.kind(), where + e.what());
    }
  }
  return store;
}

FeatureStore read_vectors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  return read_vectors(in);
}

void write_vectors(const FeatureStore& store, std::ostream& out) {
  for (auto kind : {FeatureKind::CtxText, FeatureKind::CtxAudio, FeatureKind::BcAudio}) {
    for (const auto& [id, values] : store.entries(kind)) {
      Json j;
      j["id"] = id;
      j["kind"] = kind_name(kind);
      j["dim"] = values.size();
      j["values"] = values;
      out << j.dump() << '\n';
    }
  }
}

void write_vectors(const FeatureStore& store, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  write_vectors(store, out);
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

void SynthConfig::validate() const {
  if (n_pairs == 0) throw Error(ErrorKind::InvalidConfig, "n_pairs must be > 0");
  if (latent_dim == 0 || latent_dim > std::min(text_dim, audio_dim)) {
    throw Error(ErrorKind::InvalidConfig, "latent_dim must be in [1, min(text_dim, audio_dim)]");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw Error(ErrorKind::InvalidConfig, "noise_sigma must be finite and >= 0");
  }
  if (pairs_per_dialogue == 0) throw Error(ErrorKind::InvalidConfig, "pairs_per_dialogue must be > 0");
  if (raters == 0) throw Error(ErrorKind::InvalidConfig, "raters must be > 0");
}

SynthData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const auto m = static_cast<Eigen::Index>(cfg.latent_dim);
  const auto n = static_cast<Eigen::Index>(cfg.n_pairs);
  Rng rng(cfg.seed);

  SynthData data;
  data.text_map = orthonormal_columns(rng, static_cast<Eigen::Index>(cfg.text_dim), m);
  data.context_audio_map = orthonormal_columns(rng, static_cast<Eigen::Index>(cfg.audio_dim), m);
  data.backchannel_map = orthonormal_columns(rng, static_cast<Eigen::Index>(cfg.audio_dim), m);
  data.label_functionals = gaussian(rng, 3, m);
  for (Eigen::Index d = 0; d < 3; ++d) data.label_functionals.row(d) *= 0.9 / data.label_functionals.row(d).norm();
  const Eigen::MatrixXd lexeme_map = gaussian(rng, static_cast<Eigen::Index>(corpus::kDefaultLexicon.size()), m);
  const Eigen::MatrixXd prosody_map = gaussian(rng, 2, m).rowwise().normalized();
  data.latents = gaussian(rng, m, n);

  const double sigma = cfg.noise_sigma;
  const auto lexicon = corpus::default_lexicon();
  data.manifest.reserve(cfg.n_pairs);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd u = data.latents.col(i);
    corpus::BackchannelSample s;
    const auto idx = static_cast<std::size_t>(i);
    s.dialogue_id = "syn" + std::to_string(idx / cfg.pairs_per_dialogue);
    s.turn_index = 2 * (idx % cfg.pairs_per_dialogue) + 1;
    s.id = s.dialogue_id + "_" + std::to_string(s.turn_index);
    s.speaker = corpus::Speaker::B;
    Eigen::Index lex = 0;
    (lexeme_map * u).maxCoeff(&lex);
    s.lexeme = lexicon[static_cast<std::size_t>(lex)];
    s.context_text = "<A> context " + s.id + " / <B>";
    s.context_turns = 1;
    const Eigen::Vector2d pros = prosody_map * u;
    s.prosody = corpus::ProsodicFeatures{
        std::max(0.0, 4.0 + 2.0 * pros(0) + rng.normal()),
        std::max<std::int64_t>(1, std::llround(30.0 + 8.0 * pros(1) + 5.0 * rng.normal()))};

    data.store.insert(FeatureKind::CtxText, s.id, noisy_image(rng, data.text_map, u, sigma));
    data.store.insert(FeatureKind::CtxAudio, s.id, noisy_image(rng, data.context_audio_map, u, sigma));
    data.store.insert(FeatureKind::BcAudio, s.id, noisy_image(rng, data.backchannel_map, u, sigma));

    const Eigen::Vector3d labels = (data.label_functionals * u).array() + 3.0;
    for (std::size_t r = 0; r < cfg.raters; ++r) {
      eval::RatingRecord rec;
      rec.bc_id = s.id;
      rec.rater_id = "r" + std::to_string(r);
      rec.energy = clip_rating(labels(0) + 0.5 * rng.normal());
      rec.polarity = clip_rating(labels(1) + 0.5 * rng.normal());
      rec.surprisal = clip_rating(labels(2) + 0.5 * rng.normal());
      data.ratings.push_back(std::move(rec));
    }
    data.manifest.push_back(std::move(s));
  }
  corpus::split_dataset(data.manifest, cfg.ratios, cfg.seed);

  // Perception-style stimuli drawn from the held-out test split.
  std::vector<Eigen::Index> test;
  for (Eigen::Index i = 0; i < n; ++i)
    if (data.manifest[static_cast<std::size_t>(i)].split == corpus::Split::Test) test.push_back(i);
  if (test.size() < 3) return data;

  auto pick_three = [&](bool distinct_dialogues) {
    std::array<Eigen::Index, 3> t{};
    for (int attempt = 0; attempt < 1000; ++attempt) {
      for (auto& x : t) x = test[rng.below(test.size())];
      auto d = [&](Eigen::Index i) -> const std::string& {
        return data.manifest[static_cast<std::size_t>(i)].dialogue_id;
      };
      const bool distinct = t[0] != t[1] && t[0] != t[2] && t[1] != t[2];
      const bool dialogues_ok = !distinct_dialogues || (d(t[0]) != d(t[1]) && d(t[0]) != d(t[2]) && d(t[1]) != d(t[2]));
      if (distinct && dialogues_ok) break;
    }
    return t;
  };
  static constexpr std::array<eval::TriadPair, 3> kPairs = {{{1, 2}, {1, 3}, {2, 3}}};

  for (std::size_t k = 0; k < cfg.n_triads; ++k) {
    const auto t = pick_three(false);
    std::array<std::string, 3> ids;
    for (int j = 0; j < 3; ++j) ids[j] = data.manifest[static_cast<std::size_t>(t[j])].id;
    eval::TriadPair closest = kPairs[0];
    double best = -2.0;
    for (const auto& p : kPairs) {
      const double c = cosine(data.latents.col(t[p.first - 1]), data.latents.col(t[p.second - 1]));
      if (c > best) {
        best = c;
        closest = p;
      }
    }
    for (std::size_t r = 0; r < 5; ++r) {
      eval::RatingRecord rec;
      rec.rater_id = "r" + std::to_string(r);
      const bool agrees = rng.uniform() < 0.85;
      rec.triad = eval::TriadResponse{ids, agrees ? closest : kPairs[rng.below(3)]};
      data.ratings.push_back(std::move(rec));
    }
  }

  for (std::size_t k = 0; k < cfg.n_matching; ++k) {
    const auto t = pick_three(true);
    const std::string truth = data.manifest[static_cast<std::size_t>(t[0])].id;
    std::array<Eigen::Index, 3> order = t;
    rng.shuffle(std::span<Eigen::Index>(order));
    for (std::size_t r = 0; r < cfg.raters; ++r) {
      eval::RatingRecord rec;
      rec.bc_id = truth;
      rec.rater_id = "r" + std::to_string(r);
      for (auto c : order) {
        const double fit = cosine(data.latents.col(t[0]), data.latents.col(c));
        rec.match_scores.emplace_back(data.manifest[static_cast<std::size_t>(c)].id,
                                      clip_rating(3.0 + 1.5 * fit + rng.normal()));
      }
      data.ratings.push_back(std::move(rec));
    }
  }
  return data;
}

}  // namespace bcalign::embed
