#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bcalign/corpus.hpp"
#include "bcalign/ratings.hpp"

namespace bcalign::embed {

enum class FeatureKind { CtxText, CtxAudio, BcAudio };
std::string_view kind_name(FeatureKind k);
FeatureKind parse_kind_name(std::string_view name);

/// id -> vector maps for the three feature kinds. Every vector of a kind has
/// the same dimension and only finite values.
class FeatureStore {
 public:
  using Map = std::map<std::string, std::vector<double>>;

  void insert(FeatureKind kind, const std::string& id, std::vector<double> values);

  const std::vector<double>* find(FeatureKind kind, const std::string& id) const;
  const std::vector<double>& at(FeatureKind kind, const std::string& id) const;
  bool contains(FeatureKind kind, const std::string& id) const { return find(kind, id) != nullptr; }

  std::optional<std::size_t> dim(FeatureKind kind) const;
  const Map& entries(FeatureKind kind) const { return maps_[index(kind)]; }
  std::size_t size() const;

  bool operator==(const FeatureStore&) const = default;

 private:
  static std::size_t index(FeatureKind k) { return static_cast<std::size_t>(k); }

  std::array<Map, 3> maps_;
  std::array<std::optional<std::size_t>, 3> dims_;
};

// {"id":..., "kind":"ctx_text|ctx_audio|bc_audio", "dim":n, "values":[...]}
FeatureStore read_vectors(std::istream& in);
FeatureStore read_vectors(const std::filesystem::path& path);
void write_vectors(const FeatureStore& store, std::ostream& out);
void write_vectors(const FeatureStore& store, const std::filesystem::path& path);

struct SynthConfig {
  std::size_t n_pairs = 2000;
  std::size_t latent_dim = 8;
  std::size_t text_dim = 32;
  std::size_t audio_dim = 16;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  std::size_t pairs_per_dialogue = 10;
  corpus::SplitRatios ratios{};
  std::size_t raters = 3;
  std::size_t n_triads = 300;
  std::size_t n_matching = 200;

  void validate() const;
};

struct SynthData {
  std::vector<corpus::BackchannelSample> manifest;
  FeatureStore store;
  std::vector<eval::RatingRecord> ratings;

  Eigen::MatrixXd latents;          // latent_dim x n_pairs, column i = pair i
  Eigen::MatrixXd text_map;         // text_dim x latent_dim, orthonormal columns
  Eigen::MatrixXd context_audio_map;
  Eigen::MatrixXd backchannel_map;
  Eigen::MatrixXd label_functionals;  // 3 x latent_dim (energy, polarity, surprisal)
};

/// Latent u ~ N(0, I) per pair, each feature kind a fixed orthonormal-column
/// image of u plus N(0, sigma^2) noise. Affective ratings are noisy integer
/// readings of 3 + c_d . u clipped to [1, 5]; lexemes and prosodic features
/// are also tied to u so the lexical and prosodic baselines carry signal.
SynthData generate_synthetic(const SynthConfig& cfg);

}  // namespace bcalign::embed
