#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bcalign/corpus.hpp"
#include "bcalign/embed_io.hpp"

namespace bcalign::contrastive {

enum class Modality { AudioText, Text, Audio };
std::string_view modality_name(Modality m);  // "audio_text" | "text" | "audio"
Modality parse_modality(std::string_view name);

inline constexpr double kTemperature = 0.07;
inline constexpr double kSelectionTopKPercent = 10.0;

struct ModelConfig {
  Modality modality = Modality::AudioText;
  int n_layers = 3;
  int embed_dim = 64;
  int batch_size = 4096;
  double temperature = kTemperature;
  int max_epochs = 20;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  bool unsafe_grid = false;  // lifts the hyperparameter-grid restrictions

  /// Enforces n_layers in 1..4, embed_dim in {64,128,256}, batch_size in
  /// {1024,...,8192}, temperature 0.07 and at most 20 epochs, unless
  /// `unsafe_grid` is set.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Best grid points for five-turn contexts, per modality.
ModelConfig default_config(Modality m);

struct FeatureDims {
  std::size_t text = 0;   // ctx_text
  std::size_t audio = 0;  // ctx_audio and bc_audio

  bool operator==(const FeatureDims&) const = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;

  bool operator==(const DenseLayer& o) const { return weight == o.weight && bias == o.bias; }
};

/// Context MLP (ReLU between layers, linear last layer) and the linear
/// backchannel head. Gradients use the same shape.
struct Parameters {
  std::vector<DenseLayer> context;
  DenseLayer backchannel;

  bool operator==(const Parameters&) const = default;
};

/// Calls fn(double* values, double* other, size) for every tensor pair.
template <typename Fn>
void for_each_tensor(Parameters& a, Parameters& b, Fn&& fn) {
  for (std::size_t l = 0; l < a.context.size(); ++l) {
    fn(a.context[l].weight.data(), b.context[l].weight.data(), static_cast<std::size_t>(a.context[l].weight.size()));
    fn(a.context[l].bias.data(), b.context[l].bias.data(), static_cast<std::size_t>(a.context[l].bias.size()));
  }
  fn(a.backchannel.weight.data(), b.backchannel.weight.data(), static_cast<std::size_t>(a.backchannel.weight.size()));
  fn(a.backchannel.bias.data(), b.backchannel.bias.data(), static_cast<std::size_t>(a.backchannel.bias.size()));
}

Parameters zeros_like(const Parameters& p);

struct ProjectionModel {
  ModelConfig config;
  FeatureDims dims;
  Parameters params;

  std::size_t context_input_dim() const;
  bool operator==(const ProjectionModel&) const = default;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
ProjectionModel init_model(const ModelConfig& cfg, FeatureDims dims, std::uint64_t seed);

/// Paired features, one column per pair. Unused modalities may be empty.
struct Batch {
  Eigen::MatrixXd ctx_text;
  Eigen::MatrixXd ctx_audio;
  Eigen::MatrixXd bc_audio;

  Eigen::Index size() const { return bc_audio.cols(); }
  Batch select(std::span<const std::size_t> columns) const;
};

/// Unit-norm context embedding. Pass an empty span for an absent modality.
Eigen::VectorXd encode_context(const ProjectionModel& model, std::span<const double> text,
                               std::span<const double> audio);
Eigen::VectorXd encode_backchannel(const ProjectionModel& model, std::span<const double> bc_audio);

/// Column-wise batch encoders (embed_dim x N).
Eigen::MatrixXd encode_contexts(const ProjectionModel& model, const Batch& batch);
Eigen::MatrixXd encode_backchannels(const ProjectionModel& model, const Eigen::MatrixXd& bc_audio);

/// S[i][j] = <ctx_i, bc_j> / tau for column-wise unit embeddings.
Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& ctx_embs, const Eigen::MatrixXd& bc_embs,
                                  double temperature = kTemperature);

struct InfoNceTerms {
  double context = 0.0;      // mean row-wise cross-entropy, targets on the diagonal
  double backchannel = 0.0;  // mean column-wise cross-entropy
  double total() const { return 0.5 * (context + backchannel); }
};

InfoNceTerms info_nce_terms(const Eigen::MatrixXd& S);
inline double info_nce_loss(const Eigen::MatrixXd& S) { return info_nce_terms(S).total(); }

/// dL/dS for the symmetric loss above.
Eigen::MatrixXd info_nce_gradient(const Eigen::MatrixXd& S);

double batch_loss(const ProjectionModel& model, const Batch& batch);

struct LossAndGradients {
  double loss = 0.0;
  Parameters gradients;
};

/// Exact analytic gradients through both heads, the L2 normalization and the
/// temperature-scaled similarity.
LossAndGradients loss_gradients(const ProjectionModel& model, const Batch& batch);

/// All manifest samples of one split with the features the modality needs.
struct PairedData {
  std::vector<std::string> ids;
  Batch features;
};

PairedData gather(const std::vector<corpus::BackchannelSample>& manifest, const embed::FeatureStore& store,
                  Modality modality, std::optional<corpus::Split> split);

FeatureDims dims_of(const embed::FeatureStore& store);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_topk = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  ProjectionModel model;  // snapshot with the best validation score
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  std::vector<std::string> warnings;
};

/// Shuffled mini-batch Adam (0.9 / 0.999 / 1e-8) over in-batch negatives;
/// validation top-10% accuracy after every epoch selects the snapshot.
TrainResult train(const ProjectionModel& initial, const PairedData& train_set, const PairedData& val_set);

TrainResult train(const ModelConfig& cfg, const std::vector<corpus::BackchannelSample>& manifest,
                  const embed::FeatureStore& store);

inline constexpr std::string_view kModelFormat = "bc-align/1";

std::string model_to_json(const ProjectionModel& model);
ProjectionModel model_from_json(std::string_view text);
void save_model(const ProjectionModel& model, const std::filesystem::path& path);
ProjectionModel load_model(const std::filesystem::path& path);

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace bcalign::contrastive
