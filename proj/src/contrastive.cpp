#include "bcalign/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "bcalign/error.hpp"
#include "bcalign/eval.hpp"
#include "bcalign/rng.hpp"
#include "json.hpp"

namespace bcalign::contrastive {

namespace {

using Json = nlohmann::ordered_json;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Intermediate values of one forward pass, kept for backpropagation.
struct Tape {
  std::vector<MatrixXd> inputs;   // input to each context layer
  std::vector<MatrixXd> pre_act;  // affine output of each context layer
  VectorXd ctx_norms;
  MatrixXd ctx_embs;
  VectorXd bc_norms;
  MatrixXd bc_embs;
};

void check_rows(const MatrixXd& m, std::size_t expected, std::string_view what) {
  if (static_cast<std::size_t>(m.rows()) != expected) {
    throw Error(ErrorKind::DimensionMismatch, std::string(what) + " has dim " + std::to_string(m.rows()) +
                                                  ", model expects " + std::to_string(expected));
  }
}

MatrixXd context_input(const ProjectionModel& model, const Batch& batch) {
  const auto& d = model.dims;
  const bool text = model.config.modality != Modality::Audio;
  const bool audio = model.config.modality != Modality::Text;
  const Index n = batch.size();
  if (text) {
    if (batch.ctx_text.size() == 0 && n > 0) throw Error(ErrorKind::MissingModality, "context text features required");
    check_rows(batch.ctx_text, d.text, "ctx_text");
    if (batch.ctx_text.cols() != n) throw Error(ErrorKind::CountMismatch, "ctx_text count differs from bc_audio");
  }
  if (audio) {
    if (batch.ctx_audio.size() == 0 && n > 0) throw Error(ErrorKind::MissingModality, "context audio features required");
    check_rows(batch.ctx_audio, d.audio, "ctx_audio");
    if (batch.ctx_audio.cols() != n) throw Error(ErrorKind::CountMismatch, "ctx_audio count differs from bc_audio");
  }
  if (text && audio) {
    MatrixXd x(static_cast<Index>(d.text + d.audio), n);
    x.topRows(static_cast<Index>(d.text)) = batch.ctx_text;
    x.bottomRows(static_cast<Index>(d.audio)) = batch.ctx_audio;
    return x;
  }
  return text ? batch.ctx_text : batch.ctx_audio;
}

VectorXd column_norms(const MatrixXd& y) {
  VectorXd norms = y.colwise().norm().transpose();
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0) || !std::isfinite(norms(i))) {
      throw Error(ErrorKind::NonFiniteValue, "projection of column " + std::to_string(i) + " has zero or non-finite norm");
    }
  }
  return norms;
}

MatrixXd normalize_columns(const MatrixXd& y, const VectorXd& norms) {
  return y * norms.cwiseInverse().asDiagonal();
}

// Backward through z = y / ||y|| column-wise.
MatrixXd normalize_backward(const MatrixXd& z, const VectorXd& norms, const MatrixXd& dz) {
  const Eigen::RowVectorXd proj = (z.array() * dz.array()).colwise().sum();
  MatrixXd dy = dz - z * proj.asDiagonal();
  return dy * norms.cwiseInverse().asDiagonal();
}

Tape forward(const ProjectionModel& model, const Batch& batch) {
  Tape tape;
  MatrixXd a = context_input(model, batch);
  const auto& layers = model.params.context;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixXd h = layers[l].weight * a;
    h.colwise() += layers[l].bias;
    tape.inputs.push_back(std::move(a));
    a = l + 1 < layers.size() ? MatrixXd(h.cwiseMax(0.0)) : h;
    tape.pre_act.push_back(std::move(h));
  }
  tape.ctx_norms = column_norms(a);
  tape.ctx_embs = normalize_columns(a, tape.ctx_norms);

  check_rows(batch.bc_audio, model.dims.audio, "bc_audio");
  MatrixXd ybc = model.params.backchannel.weight * batch.bc_audio;
  ybc.colwise() += model.params.backchannel.bias;
  tape.bc_norms = column_norms(ybc);
  tape.bc_embs = normalize_columns(ybc, tape.bc_norms);
  return tape;
}

// log-sum-exp of each row of m.
VectorXd row_logsumexp(const MatrixXd& m) {
  VectorXd out(m.rows());
  for (Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    out(i) = mx + std::log((m.row(i).array() - mx).exp().sum());
  }
  return out;
}

MatrixXd row_softmax(const MatrixXd& m) {
  MatrixXd p(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    p.row(i) = (m.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

bool in_grid(int v, std::initializer_list<int> allowed) {
  return std::find(allowed.begin(), allowed.end(), v) != allowed.end();
}

DenseLayer init_layer(Rng& rng, std::size_t in, std::size_t out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  DenseLayer layer{MatrixXd(static_cast<Index>(out), static_cast<Index>(in)), VectorXd(static_cast<Index>(out))};
  for (Index c = 0; c < layer.weight.cols(); ++c)
    for (Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = rng.uniform(-bound, bound);
  for (Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = rng.uniform(-bound, bound);
  return layer;
}

struct Adam {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(const Parameters& like) : m(zeros_like(like)), v(zeros_like(like)) {}

  void step(Parameters& params, Parameters& grads, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    std::vector<double*> ms, vs;
    for_each_tensor(m, v, [&](double* a, double* b, std::size_t) {
      ms.push_back(a);
      vs.push_back(b);
    });
    std::size_t k = 0;
    for_each_tensor(params, grads, [&](double* p, double* g, std::size_t n) {
      double* mk = ms[k];
      double* vk = vs[k];
      for (std::size_t i = 0; i < n; ++i) {
        mk[i] = kBeta1 * mk[i] + (1.0 - kBeta1) * g[i];
        vk[i] = kBeta2 * vk[i] + (1.0 - kBeta2) * g[i] * g[i];
        p[i] -= lr * (mk[i] / c1) / (std::sqrt(vk[i] / c2) + kEps);
      }
      ++k;
    });
  }

  Parameters m;
  Parameters v;
  int t = 0;
};

Json layer_to_json(const DenseLayer& layer) {
  Json w = Json::array();
  for (Index r = 0; r < layer.weight.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(layer.weight.cols()));
    for (Index c = 0; c < layer.weight.cols(); ++c) row[static_cast<std::size_t>(c)] = layer.weight(r, c);
    w.push_back(std::move(row));
  }
  return Json{{"weight", std::move(w)}, {"bias", std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size())}};
}

DenseLayer layer_from_json(const Json& j, std::size_t in, std::size_t out) {
  const auto rows = j.at("weight").get<std::vector<std::vector<double>>>();
  const auto bias = j.at("bias").get<std::vector<double>>();
  if (rows.size() != out || bias.size() != out) throw Error(ErrorKind::CorruptFile, "layer output size mismatch");
  DenseLayer layer{MatrixXd(static_cast<Index>(out), static_cast<Index>(in)), VectorXd(static_cast<Index>(out))};
  for (std::size_t r = 0; r < out; ++r) {
    if (rows[r].size() != in) throw Error(ErrorKind::CorruptFile, "layer input size mismatch");
    for (std::size_t c = 0; c < in; ++c) layer.weight(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    layer.bias(static_cast<Index>(r)) = bias[r];
  }
  if (!layer.weight.allFinite() || !layer.bias.allFinite()) throw Error(ErrorKind::CorruptFile, "non-finite parameter");
  return layer;
}

Json config_to_json(const ModelConfig& c) {
  return Json{{"modality", modality_name(c.modality)}, {"n_layers", c.n_layers},
              {"embed_dim", c.embed_dim},              {"batch_size", c.batch_size},
              {"temperature", c.temperature},          {"max_epochs", c.max_epochs},
              {"seed", c.seed},                        {"learning_rate", c.learning_rate},
              {"unsafe_grid", c.unsafe_grid},          {"activation", "relu"},
              {"optimizer", "adam"}};
}

ModelConfig config_from_json(const Json& j) {
  ModelConfig c;
  c.modality = parse_modality(j.at("modality").get<std::string>());
  c.n_layers = j.at("n_layers").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.temperature = j.at("temperature").get<double>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.unsafe_grid = j.at("unsafe_grid").get<bool>();
  return c;
}

double validation_score(const ProjectionModel& model, const PairedData& val) {
  const MatrixXd ctx = encode_contexts(model, val.features);
  const MatrixXd bc = encode_backchannels(model, val.features.bc_audio);
  return eval::topk_percent_accuracy(ctx, bc, kSelectionTopKPercent);
}

}  // namespace

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::AudioText: return "audio_text";
    case Modality::Text: return "text";
    case Modality::Audio: return "audio";
  }
  return "audio_text";
}

Modality parse_modality(std::string_view name) {
  if (name == "audio_text") return Modality::AudioText;
  if (name == "text") return Modality::Text;
  if (name == "audio") return Modality::Audio;
  throw Error(ErrorKind::InvalidConfig, "unknown modality '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (n_layers < 1 || embed_dim < 1 || batch_size < 1 || max_epochs < 1) {
    throw Error(ErrorKind::InvalidConfig, "n_layers, embed_dim, batch_size and max_epochs must be positive");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::InvalidConfig, "learning_rate must be positive");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorKind::InvalidConfig, "temperature must be positive");
  }
  if (unsafe_grid) return;
  if (n_layers > 4) throw Error(ErrorKind::InvalidConfig, "n_layers must be in 1..4 (use --unsafe-grid)");
  if (!in_grid(embed_dim, {64, 128, 256})) {
    throw Error(ErrorKind::InvalidConfig, "embed_dim must be 64, 128 or 256 (use --unsafe-grid)");
  }
  if (!in_grid(batch_size, {1024, 2048, 4096, 8192})) {
    throw Error(ErrorKind::InvalidConfig, "batch_size must be 1024, 2048, 4096 or 8192 (use --unsafe-grid)");
  }
  if (temperature != kTemperature) throw Error(ErrorKind::InvalidConfig, "temperature is fixed at 0.07");
  if (max_epochs > 20) throw Error(ErrorKind::InvalidConfig, "max_epochs must be <= 20 (use --unsafe-grid)");
}

ModelConfig default_config(Modality m) {
  ModelConfig c;
  c.modality = m;
  switch (m) {
    case Modality::AudioText: c.n_layers = 3; c.embed_dim = 64; c.batch_size = 4096; break;
    case Modality::Text: c.n_layers = 1; c.embed_dim = 64; c.batch_size = 8192; break;
    case Modality::Audio: c.n_layers = 2; c.embed_dim = 64; c.batch_size = 2048; break;
  }
  return c;
}

Parameters zeros_like(const Parameters& p) {
  Parameters z;
  for (const auto& l : p.context) z.context.push_back({MatrixXd::Zero(l.weight.rows(), l.weight.cols()), VectorXd::Zero(l.bias.size())});
  z.backchannel = {MatrixXd::Zero(p.backchannel.weight.rows(), p.backchannel.weight.cols()),
                   VectorXd::Zero(p.backchannel.bias.size())};
  return z;
}

std::size_t ProjectionModel::context_input_dim() const {
  switch (config.modality) {
    case Modality::AudioText: return dims.text + dims.audio;
    case Modality::Text: return dims.text;
    case Modality::Audio: return dims.audio;
  }
  return 0;
}

ProjectionModel init_model(const ModelConfig& cfg, FeatureDims dims, std::uint64_t seed) {
  cfg.validate();
  ProjectionModel model;
  model.config = cfg;
  model.dims = dims;
  if (model.context_input_dim() == 0 || dims.audio == 0) {
    throw Error(ErrorKind::InvalidConfig, "feature dimensions required by the modality must be positive");
  }
  Rng rng(seed);
  const auto embed = static_cast<std::size_t>(cfg.embed_dim);
  std::size_t in = model.context_input_dim();
  for (int l = 0; l < cfg.n_layers; ++l) {
    model.params.context.push_back(init_layer(rng, in, embed));
    in = embed;
  }
  model.params.backchannel = init_layer(rng, dims.audio, embed);
  return model;
}

Batch Batch::select(std::span<const std::size_t> columns) const {
  const auto pick = [&](const MatrixXd& m) {
    if (m.size() == 0) return MatrixXd();
    MatrixXd out(m.rows(), static_cast<Index>(columns.size()));
    for (std::size_t i = 0; i < columns.size(); ++i) out.col(static_cast<Index>(i)) = m.col(static_cast<Index>(columns[i]));
    return out;
  };
  return {pick(ctx_text), pick(ctx_audio), pick(bc_audio)};
}

Eigen::VectorXd encode_context(const ProjectionModel& model, std::span<const double> text,
                               std::span<const double> audio) {
  const auto as_col = [](std::span<const double> v) {
    return MatrixXd(Eigen::Map<const MatrixXd>(v.data(), static_cast<Index>(v.size()), 1));
  };
  Batch b;
  b.bc_audio = MatrixXd::Zero(static_cast<Index>(model.dims.audio), 1);
  if (model.config.modality != Modality::Audio) {
    if (text.empty()) throw Error(ErrorKind::MissingModality, "context text features required");
    b.ctx_text = as_col(text);
  }
  if (model.config.modality != Modality::Text) {
    if (audio.empty()) throw Error(ErrorKind::MissingModality, "context audio features required");
    b.ctx_audio = as_col(audio);
  }
  return encode_contexts(model, b).col(0);
}

Eigen::VectorXd encode_backchannel(const ProjectionModel& model, std::span<const double> bc_audio) {
  if (bc_audio.empty()) throw Error(ErrorKind::MissingModality, "backchannel audio features required");
  const Eigen::Map<const MatrixXd> x(bc_audio.data(), static_cast<Index>(bc_audio.size()), 1);
  return encode_backchannels(model, x).col(0);
}

Eigen::MatrixXd encode_contexts(const ProjectionModel& model, const Batch& batch) {
  MatrixXd a = context_input(model, batch);
  const auto& layers = model.params.context;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixXd h = layers[l].weight * a;
    h.colwise() += layers[l].bias;
    a = l + 1 < layers.size() ? MatrixXd(h.cwiseMax(0.0)) : h;
  }
  return normalize_columns(a, column_norms(a));
}

Eigen::MatrixXd encode_backchannels(const ProjectionModel& model, const Eigen::MatrixXd& bc_audio) {
  check_rows(bc_audio, model.dims.audio, "bc_audio");
  MatrixXd y = model.params.backchannel.weight * bc_audio;
  y.colwise() += model.params.backchannel.bias;
  return normalize_columns(y, column_norms(y));
}

Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& ctx_embs, const Eigen::MatrixXd& bc_embs, double temperature) {
  if (ctx_embs.cols() != bc_embs.cols()) {
    throw Error(ErrorKind::CountMismatch, std::to_string(ctx_embs.cols()) + " contexts vs " +
                                              std::to_string(bc_embs.cols()) + " backchannels");
  }
  if (ctx_embs.rows() != bc_embs.rows()) throw Error(ErrorKind::DimensionMismatch, "embedding dimensions differ");
  return (ctx_embs.transpose() * bc_embs) / temperature;
}

InfoNceTerms info_nce_terms(const Eigen::MatrixXd& S) {
  if (S.rows() != S.cols()) throw Error(ErrorKind::CountMismatch, "similarity matrix must be square");
  const Index n = S.rows();
  if (n == 0) return {};
  const VectorXd row_lse = row_logsumexp(S);
  const VectorXd col_lse = row_logsumexp(S.transpose());
  InfoNceTerms t;
  for (Index i = 0; i < n; ++i) {
    t.context += row_lse(i) - S(i, i);
    t.backchannel += col_lse(i) - S(i, i);
  }
  t.context /= static_cast<double>(n);
  t.backchannel /= static_cast<double>(n);
  return t;
}

Eigen::MatrixXd info_nce_gradient(const Eigen::MatrixXd& S) {
  const Index n = S.rows();
  const MatrixXd eye = MatrixXd::Identity(n, n);
  const MatrixXd p_rows = row_softmax(S);
  const MatrixXd p_cols = row_softmax(S.transpose()).transpose();
  return ((p_rows - eye) + (p_cols - eye)) / (2.0 * static_cast<double>(n));
}

double batch_loss(const ProjectionModel& model, const Batch& batch) {
  const MatrixXd ctx = encode_contexts(model, batch);
  const MatrixXd bc = encode_backchannels(model, batch.bc_audio);
  return info_nce_loss(similarity_matrix(ctx, bc, model.config.temperature));
}

LossAndGradients loss_gradients(const ProjectionModel& model, const Batch& batch) {
  const Tape tape = forward(model, batch);
  const double tau = model.config.temperature;
  const MatrixXd S = similarity_matrix(tape.ctx_embs, tape.bc_embs, tau);

  LossAndGradients out;
  out.loss = info_nce_loss(S);
  out.gradients = zeros_like(model.params);

  const MatrixXd dS = info_nce_gradient(S);
  const MatrixXd d_ctx = tape.bc_embs * dS.transpose() / tau;
  const MatrixXd d_bc = tape.ctx_embs * dS / tau;

  // Backchannel head.
  const MatrixXd dy_bc = normalize_backward(tape.bc_embs, tape.bc_norms, d_bc);
  out.gradients.backchannel.weight = dy_bc * batch.bc_audio.transpose();
  out.gradients.backchannel.bias = dy_bc.rowwise().sum();

  // Context MLP, last layer first.
  MatrixXd dh = normalize_backward(tape.ctx_embs, tape.ctx_norms, d_ctx);
  const auto& layers = model.params.context;
  for (std::size_t l = layers.size(); l-- > 0;) {
    out.gradients.context[l].weight = dh * tape.inputs[l].transpose();
    out.gradients.context[l].bias = dh.rowwise().sum();
    if (l == 0) break;
    const MatrixXd da = layers[l].weight.transpose() * dh;
    dh = da.cwiseProduct((tape.pre_act[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return out;
}

FeatureDims dims_of(const embed::FeatureStore& store) {
  using embed::FeatureKind;
  FeatureDims d;
  d.text = store.dim(FeatureKind::CtxText).value_or(0);
  d.audio = store.dim(FeatureKind::BcAudio).value_or(store.dim(FeatureKind::CtxAudio).value_or(0));
  if (auto ca = store.dim(FeatureKind::CtxAudio); ca && store.dim(FeatureKind::BcAudio) && *ca != d.audio) {
    throw Error(ErrorKind::DimensionMismatch, "ctx_audio and bc_audio dimensions differ");
  }
  return d;
}

PairedData gather(const std::vector<corpus::BackchannelSample>& manifest, const embed::FeatureStore& store,
                  Modality modality, std::optional<corpus::Split> split) {
  using embed::FeatureKind;
  const FeatureDims d = dims_of(store);
  const bool text = modality != Modality::Audio;
  const bool audio = modality != Modality::Text;
  std::vector<const corpus::BackchannelSample*> chosen;
  for (const auto& s : manifest)
    if (!split || s.split == split) chosen.push_back(&s);

  PairedData out;
  const auto n = static_cast<Index>(chosen.size());
  out.features.bc_audio.resize(static_cast<Index>(d.audio), n);
  if (text) out.features.ctx_text.resize(static_cast<Index>(d.text), n);
  if (audio) out.features.ctx_audio.resize(static_cast<Index>(d.audio), n);
  for (Index i = 0; i < n; ++i) {
    const auto& id = chosen[static_cast<std::size_t>(i)]->id;
    out.ids.push_back(id);
    const auto copy = [&](MatrixXd& dst, FeatureKind kind) {
      const auto& v = store.at(kind, id);
      dst.col(i) = Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
    };
    copy(out.features.bc_audio, FeatureKind::BcAudio);
    if (text) copy(out.features.ctx_text, FeatureKind::CtxText);
    if (audio) copy(out.features.ctx_audio, FeatureKind::CtxAudio);
  }
  return out;
}

TrainResult train(const ProjectionModel& initial, const PairedData& train_set, const PairedData& val_set) {
  const ModelConfig& cfg = initial.config;
  cfg.validate();
  const auto n = static_cast<std::size_t>(train_set.features.size());
  if (n == 0) throw Error(ErrorKind::EmptySplit, "training split is empty");
  if (val_set.features.size() == 0) throw Error(ErrorKind::EmptySplit, "validation split is empty");

  TrainResult result;
  std::size_t batch_size = static_cast<std::size_t>(cfg.batch_size);
  if (batch_size > n) {
    result.warnings.push_back("batch_size " + std::to_string(batch_size) + " exceeds training set (" +
                              std::to_string(n) + "); using one full batch");
    batch_size = n;
  }

  ProjectionModel model = initial;
  Adam adam(model.params);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n);
  double best = -1.0;
  result.model = model;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t len = std::min(batch_size, n - start);
      if (len < 2) continue;  // a single pair has no negatives
      const std::span<const std::size_t> cols(order.data() + start, len);
      const Batch batch = train_set.features.select(cols);
      LossAndGradients lg = loss_gradients(model, batch);
      if (!std::isfinite(lg.loss)) {
        throw Error(ErrorKind::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", batch " + std::to_string(n_batches) +
                                                  " (" + std::to_string(len) + " pairs): loss is not finite");
      }
      adam.step(model.params, lg.gradients, cfg.learning_rate);
      loss_sum += lg.loss;
      ++n_batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0;
    rec.val_topk = validation_score(model, val_set);
    result.history.push_back(rec);
    if (rec.val_topk > best) {
      best = rec.val_topk;
      result.best_epoch = epoch;
      result.model = model;
    }
  }
  return result;
}

TrainResult train(const ModelConfig& cfg, const std::vector<corpus::BackchannelSample>& manifest,
                  const embed::FeatureStore& store) {
  const ProjectionModel init = init_model(cfg, dims_of(store), cfg.seed);
  const PairedData tr = gather(manifest, store, cfg.modality, corpus::Split::Train);
  const PairedData va = gather(manifest, store, cfg.modality, corpus::Split::Val);
  return train(init, tr, va);
}

std::string model_to_json(const ProjectionModel& model) {
  Json j;
  j["format"] = kModelFormat;
  j["config"] = config_to_json(model.config);
  j["dims"] = {{"ctx_text", model.dims.text}, {"audio", model.dims.audio}};
  Json ctx = Json::array();
  for (const auto& l : model.params.context) ctx.push_back(layer_to_json(l));
  j["parameters"] = {{"context", std::move(ctx)}, {"backchannel", layer_to_json(model.params.backchannel)}};
  return j.dump();
}

ProjectionModel model_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptFile, std::string("model file is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format")) throw Error(ErrorKind::CorruptFile, "model file has no format tag");
  if (!j["format"].is_string() || j["format"].get<std::string>() != kModelFormat) {
    throw Error(ErrorKind::VersionMismatch, "expected format " + std::string(kModelFormat) + ", got " + j["format"].dump());
  }
  try {
    ProjectionModel model;
    model.config = config_from_json(j.at("config"));
    model.dims.text = j.at("dims").at("ctx_text").get<std::size_t>();
    model.dims.audio = j.at("dims").at("audio").get<std::size_t>();
    const auto embed = static_cast<std::size_t>(model.config.embed_dim);
    const auto& ctx = j.at("parameters").at("context");
    if (!ctx.is_array() || ctx.size() != static_cast<std::size_t>(model.config.n_layers)) {
      throw Error(ErrorKind::CorruptFile, "context layer count does not match config");
    }
    std::size_t in = model.context_input_dim();
    for (const auto& l : ctx) {
      model.params.context.push_back(layer_from_json(l, in, embed));
      in = embed;
    }
    model.params.backchannel = layer_from_json(j.at("parameters").at("backchannel"), model.dims.audio, embed);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptFile, std::string("model file: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CorruptFile) throw;
    throw Error(ErrorKind::CorruptFile, e.what());
  }
}

void save_model(const ProjectionModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << model_to_json(model) << '\n';
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

ProjectionModel load_model(const std::filesystem::path& path) {
  return model_from_json(corpus::read_text_file(path));
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,val_top10\n";
  for (const auto& r : history) out << r.epoch << ',' << r.train_loss << ',' << r.val_topk << '\n';
  return out.str();
}

}  // namespace bcalign::contrastive
