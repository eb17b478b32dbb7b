#include "bcalign/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bcalign/error.hpp"

namespace bcalign::eval {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd unit_columns(const MatrixXd& m) {
  MatrixXd out = m;
  for (Index c = 0; c < out.cols(); ++c) {
    const double n = out.col(c).norm();
    if (n > 0.0) out.col(c) /= n;
  }
  return out;
}

const VectorXd& lookup(const std::map<std::string, VectorXd>& m, const std::string& id) {
  const auto it = m.find(id);
  if (it == m.end()) throw Error(ErrorKind::UnknownId, "no embedding for '" + id + "'");
  return it->second;
}

}  // namespace

double cosine(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::DimensionMismatch, "cosine of vectors with different sizes");
  const double denom = a.norm() * b.norm();
  return denom > 0.0 ? a.dot(b) / denom : 0.0;
}

std::size_t topk_cutoff(double k_percent, std::size_t pool) {
  const double exact = k_percent * static_cast<double>(pool) / 100.0;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(exact - 1e-9)));
}

double topk_percent_accuracy(const MatrixXd& ctx_embs, const MatrixXd& bc_embs, double k_percent,
                             std::span<const std::size_t> true_pairing) {
  const auto m = static_cast<std::size_t>(ctx_embs.cols());
  if (static_cast<std::size_t>(bc_embs.cols()) != m) {
    throw Error(ErrorKind::CountMismatch, std::to_string(m) + " contexts vs " + std::to_string(bc_embs.cols()) +
                                              " backchannels");
  }
  if (m == 0) throw Error(ErrorKind::EmptyInput, "top-k% accuracy needs at least one pair");
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw Error(ErrorKind::InvalidArgument, "k must be in (0, 100]");
  if (!true_pairing.empty() && true_pairing.size() != m) {
    throw Error(ErrorKind::CountMismatch, "pairing size differs from context count");
  }
  if (ctx_embs.rows() != bc_embs.rows()) throw Error(ErrorKind::DimensionMismatch, "embedding dimensions differ");

  const MatrixXd sims = unit_columns(ctx_embs).transpose() * unit_columns(bc_embs);
  const std::size_t cutoff = topk_cutoff(k_percent, m);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t t = true_pairing.empty() ? i : true_pairing[i];
    if (t >= m) throw Error(ErrorKind::InvalidArgument, "pairing index out of range");
    const auto row = sims.row(static_cast<Index>(i));
    const double target = row(static_cast<Index>(t));
    std::size_t rank = 1;
    for (std::size_t j = 0; j < m; ++j) {
      const double s = row(static_cast<Index>(j));
      if (s > target || (s == target && j < t)) ++rank;
    }
    if (rank <= cutoff) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(m);
}

double topk_percent_accuracy_pooled(const MatrixXd& ctx_embs, const MatrixXd& bc_embs, double k_percent,
                                    std::size_t pool_size) {
  if (pool_size == 0) throw Error(ErrorKind::InvalidArgument, "pool size must be positive");
  if (ctx_embs.cols() != bc_embs.cols()) throw Error(ErrorKind::CountMismatch, "context and backchannel counts differ");
  const Index m = ctx_embs.cols();
  if (m == 0) throw Error(ErrorKind::EmptyInput, "top-k% accuracy needs at least one pair");
  double hits = 0.0;
  for (Index start = 0; start < m; start += static_cast<Index>(pool_size)) {
    const Index len = std::min<Index>(static_cast<Index>(pool_size), m - start);
    hits += static_cast<double>(len) *
            topk_percent_accuracy(ctx_embs.middleCols(start, len), bc_embs.middleCols(start, len), k_percent);
  }
  return hits / static_cast<double>(m);
}

TriadPair triadic_select(const VectorXd& e1, const VectorXd& e2, const VectorXd& e3) {
  const double c12 = cosine(e1, e2);
  const double c13 = cosine(e1, e3);
  const double c23 = cosine(e2, e3);
  TriadPair best{1, 2};
  double score = c12;
  if (c13 > score) {
    best = {1, 3};
    score = c13;
  }
  if (c23 > score) best = {2, 3};
  return best;
}

double triadic_agreement(const std::map<std::string, VectorXd>& embeddings, std::span<const TriadJudgment> triads) {
  if (triads.empty()) throw Error(ErrorKind::NoSamples, "no triads to evaluate");
  std::size_t correct = 0;
  for (const auto& t : triads) {
    const auto pick = triadic_select(lookup(embeddings, t.ids[0]), lookup(embeddings, t.ids[1]),
                                     lookup(embeddings, t.ids[2]));
    if (pick == t.consensus) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(triads.size());
}

std::size_t matching_select(const VectorXd& context, std::span<const VectorXd> candidates) {
  if (candidates.empty()) throw Error(ErrorKind::EmptyInput, "no candidates to match");
  std::size_t best = 0;
  double score = cosine(context, candidates[0]);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double s = cosine(context, candidates[i]);
    if (s > score) {
      score = s;
      best = i;
    }
  }
  return best;
}

double matching_accuracy(std::span<const MatchingItem> items) {
  if (items.empty()) throw Error(ErrorKind::NoSamples, "no matching stimuli");
  std::size_t correct = 0;
  for (const auto& item : items) {
    if (item.truth >= item.candidates.size()) throw Error(ErrorKind::MissingGroundTruth, "ground truth index out of range");
    if (matching_select(item.context, item.candidates) == item.truth) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

std::size_t select_by_mean_score(const MatchingStimulus& stimulus) {
  if (stimulus.candidates.empty()) throw Error(ErrorKind::EmptyInput, "stimulus set has no candidates");
  std::size_t best = 0;
  double best_mean = -1.0;
  for (std::size_t i = 0; i < stimulus.candidates.size(); ++i) {
    if (stimulus.scores[i].empty()) continue;
    const double m = mean(stimulus.scores[i]);
    if (m > best_mean) {
      best_mean = m;
      best = i;
    }
  }
  return best;
}

double human_matching_accuracy(std::span<const MatchingStimulus> stimuli) {
  if (stimuli.empty()) throw Error(ErrorKind::NoSamples, "no matching stimuli");
  std::size_t correct = 0;
  for (const auto& s : stimuli) {
    const auto truth = std::find(s.candidates.begin(), s.candidates.end(), s.ground_truth);
    if (truth == s.candidates.end()) {
      throw Error(ErrorKind::MissingGroundTruth, "ground truth '" + s.ground_truth + "' not among candidates");
    }
    if (select_by_mean_score(s) == static_cast<std::size_t>(truth - s.candidates.begin())) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(stimuli.size());
}

std::vector<MatchingItem> matching_items(std::span<const MatchingStimulus> stimuli,
                                         const std::map<std::string, VectorXd>& context_embeddings,
                                         const std::map<std::string, VectorXd>& backchannel_embeddings) {
  std::vector<MatchingItem> out;
  out.reserve(stimuli.size());
  for (const auto& s : stimuli) {
    const auto truth = std::find(s.candidates.begin(), s.candidates.end(), s.ground_truth);
    if (truth == s.candidates.end()) {
      throw Error(ErrorKind::MissingGroundTruth, "ground truth '" + s.ground_truth + "' not among candidates");
    }
    MatchingItem item;
    item.context = lookup(context_embeddings, s.ground_truth);
    for (const auto& c : s.candidates) item.candidates.push_back(lookup(backchannel_embeddings, c));
    item.truth = static_cast<std::size_t>(truth - s.candidates.begin());
    out.push_back(std::move(item));
  }
  return out;
}

VectorXd RidgeProbe::predict_rows(const MatrixXd& X) const {
  if (X.cols() != weights.size()) throw Error(ErrorKind::DimensionMismatch, "probe input dimension mismatch");
  return (X * weights).array() + bias;
}

RidgeProbe fit_ridge(const MatrixXd& X, const VectorXd& y, double alpha, bool allow_zero_alpha) {
  if (X.rows() < 2) throw Error(ErrorKind::InvalidArgument, "ridge needs at least two rows");
  if (X.rows() != y.size()) throw Error(ErrorKind::CountMismatch, "X and y row counts differ");
  if (!X.allFinite() || !y.allFinite()) throw Error(ErrorKind::NonFiniteValue, "ridge inputs must be finite");
  if (!(alpha > 0.0) && !(alpha == 0.0 && allow_zero_alpha)) {
    throw Error(ErrorKind::InvalidArgument, "ridge alpha must be > 0");
  }
  const Eigen::RowVectorXd x_mean = X.colwise().mean();
  const double y_mean = y.mean();
  const MatrixXd xc = X.rowwise() - x_mean;
  const VectorXd yc = y.array() - y_mean;

  const Index d = X.cols();
  const MatrixXd a = xc.transpose() * xc + alpha * MatrixXd::Identity(d, d);
  const VectorXd b = xc.transpose() * yc;

  VectorXd w;
  if (alpha > 0.0) {
    const Eigen::LDLT<MatrixXd> ldlt(a);
    w = ldlt.solve(b);
    w += ldlt.solve(b - a * w);  // one step of iterative refinement
  } else {
    const Eigen::ColPivHouseholderQR<MatrixXd> qr(a);
    if (qr.rank() < d) throw Error(ErrorKind::SingularSystem, "X'X is singular at alpha = 0");
    w = qr.solve(b);
  }
  if (!w.allFinite()) throw Error(ErrorKind::SingularSystem, "ridge solve produced non-finite weights");

  RidgeProbe probe;
  probe.weights = std::move(w);
  probe.bias = y_mean - x_mean.dot(probe.weights);
  probe.alpha = alpha;
  return probe;
}

double normal_equation_residual(const RidgeProbe& probe, const MatrixXd& X, const VectorXd& y) {
  const Eigen::RowVectorXd x_mean = X.colwise().mean();
  const MatrixXd xc = X.rowwise() - x_mean;
  const VectorXd yc = y.array() - y.mean();
  const VectorXd lhs = xc.transpose() * (xc * probe.weights) + probe.alpha * probe.weights;
  return (lhs - xc.transpose() * yc).cwiseAbs().maxCoeff();
}

double r2_score(const VectorXd& y, const VectorXd& predicted) {
  if (y.size() != predicted.size()) throw Error(ErrorKind::CountMismatch, "prediction count differs");
  if (y.size() == 0) throw Error(ErrorKind::EmptyInput, "R^2 of an empty set");
  const double ss_res = (y - predicted).squaredNorm();
  const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

VectorXd lexical_onehot(const std::string& lexeme, const corpus::Lexicon& lexicon) {
  const auto it = std::find(lexicon.begin(), lexicon.end(), lexeme);
  if (it == lexicon.end()) throw Error(ErrorKind::UnknownLexeme, "'" + lexeme + "' is not in the lexicon");
  VectorXd v = VectorXd::Zero(static_cast<Index>(lexicon.size()));
  v(static_cast<Index>(it - lexicon.begin())) = 1.0;
  return v;
}

VectorXd prosodic_baseline(const corpus::BackchannelSample& sample) {
  if (!sample.prosody) throw Error(ErrorKind::MissingFeature, "sample '" + sample.id + "' has no prosodic features");
  VectorXd v(2);
  v << sample.prosody->pitch_range_semitones, static_cast<double>(sample.prosody->duration_voiced_frames);
  return v;
}

VectorXd combined_baseline(const corpus::BackchannelSample& sample, const corpus::Lexicon& lexicon) {
  const VectorXd lex = lexical_onehot(sample.lexeme, lexicon);
  const VectorXd pros = prosodic_baseline(sample);
  VectorXd v(lex.size() + pros.size());
  v << lex, pros;
  return v;
}

double median(std::vector<int> values) {
  if (values.empty()) throw Error(ErrorKind::EmptyInput, "median of no ratings");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double mean(const std::vector<int>& values) {
  if (values.empty()) throw Error(ErrorKind::EmptyInput, "mean of no ratings");
  return static_cast<double>(std::accumulate(values.begin(), values.end(), 0LL)) / static_cast<double>(values.size());
}

double pearson_r2(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::CountMismatch, "correlation of unequal lengths");
  if (a.size() < 2) throw Error(ErrorKind::EmptyInput, "correlation needs two points");
  const Eigen::Map<const VectorXd> x(a.data(), static_cast<Index>(a.size()));
  const Eigen::Map<const VectorXd> y(b.data(), static_cast<Index>(b.size()));
  const VectorXd xc = x.array() - x.mean();
  const VectorXd yc = y.array() - y.mean();
  const double denom = xc.squaredNorm() * yc.squaredNorm();
  if (denom == 0.0) return 0.0;
  const double cov = xc.dot(yc);
  return cov * cov / denom;
}

RatingStats rating_stats(const AffectiveRatings& ratings, const std::map<std::string, std::string>& lexeme_of) {
  std::map<std::string, std::array<std::vector<double>, 3>> medians;
  std::array<std::vector<double>, 3> means;
  for (const auto& [id, r] : ratings) {
    const auto lex = lexeme_of.find(id);
    if (lex == lexeme_of.end()) throw Error(ErrorKind::UnknownId, "no lexeme for backchannel '" + id + "'");
    auto& slot = medians[lex->second];
    bool complete = true;
    for (std::size_t d = 0; d < 3; ++d) {
      const auto& v = r.of(kAffectiveDims[d]);
      if (v.empty()) {
        complete = false;
        continue;
      }
      slot[d].push_back(median(v));
    }
    if (complete)
      for (std::size_t d = 0; d < 3; ++d) means[d].push_back(mean(r.of(kAffectiveDims[d])));
  }

  RatingStats out;
  for (const auto& [lexeme, per_dim] : medians) {
    LexemeStats s;
    s.lexeme = lexeme;
    s.n_backchannels = per_dim[0].size();
    for (std::size_t d = 0; d < 3; ++d) {
      const auto& v = per_dim[d];
      if (v.empty()) continue;
      const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mu) * (x - mu);
      s.dims[d] = {mu, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
    }
    out.per_lexeme.push_back(std::move(s));
  }
  std::stable_sort(out.per_lexeme.begin(), out.per_lexeme.end(),
                   [](const LexemeStats& a, const LexemeStats& b) { return a.dims[0].mean > b.dims[0].mean; });
  if (means[0].size() >= 2) {
    out.energy_polarity_r2 = pearson_r2(means[0], means[1]);
    out.energy_surprisal_r2 = pearson_r2(means[0], means[2]);
    out.surprisal_polarity_r2 = pearson_r2(means[2], means[1]);
  }
  return out;
}

}  // namespace bcalign::eval
