#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bcalign/corpus.hpp"
#include "bcalign/ratings.hpp"

namespace bcalign::eval {

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Rank cut-off ceil(k * M / 100), at least 1.
std::size_t topk_cutoff(double k_percent, std::size_t pool);

/// Columns are embeddings. Context i is a hit when its true backchannel
/// (column `true_pairing[i]`, identity when empty) ranks within the top k% of
/// all columns by cosine; equal scores rank by column index.
double topk_percent_accuracy(const Eigen::MatrixXd& ctx_embs, const Eigen::MatrixXd& bc_embs, double k_percent,
                             std::span<const std::size_t> true_pairing = {});

/// Same metric computed inside consecutive pools of `pool_size` pairs (the
/// last pool may be smaller), averaged over all contexts.
double topk_percent_accuracy_pooled(const Eigen::MatrixXd& ctx_embs, const Eigen::MatrixXd& bc_embs,
                                    double k_percent, std::size_t pool_size);

/// Most similar pair by cosine; ties resolve (1,2) < (1,3) < (2,3).
TriadPair triadic_select(const Eigen::VectorXd& e1, const Eigen::VectorXd& e2, const Eigen::VectorXd& e3);

double triadic_agreement(const std::map<std::string, Eigen::VectorXd>& embeddings,
                         std::span<const TriadJudgment> triads);

/// Index of the most similar candidate; ties go to the lowest index.
std::size_t matching_select(const Eigen::VectorXd& context, std::span<const Eigen::VectorXd> candidates);

struct MatchingItem {
  Eigen::VectorXd context;
  std::vector<Eigen::VectorXd> candidates;
  std::size_t truth = 0;
};

double matching_accuracy(std::span<const MatchingItem> items);

/// Candidate with the highest mean rater score (lowest index on ties).
std::size_t select_by_mean_score(const MatchingStimulus& stimulus);
double human_matching_accuracy(std::span<const MatchingStimulus> stimuli);

/// Builds model-side matching items: context embeddings come from the ground
/// truth's own id, candidates from their backchannel embeddings.
std::vector<MatchingItem> matching_items(std::span<const MatchingStimulus> stimuli,
                                         const std::map<std::string, Eigen::VectorXd>& context_embeddings,
                                         const std::map<std::string, Eigen::VectorXd>& backchannel_embeddings);

inline constexpr double kProbeAlpha = 1.0;

struct RidgeProbe {
  Eigen::VectorXd weights;
  double bias = 0.0;
  double alpha = kProbeAlpha;
  std::string target;

  double predict(const Eigen::VectorXd& x) const { return weights.dot(x) + bias; }
  Eigen::VectorXd predict_rows(const Eigen::MatrixXd& X) const;
};

/// Closed-form ridge on mean-centred rows of X; the bias is not penalised.
/// alpha == 0 is only accepted with `allow_zero_alpha`.
RidgeProbe fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double alpha = kProbeAlpha,
                     bool allow_zero_alpha = false);

/// ||(Xc'Xc + alpha I) w - Xc'yc||_inf for the centred system.
double normal_equation_residual(const RidgeProbe& probe, const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

double r2_score(const Eigen::VectorXd& y, const Eigen::VectorXd& predicted);
inline double probe_r2(const RidgeProbe& probe, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  return r2_score(y, probe.predict_rows(X));
}

Eigen::VectorXd lexical_onehot(const std::string& lexeme, const corpus::Lexicon& lexicon);
Eigen::VectorXd prosodic_baseline(const corpus::BackchannelSample& sample);
Eigen::VectorXd combined_baseline(const corpus::BackchannelSample& sample, const corpus::Lexicon& lexicon);

double median(std::vector<int> values);
double mean(const std::vector<int>& values);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct LexemeStats {
  std::string lexeme;
  std::size_t n_backchannels = 0;
  std::array<MeanStd, 3> dims;  // energy, polarity, surprisal; over per-backchannel medians
};

struct RatingStats {
  std::vector<LexemeStats> per_lexeme;  // sorted by descending mean energy
  double energy_polarity_r2 = 0.0;
  double energy_surprisal_r2 = 0.0;
  double surprisal_polarity_r2 = 0.0;
};

double pearson_r2(std::span<const double> a, std::span<const double> b);

/// Per-lexeme mean and sample standard deviation of the per-backchannel
/// medians, plus squared Pearson correlation between the per-backchannel mean
/// ratings of each pair of dimensions (backchannels rated on all three).
RatingStats rating_stats(const AffectiveRatings& ratings, const std::map<std::string, std::string>& lexeme_of);

}  // namespace bcalign::eval
