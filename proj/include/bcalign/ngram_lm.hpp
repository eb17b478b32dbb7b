#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bcalign/corpus.hpp"

namespace bcalign::lm {

using TokenStream = std::vector<std::string>;

inline constexpr std::string_view kUnkToken = "<unk>";

/// Interpolated Witten-Bell n-gram model. Order 0 is the uniform model over
/// the vocabulary, used as the untrained baseline.
class NGramLM {
 public:
  static NGramLM train(std::span<const TokenStream> streams, int order);
  static NGramLM uniform_like(const NGramLM& model);

  int order() const { return order_; }
  std::size_t vocabulary_size() const { return vocab_.size(); }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  /// Natural-log probability of `token` after `context` (only the last
  /// order-1 tokens are used). Unknown tokens map to <unk>.
  double logprob(std::span<const std::string> context, std::string_view token) const;
  double prob(std::span<const std::string> context, std::string_view token) const;

  /// p(w | context) for every vocabulary entry, in vocabulary order.
  std::vector<double> distribution(std::span<const std::string> context) const;

 private:
  struct ContextStats {
    std::uint64_t total = 0;
    std::map<int, std::uint64_t> next;
  };

  int token_id(std::string_view token) const;
  std::vector<int> history_ids(std::span<const std::string> context) const;
  double prob_ids(std::span<const int> history, int word) const;

  int order_ = 0;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  std::map<std::vector<int>, ContextStats> stats_;
};

inline double token_logprob(const NGramLM& lm, std::span<const std::string> context, std::string_view token) {
  return lm.logprob(context, token);
}

TokenStream tokenize(std::string_view text);

enum class PerplexityMean {
  Geometric,   // exp(mean negative log-probability)
  Arithmetic,  // mean of per-sample 1/p
};

struct ScoredItem {
  std::string context_text;
  std::string word;
};

double backchannel_perplexity(const NGramLM& lm, std::span<const ScoredItem> items,
                              PerplexityMean mean = PerplexityMean::Geometric);

/// Uses each sample's stored context_text and lexeme.
double backchannel_perplexity(const NGramLM& lm, std::span<const corpus::BackchannelSample> samples,
                              PerplexityMean mean = PerplexityMean::Geometric);

/// Rebuilds each sample's context at `k_turns` from its transcript
/// (looked up by dialogue_id) before scoring.
double backchannel_perplexity(const NGramLM& lm, const std::map<std::string, corpus::Transcript>& transcripts,
                              std::span<const corpus::BackchannelSample> samples, std::size_t k_turns,
                              PerplexityMean mean = PerplexityMean::Geometric);

/// Dialogues made of five-turn episodes followed by a backchannel whose
/// lexeme is fixed by the content words three and five turns back. The
/// intervening turns are constant filler, so a one-turn context carries no
/// information about the lexeme.
std::vector<corpus::Transcript> long_dependency_corpus(std::size_t n_dialogues,
                                                       std::size_t episodes_per_dialogue,
                                                       std::uint64_t seed);

}  // namespace bcalign::lm
