#include "bcalign/ngram_lm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "bcalign/error.hpp"
#include "bcalign/rng.hpp"

namespace bcalign::lm {

NGramLM NGramLM::train(std::span<const TokenStream> streams, int order) {
  if (order < 1) throw Error(ErrorKind::InvalidArgument, "n-gram order must be >= 1");
  const bool any = std::any_of(streams.begin(), streams.end(), [](const auto& s) { return !s.empty(); });
  if (!any) throw Error(ErrorKind::EmptyCorpus, "no tokens to train on");

  NGramLM lm;
  lm.order_ = order;
  lm.vocab_.emplace_back(kUnkToken);
  lm.index_.emplace(std::string(kUnkToken), 0);
  for (const auto& stream : streams) {
    for (const auto& tok : stream) {
      if (lm.index_.emplace(tok, static_cast<int>(lm.vocab_.size())).second) lm.vocab_.push_back(tok);
    }
  }

  std::vector<int> ids;
  for (const auto& stream : streams) {
    ids.clear();
    for (const auto& tok : stream) ids.push_back(lm.index_.at(tok));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t max_hist = std::min<std::size_t>(static_cast<std::size_t>(order - 1), i);
      for (std::size_t h = 0; h <= max_hist; ++h) {
        std::vector<int> key(ids.begin() + static_cast<std::ptrdiff_t>(i - h),
                             ids.begin() + static_cast<std::ptrdiff_t>(i));
        auto& st = lm.stats_[std::move(key)];
        ++st.total;
        ++st.next[ids[i]];
      }
    }
  }
  return lm;
}

NGramLM NGramLM::uniform_like(const NGramLM& model) {
  NGramLM lm;
  lm.order_ = 0;
  lm.vocab_ = model.vocab_;
  lm.index_ = model.index_;
  return lm;
}

int NGramLM::token_id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? 0 : it->second;
}

std::vector<int> NGramLM::history_ids(std::span<const std::string> context) const {
  const std::size_t keep = order_ > 0 ? std::min<std::size_t>(context.size(), order_ - 1) : 0;
  std::vector<int> out;
  out.reserve(keep);
  for (std::size_t i = context.size() - keep; i < context.size(); ++i) out.push_back(token_id(context[i]));
  return out;
}

double NGramLM::prob_ids(std::span<const int> history, int word) const {
  const double uniform = 1.0 / static_cast<double>(vocab_.size());
  if (order_ == 0) return uniform;
  // Walk from the empty history up to the full one, interpolating as we go.
  double p = uniform;
  for (std::size_t len = 0; len <= history.size(); ++len) {
    const std::vector<int> key(history.end() - static_cast<std::ptrdiff_t>(len), history.end());
    const auto it = stats_.find(key);
    if (it == stats_.end() || it->second.total == 0) {
      if (len == 0) continue;
      break;  // longer histories containing this one are unseen as well
    }
    const auto& st = it->second;
    const auto c = st.next.find(word);
    const double count = c == st.next.end() ? 0.0 : static_cast<double>(c->second);
    const double types = static_cast<double>(st.next.size());
    const double total = static_cast<double>(st.total);
    p = (count + types * p) / (total + types);
  }
  return p;
}

double NGramLM::prob(std::span<const std::string> context, std::string_view token) const {
  const auto h = history_ids(context);
  return prob_ids(h, token_id(token));
}

double NGramLM::logprob(std::span<const std::string> context, std::string_view token) const {
  return std::log(prob(context, token));
}

std::vector<double> NGramLM::distribution(std::span<const std::string> context) const {
  const auto h = history_ids(context);
  std::vector<double> out(vocab_.size());
  for (std::size_t w = 0; w < vocab_.size(); ++w) out[w] = prob_ids(h, static_cast<int>(w));
  return out;
}

TokenStream tokenize(std::string_view text) {
  TokenStream out;
  std::istringstream ss{std::string(text)};
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

double backchannel_perplexity(const NGramLM& lm, std::span<const ScoredItem> items, PerplexityMean mean) {
  if (items.empty()) throw Error(ErrorKind::NoSamples, "no backchannel samples to score");
  double acc = 0.0;
  for (const auto& item : items) {
    const auto ctx = tokenize(item.context_text);
    const double lp = lm.logprob(ctx, item.word);
    acc += mean == PerplexityMean::Geometric ? -lp : std::exp(-lp);
  }
  const double avg = acc / static_cast<double>(items.size());
  return mean == PerplexityMean::Geometric ? std::exp(avg) : avg;
}

double backchannel_perplexity(const NGramLM& lm, std::span<const corpus::BackchannelSample> samples,
                              PerplexityMean mean) {
  std::vector<ScoredItem> items;
  items.reserve(samples.size());
  for (const auto& s : samples) items.push_back({s.context_text, s.lexeme});
  return backchannel_perplexity(lm, items, mean);
}

double backchannel_perplexity(const NGramLM& lm, const std::map<std::string, corpus::Transcript>& transcripts,
                              std::span<const corpus::BackchannelSample> samples, std::size_t k_turns,
                              PerplexityMean mean) {
  std::vector<ScoredItem> items;
  items.reserve(samples.size());
  for (const auto& s : samples) {
    const auto it = transcripts.find(s.dialogue_id);
    if (it == transcripts.end()) throw Error(ErrorKind::UnknownId, "no transcript for dialogue '" + s.dialogue_id + "'");
    items.push_back({corpus::build_context(it->second, s, k_turns), s.lexeme});
  }
  return backchannel_perplexity(lm, items, mean);
}

std::vector<corpus::Transcript> long_dependency_corpus(std::size_t n_dialogues, std::size_t episodes_per_dialogue,
                                                       std::uint64_t seed) {
  static constexpr std::array<std::string_view, 3> kFar = {"north", "south", "east"};
  static constexpr std::array<std::string_view, 3> kNear = {"red", "green", "blue"};
  static constexpr std::array<std::array<std::string_view, 3>, 3> kLexeme = {{
      {"yeah", "right", "mhm"},
      {"okay", "wow", "really"},
      {"exactly", "sure", "cool"},
  }};
  using corpus::Speaker;
  using corpus::Turn;

  Rng rng(seed);
  std::vector<corpus::Transcript> out;
  out.reserve(n_dialogues);
  for (std::size_t d = 0; d < n_dialogues; ++d) {
    corpus::Transcript t;
    t.source_id = "dep" + std::to_string(d);
    for (std::size_t e = 0; e < episodes_per_dialogue; ++e) {
      const auto far = rng.below(kFar.size());
      const auto near = rng.below(kNear.size());
      const auto filler = [](Speaker s) { return Turn{s, {"uh"}, {}}; };
      t.turns.push_back(Turn{Speaker::A, {std::string(kFar[far])}, {}});
      t.turns.push_back(filler(Speaker::B));
      t.turns.push_back(Turn{Speaker::A, {std::string(kNear[near])}, {}});
      t.turns.push_back(filler(Speaker::B));
      t.turns.push_back(filler(Speaker::A));
      t.turns.push_back(Turn{Speaker::B, {std::string(kLexeme[far][near])}, {}});
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace bcalign::lm
