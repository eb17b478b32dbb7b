#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bcalign::eval {

enum class AffectiveDim { Energy, Polarity, Surprisal };
inline constexpr std::array<AffectiveDim, 3> kAffectiveDims = {AffectiveDim::Energy, AffectiveDim::Polarity,
                                                               AffectiveDim::Surprisal};
std::string_view dim_name(AffectiveDim d);
AffectiveDim parse_dim_name(std::string_view name);

/// Pair of 1-based positions within a triad: (1,2), (1,3) or (2,3).
struct TriadPair {
  int first = 1;
  int second = 2;
  bool operator==(const TriadPair&) const = default;
  auto operator<=>(const TriadPair&) const = default;
};

struct TriadResponse {
  std::array<std::string, 3> ids;
  TriadPair pick;
};

/// One rater's answer in the perception-study output. Matching answers use
/// `bc_id` as the ground-truth backchannel of the stimulus set; the context is
/// that backchannel's own context.
struct RatingRecord {
  std::string bc_id;
  std::string rater_id;
  std::optional<int> energy;
  std::optional<int> polarity;
  std::optional<int> surprisal;
  std::vector<std::pair<std::string, int>> match_scores;  // candidate order preserved
  std::optional<TriadResponse> triad;

  std::optional<int> rating(AffectiveDim d) const;
};

std::string rating_to_json_line(const RatingRecord& r);
RatingRecord rating_from_json_line(std::string_view line);
void write_ratings(const std::vector<RatingRecord>& records, const std::filesystem::path& path);
std::vector<RatingRecord> read_ratings(const std::filesystem::path& path);

struct DimensionRatings {
  std::vector<int> energy;
  std::vector<int> polarity;
  std::vector<int> surprisal;

  const std::vector<int>& of(AffectiveDim d) const;
  std::vector<int>& of(AffectiveDim d);
};

/// bc_id -> collected 1-5 ratings per dimension.
using AffectiveRatings = std::map<std::string, DimensionRatings>;

AffectiveRatings collect_affective(const std::vector<RatingRecord>& records);

struct TriadJudgment {
  std::array<std::string, 3> ids;
  TriadPair consensus;
  double agreement = 0.0;  // share of raters choosing the consensus pair
};

inline constexpr double kTriadAgreementThreshold = 0.8;

/// Groups responses by their id triple (in presented order). Triads below
/// `min_agreement` are dropped; agreement equal to the threshold is kept.
std::vector<TriadJudgment> collect_triads(const std::vector<RatingRecord>& records,
                                          double min_agreement = kTriadAgreementThreshold);

struct MatchingStimulus {
  std::string ground_truth;
  std::vector<std::string> candidates;
  std::vector<std::vector<int>> scores;  // per candidate, across raters
};

std::vector<MatchingStimulus> collect_matching(const std::vector<RatingRecord>& records);

}  // namespace bcalign::eval
