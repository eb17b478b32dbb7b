#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace bcalign::corpus {

enum class Speaker { A, B };

std::string_view speaker_token(Speaker s);  // "<A>" / "<B>"
std::string_view speaker_name(Speaker s);   // "A" / "B"
Speaker parse_speaker_name(std::string_view name);

// Carry: brace-delimited tail that overlaps the next turn.
// Receive: bracket-delimited head that overlaps the previous turn.
enum class OverlapKind { Carry, Receive };

/// Half-open token range [start, end) within Turn::tokens.
struct OverlapSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  OverlapKind kind = OverlapKind::Carry;

  bool operator==(const OverlapSpan&) const = default;
};

/// One speaker turn. `tokens` holds only word tokens; overlap markers are
/// represented by `overlaps`.
struct Turn {
  Speaker speaker = Speaker::A;
  std::vector<std::string> tokens;
  std::vector<OverlapSpan> overlaps;  // at most one Receive (first) and one Carry (last)

  const OverlapSpan* receive() const;
  const OverlapSpan* carry() const;

  bool operator==(const Turn&) const = default;
};

struct Transcript {
  std::string source_id;
  std::vector<Turn> turns;

  bool operator==(const Transcript&) const = default;
};

/// The 18 backchannel lexemes, in the order used for one-hot encodings.
inline constexpr std::array<std::string_view, 18> kDefaultLexicon = {
    "absolutely", "ah",   "cool",   "definitely", "exactly", "good",
    "mhm",        "mm",   "oh",     "okay",       "really",  "right",
    "sure",       "uh-huh", "wow",  "yeah",       "yep",     "yes"};

using Lexicon = std::vector<std::string>;
Lexicon default_lexicon();

/// Collapses runs of whitespace to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

/// Parses the `<A> ... / <B> ... /` notation. A missing final `/` is
/// accepted; a note is appended to `warnings` when it is non-null.
Transcript parse_transcript(std::string_view text, std::string source_id = {},
                            std::vector<std::string>* warnings = nullptr);

std::string format_turn(const Turn& turn);
std::string format_transcript(const Transcript& t);

/// Structural check used by the formatter's precondition and by tests.
/// Throws the same error kinds as the parser.
void validate(const Transcript& t);

enum class Split { Train, Val, Test };
std::string_view split_name(Split s);
Split parse_split_name(std::string_view name);

struct ProsodicFeatures {
  double pitch_range_semitones = 0.0;
  std::int64_t duration_voiced_frames = 0;

  bool operator==(const ProsodicFeatures&) const = default;
};

struct BackchannelSample {
  std::string id;
  std::string dialogue_id;
  Speaker speaker = Speaker::A;
  std::string lexeme;
  std::size_t turn_index = 0;
  std::string context_text;
  std::size_t context_turns = 0;
  std::optional<double> bc_onset_s;
  std::optional<double> bc_offset_s;
  std::optional<Split> split;
  std::optional<ProsodicFeatures> prosody;
  std::optional<std::string> audio_ref;

  bool operator==(const BackchannelSample&) const = default;
};

/// Turns consisting of exactly one lexicon word (markers aside).
std::vector<BackchannelSample> extract_backchannels(const Transcript& t,
                                                    const Lexicon& lexicon);

/// Up to `k_turns` preceding turns, then the backchannel turn's speaker token
/// and any opening markers before the backchannel word.
std::string build_context(const Transcript& t, const BackchannelSample& sample,
                          std::size_t k_turns);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Dialogue-level split: dialogues are shuffled with `seed` and cut by
/// largest-remainder rounding. Every split with a positive ratio receives at
/// least one dialogue.
std::map<std::string, Split> split_dialogues(const std::vector<std::string>& dialogue_ids,
                                             SplitRatios ratios, std::uint64_t seed);

/// Assigns `split` on every sample from its dialogue_id; returns the mapping.
std::map<std::string, Split> split_dataset(std::vector<BackchannelSample>& samples,
                                           SplitRatios ratios, std::uint64_t seed);

// Manifest: JSON Lines, first record {"schema":"bc-sample/1"}.
inline constexpr std::string_view kManifestSchema = "bc-sample/1";

std::string sample_to_json_line(const BackchannelSample& s);
BackchannelSample sample_from_json_line(std::string_view line);
void write_manifest(const std::vector<BackchannelSample>& samples,
                    const std::filesystem::path& path);
std::vector<BackchannelSample> read_manifest(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace bcalign::corpus
