#include "bcalign/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bcalign/error.hpp"
#include "bcalign/rng.hpp"
#include "json.hpp"

namespace bcalign::corpus {

namespace {

using Json = nlohmann::ordered_json;

constexpr std::string_view kTurnShift = "/";
constexpr std::string_view kCarryOpen = "{";
constexpr std::string_view kCarryClose = "}";
constexpr std::string_view kReceiveOpen = "[";
constexpr std::string_view kReceiveClose = "]";

bool is_speaker_token(std::string_view tok) { return tok == "<A>" || tok == "<B>"; }

bool is_overlap_marker(std::string_view tok) {
  return tok == kCarryOpen || tok == kCarryClose || tok == kReceiveOpen || tok == kReceiveClose;
}

bool is_marker(std::string_view tok) {
  return is_speaker_token(tok) || tok == kTurnShift || is_overlap_marker(tok);
}

std::vector<std::string_view> split_whitespace(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string describe_turn(std::size_t index) { return "turn " + std::to_string(index); }

// Converts the raw tokens between a speaker token and a turn shift into
// word tokens plus overlap spans.
Turn parse_turn_body(Speaker speaker, std::span<const std::string_view> raw, std::size_t index) {
  Turn turn;
  turn.speaker = speaker;
  std::size_t pos = 0;

  auto collect_span = [&](std::string_view close, OverlapKind kind) {
    const std::size_t start = turn.tokens.size();
    ++pos;  // opening marker
    while (pos < raw.size() && raw[pos] != close) {
      if (is_overlap_marker(raw[pos])) {
        throw Error(ErrorKind::MalformedMarker,
                    "nested overlap marker '" + std::string(raw[pos]) + "' in " + describe_turn(index));
      }
      turn.tokens.emplace_back(raw[pos]);
      ++pos;
    }
    if (pos == raw.size()) {
      throw Error(ErrorKind::UnbalancedOverlap,
                  "missing '" + std::string(close) + "' in " + describe_turn(index));
    }
    ++pos;  // closing marker
    if (turn.tokens.size() == start) {
      throw Error(ErrorKind::MalformedMarker, "empty overlap span in " + describe_turn(index));
    }
    turn.overlaps.push_back({start, turn.tokens.size(), kind});
  };

  if (pos < raw.size() && raw[pos] == kReceiveOpen) collect_span(kReceiveClose, OverlapKind::Receive);

  while (pos < raw.size()) {
    const std::string_view tok = raw[pos];
    if (tok == kCarryOpen) {
      collect_span(kCarryClose, OverlapKind::Carry);
      if (pos != raw.size()) {
        throw Error(ErrorKind::MalformedMarker,
                    "brace span must end the turn in " + describe_turn(index));
      }
      break;
    }
    if (tok == kReceiveOpen) {
      throw Error(ErrorKind::MalformedMarker,
                  "bracket span must start the turn in " + describe_turn(index));
    }
    if (tok == kReceiveClose || tok == kCarryClose) {
      throw Error(ErrorKind::UnbalancedOverlap,
                  "unmatched '" + std::string(tok) + "' in " + describe_turn(index));
    }
    turn.tokens.emplace_back(tok);
    ++pos;
  }
  return turn;
}

void check_alternation_and_pairing(const std::vector<Turn>& turns) {
  for (std::size_t i = 1; i < turns.size(); ++i) {
    if (turns[i].speaker == turns[i - 1].speaker) {
      throw Error(ErrorKind::NonAlternatingSpeakers,
                  describe_turn(i) + " repeats speaker " + std::string(speaker_name(turns[i].speaker)));
    }
  }
  for (std::size_t i = 0; i + 1 < turns.size(); ++i) {
    const bool carry = turns[i].carry() != nullptr;
    const bool receive = turns[i + 1].receive() != nullptr;
    if (carry && !receive) {
      throw Error(ErrorKind::UnbalancedOverlap,
                  describe_turn(i) + " has a brace span but " + describe_turn(i + 1) + " has no bracket span");
    }
    if (receive && !carry) {
      throw Error(ErrorKind::UnbalancedOverlap,
                  describe_turn(i + 1) + " has a bracket span but " + describe_turn(i) + " has no brace span");
    }
  }
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> read_optional_number(const Json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw Error(ErrorKind::BadSchema, std::string("field '") + key + "' must be a number");
  return it->get<double>();
}

}  // namespace

std::string_view speaker_token(Speaker s) { return s == Speaker::A ? "<A>" : "<B>"; }
std::string_view speaker_name(Speaker s) { return s == Speaker::A ? "A" : "B"; }

Speaker parse_speaker_name(std::string_view name) {
  if (name == "A") return Speaker::A;
  if (name == "B") return Speaker::B;
  throw Error(ErrorKind::BadSchema, "speaker must be \"A\" or \"B\", got \"" + std::string(name) + "\"");
}

const OverlapSpan* Turn::receive() const {
  for (const auto& s : overlaps)
    if (s.kind == OverlapKind::Receive) return &s;
  return nullptr;
}

const OverlapSpan* Turn::carry() const {
  for (const auto& s : overlaps)
    if (s.kind == OverlapKind::Carry) return &s;
  return nullptr;
}

Lexicon default_lexicon() { return {kDefaultLexicon.begin(), kDefaultLexicon.end()}; }

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  for (const auto tok : split_whitespace(text)) {
    if (!out.empty()) out.push_back(' ');
    out.append(tok);
  }
  return out;
}

Transcript parse_transcript(std::string_view text, std::string source_id,
                            std::vector<std::string>* warnings) {
  const auto raw = split_whitespace(text);
  Transcript t;
  t.source_id = std::move(source_id);

  std::size_t pos = 0;
  while (pos < raw.size()) {
    if (!is_speaker_token(raw[pos])) {
      throw Error(ErrorKind::MalformedMarker, "expected <A> or <B> at token " + std::to_string(pos) +
                                                  ", got '" + std::string(raw[pos]) + "'");
    }
    const Speaker speaker = raw[pos] == "<A>" ? Speaker::A : Speaker::B;
    const std::size_t body_start = ++pos;
    while (pos < raw.size() && raw[pos] != kTurnShift) {
      if (is_speaker_token(raw[pos])) {
        throw Error(ErrorKind::MalformedMarker, "speaker token '" + std::string(raw[pos]) +
                                                    "' without preceding '/' at token " +
                                                    std::to_string(pos));
      }
      ++pos;
    }
    const std::span<const std::string_view> body(raw.data() + body_start, pos - body_start);
    t.turns.push_back(parse_turn_body(speaker, body, t.turns.size()));
    if (pos == raw.size()) {
      if (warnings) warnings->push_back("missing final '/' after " + describe_turn(t.turns.size() - 1));
    } else {
      ++pos;  // turn shift
    }
  }
  check_alternation_and_pairing(t.turns);
  return t;
}

void validate(const Transcript& t) {
  for (std::size_t i = 0; i < t.turns.size(); ++i) {
    const Turn& turn = t.turns[i];
    for (const auto& tok : turn.tokens) {
      if (tok.empty() || is_marker(tok) || tok.find_first_of(" \t\n\r\f\v") != std::string::npos) {
        throw Error(ErrorKind::MalformedMarker, "invalid word token '" + tok + "' in " + describe_turn(i));
      }
    }
    const OverlapSpan* receive = nullptr;
    const OverlapSpan* carry = nullptr;
    for (const auto& span : turn.overlaps) {
      if (span.start >= span.end || span.end > turn.tokens.size()) {
        throw Error(ErrorKind::MalformedMarker, "overlap span out of bounds in " + describe_turn(i));
      }
      auto& slot = span.kind == OverlapKind::Receive ? receive : carry;
      if (slot) throw Error(ErrorKind::MalformedMarker, "duplicate overlap span in " + describe_turn(i));
      slot = &span;
    }
    if (receive && receive->start != 0) {
      throw Error(ErrorKind::MalformedMarker, "bracket span must start the turn in " + describe_turn(i));
    }
    if (carry && carry->end != turn.tokens.size()) {
      throw Error(ErrorKind::MalformedMarker, "brace span must end the turn in " + describe_turn(i));
    }
    if (receive && carry && receive->end > carry->start) {
      throw Error(ErrorKind::MalformedMarker, "overlap spans intersect in " + describe_turn(i));
    }
  }
  check_alternation_and_pairing(t.turns);
}

std::string format_turn(const Turn& turn) {
  std::string out(speaker_token(turn.speaker));
  const OverlapSpan* receive = turn.receive();
  const OverlapSpan* carry = turn.carry();
  auto emit = [&out](std::string_view tok) {
    out.push_back(' ');
    out.append(tok);
  };
  for (std::size_t i = 0; i < turn.tokens.size(); ++i) {
    if (receive && receive->start == i) emit(kReceiveOpen);
    if (carry && carry->start == i) emit(kCarryOpen);
    emit(turn.tokens[i]);
    if (receive && receive->end == i + 1) emit(kReceiveClose);
    if (carry && carry->end == i + 1) emit(kCarryClose);
  }
  emit(kTurnShift);
  return out;
}

std::string format_transcript(const Transcript& t) {
  std::string out;
  for (const auto& turn : t.turns) {
    if (!out.empty()) out.push_back(' ');
    out += format_turn(turn);
  }
  return out;
}

std::vector<BackchannelSample> extract_backchannels(const Transcript& t, const Lexicon& lexicon) {
  const std::set<std::string, std::less<>> words(lexicon.begin(), lexicon.end());
  std::vector<BackchannelSample> out;
  for (std::size_t i = 0; i < t.turns.size(); ++i) {
    const Turn& turn = t.turns[i];
    if (turn.tokens.size() != 1 || !words.contains(turn.tokens.front())) continue;
    BackchannelSample s;
    s.id = t.source_id + "_" + std::to_string(i);
    s.dialogue_id = t.source_id;
    s.speaker = turn.speaker;
    s.lexeme = turn.tokens.front();
    s.turn_index = i;
    out.push_back(std::move(s));
  }
  return out;
}

std::string build_context(const Transcript& t, const BackchannelSample& sample, std::size_t k_turns) {
  if (k_turns < 1) throw Error(ErrorKind::InvalidArgument, "k_turns must be >= 1");
  if (sample.turn_index >= t.turns.size()) {
    throw Error(ErrorKind::InvalidArgument, "turn_index " + std::to_string(sample.turn_index) +
                                                " out of range for transcript '" + t.source_id + "'");
  }
  const std::size_t idx = sample.turn_index;
  const std::size_t first = idx - std::min(k_turns, idx);
  std::string out;
  for (std::size_t i = first; i < idx; ++i) {
    out += format_turn(t.turns[i]);
    out.push_back(' ');
  }
  const Turn& bc = t.turns[idx];
  out.append(speaker_token(bc.speaker));
  // Opening markers that precede the first word of the backchannel turn.
  if (const auto* r = bc.receive(); r && r->start == 0) {
    out.push_back(' ');
    out.append(kReceiveOpen);
  }
  if (const auto* c = bc.carry(); c && c->start == 0) {
    out.push_back(' ');
    out.append(kCarryOpen);
  }
  return out;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split_name(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw Error(ErrorKind::BadSchema, "unknown split '" + std::string(name) + "'");
}

std::map<std::string, Split> split_dialogues(const std::vector<std::string>& dialogue_ids,
                                             SplitRatios ratios, std::uint64_t seed) {
  const std::array<double, 3> r = {ratios.train, ratios.val, ratios.test};
  for (double x : r) {
    if (!std::isfinite(x) || x < 0.0) throw Error(ErrorKind::InvalidConfig, "split ratios must be >= 0");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidConfig, "split ratios must sum to 1");
  }

  std::vector<std::string> ids(dialogue_ids.begin(), dialogue_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const std::size_t n = ids.size();
  if (n < 3) {
    throw Error(ErrorKind::InsufficientDialogues,
                "need at least 3 dialogues, got " + std::to_string(n));
  }

  Rng rng(seed);
  rng.shuffle(ids);

  // Largest-remainder apportionment; ties go to the earlier split.
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = r[s] * static_cast<double>(n);
    counts[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[s] = exact - static_cast<double>(counts[s]);
    assigned += counts[s];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 3]];
  for (int s = 0; s < 3; ++s) {
    if (r[s] > 0.0 && counts[s] == 0) {
      const auto donor = std::max_element(counts.begin(), counts.end());
      --*donor;
      counts[s] = 1;
    }
  }

  std::map<std::string, Split> out;
  std::size_t i = 0;
  for (int s = 0; s < 3; ++s) {
    for (std::size_t c = 0; c < counts[s]; ++c, ++i) out.emplace(ids[i], static_cast<Split>(s));
  }
  return out;
}

std::map<std::string, Split> split_dataset(std::vector<BackchannelSample>& samples, SplitRatios ratios,
                                           std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.dialogue_id);
  auto mapping = split_dialogues(ids, ratios, seed);
  for (auto& s : samples) s.split = mapping.at(s.dialogue_id);
  return mapping;
}

std::string sample_to_json_line(const BackchannelSample& s) {
  Json j;
  j["id"] = s.id;
  j["dialogue_id"] = s.dialogue_id;
  j["speaker"] = speaker_name(s.speaker);
  j["lexeme"] = s.lexeme;
  j["turn_index"] = s.turn_index;
  j["context_text"] = s.context_text;
  j["context_turns"] = s.context_turns;
  j["bc_onset_s"] = optional_number(s.bc_onset_s);
  j["bc_offset_s"] = optional_number(s.bc_offset_s);
  j["split"] = s.split ? Json(split_name(*s.split)) : Json(nullptr);
  j["pitch_range_st"] = s.prosody ? Json(s.prosody->pitch_range_semitones) : Json(nullptr);
  j["duration_frames"] = s.prosody ? Json(s.prosody->duration_voiced_frames) : Json(nullptr);
  j["audio_ref"] = s.audio_ref ? Json(*s.audio_ref) : Json(nullptr);
  return j.dump();
}

BackchannelSample sample_from_json_line(std::string_view line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadSchema, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::BadSchema, "sample record must be an object");
  try {
    BackchannelSample s;
    s.id = j.at("id").get<std::string>();
    s.dialogue_id = j.at("dialogue_id").get<std::string>();
    s.speaker = parse_speaker_name(j.at("speaker").get<std::string>());
    s.lexeme = j.at("lexeme").get<std::string>();
    s.turn_index = j.at("turn_index").get<std::size_t>();
    s.context_text = j.value("context_text", std::string());
    s.context_turns = j.value("context_turns", std::size_t{0});
    s.bc_onset_s = read_optional_number(j, "bc_onset_s");
    s.bc_offset_s = read_optional_number(j, "bc_offset_s");
    if (auto it = j.find("split"); it != j.end() && !it->is_null()) {
      s.split = parse_split_name(it->get<std::string>());
    }
    const auto pitch = read_optional_number(j, "pitch_range_st");
    const auto dur = j.find("duration_frames");
    if (pitch && dur != j.end() && !dur->is_null()) {
      s.prosody = ProsodicFeatures{*pitch, dur->get<std::int64_t>()};
    }
    if (auto it = j.find("audio_ref"); it != j.end() && !it->is_null()) s.audio_ref = it->get<std::string>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadSchema, std::string("sample record: ") + e.what());
  }
}

void write_manifest(const std::vector<BackchannelSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << Json{{"schema", kManifestSchema}}.dump() << '\n';
  for (const auto& s : samples) out << sample_to_json_line(s) << '\n';
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

std::vector<BackchannelSample> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<BackchannelSample> out;
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_whitespace(line).empty()) continue;
    if (!header_seen) {
      Json h;
      try {
        h = Json::parse(line);
      } catch (const nlohmann::json::exception&) {
        throw Error(ErrorKind::BadSchema, path.string() + ": missing schema header");
      }
      if (!h.is_object() || h.value("schema", std::string()) != kManifestSchema) {
        throw Error(ErrorKind::BadSchema,
                    path.string() + ": expected header {\"schema\":\"" + std::string(kManifestSchema) + "\"}");
      }
      header_seen = true;
      continue;
    }
    try {
      out.push_back(sample_from_json_line(line));
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header_seen) throw Error(ErrorKind::BadSchema, path.string() + ": empty manifest");
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace bcalign::corpus
