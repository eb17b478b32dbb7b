#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "bcalign/corpus.hpp"
#include "bcalign/error.hpp"
#include "doctest.h"
#include "support/expect.hpp"
#include "support/generators.hpp"

using namespace bcalign;
using namespace bcalign::corpus;

using bcalign::testing::kind_of;

namespace {

std::string fixture(const char* name) {
  return read_text_file(std::filesystem::path(BCALIGN_DATA_DIR) / "transcripts" / name);
}

// Independent reading of the notation: walks characters rather than tokens
// and records, per turn, the word list and the marker-delimited ranges.
struct RefTurn {
  char speaker;
  std::vector<std::string> words;
  std::vector<std::tuple<std::size_t, std::size_t, char>> spans;  // start, end, opening char
};

std::vector<RefTurn> reference_tokenize(const std::string& s) {
  std::vector<RefTurn> turns;
  std::string word;
  std::size_t open_at = 0;
  char open = 0;
  auto flush = [&] {
    if (word.empty()) return;
    if (word == "<A>" || word == "<B>") {
      turns.push_back({word[1], {}, {}});
    } else if (word == "[" || word == "{") {
      open = word[0];
      open_at = turns.back().words.size();
    } else if (word == "]" || word == "}") {
      turns.back().spans.emplace_back(open_at, turns.back().words.size(), open);
    } else if (word != "/") {
      turns.back().words.push_back(word);
    }
    word.clear();
  };
  for (char c : s) {
    if (c == ' ') {
      flush();
    } else {
      word.push_back(c);
    }
  }
  flush();
  return turns;
}

std::vector<std::string> lexemes(const std::vector<BackchannelSample>& samples) {
  std::vector<std::string> out;
  for (const auto& s : samples) out.push_back(s.lexeme);
  return out;
}

}  // namespace

TEST_CASE("three short turns") {
  const auto t = parse_transcript("<B> hi / <A> hello / <B> hi /");
  REQUIRE(t.turns.size() == 3);
  CHECK(t.turns[0].speaker == Speaker::B);
  CHECK(t.turns[0].tokens == std::vector<std::string>{"hi"});
  CHECK(t.turns[1].speaker == Speaker::A);
  CHECK(t.turns[1].tokens == std::vector<std::string>{"hello"});
  CHECK(t.turns[2].speaker == Speaker::B);
  CHECK(t.turns[2].tokens == std::vector<std::string>{"hi"});
}

TEST_CASE("degenerate empty turn") {
  const auto t = parse_transcript("<A> /");
  REQUIRE(t.turns.size() == 1);
  CHECK(t.turns[0].tokens.empty());
  CHECK(t.turns[0].overlaps.empty());
}

TEST_CASE("carry and receive spans agree with a reference tokenizer") {
  const std::string s = "<A> a b { c } / <B> [ d ] e /";
  const auto t = parse_transcript(s);
  const auto ref = reference_tokenize(s);
  REQUIRE(t.turns.size() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(speaker_name(t.turns[i].speaker)[0] == ref[i].speaker);
    CHECK(t.turns[i].tokens == ref[i].words);
    REQUIRE(t.turns[i].overlaps.size() == ref[i].spans.size());
    for (std::size_t k = 0; k < ref[i].spans.size(); ++k) {
      const auto& [start, end, open] = ref[i].spans[k];
      CHECK(t.turns[i].overlaps[k].start == start);
      CHECK(t.turns[i].overlaps[k].end == end);
      CHECK(t.turns[i].overlaps[k].kind == (open == '{' ? OverlapKind::Carry : OverlapKind::Receive));
    }
  }
  REQUIRE(t.turns[0].carry());
  CHECK(t.turns[0].tokens[t.turns[0].carry()->start] == "c");
  REQUIRE(t.turns[1].receive());
  CHECK(t.turns[1].tokens[t.turns[1].receive()->start] == "d");
}

TEST_CASE("reference tokenizer agrees on generated transcripts") {
  Rng rng(41);
  for (int i = 0; i < 200; ++i) {
    const auto g = testing::random_transcript(rng);
    const auto t = parse_transcript(g.text);
    const auto ref = reference_tokenize(g.text);
    REQUIRE(t.turns.size() == ref.size());
    for (std::size_t k = 0; k < ref.size(); ++k) {
      CHECK(t.turns[k].tokens == ref[k].words);
      CHECK(t.turns[k].overlaps.size() == ref[k].spans.size());
    }
  }
}

TEST_CASE("parser errors") {
  CHECK(kind_of([] { parse_transcript("<A> hi <B> there /"); }) == ErrorKind::MalformedMarker);
  CHECK(kind_of([] { parse_transcript("hi / <B> there /"); }) == ErrorKind::MalformedMarker);
  CHECK(kind_of([] { parse_transcript("<A> x / <A> y /"); }) == ErrorKind::NonAlternatingSpeakers);
  CHECK(kind_of([] { parse_transcript("<A> a { b } / <B> c / <A> d /"); }) == ErrorKind::UnbalancedOverlap);
  CHECK(kind_of([] { parse_transcript("<A> a / <B> [ c ] d / <A> e /"); }) == ErrorKind::UnbalancedOverlap);
  CHECK(kind_of([] { parse_transcript("<A> a { b / <B> c /"); }) == ErrorKind::UnbalancedOverlap);
  CHECK(kind_of([] { parse_transcript("<A> a b } / <B> c /"); }) == ErrorKind::UnbalancedOverlap);
  CHECK(kind_of([] { parse_transcript("<A> a { } / <B> [ c ] /"); }) == ErrorKind::MalformedMarker);
  CHECK(kind_of([] { parse_transcript("<A> a [ b ] / <B> c /"); }) == ErrorKind::MalformedMarker);
  CHECK(kind_of([] { parse_transcript("<A> { a } b / <B> [ c ] /"); }) == ErrorKind::MalformedMarker);
}

TEST_CASE("unmatched overlap at transcript boundaries is legal") {
  const auto t = parse_transcript("<A> [ oh ] well / <B> sure { then } /");
  CHECK(t.turns[0].receive());
  CHECK(t.turns[1].carry());
  CHECK_NOTHROW(validate(t));
}

TEST_CASE("missing final turn shift is tolerated with a warning") {
  std::vector<std::string> warnings;
  const auto t = parse_transcript("<A> hello / <B> hi", "x", &warnings);
  CHECK(t.turns.size() == 2);
  CHECK(warnings.size() == 1);
  CHECK(format_transcript(t) == "<A> hello / <B> hi /");
}

TEST_CASE("example transcripts round-trip verbatim") {
  for (const char* name : {"example1.txt", "example2.txt"}) {
    const std::string raw = fixture(name);
    CHECK(format_transcript(parse_transcript(raw)) == normalize_whitespace(raw));
  }
}

TEST_CASE("zero turns formats to the empty string") {
  CHECK(format_transcript(Transcript{}).empty());
  CHECK(parse_transcript("   \n").turns.empty());
}

TEST_CASE("generated transcripts round-trip exactly") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto g = testing::random_transcript(rng);
    const auto t = parse_transcript(g.text);
    REQUIRE(t.turns == g.transcript.turns);
    REQUIRE(format_transcript(t) == g.text);
    CHECK_NOTHROW(validate(t));
  }
}

TEST_CASE("messy whitespace normalizes on the round trip") {
  const std::string raw = "  <A>   so\tyou \n { know }  /<B>";
  CHECK_THROWS(parse_transcript(raw));  // "/<B>" is one token, not a turn shift
  const std::string ok = "  <A>   so\tyou \n { know }  /  <B> [ right ]\n/ ";
  CHECK(format_transcript(parse_transcript(ok)) == normalize_whitespace(ok));
}

TEST_CASE("overlap pairing on fixtures") {
  for (const char* name : {"example1.txt", "example2.txt"}) {
    const auto t = parse_transcript(fixture(name));
    std::size_t carries = 0, receives = 0;
    for (std::size_t i = 0; i + 1 < t.turns.size(); ++i) carries += t.turns[i].carry() != nullptr;
    for (std::size_t i = 1; i < t.turns.size(); ++i) receives += t.turns[i].receive() != nullptr;
    CHECK(carries == receives);
  }
}

TEST_CASE("extraction on the second example") {
  const auto t = parse_transcript(fixture("example2.txt"), "ex2");
  const auto samples = extract_backchannels(t, default_lexicon());
  CHECK(lexemes(samples) == std::vector<std::string>{"yeah", "right", "right", "right", "mhm", "right", "right"});
  for (const auto& s : samples) {
    const auto& turn = t.turns[s.turn_index];
    CHECK(turn.tokens == std::vector<std::string>{s.lexeme});
    CHECK(s.dialogue_id == "ex2");
    CHECK(s.speaker == Speaker::B);
  }
  const auto& last_b = t.turns[t.turns.size() - 2];
  CHECK(last_b.tokens == std::vector<std::string>{"right", "right"});
  CHECK(std::none_of(samples.begin(), samples.end(), [&](const auto& s) { return s.turn_index == t.turns.size() - 2; }));
}

TEST_CASE("extraction edge cases") {
  const auto lex = default_lexicon();
  CHECK(extract_backchannels(parse_transcript("<A> hello there / <B> hi /"), lex).empty());
  CHECK(extract_backchannels(parse_transcript("<A> yeah i know / <B> so right then /"), lex).empty());
  const auto t = parse_transcript(fixture("example1.txt"));
  const auto samples = extract_backchannels(t, lex);
  CHECK(lexemes(samples) == std::vector<std::string>{"right", "mhm", "mhm"});
  CHECK(t.turns[samples.back().turn_index].receive());
}

TEST_CASE("contexts match hand-worked examples") {
  const auto t = parse_transcript(fixture("example1.txt"), "ex1");
  const auto samples = extract_backchannels(t, default_lexicon());
  REQUIRE(samples.size() == 3);
  CHECK(build_context(t, samples[0], 2) ==
        "<B> um i didn't quite catch the topic i mean i got the gist of it but um can you hear the topic of the day "
        "/ <A> okay basically um how has corporate scandals affected you or do you think um what is what is the "
        "affect of corporate scandals on america um do you believe it's responsible for the m the mild recession "
        "that we we been having lately mm / <B>");
  CHECK(build_context(t, samples[1], 2) ==
        "<A> okay basically um how has corporate scandals affected you or do you think um what is what is the "
        "affect of corporate scandals on america um do you believe it's responsible for the m the mild recession "
        "that we we been having lately mm / <B> right / <A>");
  CHECK(build_context(t, samples[2], 2) ==
        "<A> mhm mhm / <B> and and thereby um in my words uh duping people uh of their money uh uh pretty blatantly "
        "{ knowing } / <A> [");
}

TEST_CASE("context truncates at the transcript start") {
  const auto t = parse_transcript("<A> so / <B> yeah / <A> and then / <B> right /");
  const auto samples = extract_backchannels(t, default_lexicon());
  REQUIRE(samples.size() == 2);
  CHECK(build_context(t, samples[0], 10) == "<A> so / <B>");
  CHECK(build_context(t, samples[1], 100) == "<A> so / <B> yeah / <A> and then / <B>");
  CHECK(build_context(t, samples[1], 1) == "<A> and then / <B>");
}

TEST_CASE("context never ends with the backchannel word") {
  Rng rng(3);
  const auto lex = default_lexicon();
  for (int i = 0; i < 300; ++i) {
    const auto g = testing::random_transcript(rng);
    for (const auto& s : extract_backchannels(g.transcript, lex)) {
      for (std::size_t k = 1; k <= 4; ++k) {
        const auto ctx = build_context(g.transcript, s, k);
        const auto last = ctx.substr(ctx.rfind(' ') + 1);
        CHECK((last == "<A>" || last == "<B>" || last == "[" || last == "{"));
      }
    }
  }
}

TEST_CASE("split of ten dialogues") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("d" + std::to_string(i));
  const auto a = split_dialogues(ids, {}, 5);
  std::map<Split, int> counts;
  for (const auto& [id, s] : a) ++counts[s];
  CHECK(counts[Split::Train] == 8);
  CHECK(counts[Split::Val] == 1);
  CHECK(counts[Split::Test] == 1);
  CHECK(split_dialogues(ids, {}, 5) == a);
}

TEST_CASE("split leakage and proportions on 1000 dialogues") {
  std::vector<BackchannelSample> samples;
  for (int d = 0; d < 1000; ++d)
    for (int k = 0; k < 1 + d % 4; ++k) {
      BackchannelSample s;
      s.dialogue_id = "dlg" + std::to_string(d);
      s.id = s.dialogue_id + "_" + std::to_string(k);
      samples.push_back(s);
    }
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    auto copy = samples;
    const auto mapping = split_dataset(copy, {}, seed);
    std::map<Split, std::set<std::string>> members;
    for (const auto& s : copy) {
      REQUIRE(s.split);
      CHECK(*s.split == mapping.at(s.dialogue_id));
      members[*s.split].insert(s.dialogue_id);
    }
    for (auto x : {Split::Train, Split::Val, Split::Test})
      for (auto y : {Split::Train, Split::Val, Split::Test}) {
        if (x == y) continue;
        for (const auto& id : members[x]) CHECK_FALSE(members[y].contains(id));
      }
    CHECK(std::abs(members[Split::Train].size() / 1000.0 - 0.8) <= 0.02);
    CHECK(std::abs(members[Split::Val].size() / 1000.0 - 0.1) <= 0.02);
    CHECK(std::abs(members[Split::Test].size() / 1000.0 - 0.1) <= 0.02);
  }
}

TEST_CASE("split errors") {
  CHECK(kind_of([] { split_dialogues({"a", "b"}, {}, 0); }) == ErrorKind::InsufficientDialogues);
  CHECK(kind_of([] { split_dialogues({"a", "b", "c"}, {0.5, 0.1, 0.1}, 0); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("manifest round trip") {
  const auto t = parse_transcript(fixture("example2.txt"), "ex2");
  auto samples = extract_backchannels(t, default_lexicon());
  for (auto& s : samples) {
    s.context_text = build_context(t, s, 5);
    s.context_turns = 5;
  }
  samples[0].split = Split::Val;
  samples[0].prosody = ProsodicFeatures{3.25, 17};
  samples[0].bc_onset_s = 1.5;
  samples[0].bc_offset_s = 1.875;
  samples[1].audio_ref = "clip.wav";
  const auto path = std::filesystem::temp_directory_path() / "bcalign_manifest_test.jsonl";
  write_manifest(samples, path);
  CHECK(read_manifest(path) == samples);
  CHECK(read_text_file(path).rfind("{\"schema\":\"bc-sample/1\"}\n", 0) == 0);
  std::filesystem::remove(path);
  CHECK(kind_of([] { sample_from_json_line("{\"id\":3}"); }) == ErrorKind::BadSchema);
}
