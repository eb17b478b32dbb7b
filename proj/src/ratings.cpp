#include "bcalign/ratings.hpp"

#include <algorithm>
#include <fstream>

#include "bcalign/error.hpp"
#include "json.hpp"

namespace bcalign::eval {

namespace {

using Json = nlohmann::ordered_json;

int checked_rating(const Json& v, const char* what) {
  if (!v.is_number_integer()) throw Error(ErrorKind::BadSchema, std::string(what) + " must be an integer");
  const int r = v.get<int>();
  if (r < 1 || r > 5) throw Error(ErrorKind::BadSchema, std::string(what) + " must be in 1..5");
  return r;
}

bool is_valid_pair(const TriadPair& p) {
  return p.first >= 1 && p.second <= 3 && p.first < p.second;
}

}  // namespace

std::string_view dim_name(AffectiveDim d) {
  switch (d) {
    case AffectiveDim::Energy: return "energy";
    case AffectiveDim::Polarity: return "polarity";
    case AffectiveDim::Surprisal: return "surprisal";
  }
  return "energy";
}

AffectiveDim parse_dim_name(std::string_view name) {
  for (auto d : kAffectiveDims)
    if (dim_name(d) == name) return d;
  throw Error(ErrorKind::InvalidArgument, "unknown affective dimension '" + std::string(name) + "'");
}

std::optional<int> RatingRecord::rating(AffectiveDim d) const {
  switch (d) {
    case AffectiveDim::Energy: return energy;
    case AffectiveDim::Polarity: return polarity;
    case AffectiveDim::Surprisal: return surprisal;
  }
  return std::nullopt;
}

const std::vector<int>& DimensionRatings::of(AffectiveDim d) const {
  switch (d) {
    case AffectiveDim::Energy: return energy;
    case AffectiveDim::Polarity: return polarity;
    case AffectiveDim::Surprisal: break;
  }
  return surprisal;
}

std::vector<int>& DimensionRatings::of(AffectiveDim d) {
  return const_cast<std::vector<int>&>(std::as_const(*this).of(d));
}

std::string rating_to_json_line(const RatingRecord& r) {
  Json j;
  j["bc_id"] = r.bc_id;
  j["rater_id"] = r.rater_id;
  for (auto d : kAffectiveDims) {
    if (auto v = r.rating(d)) j[std::string(dim_name(d))] = *v;
  }
  if (!r.match_scores.empty()) {
    Json m = Json::object();
    for (const auto& [id, score] : r.match_scores) m[id] = score;
    j["match_scores"] = std::move(m);
  }
  if (r.triad) {
    j["triad"] = {{"ids", r.triad->ids}, {"pick", {r.triad->pick.first, r.triad->pick.second}}};
  }
  return j.dump();
}

RatingRecord rating_from_json_line(std::string_view line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadSchema, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::BadSchema, "rating record must be an object");
  try {
    RatingRecord r;
    r.bc_id = j.value("bc_id", std::string());
    r.rater_id = j.value("rater_id", std::string());
    for (auto d : kAffectiveDims) {
      const std::string key(dim_name(d));
      if (auto it = j.find(key); it != j.end() && !it->is_null()) {
        const int v = checked_rating(*it, key.c_str());
        if (d == AffectiveDim::Energy) r.energy = v;
        if (d == AffectiveDim::Polarity) r.polarity = v;
        if (d == AffectiveDim::Surprisal) r.surprisal = v;
      }
    }
    if (auto it = j.find("match_scores"); it != j.end() && !it->is_null()) {
      if (!it->is_object()) throw Error(ErrorKind::BadSchema, "match_scores must be an object");
      for (const auto& [id, score] : it->items()) r.match_scores.emplace_back(id, checked_rating(score, "match score"));
    }
    if (auto it = j.find("triad"); it != j.end() && !it->is_null()) {
      const auto ids = it->at("ids").get<std::vector<std::string>>();
      const auto pick = it->at("pick").get<std::vector<int>>();
      if (ids.size() != 3 || pick.size() != 2) throw Error(ErrorKind::BadSchema, "triad needs 3 ids and a 2-element pick");
      TriadResponse t{{ids[0], ids[1], ids[2]}, {std::min(pick[0], pick[1]), std::max(pick[0], pick[1])}};
      if (!is_valid_pair(t.pick)) throw Error(ErrorKind::BadSchema, "triad pick must be two of positions 1..3");
      r.triad = std::move(t);
    }
    const bool affective = r.energy || r.polarity || r.surprisal;
    if ((affective || !r.match_scores.empty()) && r.bc_id.empty()) {
      throw Error(ErrorKind::BadSchema, "bc_id is required for affective and matching answers");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadSchema, std::string("rating record: ") + e.what());
  }
}

void write_ratings(const std::vector<RatingRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  for (const auto& r : records) out << rating_to_json_line(r) << '\n';
}

std::vector<RatingRecord> read_ratings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<RatingRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      out.push_back(rating_from_json_line(line));
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

AffectiveRatings collect_affective(const std::vector<RatingRecord>& records) {
  AffectiveRatings out;
  for (const auto& r : records) {
    if (!(r.energy || r.polarity || r.surprisal)) continue;
    auto& slot = out[r.bc_id];
    for (auto d : kAffectiveDims)
      if (auto v = r.rating(d)) slot.of(d).push_back(*v);
  }
  return out;
}

std::vector<TriadJudgment> collect_triads(const std::vector<RatingRecord>& records, double min_agreement) {
  std::map<std::array<std::string, 3>, std::map<TriadPair, int>> votes;
  std::vector<std::array<std::string, 3>> order;
  for (const auto& r : records) {
    if (!r.triad) continue;
    auto [it, inserted] = votes.try_emplace(r.triad->ids);
    if (inserted) order.push_back(r.triad->ids);
    ++it->second[r.triad->pick];
  }
  std::vector<TriadJudgment> out;
  for (const auto& ids : order) {
    const auto& tally = votes.at(ids);
    int total = 0;
    const std::pair<const TriadPair, int>* best = nullptr;
    for (const auto& entry : tally) {
      total += entry.second;
      if (!best || entry.second > best->second) best = &entry;
    }
    const double agreement = static_cast<double>(best->second) / total;
    if (agreement + 1e-12 < min_agreement) continue;
    out.push_back({ids, best->first, agreement});
  }
  return out;
}

std::vector<MatchingStimulus> collect_matching(const std::vector<RatingRecord>& records) {
  std::vector<MatchingStimulus> out;
  // A stimulus set is its ground truth plus the unordered candidate ids.
  std::map<std::pair<std::string, std::vector<std::string>>, std::size_t> index;
  for (const auto& r : records) {
    if (r.match_scores.empty()) continue;
    std::vector<std::string> key;
    for (const auto& [id, score] : r.match_scores) key.push_back(id);
    std::sort(key.begin(), key.end());
    auto [it, inserted] = index.try_emplace({r.bc_id, std::move(key)}, out.size());
    if (inserted) {
      MatchingStimulus m;
      m.ground_truth = r.bc_id;
      for (const auto& [id, score] : r.match_scores) m.candidates.push_back(id);
      m.scores.resize(m.candidates.size());
      out.push_back(std::move(m));
    }
    auto& m = out[it->second];
    for (const auto& [id, score] : r.match_scores) {
      const auto pos = std::find(m.candidates.begin(), m.candidates.end(), id);
      if (pos == m.candidates.end()) {
        throw Error(ErrorKind::BadSchema, "rater " + r.rater_id + " scored candidate '" + id +
                                              "' not in stimulus set of '" + r.bc_id + "'");
      }
      m.scores[static_cast<std::size_t>(pos - m.candidates.begin())].push_back(score);
    }
  }
  return out;
}

}  // namespace bcalign::eval
