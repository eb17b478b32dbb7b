#include "bcalign/explorer.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "bcalign/error.hpp"
#include "json.hpp"

namespace bcalign::explorer {

namespace {

using Json = nlohmann::ordered_json;

Json probe_to_json(const eval::RidgeProbe& p) {
  return Json{{"weights", std::vector<double>(p.weights.data(), p.weights.data() + p.weights.size())},
              {"bias", p.bias},
              {"alpha", p.alpha}};
}

eval::RidgeProbe probe_from_json(const Json& j, AffectiveDim d) {
  eval::RidgeProbe p;
  const auto w = j.at("weights").get<std::vector<double>>();
  p.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  p.bias = j.at("bias").get<double>();
  p.alpha = j.value("alpha", eval::kProbeAlpha);
  p.target = std::string(eval::dim_name(d));
  return p;
}

Json probes_json(const ProbeSet& probes) {
  Json j;
  j["format"] = kProbesFormat;
  j["model_hash"] = probes.model_hash;
  Json p = Json::object();
  for (const auto& [d, probe] : probes.probes) p[std::string(eval::dim_name(d))] = probe_to_json(probe);
  j["probes"] = std::move(p);
  return j;
}

ProbeSet probes_from(const Json& j) {
  if (!j.is_object() || j.value("format", std::string()) != kProbesFormat) {
    throw Error(ErrorKind::VersionMismatch, "expected probes format " + std::string(kProbesFormat));
  }
  ProbeSet out;
  out.model_hash = j.value("model_hash", std::string());
  for (const auto& [name, value] : j.at("probes").items()) {
    const auto d = eval::parse_dim_name(name);
    out.probes.emplace(d, probe_from_json(value, d));
  }
  return out;
}

double parse_number(const QueryParams& params, const std::string& key) {
  const auto it = params.find(key);
  if (it == params.end()) throw Error(ErrorKind::InvalidArgument, "missing parameter '" + key + "'");
  const std::string& s = it->second;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || std::isnan(v)) {
    throw Error(ErrorKind::InvalidArgument, "parameter '" + key + "' is not a number: '" + s + "'");
  }
  return v;
}

AffectiveDim parse_axis(const QueryParams& params, const std::string& key) {
  const auto it = params.find(key);
  if (it == params.end()) throw Error(ErrorKind::InvalidArgument, "missing parameter '" + key + "'");
  return eval::parse_dim_name(it->second);
}

Response json_error(int status, const std::string& message) {
  return {status, Json{{"error", message}}.dump(), "application/json"};
}

}  // namespace

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string probes_to_json(const ProbeSet& probes) { return probes_json(probes).dump(); }

ProbeSet probes_from_json(std::string_view text) {
  try {
    return probes_from(Json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptFile, std::string("probes file: ") + e.what());
  }
}

void save_probes(const ProbeSet& probes, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << probes_to_json(probes) << '\n';
}

ProbeSet load_probes(const std::filesystem::path& path) { return probes_from_json(corpus::read_text_file(path)); }

Bundle export_explorer(const contrastive::ProjectionModel& model,
                       const std::vector<corpus::BackchannelSample>& manifest, const embed::FeatureStore& store,
                       const ProbeSet& probes, std::string model_hash) {
  if (probes.probes.empty()) throw Error(ErrorKind::MissingProbe, "no fitted probes supplied");
  Bundle bundle;
  bundle.probes = probes;
  bundle.model_hash = std::move(model_hash);
  for (const auto& [d, probe] : probes.probes) {
    if (probe.weights.size() != model.config.embed_dim) {
      throw Error(ErrorKind::DimensionMismatch, std::string(eval::dim_name(d)) + " probe does not match embedding size");
    }
    bundle.axes.push_back(d);
  }
  for (const auto& s : manifest) {
    const auto* bc = store.find(embed::FeatureKind::BcAudio, s.id);
    if (!bc) throw Error(ErrorKind::MissingFeature, "no bc_audio vector for '" + s.id + "'");
    if (!s.prosody) throw Error(ErrorKind::MissingFeature, "no prosodic features for '" + s.id + "'");
    const Eigen::VectorXd z = contrastive::encode_backchannel(model, *bc);
    Point p;
    p.id = s.id;
    p.lexeme = s.lexeme;
    for (const auto& [d, probe] : probes.probes) p.coords[d] = probe.predict(z);
    p.duration_frames = s.prosody->duration_voiced_frames;
    p.pitch_range_st = s.prosody->pitch_range_semitones;
    p.audio_ref = s.audio_ref;
    bundle.points.push_back(std::move(p));
  }
  validate(bundle);
  return bundle;
}

void validate(const Bundle& bundle) {
  std::set<std::string> seen;
  for (const auto& p : bundle.points) {
    if (!seen.insert(p.id).second) throw Error(ErrorKind::DuplicateId, "duplicate point id '" + p.id + "'");
    for (auto d : bundle.axes) {
      const auto it = p.coords.find(d);
      if (it == p.coords.end()) throw Error(ErrorKind::BadSchema, "point '" + p.id + "' lacks axis " + std::string(eval::dim_name(d)));
      if (!std::isfinite(it->second)) throw Error(ErrorKind::NonFiniteValue, "point '" + p.id + "' has a non-finite coordinate");
    }
    if (!std::isfinite(p.pitch_range_st)) throw Error(ErrorKind::NonFiniteValue, "point '" + p.id + "' pitch range");
  }
}

std::string bundle_to_json(const Bundle& bundle) {
  Json j;
  j["format"] = kBundleFormat;
  Json names = Json::array();
  for (auto d : bundle.axes) names.push_back(eval::dim_name(d));
  j["axes"] = {{"names", std::move(names)}, {"model_hash", bundle.model_hash}, {"probes", probes_json(bundle.probes)}};
  Json points = Json::array();
  for (const auto& p : bundle.points) {
    Json coords = Json::object();
    for (const auto& [d, v] : p.coords) coords[std::string(eval::dim_name(d))] = v;
    points.push_back({{"id", p.id},
                      {"lexeme", p.lexeme},
                      {"coords", std::move(coords)},
                      {"duration_frames", p.duration_frames},
                      {"pitch_range_st", p.pitch_range_st},
                      {"audio_ref", p.audio_ref ? Json(*p.audio_ref) : Json(nullptr)}});
  }
  j["points"] = std::move(points);
  return j.dump();
}

Bundle bundle_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptFile, std::string("bundle is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", std::string()) != kBundleFormat) {
    throw Error(ErrorKind::VersionMismatch, "expected bundle format " + std::string(kBundleFormat));
  }
  try {
    Bundle b;
    for (const auto& name : j.at("axes").at("names")) b.axes.push_back(eval::parse_dim_name(name.get<std::string>()));
    b.model_hash = j.at("axes").value("model_hash", std::string());
    if (j.at("axes").contains("probes")) b.probes = probes_from(j.at("axes").at("probes"));
    for (const auto& pj : j.at("points")) {
      Point p;
      p.id = pj.at("id").get<std::string>();
      p.lexeme = pj.at("lexeme").get<std::string>();
      for (const auto& [name, v] : pj.at("coords").items()) p.coords[eval::parse_dim_name(name)] = v.get<double>();
      p.duration_frames = pj.at("duration_frames").get<std::int64_t>();
      p.pitch_range_st = pj.at("pitch_range_st").get<double>();
      if (pj.contains("audio_ref") && !pj["audio_ref"].is_null()) p.audio_ref = pj["audio_ref"].get<std::string>();
      b.points.push_back(std::move(p));
    }
    validate(b);
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptFile, std::string("bundle: ") + e.what());
  }
}

void save_bundle(const Bundle& bundle, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << bundle_to_json(bundle) << '\n';
}

Bundle load_bundle(const std::filesystem::path& path) { return bundle_from_json(corpus::read_text_file(path)); }

RegionStats region_stats(const Bundle& bundle, const RegionQuery& q) {
  RegionStats out;
  double dur = 0.0, pitch = 0.0;
  for (const auto& p : bundle.points) {
    if (!q.lexemes.empty() && !q.lexemes.contains(p.lexeme)) continue;
    const auto x = p.coords.find(q.x_dim);
    const auto y = p.coords.find(q.y_dim);
    if (x == p.coords.end() || y == p.coords.end()) continue;
    if (!(x->second >= q.xmin && x->second < q.xmax && y->second >= q.ymin && y->second < q.ymax)) continue;
    ++out.count;
    dur += static_cast<double>(p.duration_frames);
    pitch += p.pitch_range_st;
  }
  if (out.count > 0) {
    out.avg_duration_frames = dur / static_cast<double>(out.count);
    out.avg_pitch_range_st = pitch / static_cast<double>(out.count);
  }
  return out;
}

std::string region_stats_json(const RegionStats& s) {
  Json j;
  j["count"] = s.count;
  j["avg_duration_frames"] = s.avg_duration_frames ? Json(*s.avg_duration_frames) : Json(nullptr);
  j["avg_pitch_range_st"] = s.avg_pitch_range_st ? Json(*s.avg_pitch_range_st) : Json(nullptr);
  return j.dump();
}

RegionQuery parse_region_query(const QueryParams& params) {
  RegionQuery q;
  q.x_dim = parse_axis(params, "xdim");
  q.y_dim = parse_axis(params, "ydim");
  if (q.x_dim == q.y_dim) throw Error(ErrorKind::InvalidArgument, "xdim and ydim must differ");
  q.xmin = parse_number(params, "xmin");
  q.xmax = parse_number(params, "xmax");
  q.ymin = parse_number(params, "ymin");
  q.ymax = parse_number(params, "ymax");
  if (q.xmin > q.xmax || q.ymin > q.ymax) throw Error(ErrorKind::InvalidArgument, "rectangle bounds must satisfy min <= max");
  const auto [lo, hi] = params.equal_range("lexeme");
  for (auto it = lo; it != hi; ++it) {
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) q.lexemes.insert(item);
  }
  return q;
}

Service::Service(Bundle bundle, std::optional<std::filesystem::path> audio_dir)
    : bundle_(std::move(bundle)), audio_dir_(std::move(audio_dir)) {
  validate(bundle_);
  points_json_ = bundle_to_json(bundle_);
  for (std::size_t i = 0; i < bundle_.points.size(); ++i) by_id_.emplace(bundle_.points[i].id, i);
}

Response Service::get(std::string_view path, const QueryParams& params) const {
  if (path == "/api/points") return {200, points_json_, "application/json"};
  if (path == "/api/region-stats") {
    try {
      return {200, region_stats_json(region_stats(bundle_, parse_region_query(params))), "application/json"};
    } catch (const Error& e) {
      return json_error(400, e.what());
    }
  }
  constexpr std::string_view kAudioPrefix = "/api/audio/";
  if (path.starts_with(kAudioPrefix)) return audio(path.substr(kAudioPrefix.size()));
  return json_error(404, "not found");
}

Response Service::audio(std::string_view id) const {
  const auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return json_error(404, "unknown point id");
  const auto& point = bundle_.points[it->second];
  if (!audio_dir_ || !point.audio_ref) return json_error(404, "no audio for this point");
  const std::filesystem::path ref(*point.audio_ref);
  const auto normal = ref.lexically_normal();
  if (ref.is_absolute() || normal.empty() || *normal.begin() == "..") return json_error(404, "no audio for this point");
  const auto file = *audio_dir_ / normal;
  std::ifstream in(file, std::ios::binary);
  if (!in) return json_error(404, "audio file missing");
  std::ostringstream ss;
  ss << in.rdbuf();
  return {200, ss.str(), "audio/wav"};
}

}  // namespace bcalign::explorer
