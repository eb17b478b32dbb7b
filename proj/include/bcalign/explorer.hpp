#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "bcalign/contrastive.hpp"
#include "bcalign/corpus.hpp"
#include "bcalign/embed_io.hpp"
#include "bcalign/eval.hpp"

namespace bcalign::explorer {

using eval::AffectiveDim;

/// Fitted affective probes over backchannel embeddings, keyed by dimension.
struct ProbeSet {
  std::map<AffectiveDim, eval::RidgeProbe> probes;
  std::string model_hash;  // model the probes were fitted on
};

inline constexpr std::string_view kProbesFormat = "bc-probes/1";
std::string probes_to_json(const ProbeSet& probes);
ProbeSet probes_from_json(std::string_view text);
void save_probes(const ProbeSet& probes, const std::filesystem::path& path);
ProbeSet load_probes(const std::filesystem::path& path);

struct Point {
  std::string id;
  std::string lexeme;
  std::map<AffectiveDim, double> coords;
  std::int64_t duration_frames = 0;
  double pitch_range_st = 0.0;
  std::optional<std::string> audio_ref;

  bool operator==(const Point&) const = default;
};

struct Bundle {
  std::vector<Point> points;
  std::vector<AffectiveDim> axes;
  ProbeSet probes;  // provenance of the coordinates
  std::string model_hash;

  bool operator==(const Bundle& o) const {
    return points == o.points && axes == o.axes && model_hash == o.model_hash;
  }
};

inline constexpr std::string_view kBundleFormat = "bc-explorer/1";

/// FNV-1a 64-bit digest rendered as "fnv1a64:<16 hex digits>".
std::string content_hash(std::string_view bytes);

/// coords[d] = probe_d(Z_bc) for each sample; prosodic fields come from the
/// manifest.
Bundle export_explorer(const contrastive::ProjectionModel& model,
                       const std::vector<corpus::BackchannelSample>& manifest, const embed::FeatureStore& store,
                       const ProbeSet& probes, std::string model_hash = {});

/// Unique ids, finite coordinates, every point carrying every axis.
void validate(const Bundle& bundle);

std::string bundle_to_json(const Bundle& bundle);
Bundle bundle_from_json(std::string_view text);
void save_bundle(const Bundle& bundle, const std::filesystem::path& path);
Bundle load_bundle(const std::filesystem::path& path);

/// Rectangle on two axes. Membership is half-open, x in [xmin, xmax) and
/// y in [ymin, ymax), so adjacent rectangles never share a point. An empty
/// lexeme set means no filtering.
struct RegionQuery {
  AffectiveDim x_dim = AffectiveDim::Surprisal;
  AffectiveDim y_dim = AffectiveDim::Polarity;
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  std::set<std::string> lexemes;
};

struct RegionStats {
  std::size_t count = 0;
  std::optional<double> avg_duration_frames;
  std::optional<double> avg_pitch_range_st;
};

RegionStats region_stats(const Bundle& bundle, const RegionQuery& query);
std::string region_stats_json(const RegionStats& stats);

using QueryParams = std::multimap<std::string, std::string>;

/// Throws Error(InvalidArgument) on a missing, non-numeric or inverted
/// rectangle, or an unknown axis.
RegionQuery parse_region_query(const QueryParams& params);

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Read-only request handling over an immutable bundle snapshot.
class Service {
 public:
  explicit Service(Bundle bundle, std::optional<std::filesystem::path> audio_dir = std::nullopt);

  Response get(std::string_view path, const QueryParams& params) const;
  const Bundle& bundle() const { return bundle_; }

 private:
  Response audio(std::string_view id) const;

  Bundle bundle_;
  std::string points_json_;
  std::map<std::string, std::size_t> by_id_;
  std::optional<std::filesystem::path> audio_dir_;
};

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> static_dir;
};

/// Blocks serving /api/* (and static assets when configured).
void serve(const Service& service, const ServeOptions& options);

}  // namespace bcalign::explorer
