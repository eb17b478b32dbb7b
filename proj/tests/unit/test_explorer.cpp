#include <cmath>
#include <filesystem>
#include <fstream>

#include "bcalign/contrastive.hpp"
#include "bcalign/explorer.hpp"
#include "bcalign/rng.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support/expect.hpp"
#include "support/generators.hpp"

using namespace bcalign;
using namespace bcalign::explorer;
using bcalign::testing::kind_of;
using eval::AffectiveDim;

namespace {

struct Fixture {
  contrastive::ProjectionModel model;
  std::vector<corpus::BackchannelSample> manifest;
  embed::FeatureStore store;
  ProbeSet probes;
};

Fixture small_fixture() {
  Fixture f;
  auto cfg = contrastive::default_config(contrastive::Modality::Audio);
  cfg.embed_dim = 64;
  f.model = contrastive::init_model(cfg, {0, 3}, 4);
  const std::vector<std::vector<double>> bc = {{1, 0, 2}, {-1, 1, 0.5}, {0.3, 0.3, -2}};
  const std::vector<std::string> lexemes = {"yeah", "mhm", "wow"};
  for (std::size_t i = 0; i < 3; ++i) {
    corpus::BackchannelSample s;
    s.id = "bc" + std::to_string(i);
    s.dialogue_id = "d";
    s.lexeme = lexemes[i];
    s.prosody = corpus::ProsodicFeatures{1.5 * static_cast<double>(i), static_cast<std::int64_t>(10 + i)};
    if (i != 1) s.audio_ref = s.id + ".wav";
    f.manifest.push_back(s);
    f.store.insert(embed::FeatureKind::BcAudio, s.id, bc[i]);
  }
  Rng rng(2);
  for (auto d : eval::kAffectiveDims) {
    eval::RidgeProbe p;
    p.weights = Eigen::VectorXd(64);
    for (Eigen::Index k = 0; k < 64; ++k) p.weights(k) = rng.normal();
    p.bias = 3.0 + static_cast<double>(static_cast<int>(d));
    p.target = std::string(eval::dim_name(d));
    f.probes.probes[d] = p;
  }
  return f;
}

QueryParams rect(double x0, double x1, double y0, double y1) {
  return {{"xdim", "surprisal"},       {"ydim", "polarity"},          {"xmin", std::to_string(x0)},
          {"xmax", std::to_string(x1)}, {"ymin", std::to_string(y0)}, {"ymax", std::to_string(y1)}};
}

RegionQuery query(double x0, double x1, double y0, double y1) { return parse_region_query(rect(x0, x1, y0, y1)); }

}  // namespace

TEST_CASE("export computes probe outputs on backchannel embeddings") {
  const auto f = small_fixture();
  const auto b = export_explorer(f.model, f.manifest, f.store, f.probes, "fnv1a64:1234");
  REQUIRE(b.points.size() == 3);
  CHECK(b.model_hash == "fnv1a64:1234");
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& p = b.points[i];
    // Head by hand: W x + b, normalised, then the linear probe.
    const auto& v = f.store.at(embed::FeatureKind::BcAudio, f.manifest[i].id);
    const auto& head = f.model.params.backchannel;
    std::vector<double> y(64, 0.0);
    double norm = 0.0;
    for (int r = 0; r < 64; ++r) {
      y[r] = head.bias(r);
      for (int c = 0; c < 3; ++c) y[r] += head.weight(r, c) * v[c];
      norm += y[r] * y[r];
    }
    norm = std::sqrt(norm);
    for (auto d : eval::kAffectiveDims) {
      const auto& probe = f.probes.probes.at(d);
      double expected = probe.bias;
      for (int r = 0; r < 64; ++r) expected += probe.weights(r) * y[r] / norm;
      CHECK(p.coords.at(d) == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK(p.lexeme == f.manifest[i].lexeme);
    CHECK(p.duration_frames == f.manifest[i].prosody->duration_voiced_frames);
    CHECK(p.pitch_range_st == f.manifest[i].prosody->pitch_range_semitones);
    CHECK(p.audio_ref == f.manifest[i].audio_ref);
  }
  CHECK_NOTHROW(validate(b));
  CHECK(export_explorer(f.model, {}, f.store, f.probes).points.empty());
}

TEST_CASE("export errors") {
  auto f = small_fixture();
  CHECK(kind_of([&] { export_explorer(f.model, f.manifest, f.store, ProbeSet{}); }) == ErrorKind::MissingProbe);
  auto wrong = f.probes;
  wrong.probes.begin()->second.weights = Eigen::VectorXd::Zero(5);
  CHECK(kind_of([&] { export_explorer(f.model, f.manifest, f.store, wrong); }) == ErrorKind::DimensionMismatch);
  auto no_prosody = f.manifest;
  no_prosody[1].prosody.reset();
  CHECK(kind_of([&] { export_explorer(f.model, no_prosody, f.store, f.probes); }) == ErrorKind::MissingFeature);
  auto extra = f.manifest;
  extra.push_back(extra[0]);
  extra.back().id = "ghost";
  CHECK(kind_of([&] { export_explorer(f.model, extra, f.store, f.probes); }) == ErrorKind::MissingFeature);
}

TEST_CASE("content hash") {
  CHECK(content_hash("") == "fnv1a64:cbf29ce484222325");
  CHECK(content_hash("a") == "fnv1a64:af63dc4c8601ec8c");
  CHECK(content_hash("model") == content_hash("model"));
  CHECK(content_hash("model") != content_hash("modem"));
}

TEST_CASE("bundle and probe files round trip") {
  const auto f = small_fixture();
  const auto b = export_explorer(f.model, f.manifest, f.store, f.probes, "fnv1a64:abcd");
  const auto back = bundle_from_json(bundle_to_json(b));
  CHECK(back == b);
  CHECK(bundle_to_json(back) == bundle_to_json(b));

  const auto dir = std::filesystem::temp_directory_path() / "bcalign_explorer_test";
  std::filesystem::create_directories(dir);
  save_probes(f.probes, dir / "probes.json");
  const auto p = load_probes(dir / "probes.json");
  REQUIRE(p.probes.size() == 3);
  for (auto d : eval::kAffectiveDims) {
    CHECK(p.probes.at(d).weights == f.probes.probes.at(d).weights);
    CHECK(p.probes.at(d).bias == f.probes.probes.at(d).bias);
  }
  save_bundle(b, dir / "bundle.json");
  CHECK(load_bundle(dir / "bundle.json") == b);
  std::filesystem::remove_all(dir);

  CHECK(kind_of([] { bundle_from_json("{"); }) == ErrorKind::CorruptFile);
  CHECK(kind_of([] { bundle_from_json(R"({"format":"bc-explorer/0"})"); }) == ErrorKind::VersionMismatch);
  CHECK(kind_of([] { probes_from_json(R"({"format":"other"})"); }) == ErrorKind::VersionMismatch);
}

TEST_CASE("bundle validation") {
  Rng rng(1);
  auto b = testing::random_bundle(rng, 5);
  CHECK_NOTHROW(validate(b));
  auto dup = b;
  dup.points[1].id = dup.points[0].id;
  CHECK(kind_of([&] { validate(dup); }) == ErrorKind::DuplicateId);
  auto missing = b;
  missing.points[2].coords.erase(AffectiveDim::Energy);
  CHECK(kind_of([&] { validate(missing); }) == ErrorKind::BadSchema);
  auto nan = b;
  nan.points[3].coords[AffectiveDim::Polarity] = std::nan("");
  CHECK(kind_of([&] { validate(nan); }) == ErrorKind::NonFiniteValue);
}

TEST_CASE("region statistics") {
  Bundle b;
  b.axes = {AffectiveDim::Energy, AffectiveDim::Polarity, AffectiveDim::Surprisal};
  const auto add = [&](std::string id, std::string lex, double x, double y, std::int64_t dur, double range) {
    Point p{std::move(id), std::move(lex), {}, dur, range, std::nullopt};
    p.coords = {{AffectiveDim::Energy, 0.0}, {AffectiveDim::Polarity, y}, {AffectiveDim::Surprisal, x}};
    b.points.push_back(p);
  };
  add("a", "yeah", 1.0, 1.0, 10, 2.0);
  add("b", "yeah", 2.0, 2.0, 20, 4.0);
  add("c", "mhm", 3.0, 3.0, 30, 6.0);

  const auto all = region_stats(b, query(0, 10, 0, 10));
  CHECK(all.count == 3);
  CHECK(*all.avg_duration_frames == doctest::Approx(20.0));
  CHECK(*all.avg_pitch_range_st == doctest::Approx(4.0));

  // Half-open: the upper edge is excluded, the lower edge included.
  CHECK(region_stats(b, query(1, 3, 1, 3)).count == 2);
  CHECK(region_stats(b, query(3, 4, 3, 4)).count == 1);

  const auto none = region_stats(b, query(5, 6, 5, 6));
  CHECK(none.count == 0);
  CHECK_FALSE(none.avg_duration_frames.has_value());
  CHECK(region_stats_json(none) == R"({"count":0,"avg_duration_frames":null,"avg_pitch_range_st":null})");

  auto q = query(0, 10, 0, 10);
  q.lexemes = {"mhm"};
  const auto only = region_stats(b, q);
  CHECK(only.count == 1);
  CHECK(*only.avg_duration_frames == 30.0);
}

TEST_CASE("region statistics agree with an offline filter") {
  Rng rng(7);
  const auto b = testing::random_bundle(rng, 500);
  for (int t = 0; t < 200; ++t) {
    double x0 = 1.0 + 0.25 * static_cast<double>(rng.below(17)), x1 = 1.0 + 0.25 * static_cast<double>(rng.below(17));
    double y0 = rng.uniform(0.5, 5.5), y1 = rng.uniform(0.5, 5.5);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    RegionQuery q;
    q.x_dim = AffectiveDim::Energy;
    q.y_dim = AffectiveDim::Surprisal;
    q.xmin = x0, q.xmax = x1, q.ymin = y0, q.ymax = y1;
    if (t % 3 == 0) q.lexemes = {"yeah", "wow"};
    std::size_t n = 0;
    double dur = 0.0, range = 0.0;
    for (const auto& p : b.points) {
      const double x = p.coords.at(q.x_dim), y = p.coords.at(q.y_dim);
      if (!q.lexemes.empty() && !q.lexemes.contains(p.lexeme)) continue;
      if (x < x0 || x >= x1 || y < y0 || y >= y1) continue;
      ++n;
      dur += static_cast<double>(p.duration_frames);
      range += p.pitch_range_st;
    }
    const auto s = region_stats(b, q);
    CHECK(s.count == n);
    if (n) {
      CHECK(*s.avg_duration_frames == doctest::Approx(dur / static_cast<double>(n)).epsilon(1e-12));
      CHECK(*s.avg_pitch_range_st == doctest::Approx(range / static_cast<double>(n)).epsilon(1e-12));
    }
  }
}

TEST_CASE("disjoint rectangles partition the bundle") {
  Rng rng(8);
  const auto b = testing::random_bundle(rng, 500);
  // Cuts on the coordinate grid put points exactly on shared edges.
  const std::vector<double> xs = {0.0, 1.5, 2.25, 3.0, 4.0, 6.0}, ys = {0.0, 2.0, 2.5, 3.75, 6.0};
  std::size_t count = 0;
  double dur = 0.0, range = 0.0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i)
    for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
      RegionQuery q;
      q.x_dim = AffectiveDim::Polarity;
      q.y_dim = AffectiveDim::Energy;
      q.xmin = xs[i], q.xmax = xs[i + 1], q.ymin = ys[j], q.ymax = ys[j + 1];
      const auto s = region_stats(b, q);
      count += s.count;
      if (s.count) {
        dur += *s.avg_duration_frames * static_cast<double>(s.count);
        range += *s.avg_pitch_range_st * static_cast<double>(s.count);
      }
    }
  RegionQuery whole;
  whole.x_dim = AffectiveDim::Polarity;
  whole.y_dim = AffectiveDim::Energy;
  whole.xmin = 0, whole.xmax = 6, whole.ymin = 0, whole.ymax = 6;
  const auto all = region_stats(b, whole);
  CHECK(count == 500);
  CHECK(all.count == 500);
  CHECK(std::abs(dur / 500.0 - *all.avg_duration_frames) < 1e-9);
  CHECK(std::abs(range / 500.0 - *all.avg_pitch_range_st) < 1e-9);
}

TEST_CASE("query parsing") {
  const auto q = parse_region_query(rect(1, 2, 3, 4));
  CHECK(q.x_dim == AffectiveDim::Surprisal);
  CHECK(q.y_dim == AffectiveDim::Polarity);
  CHECK(q.xmin == 1.0);
  CHECK(q.ymax == 4.0);
  CHECK(q.lexemes.empty());

  auto p = rect(1, 2, 3, 4);
  p.emplace("lexeme", "yeah,mhm");
  p.emplace("lexeme", "wow");
  CHECK(parse_region_query(p).lexemes == std::set<std::string>{"yeah", "mhm", "wow"});

  const auto fails = [](QueryParams params) { return kind_of([&] { parse_region_query(params); }); };
  auto no_x = rect(1, 2, 3, 4);
  no_x.erase("xmin");
  CHECK(fails(no_x) == ErrorKind::InvalidArgument);
  CHECK(fails(rect(2, 1, 3, 4)) == ErrorKind::InvalidArgument);
  CHECK(fails(rect(1, 2, 4, 3)) == ErrorKind::InvalidArgument);
  auto junk = rect(1, 2, 3, 4);
  junk.find("ymin")->second = "3abc";
  CHECK(fails(junk) == ErrorKind::InvalidArgument);
  junk.find("ymin")->second = "nan";
  CHECK(fails(junk) == ErrorKind::InvalidArgument);
  auto same = rect(1, 2, 3, 4);
  same.find("ydim")->second = "surprisal";
  CHECK(fails(same) == ErrorKind::InvalidArgument);
  auto axis = rect(1, 2, 3, 4);
  axis.find("xdim")->second = "valence";
  CHECK(fails(axis) == ErrorKind::InvalidArgument);
}

TEST_CASE("service routes") {
  const auto f = small_fixture();
  const auto b = export_explorer(f.model, f.manifest, f.store, f.probes);
  const auto dir = std::filesystem::temp_directory_path() / "bcalign_service_test";
  std::filesystem::create_directories(dir / "audio");
  { std::ofstream(dir / "audio" / "bc0.wav", std::ios::binary) << "RIFF-fake"; }
  { std::ofstream(dir / "secret.txt") << "secret"; }

  auto traversal = b;
  traversal.points[2].audio_ref = "../secret.txt";
  const Service svc(traversal, dir / "audio");

  const auto points = svc.get("/api/points", {});
  CHECK(points.status == 200);
  CHECK(points.content_type == "application/json");
  CHECK(bundle_from_json(points.body) == traversal);

  const auto stats = svc.get("/api/region-stats", rect(-100, 100, -100, 100));
  CHECK(stats.status == 200);
  CHECK(nlohmann::json::parse(stats.body).at("count") == 3);

  const auto bad = svc.get("/api/region-stats", rect(2, 1, 0, 1));
  CHECK(bad.status == 400);
  CHECK(nlohmann::json::parse(bad.body).contains("error"));

  const auto wav = svc.get("/api/audio/bc0", {});
  CHECK(wav.status == 200);
  CHECK(wav.content_type == "audio/wav");
  CHECK(wav.body == "RIFF-fake");
  CHECK(svc.get("/api/audio/bc1", {}).status == 404);      // no audio_ref
  CHECK(svc.get("/api/audio/bc2", {}).status == 404);      // escapes the audio directory
  CHECK(svc.get("/api/audio/missing", {}).status == 404);
  CHECK(svc.get("/api/nothing", {}).status == 404);
  CHECK(Service(b).get("/api/audio/bc0", {}).status == 404);  // no audio directory
  std::filesystem::remove_all(dir);
}
