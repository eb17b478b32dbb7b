// bcalign: command-line entry points for corpus preparation, training,
// evaluation, probing and the explorer service.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bcalign/contrastive.hpp"
#include "bcalign/corpus.hpp"
#include "bcalign/embed_io.hpp"
#include "bcalign/error.hpp"
#include "bcalign/eval.hpp"
#include "bcalign/explorer.hpp"
#include "bcalign/ngram_lm.hpp"
#include "bcalign/prosody.hpp"
#include "bcalign/ratings.hpp"
#include "bcalign/rng.hpp"
#include "bcalign/wav.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using namespace bcalign;

namespace {

constexpr std::string_view kConfigFormat = "bc-config/1";

struct Settings {
  std::uint64_t seed = 0;
  corpus::Lexicon lexicon = corpus::default_lexicon();
  std::size_t context_turns = 5;
  corpus::SplitRatios ratios;
  contrastive::ModelConfig model = contrastive::default_config(contrastive::Modality::AudioText);
  embed::SynthConfig synth;
  int lm_order = 3;
  std::vector<std::size_t> lm_turns = {1, 3, 5};
  bool arithmetic_mean = false;
  std::vector<double> k_percent = {1.0, 5.0, 10.0};
  std::optional<std::size_t> pool_size;
  double probe_alpha = eval::kProbeAlpha;
  double probe_train_fraction = 0.5;
};

Json settings_to_json(const Settings& s) {
  Json j;
  j["format"] = kConfigFormat;
  j["seed"] = s.seed;
  j["lexicon"] = s.lexicon;
  j["context_turns"] = s.context_turns;
  j["split"] = {{"train", s.ratios.train}, {"val", s.ratios.val}, {"test", s.ratios.test}};
  const auto& m = s.model;
  j["model"] = {{"modality", contrastive::modality_name(m.modality)},
                {"n_layers", m.n_layers},
                {"embed_dim", m.embed_dim},
                {"batch_size", m.batch_size},
                {"temperature", m.temperature},
                {"max_epochs", m.max_epochs},
                {"learning_rate", m.learning_rate},
                {"unsafe_grid", m.unsafe_grid}};
  const auto& y = s.synth;
  j["synth"] = {{"n_pairs", y.n_pairs},         {"latent_dim", y.latent_dim},
                {"text_dim", y.text_dim},       {"audio_dim", y.audio_dim},
                {"noise_sigma", y.noise_sigma}, {"pairs_per_dialogue", y.pairs_per_dialogue},
                {"raters", y.raters},           {"n_triads", y.n_triads},
                {"n_matching", y.n_matching}};
  j["lm"] = {{"order", s.lm_order}, {"turns", s.lm_turns}, {"mean", s.arithmetic_mean ? "arithmetic" : "geometric"}};
  j["eval"] = {{"k_percent", s.k_percent}, {"pool_size", s.pool_size ? Json(*s.pool_size) : Json(nullptr)}};
  j["probe"] = {{"alpha", s.probe_alpha}, {"train_fraction", s.probe_train_fraction}};
  return j;
}

template <typename T>
void take(const Json& j, const char* key, T& out) {
  if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

void apply_config_file(Settings& s, const fs::path& path) {
  Json j;
  try {
    j = Json::parse(corpus::read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
  if (!j.is_object() || j.value("format", std::string()) != kConfigFormat) {
    throw Error(ErrorKind::VersionMismatch, path.string() + ": expected format " + std::string(kConfigFormat));
  }
  try {
    take(j, "seed", s.seed);
    take(j, "lexicon", s.lexicon);
    take(j, "context_turns", s.context_turns);
    if (j.contains("split")) {
      take(j["split"], "train", s.ratios.train);
      take(j["split"], "val", s.ratios.val);
      take(j["split"], "test", s.ratios.test);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      if (m.contains("modality")) {
        s.model = contrastive::default_config(contrastive::parse_modality(m["modality"].get<std::string>()));
      }
      take(m, "n_layers", s.model.n_layers);
      take(m, "embed_dim", s.model.embed_dim);
      take(m, "batch_size", s.model.batch_size);
      take(m, "temperature", s.model.temperature);
      take(m, "max_epochs", s.model.max_epochs);
      take(m, "learning_rate", s.model.learning_rate);
      take(m, "unsafe_grid", s.model.unsafe_grid);
    }
    if (j.contains("synth")) {
      const auto& y = j["synth"];
      take(y, "n_pairs", s.synth.n_pairs);
      take(y, "latent_dim", s.synth.latent_dim);
      take(y, "text_dim", s.synth.text_dim);
      take(y, "audio_dim", s.synth.audio_dim);
      take(y, "noise_sigma", s.synth.noise_sigma);
      take(y, "pairs_per_dialogue", s.synth.pairs_per_dialogue);
      take(y, "raters", s.synth.raters);
      take(y, "n_triads", s.synth.n_triads);
      take(y, "n_matching", s.synth.n_matching);
    }
    if (j.contains("lm")) {
      take(j["lm"], "order", s.lm_order);
      take(j["lm"], "turns", s.lm_turns);
      if (j["lm"].contains("mean")) s.arithmetic_mean = j["lm"]["mean"].get<std::string>() == "arithmetic";
    }
    if (j.contains("eval")) {
      take(j["eval"], "k_percent", s.k_percent);
      if (j["eval"].contains("pool_size") && !j["eval"]["pool_size"].is_null()) {
        s.pool_size = j["eval"]["pool_size"].get<std::size_t>();
      }
    }
    if (j.contains("probe")) {
      take(j["probe"], "alpha", s.probe_alpha);
      take(j["probe"], "train_fraction", s.probe_train_fraction);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

std::string fmt(double v, int digits = 4) {
  if (!std::isfinite(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pct(double v) { return fmt(100.0 * v, 1); }

std::string markdown_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    out << '|';
    for (const auto& c : cells) out << ' ' << c << " |";
    out << '\n';
  };
  line(header);
  out << '|';
  for (std::size_t i = 0; i < header.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& r : rows) line(r);
  return out.str();
}

std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs, const std::string& extension) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == extension) found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      out.push_back(p);
    } else {
      throw Error(ErrorKind::IoError, "no such file or directory: " + in);
    }
  }
  return out;
}

std::map<std::string, corpus::Transcript> load_transcripts(const std::vector<std::string>& inputs,
                                                           std::vector<std::string>& warnings) {
  std::map<std::string, corpus::Transcript> out;
  for (const auto& path : expand_inputs(inputs, ".txt")) {
    const std::string id = path.stem().string();
    auto t = corpus::parse_transcript(corpus::read_text_file(path), id, &warnings);
    if (!out.emplace(id, std::move(t)).second) throw Error(ErrorKind::DuplicateId, "transcript id '" + id + "'");
  }
  return out;
}

void emit(bool json, const Json& report, const std::string& markdown) {
  if (json) {
    std::cout << report.dump(2) << '\n';
  } else {
    std::cout << markdown;
  }
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

Eigen::MatrixXd stack_rows(const std::vector<Eigen::VectorXd>& rows) {
  if (rows.empty()) return {};
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return X;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// ---- commands ----

struct FormatArgs {
  std::vector<std::string> inputs;
  bool check = false;
};

int cmd_format(const Settings&, const FormatArgs& a, bool json) {
  std::vector<std::string> warnings;
  Json report = Json::array();
  std::string text;
  int status = 0;
  for (const auto& path : expand_inputs(a.inputs, ".txt")) {
    const std::string raw = corpus::read_text_file(path);
    const auto t = corpus::parse_transcript(raw, path.stem().string(), &warnings);
    const std::string formatted = corpus::format_transcript(t);
    const bool identical = formatted == corpus::normalize_whitespace(raw);
    if (a.check && !identical) status = 1;
    Json turns = Json::array();
    for (const auto& turn : t.turns) {
      Json spans = Json::array();
      for (const auto& s : turn.overlaps) {
        spans.push_back({{"start", s.start}, {"end", s.end}, {"kind", s.kind == corpus::OverlapKind::Carry ? "carry" : "receive"}});
      }
      turns.push_back({{"speaker", corpus::speaker_name(turn.speaker)}, {"tokens", turn.tokens}, {"overlaps", spans}});
    }
    report.push_back({{"source_id", t.source_id}, {"formatted", formatted}, {"round_trip", identical}, {"turns", turns}});
    if (a.check) {
      text += path.string() + (identical ? ": ok\n" : ": differs from its normalized form\n");
    } else {
      text += formatted + "\n";
    }
  }
  print_warnings(warnings);
  emit(json, report, text);
  return status;
}

struct ExtractArgs {
  std::vector<std::string> inputs;
  std::string out;
  std::optional<std::size_t> turns;
  std::string audio_dir;
  bool no_split = false;
};

int cmd_extract(const Settings& s, const ExtractArgs& a, bool json) {
  std::vector<std::string> warnings;
  const auto transcripts = load_transcripts(a.inputs, warnings);
  const std::size_t k = a.turns.value_or(s.context_turns);
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "--turns must be at least 1");
  std::vector<corpus::BackchannelSample> samples;
  for (const auto& [id, t] : transcripts) {
    for (auto& sample : corpus::extract_backchannels(t, s.lexicon)) {
      sample.context_text = corpus::build_context(t, sample, k);
      sample.context_turns = k;
      if (!a.audio_dir.empty()) {
        const fs::path wav_path = fs::path(a.audio_dir) / (sample.id + ".wav");
        if (fs::exists(wav_path)) {
          const auto audio = wav::read_wav(wav_path);
          sample.prosody = prosody::compute_features(prosody::estimate_f0(audio.samples, audio.sample_rate));
          sample.audio_ref = wav_path.filename().string();
        }
      }
      samples.push_back(std::move(sample));
    }
  }
  if (!a.no_split) corpus::split_dataset(samples, s.ratios, s.seed);
  if (a.out.empty()) {
    std::cout << Json{{"schema", corpus::kManifestSchema}}.dump() << '\n';
    for (const auto& sample : samples) std::cout << corpus::sample_to_json_line(sample) << '\n';
  } else {
    corpus::write_manifest(samples, a.out);
    std::map<std::string, std::size_t> per_lexeme;
    for (const auto& sample : samples) ++per_lexeme[sample.lexeme];
    Json report{{"transcripts", transcripts.size()}, {"samples", samples.size()}, {"per_lexeme", per_lexeme}, {"out", a.out}};
    std::vector<std::vector<std::string>> rows;
    for (const auto& [lex, n] : per_lexeme) rows.push_back({lex, std::to_string(n)});
    emit(json, report,
         std::to_string(samples.size()) + " backchannels from " + std::to_string(transcripts.size()) +
             " transcripts written to " + a.out + "\n\n" + markdown_table({"lexeme", "count"}, rows));
  }
  print_warnings(warnings);
  return 0;
}

struct SynthArgs {
  std::string out_dir;
  std::optional<std::size_t> n_pairs, latent_dim, text_dim, audio_dim;
  std::optional<double> noise;
  bool tones = false;
  std::size_t dependency_dialogues = 0;
  std::size_t dependency_episodes = 20;
};

void write_tones(std::vector<corpus::BackchannelSample>& manifest, const fs::path& dir) {
  constexpr double kSampleRate = 16000.0;
  constexpr double kBaseHz = 150.0;
  fs::create_directories(dir);
  for (auto& s : manifest) {
    if (!s.prosody) continue;
    const double seconds = std::max(0.05, 0.01 * static_cast<double>(s.prosody->duration_voiced_frames));
    const double end_hz = std::min(prosody::kMaxF0Hz, kBaseHz * std::exp2(s.prosody->pitch_range_semitones / 12.0));
    const auto samples = wav::synthesize_glide(kBaseHz, end_hz, seconds, kSampleRate);
    const std::string name = s.id + ".wav";
    wav::write_wav(dir / name, samples, kSampleRate);
    s.audio_ref = name;
  }
}

int cmd_synth(Settings s, const SynthArgs& a, bool json) {
  auto& cfg = s.synth;
  cfg.seed = s.seed;
  cfg.ratios = s.ratios;
  if (a.n_pairs) cfg.n_pairs = *a.n_pairs;
  if (a.latent_dim) cfg.latent_dim = *a.latent_dim;
  if (a.text_dim) cfg.text_dim = *a.text_dim;
  if (a.audio_dim) cfg.audio_dim = *a.audio_dim;
  if (a.noise) cfg.noise_sigma = *a.noise;
  auto data = embed::generate_synthetic(cfg);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  if (a.tones) write_tones(data.manifest, dir / "audio");
  corpus::write_manifest(data.manifest, dir / "manifest.jsonl");
  embed::write_vectors(data.store, dir / "vectors.jsonl");
  eval::write_ratings(data.ratings, dir / "ratings.jsonl");
  Json report{{"out_dir", a.out_dir},
              {"samples", data.manifest.size()},
              {"vectors", data.store.size()},
              {"ratings", data.ratings.size()},
              {"tones", a.tones}};
  if (a.dependency_dialogues > 0) {
    const auto corpus_out = lm::long_dependency_corpus(a.dependency_dialogues, a.dependency_episodes, s.seed);
    fs::create_directories(dir / "transcripts");
    for (const auto& t : corpus_out) {
      std::ofstream f(dir / "transcripts" / (t.source_id + ".txt"));
      if (!f) throw Error(ErrorKind::IoError, "cannot write transcript " + t.source_id);
      f << corpus::format_transcript(t) << '\n';
    }
    report["dependency_transcripts"] = corpus_out.size();
  }
  emit(json, report,
       "wrote " + std::to_string(data.manifest.size()) + " samples, " + std::to_string(data.store.size()) +
           " vectors and " + std::to_string(data.ratings.size()) + " rating records to " + a.out_dir + "\n");
  return 0;
}

struct TrainArgs {
  std::string manifest, vectors, out, history;
  std::optional<std::string> modality;
  std::optional<int> layers, embed_dim, batch_size, epochs;
  std::optional<double> lr;
  bool unsafe_grid = false;
};

contrastive::ModelConfig resolve_model(const Settings& s, const TrainArgs& a) {
  auto cfg = s.model;
  if (a.modality) {
    const auto m = contrastive::parse_modality(*a.modality);
    if (m != cfg.modality) {
      const auto d = contrastive::default_config(m);
      cfg.modality = m;
      cfg.n_layers = d.n_layers;
      cfg.embed_dim = d.embed_dim;
      cfg.batch_size = d.batch_size;
    }
  }
  if (a.layers) cfg.n_layers = *a.layers;
  if (a.embed_dim) cfg.embed_dim = *a.embed_dim;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.epochs) cfg.max_epochs = *a.epochs;
  if (a.lr) cfg.learning_rate = *a.lr;
  if (a.unsafe_grid) cfg.unsafe_grid = true;
  cfg.seed = s.seed;
  return cfg;
}

int cmd_train(const Settings& s, const TrainArgs& a, bool json) {
  const auto cfg = resolve_model(s, a);
  cfg.validate();
  const auto manifest = corpus::read_manifest(a.manifest);
  const auto store = embed::read_vectors(fs::path(a.vectors));
  const auto result = contrastive::train(cfg, manifest, store);
  contrastive::save_model(result.model, a.out);
  if (!a.history.empty()) {
    std::ofstream h(a.history);
    if (!h) throw Error(ErrorKind::IoError, "cannot write " + a.history);
    h << contrastive::history_csv(result.history);
  }
  print_warnings(result.warnings);
  Json history = Json::array();
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : result.history) {
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_top10", e.val_topk}});
    rows.push_back({std::to_string(e.epoch), fmt(e.train_loss), pct(e.val_topk)});
  }
  Json report{{"model", a.out}, {"best_epoch", result.best_epoch}, {"history", history}, {"warnings", result.warnings}};
  emit(json, report,
       markdown_table({"epoch", "train loss", "val top-10%"}, rows) + "\nbest epoch " +
           std::to_string(result.best_epoch) + ", model written to " + a.out + "\n");
  return 0;
}

struct EvalArgs {
  std::string model, manifest, vectors, ratings;
  std::string split = "test";
  std::optional<std::size_t> pool_size;
};

std::map<std::string, Eigen::VectorXd> backchannel_embeddings(const contrastive::ProjectionModel& model,
                                                              const embed::FeatureStore& store,
                                                              const std::set<std::string>& ids, bool raw) {
  std::map<std::string, Eigen::VectorXd> out;
  for (const auto& id : ids) {
    const auto& v = store.at(embed::FeatureKind::BcAudio, id);
    out.emplace(id, raw ? to_vector(v) : contrastive::encode_backchannel(model, v));
  }
  return out;
}

int cmd_eval(const Settings& s, const EvalArgs& a, bool json) {
  const auto model = contrastive::load_model(a.model);
  const auto manifest = corpus::read_manifest(a.manifest);
  const auto store = embed::read_vectors(fs::path(a.vectors));
  const auto split = corpus::parse_split_name(a.split);
  const auto pool_size = a.pool_size ? a.pool_size : s.pool_size;

  const auto data = contrastive::gather(manifest, store, model.config.modality, split);
  if (data.ids.empty()) throw Error(ErrorKind::EmptySplit, "no " + a.split + " samples");
  const Eigen::MatrixXd zc = contrastive::encode_contexts(model, data.features);
  const Eigen::MatrixXd zb = contrastive::encode_backchannels(model, data.features.bc_audio);

  Json report;
  report["split"] = a.split;
  report["pairs"] = data.ids.size();
  report["modality"] = contrastive::modality_name(model.config.modality);
  report["pool_size"] = pool_size ? Json(*pool_size) : Json(nullptr);
  Json retrieval = Json::array();
  std::vector<std::vector<std::string>> rrows;
  std::vector<std::string> rheader = {"model"};
  std::vector<std::string> model_row = {std::string(contrastive::modality_name(model.config.modality))};
  std::vector<std::string> random_row = {"random"};
  for (double k : s.k_percent) {
    const double acc = pool_size ? eval::topk_percent_accuracy_pooled(zc, zb, k, *pool_size)
                                 : eval::topk_percent_accuracy(zc, zb, k);
    retrieval.push_back({{"k_percent", k}, {"accuracy", acc}, {"random", k / 100.0}});
    rheader.push_back("top-" + fmt(k, 0) + "%");
    model_row.push_back(pct(acc));
    random_row.push_back(fmt(k, 1));
  }
  rrows.push_back(model_row);
  rrows.push_back(random_row);
  report["retrieval"] = retrieval;
  std::string md = "## Retrieval (" + a.split + ", " + std::to_string(data.ids.size()) + " pairs)\n\n" +
                   markdown_table(rheader, rrows);

  if (!a.ratings.empty()) {
    const auto records = eval::read_ratings(a.ratings);
    const auto triads = eval::collect_triads(records);
    if (!triads.empty()) {
      std::set<std::string> ids;
      for (const auto& t : triads) ids.insert(t.ids.begin(), t.ids.end());
      const double joint = eval::triadic_agreement(backchannel_embeddings(model, store, ids, false), triads);
      const double raw = eval::triadic_agreement(backchannel_embeddings(model, store, ids, true), triads);
      report["triadic"] = {{"triads", triads.size()}, {"joint", joint}, {"raw_features", raw}, {"random", 1.0 / 3.0}};
      md += "\n## Triadic similarity (" + std::to_string(triads.size()) + " triads, agreement >= 80%)\n\n" +
            markdown_table({"representation", "correct %"},
                           {{"joint embedding", pct(joint)}, {"raw bc_audio", pct(raw)}, {"random", pct(1.0 / 3.0)}});
    }
    const auto stimuli = eval::collect_matching(records);
    if (!stimuli.empty()) {
      std::set<std::string> ids;
      std::map<std::string, Eigen::VectorXd> ctx;
      for (const auto& st : stimuli) {
        ids.insert(st.candidates.begin(), st.candidates.end());
        if (ctx.contains(st.ground_truth)) continue;
        const auto* text = store.find(embed::FeatureKind::CtxText, st.ground_truth);
        const auto* audio = store.find(embed::FeatureKind::CtxAudio, st.ground_truth);
        const bool need_text = model.config.modality != contrastive::Modality::Audio;
        const bool need_audio = model.config.modality != contrastive::Modality::Text;
        if ((need_text && !text) || (need_audio && !audio)) {
          throw Error(ErrorKind::MissingFeature, "no context features for '" + st.ground_truth + "'");
        }
        ctx.emplace(st.ground_truth,
                    contrastive::encode_context(model, need_text ? std::span<const double>(*text) : std::span<const double>{},
                                                need_audio ? std::span<const double>(*audio) : std::span<const double>{}));
      }
      const auto items = eval::matching_items(stimuli, ctx, backchannel_embeddings(model, store, ids, false));
      const double model_acc = eval::matching_accuracy(items);
      const double human = eval::human_matching_accuracy(stimuli);
      report["matching"] = {{"stimuli", stimuli.size()}, {"model", model_acc}, {"human", human}, {"random", 1.0 / 3.0}};
      md += "\n## Context-backchannel matching (" + std::to_string(stimuli.size()) + " sets)\n\n" +
            markdown_table({"selector", "accuracy %"},
                           {{"joint model", pct(model_acc)}, {"human raters", pct(human)}, {"random", pct(1.0 / 3.0)}});
    }
  }
  emit(json, report, md);
  return 0;
}

struct ProbeArgs {
  std::string model, manifest, vectors, ratings, out;
  std::optional<double> alpha;
};

int cmd_probe(const Settings& s, const ProbeArgs& a, bool json) {
  const auto model_text = corpus::read_text_file(a.model);
  const auto model = contrastive::model_from_json(model_text);
  const auto manifest = corpus::read_manifest(a.manifest);
  const auto store = embed::read_vectors(fs::path(a.vectors));
  const auto affective = eval::collect_affective(eval::read_ratings(a.ratings));
  const double alpha = a.alpha.value_or(s.probe_alpha);

  std::map<std::string, const corpus::BackchannelSample*> by_id;
  for (const auto& sample : manifest) by_id.emplace(sample.id, &sample);

  std::vector<std::string> rated;
  for (const auto& [id, r] : affective)
    if (by_id.contains(id) && store.contains(embed::FeatureKind::BcAudio, id)) rated.push_back(id);
  if (rated.size() < 4) throw Error(ErrorKind::NoSamples, "need at least 4 rated samples with features");
  Rng rng(s.seed);
  rng.shuffle(rated);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(s.probe_train_fraction * static_cast<double>(rated.size()))), 2,
      rated.size() - 2);

  bool have_prosody = true;
  for (const auto& id : rated) have_prosody = have_prosody && by_id.at(id)->prosody.has_value();

  using Featurizer = std::function<Eigen::VectorXd(const std::string&)>;
  std::vector<std::pair<std::string, Featurizer>> feature_sets = {
      {"joint", [&](const std::string& id) { return contrastive::encode_backchannel(model, store.at(embed::FeatureKind::BcAudio, id)); }},
      {"raw bc_audio", [&](const std::string& id) { return to_vector(store.at(embed::FeatureKind::BcAudio, id)); }},
      {"lexical", [&](const std::string& id) { return eval::lexical_onehot(by_id.at(id)->lexeme, s.lexicon); }},
  };
  if (have_prosody) {
    feature_sets.emplace_back("prosody", [&](const std::string& id) { return eval::prosodic_baseline(*by_id.at(id)); });
    feature_sets.emplace_back("lexical + prosody",
                              [&](const std::string& id) { return eval::combined_baseline(*by_id.at(id), s.lexicon); });
  } else {
    std::cerr << "warning: prosodic features missing; prosody baselines skipped\n";
  }

  explorer::ProbeSet probes;
  probes.model_hash = explorer::content_hash(model_text);
  Json results = Json::object();
  std::vector<std::vector<std::string>> rows;
  for (const auto& [name, featurize] : feature_sets) {
    std::vector<std::string> row = {name};
    Json per_dim = Json::object();
    for (auto d : eval::kAffectiveDims) {
      std::vector<Eigen::VectorXd> xtr, xte;
      std::vector<double> ytr, yte;
      for (std::size_t i = 0; i < rated.size(); ++i) {
        const auto& values = affective.at(rated[i]).of(d);
        if (values.empty()) continue;
        (i < n_train ? xtr : xte).push_back(featurize(rated[i]));
        (i < n_train ? ytr : yte).push_back(eval::mean(values));
      }
      if (xtr.size() < 2 || xte.empty()) {
        row.push_back("n/a");
        per_dim[std::string(eval::dim_name(d))] = nullptr;
        continue;
      }
      const auto probe = eval::fit_ridge(stack_rows(xtr), to_vector(ytr), alpha);
      const double r2 = eval::probe_r2(probe, stack_rows(xte), to_vector(yte));
      row.push_back(fmt(r2, 3));
      per_dim[std::string(eval::dim_name(d))] = r2;
      if (name == "joint") {
        auto stored = probe;
        stored.target = std::string(eval::dim_name(d));
        probes.probes.emplace(d, std::move(stored));
      }
    }
    results[name] = per_dim;
    rows.push_back(row);
  }
  explorer::save_probes(probes, a.out);
  Json report{{"train", n_train}, {"test", rated.size() - n_train}, {"alpha", alpha}, {"r2", results}, {"probes", a.out}};
  emit(json, report,
       "## Probe R^2 on held-out samples (" + std::to_string(n_train) + " train / " +
           std::to_string(rated.size() - n_train) + " test, alpha " + fmt(alpha, 2) + ")\n\n" +
           markdown_table({"features", "energy", "polarity", "surprisal"}, rows));
  return 0;
}

struct PerplexityArgs {
  std::string manifest;
  std::vector<std::string> transcripts;
  std::optional<int> order;
  std::optional<std::vector<std::size_t>> turns;
  bool arithmetic = false;
};

int cmd_perplexity(const Settings& s, const PerplexityArgs& a, bool json) {
  std::vector<std::string> warnings;
  const auto transcripts = load_transcripts(a.transcripts, warnings);
  const int order = a.order.value_or(s.lm_order);
  const auto turns = a.turns.value_or(s.lm_turns);
  const auto mean = (a.arithmetic || s.arithmetic_mean) ? lm::PerplexityMean::Arithmetic : lm::PerplexityMean::Geometric;
  for (auto k : turns)
    if (k < 1) throw Error(ErrorKind::InvalidArgument, "--turns values must be at least 1");

  std::vector<corpus::BackchannelSample> samples;
  if (!a.manifest.empty()) {
    samples = corpus::read_manifest(a.manifest);
  } else {
    for (const auto& [id, t] : transcripts) {
      auto found = corpus::extract_backchannels(t, s.lexicon);
      samples.insert(samples.end(), found.begin(), found.end());
    }
    corpus::split_dataset(samples, s.ratios, s.seed);
  }
  std::set<std::string> held_out;
  std::vector<corpus::BackchannelSample> test;
  for (const auto& sample : samples) {
    if (sample.split && *sample.split != corpus::Split::Train) held_out.insert(sample.dialogue_id);
    if (sample.split == corpus::Split::Test) test.push_back(sample);
  }
  std::vector<lm::TokenStream> streams;
  for (const auto& [id, t] : transcripts)
    if (!held_out.contains(id)) streams.push_back(lm::tokenize(corpus::format_transcript(t)));
  const auto model = lm::NGramLM::train(streams, order);
  const auto uniform = lm::NGramLM::uniform_like(model);

  const std::size_t k_max = *std::max_element(turns.begin(), turns.end());
  Json rows_json = Json::array();
  std::vector<std::string> header = {"model", "0 (uniform)"};
  std::vector<std::string> row = {"n-gram order " + std::to_string(order)};
  const double base = lm::backchannel_perplexity(uniform, transcripts, test, k_max, mean);
  row.push_back(fmt(base, 3));
  rows_json.push_back({{"turns", 0}, {"perplexity", base}, {"model", "uniform"}});
  for (auto k : turns) {
    const double ppl = lm::backchannel_perplexity(model, transcripts, test, k, mean);
    header.push_back(std::to_string(k));
    row.push_back(fmt(ppl, 3));
    rows_json.push_back({{"turns", k}, {"perplexity", ppl}, {"model", "ngram"}});
  }
  print_warnings(warnings);
  Json report{{"order", order},
              {"mean", mean == lm::PerplexityMean::Geometric ? "geometric" : "arithmetic"},
              {"train_streams", streams.size()},
              {"test_samples", test.size()},
              {"vocabulary", model.vocabulary_size()},
              {"results", rows_json}};
  emit(json, report,
       "## Backchannel perplexity by context turns (" + std::to_string(test.size()) + " test samples)\n\n" +
           markdown_table(header, {row}));
  return 0;
}

struct ExportArgs {
  std::string model, manifest, vectors, probes, out;
};

int cmd_export(const Settings&, const ExportArgs& a, bool json) {
  const auto model_text = corpus::read_text_file(a.model);
  const auto model = contrastive::model_from_json(model_text);
  const auto manifest = corpus::read_manifest(a.manifest);
  const auto store = embed::read_vectors(fs::path(a.vectors));
  const auto probes = explorer::load_probes(a.probes);
  const auto hash = explorer::content_hash(model_text);
  if (!probes.model_hash.empty() && probes.model_hash != hash) {
    std::cerr << "warning: probes were fitted on a different model file\n";
  }
  const auto bundle = explorer::export_explorer(model, manifest, store, probes, hash);
  explorer::save_bundle(bundle, a.out);
  Json report{{"points", bundle.points.size()}, {"model_hash", hash}, {"out", a.out}};
  emit(json, report, std::to_string(bundle.points.size()) + " points exported to " + a.out + "\n");
  return 0;
}

struct ServeArgs {
  std::string bundle, audio_dir, static_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
};

int cmd_serve(const Settings&, const ServeArgs& a, bool) {
  std::optional<fs::path> audio;
  if (!a.audio_dir.empty()) audio = a.audio_dir;
  const explorer::Service service(explorer::load_bundle(a.bundle), audio);
  explorer::ServeOptions options;
  options.host = a.host;
  options.port = a.port;
  if (!a.static_dir.empty()) options.static_dir = a.static_dir;
  explorer::serve(service, options);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context and backchannel joint embedding toolkit"};
  app.require_subcommand(0, 1);

  std::optional<std::uint64_t> seed;
  std::string config_path;
  bool json = false;
  bool print_config = false;
  app.add_option("--seed", seed, "Random seed for splits, synthesis, initialization and probes");
  app.add_option("--config", config_path, "Versioned JSON config (bc-config/1)")->check(CLI::ExistingFile);
  app.add_flag("--json", json, "Machine-readable output");
  app.add_flag("--print-config", print_config, "Print the resolved configuration and exit");

  FormatArgs format_args;
  auto* format = app.add_subcommand("format", "Parse transcripts and re-emit them normalized");
  format->add_option("inputs", format_args.inputs, "Transcript files or directories")->required();
  format->add_flag("--check", format_args.check, "Exit 1 unless every file is already normalized");

  ExtractArgs extract_args;
  auto* extract = app.add_subcommand("extract", "Detect backchannels and write a sample manifest");
  extract->add_option("inputs", extract_args.inputs, "Transcript files or directories")->required();
  extract->add_option("-o,--out", extract_args.out, "Manifest path (stdout when omitted)");
  extract->add_option("--turns", extract_args.turns, "Context turns K");
  extract->add_option("--audio-dir", extract_args.audio_dir, "Directory holding <sample id>.wav clips");
  extract->add_flag("--no-split", extract_args.no_split, "Leave split labels empty");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic manifest, feature store and ratings");
  synth->add_option("-o,--out-dir", synth_args.out_dir, "Output directory")->required();
  synth->add_option("--n-pairs", synth_args.n_pairs);
  synth->add_option("--latent-dim", synth_args.latent_dim);
  synth->add_option("--text-dim", synth_args.text_dim);
  synth->add_option("--audio-dim", synth_args.audio_dim);
  synth->add_option("--noise", synth_args.noise, "Feature noise sigma");
  synth->add_flag("--tones", synth_args.tones, "Write a tone clip per sample under audio/");
  synth->add_option("--dependency-corpus", synth_args.dependency_dialogues,
                    "Also write this many long-dependency transcripts under transcripts/");
  synth->add_option("--episodes", synth_args.dependency_episodes, "Episodes per long-dependency dialogue");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train the projection heads");
  train->add_option("--manifest", train_args.manifest)->required()->check(CLI::ExistingFile);
  train->add_option("--vectors", train_args.vectors)->required()->check(CLI::ExistingFile);
  train->add_option("-o,--out", train_args.out, "Model file")->required();
  train->add_option("--history", train_args.history, "Per-epoch CSV");
  train->add_option("--modality", train_args.modality, "audio_text, text or audio");
  train->add_option("--layers", train_args.layers);
  train->add_option("--embed-dim", train_args.embed_dim);
  train->add_option("--batch-size", train_args.batch_size);
  train->add_option("--epochs", train_args.epochs);
  train->add_option("--lr", train_args.lr);
  train->add_flag("--unsafe-grid", train_args.unsafe_grid, "Allow values outside the hyperparameter grid");

  EvalArgs eval_args;
  auto* evaluate = app.add_subcommand("eval", "Retrieval, triadic and matching evaluation");
  evaluate->add_option("--model", eval_args.model)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--manifest", eval_args.manifest)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--vectors", eval_args.vectors)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--ratings", eval_args.ratings)->check(CLI::ExistingFile);
  evaluate->add_option("--split", eval_args.split, "train, val or test");
  evaluate->add_option("--pool-size", eval_args.pool_size, "Rank within consecutive pools of this size");

  ProbeArgs probe_args;
  auto* probe = app.add_subcommand("probe", "Fit affective ridge probes and baselines");
  probe->add_option("--model", probe_args.model)->required()->check(CLI::ExistingFile);
  probe->add_option("--manifest", probe_args.manifest)->required()->check(CLI::ExistingFile);
  probe->add_option("--vectors", probe_args.vectors)->required()->check(CLI::ExistingFile);
  probe->add_option("--ratings", probe_args.ratings)->required()->check(CLI::ExistingFile);
  probe->add_option("-o,--out", probe_args.out, "Probe file")->required();
  probe->add_option("--alpha", probe_args.alpha);

  PerplexityArgs ppl_args;
  auto* perplexity = app.add_subcommand("perplexity", "Backchannel perplexity against context length");
  perplexity->add_option("--transcripts", ppl_args.transcripts, "Transcript files or directories")->required();
  perplexity->add_option("--manifest", ppl_args.manifest, "Manifest with split labels")->check(CLI::ExistingFile);
  perplexity->add_option("--order", ppl_args.order);
  perplexity->add_option("--turns", ppl_args.turns)->delimiter(',');
  perplexity->add_flag("--arithmetic", ppl_args.arithmetic, "Average per-sample perplexities instead of NLL");

  ExportArgs export_args;
  auto* exporter = app.add_subcommand("export", "Write the explorer bundle");
  exporter->add_option("--model", export_args.model)->required()->check(CLI::ExistingFile);
  exporter->add_option("--manifest", export_args.manifest)->required()->check(CLI::ExistingFile);
  exporter->add_option("--vectors", export_args.vectors)->required()->check(CLI::ExistingFile);
  exporter->add_option("--probes", export_args.probes)->required()->check(CLI::ExistingFile);
  exporter->add_option("-o,--out", export_args.out)->required();

  ServeArgs serve_args;
  auto* serve = app.add_subcommand("serve", "Read-only HTTP service over an explorer bundle");
  serve->add_option("--bundle", serve_args.bundle)->required()->check(CLI::ExistingFile);
  serve->add_option("--audio-dir", serve_args.audio_dir)->check(CLI::ExistingDirectory);
  serve->add_option("--static-dir", serve_args.static_dir)->check(CLI::ExistingDirectory);
  serve->add_option("--host", serve_args.host);
  serve->add_option("--port", serve_args.port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    Settings settings;
    if (!config_path.empty()) apply_config_file(settings, config_path);
    if (seed) settings.seed = *seed;
    if (print_config) {
      std::cout << settings_to_json(settings).dump(2) << '\n';
      return 0;
    }
    if (*format) return cmd_format(settings, format_args, json);
    if (*extract) return cmd_extract(settings, extract_args, json);
    if (*synth) return cmd_synth(settings, synth_args, json);
    if (*train) return cmd_train(settings, train_args, json);
    if (*evaluate) return cmd_eval(settings, eval_args, json);
    if (*probe) return cmd_probe(settings, probe_args, json);
    if (*perplexity) return cmd_perplexity(settings, ppl_args, json);
    if (*exporter) return cmd_export(settings, export_args, json);
    if (*serve) return cmd_serve(settings, serve_args, json);
    std::cout << app.help();
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
