// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failures (capped at 1).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "bcalign/contrastive.hpp"
#include "bcalign/corpus.hpp"
#include "bcalign/embed_io.hpp"
#include "bcalign/eval.hpp"
#include "bcalign/explorer.hpp"
#include "bcalign/ngram_lm.hpp"
#include "bcalign/prosody.hpp"
#include "bcalign/rng.hpp"
#include "bcalign/wav.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace bcalign;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects sub-checks; each failed one is named in the detail line.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failed_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  Outcome outcome() const {
    std::string d;
    for (const auto& n : notes_) d += (d.empty() ? "" : "; ") + n;
    for (const auto& f : failed_) d += (d.empty() ? "" : "; ") + std::string("FAILED ") + f;
    return {failed_.empty(), d};
  }

 private:
  std::vector<std::string> failed_, notes_;
};

std::string num(double v, int prec = 4) {
  std::ostringstream o;
  o.precision(prec);
  o << v;
  return o.str();
}

std::string read_fixture(const std::string& name) {
  return corpus::read_text_file(std::string(BCALIGN_DATA_DIR) + "/transcripts/" + name);
}

contrastive::Batch random_batch(Rng& rng, contrastive::FeatureDims d, Eigen::Index n) {
  contrastive::Batch b;
  b.ctx_text = testing::random_matrix(rng, static_cast<Eigen::Index>(d.text), n);
  b.ctx_audio = testing::random_matrix(rng, static_cast<Eigen::Index>(d.audio), n);
  b.bc_audio = testing::random_matrix(rng, static_cast<Eigen::Index>(d.audio), n);
  return b;
}

Outcome gradient_correctness() {
  using namespace contrastive;
  Checks c;
  Rng rng(101);
  const FeatureDims dims{8, 6};
  double worst = 0.0;
  for (auto m : {Modality::AudioText, Modality::Text, Modality::Audio})
    for (int layers : {1, 4}) {
      ModelConfig cfg;
      cfg.modality = m;
      cfg.n_layers = layers;
      cfg.embed_dim = 8;
      cfg.batch_size = 6;
      cfg.unsafe_grid = true;
      ProjectionModel model = init_model(cfg, dims, static_cast<std::uint64_t>(layers) + 7);
      const Batch batch = random_batch(rng, dims, 6);
      Parameters grads = loss_gradients(model, batch).gradients;
      const double h = 1e-5;
      double local = 0.0;
      for_each_tensor(model.params, grads, [&](double* w, double* g, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
          const double keep = w[i];
          w[i] = keep + h;
          const double up = batch_loss(model, batch);
          w[i] = keep - h;
          const double down = batch_loss(model, batch);
          w[i] = keep;
          const double fd = (up - down) / (2.0 * h);
          local = std::max(local, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}));
        }
      });
      c.expect(local < 1e-4, std::string(modality_name(m)) + " x" + std::to_string(layers) + " rel err " + num(local));
      worst = std::max(worst, local);
    }
  c.note("max rel err " + num(worst, 3) + " (< 1e-4)");
  return c.outcome();
}

Outcome loss_analytics() {
  using namespace contrastive;
  Checks c;
  c.expect(info_nce_loss(MatrixXd::Constant(1, 1, 5.0)) == 0.0, "N=1 loss not exactly 0");
  double worst_const = 0.0;
  for (int n : {2, 3, 8, 64, 512}) worst_const = std::max(worst_const, std::abs(info_nce_loss(MatrixXd::Constant(n, n, -1.3)) - std::log(n)));
  c.expect(worst_const < 1e-9, "constant S off ln N by " + num(worst_const));
  Rng rng(202);
  double worst_t = 0.0, worst_p = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(15));
    const MatrixXd S = testing::random_matrix(rng, n, n, 5.0);
    const double l = info_nce_loss(S);
    worst_t = std::max(worst_t, std::abs(info_nce_loss(S.transpose()) - l));
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    MatrixXd P(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) P(i, j) = S(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    worst_p = std::max(worst_p, std::abs(info_nce_loss(P) - l));
  }
  c.expect(worst_t < 1e-12, "transpose asymmetry " + num(worst_t));
  c.expect(worst_p < 1e-12, "permutation variance " + num(worst_p));
  c.note("|L - ln N| " + num(worst_const, 2) + ", transpose " + num(worst_t, 2) + ", permutation " + num(worst_p, 2));
  return c.outcome();
}

// Shared by the learnability and ridge criteria.
struct Learned {
  embed::SynthData data;
  contrastive::ProjectionModel model;
};

contrastive::ModelConfig learnability_config() {
  auto cfg = contrastive::default_config(contrastive::Modality::AudioText);
  cfg.batch_size = 512;
  cfg.unsafe_grid = true;  // 512 lies below the batch-size grid
  cfg.max_epochs = 20;
  cfg.learning_rate = 1e-2;
  return cfg;
}

embed::SynthData learnability_data() {
  embed::SynthConfig sc;
  sc.n_pairs = 2000;
  sc.latent_dim = 8;
  sc.noise_sigma = 0.1;
  return embed::generate_synthetic(sc);
}

double held_out_topk(const contrastive::ProjectionModel& model, const contrastive::PairedData& test) {
  return eval::topk_percent_accuracy(contrastive::encode_contexts(model, test.features),
                                     contrastive::encode_backchannels(model, test.features.bc_audio), 10.0);
}

// Rotate backchannel columns by one within each split.
contrastive::PairedData derange(contrastive::PairedData d) {
  const auto n = d.features.bc_audio.cols();
  MatrixXd shifted(d.features.bc_audio.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) shifted.col(i) = d.features.bc_audio.col((i + 1) % n);
  d.features.bc_audio = shifted;
  return d;
}

Outcome alignment_learnability(Learned& out) {
  using namespace contrastive;
  Checks c;
  out.data = learnability_data();
  const auto cfg = learnability_config();
  const auto& d = out.data;
  const auto tr = gather(d.manifest, d.store, cfg.modality, corpus::Split::Train);
  const auto va = gather(d.manifest, d.store, cfg.modality, corpus::Split::Val);
  const auto te = gather(d.manifest, d.store, cfg.modality, corpus::Split::Test);
  const auto init = init_model(cfg, dims_of(d.store), cfg.seed);

  const auto aligned = train(init, tr, va);
  out.model = aligned.model;
  const double acc = held_out_topk(aligned.model, te);
  c.expect(acc >= 0.60, "held-out top-10% " + num(100 * acc, 3) + " < 60");

  const auto shuffled = train(init, derange(tr), derange(va));
  const double chance = held_out_topk(shuffled.model, te);
  c.expect(std::abs(chance - 0.10) <= 0.04, "deranged top-10% " + num(100 * chance, 3) + " outside 10 +/- 4");
  c.note("train/val/test " + std::to_string(tr.ids.size()) + "/" + std::to_string(va.ids.size()) + "/" +
         std::to_string(te.ids.size()) + ", held-out top-10% " + num(100 * acc, 3) + "% (need >= 60), deranged " +
         num(100 * chance, 3) + "% (need 10 +/- 4), best epoch " + std::to_string(aligned.best_epoch));
  return c.outcome();
}

Outcome context_length_trend() {
  Checks c;
  const auto dialogues = lm::long_dependency_corpus(40, 20, 11);
  std::map<std::string, corpus::Transcript> held_out;
  std::vector<lm::TokenStream> train;
  std::vector<corpus::BackchannelSample> test;
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    if (i < 30) {
      train.push_back(lm::tokenize(corpus::format_transcript(dialogues[i])));
    } else {
      held_out.emplace(dialogues[i].source_id, dialogues[i]);
      for (auto& s : corpus::extract_backchannels(dialogues[i], corpus::default_lexicon())) test.push_back(s);
    }
  }
  const auto model = lm::NGramLM::train(train, 16);
  const double k1 = lm::backchannel_perplexity(model, held_out, test, 1);
  const double k3 = lm::backchannel_perplexity(model, held_out, test, 3);
  const double k5 = lm::backchannel_perplexity(model, held_out, test, 5);
  c.expect(k1 > k3, "k=1 not above k=3");
  c.expect(k3 > k5, "k=3 not above k=5");
  c.note("perplexity k=1 " + num(k1) + ", k=3 " + num(k3) + ", k=5 " + num(k5) + " on " + std::to_string(test.size()) +
         " held-out backchannels");
  return c.outcome();
}

VectorXd normal_vector(Rng& rng, Eigen::Index n) {
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

Outcome retrieval_oracles() {
  Checks c;
  Rng rng(303);
  std::size_t topk_agree = 0, triad_agree = 0, match_agree = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto m = static_cast<Eigen::Index>(2 + rng.below(80));
    const MatrixXd ctx = testing::random_matrix(rng, 6, m), bc = testing::random_matrix(rng, 6, m);
    const double k = std::array<double, 4>{1, 5, 10, 25}[rng.below(4)];
    topk_agree += eval::topk_percent_accuracy(ctx, bc, k) == testing::naive_topk(ctx, bc, k);
    const VectorXd a = normal_vector(rng, 6), b = normal_vector(rng, 6), e = normal_vector(rng, 6);
    triad_agree += eval::triadic_select(a, b, e) == testing::naive_triad(a, b, e);
    const std::vector<VectorXd> cands = {normal_vector(rng, 6), normal_vector(rng, 6), normal_vector(rng, 6)};
    match_agree += eval::matching_select(a, cands) == testing::naive_match(a, cands);
  }
  c.expect(topk_agree == 1000, "top-k agreement " + std::to_string(topk_agree) + "/1000");
  c.expect(triad_agree == 1000, "triadic agreement " + std::to_string(triad_agree) + "/1000");
  c.expect(match_agree == 1000, "matching agreement " + std::to_string(match_agree) + "/1000");

  // Chance baselines, checked on every seed.
  double worst_topk = 0.0, worst_triad = 0.0, worst_match = 0.0;
  const std::array<eval::TriadPair, 3> pairs = {eval::TriadPair{1, 2}, eval::TriadPair{1, 3}, eval::TriadPair{2, 3}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    const double topk = eval::topk_percent_accuracy(testing::random_unit_columns(r, 16, 1000),
                                                    testing::random_unit_columns(r, 16, 1000), 10.0);
    worst_topk = std::max(worst_topk, std::abs(100.0 * topk - 10.0));

    std::map<std::string, VectorXd> emb;
    for (int i = 0; i < 200; ++i) emb["b" + std::to_string(i)] = normal_vector(r, 8);
    std::vector<eval::TriadJudgment> triads;
    std::vector<eval::MatchingItem> items;
    for (int t = 0; t < 1000; ++t) {
      std::array<std::string, 3> ids;
      for (auto& id : ids) id = "b" + std::to_string(r.below(200));
      triads.push_back({ids, pairs[r.below(3)], 1.0});
      items.push_back({normal_vector(r, 8), {normal_vector(r, 8), normal_vector(r, 8), normal_vector(r, 8)}, r.below(3)});
    }
    worst_triad = std::max(worst_triad, std::abs(100.0 * eval::triadic_agreement(emb, triads) - 100.0 / 3.0));
    worst_match = std::max(worst_match, std::abs(100.0 * eval::matching_accuracy(items) - 100.0 / 3.0));
  }
  c.expect(worst_topk <= 3.0, "random top-10% off by " + num(worst_topk) + " points");
  c.expect(worst_triad <= 5.0, "random triadic off by " + num(worst_triad) + " points");
  c.expect(worst_match <= 5.0, "random matching off by " + num(worst_match) + " points");
  c.note("oracle agreement " + std::to_string(topk_agree) + "/" + std::to_string(triad_agree) + "/" +
         std::to_string(match_agree) + " of 1000; worst chance deviation over 20 seeds " + num(worst_topk, 3) + "/" +
         num(worst_triad, 3) + "/" + num(worst_match, 3) + " points (limits 3/5/5)");
  return c.outcome();
}

Outcome ridge_oracle(const Learned& learned) {
  Checks c;
  Rng rng(404);
  double worst_residual = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(100));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(64));
    const MatrixXd X = testing::random_matrix(rng, n, d, rng.uniform(0.1, 5.0));
    const VectorXd y = normal_vector(rng, n);
    const auto probe = eval::fit_ridge(X, y, std::pow(10.0, rng.uniform(-3.0, 1.0)));
    worst_residual = std::max(worst_residual, eval::normal_equation_residual(probe, X, y));
  }
  c.expect(worst_residual < 1e-8, "normal-equation residual " + num(worst_residual));

  const MatrixXd X = testing::random_matrix(rng, 300, 12);
  const VectorXd w = normal_vector(rng, 12);
  const VectorXd y = (X * w).array() + 0.7;
  const double planted = eval::probe_r2(eval::fit_ridge(X, y, 1e-10), X, y);
  c.expect(planted > 0.999, "planted R^2 " + num(planted));

  // Probes on the trained joint space vs the two prosodic features, 50/50 split.
  const auto& data = learned.data;
  const auto affective = eval::collect_affective(data.ratings);
  std::vector<const corpus::BackchannelSample*> rated;
  for (const auto& s : data.manifest)
    if (affective.contains(s.id)) rated.push_back(&s);
  Rng split_rng(0);
  split_rng.shuffle(rated);
  const std::size_t n_train = rated.size() / 2;
  std::string summary;
  for (auto dim : eval::kAffectiveDims) {
    std::vector<VectorXd> joint, pros;
    std::vector<double> target;
    for (const auto* s : rated) {
      joint.push_back(contrastive::encode_backchannel(learned.model, data.store.at(embed::FeatureKind::BcAudio, s->id)));
      pros.push_back(eval::prosodic_baseline(*s));
      target.push_back(eval::mean(affective.at(s->id).of(dim)));
    }
    const auto rows = [](const std::vector<VectorXd>& v, std::size_t from, std::size_t to) {
      MatrixXd m(static_cast<Eigen::Index>(to - from), v[0].size());
      for (std::size_t i = from; i < to; ++i) m.row(static_cast<Eigen::Index>(i - from)) = v[i].transpose();
      return m;
    };
    const auto tail = [&](std::size_t from, std::size_t to) {
      return Eigen::Map<const VectorXd>(target.data() + from, static_cast<Eigen::Index>(to - from));
    };
    const std::size_t n = rated.size();
    const auto pj = eval::fit_ridge(rows(joint, 0, n_train), tail(0, n_train), 1.0);
    const auto pp = eval::fit_ridge(rows(pros, 0, n_train), tail(0, n_train), 1.0);
    const double rj = eval::probe_r2(pj, rows(joint, n_train, n), tail(n_train, n));
    const double rp = eval::probe_r2(pp, rows(pros, n_train, n), tail(n_train, n));
    c.expect(rj > rp, std::string(eval::dim_name(dim)) + " joint R^2 " + num(rj, 3) + " not above prosody " + num(rp, 3));
    summary += (summary.empty() ? "" : ", ") + std::string(eval::dim_name(dim)) + " " + num(rj, 3) + " vs " + num(rp, 3);
  }
  c.note("max residual " + num(worst_residual, 2) + ", planted R^2 " + num(planted, 8) + ", held-out R^2 joint vs prosody: " +
         summary);
  return c.outcome();
}

Outcome parser() {
  Checks c;
  for (const char* name : {"example1.txt", "example2.txt"}) {
    const std::string raw = read_fixture(name);
    c.expect(corpus::format_transcript(corpus::parse_transcript(raw)) == corpus::normalize_whitespace(raw),
             std::string(name) + " round trip");
  }
  Rng rng(505);
  std::size_t ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto g = testing::random_transcript(rng);
    const auto t = corpus::parse_transcript(g.text);
    ok += t.turns == g.transcript.turns && corpus::format_transcript(t) == g.text;
  }
  c.expect(ok == 1000, "generated round trips " + std::to_string(ok) + "/1000");

  const auto t = corpus::parse_transcript(read_fixture("example2.txt"), "ex2");
  const auto samples = corpus::extract_backchannels(t, corpus::default_lexicon());
  std::string got;
  bool double_right = false;
  for (const auto& s : samples) {
    got += (got.empty() ? "" : " ") + s.lexeme;
    double_right = double_right || t.turns[s.turn_index].tokens.size() != 1;
  }
  c.expect(got == "yeah right right right mhm right right", "extracted '" + got + "'");
  c.expect(!double_right, "a multi-word turn was extracted");
  c.note("examples round-trip, " + std::to_string(ok) + "/1000 generated, " + std::to_string(samples.size()) +
         " backchannels from example 2");
  return c.outcome();
}

Outcome prosody_features() {
  Checks c;
  constexpr double sr = 16000.0;
  std::vector<double> tone(16000);
  for (std::size_t i = 0; i < tone.size(); ++i) tone[i] = 0.5 * std::sin(2.0 * M_PI * 220.0 * static_cast<double>(i) / sr);
  const auto ft = prosody::compute_features(prosody::estimate_f0(tone, sr));
  c.expect(ft.pitch_range_semitones <= 0.1, "tone range " + num(ft.pitch_range_semitones));
  c.expect(ft.duration_voiced_frames >= 95 && ft.duration_voiced_frames <= 100,
           "tone voiced frames " + std::to_string(ft.duration_voiced_frames));
  const auto fg = prosody::compute_features(prosody::estimate_f0(wav::synthesize_glide(220.0, 440.0, 1.0, sr), sr));
  c.expect(std::abs(fg.pitch_range_semitones - 12.0) <= 0.5, "glide range " + num(fg.pitch_range_semitones));
  const auto fs = prosody::compute_features(prosody::estimate_f0(std::vector<double>(16000, 0.0), sr));
  c.expect(fs.duration_voiced_frames == 0, "silence voiced frames " + std::to_string(fs.duration_voiced_frames));
  c.note("tone " + num(ft.pitch_range_semitones, 3) + " st / " + std::to_string(ft.duration_voiced_frames) +
         " frames, glide " + num(fg.pitch_range_semitones, 4) + " st, silence " +
         std::to_string(fs.duration_voiced_frames) + " frames");
  return c.outcome();
}

Outcome region_additivity() {
  Checks c;
  Rng rng(606);
  const auto bundle = testing::random_bundle(rng, 500);
  const std::vector<double> xs = {0.0, 1.75, 2.5, 3.0, 4.25, 6.0}, ys = {0.0, 2.0, 3.5, 6.0};
  std::size_t count = 0;
  double dur = 0.0, range = 0.0;
  explorer::RegionQuery q;
  q.x_dim = eval::AffectiveDim::Energy;
  q.y_dim = eval::AffectiveDim::Surprisal;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i)
    for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
      q.xmin = xs[i], q.xmax = xs[i + 1], q.ymin = ys[j], q.ymax = ys[j + 1];
      const auto s = explorer::region_stats(bundle, q);
      count += s.count;
      if (s.count) {
        dur += *s.avg_duration_frames * static_cast<double>(s.count);
        range += *s.avg_pitch_range_st * static_cast<double>(s.count);
      }
    }
  q.xmin = 0, q.xmax = 6, q.ymin = 0, q.ymax = 6;
  const auto all = explorer::region_stats(bundle, q);
  c.expect(count == 500 && all.count == 500, "counts " + std::to_string(count) + " / " + std::to_string(all.count));
  const double dd = std::abs(dur / 500.0 - all.avg_duration_frames.value_or(NAN));
  const double dr = std::abs(range / 500.0 - all.avg_pitch_range_st.value_or(NAN));
  c.expect(dd <= 1e-9, "duration mean differs by " + num(dd));
  c.expect(dr <= 1e-9, "pitch range mean differs by " + num(dr));
  c.note("15 cells, counts sum to " + std::to_string(count) + ", mean differences " + num(dd, 2) + " / " + num(dr, 2));
  return c.outcome();
}

}  // namespace

int main() {
  Learned learned;
  struct Criterion {
    std::string name;
    double limit_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradient-correctness", 10.0, gradient_correctness},
      {"loss-analytics", 0.0, loss_analytics},
      {"alignment-learnability", 300.0, [&] { return alignment_learnability(learned); }},
      {"context-length-trend", 30.0, context_length_trend},
      {"retrieval-oracles", 0.0, retrieval_oracles},
      {"ridge-oracle", 0.0, [&] { return ridge_oracle(learned); }},
      {"parser", 0.0, parser},
      {"prosody", 0.0, prosody_features},
      {"region-stats-additivity", 0.0, region_additivity},
  };
  int failures = 0;
  for (const auto& cr : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (cr.limit_s > 0.0 && secs > cr.limit_s) {
      o.pass = false;
      o.detail += "; FAILED runtime above " + num(cr.limit_s) + " s";
    }
    failures += !o.pass;
    std::printf("%s %-24s %s [%.2f s%s]\n", o.pass ? "PASS" : "FAIL", cr.name.c_str(), o.detail.c_str(), secs,
                cr.limit_s > 0.0 ? (" of " + num(cr.limit_s) + " s").c_str() : "");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures ? 1 : 0;
}
