#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bcalign/contrastive.hpp"
#include "bcalign/corpus.hpp"
#include "bcalign/error.hpp"
#include "bcalign/eval.hpp"
#include "bcalign/explorer.hpp"
#include "bcalign/ngram_lm.hpp"
#include "bcalign/prosody.hpp"

namespace py = pybind11;
using namespace bcalign;

namespace {

py::dict sample_dict(const corpus::BackchannelSample& s) {
  py::dict d;
  d["id"] = s.id;
  d["dialogue_id"] = s.dialogue_id;
  d["speaker"] = std::string(corpus::speaker_name(s.speaker));
  d["lexeme"] = s.lexeme;
  d["turn_index"] = s.turn_index;
  d["context"] = s.context_text;
  return d;
}

std::vector<lm::TokenStream> tokenize_all(const std::vector<std::string>& texts) {
  std::vector<lm::TokenStream> out;
  for (const auto& t : texts) out.push_back(lm::tokenize(t));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Backchannel alignment core";

  static py::exception<Error> error(m, "Error", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error.ptr())(e.what());
      exc.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(error.ptr(), exc.ptr());
    }
  });

  m.def("default_lexicon", &corpus::default_lexicon);
  m.def("normalize_whitespace", &corpus::normalize_whitespace);
  m.def(
      "format_transcript",
      [](const std::string& text) { return corpus::format_transcript(corpus::parse_transcript(text)); },
      "Parse the transcript notation and re-emit it in normalized form.");
  m.def(
      "extract_backchannels",
      [](const std::string& text, std::size_t k_turns, const std::string& source_id) {
        const auto t = corpus::parse_transcript(text, source_id);
        py::list out;
        for (auto s : corpus::extract_backchannels(t, corpus::default_lexicon())) {
          s.context_text = corpus::build_context(t, s, k_turns);
          out.append(sample_dict(s));
        }
        return out;
      },
      py::arg("text"), py::arg("k_turns") = 5, py::arg("source_id") = "");

  py::class_<lm::NGramLM>(m, "NGramLM")
      .def_static(
          "train", [](const std::vector<std::string>& texts, int order) { return lm::NGramLM::train(tokenize_all(texts), order); },
          py::arg("texts"), py::arg("order") = 3)
      .def_property_readonly("order", &lm::NGramLM::order)
      .def_property_readonly("vocabulary", &lm::NGramLM::vocabulary)
      .def("logprob", [](const lm::NGramLM& lm, const std::string& context, const std::string& token) {
        return lm.logprob(lm::tokenize(context), token);
      })
      .def(
          "perplexity",
          [](const lm::NGramLM& lm, const std::vector<std::pair<std::string, std::string>>& items, bool arithmetic) {
            std::vector<lm::ScoredItem> scored;
            for (const auto& [ctx, word] : items) scored.push_back({ctx, word});
            return lm::backchannel_perplexity(lm, scored,
                                              arithmetic ? lm::PerplexityMean::Arithmetic : lm::PerplexityMean::Geometric);
          },
          py::arg("items"), py::arg("arithmetic") = false);

  m.def("info_nce_loss", &contrastive::info_nce_loss, py::arg("S"));
  m.def("info_nce_gradient", &contrastive::info_nce_gradient, py::arg("S"));
  m.def(
      "similarity_matrix",
      [](const Eigen::MatrixXd& ctx, const Eigen::MatrixXd& bc, double tau) { return contrastive::similarity_matrix(ctx, bc, tau); },
      py::arg("ctx"), py::arg("bc"), py::arg("temperature") = contrastive::kTemperature);

  m.def(
      "topk_percent_accuracy",
      [](const Eigen::MatrixXd& ctx, const Eigen::MatrixXd& bc, double k) { return eval::topk_percent_accuracy(ctx, bc, k); },
      py::arg("ctx"), py::arg("bc"), py::arg("k_percent") = 10.0,
      "Columns are embeddings; column i of ctx pairs with column i of bc.");
  m.def("triadic_select", [](const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c) {
    const auto p = eval::triadic_select(a, b, c);
    return std::make_pair(p.first, p.second);
  });
  m.def("matching_select", [](const Eigen::VectorXd& ctx, const std::vector<Eigen::VectorXd>& candidates) {
    return eval::matching_select(ctx, candidates);
  });
  m.def(
      "fit_ridge",
      [](const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double alpha) {
        const auto p = eval::fit_ridge(X, y, alpha);
        return std::make_pair(p.weights, p.bias);
      },
      py::arg("X"), py::arg("y"), py::arg("alpha") = eval::kProbeAlpha, "Returns (weights, bias).");
  m.def("r2_score", &eval::r2_score);

  m.def(
      "prosodic_features",
      [](const std::vector<double>& samples, double sample_rate) {
        const auto f = prosody::compute_features(prosody::estimate_f0(samples, sample_rate));
        py::dict d;
        d["pitch_range_st"] = f.pitch_range_semitones;
        d["duration_frames"] = f.duration_voiced_frames;
        return d;
      },
      py::arg("samples"), py::arg("sample_rate"));

  m.def("content_hash", [](const py::bytes& b) { return explorer::content_hash(std::string(b)); });
}
