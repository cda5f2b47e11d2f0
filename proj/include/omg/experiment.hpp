#pragma once

// Corpus selection and whole-pipeline runs shared by the command-line tool
// and the acceptance suite.

#include <optional>

#include "omg/training.hpp"

namespace omg {

inline std::vector<synth::Sample> training_corpus(const RunConfig& c) {
  return synth::generate(static_cast<std::uint64_t>(c.integer("data.seed")), c.count("data.size"),
                         synth::parse_task_mix(c.str("data.mix")));
}

// The pretraining corpus: the training corpus itself, or a fresh corpus of the
// same size drawn from pretrain.mix.
inline std::vector<synth::Sample> pretrain_corpus(const RunConfig& c, const std::vector<synth::Sample>& train) {
  const auto& mix = c.str("pretrain.mix");
  if (mix == "same") return train;
  return synth::generate(static_cast<std::uint64_t>(c.integer("data.seed")) + 1, train.size(),
                         synth::parse_task_mix(mix));
}

inline std::vector<synth::Sample> heldout_corpus(const RunConfig& c) {
  return synth::generate(static_cast<std::uint64_t>(c.integer("eval.seed")), c.count("eval.size"),
                         synth::parse_task_mix(c.str("data.mix")));
}

struct RunOutcome {
  PipelineResult pipeline;
  metrics::EvalReport train, heldout;
};

// Builds a fresh model from `c`, trains both stages and evaluates it on the
// training corpus (unless `eval_train` is false) and on `heldout`.
template <class T = float>
RunOutcome run_experiment(const RunConfig& c, const std::vector<synth::Sample>& train,
                          const std::vector<synth::Sample>& heldout, std::ostream* log = nullptr,
                          std::unique_ptr<OmgLlava<T>>* model_out = nullptr, bool eval_train = true) {
  auto m = std::make_unique<OmgLlava<T>>(c);
  const auto threads = std::max<std::size_t>(1, c.count("threads"));
  load_base_models(*m, threads);
  const auto tp = prepare_all(*m, train, threads);
  const auto pre = pretrain_corpus(c, train);
  const auto pp = c.str("pretrain.mix") == "same" ? tp : prepare_all(*m, pre, threads);
  RunOutcome r;
  r.pipeline = run_pipeline(*m, pp, tp, log);
  const auto max_new = c.count("eval.max_new");
  if (eval_train) r.train = evaluate(*m, tp, max_new, threads);
  if (!heldout.empty()) r.heldout = evaluate(*m, prepare_all(*m, heldout, threads), max_new, threads);
  if (model_out) *model_out = std::move(m);
  return r;
}

}  // namespace omg
