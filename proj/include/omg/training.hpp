#pragma once

// Pretraining and instruction tuning on top of the frozen base models, plus
// inference and evaluation of the assembled model.

#include <chrono>
#include <functional>
#include <ostream>

#include "omg/base_training.hpp"
#include "omg/metrics.hpp"

namespace omg {

// Which components each stage may update. The perception model and the base
// LLM stay frozen in both stages; only projectors (and, when instruct-tuning,
// adapters plus the optional decoder copy) train.
struct FreezePolicy {
  bool encoder = true, decoder = true, llm = true;

  static FreezePolicy from(const RunConfig& c) {
    return {c.flag("freeze.encoder"), c.flag("freeze.decoder"), c.flag("freeze.llm")};
  }

  void validate(Stage s) const {
    if (!encoder || !decoder || !llm)
      throw ConfigError(to_string(s) + " requires freeze.encoder, freeze.decoder and freeze.llm to be true");
  }

  template <class T>
  void apply(OmgLlava<T>& m, Stage s) const {
    validate(s);
    for (auto& p : m.store.all()) p->trainable = false;
    m.store.set_trainable("proj.", true);
    if (s == Stage::Instruct) {
      m.store.set_trainable("lora.", true);
      m.store.set_trainable("dec_ft.", true);
    }
  }
};

// Per-sample inputs with the frozen perception model already applied.
template <class T>
struct Prepared {
  std::size_t id = 0;
  synth::Task task = synth::Task::Res;
  std::vector<int> prompt_ids, answer_ids;
  perception::FeatureMap<T> features;
  perception::VisualTokens<T> tokens;  // object rows only when object tokens are enabled
  Tensor<T> reg_tokens;                // foreground queries for the round-trip regularizer
  Tensor<T> region_queries;            // one row per visual prompt
  std::vector<SegMask> seg_targets;    // grid resolution, one per [SEG]
  std::vector<std::string> phrases;    // grounded phrases, one per [SEG]
};

template <class T>
Prepared<T> prepare(const OmgLlava<T>& m, const synth::Sample& s) {
  Prepared<T> p;
  p.id = s.id;
  p.task = s.task;
  p.prompt_ids = m.vocab.encode(s.prompt);
  p.answer_ids = m.vocab.encode(s.answer);
  Tape<T> tape(false);
  p.features = m.encoder.encode(tape, s.scene.image);
  const auto qs = m.decoder.decode(tape, p.features, s.visual_prompts);
  const auto& pc = m.prior;
  p.tokens = perception::assemble_visual_tokens(p.features, qs, pc.strategy, static_cast<T>(pc.tau), pc.max_objects,
                                                pc.mask_input);
  if (p.tokens.object_count()) p.reg_tokens = p.tokens.object;
  if (!pc.object_tokens) {
    p.tokens.object = Tensor<T>();
    p.tokens.selected.clear();
  }
  if (!s.visual_prompts.empty())
    p.region_queries = slice(qs.queries, 0, m.decoder.config().learnable_queries, qs.size());
  for (std::size_t i = 0; i < s.seg_objects.size(); ++i)
    p.seg_targets.push_back(synth::grid_mask(s.seg_target(i), m.downsample()));
  p.phrases = synth::grounded_phrases(s.answer);
  return p;
}

template <class T>
std::vector<Prepared<T>> prepare_all(const OmgLlava<T>& m, const std::vector<synth::Sample>& samples,
                                     std::size_t threads) {
  std::vector<Prepared<T>> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) { out[i] = prepare(m, samples[i]); });
  return out;
}

template <class T>
lm::TokenSequence<T> assemble(Tape<T>& tape, const OmgLlava<T>& m, const Prepared<T>& p, bool with_answer) {
  auto visual = m.projectors.project_visual(tape, p.tokens);
  Tensor<T> regions;
  if (p.region_queries.defined()) regions = m.projectors.project_prompt(tape, p.region_queries);
  static const std::vector<int> none;
  return lm::build_instruction(m.vocab, p.prompt_ids, visual, p.tokens.pixel.dim(0), regions,
                               with_answer ? p.answer_ids : none, m.llm.config().max_seq, with_answer);
}

template <class T>
struct SampleLoss {
  Tensor<T> total;
  LossParts parts;
};

template <class T>
SampleLoss<T> sample_loss(Tape<T>& tape, const OmgLlava<T>& m, const Prepared<T>& p, const LossConfig& lc) {
  SampleLoss<T> r;
  auto seq = assemble(tape, m, p, true);
  auto out = m.llm.forward(tape, seq, lc.stage == Stage::Instruct);
  std::vector<int> tg;
  std::vector<std::uint8_t> sup;
  lm::answer_targets(seq, tg, sup);
  auto lt = text_loss(out.logits, std::span<const int>(tg), std::span<const std::uint8_t>(sup));
  r.parts.text = static_cast<double>(lt.item());
  r.total = lt;
  if (lc.stage == Stage::Pretrain) {
    if (p.reg_tokens.defined()) {
      auto lr = m.projectors.reg_loss(tape, p.reg_tokens);
      r.parts.reg = static_cast<double>(lr.item());
      r.total = add(r.total, lr);
    }
  } else {
    const auto segs = seq.positions_of(m.vocab.seg);
    if (segs.size() != p.seg_targets.size())
      throw ContractError("sample " + std::to_string(p.id) + ": " + std::to_string(segs.size()) + " [SEG] tokens but " +
                          std::to_string(p.seg_targets.size()) + " targets");
    if (!segs.empty()) {
      const auto& dec = m.seg_decoder();
      Tensor<T> ce = Tensor<T>::scalar(T{0}), dice = Tensor<T>::scalar(T{0});
      for (std::size_t i = 0; i < segs.size(); ++i) {
        auto e = m.projectors.project_text(tape, lm::seg_hidden(out, segs[i], m.projectors.config().seg_source));
        auto logits = dec.decode_seg_embedding(tape, e, p.features);
        ce = add(ce, mask_ce_loss(logits, p.seg_targets[i]));
        dice = add(dice, dice_loss(logits, p.seg_targets[i]));
      }
      const T inv = T{1} / static_cast<T>(segs.size());
      ce = scale(ce, inv), dice = scale(dice, inv);
      r.parts.ce = static_cast<double>(ce.item());
      r.parts.dice = static_cast<double>(dice.item());
      r.total = add(r.total, add(scale(ce, static_cast<T>(lc.alpha)), scale(dice, static_cast<T>(lc.beta))));
    }
  }
  r.parts.total = static_cast<double>(r.total.item());
  return r;
}

struct StepRecord {
  std::size_t step = 0;
  Stage stage = Stage::Pretrain;
  LossParts loss;
  double lr = 0, grad_norm = 0;

  std::string to_json() const {
    nlohmann::json j{{"step", step},         {"stage", to_string(stage)}, {"L_text", loss.text},
                     {"L_reg", loss.reg},    {"L_CE", loss.ce},           {"L_dice", loss.dice},
                     {"total", loss.total},  {"lr", lr},                  {"grad_norm", grad_norm}};
    return j.dump();
  }
};

struct TrainOptions {
  std::size_t steps = 100, batch = 8, threads = 1;
  AdamConfig adam;
  LossConfig loss;
  std::uint64_t seed = 7;
  std::ostream* log = nullptr;  // one JSON line per step
};

inline TrainOptions stage_options(const RunConfig& c, Stage s) {
  const std::string k = to_string(s);
  TrainOptions o;
  o.steps = c.count(k + ".steps");
  o.batch = c.count(k + ".batch");
  if (o.batch == 0) throw ConfigError(k + ".batch must be positive");
  o.threads = std::max<std::size_t>(1, c.count("threads"));
  o.adam.lr = c.real(k + ".lr");
  o.adam.warmup_fraction = c.real("optim.warmup");
  o.adam.clip_norm = c.real("optim.clip");
  o.adam.total_steps = o.steps;
  o.loss.stage = s;
  o.loss.alpha = c.real("loss.alpha");
  o.loss.beta = c.real("loss.beta");
  o.loss.validate();
  o.seed = static_cast<std::uint64_t>(c.integer("seed")) * 2 + (s == Stage::Instruct);
  return o;
}

struct Diagnostic {
  std::size_t step = 0, sample = 0;
  LossParts loss;
};

// Thrown when a loss turns non-finite; carries the offending step.
struct TrainingAborted : NumericError {
  TrainingAborted(const std::string& what, Diagnostic d) : NumericError(what), diag(d) {}
  Diagnostic diag;
};

template <class T>
std::vector<StepRecord> train_stage(OmgLlava<T>& m, const std::vector<Prepared<T>>& data, const TrainOptions& o,
                                    const FreezePolicy& policy) {
  if (data.empty()) throw ContractError("train_stage: empty dataset");
  policy.apply(m, o.loss.stage);
  std::vector<ParamPtr<T>> params;
  for (const auto& p : m.store.all())
    if (p->trainable) params.push_back(p);
  Adam<T> opt(o.adam);
  std::mt19937_64 rng(o.seed);
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  std::vector<StepRecord> log;
  for (std::size_t step = 0; step < o.steps; ++step) {
    std::vector<std::size_t> batch;
    for (std::size_t b = 0; b < o.batch; ++b) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    std::vector<std::vector<std::vector<T>>> grads(batch.size());
    std::vector<LossParts> parts(batch.size());
    parallel_for(batch.size(), o.threads, [&](std::size_t b) {
      Tape<T> tape;
      auto l = sample_loss(tape, m, data[batch[b]], o.loss);
      parts[b] = l.parts;
      if (!std::isfinite(l.parts.total)) return;
      tape.backward(l.total);
      grads[b] = collect_grads(tape, params);
    });
    StepRecord rec;
    rec.step = step;
    rec.stage = o.loss.stage;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (!std::isfinite(parts[b].total)) {
        Diagnostic d{step, data[batch[b]].id, parts[b]};
        throw TrainingAborted(to_string(o.loss.stage) + ": non-finite loss at step " + std::to_string(step) +
                                  " on sample " + std::to_string(d.sample) + " (text " + std::to_string(d.loss.text) +
                                  ", reg " + std::to_string(d.loss.reg) + ", ce " + std::to_string(d.loss.ce) +
                                  ", dice " + std::to_string(d.loss.dice) + ")",
                              d);
      }
      rec.loss += parts[b];
    }
    rec.loss = rec.loss.scaled(1.0 / static_cast<double>(batch.size()));
    rec.lr = scheduled_lr(o.adam, step);
    auto g = reduce_grads(params, grads);
    rec.grad_norm = opt.step(params, g);
    if (o.log) *o.log << rec.to_json() << "\n";
    if (step % 100 == 0 || step + 1 == o.steps)
      log::debug(to_string(o.loss.stage) + " step " + std::to_string(step) + " total " +
                 std::to_string(rec.loss.total));
    log.push_back(rec);
  }
  for (auto& p : m.store.all()) p->trainable = false;
  return log;
}

// ---------------------------------------------------------------------------
// Inference

struct InferenceResult {
  std::vector<int> tokens;
  std::string text;
  std::vector<SegMask> masks;  // grid resolution, one per emitted [SEG]
  std::vector<std::string> phrases;
  bool hit_eos = false;
};

inline std::vector<std::string> phrases_from_tokens(const lm::Vocab& v, const std::vector<int>& toks) {
  std::vector<std::string> out;
  std::string cur;
  bool open = false;
  for (int t : toks) {
    if (t == v.p_open) {
      open = true;
      cur.clear();
    } else if (t == v.p_close) {
      if (open) out.push_back(cur);
      open = false;
    } else if (open) {
      cur += (cur.empty() ? "" : " ") + v.token(t);
    }
  }
  return out;
}

template <class T>
InferenceResult infer(const OmgLlava<T>& m, const Prepared<T>& p, std::size_t max_new) {
  InferenceResult r;
  Tape<T> tape(false);
  auto prefix = assemble(tape, m, p, false);
  auto g = lm::generate(m.llm, m.vocab, prefix, max_new, true);
  r.tokens = g.tokens;
  r.text = m.vocab.decode(g.tokens);
  r.hit_eos = g.hit_eos;
  r.phrases = phrases_from_tokens(m.vocab, g.tokens);
  if (!g.seg_positions.empty()) {
    auto out = m.llm.forward(tape, g.sequence, true);
    const auto gh = m.decoder.config().grid_h, gw = m.decoder.config().grid_w;
    for (auto pos : g.seg_positions) {
      auto e = m.projectors.project_text(tape, lm::seg_hidden(out, pos, m.projectors.config().seg_source));
      r.masks.push_back(perception::binarize(m.seg_decoder().decode_seg_embedding(tape, e, p.features), gh, gw));
    }
  }
  return r;
}

template <class T>
metrics::SampleRecord score(const OmgLlava<T>& m, const Prepared<T>& p, const InferenceResult& r) {
  metrics::SampleRecord rec;
  rec.id = p.id;
  rec.task = synth::to_string(p.task);
  rec.seg_emitted = r.masks.size();
  rec.seg_expected = p.seg_targets.size();
  rec.text_exact = r.tokens == p.answer_ids;
  rec.generated = r.text;
  const auto gh = m.decoder.config().grid_h, gw = m.decoder.config().grid_w;
  for (std::size_t i = 0; i < p.seg_targets.size(); ++i) {
    // a missing [SEG] scores as an empty mask
    const SegMask pred = i < r.masks.size() ? r.masks[i] : SegMask(gh, gw);
    rec.intersections.push_back(pred.intersection_count(p.seg_targets[i]));
    rec.unions.push_back(pred.union_count(p.seg_targets[i]));
  }
  if (p.task == synth::Task::Gcg) {
    std::vector<metrics::GroundedMask> pred, gt;
    for (std::size_t i = 0; i < r.masks.size(); ++i)
      pred.push_back({i < r.phrases.size() ? r.phrases[i] : std::string(), r.masks[i]});
    for (std::size_t i = 0; i < p.seg_targets.size(); ++i)
      gt.push_back({i < p.phrases.size() ? p.phrases[i] : std::string(), p.seg_targets[i]});
    const auto s = metrics::gcg_match_ap50(pred, gt);
    rec.ap50 = s.ap50;
    rec.miou = s.miou;
  }
  return rec;
}

template <class T>
metrics::EvalReport evaluate(const OmgLlava<T>& m, const std::vector<Prepared<T>>& data, std::size_t max_new,
                             std::size_t threads) {
  metrics::EvalReport rep;
  rep.records.resize(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { rep.records[i] = score(m, data[i], infer(m, data[i], max_new)); });
  return rep;
}

// ---------------------------------------------------------------------------
// Full pipeline

struct ComponentChecksums {
  std::uint64_t encoder = 0, decoder = 0, llm = 0, lora = 0, projectors = 0, decoder_ft = 0;

  template <class T>
  static ComponentChecksums of(const ParamStore<T>& s) {
    return {checksum(s, "enc."), checksum(s, "dec."),  checksum(s, "llm."),
            checksum(s, "lora."), checksum(s, "proj."), checksum(s, "dec_ft.")};
  }
};

struct PipelineResult {
  std::vector<StepRecord> pretrain_log, instruct_log;
  ComponentChecksums initial, after_pretrain, after_instruct;
  double pretrain_seconds = 0, instruct_seconds = 0;
};

template <class T>
PipelineResult run_pipeline(OmgLlava<T>& m, const std::vector<Prepared<T>>& pretrain_data,
                            const std::vector<Prepared<T>>& instruct_data, std::ostream* log = nullptr,
                            const std::function<void(Stage)>& after_stage = {}) {
  PipelineResult r;
  const auto policy = FreezePolicy::from(m.cfg);
  r.initial = ComponentChecksums::of(m.store);
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  auto po = stage_options(m.cfg, Stage::Pretrain);
  po.log = log;
  r.pretrain_log = train_stage(m, pretrain_data, po, policy);
  r.pretrain_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  r.after_pretrain = ComponentChecksums::of(m.store);
  if (after_stage) after_stage(Stage::Pretrain);
  m.duplicate_decoder();
  t0 = clock::now();
  auto io = stage_options(m.cfg, Stage::Instruct);
  io.log = log;
  r.instruct_log = train_stage(m, instruct_data, io, policy);
  r.instruct_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  r.after_instruct = ComponentChecksums::of(m.store);
  if (after_stage) after_stage(Stage::Instruct);
  return r;
}

}  // namespace omg
