#pragma once

// Base models that the two instruction stages start from: a perception model
// (encoder + decoder) trained on synthetic scenes with set matching, and a
// text-only LLM trained on the synthetic language. Both are cached on disk
// keyed by the configuration that shapes them.

#include <chrono>
#include <cstdio>
#include <filesystem>

#include "omg/hungarian.hpp"
#include "omg/log.hpp"
#include "omg/model.hpp"
#include "omg/optim.hpp"
#include "omg/parallel.hpp"
#include "omg/synth.hpp"

namespace omg {

// Gradients of every trainable parameter in `params` from one tape; empty
// vectors for parameters the loss did not reach.
template <class T>
std::vector<std::vector<T>> collect_grads(const Tape<T>& tape, const std::vector<ParamPtr<T>>& params) {
  std::vector<std::vector<T>> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->trainable) continue;
    const Tensor<T>* t = tape.find_bound(params[i].get());
    if (t && t->has_grad()) g[i].assign(t->grad().begin(), t->grad().end());
  }
  return g;
}

// Sums per-sample gradients in sample order and divides by the batch size.
template <class T>
std::vector<std::vector<T>> reduce_grads(const std::vector<ParamPtr<T>>& params,
                                         std::vector<std::vector<std::vector<T>>>& per_sample) {
  std::vector<std::vector<T>> acc(params.size());
  for (auto& sample : per_sample)
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (sample[i].empty()) continue;
      if (acc[i].empty()) acc[i].assign(sample[i].size(), T{0});
      for (std::size_t j = 0; j < acc[i].size(); ++j) acc[i][j] += sample[i][j];
    }
  const T inv = T{1} / static_cast<T>(std::max<std::size_t>(1, per_sample.size()));
  for (auto& a : acc)
    for (auto& x : a) x *= inv;
  return acc;
}

// ---------------------------------------------------------------------------
// Perception model

template <class T>
struct PerceptionLoss {
  Tensor<T> total;
  double mask = 0, cls = 0;
};

// Set-prediction loss over every decoder layer: learnable queries are matched
// to objects by minimum cost (class probability, mask BCE, dice); prompt
// queries are supervised by the object they point at.
template <class T>
PerceptionLoss<T> perception_loss(const perception::ObjectQuerySet<T>& qs, const std::vector<SegMask>& gt_masks,
                                  const std::vector<int>& gt_classes, const std::vector<int>& prompt_targets,
                                  std::size_t num_learnable, std::size_t num_classes) {
  PerceptionLoss<T> out;
  const std::size_t G = gt_masks.size(), N = num_learnable, Nq = qs.size();
  std::vector<std::vector<T>> gt_t;
  for (const auto& m : gt_masks) gt_t.push_back(mask_targets<T>(m));
  Tensor<T> total = Tensor<T>::scalar(T{0});
  for (const auto& layer : qs.layers) {
    const std::size_t HW = layer.mask_logits.dim(1);
    // matching cost on current values
    std::vector<double> cost(G * N, 0.0);
    for (std::size_t g = 0; g < G; ++g)
      for (std::size_t q = 0; q < N; ++q) {
        const T* ml = layer.mask_logits.ptr() + q * HW;
        double bce = 0, inter = 0, ps = 0, gs = 0;
        for (std::size_t i = 0; i < HW; ++i) {
          const double x = ml[i], y = gt_t[g][i];
          bce += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
          const double p = 1.0 / (1.0 + std::exp(-x));
          inter += p * y, ps += p, gs += y;
        }
        const double cls = 1.0 / (1.0 + std::exp(-static_cast<double>(layer.class_logits.at(q, gt_classes[g]))));
        cost[g * N + q] = -cls + bce / static_cast<double>(HW) + (1.0 - (2 * inter + 1) / (ps + gs + 1));
      }
    const auto assign = hungarian(cost, G, N);
    std::vector<T> cls_target(Nq * num_classes, T{0});
    std::vector<Tensor<T>> mask_terms;
    auto add_mask = [&](std::size_t q, std::size_t g) {
      auto row = slice(layer.mask_logits, 0, q, q + 1);
      auto flat = reshape(row, Shape{HW});
      mask_terms.push_back(add(bce_with_logits(flat, std::span<const T>(gt_t[g])),
                               dice_with_logits(flat, std::span<const T>(gt_t[g]))));
      cls_target[q * num_classes + static_cast<std::size_t>(gt_classes[g])] = T{1};
    };
    for (std::size_t g = 0; g < G; ++g) add_mask(static_cast<std::size_t>(assign[g]), g);
    for (std::size_t i = 0; i < prompt_targets.size(); ++i) add_mask(N + i, static_cast<std::size_t>(prompt_targets[i]));
    Tensor<T> mask_loss = Tensor<T>::scalar(T{0});
    for (auto& t : mask_terms) mask_loss = add(mask_loss, t);
    if (!mask_terms.empty()) mask_loss = scale(mask_loss, T{1} / static_cast<T>(mask_terms.size()));
    auto cls_loss = scale(bce_with_logits(reshape(layer.class_logits, Shape{Nq * num_classes}),
                                          std::span<const T>(cls_target)),
                          static_cast<T>(num_classes));
    out.mask += static_cast<double>(mask_loss.item());
    out.cls += static_cast<double>(cls_loss.item());
    total = add(total, add(mask_loss, cls_loss));
  }
  const T inv = T{1} / static_cast<T>(qs.layers.size());
  out.total = scale(total, inv);
  out.mask *= static_cast<double>(inv), out.cls *= static_cast<double>(inv);
  return out;
}

struct PerceptionTask {
  synth::Scene scene;
  std::vector<perception::VisualPrompt> prompts;
  std::vector<int> prompt_targets;
};

inline PerceptionTask perception_task(std::mt19937_64& rng, std::size_t image_size, std::size_t max_prompts,
                                      std::size_t ds) {
  PerceptionTask t;
  synth::SceneConfig sc;
  sc.image_size = image_size;
  t.scene = synth::make_scene(rng, sc);
  const std::size_t n = std::uniform_int_distribution<std::size_t>(0, std::min<std::size_t>(2, max_prompts))(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = std::uniform_int_distribution<std::size_t>(0, t.scene.objects.size() - 1)(rng);
    t.prompts.push_back(synth::random_prompt(t.scene.objects[k], rng, ds));
    t.prompt_targets.push_back(static_cast<int>(k));
  }
  return t;
}

template <class T>
void train_perception(OmgLlava<T>& m, std::size_t steps, std::size_t batch, double lr, std::uint64_t seed,
                      std::size_t threads) {
  const auto& dc = m.decoder.config();
  const std::size_t ds = dc.downsample;
  std::vector<ParamPtr<T>> params;
  for (const auto& p : m.store.all())
    if (p->name.rfind("enc.", 0) == 0 || p->name.rfind("dec.", 0) == 0) params.push_back(p);
  for (auto& p : params) p->trainable = true;
  AdamConfig ac;
  ac.lr = lr;
  ac.total_steps = steps;
  Adam<T> opt(ac);
  std::mt19937_64 rng(seed);
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<PerceptionTask> tasks;
    for (std::size_t b = 0; b < batch; ++b)
      tasks.push_back(perception_task(rng, m.cfg.count("image_size"), dc.max_prompts, ds));
    std::vector<std::vector<std::vector<T>>> grads(batch);
    std::vector<double> losses(batch);
    parallel_for(batch, threads, [&](std::size_t b) {
      const auto& t = tasks[b];
      Tape<T> tape;
      auto f = m.encoder.encode(tape, t.scene.image);
      auto qs = m.decoder.decode(tape, f, t.prompts);
      std::vector<SegMask> gm;
      std::vector<int> gc;
      for (const auto& o : t.scene.objects) gm.push_back(synth::grid_mask(o.mask, ds)), gc.push_back(synth::object_class(o, dc.num_classes));
      auto loss = perception_loss(qs, gm, gc, t.prompt_targets, dc.learnable_queries, dc.num_classes);
      tape.backward(loss.total);
      losses[b] = static_cast<double>(loss.total.item());
      grads[b] = collect_grads(tape, params);
    });
    double mean = 0;
    for (double l : losses) mean += l / static_cast<double>(batch);
    if (!std::isfinite(mean)) throw NumericError("perception training: non-finite loss at step " + std::to_string(step));
    auto g = reduce_grads(params, grads);
    opt.step(params, g);
    if (step % 250 == 0 || step + 1 == steps)
      log::info("perception step " + std::to_string(step) + " loss " + std::to_string(mean));
  }
}

// ---------------------------------------------------------------------------
// Text-only LLM

// Stand-in rows for the visual and prompt tokens so the language model sees
// sequences of the instruction layout; their content carries no information.
template <class T>
Tensor<T> filler_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 0.5);
  std::vector<T> v(n * d);
  for (auto& x : v) x = static_cast<T>(nd(rng));
  return Tensor<T>(Shape{n, d}, std::move(v));
}

template <class T>
void train_text_llm(OmgLlava<T>& m, std::size_t steps, std::size_t batch, double lr, std::uint64_t seed,
                    std::size_t threads) {
  std::vector<ParamPtr<T>> params;
  for (const auto& p : m.store.all())
    if (p->name.rfind("llm.", 0) == 0) params.push_back(p);
  for (auto& p : params) p->trainable = true;
  AdamConfig ac;
  ac.lr = lr;
  ac.total_steps = steps;
  Adam<T> opt(ac);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  const synth::TaskMix mix{{synth::Task::Caption, 1},   {synth::Task::Conversation, 1}, {synth::Task::RegionCaption, 1},
                           {synth::Task::Res, 2},       {synth::Task::Semseg, 1},       {synth::Task::Gcg, 1}};
  const auto& dc = m.decoder.config();
  const std::size_t pixels = dc.grid_h * dc.grid_w, D = m.llm.config().dim;
  synth::SceneConfig scfg;
  scfg.image_size = m.cfg.count("image_size");
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<lm::TokenSequence<T>> seqs;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto task = synth::draw_task(mix, rng);
      auto s = synth::make_sample(synth::make_scene(rng, scfg), task, rng);
      const std::size_t objects = std::uniform_int_distribution<std::size_t>(0, 5)(rng);
      auto visual = filler_rows<T>(pixels + objects, D, rng);
      Tensor<T> regions;
      if (!s.visual_prompts.empty()) regions = filler_rows<T>(s.visual_prompts.size(), D, rng);
      seqs.push_back(lm::build_instruction(m.vocab, m.vocab.encode(s.prompt), visual, pixels, regions,
                                           m.vocab.encode(s.answer), m.llm.config().max_seq));
    }
    std::vector<std::vector<std::vector<T>>> grads(batch);
    std::vector<double> losses(batch);
    parallel_for(batch, threads, [&](std::size_t b) {
      Tape<T> tape;
      auto out = m.llm.forward(tape, seqs[b], false);
      std::vector<int> tg;
      std::vector<std::uint8_t> sup;
      lm::answer_targets(seqs[b], tg, sup);
      auto loss = text_loss(out.logits, std::span<const int>(tg), std::span<const std::uint8_t>(sup));
      tape.backward(loss);
      losses[b] = static_cast<double>(loss.item());
      grads[b] = collect_grads(tape, params);
    });
    double mean = 0;
    for (double l : losses) mean += l / static_cast<double>(batch);
    if (!std::isfinite(mean)) throw NumericError("LLM training: non-finite loss at step " + std::to_string(step));
    auto g = reduce_grads(params, grads);
    opt.step(params, g);
    if (step % 250 == 0 || step + 1 == steps)
      log::info("text llm step " + std::to_string(step) + " loss " + std::to_string(mean));
  }
}

// ---------------------------------------------------------------------------
// Cache

inline std::string hex_key(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string perception_base_path(const RunConfig& c) {
  const auto key = fnv1a(c.subset({"image_size", "encoder.", "decoder.", "base.seed", "base.perception"}));
  return (std::filesystem::path(c.str("base.dir")) / ("perception-" + hex_key(key) + ".omgt")).string();
}

inline std::string llm_base_path(const RunConfig& c) {
  const auto key = fnv1a(c.subset({"image_size", "encoder.", "decoder.", "llm.", "base.seed", "base.llm"}) +
                         lm::Vocab().serialize());
  return (std::filesystem::path(c.str("base.dir")) / ("llm-" + hex_key(key) + ".omgt")).string();
}

template <class T>
void save_prefixes(const OmgLlava<T>& m, const std::string& path, const std::vector<std::string>& prefixes) {
  std::vector<NamedTensor> keep;
  for (auto& e : to_entries(m.store))
    for (const auto& p : prefixes)
      if (e.name.rfind(p, 0) == 0) {
        keep.push_back(e);
        break;
      }
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  const auto tmp = path + ".tmp";
  write_file(tmp, encode_container(keep));
  std::filesystem::rename(tmp, path);
}

// Loads the base perception model and base LLM into `m`, training and caching
// whichever is missing.
template <class T>
void load_base_models(OmgLlava<T>& m, std::size_t threads) {
  const auto& c = m.cfg;
  const auto pp = perception_base_path(c), lp = llm_base_path(c);
  const std::uint64_t seed = static_cast<std::uint64_t>(c.integer("base.seed"));
  RunConfig bc = c;
  bc.set("seed", c.str("base.seed"));
  if (!std::filesystem::exists(pp)) {
    log::info("training base perception model -> " + pp);
    OmgLlava<T> base(bc);
    train_perception(base, c.count("base.perception_steps"), c.count("base.perception_batch"),
                     c.real("base.perception_lr"), seed, threads);
    save_prefixes(base, pp, {"enc.", "dec."});
  }
  if (!std::filesystem::exists(lp)) {
    log::info("training base LLM -> " + lp);
    OmgLlava<T> base(bc);
    train_text_llm(base, c.count("base.llm_steps"), c.count("base.llm_batch"), c.real("base.llm_lr"), seed, threads);
    save_prefixes(base, lp, {"llm."});
  }
  const auto pe = decode_container(read_file(pp));
  const auto le = decode_container(read_file(lp));
  if (load_entries(m.store, pe) != pe.size() || load_entries(m.store, le) != le.size())
    throw ParseError("base model files do not match the model layout");
}

}  // namespace omg
