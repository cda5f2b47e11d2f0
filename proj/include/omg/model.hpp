#pragma once

// The assembled model: perception encoder and decoder, projectors, the toy
// LLM with adapters, and an optional trainable copy of the decoder. Built
// from a RunConfig; saved as a tensor container plus a config snapshot.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "omg/checkpoint.hpp"
#include "omg/config.hpp"
#include "omg/llm.hpp"
#include "omg/losses.hpp"
#include "omg/perception_prior.hpp"
#include "omg/projectors.hpp"

namespace omg {

inline perception::EncoderConfig encoder_config(const RunConfig& c) {
  perception::EncoderConfig e;
  e.patch_stride = c.count("encoder.patch_stride");
  e.shuffle_factor = c.count("encoder.shuffle");
  e.stage_channels = c.counts("encoder.stage_channels");
  e.out_channels = c.count("encoder.out_channels");
  e.stage_strides();
  e.validate_image(c.count("image_size"), c.count("image_size"));
  return e;
}

inline perception::DecoderConfig decoder_config(const RunConfig& c) {
  const auto e = encoder_config(c);
  perception::DecoderConfig d;
  d.channels = e.out_channels;
  d.layers = c.count("decoder.layers");
  d.learnable_queries = c.count("decoder.queries");
  d.heads = c.count("decoder.heads");
  d.ffn_hidden = c.count("decoder.ffn_hidden");
  d.num_classes = c.count("decoder.classes");
  d.max_prompts = c.count("decoder.max_prompts");
  d.downsample = e.total_downsample();
  d.grid_h = d.grid_w = c.count("image_size") / d.downsample;
  return d;
}

inline lm::LlmConfig llm_config(const RunConfig& c, const lm::Vocab& vocab) {
  lm::LlmConfig l;
  l.vocab = static_cast<std::size_t>(vocab.size());
  l.dim = c.count("llm.dim");
  l.layers = c.count("llm.layers");
  l.heads = c.count("llm.heads");
  l.ffn_hidden = c.count("llm.ffn_hidden");
  l.max_seq = c.count("llm.max_seq");
  l.lora_rank = c.count("lora.rank");
  l.lora_alpha = c.real("lora.alpha");
  if (l.lora_rank == 0) throw ConfigError("lora.rank must be positive");
  return l;
}

inline ProjectorConfig projector_config(const RunConfig& c) {
  ProjectorConfig p;
  p.visual_dim = c.count("encoder.out_channels");
  p.llm_dim = c.count("llm.dim");
  p.llm_layers = c.count("llm.layers");
  p.sharing = parse_sharing(c.str("projector.sharing"));
  p.seg_source = parse_seg_source(c.str("projector.seg_source"));
  return p;
}

struct PriorConfig {
  perception::PriorStrategy strategy = perception::PriorStrategy::Softmax;
  perception::MaskInput mask_input = perception::MaskInput::Sigmoid;
  double tau = 0.3;
  std::size_t max_objects = 20;
  bool object_tokens = true;
};

inline PriorConfig prior_config(const RunConfig& c) {
  PriorConfig p;
  p.strategy = perception::parse_strategy(c.str("prior.strategy"));
  const auto mi = c.str("prior.mask_input");
  if (mi == "sigmoid") p.mask_input = perception::MaskInput::Sigmoid;
  else if (mi == "logits") p.mask_input = perception::MaskInput::Logits;
  else throw ConfigError("prior.mask_input must be sigmoid|logits");
  p.tau = c.real("prior.tau");
  p.max_objects = c.count("prior.max_objects");
  p.object_tokens = c.flag("prior.object_tokens");
  return p;
}

inline bool decoder_duplicated(const RunConfig& c) {
  const auto& v = c.str("decoder_finetune");
  if (v == "frozen") return false;
  if (v == "duplicate_unfrozen") return true;
  throw ConfigError("decoder_finetune must be frozen|duplicate_unfrozen");
}

template <class T>
struct OmgLlava {
  RunConfig cfg;
  lm::Vocab vocab;
  ParamStore<T> store;
  perception::VisualEncoder<T> encoder;
  perception::OmgDecoder<T> decoder;
  std::optional<perception::OmgDecoder<T>> decoder_ft;
  lm::ToyLlm<T> llm;
  Projectors<T> projectors;
  PriorConfig prior;

  explicit OmgLlava(RunConfig c) : cfg(std::move(c)) {
    Rng rng(static_cast<std::uint64_t>(cfg.integer("seed")));
    encoder = perception::VisualEncoder<T>(store, encoder_config(cfg), rng);
    decoder = perception::OmgDecoder<T>(store, decoder_config(cfg), rng);
    llm = lm::ToyLlm<T>(store, llm_config(cfg, vocab), rng, true);
    projectors = Projectors<T>(store, projector_config(cfg), rng);
    prior = prior_config(cfg);
    decoder_duplicated(cfg);
  }
  OmgLlava(const OmgLlava&) = delete;
  OmgLlava& operator=(const OmgLlava&) = delete;

  // Creates the trainable decoder copy from the current decoder weights.
  void duplicate_decoder() {
    if (decoder_duplicated(cfg) && !decoder_ft) decoder_ft = decoder.duplicate(store, "dec_ft");
  }

  const perception::OmgDecoder<T>& seg_decoder() const { return decoder_ft ? *decoder_ft : decoder; }

  std::size_t grid() const { return decoder.config().grid_h; }
  std::size_t downsample() const { return decoder.config().downsample; }
};

// ---------------------------------------------------------------------------
// Checkpoints: PATH holds the tensors, PATH.cfg the config and stage marker.

template <class T>
void save_checkpoint(const OmgLlava<T>& m, const std::string& path, const std::string& stage) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  write_file(path, encode_container(to_entries(m.store)));
  write_file(path + ".cfg", m.cfg.serialize() + "stage=" + stage + "\n");
}

struct CheckpointMeta {
  RunConfig cfg;
  std::string stage;
};

inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  if (!std::filesystem::exists(path) || !std::filesystem::exists(path + ".cfg"))
    throw IoError("checkpoint not found: " + path + " (and " + path + ".cfg)");
  const auto text = read_file(path + ".cfg");
  std::string body, stage;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("stage=", 0) == 0) stage = line.substr(6);
    else body += line + "\n";
  }
  if (stage.empty()) throw ParseError("checkpoint config lacks a stage= line: " + path + ".cfg");
  return {RunConfig::parse(body), stage};
}

template <class T>
std::unique_ptr<OmgLlava<T>> load_checkpoint(const std::string& path, std::string* stage = nullptr) {
  auto meta = read_checkpoint_meta(path);
  auto m = std::make_unique<OmgLlava<T>>(meta.cfg);
  if (meta.stage != "pretrain") m->duplicate_decoder();
  load_entries(m->store, decode_container(read_file(path)), true);
  if (stage) *stage = meta.stage;
  return m;
}

}  // namespace omg
