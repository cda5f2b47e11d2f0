#pragma once

// Flat key=value run configuration. Every key has a documented default and
// unknown keys are rejected.

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "omg/error.hpp"

namespace omg {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* doc;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "7", "run seed: projector/adapter init, batch order"},
      {"image_size", "64", "square input image side in pixels"},
      {"encoder.patch_stride", "4", "pixels per cell before pixel shuffle"},
      {"encoder.shuffle", "2", "pixel shuffle factor"},
      {"encoder.stage_channels", "16,32", "channels of each conv stage"},
      {"encoder.out_channels", "32", "visual feature width C"},
      {"decoder.layers", "3", "decoder layers"},
      {"decoder.queries", "8", "learnable object queries"},
      {"decoder.heads", "4", "decoder attention heads"},
      {"decoder.ffn_hidden", "64", "decoder FFN width"},
      {"decoder.classes", "24", "object categories: 24 (color and shape) or 4 (shape)"},
      {"decoder.max_prompts", "4", "visual prompts per image"},
      {"llm.dim", "64", "LLM width D"},
      {"llm.layers", "2", "LLM blocks"},
      {"llm.heads", "4", "LLM attention heads"},
      {"llm.ffn_hidden", "256", "LLM FFN width"},
      {"llm.max_seq", "256", "maximum sequence length"},
      {"lora.rank", "8", "adapter rank r"},
      {"lora.alpha", "16", "adapter alpha; scale = alpha / r"},
      {"prior.strategy", "softmax", "mask-score normalization: none|softmax|argmax|l1norm"},
      {"prior.mask_input", "sigmoid", "mask term in the score: sigmoid|logits"},
      {"prior.tau", "0.3", "foreground score threshold for object tokens"},
      {"prior.max_objects", "20", "cap on object-centric tokens"},
      {"prior.object_tokens", "true", "append object-centric tokens after pixel tokens"},
      {"projector.sharing", "O", "projector sharing: separate|O|O&P"},
      {"projector.seg_source", "last", "hidden states for [SEG]: last|mean|concat"},
      {"loss.alpha", "1", "mask cross-entropy weight"},
      {"loss.beta", "1", "dice weight"},
      {"pretrain.mix", "same", "pretraining corpus: same (the training corpus) or a task mix"},
      {"pretrain.steps", "500", "pretraining optimizer steps"},
      {"pretrain.lr", "1e-3", "pretraining peak learning rate"},
      {"pretrain.batch", "8", "pretraining samples per step"},
      {"instruct.steps", "2000", "instruction tuning optimizer steps"},
      {"instruct.lr", "1e-3", "instruction tuning peak learning rate"},
      {"instruct.batch", "8", "instruction tuning samples per step"},
      {"optim.warmup", "0.03", "fraction of steps with linear warmup"},
      {"optim.clip", "1.0", "global gradient norm clip (0 disables)"},
      {"freeze.encoder", "true", "encoder frozen in both stages"},
      {"freeze.decoder", "true", "decoder frozen in both stages"},
      {"freeze.llm", "true", "base LLM weights frozen in both stages"},
      {"decoder_finetune", "frozen", "frozen|duplicate_unfrozen (trainable copy decodes [SEG])"},
      {"base.dir", "base_models", "cache directory for the base perception model and LLM"},
      {"base.seed", "1234", "seed for the base models"},
      {"base.perception_steps", "6000", "perception model training steps"},
      {"base.perception_batch", "8", "perception model scenes per step"},
      {"base.perception_lr", "2e-3", "perception model learning rate"},
      {"base.llm_steps", "1500", "text-only LLM training steps"},
      {"base.llm_batch", "8", "text-only LLM samples per step"},
      {"base.llm_lr", "2e-3", "text-only LLM learning rate"},
      {"data.size", "32", "samples generated by cmd gen / training when no corpus is given"},
      {"data.mix", "res:1", "task mix as task:weight,..."},
      {"data.seed", "11", "corpus seed"},
      {"eval.size", "64", "held-out samples for evaluation and ablations"},
      {"eval.seed", "1011", "held-out corpus seed"},
      {"eval.max_new", "48", "maximum generated tokens"},
      {"threads", "1", "worker threads for per-sample work"},
  };
  return keys;
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
  }

  static RunConfig parse(const std::string& text) {
    RunConfig c;
    std::istringstream is(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
      ++n;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key=value");
      const auto key = trim(line.substr(0, eq));
      if (!c.values_.count(key)) throw ConfigError("config line " + std::to_string(n) + ": unknown key '" + key + "'");
      c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  // Applies "key=value" overrides.
  void apply(const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("override '" + o + "' must be key=value");
      set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  long long integer(const std::string& key) const {
    const auto& v = str(key);
    try {
      std::size_t used = 0;
      const long long x = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
    }
  }

  std::size_t count(const std::string& key) const {
    const auto x = integer(key);
    if (x < 0) throw ConfigError("config key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(x);
  }

  double real(const std::string& key) const {
    const auto& v = str(key);
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
    }
  }

  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "' expects true|false, got '" + v + "'");
  }

  std::vector<std::size_t> counts(const std::string& key) const {
    std::vector<std::size_t> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(static_cast<std::size_t>(std::stoul(trim(item))));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects a comma list of integers");
      }
    }
    return out;
  }

  std::string serialize() const {
    std::string s;
    for (const auto& k : config_keys()) s += std::string(k.name) + "=" + values_.at(k.name) + "\n";
    return s;
  }

  // key=value lines restricted to the given key prefixes, for cache keys.
  std::string subset(const std::vector<std::string>& prefixes) const {
    std::string s;
    for (const auto& k : config_keys())
      for (const auto& p : prefixes)
        if (std::string(k.name).rfind(p, 0) == 0) {
          s += std::string(k.name) + "=" + values_.at(k.name) + "\n";
          break;
        }
    return s;
  }

  bool operator==(const RunConfig&) const = default;

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

}  // namespace omg
