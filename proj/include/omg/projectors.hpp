#pragma once

// Bridges between the visual space (width C) and the LLM embedding space
// (width D): visual projectors for pixel-centric and object-centric tokens,
// and the text projector that maps [SEG] hidden states back to visual space.

#include <string>
#include <vector>

#include "omg/perception_prior.hpp"

namespace omg {

// Which projector handles which token family.
//   Separate:     pixel, object-query and prompt tokens each get their own MLP
//   Object:       one MLP for all object-centric tokens (queries and prompts)
//   ObjectPixel:  one MLP for everything
enum class ProjectorSharing { Separate, Object, ObjectPixel };

inline ProjectorSharing parse_sharing(const std::string& s) {
  if (s == "separate") return ProjectorSharing::Separate;
  if (s == "O") return ProjectorSharing::Object;
  if (s == "O&P") return ProjectorSharing::ObjectPixel;
  throw ConfigError("unknown projector sharing '" + s + "' (separate|O|O&P)");
}

inline std::string to_string(ProjectorSharing s) {
  switch (s) {
    case ProjectorSharing::Separate: return "separate";
    case ProjectorSharing::Object: return "O";
    case ProjectorSharing::ObjectPixel: return "O&P";
  }
  return "?";
}

// Which LLM hidden states feed the text projector.
enum class SegSource { Last, Mean, Concat };

inline SegSource parse_seg_source(const std::string& s) {
  if (s == "last") return SegSource::Last;
  if (s == "mean") return SegSource::Mean;
  if (s == "concat") return SegSource::Concat;
  throw ConfigError("unknown seg source '" + s + "' (last|mean|concat)");
}

inline std::string to_string(SegSource s) {
  switch (s) {
    case SegSource::Last: return "last";
    case SegSource::Mean: return "mean";
    case SegSource::Concat: return "concat";
  }
  return "?";
}

struct ProjectorConfig {
  std::size_t visual_dim = 32;  // C
  std::size_t llm_dim = 64;     // D
  std::size_t llm_layers = 2;   // for Concat input width
  ProjectorSharing sharing = ProjectorSharing::Object;
  SegSource seg_source = SegSource::Last;

  std::size_t text_in_dim() const { return seg_source == SegSource::Concat ? llm_layers * llm_dim : llm_dim; }
};

template <class T>
class Projectors {
 public:
  Projectors() = default;
  Projectors(ParamStore<T>& store, ProjectorConfig cfg, Rng& rng) : cfg_(cfg) {
    const auto C = cfg_.visual_dim, D = cfg_.llm_dim;
    pixel_ = Mlp<T>(store, "proj.v_pixel", C, D, D, rng);
    object_ = Mlp<T>(store, "proj.v_object", C, D, D, rng);
    prompt_ = Mlp<T>(store, "proj.v_prompt", C, D, D, rng);
    text_ = Mlp<T>(store, "proj.t", cfg_.text_in_dim(), D, C, rng);
  }

  const ProjectorConfig& config() const { return cfg_; }

  const Mlp<T>& pixel_mlp() const { return cfg_.sharing == ProjectorSharing::ObjectPixel ? object_ : pixel_; }
  const Mlp<T>& object_mlp() const { return object_; }
  const Mlp<T>& prompt_mlp() const { return cfg_.sharing == ProjectorSharing::Separate ? prompt_ : object_; }
  const Mlp<T>& text_mlp() const { return text_; }

  // [HW + K, D]: pixel-centric rows first, then object-centric rows.
  Tensor<T> project_visual(Tape<T>& tape, const perception::VisualTokens<T>& tv) const {
    check_visual(tv.pixel);
    auto px = pixel_mlp()(tape, tv.pixel);
    if (tv.object_count() == 0) return px;
    check_visual(tv.object);
    return concat(std::vector<Tensor<T>>{px, object_mlp()(tape, tv.object)}, 0);
  }

  // Prompt-derived object tokens [n, C] -> [n, D].
  Tensor<T> project_prompt(Tape<T>& tape, const Tensor<T>& tokens) const {
    check_visual(tokens);
    return prompt_mlp()(tape, tokens);
  }

  // [SEG] hidden state(s) [1, text_in_dim] -> visual-space embedding [1, C].
  Tensor<T> project_text(Tape<T>& tape, const Tensor<T>& h) const {
    auto row = reshape(h, Shape{1, h.size()});
    if (row.dim(1) != cfg_.text_in_dim())
      throw DimensionError("project_text: input width " + std::to_string(row.dim(1)) + ", expected " +
                           std::to_string(cfg_.text_in_dim()));
    return text_(tape, row);
  }

  // Mean squared round-trip error of object tokens through P_v then P_t.
  Tensor<T> reg_loss(Tape<T>& tape, const Tensor<T>& t_ov) const {
    if (!t_ov.defined() || t_ov.size() == 0) return Tensor<T>::scalar(T{0});
    check_visual(t_ov);
    auto v = object_mlp()(tape, t_ov);
    if (cfg_.seg_source == SegSource::Concat) {
      // the text projector reads one copy of the state per LLM layer
      v = concat(std::vector<Tensor<T>>(cfg_.llm_layers, v), 1);
    }
    return mse(text_(tape, v), t_ov);
  }

 private:
  void check_visual(const Tensor<T>& t) const {
    if (t.rank() != 2 || t.dim(1) != cfg_.visual_dim)
      throw DimensionError("projector: visual tokens " + shape_str(t.shape()) + " but visual width is " +
                           std::to_string(cfg_.visual_dim));
  }

  ProjectorConfig cfg_;
  Mlp<T> pixel_, object_, prompt_, text_;
};

}  // namespace omg
