#pragma once

// Training objectives.
//   pretrain:  L_text + L_reg
//   instruct:  L_text + alpha * L_CE + beta * L_dice

#include <string>
#include <vector>

#include "omg/mask.hpp"
#include "omg/ops.hpp"

namespace omg {

enum class Stage { Pretrain, Instruct };

inline std::string to_string(Stage s) { return s == Stage::Pretrain ? "pretrain" : "instruct"; }

inline Stage parse_stage(const std::string& s) {
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "instruct") return Stage::Instruct;
  throw ConfigError("unknown stage '" + s + "' (pretrain|instruct)");
}

struct LossConfig {
  Stage stage = Stage::Pretrain;
  double alpha = 1.0;  // mask cross-entropy weight
  double beta = 1.0;   // dice weight

  void validate() const {
    if (stage == Stage::Instruct && !(alpha > 0 && beta > 0))
      throw ConfigError("instruct stage needs positive loss.alpha and loss.beta");
  }
};

template <class T>
std::vector<T> mask_targets(const SegMask& gt) {
  std::vector<T> t(gt.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = gt.test(i) ? T{1} : T{0};
  return t;
}

// Mean cross-entropy over the supervised (answer) positions.
template <class T>
Tensor<T> text_loss(const Tensor<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> supervise) {
  return cross_entropy(logits, targets, supervise);
}

template <class T>
Tensor<T> mask_ce_loss(const Tensor<T>& logits, const SegMask& gt) {
  if (logits.size() != gt.size())
    throw DimensionError("mask_ce_loss: " + std::to_string(logits.size()) + " logits vs mask of " +
                         std::to_string(gt.size()));
  const auto t = mask_targets<T>(gt);
  return bce_with_logits(reshape(logits, Shape{logits.size()}), std::span<const T>(t));
}

template <class T>
Tensor<T> dice_loss(const Tensor<T>& logits, const SegMask& gt, T eps = T{1}) {
  if (logits.size() != gt.size())
    throw DimensionError("dice_loss: " + std::to_string(logits.size()) + " logits vs mask of " +
                         std::to_string(gt.size()));
  const auto t = mask_targets<T>(gt);
  return dice_with_logits(reshape(logits, Shape{logits.size()}), std::span<const T>(t), eps);
}

// Loss components of one sample or step; `total` is the weighted sum.
struct LossParts {
  double text = 0, reg = 0, ce = 0, dice = 0, total = 0;

  LossParts& operator+=(const LossParts& o) {
    text += o.text, reg += o.reg, ce += o.ce, dice += o.dice, total += o.total;
    return *this;
  }
  LossParts scaled(double s) const { return {text * s, reg * s, ce * s, dice * s, total * s}; }
};

}  // namespace omg
