#pragma once

// Segmentation metrics: cumulative IoU, mean per-sample IoU, and the grounded
// caption matching protocol (AP at IoU 0.5 with phrase agreement).

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "omg/error.hpp"
#include "omg/mask.hpp"

namespace omg::metrics {

struct MaskPair {
  SegMask pred, gt;
};

// Sum of intersections over sum of unions. All-empty sets score 1.
inline double ciou(const std::vector<MaskPair>& pairs) {
  std::size_t inter = 0, uni = 0;
  for (const auto& p : pairs) {
    inter += p.pred.intersection_count(p.gt);
    uni += p.pred.union_count(p.gt);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double giou_mean(const std::vector<MaskPair>& pairs) {
  if (pairs.empty()) throw ContractError("giou_mean: empty set");
  double s = 0;
  for (const auto& p : pairs) s += p.pred.iou(p.gt);
  return s / static_cast<double>(pairs.size());
}

inline std::string normalize_phrase(const std::string& s) {
  std::string out;
  bool space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

struct GroundedMask {
  std::string phrase;
  SegMask mask;
};

struct GcgScore {
  double ap50 = 0, miou = 0;
  std::size_t true_positives = 0;
  std::vector<int> match;  // gt index matched to each prediction, -1 if none
};

// Greedy one-to-one matching by descending IoU (ties: lower prediction index,
// then lower gt index). Predictions are ranked in the order given.
inline GcgScore gcg_match_ap50(const std::vector<GroundedMask>& pred, const std::vector<GroundedMask>& gt) {
  GcgScore r;
  r.match.assign(pred.size(), -1);
  if (gt.empty()) {
    r.ap50 = r.miou = pred.empty() ? 1.0 : 0.0;
    return r;
  }
  struct Cand {
    double iou;
    std::size_t p, g;
  };
  std::vector<Cand> cands;
  for (std::size_t p = 0; p < pred.size(); ++p)
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double v = pred[p].mask.iou(gt[g].mask);
      if (v > 0) cands.push_back({v, p, g});
    }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.iou > b.iou; });
  std::vector<char> gt_used(gt.size(), 0);
  std::vector<double> matched_iou(pred.size(), 0.0);
  for (const auto& c : cands) {
    if (r.match[c.p] >= 0 || gt_used[c.g]) continue;
    r.match[c.p] = static_cast<int>(c.g);
    gt_used[c.g] = 1;
    matched_iou[c.p] = c.iou;
  }
  double iou_sum = 0, ap = 0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    iou_sum += matched_iou[p];
    const bool tp = r.match[p] >= 0 && matched_iou[p] >= 0.5 &&
                    normalize_phrase(pred[p].phrase) == normalize_phrase(gt[static_cast<std::size_t>(r.match[p])].phrase);
    if (tp) {
      ++r.true_positives;
      ap += static_cast<double>(r.true_positives) / static_cast<double>(p + 1);
    }
  }
  r.ap50 = ap / static_cast<double>(gt.size());
  r.miou = iou_sum / static_cast<double>(gt.size());
  return r;
}

// ---------------------------------------------------------------------------
// Reports

struct SampleRecord {
  std::size_t id = 0;
  std::string task;
  std::size_t seg_emitted = 0, seg_expected = 0;
  std::vector<std::size_t> intersections, unions;  // one per evaluated mask pair
  bool text_exact = false;
  double ap50 = -1, miou = -1;                      // grounded caption samples only
  std::string generated;

  double iou(std::size_t i) const {
    return unions[i] == 0 ? 1.0 : static_cast<double>(intersections[i]) / static_cast<double>(unions[i]);
  }
};

struct TaskSummary {
  std::size_t samples = 0;
  double ciou = 0, giou = 0, text_accuracy = 0, single_seg_rate = 0, ap50 = 0, miou = 0;
  std::size_t mask_pairs = 0;
};

struct EvalReport {
  std::vector<SampleRecord> records;

  // Aggregates recomputed from the per-sample records.
  std::map<std::string, TaskSummary> summarize() const {
    std::map<std::string, TaskSummary> out;
    std::map<std::string, std::pair<std::size_t, std::size_t>> cum;
    std::map<std::string, double> iou_sum;
    std::map<std::string, std::size_t> gcg_n;
    for (const auto& r : records) {
      auto& t = out[r.task];
      ++t.samples;
      t.text_accuracy += r.text_exact;
      t.single_seg_rate += r.seg_emitted == r.seg_expected;
      for (std::size_t i = 0; i < r.unions.size(); ++i) {
        cum[r.task].first += r.intersections[i];
        cum[r.task].second += r.unions[i];
        iou_sum[r.task] += r.iou(i);
        ++t.mask_pairs;
      }
      if (r.ap50 >= 0) {
        t.ap50 += r.ap50, t.miou += r.miou;
        ++gcg_n[r.task];
      }
    }
    for (auto& [name, t] : out) {
      t.text_accuracy /= static_cast<double>(t.samples);
      t.single_seg_rate /= static_cast<double>(t.samples);
      if (t.mask_pairs) {
        const auto [i, u] = cum[name];
        t.ciou = u == 0 ? 1.0 : static_cast<double>(i) / static_cast<double>(u);
        t.giou = iou_sum[name] / static_cast<double>(t.mask_pairs);
      }
      if (gcg_n[name]) t.ap50 /= static_cast<double>(gcg_n[name]), t.miou /= static_cast<double>(gcg_n[name]);
    }
    return out;
  }

  std::string to_jsonl() const {
    std::string s;
    for (const auto& r : records) {
      nlohmann::json j{{"id", r.id},
                       {"task", r.task},
                       {"seg_emitted", r.seg_emitted},
                       {"seg_expected", r.seg_expected},
                       {"intersections", r.intersections},
                       {"unions", r.unions},
                       {"text_exact", r.text_exact},
                       {"generated", r.generated}};
      if (r.ap50 >= 0) j["ap50"] = r.ap50, j["miou"] = r.miou;
      s += j.dump() + "\n";
    }
    for (const auto& [name, t] : summarize()) {
      nlohmann::json j{{"summary", name},     {"samples", t.samples},        {"ciou", t.ciou},
                       {"giou", t.giou},      {"text_accuracy", t.text_accuracy},
                       {"seg_count_match", t.single_seg_rate}};
      if (name == "gcg") j["ap50"] = t.ap50, j["miou"] = t.miou;
      s += j.dump() + "\n";
    }
    return s;
  }

  std::string to_table() const {
    std::ostringstream os;
    os << "task             samples   cIoU    gIoU    text    segs    AP50    mIoU\n";
    char buf[160];
    for (const auto& [name, t] : summarize()) {
      std::snprintf(buf, sizeof buf, "%-16s %7zu  %6.4f  %6.4f  %6.4f  %6.4f  %6.4f  %6.4f\n", name.c_str(),
                    t.samples, t.ciou, t.giou, t.text_accuracy, t.single_seg_rate, t.ap50, t.miou);
      os << buf;
    }
    return os.str();
  }
};

}  // namespace omg::metrics
