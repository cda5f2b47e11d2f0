#pragma once

// Deterministic scenes of colored shapes and the instruction samples built on
// them: caption, conversation, region caption, referring segmentation,
// semantic segmentation and grounded caption generation.
//
// Corpus layout on disk:
//   images/NNNN.ppm         scene image
//   masks/NNNN_K.pgm        mask of object K of scene NNNN
//   annotations.jsonl       one JSON object per sample (see README)

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "omg/decoder.hpp"
#include "omg/image.hpp"
#include "omg/mask.hpp"

namespace omg::synth {

inline constexpr std::array<const char*, 6> kColors = {"red", "green", "blue", "yellow", "purple", "cyan"};
inline constexpr std::array<std::array<float, 3>, 6> kColorRgb = {{{0.90f, 0.15f, 0.15f},
                                                                   {0.15f, 0.80f, 0.20f},
                                                                   {0.20f, 0.30f, 0.95f},
                                                                   {0.95f, 0.90f, 0.15f},
                                                                   {0.65f, 0.20f, 0.80f},
                                                                   {0.15f, 0.85f, 0.90f}}};
inline constexpr std::array<const char*, 4> kShapes = {"circle", "square", "triangle", "diamond"};
inline constexpr std::array<const char*, 4> kShapePlurals = {"circles", "squares", "triangles", "diamonds"};
inline constexpr std::array<const char*, 2> kSizes = {"small", "large"};
inline constexpr std::array<const char*, 9> kPositions = {"top left", "top",    "top right",   "left",        "center",
                                                          "right",    "bottom left", "bottom", "bottom right"};
inline constexpr std::array<const char*, 6> kCounts = {"zero", "one", "two", "three", "four", "five"};

inline const std::string kGcgQuestion =
    "Could you please give me a detailed description of the image? Please respond with interleaved segmentation "
    "masks for the corresponding parts of the answer.";

enum class Task { Caption, Conversation, RegionCaption, Res, Semseg, Gcg };

inline constexpr std::array<const char*, 6> kTaskNames = {"caption", "conversation", "region_caption",
                                                          "res",     "semseg",       "gcg"};

inline std::string to_string(Task t) { return kTaskNames[static_cast<std::size_t>(t)]; }

inline Task parse_task(const std::string& s) {
  for (std::size_t i = 0; i < kTaskNames.size(); ++i)
    if (s == kTaskNames[i]) return static_cast<Task>(i);
  throw ConfigError("unknown task '" + s + "'");
}

struct SceneObject {
  int shape = 0, color = 0, size = 0, position = 0;
  SegMask mask;

  bool operator==(const SceneObject&) const = default;
};

// Category label used to train the perception model: color and shape
// (24 categories), or shape alone (4).
inline int object_class(const SceneObject& o, std::size_t num_classes) {
  if (num_classes == kColors.size() * kShapes.size()) return o.color * static_cast<int>(kShapes.size()) + o.shape;
  if (num_classes == kShapes.size()) return o.shape;
  throw ConfigError("decoder.classes must be " + std::to_string(kShapes.size()) + " (shape) or " +
                    std::to_string(kColors.size() * kShapes.size()) + " (color and shape)");
}

struct Scene {
  Image image;
  std::vector<SceneObject> objects;

  bool operator==(const Scene&) const = default;
};

struct SceneConfig {
  std::size_t image_size = 64;
  std::size_t min_objects = 2, max_objects = 5;
  std::size_t small_side = 12, large_side = 20;
  std::size_t palette = 2;  // distinct colors available to one scene
};

inline bool inside_shape(int shape, double u, double v) {
  // (u, v) in [-1, 1]^2 relative to the bounding square
  switch (shape) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    case 2: return v >= -1.0 && v <= 1.0 && std::abs(u) <= (v + 1.0) / 2.0;
    case 3: return std::abs(u) + std::abs(v) <= 1.0;
  }
  return false;
}

inline Scene make_scene(std::mt19937_64& rng, const SceneConfig& cfg = {}) {
  const std::size_t S = cfg.image_size;
  if (S < 24) throw ConfigError("synth: image_size must be at least 24");
  auto uni = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  Scene sc;
  sc.image = Image(S, S);
  std::normal_distribution<double> noise(0.0, 0.02);
  for (auto& v : sc.image.rgb) v = static_cast<float>(std::clamp(0.12 + noise(rng), 0.0, 1.0));
  std::vector<int> cells(9);
  for (int i = 0; i < 9; ++i) cells[i] = i;
  std::shuffle(cells.begin(), cells.end(), rng);
  const std::size_t n = uni(cfg.min_objects, cfg.max_objects);
  if (cfg.palette == 0 || cfg.palette > kColors.size()) throw ConfigError("synth: palette must be 1..6 colors");
  std::vector<int> palette(kColors.size());
  for (std::size_t i = 0; i < palette.size(); ++i) palette[i] = static_cast<int>(i);
  std::shuffle(palette.begin(), palette.end(), rng);
  palette.resize(cfg.palette);
  std::vector<int> chosen(cells.begin(), cells.begin() + static_cast<long>(n));
  std::sort(chosen.begin(), chosen.end());
  for (int pos : chosen) {
    SceneObject o;
    o.position = pos;
    o.shape = static_cast<int>(uni(0, kShapes.size() - 1));
    o.color = palette[uni(0, palette.size() - 1)];
    o.size = static_cast<int>(uni(0, 1));
    const std::size_t side = o.size ? cfg.large_side : cfg.small_side;
    const std::size_t r = static_cast<std::size_t>(pos) / 3, c = static_cast<std::size_t>(pos) % 3;
    const std::size_t x_lo = c * S / 3, x_hi = (c + 1) * S / 3, y_lo = r * S / 3, y_hi = (r + 1) * S / 3;
    const std::size_t x0 = uni(x_lo, std::max(x_lo, x_hi - side)), y0 = uni(y_lo, std::max(y_lo, y_hi - side));
    o.mask = SegMask(S, S);
    const double half = static_cast<double>(side) / 2.0;
    for (std::size_t y = y0; y < std::min(S, y0 + side); ++y)
      for (std::size_t x = x0; x < std::min(S, x0 + side); ++x) {
        const double u = (static_cast<double>(x - x0) + 0.5 - half) / half;
        const double v = (static_cast<double>(y - y0) + 0.5 - half) / half;
        if (inside_shape(o.shape, u, v)) {
          o.mask.set(y, x);
          for (std::size_t ch = 0; ch < 3; ++ch) sc.image.at(y, x, ch) = kColorRgb[o.color][ch];
        }
      }
    sc.objects.push_back(std::move(o));
  }
  sc.image = quantize(sc.image);
  return sc;
}

// Grid-level target: cells at least half covered; a nonempty object whose
// cells are all below half keeps its best-covered cell.
inline SegMask grid_mask(const SegMask& m, std::size_t factor) {
  auto g = m.downsample(factor, 0.5);
  if (g.empty() && !m.empty()) {
    const auto cov = m.coverage(factor);
    g.assign(static_cast<std::size_t>(std::max_element(cov.begin(), cov.end()) - cov.begin()), true);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Referring expressions

inline std::string phrase(const SceneObject& o, bool with_size, bool with_position) {
  std::string s = "the ";
  if (with_size) s += std::string(kSizes[o.size]) + " ";
  s += std::string(kColors[o.color]) + " " + kShapes[o.shape];
  if (with_position) s += std::string(" at the ") + kPositions[o.position];
  return s;
}

struct ExpressionFilter {
  int shape = -1, color = -1, size = -1, position = -1;

  bool matches(const SceneObject& o) const {
    return (shape < 0 || o.shape == shape) && (color < 0 || o.color == color) && (size < 0 || o.size == size) &&
           (position < 0 || o.position == position);
  }
};

// Parses "the [size] color shape [at the position]" back into attributes.
inline ExpressionFilter parse_expression(const std::string& expr) {
  ExpressionFilter f;
  std::string rest = expr;
  auto take = [&](const auto& names, int& slot) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      const std::string n = names[i];
      if (rest.rfind(n, 0) == 0 && (rest.size() == n.size() || rest[n.size()] == ' ')) {
        slot = static_cast<int>(i);
        rest = rest.substr(std::min(rest.size(), n.size() + 1));
        return true;
      }
    }
    return false;
  };
  if (rest.rfind("the ", 0) != 0) throw ParseError("expression must start with 'the': " + expr);
  rest = rest.substr(4);
  take(kSizes, f.size);
  if (!take(kColors, f.color) || !take(kShapes, f.shape)) throw ParseError("malformed expression: " + expr);
  if (!rest.empty()) {
    if (rest.rfind("at the ", 0) != 0) throw ParseError("malformed expression: " + expr);
    rest = rest.substr(7);
    int best = -1;
    for (std::size_t i = 0; i < kPositions.size(); ++i)
      if (rest == kPositions[i]) best = static_cast<int>(i);
    if (best < 0) throw ParseError("unknown position in expression: " + expr);
    f.position = best;
  }
  return f;
}

inline std::size_t count_matches(const Scene& sc, const ExpressionFilter& f) {
  return static_cast<std::size_t>(
      std::count_if(sc.objects.begin(), sc.objects.end(), [&](const SceneObject& o) { return f.matches(o); }));
}

// Shortest of color+shape, size+color+shape, color+shape+position that picks
// out exactly this object.
inline std::string referring_expression(const Scene& sc, std::size_t k) {
  const auto& o = sc.objects.at(k);
  if (count_matches(sc, {o.shape, o.color, -1, -1}) == 1) return phrase(o, false, false);
  if (count_matches(sc, {o.shape, o.color, o.size, -1}) == 1) return phrase(o, true, false);
  return phrase(o, false, true);
}

// ---------------------------------------------------------------------------
// Instruction samples

struct Sample {
  std::size_t id = 0;
  Task task = Task::Caption;
  Scene scene;
  std::string prompt;   // contains <Image> and possibly <Region>
  std::string answer;
  std::vector<perception::VisualPrompt> visual_prompts;  // one per <Region>
  std::vector<int> prompt_objects;                       // object behind each visual prompt
  std::vector<std::vector<int>> seg_objects;             // objects unioned into each [SEG] target

  SegMask seg_target(std::size_t i) const {
    SegMask m(scene.image.height, scene.image.width);
    for (int k : seg_objects.at(i)) m = m | scene.objects.at(static_cast<std::size_t>(k)).mask;
    return m;
  }

  bool operator==(const Sample&) const = default;
};

using TaskMix = std::map<Task, double>;

inline TaskMix parse_task_mix(const std::string& s) {
  TaskMix mix;
  std::stringstream ss(s);
  std::string item;
  auto trim = [](const std::string& x) {
    const auto b = x.find_first_not_of(" \t"), e = x.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : x.substr(b, e - b + 1);
  };
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("task mix entry '" + item + "' needs task:weight");
    double w = 0;
    try {
      w = std::stod(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("task mix weight in '" + item + "' is not a number");
    }
    if (w < 0) throw ConfigError("task mix weight must be non-negative");
    mix[parse_task(trim(item.substr(0, colon)))] = w;
  }
  if (mix.empty()) throw ConfigError("empty task mix");
  return mix;
}

inline std::string to_string(const TaskMix& mix) {
  std::string s;
  for (auto& [t, w] : mix) {
    if (!s.empty()) s += ",";
    std::ostringstream os;
    os << to_string(t) << ":" << w;
    s += os.str();
  }
  return s;
}

inline std::string describe(const SceneObject& o) {
  return std::string("a ") + kSizes[o.size] + " " + kColors[o.color] + " " + kShapes[o.shape];
}

inline std::string join_list(const std::vector<std::string>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) s += i + 1 == items.size() ? " and " : " , ";
    s += items[i];
  }
  return s;
}

// Point inside the object, its bounding box, or the mask itself. A box too
// small to contain any cell centre becomes a mask prompt.
inline perception::VisualPrompt random_prompt(const SceneObject& o, std::mt19937_64& rng, std::size_t grid_ds = 8) {
  std::size_t x0 = o.mask.width(), y0 = o.mask.height(), x1 = 0, y1 = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pts;
  for (std::size_t y = 0; y < o.mask.height(); ++y)
    for (std::size_t x = 0; x < o.mask.width(); ++x)
      if (o.mask.get(y, x)) {
        x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x + 1), y1 = std::max(y1, y + 1);
        pts.emplace_back(x, y);
      }
  switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
    case 0: {
      const auto& p = pts[std::uniform_int_distribution<std::size_t>(0, pts.size() - 1)(rng)];
      return perception::VisualPrompt::point(static_cast<double>(p.first) + 0.5, static_cast<double>(p.second) + 0.5);
    }
    case 1: {
      auto b = perception::VisualPrompt::box(static_cast<double>(x0), static_cast<double>(y0),
                                             static_cast<double>(x1), static_cast<double>(y1));
      const auto cells = perception::prompt_cells(b, o.mask.height() / grid_ds, o.mask.width() / grid_ds, grid_ds);
      if (std::find(cells.begin(), cells.end(), 1) != cells.end()) return b;
      return perception::VisualPrompt::from_mask(o.mask);
    }
    default: return perception::VisualPrompt::from_mask(o.mask);
  }
}

inline Sample make_sample(Scene sc, Task task, std::mt19937_64& rng) {
  Sample s;
  s.task = task;
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  const auto& objs = sc.objects;
  switch (task) {
    case Task::Caption: {
      std::vector<std::string> parts;
      for (const auto& o : objs) parts.push_back(describe(o) + " at the " + kPositions[o.position]);
      s.prompt = "<Image> Describe the image briefly.";
      s.answer = "there is " + join_list(parts) + " .";
      break;
    }
    case Task::Conversation: {
      if (pick(2) == 0) {
        s.prompt = "<Image> How many objects are there?";
        s.answer = std::string("there are ") + kCounts[objs.size()] + " objects .";
      } else {
        const auto& o = objs[pick(objs.size())];
        s.prompt = std::string("<Image> What color is the ") + kShapes[o.shape] + " at the " +
                   kPositions[o.position] + "?";
        s.answer = std::string("it is ") + kColors[o.color] + " .";
      }
      break;
    }
    case Task::RegionCaption: {
      const std::size_t k = pick(objs.size());
      s.prompt = "<Image> Can you describe <Region> in detail?";
      s.answer = "it is " + describe(objs[k]) + " at the " + kPositions[objs[k].position] + " .";
      s.visual_prompts.push_back(random_prompt(objs[k], rng));
      s.prompt_objects.push_back(static_cast<int>(k));
      break;
    }
    case Task::Res: {
      const std::size_t k = pick(objs.size());
      const auto expr = referring_expression(sc, k);
      s.prompt = "<Image> Please segment " + expr + " in this image.";
      s.answer = "<p> " + expr + " </p> [SEG]";
      s.seg_objects.push_back({static_cast<int>(k)});
      break;
    }
    case Task::Semseg: {
      const int shape = objs[pick(objs.size())].shape;
      std::vector<int> members;
      for (std::size_t k = 0; k < objs.size(); ++k)
        if (objs[k].shape == shape) members.push_back(static_cast<int>(k));
      s.prompt = std::string("<Image> Please segment all the ") + kShapePlurals[shape] + " in this image.";
      s.answer = std::string("<p> all the ") + kShapePlurals[shape] + " </p> [SEG]";
      s.seg_objects.push_back(members);
      break;
    }
    case Task::Gcg: {
      std::vector<std::string> parts;
      for (std::size_t k = 0; k < objs.size(); ++k) {
        parts.push_back("<p> " + describe(objs[k]) + " </p> [SEG] at the " + kPositions[objs[k].position]);
        s.seg_objects.push_back({static_cast<int>(k)});
      }
      s.prompt = "<Image> " + kGcgQuestion;
      s.answer = "there is " + join_list(parts) + " .";
      break;
    }
  }
  s.scene = std::move(sc);
  return s;
}

// Grounded phrases of an answer: the text between each <p> and </p>.
inline std::vector<std::string> grounded_phrases(const std::string& answer) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = answer.find("<p>", pos)) != std::string::npos) {
    const auto end = answer.find("</p>", pos);
    if (end == std::string::npos) break;
    std::string p = answer.substr(pos + 3, end - pos - 3);
    const auto b = p.find_first_not_of(' '), e = p.find_last_not_of(' ');
    out.push_back(b == std::string::npos ? std::string() : p.substr(b, e - b + 1));
    pos = end + 4;
  }
  return out;
}

// Checks the structural invariants of a sample; throws GenerationError on
// violation.
inline void validate(const Sample& s) {
  const auto& objs = s.scene.objects;
  std::size_t area = 0;
  for (std::size_t a = 0; a < objs.size(); ++a) {
    area += objs[a].mask.count();
    if (objs[a].mask.empty()) throw GenerationError("synth: empty object mask");
    for (std::size_t b = a + 1; b < objs.size(); ++b)
      if (objs[a].mask.intersection_count(objs[b].mask)) throw GenerationError("synth: overlapping object masks");
  }
  if (area > s.scene.image.height * s.scene.image.width) throw GenerationError("synth: object area exceeds image");
  std::size_t segs = 0, pos = 0;
  while ((pos = s.answer.find("[SEG]", pos)) != std::string::npos) ++segs, pos += 5;
  if (segs != s.seg_objects.size()) throw GenerationError("synth: [SEG] count does not match targets");
  if (s.task == Task::Res) {
    if (segs != 1) throw GenerationError("synth: referring sample needs exactly one [SEG]");
    const auto phrases = grounded_phrases(s.answer);
    const auto f = parse_expression(phrases.at(0));
    std::size_t hits = 0;
    for (std::size_t k = 0; k < objs.size(); ++k)
      if (f.matches(objs[k])) {
        ++hits;
        if (static_cast<int>(k) != s.seg_objects[0][0]) throw GenerationError("synth: expression names another object");
      }
    if (hits != 1) throw GenerationError("synth: expression is not unique");
  }
  if (s.task == Task::Gcg && grounded_phrases(s.answer).size() != segs)
    throw GenerationError("synth: grounded phrase count does not match [SEG] count");
  std::size_t regions = 0;
  pos = 0;
  while ((pos = s.prompt.find("<Region>", pos)) != std::string::npos) ++regions, pos += 8;
  if (regions != s.visual_prompts.size()) throw GenerationError("synth: <Region> count does not match prompts");
}

inline Task draw_task(const TaskMix& mix, std::mt19937_64& rng) {
  std::vector<Task> tasks;
  std::vector<double> w;
  for (auto& [t, x] : mix) tasks.push_back(t), w.push_back(x);
  double total = 0;
  for (double x : w) total += x;
  if (total <= 0) throw ConfigError("task mix weights sum to zero");
  std::discrete_distribution<std::size_t> d(w.begin(), w.end());
  return tasks[d(rng)];
}

inline std::vector<Sample> generate(std::uint64_t seed, std::size_t n, const TaskMix& mix,
                                    const SceneConfig& cfg = {}) {
  if (n == 0) throw ConfigError("synth: n must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Task task = draw_task(mix, rng);
    Sample s;
    bool ok = false;
    for (int attempt = 0; attempt < 16 && !ok; ++attempt) {
      s = make_sample(make_scene(rng, cfg), task, rng);
      try {
        validate(s);
        ok = true;
      } catch (const GenerationError&) {
      }
    }
    if (!ok) throw GenerationError("synth: could not build a valid " + to_string(task) + " sample");
    s.id = i;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export / import

inline std::string file_stem(std::size_t id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", id);
  return buf;
}

inline nlohmann::json prompt_json(const perception::VisualPrompt& p, int object) {
  nlohmann::json j{{"kind", perception::to_string(p.kind)}};
  switch (p.kind) {
    case perception::PromptKind::Point: j["x"] = p.x0, j["y"] = p.y0; break;
    case perception::PromptKind::Box: j["box"] = {p.x0, p.y0, p.x1, p.y1}; break;
    case perception::PromptKind::Mask: j["object"] = object; break;
  }
  j["target"] = object;
  return j;
}

inline void export_corpus(const std::vector<Sample>& samples, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  std::ofstream ann(fs::path(dir) / "annotations.jsonl", std::ios::binary);
  if (!ann) throw IoError("cannot write " + (fs::path(dir) / "annotations.jsonl").string());
  for (const auto& s : samples) {
    const auto stem = file_stem(s.id);
    write_ppm((fs::path(dir) / "images" / (stem + ".ppm")).string(), s.scene.image);
    nlohmann::json objs = nlohmann::json::array();
    for (std::size_t k = 0; k < s.scene.objects.size(); ++k) {
      const auto& o = s.scene.objects[k];
      const auto mask_file = "masks/" + stem + "_" + std::to_string(k) + ".pgm";
      write_pgm((fs::path(dir) / mask_file).string(), o.mask);
      objs.push_back({{"shape", kShapes[o.shape]},
                      {"color", kColors[o.color]},
                      {"size", kSizes[o.size]},
                      {"position", kPositions[o.position]},
                      {"mask", mask_file}});
    }
    nlohmann::json prompts = nlohmann::json::array();
    for (std::size_t i = 0; i < s.visual_prompts.size(); ++i)
      prompts.push_back(prompt_json(s.visual_prompts[i], s.prompt_objects[i]));
    nlohmann::json j{{"id", s.id},          {"task", to_string(s.task)}, {"image", "images/" + stem + ".ppm"},
                     {"objects", objs},     {"prompt", s.prompt},        {"answer", s.answer},
                     {"visual_prompts", prompts}, {"seg_objects", s.seg_objects}};
    ann << j.dump() << "\n";
  }
}

template <std::size_t N>
int lookup_name(const std::array<const char*, N>& names, const std::string& v, std::size_t line) {
  for (std::size_t i = 0; i < N; ++i)
    if (v == names[i]) return static_cast<int>(i);
  throw ParseError("annotations: unknown attribute value '" + v + "'", line);
}

inline std::vector<Sample> import_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto path = fs::path(dir) / "annotations.jsonl";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<Sample> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      Sample s;
      s.id = j.at("id").get<std::size_t>();
      s.task = parse_task(j.at("task").get<std::string>());
      s.scene.image = read_ppm((fs::path(dir) / j.at("image").get<std::string>()).string());
      for (const auto& o : j.at("objects")) {
        SceneObject so;
        so.shape = lookup_name(kShapes, o.at("shape").get<std::string>(), line);
        so.color = lookup_name(kColors, o.at("color").get<std::string>(), line);
        so.size = lookup_name(kSizes, o.at("size").get<std::string>(), line);
        so.position = lookup_name(kPositions, o.at("position").get<std::string>(), line);
        so.mask = read_pgm((fs::path(dir) / o.at("mask").get<std::string>()).string());
        s.scene.objects.push_back(std::move(so));
      }
      s.prompt = j.at("prompt").get<std::string>();
      s.answer = j.at("answer").get<std::string>();
      for (const auto& p : j.at("visual_prompts")) {
        const auto kind = p.at("kind").get<std::string>();
        const int target = p.at("target").get<int>();
        if (kind == "point") {
          s.visual_prompts.push_back(perception::VisualPrompt::point(p.at("x").get<double>(), p.at("y").get<double>()));
        } else if (kind == "box") {
          const auto b = p.at("box").get<std::vector<double>>();
          if (b.size() != 4) throw ParseError("annotations: box needs 4 numbers", line);
          s.visual_prompts.push_back(perception::VisualPrompt::box(b[0], b[1], b[2], b[3]));
        } else if (kind == "mask") {
          const auto k = p.at("object").get<std::size_t>();
          if (k >= s.scene.objects.size()) throw ParseError("annotations: mask prompt names a missing object", line);
          s.visual_prompts.push_back(perception::VisualPrompt::from_mask(s.scene.objects[k].mask));
        } else {
          throw ParseError("annotations: unknown prompt kind '" + kind + "'", line);
        }
        s.prompt_objects.push_back(target);
      }
      s.seg_objects = j.at("seg_objects").get<std::vector<std::vector<int>>>();
      out.push_back(std::move(s));
    } catch (const ParseError&) {
      throw;
    } catch (const IoError& e) {
      throw ParseError(std::string("annotations: ") + e.what(), line);
    } catch (const std::exception& e) {
      throw ParseError(std::string("annotations: ") + e.what(), line);
    }
  }
  return out;
}

}  // namespace omg::synth
