// omg_llava: data generation, two-stage training, evaluation, inference,
// ablation sweeps and checkpoint inspection for the desk-scale model.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "omg/experiment.hpp"
#include "omg/log.hpp"

namespace fs = std::filesystem;
using namespace omg;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Common {
  std::string config_path, out = "runs", checkpoint, strategy, data;
  std::vector<std::string> overrides;
  long long seed = -1;
  std::size_t threads = 0;
};

void add_common(CLI::App* app, Common& o, bool needs_checkpoint = false) {
  app->add_option("--config", o.config_path, "key=value config file");
  app->add_option("--seed", o.seed, "run seed (overrides the config)");
  app->add_option("--out", o.out, "output directory");
  auto* ck = app->add_option("--checkpoint", o.checkpoint, "checkpoint path");
  if (needs_checkpoint) ck->required();
  app->add_option("--threads", o.threads, "worker threads");
  app->add_option("--strategy", o.strategy, "perception prior strategy")
      ->check(CLI::IsMember({"none", "softmax", "argmax", "l1norm"}));
  app->add_option("--data", o.data, "corpus directory written by gen");
  app->add_option("-s,--set", o.overrides, "config override key=value (repeatable)");
}

void apply_flags(RunConfig& c, const Common& o) {
  c.apply(o.overrides);
  if (o.seed >= 0) c.set("seed", std::to_string(o.seed));
  if (o.threads) c.set("threads", std::to_string(o.threads));
  if (!o.strategy.empty()) c.set("prior.strategy", o.strategy);
}

RunConfig load_config(const Common& o) {
  RunConfig c = o.config_path.empty() ? RunConfig() : RunConfig::parse(read_file(o.config_path));
  apply_flags(c, o);
  return c;
}

std::size_t threads_of(const RunConfig& c) { return std::max<std::size_t>(1, c.count("threads")); }

std::vector<synth::Sample> corpus(const Common& o, const RunConfig& c) {
  return o.data.empty() ? training_corpus(c) : synth::import_corpus(o.data);
}

std::string path_in(const std::string& dir, const std::string& name) {
  fs::create_directories(dir);
  return (fs::path(dir) / name).string();
}

// Checkpoint config with the command line applied on top.
std::unique_ptr<OmgLlava<float>> open_checkpoint(const Common& o, std::string& stage) {
  auto meta = read_checkpoint_meta(o.checkpoint);
  if (!o.config_path.empty()) {
    const auto file = RunConfig::parse(read_file(o.config_path));
    for (const auto& k : config_keys()) meta.cfg.set(k.name, file.str(k.name));
  }
  apply_flags(meta.cfg, o);
  auto m = std::make_unique<OmgLlava<float>>(meta.cfg);
  if (meta.stage != "pretrain") m->duplicate_decoder();
  load_entries(m->store, decode_container(read_file(o.checkpoint)), true);
  stage = meta.stage;
  return m;
}

void print_steps(const std::vector<StepRecord>& log) {
  if (log.empty()) return;
  const auto& a = log.front();
  const auto& b = log.back();
  std::cout << to_string(a.stage) << ": " << log.size() << " steps, loss " << std::fixed << std::setprecision(4)
            << a.loss.total << " -> " << b.loss.total << "\n";
}

int cmd_gen(const Common& o) {
  const auto c = load_config(o);
  const auto samples = training_corpus(c);
  synth::export_corpus(samples, o.out);
  std::cout << "wrote " << samples.size() << " samples to " << o.out << "\n";
  return kOk;
}

int cmd_pretrain(const Common& o) {
  const auto c = load_config(o);
  FreezePolicy::from(c).validate(Stage::Pretrain);
  OmgLlava<float> m(c);
  load_base_models(m, threads_of(c));
  const auto train = corpus(o, c);
  const auto data = prepare_all(m, pretrain_corpus(c, train), threads_of(c));
  std::ofstream log(path_in(o.out, "pretrain_log.jsonl"));
  auto opts = stage_options(c, Stage::Pretrain);
  opts.log = &log;
  print_steps(train_stage(m, data, opts, FreezePolicy::from(c)));
  const auto ck = path_in(o.out, "pretrain.omgt");
  save_checkpoint(m, ck, "pretrain");
  std::cout << "checkpoint " << ck << "\n";
  return kOk;
}

int cmd_instruct(const Common& o) {
  std::string stage;
  auto m = open_checkpoint(o, stage);
  if (stage != "pretrain") {
    std::cerr << "instruct needs a pretrain checkpoint, " << o.checkpoint << " is at stage '" << stage << "'\n";
    return kData;
  }
  const auto& c = m->cfg;
  const auto policy = FreezePolicy::from(c);
  policy.validate(Stage::Instruct);
  m->duplicate_decoder();
  const auto data = prepare_all(*m, corpus(o, c), threads_of(c));
  std::ofstream log(path_in(o.out, "instruct_log.jsonl"));
  auto opts = stage_options(c, Stage::Instruct);
  opts.log = &log;
  print_steps(train_stage(*m, data, opts, policy));
  const auto ck = path_in(o.out, "instruct.omgt");
  save_checkpoint(*m, ck, "instruct");
  std::cout << "checkpoint " << ck << "\n";
  return kOk;
}

int cmd_eval(const Common& o) {
  std::string stage;
  auto m = open_checkpoint(o, stage);
  const auto& c = m->cfg;
  const auto samples = o.data.empty() ? heldout_corpus(c) : synth::import_corpus(o.data);
  const auto rep = evaluate(*m, prepare_all(*m, samples, threads_of(c)), c.count("eval.max_new"), threads_of(c));
  std::ofstream(path_in(o.out, "eval.jsonl")) << rep.to_jsonl();
  std::cout << rep.to_table();
  return kOk;
}

std::vector<double> numbers(const std::string& s, std::size_t n, const char* what) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  if (v.size() != n) throw CLI::ValidationError(what, "expects " + std::to_string(n) + " comma-separated numbers");
  return v;
}

struct InferArgs {
  std::string image, prompt, point, box, mask;
};

int cmd_infer(const Common& o, const InferArgs& a) {
  std::string stage;
  auto m = open_checkpoint(o, stage);
  synth::Sample s;
  s.scene.image = read_ppm(a.image);
  s.prompt = a.prompt;
  if (!a.point.empty()) {
    const auto p = numbers(a.point, 2, "--point");
    s.visual_prompts.push_back(perception::VisualPrompt::point(p[0], p[1]));
  }
  if (!a.box.empty()) {
    const auto b = numbers(a.box, 4, "--box");
    s.visual_prompts.push_back(perception::VisualPrompt::box(b[0], b[1], b[2], b[3]));
  }
  if (!a.mask.empty()) s.visual_prompts.push_back(perception::VisualPrompt::from_mask(read_pgm(a.mask)));
  for (const auto& vp : s.visual_prompts) vp.validate(s.scene.image.height, s.scene.image.width);
  const auto r = infer(*m, prepare(*m, s), m->cfg.count("eval.max_new"));
  std::ofstream(path_in(o.out, "answer.txt")) << r.text << "\n";
  std::cout << r.text << "\n";
  const auto ds = m->downsample();
  if (r.masks.empty()) {
    write_pgm(path_in(o.out, "mask_0.pgm"), SegMask(s.scene.image.height, s.scene.image.width));
    std::cout << "no [SEG] emitted; wrote an empty mask\n";
  }
  for (std::size_t i = 0; i < r.masks.size(); ++i)
    write_pgm(path_in(o.out, "mask_" + std::to_string(i) + ".pgm"), r.masks[i].upsample(ds));
  return kOk;
}

struct AblateArgs {
  std::string grid = "all";
  std::size_t seeds = 1;
};

int cmd_ablate(const Common& o, const AblateArgs& a) {
  const auto base = load_config(o);
  struct Row {
    std::string axis, value;
    std::vector<std::string> overrides;
  };
  std::vector<Row> rows;
  if (a.grid == "all" || a.grid == "components") {
    rows.push_back({"components", "baseline", {"prior.strategy=none", "prior.object_tokens=false"}});
    rows.push_back({"components", "+prior", {"prior.strategy=softmax", "prior.object_tokens=false"}});
    rows.push_back({"components", "+prior+objects", {"prior.strategy=softmax", "prior.object_tokens=true"}});
  }
  if (a.grid == "all" || a.grid == "strategy")
    for (const char* s : {"none", "softmax", "argmax", "l1norm"})
      rows.push_back({"strategy", s, {std::string("prior.strategy=") + s}});
  if (a.grid == "all" || a.grid == "sharing")
    for (const char* s : {"separate", "O", "O&P"}) rows.push_back({"sharing", s, {std::string("projector.sharing=") + s}});

  const auto train = o.data.empty() ? training_corpus(base) : synth::import_corpus(o.data);
  const auto heldout = heldout_corpus(base);
  std::ofstream tsv(path_in(o.out, "ablation.tsv"));
  tsv << "axis\tvalue\tcIoU\tgIoU\n";
  std::cout << "axis         value            cIoU    gIoU\n";
  for (const auto& row : rows) {
    double ciou = 0, giou = 0;
    for (std::size_t k = 0; k < a.seeds; ++k) {
      RunConfig c = base;
      c.apply(row.overrides);
      c.set("seed", std::to_string(base.integer("seed") + static_cast<long long>(k)));
      const auto r = run_experiment<float>(c, train, heldout);
      const auto sum = r.heldout.summarize();
      const auto it = sum.find("res");
      const auto& t = it != sum.end() ? it->second : sum.begin()->second;
      ciou += t.ciou / static_cast<double>(a.seeds);
      giou += t.giou / static_cast<double>(a.seeds);
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-12s %-15s %6.4f  %6.4f\n", row.axis.c_str(), row.value.c_str(), ciou, giou);
    std::cout << buf << std::flush;
    tsv << row.axis << "\t" << row.value << "\t" << ciou << "\t" << giou << "\n";
  }
  return kOk;
}

int cmd_inspect(const Common& o) {
  const auto meta = read_checkpoint_meta(o.checkpoint);
  std::cout << "stage " << meta.stage << "\n";
  for (const auto& e : decode_container(read_file(o.checkpoint))) {
    std::string shape;
    for (std::size_t i = 0; i < e.dims.size(); ++i) shape += (i ? "x" : "") + std::to_string(e.dims[i]);
    std::cout << std::left << std::setw(32) << e.name << " " << std::setw(10) << shape << " " << std::hex
              << std::setw(16) << std::setfill('0') << std::right << checksum(std::span<const float>(e.values))
              << std::dec << std::setfill(' ') << "\n";
  }
  return kOk;
}

int cmd_render(const Common& o) {
  static const float kPalette[4][3] = {{1, 1, 1}, {1, 0.4f, 0}, {0, 1, 0.6f}, {1, 0, 1}};
  auto samples = synth::import_corpus(o.data);
  std::unique_ptr<OmgLlava<float>> m;
  std::string stage;
  if (!o.checkpoint.empty()) m = open_checkpoint(o, stage);
  std::size_t n = 0;
  for (const auto& s : samples) {
    Image gt = s.scene.image;
    for (std::size_t i = 0; i < s.seg_objects.size(); ++i) gt = overlay(gt, s.seg_target(i), kPalette[i % 4]);
    char name[64];
    std::snprintf(name, sizeof name, "%04zu_gt.ppm", s.id);
    write_ppm(path_in(o.out, name), gt);
    if (m) {
      const auto r = infer(*m, prepare(*m, s), m->cfg.count("eval.max_new"));
      Image pred = s.scene.image;
      for (std::size_t i = 0; i < r.masks.size(); ++i)
        pred = overlay(pred, r.masks[i].upsample(m->downsample()), kPalette[i % 4]);
      std::snprintf(name, sizeof name, "%04zu_pred.ppm", s.id);
      write_ppm(path_in(o.out, name), pred);
    }
    ++n;
  }
  std::cout << "rendered " << n << " samples to " << o.out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OMG-LLaVA desk-scale reproduction"};
  app.require_subcommand(1);
  Common o;
  InferArgs ia;
  AblateArgs aa;

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  add_common(gen, o);
  auto* pre = app.add_subcommand("pretrain", "train the projectors (builds the base models if absent)");
  add_common(pre, o);
  auto* ins = app.add_subcommand("instruct", "instruction-tune from a pretrain checkpoint");
  add_common(ins, o, true);
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, o, true);
  auto* inf = app.add_subcommand("infer", "answer one image and prompt");
  add_common(inf, o, true);
  inf->add_option("--image", ia.image, "P6 image")->required();
  inf->add_option("--prompt", ia.prompt, "instruction, e.g. \"<Image> Please segment the red circle in this image.\"")
      ->required();
  inf->add_option("--point", ia.point, "point prompt x,y");
  inf->add_option("--box", ia.box, "box prompt x0,y0,x1,y1");
  inf->add_option("--mask", ia.mask, "mask prompt (P5 image)");
  auto* abl = app.add_subcommand("ablate", "prior strategy and projector sharing sweeps");
  add_common(abl, o);
  abl->add_option("--grid", aa.grid, "components|strategy|sharing|all")
      ->check(CLI::IsMember({"components", "strategy", "sharing", "all"}));
  abl->add_option("--seeds", aa.seeds, "seeds averaged per row")->check(CLI::PositiveNumber);
  auto* ins2 = app.add_subcommand("inspect", "list checkpoint tensors");
  add_common(ins2, o, true);
  auto* ren = app.add_subcommand("render", "overlay ground-truth (and predicted) masks");
  add_common(ren, o);
  ren->get_option("--data")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen(o);
    if (*pre) return cmd_pretrain(o);
    if (*ins) return cmd_instruct(o);
    if (*ev) return cmd_eval(o);
    if (*inf) return cmd_infer(o, ia);
    if (*abl) return cmd_ablate(o, aa);
    if (*ins2) return cmd_inspect(o);
    if (*ren) return cmd_render(o);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
