// mvshape command-line interface. Links only the public C API.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mvshape.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct ConfigDeleter {
  void operator()(mvs_config* c) const { mvs_config_free(c); }
};
using ConfigPtr = std::unique_ptr<mvs_config, ConfigDeleter>;

[[noreturn]] void die(const std::string& message) {
  std::fprintf(stderr, "error: %s\n", message.c_str());
  std::exit(kExitRuntime);
}

void check(mvs_status rc, const char* what) {
  if (rc != MVS_OK) die(std::string(what) + ": " + mvs_last_error());
}

std::string cfg_get(const mvs_config* cfg, const char* key) {
  char buf[512];
  check(mvs_config_get(cfg, key, buf, sizeof(buf)), "config");
  return buf;
}

// Shared flag state; only flags the user actually passed override the
// config file.
struct Flags {
  std::string config_path;
  std::string out_dir;
  long seed = 0;
  std::string views;
  int frozen_prefix = 0;
  std::string mva;
  std::string view_range;
  std::string train_mlp;
  std::string init;
  std::string camera;
};

void add_common_flags(CLI::App* cmd, Flags& flags) {
  cmd->add_option("--config", flags.config_path, "key=value config file");
  cmd->add_option("--seed", flags.seed, "root seed");
  cmd->add_option("--out", flags.out_dir, "output directory");
  cmd->add_option("--views", flags.views, "comma-separated view counts");
  cmd->add_option("--frozen-prefix", flags.frozen_prefix, "frozen leading layers");
  cmd->add_option("--mva", flags.mva, "cross-view attention: on|off")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--view-range", flags.view_range, "training view range MIN,MAX");
  cmd->add_option("--train-mlp", flags.train_mlp, "train suffix MLPs: on|off")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--init", flags.init, "shape-branch init: same|fresh")
      ->check(CLI::IsMember({"same", "fresh"}));
  cmd->add_option("--camera", flags.camera, "camera sampling: upper|extended|full")
      ->check(CLI::IsMember({"upper", "extended", "full"}));
}

ConfigPtr build_config(const CLI::App* cmd, const Flags& flags) {
  ConfigPtr cfg(mvs_config_create());
  if (!cfg) die("out of memory");
  if (!flags.config_path.empty())
    check(mvs_config_load_file(cfg.get(), flags.config_path.c_str()), "config");

  auto set_if = [&](const char* flag, const char* key, const std::string& value) {
    if (cmd->count(flag)) check(mvs_config_set(cfg.get(), key, value.c_str()), "config");
  };
  set_if("--seed", "seed", std::to_string(flags.seed));
  set_if("--out", "out_dir", flags.out_dir);
  set_if("--views", "eval_views", flags.views);
  set_if("--frozen-prefix", "frozen_prefix", std::to_string(flags.frozen_prefix));
  set_if("--mva", "mva", flags.mva);
  set_if("--view-range", "view_range", flags.view_range);
  set_if("--train-mlp", "train_mlp", flags.train_mlp);
  set_if("--init", "init", flags.init);
  set_if("--camera", "camera", flags.camera);

  // keep derived paths inside --out unless the file pinned them
  if (cmd->count("--out")) {
    if (cfg_get(cfg.get(), "data_dir").rfind("out/", 0) == 0 ||
        cfg_get(cfg.get(), "data_dir") == "out/data")
      check(mvs_config_set(cfg.get(), "data_dir", (flags.out_dir + "/data").c_str()), "config");
    if (cfg_get(cfg.get(), "ckpt_dir").rfind("out/", 0) == 0)
      check(mvs_config_set(cfg.get(), "ckpt_dir", (flags.out_dir + "/ckpt").c_str()), "config");
  }
  return cfg;
}

// Every subcommand echoes the effective configuration next to its
// outputs.
void echo_config(const mvs_config* cfg) {
  std::string out_dir = cfg_get(cfg, "out_dir");
  std::filesystem::create_directories(out_dir);
  check(mvs_config_write_file(cfg, (out_dir + "/run_config.txt").c_str()), "config");
}

std::vector<int32_t> parse_view_list(const std::string& csv) {
  std::vector<int32_t> out;
  std::string item;
  std::stringstream ss(csv);
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  if (out.empty()) die("empty view list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view contrastive shape representation pipeline"};
  app.require_subcommand(1);

  Flags flags;

  auto* gen = app.add_subcommand("gen-data", "render the procedural multi-view dataset");
  auto* pretrain = app.add_subcommand("pretrain", "stage 1: joint image+text pretraining");
  auto* finetune = app.add_subcommand("finetune", "stage 2: multi-view shape fine-tuning");
  auto* embed = app.add_subcommand("embed", "write shape embeddings for a split");
  auto* classify = app.add_subcommand("classify", "zero-shot classification of a split");
  auto* retrieve = app.add_subcommand("retrieve", "caption-to-shape retrieval metrics");
  auto* mix = app.add_subcommand("mix", "concept mixing: blend two indexed shapes");
  auto* attnviz = app.add_subcommand("attnviz", "cross-view attention heatmaps");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  auto* eval = app.add_subcommand("eval", "accuracy-vs-view-count sweep");

  for (auto* cmd : {gen, pretrain, finetune, embed, classify, retrieve, mix, attnviz, gradcheck,
                    eval})
    add_common_flags(cmd, flags);

  std::string split = "val";
  int n_views = 4;
  std::string model_name;  // empty -> shape if present else clip
  for (auto* cmd : {embed, classify, retrieve, eval}) {
    cmd->add_option("--split", split, "manifest split (train|val)");
    cmd->add_option("--model", model_name, "model prefix name under ckpt_dir (clip|shape)");
  }
  classify->add_option("--n-views", n_views, "views per object");
  embed->add_option("--n-views", n_views, "views per object");
  retrieve->add_option("--n-views", n_views, "views per object");

  std::string mix_a, mix_b, index_prefix;
  mix->add_option("--a", mix_a, "first object id")->required();
  mix->add_option("--b", mix_b, "second object id")->required();
  mix->add_option("--index", index_prefix, "embedding store prefix (defaults to out/index/val)");

  std::string viz_id;
  int viz_view = 0, viz_patch = 0, viz_layer = -1;
  attnviz->add_option("--id", viz_id, "object id")->required();
  attnviz->add_option("--view", viz_view, "query view index");
  attnviz->add_option("--patch", viz_patch, "query patch index (CLS excluded)");
  attnviz->add_option("--layer", viz_layer, "attention layer (-1 = first MVA layer)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitOk;
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    std::fprintf(stderr, "%s\n", app.help().c_str());
    return kExitUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  ConfigPtr cfg = build_config(cmd, flags);
  echo_config(cfg.get());

  const std::string out_dir = cfg_get(cfg.get(), "out_dir");
  const std::string data_dir = cfg_get(cfg.get(), "data_dir");
  const std::string ckpt_dir = cfg_get(cfg.get(), "ckpt_dir");
  const std::string clip_prefix = ckpt_dir + "/clip";
  const std::string shape_prefix = ckpt_dir + "/shape";

  auto pick_model = [&]() -> std::string {
    if (!model_name.empty()) return ckpt_dir + "/" + model_name;
    return std::filesystem::exists(shape_prefix + ".ddcp") ? shape_prefix : clip_prefix;
  };

  if (cmd == gen) {
    check(mvs_generate_dataset(cfg.get(), data_dir.c_str()), "gen-data");
    std::printf("dataset written to %s\n", data_dir.c_str());
  } else if (cmd == pretrain) {
    std::filesystem::create_directories(ckpt_dir);
    check(mvs_pretrain(cfg.get(), data_dir.c_str(), clip_prefix.c_str()), "pretrain");
    std::printf("pretrained bundle at %s.{ddcp,cfg,vocab}\n", clip_prefix.c_str());
  } else if (cmd == finetune) {
    std::filesystem::create_directories(ckpt_dir);
    check(mvs_finetune(cfg.get(), data_dir.c_str(), clip_prefix.c_str(), shape_prefix.c_str()),
          "finetune");
    std::printf("fine-tuned bundle at %s.{ddcp,cfg,vocab}\n", shape_prefix.c_str());
  } else if (cmd == embed) {
    std::string prefix = out_dir + "/index/" + split;
    std::filesystem::create_directories(out_dir + "/index");
    check(mvs_embed_split(cfg.get(), data_dir.c_str(), pick_model().c_str(), split.c_str(),
                          n_views, (prefix + ".ddem").c_str(), (prefix + ".ids").c_str()),
          "embed");
    std::printf("embeddings at %s.ddem (+ .ids)\n", prefix.c_str());
  } else if (cmd == classify) {
    double top1 = 0, top3 = 0, top5 = 0;
    std::string csv = out_dir + "/classify.csv";
    check(mvs_classify_split(cfg.get(), data_dir.c_str(), pick_model().c_str(), split.c_str(),
                             n_views, 1, csv.c_str(), &top1, &top3, &top5),
          "classify");
    std::printf("split=%s views=%d top1=%.4f top3=%.4f top5=%.4f\n", split.c_str(), n_views,
                top1, top3, top5);
  } else if (cmd == retrieve) {
    double rr1 = 0, rr5 = 0;
    std::string csv = out_dir + "/retrieval.csv";
    check(mvs_retrieval_eval(cfg.get(), data_dir.c_str(), pick_model().c_str(), split.c_str(),
                             n_views, csv.c_str(), &rr1, &rr5),
          "retrieve");
    std::printf("split=%s RR@1=%.4f RR@5=%.4f\n", split.c_str(), rr1, rr5);
  } else if (cmd == mix) {
    std::string prefix = index_prefix.empty() ? out_dir + "/index/val" : index_prefix;
    mvs_index* index = mvs_index_open((prefix + ".ddem").c_str(), (prefix + ".ids").c_str());
    if (!index) die(std::string("mix: ") + mvs_last_error());
    int32_t dim = mvs_index_dim(index);
    int64_t row_a = 0, row_b = 0;
    check(mvs_index_find(index, mix_a.c_str(), &row_a), "mix");
    check(mvs_index_find(index, mix_b.c_str(), &row_b), "mix");
    std::vector<float> va(dim), vb(dim);
    check(mvs_index_get_row(index, row_a, va.data(), dim), "mix");
    check(mvs_index_get_row(index, row_b, vb.data(), dim), "mix");
    const char* exclude[2] = {mix_a.c_str(), mix_b.c_str()};
    int64_t row = 0;
    check(mvs_index_concept_mix(index, va.data(), vb.data(), dim, exclude, 2, &row), "mix");
    char id[256];
    check(mvs_index_get_id(index, row, id, sizeof(id)), "mix");
    std::printf("mix(%s, %s) -> %s\n", mix_a.c_str(), mix_b.c_str(), id);
    mvs_index_free(index);
  } else if (cmd == attnviz) {
    std::string dir = out_dir + "/attnviz";
    check(mvs_attention_heatmaps(cfg.get(), data_dir.c_str(), shape_prefix.c_str(),
                                 viz_id.c_str(), viz_layer, viz_view, viz_patch, dir.c_str()),
          "attnviz");
    std::printf("heatmaps under %s\n", dir.c_str());
  } else if (cmd == gradcheck) {
    double err = 0;
    check(mvs_grad_check(&err), "gradcheck");
    std::printf("max relative error: %.3e\n", err);
    return err <= 1e-4 ? kExitOk : kExitRuntime;
  } else if (cmd == eval) {
    auto views = parse_view_list(cfg_get(cfg.get(), "eval_views"));
    std::string csv = out_dir + "/accuracy_vs_views.csv";
    check(mvs_eval_view_sweep(cfg.get(), data_dir.c_str(), pick_model().c_str(), split.c_str(),
                              views.data(), static_cast<int32_t>(views.size()), 1, csv.c_str()),
          "eval");
    std::printf("sweep written to %s\n", csv.c_str());
  }
  return kExitOk;
}
