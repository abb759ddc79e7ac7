#include "pipeline.hpp"

#include <fstream>

#include "gradcheck.hpp"
#include "loss.hpp"

namespace mvs::pipeline {

GenSpec gen_spec_from(const RunConfig& cfg) {
  GenSpec spec;
  spec.objects_per_class = cfg.get_int("objects_per_class");
  spec.views_per_object = cfg.get_int("views_per_object");
  spec.camera = camera_setting_from_name(cfg.get("camera"));
  spec.seed = cfg.get_u64("seed");
  spec.image_size = cfg.get_int("image_size");
  spec.val_fraction = cfg.get_double("val_fraction");
  return spec;
}

EncoderConfig encoder_cfg_from(const RunConfig& cfg) {
  EncoderConfig e;
  e.image_size = cfg.get_int("image_size");
  e.patch_size = cfg.get_int("patch_size");
  e.width = cfg.get_int("width");
  e.depth = cfg.get_int("depth");
  e.heads = cfg.get_int("heads");
  e.frozen_prefix = cfg.get_int("frozen_prefix");
  e.mva_enabled = cfg.get_bool("mva");
  e.train_mlp = cfg.get_bool("train_mlp");
  e.embed_dim = cfg.get_int("embed_dim");
  e.max_views = cfg.get_int("max_views");
  e.validate();
  return e;
}

TextConfig text_cfg_from(const RunConfig& cfg) {
  TextConfig t;
  t.width = cfg.get_int("text_width");
  t.depth = cfg.get_int("text_depth");
  t.heads = cfg.get_int("text_heads");
  t.max_len = cfg.get_int("max_seq_len");
  t.embed_dim = cfg.get_int("embed_dim");
  return t;
}

PretrainOptions pretrain_opts_from(const RunConfig& cfg) {
  PretrainOptions o;
  o.epochs = cfg.get_int("pretrain_epochs");
  o.batch_size = cfg.get_int("batch_size");
  o.lr = cfg.get_double("lr");
  o.lr_floor = cfg.get_double("lr_floor");
  o.seed = cfg.get_u64("seed");
  o.ckpt_every_epochs = cfg.get_int("ckpt_every_epochs");
  return o;
}

FinetuneOptions finetune_opts_from(const RunConfig& cfg) {
  FinetuneOptions o;
  auto range = cfg.get_int_list("view_range");
  require(range.size() == 2, "config: view_range must be MIN,MAX");
  o.view_min = range[0];
  o.view_max = range[1];
  o.epochs = cfg.get_int("finetune_epochs");
  o.batch_size = cfg.get_int("batch_size");
  o.lr = cfg.get_double("lr");
  o.lr_floor = cfg.get_double("lr_floor");
  o.seed = cfg.get_u64("seed");
  o.ckpt_every_epochs = cfg.get_int("ckpt_every_epochs");
  return o;
}

DatasetManifest generate(const RunConfig& cfg, const std::string& data_dir) {
  return generate_dataset(gen_spec_from(cfg), data_dir);
}

TrainResult pretrain(const RunConfig& cfg, const std::string& data_dir,
                     const std::string& out_prefix) {
  DatasetManifest manifest = load_manifest(data_dir + "/manifest.jsonl");
  Vocab vocab = build_grammar_vocab(cfg.get_int("max_seq_len"));
  ModelBundle model = ModelBundle::create(encoder_cfg_from(cfg), text_cfg_from(cfg), vocab,
                                          cfg.get_u64("seed"));
  PretrainOptions opts = pretrain_opts_from(cfg);
  opts.metrics_csv = out_prefix + "_metrics.csv";
  opts.ckpt_prefix = out_prefix;
  TrainResult result = pretrain_clip(model, manifest, data_dir, opts);
  model.save(out_prefix);
  return result;
}

TrainResult finetune(const RunConfig& cfg, const std::string& data_dir,
                     const std::string& clip_prefix, const std::string& out_prefix) {
  DatasetManifest manifest = load_manifest(data_dir + "/manifest.jsonl");
  ModelBundle model = ModelBundle::load(clip_prefix);

  EncoderConfig shape_cfg = model.image_cfg;
  shape_cfg.frozen_prefix = cfg.get_int("frozen_prefix");
  shape_cfg.mva_enabled = cfg.get_bool("mva");
  shape_cfg.train_mlp = cfg.get_bool("train_mlp");
  shape_cfg.max_views = cfg.get_int("max_views");

  const std::string init = cfg.get("init");
  if (init == "same") {
    model.attach_shape_copy(shape_cfg);
  } else if (init == "fresh") {
    // mismatched-initialization ablation: an independent pretrain from a
    // shifted seed donates the shape weights while the frozen targets
    // stay those of clip_prefix
    Vocab vocab = build_grammar_vocab(cfg.get_int("max_seq_len"));
    ModelBundle donor = ModelBundle::create(model.image_cfg, text_cfg_from(cfg), vocab,
                                            cfg.get_u64("seed") + 0x9e37);
    PretrainOptions donor_opts = pretrain_opts_from(cfg);
    donor_opts.seed = cfg.get_u64("seed") + 0x9e37;
    pretrain_clip(donor, manifest, data_dir, donor_opts);
    model.attach_shape_from(donor, shape_cfg);
  } else {
    throw std::invalid_argument("config: init must be 'same' or 'fresh'");
  }

  FinetuneOptions opts = finetune_opts_from(cfg);
  opts.metrics_csv = out_prefix + "_metrics.csv";
  opts.ckpt_prefix = out_prefix;
  TrainResult result = finetune_shape(model, manifest, data_dir, opts);
  model.save(out_prefix);
  return result;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("eval: cannot write " + path);
  os << "views,top1,top3,top5\n";
  for (const auto& r : rows)
    os << r.views << "," << r.metrics.top1 << "," << r.metrics.top3 << "," << r.metrics.top5
       << "\n";
}

// ---------------------------------------------------------------------------
// canonical gradient-check suite (double precision)
// ---------------------------------------------------------------------------

namespace {

using D = double;

Tensor<D> random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor<D> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

// weighted mean against a fixed random tensor so every output element
// receives a distinct gradient
Var<D> weighted(const Var<D>& x, Rng& rng) {
  auto weights = constant(random_tensor(x->value.shape(), rng));
  return mean_all(mul(x, weights));
}

double check_op(const std::string& name, int rounds, std::uint64_t seed,
                const std::function<Var<D>(ParamStore<D>&, Rng&)>& builder) {
  double worst = 0;
  for (int round = 0; round < rounds; ++round) {
    Rng rng(seed + static_cast<std::uint64_t>(round) * 7919 + std::hash<std::string>{}(name));
    ParamStore<D> params;
    Rng graph_rng = rng.child("graph");
    auto loss_fn = [&]() {
      Rng local = graph_rng;  // every rebuild replays the same stream
      return builder(params, local);
    };
    // builder registers parameters on first call
    auto primed = loss_fn();
    (void)primed;
    auto result = grad_check<D>(loss_fn, params, 1e-5);
    worst = std::max(worst, result.max_rel_error);
  }
  return worst;
}

// Registers (or reuses) a trainable tensor. The init draw always happens
// so rebuilds of the loss graph stay in lockstep with the rng stream.
Var<D> param(ParamStore<D>& store, const std::string& name, std::vector<std::size_t> shape,
             Rng& rng, double scale = 1.0) {
  Tensor<D> init = random_tensor(std::move(shape), rng, scale);
  if (store.contains(name)) return store.var(name);
  return store.add(name, std::move(init));
}

Var<D> end_to_end_loss(ParamStore<D>& params, Rng& rng);

}  // namespace

GradCheckReport grad_check_suite(std::uint64_t seed, int shapes_per_op) {
  GradCheckReport report;
  auto run = [&](const std::string& name,
                 const std::function<Var<D>(ParamStore<D>&, Rng&)>& builder, int rounds) {
    double err = check_op(name, rounds, seed, builder);
    report.items.push_back({name, err});
    report.max_rel_error = std::max(report.max_rel_error, err);
  };

  auto dims = [](Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + rng.next_below(hi - lo + 1);
  };

  run("matmul", [&dims](ParamStore<D>& ps, Rng& rng) {
    std::size_t m = dims(rng, 1, 4), k = dims(rng, 1, 4), n = dims(rng, 1, 4);
    auto a = param(ps, "a", {m, k}, rng);
    auto b = param(ps, "b", {k, n}, rng);
    return weighted(matmul(a, b), rng);
  }, shapes_per_op);

  run("matmul_bt", [&dims](ParamStore<D>& ps, Rng& rng) {
    std::size_t m = dims(rng, 1, 4), k = dims(rng, 1, 4), n = dims(rng, 1, 4);
    auto a = param(ps, "a", {m, k}, rng);
    auto b = param(ps, "b", {n, k}, rng);
    return weighted(matmul_bt(a, b), rng);
  }, shapes_per_op);

  run("softmax", [&dims](ParamStore<D>& ps, Rng& rng) {
    std::size_t m = dims(rng, 1, 4), n = dims(rng, 2, 6);
    auto x = param(ps, "x", {m, n}, rng, 2.0);
    return weighted(softmax_rows(x), rng);
  }, shapes_per_op);

  run("log_softmax", [&dims](ParamStore<D>& ps, Rng& rng) {
    std::size_t m = dims(rng, 1, 4), n = dims(rng, 2, 6);
    auto x = param(ps, "x", {m, n}, rng, 2.0);
    return weighted(log_softmax_rows(x), rng);
  }, shapes_per_op);

  run("layer_norm", [&dims](ParamStore<D>& ps, Rng& rng) {
    std::size_t m = dims(rng, 1, 4), k = dims(rng, 2, 8);
    auto x = param(ps, "x", {m, k}, rng);
    auto g = param(ps, "g", {k}, rng, 0.5);
    auto b = param(ps, "b", {k}, rng, 0.5);
    return weighted(layer_norm(x, g, b, 1e-5), rng);
  }, shapes_per_op);

  run("gelu", [&dims](ParamStore<D>& ps, Rng& rng) {
    // unit scale keeps the saturated tail's gradient above the
    // finite-difference noise floor
    std::size_t m = dims(rng, 1, 4), n = dims(rng, 1, 6);
    auto x = param(ps, "x", {m, n}, rng, 1.0);
    return weighted(gelu(x), rng);
  }, shapes_per_op);

  run("linear", [&dims](ParamStore<D>& ps, Rng& rng) {
    std::size_t m = dims(rng, 1, 4), k = dims(rng, 1, 4), n = dims(rng, 1, 4);
    auto x = param(ps, "x", {m, k}, rng);
    auto w = param(ps, "w", {k, n}, rng);
    auto b = param(ps, "b", {n}, rng);
    return weighted(linear(x, w, b), rng);
  }, shapes_per_op);

  run("embedding_lookup", [&dims](ParamStore<D>& ps, Rng& rng) {
    std::size_t rows = dims(rng, 2, 6), width = dims(rng, 1, 5);
    auto table = param(ps, "table", {rows, width}, rng);
    std::size_t count = dims(rng, 1, 6);
    std::vector<std::size_t> idx(count);
    for (auto& i : idx) i = rng.next_below(rows);  // repeats allowed
    return weighted(gather_rows(table, idx), rng);
  }, shapes_per_op);

  run("l2_normalize", [&dims](ParamStore<D>& ps, Rng& rng) {
    std::size_t m = dims(rng, 1, 4), n = dims(rng, 2, 6);
    auto x = param(ps, "x", {m, n}, rng);
    return weighted(l2_normalize_rows(x), rng);
  }, shapes_per_op);

  run("attention", [&dims](ParamStore<D>& ps, Rng& rng) {
    std::size_t t = dims(rng, 1, 4), d = dims(rng, 1, 4);
    auto q = param(ps, "q", {t, d}, rng);
    auto k = param(ps, "k", {t, d}, rng);
    auto v = param(ps, "v", {t, d}, rng);
    return weighted(attention(q, k, v), rng);
  }, shapes_per_op);

  run("info_nce", [&dims](ParamStore<D>& ps, Rng& rng) {
    std::size_t n = dims(rng, 2, 5), d = dims(rng, 2, 6);
    auto a = param(ps, "a", {n, d}, rng);
    auto b = param(ps, "b", {n, d}, rng);
    auto ls = param(ps, "logit_scale", {1}, rng, 0.3);
    return info_nce(l2_normalize_rows(a), l2_normalize_rows(b), exp_elem(ls));
  }, shapes_per_op);

  run("full_loss", [&dims](ParamStore<D>& ps, Rng& rng) {
    std::size_t n = dims(rng, 2, 4), d = dims(rng, 2, 6);
    auto s = param(ps, "s", {n, d}, rng);
    auto i = param(ps, "i", {n, d}, rng);
    auto t = param(ps, "t", {n, d}, rng);
    auto ls = param(ps, "logit_scale", {1}, rng, 0.3);
    return full_loss(l2_normalize_rows(s), l2_normalize_rows(i), l2_normalize_rows(t),
                     exp_elem(ls));
  }, shapes_per_op);

  run("encoder_end_to_end", end_to_end_loss, 1);
  return report;
}

namespace {

// Four-term loss on a 3-sample batch: shape branch through a 2-layer
// multi-view ViT, text branch through a 2-layer transformer, frozen
// image embeddings as constants.
Var<D> end_to_end_loss(ParamStore<D>& params, Rng& rng) {
  EncoderConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.width = 16;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.frozen_prefix = 1;  // layer 0 per-view, layer 1 cross-view
  cfg.mva_enabled = true;
  cfg.embed_dim = 8;
  cfg.max_views = 3;

  TextConfig tcfg;
  tcfg.vocab_size = 12;
  tcfg.width = 16;
  tcfg.depth = 2;
  tcfg.heads = 2;
  tcfg.max_len = 6;
  tcfg.embed_dim = 8;

  const std::size_t batch = 3;
  const std::size_t views = 2;

  bool fresh = !params.contains("logit_scale");
  VitWeights<D> vit;
  TextWeights<D> text;
  Var<D> logit_scale;
  if (fresh) {
    Rng init = rng.child("init");
    vit = init_vit(params, "shape.", cfg, init);
    text = init_text(params, "text.", tcfg, init);
    logit_scale = params.add("logit_scale", Tensor<D>::scalar(initial_logit_scale()));
  } else {
    vit = bind_vit(params, "shape.", cfg);
    text = bind_text(params, "text.", tcfg);
    logit_scale = params.var("logit_scale");
  }

  Rng data = rng.child("data");
  std::vector<Var<D>> f_shape, f_text;
  std::vector<Tensor<D>> image_consts;
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<Image> imgs;
    for (std::size_t v = 0; v < views; ++v) {
      Image img(cfg.image_size, cfg.image_size);
      for (auto& px : img.rgb) px = static_cast<float>(data.uniform());
      imgs.push_back(std::move(img));
    }
    f_shape.push_back(encode_shape<D>(imgs, vit, cfg, true));

    std::vector<int> ids = {Vocab::kBos};
    for (int w = 0; w < 3; ++w) ids.push_back(4 + static_cast<int>(data.next_below(8)));
    ids.push_back(Vocab::kEos);
    f_text.push_back(encode_token_ids<D>(ids, text, tcfg));

    Tensor<D> frozen({1, std::size_t(cfg.embed_dim)});
    double norm2 = 0;
    for (std::size_t j = 0; j < frozen.numel(); ++j) {
      frozen[j] = data.normal();
      norm2 += frozen[j] * frozen[j];
    }
    for (std::size_t j = 0; j < frozen.numel(); ++j) frozen[j] /= std::sqrt(norm2);
    image_consts.push_back(std::move(frozen));
  }

  std::vector<Var<D>> image_vars;
  for (auto& t : image_consts) image_vars.push_back(constant(std::move(t)));
  auto fs = concat_rows(f_shape);
  auto fi = concat_rows(image_vars);
  auto ft = concat_rows(f_text);
  return full_loss(fs, fi, ft, exp_elem(logit_scale));
}

}  // namespace

}  // namespace mvs::pipeline
