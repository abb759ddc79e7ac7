#include "model.hpp"

#include <fstream>
#include <sstream>

#include "captions.hpp"
#include "checkpoint.hpp"
#include "loss.hpp"

namespace mvs {

Vocab build_grammar_vocab(int max_len) { return Vocab::build(grammar_words(), max_len); }

ModelBundle ModelBundle::create(const EncoderConfig& image_cfg, const TextConfig& text_cfg,
                                const Vocab& vocab, std::uint64_t seed) {
  image_cfg.validate();
  ModelBundle m;
  m.image_cfg = image_cfg;
  m.shape_cfg = image_cfg;
  m.text_cfg = text_cfg;
  m.text_cfg.vocab_size = vocab.size();
  m.text_cfg.max_len = vocab.max_len();
  m.vocab = vocab;

  Rng rng(seed);
  Rng img_rng = rng.child("image-init");
  Rng txt_rng = rng.child("text-init");
  m.image = init_vit(m.params, "image.", m.image_cfg, img_rng);
  m.text = init_text(m.params, "text.", m.text_cfg, txt_rng);
  m.logit_scale = m.params.add(
      "logit_scale", Tensor<float>::scalar(static_cast<float>(initial_logit_scale())));
  return m;
}

namespace {

// Copies every "image.*" value into a fresh "shape.*" parameter set.
VitWeights<float> clone_image_branch(ParamStore<float>& params, const ParamStore<float>& source,
                                     const EncoderConfig& cfg) {
  Rng dummy(0);
  VitWeights<float> shape = init_vit(params, "shape.", cfg, dummy);
  for (auto& p : params.items()) {
    if (p.name.rfind("shape.", 0) != 0) continue;
    const std::string src_name = "image." + p.name.substr(6);
    const auto& src = source.at(src_name).var->value;
    require(p.var->value.same_shape(src), "model: shape/image architecture mismatch at " + p.name);
    p.var->value = src;
  }
  return shape;
}

}  // namespace

void ModelBundle::attach_shape_copy(const EncoderConfig& cfg) {
  require(!has_shape, "model: shape branch already attached");
  shape_cfg = cfg;
  shape = clone_image_branch(params, params, cfg);
  has_shape = true;
}

void ModelBundle::attach_shape_from(const ModelBundle& donor, const EncoderConfig& cfg) {
  require(!has_shape, "model: shape branch already attached");
  require(donor.image_cfg.width == image_cfg.width &&
              donor.image_cfg.depth == image_cfg.depth &&
              donor.image_cfg.embed_dim == image_cfg.embed_dim,
          "model: donor architecture mismatch");
  shape_cfg = cfg;
  shape = clone_image_branch(params, donor.params, cfg);
  has_shape = true;
}

void ModelBundle::save(const std::string& prefix) const {
  save_checkpoint_file(prefix + ".ddcp", params);
  vocab.save(prefix + ".vocab");

  std::ofstream os(prefix + ".cfg");
  if (!os) throw std::runtime_error("model: cannot write " + prefix + ".cfg");
  os << "[image]\n" << image_cfg.serialize();
  os << "[text]\n";
  os << "width = " << text_cfg.width << "\n";
  os << "depth = " << text_cfg.depth << "\n";
  os << "heads = " << text_cfg.heads << "\n";
  os << "max_len = " << text_cfg.max_len << "\n";
  os << "embed_dim = " << text_cfg.embed_dim << "\n";
  os << "vocab_size = " << text_cfg.vocab_size << "\n";
  os << "[model]\n";
  os << "has_shape = " << (has_shape ? 1 : 0) << "\n";
  if (has_shape) os << "[shape]\n" << shape_cfg.serialize();
}

ModelBundle ModelBundle::load(const std::string& prefix) {
  std::ifstream is(prefix + ".cfg");
  if (!is) throw std::runtime_error("model: cannot open " + prefix + ".cfg");
  std::string section;
  std::string image_text, shape_text;
  TextConfig text_cfg;
  bool has_shape = false;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line;
      continue;
    }
    if (section == "[image]") {
      image_text += line + "\n";
    } else if (section == "[shape]") {
      shape_text += line + "\n";
    } else {
      std::size_t eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(0, eq);
      key.erase(key.find_last_not_of(" \t") + 1);
      int value = std::stoi(line.substr(eq + 1));
      if (section == "[text]") {
        if (key == "width") text_cfg.width = value;
        else if (key == "depth") text_cfg.depth = value;
        else if (key == "heads") text_cfg.heads = value;
        else if (key == "max_len") text_cfg.max_len = value;
        else if (key == "embed_dim") text_cfg.embed_dim = value;
        else if (key == "vocab_size") text_cfg.vocab_size = value;
      } else if (section == "[model]") {
        if (key == "has_shape") has_shape = value != 0;
      }
    }
  }

  EncoderConfig image_cfg = EncoderConfig::parse(image_text);
  Vocab vocab = Vocab::load(prefix + ".vocab");
  vocab.set_max_len(text_cfg.max_len);
  ModelBundle m = create(image_cfg, text_cfg, vocab, /*seed=*/0);
  if (has_shape) {
    m.attach_shape_copy(EncoderConfig::parse(shape_text));
  }
  load_checkpoint_file(prefix + ".ddcp", m.params);
  return m;
}

std::vector<float> ModelBundle::encode_views_image(const std::vector<Image>& views) const {
  EncoderConfig cfg = image_cfg;
  cfg.max_views = std::max<int>(cfg.max_views, static_cast<int>(views.size()));
  auto out = encode_shape<float>(views, image, cfg, /*use_mva=*/false);
  const auto& v = out->value;
  return std::vector<float>(v.data(), v.data() + v.numel());
}

std::vector<float> ModelBundle::encode_views_shape(const std::vector<Image>& views) const {
  require(has_shape, "model: no shape branch; fine-tune first");
  EncoderConfig cfg = shape_cfg;
  cfg.max_views = std::max<int>(cfg.max_views, static_cast<int>(views.size()));
  auto out = encode_shape<float>(views, shape, cfg, cfg.mva_enabled);
  const auto& v = out->value;
  return std::vector<float>(v.data(), v.data() + v.numel());
}

std::vector<float> ModelBundle::encode_caption(const std::string& caption) const {
  auto out = encode_text<float>(caption, vocab, text, text_cfg);
  const auto& v = out->value;
  return std::vector<float>(v.data(), v.data() + v.numel());
}

}  // namespace mvs
