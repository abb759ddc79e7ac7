#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "autodiff.hpp"
#include "encoder.hpp"
#include "params.hpp"

namespace mvs {

// Word-level vocabulary over the closed caption grammar. Specials occupy
// the reserved ids 0..3.
class Vocab {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;

  Vocab() = default;

  static Vocab build(const std::vector<std::string>& words, int max_len) {
    Vocab v;
    v.max_len_ = max_len;
    v.tokens_ = {"<bos>", "<eos>", "<pad>", "<unk>"};
    std::set<std::string> sorted(words.begin(), words.end());
    for (const auto& w : sorted) v.tokens_.push_back(w);
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.ids_[v.tokens_[i]] = static_cast<int>(i);
    return v;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int max_len() const { return max_len_; }
  void set_max_len(int n) { max_len_ = n; }

  int id_of(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnk : it->second;
  }
  const std::string& token_of(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  // Lowercase, whitespace-split words mapped to ids with BOS/EOS added,
  // then truncated/padded to max_len. Total function: never throws on
  // input text.
  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    ids.push_back(kBos);
    std::istringstream is(lowercase(text));
    std::string word;
    while (is >> word) {
      if (static_cast<int>(ids.size()) >= max_len_ - 1) break;  // room for EOS
      ids.push_back(id_of(word));
    }
    ids.push_back(kEos);
    while (static_cast<int>(ids.size()) < max_len_) ids.push_back(kPad);
    return ids;
  }

  // line-delimited "token<TAB>id"
  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("vocab: cannot write " + path);
    os << "<maxlen>\t" << max_len_ << "\n";
    for (std::size_t i = 0; i < tokens_.size(); ++i) os << tokens_[i] << "\t" << i << "\n";
  }

  static Vocab load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("vocab: cannot open " + path);
    Vocab v;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::size_t tab = line.find('\t');
      if (tab == std::string::npos) throw std::runtime_error("vocab: malformed line");
      std::string token = line.substr(0, tab);
      int id = std::stoi(line.substr(tab + 1));
      if (token == "<maxlen>") {
        v.max_len_ = id;
        continue;
      }
      if (id != static_cast<int>(v.tokens_.size()))
        throw std::runtime_error("vocab: ids must be dense");
      v.tokens_.push_back(token);
      v.ids_[token] = id;
    }
    if (v.size() < 4) throw std::runtime_error("vocab: missing specials");
    return v;
  }

  static std::string lowercase(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int max_len_ = 16;
};

struct TextConfig {
  int vocab_size = 0;
  int width = 64;
  int depth = 2;
  int heads = 4;
  int max_len = 16;
  int embed_dim = 64;
};

template <typename T>
struct TextWeights {
  Var<T> tok;  // [vocab, width]
  Var<T> pos;  // [max_len, width]
  std::vector<BlockWeights<T>> blocks;
  Var<T> ln_post_g, ln_post_b;
  Var<T> proj;  // [width, embed_dim]
};

template <typename T>
TextWeights<T> init_text(ParamStore<T>& store, const std::string& prefix, const TextConfig& cfg,
                         Rng& rng) {
  require(cfg.vocab_size >= 4, "text config: vocab too small");
  require(cfg.heads > 0 && cfg.width % cfg.heads == 0, "text config: width not divisible by heads");
  TextWeights<T> w;
  int k = cfg.width;
  int mlp = 4 * k;
  Tensor<T> tok_init = normal_init<T>({std::size_t(cfg.vocab_size), std::size_t(k)}, 0.02, rng);
  // BOS is every caption's anchor token; a large row clusters the
  // mean-pooled embeddings at initialization
  for (int c = 0; c < k; ++c) tok_init.at(Vocab::kBos, c) *= T(8);
  w.tok = store.add(prefix + "tok", std::move(tok_init));
  w.pos = store.add(prefix + "pos",
                    normal_init<T>({std::size_t(cfg.max_len), std::size_t(k)}, 0.02, rng));
  for (int layer = 0; layer < cfg.depth; ++layer) {
    std::string lp = prefix + "blocks." + std::to_string(layer) + ".";
    BlockWeights<T> b;
    b.ln1_g = store.add(lp + "ln1.g", Tensor<T>::full({std::size_t(k)}, T(1)));
    b.ln1_b = store.add(lp + "ln1.b", Tensor<T>({std::size_t(k)}));
    b.wq = store.add(lp + "attn.wq", fan_in_init<T>(k, k, rng));
    b.bq = store.add(lp + "attn.bq", Tensor<T>({std::size_t(k)}));
    b.wk = store.add(lp + "attn.wk", fan_in_init<T>(k, k, rng));
    b.wv = store.add(lp + "attn.wv", fan_in_init<T>(k, k, rng));
    b.bv = store.add(lp + "attn.bv", Tensor<T>({std::size_t(k)}));
    b.wo = store.add(lp + "attn.wo", residual_fan_in_init<T>(k, k, cfg.depth, rng));
    b.bo = store.add(lp + "attn.bo", Tensor<T>({std::size_t(k)}));
    b.ln2_g = store.add(lp + "ln2.g", Tensor<T>::full({std::size_t(k)}, T(1)));
    b.ln2_b = store.add(lp + "ln2.b", Tensor<T>({std::size_t(k)}));
    b.w1 = store.add(lp + "mlp.w1", fan_in_init<T>(k, mlp, rng));
    b.b1 = store.add(lp + "mlp.b1", Tensor<T>({std::size_t(mlp)}));
    b.w2 = store.add(lp + "mlp.w2", residual_fan_in_init<T>(mlp, k, cfg.depth, rng));
    b.b2 = store.add(lp + "mlp.b2", Tensor<T>({std::size_t(k)}));
    w.blocks.push_back(std::move(b));
  }
  w.ln_post_g = store.add(prefix + "ln_post.g", Tensor<T>::full({std::size_t(k)}, T(1)));
  w.ln_post_b = store.add(prefix + "ln_post.b", Tensor<T>({std::size_t(k)}));
  w.proj = store.add(prefix + "proj", fan_in_init<T>(k, cfg.embed_dim, rng));
  return w;
}

template <typename T>
TextWeights<T> bind_text(ParamStore<T>& store, const std::string& prefix, const TextConfig& cfg) {
  TextWeights<T> w;
  w.tok = store.var(prefix + "tok");
  w.pos = store.var(prefix + "pos");
  for (int layer = 0; layer < cfg.depth; ++layer) {
    std::string lp = prefix + "blocks." + std::to_string(layer) + ".";
    BlockWeights<T> b;
    b.ln1_g = store.var(lp + "ln1.g");
    b.ln1_b = store.var(lp + "ln1.b");
    b.wq = store.var(lp + "attn.wq");
    b.bq = store.var(lp + "attn.bq");
    b.wk = store.var(lp + "attn.wk");
    b.wv = store.var(lp + "attn.wv");
    b.bv = store.var(lp + "attn.bv");
    b.wo = store.var(lp + "attn.wo");
    b.bo = store.var(lp + "attn.bo");
    b.ln2_g = store.var(lp + "ln2.g");
    b.ln2_b = store.var(lp + "ln2.b");
    b.w1 = store.var(lp + "mlp.w1");
    b.b1 = store.var(lp + "mlp.b1");
    b.w2 = store.var(lp + "mlp.w2");
    b.b2 = store.var(lp + "mlp.b2");
    w.blocks.push_back(std::move(b));
  }
  w.ln_post_g = store.var(prefix + "ln_post.g");
  w.ln_post_b = store.var(prefix + "ln_post.b");
  w.proj = store.var(prefix + "proj");
  return w;
}

// Token + positional embeddings through bidirectional transformer blocks,
// mean-pooled over non-PAD tokens (trailing PAD is dropped outright, so
// it is excluded from attention and pooling alike), projected and
// L2-normalized. [1, embed_dim].
template <typename T>
Var<T> encode_token_ids(const std::vector<int>& padded_ids, const TextWeights<T>& w,
                        const TextConfig& cfg) {
  std::vector<std::size_t> ids;
  for (int id : padded_ids) {
    if (id == Vocab::kPad) break;
    require(id >= 0 && id < cfg.vocab_size, "encode_text: token id out of range");
    ids.push_back(static_cast<std::size_t>(id));
  }
  require(!ids.empty(), "encode_text: empty token sequence");
  require(static_cast<int>(ids.size()) <= cfg.max_len, "encode_text: sequence too long");

  auto tokens = gather_rows(w.tok, ids);
  auto pos = slice_rows(w.pos, 0, ids.size());
  Var<T> x = add(tokens, pos);
  EncoderConfig block_cfg;  // only heads is consulted by the block
  block_cfg.heads = cfg.heads;
  block_cfg.width = cfg.width;
  for (int layer = 0; layer < cfg.depth; ++layer)
    x = transformer_block(x, w.blocks[layer], block_cfg, 1, true);
  x = layer_norm(x, w.ln_post_g, w.ln_post_b, T(1e-5));
  auto pooled = mean_rows(x);
  return l2_normalize_rows(matmul(pooled, w.proj));
}

template <typename T>
Var<T> encode_text(const std::string& text, const Vocab& vocab, const TextWeights<T>& w,
                   const TextConfig& cfg) {
  return encode_token_ids(vocab.encode(text), w, cfg);
}

}  // namespace mvs
