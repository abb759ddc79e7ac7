#include "config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mvs {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig::RunConfig() {
  auto def = [this](const char* k, const char* v) {
    values_[k] = v;
    order_.push_back(k);
  };

  // paths and global seed
  def("seed", "7");
  def("out_dir", "out");
  def("data_dir", "out/data");
  def("ckpt_dir", "out/ckpt");
  def("workers", "1");

  // dataset generation
  def("objects_per_class", "60");
  def("views_per_object", "12");
  def("camera", "full");  // upper | extended | full
  def("image_size", "32");
  def("val_fraction", "0.2");

  // shape/image encoder
  def("patch_size", "8");
  def("width", "64");
  def("depth", "4");
  def("heads", "4");
  def("embed_dim", "64");
  def("frozen_prefix", "2");
  def("max_views", "6");
  def("mva", "on");

  // text encoder
  def("text_width", "64");
  def("text_depth", "2");
  def("text_heads", "4");
  def("max_seq_len", "16");

  // training
  def("batch_size", "64");
  def("pretrain_epochs", "30");
  def("finetune_epochs", "30");
  def("lr", "3e-4");
  def("lr_floor", "0");
  def("schedule", "cosine");
  def("view_range", "1,6");
  def("train_mlp", "off");
  def("init", "same");  // same | fresh
  def("ckpt_every_epochs", "10");

  // evaluation
  def("eval_views", "1,2,4,6,12");
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: missing '=' at " + path + ":" + std::to_string(lineno));
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void RunConfig::write_file(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("config: cannot write " + path);
  for (const auto& k : order_) os << k << " = " << values_.at(k) << "\n";
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("config: unknown key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("config: unknown key '" + key + "'");
  return it->second;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) != 0; }

int RunConfig::get_int(const std::string& key) const {
  return std::stoi(get(key));
}

double RunConfig::get_double(const std::string& key) const {
  return std::stod(get(key));
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  return static_cast<std::uint64_t>(std::stoull(get(key)));
}

bool RunConfig::get_bool(const std::string& key) const {
  std::string v = get(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error("config: boolean key '" + key + "' has value '" + v + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  if (out.empty()) throw std::runtime_error("config: empty list for key '" + key + "'");
  return out;
}

}  // namespace mvs
