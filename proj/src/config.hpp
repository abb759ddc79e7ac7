#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mvs {

// Flat key=value run configuration. Every key has a default; a config
// file overrides defaults and command-line flags override the file. The
// effective configuration is echoed to run_config.txt by the CLI so runs
// are reproducible from that one file.
class RunConfig {
 public:
  RunConfig();  // populated with defaults

  static RunConfig defaults() { return RunConfig(); }

  void load_file(const std::string& path);          // unknown keys rejected
  void write_file(const std::string& path) const;   // stable key order

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const;

  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;  // on/off, true/false, 1/0
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;  // comma separated

  const std::vector<std::string>& keys() const { return order_; }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace mvs
