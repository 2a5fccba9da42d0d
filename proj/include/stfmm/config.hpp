#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stfmm/net.hpp"
#include "stfmm/trainer.hpp"
#include "stfmm/videoprep.hpp"

// Layered run configuration: registered defaults, overridden by a
// `key = value` file (# comments), overridden by command-line flags.
// The resolved snapshot is written into every run directory.
namespace stfmm {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

class Config {
 public:
  static const std::vector<ConfigKey>& registry();
  static Config defaults();
  static bool is_known_key(const std::string& key);

  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);  // known keys only

  std::string get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Canonical snapshot, one sorted `key = value` line each.
  std::string resolved_text() const;

  NetConfig net() const;
  PrepConfig prep() const;
  TrainConfig train() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace stfmm
