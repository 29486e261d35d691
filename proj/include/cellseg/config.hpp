#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cellseg/model.hpp"
#include "cellseg/targets.hpp"
#include "cellseg/train.hpp"

namespace cellseg {

// Flat `key = value` run configuration. `#` starts a comment. Unknown or
// repeated keys and unparsable values are ConfigErrors. Relative paths in a
// file resolve against that file's directory.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PostprocParams post;
  std::filesystem::path manifest;
  std::filesystem::path fmap_dir;
  std::filesystem::path out_dir = "run";
  std::size_t threads = 0;  // 0 = OpenMP default
  std::uint64_t seed = 0;

  struct Key {
    const char* name;
    const char* help;
  };
  static const std::vector<Key>& keys();

  void set(const std::string& key, const std::string& value, const std::filesystem::path& base_dir = {});
  std::string get(const std::string& key) const;
  // Every key with its current value, in keys() order.
  std::string to_text() const;
  void validate() const;
};

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace cellseg
