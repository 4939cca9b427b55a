#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evgraph/model_spec.hpp"
#include "evgraph/training.hpp"

namespace evg {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Every recognised run configuration key with its default.
const std::vector<ConfigKey>& config_keys();

/// Flat key=value run configuration. Unknown keys are rejected on assignment.
class RunConfig {
 public:
  RunConfig();

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool is_set(const std::string& key) const { return !get(key).empty(); }

  /// Reads "key = value" lines; '#' starts a comment.
  void merge_text(const std::string& text);
  void merge_file(const std::filesystem::path& path);
  /// Canonical form: every key in table order.
  std::string to_text() const;
  /// Keys that influence results only; paths of outputs and thread counts are left out.
  std::string reproducible_text() const;
  static RunConfig from_text(const std::string& text);

  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Checks every value against the preconditions of the module that consumes it.
  void validate() const;

  PipelineConfig pipeline() const;
  TrainConfig training() const;
  SynthParams synth() const;
  ModelSpec model(int num_classes, int grid_w, int grid_h) const;
  int workers() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace evg
