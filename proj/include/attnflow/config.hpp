#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnflow/trainer.hpp"

namespace attnflow {

/// Everything a CLI command needs, parsed from a sectioned key-value file
/// (TOML syntax; values are JSON literals: strings, numbers, booleans, arrays).
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out;
  std::string data_root;
  std::string data_embeddings;
  bool allow_weights_mismatch = false;
  TrainConfig train;
  std::size_t eval_n_transforms = 16;
  std::string eval_method;  // empty: derived from the attention settings
  std::size_t explain_scale_index = 0;
  bool ablate_parallel = false;

  /// Report label: "baseline" without attention, else the attention kind.
  std::string method_label() const;
};

/// Defaults: the full-size pipeline (448/224/112 inputs, SE at AB1..AB3,
/// 8 coupling blocks, 100 epochs, two runs).
RunConfig default_run_config();

/// Parses config text over the defaults. Unknown keys, type mismatches and
/// malformed lines are ConfigErrors naming the key or line.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies one `section.key=value` override; bare words are accepted for
/// string-valued keys.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Validates cross-field constraints; run after all overrides.
void validate(const RunConfig& cfg);

/// Every schema key with its current value.
nlohmann::json to_flat_json(const RunConfig& cfg);

/// Round-trippable config text.
std::string to_config_text(const RunConfig& cfg);

/// Schema keys in file order.
std::vector<std::string> config_keys();

}  // namespace attnflow
