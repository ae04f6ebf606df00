#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "prism/model.hpp"

namespace prism {

// JSON-lines corpora:
//   {"id": int, "query": [int...], "response": [int...]}
//   {"id": int, "query": [...], "positive": [...], "negative": [...]}
// Checkpoint: {"spec": {...}, "theta": [floats]}.

std::vector<Example> read_examples(const std::string& path);
void write_examples(const std::string& path, const std::vector<Example>& pool);

std::vector<PairedTarget> read_targets(const std::string& path);
void write_targets(const std::string& path, const std::vector<PairedTarget>& targets);

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const ModelParams& model);
ModelParams checkpoint_from_json(const nlohmann::json& j);
void write_checkpoint(const std::string& path, const ModelParams& model);
ModelParams read_checkpoint(const std::string& path);

/// Ids must be dense 0..n-1 in order and responses non-empty.
void validate_pool(const std::vector<Example>& pool);

/// Writes text, creating parent directories. Throws Error naming the path on failure.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace prism
