#pragma once

// JSON forms of the configuration structs, shared by checkpoints, the CLI
// config file and the normalization-parameter sidecar.

#include <filesystem>

#include <json.hpp>

#include "trajformer/data.hpp"
#include "trajformer/geo.hpp"
#include "trajformer/model_config.hpp"
#include "trajformer/training.hpp"

namespace trajformer {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);
void to_json(nlohmann::json& j, const NormalizationParams& p);
void from_json(const nlohmann::json& j, NormalizationParams& p);
void to_json(nlohmann::json& j, const MetricRecord& r);
void from_json(const nlohmann::json& j, MetricRecord& r);

Objective parse_objective(const std::string& s);
LossKind parse_loss_kind(const std::string& s);
AttentionMode parse_attention_mode(const std::string& s);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace trajformer
