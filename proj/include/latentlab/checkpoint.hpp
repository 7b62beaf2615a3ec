#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentlab/defmod.hpp"
#include "latentlab/flow.hpp"
#include "latentlab/inference.hpp"
#include "latentlab/metrics.hpp"
#include "latentlab/nn.hpp"
#include "latentlab/vae.hpp"

namespace latentlab {

inline constexpr int kCheckpointVersion = 1;

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);
// Little-endian IEEE-754 doubles.
std::string encode_doubles(std::span<const double> values);
std::vector<double> decode_doubles(const std::string& text);

// Config records. from_json starts at `base` and overrides the keys present;
// unknown keys and wrong types raise DataError naming the field.
nlohmann::json to_json(const OptimizerConfig& c);
nlohmann::json to_json(const VaeConfig& c);
nlohmann::json to_json(const FlowConfig& c);
nlohmann::json to_json(const MetricsConfig& c);
nlohmann::json to_json(const InnTrainConfig& c);
nlohmann::json to_json(const InferenceTrainConfig& c);
OptimizerConfig optimizer_from_json(const nlohmann::json& j, OptimizerConfig base = {},
                                    const std::string& where = "optimizer");
VaeConfig vae_config_from_json(const nlohmann::json& j, VaeConfig base = {}, const std::string& where = "vae");
FlowConfig flow_config_from_json(const nlohmann::json& j, FlowConfig base = {}, const std::string& where = "flow");
MetricsConfig metrics_config_from_json(const nlohmann::json& j, MetricsConfig base = {},
                                       const std::string& where = "metrics");
InnTrainConfig inn_config_from_json(const nlohmann::json& j, InnTrainConfig base = {},
                                    const std::string& where = "inn");
InferenceTrainConfig inference_config_from_json(const nlohmann::json& j, InferenceTrainConfig base = {},
                                                const std::string& where = "inference");

// {name: {shape, data}} with every value base64-encoded.
nlohmann::json params_to_json(const ParameterStore& params);
// Validates every entry before writing any value; errors name the parameter.
void params_from_json(ParameterStore& params, const nlohmann::json& j);

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

void save_vae(const std::string& path, const VaeModel& model);
VaeModel load_vae(const std::string& path);

void save_flow(const std::string& path, const FlowStack& stack);
FlowStack load_flow(const std::string& path);

void save_inference_head(const std::string& path, const InferenceHead& head);
InferenceHead load_inference_head(const std::string& path);

}  // namespace latentlab
