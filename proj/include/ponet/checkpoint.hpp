#pragma once

// Versioned JSON checkpoint of encoder config + named parameter tensors.
// Tensor names follow for_each_param: tok_embed, pos_embed,
// layers.<i>.mix.w_qg ... layers.<i>.ffn_b2, head_w, head_b.

#include <string>
#include <utility>

#include <json.hpp>

#include "ponet/encoder.hpp"

namespace ponet {

inline constexpr const char* kCheckpointFormat = "ponet-checkpoint";
inline constexpr int kCheckpointVersion = 1;

nlohmann::json config_to_json(const EncoderConfig& cfg);
EncoderConfig config_from_json(const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const EncoderConfig& cfg,
                                  EncoderParams<double>& params);
std::pair<EncoderConfig, EncoderParams<double>> checkpoint_from_json(
    const nlohmann::json& j);

void save_checkpoint(const std::string& path, const EncoderConfig& cfg,
                     EncoderParams<double>& params);
std::pair<EncoderConfig, EncoderParams<double>> load_checkpoint(
    const std::string& path);

}  // namespace ponet
