#include "ponet/checkpoint.hpp"

#include <fstream>

namespace ponet {

using nlohmann::json;

json config_to_json(const EncoderConfig& cfg) {
  return json{
      {"vocab_size", cfg.vocab_size},
      {"max_len", cfg.max_len},
      {"d", cfg.d},
      {"layers", cfg.layers},
      {"ffn_hidden", cfg.ffn_hidden},
      {"dropout_rate", cfg.dropout_rate},
      {"head", to_string(cfg.head)},
      {"num_classes", cfg.num_classes},
      {"mix_path", cfg.mix_path == MixPath::fused ? "fused" : "naive"},
      {"mixer",
       json{{"heads", cfg.mixer.heads},
            {"lmp_window", cfg.mixer.lmp_window},
            {"lmp_stride", cfg.mixer.lmp_stride},
            {"share_kv", cfg.mixer.share_kv},
            {"variant", to_string(cfg.mixer.variant)},
            {"tmp_enabled", cfg.mixer.tmp_enabled}}},
  };
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int64_t>();
  cfg.max_len = j.at("max_len").get<int64_t>();
  cfg.d = j.at("d").get<int64_t>();
  cfg.layers = j.at("layers").get<int64_t>();
  cfg.ffn_hidden = j.at("ffn_hidden").get<int64_t>();
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  cfg.head = head_from_string(j.at("head").get<std::string>());
  cfg.num_classes = j.at("num_classes").get<int64_t>();
  const std::string path = j.at("mix_path").get<std::string>();
  if (path != "fused" && path != "naive")
    throw ConfigError("unknown mix_path: " + path);
  cfg.mix_path = path == "fused" ? MixPath::fused : MixPath::naive;
  const json& m = j.at("mixer");
  cfg.mixer.heads = m.at("heads").get<int64_t>();
  cfg.mixer.lmp_window = m.at("lmp_window").get<int64_t>();
  cfg.mixer.lmp_stride = m.at("lmp_stride").get<int64_t>();
  cfg.mixer.share_kv = m.at("share_kv").get<bool>();
  cfg.mixer.variant = variant_from_string(m.at("variant").get<std::string>());
  cfg.mixer.tmp_enabled = m.at("tmp_enabled").get<bool>();
  cfg.mixer.d = cfg.d;
  cfg.validate();
  return cfg;
}

json checkpoint_to_json(const EncoderConfig& cfg,
                        EncoderParams<double>& params) {
  json tensors = json::object();
  params.for_each_param([&](const std::string& name, Tensor<double>& t) {
    json shape = json::array();
    for (int64_t d : t.shape()) shape.push_back(d);
    json data = json::array();
    for (int64_t i = 0; i < t.size(); ++i) data.push_back(t[i]);
    tensors[name] = json{{"shape", shape}, {"data", data}};
  });
  return json{{"format", kCheckpointFormat},
              {"version", kCheckpointVersion},
              {"config", config_to_json(cfg)},
              {"tensors", tensors}};
}

std::pair<EncoderConfig, EncoderParams<double>> checkpoint_from_json(
    const json& j) {
  if (j.value("format", "") != kCheckpointFormat)
    throw InputError("not a ponet checkpoint");
  if (j.value("version", -1) != kCheckpointVersion)
    throw InputError("unsupported checkpoint version");
  EncoderConfig cfg = config_from_json(j.at("config"));
  EncoderParams<double> params = EncoderParams<double>::zeros(cfg);
  const json& tensors = j.at("tensors");
  params.for_each_param([&](const std::string& name, Tensor<double>& t) {
    if (!tensors.contains(name))
      throw InputError("checkpoint missing tensor: " + name);
    const json& entry = tensors.at(name);
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    if (shape != t.shape())
      throw InputError("checkpoint shape mismatch for " + name);
    const json& data = entry.at("data");
    if (static_cast<int64_t>(data.size()) != t.size())
      throw InputError("checkpoint data size mismatch for " + name);
    for (int64_t i = 0; i < t.size(); ++i)
      t[i] = data[static_cast<size_t>(i)].get<double>();
    check_finite(t, name.c_str());
  });
  return {cfg, std::move(params)};
}

void save_checkpoint(const std::string& path, const EncoderConfig& cfg,
                     EncoderParams<double>& params) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open checkpoint for writing: " + path);
  out << checkpoint_to_json(cfg, params).dump();
}

std::pair<EncoderConfig, EncoderParams<double>> load_checkpoint(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint: " + path);
  json j;
  in >> j;
  return checkpoint_from_json(j);
}

}  // namespace ponet
