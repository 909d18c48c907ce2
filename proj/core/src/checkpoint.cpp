#include "reid/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "reid/rten.hpp"

namespace reid {

namespace {

constexpr char kR2mtMagic[4] = {'R', '2', 'M', 'T'};
constexpr std::uint8_t kR2mtVersion = 1;

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& item : j.items()) {
    if (!allowed.contains(item.key())) {
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
    }
  }
}

StageSpec stage_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("each stage must be an object");
  reject_unknown_keys(j, {"blocks", "out_channels", "stride"}, "stage");
  StageSpec st;
  if (j.contains("blocks")) st.blocks = j.at("blocks").get<int>();
  if (j.contains("out_channels")) {
    st.out_channels = j.at("out_channels").get<int>();
  }
  if (j.contains("stride")) st.stride = j.at("stride").get<int>();
  return st;
}

}  // namespace

std::string backbone_config_to_json(const BackboneConfig& cfg) {
  json stages = json::array();
  for (const StageSpec& st : cfg.stages) {
    stages.push_back({{"blocks", st.blocks},
                      {"out_channels", st.out_channels},
                      {"stride", st.stride}});
  }
  const json j{{"in_channels", cfg.in_channels},
               {"stem_channels", cfg.stem_channels},
               {"stem_kernel", cfg.stem_kernel},
               {"stem_stride", cfg.stem_stride},
               {"stages", stages},
               {"scale", cfg.scale},
               {"descriptor_dim", cfg.descriptor_dim},
               {"num_identities", cfg.num_identities},
               {"first_split_conv", cfg.first_split_conv}};
  return j.dump();
}

BackboneConfig backbone_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad backbone config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("backbone config must be an object");
  reject_unknown_keys(j,
                      {"in_channels", "stem_channels", "stem_kernel",
                       "stem_stride", "stages", "scale", "descriptor_dim",
                       "num_identities", "first_split_conv"},
                      "backbone config");
  BackboneConfig cfg;
  try {
    if (j.contains("in_channels")) {
      cfg.in_channels = j.at("in_channels").get<int>();
    }
    if (j.contains("stem_channels")) {
      cfg.stem_channels = j.at("stem_channels").get<int>();
    }
    if (j.contains("stem_kernel")) {
      cfg.stem_kernel = j.at("stem_kernel").get<int>();
    }
    if (j.contains("stem_stride")) {
      cfg.stem_stride = j.at("stem_stride").get<int>();
    }
    if (j.contains("stages")) {
      if (!j.at("stages").is_array()) {
        throw ConfigError("'stages' must be an array");
      }
      cfg.stages.clear();
      for (const json& st : j.at("stages")) {
        cfg.stages.push_back(stage_from_json(st));
      }
    }
    if (j.contains("scale")) cfg.scale = j.at("scale").get<int>();
    if (j.contains("descriptor_dim")) {
      cfg.descriptor_dim = j.at("descriptor_dim").get<int>();
    }
    if (j.contains("num_identities")) {
      cfg.num_identities = j.at("num_identities").get<int>();
    }
    if (j.contains("first_split_conv")) {
      cfg.first_split_conv = j.at("first_split_conv").get<bool>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad backbone config value: ") + e.what());
  }
  return cfg;
}

void save_checkpoint(const Model<float>& model,
                     const OptimizerState<float>& state,
                     const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path);

  // std::map keeps the entries in the lexicographic order the format wants.
  std::map<std::string, const Tensor<float>*> entries;
  visit_state(model,
              [&entries](const std::string& name, const Tensor<float>& t) {
                entries["model." + name] = &t;
              });
  for (const auto& [name, buf] : state.momentum) {
    entries["momentum." + name] = &buf;
  }

  os.write(kR2mtMagic, 4);
  write_u8(os, kR2mtVersion);
  const std::string cfg_json = backbone_config_to_json(model.config);
  write_u32_le(os, static_cast<std::uint32_t>(cfg_json.size()));
  os.write(cfg_json.data(),
           static_cast<std::streamsize>(cfg_json.size()));
  write_u32_le(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    write_u16_le(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_rten(os, *tensor);
  }
  if (!os) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);

  char magic[4] = {0, 0, 0, 0};
  is.read(magic, 4);
  if (is.gcount() != 4) {
    throw DataError("truncated checkpoint header in " + path);
  }
  if (std::memcmp(magic, kR2mtMagic, 4) != 0) {
    throw DataError("bad R2MT magic in " + path);
  }
  const std::uint8_t version = read_u8(is, "checkpoint version");
  if (version != kR2mtVersion) {
    throw DataError("unsupported R2MT version " + std::to_string(version) +
                    " in " + path);
  }
  const std::uint32_t cfg_len = read_u32_le(is, "checkpoint config length");
  std::string cfg_json(cfg_len, '\0');
  is.read(cfg_json.data(), static_cast<std::streamsize>(cfg_len));
  if (static_cast<std::uint32_t>(is.gcount()) != cfg_len) {
    throw DataError("truncated checkpoint config in " + path);
  }
  const BackboneConfig cfg = backbone_config_from_json(cfg_json);

  const std::uint32_t count = read_u32_le(is, "checkpoint tensor count");
  std::map<std::string, Tensor<float>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = read_u16_le(is, "tensor name length");
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (static_cast<std::uint16_t>(is.gcount()) != name_len) {
      throw DataError("truncated tensor name in " + path);
    }
    if (!tensors.emplace(name, read_rten<float>(is)).second) {
      throw DataError("duplicate tensor '" + name + "' in " + path);
    }
  }

  Rng dummy(0);
  Checkpoint ck{build_backbone<float>(cfg, dummy), {}};
  std::size_t consumed = 0;
  visit_state<float>(ck.model, [&](const std::string& name,
                                   Tensor<float>& t) {
    auto it = tensors.find("model." + name);
    if (it == tensors.end()) {
      throw DataError("checkpoint " + path + " is missing tensor model." +
                      name);
    }
    t.require_same_dims(it->second, name.c_str());
    t = it->second;
    ++consumed;
  });
  ck.state = make_optimizer_state(ck.model);
  for (auto& [name, buf] : ck.state.momentum) {
    auto it = tensors.find("momentum." + name);
    if (it == tensors.end()) {
      throw DataError("checkpoint " + path + " is missing tensor momentum." +
                      name);
    }
    buf.require_same_dims(it->second, name.c_str());
    buf = it->second;
    ++consumed;
  }
  if (consumed != tensors.size()) {
    for (const auto& [name, t] : tensors) {
      const bool is_model = name.starts_with("model.");
      const bool is_momentum = name.starts_with("momentum.");
      if (!is_model && !is_momentum) {
        throw DataError("unexpected tensor '" + name + "' in " + path);
      }
    }
    throw DataError("checkpoint " + path + " carries " +
                    std::to_string(tensors.size() - consumed) +
                    " tensors that match no parameter");
  }
  return ck;
}

}  // namespace reid
