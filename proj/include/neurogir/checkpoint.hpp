#pragma once

// Checkpoint directory: manifest.json lists {name, shape, dtype, kind,
// byte_offset} per tensor in model order; weights.bin holds the tensors back
// to back as little-endian float32.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "neurogir/optim.hpp"
#include "neurogir/volume.hpp"

namespace neurogir {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  TensorKind kind = TensorKind::parameter;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<CheckpointEntry> entries;
};

/// `extra` is merged into the manifest top level (model config, preprocessing).
inline void save_checkpoint(const std::filesystem::path& dir, const ParameterStore<float>& store,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = extra;
  manifest["format"] = "neurogir-checkpoint";
  manifest["version"] = 1;
  manifest["tensors"] = nlohmann::json::array();
  std::ofstream blob(dir / "weights.bin", std::ios::binary);
  if (!blob) throw FormatError("cannot write " + (dir / "weights.bin").string());
  std::size_t offset = 0;
  for (const auto& p : store.entries()) {
    manifest["tensors"].push_back({{"name", p.name},
                                   {"shape", p.value.shape()},
                                   {"dtype", "f32"},
                                   {"kind", p.kind == TensorKind::parameter ? "parameter" : "buffer"},
                                   {"byte_offset", offset}});
    detail::write_le(blob, p.value.values());
    offset += p.value.size() * sizeof(float);
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.json")) {
    throw FormatError("missing checkpoint manifest " + (dir / "manifest.json").string());
  }
  Checkpoint ck;
  try {
    ck.manifest = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  const std::string blob = detail::read_file(dir / "weights.bin");
  try {
    for (const auto& t : ck.manifest.at("tensors")) {
      if (t.at("dtype") != "f32") throw FormatError("unsupported checkpoint dtype " + t.at("dtype").dump());
      CheckpointEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      e.kind = t.value("kind", "parameter") == "buffer" ? TensorKind::buffer : TensorKind::parameter;
      const auto offset = t.at("byte_offset").get<std::size_t>();
      const std::size_t bytes = numel(e.shape) * sizeof(float);
      if (offset + bytes > blob.size()) throw FormatError("checkpoint tensor '" + e.name + "' runs past weights.bin");
      detail::read_le(blob.substr(offset, bytes), e.values);
      ck.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return ck;
}

/// Copies checkpoint values into the store; names and shapes must match exactly.
inline void apply_checkpoint(const Checkpoint& ck, ParameterStore<float>& store) {
  if (ck.entries.size() != store.entries().size()) {
    throw FormatError("checkpoint holds " + std::to_string(ck.entries.size()) + " tensors, model has " +
                      std::to_string(store.entries().size()));
  }
  for (const auto& e : ck.entries) {
    if (!store.contains(e.name)) throw FormatError("checkpoint tensor '" + e.name + "' is unknown to the model");
    Tensor<float> t = store.at(e.name).value;
    if (t.shape() != e.shape) {
      throw FormatError("checkpoint tensor '" + e.name + "' has shape " + shape_str(e.shape) + ", model expects " +
                        shape_str(t.shape()));
    }
    t.values() = e.values;
  }
}

}  // namespace neurogir
