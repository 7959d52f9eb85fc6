#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patcls/autograd.hpp"
#include "patcls/errors.hpp"

namespace patcls {

// Parameter checkpoints: a flat little-endian float64 blob plus a JSON
// manifest mapping tensor names to shapes and element offsets.

inline void write_f64_le(std::ostream& os, double v) {
  const uint64_t bits = std::bit_cast<uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

inline double read_f64_le(std::istream& is) {
  char buf[8];
  is.read(buf, 8);
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline void save_checkpoint(const std::vector<const Parameter*>& params, const std::string& bin_path,
                            const std::string& manifest_path) {
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot write " + bin_path);
  nlohmann::json manifest;
  manifest["dtype"] = "float64";
  manifest["byte_order"] = "little";
  nlohmann::json tensors = nlohmann::json::array();
  size_t offset = 0;
  for (const Parameter* p : params) {
    nlohmann::json t;
    t["name"] = p->name();
    t["shape"] = p->value().shape();
    t["offset"] = offset;
    tensors.push_back(std::move(t));
    for (double v : p->value().data()) write_f64_le(bin, v);
    offset += p->value().numel();
  }
  manifest["tensors"] = std::move(tensors);
  bin.flush();
  if (!bin) throw IoError("short write to " + bin_path);
  std::ofstream mf(manifest_path);
  if (!mf) throw IoError("cannot write " + manifest_path);
  mf << manifest.dump(2) << "\n";
}

/// Loads by name into the given parameters; every parameter must be present
/// in the file with a matching shape.
inline void load_checkpoint(const std::vector<Parameter*>& params, const std::string& bin_path,
                            const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot read " + manifest_path);
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad manifest " + manifest_path + ": " + e.what());
  }
  if (manifest.value("dtype", "") != "float64" || manifest.value("byte_order", "") != "little")
    throw IoError("unsupported checkpoint layout in " + manifest_path);
  struct Entry {
    Shape shape;
    size_t offset;
  };
  std::unordered_map<std::string, Entry> index;
  for (const auto& t : manifest.at("tensors"))
    index[t.at("name").get<std::string>()] = {t.at("shape").get<Shape>(), t.at("offset").get<size_t>()};

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot read " + bin_path);
  for (Parameter* p : params) {
    auto it = index.find(p->name());
    if (it == index.end()) throw IoError("checkpoint is missing tensor '" + p->name() + "'");
    if (it->second.shape != p->value().shape())
      throw ShapeMismatch("checkpoint tensor '" + p->name() + "' has shape " + shape_str(it->second.shape) +
                          ", expected " + shape_str(p->value().shape()));
    bin.seekg(static_cast<std::streamoff>(it->second.offset * 8), std::ios::beg);
    for (size_t i = 0; i < p->value().numel(); ++i) p->value().at(i) = read_f64_le(bin);
    if (!bin) throw IoError("short read from " + bin_path);
  }
}

}  // namespace patcls
