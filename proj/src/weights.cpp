#include "evstereo/weights.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "evstereo/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "weight container assumes a little-endian host");

namespace evstereo {

namespace fs = std::filesystem;
using nlohmann::json;

static constexpr const char* kFormat = "f64-weights-v1";

void save_weight_dir(const std::string& dir, const std::map<std::string, Tensor>& tensors,
                     const json& config) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("weights: cannot create directory " + dir + ": " + ec.message());

  json manifest;
  manifest["format"] = kFormat;
  manifest["config"] = config;
  json entries = json::object();
  int64_t offset = 0;
  for (const auto& [name, t] : tensors) {  // std::map: sorted-name order
    json e;
    e["shape"] = t.shape();
    e["dtype"] = "f64";
    e["offset"] = offset;
    entries[name] = e;
    offset += t.numel() * int64_t(sizeof(double));
  }
  manifest["tensors"] = entries;

  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!mf) throw IoError("weights: cannot write manifest.json in " + dir);
  mf << manifest.dump(2) << "\n";
  mf.close();
  if (!mf) throw IoError("weights: failed writing manifest.json in " + dir);

  std::ofstream bf(fs::path(dir) / "weights.bin", std::ios::binary);
  if (!bf) throw IoError("weights: cannot write weights.bin in " + dir);
  for (const auto& [name, t] : tensors)
    bf.write(reinterpret_cast<const char*>(t.data()),
             std::streamsize(size_t(t.numel()) * sizeof(double)));
  bf.close();
  if (!bf) throw IoError("weights: failed writing weights.bin in " + dir);
}

WeightDir load_weight_dir(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!mf) throw IoError("weights: cannot open " + dir + "/manifest.json");
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw ContractError("weights: malformed manifest.json: " + std::string(e.what()));
  }
  contract(manifest.contains("format") && manifest["format"] == kFormat,
           "weights: manifest missing or unknown format tag");
  contract(manifest.contains("tensors") && manifest["tensors"].is_object(),
           "weights: manifest missing tensors table");

  std::ifstream bf(fs::path(dir) / "weights.bin", std::ios::binary | std::ios::ate);
  if (!bf) throw IoError("weights: cannot open " + dir + "/weights.bin");
  int64_t file_size = int64_t(bf.tellg());

  WeightDir out;
  out.config = manifest.value("config", json::object());
  int64_t expected_size = 0;
  for (const auto& [name, e] : manifest["tensors"].items()) {
    contract(e.contains("shape") && e.contains("dtype") && e.contains("offset"),
             "weights: manifest entry for " + name + " missing shape/dtype/offset");
    contract(e["dtype"] == "f64", "weights: tensor " + name + " has unsupported dtype");
    std::vector<int64_t> shape = e["shape"].get<std::vector<int64_t>>();
    int64_t offset = e["offset"].get<int64_t>();
    int64_t bytes = numel_of(shape) * int64_t(sizeof(double));
    contract(offset >= 0 && offset + bytes <= file_size,
             "weights: tensor " + name + " extends past weights.bin");
    Tensor t(shape);
    bf.seekg(offset);
    bf.read(reinterpret_cast<char*>(t.data()), std::streamsize(bytes));
    if (!bf) throw IoError("weights: short read for tensor " + name);
    out.tensors.emplace(name, std::move(t));
    expected_size += bytes;
  }
  contract(expected_size == file_size, "weights: weights.bin size " + std::to_string(file_size) +
                                           " does not match manifest total " +
                                           std::to_string(expected_size));
  return out;
}

}  // namespace evstereo
