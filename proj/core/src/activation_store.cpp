#include "repflow/activation_store.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "io_util.hpp"
#include "repflow/error.hpp"

namespace repflow {
namespace fs = std::filesystem;
using nlohmann::ordered_json;
using detail::ensure_dir;
using detail::read_bytes;
using detail::read_text;
using detail::write_file;

ActivationStack::ActivationStack(std::size_t layers, std::size_t tokens, std::size_t dims,
                                 std::vector<double> data, StackMeta meta)
    : layers_(layers), tokens_(tokens), dims_(dims), data_(std::move(data)), meta_(std::move(meta)) {
  if (layers_ < 2 || tokens_ < 1 || dims_ < 1) {
    throw Error("activation stack needs layers >= 2, tokens >= 1, dims >= 1 (got " +
                std::to_string(layers_) + "x" + std::to_string(tokens_) + "x" + std::to_string(dims_) + ")");
  }
  if (data_.size() != layers_ * tokens_ * dims_) {
    throw Error("activation stack data length " + std::to_string(data_.size()) + " != layers*tokens*dims " +
                std::to_string(layers_ * tokens_ * dims_));
  }
}

ActivationStack ActivationStack::from_layers(std::span<const Matrix> layers, StackMeta meta) {
  if (layers.empty()) throw Error("activation stack needs at least one snapshot");
  const auto tokens = static_cast<std::size_t>(layers.front().rows());
  const auto dims = static_cast<std::size_t>(layers.front().cols());
  std::vector<double> data;
  data.reserve(layers.size() * tokens * dims);
  for (const Matrix& snapshot : layers) {
    if (static_cast<std::size_t>(snapshot.rows()) != tokens || static_cast<std::size_t>(snapshot.cols()) != dims) {
      throw Error("snapshots of an activation stack must share one shape");
    }
    for (Eigen::Index t = 0; t < snapshot.rows(); ++t) {
      for (Eigen::Index k = 0; k < snapshot.cols(); ++k) data.push_back(snapshot(t, k));
    }
  }
  return ActivationStack(layers.size(), tokens, dims, std::move(data), std::move(meta));
}

Matrix ActivationStack::layer(std::size_t layer) const {
  if (layer >= layers_) throw Error("layer index " + std::to_string(layer) + " out of range");
  const auto n = static_cast<Eigen::Index>(tokens_);
  const auto d = static_cast<Eigen::Index>(dims_);
  return Eigen::Map<const RowMatrix>(data_.data() + layer * tokens_ * dims_, n, d);
}

Vector ActivationStack::token(std::size_t layer, std::size_t token) const {
  if (layer >= layers_ || token >= tokens_) throw Error("stack index out of range");
  return Eigen::Map<const Vector>(data_.data() + (layer * tokens_ + token) * dims_,
                                  static_cast<Eigen::Index>(dims_));
}

bool ActivationStack::all_finite() const noexcept {
  for (const double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

ActivationStack ActivationStack::scaled(double factor) const {
  std::vector<double> data = data_;
  for (double& v : data) v *= factor;
  return ActivationStack(layers_, tokens_, dims_, std::move(data), meta_);
}

std::vector<unsigned char> encode_f32le(std::span<const double> values) {
  std::vector<unsigned char> bytes;
  bytes.reserve(values.size() * 4);
  for (const double v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    bytes.push_back(static_cast<unsigned char>(bits));
    bytes.push_back(static_cast<unsigned char>(bits >> 8));
    bytes.push_back(static_cast<unsigned char>(bits >> 16));
    bytes.push_back(static_cast<unsigned char>(bits >> 24));
  }
  return bytes;
}

std::vector<double> decode_f32le(std::span<const unsigned char> bytes) {
  if (bytes.size() % 4 != 0) throw Error("length mismatch: binary32 payload is not a multiple of 4 bytes");
  std::vector<double> values;
  values.reserve(bytes.size() / 4);
  for (std::size_t i = 0; i < bytes.size(); i += 4) {
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[i]) | (static_cast<std::uint32_t>(bytes[i + 1]) << 8) |
                               (static_cast<std::uint32_t>(bytes[i + 2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[i + 3]) << 24);
    values.push_back(static_cast<double>(std::bit_cast<float>(bits)));
  }
  return values;
}

namespace {

template <typename T>
T require(const ordered_json& j, const char* key) {
  if (!j.contains(key)) throw Error(std::string("manifest missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(std::string("manifest key '") + key + "' has the wrong type");
  }
}

}  // namespace

void write_stack(const ActivationStack& stack, const fs::path& dir) {
  if (!stack.all_finite()) throw Error("non-finite activation in stack '" + stack.meta().sample_id + "'");
  ensure_dir(dir);
  ordered_json manifest;
  manifest["version"] = StackManifest::kVersion;
  manifest["layers"] = stack.layers();
  manifest["tokens"] = stack.tokens();
  manifest["dims"] = stack.dims();
  manifest["dtype"] = StackManifest::kDtype;
  manifest["layout"] = StackManifest::kLayout;
  manifest["model"] = stack.meta().model_name;
  manifest["sample_id"] = stack.meta().sample_id;
  manifest["task"] = stack.meta().task;
  write_file(dir / kManifestFile, manifest.dump(2) + "\n");
  write_file(dir / kActivationsFile, encode_f32le(stack.data()));
}

ActivationStack read_stack(const fs::path& dir) {
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(read_text(dir / kManifestFile));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("malformed manifest in " + dir.string() + ": " + e.what());
  }
  StackManifest m;
  m.version = require<int>(manifest, "version");
  m.layers = require<std::size_t>(manifest, "layers");
  m.tokens = require<std::size_t>(manifest, "tokens");
  m.dims = require<std::size_t>(manifest, "dims");
  m.dtype = require<std::string>(manifest, "dtype");
  m.layout = require<std::string>(manifest, "layout");
  m.model = require<std::string>(manifest, "model");
  m.sample_id = require<std::string>(manifest, "sample_id");
  m.task = require<std::string>(manifest, "task");
  if (m.version != StackManifest::kVersion) throw Error("unsupported version " + std::to_string(m.version));
  if (m.dtype != StackManifest::kDtype) throw Error("unsupported dtype '" + m.dtype + "'");
  if (m.layout != StackManifest::kLayout) throw Error("unsupported layout '" + m.layout + "'");

  const std::vector<unsigned char> bytes = read_bytes(dir / kActivationsFile);
  const std::size_t expected = 4 * m.layers * m.tokens * m.dims;
  if (bytes.size() != expected) {
    throw Error("length mismatch: manifest expects " + std::to_string(expected) + " bytes, " + kActivationsFile +
                " holds " + std::to_string(bytes.size()));
  }
  ActivationStack stack(m.layers, m.tokens, m.dims, decode_f32le(bytes), {m.model, m.sample_id, m.task});
  if (!stack.all_finite()) throw Error("non-finite activation in " + dir.string());
  return stack;
}

void write_dataset_index(const fs::path& root, const std::vector<DatasetEntry>& entries) {
  ensure_dir(root);
  ordered_json index;
  index["version"] = 1;
  index["samples"] = ordered_json::array();
  for (const DatasetEntry& e : entries) {
    ordered_json item;
    item["path"] = e.path;
    item["label"] = e.label;
    index["samples"].push_back(item);
  }
  write_file(root / kDatasetIndexFile, index.dump(2) + "\n");
}

DatasetIndex read_dataset_index(const fs::path& index_path) {
  const fs::path file = fs::is_directory(index_path) ? index_path / kDatasetIndexFile : index_path;
  ordered_json index;
  try {
    index = ordered_json::parse(read_text(file));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("malformed dataset index " + file.string() + ": " + e.what());
  }
  if (!index.contains("samples") || !index["samples"].is_array()) {
    throw Error("dataset index " + file.string() + " has no 'samples' array");
  }
  DatasetIndex out;
  out.root = file.parent_path();
  for (const auto& item : index["samples"]) {
    if (!item.contains("path") || !item.contains("label")) throw Error("dataset entry needs 'path' and 'label'");
    out.entries.push_back({item["path"].get<std::string>(), item["label"].get<int>()});
  }
  return out;
}

std::vector<std::pair<ActivationStack, int>> load_dataset(const DatasetIndex& index) {
  std::vector<std::pair<ActivationStack, int>> samples;
  samples.reserve(index.entries.size());
  for (const DatasetEntry& e : index.entries) samples.emplace_back(read_stack(index.root / e.path), e.label);
  return samples;
}

}  // namespace repflow
