#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "repflow/linalg.hpp"

namespace repflow {

struct StackMeta {
  std::string model_name;
  std::string sample_id;
  std::string task;

  bool operator==(const StackMeta&) const = default;
};

/// Layerwise activations of one sample: snapshot 0 is the embedding output,
/// snapshot l the output of block l. Stored in binary64, layer-major, then
/// token, then dim.
class ActivationStack {
 public:
  ActivationStack(std::size_t layers, std::size_t tokens, std::size_t dims, std::vector<double> data,
                  StackMeta meta = {});

  /// Builds a stack from equally shaped [tokens x dims] snapshots.
  static ActivationStack from_layers(std::span<const Matrix> layers, StackMeta meta = {});

  std::size_t layers() const noexcept { return layers_; }
  std::size_t tokens() const noexcept { return tokens_; }
  std::size_t dims() const noexcept { return dims_; }

  double at(std::size_t layer, std::size_t token, std::size_t dim) const noexcept {
    return data_[(layer * tokens_ + token) * dims_ + dim];
  }

  /// Snapshot `layer` as a [tokens x dims] matrix.
  Matrix layer(std::size_t layer) const;
  /// Row `token` of snapshot `layer`.
  Vector token(std::size_t layer, std::size_t token) const;

  std::span<const double> data() const noexcept { return data_; }
  const StackMeta& meta() const noexcept { return meta_; }
  void set_meta(StackMeta meta) { meta_ = std::move(meta); }

  bool all_finite() const noexcept;

  /// Same shape and metadata, data multiplied by `factor`.
  ActivationStack scaled(double factor) const;

 private:
  std::size_t layers_;
  std::size_t tokens_;
  std::size_t dims_;
  std::vector<double> data_;
  StackMeta meta_;
};

struct StackManifest {
  static constexpr int kVersion = 1;
  static constexpr const char* kDtype = "f32le";
  static constexpr const char* kLayout = "layer_token_dim";

  int version = kVersion;
  std::size_t layers = 0;
  std::size_t tokens = 0;
  std::size_t dims = 0;
  std::string dtype = kDtype;
  std::string layout = kLayout;
  std::string model;
  std::string sample_id;
  std::string task;
};

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kActivationsFile = "activations.bin";
inline constexpr const char* kDatasetIndexFile = "samples.json";

/// Writes manifest.json and activations.bin (IEEE-754 binary32, little-endian)
/// into `dir`, creating it if needed. Rejects non-finite data before writing.
void write_stack(const ActivationStack& stack, const std::filesystem::path& dir);
ActivationStack read_stack(const std::filesystem::path& dir);

/// Exact bytes of activations.bin for `stack`.
std::vector<unsigned char> encode_f32le(std::span<const double> values);
std::vector<double> decode_f32le(std::span<const unsigned char> bytes);

/// A dataset is a directory of stack directories indexed by samples.json.
struct DatasetEntry {
  std::string path;  // relative to the index's directory
  int label = 0;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;
};

void write_dataset_index(const std::filesystem::path& root, const std::vector<DatasetEntry>& entries);
/// Accepts either the samples.json path or the directory containing it.
DatasetIndex read_dataset_index(const std::filesystem::path& index_path);
std::vector<std::pair<ActivationStack, int>> load_dataset(const DatasetIndex& index);

}  // namespace repflow
