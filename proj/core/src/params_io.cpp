#include "repflow/params_io.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "io_util.hpp"
#include "json.hpp"
#include "repflow/activation_store.hpp"
#include "repflow/error.hpp"

namespace repflow {
namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string to_string(AttentionMode mode) { return mode == AttentionMode::softmax ? "softmax" : "mean_field"; }

std::string to_string(Nonlinearity mode) { return mode == Nonlinearity::exact ? "exact" : "linear_gain"; }

AttentionMode parse_attention_mode(std::string_view name) {
  if (name == "softmax") return AttentionMode::softmax;
  if (name == "mean_field") return AttentionMode::mean_field;
  throw Error("unknown attention mode: " + std::string(name));
}

Nonlinearity parse_nonlinearity(std::string_view name) {
  if (name == "exact") return Nonlinearity::exact;
  if (name == "linear_gain") return Nonlinearity::linear_gain;
  throw Error("unknown nonlinearity mode: " + std::string(name));
}

namespace {

constexpr int kParamsVersion = 1;

class TensorWriter {
 public:
  void add(const std::string& name, const Matrix& m) {
    ordered_json entry;
    entry["name"] = name;
    entry["rows"] = m.rows();
    entry["cols"] = m.cols();
    entries_.push_back(std::move(entry));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) values_.push_back(m(i, j));
  }
  void add(const std::string& name, const Vector& v) { add(name, Matrix(v)); }

  void write(ordered_json manifest, const fs::path& dir) {
    for (const double v : values_)
      if (!std::isfinite(v)) throw Error("non-finite parameter");
    detail::ensure_dir(dir);
    manifest["dtype"] = StackManifest::kDtype;
    manifest["tensors"] = entries_;
    detail::write_file(dir / kParamsManifestFile, manifest.dump(2) + "\n");
    detail::write_file(dir / kParamsBinaryFile, encode_f32le(values_));
  }

 private:
  ordered_json entries_ = ordered_json::array();
  std::vector<double> values_;
};

class TensorReader {
 public:
  explicit TensorReader(const fs::path& dir) {
    try {
      manifest_ = ordered_json::parse(detail::read_text(dir / kParamsManifestFile));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("malformed parameter manifest in " + dir.string() + ": " + e.what());
    }
    if (manifest_.value("version", 0) != kParamsVersion) throw Error("unsupported version in parameter manifest");
    if (manifest_.value("dtype", "") != StackManifest::kDtype) throw Error("unsupported dtype in parameter manifest");
    values_ = decode_f32le(detail::read_bytes(dir / kParamsBinaryFile));
    std::size_t expected = 0;
    for (const auto& t : manifest_.at("tensors"))
      expected += t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>();
    if (expected != values_.size()) throw Error("length mismatch: parameter binary does not match manifest");
  }

  const ordered_json& manifest() const { return manifest_; }

  Matrix next(const std::string& name) {
    const auto& tensors = manifest_.at("tensors");
    if (index_ >= tensors.size()) throw Error("parameter manifest: missing tensor " + name);
    const auto& t = tensors[index_++];
    if (t.at("name").get<std::string>() != name)
      throw Error("parameter manifest: expected tensor " + name + ", found " + t.at("name").get<std::string>());
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = values_[offset_++];
    return m;
  }

  Vector next_vector(const std::string& name) {
    Matrix m = next(name);
    if (m.cols() != 1) throw Error("parameter " + name + " must be a column vector");
    return m.col(0);
  }

 private:
  ordered_json manifest_;
  std::vector<double> values_;
  std::size_t index_ = 0;
  std::size_t offset_ = 0;
};

std::string kind_of(const ordered_json& m) { return m.value("kind", ""); }

}  // namespace

void write_params(const TransformerParams& params, const fs::path& dir) {
  params.validate();
  TensorWriter w;
  w.add("w_q", params.w_q);
  w.add("w_k", params.w_k);
  w.add("w_v", params.w_v);
  w.add("w_1", params.w_1);
  w.add("b_1", params.b_1);
  w.add("w_2", params.w_2);
  w.add("b_2", params.b_2);
  ordered_json manifest;
  manifest["version"] = kParamsVersion;
  manifest["kind"] = "transformer";
  manifest["attention"] = to_string(params.attention);
  manifest["nonlinearity"] = to_string(params.nonlinearity);
  w.write(std::move(manifest), dir);
}

void write_params(const MambaParams& params, const fs::path& dir) {
  params.validate();
  TensorWriter w;
  w.add("w_z", params.w_z);
  for (std::size_t j = 0; j < params.conv_taps.size(); ++j) w.add("conv." + std::to_string(j), params.conv_taps[j]);
  for (std::size_t t = 0; t < params.steps(); ++t) {
    const std::string s = std::to_string(t);
    w.add("a_bar." + s, params.a_bar[t]);
    w.add("b_bar." + s, params.b_bar[t]);
    w.add("c." + s, params.c[t]);
  }
  ordered_json manifest;
  manifest["version"] = kParamsVersion;
  manifest["kind"] = "mamba";
  manifest["steps"] = params.steps();
  manifest["conv_kernel"] = params.kernel_size();
  manifest["nonlinearity"] = to_string(params.nonlinearity);
  w.write(std::move(manifest), dir);
}

TransformerParams read_transformer_params(const fs::path& dir) {
  TensorReader r(dir);
  if (kind_of(r.manifest()) != "transformer") throw Error("parameter set in " + dir.string() + " is not a transformer");
  TransformerParams p;
  p.w_q = r.next("w_q");
  p.w_k = r.next("w_k");
  p.w_v = r.next("w_v");
  p.w_1 = r.next("w_1");
  p.b_1 = r.next_vector("b_1");
  p.w_2 = r.next("w_2");
  p.b_2 = r.next_vector("b_2");
  p.attention = parse_attention_mode(r.manifest().value("attention", "softmax"));
  p.nonlinearity = parse_nonlinearity(r.manifest().value("nonlinearity", "exact"));
  p.validate();
  return p;
}

MambaParams read_mamba_params(const fs::path& dir) {
  TensorReader r(dir);
  if (kind_of(r.manifest()) != "mamba") throw Error("parameter set in " + dir.string() + " is not a mamba block");
  const auto steps = r.manifest().at("steps").get<std::size_t>();
  const auto kernel = r.manifest().at("conv_kernel").get<std::size_t>();
  MambaParams p;
  p.w_z = r.next("w_z");
  for (std::size_t j = 0; j < kernel; ++j) p.conv_taps.push_back(r.next("conv." + std::to_string(j)));
  for (std::size_t t = 0; t < steps; ++t) {
    const std::string s = std::to_string(t);
    p.a_bar.push_back(r.next("a_bar." + s));
    p.b_bar.push_back(r.next("b_bar." + s));
    p.c.push_back(r.next("c." + s));
  }
  p.nonlinearity = parse_nonlinearity(r.manifest().value("nonlinearity", "exact"));
  p.validate();
  return p;
}

}  // namespace repflow
