#pragma once

#include <filesystem>

#include "repflow/blocks.hpp"

namespace repflow {

inline constexpr const char* kParamsManifestFile = "params.json";
inline constexpr const char* kParamsBinaryFile = "params.bin";

/// Parameter sets use the activation convention: a JSON manifest listing
/// shape-tagged tensors in order, and one f32le binary holding them
/// back to back (each tensor row-major).
void write_params(const TransformerParams& params, const std::filesystem::path& dir);
void write_params(const MambaParams& params, const std::filesystem::path& dir);

TransformerParams read_transformer_params(const std::filesystem::path& dir);
MambaParams read_mamba_params(const std::filesystem::path& dir);

std::string to_string(AttentionMode mode);
std::string to_string(Nonlinearity mode);
AttentionMode parse_attention_mode(std::string_view name);
Nonlinearity parse_nonlinearity(std::string_view name);

}  // namespace repflow
