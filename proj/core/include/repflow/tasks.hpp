#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace repflow {

enum class PromptKind { kvpr, mdqa };
std::string to_string(PromptKind kind);

struct PromptInstance {
  PromptKind kind = PromptKind::kvpr;
  std::string text;
  std::size_t n_items = 0;
  std::size_t gold_index = 0;  // 1-based position of the gold item
  int label = 0;               // gold_index - 1
  std::uint64_t seed = 0;
};

struct Document {
  std::string title;
  std::string body;

  bool operator==(const Document&) const = default;
};

struct MdqaRecord {
  std::string question;
  std::string answer;
  Document gold_document;
  std::vector<Document> distractors;
};

/// Random 8-4-4-4-12 lowercase hex string with the version-4 and RFC 4122
/// variant nibbles set.
std::string uuid_v4(std::uint64_t seed, std::uint64_t index);

/// `n_pairs` distinct UUID keys and values; the queried pair sits at
/// `gold_index` (1-based). Deterministic in (n_pairs, gold_index, seed).
PromptInstance gen_kvpr(std::size_t n_pairs, std::size_t gold_index, std::uint64_t seed);

/// Shuffles the distractors by seed, keeps n_docs - 1 of them and inserts
/// the gold document at `gold_index` (1-based).
PromptInstance build_mdqa(const MdqaRecord& record, std::size_t n_docs, std::size_t gold_index, std::uint64_t seed);

/// JSON-lines corpus: {"question", "answer", "documents": [{"title", "text", "is_gold"}]}.
/// Each record needs exactly one gold document.
std::vector<MdqaRecord> ingest_mdqa_corpus(const std::filesystem::path& path);
std::vector<MdqaRecord> parse_mdqa_corpus(std::string_view text);

/// Number of whitespace-delimited tokens.
std::size_t whitespace_tokens(std::string_view text);

/// Largest n in [1, max_items] with length_of(n) <= target, assuming
/// length_of is non-decreasing. Returns 0 if even n = 1 is too long.
std::size_t items_for_length(std::size_t target, std::size_t max_items,
                             const std::function<std::size_t(std::size_t)>& length_of);

/// prompt.json bytes: {kind, text, n_items, gold_index, label, seed}.
std::string prompt_json(const PromptInstance& prompt);
PromptInstance parse_prompt_json(std::string_view text);

}  // namespace repflow
