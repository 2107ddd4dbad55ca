#include "repflow/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "io_util.hpp"
#include "json.hpp"
#include "repflow/error.hpp"
#include "repflow/random.hpp"

namespace repflow {
using nlohmann::ordered_json;

namespace {

constexpr int kUuidRetries = 16;

constexpr const char* kKvprInstruction =
    "Extract the value corresponding to the specified key in the JSON object below.";
constexpr const char* kMdqaInstruction =
    "Write a high-quality answer for the given question using only the provided search results (some of which "
    "might be irrelevant).";

std::string json_string(const std::string& s) { return ordered_json(s).dump(); }

}  // namespace

std::string to_string(PromptKind kind) { return kind == PromptKind::kvpr ? "kvpr" : "mdqa"; }

std::string uuid_v4(std::uint64_t seed, std::uint64_t index) {
  CounterRng rng(seed, stream_id("kvpr.uuid", index));
  unsigned char bytes[16];
  for (int i = 0; i < 16; i += 4) {
    const std::uint32_t w = rng.next_u32();
    for (int k = 0; k < 4; ++k) bytes[i + k] = static_cast<unsigned char>(w >> (8 * k));
  }
  bytes[6] = static_cast<unsigned char>((bytes[6] & 0x0f) | 0x40);
  bytes[8] = static_cast<unsigned char>((bytes[8] & 0x3f) | 0x80);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(36);
  for (int i = 0; i < 16; ++i) {
    if (i == 4 || i == 6 || i == 8 || i == 10) out.push_back('-');
    out.push_back(hex[bytes[i] >> 4]);
    out.push_back(hex[bytes[i] & 0x0f]);
  }
  return out;
}

PromptInstance gen_kvpr(std::size_t n_pairs, std::size_t gold_index, std::uint64_t seed) {
  if (n_pairs < 1) throw Error("gen_kvpr: need at least one pair");
  if (gold_index < 1 || gold_index > n_pairs)
    throw Error("gen_kvpr: gold index " + std::to_string(gold_index) + " outside 1.." + std::to_string(n_pairs));
  std::set<std::string> seen;
  std::vector<std::string> ids;
  ids.reserve(2 * n_pairs);
  std::uint64_t counter = 0;
  while (ids.size() < 2 * n_pairs) {
    int attempts = 0;
    std::string id;
    do {
      if (++attempts > kUuidRetries) throw Error("gen_kvpr: UUID collision after repeated retries");
      id = uuid_v4(seed, counter++);
    } while (!seen.insert(id).second);
    ids.push_back(std::move(id));
  }

  std::ostringstream text;
  text << kKvprInstruction << "\n\nJSON data:\n{\n";
  for (std::size_t i = 0; i < n_pairs; ++i) {
    text << ' ' << json_string(ids[2 * i]) << ": " << json_string(ids[2 * i + 1]);
    text << (i + 1 < n_pairs ? ",\n" : "\n");
  }
  text << "}\n\nKey: " << json_string(ids[2 * (gold_index - 1)]) << "\nCorresponding value:";

  PromptInstance p;
  p.kind = PromptKind::kvpr;
  p.text = text.str();
  p.n_items = n_pairs;
  p.gold_index = gold_index;
  p.label = static_cast<int>(gold_index) - 1;
  p.seed = seed;
  return p;
}

PromptInstance build_mdqa(const MdqaRecord& record, std::size_t n_docs, std::size_t gold_index, std::uint64_t seed) {
  if (n_docs < 1) throw Error("build_mdqa: need at least one document");
  if (gold_index < 1 || gold_index > n_docs)
    throw Error("build_mdqa: gold index " + std::to_string(gold_index) + " outside 1.." + std::to_string(n_docs));
  if (record.distractors.size() < n_docs - 1)
    throw Error("build_mdqa: insufficient distractors (" + std::to_string(record.distractors.size()) + " for " +
                std::to_string(n_docs) + " documents)");
  std::vector<Document> pool = record.distractors;
  CounterRng rng(seed, stream_id("mdqa.shuffle"));
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.below(i)]);
  pool.resize(n_docs - 1);
  pool.insert(pool.begin() + static_cast<std::ptrdiff_t>(gold_index - 1), record.gold_document);

  std::ostringstream text;
  text << kMdqaInstruction << "\n\n";
  for (std::size_t i = 0; i < pool.size(); ++i)
    text << "Document [" << (i + 1) << "](Title: " << pool[i].title << ") " << pool[i].body << "\n";
  text << "\nQuestion: " << record.question << "\nAnswer:";

  PromptInstance p;
  p.kind = PromptKind::mdqa;
  p.text = text.str();
  p.n_items = n_docs;
  p.gold_index = gold_index;
  p.label = static_cast<int>(gold_index) - 1;
  p.seed = seed;
  return p;
}

std::vector<MdqaRecord> parse_mdqa_corpus(std::string_view text) {
  std::vector<MdqaRecord> records;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (std::all_of(line.begin(), line.end(), [](unsigned char ch) { return std::isspace(ch); })) {
      if (end == text.size()) break;
      continue;
    }
    const std::string where = "line " + std::to_string(line_no) + ": ";
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(where + "malformed JSON (" + e.what() + ")");
    }
    try {
      MdqaRecord r;
      r.question = j.at("question").get<std::string>();
      const auto& ans = j.at("answer");
      r.answer = ans.is_array() ? ans.at(0).get<std::string>() : ans.get<std::string>();
      int golds = 0;
      for (const auto& doc : j.at("documents")) {
        Document d{doc.at("title").get<std::string>(), doc.at("text").get<std::string>()};
        if (doc.value("is_gold", false)) {
          ++golds;
          r.gold_document = std::move(d);
        } else {
          r.distractors.push_back(std::move(d));
        }
      }
      if (golds != 1) throw Error(where + "expected exactly one gold document, found " + std::to_string(golds));
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(where + "bad record (" + e.what() + ")");
    }
    if (end == text.size()) break;
  }
  return records;
}

std::vector<MdqaRecord> ingest_mdqa_corpus(const std::filesystem::path& path) {
  try {
    return parse_mdqa_corpus(detail::read_text(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::size_t whitespace_tokens(std::string_view text) {
  std::size_t count = 0;
  bool in_token = false;
  for (const char ch : text) {
    const bool space = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

std::size_t items_for_length(std::size_t target, std::size_t max_items,
                             const std::function<std::size_t(std::size_t)>& length_of) {
  if (max_items == 0 || length_of(1) > target) return 0;
  std::size_t lo = 1, hi = max_items;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    if (length_of(mid) <= target) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return lo;
}

std::string prompt_json(const PromptInstance& prompt) {
  ordered_json j;
  j["kind"] = to_string(prompt.kind);
  j["text"] = prompt.text;
  j["n_items"] = prompt.n_items;
  j["gold_index"] = prompt.gold_index;
  j["label"] = prompt.label;
  j["seed"] = prompt.seed;
  return j.dump(2) + "\n";
}

PromptInstance parse_prompt_json(std::string_view text) {
  try {
    const ordered_json j = ordered_json::parse(text);
    PromptInstance p;
    const auto kind = j.at("kind").get<std::string>();
    if (kind != "kvpr" && kind != "mdqa") throw Error("prompt: unknown kind '" + kind + "'");
    p.kind = kind == "kvpr" ? PromptKind::kvpr : PromptKind::mdqa;
    p.text = j.at("text").get<std::string>();
    p.n_items = j.at("n_items").get<std::size_t>();
    p.gold_index = j.at("gold_index").get<std::size_t>();
    p.label = j.at("label").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed prompt.json: ") + e.what());
  }
}

}  // namespace repflow
