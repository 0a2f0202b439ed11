#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mergecap {

using TokenList = std::vector<std::string>;

// NFC-normalizes, splits on Unicode whitespace and on the separators
// U+0964 (danda) . , ? ! which are dropped. Throws EmptyCaption when nothing
// remains.
TokenList tokenize(std::string_view caption);

// Bidirectional token <-> id map. Ids 0..3 are reserved for pad/start/end/unk;
// surface tokens follow from id 4 in descending-count order. Immutable once
// built.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEnd = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecial = 4;

  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kStartToken = "<start>";
  static constexpr std::string_view kEndToken = "<end>";
  static constexpr std::string_view kUnkToken = "<unk>";

  // Only the four specials.
  Vocabulary();

  // Ids are assigned in the order given, starting at 4. Rejects duplicates
  // and sentinel strings.
  static Vocabulary from_tokens(const std::vector<std::pair<std::string, std::uint64_t>>& tokens_with_counts);

  std::size_t size() const { return id_to_token_.size(); }

  // unk for anything not in the vocabulary.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  // Throws UnknownId when id >= size().
  const std::string& token(int id) const;
  std::uint64_t count(int id) const;

  // FNV-1a 64 over the serialized vocabulary file, as 16 hex digits.
  std::string hash() const;

  // `<id>\t<token>\t<count>` lines, ids ascending, specials first.
  std::string serialize() const;
  static Vocabulary parse(std::string_view text);

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_ && a.counts_ == b.counts_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, int> token_to_id_;
};

bool is_special_token(std::string_view token);

// Counts tokens, keeps those with count >= min_count, orders by descending
// count then lexicographic token. Throws CorpusEmpty / ConfigError.
Vocabulary build_vocab(std::span<const TokenList> corpus, std::size_t min_count = 1);

struct EncodedCaption {
  std::vector<int> ids;         // exactly max_len entries
  std::size_t true_length = 0;  // start .. end inclusive

  friend bool operator==(const EncodedCaption&, const EncodedCaption&) = default;
};

// [start, ids..., end] right-padded to max_len; bodies longer than max_len-2
// are truncated. Requires max_len >= 3.
EncodedCaption encode(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t max_len);

// Space-joined surface tokens; specials other than unk are dropped.
std::string decode_ids(std::span<const int> ids, const Vocabulary& vocab);

// min(longest caption + 2, cap)
std::size_t default_max_len(std::span<const TokenList> corpus, std::size_t cap = 40);

}  // namespace mergecap
