#include "mergecap/text_pipeline.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "mergecap/errors.hpp"

namespace mergecap {

namespace {

bool is_separator(UChar32 c) {
  switch (c) {
    case 0x0964:  // danda
    case '.':
    case ',':
    case '?':
    case '!':
      return true;
    default:
      return u_isUWhiteSpace(c);
  }
}

std::string to_utf8(const icu::UnicodeString& s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

}  // namespace

TokenList tokenize(std::string_view caption) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(std::string("ICU NFC normalizer unavailable: ") + u_errorName(status));

  const icu::UnicodeString raw = icu::UnicodeString::fromUTF8(
      icu::StringPiece(caption.data(), static_cast<int32_t>(caption.size())));
  const icu::UnicodeString text = nfc->normalize(raw, status);
  if (U_FAILURE(status)) throw Error(std::string("NFC normalization failed: ") + u_errorName(status));

  TokenList tokens;
  icu::UnicodeString current;
  for (int32_t i = 0; i < text.length(); i = text.moveIndex32(i, 1)) {
    const UChar32 c = text.char32At(i);
    if (is_separator(c)) {
      if (!current.isEmpty()) {
        tokens.push_back(to_utf8(current));
        current.remove();
      }
    } else {
      current.append(c);
    }
  }
  if (!current.isEmpty()) tokens.push_back(to_utf8(current));
  if (tokens.empty()) throw EmptyCaption("caption has no tokens after normalization");
  return tokens;
}

bool is_special_token(std::string_view token) {
  return token == Vocabulary::kPadToken || token == Vocabulary::kStartToken || token == Vocabulary::kEndToken ||
         token == Vocabulary::kUnkToken;
}

Vocabulary::Vocabulary()
    : id_to_token_{std::string(kPadToken), std::string(kStartToken), std::string(kEndToken), std::string(kUnkToken)},
      counts_(kNumSpecial, 0) {
  for (int i = 0; i < kNumSpecial; ++i) token_to_id_.emplace(id_to_token_[i], i);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::pair<std::string, std::uint64_t>>& tokens_with_counts) {
  Vocabulary v;
  for (const auto& [tok, cnt] : tokens_with_counts) {
    if (tok.empty()) throw FormatError("empty token");
    if (is_special_token(tok)) throw FormatError("token collides with special sentinel: " + tok);
    if (tok.find_first_of("\t\n\r") != std::string::npos) throw FormatError("token contains a tab or newline");
    const int id = static_cast<int>(v.id_to_token_.size());
    if (!v.token_to_id_.emplace(tok, id).second) throw FormatError("duplicate token: " + tok);
    v.id_to_token_.push_back(tok);
    v.counts_.push_back(cnt);
  }
  return v;
}

int Vocabulary::id(std::string_view token) const {
  // Specials never come from surface text.
  if (is_special_token(token)) return kUnk;
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return !is_special_token(token) && token_to_id_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw UnknownId("id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::count(int id) const {
  token(id);
  return counts_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    out += std::to_string(i);
    out += '\t';
    out += id_to_token_[i];
    out += '\t';
    out += std::to_string(counts_[i]);
    out += '\n';
  }
  return out;
}

std::string Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = kHex[h & 0xF];
  return s;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  std::vector<std::pair<std::string, std::uint64_t>> entries;
  const Vocabulary specials;
  std::size_t next_id = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) throw ParseError(line_no, "expected <id>\\t<token>\\t<count>");
    std::size_t id = 0;
    std::uint64_t count = 0;
    const auto id_sv = line.substr(0, t1);
    const auto tok = line.substr(t1 + 1, t2 - t1 - 1);
    const auto cnt_sv = line.substr(t2 + 1);
    if (std::from_chars(id_sv.data(), id_sv.data() + id_sv.size(), id).ec != std::errc{} ||
        std::from_chars(cnt_sv.data(), cnt_sv.data() + cnt_sv.size(), count).ec != std::errc{})
      throw ParseError(line_no, "non-numeric id or count");

    const std::size_t expected = next_id++;
    if (id != expected) throw ParseError(line_no, "ids must be contiguous and ascending from 0");
    if (expected < static_cast<std::size_t>(kNumSpecial)) {
      if (tok != specials.id_to_token_[expected]) throw ParseError(line_no, "special tokens must occupy ids 0-3");
      continue;
    }
    entries.emplace_back(std::string(tok), count);
  }
  if (next_id < static_cast<std::size_t>(kNumSpecial)) throw ParseError(line_no, "missing special tokens");
  return from_tokens(entries);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << serialize();
  if (!out) throw IoError("write failed: " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

Vocabulary build_vocab(std::span<const TokenList> corpus, std::size_t min_count) {
  if (corpus.empty()) throw CorpusEmpty("no captions to build a vocabulary from");
  if (min_count < 1) throw ConfigError("min_count must be >= 1");

  std::map<std::string, std::uint64_t> counts;
  for (const auto& caption : corpus)
    for (const auto& tok : caption)
      if (!is_special_token(tok)) ++counts[tok];

  std::vector<std::pair<std::string, std::uint64_t>> kept;
  for (auto& [tok, cnt] : counts)
    if (cnt >= min_count) kept.emplace_back(tok, cnt);
  // std::map iteration is already lexicographic; stable sort keeps that for ties.
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return Vocabulary::from_tokens(kept);
}

EncodedCaption encode(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 3) throw ConfigError("max_len must be >= 3");
  const std::size_t body = std::min(tokens.size(), max_len - 2);
  EncodedCaption out;
  out.ids.assign(max_len, Vocabulary::kPad);
  out.ids[0] = Vocabulary::kStart;
  for (std::size_t i = 0; i < body; ++i) out.ids[i + 1] = vocab.id(tokens[i]);
  out.ids[body + 1] = Vocabulary::kEnd;
  out.true_length = body + 2;
  return out;
}

std::string decode_ids(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (id == Vocabulary::kPad || id == Vocabulary::kStart || id == Vocabulary::kEnd) continue;
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

std::size_t default_max_len(std::span<const TokenList> corpus, std::size_t cap) {
  std::size_t longest = 0;
  for (const auto& c : corpus) longest = std::max(longest, c.size());
  return std::max<std::size_t>(3, std::min(longest + 2, cap));
}

}  // namespace mergecap
