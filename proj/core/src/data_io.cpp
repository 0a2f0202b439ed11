#include "mergecap/data_io.hpp"

#include <bit>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mergecap/errors.hpp"

namespace mergecap {

namespace {

using json = nlohmann::ordered_json;

class ByteWriter {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint16_t u16(const char* what) {
    auto s = bytes(2, what);
    return static_cast<std::uint16_t>(byte(s, 0) | (byte(s, 1) << 8));
  }
  std::uint32_t u32(const char* what) {
    auto s = bytes(4, what);
    return byte(s, 0) | (byte(s, 1) << 8) | (byte(s, 2) << 16) | (byte(s, 3) << 24);
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  static std::uint32_t byte(std::string_view s, std::size_t i) { return static_cast<unsigned char>(s[i]); }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n)
      throw TruncatedFile(std::string("need ") + std::to_string(n) + " bytes for " + what + ", " +
                          std::to_string(remaining()) + " left");
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

void check_magic(ByteReader& r, std::string_view magic) {
  if (r.remaining() < magic.size()) throw FormatError("file too short for magic '" + std::string(magic) + "'");
  if (r.bytes(magic.size(), "magic") != magic) throw FormatError("bad magic, expected '" + std::string(magic) + "'");
}

json config_to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size},   {"embedding_dim", c.embedding_dim},
              {"conv_filters", c.conv_filters}, {"kernel", c.kernel},
              {"feature_dim", c.feature_dim},   {"hidden_dim", c.hidden_dim},
              {"max_len", c.max_len},           {"image_projection", c.image_projection},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.conv_filters = j.at("conv_filters").get<std::size_t>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.image_projection = j.at("image_projection").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// ---- captions --------------------------------------------------------------

std::vector<CaptionRecord> parse_captions(std::string_view text) {
  std::vector<CaptionRecord> records;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(line_no, "expected a JSON object");
    for (const char* field : {"image_id", "caption"}) {
      if (!j.contains(field)) throw ParseError(line_no, std::string("missing field '") + field + "'");
      if (!j[field].is_string()) throw ParseError(line_no, std::string("field '") + field + "' must be a string");
    }
    CaptionRecord rec{j["image_id"].get<std::string>(), j["caption"].get<std::string>()};
    if (rec.image_id.empty()) throw ParseError(line_no, "empty image_id");
    if (rec.caption.empty()) throw ParseError(line_no, "empty caption");
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<CaptionRecord> load_captions(const std::filesystem::path& path) { return parse_captions(read_file(path)); }

void save_captions(const std::filesystem::path& path, const std::vector<CaptionRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += json{{"image_id", r.image_id}, {"caption", r.caption}}.dump();
    out += '\n';
  }
  write_file(path, out);
}

// ---- FEAT1 -----------------------------------------------------------------

std::string encode_features(const FeatureMap& features) {
  const std::size_t dim = features.empty() ? 0 : features.begin()->second.size();
  ByteWriter w;
  w.bytes(kFeatureMagic);
  w.u32(static_cast<std::uint32_t>(features.size()));
  w.u32(static_cast<std::uint32_t>(dim));
  for (const auto& [id, vec] : features) {
    if (vec.size() != dim) throw ShapeError("feature '" + id + "' has dimension " + std::to_string(vec.size()));
    if (id.empty() || id.size() > 0xFFFF) throw FormatError("feature id length must be 1..65535 bytes");
    w.u16(static_cast<std::uint16_t>(id.size()));
    w.bytes(id);
    for (float v : vec) w.f32(v);
  }
  return w.take();
}

FeatureMap decode_features(std::string_view bytes) {
  ByteReader r(bytes);
  check_magic(r, kFeatureMagic);
  const std::uint32_t count = r.u32("record count");
  const std::uint32_t dim = r.u32("dimension");
  FeatureMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t id_len = r.u16("id length");
    std::string id(r.bytes(id_len, "id"));
    std::vector<float> vec(dim);
    for (auto& v : vec) v = r.f32("feature values");
    if (!out.emplace(id, std::move(vec)).second) throw DuplicateId("feature id repeated: " + id);
  }
  if (r.remaining() != 0)
    throw FormatError(std::to_string(r.remaining()) + " trailing bytes after " + std::to_string(count) + " records");
  return out;
}

void save_features(const std::filesystem::path& path, const FeatureMap& features) {
  write_file(path, encode_features(features));
}

FeatureMap load_features(const std::filesystem::path& path) { return decode_features(read_file(path)); }

// ---- splits ----------------------------------------------------------------

DatasetSplit split_dataset(const std::vector<std::string>& ids, const SplitCounts& counts, std::uint64_t seed) {
  if (counts.total() != ids.size())
    throw SplitError("split counts sum to " + std::to_string(counts.total()) + " but there are " +
                     std::to_string(ids.size()) + " ids");
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) throw SplitError("ids are not unique");

  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

  DatasetSplit s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& id = ids[order[i]];
    if (i < counts.train)
      s.train.push_back(id);
    else if (i < counts.train + counts.val)
      s.val.push_back(id);
    else
      s.test.push_back(id);
  }
  return s;
}

// ---- MCAP1 -----------------------------------------------------------------

std::string encode_checkpoint(const ModelParams<float>& params, const ModelConfig& config,
                              const std::string& vocab_hash) {
  params.check_shapes(config);
  json tensors = json::array();
  for (const auto& t : parameter_manifest(config))
    tensors.push_back(json{{"name", t.name}, {"shape", {t.rows, t.cols}}});
  const json meta{{"config", config_to_json(config)}, {"tensors", tensors}, {"vocab_hash", vocab_hash}};
  const std::string meta_text = meta.dump();

  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(meta_text.size()));
  w.bytes(meta_text);
  for (const auto* t : params.tensors())
    for (float v : t->data) w.f32(v);
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  check_magic(r, kCheckpointMagic);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", supported " +
                          std::to_string(kCheckpointVersion));
  const std::uint32_t meta_len = r.u32("metadata length");
  const auto meta_text = r.bytes(meta_len, "metadata");

  Checkpoint ck;
  std::vector<TensorShape> stored;
  try {
    const json meta = json::parse(meta_text);
    ck.config = config_from_json(meta.at("config"));
    ck.vocab_hash = meta.at("vocab_hash").get<std::string>();
    for (const auto& t : meta.at("tensors")) {
      const auto& shape = t.at("shape");
      if (!shape.is_array() || shape.size() != 2) throw FormatError("tensor shape must have two entries");
      stored.push_back({t.at("name").get<std::string>(), shape[0].get<std::size_t>(), shape[1].get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  try {
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }
  if (stored != parameter_manifest(ck.config))
    throw ShapeMismatch("tensor manifest does not match the stored model config");

  ck.params = ModelParams<float>::zeros(ck.config);
  for (auto* t : ck.params.tensors())
    for (float& v : t->data) v = r.f32("tensor payload");
  if (r.remaining() != 0) throw FormatError(std::to_string(r.remaining()) + " trailing bytes after tensors");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params, const ModelConfig& config,
                     const std::string& vocab_hash) {
  write_file(path, encode_checkpoint(params, config, vocab_hash));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_vocab_hash,
                           const ModelConfig* expected_config) {
  auto ck = decode_checkpoint(read_file(path));
  if (!expected_vocab_hash.empty() && ck.vocab_hash != expected_vocab_hash)
    throw VocabMismatch("checkpoint vocabulary hash " + ck.vocab_hash + " != " + expected_vocab_hash);
  if (expected_config) ck.params.check_shapes(*expected_config);
  return ck;
}

}  // namespace mergecap
