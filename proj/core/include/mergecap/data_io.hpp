#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mergecap/model.hpp"

namespace mergecap {

struct CaptionRecord {
  std::string image_id;
  std::string caption;
  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

// One JSON object per line with string fields "image_id" and "caption".
// Blank lines are skipped; anything else malformed throws ParseError(line).
std::vector<CaptionRecord> parse_captions(std::string_view text);
std::vector<CaptionRecord> load_captions(const std::filesystem::path& path);
void save_captions(const std::filesystem::path& path, const std::vector<CaptionRecord>& records);

// ---- FEAT1 -----------------------------------------------------------------
//   "FEAT1" | u32 count | u32 dim | count x ( u16 id_len | id | dim x f32 )
// All integers and floats little-endian.

using FeatureMap = std::map<std::string, std::vector<float>>;

inline constexpr std::string_view kFeatureMagic = "FEAT1";

std::string encode_features(const FeatureMap& features);
// Throws FormatError (magic, trailing bytes), TruncatedFile, DuplicateId.
FeatureMap decode_features(std::string_view bytes);

void save_features(const std::filesystem::path& path, const FeatureMap& features);
FeatureMap load_features(const std::filesystem::path& path);

// ---- splits ----------------------------------------------------------------

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  std::size_t total() const { return train + val + test; }
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

// Seeded shuffle of `ids`, then partitioned train/val/test in that order.
// Throws SplitError when counts do not sum to |ids| or ids repeat.
DatasetSplit split_dataset(const std::vector<std::string>& ids, const SplitCounts& counts, std::uint64_t seed);

// ---- MCAP1 -----------------------------------------------------------------
//   "MCAP1" | u32 version=1 | u32 meta_len | meta (JSON) | f32 tensors
// The metadata holds the model config, the tensor manifest (names, shapes,
// order) and the vocabulary hash.

inline constexpr std::string_view kCheckpointMagic = "MCAP1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::string vocab_hash;
  ModelParams<float> params;
};

std::string encode_checkpoint(const ModelParams<float>& params, const ModelConfig& config,
                              const std::string& vocab_hash);
// Validates magic, version, manifest against config and payload size. Throws
// FormatError, VersionMismatch, ShapeMismatch, TruncatedFile.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params, const ModelConfig& config,
                     const std::string& vocab_hash);

// Reads and validates. When `expected_vocab_hash` is non-empty it must match
// (VocabMismatch); when `expected_config` is given its shapes must match
// (ShapeMismatch).
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_vocab_hash = {},
                           const ModelConfig* expected_config = nullptr);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace mergecap
