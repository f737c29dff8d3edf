#pragma once

// Dataset manifests, the "CLPE" embedding cache, and few-shot splits.
//
// Cache layout (little-endian):
//   magic "CLPE" | version u32 = 1 | dim u32 = 512 | count u32 |
//   per record: id_len u16 | id (UTF-8) | label u8 (0 real, 1 fake) |
//               cat_len u16 | category | 512 x f32

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "clipdetect/tensor.hpp"
#include "clipdetect/types.hpp"

namespace clipdetect {

struct EmbeddingRecord {
  std::string id;
  Label label = Label::Real;
  std::string category;  // empty = untagged
  std::vector<float> vector;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

enum class DatasetSource { Cifake, Custom, Other };

struct ManifestRow {
  std::string path;
  Label label = Label::Real;
  std::string category;
};

struct DatasetManifest {
  std::string name;
  DatasetSource source = DatasetSource::Other;
  std::filesystem::path base_dir;  // relative paths resolve against this
  std::vector<ManifestRow> rows;

  std::filesystem::path resolve(const ManifestRow& row) const;
};

/// CSV with header `path,label,category`; labels are `real` or `fake`.
DatasetManifest manifest_load(const std::filesystem::path& path, DatasetSource source = DatasetSource::Other);
void manifest_write(const DatasetManifest& manifest, const std::filesystem::path& path);

void validate_record(const EmbeddingRecord& record);

std::vector<std::uint8_t> encode_cache(std::span<const EmbeddingRecord> records);
std::vector<EmbeddingRecord> decode_cache(std::span<const std::uint8_t> bytes);

/// Returns the number of bytes written.
std::uint64_t cache_write(std::span<const EmbeddingRecord> records, const std::filesystem::path& path);
std::vector<EmbeddingRecord> cache_read(const std::filesystem::path& path);

/// SHA-256 of the encoded cache; identifies a record list in run metadata.
std::string dataset_digest(std::span<const EmbeddingRecord> records);

/// Stacks record vectors into an [N x 512] tensor.
Tensor stack_vectors(std::span<const EmbeddingRecord> records);

struct SplitSpec {
  std::uint64_t seed = 0;
  double adaptation_fraction = 0.2;
  bool stratified = true;
};

/// Indices into the input list, each sorted by record id.
struct SplitIndices {
  std::vector<std::size_t> adaptation;
  std::vector<std::size_t> test;
};

/// Membership depends only on (ids, labels, spec): records are ordered by id
/// before the seeded draw, so input order is irrelevant.
SplitIndices few_shot_split_indices(std::span<const EmbeddingRecord> records, const SplitSpec& spec);

struct Split {
  std::vector<EmbeddingRecord> adaptation;
  std::vector<EmbeddingRecord> test;
};

Split few_shot_split(std::span<const EmbeddingRecord> records, const SplitSpec& spec);

}  // namespace clipdetect
