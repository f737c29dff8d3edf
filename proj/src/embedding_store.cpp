#include "clipdetect/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

#include "binary_io.hpp"
#include "csv.hpp"
#include "clipdetect/errors.hpp"
#include "clipdetect/file_util.hpp"
#include "seeding.hpp"

namespace clipdetect {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kCacheMagic = "CLPE";
constexpr std::uint32_t kCacheVersion = 1;

}  // namespace

fs::path DatasetManifest::resolve(const ManifestRow& row) const {
  fs::path p(row.path);
  return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest manifest_load(const fs::path& path, DatasetSource source) {
  const std::string text = read_file_text(path);
  DatasetManifest manifest;
  manifest.name = path.stem().string();
  manifest.source = source;
  manifest.base_dir = path.parent_path();

  std::size_t line_no = 0;
  bool header_seen = false;
  std::unordered_set<std::string> seen;
  for (std::string_view line : detail::split_lines(text)) {
    ++line_no;
    if (!header_seen) {
      if (line != "path,label,category") throw ParseError("manifest: expected header 'path,label,category'", line_no);
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line, line_no, "manifest");
    if (fields.size() == 2) fields.emplace_back();
    if (fields.size() != 3) {
      throw ParseError("manifest: expected 3 fields, got " + std::to_string(fields.size()), line_no);
    }
    if (fields[0].empty()) throw ParseError("manifest: empty path", line_no);
    const auto label = parse_label(fields[1]);
    if (!label) throw ParseError("manifest: unknown label '" + fields[1] + "' (expected real or fake)", line_no);
    if (!seen.insert(fields[0]).second) {
      throw ValidationError("manifest: duplicate path '" + fields[0] + "' (line " + std::to_string(line_no) + ")");
    }
    manifest.rows.push_back({std::move(fields[0]), *label, std::move(fields[2])});
  }
  if (!header_seen) throw ParseError("manifest: empty file", 1);
  return manifest;
}

void manifest_write(const DatasetManifest& manifest, const fs::path& path) {
  std::string out = "path,label,category\n";
  for (const auto& row : manifest.rows) {
    out += detail::csv_escape(row.path) + "," + std::string(to_string(row.label)) + "," + detail::csv_escape(row.category) + "\n";
  }
  write_file_atomic(path, out);
}

void validate_record(const EmbeddingRecord& record) {
  if (record.id.empty()) throw ValidationError("embedding record: empty id");
  if (record.id.size() > 0xFFFF) throw ValidationError("embedding record: id longer than 65535 bytes");
  if (record.category.size() > 0xFFFF) {
    throw ValidationError("embedding record '" + record.id + "': category longer than 65535 bytes");
  }
  if (record.vector.size() != kEmbeddingDim) {
    throw DimensionError("embedding record '" + record.id + "': vector has " + std::to_string(record.vector.size()) +
                         " elements, expected " + std::to_string(kEmbeddingDim));
  }
  for (float v : record.vector) {
    if (!std::isfinite(v)) throw ValidationError("embedding record '" + record.id + "': non-finite vector element");
  }
}

std::vector<std::uint8_t> encode_cache(std::span<const EmbeddingRecord> records) {
  std::unordered_set<std::string_view> ids;
  for (const auto& r : records) {
    validate_record(r);
    if (!ids.insert(r.id).second) throw ValidationError("embedding cache: duplicate id '" + r.id + "'");
  }
  if (records.size() > 0xFFFFFFFFull) throw ValidationError("embedding cache: too many records");

  detail::ByteWriter w;
  w.bytes(kCacheMagic);
  w.scalar(kCacheVersion);
  w.scalar(static_cast<std::uint32_t>(kEmbeddingDim));
  w.scalar(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    w.scalar(static_cast<std::uint16_t>(r.id.size()));
    w.bytes(r.id);
    w.scalar(static_cast<std::uint8_t>(r.label));
    w.scalar(static_cast<std::uint16_t>(r.category.size()));
    w.bytes(r.category);
    w.floats(r.vector);
  }
  return w.take();
}

std::vector<EmbeddingRecord> decode_cache(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "embedding cache");
  if (r.bytes(kCacheMagic.size()) != kCacheMagic) throw FormatError("embedding cache: bad magic (expected \"CLPE\")");
  const auto version = r.scalar<std::uint32_t>();
  if (version != kCacheVersion) throw FormatError("embedding cache: unsupported version " + std::to_string(version));
  const auto dim = r.scalar<std::uint32_t>();
  if (dim != kEmbeddingDim) {
    throw FormatError("embedding cache: dimension " + std::to_string(dim) + ", expected " +
                      std::to_string(kEmbeddingDim));
  }
  const auto count = r.scalar<std::uint32_t>();
  std::vector<EmbeddingRecord> records;
  records.reserve(std::min<std::size_t>(count, r.remaining() / (kEmbeddingDim * 4) + 1));
  std::unordered_set<std::string> ids;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t record_offset = r.offset();
    EmbeddingRecord rec;
    rec.id = r.bytes(r.scalar<std::uint16_t>());
    const auto label = r.scalar<std::uint8_t>();
    if (label > 1) throw CorruptionError("embedding cache: invalid label byte " + std::to_string(label), r.offset() - 1);
    rec.label = static_cast<Label>(label);
    rec.category = r.bytes(r.scalar<std::uint16_t>());
    rec.vector.resize(kEmbeddingDim);
    r.floats(rec.vector);
    if (rec.id.empty()) throw CorruptionError("embedding cache: empty id", record_offset);
    for (float v : rec.vector) {
      if (!std::isfinite(v)) throw CorruptionError("embedding cache: non-finite value in '" + rec.id + "'", record_offset);
    }
    if (!ids.insert(rec.id).second) {
      throw CorruptionError("embedding cache: duplicate id '" + rec.id + "'", record_offset);
    }
    records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) {
    throw CorruptionError("embedding cache: " + std::to_string(r.remaining()) + " trailing bytes", r.offset());
  }
  return records;
}

std::uint64_t cache_write(std::span<const EmbeddingRecord> records, const fs::path& path) {
  const auto bytes = encode_cache(records);
  write_file_atomic(path, bytes);
  return bytes.size();
}

std::vector<EmbeddingRecord> cache_read(const fs::path& path) { return decode_cache(read_file_bytes(path)); }

std::string dataset_digest(std::span<const EmbeddingRecord> records) { return sha256_hex(encode_cache(records)); }

Tensor stack_vectors(std::span<const EmbeddingRecord> records) {
  if (records.empty()) throw ValidationError("stack_vectors: no records");
  std::vector<float> data;
  data.reserve(records.size() * kEmbeddingDim);
  for (const auto& r : records) {
    if (r.vector.size() != kEmbeddingDim) {
      throw DimensionError("record '" + r.id + "' has " + std::to_string(r.vector.size()) + " elements, expected " +
                           std::to_string(kEmbeddingDim));
    }
    data.insert(data.end(), r.vector.begin(), r.vector.end());
  }
  return Tensor(Shape{records.size(), kEmbeddingDim}, std::move(data));
}

SplitIndices few_shot_split_indices(std::span<const EmbeddingRecord> records, const SplitSpec& spec) {
  if (!(spec.adaptation_fraction > 0.0 && spec.adaptation_fraction < 1.0)) {
    throw ValidationError("split: adaptation fraction must lie in (0, 1), got " +
                          format_double(spec.adaptation_fraction));
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return records[a].id < records[b].id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (records[order[i]].id == records[order[i - 1]].id) {
      throw ValidationError("split: duplicate id '" + records[order[i]].id + "'");
    }
  }

  // Each group is drawn independently: shuffle the id-sorted members with a
  // seed derived from (seed, group) and keep the first `take`. Takes are
  // floor(fraction * size) per group, with the remaining round(fraction * N)
  // minus their sum handed out by largest remainder (ties to the lower group).
  std::vector<std::vector<std::size_t>> groups;
  if (spec.stratified) {
    groups.resize(2);
    for (std::size_t idx : order) groups[static_cast<std::size_t>(records[idx].label)].push_back(idx);
  } else {
    groups.push_back(order);
  }

  const double f = spec.adaptation_fraction;
  std::vector<std::size_t> takes(groups.size());
  std::vector<std::size_t> by_remainder(groups.size());
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    takes[g] = static_cast<std::size_t>(std::floor(f * static_cast<double>(groups[g].size())));
    assigned += takes[g];
    by_remainder[g] = g;
  }
  auto remainder = [&](std::size_t g) {
    const double exact = f * static_cast<double>(groups[g].size());
    return exact - std::floor(exact);
  };
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](std::size_t a, std::size_t b) { return remainder(a) > remainder(b); });
  const auto total = static_cast<std::size_t>(std::lround(f * static_cast<double>(records.size())));
  for (std::size_t k = 0; assigned < total && k < by_remainder.size(); ++k, ++assigned) ++takes[by_remainder[k]];

  SplitIndices out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& members = groups[g];
    const std::string name = spec.stratified ? std::string(to_string(static_cast<Label>(g))) : "all";
    if (spec.stratified && members.size() < 2) {
      throw ValidationError("split: class '" + name + "' has " + std::to_string(members.size()) +
                            " records, need at least 2 to stratify");
    }
    const std::size_t take = takes[g];
    if (take == 0 || take == members.size()) {
      throw ValidationError("split: fraction " + format_double(f) + " of " + std::to_string(members.size()) + " '" +
                            name + "' records leaves an empty side");
    }
    std::mt19937_64 rng(detail::mix_seed(spec.seed, 0x5350'4C49'5400ull + g));
    for (std::size_t i = members.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
      std::swap(members[i], members[j]);
    }
    out.adaptation.insert(out.adaptation.end(), members.begin(), members.begin() + static_cast<long>(take));
    out.test.insert(out.test.end(), members.begin() + static_cast<long>(take), members.end());
  }
  auto by_id = [&](std::size_t a, std::size_t b) { return records[a].id < records[b].id; };
  std::sort(out.adaptation.begin(), out.adaptation.end(), by_id);
  std::sort(out.test.begin(), out.test.end(), by_id);
  return out;
}

Split few_shot_split(std::span<const EmbeddingRecord> records, const SplitSpec& spec) {
  const SplitIndices idx = few_shot_split_indices(records, spec);
  Split split;
  for (std::size_t i : idx.adaptation) split.adaptation.push_back(records[i]);
  for (std::size_t i : idx.test) split.test.push_back(records[i]);
  return split;
}

}  // namespace clipdetect
