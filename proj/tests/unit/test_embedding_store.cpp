#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "clipdetect/embedding_store.hpp"
#include "clipdetect/errors.hpp"
#include "clipdetect/file_util.hpp"
#include "test_support.hpp"

using namespace clipdetect;
using clipdetect::testing::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

EmbeddingRecord simple_record(std::string id, Label label, std::string category = "") {
  return {std::move(id), label, std::move(category), std::vector<float>(kEmbeddingDim, 0.25f)};
}

std::vector<EmbeddingRecord> balanced(std::size_t per_class, const std::string& prefix = "r") {
  std::vector<EmbeddingRecord> out;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    out.push_back(simple_record(prefix + std::to_string(1000 + i), i % 2 ? Label::Fake : Label::Real));
  }
  return out;
}

std::vector<std::string> ids_of(const std::vector<EmbeddingRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.push_back(r.id);
  return out;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

}  // namespace

TEST(Manifest, TwoRows) {
  TempDir dir;
  write_text(dir / "m.csv", "path,label,category\na.png,real,landscape\nsub/b.png,fake,\n");
  const auto m = manifest_load(dir / "m.csv");
  ASSERT_EQ(m.rows.size(), 2u);
  EXPECT_EQ(m.rows[0].path, "a.png");
  EXPECT_EQ(m.rows[0].label, Label::Real);
  EXPECT_EQ(m.rows[0].category, "landscape");
  EXPECT_EQ(m.rows[1].label, Label::Fake);
  EXPECT_EQ(m.rows[1].category, "");
  EXPECT_EQ(m.resolve(m.rows[1]), dir.path() / "sub/b.png");
}

TEST(Manifest, QuotedFieldsAndCrlf) {
  TempDir dir;
  write_text(dir / "m.csv", "path,label,category\r\n\"a,1.png\",real,\"oil \"\"fine\"\" art\"\r\n\r\nb.png,fake\r\n");
  const auto m = manifest_load(dir / "m.csv");
  ASSERT_EQ(m.rows.size(), 2u);
  EXPECT_EQ(m.rows[0].path, "a,1.png");
  EXPECT_EQ(m.rows[0].category, "oil \"fine\" art");
  EXPECT_EQ(m.rows[1].category, "");
}

TEST(Manifest, UnknownLabelNamesLine) {
  TempDir dir;
  write_text(dir / "m.csv", "path,label,category\na.png,real,\nb.png,synthetic,\n");
  try {
    manifest_load(dir / "m.csv");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("synthetic"), std::string::npos);
  }
}

TEST(Manifest, DuplicatePath) {
  TempDir dir;
  write_text(dir / "m.csv", "path,label,category\na.png,real,\na.png,fake,\n");
  EXPECT_THROW(manifest_load(dir / "m.csv"), ValidationError);
}

TEST(Manifest, BadHeaderAndEmpty) {
  TempDir dir;
  write_text(dir / "h.csv", "file,label\na.png,real\n");
  EXPECT_THROW(manifest_load(dir / "h.csv"), ParseError);
  write_text(dir / "e.csv", "");
  EXPECT_THROW(manifest_load(dir / "e.csv"), ParseError);
  write_text(dir / "q.csv", "path,label,category\n\"a.png,real,\n");
  EXPECT_THROW(manifest_load(dir / "q.csv"), ParseError);
}

TEST(Manifest, CustomDatasetCounts) {
  TempDir dir;
  DatasetManifest m;
  for (int i = 0; i < 260; ++i) {
    m.rows.push_back({"img_" + std::to_string(i) + ".png", i < 130 ? Label::Real : Label::Fake, ""});
  }
  manifest_write(m, dir / "custom.csv");
  const auto back = manifest_load(dir / "custom.csv", DatasetSource::Custom);
  ASSERT_EQ(back.rows.size(), 260u);
  EXPECT_EQ(std::count_if(back.rows.begin(), back.rows.end(), [](const auto& r) { return r.label == Label::Real; }),
            130);
  EXPECT_EQ(back.source, DatasetSource::Custom);
  for (std::size_t i = 0; i < 260; ++i) EXPECT_EQ(back.rows[i].path, m.rows[i].path);
}

TEST(Manifest, WriteEscapesAndRoundTrips) {
  TempDir dir;
  DatasetManifest m;
  m.rows = {{"a,b.png", Label::Real, "x\"y"}, {"фото.png", Label::Fake, ""}};
  manifest_write(m, dir / "m.csv");
  const auto back = manifest_load(dir / "m.csv");
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[0].path, "a,b.png");
  EXPECT_EQ(back.rows[0].category, "x\"y");
  EXPECT_EQ(back.rows[1].path, "фото.png");
}

TEST(Cache, EmptyIsHeaderOnly) {
  TempDir dir;
  // magic + version + dim + count
  EXPECT_EQ(cache_write({}, dir / "e.clpe"), 4u + 4u + 4u + 4u);
  EXPECT_EQ(std::filesystem::file_size(dir / "e.clpe"), 16u);
  EXPECT_TRUE(cache_read(dir / "e.clpe").empty());
}

TEST(Cache, OneRecordSize) {
  TempDir dir;
  const std::vector<EmbeddingRecord> one{simple_record("a", Label::Fake)};
  // header + id_len + id + label + cat_len + floats
  EXPECT_EQ(cache_write(one, dir / "one.clpe"), 16u + (2 + 1 + 1 + 2 + 0 + 2048));
  EXPECT_EQ(std::filesystem::file_size(dir / "one.clpe"), 2070u);
}

TEST(Cache, LayoutIsLittleEndian) {
  const std::vector<EmbeddingRecord> one{simple_record("ab", Label::Fake, "c")};
  const auto b = encode_cache(one);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "CLPE");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[8], 0x00);
  EXPECT_EQ(b[9], 0x02);  // 512 = 0x0200
  EXPECT_EQ(b[12], 1);
  EXPECT_EQ(b[16], 2);
  EXPECT_EQ(b[17], 0);
  EXPECT_EQ(b[18], 'a');
  EXPECT_EQ(b[20], 1);  // label fake
  EXPECT_EQ(b[21], 1);  // cat_len
  EXPECT_EQ(b[23], 'c');
  // 0.25f = 0x3E800000
  EXPECT_EQ(b[24], 0x00);
  EXPECT_EQ(b[27], 0x3E);
  EXPECT_EQ(b[26], 0x80);
}

TEST(Cache, RoundTripHundredRandom) {
  TempDir dir;
  const auto records = clipdetect::testing::random_records(100, 5);
  cache_write(records, dir / "r.clpe");
  EXPECT_EQ(cache_read(dir / "r.clpe"), records);
}

TEST(Cache, RoundTripIsBitExactProperty) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto records = clipdetect::testing::random_records(seed % 7, seed);
    const auto bytes = encode_cache(records);
    const auto back = decode_cache(bytes);
    ASSERT_EQ(back, records);
    ASSERT_EQ(encode_cache(back), bytes);
  }
}

TEST(Cache, DimFieldMismatch) {
  auto b = encode_cache(std::vector<EmbeddingRecord>{simple_record("a", Label::Real)});
  put_u32(b, 8, 256);
  EXPECT_THROW(decode_cache(b), FormatError);
}

TEST(Cache, BadMagicAndVersion) {
  auto b = encode_cache({});
  auto m = b;
  m[0] = 'X';
  EXPECT_THROW(decode_cache(m), FormatError);
  auto v = b;
  put_u32(v, 4, 2);
  EXPECT_THROW(decode_cache(v), FormatError);
}

TEST(Cache, TruncationReportsOffset) {
  TempDir dir;
  const auto records = clipdetect::testing::random_records(3, 1);
  const auto b = encode_cache(records);
  for (std::size_t cut : {std::size_t{17}, std::size_t{30}, b.size() / 2, b.size() - 1}) {
    std::vector<std::uint8_t> t(b.begin(), b.begin() + static_cast<long>(cut));
    try {
      decode_cache(t);
      FAIL() << "expected CorruptionError at cut " << cut;
    } catch (const CorruptionError& e) {
      EXPECT_LE(e.offset(), cut);
      EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
  }
  write_file_atomic(dir / "t.clpe", std::span<const std::uint8_t>(b.data(), b.size() - 100));
  EXPECT_THROW(cache_read(dir / "t.clpe"), CorruptionError);
}

TEST(Cache, RejectsInvalidRecords) {
  auto wrong_dim = simple_record("a", Label::Real);
  wrong_dim.vector.resize(511);
  EXPECT_THROW(encode_cache(std::vector{wrong_dim}), DimensionError);
  auto nan = simple_record("a", Label::Real);
  nan.vector[3] = NAN;
  EXPECT_THROW(encode_cache(std::vector{nan}), ValidationError);
  EXPECT_THROW(encode_cache(std::vector{simple_record("", Label::Real)}), ValidationError);
  EXPECT_THROW(encode_cache(std::vector{simple_record("a", Label::Real), simple_record("a", Label::Fake)}),
               ValidationError);
}

TEST(Cache, RejectsCorruptPayload) {
  auto b = encode_cache(std::vector{simple_record("a", Label::Real)});
  auto label = b;
  label[19] = 2;
  EXPECT_THROW(decode_cache(label), CorruptionError);
  auto nan = b;
  put_u32(nan, 22, 0x7FC00000u);
  EXPECT_THROW(decode_cache(nan), CorruptionError);
  auto trailing = b;
  trailing.push_back(0);
  EXPECT_THROW(decode_cache(trailing), CorruptionError);
}

TEST(Cache, DigestTracksContent) {
  const auto a = clipdetect::testing::random_records(4, 9);
  auto b = a;
  EXPECT_EQ(dataset_digest(a), dataset_digest(b));
  EXPECT_EQ(dataset_digest(a).size(), 64u);
  b[2].vector[0] += 1.0f;
  EXPECT_NE(dataset_digest(a), dataset_digest(b));
}

TEST(Cache, StackVectors) {
  const auto r = clipdetect::testing::random_records(3, 2);
  const Tensor t = stack_vectors(r);
  EXPECT_EQ(t.shape(), (Shape{3, kEmbeddingDim}));
  EXPECT_EQ(t.row(2)[7], r[2].vector[7]);
}

TEST(Split, CustomDatasetProportions) {
  const auto records = balanced(130);
  const auto split = few_shot_split(records, SplitSpec{7, 0.2, true});
  EXPECT_EQ(split.adaptation.size(), 52u);
  EXPECT_EQ(split.test.size(), 208u);
  const auto fakes = std::count_if(split.adaptation.begin(), split.adaptation.end(),
                                   [](const auto& r) { return r.label == Label::Fake; });
  EXPECT_EQ(fakes, 26);
}

TEST(Split, SameSeedSameMembership) {
  const auto records = balanced(40);
  const auto a = few_shot_split(records, SplitSpec{11, 0.25, true});
  const auto b = few_shot_split(records, SplitSpec{11, 0.25, true});
  EXPECT_EQ(ids_of(a.adaptation), ids_of(b.adaptation));
  const auto c = few_shot_split(records, SplitSpec{12, 0.25, true});
  EXPECT_NE(ids_of(a.adaptation), ids_of(c.adaptation));
}

TEST(Split, TenRecordsBruteForce) {
  const auto records = balanced(5);
  const auto split = few_shot_split(records, SplitSpec{3, 0.5, true});
  ASSERT_EQ(split.adaptation.size(), 5u);
  ASSERT_EQ(split.test.size(), 5u);
  for (const auto& r : records) {
    int hits = 0;
    for (const auto& a : split.adaptation) hits += a.id == r.id;
    for (const auto& t : split.test) hits += t.id == r.id;
    EXPECT_EQ(hits, 1) << r.id;
  }
}

TEST(Split, PropertiesOverRandomInputs) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n_real = 2 + rng() % 40, n_fake = 2 + rng() % 40;
    std::vector<EmbeddingRecord> records;
    for (std::size_t i = 0; i < n_real + n_fake; ++i) {
      records.push_back(simple_record("id" + std::to_string(rng()), i < n_real ? Label::Real : Label::Fake));
    }
    const double fraction = 0.05 + 0.9 * static_cast<double>(rng() % 1000) / 1000.0;
    const SplitSpec spec{rng(), fraction, true};
    SplitIndices idx;
    try {
      idx = few_shot_split_indices(records, spec);
    } catch (const ValidationError&) {
      // Only legal when a class could end up entirely on one side.
      const double er = fraction * double(n_real), ef = fraction * double(n_fake);
      EXPECT_TRUE(er < 1.0 || ef < 1.0 || er > double(n_real) - 1.0 || ef > double(n_fake) - 1.0);
      continue;
    }
    EXPECT_EQ(idx.adaptation.size() + idx.test.size(), records.size());
    EXPECT_EQ(long(idx.adaptation.size()), std::lround(fraction * double(records.size())));
    std::set<std::size_t> seen(idx.adaptation.begin(), idx.adaptation.end());
    for (std::size_t i : idx.test) EXPECT_TRUE(seen.insert(i).second);
    EXPECT_EQ(seen.size(), records.size());
    std::size_t adapt_real = 0;
    for (std::size_t i : idx.adaptation) adapt_real += records[i].label == Label::Real;
    EXPECT_LT(std::abs(double(adapt_real) - fraction * double(n_real)), 1.0);
    EXPECT_LT(std::abs(double(idx.adaptation.size() - adapt_real) - fraction * double(n_fake)), 1.0);

    // Permuting the input leaves membership unchanged.
    auto shuffled = records;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto a = few_shot_split(records, spec);
    const auto b = few_shot_split(shuffled, spec);
    EXPECT_EQ(ids_of(a.adaptation), ids_of(b.adaptation));
    EXPECT_EQ(ids_of(a.test), ids_of(b.test));
  }
}

TEST(Split, Errors) {
  const auto records = balanced(5);
  EXPECT_THROW(few_shot_split(records, SplitSpec{1, 0.0, true}), ValidationError);
  EXPECT_THROW(few_shot_split(records, SplitSpec{1, 1.0, true}), ValidationError);
  std::vector<EmbeddingRecord> lopsided = balanced(3);
  lopsided.push_back(simple_record("solo", Label::Real));
  lopsided.erase(std::remove_if(lopsided.begin(), lopsided.end(),
                                [](const auto& r) { return r.label == Label::Fake && r.id != "r1001"; }),
                 lopsided.end());
  EXPECT_THROW(few_shot_split(lopsided, SplitSpec{1, 0.5, true}), ValidationError);
  auto dup = balanced(3);
  dup[1].id = dup[0].id;
  EXPECT_THROW(few_shot_split(dup, SplitSpec{1, 0.5, true}), ValidationError);
}

TEST(Split, Unstratified) {
  const auto records = balanced(50);
  const auto idx = few_shot_split_indices(records, SplitSpec{5, 0.2, false});
  EXPECT_EQ(idx.adaptation.size(), 20u);
  EXPECT_EQ(idx.test.size(), 80u);
}
