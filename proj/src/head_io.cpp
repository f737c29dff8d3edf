#include "clipdetect/head_io.hpp"

#include "binary_io.hpp"
#include "clipdetect/file_util.hpp"

namespace clipdetect {

namespace {
constexpr std::string_view kMagic = "AHD1";
}

std::vector<std::uint8_t> encode_head(const Head& head) {
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.scalar(static_cast<std::uint8_t>(head.kind()));
  for (const Tensor* p : head.parameters()) {
    w.scalar(static_cast<std::uint32_t>(p->rank()));
    for (std::size_t e : p->shape()) w.scalar(static_cast<std::uint32_t>(e));
    w.floats(p->values());
  }
  return w.take();
}

Head decode_head(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "head file");
  if (r.bytes(kMagic.size()) != kMagic) throw FormatError("head file: bad magic (expected \"AHD1\")");
  const auto kind_byte = r.scalar<std::uint8_t>();
  if (kind_byte > 1) throw FormatError("head file: unknown head kind byte " + std::to_string(kind_byte));
  Head head = Head::zeros(static_cast<HeadKind>(kind_byte));
  const auto names = Head::parameter_names(head.kind());
  auto params = head.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::size_t at = r.offset();
    const auto rank = r.scalar<std::uint32_t>();
    if (rank != params[k]->rank()) {
      throw FormatError("head file: " + names[k] + " has rank " + std::to_string(rank) + ", expected " +
                        std::to_string(params[k]->rank()) + " (offset " + std::to_string(at) + ")");
    }
    Shape shape(rank);
    for (auto& e : shape) e = r.scalar<std::uint32_t>();
    if (shape != params[k]->shape()) {
      throw FormatError("head file: " + names[k] + " has shape " + shape_to_string(shape) + ", expected " +
                        shape_to_string(params[k]->shape()));
    }
    r.floats(params[k]->values());
  }
  if (r.remaining() != 0) {
    throw CorruptionError("head file: " + std::to_string(r.remaining()) + " trailing bytes", r.offset());
  }
  return head;
}

void save_head(const Head& head, const std::filesystem::path& path) { write_file_atomic(path, encode_head(head)); }

Head load_head(const std::filesystem::path& path) { return decode_head(read_file_bytes(path)); }

}  // namespace clipdetect
