#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace clipdetect {

/// Width of every embedding produced by the encoder and consumed by the heads.
inline constexpr std::size_t kEmbeddingDim = 512;

/// Fake is the positive class everywhere (label 1).
enum class Label : std::uint8_t { Real = 0, Fake = 1 };

inline std::string_view to_string(Label label) { return label == Label::Fake ? "fake" : "real"; }

inline std::optional<Label> parse_label(std::string_view text) {
  if (text == "real") return Label::Real;
  if (text == "fake") return Label::Fake;
  return std::nullopt;
}

inline Label opposite(Label label) { return label == Label::Fake ? Label::Real : Label::Fake; }

}  // namespace clipdetect
