#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace langsteer {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Byte-level vocabulary: three specials followed by the 256 byte values.
inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kPad = 2;
inline constexpr TokenId kByteOffset = 3;
inline constexpr std::size_t kMinVocabSize = 259;

constexpr bool is_special(TokenId id) { return id >= 0 && id < kByteOffset; }

constexpr TokenId byte_token(unsigned char byte) {
  return static_cast<TokenId>(byte) + kByteOffset;
}

/// BOS followed by one id per byte. Throws LengthError when the result would
/// not leave room for at least one generated token (text > max_seq_len - 2).
TokenSequence tokenize(std::string_view text, std::size_t max_seq_len);

/// Byte ids without BOS, used for continuations.
TokenSequence encode_bytes(std::string_view text);

/// Inverse of tokenize; special ids are dropped.
std::string detokenize(std::span<const TokenId> tokens);

}  // namespace langsteer
