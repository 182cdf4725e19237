#include "langsteer/tokenizer.hpp"

#include "langsteer/error.hpp"

namespace langsteer {

TokenSequence tokenize(std::string_view text, std::size_t max_seq_len) {
  if (max_seq_len < 2 || text.size() > max_seq_len - 2) {
    throw LengthError("input of " + std::to_string(text.size()) +
                      " bytes exceeds the limit of max_seq_len - 2 = " +
                      std::to_string(max_seq_len < 2 ? 0 : max_seq_len - 2) + " bytes");
  }
  TokenSequence out;
  out.reserve(text.size() + 1);
  out.push_back(kBos);
  for (char c : text) out.push_back(byte_token(static_cast<unsigned char>(c)));
  return out;
}

TokenSequence encode_bytes(std::string_view text) {
  TokenSequence out;
  out.reserve(text.size());
  for (char c : text) out.push_back(byte_token(static_cast<unsigned char>(c)));
  return out;
}

std::string detokenize(std::span<const TokenId> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId id : tokens) {
    if (id < kByteOffset || id >= kByteOffset + 256) continue;
    out.push_back(static_cast<char>(static_cast<unsigned char>(id - kByteOffset)));
  }
  return out;
}

}  // namespace langsteer
