#include <cmath>

#include "langsteer/error.hpp"
#include "langsteer/model.hpp"

namespace langsteer {
namespace synthetic {
namespace {

// Residual-stream layout of the hand-set model.
constexpr int kDimA = 0;
constexpr int kDimB = 1;
constexpr int kDimOther = 2;
constexpr int kDimConst = 3;
constexpr int kDimLogitA = 4;
constexpr int kDimLogitB = 5;
constexpr int kDimCode = 6;  // 10 letter-code dims, letter index mod 10
constexpr int kCodeDims = 10;
constexpr int kMinDModel = kDimCode + kCodeDims;

constexpr float kConst = 4.0f;
constexpr float kOnPreact = 2.0f;
constexpr float kOffPreact = -1.0f;
constexpr float kSharedPreact = 2.0f;
constexpr float kEps = 1e-5f;

int letter_index(unsigned char c) {
  if (in_alphabet_a(c)) return c - kAlphabetAFirst;
  return c - kAlphabetBFirst;
}

}  // namespace

bool in_alphabet_a(unsigned char c) { return c >= kAlphabetAFirst && c <= kAlphabetALast; }
bool in_alphabet_b(unsigned char c) { return c >= kAlphabetBFirst && c <= kAlphabetBLast; }

ModelConfig default_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = static_cast<int>(kMinVocabSize);
  c.max_seq_len = 128;
  c.ffn_kind = FfnKind::gated_silu;
  c.rng_seed = 0;
  return c;
}

}  // namespace synthetic

Model build_synthetic_bilingual_model(const ModelConfig& config, float boost) {
  using namespace synthetic;
  config.validate();
  if (config.ffn_kind != FfnKind::gated_silu) {
    throw ConfigError("synthetic bilingual model requires a gated-silu FFN");
  }
  if (config.d_model < kMinDModel) {
    throw ConfigError("synthetic bilingual model needs d_model >= " + std::to_string(kMinDModel));
  }
  if (config.d_ff < 2 + kSharedUnits) {
    throw ConfigError("synthetic bilingual model needs d_ff >= " + std::to_string(2 + kSharedUnits));
  }
  if (config.vocab_size < byte_token(static_cast<unsigned char>(kAlphabetBLast)) + 1) {
    throw ConfigError("alphabets not representable in vocab");
  }
  if (!(boost > 0.0f) || !std::isfinite(boost)) {
    throw ConfigError("synthetic boost must be a positive finite number");
  }

  auto tensors = Model::tensor_layout(config);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto f = static_cast<std::size_t>(config.d_ff);
  const float dm = static_cast<float>(config.d_model);
  // RMS of letter and non-letter embeddings; gate weights are scaled by them
  // so pre-activations come out at the k*Preact constants.
  const float rms_letter = std::sqrt((2.0f + kConst * kConst) / dm + kEps);
  const float rms_other = std::sqrt((1.0f + kConst * kConst) / dm + kEps);

  std::size_t k = 0;
  auto& emb = tensors[k++].data;
  for (int tok = 0; tok < config.vocab_size; ++tok) {
    float* row = emb.data() + static_cast<std::size_t>(tok) * d;
    row[kDimConst] = kConst;
    const bool is_byte = tok >= kByteOffset && tok < kByteOffset + 256;
    const auto byte = static_cast<unsigned char>(is_byte ? tok - kByteOffset : 0);
    if (is_byte && (in_alphabet_a(byte) || in_alphabet_b(byte))) {
      row[in_alphabet_a(byte) ? kDimA : kDimB] = 1.0f;
      row[kDimCode + letter_index(byte) % kCodeDims] = 1.0f;
    } else {
      row[kDimOther] = 1.0f;
    }
  }

  for (int layer = 0; layer < config.n_layers; ++layer) {
    tensors[k++].data.assign(d, 1.0f);  // attn_norm
    k += 4;                             // wq, wk, wv, wo stay zero
    tensors[k++].data.assign(d, 1.0f);  // ffn_norm
    auto& gate = tensors[k++].data;
    auto& up = tensors[k++].data;
    auto& down = tensors[k++].data;
    auto g = [&](std::size_t unit, int dim) -> float& { return gate[unit * d + static_cast<std::size_t>(dim)]; };
    auto u = [&](std::size_t unit, int dim) -> float& { return up[unit * d + static_cast<std::size_t>(dim)]; };
    auto dn = [&](int dim, std::size_t unit) -> float& { return down[static_cast<std::size_t>(dim) * f + unit]; };

    if (layer == 0) {
      g(0, kDimA) = kOnPreact * rms_letter;
      g(0, kDimOther) = kOffPreact * rms_other;
      g(1, kDimB) = kOnPreact * rms_letter;
      g(1, kDimOther) = kOffPreact * rms_other;
      u(0, kDimConst) = rms_letter / kConst;
      u(1, kDimConst) = rms_letter / kConst;
      dn(kDimLogitA, 0) = boost;
      dn(kDimLogitB, 1) = boost;
    }
    for (int s = 0; s < kSharedUnits; ++s) {
      const auto unit = static_cast<std::size_t>(2 + s);
      g(unit, kDimCode + s) = kSharedPreact * rms_letter;
      g(unit, kDimCode + (s + 4) % kCodeDims) = kSharedPreact * rms_letter;
      u(unit, kDimConst) = rms_letter / kConst;
    }
  }

  tensors[k++].data.assign(d, 1.0f);  // final_norm
  auto& head = tensors[k++].data;
  for (int tok = 0; tok < config.vocab_size; ++tok) {
    float* row = head.data() + static_cast<std::size_t>(tok) * d;
    const bool is_byte = tok >= kByteOffset && tok < kByteOffset + 256;
    if (!is_byte) continue;
    const auto byte = static_cast<unsigned char>(tok - kByteOffset);
    if (in_alphabet_a(byte)) row[kDimLogitA] = rms_letter;
    if (in_alphabet_b(byte)) row[kDimLogitB] = rms_letter;
    if (byte == ' ') row[kDimConst] = kSpaceBias * rms_letter / kConst;
  }
  return Model::from_tensors(config, std::move(tensors));
}

}  // namespace langsteer
