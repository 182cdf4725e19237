#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "langsteer/neuron.hpp"
#include "langsteer/tokenizer.hpp"

namespace langsteer {

class SteeringPlan;
class TestTimeContext;

enum class FfnKind { gated_silu, gelu };

std::string to_string(FfnKind kind);
FfnKind parse_ffn_kind(const std::string& name);

struct ModelConfig {
  int n_layers = 4;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = static_cast<int>(kMinVocabSize);
  int max_seq_len = 128;
  FfnKind ffn_kind = FfnKind::gated_silu;
  std::uint64_t rng_seed = 1;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;

  std::size_t numel() const;
};

/// Activation-function outputs, laid out [layer][position][unit].
class ActivationCapture {
 public:
  ActivationCapture() = default;
  ActivationCapture(int n_layers, std::size_t seq_len, int d_ff);

  int n_layers() const { return n_layers_; }
  std::size_t seq_len() const { return seq_len_; }
  int d_ff() const { return d_ff_; }

  float at(int layer, std::size_t pos, int unit) const {
    return values_[offset(layer, pos) + static_cast<std::size_t>(unit)];
  }
  float at(NeuronId id, std::size_t pos) const { return at(id.layer, pos, id.unit); }

  std::span<const float> row(int layer, std::size_t pos) const {
    return {values_.data() + offset(layer, pos), static_cast<std::size_t>(d_ff_)};
  }
  std::span<float> row(int layer, std::size_t pos) {
    return {values_.data() + offset(layer, pos), static_cast<std::size_t>(d_ff_)};
  }

 private:
  std::size_t offset(int layer, std::size_t pos) const {
    return (static_cast<std::size_t>(layer) * seq_len_ + pos) * static_cast<std::size_t>(d_ff_);
  }

  int n_layers_ = 0;
  std::size_t seq_len_ = 0;
  int d_ff_ = 0;
  std::vector<float> values_;
};

struct ForwardOptions {
  const SteeringPlan* plan = nullptr;
  const TestTimeContext* context = nullptr;
  bool capture = false;
};

struct ForwardResult {
  std::size_t seq_len = 0;
  std::size_t vocab_size = 0;
  std::vector<float> logits;  // [seq_len][vocab_size]
  std::optional<ActivationCapture> capture;

  std::span<const float> logits_at(std::size_t pos) const {
    return {logits.data() + pos * vocab_size, vocab_size};
  }
};

/// Pre-norm decoder-only transformer with rotary attention. Immutable once
/// built, so one instance may serve concurrent forward passes.
///
/// Tensor order (also the PRNG draw order for `init`):
///   tok_embedding [vocab, d_model]
///   per layer i: blk.i.attn_norm [d_model], blk.i.wq, blk.i.wk, blk.i.wv,
///     blk.i.wo [d_model, d_model], blk.i.ffn_norm [d_model],
///     blk.i.w_gate [d_ff, d_model] (gelu: blk.i.w_in),
///     blk.i.w_up [d_ff, d_model] (gated only), blk.i.w_down [d_model, d_ff]
///   final_norm [d_model]
///   lm_head [vocab, d_model]
/// Matrices are row-major [out, in]. Norm gains start at 1 and consume no draws.
class Model {
 public:
  static Model init(const ModelConfig& config);

  /// Tensors must match `tensor_layout(config)` in name, order and shape.
  static Model from_tensors(const ModelConfig& config, std::vector<Tensor> tensors);

  static std::vector<Tensor> tensor_layout(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  /// FNV-1a over all tensor bytes in layout order.
  std::uint64_t checksum() const;

  /// Config + weights digest, hex encoded.
  std::string fingerprint() const;

  void check_neuron(NeuronId id) const;

  ForwardResult forward(std::span<const TokenId> tokens, const ForwardOptions& options = {}) const;

 private:
  struct LayerIndex {
    std::size_t attn_norm, wq, wk, wv, wo, ffn_norm, w_gate, w_up, w_down;
  };

  Model(ModelConfig config, std::vector<Tensor> tensors);

  const float* ptr(std::size_t index) const { return tensors_[index].data.data(); }

  ModelConfig config_;
  std::vector<Tensor> tensors_;
  std::vector<LayerIndex> layers_;
  std::size_t embedding_ = 0;
  std::size_t final_norm_ = 0;
  std::size_t lm_head_ = 0;
};

/// Numerically stable log-softmax (max subtraction) of one logit row.
void log_softmax(std::span<const float> logits, std::span<float> out);

/// Sum of next-token log-probabilities of `continuation` given `prompt`.
double sequence_logprob(const Model& model, std::span<const TokenId> prompt,
                        std::span<const TokenId> continuation,
                        const SteeringPlan* plan = nullptr,
                        const TestTimeContext* context = nullptr);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// Hand-set bilingual model. Language A is the byte alphabet 'a'..'m', language
// B is 'n'..'z'. Attention writes nothing to the residual stream; layer 0
// unit 0 (N_A) fires iff the current token is in A, unit 1 (N_B) iff it is in
// B, and each routes `boost` logits per unit of activation onto its alphabet.
// Both are negative on non-letter bytes and exactly zero on the other
// alphabet. Units 2..7 of every layer fire on two letter codes each but
// write nothing.
namespace synthetic {

inline constexpr NeuronId kNeuronA{0, 0};
inline constexpr NeuronId kNeuronB{0, 1};
inline constexpr int kSharedUnits = 6;
inline constexpr char kAlphabetAFirst = 'a';
inline constexpr char kAlphabetALast = 'm';
inline constexpr char kAlphabetBFirst = 'n';
inline constexpr char kAlphabetBLast = 'z';
inline constexpr float kSpaceBias = 3.0f;
inline constexpr float kDefaultBoost = 3.0f;

bool in_alphabet_a(unsigned char c);
bool in_alphabet_b(unsigned char c);

/// Config used by the CLI and tests: 2 layers, d_model 16, d_ff 32.
ModelConfig default_config();

}  // namespace synthetic

Model build_synthetic_bilingual_model(const ModelConfig& config, float boost);

}  // namespace langsteer
