#include "langsteer/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "langsteer/error.hpp"
#include "langsteer/steer.hpp"

namespace langsteer {
namespace {

constexpr float kNormEps = 1e-5f;
constexpr double kInitStd = 0.02;
constexpr double kRopeBase = 10000.0;

// Box-Muller over mt19937_64 so the stream is identical across standard
// libraries (std::normal_distribution is implementation-defined).
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

void rms_norm(const float* x, const float* gain, float* out, int n) {
  float sum = 0.0f;
  for (int i = 0; i < n; ++i) sum += x[i] * x[i];
  const float scale = 1.0f / std::sqrt(sum / static_cast<float>(n) + kNormEps);
  for (int i = 0; i < n; ++i) out[i] = x[i] * scale * gain[i];
}

// out[o] = sum_i w[o, i] * x[i]
void matvec(const float* w, const float* x, float* out, int rows, int cols) {
  for (int o = 0; o < rows; ++o) {
    const float* row = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(cols);
    float acc = 0.0f;
    for (int i = 0; i < cols; ++i) acc += row[i] * x[i];
    out[o] = acc;
  }
}

float silu(float z) { return z / (1.0f + std::exp(-z)); }

float gelu(float z) {
  return 0.5f * z * (1.0f + std::erf(z * static_cast<float>(std::numbers::sqrt2 / 2.0)));
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string to_string(FfnKind kind) {
  return kind == FfnKind::gated_silu ? "gated-silu" : "gelu";
}

FfnKind parse_ffn_kind(const std::string& name) {
  if (name == "gated-silu") return FfnKind::gated_silu;
  if (name == "gelu") return FfnKind::gelu;
  throw ConfigError("unknown ffn_kind '" + name + "' (expected gated-silu or gelu)");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid model config: ") + what);
  };
  require(n_layers >= 1, "n_layers must be >= 1");
  require(d_model >= 1, "d_model must be >= 1");
  require(n_heads >= 1, "n_heads must be >= 1");
  require(d_ff >= 1, "d_ff must be >= 1");
  require(max_seq_len >= 2, "max_seq_len must be >= 2");
  require(vocab_size >= static_cast<int>(kMinVocabSize),
          "vocab_size must be >= 259 (256 bytes + BOS/EOS/PAD)");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require((d_model / n_heads) % 2 == 0, "head dimension must be even for rotary embeddings");
}

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

ActivationCapture::ActivationCapture(int n_layers, std::size_t seq_len, int d_ff)
    : n_layers_(n_layers),
      seq_len_(seq_len),
      d_ff_(d_ff),
      values_(static_cast<std::size_t>(n_layers) * seq_len * static_cast<std::size_t>(d_ff), 0.0f) {}

std::vector<Tensor> Model::tensor_layout(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto f = static_cast<std::size_t>(c.d_ff);
  const auto v = static_cast<std::size_t>(c.vocab_size);
  std::vector<Tensor> out;
  auto add = [&out](std::string name, std::vector<std::size_t> shape) {
    Tensor t{std::move(name), std::move(shape), {}};
    t.data.assign(t.numel(), 0.0f);
    out.push_back(std::move(t));
  };
  add("tok_embedding", {v, d});
  for (int i = 0; i < c.n_layers; ++i) {
    const std::string p = "blk." + std::to_string(i) + ".";
    add(p + "attn_norm", {d});
    add(p + "wq", {d, d});
    add(p + "wk", {d, d});
    add(p + "wv", {d, d});
    add(p + "wo", {d, d});
    add(p + "ffn_norm", {d});
    if (c.ffn_kind == FfnKind::gated_silu) {
      add(p + "w_gate", {f, d});
      add(p + "w_up", {f, d});
    } else {
      add(p + "w_in", {f, d});
    }
    add(p + "w_down", {d, f});
  }
  add("final_norm", {d});
  add("lm_head", {v, d});
  return out;
}

Model Model::init(const ModelConfig& config) {
  config.validate();
  auto tensors = tensor_layout(config);
  GaussianStream rng(config.rng_seed);
  for (auto& t : tensors) {
    if (t.shape.size() == 1) {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
      continue;
    }
    for (auto& w : t.data) w = static_cast<float>(rng.next() * kInitStd);
  }
  return Model(config, std::move(tensors));
}

Model Model::from_tensors(const ModelConfig& config, std::vector<Tensor> tensors) {
  config.validate();
  const auto layout = tensor_layout(config);
  if (layout.size() != tensors.size()) {
    throw FormatError("expected " + std::to_string(layout.size()) + " tensors, got " +
                      std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != tensors[i].name || layout[i].shape != tensors[i].shape ||
        tensors[i].data.size() != layout[i].numel()) {
      throw FormatError("tensor " + std::to_string(i) + " ('" + tensors[i].name +
                        "') does not match expected '" + layout[i].name + "'");
    }
  }
  return Model(config, std::move(tensors));
}

Model::Model(ModelConfig config, std::vector<Tensor> tensors)
    : config_(config), tensors_(std::move(tensors)) {
  std::size_t k = 0;
  embedding_ = k++;
  const bool gated = config_.ffn_kind == FfnKind::gated_silu;
  for (int i = 0; i < config_.n_layers; ++i) {
    LayerIndex li{};
    li.attn_norm = k++;
    li.wq = k++;
    li.wk = k++;
    li.wv = k++;
    li.wo = k++;
    li.ffn_norm = k++;
    li.w_gate = k++;
    li.w_up = gated ? k++ : li.w_gate;
    li.w_down = k++;
    layers_.push_back(li);
  }
  final_norm_ = k++;
  lm_head_ = k++;
}

std::uint64_t Model::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tensors_) h = fnv1a(t.data.data(), t.data.size() * sizeof(float), h);
  return h;
}

std::string Model::fingerprint() const {
  const auto& c = config_;
  const std::string desc = std::to_string(c.n_layers) + "/" + std::to_string(c.d_model) + "/" +
                           std::to_string(c.n_heads) + "/" + std::to_string(c.d_ff) + "/" +
                           std::to_string(c.vocab_size) + "/" + std::to_string(c.max_seq_len) +
                           "/" + to_string(c.ffn_kind) + "/" + std::to_string(c.rng_seed);
  std::uint64_t h = fnv1a(desc.data(), desc.size(), 0xcbf29ce484222325ULL);
  const std::uint64_t w = checksum();
  h = fnv1a(&w, sizeof(w), h);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void Model::check_neuron(NeuronId id) const {
  if (id.layer < 0 || id.layer >= config_.n_layers || id.unit < 0 || id.unit >= config_.d_ff) {
    throw AddressingError("neuron (" + std::to_string(id.layer) + ", " + std::to_string(id.unit) +
                          ") outside model grid (" + std::to_string(config_.n_layers) +
                          " layers, d_ff " + std::to_string(config_.d_ff) + ")");
  }
}

ForwardResult Model::forward(std::span<const TokenId> tokens, const ForwardOptions& options) const {
  const auto& c = config_;
  const std::size_t n = tokens.size();
  if (n == 0) throw ContractError("forward requires at least one token");
  if (n > static_cast<std::size_t>(c.max_seq_len)) {
    throw LengthError("sequence of " + std::to_string(n) + " tokens exceeds max_seq_len " +
                      std::to_string(c.max_seq_len));
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= c.vocab_size) {
      throw ContractError("token id " + std::to_string(t) + " outside vocabulary");
    }
  }
  const SteeringPlan* plan = options.plan;
  if (plan != nullptr) {
    plan->validate_for(c);
    if (plan->empty()) {
      plan = nullptr;
    } else if (plan->requires_context() && options.context == nullptr) {
      throw ContractError(std::string("plan kind ") + std::string(to_string(plan->kind())) +
                          " needs a test-time context");
    }
  }

  const int d = c.d_model;
  const int f = c.d_ff;
  const int v = c.vocab_size;
  const int heads = c.n_heads;
  const int hd = d / heads;
  const auto du = static_cast<std::size_t>(d);
  const auto fu = static_cast<std::size_t>(f);
  const bool gated = c.ffn_kind == FfnKind::gated_silu;

  std::vector<float> cos_table(n * static_cast<std::size_t>(hd / 2));
  std::vector<float> sin_table(cos_table.size());
  for (std::size_t t = 0; t < n; ++t) {
    for (int i = 0; i < hd / 2; ++i) {
      const double freq = std::pow(kRopeBase, -2.0 * i / hd);
      const double angle = static_cast<double>(t) * freq;
      cos_table[t * static_cast<std::size_t>(hd / 2) + static_cast<std::size_t>(i)] =
          static_cast<float>(std::cos(angle));
      sin_table[t * static_cast<std::size_t>(hd / 2) + static_cast<std::size_t>(i)] =
          static_cast<float>(std::sin(angle));
    }
  }
  auto rope = [&](float* vec, std::size_t t) {
    for (int h = 0; h < heads; ++h) {
      float* head = vec + static_cast<std::size_t>(h * hd);
      for (int i = 0; i < hd / 2; ++i) {
        const float cs = cos_table[t * static_cast<std::size_t>(hd / 2) + static_cast<std::size_t>(i)];
        const float sn = sin_table[t * static_cast<std::size_t>(hd / 2) + static_cast<std::size_t>(i)];
        const float a = head[2 * i];
        const float b = head[2 * i + 1];
        head[2 * i] = a * cs - b * sn;
        head[2 * i + 1] = a * sn + b * cs;
      }
    }
  };

  ForwardResult result;
  result.seq_len = n;
  result.vocab_size = static_cast<std::size_t>(v);
  if (options.capture) result.capture.emplace(c.n_layers, n, f);

  std::vector<float> x(n * du);
  const float* emb = ptr(embedding_);
  for (std::size_t t = 0; t < n; ++t) {
    std::copy_n(emb + static_cast<std::size_t>(tokens[t]) * du, du, x.begin() + t * du);
  }

  std::vector<float> h(du), q(n * du), k(n * du), val(n * du), attn(du), proj(du);
  std::vector<float> scores(n), act(fu), up(fu);
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  for (int layer = 0; layer < c.n_layers; ++layer) {
    const LayerIndex& li = layers_[static_cast<std::size_t>(layer)];

    for (std::size_t t = 0; t < n; ++t) {
      rms_norm(&x[t * du], ptr(li.attn_norm), h.data(), d);
      matvec(ptr(li.wq), h.data(), &q[t * du], d, d);
      matvec(ptr(li.wk), h.data(), &k[t * du], d, d);
      matvec(ptr(li.wv), h.data(), &val[t * du], d, d);
      rope(&q[t * du], t);
      rope(&k[t * du], t);
    }
    for (std::size_t t = 0; t < n; ++t) {
      std::fill(attn.begin(), attn.end(), 0.0f);
      for (int hh = 0; hh < heads; ++hh) {
        const std::size_t off = static_cast<std::size_t>(hh * hd);
        float mx = -INFINITY;
        for (std::size_t s = 0; s <= t; ++s) {
          float dot = 0.0f;
          for (int i = 0; i < hd; ++i) dot += q[t * du + off + static_cast<std::size_t>(i)] *
                                              k[s * du + off + static_cast<std::size_t>(i)];
          scores[s] = dot * scale;
          mx = std::max(mx, scores[s]);
        }
        float denom = 0.0f;
        for (std::size_t s = 0; s <= t; ++s) {
          scores[s] = std::exp(scores[s] - mx);
          denom += scores[s];
        }
        for (std::size_t s = 0; s <= t; ++s) {
          const float p = scores[s] / denom;
          for (int i = 0; i < hd; ++i) {
            attn[off + static_cast<std::size_t>(i)] += p * val[s * du + off + static_cast<std::size_t>(i)];
          }
        }
      }
      matvec(ptr(li.wo), attn.data(), proj.data(), d, d);
      for (std::size_t i = 0; i < du; ++i) x[t * du + i] += proj[i];
    }

    for (std::size_t t = 0; t < n; ++t) {
      rms_norm(&x[t * du], ptr(li.ffn_norm), h.data(), d);
      matvec(ptr(li.w_gate), h.data(), act.data(), f, d);
      for (auto& a : act) a = gated ? silu(a) : gelu(a);
      if (plan != nullptr) apply_steering(*plan, options.context, layer, act);
      if (result.capture) {
        auto row = result.capture->row(layer, t);
        std::copy(act.begin(), act.end(), row.begin());
      }
      if (gated) {
        matvec(ptr(li.w_up), h.data(), up.data(), f, d);
        for (std::size_t j = 0; j < fu; ++j) act[j] *= up[j];
      }
      matvec(ptr(li.w_down), act.data(), proj.data(), d, f);
      for (std::size_t i = 0; i < du; ++i) x[t * du + i] += proj[i];
    }
  }

  result.logits.resize(n * static_cast<std::size_t>(v));
  for (std::size_t t = 0; t < n; ++t) {
    rms_norm(&x[t * du], ptr(final_norm_), h.data(), d);
    matvec(ptr(lm_head_), h.data(), &result.logits[t * static_cast<std::size_t>(v)], v, d);
  }
  return result;
}

void log_softmax(std::span<const float> logits, std::span<float> out) {
  float mx = -INFINITY;
  for (float l : logits) mx = std::max(mx, l);
  float sum = 0.0f;
  for (float l : logits) sum += std::exp(l - mx);
  const float log_sum = std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = (logits[i] - mx) - log_sum;
}

double sequence_logprob(const Model& model, std::span<const TokenId> prompt,
                        std::span<const TokenId> continuation, const SteeringPlan* plan,
                        const TestTimeContext* context) {
  if (continuation.empty()) throw ContractError("sequence_logprob needs a non-empty continuation");
  if (prompt.empty()) throw ContractError("sequence_logprob needs a non-empty prompt");
  TokenSequence all(prompt.begin(), prompt.end());
  all.insert(all.end(), continuation.begin(), continuation.end());
  const ForwardResult fr = model.forward(all, {plan, context, false});
  std::vector<float> lp(fr.vocab_size);
  double total = 0.0;
  for (std::size_t j = 0; j < continuation.size(); ++j) {
    log_softmax(fr.logits_at(prompt.size() - 1 + j), lp);
    total += static_cast<double>(lp[static_cast<std::size_t>(continuation[j])]);
  }
  return total;
}

}  // namespace langsteer
