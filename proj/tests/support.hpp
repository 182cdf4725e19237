#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "langsteer/model.hpp"
#include "langsteer/tokenizer.hpp"

namespace testing {

namespace fs = std::filesystem;

inline fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("langsteer_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline langsteer::ModelConfig toy_config(std::uint64_t seed = 1) {
  langsteer::ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 24;
  c.max_seq_len = 48;
  c.rng_seed = seed;
  return c;
}

inline std::string random_text(std::mt19937_64& rng, std::size_t len) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz     ";
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
  return s;
}

/// Straight-line double-precision transformer over a model's tensors, written
/// independently of the engine. `hook(layer, pos, acts)` may rewrite the
/// activation-function outputs.
struct ReferenceResult {
  std::vector<std::vector<double>> logits;               // [pos][vocab]
  std::vector<std::vector<std::vector<double>>> acts;    // [layer][pos][unit]
};

inline ReferenceResult reference_forward(
    const langsteer::Model& model, const std::vector<langsteer::TokenId>& tokens,
    const std::function<void(int, std::size_t, std::vector<double>&)>& hook = {}) {
  const auto& c = model.config();
  const auto& T = model.tensors();
  const int d = c.d_model, f = c.d_ff, H = c.n_heads, hd = d / H;
  const std::size_t n = tokens.size();
  auto find = [&](const std::string& name) -> const std::vector<float>& {
    for (const auto& t : T) {
      if (t.name == name) return t.data;
    }
    throw std::runtime_error("no tensor " + name);
  };
  auto norm = [&](const std::vector<double>& x, const std::vector<float>& g) {
    double ss = 0;
    for (double v : x) ss += v * v;
    const double s = 1.0 / std::sqrt(ss / d + 1e-5);
    std::vector<double> out(x.size());
    for (int i = 0; i < d; ++i) out[i] = x[i] * s * g[i];
    return out;
  };
  auto mul = [](const std::vector<float>& w, const std::vector<double>& x, int rows) {
    const int cols = static_cast<int>(x.size());
    std::vector<double> out(rows, 0.0);
    for (int r = 0; r < rows; ++r) {
      for (int k = 0; k < cols; ++k) out[r] += w[static_cast<std::size_t>(r) * cols + k] * x[k];
    }
    return out;
  };
  // rotate consecutive pairs (2i, 2i+1) of each head by t * base^(-2i/hd)
  auto rotate = [&](std::vector<double>& v, std::size_t t) {
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < hd / 2; ++i) {
        const double th = static_cast<double>(t) * std::pow(10000.0, -2.0 * i / hd);
        double& a = v[h * hd + 2 * i];
        double& b = v[h * hd + 2 * i + 1];
        const double a0 = a, b0 = b;
        a = a0 * std::cos(th) - b0 * std::sin(th);
        b = a0 * std::sin(th) + b0 * std::cos(th);
      }
    }
  };

  const auto& emb = find("tok_embedding");
  std::vector<std::vector<double>> x(n, std::vector<double>(d));
  for (std::size_t t = 0; t < n; ++t) {
    for (int i = 0; i < d; ++i) x[t][i] = emb[static_cast<std::size_t>(tokens[t]) * d + i];
  }
  ReferenceResult out;
  out.acts.assign(c.n_layers, std::vector<std::vector<double>>(n));
  const bool gated = c.ffn_kind == langsteer::FfnKind::gated_silu;
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "blk." + std::to_string(l) + ".";
    std::vector<std::vector<double>> q(n), k(n), v(n);
    for (std::size_t t = 0; t < n; ++t) {
      const auto h = norm(x[t], find(p + "attn_norm"));
      q[t] = mul(find(p + "wq"), h, d);
      k[t] = mul(find(p + "wk"), h, d);
      v[t] = mul(find(p + "wv"), h, d);
      rotate(q[t], t);
      rotate(k[t], t);
    }
    std::vector<std::vector<double>> attn(n, std::vector<double>(d, 0.0));
    for (std::size_t t = 0; t < n; ++t) {
      for (int h = 0; h < H; ++h) {
        std::vector<double> w(t + 1);
        double mx = -1e300;
        for (std::size_t s = 0; s <= t; ++s) {
          double dot = 0;
          for (int i = 0; i < hd; ++i) dot += q[t][h * hd + i] * k[s][h * hd + i];
          w[s] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, w[s]);
        }
        double z = 0;
        for (auto& e : w) z += (e = std::exp(e - mx));
        for (std::size_t s = 0; s <= t; ++s) {
          for (int i = 0; i < hd; ++i) attn[t][h * hd + i] += w[s] / z * v[s][h * hd + i];
        }
      }
    }
    for (std::size_t t = 0; t < n; ++t) {
      const auto o = mul(find(p + "wo"), attn[t], d);
      for (int i = 0; i < d; ++i) x[t][i] += o[i];
    }
    for (std::size_t t = 0; t < n; ++t) {
      const auto h = norm(x[t], find(p + "ffn_norm"));
      auto a = mul(find(p + (gated ? "w_gate" : "w_in")), h, f);
      for (auto& z : a) z = gated ? z / (1.0 + std::exp(-z)) : 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0)));
      if (hook) hook(l, t, a);
      out.acts[l][t] = a;
      if (gated) {
        const auto u = mul(find(p + "w_up"), h, f);
        for (int j = 0; j < f; ++j) a[j] *= u[j];
      }
      const auto dn = mul(find(p + "w_down"), a, d);
      for (int i = 0; i < d; ++i) x[t][i] += dn[i];
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    out.logits.push_back(mul(find("lm_head"), norm(x[t], find("final_norm")), c.vocab_size));
  }
  return out;
}

/// Model whose every logit is zero: lm_head left at zero.
inline langsteer::Model zero_logit_model(const langsteer::ModelConfig& config) {
  auto tensors = langsteer::Model::init(config).tensors();
  for (auto& t : tensors) {
    if (t.name == "lm_head") std::fill(t.data.begin(), t.data.end(), 0.0f);
  }
  return langsteer::Model::from_tensors(config, std::move(tensors));
}

}  // namespace testing
