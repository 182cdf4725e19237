#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <random>

#include "langsteer/error.hpp"
#include "langsteer/model.hpp"
#include "langsteer/steer.hpp"
#include "support.hpp"

using namespace langsteer;

namespace {

TokenSequence tok(const std::string& s, std::size_t max_len = 128) { return tokenize(s, max_len); }

std::vector<float> logits_of(const Model& m, const TokenSequence& t, const SteeringPlan* plan = nullptr,
                             const TestTimeContext* ctx = nullptr) {
  return m.forward(t, {plan, ctx, false}).logits;
}

}  // namespace

TEST_CASE("tokenize maps bytes past three specials") {
  CHECK(tok("") == TokenSequence{kBos});
  CHECK(tok("ab") == TokenSequence{kBos, 97 + 3, 98 + 3});
  CHECK(detokenize(tok("ab")) == "ab");
}

TEST_CASE("tokenize round-trips arbitrary bytes") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::string s(64, '\0');
    for (auto& ch : s) ch = static_cast<char>(rng() & 0xff);
    const auto t = tok(s);
    for (auto id : t) CHECK(id < static_cast<TokenId>(kMinVocabSize));
    REQUIRE(detokenize(t) == s);
  }
}

TEST_CASE("tokenize rejects over-length input naming the limit") {
  CHECK_NOTHROW(tokenize(std::string(14, 'a'), 16));
  try {
    tokenize(std::string(15, 'a'), 16);
    FAIL("expected LengthError");
  } catch (const LengthError& e) {
    CHECK(std::string(e.what()).find("14") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  ModelConfig c = testing::toy_config();
  CHECK_NOTHROW(c.validate());
  auto bad = [&](auto mutate) {
    ModelConfig x = c;
    mutate(x);
    CHECK_THROWS_AS(Model::init(x), ConfigError);
  };
  bad([](ModelConfig& x) { x.n_heads = 3; });
  bad([](ModelConfig& x) { x.d_model = 18; x.n_heads = 6; });  // odd head dim
  bad([](ModelConfig& x) { x.vocab_size = 258; });
  bad([](ModelConfig& x) { x.n_layers = 0; });
  bad([](ModelConfig& x) { x.d_ff = 0; });
}

TEST_CASE("init is deterministic and seed-sensitive") {
  const Model a = Model::init(testing::toy_config(1));
  const Model b = Model::init(testing::toy_config(1));
  const Model c = Model::init(testing::toy_config(2));
  CHECK(a.checksum() == b.checksum());
  CHECK(a.checksum() != c.checksum());
  for (std::size_t i = 0; i < a.tensors().size(); ++i) CHECK(a.tensors()[i].data == b.tensors()[i].data);
}

TEST_CASE("init draws Box-Muller pairs in tensor order; norm gains are one") {
  const ModelConfig cfg = testing::toy_config(42);
  const Model m = Model::init(cfg);
  std::mt19937_64 eng(42);
  std::vector<double> draws;
  while (draws.size() < 6) {
    const double u1 = (static_cast<double>(eng() >> 11) + 1.0) / 9007199254740992.0;
    const double u2 = static_cast<double>(eng() >> 11) / 9007199254740992.0;
    const double r = std::sqrt(-2.0 * std::log(u1));
    draws.push_back(r * std::cos(2.0 * std::numbers::pi * u2));
    draws.push_back(r * std::sin(2.0 * std::numbers::pi * u2));
  }
  const auto& emb = m.tensors()[0];
  REQUIRE(emb.name == "tok_embedding");
  for (int i = 0; i < 6; ++i) CHECK(emb.data[i] == static_cast<float>(draws[i] * 0.02));
  for (const auto& t : m.tensors()) {
    if (t.shape.size() == 1) {
      for (float g : t.data) CHECK(g == 1.0f);
    }
  }
  // wq of layer 0 continues the stream right after the embedding
  std::mt19937_64 eng2(42);
  double value = 0.0;
  const std::size_t index = emb.data.size();
  for (std::size_t pair = 0; pair <= index / 2; ++pair) {
    const double u1 = (static_cast<double>(eng2() >> 11) + 1.0) / 9007199254740992.0;
    const double u2 = static_cast<double>(eng2() >> 11) / 9007199254740992.0;
    const double r = std::sqrt(-2.0 * std::log(u1));
    value = index % 2 == 0 ? r * std::cos(2.0 * std::numbers::pi * u2) : r * std::sin(2.0 * std::numbers::pi * u2);
  }
  REQUIRE(m.tensors()[2].name == "blk.0.wq");
  CHECK(m.tensors()[2].data[0] == static_cast<float>(value * 0.02));
}

TEST_CASE("forward matches an independent double-precision evaluator") {
  for (FfnKind kind : {FfnKind::gated_silu, FfnKind::gelu}) {
    ModelConfig cfg = testing::toy_config(3);
    cfg.ffn_kind = kind;
    // larger weights so attention and norms matter numerically
    auto tensors = Model::init(cfg).tensors();
    for (auto& t : tensors) {
      if (t.shape.size() == 2) {
        for (auto& w : t.data) w *= 25.0f;
      }
    }
    const Model m = Model::from_tensors(cfg, std::move(tensors));
    const TokenSequence t = tok("the quick brown fox", cfg.max_seq_len);
    const auto fr = m.forward(t, {nullptr, nullptr, true});
    const auto ref = testing::reference_forward(m, t);
    double worst = 0.0;
    for (std::size_t p = 0; p < t.size(); ++p) {
      for (int v = 0; v < cfg.vocab_size; ++v) worst = std::max(worst, std::fabs(fr.logits_at(p)[v] - ref.logits[p][v]));
      for (int l = 0; l < cfg.n_layers; ++l) {
        for (int j = 0; j < cfg.d_ff; ++j) worst = std::max(worst, std::fabs(fr.capture->at(l, p, j) - ref.acts[l][p][j]));
      }
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("forward is causal and deterministic") {
  const Model m = Model::init(testing::toy_config(5));
  const TokenSequence a = tok("hello world");
  TokenSequence b = a;
  b.back() = byte_token('z');
  b.push_back(byte_token('q'));
  const auto fa = m.forward(a);
  const auto fb = m.forward(b);
  for (std::size_t p = 0; p + 1 < a.size(); ++p) {
    const auto ra = fa.logits_at(p);
    const auto rb = fb.logits_at(p);
    CHECK(std::equal(ra.begin(), ra.end(), rb.begin()));
  }
  CHECK(logits_of(m, a) == fa.logits);
}

TEST_CASE("log-softmax rows exponentiate to one") {
  const Model m = Model::init(testing::toy_config(6));
  const auto fr = m.forward(tok("normalisation check"));
  std::vector<float> lp(fr.vocab_size);
  for (std::size_t p = 0; p < fr.seq_len; ++p) {
    log_softmax(fr.logits_at(p), lp);
    double s = 0.0;
    for (float v : lp) s += std::exp(static_cast<double>(v));
    CHECK(std::fabs(s - 1.0) < 1e-6);
  }
  std::vector<float> big = {1000.0f, 1000.0f};
  std::vector<float> out(2);
  log_softmax(big, out);
  CHECK(out[0] == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("forward errors") {
  const ModelConfig cfg = testing::toy_config();
  const Model m = Model::init(cfg);
  const SteeringPlan bad(FactorKind::eq_zero, "xx", {{0, cfg.d_ff}}, {{{0, cfg.d_ff}, 0.0f}});
  CHECK_THROWS_AS(m.forward(tok("ab"), {&bad, nullptr, false}), AddressingError);
  const SteeringPlan bad_layer(FactorKind::eq_zero, "xx", {{cfg.n_layers, 0}}, {{{cfg.n_layers, 0}, 0.0f}});
  CHECK_THROWS_AS(m.forward(tok("ab"), {&bad_layer, nullptr, false}), AddressingError);
  TokenSequence long_seq(static_cast<std::size_t>(cfg.max_seq_len) + 1, byte_token('a'));
  CHECK_THROWS_AS(m.forward(long_seq), LengthError);
  CHECK_THROWS_AS(m.forward(TokenSequence{}), ContractError);
}

TEST_CASE("empty plan and absent plan give bit-identical logits") {
  const Model m = Model::init(testing::toy_config(8));
  const TokenSequence t = tok("identity under empty plans");
  const SteeringPlan empty(FactorKind::pmax, "aa", {}, {});
  CHECK(logits_of(m, t) == logits_of(m, t, &empty));
}

TEST_CASE("eq_zero plan forces captured activation to zero everywhere") {
  const Model m = Model::init(testing::toy_config(9));
  const SteeringPlan plan(FactorKind::eq_zero, "aa", {{0, 5}}, {{{0, 5}, 0.0f}});
  const auto fr = m.forward(tok("zeroed neuron"), {&plan, nullptr, true});
  for (std::size_t p = 0; p < fr.seq_len; ++p) CHECK(fr.capture->at(0, p, 5) == 0.0f);
}

TEST_CASE("sequence_logprob") {
  const ModelConfig cfg = testing::toy_config(10);
  SUBCASE("uniform logits give -ln(vocab)") {
    const Model z = testing::zero_logit_model(cfg);
    const double lp = sequence_logprob(z, tok("x"), encode_bytes("y"));
    CHECK(lp == doctest::Approx(-std::log(259.0)).epsilon(1e-7));
  }
  SUBCASE("chain rule over three separate forwards") {
    const Model m = Model::init(cfg);
    const TokenSequence prompt = tok("chain");
    const TokenSequence cont = encode_bytes("abc");
    double sum = 0.0;
    TokenSequence ctx = prompt;
    for (TokenId next : cont) {
      const auto fr = m.forward(ctx);
      std::vector<float> lp(fr.vocab_size);
      log_softmax(fr.logits_at(ctx.size() - 1), lp);
      sum += lp[static_cast<std::size_t>(next)];
      ctx.push_back(next);
    }
    const double got = sequence_logprob(m, prompt, cont);
    CHECK(got == doctest::Approx(sum).epsilon(1e-6));
    CHECK(got <= 0.0);
    CHECK(got == sequence_logprob(m, prompt, cont));
  }
  SUBCASE("empty continuation is a contract error") {
    const Model m = Model::init(cfg);
    CHECK_THROWS_AS(sequence_logprob(m, tok("a"), TokenSequence{}), ContractError);
  }
}

TEST_CASE("weight file round trip") {
  const auto dir = testing::scratch_dir("weights");
  const Model m = Model::init(testing::toy_config(11));
  save_model(m, dir / "a.nsl");
  const Model loaded = load_model(dir / "a.nsl");
  save_model(loaded, dir / "b.nsl");
  CHECK(testing::read_text(dir / "a.nsl") == testing::read_text(dir / "b.nsl"));
  CHECK(loaded.config() == m.config());
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10; ++i) {
    const TokenSequence t = tok(testing::random_text(rng, 5 + rng() % 30));
    CHECK(logits_of(m, t) == logits_of(loaded, t));
  }
}

TEST_CASE("weight file corruption is reported with offsets") {
  const auto dir = testing::scratch_dir("weights_bad");
  save_model(Model::init(testing::toy_config(12)), dir / "ok.nsl");
  const std::string good = testing::read_text(dir / "ok.nsl");
  auto expect_format_error = [&](const std::string& bytes, const std::string& needle) {
    testing::write_text(dir / "bad.nsl", bytes);
    try {
      load_model(dir / "bad.nsl");
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      INFO(e.what());
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  std::string magic = good;
  magic[0] = 'X';
  expect_format_error(magic, "magic");
  expect_format_error(good.substr(0, 6), "offset");
  expect_format_error(good.substr(0, good.size() - 8), "offset");
  expect_format_error(good + "pad!", "offset");
}

TEST_CASE("golden logits for the seed-1 toy model") {
  ModelConfig cfg;  // seed 1, d_model 64, 4 layers, d_ff 256
  const Model m = Model::init(cfg);
  const TokenSequence t = tok("golden prompt: abc xyz");
  const auto fr = m.forward(t);
  const std::filesystem::path path = std::filesystem::path(LANGSTEER_TEST_DATA) / "golden_logits.json";
  if (std::getenv("LANGSTEER_REGENERATE_GOLDEN") != nullptr) {
    nlohmann::json j = {{"prompt", "golden prompt: abc xyz"}, {"config", config_to_json(cfg)}, {"logits", fr.logits}};
    testing::write_text(path, j.dump() + "\n");
  }
  REQUIRE(std::filesystem::exists(path));
  const auto j = nlohmann::json::parse(testing::read_text(path));
  const auto expected = j.at("logits").get<std::vector<float>>();
  REQUIRE(expected.size() == fr.logits.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < expected.size(); ++i) worst = std::max(worst, std::fabs(double(expected[i]) - fr.logits[i]));
  CHECK(worst < 1e-5);
}

TEST_CASE("synthetic bilingual model construction") {
  const ModelConfig cfg = synthetic::default_config();
  const Model m = build_synthetic_bilingual_model(cfg, 3.0f);

  SUBCASE("language neurons fire on their own alphabet only") {
    const auto fr = m.forward(tok("a"), {nullptr, nullptr, true});
    CHECK(fr.capture->at(synthetic::kNeuronA, 1) > 0.0f);
    CHECK(fr.capture->at(synthetic::kNeuronB, 1) == 0.0f);
    for (char c = 'a'; c <= 'z'; ++c) {
      const auto f2 = m.forward(tok(std::string(1, c)), {nullptr, nullptr, true});
      const bool in_a = c <= 'm';
      CHECK((f2.capture->at(synthetic::kNeuronA, 1) > 0.0f) == in_a);
      CHECK((f2.capture->at(synthetic::kNeuronB, 1) > 0.0f) == !in_a);
      CHECK(f2.capture->at(in_a ? synthetic::kNeuronB : synthetic::kNeuronA, 1) == 0.0f);
    }
  }

  SUBCASE("zeroing N_A on an A prompt equalises A and B letter logits") {
    const SteeringPlan plan(FactorKind::eq_zero, "aa", {synthetic::kNeuronA}, {{synthetic::kNeuronA, 0.0f}});
    const auto fr = m.forward(tok("abc"), {&plan, nullptr, false});
    const auto row = fr.logits_at(3);
    for (int i = 0; i < 13; ++i) CHECK(row[byte_token('a' + i)] == row[byte_token('n' + i)]);
    const auto clean = m.forward(tok("abc")).logits_at(3);
    CHECK(clean[byte_token('a')] > clean[byte_token('n')]);
  }

  SUBCASE("raising N_B strictly raises the B-vs-A gap") {
    const TokenSequence prompt = tok("abc def");
    double prev = -INFINITY;
    for (float v : {1.0f, 2.0f, 4.0f, 8.0f}) {
      const SteeringPlan plan(FactorKind::pmax, "bb", {synthetic::kNeuronB}, {{synthetic::kNeuronB, v}});
      const double delta = sequence_logprob(m, prompt, encode_bytes("n"), &plan) -
                           sequence_logprob(m, prompt, encode_bytes("a"), &plan);
      CHECK(delta > prev);
      prev = delta;
    }
  }

  SUBCASE("amplifying N_B raises B-alphabet logit mass at every position") {
    const TokenSequence t = tok("hello abc jim");
    const SteeringPlan plan(FactorKind::pmax, "bb", {synthetic::kNeuronB}, {{synthetic::kNeuronB, 2.0f}});
    const auto clean = m.forward(t);
    const auto steered = m.forward(t, {&plan, nullptr, false});
    std::vector<float> a(clean.vocab_size), b(clean.vocab_size);
    for (std::size_t p = 0; p < t.size(); ++p) {
      log_softmax(clean.logits_at(p), a);
      log_softmax(steered.logits_at(p), b);
      double ma = 0, mb = 0;
      for (char c = 'n'; c <= 'z'; ++c) {
        ma += std::exp(a[byte_token(c)]);
        mb += std::exp(b[byte_token(c)]);
      }
      CHECK(mb > ma);
    }
  }

  SUBCASE("invalid requests") {
    ModelConfig g = cfg;
    g.ffn_kind = FfnKind::gelu;
    CHECK_THROWS_AS(build_synthetic_bilingual_model(g, 3.0f), ConfigError);
    CHECK_THROWS_AS(build_synthetic_bilingual_model(cfg, 0.0f), ConfigError);
    ModelConfig small = cfg;
    small.d_model = 8;
    small.n_heads = 2;
    CHECK_THROWS_AS(build_synthetic_bilingual_model(small, 3.0f), ConfigError);
  }
}
