#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "langsteer/error.hpp"
#include "langsteer/eval.hpp"
#include "langsteer/synthetic_data.hpp"
#include "support.hpp"

using namespace langsteer;

namespace {

// Every hidden state points along dim 0, and only EOS reads it.
Model eos_model() {
  ModelConfig cfg = testing::toy_config();
  auto tensors = Model::tensor_layout(cfg);
  for (auto& t : tensors) {
    if (t.shape.size() == 1) std::fill(t.data.begin(), t.data.end(), 1.0f);
    if (t.name == "tok_embedding") {
      for (int tok = 0; tok < cfg.vocab_size; ++tok) t.data[static_cast<std::size_t>(tok * cfg.d_model)] = 1.0f;
    }
    if (t.name == "lm_head") t.data[static_cast<std::size_t>(kEos * cfg.d_model)] = 1.0f;
  }
  return Model::from_tensors(cfg, std::move(tensors));
}

struct Synthetic {
  Model model = build_synthetic_bilingual_model(synthetic::default_config(), 3.0f);
  LanguageProfile pa, pb;
  Synthetic() {
    pa = accumulate_profile(model, synthetic::make_corpus(synthetic::Alphabet::a, 80, 1), false);
    pb = accumulate_profile(model, synthetic::make_corpus(synthetic::Alphabet::b, 80, 2), false);
  }
  SteeringPlan pmax(const LanguageProfile& p, NeuronId id) const {
    const std::vector<NeuronId> ids = {id};
    return make_plan(FactorKind::pmax, p, ids);
  }
};

}  // namespace

TEST_CASE("perplexity of a uniform model equals the vocabulary size") {
  const Model z = testing::zero_logit_model(testing::toy_config());
  const Corpus c{"aa", {{"1", "some text"}, {"2", "more text here"}}};
  CHECK(std::fabs(perplexity(z, c) - 259.0) < 1e-3);
}

TEST_CASE("perplexity invariants and errors") {
  const Model m = Model::init(testing::toy_config(51));
  std::mt19937_64 rng(2);
  Corpus c{"aa", {}};
  for (int i = 0; i < 12; ++i) c.sentences.push_back({std::to_string(i), testing::random_text(rng, 5 + i)});
  const double base = perplexity(m, c);
  const SteeringPlan empty(FactorKind::pmax, "aa", {}, {});
  CHECK(perplexity(m, c, &empty) == base);
  Corpus rev = c;
  std::reverse(rev.sentences.begin(), rev.sentences.end());
  CHECK(perplexity(m, rev) == doctest::Approx(base).epsilon(1e-12));
  CHECK(perplexity(m, c, nullptr, 3) == base);
  const Corpus too_long{"aa", {{"1", std::string(100, 'a')}}};
  CHECK_THROWS_AS(perplexity(m, too_long), ContractError);
}

TEST_CASE("synthetic perplexity sign pattern") {
  const Synthetic s;
  const Corpus a = synthetic::make_corpus(synthetic::Alphabet::a, 40, 77);
  const double clean = perplexity(s.model, a);
  const SteeringPlan self = s.pmax(s.pa, synthetic::kNeuronA);
  const SteeringPlan cross = s.pmax(s.pb, synthetic::kNeuronB);
  CHECK(perplexity(s.model, a, &self) <= clean);
  CHECK(perplexity(s.model, a, &cross) > clean);
}

TEST_CASE("multiple choice scoring") {
  const Synthetic s;
  SUBCASE("constructed certainty") {
    const McItem item{"1", "aa", "abc", {"d", "q"}, 0};
    CHECK(mc_predict(s.model, item) == 0);
    const std::vector<McItem> items = {item};
    CHECK(mc_accuracy(s.model, items) == 1.0);
  }
  SUBCASE("identical options tie to index zero") {
    const McItem item{"1", "aa", "abc", {"xy", "xy", "xy"}, 2};
    CHECK(mc_predict(s.model, item) == 0);
  }
  SUBCASE("malformed items") {
    CHECK_THROWS_AS(mc_predict(s.model, McItem{"1", "aa", "abc", {"x"}, 0}), DataError);
    CHECK_THROWS_AS(mc_predict(s.model, McItem{"1", "aa", "abc", {"x", "y"}, 2}), DataError);
    CHECK_THROWS_AS(mc_accuracy(s.model, std::vector<McItem>{}), ContractError);
  }
  SUBCASE("cross-language amplification hurts A items; order and rotation do not matter") {
    std::vector<McItem> a_items;
    for (auto& it : synthetic::make_mc_items(100, 5)) {
      if (it.lang == "aa") a_items.push_back(it);
    }
    REQUIRE(a_items.size() == 100);
    const SteeringPlan cross = s.pmax(s.pb, synthetic::kNeuronB);
    const double clean = mc_accuracy(s.model, a_items);
    CHECK(mc_accuracy(s.model, a_items, &cross) - clean < 0.0);

    auto rotated = a_items;
    for (auto& it : rotated) {
      std::rotate(it.options.begin(), it.options.begin() + 1, it.options.end());
      it.label = (it.label + static_cast<int>(it.options.size()) - 1) % static_cast<int>(it.options.size());
    }
    std::reverse(rotated.begin(), rotated.end());
    const SteeringPlan self = s.pmax(s.pa, synthetic::kNeuronA);
    CHECK(mc_accuracy(s.model, rotated, &self) == mc_accuracy(s.model, a_items, &self));
  }
}

TEST_CASE("delta matrix aggregation") {
  const std::vector<std::string> langs = {"aa", "bb"};
  SUBCASE("hand-set 2x2") {
    const std::map<std::string, double> base = {{"aa", 0.5}, {"bb", 0.25}};
    const std::map<std::pair<std::string, std::string>, double> inter = {
        {{"aa", "aa"}, 1.5}, {{"aa", "bb"}, -0.5}, {{"bb", "aa"}, -1.75}, {{"bb", "bb"}, 3.25}};
    const DeltaMatrix d = delta_matrix(langs, base, inter);
    CHECK(d.values == std::vector<std::vector<double>>{{1.0, -1.0}, {-2.0, 3.0}});
    CHECK(d.diagonal_mean == 2.0);
    CHECK(d.offdiagonal_mean == -1.5);
  }
  SUBCASE("no change gives zeros") {
    const std::map<std::string, double> base = {{"aa", 0.3}, {"bb", 0.7}};
    const std::map<std::pair<std::string, std::string>, double> inter = {
        {{"aa", "aa"}, 0.3}, {{"aa", "bb"}, 0.3}, {{"bb", "aa"}, 0.7}, {{"bb", "bb"}, 0.7}};
    const DeltaMatrix d = delta_matrix(langs, base, inter);
    CHECK(d.diagonal_mean == 0.0);
    CHECK(d.offdiagonal_mean == 0.0);
  }
  SUBCASE("gaps are listed") {
    const std::map<std::string, double> base = {{"aa", 0.3}};
    const std::map<std::pair<std::string, std::string>, double> inter = {{{"aa", "aa"}, 0.3}};
    try {
      delta_matrix(langs, base, inter);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("baseline bb") != std::string::npos);
      CHECK(msg.find("(aa, bb)") != std::string::npos);
      CHECK(msg.find("(bb, bb)") != std::string::npos);
    }
  }
}

TEST_CASE("greedy generation") {
  CHECK(greedy_generate(eos_model(), "hello", nullptr, 1).empty());
  const Synthetic s;
  const std::string once = greedy_generate(s.model, "abc def", nullptr, 12);
  CHECK(once == greedy_generate(s.model, "abc def", nullptr, 12));
  CHECK_THROWS_AS(greedy_generate(s.model, "abc", nullptr, 0), ContractError);

  const Model strong = build_synthetic_bilingual_model(synthetic::default_config(), 6.0f);
  const SteeringPlan amp(FactorKind::pmax, "bb", {synthetic::kNeuronB}, {{synthetic::kNeuronB, 5.0f}});
  const std::string out = greedy_generate(strong, "abc def gab", &amp, 16);
  int in_a = 0, in_b = 0;
  for (unsigned char c : out) {
    in_a += synthetic::in_alphabet_a(c) ? 1 : 0;
    in_b += synthetic::in_alphabet_b(c) ? 1 : 0;
  }
  INFO(out);
  CHECK(in_b > 2 * in_a);
  CHECK(in_b > 0);
}

TEST_CASE("BLEU basics") {
  const std::vector<std::string> h = {"the quick brown fox jumps"};
  CHECK(bleu(h, h) == 1.0);
  CHECK(bleu(std::vector<std::string>{""}, h) == 0.0);
  CHECK_THROWS_AS(bleu(h, std::vector<std::string>{}), ContractError);
  CHECK_THROWS_AS(bleu(h, std::vector<std::string>{""}), ContractError);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> xs;
    for (int s = 0; s < 3; ++s) {
      std::string line;
      const int words = 4 + static_cast<int>(rng() % 8);
      for (int w = 0; w < words; ++w) line += (w ? " " : "") + std::to_string(rng() % 5);
      xs.push_back(line);
    }
    CHECK(bleu(xs, xs) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("BLEU matches the hand-worked five-pair fixture") {
  const auto j = nlohmann::json::parse(
      testing::read_text(std::filesystem::path(LANGSTEER_TEST_DATA) / "bleu_fixture.json"));
  std::vector<std::string> hyps, refs;
  for (const auto& p : j.at("pairs")) {
    hyps.push_back(p.at("hyp").get<std::string>());
    refs.push_back(p.at("ref").get<std::string>());
  }
  const BleuStats st = bleu_stats(hyps, refs);
  const auto& counts = j.at("counts");
  for (int n = 0; n < 4; ++n) {
    CHECK(st.matches[n] == counts.at("matches")[n].get<std::size_t>());
    CHECK(st.totals[n] == counts.at("totals")[n].get<std::size_t>());
  }
  CHECK(st.hyp_len == counts.at("hyp_len").get<std::size_t>());
  CHECK(st.ref_len == counts.at("ref_len").get<std::size_t>());
  const double expected = std::exp(-0.05) * std::pow(6.0 / 35.0, 0.25);
  CHECK(std::fabs(bleu(hyps, refs) - expected) < 1e-9);
}

TEST_CASE("dataset loaders") {
  const auto dir = testing::scratch_dir("eval_loaders");
  testing::write_text(dir / "mc.jsonl",
                      "{\"id\":\"1\",\"lang\":\"aa\",\"prompt\":\"p\",\"options\":[\"x\",\"y\"],\"label\":1}\n");
  const auto items = load_mc_items(dir / "mc.jsonl");
  REQUIRE(items.size() == 1);
  CHECK(items[0].label == 1);
  testing::write_text(dir / "bad_mc.jsonl",
                      "{\"id\":\"1\",\"lang\":\"aa\",\"prompt\":\"p\",\"options\":[\"x\",\"y\"],\"label\":5}\n");
  CHECK_THROWS_AS(load_mc_items(dir / "bad_mc.jsonl"), DataError);
  testing::write_text(dir / "tr.jsonl", "{\"id\":\"1\",\"src\":\"abc\",\"ref\":\"nop\"}\n{\"id\":\"2\"}\n");
  try {
    load_translation_pairs(dir / "tr.jsonl");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}
