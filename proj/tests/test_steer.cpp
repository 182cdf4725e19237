#include <doctest.h>

#include <algorithm>
#include <random>

#include "langsteer/corpus.hpp"
#include "langsteer/error.hpp"
#include "langsteer/steer.hpp"
#include "langsteer/synthetic_data.hpp"
#include "langsteer/util.hpp"
#include "support.hpp"

using namespace langsteer;

namespace {

LanguageProfile with_means(std::vector<double> means) {
  LanguageProfile p("aa", 1, 1, true);
  p.sentences_seen = means.size();
  p.sentence_means[0] = std::move(means);
  return p;
}

double sorted_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double rank = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(rank);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

TEST_CASE("factor names and aliases") {
  for (FactorKind k : kAllFactors) CHECK(parse_factor_kind(to_string(k)) == k);
  CHECK(parse_factor_kind("=max") == FactorKind::eq_max);
  CHECK(parse_factor_kind("+max") == FactorKind::plus_max);
  CHECK(parse_factor_kind("=0") == FactorKind::eq_zero);
  CHECK(parse_factor_kind("=10p") == FactorKind::eq_10p);
  CHECK_THROWS_AS(parse_factor_kind("max"), ConfigError);
}

TEST_CASE("patched factors") {
  const auto p = with_means({0.1, 0.9, 0.5});
  const std::vector<NeuronId> ids = {{0, 0}};
  CHECK(compute_patched_factors(p, ids, Aggregate::max).at({0, 0}) == 0.9);
  CHECK(compute_patched_factors(p, ids, Aggregate::median).at({0, 0}) == 0.5);
  CHECK(compute_patched_factors(p, ids, Aggregate::mean).at({0, 0}) == doctest::Approx(0.5));
  CHECK(compute_patched_factors(with_means({1, 2, 3, 10}), ids, Aggregate::median).at({0, 0}) == 2.5);
  CHECK_THROWS_AS(compute_patched_factors(with_means({}), ids, Aggregate::max), DataError);
}

TEST_CASE("patched factors match sort and fold references") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<double> v(101);
  for (auto& x : v) x = g(rng);
  const auto p = with_means(v);
  const std::vector<NeuronId> ids = {{0, 0}};
  auto s = v;
  std::sort(s.begin(), s.end());
  CHECK(compute_patched_factors(p, ids, Aggregate::median).at({0, 0}) == s[50]);
  double mx = v[0];
  for (double x : v) mx = x > mx ? x : mx;
  CHECK(compute_patched_factors(p, ids, Aggregate::max).at({0, 0}) == mx);
}

TEST_CASE("percentile value of stored token activations") {
  LanguageProfile p("aa", 1, 1, true);
  for (int i = 0; i <= 100; ++i) p.token_values[0].push_back(static_cast<float>(i));
  CHECK(compute_percentile_value(p, {0, 0}, 10.0) == 10.0);
  LanguageProfile single("aa", 1, 1, true);
  single.token_values[0] = {0.25f};
  for (double q : {0.0, 10.0, 50.0, 100.0}) CHECK(compute_percentile_value(single, {0, 0}, q) == 0.25);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  LanguageProfile r("aa", 1, 1, true);
  for (int i = 0; i < 1000; ++i) r.token_values[0].push_back(u(rng));
  const std::vector<double> as_double(r.token_values[0].begin(), r.token_values[0].end());
  for (double q : {1.0, 10.0, 37.5, 90.0}) {
    CHECK(std::fabs(compute_percentile_value(r, {0, 0}, q) - sorted_percentile(as_double, q)) < 1e-9);
  }
  LanguageProfile none("aa", 1, 1, false);
  CHECK_THROWS_AS(compute_percentile_value(none, {0, 0}, 10.0), DataError);
}

TEST_CASE("apply_steering rules and locality") {
  const std::vector<float> base = {0.5f, -1.0f, 2.0f, 0.25f};
  auto run = [&](const SteeringPlan& plan, const TestTimeContext* ctx) {
    std::vector<float> a = base;
    apply_steering(plan, ctx, 0, a);
    return a;
  };
  const SteeringPlan zero(FactorKind::eq_zero, "aa", {{0, 2}}, {{{0, 2}, 0.0f}});
  auto out = run(zero, nullptr);
  CHECK(out[2] == 0.0f);
  CHECK(out[0] == base[0]);
  CHECK(out[1] == base[1]);
  CHECK(out[3] == base[3]);
  std::vector<float> twice = out;
  apply_steering(zero, nullptr, 0, twice);
  CHECK(twice == out);

  const SteeringPlan fixed(FactorKind::pmax, "aa", {{0, 1}}, {{{0, 1}, 3.5f}});
  CHECK(run(fixed, nullptr)[1] == 3.5f);

  const TestTimeContext ctx(std::map<NeuronId, float>{{{0, 3}, 0.75f}});
  const SteeringPlan eq(FactorKind::eq_max, "aa", {{0, 3}});
  const SteeringPlan plus(FactorKind::plus_max, "aa", {{0, 3}});
  CHECK(run(eq, &ctx)[3] == 0.75f);
  CHECK(run(plus, &ctx)[3] == 0.25f + 0.75f);
  CHECK_THROWS_AS(run(eq, nullptr), ContractError);

  // other layers untouched
  std::vector<float> a = base;
  apply_steering(zero, nullptr, 1, a);
  CHECK(a == base);
}

TEST_CASE("layer masks") {
  const SteeringPlan plan(FactorKind::eq_zero, "aa", {{0, 0}, {1, 0}}, {{{0, 0}, 0.0f}, {{1, 0}, 0.0f}});
  const auto only1 = plan.with_layer_mask(std::vector<int>{1});
  CHECK(only1.targets_in_layer(0).empty());
  CHECK(only1.targets_in_layer(1).size() == 1);
  const auto none = plan.with_layer_mask(std::vector<int>{});
  const Model m = Model::init(testing::toy_config(31));
  const auto t = tokenize("mask test", 48);
  CHECK(m.forward(t).logits == m.forward(t, {&none, nullptr, false}).logits);
  CHECK(m.forward(t).logits != m.forward(t, {&plan, nullptr, false}).logits);
}

TEST_CASE("plan construction contracts") {
  CHECK_THROWS_AS(SteeringPlan(FactorKind::pmax, "aa", {{0, 0}}, {}), ContractError);
  CHECK_THROWS_AS(SteeringPlan(FactorKind::pmax, "aa", {{0, 0}}, {{{0, 1}, 1.0f}}), ContractError);
  CHECK_THROWS_AS(SteeringPlan(FactorKind::eq_max, "aa", {{0, 0}}, {{{0, 0}, 1.0f}}), ContractError);
  CHECK_THROWS_AS(SteeringPlan(FactorKind::eq_zero, "aa", {{-1, 0}}, {{{-1, 0}, 0.0f}}), AddressingError);
}

TEST_CASE("plus_max doubles the activation where the sentence max occurs") {
  const Model m = Model::init(testing::toy_config(32));
  const auto t = tokenize("doubling at the argmax", 48);
  const NeuronId id{0, 7};
  const auto clean = m.forward(t, {nullptr, nullptr, true});
  std::size_t arg = 1;
  for (std::size_t p = 1; p < t.size(); ++p) {
    if (clean.capture->at(id, p) > clean.capture->at(id, arg)) arg = p;
  }
  const float vstar = clean.capture->at(id, arg);
  const SteeringPlan plan(FactorKind::plus_max, "aa", {id});
  const auto ctx = build_test_time_context(m, t, plan);
  CHECK(ctx.steer(id) == vstar);
  const auto steered = m.forward(t, {&plan, &ctx, true});
  CHECK(steered.capture->at(id, arg) == 2.0f * vstar);
  CHECK_THROWS_AS(m.forward(t, {&plan, nullptr, false}), ContractError);
}

TEST_CASE("test-time context follows the sentence") {
  const Model m = build_synthetic_bilingual_model(synthetic::default_config(), 3.0f);
  const SteeringPlan plan(FactorKind::eq_max, "bb", {synthetic::kNeuronB});
  const auto with_b = build_test_time_context(m, tokenize("abc nop", 128), plan);
  const auto without_b = build_test_time_context(m, tokenize("abc def", 128), plan);
  CHECK(with_b.steer(synthetic::kNeuronB) > 0.0f);
  CHECK(without_b.steer(synthetic::kNeuronB) == 0.0f);
}

TEST_CASE("pmax plan from the B profile pins N_B at every position") {
  const Model m = build_synthetic_bilingual_model(synthetic::default_config(), 3.0f);
  const Corpus corpus = synthetic::make_corpus(synthetic::Alphabet::b, 30, 5);
  const LanguageProfile prof = accumulate_profile(m, corpus, true);
  const std::vector<NeuronId> ids = {synthetic::kNeuronB};
  for (FactorKind k : {FactorKind::pmax, FactorKind::pmedian, FactorKind::eq_10p, FactorKind::eq_zero}) {
    const SteeringPlan plan = make_plan(k, prof, ids);
    const float v = plan.fixed_values().at(synthetic::kNeuronB);
    const auto fr = m.forward(tokenize("abc xyz abc", 128), {&plan, nullptr, true});
    for (std::size_t p = 0; p < fr.seq_len; ++p) CHECK(fr.capture->at(synthetic::kNeuronB, p) == v);
  }
  CHECK(make_plan(FactorKind::pmax, prof, ids).fixed_values().at(synthetic::kNeuronB) >
        make_plan(FactorKind::eq_10p, prof, ids).fixed_values().at(synthetic::kNeuronB));
}

TEST_CASE("plan JSON round trip") {
  const SteeringPlan plan(FactorKind::pmedian, "bb", {{1, 2}, {0, 3}}, {{{1, 2}, 0.5f}, {{0, 3}, -0.125f}},
                          std::vector<int>{1});
  const SteeringPlan back = plan_from_json(nlohmann::json::parse(plan_to_json(plan).dump()));
  CHECK(back.kind() == plan.kind());
  CHECK(back.language() == "bb");
  CHECK(back.neurons() == plan.neurons());
  CHECK(back.fixed_values() == plan.fixed_values());
  CHECK(back.layer_mask() == plan.layer_mask());
  const SteeringPlan tt(FactorKind::plus_max, "aa", {{0, 1}});
  CHECK(plan_from_json(plan_to_json(tt)).kind() == FactorKind::plus_max);
}
