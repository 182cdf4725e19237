#include "langsteer/lss.hpp"

#include <algorithm>
#include <set>

#include "langsteer/error.hpp"
#include "langsteer/util.hpp"

namespace langsteer {

ProbeSet load_probes(const std::filesystem::path& path, std::span<const std::string> languages) {
  const std::set<std::string> wanted(languages.begin(), languages.end());
  ProbeSet out;
  for_each_jsonl(path, [&](std::size_t line, const nlohmann::json& row) {
    ProbeItem item;
    try {
      item.id = row.at("id").get<std::string>();
      item.prompt_lang = row.at("prompt_lang").get<std::string>();
      item.prompt = row.at("prompt").get<std::string>();
      for (const auto& [lang, text] : row.at("answers").items()) {
        if (wanted.contains(lang)) item.answers[lang] = text.get<std::string>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line, std::string("probe row: ") + e.what());
    }
    if (!wanted.contains(item.prompt_lang)) return;
    if (!item.answers.contains(item.prompt_lang)) {
      throw ParseError(line, "probe '" + item.id + "' has no answer in its prompt language");
    }
    std::set<std::string> distinct;
    for (const auto& [lang, text] : item.answers) distinct.insert(text);
    if (distinct.size() != item.answers.size()) {
      ++out.dropped;
      return;
    }
    out.items.push_back(std::move(item));
  });
  return out;
}

double delta_from_logprobs(double logp_target, double logp_source) { return logp_target - logp_source; }

double lss_from_pairs(std::span<const DeltaPair> pairs) {
  if (pairs.empty()) throw ContractError("LSS needs at least one item");
  std::size_t shifted = 0;
  for (const auto& p : pairs) {
    if (p.intervened - p.clean > 0.0) ++shifted;
  }
  return static_cast<double>(shifted) / static_cast<double>(pairs.size());
}

double answer_delta(const Model& model, const ProbeItem& item, const std::string& source, const std::string& target,
                    const SteeringPlan* plan) {
  if (source == target) throw ContractError("answer_delta needs distinct source and target languages");
  auto src = item.answers.find(source);
  auto tgt = item.answers.find(target);
  if (src == item.answers.end() || tgt == item.answers.end()) {
    throw DataError("probe '" + item.id + "' lacks an answer for '" + (src == item.answers.end() ? source : target) +
                    "'");
  }
  const auto max_len = static_cast<std::size_t>(model.config().max_seq_len);
  const TokenSequence prompt = tokenize(item.prompt, max_len);
  const TokenSequence ans_src = encode_bytes(src->second);
  const TokenSequence ans_tgt = encode_bytes(tgt->second);
  std::optional<TestTimeContext> context;
  if (plan != nullptr && plan->requires_context() && !plan->empty()) {
    context = build_test_time_context(model, prompt, *plan);
  }
  const TestTimeContext* ctx = context ? &*context : nullptr;
  const double lp_tgt = sequence_logprob(model, prompt, ans_tgt, plan, ctx);
  const double lp_src = sequence_logprob(model, prompt, ans_src, plan, ctx);
  return delta_from_logprobs(lp_tgt, lp_src);
}

LssResult lss_score(const Model& model, std::span<const ProbeItem> items, const std::string& source,
                    const std::string& target, const SteeringPlan& plan, int threads) {
  if (items.empty()) throw ContractError("lss_score needs a non-empty item list");
  for (const auto& item : items) {
    if (item.prompt_lang != source) {
      throw ContractError("probe '" + item.id + "' has prompt language '" + item.prompt_lang + "', expected '" +
                          source + "'");
    }
  }
  LssResult result;
  result.source_lang = source;
  result.target_lang = target;
  result.kind = plan.kind();
  result.n_items = items.size();
  result.pairs.resize(items.size());
  parallel_for(items.size(), threads, [&](std::size_t i) {
    result.pairs[i].clean = answer_delta(model, items[i], source, target, nullptr);
    result.pairs[i].intervened = answer_delta(model, items[i], source, target, &plan);
  });
  result.score = lss_from_pairs(result.pairs);
  result.n_shifted = static_cast<std::size_t>(std::count_if(
      result.pairs.begin(), result.pairs.end(), [](const DeltaPair& p) { return p.intervened - p.clean > 0.0; }));
  return result;
}

}  // namespace langsteer
