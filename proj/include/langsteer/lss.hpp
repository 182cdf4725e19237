#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "langsteer/model.hpp"
#include "langsteer/steer.hpp"

namespace langsteer {

/// Cloze prompt plus same-meaning answers keyed by language.
struct ProbeItem {
  std::string id;
  std::string prompt_lang;
  std::string prompt;
  std::map<std::string, std::string> answers;
};

struct ProbeSet {
  std::vector<ProbeItem> items;
  std::size_t dropped = 0;  // items removed because two languages shared an answer
};

/// Reads {"id","prompt_lang","prompt","answers":{lang: text}} JSONL, keeps items
/// whose prompt language is in `languages`, restricts answers to `languages`,
/// and drops any item in which two answers coincide.
ProbeSet load_probes(const std::filesystem::path& path, std::span<const std::string> languages);

/// One item's gap log p(ans_target) - log p(ans_source) without and with the intervention.
struct DeltaPair {
  double clean = 0.0;
  double intervened = 0.0;
};

struct LssResult {
  std::string source_lang;
  std::string target_lang;
  std::optional<FactorKind> kind;
  std::size_t n_items = 0;
  std::size_t n_shifted = 0;
  double score = 0.0;
  std::vector<DeltaPair> pairs;
};

double delta_from_logprobs(double logp_target, double logp_source);

/// Fraction of pairs with intervened - clean strictly positive.
double lss_from_pairs(std::span<const DeltaPair> pairs);

/// Test-time plans derive their context from the prompt's clean forward.
double answer_delta(const Model& model, const ProbeItem& item, const std::string& source,
                    const std::string& target, const SteeringPlan* plan = nullptr);

LssResult lss_score(const Model& model, std::span<const ProbeItem> items, const std::string& source,
                    const std::string& target, const SteeringPlan& plan, int threads = 1);

}  // namespace langsteer
