#include "langsteer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "langsteer/error.hpp"
#include "langsteer/util.hpp"

namespace langsteer {
namespace {

std::vector<std::string> whitespace_tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++counts[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                      toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

std::optional<TestTimeContext> context_for(const Model& model, const TokenSequence& tokens, const SteeringPlan* plan) {
  if (plan == nullptr || plan->empty() || !plan->requires_context()) return std::nullopt;
  return build_test_time_context(model, tokens, *plan);
}

}  // namespace

std::vector<McItem> load_mc_items(const std::filesystem::path& path) {
  std::vector<McItem> items;
  for_each_jsonl(path, [&](std::size_t line, const nlohmann::json& row) {
    McItem item;
    try {
      item.id = row.at("id").get<std::string>();
      item.lang = row.at("lang").get<std::string>();
      item.prompt = row.at("prompt").get<std::string>();
      item.options = row.at("options").get<std::vector<std::string>>();
      item.label = row.at("label").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line, std::string("multiple-choice row: ") + e.what());
    }
    if (item.options.size() < 2) throw DataError("item '" + item.id + "' needs at least two options");
    if (item.label < 0 || static_cast<std::size_t>(item.label) >= item.options.size()) {
      throw DataError("item '" + item.id + "' has label outside its option list");
    }
    items.push_back(std::move(item));
  });
  return items;
}

std::vector<TranslationPair> load_translation_pairs(const std::filesystem::path& path) {
  std::vector<TranslationPair> pairs;
  for_each_jsonl(path, [&](std::size_t line, const nlohmann::json& row) {
    try {
      pairs.push_back({row.at("id").get<std::string>(), row.at("src").get<std::string>(),
                       row.at("ref").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line, std::string("translation row: ") + e.what());
    }
  });
  return pairs;
}

double perplexity(const Model& model, const Corpus& corpus, const SteeringPlan* plan, int threads) {
  const auto max_len = static_cast<std::size_t>(model.config().max_seq_len);
  const std::size_t n = corpus.sentences.size();
  std::vector<double> nll(n, 0.0);
  std::vector<std::size_t> scored(n, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    TokenSequence tokens;
    try {
      tokens = tokenize(corpus.sentences[i].text, max_len);
    } catch (const LengthError&) {
      return;
    }
    if (tokens.size() < 2) return;
    const auto context = context_for(model, tokens, plan);
    const ForwardResult fr = model.forward(tokens, {plan, context ? &*context : nullptr, false});
    std::vector<float> lp(fr.vocab_size);
    for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
      log_softmax(fr.logits_at(t), lp);
      nll[i] -= static_cast<double>(lp[static_cast<std::size_t>(tokens[t + 1])]);
    }
    scored[i] = tokens.size() - 1;
  });
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += nll[i];
    count += scored[i];
  }
  if (count == 0) throw ContractError("perplexity: no scorable tokens after length filtering");
  return std::exp(total / static_cast<double>(count));
}

int mc_predict(const Model& model, const McItem& item, const SteeringPlan* plan) {
  if (item.options.size() < 2 || item.label < 0 || static_cast<std::size_t>(item.label) >= item.options.size()) {
    throw DataError("malformed multiple-choice item '" + item.id + "'");
  }
  const TokenSequence prompt = tokenize(item.prompt, static_cast<std::size_t>(model.config().max_seq_len));
  const auto context = context_for(model, prompt, plan);
  int best = 0;
  double best_score = 0.0;
  for (std::size_t o = 0; o < item.options.size(); ++o) {
    const TokenSequence cont = encode_bytes(item.options[o]);
    if (cont.empty()) throw DataError("item '" + item.id + "' has an empty option");
    const double s = sequence_logprob(model, prompt, cont, plan, context ? &*context : nullptr);
    if (o == 0 || s > best_score) {
      best = static_cast<int>(o);
      best_score = s;
    }
  }
  return best;
}

double mc_accuracy(const Model& model, std::span<const McItem> items, const SteeringPlan* plan, int threads) {
  if (items.empty()) throw ContractError("mc_accuracy needs at least one item");
  std::vector<int> correct(items.size(), 0);
  parallel_for(items.size(), threads,
               [&](std::size_t i) { correct[i] = mc_predict(model, items[i], plan) == items[i].label ? 1 : 0; });
  std::size_t hits = 0;
  for (int c : correct) hits += static_cast<std::size_t>(c);
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

DeltaMatrix delta_matrix(std::span<const std::string> languages, const std::map<std::string, double>& baseline,
                         const std::map<std::pair<std::string, std::string>, double>& intervened) {
  std::vector<std::string> gaps;
  for (const auto& row : languages) {
    if (!baseline.contains(row)) gaps.push_back("baseline " + row);
    for (const auto& col : languages) {
      if (!intervened.contains({row, col})) gaps.push_back("(" + row + ", " + col + ")");
    }
  }
  if (!gaps.empty()) {
    std::string msg = "delta matrix incomplete, missing:";
    for (const auto& g : gaps) msg += " " + g;
    throw DataError(msg);
  }
  DeltaMatrix m;
  m.languages.assign(languages.begin(), languages.end());
  const std::size_t n = languages.size();
  m.values.assign(n, std::vector<double>(n, 0.0));
  double diag = 0.0;
  double off = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = intervened.at({languages[i], languages[j]}) - baseline.at(languages[i]);
      m.values[i][j] = v;
      (i == j ? diag : off) += v;
    }
  }
  m.diagonal_mean = n == 0 ? 0.0 : diag / static_cast<double>(n);
  m.offdiagonal_mean = n < 2 ? 0.0 : off / static_cast<double>(n * (n - 1));
  return m;
}

std::string greedy_generate(const Model& model, const std::string& prompt, const SteeringPlan* plan,
                            int max_new_tokens) {
  if (max_new_tokens < 1) throw ContractError("max_new_tokens must be >= 1");
  const auto max_len = static_cast<std::size_t>(model.config().max_seq_len);
  TokenSequence tokens = tokenize(prompt, max_len);
  const auto context = context_for(model, tokens, plan);
  TokenSequence generated;
  for (int step = 0; step < max_new_tokens && tokens.size() < max_len; ++step) {
    const ForwardResult fr = model.forward(tokens, {plan, context ? &*context : nullptr, false});
    const auto row = fr.logits_at(tokens.size() - 1);
    const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == kEos) break;
    tokens.push_back(best);
    generated.push_back(best);
  }
  return detokenize(generated);
}

BleuStats bleu_stats(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  if (hypotheses.size() != references.size()) {
    throw ContractError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                        std::to_string(references.size()) + " references");
  }
  BleuStats stats;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = whitespace_tokens(hypotheses[s]);
    const auto ref = whitespace_tokens(references[s]);
    if (ref.empty()) throw ContractError("bleu: reference " + std::to_string(s) + " is empty");
    stats.hyp_len += hyp.size();
    stats.ref_len += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = ngram_counts(hyp, n);
      const auto r = ngram_counts(ref, n);
      for (const auto& [gram, count] : h) {
        auto it = r.find(gram);
        if (it != r.end()) stats.matches[n - 1] += std::min(count, it->second);
        stats.totals[n - 1] += count;
      }
    }
  }
  return stats;
}

double bleu_from_stats(const BleuStats& stats) {
  if (stats.hyp_len == 0 || stats.matches[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(stats.matches[0]) / static_cast<double>(stats.totals[0]));
  for (int n = 1; n < 4; ++n) {
    log_sum += std::log((static_cast<double>(stats.matches[n]) + 1.0) / (static_cast<double>(stats.totals[n]) + 1.0));
  }
  double bp = 1.0;
  if (stats.hyp_len < stats.ref_len) {
    bp = std::exp(1.0 - static_cast<double>(stats.ref_len) / static_cast<double>(stats.hyp_len));
  }
  return bp * std::exp(log_sum / 4.0);
}

double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  return bleu_from_stats(bleu_stats(hypotheses, references));
}

}  // namespace langsteer
