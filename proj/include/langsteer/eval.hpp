#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "langsteer/corpus.hpp"
#include "langsteer/model.hpp"
#include "langsteer/steer.hpp"

namespace langsteer {

struct McItem {
  std::string id;
  std::string lang;
  std::string prompt;
  std::vector<std::string> options;
  int label = 0;
};

struct TranslationPair {
  std::string id;
  std::string src;
  std::string ref;
};

std::vector<McItem> load_mc_items(const std::filesystem::path& path);
std::vector<TranslationPair> load_translation_pairs(const std::filesystem::path& path);

/// exp(mean next-token NLL) over every text token of every sentence that fits
/// the context; the BOS position is never a target. Test-time plans take their
/// context from each sentence's own clean pass.
double perplexity(const Model& model, const Corpus& corpus, const SteeringPlan* plan = nullptr, int threads = 1);

/// Option with the highest summed continuation log-prob wins; ties go to the
/// lowest index.
int mc_predict(const Model& model, const McItem& item, const SteeringPlan* plan = nullptr);

double mc_accuracy(const Model& model, std::span<const McItem> items, const SteeringPlan* plan = nullptr,
                   int threads = 1);

struct DeltaMatrix {
  std::vector<std::string> languages;
  std::vector<std::vector<double>> values;  // [input lang][intervention lang]
  double diagonal_mean = 0.0;
  double offdiagonal_mean = 0.0;
};

/// values[i][j] = intervened(i, j) - baseline(i). Throws DataError listing
/// every missing baseline or pair.
DeltaMatrix delta_matrix(std::span<const std::string> languages, const std::map<std::string, double>& baseline,
                         const std::map<std::pair<std::string, std::string>, double>& intervened);

/// Argmax decoding, ties to the lowest token id, stopping at EOS or after
/// `max_new_tokens`. Returns only the generated bytes.
std::string greedy_generate(const Model& model, const std::string& prompt, const SteeringPlan* plan,
                            int max_new_tokens);

struct BleuStats {
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

BleuStats bleu_stats(std::span<const std::string> hypotheses, std::span<const std::string> references);
double bleu_from_stats(const BleuStats& stats);

/// Corpus BLEU-4 over whitespace tokens, add-one smoothing for n >= 2.
double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references);

}  // namespace langsteer
