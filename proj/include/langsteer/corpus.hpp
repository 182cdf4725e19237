#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "langsteer/model.hpp"

namespace langsteer {

struct Sentence {
  std::string id;
  std::string text;
};

struct Corpus {
  std::string language;  // empty when rows from several languages were kept
  std::vector<Sentence> sentences;
};

/// Reads {"id","lang","text"} JSONL. Rows whose lang differs from
/// `expected_lang` are skipped. ParseError carries the line number.
Corpus ingest_corpus(const std::filesystem::path& path,
                     const std::optional<std::string>& expected_lang = std::nullopt);

void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Per-language streaming activation statistics, one slot per neuron
/// (flat index = layer * d_ff + unit). Special-token positions are excluded.
struct LanguageProfile {
  std::string language;
  int n_layers = 0;
  int d_ff = 0;
  bool store_token_values = false;
  std::uint64_t sentences_seen = 0;
  std::uint64_t skipped_sentences = 0;
  std::vector<std::uint64_t> token_count;
  std::vector<std::uint64_t> positive_count;
  std::vector<std::vector<double>> sentence_means;
  std::vector<std::vector<float>> token_values;
  std::string model_fingerprint;

  LanguageProfile() = default;
  LanguageProfile(std::string language, int n_layers, int d_ff, bool store_token_values);

  std::size_t neuron_count() const { return token_count.size(); }

  /// Fraction of tokens with activation strictly above zero.
  double activation_probability(std::size_t flat) const;

  /// Folds one sentence's capture in, reading positions [first, seq_len).
  void add_sentence(const ActivationCapture& capture, std::size_t first_position = 1);
};

LanguageProfile accumulate_profile(const Model& model, const Corpus& corpus,
                                   bool store_token_values, int threads = 1);

/// Counts add; value lists concatenate with `a` first.
LanguageProfile merge_profiles(const LanguageProfile& a, const LanguageProfile& b);

nlohmann::json profile_to_json(const LanguageProfile& profile);
LanguageProfile profile_from_json(const nlohmann::json& j);

}  // namespace langsteer
