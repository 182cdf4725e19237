#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "langsteer/corpus.hpp"
#include "langsteer/neuron.hpp"

namespace langsteer {

/// Per-neuron activation probabilities across languages and their entropy.
struct LapeTable {
  std::vector<std::string> languages;
  int n_layers = 0;
  int d_ff = 0;
  std::vector<std::vector<double>> p_hat;       // [neuron][language]
  std::vector<std::vector<double>> normalized;  // L1-normalized p_hat, all-zero stays zero
  std::vector<double> lape;                     // natural-log entropy of `normalized`

  std::size_t neuron_count() const { return lape.size(); }
};

struct IdentifyConfig {
  double prob_percentile = 95.0;     // m
  double lape_bottom_fraction = 0.01;  // n

  void validate() const;
};

enum class IdentifyMethod { lape, baseline };

std::string to_string(IdentifyMethod method);
IdentifyMethod parse_identify_method(const std::string& name);

struct NeuronSetAssignment {
  IdentifyMethod method = IdentifyMethod::lape;
  std::vector<std::string> languages;
  std::map<std::string, std::vector<NeuronId>> neurons;  // sorted by (layer, unit)
  // LAPE-only metadata.
  double prob_percentile = 0.0;
  double lape_bottom_fraction = 0.0;
  double prob_threshold = 0.0;
  std::size_t candidate_count = 0;
  std::size_t selected_count = 0;
  bool no_candidates = false;

  const std::vector<NeuronId>& of(const std::string& language) const;
};

/// Entropy with 0 ln 0 = 0; an all-zero vector scores 0.
double lape_entropy(std::span<const double> p_hat);

LapeTable lape_scores(std::span<const LanguageProfile> profiles);

NeuronSetAssignment select_lape_neurons(const LapeTable& table, const IdentifyConfig& cfg);

NeuronSetAssignment select_baseline_neurons(std::span<const LanguageProfile> profiles);

/// Symmetric Jaccard-index matrix in assignment language order.
std::vector<std::vector<double>> jaccard_overlap(const NeuronSetAssignment& assignment);

nlohmann::json assignment_to_json(const NeuronSetAssignment& assignment);
NeuronSetAssignment assignment_from_json(const nlohmann::json& j);

}  // namespace langsteer
