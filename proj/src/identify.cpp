#include "langsteer/identify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "langsteer/error.hpp"
#include "langsteer/util.hpp"

namespace langsteer {

void IdentifyConfig::validate() const {
  if (!(prob_percentile > 0.0 && prob_percentile < 100.0)) {
    throw ConfigError("identify m (probability percentile) must lie in (0, 100)");
  }
  if (!(lape_bottom_fraction > 0.0 && lape_bottom_fraction <= 1.0)) {
    throw ConfigError("identify n (LAPE bottom fraction) must lie in (0, 1]");
  }
}

std::string to_string(IdentifyMethod method) {
  return method == IdentifyMethod::lape ? "lape" : "baseline";
}

IdentifyMethod parse_identify_method(const std::string& name) {
  if (name == "lape") return IdentifyMethod::lape;
  if (name == "baseline") return IdentifyMethod::baseline;
  throw ConfigError("unknown identification method '" + name + "' (expected lape or baseline)");
}

const std::vector<NeuronId>& NeuronSetAssignment::of(const std::string& language) const {
  auto it = neurons.find(language);
  if (it == neurons.end()) throw DataError("assignment has no language '" + language + "'");
  return it->second;
}

double lape_entropy(std::span<const double> p_hat) {
  const double total = std::accumulate(p_hat.begin(), p_hat.end(), 0.0);
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double p : p_hat) {
    const double q = p / total;
    if (q > 0.0) h -= q * std::log(q);
  }
  return h;
}

LapeTable lape_scores(std::span<const LanguageProfile> profiles) {
  if (profiles.size() < 2) throw ContractError("lape_scores needs at least two languages");
  LapeTable table;
  table.n_layers = profiles[0].n_layers;
  table.d_ff = profiles[0].d_ff;
  for (const auto& p : profiles) {
    if (p.n_layers != table.n_layers || p.d_ff != table.d_ff) {
      throw DataError("profiles have different model dimensions");
    }
    table.languages.push_back(p.language);
  }
  const std::size_t n = profiles[0].neuron_count();
  const std::size_t langs = profiles.size();
  table.p_hat.assign(n, std::vector<double>(langs));
  table.normalized.assign(n, std::vector<double>(langs));
  table.lape.assign(n, 0.0);
  for (std::size_t k = 0; k < langs; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      if (profiles[k].token_count[i] == 0) {
        throw DataError("language '" + profiles[k].language + "' has no tokens for neuron " +
                        NeuronId::from_flat(i, table.d_ff).key());
      }
      table.p_hat[i][k] = profiles[k].activation_probability(i);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double total = std::accumulate(table.p_hat[i].begin(), table.p_hat[i].end(), 0.0);
    if (total > 0.0) {
      for (std::size_t k = 0; k < langs; ++k) table.normalized[i][k] = table.p_hat[i][k] / total;
    }
    table.lape[i] = lape_entropy(table.p_hat[i]);
  }
  return table;
}

NeuronSetAssignment select_lape_neurons(const LapeTable& table, const IdentifyConfig& cfg) {
  cfg.validate();
  NeuronSetAssignment out;
  out.method = IdentifyMethod::lape;
  out.languages = table.languages;
  out.prob_percentile = cfg.prob_percentile;
  out.lape_bottom_fraction = cfg.lape_bottom_fraction;
  for (const auto& lang : table.languages) out.neurons[lang] = {};
  if (table.neuron_count() == 0) {
    out.no_candidates = true;
    return out;
  }

  std::vector<double> pool;
  pool.reserve(table.neuron_count() * table.languages.size());
  for (const auto& row : table.p_hat) pool.insert(pool.end(), row.begin(), row.end());
  const double tau = percentile(std::move(pool), cfg.prob_percentile);
  out.prob_threshold = tau;

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < table.neuron_count(); ++i) {
    const auto& row = table.p_hat[i];
    const bool all_zero = std::all_of(row.begin(), row.end(), [](double p) { return p == 0.0; });
    if (all_zero) continue;
    if (std::any_of(row.begin(), row.end(), [tau](double p) { return p >= tau; })) candidates.push_back(i);
  }
  out.candidate_count = candidates.size();
  if (candidates.empty()) {
    out.no_candidates = true;
    return out;
  }

  // Flat index order equals (layer, unit) order, so it doubles as the tie-break.
  std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    if (table.lape[a] != table.lape[b]) return table.lape[a] < table.lape[b];
    return a < b;
  });
  const auto wanted = static_cast<std::size_t>(
      std::llround(cfg.lape_bottom_fraction * static_cast<double>(candidates.size())));
  const std::size_t take = std::min(wanted, candidates.size());
  out.selected_count = take;
  for (std::size_t c = 0; c < take; ++c) {
    const std::size_t i = candidates[c];
    for (std::size_t k = 0; k < table.languages.size(); ++k) {
      if (table.p_hat[i][k] >= tau) out.neurons[table.languages[k]].push_back(NeuronId::from_flat(i, table.d_ff));
    }
  }
  for (auto& [lang, ids] : out.neurons) std::sort(ids.begin(), ids.end());
  return out;
}

NeuronSetAssignment select_baseline_neurons(std::span<const LanguageProfile> profiles) {
  NeuronSetAssignment out;
  out.method = IdentifyMethod::baseline;
  for (const auto& p : profiles) {
    if (p.sentences_seen == 0) throw DataError("profile '" + p.language + "' has no sentences");
    out.languages.push_back(p.language);
    auto& ids = out.neurons[p.language];
    for (std::size_t i = 0; i < p.neuron_count(); ++i) {
      const auto& means = p.sentence_means[i];
      if (std::all_of(means.begin(), means.end(), [](double m) { return m > 0.0; })) {
        ids.push_back(NeuronId::from_flat(i, p.d_ff));
      }
    }
    out.selected_count += ids.size();
  }
  return out;
}

std::vector<std::vector<double>> jaccard_overlap(const NeuronSetAssignment& assignment) {
  const std::size_t n = assignment.languages.size();
  std::vector<std::set<NeuronId>> sets;
  for (const auto& lang : assignment.languages) {
    const auto& ids = assignment.of(lang);
    sets.emplace_back(ids.begin(), ids.end());
  }
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a; b < n; ++b) {
      std::size_t inter = 0;
      for (const auto& id : sets[a]) inter += sets[b].count(id);
      const std::size_t uni = sets[a].size() + sets[b].size() - inter;
      const double v = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
      m[a][b] = v;
      m[b][a] = v;
    }
  }
  return m;
}

nlohmann::json assignment_to_json(const NeuronSetAssignment& a) {
  nlohmann::json sets = nlohmann::json::object();
  for (const auto& lang : a.languages) {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& id : a.of(lang)) ids.push_back({id.layer, id.unit});
    sets[lang] = ids;
  }
  nlohmann::json j = {{"method", to_string(a.method)}, {"languages", a.languages}, {"neurons", sets},
                      {"selected_count", a.selected_count}};
  if (a.method == IdentifyMethod::lape) {
    j["thresholds"] = {{"m", a.prob_percentile},
                       {"n", a.lape_bottom_fraction},
                       {"prob_threshold", a.prob_threshold},
                       {"candidate_count", a.candidate_count},
                       {"no_candidates", a.no_candidates}};
  }
  return j;
}

NeuronSetAssignment assignment_from_json(const nlohmann::json& j) {
  try {
    NeuronSetAssignment a;
    a.method = parse_identify_method(j.at("method").get<std::string>());
    a.languages = j.at("languages").get<std::vector<std::string>>();
    a.selected_count = j.at("selected_count").get<std::size_t>();
    for (const auto& lang : a.languages) {
      auto& ids = a.neurons[lang];
      for (const auto& pair : j.at("neurons").at(lang)) ids.push_back({pair.at(0).get<int>(), pair.at(1).get<int>()});
    }
    if (j.contains("thresholds")) {
      const auto& t = j.at("thresholds");
      a.prob_percentile = t.at("m").get<double>();
      a.lape_bottom_fraction = t.at("n").get<double>();
      a.prob_threshold = t.at("prob_threshold").get<double>();
      a.candidate_count = t.at("candidate_count").get<std::size_t>();
      a.no_candidates = t.at("no_candidates").get<bool>();
    }
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid assignment JSON: ") + e.what());
  }
}

}  // namespace langsteer
