#include "langsteer/steer.hpp"

#include <algorithm>

#include "langsteer/corpus.hpp"
#include "langsteer/error.hpp"
#include "langsteer/model.hpp"
#include "langsteer/util.hpp"

namespace langsteer {

std::string_view to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::pmax:
      return "pmax";
    case FactorKind::pmedian:
      return "pmedian";
    case FactorKind::eq_max:
      return "eq_max";
    case FactorKind::plus_max:
      return "plus_max";
    case FactorKind::eq_zero:
      return "eq_zero";
    case FactorKind::eq_10p:
      return "eq_10p";
  }
  return "?";
}

FactorKind parse_factor_kind(std::string_view name) {
  for (FactorKind k : kAllFactors) {
    if (name == to_string(k)) return k;
  }
  if (name == "=max") return FactorKind::eq_max;
  if (name == "+max") return FactorKind::plus_max;
  if (name == "=0") return FactorKind::eq_zero;
  if (name == "=10p") return FactorKind::eq_10p;
  throw ConfigError("unknown steering factor '" + std::string(name) +
                    "' (expected pmax, pmedian, eq_max, plus_max, eq_zero, eq_10p)");
}

SteeringPlan::SteeringPlan(FactorKind kind, std::string language, std::vector<NeuronId> neurons,
                           std::map<NeuronId, float> fixed_values,
                           std::optional<std::vector<int>> layer_mask)
    : kind_(kind),
      language_(std::move(language)),
      neurons_(std::move(neurons)),
      fixed_values_(std::move(fixed_values)),
      layer_mask_(std::move(layer_mask)) {
  std::sort(neurons_.begin(), neurons_.end());
  neurons_.erase(std::unique(neurons_.begin(), neurons_.end()), neurons_.end());
  if (layer_mask_) {
    std::sort(layer_mask_->begin(), layer_mask_->end());
    layer_mask_->erase(std::unique(layer_mask_->begin(), layer_mask_->end()), layer_mask_->end());
  }
  for (const auto& id : neurons_) {
    if (id.layer < 0 || id.unit < 0) throw AddressingError("negative neuron index " + id.key());
  }
  if (is_test_time(kind_)) {
    if (!fixed_values_.empty()) {
      throw ContractError(std::string("plan kind ") + std::string(to_string(kind_)) +
                          " must not carry fixed values");
    }
  } else {
    if (fixed_values_.size() != neurons_.size()) {
      throw ContractError("fixed values must cover exactly the plan's neuron set");
    }
    for (const auto& id : neurons_) {
      if (!fixed_values_.contains(id)) throw ContractError("no fixed value for neuron " + id.key());
    }
  }
  for (const auto& id : neurons_) {
    if (static_cast<std::size_t>(id.layer) >= by_layer_.size()) by_layer_.resize(static_cast<std::size_t>(id.layer) + 1);
    const float value = is_test_time(kind_) ? 0.0f : fixed_values_.at(id);
    by_layer_[static_cast<std::size_t>(id.layer)].push_back({id.unit, value});
  }
}

bool SteeringPlan::applies_to_layer(int layer) const {
  if (!layer_mask_) return true;
  return std::binary_search(layer_mask_->begin(), layer_mask_->end(), layer);
}

std::span<const SteeringPlan::Target> SteeringPlan::targets_in_layer(int layer) const {
  if (layer < 0 || static_cast<std::size_t>(layer) >= by_layer_.size() || !applies_to_layer(layer)) return {};
  return by_layer_[static_cast<std::size_t>(layer)];
}

SteeringPlan SteeringPlan::with_layer_mask(std::optional<std::vector<int>> mask) const {
  return SteeringPlan(kind_, language_, neurons_, fixed_values_, std::move(mask));
}

void SteeringPlan::validate_for(const ModelConfig& config) const {
  for (const auto& id : neurons_) {
    if (id.layer >= config.n_layers || id.unit >= config.d_ff) {
      throw AddressingError("plan neuron " + id.key() + " outside model grid (" +
                            std::to_string(config.n_layers) + " layers, d_ff " + std::to_string(config.d_ff) + ")");
    }
  }
}

TestTimeContext TestTimeContext::from_capture(const ActivationCapture& capture, std::span<const NeuronId> neurons,
                                              std::size_t first_position) {
  if (first_position >= capture.seq_len()) {
    throw ContractError("test-time context needs at least one non-special position");
  }
  std::map<NeuronId, float> steer;
  for (const auto& id : neurons) {
    float mx = capture.at(id, first_position);
    for (std::size_t t = first_position + 1; t < capture.seq_len(); ++t) mx = std::max(mx, capture.at(id, t));
    steer[id] = mx;
  }
  return TestTimeContext(std::move(steer));
}

float TestTimeContext::steer(NeuronId id) const {
  auto it = steer_.find(id);
  if (it == steer_.end()) throw ContractError("test-time context has no value for neuron " + id.key());
  return it->second;
}

std::map<NeuronId, double> compute_patched_factors(const LanguageProfile& profile, std::span<const NeuronId> neurons,
                                                   Aggregate agg) {
  std::map<NeuronId, double> out;
  for (const auto& id : neurons) {
    if (id.layer >= profile.n_layers || id.unit >= profile.d_ff) {
      throw AddressingError("neuron " + id.key() + " outside profile grid");
    }
    const auto& means = profile.sentence_means[id.flat(profile.d_ff)];
    if (means.empty()) {
      throw DataError("profile '" + profile.language + "' has no sentence means for neuron " + id.key());
    }
    double v = 0.0;
    switch (agg) {
      case Aggregate::max:
        v = *std::max_element(means.begin(), means.end());
        break;
      case Aggregate::median:
        v = median(means);
        break;
      case Aggregate::mean: {
        for (double m : means) v += m;
        v /= static_cast<double>(means.size());
        break;
      }
    }
    out[id] = v;
  }
  return out;
}

double compute_percentile_value(const LanguageProfile& profile, NeuronId neuron, double q) {
  if (!profile.store_token_values) {
    throw DataError("profile '" + profile.language +
                    "' has no per-token values; re-accumulate with token value storage enabled");
  }
  if (neuron.layer >= profile.n_layers || neuron.unit >= profile.d_ff) {
    throw AddressingError("neuron " + neuron.key() + " outside profile grid");
  }
  const auto& values = profile.token_values[neuron.flat(profile.d_ff)];
  if (values.empty()) throw DataError("no token values recorded for neuron " + neuron.key());
  return percentile(std::vector<double>(values.begin(), values.end()), q);
}

void apply_steering(const SteeringPlan& plan, const TestTimeContext* context, int layer,
                    std::span<float> activations) {
  const auto targets = plan.targets_in_layer(layer);
  if (targets.empty()) return;
  if (plan.requires_context() && context == nullptr) {
    throw ContractError(std::string("plan kind ") + std::string(to_string(plan.kind())) + " needs a test-time context");
  }
  for (const auto& t : targets) {
    if (static_cast<std::size_t>(t.unit) >= activations.size()) {
      throw AddressingError("plan unit " + std::to_string(t.unit) + " outside activation row");
    }
    float& a = activations[static_cast<std::size_t>(t.unit)];
    switch (plan.kind()) {
      case FactorKind::eq_max:
        a = context->steer({layer, t.unit});
        break;
      case FactorKind::plus_max:
        a = a + context->steer({layer, t.unit});
        break;
      default:
        a = t.value;
        break;
    }
  }
}

TestTimeContext build_test_time_context(const Model& model, std::span<const TokenId> tokens,
                                        const SteeringPlan& plan) {
  const ForwardResult clean = model.forward(tokens, {nullptr, nullptr, true});
  const std::size_t first = tokens.size() > 1 && tokens[0] == kBos ? 1 : 0;
  return TestTimeContext::from_capture(*clean.capture, plan.neurons(), first);
}

SteeringPlan make_plan(FactorKind kind, const LanguageProfile& profile, std::span<const NeuronId> neurons,
                       std::optional<std::vector<int>> layer_mask) {
  std::vector<NeuronId> ids(neurons.begin(), neurons.end());
  std::map<NeuronId, float> values;
  switch (kind) {
    case FactorKind::pmax:
    case FactorKind::pmedian: {
      const auto agg = kind == FactorKind::pmax ? Aggregate::max : Aggregate::median;
      for (const auto& [id, v] : compute_patched_factors(profile, ids, agg)) values[id] = static_cast<float>(v);
      break;
    }
    case FactorKind::eq_zero:
      for (const auto& id : ids) values[id] = 0.0f;
      break;
    case FactorKind::eq_10p:
      for (const auto& id : ids) values[id] = static_cast<float>(compute_percentile_value(profile, id, 10.0));
      break;
    case FactorKind::eq_max:
    case FactorKind::plus_max:
      break;
  }
  return SteeringPlan(kind, profile.language, std::move(ids), std::move(values), std::move(layer_mask));
}

nlohmann::json plan_to_json(const SteeringPlan& plan) {
  nlohmann::json neurons = nlohmann::json::array();
  for (const auto& id : plan.neurons()) neurons.push_back({id.layer, id.unit});
  nlohmann::json j = {{"kind", std::string(to_string(plan.kind()))},
                      {"lang", plan.language()},
                      {"neurons", neurons}};
  j["layer_mask"] = plan.layer_mask() ? nlohmann::json(*plan.layer_mask()) : nlohmann::json(nullptr);
  if (!is_test_time(plan.kind())) {
    nlohmann::json fixed = nlohmann::json::object();
    for (const auto& [id, v] : plan.fixed_values()) fixed[id.key()] = v;
    j["fixed_values"] = fixed;
  }
  return j;
}

SteeringPlan plan_from_json(const nlohmann::json& j) {
  try {
    const FactorKind kind = parse_factor_kind(j.at("kind").get<std::string>());
    std::vector<NeuronId> ids;
    for (const auto& pair : j.at("neurons")) ids.push_back({pair.at(0).get<int>(), pair.at(1).get<int>()});
    std::map<NeuronId, float> fixed;
    if (j.contains("fixed_values")) {
      for (const auto& [key, v] : j.at("fixed_values").items()) {
        const auto colon = key.find(':');
        if (colon == std::string::npos) throw DataError("bad neuron key '" + key + "' in fixed_values");
        fixed[{std::stoi(key.substr(0, colon)), std::stoi(key.substr(colon + 1))}] = v.get<float>();
      }
    }
    std::optional<std::vector<int>> mask;
    if (j.contains("layer_mask") && !j.at("layer_mask").is_null()) mask = j.at("layer_mask").get<std::vector<int>>();
    return SteeringPlan(kind, j.at("lang").get<std::string>(), std::move(ids), std::move(fixed), std::move(mask));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid plan JSON: ") + e.what());
  }
}

}  // namespace langsteer
