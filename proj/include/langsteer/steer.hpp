#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "langsteer/neuron.hpp"
#include "langsteer/tokenizer.hpp"

#include <json.hpp>

namespace langsteer {

class Model;
class ActivationCapture;
struct LanguageProfile;
struct ModelConfig;

enum class FactorKind { pmax, pmedian, eq_max, plus_max, eq_zero, eq_10p };

inline constexpr FactorKind kAllFactors[] = {FactorKind::pmax,     FactorKind::pmedian,
                                             FactorKind::eq_max,   FactorKind::plus_max,
                                             FactorKind::eq_zero,  FactorKind::eq_10p};

std::string_view to_string(FactorKind kind);
/// Accepts the canonical names plus the symbolic aliases "=max", "+max", "=0", "=10p".
FactorKind parse_factor_kind(std::string_view name);

/// eq_max and plus_max derive their value from the sentence being processed.
constexpr bool is_test_time(FactorKind kind) {
  return kind == FactorKind::eq_max || kind == FactorKind::plus_max;
}

enum class Aggregate { max, median, mean };

/// An intervention on a set of FFN neurons. Fixed-value kinds carry one value
/// per neuron; test-time kinds carry none and need a TestTimeContext.
class SteeringPlan {
 public:
  struct Target {
    int unit;
    float value;  // unused for test-time kinds
  };

  SteeringPlan() = default;

  /// Throws ContractError if fixed_values does not cover exactly `neurons`
  /// for a fixed-value kind, or is non-empty for a test-time kind.
  SteeringPlan(FactorKind kind, std::string language, std::vector<NeuronId> neurons,
               std::map<NeuronId, float> fixed_values = {},
               std::optional<std::vector<int>> layer_mask = std::nullopt);

  FactorKind kind() const { return kind_; }
  const std::string& language() const { return language_; }
  const std::vector<NeuronId>& neurons() const { return neurons_; }
  const std::map<NeuronId, float>& fixed_values() const { return fixed_values_; }
  const std::optional<std::vector<int>>& layer_mask() const { return layer_mask_; }

  bool empty() const { return neurons_.empty(); }
  bool requires_context() const { return is_test_time(kind_); }
  bool applies_to_layer(int layer) const;

  /// Targets in `layer`, empty when the layer is masked out.
  std::span<const Target> targets_in_layer(int layer) const;

  /// Same plan restricted to the given layers.
  SteeringPlan with_layer_mask(std::optional<std::vector<int>> mask) const;

  /// Throws AddressingError when a neuron lies outside the model.
  void validate_for(const ModelConfig& config) const;

 private:
  FactorKind kind_ = FactorKind::pmax;
  std::string language_;
  std::vector<NeuronId> neurons_;
  std::map<NeuronId, float> fixed_values_;
  std::optional<std::vector<int>> layer_mask_;
  std::vector<std::vector<Target>> by_layer_;
};

/// Per-neuron sentence maximum of the clean activation, for one sentence.
class TestTimeContext {
 public:
  TestTimeContext() = default;
  explicit TestTimeContext(std::map<NeuronId, float> steer) : steer_(std::move(steer)) {}

  /// Max over positions [first_position, seq_len) of each neuron's activation.
  static TestTimeContext from_capture(const ActivationCapture& capture,
                                      std::span<const NeuronId> neurons,
                                      std::size_t first_position = 1);

  float steer(NeuronId id) const;
  const std::map<NeuronId, float>& values() const { return steer_; }

 private:
  std::map<NeuronId, float> steer_;
};

std::map<NeuronId, double> compute_patched_factors(const LanguageProfile& profile,
                                                   std::span<const NeuronId> neurons,
                                                   Aggregate agg);

double compute_percentile_value(const LanguageProfile& profile, NeuronId neuron, double q);

/// Rewrites the plan's neurons of `layer` inside one position's activations.
void apply_steering(const SteeringPlan& plan, const TestTimeContext* context, int layer,
                    std::span<float> activations);

/// Clean forward over `tokens` (BOS position excluded) to derive steer values.
TestTimeContext build_test_time_context(const Model& model, std::span<const TokenId> tokens,
                                        const SteeringPlan& plan);

/// Builds the plan for `kind` from identification-stage statistics of the
/// target language. eq_10p needs a profile accumulated with token values.
SteeringPlan make_plan(FactorKind kind, const LanguageProfile& profile,
                       std::span<const NeuronId> neurons,
                       std::optional<std::vector<int>> layer_mask = std::nullopt);

nlohmann::json plan_to_json(const SteeringPlan& plan);
SteeringPlan plan_from_json(const nlohmann::json& j);

}  // namespace langsteer
