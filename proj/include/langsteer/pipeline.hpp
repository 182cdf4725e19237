#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "langsteer/identify.hpp"
#include "langsteer/model.hpp"
#include "langsteer/steer.hpp"

namespace langsteer {

struct ModelSource {
  enum class Kind { file, synthetic, random };
  Kind kind = Kind::synthetic;
  std::filesystem::path path;                    // file
  float boost = synthetic::kDefaultBoost;        // synthetic
  ModelConfig config = synthetic::default_config();  // synthetic, random
};

/// Everything a pipeline run depends on. Relative paths in a config file are
/// resolved against the file's directory.
struct RunConfig {
  ModelSource model;
  std::vector<std::string> languages;
  std::map<std::string, std::filesystem::path> corpora;
  std::optional<std::filesystem::path> probes;
  std::optional<std::filesystem::path> mc;
  std::map<std::string, std::filesystem::path> ppl_corpora;
  std::map<std::string, std::filesystem::path> translations;
  std::string translation_template = "{src} = ";
  int max_new_tokens = 16;
  IdentifyMethod method = IdentifyMethod::lape;
  IdentifyConfig identify;
  std::vector<FactorKind> factors = {std::begin(kAllFactors), std::end(kAllFactors)};
  std::optional<std::vector<int>> layers;
  FactorKind eval_factor = FactorKind::pmax;
  std::filesystem::path out = "artifacts";
  std::optional<std::uint64_t> seed;
  int threads = 1;

  /// Throws ConfigError for structural problems or missing input files.
  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Effective configuration as echoed into the artifact directory (no output
/// directory or thread count, which never change artifact contents).
nlohmann::json run_config_to_json(const RunConfig& config);

enum class Stage { profiles, assignment, factors, lss, eval };

inline constexpr Stage kAllStages[] = {Stage::profiles, Stage::assignment, Stage::factors, Stage::lss,
                                       Stage::eval};

std::string to_string(Stage stage);

/// Digest of the effective config plus the contents of every input file.
std::string config_fingerprint(const RunConfig& config);

Model load_model_source(const RunConfig& config);

struct PipelineResult {
  std::filesystem::path out;
  std::string fingerprint;
  bool complete = false;
  std::map<std::string, double> lss_means;  // factor -> mean off-diagonal LSS
};

/// Runs stages up to and including `through`, writing artifacts and a
/// MANIFEST.json after every stage. A stage error leaves earlier artifacts in
/// place, marks the manifest, and is rethrown.
PipelineResult run_pipeline(const RunConfig& config, Stage through = Stage::eval);

/// Renders every matrix artifact in `dir` to SVG (and re-emits its CSV).
/// Throws DataError naming the missing stages when the manifest is incomplete.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir);

}  // namespace langsteer
