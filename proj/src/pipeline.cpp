#include "langsteer/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "langsteer/corpus.hpp"
#include "langsteer/error.hpp"
#include "langsteer/eval.hpp"
#include "langsteer/lss.hpp"
#include "langsteer/report.hpp"
#include "langsteer/util.hpp"

namespace langsteer {
namespace fs = std::filesystem;
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::set<std::string> kConfigKeys = {
    "model",       "languages", "corpora", "probes",     "mc",     "ppl_corpora", "translations",
    "translation_template", "max_new_tokens", "identify", "factors", "layers", "eval_factor",
    "out",         "seed",      "threads"};

template <typename Fn>
auto config_field(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + name + "': " + e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::map<std::string, fs::path> path_map(const nlohmann::json& j, const fs::path& base, const char* name) {
  return config_field(name, [&] {
    std::map<std::string, fs::path> out;
    for (const auto& [lang, p] : j.items()) out[lang] = resolve(base, p.get<std::string>());
    return out;
  });
}

std::string file_digest(const fs::path& p) { return "fnv1a64:" + hex64(fnv1a64(read_file(p))); }

/// Same layout as the echoed config; `hash_paths` swaps paths for content digests.
nlohmann::json config_json(const RunConfig& c, bool hash_paths) {
  auto path_value = [&](const fs::path& p) { return hash_paths ? file_digest(p) : p.string(); };
  auto map_value = [&](const std::map<std::string, fs::path>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [lang, p] : m) j[lang] = path_value(p);
    return j;
  };
  nlohmann::json model;
  switch (c.model.kind) {
    case ModelSource::Kind::file:
      model = {{"path", path_value(c.model.path)}};
      break;
    case ModelSource::Kind::synthetic:
      model = {{"synthetic", {{"boost", c.model.boost}, {"config", config_to_json(c.model.config)}}}};
      break;
    case ModelSource::Kind::random: {
      ModelConfig mc = c.model.config;
      if (c.seed) mc.rng_seed = *c.seed;
      model = {{"random", config_to_json(mc)}};
      break;
    }
  }
  nlohmann::json factors = nlohmann::json::array();
  for (auto f : c.factors) factors.push_back(std::string(to_string(f)));
  nlohmann::json j = {
      {"model", model},
      {"languages", c.languages},
      {"corpora", map_value(c.corpora)},
      {"probes", c.probes ? nlohmann::json(path_value(*c.probes)) : nlohmann::json(nullptr)},
      {"mc", c.mc ? nlohmann::json(path_value(*c.mc)) : nlohmann::json(nullptr)},
      {"ppl_corpora", map_value(c.ppl_corpora)},
      {"translations", map_value(c.translations)},
      {"translation_template", c.translation_template},
      {"max_new_tokens", c.max_new_tokens},
      {"identify",
       {{"method", to_string(c.method)}, {"m", c.identify.prob_percentile}, {"n", c.identify.lape_bottom_fraction}}},
      {"factors", factors},
      {"layers", c.layers ? nlohmann::json(*c.layers) : nlohmann::json(nullptr)},
      {"eval_factor", std::string(to_string(c.eval_factor))},
      {"seed", c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr)}};
  return j;
}

std::string csv_header(const std::string& fingerprint) { return "# fingerprint: " + fingerprint + "\n"; }

std::string fill_template(std::string tmpl, const std::string& src, const std::string& lang) {
  auto replace_all = [&](const std::string& key, const std::string& value) {
    for (std::size_t pos = tmpl.find(key); pos != std::string::npos; pos = tmpl.find(key, pos + value.size())) {
      tmpl.replace(pos, key.size(), value);
    }
  };
  replace_all("{src}", src);
  replace_all("{lang}", lang);
  return tmpl;
}

double population_stddev(const std::vector<double>& v, double mean) {
  if (v.empty()) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

struct Manifest {
  fs::path dir;
  std::string fingerprint;
  std::string through;
  std::map<Stage, std::string> status;
  std::string error;

  void write() const {
    nlohmann::json stages = nlohmann::json::array();
    bool complete = true;
    for (Stage s : kAllStages) {
      stages.push_back({{"stage", to_string(s)}, {"status", status.at(s)}});
      complete = complete && status.at(s) == "complete";
    }
    const nlohmann::json j = {{"fingerprint", fingerprint},
                              {"through", through},
                              {"stages", stages},
                              {"complete", complete},
                              {"error", error.empty() ? nlohmann::json(nullptr) : nlohmann::json(error)}};
    write_file(dir / "MANIFEST.json", j.dump(2) + "\n");
  }
};

class Runner {
 public:
  Runner(const RunConfig& config, std::string fingerprint)
      : c_(config), fp_(std::move(fingerprint)), model_(load_model_source(config)) {
    if (c_.layers) {
      for (int l : *c_.layers) {
        if (l < 0 || l >= model_.config().n_layers) {
          throw ConfigError("layer " + std::to_string(l) + " outside model with " +
                            std::to_string(model_.config().n_layers) + " layers");
        }
      }
    }
  }

  void run(Stage s) {
    switch (s) {
      case Stage::profiles:
        profiles();
        break;
      case Stage::assignment:
        assignment();
        break;
      case Stage::factors:
        factors();
        break;
      case Stage::lss:
        lss();
        break;
      case Stage::eval:
        eval();
        break;
    }
  }

  std::map<std::string, double> lss_means;

 private:
  bool needs_token_values() const {
    return std::find(c_.factors.begin(), c_.factors.end(), FactorKind::eq_10p) != c_.factors.end() ||
           c_.eval_factor == FactorKind::eq_10p;
  }

  void profiles() {
    fs::create_directories(c_.out / "profiles");
    for (const auto& lang : c_.languages) {
      const Corpus corpus = ingest_corpus(c_.corpora.at(lang), lang);
      if (corpus.sentences.empty()) throw DataError("corpus for '" + lang + "' has no rows in that language");
      LanguageProfile p = accumulate_profile(model_, corpus, needs_token_values(), c_.threads);
      if (p.sentences_seen == 0) throw DataError("no sentence of '" + lang + "' fits the context window");
      nlohmann::json j = profile_to_json(p);
      j["fingerprint"] = fp_;
      write_file(c_.out / "profiles" / (lang + ".json"), j.dump() + "\n");
      profiles_.push_back(std::move(p));
    }
  }

  void assignment() {
    if (c_.method == IdentifyMethod::lape) {
      const LapeTable table = lape_scores(profiles_);
      assignment_ = select_lape_neurons(table, c_.identify);
      std::string csv = csv_header(fp_) + "layer,unit";
      for (const auto& lang : table.languages) csv += ",p_hat_" + lang;
      csv += ",lape\n";
      for (std::size_t i = 0; i < table.neuron_count(); ++i) {
        const NeuronId id = NeuronId::from_flat(i, table.d_ff);
        csv += std::to_string(id.layer) + "," + std::to_string(id.unit);
        for (double v : table.p_hat[i]) csv += "," + format_double(v);
        csv += "," + format_double(table.lape[i]) + "\n";
      }
      write_file(c_.out / "lape.csv", csv);
    } else {
      assignment_ = select_baseline_neurons(profiles_);
    }
    nlohmann::json j = assignment_to_json(assignment_);
    j["fingerprint"] = fp_;
    write_file(c_.out / "assignment.json", j.dump(2) + "\n");
    std::string csv = csv_header(fp_) + "lang,layer,unit\n";
    for (const auto& lang : assignment_.languages) {
      for (const auto& id : assignment_.of(lang)) {
        csv += lang + "," + std::to_string(id.layer) + "," + std::to_string(id.unit) + "\n";
      }
    }
    write_file(c_.out / "assignment.csv", csv);

    Matrix overlap{"Jaccard overlap of language neuron sets", ColorScale::sequential, assignment_.languages,
                   assignment_.languages, jaccard_overlap(assignment_)};
    write_matrix(c_.out, "overlap", overlap, fp_);
  }

  std::vector<FactorKind> planned_kinds() const {
    std::vector<FactorKind> kinds = c_.factors;
    if (std::find(kinds.begin(), kinds.end(), c_.eval_factor) == kinds.end()) kinds.push_back(c_.eval_factor);
    return kinds;
  }

  void factors() {
    fs::create_directories(c_.out / "plans");
    nlohmann::json table = nlohmann::json::object();
    std::vector<FactorKind> fixed;
    for (auto k : c_.factors) {
      if (!is_test_time(k)) fixed.push_back(k);
    }
    std::string csv = csv_header(fp_) + "lang,layer,unit";
    for (auto k : fixed) csv += "," + std::string(to_string(k));
    csv += "\n";
    for (std::size_t li = 0; li < c_.languages.size(); ++li) {
      const std::string& lang = c_.languages[li];
      const auto& neurons = assignment_.of(lang);
      for (auto k : planned_kinds()) {
        SteeringPlan plan = make_plan(k, profiles_[li], neurons, c_.layers);
        nlohmann::json pj = plan_to_json(plan);
        pj["fingerprint"] = fp_;
        write_file(c_.out / "plans" / (std::string(to_string(k)) + "_" + lang + ".json"), pj.dump(2) + "\n");
        plans_[{k, lang}] = std::move(plan);
      }
      nlohmann::json per_lang = nlohmann::json::object();
      for (auto k : c_.factors) {
        const auto& plan = plans_.at({k, lang});
        if (is_test_time(k)) {
          per_lang[std::string(to_string(k))] = "test-time";
          continue;
        }
        nlohmann::json values = nlohmann::json::object();
        for (const auto& [id, v] : plan.fixed_values()) values[id.key()] = v;
        per_lang[std::string(to_string(k))] = values;
      }
      table[lang] = per_lang;
      for (const auto& id : neurons) {
        csv += lang + "," + std::to_string(id.layer) + "," + std::to_string(id.unit);
        for (auto k : fixed) csv += "," + format_double(plans_.at({k, lang}).fixed_values().at(id));
        csv += "\n";
      }
    }
    write_file(c_.out / "factors.json", nlohmann::json{{"fingerprint", fp_}, {"factors", table}}.dump(2) + "\n");
    write_file(c_.out / "factors.csv", csv);
  }

  void lss() {
    if (!c_.probes) throw ConfigError("the lss stage needs a probe file");
    if (c_.languages.size() < 2) throw ConfigError("the lss stage needs at least two languages");
    const ProbeSet probes = load_probes(*c_.probes, c_.languages);
    std::map<std::string, std::vector<ProbeItem>> by_lang;
    for (const auto& it : probes.items) by_lang[it.prompt_lang].push_back(it);
    for (const auto& lang : c_.languages) {
      if (by_lang[lang].empty()) throw DataError("no probe items with prompt language '" + lang + "'");
    }
    nlohmann::json summary_rows = nlohmann::json::array();
    std::string summary_csv = csv_header(fp_) + "factor,mean,stddev,cells,items_dropped\n";
    for (auto k : c_.factors) {
      const std::string name(to_string(k));
      Matrix m{"LSS " + name, ColorScale::sequential, c_.languages, c_.languages, {}};
      std::string items_csv = csv_header(fp_) + "source,target,id,clean_delta,intervened_delta,shifted\n";
      std::vector<double> cells;
      for (const auto& src : c_.languages) {
        std::vector<double> row;
        for (const auto& tgt : c_.languages) {
          if (src == tgt) {
            row.push_back(kNaN);
            continue;
          }
          const LssResult r = lss_score(model_, by_lang[src], src, tgt, plans_.at({k, tgt}), c_.threads);
          row.push_back(r.score);
          cells.push_back(r.score);
          for (std::size_t i = 0; i < r.pairs.size(); ++i) {
            const auto& p = r.pairs[i];
            items_csv += src + "," + tgt + "," + by_lang[src][i].id + "," + format_double(p.clean) + "," +
                         format_double(p.intervened) + "," + (p.intervened - p.clean > 0.0 ? "1" : "0") + "\n";
          }
        }
        m.values.push_back(std::move(row));
      }
      write_matrix(c_.out, "lss_" + name, m, fp_);
      write_file(c_.out / ("lss_" + name + "_items.csv"), items_csv);
      double mean = 0.0;
      for (double v : cells) mean += v;
      mean /= static_cast<double>(cells.size());
      const double sd = population_stddev(cells, mean);
      lss_means[name] = mean;
      summary_rows.push_back({{"factor", name}, {"mean", mean}, {"stddev", sd}, {"cells", cells.size()}});
      summary_csv += name + "," + format_double(mean) + "," + format_double(sd) + "," + std::to_string(cells.size()) +
                     "," + std::to_string(probes.dropped) + "\n";
    }
    write_file(c_.out / "lss_summary.json",
               nlohmann::json{{"fingerprint", fp_}, {"items_dropped", probes.dropped}, {"factors", summary_rows}}.dump(2) +
                   "\n");
    write_file(c_.out / "lss_summary.csv", summary_csv);
  }

  void write_deltas(const std::string& stem, const std::string& title, const std::map<std::string, double>& base,
                    const std::map<std::pair<std::string, std::string>, double>& inter, nlohmann::json& summary) {
    const DeltaMatrix d = delta_matrix(c_.languages, base, inter);
    write_matrix(c_.out, stem, Matrix{title, ColorScale::diverging, c_.languages, c_.languages, d.values}, fp_);
    summary[stem] = {{"baseline", base}, {"diagonal_mean", d.diagonal_mean}, {"offdiagonal_mean", d.offdiagonal_mean}};
  }

  void eval() {
    if (!c_.mc && c_.ppl_corpora.empty() && c_.translations.empty()) {
      throw ConfigError("the eval stage needs mc, ppl_corpora or translations");
    }
    const FactorKind k = c_.eval_factor;
    nlohmann::json summary = {{"fingerprint", fp_}, {"factor", std::string(to_string(k))}};

    if (c_.mc) {
      const auto items = load_mc_items(*c_.mc);
      std::map<std::string, std::vector<McItem>> by_lang;
      for (const auto& it : items) by_lang[it.lang].push_back(it);
      std::map<std::string, double> base;
      std::map<std::pair<std::string, std::string>, double> inter;
      for (const auto& in : c_.languages) {
        const auto& list = by_lang[in];
        if (list.empty()) throw DataError("no multiple-choice items for '" + in + "'");
        base[in] = mc_accuracy(model_, list, nullptr, c_.threads);
        for (const auto& j : c_.languages) inter[{in, j}] = mc_accuracy(model_, list, &plans_.at({k, j}), c_.threads);
      }
      write_deltas("deltas_mc", "Accuracy delta", base, inter, summary);
    }

    if (!c_.ppl_corpora.empty()) {
      std::map<std::string, double> base;
      std::map<std::pair<std::string, std::string>, double> inter;
      for (const auto& in : c_.languages) {
        auto it = c_.ppl_corpora.find(in);
        if (it == c_.ppl_corpora.end()) throw ConfigError("ppl_corpora lacks language '" + in + "'");
        const Corpus corpus = ingest_corpus(it->second, in);
        base[in] = perplexity(model_, corpus, nullptr, c_.threads);
        for (const auto& j : c_.languages) inter[{in, j}] = perplexity(model_, corpus, &plans_.at({k, j}), c_.threads);
      }
      write_deltas("deltas_ppl", "Perplexity delta", base, inter, summary);
    }

    if (!c_.translations.empty()) {
      std::map<std::string, double> base;
      std::map<std::pair<std::string, std::string>, double> inter;
      for (const auto& in : c_.languages) {
        auto it = c_.translations.find(in);
        if (it == c_.translations.end()) throw ConfigError("translations lacks language '" + in + "'");
        const auto pairs = load_translation_pairs(it->second);
        if (pairs.empty()) throw DataError("no translation pairs for '" + in + "'");
        std::vector<std::string> refs;
        for (const auto& p : pairs) refs.push_back(p.ref);
        auto score = [&](const SteeringPlan* plan) {
          std::vector<std::string> hyps(pairs.size());
          parallel_for(pairs.size(), c_.threads, [&](std::size_t i) {
            hyps[i] = greedy_generate(model_, fill_template(c_.translation_template, pairs[i].src, in), plan,
                                      c_.max_new_tokens);
          });
          return bleu(hyps, refs);
        };
        base[in] = score(nullptr);
        for (const auto& j : c_.languages) inter[{in, j}] = score(&plans_.at({k, j}));
      }
      write_deltas("deltas_bleu", "BLEU delta", base, inter, summary);
    }
    write_file(c_.out / "eval_summary.json", summary.dump(2) + "\n");
  }

  const RunConfig& c_;
  std::string fp_;
  Model model_;
  std::vector<LanguageProfile> profiles_;
  NeuronSetAssignment assignment_;
  std::map<std::pair<FactorKind, std::string>, SteeringPlan> plans_;
};

}  // namespace

void RunConfig::validate() const {
  if (languages.size() < 1) throw ConfigError("config needs at least one language");
  std::set<std::string> seen;
  for (const auto& l : languages) {
    if (l.empty()) throw ConfigError("empty language code");
    if (!seen.insert(l).second) throw ConfigError("duplicate language '" + l + "'");
    if (!corpora.contains(l)) throw ConfigError("no corpus for language '" + l + "'");
  }
  auto must_exist = [](const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw ConfigError(what + " not found: " + p.string());
  };
  if (model.kind == ModelSource::Kind::file) must_exist(model.path, "model file");
  for (const auto& [l, p] : corpora) must_exist(p, "corpus for '" + l + "'");
  if (probes) must_exist(*probes, "probe file");
  if (mc) must_exist(*mc, "multiple-choice file");
  for (const auto& [l, p] : ppl_corpora) must_exist(p, "perplexity corpus for '" + l + "'");
  for (const auto& [l, p] : translations) must_exist(p, "translation file for '" + l + "'");
  if (factors.empty()) throw ConfigError("factor list is empty");
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (layers && layers->empty()) throw ConfigError("layer list is empty");
  identify.validate();
}

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kConfigKeys.contains(key)) throw ConfigError("unknown config field '" + key + "'");
  }
  RunConfig c;
  c.threads = default_thread_count();
  config_field("model", [&] {
    const auto& m = j.at("model");
    if (m.contains("path")) {
      c.model.kind = ModelSource::Kind::file;
      c.model.path = resolve(base, m.at("path").get<std::string>());
    } else if (m.contains("synthetic")) {
      const auto& s = m.at("synthetic");
      c.model.kind = ModelSource::Kind::synthetic;
      c.model.boost = s.value("boost", synthetic::kDefaultBoost);
      if (s.contains("config")) c.model.config = config_from_json(s.at("config"));
    } else if (m.contains("random")) {
      c.model.kind = ModelSource::Kind::random;
      c.model.config = config_from_json(m.at("random"));
    } else {
      throw ConfigError("model needs one of 'path', 'synthetic', 'random'");
    }
    return 0;
  });
  c.languages = config_field("languages", [&] { return j.at("languages").get<std::vector<std::string>>(); });
  c.corpora = path_map(config_field("corpora", [&] { return j.at("corpora"); }), base, "corpora");
  if (j.contains("probes") && !j["probes"].is_null()) {
    c.probes = config_field("probes", [&] { return resolve(base, j["probes"].get<std::string>()); });
  }
  if (j.contains("mc") && !j["mc"].is_null()) {
    c.mc = config_field("mc", [&] { return resolve(base, j["mc"].get<std::string>()); });
  }
  if (j.contains("ppl_corpora")) c.ppl_corpora = path_map(j["ppl_corpora"], base, "ppl_corpora");
  if (j.contains("translations")) c.translations = path_map(j["translations"], base, "translations");
  config_field("translation_template", [&] {
    c.translation_template = j.value("translation_template", c.translation_template);
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    return 0;
  });
  if (j.contains("identify")) {
    config_field("identify", [&] {
      const auto& id = j["identify"];
      if (id.contains("method")) c.method = parse_identify_method(id["method"].get<std::string>());
      c.identify.prob_percentile = id.value("m", c.identify.prob_percentile);
      c.identify.lape_bottom_fraction = id.value("n", c.identify.lape_bottom_fraction);
      return 0;
    });
  }
  if (j.contains("factors")) {
    c.factors.clear();
    for (const auto& name : config_field("factors", [&] { return j["factors"].get<std::vector<std::string>>(); })) {
      c.factors.push_back(parse_factor_kind(name));
    }
  }
  if (j.contains("layers") && !j["layers"].is_null()) {
    c.layers = config_field("layers", [&] { return j["layers"].get<std::vector<int>>(); });
  }
  if (j.contains("eval_factor")) {
    c.eval_factor = parse_factor_kind(config_field("eval_factor", [&] { return j["eval_factor"].get<std::string>(); }));
  }
  if (j.contains("out")) c.out = resolve(base, config_field("out", [&] { return j["out"].get<std::string>(); }));
  if (j.contains("seed") && !j["seed"].is_null()) {
    c.seed = config_field("seed", [&] { return j["seed"].get<std::uint64_t>(); });
  }
  if (j.contains("threads")) c.threads = config_field("threads", [&] { return j["threads"].get<int>(); });
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return run_config_from_json(j, fs::absolute(path).parent_path());
}

nlohmann::json run_config_to_json(const RunConfig& config) { return config_json(config, false); }

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::profiles:
      return "profiles";
    case Stage::assignment:
      return "assignment";
    case Stage::factors:
      return "factors";
    case Stage::lss:
      return "lss";
    case Stage::eval:
      return "eval";
  }
  return "?";
}

std::string config_fingerprint(const RunConfig& config) {
  return hex64(fnv1a64(config_json(config, true).dump()));
}

Model load_model_source(const RunConfig& config) {
  switch (config.model.kind) {
    case ModelSource::Kind::file:
      return load_model(config.model.path);
    case ModelSource::Kind::synthetic:
      return build_synthetic_bilingual_model(config.model.config, config.model.boost);
    case ModelSource::Kind::random: {
      ModelConfig mc = config.model.config;
      if (config.seed) mc.rng_seed = *config.seed;
      return Model::init(mc);
    }
  }
  throw ConfigError("unknown model source");
}

PipelineResult run_pipeline(const RunConfig& config, Stage through) {
  config.validate();
  fs::create_directories(config.out);
  PipelineResult result;
  result.out = config.out;
  result.fingerprint = config_fingerprint(config);

  Manifest manifest{config.out, result.fingerprint, to_string(through), {}, {}};
  for (Stage s : kAllStages) manifest.status[s] = "pending";
  manifest.write();
  nlohmann::json echo = run_config_to_json(config);
  echo["fingerprint"] = result.fingerprint;
  write_file(config.out / "config.json", echo.dump(2) + "\n");

  Stage current = Stage::profiles;
  try {
    Runner runner(config, result.fingerprint);
    for (Stage s : kAllStages) {
      if (static_cast<int>(s) > static_cast<int>(through)) break;
      current = s;
      runner.run(s);
      manifest.status[s] = "complete";
      manifest.write();
    }
    result.lss_means = runner.lss_means;
  } catch (const std::exception& e) {
    manifest.status[current] = "failed";
    manifest.error = to_string(current) + ": " + e.what();
    manifest.write();
    throw;
  }
  result.complete = through == Stage::eval;
  if (result.complete) emit_report(config.out);
  return result;
}

std::vector<fs::path> emit_report(const fs::path& dir) {
  const fs::path manifest_path = dir / "MANIFEST.json";
  if (!fs::is_regular_file(manifest_path)) throw DataError("no MANIFEST.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("MANIFEST.json is not valid JSON: " + std::string(e.what()));
  }
  std::vector<std::string> missing;
  std::string fingerprint;
  try {
    fingerprint = manifest.at("fingerprint").get<std::string>();
    for (const auto& s : manifest.at("stages")) {
      if (s.at("status").get<std::string>() != "complete") missing.push_back(s.at("stage").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("MANIFEST.json malformed: " + std::string(e.what()));
  }
  if (!missing.empty()) {
    std::string msg = "manifest incomplete, missing stages:";
    for (const auto& s : missing) msg += " " + s;
    throw DataError(msg);
  }

  std::vector<fs::path> matrices;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") matrices.push_back(entry.path());
  }
  std::sort(matrices.begin(), matrices.end());
  std::vector<fs::path> written;
  for (const auto& p : matrices) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(p));
    } catch (const nlohmann::json::parse_error&) {
      continue;
    }
    if (!j.is_object() || j.value("kind", "") != "matrix") continue;
    const Matrix m = matrix_from_json(j);
    std::string svg = render_heatmap_svg(m);
    svg.insert(svg.find('\n') + 1, "<!-- fingerprint: " + fingerprint + " -->\n");
    const fs::path out = fs::path(p).replace_extension(".svg");
    write_file(out, svg);
    write_file(fs::path(p).replace_extension(".csv"), matrix_to_csv(m, fingerprint));
    written.push_back(out);
  }
  return written;
}

}  // namespace langsteer
