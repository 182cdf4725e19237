#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "langsteer/error.hpp"
#include "langsteer/pipeline.hpp"
#include "langsteer/synthetic_data.hpp"

namespace {

using namespace langsteer;

struct Overrides {
  std::string config;
  std::string out;
  int threads = 0;
  std::optional<std::uint64_t> seed;
  std::string factors;
  std::string layers;
  std::string method;
  std::optional<double> m;
  std::optional<double> n;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void add_pipeline_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Run config (JSON)")->required();
  cmd->add_option("--out", o.out, "Artifact directory");
  cmd->add_option("--threads", o.threads, "Worker threads (default: machine parallelism)");
  cmd->add_option("--seed", o.seed, "Seed for randomly initialised models");
  cmd->add_option("--factors", o.factors, "Comma-separated steering factors");
  cmd->add_option("--layers", o.layers, "Comma-separated layer mask");
  cmd->add_option("--method", o.method, "Identification method")->check(CLI::IsMember({"lape", "baseline"}));
  cmd->add_option("--m", o.m, "Activation-probability percentile");
  cmd->add_option("--n", o.n, "Bottom LAPE fraction");
}

RunConfig effective_config(const Overrides& o) {
  RunConfig c = load_run_config(o.config);
  if (!o.out.empty()) c.out = o.out;
  if (o.threads != 0) c.threads = o.threads;
  if (o.seed) c.seed = o.seed;
  if (!o.factors.empty()) {
    c.factors.clear();
    for (const auto& f : split_list(o.factors)) c.factors.push_back(parse_factor_kind(f));
  }
  if (!o.layers.empty()) {
    std::vector<int> layers;
    for (const auto& l : split_list(o.layers)) {
      try {
        std::size_t used = 0;
        layers.push_back(std::stoi(l, &used));
        if (used != l.size()) throw std::invalid_argument(l);
      } catch (const std::exception&) {
        throw ConfigError("bad layer '" + l + "'");
      }
    }
    c.layers = layers;
  }
  if (!o.method.empty()) c.method = parse_identify_method(o.method);
  if (o.m) c.identify.prob_percentile = *o.m;
  if (o.n) c.identify.lape_bottom_fraction = *o.n;
  return c;
}

int run_stage(const Overrides& o, Stage through) {
  const RunConfig c = effective_config(o);
  const PipelineResult r = run_pipeline(c, through);
  std::cout << "artifacts: " << r.out.string() << "\nfingerprint: " << r.fingerprint << "\n";
  for (const auto& [factor, mean] : r.lss_means) std::cout << "mean LSS " << factor << ": " << mean << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-specific neuron identification and steering"};
  app.require_subcommand(1);

  std::string synth_out = "synthetic";
  std::uint64_t synth_seed = 1;
  float synth_boost = synthetic::kDefaultBoost;
  auto* synth = app.add_subcommand("synth", "Write the synthetic bilingual model, datasets and config");
  synth->add_option("--out", synth_out, "Workspace directory");
  synth->add_option("--seed", synth_seed, "Data generation seed");
  synth->add_option("--boost", synth_boost, "Logit boost per unit of language-neuron activation");

  Overrides o;
  const std::pair<const char*, Stage> stages[] = {{"identify", Stage::assignment},
                                                  {"factors", Stage::factors},
                                                  {"lss", Stage::lss},
                                                  {"eval", Stage::eval},
                                                  {"run", Stage::eval}};
  std::vector<std::pair<CLI::App*, Stage>> pipeline_cmds;
  for (const auto& [name, stage] : stages) {
    auto* cmd = app.add_subcommand(name, std::string("Run the pipeline through the ") + to_string(stage) + " stage");
    add_pipeline_flags(cmd, o);
    pipeline_cmds.emplace_back(cmd, stage);
  }

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Render SVG heatmaps for a completed artifact directory");
  report->add_option("--out", report_dir, "Artifact directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code(ErrorKind::config);
  }

  try {
    if (*synth) {
      synthetic::write_workspace(synth_out, synth_seed, synth_boost);
      std::cout << "wrote " << synth_out << "/config.json\n";
      return 0;
    }
    if (*report) {
      for (const auto& p : emit_report(report_dir)) std::cout << p.string() << "\n";
      return 0;
    }
    for (const auto& [cmd, stage] : pipeline_cmds) {
      if (*cmd) return run_stage(o, stage);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(ErrorKind::compute);
  }
  return 0;
}
