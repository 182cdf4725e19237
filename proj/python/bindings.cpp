#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "langsteer/corpus.hpp"
#include "langsteer/error.hpp"
#include "langsteer/eval.hpp"
#include "langsteer/identify.hpp"
#include "langsteer/lss.hpp"
#include "langsteer/pipeline.hpp"
#include "langsteer/steer.hpp"
#include "langsteer/synthetic_data.hpp"
#include "langsteer/tokenizer.hpp"
#include "langsteer/util.hpp"

namespace py = pybind11;
using namespace langsteer;

namespace {

using Neuron = std::pair<int, int>;

std::vector<NeuronId> to_ids(const std::vector<Neuron>& ns) {
  std::vector<NeuronId> out;
  for (auto [l, u] : ns) out.push_back({l, u});
  return out;
}

std::vector<Neuron> from_ids(const std::vector<NeuronId>& ids) {
  std::vector<Neuron> out;
  for (auto id : ids) out.emplace_back(id.layer, id.unit);
  return out;
}

Corpus make_corpus(const std::string& language, const std::vector<std::string>& texts) {
  Corpus c{language, {}};
  for (std::size_t i = 0; i < texts.size(); ++i) c.sentences.push_back({std::to_string(i), texts[i]});
  return c;
}

Stage parse_stage(const std::string& name) {
  for (Stage s : kAllStages) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown stage '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_langsteer, m) {
  m.doc() = "Language-specific neuron identification and steering";

  static py::exception<Error> base(m, "LangsteerError", PyExc_RuntimeError);
  static py::exception<ConfigError> config_error(m, "ConfigError", base.ptr());
  static py::exception<DataError> data_error(m, "DataError", base.ptr());
  static py::exception<ComputeError> compute_error(m, "ComputeError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      switch (e.kind()) {
        case ErrorKind::config:
          py::set_error(config_error, e.what());
          return;
        case ErrorKind::data:
          py::set_error(data_error, e.what());
          return;
        case ErrorKind::compute:
          py::set_error(compute_error, e.what());
          return;
      }
    }
  });

  std::vector<std::string> factors;
  for (FactorKind k : kAllFactors) factors.emplace_back(to_string(k));
  m.attr("FACTORS") = factors;

  m.def("tokenize", [](const std::string& text, std::size_t max_seq_len) { return tokenize(text, max_seq_len); },
        py::arg("text"), py::arg("max_seq_len") = 128);
  m.def("detokenize", [](const std::vector<TokenId>& ids) { return py::bytes(detokenize(ids)); }, py::arg("ids"));

  py::class_<Model, std::shared_ptr<Model>>(m, "Model")
      .def_property_readonly("n_layers", [](const Model& x) { return x.config().n_layers; })
      .def_property_readonly("d_model", [](const Model& x) { return x.config().d_model; })
      .def_property_readonly("d_ff", [](const Model& x) { return x.config().d_ff; })
      .def_property_readonly("vocab_size", [](const Model& x) { return x.config().vocab_size; })
      .def_property_readonly("max_seq_len", [](const Model& x) { return x.config().max_seq_len; })
      .def_property_readonly("fingerprint", &Model::fingerprint)
      .def(
          "logits",
          [](const Model& x, const std::string& text) {
            const auto fr = x.forward(tokenize(text, static_cast<std::size_t>(x.config().max_seq_len)));
            std::vector<std::vector<float>> rows;
            for (std::size_t p = 0; p < fr.seq_len; ++p) {
              const auto r = fr.logits_at(p);
              rows.emplace_back(r.begin(), r.end());
            }
            return rows;
          },
          py::arg("text"), "Logits [position][vocab] for BOS + the text's bytes.")
      .def(
          "activations",
          [](const Model& x, const std::string& text) {
            const auto fr = x.forward(tokenize(text, static_cast<std::size_t>(x.config().max_seq_len)),
                                      {nullptr, nullptr, true});
            std::vector<std::vector<std::vector<float>>> out(static_cast<std::size_t>(x.config().n_layers));
            for (int l = 0; l < x.config().n_layers; ++l) {
              for (std::size_t p = 0; p < fr.seq_len; ++p) {
                const auto r = fr.capture->row(l, p);
                out[static_cast<std::size_t>(l)].emplace_back(r.begin(), r.end());
              }
            }
            return out;
          },
          py::arg("text"), "FFN activations [layer][position][unit].")
      .def("save", [](const Model& x, const std::filesystem::path& p) { save_model(x, p); }, py::arg("path"));

  m.def("load_model", [](const std::filesystem::path& p) { return std::make_shared<Model>(load_model(p)); },
        py::arg("path"));
  m.def(
      "build_synthetic_model",
      [](float boost) {
        return std::make_shared<Model>(build_synthetic_bilingual_model(synthetic::default_config(), boost));
      },
      py::arg("boost") = synthetic::kDefaultBoost);
  m.def(
      "random_model",
      [](std::uint64_t seed, int n_layers, int d_model, int n_heads, int d_ff, int max_seq_len, const std::string& ffn) {
        ModelConfig c;
        c.rng_seed = seed;
        c.n_layers = n_layers;
        c.d_model = d_model;
        c.n_heads = n_heads;
        c.d_ff = d_ff;
        c.max_seq_len = max_seq_len;
        if (ffn != "gelu" && ffn != "gated_silu") throw ConfigError("ffn must be 'gated_silu' or 'gelu'");
        c.ffn_kind = ffn == "gelu" ? FfnKind::gelu : FfnKind::gated_silu;
        return std::make_shared<Model>(Model::init(c));
      },
      py::arg("seed") = 1, py::arg("n_layers") = 2, py::arg("d_model") = 16, py::arg("n_heads") = 2,
      py::arg("d_ff") = 32, py::arg("max_seq_len") = 128, py::arg("ffn") = "gated_silu");

  py::class_<LanguageProfile>(m, "Profile")
      .def_readonly("language", &LanguageProfile::language)
      .def_readonly("sentences_seen", &LanguageProfile::sentences_seen)
      .def_readonly("skipped_sentences", &LanguageProfile::skipped_sentences)
      .def_readonly("token_count", &LanguageProfile::token_count)
      .def_readonly("positive_count", &LanguageProfile::positive_count)
      .def("activation_probability",
           [](const LanguageProfile& p, int layer, int unit) {
             const NeuronId id{layer, unit};
             if (layer < 0 || layer >= p.n_layers || unit < 0 || unit >= p.d_ff) {
               throw AddressingError("neuron outside profile");
             }
             return p.activation_probability(id.flat(p.d_ff));
           },
           py::arg("layer"), py::arg("unit"));

  m.def(
      "accumulate_profile",
      [](const Model& model, const std::vector<std::string>& texts, const std::string& language,
         bool store_token_values, int threads) {
        return accumulate_profile(model, make_corpus(language, texts), store_token_values, threads);
      },
      py::arg("model"), py::arg("texts"), py::arg("language"), py::arg("store_token_values") = false,
      py::arg("threads") = 1, py::call_guard<py::gil_scoped_release>());

  m.def(
      "identify",
      [](const std::vector<LanguageProfile>& profiles, const std::string& method, double pct, double frac) {
        NeuronSetAssignment a;
        if (parse_identify_method(method) == IdentifyMethod::baseline) {
          a = select_baseline_neurons(profiles);
        } else {
          IdentifyConfig cfg{pct, frac};
          cfg.validate();
          a = select_lape_neurons(lape_scores(profiles), cfg);
        }
        std::map<std::string, std::vector<Neuron>> out;
        for (const auto& lang : a.languages) out[lang] = from_ids(a.of(lang));
        return out;
      },
      py::arg("profiles"), py::arg("method") = "lape", py::arg("m") = 95.0, py::arg("n") = 0.01,
      "Language -> sorted list of (layer, unit).");

  m.def("lape_entropy", [](const std::vector<double>& p) { return lape_entropy(p); }, py::arg("p_hat"));

  py::class_<SteeringPlan>(m, "Plan")
      .def_property_readonly("kind", [](const SteeringPlan& p) { return std::string(to_string(p.kind())); })
      .def_property_readonly("language", &SteeringPlan::language)
      .def_property_readonly("neurons", [](const SteeringPlan& p) { return from_ids(p.neurons()); })
      .def_property_readonly("fixed_values",
                             [](const SteeringPlan& p) {
                               std::map<Neuron, float> out;
                               for (const auto& [id, v] : p.fixed_values()) out[{id.layer, id.unit}] = v;
                               return out;
                             })
      .def("to_json", [](const SteeringPlan& p) { return plan_to_json(p).dump(); });

  m.def(
      "make_plan",
      [](const std::string& kind, const LanguageProfile& profile, const std::vector<Neuron>& neurons,
         std::optional<std::vector<int>> layers) {
        return make_plan(parse_factor_kind(kind), profile, to_ids(neurons), layers);
      },
      py::arg("kind"), py::arg("profile"), py::arg("neurons"), py::arg("layers") = py::none());

  m.def(
      "perplexity",
      [](const Model& model, const std::vector<std::string>& texts, const SteeringPlan* plan, int threads) {
        return perplexity(model, make_corpus("", texts), plan, threads);
      },
      py::arg("model"), py::arg("texts"), py::arg("plan") = nullptr, py::arg("threads") = 1,
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "mc_accuracy",
      [](const Model& model, const std::vector<std::tuple<std::string, std::vector<std::string>, int>>& items,
         const SteeringPlan* plan) {
        std::vector<McItem> xs;
        for (const auto& [prompt, options, label] : items) {
          xs.push_back({std::to_string(xs.size()), "", prompt, options, label});
        }
        return mc_accuracy(model, xs, plan);
      },
      py::arg("model"), py::arg("items"), py::arg("plan") = nullptr,
      "items: list of (prompt, options, label).");

  m.def(
      "lss_score",
      [](const Model& model, const std::filesystem::path& probes, const std::string& source, const std::string& target,
         const SteeringPlan& plan, int threads) {
        const std::vector<std::string> langs = {source, target};
        const ProbeSet set = load_probes(probes, langs);
        std::vector<ProbeItem> items;
        for (const auto& it : set.items) {
          if (it.prompt_lang == source) items.push_back(it);
        }
        const LssResult r = lss_score(model, items, source, target, plan, threads);
        return std::map<std::string, double>{{"score", r.score},
                                             {"n_items", static_cast<double>(r.n_items)},
                                             {"n_shifted", static_cast<double>(r.n_shifted)},
                                             {"dropped", static_cast<double>(set.dropped)}};
      },
      py::arg("model"), py::arg("probes"), py::arg("source"), py::arg("target"), py::arg("plan"),
      py::arg("threads") = 1, py::call_guard<py::gil_scoped_release>());

  m.def(
      "greedy_generate",
      [](const Model& model, const std::string& prompt, const SteeringPlan* plan, int max_new_tokens) {
        std::string out;
        {
          py::gil_scoped_release release;
          out = greedy_generate(model, prompt, plan, max_new_tokens);
        }
        return py::bytes(out);
      },
      py::arg("model"), py::arg("prompt"), py::arg("plan") = nullptr, py::arg("max_new_tokens") = 16);

  m.def("bleu",
        [](const std::vector<std::string>& hyps, const std::vector<std::string>& refs) { return bleu(hyps, refs); },
        py::arg("hypotheses"), py::arg("references"));

  m.def("write_synthetic_workspace",
        [](const std::filesystem::path& dir, std::uint64_t seed, float boost) {
          synthetic::write_workspace(dir, seed, boost);
        },
        py::arg("dir"), py::arg("seed") = 7, py::arg("boost") = synthetic::kDefaultBoost);

  m.def(
      "run_pipeline",
      [](const std::filesystem::path& config, std::optional<std::filesystem::path> out, const std::string& through,
         std::optional<int> threads) {
        RunConfig c = load_run_config(config);
        if (out) c.out = *out;
        if (threads) c.threads = *threads;
        const Stage stage = parse_stage(through);
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(c, stage);
        }
        py::dict d;
        d["out"] = r.out.string();
        d["fingerprint"] = r.fingerprint;
        d["complete"] = r.complete;
        d["lss_means"] = r.lss_means;
        return d;
      },
      py::arg("config"), py::arg("out") = py::none(), py::arg("through") = "eval", py::arg("threads") = py::none());

  m.def(
      "emit_report",
      [](const std::filesystem::path& dir) {
        std::vector<std::string> out;
        for (const auto& p : emit_report(dir)) out.push_back(p.string());
        return out;
      },
      py::arg("dir"));
}
