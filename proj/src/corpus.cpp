#include "langsteer/corpus.hpp"

#include <fstream>
#include <set>

#include "langsteer/error.hpp"
#include "langsteer/util.hpp"

namespace langsteer {
namespace {

std::string require_string(const nlohmann::json& row, const char* field, std::size_t line) {
  auto it = row.find(field);
  if (it == row.end()) throw ParseError(line, std::string("missing field '") + field + "'");
  if (!it->is_string()) throw ParseError(line, std::string("field '") + field + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

Corpus ingest_corpus(const std::filesystem::path& path, const std::optional<std::string>& expected_lang) {
  Corpus corpus;
  std::set<std::string> ids;
  std::set<std::string> langs;
  for_each_jsonl(path, [&](std::size_t line, const nlohmann::json& row) {
    Sentence s;
    s.id = require_string(row, "id", line);
    const std::string lang = require_string(row, "lang", line);
    s.text = require_string(row, "text", line);
    if (expected_lang && lang != *expected_lang) return;
    if (s.text.empty()) throw ParseError(line, "empty text for id '" + s.id + "'");
    if (!ids.insert(s.id).second) {
      throw DataError("duplicate sentence id '" + s.id + "' at line " + std::to_string(line) + " of '" +
                      path.string() + "'");
    }
    langs.insert(lang);
    corpus.sentences.push_back(std::move(s));
  });
  if (expected_lang) {
    corpus.language = *expected_lang;
  } else if (langs.size() == 1) {
    corpus.language = *langs.begin();
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::string out;
  for (const auto& s : corpus.sentences) {
    nlohmann::json row = {{"id", s.id}, {"lang", corpus.language}, {"text", s.text}};
    out += row.dump();
    out += '\n';
  }
  write_file(path, out);
}

LanguageProfile::LanguageProfile(std::string lang, int layers, int units, bool store)
    : language(std::move(lang)), n_layers(layers), d_ff(units), store_token_values(store) {
  const auto n = static_cast<std::size_t>(layers) * static_cast<std::size_t>(units);
  token_count.assign(n, 0);
  positive_count.assign(n, 0);
  sentence_means.assign(n, {});
  if (store) token_values.assign(n, {});
}

double LanguageProfile::activation_probability(std::size_t flat) const {
  if (token_count[flat] == 0) return 0.0;
  return static_cast<double>(positive_count[flat]) / static_cast<double>(token_count[flat]);
}

void LanguageProfile::add_sentence(const ActivationCapture& capture, std::size_t first_position) {
  if (capture.n_layers() != n_layers || capture.d_ff() != d_ff) {
    throw ContractError("capture dimensions do not match profile");
  }
  if (first_position >= capture.seq_len()) return;
  const std::size_t tokens = capture.seq_len() - first_position;
  for (int layer = 0; layer < n_layers; ++layer) {
    for (int unit = 0; unit < d_ff; ++unit) {
      const std::size_t flat = NeuronId{layer, unit}.flat(d_ff);
      double sum = 0.0;
      std::uint64_t positive = 0;
      for (std::size_t t = first_position; t < capture.seq_len(); ++t) {
        const float a = capture.at(layer, t, unit);
        sum += static_cast<double>(a);
        if (a > 0.0f) ++positive;
        if (store_token_values) token_values[flat].push_back(a);
      }
      token_count[flat] += tokens;
      positive_count[flat] += positive;
      sentence_means[flat].push_back(sum / static_cast<double>(tokens));
    }
  }
  ++sentences_seen;
}

LanguageProfile accumulate_profile(const Model& model, const Corpus& corpus, bool store_token_values,
                                   int threads) {
  if (corpus.sentences.empty()) throw ContractError("accumulate_profile needs a non-empty corpus");
  const auto& cfg = model.config();
  const std::size_t n = corpus.sentences.size();
  const std::size_t shards = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  std::vector<LanguageProfile> parts(shards);
  parallel_for(shards, threads, [&](std::size_t s) {
    LanguageProfile p(corpus.language, cfg.n_layers, cfg.d_ff, store_token_values);
    const std::size_t begin = n * s / shards;
    const std::size_t end = n * (s + 1) / shards;
    for (std::size_t i = begin; i < end; ++i) {
      TokenSequence tokens;
      try {
        tokens = tokenize(corpus.sentences[i].text, static_cast<std::size_t>(cfg.max_seq_len));
      } catch (const LengthError&) {
        ++p.skipped_sentences;
        continue;
      }
      const ForwardResult fr = model.forward(tokens, {nullptr, nullptr, true});
      p.add_sentence(*fr.capture, 1);
    }
    parts[s] = std::move(p);
  });
  LanguageProfile out = std::move(parts[0]);
  for (std::size_t s = 1; s < shards; ++s) out = merge_profiles(out, parts[s]);
  out.model_fingerprint = model.fingerprint();
  return out;
}

LanguageProfile merge_profiles(const LanguageProfile& a, const LanguageProfile& b) {
  if (a.language != b.language) {
    throw DataError("cannot merge profiles of languages '" + a.language + "' and '" + b.language + "'");
  }
  if (a.n_layers != b.n_layers || a.d_ff != b.d_ff) {
    throw DataError("cannot merge profiles with different model dimensions");
  }
  if (a.store_token_values != b.store_token_values) {
    throw DataError("cannot merge profiles with different token_values settings");
  }
  LanguageProfile out = a;
  out.sentences_seen += b.sentences_seen;
  out.skipped_sentences += b.skipped_sentences;
  for (std::size_t i = 0; i < out.neuron_count(); ++i) {
    out.token_count[i] += b.token_count[i];
    out.positive_count[i] += b.positive_count[i];
    out.sentence_means[i].insert(out.sentence_means[i].end(), b.sentence_means[i].begin(),
                                 b.sentence_means[i].end());
    if (out.store_token_values) {
      out.token_values[i].insert(out.token_values[i].end(), b.token_values[i].begin(),
                                 b.token_values[i].end());
    }
  }
  if (out.model_fingerprint.empty()) out.model_fingerprint = b.model_fingerprint;
  return out;
}

nlohmann::json profile_to_json(const LanguageProfile& p) {
  nlohmann::json j = {{"language", p.language},
                      {"model_fingerprint", p.model_fingerprint},
                      {"n_layers", p.n_layers},
                      {"d_ff", p.d_ff},
                      {"store_token_values", p.store_token_values},
                      {"sentences_seen", p.sentences_seen},
                      {"skipped_sentences", p.skipped_sentences},
                      {"token_count", p.token_count},
                      {"positive_count", p.positive_count},
                      {"sentence_means", p.sentence_means}};
  if (p.store_token_values) j["token_values"] = p.token_values;
  return j;
}

LanguageProfile profile_from_json(const nlohmann::json& j) {
  try {
    LanguageProfile p(j.at("language").get<std::string>(), j.at("n_layers").get<int>(),
                      j.at("d_ff").get<int>(), j.at("store_token_values").get<bool>());
    p.model_fingerprint = j.at("model_fingerprint").get<std::string>();
    p.sentences_seen = j.at("sentences_seen").get<std::uint64_t>();
    p.skipped_sentences = j.at("skipped_sentences").get<std::uint64_t>();
    p.token_count = j.at("token_count").get<std::vector<std::uint64_t>>();
    p.positive_count = j.at("positive_count").get<std::vector<std::uint64_t>>();
    p.sentence_means = j.at("sentence_means").get<std::vector<std::vector<double>>>();
    if (p.store_token_values) p.token_values = j.at("token_values").get<std::vector<std::vector<float>>>();
    const std::size_t n = static_cast<std::size_t>(p.n_layers) * static_cast<std::size_t>(p.d_ff);
    if (p.token_count.size() != n || p.positive_count.size() != n || p.sentence_means.size() != n ||
        (p.store_token_values && p.token_values.size() != n)) {
      throw DataError("profile snapshot arrays do not match n_layers * d_ff");
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid profile snapshot: ") + e.what());
  }
}

}  // namespace langsteer
