#include "langsteer/synthetic_data.hpp"

#include <cmath>
#include <cstdio>

#include "langsteer/error.hpp"
#include "langsteer/util.hpp"

namespace langsteer::synthetic {
namespace {

Alphabet other(Alphabet a) { return a == Alphabet::a ? Alphabet::b : Alphabet::a; }

std::string make_id(const std::string& prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05zu", i);
  return prefix + "-" + buf;
}

void write_jsonl(const std::vector<nlohmann::json>& rows, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  write_file(path, out);
}

}  // namespace

char TextGenerator::letter(Alphabet alphabet) {
  const char first = alphabet == Alphabet::a ? kAlphabetAFirst : kAlphabetBFirst;
  const char last = alphabet == Alphabet::a ? kAlphabetALast : kAlphabetBLast;
  return static_cast<char>(first + static_cast<char>(uniform(static_cast<std::size_t>(last - first + 1))));
}

std::string TextGenerator::word(Alphabet alphabet, std::size_t min_len, std::size_t max_len) {
  const std::size_t len = min_len + uniform(max_len - min_len + 1);
  std::string w;
  for (std::size_t i = 0; i < len; ++i) w += letter(alphabet);
  return w;
}

std::string TextGenerator::sentence(Alphabet alphabet, std::size_t min_words, std::size_t max_words) {
  const std::size_t n = min_words + uniform(max_words - min_words + 1);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) s += ' ';
    s += word(alphabet);
  }
  return s;
}

std::string counterpart(const std::string& text) {
  std::string out = text;
  for (char& c : out) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>('a' + (c - 'a' + 13) % 26);
  }
  return out;
}

const char* language_code(Alphabet alphabet) { return alphabet == Alphabet::a ? kLangA : kLangB; }

Corpus make_corpus(Alphabet alphabet, std::size_t sentences, std::uint64_t seed) {
  TextGenerator gen(seed);
  Corpus c;
  c.language = language_code(alphabet);
  for (std::size_t i = 0; i < sentences; ++i) {
    c.sentences.push_back({make_id(c.language, i), gen.sentence(alphabet, 4, 12)});
  }
  return c;
}

std::vector<ProbeItem> make_probes(const ProbeSpec& spec, std::uint64_t seed) {
  TextGenerator gen(seed);
  std::vector<ProbeItem> items;
  const auto duplicates = static_cast<std::size_t>(
      std::llround(spec.duplicate_rate * static_cast<double>(spec.items_per_direction)));
  for (Alphabet src : {Alphabet::a, Alphabet::b}) {
    const std::string prefix = std::string("probe-") + language_code(src);
    for (std::size_t i = 0; i < spec.items_per_direction + duplicates; ++i) {
      std::vector<std::string> words(3 + gen.uniform(6));
      for (auto& w : words) w = gen.word(src);
      if (gen.chance(spec.loanword_rate)) {
        // never the final word, so the last letter stays in the prompt's alphabet
        words[gen.uniform(words.size() - 1)] = gen.word(other(src));
      }
      std::string prompt;
      for (std::size_t w = 0; w < words.size(); ++w) prompt += (w > 0 ? " " : "") + words[w];
      if (gen.chance(spec.trailing_space_rate)) prompt += ' ';
      const std::string answer(1, gen.letter(src));
      ProbeItem item;
      item.id = make_id(prefix, i);
      item.prompt_lang = language_code(src);
      item.prompt = prompt;
      item.answers[language_code(src)] = answer;
      // planted collisions, dropped at load time
      item.answers[language_code(other(src))] = i >= spec.items_per_direction ? answer : counterpart(answer);
      items.push_back(std::move(item));
    }
  }
  return items;
}

std::vector<McItem> make_mc_items(std::size_t per_language, std::uint64_t seed) {
  TextGenerator gen(seed);
  std::vector<McItem> items;
  for (Alphabet lang : {Alphabet::a, Alphabet::b}) {
    for (std::size_t i = 0; i < per_language; ++i) {
      McItem item;
      item.id = make_id(std::string("mc-") + language_code(lang), i);
      item.lang = language_code(lang);
      item.prompt = gen.sentence(lang, 3, 8);
      if (gen.chance(0.5)) item.prompt += ' ';
      const std::string right = gen.word(lang);
      item.label = static_cast<int>(gen.uniform(2));
      item.options = item.label == 0 ? std::vector<std::string>{right, counterpart(right)}
                                     : std::vector<std::string>{counterpart(right), right};
      items.push_back(std::move(item));
    }
  }
  return items;
}

std::vector<TranslationPair> make_translation_pairs(Alphabet target, std::size_t count, std::uint64_t seed) {
  TextGenerator gen(seed);
  std::vector<TranslationPair> pairs;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string src = gen.sentence(other(target), 3, 6);
    pairs.push_back({make_id(std::string("tr-") + language_code(target), i), src, counterpart(src)});
  }
  return pairs;
}

void write_probes(const std::vector<ProbeItem>& items, const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  for (const auto& it : items) {
    rows.push_back({{"id", it.id}, {"prompt_lang", it.prompt_lang}, {"prompt", it.prompt}, {"answers", it.answers}});
  }
  write_jsonl(rows, path);
}

void write_mc_items(const std::vector<McItem>& items, const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  for (const auto& it : items) {
    rows.push_back(
        {{"id", it.id}, {"lang", it.lang}, {"prompt", it.prompt}, {"options", it.options}, {"label", it.label}});
  }
  write_jsonl(rows, path);
}

void write_translation_pairs(const std::vector<TranslationPair>& pairs, const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  for (const auto& p : pairs) rows.push_back({{"id", p.id}, {"src", p.src}, {"ref", p.ref}});
  write_jsonl(rows, path);
}

void write_workspace(const std::filesystem::path& dir, std::uint64_t seed, float boost) {
  std::filesystem::create_directories(dir);
  save_model(build_synthetic_bilingual_model(default_config(), boost), dir / "model.nsl");

  nlohmann::json corpora = nlohmann::json::object();
  nlohmann::json ppl = nlohmann::json::object();
  nlohmann::json translations = nlohmann::json::object();
  for (Alphabet lang : {Alphabet::a, Alphabet::b}) {
    const std::string code = language_code(lang);
    const std::uint64_t salt = lang == Alphabet::a ? 0 : 1;
    write_corpus(make_corpus(lang, 200, seed * 16 + salt), dir / (code + ".jsonl"));
    write_corpus(make_corpus(lang, 60, seed * 16 + 2 + salt), dir / ("ppl_" + code + ".jsonl"));
    write_translation_pairs(make_translation_pairs(lang, 20, seed * 16 + 4 + salt),
                            dir / ("translate_" + code + ".jsonl"));
    corpora[code] = code + ".jsonl";
    ppl[code] = "ppl_" + code + ".jsonl";
    translations[code] = "translate_" + code + ".jsonl";
  }
  write_probes(make_probes(ProbeSpec{}, seed * 16 + 6), dir / "probes.jsonl");
  write_mc_items(make_mc_items(100, seed * 16 + 7), dir / "mc.jsonl");

  const nlohmann::json config = {
      {"model", {{"path", "model.nsl"}}},
      {"languages", {kLangA, kLangB}},
      {"corpora", corpora},
      {"probes", "probes.jsonl"},
      {"mc", "mc.jsonl"},
      {"ppl_corpora", ppl},
      {"translations", translations},
      {"translation_template", "{src} = "},
      {"max_new_tokens", 24},
      {"identify", {{"method", "lape"}, {"m", 95.0}, {"n", 0.25}}},
      {"factors", {"pmax", "pmedian", "eq_max", "plus_max", "eq_zero", "eq_10p"}},
      {"eval_factor", "pmax"},
      {"seed", seed},
      {"out", "artifacts"}};
  write_file(dir / "config.json", config.dump(2) + "\n");
}

}  // namespace langsteer::synthetic
