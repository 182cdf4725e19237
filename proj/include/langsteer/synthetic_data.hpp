#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "langsteer/corpus.hpp"
#include "langsteer/eval.hpp"
#include "langsteer/lss.hpp"

namespace langsteer::synthetic {

inline constexpr const char* kLangA = "aa";
inline constexpr const char* kLangB = "bb";

enum class Alphabet { a, b };

struct ProbeSpec {
  std::size_t items_per_direction = 240;
  double loanword_rate = 0.6;        // prompts containing one word of the other alphabet
  double trailing_space_rate = 0.3;  // prompts ending in a space instead of a letter
  double duplicate_rate = 0.05;      // items whose answers coincide across languages
};

/// Deterministic text generator over the two synthetic alphabets. Draws use
/// modulo reduction of mt19937_64 output, so streams match across platforms.
class TextGenerator {
 public:
  explicit TextGenerator(std::uint64_t seed) : engine_(seed) {}

  std::size_t uniform(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  bool chance(double p) { return static_cast<double>(engine_() >> 11) * 0x1.0p-53 < p; }

  char letter(Alphabet alphabet);
  std::string word(Alphabet alphabet, std::size_t min_len = 2, std::size_t max_len = 7);
  std::string sentence(Alphabet alphabet, std::size_t min_words, std::size_t max_words);

 private:
  std::mt19937_64 engine_;
};

/// Maps each letter to its counterpart in the other alphabet (rot13).
std::string counterpart(const std::string& text);

const char* language_code(Alphabet alphabet);

Corpus make_corpus(Alphabet alphabet, std::size_t sentences, std::uint64_t seed);
std::vector<ProbeItem> make_probes(const ProbeSpec& spec, std::uint64_t seed);
std::vector<McItem> make_mc_items(std::size_t per_language, std::uint64_t seed);
std::vector<TranslationPair> make_translation_pairs(Alphabet target, std::size_t count, std::uint64_t seed);

void write_probes(const std::vector<ProbeItem>& items, const std::filesystem::path& path);
void write_mc_items(const std::vector<McItem>& items, const std::filesystem::path& path);
void write_translation_pairs(const std::vector<TranslationPair>& pairs, const std::filesystem::path& path);

/// Writes the synthetic model, datasets and a ready-to-run config.json into `dir`.
void write_workspace(const std::filesystem::path& dir, std::uint64_t seed, float boost);

}  // namespace langsteer::synthetic
