// SPDX-License-Identifier: Apache-2.0
#include "locas/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "locas/errors.hpp"

namespace locas {

namespace {

// The shared language is fixed; only documents depend on the corpus seed.
constexpr std::uint64_t kLanguageSeed = 0x10CA5;
constexpr int kLexiconSize = 320;
constexpr int kSuccessors = 3;
constexpr int kTopicWords = 24;
constexpr double kMeanSentenceBytes = 80.0;  // conservative upper estimate
constexpr int kMentionsPerEntity = 24;

const char* const kOnsets[] = {"b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w",
                               "br", "st", "th", "sh", "tr", "gr", "pl"};
const char* const kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ee"};
const char* const kCodas[] = {"", "", "", "n", "r", "s", "t", "l", "m"};

std::string syllable(std::mt19937_64& rng) {
    auto pick = [&](auto& arr) {
        return std::string(arr[std::uniform_int_distribution<std::size_t>(0, std::size(arr) - 1)(rng)]);
    };
    return pick(kOnsets) + pick(kVowels) + pick(kCodas);
}

std::string word(std::mt19937_64& rng, int syllables) {
    std::string w;
    for (int i = 0; i < syllables; ++i) w += syllable(rng);
    return w;
}

struct Language {
    std::vector<std::string> lexicon;
    std::vector<std::array<int, kSuccessors>> successors;
    std::discrete_distribution<int> zipf;
};

Language make_language(double skew) {
    std::mt19937_64 rng(kLanguageSeed);
    Language lang;
    while (static_cast<int>(lang.lexicon.size()) < kLexiconSize) {
        const int syl = 1 + static_cast<int>(lang.lexicon.size() % 3);
        std::string w = word(rng, syl);
        if (std::find(lang.lexicon.begin(), lang.lexicon.end(), w) == lang.lexicon.end()) {
            lang.lexicon.push_back(std::move(w));
        }
    }
    std::uniform_int_distribution<int> any(0, kLexiconSize - 1);
    lang.successors.resize(kLexiconSize);
    for (auto& s : lang.successors) {
        for (int& v : s) v = any(rng);
    }
    std::vector<double> weights(kLexiconSize);
    for (int i = 0; i < kLexiconSize; ++i) {
        weights[static_cast<std::size_t>(i)] = 1.0 / std::pow(static_cast<double>(i + 1), skew);
    }
    lang.zipf = std::discrete_distribution<int>(weights.begin(), weights.end());
    return lang;
}

std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(s[0] - 'a' + 'A');
    return s;
}

}  // namespace

int count_occurrences(const std::string& text, const std::string& needle) {
    if (needle.empty()) return 0;
    int n = 0;
    for (std::size_t pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

SyntheticCorpus make_synthetic_corpus(const CorpusOptions& options) {
    if (options.n_docs < 0 || options.doc_len < 1) {
        throw ConfigError("make_synthetic_corpus: n_docs must be >= 0 and doc_len >= 1");
    }
    Language lang = make_language(options.vocab_skew);
    SyntheticCorpus out;
    for (int doc = 0; doc < options.n_docs; ++doc) {
        std::mt19937_64 rng(options.seed * 1000003ULL + static_cast<std::uint64_t>(doc) * 7919ULL + 17ULL);
        std::uniform_int_distribution<int> any(0, kLexiconSize - 1);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        std::vector<int> topic(kTopicWords);
        for (int& t : topic) t = any(rng);

        const int est_sentences = static_cast<int>(options.doc_len / kMeanSentenceBytes);
        const int n_entities = std::clamp(est_sentences / kMentionsPerEntity, 1, 24);
        std::vector<std::string> names;
        std::vector<int> attribute;
        while (static_cast<int>(names.size()) < n_entities) {
            std::string name = capitalize(word(rng, 2 + static_cast<int>(names.size() % 2)));
            if (std::find(names.begin(), names.end(), name) == names.end()) {
                names.push_back(std::move(name));
                attribute.push_back(any(rng));
            }
        }

        std::vector<int> round(static_cast<std::size_t>(n_entities));
        std::iota(round.begin(), round.end(), 0);
        std::size_t round_pos = round.size();

        std::string text;
        while (static_cast<int>(text.size()) < options.doc_len) {
            if (round_pos == round.size()) {
                std::shuffle(round.begin(), round.end(), rng);
                round_pos = 0;
            }
            const int entity = round[round_pos++];
            const int n_words = std::uniform_int_distribution<int>(6, 12)(rng);
            const int mention_at = std::uniform_int_distribution<int>(0, n_words - 1)(rng);
            int prev = any(rng);
            for (int w = 0; w < n_words; ++w) {
                if (w == mention_at) {
                    text += names[static_cast<std::size_t>(entity)];
                    text += ' ';
                    prev = attribute[static_cast<std::size_t>(entity)];
                    text += lang.lexicon[static_cast<std::size_t>(prev)];
                    text += w + 1 == n_words ? "" : " ";
                    continue;
                }
                const double u = unit(rng);
                int next;
                if (u < 0.35) {
                    next = lang.successors[static_cast<std::size_t>(prev)]
                                          [std::uniform_int_distribution<std::size_t>(0, kSuccessors - 1)(rng)];
                } else if (u < 0.6) {
                    next = topic[std::uniform_int_distribution<std::size_t>(0, topic.size() - 1)(rng)];
                } else {
                    next = lang.zipf(rng);
                }
                text += lang.lexicon[static_cast<std::size_t>(next)];
                text += w + 1 == n_words ? "" : " ";
                prev = next;
            }
            text += ". ";
        }
        text.resize(static_cast<std::size_t>(options.doc_len));
        out.documents.push_back(encode_bytes(text));
        out.texts.push_back(std::move(text));
        out.entities.push_back(std::move(names));
    }
    return out;
}

}  // namespace locas
