// SPDX-License-Identifier: Apache-2.0
//
// Synthetic byte-level corpus: every document draws from one shared
// "language" (a fixed lexicon with Zipfian frequencies and preferred word
// successors) plus document-local structure that only memorization can
// exploit beyond the attention window: a boosted topic vocabulary and a cast
// of invented names, each always followed by the same attribute word.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "locas/trainer.hpp"

namespace locas {

struct CorpusOptions {
    std::uint64_t seed = 0;
    int n_docs = 8;
    int doc_len = 16384;
    double vocab_skew = 1.1;  // Zipf exponent of the shared lexicon
};

struct SyntheticCorpus {
    Corpus documents;  // byte tokens, exactly doc_len each
    std::vector<std::string> texts;
    std::vector<std::vector<std::string>> entities;  // per document
};

// Deterministic in the options. Each entity appears at least 20 times per
// document once doc_len >= 2048.
SyntheticCorpus make_synthetic_corpus(const CorpusOptions& options);

// Non-overlapping occurrences of `needle` in `text`.
int count_occurrences(const std::string& text, const std::string& needle);

}  // namespace locas
