#pragma once

// Deterministic synthetic cross-platform corpora.
//
// Every platform draws from a shared core of neutral words and a shared core
// of abusive words, plus its own filler vocabulary, a handful of frequent
// platform markers and its own abusive slang. A post is labelled 1 exactly when it contains an abusive word.
// Platforms differ in post length and surface vocabulary, so
// a classifier trained on one platform meets unseen tokens on another.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "xpcb/corpus.hpp"

namespace xpcb {

struct SyntheticPlatform {
    std::string name;
    std::size_t min_tokens = 4;
    std::size_t max_tokens = 16;
    double positive_rate = 0.3;
    double core_share = 0.5;          // probability a neutral token comes from the shared core
    double core_abuse_share = 0.7;    // probability an abusive token comes from the shared core
    double marker_rate = 0.95;        // probability a post opens with a platform marker

    bool operator==(const SyntheticPlatform&) const = default;
};

struct SyntheticConfig {
    std::uint64_t seed = 0;
    std::size_t records_per_platform = 5000;
    std::size_t core_neutral_words = 150;
    std::size_t core_abusive_words = 30;
    std::size_t platform_filler_words = 150;
    std::size_t platform_abusive_words = 15;
    std::size_t platform_markers = 4;  // frequent platform-specific tokens (think "rt", "@user")
    std::vector<SyntheticPlatform> platforms;

    // Three platforms: short, long and medium posts. They share one positive
    // rate, so the shift is in vocabulary and length and not in the label prior.
    static SyntheticConfig standard(std::size_t platform_count = 3);
    bool operator==(const SyntheticConfig&) const = default;
};

// One record list per platform, in platform order.
std::vector<std::vector<PostRecord>> generate_synthetic(const SyntheticConfig& cfg);

}  // namespace xpcb
