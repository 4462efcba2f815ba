#include "xpcb/synthetic.hpp"

#include <set>

#include "xpcb/errors.hpp"
#include "xpcb/random.hpp"

namespace xpcb {

namespace {

constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "gr", "pl"};
constexpr const char* kNuclei[] = {"a", "e", "i", "o", "u", "ai", "ou", "ee"};

// Pronounceable pseudo-words, unique across every call sharing `taken`.
std::vector<std::string> make_words(std::size_t count, Rng& rng, std::set<std::string>& taken) {
    std::vector<std::string> out;
    while (out.size() < count) {
        std::string w;
        const std::size_t syllables = 2 + rng.index(2);
        for (std::size_t s = 0; s < syllables; ++s) {
            w += kOnsets[rng.index(std::size(kOnsets))];
            w += kNuclei[rng.index(std::size(kNuclei))];
        }
        if (taken.insert(w).second) out.push_back(w);
    }
    return out;
}

}  // namespace

SyntheticConfig SyntheticConfig::standard(std::size_t platform_count) {
    SyntheticConfig cfg;
    const SyntheticPlatform presets[] = {
        {"alpha", 4, 14, 0.20, 0.5, 0.7, 0.95},
        {"beta", 10, 30, 0.20, 0.5, 0.7, 0.95},
        {"gamma", 6, 22, 0.20, 0.5, 0.7, 0.95},
    };
    if (platform_count < 2 || platform_count > std::size(presets))
        throw InputError("standard synthetic benchmark has 2 or 3 platforms");
    cfg.platforms.assign(presets, presets + platform_count);
    return cfg;
}

std::vector<std::vector<PostRecord>> generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.platforms.empty()) throw InputError("synthetic benchmark needs at least one platform");
    Rng rng(cfg.seed);
    std::set<std::string> taken;
    const auto core_neutral = make_words(cfg.core_neutral_words, rng, taken);
    const auto core_abusive = make_words(cfg.core_abusive_words, rng, taken);

    std::vector<std::vector<PostRecord>> out;
    for (const SyntheticPlatform& p : cfg.platforms) {
        if (p.min_tokens == 0 || p.max_tokens < p.min_tokens) throw InputError("bad token range for " + p.name);
        const auto filler = make_words(cfg.platform_filler_words, rng, taken);
        const auto slang = make_words(cfg.platform_abusive_words, rng, taken);
        const auto markers = make_words(cfg.platform_markers, rng, taken);
        Rng prng = rng.fork(out.size() + 1);
        std::vector<PostRecord> records;
        records.reserve(cfg.records_per_platform);
        for (std::size_t i = 0; i < cfg.records_per_platform; ++i) {
            const std::size_t n = p.min_tokens + prng.index(p.max_tokens - p.min_tokens + 1);
            std::vector<std::string> tokens;
            for (std::size_t k = 0; k < n; ++k) {
                const bool core = prng.bernoulli(p.core_share) || filler.empty();
                tokens.push_back(core ? core_neutral[prng.index(core_neutral.size())]
                                      : filler[prng.index(filler.size())]);
            }
            const bool positive = prng.bernoulli(p.positive_rate);
            if (positive) {
                const std::size_t n_abusive = 1 + prng.index(2);
                for (std::size_t k = 0; k < n_abusive; ++k) {
                    const bool core = prng.bernoulli(p.core_abuse_share) || slang.empty();
                    const std::string& w = core ? core_abusive[prng.index(core_abusive.size())]
                                                : slang[prng.index(slang.size())];
                    tokens[prng.index(tokens.size())] = w;
                }
            }
            if (!markers.empty() && prng.bernoulli(p.marker_rate))
                tokens.insert(tokens.begin(), markers[prng.index(markers.size())]);
            std::string text;
            for (const auto& t : tokens) {
                if (!text.empty()) text += ' ';
                text += t;
            }
            records.push_back({std::move(text), positive ? 1 : 0, p.name});
        }
        out.push_back(std::move(records));
    }
    return out;
}

}  // namespace xpcb
