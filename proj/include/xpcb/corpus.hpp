#pragma once

// Dataset ingestion, vocabulary, fixed-length encoding, oversampling and
// batching.
//
// Labels live behind an audited accessor: every label read on a Corpus (or on
// any split/subset derived from it) increments a shared counter. Adaptation
// code only ever receives an UnlabeledView, which has no labels at all.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xpcb {

enum class DatasetFormat { jsonl, csv };

DatasetFormat parse_dataset_format(std::string_view name);
std::string_view format_name(DatasetFormat format);

struct PostRecord {
    std::string text;
    std::optional<int> label;  // 0 = non-bullying, 1 = bullying
    std::string platform;
};

class UnlabeledView;

class Corpus {
public:
    Corpus() : audit_(std::make_shared<Audit>()) {}
    explicit Corpus(std::vector<PostRecord> records);

    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    const std::string& text(std::size_t i) const { return records_.at(i).text; }
    const std::string& platform(std::size_t i) const { return records_.at(i).platform; }
    bool has_label(std::size_t i) const { return records_.at(i).label.has_value(); }
    bool fully_labeled() const;

    // Audited. Throws InputError if the record has no label.
    int label(std::size_t i) const;
    std::size_t label_reads() const { return audit_->reads; }

    // Records at the given indices, in that order. Shares the label audit.
    Corpus subset(std::span<const std::size_t> indices) const;
    Corpus concat(const Corpus& tail) const;

    UnlabeledView unlabeled() const;
    std::vector<std::string> texts() const;

private:
    struct Audit {
        std::size_t reads = 0;
    };

    std::vector<PostRecord> records_;
    std::shared_ptr<Audit> audit_;
};

// Label-free view of a corpus. Used for every target-side stage before
// final evaluation.
class UnlabeledView {
public:
    UnlabeledView() = default;
    UnlabeledView(std::vector<std::string> texts, std::string platform)
        : texts_(std::move(texts)), platform_(std::move(platform)) {}

    std::size_t size() const { return texts_.size(); }
    bool empty() const { return texts_.empty(); }
    const std::string& text(std::size_t i) const { return texts_.at(i); }
    const std::vector<std::string>& texts() const { return texts_; }
    const std::string& platform() const { return platform_; }

private:
    std::vector<std::string> texts_;
    std::string platform_;
};

struct DatasetOptions {
    std::string platform;
    // Fine-grained label name -> {0,1}. When non-empty, every label value is
    // looked up here by its string form.
    std::map<std::string, int> label_map;
};

Corpus load_dataset(const std::filesystem::path& path, DatasetFormat format,
                    const DatasetOptions& options = {});
void write_dataset_jsonl(const std::filesystem::path& path, std::span<const PostRecord> records);

// Lowercase, then split on whitespace; every ASCII punctuation character is a
// token of its own.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kUnk = 1;
    static constexpr std::int32_t kBos = 2;
    static constexpr std::size_t kReserved = 3;

    Vocabulary();
    // Non-reserved tokens in id order (ids start at kReserved).
    explicit Vocabulary(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    std::int32_t id(std::string_view token) const;  // kUnk when absent
    bool contains(std::string_view token) const;
    const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;  // includes reserved
    std::unordered_map<std::string, std::int32_t> index_;
};

// Tokens with frequency >= min_freq, ranked by descending frequency then
// lexicographically, truncated so that the total size (reserved included)
// does not exceed cap.
Vocabulary build_vocab(std::span<const std::string> texts, std::size_t min_freq, std::size_t cap);
Vocabulary build_vocab(const Corpus& corpus, std::size_t min_freq, std::size_t cap);

struct EncodedRow {
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> mask;
};

EncodedRow encode_text(std::string_view text, const Vocabulary& vocab, std::size_t max_len);
std::string decode(std::span<const std::int32_t> ids, const Vocabulary& vocab);

// A fixed-length encoded corpus. labels is empty for unlabeled data.
struct EncodedCorpus {
    std::size_t max_len = 0;
    std::vector<std::int32_t> ids;   // [size x max_len]
    std::vector<std::uint8_t> mask;  // [size x max_len]
    std::vector<int> labels;

    std::size_t size() const { return max_len == 0 ? 0 : ids.size() / max_len; }
    bool labeled() const { return !labels.empty(); }
    EncodedCorpus subset(std::span<const std::size_t> indices) const;
};

EncodedCorpus encode_corpus(const Corpus& corpus, const Vocabulary& vocab, std::size_t max_len);
EncodedCorpus encode_corpus(const UnlabeledView& view, const Vocabulary& vocab, std::size_t max_len);

struct TokenBatch {
    std::size_t batch = 0;
    std::size_t max_len = 0;
    std::vector<std::int32_t> ids;   // [batch x max_len]
    std::vector<std::uint8_t> mask;  // [batch x max_len]
    std::vector<int> labels;         // empty when unlabeled

    // Length of the longest unmasked prefix over all rows.
    std::size_t active_length() const;
};

TokenBatch gather_batch(const EncodedCorpus& corpus, std::span<const std::size_t> indices);

// Seeded shuffle, then consecutive batches of at most batch_size records.
std::vector<TokenBatch> make_batches(const EncodedCorpus& corpus, std::size_t batch_size,
                                     std::uint64_t seed);
// Same partition without shuffling (inference order).
std::vector<TokenBatch> sequential_batches(const EncodedCorpus& corpus, std::size_t batch_size);

// Every positive record appears `factor` times in total; copies are appended
// after the original records in original order.
Corpus oversample_positive(const Corpus& corpus, std::size_t factor);

// Seeded random split into (train, held_out). Reads no labels.
std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double held_out_fraction,
                                       std::uint64_t seed);

// Token counts include the BOS position.
std::vector<std::size_t> token_counts(std::span<const std::string> texts);
std::size_t percentile_length(std::span<const std::size_t> counts, double percentile);

}  // namespace xpcb
