#include "xpcb/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "xpcb/errors.hpp"
#include "xpcb/random.hpp"

namespace xpcb {

namespace {

std::string where(const std::filesystem::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line) + ": ";
}

int map_label(const std::string& key, const DatasetOptions& options, const std::filesystem::path& path,
              std::size_t line) {
    if (!options.label_map.empty()) {
        auto it = options.label_map.find(key);
        if (it == options.label_map.end())
            throw InputError(where(path, line) + "unmapped label '" + key + "' (no collapse rule)");
        if (it->second != 0 && it->second != 1)
            throw InputError(where(path, line) + "label map target for '" + key + "' outside {0,1}");
        return it->second;
    }
    if (key == "0") return 0;
    if (key == "1") return 1;
    throw InputError(where(path, line) + "label '" + key + "' outside {0,1}");
}

std::optional<int> json_label(const nlohmann::json& obj, const DatasetOptions& options,
                              const std::filesystem::path& path, std::size_t line) {
    auto it = obj.find("label");
    if (it == obj.end() || it->is_null()) return std::nullopt;
    std::string key;
    if (it->is_boolean())
        key = it->get<bool>() ? "1" : "0";
    else if (it->is_number_integer())
        key = std::to_string(it->get<long long>());
    else if (it->is_number_float()) {
        const double v = it->get<double>();
        if (v != std::floor(v)) throw InputError(where(path, line) + "non-integer label");
        key = std::to_string(static_cast<long long>(v));
    } else if (it->is_string())
        key = it->get<std::string>();
    else
        throw InputError(where(path, line) + "label must be a number, boolean or string");
    return map_label(key, options, path, line);
}

Corpus load_jsonl(const std::filesystem::path& path, const DatasetOptions& options) {
    std::ifstream in(path);
    if (!in) throw InputError("dataset not found: " + path.string());
    std::vector<PostRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw InputError(where(path, line_no) + "malformed JSON line (" + e.what() + ")");
        }
        if (!obj.is_object()) throw InputError(where(path, line_no) + "record is not a JSON object");
        auto text = obj.find("text");
        if (text == obj.end() || !text->is_string())
            throw InputError(where(path, line_no) + "missing string field \"text\"");
        records.push_back({text->get<std::string>(), json_label(obj, options, path, line_no), options.platform});
    }
    return Corpus(std::move(records));
}

// RFC 4180 fields; quoted fields may span lines.
bool read_csv_row(std::istream& in, std::vector<std::string>& fields, std::size_t& line_no,
                  const std::filesystem::path& path) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    char c;
    while (in.get(c)) {
        any = true;
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field += '"';
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line_no;
                field += c;
            }
            continue;
        }
        if (c == '"' && field.empty()) {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            ++line_no;
            if (!field.empty() && field.back() == '\r') field.pop_back();
            fields.push_back(std::move(field));
            return true;
        } else {
            field += c;
        }
    }
    if (in_quotes) throw InputError(where(path, line_no + 1) + "unterminated quoted field");
    if (!any) return false;
    if (!field.empty() && field.back() == '\r') field.pop_back();
    fields.push_back(std::move(field));
    ++line_no;
    return true;
}

Corpus load_csv(const std::filesystem::path& path, const DatasetOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("dataset not found: " + path.string());
    std::vector<std::string> header;
    std::size_t line_no = 0;
    if (!read_csv_row(in, header, line_no, path)) throw InputError(where(path, 1) + "missing CSV header");
    auto col = [&](std::string_view name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    };
    const auto text_col = col("text");
    const auto label_col = col("label");
    if (!text_col) throw InputError(where(path, 1) + "CSV header has no \"text\" column");

    std::vector<PostRecord> records;
    std::vector<std::string> fields;
    while (true) {
        const std::size_t row_line = line_no + 1;
        if (!read_csv_row(in, fields, line_no, path)) break;
        if (fields.size() == 1 && fields[0].empty()) continue;
        if (fields.size() != header.size())
            throw InputError(where(path, row_line) + "expected " + std::to_string(header.size()) +
                             " fields, found " + std::to_string(fields.size()));
        std::optional<int> label;
        if (label_col && !fields[*label_col].empty())
            label = map_label(fields[*label_col], options, path, row_line);
        records.push_back({fields[*text_col], label, options.platform});
    }
    return Corpus(std::move(records));
}

bool is_token_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace

DatasetFormat parse_dataset_format(std::string_view name) {
    if (name == "jsonl") return DatasetFormat::jsonl;
    if (name == "csv") return DatasetFormat::csv;
    throw InputError("unknown dataset format: " + std::string(name));
}

std::string_view format_name(DatasetFormat format) {
    return format == DatasetFormat::jsonl ? "jsonl" : "csv";
}

// ---------------------------------------------------------------- Corpus

Corpus::Corpus(std::vector<PostRecord> records)
    : records_(std::move(records)), audit_(std::make_shared<Audit>()) {}

bool Corpus::fully_labeled() const {
    return std::all_of(records_.begin(), records_.end(), [](const PostRecord& r) { return r.label.has_value(); });
}

int Corpus::label(std::size_t i) const {
    const auto& r = records_.at(i);
    if (!r.label) throw InputError("record " + std::to_string(i) + " has no label");
    ++audit_->reads;
    return *r.label;
}

Corpus Corpus::subset(std::span<const std::size_t> indices) const {
    Corpus out;
    out.audit_ = audit_;
    out.records_.reserve(indices.size());
    for (std::size_t i : indices) out.records_.push_back(records_.at(i));
    return out;
}

Corpus Corpus::concat(const Corpus& tail) const {
    Corpus out = *this;
    out.records_.insert(out.records_.end(), tail.records_.begin(), tail.records_.end());
    return out;
}

UnlabeledView Corpus::unlabeled() const {
    return UnlabeledView(texts(), records_.empty() ? std::string() : records_.front().platform);
}

std::vector<std::string> Corpus::texts() const {
    std::vector<std::string> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.text);
    return out;
}

Corpus load_dataset(const std::filesystem::path& path, DatasetFormat format, const DatasetOptions& options) {
    if (!std::filesystem::exists(path)) throw InputError("dataset not found: " + path.string());
    return format == DatasetFormat::jsonl ? load_jsonl(path, options) : load_csv(path, options);
}

void write_dataset_jsonl(const std::filesystem::path& path, std::span<const PostRecord> records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write dataset: " + path.string());
    for (const auto& r : records) {
        nlohmann::json obj;
        obj["text"] = r.text;
        if (r.label) obj["label"] = *r.label;
        out << obj.dump() << '\n';
    }
}

// ---------------------------------------------------------------- Tokens

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) tokens.push_back(std::move(current));
        current.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::isspace(c)) {
            flush();
        } else if (is_token_punct(c)) {
            flush();
            tokens.emplace_back(1, ch);
        } else {
            current += c < 0x80 ? static_cast<char>(std::tolower(c)) : ch;
        }
    }
    flush();
    return tokens;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
    tokens_ = {"[PAD]", "[UNK]", "[BOS]"};
    for (auto& t : tokens) {
        if (index_.count(t) || t == "[PAD]" || t == "[UNK]" || t == "[BOS]")
            throw InputError("duplicate or reserved vocabulary token: " + t);
        index_.emplace(t, static_cast<std::int32_t>(tokens_.size()));
        tokens_.push_back(std::move(t));
    }
}

std::int32_t Vocabulary::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write vocabulary: " + path.string());
    for (std::size_t i = kReserved; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("vocabulary not found: " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    return Vocabulary(std::move(tokens));
}

Vocabulary build_vocab(std::span<const std::string> texts, std::size_t min_freq, std::size_t cap) {
    if (texts.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
    if (min_freq == 0) throw InputError("tokenizer.min_freq must be positive");
    if (cap < Vocabulary::kReserved) throw InputError("tokenizer.cap must be at least 3");
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& t : texts)
        for (auto& tok : tokenize(t)) ++freq[tok];
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (auto& [tok, n] : freq)
        if (n >= min_freq) ranked.emplace_back(tok, n);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    const std::size_t room = cap - Vocabulary::kReserved;
    if (ranked.size() > room) ranked.resize(room);
    std::vector<std::string> tokens;
    tokens.reserve(ranked.size());
    for (auto& [tok, n] : ranked) tokens.push_back(tok);
    return Vocabulary(std::move(tokens));
}

Vocabulary build_vocab(const Corpus& corpus, std::size_t min_freq, std::size_t cap) {
    const auto texts = corpus.texts();
    return build_vocab(std::span<const std::string>(texts), min_freq, cap);
}

EncodedRow encode_text(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
    if (max_len < 2) throw InputError("max_len must be at least 2");
    EncodedRow row{std::vector<std::int32_t>(max_len, Vocabulary::kPad), std::vector<std::uint8_t>(max_len, 0)};
    row.ids[0] = Vocabulary::kBos;
    row.mask[0] = 1;
    std::size_t pos = 1;
    for (const auto& tok : tokenize(text)) {
        if (pos >= max_len) break;
        row.ids[pos] = vocab.id(tok);
        row.mask[pos] = 1;
        ++pos;
    }
    return row;
}

std::string decode(std::span<const std::int32_t> ids, const Vocabulary& vocab) {
    std::string out;
    for (std::int32_t id : ids) {
        if (id == Vocabulary::kPad || id == Vocabulary::kBos) continue;
        if (!out.empty()) out += ' ';
        out += vocab.token(id);
    }
    return out;
}

// ---------------------------------------------------------------- Encoded

EncodedCorpus EncodedCorpus::subset(std::span<const std::size_t> indices) const {
    EncodedCorpus out;
    out.max_len = max_len;
    out.ids.reserve(indices.size() * max_len);
    out.mask.reserve(indices.size() * max_len);
    for (std::size_t i : indices) {
        out.ids.insert(out.ids.end(), ids.begin() + i * max_len, ids.begin() + (i + 1) * max_len);
        out.mask.insert(out.mask.end(), mask.begin() + i * max_len, mask.begin() + (i + 1) * max_len);
        if (labeled()) out.labels.push_back(labels[i]);
    }
    return out;
}

namespace {

EncodedCorpus encode_texts(std::span<const std::string> texts, const Vocabulary& vocab, std::size_t max_len) {
    EncodedCorpus out;
    out.max_len = max_len;
    out.ids.reserve(texts.size() * max_len);
    out.mask.reserve(texts.size() * max_len);
    for (const auto& t : texts) {
        auto row = encode_text(t, vocab, max_len);
        out.ids.insert(out.ids.end(), row.ids.begin(), row.ids.end());
        out.mask.insert(out.mask.end(), row.mask.begin(), row.mask.end());
    }
    return out;
}

}  // namespace

EncodedCorpus encode_corpus(const Corpus& corpus, const Vocabulary& vocab, std::size_t max_len) {
    const auto texts = corpus.texts();
    auto out = encode_texts(texts, vocab, max_len);
    if (corpus.fully_labeled() && !corpus.empty()) {
        out.labels.reserve(corpus.size());
        for (std::size_t i = 0; i < corpus.size(); ++i) out.labels.push_back(corpus.label(i));
    }
    return out;
}

EncodedCorpus encode_corpus(const UnlabeledView& view, const Vocabulary& vocab, std::size_t max_len) {
    return encode_texts(view.texts(), vocab, max_len);
}

std::size_t TokenBatch::active_length() const {
    std::size_t len = 1;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = max_len; t > len; --t)
            if (mask[b * max_len + t - 1]) {
                len = t;
                break;
            }
    return std::min(len, max_len);
}

TokenBatch gather_batch(const EncodedCorpus& corpus, std::span<const std::size_t> indices) {
    TokenBatch batch;
    batch.batch = indices.size();
    batch.max_len = corpus.max_len;
    batch.ids.reserve(indices.size() * corpus.max_len);
    batch.mask.reserve(indices.size() * corpus.max_len);
    for (std::size_t i : indices) {
        if (i >= corpus.size()) throw std::out_of_range("gather_batch index");
        auto first = i * corpus.max_len;
        batch.ids.insert(batch.ids.end(), corpus.ids.begin() + first, corpus.ids.begin() + first + corpus.max_len);
        batch.mask.insert(batch.mask.end(), corpus.mask.begin() + first,
                          corpus.mask.begin() + first + corpus.max_len);
        if (corpus.labeled()) batch.labels.push_back(corpus.labels[i]);
    }
    return batch;
}

namespace {

std::vector<TokenBatch> partition(const EncodedCorpus& corpus, std::span<const std::size_t> order,
                                  std::size_t batch_size) {
    if (batch_size == 0) throw InputError("batch size must be positive");
    std::vector<TokenBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t len = std::min(batch_size, order.size() - start);
        batches.push_back(gather_batch(corpus, order.subspan(start, len)));
    }
    return batches;
}

}  // namespace

std::vector<TokenBatch> make_batches(const EncodedCorpus& corpus, std::size_t batch_size, std::uint64_t seed) {
    if (batch_size == 0) throw InputError("batch size must be positive");
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    return partition(corpus, order, batch_size);
}

std::vector<TokenBatch> sequential_batches(const EncodedCorpus& corpus, std::size_t batch_size) {
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    return partition(corpus, order, batch_size);
}

Corpus oversample_positive(const Corpus& corpus, std::size_t factor) {
    if (factor == 0) throw InputError("oversampling factor must be at least 1");
    std::vector<std::size_t> order(corpus.size());
    std::vector<std::size_t> positives;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (!corpus.has_label(i)) throw InputError("cannot oversample: record " + std::to_string(i) + " is unlabeled");
        order[i] = i;
        if (corpus.label(i) == 1) positives.push_back(i);
    }
    for (std::size_t copy = 1; copy < factor; ++copy) order.insert(order.end(), positives.begin(), positives.end());
    return corpus.subset(order);
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double held_out_fraction, std::uint64_t seed) {
    if (held_out_fraction < 0.0 || held_out_fraction >= 1.0)
        throw InputError("held-out fraction must be in [0, 1)");
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    const auto held = static_cast<std::size_t>(std::llround(held_out_fraction * static_cast<double>(order.size())));
    std::vector<std::size_t> held_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
    std::sort(held_idx.begin(), held_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    return {corpus.subset(train_idx), corpus.subset(held_idx)};
}

std::vector<std::size_t> token_counts(std::span<const std::string> texts) {
    std::vector<std::size_t> counts;
    counts.reserve(texts.size());
    for (const auto& t : texts) counts.push_back(tokenize(t).size() + 1);
    return counts;
}

std::size_t percentile_length(std::span<const std::size_t> counts, double percentile) {
    if (counts.empty()) throw InputError("percentile of an empty corpus");
    std::vector<std::size_t> sorted(counts.begin(), counts.end());
    std::sort(sorted.begin(), sorted.end());
    // Nearest-rank percentile.
    auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(sorted.size())));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

}  // namespace xpcb
