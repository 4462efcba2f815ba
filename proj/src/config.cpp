#include "xpcb/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>

#include "xpcb/errors.hpp"

namespace xpcb {

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& what) {
    throw InputError("config line " + std::to_string(line) + ": " + what);
}

std::string_view trim(std::string_view s) {
    const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
    while (!s.empty() && ws(s.front())) s.remove_prefix(1);
    while (!s.empty() && ws(s.back())) s.remove_suffix(1);
    return s;
}

// Drops a trailing comment, ignoring '#' inside quoted strings.
std::string_view strip_comment(std::string_view s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (quoted && s[i] == '\\') {
            ++i;
        } else if (s[i] == '"') {
            quoted = !quoted;
        } else if (s[i] == '#' && !quoted) {
            return s.substr(0, i);
        }
    }
    return s;
}

// Splits on top-level commas (outside quotes); empty trailing item dropped.
std::vector<std::string_view> split_items(std::string_view body, std::size_t line) {
    std::vector<std::string_view> items;
    bool quoted = false;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= body.size(); ++i) {
        if (i < body.size() && quoted && body[i] == '\\') {
            ++i;
            continue;
        }
        if (i < body.size() && body[i] == '"') quoted = !quoted;
        if (i == body.size() || (body[i] == ',' && !quoted)) {
            const std::string_view item = trim(body.substr(start, i - start));
            if (item.empty() && i < body.size()) fail(line, "empty item in list");
            if (!item.empty()) items.push_back(item);
            start = i + 1;
        }
    }
    if (quoted) fail(line, "unterminated string");
    return items;
}

std::string parse_string(std::string_view raw, std::size_t line) {
    if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"') fail(line, "expected a quoted string");
    std::string out;
    for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
        char c = raw[i];
        if (c == '"') fail(line, "unescaped quote in string");
        if (c == '\\') {
            if (i + 2 >= raw.size()) fail(line, "dangling escape");
            c = raw[++i];
            if (c == 'n') c = '\n';
            else if (c == 't') c = '\t';
            else if (c != '\\' && c != '"') fail(line, "unknown escape");
        }
        out += c;
    }
    return out;
}

std::string quote(std::string_view s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') out += "\\n";
        else if (c == '\t') out += "\\t";
        else out += c;
    }
    return out + "\"";
}

std::uint64_t parse_uint(std::string_view raw, std::size_t line) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec != std::errc() || end != raw.data() + raw.size()) fail(line, "expected a non-negative integer");
    return v;
}

double parse_double(std::string_view raw, std::size_t line) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec != std::errc() || end != raw.data() + raw.size()) fail(line, "expected a number");
    return v;
}

bool parse_bool(std::string_view raw, std::size_t line) {
    if (raw == "true") return true;
    if (raw == "false") return false;
    fail(line, "expected true or false");
}

std::string format_double(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, end);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string_view inner(std::string_view raw, char open, char close, std::size_t line) {
    if (raw.size() < 2 || raw.front() != open || raw.back() != close)
        fail(line, std::string("expected a value enclosed in ") + open + close);
    return raw.substr(1, raw.size() - 2);
}

// Converts a library InputError from a value parser into one naming the line.
template <class F>
auto on_line(std::size_t line, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const InputError& e) {
        fail(line, e.what());
    }
}

struct Field {
    std::string section;
    std::string key;
    std::function<void(RunConfig&, std::string_view, std::size_t)> set;
    std::function<std::optional<std::string>(const RunConfig&)> get;
};

// `ref` is a generic lambda returning a reference into the config.
template <class Ref>
Field size_field(std::string section, std::string key, Ref ref) {
    return {std::move(section), std::move(key),
            [ref](RunConfig& c, std::string_view raw, std::size_t line) {
                ref(c) = static_cast<std::decay_t<decltype(ref(c))>>(parse_uint(raw, line));
            },
            [ref](const RunConfig& c) { return std::optional<std::string>(std::to_string(ref(c))); }};
}

template <class Ref>
Field double_field(std::string section, std::string key, Ref ref) {
    return {std::move(section), std::move(key),
            [ref](RunConfig& c, std::string_view raw, std::size_t line) { ref(c) = parse_double(raw, line); },
            [ref](const RunConfig& c) { return std::optional<std::string>(format_double(ref(c))); }};
}

template <class Ref>
Field bool_field(std::string section, std::string key, Ref ref) {
    return {std::move(section), std::move(key),
            [ref](RunConfig& c, std::string_view raw, std::size_t line) { ref(c) = parse_bool(raw, line); },
            [ref](const RunConfig& c) { return std::optional<std::string>(ref(c) ? "true" : "false"); }};
}

template <class Ref>
Field string_field(std::string section, std::string key, Ref ref) {
    return {std::move(section), std::move(key),
            [ref](RunConfig& c, std::string_view raw, std::size_t line) { ref(c) = parse_string(raw, line); },
            [ref](const RunConfig& c) { return std::optional<std::string>(quote(std::string(ref(c)))); }};
}

// Enumerations stored as strings.
template <class Ref, class Parse, class Name>
Field enum_field(std::string section, std::string key, Ref ref, Parse parse, Name name) {
    return {std::move(section), std::move(key),
            [ref, parse](RunConfig& c, std::string_view raw, std::size_t line) {
                const std::string s = parse_string(raw, line);
                ref(c) = on_line(line, [&] { return parse(s); });
            },
            [ref, name](const RunConfig& c) { return std::optional<std::string>(quote(name(ref(c)))); }};
}

DatasetFormat format_from(std::string_view s) { return parse_dataset_format(s); }
std::string format_to(DatasetFormat f) { return std::string(format_name(f)); }

KldDirection direction_from(std::string_view s) {
    if (s == "source_to_target") return KldDirection::source_to_target;
    if (s == "target_to_source") return KldDirection::target_to_source;
    throw InputError("unknown KLD direction: " + std::string(s));
}
std::string direction_to(KldDirection d) {
    return d == KldDirection::source_to_target ? "source_to_target" : "target_to_source";
}

ShareMode::Kind share_from(std::string_view s) {
    if (s == "full") return ShareMode::Kind::full;
    if (s == "partial") return ShareMode::Kind::partial;
    throw InputError("unknown share mode: " + std::string(s));
}
std::string share_to(ShareMode::Kind k) { return k == ShareMode::Kind::full ? "full" : "partial"; }

template <class Ref>
Field dataset_fields_path(std::string section, Ref ref) {
    return {section, "path",
            [ref](RunConfig& c, std::string_view raw, std::size_t line) { ref(c).path = parse_string(raw, line); },
            [ref](const RunConfig& c) { return std::optional<std::string>(quote(ref(c).path.string())); }};
}

template <class Ref>
Field label_map_field(std::string section, Ref ref) {
    return {std::move(section), "label_map",
            [ref](RunConfig& c, std::string_view raw, std::size_t line) {
                std::map<std::string, int> m;
                for (std::string_view item : split_items(inner(raw, '{', '}', line), line)) {
                    const std::size_t eq = item.find('=', item.find('"', 1) + 1);
                    if (eq == std::string_view::npos) fail(line, "expected \"name\" = 0|1 in label_map");
                    const std::string name = parse_string(trim(item.substr(0, eq)), line);
                    const std::uint64_t v = parse_uint(trim(item.substr(eq + 1)), line);
                    if (v > 1) fail(line, "label_map values must be 0 or 1");
                    if (!m.emplace(name, static_cast<int>(v)).second) fail(line, "duplicate label_map entry");
                }
                ref(c).label_map = std::move(m);
            },
            [ref](const RunConfig& c) {
                std::string s = "{";
                bool first = true;
                for (const auto& [k, v] : ref(c).label_map) {
                    s += (first ? " " : ", ") + quote(k) + " = " + std::to_string(v);
                    first = false;
                }
                return std::optional<std::string>(s + (first ? "}" : " }"));
            }};
}

template <class Ref>
std::vector<Field> dataset_fields(const std::string& section, Ref ref) {
    return {dataset_fields_path(section, ref),
            enum_field(section, "format", [ref](auto& c) -> auto& { return ref(c).format; }, format_from, format_to),
            string_field(section, "platform", [ref](auto& c) -> auto& { return ref(c).platform; }),
            label_map_field(section, ref)};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        auto add = [&](Field x) { f.push_back(std::move(x)); };
        auto add_all = [&](std::vector<Field> xs) {
            for (auto& x : xs) f.push_back(std::move(x));
        };

        add({"", "seed",
             [](RunConfig& c, std::string_view raw, std::size_t line) { c.set_seed(parse_uint(raw, line)); },
             [](const RunConfig& c) { return std::optional<std::string>(std::to_string(c.seed)); }});
        add({"", "out", [](RunConfig& c, std::string_view raw, std::size_t line) { c.out = parse_string(raw, line); },
             [](const RunConfig& c) { return std::optional<std::string>(quote(c.out.string())); }});

        add_all(dataset_fields("source", [](auto& c) -> auto& { return c.source; }));
        add_all(dataset_fields("target", [](auto& c) -> auto& { return c.target; }));

        add(size_field("tokenizer", "min_freq", [](auto& c) -> auto& { return c.pipeline.min_freq; }));
        add(size_field("tokenizer", "cap", [](auto& c) -> auto& { return c.pipeline.vocab_cap; }));

        add(bool_field("length", "search", [](auto& c) -> auto& { return c.pipeline.length_search; }));
        add(size_field("length", "fixed", [](auto& c) -> auto& { return c.pipeline.fixed_length; }));
        add({"length", "candidates",
             [](RunConfig& c, std::string_view raw, std::size_t line) {
                 std::vector<std::size_t> v;
                 for (std::string_view item : split_items(inner(raw, '[', ']', line), line))
                     v.push_back(parse_uint(item, line));
                 c.pipeline.length.candidates = std::move(v);
             },
             [](const RunConfig& c) {
                 std::string s = "[";
                 for (std::size_t i = 0; i < c.pipeline.length.candidates.size(); ++i)
                     s += (i ? ", " : "") + std::to_string(c.pipeline.length.candidates[i]);
                 return std::optional<std::string>(s + "]");
             }});
        add(size_field("length", "budget_epochs", [](auto& c) -> auto& { return c.pipeline.length.budget_epochs; }));
        add(size_field("length", "quick_layers", [](auto& c) -> auto& { return c.pipeline.length.quick_layers; }));
        add(size_field("length", "max_train_records",
                       [](auto& c) -> auto& { return c.pipeline.length.max_train_records; }));

        add(size_field("encoder", "d_model", [](auto& c) -> auto& { return c.pipeline.encoder.d_model; }));
        add(size_field("encoder", "n_layers", [](auto& c) -> auto& { return c.pipeline.encoder.n_layers; }));
        add(size_field("encoder", "n_heads", [](auto& c) -> auto& { return c.pipeline.encoder.n_heads; }));
        add(size_field("encoder", "d_ff", [](auto& c) -> auto& { return c.pipeline.encoder.d_ff; }));
        add(size_field("encoder", "max_positions", [](auto& c) -> auto& { return c.pipeline.encoder.max_positions; }));
        add(double_field("encoder", "dropout", [](auto& c) -> auto& { return c.pipeline.encoder.dropout_rate; }));
        add(enum_field(
            "encoder", "pooling", [](auto& c) -> auto& { return c.pipeline.encoder.pooling; }, parse_pooling,
            [](Pooling p) { return std::string(pooling_name(p)); }));

        add(size_field("heads", "width", [](auto& c) -> auto& { return c.pipeline.head_width; }));

        add(size_field("train", "batch_size", [](auto& c) -> auto& { return c.pipeline.source_train.batch_size; }));
        add(size_field("train", "epochs", [](auto& c) -> auto& { return c.pipeline.source_train.epochs; }));
        add(double_field("train", "learning_rate",
                         [](auto& c) -> auto& { return c.pipeline.source_train.adam.learning_rate; }));
        add(double_field("train", "beta1", [](auto& c) -> auto& { return c.pipeline.source_train.adam.beta1; }));
        add(double_field("train", "beta2", [](auto& c) -> auto& { return c.pipeline.source_train.adam.beta2; }));
        add(double_field("train", "eps", [](auto& c) -> auto& { return c.pipeline.source_train.adam.eps; }));
        add(double_field("train", "clamp_eps", [](auto& c) -> auto& { return c.pipeline.source_train.clamp_eps; }));
        add(size_field("train", "oversample_factor", [](auto& c) -> auto& { return c.pipeline.oversample_factor; }));
        add(double_field("train", "valid_fraction", [](auto& c) -> auto& { return c.pipeline.valid_fraction; }));

        add(size_field("adapt", "batch_size", [](auto& c) -> auto& { return c.pipeline.adapt.batch_size; }));
        add(size_field("adapt", "epochs", [](auto& c) -> auto& { return c.pipeline.adapt.epochs; }));
        add(double_field("adapt", "learning_rate",
                         [](auto& c) -> auto& { return c.pipeline.adapt.adam.learning_rate; }));
        add({"adapt", "discriminator_learning_rate",
             [](RunConfig& c, std::string_view raw, std::size_t line) {
                 c.pipeline.adapt.discriminator_learning_rate = parse_double(raw, line);
             },
             [](const RunConfig& c) -> std::optional<std::string> {
                 const auto& v = c.pipeline.adapt.discriminator_learning_rate;
                 if (!v) return std::nullopt;
                 return format_double(*v);
             }});
        add(size_field("adapt", "warmup_epochs",
                       [](auto& c) -> auto& { return c.pipeline.adapt.discriminator_warmup_epochs; }));
        add(double_field("adapt", "lambda_kld", [](auto& c) -> auto& { return c.pipeline.adapt.lambda_kld; }));
        add(enum_field(
            "adapt", "kld_direction", [](auto& c) -> auto& { return c.pipeline.adapt.kld_direction; }, direction_from,
            direction_to));
        add(double_field("adapt", "clamp_eps", [](auto& c) -> auto& { return c.pipeline.adapt.clamp_eps; }));
        add(double_field("adapt", "clip_threshold", [](auto& c) -> auto& { return c.pipeline.adapt.clip_threshold; }));
        add(double_field("adapt", "clip_norm", [](auto& c) -> auto& { return c.pipeline.adapt.clip_norm; }));
        add(enum_field(
            "adapt", "share", [](auto& c) -> auto& { return c.pipeline.share.kind; }, share_from, share_to));
        add(size_field("adapt", "frozen_layers", [](auto& c) -> auto& { return c.pipeline.share.frozen_layers; }));
        add(double_field("adapt", "target_test_fraction",
                         [](auto& c) -> auto& { return c.pipeline.target_test_fraction; }));
        add(double_field("adapt", "heldout_fraction", [](auto& c) -> auto& { return c.pipeline.heldout_fraction; }));

        add(size_field("probe", "iterations", [](auto& c) -> auto& { return c.pipeline.probe.iterations; }));
        add(double_field("probe", "learning_rate", [](auto& c) -> auto& { return c.pipeline.probe.learning_rate; }));
        add(double_field("probe", "l2", [](auto& c) -> auto& { return c.pipeline.probe.l2; }));
        add(double_field("probe", "held_out_fraction",
                         [](auto& c) -> auto& { return c.pipeline.probe.held_out_fraction; }));
        add(size_field("probe", "max_samples", [](auto& c) -> auto& { return c.pipeline.probe.max_samples; }));

        add(double_field("tsne", "perplexity", [](auto& c) -> auto& { return c.tsne.perplexity; }));
        add(size_field("tsne", "iterations", [](auto& c) -> auto& { return c.tsne.iterations; }));
        add(double_field("tsne", "learning_rate", [](auto& c) -> auto& { return c.tsne.learning_rate; }));
        add(double_field("tsne", "momentum_initial", [](auto& c) -> auto& { return c.tsne.momentum_initial; }));
        add(double_field("tsne", "momentum_final", [](auto& c) -> auto& { return c.tsne.momentum_final; }));
        add(size_field("tsne", "momentum_switch", [](auto& c) -> auto& { return c.tsne.momentum_switch; }));
        add(double_field("tsne", "exaggeration", [](auto& c) -> auto& { return c.tsne.exaggeration; }));
        add(size_field("tsne", "exaggeration_iterations",
                       [](auto& c) -> auto& { return c.tsne.exaggeration_iterations; }));
        add(size_field("tsne", "max_points", [](auto& c) -> auto& { return c.tsne.max_points; }));

        add({"benchmark", "datasets",
             [](RunConfig& c, std::string_view raw, std::size_t line) {
                 c.benchmark.datasets.clear();
                 for (std::string_view item : split_items(inner(raw, '[', ']', line), line))
                     c.benchmark.datasets.emplace_back(parse_string(item, line));
             },
             [](const RunConfig& c) {
                 std::string s = "[";
                 for (std::size_t i = 0; i < c.benchmark.datasets.size(); ++i)
                     s += (i ? ", " : "") + quote(c.benchmark.datasets[i].string());
                 return std::optional<std::string>(s + "]");
             }});
        add({"benchmark", "platforms",
             [](RunConfig& c, std::string_view raw, std::size_t line) {
                 c.benchmark.platforms.clear();
                 for (std::string_view item : split_items(inner(raw, '[', ']', line), line))
                     c.benchmark.platforms.push_back(parse_string(item, line));
             },
             [](const RunConfig& c) {
                 std::string s = "[";
                 for (std::size_t i = 0; i < c.benchmark.platforms.size(); ++i)
                     s += (i ? ", " : "") + quote(c.benchmark.platforms[i]);
                 return std::optional<std::string>(s + "]");
             }});
        add(enum_field(
            "benchmark", "format", [](auto& c) -> auto& { return c.benchmark.format; }, format_from, format_to));

        add({"synthetic", "platforms",
             [](RunConfig& c, std::string_view raw, std::size_t line) {
                 const std::uint64_t n = parse_uint(raw, line);
                 c.synthetic.platforms = on_line(line, [&] { return SyntheticConfig::standard(n).platforms; });
             },
             [](const RunConfig& c) { return std::optional<std::string>(std::to_string(c.synthetic.platforms.size())); }});
        add(size_field("synthetic", "records_per_platform",
                       [](auto& c) -> auto& { return c.synthetic.records_per_platform; }));
        add(size_field("synthetic", "core_neutral_words", [](auto& c) -> auto& { return c.synthetic.core_neutral_words; }));
        add(size_field("synthetic", "core_abusive_words", [](auto& c) -> auto& { return c.synthetic.core_abusive_words; }));
        add(size_field("synthetic", "platform_filler_words",
                       [](auto& c) -> auto& { return c.synthetic.platform_filler_words; }));
        add(size_field("synthetic", "platform_abusive_words",
                       [](auto& c) -> auto& { return c.synthetic.platform_abusive_words; }));
        add(size_field("synthetic", "platform_markers", [](auto& c) -> auto& { return c.synthetic.platform_markers; }));
        return f;
    }();
    return table;
}

const std::vector<std::string>& sections() {
    static const std::vector<std::string> names = {"",      "source", "target", "tokenizer", "length",
                                                   "encoder", "heads", "train",  "adapt",     "probe",
                                                   "tsne",  "benchmark", "synthetic"};
    return names;
}

bool valid_key(std::string_view key) {
    return !key.empty() && std::all_of(key.begin(), key.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
    });
}

}  // namespace

void RunConfig::set_seed(std::uint64_t s) {
    seed = s;
    pipeline.seed = s;
    tsne.seed = s;
    synthetic.seed = s;
}

void RunConfig::validate() const {
    pipeline.validate();
    tsne.validate();
    EncoderConfig probe_encoder = pipeline.encoder;
    probe_encoder.vocab_size = Vocabulary::kReserved + 1;
    probe_encoder.validate();
    if (!benchmark.platforms.empty() && benchmark.platforms.size() != benchmark.datasets.size())
        throw InputError("benchmark.platforms must name every benchmark dataset");
    if (benchmark.datasets.size() == 1) throw InputError("benchmark needs at least two datasets");
    if (synthetic.records_per_platform < 10) throw InputError("synthetic.records_per_platform must be at least 10");
    if (synthetic.platforms.size() < 2) throw InputError("synthetic benchmark needs at least two platforms");
}

RunConfig parse_run_config(std::string_view text) {
    RunConfig cfg;
    std::string section;
    std::set<std::string> seen_sections{""};
    std::set<std::pair<std::string, std::string>> seen_keys;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = std::min(text.find('\n', pos), text.size());
        const std::string_view line = trim(strip_comment(text.substr(pos, nl - pos)));
        pos = nl + 1;
        ++line_no;
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(line_no, "malformed section header");
            section = std::string(trim(line.substr(1, line.size() - 2)));
            if (std::find(sections().begin(), sections().end(), section) == sections().end() || section.empty())
                fail(line_no, "unknown section [" + section + "]");
            if (!seen_sections.insert(section).second) fail(line_no, "duplicate section [" + section + "]");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) fail(line_no, "expected key = value");
        const std::string key(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));
        if (!valid_key(key)) fail(line_no, "malformed key '" + key + "'");
        if (value.empty()) fail(line_no, "missing value for '" + key + "'");
        const auto it = std::find_if(fields().begin(), fields().end(),
                                     [&](const Field& f) { return f.section == section && f.key == key; });
        const std::string where = section.empty() ? "at top level" : "in [" + section + "]";
        if (it == fields().end()) fail(line_no, "unknown key '" + key + "' " + where);
        if (!seen_keys.emplace(section, key).second) fail(line_no, "duplicate key '" + key + "' " + where);
        it->set(cfg, value, line_no);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("config not found: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_run_config(buf.str());
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

std::string serialize_run_config(const RunConfig& cfg) {
    std::string out;
    for (const std::string& section : sections()) {
        std::string body;
        for (const Field& f : fields()) {
            if (f.section != section) continue;
            if (const auto v = f.get(cfg)) body += f.key + " = " + *v + "\n";
        }
        if (!section.empty()) out += "\n[" + section + "]\n";
        out += body;
    }
    return out;
}

}  // namespace xpcb
