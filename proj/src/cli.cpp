#include "xpcb/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "xpcb/checkpoint.hpp"
#include "xpcb/errors.hpp"
#include "xpcb/pipeline.hpp"
#include "xpcb/synthetic.hpp"
#include "xpcb/tsne.hpp"

namespace xpcb {

namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactMismatch("checkpoint not found: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// FNV-1a, stable across platforms and builds.
std::string digest(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string platform_name(const DatasetSpec& d) {
    return d.platform.empty() ? d.path.stem().string() : d.platform;
}

// The settings a stage's artifacts depend on. Output location, t-SNE and
// benchmark settings never matter; the source stage ignores adaptation.
std::string fingerprint(const RunConfig& cfg, bool source_stage) {
    RunConfig c = cfg;
    c.out.clear();
    c.tsne = TsneConfig{};
    c.benchmark = BenchmarkSpec{};
    c.synthetic = SyntheticConfig::standard(3);
    if (source_stage) {
        c.pipeline.adapt = TrainConfig{};
        c.pipeline.probe = ProbeConfig{};
        c.pipeline.share = ShareMode::full();
    }
    return serialize_run_config(c);
}

void prepare_out(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out, ec);
    if (ec) throw InputError("cannot create output directory " + cfg.out.string());
}

fs::path source_path(const RunConfig& cfg, const CommandPaths& p) {
    return p.source_ckpt.empty() ? cfg.out / "source.ckpt" : p.source_ckpt;
}
fs::path target_path(const RunConfig& cfg, const CommandPaths& p) {
    return p.target_ckpt.empty() ? cfg.out / "target.ckpt" : p.target_ckpt;
}

struct Loaded {
    Corpus source, target;
    Splits splits;
};

Loaded load_inputs(const RunConfig& cfg) {
    if (cfg.source.path.empty() || cfg.target.path.empty())
        throw InputError("config must set [source] path and [target] path");
    DatasetOptions so = cfg.source.options(), to = cfg.target.options();
    so.platform = platform_name(cfg.source);
    to.platform = platform_name(cfg.target);
    Loaded in{load_dataset(cfg.source.path, cfg.source.format, so),
              load_dataset(cfg.target.path, cfg.target.format, to), {}};
    in.splits = split_inputs(in.source, in.target, cfg.pipeline);
    return in;
}

struct SourceArtifact {
    SourceModel model;
    Vocabulary vocab;
    std::size_t max_len = 0;
    std::string digest;
};

SourceArtifact load_source(const RunConfig& cfg, const CommandPaths& paths) {
    const fs::path path = source_path(cfg, paths);
    const std::string bytes = read_bytes(path);
    const Checkpoint ckpt = Checkpoint::deserialize(bytes);
    const auto& h = ckpt.header;
    if (h.value("kind", "") != "source") throw ArtifactMismatch(path.string() + " is not a source checkpoint");
    if (h.value("fingerprint", "") != fingerprint(cfg, true))
        throw ArtifactMismatch(path.string() + " was produced with a different configuration");
    SourceArtifact a;
    a.vocab = Vocabulary(h.at("vocab").get<std::vector<std::string>>());
    const EncoderConfig expected = encoder_config_for(cfg.pipeline, a.vocab);
    a.model.encoder = load_encoder(ckpt, &expected);
    a.model.classifier = load_classifier(ckpt);
    a.model.layer = h.at("layer").get<std::size_t>();
    a.max_len = h.at("max_len").get<std::size_t>();
    a.digest = digest(bytes);
    return a;
}

struct TargetArtifact {
    EncoderParams<float> encoder;
    ClassifierParams<float> classifier;
    std::size_t pre_layer = 0;
    std::size_t post_layer = 0;
};

TargetArtifact load_target(const RunConfig& cfg, const CommandPaths& paths, const SourceArtifact& source) {
    const fs::path path = target_path(cfg, paths);
    const Checkpoint ckpt = Checkpoint::deserialize(read_bytes(path));
    const auto& h = ckpt.header;
    if (h.value("kind", "") != "target") throw ArtifactMismatch(path.string() + " is not a target checkpoint");
    if (h.value("fingerprint", "") != fingerprint(cfg, false))
        throw ArtifactMismatch(path.string() + " was produced with a different configuration");
    if (h.value("source_digest", "") != source.digest)
        throw ArtifactMismatch(path.string() + " was adapted from a different source checkpoint");
    TargetArtifact t;
    t.encoder = load_encoder(ckpt, &source.model.encoder.config);
    t.classifier = load_classifier(ckpt);
    t.pre_layer = h.at("pre_adversarial_layer").get<std::size_t>();
    t.post_layer = h.at("post_adversarial_layer").get<std::size_t>();
    return t;
}

ordered_json layer_scores_json(const LayerSelection& s) {
    ordered_json arr = ordered_json::array();
    for (std::size_t l = 0; l < s.scores.size(); ++l) {
        const LayerScore& x = s.scores[l];
        arr.push_back({{"layer", l},
                       {"task_score", x.task_score},
                       {"domain_accuracy", x.domain_accuracy},
                       {"domain_accuracy_post", x.domain_accuracy_post},
                       {"transfer_pre", x.transfer_pre},
                       {"transfer_post", x.transfer_post}});
    }
    return arr;
}

std::string fixed4(double v, bool sign = false) {
    char buf[32];
    std::snprintf(buf, sizeof buf, sign ? "%+.4f" : "%.4f", v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------- commands

void cmd_train_source(const RunConfig& cfg, const CommandPaths& paths) {
    cfg.validate();
    prepare_out(cfg);
    const Loaded in = load_inputs(cfg);
    const SourceStage s = run_source_stage(in.splits, cfg.pipeline);

    Checkpoint ckpt;
    ckpt.header["kind"] = "source";
    ckpt.header["fingerprint"] = fingerprint(cfg, true);
    ckpt.header["layer"] = s.source.model.layer;
    ckpt.header["max_len"] = s.max_len;
    const auto& tokens = s.vocab.tokens();
    ckpt.header["vocab"] = std::vector<std::string>(tokens.begin() + Vocabulary::kReserved, tokens.end());
    store_encoder(ckpt, s.source.model.encoder);
    store_classifier(ckpt, s.source.model.classifier);
    ckpt.save(source_path(cfg, paths));
    s.vocab.save(cfg.out / "vocab.txt");

    ordered_json history = ordered_json::array();
    for (const EpochStats& e : s.source.history)
        history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"valid_macro_f1", e.valid_macro_f1}});
    ordered_json j;
    j["source"] = platform_name(cfg.source);
    j["input_length"] = s.max_len;
    j["length_search"] = {{"candidates", s.length.candidates}, {"scores", s.length.scores}};
    j["best_epoch"] = s.source.best_epoch;
    j["steps"] = s.source.steps;
    j["history"] = history;
    j["valid"] = metrics_to_json(evaluate(s.source.model.encoder, s.source.model.classifier, s.source.model.layer,
                                          in.splits.source_valid, s.vocab, s.max_len));
    write_json(cfg.out / "source_metrics.json", j);
}

void cmd_adapt(const RunConfig& cfg, const CommandPaths& paths) {
    cfg.validate();
    prepare_out(cfg);
    const SourceArtifact src = load_source(cfg, paths);
    const Loaded in = load_inputs(cfg);
    const AdaptStage a = run_adapt_stage(in.splits, src.vocab, src.max_len, src.model, cfg.pipeline);

    Checkpoint ckpt;
    ckpt.header["kind"] = "target";
    ckpt.header["fingerprint"] = fingerprint(cfg, false);
    ckpt.header["source_digest"] = src.digest;
    ckpt.header["pre_adversarial_layer"] = a.selection.pre_adversarial_layer;
    ckpt.header["post_adversarial_layer"] = a.selection.post_adversarial_layer;
    store_encoder(ckpt, a.target_encoder);
    store_classifier(ckpt, a.target_classifier);
    store_discriminator(ckpt, a.discriminator);
    ckpt.save(target_path(cfg, paths));
    a.report.write_csv(cfg.out / "adapt_report.csv");

    ordered_json j;
    j["pre_adversarial_layer"] = a.selection.pre_adversarial_layer;
    j["post_adversarial_layer"] = a.selection.post_adversarial_layer;
    j["layers"] = layer_scores_json(a.selection);
    j["discriminator_heldout_accuracy_before"] = a.report.heldout_accuracy_before;
    j["discriminator_heldout_accuracy_after"] = a.report.final_accuracy();
    j["epoch_accuracy"] = a.report.epoch_accuracy;
    j["steps"] = a.report.steps.size();
    write_json(cfg.out / "adapt_summary.json", j);
}

void cmd_evaluate(const RunConfig& cfg, const CommandPaths& paths) {
    cfg.validate();
    prepare_out(cfg);
    const SourceArtifact src = load_source(cfg, paths);
    const TargetArtifact tgt = load_target(cfg, paths, src);
    const Loaded in = load_inputs(cfg);
    const Corpus& test = in.splits.target_test;
    const Metrics baseline = evaluate(src.model.encoder, src.model.classifier, src.model.layer, test, src.vocab,
                                      src.max_len);
    const Metrics adapted = evaluate(tgt.encoder, tgt.classifier, tgt.post_layer, test, src.vocab, src.max_len);
    ordered_json j;
    j["source"] = platform_name(cfg.source);
    j["target"] = platform_name(cfg.target);
    j["target_test_size"] = test.size();
    j["baseline"] = metrics_to_json(baseline);
    j["xpcb"] = metrics_to_json(adapted);
    j["delta_macro_f1"] = adapted.macro_f1 - baseline.macro_f1;
    write_json(cfg.out / "metrics.json", j);
    spdlog::info("macro-F1 baseline {:.4f} xp-cb {:.4f}", baseline.macro_f1, adapted.macro_f1);
}

namespace {

// Source-validation records and target-test records, both labelled.
std::pair<EmbeddingDump, EmbeddingDump> embedding_dumps(const RunConfig& cfg, const CommandPaths& paths) {
    const SourceArtifact src = load_source(cfg, paths);
    const TargetArtifact tgt = load_target(cfg, paths, src);
    const Loaded in = load_inputs(cfg);
    const std::size_t layer = tgt.post_layer;
    EmbeddingDump before = export_embeddings(src.model.encoder, src.model.encoder, in.splits.source_valid,
                                             in.splits.target_test, src.vocab, src.max_len, layer);
    EmbeddingDump after = export_embeddings(src.model.encoder, tgt.encoder, in.splits.source_valid,
                                            in.splits.target_test, src.vocab, src.max_len, layer);
    return {std::move(before), std::move(after)};
}

}  // namespace

void cmd_export(const RunConfig& cfg, const CommandPaths& paths) {
    cfg.validate();
    prepare_out(cfg);
    const auto [before, after] = embedding_dumps(cfg, paths);
    before.write_csv(cfg.out / "embeddings_source_only.csv");
    after.write_csv(cfg.out / "embeddings_adapted.csv");
    ordered_json j;
    j["rows"] = before.rows();
    j["dim"] = before.dim;
    j["centroid_distance_source_only"] = centroid_distance(before);
    j["centroid_distance_adapted"] = centroid_distance(after);
    write_json(cfg.out / "embeddings_summary.json", j);
}

void cmd_project(const RunConfig& cfg, const CommandPaths& paths) {
    cfg.validate();
    prepare_out(cfg);
    const auto [before, after] = embedding_dumps(cfg, paths);
    ordered_json j;
    for (const auto& [name, dump] : {std::pair{"source_only", &before}, std::pair{"adapted", &after}}) {
        const Projection p = tsne_project(*dump, cfg.tsne);
        p.dump.write_csv(cfg.out / (std::string("projection_") + name + ".csv"));
        write_scatter_svg(p.dump, cfg.out / (std::string("projection_") + name + ".svg"));
        j[name] = {{"points", p.dump.rows()}, {"initial_kl", p.initial_kl}, {"final_kl", p.final_kl}};
    }
    write_json(cfg.out / "projection_summary.json", j);
}

std::string benchmark_markdown(const std::vector<BenchmarkRow>& rows) {
    std::string out = "| Source→Target | Baseline | XP-CB | Δ |\n|---|---|---|---|\n";
    double b = 0.0, x = 0.0;
    for (const BenchmarkRow& r : rows) {
        out += "| " + r.source + "→" + r.target + " | " + fixed4(r.baseline) + " | " + fixed4(r.xpcb) + " | " +
               fixed4(r.delta(), true) + " |\n";
        b += r.baseline;
        x += r.xpcb;
    }
    if (!rows.empty()) {
        const double n = static_cast<double>(rows.size());
        out += "| Average | " + fixed4(b / n) + " | " + fixed4(x / n) + " | " + fixed4((x - b) / n, true) + " |\n";
    }
    return out;
}

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows) {
    std::string out = "source,target,baseline_macro_f1,xpcb_macro_f1,delta,disc_acc_before,disc_acc_after\n";
    char buf[256];
    for (const BenchmarkRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.source.c_str(), r.target.c_str(),
                      r.baseline, r.xpcb, r.delta(), r.disc_before, r.disc_after);
        out += buf;
    }
    return out;
}

std::vector<BenchmarkRow> cmd_benchmark(const RunConfig& cfg) {
    cfg.validate();
    prepare_out(cfg);
    std::vector<std::string> names;
    std::vector<Corpus> corpora;
    if (cfg.benchmark.datasets.empty()) {
        const auto data = generate_synthetic(cfg.synthetic);
        for (std::size_t i = 0; i < data.size(); ++i) {
            names.push_back(cfg.synthetic.platforms[i].name);
            corpora.emplace_back(data[i]);
        }
    } else {
        for (std::size_t i = 0; i < cfg.benchmark.datasets.size(); ++i) {
            const fs::path& p = cfg.benchmark.datasets[i];
            names.push_back(cfg.benchmark.platforms.empty() ? p.stem().string() : cfg.benchmark.platforms[i]);
            corpora.push_back(load_dataset(p, cfg.benchmark.format, {names.back(), {}}));
        }
    }
    std::vector<BenchmarkRow> rows;
    for (std::size_t s = 0; s < corpora.size(); ++s)
        for (std::size_t t = 0; t < corpora.size(); ++t) {
            if (s == t) continue;
            spdlog::info("benchmark {} -> {}", names[s], names[t]);
            const PipelineResult r = run_configuration(corpora[s], corpora[t], cfg.pipeline);
            rows.push_back({names[s], names[t], r.baseline.macro_f1, r.xpcb.macro_f1,
                            r.report.heldout_accuracy_before, r.report.final_accuracy()});
        }
    write_text(cfg.out / "benchmark.md", benchmark_markdown(rows));
    write_text(cfg.out / "benchmark.csv", benchmark_csv(rows));
    return rows;
}

void cmd_gen_synthetic(const RunConfig& cfg) {
    cfg.validate();
    const auto data = generate_synthetic(cfg.synthetic);
    prepare_out(cfg);
    for (std::size_t i = 0; i < data.size(); ++i)
        write_dataset_jsonl(cfg.out / (cfg.synthetic.platforms[i].name + ".jsonl"), data[i]);
}

// ---------------------------------------------------------------- entry point

namespace {

void configure_logging() {
    const char* level = std::getenv("XPCB_LOG");
    spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
    spdlog::set_pattern("[%l] %v");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    configure_logging();
    CLI::App app{"Cross-platform cyberbullying classification with dual alignment", "xpcb"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out;
    std::optional<std::uint64_t> seed;
    CommandPaths paths;
    std::string source_ckpt, target_ckpt;
    app.add_option("--config", config_path, "configuration file (defaults apply when omitted)");
    app.add_option("--seed", seed, "overrides the configured seed");
    app.add_option("--out", out, "overrides the output directory");
    app.add_option("--source-ckpt", source_ckpt, "source checkpoint (default <out>/source.ckpt)");
    app.add_option("--target-ckpt", target_ckpt, "target checkpoint (default <out>/target.ckpt)");

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"train-source", "train the source encoder and classifier"},
        {"adapt", "adversarially adapt a target encoder and apply AdaBN"},
        {"evaluate", "score baseline and adapted models on the target test split"},
        {"export-embeddings", "write pooled embeddings before and after adaptation"},
        {"project", "t-SNE projections of the embeddings, CSV and SVG"},
        {"benchmark", "run every ordered dataset pair"},
        {"gen-synthetic", "write the synthetic platforms as JSONL"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (seed) cfg.set_seed(*seed);
        if (!out.empty()) cfg.out = out;
        paths.source_ckpt = source_ckpt;
        paths.target_ckpt = target_ckpt;
        const std::string cmd = app.get_subcommands().front()->get_name();
        if (cmd == "train-source") cmd_train_source(cfg, paths);
        else if (cmd == "adapt") cmd_adapt(cfg, paths);
        else if (cmd == "evaluate") cmd_evaluate(cfg, paths);
        else if (cmd == "export-embeddings") cmd_export(cfg, paths);
        else if (cmd == "project") cmd_project(cfg, paths);
        else if (cmd == "benchmark") std::cout << benchmark_markdown(cmd_benchmark(cfg));
        else if (cmd == "gen-synthetic") cmd_gen_synthetic(cfg);
        return 0;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ArtifactMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace xpcb
