#include <doctest.h>

#include <filesystem>
#include <string>

#include "xpcb/config.hpp"
#include "xpcb/errors.hpp"

using namespace xpcb;

namespace {

const std::filesystem::path kConfigs = std::filesystem::path(XPCB_SOURCE_DIR) / "configs";

std::string error_of(const std::string& text) {
    try {
        parse_run_config(text);
    } catch (const InputError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("an empty file is the default configuration") {
    CHECK(parse_run_config("") == RunConfig{});
    CHECK(parse_run_config("# only a comment\n\n") == RunConfig{});
}

TEST_CASE("defaults follow the training protocol") {
    const RunConfig c;
    CHECK(c.pipeline.source_train.batch_size == 16);
    CHECK(c.pipeline.source_train.adam.learning_rate == 2e-5);
    CHECK(c.pipeline.source_train.adam.beta1 == 0.9);
    CHECK(c.pipeline.source_train.adam.beta2 == 0.999);
    CHECK(c.pipeline.source_train.adam.eps == 1e-8);
    CHECK(c.pipeline.oversample_factor == 3);
    CHECK(c.pipeline.head_width == 512);
}

TEST_CASE("serialise then parse round-trips") {
    RunConfig c;
    c.set_seed(17);
    c.out = "runs/a b";
    c.source.path = "data/alpha.jsonl";
    c.source.platform = "alpha";
    c.source.label_map = {{"insult", 1}, {"none", 0}, {"quote\"d", 1}};
    c.target.format = DatasetFormat::csv;
    c.pipeline.encoder.pooling = Pooling::mean;
    c.pipeline.encoder.dropout_rate = 0.15;
    c.pipeline.length.candidates = {16, 32};
    c.pipeline.adapt.adam.learning_rate = 3.3e-4;
    c.pipeline.adapt.discriminator_learning_rate = 1e-5;
    c.pipeline.adapt.kld_direction = KldDirection::target_to_source;
    c.pipeline.share = ShareMode::partial(2);
    c.pipeline.head_width = kExpansionWidth;
    c.benchmark.datasets = {"a.jsonl", "b.jsonl"};
    c.benchmark.platforms = {"a", "b"};
    c.synthetic.records_per_platform = 123;
    const std::string text = serialize_run_config(c);
    const RunConfig back = parse_run_config(text);
    CHECK(back == c);
    CHECK(serialize_run_config(back) == text);
}

TEST_CASE("shipped configuration files parse and round-trip") {
    for (const char* name : {"default.toml", "benchmark.toml"}) {
        INFO(name);
        const RunConfig c = load_run_config(kConfigs / name);
        CHECK(parse_run_config(serialize_run_config(c)) == c);
    }
    CHECK(load_run_config(kConfigs / "default.toml") == RunConfig{});
    const RunConfig bench = load_run_config(kConfigs / "benchmark.toml");
    CHECK(bench.pipeline.adapt.lambda_kld == 100.0);
    CHECK(bench.synthetic.records_per_platform == 5000);
    CHECK(bench.pipeline.encoder.d_model == 64);
    CHECK(bench.pipeline.encoder.n_layers == 4);
}

TEST_CASE("seed reaches every stage") {
    const RunConfig c = parse_run_config("seed = 9\n");
    CHECK(c.seed == 9);
    CHECK(c.pipeline.seed == 9);
    CHECK(c.tsne.seed == 9);
    CHECK(c.synthetic.seed == 9);
}

TEST_CASE("errors name the offending line") {
    CHECK(error_of("seed = 1\nbogus = 2\n") == "config line 2: unknown key 'bogus' at top level");
    CHECK(error_of("[encoder]\nwidth = 3\n").find("config line 2: unknown key 'width'") == 0);
    CHECK(error_of("[nope]\n").find("config line 1") == 0);
    CHECK(error_of("[train]\n[train]\n").find("config line 2") == 0);
    CHECK(error_of("seed = 1\nseed = 2\n").find("config line 2") == 0);
    CHECK(error_of("seed = \"x\"\n").find("config line 1") == 0);
    CHECK(error_of("[train]\nlearning_rate = fast\n").find("config line 2") == 0);
    CHECK(error_of("out = \"unterminated\n").find("config line 1") == 0);
    CHECK(error_of("seed 1\n").find("config line 1") == 0);
    CHECK(error_of("[source]\nlabel_map = { \"a\" = 2 }\n").find("config line 2") == 0);
}

TEST_CASE("semantic validation") {
    CHECK_THROWS_AS(parse_run_config("[encoder]\nd_model = 30\nn_heads = 4\n"), InputError);
    CHECK_THROWS_AS(parse_run_config("[benchmark]\ndatasets = [\"a.jsonl\"]\n"), InputError);
    CHECK_THROWS_AS(parse_run_config("[synthetic]\nplatforms = 1\n"), InputError);
    CHECK_THROWS_AS(parse_run_config("[train]\nbatch_size = 0\n"), InputError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/run.toml"), InputError);
}
