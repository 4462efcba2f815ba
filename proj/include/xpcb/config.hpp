#pragma once

// Run configuration: a TOML-style file of flat [sections] with scalar,
// array and inline-table values. Unknown sections and keys are rejected.
//
//   seed = 7
//   out = "runs/alpha-beta"
//   [source]
//   path = "data/alpha.jsonl"
//   label_map = { "insult" = 1, "none" = 0 }
//
// Every key has a default, so an empty file is a valid configuration.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "xpcb/corpus.hpp"
#include "xpcb/pipeline.hpp"
#include "xpcb/synthetic.hpp"
#include "xpcb/tsne.hpp"

namespace xpcb {

struct DatasetSpec {
    std::filesystem::path path;
    DatasetFormat format = DatasetFormat::jsonl;
    std::string platform;
    std::map<std::string, int> label_map;

    DatasetOptions options() const { return {platform, label_map}; }
    bool operator==(const DatasetSpec&) const = default;
};

struct BenchmarkSpec {
    // Empty: generate synthetic platforms from the [synthetic] section.
    std::vector<std::filesystem::path> datasets;
    std::vector<std::string> platforms;  // display names, defaults to file stems
    DatasetFormat format = DatasetFormat::jsonl;

    bool operator==(const BenchmarkSpec&) const = default;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out = "xpcb-out";
    DatasetSpec source;
    DatasetSpec target;
    PipelineConfig pipeline;
    TsneConfig tsne;
    BenchmarkSpec benchmark;
    SyntheticConfig synthetic = SyntheticConfig::standard(3);

    RunConfig() { set_seed(0); }

    // The single seed drives every stage.
    void set_seed(std::uint64_t s);
    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

// Throws InputError naming the line for syntax errors, unknown sections or
// keys, duplicates and ill-typed values. The result is validated.
RunConfig parse_run_config(std::string_view text);
// Throws InputError when the file is missing.
RunConfig load_run_config(const std::filesystem::path& path);

// Every key, defaults included; parse_run_config(serialize(c)) == c.
std::string serialize_run_config(const RunConfig& cfg);

}  // namespace xpcb
