#pragma once

// Command implementations behind the xpcb executable. Each writes its
// artifacts under cfg.out; identical config and seed give byte-identical
// files.

#include <filesystem>
#include <string>
#include <vector>

#include "xpcb/config.hpp"

namespace xpcb {

struct CommandPaths {
    std::filesystem::path source_ckpt;  // empty: <out>/source.ckpt
    std::filesystem::path target_ckpt;  // empty: <out>/target.ckpt
};

// source.ckpt, vocab.txt, source_metrics.json
void cmd_train_source(const RunConfig& cfg, const CommandPaths& paths = {});
// target.ckpt, adapt_report.csv, adapt_summary.json
void cmd_adapt(const RunConfig& cfg, const CommandPaths& paths = {});
// metrics.json
void cmd_evaluate(const RunConfig& cfg, const CommandPaths& paths = {});
// embeddings_source_only.csv, embeddings_adapted.csv, embeddings_summary.json
void cmd_export(const RunConfig& cfg, const CommandPaths& paths = {});
// projection_{source_only,adapted}.{csv,svg}, projection_summary.json
void cmd_project(const RunConfig& cfg, const CommandPaths& paths = {});

struct BenchmarkRow {
    std::string source, target;
    double baseline = 0.0;
    double xpcb = 0.0;
    double disc_before = 0.0;
    double disc_after = 0.0;
    double delta() const { return xpcb - baseline; }
};
// Every ordered dataset pair, sequentially: benchmark.md, benchmark.csv.
std::vector<BenchmarkRow> cmd_benchmark(const RunConfig& cfg);
std::string benchmark_markdown(const std::vector<BenchmarkRow>& rows);
std::string benchmark_csv(const std::vector<BenchmarkRow>& rows);

// <out>/<platform>.jsonl per synthetic platform.
void cmd_gen_synthetic(const RunConfig& cfg);

// Full command line, argv[0] excluded. Returns the process exit code:
// 0 success, 2 input error, 3 artifact mismatch, 4 numerical failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace xpcb
