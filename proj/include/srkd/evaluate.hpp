#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "srkd/corpus.hpp"
#include "srkd/distill.hpp"
#include "srkd/model.hpp"
#include "srkd/train.hpp"

namespace srkd {

enum class Split { validation, test };

Split parse_split(const std::string& name);

struct RankingReport {
    std::string split;
    std::vector<size_t> ks;
    std::map<std::string, double> metrics;  // "HR@5", "NDCG@10", ...
    size_t users = 0;
    std::string config_digest;
    std::vector<size_t> ranks;  // per-user target ranks, kept on request

    std::string to_json() const;
};

// 1-based rank of the target among all real-item tokens (PAD and MASK are
// never candidates) under descending score; equal scores order by ascending
// token id.
size_t rank_of_target(std::span<const double> scores, int32_t target,
                      size_t vocab_size);

double hr_at_k(size_t rank, size_t k);
double ndcg_at_k(size_t rank, size_t k);

// Top-k real-item tokens under the same ordering rule as rank_of_target.
std::vector<int32_t> top_k_tokens(std::span<const double> scores, size_t k,
                                  size_t vocab_size);

// Leave-one-out evaluation with the append-MASK query. For the test split
// the validation item joins the history first. keep_ranks retains the
// per-user rank list on the report.
RankingReport evaluate(const ModelConfig& config, ModelParams& params,
                       const SplitDataset& dataset, Split split,
                       std::vector<size_t> ks = {5, 10},
                       const std::string& config_digest = "",
                       bool keep_ranks = false);

double metric_from_report(const RankingReport& report, const std::string& name);

// One experiment axis: per-cell reports plus per-metric mean and population
// standard deviation across the cells.
struct ExperimentGrid {
    std::string axis;
    std::vector<std::string> values;
    std::vector<RankingReport> cells;
    std::map<std::string, double> mean;
    std::map<std::string, double> stddev;

    std::string to_json() const;
};

ExperimentGrid make_grid(std::string axis, std::vector<std::string> values,
                         std::vector<RankingReport> cells);

// Everything a sweep/stability cell might need; which parts are mandatory
// depends on the axis.
struct ExperimentSpec {
    // full-pipeline inputs (mapping_seed axis / stability runs)
    std::vector<Interaction> interactions;
    size_t min_count = 5;

    SplitDataset dataset;       // prepared data for the other axes
    bool has_dataset = false;

    ModelConfig model;          // architecture under test
    TrainConfig train;          // stage-one settings
    DistillConfig distill;      // stage-two settings (alpha/temperature axes)

    Checkpoint teacher;         // distillation teacher
    bool has_teacher = false;

    Checkpoint init_checkpoint;  // init_mode axis source weights
    bool has_init_checkpoint = false;

    Split report_split = Split::validation;
    std::vector<size_t> ks = {5, 10};
};

// axis in {rho, alpha, temperature, mapping_seed, init_mode}; runs one
// full train-or-distill pipeline per value with everything else fixed.
ExperimentGrid sweep(const std::string& axis, const std::vector<std::string>& values,
                     const ExperimentSpec& spec);

// The random-mapping stability protocol: remap -> train -> evaluate per
// seed, reported as a mapping_seed grid.
ExperimentGrid stability_experiment(const ExperimentSpec& spec,
                                    const std::vector<uint64_t>& seeds);

}  // namespace srkd
