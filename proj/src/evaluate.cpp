#include "srkd/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "srkd/masking.hpp"

namespace srkd {

namespace {
using nlohmann::json;
}

Split parse_split(const std::string& name) {
    if (name == "val" || name == "validation") return Split::validation;
    if (name == "test") return Split::test;
    throw ParamError("unknown split '" + name + "' (expected val or test)");
}

size_t rank_of_target(std::span<const double> scores, int32_t target,
                      size_t vocab_size) {
    if (scores.size() != vocab_size)
        throw ShapeError("rank_of_target: got " + std::to_string(scores.size()) +
                         " scores for vocab " + std::to_string(vocab_size));
    if (target < kFirstItemToken || static_cast<size_t>(target) >= vocab_size)
        throw ContractError("rank_of_target: target " + std::to_string(target) +
                            " is not a real-item token");
    double ts = scores[static_cast<size_t>(target)];
    size_t ahead = 0;
    for (size_t c = kFirstItemToken; c < vocab_size; ++c) {
        if (scores[c] > ts) ++ahead;
        else if (scores[c] == ts && c < static_cast<size_t>(target)) ++ahead;
    }
    return ahead + 1;
}

double hr_at_k(size_t rank, size_t k) {
    if (k < 1) throw ParamError("hr_at_k: K must be >= 1");
    if (rank < 1) throw ContractError("hr_at_k: rank is 1-based");
    return rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(size_t rank, size_t k) {
    if (k < 1) throw ParamError("ndcg_at_k: K must be >= 1");
    if (rank < 1) throw ContractError("ndcg_at_k: rank is 1-based");
    if (rank > k) return 0.0;
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

std::vector<int32_t> top_k_tokens(std::span<const double> scores, size_t k,
                                  size_t vocab_size) {
    if (k < 1) throw ParamError("top_k_tokens: k must be >= 1");
    std::vector<int32_t> candidates;
    candidates.reserve(vocab_size - kFirstItemToken);
    for (size_t c = kFirstItemToken; c < vocab_size; ++c)
        candidates.push_back(static_cast<int32_t>(c));
    size_t take = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + take, candidates.end(),
                      [&](int32_t a, int32_t b) {
                          double sa = scores[static_cast<size_t>(a)];
                          double sb = scores[static_cast<size_t>(b)];
                          if (sa != sb) return sa > sb;
                          return a < b;
                      });
    candidates.resize(take);
    return candidates;
}

std::string RankingReport::to_json() const {
    json j;
    j["split"] = split;
    j["Ks"] = ks;
    j["metrics"] = metrics;
    j["users"] = users;
    j["config_digest"] = config_digest;
    return j.dump();
}

double metric_from_report(const RankingReport& report, const std::string& name) {
    auto it = report.metrics.find(name);
    if (it == report.metrics.end())
        throw ParamError("metric '" + name + "' missing from report");
    return it->second;
}

RankingReport evaluate(const ModelConfig& config, ModelParams& params,
                       const SplitDataset& dataset, Split split,
                       std::vector<size_t> ks, const std::string& config_digest,
                       bool keep_ranks) {
    config.validate();
    if (dataset.vocab_size != config.vocab_size ||
        dataset.max_len != config.max_len)
        throw ConfigError("dataset does not match the model config");
    for (size_t k : ks)
        if (k < 1) throw ParamError("evaluate: K must be >= 1");

    size_t users = dataset.user_count();
    if (users == 0) throw ContractError("evaluate: dataset has no users");
    size_t n = dataset.max_len;
    bool include_val = split == Split::test;

    std::map<std::string, double> sums;
    for (size_t k : ks) {
        sums["HR@" + std::to_string(k)] = 0.0;
        sums["NDCG@" + std::to_string(k)] = 0.0;
    }

    std::vector<size_t> ranks;
    if (keep_ranks) ranks.reserve(users);
    constexpr size_t kEvalBatch = 64;
    for (size_t start = 0; start < users; start += kEvalBatch) {
        size_t stop = std::min(users, start + kEvalBatch);
        size_t batch = stop - start;
        IntTensor inputs(Shape{batch, n});
        for (size_t b = 0; b < batch; ++b) {
            auto history = dataset.history(start + b, include_val);
            auto query = test_time_mask(history, n);
            for (size_t i = 0; i < n; ++i) inputs(b, i) = query[i];
        }
        Tensor logits = forward_eval(config, params, inputs);
        for (size_t b = 0; b < batch; ++b) {
            size_t u = start + b;
            int32_t target =
                include_val ? dataset.test_target[u] : dataset.val_target[u];
            std::span<const double> scores{logits.raw() + (b * n + (n - 1)) * config.vocab_size,
                                           config.vocab_size};
            size_t rank = rank_of_target(scores, target, config.vocab_size);
            if (keep_ranks) ranks.push_back(rank);
            for (size_t k : ks) {
                sums["HR@" + std::to_string(k)] += hr_at_k(rank, k);
                sums["NDCG@" + std::to_string(k)] += ndcg_at_k(rank, k);
            }
        }
    }

    RankingReport report;
    report.split = split == Split::test ? "test" : "val";
    report.ks = std::move(ks);
    report.users = users;
    report.config_digest = config_digest;
    report.ranks = std::move(ranks);
    for (auto& [name, total] : sums)
        report.metrics[name] = total / static_cast<double>(users);
    return report;
}

std::string ExperimentGrid::to_json() const {
    json j;
    j["axis"] = axis;
    j["values"] = values;
    json cell_array = json::array();
    for (const auto& cell : cells) cell_array.push_back(json::parse(cell.to_json()));
    j["cells"] = cell_array;
    j["mean"] = mean;
    j["std"] = stddev;
    return j.dump();
}

ExperimentGrid make_grid(std::string axis, std::vector<std::string> values,
                         std::vector<RankingReport> cells) {
    ExperimentGrid grid;
    grid.axis = std::move(axis);
    grid.values = std::move(values);
    grid.cells = std::move(cells);
    if (grid.cells.empty()) return grid;
    for (const auto& [name, _] : grid.cells.front().metrics) {
        double mean = 0.0;
        for (const auto& cell : grid.cells) mean += cell.metrics.at(name);
        mean /= static_cast<double>(grid.cells.size());
        double sq = 0.0;
        for (const auto& cell : grid.cells) {
            double dev = cell.metrics.at(name) - mean;
            sq += dev * dev;
        }
        grid.mean[name] = mean;
        // population formula over the listed repeats
        grid.stddev[name] = std::sqrt(sq / static_cast<double>(grid.cells.size()));
    }
    return grid;
}

namespace {

RankingReport run_train_cell(const ExperimentSpec& spec, const SplitDataset& dataset,
                             const ModelConfig& model_config,
                             const TrainConfig& train_config, ModelParams init,
                             const std::string& digest) {
    TrainResult result =
        train(model_config, std::move(init), dataset, train_config, nullptr);
    ModelParams best = std::move(result.best_params);
    return evaluate(model_config, best, dataset, spec.report_split, spec.ks, digest);
}

double parse_double_value(const std::string& axis, const std::string& value) {
    try {
        size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (...) {
        throw ParamError("bad " + axis + " value '" + value + "'");
    }
}

uint64_t parse_seed_value(const std::string& value) {
    try {
        size_t used = 0;
        uint64_t v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (...) {
        throw ParamError("bad mapping_seed value '" + value + "'");
    }
}

}  // namespace

ExperimentGrid sweep(const std::string& axis, const std::vector<std::string>& values,
                     const ExperimentSpec& spec) {
    if (values.empty()) throw ParamError("sweep: no values given");
    std::vector<RankingReport> cells;
    cells.reserve(values.size());

    if (axis == "rho") {
        if (!spec.has_dataset) throw ParamError("rho sweep needs a prepared dataset");
        for (const auto& value : values) {
            TrainConfig tc = spec.train;
            tc.rho = parse_double_value(axis, value);
            ModelParams init = init_params(spec.model, tc.seed, InitMode::scratch_all);
            cells.push_back(run_train_cell(spec, spec.dataset, spec.model, tc,
                                           std::move(init), "rho=" + value));
        }
    } else if (axis == "alpha" || axis == "temperature") {
        if (!spec.has_dataset || !spec.has_teacher)
            throw ParamError(axis + " sweep needs a prepared dataset and a teacher");
        for (const auto& value : values) {
            DistillConfig dc = spec.distill;
            if (axis == "alpha")
                dc.alpha = parse_double_value(axis, value);
            else
                dc.temperature = parse_double_value(axis, value);
            dc.validate();
            ModelParams student_init =
                init_params(spec.model, dc.optimizer.seed, InitMode::scratch_all);
            ModelParams teacher_params = spec.teacher.params;
            TrainResult result =
                distill(spec.teacher.config, teacher_params, spec.model,
                        std::move(student_init), spec.dataset, dc, nullptr);
            cells.push_back(evaluate(spec.model, result.best_params, spec.dataset,
                                     spec.report_split, spec.ks, axis + "=" + value));
        }
    } else if (axis == "mapping_seed") {
        if (spec.interactions.empty())
            throw ParamError("mapping_seed sweep needs raw interactions");
        auto filtered = filter_min_count(spec.interactions, spec.min_count);
        if (filtered.empty()) throw DataError("no interactions survive filtering");
        auto sequences = build_sequences(filtered);
        std::vector<std::string> items;
        items.reserve(filtered.size());
        for (const auto& r : filtered) items.push_back(r.item);
        for (const auto& value : values) {
            uint64_t seed = parse_seed_value(value);
            TokenMap map = TokenMap::make(items, seed);
            SplitDataset ds = split_leave_one_out(sequences, spec.model.max_len, map);
            if (ds.user_count() == 0) throw DataError("no users with >= 3 interactions");
            ModelConfig mc = spec.model;
            mc.vocab_size = map.vocab_size();
            ModelParams init =
                init_params(mc, spec.train.seed, InitMode::scratch_all);
            cells.push_back(run_train_cell(spec, ds, mc, spec.train, std::move(init),
                                           "mapping_seed=" + value));
        }
    } else if (axis == "init_mode") {
        if (!spec.has_dataset || !spec.has_init_checkpoint)
            throw ParamError("init_mode sweep needs a prepared dataset and a checkpoint");
        for (const auto& value : values) {
            InitMode mode = parse_init_mode(value);
            ModelParams init =
                mode == InitMode::scratch_all
                    ? init_params(spec.model, spec.train.seed, mode)
                    : init_params(spec.model, spec.train.seed, mode,
                                  &spec.init_checkpoint.params,
                                  &spec.init_checkpoint.config);
            cells.push_back(run_train_cell(spec, spec.dataset, spec.model, spec.train,
                                           std::move(init), "init_mode=" + value));
        }
    } else {
        throw ParamError("unknown sweep axis '" + axis +
                         "' (expected rho, alpha, temperature, mapping_seed, init_mode)");
    }
    return make_grid(axis, values, std::move(cells));
}

ExperimentGrid stability_experiment(const ExperimentSpec& spec,
                                    const std::vector<uint64_t>& seeds) {
    if (seeds.size() < 2)
        throw ParamError("stability experiment needs >= 2 mapping seeds");
    std::vector<std::string> values;
    values.reserve(seeds.size());
    for (uint64_t s : seeds) values.push_back(std::to_string(s));
    return sweep("mapping_seed", values, spec);
}

}  // namespace srkd
