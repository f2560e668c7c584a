#pragma once

#include <memory>
#include <string>
#include <vector>

#include "srkd/corpus.hpp"
#include "srkd/model.hpp"

namespace srkd {

// Everything one serving process needs, immutable after load.
struct ServingBundle {
    ModelConfig config;
    ModelParams params;
    TokenMap token_map;

    static ServingBundle load(const std::string& checkpoint_path,
                              const std::string& token_map_path);
};

struct Recommendation {
    std::vector<std::string> items;
    std::vector<double> scores;
    size_t dropped_unknown = 0;
    bool clamped = false;  // k exceeded the candidate count

    std::string to_json() const;
};

// Map the history to tokens (unknown items dropped and counted), append the
// MASK query, score the final position and return the top-k real items under
// the evaluate module's ranking rule.
Recommendation recommend(const ServingBundle& bundle,
                         const std::vector<std::string>& history, size_t k);

struct LatencyReport {
    std::string label;
    size_t requests = 0;
    double p50_us = 0.0;
    double p95_us = 0.0;
    double p99_us = 0.0;
};

struct BenchResult {
    LatencyReport teacher;
    LatencyReport student;
    double p50_ratio = 0.0;  // student p50 / teacher p50

    std::string to_json() const;
};

// Replays the identical trace (serially; latency is the measured quantity)
// against both bundles after `warmup` unrecorded requests each.
BenchResult bench(const ServingBundle& teacher, const ServingBundle& student,
                  const std::vector<std::vector<std::string>>& trace,
                  size_t warmup, size_t k = 10);

// HTTP/1.1 endpoint:
//   POST /recommend  {"items": [...], "k": int}
//                    -> {"items": [...], "scores": [...], "dropped_unknown": int}
//   GET  /healthz    -> 200 "ok"
// Admission control: at most max_concurrency requests evaluate at once;
// a request that cannot start within deadline_ms is shed with 503.
class RecommendServer {
public:
    RecommendServer(ServingBundle bundle, int port, int deadline_ms,
                    int max_concurrency = 2);
    ~RecommendServer();
    RecommendServer(const RecommendServer&) = delete;
    RecommendServer& operator=(const RecommendServer&) = delete;

    int port() const;
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace srkd
