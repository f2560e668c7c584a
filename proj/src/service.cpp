#include "srkd/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <semaphore>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "srkd/evaluate.hpp"
#include "srkd/masking.hpp"

namespace srkd {

namespace {
using nlohmann::json;
}

ServingBundle ServingBundle::load(const std::string& checkpoint_path,
                                  const std::string& token_map_path) {
    ServingBundle bundle;
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    bundle.config = ckpt.config;
    bundle.params = std::move(ckpt.params);
    bundle.token_map = TokenMap::load(token_map_path);
    if (bundle.token_map.vocab_size() != bundle.config.vocab_size)
        throw ConfigError("token map vocab " +
                          std::to_string(bundle.token_map.vocab_size()) +
                          " does not match checkpoint vocab " +
                          std::to_string(bundle.config.vocab_size));
    return bundle;
}

std::string Recommendation::to_json() const {
    json j;
    j["items"] = items;
    j["scores"] = scores;
    j["dropped_unknown"] = dropped_unknown;
    if (clamped) j["clamped"] = true;
    return j.dump();
}

Recommendation recommend(const ServingBundle& bundle,
                         const std::vector<std::string>& history, size_t k) {
    if (k < 1) throw ParamError("k must be >= 1");

    Recommendation out;
    std::vector<int32_t> tokens;
    tokens.reserve(history.size());
    for (const auto& item : history) {
        if (auto t = bundle.token_map.lookup(item))
            tokens.push_back(*t);
        else
            ++out.dropped_unknown;
    }
    if (tokens.empty())
        throw DataError("history has no known items");

    size_t candidates = bundle.config.vocab_size - kFirstItemToken;
    if (k > candidates) {
        k = candidates;
        out.clamped = true;
    }

    size_t n = bundle.config.max_len;
    auto query = test_time_mask(tokens, n);
    IntTensor inputs(Shape{1, n}, std::move(query));
    ModelParams params_view = bundle.params;  // shares buffers
    Tensor logits = forward_eval(bundle.config, params_view, inputs);
    std::span<const double> scores{logits.raw() + (n - 1) * bundle.config.vocab_size,
                                   bundle.config.vocab_size};

    for (int32_t token : top_k_tokens(scores, k, bundle.config.vocab_size)) {
        out.items.push_back(bundle.token_map.item(token));
        out.scores.push_back(scores[static_cast<size_t>(token)]);
    }
    return out;
}

std::string BenchResult::to_json() const {
    auto report = [](const LatencyReport& r) {
        json j;
        j["label"] = r.label;
        j["requests"] = r.requests;
        j["p50_us"] = r.p50_us;
        j["p95_us"] = r.p95_us;
        j["p99_us"] = r.p99_us;
        return j;
    };
    json j;
    j["teacher"] = report(teacher);
    j["student"] = report(student);
    j["p50_ratio"] = p50_ratio;
    return j.dump();
}

namespace {

double percentile(std::vector<double> sorted, double q) {
    size_t n = sorted.size();
    size_t idx = static_cast<size_t>(std::ceil(q * static_cast<double>(n)));
    if (idx < 1) idx = 1;
    return sorted[std::min(idx, n) - 1];
}

LatencyReport replay(const ServingBundle& bundle, const std::string& label,
                     const std::vector<std::vector<std::string>>& trace,
                     size_t warmup, size_t k) {
    for (size_t i = 0; i < warmup; ++i)
        recommend(bundle, trace[i % trace.size()], k);

    std::vector<double> micros;
    micros.reserve(trace.size());
    for (const auto& history : trace) {
        auto begin = std::chrono::steady_clock::now();
        recommend(bundle, history, k);
        auto end = std::chrono::steady_clock::now();
        micros.push_back(
            std::chrono::duration<double, std::micro>(end - begin).count());
    }
    std::sort(micros.begin(), micros.end());
    LatencyReport report;
    report.label = label;
    report.requests = micros.size();
    report.p50_us = percentile(micros, 0.50);
    report.p95_us = percentile(micros, 0.95);
    report.p99_us = percentile(micros, 0.99);
    return report;
}

}  // namespace

BenchResult bench(const ServingBundle& teacher, const ServingBundle& student,
                  const std::vector<std::vector<std::string>>& trace,
                  size_t warmup, size_t k) {
    if (teacher.token_map.vocab_size() != student.token_map.vocab_size() ||
        teacher.token_map.seed() != student.token_map.seed())
        throw ConfigError("bench: teacher and student must share a token map");

    std::vector<std::vector<std::string>> valid;
    for (const auto& history : trace) {
        bool known = false;
        for (const auto& item : history)
            if (teacher.token_map.lookup(item)) {
                known = true;
                break;
            }
        if (known) valid.push_back(history);
    }
    if (valid.empty()) throw ParamError("bench: trace has no usable requests");

    BenchResult result;
    result.teacher = replay(teacher, "teacher", valid, warmup, k);
    result.student = replay(student, "student", valid, warmup, k);
    result.p50_ratio = result.student.p50_us / result.teacher.p50_us;
    return result;
}

// ---- http server ---------------------------------------------------------

struct RecommendServer::Impl {
    ServingBundle bundle;
    httplib::Server server;
    std::thread worker;
    int port = 0;
    int deadline_ms = 0;
    std::counting_semaphore<4096> slots;

    Impl(ServingBundle b, int max_concurrency)
        : bundle(std::move(b)),
          slots(std::max(1, max_concurrency)) {}
};

RecommendServer::RecommendServer(ServingBundle bundle, int port, int deadline_ms,
                                 int max_concurrency)
    : impl_(std::make_unique<Impl>(std::move(bundle), max_concurrency)) {
    impl_->deadline_ms = std::max(1, deadline_ms);

    impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("ok", "text/plain");
    });

    impl_->server.Post("/recommend", [this](const httplib::Request& req,
                                            httplib::Response& res) {
        res.set_header("Content-Type", "application/json");
        if (!impl_->slots.try_acquire_for(
                std::chrono::milliseconds(impl_->deadline_ms))) {
            res.status = 503;
            res.body = R"({"error":"overloaded"})";
            return;
        }
        struct Release {
            std::counting_semaphore<4096>& s;
            ~Release() { s.release(); }
        } release{impl_->slots};

        json request;
        try {
            request = json::parse(req.body);
        } catch (const json::exception& e) {
            res.status = 400;
            res.body = json{{"error", std::string("bad json: ") + e.what()}}.dump();
            return;
        }
        try {
            if (!request.contains("items") || !request["items"].is_array())
                throw ParamError("request needs an 'items' array");
            std::vector<std::string> items;
            for (const auto& it : request["items"]) {
                if (!it.is_string()) throw ParamError("items must be strings");
                items.push_back(it.get<std::string>());
            }
            int64_t k = request.value("k", 10);
            if (k < 1) throw ParamError("k must be >= 1");
            Recommendation rec =
                recommend(impl_->bundle, items, static_cast<size_t>(k));
            res.status = 200;
            res.body = rec.to_json();
        } catch (const Error& e) {
            bool request_fault = e.code() == ErrorCode::param ||
                                 e.code() == ErrorCode::data ||
                                 e.code() == ErrorCode::contract;
            res.status = request_fault ? 422 : 500;
            res.body = json{{"error", e.what()}}.dump();
        }
    });

    if (port == 0) {
        impl_->port = impl_->server.bind_to_any_port("0.0.0.0");
        if (impl_->port <= 0) throw IoError("cannot bind a port");
    } else {
        if (!impl_->server.bind_to_port("0.0.0.0", port))
            throw IoError("cannot bind port " + std::to_string(port));
        impl_->port = port;
    }
    impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

RecommendServer::~RecommendServer() { stop(); }

int RecommendServer::port() const { return impl_->port; }

void RecommendServer::stop() {
    if (impl_->worker.joinable()) {
        impl_->server.stop();
        impl_->worker.join();
    }
}

}  // namespace srkd
