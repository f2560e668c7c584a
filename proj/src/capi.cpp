#include "srkd.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "srkd/config.hpp"
#include "srkd/corpus.hpp"
#include "srkd/distill.hpp"
#include "srkd/evaluate.hpp"
#include "srkd/model.hpp"
#include "srkd/service.hpp"
#include "srkd/train.hpp"

using namespace srkd;

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

template <typename Fn>
srkd_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return SRKD_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return static_cast<srkd_status>(static_cast<int>(e.code()));
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return SRKD_ERR_INTERNAL;
    }
}

const KVConfig& kv(const srkd_config* config);

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= s.size()) {
        size_t comma = s.find(',', pos);
        std::string part = s.substr(pos, comma == std::string::npos
                                             ? std::string::npos
                                             : comma - pos);
        size_t b = part.find_first_not_of(" \t");
        size_t e = part.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(part.substr(b, e - b + 1));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::vector<size_t> parse_ks(const KVConfig& cfg) {
    std::vector<size_t> ks;
    for (const auto& v : split_csv(cfg.get_str("ks", "5,10"))) {
        long k = std::strtol(v.c_str(), nullptr, 10);
        if (k < 1) throw ParamError("bad K value '" + v + "'");
        ks.push_back(static_cast<size_t>(k));
    }
    if (ks.empty()) throw ParamError("ks is empty");
    return ks;
}

ModelConfig arch_from_config(const KVConfig& cfg, const SplitDataset& dataset,
                             const ModelConfig* base = nullptr) {
    ModelConfig mc;
    mc.num_layers = static_cast<size_t>(
        cfg.get_int("layers", base ? static_cast<int64_t>(base->num_layers) : 2));
    mc.hidden_dim = static_cast<size_t>(
        cfg.get_int("hidden", base ? static_cast<int64_t>(base->hidden_dim) : 256));
    mc.num_heads = static_cast<size_t>(
        cfg.get_int("heads", base ? static_cast<int64_t>(base->num_heads) : 4));
    mc.ffn_dim = static_cast<size_t>(
        cfg.get_int("ffn_dim", base ? static_cast<int64_t>(base->ffn_dim) : 0));
    mc.dropout_rate = cfg.get_double("dropout", base ? base->dropout_rate : 0.1);
    mc.tie_output_to_embedding =
        cfg.get_bool("tie_output", base ? base->tie_output_to_embedding : true);
    mc.max_len = dataset.max_len;
    mc.vocab_size = dataset.vocab_size;
    mc.validate();
    return mc;
}

TrainConfig train_from_config(const KVConfig& cfg, double default_lr) {
    TrainConfig tc;
    tc.learning_rate = cfg.get_double("lr", default_lr);
    tc.beta1 = cfg.get_double("beta1", 0.9);
    tc.beta2 = cfg.get_double("beta2", 0.999);
    tc.adam_eps = cfg.get_double("adam_eps", 1e-8);
    tc.batch_size = static_cast<size_t>(cfg.get_int("batch_size", 32));
    tc.max_epochs = static_cast<size_t>(cfg.get_int("max_epochs", 150));
    tc.patience = static_cast<size_t>(cfg.get_int("patience", 5));
    tc.rho = cfg.get_double("rho", 0.55);
    tc.grad_clip = cfg.get_double("grad_clip", 0.0);
    tc.seed = cfg.get_u64("seed", 7);
    tc.selection_metric = cfg.get_str("selection_metric", "NDCG@10");
    tc.validate();
    return tc;
}

DistillConfig distill_from_config(const KVConfig& cfg) {
    DistillConfig dc;
    dc.alpha = cfg.get_double("alpha", 0.5);
    dc.temperature = cfg.get_double("temperature", 1.5);
    dc.rho = cfg.get_double("rho", 0.35);
    dc.optimizer = train_from_config(cfg, 1e-4);
    dc.optimizer.rho = dc.rho;
    dc.validate();
    return dc;
}

std::unique_ptr<std::ofstream> open_log(const KVConfig& cfg) {
    auto path = cfg.get("log");
    if (!path) return nullptr;
    auto log = std::make_unique<std::ofstream>(*path, std::ios::trunc);
    if (!*log) throw IoError("cannot create log " + *path);
    return log;
}

void run_prepare(const KVConfig& cfg) {
    PrepareOptions opt;
    opt.input_path = cfg.get_str("input");
    opt.format = cfg.get_str("format", "ml-1m");
    opt.min_count = static_cast<size_t>(cfg.get_int("min_count", 5));
    opt.max_len = static_cast<size_t>(cfg.get_int("max_len", 50));
    opt.seed = cfg.get_u64("seed", 7);
    std::string out = cfg.get_str("out");

    Prepared prepared = prepare_dataset(opt);
    save_dataset(prepared.dataset, out);
    if (auto tm = cfg.get("tokenmap_out")) prepared.token_map.save(*tm);
}

void run_train(const KVConfig& cfg) {
    SplitDataset dataset = load_dataset(cfg.get_str("data"));
    InitMode mode = parse_init_mode(cfg.get_str("init", "scratch_all"));
    TrainConfig tc = train_from_config(cfg, 2e-5);

    ModelConfig mc;
    ModelParams init;
    if (mode == InitMode::scratch_all) {
        mc = arch_from_config(cfg, dataset);
        init = init_params(mc, tc.seed, mode);
    } else {
        Checkpoint ckpt = load_checkpoint(cfg.get_str("init_checkpoint"));
        mc = arch_from_config(cfg, dataset, &ckpt.config);
        init = init_params(mc, tc.seed, mode, &ckpt.params, &ckpt.config);
    }

    auto log = open_log(cfg);
    TrainResult result = train(mc, std::move(init), dataset, tc, log.get());
    save_checkpoint(result.best_params, mc, cfg.get_str("out"));
}

void run_distill(const KVConfig& cfg) {
    SplitDataset dataset = load_dataset(cfg.get_str("data"));
    Checkpoint teacher = load_checkpoint(cfg.get_str("teacher"));
    ModelConfig student_config = arch_from_config(cfg, dataset);
    DistillConfig dc = distill_from_config(cfg);
    ModelParams student_init =
        init_params(student_config, dc.optimizer.seed, InitMode::scratch_all);

    auto log = open_log(cfg);
    TrainResult result = distill(teacher.config, teacher.params, student_config,
                                 std::move(student_init), dataset, dc, log.get());
    save_checkpoint(result.best_params, student_config, cfg.get_str("out"));
}

std::string run_eval(const KVConfig& cfg) {
    SplitDataset dataset = load_dataset(cfg.get_str("data"));
    Checkpoint ckpt = load_checkpoint(cfg.get_str("checkpoint"));
    Split split = parse_split(cfg.get_str("split", "test"));
    RankingReport report = evaluate(ckpt.config, ckpt.params, dataset, split,
                                    parse_ks(cfg), cfg.digest());
    return report.to_json();
}

ExperimentSpec spec_from_config(const KVConfig& cfg, bool need_interactions,
                                bool need_dataset, bool need_teacher,
                                bool need_init_checkpoint) {
    ExperimentSpec spec;
    spec.min_count = static_cast<size_t>(cfg.get_int("min_count", 5));
    spec.report_split = parse_split(cfg.get_str("split", "val"));
    spec.ks = parse_ks(cfg);
    spec.train = train_from_config(cfg, cfg.has("teacher") ? 1e-4 : 2e-5);
    if (need_dataset) {
        spec.dataset = load_dataset(cfg.get_str("data"));
        spec.has_dataset = true;
        spec.model = arch_from_config(cfg, spec.dataset);
    } else {
        SplitDataset shape_only;
        shape_only.max_len = static_cast<size_t>(cfg.get_int("max_len", 50));
        shape_only.vocab_size = 3;  // placeholder, re-set per mapping seed
        spec.model = arch_from_config(cfg, shape_only);
    }
    if (need_interactions)
        spec.interactions =
            load_interactions(cfg.get_str("input"), cfg.get_str("format", "ml-1m"));
    if (need_teacher) {
        spec.teacher = load_checkpoint(cfg.get_str("teacher"));
        spec.distill = distill_from_config(cfg);
        spec.has_teacher = true;
    }
    if (need_init_checkpoint) {
        spec.init_checkpoint = load_checkpoint(cfg.get_str("init_checkpoint"));
        spec.has_init_checkpoint = true;
    }
    return spec;
}

std::string run_sweep(const KVConfig& cfg) {
    std::string axis = cfg.get_str("axis");
    std::vector<std::string> values = split_csv(cfg.get_str("values"));
    bool needs_teacher = axis == "alpha" || axis == "temperature";
    ExperimentSpec spec =
        spec_from_config(cfg, axis == "mapping_seed", axis != "mapping_seed",
                         needs_teacher, axis == "init_mode");
    return sweep(axis, values, spec).to_json();
}

std::string run_stability(const KVConfig& cfg) {
    std::vector<uint64_t> seeds;
    for (const auto& v : split_csv(cfg.get_str("seeds")))
        seeds.push_back(std::strtoull(v.c_str(), nullptr, 10));
    ExperimentSpec spec = spec_from_config(cfg, true, false, false, false);
    return stability_experiment(spec, seeds).to_json();
}

std::string run_bench(const KVConfig& cfg) {
    ServingBundle teacher = ServingBundle::load(cfg.get_str("teacher_checkpoint"),
                                                cfg.get_str("tokenmap"));
    ServingBundle student = ServingBundle::load(cfg.get_str("student_checkpoint"),
                                                cfg.get_str("tokenmap"));
    size_t requests = static_cast<size_t>(cfg.get_int("requests", 100));
    size_t warmup = static_cast<size_t>(cfg.get_int("warmup", 10));
    size_t k = static_cast<size_t>(cfg.get_int("k", 10));
    if (requests < 1) throw ParamError("requests must be >= 1");

    // Synthetic trace over the shared vocabulary.
    Rng rng(Rng::derive_seed(cfg.get_u64("seed", 7), rng_stream::synthetic));
    size_t items = teacher.token_map.item_count();
    std::vector<std::vector<std::string>> trace(requests);
    for (auto& history : trace) {
        size_t len = 1 + rng.next_below(std::min<size_t>(20, items));
        for (size_t i = 0; i < len; ++i)
            history.push_back(teacher.token_map.item(
                kFirstItemToken + static_cast<int32_t>(rng.next_below(items))));
    }
    return bench(teacher, student, trace, warmup, k).to_json();
}

}  // namespace

struct srkd_config {
    KVConfig kv;
};

namespace {
const KVConfig& kv(const srkd_config* config) {
    if (!config) throw ParamError("null config");
    return config->kv;
}
}  // namespace

struct srkd_bundle {
    ServingBundle bundle;
};

struct srkd_server {
    std::unique_ptr<RecommendServer> server;
};

extern "C" {

const char* srkd_version(void) { return "1.0.0"; }

const char* srkd_last_error(void) { return g_last_error.c_str(); }

void srkd_string_free(char* s) { std::free(s); }

srkd_config* srkd_config_new(void) { return new srkd_config{}; }

void srkd_config_free(srkd_config* config) { delete config; }

srkd_status srkd_config_load_file(srkd_config* config, const char* path) {
    return guarded([&] {
        if (!config || !path) throw ParamError("null argument");
        KVConfig loaded = KVConfig::parse_file(path);
        for (const auto& [k, v] : loaded.entries()) config->kv.set(k, v);
    });
}

srkd_status srkd_config_set(srkd_config* config, const char* key, const char* value) {
    return guarded([&] {
        if (!config || !key || !value) throw ParamError("null argument");
        config->kv.set(key, value);
    });
}

const char* srkd_config_get(const srkd_config* config, const char* key) {
    if (!config || !key) return nullptr;
    auto it = config->kv.entries().find(key);
    return it == config->kv.entries().end() ? nullptr : it->second.c_str();
}

srkd_status srkd_prepare(const srkd_config* config) {
    return guarded([&] { run_prepare(kv(config)); });
}

srkd_status srkd_train(const srkd_config* config) {
    return guarded([&] { run_train(kv(config)); });
}

srkd_status srkd_distill(const srkd_config* config) {
    return guarded([&] { run_distill(kv(config)); });
}

srkd_status srkd_eval(const srkd_config* config, char** json_out) {
    return guarded([&] {
        if (!json_out) throw ParamError("null json_out");
        *json_out = dup_string(run_eval(kv(config)));
    });
}

srkd_status srkd_sweep(const srkd_config* config, char** json_out) {
    return guarded([&] {
        if (!json_out) throw ParamError("null json_out");
        *json_out = dup_string(run_sweep(kv(config)));
    });
}

srkd_status srkd_stability(const srkd_config* config, char** json_out) {
    return guarded([&] {
        if (!json_out) throw ParamError("null json_out");
        *json_out = dup_string(run_stability(kv(config)));
    });
}

srkd_status srkd_bench(const srkd_config* config, char** json_out) {
    return guarded([&] {
        if (!json_out) throw ParamError("null json_out");
        *json_out = dup_string(run_bench(kv(config)));
    });
}

srkd_status srkd_bundle_open(const char* checkpoint_path, const char* tokenmap_path,
                             srkd_bundle** out) {
    return guarded([&] {
        if (!checkpoint_path || !tokenmap_path || !out)
            throw ParamError("null argument");
        auto bundle = std::make_unique<srkd_bundle>();
        bundle->bundle = ServingBundle::load(checkpoint_path, tokenmap_path);
        *out = bundle.release();
    });
}

void srkd_bundle_close(srkd_bundle* bundle) { delete bundle; }

srkd_status srkd_recommend(const srkd_bundle* bundle, const char* const* items,
                           size_t item_count, int k, char** json_out) {
    return guarded([&] {
        if (!bundle || (!items && item_count) || !json_out)
            throw ParamError("null argument");
        if (k < 1) throw ParamError("k must be >= 1");
        std::vector<std::string> history;
        history.reserve(item_count);
        for (size_t i = 0; i < item_count; ++i) history.emplace_back(items[i]);
        Recommendation rec =
            recommend(bundle->bundle, history, static_cast<size_t>(k));
        *json_out = dup_string(rec.to_json());
    });
}

srkd_status srkd_server_start(const srkd_config* config, srkd_server** out) {
    return guarded([&] {
        if (!out) throw ParamError("null server out");
        const KVConfig& cfg = kv(config);
        ServingBundle bundle = ServingBundle::load(cfg.get_str("checkpoint"),
                                                   cfg.get_str("tokenmap"));
        int port = static_cast<int>(cfg.get_int("port", 0));
        int deadline = static_cast<int>(cfg.get_int("deadline_ms", 1000));
        int conc = static_cast<int>(cfg.get_int("max_concurrency", 2));
        auto server = std::make_unique<srkd_server>();
        server->server = std::make_unique<RecommendServer>(std::move(bundle), port,
                                                           deadline, conc);
        *out = server.release();
    });
}

int srkd_server_port(const srkd_server* server) {
    return server && server->server ? server->server->port() : -1;
}

void srkd_server_stop(srkd_server* server) { delete server; }

}  // extern "C"
