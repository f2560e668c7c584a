// srkd command line. Everything goes through the C API in srkd.h; this
// translation unit deliberately includes nothing else from the library.
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "srkd.h"

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop.store(true); }

struct ConfigHandle {
    srkd_config* cfg;
    ConfigHandle() : cfg(srkd_config_new()) {}
    ~ConfigHandle() { srkd_config_free(cfg); }
};

// One subcommand's flags: every option is collected as a string and applied
// on top of the optional --config file, so explicit flags win.
struct SubCommand {
    CLI::App* app = nullptr;
    std::string config_path;
    std::map<std::string, std::string> values;
    std::vector<std::pair<std::string, CLI::Option*>> options;

    CLI::Option* opt(const std::string& key, const std::string& flag,
                     const std::string& help) {
        CLI::Option* o = app->add_option(flag, values[key], help);
        options.emplace_back(key, o);
        return o;
    }

    int fill(srkd_config* cfg) const {
        if (!config_path.empty()) {
            if (srkd_config_load_file(cfg, config_path.c_str()) != SRKD_OK)
                return 1;
        }
        for (const auto& [key, option] : options)
            if (option->count() > 0)
                srkd_config_set(cfg, key.c_str(), values.at(key).c_str());
        return 0;
    }
};

SubCommand make_sub(CLI::App& app, const std::string& name, const std::string& help) {
    SubCommand sub;
    sub.app = app.add_subcommand(name, help);
    sub.app->add_option("--config", sub.config_path,
                        "key = value config file; flags override it");
    return sub;
}

void add_arch_flags(SubCommand& sub) {
    sub.opt("layers", "--layers", "encoder layers");
    sub.opt("hidden", "--hidden", "hidden dimension");
    sub.opt("heads", "--heads", "attention heads");
    sub.opt("ffn_dim", "--ffn-dim", "feed-forward dimension (default 4*hidden)");
    sub.opt("dropout", "--dropout", "dropout rate");
    sub.opt("tie_output", "--tie-output", "tie output weights to the embedding");
}

void add_optim_flags(SubCommand& sub) {
    sub.opt("lr", "--lr", "learning rate");
    sub.opt("batch_size", "--batch-size", "batch size");
    sub.opt("max_epochs", "--max-epochs", "epoch budget");
    sub.opt("patience", "--patience", "early-stopping patience");
    sub.opt("grad_clip", "--grad-clip", "global gradient norm clip (0 = off)");
    sub.opt("seed", "--seed", "run seed");
    sub.opt("selection_metric", "--selection-metric", "e.g. NDCG@10 or HR@5");
}

int exit_code(srkd_status status) {
    if (status == SRKD_OK) return 0;
    std::fprintf(stderr, "error: code=%d %s\n", static_cast<int>(status),
                 srkd_last_error());
    return status == SRKD_ERR_PARAM || status == SRKD_ERR_CONFIG ? 2 : 1;
}

int emit_json(char* json, const std::string& out_path) {
    if (!json) return 1;
    std::printf("%s\n", json);
    int rc = 0;
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::trunc);
        f << json << "\n";
        if (!f) {
            std::fprintf(stderr, "error: code=2 cannot write %s\n", out_path.c_str());
            rc = 1;
        }
    }
    srkd_string_free(json);
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sequential recommendation: masked-prediction training, "
                 "temperature distillation, ranking evaluation and serving"};
    app.require_subcommand(1);

    auto prepare = make_sub(app, "prepare", "build a dataset artifact from a log");
    prepare.opt("input", "--input", "raw interaction log")->required();
    prepare.opt("format", "--format", "ml-1m or tsv");
    prepare.opt("min_count", "--min-count", "minimum interactions per user/item");
    prepare.opt("max_len", "--max-len", "sequence length n");
    prepare.opt("seed", "--seed", "token-map seed");
    prepare.opt("out", "--out", "dataset artifact path")->required();
    prepare.opt("tokenmap_out", "--tokenmap-out", "token map json path");

    auto train_cmd = make_sub(app, "train", "stage one: masked-prediction training");
    train_cmd.opt("data", "--data", "prepared dataset")->required();
    train_cmd.opt("out", "--out", "checkpoint output path")->required();
    train_cmd.opt("log", "--log", "csv training log path");
    train_cmd.opt("rho", "--rho", "mask ratio");
    train_cmd.opt("init", "--init",
                  "scratch_all | scratch_embed | scratch_layer | from_checkpoint");
    train_cmd.opt("init_checkpoint", "--init-checkpoint",
                  "weights for non-scratch_all init modes");
    add_arch_flags(train_cmd);
    add_optim_flags(train_cmd);

    auto distill_cmd = make_sub(app, "distill", "stage two: distill a student");
    distill_cmd.opt("data", "--data", "prepared dataset")->required();
    distill_cmd.opt("teacher", "--teacher", "teacher checkpoint")->required();
    distill_cmd.opt("out", "--out", "student checkpoint output path")->required();
    distill_cmd.opt("log", "--log", "csv training log path");
    distill_cmd.opt("alpha", "--alpha", "hard-loss weight in [0,1]");
    distill_cmd.opt("temperature", "--temperature", "distillation temperature");
    distill_cmd.opt("rho", "--rho", "mask ratio");
    add_arch_flags(distill_cmd);
    add_optim_flags(distill_cmd);

    auto eval_cmd = make_sub(app, "eval", "leave-one-out ranking evaluation");
    eval_cmd.opt("checkpoint", "--checkpoint", "model checkpoint")->required();
    eval_cmd.opt("data", "--data", "prepared dataset")->required();
    eval_cmd.opt("split", "--split", "val or test");
    eval_cmd.opt("ks", "--ks", "comma-separated K list");
    std::string eval_out;
    eval_cmd.app->add_option("--out", eval_out, "also write the report here");

    auto sweep_cmd = make_sub(app, "sweep", "one-axis hyperparameter sweep");
    sweep_cmd
        .opt("axis", "--axis", "rho | alpha | temperature | mapping_seed | init_mode")
        ->required();
    sweep_cmd.opt("values", "--values", "comma-separated axis values")->required();
    sweep_cmd.opt("data", "--data", "prepared dataset (all axes but mapping_seed)");
    sweep_cmd.opt("input", "--input", "raw log (mapping_seed axis)");
    sweep_cmd.opt("format", "--format", "raw log format");
    sweep_cmd.opt("min_count", "--min-count", "filter threshold (mapping_seed axis)");
    sweep_cmd.opt("max_len", "--max-len", "sequence length (mapping_seed axis)");
    sweep_cmd.opt("teacher", "--teacher", "teacher checkpoint (alpha/temperature)");
    sweep_cmd.opt("init_checkpoint", "--init-checkpoint", "weights (init_mode axis)");
    sweep_cmd.opt("split", "--split", "report split, val or test");
    sweep_cmd.opt("ks", "--ks", "comma-separated K list");
    sweep_cmd.opt("alpha", "--alpha", "base alpha");
    sweep_cmd.opt("temperature", "--temperature", "base temperature");
    sweep_cmd.opt("rho", "--rho", "base mask ratio");
    add_arch_flags(sweep_cmd);
    add_optim_flags(sweep_cmd);
    std::string sweep_out;
    sweep_cmd.app->add_option("--out", sweep_out, "also write the grid here");

    auto stability_cmd = make_sub(app, "stability", "random-mapping stability runs");
    stability_cmd.opt("input", "--input", "raw interaction log")->required();
    stability_cmd.opt("format", "--format", "ml-1m or tsv");
    stability_cmd.opt("min_count", "--min-count", "filter threshold");
    stability_cmd.opt("max_len", "--max-len", "sequence length n");
    stability_cmd.opt("seeds", "--seeds", "comma-separated mapping seeds")->required();
    stability_cmd.opt("split", "--split", "report split, val or test");
    stability_cmd.opt("ks", "--ks", "comma-separated K list");
    stability_cmd.opt("rho", "--rho", "mask ratio");
    add_arch_flags(stability_cmd);
    add_optim_flags(stability_cmd);
    std::string stability_out;
    stability_cmd.app->add_option("--out", stability_out, "also write the grid here");

    auto serve_cmd = make_sub(app, "serve", "http recommendation endpoint");
    serve_cmd.opt("checkpoint", "--checkpoint", "model checkpoint")->required();
    serve_cmd.opt("tokenmap", "--tokenmap", "token map json")->required();
    serve_cmd.opt("port", "--port", "tcp port (default: $SRKD_PORT, else any free)");
    serve_cmd.opt("deadline_ms", "--deadline-ms", "admission deadline");
    serve_cmd.opt("max_concurrency", "--max-concurrency", "parallel evaluations");

    auto bench_cmd = make_sub(app, "bench", "teacher vs student latency benchmark");
    bench_cmd.opt("teacher_checkpoint", "--teacher-checkpoint", "teacher checkpoint")
        ->required();
    bench_cmd.opt("student_checkpoint", "--student-checkpoint", "student checkpoint")
        ->required();
    bench_cmd.opt("tokenmap", "--tokenmap", "shared token map")->required();
    bench_cmd.opt("requests", "--requests", "trace length");
    bench_cmd.opt("warmup", "--warmup", "unrecorded warmup requests");
    bench_cmd.opt("k", "--k", "top-k per request");
    bench_cmd.opt("seed", "--seed", "trace seed");
    std::string bench_out;
    bench_cmd.app->add_option("--out", bench_out, "also write the report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    ConfigHandle handle;
    srkd_config* cfg = handle.cfg;

    if (prepare.app->parsed()) {
        if (prepare.fill(cfg)) return exit_code(SRKD_ERR_IO);
        srkd_status rc = srkd_prepare(cfg);
        if (rc == SRKD_OK)
            std::fprintf(stderr, "prepared dataset -> %s\n", srkd_config_get(cfg, "out"));
        return exit_code(rc);
    }
    if (train_cmd.app->parsed()) {
        if (train_cmd.fill(cfg)) return exit_code(SRKD_ERR_IO);
        srkd_status rc = srkd_train(cfg);
        if (rc == SRKD_OK)
            std::fprintf(stderr, "trained checkpoint -> %s\n", srkd_config_get(cfg, "out"));
        return exit_code(rc);
    }
    if (distill_cmd.app->parsed()) {
        if (distill_cmd.fill(cfg)) return exit_code(SRKD_ERR_IO);
        srkd_status rc = srkd_distill(cfg);
        if (rc == SRKD_OK)
            std::fprintf(stderr, "distilled checkpoint -> %s\n",
                         srkd_config_get(cfg, "out"));
        return exit_code(rc);
    }
    if (eval_cmd.app->parsed()) {
        if (eval_cmd.fill(cfg)) return exit_code(SRKD_ERR_IO);
        char* json = nullptr;
        srkd_status rc = srkd_eval(cfg, &json);
        if (rc != SRKD_OK) return exit_code(rc);
        return emit_json(json, eval_out);
    }
    if (sweep_cmd.app->parsed()) {
        if (sweep_cmd.fill(cfg)) return exit_code(SRKD_ERR_IO);
        char* json = nullptr;
        srkd_status rc = srkd_sweep(cfg, &json);
        if (rc != SRKD_OK) return exit_code(rc);
        return emit_json(json, sweep_out);
    }
    if (stability_cmd.app->parsed()) {
        if (stability_cmd.fill(cfg)) return exit_code(SRKD_ERR_IO);
        char* json = nullptr;
        srkd_status rc = srkd_stability(cfg, &json);
        if (rc != SRKD_OK) return exit_code(rc);
        return emit_json(json, stability_out);
    }
    if (bench_cmd.app->parsed()) {
        if (bench_cmd.fill(cfg)) return exit_code(SRKD_ERR_IO);
        char* json = nullptr;
        srkd_status rc = srkd_bench(cfg, &json);
        if (rc != SRKD_OK) return exit_code(rc);
        return emit_json(json, bench_out);
    }
    if (serve_cmd.app->parsed()) {
        if (serve_cmd.fill(cfg)) return exit_code(SRKD_ERR_IO);
        if (!srkd_config_get(cfg, "port")) {
            if (const char* env_port = std::getenv("SRKD_PORT"))
                srkd_config_set(cfg, "port", env_port);
        }
        srkd_server* server = nullptr;
        srkd_status rc = srkd_server_start(cfg, &server);
        if (rc != SRKD_OK) return exit_code(rc);
        std::printf("listening on port %d\n", srkd_server_port(server));
        std::fflush(stdout);
        std::signal(SIGINT, handle_signal);
        std::signal(SIGTERM, handle_signal);
        while (!g_stop.load())
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        srkd_server_stop(server);
        return 0;
    }
    return 2;
}
