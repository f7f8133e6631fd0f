// Command-line front end: experiment sweeps (`run`), the exact-enumeration
// theorem suite (`verify`), SLOPE beta tuning on one dataset (`tune`),
// dataset export (`dump`), and finite-difference gradient verification
// (`gradcheck`). Every failure path exits nonzero after printing a
// single-line JSON object with an "error" key.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slateope/abstraction.hpp"
#include "slateope/estimators.hpp"
#include "slateope/gradcheck.hpp"
#include "slateope/harness.hpp"
#include "slateope/rng.hpp"
#include "slateope/slope.hpp"
#include "slateope/synthenv.hpp"

namespace {

using namespace slateope;
namespace fs = std::filesystem;

uint64_t u64(int v) { return static_cast<uint64_t>(v); }

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    if (!out.flush()) throw std::runtime_error("write failed for " + path);
}

void print_error_json(const std::string& message) {
    std::cout << nlohmann::json{{"error", message}}.dump() << "\n";
}

struct Options {
    std::string config_path;
    std::string profile;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_set = false;
    bool literal_signs = false;
};

// Precedence: profile defaults (desk unless told otherwise), then the config
// file, then explicit flags. A "profile" key inside the file wins over the
// --profile flag so a file is self-describing.
ExperimentConfig resolve_config(const Options& o) {
    ExperimentConfig cfg;
    if (!o.config_path.empty()) {
        auto doc = nlohmann::json::parse(read_file(o.config_path));
        if (!o.profile.empty() && !doc.contains("profile")) doc["profile"] = o.profile;
        cfg = ExperimentConfig::from_json_text(doc.dump());
    } else {
        cfg = o.profile == "paper" ? ExperimentConfig::paper_profile()
                                   : ExperimentConfig::desk_profile();
    }
    if (o.seed_set) cfg.master_seed = o.seed;
    if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
    if (o.literal_signs) cfg.abstraction_train.literal_signs = true;
    cfg.validate();
    return cfg;
}

struct FirstPoint {
    int L, fn, n;
    std::shared_ptr<const Environment> env;
    std::shared_ptr<FactoredPolicy> logging;
    std::shared_ptr<FactoredPolicy> target;
    LoggedDataset data;
};

// First sweep point, first trial, with the same derived streams as `run`,
// so `tune` and `dump` reproduce exactly what seed 0 of a sweep sees.
FirstPoint first_point(const ExperimentConfig& cfg) {
    FirstPoint p{cfg.slate_sizes.front(), cfg.reward_fn_ids.front(),
                 cfg.data_sizes.front(), nullptr, nullptr, nullptr, {}};
    EnvConfig ec = cfg.env;
    ec.num_slots = p.L;
    ec.reward_fn_id = p.fn;
    ec.seed = derive_seed(cfg.master_seed, "env", {u64(p.L), u64(p.fn)});
    p.env = std::make_shared<const Environment>(build_env(ec));
    std::tie(p.logging, p.target) = make_policies(p.env);
    p.data = generate_logs(*p.env, *p.logging, p.n,
                           derive_seed(cfg.master_seed, "data",
                                       {u64(p.L), u64(p.fn), u64(p.n), 0}));
    return p;
}

int cmd_run(const Options& o) {
    const ExperimentConfig cfg = resolve_config(o);
    const MetricsTable metrics = run_experiment(cfg, &std::cerr);
    const auto paths = emit_report(metrics, cfg.out_dir, /*write_csv=*/true,
                                   /*write_json=*/true, /*plot_data=*/true);

    std::printf("%-22s %3s %4s %6s %3s %12s %12s %12s\n", "estimator", "L", "|A|", "n",
                "fn", "nMSE", "bias^2", "variance");
    for (const MetricsRow& row : metrics.rows) {
        std::printf("%-22s %3d %4d %6d %3d %12.4e %12.4e %12.4e\n", row.estimator.c_str(),
                    row.num_slots, row.slot_size, row.data_size, row.reward_fn_id,
                    row.normalized_mse, row.squared_bias, row.variance);
    }
    for (const std::string& path : paths) std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_verify(const Options& o) {
    TheoremInstance inst = TheoremInstance::tiny();
    if (o.seed_set) inst.seed = o.seed;
    const TheoremReport report = verify_theorems(inst);
    std::cout << report_lines(report);
    if (!o.out_dir.empty()) {
        fs::create_directories(o.out_dir);
        const std::string path = o.out_dir + "/verify.json";
        write_file(path, report_json(report));
        std::printf("wrote %s\n", path.c_str());
    }
    if (!report.all_pass()) {
        int failed = 0;
        for (const auto& c : report.checks) failed += c.pass ? 0 : 1;
        print_error_json("verification failed: " + std::to_string(failed) + " of " +
                         std::to_string(report.checks.size()) + " checks");
        return 2;
    }
    return 0;
}

int cmd_tune(const Options& o) {
    const ExperimentConfig cfg = resolve_config(o);
    const FirstPoint p = first_point(cfg);
    const uint64_t ms = cfg.master_seed;

    TrainConfig tc = cfg.abstraction_train;
    tc.betas = cfg.betas;
    tc.mc_samples = cfg.marginal_mc_samples;
    tc.marginal_floor = cfg.marginal_floor;
    std::cerr << "phase 1: " << tc.phase1_steps << " steps\n";
    const AbstractionModel phase1 = train_phase1(
        p.data, tc, derive_seed(ms, "abst", {u64(p.L), u64(p.fn), u64(p.n), 0}));

    std::vector<CandidateEstimate> candidates;
    for (size_t bi = 0; bi < cfg.betas.size(); ++bi) {
        const double beta = cfg.betas[bi];
        std::cerr << "fine-tune beta=" << beta << "\n";
        AbstractionModel tuned =
            fine_tune(phase1, p.data, tc, beta,
                      derive_seed(ms, "abst-ft", {u64(p.L), u64(p.fn), u64(p.n), 0, bi}));
        const MlpAbstraction abst(std::make_shared<const AbstractionModel>(std::move(tuned)));

        EstimatorInputs in;
        in.dataset = &p.data;
        in.target = p.target.get();
        in.logging = p.logging.get();
        in.abstraction = &abst;
        in.prefix_len = cfg.prefix_len;
        in.mc_samples = cfg.marginal_mc_samples;
        in.marginal_floor = cfg.marginal_floor;
        in.enumeration_cap = cfg.enumeration_cap;
        Rng zrng = substream(ms, "est-lips", {u64(p.L), u64(p.fn), u64(p.n), 0, bi});
        const EstimatorResult res = estimate_lips(in, &zrng);
        candidates.push_back(make_candidate(beta, res.per_record));
    }
    sort_candidates(candidates);
    const size_t selected = slope_select(candidates);
    const std::string report = slope_report_json(candidates, selected);
    std::cout << report << "\n";
    if (!o.out_dir.empty()) {
        fs::create_directories(o.out_dir);
        const std::string path = o.out_dir + "/slope.json";
        write_file(path, report + "\n");
        std::fprintf(stderr, "wrote %s\n", path.c_str());
    }
    return 0;
}

int cmd_dump(const Options& o) {
    const ExperimentConfig cfg = resolve_config(o);
    const FirstPoint p = first_point(cfg);
    fs::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/dataset.jsonl";
    save_jsonl(p.data, path);
    std::printf("wrote %s (records=%d, slots=%d, slot_size=%d, reward_fn=%d)\n",
                path.c_str(), p.n, p.L, cfg.env.slot_size, p.fn);
    return 0;
}

int cmd_gradcheck(const Options& o) {
    const uint64_t seed = o.seed_set ? o.seed : 7;
    const auto results = run_gradcheck(20, seed);
    for (const std::string& line : gradcheck_lines(results)) std::cout << line << "\n";
    if (!o.out_dir.empty()) {
        fs::create_directories(o.out_dir);
        const std::string path = o.out_dir + "/gradcheck.json";
        write_file(path, gradcheck_json(results));
        std::printf("wrote %s\n", path.c_str());
    }
    if (!gradcheck_all_pass(results)) {
        int failed = 0;
        for (const auto& r : results) failed += r.pass ? 0 : 1;
        print_error_json("gradient check failed: " + std::to_string(failed) + " of " +
                         std::to_string(results.size()) + " components");
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"slate off-policy evaluation toolkit"};
    app.require_subcommand(1);

    Options run_o, verify_o, tune_o, dump_o, grad_o;

    auto add_config_opts = [](CLI::App* sub, Options& o) {
        sub->add_option("--config", o.config_path, "experiment config JSON")
            ->check(CLI::ExistingFile);
        sub->add_option("--profile", o.profile, "base defaults: desk or paper")
            ->check(CLI::IsMember({"desk", "paper"}));
    };
    auto add_seed_opt = [](CLI::App* sub, Options& o) {
        return sub->add_option("--seed", o.seed, "master seed override");
    };

    CLI::App* run_cmd = app.add_subcommand("run", "run the configured experiment sweep");
    add_config_opts(run_cmd, run_o);
    CLI::Option* run_seed = add_seed_opt(run_cmd, run_o);
    run_cmd->add_option("--out", run_o.out_dir, "report directory override");
    run_cmd->add_flag("--paper-literal-signs", run_o.literal_signs,
                      "verbatim objective sign on the abstraction reward term");

    CLI::App* verify_cmd =
        app.add_subcommand("verify", "exact-enumeration theorem suite on the tiny instance");
    CLI::Option* verify_seed = add_seed_opt(verify_cmd, verify_o);
    verify_cmd->add_option("--out", verify_o.out_dir, "also write verify.json here");

    CLI::App* tune_cmd = app.add_subcommand(
        "tune", "SLOPE beta selection on the first sweep point's first dataset");
    add_config_opts(tune_cmd, tune_o);
    CLI::Option* tune_seed = add_seed_opt(tune_cmd, tune_o);
    tune_cmd->add_option("--out", tune_o.out_dir, "also write slope.json here");
    tune_cmd->add_flag("--paper-literal-signs", tune_o.literal_signs,
                       "verbatim objective sign on the abstraction reward term");

    CLI::App* dump_cmd =
        app.add_subcommand("dump", "export the first sweep point's first dataset as JSONL");
    add_config_opts(dump_cmd, dump_o);
    CLI::Option* dump_seed = add_seed_opt(dump_cmd, dump_o);
    dump_cmd->add_option("--out", dump_o.out_dir, "output directory override");

    CLI::App* grad_cmd = app.add_subcommand(
        "gradcheck", "finite-difference check of every gradient path on 20 random models");
    CLI::Option* grad_seed = add_seed_opt(grad_cmd, grad_o);
    grad_cmd->add_option("--out", grad_o.out_dir, "also write gradcheck.json here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code != 0) print_error_json(std::string("argument error: ") + e.what());
        return code;
    }

    run_o.seed_set = run_seed->count() > 0;
    verify_o.seed_set = verify_seed->count() > 0;
    tune_o.seed_set = tune_seed->count() > 0;
    dump_o.seed_set = dump_seed->count() > 0;
    grad_o.seed_set = grad_seed->count() > 0;

    try {
        if (run_cmd->parsed()) return cmd_run(run_o);
        if (verify_cmd->parsed()) return cmd_verify(verify_o);
        if (tune_cmd->parsed()) return cmd_tune(tune_o);
        if (dump_cmd->parsed()) return cmd_dump(dump_o);
        if (grad_cmd->parsed()) return cmd_gradcheck(grad_o);
    } catch (const std::exception& e) {
        print_error_json(e.what());
        return 1;
    }
    print_error_json("no subcommand");
    return 1;
}
