#include "slateope/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include <json.hpp>

#include "slateope/linalg.hpp"
#include "slateope/rng.hpp"
#include "slateope/slope.hpp"

namespace slateope {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

uint64_t u64(int v) { return static_cast<uint64_t>(v); }

std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string lips_row_name(double beta) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "lips[beta=%g]", beta);
    return buf;
}

json reward_train_to_json(const RewardTrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"steps_per_epoch", c.steps_per_epoch},
                {"lr", c.lr},
                {"train_fraction", c.train_fraction},
                {"patience", c.patience},
                {"hidden", c.hidden},
                {"batch_size", c.batch_size}};
}

RewardTrainConfig reward_train_from_json(const json& obj, RewardTrainConfig c) {
    c.epochs = obj.value("epochs", c.epochs);
    c.steps_per_epoch = obj.value("steps_per_epoch", c.steps_per_epoch);
    c.lr = obj.value("lr", c.lr);
    c.train_fraction = obj.value("train_fraction", c.train_fraction);
    c.patience = obj.value("patience", c.patience);
    c.hidden = obj.value("hidden", c.hidden);
    c.batch_size = obj.value("batch_size", c.batch_size);
    return c;
}

json train_cfg_to_json(const TrainConfig& c) {
    return json{{"latent_size", c.latent_size},
                {"hidden", c.hidden},
                {"phase1_beta", c.phase1_beta},
                {"betas", c.betas},
                {"phase1_steps", c.phase1_steps},
                {"finetune_steps", c.finetune_steps},
                {"lr", c.lr},
                {"reward_scale", c.reward_scale},
                {"batch_size", c.batch_size},
                {"temperature", c.temperature},
                {"literal_signs", c.literal_signs},
                {"mc_samples", c.mc_samples},
                {"marginal_floor", c.marginal_floor}};
}

TrainConfig train_cfg_from_json(const json& obj, TrainConfig c) {
    c.latent_size = obj.value("latent_size", c.latent_size);
    c.hidden = obj.value("hidden", c.hidden);
    c.phase1_beta = obj.value("phase1_beta", c.phase1_beta);
    c.betas = obj.value("betas", c.betas);
    c.phase1_steps = obj.value("phase1_steps", c.phase1_steps);
    c.finetune_steps = obj.value("finetune_steps", c.finetune_steps);
    c.lr = obj.value("lr", c.lr);
    c.reward_scale = obj.value("reward_scale", c.reward_scale);
    c.batch_size = obj.value("batch_size", c.batch_size);
    c.temperature = obj.value("temperature", c.temperature);
    c.literal_signs = obj.value("literal_signs", c.literal_signs);
    c.mc_samples = obj.value("mc_samples", c.mc_samples);
    c.marginal_floor = obj.value("marginal_floor", c.marginal_floor);
    return c;
}

bool uses_reward_model(const std::string& name) {
    return name == "dm" || name == "dr" || name == "pidr" || name == "offcem";
}

// Runs body(0..count-1) on a small worker pool; results must be written to
// disjoint slots so the outcome is identical at any thread count. The first
// exception wins and is rethrown after all workers stop.
void parallel_for(int count, int num_threads, const std::function<void(int)>& body) {
    int threads = num_threads > 0 ? num_threads
                                  : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, count));
    if (threads <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::atomic<bool> stop{false};
    std::mutex err_mutex;
    std::exception_ptr err;
    auto worker = [&]() {
        for (int i = next.fetch_add(1); i < count && !stop.load(); i = next.fetch_add(1)) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!err) err = std::current_exception();
                stop.store(true);
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

struct TrialOutput {
    std::vector<std::pair<std::string, double>> estimates;

    double at(const std::string& name) const {
        for (const auto& [key, value] : estimates) {
            if (key == name) return value;
        }
        throw std::logic_error("trial output missing estimator " + name);
    }
};

TrialOutput run_trial(const ExperimentConfig& cfg, const Environment& env,
                      const FactoredPolicy& logging, const FactoredPolicy& target,
                      int L, int fn, int n, int trial) {
    const uint64_t ms = cfg.master_seed;
    LoggedDataset data =
        generate_logs(env, logging, n, derive_seed(ms, "data", {u64(L), u64(fn), u64(n), u64(trial)}));

    EstimatorInputs in;
    in.dataset = &data;
    in.target = &target;
    in.logging = &logging;
    in.prefix_len = cfg.prefix_len;
    in.mc_samples = cfg.dm_mc_samples;
    in.marginal_floor = cfg.marginal_floor;
    in.enumeration_cap = cfg.enumeration_cap;

    const bool need_model = std::any_of(cfg.estimators.begin(), cfg.estimators.end(),
                                        [](const std::string& e) { return uses_reward_model(e); });
    std::optional<MlpRewardModel> qhat;
    std::vector<double> model_terms;
    if (need_model) {
        qhat.emplace(train_reward_model(data, cfg.reward_train,
                                        derive_seed(ms, "qhat", {u64(L), u64(fn), u64(n), u64(trial)})));
        in.reward_model = &*qhat;
        Rng dm_rng = substream(ms, "dmterms", {u64(L), u64(fn), u64(n), u64(trial)});
        model_terms = dm_terms(data, target, *qhat, cfg.dm_mc_samples, &dm_rng, cfg.enumeration_cap);
        in.dm_cache = &model_terms;
    }

    TrialOutput out;
    for (const std::string& name : cfg.estimators) {
        if (name == "lips") continue;
        Rng rng = substream(ms, "est-" + name, {u64(L), u64(fn), u64(n), u64(trial)});
        out.estimates.emplace_back(name, run_estimator(name, in, &rng).value);
    }

    const bool want_lips = std::find(cfg.estimators.begin(), cfg.estimators.end(), "lips") !=
                           cfg.estimators.end();
    if (want_lips) {
        TrainConfig tc = cfg.abstraction_train;
        tc.betas = cfg.betas;
        tc.mc_samples = cfg.marginal_mc_samples;
        tc.marginal_floor = cfg.marginal_floor;
        AbstractionModel phase1 =
            train_phase1(data, tc, derive_seed(ms, "abst", {u64(L), u64(fn), u64(n), u64(trial)}));
        std::vector<CandidateEstimate> candidates;
        for (size_t bi = 0; bi < cfg.betas.size(); ++bi) {
            const double beta = cfg.betas[bi];
            AbstractionModel tuned =
                fine_tune(phase1, data, tc, beta,
                          derive_seed(ms, "abst-ft", {u64(L), u64(fn), u64(n), u64(trial), bi}));
            MlpAbstraction abst(std::make_shared<const AbstractionModel>(std::move(tuned)));
            EstimatorInputs lin = in;
            lin.abstraction = &abst;
            lin.mc_samples = cfg.marginal_mc_samples;
            Rng zrng = substream(ms, "est-lips", {u64(L), u64(fn), u64(n), u64(trial), bi});
            EstimatorResult res = estimate_lips(lin, &zrng);
            out.estimates.emplace_back(lips_row_name(beta), res.value);
            candidates.push_back(make_candidate(beta, res.per_record));
        }
        sort_candidates(candidates);
        const size_t sel = slope_select(candidates);
        out.estimates.emplace_back("lips_slope", candidates[sel].value);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (slate_sizes.empty()) throw std::invalid_argument("ExperimentConfig: slate_sizes empty");
    if (data_sizes.empty()) throw std::invalid_argument("ExperimentConfig: data_sizes empty");
    if (reward_fn_ids.empty()) throw std::invalid_argument("ExperimentConfig: reward_fn_ids empty");
    if (estimators.empty()) throw std::invalid_argument("ExperimentConfig: estimator list empty");
    if (num_seeds < 1) throw std::invalid_argument("ExperimentConfig: num_seeds must be >= 1");
    if (truth_mc_samples < 1) {
        throw std::invalid_argument("ExperimentConfig: truth_mc_samples must be >= 1");
    }
    if (num_threads < 0) throw std::invalid_argument("ExperimentConfig: num_threads must be >= 0");
    if (dm_mc_samples < 1 || marginal_mc_samples < 1) {
        throw std::invalid_argument("ExperimentConfig: MC sample counts must be >= 1");
    }
    for (int n : data_sizes) {
        if (n < 1) throw std::invalid_argument("ExperimentConfig: data sizes must be >= 1");
    }
    const auto& known = estimator_names();
    bool want_lips = false;
    for (const std::string& name : estimators) {
        if (std::find(known.begin(), known.end(), name) == known.end()) {
            throw std::invalid_argument("ExperimentConfig: unknown estimator " + name);
        }
        want_lips = want_lips || name == "lips";
    }
    if (want_lips) {
        if (betas.empty()) throw std::invalid_argument("ExperimentConfig: beta set empty");
        abstraction_train.validate();
    }
    for (int L : slate_sizes) {
        for (int fn : reward_fn_ids) {
            EnvConfig e = env;
            e.num_slots = L;
            e.reward_fn_id = fn;
            e.validate();
        }
    }
}

ExperimentConfig ExperimentConfig::desk_profile() {
    ExperimentConfig c;
    c.env.slot_size = 4;
    c.env.context_dim = 10;
    c.slate_sizes = {4};
    c.data_sizes = {2000};
    c.reward_fn_ids = {1};
    c.estimators = estimator_names();
    c.num_seeds = 20;
    c.reward_train.epochs = 60;
    c.abstraction_train.latent_size = 30;
    c.abstraction_train.phase1_steps = 600;
    c.abstraction_train.finetune_steps = 300;
    c.abstraction_train.lr = 1e-3;
    return c;
}

ExperimentConfig ExperimentConfig::paper_profile() {
    ExperimentConfig c;
    c.env.slot_size = 10;
    c.env.context_dim = 20;
    c.slate_sizes = {8};
    c.data_sizes = {4000};
    c.reward_fn_ids = {1};
    c.estimators = estimator_names();
    c.num_seeds = 50;
    c.reward_train.epochs = 100;
    c.abstraction_train.lr = 1e-3;
    return c;
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json obj = json::parse(text);
    ExperimentConfig c;
    if (obj.contains("profile")) {
        const std::string profile = obj.at("profile").get<std::string>();
        if (profile == "desk") {
            c = desk_profile();
        } else if (profile == "paper") {
            c = paper_profile();
        } else {
            throw std::invalid_argument("ExperimentConfig: unknown profile " + profile);
        }
    }
    if (obj.contains("env")) c.env = EnvConfig::from_json_text(obj.at("env").dump());
    c.slate_sizes = obj.value("slate_sizes", c.slate_sizes);
    c.data_sizes = obj.value("data_sizes", c.data_sizes);
    c.reward_fn_ids = obj.value("reward_fn_ids", c.reward_fn_ids);
    if (c.estimators.empty()) c.estimators = estimator_names();
    c.estimators = obj.value("estimators", c.estimators);
    c.num_seeds = obj.value("num_seeds", c.num_seeds);
    c.betas = obj.value("betas", c.betas);
    c.master_seed = obj.value("master_seed", c.master_seed);
    c.prefix_len = obj.value("prefix_len", c.prefix_len);
    c.dm_mc_samples = obj.value("dm_mc_samples", c.dm_mc_samples);
    c.marginal_mc_samples = obj.value("marginal_mc_samples", c.marginal_mc_samples);
    c.marginal_floor = obj.value("marginal_floor", c.marginal_floor);
    c.enumeration_cap = obj.value("enumeration_cap", c.enumeration_cap);
    if (obj.contains("reward_train")) {
        c.reward_train = reward_train_from_json(obj.at("reward_train"), c.reward_train);
    }
    if (obj.contains("abstraction_train")) {
        c.abstraction_train = train_cfg_from_json(obj.at("abstraction_train"), c.abstraction_train);
    }
    c.truth_mc_samples = obj.value("truth_mc_samples", c.truth_mc_samples);
    c.num_threads = obj.value("num_threads", c.num_threads);
    c.out_dir = obj.value("out_dir", c.out_dir);
    c.validate();
    return c;
}

std::string ExperimentConfig::to_json_text() const {
    json obj;
    obj["env"] = json::parse(env.to_json_text());
    obj["slate_sizes"] = slate_sizes;
    obj["data_sizes"] = data_sizes;
    obj["reward_fn_ids"] = reward_fn_ids;
    obj["estimators"] = estimators;
    obj["num_seeds"] = num_seeds;
    obj["betas"] = betas;
    obj["master_seed"] = master_seed;
    obj["prefix_len"] = prefix_len;
    obj["dm_mc_samples"] = dm_mc_samples;
    obj["marginal_mc_samples"] = marginal_mc_samples;
    obj["marginal_floor"] = marginal_floor;
    obj["enumeration_cap"] = enumeration_cap;
    obj["reward_train"] = reward_train_to_json(reward_train);
    obj["abstraction_train"] = train_cfg_to_json(abstraction_train);
    obj["truth_mc_samples"] = truth_mc_samples;
    obj["num_threads"] = num_threads;
    obj["out_dir"] = out_dir;
    return obj.dump(2);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

void MetricsRow::validate() const {
    if (estimator.empty()) throw std::invalid_argument("MetricsRow: empty estimator name");
    if (!(true_value != 0.0)) throw std::invalid_argument("MetricsRow: zero true value");
    const double lhs = normalized_mse;
    const double rhs = (squared_bias + variance) / (true_value * true_value);
    const double tol = kMseIdentityTol * std::max(1.0, std::abs(lhs));
    if (!(std::abs(lhs - rhs) <= tol)) {
        throw std::runtime_error("MetricsRow " + estimator +
                                 ": MSE decomposition identity violated, lhs=" + fmt_full(lhs) +
                                 " rhs=" + fmt_full(rhs));
    }
}

MetricsRow make_metrics_row(std::string estimator, int num_slots, int slot_size, int data_size,
                            int reward_fn_id, const ValueEstimate& truth,
                            std::vector<double> per_seed) {
    if (per_seed.empty()) throw std::invalid_argument("make_metrics_row: no per-seed estimates");
    const double V = truth.value;
    if (!(V != 0.0)) throw std::invalid_argument("make_metrics_row: zero true value");
    const auto k = static_cast<long double>(per_seed.size());
    long double sum = 0.0L;
    for (double v : per_seed) sum += v;
    const long double mean = sum / k;
    long double mse = 0.0L;
    long double var = 0.0L;
    for (double v : per_seed) {
        const long double dv = static_cast<long double>(v) - V;
        const long double dm = static_cast<long double>(v) - mean;
        mse += dv * dv;
        var += dm * dm;
    }
    mse /= k;
    var /= k;
    const long double bias = mean - static_cast<long double>(V);

    MetricsRow row;
    row.estimator = std::move(estimator);
    row.num_slots = num_slots;
    row.slot_size = slot_size;
    row.data_size = data_size;
    row.reward_fn_id = reward_fn_id;
    row.true_value = V;
    row.true_value_se = truth.std_error.value_or(0.0);
    row.normalized_mse = static_cast<double>(mse / (static_cast<long double>(V) * V));
    row.squared_bias = static_cast<double>(bias * bias);
    row.variance = static_cast<double>(var);
    row.per_seed = std::move(per_seed);
    row.validate();
    return row;
}

MetricsTable run_experiment(const ExperimentConfig& config, std::ostream* log) {
    config.validate();
    std::mutex log_mutex;
    auto say = [&](const std::string& line) {
        if (!log) return;
        std::lock_guard<std::mutex> lock(log_mutex);
        (*log) << line << std::endl;
    };

    MetricsTable table;
    for (int L : config.slate_sizes) {
        for (int fn : config.reward_fn_ids) {
            EnvConfig ec = config.env;
            ec.num_slots = L;
            ec.reward_fn_id = fn;
            ec.seed = derive_seed(config.master_seed, "env", {u64(L), u64(fn)});
            try {
                auto env = std::make_shared<const Environment>(build_env(ec));
                auto [logging, target] = make_policies(env);
                EnvRewardFn reward(env);
                StandardNormalContexts contexts(ec.context_dim);
                Rng truth_rng = substream(config.master_seed, "truth", {u64(L), u64(fn)});
                const ValueEstimate truth =
                    true_value_mc(reward, *target, contexts, config.truth_mc_samples, truth_rng);
                say("[L=" + std::to_string(L) + " fn=" + std::to_string(fn) +
                    "] V(pi)=" + fmt_short(truth.value) +
                    " (se " + fmt_short(truth.std_error.value_or(0.0)) + ")");

                for (int n : config.data_sizes) {
                    const auto t0 = std::chrono::steady_clock::now();
                    std::vector<TrialOutput> trials(static_cast<size_t>(config.num_seeds));
                    std::atomic<int> done{0};
                    parallel_for(config.num_seeds, config.num_threads, [&](int i) {
                        try {
                            trials[static_cast<size_t>(i)] =
                                run_trial(config, *env, *logging, *target, L, fn, n, i);
                        } catch (const std::exception& e) {
                            throw std::runtime_error("at L=" + std::to_string(L) +
                                                     " fn=" + std::to_string(fn) +
                                                     " n=" + std::to_string(n) +
                                                     " seed=" + std::to_string(i) + ": " + e.what());
                        }
                        const int d = done.fetch_add(1) + 1;
                        if (log && (d % 5 == 0 || d == config.num_seeds)) {
                            const double secs = std::chrono::duration<double>(
                                                    std::chrono::steady_clock::now() - t0)
                                                    .count();
                            say("  n=" + std::to_string(n) + ": trial " + std::to_string(d) + "/" +
                                std::to_string(config.num_seeds) + " (" + fmt_short(secs) + " s)");
                        }
                    });

                    std::vector<MetricsRow> point_rows;
                    auto add_row = [&](const std::string& name) {
                        std::vector<double> per_seed(trials.size());
                        for (size_t i = 0; i < trials.size(); ++i) per_seed[i] = trials[i].at(name);
                        point_rows.push_back(make_metrics_row(name, L, ec.slot_size, n, fn, truth,
                                                              std::move(per_seed)));
                    };
                    for (const std::string& name : config.estimators) {
                        if (name != "lips") {
                            add_row(name);
                            continue;
                        }
                        for (double beta : config.betas) add_row(lips_row_name(beta));
                        add_row("lips_slope");
                        // Oracle choice: the beta candidate with the lowest
                        // realized MSE across seeds.
                        const MetricsRow* best = nullptr;
                        for (const MetricsRow& row : point_rows) {
                            if (row.estimator.rfind("lips[beta=", 0) != 0) continue;
                            if (!best || row.normalized_mse < best->normalized_mse) best = &row;
                        }
                        MetricsRow oracle = *best;
                        oracle.estimator = "lips_best";
                        point_rows.push_back(std::move(oracle));
                    }
                    for (MetricsRow& row : point_rows) table.rows.push_back(std::move(row));
                }
            } catch (const std::exception& e) {
                throw std::runtime_error("config point L=" + std::to_string(L) +
                                         " fn=" + std::to_string(fn) + ": " + e.what());
            }
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCsvHeader =
    "estimator,num_slots,slot_size,data_size,reward_fn_id,true_value,true_value_se,"
    "normalized_mse,squared_bias,variance";

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

// Estimator names in order of first appearance.
std::vector<std::string> estimator_order(const MetricsTable& metrics) {
    std::vector<std::string> names;
    for (const MetricsRow& row : metrics.rows) {
        if (std::find(names.begin(), names.end(), row.estimator) == names.end()) {
            names.push_back(row.estimator);
        }
    }
    return names;
}

const MetricsRow* find_row(const MetricsTable& metrics, const std::string& estimator, int L, int n,
                           int fn) {
    for (const MetricsRow& row : metrics.rows) {
        if (row.estimator == estimator && row.num_slots == L && row.data_size == n &&
            row.reward_fn_id == fn) {
            return &row;
        }
    }
    return nullptr;
}

// One file per (sweep axis, reward fn, fixed other axis): first column the
// axis value, then one normalized-MSE column per estimator.
std::vector<std::pair<std::string, std::string>> plot_files(const MetricsTable& metrics) {
    std::vector<std::pair<std::string, std::string>> files;
    const std::vector<std::string> names = estimator_order(metrics);
    std::vector<int> fns, slates, sizes;
    for (const MetricsRow& row : metrics.rows) {
        if (std::find(fns.begin(), fns.end(), row.reward_fn_id) == fns.end())
            fns.push_back(row.reward_fn_id);
        if (std::find(slates.begin(), slates.end(), row.num_slots) == slates.end())
            slates.push_back(row.num_slots);
        if (std::find(sizes.begin(), sizes.end(), row.data_size) == sizes.end())
            sizes.push_back(row.data_size);
    }
    auto series_block = [&](const std::string& axis, const std::vector<int>& xs,
                            const std::function<const MetricsRow*(const std::string&, int)>& at) {
        std::string text = axis;
        for (const std::string& name : names) text += "," + name;
        text += "\n";
        bool complete = true;
        for (int x : xs) {
            text += std::to_string(x);
            for (const std::string& name : names) {
                const MetricsRow* row = at(name, x);
                if (!row) {
                    complete = false;
                    break;
                }
                text += "," + fmt_full(row->normalized_mse);
            }
            if (!complete) break;
            text += "\n";
        }
        return complete ? text : std::string();
    };
    for (int fn : fns) {
        for (int L : slates) {
            const std::string text =
                series_block("data_size", sizes, [&](const std::string& name, int n) {
                    return find_row(metrics, name, L, n, fn);
                });
            if (!text.empty()) {
                files.emplace_back("plot_datasize_fn" + std::to_string(fn) + "_L" +
                                       std::to_string(L) + ".csv",
                                   text);
            }
        }
        if (slates.size() > 1) {
            for (int n : sizes) {
                const std::string text =
                    series_block("num_slots", slates, [&](const std::string& name, int L) {
                        return find_row(metrics, name, L, n, fn);
                    });
                if (!text.empty()) {
                    files.emplace_back("plot_slates_fn" + std::to_string(fn) + "_n" +
                                           std::to_string(n) + ".csv",
                                       text);
                }
            }
        }
    }
    return files;
}

}  // namespace

std::string metrics_csv(const MetricsTable& metrics) {
    if (metrics.rows.empty()) throw std::invalid_argument("metrics_csv: empty metrics");
    std::string out = std::string(kCsvHeader) + "\n";
    for (const MetricsRow& row : metrics.rows) {
        row.validate();
        out += row.estimator;
        out += "," + std::to_string(row.num_slots);
        out += "," + std::to_string(row.slot_size);
        out += "," + std::to_string(row.data_size);
        out += "," + std::to_string(row.reward_fn_id);
        out += "," + fmt_full(row.true_value);
        out += "," + fmt_full(row.true_value_se);
        out += "," + fmt_full(row.normalized_mse);
        out += "," + fmt_full(row.squared_bias);
        out += "," + fmt_full(row.variance);
        out += "\n";
    }
    return out;
}

MetricsTable parse_metrics_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != kCsvHeader) {
        throw std::invalid_argument("parse_metrics_csv: bad header");
    }
    MetricsTable table;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> f = split(line, ',');
        if (f.size() != 10) throw std::invalid_argument("parse_metrics_csv: bad row: " + line);
        MetricsRow row;
        row.estimator = f[0];
        row.num_slots = std::stoi(f[1]);
        row.slot_size = std::stoi(f[2]);
        row.data_size = std::stoi(f[3]);
        row.reward_fn_id = std::stoi(f[4]);
        row.true_value = std::stod(f[5]);
        row.true_value_se = std::stod(f[6]);
        row.normalized_mse = std::stod(f[7]);
        row.squared_bias = std::stod(f[8]);
        row.variance = std::stod(f[9]);
        row.validate();
        table.rows.push_back(std::move(row));
    }
    if (table.rows.empty()) throw std::invalid_argument("parse_metrics_csv: no rows");
    return table;
}

std::string metrics_json(const MetricsTable& metrics) {
    if (metrics.rows.empty()) throw std::invalid_argument("metrics_json: empty metrics");
    json rows = json::array();
    for (const MetricsRow& row : metrics.rows) {
        row.validate();
        rows.push_back(json{{"estimator", row.estimator},
                            {"num_slots", row.num_slots},
                            {"slot_size", row.slot_size},
                            {"data_size", row.data_size},
                            {"reward_fn_id", row.reward_fn_id},
                            {"true_value", row.true_value},
                            {"true_value_se", row.true_value_se},
                            {"normalized_mse", row.normalized_mse},
                            {"squared_bias", row.squared_bias},
                            {"variance", row.variance},
                            {"per_seed", row.per_seed}});
    }
    return json{{"rows", rows}}.dump(2);
}

std::vector<std::string> emit_report(const MetricsTable& metrics, const std::string& out_dir,
                                     bool write_csv, bool write_json, bool plot_data) {
    if (metrics.rows.empty()) throw std::invalid_argument("emit_report: empty metrics");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("emit_report: cannot create " + out_dir + ": " + ec.message());

    std::vector<std::string> written;
    auto write_file = [&](const std::string& name, const std::string& text) {
        const fs::path path = fs::path(out_dir) / name;
        std::ofstream ofs(path, std::ios::binary);
        if (!ofs) throw std::runtime_error("emit_report: cannot write " + path.string());
        ofs << text;
        if (!ofs) throw std::runtime_error("emit_report: write failed for " + path.string());
        written.push_back(path.string());
    };
    if (write_csv) write_file("metrics.csv", metrics_csv(metrics));
    if (write_json) write_file("metrics.json", metrics_json(metrics));
    if (plot_data) {
        for (const auto& [name, text] : plot_files(metrics)) write_file(name, text);
    }
    return written;
}

// ---------------------------------------------------------------------------
// Exact-enumeration theorem checks
// ---------------------------------------------------------------------------

namespace {

// Per-slate exact quantities at a single context: logging and target
// probabilities, slate importance weights, expected rewards q, second
// moments E[r^2|s] = q^2 + sigma^2, and the target value V.
struct ExactTables {
    std::vector<Slate> slates;
    std::vector<double> p0, p1, w, q, r2;
    double V = 0.0;
};

ExactTables make_tables(const Environment& env, const FactoredPolicy& logging,
                        const FactoredPolicy& target, const Context& x) {
    ExactTables t;
    t.slates = enumerate_slates(env.space);
    const double sigma = env.config.reward_noise_sigma;
    const size_t S = t.slates.size();
    t.p0.resize(S);
    t.p1.resize(S);
    t.w.resize(S);
    t.q.resize(S);
    t.r2.resize(S);
    long double value = 0.0L;
    for (size_t i = 0; i < S; ++i) {
        t.p0[i] = slate_prob(logging, x, t.slates[i]);
        t.p1[i] = slate_prob(target, x, t.slates[i]);
        if (!(t.p0[i] > 0.0)) throw std::runtime_error("verify: logging support hole");
        t.w[i] = t.p1[i] / t.p0[i];
        t.q[i] = env.expected_reward(x, t.slates[i]);
        t.r2[i] = t.q[i] * t.q[i] + sigma * sigma;
        value += static_cast<long double>(t.p1[i]) * t.q[i];
    }
    t.V = static_cast<double>(value);
    return t;
}

// Single-record dataset with the same propensity conventions the log
// generator uses (running product over slots).
LoggedDataset one_record(const SlateSpace& space, const FactoredPolicy& logging, const Context& x,
                         const Slate& s, double r) {
    LoggedRecord rec;
    rec.x = x;
    rec.s = s;
    rec.r = r;
    const int L = space.num_slots();
    rec.pscore_slot.resize(static_cast<size_t>(L));
    double p = 1.0;
    for (int l = 0; l < L; ++l) {
        const std::vector<double> probs = logging.slot_probs(x, l);
        const int a = s.sub_actions[static_cast<size_t>(l)];
        rec.pscore_slot[static_cast<size_t>(l)] = probs[static_cast<size_t>(a)];
        p *= probs[static_cast<size_t>(a)];
    }
    rec.pscore = p;
    LoggedDataset data;
    data.space = space;
    data.records.push_back(std::move(rec));
    return data;
}

// E[estimator] over one logged record: since every estimator is an average
// of per-record terms linear in r, feeding each possible slate at its mean
// reward through the production code and weighting by the logging
// probability gives the exact expectation.
double expected_estimate(const std::string& name, EstimatorInputs proto, const ExactTables& t,
                         const FactoredPolicy& logging, const Context& x,
                         std::span<const double> q_used, uint64_t seed) {
    long double acc = 0.0L;
    for (size_t i = 0; i < t.slates.size(); ++i) {
        const LoggedDataset data = one_record(proto.target->space(), logging, x, t.slates[i],
                                              q_used[i]);
        proto.dataset = &data;
        Rng rng = substream(seed, "expected-" + name, {static_cast<uint64_t>(i)});
        acc += static_cast<long double>(t.p0[i]) * run_estimator(name, proto, &rng).value;
    }
    return static_cast<double>(acc);
}

// Fixed reward models used by the unbiasedness checks.
struct TableRewardFn final : RewardFn {
    SlateSpace space;
    std::vector<double> values;  // by slate rank
    double expected_reward(const Context&, const Slate& s) const override {
        return values[slate_rank(space, s)];
    }
};

struct SlotSumRewardFn final : RewardFn {
    std::vector<std::vector<double>> phi;  // [L][A]
    double expected_reward(const Context&, const Slate& s) const override {
        double total = 0.0;
        for (size_t l = 0; l < phi.size(); ++l) total += phi[l][static_cast<size_t>(s.sub_actions[l])];
        return total;
    }
};

struct FirstSlotRewardFn final : RewardFn {
    std::vector<double> values;  // by first-slot action
    double expected_reward(const Context&, const Slate& s) const override {
        return values[static_cast<size_t>(s.sub_actions[0])];
    }
};

// Encoder-side exact quantities: rows p(z|x,s), marginals p(z|x;pi_0),
// posteriors, and the production latent weights.
struct EncoderTables {
    std::vector<std::vector<double>> pz;    // [slate][z]
    std::vector<double> p0z;                // [z]
    std::vector<std::vector<double>> post;  // [z][slate]
    std::vector<double> wtheta;             // [z], from latent_weight()
};

EncoderTables make_encoder_tables(const SlateAbstraction& abst, const ExactTables& t,
                                  const FactoredPolicy& target, const FactoredPolicy& logging,
                                  const Context& x) {
    EncoderTables e;
    const size_t S = t.slates.size();
    const int Z = abst.latent_size();
    e.pz.resize(S);
    for (size_t i = 0; i < S; ++i) e.pz[i] = abst.encode(x, t.slates[i]);
    e.p0z.assign(static_cast<size_t>(Z), 0.0);
    e.post.assign(static_cast<size_t>(Z), std::vector<double>(S, 0.0));
    for (int z = 0; z < Z; ++z) {
        long double mass = 0.0L;
        for (size_t i = 0; i < S; ++i) mass += static_cast<long double>(t.p0[i]) * e.pz[i][z];
        e.p0z[static_cast<size_t>(z)] = static_cast<double>(mass);
        if (mass > 0.0L) {
            for (size_t i = 0; i < S; ++i) {
                e.post[static_cast<size_t>(z)][i] =
                    static_cast<double>(t.p0[i] * e.pz[i][z] / static_cast<double>(mass));
            }
        }
    }
    e.wtheta.resize(static_cast<size_t>(Z));
    for (int z = 0; z < Z; ++z) {
        e.wtheta[static_cast<size_t>(z)] = latent_weight(abst, target, logging, x, z,
                                                         MarginalMode::exact, 1, 1e-300, nullptr);
    }
    return e;
}

double posterior_mean(std::span<const double> post, std::span<const double> f) {
    long double m = 0.0L;
    for (size_t i = 0; i < post.size(); ++i) m += static_cast<long double>(post[i]) * f[i];
    return static_cast<double>(m);
}

double posterior_variance(std::span<const double> post, std::span<const double> f) {
    const double mean = posterior_mean(post, f);
    long double v = 0.0L;
    for (size_t i = 0; i < post.size(); ++i) {
        const long double d = static_cast<long double>(f[i]) - mean;
        v += static_cast<long double>(post[i]) * d * d;
    }
    return static_cast<double>(v);
}

// Exact bias of the latent-weighting estimator: E[w_theta(z) r] - V.
double direct_bias(const ExactTables& t, const EncoderTables& e) {
    long double acc = 0.0L;
    for (size_t i = 0; i < t.slates.size(); ++i) {
        for (size_t z = 0; z < e.wtheta.size(); ++z) {
            acc += static_cast<long double>(t.p0[i]) * e.pz[i][z] * e.wtheta[z] * t.q[i];
        }
    }
    return static_cast<double>(acc - static_cast<long double>(t.V));
}

// Pairwise-sum bias formula over the latent posterior.
double pairwise_bias(const ExactTables& t, const EncoderTables& e) {
    long double acc = 0.0L;
    const size_t S = t.slates.size();
    for (size_t z = 0; z < e.wtheta.size(); ++z) {
        const auto& post = e.post[z];
        long double inner = 0.0L;
        for (size_t j = 0; j < S; ++j) {
            for (size_t k = j + 1; k < S; ++k) {
                inner += static_cast<long double>(post[j]) * post[k] * (t.q[j] - t.q[k]) *
                         (t.w[k] - t.w[j]);
            }
        }
        acc += static_cast<long double>(e.p0z[z]) * inner;
    }
    return static_cast<double>(acc);
}

// Single-sample variances of the slate-weighted and latent-weighted terms.
double var1_ips(const ExactTables& t) {
    long double m2 = 0.0L;
    for (size_t i = 0; i < t.slates.size(); ++i) {
        m2 += static_cast<long double>(t.p0[i]) * t.w[i] * t.w[i] * t.r2[i];
    }
    return static_cast<double>(m2 - static_cast<long double>(t.V) * t.V);
}

double var1_latent(const ExactTables& t, const EncoderTables& e, double mean_value) {
    long double m2 = 0.0L;
    for (size_t i = 0; i < t.slates.size(); ++i) {
        for (size_t z = 0; z < e.wtheta.size(); ++z) {
            m2 += static_cast<long double>(t.p0[i]) * e.pz[i][z] * e.wtheta[z] * e.wtheta[z] *
                  t.r2[i];
        }
    }
    return static_cast<double>(m2 - static_cast<long double>(mean_value) * mean_value);
}

TheoremCheck check(std::string name, double residual, double tolerance, std::string detail = {}) {
    TheoremCheck c;
    c.name = std::move(name);
    c.residual = residual;
    c.tolerance = tolerance;
    c.pass = residual <= tolerance;
    c.detail = std::move(detail);
    return c;
}

std::string idx2(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d", i);
    return buf;
}

}  // namespace

void TheoremInstance::validate() const {
    env.validate();
    if (env.num_slots < 2) throw std::invalid_argument("TheoremInstance: need at least 2 slots");
    uint64_t count = 1;
    for (int l = 0; l < env.num_slots; ++l) {
        count *= static_cast<uint64_t>(env.slot_size);
        if (count > 4096) {
            throw std::invalid_argument("TheoremInstance: slate space too large to enumerate");
        }
    }
    if (latent_size < 2) throw std::invalid_argument("TheoremInstance: latent_size must be >= 2");
    if (num_encoders < 1) throw std::invalid_argument("TheoremInstance: num_encoders must be >= 1");
    if (data_size < 1) throw std::invalid_argument("TheoremInstance: data_size must be >= 1");
    if (!(tol_exact > 0.0) || !(tol_mse > 0.0)) {
        throw std::invalid_argument("TheoremInstance: tolerances must be > 0");
    }
}

TheoremInstance TheoremInstance::tiny() {
    TheoremInstance inst;
    inst.env.num_slots = 2;
    inst.env.slot_size = 3;
    inst.env.context_dim = 5;
    inst.env.reward_fn_id = 1;
    inst.env.seed = 11;
    return inst;
}

bool TheoremReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const TheoremCheck& c) { return c.pass; });
}

TheoremReport verify_theorems(const TheoremInstance& inst) {
    inst.validate();
    auto env = std::make_shared<const Environment>(build_env(inst.env));
    auto [logging, target] = make_policies(env);
    Rng ctx_rng = substream(inst.seed, "context");
    const Context x = StandardNormalContexts(inst.env.context_dim).sample(ctx_rng);
    const ExactTables t = make_tables(*env, *logging, *target, x);
    const size_t S = t.slates.size();
    const int A0 = env->space.slot_sizes[0];

    EstimatorInputs proto;
    proto.target = target.get();
    proto.logging = logging.get();

    TheoremReport rep;
    const double tol = inst.tol_exact;
    auto vdetail = [&](double expect, double got) {
        return "V=" + fmt_short(expect) + " E=" + fmt_short(got);
    };

    // -- unbiasedness of each estimator under its stated conditions --------
    {
        const double e = expected_estimate("ips", proto, t, *logging, x, t.q, inst.seed);
        rep.checks.push_back(check("unbiased/ips", std::abs(e - t.V), tol, vdetail(t.V, e)));
    }
    {
        // Doubly robust with an arbitrary fixed model.
        TableRewardFn qhat;
        qhat.space = env->space;
        Rng rng = substream(inst.seed, "qhat-table");
        qhat.values.resize(S);
        for (double& v : qhat.values) v = rng.uniform(-0.5, 1.5);
        EstimatorInputs in = proto;
        in.reward_model = &qhat;
        const double e = expected_estimate("dr", in, t, *logging, x, t.q, inst.seed);
        rep.checks.push_back(check("unbiased/dr", std::abs(e - t.V), tol, vdetail(t.V, e)));
    }
    {
        // Slot-additive reward for the per-slot weighting estimators.
        SlotSumRewardFn lin;
        Rng rng = substream(inst.seed, "phi");
        lin.phi.resize(static_cast<size_t>(env->space.num_slots()));
        for (auto& row : lin.phi) {
            row.resize(static_cast<size_t>(env->space.slot_sizes[0]));
            for (double& v : row) v = rng.uniform(0.0, 1.0);
        }
        std::vector<double> qlin(S);
        long double vl = 0.0L;
        for (size_t i = 0; i < S; ++i) {
            qlin[i] = lin.expected_reward(x, t.slates[i]);
            vl += static_cast<long double>(t.p1[i]) * qlin[i];
        }
        const double V_lin = static_cast<double>(vl);
        const double e_pi = expected_estimate("pi", proto, t, *logging, x, qlin, inst.seed);
        rep.checks.push_back(check("unbiased/pi", std::abs(e_pi - V_lin), tol, vdetail(V_lin, e_pi)));

        SlotSumRewardFn qhat_lin;
        Rng rng2 = substream(inst.seed, "psi");
        qhat_lin.phi.resize(lin.phi.size());
        for (auto& row : qhat_lin.phi) {
            row.resize(static_cast<size_t>(env->space.slot_sizes[0]));
            for (double& v : row) v = rng2.uniform(0.0, 1.0);
        }
        EstimatorInputs in = proto;
        in.reward_model = &qhat_lin;
        const double e_pidr = expected_estimate("pidr", in, t, *logging, x, qlin, inst.seed);
        rep.checks.push_back(
            check("unbiased/pidr", std::abs(e_pidr - V_lin), tol, vdetail(V_lin, e_pidr)));
    }
    {
        const double e = expected_estimate("mips", proto, t, *logging, x, t.q, inst.seed);
        rep.checks.push_back(check("unbiased/mips", std::abs(e - t.V), tol, vdetail(t.V, e)));
    }
    {
        // The hybrid prefix estimator needs a prefix-measurable model for
        // the correction term to cancel exactly.
        FirstSlotRewardFn qhat;
        Rng rng = substream(inst.seed, "qhat-prefix");
        qhat.values.resize(static_cast<size_t>(A0));
        for (double& v : qhat.values) v = rng.uniform(0.0, 1.0);
        EstimatorInputs in = proto;
        in.reward_model = &qhat;
        const double e = expected_estimate("offcem", in, t, *logging, x, t.q, inst.seed);
        rep.checks.push_back(check("unbiased/offcem", std::abs(e - t.V), tol, vdetail(t.V, e)));
    }
    GroupingAbstraction sufficient(env->space, A0, [](const Slate& s) { return s.sub_actions[0]; });
    {
        EstimatorInputs in = proto;
        in.abstraction = &sufficient;
        const double e = expected_estimate("lips", in, t, *logging, x, t.q, inst.seed);
        rep.checks.push_back(check("unbiased/lips", std::abs(e - t.V), tol, vdetail(t.V, e)));
    }

    // -- bias formula, posterior weights, and the finite-sample MSE gain ---
    const double v1_ips = var1_ips(t);
    for (int enc = 0; enc < inst.num_encoders; ++enc) {
        Rng rng = substream(inst.seed, "encoder", {u64(enc)});
        TableAbstraction table = TableAbstraction::random(env->space, inst.latent_size, rng);
        const EncoderTables e = make_encoder_tables(table, t, *target, *logging, x);

        const double bias = direct_bias(t, e);
        const double formula = pairwise_bias(t, e);
        rep.checks.push_back(check("bias_formula/encoder" + idx2(enc), std::abs(bias - formula),
                                   tol, "bias=" + fmt_short(bias)));

        double wres = 0.0;
        long double norm = 0.0L;
        for (size_t z = 0; z < e.wtheta.size(); ++z) {
            wres = std::max(wres, std::abs(e.wtheta[z] - posterior_mean(e.post[z], t.w)));
            norm += static_cast<long double>(e.p0z[z]) * e.wtheta[z];
        }
        wres = std::max(wres, std::abs(static_cast<double>(norm) - 1.0));
        rep.checks.push_back(check("posterior_weight/encoder" + idx2(enc), wres, tol));

        // Finite-sample MSE gain at n = data_size: direct moments on the
        // left, the variance + covariance + bias expansion on the right.
        const double n = static_cast<double>(inst.data_size);
        const double v1_lat = var1_latent(t, e, t.V + bias);
        const double lhs = v1_ips - v1_lat - n * bias * bias;
        long double gain = 0.0L;
        std::vector<double> w2(S);
        for (size_t i = 0; i < S; ++i) w2[i] = t.w[i] * t.w[i];
        for (size_t z = 0; z < e.wtheta.size(); ++z) {
            const auto& post = e.post[z];
            const double var_w = posterior_variance(post, t.w);
            const double er2 = posterior_mean(post, t.r2);
            const double mw2 = posterior_mean(post, w2);
            long double cov = 0.0L;
            for (size_t i = 0; i < S; ++i) {
                cov += static_cast<long double>(post[i]) * (w2[i] - mw2) * (t.r2[i] - er2);
            }
            gain += static_cast<long double>(e.p0z[z]) *
                    (var_w * er2 + static_cast<double>(cov));
        }
        const double rhs = static_cast<double>(gain) + 2.0 * t.V * formula +
                           (1.0 - n) * formula * formula;
        rep.checks.push_back(check("mse_gain/encoder" + idx2(enc), std::abs(lhs - rhs),
                                   inst.tol_mse));
    }

    // -- bias formula under an intentionally insufficient grouping ---------
    {
        GroupingAbstraction insufficient(env->space, env->space.slot_sizes[1],
                                         [](const Slate& s) { return s.sub_actions[1]; });
        const EncoderTables e = make_encoder_tables(insufficient, t, *target, *logging, x);
        const double bias = direct_bias(t, e);
        const double formula = pairwise_bias(t, e);
        TheoremCheck c = check("bias_formula/insufficient_grouping", std::abs(bias - formula), tol,
                               "bias=" + fmt_short(bias));
        c.pass = c.pass && std::abs(bias) > 1e-6;  // the point: genuinely nonzero bias
        rep.checks.push_back(c);
    }

    // -- variance reduction for deterministic abstractions -----------------
    auto var_reduction = [&](const SlateAbstraction& abst) {
        const EncoderTables e = make_encoder_tables(abst, t, *target, *logging, x);
        long double v_lat = 0.0L;
        for (size_t i = 0; i < S; ++i) {
            for (size_t z = 0; z < e.wtheta.size(); ++z) {
                v_lat += static_cast<long double>(t.p0[i]) * e.pz[i][z] * e.wtheta[z] * t.q[i];
            }
        }
        const double gap = v1_ips - var1_latent(t, e, static_cast<double>(v_lat));
        long double rhs = 0.0L;
        for (size_t z = 0; z < e.wtheta.size(); ++z) {
            rhs += static_cast<long double>(e.p0z[z]) * posterior_mean(e.post[z], t.r2) *
                   posterior_variance(e.post[z], t.w);
        }
        return std::pair<double, double>(gap, static_cast<double>(rhs));
    };
    {
        const auto [gap, rhs] = var_reduction(sufficient);
        rep.checks.push_back(check("var_reduction/sufficient_grouping", std::abs(gap - rhs), tol,
                                   "gap=" + fmt_short(gap)));
    }
    {
        PrefixAbstraction identity = PrefixAbstraction::identity(env->space);
        const auto [gap, rhs] = var_reduction(identity);
        rep.checks.push_back(check("var_reduction/identity_abstraction",
                                   std::max(std::abs(gap), std::abs(rhs)), tol));
    }

    // -- regularization limits ---------------------------------------------
    {
        // A uniform encoder with a power-of-two latent size keeps every
        // scaling step exact, so the latent weights must be exactly one.
        Matrix uniform4(S, 4, 0.25);
        TableAbstraction enc4(env->space, uniform4);
        double res4 = 0.0;
        for (int z = 0; z < 4; ++z) {
            res4 = std::max(res4, std::abs(latent_weight(enc4, *target, *logging, x, z,
                                                         MarginalMode::exact, 1, 1e-300, nullptr) -
                                           1.0));
        }
        rep.checks.push_back(check("beta_limits/uniform_encoder", res4, 0.0));

        // Odd latent sizes round: weights agree with one to machine epsilon.
        const int Z = inst.latent_size;
        Matrix uniformZ(S, static_cast<size_t>(Z), 1.0 / Z);
        TableAbstraction encZ(env->space, uniformZ);
        double resZ = 0.0;
        for (int z = 0; z < Z; ++z) {
            resZ = std::max(resZ, std::abs(latent_weight(encZ, *target, *logging, x, z,
                                                         MarginalMode::exact, 1, 1e-300, nullptr) -
                                           1.0));
        }
        rep.checks.push_back(check("beta_limits/uniform_encoder_odd", resZ, 1e-14));
    }
    {
        // Identity abstraction reproduces slate weighting record by record.
        const LoggedDataset data =
            generate_logs(*env, *logging, 200, derive_seed(inst.seed, "identity-data"));
        PrefixAbstraction identity = PrefixAbstraction::identity(env->space);
        EstimatorInputs in = proto;
        in.dataset = &data;
        in.abstraction = &identity;
        Rng r_ips = substream(inst.seed, "identity-ips");
        const EstimatorResult ips = estimate_ips(in, &r_ips);
        Rng r_lips = substream(inst.seed, "identity-lips");
        const EstimatorResult lips = estimate_lips(in, &r_lips);
        double res = std::abs(ips.value - lips.value);
        for (size_t i = 0; i < data.size(); ++i) {
            res = std::max(res, std::abs(ips.per_record[i] - lips.per_record[i]));
        }
        rep.checks.push_back(check("beta_limits/identity_equals_ips", res, 0.0));
    }

    return rep;
}

std::string report_lines(const TheoremReport& report) {
    std::string out;
    for (const TheoremCheck& c : report.checks) {
        char buf[64];
        std::snprintf(buf, sizeof buf, " residual=%.3e tol=%.1e", c.residual, c.tolerance);
        out += (c.pass ? "PASS " : "FAIL ") + c.name + buf;
        if (!c.detail.empty()) out += "  (" + c.detail + ")";
        out += "\n";
    }
    return out;
}

std::string report_json(const TheoremReport& report) {
    json checks = json::array();
    for (const TheoremCheck& c : report.checks) {
        checks.push_back(json{{"name", c.name},
                              {"residual", c.residual},
                              {"tolerance", c.tolerance},
                              {"pass", c.pass},
                              {"detail", c.detail}});
    }
    return json{{"checks", checks}, {"all_pass", report.all_pass()}}.dump(2);
}

}  // namespace slateope
