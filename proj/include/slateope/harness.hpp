#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "slateope/abstraction.hpp"
#include "slateope/core.hpp"
#include "slateope/estimators.hpp"
#include "slateope/neural.hpp"
#include "slateope/synthenv.hpp"

namespace slateope {

// Tolerance for the per-row MSE decomposition identity
// normalized MSE == (squared bias + variance) / V(pi)^2.
constexpr double kMseIdentityTol = 1e-12;

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

// Full sweep description. `env` carries the per-slot action count, context
// dimension, reward noise, and policy temperatures; its `num_slots`,
// `reward_fn_id`, and `seed` fields are overridden per sweep point (the
// environment seed derives from `master_seed` and the point, so the same
// point always sees the same environment regardless of sweep shape).
struct ExperimentConfig {
    EnvConfig env;
    std::vector<int> slate_sizes = {4};
    std::vector<int> data_sizes = {2000};
    std::vector<int> reward_fn_ids = {1};
    // Names accepted by run_estimator. Listing "lips" expands into one row
    // per beta candidate plus "lips_slope" (data-driven beta) and
    // "lips_best" (oracle beta, lowest realized MSE).
    std::vector<std::string> estimators;
    int num_seeds = 50;
    std::vector<double> betas = {0.01, 0.1, 1.0, 10.0};
    uint64_t master_seed = 1;

    // Estimator knobs.
    int prefix_len = -1;              // -1: floor(L/2)
    int dm_mc_samples = 1000;         // M for model-value terms off the exact path
    int marginal_mc_samples = 256;    // M for latent marginals off the exact path
    double marginal_floor = 1e-8;
    uint64_t enumeration_cap = kDefaultEnumerationCap;

    // Model training.
    RewardTrainConfig reward_train;
    TrainConfig abstraction_train;

    // Ground truth: exact when the slate space is enumerable at a handful of
    // fixed contexts is impossible here (contexts are continuous), so V(pi)
    // uses Monte Carlo with this many fresh draws; the standard error is
    // carried into every row.
    int truth_mc_samples = 1'000'000;

    int num_threads = 0;              // 0: hardware_concurrency
    std::string out_dir = "out";

    void validate() const;

    // L=4, |A_l|=4, n=2000, 20 seeds: quick iteration scale.
    static ExperimentConfig desk_profile();
    // L=8, |A_l|=10, n=4000, 50 seeds: headline scale.
    static ExperimentConfig paper_profile();

    static ExperimentConfig from_json_text(const std::string& text);
    std::string to_json_text() const;
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Aggregated accuracy of one estimator at one sweep point. `squared_bias`
// and `variance` are unnormalized; `normalized_mse` divides by V(pi)^2.
struct MetricsRow {
    std::string estimator;
    int num_slots = 0;
    int slot_size = 0;
    int data_size = 0;
    int reward_fn_id = 0;
    double true_value = 0.0;
    double true_value_se = 0.0;
    double normalized_mse = 0.0;
    double squared_bias = 0.0;
    double variance = 0.0;
    std::vector<double> per_seed;     // estimates in seed order (JSON only)

    // Checks the decomposition identity against kMseIdentityTol.
    void validate() const;
};

struct MetricsTable {
    std::vector<MetricsRow> rows;
};

// Aggregates per-seed estimates against the truth; computes MSE, bias, and
// variance in extended precision so the decomposition identity survives.
MetricsRow make_metrics_row(std::string estimator, int num_slots, int slot_size,
                            int data_size, int reward_fn_id, const ValueEstimate& truth,
                            std::vector<double> per_seed);

// Runs the full sweep: per point builds the environment and policies, draws
// the ground truth, then per seed generates logs, trains models as needed,
// and evaluates every listed estimator. Deterministic for a fixed config:
// every stochastic consumer draws from a substream keyed by
// (master_seed, purpose, point indices), so estimators never share streams
// and removing one leaves the others' numbers untouched. Trials run on a
// worker pool (num_threads); results are identical at any thread count.
MetricsTable run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

// Scalar columns, one row per MetricsRow, doubles at full round-trip
// precision.
std::string metrics_csv(const MetricsTable& metrics);
// Adds the per-seed estimate arrays.
std::string metrics_json(const MetricsTable& metrics);
// Inverse of metrics_csv (per-seed arrays are not in the CSV and come back
// empty).
MetricsTable parse_metrics_csv(const std::string& text);

// Writes metrics.csv and/or metrics.json under out_dir, plus optional
// plot-data files (one per swept axis and reward function: first column the
// axis value, then one normalized-MSE column per estimator). Returns the
// paths written. Empty metrics or an unwritable path is an error.
std::vector<std::string> emit_report(const MetricsTable& metrics, const std::string& out_dir,
                                     bool write_csv, bool write_json, bool plot_data);

// ---------------------------------------------------------------------------
// Exact-enumeration theorem checks
// ---------------------------------------------------------------------------

// A fully enumerable single-context instance. The default is small enough
// that every expectation, bias, and variance below is a finite sum.
struct TheoremInstance {
    EnvConfig env;              // tiny by default: L=2, three actions per slot
    uint64_t seed = 7;          // drives the context draw and random encoders
    int latent_size = 3;
    int num_encoders = 20;      // random stochastic encoders per formula check
    int data_size = 4000;       // the n in the finite-sample MSE identity
    double tol_exact = 1e-10;
    double tol_mse = 1e-8;

    void validate() const;
    static TheoremInstance tiny();
};

struct TheoremCheck {
    std::string name;
    double residual = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string detail;         // extra context (e.g. the bias value itself)
};

struct TheoremReport {
    std::vector<TheoremCheck> checks;
    bool all_pass() const;
};

// Runs every exact identity the estimators and the latent weighting promise:
// unbiasedness of each estimator under its stated conditions, the pairwise
// bias formula for stochastic encoders, the variance-reduction identity for
// a sufficient deterministic grouping, the finite-sample MSE-gain identity,
// the posterior-mean characterization of latent weights, and the
// regularization limits (uniform encoder, identity abstraction).
TheoremReport verify_theorems(const TheoremInstance& inst);

// One "PASS/FAIL name residual tolerance [detail]" line per check.
std::string report_lines(const TheoremReport& report);
std::string report_json(const TheoremReport& report);

}  // namespace slateope
