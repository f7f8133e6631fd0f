// Acceptance gate: one PASS/FAIL line per criterion, exit 1 if any fail.
//
// Criteria 1-4 and the analytic half of 6 partition the exact-enumeration
// theorem suite; 5 is the finite-difference gradient audit; 6's training half
// fine-tunes at beta=1e6 and checks the latent weights collapse to 1; 7-9 run
// the benchmark point (L=8, 10 actions per slot, n=4000, reward fn 1,
// 20 seeds) once and read everything off the metrics table. The statistical
// bar in 7 is a one-sided paired sign test at the 5% level; with 20 seeds the
// rejection threshold is 15 wins.

#include <slateope/abstraction.hpp>
#include <slateope/gradcheck.hpp>
#include <slateope/harness.hpp>
#include <slateope/synthenv.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

namespace {

using namespace slateope;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Gate {
    int failures = 0;

    void line(int idx, const std::string& name, bool pass, const std::string& detail) {
        if (!pass) ++failures;
        std::printf("%s %d %s (%s)\n", pass ? "PASS" : "FAIL", idx, name.c_str(),
                    detail.c_str());
        std::fflush(stdout);
    }
};

// Residual summary over all theorem checks whose name starts with `prefix`.
struct CheckSlice {
    int total = 0;
    int passed = 0;
    double worst = 0.0;
};

CheckSlice slice(const TheoremReport& rep, const std::string& prefix) {
    CheckSlice out;
    for (const auto& c : rep.checks) {
        if (c.name.rfind(prefix, 0) != 0) continue;
        ++out.total;
        if (c.pass) ++out.passed;
        out.worst = std::max(out.worst, c.residual);
    }
    return out;
}

std::string slice_detail(const CheckSlice& s) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%d/%d checks, worst residual %.3g", s.passed, s.total,
                  s.worst);
    return buf;
}

// Smallest k with P(X >= k) <= alpha for X ~ Binomial(n, 1/2): the win count
// needed to reject "no improvement" in a one-sided paired sign test.
int sign_test_threshold(int n, double alpha) {
    std::vector<double> pmf(static_cast<size_t>(n) + 1);
    pmf[0] = std::pow(0.5, n);
    for (int i = 1; i <= n; ++i) pmf[i] = pmf[i - 1] * double(n - i + 1) / double(i);
    double tail = 0.0;
    int k = n + 1;
    for (int i = n; i >= 0; --i) {
        tail += pmf[i];
        if (tail > alpha) break;
        k = i;
    }
    return k;
}

const MetricsRow& find_row(const MetricsTable& table, const std::string& estimator) {
    for (const auto& row : table.rows) {
        if (row.estimator == estimator) return row;
    }
    throw std::runtime_error("acceptance: missing metrics row " + estimator);
}

int wins(const MetricsRow& challenger, const MetricsRow& incumbent) {
    int count = 0;
    const double v = challenger.true_value;
    for (size_t i = 0; i < challenger.per_seed.size(); ++i) {
        const double a = challenger.per_seed[i] - v;
        const double b = incumbent.per_seed[i] - v;
        if (a * a < b * b) ++count;
    }
    return count;
}

}  // namespace

int main() {
    Gate gate;

    // Criteria 1-4 + analytic 6: one pass over the exact-enumeration suite.
    const auto t_verify = Clock::now();
    const TheoremReport rep = verify_theorems(TheoremInstance::tiny());
    const double verify_secs = seconds_since(t_verify);

    {
        const CheckSlice s = slice(rep, "unbiased/");
        const bool pass = s.total == 7 && s.passed == s.total && verify_secs < 5.0;
        char extra[64];
        std::snprintf(extra, sizeof(extra), ", suite %.2f s", verify_secs);
        gate.line(1, "exact-unbiasedness", pass, slice_detail(s) + extra);
    }
    {
        const CheckSlice s = slice(rep, "bias_formula/");
        gate.line(2, "pairwise-bias-formula", s.total == 21 && s.passed == s.total,
                  slice_detail(s));
    }
    {
        const CheckSlice sv = slice(rep, "var_reduction/");
        const CheckSlice sm = slice(rep, "mse_gain/");
        const bool pass =
            sv.total == 2 && sv.passed == sv.total && sm.total == 20 && sm.passed == sm.total;
        gate.line(3, "variance-reduction-and-mse-gain", pass,
                  "var " + slice_detail(sv) + "; mse " + slice_detail(sm));
    }
    {
        const CheckSlice s = slice(rep, "posterior_weight/");
        gate.line(4, "latent-weight-posterior-identity", s.total == 20 && s.passed == s.total,
                  slice_detail(s));
    }

    // Criterion 5: finite-difference audit of every gradient path.
    {
        const auto t0 = Clock::now();
        const auto checks = run_gradcheck(20, 11);
        double worst = 0.0;
        for (const auto& c : checks) worst = std::max(worst, c.max_rel_err);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%zu components, worst rel err %.3g, %.1f s",
                      checks.size(), worst, seconds_since(t0));
        gate.line(5, "gradient-finite-difference", gradcheck_all_pass(checks), buf);
    }

    // Criterion 6: regularization limits. The uniform/identity halves are exact
    // checks from the suite; the training half fine-tunes at beta=1e6 and
    // requires every latent weight within 0.1 of 1.
    {
        const CheckSlice s = slice(rep, "beta_limits/");
        const bool analytic = s.total == 3 && s.passed == s.total;

        TheoremInstance inst = TheoremInstance::tiny();
        auto env = std::make_shared<const Environment>(build_env(inst.env));
        auto [logging, target] = make_policies(env);
        const LoggedDataset data = generate_logs(*env, *logging, 200, derive_seed(13, "c6-data"));
        TrainConfig cfg;
        cfg.latent_size = 4;
        cfg.hidden = 16;
        cfg.batch_size = 32;
        cfg.phase1_steps = 0;
        cfg.finetune_steps = 1500;
        cfg.lr = 1e-2;
        auto model = std::make_shared<const AbstractionModel>(
            fine_tune(train_phase1(data, cfg, 7), data, cfg, 1e6, 8));
        const MlpAbstraction abst(model);
        Rng ctx_rng = substream(13, "c6-ctx");
        StandardNormalContexts contexts(inst.env.context_dim);
        double worst = 0.0;
        for (int i = 0; i < 5; ++i) {
            const Context x = contexts.sample(ctx_rng);
            for (int z = 0; z < cfg.latent_size; ++z) {
                const double w = latent_weight(abst, *target, *logging, x, z,
                                               MarginalMode::exact, 0, 1e-8, nullptr);
                worst = std::max(worst, std::abs(w - 1.0));
            }
        }
        char buf[96];
        std::snprintf(buf, sizeof(buf), "analytic %d/%d; beta=1e6 max|w-1|=%.4f", s.passed,
                      s.total, worst);
        gate.line(6, "beta-limits", analytic && worst < 0.1, buf);
    }

    // Criteria 7-9: one 20-seed run of the benchmark point.
    ExperimentConfig cfg = ExperimentConfig::paper_profile();
    cfg.estimators = {"ips", "pi", "lips"};
    cfg.num_seeds = 20;
    cfg.marginal_mc_samples = 128;
    cfg.abstraction_train.latent_size = 100;
    cfg.abstraction_train.hidden = 100;
    cfg.abstraction_train.phase1_steps = 2000;
    cfg.abstraction_train.finetune_steps = 800;
    cfg.abstraction_train.batch_size = 128;
    cfg.abstraction_train.lr = 1e-3;

    const auto t_run = Clock::now();
    const MetricsTable metrics = run_experiment(cfg);
    const double run_secs = seconds_since(t_run);

    const MetricsRow& ips = find_row(metrics, "ips");
    const MetricsRow& pi = find_row(metrics, "pi");
    const MetricsRow& best = find_row(metrics, "lips_best");
    const MetricsRow& slope = find_row(metrics, "lips_slope");

    {
        const int need = sign_test_threshold(cfg.num_seeds, 0.05);
        const int w_ips = wins(best, ips);
        const int w_pi = wins(best, pi);
        const bool pass = best.normalized_mse < ips.normalized_mse &&
                          best.normalized_mse < pi.normalized_mse && w_ips >= need &&
                          w_pi >= need && run_secs < 1800.0;
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "nmse lips=%.3g ips=%.3g pi=%.3g; wins %d/%d vs ips, %d/%d vs pi "
                      "(need %d); %.0f s",
                      best.normalized_mse, ips.normalized_mse, pi.normalized_mse, w_ips,
                      cfg.num_seeds, w_pi, cfg.num_seeds, need, run_secs);
        gate.line(7, "benchmark-ordering", pass, buf);
    }
    {
        const double ratio = slope.normalized_mse / best.normalized_mse;
        char buf[96];
        std::snprintf(buf, sizeof(buf), "slope/best nmse ratio %.3f", ratio);
        gate.line(8, "slope-near-oracle", ratio <= 3.0, buf);
    }
    {
        double worst = 0.0;
        for (const auto& row : metrics.rows) {
            row.validate();
            const double rhs =
                (row.squared_bias + row.variance) / (row.true_value * row.true_value);
            worst = std::max(worst, std::abs(row.normalized_mse - rhs) /
                                        std::max(1.0, std::abs(row.normalized_mse)));
        }
        const bool table_arithmetic = 0.5 * 0.5 + 0.2 == 0.45;
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%zu rows, worst residual %.3g; 0.25+0.2==0.45 %s",
                      metrics.rows.size(), worst, table_arithmetic ? "true" : "false");
        gate.line(9, "mse-decomposition", worst <= 1e-12 && table_arithmetic, buf);
    }

    if (gate.failures > 0) {
        std::printf("%d criteria failed\n", gate.failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
