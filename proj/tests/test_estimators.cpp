#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "slateope/core.hpp"
#include "slateope/estimators.hpp"
#include "slateope/linalg.hpp"
#include "slateope/synthenv.hpp"

using namespace slateope;

namespace {

// Reward looked up by slate rank; context-independent.
struct TableReward : RewardFn {
    SlateSpace space;
    std::vector<double> q;

    TableReward(SlateSpace sp, std::vector<double> values)
        : space(std::move(sp)), q(std::move(values)) {}
    double expected_reward(const Context&, const Slate& s) const override {
        return q.at(slate_rank(space, s));
    }
};

// Sum of per-slot contributions phi[l][a_l].
struct SlotSumReward : RewardFn {
    std::vector<std::vector<double>> phi;

    explicit SlotSumReward(std::vector<std::vector<double>> p) : phi(std::move(p)) {}
    double expected_reward(const Context&, const Slate& s) const override {
        double total = 0.0;
        for (size_t l = 0; l < phi.size(); ++l) total += phi[l][s.sub_actions[l]];
        return total;
    }
};

struct ZeroReward : RewardFn {
    double expected_reward(const Context&, const Slate&) const override { return 0.0; }
};

// Logs sampled from a table policy, with propensities recorded as the running
// slot-probability product (mirrors the synthetic generator's convention).
LoggedDataset table_logs(const SlateSpace& space, const FactoredPolicy& logging, int n,
                         uint64_t seed, const RewardFn* reward = nullptr) {
    LoggedDataset data;
    data.space = space;
    Rng rng(seed);
    const int L = space.num_slots();
    for (int i = 0; i < n; ++i) {
        LoggedRecord rec;
        rec.x = Context({rng.normal()});
        rec.s = Slate(std::vector<int>(L, 0));
        rec.pscore_slot.resize(L);
        rec.pscore = 1.0;
        for (int l = 0; l < L; ++l) {
            const auto probs = logging.slot_probs(rec.x, l);
            const int a = rng.categorical(probs);
            rec.s.sub_actions[l] = a;
            rec.pscore_slot[l] = probs[a];
            rec.pscore *= probs[a];
        }
        rec.r = reward != nullptr ? reward->expected_reward(rec.x, rec.s)
                                  : rng.uniform(0.0, 1.0);
        data.records.push_back(std::move(rec));
    }
    return data;
}

// Exact E_D[estimator] for one-record datasets: enumerate the logged slate
// under the logging policy with the reward at its conditional mean. Valid for
// estimators that are affine in each record's reward.
double expected_estimate(const std::string& name, const SlateSpace& space,
                         const FactoredPolicy& logging, const RewardFn& q_true,
                         const std::function<void(EstimatorInputs&)>& setup) {
    const Context x({0.25});
    const int L = space.num_slots();
    double total = 0.0;
    for_each_slate(space, [&](const Slate& s) {
        LoggedDataset data;
        data.space = space;
        LoggedRecord rec;
        rec.x = x;
        rec.s = s;
        rec.pscore_slot.resize(L);
        rec.pscore = 1.0;
        for (int l = 0; l < L; ++l) {
            rec.pscore_slot[l] = logging.slot_probs(x, l)[s.sub_actions[l]];
            rec.pscore *= rec.pscore_slot[l];
        }
        rec.r = q_true.expected_reward(x, s);
        data.records.push_back(std::move(rec));

        EstimatorInputs in;
        in.dataset = &data;
        setup(in);
        Rng rng(1);
        total += slate_prob(logging, x, s) * run_estimator(name, in, &rng).value;
    });
    return total;
}

double exact_value(const RewardFn& q_true, const FactoredPolicy& target) {
    const WeightedContext ctx{Context({0.25}), 1.0};
    return true_value_exact(q_true, target, std::span<const WeightedContext>(&ctx, 1))
        .value;
}

}  // namespace

TEST_CASE("the naive average is the reward mean") {
    SlateSpace space({2});
    LoggedDataset data;
    data.space = space;
    for (double r : {0.0, 1.0}) {
        LoggedRecord rec;
        rec.x = Context({0.0});
        rec.s = Slate({0});
        rec.pscore = 0.5;
        rec.pscore_slot = {0.5};
        rec.r = r;
        data.records.push_back(rec);
    }
    EstimatorInputs in;
    in.dataset = &data;
    const auto res = estimate_nae(in);
    CHECK(res.value == 0.5);
    CHECK(res.method == "nae");
    CHECK(res.std_error == doctest::Approx(0.5).epsilon(1e-12));

    for (auto& rec : data.records) rec.r = 0.7;
    CHECK(estimate_nae(in).value == 0.7);

    LoggedDataset empty;
    empty.space = space;
    EstimatorInputs bad;
    bad.dataset = &empty;
    CHECK_THROWS_AS(estimate_nae(bad), std::invalid_argument);
}

TEST_CASE("a single record with weight two doubles its reward") {
    SlateSpace space({2});
    LoggedDataset data;
    data.space = space;
    LoggedRecord rec;
    rec.x = Context({0.0});
    rec.s = Slate({1});
    rec.pscore = 0.5;
    rec.pscore_slot = {0.5};
    rec.r = 0.5;
    data.records.push_back(rec);

    const auto target = TablePolicy::deterministic(space, Slate({1}));
    EstimatorInputs in;
    in.dataset = &data;
    in.target = &target;
    CHECK(estimate_ips(in).value == 1.0);
}

TEST_CASE("every pure weighting estimator collapses to the naive average when target equals logging") {
    SlateSpace space({3, 2});
    TablePolicy policy(space, {{0.5, 0.3, 0.2}, {0.6, 0.4}});
    const auto data = table_logs(space, policy, 40, 7);

    Rng trng(3);
    const auto abst = TableAbstraction::random(space, 4, trng);
    ZeroReward zero;
    EstimatorInputs in;
    in.dataset = &data;
    in.target = &policy;
    in.logging = &policy;
    in.abstraction = &abst;
    in.reward_model = &zero;

    const double nae = estimate_nae(in).value;
    Rng rng(11);
    CHECK(estimate_ips(in).value == nae);
    CHECK(estimate_pi(in).value == nae);
    CHECK(estimate_mips(in).value == nae);
    CHECK(estimate_lips(in, &rng).value == nae);
    // Hybrids reduce to their weighting form once the model term vanishes.
    CHECK(estimate_dr(in, &rng).value == nae);
    CHECK(estimate_pidr(in, &rng).value == nae);
    CHECK(estimate_offcem(in, &rng).value == nae);
    CHECK(estimate_dm(in, &rng).value == 0.0);
}

TEST_CASE("single-slot spaces erase the estimator distinctions") {
    SlateSpace space({4});
    TablePolicy logging(space, {{0.4, 0.3, 0.2, 0.1}});
    TablePolicy target(space, {{0.1, 0.2, 0.3, 0.4}});
    const auto data = table_logs(space, logging, 30, 9);
    ZeroReward zero;
    EstimatorInputs in;
    in.dataset = &data;
    in.target = &target;
    in.reward_model = &zero;

    const auto ips = estimate_ips(in);
    CHECK(estimate_pi(in).value == ips.value);
    CHECK(estimate_pi(in).per_record == ips.per_record);
    Rng r1(2), r2(2);
    CHECK(estimate_pidr(in, &r1).value == estimate_dr(in, &r2).value);
}

TEST_CASE("a full-length prefix reproduces the slate weight exactly") {
    SlateSpace space({2, 3, 2});
    TablePolicy logging(space, {{0.5, 0.5}, {0.2, 0.5, 0.3}, {0.7, 0.3}});
    TablePolicy target(space, {{0.3, 0.7}, {0.4, 0.4, 0.2}, {0.5, 0.5}});
    const auto data = table_logs(space, logging, 25, 13);
    ZeroReward zero;
    EstimatorInputs in;
    in.dataset = &data;
    in.target = &target;
    in.reward_model = &zero;
    in.prefix_len = 3;

    const auto ips = estimate_ips(in);
    CHECK(estimate_mips(in).per_record == ips.per_record);
    Rng r1(2), r2(2);
    CHECK(estimate_offcem(in, &r1).per_record == estimate_dr(in, &r2).per_record);
}

TEST_CASE("zero logged propensity under positive target probability is a support violation") {
    SlateSpace space({2});
    LoggedDataset data;
    data.space = space;
    LoggedRecord rec;
    rec.x = Context({0.0});
    rec.s = Slate({0});
    rec.pscore = 0.0;
    rec.pscore_slot = {0.0};
    rec.r = 1.0;
    data.records.push_back(rec);

    const auto covers = TablePolicy::uniform(space);
    EstimatorInputs in;
    in.dataset = &data;
    in.target = &covers;
    CHECK_THROWS_AS(estimate_ips(in), SupportViolationError);
    CHECK_THROWS_AS(estimate_pi(in), SupportViolationError);
    CHECK_THROWS_AS(estimate_mips(in), SupportViolationError);

    // If the target also avoids the slate, the weight is zero and no error.
    const auto avoids = TablePolicy::deterministic(space, Slate({1}));
    in.target = &avoids;
    CHECK(estimate_ips(in).value == 0.0);
    CHECK(estimate_mips(in).value == 0.0);
}

TEST_CASE("model-only estimation averages the model over the target policy") {
    SlateSpace space({2, 2});
    TablePolicy logging(space, {{0.5, 0.5}, {0.5, 0.5}});
    TablePolicy target(space, {{0.3, 0.7}, {0.8, 0.2}});
    const auto data = table_logs(space, logging, 6, 17);

    TableReward constant(space, {0.4, 0.4, 0.4, 0.4});
    EstimatorInputs in;
    in.dataset = &data;
    in.target = &target;
    in.reward_model = &constant;
    Rng rng(5);
    auto res = estimate_dm(in, &rng);
    CHECK(res.value == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(res.dm_exact);

    // Hand value for a non-constant model.
    TableReward varied(space, {0.0, 1.0, 0.2, 0.6});
    in.reward_model = &varied;
    const double by_hand = 0.3 * 0.8 * 0.0 + 0.3 * 0.2 * 1.0 + 0.7 * 0.8 * 0.2 +
                           0.7 * 0.2 * 0.6;
    res = estimate_dm(in, &rng);
    CHECK(res.value == doctest::Approx(by_hand).epsilon(1e-12));

    // Forcing the sampling path keeps the estimate within Monte-Carlo error.
    EstimatorInputs mc = in;
    mc.enumeration_cap = 1;
    mc.mc_samples = 400;
    double variance = 0.0;  // per-draw variance of the model value under target
    for_each_slate(space, [&](const Slate& s) {
        const double p = slate_prob(target, Context({0.0}), s);
        const double q = varied.expected_reward(Context({0.0}), s);
        variance += p * (q - by_hand) * (q - by_hand);
    });
    Rng mcrng(6);
    const auto sampled = estimate_dm(mc, &mcrng);
    CHECK_FALSE(sampled.dm_exact);
    const double se = std::sqrt(variance / (400.0 * data.size()));
    CHECK(std::abs(sampled.value - by_hand) <= 4.0 * se);
}

TEST_CASE("hybrids with a zero model match their weighting form bit for bit") {
    SlateSpace space({2, 3});
    TablePolicy logging(space, {{0.6, 0.4}, {0.3, 0.3, 0.4}});
    TablePolicy target(space, {{0.2, 0.8}, {0.5, 0.25, 0.25}});
    const auto data = table_logs(space, logging, 35, 21);
    ZeroReward zero;
    EstimatorInputs in;
    in.dataset = &data;
    in.target = &target;
    in.reward_model = &zero;

    Rng r1(4), r2(4), r3(4);
    CHECK(estimate_dr(in, &r1).per_record == estimate_ips(in).per_record);
    CHECK(estimate_pidr(in, &r2).per_record == estimate_pi(in).per_record);
    CHECK(estimate_offcem(in, &r3).per_record == estimate_mips(in).per_record);
}

TEST_CASE("a perfect model with noiseless rewards reduces the doubly robust form to the model term") {
    SlateSpace space({2, 2});
    TablePolicy logging(space, {{0.5, 0.5}, {0.4, 0.6}});
    TablePolicy target(space, {{0.3, 0.7}, {0.8, 0.2}});
    TableReward q_true(space, {0.1, 0.9, 0.4, 0.7});
    const auto data = table_logs(space, logging, 20, 23, &q_true);

    EstimatorInputs in;
    in.dataset = &data;
    in.target = &target;
    in.reward_model = &q_true;
    Rng r1(4), r2(4);
    CHECK(estimate_dr(in, &r1).per_record == estimate_dm(in, &r2).per_record);
}

TEST_CASE("shared model-term caches reproduce the direct computation") {
    SlateSpace space({2, 2});
    TablePolicy logging(space, {{0.5, 0.5}, {0.4, 0.6}});
    TablePolicy target(space, {{0.3, 0.7}, {0.8, 0.2}});
    TableReward qhat(space, {0.2, 0.6, 0.1, 0.8});
    const auto data = table_logs(space, logging, 12, 29);

    EstimatorInputs in;
    in.dataset = &data;
    in.target = &target;
    in.reward_model = &qhat;
    const std::vector<double> cache = dm_terms(data, target, qhat, 1000, nullptr);

    EstimatorInputs cached = in;
    cached.dm_cache = &cache;
    Rng r1(4), r2(4);
    CHECK(estimate_dr(cached, &r1).per_record == estimate_dr(in, &r2).per_record);

    std::vector<double> wrong(5, 0.0);
    cached.dm_cache = &wrong;
    CHECK_THROWS_AS(estimate_dr(cached, &r1), std::invalid_argument);
}

TEST_CASE("weight clipping caps the heavy records and counts them") {
    SlateSpace space({2});
    LoggedDataset data;
    data.space = space;
    for (int i = 0; i < 3; ++i) {
        LoggedRecord rec;
        rec.x = Context({0.0});
        rec.s = Slate({1});
        rec.pscore = 0.25;
        rec.pscore_slot = {0.25};
        rec.r = 1.0;
        data.records.push_back(rec);
    }
    const auto target = TablePolicy::deterministic(space, Slate({1}));  // weight 4
    EstimatorInputs in;
    in.dataset = &data;
    in.target = &target;
    CHECK(estimate_ips(in).value == 4.0);
    CHECK(estimate_ips(in).clipped == 0);

    in.weight_clip = 1.5;
    const auto clipped = estimate_ips(in);
    CHECK(clipped.value == 1.5);
    CHECK(clipped.clipped == 3);
}

TEST_CASE("exact estimator expectations match the true policy value") {
    SlateSpace space({3, 2});
    TablePolicy logging(space, {{0.5, 0.3, 0.2}, {0.6, 0.4}});
    TablePolicy target(space, {{0.1, 0.2, 0.7}, {0.3, 0.7}});
    TableReward q_true(space, {0.9, 0.1, 0.5, 0.3, 0.2, 0.8});
    const double truth = exact_value(q_true, target);

    SUBCASE("slate weighting is unbiased for any reward") {
        const double e = expected_estimate("ips", space, logging, q_true,
                                           [&](EstimatorInputs& in) { in.target = &target; });
        CHECK(std::abs(e - truth) < 1e-10);
    }

    SUBCASE("the doubly robust form is unbiased for any fixed model") {
        TableReward qhat(space, {0.3, 0.4, 0.0, 0.9, 0.6, 0.1});
        const double e =
            expected_estimate("dr", space, logging, q_true, [&](EstimatorInputs& in) {
                in.target = &target;
                in.reward_model = &qhat;
            });
        CHECK(std::abs(e - truth) < 1e-10);
    }

    SUBCASE("slot-sum weighting is unbiased exactly for slot-sum rewards") {
        SlotSumReward linear({{0.4, 0.1, 0.7}, {0.2, 0.6}});
        const double linear_truth = exact_value(linear, target);
        const double e = expected_estimate("pi", space, logging, linear,
                                           [&](EstimatorInputs& in) { in.target = &target; });
        CHECK(std::abs(e - linear_truth) < 1e-10);

        // ...and measurably biased for an interaction reward.
        const double biased = expected_estimate(
            "pi", space, logging, q_true, [&](EstimatorInputs& in) { in.target = &target; });
        CHECK(std::abs(biased - truth) > 1e-3);
    }

    SUBCASE("slot-sum doubly robust is unbiased with slot-sum reward and model") {
        SlotSumReward linear({{0.4, 0.1, 0.7}, {0.2, 0.6}});
        SlotSumReward linear_model({{0.1, 0.5, 0.2}, {0.7, 0.1}});
        const double linear_truth = exact_value(linear, target);
        const double e =
            expected_estimate("pidr", space, logging, linear, [&](EstimatorInputs& in) {
                in.target = &target;
                in.reward_model = &linear_model;
            });
        CHECK(std::abs(e - linear_truth) < 1e-10);
    }

    SUBCASE("prefix weighting is unbiased when the prefix determines the reward") {
        TableReward prefix_only(space, {0.9, 0.9, 0.5, 0.5, 0.2, 0.2});  // slot 0 only
        const double prefix_truth = exact_value(prefix_only, target);
        const double e =
            expected_estimate("mips", space, logging, prefix_only, [&](EstimatorInputs& in) {
                in.target = &target;
                in.prefix_len = 1;
            });
        CHECK(std::abs(e - prefix_truth) < 1e-10);

        TableReward suffix_only(space, {0.9, 0.1, 0.9, 0.1, 0.9, 0.1});  // slot 1 only
        const double suffix_truth = exact_value(suffix_only, target);
        const double biased =
            expected_estimate("mips", space, logging, suffix_only, [&](EstimatorInputs& in) {
                in.target = &target;
                in.prefix_len = 1;
            });
        CHECK(std::abs(biased - suffix_truth) > 1e-3);
    }

    SUBCASE("prefix doubly robust is unbiased with prefix-measurable reward and model") {
        TableReward prefix_only(space, {0.9, 0.9, 0.5, 0.5, 0.2, 0.2});
        TableReward prefix_model(space, {0.1, 0.1, 0.8, 0.8, 0.4, 0.4});
        const double prefix_truth = exact_value(prefix_only, target);
        const double e =
            expected_estimate("offcem", space, logging, prefix_only, [&](EstimatorInputs& in) {
                in.target = &target;
                in.reward_model = &prefix_model;
                in.prefix_len = 1;
            });
        CHECK(std::abs(e - prefix_truth) < 1e-10);
    }

    SUBCASE("latent weighting is unbiased for a reward-sufficient grouping") {
        // Group by parity of the sub-action sum; the reward depends only on it.
        SlateSpace parity_space({2, 2});
        TablePolicy plog(parity_space, {{0.6, 0.4}, {0.3, 0.7}});
        TablePolicy ptar(parity_space, {{0.2, 0.8}, {0.5, 0.5}});
        GroupingAbstraction parity(parity_space, 2, [](const Slate& s) {
            return (s.sub_actions[0] + s.sub_actions[1]) % 2;
        });
        TableReward grouped(parity_space, {0.3, 0.8, 0.8, 0.3});
        const WeightedContext ctx{Context({0.25}), 1.0};
        const double group_truth =
            true_value_exact(grouped, ptar, std::span<const WeightedContext>(&ctx, 1)).value;
        const double e =
            expected_estimate("lips", parity_space, plog, grouped, [&](EstimatorInputs& in) {
                in.target = &ptar;
                in.logging = &plog;
                in.abstraction = &parity;
            });
        CHECK(std::abs(e - group_truth) < 1e-10);
    }
}

TEST_CASE("one-latent abstractions give the naive average, full-rank ones the slate weight") {
    SlateSpace space({2, 3});
    TablePolicy logging(space, {{0.6, 0.4}, {0.3, 0.3, 0.4}});
    TablePolicy target(space, {{0.2, 0.8}, {0.5, 0.25, 0.25}});
    const auto data = table_logs(space, logging, 30, 31);

    EstimatorInputs in;
    in.dataset = &data;
    in.target = &target;
    in.logging = &logging;

    const auto bucket = GroupingAbstraction::single_bucket(space);
    in.abstraction = &bucket;
    Rng r1(2);
    CHECK(estimate_lips(in, &r1).per_record == estimate_nae(in).per_record);

    const auto identity = PrefixAbstraction::identity(space);
    in.abstraction = &identity;
    Rng r2(2);
    const auto lips = estimate_lips(in, &r2);
    const auto ips = estimate_ips(in);
    CHECK(lips.per_record == ips.per_record);
    CHECK(lips.value == ips.value);
}

TEST_CASE("latent weighting with a coarse abstraction beats the slate weight on dispersion") {
    EnvConfig cfg;
    cfg.num_slots = 4;
    cfg.slot_size = 4;
    cfg.context_dim = 10;
    cfg.seed = 77;
    auto env = std::make_shared<const Environment>(build_env(cfg));
    auto [logging, target] = make_policies(env);
    EnvRewardFn reward(env);
    StandardNormalContexts contexts(cfg.context_dim);
    Rng vrng(1000);
    const double truth = true_value_mc(reward, *target, contexts, 20000, vrng).value;

    PrefixAbstraction first_slot(env->space, 1);
    const int seeds = 30;
    int lips_wins = 0;
    std::vector<double> ips_vals, lips_vals;
    for (int i = 0; i < seeds; ++i) {
        const auto data = generate_logs(*env, *logging, 300, derive_seed(9000, "trial", {i}));
        EstimatorInputs in;
        in.dataset = &data;
        in.target = target.get();
        in.logging = logging.get();
        in.abstraction = &first_slot;
        Rng rng(derive_seed(9000, "est", {i}));
        const double ips = estimate_ips(in).value;
        const double lips = estimate_lips(in, &rng).value;
        ips_vals.push_back(ips);
        lips_vals.push_back(lips);
        if (std::abs(lips - truth) < std::abs(ips - truth)) ++lips_wins;
    }
    // Paired sign test at the 95% level (n=30, one-sided threshold 20).
    CHECK(lips_wins >= 20);
    CHECK(sample_variance(lips_vals) < sample_variance(ips_vals));
}

TEST_CASE("squared bias plus variance is the mean squared error") {
    const double truth = 0.6;
    const double a = std::sqrt(0.2);
    const std::vector<double> estimates = {truth + 0.5 - a, truth + 0.5 + a};

    double mse = 0.0;
    for (double v : estimates) mse += (v - truth) * (v - truth);
    mse /= estimates.size();
    const double bias = mean(estimates) - truth;
    const double variance = population_variance(estimates);
    CHECK(std::abs(bias * bias + variance - mse) < 1e-12);
    CHECK(bias == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(variance == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(0.5 * 0.5 + 0.2 == 0.45);
}

TEST_CASE("the registry exposes every estimator and rejects unknown names") {
    CHECK(estimator_names().size() == 9);
    SlateSpace space({2});
    TablePolicy policy(space, {{0.5, 0.5}});
    const auto data = table_logs(space, policy, 5, 3);
    EstimatorInputs in;
    in.dataset = &data;
    in.target = &policy;
    CHECK(run_estimator("ips", in).method == "ips");
    CHECK_THROWS_AS(run_estimator("snips", in), std::invalid_argument);
    CHECK_THROWS_AS(estimate_dr(in, nullptr), std::invalid_argument);  // no model
}
