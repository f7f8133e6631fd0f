#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "slateope/core.hpp"
#include "slateope/rng.hpp"

namespace slateope {

struct EnvConfig {
    int num_slots = 4;
    int slot_size = 10;
    int context_dim = 20;
    int reward_fn_id = 1;          // one of {1, 2, 3}
    double reward_noise_sigma = 0.1;
    double base_score_noise = 0.2;
    double eta_min = 0.0;          // slot-reward noise levels eta[l][a] ~ U(eta_min, eta_max)
    double eta_max = 0.5;          // eta_min == eta_max == 0.5 gives a constant reward
    double gamma = -1.0;           // logging softmax inverse temperature
    double epsilon_0 = 0.1;        // logging uniform mixture weight
    double epsilon = 0.3;          // target epsilon-greedy weight
    uint64_t seed = 0;

    void validate() const;
    static EnvConfig from_json_text(const std::string& text);
    std::string to_json_text() const;
};

// Immutable synthetic environment. Slot-level rewards take one of two values
// {eta, 1 - eta} depending on the sign of a random hyperplane; only the first
// half of the slots (K = floor(L/2)) affects the expected reward. Base scores
// used for policy construction are the slot rewards plus a fixed per-action
// offset, a noisy stand-in for a separately trained scorer.
struct Environment {
    EnvConfig config;
    SlateSpace space;
    int half_slots = 0;                                  // K = floor(L/2)
    std::vector<std::vector<double>> eta;                // [L][A] noise levels
    std::vector<std::vector<std::vector<double>>> hyper_v;  // [L][A][d]
    std::vector<std::vector<double>> hyper_b;            // [L][A]
    std::vector<std::vector<double>> cooc;               // [L-1] flattened A x A
    std::vector<std::vector<double>> base_delta;         // [L][A] score offsets

    double slot_reward(const Context& x, int slot, int action) const;
    double base_score(const Context& x, int slot, int action) const;
    double cooc_weight(int pair, int a_left, int a_right) const {
        return cooc[pair][static_cast<size_t>(a_left) * space.slot_sizes[pair + 1] + a_right];
    }
    double expected_reward(const Context& x, const Slate& s) const;
    double sample_reward(const Context& x, const Slate& s, Rng& rng) const;
};

Environment build_env(const EnvConfig& config);

// q(x,s) view over an environment.
class EnvRewardFn : public RewardFn {
public:
    explicit EnvRewardFn(std::shared_ptr<const Environment> env) : env_(std::move(env)) {}
    double expected_reward(const Context& x, const Slate& s) const override {
        return env_->expected_reward(x, s);
    }

private:
    std::shared_ptr<const Environment> env_;
};

// Logging policy: (1 - eps0) * softmax(gamma * base_score) + eps0 / |A_l|.
class SoftmaxLoggingPolicy : public FactoredPolicy {
public:
    SoftmaxLoggingPolicy(std::shared_ptr<const Environment> env, double gamma, double eps0);
    const SlateSpace& space() const override { return env_->space; }
    std::vector<double> slot_probs(const Context& x, int slot) const override;

private:
    std::shared_ptr<const Environment> env_;
    double gamma_;
    double eps0_;
};

// Target policy: (1 - eps) * one-hot(argmax base_score) + eps / |A_l|.
class EpsGreedyTargetPolicy : public FactoredPolicy {
public:
    EpsGreedyTargetPolicy(std::shared_ptr<const Environment> env, double eps);
    const SlateSpace& space() const override { return env_->space; }
    std::vector<double> slot_probs(const Context& x, int slot) const override;

private:
    std::shared_ptr<const Environment> env_;
    double eps_;
};

std::pair<std::shared_ptr<FactoredPolicy>, std::shared_ptr<FactoredPolicy>> make_policies(
    std::shared_ptr<const Environment> env, double gamma, double eps0, double eps);

// Uses gamma / epsilon_0 / epsilon from the environment's config.
std::pair<std::shared_ptr<FactoredPolicy>, std::shared_ptr<FactoredPolicy>> make_policies(
    std::shared_ptr<const Environment> env);

class StandardNormalContexts : public ContextDist {
public:
    explicit StandardNormalContexts(int dim) : dim_(dim) {}
    Context sample(Rng& rng) const override;

private:
    int dim_;
};

// n i.i.d. records x ~ N(0, I_d), s ~ logging(.|x), r ~ N(q(x,s), sigma^2).
// Record i draws from substream(seed, "record", {i}) so the dataset does not
// depend on generation order.
LoggedDataset generate_logs(const Environment& env, const FactoredPolicy& logging,
                            int n, uint64_t seed);

}  // namespace slateope
