#include "slateope/synthenv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace slateope {

using json = nlohmann::json;

void EnvConfig::validate() const {
    if (num_slots < 2) throw std::invalid_argument("EnvConfig: num_slots must be >= 2");
    if (slot_size < 2) throw std::invalid_argument("EnvConfig: slot_size must be >= 2");
    if (context_dim < 1) throw std::invalid_argument("EnvConfig: context_dim must be >= 1");
    if (reward_fn_id < 1 || reward_fn_id > 3) {
        throw std::invalid_argument("EnvConfig: reward_fn_id must be 1, 2, or 3");
    }
    if (!(reward_noise_sigma > 0.0)) {
        throw std::invalid_argument("EnvConfig: reward_noise_sigma must be > 0");
    }
    if (base_score_noise < 0.0) {
        throw std::invalid_argument("EnvConfig: base_score_noise must be >= 0");
    }
    if (!(eta_min >= 0.0 && eta_min <= eta_max && eta_max <= 1.0)) {
        throw std::invalid_argument("EnvConfig: need 0 <= eta_min <= eta_max <= 1");
    }
    if (epsilon_0 < 0.0 || epsilon_0 > 1.0 || epsilon < 0.0 || epsilon > 1.0) {
        throw std::invalid_argument("EnvConfig: epsilon_0 and epsilon must lie in [0,1]");
    }
}

EnvConfig EnvConfig::from_json_text(const std::string& text) {
    json obj = json::parse(text);
    EnvConfig c;
    c.num_slots = obj.value("num_slots", c.num_slots);
    c.slot_size = obj.value("slot_size", c.slot_size);
    c.context_dim = obj.value("context_dim", c.context_dim);
    c.reward_fn_id = obj.value("reward_fn_id", c.reward_fn_id);
    c.reward_noise_sigma = obj.value("reward_noise_sigma", c.reward_noise_sigma);
    c.base_score_noise = obj.value("base_score_noise", c.base_score_noise);
    c.eta_min = obj.value("eta_min", c.eta_min);
    c.eta_max = obj.value("eta_max", c.eta_max);
    c.gamma = obj.value("gamma", c.gamma);
    c.epsilon_0 = obj.value("epsilon_0", c.epsilon_0);
    c.epsilon = obj.value("epsilon", c.epsilon);
    c.seed = obj.value("seed", c.seed);
    c.validate();
    return c;
}

std::string EnvConfig::to_json_text() const {
    json obj;
    obj["num_slots"] = num_slots;
    obj["slot_size"] = slot_size;
    obj["context_dim"] = context_dim;
    obj["reward_fn_id"] = reward_fn_id;
    obj["reward_noise_sigma"] = reward_noise_sigma;
    obj["base_score_noise"] = base_score_noise;
    obj["eta_min"] = eta_min;
    obj["eta_max"] = eta_max;
    obj["gamma"] = gamma;
    obj["epsilon_0"] = epsilon_0;
    obj["epsilon"] = epsilon;
    obj["seed"] = seed;
    return obj.dump(2);
}

Environment build_env(const EnvConfig& config) {
    config.validate();
    Environment env;
    env.config = config;
    env.space = SlateSpace(std::vector<int>(config.num_slots, config.slot_size));
    env.half_slots = config.num_slots / 2;

    const int L = config.num_slots;
    const int A = config.slot_size;
    const int d = config.context_dim;

    Rng eta_rng = substream(config.seed, "env-eta");
    Rng hyper_rng = substream(config.seed, "env-hyperplane");
    Rng cooc_rng = substream(config.seed, "env-cooc");
    Rng delta_rng = substream(config.seed, "env-base-delta");

    env.eta.assign(L, std::vector<double>(A));
    env.hyper_v.assign(L, std::vector<std::vector<double>>(A, std::vector<double>(d)));
    env.hyper_b.assign(L, std::vector<double>(A));
    env.base_delta.assign(L, std::vector<double>(A));
    for (int l = 0; l < L; ++l) {
        for (int a = 0; a < A; ++a) {
            env.eta[l][a] = eta_rng.uniform(config.eta_min, config.eta_max);
            for (int j = 0; j < d; ++j) {
                env.hyper_v[l][a][j] = hyper_rng.normal(0.0, 1.0 / std::sqrt(double(d)));
            }
            env.hyper_b[l][a] = hyper_rng.normal();
            env.base_delta[l][a] = delta_rng.normal(0.0, config.base_score_noise);
        }
    }
    env.cooc.assign(L - 1, std::vector<double>(static_cast<size_t>(A) * A));
    for (int l = 0; l + 1 < L; ++l) {
        for (auto& w : env.cooc[l]) w = cooc_rng.normal();
    }
    return env;
}

double Environment::slot_reward(const Context& x, int slot, int action) const {
    const auto& v = hyper_v[slot][action];
    if (static_cast<int>(v.size()) != x.dim()) {
        throw std::invalid_argument("Environment: context dim mismatch");
    }
    double score = hyper_b[slot][action];
    for (int j = 0; j < x.dim(); ++j) score += v[j] * x.features[j];
    const double e = eta[slot][action];
    return score > 0.0 ? 1.0 - e : e;
}

double Environment::base_score(const Context& x, int slot, int action) const {
    return slot_reward(x, slot, action) + base_delta[slot][action];
}

double Environment::expected_reward(const Context& x, const Slate& s) const {
    validate_slate(space, s);
    const int K = half_slots;
    std::vector<double> q(K);
    for (int l = 0; l < K; ++l) q[l] = slot_reward(x, l, s.sub_actions[l]);

    switch (config.reward_fn_id) {
        case 1: {
            double mean_q = 0.0;
            for (int l = 0; l < K; ++l) mean_q += q[l];
            mean_q /= K;
            double mean_w = 0.0;
            if (K > 1) {
                for (int l = 0; l + 1 < K; ++l) {
                    mean_w += cooc_weight(l, s.sub_actions[l], s.sub_actions[l + 1]);
                }
                mean_w /= (K - 1);
            }
            return mean_q + mean_w;
        }
        case 2: {
            double total = q[0];
            for (int l = 1; l < K; ++l) {
                total += cooc_weight(l - 1, s.sub_actions[l - 1], s.sub_actions[l]) * q[l];
            }
            return total / K;
        }
        case 3: {
            const auto [lo, hi] = std::minmax_element(q.begin(), q.end());
            return 0.5 * (*lo + *hi);
        }
        default:
            throw std::invalid_argument("Environment: invalid reward_fn_id");
    }
}

double Environment::sample_reward(const Context& x, const Slate& s, Rng& rng) const {
    return expected_reward(x, s) + config.reward_noise_sigma * rng.normal();
}

namespace {

std::vector<double> softmax_mixture(const std::vector<double>& scores, double gamma,
                                    double eps_uniform) {
    const int A = static_cast<int>(scores.size());
    std::vector<double> p(A);
    double max_arg = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < A; ++a) max_arg = std::max(max_arg, gamma * scores[a]);
    double total = 0.0;
    for (int a = 0; a < A; ++a) {
        p[a] = std::exp(gamma * scores[a] - max_arg);
        total += p[a];
    }
    for (int a = 0; a < A; ++a) {
        p[a] = (1.0 - eps_uniform) * p[a] / total + eps_uniform / A;
    }
    return p;
}

}  // namespace

SoftmaxLoggingPolicy::SoftmaxLoggingPolicy(std::shared_ptr<const Environment> env,
                                           double gamma, double eps0)
    : env_(std::move(env)), gamma_(gamma), eps0_(eps0) {
    if (eps0_ < 0.0 || eps0_ > 1.0) {
        throw std::invalid_argument("SoftmaxLoggingPolicy: eps0 must lie in [0,1]");
    }
}

std::vector<double> SoftmaxLoggingPolicy::slot_probs(const Context& x, int slot) const {
    const int A = env_->space.slot_sizes[slot];
    std::vector<double> scores(A);
    for (int a = 0; a < A; ++a) scores[a] = env_->base_score(x, slot, a);
    return softmax_mixture(scores, gamma_, eps0_);
}

EpsGreedyTargetPolicy::EpsGreedyTargetPolicy(std::shared_ptr<const Environment> env,
                                             double eps)
    : env_(std::move(env)), eps_(eps) {
    if (eps_ < 0.0 || eps_ > 1.0) {
        throw std::invalid_argument("EpsGreedyTargetPolicy: eps must lie in [0,1]");
    }
}

std::vector<double> EpsGreedyTargetPolicy::slot_probs(const Context& x, int slot) const {
    const int A = env_->space.slot_sizes[slot];
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < A; ++a) {
        const double sc = env_->base_score(x, slot, a);
        if (sc > best_score) {
            best_score = sc;
            best = a;
        }
    }
    std::vector<double> p(A, eps_ / A);
    p[best] += 1.0 - eps_;
    return p;
}

std::pair<std::shared_ptr<FactoredPolicy>, std::shared_ptr<FactoredPolicy>> make_policies(
    std::shared_ptr<const Environment> env, double gamma, double eps0, double eps) {
    return {std::make_shared<SoftmaxLoggingPolicy>(env, gamma, eps0),
            std::make_shared<EpsGreedyTargetPolicy>(env, eps)};
}

std::pair<std::shared_ptr<FactoredPolicy>, std::shared_ptr<FactoredPolicy>> make_policies(
    std::shared_ptr<const Environment> env) {
    const auto& c = env->config;
    return make_policies(std::move(env), c.gamma, c.epsilon_0, c.epsilon);
}

Context StandardNormalContexts::sample(Rng& rng) const {
    std::vector<double> f(dim_);
    for (double& v : f) v = rng.normal();
    return Context(std::move(f));
}

LoggedDataset generate_logs(const Environment& env, const FactoredPolicy& logging,
                            int n, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("generate_logs: n must be >= 1");
    if (!(logging.space() == env.space)) {
        throw std::invalid_argument("generate_logs: policy space does not match environment");
    }
    LoggedDataset data;
    data.space = env.space;
    data.records.resize(n);
    const int L = env.space.num_slots();
    for (int i = 0; i < n; ++i) {
        Rng rng = substream(seed, "record", {static_cast<uint64_t>(i)});
        LoggedRecord& rec = data.records[i];
        rec.x.features.resize(env.config.context_dim);
        for (double& v : rec.x.features) v = rng.normal();
        rec.pscore_slot.resize(L);
        rec.s.sub_actions.resize(L);
        double pscore = 1.0;
        for (int l = 0; l < L; ++l) {
            const auto probs = logging.slot_probs(rec.x, l);
            const int a = rng.categorical(probs);
            rec.s.sub_actions[l] = a;
            rec.pscore_slot[l] = probs[a];
            pscore *= probs[a];
        }
        rec.pscore = pscore;
        rec.r = env.sample_reward(rec.x, rec.s, rng);
    }
    return data;
}

}  // namespace slateope
