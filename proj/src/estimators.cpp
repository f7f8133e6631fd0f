#include "slateope/estimators.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "slateope/linalg.hpp"

namespace slateope {

namespace {

// Mean / standard-error bookkeeping shared by every estimator.
EstimatorResult finalize(std::string method, std::vector<double> terms) {
    EstimatorResult out;
    out.method = std::move(method);
    out.per_record = std::move(terms);
    const size_t n = out.per_record.size();
    if (n == 0) throw std::invalid_argument(out.method + ": empty dataset");
    out.value = mean(out.per_record);
    if (n >= 2) out.std_error = std::sqrt(sample_variance(out.per_record) / double(n));
    return out;
}

double apply_clip(double w, const std::optional<double>& clip, int& clipped) {
    if (clip && w > *clip) {
        ++clipped;
        return *clip;
    }
    return w;
}

// Slate-level weight target(s|x) / recorded propensity, as one division so the
// identity-abstraction path can reproduce it bit for bit.
double slate_weight(const LoggedRecord& rec, const FactoredPolicy& target) {
    const double num = slate_prob(target, rec.x, rec.s);
    if (rec.pscore <= 0.0) {
        if (num > 0.0) {
            throw SupportViolationError(
                "slate weight: logged propensity is zero where the target policy has "
                "positive probability");
        }
        return 0.0;
    }
    return num / rec.pscore;
}

// Product of the first `k` slot weights, again as a single division.
double prefix_weight(const LoggedRecord& rec, const FactoredPolicy& target, int k) {
    double num = 1.0, den = 1.0;
    for (int l = 0; l < k; ++l) {
        const double p = target.slot_probs(rec.x, l)[rec.s.sub_actions[l]];
        if (rec.pscore_slot[l] <= 0.0) {
            if (p > 0.0) {
                throw SupportViolationError(
                    "slot weight: logged slot propensity is zero where the target "
                    "policy has positive probability");
            }
            return 0.0;
        }
        num *= p;
        den *= rec.pscore_slot[l];
    }
    return num / den;
}

// Sum of slot weights minus (L - 1).
double pi_weight(const LoggedRecord& rec, const FactoredPolicy& target) {
    const int L = rec.s.size();
    double total = 0.0;
    for (int l = 0; l < L; ++l) {
        const double p = target.slot_probs(rec.x, l)[rec.s.sub_actions[l]];
        if (rec.pscore_slot[l] <= 0.0) {
            if (p > 0.0) {
                throw SupportViolationError(
                    "slot weight: logged slot propensity is zero where the target "
                    "policy has positive probability");
            }
            continue;
        }
        total += p / rec.pscore_slot[l];
    }
    // (L - 1) subtracted as one term so the single-slot case stays bitwise
    // identical to the slate weight.
    return total - (double(L) - 1.0);
}

int resolve_prefix(const EstimatorInputs& in) {
    const int L = in.dataset->space.num_slots();
    const int k = in.prefix_len >= 0 ? in.prefix_len : std::max(1, L / 2);
    if (k < 1 || k > L) {
        throw std::invalid_argument("prefix length must lie in [1, num_slots]");
    }
    return k;
}

std::vector<double> resolve_dm_terms(const EstimatorInputs& in, Rng* rng, bool& exact) {
    if (in.dm_cache != nullptr) {
        if (in.dm_cache->size() != in.dataset->size()) {
            throw std::invalid_argument("dm cache size does not match the dataset");
        }
        exact = in.dataset->space.slate_count() <= in.enumeration_cap;
        return *in.dm_cache;
    }
    in.require(in.reward_model != nullptr, "a reward model");
    return dm_terms(*in.dataset, *in.target, *in.reward_model, in.mc_samples, rng,
                    in.enumeration_cap, &exact);
}

// Weighted-residual hybrid shared by the doubly robust family.
EstimatorResult hybrid(const EstimatorInputs& in, Rng* rng, std::string method,
                       const std::function<double(const LoggedRecord&)>& weight_of) {
    in.require(in.dataset != nullptr, "a dataset");
    in.require(in.target != nullptr, "a target policy");
    bool exact = false;
    const std::vector<double> dm = resolve_dm_terms(in, rng, exact);
    in.require(in.reward_model != nullptr, "a reward model");
    int clipped = 0;
    std::vector<double> terms;
    terms.reserve(in.dataset->size());
    for (size_t i = 0; i < in.dataset->size(); ++i) {
        const LoggedRecord& rec = in.dataset->records[i];
        const double w = apply_clip(weight_of(rec), in.weight_clip, clipped);
        const double residual = rec.r - in.reward_model->expected_reward(rec.x, rec.s);
        terms.push_back(dm[i] + w * residual);
    }
    EstimatorResult out = finalize(std::move(method), std::move(terms));
    out.dm_exact = exact;
    out.clipped = clipped;
    return out;
}

}  // namespace

void EstimatorInputs::require(bool ok, const char* what) const {
    if (!ok) {
        throw std::invalid_argument(std::string("estimator requires ") + what);
    }
}

std::vector<double> dm_terms(const LoggedDataset& data, const FactoredPolicy& target,
                             const RewardFn& qhat, int mc_samples, Rng* rng, uint64_t cap,
                             bool* exact_out) {
    const SlateSpace& space = data.space;
    const int L = space.num_slots();
    const bool exact = space.slate_count() <= cap;
    if (exact_out != nullptr) *exact_out = exact;
    if (!exact && rng == nullptr) {
        throw std::invalid_argument("dm_terms: sampling mode needs an rng");
    }
    if (!exact && mc_samples < 1) {
        throw std::invalid_argument("dm_terms: mc_samples must be >= 1");
    }

    std::vector<double> out;
    out.reserve(data.size());
    std::vector<Slate> slates;
    if (exact) slates = enumerate_slates(space, cap);

    std::vector<std::vector<double>> probs(L);
    for (const LoggedRecord& rec : data.records) {
        for (int l = 0; l < L; ++l) probs[l] = target.slot_probs(rec.x, l);
        if (exact) {
            const std::vector<double> q = qhat.expected_reward_batch(rec.x, slates);
            double v = 0.0;
            for (size_t j = 0; j < slates.size(); ++j) {
                double p = 1.0;
                for (int l = 0; l < L; ++l) p *= probs[l][slates[j].sub_actions[l]];
                v += p * q[j];
            }
            out.push_back(v);
        } else {
            std::vector<Slate> draws;
            draws.reserve(mc_samples);
            for (int m = 0; m < mc_samples; ++m) {
                draws.push_back(sample_slate_from_probs(probs, *rng));
            }
            const std::vector<double> q = qhat.expected_reward_batch(rec.x, draws);
            out.push_back(mean(q));
        }
    }
    return out;
}

EstimatorResult estimate_nae(const EstimatorInputs& in, Rng*) {
    in.require(in.dataset != nullptr, "a dataset");
    std::vector<double> terms;
    terms.reserve(in.dataset->size());
    for (const LoggedRecord& rec : in.dataset->records) terms.push_back(rec.r);
    return finalize("nae", std::move(terms));
}

EstimatorResult estimate_ips(const EstimatorInputs& in, Rng*) {
    in.require(in.dataset != nullptr, "a dataset");
    in.require(in.target != nullptr, "a target policy");
    int clipped = 0;
    std::vector<double> terms;
    terms.reserve(in.dataset->size());
    for (const LoggedRecord& rec : in.dataset->records) {
        terms.push_back(apply_clip(slate_weight(rec, *in.target), in.weight_clip, clipped) *
                        rec.r);
    }
    EstimatorResult out = finalize("ips", std::move(terms));
    out.clipped = clipped;
    return out;
}

EstimatorResult estimate_pi(const EstimatorInputs& in, Rng*) {
    in.require(in.dataset != nullptr, "a dataset");
    in.require(in.target != nullptr, "a target policy");
    int clipped = 0;
    std::vector<double> terms;
    terms.reserve(in.dataset->size());
    for (const LoggedRecord& rec : in.dataset->records) {
        terms.push_back(apply_clip(pi_weight(rec, *in.target), in.weight_clip, clipped) *
                        rec.r);
    }
    EstimatorResult out = finalize("pi", std::move(terms));
    out.clipped = clipped;
    return out;
}

EstimatorResult estimate_mips(const EstimatorInputs& in, Rng*) {
    in.require(in.dataset != nullptr, "a dataset");
    in.require(in.target != nullptr, "a target policy");
    const int k = resolve_prefix(in);
    int clipped = 0;
    std::vector<double> terms;
    terms.reserve(in.dataset->size());
    for (const LoggedRecord& rec : in.dataset->records) {
        terms.push_back(
            apply_clip(prefix_weight(rec, *in.target, k), in.weight_clip, clipped) * rec.r);
    }
    EstimatorResult out = finalize("mips", std::move(terms));
    out.clipped = clipped;
    return out;
}

EstimatorResult estimate_dm(const EstimatorInputs& in, Rng* rng) {
    in.require(in.dataset != nullptr, "a dataset");
    in.require(in.target != nullptr, "a target policy");
    bool exact = false;
    EstimatorResult out = finalize("dm", resolve_dm_terms(in, rng, exact));
    out.dm_exact = exact;
    return out;
}

EstimatorResult estimate_dr(const EstimatorInputs& in, Rng* rng) {
    return hybrid(in, rng, "dr",
                  [&](const LoggedRecord& rec) { return slate_weight(rec, *in.target); });
}

EstimatorResult estimate_pidr(const EstimatorInputs& in, Rng* rng) {
    return hybrid(in, rng, "pidr",
                  [&](const LoggedRecord& rec) { return pi_weight(rec, *in.target); });
}

EstimatorResult estimate_offcem(const EstimatorInputs& in, Rng* rng) {
    in.require(in.dataset != nullptr, "a dataset");
    const int k = resolve_prefix(in);
    return hybrid(in, rng, "offcem", [&](const LoggedRecord& rec) {
        return prefix_weight(rec, *in.target, k);
    });
}

EstimatorResult estimate_lips(const EstimatorInputs& in, Rng* rng) {
    in.require(in.dataset != nullptr, "a dataset");
    in.require(in.target != nullptr, "a target policy");
    in.require(in.logging != nullptr, "the logging policy (for latent marginals)");
    in.require(in.abstraction != nullptr, "a slate abstraction");
    in.require(rng != nullptr, "an rng (latent draws)");
    const MarginalMode mode = in.dataset->space.slate_count() <= in.enumeration_cap
                                  ? MarginalMode::exact
                                  : MarginalMode::mc;
    int clipped = 0, flagged_count = 0;
    std::vector<double> terms;
    terms.reserve(in.dataset->size());
    for (const LoggedRecord& rec : in.dataset->records) {
        const int z = in.abstraction->sample_z(rec.x, rec.s, *rng);
        bool flag = false;
        double w = latent_weight(*in.abstraction, *in.target, *in.logging, rec.x, z, mode,
                                 in.mc_samples, in.marginal_floor, rng, 1e6, &flag,
                                 in.enumeration_cap);
        w = apply_clip(w, in.weight_clip, clipped);
        if (flag) ++flagged_count;
        terms.push_back(w * rec.r);
    }
    EstimatorResult out = finalize("lips", std::move(terms));
    out.clipped = clipped;
    out.flagged = flagged_count;
    return out;
}

const std::vector<std::string>& estimator_names() {
    static const std::vector<std::string> names = {"nae", "dm",   "ips",    "pi",  "mips",
                                                   "dr",  "pidr", "offcem", "lips"};
    return names;
}

EstimatorResult run_estimator(const std::string& name, const EstimatorInputs& in,
                              Rng* rng) {
    if (name == "nae") return estimate_nae(in, rng);
    if (name == "dm") return estimate_dm(in, rng);
    if (name == "ips") return estimate_ips(in, rng);
    if (name == "pi") return estimate_pi(in, rng);
    if (name == "mips") return estimate_mips(in, rng);
    if (name == "dr") return estimate_dr(in, rng);
    if (name == "pidr") return estimate_pidr(in, rng);
    if (name == "offcem") return estimate_offcem(in, rng);
    if (name == "lips") return estimate_lips(in, rng);
    std::string known;
    for (const std::string& n : estimator_names()) {
        if (!known.empty()) known += ", ";
        known += n;
    }
    throw std::invalid_argument("unknown estimator '" + name + "' (known: " + known + ")");
}

}  // namespace slateope
