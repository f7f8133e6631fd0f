#pragma once

#include <optional>
#include <string>
#include <vector>

#include "slateope/abstraction.hpp"
#include "slateope/core.hpp"
#include "slateope/rng.hpp"

namespace slateope {

// Shared inputs for every estimator. Each estimator reads only the fields it
// needs and fails fast when a required one is missing. Importance weights are
// always computed from the recorded propensities, never re-derived from a
// logging-policy object, so datasets stay self-contained; the logging policy
// itself is required only for the latent marginals of the abstraction-based
// estimator.
struct EstimatorInputs {
    const LoggedDataset* dataset = nullptr;
    const FactoredPolicy* target = nullptr;
    const FactoredPolicy* logging = nullptr;
    const RewardFn* reward_model = nullptr;          // q-hat
    const SlateAbstraction* abstraction = nullptr;
    int prefix_len = -1;          // k for prefix-weight estimators; -1 = floor(L/2)
    int mc_samples = 1000;        // M for model-value terms and latent marginals
    double marginal_floor = 1e-8;
    std::optional<double> weight_clip;               // diagnostics only; default off
    uint64_t enumeration_cap = kDefaultEnumerationCap;
    // Optional precomputed per-record model-value terms (shared across the
    // hybrid estimators to avoid recomputing the same expectation).
    const std::vector<double>* dm_cache = nullptr;

    void require(bool ok, const char* what) const;
};

struct EstimatorResult {
    double value = 0.0;
    std::string method;
    double std_error = 0.0;           // sqrt(sample variance / n) of per_record
    std::vector<double> per_record;   // contributions; their mean is `value`
    bool dm_exact = false;            // model-value term enumerated exactly
    int clipped = 0;                  // weights capped by weight_clip
    int flagged = 0;                  // latent weights above the sanity cap

    ValueEstimate to_estimate() const { return {value, method, std_error}; }
};

// Per-record expectation of the reward model under the target policy,
// E_{s ~ target(.|x_i)}[qhat(x_i, s)]: exact enumeration when the slate space
// is below `cap`, otherwise an M-sample average. Sets *exact accordingly.
std::vector<double> dm_terms(const LoggedDataset& data, const FactoredPolicy& target,
                             const RewardFn& qhat, int mc_samples, Rng* rng,
                             uint64_t cap = kDefaultEnumerationCap, bool* exact = nullptr);

EstimatorResult estimate_nae(const EstimatorInputs& in, Rng* rng = nullptr);
EstimatorResult estimate_ips(const EstimatorInputs& in, Rng* rng = nullptr);
EstimatorResult estimate_pi(const EstimatorInputs& in, Rng* rng = nullptr);
EstimatorResult estimate_mips(const EstimatorInputs& in, Rng* rng = nullptr);
EstimatorResult estimate_dm(const EstimatorInputs& in, Rng* rng = nullptr);
EstimatorResult estimate_dr(const EstimatorInputs& in, Rng* rng = nullptr);
EstimatorResult estimate_pidr(const EstimatorInputs& in, Rng* rng = nullptr);
EstimatorResult estimate_offcem(const EstimatorInputs& in, Rng* rng = nullptr);
EstimatorResult estimate_lips(const EstimatorInputs& in, Rng* rng = nullptr);

// Registry: names accepted by run_estimator, in canonical order.
const std::vector<std::string>& estimator_names();
EstimatorResult run_estimator(const std::string& name, const EstimatorInputs& in,
                              Rng* rng = nullptr);

}  // namespace slateope
