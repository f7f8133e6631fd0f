#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace slateope {

struct GradCheckResult {
    int model_index = 0;
    std::string component;       // e.g. "mlp/squared", "relaxed/encoder", "st/reward"
    double max_rel_err = 0.0;
    int entries_checked = 0;
    bool pass = false;
};

// Central finite-difference verification of every analytic gradient path:
// raw networks under both loss heads (squared error and NLL), and the
// abstraction objective through the relaxed and straight-through sampling
// modes at fixed Gumbel noise. The straight-through encoder gradient is a
// surrogate rather than the gradient of the hard forward, so its chain is
// exercised through the relaxed mode, where the objective is exactly
// differentiable; the decoder and reward heads are additionally checked
// against the hard forward itself. Draws `num_models` independent random
// instances from `seed`; an entry passes when the relative error against
// the central difference (h = 1e-5) stays below `tol`. The relative-error
// denominator is floored at h times the loss magnitude, the scale below
// which central differences are all cancellation noise.
std::vector<GradCheckResult> run_gradcheck(int num_models, uint64_t seed,
                                           double tol = 1e-4);

bool gradcheck_all_pass(const std::vector<GradCheckResult>& results);

// One human-readable line per result ("PASS <component> ...").
std::vector<std::string> gradcheck_lines(const std::vector<GradCheckResult>& results);

// {"checks": [...], "all_pass": bool}
std::string gradcheck_json(const std::vector<GradCheckResult>& results);

}  // namespace slateope
