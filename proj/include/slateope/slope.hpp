#pragma once

#include <span>
#include <string>
#include <vector>

namespace slateope {

// Empirical-Bernstein high-probability half-width for the mean of `values`:
//   sqrt(2 v ln(2/delta) / n) + 7 R ln(2/delta) / (3 (n - 1))
// with v the sample variance and R the empirical range. Requires n >= 2.
double cnf(std::span<const double> values, double delta = 0.05);

// One tuning candidate. Candidates handed to slope_select must be ordered so
// the (unknown) bias is non-decreasing and the half-width non-increasing in
// the index; for the latent-weighting estimator that means beta descending,
// most-regularized first.
struct CandidateEstimate {
    double beta = 0.0;
    double value = 0.0;        // point estimate
    double half_width = 0.0;   // cnf() of the per-record terms
};

CandidateEstimate make_candidate(double beta, std::span<const double> per_record,
                                 double delta = 0.05);

// Largest index in the ordering convention.
void sort_candidates(std::vector<CandidateEstimate>& candidates);

// Interval-overlap selection: the largest (0-based) index m such that
// |value_m - value_m'| <= half_width_m + (sqrt(6) - 1) * half_width_m' for
// every m' < m. Index 0 is always feasible.
size_t slope_select(std::span<const CandidateEstimate> candidates);

// JSON object with the candidate list and the chosen index / beta.
std::string slope_report_json(std::span<const CandidateEstimate> candidates,
                              size_t selected);

}  // namespace slateope
