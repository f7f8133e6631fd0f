#include "slateope/slope.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "slateope/linalg.hpp"

namespace slateope {

double cnf(std::span<const double> values, double delta) {
    const size_t n = values.size();
    if (n < 2) throw std::invalid_argument("cnf: need at least two values");
    if (!(delta > 0.0 && delta < 1.0)) {
        throw std::invalid_argument("cnf: delta must lie in (0, 1)");
    }
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = *hi - *lo;
    if (range == 0.0) return 0.0;  // all values equal; avoids mean round-off
    const double variance = sample_variance(values);
    const double log_term = std::log(2.0 / delta);
    return std::sqrt(2.0 * variance * log_term / double(n)) +
           7.0 * range * log_term / (3.0 * double(n - 1));
}

CandidateEstimate make_candidate(double beta, std::span<const double> per_record,
                                 double delta) {
    CandidateEstimate out;
    out.beta = beta;
    out.value = mean(per_record);
    out.half_width = cnf(per_record, delta);
    return out;
}

void sort_candidates(std::vector<CandidateEstimate>& candidates) {
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const CandidateEstimate& a, const CandidateEstimate& b) {
                         return a.beta > b.beta;
                     });
}

size_t slope_select(std::span<const CandidateEstimate> candidates) {
    if (candidates.empty()) {
        throw std::invalid_argument("slope_select: no candidates");
    }
    const double widen = std::sqrt(6.0) - 1.0;
    size_t selected = 0;
    for (size_t m = 1; m < candidates.size(); ++m) {
        bool ok = true;
        for (size_t prev = 0; prev < m; ++prev) {
            const double gap = std::abs(candidates[m].value - candidates[prev].value);
            if (gap > candidates[m].half_width + widen * candidates[prev].half_width) {
                ok = false;
                break;
            }
        }
        if (ok) selected = m;
    }
    return selected;
}

std::string slope_report_json(std::span<const CandidateEstimate> candidates,
                              size_t selected) {
    if (selected >= candidates.size()) {
        throw std::invalid_argument("slope_report_json: selected index out of range");
    }
    nlohmann::json doc;
    doc["candidates"] = nlohmann::json::array();
    for (const CandidateEstimate& c : candidates) {
        doc["candidates"].push_back(
            {{"beta", c.beta}, {"value", c.value}, {"cnf", c.half_width}});
    }
    doc["selected_index"] = selected;
    doc["selected_beta"] = candidates[selected].beta;
    return doc.dump();
}

}  // namespace slateope
