#include "slateope/core.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace slateope {

using json = nlohmann::json;

SlateSpace::SlateSpace(std::vector<int> sizes) : slot_sizes(std::move(sizes)) {
    if (slot_sizes.empty()) {
        throw std::invalid_argument("SlateSpace: need at least one slot");
    }
    for (int k : slot_sizes) {
        if (k < 1) throw std::invalid_argument("SlateSpace: slot sizes must be >= 1");
    }
}

uint64_t SlateSpace::slate_count() const {
    constexpr uint64_t limit = uint64_t{1} << 62;
    uint64_t count = 1;
    for (int k : slot_sizes) {
        const auto uk = static_cast<uint64_t>(k);
        if (count > limit / uk) {
            throw EnumerationError("slate space size exceeds 2^62");
        }
        count *= uk;
    }
    return count;
}

void validate_slate(const SlateSpace& space, const Slate& s) {
    if (s.size() != space.num_slots()) {
        throw std::invalid_argument("slate has " + std::to_string(s.size()) +
                                    " slots, space has " +
                                    std::to_string(space.num_slots()));
    }
    for (int l = 0; l < s.size(); ++l) {
        const int a = s.sub_actions[l];
        if (a < 0 || a >= space.slot_sizes[l]) {
            throw std::invalid_argument("sub-action " + std::to_string(a) +
                                        " out of range for slot " + std::to_string(l));
        }
    }
}

namespace {

void validate_prob_vector(std::span<const double> p, const std::string& what) {
    double total = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument(what + ": probabilities must be finite and >= 0");
        }
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw std::invalid_argument(what + ": probabilities sum to " +
                                    std::to_string(total) + ", expected 1");
    }
}

}  // namespace

TablePolicy::TablePolicy(SlateSpace space, std::vector<std::vector<double>> probs)
    : space_(std::move(space)), probs_(std::move(probs)) {
    if (static_cast<int>(probs_.size()) != space_.num_slots()) {
        throw std::invalid_argument("TablePolicy: one probability vector per slot required");
    }
    for (int l = 0; l < space_.num_slots(); ++l) {
        if (static_cast<int>(probs_[l].size()) != space_.slot_sizes[l]) {
            throw std::invalid_argument("TablePolicy: slot " + std::to_string(l) +
                                        " table size mismatch");
        }
        validate_prob_vector(probs_[l], "TablePolicy slot " + std::to_string(l));
    }
}

TablePolicy TablePolicy::deterministic(const SlateSpace& space, const Slate& slate) {
    validate_slate(space, slate);
    std::vector<std::vector<double>> probs;
    probs.reserve(space.num_slots());
    for (int l = 0; l < space.num_slots(); ++l) {
        std::vector<double> p(space.slot_sizes[l], 0.0);
        p[slate.sub_actions[l]] = 1.0;
        probs.push_back(std::move(p));
    }
    return TablePolicy(space, std::move(probs));
}

TablePolicy TablePolicy::uniform(const SlateSpace& space) {
    std::vector<std::vector<double>> probs;
    probs.reserve(space.num_slots());
    for (int l = 0; l < space.num_slots(); ++l) {
        probs.emplace_back(space.slot_sizes[l], 1.0 / space.slot_sizes[l]);
    }
    return TablePolicy(space, std::move(probs));
}

double slate_prob(const FactoredPolicy& policy, const Context& x, const Slate& s) {
    validate_slate(policy.space(), s);
    double p = 1.0;
    for (int l = 0; l < s.size(); ++l) {
        p *= policy.slot_probs(x, l)[s.sub_actions[l]];
    }
    return p;
}

Slate sample_slate(const FactoredPolicy& policy, const Context& x, Rng& rng) {
    const auto& space = policy.space();
    std::vector<int> actions(space.num_slots());
    for (int l = 0; l < space.num_slots(); ++l) {
        actions[l] = rng.categorical(policy.slot_probs(x, l));
    }
    return Slate(std::move(actions));
}

Slate sample_slate_from_probs(const std::vector<std::vector<double>>& slot_probs, Rng& rng) {
    std::vector<int> actions(slot_probs.size());
    for (size_t l = 0; l < slot_probs.size(); ++l) {
        actions[l] = rng.categorical(slot_probs[l]);
    }
    return Slate(std::move(actions));
}

void for_each_slate(const SlateSpace& space, const std::function<void(const Slate&)>& fn,
                    uint64_t cap) {
    const uint64_t count = space.slate_count();
    if (count > cap) {
        throw EnumerationError("slate enumeration infeasible: " + std::to_string(count) +
                               " slates exceeds cap " + std::to_string(cap));
    }
    Slate s(std::vector<int>(space.num_slots(), 0));
    const int L = space.num_slots();
    for (uint64_t i = 0; i < count; ++i) {
        fn(s);
        for (int l = L - 1; l >= 0; --l) {
            if (++s.sub_actions[l] < space.slot_sizes[l]) break;
            s.sub_actions[l] = 0;
        }
    }
}

std::vector<Slate> enumerate_slates(const SlateSpace& space, uint64_t cap) {
    std::vector<Slate> out;
    out.reserve(space.slate_count() > cap ? 0 : space.slate_count());
    for_each_slate(space, [&](const Slate& s) { out.push_back(s); }, cap);
    return out;
}

uint64_t slate_rank(const SlateSpace& space, const Slate& s) {
    validate_slate(space, s);
    uint64_t rank = 0;
    for (int l = 0; l < s.size(); ++l) {
        rank = rank * static_cast<uint64_t>(space.slot_sizes[l]) +
               static_cast<uint64_t>(s.sub_actions[l]);
    }
    return rank;
}

void LoggedDataset::validate() const {
    if (records.empty()) {
        throw std::invalid_argument("LoggedDataset: no records");
    }
    const int L = space.num_slots();
    const int d = records.front().x.dim();
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        const std::string where = "record " + std::to_string(i);
        validate_slate(space, rec.s);
        if (rec.x.dim() != d) {
            throw std::invalid_argument(where + ": context dim mismatch");
        }
        if (!(rec.pscore > 0.0) || rec.pscore > 1.0 + 1e-12 || !std::isfinite(rec.pscore)) {
            throw std::invalid_argument(where + ": pscore must lie in (0, 1]");
        }
        if (static_cast<int>(rec.pscore_slot.size()) != L) {
            throw std::invalid_argument(where + ": pscore_slot length mismatch");
        }
        double prod = 1.0;
        for (double p : rec.pscore_slot) {
            if (!(p > 0.0) || p > 1.0 + 1e-12 || !std::isfinite(p)) {
                throw std::invalid_argument(where + ": slot pscores must lie in (0, 1]");
            }
            prod *= p;
        }
        if (std::abs(prod - rec.pscore) > 1e-9 * std::max(1.0, std::abs(rec.pscore))) {
            throw std::invalid_argument(where +
                                        ": pscore does not match product of slot pscores");
        }
        if (!std::isfinite(rec.r)) {
            throw std::invalid_argument(where + ": reward must be finite");
        }
    }
}

void save_jsonl(const LoggedDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    for (const auto& rec : data.records) {
        json line;
        line["x"] = rec.x.features;
        line["s"] = rec.s.sub_actions;
        line["r"] = rec.r;
        line["pscore"] = rec.pscore;
        line["pscore_slot"] = rec.pscore_slot;
        out << line.dump() << '\n';
    }
    if (!out) {
        throw std::runtime_error("write failed: " + path);
    }
}

LoggedDataset load_jsonl(const std::string& path, std::optional<SlateSpace> space) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open for reading: " + path);
    }
    LoggedDataset data;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": malformed JSON: " + e.what());
        }
        LoggedRecord rec;
        try {
            rec.x.features = obj.at("x").get<std::vector<double>>();
            rec.s.sub_actions = obj.at("s").get<std::vector<int>>();
            rec.r = obj.at("r").get<double>();
            rec.pscore = obj.at("pscore").get<double>();
            rec.pscore_slot = obj.at("pscore_slot").get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": missing or mistyped field: " + e.what());
        }
        data.records.push_back(std::move(rec));
    }
    if (data.records.empty()) {
        throw std::runtime_error(path + ": no records");
    }
    if (space.has_value()) {
        data.space = std::move(*space);
    } else {
        const int L = data.records.front().s.size();
        std::vector<int> sizes(L, 1);
        for (const auto& rec : data.records) {
            if (rec.s.size() != L) {
                throw std::runtime_error(path + ": inconsistent slate lengths");
            }
            for (int l = 0; l < L; ++l) {
                sizes[l] = std::max(sizes[l], rec.s.sub_actions[l] + 1);
            }
        }
        data.space = SlateSpace(std::move(sizes));
    }
    data.validate();
    return data;
}

std::vector<double> RewardFn::expected_reward_batch(const Context& x,
                                                    std::span<const Slate> slates) const {
    std::vector<double> out;
    out.reserve(slates.size());
    for (const Slate& s : slates) out.push_back(expected_reward(x, s));
    return out;
}

ValueEstimate true_value_exact(const RewardFn& reward, const FactoredPolicy& policy,
                               std::span<const WeightedContext> contexts, uint64_t cap) {
    if (contexts.empty()) {
        throw std::invalid_argument("true_value_exact: no contexts");
    }
    double total_weight = 0.0;
    for (const auto& wc : contexts) total_weight += wc.weight;
    if (!(total_weight > 0.0)) {
        throw std::invalid_argument("true_value_exact: context weights must sum > 0");
    }
    double value = 0.0;
    for (const auto& wc : contexts) {
        double vx = 0.0;
        for_each_slate(policy.space(), [&](const Slate& s) {
            const double p = slate_prob(policy, wc.x, s);
            if (p > 0.0) vx += p * reward.expected_reward(wc.x, s);
        }, cap);
        value += wc.weight * vx;
    }
    return ValueEstimate{value / total_weight, "exact", std::nullopt};
}

ValueEstimate true_value_mc(const RewardFn& reward, const FactoredPolicy& policy,
                            const ContextDist& contexts, int n_mc, Rng& rng) {
    if (n_mc < 2) {
        throw std::invalid_argument("true_value_mc: need at least 2 samples");
    }
    double sum = 0.0;
    double sum_sq = 0.0;
    for (int i = 0; i < n_mc; ++i) {
        const Context x = contexts.sample(rng);
        const Slate s = sample_slate(policy, x, rng);
        const double q = reward.expected_reward(x, s);
        sum += q;
        sum_sq += q * q;
    }
    const double mean = sum / n_mc;
    const double var = std::max(0.0, (sum_sq - n_mc * mean * mean) / (n_mc - 1));
    return ValueEstimate{mean, "mc", std::sqrt(var / n_mc)};
}

}  // namespace slateope
