#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "slateope/rng.hpp"

namespace slateope {

struct EnumerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SupportViolationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr uint64_t kDefaultEnumerationCap = 1'000'000;

// Per-slot action sets A_1 .. A_L; actions are dense indices 0..|A_l|-1.
struct SlateSpace {
    std::vector<int> slot_sizes;

    SlateSpace() = default;
    explicit SlateSpace(std::vector<int> sizes);

    int num_slots() const { return static_cast<int>(slot_sizes.size()); }

    // Total number of slates, overflow-checked (error above 2^62).
    uint64_t slate_count() const;

    bool operator==(const SlateSpace&) const = default;
};

// One sub-action per slot.
struct Slate {
    std::vector<int> sub_actions;

    Slate() = default;
    explicit Slate(std::vector<int> actions) : sub_actions(std::move(actions)) {}

    int size() const { return static_cast<int>(sub_actions.size()); }
    bool operator==(const Slate&) const = default;
};

struct Context {
    std::vector<double> features;

    Context() = default;
    explicit Context(std::vector<double> f) : features(std::move(f)) {}

    int dim() const { return static_cast<int>(features.size()); }
};

void validate_slate(const SlateSpace& space, const Slate& s);

// Factored policy: pi(s|x) = prod_l pi(a_l|x). Implementations are immutable
// after construction and safe to share read-only across workers.
class FactoredPolicy {
public:
    virtual ~FactoredPolicy() = default;
    virtual const SlateSpace& space() const = 0;
    // Probability vector over A_l; non-negative, sums to 1 (+-1e-9).
    virtual std::vector<double> slot_probs(const Context& x, int slot) const = 0;
};

// Context-independent per-slot probability tables. The workhorse for tests
// and the exact-enumeration instances.
class TablePolicy : public FactoredPolicy {
public:
    TablePolicy(SlateSpace space, std::vector<std::vector<double>> probs);

    const SlateSpace& space() const override { return space_; }
    std::vector<double> slot_probs(const Context&, int slot) const override {
        return probs_.at(slot);
    }

    // One-hot policy selecting `slate` deterministically.
    static TablePolicy deterministic(const SlateSpace& space, const Slate& slate);
    static TablePolicy uniform(const SlateSpace& space);

private:
    SlateSpace space_;
    std::vector<std::vector<double>> probs_;
};

double slate_prob(const FactoredPolicy& policy, const Context& x, const Slate& s);

Slate sample_slate(const FactoredPolicy& policy, const Context& x, Rng& rng);

// Draws a slate given precomputed slot probability vectors (hot path).
Slate sample_slate_from_probs(const std::vector<std::vector<double>>& slot_probs, Rng& rng);

// All slates in lexicographic order. Throws EnumerationError above the cap.
std::vector<Slate> enumerate_slates(const SlateSpace& space,
                                    uint64_t cap = kDefaultEnumerationCap);

// Visits slates in lexicographic order without materializing the list.
void for_each_slate(const SlateSpace& space, const std::function<void(const Slate&)>& fn,
                    uint64_t cap = kDefaultEnumerationCap);

// Lexicographic rank of a slate (row-major over slots).
uint64_t slate_rank(const SlateSpace& space, const Slate& s);

struct LoggedRecord {
    Context x;
    Slate s;
    double r = 0.0;
    double pscore = 0.0;                 // logging propensity pi_0(s|x)
    std::vector<double> pscore_slot;     // per-slot propensities pi_0(a_l|x)
};

struct LoggedDataset {
    SlateSpace space;
    std::vector<LoggedRecord> records;

    size_t size() const { return records.size(); }
    void validate() const;
};

// Line-delimited JSON: one record per line with fields
//   x (float array), s (int array), r (float), pscore (float),
//   pscore_slot (float array).
void save_jsonl(const LoggedDataset& data, const std::string& path);

// When `space` is absent, slot sizes are inferred as max observed index + 1.
LoggedDataset load_jsonl(const std::string& path,
                         std::optional<SlateSpace> space = std::nullopt);

struct ValueEstimate {
    double value = 0.0;
    std::string method;
    std::optional<double> std_error;
};

// Expected-reward function q(x, s).
class RewardFn {
public:
    virtual ~RewardFn() = default;
    virtual double expected_reward(const Context& x, const Slate& s) const = 0;
    // Batched evaluation at a shared context; the default loops, model-backed
    // implementations override with one forward pass.
    virtual std::vector<double> expected_reward_batch(const Context& x,
                                                      std::span<const Slate> slates) const;
};

class ContextDist {
public:
    virtual ~ContextDist() = default;
    virtual Context sample(Rng& rng) const = 0;
};

struct WeightedContext {
    Context x;
    double weight = 1.0;
};

// V(pi) = sum_x p(x) sum_s pi(s|x) q(x,s), exact over an enumerable slate
// space and a provided weighted context set.
ValueEstimate true_value_exact(const RewardFn& reward, const FactoredPolicy& policy,
                               std::span<const WeightedContext> contexts,
                               uint64_t cap = kDefaultEnumerationCap);

// Monte-Carlo V(pi) over fresh draws (x, s ~ pi); reports a standard error.
ValueEstimate true_value_mc(const RewardFn& reward, const FactoredPolicy& policy,
                            const ContextDist& contexts, int n_mc, Rng& rng);

}  // namespace slateope
