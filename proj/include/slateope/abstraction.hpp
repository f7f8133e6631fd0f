#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slateope/core.hpp"
#include "slateope/neural.hpp"
#include "slateope/rng.hpp"

namespace slateope {

enum class MarginalMode { exact, mc };

// Stochastic slate abstraction p(z|x,s) over a discrete latent space.
// Implementations are immutable once built.
class SlateAbstraction {
public:
    virtual ~SlateAbstraction() = default;
    virtual const SlateSpace& space() const = 0;
    virtual int latent_size() const = 0;
    virtual bool is_deterministic() const { return false; }

    // p(z|x,s) for all z; non-negative, sums to 1.
    virtual std::vector<double> encode(const Context& x, const Slate& s) const = 0;

    // Latent marginal p(z|x; policy) for all z. Exact mode enumerates the
    // slate space (subject to `cap`); MC mode averages encode() over
    // `mc_samples` slates drawn from the policy using `rng`.
    virtual std::vector<double> marginal(const FactoredPolicy& policy, const Context& x,
                                         MarginalMode mode, int mc_samples, Rng* rng,
                                         uint64_t cap = kDefaultEnumerationCap) const;

    // Single-z marginal; overridden where a cheaper path exists.
    virtual double marginal_of(const FactoredPolicy& policy, const Context& x, int z,
                               MarginalMode mode, int mc_samples, Rng* rng,
                               uint64_t cap = kDefaultEnumerationCap) const;

    int sample_z(const Context& x, const Slate& s, Rng& rng) const;
};

// Latent importance weight p(z|x;target) / p(z|x;logging) with a floored
// denominator. In MC mode both marginals consume identical random draws
// (common random numbers), so identical policies give a weight of exactly 1.
// Weights above `sanity_cap` after flooring set *flagged.
double latent_weight(const SlateAbstraction& abstraction, const FactoredPolicy& target,
                     const FactoredPolicy& logging, const Context& x, int z,
                     MarginalMode mode, int mc_samples, double floor, Rng* rng,
                     double sanity_cap = 1e6, bool* flagged = nullptr,
                     uint64_t cap = kDefaultEnumerationCap);

// Context-independent table p(z|s), one row per slate in lexicographic rank
// order. The workhorse for exact-enumeration checks.
class TableAbstraction : public SlateAbstraction {
public:
    TableAbstraction(SlateSpace space, Matrix table);

    const SlateSpace& space() const override { return space_; }
    int latent_size() const override { return static_cast<int>(table_.cols); }
    bool is_deterministic() const override { return deterministic_; }
    std::vector<double> encode(const Context& x, const Slate& s) const override;

    static TableAbstraction random(const SlateSpace& space, int latent_size, Rng& rng);

private:
    SlateSpace space_;
    Matrix table_;
    bool deterministic_ = false;
};

// Deterministic grouping z = group(s) given an arbitrary function.
class GroupingAbstraction : public SlateAbstraction {
public:
    GroupingAbstraction(SlateSpace space, int num_groups,
                        std::function<int(const Slate&)> group);

    const SlateSpace& space() const override { return space_; }
    int latent_size() const override { return num_groups_; }
    bool is_deterministic() const override { return true; }
    std::vector<double> encode(const Context& x, const Slate& s) const override;
    int group_of(const Slate& s) const { return group_(s); }

    static GroupingAbstraction single_bucket(const SlateSpace& space);

private:
    SlateSpace space_;
    int num_groups_;
    std::function<int(const Slate&)> group_;
};

// Deterministic projection onto the first `k` slots; z is the lexicographic
// rank of the prefix. For factored policies its marginal is the product of
// the prefix slot probabilities, so both modes return the exact value.
class PrefixAbstraction : public SlateAbstraction {
public:
    PrefixAbstraction(SlateSpace space, int prefix_len);

    const SlateSpace& space() const override { return space_; }
    int latent_size() const override { return static_cast<int>(latent_size_); }
    bool is_deterministic() const override { return true; }
    std::vector<double> encode(const Context& x, const Slate& s) const override;
    std::vector<double> marginal(const FactoredPolicy& policy, const Context& x,
                                 MarginalMode mode, int mc_samples, Rng* rng,
                                 uint64_t cap = kDefaultEnumerationCap) const override;
    double marginal_of(const FactoredPolicy& policy, const Context& x, int z,
                       MarginalMode mode, int mc_samples, Rng* rng,
                       uint64_t cap = kDefaultEnumerationCap) const override;

    int prefix_len() const { return prefix_len_; }
    int rank_of(const Slate& s) const;
    std::vector<int> unrank(int z) const;

    static PrefixAbstraction identity(const SlateSpace& space);

private:
    SlateSpace space_;
    int prefix_len_;
    uint64_t latent_size_;
};

struct TrainConfig {
    int latent_size = 100;
    int hidden = 100;
    double phase1_beta = 0.01;
    std::vector<double> betas = {0.01, 0.1, 1.0, 10.0};
    int phase1_steps = 1000;     // gradient steps, one minibatch each
    int finetune_steps = 500;
    double lr = 1e-5;
    double reward_scale = 100.0;
    int batch_size = 256;
    double temperature = 1.0;
    bool literal_signs = false;  // use the verbatim objective sign on the reward term
    int mc_samples = 1000;       // M for latent-marginal MC
    double marginal_floor = 1e-8;

    void validate() const;
};

// Encoder p(z|x,s), decoder p(s|x,z) (per-slot categorical heads), and
// reward head q(x,z).
struct AbstractionModel {
    SlateSpace space;
    int context_dim = 0;
    int latent_size = 0;
    double temperature = 1.0;
    Mlp encoder;  // context ++ slate one-hots -> log p(z|x,s)
    Mlp decoder;  // context ++ z one-hot -> per-slot logits (identity head)
    Mlp reward;   // context ++ z one-hot -> scalar
    // Training provenance, recorded in the serialized manifest.
    double beta = 0.0;
    uint64_t seed = 0;
    bool literal_signs = false;

    AbstractionModel(SlateSpace space, int context_dim, int latent_size, double temperature,
                     Mlp encoder, Mlp decoder, Mlp reward);

    static AbstractionModel init(const SlateSpace& space, int context_dim,
                                 const TrainConfig& config, uint64_t seed);

    std::vector<double> encode(const Context& x, const Slate& s) const;
};

struct ZSample {
    int z = 0;                    // Gumbel-max draw, an exact categorical sample
    std::vector<double> relaxed;  // tempered softmax over the same perturbed logits
};

ZSample sample_z_relaxed(const AbstractionModel& model, const Context& x, const Slate& s,
                         Rng& rng);

enum class SampleMode {
    straight_through,  // hard one-hot forward, relaxed gradients
    relaxed            // relaxed vector forward: exactly differentiable at fixed noise
};

struct AbstractionLosses {
    double recon = 0.0;       // mean log-likelihood of the logged slate under the decoder
    double reward_err = 0.0;  // scaled mean squared reward error
    double kl = 0.0;          // mean (log p(z|x,s) - log(1/|Z|)) at the sampled z
    double objective = 0.0;   // minimized by the encoder/decoder update
};

// Pre-featurized minibatch.
struct AbstractionBatch {
    Matrix enc_in;                              // B x (d + sum |A_l|)
    std::vector<std::vector<int>> slot_labels;  // [L][B]
    std::vector<double> rewards;                // B

    size_t size() const { return rewards.size(); }
};

AbstractionBatch make_batch(const AbstractionModel& model, const LoggedDataset& data,
                            std::span<const int> indices);

// One differentiable evaluation of the Algorithm-style objective at fixed
// Gumbel noise (one row per batch element). Gradient outputs are optional;
// reward-head gradients always descend the reward loss while the encoder
// and decoder gradients descend `objective`.
AbstractionLosses abstraction_losses(const AbstractionModel& model,
                                     const AbstractionBatch& batch, double beta,
                                     double reward_scale, bool literal_signs,
                                     SampleMode mode, const Matrix& gumbel,
                                     MlpGrads* enc_grads = nullptr,
                                     MlpGrads* dec_grads = nullptr,
                                     MlpGrads* rew_grads = nullptr);

// Convenience wrapper sampling fresh Gumbel noise from `rng`.
AbstractionLosses loss_components(const AbstractionModel& model, const LoggedDataset& data,
                                  std::span<const int> indices, double beta,
                                  double reward_scale, bool literal_signs, Rng& rng);

struct AbstractionTrainReport {
    std::vector<AbstractionLosses> curve;
};

AbstractionModel train_phase1(const LoggedDataset& data, const TrainConfig& config,
                              uint64_t seed, AbstractionTrainReport* report = nullptr);

AbstractionModel fine_tune(AbstractionModel start, const LoggedDataset& data,
                           const TrainConfig& config, double beta, uint64_t seed,
                           AbstractionTrainReport* report = nullptr);

// Phase-1 schedule followed by a fine-tune at `beta`.
AbstractionModel train_abstraction(const LoggedDataset& data, const TrainConfig& config,
                                   double beta, uint64_t seed,
                                   AbstractionTrainReport* report = nullptr);

// Frozen learned abstraction; batches encoder evaluations for marginals.
class MlpAbstraction : public SlateAbstraction {
public:
    explicit MlpAbstraction(std::shared_ptr<const AbstractionModel> model);

    const SlateSpace& space() const override { return model_->space; }
    int latent_size() const override { return model_->latent_size; }
    std::vector<double> encode(const Context& x, const Slate& s) const override;
    std::vector<double> marginal(const FactoredPolicy& policy, const Context& x,
                                 MarginalMode mode, int mc_samples, Rng* rng,
                                 uint64_t cap = kDefaultEnumerationCap) const override;

    const AbstractionModel& model() const { return *model_; }

private:
    std::shared_ptr<const AbstractionModel> model_;
};

// Serialization: <prefix>.manifest.json plus encoder/decoder/reward
// checkpoints in the flat binary format of the network module.
void save_abstraction(const AbstractionModel& model, const std::string& prefix);
AbstractionModel load_abstraction(const std::string& prefix);

}  // namespace slateope
