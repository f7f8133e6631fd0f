#include "slateope/abstraction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace slateope {

using json = nlohmann::json;

namespace {

std::vector<std::vector<double>> all_slot_probs(const FactoredPolicy& policy,
                                                const Context& x) {
    const int L = policy.space().num_slots();
    std::vector<std::vector<double>> probs(L);
    for (int l = 0; l < L; ++l) probs[l] = policy.slot_probs(x, l);
    return probs;
}

double product_prob(const std::vector<std::vector<double>>& slot_probs, const Slate& s) {
    double p = 1.0;
    for (size_t l = 0; l < slot_probs.size(); ++l) p *= slot_probs[l][s.sub_actions[l]];
    return p;
}

}  // namespace

std::vector<double> SlateAbstraction::marginal(const FactoredPolicy& policy,
                                               const Context& x, MarginalMode mode,
                                               int mc_samples, Rng* rng,
                                               uint64_t cap) const {
    std::vector<double> out(latent_size(), 0.0);
    if (mode == MarginalMode::exact) {
        const auto probs = all_slot_probs(policy, x);
        double mass = 0.0;
        for_each_slate(space(), [&](const Slate& s) {
            const double p = product_prob(probs, s);
            mass += p;
            if (p == 0.0) return;
            const auto enc = encode(x, s);
            for (size_t z = 0; z < out.size(); ++z) out[z] += p * enc[z];
        }, cap);
        if (!(mass > 0.0)) {
            throw std::invalid_argument(
                "SlateAbstraction::marginal: policy has no mass on the slate space");
        }
        // Normalize away the accumulated rounding of the policy's own slate
        // probabilities so a one-latent abstraction gets a marginal of exactly 1.
        for (double& v : out) v /= mass;
        return out;
    }
    if (rng == nullptr) {
        throw std::invalid_argument("SlateAbstraction::marginal: MC mode needs an rng");
    }
    if (mc_samples < 1) {
        throw std::invalid_argument("SlateAbstraction::marginal: mc_samples must be >= 1");
    }
    const auto probs = all_slot_probs(policy, x);
    for (int m = 0; m < mc_samples; ++m) {
        const Slate s = sample_slate_from_probs(probs, *rng);
        const auto enc = encode(x, s);
        for (size_t z = 0; z < out.size(); ++z) out[z] += enc[z];
    }
    for (double& v : out) v /= mc_samples;
    return out;
}

double SlateAbstraction::marginal_of(const FactoredPolicy& policy, const Context& x, int z,
                                     MarginalMode mode, int mc_samples, Rng* rng,
                                     uint64_t cap) const {
    if (z < 0 || z >= latent_size()) {
        throw std::invalid_argument("SlateAbstraction::marginal_of: z out of range");
    }
    return marginal(policy, x, mode, mc_samples, rng, cap)[z];
}

int SlateAbstraction::sample_z(const Context& x, const Slate& s, Rng& rng) const {
    return rng.categorical(encode(x, s));
}

double latent_weight(const SlateAbstraction& abstraction, const FactoredPolicy& target,
                     const FactoredPolicy& logging, const Context& x, int z,
                     MarginalMode mode, int mc_samples, double floor, Rng* rng,
                     double sanity_cap, bool* flagged, uint64_t cap) {
    double num, den;
    if (mode == MarginalMode::exact) {
        num = abstraction.marginal_of(target, x, z, mode, mc_samples, nullptr, cap);
        den = abstraction.marginal_of(logging, x, z, mode, mc_samples, nullptr, cap);
    } else {
        if (rng == nullptr) {
            throw std::invalid_argument("latent_weight: MC mode needs an rng");
        }
        // Common random numbers: both marginals consume identical streams.
        const uint64_t crn_seed = rng->next_u64();
        Rng num_rng(crn_seed), den_rng(crn_seed);
        num = abstraction.marginal_of(target, x, z, mode, mc_samples, &num_rng, cap);
        den = abstraction.marginal_of(logging, x, z, mode, mc_samples, &den_rng, cap);
    }
    const double floored = std::max(den, floor);
    if (!(floored > 0.0)) {
        throw std::runtime_error("latent_weight: non-positive denominator after flooring");
    }
    const double w = num / floored;
    if (flagged != nullptr) *flagged = w > sanity_cap;
    return w;
}

TableAbstraction::TableAbstraction(SlateSpace space, Matrix table)
    : space_(std::move(space)), table_(std::move(table)) {
    if (table_.rows != space_.slate_count()) {
        throw std::invalid_argument("TableAbstraction: one row per slate required");
    }
    if (table_.cols < 1) {
        throw std::invalid_argument("TableAbstraction: need at least one latent value");
    }
    deterministic_ = true;
    for (size_t i = 0; i < table_.rows; ++i) {
        double total = 0.0;
        bool one_hot = false;
        for (size_t z = 0; z < table_.cols; ++z) {
            const double p = table_(i, z);
            if (p < 0.0 || !std::isfinite(p)) {
                throw std::invalid_argument("TableAbstraction: invalid probability");
            }
            if (p == 1.0) one_hot = true;
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) {
            throw std::invalid_argument("TableAbstraction: row does not sum to 1");
        }
        if (!one_hot) deterministic_ = false;
    }
}

std::vector<double> TableAbstraction::encode(const Context&, const Slate& s) const {
    const uint64_t rank = slate_rank(space_, s);
    const double* row = table_.row(rank);
    return std::vector<double>(row, row + table_.cols);
}

TableAbstraction TableAbstraction::random(const SlateSpace& space, int latent_size,
                                          Rng& rng) {
    Matrix table(space.slate_count(), latent_size);
    for (size_t i = 0; i < table.rows; ++i) {
        double total = 0.0;
        for (int z = 0; z < latent_size; ++z) {
            table(i, z) = -std::log(1.0 - rng.uniform());  // Exp(1) -> Dirichlet(1,..,1)
            total += table(i, z);
        }
        for (int z = 0; z < latent_size; ++z) table(i, z) /= total;
    }
    return TableAbstraction(space, std::move(table));
}

GroupingAbstraction::GroupingAbstraction(SlateSpace space, int num_groups,
                                         std::function<int(const Slate&)> group)
    : space_(std::move(space)), num_groups_(num_groups), group_(std::move(group)) {
    if (num_groups_ < 1) {
        throw std::invalid_argument("GroupingAbstraction: need at least one group");
    }
}

std::vector<double> GroupingAbstraction::encode(const Context&, const Slate& s) const {
    const int z = group_(s);
    if (z < 0 || z >= num_groups_) {
        throw std::runtime_error("GroupingAbstraction: group function out of range");
    }
    std::vector<double> out(num_groups_, 0.0);
    out[z] = 1.0;
    return out;
}

GroupingAbstraction GroupingAbstraction::single_bucket(const SlateSpace& space) {
    return GroupingAbstraction(space, 1, [](const Slate&) { return 0; });
}

PrefixAbstraction::PrefixAbstraction(SlateSpace space, int prefix_len)
    : space_(std::move(space)), prefix_len_(prefix_len) {
    if (prefix_len_ < 1 || prefix_len_ > space_.num_slots()) {
        throw std::invalid_argument("PrefixAbstraction: prefix length out of range");
    }
    latent_size_ = 1;
    for (int l = 0; l < prefix_len_; ++l) {
        latent_size_ *= static_cast<uint64_t>(space_.slot_sizes[l]);
        if (latent_size_ > uint64_t{1} << 31) {
            throw std::invalid_argument("PrefixAbstraction: latent space too large");
        }
    }
}

int PrefixAbstraction::rank_of(const Slate& s) const {
    validate_slate(space_, s);
    uint64_t rank = 0;
    for (int l = 0; l < prefix_len_; ++l) {
        rank = rank * static_cast<uint64_t>(space_.slot_sizes[l]) +
               static_cast<uint64_t>(s.sub_actions[l]);
    }
    return static_cast<int>(rank);
}

std::vector<int> PrefixAbstraction::unrank(int z) const {
    if (z < 0 || static_cast<uint64_t>(z) >= latent_size_) {
        throw std::invalid_argument("PrefixAbstraction: z out of range");
    }
    std::vector<int> prefix(prefix_len_);
    uint64_t rest = static_cast<uint64_t>(z);
    for (int l = prefix_len_ - 1; l >= 0; --l) {
        const auto k = static_cast<uint64_t>(space_.slot_sizes[l]);
        prefix[l] = static_cast<int>(rest % k);
        rest /= k;
    }
    return prefix;
}

std::vector<double> PrefixAbstraction::encode(const Context&, const Slate& s) const {
    std::vector<double> out(latent_size_, 0.0);
    out[rank_of(s)] = 1.0;
    return out;
}

std::vector<double> PrefixAbstraction::marginal(const FactoredPolicy& policy,
                                                const Context& x, MarginalMode, int,
                                                Rng*, uint64_t cap) const {
    // Factored policies make the prefix marginal an exact product; both modes
    // use it.
    if (latent_size_ > cap) {
        throw EnumerationError("PrefixAbstraction: latent space exceeds cap");
    }
    std::vector<double> out = {1.0};
    for (int l = 0; l < prefix_len_; ++l) {
        const auto probs = policy.slot_probs(x, l);
        std::vector<double> next(out.size() * probs.size());
        size_t k = 0;
        for (double base : out) {
            for (double p : probs) next[k++] = base * p;
        }
        out = std::move(next);
    }
    return out;
}

double PrefixAbstraction::marginal_of(const FactoredPolicy& policy, const Context& x,
                                      int z, MarginalMode, int, Rng*, uint64_t) const {
    const auto prefix = unrank(z);
    double p = 1.0;
    for (int l = 0; l < prefix_len_; ++l) {
        p *= policy.slot_probs(x, l)[prefix[l]];
    }
    return p;
}

PrefixAbstraction PrefixAbstraction::identity(const SlateSpace& space) {
    return PrefixAbstraction(space, space.num_slots());
}

void TrainConfig::validate() const {
    if (latent_size < 1) throw std::invalid_argument("TrainConfig: latent_size must be >= 1");
    if (hidden < 1) throw std::invalid_argument("TrainConfig: hidden must be >= 1");
    if (phase1_beta < 0.0) throw std::invalid_argument("TrainConfig: phase1_beta must be >= 0");
    for (double b : betas) {
        if (b < 0.0) throw std::invalid_argument("TrainConfig: betas must be >= 0");
    }
    if (phase1_steps < 0 || finetune_steps < 0) {
        throw std::invalid_argument("TrainConfig: step counts must be >= 0");
    }
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (!(reward_scale > 0.0)) {
        throw std::invalid_argument("TrainConfig: reward_scale must be > 0");
    }
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("TrainConfig: temperature must be > 0");
    }
    if (mc_samples < 1) throw std::invalid_argument("TrainConfig: mc_samples must be >= 1");
    if (!(marginal_floor > 0.0)) {
        throw std::invalid_argument("TrainConfig: marginal_floor must be > 0");
    }
}

AbstractionModel::AbstractionModel(SlateSpace space_in, int context_dim_in,
                                   int latent_size_in, double temperature_in, Mlp encoder_in,
                                   Mlp decoder_in, Mlp reward_in)
    : space(std::move(space_in)),
      context_dim(context_dim_in),
      latent_size(latent_size_in),
      temperature(temperature_in),
      encoder(std::move(encoder_in)),
      decoder(std::move(decoder_in)),
      reward(std::move(reward_in)) {
    int sum_actions = 0;
    for (int k : space.slot_sizes) sum_actions += k;
    if (encoder.input_dim() != context_dim + sum_actions ||
        encoder.output_dim() != latent_size || encoder.head() != Head::log_softmax) {
        throw std::invalid_argument("AbstractionModel: encoder shape mismatch");
    }
    if (decoder.input_dim() != context_dim + latent_size ||
        decoder.output_dim() != sum_actions || decoder.head() != Head::identity) {
        throw std::invalid_argument("AbstractionModel: decoder shape mismatch");
    }
    if (reward.input_dim() != context_dim + latent_size || reward.output_dim() != 1 ||
        reward.head() != Head::identity) {
        throw std::invalid_argument("AbstractionModel: reward head shape mismatch");
    }
}

AbstractionModel AbstractionModel::init(const SlateSpace& space, int context_dim,
                                        const TrainConfig& config, uint64_t seed) {
    config.validate();
    int sum_actions = 0;
    for (int k : space.slot_sizes) sum_actions += k;
    Rng enc_rng = substream(seed, "abst-enc-init");
    Rng dec_rng = substream(seed, "abst-dec-init");
    Rng rew_rng = substream(seed, "abst-rew-init");
    Mlp enc(context_dim + sum_actions, config.hidden, config.latent_size,
            Head::log_softmax, enc_rng);
    Mlp dec(context_dim + config.latent_size, config.hidden, sum_actions, Head::identity,
            dec_rng);
    Mlp rew(context_dim + config.latent_size, config.hidden, 1, Head::identity, rew_rng);
    AbstractionModel model(space, context_dim, config.latent_size, config.temperature,
                           std::move(enc), std::move(dec), std::move(rew));
    model.seed = seed;
    model.literal_signs = config.literal_signs;
    return model;
}

std::vector<double> AbstractionModel::encode(const Context& x, const Slate& s) const {
    std::vector<double> row(encoder.input_dim());
    featurize_slate(space, x, s, row);
    auto logp = encoder.forward_row(row);
    for (double& v : logp) v = std::exp(v);
    return logp;
}

ZSample sample_z_relaxed(const AbstractionModel& model, const Context& x, const Slate& s,
                         Rng& rng) {
    std::vector<double> row(model.encoder.input_dim());
    featurize_slate(model.space, x, s, row);
    const auto logp = model.encoder.forward_row(row);
    const int Z = model.latent_size;
    ZSample out;
    out.relaxed.resize(Z);
    std::vector<double> perturbed(Z);
    double best = -std::numeric_limits<double>::infinity();
    for (int z = 0; z < Z; ++z) {
        perturbed[z] = logp[z] + rng.gumbel();
        if (perturbed[z] > best) {
            best = perturbed[z];
            out.z = z;
        }
    }
    double total = 0.0;
    for (int z = 0; z < Z; ++z) {
        out.relaxed[z] = std::exp((perturbed[z] - best) / model.temperature);
        total += out.relaxed[z];
    }
    for (double& v : out.relaxed) v /= total;
    return out;
}

AbstractionBatch make_batch(const AbstractionModel& model, const LoggedDataset& data,
                            std::span<const int> indices) {
    if (indices.empty()) {
        throw std::invalid_argument("make_batch: empty batch");
    }
    const int L = model.space.num_slots();
    AbstractionBatch batch;
    batch.enc_in = Matrix(indices.size(), model.encoder.input_dim());
    batch.slot_labels.assign(L, std::vector<int>(indices.size()));
    batch.rewards.resize(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const auto& rec = data.records.at(indices[i]);
        featurize_slate(model.space, rec.x, rec.s,
                        std::span<double>(batch.enc_in.row(i), batch.enc_in.cols));
        for (int l = 0; l < L; ++l) batch.slot_labels[l][i] = rec.s.sub_actions[l];
        batch.rewards[i] = rec.r;
    }
    return batch;
}

AbstractionLosses abstraction_losses(const AbstractionModel& model,
                                     const AbstractionBatch& batch, double beta,
                                     double reward_scale, bool literal_signs,
                                     SampleMode mode, const Matrix& gumbel,
                                     MlpGrads* enc_grads, MlpGrads* dec_grads,
                                     MlpGrads* rew_grads) {
    const size_t B = batch.size();
    const int Z = model.latent_size;
    const int d = model.context_dim;
    const int L = model.space.num_slots();
    if (gumbel.rows != B || static_cast<int>(gumbel.cols) != Z) {
        throw std::invalid_argument("abstraction_losses: gumbel noise shape mismatch");
    }
    const double tau = model.temperature;
    const double reward_sign = literal_signs ? -1.0 : 1.0;

    // Encoder log-probabilities.
    MlpCache enc_cache;
    const Matrix logp = model.encoder.forward(batch.enc_in, &enc_cache);

    // Gumbel-max hard draw plus the relaxed softmax used for gradients.
    std::vector<int> z_star(B);
    Matrix relaxed(B, Z);
    for (size_t i = 0; i < B; ++i) {
        const double* lp = logp.row(i);
        const double* g = gumbel.row(i);
        double* y = relaxed.row(i);
        int best = 0;
        double best_v = -std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (int z = 0; z < Z; ++z) {
            const double perturbed = lp[z] + g[z];
            if (perturbed > best_v) {
                best_v = perturbed;
                best = z;
            }
            hi = std::max(hi, perturbed / tau);
        }
        z_star[i] = best;
        double total = 0.0;
        for (int z = 0; z < Z; ++z) {
            y[z] = std::exp((lp[z] + g[z]) / tau - hi);
            total += y[z];
        }
        for (int z = 0; z < Z; ++z) y[z] /= total;
    }

    // Decoder / reward-head input: context ++ latent vector.
    Matrix dec_in(B, d + Z);
    for (size_t i = 0; i < B; ++i) {
        const double* xin = batch.enc_in.row(i);
        double* row = dec_in.row(i);
        std::copy_n(xin, d, row);
        if (mode == SampleMode::straight_through) {
            std::fill(row + d, row + d + Z, 0.0);
            row[d + z_star[i]] = 1.0;
        } else {
            std::copy_n(relaxed.row(i), Z, row + d);
        }
    }

    MlpCache dec_cache;
    const Matrix dec_logits = model.decoder.forward(dec_in, &dec_cache);

    // Per-slot log-softmax blocks; L_b1 is the mean slate log-likelihood.
    double recon = 0.0;
    Matrix d_dec_logits(B, dec_logits.cols);
    size_t offset = 0;
    for (int l = 0; l < L; ++l) {
        const int k = model.space.slot_sizes[l];
        for (size_t i = 0; i < B; ++i) {
            const double* row = dec_logits.row(i) + offset;
            double hi = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < k; ++a) hi = std::max(hi, row[a]);
            double total = 0.0;
            for (int a = 0; a < k; ++a) total += std::exp(row[a] - hi);
            const double lse = hi + std::log(total);
            const int label = batch.slot_labels[l][i];
            recon += row[label] - lse;
            // d(-L_b1)/dlogit = (softmax - one_hot) / B.
            double* grad = d_dec_logits.row(i) + offset;
            for (int a = 0; a < k; ++a) {
                grad[a] = std::exp(row[a] - lse) / double(B);
            }
            grad[label] -= 1.0 / double(B);
        }
        offset += k;
    }
    recon /= double(B);

    MlpCache rew_cache;
    const Matrix q = model.reward.forward(dec_in, &rew_cache);
    double reward_err = 0.0;
    Matrix d_q(B, 1);
    for (size_t i = 0; i < B; ++i) {
        const double diff = q(i, 0) - batch.rewards[i];
        reward_err += diff * diff;
        d_q(i, 0) = reward_scale * 2.0 * diff / double(B);
    }
    reward_err = reward_scale * reward_err / double(B);

    // Prior-alignment term sum_z y_z (log p_z - log(1/Z)) evaluated at the
    // forward latent vector: the hard draw under straight-through, the
    // tempered softmax in relaxed mode.
    const double prior_log = -std::log(double(Z));
    double kl = 0.0;
    for (size_t i = 0; i < B; ++i) {
        if (mode == SampleMode::straight_through) {
            kl += logp(i, z_star[i]) - prior_log;
        } else {
            const double* y = relaxed.row(i);
            for (int z = 0; z < Z; ++z) kl += y[z] * (logp(i, z) - prior_log);
        }
    }
    kl /= double(B);

    AbstractionLosses losses;
    losses.recon = recon;
    losses.reward_err = reward_err;
    losses.kl = kl;
    losses.objective = -recon + reward_sign * reward_err + beta * kl;

    if (enc_grads == nullptr && dec_grads == nullptr && rew_grads == nullptr) {
        return losses;
    }
    if (enc_grads == nullptr || dec_grads == nullptr || rew_grads == nullptr) {
        throw std::invalid_argument("abstraction_losses: need all gradient outputs or none");
    }

    // Decoder gradients descend -L_b1; reward-head gradients descend L_b2.
    Matrix d_dec_in, d_rew_in;
    model.decoder.backward(dec_cache, d_dec_logits, *dec_grads, &d_dec_in);
    model.reward.backward(rew_cache, d_q, *rew_grads, &d_rew_in);

    // Objective gradient with respect to the latent vector fed downstream.
    // The prior term contributes its coefficient (log p_z - log(1/Z)) here:
    // the sampled latent carries gradient both into the decoder/reward heads
    // and into the prior term itself.
    Matrix d_latent(B, Z);
    for (size_t i = 0; i < B; ++i) {
        const double* gd = d_dec_in.row(i) + d;
        const double* gr = d_rew_in.row(i) + d;
        double* out = d_latent.row(i);
        for (int z = 0; z < Z; ++z) {
            out[z] = gd[z] + reward_sign * gr[z] +
                     beta * (logp(i, z) - prior_log) / double(B);
        }
    }

    // Chain through the relaxed softmax (the straight-through estimator uses
    // the same Jacobian), then add the prior term's direct dependence on
    // log p at the forward latent vector.
    Matrix d_logp(B, Z);
    for (size_t i = 0; i < B; ++i) {
        const double* y = relaxed.row(i);
        const double* g = d_latent.row(i);
        double inner = 0.0;
        for (int z = 0; z < Z; ++z) inner += g[z] * y[z];
        double* out = d_logp.row(i);
        for (int z = 0; z < Z; ++z) out[z] = y[z] * (g[z] - inner) / tau;
        if (mode == SampleMode::straight_through) {
            out[z_star[i]] += beta / double(B);
        } else {
            for (int z = 0; z < Z; ++z) out[z] += beta * y[z] / double(B);
        }
    }
    model.encoder.backward(enc_cache, d_logp, *enc_grads);
    return losses;
}

AbstractionLosses loss_components(const AbstractionModel& model, const LoggedDataset& data,
                                  std::span<const int> indices, double beta,
                                  double reward_scale, bool literal_signs, Rng& rng) {
    const AbstractionBatch batch = make_batch(model, data, indices);
    Matrix gumbel(batch.size(), model.latent_size);
    for (double& g : gumbel.data) g = rng.gumbel();
    return abstraction_losses(model, batch, beta, reward_scale, literal_signs,
                              SampleMode::straight_through, gumbel);
}

namespace {

void run_training(AbstractionModel& model, const LoggedDataset& data,
                  const TrainConfig& config, double beta, int steps, uint64_t seed,
                  AbstractionTrainReport* report) {
    const int n = static_cast<int>(data.size());
    if (n < config.batch_size) {
        throw std::invalid_argument("train_abstraction: dataset smaller than batch size");
    }
    const int B = config.batch_size;
    const int Z = model.latent_size;
    const int L = model.space.num_slots();

    // Featurize the dataset once; training gathers rows per step.
    Matrix features(n, model.encoder.input_dim());
    std::vector<std::vector<int>> labels(L, std::vector<int>(n));
    std::vector<double> rewards(n);
    for (int i = 0; i < n; ++i) {
        const auto& rec = data.records[i];
        featurize_slate(model.space, rec.x, rec.s,
                        std::span<double>(features.row(i), features.cols));
        for (int l = 0; l < L; ++l) labels[l][i] = rec.s.sub_actions[l];
        rewards[i] = rec.r;
    }

    Adam enc_opt(model.encoder.num_params(), config.lr);
    Adam dec_opt(model.decoder.num_params(), config.lr);
    Adam rew_opt(model.reward.num_params(), config.lr);
    MlpGrads enc_g = model.encoder.zero_grads();
    MlpGrads dec_g = model.decoder.zero_grads();
    MlpGrads rew_g = model.reward.zero_grads();

    Rng batch_rng = substream(seed, "abst-batch");
    Rng gumbel_rng = substream(seed, "abst-gumbel");

    AbstractionBatch batch;
    batch.enc_in = Matrix(B, model.encoder.input_dim());
    batch.slot_labels.assign(L, std::vector<int>(B));
    batch.rewards.resize(B);
    Matrix gumbel(B, Z);

    for (int t = 0; t < steps; ++t) {
        for (int b = 0; b < B; ++b) {
            const int idx = batch_rng.uniform_int(n);
            std::copy_n(features.row(idx), features.cols, batch.enc_in.row(b));
            for (int l = 0; l < L; ++l) batch.slot_labels[l][b] = labels[l][idx];
            batch.rewards[b] = rewards[idx];
        }
        for (double& g : gumbel.data) g = gumbel_rng.gumbel();

        const AbstractionLosses losses = abstraction_losses(
            model, batch, beta, config.reward_scale, config.literal_signs,
            SampleMode::straight_through, gumbel, &enc_g, &dec_g, &rew_g);
        if (!std::isfinite(losses.objective) || !std::isfinite(losses.reward_err)) {
            throw std::runtime_error("train_abstraction: non-finite loss at step " +
                                     std::to_string(t) + " (beta " + std::to_string(beta) +
                                     ")");
        }
        enc_opt.step(model.encoder.param_views(), enc_g.views());
        dec_opt.step(model.decoder.param_views(), dec_g.views());
        rew_opt.step(model.reward.param_views(), rew_g.views());
        model.encoder.check_finite("train_abstraction encoder");
        model.decoder.check_finite("train_abstraction decoder");
        model.reward.check_finite("train_abstraction reward head");
        if (report != nullptr) report->curve.push_back(losses);
    }
}

}  // namespace

AbstractionModel train_phase1(const LoggedDataset& data, const TrainConfig& config,
                              uint64_t seed, AbstractionTrainReport* report) {
    config.validate();
    const int context_dim = data.records.front().x.dim();
    AbstractionModel model = AbstractionModel::init(data.space, context_dim, config, seed);
    model.beta = config.phase1_beta;
    run_training(model, data, config, config.phase1_beta, config.phase1_steps,
                 derive_seed(seed, "phase1"), report);
    return model;
}

AbstractionModel fine_tune(AbstractionModel start, const LoggedDataset& data,
                           const TrainConfig& config, double beta, uint64_t seed,
                           AbstractionTrainReport* report) {
    config.validate();
    if (beta < 0.0) throw std::invalid_argument("fine_tune: beta must be >= 0");
    start.beta = beta;
    run_training(start, data, config, beta, config.finetune_steps, seed, report);
    return start;
}

AbstractionModel train_abstraction(const LoggedDataset& data, const TrainConfig& config,
                                   double beta, uint64_t seed,
                                   AbstractionTrainReport* report) {
    AbstractionModel model = train_phase1(data, config, seed, report);
    return fine_tune(std::move(model), data, config, beta, derive_seed(seed, "tune"),
                     report);
}

MlpAbstraction::MlpAbstraction(std::shared_ptr<const AbstractionModel> model)
    : model_(std::move(model)) {
    if (model_ == nullptr) {
        throw std::invalid_argument("MlpAbstraction: null model");
    }
}

std::vector<double> MlpAbstraction::encode(const Context& x, const Slate& s) const {
    return model_->encode(x, s);
}

std::vector<double> MlpAbstraction::marginal(const FactoredPolicy& policy, const Context& x,
                                             MarginalMode mode, int mc_samples, Rng* rng,
                                             uint64_t cap) const {
    const int Z = model_->latent_size;
    const int d_in = model_->encoder.input_dim();
    std::vector<double> out(Z, 0.0);
    constexpr size_t kChunk = 2048;

    Matrix block(0, 0);
    std::vector<double> weights;
    size_t rows = 0;
    const auto flush = [&]() {
        if (rows == 0) return;
        Matrix view(rows, d_in);
        std::copy_n(block.data.begin(), rows * d_in, view.data.begin());
        const Matrix logp = model_->encoder.forward(view);
        for (size_t i = 0; i < rows; ++i) {
            const double w = weights[i];
            const double* row = logp.row(i);
            for (int z = 0; z < Z; ++z) out[z] += w * std::exp(row[z]);
        }
        rows = 0;
    };
    const auto push = [&](const Slate& s, double weight) {
        if (block.rows == 0) {
            block = Matrix(kChunk, d_in);
            weights.assign(kChunk, 0.0);
        }
        featurize_slate(model_->space, x, s,
                        std::span<double>(block.row(rows), d_in));
        weights[rows] = weight;
        if (++rows == kChunk) flush();
    };

    if (mode == MarginalMode::exact) {
        const auto probs = all_slot_probs(policy, x);
        for_each_slate(model_->space, [&](const Slate& s) {
            const double p = product_prob(probs, s);
            if (p > 0.0) push(s, p);
        }, cap);
        flush();
        return out;
    }
    if (rng == nullptr) {
        throw std::invalid_argument("MlpAbstraction::marginal: MC mode needs an rng");
    }
    if (mc_samples < 1) {
        throw std::invalid_argument("MlpAbstraction::marginal: mc_samples must be >= 1");
    }
    const auto probs = all_slot_probs(policy, x);
    for (int m = 0; m < mc_samples; ++m) {
        push(sample_slate_from_probs(probs, *rng), 1.0 / mc_samples);
    }
    flush();
    return out;
}

void save_abstraction(const AbstractionModel& model, const std::string& prefix) {
    model.encoder.save(prefix + ".encoder.bin");
    model.decoder.save(prefix + ".decoder.bin");
    model.reward.save(prefix + ".reward.bin");
    json manifest;
    manifest["format_version"] = 1;
    manifest["slot_sizes"] = model.space.slot_sizes;
    manifest["context_dim"] = model.context_dim;
    manifest["latent_size"] = model.latent_size;
    manifest["temperature"] = model.temperature;
    manifest["beta"] = model.beta;
    manifest["seed"] = model.seed;
    manifest["sign_mode"] = model.literal_signs ? "literal" : "default";
    std::ofstream out(prefix + ".manifest.json");
    if (!out) {
        throw std::runtime_error("save_abstraction: cannot open " + prefix +
                                 ".manifest.json");
    }
    out << manifest.dump(2) << '\n';
}

AbstractionModel load_abstraction(const std::string& prefix) {
    std::ifstream in(prefix + ".manifest.json");
    if (!in) {
        throw std::runtime_error("load_abstraction: cannot open " + prefix +
                                 ".manifest.json");
    }
    json manifest = json::parse(in);
    SlateSpace space(manifest.at("slot_sizes").get<std::vector<int>>());
    AbstractionModel model(space, manifest.at("context_dim").get<int>(),
                           manifest.at("latent_size").get<int>(),
                           manifest.at("temperature").get<double>(),
                           Mlp::load(prefix + ".encoder.bin"),
                           Mlp::load(prefix + ".decoder.bin"),
                           Mlp::load(prefix + ".reward.bin"));
    model.beta = manifest.at("beta").get<double>();
    model.seed = manifest.at("seed").get<uint64_t>();
    model.literal_signs = manifest.at("sign_mode").get<std::string>() == "literal";
    return model;
}

}  // namespace slateope
