#include "slateope/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <utility>

#include <json.hpp>

#include "slateope/abstraction.hpp"
#include "slateope/linalg.hpp"
#include "slateope/neural.hpp"
#include "slateope/rng.hpp"

namespace slateope {

namespace {

constexpr double kFdStep = 1e-5;

// Central differences are only trustworthy when no ReLU pre-activation and
// no Gumbel-max pick flips inside the +-h window; instances are redrawn
// until every margin clears this bound (>> h times any input magnitude).
constexpr double kKinkMargin = 1e-3;
constexpr int kMaxDraws = 50;

// Central differences of a loss of magnitude |f| carry absolute cancellation
// noise around eps*|f|/h, so gradient entries far below h*|f| sit beneath the
// method's resolution; the denominator floor uses that scale.
double rel_err(double a, double b, double loss_scale) {
    const double floor = kFdStep * std::max(1.0, loss_scale);
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

bool hidden_kinks_clear(const Mlp& net, const Matrix& in) {
    MlpCache cache;
    net.forward(in, &cache);
    for (const double v : cache.z1.data) {
        if (std::abs(v) < kKinkMargin) return false;
    }
    return true;
}

GradCheckResult margin_failure(int index, std::string component) {
    GradCheckResult res;
    res.model_index = index;
    res.component = std::move(component);
    res.max_rel_err = std::numeric_limits<double>::infinity();
    res.pass = false;
    return res;
}

// Compare analytic gradients for `net` against central differences of
// `loss`, which must re-run the full forward at the current parameters.
GradCheckResult check_net(int index, std::string component, Mlp& net,
                          const MlpGrads& grads, const std::function<double()>& loss,
                          double tol) {
    GradCheckResult res;
    res.model_index = index;
    res.component = std::move(component);
    const double loss_scale = std::abs(loss());
    auto params = net.param_views();
    const auto gviews = grads.views();
    for (size_t g = 0; g < params.size(); ++g) {
        for (size_t i = 0; i < params[g].size(); ++i) {
            const double saved = params[g][i];
            params[g][i] = saved + kFdStep;
            const double up = loss();
            params[g][i] = saved - kFdStep;
            const double down = loss();
            params[g][i] = saved;
            const double fd = (up - down) / (2.0 * kFdStep);
            res.max_rel_err =
                std::max(res.max_rel_err, rel_err(gviews[g][i], fd, loss_scale));
            ++res.entries_checked;
        }
    }
    res.pass = res.max_rel_err < tol;
    return res;
}

void raw_mlp_checks(int m, Rng& rng, double tol, std::vector<GradCheckResult>& out) {
    const int d_in = 3 + rng.uniform_int(3);
    const int hidden = 3 + rng.uniform_int(3);
    const int d_out = 2 + rng.uniform_int(3);
    const int batch = 4;

    for (const bool squared : {true, false}) {
        const char* name = squared ? "mlp/squared" : "mlp/nll";
        std::optional<Mlp> net;
        Matrix x(batch, d_in);
        bool clean = false;
        for (int attempt = 0; attempt < kMaxDraws && !clean; ++attempt) {
            net.emplace(d_in, hidden, d_out, squared ? Head::identity : Head::log_softmax,
                        rng);
            for (double& v : x.data) v = rng.normal();
            clean = hidden_kinks_clear(*net, x);
        }
        if (!clean) {
            out.push_back(margin_failure(m, name));
            continue;
        }

        Matrix target(batch, d_out);
        std::vector<int> labels(batch);
        if (squared) {
            for (double& v : target.data) v = rng.normal();
        } else {
            for (int& l : labels) l = rng.uniform_int(d_out);
        }
        auto loss = [&]() {
            const Matrix y = net->forward(x);
            Matrix scratch(batch, d_out);
            return squared ? squared_loss(y, target, scratch)
                           : nll_loss(y, labels, scratch);
        };
        MlpCache cache;
        const Matrix y = net->forward(x, &cache);
        Matrix d_y(batch, d_out);
        if (squared) {
            squared_loss(y, target, d_y);
        } else {
            nll_loss(y, labels, d_y);
        }
        MlpGrads grads = net->zero_grads();
        net->backward(cache, d_y, grads);
        out.push_back(check_net(m, name, *net, grads, loss, tol));
    }
}

struct AbstractionInstance {
    AbstractionModel model;
    AbstractionBatch batch;
    Matrix gumbel;
};

// Draw model + minibatch + Gumbel noise, rejecting draws where the hard
// pick's top-2 margin or any ReLU pre-activation (encoder at the batch,
// decoder and reward head at both the hard and relaxed latent inputs) sits
// too close to a kink for finite differences.
std::optional<AbstractionInstance> draw_abstraction_instance(Rng& rng) {
    for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
        SlateSpace space({2 + rng.uniform_int(2), 2 + rng.uniform_int(2)});
        const int context_dim = 2 + rng.uniform_int(2);
        TrainConfig cfg;
        cfg.latent_size = 3 + rng.uniform_int(2);
        cfg.hidden = 4 + rng.uniform_int(3);
        cfg.temperature = 0.7 + 0.3 * rng.uniform_int(3);
        AbstractionModel model =
            AbstractionModel::init(space, context_dim, cfg, rng.next_u64());

        LoggedDataset data;
        data.space = space;
        const int batch = 5;
        for (int i = 0; i < batch; ++i) {
            LoggedRecord rec;
            std::vector<double> feats(static_cast<size_t>(context_dim));
            for (double& v : feats) v = rng.normal();
            rec.x = Context(std::move(feats));
            std::vector<int> actions(static_cast<size_t>(space.num_slots()));
            rec.pscore = 1.0;
            for (int l = 0; l < space.num_slots(); ++l) {
                const int k = space.slot_sizes[static_cast<size_t>(l)];
                actions[static_cast<size_t>(l)] = rng.uniform_int(k);
                rec.pscore_slot.push_back(1.0 / k);
                rec.pscore *= 1.0 / k;
            }
            rec.s = Slate(std::move(actions));
            rec.r = rng.normal();
            data.records.push_back(std::move(rec));
        }
        std::vector<int> indices(batch);
        std::iota(indices.begin(), indices.end(), 0);
        AbstractionBatch ab = make_batch(model, data, indices);
        if (!hidden_kinks_clear(model.encoder, ab.enc_in)) continue;

        const int Z = cfg.latent_size;
        Matrix gumbel(batch, Z);
        for (double& g : gumbel.data) g = rng.gumbel();

        // Reconstruct the hard pick and the tempered softmax per row, then
        // assemble both decoder-input variants for the kink screen.
        Matrix dec_hard(batch, context_dim + Z);
        Matrix dec_relaxed(batch, context_dim + Z);
        bool margins_ok = true;
        for (int i = 0; i < batch && margins_ok; ++i) {
            const auto& rec = data.records[static_cast<size_t>(i)];
            const auto p = model.encode(rec.x, rec.s);
            std::vector<double> perturbed(static_cast<size_t>(Z));
            double top = -std::numeric_limits<double>::infinity();
            double second = top;
            int pick = 0;
            for (int z = 0; z < Z; ++z) {
                const double v = std::log(p[static_cast<size_t>(z)]) + gumbel(i, z);
                perturbed[static_cast<size_t>(z)] = v;
                if (v > top) {
                    second = top;
                    top = v;
                    pick = z;
                } else if (v > second) {
                    second = v;
                }
            }
            margins_ok = top - second > kKinkMargin;
            double total = 0.0;
            for (int z = 0; z < Z; ++z) {
                const double e = std::exp((perturbed[static_cast<size_t>(z)] - top) /
                                          model.temperature);
                dec_relaxed(i, context_dim + z) = e;
                total += e;
            }
            for (int z = 0; z < Z; ++z) {
                dec_relaxed(i, context_dim + z) /= total;
                dec_hard(i, context_dim + z) = z == pick ? 1.0 : 0.0;
            }
            for (int j = 0; j < context_dim; ++j) {
                dec_hard(i, j) = rec.x.features[static_cast<size_t>(j)];
                dec_relaxed(i, j) = rec.x.features[static_cast<size_t>(j)];
            }
        }
        if (!margins_ok) continue;
        if (!hidden_kinks_clear(model.decoder, dec_hard) ||
            !hidden_kinks_clear(model.decoder, dec_relaxed) ||
            !hidden_kinks_clear(model.reward, dec_hard) ||
            !hidden_kinks_clear(model.reward, dec_relaxed)) {
            continue;
        }
        return AbstractionInstance{std::move(model), std::move(ab), std::move(gumbel)};
    }
    return std::nullopt;
}

void abstraction_checks(int m, Rng& rng, double tol, std::vector<GradCheckResult>& out) {
    auto instance = draw_abstraction_instance(rng);
    if (!instance) {
        out.push_back(margin_failure(m, "instance_margin"));
        return;
    }
    AbstractionModel& model = instance->model;
    const AbstractionBatch& ab = instance->batch;
    const Matrix& gumbel = instance->gumbel;

    const double beta = rng.uniform(0.1, 2.0);
    const double scale = (m % 3 == 0) ? 1.0 : 100.0;
    const bool literal = (m % 2 == 1);

    for (const SampleMode mode : {SampleMode::relaxed, SampleMode::straight_through}) {
        MlpGrads enc_g = model.encoder.zero_grads();
        MlpGrads dec_g = model.decoder.zero_grads();
        MlpGrads rew_g = model.reward.zero_grads();
        abstraction_losses(model, ab, beta, scale, literal, mode, gumbel, &enc_g, &dec_g,
                           &rew_g);
        auto objective = [&]() {
            return abstraction_losses(model, ab, beta, scale, literal, mode, gumbel)
                .objective;
        };
        auto reward_loss = [&]() {
            return abstraction_losses(model, ab, beta, scale, literal, mode, gumbel)
                .reward_err;
        };
        const bool relaxed = mode == SampleMode::relaxed;
        const std::string tag = relaxed ? "relaxed" : "st";
        if (relaxed) {
            // The straight-through encoder gradient routes the hard forward's
            // loss through the relaxed jacobian, so it is not the derivative
            // of its own forward; the shared chain is verified here instead.
            out.push_back(
                check_net(m, tag + "/encoder", model.encoder, enc_g, objective, tol));
        }
        out.push_back(check_net(m, tag + "/decoder", model.decoder, dec_g, objective, tol));
        out.push_back(check_net(m, tag + "/reward", model.reward, rew_g, reward_loss, tol));
    }
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck(int num_models, uint64_t seed, double tol) {
    if (num_models <= 0) throw std::invalid_argument("run_gradcheck: num_models must be positive");
    if (!(tol > 0.0)) throw std::invalid_argument("run_gradcheck: tol must be positive");
    std::vector<GradCheckResult> out;
    for (int m = 0; m < num_models; ++m) {
        Rng rng = substream(seed, "gradcheck", {static_cast<uint64_t>(m)});
        raw_mlp_checks(m, rng, tol, out);
        abstraction_checks(m, rng, tol, out);
    }
    return out;
}

bool gradcheck_all_pass(const std::vector<GradCheckResult>& results) {
    return !results.empty() &&
           std::all_of(results.begin(), results.end(),
                       [](const GradCheckResult& r) { return r.pass; });
}

std::vector<std::string> gradcheck_lines(const std::vector<GradCheckResult>& results) {
    std::vector<std::string> lines;
    lines.reserve(results.size());
    for (const auto& r : results) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s model=%02d %-15s max_rel_err=%.3e entries=%d",
                      r.pass ? "PASS" : "FAIL", r.model_index, r.component.c_str(),
                      r.max_rel_err, r.entries_checked);
        lines.emplace_back(buf);
    }
    return lines;
}

std::string gradcheck_json(const std::vector<GradCheckResult>& results) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& r : results) {
        checks.push_back({{"model_index", r.model_index},
                          {"component", r.component},
                          {"max_rel_err", r.max_rel_err},
                          {"entries_checked", r.entries_checked},
                          {"pass", r.pass}});
    }
    nlohmann::json doc{{"checks", std::move(checks)},
                       {"all_pass", gradcheck_all_pass(results)}};
    return doc.dump(2) + "\n";
}

}  // namespace slateope
