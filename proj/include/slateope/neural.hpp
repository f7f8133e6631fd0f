#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slateope/core.hpp"
#include "slateope/linalg.hpp"
#include "slateope/rng.hpp"

namespace slateope {

enum class Head { identity = 0, log_softmax = 1 };

struct MlpCache {
    Matrix x;    // batch input
    Matrix z1;   // hidden pre-activation
    Matrix a1;   // hidden post-ReLU
    Matrix y;    // head output
};

struct MlpGrads {
    Matrix w1t;              // d_in x hidden
    std::vector<double> b1;  // hidden
    Matrix w2t;              // hidden x d_out
    std::vector<double> b2;  // d_out

    void zero();
    std::vector<std::span<const double>> views() const;
    std::vector<std::span<double>> mutable_views();
};

// One-hidden-layer perceptron with ReLU activation. Weights are stored
// transposed (input-major) so both forward multiplies hit the fast
// row-major kernel.
class Mlp {
public:
    Mlp(int d_in, int hidden, int d_out, Head head, Rng& rng);

    int input_dim() const { return d_in_; }
    int hidden_dim() const { return hidden_; }
    int output_dim() const { return d_out_; }
    Head head() const { return head_; }
    size_t num_params() const;

    // Rows of `x` are inputs; returns head outputs (log-probabilities for the
    // log_softmax head). Pass a cache to enable backward().
    Matrix forward(const Matrix& x, MlpCache* cache = nullptr) const;
    std::vector<double> forward_row(std::span<const double> x) const;

    // d_out_grad is dL/d(head output). Fills parameter gradients; optionally
    // also dL/d(input).
    void backward(const MlpCache& cache, const Matrix& d_out_grad, MlpGrads& grads,
                  Matrix* d_input = nullptr) const;

    MlpGrads zero_grads() const;
    std::vector<std::span<double>> param_views();
    std::vector<std::span<const double>> param_views() const;
    void check_finite(const std::string& what) const;

    const Matrix& w1t() const { return w1t_; }
    const Matrix& w2t() const { return w2t_; }
    Matrix& w1t() { return w1t_; }
    Matrix& w2t() { return w2t_; }
    std::vector<double>& b1() { return b1_; }
    std::vector<double>& b2() { return b2_; }

    void save(const std::string& path) const;
    static Mlp load(const std::string& path);

private:
    Mlp() = default;
    int d_in_ = 0, hidden_ = 0, d_out_ = 0;
    Head head_ = Head::identity;
    Matrix w1t_;              // d_in x hidden
    std::vector<double> b1_;  // hidden
    Matrix w2t_;              // hidden x d_out
    std::vector<double> b2_;  // d_out
};

// Mean-over-batch squared error summed over output dims; fills dL/dy.
double squared_loss(const Matrix& y, const Matrix& target, Matrix& d_y);

// Mean negative log-likelihood of per-row labels; `logp` must be log-probs.
double nll_loss(const Matrix& logp, const std::vector<int>& labels, Matrix& d_logp);

// Bias-corrected Adam over a flat view of parameters.
class Adam {
public:
    explicit Adam(size_t n_params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    void step(const std::vector<std::span<double>>& params,
              const std::vector<std::span<const double>>& grads);
    int64_t steps_taken() const { return t_; }
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<double> m_, v_;
};

// Context ++ per-slot one-hot featurization used by the reward model.
int slate_feature_dim(const SlateSpace& space, int context_dim);
void featurize_slate(const SlateSpace& space, const Context& x, const Slate& s,
                     std::span<double> out);

struct RewardTrainConfig {
    int epochs = 500;
    int steps_per_epoch = 10;
    double lr = 1e-2;
    double train_fraction = 0.8;
    int patience = 5;          // consecutive test-loss increases before stopping
    int hidden = 100;
    int batch_size = 0;        // 0: ceil(n_train / steps_per_epoch)
};

// Frozen regression model q_hat(x, s) over context ++ one-hot slate features.
class MlpRewardModel : public RewardFn {
public:
    MlpRewardModel(Mlp net, SlateSpace space, int context_dim);

    double expected_reward(const Context& x, const Slate& s) const override;
    std::vector<double> expected_reward_batch(const Context& x,
                                              std::span<const Slate> slates) const override {
        return predict(x, slates);
    }
    // One forward pass over many slates sharing a context.
    std::vector<double> predict(const Context& x, std::span<const Slate> slates) const;

    const Mlp& net() const { return net_; }
    const SlateSpace& space() const { return space_; }
    int context_dim() const { return context_dim_; }

private:
    Mlp net_;
    SlateSpace space_;
    int context_dim_;
};

struct RewardTrainReport {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> test_loss;   // per epoch
    int stopped_epoch = 0;           // epochs actually run
    double best_test_loss = 0.0;
};

MlpRewardModel train_reward_model(const LoggedDataset& data, const RewardTrainConfig& config,
                                  uint64_t seed, RewardTrainReport* report = nullptr);

}  // namespace slateope
