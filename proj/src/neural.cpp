#include "slateope/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace slateope {

void MlpGrads::zero() {
    w1t.fill(0.0);
    std::fill(b1.begin(), b1.end(), 0.0);
    w2t.fill(0.0);
    std::fill(b2.begin(), b2.end(), 0.0);
}

std::vector<std::span<const double>> MlpGrads::views() const {
    return {std::span<const double>(w1t.data), std::span<const double>(b1),
            std::span<const double>(w2t.data), std::span<const double>(b2)};
}

std::vector<std::span<double>> MlpGrads::mutable_views() {
    return {std::span<double>(w1t.data), std::span<double>(b1),
            std::span<double>(w2t.data), std::span<double>(b2)};
}

Mlp::Mlp(int d_in, int hidden, int d_out, Head head, Rng& rng)
    : d_in_(d_in), hidden_(hidden), d_out_(d_out), head_(head) {
    if (d_in < 1 || hidden < 1 || d_out < 1) {
        throw std::invalid_argument("Mlp: layer sizes must be >= 1");
    }
    w1t_ = Matrix(d_in, hidden);
    b1_.assign(hidden, 0.0);
    w2t_ = Matrix(hidden, d_out);
    b2_.assign(d_out, 0.0);
    // Scaled-uniform fan-in initialization for weights and biases.
    const double s1 = 1.0 / std::sqrt(double(d_in));
    for (double& w : w1t_.data) w = rng.uniform(-s1, s1);
    for (double& b : b1_) b = rng.uniform(-s1, s1);
    const double s2 = 1.0 / std::sqrt(double(hidden));
    for (double& w : w2t_.data) w = rng.uniform(-s2, s2);
    for (double& b : b2_) b = rng.uniform(-s2, s2);
}

size_t Mlp::num_params() const {
    return w1t_.size() + b1_.size() + w2t_.size() + b2_.size();
}

namespace {

void add_row_bias(Matrix& m, const std::vector<double>& b) {
    for (size_t i = 0; i < m.rows; ++i) {
        double* row = m.data.data() + i * m.cols;
        for (size_t j = 0; j < m.cols; ++j) row[j] += b[j];
    }
}

void log_softmax_rows(Matrix& m) {
    for (size_t i = 0; i < m.rows; ++i) {
        double* row = m.data.data() + i * m.cols;
        double hi = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < m.cols; ++j) hi = std::max(hi, row[j]);
        double total = 0.0;
        for (size_t j = 0; j < m.cols; ++j) total += std::exp(row[j] - hi);
        const double lse = hi + std::log(total);
        for (size_t j = 0; j < m.cols; ++j) row[j] -= lse;
    }
}

}  // namespace

Matrix Mlp::forward(const Matrix& x, MlpCache* cache) const {
    if (static_cast<int>(x.cols) != d_in_) {
        throw std::invalid_argument("Mlp::forward: input has " + std::to_string(x.cols) +
                                    " columns, expected " + std::to_string(d_in_));
    }
    Matrix z1(x.rows, hidden_);
    matmul_nn(x, w1t_, z1);
    add_row_bias(z1, b1_);

    Matrix a1 = z1;
    for (double& v : a1.data) v = v > 0.0 ? v : 0.0;

    Matrix y(x.rows, d_out_);
    matmul_nn(a1, w2t_, y);
    add_row_bias(y, b2_);

    if (head_ == Head::log_softmax) log_softmax_rows(y);

    if (cache != nullptr) {
        cache->x = x;
        cache->z1 = std::move(z1);
        cache->a1 = std::move(a1);
        cache->y = y;
    }
    return y;
}

std::vector<double> Mlp::forward_row(std::span<const double> x) const {
    Matrix m(1, x.size());
    std::copy(x.begin(), x.end(), m.data.begin());
    Matrix y = forward(m);
    return y.data;
}

void Mlp::backward(const MlpCache& cache, const Matrix& d_out_grad, MlpGrads& grads,
                   Matrix* d_input) const {
    if (d_out_grad.rows != cache.y.rows || static_cast<int>(d_out_grad.cols) != d_out_) {
        throw std::invalid_argument("Mlp::backward: output gradient shape mismatch");
    }
    const size_t batch = cache.x.rows;

    // dL/d(pre-head logits).
    Matrix dz2 = d_out_grad;
    if (head_ == Head::log_softmax) {
        for (size_t i = 0; i < batch; ++i) {
            const double* gy = d_out_grad.data.data() + i * d_out_;
            const double* logp = cache.y.data.data() + i * d_out_;
            double total = 0.0;
            for (int j = 0; j < d_out_; ++j) total += gy[j];
            double* gz = dz2.data.data() + i * d_out_;
            for (int j = 0; j < d_out_; ++j) gz[j] = gy[j] - std::exp(logp[j]) * total;
        }
    }

    grads.b1.assign(hidden_, 0.0);
    grads.b2.assign(d_out_, 0.0);
    matmul_tn(cache.a1, dz2, grads.w2t);
    for (int j = 0; j < d_out_; ++j) {
        double total = 0.0;
        for (size_t i = 0; i < batch; ++i) total += dz2(i, j);
        grads.b2[j] = total;
    }

    Matrix da1(batch, hidden_);
    matmul_nt(dz2, w2t_, da1);
    // ReLU mask.
    for (size_t i = 0; i < da1.size(); ++i) {
        if (cache.z1.data[i] <= 0.0) da1.data[i] = 0.0;
    }

    matmul_tn(cache.x, da1, grads.w1t);
    for (int j = 0; j < hidden_; ++j) {
        double total = 0.0;
        for (size_t i = 0; i < batch; ++i) total += da1(i, j);
        grads.b1[j] = total;
    }

    if (d_input != nullptr) {
        *d_input = Matrix(batch, d_in_);
        matmul_nt(da1, w1t_, *d_input);
    }
}

MlpGrads Mlp::zero_grads() const {
    MlpGrads g;
    g.w1t = Matrix(d_in_, hidden_);
    g.b1.assign(hidden_, 0.0);
    g.w2t = Matrix(hidden_, d_out_);
    g.b2.assign(d_out_, 0.0);
    return g;
}

std::vector<std::span<double>> Mlp::param_views() {
    return {std::span<double>(w1t_.data), std::span<double>(b1_),
            std::span<double>(w2t_.data), std::span<double>(b2_)};
}

std::vector<std::span<const double>> Mlp::param_views() const {
    return {std::span<const double>(w1t_.data), std::span<const double>(b1_),
            std::span<const double>(w2t_.data), std::span<const double>(b2_)};
}

void Mlp::check_finite(const std::string& what) const {
    for (const auto view : param_views()) {
        if (!all_finite(view)) {
            throw std::runtime_error(what + ": non-finite network parameters");
        }
    }
}

namespace {

constexpr char kMlpMagic[8] = {'S', 'O', 'P', 'E', 'M', 'L', 'P', '1'};

void write_bytes(std::ofstream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& in, void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw std::runtime_error("Mlp::load: truncated file");
}

}  // namespace

void Mlp::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("Mlp::save: cannot open " + path);
    write_bytes(out, kMlpMagic, sizeof(kMlpMagic));
    const int32_t dims[4] = {static_cast<int32_t>(d_in_), static_cast<int32_t>(hidden_),
                             static_cast<int32_t>(d_out_), static_cast<int32_t>(head_)};
    write_bytes(out, dims, sizeof(dims));
    for (const auto view : param_views()) {
        write_bytes(out, view.data(), view.size() * sizeof(double));
    }
    if (!out) throw std::runtime_error("Mlp::save: write failed for " + path);
}

Mlp Mlp::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("Mlp::load: cannot open " + path);
    char magic[8];
    read_bytes(in, magic, sizeof(magic));
    if (std::memcmp(magic, kMlpMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("Mlp::load: bad magic in " + path);
    }
    int32_t dims[4];
    read_bytes(in, dims, sizeof(dims));
    if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1 || dims[3] < 0 || dims[3] > 1) {
        throw std::runtime_error("Mlp::load: invalid header in " + path);
    }
    Mlp model;
    model.d_in_ = dims[0];
    model.hidden_ = dims[1];
    model.d_out_ = dims[2];
    model.head_ = static_cast<Head>(dims[3]);
    model.w1t_ = Matrix(model.d_in_, model.hidden_);
    model.b1_.assign(model.hidden_, 0.0);
    model.w2t_ = Matrix(model.hidden_, model.d_out_);
    model.b2_.assign(model.d_out_, 0.0);
    for (auto view : model.param_views()) {
        read_bytes(in, view.data(), view.size() * sizeof(double));
    }
    model.check_finite("Mlp::load");
    return model;
}

double squared_loss(const Matrix& y, const Matrix& target, Matrix& d_y) {
    if (y.rows != target.rows || y.cols != target.cols) {
        throw std::invalid_argument("squared_loss: shape mismatch");
    }
    d_y = Matrix(y.rows, y.cols);
    const double scale = 1.0 / double(y.rows);
    double loss = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        const double diff = y.data[i] - target.data[i];
        loss += diff * diff;
        d_y.data[i] = 2.0 * scale * diff;
    }
    return loss * scale;
}

double nll_loss(const Matrix& logp, const std::vector<int>& labels, Matrix& d_logp) {
    if (logp.rows != labels.size()) {
        throw std::invalid_argument("nll_loss: one label per row required");
    }
    d_logp = Matrix(logp.rows, logp.cols);
    const double scale = 1.0 / double(logp.rows);
    double loss = 0.0;
    for (size_t i = 0; i < logp.rows; ++i) {
        const int label = labels[i];
        if (label < 0 || label >= static_cast<int>(logp.cols)) {
            throw std::invalid_argument("nll_loss: label out of range");
        }
        loss -= logp(i, label);
        d_logp(i, label) = -scale;
    }
    return loss * scale;
}

Adam::Adam(size_t n_params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n_params, 0.0), v_(n_params, 0.0) {}

void Adam::step(const std::vector<std::span<double>>& params,
                const std::vector<std::span<const double>>& grads) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("Adam::step: parameter/gradient group mismatch");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    size_t offset = 0;
    for (size_t g = 0; g < params.size(); ++g) {
        auto p = params[g];
        auto grad = grads[g];
        if (p.size() != grad.size()) {
            throw std::invalid_argument("Adam::step: span size mismatch");
        }
        if (offset + p.size() > m_.size()) {
            throw std::invalid_argument("Adam::step: more parameters than state");
        }
        for (size_t i = 0; i < p.size(); ++i) {
            const size_t k = offset + i;
            m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grad[i];
            v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grad[i] * grad[i];
            const double mhat = m_[k] / bc1;
            const double vhat = v_[k] / bc2;
            p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
        offset += p.size();
    }
    if (offset != m_.size()) {
        throw std::invalid_argument("Adam::step: fewer parameters than state");
    }
}

int slate_feature_dim(const SlateSpace& space, int context_dim) {
    int total = context_dim;
    for (int k : space.slot_sizes) total += k;
    return total;
}

void featurize_slate(const SlateSpace& space, const Context& x, const Slate& s,
                     std::span<double> out) {
    const int d = x.dim();
    if (static_cast<int>(out.size()) != slate_feature_dim(space, d)) {
        throw std::invalid_argument("featurize_slate: output span size mismatch");
    }
    std::copy(x.features.begin(), x.features.end(), out.begin());
    size_t offset = d;
    for (int l = 0; l < space.num_slots(); ++l) {
        const int k = space.slot_sizes[l];
        std::fill(out.begin() + offset, out.begin() + offset + k, 0.0);
        out[offset + s.sub_actions[l]] = 1.0;
        offset += k;
    }
}

MlpRewardModel::MlpRewardModel(Mlp net, SlateSpace space, int context_dim)
    : net_(std::move(net)), space_(std::move(space)), context_dim_(context_dim) {
    if (net_.input_dim() != slate_feature_dim(space_, context_dim_)) {
        throw std::invalid_argument("MlpRewardModel: network input dim mismatch");
    }
    if (net_.output_dim() != 1 || net_.head() != Head::identity) {
        throw std::invalid_argument("MlpRewardModel: expect scalar identity head");
    }
}

double MlpRewardModel::expected_reward(const Context& x, const Slate& s) const {
    std::vector<double> row(net_.input_dim());
    featurize_slate(space_, x, s, row);
    return net_.forward_row(row)[0];
}

std::vector<double> MlpRewardModel::predict(const Context& x,
                                            std::span<const Slate> slates) const {
    Matrix batch(slates.size(), net_.input_dim());
    for (size_t i = 0; i < slates.size(); ++i) {
        featurize_slate(space_, x, slates[i],
                        std::span<double>(batch.data.data() + i * batch.cols, batch.cols));
    }
    const Matrix y = net_.forward(batch);
    return y.data;
}

MlpRewardModel train_reward_model(const LoggedDataset& data, const RewardTrainConfig& config,
                                  uint64_t seed, RewardTrainReport* report) {
    const int n = static_cast<int>(data.size());
    if (n < 10) {
        throw std::invalid_argument("train_reward_model: need at least 10 records");
    }
    if (config.train_fraction <= 0.0 || config.train_fraction >= 1.0) {
        throw std::invalid_argument("train_reward_model: train_fraction must lie in (0,1)");
    }
    const int context_dim = data.records.front().x.dim();
    const int d_in = slate_feature_dim(data.space, context_dim);

    // Shuffled split.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng = substream(seed, "qhat-split");
    for (int i = n - 1; i > 0; --i) {
        std::swap(order[i], order[split_rng.uniform_int(i + 1)]);
    }
    const int n_train = std::max(1, std::min(n - 1, int(std::floor(n * config.train_fraction))));
    const int n_test = n - n_train;

    Matrix x_train(n_train, d_in), x_test(n_test, d_in);
    Matrix y_train(n_train, 1), y_test(n_test, 1);
    for (int i = 0; i < n; ++i) {
        const auto& rec = data.records[order[i]];
        Matrix& xm = i < n_train ? x_train : x_test;
        Matrix& ym = i < n_train ? y_train : y_test;
        const int row = i < n_train ? i : i - n_train;
        featurize_slate(data.space, rec.x, rec.s,
                        std::span<double>(xm.data.data() + size_t(row) * d_in, d_in));
        ym(row, 0) = rec.r;
    }

    Rng init_rng = substream(seed, "qhat-init");
    Mlp net(d_in, config.hidden, 1, Head::identity, init_rng);
    Adam opt(net.num_params(), config.lr);
    MlpGrads grads = net.zero_grads();

    const int batch_size = config.batch_size > 0
                               ? std::min(config.batch_size, n_train)
                               : std::min(n_train, (n_train + config.steps_per_epoch - 1) /
                                                       config.steps_per_epoch);
    Rng batch_rng = substream(seed, "qhat-batch");

    Mlp best = net;
    double best_test = std::numeric_limits<double>::infinity();
    int consecutive_rises = 0;
    double prev_test = std::numeric_limits<double>::infinity();
    RewardTrainReport local_report;

    Matrix xb(batch_size, d_in), yb(batch_size, 1), d_y;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int step = 0; step < config.steps_per_epoch; ++step) {
            for (int b = 0; b < batch_size; ++b) {
                const int idx = batch_rng.uniform_int(n_train);
                std::copy_n(x_train.data.begin() + size_t(idx) * d_in, d_in,
                            xb.data.begin() + size_t(b) * d_in);
                yb(b, 0) = y_train(idx, 0);
            }
            MlpCache cache;
            const Matrix y = net.forward(xb, &cache);
            epoch_loss += squared_loss(y, yb, d_y);
            net.backward(cache, d_y, grads);
            opt.step(net.param_views(), grads.views());
        }
        net.check_finite("train_reward_model epoch " + std::to_string(epoch));

        const Matrix y_hat = net.forward(x_test);
        Matrix d_tmp;
        const double test = squared_loss(y_hat, y_test, d_tmp);
        local_report.train_loss.push_back(epoch_loss / config.steps_per_epoch);
        local_report.test_loss.push_back(test);

        if (test < best_test) {
            best_test = test;
            best = net;
        }
        if (test > prev_test) {
            if (++consecutive_rises >= config.patience) {
                local_report.stopped_epoch = epoch + 1;
                break;
            }
        } else {
            consecutive_rises = 0;
        }
        prev_test = test;
        local_report.stopped_epoch = epoch + 1;
    }
    local_report.best_test_loss = best_test;
    if (report != nullptr) *report = local_report;
    return MlpRewardModel(std::move(best), data.space, context_dim);
}

}  // namespace slateope
