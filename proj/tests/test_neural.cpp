#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "slateope/neural.hpp"
#include "slateope/synthenv.hpp"

using namespace slateope;

namespace {

Matrix random_matrix(size_t rows, size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.normal();
    return m;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Central finite differences over every parameter of `net` against the
// analytic gradients for the given loss closure.
void check_gradients(Mlp& net, const Matrix& x,
                     const std::function<double(const Matrix&, Matrix&)>& loss_of_output,
                     double tol) {
    MlpCache cache;
    Matrix y = net.forward(x, &cache);
    Matrix d_y;
    loss_of_output(y, d_y);
    MlpGrads grads = net.zero_grads();
    Matrix d_input;
    net.backward(cache, d_y, grads, &d_input);

    const double h = 1e-5;
    auto loss_now = [&]() {
        Matrix out = net.forward(x);
        Matrix unused;
        return loss_of_output(out, unused);
    };

    auto params = net.param_views();
    auto gview = grads.views();
    for (size_t g = 0; g < params.size(); ++g) {
        for (size_t i = 0; i < params[g].size(); ++i) {
            const double saved = params[g][i];
            params[g][i] = saved + h;
            const double up = loss_now();
            params[g][i] = saved - h;
            const double down = loss_now();
            params[g][i] = saved;
            const double fd = (up - down) / (2.0 * h);
            REQUIRE(rel_err(gview[g][i], fd) < tol);
        }
    }

    // Input gradients via the same oracle.
    Matrix xp = x;
    for (size_t i = 0; i < xp.size(); ++i) {
        const double saved = xp.data[i];
        xp.data[i] = saved + h;
        Matrix up_y = net.forward(xp);
        Matrix unused;
        const double up = loss_of_output(up_y, unused);
        xp.data[i] = saved - h;
        Matrix down_y = net.forward(xp);
        const double down = loss_of_output(down_y, unused);
        xp.data[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        REQUIRE(rel_err(d_input.data[i], fd) < tol);
    }
}

}  // namespace

TEST_CASE("zeroed network outputs zero under the identity head") {
    Rng rng(1);
    Mlp net(3, 4, 2, Head::identity, rng);
    for (auto view : net.param_views()) {
        for (double& v : view) v = 0.0;
    }
    const auto y = net.forward_row(std::vector<double>{1.0, -2.0, 3.0});
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
}

TEST_CASE("1-1-1 network with unit weights is the ReLU pass-through") {
    Rng rng(2);
    Mlp net(1, 1, 1, Head::identity, rng);
    net.w1t()(0, 0) = 1.0;
    net.b1()[0] = 0.0;
    net.w2t()(0, 0) = 1.0;
    net.b2()[0] = 0.0;
    CHECK(net.forward_row(std::vector<double>{2.0})[0] == 2.0);
    CHECK(net.forward_row(std::vector<double>{-2.0})[0] == 0.0);  // ReLU clamps
}

TEST_CASE("batch forward equals per-row forward") {
    Rng rng(3);
    Mlp net(4, 6, 3, Head::log_softmax, rng);
    const Matrix x = random_matrix(5, 4, rng);
    const Matrix y = net.forward(x);
    for (size_t i = 0; i < x.rows; ++i) {
        const auto yi = net.forward_row(std::span<const double>(x.row(i), x.cols));
        for (size_t j = 0; j < y.cols; ++j) {
            CHECK(y(i, j) == yi[j]);
        }
    }
}

TEST_CASE("log-softmax rows are normalized log-probabilities") {
    Rng rng(4);
    Mlp net(3, 5, 4, Head::log_softmax, rng);
    const Matrix x = random_matrix(6, 3, rng);
    const Matrix y = net.forward(x);
    for (size_t i = 0; i < y.rows; ++i) {
        double total = 0.0;
        for (size_t j = 0; j < y.cols; ++j) {
            CHECK(y(i, j) <= 0.0);
            total += std::exp(y(i, j));
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("matching targets give exactly zero gradients") {
    Rng rng(5);
    Mlp net(3, 4, 2, Head::identity, rng);
    const Matrix x = random_matrix(4, 3, rng);
    MlpCache cache;
    const Matrix y = net.forward(x, &cache);
    Matrix d_y;
    squared_loss(y, y, d_y);
    MlpGrads grads = net.zero_grads();
    net.backward(cache, d_y, grads);
    for (auto view : grads.views()) {
        for (double v : view) CHECK(v == 0.0);
    }
}

TEST_CASE("squared-loss gradients match finite differences on a random 5-4-3 net") {
    Rng rng(6);
    Mlp net(5, 4, 3, Head::identity, rng);
    const Matrix x = random_matrix(6, 5, rng);
    const Matrix target = random_matrix(6, 3, rng);
    check_gradients(net, x, [&](const Matrix& y, Matrix& d_y) {
        return squared_loss(y, target, d_y);
    }, 1e-4);
}

TEST_CASE("nll gradients match finite differences on a random 5-4-3 net") {
    Rng rng(7);
    Mlp net(5, 4, 3, Head::log_softmax, rng);
    const Matrix x = random_matrix(6, 5, rng);
    std::vector<int> labels(6);
    for (int& l : labels) l = rng.uniform_int(3);
    check_gradients(net, x, [&](const Matrix& y, Matrix& d_y) {
        return nll_loss(y, labels, d_y);
    }, 1e-4);
}

TEST_CASE("duplicating every batch row leaves the mean-loss gradient unchanged") {
    Rng rng(8);
    Mlp net(4, 5, 2, Head::identity, rng);
    const Matrix x = random_matrix(3, 4, rng);
    const Matrix target = random_matrix(3, 2, rng);

    Matrix x2(6, 4), t2(6, 2);
    for (int rep = 0; rep < 2; ++rep) {
        for (size_t i = 0; i < 3; ++i) {
            std::copy_n(x.row(i), 4, x2.row(rep * 3 + i));
            std::copy_n(target.row(i), 2, t2.row(rep * 3 + i));
        }
    }

    MlpCache c1, c2;
    Matrix d1, d2;
    const Matrix y1 = net.forward(x, &c1);
    const Matrix y2 = net.forward(x2, &c2);
    squared_loss(y1, target, d1);
    squared_loss(y2, t2, d2);
    MlpGrads g1 = net.zero_grads(), g2 = net.zero_grads();
    net.backward(c1, d1, g1);
    net.backward(c2, d2, g2);
    auto v1 = g1.views(), v2 = g2.views();
    for (size_t g = 0; g < v1.size(); ++g) {
        for (size_t i = 0; i < v1[g].size(); ++i) {
            CHECK(v1[g][i] == doctest::Approx(v2[g][i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
    Rng rng(9);
    Mlp net(2, 3, 1, Head::identity, rng);
    const auto before = net.w1t().data;
    Adam opt(net.num_params(), 0.1);
    MlpGrads grads = net.zero_grads();
    opt.step(net.param_views(), grads.views());
    CHECK(net.w1t().data == before);
}

TEST_CASE("adam first step moves each coordinate by about lr times the gradient sign") {
    Rng rng(10);
    Mlp net(2, 3, 2, Head::identity, rng);
    std::vector<double> before;
    for (auto view : net.param_views()) {
        before.insert(before.end(), view.begin(), view.end());
    }
    MlpGrads grads = net.zero_grads();
    Rng grng(11);
    for (auto view : grads.mutable_views()) {
        for (double& v : view) {
            v = grng.normal();
            if (std::abs(v) < 0.1) v = 0.5;  // keep |g| well above Adam eps
        }
    }
    const double lr = 0.01;
    Adam opt(net.num_params(), lr);
    opt.step(net.param_views(), grads.views());

    size_t k = 0;
    auto gviews = grads.views();
    size_t gi = 0, gj = 0;
    for (auto view : net.param_views()) {
        for (double v : view) {
            const double g = gviews[gi][gj];
            CHECK(std::abs((v - before[k]) + lr * (g > 0 ? 1.0 : -1.0)) < 1e-5);
            ++k;
            if (++gj == gviews[gi].size()) {
                gj = 0;
                ++gi;
            }
        }
    }
}

TEST_CASE("adam is deterministic given identical states") {
    Rng rng_a(12), rng_b(12);
    Mlp a(3, 4, 2, Head::identity, rng_a);
    Mlp b(3, 4, 2, Head::identity, rng_b);
    MlpGrads grads = a.zero_grads();
    Rng grng(13);
    for (auto view : grads.mutable_views()) {
        for (double& v : view) v = grng.normal();
    }
    Adam oa(a.num_params(), 0.05), ob(b.num_params(), 0.05);
    for (int i = 0; i < 3; ++i) {
        oa.step(a.param_views(), grads.views());
        ob.step(b.param_views(), grads.views());
    }
    CHECK(a.w1t().data == b.w1t().data);
    CHECK(a.w2t().data == b.w2t().data);
    CHECK(a.b1() == b.b1());
    CHECK(a.b2() == b.b2());
}

TEST_CASE("checkpoint round trip is bitwise") {
    Rng rng(14);
    Mlp net(7, 5, 3, Head::log_softmax, rng);
    const std::string path = "test_neural_ckpt.bin";
    net.save(path);
    const Mlp back = Mlp::load(path);
    std::remove(path.c_str());
    CHECK(back.input_dim() == 7);
    CHECK(back.hidden_dim() == 5);
    CHECK(back.output_dim() == 3);
    CHECK(back.head() == Head::log_softmax);
    CHECK(back.w1t().data == net.w1t().data);
    CHECK(back.w2t().data == net.w2t().data);
}

TEST_CASE("slate featurization concatenates context and per-slot one-hots") {
    SlateSpace space({2, 3});
    Context x({0.5, -1.0});
    std::vector<double> row(slate_feature_dim(space, 2));
    REQUIRE(row.size() == 2 + 2 + 3);
    featurize_slate(space, x, Slate({1, 2}), row);
    CHECK(row == std::vector<double>{0.5, -1.0, 0.0, 1.0, 0.0, 0.0, 1.0});
}

TEST_CASE("reward model fits a constant target on the logged support") {
    EnvConfig cfg;
    cfg.num_slots = 2;
    cfg.slot_size = 3;
    cfg.context_dim = 4;
    cfg.seed = 100;
    auto env = build_env(cfg);
    auto logging = TablePolicy::uniform(env.space);
    auto data = generate_logs(env, logging, 120, 55);
    for (auto& rec : data.records) rec.r = 0.7;

    RewardTrainConfig tc;
    tc.epochs = 300;
    const auto model = train_reward_model(data, tc, 77);
    for (int i = 0; i < 40; ++i) {
        const auto& rec = data.records[i];
        CHECK(std::abs(model.expected_reward(rec.x, rec.s) - 0.7) < 0.05);
    }
}

TEST_CASE("reward model training is reproducible and reduces loss for most seeds") {
    EnvConfig cfg;
    cfg.num_slots = 2;
    cfg.slot_size = 3;
    cfg.context_dim = 4;
    cfg.seed = 101;
    auto env = build_env(cfg);
    auto logging = TablePolicy::uniform(env.space);
    const auto data = generate_logs(env, logging, 150, 56);

    RewardTrainConfig tc;
    tc.epochs = 30;

    RewardTrainReport r1, r2;
    const auto m1 = train_reward_model(data, tc, 500, &r1);
    const auto m2 = train_reward_model(data, tc, 500, &r2);
    CHECK(m1.net().w1t().data == m2.net().w1t().data);
    CHECK(m1.net().w2t().data == m2.net().w2t().data);
    CHECK(r1.test_loss == r2.test_loss);

    int improved = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        RewardTrainReport rep;
        train_reward_model(data, tc, seed, &rep);
        if (rep.train_loss.back() < rep.train_loss.front()) ++improved;
    }
    CHECK(improved >= 9);
}

TEST_CASE("reward model batch prediction agrees with single evaluation") {
    EnvConfig cfg;
    cfg.num_slots = 2;
    cfg.slot_size = 3;
    cfg.context_dim = 4;
    cfg.seed = 102;
    auto env = build_env(cfg);
    auto logging = TablePolicy::uniform(env.space);
    const auto data = generate_logs(env, logging, 80, 57);
    RewardTrainConfig tc;
    tc.epochs = 10;
    const auto model = train_reward_model(data, tc, 3);

    const auto slates = enumerate_slates(env.space);
    const Context& x = data.records[0].x;
    const auto batch = model.predict(x, slates);
    for (size_t i = 0; i < slates.size(); ++i) {
        CHECK(batch[i] == model.expected_reward(x, slates[i]));
    }
}

TEST_CASE("tiny datasets are rejected") {
    LoggedDataset data;
    data.space = SlateSpace({2});
    for (int i = 0; i < 5; ++i) {
        data.records.push_back({Context({0.0}), Slate({0}), 1.0, 0.5, {0.5}});
    }
    CHECK_THROWS_AS(train_reward_model(data, RewardTrainConfig{}, 1), std::invalid_argument);
}
