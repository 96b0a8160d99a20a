#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "demandbench/nn_core.hpp"
#include "oracles.hpp"

using namespace demandbench;
namespace nn = demandbench::nn;

namespace {

nn::NetworkArch toy_arch(bool batch_norm, double dropout) {
    nn::NetworkArch arch;
    arch.embeddings = {{3, 2}};
    arch.emb_layers = {{2, 16, true, false, dropout},
                       {16, 32, true, false, dropout},
                       {32, 64, false, false, 0.0}};
    arch.n_numeric = 2;
    arch.fc_layers = {{66, 8, true, batch_norm, dropout},
                      {8, 8, true, batch_norm, dropout},
                      {8, 8, true, batch_norm, dropout},
                      {8, 8, true, batch_norm, dropout},
                      {8, 2, false, false, 0.0}};
    arch.validate();
    return arch;
}

nn::Batch toy_batch(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    std::uniform_real_distribution<double> up(0.5, 2.0);
    nn::Batch b;
    Eigen::VectorXi cat(n);
    for (int i = 0; i < n; ++i) cat(i) = static_cast<int>(rng() % 3);
    b.categorical = {cat};
    b.numeric.resize(n, 2);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 2; ++c) b.numeric(i, c) = u(rng);
    b.prices.resize(n);
    b.quantities.resize(n);
    for (int i = 0; i < n; ++i) {
        b.prices(i) = up(rng);
        b.quantities(i) = u(rng) * 2.0;
    }
    return b;
}

std::vector<std::pair<double*, std::ptrdiff_t>> param_spans(nn::NetworkParams& p) {
    std::vector<std::pair<double*, std::ptrdiff_t>> s;
    for (auto& t : p.embeddings) s.push_back({t.data(), t.size()});
    auto add = [&](std::vector<nn::DenseParams>& dense,
                   std::vector<std::optional<nn::BatchNormParams>>& bns) {
        for (std::size_t l = 0; l < dense.size(); ++l) {
            s.push_back({dense[l].W.data(), dense[l].W.size()});
            s.push_back({dense[l].b.data(), dense[l].b.size()});
            if (bns[l]) {
                s.push_back({bns[l]->gamma.data(), bns[l]->gamma.size()});
                s.push_back({bns[l]->beta.data(), bns[l]->beta.size()});
            }
        }
    };
    add(p.emb_dense, p.emb_bn);
    add(p.fc_dense, p.fc_bn);
    return s;
}

std::vector<std::pair<const double*, std::ptrdiff_t>> grad_spans(const nn::NetworkGrads& g) {
    std::vector<std::pair<const double*, std::ptrdiff_t>> s;
    for (const auto& t : g.embeddings) s.push_back({t.data(), t.size()});
    auto add = [&](const std::vector<nn::NetworkGrads::Layer>& layers) {
        for (const auto& l : layers) {
            s.push_back({l.dW.data(), l.dW.size()});
            s.push_back({l.db.data(), l.db.size()});
            if (l.dgamma.size()) {
                s.push_back({l.dgamma.data(), l.dgamma.size()});
                s.push_back({l.dbeta.data(), l.dbeta.size()});
            }
        }
    };
    add(g.emb_layers);
    add(g.fc_layers);
    return s;
}

double loss_of(const nn::NetworkParams& p, const nn::Batch& b, nn::Mode mode,
               std::uint64_t rng_seed) {
    Rng rng(rng_seed);
    auto fwd = nn::forward(p, b, mode, rng);
    return nn::structural_loss(fwd.theta, b.prices, b.quantities).first;
}

/// Smallest |pre-activation| feeding a rectifier. Finite differences step
/// parameters by ~1e-5, so checks need inputs that keep every rectifier away
/// from its kink; the seeds below were chosen to satisfy this margin.
double min_relu_margin(const nn::Tape& tape, const nn::NetworkArch& arch) {
    double m = 1e9;
    auto scan = [&](const std::vector<nn::DenseSpec>& specs,
                    const std::vector<nn::LayerTape>& ts) {
        for (std::size_t l = 0; l < specs.size(); ++l)
            if (specs[l].relu) m = std::min(m, ts[l].pre_act.cwiseAbs().minCoeff());
    };
    scan(arch.emb_layers, tape.emb_layers);
    scan(arch.fc_layers, tape.fc_layers);
    return m;
}

/// Central-difference check of the full analytic gradient.
double max_gradient_rel_err(nn::NetworkParams& p, const nn::Batch& batch, nn::Mode mode) {
    const std::uint64_t mask_seed = 99;
    Rng rng(mask_seed);
    auto fwd = nn::forward(p, batch, mode, rng);
    REQUIRE(min_relu_margin(fwd.tape, p.arch) > 1.2e-4);
    auto [loss, dtheta] = nn::structural_loss(fwd.theta, batch.prices, batch.quantities);
    (void)loss;
    auto grads = nn::backward(p, fwd.tape, dtheta);

    auto ps = param_spans(p);
    auto gs = grad_spans(grads);
    REQUIRE(ps.size() == gs.size());

    const double h = 1e-5;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        REQUIRE(ps[i].second == gs[i].second);
        for (std::ptrdiff_t k = 0; k < ps[i].second; ++k) {
            double* w = ps[i].first + k;
            const double saved = *w;
            *w = saved + h;
            const double fp = loss_of(p, batch, mode, mask_seed);
            *w = saved - h;
            const double fm = loss_of(p, batch, mode, mask_seed);
            *w = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = gs[i].first[k];
            // Floor keeps finite-difference roundoff noise on near-zero
            // entries from masquerading as relative error.
            max_rel = std::max(max_rel, oracles::rel_err(an, fd, 1e-4));
        }
    }
    return max_rel;
}

}  // namespace

TEST_CASE("init_params is deterministic with zero biases and fan-in bounded weights") {
    auto arch = toy_arch(true, 0.1);
    auto p1 = nn::init_params(arch, 42);
    auto p2 = nn::init_params(arch, 42);
    REQUIRE(p1.embeddings[0] == p2.embeddings[0]);
    for (std::size_t l = 0; l < p1.fc_dense.size(); ++l) {
        REQUIRE(p1.fc_dense[l].W == p2.fc_dense[l].W);
        REQUIRE(p1.fc_dense[l].b.isZero(0.0));
        const double bound = std::sqrt(3.0 / arch.fc_layers[l].in);
        REQUIRE(p1.fc_dense[l].W.cwiseAbs().maxCoeff() <= bound);
    }
    for (const auto& bn : p1.fc_bn)
        if (bn) {
            REQUIRE(bn->gamma.isOnes());
            REQUIRE(bn->beta.isZero(0.0));
            REQUIRE(bn->running_var.isOnes());
        }
    auto p3 = nn::init_params(arch, 43);
    REQUIRE(p1.embeddings[0] != p3.embeddings[0]);
}

TEST_CASE("constant network outputs the final bias everywhere") {
    auto arch = toy_arch(true, 0.1);
    auto params = nn::init_params(arch, 1);
    for (auto& t : params.embeddings) t.setZero();
    for (auto& d : params.emb_dense) {
        d.W.setZero();
        d.b.setZero();
    }
    for (auto& d : params.fc_dense) {
        d.W.setZero();
        d.b.setZero();
    }
    params.fc_dense.back().b << 3.25, -1.5;

    auto batch = toy_batch(6, 2);
    for (nn::Mode mode : {nn::Mode::Train, nn::Mode::Eval}) {
        Rng rng(5);
        auto fwd = nn::forward(params, batch, mode, rng);
        for (Eigen::Index i = 0; i < fwd.theta.rows(); ++i) {
            REQUIRE(fwd.theta(i, 0) == Catch::Approx(3.25).margin(1e-12));
            REQUIRE(fwd.theta(i, 1) == Catch::Approx(-1.5).margin(1e-12));
        }
    }
}

TEST_CASE("eval forward is deterministic and ignores prices") {
    auto arch = toy_arch(true, 0.3);
    auto params = nn::init_params(arch, 7);
    auto batch = toy_batch(8, 3);

    Rng r1(1), r2(2);
    auto a = nn::forward(params, batch, nn::Mode::Eval, r1);
    auto b = nn::forward(params, batch, nn::Mode::Eval, r2);
    REQUIRE(a.theta == b.theta);

    nn::Batch perturbed = batch;
    perturbed.prices.array() += 17.0;
    Rng r3(1);
    auto c = nn::forward(params, perturbed, nn::Mode::Eval, r3);
    REQUIRE(a.theta == c.theta);

    // Train mode with the same mask stream is also price-invariant.
    Rng r4(11), r5(11);
    auto d = nn::forward(params, batch, nn::Mode::Train, r4);
    auto e = nn::forward(params, perturbed, nn::Mode::Train, r5);
    REQUIRE(d.theta == e.theta);
}

TEST_CASE("train-mode batch norm standardizes pre-activations") {
    auto arch = toy_arch(true, 0.0);
    auto params = nn::init_params(arch, 11);
    auto batch = toy_batch(64, 12);
    batch.numeric *= 100.0;  // large spread so the eps in 1/sqrt(var+eps) is negligible

    Rng rng(4);
    auto fwd = nn::forward(params, batch, nn::Mode::Train, rng);
    const auto& zhat = fwd.tape.fc_layers[0].zhat;
    const auto n = static_cast<double>(zhat.rows());
    for (Eigen::Index c = 0; c < zhat.cols(); ++c) {
        const double mean = zhat.col(c).mean();
        const double var = (zhat.col(c).array() - mean).square().sum() / n;
        REQUIRE(std::abs(mean) < 1e-6);
        REQUIRE(std::abs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("structural_loss analytic values and gradient") {
    // Perfect fit: zero loss, zero gradient.
    Eigen::MatrixXd theta(2, 2);
    Eigen::VectorXd prices(2), q(2);
    prices << 1.0, 2.0;
    theta << 5.0, -1.0, 7.0, -2.0;
    q << 4.0, 3.0;  // 5-1*1=4, 7-2*2=3
    auto [loss0, grad0] = nn::structural_loss(theta, prices, q);
    REQUIRE(loss0 == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(grad0.cwiseAbs().maxCoeff() < 1e-14);

    // Hand arithmetic: theta=(0,0), P=2, q=3 -> loss 9, grad (-6, -12).
    Eigen::MatrixXd t1 = Eigen::MatrixXd::Zero(1, 2);
    Eigen::VectorXd p1(1), q1(1);
    p1 << 2.0;
    q1 << 3.0;
    auto [loss1, grad1] = nn::structural_loss(t1, p1, q1);
    REQUIRE(loss1 == Catch::Approx(9.0));
    REQUIRE(grad1(0, 0) == Catch::Approx(-6.0));
    REQUIRE(grad1(0, 1) == Catch::Approx(-12.0));
}

TEST_CASE("structural_loss gradient matches finite differences") {
    Rng rng(17);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Eigen::MatrixXd theta(7, 2);
    Eigen::VectorXd prices(7), q(7);
    for (int i = 0; i < 7; ++i) {
        theta(i, 0) = u(rng);
        theta(i, 1) = u(rng);
        prices(i) = std::abs(u(rng)) + 0.2;
        q(i) = u(rng);
    }
    auto [loss, grad] = nn::structural_loss(theta, prices, q);
    (void)loss;
    const double h = 1e-6;
    for (int i = 0; i < 7; ++i)
        for (int c = 0; c < 2; ++c) {
            Eigen::MatrixXd tp = theta, tm = theta;
            tp(i, c) += h;
            tm(i, c) -= h;
            const double fd = (nn::structural_loss(tp, prices, q).first -
                               nn::structural_loss(tm, prices, q).first) /
                              (2.0 * h);
            REQUIRE(oracles::rel_err(grad(i, c), fd) < 1e-6);
        }
}

TEST_CASE("zero loss gradient yields zero parameter gradients") {
    auto arch = toy_arch(true, 0.0);
    auto params = nn::init_params(arch, 3);
    auto batch = toy_batch(5, 4);
    Rng rng(1);
    auto fwd = nn::forward(params, batch, nn::Mode::Train, rng);
    auto grads = nn::backward(params, fwd.tape, Eigen::MatrixXd::Zero(5, 2));
    for (auto span : grad_spans(grads))
        for (std::ptrdiff_t k = 0; k < span.second; ++k) REQUIRE(span.first[k] == 0.0);
}

TEST_CASE("backpropagation matches finite differences: plain dense stack") {
    auto arch = toy_arch(false, 0.0);
    auto params = nn::init_params(arch, 21);
    auto batch = toy_batch(32, 6);
    REQUIRE(max_gradient_rel_err(params, batch, nn::Mode::Train) <= 1e-5);
}

TEST_CASE("backpropagation matches finite differences: batch norm in train mode") {
    auto arch = toy_arch(true, 0.0);
    auto params = nn::init_params(arch, 23);
    auto batch = toy_batch(32, 1);
    REQUIRE(max_gradient_rel_err(params, batch, nn::Mode::Train) <= 1e-5);
}

TEST_CASE("backpropagation matches finite differences: frozen dropout masks") {
    auto arch = toy_arch(false, 0.25);
    auto params = nn::init_params(arch, 129);
    auto batch = toy_batch(32, 8);
    REQUIRE(max_gradient_rel_err(params, batch, nn::Mode::Train) <= 1e-5);
}

TEST_CASE("backpropagation matches finite differences: eval mode") {
    auto arch = toy_arch(true, 0.2);
    auto params = nn::init_params(arch, 27);
    auto batch = toy_batch(32, 7);
    REQUIRE(max_gradient_rel_err(params, batch, nn::Mode::Eval) <= 1e-5);
}

TEST_CASE("untouched embedding rows receive zero gradient") {
    auto arch = toy_arch(false, 0.0);
    auto params = nn::init_params(arch, 31);
    auto batch = toy_batch(6, 32);
    for (Eigen::Index i = 0; i < 6; ++i) batch.categorical[0](i) = i % 2;  // rows 0,1 only
    Rng rng(1);
    auto fwd = nn::forward(params, batch, nn::Mode::Train, rng);
    auto [loss, dtheta] = nn::structural_loss(fwd.theta, batch.prices, batch.quantities);
    (void)loss;
    auto grads = nn::backward(params, fwd.tape, dtheta);
    REQUIRE(grads.embeddings[0].row(2).isZero(0.0));
    REQUIRE(!grads.embeddings[0].row(0).isZero(0.0));
}

TEST_CASE("single linear layer gradient equals the least-squares gradient") {
    nn::NetworkArch arch;
    arch.embeddings = {{3, 2}};
    arch.emb_layers = {{2, 64, false, false, 0.0}};
    arch.n_numeric = 1;
    arch.fc_layers = {{65, 2, false, false, 0.0}};
    arch.validate();
    auto params = nn::init_params(arch, 33);
    auto batch = toy_batch(9, 34);
    batch.numeric = batch.numeric.leftCols(1).eval();

    Rng rng(1);
    auto fwd = nn::forward(params, batch, nn::Mode::Train, rng);
    auto [loss, dtheta] = nn::structural_loss(fwd.theta, batch.prices, batch.quantities);
    (void)loss;
    auto grads = nn::backward(params, fwd.tape, dtheta);

    // Closed form: dL/dW = H^T [2r/n, 2(r.P)/n] with H the layer input.
    const Eigen::MatrixXd& H = fwd.tape.fc_input;
    const auto n = static_cast<double>(H.rows());
    Eigen::VectorXd r =
        fwd.theta.col(0) + fwd.theta.col(1).cwiseProduct(batch.prices) - batch.quantities;
    Eigen::MatrixXd expected(H.cols(), 2);
    expected.col(0) = H.transpose() * (2.0 / n * r);
    expected.col(1) = H.transpose() * (2.0 / n * r.cwiseProduct(batch.prices));
    REQUIRE((grads.fc_layers[0].dW - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("first Adam step moves a parameter by about the learning rate") {
    auto arch = toy_arch(false, 0.0);
    auto params = nn::init_params(arch, 41);
    auto state = nn::OptimizerState::init(params, 1e-3, 1000000);
    nn::NetworkGrads grads = state.m;  // zero tensors with matching shapes
    grads.fc_layers.back().db(0) = 2.0;

    const double before = params.fc_dense.back().b(0);
    const double other = params.fc_dense.back().b(1);
    nn::adam_step(params, grads, state);
    REQUIRE(params.fc_dense.back().b(0) - before == Catch::Approx(-1e-3).epsilon(1e-6));
    REQUIRE(params.fc_dense.back().b(1) == other);
    REQUIRE(state.step == 1);
}

TEST_CASE("zero gradients leave parameters untouched") {
    auto arch = toy_arch(true, 0.0);
    auto params = nn::init_params(arch, 43);
    auto state = nn::OptimizerState::init(params, 1e-2, 10);
    auto before = params.fc_dense[0].W;
    nn::NetworkGrads zeros = state.m;
    for (int i = 0; i < 5; ++i) nn::adam_step(params, zeros, state);
    REQUIRE(params.fc_dense[0].W == before);
}

TEST_CASE("Adam descends a quadratic bowl monotonically after warm-up") {
    auto arch = toy_arch(false, 0.0);
    auto params = nn::init_params(arch, 45);
    auto state = nn::OptimizerState::init(params, 0.015, 1000000);
    nn::NetworkGrads grads = state.m;

    params.embeddings[0](0, 0) = 1.0;
    double prev = 1.0;
    for (int step = 0; step < 50; ++step) {
        const double w = params.embeddings[0](0, 0);
        grads.embeddings[0](0, 0) = 2.0 * w;
        nn::adam_step(params, grads, state);
        const double now = std::abs(params.embeddings[0](0, 0));
        if (step >= 10) REQUIRE(now <= prev + 1e-12);
        prev = now;
    }
    REQUIRE(prev < 0.5);
}

TEST_CASE("learning rate halves per completed epoch") {
    REQUIRE(nn::lr_schedule(0, 100, 1e-3) == Catch::Approx(1e-3));
    REQUIRE(nn::lr_schedule(99, 100, 1e-3) == Catch::Approx(1e-3));
    REQUIRE(nn::lr_schedule(200, 100, 1e-3) == Catch::Approx(2.5e-4));
    double last = 1e-3;
    for (long s = 0; s < 1000; s += 37) {
        const double lr = nn::lr_schedule(s, 100, 1e-3);
        REQUIRE(lr <= last + 1e-18);
        last = lr;
    }
}

TEST_CASE("inverted dropout preserves activation expectations") {
    nn::NetworkArch arch;
    arch.embeddings = {{1, 2}};
    arch.emb_layers = {{2, 64, false, false, 0.3}};
    arch.n_numeric = 0;
    arch.fc_layers = {{64, 2, false, false, 0.0}};
    arch.validate();
    auto params = nn::init_params(arch, 51);

    nn::Batch batch;
    batch.categorical = {Eigen::VectorXi::Zero(1)};
    batch.numeric.resize(1, 0);
    batch.prices = Eigen::VectorXd::Ones(1);
    batch.quantities = Eigen::VectorXd::Ones(1);

    Rng eval_rng(1);
    const double eval_value =
        nn::forward(params, batch, nn::Mode::Eval, eval_rng).theta(0, 0);

    const int n_draws = 20000;
    Rng rng(52);
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n_draws; ++i) {
        const double v = nn::forward(params, batch, nn::Mode::Train, rng).theta(0, 0);
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / n_draws;
    const double sd = std::sqrt(std::max(0.0, sumsq / n_draws - mean * mean));
    const double three_sigma = 3.0 * sd / std::sqrt(static_cast<double>(n_draws));
    REQUIRE(std::abs(mean - eval_value) <= three_sigma + 1e-12);
}

TEST_CASE("running statistics converge on a stationary stream") {
    nn::NetworkArch arch;
    arch.embeddings = {{1, 1}};
    arch.emb_layers = {{1, 64, false, false, 0.0}};
    arch.n_numeric = 2;
    arch.fc_layers = {{66, 4, false, true, 0.0}, {4, 2, false, false, 0.0}};
    arch.validate();
    auto params = nn::init_params(arch, 61);
    params.embeddings[0].setZero();
    params.emb_dense[0].W.setZero();
    params.fc_dense[0].W.setZero();
    params.fc_dense[0].W(64, 0) = 1.0;  // route numeric columns into the BN layer
    params.fc_dense[0].W(65, 1) = 1.0;

    Rng rng(62);
    std::normal_distribution<double> n0(1.0, 2.0), n1(-1.0, 3.0);
    const int batch_size = 512;
    for (int update = 0; update < 1000; ++update) {
        nn::Batch batch;
        batch.categorical = {Eigen::VectorXi::Zero(batch_size)};
        batch.numeric.resize(batch_size, 2);
        for (int i = 0; i < batch_size; ++i) {
            batch.numeric(i, 0) = n0(rng);
            batch.numeric(i, 1) = n1(rng);
        }
        batch.prices = Eigen::VectorXd::Ones(batch_size);
        batch.quantities = Eigen::VectorXd::Ones(batch_size);
        Rng fwd_rng(update);
        auto fwd = nn::forward(params, batch, nn::Mode::Train, fwd_rng);
        nn::update_running_stats(params, fwd.tape, 0.01);
    }
    const auto& bn = *params.fc_bn[0];
    REQUIRE(std::abs(bn.running_mean(0) - 1.0) <= 0.01 * 1.0 + 0.005);
    REQUIRE(std::abs(bn.running_mean(1) + 1.0) <= 0.01 * 1.0 + 0.005);
    REQUIRE(std::abs(bn.running_var(0) - 4.0) <= 0.01 * 4.0);
    REQUIRE(std::abs(bn.running_var(1) - 9.0) <= 0.01 * 9.0);
}

TEST_CASE("model serialization round trips bit-exactly") {
    auto arch = toy_arch(true, 0.15);
    auto params = nn::init_params(arch, 71);
    // Make running stats non-trivial before saving.
    auto batch = toy_batch(32, 72);
    Rng rng(73);
    auto fwd = nn::forward(params, batch, nn::Mode::Train, rng);
    nn::update_running_stats(params, fwd.tape);

    auto state = nn::OptimizerState::init(params, 1e-3, 17);
    auto [loss, dtheta] = nn::structural_loss(fwd.theta, batch.prices, batch.quantities);
    (void)loss;
    auto grads = nn::backward(params, fwd.tape, dtheta);
    nn::adam_step(params, grads, state);
    nn::adam_step(params, grads, state);

    std::stringstream ss;
    nn::save_params(ss, params);
    nn::save_optimizer(ss, state);

    auto loaded = nn::load_params(ss);
    auto lstate = nn::load_optimizer(ss, loaded);

    REQUIRE(loaded.arch == params.arch);
    REQUIRE(loaded.embeddings[0] == params.embeddings[0]);
    for (std::size_t l = 0; l < params.fc_dense.size(); ++l) {
        REQUIRE(loaded.fc_dense[l].W == params.fc_dense[l].W);
        REQUIRE(loaded.fc_dense[l].b == params.fc_dense[l].b);
        if (params.fc_bn[l]) {
            REQUIRE(loaded.fc_bn[l]->running_mean == params.fc_bn[l]->running_mean);
            REQUIRE(loaded.fc_bn[l]->running_var == params.fc_bn[l]->running_var);
        }
    }
    REQUIRE(lstate.step == state.step);
    REQUIRE(lstate.base_lr == state.base_lr);
    REQUIRE(lstate.steps_per_epoch == state.steps_per_epoch);
    REQUIRE(lstate.m.fc_layers[0].dW == state.m.fc_layers[0].dW);
    REQUIRE(lstate.v.fc_layers[2].dW == state.v.fc_layers[2].dW);
}

TEST_CASE("forward rejects out-of-vocabulary indices and bad shapes") {
    auto arch = toy_arch(false, 0.0);
    auto params = nn::init_params(arch, 81);
    auto batch = toy_batch(4, 82);
    batch.categorical[0](2) = 3;  // vocab is 3 -> invalid
    Rng rng(1);
    REQUIRE_THROWS_AS(nn::forward(params, batch, nn::Mode::Eval, rng), std::out_of_range);

    auto bad = toy_batch(4, 83);
    bad.numeric.resize(4, 5);
    REQUIRE_THROWS_AS(nn::forward(params, bad, nn::Mode::Eval, rng), std::invalid_argument);
}

TEST_CASE("backward rejects a tape from different params") {
    auto params_a = nn::init_params(toy_arch(false, 0.0), 91);
    auto params_b = nn::init_params(toy_arch(true, 0.0), 92);
    auto batch = toy_batch(4, 93);
    Rng rng(1);
    auto fwd = nn::forward(params_a, batch, nn::Mode::Train, rng);
    REQUIRE_THROWS_AS(nn::backward(params_b, fwd.tape, Eigen::MatrixXd::Zero(4, 2)),
                      std::invalid_argument);
}
