#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "demandbench/market_sim.hpp"
#include "oracles.hpp"

using namespace demandbench;
using namespace demandbench::sim;

namespace {

MarketConfig small_config() {
    MarketConfig c;
    c.n_products = 5;
    c.n_sig_features = 3;
    c.n_ima_features = 2;
    c.n_consumers = 1000;
    c.n_days = 20;
    c.seed = 7;
    return c;
}

}  // namespace

TEST_CASE("generate_catalog draws negative betas in range with zeroed imaginary deltas") {
    MarketConfig c;
    c.n_products = 25;
    c.n_sig_features = 6;
    c.n_ima_features = 4;
    c.seed = 3;
    auto cat = generate_catalog(c);

    REQUIRE(cat.n_products() == 25);
    REQUIRE(cat.n_features() == 10);
    for (int j = 0; j < 25; ++j) {
        REQUIRE(cat.beta_true(j) < 0.0);
        REQUIRE(cat.beta_true(j) >= c.beta_min);
        REQUIRE(cat.beta_true(j) <= c.beta_max);
    }
    // Mean of 25 uniform draws on [-4.5, -1]; allow 4 standard deviations.
    const double sd_mean = (c.beta_max - c.beta_min) / std::sqrt(12.0) / 5.0;
    REQUIRE(std::abs(cat.beta_true.mean() - (-2.75)) < 4.0 * sd_mean);
    // Imaginary features never enter utility.
    for (int f = c.n_sig_features; f < cat.n_features(); ++f)
        REQUIRE(cat.delta(f) == 0.0);
}

TEST_CASE("generate_catalog minimal case and determinism") {
    MarketConfig c;
    c.n_products = 1;
    c.n_sig_features = 1;
    c.n_ima_features = 0;
    c.seed = 11;
    auto cat = generate_catalog(c);
    REQUIRE(cat.n_products() == 1);
    REQUIRE(cat.n_features() == 1);

    auto again = generate_catalog(c);
    REQUIRE(cat.features == again.features);
    REQUIRE(cat.beta_true == again.beta_true);
    REQUIRE(cat.delta == again.delta);
    REQUIRE(cat.initial_prices == again.initial_prices);
}

TEST_CASE("generate_catalog rejects invalid counts") {
    MarketConfig c = small_config();
    c.n_products = 0;
    REQUIRE_THROWS_AS(generate_catalog(c), ConfigError);
    c = small_config();
    c.epsilon = 1.5;
    REQUIRE_THROWS_AS(generate_catalog(c), ConfigError);
    c = small_config();
    c.beta_max = 0.5;
    REQUIRE_THROWS_AS(generate_catalog(c), ConfigError);
}

TEST_CASE("utility matches hand arithmetic") {
    Eigen::VectorXd delta(1), c(1);
    delta << 1.0;
    c << 3.0;
    REQUIRE(utility(-2.0, 1.0, delta, c) == Catch::Approx(1.0));

    Eigen::VectorXd zero = Eigen::VectorXd::Zero(4);
    Eigen::VectorXd feats = Eigen::VectorXd::Random(4);
    REQUIRE(utility(-1.5, 2.0, zero, feats) == Catch::Approx(-3.0));

    Eigen::VectorXd bad(3);
    REQUIRE_THROWS_AS(utility(-1.0, 1.0, bad, feats), std::invalid_argument);
}

TEST_CASE("utility matches elementwise recomputation on random inputs") {
    Rng rng(42);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 1 + static_cast<int>(rng() % 8);
        Eigen::VectorXd delta(k), c(k);
        for (int i = 0; i < k; ++i) {
            delta(i) = u(rng);
            c(i) = u(rng);
        }
        const double beta = -std::abs(u(rng)) - 0.1;
        const double price = std::abs(u(rng)) + 0.1;
        double expected = beta * price;
        for (int i = 0; i < k; ++i) expected += delta(i) * c(i);
        REQUIRE(utility(beta, price, delta, c) == Catch::Approx(expected).margin(1e-12));
    }
}

TEST_CASE("choice_probabilities analytic cases") {
    Eigen::VectorXd u(2);
    u << 0.0, 0.0;
    auto p = choice_probabilities(u);
    REQUIRE(p(0) == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(p(1) == Catch::Approx(0.5).margin(1e-15));

    u << std::log(2.0), 0.0;
    p = choice_probabilities(u);
    REQUIRE(p(0) == Catch::Approx(2.0 / 3.0).margin(1e-14));
    REQUIRE(p(1) == Catch::Approx(1.0 / 3.0).margin(1e-14));
}

TEST_CASE("choice_probabilities survives extreme utilities") {
    Eigen::VectorXd u(3);
    u << 700.0, 699.0, -50.0;
    auto p = choice_probabilities(u);
    REQUIRE(p.allFinite());
    REQUIRE(std::abs(p.sum() - 1.0) <= 1e-12);
    // Extended-precision softmax oracle on the same vector.
    long double z = 0.0L;
    for (int i = 0; i < 3; ++i) z += expl(static_cast<long double>(u(i)) - 700.0L);
    for (int i = 0; i < 3; ++i) {
        const long double pi = expl(static_cast<long double>(u(i)) - 700.0L) / z;
        REQUIRE(oracles::rel_err(p(i), static_cast<double>(pi)) < 1e-12);
    }
}

TEST_CASE("choice_probabilities normalization property") {
    Rng rng(5);
    std::uniform_real_distribution<double> u(-30.0, 30.0);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::VectorXd util(1 + static_cast<int>(rng() % 40));
        for (Eigen::Index i = 0; i < util.size(); ++i) util(i) = u(rng);
        auto p = choice_probabilities(util);
        REQUIRE(std::abs(p.sum() - 1.0) <= 1e-12);
        REQUIRE(p.minCoeff() > 0.0);
        REQUIRE(p.maxCoeff() < 1.0 + 1e-15);
    }
}

TEST_CASE("choice_probabilities rejects empty and non-finite input") {
    Eigen::VectorXd empty(0);
    REQUIRE_THROWS_AS(choice_probabilities(empty), std::invalid_argument);
    Eigen::VectorXd nan(2);
    nan << 0.0, std::nan("");
    REQUIRE_THROWS_AS(choice_probabilities(nan), std::invalid_argument);
}

TEST_CASE("simulate_day conserves consumers") {
    Rng rng(9);
    Eigen::VectorXd p1(1);
    p1 << 1.0;
    auto s = simulate_day(p1, 100000, rng);
    REQUIRE(s(0) == 100000);

    Eigen::VectorXd p2(2);
    p2 << 0.5, 0.5;
    s = simulate_day(p2, 100000, rng);
    REQUIRE(s.sum() == 100000);
    // Binomial mean/variance oracle: 50000 +- 4*sqrt(n*p*(1-p)).
    const double four_sigma = 4.0 * std::sqrt(100000 * 0.25);
    REQUIRE(std::abs(static_cast<double>(s(0)) - 50000.0) <= four_sigma);

    s = simulate_day(p2, 0, rng);
    REQUIRE(s(0) == 0);
    REQUIRE(s(1) == 0);
}

TEST_CASE("simulate_day conservation property on random probabilities") {
    Rng rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
        Eigen::VectorXd w(2 + static_cast<int>(rng() % 20));
        for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = u(rng) + 1e-3;
        Eigen::VectorXd p = w / w.sum();
        auto s = simulate_day(p, 12345, rng);
        REQUIRE(s.sum() == 12345);
        REQUIRE(s.minCoeff() >= 0);
    }
}

TEST_CASE("step_prices degenerate cases leave prices unchanged") {
    Rng rng(3);
    Eigen::VectorXd prices(4);
    prices << 1.0, 2.0, 0.5, 3.0;
    REQUIRE(step_prices(prices, 0.0, 0.05, rng) == prices);
    REQUIRE(step_prices(prices, 1.0, 0.0, rng) == prices);
}

TEST_CASE("step_prices change frequency follows the Bernoulli rate") {
    Rng rng(21);
    Eigen::VectorXd prices = Eigen::VectorXd::Constant(8, 1.0);
    const double eps = 0.01;
    const int days = 1000;
    Eigen::VectorXi changes = Eigen::VectorXi::Zero(8);
    Eigen::VectorXd p = prices;
    for (int t = 0; t < days; ++t) {
        Eigen::VectorXd next = step_prices(p, eps, 0.05, rng);
        for (int j = 0; j < 8; ++j)
            if (next(j) != p(j)) ++changes(j);
        p = next;
    }
    const double four_sigma = 4.0 * std::sqrt(days * eps * (1 - eps));
    for (int j = 0; j < 8; ++j)
        REQUIRE(std::abs(changes(j) - days * eps) <= four_sigma);
    REQUIRE(p.minCoeff() > 0.0);
}

TEST_CASE("step_prices preserves positivity under extreme shocks") {
    Rng rng(77);
    Eigen::VectorXd p = Eigen::VectorXd::Constant(3, 1.0);
    for (int t = 0; t < 2000; ++t) {
        p = step_prices(p, 1.0, 2.0, rng);
        REQUIRE(p.minCoeff() > 0.0);
    }
}

TEST_CASE("simulate_panel satisfies panel invariants") {
    MarketConfig c = small_config();
    auto [catalog, panel] = simulate_panel(c);

    REQUIRE(panel.rows.size() == static_cast<std::size_t>(c.n_products * c.n_days));
    // One row per (product, day), day-major ordering.
    for (int t = 0; t < c.n_days; ++t) {
        long day_sales = 0;
        for (int j = 0; j < c.n_products; ++j) {
            const auto& r = panel.rows[static_cast<std::size_t>(t) * c.n_products + j];
            REQUIRE(r.day == t);
            REQUIRE(r.product_id == j);
            REQUIRE(r.price > 0.0);
            REQUIRE(r.sales >= 0);
            day_sales += r.sales;
        }
        REQUIRE(day_sales == c.n_consumers);
    }
}

TEST_CASE("simulate_panel paper-scale shape") {
    MarketConfig c;  // defaults mirror the 25x1000 setup
    c.n_consumers = 1000;  // shrink consumers; row count is what matters here
    auto [catalog, panel] = simulate_panel(c);
    REQUIRE(panel.rows.size() == 25000u);
}

TEST_CASE("simulate_panel single product sells to everyone") {
    MarketConfig c = small_config();
    c.n_products = 1;
    c.n_sig_features = 1;
    c.n_ima_features = 0;
    auto [catalog, panel] = simulate_panel(c);
    for (const auto& r : panel.rows) REQUIRE(r.sales == c.n_consumers);
}

TEST_CASE("simulate_panel is deterministic given the seed") {
    MarketConfig c = small_config();
    auto [cat1, p1] = simulate_panel(c);
    auto [cat2, p2] = simulate_panel(c);
    REQUIRE(cat1.features == cat2.features);
    REQUIRE(p1.rows.size() == p2.rows.size());
    for (std::size_t i = 0; i < p1.rows.size(); ++i) {
        REQUIRE(p1.rows[i].price == p2.rows[i].price);
        REQUIRE(p1.rows[i].sales == p2.rows[i].sales);
        if (p1.rows[i].competitor_price)
            REQUIRE(*p1.rows[i].competitor_price == *p2.rows[i].competitor_price);
    }
}

TEST_CASE("raising one price weakly decreases its choice probability") {
    MarketConfig c = small_config();
    auto cat = generate_catalog(c);
    Eigen::VectorXd prices = cat.initial_prices;
    auto p0 = choice_probabilities(utilities(cat, prices));
    for (int j = 0; j < c.n_products; ++j) {
        Eigen::VectorXd bumped = prices;
        bumped(j) *= 1.10;
        auto p1 = choice_probabilities(utilities(cat, bumped));
        REQUIRE(p1(j) <= p0(j) + 1e-15);
    }
}

TEST_CASE("true_point_elasticity limits") {
    // Small-share limit: the competitor's huge utility drives pi_0 -> 0.
    ProductCatalog cat;
    cat.features.resize(2, 1);
    cat.features << 0.0, 20.0;
    cat.beta_true.resize(2);
    cat.beta_true << -2.0, -1.0;
    cat.delta.resize(1);
    cat.delta << 1.0;
    cat.initial_prices = Eigen::VectorXd::Ones(2);
    cat.n_sig = 1;
    Eigen::VectorXd prices = Eigen::VectorXd::Ones(2);
    auto e = true_point_elasticity(cat, prices);
    REQUIRE(e(0) == Catch::Approx(-2.0).margin(1e-3));

    // Monopoly: pi = 1 exactly, elasticity 0.
    ProductCatalog mono;
    mono.features.resize(1, 1);
    mono.features << 0.5;
    mono.beta_true.resize(1);
    mono.beta_true << -3.0;
    mono.delta.resize(1);
    mono.delta << 0.7;
    mono.initial_prices = Eigen::VectorXd::Ones(1);
    mono.n_sig = 1;
    auto e1 = true_point_elasticity(mono, Eigen::VectorXd::Ones(1));
    REQUIRE(e1(0) == 0.0);
}

TEST_CASE("true_point_elasticity matches finite differences of log shares") {
    MarketConfig c = small_config();
    c.n_products = 3;
    auto cat = generate_catalog(c);
    Eigen::VectorXd prices = cat.initial_prices;
    auto e = true_point_elasticity(cat, prices);
    const double h = 1e-6;
    for (int j = 0; j < 3; ++j) {
        auto log_share = [&](double log_scale) {
            Eigen::VectorXd p = prices;
            p(j) *= std::exp(log_scale);
            return std::log(choice_probabilities(utilities(cat, p))(j));
        };
        const double fd = (log_share(h) - log_share(-h)) / (2.0 * h);
        REQUIRE(oracles::rel_err(e(j), fd) < 1e-6);
    }
}

TEST_CASE("panel and catalog survive a CSV round trip") {
    MarketConfig c = small_config();
    auto [catalog, panel] = simulate_panel(c);

    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "demandbench_test_io";
    fs::create_directories(dir);
    const std::string panel_path = (dir / "panel.csv").string();
    const std::string truth_path = (dir / "catalog.csv").string();
    const std::string feat_path = (dir / "features.csv").string();

    save_panel(panel, panel_path);
    auto loaded = load_panel(panel_path);
    REQUIRE(loaded.rows.size() == panel.rows.size());
    for (std::size_t i = 0; i < panel.rows.size(); ++i) {
        REQUIRE(loaded.rows[i].product_id == panel.rows[i].product_id);
        REQUIRE(loaded.rows[i].day == panel.rows[i].day);
        REQUIRE(loaded.rows[i].price == panel.rows[i].price);
        REQUIRE(loaded.rows[i].sales == panel.rows[i].sales);
        REQUIRE(loaded.rows[i].competitor_price.has_value() ==
                panel.rows[i].competitor_price.has_value());
        if (panel.rows[i].competitor_price)
            REQUIRE(*loaded.rows[i].competitor_price == *panel.rows[i].competitor_price);
    }

    save_catalog_truth(catalog, truth_path);
    save_catalog_features(catalog, feat_path);
    Eigen::MatrixXd feats = load_catalog_features(feat_path);
    REQUIRE(feats == catalog.features);
    // The truth file carries beta but loading features from it ignores beta.
    Eigen::MatrixXd feats2 = load_catalog_features(truth_path);
    REQUIRE(feats2 == catalog.features);

    fs::remove_all(dir);
}
