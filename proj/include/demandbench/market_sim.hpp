#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <limits>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "demandbench/common.hpp"
#include "demandbench/config.hpp"
#include "demandbench/csv.hpp"

namespace demandbench::sim {

/// Parameters of the synthetic logit market. Consumers choose among
/// n_products each day; every product carries n_sig_features characteristics
/// that enter utility plus n_ima_features that are observed but inert.
/// Prices follow a Bernoulli(epsilon) walk with relative normal shocks.
struct MarketConfig {
    int n_products = 25;
    int n_sig_features = 6;
    int n_ima_features = 4;
    long n_consumers = 100000;
    int n_days = 1000;
    double epsilon = 0.01;
    double price_shock_sd = 0.05;
    std::uint64_t seed = 1;
    double beta_min = -4.5;
    double beta_max = -1.0;
    double delta_min = -1.0;
    double delta_max = 1.0;
    double init_price_min = 0.5;
    double init_price_max = 1.5;
    bool with_competitor = true;
    double competitor_noise_sd = 0.1;

    int n_features() const { return n_sig_features + n_ima_features; }

    void validate() const {
        if (n_products < 1) throw ConfigError("market: n_products must be >= 1");
        if (n_sig_features < 1) throw ConfigError("market: n_sig_features must be >= 1");
        if (n_ima_features < 0) throw ConfigError("market: n_ima_features must be >= 0");
        if (n_consumers < 0) throw ConfigError("market: n_consumers must be >= 0");
        if (n_days < 1) throw ConfigError("market: n_days must be >= 1");
        if (epsilon < 0.0 || epsilon > 1.0)
            throw ConfigError("market: epsilon must lie in [0, 1]");
        if (price_shock_sd < 0.0) throw ConfigError("market: price_shock_sd must be >= 0");
        if (beta_min > beta_max || beta_max >= 0.0)
            throw ConfigError("market: beta range must be negative with beta_min <= beta_max");
        if (delta_min > delta_max) throw ConfigError("market: bad delta range");
        if (init_price_min <= 0.0 || init_price_min > init_price_max)
            throw ConfigError("market: initial price range must be positive");
        if (competitor_noise_sd < 0.0)
            throw ConfigError("market: competitor_noise_sd must be >= 0");
    }

    static MarketConfig from_config(const KeyValueConfig& cfg,
                                    const std::string& prefix = "market.") {
        MarketConfig m;
        m.n_products = static_cast<int>(cfg.get_long(prefix + "n_products", m.n_products));
        m.n_sig_features =
            static_cast<int>(cfg.get_long(prefix + "n_sig_features", m.n_sig_features));
        m.n_ima_features =
            static_cast<int>(cfg.get_long(prefix + "n_ima_features", m.n_ima_features));
        m.n_consumers = cfg.get_long(prefix + "n_consumers", m.n_consumers);
        m.n_days = static_cast<int>(cfg.get_long(prefix + "n_days", m.n_days));
        m.epsilon = cfg.get_double(prefix + "epsilon", m.epsilon);
        m.price_shock_sd = cfg.get_double(prefix + "price_shock_sd", m.price_shock_sd);
        m.seed = static_cast<std::uint64_t>(cfg.get_long(prefix + "seed", 1));
        m.beta_min = cfg.get_double(prefix + "beta_min", m.beta_min);
        m.beta_max = cfg.get_double(prefix + "beta_max", m.beta_max);
        m.delta_min = cfg.get_double(prefix + "delta_min", m.delta_min);
        m.delta_max = cfg.get_double(prefix + "delta_max", m.delta_max);
        m.init_price_min = cfg.get_double(prefix + "init_price_min", m.init_price_min);
        m.init_price_max = cfg.get_double(prefix + "init_price_max", m.init_price_max);
        m.with_competitor = cfg.get_bool(prefix + "with_competitor", m.with_competitor);
        m.competitor_noise_sd =
            cfg.get_double(prefix + "competitor_noise_sd", m.competitor_noise_sd);
        m.validate();
        return m;
    }
};

/// Products with their observed characteristics and the simulation's ground
/// truth. Significant feature columns come first internally; estimators only
/// ever see the plain feature matrix, never the split or the coefficients.
struct ProductCatalog {
    Eigen::MatrixXd features;        // n_products x n_features
    Eigen::VectorXd beta_true;       // ground truth, all negative
    Eigen::VectorXd delta;           // length n_features, zero on imaginary columns
    Eigen::VectorXd initial_prices;  // positive
    int n_sig = 0;

    int n_products() const { return static_cast<int>(features.rows()); }
    int n_features() const { return static_cast<int>(features.cols()); }

    /// Estimator-facing view: characteristics only.
    const Eigen::MatrixXd& estimator_features() const { return features; }
};

struct PanelRow {
    int product_id;
    int day;
    double price;
    long sales;
    double availability;
    std::optional<double> competitor_price;
};

/// Daily (product, day) records; the common currency between the simulator,
/// the feature pipeline and both estimators. Rows are ordered day-major.
struct SalesPanel {
    std::vector<PanelRow> rows;

    int n_products() const {
        int n = -1;
        for (const auto& r : rows) n = std::max(n, r.product_id);
        return n + 1;
    }
    int n_days() const {
        int n = -1;
        for (const auto& r : rows) n = std::max(n, r.day);
        return n + 1;
    }
};

inline ProductCatalog generate_catalog(const MarketConfig& config) {
    config.validate();
    Rng rng = derive_rng(config.seed, 0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_real_distribution<double> beta_dist(config.beta_min, config.beta_max);
    std::uniform_real_distribution<double> delta_dist(config.delta_min, config.delta_max);
    std::uniform_real_distribution<double> price_dist(config.init_price_min,
                                                      config.init_price_max);

    const int n = config.n_products;
    const int k = config.n_features();
    ProductCatalog cat;
    cat.n_sig = config.n_sig_features;
    cat.features.resize(n, k);
    for (int j = 0; j < n; ++j)
        for (int f = 0; f < k; ++f) cat.features(j, f) = u01(rng);
    cat.beta_true.resize(n);
    for (int j = 0; j < n; ++j) cat.beta_true(j) = beta_dist(rng);
    cat.delta = Eigen::VectorXd::Zero(k);
    for (int f = 0; f < config.n_sig_features; ++f) cat.delta(f) = delta_dist(rng);
    cat.initial_prices.resize(n);
    for (int j = 0; j < n; ++j) cat.initial_prices(j) = price_dist(rng);
    return cat;
}

/// u = beta * price + delta . c_sig
inline double utility(double beta, double price, const Eigen::VectorXd& delta,
                      const Eigen::VectorXd& c_sig) {
    if (delta.size() != c_sig.size())
        throw std::invalid_argument("utility: delta and c_sig dimensions differ");
    return beta * price + delta.dot(c_sig);
}

/// Utilities of every product at the given price vector.
inline Eigen::VectorXd utilities(const ProductCatalog& catalog,
                                 const Eigen::VectorXd& prices) {
    if (prices.size() != catalog.n_products())
        throw std::invalid_argument("utilities: price vector does not match catalog");
    const Eigen::VectorXd delta_sig = catalog.delta.head(catalog.n_sig);
    Eigen::VectorXd u(catalog.n_products());
    for (int j = 0; j < catalog.n_products(); ++j) {
        const Eigen::VectorXd c_sig = catalog.features.row(j).head(catalog.n_sig);
        u(j) = utility(catalog.beta_true(j), prices(j), delta_sig, c_sig);
    }
    return u;
}

/// Softmax choice probabilities, computed with max-subtraction so that large
/// utilities cannot overflow.
inline Eigen::VectorXd choice_probabilities(const Eigen::VectorXd& utilities) {
    if (utilities.size() == 0)
        throw std::invalid_argument("choice_probabilities: empty utility vector");
    if (!utilities.allFinite())
        throw std::invalid_argument("choice_probabilities: non-finite utility");
    const double m = utilities.maxCoeff();
    Eigen::VectorXd p = (utilities.array() - m).exp().matrix();
    p /= p.sum();
    return p;
}

/// One day of consumer choices: a multinomial draw of n_consumers over the
/// choice probabilities, realized as a chain of conditional binomials.
inline Eigen::Matrix<long, Eigen::Dynamic, 1> simulate_day(
    const Eigen::VectorXd& probabilities, long n_consumers, Rng& rng) {
    const auto n = probabilities.size();
    if (n == 0) throw std::invalid_argument("simulate_day: empty probability vector");
    if (n_consumers < 0) throw std::invalid_argument("simulate_day: negative n_consumers");
    if (probabilities.minCoeff() < 0.0 || !probabilities.allFinite() ||
        std::abs(probabilities.sum() - 1.0) > 1e-9)
        throw std::invalid_argument("simulate_day: invalid probability vector");

    Eigen::Matrix<long, Eigen::Dynamic, 1> sales =
        Eigen::Matrix<long, Eigen::Dynamic, 1>::Zero(n);
    long remaining = n_consumers;
    double prob_left = 1.0;
    for (Eigen::Index j = 0; j + 1 < n && remaining > 0; ++j) {
        const double pj = std::clamp(probabilities(j) / prob_left, 0.0, 1.0);
        long s = 0;
        if (pj >= 1.0) {
            s = remaining;
        } else if (pj > 0.0) {
            std::binomial_distribution<long> bin(remaining, pj);
            s = bin(rng);
        }
        sales(j) = s;
        remaining -= s;
        prob_left -= probabilities(j);
        if (prob_left <= 0.0) break;
    }
    sales(n - 1) += remaining;
    return sales;
}

/// Bernoulli(epsilon) price walk step: a changing product gets a relative
/// shock (1 + z), z ~ Normal(0, shock_sd^2), floored so prices stay positive.
inline Eigen::VectorXd step_prices(const Eigen::VectorXd& prices, double epsilon,
                                   double shock_sd, Rng& rng) {
    if (prices.size() > 0 && prices.minCoeff() <= 0.0)
        throw std::invalid_argument("step_prices: prices must be positive");
    std::bernoulli_distribution change(epsilon);
    std::normal_distribution<double> shock(0.0, shock_sd > 0.0 ? shock_sd : 1.0);
    Eigen::VectorXd out = prices;
    for (Eigen::Index j = 0; j < prices.size(); ++j) {
        if (epsilon <= 0.0 || !change(rng)) continue;
        const double z = shock_sd > 0.0 ? shock(rng) : 0.0;
        out(j) = std::max(prices(j) * std::max(1.0 + z, 0.01),
                          std::numeric_limits<double>::min());
    }
    return out;
}

/// Runs the full data generating process: catalog, then a day loop of
/// choices -> multinomial sales -> price step.
inline std::pair<ProductCatalog, SalesPanel> simulate_panel(const MarketConfig& config) {
    config.validate();
    ProductCatalog catalog = generate_catalog(config);
    Rng rng = derive_rng(config.seed, 1);
    std::normal_distribution<double> comp_noise(0.0, 1.0);

    SalesPanel panel;
    panel.rows.reserve(static_cast<std::size_t>(config.n_products) * config.n_days);
    Eigen::VectorXd prices = catalog.initial_prices;
    for (int t = 0; t < config.n_days; ++t) {
        const Eigen::VectorXd u = utilities(catalog, prices);
        const Eigen::VectorXd pi = choice_probabilities(u);
        const auto sales = simulate_day(pi, config.n_consumers, rng);
        for (int j = 0; j < config.n_products; ++j) {
            PanelRow row;
            row.product_id = j;
            row.day = t;
            row.price = prices(j);
            row.sales = sales(j);
            row.availability = 1.0;
            if (config.with_competitor) {
                const double z = comp_noise(rng) * config.competitor_noise_sd;
                row.competitor_price = prices(j) * std::exp(z);
            }
            panel.rows.push_back(row);
        }
        prices = step_prices(prices, config.epsilon, config.price_shock_sd, rng);
    }
    return {std::move(catalog), std::move(panel)};
}

/// Own-price point elasticity of the logit choice probability,
/// e_j = beta_j * p_j * (1 - pi_j). Ground truth for estimator comparisons.
inline Eigen::VectorXd true_point_elasticity(const ProductCatalog& catalog,
                                             const Eigen::VectorXd& prices) {
    const Eigen::VectorXd pi = choice_probabilities(utilities(catalog, prices));
    return (catalog.beta_true.array() * prices.array() * (1.0 - pi.array())).matrix();
}

// ---------------------------------------------------------------------------
// CSV import/export
// ---------------------------------------------------------------------------

inline void save_panel(const SalesPanel& panel, const std::string& path) {
    csv::Writer w(path);
    w.row({"product_id", "day", "price", "sales", "availability", "competitor_price"});
    for (const auto& r : panel.rows) {
        std::optional<double> cp = r.competitor_price;
        w.row({std::to_string(r.product_id), std::to_string(r.day), csv::Writer::num(r.price),
               std::to_string(r.sales), csv::Writer::num(r.availability),
               csv::Writer::opt(cp)});
    }
}

inline SalesPanel load_panel(const std::string& path) {
    const csv::Table t = csv::read(path);
    const int c_id = t.column("product_id");
    const int c_day = t.column("day");
    const int c_price = t.column("price");
    const int c_sales = t.column("sales");
    const int c_avail = t.column("availability");
    const int c_comp = t.column("competitor_price");
    SalesPanel panel;
    panel.rows.reserve(t.rows.size());
    for (const auto& cells : t.rows) {
        PanelRow r;
        r.product_id = static_cast<int>(csv::parse_long(cells[c_id], "product_id"));
        r.day = static_cast<int>(csv::parse_long(cells[c_day], "day"));
        r.price = csv::parse_double(cells[c_price], "price");
        r.sales = csv::parse_long(cells[c_sales], "sales");
        r.availability = csv::parse_double(cells[c_avail], "availability");
        if (!cells[c_comp].empty())
            r.competitor_price = csv::parse_double(cells[c_comp], "competitor_price");
        panel.rows.push_back(r);
    }
    return panel;
}

/// Full catalog record including the true coefficients. Kept separate from
/// estimator inputs; estimators read the features file instead.
inline void save_catalog_truth(const ProductCatalog& catalog, const std::string& path) {
    csv::Writer w(path);
    std::vector<std::string> header{"product_id", "beta_true"};
    for (int f = 0; f < catalog.n_features(); ++f) header.push_back("f" + std::to_string(f));
    w.row(header);
    for (int j = 0; j < catalog.n_products(); ++j) {
        std::vector<std::string> cells{std::to_string(j),
                                       csv::Writer::num(catalog.beta_true(j))};
        for (int f = 0; f < catalog.n_features(); ++f)
            cells.push_back(csv::Writer::num(catalog.features(j, f)));
        w.row(cells);
    }
}

/// Estimator-facing catalog export: characteristics only.
inline void save_catalog_features(const ProductCatalog& catalog, const std::string& path) {
    csv::Writer w(path);
    std::vector<std::string> header{"product_id"};
    for (int f = 0; f < catalog.n_features(); ++f) header.push_back("f" + std::to_string(f));
    w.row(header);
    for (int j = 0; j < catalog.n_products(); ++j) {
        std::vector<std::string> cells{std::to_string(j)};
        for (int f = 0; f < catalog.n_features(); ++f)
            cells.push_back(csv::Writer::num(catalog.features(j, f)));
        w.row(cells);
    }
}

/// Loads a feature matrix written by save_catalog_features (or the truth file;
/// any beta column is ignored). Returns rows ordered by product_id.
inline Eigen::MatrixXd load_catalog_features(const std::string& path) {
    const csv::Table t = csv::read(path);
    const int c_id = t.column("product_id");
    std::vector<int> fcols;
    for (std::size_t i = 0; i < t.header.size(); ++i)
        if (t.header[i].size() > 1 && t.header[i][0] == 'f' &&
            t.header[i].find_first_not_of("0123456789", 1) == std::string::npos)
            fcols.push_back(static_cast<int>(i));
    if (fcols.empty()) throw DataError("catalog: no feature columns f0..fK found");
    Eigen::MatrixXd m(t.rows.size(), fcols.size());
    std::vector<int> ids(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        ids[r] = static_cast<int>(csv::parse_long(t.rows[r][c_id], "product_id"));
        for (std::size_t c = 0; c < fcols.size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                csv::parse_double(t.rows[r][fcols[c]], t.header[fcols[c]]);
    }
    for (std::size_t r = 0; r < ids.size(); ++r)
        if (ids[r] != static_cast<int>(r))
            throw DataError("catalog: product_id rows must be 0..N-1 in order");
    return m;
}

}  // namespace demandbench::sim
