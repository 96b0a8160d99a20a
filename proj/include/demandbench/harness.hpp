#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "demandbench/common.hpp"
#include "demandbench/config.hpp"
#include "demandbench/csv.hpp"
#include "demandbench/econometric.hpp"
#include "demandbench/feature_pipeline.hpp"
#include "demandbench/market_sim.hpp"
#include "demandbench/ml_estimator.hpp"

namespace demandbench::harness {

/// One full benchmark run: a grid of price-change frequencies crossed with
/// replication seeds, with both estimators fitted to each simulated panel.
struct ExperimentSpec {
    std::vector<double> epsilons = {0.01, 0.025, 0.1};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    sim::MarketConfig market;
    ml::TrainConfig train;
    pipeline::PipelineConfig pipeline_cfg;
    int econ_degree = 3;
    int econ_k = 12;
    int histogram_bins = 40;
    int threads = 0;  // 0 = one per hardware thread, capped at the cell count

    ExperimentSpec() {
        // Desk-scale market: a full comparison stays under ten minutes.
        market.n_consumers = 10000;
        market.n_days = 500;
    }

    void validate() const {
        if (epsilons.empty()) throw ConfigError("experiment: need at least one epsilon");
        if (seeds.empty()) throw ConfigError("experiment: need at least one seed");
        for (double e : epsilons)
            if (e < 0.0 || e > 1.0) throw ConfigError("experiment: epsilon outside [0, 1]");
        if (econ_degree < 0) throw ConfigError("experiment: negative degree");
        if (econ_k < 1) throw ConfigError("experiment: k must be >= 1");
        if (histogram_bins < 1) throw ConfigError("experiment: need >= 1 histogram bin");
        market.validate();
        train.validate();
    }

    static ExperimentSpec from_config(const KeyValueConfig& cfg) {
        ExperimentSpec spec;
        spec.epsilons = cfg.get_double_list("compare.epsilons", spec.epsilons);
        auto seeds = cfg.get_long_list("compare.seeds", {1, 2, 3, 4, 5});
        spec.seeds.assign(seeds.begin(), seeds.end());
        spec.market = sim::MarketConfig::from_config(cfg);
        spec.market.n_consumers = cfg.get_long("market.n_consumers", 10000);
        spec.market.n_days = static_cast<int>(cfg.get_long("market.n_days", 500));
        spec.train = ml::TrainConfig::from_config(cfg);
        spec.pipeline_cfg = pipeline::PipelineConfig::from_config(cfg);
        spec.econ_degree = static_cast<int>(cfg.get_long("econ.degree", spec.econ_degree));
        spec.econ_k = static_cast<int>(cfg.get_long("econ.k", spec.econ_k));
        spec.histogram_bins =
            static_cast<int>(cfg.get_long("compare.histogram_bins", spec.histogram_bins));
        spec.threads = static_cast<int>(cfg.get_long("compare.threads", spec.threads));
        spec.validate();
        return spec;
    }
};

struct ComparisonRow {
    double epsilon = 0.0;
    std::uint64_t seed = 0;
    std::string method;  // "ml" or "ols"
    int product_id = -1;
    bool ok = false;
    double estimate = 0.0;
    double truth = 0.0;
    double sq_error = 0.0;
    std::string error;
};

struct MethodAggregate {
    double epsilon = 0.0;
    std::string method;
    double mse = 0.0;             // pooled over seeds and products
    double negative_share = 0.0;  // strictly negative estimates
    long n_ok = 0;
    long n_failed = 0;
};

struct CellSummary {
    double epsilon = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> epoch_train_loss, epoch_val_loss;
};

struct Histogram {
    std::vector<double> edges;                       // bins + 1 entries
    std::map<std::string, std::vector<double>> mass; // per method, sums to 1
};

struct ComparisonReport {
    std::vector<ComparisonRow> rows;
    std::vector<MethodAggregate> aggregates;
    std::vector<CellSummary> cells;
    Histogram density;
};

/// Fraction of strictly negative estimates.
inline double sign_share(const std::vector<double>& estimates) {
    if (estimates.empty()) throw std::invalid_argument("sign_share: empty input");
    long negative = 0;
    for (double e : estimates)
        if (e < 0.0) ++negative;
    return static_cast<double>(negative) / static_cast<double>(estimates.size());
}

/// Histogram over shared bin edges; each method's masses sum to one.
inline Histogram density_export(const std::map<std::string, std::vector<double>>& estimates,
                                int bins) {
    if (bins < 1) throw std::invalid_argument("density_export: need >= 1 bin");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& [method, values] : estimates) {
        if (values.empty())
            throw std::invalid_argument("density_export: method without estimates");
        for (double v : values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi <= lo) {  // all estimates identical: one centered unit bin
        lo -= 0.5;
        hi += 0.5;
    }

    Histogram h;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b)
        h.edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / bins;
    for (const auto& [method, values] : estimates) {
        std::vector<double> mass(static_cast<std::size_t>(bins), 0.0);
        const double share = 1.0 / static_cast<double>(values.size());
        for (double v : values) {
            auto b = static_cast<long>((v - lo) / (hi - lo) * bins);
            b = std::clamp<long>(b, 0, bins - 1);
            mass[static_cast<std::size_t>(b)] += share;
        }
        h.mass[method] = std::move(mass);
    }
    return h;
}

struct StatsRow {
    std::string metric;
    double mean = 0.0, stddev = 0.0, p10 = 0.0, p90 = 0.0;
};

namespace detail {

inline double percentile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - std::floor(pos);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

inline StatsRow summarize(const std::string& metric, const std::vector<double>& values) {
    StatsRow row;
    row.metric = metric;
    const auto n = static_cast<double>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    row.mean = sum / n;
    double ss = 0.0;
    for (double v : values) ss += (v - row.mean) * (v - row.mean);
    row.stddev = n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    row.p10 = percentile(values, 0.10);
    row.p90 = percentile(values, 0.90);
    return row;
}

}  // namespace detail

/// Product-level descriptive statistics: each product contributes its mean
/// log price, its price coefficient of variation, and its mean log sales
/// (with a +1 shift since simulated days can sell zero units).
inline std::vector<StatsRow> descriptive_stats(const sim::SalesPanel& panel) {
    if (panel.rows.empty()) throw std::invalid_argument("descriptive_stats: empty panel");
    std::map<int, std::vector<const sim::PanelRow*>> by_product;
    for (const auto& r : panel.rows) by_product[r.product_id].push_back(&r);

    std::vector<double> log_price, cv, log_sales;
    for (const auto& [id, rows] : by_product) {
        double lp = 0.0, ls = 0.0, price_sum = 0.0;
        for (const auto* r : rows) {
            lp += std::log(r->price);
            ls += std::log(static_cast<double>(r->sales) + 1.0);
            price_sum += r->price;
        }
        const auto n = static_cast<double>(rows.size());
        const double price_mean = price_sum / n;
        double price_ss = 0.0;
        for (const auto* r : rows) price_ss += std::pow(r->price - price_mean, 2);
        const double price_sd = n > 1 ? std::sqrt(price_ss / (n - 1.0)) : 0.0;
        log_price.push_back(lp / n);
        log_sales.push_back(ls / n);
        cv.push_back(price_mean > 0.0 ? price_sd / price_mean : 0.0);
    }
    return {detail::summarize("log_price", log_price), detail::summarize("cv", cv),
            detail::summarize("log_sales", log_sales)};
}

inline void save_stats(const std::vector<StatsRow>& stats, const std::string& path) {
    csv::Writer w(path);
    w.row({"metric", "mean", "std", "p10", "p90"});
    for (const auto& s : stats)
        w.row({s.metric, csv::Writer::num(s.mean), csv::Writer::num(s.stddev),
               csv::Writer::num(s.p10), csv::Writer::num(s.p90)});
}

namespace detail {

struct CellResult {
    std::vector<ComparisonRow> rows;
    CellSummary summary;
};

/// One (epsilon, seed) cell: simulate once, then hand the identical panel to
/// both estimators.
inline CellResult run_cell(const ExperimentSpec& spec, double epsilon,
                           std::uint64_t seed, std::size_t cell_index) {
    sim::MarketConfig market = spec.market;
    market.epsilon = epsilon;
    market.seed = seed;
    auto [catalog, panel] = sim::simulate_panel(market);

    // Ground truth at each product's mean panel price.
    Eigen::VectorXd mean_price = Eigen::VectorXd::Zero(market.n_products);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(market.n_products);
    for (const auto& r : panel.rows) {
        mean_price(r.product_id) += r.price;
        counts(r.product_id) += 1.0;
    }
    mean_price.array() /= counts.array();
    const Eigen::VectorXd truth = sim::true_point_elasticity(catalog, mean_price);

    CellResult cell;
    cell.summary.epsilon = epsilon;
    cell.summary.seed = seed;

    // Machine learning estimator.
    auto table = pipeline::build_feature_table(panel, spec.pipeline_cfg);
    pipeline::append_catalog_features(table, catalog.estimator_features());
    ml::TrainConfig train_cfg = spec.train;
    train_cfg.seed = spec.train.seed + 1000003ULL * static_cast<std::uint64_t>(cell_index);
    const ml::TrainedModel model = ml::train(panel, table, train_cfg);
    cell.summary.epoch_train_loss = model.epoch_train_loss;
    cell.summary.epoch_val_loss = model.epoch_val_loss;
    const auto thetas = model.per_product_theta(table);
    for (int j = 0; j < market.n_products; ++j) {
        ComparisonRow row;
        row.epsilon = epsilon;
        row.seed = seed;
        row.method = "ml";
        row.product_id = j;
        row.truth = truth(j);
        auto it = thetas.find(j);
        if (it != thetas.end()) {
            row.ok = true;
            row.estimate = model.elasticity(it->second);
            row.sq_error = (row.estimate - row.truth) * (row.estimate - row.truth);
        } else {
            row.error = "no rows for product";
        }
        cell.rows.push_back(std::move(row));
    }

    // Spatial-competition regression on the same panel object.
    const auto space = econ::factorize(
        econ::encode_product_space(catalog.estimator_features()),
        std::min<int>(spec.econ_k, static_cast<int>(std::min(
                                       catalog.features.rows(), catalog.features.cols()))));
    const auto distances = econ::pairwise_distances(space.coordinates);
    const auto estimates = econ::estimate_all(panel, distances, spec.econ_degree);
    for (const auto& est : estimates) {
        ComparisonRow row;
        row.epsilon = epsilon;
        row.seed = seed;
        row.method = "ols";
        row.product_id = est.product_id;
        row.truth = truth(est.product_id);
        row.ok = est.ok;
        if (est.ok) {
            row.estimate = est.beta_hat;
            row.sq_error = (row.estimate - row.truth) * (row.estimate - row.truth);
        } else {
            row.error = est.error;
        }
        cell.rows.push_back(std::move(row));
    }
    return cell;
}

}  // namespace detail

/// Runs every (epsilon, seed) cell — in parallel when allowed, each cell on
/// its own RNG streams — then reduces in deterministic cell order.
inline ComparisonReport run_comparison(const ExperimentSpec& spec) {
    spec.validate();
    std::vector<std::pair<double, std::uint64_t>> cells;
    for (double eps : spec.epsilons)
        for (std::uint64_t seed : spec.seeds) cells.emplace_back(eps, seed);

    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    const int threads = std::max(
        1, std::min<int>(spec.threads > 0 ? spec.threads : std::max(hw, 1),
                         static_cast<int>(cells.size())));

    std::vector<detail::CellResult> results(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            results[i] = detail::run_cell(spec, cells[i].first, cells[i].second, i);
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::future<void>> futures;
        for (int t = 0; t < threads; ++t)
            futures.push_back(std::async(std::launch::async, worker));
        for (auto& f : futures) f.get();
    }

    ComparisonReport report;
    for (auto& cell : results) {
        report.cells.push_back(std::move(cell.summary));
        for (auto& row : cell.rows) report.rows.push_back(std::move(row));
    }

    // Aggregates per (epsilon, method), recomputable from the rows.
    std::map<std::string, std::vector<double>> all_estimates;
    for (double eps : spec.epsilons) {
        for (const std::string method : {"ml", "ols"}) {
            MethodAggregate agg;
            agg.epsilon = eps;
            agg.method = method;
            double sq_sum = 0.0;
            long negative = 0;
            for (const auto& row : report.rows) {
                if (row.epsilon != eps || row.method != method) continue;
                if (!row.ok) {
                    ++agg.n_failed;
                    continue;
                }
                ++agg.n_ok;
                sq_sum += row.sq_error;
                if (row.estimate < 0.0) ++negative;
                all_estimates[method].push_back(row.estimate);
            }
            if (agg.n_ok > 0) {
                agg.mse = sq_sum / static_cast<double>(agg.n_ok);
                agg.negative_share =
                    static_cast<double>(negative) / static_cast<double>(agg.n_ok);
            }
            report.aggregates.push_back(std::move(agg));
        }
    }
    if (!all_estimates.empty() && !all_estimates.begin()->second.empty())
        report.density = density_export(all_estimates, spec.histogram_bins);
    return report;
}

/// Per-seed MSE for one method at one epsilon, then the median over seeds.
/// The acceptance checks compare methods on this statistic.
inline double median_seed_mse(const ComparisonReport& report, double epsilon,
                              const std::string& method) {
    std::map<std::uint64_t, std::pair<double, long>> per_seed;
    for (const auto& row : report.rows) {
        if (row.epsilon != epsilon || row.method != method || !row.ok) continue;
        per_seed[row.seed].first += row.sq_error;
        per_seed[row.seed].second += 1;
    }
    std::vector<double> mses;
    for (const auto& [seed, acc] : per_seed)
        if (acc.second > 0) mses.push_back(acc.first / static_cast<double>(acc.second));
    if (mses.empty()) throw DataError("median_seed_mse: no successful estimates");
    std::sort(mses.begin(), mses.end());
    const std::size_t n = mses.size();
    return n % 2 == 1 ? mses[n / 2] : 0.5 * (mses[n / 2 - 1] + mses[n / 2]);
}

inline std::vector<double> method_estimates(const ComparisonReport& report, double epsilon,
                                            const std::string& method) {
    std::vector<double> out;
    for (const auto& row : report.rows)
        if (row.epsilon == epsilon && row.method == method && row.ok)
            out.push_back(row.estimate);
    return out;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

inline void save_report_rows(const ComparisonReport& report, const std::string& path) {
    csv::Writer w(path);
    w.row({"epsilon", "seed", "method", "product_id", "ok", "estimate", "truth",
           "sq_error", "error"});
    for (const auto& r : report.rows)
        w.row({csv::Writer::num(r.epsilon), std::to_string(r.seed), r.method,
               std::to_string(r.product_id), r.ok ? "1" : "0",
               r.ok ? csv::Writer::num(r.estimate) : "",
               csv::Writer::num(r.truth), r.ok ? csv::Writer::num(r.sq_error) : "",
               r.error});
}

inline void save_report_summary(const ComparisonReport& report, const std::string& path) {
    csv::Writer w(path);
    w.row({"epsilon", "method", "mse", "negative_share", "n_ok", "n_failed"});
    for (const auto& a : report.aggregates)
        w.row({csv::Writer::num(a.epsilon), a.method, csv::Writer::num(a.mse),
               csv::Writer::num(a.negative_share), std::to_string(a.n_ok),
               std::to_string(a.n_failed)});
}

inline void save_mse_curve(const ComparisonReport& report,
                           const std::vector<double>& epsilons, const std::string& path) {
    csv::Writer w(path);
    w.row({"epsilon", "inv_epsilon", "median_mse_ml", "median_mse_ols"});
    for (double eps : epsilons)
        w.row({csv::Writer::num(eps), csv::Writer::num(eps > 0.0 ? 1.0 / eps : 0.0),
               csv::Writer::num(median_seed_mse(report, eps, "ml")),
               csv::Writer::num(median_seed_mse(report, eps, "ols"))});
}

inline void save_density(const Histogram& h, const std::string& path) {
    csv::Writer w(path);
    w.row({"bin_lo", "bin_hi", "method", "mass"});
    for (const auto& [method, mass] : h.mass)
        for (std::size_t b = 0; b < mass.size(); ++b)
            w.row({csv::Writer::num(h.edges[b]), csv::Writer::num(h.edges[b + 1]), method,
                   csv::Writer::num(mass[b])});
}

inline void save_loss_curves(const ComparisonReport& report, const std::string& path) {
    csv::Writer w(path);
    w.row({"epsilon", "seed", "epoch", "train_loss", "val_loss"});
    for (const auto& cell : report.cells)
        for (std::size_t e = 0; e < cell.epoch_train_loss.size(); ++e)
            w.row({csv::Writer::num(cell.epsilon), std::to_string(cell.seed),
                   std::to_string(e), csv::Writer::num(cell.epoch_train_loss[e]),
                   std::isfinite(cell.epoch_val_loss[e])
                       ? csv::Writer::num(cell.epoch_val_loss[e])
                       : std::string()});
}

/// Run manifest: version, command, and the fingerprint of the canonicalized
/// configuration. Deliberately free of timestamps so reruns are byte-equal.
inline void save_manifest(const std::string& path, const std::string& command,
                          const KeyValueConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw DataError("manifest: cannot open '" + path + "'");
#ifdef DEMANDBENCH_VERSION
    out << "version = " << DEMANDBENCH_VERSION << '\n';
#else
    out << "version = dev\n";
#endif
    out << "command = " << command << '\n';
    out << "config_hash = " << to_hex(cfg.hash()) << '\n';
}

}  // namespace demandbench::harness
