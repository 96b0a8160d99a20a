#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "demandbench/common.hpp"
#include "demandbench/csv.hpp"
#include "demandbench/ml_estimator.hpp"

namespace demandbench::opt {

struct PricingItem {
    ml::DemandTheta theta;  // raw-unit linear demand q = alpha + beta p
    double cost = 0.0;
    double margin_lb = 0.0;
    double margin_ub = 0.99;
};

struct PricingProblem {
    std::vector<PricingItem> items;
    std::optional<double> margin_target;  // overall demand-weighted margin floor
    double price_floor = 1e-9;
    std::optional<double> price_cap;

    void validate() const {
        if (items.empty()) throw ConfigError("pricing: no items");
        for (const auto& it : items) {
            if (it.cost <= 0.0) throw ConfigError("pricing: costs must be positive");
            if (it.margin_lb < 0.0 || it.margin_lb > it.margin_ub || it.margin_ub >= 1.0)
                throw ConfigError("pricing: need 0 <= margin_lb <= margin_ub < 1");
        }
        if (margin_target && *margin_target >= 1.0)
            throw ConfigError("pricing: margin target must be < 1");
        if (price_floor <= 0.0) throw ConfigError("pricing: price floor must be > 0");
    }

    /// Per-product search box: the margin bounds translate into
    /// [c/(1-lb), c/(1-ub)], intersected with the price floor/cap; prices
    /// beyond the demand-zero point -alpha/beta are excluded (zero revenue).
    std::pair<Eigen::VectorXd, Eigen::VectorXd> price_box() const {
        const auto n = static_cast<Eigen::Index>(items.size());
        Eigen::VectorXd lo(n), hi(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& it = items[static_cast<std::size_t>(i)];
            lo(i) = std::max(price_floor, it.cost / (1.0 - it.margin_lb));
            hi(i) = it.cost / (1.0 - it.margin_ub);
            if (price_cap) hi(i) = std::min(hi(i), *price_cap);
            if (it.theta.beta < 0.0) {
                const double zero_point = -it.theta.alpha / it.theta.beta;
                if (zero_point > lo(i)) hi(i) = std::min(hi(i), zero_point);
                else hi(i) = lo(i);  // demand never positive inside the box
            }
            if (lo(i) > hi(i))
                throw ConfigError("pricing: empty price box for item " + std::to_string(i));
        }
        return {lo, hi};
    }
};

struct PricingSolution {
    Eigen::VectorXd prices;
    double revenue = 0.0;
    double overall_margin = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd product_margins;
    bool feasible = false;
    int winning_start = -1;
    std::string note;  // binding constraint on infeasibility
};

/// Objective of the constrained pricing problem: sum of p * demand with
/// negative predicted demand contributing nothing.
inline double revenue(const Eigen::VectorXd& prices, const std::vector<PricingItem>& items) {
    if (prices.size() != static_cast<Eigen::Index>(items.size()))
        throw std::invalid_argument("revenue: size mismatch");
    double total = 0.0;
    for (Eigen::Index i = 0; i < prices.size(); ++i) {
        const auto& t = items[static_cast<std::size_t>(i)].theta;
        total += prices(i) * std::max(t.alpha + t.beta * prices(i), 0.0);
    }
    return total;
}

struct MarginReport {
    double overall = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd per_product;
    bool overall_defined = false;
    bool feasible = false;
};

/// Evaluates all margin constraints at the given prices. The overall margin
/// is the demand-weighted ratio sum((p-c) D) / sum(p D); it is undefined
/// (and the point infeasible) when nothing sells.
inline MarginReport margin_constraints(const Eigen::VectorXd& prices,
                                       const PricingProblem& problem,
                                       double tol = 1e-9) {
    const auto n = static_cast<Eigen::Index>(problem.items.size());
    if (prices.size() != n) throw std::invalid_argument("margin_constraints: size mismatch");
    MarginReport rep;
    rep.per_product.resize(n);
    double num = 0.0, den = 0.0;
    bool boxes_ok = true;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& it = problem.items[static_cast<std::size_t>(i)];
        if (prices(i) <= 0.0) {
            boxes_ok = false;
            rep.per_product(i) = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        const double margin = (prices(i) - it.cost) / prices(i);
        rep.per_product(i) = margin;
        if (margin < it.margin_lb - tol || margin > it.margin_ub + tol) boxes_ok = false;
        const double demand = std::max(it.theta.alpha + it.theta.beta * prices(i), 0.0);
        num += (prices(i) - it.cost) * demand;
        den += prices(i) * demand;
    }
    rep.overall_defined = den > 0.0;
    if (rep.overall_defined) rep.overall = num / den;
    rep.feasible = boxes_ok && rep.overall_defined &&
                   (!problem.margin_target || rep.overall >= *problem.margin_target - tol);
    return rep;
}

namespace detail {

/// Overall-margin slack g(p) = sum(((1-target) p - c) D); g >= 0 iff the
/// ratio constraint holds (given positive total revenue).
inline double margin_slack(const Eigen::VectorXd& p, const PricingProblem& problem) {
    if (!problem.margin_target) return 0.0;
    const double m = *problem.margin_target;
    double g = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const auto& it = problem.items[static_cast<std::size_t>(i)];
        const double demand = std::max(it.theta.alpha + it.theta.beta * p(i), 0.0);
        g += ((1.0 - m) * p(i) - it.cost) * demand;
    }
    return g;
}

inline Eigen::VectorXd revenue_gradient(const Eigen::VectorXd& p,
                                        const std::vector<PricingItem>& items) {
    Eigen::VectorXd grad(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const auto& t = items[static_cast<std::size_t>(i)].theta;
        grad(i) = t.alpha + t.beta * p(i) > 0.0 ? t.alpha + 2.0 * t.beta * p(i) : 0.0;
    }
    return grad;
}

inline Eigen::VectorXd slack_gradient(const Eigen::VectorXd& p,
                                      const PricingProblem& problem) {
    const double m = *problem.margin_target;
    Eigen::VectorXd grad(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const auto& it = problem.items[static_cast<std::size_t>(i)];
        const double demand = it.theta.alpha + it.theta.beta * p(i);
        grad(i) = demand > 0.0
                      ? (1.0 - m) * demand + ((1.0 - m) * p(i) - it.cost) * it.theta.beta
                      : 0.0;
    }
    return grad;
}

inline Eigen::VectorXd project(Eigen::VectorXd p, const Eigen::VectorXd& lo,
                               const Eigen::VectorXd& hi) {
    return p.cwiseMax(lo).cwiseMin(hi);
}

/// Backtracking projected ascent on an arbitrary objective.
template <class Objective, class Gradient>
Eigen::VectorXd ascend(Eigen::VectorXd p, const Eigen::VectorXd& lo,
                       const Eigen::VectorXd& hi, Objective&& f, Gradient&& df,
                       int max_iters) {
    double value = f(p);
    for (int iter = 0; iter < max_iters; ++iter) {
        const Eigen::VectorXd grad = df(p);
        double t = 1.0;
        bool improved = false;
        for (int halving = 0; halving < 45; ++halving, t *= 0.5) {
            Eigen::VectorXd candidate = project(p + t * grad, lo, hi);
            const double candidate_value = f(candidate);
            if (candidate_value > value + 1e-15 * std::abs(value)) {
                const double step = (candidate - p).norm();
                p = std::move(candidate);
                value = candidate_value;
                improved = true;
                if (step < 1e-13 * (1.0 + p.norm())) return p;
                break;
            }
        }
        if (!improved) return p;
    }
    return p;
}

struct BestTracker {
    PricingSolution best;

    void offer(const Eigen::VectorXd& p, const PricingProblem& problem, int start) {
        // Strict internal tolerance so the published solution survives any
        // independent recomputation at 1e-9.
        MarginReport rep = margin_constraints(p, problem, 1e-12);
        if (!rep.feasible) return;
        const double value = revenue(p, problem.items);
        if (!best.feasible || value > best.revenue) {
            best.feasible = true;
            best.prices = p;
            best.revenue = value;
            best.overall_margin = rep.overall;
            best.product_margins = rep.per_product;
            best.winning_start = start;
        }
    }
};

}  // namespace detail

/// Multi-start projected gradient ascent. Each start samples a box point,
/// runs penalty rounds for the coupled overall-margin constraint (weight
/// doubling on violation, up to 10 rounds), then polishes inside the
/// feasible region. Deterministic given the seed; start k's stream does not
/// depend on n_starts.
inline PricingSolution optimize(const PricingProblem& problem, int n_starts = 32,
                                std::uint64_t seed = 1) {
    problem.validate();
    if (n_starts < 1) throw std::invalid_argument("optimize: n_starts must be >= 1");
    const auto [lo, hi] = problem.price_box();
    const auto n = lo.size();

    detail::BestTracker tracker;
    for (int start = 0; start < n_starts; ++start) {
        Rng rng = derive_rng(seed, static_cast<std::uint64_t>(start));
        Eigen::VectorXd p(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            std::uniform_real_distribution<double> u(lo(i), hi(i));
            p(i) = u(rng);
        }
        tracker.offer(p, problem, start);

        if (!problem.margin_target) {
            p = detail::ascend(
                p, lo, hi, [&](const Eigen::VectorXd& x) { return revenue(x, problem.items); },
                [&](const Eigen::VectorXd& x) {
                    return detail::revenue_gradient(x, problem.items);
                },
                600);
            tracker.offer(p, problem, start);
            continue;
        }

        double weight = 1.0;
        for (int round = 0; round < 10; ++round) {
            auto penalized = [&](const Eigen::VectorXd& x) {
                const double g = detail::margin_slack(x, problem);
                const double violation = std::min(0.0, g);
                return revenue(x, problem.items) - weight * violation * violation;
            };
            auto penalized_grad = [&](const Eigen::VectorXd& x) {
                Eigen::VectorXd grad = detail::revenue_gradient(x, problem.items);
                const double g = detail::margin_slack(x, problem);
                if (g < 0.0) grad += 2.0 * weight * (-g) * detail::slack_gradient(x, problem);
                return grad;
            };
            p = detail::ascend(p, lo, hi, penalized, penalized_grad, 400);
            tracker.offer(p, problem, start);
            if (detail::margin_slack(p, problem) >= 0.0) break;
            weight *= 2.0;
        }

        // Feasibility restoration: climb the slack itself if still short.
        if (detail::margin_slack(p, problem) < 0.0) {
            p = detail::ascend(
                p, lo, hi,
                [&](const Eigen::VectorXd& x) { return detail::margin_slack(x, problem); },
                [&](const Eigen::VectorXd& x) { return detail::slack_gradient(x, problem); },
                400);
            tracker.offer(p, problem, start);
        }

        // Feasible polish: monotone ascent accepting only feasible iterates.
        if (detail::margin_slack(p, problem) >= 0.0) {
            double value = revenue(p, problem.items);
            for (int iter = 0; iter < 300; ++iter) {
                const Eigen::VectorXd grad = detail::revenue_gradient(p, problem.items);
                double t = 1.0;
                bool moved = false;
                for (int halving = 0; halving < 45; ++halving, t *= 0.5) {
                    Eigen::VectorXd candidate = detail::project(p + t * grad, lo, hi);
                    if (detail::margin_slack(candidate, problem) < 0.0) continue;
                    const double candidate_value = revenue(candidate, problem.items);
                    if (candidate_value > value + 1e-15 * std::abs(value)) {
                        const double step = (candidate - p).norm();
                        p = std::move(candidate);
                        value = candidate_value;
                        moved = true;
                        if (step < 1e-13 * (1.0 + p.norm())) iter = 300;
                        break;
                    }
                }
                if (!moved) break;
            }
            tracker.offer(p, problem, start);
        }
    }

    if (!tracker.best.feasible) {
        PricingSolution sol;
        sol.prices = Eigen::VectorXd::Zero(n);
        sol.note = problem.margin_target
                       ? "no start reached the overall margin target of " +
                             format_double(*problem.margin_target)
                       : "no point with positive revenue inside the margin boxes";
        return sol;
    }
    return tracker.best;
}

/// Exhaustive feasible-grid argmax; the test oracle for the nonconvex
/// solver. Guarded to four products.
inline PricingSolution grid_oracle(const PricingProblem& problem, int points_per_axis) {
    problem.validate();
    if (problem.items.size() > 4)
        throw std::invalid_argument("grid_oracle: more than 4 products");
    if (points_per_axis < 1) throw std::invalid_argument("grid_oracle: need >= 1 point");
    const auto [lo, hi] = problem.price_box();
    const auto n = lo.size();

    std::vector<std::vector<double>> axes(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        auto& axis = axes[static_cast<std::size_t>(i)];
        if (points_per_axis == 1 || hi(i) - lo(i) < 1e-15) {
            axis.push_back(lo(i));
            continue;
        }
        for (int k = 0; k < points_per_axis; ++k)
            axis.push_back(lo(i) + (hi(i) - lo(i)) * k / (points_per_axis - 1));
    }

    // Per-axis revenue and margin-numerator terms.
    std::vector<std::vector<double>> rev(static_cast<std::size_t>(n)),
        marg(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& it = problem.items[static_cast<std::size_t>(i)];
        for (double p : axes[static_cast<std::size_t>(i)]) {
            const double demand = std::max(it.theta.alpha + it.theta.beta * p, 0.0);
            rev[static_cast<std::size_t>(i)].push_back(p * demand);
            marg[static_cast<std::size_t>(i)].push_back((p - it.cost) * demand);
        }
    }

    const double target = problem.margin_target.value_or(0.0);
    const bool has_target = problem.margin_target.has_value();
    double best_revenue = -1.0;
    std::vector<std::size_t> best_idx, idx(static_cast<std::size_t>(n), 0);

    while (true) {
        double r = 0.0, m = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            r += rev[static_cast<std::size_t>(i)][idx[static_cast<std::size_t>(i)]];
            m += marg[static_cast<std::size_t>(i)][idx[static_cast<std::size_t>(i)]];
        }
        const bool ok = r > 0.0 && (!has_target || m >= target * r - 1e-12);
        if (ok && r > best_revenue) {
            best_revenue = r;
            best_idx = idx;
        }
        // Odometer increment.
        Eigen::Index pos = 0;
        while (pos < n) {
            if (++idx[static_cast<std::size_t>(pos)] <
                axes[static_cast<std::size_t>(pos)].size())
                break;
            idx[static_cast<std::size_t>(pos)] = 0;
            ++pos;
        }
        if (pos == n) break;
    }

    PricingSolution sol;
    if (best_revenue < 0.0) {
        sol.prices = Eigen::VectorXd::Zero(n);
        sol.note = "no feasible grid point";
        return sol;
    }
    sol.prices.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
        sol.prices(i) = axes[static_cast<std::size_t>(i)][best_idx[static_cast<std::size_t>(i)]];
    MarginReport rep = margin_constraints(sol.prices, problem);
    sol.revenue = best_revenue;
    sol.overall_margin = rep.overall;
    sol.product_margins = rep.per_product;
    sol.feasible = true;
    return sol;
}

// ---------------------------------------------------------------------------
// CSV interfaces
// ---------------------------------------------------------------------------

inline PricingProblem load_problem(const std::string& path,
                                   std::optional<double> margin_target = {}) {
    const csv::Table t = csv::read(path);
    const int c_alpha = t.column("alpha");
    const int c_beta = t.column("beta");
    const int c_cost = t.column("cost");
    const int c_lb = t.column("margin_lb");
    const int c_ub = t.column("margin_ub");
    PricingProblem problem;
    problem.margin_target = margin_target;
    for (const auto& cells : t.rows) {
        PricingItem item;
        item.theta.alpha = csv::parse_double(cells[c_alpha], "alpha");
        item.theta.beta = csv::parse_double(cells[c_beta], "beta");
        item.cost = csv::parse_double(cells[c_cost], "cost");
        item.margin_lb = csv::parse_double(cells[c_lb], "margin_lb");
        item.margin_ub = csv::parse_double(cells[c_ub], "margin_ub");
        problem.items.push_back(item);
    }
    problem.validate();
    return problem;
}

inline void save_solution(const PricingSolution& sol, const PricingProblem& problem,
                          const std::string& path) {
    csv::Writer w(path);
    w.row({"product_id", "price", "demand", "margin"});
    for (Eigen::Index i = 0; i < sol.prices.size(); ++i) {
        const auto& it = problem.items[static_cast<std::size_t>(i)];
        const double demand =
            std::max(it.theta.alpha + it.theta.beta * sol.prices(i), 0.0);
        w.row({std::to_string(i), csv::Writer::num(sol.prices(i)),
               csv::Writer::num(demand),
               csv::Writer::num(sol.feasible ? sol.product_margins(i)
                                             : std::numeric_limits<double>::quiet_NaN())});
    }
}

}  // namespace demandbench::opt
