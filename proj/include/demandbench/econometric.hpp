#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "demandbench/common.hpp"
#include "demandbench/csv.hpp"
#include "demandbench/market_sim.hpp"

namespace demandbench::econ {

/// Product space built from encoded characteristics, reduced by truncated SVD.
struct ProductSpace {
    Eigen::MatrixXd encoded;
    Eigen::MatrixXd coordinates;      // rows x k, left singular vectors * values
    Eigen::VectorXd singular_values;  // the k retained values, descending
    double reconstruction_error = 0.0;  // squared Frobenius norm of the residual
};

/// One-hot encodes hierarchy levels (values in sorted order per level) and
/// standardizes numeric characteristics. Either part may be empty.
inline Eigen::MatrixXd encode_product_space(
    const Eigen::MatrixXd& numeric_features,
    const std::vector<std::vector<std::string>>& hierarchy_paths = {}) {
    const Eigen::Index n =
        numeric_features.rows() > 0
            ? numeric_features.rows()
            : static_cast<Eigen::Index>(hierarchy_paths.size());
    if (n == 0) throw std::invalid_argument("encode_product_space: no products");
    if (!hierarchy_paths.empty() &&
        static_cast<Eigen::Index>(hierarchy_paths.size()) != n)
        throw std::invalid_argument("encode_product_space: row count mismatch");

    std::size_t depth = 0;
    for (const auto& p : hierarchy_paths) depth = std::max(depth, p.size());
    std::vector<std::vector<std::string>> level_values(depth);
    for (std::size_t l = 0; l < depth; ++l) {
        std::set<std::string> values;
        for (const auto& p : hierarchy_paths)
            if (l < p.size()) values.insert(p[l]);
        level_values[l].assign(values.begin(), values.end());
    }
    Eigen::Index onehot_cols = 0;
    for (const auto& vals : level_values)
        onehot_cols += static_cast<Eigen::Index>(vals.size());

    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, onehot_cols + numeric_features.cols());
    Eigen::Index col = 0;
    for (std::size_t l = 0; l < depth; ++l) {
        for (const auto& value : level_values[l]) {
            for (Eigen::Index r = 0; r < n; ++r)
                if (l < hierarchy_paths[static_cast<std::size_t>(r)].size() &&
                    hierarchy_paths[static_cast<std::size_t>(r)][l] == value)
                    out(r, col) = 1.0;
            ++col;
        }
    }
    for (Eigen::Index c = 0; c < numeric_features.cols(); ++c, ++col) {
        const double mean = numeric_features.col(c).mean();
        const double sd = n > 1 ? std::sqrt((numeric_features.col(c).array() - mean)
                                                .square()
                                                .sum() /
                                            static_cast<double>(n - 1))
                                : 0.0;
        if (sd > 1e-12)
            out.col(col) = (numeric_features.col(c).array() - mean) / sd;
        // zero-variance characteristics carry no information; leave zeros
    }
    return out;
}

/// Rank-k truncated SVD via eigen-decomposition of the smaller Gram matrix.
/// Coordinates are the left singular vectors scaled by the singular values,
/// so Euclidean distances in the reduced space approximate row distances.
inline ProductSpace factorize(const Eigen::MatrixXd& m, int k) {
    if (k < 1 || k > std::min(m.rows(), m.cols()))
        throw std::invalid_argument("factorize: k must lie in [1, min(rows, cols)]");
    ProductSpace space;
    space.encoded = m;

    Eigen::MatrixXd basis;  // right singular vectors when the Gram side is cols
    if (m.rows() <= m.cols()) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m * m.transpose());
        const Eigen::Index n = m.rows();
        space.singular_values.resize(k);
        space.coordinates.resize(n, k);
        Eigen::MatrixXd uk(n, k);
        for (int i = 0; i < k; ++i) {
            const double lambda = std::max(0.0, eig.eigenvalues()(n - 1 - i));
            space.singular_values(i) = std::sqrt(lambda);
            uk.col(i) = eig.eigenvectors().col(n - 1 - i);
            space.coordinates.col(i) = uk.col(i) * space.singular_values(i);
        }
        space.reconstruction_error = (m - uk * (uk.transpose() * m)).squaredNorm();
    } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.transpose() * m);
        const Eigen::Index p = m.cols();
        space.singular_values.resize(k);
        Eigen::MatrixXd vk(p, k);
        for (int i = 0; i < k; ++i) {
            const double lambda = std::max(0.0, eig.eigenvalues()(p - 1 - i));
            space.singular_values(i) = std::sqrt(lambda);
            vk.col(i) = eig.eigenvectors().col(p - 1 - i);
        }
        space.coordinates = m * vk;
        space.reconstruction_error = (m - space.coordinates * vk.transpose()).squaredNorm();
    }
    return space;
}

/// Full symmetric Euclidean distance matrix over coordinate rows.
inline Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& coordinates) {
    const Eigen::Index n = coordinates.rows();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double dist = (coordinates.row(i) - coordinates.row(j)).norm();
            d(i, j) = dist;
            d(j, i) = dist;
        }
    return d;
}

struct Regressors {
    Eigen::MatrixXd X;  // [1, ln p_jt, z_0 .. z_degree]
    Eigen::VectorXd y;  // ln q_jt, or ln(q_jt + 1) when the panel has zero-sale days
    std::vector<int> days;
    bool log1p_used = false;
    std::vector<std::string> column_names;
};

/// Design matrix of the distance-weighted polynomial price regression for one
/// product. The cross-price regressors are z_k(t) = sum_{i != j} d_ji^k p_it;
/// the own product is excluded from the sums (its price is the ln p column).
inline Regressors build_regressors(const sim::SalesPanel& panel,
                                   const Eigen::MatrixXd& distances, int product,
                                   int degree) {
    if (degree < 0) throw std::invalid_argument("build_regressors: degree must be >= 0");
    if (product < 0 || product >= distances.rows())
        throw std::invalid_argument("build_regressors: product outside distance matrix");

    bool any_zero = false;
    for (const auto& r : panel.rows)
        if (r.sales == 0) any_zero = true;

    std::map<int, std::vector<const sim::PanelRow*>> by_day;
    for (const auto& r : panel.rows) by_day[r.day].push_back(&r);

    std::vector<const sim::PanelRow*> own_rows;
    for (const auto& r : panel.rows)
        if (r.product_id == product) own_rows.push_back(&r);
    std::sort(own_rows.begin(), own_rows.end(),
              [](const sim::PanelRow* a, const sim::PanelRow* b) { return a->day < b->day; });
    if (own_rows.empty())
        throw DataError("build_regressors: product " + std::to_string(product) +
                        " has no rows");
    bool all_zero = true;
    for (const auto* r : own_rows)
        if (r->sales > 0) all_zero = false;
    if (all_zero)
        throw DataError("build_regressors: product " + std::to_string(product) +
                        " has no sales; response is unusable");

    Regressors reg;
    reg.log1p_used = any_zero;
    const int n_cols = degree + 3;
    reg.X.resize(static_cast<Eigen::Index>(own_rows.size()), n_cols);
    reg.y.resize(static_cast<Eigen::Index>(own_rows.size()));
    reg.column_names = {"intercept", "ln_price"};
    for (int k = 0; k <= degree; ++k) reg.column_names.push_back("z" + std::to_string(k));

    Eigen::Index row = 0;
    for (const auto* r : own_rows) {
        if (r->price <= 0.0)
            throw DataError("build_regressors: non-positive price for product " +
                            std::to_string(product));
        reg.X(row, 0) = 1.0;
        reg.X(row, 1) = std::log(r->price);
        for (int k = 0; k <= degree; ++k) {
            double z = 0.0;
            for (const auto* other : by_day[r->day]) {
                if (other->product_id == product) continue;
                z += std::pow(distances(product, other->product_id),
                              static_cast<double>(k)) *
                     other->price;
            }
            reg.X(row, 2 + k) = z;
        }
        reg.y(row) = any_zero ? std::log(static_cast<double>(r->sales) + 1.0)
                              : std::log(static_cast<double>(r->sales));
        reg.days.push_back(r->day);
        ++row;
    }
    return reg;
}

struct OlsFit {
    Eigen::VectorXd coef;
    double sigma2 = 0.0;          // RSS / (n - p)
    Eigen::MatrixXd covariance;   // sigma2 * (X'X)^-1
    double rss = 0.0;
    Eigen::Index n = 0, p = 0;
};

namespace detail {
constexpr double kRankTolerance = 1e-10;

inline void check_rank(const Eigen::MatrixXd& X,
                       const std::vector<std::string>* names) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    const Eigen::VectorXd diag = qr.matrixR().diagonal().cwiseAbs();
    const double largest = diag.maxCoeff();
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < diag.size(); ++i)
        if (diag(i) > kRankTolerance * largest) ++rank;
    if (rank < X.cols()) {
        std::string msg = "ols_fit: design matrix is rank deficient; dependent columns:";
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index i = rank; i < X.cols(); ++i) {
            const int col = perm(i);
            msg += ' ';
            msg += (names && col < static_cast<int>(names->size()))
                       ? (*names)[static_cast<std::size_t>(col)]
                       : std::to_string(col);
        }
        throw DataError(msg);
    }
}
}  // namespace detail

/// Ordinary least squares through a Householder QR decomposition, with the
/// coefficient covariance sigma^2 (X'X)^{-1} recovered from the R factor.
inline OlsFit ols_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const std::vector<std::string>* column_names = nullptr) {
    if (X.rows() != y.size()) throw std::invalid_argument("ols_fit: row mismatch");
    if (X.rows() <= X.cols())
        throw DataError("ols_fit: need more rows than columns (" +
                        std::to_string(X.rows()) + " x " + std::to_string(X.cols()) + ")");
    detail::check_rank(X, column_names);

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
    OlsFit fit;
    fit.n = X.rows();
    fit.p = X.cols();
    fit.coef = qr.solve(y);
    fit.rss = (y - X * fit.coef).squaredNorm();
    fit.sigma2 = fit.rss / static_cast<double>(fit.n - fit.p);

    Eigen::MatrixXd R = qr.matrixQR().topRows(fit.p).triangularView<Eigen::Upper>();
    Eigen::MatrixXd Rinv =
        R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(fit.p, fit.p));
    fit.covariance = fit.sigma2 * (Rinv * Rinv.transpose());
    return fit;
}

namespace detail {
inline Eigen::MatrixXd drop_column(const Eigen::MatrixXd& X, Eigen::Index col) {
    Eigen::MatrixXd out(X.rows(), X.cols() - 1);
    Eigen::Index c = 0;
    for (Eigen::Index i = 0; i < X.cols(); ++i)
        if (i != col) out.col(c++) = X.col(i);
    return out;
}
}  // namespace detail

struct LemmaVariance {
    double var_beta = 0.0;
    double r2_price = 0.0;
};

/// Variance of the price coefficient computed the long way round: residualize
/// the price column on the remaining covariates and divide sigma^2 by the
/// residual sum of squares. Equals the OLS covariance diagonal entry.
inline LemmaVariance lemma_variance(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                    Eigen::Index price_col) {
    if (price_col < 0 || price_col >= X.cols())
        throw std::invalid_argument("lemma_variance: bad price column");
    const Eigen::VectorXd price = X.col(price_col);
    const double price_mean = price.mean();
    const double ss_tot = (price.array() - price_mean).square().sum();
    if (ss_tot <= 0.0)
        throw DataError("lemma_variance: price column has zero variance");

    const Eigen::MatrixXd others = detail::drop_column(X, price_col);
    Eigen::VectorXd fitted =
        others * Eigen::HouseholderQR<Eigen::MatrixXd>(others).solve(price);
    Eigen::VectorXd residual = price - fitted;

    LemmaVariance out;
    out.r2_price = 1.0 - residual.squaredNorm() / ss_tot;
    const double res_mean = residual.mean();
    const double denom = (residual.array() - res_mean).square().sum();
    if (denom <= detail::kRankTolerance * ss_tot)
        throw DataError("lemma_variance: price is collinear with the other covariates");
    out.var_beta = ols_fit(X, y).sigma2 / denom;
    return out;
}

/// Price coefficient via the two-step residual regression. Must agree with
/// the corresponding ols_fit coefficient.
inline double fwl_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      Eigen::Index price_col) {
    if (price_col < 0 || price_col >= X.cols())
        throw std::invalid_argument("fwl_fit: bad price column");
    const Eigen::MatrixXd others = detail::drop_column(X, price_col);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(others);
    Eigen::VectorXd p_res = X.col(price_col) - others * qr.solve(X.col(price_col));
    Eigen::VectorXd y_res = y - others * qr.solve(y);
    const double denom = p_res.squaredNorm();
    if (denom <= detail::kRankTolerance * X.rows())
        throw DataError("fwl_fit: price residual is degenerate");
    return p_res.dot(y_res) / denom;
}

struct ProductEstimate {
    int product_id = -1;
    bool ok = false;
    std::string error;
    double beta_hat = 0.0;  // the log-log price coefficient, i.e. the elasticity
    double se = 0.0;
    double r2_price = 0.0;
    double var_lemma = 0.0;
    long n_obs = 0;
};

/// Per-product spatial-competition regressions. Individual failures (constant
/// prices, too few rows) are recorded per product, never fatal.
inline std::vector<ProductEstimate> estimate_all(const sim::SalesPanel& panel,
                                                 const Eigen::MatrixXd& distances,
                                                 int degree = 3) {
    std::set<int> ids;
    for (const auto& r : panel.rows) ids.insert(r.product_id);
    std::vector<ProductEstimate> out;
    for (int id : ids) {
        ProductEstimate est;
        est.product_id = id;
        try {
            Regressors reg = build_regressors(panel, distances, id, degree);
            if (reg.X.rows() < degree + 4)
                throw DataError("estimate_all: fewer than degree+4 observations");
            OlsFit fit = ols_fit(reg.X, reg.y, &reg.column_names);
            LemmaVariance lv = lemma_variance(reg.X, reg.y, 1);
            est.ok = true;
            est.beta_hat = fit.coef(1);
            est.se = std::sqrt(fit.covariance(1, 1));
            est.r2_price = lv.r2_price;
            est.var_lemma = lv.var_beta;
            est.n_obs = fit.n;
        } catch (const std::exception& ex) {
            est.error = ex.what();
        }
        out.push_back(std::move(est));
    }
    return out;
}

inline void save_estimates(const std::vector<ProductEstimate>& estimates,
                           const std::string& path) {
    csv::Writer w(path);
    w.row({"product_id", "beta_hat", "se", "r2_price", "var_lemma", "n_obs"});
    for (const auto& e : estimates) {
        if (e.ok)
            w.row({std::to_string(e.product_id), csv::Writer::num(e.beta_hat),
                   csv::Writer::num(e.se), csv::Writer::num(e.r2_price),
                   csv::Writer::num(e.var_lemma), std::to_string(e.n_obs)});
        else
            w.row({std::to_string(e.product_id), "", "", "", "", "0"});
    }
}

}  // namespace demandbench::econ
