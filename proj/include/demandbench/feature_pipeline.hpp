#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "demandbench/common.hpp"
#include "demandbench/config.hpp"
#include "demandbench/csv.hpp"
#include "demandbench/market_sim.hpp"

namespace demandbench::pipeline {

struct AggregateSpec {
    double ewma_lambda = 0.9;     // decay per day of age, newest weight 1
    double mode_increment = 0.0;  // 0 keeps exact values; > 0 rounds into bins
};

/// The six trailing-window statistics. All fields are absent for an empty
/// window; cv is additionally absent when the window mean is not positive.
struct WindowStats {
    std::optional<double> mode, median, weighted_mean, std_dev, cv, ewma;
};

/// Aggregates an ordered (oldest -> newest) window of values. The weighted
/// mean uses linearly increasing recency weights 1..n; the EWMA weights decay
/// by lambda per day of age; std is the sample standard deviation.
inline WindowStats window_aggregate(const std::vector<double>& series,
                                    const AggregateSpec& spec) {
    WindowStats s;
    const std::size_t n = series.size();
    if (n == 0) return s;

    // Mode over (optionally rounded) values, ties broken toward the value
    // seen most recently.
    std::map<double, std::pair<int, std::size_t>> bins;  // value -> (count, last index)
    for (std::size_t i = 0; i < n; ++i) {
        double v = series[i];
        if (spec.mode_increment > 0.0)
            v = std::round(v / spec.mode_increment) * spec.mode_increment;
        auto& entry = bins[v];
        ++entry.first;
        entry.second = i;
    }
    double mode_value = 0.0;
    int best_count = -1;
    std::size_t best_last = 0;
    for (const auto& [value, entry] : bins) {
        if (entry.first > best_count ||
            (entry.first == best_count && entry.second > best_last)) {
            best_count = entry.first;
            best_last = entry.second;
            mode_value = value;
        }
    }
    s.mode = mode_value;

    std::vector<double> sorted(series);
    std::sort(sorted.begin(), sorted.end());
    s.median = (n % 2 == 1) ? sorted[n / 2]
                            : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

    double wsum = 0.0, wtot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = static_cast<double>(i + 1);
        wsum += w * series[i];
        wtot += w;
    }
    s.weighted_mean = wsum / wtot;

    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : series) ss += (v - mean) * (v - mean);
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    s.std_dev = sd;
    if (mean > 0.0) s.cv = sd / mean;

    double esum = 0.0, etot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::pow(spec.ewma_lambda, static_cast<double>(n - 1 - i));
        esum += w * series[i];
        etot += w;
    }
    s.ewma = esum / etot;
    return s;
}

/// Aggregates each competitor's own window first, then averages the available
/// competitors field by field. Absent when no competitor was observed.
inline WindowStats competitor_aggregate(
    const std::vector<std::vector<double>>& per_competitor_series,
    const AggregateSpec& spec) {
    std::vector<WindowStats> stats;
    for (const auto& series : per_competitor_series)
        if (!series.empty()) stats.push_back(window_aggregate(series, spec));
    WindowStats out;
    if (stats.empty()) return out;
    auto average = [&](std::optional<double> WindowStats::*field) {
        double sum = 0.0;
        int count = 0;
        for (const auto& s : stats)
            if (s.*field) {
                sum += *(s.*field);
                ++count;
            }
        return count > 0 ? std::optional<double>(sum / count) : std::nullopt;
    };
    out.mode = average(&WindowStats::mode);
    out.median = average(&WindowStats::median);
    out.weighted_mean = average(&WindowStats::weighted_mean);
    out.std_dev = average(&WindowStats::std_dev);
    out.cv = average(&WindowStats::cv);
    out.ewma = average(&WindowStats::ewma);
    return out;
}

/// Day-of-week (0..6) and week number from a day index and the weekday index
/// of day 0.
inline std::pair<int, int> calendar_features(int day_index, int origin_weekday = 0) {
    if (day_index < 0) throw std::invalid_argument("calendar_features: negative day");
    return {(origin_weekday + day_index) % 7, day_index / 7};
}

/// Encodes hierarchy paths as per-level categorical ids, truncated to four
/// levels. Id 0 is reserved for missing levels and unseen values; each level
/// keeps its own vocabulary.
class TreeEncoder {
  public:
    static constexpr int kLevels = 4;

    void fit(const std::vector<std::vector<std::string>>& paths) {
        for (auto& v : vocab_) v.clear();
        for (const auto& path : paths) {
            const std::size_t depth = std::min<std::size_t>(path.size(), kLevels);
            for (std::size_t l = 0; l < depth; ++l)
                if (!vocab_[l].count(path[l]))
                    vocab_[l].emplace(path[l], static_cast<int>(vocab_[l].size()) + 1);
        }
    }

    std::array<int, kLevels> encode(const std::vector<std::string>& path) const {
        if (path.empty()) throw std::invalid_argument("encode_tree: empty path");
        std::array<int, kLevels> ids{};
        const std::size_t depth = std::min<std::size_t>(path.size(), kLevels);
        for (std::size_t l = 0; l < depth; ++l) {
            auto it = vocab_[l].find(path[l]);
            ids[l] = it == vocab_[l].end() ? 0 : it->second;
        }
        return ids;  // deeper-than-known levels stay 0 (reserved)
    }

    int level_vocab_size(int level) const {
        return static_cast<int>(vocab_[level].size()) + 1;  // + reserved id 0
    }

  private:
    std::array<std::map<std::string, int>, kLevels> vocab_;
};

/// Keeps rows whose price deviates from the product's mean price by strictly
/// more than `threshold` (relative). The mean is panel-wide by default; the
/// trailing variant uses the mean of the preceding `window` observed days.
inline sim::SalesPanel filter_price_deviation(const sim::SalesPanel& panel,
                                              double threshold,
                                              bool trailing_mean = false,
                                              int window = 28) {
    if (threshold < 0.0)
        throw std::invalid_argument("filter_price_deviation: negative threshold");
    sim::SalesPanel out;

    if (!trailing_mean) {
        std::map<int, std::pair<double, int>> acc;
        for (const auto& r : panel.rows) {
            acc[r.product_id].first += r.price;
            acc[r.product_id].second += 1;
        }
        for (const auto& r : panel.rows) {
            const auto& [sum, count] = acc[r.product_id];
            const double mean = sum / count;
            if (mean > 0.0 && std::abs(r.price - mean) / mean > threshold)
                out.rows.push_back(r);
        }
        return out;
    }

    std::map<int, std::vector<const sim::PanelRow*>> by_product;
    for (const auto& r : panel.rows) by_product[r.product_id].push_back(&r);
    for (auto& [id, rows] : by_product) {
        std::sort(rows.begin(), rows.end(),
                  [](const sim::PanelRow* a, const sim::PanelRow* b) { return a->day < b->day; });
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double sum = 0.0;
            int count = 0;
            for (std::size_t k = i; k-- > 0;) {
                if (rows[k]->day < rows[i]->day - window) break;
                sum += rows[k]->price;
                ++count;
            }
            if (count == 0) continue;
            const double mean = sum / count;
            if (mean > 0.0 && std::abs(rows[i]->price - mean) / mean > threshold)
                out.rows.push_back(*rows[i]);
        }
    }
    std::sort(out.rows.begin(), out.rows.end(), [](const sim::PanelRow& a, const sim::PanelRow& b) {
        return a.day != b.day ? a.day < b.day : a.product_id < b.product_id;
    });
    return out;
}

/// Estimator-facing rows: categorical id columns plus numeric feature columns
/// with a per-cell presence mask (early rows lack a full history window).
struct FeatureTable {
    std::vector<int> product_ids;
    std::vector<int> days;
    std::vector<std::string> categorical_names;
    std::vector<Eigen::VectorXi> categorical;
    std::vector<std::string> numeric_names;
    Eigen::MatrixXd numeric;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> present;

    Eigen::Index size() const { return static_cast<Eigen::Index>(product_ids.size()); }

    int numeric_column(const std::string& name) const {
        for (std::size_t i = 0; i < numeric_names.size(); ++i)
            if (numeric_names[i] == name) return static_cast<int>(i);
        throw DataError("feature table: no column '" + name + "'");
    }
};

struct ColumnNormStats {
    double offset = 0.0;  // added before the log; 0 when the column is positive
    double mean = 0.0;
    double stddev = 1.0;
    bool degenerate = false;  // zero variance: centered only
    bool applied = false;
};

inline double denormalize_log(double v, const ColumnNormStats& s) {
    if (!s.applied) return v;
    const double logged = s.degenerate ? v + s.mean : v * s.stddev + s.mean;
    return std::exp(logged) - s.offset;
}

/// Log-transforms then z-scores the selected numeric columns in place,
/// returning the statistics needed to reproduce (or invert) the mapping.
/// Non-positive columns get a documented offset of 1 - min(column).
inline std::vector<ColumnNormStats> normalize_log(FeatureTable& table,
                                                  const std::vector<bool>& apply) {
    if (apply.size() != static_cast<std::size_t>(table.numeric.cols()))
        throw std::invalid_argument("normalize_log: mask size mismatch");
    std::vector<ColumnNormStats> stats(apply.size());
    for (Eigen::Index c = 0; c < table.numeric.cols(); ++c) {
        if (!apply[c]) continue;
        ColumnNormStats& s = stats[c];
        s.applied = true;

        double min_v = std::numeric_limits<double>::infinity();
        int count = 0;
        for (Eigen::Index r = 0; r < table.numeric.rows(); ++r)
            if (table.present(r, c)) {
                min_v = std::min(min_v, table.numeric(r, c));
                ++count;
            }
        if (count == 0) {
            s.applied = false;
            continue;
        }
        s.offset = min_v <= 0.0 ? 1.0 - min_v : 0.0;

        double sum = 0.0;
        for (Eigen::Index r = 0; r < table.numeric.rows(); ++r)
            if (table.present(r, c)) {
                table.numeric(r, c) = std::log(table.numeric(r, c) + s.offset);
                sum += table.numeric(r, c);
            }
        s.mean = sum / count;
        double ss = 0.0;
        for (Eigen::Index r = 0; r < table.numeric.rows(); ++r)
            if (table.present(r, c)) ss += std::pow(table.numeric(r, c) - s.mean, 2);
        const double sd = count > 1 ? std::sqrt(ss / (count - 1)) : 0.0;
        if (sd < 1e-12) {
            s.degenerate = true;
            s.stddev = 1.0;
            for (Eigen::Index r = 0; r < table.numeric.rows(); ++r)
                if (table.present(r, c)) table.numeric(r, c) -= s.mean;
        } else {
            s.stddev = sd;
            for (Eigen::Index r = 0; r < table.numeric.rows(); ++r)
                if (table.present(r, c))
                    table.numeric(r, c) = (table.numeric(r, c) - s.mean) / sd;
        }
    }
    return stats;
}

struct PipelineConfig {
    int window = 28;
    double ewma_lambda = 0.9;
    double deviation_threshold = 0.05;
    bool apply_filter = false;  // the harness trains on unfiltered panels
    bool trailing_mean_filter = false;
    int calendar_origin = 0;  // weekday index of day 0, Monday = 0
    bool normalize = true;

    static PipelineConfig from_config(const KeyValueConfig& cfg,
                                      const std::string& prefix = "pipeline.") {
        PipelineConfig p;
        p.window = static_cast<int>(cfg.get_long(prefix + "window", p.window));
        p.ewma_lambda = cfg.get_double(prefix + "ewma_lambda", p.ewma_lambda);
        p.deviation_threshold =
            cfg.get_double(prefix + "deviation_threshold", p.deviation_threshold);
        p.apply_filter = cfg.get_bool(prefix + "apply_filter", p.apply_filter);
        p.trailing_mean_filter =
            cfg.get_bool(prefix + "trailing_mean_filter", p.trailing_mean_filter);
        p.calendar_origin = static_cast<int>(cfg.get_long(prefix + "calendar_origin", 0));
        p.normalize = cfg.get_bool(prefix + "normalize", p.normalize);
        if (p.window < 1) throw ConfigError("pipeline: window must be >= 1");
        if (p.ewma_lambda <= 0.0 || p.ewma_lambda > 1.0)
            throw ConfigError("pipeline: ewma_lambda must lie in (0, 1]");
        return p;
    }
};

/// Smallest positive gap between distinct prices observed strictly before
/// each day; the rounding unit for the price mode. Trailing so that future
/// observations can never alter an earlier feature row.
inline std::map<int, double> trailing_price_increments(const sim::SalesPanel& panel) {
    std::map<int, std::vector<double>> prices_by_day;
    for (const auto& r : panel.rows) prices_by_day[r.day].push_back(r.price);

    std::map<int, double> increment;
    std::set<double> seen;
    double min_gap = std::numeric_limits<double>::infinity();
    for (const auto& [day, prices] : prices_by_day) {
        increment[day] = std::isfinite(min_gap) ? min_gap : 1e-9;
        for (double p : prices) {
            auto [it, inserted] = seen.insert(p);
            if (!inserted) continue;
            if (it != seen.begin()) {
                const double gap = *it - *std::prev(it);
                if (gap > 1e-12) min_gap = std::min(min_gap, gap);
            }
            if (auto next = std::next(it); next != seen.end()) {
                const double gap = *next - *it;
                if (gap > 1e-12) min_gap = std::min(min_gap, gap);
            }
        }
    }
    return increment;
}

namespace detail {

inline const std::vector<std::string>& stat_suffixes() {
    static const std::vector<std::string> s{"mode", "median", "wmean", "std", "cv", "ewma"};
    return s;
}

inline void put_stats(Eigen::MatrixXd& numeric,
                      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& present,
                      Eigen::Index row, int col0, const WindowStats& s) {
    const std::optional<double> values[6] = {s.mode, s.median, s.weighted_mean,
                                             s.std_dev, s.cv, s.ewma};
    for (int k = 0; k < 6; ++k) {
        if (values[k]) {
            numeric(row, col0 + k) = *values[k];
            present(row, col0 + k) = true;
        } else {
            numeric(row, col0 + k) = 0.0;
            present(row, col0 + k) = false;
        }
    }
}

}  // namespace detail

/// Column layout (stable, documented): six price stats, six sales stats,
/// availability mean, six competitor-price stats, day_of_week, week_number.
/// Aggregates use only days strictly before each row's day.
inline FeatureTable build_feature_table(const sim::SalesPanel& panel,
                                        const PipelineConfig& cfg) {
    FeatureTable table;
    table.categorical_names = {"item_id"};
    for (const auto& prefix : {std::string("price_"), std::string("sales_")})
        for (const auto& suffix : detail::stat_suffixes())
            table.numeric_names.push_back(prefix + suffix);
    table.numeric_names.push_back("availability_mean");
    for (const auto& suffix : detail::stat_suffixes())
        table.numeric_names.push_back("comp_" + suffix);
    table.numeric_names.push_back("day_of_week");
    table.numeric_names.push_back("week_number");

    // Row selection honors the deviation filter; history never does.
    std::optional<std::set<std::pair<int, int>>> keep;
    if (cfg.apply_filter) {
        keep.emplace();
        const sim::SalesPanel kept = filter_price_deviation(
            panel, cfg.deviation_threshold, cfg.trailing_mean_filter, cfg.window);
        for (const auto& r : kept.rows) keep->emplace(r.product_id, r.day);
    }

    std::map<int, std::vector<const sim::PanelRow*>> by_product;
    for (const auto& r : panel.rows) by_product[r.product_id].push_back(&r);
    for (auto& [id, rows] : by_product)
        std::sort(rows.begin(), rows.end(),
                  [](const sim::PanelRow* a, const sim::PanelRow* b) { return a->day < b->day; });

    std::vector<const sim::PanelRow*> selected;
    for (const auto& [id, rows] : by_product)
        for (const auto* r : rows)
            if (!keep || keep->count({r->product_id, r->day})) selected.push_back(r);
    std::sort(selected.begin(), selected.end(),
              [](const sim::PanelRow* a, const sim::PanelRow* b) {
                  return a->day != b->day ? a->day < b->day : a->product_id < b->product_id;
              });

    const Eigen::Index n = static_cast<Eigen::Index>(selected.size());
    const int n_cols = static_cast<int>(table.numeric_names.size());
    table.numeric.setZero(n, n_cols);
    table.present.setConstant(n, n_cols, true);
    table.product_ids.resize(selected.size());
    table.days.resize(selected.size());
    Eigen::VectorXi item_ids(n);

    const std::map<int, double> increments = trailing_price_increments(panel);
    AggregateSpec sales_spec{cfg.ewma_lambda, 1.0};

    Eigen::Index row = 0;
    for (const auto* r : selected) {
        const AggregateSpec price_spec{cfg.ewma_lambda, increments.at(r->day)};
        const auto& history = by_product[r->product_id];
        std::vector<double> prices, sales, avail, competitor;
        for (const auto* h : history) {
            if (h->day >= r->day || h->day < r->day - cfg.window) continue;
            prices.push_back(h->price);
            sales.push_back(static_cast<double>(h->sales));
            avail.push_back(h->availability);
            if (h->competitor_price) competitor.push_back(*h->competitor_price);
        }

        table.product_ids[row] = r->product_id;
        table.days[row] = r->day;
        item_ids(row) = r->product_id;

        detail::put_stats(table.numeric, table.present, row, 0,
                          window_aggregate(prices, price_spec));
        detail::put_stats(table.numeric, table.present, row, 6,
                          window_aggregate(sales, sales_spec));
        if (!avail.empty()) {
            double mean = 0.0;
            for (double a : avail) mean += a;
            table.numeric(row, 12) = mean / static_cast<double>(avail.size());
        } else {
            table.present(row, 12) = false;
        }
        detail::put_stats(table.numeric, table.present, row, 13,
                          competitor_aggregate({competitor}, price_spec));

        const auto [dow, week] = calendar_features(r->day, cfg.calendar_origin);
        table.numeric(row, 19) = dow;
        table.numeric(row, 20) = week;
        ++row;
    }
    table.categorical.push_back(std::move(item_ids));

    if (cfg.normalize) {
        // Calendar columns stay in their natural units.
        std::vector<bool> apply(table.numeric_names.size(), true);
        apply[table.numeric_column("day_of_week")] = false;
        apply[table.numeric_column("week_number")] = false;
        normalize_log(table, apply);
    }
    return table;
}

/// Appends catalog characteristics (always-present numeric columns f0..fK).
inline void append_catalog_features(FeatureTable& table, const Eigen::MatrixXd& feats) {
    const Eigen::Index n = table.size();
    const Eigen::Index k0 = table.numeric.cols();
    Eigen::MatrixXd merged(n, k0 + feats.cols());
    merged.leftCols(k0) = table.numeric;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> present(n, k0 + feats.cols());
    present.leftCols(k0) = table.present;
    for (Eigen::Index r = 0; r < n; ++r) {
        const int pid = table.product_ids[static_cast<std::size_t>(r)];
        if (pid < 0 || pid >= feats.rows())
            throw DataError("append_catalog_features: product id outside catalog");
        merged.block(r, k0, 1, feats.cols()) = feats.row(pid);
        present.block(r, k0, 1, feats.cols()).setConstant(true);
    }
    table.numeric = std::move(merged);
    table.present = std::move(present);
    for (Eigen::Index f = 0; f < feats.cols(); ++f)
        table.numeric_names.push_back("f" + std::to_string(f));
}

inline void save_feature_table(const FeatureTable& table, const std::string& path) {
    csv::Writer w(path);
    std::vector<std::string> header{"product_id", "day"};
    for (const auto& name : table.categorical_names) header.push_back(name);
    for (const auto& name : table.numeric_names) header.push_back(name);
    w.row(header);
    for (Eigen::Index r = 0; r < table.size(); ++r) {
        std::vector<std::string> cells{std::to_string(table.product_ids[r]),
                                       std::to_string(table.days[r])};
        for (const auto& col : table.categorical) cells.push_back(std::to_string(col(r)));
        for (Eigen::Index c = 0; c < table.numeric.cols(); ++c)
            cells.push_back(table.present(r, c) ? format_double(table.numeric(r, c))
                                                : std::string());
        w.row(cells);
    }
}

inline FeatureTable load_feature_table(const std::string& path) {
    const csv::Table t = csv::read(path);
    if (t.header.size() < 3 || t.header[0] != "product_id" || t.header[1] != "day")
        throw DataError("feature table: unexpected header in '" + path + "'");

    FeatureTable table;
    // Categorical columns are the integer id columns that precede the stats;
    // by construction they are item_id plus any tree level ids.
    std::size_t c = 2;
    while (c < t.header.size() &&
           (t.header[c] == "item_id" || t.header[c].rfind("tree_level", 0) == 0 ||
            t.header[c] == "category_id"))
        table.categorical_names.push_back(t.header[c++]);
    for (std::size_t k = c; k < t.header.size(); ++k)
        table.numeric_names.push_back(t.header[k]);

    const Eigen::Index n = static_cast<Eigen::Index>(t.rows.size());
    table.product_ids.resize(t.rows.size());
    table.days.resize(t.rows.size());
    for (std::size_t f = 0; f < table.categorical_names.size(); ++f)
        table.categorical.emplace_back(n);
    table.numeric.setZero(n, static_cast<Eigen::Index>(table.numeric_names.size()));
    table.present.setConstant(n, table.numeric.cols(), false);

    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& cells = t.rows[static_cast<std::size_t>(r)];
        table.product_ids[r] = static_cast<int>(csv::parse_long(cells[0], "product_id"));
        table.days[r] = static_cast<int>(csv::parse_long(cells[1], "day"));
        for (std::size_t f = 0; f < table.categorical.size(); ++f)
            table.categorical[f](r) =
                static_cast<int>(csv::parse_long(cells[2 + f], table.categorical_names[f]));
        const std::size_t base = 2 + table.categorical.size();
        for (Eigen::Index k = 0; k < table.numeric.cols(); ++k) {
            const std::string& cell = cells[base + static_cast<std::size_t>(k)];
            if (cell.empty()) continue;
            table.numeric(r, k) = csv::parse_double(cell, table.numeric_names[k]);
            table.present(r, k) = true;
        }
    }
    return table;
}

}  // namespace demandbench::pipeline
