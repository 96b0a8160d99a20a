#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "demandbench/common.hpp"
#include "demandbench/config.hpp"
#include "demandbench/csv.hpp"
#include "demandbench/feature_pipeline.hpp"
#include "demandbench/market_sim.hpp"
#include "demandbench/nn_core.hpp"

namespace demandbench::ml {

/// Structural parameters of the linear demand head, in the model's
/// transformed units.
struct DemandTheta {
    double alpha = 0.0;
    double beta = 0.0;
};

/// Linear-demand point elasticity beta * p / (alpha + beta * p).
inline double point_elasticity(const DemandTheta& theta, double price) {
    const double demand = theta.alpha + theta.beta * price;
    if (demand <= 0.0)
        throw std::domain_error("point_elasticity: predicted demand is not positive");
    return theta.beta * price / demand;
}

struct TrainConfig {
    int batch_size = 128;
    int epochs = 5;
    double base_lr = 1e-3;
    double dropout = 0.1;
    double validation_fraction = 0.1;
    std::uint64_t seed = 1;
    double unknown_rate = 0.01;  // share of ids relabeled to the reserved index
    double bn_momentum = 0.1;
    int embedding_dim = 16;
    std::vector<int> emb_widths = {256, 128, 64};
    std::vector<int> fc_widths = {256, 128, 64, 32, 2};

    void validate() const {
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (validation_fraction < 0.0 || validation_fraction >= 1.0)
            throw ConfigError("train: validation_fraction must lie in [0, 1)");
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError("train: dropout must lie in [0, 1)");
        if (unknown_rate < 0.0 || unknown_rate > 0.5)
            throw ConfigError("train: unknown_rate must lie in [0, 0.5]");
        if (embedding_dim < 1) throw ConfigError("train: embedding_dim must be >= 1");
        if (emb_widths.size() != 3 || emb_widths.back() != 64)
            throw ConfigError("train: emb_widths must be 3 layers ending at 64");
        if (fc_widths.size() != 5 || fc_widths.back() != 2)
            throw ConfigError("train: fc_widths must be 5 layers ending at 2");
    }

    static TrainConfig from_config(const KeyValueConfig& cfg,
                                   const std::string& prefix = "train.") {
        TrainConfig t;
        t.batch_size = static_cast<int>(cfg.get_long(prefix + "batch_size", t.batch_size));
        t.epochs = static_cast<int>(cfg.get_long(prefix + "epochs", t.epochs));
        t.base_lr = cfg.get_double(prefix + "base_lr", t.base_lr);
        t.dropout = cfg.get_double(prefix + "dropout", t.dropout);
        t.validation_fraction =
            cfg.get_double(prefix + "validation_fraction", t.validation_fraction);
        t.seed = static_cast<std::uint64_t>(cfg.get_long(prefix + "seed", 1));
        t.unknown_rate = cfg.get_double(prefix + "unknown_rate", t.unknown_rate);
        t.bn_momentum = cfg.get_double(prefix + "bn_momentum", t.bn_momentum);
        t.embedding_dim =
            static_cast<int>(cfg.get_long(prefix + "embedding_dim", t.embedding_dim));
        auto widths = cfg.get_long_list(prefix + "emb_widths", {256, 128, 64});
        t.emb_widths.assign(widths.begin(), widths.end());
        widths = cfg.get_long_list(prefix + "fc_widths", {256, 128, 64, 32, 2});
        t.fc_widths.assign(widths.begin(), widths.end());
        t.validate();
        return t;
    }
};

/// F_emb: embedding lookups -> three dense layers (dropout on the hidden
/// ones) -> 64-wide representation. F_FC: (representation, numeric block) ->
/// five dense layers with batch norm and dropout on the hidden ones -> 2.
inline nn::NetworkArch build_architecture(const std::vector<int>& vocab_sizes,
                                          int n_numeric,
                                          const TrainConfig& config = {}) {
    config.validate();
    if (vocab_sizes.empty())
        throw ConfigError("build_architecture: need at least one categorical field");
    for (int v : vocab_sizes)
        if (v < 1) throw ConfigError("build_architecture: vocabulary sizes must be >= 1");

    nn::NetworkArch arch;
    for (int v : vocab_sizes) arch.embeddings.push_back({v, config.embedding_dim});
    arch.n_numeric = n_numeric;

    int in = arch.emb_concat_dim();
    for (std::size_t l = 0; l < config.emb_widths.size(); ++l) {
        const bool last = l + 1 == config.emb_widths.size();
        arch.emb_layers.push_back(
            {in, config.emb_widths[l], !last, false, last ? 0.0 : config.dropout});
        in = config.emb_widths[l];
    }
    in = arch.emb_output_dim() + n_numeric;
    for (std::size_t l = 0; l < config.fc_widths.size(); ++l) {
        const bool last = l + 1 == config.fc_widths.size();
        arch.fc_layers.push_back(
            {in, config.fc_widths[l], !last, !last, last ? 0.0 : config.dropout});
        in = config.fc_widths[l];
    }
    arch.validate();
    return arch;
}

/// A trained network plus everything inference needs to reproduce the
/// training-time input scaling: vocabularies, imputation means, feature
/// standardization, and the log-target statistics.
struct TrainedModel {
    nn::NetworkParams params;
    nn::OptimizerState optimizer;
    TrainConfig config;

    std::vector<std::map<int, int>> vocabs;  // raw id -> embedding index (0 reserved)
    std::vector<std::string> numeric_names;  // includes the trailing presence indicator
    Eigen::VectorXd impute_mean, feature_mean, feature_std;
    double q_mu = 0.0, q_sigma = 1.0;  // of ln(q + 1)
    double p_mu = 0.0, p_sigma = 1.0;  // of ln(p)

    std::vector<double> step_train_loss;
    std::vector<int> step_epoch;
    std::vector<double> epoch_train_loss, epoch_val_loss;

    /// Applies vocab lookup, imputation, presence indicator, and feature
    /// standardization; shared by the training and inference paths.
    std::pair<std::vector<Eigen::VectorXi>, Eigen::MatrixXd> transform_features(
        const pipeline::FeatureTable& table) const {
        if (table.categorical.size() != vocabs.size())
            throw DataError("model: categorical field count mismatch");
        if (table.numeric_names.size() + 1 != numeric_names.size())
            throw DataError("model: numeric column count mismatch");
        const Eigen::Index n = table.size();

        std::vector<Eigen::VectorXi> cats;
        for (std::size_t f = 0; f < vocabs.size(); ++f) {
            Eigen::VectorXi idx(n);
            for (Eigen::Index r = 0; r < n; ++r) {
                auto it = vocabs[f].find(table.categorical[f](r));
                idx(r) = it == vocabs[f].end() ? 0 : it->second;
            }
            cats.push_back(std::move(idx));
        }

        Eigen::MatrixXd numeric(n, static_cast<Eigen::Index>(numeric_names.size()));
        for (Eigen::Index r = 0; r < n; ++r) {
            bool all_present = true;
            for (Eigen::Index c = 0; c < table.numeric.cols(); ++c) {
                if (table.present(r, c)) {
                    const double v = table.numeric(r, c);
                    if (!std::isfinite(v))
                        throw DataError("train: non-finite feature '" +
                                        table.numeric_names[c] + "' at product " +
                                        std::to_string(table.product_ids[r]) + " day " +
                                        std::to_string(table.days[r]));
                    numeric(r, c) = v;
                } else {
                    numeric(r, c) = impute_mean(c);
                    all_present = false;
                }
            }
            numeric(r, numeric.cols() - 1) = all_present ? 1.0 : 0.0;
        }
        for (Eigen::Index c = 0; c < numeric.cols(); ++c)
            numeric.col(c) = (numeric.col(c).array() - feature_mean(c)) / feature_std(c);
        return {std::move(cats), std::move(numeric)};
    }

    /// Eval-mode theta for every table row.
    Eigen::MatrixXd predict_theta_rows(const pipeline::FeatureTable& table) const {
        auto [cats, numeric] = transform_features(table);
        nn::Batch batch;
        batch.categorical = std::move(cats);
        batch.numeric = std::move(numeric);
        batch.prices = Eigen::VectorXd::Zero(table.size());
        batch.quantities = Eigen::VectorXd::Zero(table.size());
        Rng rng(0);  // eval mode draws nothing
        return nn::forward(params, batch, nn::Mode::Eval, rng).theta;
    }

    DemandTheta predict_theta(const pipeline::FeatureTable& table, Eigen::Index row) const {
        pipeline::FeatureTable one;
        one.product_ids = {table.product_ids[row]};
        one.days = {table.days[row]};
        one.categorical_names = table.categorical_names;
        for (const auto& col : table.categorical)
            one.categorical.push_back(col.segment(row, 1));
        one.numeric_names = table.numeric_names;
        one.numeric = table.numeric.row(row);
        one.present = table.present.row(row);
        const Eigen::MatrixXd theta = predict_theta_rows(one);
        return {theta(0, 0), theta(0, 1)};
    }

    /// Mean eval-mode theta per product.
    std::map<int, DemandTheta> per_product_theta(const pipeline::FeatureTable& table) const {
        const Eigen::MatrixXd theta = predict_theta_rows(table);
        std::map<int, std::pair<Eigen::Vector2d, long>> acc;
        for (Eigen::Index r = 0; r < theta.rows(); ++r) {
            auto& entry = acc[table.product_ids[static_cast<std::size_t>(r)]];
            if (entry.second == 0) entry.first.setZero();
            entry.first += theta.row(r).transpose();
            entry.second += 1;
        }
        std::map<int, DemandTheta> out;
        for (const auto& [id, entry] : acc)
            out[id] = {entry.first(0) / entry.second, entry.first(1) / entry.second};
        return out;
    }

    /// Back-transformed log-log price slope: the head is linear in the
    /// standardized log price with a standardized log(q+1) response, so
    /// d ln(q+1) / d ln p = beta * sigma_q / sigma_p. Reported as the model's
    /// elasticity; for sales well above one unit the +1 shift is negligible.
    double elasticity(const DemandTheta& theta) const {
        return theta.beta * q_sigma / p_sigma;
    }

    /// Predicted demand in raw units at a raw price.
    double predict_demand(const DemandTheta& theta, double price) const {
        if (price <= 0.0) throw std::domain_error("predict_demand: price must be > 0");
        const double p_t = (std::log(price) - p_mu) / p_sigma;
        return std::exp(q_mu + q_sigma * (theta.alpha + theta.beta * p_t)) - 1.0;
    }

    /// Local linear approximation q ~ alpha + beta p around a reference
    /// price, in raw units; the bridge into the revenue optimizer.
    DemandTheta linearize(const DemandTheta& theta, double reference_price) const {
        const double q = predict_demand(theta, reference_price);
        const double slope =
            (q + 1.0) * q_sigma * theta.beta / (p_sigma * reference_price);
        return {q - slope * reference_price, slope};
    }
};

/// Trains the two-stage network on panel rows joined with their feature rows
/// by (product, day). Prices feed only the structural loss; the network sees
/// categorical ids and the numeric block. Deterministic given config.seed.
inline TrainedModel train(const sim::SalesPanel& panel,
                          const pipeline::FeatureTable& features,
                          const TrainConfig& config) {
    config.validate();
    if (features.size() == 0) throw DataError("train: empty feature table");
    if (panel.rows.empty()) throw DataError("train: empty panel");

    // Join: every feature row must have a panel row.
    std::map<std::pair<int, int>, const sim::PanelRow*> panel_index;
    for (const auto& r : panel.rows) panel_index[{r.product_id, r.day}] = &r;
    const Eigen::Index n = features.size();
    Eigen::VectorXd raw_price(n), raw_quantity(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        auto it = panel_index.find({features.product_ids[r], features.days[r]});
        if (it == panel_index.end())
            throw DataError("train: feature row without matching panel row (product " +
                            std::to_string(features.product_ids[r]) + ", day " +
                            std::to_string(features.days[r]) + ")");
        if (it->second->price <= 0.0) throw DataError("train: non-positive price");
        raw_price(r) = it->second->price;
        raw_quantity(r) = static_cast<double>(it->second->sales);
    }

    TrainedModel model;
    model.config = config;
    model.numeric_names = features.numeric_names;
    model.numeric_names.push_back("history_present");

    // Vocabularies with index 0 reserved for unknown ids.
    for (const auto& col : features.categorical) {
        std::map<int, int> vocab;
        for (Eigen::Index r = 0; r < n; ++r)
            if (!vocab.count(col(r))) vocab[col(r)] = static_cast<int>(vocab.size()) + 1;
        model.vocabs.push_back(std::move(vocab));
    }

    // Time-ordered validation split: the last validation_fraction of days.
    std::vector<int> days_sorted(features.days);
    std::sort(days_sorted.begin(), days_sorted.end());
    const auto cut_pos = static_cast<std::size_t>(
        std::floor((1.0 - config.validation_fraction) * (days_sorted.size() - 1)));
    const int val_cut = config.validation_fraction > 0.0
                            ? days_sorted[std::min(cut_pos, days_sorted.size() - 1)]
                            : days_sorted.back() + 1;
    std::vector<Eigen::Index> train_rows, val_rows;
    for (Eigen::Index r = 0; r < n; ++r)
        (features.days[r] > val_cut ? val_rows : train_rows).push_back(r);
    if (train_rows.empty()) throw DataError("train: empty training split");

    // Imputation means over present cells of the training split.
    const Eigen::Index k_table = features.numeric.cols();
    model.impute_mean = Eigen::VectorXd::Zero(k_table + 1);
    for (Eigen::Index c = 0; c < k_table; ++c) {
        double sum = 0.0;
        long count = 0;
        for (Eigen::Index r : train_rows)
            if (features.present(r, c)) {
                sum += features.numeric(r, c);
                ++count;
            }
        model.impute_mean(c) = count > 0 ? sum / count : 0.0;
    }

    // Feature standardization statistics from the training split, computed on
    // the imputed matrix (identity scaling as a safe placeholder first).
    model.feature_mean = Eigen::VectorXd::Zero(k_table + 1);
    model.feature_std = Eigen::VectorXd::Ones(k_table + 1);
    Eigen::MatrixXd numeric_all_raw = model.transform_features(features).second;
    {
        Eigen::MatrixXd train_block(train_rows.size(), numeric_all_raw.cols());
        for (std::size_t i = 0; i < train_rows.size(); ++i)
            train_block.row(static_cast<Eigen::Index>(i)) = numeric_all_raw.row(train_rows[i]);
        for (Eigen::Index c = 0; c < train_block.cols(); ++c) {
            const double mean = train_block.col(c).mean();
            const double sd = train_block.rows() > 1
                                  ? std::sqrt((train_block.col(c).array() - mean)
                                                  .square()
                                                  .sum() /
                                              static_cast<double>(train_block.rows() - 1))
                                  : 0.0;
            model.feature_mean(c) = mean;
            model.feature_std(c) = sd > 1e-12 ? sd : 1.0;
        }
    }
    auto [cats, numeric] = model.transform_features(features);

    // Target and price transforms from the training split.
    {
        double sum = 0.0, sum_p = 0.0;
        for (Eigen::Index r : train_rows) {
            sum += std::log(raw_quantity(r) + 1.0);
            sum_p += std::log(raw_price(r));
        }
        model.q_mu = sum / static_cast<double>(train_rows.size());
        model.p_mu = sum_p / static_cast<double>(train_rows.size());
        double ss = 0.0, ss_p = 0.0;
        for (Eigen::Index r : train_rows) {
            ss += std::pow(std::log(raw_quantity(r) + 1.0) - model.q_mu, 2);
            ss_p += std::pow(std::log(raw_price(r)) - model.p_mu, 2);
        }
        const auto m = static_cast<double>(train_rows.size());
        model.q_sigma = ss > 0.0 && m > 1 ? std::sqrt(ss / (m - 1)) : 1.0;
        model.p_sigma = ss_p > 0.0 && m > 1 ? std::sqrt(ss_p / (m - 1)) : 1.0;
        if (model.q_sigma < 1e-12) model.q_sigma = 1.0;
        if (model.p_sigma < 1e-12) model.p_sigma = 1.0;
    }
    Eigen::VectorXd y_t(n), p_t(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        y_t(r) = (std::log(raw_quantity(r) + 1.0) - model.q_mu) / model.q_sigma;
        p_t(r) = (std::log(raw_price(r)) - model.p_mu) / model.p_sigma;
    }

    std::vector<int> vocab_sizes;
    for (const auto& v : model.vocabs) vocab_sizes.push_back(static_cast<int>(v.size()) + 1);
    const auto arch = build_architecture(
        vocab_sizes, static_cast<int>(numeric.cols()), config);
    model.params = nn::init_params(arch, config.seed);
    const long steps_per_epoch =
        (static_cast<long>(train_rows.size()) + config.batch_size - 1) / config.batch_size;
    model.optimizer = nn::OptimizerState::init(model.params, config.base_lr, steps_per_epoch);

    Rng rng = derive_rng(config.seed, 0x7E41);
    std::bernoulli_distribution relabel(config.unknown_rate);

    auto make_batch = [&](const std::vector<Eigen::Index>& rows, bool with_unknowns,
                          Rng& batch_rng) {
        nn::Batch batch;
        const auto m = static_cast<Eigen::Index>(rows.size());
        for (const auto& col : cats) {
            Eigen::VectorXi idx(m);
            for (Eigen::Index i = 0; i < m; ++i) {
                int v = col(rows[static_cast<std::size_t>(i)]);
                if (with_unknowns && config.unknown_rate > 0.0 && relabel(batch_rng)) v = 0;
                idx(i) = v;
            }
            batch.categorical.push_back(std::move(idx));
        }
        batch.numeric.resize(m, numeric.cols());
        batch.prices.resize(m);
        batch.quantities.resize(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const Eigen::Index r = rows[static_cast<std::size_t>(i)];
            batch.numeric.row(i) = numeric.row(r);
            batch.prices(i) = p_t(r);
            batch.quantities(i) = y_t(r);
        }
        return batch;
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<Eigen::Index> order = train_rows;
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0.0;
        long epoch_steps = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<Eigen::Index> rows(order.begin() + start, order.begin() + stop);
            nn::Batch batch = make_batch(rows, true, rng);
            auto fwd = nn::forward(model.params, batch, nn::Mode::Train, rng);
            auto [loss, dtheta] =
                nn::structural_loss(fwd.theta, batch.prices, batch.quantities);
            auto grads = nn::backward(model.params, fwd.tape, dtheta);
            nn::adam_step(model.params, grads, model.optimizer);
            nn::update_running_stats(model.params, fwd.tape, config.bn_momentum);

            model.step_train_loss.push_back(loss);
            model.step_epoch.push_back(epoch);
            epoch_sum += loss;
            ++epoch_steps;
        }
        model.epoch_train_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));

        if (!val_rows.empty()) {
            Rng eval_rng(0);
            nn::Batch vb = make_batch(val_rows, false, eval_rng);
            auto fwd = nn::forward(model.params, vb, nn::Mode::Eval, eval_rng);
            model.epoch_val_loss.push_back(
                nn::structural_loss(fwd.theta, vb.prices, vb.quantities).first);
        } else {
            model.epoch_val_loss.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// Serialization (versioned text; bit-exact round trip)
// ---------------------------------------------------------------------------

inline void save_model(std::ostream& os, const TrainedModel& model) {
    os << "demandbench-model 1\n";
    nn::save_params(os, model.params);
    nn::save_optimizer(os, model.optimizer);
    os << "vocabs " << model.vocabs.size() << '\n';
    for (const auto& vocab : model.vocabs) {
        os << "vocab " << vocab.size() << '\n';
        for (const auto& [value, idx] : vocab) os << value << ' ' << idx << '\n';
    }
    os << "numeric " << model.numeric_names.size() << '\n';
    for (std::size_t c = 0; c < model.numeric_names.size(); ++c)
        os << model.numeric_names[c] << ' ' << format_double(model.impute_mean(c)) << ' '
           << format_double(model.feature_mean(c)) << ' '
           << format_double(model.feature_std(c)) << '\n';
    os << "target " << format_double(model.q_mu) << ' ' << format_double(model.q_sigma)
       << ' ' << format_double(model.p_mu) << ' ' << format_double(model.p_sigma) << '\n';
    os << "history.steps " << model.step_train_loss.size() << '\n';
    for (std::size_t i = 0; i < model.step_train_loss.size(); ++i)
        os << model.step_epoch[i] << ' ' << format_double(model.step_train_loss[i]) << '\n';
    os << "history.epochs " << model.epoch_train_loss.size() << '\n';
    for (std::size_t e = 0; e < model.epoch_train_loss.size(); ++e)
        os << format_double(model.epoch_train_loss[e]) << ' '
           << format_double(model.epoch_val_loss[e]) << '\n';
    os << "end\n";
}

inline TrainedModel load_model(std::istream& is) {
    std::string tag;
    int version = 0;
    if (!(is >> tag >> version) || tag != "demandbench-model" || version != 1)
        throw DataError("model: unsupported file header");
    TrainedModel model;
    model.params = nn::load_params(is);
    model.optimizer = nn::load_optimizer(is, model.params);

    std::size_t n_vocabs = 0;
    if (!(is >> tag >> n_vocabs) || tag != "vocabs")
        throw DataError("model: expected vocabs section");
    for (std::size_t f = 0; f < n_vocabs; ++f) {
        std::size_t entries = 0;
        if (!(is >> tag >> entries) || tag != "vocab")
            throw DataError("model: expected vocab entry");
        std::map<int, int> vocab;
        for (std::size_t i = 0; i < entries; ++i) {
            int value, idx;
            if (!(is >> value >> idx)) throw DataError("model: truncated vocab");
            vocab[value] = idx;
        }
        model.vocabs.push_back(std::move(vocab));
    }

    std::size_t n_numeric = 0;
    if (!(is >> tag >> n_numeric) || tag != "numeric")
        throw DataError("model: expected numeric section");
    model.impute_mean.resize(static_cast<Eigen::Index>(n_numeric));
    model.feature_mean.resize(static_cast<Eigen::Index>(n_numeric));
    model.feature_std.resize(static_cast<Eigen::Index>(n_numeric));
    for (std::size_t c = 0; c < n_numeric; ++c) {
        std::string name;
        if (!(is >> name >> model.impute_mean(c) >> model.feature_mean(c) >>
              model.feature_std(c)))
            throw DataError("model: truncated numeric stats");
        model.numeric_names.push_back(name);
    }

    if (!(is >> tag >> model.q_mu >> model.q_sigma >> model.p_mu >> model.p_sigma) ||
        tag != "target")
        throw DataError("model: expected target section");

    std::size_t n_steps = 0;
    if (!(is >> tag >> n_steps) || tag != "history.steps")
        throw DataError("model: expected step history");
    model.step_epoch.resize(n_steps);
    model.step_train_loss.resize(n_steps);
    for (std::size_t i = 0; i < n_steps; ++i)
        if (!(is >> model.step_epoch[i] >> model.step_train_loss[i]))
            throw DataError("model: truncated step history");

    std::size_t n_epochs = 0;
    if (!(is >> tag >> n_epochs) || tag != "history.epochs")
        throw DataError("model: expected epoch history");
    model.epoch_train_loss.resize(n_epochs);
    model.epoch_val_loss.resize(n_epochs);
    for (std::size_t e = 0; e < n_epochs; ++e)
        if (!(is >> model.epoch_train_loss[e] >> model.epoch_val_loss[e]))
            throw DataError("model: truncated epoch history");

    if (!(is >> tag) || tag != "end") throw DataError("model: missing end marker");
    return model;
}

inline void save_loss_history(const TrainedModel& model, const std::string& path) {
    csv::Writer w(path);
    w.row({"step", "epoch", "train_loss", "val_loss"});
    long steps_per_epoch = 0;
    if (!model.step_epoch.empty())
        steps_per_epoch = static_cast<long>(model.step_epoch.size()) /
                          static_cast<long>(model.epoch_train_loss.size());
    for (std::size_t i = 0; i < model.step_train_loss.size(); ++i) {
        const int epoch = model.step_epoch[i];
        const bool epoch_end =
            steps_per_epoch > 0 && (i + 1) % static_cast<std::size_t>(steps_per_epoch) == 0;
        w.row({std::to_string(i), std::to_string(epoch),
               csv::Writer::num(model.step_train_loss[i]),
               epoch_end && std::isfinite(model.epoch_val_loss[static_cast<std::size_t>(epoch)])
                   ? csv::Writer::num(model.epoch_val_loss[static_cast<std::size_t>(epoch)])
                   : std::string()});
    }
}

}  // namespace demandbench::ml
