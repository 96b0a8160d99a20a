#pragma once

#include <Eigen/Core>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "demandbench/common.hpp"

namespace demandbench::nn {

constexpr double kBnEps = 1e-5;

enum class Mode { Train, Eval };

struct EmbeddingSpec {
    int vocab = 0;
    int dim = 0;
    bool operator==(const EmbeddingSpec&) const = default;
};

struct DenseSpec {
    int in = 0;
    int out = 0;
    bool relu = false;
    bool batch_norm = false;
    double dropout = 0.0;
    bool operator==(const DenseSpec&) const = default;
};

/// Two-stage topology: F_emb maps concatenated embedding vectors to a 64-wide
/// product representation; F_FC maps (representation, numeric features) to
/// the two demand parameters. Prices are never part of the inputs.
struct NetworkArch {
    std::vector<EmbeddingSpec> embeddings;
    std::vector<DenseSpec> emb_layers;
    std::vector<DenseSpec> fc_layers;
    int n_numeric = 0;

    bool operator==(const NetworkArch&) const = default;

    int emb_concat_dim() const {
        int d = 0;
        for (const auto& e : embeddings) d += e.dim;
        return d;
    }
    int emb_output_dim() const { return emb_layers.empty() ? 0 : emb_layers.back().out; }
    int output_dim() const { return fc_layers.empty() ? 0 : fc_layers.back().out; }

    void validate() const {
        if (embeddings.empty()) throw ConfigError("arch: at least one embedding field");
        for (const auto& e : embeddings)
            if (e.vocab < 1 || e.dim < 1) throw ConfigError("arch: bad embedding spec");
        if (n_numeric < 0) throw ConfigError("arch: n_numeric must be >= 0");
        if (emb_layers.empty() || fc_layers.empty())
            throw ConfigError("arch: both subnetworks need layers");
        auto check_chain = [](const std::vector<DenseSpec>& ls, int in,
                              const char* name) {
            for (const auto& l : ls) {
                if (l.in != in)
                    throw ConfigError(std::string("arch: ") + name + " widths do not chain");
                if (l.out < 1) throw ConfigError("arch: layer output width must be >= 1");
                if (l.dropout < 0.0 || l.dropout >= 1.0)
                    throw ConfigError("arch: dropout rate must lie in [0, 1)");
                in = l.out;
            }
        };
        check_chain(emb_layers, emb_concat_dim(), "F_emb");
        if (emb_output_dim() != 64)
            throw ConfigError("arch: F_emb must end at width 64");
        check_chain(fc_layers, emb_output_dim() + n_numeric, "F_FC");
        if (output_dim() != 2) throw ConfigError("arch: F_FC must end at width 2");
    }
};

struct DenseParams {
    Eigen::MatrixXd W;  // in x out
    Eigen::VectorXd b;  // out
};

struct BatchNormParams {
    Eigen::VectorXd gamma, beta, running_mean, running_var;
};

struct NetworkParams {
    NetworkArch arch;
    std::vector<Eigen::MatrixXd> embeddings;  // vocab x dim each
    std::vector<DenseParams> emb_dense, fc_dense;
    std::vector<std::optional<BatchNormParams>> emb_bn, fc_bn;
};

/// Gradient (or moment) tensors shaped exactly like NetworkParams.
struct NetworkGrads {
    struct Layer {
        Eigen::MatrixXd dW;
        Eigen::VectorXd db;
        Eigen::VectorXd dgamma, dbeta;  // size 0 without batch norm
    };
    std::vector<Eigen::MatrixXd> embeddings;
    std::vector<Layer> emb_layers, fc_layers;
};

struct Batch {
    std::vector<Eigen::VectorXi> categorical;  // one index vector per field
    Eigen::MatrixXd numeric;                   // n x n_numeric
    Eigen::VectorXd prices;
    Eigen::VectorXd quantities;

    Eigen::Index size() const {
        return categorical.empty() ? numeric.rows() : categorical.front().size();
    }

    void validate(const NetworkArch& arch) const {
        if (categorical.size() != arch.embeddings.size())
            throw std::invalid_argument("batch: categorical field count mismatch");
        const Eigen::Index n = size();
        for (std::size_t f = 0; f < categorical.size(); ++f) {
            if (categorical[f].size() != n)
                throw std::invalid_argument("batch: ragged categorical columns");
            for (Eigen::Index i = 0; i < n; ++i) {
                const int idx = categorical[f](i);
                if (idx < 0 || idx >= arch.embeddings[f].vocab)
                    throw std::out_of_range("batch: categorical index " +
                                            std::to_string(idx) + " outside vocabulary " +
                                            std::to_string(arch.embeddings[f].vocab));
            }
        }
        if (numeric.rows() != n || numeric.cols() != arch.n_numeric)
            throw std::invalid_argument("batch: numeric block shape mismatch");
        if (prices.size() != n || quantities.size() != n)
            throw std::invalid_argument("batch: price/quantity length mismatch");
    }
};

inline NetworkParams init_params(const NetworkArch& arch, std::uint64_t seed) {
    arch.validate();
    NetworkParams p;
    p.arch = arch;
    Rng rng = derive_rng(seed, 0xA11C);
    std::uniform_real_distribution<double> emb_init(-0.1, 0.1);
    for (const auto& spec : arch.embeddings) {
        Eigen::MatrixXd table(spec.vocab, spec.dim);
        for (Eigen::Index r = 0; r < table.rows(); ++r)
            for (Eigen::Index c = 0; c < table.cols(); ++c) table(r, c) = emb_init(rng);
        p.embeddings.push_back(std::move(table));
    }
    auto init_stack = [&](const std::vector<DenseSpec>& specs,
                          std::vector<DenseParams>& dense,
                          std::vector<std::optional<BatchNormParams>>& bns) {
        for (const auto& spec : specs) {
            const double bound = std::sqrt(3.0 / spec.in);
            std::uniform_real_distribution<double> w_init(-bound, bound);
            DenseParams d;
            d.W.resize(spec.in, spec.out);
            for (Eigen::Index r = 0; r < d.W.rows(); ++r)
                for (Eigen::Index c = 0; c < d.W.cols(); ++c) d.W(r, c) = w_init(rng);
            d.b = Eigen::VectorXd::Zero(spec.out);
            dense.push_back(std::move(d));
            if (spec.batch_norm) {
                BatchNormParams bn;
                bn.gamma = Eigen::VectorXd::Ones(spec.out);
                bn.beta = Eigen::VectorXd::Zero(spec.out);
                bn.running_mean = Eigen::VectorXd::Zero(spec.out);
                bn.running_var = Eigen::VectorXd::Ones(spec.out);
                bns.emplace_back(std::move(bn));
            } else {
                bns.emplace_back(std::nullopt);
            }
        }
    };
    init_stack(arch.emb_layers, p.emb_dense, p.emb_bn);
    init_stack(arch.fc_layers, p.fc_dense, p.fc_bn);
    return p;
}

struct LayerTape {
    Eigen::MatrixXd input;     // layer input X
    Eigen::MatrixXd affine;    // X W + b (kept only for batch-norm layers)
    Eigen::MatrixXd zhat;      // normalized pre-activation (batch norm)
    Eigen::VectorXd mu, var;   // train-mode batch statistics
    Eigen::VectorXd istd;      // 1 / sqrt(var + eps) actually used
    Eigen::MatrixXd pre_act;   // value fed into the activation
    Eigen::MatrixXd drop_mask; // inverted-dropout multipliers (train only)
};

struct Tape {
    NetworkArch arch;
    Mode mode = Mode::Eval;
    std::vector<Eigen::VectorXi> categorical;
    Eigen::MatrixXd emb_concat;
    std::vector<LayerTape> emb_layers;
    Eigen::MatrixXd fc_input;
    std::vector<LayerTape> fc_layers;
};

struct ForwardResult {
    Eigen::MatrixXd theta;  // n x 2, row i = (alpha_i, beta_i)
    Tape tape;
};

namespace detail {

inline Eigen::MatrixXd run_layer(const DenseSpec& spec, const DenseParams& dense,
                                 const std::optional<BatchNormParams>& bn,
                                 const Eigen::MatrixXd& input, Mode mode, Rng& rng,
                                 LayerTape& tape) {
    tape.input = input;
    Eigen::MatrixXd h = (input * dense.W).rowwise() + dense.b.transpose();

    if (spec.batch_norm) {
        tape.affine = h;
        if (mode == Mode::Train) {
            tape.mu = h.colwise().mean().transpose();
            Eigen::MatrixXd centered = h.rowwise() - tape.mu.transpose();
            tape.var = centered.array().square().colwise().mean().matrix().transpose();
            tape.istd = (tape.var.array() + kBnEps).rsqrt().matrix();
            tape.zhat = centered * tape.istd.asDiagonal();
        } else {
            tape.istd = (bn->running_var.array() + kBnEps).rsqrt().matrix();
            Eigen::MatrixXd centered = h.rowwise() - bn->running_mean.transpose();
            tape.zhat = centered * tape.istd.asDiagonal();
        }
        h = tape.zhat * bn->gamma.asDiagonal();
        h.rowwise() += bn->beta.transpose();
    }

    tape.pre_act = h;
    if (spec.relu) h = h.cwiseMax(0.0);

    if (spec.dropout > 0.0 && mode == Mode::Train) {
        std::bernoulli_distribution keep(1.0 - spec.dropout);
        const double scale = 1.0 / (1.0 - spec.dropout);
        tape.drop_mask.resize(h.rows(), h.cols());
        for (Eigen::Index r = 0; r < h.rows(); ++r)
            for (Eigen::Index c = 0; c < h.cols(); ++c)
                tape.drop_mask(r, c) = keep(rng) ? scale : 0.0;
        h = h.cwiseProduct(tape.drop_mask);
    }
    return h;
}

}  // namespace detail

/// Runs Eq.-style two-stage inference. Consumes the categorical and numeric
/// inputs only; the price and quantity columns of the batch are untouched.
/// Pure in both modes: train-mode batch statistics are recorded on the tape
/// and running statistics are only changed by update_running_stats.
inline ForwardResult forward(const NetworkParams& params, const Batch& batch, Mode mode,
                             Rng& rng) {
    batch.validate(params.arch);
    const Eigen::Index n = batch.size();

    ForwardResult res;
    Tape& tape = res.tape;
    tape.arch = params.arch;
    tape.mode = mode;
    tape.categorical = batch.categorical;

    tape.emb_concat.resize(n, params.arch.emb_concat_dim());
    Eigen::Index col = 0;
    for (std::size_t f = 0; f < params.embeddings.size(); ++f) {
        const int dim = params.arch.embeddings[f].dim;
        for (Eigen::Index i = 0; i < n; ++i)
            tape.emb_concat.block(i, col, 1, dim) =
                params.embeddings[f].row(batch.categorical[f](i));
        col += dim;
    }

    Eigen::MatrixXd h = tape.emb_concat;
    tape.emb_layers.resize(params.arch.emb_layers.size());
    for (std::size_t l = 0; l < params.arch.emb_layers.size(); ++l)
        h = detail::run_layer(params.arch.emb_layers[l], params.emb_dense[l],
                              params.emb_bn[l], h, mode, rng, tape.emb_layers[l]);

    tape.fc_input.resize(n, h.cols() + batch.numeric.cols());
    tape.fc_input << h, batch.numeric;

    h = tape.fc_input;
    tape.fc_layers.resize(params.arch.fc_layers.size());
    for (std::size_t l = 0; l < params.arch.fc_layers.size(); ++l)
        h = detail::run_layer(params.arch.fc_layers[l], params.fc_dense[l],
                              params.fc_bn[l], h, mode, rng, tape.fc_layers[l]);

    res.theta = std::move(h);
    return res;
}

/// Mean squared error of the linear demand head,
/// loss = 1/n sum_i (alpha_i + beta_i P_i - q_i)^2, with its theta-gradient.
inline std::pair<double, Eigen::MatrixXd> structural_loss(const Eigen::MatrixXd& theta,
                                                          const Eigen::VectorXd& prices,
                                                          const Eigen::VectorXd& quantities) {
    if (theta.cols() != 2 || theta.rows() != prices.size() ||
        prices.size() != quantities.size())
        throw std::invalid_argument("structural_loss: shape mismatch");
    const auto n = static_cast<double>(theta.rows());
    Eigen::VectorXd residual =
        theta.col(0) + theta.col(1).cwiseProduct(prices) - quantities;
    const double loss = residual.squaredNorm() / n;
    Eigen::MatrixXd grad(theta.rows(), 2);
    grad.col(0) = (2.0 / n) * residual;
    grad.col(1) = (2.0 / n) * residual.cwiseProduct(prices);
    return {loss, std::move(grad)};
}

namespace detail {

inline Eigen::MatrixXd backward_layer(const DenseSpec& spec, const DenseParams& dense,
                                      const std::optional<BatchNormParams>& bn,
                                      const LayerTape& tape, Mode mode,
                                      const Eigen::MatrixXd& dout_in,
                                      NetworkGrads::Layer& grads) {
    Eigen::MatrixXd dout = dout_in;
    if (spec.dropout > 0.0 && mode == Mode::Train)
        dout = dout.cwiseProduct(tape.drop_mask);

    if (spec.relu)
        dout = (tape.pre_act.array() > 0.0).select(dout, 0.0);

    if (spec.batch_norm) {
        grads.dgamma = (dout.array() * tape.zhat.array()).colwise().sum().matrix().transpose();
        grads.dbeta = dout.colwise().sum().transpose();
        Eigen::MatrixXd dzhat = dout * bn->gamma.asDiagonal();
        if (mode == Mode::Train) {
            // Batch statistics are a function of the inputs; differentiate
            // through mean and variance.
            const double n = static_cast<double>(dout.rows());
            Eigen::VectorXd sum_dzhat = dzhat.colwise().sum().transpose();
            Eigen::VectorXd sum_dzhat_zhat =
                (dzhat.array() * tape.zhat.array()).colwise().sum().matrix().transpose();
            Eigen::MatrixXd dz = n * dzhat;
            dz.rowwise() -= sum_dzhat.transpose();
            dz -= tape.zhat * sum_dzhat_zhat.asDiagonal();
            dout = dz * (tape.istd / n).asDiagonal();
        } else {
            dout = dzhat * tape.istd.asDiagonal();
        }
    }

    grads.dW = tape.input.transpose() * dout;
    grads.db = dout.colwise().sum().transpose();
    return dout * dense.W.transpose();
}

}  // namespace detail

/// Reverse-mode pass from the theta-gradient down to every parameter tensor.
/// Embedding rows not referenced by the batch receive zero gradient; duplicate
/// indices accumulate.
inline NetworkGrads backward(const NetworkParams& params, const Tape& tape,
                             const Eigen::MatrixXd& dtheta) {
    if (!(tape.arch == params.arch))
        throw std::invalid_argument("backward: tape does not match params");
    if (dtheta.rows() != tape.fc_input.rows() || dtheta.cols() != 2)
        throw std::invalid_argument("backward: bad loss gradient shape");

    NetworkGrads g;
    g.emb_layers.resize(params.arch.emb_layers.size());
    g.fc_layers.resize(params.arch.fc_layers.size());

    Eigen::MatrixXd d = dtheta;
    for (int l = static_cast<int>(params.arch.fc_layers.size()) - 1; l >= 0; --l)
        d = detail::backward_layer(params.arch.fc_layers[l], params.fc_dense[l],
                                   params.fc_bn[l], tape.fc_layers[l], tape.mode, d,
                                   g.fc_layers[l]);

    const int z_dim = params.arch.emb_output_dim();
    Eigen::MatrixXd dz = d.leftCols(z_dim);
    for (int l = static_cast<int>(params.arch.emb_layers.size()) - 1; l >= 0; --l)
        dz = detail::backward_layer(params.arch.emb_layers[l], params.emb_dense[l],
                                    params.emb_bn[l], tape.emb_layers[l], tape.mode, dz,
                                    g.emb_layers[l]);

    Eigen::Index col = 0;
    for (std::size_t f = 0; f < params.embeddings.size(); ++f) {
        const int dim = params.arch.embeddings[f].dim;
        Eigen::MatrixXd table_grad =
            Eigen::MatrixXd::Zero(params.embeddings[f].rows(), dim);
        for (Eigen::Index i = 0; i < dz.rows(); ++i)
            table_grad.row(tape.categorical[f](i)) += dz.block(i, col, 1, dim);
        g.embeddings.push_back(std::move(table_grad));
        col += dim;
    }
    return g;
}

/// Step-decay learning rate: halves after every completed epoch.
inline double lr_schedule(long step, long steps_per_epoch, double base_lr) {
    if (step < 0) throw std::invalid_argument("lr_schedule: negative step");
    if (steps_per_epoch < 1) throw std::invalid_argument("lr_schedule: bad epoch length");
    return base_lr * std::pow(0.5, static_cast<double>(step / steps_per_epoch));
}

struct OptimizerState {
    NetworkGrads m, v;
    long step = 0;
    double base_lr = 1e-3;
    long steps_per_epoch = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static OptimizerState init(const NetworkParams& params, double base_lr,
                               long steps_per_epoch) {
        OptimizerState s;
        s.base_lr = base_lr;
        s.steps_per_epoch = steps_per_epoch;
        auto zeros_like_layers = [](const std::vector<DenseParams>& dense,
                                    const std::vector<std::optional<BatchNormParams>>& bns) {
            std::vector<NetworkGrads::Layer> out;
            for (std::size_t l = 0; l < dense.size(); ++l) {
                NetworkGrads::Layer g;
                g.dW = Eigen::MatrixXd::Zero(dense[l].W.rows(), dense[l].W.cols());
                g.db = Eigen::VectorXd::Zero(dense[l].b.size());
                if (bns[l]) {
                    g.dgamma = Eigen::VectorXd::Zero(bns[l]->gamma.size());
                    g.dbeta = Eigen::VectorXd::Zero(bns[l]->beta.size());
                }
                out.push_back(std::move(g));
            }
            return out;
        };
        for (const auto& t : params.embeddings)
            s.m.embeddings.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
        s.m.emb_layers = zeros_like_layers(params.emb_dense, params.emb_bn);
        s.m.fc_layers = zeros_like_layers(params.fc_dense, params.fc_bn);
        s.v = s.m;
        return s;
    }
};

/// One Adam update with bias correction; the learning rate follows
/// lr_schedule. Batch-norm running statistics are not optimizer state and are
/// untouched here.
inline void adam_step(NetworkParams& params, const NetworkGrads& grads,
                      OptimizerState& state) {
    const long t = state.step + 1;
    const double lr = lr_schedule(state.step, state.steps_per_epoch, state.base_lr);
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));

    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
        if (p.size() == 0) return;
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = (state.beta2 * v.array() + (1.0 - state.beta2) * g.array().square()).matrix();
        const auto mhat = m.array() / bc1;
        const auto vhat = v.array() / bc2;
        p = (p.array() - lr * mhat / (vhat.sqrt() + state.eps)).matrix();
    };

    for (std::size_t f = 0; f < params.embeddings.size(); ++f)
        update(params.embeddings[f], grads.embeddings[f], state.m.embeddings[f],
               state.v.embeddings[f]);
    auto update_stack = [&](std::vector<DenseParams>& dense,
                            std::vector<std::optional<BatchNormParams>>& bns,
                            const std::vector<NetworkGrads::Layer>& g,
                            std::vector<NetworkGrads::Layer>& m,
                            std::vector<NetworkGrads::Layer>& v) {
        for (std::size_t l = 0; l < dense.size(); ++l) {
            update(dense[l].W, g[l].dW, m[l].dW, v[l].dW);
            update(dense[l].b, g[l].db, m[l].db, v[l].db);
            if (bns[l]) {
                update(bns[l]->gamma, g[l].dgamma, m[l].dgamma, v[l].dgamma);
                update(bns[l]->beta, g[l].dbeta, m[l].dbeta, v[l].dbeta);
            }
        }
    };
    update_stack(params.emb_dense, params.emb_bn, grads.emb_layers, state.m.emb_layers,
                 state.v.emb_layers);
    update_stack(params.fc_dense, params.fc_bn, grads.fc_layers, state.m.fc_layers,
                 state.v.fc_layers);
    state.step = t;
}

/// Folds the tape's train-mode batch statistics into the running statistics
/// (PyTorch convention: unbiased variance for the running estimate).
inline void update_running_stats(NetworkParams& params, const Tape& tape,
                                 double momentum = 0.1) {
    if (tape.mode != Mode::Train) return;
    auto fold = [&](std::vector<std::optional<BatchNormParams>>& bns,
                    const std::vector<LayerTape>& tapes) {
        for (std::size_t l = 0; l < bns.size(); ++l) {
            if (!bns[l] || tapes[l].mu.size() == 0) continue;
            const double n = static_cast<double>(tapes[l].input.rows());
            const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
            bns[l]->running_mean =
                (1.0 - momentum) * bns[l]->running_mean + momentum * tapes[l].mu;
            bns[l]->running_var = (1.0 - momentum) * bns[l]->running_var +
                                  momentum * unbias * tapes[l].var;
        }
    };
    fold(params.emb_bn, tape.emb_layers);
    fold(params.fc_bn, tape.fc_layers);
}

// ---------------------------------------------------------------------------
// Serialization: versioned structured text, bit-exact round trip.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_tensor(std::ostream& os, const std::string& name,
                         const Eigen::MatrixXd& t) {
    os << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
        for (Eigen::Index c = 0; c < t.cols(); ++c) {
            if (c) os << ' ';
            os << format_double(t(r, c));
        }
        os << '\n';
    }
}

inline void write_tensor(std::ostream& os, const std::string& name,
                         const Eigen::VectorXd& t) {
    write_tensor(os, name, Eigen::MatrixXd(t.transpose()));
}

inline Eigen::MatrixXd read_tensor(std::istream& is, const std::string& expect) {
    std::string tag, name;
    Eigen::Index rows, cols;
    if (!(is >> tag >> name >> rows >> cols) || tag != "tensor" || name != expect)
        throw DataError("model: expected tensor '" + expect + "', got '" + name + "'");
    Eigen::MatrixXd t(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            if (!(is >> t(r, c))) throw DataError("model: truncated tensor " + expect);
    return t;
}

inline Eigen::VectorXd read_vector(std::istream& is, const std::string& expect) {
    return read_tensor(is, expect).row(0).transpose();
}

}  // namespace detail

inline void save_arch(std::ostream& os, const NetworkArch& arch) {
    os << "arch.embeddings " << arch.embeddings.size() << '\n';
    for (std::size_t f = 0; f < arch.embeddings.size(); ++f)
        os << "embedding " << f << ' ' << arch.embeddings[f].vocab << ' '
           << arch.embeddings[f].dim << '\n';
    os << "arch.n_numeric " << arch.n_numeric << '\n';
    auto dump = [&](const char* name, const std::vector<DenseSpec>& ls) {
        os << name << ' ' << ls.size() << '\n';
        for (const auto& l : ls)
            os << "layer " << l.in << ' ' << l.out << ' ' << (l.relu ? 1 : 0) << ' '
               << (l.batch_norm ? 1 : 0) << ' ' << format_double(l.dropout) << '\n';
    };
    dump("arch.emb_layers", arch.emb_layers);
    dump("arch.fc_layers", arch.fc_layers);
}

inline NetworkArch load_arch(std::istream& is) {
    NetworkArch arch;
    std::string tag;
    std::size_t count;
    if (!(is >> tag >> count) || tag != "arch.embeddings")
        throw DataError("model: expected arch.embeddings");
    for (std::size_t f = 0; f < count; ++f) {
        std::size_t idx;
        EmbeddingSpec e;
        if (!(is >> tag >> idx >> e.vocab >> e.dim) || tag != "embedding")
            throw DataError("model: bad embedding line");
        arch.embeddings.push_back(e);
    }
    if (!(is >> tag >> arch.n_numeric) || tag != "arch.n_numeric")
        throw DataError("model: expected arch.n_numeric");
    auto read_stack = [&](const char* name, std::vector<DenseSpec>& ls) {
        std::size_t n;
        if (!(is >> tag >> n) || tag != name) throw DataError("model: expected layer stack");
        for (std::size_t l = 0; l < n; ++l) {
            DenseSpec d;
            int relu, bn;
            if (!(is >> tag >> d.in >> d.out >> relu >> bn >> d.dropout) || tag != "layer")
                throw DataError("model: bad layer line");
            d.relu = relu != 0;
            d.batch_norm = bn != 0;
            ls.push_back(d);
        }
    };
    read_stack("arch.emb_layers", arch.emb_layers);
    read_stack("arch.fc_layers", arch.fc_layers);
    arch.validate();
    return arch;
}

inline void save_params(std::ostream& os, const NetworkParams& params) {
    save_arch(os, params.arch);
    os << "params\n";
    for (std::size_t f = 0; f < params.embeddings.size(); ++f)
        detail::write_tensor(os, "embedding:" + std::to_string(f), params.embeddings[f]);
    auto dump_stack = [&](const std::string& prefix, const std::vector<DenseParams>& dense,
                          const std::vector<std::optional<BatchNormParams>>& bns) {
        for (std::size_t l = 0; l < dense.size(); ++l) {
            const std::string base = prefix + std::to_string(l);
            detail::write_tensor(os, base + ":W", dense[l].W);
            detail::write_tensor(os, base + ":b", dense[l].b);
            if (bns[l]) {
                detail::write_tensor(os, base + ":bn.gamma", bns[l]->gamma);
                detail::write_tensor(os, base + ":bn.beta", bns[l]->beta);
                detail::write_tensor(os, base + ":bn.rmean", bns[l]->running_mean);
                detail::write_tensor(os, base + ":bn.rvar", bns[l]->running_var);
            }
        }
    };
    dump_stack("emb:", params.emb_dense, params.emb_bn);
    dump_stack("fc:", params.fc_dense, params.fc_bn);
}

inline NetworkParams load_params(std::istream& is) {
    NetworkParams p;
    p.arch = load_arch(is);
    std::string tag;
    if (!(is >> tag) || tag != "params") throw DataError("model: expected params section");
    for (std::size_t f = 0; f < p.arch.embeddings.size(); ++f)
        p.embeddings.push_back(detail::read_tensor(is, "embedding:" + std::to_string(f)));
    auto read_stack = [&](const std::string& prefix, const std::vector<DenseSpec>& specs,
                          std::vector<DenseParams>& dense,
                          std::vector<std::optional<BatchNormParams>>& bns) {
        for (std::size_t l = 0; l < specs.size(); ++l) {
            const std::string base = prefix + std::to_string(l);
            DenseParams d;
            d.W = detail::read_tensor(is, base + ":W");
            d.b = detail::read_vector(is, base + ":b");
            dense.push_back(std::move(d));
            if (specs[l].batch_norm) {
                BatchNormParams bn;
                bn.gamma = detail::read_vector(is, base + ":bn.gamma");
                bn.beta = detail::read_vector(is, base + ":bn.beta");
                bn.running_mean = detail::read_vector(is, base + ":bn.rmean");
                bn.running_var = detail::read_vector(is, base + ":bn.rvar");
                bns.emplace_back(std::move(bn));
            } else {
                bns.emplace_back(std::nullopt);
            }
        }
    };
    read_stack("emb:", p.arch.emb_layers, p.emb_dense, p.emb_bn);
    read_stack("fc:", p.arch.fc_layers, p.fc_dense, p.fc_bn);
    return p;
}

inline void save_optimizer(std::ostream& os, const OptimizerState& state) {
    os << "optimizer " << state.step << ' ' << format_double(state.base_lr) << ' '
       << state.steps_per_epoch << '\n';
    auto dump = [&](const char* which, const NetworkGrads& g) {
        for (std::size_t f = 0; f < g.embeddings.size(); ++f)
            detail::write_tensor(os, std::string(which) + ":embedding:" + std::to_string(f),
                                 g.embeddings[f]);
        auto stack = [&](const std::string& prefix, const std::vector<NetworkGrads::Layer>& ls) {
            for (std::size_t l = 0; l < ls.size(); ++l) {
                const std::string base = std::string(which) + ":" + prefix + std::to_string(l);
                detail::write_tensor(os, base + ":W", ls[l].dW);
                detail::write_tensor(os, base + ":b", ls[l].db);
                if (ls[l].dgamma.size()) {
                    detail::write_tensor(os, base + ":bn.gamma", ls[l].dgamma);
                    detail::write_tensor(os, base + ":bn.beta", ls[l].dbeta);
                }
            }
        };
        stack("emb:", g.emb_layers);
        stack("fc:", g.fc_layers);
    };
    dump("m", state.m);
    dump("v", state.v);
}

inline OptimizerState load_optimizer(std::istream& is, const NetworkParams& params) {
    std::string tag;
    OptimizerState state = OptimizerState::init(params, 0.0, 1);
    if (!(is >> tag >> state.step >> state.base_lr >> state.steps_per_epoch) ||
        tag != "optimizer")
        throw DataError("model: expected optimizer section");
    auto read = [&](const char* which, NetworkGrads& g) {
        for (std::size_t f = 0; f < g.embeddings.size(); ++f)
            g.embeddings[f] = detail::read_tensor(
                is, std::string(which) + ":embedding:" + std::to_string(f));
        auto stack = [&](const std::string& prefix, std::vector<NetworkGrads::Layer>& ls) {
            for (std::size_t l = 0; l < ls.size(); ++l) {
                const std::string base = std::string(which) + ":" + prefix + std::to_string(l);
                ls[l].dW = detail::read_tensor(is, base + ":W");
                ls[l].db = detail::read_vector(is, base + ":b");
                if (ls[l].dgamma.size()) {
                    ls[l].dgamma = detail::read_vector(is, base + ":bn.gamma");
                    ls[l].dbeta = detail::read_vector(is, base + ":bn.beta");
                }
            }
        };
        stack("emb:", g.emb_layers);
        stack("fc:", g.fc_layers);
    };
    read("m", state.m);
    read("v", state.v);
    return state;
}

}  // namespace demandbench::nn
