#include "formbo/surrogate_gp.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "formbo/adam.hpp"

namespace formbo {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view to_string(SurrogateFlavor f) {
    switch (f) {
        case SurrogateFlavor::independent: return "independent";
        case SurrogateFlavor::coupled_mean: return "coupled_mean";
        case SurrogateFlavor::lcm: return "lcm";
    }
    return "lcm";
}

SurrogateFlavor surrogate_flavor_from_string(std::string_view text) {
    if (text == "independent") return SurrogateFlavor::independent;
    if (text == "coupled_mean") return SurrogateFlavor::coupled_mean;
    if (text == "lcm") return SurrogateFlavor::lcm;
    throw ConfigError("unknown surrogate flavor '" + std::string(text) + "'");
}

void SurrogateConfig::validate() const {
    if (matern_nu != 0.5 && matern_nu != 1.5 && matern_nu != 2.5)
        throw ConfigError("matern_nu must be 0.5, 1.5 or 2.5");
    if (latent_input_dim < 0 || latent_output_dim < 0 || num_latent_gps < 0)
        throw ConfigError("latent dimensions must be >= 1 (or 0 for the default)");
    if (!(noise_floor > 0.0)) throw ConfigError("noise_floor must be > 0");
    if (training.max_steps < 0) throw ConfigError("training.max_steps must be >= 0");
    if (!(training.learning_rate > 0.0)) throw ConfigError("training.learning_rate must be > 0");
}

double matern(double r, double nu) {
    if (nu == 0.5) return std::exp(-r);
    if (nu == 1.5) {
        const double s = std::sqrt(3.0) * r;
        return (1.0 + s) * std::exp(-s);
    }
    const double s = std::sqrt(5.0) * r;
    return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
constexpr double kVarianceTolerance = 1e-9;

// k'(r) / r, finite at r = 0 for nu >= 1.5.
double matern_slope_over_r(double r, double nu) {
    if (nu == 0.5) return r > 0.0 ? -std::exp(-r) / r : 0.0;
    if (nu == 1.5) return -3.0 * std::exp(-std::sqrt(3.0) * r);
    const double s = std::sqrt(5.0) * r;
    return -(5.0 / 3.0) * (1.0 + s) * std::exp(-s);
}

struct Shape {
    Index n = 0, d = 0, m = 0, L = 0, h = 0, Q = 1, R = 0;
    bool encoder = false;
    bool mean_net = false;
    bool lcm = false;
};

Shape make_shape(const SurrogateConfig& c, Index n, Index d, Index m) {
    Shape s;
    s.n = n;
    s.d = d;
    s.m = m;
    s.encoder = c.latent_encoder;
    s.h = 2 * d;
    s.L = c.latent_encoder ? (c.latent_input_dim > 0 ? c.latent_input_dim : 2 * d) : d;
    s.lcm = c.flavor == SurrogateFlavor::lcm;
    s.Q = s.lcm ? (c.num_latent_gps > 0 ? c.num_latent_gps : m) : 1;
    s.mean_net = c.flavor != SurrogateFlavor::independent;
    s.R = c.latent_output_dim > 0 ? c.latent_output_dim : m;
    return s;
}

MatrixXd encode_with(const GpHyperparameters& hp, const MatrixXd& x, MatrixXd* hidden = nullptr) {
    if (hp.encoder_w1.size() == 0) return x;
    MatrixXd pre = (x * hp.encoder_w1.transpose()).rowwise() + hp.encoder_b1.transpose();
    MatrixXd h = pre.array().tanh().matrix();
    MatrixXd z = (h * hp.encoder_w2.transpose()).rowwise() + hp.encoder_b2.transpose();
    if (hidden) *hidden = std::move(h);
    return z;
}

MatrixXd mean_with(const GpHyperparameters& hp, const MatrixXd& z, Index m, MatrixXd* hidden = nullptr) {
    if (hp.mean_output.size() == 0) return MatrixXd::Zero(z.rows(), m);
    MatrixXd u = (z * hp.mean_projection.transpose()).rowwise() + hp.mean_projection_bias.transpose();
    MatrixXd mu = (u * hp.mean_output.transpose()).rowwise() + hp.mean_output_bias.transpose();
    if (hidden) *hidden = std::move(u);
    return mu;
}

// Kernel matrix over the rows of z with per-dimension lengthscales, plus k'(r)/r.
void kernel_matrix(const MatrixXd& z, const Eigen::RowVectorXd& lengthscales, double nu, MatrixXd& k,
                   MatrixXd* slope) {
    const Index n = z.rows();
    MatrixXd zs = z.array().rowwise() / lengthscales.array();
    k.resize(n, n);
    if (slope) slope->resize(n, n);
    for (Index a = 0; a < n; ++a) {
        k(a, a) = 1.0;
        if (slope) (*slope)(a, a) = matern_slope_over_r(0.0, nu);
        for (Index b = a + 1; b < n; ++b) {
            const double r = (zs.row(a) - zs.row(b)).norm();
            k(a, b) = k(b, a) = matern(r, nu);
            if (slope) (*slope)(a, b) = (*slope)(b, a) = matern_slope_over_r(r, nu);
        }
    }
}

// Cholesky with the documented jitter escalation: floor * 10^k, k = 1..6.
Eigen::LLT<MatrixXd> factor_with_jitter(MatrixXd& cov, double floor, double& jitter) {
    jitter = 0.0;
    Eigen::LLT<MatrixXd> llt(cov);
    for (int k = 1; llt.info() != Eigen::Success; ++k) {
        if (k > 6) throw NumericalError("training covariance is not positive definite after jitter escalation");
        const double next = floor * std::pow(10.0, k);
        cov.diagonal().array() += next - jitter;
        jitter = next;
        llt.compute(cov);
    }
    return llt;
}

struct Objective {
    double value = 0.0;
    double jitter = 0.0;
    VectorXd gradient;
};

// Standardized log marginal likelihood and, optionally, its gradient with
// respect to the flattened hyperparameters.
Objective evaluate_objective(const MatrixXd& x, const MatrixXd& y, const SurrogateConfig& config,
                             const GpHyperparameters& hp, bool want_gradient) {
    const Index n = x.rows();
    const Index m = y.cols();
    const Index Q = hp.log_lengthscales.rows();
    const double noise = hp.noise_variance(config.noise_floor);
    const double nu = config.matern_nu;

    MatrixXd enc_hidden, mean_hidden;
    const MatrixXd z = encode_with(hp, x, &enc_hidden);
    const MatrixXd mu = mean_with(hp, z, m, &mean_hidden);
    const MatrixXd resid = y - mu;

    std::vector<MatrixXd> kq(static_cast<std::size_t>(Q)), slope(static_cast<std::size_t>(Q));
    std::vector<Eigen::RowVectorXd> ell(static_cast<std::size_t>(Q));
    for (Index q = 0; q < Q; ++q) {
        ell[q] = hp.log_lengthscales.row(q).array().exp();
        kernel_matrix(z, ell[q], nu, kq[q], want_gradient ? &slope[q] : nullptr);
    }

    Objective out;
    MatrixXd d_mu;                        // dL/dmu, n x m
    std::vector<MatrixXd> d_kq(static_cast<std::size_t>(Q));  // dL/dK_q
    GpHyperparameters grad = hp;          // same shapes, overwritten below
    if (want_gradient) {
        grad.unflatten(VectorXd::Zero(hp.size()));
    }

    if (hp.mixing.size() == 0) {
        const double s = std::exp(hp.log_signal_variance(0));
        MatrixXd c = s * kq[0];
        c.diagonal().array() += noise;
        auto llt = factor_with_jitter(c, config.noise_floor, out.jitter);
        const MatrixXd alpha = llt.solve(resid);
        const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        out.value = -0.5 * (resid.array() * alpha.array()).sum() - 0.5 * m * logdet -
                    0.5 * static_cast<double>(n * m) * kLog2Pi;
        if (want_gradient) {
            const MatrixXd cinv = llt.solve(MatrixXd::Identity(n, n));
            const MatrixXd w = alpha * alpha.transpose() - static_cast<double>(m) * cinv;
            grad.log_signal_variance(0) = 0.5 * (w.array() * kq[0].array()).sum() * s;
            grad.noise_raw = 0.5 * w.trace() * (noise - config.noise_floor);
            d_kq[0] = 0.5 * s * w;
            d_mu = alpha;
        }
    } else {
        const Index nm = n * m;
        MatrixXd big = MatrixXd::Zero(nm, nm);
        for (Index i = 0; i < m; ++i)
            for (Index j = 0; j < m; ++j)
                for (Index q = 0; q < Q; ++q)
                    big.block(i * n, j * n, n, n) += hp.mixing(i, q) * hp.mixing(j, q) * kq[q];
        big.diagonal().array() += noise;
        auto llt = factor_with_jitter(big, config.noise_floor, out.jitter);
        const VectorXd r = Eigen::Map<const VectorXd>(resid.data(), nm);
        const VectorXd alpha = llt.solve(r);
        const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        out.value = -0.5 * r.dot(alpha) - 0.5 * logdet - 0.5 * static_cast<double>(nm) * kLog2Pi;
        if (want_gradient) {
            MatrixXd w = llt.solve(MatrixXd::Identity(nm, nm));
            w = alpha * alpha.transpose() - w;
            grad.noise_raw = 0.5 * w.trace() * (noise - config.noise_floor);
            for (Index q = 0; q < Q; ++q) {
                MatrixXd g = MatrixXd::Zero(n, n);
                MatrixXd sq(m, m);
                for (Index i = 0; i < m; ++i)
                    for (Index j = 0; j < m; ++j) {
                        const auto blk = w.block(i * n, j * n, n, n);
                        g += hp.mixing(i, q) * hp.mixing(j, q) * blk;
                        sq(i, j) = (blk.array() * kq[q].array()).sum();
                    }
                d_kq[q] = 0.5 * g;
                grad.mixing.col(q) = sq * hp.mixing.col(q);
            }
            d_mu = Eigen::Map<const MatrixXd>(alpha.data(), n, m);
        }
    }

    if (!want_gradient) return out;

    // Kernel matrices -> lengthscales and latent inputs.
    MatrixXd d_z = MatrixXd::Zero(n, z.cols());
    for (Index q = 0; q < Q; ++q) {
        const MatrixXd gg = d_kq[q].cwiseProduct(slope[q]);
        const VectorXd rs = gg.rowwise().sum();
        for (Index l = 0; l < z.cols(); ++l) {
            const double inv2 = 1.0 / (ell[q](l) * ell[q](l));
            const VectorXd zl = z.col(l);
            const VectorXd gz = gg * zl;
            d_z.col(l) += 2.0 * inv2 * (zl.cwiseProduct(rs) - gz);
            grad.log_lengthscales(q, l) = -inv2 * (2.0 * rs.dot(zl.cwiseAbs2()) - 2.0 * zl.dot(gz));
        }
    }

    // Mean network.
    if (hp.mean_output.size() != 0) {
        grad.mean_output = d_mu.transpose() * mean_hidden;
        grad.mean_output_bias = d_mu.colwise().sum().transpose();
        const MatrixXd d_u = d_mu * hp.mean_output;
        grad.mean_projection = d_u.transpose() * z;
        grad.mean_projection_bias = d_u.colwise().sum().transpose();
        d_z += d_u * hp.mean_projection;
    }

    // Encoder.
    if (hp.encoder_w1.size() != 0) {
        grad.encoder_w2 = d_z.transpose() * enc_hidden;
        grad.encoder_b2 = d_z.colwise().sum().transpose();
        const MatrixXd d_h = d_z * hp.encoder_w2;
        const MatrixXd d_pre = d_h.array() * (1.0 - enc_hidden.array().square());
        grad.encoder_w1 = d_pre.transpose() * x;
        grad.encoder_b1 = d_pre.colwise().sum().transpose();
    }

    out.gradient = grad.flatten();
    return out;
}

bool same_shapes(const GpHyperparameters& a, const GpHyperparameters& b) {
    auto eq = [](const auto& x, const auto& y) { return x.rows() == y.rows() && x.cols() == y.cols(); };
    return eq(a.encoder_w1, b.encoder_w1) && eq(a.encoder_b1, b.encoder_b1) &&
           eq(a.encoder_w2, b.encoder_w2) && eq(a.encoder_b2, b.encoder_b2) &&
           eq(a.log_lengthscales, b.log_lengthscales) &&
           eq(a.log_signal_variance, b.log_signal_variance) && eq(a.mixing, b.mixing) &&
           eq(a.mean_projection, b.mean_projection) &&
           eq(a.mean_projection_bias, b.mean_projection_bias) && eq(a.mean_output, b.mean_output) &&
           eq(a.mean_output_bias, b.mean_output_bias);
}

template <typename Visitor>
void visit_blocks(GpHyperparameters& hp, Visitor&& visit) {
    visit(hp.encoder_w1);
    visit(hp.encoder_b1);
    visit(hp.encoder_w2);
    visit(hp.encoder_b2);
    visit(hp.log_lengthscales);
    visit(hp.log_signal_variance);
    visit(hp.mixing);
    visit(hp.mean_projection);
    visit(hp.mean_projection_bias);
    visit(hp.mean_output);
    visit(hp.mean_output_bias);
}

}  // namespace

Index GpHyperparameters::size() const {
    Index total = 1;  // noise
    visit_blocks(const_cast<GpHyperparameters&>(*this), [&](auto& block) { total += block.size(); });
    return total;
}

VectorXd GpHyperparameters::flatten() const {
    VectorXd flat(size());
    Index pos = 0;
    visit_blocks(const_cast<GpHyperparameters&>(*this), [&](auto& block) {
        flat.segment(pos, block.size()) = Eigen::Map<const VectorXd>(block.data(), block.size());
        pos += block.size();
    });
    flat(pos) = noise_raw;
    return flat;
}

void GpHyperparameters::unflatten(const Eigen::Ref<const VectorXd>& flat) {
    if (flat.size() != size()) throw DataError("hyperparameter vector has the wrong length");
    Index pos = 0;
    visit_blocks(*this, [&](auto& block) {
        Eigen::Map<VectorXd>(block.data(), block.size()) = flat.segment(pos, block.size());
        pos += block.size();
    });
    noise_raw = flat(pos);
}

void GpHyperparameters::set_noise_variance(double variance, double floor) {
    if (!(variance > floor)) throw ConfigError("noise variance must exceed the noise floor");
    noise_raw = std::log(variance - floor);
}

double GpHyperparameters::noise_variance(double floor) const { return floor + std::exp(noise_raw); }

GpHyperparameters GpHyperparameters::initial(const SurrogateConfig& config, Index input_dim,
                                             Index output_dim, std::uint64_t seed) {
    const Shape s = make_shape(config, 0, input_dim, output_dim);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto random = [&](Index rows, Index cols, double scale) {
        MatrixXd w(rows, cols);
        for (Index j = 0; j < cols; ++j)
            for (Index i = 0; i < rows; ++i) w(i, j) = scale * normal(rng);
        return w;
    };

    GpHyperparameters hp;
    if (s.encoder) {
        hp.encoder_w1 = random(s.h, s.d, 1.0 / std::sqrt(static_cast<double>(s.d)));
        hp.encoder_b1 = VectorXd::Zero(s.h);
        hp.encoder_w2 = random(s.L, s.h, 1.0 / std::sqrt(static_cast<double>(s.h)));
        hp.encoder_b2 = VectorXd::Zero(s.L);
    }
    hp.log_lengthscales = MatrixXd::Zero(s.Q, s.L);
    if (s.lcm) {
        hp.mixing = random(s.m, s.Q, 0.1);
        for (Index i = 0; i < std::min(s.m, s.Q); ++i) hp.mixing(i, i) += 1.0;
    } else {
        hp.log_signal_variance = VectorXd::Zero(1);
    }
    if (s.mean_net) {
        hp.mean_projection = random(s.R, s.L, 0.1);
        hp.mean_projection_bias = VectorXd::Zero(s.R);
        hp.mean_output = random(s.m, s.R, 0.1);
        hp.mean_output_bias = VectorXd::Zero(s.m);
    }
    hp.set_noise_variance(0.1 + config.noise_floor, config.noise_floor);
    return hp;
}

TrainingData TrainingData::from_records(std::span<const SimulationRecord> records,
                                        std::vector<std::string> input_names,
                                        std::vector<std::string> target_names) {
    std::vector<const SimulationRecord*> rows;
    for (const auto& r : records) {
        if (!r.is_training_row()) continue;
        bool complete = true;
        for (const auto& t : target_names) complete = complete && r.targets.contains(t);
        if (complete) rows.push_back(&r);
    }
    TrainingData data;
    data.inputs.resize(static_cast<Index>(rows.size()), static_cast<Index>(input_names.size()));
    data.targets.resize(static_cast<Index>(rows.size()), static_cast<Index>(target_names.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < input_names.size(); ++j)
            data.inputs(static_cast<Index>(i), static_cast<Index>(j)) = rows[i]->inputs.at(input_names[j]);
        for (std::size_t j = 0; j < target_names.size(); ++j)
            data.targets(static_cast<Index>(i), static_cast<Index>(j)) = rows[i]->targets.at(target_names[j]);
    }
    data.input_names = std::move(input_names);
    data.target_names = std::move(target_names);
    return data;
}

void FittedSurrogate::standardize() {
    auto moments = [](const MatrixXd& a, Eigen::RowVectorXd& mean, Eigen::RowVectorXd& scale) {
        mean = a.colwise().mean();
        scale.resize(a.cols());
        for (Index j = 0; j < a.cols(); ++j) {
            const double var = (a.col(j).array() - mean(j)).square().mean();
            scale(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
    };
    moments(data_.inputs, x_mean_, x_scale_);
    moments(data_.targets, y_mean_, y_scale_);
    x_std_ = (data_.inputs.rowwise() - x_mean_).array().rowwise() / x_scale_.array();
    y_std_ = (data_.targets.rowwise() - y_mean_).array().rowwise() / y_scale_.array();
}

MatrixXd FittedSurrogate::encode(const MatrixXd& x_std) const { return encode_with(hyper_, x_std); }

MatrixXd FittedSurrogate::prior_mean_std(const MatrixXd& latent) const {
    return mean_with(hyper_, latent, data_.targets.cols());
}

void FittedSurrogate::factorize() {
    const Index n = x_std_.rows();
    const Index m = y_std_.cols();
    const Index Q = hyper_.log_lengthscales.rows();
    const double noise = noise_variance();
    latent_ = encode(x_std_);
    const MatrixXd resid = y_std_ - prior_mean_std(latent_);

    std::vector<MatrixXd> kq(static_cast<std::size_t>(Q));
    for (Index q = 0; q < Q; ++q)
        kernel_matrix(latent_, hyper_.log_lengthscales.row(q).array().exp(), config_.matern_nu, kq[q],
                      nullptr);

    if (hyper_.mixing.size() == 0) {
        const double s = std::exp(hyper_.log_signal_variance(0));
        MatrixXd c = s * kq[0];
        c.diagonal().array() += noise;
        chol_ = factor_with_jitter(c, config_.noise_floor, jitter_);
        alpha_ = chol_.solve(resid);
        const double logdet = 2.0 * chol_.matrixLLT().diagonal().array().log().sum();
        lml_ = -0.5 * (resid.array() * alpha_.array()).sum() - 0.5 * m * logdet -
               0.5 * static_cast<double>(n * m) * kLog2Pi;
        return;
    }

    const Index nm = n * m;
    MatrixXd big = MatrixXd::Zero(nm, nm);
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < m; ++j)
            for (Index q = 0; q < Q; ++q)
                big.block(i * n, j * n, n, n) += hyper_.mixing(i, q) * hyper_.mixing(j, q) * kq[q];
    big.diagonal().array() += noise;
    auto llt = factor_with_jitter(big, config_.noise_floor, jitter_);
    const VectorXd r = Eigen::Map<const VectorXd>(resid.data(), nm);
    const VectorXd alpha = llt.solve(r);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    lml_ = -0.5 * r.dot(alpha) - 0.5 * logdet - 0.5 * static_cast<double>(nm) * kLog2Pi;

    const Eigen::Map<const MatrixXd> alpha_blocks(alpha.data(), n, m);
    beta_ = alpha_blocks * hyper_.mixing;  // n x Q

    big_chol_ = std::move(llt);
}

FittedSurrogate FittedSurrogate::condition(const TrainingData& data, const SurrogateConfig& config,
                                           const GpHyperparameters& hyper) {
    config.validate();
    if (data.size() < 1) throw DataError("insufficient data");
    FittedSurrogate model;
    model.config_ = config;
    model.data_ = data;
    model.hyper_ = hyper;
    const auto expected = GpHyperparameters::initial(config, data.inputs.cols(), data.targets.cols(), 0);
    if (!same_shapes(expected, hyper)) throw ConfigError("hyperparameters do not match the configuration");
    model.standardize();
    model.factorize();
    return model;
}

FittedSurrogate FittedSurrogate::fit(const TrainingData& data, const SurrogateConfig& config,
                                     const GpHyperparameters* warm_start) {
    config.validate();
    if (data.size() < 2) throw DataError("insufficient data");

    FittedSurrogate model;
    model.config_ = config;
    model.data_ = data;
    model.standardize();

    const Index d = data.inputs.cols();
    const Index m = data.targets.cols();
    GpHyperparameters hyper = GpHyperparameters::initial(config, d, m, config.training.seed);
    if (warm_start && same_shapes(hyper, *warm_start)) hyper = *warm_start;

    VectorXd params = hyper.flatten();
    VectorXd best = params;
    double best_value = -std::numeric_limits<double>::infinity();
    Adam adam(params.size(), config.training.learning_rate);
    double previous = std::numeric_limits<double>::quiet_NaN();
    int failures = 0;

    for (int step = 0; step < config.training.max_steps; ++step) {
        Objective obj;
        bool ok = true;
        try {
            hyper.unflatten(params);
            obj = evaluate_objective(model.x_std_, model.y_std_, config, hyper, true);
            ok = std::isfinite(obj.value) && obj.gradient.allFinite();
        } catch (const NumericalError&) {
            ok = false;
        }
        if (!ok) {
            if (!std::isfinite(best_value) || ++failures > 5) break;
            params = best;
            adam.set_learning_rate(adam.learning_rate() * 0.5);
            continue;
        }
        model.loss_trace_.push_back(obj.value);
        if (obj.value > best_value) {
            best_value = obj.value;
            best = params;
        }
        if (step > 0 && std::abs(obj.value - previous) < config.training.convergence_tol) break;
        previous = obj.value;
        adam.step(params, -obj.gradient);
    }

    hyper.unflatten(best);
    model.hyper_ = hyper;
    model.factorize();
    return model;
}

VectorXd FittedSurrogate::log_marginal_likelihood_gradient() const {
    return evaluate_objective(x_std_, y_std_, config_, hyper_, true).gradient;
}

PosteriorPrediction FittedSurrogate::prior(const CandidateSet& candidates) const {
    if (candidates.dim() != data_.inputs.cols()) throw DataError("candidate dimension mismatch");
    const Index m = data_.targets.cols();
    const MatrixXd xs = (candidates.points.rowwise() - x_mean_).array().rowwise() / x_scale_.array();
    const MatrixXd mu = prior_mean_std(encode(xs));
    MatrixXd block;
    if (hyper_.mixing.size() == 0)
        block = std::exp(hyper_.log_signal_variance(0)) * MatrixXd::Identity(m, m);
    else
        block = hyper_.mixing * hyper_.mixing.transpose();
    const MatrixXd scaled = y_scale_.transpose().asDiagonal() * block * y_scale_.asDiagonal();

    PosteriorPrediction out;
    out.mean = (mu.array().rowwise() * y_scale_.array()).rowwise() + y_mean_.array();
    out.variance = scaled.diagonal().transpose().replicate(candidates.size(), 1);
    out.full = true;
    out.covariance.assign(static_cast<std::size_t>(candidates.size()), scaled);
    return out;
}

PosteriorPrediction FittedSurrogate::predict(const CandidateSet& candidates, bool full_covariance,
                                             Index batch_size) const {
    if (candidates.dim() != data_.inputs.cols())
        throw DataError("candidate dimension " + std::to_string(candidates.dim()) +
                        " does not match training dimension " + std::to_string(data_.inputs.cols()));
    if (batch_size < 1) batch_size = 1;
    const Index n = latent_.rows();
    const Index m = data_.targets.cols();
    const Index Q = hyper_.log_lengthscales.rows();
    const Index total = candidates.size();
    const bool lcm = hyper_.mixing.size() != 0;

    std::vector<Eigen::RowVectorXd> inv_ell(static_cast<std::size_t>(Q));
    std::vector<MatrixXd> latent_scaled(static_cast<std::size_t>(Q));
    for (Index q = 0; q < Q; ++q) {
        inv_ell[q] = (-hyper_.log_lengthscales.row(q).array()).exp();
        latent_scaled[q] = latent_.array().rowwise() * inv_ell[q].array();
    }

    PosteriorPrediction out;
    out.full = full_covariance;
    out.mean.resize(total, m);
    out.variance.resize(total, m);
    if (full_covariance) out.covariance.resize(static_cast<std::size_t>(total));

    const double signal = lcm ? 0.0 : std::exp(hyper_.log_signal_variance(0));
    const MatrixXd prior_block = lcm ? MatrixXd(hyper_.mixing * hyper_.mixing.transpose()) : MatrixXd();

    MatrixXd kvec(n, Q);
    MatrixXd cov_std(m, m);
    for (Index start = 0; start < total; start += batch_size) {
        const Index count = std::min(batch_size, total - start);
        const MatrixXd xs = (candidates.points.middleRows(start, count).rowwise() - x_mean_).array().rowwise() /
                            x_scale_.array();
        const MatrixXd zc = encode(xs);
        const MatrixXd mu = prior_mean_std(zc);

        for (Index c = 0; c < count; ++c) {
            for (Index q = 0; q < Q; ++q) {
                const Eigen::RowVectorXd zq = zc.row(c).array() * inv_ell[q].array();
                for (Index a = 0; a < n; ++a)
                    kvec(a, q) = matern((latent_scaled[q].row(a) - zq).norm(), config_.matern_nu);
            }

            Eigen::RowVectorXd mean_std(m);
            if (!lcm) {
                mean_std = mu.row(c) + signal * (kvec.col(0).transpose() * alpha_);
                const VectorXd v = chol_.matrixL().solve(kvec.col(0));
                const double var = signal - signal * signal * v.squaredNorm();
                cov_std = var * MatrixXd::Identity(m, m);
            } else {
                const Eigen::RowVectorXd kb = (kvec.array() * beta_.array()).colwise().sum();
                mean_std = mu.row(c) + kb * hyper_.mixing.transpose();
                // Cross-covariance to every (output, training row) pair, then
                // prior - W^T W with W = L^-1 C; triangular solves keep the
                // subtraction accurate where an explicit inverse would not.
                MatrixXd cross(n * m, m);
                for (Index i = 0; i < m; ++i)
                    cross.middleRows(i * n, n) = kvec * (hyper_.mixing.row(i).transpose().asDiagonal() *
                                                         hyper_.mixing.transpose());
                big_chol_.matrixL().solveInPlace(cross);
                cov_std = prior_block - cross.transpose() * cross;
            }

            for (Index j = 0; j < m; ++j) {
                if (cov_std(j, j) < -kVarianceTolerance)
                    throw NumericalError("negative posterior variance " + format_number(cov_std(j, j)));
                if (cov_std(j, j) < 0.0) cov_std(j, j) = 0.0;
            }
            const Index row = start + c;
            out.mean.row(row) = (mean_std.array() * y_scale_.array()) + y_mean_.array();
            out.variance.row(row) = cov_std.diagonal().transpose().array() * y_scale_.array().square();
            if (full_covariance)
                out.covariance[static_cast<std::size_t>(row)] =
                    y_scale_.transpose().asDiagonal() * cov_std * y_scale_.asDiagonal();
        }
    }
    return out;
}

}  // namespace formbo
