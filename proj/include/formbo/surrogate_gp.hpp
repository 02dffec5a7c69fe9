#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "formbo/candidate_space.hpp"
#include "formbo/parameters.hpp"
#include "formbo/result_store.hpp"

namespace formbo {

enum class SurrogateFlavor { independent, coupled_mean, lcm };

std::string_view to_string(SurrogateFlavor f);
SurrogateFlavor surrogate_flavor_from_string(std::string_view text);

struct TrainingOptions {
    int max_steps = 500;
    double learning_rate = 0.05;
    double convergence_tol = 1e-6;
    std::uint64_t seed = 0;
};

struct SurrogateConfig {
    SurrogateFlavor flavor = SurrogateFlavor::lcm;
    double matern_nu = 2.5;  // 0.5, 1.5 or 2.5
    bool latent_encoder = true;
    int latent_input_dim = 0;   // 0 -> 2d
    int latent_output_dim = 0;  // 0 -> m
    int num_latent_gps = 0;     // lcm only; 0 -> m
    double noise_floor = 1e-6;
    TrainingOptions training;

    void validate() const;
};

/// Training matrices in original units.
struct TrainingData {
    std::vector<std::string> input_names;
    std::vector<std::string> target_names;
    Eigen::MatrixXd inputs;   // n x d
    Eigen::MatrixXd targets;  // n x m

    Index size() const { return inputs.rows(); }

    /// Rows from converged records only; early-terminated and failed records are skipped.
    static TrainingData from_records(std::span<const SimulationRecord> records,
                                     std::vector<std::string> input_names,
                                     std::vector<std::string> target_names);
};

/// Posterior moments per candidate. `variance` always holds the marginals;
/// `covariance` holds one m x m block per candidate when `full` is set.
struct PosteriorPrediction {
    Eigen::MatrixXd mean;      // n* x m
    Eigen::MatrixXd variance;  // n* x m
    std::vector<Eigen::MatrixXd> covariance;
    bool full = false;

    Eigen::MatrixXd stddev() const { return variance.cwiseSqrt(); }
};

/// Anything that maps a candidate set onto posterior moments over the targets.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual PosteriorPrediction predict(const CandidateSet& candidates, bool full_covariance,
                                        Index batch_size = 1024) const = 0;
    virtual const std::vector<std::string>& input_names() const = 0;
    virtual const std::vector<std::string>& target_names() const = 0;
};

/// All trainable quantities, in the unconstrained parameterisation used by
/// the optimiser. Blocks that do not apply to a flavor are empty.
struct GpHyperparameters {
    Eigen::MatrixXd encoder_w1;  // h x d
    Eigen::VectorXd encoder_b1;  // h
    Eigen::MatrixXd encoder_w2;  // L x h
    Eigen::VectorXd encoder_b2;  // L
    Eigen::MatrixXd log_lengthscales;    // Q x L
    Eigen::VectorXd log_signal_variance; // 1 (independent, coupled_mean) or empty
    Eigen::MatrixXd mixing;              // m x Q (lcm) or empty
    double noise_raw = 0.0;              // noise variance = floor + exp(noise_raw)
    Eigen::MatrixXd mean_projection;     // R x L
    Eigen::VectorXd mean_projection_bias;
    Eigen::MatrixXd mean_output;         // m x R
    Eigen::VectorXd mean_output_bias;

    Index size() const;
    Eigen::VectorXd flatten() const;
    void unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat);

    /// Seeded initial values: lengthscales 1, signal variance 1, noise 0.1
    /// (standardized units), small random network weights.
    static GpHyperparameters initial(const SurrogateConfig& config, Index input_dim,
                                     Index output_dim, std::uint64_t seed);

    void set_noise_variance(double variance, double floor);
    double noise_variance(double floor) const;
};

/// Multi-output GP conditioned on training data. Immutable after
/// construction; predict is safe to call concurrently.
class FittedSurrogate final : public Predictor {
public:
    /// Maximises the standardized log marginal likelihood. `warm_start`, when
    /// shape-compatible, replaces the seeded initialisation.
    static FittedSurrogate fit(const TrainingData& data, const SurrogateConfig& config,
                               const GpHyperparameters* warm_start = nullptr);

    /// Conditions on `data` with fixed hyperparameters (no training).
    static FittedSurrogate condition(const TrainingData& data, const SurrogateConfig& config,
                                     const GpHyperparameters& hyper);

    PosteriorPrediction predict(const CandidateSet& candidates, bool full_covariance,
                                Index batch_size = 1024) const override;

    /// Prior moments at the candidates (no conditioning).
    PosteriorPrediction prior(const CandidateSet& candidates) const;

    /// Objective maximised by fit, at the current hyperparameters.
    double log_marginal_likelihood() const { return lml_; }
    /// Analytic gradient of the objective w.r.t. the flattened hyperparameters.
    Eigen::VectorXd log_marginal_likelihood_gradient() const;

    const std::vector<std::string>& input_names() const override { return data_.input_names; }
    const std::vector<std::string>& target_names() const override { return data_.target_names; }

    const SurrogateConfig& config() const { return config_; }
    const GpHyperparameters& hyperparameters() const { return hyper_; }
    const TrainingData& training_data() const { return data_; }
    double noise_variance() const { return hyper_.noise_variance(config_.noise_floor); }
    /// Diagonal jitter added on top of the noise to factorise the training covariance.
    double jitter() const { return jitter_; }
    /// Objective value after each optimiser step (empty for `condition`).
    const std::vector<double>& loss_trace() const { return loss_trace_; }

    Eigen::RowVectorXd input_mean() const { return x_mean_; }
    Eigen::RowVectorXd input_scale() const { return x_scale_; }
    Eigen::RowVectorXd target_mean() const { return y_mean_; }
    Eigen::RowVectorXd target_scale() const { return y_scale_; }

private:
    FittedSurrogate() = default;
    void standardize();
    void factorize();
    Eigen::MatrixXd encode(const Eigen::MatrixXd& x_std) const;
    Eigen::MatrixXd prior_mean_std(const Eigen::MatrixXd& latent) const;

    SurrogateConfig config_;
    TrainingData data_;
    GpHyperparameters hyper_;
    std::vector<double> loss_trace_;

    Eigen::RowVectorXd x_mean_, x_scale_, y_mean_, y_scale_;
    Eigen::MatrixXd x_std_, y_std_;
    Eigen::MatrixXd latent_;  // n x L

    double lml_ = 0.0;
    double jitter_ = 0.0;
    // independent / coupled_mean: shared n x n factor and per-output weights.
    Eigen::LLT<Eigen::MatrixXd> chol_;
    Eigen::MatrixXd alpha_;  // n x m
    // lcm: per latent GP weights and the factor of the nm x nm training covariance.
    Eigen::MatrixXd beta_;  // n x Q
    Eigen::LLT<Eigen::MatrixXd> big_chol_;
};

/// Matern covariance with unit variance as a function of scaled distance.
double matern(double r, double nu);

}  // namespace formbo
