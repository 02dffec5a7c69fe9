#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "formbo/candidate_space.hpp"
#include "formbo/surrogate_gp.hpp"

namespace formbo {

using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct PointCloud {
    std::string part_id;
    PointMatrix points;

    Index size() const { return points.rows(); }

    /// Plain text, one point per line: three whitespace-separated numbers.
    static PointCloud load(const std::filesystem::path& path, std::string part_id);
    void save(const std::filesystem::path& path) const;
};

enum class ResampleMode { up_sample, down_sample };

std::string_view to_string(ResampleMode mode);
ResampleMode resample_mode_from_string(std::string_view text);

/// Exactly k points. down_sample draws k distinct points; up_sample doubles
/// the cloud until it holds at least k points, then draws k without replacement.
PointCloud resample(const PointCloud& cloud, Index k, ResampleMode mode, std::uint64_t seed);

/// Smallest (down_sample) or largest (up_sample) cloud size.
Index choose_k_emb(std::span<const PointCloud> clouds, ResampleMode mode);

struct EncoderConfig {
    ResampleMode mode = ResampleMode::down_sample;
    // Decouples the pooled embedding width from the resampled point count.
    std::optional<Index> embedding_dim;
    Index hidden1 = 32;
    Index hidden2 = 64;
    int max_steps = 500;
    double learning_rate = 0.01;
    std::uint64_t seed = 0;
};

/// Shared per-point network (3 -> hidden1 -> hidden2 -> k_emb, tanh), global
/// max pooling, and a single linear classifier onto the training parts.
class GeometricEncoder {
public:
    /// Resamples `cloud` to the training point count, then embeds it.
    Eigen::VectorXd embed(const PointCloud& cloud) const;
    /// Embeds the given points as-is. Invariant under row permutation.
    Eigen::VectorXd embed_points(const PointMatrix& points) const;
    /// Part-label logits for an embedding.
    Eigen::VectorXd classify(const Eigen::VectorXd& embedding) const;

    Index points_per_cloud() const { return k_points_; }
    Index embedding_dim() const { return w3_.rows(); }
    const std::vector<std::string>& labels() const { return labels_; }
    const EncoderConfig& config() const { return config_; }

private:
    friend struct EncoderTrainer;

    EncoderConfig config_;
    Index k_points_ = 0;
    std::vector<std::string> labels_;
    Eigen::MatrixXd w1_, w2_, w3_, wc_;
    Eigen::VectorXd b1_, b2_, b3_, bc_;
};

struct EncoderTraining {
    GeometricEncoder encoder;
    std::map<std::string, Eigen::VectorXd> embeddings;
    double accuracy = 0.0;
    int steps = 0;
    std::vector<std::string> warnings;
};

/// Needs at least two parts. Trains until every part is classified correctly
/// or max_steps; below 90% accuracy a warning is recorded.
EncoderTraining train_encoder(std::span<const PointCloud> clouds, const EncoderConfig& config);

enum class GatingMode { hard, soft };

std::string_view to_string(GatingMode mode);
GatingMode gating_mode_from_string(std::string_view text);

struct GatingDecision {
    GatingMode mode = GatingMode::soft;
    std::vector<std::pair<std::string, double>> selected;   // expert -> weight, sums to 1
    std::vector<std::pair<std::string, double>> distances;  // expert -> Euclidean distance
};

/// Weights from embedding distances. Hard: argmin (ties by part id). Soft:
/// inverse-distance weights, entries at or below `cutoff` dropped (the
/// heaviest expert is always kept), renormalised. A zero distance selects that
/// expert alone.
GatingDecision gate_by_distance(std::span<const std::pair<std::string, double>> distances, GatingMode mode,
                                double cutoff = 0.1);

GatingDecision gate(const PointCloud& new_cloud, const GeometricEncoder& encoder,
                    const std::map<std::string, Eigen::VectorXd>& expert_embeddings, GatingMode mode,
                    double cutoff = 0.1);

using ExpertMap = std::map<std::string, std::shared_ptr<const Predictor>>;

/// Weighted moment matching over the selected experts:
/// mean = sum w_j mean_j, var = sum w_j (var_j + mean_j^2) - mean^2, written in
/// the centred form sum w_j var_j + sum w_j (mean_j - mean)^2.
PosteriorPrediction mixture_predict(const GatingDecision& decision, const ExpertMap& experts,
                                    const CandidateSet& candidates, bool full_covariance = false,
                                    Index batch_size = 1024);

/// Same combination rule applied to precomputed expert predictions.
PosteriorPrediction combine_predictions(std::span<const double> weights,
                                        std::span<const PosteriorPrediction> predictions, bool full_covariance);

class MixturePredictor final : public Predictor {
public:
    MixturePredictor(GatingDecision decision, ExpertMap experts);

    PosteriorPrediction predict(const CandidateSet& candidates, bool full_covariance,
                                Index batch_size = 1024) const override;
    const std::vector<std::string>& input_names() const override;
    const std::vector<std::string>& target_names() const override;
    const GatingDecision& decision() const { return decision_; }

private:
    GatingDecision decision_;
    ExpertMap experts_;
};

}  // namespace formbo
