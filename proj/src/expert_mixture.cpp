#include "formbo/expert_mixture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "formbo/adam.hpp"

namespace formbo {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view to_string(ResampleMode mode) {
    return mode == ResampleMode::up_sample ? "up_sample" : "down_sample";
}

ResampleMode resample_mode_from_string(std::string_view text) {
    if (text == "up_sample") return ResampleMode::up_sample;
    if (text == "down_sample") return ResampleMode::down_sample;
    throw ConfigError("unknown resample mode '" + std::string(text) + "'");
}

std::string_view to_string(GatingMode mode) { return mode == GatingMode::hard ? "hard" : "soft"; }

GatingMode gating_mode_from_string(std::string_view text) {
    if (text == "hard") return GatingMode::hard;
    if (text == "soft") return GatingMode::soft;
    throw ConfigError("unknown gating mode '" + std::string(text) + "'");
}

PointCloud PointCloud::load(const std::filesystem::path& path, std::string part_id) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open point cloud " + path.string());
    std::vector<double> coords;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        double x, y, z;
        if (!(ss >> x >> y >> z) || !std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
            throw DataError(path.string() + " line " + std::to_string(line_no) + ": expected three finite numbers");
        coords.insert(coords.end(), {x, y, z});
    }
    if (coords.empty()) throw DataError(path.string() + ": empty point cloud");
    PointCloud cloud;
    cloud.part_id = std::move(part_id);
    cloud.points = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>(
        coords.data(), static_cast<Index>(coords.size() / 3), 3);
    return cloud;
}

void PointCloud::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    for (Index i = 0; i < points.rows(); ++i)
        out << format_number(points(i, 0)) << ' ' << format_number(points(i, 1)) << ' '
            << format_number(points(i, 2)) << '\n';
    if (!out) throw DataError("cannot write point cloud " + path.string());
}

PointCloud resample(const PointCloud& cloud, Index k, ResampleMode mode, std::uint64_t seed) {
    if (k < 1) throw ConfigError("resample size must be >= 1");
    if (cloud.size() < 1) throw DataError("cannot resample an empty cloud");
    PointMatrix pool = cloud.points;
    if (mode == ResampleMode::down_sample) {
        if (cloud.size() < k)
            throw DataError("down_sample needs at least " + std::to_string(k) + " points, part " + cloud.part_id +
                            " has " + std::to_string(cloud.size()));
    } else {
        while (pool.rows() < k) {
            PointMatrix doubled(pool.rows() * 2, 3);
            doubled << pool, pool;
            pool = std::move(doubled);
        }
    }
    // Partial Fisher-Yates: the first k slots are a uniform draw without replacement.
    std::vector<Index> idx(static_cast<std::size_t>(pool.rows()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::mt19937_64 rng(seed);
    for (Index i = 0; i < k; ++i) {
        std::uniform_int_distribution<Index> pick(i, pool.rows() - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    PointCloud out;
    out.part_id = cloud.part_id;
    out.points.resize(k, 3);
    for (Index i = 0; i < k; ++i) out.points.row(i) = pool.row(idx[static_cast<std::size_t>(i)]);
    return out;
}

Index choose_k_emb(std::span<const PointCloud> clouds, ResampleMode mode) {
    if (clouds.empty()) throw DataError("choose_k_emb needs at least one cloud");
    Index k = clouds.front().size();
    for (const auto& c : clouds) k = mode == ResampleMode::down_sample ? std::min(k, c.size()) : std::max(k, c.size());
    return k;
}

namespace {

// Forward pass for one point; the same fixed-size code path runs for every
// point, so pooled embeddings are bit-identical under point permutation.
struct PointActivations {
    VectorXd h1, h2, h3;
};

}  // namespace

struct EncoderTrainer {
    static void point_forward(const GeometricEncoder& e, const Eigen::Vector3d& p, PointActivations& a) {
        a.h1 = (e.w1_ * p + e.b1_).array().tanh();
        a.h2 = (e.w2_ * a.h1 + e.b2_).array().tanh();
        a.h3 = (e.w3_ * a.h2 + e.b3_).array().tanh();
    }

    static VectorXd pool(const GeometricEncoder& e, const PointMatrix& pts, std::vector<Index>* argmax) {
        VectorXd emb = VectorXd::Constant(e.w3_.rows(), -std::numeric_limits<double>::infinity());
        if (argmax) argmax->assign(static_cast<std::size_t>(emb.size()), 0);
        PointActivations a;
        for (Index i = 0; i < pts.rows(); ++i) {
            point_forward(e, pts.row(i).transpose(), a);
            for (Index f = 0; f < emb.size(); ++f)
                if (a.h3(f) > emb(f)) {
                    emb(f) = a.h3(f);
                    if (argmax) (*argmax)[static_cast<std::size_t>(f)] = i;
                }
        }
        return emb;
    }

    static EncoderTraining train(std::span<const PointCloud> clouds, const EncoderConfig& config) {
        if (clouds.size() < 2) throw DataError("encoder training needs at least 2 parts");
        const Index k = choose_k_emb(clouds, config.mode);
        const Index width = config.embedding_dim.value_or(k);
        if (width < 1) throw ConfigError("embedding dimension must be >= 1");
        const auto n_parts = static_cast<Index>(clouds.size());

        GeometricEncoder enc;
        enc.config_ = config;
        enc.k_points_ = k;
        for (const auto& c : clouds) enc.labels_.push_back(c.part_id);

        std::mt19937_64 rng(config.seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        auto random = [&](Index rows, Index cols) {
            MatrixXd w(rows, cols);
            const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
            for (Index j = 0; j < cols; ++j)
                for (Index i = 0; i < rows; ++i) w(i, j) = scale * normal(rng);
            return w;
        };
        enc.w1_ = random(config.hidden1, 3);
        enc.b1_ = VectorXd::Zero(config.hidden1);
        enc.w2_ = random(config.hidden2, config.hidden1);
        enc.b2_ = VectorXd::Zero(config.hidden2);
        enc.w3_ = random(width, config.hidden2);
        enc.b3_ = VectorXd::Zero(width);
        enc.wc_ = random(n_parts, width);
        enc.bc_ = VectorXd::Zero(n_parts);

        std::vector<PointMatrix> sampled;
        for (std::size_t i = 0; i < clouds.size(); ++i)
            sampled.push_back(resample(clouds[i], k, config.mode, config.seed + i).points);

        auto params_of = [&] {
            std::vector<Eigen::Map<VectorXd>> maps;
            for (auto* m : {&enc.w1_, &enc.w2_, &enc.w3_, &enc.wc_})
                maps.emplace_back(m->data(), m->size());
            for (auto* v : {&enc.b1_, &enc.b2_, &enc.b3_, &enc.bc_}) maps.emplace_back(v->data(), v->size());
            return maps;
        };
        Index total = 0;
        for (auto& m : params_of()) total += m.size();
        Adam adam(total, config.learning_rate);

        auto accuracy = [&] {
            int correct = 0;
            for (Index c = 0; c < n_parts; ++c) {
                Index pred;
                enc.classify(pool(enc, sampled[static_cast<std::size_t>(c)], nullptr)).maxCoeff(&pred);
                correct += pred == c;
            }
            return static_cast<double>(correct) / static_cast<double>(n_parts);
        };

        EncoderTraining out;
        double acc = accuracy();
        int step = 0;
        for (; step < config.max_steps && acc < 1.0; ++step) {
            MatrixXd gw1 = MatrixXd::Zero(enc.w1_.rows(), enc.w1_.cols()), gw2 = MatrixXd::Zero(enc.w2_.rows(), enc.w2_.cols()),
                     gw3 = MatrixXd::Zero(enc.w3_.rows(), enc.w3_.cols()), gwc = MatrixXd::Zero(enc.wc_.rows(), enc.wc_.cols());
            VectorXd gb1 = VectorXd::Zero(enc.b1_.size()), gb2 = VectorXd::Zero(enc.b2_.size()),
                     gb3 = VectorXd::Zero(enc.b3_.size()), gbc = VectorXd::Zero(enc.bc_.size());
            for (Index c = 0; c < n_parts; ++c) {
                const PointMatrix& pts = sampled[static_cast<std::size_t>(c)];
                std::vector<Index> argmax;
                const VectorXd emb = pool(enc, pts, &argmax);
                VectorXd logits = enc.classify(emb);
                logits.array() -= logits.maxCoeff();
                VectorXd prob = logits.array().exp();
                prob /= prob.sum();
                VectorXd d_logits = prob;
                d_logits(c) -= 1.0;
                d_logits /= static_cast<double>(n_parts);
                gwc += d_logits * emb.transpose();
                gbc += d_logits;
                const VectorXd d_emb = enc.wc_.transpose() * d_logits;
                // Max pooling routes each feature's gradient to its argmax point.
                PointActivations a;
                for (Index f = 0; f < d_emb.size(); ++f) {
                    if (d_emb(f) == 0.0) continue;
                    point_forward(enc, pts.row(argmax[static_cast<std::size_t>(f)]).transpose(), a);
                    const double d3 = d_emb(f) * (1.0 - a.h3(f) * a.h3(f));
                    gw3.row(f) += d3 * a.h2.transpose();
                    gb3(f) += d3;
                    const VectorXd d2 = (enc.w3_.row(f).transpose() * d3).array() * (1.0 - a.h2.array().square());
                    gw2 += d2 * a.h1.transpose();
                    gb2 += d2;
                    const VectorXd d1 = (enc.w2_.transpose() * d2).array() * (1.0 - a.h1.array().square());
                    gw1 += d1 * pts.row(argmax[static_cast<std::size_t>(f)]);
                    gb1 += d1;
                }
            }
            VectorXd flat(total), grad(total);
            Index pos = 0;
            auto maps = params_of();
            const std::vector<const MatrixXd*> gm{&gw1, &gw2, &gw3, &gwc};
            const std::vector<const VectorXd*> gv{&gb1, &gb2, &gb3, &gbc};
            for (std::size_t i = 0; i < maps.size(); ++i) {
                const Index sz = maps[i].size();
                flat.segment(pos, sz) = maps[i];
                grad.segment(pos, sz) = i < 4 ? Eigen::Map<const VectorXd>(gm[i]->data(), sz)
                                              : Eigen::Map<const VectorXd>(gv[i - 4]->data(), sz);
                pos += sz;
            }
            adam.step(flat, grad);
            pos = 0;
            for (auto& m : maps) {
                m = flat.segment(pos, m.size());
                pos += m.size();
            }
            acc = accuracy();
        }

        out.accuracy = acc;
        out.steps = step;
        if (acc < 0.9)
            out.warnings.push_back("encoder reached only " + format_number(acc * 100.0) +
                                   "% training accuracy after " + std::to_string(step) + " steps");
        for (std::size_t c = 0; c < clouds.size(); ++c)
            out.embeddings[clouds[c].part_id] = pool(enc, sampled[c], nullptr);
        out.encoder = std::move(enc);
        return out;
    }
};

VectorXd GeometricEncoder::embed_points(const PointMatrix& points) const {
    if (points.rows() < 1) throw DataError("cannot embed an empty cloud");
    return EncoderTrainer::pool(*this, points, nullptr);
}

VectorXd GeometricEncoder::embed(const PointCloud& cloud) const {
    ResampleMode mode = config_.mode;
    if (mode == ResampleMode::down_sample && cloud.size() < k_points_) mode = ResampleMode::up_sample;
    return embed_points(resample(cloud, k_points_, mode, config_.seed).points);
}

VectorXd GeometricEncoder::classify(const VectorXd& embedding) const { return wc_ * embedding + bc_; }

EncoderTraining train_encoder(std::span<const PointCloud> clouds, const EncoderConfig& config) {
    return EncoderTrainer::train(clouds, config);
}

GatingDecision gate_by_distance(std::span<const std::pair<std::string, double>> distances, GatingMode mode,
                                double cutoff) {
    if (distances.empty()) throw DataError("gating needs at least one expert");
    std::vector<std::pair<std::string, double>> sorted(distances.begin(), distances.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    GatingDecision decision;
    decision.mode = mode;
    decision.distances = sorted;

    std::size_t nearest = 0;
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i].second < sorted[nearest].second) nearest = i;

    if (mode == GatingMode::hard || sorted[nearest].second == 0.0) {
        decision.selected = {{sorted[nearest].first, 1.0}};
        return decision;
    }

    std::vector<double> w(sorted.size());
    double total = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double d = sorted[i].second;
        w[i] = std::isfinite(d) && d > 0.0 ? 1.0 / d : 0.0;
        total += w[i];
    }
    if (!(total > 0.0)) throw DataError("gating distances contain no finite positive entry");
    double kept = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        w[i] /= total;
        if (w[i] > cutoff || i == nearest) kept += w[i];
        else w[i] = 0.0;
    }
    for (std::size_t i = 0; i < sorted.size(); ++i)
        if (w[i] > 0.0) decision.selected.emplace_back(sorted[i].first, w[i] / kept);
    return decision;
}

GatingDecision gate(const PointCloud& new_cloud, const GeometricEncoder& encoder,
                    const std::map<std::string, VectorXd>& expert_embeddings, GatingMode mode, double cutoff) {
    const VectorXd e = encoder.embed(new_cloud);
    std::vector<std::pair<std::string, double>> distances;
    for (const auto& [id, emb] : expert_embeddings) distances.emplace_back(id, (e - emb).norm());
    return gate_by_distance(distances, mode, cutoff);
}

PosteriorPrediction combine_predictions(std::span<const double> weights,
                                        std::span<const PosteriorPrediction> preds, bool full_covariance) {
    if (weights.size() != preds.size() || preds.empty()) throw DataError("mixture needs one prediction per weight");
    const Index n = preds.front().mean.rows();
    const Index m = preds.front().mean.cols();
    for (const auto& p : preds)
        if (p.mean.rows() != n || p.mean.cols() != m) throw DataError("expert predictions differ in shape");

    PosteriorPrediction out;
    out.full = full_covariance;
    out.mean = MatrixXd::Zero(n, m);
    for (std::size_t j = 0; j < preds.size(); ++j) out.mean += weights[j] * preds[j].mean;
    out.variance = MatrixXd::Zero(n, m);
    for (std::size_t j = 0; j < preds.size(); ++j)
        out.variance += weights[j] * preds[j].variance;
    for (std::size_t j = 0; j < preds.size(); ++j)
        out.variance += weights[j] * (preds[j].mean - out.mean).cwiseAbs2();
    if ((out.variance.array() < -1e-9).any()) throw NumericalError("negative mixture variance");
    out.variance = out.variance.cwiseMax(0.0);

    if (full_covariance) {
        out.covariance.assign(static_cast<std::size_t>(n), MatrixXd::Zero(m, m));
        for (Index c = 0; c < n; ++c) {
            auto& cov = out.covariance[static_cast<std::size_t>(c)];
            for (std::size_t j = 0; j < preds.size(); ++j) {
                const VectorXd diff = (preds[j].mean.row(c) - out.mean.row(c)).transpose();
                const MatrixXd block = preds[j].full ? preds[j].covariance[static_cast<std::size_t>(c)]
                                                     : MatrixXd(preds[j].variance.row(c).asDiagonal());
                cov += weights[j] * (block + diff * diff.transpose());
            }
        }
    }
    return out;
}

PosteriorPrediction mixture_predict(const GatingDecision& decision, const ExpertMap& experts,
                                    const CandidateSet& candidates, bool full_covariance, Index batch_size) {
    if (decision.selected.empty()) throw DataError("gating decision selects no expert");
    std::vector<double> weights;
    std::vector<PosteriorPrediction> preds;
    const std::vector<std::string>* targets = nullptr;
    for (const auto& [id, w] : decision.selected) {
        auto it = experts.find(id);
        if (it == experts.end() || !it->second) throw DataError("no fitted expert for part " + id);
        if (it->second->input_names() != candidates.names)
            throw DataError("expert " + id + " has a different parameter schema");
        if (targets && it->second->target_names() != *targets)
            throw DataError("expert " + id + " has different targets");
        targets = &it->second->target_names();
        weights.push_back(w);
        preds.push_back(it->second->predict(candidates, full_covariance, batch_size));
    }
    return combine_predictions(weights, preds, full_covariance);
}

MixturePredictor::MixturePredictor(GatingDecision decision, ExpertMap experts)
    : decision_(std::move(decision)), experts_(std::move(experts)) {
    if (decision_.selected.empty()) throw DataError("gating decision selects no expert");
    for (const auto& [id, w] : decision_.selected)
        if (!experts_.count(id)) throw DataError("no fitted expert for part " + id);
}

PosteriorPrediction MixturePredictor::predict(const CandidateSet& candidates, bool full_covariance,
                                              Index batch_size) const {
    return mixture_predict(decision_, experts_, candidates, full_covariance, batch_size);
}

const std::vector<std::string>& MixturePredictor::input_names() const {
    return experts_.at(decision_.selected.front().first)->input_names();
}

const std::vector<std::string>& MixturePredictor::target_names() const {
    return experts_.at(decision_.selected.front().first)->target_names();
}

}  // namespace formbo
