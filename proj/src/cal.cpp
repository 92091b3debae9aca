#include "structvol/cal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "structvol/rng.hpp"

namespace structvol {

namespace {
constexpr uint64_t kStreamShuffle = 0x7365672D73687566ull;
constexpr uint64_t kStreamInit = 0x7365672D696E6974ull;
constexpr uint64_t kFinetuneSeedSalt = 0x66696E6574756E65ull;
constexpr double kProbFloor = 1e-12;
}  // namespace

void TrainOptions::validate() const {
    if (epochs < 0) throw std::invalid_argument("epoch count must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!std::isfinite(learning_rate)) throw std::invalid_argument("learning rate must be finite");
}

void TrainConfig::validate() const {
    if (epochs_pretrain < 0 || epochs_finetune < 0)
        throw std::invalid_argument("epoch counts must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!std::isfinite(learning_rate)) throw std::invalid_argument("learning rate must be finite");
}

uint64_t TrainConfig::finetune_seed() const { return rng::splitmix64(seed ^ kFinetuneSeedSalt); }

namespace {

void check_entry(const Segmenter& seg, const SyntheticEntry& entry) {
    if (!(entry.image.dims() == entry.mask.dims()) || !(entry.cmap.dims == entry.mask.dims()))
        throw std::invalid_argument("entry members disagree in dims");
    for (uint8_t l : entry.mask.labels())
        if (l >= seg.num_classes())
            throw std::invalid_argument("entry label exceeds segmenter class count");
}

double mean_weighted_ce(const Segmenter& seg, const SyntheticEntry& entry,
                        const ConfidenceMap* weights) {
    check_entry(seg, entry);
    std::vector<float> probs = seg.predict(entry.image);
    const uint32_t K = seg.num_classes();
    const std::size_t n = entry.mask.dims().voxels();
    double acc = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        double p = std::max(double(probs[v * K + entry.mask.labels()[v]]), kProbFloor);
        double l = -std::log(p);
        acc += weights ? double(weights->v[v]) * l : l;
    }
    return acc / double(n);
}

}  // namespace

double loss_ori(const Segmenter& seg, const SyntheticEntry& entry) {
    return mean_weighted_ce(seg, entry, nullptr);
}

double loss_cal(const Segmenter& seg, const SyntheticEntry& entry) {
    return mean_weighted_ce(seg, entry, &entry.cmap);
}

namespace {

// Multinomial logistic regression over three per-voxel features:
// [intensity, boundary-clamped neighborhood mean, 1].
class VoxelLogisticSegmenter final : public Segmenter {
public:
    static constexpr uint32_t kFeatures = 3;

    VoxelLogisticSegmenter(uint32_t num_classes, uint32_t radius, std::vector<double> weights)
        : num_classes_(num_classes), radius_(radius), weights_(std::move(weights)) {
        if (num_classes_ < 2) throw std::invalid_argument("segmenter needs at least two classes");
        if (weights_.size() != std::size_t(num_classes_) * kFeatures)
            throw std::invalid_argument("segmenter weight block has the wrong size");
    }

    uint32_t num_classes() const override { return num_classes_; }

    std::vector<float> predict(const Volume& image) const override {
        std::vector<double> features = compute_features(image);
        const std::size_t n = image.dims().voxels();
        std::vector<float> probs(n * num_classes_);
        std::vector<double> logits(num_classes_);
        for (std::size_t v = 0; v < n; ++v) {
            softmax_at(features, v, logits);
            for (uint32_t k = 0; k < num_classes_; ++k)
                probs[v * num_classes_ + k] = float(logits[k]);
        }
        return probs;
    }

    std::span<double> parameters() override { return weights_; }
    std::span<const double> parameters() const override { return weights_; }

    double loss_grad(const Volume& image, const LabelVolume& labels, const ConfidenceMap* weights,
                     std::span<double> grad) const override {
        if (!(image.dims() == labels.dims()))
            throw std::invalid_argument("image and label dims disagree");
        if (!grad.empty() && grad.size() != weights_.size())
            throw std::invalid_argument("gradient buffer has the wrong size");
        std::vector<double> features = compute_features(image);
        const std::size_t n = image.dims().voxels();
        std::vector<double> probs(num_classes_);
        double loss = 0.0;
        for (std::size_t v = 0; v < n; ++v) {
            softmax_at(features, v, probs);
            const uint8_t label = labels.labels()[v];
            const double w = weights ? double(weights->v[v]) : 1.0;
            loss += -w * std::log(std::max(probs[label], kProbFloor));
            if (grad.empty()) continue;
            for (uint32_t k = 0; k < num_classes_; ++k) {
                double coeff = w * (probs[k] - (k == label ? 1.0 : 0.0)) / double(n);
                for (uint32_t j = 0; j < kFeatures; ++j)
                    grad[std::size_t(k) * kFeatures + j] +=
                        coeff * features[v * kFeatures + j];
            }
        }
        return loss / double(n);
    }

    std::unique_ptr<Segmenter> clone() const override {
        return std::make_unique<VoxelLogisticSegmenter>(num_classes_, radius_, weights_);
    }

    nlohmann::json to_json() const override {
        nlohmann::json j;
        j["schema_version"] = 1;
        j["type"] = "voxel_logistic";
        j["num_classes"] = num_classes_;
        j["feature_radius"] = radius_;
        j["weights"] = weights_;
        return j;
    }

private:
    std::vector<double> compute_features(const Volume& image) const {
        if (image.channels() != 1)
            throw std::invalid_argument("reference segmenter expects single-channel images");
        const Dims& dims = image.dims();
        const std::size_t n = dims.voxels();
        std::vector<double> features(n * kFeatures);
        const long r = long(radius_);
        for (uint32_t z = 0; z < dims.d; ++z)
            for (uint32_t y = 0; y < dims.h; ++y)
                for (uint32_t x = 0; x < dims.w; ++x) {
                    double acc = 0.0;
                    std::size_t cnt = 0;
                    for (long dz = -r; dz <= r; ++dz)
                        for (long dy = -r; dy <= r; ++dy)
                            for (long dx = -r; dx <= r; ++dx) {
                                long zz = long(z) + dz, yy = long(y) + dy, xx = long(x) + dx;
                                if (zz < 0 || yy < 0 || xx < 0 || zz >= long(dims.d) ||
                                    yy >= long(dims.h) || xx >= long(dims.w))
                                    continue;
                                acc += image.at(0, uint32_t(zz), uint32_t(yy), uint32_t(xx));
                                ++cnt;
                            }
                    std::size_t v = voxel_index(dims, z, y, x);
                    features[v * kFeatures + 0] = image.at(0, z, y, x);
                    features[v * kFeatures + 1] = acc / double(cnt);
                    features[v * kFeatures + 2] = 1.0;
                }
        return features;
    }

    void softmax_at(const std::vector<double>& features, std::size_t v,
                    std::vector<double>& out) const {
        double max_logit = -std::numeric_limits<double>::infinity();
        for (uint32_t k = 0; k < num_classes_; ++k) {
            double logit = 0.0;
            for (uint32_t j = 0; j < kFeatures; ++j)
                logit += weights_[std::size_t(k) * kFeatures + j] * features[v * kFeatures + j];
            out[k] = logit;
            max_logit = std::max(max_logit, logit);
        }
        double sum = 0.0;
        for (uint32_t k = 0; k < num_classes_; ++k) {
            out[k] = std::exp(out[k] - max_logit);
            sum += out[k];
        }
        for (uint32_t k = 0; k < num_classes_; ++k) out[k] /= sum;
    }

    uint32_t num_classes_;
    uint32_t radius_;
    std::vector<double> weights_;
};

}  // namespace

std::unique_ptr<Segmenter> make_reference_segmenter(uint32_t num_classes, uint32_t feature_radius,
                                                    uint64_t seed) {
    std::vector<double> weights(std::size_t(num_classes) * VoxelLogisticSegmenter::kFeatures);
    for (std::size_t i = 0; i < weights.size(); ++i)
        weights[i] = 0.01 * rng::normal(seed, kStreamInit, i);
    return std::make_unique<VoxelLogisticSegmenter>(num_classes, feature_radius,
                                                    std::move(weights));
}

std::unique_ptr<Segmenter> segmenter_from_json(const nlohmann::json& j) {
    if (j.at("type").get<std::string>() != "voxel_logistic")
        throw std::invalid_argument("not a voxel_logistic parameter block");
    return std::make_unique<VoxelLogisticSegmenter>(
        j.at("num_classes").get<uint32_t>(), j.at("feature_radius").get<uint32_t>(),
        j.at("weights").get<std::vector<double>>());
}

std::vector<double> train(Segmenter& seg, const std::vector<SyntheticEntry>& corpus,
                          const TrainOptions& opt, bool use_cal) {
    opt.validate();
    if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
    for (const auto& entry : corpus) check_entry(seg, entry);

    std::vector<double> history;
    std::vector<std::size_t> order(corpus.size());
    std::vector<double> grad(seg.parameters().size());
    std::size_t global_step = 0;

    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        // Seeded Fisher-Yates, one substream per epoch.
        const uint64_t shuffle_stream = rng::substream(kStreamShuffle, uint64_t(epoch));
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[rng::uniform_index(opt.seed, shuffle_stream, i, i)]);

        for (std::size_t start = 0; start < order.size(); start += std::size_t(opt.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + std::size_t(opt.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const SyntheticEntry& entry = corpus[order[i]];
                batch_loss += seg.loss_grad(entry.image, entry.mask,
                                            use_cal ? &entry.cmap : nullptr, grad);
            }
            const double scale = 1.0 / double(end - start);
            batch_loss *= scale;
            ++global_step;
            if (!std::isfinite(batch_loss))
                throw TrainingDiverged("segmenter training produced a non-finite loss",
                                       global_step);
            auto params = seg.parameters();
            for (std::size_t p = 0; p < params.size(); ++p)
                params[p] -= opt.learning_rate * grad[p] * scale;
            history.push_back(batch_loss);
        }
    }
    return history;
}

PretrainFinetuneResult pretrain_finetune(Segmenter& seg,
                                         const std::vector<SyntheticEntry>& synthetic,
                                         const std::vector<SyntheticEntry>& real,
                                         const TrainConfig& cfg) {
    cfg.validate();
    if (synthetic.empty() || real.empty())
        throw std::invalid_argument("pretrain_finetune: both corpora must be non-empty");
    PretrainFinetuneResult result;
    if (cfg.epochs_pretrain > 0) {
        TrainOptions pre{cfg.epochs_pretrain, cfg.learning_rate, cfg.batch_size, cfg.seed};
        result.pretrain_history = train(seg, synthetic, pre, cfg.use_cal);
    }
    if (cfg.epochs_finetune > 0) {
        TrainOptions fine{cfg.epochs_finetune, cfg.learning_rate, cfg.batch_size,
                          cfg.finetune_seed()};
        result.finetune_history = train(seg, real, fine, false);
    }
    return result;
}

SyntheticEntry entry_with_full_confidence(Volume image, LabelVolume mask) {
    ConfidenceMap cmap(mask.dims(), 1.0f);
    return attach_confidence(std::move(mask), std::move(image), std::move(cmap));
}

LabelVolume predict_labels(const Segmenter& seg, const Volume& image, const LabelVolume& like) {
    std::vector<float> probs = seg.predict(image);
    const uint32_t K = seg.num_classes();
    const std::size_t n = image.dims().voxels();
    std::vector<uint8_t> labels(n, 0);
    for (std::size_t v = 0; v < n; ++v) {
        uint32_t best = 0;
        float best_p = probs[v * K];
        for (uint32_t k = 1; k < K; ++k)
            if (probs[v * K + k] > best_p) {
                best_p = probs[v * K + k];
                best = k;
            }
        labels[v] = uint8_t(best);
    }
    return LabelVolume(image.dims(), std::move(labels), like.spacing(), like.num_classes());
}

}  // namespace structvol
