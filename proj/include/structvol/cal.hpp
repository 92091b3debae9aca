#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "structvol/ssv.hpp"
#include "structvol/volume.hpp"

namespace structvol {

// Downstream per-voxel segmentation model. predict() returns voxel-major
// class probabilities (p[v * K + k], rows summing to 1); loss_grad() exposes
// the weighted cross-entropy and its parameter gradient so a generic
// training loop can drive any implementation.
class Segmenter {
public:
    virtual ~Segmenter() = default;

    virtual uint32_t num_classes() const = 0;
    virtual std::vector<float> predict(const Volume& image) const = 0;

    virtual std::span<double> parameters() = 0;
    virtual std::span<const double> parameters() const = 0;

    // Mean over voxels of weight(v) * cross_entropy(v); weights may be null
    // (all ones). When grad is non-empty, accumulates dLoss/dparams into it.
    virtual double loss_grad(const Volume& image, const LabelVolume& labels,
                             const ConfidenceMap* weights, std::span<double> grad) const = 0;

    virtual std::unique_ptr<Segmenter> clone() const = 0;
    virtual nlohmann::json to_json() const = 0;
};

struct TrainOptions {
    int epochs = 1;
    double learning_rate = 0.1;
    int batch_size = 4;
    uint64_t seed = 0;

    void validate() const;
};

struct TrainConfig {
    int epochs_pretrain = 1;
    int epochs_finetune = 1;
    double learning_rate = 0.1;
    int batch_size = 4;
    uint64_t seed = 0;
    bool use_cal = true;

    void validate() const;
    // Phase-2 seed, derived so the two phases never share draws.
    uint64_t finetune_seed() const;
};

// Unweighted mean cross-entropy over voxels.
double loss_ori(const Segmenter& seg, const SyntheticEntry& entry);

// Confidence-weighted mean: mean over voxels of C_map(v) * l(v). A plain
// mean, no renormalization by the confidence mass.
double loss_cal(const Segmenter& seg, const SyntheticEntry& entry);

// Per-voxel multinomial logistic model over [intensity, neighborhood mean
// within feature_radius, bias]; closed-form gradients, seeded near-zero
// initialization.
std::unique_ptr<Segmenter> make_reference_segmenter(uint32_t num_classes, uint32_t feature_radius,
                                                    uint64_t seed = 0);

std::unique_ptr<Segmenter> segmenter_from_json(const nlohmann::json& j);

// Seeded mini-batch gradient descent; minimizes loss_cal when use_cal, else
// loss_ori. Returns per-batch loss history; throws TrainingDiverged on a
// non-finite loss.
std::vector<double> train(Segmenter& seg, const std::vector<SyntheticEntry>& corpus,
                          const TrainOptions& opt, bool use_cal);

struct PretrainFinetuneResult {
    std::vector<double> pretrain_history;
    std::vector<double> finetune_history;
};

// Phase 1 on the synthetic corpus (CAL per config), phase 2 on real data
// with the unweighted loss; real entries carry an implicit C_map == 1.
PretrainFinetuneResult pretrain_finetune(Segmenter& seg,
                                         const std::vector<SyntheticEntry>& synthetic,
                                         const std::vector<SyntheticEntry>& real,
                                         const TrainConfig& cfg);

// Wraps a real (image, mask) pair as an entry with full confidence.
SyntheticEntry entry_with_full_confidence(Volume image, LabelVolume mask);

// Argmax of predict() mapped back to labels.
LabelVolume predict_labels(const Segmenter& seg, const Volume& image, const LabelVolume& like);

}  // namespace structvol
