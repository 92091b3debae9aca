#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "structvol/ssv.hpp"
#include "structvol/volume.hpp"

namespace structvol {

// Per-step noise variances beta_1..beta_T with the derived cumulative
// products alpha_bar. alpha_bar is strictly decreasing for any valid beta.
class NoiseSchedule {
public:
    explicit NoiseSchedule(std::vector<double> betas);

    static NoiseSchedule linear(int steps, double beta_start, double beta_end);
    // "linear:<beta_start>:<beta_end>:<T>"
    static NoiseSchedule parse(const std::string& spec);
    std::string spec() const;

    int steps() const { return int(betas_.size()); }
    double beta(int t) const;       // t in 1..T
    double alpha(int t) const;      // 1 - beta_t
    double alpha_bar(int t) const;  // t in 0..T, alpha_bar(0) == 1

private:
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
    std::string spec_;
};

// Latent grid walked by the sampler, kept in double precision so long
// reverse chains do not accumulate storage rounding. Geometry metadata
// (spacing, declared intensity range, source channel count) rides along so a
// codec can decode any intermediate state on its own.
struct LatentState {
    int step = 0;
    uint32_t channels = 1;
    uint32_t source_channels = 1;
    Dims dims;
    Spacing spacing;
    float range_lo = 0.0f;
    float range_hi = 1.0f;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    void validate() const;
};

// Condition feature at latent resolution (the encoded control input).
struct ConditionFeature {
    uint32_t channels = 0;
    Dims dims;
    std::vector<float> values;

    void validate() const;
};

class Denoiser {
public:
    virtual ~Denoiser() = default;
    // Predicted noise for state z at step t under condition c (may be null).
    // Returns a buffer of z's shape; must be deterministic given (z, t, c).
    virtual std::vector<double> predict_eps(const LatentState& z, int t,
                                           const ConditionFeature* c) const = 0;
};

class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    virtual LatentState encode(const Volume& v) const = 0;
    virtual Volume decode(const LatentState& z) const = 0;
    virtual uint32_t factor() const = 0;
    virtual uint32_t latent_channels() const = 0;
};

// The standard-normal field consumed by forward_diffuse(., t, ., seed);
// exposed so oracles can reproduce the exact draw.
std::vector<double> forward_noise_field(uint64_t seed, int t, std::size_t n);

// The per-item seed dm_loss derives for batch item i.
uint64_t dm_loss_item_seed(uint64_t seed, std::size_t item);

// Closed-form forward marginal z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps,
// equal in distribution to t applications of the iterative noising rule.
LatentState forward_diffuse(const LatentState& z0, int t, const NoiseSchedule& sched,
                            uint64_t seed);

// One reverse transition: mean (1/sqrt(alpha_t)) (z_t - beta_t/sqrt(1-abar_t)
// eps_hat), fixed covariance beta_t I; the final step (t == 1) returns the
// mean without noise.
LatentState reverse_step(const LatentState& zt, int t, const ConditionFeature* c,
                         const Denoiser& den, const NoiseSchedule& sched, uint64_t seed);

struct SampleResult {
    LatentState z0;
    SkipTrace trace;
};

// Runs the full reverse chain from seeded Gaussian noise shaped like
// `shape_like`. States whose step is listed in trace_steps (all < T) are
// decoded into the trace; tracing never perturbs the chain.
SampleResult sample(const LatentState& shape_like, const ConditionFeature* c, const Denoiser& den,
                    const LatentCodec& codec, const NoiseSchedule& sched, uint64_t seed,
                    const std::vector<int>& trace_steps);

// Noise-matching objective: per item draw t uniform in 1..T and eps, form
// z_t, return the mean squared eps residual over all items and elements.
double dm_loss(const std::vector<LatentState>& z0_batch, const Denoiser& den,
               const NoiseSchedule& sched, const std::vector<const ConditionFeature*>& conds,
               uint64_t seed);

// Exact eps-predictor for elementwise N(mu, sigma^2) data; the verification
// oracle for the reverse chain.
std::shared_ptr<Denoiser> analytic_gauss_denoiser(double mu, double sigma, NoiseSchedule sched);

// eps_hat = a * z + b * c_broadcast + bias(t). Condition channels broadcast
// cyclically over latent channels.
class LinearDenoiser : public Denoiser {
public:
    explicit LinearDenoiser(int total_steps);

    std::vector<double> predict_eps(const LatentState& z, int t,
                                   const ConditionFeature* c) const override;

    double a = 0.0;
    double b = 0.0;
    std::vector<double> bias;  // one per step t in 1..T

    nlohmann::json to_json() const;
    static LinearDenoiser from_json(const nlohmann::json& j);
};

struct DiffusionTrainItem {
    LatentState z0;
    std::optional<ConditionFeature> cond;
};

struct LinearDenoiserTraining {
    std::shared_ptr<LinearDenoiser> model;
    std::vector<double> history;  // full-dataset loss before step 1 and after every step
};

// Seeded SGD on dm_loss. Throws TrainingDiverged naming the step when the
// loss stops being finite.
LinearDenoiserTraining train_linear_denoiser(const std::vector<DiffusionTrainItem>& dataset,
                                             const NoiseSchedule& sched, int steps, double lr,
                                             uint64_t seed);

std::shared_ptr<LatentCodec> identity_codec();
std::shared_ptr<LatentCodec> pool_codec(uint32_t factor = 4);

}  // namespace structvol
