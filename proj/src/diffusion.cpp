#include "structvol/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "structvol/rng.hpp"

namespace structvol {

namespace {
// Stream ids for the counter-based RNG; one per purpose so draws never alias.
constexpr uint64_t kStreamForward = 1;
constexpr uint64_t kStreamReverse = 2;
constexpr uint64_t kStreamInit = 3;
constexpr uint64_t kStreamLossT = 4;
constexpr uint64_t kStreamLossEps = 5;
constexpr uint64_t kStreamTrainPick = 6;
constexpr uint64_t kStreamTrainT = 7;
constexpr uint64_t kStreamTrainEps = 8;
constexpr uint64_t kEvalSeedSalt = 0x6576616C'73656564ull;
}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw std::invalid_argument("schedule needs at least one step");
    alpha_bars_.resize(betas_.size() + 1);
    alpha_bars_[0] = 1.0;
    for (std::size_t i = 0; i < betas_.size(); ++i) {
        double b = betas_[i];
        if (!(b > 0.0) || !(b < 1.0))
            throw std::invalid_argument("betas must satisfy 0 < beta_t < 1");
        alpha_bars_[i + 1] = alpha_bars_[i] * (1.0 - b);
        if (!(alpha_bars_[i + 1] < alpha_bars_[i]))
            throw std::invalid_argument("alpha_bar must be strictly decreasing");
    }
    std::ostringstream os;
    os << "custom:" << betas_.size();
    spec_ = os.str();
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
    std::vector<double> betas(std::size_t(steps), 0.0);
    for (int i = 0; i < steps; ++i)
        betas[std::size_t(i)] =
            steps == 1 ? beta_start
                       : beta_start + (beta_end - beta_start) * double(i) / double(steps - 1);
    NoiseSchedule s(std::move(betas));
    std::ostringstream os;
    os << "linear:" << beta_start << ":" << beta_end << ":" << steps;
    s.spec_ = os.str();
    return s;
}

NoiseSchedule NoiseSchedule::parse(const std::string& spec) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(item);
    if (parts.size() != 4 || parts[0] != "linear")
        throw std::invalid_argument("schedule spec must look like linear:1e-4:0.02:1000, got '" +
                                    spec + "'");
    try {
        double b0 = std::stod(parts[1]);
        double b1 = std::stod(parts[2]);
        int steps = std::stoi(parts[3]);
        return linear(steps, b0, b1);
    } catch (const std::invalid_argument&) {
        throw std::invalid_argument("unparseable schedule spec '" + spec + "'");
    }
}

std::string NoiseSchedule::spec() const { return spec_; }

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > steps()) throw std::invalid_argument("step t out of range 1..T");
    return betas_[std::size_t(t) - 1];
}

double NoiseSchedule::alpha(int t) const { return 1.0 - beta(t); }

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > steps()) throw std::invalid_argument("step t out of range 0..T");
    return alpha_bars_[std::size_t(t)];
}

void LatentState::validate() const {
    if (dims.d == 0 || dims.h == 0 || dims.w == 0)
        throw std::invalid_argument("latent dims must be positive");
    if (values.size() != std::size_t(channels) * dims.voxels())
        throw std::invalid_argument("latent buffer length != C*D*H*W");
    for (double v : values)
        if (!std::isfinite(v)) throw std::invalid_argument("latent contains non-finite values");
}

void ConditionFeature::validate() const {
    if (values.size() != std::size_t(channels) * dims.voxels())
        throw std::invalid_argument("condition buffer length != C*D*H*W");
    for (float v : values)
        if (!std::isfinite(v)) throw std::invalid_argument("condition contains non-finite values");
}

namespace {

void check_condition_shape(const LatentState& z, const ConditionFeature* c) {
    if (!c) return;
    if (!(c->dims == z.dims) || c->channels == 0)
        throw std::invalid_argument("condition dims disagree with latent dims");
}

}  // namespace

std::vector<double> forward_noise_field(uint64_t seed, int t, std::size_t n) {
    return rng::normal_field(seed, rng::substream(kStreamForward, uint64_t(t)), n);
}

uint64_t dm_loss_item_seed(uint64_t seed, std::size_t item) {
    return rng::mix(seed, kStreamLossEps, item);
}

LatentState forward_diffuse(const LatentState& z0, int t, const NoiseSchedule& sched,
                            uint64_t seed) {
    if (t < 1 || t > sched.steps()) throw std::invalid_argument("step t out of range 1..T");
    const double abar = sched.alpha_bar(t);
    const double keep = std::sqrt(abar);
    const double noise = std::sqrt(1.0 - abar);
    const std::vector<double> eps = forward_noise_field(seed, t, z0.values.size());
    LatentState out = z0;
    out.step = t;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = keep * z0.values[i] + noise * eps[i];
    return out;
}

LatentState reverse_step(const LatentState& zt, int t, const ConditionFeature* c,
                         const Denoiser& den, const NoiseSchedule& sched, uint64_t seed) {
    if (t < 1 || t > sched.steps()) throw std::invalid_argument("step t out of range 1..T");
    check_condition_shape(zt, c);
    const double beta = sched.beta(t);
    const double alpha = sched.alpha(t);
    const double abar = sched.alpha_bar(t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    const double eps_scale = beta / std::sqrt(1.0 - abar);
    const double sigma = t > 1 ? std::sqrt(beta) : 0.0;

    std::vector<double> eps_hat = den.predict_eps(zt, t, c);
    if (eps_hat.size() != zt.values.size())
        throw std::invalid_argument("denoiser output shape disagrees with latent");

    const uint64_t stream = rng::substream(kStreamReverse, uint64_t(t));
    LatentState out = zt;
    out.step = t - 1;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        double mu = inv_sqrt_alpha * (zt.values[i] - eps_scale * eps_hat[i]);
        if (sigma > 0.0) mu += sigma * rng::normal(seed, stream, i);
        out.values[i] = mu;
    }
    return out;
}

SampleResult sample(const LatentState& shape_like, const ConditionFeature* c, const Denoiser& den,
                    const LatentCodec& codec, const NoiseSchedule& sched, uint64_t seed,
                    const std::vector<int>& trace_steps) {
    const int T = sched.steps();
    for (int s : trace_steps)
        if (s < 0 || s >= T)
            throw std::invalid_argument("trace steps must lie in 0..T-1");
    check_condition_shape(shape_like, c);

    LatentState z = shape_like;
    z.step = T;
    for (std::size_t i = 0; i < z.values.size(); ++i)
        z.values[i] = rng::normal(seed, kStreamInit, i);

    std::vector<char> want(std::size_t(T), 0);
    for (int s : trace_steps) want[std::size_t(s)] = 1;

    SkipTrace trace;
    for (int t = T; t >= 1; --t) {
        z = reverse_step(z, t, c, den, sched, seed);
        if (want[std::size_t(z.step)]) {
            trace.steps.push_back(z.step);
            trace.volumes.push_back(codec.decode(z));
        }
    }
    std::reverse(trace.steps.begin(), trace.steps.end());
    std::reverse(trace.volumes.begin(), trace.volumes.end());
    return SampleResult{std::move(z), std::move(trace)};
}

double dm_loss(const std::vector<LatentState>& z0_batch, const Denoiser& den,
               const NoiseSchedule& sched, const std::vector<const ConditionFeature*>& conds,
               uint64_t seed) {
    if (z0_batch.empty()) throw std::invalid_argument("dm_loss: empty batch");
    if (!conds.empty() && conds.size() != z0_batch.size())
        throw std::invalid_argument("dm_loss: condition batch size disagrees");

    double acc = 0.0;
    std::size_t total = 0;
    for (std::size_t item = 0; item < z0_batch.size(); ++item) {
        const LatentState& z0 = z0_batch[item];
        const ConditionFeature* c = conds.empty() ? nullptr : conds[item];
        const int t = 1 + int(rng::uniform_index(seed, kStreamLossT, item, uint64_t(sched.steps())));
        const uint64_t item_seed = dm_loss_item_seed(seed, item);

        const std::vector<double> eps = forward_noise_field(item_seed, t, z0.values.size());
        LatentState zt = forward_diffuse(z0, t, sched, item_seed);
        std::vector<double> eps_hat = den.predict_eps(zt, t, c);
        if (eps_hat.size() != z0.values.size())
            throw std::invalid_argument("denoiser output shape disagrees with latent");
        for (std::size_t i = 0; i < z0.values.size(); ++i) {
            double resid = eps[i] - eps_hat[i];
            acc += resid * resid;
        }
        total += z0.values.size();
    }
    return acc / double(total);
}

namespace {

class AnalyticGaussDenoiser final : public Denoiser {
public:
    AnalyticGaussDenoiser(double mu, double sigma, NoiseSchedule sched)
        : mu_(mu), sigma2_(sigma * sigma), sched_(std::move(sched)) {}

    std::vector<double> predict_eps(const LatentState& z, int t,
                                    const ConditionFeature*) const override {
        const double abar = sched_.alpha_bar(t);
        const double shrink = abar * sigma2_ + (1.0 - abar);  // posterior denominator
        const double sqrt_abar = std::sqrt(abar);
        const double denom = std::max(std::sqrt(1.0 - abar), 1e-12);
        std::vector<double> out(z.values.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            double zv = z.values[i];
            double z0_hat = (sqrt_abar * sigma2_ * zv + (1.0 - abar) * mu_) / shrink;
            out[i] = (zv - sqrt_abar * z0_hat) / denom;
        }
        return out;
    }

private:
    double mu_;
    double sigma2_;
    NoiseSchedule sched_;
};

}  // namespace

std::shared_ptr<Denoiser> analytic_gauss_denoiser(double mu, double sigma, NoiseSchedule sched) {
    if (!(sigma > 0.0)) throw std::invalid_argument("analytic denoiser needs sigma > 0");
    return std::make_shared<AnalyticGaussDenoiser>(mu, sigma, std::move(sched));
}

LinearDenoiser::LinearDenoiser(int total_steps) {
    if (total_steps < 1) throw std::invalid_argument("linear denoiser needs T >= 1");
    bias.assign(std::size_t(total_steps), 0.0);
}

std::vector<double> LinearDenoiser::predict_eps(const LatentState& z, int t,
                                                const ConditionFeature* c) const {
    if (t < 1 || t > int(bias.size()))
        throw std::invalid_argument("step t out of range for linear denoiser");
    const double bt = bias[std::size_t(t) - 1];
    const std::size_t n = z.dims.voxels();
    std::vector<double> out(z.values.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double pred = a * z.values[i] + bt;
        if (c) {
            uint32_t ch = uint32_t(i / n);
            std::size_t pos = i % n;
            pred += b * double(c->values[std::size_t(ch % c->channels) * n + pos]);
        }
        out[i] = pred;
    }
    return out;
}

nlohmann::json LinearDenoiser::to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["type"] = "linear_denoiser";
    j["a"] = a;
    j["b"] = b;
    j["bias"] = bias;
    return j;
}

LinearDenoiser LinearDenoiser::from_json(const nlohmann::json& j) {
    if (j.at("type").get<std::string>() != "linear_denoiser")
        throw std::invalid_argument("not a linear_denoiser parameter block");
    std::vector<double> bias = j.at("bias").get<std::vector<double>>();
    LinearDenoiser d(int(bias.size()));
    d.a = j.at("a").get<double>();
    d.b = j.at("b").get<double>();
    d.bias = std::move(bias);
    return d;
}

LinearDenoiserTraining train_linear_denoiser(const std::vector<DiffusionTrainItem>& dataset,
                                             const NoiseSchedule& sched, int steps, double lr,
                                             uint64_t seed) {
    if (dataset.empty()) throw std::invalid_argument("train_linear_denoiser: empty dataset");
    for (const auto& item : dataset) {
        item.z0.validate();
        if (item.cond) {
            item.cond->validate();
            if (!(item.cond->dims == item.z0.dims))
                throw std::invalid_argument("condition dims disagree with latent dims");
        }
    }

    auto model = std::make_shared<LinearDenoiser>(sched.steps());
    std::vector<LatentState> z0s;
    std::vector<const ConditionFeature*> conds;
    for (const auto& item : dataset) {
        z0s.push_back(item.z0);
        conds.push_back(item.cond ? &*item.cond : nullptr);
    }
    const uint64_t eval_seed = rng::splitmix64(seed ^ kEvalSeedSalt);

    LinearDenoiserTraining result;
    result.model = model;
    result.history.push_back(dm_loss(z0s, *model, sched, conds, eval_seed));

    const int T = sched.steps();
    for (int step = 1; step <= steps; ++step) {
        const std::size_t pick =
            rng::uniform_index(seed, kStreamTrainPick, uint64_t(step), dataset.size());
        const int t = 1 + int(rng::uniform_index(seed, kStreamTrainT, uint64_t(step), uint64_t(T)));
        const uint64_t noise_seed = rng::mix(seed, kStreamTrainEps, uint64_t(step));

        const DiffusionTrainItem& item = dataset[pick];
        const ConditionFeature* c = item.cond ? &*item.cond : nullptr;
        const double abar = sched.alpha_bar(t);
        const double keep = std::sqrt(abar);
        const double spread = std::sqrt(1.0 - abar);
        const std::size_t count = item.z0.values.size();
        const std::size_t n = item.z0.dims.voxels();
        const std::vector<double> eps_field = forward_noise_field(noise_seed, t, count);

        double grad_a = 0.0, grad_b = 0.0, grad_bias = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            double eps = eps_field[i];
            double zt = keep * item.z0.values[i] + spread * eps;
            double cv = 0.0;
            if (c) {
                uint32_t ch = uint32_t(i / n);
                cv = double(c->values[std::size_t(ch % c->channels) * n + i % n]);
            }
            double resid = model->a * zt + model->b * cv + model->bias[std::size_t(t) - 1] - eps;
            grad_a += 2.0 * resid * zt;
            grad_b += 2.0 * resid * cv;
            grad_bias += 2.0 * resid;
        }
        model->a -= lr * grad_a / double(count);
        model->b -= lr * grad_b / double(count);
        model->bias[std::size_t(t) - 1] -= lr * grad_bias / double(count);

        double loss = dm_loss(z0s, *model, sched, conds, eval_seed);
        if (!std::isfinite(loss))
            throw TrainingDiverged("linear denoiser training produced a non-finite loss",
                                   std::size_t(step));
        result.history.push_back(loss);
    }
    return result;
}

namespace {

class IdentityCodec final : public LatentCodec {
public:
    LatentState encode(const Volume& v) const override {
        LatentState z;
        z.step = 0;
        z.channels = v.channels();
        z.source_channels = v.channels();
        z.dims = v.dims();
        z.spacing = v.spacing();
        z.range_lo = v.range_lo();
        z.range_hi = v.range_hi();
        z.values.assign(v.values().begin(), v.values().end());
        return z;
    }

    Volume decode(const LatentState& z) const override {
        std::vector<float> values(z.values.size());
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = float(z.values[i]);
        return Volume(z.dims, z.channels, std::move(values), z.spacing, z.range_lo, z.range_hi);
    }

    uint32_t factor() const override { return 1; }
    uint32_t latent_channels() const override { return 0; }  // matches the input
};

class PoolCodec final : public LatentCodec {
public:
    static constexpr uint32_t kLatentChannels = 4;

    explicit PoolCodec(uint32_t factor) : factor_(factor) {
        if (factor < 1) throw std::invalid_argument("pool codec factor must be >= 1");
    }

    LatentState encode(const Volume& v) const override {
        const Dims& d = v.dims();
        if (d.d % factor_ || d.h % factor_ || d.w % factor_)
            throw std::invalid_argument("pool codec: dims must be divisible by the factor");
        if (v.channels() > kLatentChannels)
            throw std::invalid_argument("pool codec supports at most 4 source channels");
        Dims ld{d.d / factor_, d.h / factor_, d.w / factor_};

        LatentState z;
        z.step = 0;
        z.channels = kLatentChannels;
        z.source_channels = v.channels();
        z.dims = ld;
        z.spacing = Spacing{v.spacing().sx * factor_, v.spacing().sy * factor_,
                            v.spacing().sz * factor_};
        z.range_lo = v.range_lo();
        z.range_hi = v.range_hi();
        z.values.assign(std::size_t(kLatentChannels) * ld.voxels(), 0.0f);

        const double inv = 1.0 / (double(factor_) * factor_ * factor_);
        for (uint32_t lc = 0; lc < kLatentChannels; ++lc) {
            uint32_t sc = lc % v.channels();
            for (uint32_t zz = 0; zz < ld.d; ++zz)
                for (uint32_t yy = 0; yy < ld.h; ++yy)
                    for (uint32_t xx = 0; xx < ld.w; ++xx) {
                        double acc = 0.0;
                        for (uint32_t oz = 0; oz < factor_; ++oz)
                            for (uint32_t oy = 0; oy < factor_; ++oy)
                                for (uint32_t ox = 0; ox < factor_; ++ox)
                                    acc += v.at(sc, zz * factor_ + oz, yy * factor_ + oy,
                                                xx * factor_ + ox);
                        z.values[grid_index(ld, lc, zz, yy, xx)] = acc * inv;
                    }
        }
        return z;
    }

    Volume decode(const LatentState& z) const override {
        const uint32_t sc_count = z.source_channels;
        if (sc_count == 0 || sc_count > kLatentChannels)
            throw std::invalid_argument("pool codec: bad source channel count in latent");
        // Average the channel replicas back down, then upsample. The lowres
        // grid lives at latent resolution, so it keeps the latent spacing;
        // resample() rescales it back to the source spacing.
        Volume lowres(z.dims, sc_count, z.spacing, z.range_lo, z.range_hi);
        std::vector<uint32_t> replicas(sc_count, 0);
        for (uint32_t lc = 0; lc < z.channels; ++lc) ++replicas[lc % sc_count];
        const std::size_t n = z.dims.voxels();
        for (uint32_t lc = 0; lc < z.channels; ++lc) {
            uint32_t sc = lc % sc_count;
            for (std::size_t i = 0; i < n; ++i)
                lowres.values()[std::size_t(sc) * n + i] +=
                    float(z.values[std::size_t(lc) * n + i] / double(replicas[sc]));
        }
        Dims target{z.dims.d * factor_, z.dims.h * factor_, z.dims.w * factor_};
        return resample(lowres, target, ResampleMode::Trilinear);
    }

    uint32_t factor() const override { return factor_; }
    uint32_t latent_channels() const override { return kLatentChannels; }

private:
    uint32_t factor_;
};

}  // namespace

std::shared_ptr<LatentCodec> identity_codec() { return std::make_shared<IdentityCodec>(); }

std::shared_ptr<LatentCodec> pool_codec(uint32_t factor) {
    return std::make_shared<PoolCodec>(factor);
}

}  // namespace structvol
