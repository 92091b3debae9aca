#include <doctest.h>

#include <cmath>

#include "structvol/cal.hpp"
#include "structvol/metrics.hpp"
#include "structvol/phantom.hpp"
#include "support.hpp"

using namespace structvol;

namespace {

// Test stub: emits a fixed per-voxel probability table, independent of the
// image, so loss values can be evaluated by hand.
class FixedProbSegmenter final : public Segmenter {
public:
    FixedProbSegmenter(uint32_t num_classes, std::vector<float> probs)
        : k_(num_classes), probs_(std::move(probs)) {}

    uint32_t num_classes() const override { return k_; }
    std::vector<float> predict(const Volume&) const override { return probs_; }
    std::span<double> parameters() override { return {}; }
    std::span<const double> parameters() const override { return {}; }
    double loss_grad(const Volume&, const LabelVolume&, const ConfidenceMap*,
                     std::span<double>) const override {
        throw std::logic_error("stub has no gradients");
    }
    std::unique_ptr<Segmenter> clone() const override {
        return std::make_unique<FixedProbSegmenter>(k_, probs_);
    }
    nlohmann::json to_json() const override { return {}; }

private:
    uint32_t k_;
    std::vector<float> probs_;
};

std::vector<float> one_hot_of(const LabelVolume& labels, uint32_t k) {
    std::vector<float> probs(labels.dims().voxels() * k, 0.0f);
    for (std::size_t v = 0; v < labels.dims().voxels(); ++v)
        probs[v * k + labels.labels()[v]] = 1.0f;
    return probs;
}

SyntheticEntry full_confidence_entry(Dims dims, uint64_t seed) {
    Volume image = testsup::random_volume(dims, 1, seed, 0.0f, 1.0f);
    LabelVolume mask = testsup::random_labels(dims, 3, seed + 1);
    return entry_with_full_confidence(std::move(image), std::move(mask));
}

double foreground_dice(const Segmenter& seg, const DataPair& test) {
    LabelVolume pred = predict_labels(seg, test.image, test.mask);
    return dice(extract_class(pred, 1), extract_class(test.mask, 1));
}

}  // namespace

TEST_SUITE_BEGIN("cal");

TEST_CASE("perfect one-hot predictions give zero loss") {
    SyntheticEntry entry = full_confidence_entry(Dims{4, 4, 4}, 10);
    FixedProbSegmenter perfect(3, one_hot_of(entry.mask, 3));
    CHECK(loss_ori(perfect, entry) <= 1e-6);
}

TEST_CASE("uniform two-class predictions cost ln 2 per voxel") {
    Dims dims{4, 4, 4};
    Volume image = testsup::random_volume(dims, 1, 3, 0.0f, 1.0f);
    LabelVolume mask = testsup::random_labels(dims, 2, 4);
    SyntheticEntry entry = entry_with_full_confidence(image, mask);
    auto seg = make_reference_segmenter(2, 1, 0);
    std::fill(seg->parameters().begin(), seg->parameters().end(), 0.0);
    CHECK(loss_ori(*seg, entry) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("loss_ori equals the brute-force per-voxel oracle") {
    SyntheticEntry entry = full_confidence_entry(Dims{4, 4, 4}, 20);
    auto seg = make_reference_segmenter(3, 1, 21);
    for (auto& w : seg->parameters()) w += 0.3;

    // Independent accumulation from predict() output.
    std::vector<float> probs = seg->predict(entry.image);
    double acc = 0.0;
    const std::size_t n = entry.mask.dims().voxels();
    for (std::size_t v = 0; v < n; ++v)
        acc += -std::log(std::max(double(probs[v * 3 + entry.mask.labels()[v]]), 1e-12));
    CHECK(loss_ori(*seg, entry) == doctest::Approx(acc / double(n)).epsilon(1e-12));
}

TEST_CASE("full confidence makes the two losses identical") {
    SyntheticEntry entry = full_confidence_entry(Dims{5, 4, 3}, 30);
    auto seg = make_reference_segmenter(3, 1, 31);
    CHECK(loss_cal(*seg, entry) == loss_ori(*seg, entry));
}

TEST_CASE("zero confidence suppresses the loss entirely") {
    SyntheticEntry entry = full_confidence_entry(Dims{4, 4, 4}, 40);
    std::fill(entry.cmap.v.begin(), entry.cmap.v.end(), 0.0f);
    auto seg = make_reference_segmenter(3, 1, 41);
    CHECK(loss_cal(*seg, entry) == 0.0);
}

TEST_CASE("two-voxel weighted mean matches the hand value") {
    // Losses (1.0, 3.0), confidence (1, 0) -> mean = 0.5.
    Dims dims{1, 1, 2};
    Volume image(dims, 1, {0.0f, 0.0f}, {}, 0.0f, 1.0f);
    LabelVolume mask(dims, {0, 0}, {}, 2);
    ConfidenceMap cmap(dims, 1.0f);
    cmap.v[1] = 0.0f;
    SyntheticEntry entry = attach_confidence(mask, image, cmap);

    float p0 = float(std::exp(-1.0)), p1 = float(std::exp(-3.0));
    FixedProbSegmenter seg(2, {p0, 1.0f - p0, p1, 1.0f - p1});
    CHECK(loss_cal(seg, entry) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("loss_cal is monotone in single-voxel confidence") {
    SyntheticEntry entry = full_confidence_entry(Dims{3, 3, 3}, 50);
    auto seg = make_reference_segmenter(3, 1, 51);
    for (auto& w : seg->parameters()) w += 0.2;
    for (float& c : entry.cmap.v) c = 0.5f;
    double before = loss_cal(*seg, entry);
    entry.cmap.v[13] = 0.9f;  // that voxel's loss is > 0, so raising c raises the mean
    CHECK(loss_cal(*seg, entry) >= before);
}

TEST_CASE("loss_cal is sandwiched by zero and loss_ori") {
    SyntheticEntry entry = full_confidence_entry(Dims{4, 4, 4}, 60);
    for (std::size_t i = 0; i < entry.cmap.v.size(); ++i)
        entry.cmap.v[i] = float(rng::uniform01(61, 1, i));
    auto seg = make_reference_segmenter(3, 1, 62);
    double cal = loss_cal(*seg, entry);
    CHECK(cal >= 0.0);
    CHECK(cal <= loss_ori(*seg, entry));
}

TEST_CASE("zero weights predict the uniform distribution") {
    auto seg = make_reference_segmenter(4, 1, 0);
    std::fill(seg->parameters().begin(), seg->parameters().end(), 0.0);
    Volume image = testsup::random_volume(Dims{3, 3, 3}, 1, 5);
    std::vector<float> probs = seg->predict(image);
    for (float p : probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("probabilities sum to one per voxel") {
    auto seg = make_reference_segmenter(5, 1, 70);
    for (auto& w : seg->parameters()) w += 1.5;
    Volume image = testsup::random_volume(Dims{4, 4, 4}, 1, 71);
    std::vector<float> probs = seg->predict(image);
    for (std::size_t v = 0; v < image.dims().voxels(); ++v) {
        double sum = 0.0;
        for (uint32_t k = 0; k < 5; ++k) sum += probs[v * 5 + k];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("training separates a clean two-intensity phantom") {
    TwoClassPhantomOptions opt;
    opt.dims = Dims{10, 10, 10};
    opt.fg_intensity = 1.0;
    opt.bg_intensity = 0.0;
    std::vector<SyntheticEntry> corpus;
    for (uint64_t s = 0; s < 3; ++s) {
        opt.seed = s;
        opt.center_jitter = 1.0;
        DataPair pair = make_two_class_phantom(opt);
        corpus.push_back(entry_with_full_confidence(pair.image, pair.mask));
    }
    auto seg = make_reference_segmenter(2, 1, 7);
    TrainOptions topt{60, 2.0, 4, 17};
    std::vector<double> history = train(*seg, corpus, topt, false);
    CHECK(history.front() > history.back());

    opt.seed = 99;
    DataPair test = make_two_class_phantom(opt);
    CHECK(foreground_dice(*seg, test) >= 0.99);
}

TEST_CASE("analytic gradients match central finite differences") {
    SyntheticEntry entry = full_confidence_entry(Dims{4, 4, 4}, 80);
    for (std::size_t i = 0; i < entry.cmap.v.size(); ++i)
        entry.cmap.v[i] = float(0.25 + 0.75 * rng::uniform01(81, 2, i));
    auto seg = make_reference_segmenter(3, 1, 82);
    for (std::size_t i = 0; i < seg->parameters().size(); ++i)
        seg->parameters()[i] = rng::uniform_range(83, 3, i, -0.5, 0.5);

    std::vector<double> grad(seg->parameters().size(), 0.0);
    seg->loss_grad(entry.image, entry.mask, &entry.cmap, grad);

    const double h = 1e-5;
    for (uint64_t probe = 0; probe < 10; ++probe) {
        std::size_t p = rng::uniform_index(84, 4, probe, grad.size());
        double saved = seg->parameters()[p];
        seg->parameters()[p] = saved + h;
        double up = seg->loss_grad(entry.image, entry.mask, &entry.cmap, {});
        seg->parameters()[p] = saved - h;
        double down = seg->loss_grad(entry.image, entry.mask, &entry.cmap, {});
        seg->parameters()[p] = saved;
        double fd = (up - down) / (2.0 * h);
        CHECK(std::abs(fd - grad[p]) <=
              1e-4 * std::max({1.0, std::abs(fd), std::abs(grad[p])}));
    }
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    std::vector<SyntheticEntry> corpus{full_confidence_entry(Dims{3, 3, 3}, 90)};
    auto seg = make_reference_segmenter(3, 1, 91);
    std::vector<double> before(seg->parameters().begin(), seg->parameters().end());
    train(*seg, corpus, TrainOptions{5, 0.0, 2, 92}, true);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(seg->parameters()[i] == before[i]);
}

TEST_CASE("training is deterministic per seed and flag") {
    std::vector<SyntheticEntry> corpus;
    for (uint64_t s = 0; s < 3; ++s) corpus.push_back(full_confidence_entry(Dims{3, 3, 3}, s));
    auto a = make_reference_segmenter(3, 1, 5);
    auto b = make_reference_segmenter(3, 1, 5);
    TrainOptions opt{4, 0.3, 2, 44};
    std::vector<double> ha = train(*a, corpus, opt, true);
    std::vector<double> hb = train(*b, corpus, opt, true);
    CHECK(ha == hb);
    for (std::size_t i = 0; i < a->parameters().size(); ++i)
        CHECK(a->parameters()[i] == b->parameters()[i]);
}

TEST_CASE("confidence weighting rescues training from corrupted voxels") {
    // Corruption benchmark: swapped intensities on 30% of voxels, truthful
    // labels, zero confidence at the corrupted sites. The unweighted run
    // learns to ignore the foreground intensity; the weighted run does not.
    TwoClassPhantomOptions opt;
    opt.dims = Dims{12, 12, 12};
    opt.radius_scale = 0.3;
    std::vector<SyntheticEntry> corpus;
    for (uint64_t s = 0; s < 3; ++s) {
        opt.seed = 200 + s;
        opt.center_jitter = 1.0;
        DataPair clean = make_two_class_phantom(opt);
        corpus.push_back(corrupt_phantom(clean, 0.3, opt.fg_intensity, opt.bg_intensity, s));
    }
    opt.seed = 300;
    opt.center_jitter = 0.0;
    DataPair test = make_two_class_phantom(opt);

    TrainOptions topt{80, 2.0, 4, 7};
    auto plain = make_reference_segmenter(2, 0, 11);
    auto weighted = make_reference_segmenter(2, 0, 11);
    train(*plain, corpus, topt, false);
    train(*weighted, corpus, topt, true);

    double plain_dice = foreground_dice(*plain, test);
    double cal_dice = foreground_dice(*weighted, test);
    CHECK(cal_dice >= plain_dice + 0.05);
    CHECK(cal_dice >= 0.95);
}

TEST_CASE("pretrain-only equals a direct training run") {
    std::vector<SyntheticEntry> synthetic;
    for (uint64_t s = 0; s < 3; ++s) synthetic.push_back(full_confidence_entry(Dims{3, 3, 3}, s));
    std::vector<SyntheticEntry> real{full_confidence_entry(Dims{3, 3, 3}, 9)};

    TrainConfig cfg;
    cfg.epochs_pretrain = 4;
    cfg.epochs_finetune = 0;
    cfg.learning_rate = 0.3;
    cfg.batch_size = 2;
    cfg.seed = 13;
    cfg.use_cal = true;

    auto through_harness = make_reference_segmenter(3, 1, 2);
    auto direct = make_reference_segmenter(3, 1, 2);
    PretrainFinetuneResult res = pretrain_finetune(*through_harness, synthetic, real, cfg);
    CHECK(res.finetune_history.empty());
    train(*direct, synthetic, TrainOptions{4, 0.3, 2, 13}, true);
    for (std::size_t i = 0; i < direct->parameters().size(); ++i)
        CHECK(through_harness->parameters()[i] == direct->parameters()[i]);
}

TEST_CASE("finetune-only equals a direct run with the derived seed") {
    std::vector<SyntheticEntry> synthetic{full_confidence_entry(Dims{3, 3, 3}, 1)};
    std::vector<SyntheticEntry> real;
    for (uint64_t s = 0; s < 2; ++s) real.push_back(full_confidence_entry(Dims{3, 3, 3}, 20 + s));

    TrainConfig cfg;
    cfg.epochs_pretrain = 0;
    cfg.epochs_finetune = 3;
    cfg.learning_rate = 0.2;
    cfg.batch_size = 1;
    cfg.seed = 31;

    auto through_harness = make_reference_segmenter(3, 1, 4);
    auto direct = make_reference_segmenter(3, 1, 4);
    PretrainFinetuneResult res = pretrain_finetune(*through_harness, synthetic, real, cfg);
    CHECK(res.pretrain_history.empty());
    train(*direct, real, TrainOptions{3, 0.2, 1, cfg.finetune_seed()}, false);
    for (std::size_t i = 0; i < direct->parameters().size(); ++i)
        CHECK(through_harness->parameters()[i] == direct->parameters()[i]);
}

TEST_CASE("segmenter parameters survive a JSON round trip") {
    auto seg = make_reference_segmenter(3, 2, 123);
    for (auto& w : seg->parameters()) w += 0.7;
    auto back = segmenter_from_json(seg->to_json());
    CHECK(back->num_classes() == 3);
    for (std::size_t i = 0; i < seg->parameters().size(); ++i)
        CHECK(back->parameters()[i] == seg->parameters()[i]);
}

TEST_SUITE_END();
