#include "doctest.h"

#include <cmath>

#include "pointdisc/data.hpp"
#include "pointdisc/encoder.hpp"

using namespace pointdisc;

namespace {

// Small architecture so gradchecks stay quick.
EncoderSpec tiny_spec() {
    EncoderSpec s;
    s.input_points = 64;
    s.layers[0] = {"l1", 16, 0.35, 8, {8, 16}, false};
    s.layers[1] = {"l2", 8, 0.6, 8, {16, 24}, false};
    s.layers[2] = {"l3", 4, 0.9, 4, {24, 32}, false};
    s.layers[3] = {"global", 1, 0.0, 0, {32, 32}, true};
    s.adapt_dim = 16;
    return s;
}

PointCloud synth(std::uint64_t seed, std::size_t n = 64) {
    return gen_synthetic(ShapeClass::torus, n, seed);
}

PointCloud permuted(const PointCloud& c, Rng& rng) {
    PointCloud out = c;
    for (std::size_t i = c.size() - 1; i > 0; --i)
        std::swap(out.points[i], out.points[rng.index(i + 1)]);
    return out;
}

}  // namespace

TEST_CASE("desk default spec validates and has the documented shape contract") {
    const EncoderSpec spec = EncoderSpec::desk_default();
    spec.validate();
    Encoder enc(spec, 1);
    const PointCloud cloud = gen_synthetic(ShapeClass::sphere, 512, 3);
    const EncodeOut out = enc.encode(cloud);
    CHECK(out.layers[0].features.rows() == 128);
    CHECK(out.layers[0].features.cols() == 64);
    CHECK(out.layers[1].features.rows() == 32);
    CHECK(out.layers[1].features.cols() == 128);
    CHECK(out.layers[2].features.rows() == 8);
    CHECK(out.layers[2].features.cols() == 256);
    CHECK(out.layers[3].features.rows() == 1);
    CHECK(out.layers[3].features.cols() == 256);
    CHECK(out.layers[0].receptive_radius == 0.25);
    CHECK(out.layers[3].receptive_radius == doctest::Approx(2.0 * std::sqrt(3.0)));
}

TEST_CASE("encode is deterministic in eval mode") {
    Encoder enc(tiny_spec(), 5);
    const PointCloud cloud = synth(17);
    const EncodeOut a = enc.encode(cloud);
    const EncodeOut b = enc.encode(cloud);
    for (std::size_t l = 0; l < kLayerCount; ++l)
        CHECK((a.layers[l].features - b.layers[l].features).isZero(0.0));
}

TEST_CASE("global feature is invariant to input permutation bit for bit") {
    Encoder enc(tiny_spec(), 5);
    const PointCloud cloud = synth(23);
    const EncodeOut base = enc.encode(cloud);
    Rng rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        const PointCloud p = permuted(cloud, rng);
        const EncodeOut out = enc.encode(p);
        CHECK((out.layers[3].features - base.layers[3].features).isZero(0.0));
    }
}

TEST_CASE("per-layer centroids are input points and member counts hold") {
    Encoder enc(tiny_spec(), 7);
    const PointCloud cloud = synth(31);
    const EncodeOut out = enc.encode(cloud);
    // l1 centroids are a subset of input points
    for (const auto& c : out.layers[0].centroids) {
        bool found = false;
        for (const auto& p : cloud.points)
            if ((p - c).norm() == 0.0) found = true;
        CHECK(found);
    }
}

TEST_CASE("duplicate points group identically") {
    Encoder enc(tiny_spec(), 9);
    PointCloud cloud = synth(37);
    cloud.points[10] = cloud.points[11];  // exact duplicate
    const EncodeOut out = enc.encode(cloud);
    CHECK(out.layers[0].features.allFinite());
}

TEST_CASE("set_abstraction rejects too few source points") {
    EncoderSpec s = tiny_spec();
    Encoder enc(s, 3);
    PointCloud tiny;
    for (int i = 0; i < 8; ++i) tiny.points.emplace_back(0.1 * i, 0, 0);
    CHECK_THROWS_AS(enc.encode(tiny), InvalidInputError);
}

TEST_CASE("adapt produces unit rows of width D") {
    Encoder enc(tiny_spec(), 11);
    const PointCloud cloud = synth(41);
    EncodeTape tape;
    enc.encode_batch({cloud}, Mode::eval, false, &tape);
    const auto z = enc.adapt_all(tape.out, Mode::eval, false, nullptr);
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        CHECK(z[l].cols() == 16);
        for (Eigen::Index r = 0; r < z[l].rows(); ++r) {
            const double n = z[l].row(r).norm();
            if (n > 0.0) CHECK(n == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("extract-style features are permutation invariant after adaptation") {
    Encoder enc(tiny_spec(), 13);
    const PointCloud cloud = synth(43);
    EncodeTape t1, t2;
    Rng rng(7);
    const PointCloud perm = permuted(cloud, rng);
    enc.encode_batch({cloud}, Mode::eval, false, &t1);
    enc.encode_batch({perm}, Mode::eval, false, &t2);
    const auto z1 = enc.adapt_all(t1.out, Mode::eval, false, nullptr);
    const auto z2 = enc.adapt_all(t2.out, Mode::eval, false, nullptr);
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        const RowMat m1 = z1[l].colwise().maxCoeff();
        const RowMat m2 = z2[l].colwise().maxCoeff();
        CHECK((m1 - m2).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("every l2/l3 centroid keeps at least one input point in its receptive radius") {
    Encoder enc(tiny_spec(), 15);
    for (std::uint64_t seed : {61, 62, 63}) {
        const PointCloud cloud = gen_synthetic(static_cast<ShapeClass>(seed % 4), 64, seed);
        const EncodeOut out = enc.encode(cloud);
        for (std::size_t l = 1; l <= 2; ++l) {
            for (const auto& c : out.layers[l].centroids) {
                bool covered = false;
                for (const auto& p : cloud.points)
                    if ((p - c).norm() <= out.layers[l].receptive_radius) covered = true;
                CHECK(covered);
            }
        }
    }
}

TEST_CASE("doubling layer widths changes only shapes") {
    EncoderSpec wide = tiny_spec();
    for (auto& layer : wide.layers)
        for (auto& w : layer.mlp) w *= 2;
    wide.adapt_dim *= 2;
    Encoder enc(wide, 17);
    const PointCloud cloud = synth(71);
    EncodeTape tape;
    enc.encode_batch({cloud}, Mode::eval, false, &tape);
    const auto z = enc.adapt_all(tape.out, Mode::eval, false, nullptr);
    CHECK(tape.out.layers[0].features.cols() == 32);
    CHECK(tape.out.layers[3].features.cols() == 64);
    for (std::size_t l = 0; l < kLayerCount; ++l) CHECK(z[l].cols() == 32);
}

TEST_CASE("adaptation MLP end-to-end gradcheck at 1e-5") {
    Rng rng(2);
    AdaptMlp mlp(6, 8);
    Rng init(3);
    mlp.init_params(init);
    RowMat x(5, 6);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    RowMat target(5, 8);
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = rng.normal();

    auto loss = [&] {
        return 0.5 * (mlp.forward(x, Mode::train, false, nullptr) - target).squaredNorm();
    };

    AdaptTape tape;
    const RowMat z = mlp.forward(x, Mode::train, false, &tape);
    mlp.visit_params([](const std::string&, Param& p) { p.zero_grad(); }, "adapt");
    const RowMat dx = mlp.backward(tape, z - target);

    std::vector<GradCheckEntry> entries;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        entries.push_back({x.data() + i, dx(i / 6, i % 6), "x"});
    Rng pick(4);
    mlp.visit_params(
        [&](const std::string& name, Param& p) { sample_grad_entries(p, name, 6, pick, entries); },
        "adapt");
    const auto report = grad_check(loss, entries, 1e-5);
    CAPTURE(report.worst_label);
    CAPTURE(report.max_rel_err);
    CHECK(report.pass);
}

TEST_CASE("encoder end-to-end gradcheck through encode and adapt") {
    Encoder enc(tiny_spec(), 21);
    const std::vector<PointCloud> clouds{synth(51), synth(52)};

    // scalar objective: sum of all adapted features against fixed random targets
    Rng rng(6);
    std::array<RowMat, kLayerCount> targets;
    {
        EncodeTape tape;
        enc.encode_batch(clouds, Mode::train, false, &tape);
        const auto z = enc.adapt_all(tape.out, Mode::train, false, nullptr);
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            targets[l] = RowMat(z[l].rows(), z[l].cols());
            for (Eigen::Index i = 0; i < targets[l].size(); ++i)
                targets[l].data()[i] = rng.normal();
        }
    }

    auto loss = [&] {
        EncodeTape tape;
        enc.encode_batch(clouds, Mode::train, false, &tape);
        const auto z = enc.adapt_all(tape.out, Mode::train, false, nullptr);
        double total = 0.0;
        for (std::size_t l = 0; l < kLayerCount; ++l)
            total += 0.5 * (z[l] - targets[l]).squaredNorm();
        return total;
    };

    EncodeTape tape;
    AdaptAllTape atape;
    enc.encode_batch(clouds, Mode::train, false, &tape);
    const auto z = enc.adapt_all(tape.out, Mode::train, false, &atape);
    enc.zero_grad();
    std::array<RowMat, kLayerCount> dz;
    for (std::size_t l = 0; l < kLayerCount; ++l) dz[l] = z[l] - targets[l];
    auto dfeat = enc.adapt_backward(atape, dz);
    enc.encode_backward(tape, std::move(dfeat));

    std::vector<GradCheckEntry> entries;
    Rng pick(8);
    enc.visit_params(
        [&](const std::string& name, Param& p) { sample_grad_entries(p, name, 3, pick, entries); });
    const auto report = grad_check(loss, entries, 1e-4);
    CAPTURE(report.worst_label);
    CAPTURE(report.max_rel_err);
    CHECK(report.pass);
}
