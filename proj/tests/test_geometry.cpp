#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "rfulm/geometry.hpp"

namespace rfulm {
namespace {

AcquisitionParams acq_62mhz() {
    AcquisitionParams acq;
    acq.sample_rate = 62.5e6;
    return acq;
}

// Independent scalar form of the time-of-flight projection.
double tof_samples(double py, double pz, double ex, const PlaneWave& w, const AcquisitionParams& acq) {
    const double tx = std::sqrt((py - w.virtual_source.y) * (py - w.virtual_source.y) +
                                (pz - w.virtual_source.z) * (pz - w.virtual_source.z));
    const double rx = std::sqrt((py - ex) * (py - ex) + pz * pz);
    return (tx + rx - w.travel_offset) * acq.sample_rate / acq.speed_of_sound;
}

TEST(ArrayGeometry, DefaultLinearArray) {
    const auto g = ArrayGeometry::linear();
    EXPECT_EQ(g.size(), 128u);
    EXPECT_NO_THROW(g.validate());
    for (std::size_t k = 1; k < g.size(); ++k) EXPECT_NEAR(g.elements[k].y - g.elements[k - 1].y, 0.1e-3, 1e-12);
    EXPECT_NEAR(g.center().y, 0.0, 1e-15);
}

TEST(AcquisitionParams, WavelengthAndValidation) {
    AcquisitionParams acq;
    EXPECT_NEAR(acq.wavelength(), 1540.0 / 15.6e6, 1e-18);
    acq.speed_of_sound = 0.0;
    EXPECT_THROW(acq.validate(), ArgumentError);
}

TEST(PlaneWave, VirtualSourceOnSteeringLine) {
    const auto g = ArrayGeometry::linear();
    const auto w = PlaneWave::steered(degrees_to_radians(5.0), g);
    const double D = 100.0 * g.aperture();
    EXPECT_NEAR(w.virtual_source.y, -D * std::sin(degrees_to_radians(5.0)), 1e-12);
    EXPECT_NEAR(w.virtual_source.z, -D * std::cos(degrees_to_radians(5.0)), 1e-12);
    EXPECT_NEAR(w.travel_offset, D, 1e-12);
}

TEST(Projection, OnAxisRoundTrip) {
    // Odd element count puts an element exactly at the array center.
    const auto g = ArrayGeometry::linear(127);
    const auto w = PlaneWave::steered(0.0, g);
    const auto acq = acq_62mhz();
    for (double z : {1e-3, 5e-3, 12e-3}) {
        const auto d = project_to_channels({0.0, z}, g, w, acq);
        EXPECT_NEAR(d[63], 2.0 * z * acq.sample_rate / acq.speed_of_sound, 1e-9);
    }
    const auto d = project_to_channels({0.0, 5e-3}, g, w, acq);
    EXPECT_NEAR(d[63], 405.84415584415586, 1e-8);
}

TEST(Projection, MatchesScalarReimplementation) {
    const auto g = ArrayGeometry::linear();
    const auto acq = acq_62mhz();
    for (double deg : {-5.0, 0.0, 5.0}) {
        const auto w = PlaneWave::steered(degrees_to_radians(deg), g);
        const Position p{2.37e-3, 7.1e-3};
        const auto d = project_to_channels(p, g, w, acq);
        ASSERT_EQ(d.size(), 128u);
        for (std::size_t k = 0; k < 128; ++k) {
            const double ex = (double(k) - 63.5) * 0.1e-3;
            EXPECT_NEAR(d[k], tof_samples(p.y, p.z, ex, w, acq), 1e-9);
        }
        // convex around its minimum
        const Tip t = wavefront_tip(d, TipMode::Discrete);
        for (std::size_t k = std::max<std::size_t>(t.element, 5) - 4; k <= std::min<std::size_t>(t.element + 4, 126); ++k) {
            EXPECT_GT(d[k - 1] - 2.0 * d[k] + d[k + 1], 0.0);
        }
    }
}

TEST(Projection, MinimumAtLaterallyNearestElementForZeroDegrees) {
    const auto g = ArrayGeometry::linear();
    const auto w = PlaneWave::steered(0.0, g);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> uy(-6.3e-3, 6.3e-3), uz(1e-3, 15e-3);
    for (int i = 0; i < 200; ++i) {
        const Position p{uy(rng), uz(rng)};
        const auto d = project_to_channels(p, g, w, AcquisitionParams{});
        std::size_t nearest = 0;
        for (std::size_t k = 1; k < g.size(); ++k)
            if (std::abs(g.elements[k].y - p.y) < std::abs(g.elements[nearest].y - p.y)) nearest = k;
        EXPECT_EQ(wavefront_tip(d, TipMode::Discrete).element, nearest);
    }
}

TEST(Projection, ReceiveCurveShiftsWithLateralTranslation) {
    // Shifting by one pitch shifts the receive hyperbola by one element; the
    // transmit path adds the same constant to every element.
    const auto g = ArrayGeometry::linear();
    const auto acq = AcquisitionParams{};
    for (double deg : {-5.0, 0.0, 5.0}) {
        const auto w = PlaneWave::steered(degrees_to_radians(deg), g);
        const Position p{0.83e-3, 6e-3}, q{0.93e-3, 6e-3};
        const auto a = project_to_channels(p, g, w, acq);
        const auto b = project_to_channels(q, g, w, acq);
        const double offset = b[1] - a[0];
        for (std::size_t k = 1; k + 1 < g.size(); ++k) EXPECT_NEAR(b[k + 1] - a[k], offset, 1e-9);
        const double tx = (distance(q, w.virtual_source) - distance(p, w.virtual_source)) * acq.samples_per_meter();
        EXPECT_NEAR(offset, tx, 1e-9);
    }
}

TEST(Projection, Errors) {
    const auto g = ArrayGeometry::linear();
    auto w = PlaneWave::steered(0.0, g);
    EXPECT_THROW(project_to_channels({0.0, 0.0}, g, w, AcquisitionParams{}), ArgumentError);
    w.travel_offset += 1.0;
    EXPECT_THROW(project_to_channels({0.0, 1e-3}, g, w, AcquisitionParams{}), GeometryError);
}

TEST(WavefrontTip, SymmetricApexTieGoesToLowerIndex) {
    const auto g = ArrayGeometry::linear();
    const auto w = PlaneWave::steered(0.0, g);
    const AcquisitionParams acq;
    const auto d = project_to_channels({0.0, 5e-3}, g, w, acq);
    EXPECT_EQ(d[63], d[64]);
    const Tip t = wavefront_tip(d, TipMode::Discrete);
    EXPECT_EQ(t.element, 63u);
    EXPECT_EQ(t.y, 63.0);
    const double ex = 0.05e-3;
    EXPECT_NEAR(t.z, (5e-3 + std::hypot(ex, 5e-3)) * acq.samples_per_meter(), 1e-9);
    // parabolic refinement lands between the tied elements
    EXPECT_NEAR(wavefront_tip(d).y, 63.5, 1e-9);
}

TEST(WavefrontTip, BoundaryApex) {
    const auto g = ArrayGeometry::linear();
    const auto w = PlaneWave::steered(0.0, g);
    const AcquisitionParams acq;
    EXPECT_EQ(channel_tip({-9e-3, 4e-3}, g, w, acq).element, 0u);
    EXPECT_EQ(channel_tip({-9e-3, 4e-3}, g, w, acq).y, 0.0);
    EXPECT_EQ(channel_tip({9e-3, 4e-3}, g, w, acq).element, 127u);
    EXPECT_EQ(channel_tip({9e-3, 4e-3}, g, w, acq).y, 127.0);
    EXPECT_THROW(wavefront_tip({}), ArgumentError);
}

TEST(WavefrontTip, DiscreteMatchesExhaustiveScan) {
    const auto g = ArrayGeometry::linear();
    const AcquisitionParams acq;
    const auto waves = plane_waves({-5.0, 0.0, 5.0}, g);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> uy(-6.35e-3, 6.35e-3), uz(1e-3, 15e-3);
    for (int i = 0; i < 1000; ++i) {
        const Position p{uy(rng), uz(rng)};
        const auto& w = waves[std::size_t(i) % 3];
        const auto d = project_to_channels(p, g, w, acq);
        std::size_t best = 0;
        double zmin = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < d.size(); ++k) {
            if (d[k] < zmin) {
                zmin = d[k];
                best = k;
            }
        }
        const Tip t = wavefront_tip(d, TipMode::Discrete);
        ASSERT_EQ(t.element, best);
        ASSERT_EQ(t.y, double(best));
        ASSERT_EQ(t.z, zmin);
        const Tip r = wavefront_tip(d);
        ASSERT_LE(std::abs(r.y - double(best)), 0.5);
        ASSERT_LE(r.z, zmin + 1e-12);
    }
}

TEST(WavefrontTip, DepthMonotoneInScattererDepth) {
    const auto g = ArrayGeometry::linear();
    const auto w = PlaneWave::steered(degrees_to_radians(5.0), g);
    double prev = -1.0;
    for (double z = 1e-3; z < 15e-3; z += 0.25e-3) {
        const double cur = channel_tip({1.1e-3, z}, g, w, AcquisitionParams{}).z;
        EXPECT_GT(cur, prev);
        prev = cur;
    }
}

TEST(Affine, ExactAffineIsRecovered) {
    const double M[2][2] = {{0.7, -0.2}, {0.15, 1.3}}, t[2] = {1e-3, -2e-3};
    std::vector<std::pair<Tip, Position>> pairs;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-10, 10);
    for (int i = 0; i < 50; ++i) {
        Tip tip;
        tip.y = u(rng);
        tip.z = u(rng);
        pairs.push_back({tip, {M[0][0] * tip.y + M[0][1] * tip.z + t[0], M[1][0] * tip.y + M[1][1] * tip.z + t[1]}});
    }
    const AffineMap A = fit_affine_to(pairs, 2);
    EXPECT_NEAR(A.a[0], 0.7, 1e-9);
    EXPECT_NEAR(A.a[1], -0.2, 1e-9);
    EXPECT_NEAR(A.a[2], 1e-3, 1e-9);
    EXPECT_NEAR(A.a[3], 0.15, 1e-9);
    EXPECT_NEAR(A.a[4], 1.3, 1e-9);
    EXPECT_NEAR(A.a[5], -2e-3, 1e-9);
    EXPECT_EQ(A.wave_index, 2);
    EXPECT_LT(A.mean_residual, 1e-9);
}

TEST(Affine, TooFewPairsIsCalibrationError) {
    EXPECT_THROW(fit_affine_to({}, 0), CalibrationError);
}

TEST(Affine, PerWaveFitBelowQuarterWavelength) {
    const auto g = ArrayGeometry::linear();
    const AcquisitionParams acq;
    const double quarter = acq.wavelength() / 4.0;
    std::vector<AffineMap> maps;
    for (const auto& w : plane_waves({-5.0, 0.0, 5.0}, g)) {
        const AffineMap A = fit_affine(g, w, acq, 1000, 0);
        const double held_out = mean_reprojection_error(A, g, w, acq, 1000, 99);
        EXPECT_LT(held_out, quarter) << "wave " << w.index;
        EXPECT_EQ(A.wave_index, w.index);
        maps.push_back(A);
    }
    EXPECT_NE(maps[0].a, maps[1].a);
    EXPECT_NE(maps[1].a, maps[2].a);
    EXPECT_NE(maps[0].a, maps[2].a);
}

TEST(Affine, DeterministicAndSeedStable) {
    const auto g = ArrayGeometry::linear();
    const AcquisitionParams acq;
    const auto w = PlaneWave::steered(0.0, g);
    const AffineMap a = fit_affine(g, w, acq, 1000, 7);
    const AffineMap b = fit_affine(g, w, acq, 1000, 7);
    EXPECT_EQ(a.a, b.a);
    const AffineMap c = fit_affine(g, w, acq, 1000, 8);
    EXPECT_NEAR(c.mean_residual, a.mean_residual, 0.2 * a.mean_residual);
}

TEST(Affine, RoundTripConsistentWithFitResidual) {
    const auto g = ArrayGeometry::linear();
    const AcquisitionParams acq;
    const auto w = PlaneWave::steered(degrees_to_radians(-5.0), g);
    const AffineMap A = fit_affine(g, w, acq, 1000, 1);
    PointSet ch{Space::Channel, {}};
    std::vector<Position> truth;
    for (const auto& s : draw_calibration_points(g, w, acq, ImagingRegion::for_array(g), 100, 4)) {
        ch.points.push_back({s.tip.y, s.tip.z, 0.5, w.index, 3});
        truth.push_back(s.bmode);
    }
    const PointSet bm = apply_affine(A, ch);
    ASSERT_EQ(bm.space, Space::BMode);
    double err = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        err += std::hypot(bm.points[i].y - truth[i].y, bm.points[i].z - truth[i].z);
        EXPECT_EQ(bm.points[i].confidence, 0.5);
        EXPECT_EQ(bm.points[i].wave_index, w.index);
    }
    EXPECT_LE(err / 100.0, 1.1 * A.mean_residual);
}

TEST(Affine, ApplyIdentityTranslationAndLinearity) {
    PointSet ch{Space::Channel, {{3.0, 4.0}, {0.0, 0.0}}};
    AffineMap I;
    EXPECT_EQ(apply_affine(I, ch).points[0].y, 3.0);
    EXPECT_EQ(apply_affine(I, ch).points[0].z, 4.0);
    AffineMap T;
    T.a[2] = 1.0;
    T.a[5] = 2.0;
    EXPECT_EQ(apply_affine(T, ch).points[1].y, 1.0);
    EXPECT_EQ(apply_affine(T, ch).points[1].z, 2.0);

    AffineMap A;
    A.a = {0.3, -1.1, 2.0, 0.4, 0.9, -0.5};
    const double alpha = 0.3, beta = 0.7;
    const auto [py, pz] = A.map(1.5, -2.0);
    const auto [qy, qz] = A.map(-0.25, 4.0);
    const auto [cy, cz] = A.map(alpha * 1.5 + beta * -0.25, alpha * -2.0 + beta * 4.0);
    EXPECT_NEAR(cy, alpha * py + beta * qy, 1e-12);
    EXPECT_NEAR(cz, alpha * pz + beta * qz, 1e-12);

    EXPECT_THROW(apply_affine(I, PointSet{Space::BMode, {}}), UsageError);
    AffineMap S;
    S.a = {1, 2, 0, 2, 4, 0};
    EXPECT_THROW(S.validate(), GeometryError);
}

TEST(Affine, FileRoundTrip) {
    AffineMap A;
    A.a = {1.25e-4, -3e-7, -6.3e-3, 2e-9, 1.2337e-4, 1.1e-5};
    A.wave_index = 2;
    A.mean_residual = 3.4e-6;
    const auto path = std::filesystem::temp_directory_path() / "rfulm_affine_test.txt";
    save_affine(path, A);
    const AffineMap B = load_affine(path);
    EXPECT_EQ(A.a, B.a);
    EXPECT_EQ(B.wave_index, 2);
    EXPECT_EQ(B.mean_residual, A.mean_residual);
    std::filesystem::remove(path);

    std::istringstream lenient("1 0 0\n0 1 0   \n\n 1\n 0.5");
    EXPECT_EQ(parse_affine(lenient).wave_index, 1);
    std::istringstream truncated("1 0 0 0");
    EXPECT_THROW(parse_affine(truncated), IoError);
}

TEST(SemiGlobalScale, Formula) {
    EXPECT_EQ(estimate_semiglobal_scale(65, 5), 16);
    EXPECT_EQ(estimate_semiglobal_scale(5, 5), 1);
    EXPECT_EQ(estimate_semiglobal_scale(33, 5), 8);
    EXPECT_THROW(estimate_semiglobal_scale(65, 1), ArgumentError);
    EXPECT_THROW(estimate_semiglobal_scale(3, 5), ArgumentError);
}

TEST(WavefrontWidth, TriangleDeltaAndFlat) {
    std::vector<double> tri(41, 0.0);
    for (int i = 0; i < 41; ++i) tri[std::size_t(i)] = std::max(0.0, 1.0 - std::abs(i - 20) / 10.0);
    EXPECT_EQ(measure_wavefront_width(tri), 11);
    std::vector<double> delta(9, 0.0);
    delta[4] = 2.0;
    EXPECT_EQ(measure_wavefront_width(delta), 1);
    EXPECT_THROW(measure_wavefront_width(std::vector<double>(8, 0.5)), MeasurementError);
    EXPECT_THROW(measure_wavefront_width({}), MeasurementError);
}

}  // namespace
}  // namespace rfulm
