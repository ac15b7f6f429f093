#include "psk/losses.hpp"
#include "psk/meshes.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace psk;
using psk::test::default_intrinsics;

namespace {

ImageBuffer smooth_image(std::mt19937_64& rng, int w, int h, int c = 3)
{
    // sum of a few random sinusoids plus mild noise: structured, in [0, 1]
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageBuffer img(w, h, c);
    for (int ch = 0; ch < c; ++ch) {
        const double fx = 0.05 + 0.3 * u(rng), fy = 0.05 + 0.3 * u(rng), ph = 6.28 * u(rng);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                img.at(x, y, ch) = std::clamp(0.5 + 0.3 * std::sin(fx * x + fy * y + ph) + 0.1 * (u(rng) - 0.5), 0.0, 1.0);
    }
    return img;
}

ImageBuffer add_noise(ImageBuffer img, std::mt19937_64& rng, double sigma)
{
    std::normal_distribution<double> n(0.0, sigma);
    for (auto& v : img.data) v += n(rng);
    return img;
}

/// Central-difference check of an image gradient on a sample of entries.
/// Returns the worst relative error (floor keeps tiny entries honest).
double check_image_grad(const std::function<double(const ImageBuffer&)>& fn, const ImageBuffer& at, const ImageBuffer& grad,
                        std::mt19937_64& rng, int samples, double eps = 1e-6, double floor = 1e-4)
{
    std::uniform_int_distribution<std::size_t> pick(0, at.data.size() - 1);
    double worst = 0;
    for (int s = 0; s < samples; ++s) {
        const std::size_t i = pick(rng);
        auto p = at, m = at;
        p.data[i] += eps;
        m.data[i] -= eps;
        const double fd = (fn(p) - fn(m)) / (2 * eps);
        worst = std::max(worst, std::abs(fd - grad.data[i]) / std::max({std::abs(fd), std::abs(grad.data[i]), floor}));
    }
    return worst;
}

} // namespace

// ---- MS-SSIM ----------------------------------------------------------------

TEST(MsSsim, IdenticalImagesGiveOne)
{
    std::mt19937_64 rng(1);
    const auto a = smooth_image(rng, 64, 48);
    EXPECT_NEAR(ms_ssim(a, a), 1.0, 1e-9);
}

TEST(MsSsim, InvertedCheckerboardNearMinimum)
{
    ImageBuffer a(64, 64, 3), b(64, 64, 3);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            for (int c = 0; c < 3; ++c) {
                a.at(x, y, c) = ((x / 4 + y / 4) % 2) ? 1.0 : 0.0;
                b.at(x, y, c) = 1.0 - a.at(x, y, c);
            }
    EXPECT_LT(ms_ssim(a, b), 0.2);
}

TEST(MsSsim, ConstantImagesMatchClosedForm)
{
    const double c1 = 0.3, c2 = 0.7;
    const ImageBuffer a(40, 40, 1, c1), b(40, 40, 1, c2);
    const double expected = (2 * c1 * c2 + kSsimC1) * kSsimC2 / ((c1 * c1 + c2 * c2 + kSsimC1) * kSsimC2);
    EXPECT_NEAR(ssim(a, b), expected, 1e-12);
}

TEST(MsSsim, ScaleCountFollowsImageSize)
{
    EXPECT_EQ(ms_ssim_scales(32, 32), 3);
    EXPECT_EQ(ms_ssim_scales(64, 64), 4);
    EXPECT_EQ(ms_ssim_scales(128, 128), 5);
    EXPECT_EQ(ms_ssim_scales(512, 300), 5);
}

TEST(MsSsim, RejectsSmallAndMismatched)
{
    try {
        ms_ssim(ImageBuffer(31, 64, 3), ImageBuffer(31, 64, 3));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::TooSmall);
    }
    try {
        ms_ssim(ImageBuffer(32, 32, 3), ImageBuffer(32, 33, 3));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
}

TEST(MsSsim, InUnitRangeAndSymmetric)
{
    std::mt19937_64 rng(2);
    for (int t = 0; t < 10; ++t) {
        const auto a = smooth_image(rng, 48, 48), b = smooth_image(rng, 48, 48);
        const double v = ms_ssim(a, b);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        EXPECT_EQ(v, ms_ssim(b, a));
    }
}

TEST(MsSsim, GradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(3);
    for (int t = 0; t < 10; ++t) {
        const auto a = smooth_image(rng, 40, 36);
        const auto b = add_noise(a, rng, 0.1);
        const auto r = ms_ssim_with_grad(a, b);
        EXPECT_LT(check_image_grad([&](const ImageBuffer& x) { return ms_ssim(x, b); }, a, r.grad_a, rng, 40), 1e-3);
        EXPECT_LT(check_image_grad([&](const ImageBuffer& y) { return ms_ssim(a, y); }, b, r.grad_b, rng, 40), 1e-3);
    }
}

TEST(MsSsim, MaskedPixelsAreIgnored)
{
    std::mt19937_64 rng(4);
    const auto a = smooth_image(rng, 48, 48);
    const auto b = add_noise(a, rng, 0.05);
    ImageBuffer mask(48, 48, 1, 1.0);
    for (int y = 10; y < 30; ++y)
        for (int x = 5; x < 25; ++x) mask.at(x, y) = 0.0;
    const auto r = ms_ssim_with_grad(a, b, &mask);
    auto a2 = a;
    for (int y = 10; y < 30; ++y)
        for (int x = 5; x < 25; ++x) {
            for (int c = 0; c < 3; ++c) {
                EXPECT_EQ(r.grad_a.at(x, y, c), 0.0);
                a2.at(x, y, c) = 0.123;
            }
        }
    EXPECT_EQ(ms_ssim(a2, b, &mask), r.value);
    EXPECT_LT(check_image_grad([&](const ImageBuffer& x) { return ms_ssim(x, b, &mask); }, a, r.grad_a, rng, 60), 1e-3);
}

// ---- silhouette masking and occlusion -----------------------------------------

TEST(SilhouetteMask, Examples)
{
    std::mt19937_64 rng(5);
    const auto img = smooth_image(rng, 16, 16);
    EXPECT_EQ(silhouette_mask(img, ImageBuffer(16, 16, 1, 1.0)).data, img.data);
    for (double v : silhouette_mask(img, ImageBuffer(16, 16, 1, 0.0)).data) EXPECT_EQ(v, 0.0);
    const auto half = silhouette_mask(img, ImageBuffer(16, 16, 1, 0.5));
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_EQ(half.data[i], 0.5 * img.data[i]);
    EXPECT_THROW(silhouette_mask(img, ImageBuffer(15, 16, 1)), Error);
}

TEST(Occlusion, ZeroPatchesIsIdentity)
{
    std::mt19937_64 rng(6);
    const auto img = smooth_image(rng, 32, 32);
    const ImageBuffer sil(32, 32, 1, 0.8);
    OcclusionSettings s;
    s.min_patches = s.max_patches = 0;
    const auto o = occlusion_augment(img, sil, rng, s);
    EXPECT_EQ(o.image.data, img.data);
    EXPECT_EQ(o.sil.data, sil.data);
}

TEST(Occlusion, FullImagePatchClearsSilhouette)
{
    std::mt19937_64 rng(7);
    OcclusionSettings s;
    s.min_patches = s.max_patches = 1;
    s.min_side = s.max_side = 1.0;
    const auto o = occlusion_augment(ImageBuffer(32, 32, 3, 0.2), ImageBuffer(32, 32, 1, 1.0), rng, s);
    for (double v : o.sil.data) EXPECT_EQ(v, 0.0);
    for (double v : o.image.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Occlusion, DeterministicAndWithinBounds)
{
    const ImageBuffer img(64, 64, 3, 0.3), sil(64, 64, 1, 1.0);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 r1(seed), r2(seed);
        const auto a = occlusion_augment(img, sil, r1), b = occlusion_augment(img, sil, r2);
        EXPECT_EQ(a.image.data, b.image.data);
        EXPECT_EQ(a.sil.data, b.sil.data);
        EXPECT_GE(a.patches.size(), 1u);
        EXPECT_LE(a.patches.size(), 3u);
        for (const auto& p : a.patches) {
            EXPECT_GE(p.w, 6);  // 10% of 64, rounded
            EXPECT_LE(p.w, 26);
            EXPECT_LE(p.x0 + p.w, 64);
            EXPECT_LE(p.y0 + p.h, 64);
        }
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                bool inside = false;
                for (const auto& p : a.patches) inside = inside || p.contains(x, y);
                EXPECT_EQ(a.sil.at(x, y), inside ? 0.0 : 1.0);
            }
    }
}

// ---- pose consistency -------------------------------------------------------------

namespace {

struct PoseFixture {
    TriangleMesh mesh = make_textured_box();
    Intrinsics k = default_intrinsics(64, 100);
};

} // namespace

TEST(PoseConsistency, IdenticalRepresentationsGiveZero)
{
    PoseFixture f;
    const Pose y = Pose::from_rotation_vector(Vec3(0.2, 0.3, 0.1), Vec3(0, 0, 0.5));
    const auto h = pi_map(y, f.mesh, f.k, RepresentationKind::Sparse);
    const auto r = pose_consistency_loss(h, h, f.mesh, f.k);
    EXPECT_EQ(r.value, 0.0);
    for (const auto& c : r.grad_h2.corners) EXPECT_TRUE(c.isZero(0.0));
}

TEST(PoseConsistency, PureTranslationGivesItsNorm)
{
    PoseFixture f;
    const Pose y = Pose::from_rotation_vector(Vec3(0.2, 0.3, 0.1), Vec3(0, 0, 0.5));
    const Vec3 d(0.01, -0.02, 0.03);
    const Pose y2{y.rotation, y.translation + d};
    for (auto kind : {RepresentationKind::Sparse, RepresentationKind::Dense}) {
        const auto r = pose_consistency_loss(pi_map(y, f.mesh, f.k, kind), pi_map(y2, f.mesh, f.k, kind), f.mesh, f.k);
        EXPECT_NEAR(r.value, d.norm(), 1e-9) << to_string(kind);
    }
    // closed form on the poses alone
    EXPECT_NEAR(mean_vertex_distance(y, y2, model_points(f.mesh)).value, d.norm(), 1e-12);
}

TEST(PoseConsistency, InvariantToVertexOrder)
{
    std::mt19937_64 rng(8);
    PoseFixture f;
    auto pts = model_points(f.mesh);
    const Pose a = psk::test::random_pose(rng), b = psk::test::random_pose(rng);
    const double v1 = mean_vertex_distance(a, b, pts).value;
    std::shuffle(pts.begin(), pts.end(), rng);
    EXPECT_NEAR(mean_vertex_distance(a, b, pts).value, v1, 1e-12);
}

TEST(PoseConsistency, ModelPointsAreDistinct)
{
    const auto mesh = make_cube();
    EXPECT_EQ(model_points(mesh).size(), 8u);
}

TEST(PoseConsistency, VertexDistanceGradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(9);
    PoseFixture f;
    const auto pts = model_points(f.mesh);
    for (int t = 0; t < 20; ++t) {
        const Pose a = psk::test::random_pose(rng, 0.2), b = psk::test::random_pose(rng, 0.2);
        const auto r = mean_vertex_distance(a, b, pts);
        const Vec6 fa = psk::test::fd_pose_gradient([&](const Pose& p) { return mean_vertex_distance(p, b, pts).value; }, a, 1e-6);
        const Vec6 fb = psk::test::fd_pose_gradient([&](const Pose& p) { return mean_vertex_distance(a, p, pts).value; }, b, 1e-6);
        EXPECT_LT(psk::test::rel_err_vec(r.grad_a, fa), 1e-6);
        EXPECT_LT(psk::test::rel_err_vec(r.grad_b, fb), 1e-6);
    }
}

TEST(PoseConsistency, SparseGradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(10);
    PoseFixture f;
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < 20; ++t) {
        const Pose y2 = psk::test::random_frontal_pose(rng, deg2rad(40), 0.45, 0.6, 0.02);
        const Pose y3 = psk::test::random_frontal_pose(rng, deg2rad(40), 0.45, 0.6, 0.02);
        auto h2 = pi_map(y2, f.mesh, f.k, RepresentationKind::Sparse);
        for (auto& c : h2.corners) c += 0.5 * Vec2(n(rng), n(rng));
        const auto h3 = pi_map(y3, f.mesh, f.k, RepresentationKind::Sparse);
        const auto r = pose_consistency_loss(h2, h3, f.mesh, f.k);
        const double eps = 1e-4;
        for (int i = 0; i < 8; ++i)
            for (int c = 0; c < 2; ++c) {
                auto hp = h2, hm = h2;
                hp.corners[i][c] += eps;
                hm.corners[i][c] -= eps;
                const double fd = (pose_consistency_loss(hp, h3, f.mesh, f.k).value -
                                   pose_consistency_loss(hm, h3, f.mesh, f.k).value) / (2 * eps);
                EXPECT_LT(std::abs(fd - r.grad_h2.corners[i][c]) / std::max({std::abs(fd), 1e-6}), 1e-3)
                    << "trial " << t << " corner " << i;
            }
    }
}

TEST(PoseConsistency, DenseGradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(11);
    PoseFixture f;
    const Pose y2 = Pose::from_rotation_vector(Vec3(0.4, -0.3, 0.1), Vec3(0.005, 0, 0.5));
    const Pose y3 = Pose::from_rotation_vector(Vec3(0.35, -0.25, 0.05), Vec3(0, 0.01, 0.52));
    auto h2 = pi_map(y2, f.mesh, f.k, RepresentationKind::Dense);
    const auto h3 = pi_map(y3, f.mesh, f.k, RepresentationKind::Dense);
    for (std::size_t i = 0; i < h2.mask.data.size(); ++i)
        if (h2.mask.data[i] > 0) h2.mask.data[i] = 0.7 + 0.2 * std::sin(0.3 * i);
    const auto r = pose_consistency_loss(h2, h3, f.mesh, f.k);
    const auto corr = to_correspondences_indexed(h2, f.mesh);
    const double eps = 1e-6;
    for (std::size_t j = 0; j < corr.pixel.size(); j += 41) {
        const std::size_t i = corr.pixel[j];
        for (int c = 0; c < 4; ++c) {
            auto hp = h2, hm = h2;
            (c < 3 ? hp.coords.data[3 * i + c] : hp.mask.data[i]) += eps;
            (c < 3 ? hm.coords.data[3 * i + c] : hm.mask.data[i]) -= eps;
            const double fd =
                (pose_consistency_loss(hp, h3, f.mesh, f.k).value - pose_consistency_loss(hm, h3, f.mesh, f.k).value) / (2 * eps);
            const double an = c < 3 ? r.grad_h2.coords.data[3 * i + c] : r.grad_h2.mask.data[i];
            EXPECT_LT(std::abs(fd - an) / std::max(std::abs(fd), 1e-6), 1e-3) << "pixel " << i << " channel " << c;
        }
    }
}

// ---- supervised Huber ---------------------------------------------------------------

TEST(Supervised, IdenticalGivesZero)
{
    PoseFixture f;
    const Pose y = Pose::from_rotation_vector(Vec3(0.1, 0.2, 0), Vec3(0, 0, 0.5));
    for (auto kind : {RepresentationKind::Sparse, RepresentationKind::Dense}) {
        const auto h = pi_map(y, f.mesh, f.k, kind);
        EXPECT_EQ(supervised_loss(h, h, default_huber_delta(kind)).value, 0.0);
    }
}

TEST(Supervised, HuberBranches)
{
    const double delta = 0.8;
    auto gt = Representation::sparse(Points2(8, Vec2::Zero()));
    auto quad = gt, lin = gt;
    for (auto& c : quad.corners) c = Vec2::Constant(delta / 2);
    for (auto& c : lin.corners) c = Vec2::Constant(2 * delta);
    EXPECT_NEAR(supervised_loss(quad, gt, delta).value, 0.5 * (delta / 2) * (delta / 2), 1e-15);
    EXPECT_NEAR(supervised_loss(lin, gt, delta).value, delta * (2 * delta - delta / 2), 1e-15);
}

TEST(Supervised, HuberIsC1AtDelta)
{
    const double delta = 0.3, e = 1e-12;
    EXPECT_NEAR(huber(delta - e, delta), huber(delta + e, delta), 1e-9);
    EXPECT_NEAR(huber_grad(delta - e, delta), huber_grad(delta + e, delta), 1e-9);
    EXPECT_NEAR(huber_grad(-delta - e, delta), huber_grad(-delta + e, delta), 1e-9);
}

TEST(Supervised, KindMismatchThrows)
{
    const auto s = Representation::sparse(Points2(8, Vec2::Zero()));
    const auto d = Representation::dense(ImageBuffer(8, 8, 3), ImageBuffer(8, 8, 1));
    try {
        supervised_loss(s, d, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::KindMismatch);
    }
}

TEST(Supervised, DenseIgnoresBackgroundCoordinatesAndUsesL1Mask)
{
    ImageBuffer gc(4, 4, 3), gm(4, 4, 1);
    gm.at(1, 1) = 1.0;
    gc.at(1, 1, 0) = 0.5;
    auto gt = Representation::dense(gc, gm);
    auto pred = gt;
    pred.coords.at(3, 3, 2) = 0.9;  // background coordinate: ignored
    EXPECT_EQ(supervised_loss(pred, gt, 0.05).value, 0.0);
    pred.mask.at(0, 0) = 0.4;  // L1 on the mask, averaged over 16 pixels
    EXPECT_NEAR(supervised_loss(pred, gt, 0.05).value, 0.4 / 16, 1e-15);
}

TEST(Supervised, GradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(12);
    PoseFixture f;
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto kind : {RepresentationKind::Sparse, RepresentationKind::Dense}) {
        const auto gt = pi_map(Pose::from_rotation_vector(Vec3(0.2, 0.1, 0), Vec3(0, 0, 0.5)), f.mesh, f.k, kind);
        auto pred = gt;
        auto flat = pred.flatten();
        for (auto& v : flat) v += (kind == RepresentationKind::Sparse ? 2.0 : 0.06) * n(rng);
        pred.assign_flat(flat);
        const double delta = default_huber_delta(kind);
        const auto r = supervised_loss(pred, gt, delta);
        const auto g = r.grad.flatten();
        std::uniform_int_distribution<std::size_t> pick(0, flat.size() - 1);
        for (int s = 0; s < 40; ++s) {
            const std::size_t i = pick(rng);
            auto fp = flat, fm = flat;
            fp[i] += 1e-7;
            fm[i] -= 1e-7;
            auto hp = pred, hm = pred;
            hp.assign_flat(fp);
            hm.assign_flat(fm);
            const double fd = (supervised_loss(hp, gt, delta).value - supervised_loss(hm, gt, delta).value) / 2e-7;
            EXPECT_NEAR(fd, g[i], 1e-3 * std::max(std::abs(fd), 1e-4));
        }
    }
}

// ---- perceptual proxy --------------------------------------------------------------------

TEST(PerceptualProxy, ZeroOnIdenticalAndSymmetric)
{
    std::mt19937_64 rng(13);
    const auto a = smooth_image(rng, 64, 64);
    const auto b = add_noise(a, rng, 0.05);
    EXPECT_NEAR(perceptual_proxy(a, a).value, 0.0, 1e-12);
    EXPECT_NEAR(perceptual_proxy(a, b).value, perceptual_proxy(b, a).value, 1e-12);
    EXPECT_GT(perceptual_proxy(a, b).value, 0.0);
}

TEST(PerceptualProxy, MonotoneInNoise)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const auto a = smooth_image(rng, 64, 64);
        const double big = perceptual_proxy(a, add_noise(a, rng, 0.1), false).value;
        const double small = perceptual_proxy(a, add_noise(a, rng, 0.01), false).value;
        EXPECT_GT(big, small) << "seed " << seed;
    }
}

TEST(PerceptualProxy, GradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(14);
    for (int t = 0; t < 5; ++t) {
        const auto a = smooth_image(rng, 32, 32);
        const auto b = add_noise(a, rng, 0.1);
        const auto r = perceptual_proxy(a, b);
        EXPECT_LT(check_image_grad([&](const ImageBuffer& x) { return perceptual_proxy(x, b, false).value; }, a, r.grad_a, rng, 40),
                  1e-3);
        EXPECT_LT(check_image_grad([&](const ImageBuffer& y) { return perceptual_proxy(a, y, false).value; }, b, r.grad_b, rng, 40),
                  1e-3);
    }
}

// ---- warp loss --------------------------------------------------------------------------------

TEST(WarpLoss, ZeroWhenWarpEqualsMaskedTarget)
{
    std::mt19937_64 rng(15);
    const auto target = smooth_image(rng, 64, 64);
    ImageBuffer sil(64, 64, 1);
    for (int y = 16; y < 48; ++y)
        for (int x = 10; x < 50; ++x) sil.at(x, y) = 1.0;
    const auto warped = silhouette_mask(target, sil);
    EXPECT_NEAR(warp_loss(warped, target, sil).value, 0.0, 1e-9);
    EXPECT_NEAR(warp_loss(warped, target, sil, &sil).value, 0.0, 1e-9);
}

TEST(WarpLoss, StaysInUnitRange)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        const auto a = smooth_image(rng, 48, 48), b = smooth_image(rng, 48, 48);
        ImageBuffer inv = a;
        for (auto& v : inv.data) v = 1 - v;
        const ImageBuffer& inverted = inv;
        const ImageBuffer sil(48, 48, 1, 1.0);
        for (const auto* w : {&b, &inverted}) {
            const double v = warp_loss(*w, a, sil, nullptr, false).value;
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(WarpLoss, GradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(16);
    for (int t = 0; t < 5; ++t) {
        const auto target = smooth_image(rng, 48, 48);
        const auto warped = add_noise(target, rng, 0.08);
        ImageBuffer sil(48, 48, 1, 1.0), validity(48, 48, 1, 1.0);
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 12; ++x) validity.at(x, y) = 0.3;
        const auto r = warp_loss(warped, target, sil, &validity);
        EXPECT_LT(check_image_grad([&](const ImageBuffer& w) { return warp_loss(w, target, sil, &validity, false).value; }, warped,
                                   r.grad_a, rng, 40),
                  1e-3);
    }
}

// ---- total ------------------------------------------------------------------------------------

TEST(TotalLoss, WeightedSumAndLinearity)
{
    LossParts p{0.3, 0.7, 1.1, {1, 2}, {3, 4}, {5, 6}};
    LossWeights w{0, 1, 0};
    auto r = total_loss(p, w);
    EXPECT_EQ(r.l_total, r.l_sup);
    EXPECT_EQ(r.grad_theta, (std::vector<double>{3, 4}));

    w = {0.5, 2.0, 0.25};
    r = total_loss(p, w);
    EXPECT_NEAR(r.l_total, 0.5 * 0.3 + 2.0 * 0.7 + 0.25 * 1.1, 1e-12);
    EXPECT_NEAR(r.grad_theta[0], 0.5 * 1 + 2.0 * 3 + 0.25 * 5, 1e-9);
    const auto r2 = total_loss(p, {1.0, 4.0, 0.5});
    EXPECT_NEAR(r2.l_total, 2 * r.l_total, 1e-12);
}

TEST(TotalLoss, NonFiniteRejected)
{
    LossParts p;
    p.l_pose = std::nan("");
    try {
        total_loss(p, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonFinite);
    }
}

TEST(TotalLoss, WeightsValidated)
{
    EXPECT_THROW((LossWeights{0, 0, 0}.validate()), Error);
    EXPECT_THROW((LossWeights{-1, 1, 0}.validate()), Error);
    EXPECT_NO_THROW(LossWeights{}.validate());
}
