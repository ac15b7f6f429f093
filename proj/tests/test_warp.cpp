#include "psk/losses.hpp"
#include "psk/meshes.hpp"
#include "psk/renderer.hpp"
#include "psk/warp.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace psk;
using psk::test::default_intrinsics;
using psk::test::random_frontal_pose;

namespace {

/// Rotation of `angle` about a random axis applied on the object side,
/// keeping the object near the optical axis.
Pose nearby_pose(const Pose& p, double angle, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 axis(n(rng), n(rng), n(rng));
    axis.normalize();
    std::uniform_real_distribution<double> u(-0.01, 0.01);
    return {(so3_exp(axis * angle) * p.rotation).normalized(), p.translation + Vec3(u(rng), u(rng), u(rng))};
}

struct Agreement {
    int visible = 0;
    int agree = 0;
    double fraction() const { return visible ? static_cast<double>(agree) / visible : 0.0; }
};

/// Pixels covered in the target render and validly warped ("mutually
/// visible"); agreement = max channel difference within tol.
Agreement compare_views(const WarpOutput& w, const RenderOutput& direct, double tol)
{
    Agreement a;
    for (std::size_t i = 0; i < w.validity.data.size(); ++i) {
        if (w.validity.data[i] < 0.5 || direct.depth.data[i] <= 0) continue;
        ++a.visible;
        double worst = 0;
        for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(w.warped.data[3 * i + c] - direct.color.data[3 * i + c]));
        a.agree += worst <= tol ? 1 : 0;
    }
    return a;
}

} // namespace

TEST(RelativeTransform, Examples)
{
    std::mt19937_64 rng(1);
    const Pose p = psk::test::random_pose(rng);
    const Pose id = relative_transform(p, p);
    EXPECT_LT(rotation_angle(id, Pose{}), 1e-9);
    EXPECT_LT(id.translation.norm(), 1e-9);
    const Pose q = psk::test::random_pose(rng);
    const Pose t = relative_transform(Pose{}, q);
    EXPECT_LT(rotation_angle(t, q), 1e-12);
    EXPECT_LT(translation_distance(t, q), 1e-12);
}

TEST(RelativeTransform, MapsSourceCameraPointsToTarget)
{
    std::mt19937_64 rng(2);
    const auto mesh = make_textured_box();
    for (int trial = 0; trial < 100; ++trial) {
        const Pose s = psk::test::random_pose(rng), t = psk::test::random_pose(rng);
        const auto via = transform_points(relative_transform(s, t), transform_points(s, mesh.vertices));
        const auto direct = transform_points(t, mesh.vertices);
        for (std::size_t i = 0; i < via.size(); ++i) ASSERT_LT((via[i] - direct[i]).norm(), 1e-9);
    }
}

TEST(RelativeTransform, VjpMatchesFiniteDifferences)
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Pose s = psk::test::random_pose(rng), t = psk::test::random_pose(rng);
        Vec6 cot;
        for (auto& v : cot) v = n(rng);
        const Pose base = relative_transform(s, t);
        auto f_s = [&](const Pose& ps) { return cot.dot(psk::test::pose_difference(base, relative_transform(ps, t))); };
        auto f_t = [&](const Pose& pt) { return cot.dot(psk::test::pose_difference(base, relative_transform(s, pt))); };
        const auto g = relative_transform_vjp(s, t, cot);
        EXPECT_LT(psk::test::rel_err_vec(g.source, psk::test::fd5_pose_gradient(f_s, s, 1e-4)), 1e-6);
        EXPECT_LT(psk::test::rel_err_vec(g.target, psk::test::fd5_pose_gradient(f_t, t, 1e-4)), 1e-6);
    }
}

TEST(ViewPair, GapEnforced)
{
    const Pose a{};
    const Pose b = Pose::from_rotation_vector(Vec3(0, deg2rad(59), 0), Vec3::Zero());
    const Pose c = Pose::from_rotation_vector(Vec3(0, deg2rad(61), 0), Vec3::Zero());
    const auto pair = make_view_pair(0, 1, {}, {}, a, b);
    EXPECT_NEAR(pair.angular_gap, 59.0, 1e-9);
    EXPECT_THROW(make_view_pair(0, 1, {}, {}, a, c), Error);
}

TEST(Backproject, Examples)
{
    const auto k = default_intrinsics(64, 100);
    ImageBuffer depth(64, 64, 1);
    depth.at(32, 32) = 2.0;
    depth.at(10, 50) = 1.5;
    const auto bp = backproject(depth, k);
    ASSERT_EQ(bp.points.size(), 2u);  // depth-0 pixels produce nothing
    EXPECT_LT((bp.points[0] - Vec3(0.0, 0.0, 2.0)).norm(), 1e-15);
    EXPECT_EQ(bp.pixel[1], 50u * 64 + 10);
}

TEST(Backproject, ReprojectsToPixelCenters)
{
    const auto mesh = make_textured_box();
    const auto k = default_intrinsics();
    const auto depth = render_depth(Pose::from_rotation_vector(Vec3(0.3, 0.4, 0), Vec3(0, 0, 0.5)), mesh, k);
    const auto bp = backproject(depth, k);
    ASSERT_GT(bp.points.size(), 100u);
    const auto px = project(Pose{}, bp.points, k);
    for (std::size_t i = 0; i < px.size(); ++i) {
        const Vec2 expect(static_cast<double>(bp.pixel[i] % k.width), static_cast<double>(bp.pixel[i] / k.width));
        ASSERT_LT((px[i] - expect).norm(), 1e-6);
    }
}

TEST(Warp, IdentityReproducesForeground)
{
    const auto mesh = make_textured_box();
    const auto k = default_intrinsics();
    const auto r = render(Pose::from_rotation_vector(Vec3(0.3, -0.2, 0.1), Vec3(0, 0, 0.5)), mesh, k);
    const auto w = warp_source_to_target(r.color, r.depth, Pose{}, k);
    for (std::size_t i = 0; i < w.validity.data.size(); ++i) {
        const bool fg = r.depth.data[i] > 0;
        EXPECT_NEAR(w.validity.data[i], fg ? 1.0 : 0.0, 1e-6);
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(w.warped.data[3 * i + c], fg ? r.color.data[3 * i + c] : 0.0, 1e-6);
    }
}

TEST(Warp, EmptyDepthGivesEmptyOutput)
{
    const auto k = default_intrinsics(32, 50);
    const auto w = warp_source_to_target(ImageBuffer(32, 32, 3, 0.7), ImageBuffer(32, 32, 1), Pose{}, k);
    for (double v : w.warped.data) EXPECT_EQ(v, 0.0);
    for (double v : w.validity.data) EXPECT_EQ(v, 0.0);
}

TEST(Warp, ShapeChecked)
{
    const auto k = default_intrinsics(32, 50);
    EXPECT_THROW(warp_source_to_target(ImageBuffer(32, 32, 3), ImageBuffer(31, 32, 1), Pose{}, k), Error);
    EXPECT_THROW(warp_source_to_target(ImageBuffer(16, 16, 3), ImageBuffer(16, 16, 1), Pose{}, k), Error);
}

TEST(Warp, ValidityBoundedAndZeroWithoutSourceDepth)
{
    std::mt19937_64 rng(4);
    const auto mesh = make_textured_box();
    const auto k = default_intrinsics();
    for (int trial = 0; trial < 10; ++trial) {
        const Pose ps = random_frontal_pose(rng, deg2rad(60), 0.45, 0.6, 0.02);
        const Pose pt = nearby_pose(ps, deg2rad(20), rng);
        const auto r = render(ps, mesh, k);
        const auto w = warp_source_to_target(r.color, r.depth, relative_transform(ps, pt), k);
        for (double v : w.validity.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
    // with no source depth nothing can be valid anywhere
    const auto w = warp_source_to_target(ImageBuffer(k.width, k.height, 3, 1.0), ImageBuffer(k.width, k.height, 1),
                                         Pose::from_rotation_vector(Vec3(0.1, 0, 0), Vec3(0.01, 0, 0)), k);
    for (double v : w.validity.data) EXPECT_EQ(v, 0.0);
}

TEST(Warp, AgreesWithDirectRender)
{
    std::mt19937_64 rng(5);
    const auto mesh = make_textured_box();
    const auto k = default_intrinsics();
    std::uniform_real_distribution<double> gap(0.0, deg2rad(30));
    double worst = 1.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Pose ps = random_frontal_pose(rng, deg2rad(60), 0.45, 0.6, 0.02);
        const Pose pt = nearby_pose(ps, gap(rng), rng);
        const auto rs = render(ps, mesh, k), rt = render(pt, mesh, k);
        const auto w = warp_source_to_target(rs.color, rs.depth, relative_transform(ps, pt), k);
        const auto a = compare_views(w, rt, 0.05);
        ASSERT_GT(a.visible, 200) << "trial " << trial;
        worst = std::min(worst, a.fraction());
    }
    EXPECT_GE(worst, 0.9);
}

TEST(Warp, CompositionMatchesDirectWarp)
{
    // warping s->t in one go and s->m->t via an intermediate transform
    // T = T2 o T1 gives the same pose, so identical splats.
    std::mt19937_64 rng(6);
    const auto mesh = make_textured_box();
    const auto k = default_intrinsics();
    const Pose ps = random_frontal_pose(rng, deg2rad(30), 0.45, 0.6, 0.02);
    const Pose pm = nearby_pose(ps, deg2rad(10), rng);
    const Pose pt = nearby_pose(pm, deg2rad(10), rng);
    const auto rs = render(ps, mesh, k), rt = render(pt, mesh, k);
    const Pose t = compose(relative_transform(pm, pt), relative_transform(ps, pm));
    const auto w1 = warp_source_to_target(rs.color, rs.depth, t, k);
    const auto w2 = warp_source_to_target(rs.color, rs.depth, relative_transform(ps, pt), k);
    EXPECT_GE(compare_views(w1, rt, 0.05).fraction(), 0.9);
    EXPECT_NEAR(compare_views(w1, rt, 0.05).fraction(), compare_views(w2, rt, 0.05).fraction(), 0.01);
}

namespace {

/// Warp loss as a function of T for a fixed rendered pair.
struct WarpLossProblem {
    ImageBuffer src, depth, target, sil;
    Intrinsics k;

    double value(const Pose& t) const
    {
        const auto w = warp_source_to_target(src, depth, t, k);
        return warp_loss(w.warped, target, sil, &w.validity, false).value;
    }
    Vec6 grad(const Pose& t) const
    {
        const auto w = warp_source_to_target(src, depth, t, k);
        const auto l = warp_loss(w.warped, target, sil, &w.validity);
        return warp_vjp(src, depth, t, k, l.grad_a);
    }
};

} // namespace

TEST(Warp, LossGradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(7);
    const auto mesh = make_textured_box();
    const auto k = default_intrinsics();
    std::vector<double> errs;
    for (int trial = 0; trial < 20; ++trial) {
        const Pose ps = random_frontal_pose(rng, deg2rad(60), 0.45, 0.6, 0.02);
        const Pose pt = nearby_pose(ps, deg2rad(15), rng);
        const auto rs = render(ps, mesh, k), rt = render(pt, mesh, k);
        WarpLossProblem prob{rs.color, rs.depth, rt.color, rt.silhouette, k};
        // evaluate slightly off the true relative pose so the loss is not at its minimum
        const Pose t = retract(relative_transform(ps, pt), (Vec6() << 0.01, -0.02, 0.01, 0.003, 0.002, -0.004).finished());
        const Vec6 an = prob.grad(t);
        const Vec6 fd = psk::test::fd_pose_gradient_piecewise([&](const Pose& p) { return prob.value(p); }, t);
        errs.push_back(psk::test::rel_err_vec(an, fd));
    }
    std::sort(errs.begin(), errs.end());
    errs.resize(errs.size() - errs.size() / 10);  // drop the top decile
    double mean = 0;
    for (double e : errs) mean += e / static_cast<double>(errs.size());
    EXPECT_LT(mean, 1e-2);
}
