#pragma once

#include "psk/geometry.hpp"

#include <Eigen/Dense>

#include <numeric>
#include <optional>
#include <random>

namespace psk {

struct Correspondences {
    Points3 points3d;
    Points2 points2d;
    std::vector<double> weights;

    std::size_t size() const { return points3d.size(); }
};

struct PnpOptions {
    int max_iterations = 50;
    double update_tolerance = 1e-10;
    /// RMS reprojection error (px) above which a finished solve is flagged
    /// as not converged.
    double residual_threshold = 10.0;
    double coplanarity_eps = 1e-9;
    /// Accept coplanar (but not collinear) 3D points via a homography
    /// initialization. Off by default: the box-corner path expects a volume.
    bool allow_planar = false;
    double z_min = kDefaultZMin;
};

struct PnpResult {
    Pose pose;
    int iterations = 0;
    double rms_residual = 0.0;
    bool converged = false;
};

namespace detail {

struct Filtered {
    Points3 p3;
    Points2 p2;
    std::vector<double> w;
};

inline Filtered filter_weighted(const Correspondences& c)
{
    if (c.points2d.size() != c.size() || c.weights.size() != c.size())
        fail(ErrorCode::ShapeMismatch, "correspondence arrays differ in length");
    Filtered f;
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (!(c.weights[i] > 0.0)) continue;
        f.p3.push_back(c.points3d[i]);
        f.p2.push_back(c.points2d[i]);
        f.w.push_back(c.weights[i]);
    }
    return f;
}

/// Returns true if the points are coplanar and `allow_planar` let them through.
inline bool check_configuration(const Points3& pts, double eps, bool allow_planar = false)
{
    if (pts.size() < 4) fail(ErrorCode::DegenerateConfiguration, "PnP needs at least 4 weighted points, got " + std::to_string(pts.size()));
    Vec3 mean = Vec3::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Mat3 cov = Mat3::Zero();
    double diam2 = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Vec3 d = pts[i] - mean;
        cov += d * d.transpose();
        for (std::size_t j = i + 1; j < pts.size(); ++j) diam2 = std::max(diam2, (pts[i] - pts[j]).squaredNorm());
    }
    cov /= static_cast<double>(pts.size());
    const Vec3 ev = Eigen::SelfAdjointEigenSolver<Mat3>(cov, Eigen::EigenvaluesOnly).eigenvalues();
    if (!(diam2 > 0.0)) fail(ErrorCode::DegenerateConfiguration, "3D points are coincident");
    if (ev(0) > eps * diam2) return false;
    if (allow_planar && ev(1) > eps * diam2) return true;
    fail(ErrorCode::DegenerateConfiguration, "3D points are coplanar or coincident");
}

/// Residuals, Jacobians and (optionally) the exact Hessian of
/// E = 1/2 sum w_i |pi_i(xi) - x_i|^2 at xi = 0.
struct Linearization {
    double cost = 0.0;
    Vec6 gradient = Vec6::Zero();
    Mat6 gauss_newton = Mat6::Zero();
    Mat6 hessian = Mat6::Zero();
    std::vector<Eigen::Matrix<double, 2, 6>> jacobians;
    Points2 residuals;
    bool valid = true;
};

inline Linearization linearize(const Pose& pose, const Filtered& f, const Intrinsics& k, double z_min, bool exact_hessian)
{
    Linearization lin;
    const Mat3 r = pose.rotation_matrix();
    lin.jacobians.resize(f.p3.size());
    lin.residuals.resize(f.p3.size());
    std::array<Mat3, 3> gen{skew(Vec3::UnitX()), skew(Vec3::UnitY()), skew(Vec3::UnitZ())};
    for (std::size_t i = 0; i < f.p3.size(); ++i) {
        const Vec3 a = r * f.p3[i];
        const Vec3 x = a + pose.translation;
        if (!(x.z() > z_min)) {
            lin.valid = false;
            return lin;
        }
        const double iz = 1.0 / x.z();
        Eigen::Matrix<double, 2, 3> jx;
        jx << k.fx * iz, 0.0, -k.fx * x.x() * iz * iz,
              0.0, k.fy * iz, -k.fy * x.y() * iz * iz;
        Eigen::Matrix<double, 3, 6> g;
        g.leftCols<3>() = -skew(a);
        g.rightCols<3>() = Mat3::Identity();
        const Eigen::Matrix<double, 2, 6> j = jx * g;
        const Vec2 res = k.project_camera_point(x) - f.p2[i];
        lin.jacobians[i] = j;
        lin.residuals[i] = res;
        const double w = f.w[i];
        lin.cost += 0.5 * w * res.squaredNorm();
        lin.gradient += w * j.transpose() * res;
        lin.gauss_newton += w * j.transpose() * j;
        if (!exact_hessian) continue;

        // Second-order terms: sum_k r_k d2 pi_k / dxi2.
        Mat3 hx = Mat3::Zero();
        hx(0, 2) = hx(2, 0) = -k.fx * iz * iz * res.x();
        hx(1, 2) = hx(2, 1) = -k.fy * iz * iz * res.y();
        hx(2, 2) = 2.0 * iz * iz * iz * (k.fx * x.x() * res.x() + k.fy * x.y() * res.y());
        Mat6 second = g.transpose() * hx * g;
        const Vec3 q = jx.transpose() * res;
        for (int a1 = 0; a1 < 3; ++a1)
            for (int a2 = 0; a2 < 3; ++a2)
                second(a1, a2) += 0.5 * q.dot((gen[a1] * gen[a2] + gen[a2] * gen[a1]) * a);
        lin.hessian += w * second;
    }
    if (exact_hessian) lin.hessian += lin.gauss_newton;
    return lin;
}

inline std::optional<Pose> pose_from_projection_matrix(Eigen::Matrix<double, 3, 4> p, const Filtered& f)
{
    Mat3 m = p.leftCols<3>();
    if (m.determinant() < 0.0) {
        p = -p;
        m = -m;
    }
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double scale = svd.singularValues().mean();
    if (!(scale > 0.0)) return std::nullopt;
    Mat3 u = svd.matrixU();
    const Mat3 v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) = -u.col(2);
    const Mat3 rot = u * v.transpose();
    const Vec3 t = p.col(3) / scale;
    Pose pose = Pose::from_matrix(rot, t);
    int front = 0;
    for (const auto& x : f.p3) front += pose.apply(x).z() > 0.0 ? 1 : 0;
    if (2 * front < static_cast<int>(f.p3.size())) return std::nullopt;
    return pose;
}

/// Direct linear transform on K-normalized image points with Hartley-style
/// conditioning of the 3D points. Needs >= 6 points.
inline std::optional<Pose> dlt_init(const Filtered& f, const Intrinsics& k)
{
    const std::size_t n = f.p3.size();
    if (n < 6) return std::nullopt;
    Vec3 mean = Vec3::Zero();
    for (const auto& p : f.p3) mean += p;
    mean /= static_cast<double>(n);
    double spread = 0.0;
    for (const auto& p : f.p3) spread += (p - mean).norm();
    spread /= static_cast<double>(n);
    if (!(spread > 0.0)) return std::nullopt;
    const double s = std::sqrt(3.0) / spread;

    Eigen::MatrixXd a(2 * n, 12);
    a.setZero();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 x = (f.p3[i] - mean) * s;
        const double u = (f.p2[i].x() - k.cx) / k.fx;
        const double v = (f.p2[i].y() - k.cy) / k.fy;
        const double sw = std::sqrt(f.w[i]);
        const Eigen::Vector4d xh(x.x(), x.y(), x.z(), 1.0);
        a.block<1, 4>(2 * i, 0) = sw * xh.transpose();
        a.block<1, 4>(2 * i, 8) = -sw * u * xh.transpose();
        a.block<1, 4>(2 * i + 1, 4) = sw * xh.transpose();
        a.block<1, 4>(2 * i + 1, 8) = -sw * v * xh.transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd sol = svd.matrixV().col(11);
    Eigen::Matrix<double, 3, 4> pn;
    pn << sol(0), sol(1), sol(2), sol(3), sol(4), sol(5), sol(6), sol(7), sol(8), sol(9), sol(10), sol(11);
    // Undo the 3D conditioning: x_n = s (X - mean).
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = pn.leftCols<3>() * s;
    p.col(3) = pn.col(3) - pn.leftCols<3>() * s * mean;
    return pose_from_projection_matrix(p, f);
}

/// POSIT (scaled-orthographic iteration) initialization; works from 4
/// non-coplanar points.
inline std::optional<Pose> posit_init(const Filtered& f, const Intrinsics& k, int iterations = 40)
{
    const std::size_t n = f.p3.size();
    if (n < 4) return std::nullopt;
    std::size_t ref = 0;
    Eigen::MatrixXd a(n - 1, 3);
    for (std::size_t i = 1; i < n; ++i) a.row(i - 1) = (f.p3[i] - f.p3[ref]).transpose();
    const Eigen::MatrixXd b = a.completeOrthogonalDecomposition().pseudoInverse();
    std::vector<double> xs(n), ys(n), eps(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = (f.p2[i].x() - k.cx) / k.fx;
        ys[i] = (f.p2[i].y() - k.cy) / k.fy;
    }
    Mat3 rot = Mat3::Identity();
    Vec3 t0 = Vec3::Zero();
    for (int it = 0; it < iterations; ++it) {
        Eigen::VectorXd xp(n - 1), yp(n - 1);
        for (std::size_t i = 1; i < n; ++i) {
            xp(i - 1) = xs[i] * (1.0 + eps[i]) - xs[ref];
            yp(i - 1) = ys[i] * (1.0 + eps[i]) - ys[ref];
        }
        const Vec3 iv = b * xp;
        const Vec3 jv = b * yp;
        const double ni = iv.norm();
        const double nj = jv.norm();
        if (!(ni > 0.0) || !(nj > 0.0)) return std::nullopt;
        const double scale = std::sqrt(ni * nj);
        const Vec3 r1 = iv / ni;
        Vec3 r2 = jv / nj;
        Vec3 r3 = r1.cross(r2);
        if (!(r3.norm() > 1e-9)) return std::nullopt;
        r3.normalize();
        r2 = r3.cross(r1);
        rot.row(0) = r1.transpose();
        rot.row(1) = r2.transpose();
        rot.row(2) = r3.transpose();
        const double z0 = 1.0 / scale;
        t0 = Vec3(xs[ref] * z0, ys[ref] * z0, z0);
        for (std::size_t i = 1; i < n; ++i) eps[i] = r3.dot(f.p3[i] - f.p3[ref]) / z0;
    }
    if (!rot.allFinite() || !t0.allFinite()) return std::nullopt;
    return Pose::from_matrix(rot, t0 - rot * f.p3[ref]);
}

/// Homography initialization for coplanar points: fit the plane by PCA,
/// estimate H from plane coordinates to normalized image points, read off
/// [r1 r2 t] and re-orthonormalize.
inline std::optional<Pose> planar_init(const Filtered& f, const Intrinsics& k)
{
    const std::size_t n = f.p3.size();
    if (n < 4) return std::nullopt;
    Vec3 mean = Vec3::Zero();
    for (const auto& p : f.p3) mean += p;
    mean /= static_cast<double>(n);
    Mat3 cov = Mat3::Zero();
    for (const auto& p : f.p3) cov += (p - mean) * (p - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    Mat3 basis;  // columns: two in-plane axes, then the normal
    basis.col(0) = eig.eigenvectors().col(2);
    basis.col(1) = eig.eigenvectors().col(1);
    basis.col(2) = basis.col(0).cross(basis.col(1)).normalized();

    double spread = 0.0;
    std::vector<Vec2> uv(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 l = basis.transpose() * (f.p3[i] - mean);
        uv[i] = l.head<2>();
        spread += uv[i].norm();
    }
    spread /= static_cast<double>(n);
    if (!(spread > 0.0)) return std::nullopt;
    const double s = std::sqrt(2.0) / spread;

    Eigen::MatrixXd a(2 * n, 9);
    a.setZero();
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d xh(uv[i].x() * s, uv[i].y() * s, 1.0);
        const double u = (f.p2[i].x() - k.cx) / k.fx;
        const double v = (f.p2[i].y() - k.cy) / k.fy;
        const double sw = std::sqrt(f.w[i]);
        a.block<1, 3>(2 * i, 0) = sw * xh.transpose();
        a.block<1, 3>(2 * i, 6) = -sw * u * xh.transpose();
        a.block<1, 3>(2 * i + 1, 3) = sw * xh.transpose();
        a.block<1, 3>(2 * i + 1, 6) = -sw * v * xh.transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Mat3 hm;
    hm << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    // undo the conditioning on (u, v)
    hm.col(0) *= s;
    hm.col(1) *= s;
    const double lambda = 2.0 / (hm.col(0).norm() + hm.col(1).norm());
    if (!std::isfinite(lambda)) return std::nullopt;
    Vec3 r1 = lambda * hm.col(0), r2 = lambda * hm.col(1), t = lambda * hm.col(2);
    if (t.z() < 0.0) {
        r1 = -r1;
        r2 = -r2;
        t = -t;
    }
    Mat3 m;
    m << r1, r2, r1.cross(r2);
    Eigen::JacobiSVD<Mat3> rs(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 rp = rs.matrixU() * rs.matrixV().transpose();
    if (rp.determinant() < 0.0) return std::nullopt;
    const Mat3 rot = rp * basis.transpose();
    return Pose::from_matrix(rot, t - rot * mean);
}

/// Levenberg-damped Gauss-Newton on the weighted reprojection error.
inline PnpResult refine(Pose pose, const Filtered& f, const Intrinsics& k, const PnpOptions& opt)
{
    PnpResult res;
    auto lin = linearize(pose, f, k, opt.z_min, false);
    if (!lin.valid) return res;
    double damping = 1e-6;
    int it = 0;
    bool done = false;
    for (; it < opt.max_iterations && !done; ++it) {
        bool accepted = false;
        for (int attempt = 0; attempt < 30; ++attempt) {
            Mat6 h = lin.gauss_newton;
            h.diagonal() += damping * (lin.gauss_newton.diagonal().array() + 1e-12).matrix();
            const Vec6 step = h.ldlt().solve(-lin.gradient);
            if (!step.allFinite()) {
                damping *= 10.0;
                continue;
            }
            const Pose cand = retract(pose, step);
            auto cand_lin = linearize(cand, f, k, opt.z_min, false);
            if (cand_lin.valid && cand_lin.cost <= lin.cost) {
                pose = cand;
                lin = std::move(cand_lin);
                damping = std::max(damping * 0.1, 1e-12);
                accepted = true;
                if (step.norm() < opt.update_tolerance) done = true;
                break;
            }
            if (step.norm() < opt.update_tolerance) {
                done = true;
                break;
            }
            damping *= 10.0;
        }
        if (!accepted && !done) break;
    }
    // Cost comparisons stall near the optimum once changes drop below
    // rounding; a few exact-Newton steps on the gradient finish the job so
    // the result is a stationary point to machine precision (which the
    // implicit VJP assumes).
    for (int polish = 0; polish < 4 && lin.valid; ++polish) {
        const auto full = linearize(pose, f, k, opt.z_min, true);
        Eigen::LDLT<Mat6> ldlt(full.hessian);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
        const Vec6 step = ldlt.solve(-full.gradient);
        if (!step.allFinite() || step.norm() > 1e-3) break;
        const Pose cand = retract(pose, step);
        auto cand_lin = linearize(cand, f, k, opt.z_min, false);
        if (!cand_lin.valid || cand_lin.gradient.norm() >= full.gradient.norm()) break;
        pose = cand;
        lin = std::move(cand_lin);
        ++it;
    }
    double wsum = 0.0;
    for (double w : f.w) wsum += w;
    res.pose = pose;
    res.iterations = it;
    res.rms_residual = std::sqrt(2.0 * lin.cost / std::max(wsum, 1e-300));
    res.converged = lin.valid && res.rms_residual <= opt.residual_threshold;
    return res;
}

inline PnpResult solve_filtered(const Filtered& f, const Intrinsics& k, const PnpOptions& opt)
{
    const bool planar = check_configuration(f.p3, opt.coplanarity_eps, opt.allow_planar);
    std::optional<PnpResult> best;
    auto consider = [&](const std::optional<Pose>& init) {
        if (!init) return;
        PnpResult r = refine(*init, f, k, opt);
        if (!r.pose.translation.allFinite()) return;
        if (!linearize(r.pose, f, k, opt.z_min, false).valid) return;
        if (!best || r.rms_residual < best->rms_residual) best = r;
    };
    if (planar) {
        consider(planar_init(f, k));
    } else {
        consider(dlt_init(f, k));
        if (!best || !best->converged) consider(posit_init(f, k));
    }
    if (!best) fail(ErrorCode::DegenerateConfiguration, "no valid PnP initialization");
    return *best;
}

} // namespace detail

/// Weighted PnP: linear initialization (DLT for >= 6 points, POSIT
/// otherwise or as fallback) refined by Gauss-Newton. Points with weight 0
/// are ignored.
inline PnpResult pnp_solve_detailed(const Correspondences& c, const Intrinsics& k, const PnpOptions& opt = {})
{
    return detail::solve_filtered(detail::filter_weighted(c), k, opt);
}

inline Pose pnp_solve(const Correspondences& c, const Intrinsics& k, const PnpOptions& opt = {})
{
    return pnp_solve_detailed(c, k, opt).pose;
}

struct PnpGrad {
    Points2 points2d;
    std::vector<double> weights;
    Points3 points3d;
};

/// Implicit-function VJP through the stationarity condition of the
/// weighted reprojection error at a converged `pose`. `upstream` is the
/// cotangent on the pose tangent.
inline PnpGrad pnp_vjp(const Correspondences& c, const Intrinsics& k, const Pose& pose, const Vec6& upstream,
                       const PnpOptions& opt = {})
{
    if (c.points2d.size() != c.size() || c.weights.size() != c.size())
        fail(ErrorCode::ShapeMismatch, "correspondence arrays differ in length");
    PnpGrad g;
    g.points2d.assign(c.size(), Vec2::Zero());
    g.weights.assign(c.size(), 0.0);
    g.points3d.assign(c.size(), Vec3::Zero());

    // Linearize over every point (zero weights still need residuals for the
    // weight gradient, but contribute nothing to the Hessian).
    detail::Filtered all{c.points3d, c.points2d, c.weights};
    for (auto& w : all.w) w = std::max(w, 0.0);
    const auto lin = detail::linearize(pose, all, k, opt.z_min, true);
    if (!lin.valid) fail(ErrorCode::DepthBehindCamera, "pose puts correspondences behind the camera");
    if (upstream.isZero(0.0)) return g;

    Eigen::SelfAdjointEigenSolver<Mat6> eig(lin.hessian, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues()(0);
    const double hi = eig.eigenvalues()(5);
    if (!(hi > 0.0) || !(lo > 0.0) || hi / lo > 1e12)
        fail(ErrorCode::SingularHessian, "PnP Hessian condition number exceeds 1e12");
    Mat6 h = lin.hessian;
    if (hi / lo > 1e8) h.diagonal().array() += 1e-9 * hi;
    const Vec6 z = h.ldlt().solve(upstream);

    const Mat3 r = pose.rotation_matrix();
    for (std::size_t i = 0; i < c.size(); ++i) {
        const Vec2 jz = lin.jacobians[i] * z;
        g.points2d[i] = all.w[i] * jz;
        g.weights[i] = -lin.residuals[i].dot(jz);
        if (all.w[i] == 0.0) continue;

        // d(grad_xi E)/dX_i for the object point: with a = R X, x = a + t,
        // q = Jx^T r and M = Jx^T Jx + sum_k r_k d2pi_k/dx2, the per-point
        // gradient block is [a x q; q] and its a-derivative [-[q]x + [a]x M; M].
        const Vec3 a = r * c.points3d[i];
        const Vec3 x = a + pose.translation;
        const double iz = 1.0 / x.z();
        const Vec2& res = lin.residuals[i];
        Eigen::Matrix<double, 2, 3> jx;
        jx << k.fx * iz, 0.0, -k.fx * x.x() * iz * iz,
              0.0, k.fy * iz, -k.fy * x.y() * iz * iz;
        Mat3 hx = Mat3::Zero();
        hx(0, 2) = hx(2, 0) = -k.fx * iz * iz * res.x();
        hx(1, 2) = hx(2, 1) = -k.fy * iz * iz * res.y();
        hx(2, 2) = 2.0 * iz * iz * iz * (k.fx * x.x() * res.x() + k.fy * x.y() * res.y());
        const Vec3 q = jx.transpose() * res;
        const Mat3 m = jx.transpose() * jx + hx;
        Eigen::Matrix<double, 6, 3> dg;
        dg.topRows<3>() = -skew(q) + skew(a) * m;
        dg.bottomRows<3>() = m;
        g.points3d[i] = -all.w[i] * (dg * r).transpose() * z;
    }
    return g;
}

struct RansacResult {
    Pose pose;
    std::vector<bool> inliers;
    std::size_t inlier_count = 0;
};

/// 4-point hypotheses scored by inlier count (ties: lower refit residual,
/// then earlier iteration), final pose refit on the consensus set.
inline RansacResult pnp_ransac(const Correspondences& c, const Intrinsics& k, std::mt19937_64& rng, int iterations = 256,
                               double inlier_px = 2.0, const PnpOptions& opt = {})
{
    const std::size_t n = c.size();
    if (c.points2d.size() != n || c.weights.size() != n) fail(ErrorCode::ShapeMismatch, "correspondence arrays differ in length");
    if (n < 4) fail(ErrorCode::DegenerateConfiguration, "RANSAC needs at least 4 correspondences");

    auto count_inliers = [&](const Pose& pose, std::vector<bool>& mask) {
        const Mat3 r = pose.rotation_matrix();
        std::size_t cnt = 0;
        mask.assign(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 x = r * c.points3d[i] + pose.translation;
            if (!(x.z() > opt.z_min)) continue;
            if ((k.project_camera_point(x) - c.points2d[i]).norm() < inlier_px) {
                mask[i] = true;
                ++cnt;
            }
        }
        return cnt;
    };
    auto refit = [&](const std::vector<bool>& mask) -> std::optional<PnpResult> {
        Correspondences sub;
        for (std::size_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            sub.points3d.push_back(c.points3d[i]);
            sub.points2d.push_back(c.points2d[i]);
            sub.weights.push_back(c.weights[i] > 0.0 ? c.weights[i] : 1.0);
        }
        try {
            return pnp_solve_detailed(sub, k, opt);
        } catch (const Error&) {
            return std::nullopt;
        }
    };

    std::size_t best_count = 0;
    double best_residual = std::numeric_limits<double>::infinity();
    std::optional<PnpResult> best_fit;
    std::vector<bool> best_mask;
    std::vector<bool> mask;
    std::vector<std::size_t> idx(n);
    for (int it = 0; it < iterations; ++it) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t j = 0; j < 4; ++j) {
            std::uniform_int_distribution<std::size_t> pick(j, n - 1);
            std::swap(idx[j], idx[pick(rng)]);
        }
        detail::Filtered sample;
        for (std::size_t j = 0; j < 4; ++j) {
            sample.p3.push_back(c.points3d[idx[j]]);
            sample.p2.push_back(c.points2d[idx[j]]);
            sample.w.push_back(1.0);
        }
        std::optional<PnpResult> hyp;
        try {
            hyp = detail::solve_filtered(sample, k, opt);
        } catch (const Error&) {
            continue;
        }
        const std::size_t cnt = count_inliers(hyp->pose, mask);
        if (cnt < 4 || cnt < best_count) continue;
        auto fit = refit(mask);
        if (!fit) continue;
        if (cnt > best_count || fit->rms_residual < best_residual) {
            best_count = cnt;
            best_residual = fit->rms_residual;
            best_fit = fit;
            best_mask = mask;
        }
    }
    if (!best_fit || best_count < 4) fail(ErrorCode::NoConsensus, "RANSAC found fewer than 4 inliers");

    RansacResult out;
    out.pose = best_fit->pose;
    out.inlier_count = count_inliers(out.pose, out.inliers);
    if (out.inlier_count < 4) {
        out.inliers = best_mask;
        out.inlier_count = best_count;
    }
    return out;
}

} // namespace psk
