#pragma once

// Multi-scale SSIM with an optional per-pixel weight mask and a hand-written
// reverse pass. Statistics use normalized (masked) Gaussian convolution, so
// borders and masked-out pixels simply drop out of each window.

#include "psk/image.hpp"

#include <array>

namespace psk {

inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr int kSsimMinSide = 32;

/// Scales used for a w x h image: the coarsest scale keeps >= 8 px.
inline int ms_ssim_scales(int width, int height)
{
    int m = 1;
    int side = std::min(width, height);
    while (m < 5 && side / 2 >= 8) {
        side /= 2;
        ++m;
    }
    return m;
}

namespace detail {

/// Single-channel float plane.
struct Plane {
    int w = 0, h = 0;
    std::vector<double> v;
    Plane() = default;
    Plane(int w_, int h_, double fill = 0.0) : w(w_), h(h_), v(static_cast<std::size_t>(w_) * h_, fill) {}
    double& operator()(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
    double operator()(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

inline const std::vector<double>& gaussian_window()
{
    static const std::vector<double> g = [] {
        std::vector<double> k(11);
        double s = 0;
        for (int i = 0; i < 11; ++i) s += k[i] = std::exp(-0.5 * (i - 5) * (i - 5) / (1.5 * 1.5));
        for (auto& x : k) x /= s;
        return k;
    }();
    return g;
}

/// Zero-padded separable convolution with a symmetric kernel (self-adjoint).
inline Plane blur(const Plane& in, const std::vector<double>& k)
{
    const int r = static_cast<int>(k.size()) / 2;
    Plane tmp(in.w, in.h), out(in.w, in.h);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            double s = 0;
            for (int i = -r; i <= r; ++i) {
                const int xx = x + i;
                if (xx >= 0 && xx < in.w) s += k[i + r] * in(xx, y);
            }
            tmp(x, y) = s;
        }
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            double s = 0;
            for (int i = -r; i <= r; ++i) {
                const int yy = y + i;
                if (yy >= 0 && yy < in.h) s += k[i + r] * tmp(x, yy);
            }
            out(x, y) = s;
        }
    return out;
}

inline Plane pool2(const Plane& in)
{
    Plane out(in.w / 2, in.h / 2);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            out(x, y) = 0.25 * (in(2 * x, 2 * y) + in(2 * x + 1, 2 * y) + in(2 * x, 2 * y + 1) + in(2 * x + 1, 2 * y + 1));
    return out;
}

/// Adjoint of pool2, accumulated into `fine`.
inline void pool2_adjoint(const Plane& coarse, Plane& fine)
{
    for (int y = 0; y < coarse.h; ++y)
        for (int x = 0; x < coarse.w; ++x) {
            const double g = 0.25 * coarse(x, y);
            fine(2 * x, 2 * y) += g;
            fine(2 * x + 1, 2 * y) += g;
            fine(2 * x, 2 * y + 1) += g;
            fine(2 * x + 1, 2 * y + 1) += g;
        }
}

/// Mask-weighted 2x2 average: masked-out pixels never leak into coarser
/// scales. Blocks with no mass become 0.
inline Plane pool2_masked(const Plane& in, const Plane& m)
{
    Plane out(in.w / 2, in.h / 2);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double s = 0, w = 0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    s += m(2 * x + dx, 2 * y + dy) * in(2 * x + dx, 2 * y + dy);
                    w += m(2 * x + dx, 2 * y + dy);
                }
            out(x, y) = w > 0 ? s / w : 0.0;
        }
    return out;
}

inline void pool2_masked_adjoint(const Plane& coarse, const Plane& m, Plane& fine)
{
    for (int y = 0; y < coarse.h; ++y)
        for (int x = 0; x < coarse.w; ++x) {
            double w = 0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) w += m(2 * x + dx, 2 * y + dy);
            if (!(w > 0)) continue;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) fine(2 * x + dx, 2 * y + dy) += coarse(x, y) * m(2 * x + dx, 2 * y + dy) / w;
        }
}

inline Plane channel_plane(const ImageBuffer& img, int c)
{
    Plane p(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) p(x, y) = img.at(x, y, c);
    return p;
}

/// One scale of masked SSIM statistics. `last` selects mean(l*cs) instead
/// of mean(cs). Returns the (unclamped) term; fills gx/gy with d term/dx,y
/// scaled by `upstream` when asked.
inline double ssim_term(const Plane& x, const Plane& y, const Plane& m, bool last, double upstream, Plane* gx, Plane* gy)
{
    const auto& k = gaussian_window();
    const std::size_t n = x.v.size();
    Plane mx(x.w, x.h), my(x.w, x.h), mxx(x.w, x.h), myy(x.w, x.h), mxy(x.w, x.h);
    for (std::size_t i = 0; i < n; ++i) {
        mx.v[i] = m.v[i] * x.v[i];
        my.v[i] = m.v[i] * y.v[i];
        mxx.v[i] = m.v[i] * x.v[i] * x.v[i];
        myy.v[i] = m.v[i] * y.v[i] * y.v[i];
        mxy.v[i] = m.v[i] * x.v[i] * y.v[i];
    }
    const Plane wsum = blur(m, k);
    const Plane bx = blur(mx, k), by = blur(my, k), bxx = blur(mxx, k), byy = blur(myy, k), bxy = blur(mxy, k);

    double mass = 0;
    for (double v : m.v) mass += v;
    if (!(mass > 0)) return 1.0;  // nothing to compare at this scale

    // Per-pixel derivatives of the map w.r.t. the raw moments E[x], E[y],
    // E[x^2], E[y^2], E[xy].
    const bool grad = gx && gy;
    Plane d1x, d1y, d2x, d2y, dxy;
    if (grad) d1x = d1y = d2x = d2y = dxy = Plane(x.w, x.h);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (m.v[i] == 0.0 || !(wsum.v[i] > 1e-12)) continue;
        const double iw = 1.0 / wsum.v[i];
        const double ux = bx.v[i] * iw, uy = by.v[i] * iw;
        const double vx = bxx.v[i] * iw - ux * ux, vy = byy.v[i] * iw - uy * uy, cxy = bxy.v[i] * iw - ux * uy;
        const double ln = 2 * ux * uy + kSsimC1, ld = ux * ux + uy * uy + kSsimC1;
        const double cn = 2 * cxy + kSsimC2, cd = vx + vy + kSsimC2;
        const double l = ln / ld, cs = cn / cd;
        const double val = last ? l * cs : cs;
        total += m.v[i] * val;
        if (!grad) continue;

        const double a = upstream * m.v[i] / mass;  // d term / d map(i)
        double g_ux = 0, g_uy = 0;
        // cs part
        const double dcs_dcxy = 2.0 / cd;
        const double dcs_dv = -cn / (cd * cd);
        const double f = last ? l : 1.0;
        double g_vx = a * f * dcs_dv, g_vy = a * f * dcs_dv, g_cxy = a * f * dcs_dcxy;
        if (last) {
            const double dl_dux = (2 * uy * ld - ln * 2 * ux) / (ld * ld);
            const double dl_duy = (2 * ux * ld - ln * 2 * uy) / (ld * ld);
            g_ux += a * cs * dl_dux;
            g_uy += a * cs * dl_duy;
        }
        // vx = E[x^2] - ux^2, cxy = E[xy] - ux uy
        g_ux += -2 * ux * g_vx - uy * g_cxy;
        g_uy += -2 * uy * g_vy - ux * g_cxy;
        d1x.v[i] = g_ux * iw;
        d1y.v[i] = g_uy * iw;
        d2x.v[i] = g_vx * iw;
        d2y.v[i] = g_vy * iw;
        dxy.v[i] = g_cxy * iw;
    }
    if (grad) {
        const Plane a1x = blur(d1x, k), a1y = blur(d1y, k), a2x = blur(d2x, k), a2y = blur(d2y, k), axy = blur(dxy, k);
        for (std::size_t i = 0; i < n; ++i) {
            gx->v[i] += m.v[i] * (a1x.v[i] + 2 * x.v[i] * a2x.v[i] + y.v[i] * axy.v[i]);
            gy->v[i] += m.v[i] * (a1y.v[i] + 2 * y.v[i] * a2y.v[i] + x.v[i] * axy.v[i]);
        }
    }
    return total / mass;
}

/// MS-SSIM of one channel; gradients (if requested) scaled by `upstream`.
inline double ms_ssim_channel(const Plane& x0, const Plane& y0, const Plane& m0, double upstream, Plane* gx0, Plane* gy0)
{
    const int scales = ms_ssim_scales(x0.w, x0.h);
    double wsum = 0;
    for (int j = 0; j < scales; ++j) wsum += kMsSsimWeights[j];

    std::vector<Plane> xs{x0}, ys{y0}, ms{m0};
    for (int j = 1; j < scales; ++j) {
        xs.push_back(pool2_masked(xs.back(), ms.back()));
        ys.push_back(pool2_masked(ys.back(), ms.back()));
        ms.push_back(pool2(ms.back()));
    }
    std::vector<double> terms(scales);
    double value = 1.0;
    for (int j = 0; j < scales; ++j) {
        terms[j] = std::max(0.0, ssim_term(xs[j], ys[j], ms[j], j == scales - 1, 0.0, nullptr, nullptr));
        value *= std::pow(terms[j], kMsSsimWeights[j] / wsum);
    }
    if (!gx0 || !gy0 || upstream == 0.0 || value == 0.0) return value;

    // d value / d term_j = value * w_j / term_j
    std::vector<Plane> gxs, gys;
    for (int j = 0; j < scales; ++j) {
        gxs.emplace_back(xs[j].w, xs[j].h);
        gys.emplace_back(ys[j].w, ys[j].h);
        const double up = upstream * value * (kMsSsimWeights[j] / wsum) / terms[j];
        ssim_term(xs[j], ys[j], ms[j], j == scales - 1, up, &gxs[j], &gys[j]);
    }
    for (int j = scales - 1; j > 0; --j) {
        pool2_masked_adjoint(gxs[j], ms[j - 1], gxs[j - 1]);
        pool2_masked_adjoint(gys[j], ms[j - 1], gys[j - 1]);
    }
    for (std::size_t i = 0; i < gx0->v.size(); ++i) {
        gx0->v[i] += gxs[0].v[i];
        gy0->v[i] += gys[0].v[i];
    }
    return value;
}

inline void check_ssim_inputs(const ImageBuffer& a, const ImageBuffer& b, const ImageBuffer* mask)
{
    require_same_shape(a, b, "ms_ssim");
    if (mask && (mask->channels != 1 || !mask->same_size(a)))
        fail(ErrorCode::ShapeMismatch, "ms_ssim mask must be single-channel and match the image size");
    if (std::min(a.width, a.height) < kSsimMinSide)
        fail(ErrorCode::TooSmall, "ms_ssim needs a min side >= " + std::to_string(kSsimMinSide) + " px, got " +
                                      std::to_string(std::min(a.width, a.height)));
}

} // namespace detail

struct SsimResult {
    double value = 0.0;
    ImageBuffer grad_a, grad_b;  // d value / d a, d value / d b
};

/// MS-SSIM averaged over channels. `mask` (1 channel, values in [0, 1])
/// weights every pixel's contribution to window statistics and to the
/// per-scale means; it is treated as a constant.
inline SsimResult ms_ssim_with_grad(const ImageBuffer& a, const ImageBuffer& b, const ImageBuffer* mask = nullptr,
                                    bool want_grad = true)
{
    detail::check_ssim_inputs(a, b, mask);
    SsimResult r;
    if (want_grad) {
        r.grad_a = ImageBuffer(a.width, a.height, a.channels);
        r.grad_b = ImageBuffer(a.width, a.height, a.channels);
    }
    const detail::Plane m = mask ? detail::channel_plane(*mask, 0) : detail::Plane(a.width, a.height, 1.0);
    const double up = 1.0 / a.channels;
    for (int c = 0; c < a.channels; ++c) {
        const auto x = detail::channel_plane(a, c), y = detail::channel_plane(b, c);
        detail::Plane gx(a.width, a.height), gy(a.width, a.height);
        r.value += up * detail::ms_ssim_channel(x, y, m, up, want_grad ? &gx : nullptr, want_grad ? &gy : nullptr);
        if (!want_grad) continue;
        for (int yy = 0; yy < a.height; ++yy)
            for (int xx = 0; xx < a.width; ++xx) {
                r.grad_a.at(xx, yy, c) = gx(xx, yy);
                r.grad_b.at(xx, yy, c) = gy(xx, yy);
            }
    }
    return r;
}

inline double ms_ssim(const ImageBuffer& a, const ImageBuffer& b, const ImageBuffer* mask = nullptr)
{
    return ms_ssim_with_grad(a, b, mask, false).value;
}

/// Plain single-scale SSIM (mean of l*cs), channel-averaged, no clamp.
inline double ssim(const ImageBuffer& a, const ImageBuffer& b)
{
    require_same_shape(a, b, "ssim");
    const detail::Plane m(a.width, a.height, 1.0);
    double v = 0;
    for (int c = 0; c < a.channels; ++c)
        v += detail::ssim_term(detail::channel_plane(a, c), detail::channel_plane(b, c), m, true, 0.0, nullptr, nullptr);
    return v / a.channels;
}

} // namespace psk
