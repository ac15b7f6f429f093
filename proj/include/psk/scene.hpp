#pragma once

// Scene generation (object over procedural background, optional fixed
// photometric corruption standing in for "real" images) and the training
// crop with its jitter and photometric augmentation.

#include "psk/renderer.hpp"

#include <iostream>
#include <random>

namespace psk {

enum class Domain { Synthetic, PseudoReal };

inline const char* to_string(Domain d) { return d == Domain::Synthetic ? "synthetic" : "pseudo_real"; }

inline Domain parse_domain(const std::string& s)
{
    if (s == "synthetic") return Domain::Synthetic;
    if (s == "pseudo_real" || s == "pseudoreal") return Domain::PseudoReal;
    fail(ErrorCode::ConfigError, "unknown domain '" + s + "' (expected synthetic or pseudo_real)");
}

struct BBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive pixel-center extent
    double width() const { return x1 - x0 + 1; }
    double height() const { return y1 - y0 + 1; }
    Vec2 center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }
};

struct SceneSample {
    ImageBuffer image;      // 3 channels in [0, 1]
    Pose gt_pose;           // evaluation only for PseudoReal
    Domain domain = Domain::Synthetic;
    BBox bbox;
    ImageBuffer silhouette; // hard coverage, 1 channel
    Intrinsics k;
};

struct SceneSettings {
    Pose base{so3_exp(Vec3(-0.55, 0.65, 0.15)), Vec3::Zero()};  // three faces visible
    double max_angle = 0.5;        // rad, around base
    double z_lo = 0.45, z_hi = 0.6;
    double max_offset_px = 16.0;   // object center from the principal point
};

// The "unknown" corruption of the PseudoReal domain.
/// Fixed corruption that turns a rendered scene into "PseudoReal". Strong
/// enough that a synthetic-only model loses most of its accuracy, mild enough
/// that the object stays recognizable.
struct PhotometricShift {
    double gamma = 1.5;
    Vec3 gain{1.1, 0.9, 0.75};
    Vec3 offset{0.04, 0.06, 0.08};
    double vignette = 0.35;
    double noise_sigma = 0.03;
};

namespace detail {

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// Sum of value-noise octaves plus a random linear ramp, per channel.
inline ImageBuffer procedural_background(int w, int h, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageBuffer img(w, h, 3);
    for (int c = 0; c < 3; ++c) {
        const double base = 0.15 + 0.7 * u(rng);
        const double gx = (u(rng) - 0.5) * 0.6 / w, gy = (u(rng) - 0.5) * 0.6 / h;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) img.at(x, y, c) = base + gx * (x - 0.5 * w) + gy * (y - 0.5 * h);
        double amp = 0.25;
        for (int cell : {32, 16, 8, 4}) {
            const int gw = w / cell + 2, gh = h / cell + 2;
            std::vector<double> grid(static_cast<std::size_t>(gw) * gh);
            for (auto& g : grid) g = u(rng) - 0.5;
            for (int y = 0; y < h; ++y) {
                const int iy = y / cell;
                const double ty = smoothstep(static_cast<double>(y % cell) / cell);
                for (int x = 0; x < w; ++x) {
                    const int ix = x / cell;
                    const double tx = smoothstep(static_cast<double>(x % cell) / cell);
                    auto g = [&](int a, int b) { return grid[static_cast<std::size_t>(b) * gw + a]; };
                    const double v = (1 - ty) * ((1 - tx) * g(ix, iy) + tx * g(ix + 1, iy)) +
                                     ty * ((1 - tx) * g(ix, iy + 1) + tx * g(ix + 1, iy + 1));
                    img.at(x, y, c) += amp * v;
                }
            }
            amp *= 0.6;
        }
    }
    for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);
    return img;
}

inline void apply_shift(ImageBuffer& img, const PhotometricShift& s, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, s.noise_sigma);
    const double cx = 0.5 * (img.width - 1), cy = 0.5 * (img.height - 1);
    const double r2max = cx * cx + cy * cy;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double r2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / r2max;
            const double vig = 1.0 - s.vignette * r2;
            for (int c = 0; c < 3; ++c) {
                double v = std::pow(std::clamp(img.at(x, y, c), 0.0, 1.0), s.gamma);
                v = (s.gain[c] * v + s.offset[c]) * vig + n(rng);
                img.at(x, y, c) = std::clamp(v, 0.0, 1.0);
            }
        }
}

} // namespace detail

inline Pose sample_scene_pose(const Intrinsics& k, std::mt19937_64& rng, const SceneSettings& s = {})
{
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec3 axis(n(rng), n(rng), n(rng));
    axis.normalize();
    const double ang = s.max_angle * std::cbrt(u(rng));  // uniform in the ball
    const double z = s.z_lo + (s.z_hi - s.z_lo) * u(rng);
    const double du = (2 * u(rng) - 1) * s.max_offset_px, dv = (2 * u(rng) - 1) * s.max_offset_px;
    const Vec3 t = k.backproject(k.cx + du, k.cy + dv, z);
    return {so3_exp(axis * ang) * s.base.rotation, t};
}

inline BBox bbox_of_mask(const ImageBuffer& mask)
{
    BBox b{1e9, 1e9, -1e9, -1e9};
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y) > 0.5) {
                b.x0 = std::min<double>(b.x0, x);
                b.y0 = std::min<double>(b.y0, y);
                b.x1 = std::max<double>(b.x1, x);
                b.y1 = std::max<double>(b.y1, y);
            }
    if (b.x1 < b.x0) fail(ErrorCode::CropOutOfBounds, "object not visible: empty silhouette");
    return b;
}

/// Draws pose, background and sensor noise identically for both domains, so
/// a Synthetic/PseudoReal pair from the same seed differs only photometrically.
inline SceneSample generate_scene(const TriangleMesh& mesh, const Intrinsics& k, std::mt19937_64& rng, Domain domain,
                                  const SceneSettings& s = {}, const PhotometricShift& shift = {})
{
    SceneSample out;
    out.k = k;
    out.domain = domain;
    out.gt_pose = sample_scene_pose(k, rng, s);
    out.image = detail::procedural_background(k.width, k.height, rng);
    const auto r = render(out.gt_pose, mesh, k);
    out.silhouette = ImageBuffer(k.width, k.height, 1);
    for (std::size_t i = 0; i < out.image.pixel_count(); ++i) {
        if (r.depth.data[i] <= 0.0) continue;
        out.silhouette.data[i] = 1.0;
        for (int c = 0; c < 3; ++c) out.image.data[i * 3 + c] = r.color.data[i * 3 + c];
    }
    out.bbox = bbox_of_mask(out.silhouette);
    std::mt19937_64 noise_rng(rng());
    if (domain == Domain::PseudoReal) detail::apply_shift(out.image, shift, noise_rng);
    return out;
}

/// n scenes, sample i drawn from its own stream seeded by (seed, i): any
/// sample can be regenerated alone, and the same seed gives the same poses
/// and backgrounds in both domains.
inline std::vector<SceneSample> generate_dataset(const TriangleMesh& mesh, const Intrinsics& k, int n, Domain domain,
                                                 std::uint64_t seed, const SceneSettings& s = {},
                                                 const PhotometricShift& shift = {})
{
    if (n < 0) fail(ErrorCode::InvalidArgument, "dataset size must be >= 0");
    std::vector<SceneSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(i), 0x5ce7eu};
        std::mt19937_64 rng(seq);
        out.push_back(generate_scene(mesh, k, rng, domain, s, shift));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training crop

struct CropSettings {
    int out_size = 64;
    double crop_factor = 1.3;     // times the shorter bbox side
    double center_sigma = 3.0;    // px
    double scale_lo = 0.9, scale_hi = 1.1;
    bool jitter = true;
    bool augment = true;
    double aug_prob = 0.5;        // per operation
    double noise_max = 0.03;
    double contrast_lo = 0.7, contrast_hi = 1.3;
    double blur_max = 1.0;        // Gaussian sigma in crop pixels
    // Synthetic only: paste onto black instead of the scene background, the
    // look of renders and silhouette-masked crops.
    double black_background_prob = 0.0;
};

struct Crop {
    ImageBuffer image;
    Intrinsics k;    // camera of the crop
    bool padded = false;
};

namespace detail {

inline void gaussian_blur(ImageBuffer& img, double sigma)
{
    if (sigma <= 0.05) return;
    const int r = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
    std::vector<double> w(2 * r + 1);
    double s = 0;
    for (int i = -r; i <= r; ++i) s += w[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : w) v /= s;
    ImageBuffer tmp = img;
    for (int pass = 0; pass < 2; ++pass) {
        const ImageBuffer& src = pass == 0 ? img : tmp;
        ImageBuffer& dst = pass == 0 ? tmp : img;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                for (int c = 0; c < img.channels; ++c) {
                    double acc = 0;
                    for (int i = -r; i <= r; ++i) {
                        const int xx = pass == 0 ? std::clamp(x + i, 0, img.width - 1) : x;
                        const int yy = pass == 1 ? std::clamp(y + i, 0, img.height - 1) : y;
                        acc += w[i + r] * src.at(xx, yy, c);
                    }
                    dst.at(x, y, c) = acc;
                }
    }
}

inline void augment_photometric(ImageBuffer& img, std::mt19937_64& rng, const CropSettings& s)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng) < s.aug_prob) {
        const double a = s.contrast_lo + (s.contrast_hi - s.contrast_lo) * u(rng);
        double mean = 0;
        for (double v : img.data) mean += v;
        mean /= static_cast<double>(img.data.size());
        for (auto& v : img.data) v = mean + a * (v - mean);
    }
    if (u(rng) < s.aug_prob) gaussian_blur(img, s.blur_max * u(rng));
    if (u(rng) < s.aug_prob) {
        std::normal_distribution<double> n(0.0, s.noise_max * u(rng));
        for (auto& v : img.data) v += n(rng);
    }
    for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);
}

} // namespace detail

/// Square window around a (possibly jittered) bbox center, resampled to
/// out_size. Windows leaving the image are zero-padded; that is reported
/// (CropOutOfBounds warning), not thrown.
inline Crop crop_window(const ImageBuffer& image, const Intrinsics& k, const Vec2& center, double side, int out_size)
{
    if (!(side > 1.0)) fail(ErrorCode::CropOutOfBounds, "crop side must exceed one pixel");
    Crop out;
    const double x0 = center.x() - 0.5 * side, y0 = center.y() - 0.5 * side;
    out.k = k.crop(x0, y0, side, out_size);
    out.image = ImageBuffer(out_size, out_size, image.channels);
    const double step = side / out_size;
    // box-filter when shrinking, plain bilinear otherwise
    const int taps = std::max(1, static_cast<int>(std::ceil(step)));
    for (int j = 0; j < out_size; ++j)
        for (int i = 0; i < out_size; ++i) {
            for (int ty = 0; ty < taps; ++ty)
                for (int tx = 0; tx < taps; ++tx) {
                    const double x = x0 + (i + (tx + 0.5) / taps) * step;
                    const double y = y0 + (j + (ty + 0.5) / taps) * step;
                    if (x < -0.5 || y < -0.5 || x > image.width - 0.5 || y > image.height - 0.5) {
                        out.padded = true;
                        continue;
                    }
                    for (int c = 0; c < image.channels; ++c)
                        out.image.at(i, j, c) += sample_bilinear(image, x, y, c) / (taps * taps);
                }
        }
    return out;
}

inline Crop crop_and_jitter(const SceneSample& sample, const CropSettings& s, std::mt19937_64& rng)
{
    Vec2 center = sample.bbox.center();
    double side = s.crop_factor * std::min(sample.bbox.width(), sample.bbox.height());
    if (s.jitter) {
        std::normal_distribution<double> n(0.0, s.center_sigma);
        std::uniform_real_distribution<double> sc(s.scale_lo, s.scale_hi);
        center += Vec2(n(rng), n(rng));
        side *= sc(rng);
    }
    auto out = crop_window(sample.image, sample.k, center, side, s.out_size);
    if (out.padded) std::clog << "warning: CropOutOfBounds: crop window padded with zeros\n";
    if (s.black_background_prob > 0 && sample.domain == Domain::Synthetic) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        if (u(rng) < s.black_background_prob) {
            const auto m = crop_window(sample.silhouette, sample.k, center, side, s.out_size).image;
            for (std::size_t i = 0; i < m.data.size(); ++i)
                for (int c = 0; c < 3; ++c) out.image.data[3 * i + c] *= m.data[i];
        }
    }
    if (s.augment) detail::augment_photometric(out.image, rng, s);
    return out;
}

} // namespace psk
