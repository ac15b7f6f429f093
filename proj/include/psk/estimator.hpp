#pragma once

// Toy pose estimator Phi(I; theta): average-pool the crop, two softplus
// hidden layers, sigmoid head producing either 8 corner pixels or a coarse
// coordinate+mask grid that is bilinearly upsampled to the crop size.

#include "psk/image.hpp"
#include "psk/representation.hpp"

#include <Eigen/Core>

#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace psk {

struct EstimatorConfig {
    RepresentationKind kind = RepresentationKind::Sparse;
    int input_size = 64;
    int pool = 4;
    int hidden = 256;
    int dense_grid = 16;

    int pooled_side() const { return input_size / pool; }
    int input_features() const { return pooled_side() * pooled_side() * 3; }
    int outputs() const { return kind == RepresentationKind::Sparse ? 16 : dense_grid * dense_grid * 4; }

    void validate() const
    {
        if (input_size <= 0 || pool <= 0 || input_size % pool != 0)
            fail(ErrorCode::ConfigError, "input_size must be a positive multiple of pool");
        if (hidden <= 0 || dense_grid <= 0) fail(ErrorCode::ConfigError, "hidden and dense_grid must be positive");
    }

    /// Offsets of W1, b1, W2, b2, W3, b3 inside theta, and the total size.
    std::array<std::size_t, 7> layout() const
    {
        const std::size_t in = input_features(), h = hidden, out = outputs();
        std::array<std::size_t, 7> o{};
        o[0] = 0;
        o[1] = o[0] + h * in;
        o[2] = o[1] + h;
        o[3] = o[2] + h * h;
        o[4] = o[3] + h;
        o[5] = o[4] + out * h;
        o[6] = o[5] + out;
        return o;
    }
    std::size_t parameter_count() const { return layout()[6]; }
    /// theta[0, n) is the first layer (W1, b1) -- the part frozen in stage 0.
    std::size_t first_layer_size() const { return layout()[2]; }
};

struct EstimatorParams {
    EstimatorConfig config;
    std::vector<double> theta;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
inline EstimatorParams init_estimator(const EstimatorConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    EstimatorParams p{cfg, std::vector<double>(cfg.parameter_count(), 0.0)};
    std::mt19937_64 rng(seed);
    const auto o = cfg.layout();
    const std::array<std::pair<std::size_t, int>, 3> blocks{
        std::pair{o[0], cfg.input_features()}, std::pair{o[2], cfg.hidden}, std::pair{o[4], cfg.hidden}};
    const std::array<std::size_t, 3> ends{o[1], o[3], o[5]};
    for (int b = 0; b < 3; ++b) {
        const double r = 1.0 / std::sqrt(static_cast<double>(blocks[b].second));
        std::uniform_real_distribution<double> u(-r, r);
        // float32-exact so a saved checkpoint reloads bit-identically
        for (std::size_t i = blocks[b].first; i < ends[b]; ++i) p.theta[i] = static_cast<float>(u(rng));
    }
    return p;
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
inline double sigmoid(double z)
{
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Bilinear tap of an upsampled grid: integer pixel -> grid coordinate with
/// cell centers aligned, clamped at the border.
struct Tap {
    int i0, i1;
    double w1;
};

inline Tap upsample_tap(int p, int grid, int size)
{
    const double s = static_cast<double>(size) / grid;
    const double g = std::clamp((p + 0.5) / s - 0.5, 0.0, static_cast<double>(grid - 1));
    const int i0 = std::min(static_cast<int>(std::floor(g)), grid - 1);
    return {i0, std::min(i0 + 1, grid - 1), g - i0};
}

} // namespace detail

/// Intermediate activations kept for the backward pass.
struct EstimatorTape {
    Eigen::VectorXd x, z1, a1, z2, a2, out;
};

inline void check_input(const EstimatorConfig& cfg, const ImageBuffer& image)
{
    if (image.width != cfg.input_size || image.height != cfg.input_size || image.channels != 3)
        fail(ErrorCode::ShapeMismatch, "estimator expects a " + std::to_string(cfg.input_size) + "x" +
                                           std::to_string(cfg.input_size) + "x3 image, got " + std::to_string(image.width) +
                                           "x" + std::to_string(image.height) + "x" + std::to_string(image.channels));
}

inline Representation estimator_forward(const EstimatorParams& p, const ImageBuffer& image, EstimatorTape* tape = nullptr)
{
    const auto& cfg = p.config;
    check_input(cfg, image);
    if (p.theta.size() != cfg.parameter_count()) fail(ErrorCode::ShapeMismatch, "theta size does not match the layout");
    const auto o = cfg.layout();
    const int in = cfg.input_features(), h = cfg.hidden, nout = cfg.outputs();
    const int ps = cfg.pooled_side();

    Eigen::VectorXd x(in);
    const double inv = 1.0 / (cfg.pool * cfg.pool);
    for (int py = 0; py < ps; ++py)
        for (int px = 0; px < ps; ++px)
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int dy = 0; dy < cfg.pool; ++dy)
                    for (int dx = 0; dx < cfg.pool; ++dx) s += image.at(px * cfg.pool + dx, py * cfg.pool + dy, c);
                x[(py * ps + px) * 3 + c] = s * inv - 0.5;
            }

    const double* t = p.theta.data();
    Eigen::Map<const detail::RowMat> w1(t + o[0], h, in), w2(t + o[2], h, h), w3(t + o[4], nout, h);
    Eigen::Map<const Eigen::VectorXd> b1(t + o[1], h), b2(t + o[3], h), b3(t + o[5], nout);
    const Eigen::VectorXd z1 = w1 * x + b1;
    const Eigen::VectorXd a1 = z1.unaryExpr([](double v) { return detail::softplus(v); });
    const Eigen::VectorXd z2 = w2 * a1 + b2;
    const Eigen::VectorXd a2 = z2.unaryExpr([](double v) { return detail::softplus(v); });
    const Eigen::VectorXd out = (w3 * a2 + b3).unaryExpr([](double v) { return detail::sigmoid(v); });
    if (tape) *tape = {x, z1, a1, z2, a2, out};

    const int n = cfg.input_size;
    if (cfg.kind == RepresentationKind::Sparse) {
        Points2 corners(8);
        for (int i = 0; i < 8; ++i) corners[i] = Vec2(out[2 * i] * n, out[2 * i + 1] * n);
        return Representation::sparse(std::move(corners));
    }
    const int g = cfg.dense_grid;
    ImageBuffer coords(n, n, 3), mask(n, n, 1);
    for (int y = 0; y < n; ++y) {
        const auto ty = detail::upsample_tap(y, g, n);
        for (int xx = 0; xx < n; ++xx) {
            const auto tx = detail::upsample_tap(xx, g, n);
            for (int c = 0; c < 4; ++c) {
                auto cell = [&](int gx, int gy) { return out[(gy * g + gx) * 4 + c]; };
                const double v = (1 - ty.w1) * ((1 - tx.w1) * cell(tx.i0, ty.i0) + tx.w1 * cell(tx.i1, ty.i0)) +
                                 ty.w1 * ((1 - tx.w1) * cell(tx.i0, ty.i1) + tx.w1 * cell(tx.i1, ty.i1));
                if (c < 3)
                    coords.at(xx, y, c) = v;
                else
                    mask.at(xx, y) = v;
            }
        }
    }
    return Representation::dense(std::move(coords), std::move(mask));
}

struct EstimatorGrad {
    std::vector<double> theta;
    ImageBuffer image;  // gradient w.r.t. the input crop
};

/// Reverse-mode gradient of <cotangent, estimator_forward(p, image)>.
inline EstimatorGrad estimator_backward(const EstimatorParams& p, const ImageBuffer& image, const Representation& cotangent,
                                        const EstimatorTape* tape_in = nullptr)
{
    const auto& cfg = p.config;
    check_input(cfg, image);
    if (cotangent.kind != cfg.kind) fail(ErrorCode::KindMismatch, "cotangent kind differs from estimator head");
    EstimatorTape local;
    if (!tape_in) {
        estimator_forward(p, image, &local);
        tape_in = &local;
    }
    const auto& tp = *tape_in;
    const auto o = cfg.layout();
    const int in = cfg.input_features(), h = cfg.hidden, nout = cfg.outputs();
    const int n = cfg.input_size;

    Eigen::VectorXd d_out = Eigen::VectorXd::Zero(nout);
    if (cfg.kind == RepresentationKind::Sparse) {
        if (cotangent.corners.size() != 8) fail(ErrorCode::ShapeMismatch, "sparse cotangent needs 8 corners");
        for (int i = 0; i < 8; ++i) {
            d_out[2 * i] = cotangent.corners[i].x() * n;
            d_out[2 * i + 1] = cotangent.corners[i].y() * n;
        }
    } else {
        if (cotangent.coords.width != n || cotangent.coords.height != n || cotangent.mask.width != n ||
            cotangent.mask.height != n)
            fail(ErrorCode::ShapeMismatch, "dense cotangent size differs from estimator input");
        const int g = cfg.dense_grid;
        for (int y = 0; y < n; ++y) {
            const auto ty = detail::upsample_tap(y, g, n);
            for (int xx = 0; xx < n; ++xx) {
                const auto tx = detail::upsample_tap(xx, g, n);
                for (int c = 0; c < 4; ++c) {
                    const double gv = c < 3 ? cotangent.coords.at(xx, y, c) : cotangent.mask.at(xx, y);
                    if (gv == 0.0) continue;
                    d_out[(ty.i0 * g + tx.i0) * 4 + c] += gv * (1 - ty.w1) * (1 - tx.w1);
                    d_out[(ty.i0 * g + tx.i1) * 4 + c] += gv * (1 - ty.w1) * tx.w1;
                    d_out[(ty.i1 * g + tx.i0) * 4 + c] += gv * ty.w1 * (1 - tx.w1);
                    d_out[(ty.i1 * g + tx.i1) * 4 + c] += gv * ty.w1 * tx.w1;
                }
            }
        }
    }

    const double* t = p.theta.data();
    Eigen::Map<const detail::RowMat> w1(t + o[0], h, in), w2(t + o[2], h, h), w3(t + o[4], nout, h);

    EstimatorGrad g;
    g.theta.assign(p.theta.size(), 0.0);
    double* gt = g.theta.data();
    Eigen::Map<detail::RowMat> gw1(gt + o[0], h, in), gw2(gt + o[2], h, h), gw3(gt + o[4], nout, h);
    Eigen::Map<Eigen::VectorXd> gb1(gt + o[1], h), gb2(gt + o[3], h), gb3(gt + o[5], nout);

    const Eigen::VectorXd dz3 = d_out.cwiseProduct(tp.out.cwiseProduct((1.0 - tp.out.array()).matrix()));
    gw3.noalias() = dz3 * tp.a2.transpose();
    gb3 = dz3;
    const Eigen::VectorXd dz2 = (w3.transpose() * dz3).cwiseProduct(tp.z2.unaryExpr([](double v) { return detail::sigmoid(v); }));
    gw2.noalias() = dz2 * tp.a1.transpose();
    gb2 = dz2;
    const Eigen::VectorXd dz1 = (w2.transpose() * dz2).cwiseProduct(tp.z1.unaryExpr([](double v) { return detail::sigmoid(v); }));
    gw1.noalias() = dz1 * tp.x.transpose();
    gb1 = dz1;

    const Eigen::VectorXd dx = w1.transpose() * dz1;
    g.image = ImageBuffer(n, n, 3);
    const int ps = cfg.pooled_side();
    const double inv = 1.0 / (cfg.pool * cfg.pool);
    for (int y = 0; y < n; ++y)
        for (int xx = 0; xx < n; ++xx)
            for (int c = 0; c < 3; ++c) g.image.at(xx, y, c) = dx[((y / cfg.pool) * ps + xx / cfg.pool) * 3 + c] * inv;
    return g;
}

// ---- checkpoint I/O: PSKF float32 theta plus a key=value sidecar -----------

using Metadata = std::map<std::string, std::string>;

inline void save_estimator(const std::string& path, const EstimatorParams& p, const Metadata& extra = {})
{
    write_pskf(path, static_cast<int>(p.theta.size()), 1, 1, p.theta);
    std::ofstream side(path + ".txt");
    if (!side) fail(ErrorCode::IoError, path + ".txt: cannot open for writing");
    side << "kind=" << to_string(p.config.kind) << "\n"
         << "input_size=" << p.config.input_size << "\n"
         << "pool=" << p.config.pool << "\n"
         << "hidden=" << p.config.hidden << "\n"
         << "dense_grid=" << p.config.dense_grid << "\n"
         << "parameters=" << p.theta.size() << "\n";
    for (const auto& [key, value] : extra) side << key << "=" << value << "\n";
    if (!side) fail(ErrorCode::IoError, path + ".txt: write failed");
}

inline Metadata read_metadata(const std::string& path)
{
    std::ifstream in(path);
    if (!in) fail(ErrorCode::MissingCheckpoint, path + ": not found");
    Metadata m;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        m[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return m;
}

inline EstimatorParams load_estimator(const std::string& path, Metadata* meta_out = nullptr)
{
    const auto meta = read_metadata(path + ".txt");
    auto get = [&](const char* key) {
        const auto it = meta.find(key);
        if (it == meta.end()) fail(ErrorCode::ParseError, path + ".txt: missing key " + key);
        return it->second;
    };
    EstimatorParams p;
    p.config.kind = parse_representation_kind(get("kind"));
    p.config.input_size = std::stoi(get("input_size"));
    p.config.pool = std::stoi(get("pool"));
    p.config.hidden = std::stoi(get("hidden"));
    p.config.dense_grid = std::stoi(get("dense_grid"));
    p.config.validate();
    const auto img = read_pskf(path);
    if (img.data.size() != p.config.parameter_count())
        fail(ErrorCode::ShapeMismatch, path + ": parameter count " + std::to_string(img.data.size()) + " does not match layout " +
                                           std::to_string(p.config.parameter_count()));
    p.theta = img.data;
    if (meta_out) *meta_out = meta;
    return p;
}

} // namespace psk
