#pragma once

// Adam over a flat parameter vector. Parameters and moments are rounded to
// float32 after every step so a checkpoint (stored as float32) resumes the
// exact same trajectory.

#include "psk/error.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace psk {

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long long step = 0;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

/// One update on theta[lo, hi); entries outside the range are left alone
/// (frozen) and so are their moments.
inline void adam_step(std::vector<double>& theta, std::span<const double> grad, AdamState& st, double lr,
                      const AdamSettings& s = {}, std::size_t lo = 0, std::size_t hi = static_cast<std::size_t>(-1))
{
    if (grad.size() != theta.size() || st.m.size() != theta.size() || st.v.size() != theta.size())
        fail(ErrorCode::ShapeMismatch, "adam: parameter, gradient and moment sizes differ");
    if (!(lr > 0.0)) fail(ErrorCode::InvalidArgument, "adam: learning rate must be positive");
    hi = std::min(hi, theta.size());
    ++st.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(st.step));
    for (std::size_t i = lo; i < hi; ++i) {
        const double g = grad[i];
        if (!std::isfinite(g)) fail(ErrorCode::NonFinite, "adam: non-finite gradient at index " + std::to_string(i));
        st.m[i] = round_f32(s.beta1 * st.m[i] + (1.0 - s.beta1) * g);
        st.v[i] = round_f32(s.beta2 * st.v[i] + (1.0 - s.beta2) * g * g);
        const double mh = st.m[i] / c1, vh = st.v[i] / c2;
        theta[i] = round_f32(theta[i] - lr * mh / (std::sqrt(vh) + s.eps));
    }
}

} // namespace psk
