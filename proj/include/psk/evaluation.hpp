#pragma once

// ADD / ADI pose errors and the 10%-of-diameter accuracy table.

#include "psk/losses.hpp"

#include <ostream>

namespace psk {

inline constexpr double kAddThresholdFraction = 0.1;

/// Mean distance between corresponding model points under the two poses.
inline double add_metric(const Pose& pred, const Pose& gt, const TriangleMesh& mesh)
{
    if (mesh.empty()) fail(ErrorCode::EmptyMesh, "ADD needs a non-empty mesh");
    return mean_vertex_distance(pred, gt, model_points(mesh)).value;
}

/// Mean over gt-transformed points of the distance to the nearest
/// pred-transformed point (exact, O(n^2)).
inline double adi_metric(const Pose& pred, const Pose& gt, const TriangleMesh& mesh)
{
    if (mesh.empty()) fail(ErrorCode::EmptyMesh, "ADI needs a non-empty mesh");
    const auto pts = model_points(mesh);
    const auto a = transform_points(gt, pts);
    const auto b = transform_points(pred, pts);
    double sum = 0;
    for (const auto& p : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : b) best = std::min(best, (p - q).squaredNorm());
        sum += std::sqrt(best);
    }
    return sum / static_cast<double>(a.size());
}

struct MetricResult {
    std::vector<double> errors;  // meters, per sample
    double threshold = 0.0;      // meters
    double accuracy = 0.0;       // fraction with error < threshold
    bool symmetric = false;      // ADI instead of ADD

    double mean_error() const
    {
        double s = 0;
        for (double e : errors) s += e;
        return errors.empty() ? 0.0 : s / static_cast<double>(errors.size());
    }
    double median_error() const
    {
        if (errors.empty()) return 0.0;
        auto v = errors;
        const std::size_t m = v.size() / 2;
        std::nth_element(v.begin(), v.begin() + m, v.end());
        if (v.size() % 2) return v[m];
        const double hi = v[m];
        return 0.5 * (*std::max_element(v.begin(), v.begin() + m) + hi);
    }
};

inline MetricResult accuracy_table(std::span<const Pose> preds, std::span<const Pose> gts, const TriangleMesh& mesh,
                                   bool symmetric, double threshold_fraction = kAddThresholdFraction)
{
    if (preds.size() != gts.size())
        fail(ErrorCode::LengthMismatch, "predictions (" + std::to_string(preds.size()) + ") and ground truths (" +
                                            std::to_string(gts.size()) + ") differ in length");
    if (preds.empty()) fail(ErrorCode::LengthMismatch, "accuracy table over an empty list");
    MetricResult r;
    r.symmetric = symmetric;
    r.threshold = threshold_fraction * mesh.diameter;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double e = symmetric ? adi_metric(preds[i], gts[i], mesh) : add_metric(preds[i], gts[i], mesh);
        r.errors.push_back(e);
        hits += e < r.threshold ? 1 : 0;
    }
    r.accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
    return r;
}

/// CSV: object, n, add_accuracy, mean_add, threshold.
inline void write_metrics_csv(std::ostream& out, const std::string& object, const MetricResult& r)
{
    out << "object,n,add_accuracy,mean_add,threshold\n";
    out.precision(17);
    out << object << ',' << r.errors.size() << ',' << r.accuracy << ',' << r.mean_error() << ',' << r.threshold << '\n';
}

} // namespace psk
