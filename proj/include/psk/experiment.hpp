#pragma once

// Desk-scale two-stage experiment: synthetic-only pretraining, then
// self-supervision and warp alignment on unlabeled pseudo-real images,
// evaluated after every stage on held-out synthetic and pseudo-real scenes.

#include "psk/meshes.hpp"
#include "psk/pipeline.hpp"

#include <chrono>

namespace psk {

struct ExperimentSettings {
    int image_size = 128;
    double focal = 200.0;
    int n_synthetic = 300;
    int n_pseudo_real = 120;
    int n_test = 100;
    std::uint64_t data_seed = 1;
};

struct StageReport {
    int stage = 0;
    MetricResult synthetic;
    MetricResult pseudo_real;
    double seconds = 0;
};

struct ExperimentReport {
    std::vector<StageReport> stages;  // 0, 1, 2
    double seconds = 0;

    const StageReport& at(int s) const { return stages.at(static_cast<std::size_t>(s)); }
    /// Stage-0 synthetic minus pseudo-real accuracy.
    double gap() const { return at(0).synthetic.accuracy - at(0).pseudo_real.accuracy; }
    /// Fraction of the gap closed on pseudo-real by stage 1.
    double recovered() const { return (at(1).pseudo_real.accuracy - at(0).pseudo_real.accuracy) / gap(); }
    /// Relative pseudo-real median ADD reduction of stage 2 over stage 1.
    double stage2_median_reduction() const
    {
        return 1.0 - at(2).pseudo_real.median_error() / at(1).pseudo_real.median_error();
    }
};

inline Intrinsics experiment_intrinsics(const ExperimentSettings& s)
{
    Intrinsics k;
    k.fx = k.fy = s.focal;
    k.cx = k.cy = 0.5 * s.image_size;
    k.width = k.height = s.image_size;
    return k;
}

struct ExperimentData {
    Dataset synthetic, pseudo_real, test_synthetic, test_pseudo_real;
};

/// Four disjoint seeds; the two test sets share poses and backgrounds, so
/// the measured gap is purely photometric.
inline ExperimentData make_experiment_data(const TriangleMesh& mesh, const ExperimentSettings& s)
{
    const auto k = experiment_intrinsics(s);
    const std::uint64_t base = s.data_seed * 4;
    ExperimentData d;
    d.synthetic = generate_dataset(mesh, k, s.n_synthetic, Domain::Synthetic, base);
    d.pseudo_real = generate_dataset(mesh, k, s.n_pseudo_real, Domain::PseudoReal, base + 1);
    d.test_synthetic = generate_dataset(mesh, k, s.n_test, Domain::Synthetic, base + 2);
    d.test_pseudo_real = generate_dataset(mesh, k, s.n_test, Domain::PseudoReal, base + 2);
    return d;
}

using ExperimentLog = std::function<void(const std::string&)>;

inline ExperimentReport run_experiment(const TrainConfig& cfg, const ExperimentSettings& s, const TriangleMesh& mesh,
                                       const ExperimentLog& log = {})
{
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const auto data = make_experiment_data(mesh, s);
    ExperimentReport rep;
    auto evaluate = [&](int stage, const EstimatorParams& p, clock::time_point since) {
        StageReport r;
        r.stage = stage;
        r.synthetic = evaluate_estimator(p, data.test_synthetic, mesh, false, cfg.crop, cfg.threads);
        r.pseudo_real = evaluate_estimator(p, data.test_pseudo_real, mesh, false, cfg.crop, cfg.threads);
        r.seconds = std::chrono::duration<double>(clock::now() - since).count();
        if (log) {
            std::ostringstream os;
            os << "stage " << stage << ": synthetic acc " << r.synthetic.accuracy << " | pseudo_real acc "
               << r.pseudo_real.accuracy << ", median ADD " << r.pseudo_real.median_error() << " m (" << r.seconds << " s)";
            log(os.str());
        }
        rep.stages.push_back(r);
    };

    EstimatorConfig e;
    e.kind = cfg.kind;
    auto t = clock::now();
    auto st = TrainState::start(init_estimator(e, cfg.seed), 0);
    run_stage0(cfg, data.synthetic, mesh, st);
    evaluate(0, st.params, t);

    t = clock::now();
    st = TrainState::start(st.params, 1);
    run_stage1(cfg, data.pseudo_real, data.synthetic, mesh, st);
    evaluate(1, st.params, t);

    t = clock::now();
    st = TrainState::start(st.params, 2);
    run_stage2(cfg, data.pseudo_real, mesh, st);
    evaluate(2, st.params, t);

    rep.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    return rep;
}

} // namespace psk
