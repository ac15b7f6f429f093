#pragma once

// The training stages:
//   0  supervised pretraining on synthetic crops, first layer frozen
//   1  self-supervision on unlabeled pseudo-real images (pose consistency
//      between the silhouette-masked image and a render of its own
//      prediction), mixed with synthetic supervision
//   2  warp alignment between predicted view pairs with MS-SSIM
// plus pair sampling, evaluation and the resumable training state.

#include "psk/config.hpp"
#include "psk/evaluation.hpp"
#include "psk/optim.hpp"
#include "psk/warp.hpp"

#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

namespace psk {

using Dataset = std::vector<SceneSample>;

/// Generator for (seed, stage, epoch); independent of everything else so a
/// resumed run sees the same stream.
inline std::mt19937_64 epoch_rng(std::uint64_t seed, int stage, int epoch)
{
    std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(stage), static_cast<std::uint32_t>(epoch)};
    return std::mt19937_64(ss);
}

/// f(i) for i in [0, n) on up to `threads` workers; results come back in
/// index order so reductions over them do not depend on the thread count.
template <class F>
auto parallel_map(std::size_t n, int threads, F&& f) -> std::vector<decltype(f(std::size_t{}))>
{
    std::vector<decltype(f(std::size_t{}))> out(n);
    const int nt = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
        return out;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nt);
    for (int t = 0; t < nt; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += nt) out[i] = f(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

inline void add_into(std::vector<double>& acc, const std::vector<double>& g, double scale = 1.0)
{
    if (g.empty()) return;
    if (acc.empty()) acc.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += scale * g[i];
}

inline Representation add_representations(const Representation& a, const Representation& b)
{
    auto fa = a.flatten();
    const auto fb = b.flatten();
    if (fa.size() != fb.size()) fail(ErrorCode::ShapeMismatch, "representation layouts differ");
    for (std::size_t i = 0; i < fa.size(); ++i) fa[i] += fb[i];
    Representation out = a;
    out.assign_flat(fa);
    return out;
}

inline Representation scale_representation(const Representation& a, double s)
{
    auto f = a.flatten();
    for (auto& v : f) v *= s;
    Representation out = a;
    out.assign_flat(f);
    return out;
}

// ---- logging -------------------------------------------------------------------

struct EpochLog {
    int stage = 0, epoch = 0;
    double lr = 0;
    double l_pose = 0, l_sup = 0, l_percep = 0, l_warp = 0, l_total = 0;
    double add_acc = std::numeric_limits<double>::quiet_NaN();
    int used = 0, skipped = 0;
};

inline constexpr const char* kLossCsvHeader = "epoch,l_pose,l_sup,l_percep,l_total,add_acc,l_warp,skipped,used,lr,stage";

inline void write_loss_csv(std::ostream& out, const std::vector<EpochLog>& log)
{
    out << kLossCsvHeader << "\n";
    out.precision(17);
    for (const auto& e : log)
        out << e.epoch << ',' << e.l_pose << ',' << e.l_sup << ',' << e.l_percep << ',' << e.l_total << ','
            << e.add_acc << ',' << e.l_warp << ',' << e.skipped << ',' << e.used << ',' << e.lr << ',' << e.stage
            << "\n";
}

inline std::vector<EpochLog> read_loss_csv(std::istream& in)
{
    std::vector<EpochLog> log;
    std::string line;
    if (!std::getline(in, line) || line != kLossCsvHeader) fail(ErrorCode::ParseError, "loss csv: bad header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 11) fail(ErrorCode::ParseError, "loss csv: expected 11 columns");
        auto num = [](const std::string& s) { return s == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(s); };
        EpochLog e;
        e.epoch = std::stoi(f[0]);
        e.l_pose = num(f[1]);
        e.l_sup = num(f[2]);
        e.l_percep = num(f[3]);
        e.l_total = num(f[4]);
        e.add_acc = num(f[5]);
        e.l_warp = num(f[6]);
        e.skipped = std::stoi(f[7]);
        e.used = std::stoi(f[8]);
        e.lr = num(f[9]);
        e.stage = std::stoi(f[10]);
        log.push_back(e);
    }
    return log;
}

// ---- resumable state --------------------------------------------------------------

struct TrainState {
    EstimatorParams params;
    AdamState adam;
    int stage = 0;
    int next_epoch = 0;
    std::vector<EpochLog> log;

    static TrainState start(EstimatorParams p, int stage)
    {
        TrainState s;
        s.adam = AdamState(p.theta.size());
        s.params = std::move(p);
        s.stage = stage;
        return s;
    }
};

/// Checkpoint = estimator (PSKF + sidecar) + Adam moments + loss log. All
/// stored values are float32-exact, so loading reproduces the state bit for bit.
inline void save_train_state(const std::string& path, const TrainState& s, Metadata extra = {})
{
    extra["stage"] = std::to_string(s.stage);
    extra["next_epoch"] = std::to_string(s.next_epoch);
    extra["adam_step"] = std::to_string(s.adam.step);
    save_estimator(path, s.params, extra);
    write_pskf(path + ".adam_m", static_cast<int>(s.adam.m.size()), 1, 1, s.adam.m);
    write_pskf(path + ".adam_v", static_cast<int>(s.adam.v.size()), 1, 1, s.adam.v);
    std::ofstream csv(path + ".log.csv");
    if (!csv) fail(ErrorCode::IoError, path + ".log.csv: cannot open for writing");
    write_loss_csv(csv, s.log);
}

inline TrainState load_train_state(const std::string& path)
{
    Metadata meta;
    TrainState s;
    s.params = load_estimator(path, &meta);
    auto get = [&](const char* key) {
        const auto it = meta.find(key);
        if (it == meta.end()) fail(ErrorCode::ParseError, path + ".txt: missing key " + key);
        return it->second;
    };
    s.stage = std::stoi(get("stage"));
    s.next_epoch = std::stoi(get("next_epoch"));
    s.adam.step = std::stoll(get("adam_step"));
    s.adam.m = read_pskf(path + ".adam_m").data;
    s.adam.v = read_pskf(path + ".adam_v").data;
    if (s.adam.m.size() != s.params.theta.size() || s.adam.v.size() != s.params.theta.size())
        fail(ErrorCode::ShapeMismatch, path + ": optimizer state does not match the parameters");
    std::ifstream csv(path + ".log.csv");
    if (!csv) fail(ErrorCode::MissingCheckpoint, path + ".log.csv: not found");
    s.log = read_loss_csv(csv);
    return s;
}

struct StageHooks {
    /// Accuracy reported in the log after each epoch (optional).
    std::function<double(const EstimatorParams&)> evaluate;
    /// Called after each epoch; return false to stop early.
    std::function<bool(const TrainState&)> after_epoch;
};

// ---- prediction / evaluation ---------------------------------------------------------

inline CropSettings eval_crop(const CropSettings& s)
{
    CropSettings c = s;
    c.jitter = false;
    c.augment = false;
    return c;
}

struct Prediction {
    Crop crop;
    Representation h;
    EstimatorTape tape;
    std::optional<SolvedRepresentation> solved;  // empty when PnP failed
};

inline Prediction predict(const EstimatorParams& p, const Crop& crop, const TriangleMesh& mesh)
{
    Prediction out;
    out.crop = crop;
    out.h = estimator_forward(p, crop.image, &out.tape);
    try {
        out.solved = solve_representation(out.h, mesh, crop.k);
    } catch (const Error&) {
    }
    return out;
}

inline std::optional<Pose> predict_pose(const EstimatorParams& p, const SceneSample& s, const TriangleMesh& mesh,
                                        const CropSettings& cs = {})
{
    std::mt19937_64 unused(0);
    const auto pr = predict(p, crop_and_jitter(s, eval_crop(cs), unused), mesh);
    if (!pr.solved) return std::nullopt;
    return pr.solved->result.pose;
}

/// ADD(-I) accuracy over the dataset; PnP failures count as misses with
/// infinite error.
inline MetricResult evaluate_estimator(const EstimatorParams& p, const Dataset& data, const TriangleMesh& mesh,
                                       bool symmetric, const CropSettings& cs = {}, int threads = 1)
{
    if (data.empty()) fail(ErrorCode::LengthMismatch, "evaluation on an empty dataset");
    const auto preds = parallel_map(data.size(), threads, [&](std::size_t i) { return predict_pose(p, data[i], mesh, cs); });
    std::vector<Pose> poses, gts;
    for (std::size_t i = 0; i < data.size(); ++i) {
        poses.push_back(preds[i].value_or(data[i].gt_pose));
        gts.push_back(data[i].gt_pose);
    }
    auto r = accuracy_table(poses, gts, mesh, symmetric);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!preds[i]) r.errors[i] = std::numeric_limits<double>::infinity();
        hits += r.errors[i] < r.threshold ? 1 : 0;
    }
    r.accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
    return r;
}

// ---- stage 0 -----------------------------------------------------------------------

struct SampleGrad {
    double loss = 0;
    std::vector<double> grad;
};

inline SampleGrad supervised_sample(const EstimatorParams& p, const SceneSample& s, const TriangleMesh& mesh,
                                    const TrainConfig& cfg, std::uint64_t sample_seed)
{
    std::mt19937_64 rng(sample_seed);
    const auto crop = crop_and_jitter(s, cfg.crop, rng);
    EstimatorTape tape;
    const auto h = estimator_forward(p, crop.image, &tape);
    const auto target = pi_map(s.gt_pose, mesh, crop.k, p.config.kind);
    const auto l = supervised_loss(h, target, cfg.delta());
    return {l.value, estimator_backward(p, crop.image, l.grad, &tape).theta};
}

inline void check_finite(double v, const char* what, int epoch)
{
    if (!std::isfinite(v))
        fail(ErrorCode::NonFinite, std::string(what) + " became non-finite in epoch " + std::to_string(epoch));
}

inline void run_stage0(const TrainConfig& cfg, const Dataset& synthetic, const TriangleMesh& mesh, TrainState& st,
                       const StageHooks& hooks = {})
{
    cfg.validate();
    if (synthetic.empty()) fail(ErrorCode::LengthMismatch, "stage 0 needs synthetic samples");
    const std::size_t frozen = cfg.freeze_first_layer ? st.params.config.first_layer_size() : 0;
    for (int epoch = st.next_epoch; epoch < cfg.epochs_stage0; ++epoch) {
        auto rng = epoch_rng(cfg.seed, 0, epoch);
        std::vector<std::size_t> order(synthetic.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        const double lr = cfg.lr_stage0_at(epoch);
        EpochLog log{0, epoch, lr};
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - b);
            std::vector<std::uint64_t> seeds(n);
            for (auto& s : seeds) s = rng();
            const auto res = parallel_map(n, cfg.threads, [&](std::size_t i) {
                return supervised_sample(st.params, synthetic[order[b + i]], mesh, cfg, seeds[i]);
            });
            std::vector<double> g;
            for (const auto& r : res) {
                add_into(g, r.grad, 1.0 / n);
                log.l_sup += r.loss;
            }
            adam_step(st.params.theta, g, st.adam, lr, {}, frozen);
            log.used += static_cast<int>(n);
        }
        log.l_sup /= std::max(1, log.used);
        log.l_total = cfg.weights.lambda_sup * log.l_sup;
        check_finite(log.l_total, "stage-0 loss", epoch);
        if (hooks.evaluate) log.add_acc = hooks.evaluate(st.params);
        st.log.push_back(log);
        st.next_epoch = epoch + 1;
        if (hooks.after_epoch && !hooks.after_epoch(st)) return;
    }
}

/// theta_0 from a fresh initialization.
inline EstimatorParams stage0_pretrain(const TrainConfig& cfg, const Dataset& synthetic, const TriangleMesh& mesh,
                                       const EstimatorConfig& ecfg = {})
{
    EstimatorConfig e = ecfg;
    e.kind = cfg.kind;
    auto st = TrainState::start(init_estimator(e, cfg.seed), 0);
    run_stage0(cfg, synthetic, mesh, st);
    return st.params;
}

// ---- stage 1 -----------------------------------------------------------------------

struct SelfSupTerm {
    bool skipped = false;
    std::string reason;
    double l_pose = 0, l_sup = 0, l_percep = 0;
    std::vector<double> grad;  // already weighted by the lambdas
};

/// One unlabeled image through the self-supervision graph. Never reads
/// s.gt_pose.
inline SelfSupTerm selfsup_sample(const EstimatorParams& p, const SceneSample& s, const TriangleMesh& mesh,
                                  const TrainConfig& cfg, std::uint64_t sample_seed)
{
    SelfSupTerm out;
    std::mt19937_64 rng(sample_seed);
    const auto& w = cfg.weights;
    try {
        const auto crop = crop_and_jitter(s, cfg.crop, rng);
        const auto& k = crop.k;
        // h1 -> y1 -> render
        EstimatorTape tape1;
        const auto h1 = estimator_forward(p, crop.image, &tape1);
        const auto s1 = solve_representation(h1, mesh, k);
        const Pose y1 = s1.result.pose;
        RenderSettings rs;
        rs.sigma = cfg.silhouette_sigma;
        const auto rendered = render(y1, mesh, k, rs);
        const auto occ = occlusion_augment(rendered.color, rendered.silhouette, rng, cfg.occlusion);
        const auto keep = patch_keep_mask(k.width, k.height, occ.patches);
        const auto masked = silhouette_mask(crop.image, occ.sil);

        // h2 on the masked real crop, h3 on the render
        EstimatorTape tape2, tape3;
        const auto h2 = estimator_forward(p, masked, &tape2);
        const auto h3 = estimator_forward(p, occ.image, &tape3);
        const auto pc = pose_consistency_loss(h2, h3, mesh, k);
        const auto target = pi_map(y1, mesh, k, p.config.kind);  // constant target
        const auto sup = supervised_loss(h3, target, cfg.delta());
        const bool want_percep = w.lambda_percep > 0;
        const auto percep = perceptual_proxy(occ.image, masked, want_percep);

        out.l_pose = pc.value;
        out.l_sup = sup.value;
        out.l_percep = percep.value;

        const auto g2 = estimator_backward(p, masked, scale_representation(pc.grad_h2, w.lambda_pose), &tape2);
        const auto g3 = estimator_backward(
            p, occ.image,
            add_representations(scale_representation(pc.grad_h3, w.lambda_pose), scale_representation(sup.grad, w.lambda_sup)),
            &tape3);
        out.grad = g2.theta;
        add_into(out.grad, g3.theta);

        if (cfg.grad_through_silhouette) {
            // masked = crop * (sil * keep): back to y1 through the soft silhouette
            ImageBuffer g_masked = g2.image;
            if (want_percep)
                for (std::size_t i = 0; i < g_masked.data.size(); ++i) g_masked.data[i] += w.lambda_percep * percep.grad_b.data[i];
            auto g_sil = silhouette_mask_vjp_sil(crop.image, g_masked);
            for (std::size_t i = 0; i < g_sil.data.size(); ++i) g_sil.data[i] *= keep.data[i];
            const Vec6 g_y1 = soft_silhouette_vjp(y1, mesh, k, cfg.silhouette_sigma, g_sil, rs);
            if (!g_y1.isZero(0.0)) {
                const auto g_h1 = solve_representation_vjp(h1, mesh, k, s1, g_y1);
                add_into(out.grad, estimator_backward(p, crop.image, g_h1, &tape1).theta);
            }
        }
        for (double v : out.grad)
            if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "non-finite self-supervision gradient");
    } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFinite) throw;
        out = {};
        out.skipped = true;
        out.reason = e.what();
    }
    return out;
}

inline void run_stage1(const TrainConfig& cfg, const Dataset& pseudo_real, const Dataset& synthetic,
                       const TriangleMesh& mesh, TrainState& st, const StageHooks& hooks = {})
{
    cfg.validate();
    if (pseudo_real.empty()) fail(ErrorCode::LengthMismatch, "stage 1 needs pseudo-real samples");
    const auto& w = cfg.weights;
    const bool use_syn = cfg.synthetic_ratio > 0 && w.lambda_sup > 0 && !synthetic.empty();
    for (int epoch = st.next_epoch; epoch < cfg.total_epochs_stage1(); ++epoch) {
        auto rng = epoch_rng(cfg.seed, 1, epoch);
        std::vector<std::size_t> order(pseudo_real.size()), syn_order(synthetic.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::iota(syn_order.begin(), syn_order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::shuffle(syn_order.begin(), syn_order.end(), rng);
        std::size_t syn_cursor = 0;
        const double lr = cfg.lr_stage1(epoch);
        EpochLog log{1, epoch, lr};
        double sup_self = 0, sup_syn = 0;
        int n_syn_total = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - b);
            const std::size_t n_syn = use_syn ? static_cast<std::size_t>(std::lround(cfg.synthetic_ratio * n)) : 0;
            std::vector<std::uint64_t> seeds(n + n_syn);
            for (auto& s : seeds) s = rng();
            std::vector<std::size_t> syn_idx(n_syn);
            for (auto& i : syn_idx) i = syn_order[syn_cursor++ % syn_order.size()];

            const auto real = parallel_map(n, cfg.threads, [&](std::size_t i) {
                return selfsup_sample(st.params, pseudo_real[order[b + i]], mesh, cfg, seeds[i]);
            });
            const auto syn = parallel_map(n_syn, cfg.threads, [&](std::size_t i) {
                return supervised_sample(st.params, synthetic[syn_idx[i]], mesh, cfg, seeds[n + i]);
            });
            int used = 0;
            for (const auto& r : real) used += r.skipped ? 0 : 1;
            log.used += used;
            log.skipped += static_cast<int>(n) - used;
            std::vector<double> g;
            for (const auto& r : real) {
                if (r.skipped) continue;
                add_into(g, r.grad, 1.0 / used);
                log.l_pose += r.l_pose;
                log.l_percep += r.l_percep;
                sup_self += r.l_sup;
            }
            for (const auto& r : syn) {
                add_into(g, r.grad, w.lambda_sup / static_cast<double>(n_syn));
                sup_syn += r.loss;
            }
            n_syn_total += static_cast<int>(n_syn);
            if (!g.empty()) adam_step(st.params.theta, g, st.adam, lr);
        }
        const int total = log.used + log.skipped;
        if (log.skipped > cfg.max_skip_fraction * total)
            fail(ErrorCode::NonConvergence, "stage 1 epoch " + std::to_string(epoch) + ": " + std::to_string(log.skipped) +
                                                " of " + std::to_string(total) + " images skipped (PnP/render failures)");
        const double nu = std::max(1, log.used);
        log.l_pose /= nu;
        log.l_percep /= nu;
        log.l_sup = sup_self / nu + (n_syn_total ? sup_syn / n_syn_total : 0.0);
        log.l_total = total_loss({log.l_pose, log.l_sup, log.l_percep, {}, {}, {}}, w).l_total;
        check_finite(log.l_total, "stage-1 loss", epoch);
        if (hooks.evaluate) log.add_acc = hooks.evaluate(st.params);
        st.log.push_back(log);
        st.next_epoch = epoch + 1;
        if (hooks.after_epoch && !hooks.after_epoch(st)) return;
    }
}

inline EstimatorParams stage1_selfsup(const TrainConfig& cfg, const EstimatorParams& theta0, const Dataset& pseudo_real,
                                      const Dataset& synthetic, const TriangleMesh& mesh)
{
    auto st = TrainState::start(theta0, 1);
    run_stage1(cfg, pseudo_real, synthetic, mesh, st);
    return st.params;
}

// ---- pair sampling -------------------------------------------------------------------

struct PairChoice {
    std::size_t source = 0, target = 0;
    double gap_deg = 0;
};

/// Unordered pairs i < j of successfully predicted poses with rotation gap
/// under the cap, the `count` smallest gaps, ties broken by (i, j).
inline std::vector<PairChoice> select_pairs(std::span<const std::optional<Pose>> poses, double max_deg, int count)
{
    std::vector<PairChoice> all;
    for (std::size_t i = 0; i < poses.size(); ++i)
        for (std::size_t j = i + 1; j < poses.size(); ++j) {
            if (!poses[i] || !poses[j]) continue;
            const double gap = rad2deg(rotation_angle(*poses[i], *poses[j]));
            if (gap < max_deg) all.push_back({i, j, gap});
        }
    if (all.empty()) fail(ErrorCode::NoPairs, "no view pair under " + std::to_string(max_deg) + " degrees");
    std::stable_sort(all.begin(), all.end(), [](const PairChoice& a, const PairChoice& b) { return a.gap_deg < b.gap_deg; });
    if (all.size() > static_cast<std::size_t>(count)) all.resize(count);
    return all;
}

/// Predict poses for the pool (deterministic crops) and pair them up.
inline std::vector<ViewPair> sample_pairs(const Dataset& images, const EstimatorParams& theta, const TriangleMesh& mesh,
                                          const TrainConfig& cfg)
{
    if (images.size() < 2) fail(ErrorCode::NoPairs, "pair sampling needs at least two images");
    const auto poses = parallel_map(images.size(), cfg.threads,
                                    [&](std::size_t i) { return predict_pose(theta, images[i], mesh, cfg.crop); });
    std::vector<ViewPair> out;
    for (const auto& c : select_pairs(poses, cfg.pair_angle_max_deg, cfg.pairs_per_batch))
        out.push_back(make_view_pair(c.source, c.target, images[c.source].image, images[c.target].image, *poses[c.source],
                                     *poses[c.target], cfg.pair_angle_max_deg));
    return out;
}

// ---- stage 2 -----------------------------------------------------------------------

struct WarpPairTerm {
    double loss = 0;
    Vec6 grad_source = Vec6::Zero();  // d loss / d pose (chart)
    Vec6 grad_target = Vec6::Zero();
};

/// 1 - MS-SSIM between the source warped by T = y_t y_s^-1 (depth rendered at
/// y_s) and the target masked by the silhouette rendered at y_t.
inline WarpPairTerm warp_pair_term(const ImageBuffer& source, const ImageBuffer& target, const Pose& ys, const Pose& yt,
                                   const TriangleMesh& mesh, const Intrinsics& k, double sigma = 1.0, bool want_grad = true)
{
    WarpPairTerm out;
    const auto depth = render_depth(ys, mesh, k);
    const auto sil = soft_silhouette(yt, mesh, k, sigma);
    const Pose t = relative_transform(ys, yt);
    const auto w = warp_source_to_target(source, depth, t, k);
    const auto l = warp_loss(w.warped, target, sil, &w.validity, want_grad);
    out.loss = l.value;
    if (!want_grad) return out;
    const Vec6 gt = warp_vjp(source, depth, t, k, l.grad_a);
    const auto rg = relative_transform_vjp(ys, yt, gt);
    out.grad_source = rg.source;
    out.grad_target = rg.target;
    return out;
}

inline void run_stage2(const TrainConfig& cfg, const Dataset& pseudo_real, const TriangleMesh& mesh, TrainState& st,
                       const StageHooks& hooks = {})
{
    cfg.validate();
    if (pseudo_real.size() < 2) fail(ErrorCode::NoPairs, "stage 2 needs at least two pseudo-real samples");
    for (int epoch = st.next_epoch; epoch < cfg.epochs_stage2; ++epoch) {
        auto rng = epoch_rng(cfg.seed, 2, epoch);
        std::vector<std::size_t> order(pseudo_real.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        const double lr = cfg.lr_stage2_at(epoch);
        EpochLog log{2, epoch, lr};
        int pairs_total = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.pair_pool) {
            const std::size_t n = std::min<std::size_t>(cfg.pair_pool, order.size() - b);
            if (n < 2) break;
            std::vector<std::uint64_t> seeds(n);
            for (auto& s : seeds) s = rng();
            const auto preds = parallel_map(n, cfg.threads, [&](std::size_t i) {
                std::mt19937_64 r(seeds[i]);
                return predict(st.params, crop_and_jitter(pseudo_real[order[b + i]], cfg.crop, r), mesh);
            });
            std::vector<std::optional<Pose>> poses(n);
            for (std::size_t i = 0; i < n; ++i)
                if (preds[i].solved) poses[i] = preds[i].solved->result.pose;
            std::vector<PairChoice> pairs;
            try {
                pairs = select_pairs(poses, cfg.pair_angle_max_deg, cfg.pairs_per_batch);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NoPairs) throw;
                log.skipped += static_cast<int>(n);  // whole batch skipped
                continue;
            }
            const auto terms = parallel_map(pairs.size(), cfg.threads, [&](std::size_t q) -> std::optional<WarpPairTerm> {
                try {
                    return warp_pair_term(pseudo_real[order[b + pairs[q].source]].image,
                                          pseudo_real[order[b + pairs[q].target]].image, *poses[pairs[q].source],
                                          *poses[pairs[q].target], mesh, pseudo_real[order[b + pairs[q].source]].k,
                                          cfg.silhouette_sigma);
                } catch (const Error& e) {
                    if (e.code() == ErrorCode::NonFinite) throw;
                    return std::nullopt;
                }
            });
            int used = 0;
            for (const auto& t : terms) used += t ? 1 : 0;
            log.used += used;
            log.skipped += static_cast<int>(pairs.size()) - used;
            if (used == 0) continue;
            // pose cotangents per image, then one backward pass per image
            std::vector<Vec6> gpose(n, Vec6::Zero());
            const double scale = cfg.lambda_warp / used;
            for (std::size_t q = 0; q < pairs.size(); ++q) {
                if (!terms[q]) continue;
                log.l_warp += terms[q]->loss;
                if (cfg.warp_source_grad) gpose[pairs[q].source] += scale * terms[q]->grad_source;
                gpose[pairs[q].target] += scale * terms[q]->grad_target;
            }
            pairs_total += used;
            const auto grads = parallel_map(n, cfg.threads, [&](std::size_t i) -> std::vector<double> {
                if (gpose[i].isZero(0.0) || !preds[i].solved) return {};
                const auto& pr = preds[i];
                try {
                    const auto gh = solve_representation_vjp(pr.h, mesh, pr.crop.k, *pr.solved, gpose[i]);
                    return estimator_backward(st.params, pr.crop.image, gh, &pr.tape).theta;
                } catch (const Error& e) {
                    if (e.code() == ErrorCode::NonFinite) throw;
                    return {};
                }
            });
            std::vector<double> g;
            for (const auto& gi : grads) add_into(g, gi);
            if (!g.empty()) adam_step(st.params.theta, g, st.adam, lr);
        }
        log.l_warp /= std::max(1, pairs_total);
        log.l_total = cfg.lambda_warp * log.l_warp;
        check_finite(log.l_total, "stage-2 loss", epoch);
        if (pairs_total == 0) fail(ErrorCode::NoPairs, "stage 2 epoch " + std::to_string(epoch) + ": no usable view pair");
        if (hooks.evaluate) log.add_acc = hooks.evaluate(st.params);
        st.log.push_back(log);
        st.next_epoch = epoch + 1;
        if (hooks.after_epoch && !hooks.after_epoch(st)) return;
    }
}

inline EstimatorParams stage2_warp_align(const TrainConfig& cfg, const EstimatorParams& theta1, const Dataset& pseudo_real,
                                         const TriangleMesh& mesh)
{
    auto st = TrainState::start(theta1, 2);
    run_stage2(cfg, pseudo_real, mesh, st);
    return st.params;
}

} // namespace psk
