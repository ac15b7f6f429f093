#pragma once

// Commands behind the `psk` binary: gen, train, eval, check, experiment.
// Each writes a manifest (config snapshot, seed, git-style SHA-1 of every
// input, emitted paths) next to its outputs. No timestamps, so reruns with
// the same inputs are byte-identical.

#include "psk/checks.hpp"
#include "psk/experiment.hpp"
#include "psk/mesh_io.hpp"
#include "psk/png_io.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>

namespace psk::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// exit statuses
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;   // check suite reported a failure
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

inline int exit_code(ErrorCode c)
{
    switch (c) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument: return kExitConfig;
    case ErrorCode::IoError:
    case ErrorCode::ParseError:
    case ErrorCode::MissingCheckpoint:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::LengthMismatch:
    case ErrorCode::EmptyMesh:
    case ErrorCode::KindMismatch:
    case ErrorCode::TooSmall:
    case ErrorCode::CropOutOfBounds:
    case ErrorCode::DegenerateFace: return kExitData;
    default: return kExitNumerical;
    }
}

// ---- hashing / manifest -----------------------------------------------------------

inline std::string sha1_hex(std::string_view bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha1(), nullptr) != 1) fail(ErrorCode::IoError, "SHA-1 failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

/// Same id `git hash-object` prints for the file.
inline std::string git_blob_hash(std::string_view content)
{
    std::string blob = "blob " + std::to_string(content.size());
    blob.push_back('\0');
    blob.append(content);
    return sha1_hex(blob);
}

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, path + ": cannot open");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_file(const std::string& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, path + ": cannot open for writing");
    out << content;
    if (!out) fail(ErrorCode::IoError, path + ": write failed");
}

struct Manifest {
    json doc = json::object();
    json inputs = json::object();
    json outputs = json::array();

    explicit Manifest(const std::string& command) { doc["command"] = command; }

    void input(const std::string& role, const std::string& path)
    {
        if (fs::is_directory(path)) {
            // directory: hash over the sorted (name, blob hash) listing
            std::vector<std::string> names;
            for (const auto& e : fs::recursive_directory_iterator(path))
                if (e.is_regular_file() && e.path().filename() != "manifest.json")
                    names.push_back(fs::relative(e.path(), path).generic_string());
            std::sort(names.begin(), names.end());
            std::string listing;
            for (const auto& n : names) listing += n + " " + git_blob_hash(read_file((fs::path(path) / n).string())) + "\n";
            inputs[role] = {{"path", path}, {"tree_sha1", git_blob_hash(listing)}, {"files", names.size()}};
        } else {
            inputs[role] = {{"path", path}, {"blob_sha1", git_blob_hash(read_file(path))}};
        }
    }
    void output(const std::string& path) { outputs.push_back(path); }

    void write(const std::string& path)
    {
        doc["inputs"] = inputs;
        doc["outputs"] = outputs;
        write_file(path, doc.dump(2) + "\n");
    }
};

// ---- mesh and datasets on disk ----------------------------------------------------

inline constexpr const char* kBuiltinPrefix = "builtin:";

/// An OBJ path, or builtin:textured_box / builtin:cube.
inline TriangleMesh load_mesh(const std::string& spec)
{
    if (spec.rfind(kBuiltinPrefix, 0) == 0) {
        const auto name = spec.substr(std::string(kBuiltinPrefix).size());
        if (name == "textured_box") return make_textured_box();
        if (name == "cube") return make_cube(0.1);
        fail(ErrorCode::ConfigError, "unknown builtin mesh '" + name + "' (textured_box|cube)");
    }
    return load_obj(spec);
}

inline void mesh_input(Manifest& m, const std::string& spec)
{
    if (spec.rfind(kBuiltinPrefix, 0) == 0)
        m.inputs["mesh"] = {{"path", spec}};
    else
        m.input("mesh", spec);
}

inline constexpr const char* kSamplesHeader = "index,image,mask,domain,qw,qx,qy,qz,tx,ty,tz,bbox_x0,bbox_y0,bbox_x1,bbox_y1";
inline constexpr const char* kCameraHeader = "fx,fy,cx,cy,width,height";

struct GenOptions {
    std::string mesh = "builtin:textured_box";
    std::string out;
    int n = 0;
    Domain domain = Domain::Synthetic;
    std::uint64_t seed = 1;
    int image_size = 128;
    double focal = 200.0;
};

inline void write_dataset(const std::string& dir, const Dataset& data, const Intrinsics& k)
{
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    std::ostringstream cam;
    cam.precision(17);
    cam << kCameraHeader << "\n" << k.fx << ',' << k.fy << ',' << k.cx << ',' << k.cy << ',' << k.width << ',' << k.height << "\n";
    write_file((fs::path(dir) / "camera.csv").string(), cam.str());
    std::ostringstream csv;
    csv.precision(17);
    csv << kSamplesHeader << "\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::ostringstream name;
        name << std::setw(6) << std::setfill('0') << i << ".png";
        const auto& s = data[i];
        write_png((fs::path(dir) / "images" / name.str()).string(), s.image);
        write_png((fs::path(dir) / "masks" / name.str()).string(), s.silhouette);
        const auto& q = s.gt_pose.rotation;
        const auto& t = s.gt_pose.translation;
        csv << i << ",images/" << name.str() << ",masks/" << name.str() << ',' << to_string(s.domain) << ',' << q.w() << ','
            << q.x() << ',' << q.y() << ',' << q.z() << ',' << t.x() << ',' << t.y() << ',' << t.z() << ',' << s.bbox.x0
            << ',' << s.bbox.y0 << ',' << s.bbox.x1 << ',' << s.bbox.y1 << "\n";
    }
    write_file((fs::path(dir) / "samples.csv").string(), csv.str());
}

inline std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    return f;
}

/// Reads a directory written by `psk gen`; images come back quantized to
/// 8 bits exactly as stored.
inline Dataset load_dataset(const std::string& dir)
{
    if (!fs::is_directory(dir)) fail(ErrorCode::IoError, dir + ": dataset directory not found");
    std::istringstream cam(read_file((fs::path(dir) / "camera.csv").string()));
    std::string line;
    std::getline(cam, line);
    if (line != kCameraHeader || !std::getline(cam, line)) fail(ErrorCode::ParseError, dir + "/camera.csv: bad format");
    const auto c = split_csv(line);
    if (c.size() != 6) fail(ErrorCode::ParseError, dir + "/camera.csv: expected 6 columns");
    Intrinsics k;
    k.fx = std::stod(c[0]);
    k.fy = std::stod(c[1]);
    k.cx = std::stod(c[2]);
    k.cy = std::stod(c[3]);
    k.width = std::stoi(c[4]);
    k.height = std::stoi(c[5]);

    std::istringstream in(read_file((fs::path(dir) / "samples.csv").string()));
    std::getline(in, line);
    if (line != kSamplesHeader) fail(ErrorCode::ParseError, dir + "/samples.csv: bad header");
    Dataset out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 15) fail(ErrorCode::ParseError, dir + "/samples.csv line " + std::to_string(row) + ": expected 15 columns");
        try {
            SceneSample s;
            s.k = k;
            s.image = read_png((fs::path(dir) / f[1]).string());
            s.silhouette = read_png((fs::path(dir) / f[2]).string());
            s.domain = parse_domain(f[3]);
            s.gt_pose.rotation = Eigen::Quaterniond(std::stod(f[4]), std::stod(f[5]), std::stod(f[6]), std::stod(f[7])).normalized();
            s.gt_pose.translation = Vec3(std::stod(f[8]), std::stod(f[9]), std::stod(f[10]));
            s.bbox = {std::stod(f[11]), std::stod(f[12]), std::stod(f[13]), std::stod(f[14])};
            if (s.image.channels != 3 || s.image.width != k.width || s.image.height != k.height || s.silhouette.channels != 1)
                fail(ErrorCode::ShapeMismatch, "image/mask shape does not match camera.csv");
            out.push_back(std::move(s));
        } catch (const std::logic_error&) {
            fail(ErrorCode::ParseError, dir + "/samples.csv line " + std::to_string(row) + ": bad number");
        }
    }
    return out;
}

inline std::uint64_t seed_override(std::uint64_t seed)
{
    if (const char* env = std::getenv("PSK_SEED"); env && *env) {
        try {
            return std::stoull(env);
        } catch (const std::logic_error&) {
            fail(ErrorCode::ConfigError, std::string("PSK_SEED: not an unsigned integer: '") + env + "'");
        }
    }
    return seed;
}

inline void cmd_gen(const GenOptions& o, std::ostream& log = std::cout)
{
    if (o.out.empty()) fail(ErrorCode::ConfigError, "gen: --out is required");
    if (o.n < 0) fail(ErrorCode::ConfigError, "gen: --n must be >= 0");
    const auto mesh = load_mesh(o.mesh);
    const std::uint64_t seed = seed_override(o.seed);
    ExperimentSettings es;
    es.image_size = o.image_size;
    es.focal = o.focal;
    const auto k = experiment_intrinsics(es);
    const auto data = generate_dataset(mesh, k, o.n, o.domain, seed);
    write_dataset(o.out, data, k);
    Manifest m("gen");
    m.doc["seed"] = seed;
    m.doc["domain"] = to_string(o.domain);
    m.doc["n"] = o.n;
    m.doc["image_size"] = o.image_size;
    m.doc["focal"] = o.focal;
    mesh_input(m, o.mesh);
    m.output("camera.csv");
    m.output("samples.csv");
    m.output("images/");
    m.output("masks/");
    m.write((fs::path(o.out) / "manifest.json").string());
    log << "wrote " << o.n << " " << to_string(o.domain) << " samples to " << o.out << "\n";
}

// ---- train -------------------------------------------------------------------------

struct TrainOptions {
    std::string config;          // empty: defaults
    int stage = 0;
    std::string out;
    std::string synthetic;       // dataset dirs
    std::string pseudo_real;
    std::string mesh = "builtin:textured_box";
    std::string init;            // stage n-1 checkpoint; default <out>/stage{n-1}.pskf
    bool resume = false;
    int stop_after_epoch = -1;   // simulate an interruption
    int threads = 0;             // 0: from config
};

inline std::string stage_path(const std::string& out, int stage, const std::string& suffix)
{
    return (fs::path(out) / ("stage" + std::to_string(stage) + suffix)).string();
}

struct TrainOutcome {
    bool finished = false;
    std::string checkpoint;
    TrainState state;
};

inline TrainOutcome cmd_train(const TrainOptions& o, std::ostream& log = std::cout)
{
    if (o.stage < 0 || o.stage > 2) fail(ErrorCode::ConfigError, "train: --stage must be 0, 1 or 2");
    if (o.out.empty()) fail(ErrorCode::ConfigError, "train: --out is required");
    TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_config(o.config);
    cfg.seed = seed_override(cfg.seed);
    if (o.threads > 0) cfg.threads = o.threads;
    cfg.validate();
    const auto mesh = load_mesh(o.mesh);

    Manifest m("train");
    m.doc["stage"] = o.stage;
    m.doc["seed"] = cfg.seed;
    m.doc["config"] = format_config(cfg);
    if (!o.config.empty()) m.input("config", o.config);
    mesh_input(m, o.mesh);

    // the stage n-1 checkpoint comes first: a missing one is the most common mistake
    std::string init = o.init;
    if (o.stage > 0) {
        if (init.empty()) init = stage_path(o.out, o.stage - 1, ".pskf");
        if (!fs::exists(init) || !fs::exists(init + ".txt"))
            fail(ErrorCode::MissingCheckpoint,
                 "stage " + std::to_string(o.stage) + " needs the stage-" + std::to_string(o.stage - 1) + " checkpoint " + init);
        m.input("init", init);
    }

    auto need_data = [&](const std::string& dir, const char* flag) {
        if (dir.empty()) fail(ErrorCode::ConfigError, std::string("train: stage ") + std::to_string(o.stage) + " needs " + flag);
        return load_dataset(dir);
    };
    Dataset syn, real;
    if (o.stage == 0 || (!o.synthetic.empty() && o.stage == 1)) {
        syn = need_data(o.synthetic, "--synthetic");
        m.input("synthetic", o.synthetic);
    }
    if (o.stage > 0) {
        real = need_data(o.pseudo_real, "--pseudo-real");
        m.input("pseudo_real", o.pseudo_real);
    }

    fs::create_directories(o.out);
    const auto state_path = stage_path(o.out, o.stage, ".state.pskf");
    TrainState st;
    if (o.resume && fs::exists(state_path)) {
        st = load_train_state(state_path);
        if (st.stage != o.stage) fail(ErrorCode::ShapeMismatch, state_path + ": state belongs to another stage");
        log << "resuming stage " << o.stage << " at epoch " << st.next_epoch << "\n";
    } else if (o.stage == 0) {
        EstimatorConfig e;
        e.kind = cfg.kind;
        e.input_size = cfg.crop.out_size;
        st = TrainState::start(init_estimator(e, cfg.seed), 0);
    } else {
        st = TrainState::start(load_estimator(init), o.stage);
    }
    if (st.params.config.kind != cfg.kind)
        fail(ErrorCode::KindMismatch, "checkpoint representation differs from config kind");
    if (st.params.config.input_size != cfg.crop.out_size)
        fail(ErrorCode::ShapeMismatch, "checkpoint input size differs from the crop size");

    bool stopped = false;
    StageHooks hooks;
    hooks.after_epoch = [&](const TrainState& s) {
        const auto& e = s.log.back();
        log << "stage " << e.stage << " epoch " << e.epoch << " lr " << e.lr << " loss " << e.l_total << " used " << e.used
            << " skipped " << e.skipped << "\n";
        save_train_state(state_path, s);
        if (o.stop_after_epoch >= 0 && s.next_epoch >= o.stop_after_epoch) {
            stopped = true;
            return false;
        }
        return true;
    };
    switch (o.stage) {
    case 0: run_stage0(cfg, syn, mesh, st, hooks); break;
    case 1: run_stage1(cfg, real, syn, mesh, st, hooks); break;
    default: run_stage2(cfg, real, mesh, st, hooks); break;
    }

    TrainOutcome res;
    res.state = st;
    const auto csv_path = stage_path(o.out, o.stage, "_loss.csv");
    {
        std::ostringstream csv;
        write_loss_csv(csv, st.log);
        write_file(csv_path, csv.str());
    }
    m.output(state_path);
    m.output(csv_path);
    if (!stopped) {
        res.checkpoint = stage_path(o.out, o.stage, ".pskf");
        save_estimator(res.checkpoint, st.params, {{"stage", std::to_string(o.stage)}, {"seed", std::to_string(cfg.seed)}});
        m.output(res.checkpoint);
        res.finished = true;
    }
    m.doc["finished"] = res.finished;
    m.doc["epochs_done"] = st.next_epoch;
    m.write(stage_path(o.out, o.stage, "_manifest.json"));
    log << (res.finished ? "finished stage " : "stopped stage ") << o.stage << " after epoch " << st.next_epoch << "\n";
    return res;
}

// ---- eval --------------------------------------------------------------------------

struct EvalOptions {
    std::string checkpoint;
    std::string dataset;
    std::string mesh = "builtin:textured_box";
    std::string config;      // crop settings; empty: defaults
    bool symmetric = false;
    bool oracle_gt = false;  // gt poses as predictions (harness check)
    std::string out;         // metrics CSV; empty: ./metrics.csv (inputs are never written)
    int threads = 1;
};

inline MetricResult cmd_eval(const EvalOptions& o, std::ostream& log = std::cout)
{
    if (o.dataset.empty()) fail(ErrorCode::ConfigError, "eval: --dataset is required");
    const TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_config(o.config);
    const auto mesh = load_mesh(o.mesh);
    const auto data = load_dataset(o.dataset);
    Manifest m("eval");
    mesh_input(m, o.mesh);
    m.input("dataset", o.dataset);
    if (!o.config.empty()) m.input("config", o.config);
    MetricResult r;
    if (o.oracle_gt) {
        std::vector<Pose> gts;
        for (const auto& s : data) gts.push_back(s.gt_pose);
        r = accuracy_table(gts, gts, mesh, o.symmetric);
    } else {
        if (o.checkpoint.empty()) fail(ErrorCode::ConfigError, "eval: --checkpoint is required");
        if (!fs::exists(o.checkpoint)) fail(ErrorCode::MissingCheckpoint, o.checkpoint + ": not found");
        m.input("checkpoint", o.checkpoint);
        const auto p = load_estimator(o.checkpoint);
        auto crop = cfg.crop;
        if (p.config.input_size != crop.out_size)
            fail(ErrorCode::ShapeMismatch, o.checkpoint + ": input size " + std::to_string(p.config.input_size) +
                                               " does not match the crop size " + std::to_string(crop.out_size));
        r = evaluate_estimator(p, data, mesh, o.symmetric, crop, o.threads);
    }
    const std::string out = o.out.empty() ? std::string("metrics.csv") : o.out;
    std::ostringstream csv;
    write_metrics_csv(csv, fs::path(o.mesh).stem().string(), r);
    write_file(out, csv.str());
    m.doc["symmetric"] = o.symmetric;
    m.doc["oracle_gt"] = o.oracle_gt;
    m.doc["accuracy"] = r.accuracy;
    m.output(out);
    m.write(out + ".manifest.json");
    log << (o.symmetric ? "ADI" : "ADD") << "-0.1d accuracy " << r.accuracy << " over " << r.errors.size()
        << " samples (mean error " << r.mean_error() << " m, threshold " << r.threshold << " m)\n";
    return r;
}

// ---- check -------------------------------------------------------------------------

inline void print_check(std::ostream& out, const CheckResult& r)
{
    out << (r.passed() ? "PASS " : "FAIL ") << std::left << std::setw(38) << r.name << std::right << " configs "
        << std::setw(3) << r.configs << "  value " << std::scientific << std::setprecision(3) << r.value
        << (r.lower_is_better ? " < " : " >= ") << r.tolerance << std::defaultfloat << std::setprecision(6) << "  ("
        << std::fixed << std::setprecision(1) << r.seconds << " s)" << std::defaultfloat << std::setprecision(6) << "\n";
}

/// Returns the number of failed checks.
inline int cmd_check(const std::string& suite, bool inject_fault, std::ostream& out = std::cout)
{
    inject_sign_fault() = inject_fault;
    const auto results = checks::run_suite(suite);
    inject_sign_fault() = false;
    int failed = 0;
    for (const auto& r : results) {
        print_check(out, r);
        failed += r.passed() ? 0 : 1;
    }
    out << (failed ? "FAILED: " : "all passed: ") << results.size() - failed << "/" << results.size() << " checks\n";
    return failed;
}

// ---- experiment --------------------------------------------------------------------

inline ExperimentReport cmd_experiment(const std::string& config, const ExperimentSettings& s, const std::string& mesh_spec,
                                       const std::string& out, std::ostream& log = std::cout)
{
    TrainConfig cfg = config.empty() ? TrainConfig{} : load_config(config);
    cfg.seed = seed_override(cfg.seed);
    const auto mesh = load_mesh(mesh_spec);
    const auto rep = run_experiment(cfg, s, mesh, [&](const std::string& line) { log << line << std::endl; });
    log << "gap " << rep.gap() << ", stage-1 recovery " << rep.recovered() << ", stage-2 median ADD reduction "
        << rep.stage2_median_reduction() << " (" << rep.seconds << " s)\n";
    if (!out.empty()) {
        std::ostringstream csv;
        csv.precision(10);
        csv << "stage,domain,accuracy,mean_add,median_add,threshold\n";
        for (const auto& st : rep.stages)
            for (const auto* r : {&st.synthetic, &st.pseudo_real})
                csv << st.stage << ',' << (r == &st.synthetic ? "synthetic" : "pseudo_real") << ',' << r->accuracy << ','
                    << r->mean_error() << ',' << r->median_error() << ',' << r->threshold << "\n";
        write_file(out, csv.str());
        Manifest m("experiment");
        m.doc["seed"] = cfg.seed;
        m.doc["data_seed"] = s.data_seed;
        m.doc["config"] = format_config(cfg);
        if (!config.empty()) m.input("config", config);
        mesh_input(m, mesh_spec);
        m.output(out);
        m.write(out + ".manifest.json");
    }
    return rep;
}

} // namespace psk::cli
