// psk: gen | train | eval | check | experiment
#include "psk/cli.hpp"

#include <CLI11.hpp>

using namespace psk;

int main(int argc, char** argv)
{
    CLI::App app{"psk - differentiable-geometry toolkit for label-free 6D pose learning"};
    app.require_subcommand(1);

    cli::GenOptions gen;
    std::string gen_domain = "synthetic";
    auto* g = app.add_subcommand("gen", "render a dataset of scenes (PNG + pose/bbox CSV + manifest)");
    g->add_option("--mesh", gen.mesh, "OBJ path or builtin:textured_box")->capture_default_str();
    g->add_option("--out", gen.out, "output directory")->required();
    g->add_option("--n", gen.n, "number of samples")->required();
    g->add_option("--domain", gen_domain, "synthetic | pseudo_real")->capture_default_str();
    g->add_option("--seed", gen.seed, "dataset seed (PSK_SEED overrides)")->capture_default_str();
    g->add_option("--size", gen.image_size, "image side in pixels")->capture_default_str();
    g->add_option("--focal", gen.focal, "focal length in pixels")->capture_default_str();

    cli::TrainOptions train;
    auto* t = app.add_subcommand("train", "run one training stage (0, 1 or 2)");
    t->add_option("--config", train.config, "key = value config file");
    t->add_option("--stage", train.stage, "0 | 1 | 2")->required();
    t->add_option("--out", train.out, "run directory (checkpoints, CSV, manifests)")->required();
    t->add_option("--synthetic", train.synthetic, "synthetic dataset directory");
    t->add_option("--pseudo-real", train.pseudo_real, "unlabeled pseudo-real dataset directory");
    t->add_option("--mesh", train.mesh, "OBJ path or builtin:textured_box")->capture_default_str();
    t->add_option("--init", train.init, "stage n-1 checkpoint (default <out>/stage{n-1}.pskf)");
    t->add_flag("--resume", train.resume, "continue from <out>/stage{n}.state.pskf");
    t->add_option("--stop-after-epoch", train.stop_after_epoch, "stop once this many epochs are done");
    t->add_option("--threads", train.threads, "worker threads (default from config, 1)");

    cli::EvalOptions ev;
    auto* e = app.add_subcommand("eval", "ADD/ADI accuracy of a checkpoint on a dataset");
    e->add_option("--checkpoint", ev.checkpoint, "estimator checkpoint (.pskf)");
    e->add_option("--dataset", ev.dataset, "dataset directory")->required();
    e->add_option("--mesh", ev.mesh, "OBJ path or builtin:textured_box")->capture_default_str();
    e->add_option("--config", ev.config, "config for crop settings");
    e->add_flag("--symmetric", ev.symmetric, "ADI instead of ADD");
    e->add_option("--out", ev.out, "metrics CSV (default ./metrics.csv)");
    e->add_option("--threads", ev.threads, "worker threads")->capture_default_str();
    e->add_flag("--oracle-gt", ev.oracle_gt, "use ground-truth poses as predictions");

    std::string suite = "all";
    bool inject = false;
    auto* c = app.add_subcommand("check", "finite-difference and oracle self-checks");
    c->add_option("--suite", suite, "grad | pnp | warp | all")->capture_default_str();
    c->add_flag("--inject-fault", inject, "flip analytic gradient signs (harness self-test)")->group("");

    std::string ex_config, ex_out, ex_mesh = "builtin:textured_box";
    ExperimentSettings ex;
    auto* x = app.add_subcommand("experiment", "desk-scale two-stage experiment, evaluated after every stage");
    x->add_option("--config", ex_config, "key = value config file");
    x->add_option("--mesh", ex_mesh, "OBJ path or builtin:textured_box")->capture_default_str();
    x->add_option("--data-seed", ex.data_seed, "dataset seed")->capture_default_str();
    x->add_option("--out", ex_out, "report CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : cli::kExitConfig;
    }

    try {
        if (*g) {
            gen.domain = parse_domain(gen_domain);
            cli::cmd_gen(gen);
        } else if (*t) {
            cli::cmd_train(train);
        } else if (*e) {
            cli::cmd_eval(ev);
        } else if (*c) {
            return cli::cmd_check(suite, inject) ? cli::kExitFailed : cli::kExitOk;
        } else if (*x) {
            cli::cmd_experiment(ex_config, ex, ex_mesh, ex_out);
        }
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return cli::exit_code(err.code());
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return cli::kExitData;
    }
    return cli::kExitOk;
}
