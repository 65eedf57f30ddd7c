// mssm: scan benchmarks, property checks, gradient-flow runs, training and sweeps.
// Exit codes: 0 success, 1 check failure or divergence, 2 usage error, 3 data error.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "mssm/checks.hpp"
#include "mssm/gradient_lab.hpp"
#include "mssm/har/checkpoint.hpp"
#include "mssm/har/data.hpp"
#include "mssm/har/model.hpp"
#include "mssm/har/train.hpp"
#include "run_config.hpp"

namespace {

using namespace mssm;
using tools::RunConfig;
using tools::UsageError;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;
constexpr int kData = 3;

std::string num(double x) { return shortest(x); }
std::string num(std::size_t x) { return std::to_string(x); }

// ---------------------------------------------------------------------------
// Shared settings.

void declare_common(RunConfig& rc, const std::string& out)
{
    rc.declare("seed", "42", "random seed");
    rc.declare("out", out, "output directory");
}

void declare_model(RunConfig& rc, const har::ModelConfig& m, bool withVariant)
{
    if (withVariant) rc.declare("variant", har::variant_name(m.variant), "vanilla | momentum | complex | adam");
    rc.declare("d-model", num(m.dModel), "hidden width");
    rc.declare("n-layers", num(m.nLayers), "number of SSM blocks");
    rc.declare("d-state", num(m.dState), "state size per channel");
    rc.declare("kernel", num(m.kernel), "front-end convolution width (odd)");
    rc.declare("pooling", har::pooling_name(m.pooling), "mean | last");
    rc.declare("dropout", num(m.dropout), "front-end dropout rate");
    rc.declare("alpha", num(m.alpha), "momentum input gain");
    rc.declare("beta", num(m.beta), "momentum decay");
    rc.declare("rho", num(m.rho), "complex momentum magnitude");
    rc.declare("phase", num(m.phase), "complex momentum phase");
    rc.declare("gamma-var", num(m.gammaVar), "adam second-moment decay");
    rc.declare("eps", num(m.eps), "adam epsilon");
    rc.declare("dt-min", num(m.dtMin), "step size init lower bound");
    rc.declare("dt-max", num(m.dtMax), "step size init upper bound");
    rc.declare("exact-zoh", m.exactZoh ? "true" : "false", "exact ZOH input matrix instead of dt*B");
}

har::ModelConfig model_config(const RunConfig& rc, std::size_t classes, bool withVariant)
{
    har::ModelConfig m;
    if (withVariant) m.variant = har::parse_variant(rc.str("variant"));
    m.dModel = rc.size("d-model");
    m.nLayers = rc.size("n-layers");
    m.dState = rc.size("d-state");
    m.kernel = rc.size("kernel");
    m.pooling = har::parse_pooling(rc.str("pooling"));
    m.dropout = rc.num("dropout");
    m.alpha = rc.num("alpha");
    m.beta = rc.num("beta");
    m.rho = rc.num("rho");
    m.phase = rc.num("phase");
    m.gammaVar = rc.num("gamma-var");
    m.eps = rc.num("eps");
    m.dtMin = rc.num("dt-min");
    m.dtMax = rc.num("dt-max");
    m.exactZoh = rc.flag("exact-zoh");
    m.numClasses = classes;
    m.validate();
    return m;
}

void declare_train(RunConfig& rc, const har::TrainConfig& t, bool withEpochs = true)
{
    rc.declare("lr", num(t.lr), "peak learning rate");
    rc.declare("weight-decay", num(t.weightDecay), "L2 weight decay");
    rc.declare("batch", num(t.batch), "batch size");
    if (withEpochs) {
        rc.declare("max-epochs", num(t.maxEpochs), "epoch budget");
        rc.declare("patience", num(t.patience), "early-stopping patience");
    }
    rc.declare("clip-norm", num(t.clipNorm), "global gradient-norm clip");
}

har::TrainConfig train_config(const RunConfig& rc, std::uint64_t seed, bool withEpochs = true)
{
    har::TrainConfig t;
    t.lr = rc.num("lr");
    t.weightDecay = rc.num("weight-decay");
    t.batch = rc.size("batch");
    if (withEpochs) {
        t.maxEpochs = rc.size("max-epochs");
        t.patience = rc.size("patience");
    }
    t.clipNorm = rc.num("clip-norm");
    t.seed = seed;
    t.validate();
    return t;
}

void declare_task(RunConfig& rc, const har::DelayedRecallSpec& s, std::size_t valCount)
{
    rc.declare("length", num(s.length), "delayed-recall sequence length");
    rc.declare("delay", num(s.delay), "steps between the pattern and the end of the sequence");
    rc.declare("samples", num(s.count), "training sequences");
    rc.declare("val-samples", num(valCount), "validation sequences");
    rc.declare("noise", num(s.noise), "background noise std");
    rc.declare("amplitude", num(s.amplitude), "pattern amplitude");
}

har::DelayedRecallSpec task_spec(const RunConfig& rc, std::size_t classes)
{
    har::DelayedRecallSpec s;
    s.length = rc.size("length");
    s.delay = rc.size("delay");
    s.count = rc.size("samples");
    s.classes = classes;
    s.noise = rc.num("noise");
    s.amplitude = rc.num("amplitude");
    return s;
}

void declare_dataset(RunConfig& rc)
{
    rc.declare("dataset", "synthetic", "'synthetic' (delayed recall) or a labelled IMU CSV file");
    rc.declare("num-classes", "4", "number of classes");
    declare_task(rc, {}, 64);
    rc.declare("window-length", "512", "CSV datasets: window length");
    rc.declare("overlap", "0.5", "CSV datasets: window overlap fraction");
    rc.declare("val-fraction", "0.2", "CSV datasets: fraction of recordings held out");
}

struct Splits {
    har::Dataset train;
    har::Dataset val;
    bool fromCsv{false};
    har::ChannelStats stats;
};

/// Synthetic delayed recall, or CSV recordings split by recording and
/// z-scored with training statistics.
Splits load_splits(const RunConfig& rc, Rng& rng)
{
    const std::size_t classes = rc.size("num-classes");
    Splits sp;
    if (rc.str("dataset") == "synthetic") {
        har::DelayedRecallSpec s = task_spec(rc, classes);
        sp.train = har::make_delayed_recall(rng, s);
        s.count = rc.size("val-samples");
        sp.val = har::make_delayed_recall(rng, s);
        return sp;
    }
    sp.fromCsv = true;
    auto recs = har::read_dataset_csv(rc.str("dataset"));
    if (recs.size() < 2) throw har::DataError("dataset needs at least two recordings for a train/val split");
    const double frac = rc.num("val-fraction");
    if (!(frac > 0.0 && frac < 1.0)) throw UsageError("val-fraction must lie in (0, 1)");
    rng.shuffle(recs);
    const auto nVal = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(frac * static_cast<double>(recs.size()))),
                                              1, recs.size() - 1);
    const std::vector<har::Recording> valRecs(recs.begin(), recs.begin() + static_cast<std::ptrdiff_t>(nVal));
    const std::vector<har::Recording> trainRecs(recs.begin() + static_cast<std::ptrdiff_t>(nVal), recs.end());
    har::WindowConfig wc;
    wc.length = rc.size("window-length");
    wc.overlap = rc.num("overlap");
    wc.validate();
    sp.train = har::windows_from_recordings(trainRecs, wc, classes);
    sp.val = har::windows_from_recordings(valRecs, wc, classes);
    if (sp.train.size() == 0 || sp.val.size() == 0) {
        throw har::DataError("no windows of length " + std::to_string(wc.length) + " in one of the splits");
    }
    sp.stats = har::channel_stats(sp.train.x);
    sp.train.x = har::zscore(sp.train.x, sp.stats);
    sp.val.x = har::zscore(sp.val.x, sp.stats);
    return sp;
}

std::filesystem::path prepare_out(const RunConfig& rc, const std::string& command)
{
    const std::filesystem::path dir(rc.str("out"));
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw har::DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
    std::ofstream echo(dir / "resolved_config.txt");
    if (!echo) throw har::DataError("cannot write to '" + dir.string() + "'");
    rc.write_echo(echo, command);
    return dir;
}

std::ofstream open_out(const std::filesystem::path& p)
{
    std::ofstream out(p);
    if (!out) throw har::DataError("cannot write '" + p.string() + "'");
    return out;
}

// ---------------------------------------------------------------------------
// Commands.

void declare_scan_bench(RunConfig& rc)
{
    declare_common(rc, "out/scan-bench");
    rc.declare("lengths", "1,64,512,4096", "sequence lengths");
    rc.declare("states", "16", "state sizes N");
    rc.declare("kinds", "dense,diagonal,momentum,heavyball", "transition kinds");
    rc.declare("repeats", "5", "timing repeats (median reported)");
    rc.declare("layer-ratio", "true", "also time the momentum vs vanilla layer forward");
    rc.declare("layer-d-model", "128", "layer comparison width D");
    rc.declare("layer-d-state", "64", "layer comparison state size N");
    rc.declare("layer-length", "512", "layer comparison length L");
}

int run_scan_bench(const RunConfig& rc)
{
    const std::uint64_t seed = rc.uint("seed");
    std::vector<scan::TransitionKind> kinds;
    for (const auto& k : rc.words("kinds")) kinds.push_back(scan::parse_kind(k));
    const auto lengths = rc.sizes("lengths");
    const auto states = rc.sizes("states");
    for (std::size_t l : lengths) {
        if (l == 0) throw UsageError("lengths must be >= 1");
    }
    for (std::size_t n : states) {
        if (n == 0) throw UsageError("states must be >= 1");
    }
    const std::size_t repeats = rc.size("repeats");
    if (repeats == 0) throw UsageError("repeats must be >= 1");
    const auto dir = prepare_out(rc, "scan-bench");

    std::vector<checks::BenchRow> rows;
    bool depthOk = true;
    for (const auto k : kinds) {
        for (std::size_t n : states) {
            for (std::size_t l : lengths) {
                rows.push_back(checks::bench_scan(k, l, n, repeats, seed + l));
                depthOk = depthOk && rows.back().combineDepth == scan::expected_combine_depth(l);
            }
        }
    }
    auto bench = open_out(dir / "scan_bench.csv");
    checks::write_bench_csv(bench, rows);
    if (rc.flag("layer-ratio")) {
        const std::size_t d = rc.size("layer-d-model");
        const std::size_t n = rc.size("layer-d-state");
        const std::size_t l = rc.size("layer-length");
        const auto ratio = checks::momentum_cost_ratio(d, n, l, repeats, seed);
        bench << "# momentum/vanilla layer forward at D=" << d << " N=" << n << " L=" << l
              << ": flop_ratio=" << shortest(ratio.flopRatio) << " wall_ratio=" << shortest(ratio.wallRatio) << "\n"
              << "# expected band 1.0-2.5; published reference ratio ~1.35 (0.007 / 0.0052)\n";
        std::cout << "momentum/vanilla layer forward: flop ratio " << ratio.flopRatio << ", wall ratio "
                  << ratio.wallRatio << "\n";
    }
    auto digest = open_out(dir / "scan_digest.csv");
    checks::write_digest_csv(digest, rows);
    std::cout << "wrote " << rows.size() << " rows to " << (dir / "scan_bench.csv").string() << "\n";
    if (!depthOk) {
        std::cerr << "combine depth differs from ceil(log2 L) + 1\n";
        return kFailure;
    }
    return kOk;
}

const std::vector<std::string> kAllProps{"inverse", "stability", "affine", "jacobian", "adam_bound", "impulse", "gradcheck"};

void declare_check(RunConfig& rc)
{
    declare_common(rc, "out/check");
    std::string all;
    for (const auto& p : kAllProps) all += (all.empty() ? "" : ",") + p;
    rc.declare("props", all, "comma-separated subset of: " + all);
    rc.declare("flip-lower-left-sign", "false", "mutation: use -dt*S in the inverse's lower-left block");
}

std::vector<checks::CheckResult> run_prop(const std::string& prop, bool flipped)
{
    if (prop == "inverse") {
        return {checks::inverse_identity(10000, flipped ? heavyball::LowerLeftSign::flipped
                                                         : heavyball::LowerLeftSign::derived)};
    }
    if (prop == "stability") return {checks::stability(10000)};
    if (prop == "affine") return {checks::affine_form(50)};
    if (prop == "jacobian") {
        const auto j = checks::jacobian();
        return {j.vanillaClosedForm, j.vanillaMonotone, j.denseOracle, j.lowerRight, j.semigroup};
    }
    if (prop == "adam_bound") return {checks::adam_bound(100, 10000)};
    if (prop == "impulse") {
        const auto im = checks::impulse(50);
        return {im.closedForm, im.realReduction};
    }
    if (prop == "gradcheck") return {checks::gradcheck(5)};
    throw std::logic_error("unhandled property " + prop);
}

int run_check(const RunConfig& rc)
{
    const auto props = rc.words("props");
    for (const auto& p : props) {
        if (std::find(kAllProps.begin(), kAllProps.end(), p) == kAllProps.end()) {
            throw UsageError("unknown property '" + p + "'");
        }
    }
    const bool flipped = rc.flag("flip-lower-left-sign");
    const auto dir = prepare_out(rc, "check");
    std::vector<checks::CheckResult> results;
    for (const auto& p : props) {
        try {
            for (auto& r : run_prop(p, flipped)) results.push_back(std::move(r));
        } catch (const std::exception& e) {
            results.push_back({p, std::numeric_limits<double>::quiet_NaN(), 0.0, false, std::string("error: ") + e.what()});
        }
    }
    auto out = open_out(dir / "check_report.csv");
    checks::write_report_csv(out, results);
    bool ok = true;
    for (const auto& r : results) {
        std::fprintf(stdout, "%s %-34s worst=%-12.4g tol=%-8.3g %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.worst,
                     r.tolerance, r.detail.c_str());
        ok = ok && r.passed;
    }
    return ok ? kOk : kFailure;
}

void declare_gradflow(RunConfig& rc)
{
    declare_common(rc, "out/gradflow");
    rc.declare("variant", "momentum", "vanilla | momentum");
    rc.declare("epochs", "3", "training epochs (report has epochs + 1 columns)");
    rc.declare("num-classes", "4", "number of classes");
    declare_task(rc, {128, 127, 4, 256, 1.0, 2.0}, 64);
    rc.declare("probe", "16", "training samples whose state gradients are measured");
    har::ModelConfig m;
    m.dModel = 16;
    m.dState = 16;
    m.pooling = har::Pooling::last;
    m.beta = 0.99;
    m.dtMin = 0.1;
    m.dtMax = 1.0;
    declare_model(rc, m, false);
    declare_train(rc, {}, false);
}

int run_gradflow(const RunConfig& rc)
{
    const auto variant = har::parse_variant(rc.str("variant"));
    if (variant != har::Variant::vanilla && variant != har::Variant::momentum) {
        throw UsageError("gradflow supports variant vanilla or momentum");
    }
    const std::uint64_t seed = rc.uint("seed");
    const std::size_t classes = rc.size("num-classes");
    grad::HeatmapSpec spec;
    spec.model = model_config(rc, classes, false);
    spec.model.variant = variant;
    spec.task = task_spec(rc, classes);
    spec.valCount = rc.size("val-samples");
    spec.probe = rc.size("probe");
    spec.train = train_config(rc, seed, false);
    const std::size_t epochs = rc.size("epochs");
    const auto dir = prepare_out(rc, "gradflow");

    Rng rng(seed);
    const auto rep = grad::gradient_heatmap(spec, epochs, rng);
    auto out = open_out(dir / "gradflow.csv");
    grad::write_report_csv(out, rep);
    const double ratio = grad::first_last_ratio(rep);
    auto summary = open_out(dir / "gradflow_summary.txt");
    summary.precision(17);
    summary << rep.descriptor << " epochs=" << epochs << " ratio_first_last=" << ratio << "\n";
    std::cout << rep.descriptor << " epochs=" << epochs << " ratio |dL/ds_1| / |dL/ds_L| = " << ratio << "\n";
    return kOk;
}

void declare_train_cmd(RunConfig& rc)
{
    declare_common(rc, "out/train");
    declare_dataset(rc);
    declare_model(rc, {}, true);
    declare_train(rc, {});
}

int run_train(const RunConfig& rc)
{
    const std::uint64_t seed = rc.uint("seed");
    const har::ModelConfig mc = model_config(rc, rc.size("num-classes"), true);
    const har::TrainConfig tc = train_config(rc, seed + 2);
    Rng dataRng(seed);
    const Splits sp = load_splits(rc, dataRng);
    const auto dir = prepare_out(rc, "train");
    if (sp.fromCsv) {
        auto st = open_out(dir / "stats.csv");
        har::write_stats_csv(st, sp.stats);
    }
    Rng initRng(seed + 1);
    const har::ModelParams init = har::init_model(mc, initRng);
    const har::TrainResult res = har::train(init, sp.train, sp.val, tc);
    auto metrics = open_out(dir / "metrics.csv");
    har::write_metrics_csv(metrics, res.history);
    har::save_checkpoint((dir / "checkpoint.bin").string(), res.params);
    const auto ev = har::evaluate(res.params, sp.val, tc.batch);
    std::cout << "variant=" << har::variant_name(mc.variant) << " params=" << res.params.parameter_count()
              << " epochs=" << res.history.size() << " best_epoch=" << res.bestEpoch << " val_loss=" << ev.loss
              << " val_acc=" << ev.accuracy << "\n";
    return kOk;
}

void declare_sweep(RunConfig& rc)
{
    declare_common(rc, "out/sweep");
    rc.declare("betas", "0,0.1,0.3,0.6,0.9,0.99,0.999", "beta grid (rows)");
    rc.declare("alphas", "0,0.1,0.3,0.6,0.9,1,2", "alpha grid (columns)");
    declare_dataset(rc);
    declare_model(rc, {}, false);
    declare_train(rc, {});
}

int run_sweep(const RunConfig& rc)
{
    const std::uint64_t seed = rc.uint("seed");
    const auto betas = rc.nums("betas");
    const auto alphas = rc.nums("alphas");
    if (betas.empty() || alphas.empty()) throw UsageError("betas and alphas must be nonempty");
    const har::ModelConfig mc = model_config(rc, rc.size("num-classes"), false);
    const har::TrainConfig tc = train_config(rc, seed + 2);
    Rng dataRng(seed);
    const Splits sp = load_splits(rc, dataRng);
    const auto dir = prepare_out(rc, "sweep");
    const auto grid = har::grid_search(betas, alphas, sp.train, sp.val, mc, tc, seed + 1);
    auto out = open_out(dir / "grid.csv");
    har::write_grid_csv(out, grid);
    har::write_grid_csv(std::cout, grid);
    return kOk;
}

struct Command {
    std::string name;
    std::string help;
    std::function<void(RunConfig&)> declare;
    std::function<int(const RunConfig&)> run;
};

}  // namespace

int main(int argc, char** argv)
{
    const std::vector<Command> commands{
        {"scan-bench", "time sequential vs parallel affine scans", declare_scan_bench, run_scan_bench},
        {"check", "run randomized property checks", declare_check, run_check},
        {"gradflow", "record state-gradient norms while training on delayed recall", declare_gradflow, run_gradflow},
        {"train", "train a classifier and write metrics and a checkpoint", declare_train_cmd, run_train},
        {"sweep", "momentum (beta, alpha) grid search", declare_sweep, run_sweep},
    };
    CLI::App app{"Momentum selective state-space models: benchmarks, checks and experiments"};
    app.require_subcommand(1);
    std::vector<RunConfig> configs(commands.size());
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < commands.size(); ++i) {
        commands[i].declare(configs[i]);
        subs.push_back(app.add_subcommand(commands[i].name, commands[i].help));
        configs[i].bind(*subs.back());
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }
    for (std::size_t i = 0; i < commands.size(); ++i) {
        if (!subs[i]->parsed()) continue;
        try {
            configs[i].resolve();
            return commands[i].run(configs[i]);
        } catch (const UsageError& e) {
            std::cerr << "usage error: " << e.what() << "\n";
            return kUsage;
        } catch (const ContractError& e) {
            std::cerr << "invalid setting: " << e.what() << "\n";
            return kUsage;
        } catch (const har::DataError& e) {
            std::cerr << "data error: " << e.what() << "\n";
            return kData;
        } catch (const har::DivergenceError& e) {
            std::cerr << e.what() << "\n";
            return kFailure;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kFailure;
        }
    }
    return kUsage;
}
