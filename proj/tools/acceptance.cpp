// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mssm/checks.hpp"
#include "mssm/gradient_lab.hpp"

namespace {

using namespace mssm;

// Tolerances and sizes, pinned.
constexpr double kScanRel = 1e-9;
constexpr double kScanFloor = 1e-12;
constexpr std::size_t kScanSeeds = 20;
constexpr double kScanBudgetS = 60.0;
constexpr std::size_t kInverseDraws = 10000;
constexpr double kInverseTol = 1e-12;
constexpr std::size_t kStabilityDraws = 10000;
constexpr double kStabilityTol = 1e-12;
constexpr std::size_t kAffineInstances = 50;
constexpr double kAffineTol = 1e-12;
constexpr double kPerCriterionBudgetS = 10.0;
constexpr std::size_t kGradcheckSeeds = 5;
constexpr double kGradcheckTol = 1e-4;
constexpr double kGradcheckBudgetS = 300.0;
constexpr std::size_t kAdamDraws = 100;
constexpr std::size_t kAdamSteps = 10000;
constexpr std::size_t kImpulseDraws = 50;
constexpr std::size_t kImpulseMaxK = 200;
constexpr double kVanillaRatioMax = 1e-3;
constexpr double kMomentumRatioMin = 1e-2;
constexpr double kGradflowBudgetS = 600.0;

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

Outcome from(const checks::CheckResult& r) { return {r.passed, "worst " + fmt(r.worst) + " (tol " + fmt(r.tolerance) + ")"}; }

Outcome all_of(const std::vector<checks::CheckResult>& rs)
{
    Outcome o{true, ""};
    for (const auto& r : rs) {
        o.pass = o.pass && r.passed;
        o.detail += (o.detail.empty() ? "" : "; ") + r.name + " " + fmt(r.worst) + "/" + fmt(r.tolerance);
    }
    return o;
}

Outcome timed(double budgetS, const std::function<Outcome()>& fn, double& seconds)
{
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = fn();
    seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (seconds > budgetS) {
        o.pass = false;
        o.detail += "; runtime " + fmt(seconds) + " s exceeds " + fmt(budgetS) + " s";
    }
    return o;
}

Outcome scan_equivalence()
{
    return from(checks::scan_equivalence({1, 2, 3, 7, 64, 1000, 4096}, kScanSeeds, kScanRel, kScanFloor));
}

Outcome inverse_identity()
{
    const auto ok = checks::inverse_identity(kInverseDraws, heavyball::LowerLeftSign::derived, 11, kInverseTol);
    const auto mutant = checks::inverse_identity(kInverseDraws, heavyball::LowerLeftSign::flipped, 11, kInverseTol);
    return {ok.passed && !mutant.passed,
            "derived " + fmt(ok.worst) + " (tol " + fmt(kInverseTol) + "); flipped sign " + fmt(mutant.worst) +
                (mutant.passed ? " NOT detected" : " detected")};
}

Outcome gradient_flow()
{
    double ratio[2] = {0.0, 0.0};
    int k = 0;
    for (const auto v : {har::Variant::vanilla, har::Variant::momentum}) {
        grad::HeatmapSpec s;
        s.model.dModel = 16;
        s.model.dState = 16;
        s.model.numClasses = 4;
        s.model.pooling = har::Pooling::last;
        s.model.variant = v;
        s.model.beta = 0.99;
        s.model.dtMin = 0.1;
        s.model.dtMax = 1.0;
        s.task = {128, 127, 4, 256, 1.0, 2.0};
        s.train.seed = 42;
        Rng rng(42);
        ratio[k++] = grad::first_last_ratio(grad::gradient_heatmap(s, 3, rng));
    }
    return {ratio[0] <= kVanillaRatioMax && ratio[1] >= kMomentumRatioMin,
            "vanilla " + fmt(ratio[0]) + " (<= " + fmt(kVanillaRatioMax) + "), momentum " + fmt(ratio[1]) + " (>= " +
                fmt(kMomentumRatioMin) + ")"};
}

Outcome depth_and_determinism()
{
    const std::vector<std::size_t> lengths{1, 2, 3, 7, 64, 512, 1000, 4096};
    auto run = [&](bool& depthOk) {
        std::vector<checks::BenchRow> rows;
        for (const auto k : {scan::TransitionKind::dense, scan::TransitionKind::diagonal,
                             scan::TransitionKind::momentum_block, scan::TransitionKind::heavy_ball_block}) {
            for (std::size_t l : lengths) {
                rows.push_back(checks::bench_scan(k, l, 16, 1, 42 + l));
                depthOk = depthOk && rows.back().combineDepth == scan::expected_combine_depth(l);
            }
        }
        std::ostringstream os;
        checks::write_digest_csv(os, rows);
        return os.str();
    };
    bool depthOk = true;
    const std::string a = run(depthOk);
    const std::string b = run(depthOk);
    return {depthOk && a == b, std::string("depth ") + (depthOk ? "ok" : "MISMATCH") + ", digests " +
                                   (a == b ? "identical" : "DIFFER") + " over " + std::to_string(4 * lengths.size()) +
                                   " runs"};
}

}  // namespace

int main()
{
    struct Criterion {
        const char* name;
        double budgetS;
        std::function<Outcome()> fn;
    };
    const std::vector<Criterion> criteria{
        {"scan oracle equivalence", kScanBudgetS, scan_equivalence},
        {"inverse identity and sign mutation", kPerCriterionBudgetS, inverse_identity},
        {"stability spectral radius", kPerCriterionBudgetS,
         [] { return from(checks::stability(kStabilityDraws, 12, kStabilityTol)); }},
        {"affine recurrence form", kPerCriterionBudgetS,
         [] { return from(checks::affine_form(kAffineInstances, 4, 8, 128, 13, kAffineTol)); }},
        {"vanilla Jacobian closed form", 1e9,
         [] {
             const auto j = checks::jacobian();
             return all_of({j.vanillaClosedForm, j.vanillaMonotone});
         }},
        {"momentum Jacobian blocks", 1e9,
         [] {
             const auto j = checks::jacobian();
             return all_of({j.denseOracle, j.lowerRight});
         }},
        {"analytic gradients vs finite differences", kGradcheckBudgetS,
         [] { return from(checks::gradcheck(kGradcheckSeeds, kGradcheckTol)); }},
        {"adam normalized update bound", 1e9, [] { return from(checks::adam_bound(kAdamDraws, kAdamSteps)); }},
        {"complex impulse response", 1e9,
         [] {
             const auto im = checks::impulse(kImpulseDraws, kImpulseMaxK);
             return all_of({im.closedForm, im.realReduction});
         }},
        {"gradient flow (vanishing vs preserved)", kGradflowBudgetS, gradient_flow},
        {"scan depth and determinism", 1e9, depth_and_determinism},
        {"reductions", 1e9,
         [] { return all_of({checks::momentum_vanilla_reduction(), checks::heavyball_timevarying_reduction()}); }},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        double seconds = 0.0;
        Outcome o{false, ""};
        try {
            o = timed(criteria[i].budgetS, criteria[i].fn, seconds);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("%s %2zu %-42s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str(),
                    seconds);
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
