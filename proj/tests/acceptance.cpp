// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Every tolerance is pinned below.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fsot/classify.hpp"
#include "fsot/cli.hpp"
#include "fsot/sinkhorn.hpp"
#include "fsot/stats.hpp"
#include "test_util.hpp"

using namespace fsot;
using fsot::test::log_domain_sinkhorn;
using fsot::test::max_gradient_error;
using fsot::test::random_uniform;

namespace {

// 1. Sinkhorn marginals
constexpr int kMarginalInstances = 100;
constexpr double kMarginalLambda = 8.5;
constexpr double kMarginalK = 4.0;
constexpr int kMarginalIters = 50;
constexpr double kRowTol = 1e-2;
constexpr double kColTol = 1e-2;
constexpr double kMarginalSeconds = 1.0;

// 2. Oracle equivalence. The min-size solver is iterated to its fixed point.
constexpr int kOracleInstances = 20;
constexpr int kOracleIters = 10000;
constexpr double kOracleTol = 1e-4;

// 3. Scaling form
constexpr int kMinorInstances = 10;
constexpr double kMinorTol = 1e-8;

// 4. Gradient check
constexpr int kGradientInstances = 5;
constexpr double kGradientStep = 1e-5;
constexpr double kGradientTol = 1e-4;

// 5. Gaussianization
constexpr double kSkewSeparation = 1.0;
constexpr double kNormalityAlpha = 1e-3;
constexpr double kRawPassMax = 0.05;
constexpr double kPePassMin = 0.50;
constexpr double kGaussianizationSeconds = 30.0;

// 6. Transductive gain
constexpr double kBenchSeparation = 5.8;
constexpr double kNcmTarget = 0.70;
constexpr double kNcmBand = 0.05;
constexpr double kMinGain = 0.03;
constexpr int kGainEpisodes = 1000;

// 7. QR invariance
constexpr int kQrEpisodes = 100;

// 9. Performance
constexpr int kPerfDim = 640;
constexpr int kPerfEpisodes = 200;
constexpr double kPerfSeconds = 0.010;

// 10. Published numbers (conditional)
constexpr double kPaperBms1 = 0.8207, kPaperBms1Ci = 0.0025;
constexpr double kPaperBms5 = 0.8951, kPaperBms5Ci = 0.0013;

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Outcome sinkhorn_marginals() {
    Rng rng(101);
    std::vector<MatrixXd> costs;
    for (int t = 0; t < kMarginalInstances; ++t) costs.push_back(random_uniform(rng, 80, 5, 0.0, 2.0));
    const Marginals m = Marginals::min_size(80, 5, kMarginalK);

    double row_dev = 0.0;
    double min_col = std::numeric_limits<double>::infinity();
    const auto start = std::chrono::steady_clock::now();
    for (const MatrixXd& C : costs) {
        const MatrixXd P = min_size_sinkhorn(C, m, kMarginalLambda, kMarginalIters);
        row_dev = std::max(row_dev, (P.rowwise().sum().array() - 1.0).abs().maxCoeff());
        min_col = std::min(min_col, P.colwise().sum().minCoeff());
    }
    const double secs = seconds_since(start);
    const bool ok = row_dev <= kRowTol && min_col >= kMarginalK - kColTol && secs < kMarginalSeconds;
    return {ok, fmt("max_row_dev=%.3g min_col_sum=%.6f seconds=%.4f", row_dev, min_col, secs)};
}

Outcome oracle_equivalence() {
    Rng rng(202);
    const VectorXd p = VectorXd::Ones(6);
    const VectorXd q = VectorXd::Constant(3, 2.0);
    double worst = 0.0;
    double worst_at_50 = 0.0;
    for (int t = 0; t < kOracleInstances; ++t) {
        const MatrixXd C = random_uniform(rng, 6, 3, 0.0, 2.0);
        const MatrixXd oracle = log_domain_sinkhorn(C, p, q, 8.5);
        worst = std::max(worst, (min_size_sinkhorn(C, Marginals{p, q}, 8.5, kOracleIters) - oracle).cwiseAbs().maxCoeff());
        worst_at_50 = std::max(worst_at_50, (min_size_sinkhorn(C, Marginals{p, q}, 8.5, 50) - oracle).cwiseAbs().maxCoeff());
    }
    return {worst <= kOracleTol, fmt("max_abs_diff=%.3g (iters=%d; at 50 iters %.3g)", worst, kOracleIters, worst_at_50)};
}

Outcome scaling_form() {
    Rng rng(303);
    const double lambda = 8.5;
    double worst = 0.0;
    for (int t = 0; t < kMinorInstances; ++t) {
        const MatrixXd C = random_uniform(rng, 5, 3, 0.0, 2.0);
        const MatrixXd P = min_size_sinkhorn(C, Marginals::min_size(5, 3, 1.5), lambda);
        const MatrixXd M = P.array().log().matrix() + lambda * C;
        for (int i = 0; i < 5; ++i)
            for (int k = i + 1; k < 5; ++k)
                for (int j = 0; j < 3; ++j)
                    for (int l = j + 1; l < 3; ++l)
                        worst = std::max(worst, std::abs(M(i, j) + M(k, l) - M(i, l) - M(k, j)));
    }
    return {worst < kMinorTol, fmt("max_minor=%.3g", worst)};
}

Outcome gradient_check() {
    double worst = 0.0;
    for (int t = 0; t < kGradientInstances; ++t) worst = std::max(worst, max_gradient_error(404 + t, kGradientStep));
    return {worst <= kGradientTol, fmt("max_rel_err=%.3g", worst)};
}

Outcome gaussianization() {
    const auto start = std::chrono::steady_clock::now();
    const FeatureStore store = generate_synthetic_store(20, 64, 600, kSkewSeparation, SkewMode::relu_skewed, 505);
    const double raw = stats::gaussianity_pass_rate(store, stats::Transform::none, kNormalityAlpha).rate;
    const double pe = stats::gaussianity_pass_rate(store, stats::Transform::power_normalize, kNormalityAlpha).rate;
    const double secs = seconds_since(start);
    const bool ok = raw <= kRawPassMax && pe >= kPePassMin && secs < kGaussianizationSeconds;
    return {ok, fmt("raw_pass=%.4f pe_pass=%.4f seconds=%.2f", raw, pe, secs)};
}

// Novel store for the accuracy benchmarks and a base store for M_b.
struct Benchmark {
    FeatureStore novel = generate_synthetic_store(20, 64, 200, kBenchSeparation, SkewMode::gaussian, 1);
    FeatureStore base = generate_synthetic_store(64, 64, 200, 4.0, SkewMode::gaussian, 99);
};

EvalOptions bench_options(Method method, int episodes, std::uint64_t seed) {
    EvalOptions o;
    o.spec = {5, 1, 15, 0};
    o.method = method;
    o.episodes = episodes;
    o.seed = seed;
    o.prep.center_mode = method == Method::ncm ? CenterMode::base_mean : CenterMode::novel_mean;
    return o;
}

Outcome transductive_gain(const Benchmark& b) {
    const EvalReport ncm = evaluate(b.novel, &b.base, bench_options(Method::ncm, kGainEpisodes, 606));
    const EvalReport bms = evaluate(b.novel, &b.base, bench_options(Method::bms, kGainEpisodes, 606));
    // Same epoch count as BMS (its 1-shot default, e = 0) so the comparison
    // isolates the exact-count prior.
    EvalOptions star_opt = bench_options(Method::bms_star, kGainEpisodes, 606);
    star_opt.bms.epochs = default_epochs(Method::bms, 1);
    const EvalReport star = evaluate(b.novel, &b.base, star_opt);
    // Informational: the starred variant with its own default schedule.
    const EvalReport star_default = evaluate(b.novel, &b.base, bench_options(Method::bms_star, kGainEpisodes, 606));

    const double a_ncm = ncm.mean_accuracy, a_bms = bms.mean_accuracy, a_star = star.mean_accuracy;
    const bool ok = std::abs(a_ncm - kNcmTarget) <= kNcmBand && a_bms >= a_ncm + kMinGain && a_star >= a_bms;
    return {ok, fmt("ncm=%.4f±%.4f bms=%.4f±%.4f bms_star(e=0)=%.4f±%.4f [bms_star(e=%d)=%.4f, not asserted]", a_ncm,
                    ncm.ci95, a_bms, bms.ci95, a_star, star.ci95, *star_default.options.bms.epochs,
                    star_default.mean_accuracy)};
}

Outcome qr_invariance() {
    // dim > l + u, so the reduction actually drops columns.
    const FeatureStore store = generate_synthetic_store(20, 128, 100, kBenchSeparation, SkewMode::gaussian, 7);
    int mismatched = 0;
    for (Method method : {Method::ncm, Method::bms, Method::bms_star}) {
        BmsConfig cfg;
        cfg.mode = method;
        for (int t = 0; t < kQrEpisodes; ++t) {
            const Episode ep = sample_episode(store, {5, 1, 15, episode_seed(707, t)});
            PreprocessConfig with_qr, without_qr;
            without_qr.apply_qr = false;
            if (classify_episode(peme(ep, with_qr), method, cfg) != classify_episode(peme(ep, without_qr), method, cfg)) {
                ++mismatched;
            }
        }
    }
    return {mismatched == 0, fmt("mismatched_episodes=%d of %d", mismatched, 3 * kQrEpisodes)};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(const Benchmark& b) {
    // In-process reports, then the same through the command line with files.
    int differing = 0;
    for (Method method : {Method::ncm, Method::bms, Method::bms_star}) {
        EvalOptions o = bench_options(method, 100, 808);
        const std::string first = report_to_json(evaluate(b.novel, &b.base, o));
        const std::string again = report_to_json(evaluate(b.novel, &b.base, o));
        o.threads = 4;
        const std::string threaded = report_to_json(evaluate(b.novel, &b.base, o));
        differing += (first != again) + (first != threaded);
    }

    const auto dir = std::filesystem::temp_directory_path() / "fsot_acceptance";
    std::filesystem::create_directories(dir);
    write_feature_store(b.novel, dir / "novel.bin", FileFormat::binary);
    std::vector<std::string> reports;
    for (const char* threads : {"1", "4", "1"}) {
        const auto out = dir / (std::string("report_") + std::to_string(reports.size()) + ".json");
        std::ostringstream sink;
        const int code = cli::run({"run", "--features", (dir / "novel.bin").string(), "--method", "bms", "--episodes",
                                   "100", "--seed", "808", "--threads", threads, "--out", out.string()},
                                  sink, sink);
        reports.push_back(code == 0 ? slurp(out) : "exit " + std::to_string(code));
    }
    std::filesystem::remove_all(dir);
    differing += (reports[0] != reports[1]) + (reports[0] != reports[2]);
    return {differing == 0, fmt("differing_reports=%d (evaluate x3 methods, cli runs x3)", differing)};
}

Outcome performance() {
    const FeatureStore store = generate_synthetic_store(20, kPerfDim, 100, kBenchSeparation, SkewMode::gaussian, 9);
    EvalOptions o = bench_options(Method::bms, kPerfEpisodes, 909);
    o.bms.epochs = 0;
    o.bms.outer_iters = 20;
    o.prep.apply_qr = true;
    const EvalReport r = evaluate(store, nullptr, o);
    return {r.mean_episode_seconds <= kPerfSeconds,
            fmt("mean_episode_ms=%.3f (dim=%d, episodes=%d, threads=1)", 1e3 * r.mean_episode_seconds, kPerfDim,
                kPerfEpisodes)};
}

// Runs only when the user points FSOT_WRN_NOVEL (and optionally FSOT_WRN_BASE)
// at extracted miniImageNet features.
std::optional<Outcome> published_numbers() {
    const char* novel_path = std::getenv("FSOT_WRN_NOVEL");
    if (novel_path == nullptr) return std::nullopt;
    const FeatureStore novel = load_feature_store(novel_path, format_from_path(novel_path));
    std::string detail;
    bool ok = true;
    for (auto [shots, paper, ci] : {std::tuple{1, kPaperBms1, kPaperBms1Ci}, std::tuple{5, kPaperBms5, kPaperBms5Ci}}) {
        EvalOptions o = bench_options(Method::bms, 10000, 1);
        o.spec.shots = shots;
        const double acc = evaluate(novel, nullptr, o).mean_accuracy;
        ok = ok && std::abs(acc - paper) <= ci;
        detail += fmt("bms_%dshot=%.4f (paper %.4f±%.4f) ", shots, acc, paper, ci);
    }
    return Outcome{ok, detail};
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const char* name, const Outcome& o) {
        std::printf("%s %2d %-26s %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    };
    auto guarded = [](const std::function<Outcome()>& fn) {
        try {
            return fn();
        } catch (const std::exception& e) {
            return Outcome{false, std::string("exception: ") + e.what()};
        }
    };

    report(1, "sinkhorn-marginals", guarded(sinkhorn_marginals));
    report(2, "ot-oracle-equivalence", guarded(oracle_equivalence));
    report(3, "scaling-form", guarded(scaling_form));
    report(4, "gradient-check", guarded(gradient_check));
    report(5, "gaussianization", guarded(gaussianization));
    const Benchmark bench;
    report(6, "transductive-gain", guarded([&] { return transductive_gain(bench); }));
    report(7, "qr-invariance", guarded(qr_invariance));
    report(8, "determinism", guarded([&] { return determinism(bench); }));
    report(9, "performance", guarded(performance));
    if (const auto o = published_numbers()) {
        report(10, "published-numbers", *o);
    } else {
        std::printf("SKIP 10 %-26s set FSOT_WRN_NOVEL to a miniImageNet WRN feature file to run\n", "published-numbers");
    }

    std::printf("%s: %d failing\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
    return failures == 0 ? 0 : 1;
}
