#include "fsot/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "fsot/classify.hpp"
#include "fsot/features.hpp"
#include "fsot/stats.hpp"

namespace fsot::cli {

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

// Thrown by command handlers for inconsistent but syntactically valid flags.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

FileFormat resolve_format(const std::string& flag, const std::string& path) {
    if (flag == "binary") return FileFormat::binary;
    if (flag == "csv") return FileFormat::csv;
    return format_from_path(path);
}

int default_threads() {
    if (const char* env = std::getenv("FEWSHOT_OT_THREADS")) {
        const int t = std::atoi(env);
        if (t > 0) return t;
    }
    return 1;
}

const std::vector<std::string> kFormats = {"auto", "binary", "csv"};

struct RunArgs {
    std::string features;
    std::string base;
    std::string format = "auto";
    std::string method = "ncm";
    int n = 5;
    int s = 1;
    int q = 15;
    int episodes = 10000;
    std::uint64_t seed = 0;
    double lambda = 8.5;
    int outer_iters = 20;
    int sinkhorn_iters = 50;
    int epochs = -1;
    double lr = 0.1;
    double momentum = 0.8;
    double kappa = 10.0;
    double beta = 0.5;
    double epsilon = 1e-6;
    std::string center;
    bool no_qr = false;
    bool clamp_support = false;
    bool reset_kappa = false;
    bool base_center_raw = false;
    std::vector<double> targets;
    int threads = 1;
    std::string out;
    bool json_timing = false;
};

int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err) {
    EvalOptions opt;
    opt.method = parse_method(a.method);
    opt.spec = {a.n, a.s, a.q, a.seed};
    opt.episodes = a.episodes;
    opt.seed = a.seed;
    opt.threads = a.threads;

    opt.prep.beta = a.beta;
    opt.prep.epsilon = a.epsilon;
    opt.prep.apply_qr = !a.no_qr;
    opt.prep.base_center_raw = a.base_center_raw;
    // Base centering for the inductive classifier, novel centering for the transductive ones.
    if (a.center.empty()) {
        opt.prep.center_mode = opt.method == Method::ncm ? CenterMode::base_mean : CenterMode::novel_mean;
    } else {
        opt.prep.center_mode = parse_center(a.center);
    }
    if (opt.prep.center_mode == CenterMode::base_mean && a.base.empty()) {
        throw UsageError("base centering needs --base (or pass --center novel|none)");
    }

    opt.bms.lambda = a.lambda;
    opt.bms.outer_iters = a.outer_iters;
    opt.bms.sinkhorn_iters = a.sinkhorn_iters;
    if (a.epochs >= 0) opt.bms.epochs = a.epochs;
    opt.bms.lr = a.lr;
    opt.bms.momentum = a.momentum;
    opt.bms.kappa_init = a.kappa;
    opt.bms.clamp_support = a.clamp_support;
    opt.bms.persist_kappa = !a.reset_kappa;
    opt.bms.mode = opt.method;
    if (!a.targets.empty()) {
        if (opt.method != Method::bms_star) throw UsageError("--targets only applies to --method bms_star");
        opt.bms.exact_targets = a.targets;
    } else if (opt.method == Method::bms_star) {
        opt.bms.exact_targets = std::vector<double>(a.n, static_cast<double>(a.s + a.q));
    }
    try {
        opt.prep.validate();
        if (opt.method != Method::ncm) opt.bms.validate(static_cast<Eigen::Index>(a.n) * (a.s + a.q), a.n);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const FeatureStore store = load_feature_store(a.features, resolve_format(a.format, a.features));
    std::optional<FeatureStore> base;
    if (!a.base.empty()) base = load_feature_store(a.base, resolve_format(a.format, a.base));

    const EvalReport report = evaluate(store, base ? &*base : nullptr, opt);
    out << report_to_tsv(report) << '\n';
    if (!a.out.empty()) {
        std::ofstream json(a.out);
        json << report_to_json(report, a.json_timing);
        if (!json) {
            err << "error: cannot write " << a.out << '\n';
            return kRuntimeError;
        }
    }
    return 0;
}

struct SynthArgs {
    int classes = 20;
    int dim = 64;
    int per_class = 600;
    double separation = 3.0;
    std::string skew = "gaussian";
    std::uint64_t seed = 0;
    std::string out;
    std::string format = "auto";
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    const SkewMode mode = a.skew == "relu" ? SkewMode::relu_skewed : SkewMode::gaussian;
    const FeatureStore store = generate_synthetic_store(a.classes, a.dim, a.per_class, a.separation, mode, a.seed);
    write_feature_store(store, a.out, resolve_format(a.format, a.out));
    out << "wrote " << a.out << ": " << store.num_classes() << " classes x " << a.per_class << " vectors, dim "
        << store.dim() << '\n';
    return 0;
}

struct StatsArgs {
    std::string features;
    std::string format = "auto";
    std::string transform = "none";
    double alpha = 1e-3;
    double beta = 0.5;
    std::string out;
    int hist_dim = -1;
    std::size_t hist_bins = 50;
    std::string hist_out;
};

int cmd_stats(const StatsArgs& a, std::ostream& out) {
    const FeatureStore store = load_feature_store(a.features, resolve_format(a.format, a.features));
    const stats::Transform transform = a.transform == "pe"  ? stats::Transform::power_normalize
                                       : a.transform == "p" ? stats::Transform::power
                                                            : stats::Transform::none;
    if (a.hist_dim >= store.dim()) throw UsageError("--hist-dim is out of range");

    const stats::PassRate result = stats::gaussianity_pass_rate(store, transform, a.alpha, a.beta);
    const std::string cells = stats::cells_to_tsv(result);
    std::ostringstream summary;
    summary << "# pass_rate=" << result.rate << " cells=" << result.cells.size() << " alpha=" << a.alpha
            << " transform=" << a.transform << '\n';
    if (a.out.empty()) {
        out << cells << summary.str();
    } else {
        std::ofstream file(a.out);
        file << cells;
        out << summary.str();
    }

    if (a.hist_dim >= 0) {
        // One coordinate pooled over all classes, raw and after the chosen transform.
        std::vector<double> raw;
        std::vector<double> transformed;
        for (const auto& block : store.classes()) {
            MatrixXd values = block.vectors.cast<double>();
            MatrixXd t = values;
            if (transform == stats::Transform::power) t = power_transform(values, a.beta, 1e-6);
            if (transform == stats::Transform::power_normalize) t = pe_transform(values, a.beta, 1e-6);
            for (Eigen::Index r = 0; r < values.rows(); ++r) {
                raw.push_back(values(r, a.hist_dim));
                transformed.push_back(t(r, a.hist_dim));
            }
        }
        std::ostringstream hist;
        hist << "series\tbin_lo\tbin_hi\tcount\n";
        for (const auto& [name, xs] : {std::pair{"raw", &raw}, std::pair{"transformed", &transformed}}) {
            const auto [lo_it, hi_it] = std::minmax_element(xs->begin(), xs->end());
            const double lo = *lo_it;
            const double hi = *hi_it > lo ? *hi_it : lo + 1.0;
            const auto counts = stats::histogram(*xs, a.hist_bins, lo, hi);
            const double width = (hi - lo) / static_cast<double>(a.hist_bins);
            for (std::size_t b = 0; b < counts.size(); ++b) {
                hist << name << '\t' << lo + width * b << '\t' << lo + width * (b + 1) << '\t' << counts[b] << '\n';
            }
        }
        if (a.hist_out.empty()) {
            out << hist.str();
        } else {
            std::ofstream(a.hist_out) << hist.str();
        }
    }
    return 0;
}

int cmd_inspect(const std::string& path, const std::string& format, std::ostream& out) {
    const FeatureStore store = load_feature_store(path, resolve_format(format, path));
    out << "dim\t" << store.dim() << '\n';
    out << "classes\t" << store.num_classes() << '\n';
    out << "vectors\t" << store.total_vectors() << '\n';
    for (const auto& block : store.classes()) out << "class\t" << block.class_id << '\t' << block.count() << '\n';
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Few-shot episode classification with PEME preprocessing and min-size Sinkhorn", "fsot"};
    app.require_subcommand(1);

    RunArgs run_args;
    run_args.threads = default_threads();
    auto* run_cmd = app.add_subcommand("run", "Evaluate a classifier over random episodes");
    run_cmd->add_option("--features", run_args.features, "Novel-class feature file")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("--base", run_args.base, "Base-class feature file (for base centering)")->check(CLI::ExistingFile);
    run_cmd->add_option("--format", run_args.format, "File format")->check(CLI::IsMember(kFormats));
    run_cmd->add_option("--method", run_args.method, "Classifier")->check(CLI::IsMember({"ncm", "bms", "bms_star"}));
    run_cmd->add_option("--n", run_args.n, "Classes per episode")->check(CLI::PositiveNumber);
    run_cmd->add_option("--s", run_args.s, "Support shots per class")->check(CLI::PositiveNumber);
    run_cmd->add_option("--q", run_args.q, "Queries per class")->check(CLI::PositiveNumber);
    run_cmd->add_option("--episodes", run_args.episodes, "Number of episodes")->check(CLI::PositiveNumber);
    run_cmd->add_option("--seed", run_args.seed, "Master seed");
    run_cmd->add_option("--lambda", run_args.lambda, "Sinkhorn regularization")->check(CLI::PositiveNumber);
    run_cmd->add_option("--outer-iters", run_args.outer_iters, "EM iterations")->check(CLI::NonNegativeNumber);
    run_cmd->add_option("--sinkhorn-iters", run_args.sinkhorn_iters, "Sinkhorn iterations")->check(CLI::PositiveNumber);
    run_cmd->add_option("--epochs", run_args.epochs, "Refinement epochs (default: from shots and method)")
        ->check(CLI::NonNegativeNumber);
    run_cmd->add_option("--lr", run_args.lr, "Refinement step size")->check(CLI::PositiveNumber);
    run_cmd->add_option("--momentum", run_args.momentum, "Refinement momentum")->check(CLI::Range(0.0, 0.999999));
    run_cmd->add_option("--kappa", run_args.kappa, "Initial logit temperature")->check(CLI::PositiveNumber);
    run_cmd->add_option("--beta", run_args.beta, "Power transform exponent");
    run_cmd->add_option("--epsilon", run_args.epsilon, "Power transform offset")->check(CLI::PositiveNumber);
    run_cmd->add_option("--center", run_args.center, "Projection center (default: base for ncm, novel otherwise)")
        ->check(CLI::IsMember({"base", "novel", "none"}));
    run_cmd->add_flag("--no-qr", run_args.no_qr, "Skip the QR reduction");
    run_cmd->add_flag("--clamp-support", run_args.clamp_support, "Pin support rows of P to their labels");
    run_cmd->add_flag("--reset-kappa", run_args.reset_kappa, "Re-initialize kappa every EM iteration");
    run_cmd->add_flag("--base-center-raw", run_args.base_center_raw, "Average raw base features for the base center");
    run_cmd->add_option("--targets", run_args.targets, "Exact per-class counts for bms_star")->delimiter(',');
    run_cmd->add_option("--threads", run_args.threads, "Worker threads (env FEWSHOT_OT_THREADS)")
        ->check(CLI::PositiveNumber);
    run_cmd->add_option("--out", run_args.out, "Write the JSON report here");
    run_cmd->add_flag("--json-timing", run_args.json_timing, "Include timing in the JSON report");

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic feature store");
    synth_cmd->add_option("--classes", synth_args.classes, "Number of classes")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--dim", synth_args.dim, "Feature dimension")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--per-class", synth_args.per_class, "Vectors per class")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--separation", synth_args.separation, "Pairwise class-center distance")
        ->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--skew", synth_args.skew, "Marginal shape")->check(CLI::IsMember({"gaussian", "relu"}));
    synth_cmd->add_option("--seed", synth_args.seed, "Seed");
    synth_cmd->add_option("--out", synth_args.out, "Output file")->required();
    synth_cmd->add_option("--format", synth_args.format, "File format")->check(CLI::IsMember(kFormats));

    StatsArgs stats_args;
    auto* stats_cmd = app.add_subcommand("stats", "Per-class, per-dimension normality pass rate");
    stats_cmd->add_option("--features", stats_args.features, "Feature file")->required()->check(CLI::ExistingFile);
    stats_cmd->add_option("--format", stats_args.format, "File format")->check(CLI::IsMember(kFormats));
    stats_cmd->add_option("--transform", stats_args.transform, "none, p (power) or pe (power + normalize)")
        ->check(CLI::IsMember({"none", "p", "pe"}));
    stats_cmd->add_option("--alpha", stats_args.alpha, "Significance level")->check(CLI::Range(0.0, 1.0));
    stats_cmd->add_option("--beta", stats_args.beta, "Power transform exponent");
    stats_cmd->add_option("--out", stats_args.out, "Write per-cell TSV here");
    stats_cmd->add_option("--hist-dim", stats_args.hist_dim, "Export a histogram of this coordinate")
        ->check(CLI::NonNegativeNumber);
    stats_cmd->add_option("--hist-bins", stats_args.hist_bins, "Histogram bins")->check(CLI::PositiveNumber);
    stats_cmd->add_option("--hist-out", stats_args.hist_out, "Histogram TSV path");

    std::string inspect_path;
    std::string inspect_format = "auto";
    auto* inspect_cmd = app.add_subcommand("inspect", "Print a feature file header");
    inspect_cmd->add_option("--features", inspect_path, "Feature file")->required()->check(CLI::ExistingFile);
    inspect_cmd->add_option("--format", inspect_format, "File format")->check(CLI::IsMember(kFormats));

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        // Help and version exit 0; every other parse failure is a usage error.
        return app.exit(e, out, err) == 0 ? 0 : kUsageError;
    }

    try {
        if (run_cmd->parsed()) return cmd_run(run_args, out, err);
        if (synth_cmd->parsed()) return cmd_synth(synth_args, out);
        if (stats_cmd->parsed()) return cmd_stats(stats_args, out);
        if (inspect_cmd->parsed()) return cmd_inspect(inspect_path, inspect_format, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return kUsageError;
}

}  // namespace fsot::cli
