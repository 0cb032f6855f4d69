#include "fsot/classify.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "fsot/rng.hpp"

namespace fsot {

Labels classify_episode(const ProcessedEpisode& episode, Method method, const BmsConfig& cfg) {
    if (method == Method::ncm) return ncm_classify(episode);

    BmsConfig resolved = cfg;
    resolved.mode = method;
    if (method == Method::bms_star && !resolved.exact_targets) {
        const double per_class = static_cast<double>(episode.size()) / episode.n_way;
        resolved.exact_targets = std::vector<double>(episode.n_way, per_class);
    }
    return run_bms(episode, resolved);
}

double query_accuracy(const Labels& predicted, const Labels& truth) {
    if (predicted.size() != truth.size() || truth.empty()) {
        throw std::invalid_argument("query_accuracy: label vectors must be non-empty and of equal length");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(truth.size());
}

EvalReport evaluate(const FeatureStore& store, const FeatureStore* base_store, const EvalOptions& options) {
    if (options.episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
    options.prep.validate();

    std::optional<VectorXd> base_center;
    if (options.prep.center_mode == CenterMode::base_mean) {
        if (base_store == nullptr) throw std::invalid_argument("base_mean centering requires a base feature store");
        if (base_store->dim() != store.dim()) {
            throw std::invalid_argument("base store dimension " + std::to_string(base_store->dim()) +
                                        " differs from novel store dimension " + std::to_string(store.dim()));
        }
        base_center = base_projection_center(*base_store, options.prep);
    }

    EvalReport report;
    report.method = options.method;
    report.episodes = options.episodes;
    report.seed = options.seed;
    report.options = options;
    report.options.bms.mode = options.method;
    if (options.method != Method::ncm && !report.options.bms.epochs) {
        report.options.bms.epochs = default_epochs(options.method, options.spec.shots);
    }
    if (options.method == Method::bms_star && !report.options.bms.exact_targets) {
        const double per_class = options.spec.shots + options.spec.queries_per_class;
        report.options.bms.exact_targets = std::vector<double>(options.spec.n_way, per_class);
    }
    report.options.spec.seed = options.seed;
    report.episode_accuracy.assign(options.episodes, 0.0);

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::mutex failure_mutex;
    std::optional<EpisodeFailure> failure;

    auto worker = [&] {
        while (!failed.load()) {
            const std::size_t i = next.fetch_add(1);
            if (i >= static_cast<std::size_t>(options.episodes)) return;
            EpisodeSpec spec = options.spec;
            spec.seed = episode_seed(options.seed, i);
            try {
                const Episode episode = sample_episode(store, spec);
                const ProcessedEpisode processed = peme(episode, options.prep, base_center);
                const Labels predicted = classify_episode(processed, options.method, report.options.bms);
                report.episode_accuracy[i] = query_accuracy(predicted, processed.hidden_labels);
            } catch (const std::exception& e) {
                std::lock_guard lock(failure_mutex);
                // Keep the lowest failing index so the error is thread-count independent.
                if (!failure || i < failure->index()) failure.emplace(i, spec.seed, e.what());
                failed.store(true);
            }
        }
    };

    const auto start = std::chrono::steady_clock::now();
    const int threads = std::max(1, std::min(options.threads, options.episodes));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (failure) throw *failure;

    // Sequential reduction in index order keeps the floating-point result
    // independent of scheduling.
    double sum = 0.0;
    for (double a : report.episode_accuracy) sum += a;
    const double n = static_cast<double>(options.episodes);
    report.mean_accuracy = sum / n;
    double sq = 0.0;
    for (double a : report.episode_accuracy) sq += (a - report.mean_accuracy) * (a - report.mean_accuracy);
    const double sample_std = options.episodes > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    report.ci95 = 1.96 * sample_std / std::sqrt(n);
    report.mean_episode_seconds = elapsed / n;
    return report;
}

std::string method_name(Method method) {
    switch (method) {
        case Method::ncm: return "ncm";
        case Method::bms: return "bms";
        case Method::bms_star: return "bms_star";
    }
    return "?";
}

Method parse_method(const std::string& name) {
    if (name == "ncm") return Method::ncm;
    if (name == "bms") return Method::bms;
    if (name == "bms_star") return Method::bms_star;
    throw std::invalid_argument("unknown method '" + name + "'");
}

std::string center_name(CenterMode mode) {
    switch (mode) {
        case CenterMode::base_mean: return "base";
        case CenterMode::novel_mean: return "novel";
        case CenterMode::none: return "none";
    }
    return "?";
}

CenterMode parse_center(const std::string& name) {
    if (name == "base") return CenterMode::base_mean;
    if (name == "novel") return CenterMode::novel_mean;
    if (name == "none") return CenterMode::none;
    throw std::invalid_argument("unknown center mode '" + name + "'");
}

std::string report_to_json(const EvalReport& report, bool include_timing) {
    using nlohmann::ordered_json;
    const EvalOptions& o = report.options;

    ordered_json prep = {
        {"beta", o.prep.beta},
        {"epsilon", o.prep.epsilon},
        {"center", center_name(o.prep.center_mode)},
        {"qr", o.prep.apply_qr},
        {"base_center_raw", o.prep.base_center_raw},
    };
    ordered_json config = {
        {"n", o.spec.n_way},
        {"s", o.spec.shots},
        {"q", o.spec.queries_per_class},
        {"episodes", o.episodes},
        {"seed", o.seed},
        {"preprocess", prep},
    };
    if (report.method != Method::ncm) {
        ordered_json bms = {
            {"lambda", o.bms.lambda},
            {"outer_iters", o.bms.outer_iters},
            {"sinkhorn_iters", o.bms.sinkhorn_iters},
            {"epochs", o.bms.epochs.value_or(-1)},
            {"lr", o.bms.lr},
            {"momentum", o.bms.momentum},
            {"kappa", o.bms.kappa_init},
            {"clamp_support", o.bms.clamp_support},
            {"persist_kappa", o.bms.persist_kappa},
        };
        if (o.bms.exact_targets) bms["targets"] = *o.bms.exact_targets;
        config["bms"] = bms;
    }

    ordered_json j = {
        {"method", method_name(report.method)},
        {"episodes", report.episodes},
        {"mean_accuracy", report.mean_accuracy},
        {"ci95", report.ci95},
    };
    if (include_timing) j["mean_episode_seconds"] = report.mean_episode_seconds;
    j["seed"] = report.seed;
    j["config"] = config;
    return j.dump(2) + "\n";
}

std::string report_to_tsv(const EvalReport& report) {
    const EvalOptions& o = report.options;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s\t%d\t%d\t%d\t%d\t%.6f\t%.6f\t%.6g\t%llu", method_name(report.method).c_str(),
                  o.spec.n_way, o.spec.shots, o.spec.queries_per_class, report.episodes, report.mean_accuracy,
                  report.ci95, report.mean_episode_seconds, static_cast<unsigned long long>(report.seed));
    return buf;
}

}  // namespace fsot
