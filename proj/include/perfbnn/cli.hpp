#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "perfbnn/covering.hpp"
#include "perfbnn/dataset.hpp"
#include "perfbnn/ensemble.hpp"
#include "perfbnn/errors.hpp"
#include "perfbnn/hpo.hpp"
#include "perfbnn/metrics.hpp"
#include "perfbnn/serialize.hpp"

namespace perfbnn::cli {

using nlohmann::json;

enum ExitCode : int { exit_ok = 0, exit_usage = 2, exit_data = 3, exit_numerical = 4 };

/// Settings shared by every command. Keys of a JSON config file use the field names below.
struct RunConfig {
    std::uint64_t seed = 0;
    int folds = default_folds;
    int samples = default_predictive_samples;
    std::vector<double> levels = default_levels();
    int grid_size = default_grid_size;
    int t = 2;
    int max_depth = default_max_depth;
    std::string performance_column = "performance";

    std::string population;
    std::string train_file;
    std::string test_file;
    std::string input;
    std::string model;
    std::vector<std::string> models;
    std::string trace;
    std::string out;
    std::string curve;
    std::vector<double> rho{95.0};

    std::optional<int> depth;
    std::optional<int> epochs;
    std::optional<double> lr;
    std::optional<int> neurons;
    std::optional<double> laplace_scale;
};

namespace detail {

template <typename T>
T get_key(const json& j, const std::string& key)
{
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        throw UsageError("config key '" + key + "' has the wrong type");
    }
}

inline void check_levels(const std::vector<double>& levels, const std::string& what)
{
    if (levels.empty())
        throw UsageError(what + " must not be empty");
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (!(levels[i] > 0.0 && levels[i] < 100.0))
            throw UsageError(what + " must lie strictly between 0 and 100");
        if (i > 0 && !(levels[i] > levels[i - 1]))
            throw UsageError(what + " must be strictly increasing");
    }
}

inline std::string format_sig9(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline void emit(const std::string& path, const std::string& text)
{
    if (path.empty() || path == "-")
        std::cout << text << std::flush;
    else
        write_text_file(path, text);
}

} // namespace detail

/// Applies flat keys from `j` over `cfg`; unknown keys are rejected.
inline void apply_config(RunConfig& cfg, const json& j)
{
    if (!j.is_object())
        throw UsageError("config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        using detail::get_key;
        if (key == "seed")
            cfg.seed = get_key<std::uint64_t>(v, key);
        else if (key == "folds")
            cfg.folds = get_key<int>(v, key);
        else if (key == "samples")
            cfg.samples = get_key<int>(v, key);
        else if (key == "levels")
            cfg.levels = get_key<std::vector<double>>(v, key);
        else if (key == "grid_size")
            cfg.grid_size = get_key<int>(v, key);
        else if (key == "t")
            cfg.t = get_key<int>(v, key);
        else if (key == "max_depth")
            cfg.max_depth = get_key<int>(v, key);
        else if (key == "performance_column")
            cfg.performance_column = get_key<std::string>(v, key);
        else if (key == "population")
            cfg.population = get_key<std::string>(v, key);
        else if (key == "train_file")
            cfg.train_file = get_key<std::string>(v, key);
        else if (key == "test_file")
            cfg.test_file = get_key<std::string>(v, key);
        else if (key == "input")
            cfg.input = get_key<std::string>(v, key);
        else if (key == "model")
            cfg.model = get_key<std::string>(v, key);
        else if (key == "models")
            cfg.models = get_key<std::vector<std::string>>(v, key);
        else if (key == "trace")
            cfg.trace = get_key<std::string>(v, key);
        else if (key == "out")
            cfg.out = get_key<std::string>(v, key);
        else if (key == "curve")
            cfg.curve = get_key<std::string>(v, key);
        else if (key == "rho")
            cfg.rho = get_key<std::vector<double>>(v, key);
        else if (key == "depth")
            cfg.depth = get_key<int>(v, key);
        else if (key == "epochs")
            cfg.epochs = get_key<int>(v, key);
        else if (key == "lr")
            cfg.lr = get_key<double>(v, key);
        else if (key == "neurons")
            cfg.neurons = get_key<int>(v, key);
        else if (key == "laplace_scale")
            cfg.laplace_scale = get_key<double>(v, key);
        else
            throw UsageError("unknown config key '" + key + "'");
    }
}

inline void load_config_file(RunConfig& cfg, const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw UsageError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    apply_config(cfg, j);
}

inline void validate(const RunConfig& cfg)
{
    if (cfg.folds < 2)
        throw UsageError("folds must be >= 2");
    if (cfg.samples < 2)
        throw UsageError("samples must be >= 2");
    if (cfg.grid_size < 2)
        throw UsageError("grid_size must be >= 2");
    if (cfg.max_depth < 1)
        throw UsageError("max_depth must be >= 1");
    detail::check_levels(cfg.levels, "levels");
    detail::check_levels(cfg.rho, "rho");
}

inline std::string require(const std::string& value, const std::string& flag)
{
    if (value.empty())
        throw UsageError("missing required option " + flag);
    return value;
}

// ---------------------------------------------------------------------------
// sample

/// Greedy t-wise selection from a measured population; returns the selection as CSV text.
inline std::string cmd_sample(const RunConfig& cfg, std::ostream& log)
{
    const PerformanceDataset pop = load_dataset(require(cfg.population, "--population"), cfg.performance_column);
    const int n = static_cast<int>(pop.schema.size());
    if (cfg.t < 1 || cfg.t > 3 || cfg.t > n)
        throw UsageError("t must satisfy 1 <= t <= min(3, option count); got t=" + std::to_string(cfg.t) + " with " +
                         std::to_string(n) + " options");
    const TwiseSelection sel = twise_select(pop, cfg.t, cfg.seed);
    std::ostringstream csv;
    write_dataset_csv(csv, pop.select_rows(sel.rows), cfg.performance_column);
    log << "selected " << sel.rows.size() << " of " << pop.size() << " configurations; covered "
        << sel.covered_tuples << " of " << sel.total_tuples << " " << cfg.t << "-tuples ("
        << sel.coverable_tuples << " present in the population)\n";
    return csv.str();
}

// ---------------------------------------------------------------------------
// tune

inline TuningTrace cmd_tune(const RunConfig& cfg, std::ostream& log)
{
    const PerformanceDataset train = load_dataset(require(cfg.train_file, "--train-file"), cfg.performance_column);
    auto [reduced, report] = remove_collinear(train);
    for (const auto& d : report.dropped_columns)
        log << "dropped option '" << d.name << "' (" << to_string(d.reason) << ")\n";
    TuningTrace trace = tune(reduced, cfg.seed, cfg.samples, cfg.max_depth);
    const Hyperparams& hp = trace.final_hyperparams;
    log << "chosen depth " << trace.chosen_depth << ", epochs " << hp.epochs << ", lr " << hp.base_lr
        << ", neurons " << hp.neurons_per_layer << ", laplace scale " << hp.laplace_scale << " after "
        << trace.records.size() << " evaluations\n";
    return trace;
}

// ---------------------------------------------------------------------------
// train

/// Hyperparameters from the trace (if any) with individual flags layered on top. Without a trace
/// the defaults are depth 1, 2000 epochs, lr 0.01, 2n neurons and Laplace scale 0.01.
inline Hyperparams resolve_hyperparams(const RunConfig& cfg, int retained_options)
{
    Hyperparams hp{1, 2000, 0.01, 2 * retained_options, 0.01};
    if (!cfg.trace.empty())
        hp = load_json_as<TuningTrace>(cfg.trace).final_hyperparams;
    if (cfg.depth)
        hp.depth = *cfg.depth;
    if (cfg.epochs)
        hp.epochs = *cfg.epochs;
    if (cfg.lr)
        hp.base_lr = *cfg.lr;
    if (cfg.neurons)
        hp.neurons_per_layer = *cfg.neurons;
    if (cfg.laplace_scale)
        hp.laplace_scale = *cfg.laplace_scale;
    hp.validate(retained_options);
    return hp;
}

inline EnsembleConfig ensemble_config(const RunConfig& cfg)
{
    EnsembleConfig ec;
    ec.folds = cfg.folds;
    ec.predictive_samples = cfg.samples;
    ec.levels = cfg.levels;
    ec.grid_size = cfg.grid_size;
    return ec;
}

inline EnsembleModel cmd_train(const RunConfig& cfg, std::ostream& log)
{
    const PerformanceDataset train = load_dataset(require(cfg.train_file, "--train-file"), cfg.performance_column);
    const auto [reduced, report] = remove_collinear(train);
    const Hyperparams hp = resolve_hyperparams(cfg, static_cast<int>(report.retained_count));
    EnsembleModel em = train_ensemble(train, hp, ensemble_config(cfg), cfg.seed, cfg.performance_column);
    log << "trained " << em.size() << " members on " << train.size() << " rows (" << em.preprocess.retained_count
        << " of " << em.schema.size() << " options retained)\n";
    return em;
}

// ---------------------------------------------------------------------------
// predict

/// Reorders the input table's columns to the model schema. The model's performance column may be
/// present and is ignored; any other unknown or missing column is a schema error.
inline Eigen::MatrixXd configurations_for(const EnsembleModel& em, const CsvTable& table)
{
    std::vector<std::string> unknown;
    std::vector<std::optional<std::size_t>> source(em.schema.size());
    for (std::size_t j = 0; j < table.header.size(); ++j) {
        const auto& name = table.header[j];
        if (name == em.performance_column)
            continue;
        const std::size_t idx = em.schema.index_of(name);
        if (idx == em.schema.size()) {
            unknown.push_back(name);
            continue;
        }
        if (source[idx])
            throw DataError(DataErrorKind::schema_mismatch, "column '" + name + "' appears twice");
        source[idx] = j;
    }
    std::vector<std::string> missing;
    for (std::size_t o = 0; o < source.size(); ++o)
        if (!source[o])
            missing.push_back(em.schema.options()[o].name);
    if (!unknown.empty() || !missing.empty()) {
        std::string msg = "input columns do not match the model schema;";
        auto list = [&](const char* label, const std::vector<std::string>& names) {
            if (names.empty())
                return;
            msg += std::string(" ") + label + ":";
            for (const auto& n : names)
                msg += " '" + n + "'";
        };
        list("unknown", unknown);
        list("missing", missing);
        throw DataError(DataErrorKind::schema_mismatch, msg);
    }
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(source.size()));
    for (std::size_t i = 0; i < table.rows.size(); ++i)
        for (std::size_t o = 0; o < source.size(); ++o)
            rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(o)) = table.rows[i][*source[o]];
    return rows;
}

inline std::string level_label(double rho) { return format_number(rho); }

/// Prediction CSV: option values, prediction, then lo_/hi_ pairs per requested level.
inline std::string prediction_csv(const EnsembleModel& em, const Eigen::MatrixXd& rows, const std::vector<double>& rho)
{
    std::ostringstream out;
    for (const auto& o : em.schema.options())
        out << o.name << ',';
    out << "prediction";
    for (double r : rho)
        out << ",lo_" << level_label(r) << ",hi_" << level_label(r);
    out << '\n';
    if (rows.rows() == 0)
        return out.str();
    const EnsembleForecast fc = forecast(em, rows);
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        for (Eigen::Index j = 0; j < rows.cols(); ++j)
            out << detail::format_sig9(rows(i, j)) << ',';
        out << detail::format_sig9(fc.prediction(i));
        for (double r : rho) {
            const auto [lo, hi] = fc.interval(i, r, true);
            out << ',' << detail::format_sig9(lo) << ',' << detail::format_sig9(hi);
        }
        out << '\n';
    }
    return out.str();
}

inline std::string cmd_predict(const RunConfig& cfg)
{
    const EnsembleModel em = load_json_as<EnsembleModel>(require(cfg.model, "--model"));
    const CsvTable table = read_csv(require(cfg.input, "--input"));
    return prediction_csv(em, configurations_for(em, table), cfg.rho);
}

// ---------------------------------------------------------------------------
// evaluate

struct ModelEvaluation {
    double mape = 0.0;
    std::size_t excluded = 0;
    std::vector<double> alpha_before;
    std::vector<double> alpha_after;
    double cal_before = 0.0;
    double cal_after = 0.0;
};

inline ModelEvaluation evaluate_model(const EnsembleModel& em, const PerformanceDataset& test,
                                      const std::vector<double>& levels)
{
    if (test.size() == 0)
        throw DataError(DataErrorKind::empty_file, "test set is empty");
    const EnsembleForecast fc = forecast(em, test.rows);
    const std::span<const double> truths(test.performance.data(), test.size());
    ModelEvaluation ev;
    std::vector<double> pred(test.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        pred[i] = fc.prediction(static_cast<Eigen::Index>(i));
    ev.mape = mape(pred, truths, &ev.excluded);
    ev.alpha_before = observed_frequencies([&](Eigen::Index i, double r) { return fc.interval(i, r, false); },
                                           truths, levels);
    ev.alpha_after = observed_frequencies([&](Eigen::Index i, double r) { return fc.interval(i, r, true); },
                                          truths, levels);
    ev.cal_before = cal_score(levels, ev.alpha_before);
    ev.cal_after = cal_score(levels, ev.alpha_after);
    return ev;
}

inline json summary_json(const std::vector<double>& scores)
{
    json j;
    j["scores"] = scores;
    if (scores.size() >= 2) {
        const EvalSummary s = summarize(scores);
        j["mean"] = s.mean;
        j["margin"] = s.margin;
    } else {
        j["mean"] = scores.front();
        j["margin"] = nullptr;
    }
    return j;
}

struct EvaluationReport {
    json report;
    std::string curve_csv;
};

/// Scores every model on the test set. Per-level frequencies in the report and curve are means
/// over models; with a single model the report's cal equals cal_score of the curve's alpha_after.
inline EvaluationReport cmd_evaluate(const RunConfig& cfg, std::ostream& log)
{
    std::vector<std::string> paths = cfg.models;
    if (!cfg.model.empty())
        paths.insert(paths.begin(), cfg.model);
    if (paths.empty())
        throw UsageError("missing required option --model");
    require(cfg.test_file, "--test-file");

    std::vector<ModelEvaluation> evals;
    std::optional<PerformanceDataset> test;
    for (const auto& p : paths) {
        const EnsembleModel em = load_json_as<EnsembleModel>(p);
        if (!test)
            test = load_dataset(cfg.test_file, em.performance_column);
        evals.push_back(evaluate_model(em, *test, cfg.levels));
        if (evals.back().excluded > 0)
            log << "warning: " << evals.back().excluded << " test rows with zero performance excluded from MAPE\n";
    }

    const std::size_t m = evals.size();
    const std::size_t nl = cfg.levels.size();
    std::vector<double> mapes, cal_after, cal_before;
    std::vector<double> mean_before(nl, 0.0), mean_after(nl, 0.0);
    for (const auto& ev : evals) {
        mapes.push_back(ev.mape);
        cal_after.push_back(ev.cal_after);
        cal_before.push_back(ev.cal_before);
        for (std::size_t l = 0; l < nl; ++l) {
            mean_before[l] += ev.alpha_before[l] / static_cast<double>(m);
            mean_after[l] += ev.alpha_after[l] / static_cast<double>(m);
        }
    }

    EvaluationReport out;
    json& r = out.report;
    r["models"] = paths;
    r["test_file"] = cfg.test_file;
    r["test_rows"] = test->size();
    r["excluded_zero_truths"] = evals.front().excluded;
    r["mape"] = summary_json(mapes);
    r["cal"] = summary_json(cal_after);
    r["cal_before"] = summary_json(cal_before);
    json per_level = json::array();
    std::ostringstream curve;
    curve << "rho,alpha_before,alpha_after\n";
    for (std::size_t l = 0; l < nl; ++l) {
        per_level.push_back({{"rho", cfg.levels[l]}, {"alpha_before", mean_before[l]}, {"alpha_after", mean_after[l]}});
        curve << detail::format_sig9(cfg.levels[l]) << ',' << detail::format_sig9(mean_before[l]) << ','
              << detail::format_sig9(mean_after[l]) << '\n';
    }
    r["per_level"] = per_level;
    json decisions = json::array();
    if (m >= 2) {
        const WelchResult w = welch_t_test(cal_after, cal_before, 0.05);
        decisions.push_back({{"metric", "cal"},
                             {"a", "calibrated"},
                             {"b", "uncalibrated"},
                             {"statistic", perfbnn::detail::score_json(w.statistic)},
                             {"df", perfbnn::detail::score_json(w.df)},
                             {"p_value", w.p_value},
                             {"decision", to_string(w.decision)}});
    }
    r["decisions"] = decisions;
    out.curve_csv = curve.str();
    return out;
}

/// Curve path used when only the report path is given: "<report stem>.curve.csv".
inline std::string default_curve_path(const std::string& report_path)
{
    if (report_path.empty() || report_path == "-")
        return {};
    std::filesystem::path p(report_path);
    p.replace_extension();
    return p.string() + ".curve.csv";
}

} // namespace perfbnn::cli
