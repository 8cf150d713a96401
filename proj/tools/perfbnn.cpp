// perfbnn: command-line front end (sample, tune, train, predict, evaluate).

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "perfbnn/cli.hpp"

namespace {

using nlohmann::json;
using namespace perfbnn;
using namespace perfbnn::cli;

// Flags collected as optionals so that only the ones given on the command line override the
// config file.
struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> performance_column;
    std::optional<std::string> population;
    std::optional<int> t;
    std::optional<std::string> train_file;
    std::optional<std::string> test_file;
    std::optional<std::string> input;
    std::optional<std::vector<std::string>> models;
    std::optional<std::string> trace;
    std::optional<std::string> curve;
    std::optional<int> samples;
    std::optional<int> max_depth;
    std::optional<int> folds;
    std::optional<int> grid_size;
    std::optional<std::vector<double>> levels;
    std::optional<std::vector<double>> rho;
    std::optional<int> depth;
    std::optional<int> epochs;
    std::optional<double> lr;
    std::optional<int> neurons;
    std::optional<double> laplace_scale;

    json overrides() const
    {
        json j = json::object();
        auto put = [&](const char* key, const auto& v) {
            if (v)
                j[key] = *v;
        };
        put("seed", seed);
        put("out", out);
        put("performance_column", performance_column);
        put("population", population);
        put("t", t);
        put("train_file", train_file);
        put("test_file", test_file);
        put("input", input);
        put("models", models);
        put("trace", trace);
        put("curve", curve);
        put("samples", samples);
        put("max_depth", max_depth);
        put("folds", folds);
        put("grid_size", grid_size);
        put("levels", levels);
        put("rho", rho);
        put("depth", depth);
        put("epochs", epochs);
        put("lr", lr);
        put("neurons", neurons);
        put("laplace_scale", laplace_scale);
        return j;
    }
};

void add_common(CLI::App* cmd, Flags& f)
{
    cmd->add_option("--config", f.config, "JSON file with flat settings; flags take precedence");
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--out", f.out, "output path (stdout when omitted)");
    cmd->add_option("--performance-column", f.performance_column, "name of the performance column");
}

RunConfig resolve(const Flags& f)
{
    RunConfig cfg;
    if (!f.config.empty())
        load_config_file(cfg, f.config);
    apply_config(cfg, f.overrides());
    validate(cfg);
    return cfg;
}

int run(int argc, char** argv)
{
    CLI::App app{"Performance prediction with calibrated Bayesian neural network ensembles"};
    app.require_subcommand(1);
    Flags f;

    auto* sample = app.add_subcommand("sample", "t-wise selection from a measured population");
    add_common(sample, f);
    sample->add_option("--population", f.population, "CSV of measured configurations");
    sample->add_option("-t,--t", f.t, "interaction strength (1 to 3)");

    auto* tune_cmd = app.add_subcommand("tune", "hyperparameter search, writes a tuning trace");
    add_common(tune_cmd, f);
    tune_cmd->add_option("--train-file", f.train_file, "training CSV");
    tune_cmd->add_option("--samples", f.samples, "predictive samples per validation forecast");
    tune_cmd->add_option("--max-depth", f.max_depth, "deepest network considered");

    auto* train_cmd = app.add_subcommand("train", "train and calibrate an ensemble, writes a model");
    add_common(train_cmd, f);
    train_cmd->add_option("--train-file", f.train_file, "training CSV");
    train_cmd->add_option("--trace", f.trace, "tuning trace supplying hyperparameters");
    train_cmd->add_option("--folds", f.folds, "ensemble size K");
    train_cmd->add_option("--samples", f.samples, "predictive samples");
    train_cmd->add_option("--levels", f.levels, "calibration levels in percent")->delimiter(',');
    train_cmd->add_option("--grid-size", f.grid_size, "scaling-factor grid points");
    train_cmd->add_option("--depth", f.depth, "hidden layers");
    train_cmd->add_option("--epochs", f.epochs, "training epochs (500, 1000 or 2000)");
    train_cmd->add_option("--lr", f.lr, "base learning rate");
    train_cmd->add_option("--neurons", f.neurons, "neurons per hidden layer");
    train_cmd->add_option("--laplace-scale", f.laplace_scale, "first-layer Laplace prior scale");

    auto* predict_cmd = app.add_subcommand("predict", "predictions and calibrated intervals as CSV");
    add_common(predict_cmd, f);
    std::optional<std::string> predict_model;
    predict_cmd->add_option("--model", predict_model, "model JSON");
    predict_cmd->add_option("--input", f.input, "CSV of configurations");
    predict_cmd->add_option("--rho", f.rho, "interval levels in percent")->delimiter(',');

    auto* evaluate_cmd = app.add_subcommand("evaluate", "MAPE, cal score and calibration curve on a test set");
    add_common(evaluate_cmd, f);
    evaluate_cmd->add_option("--model", f.models, "model JSON (repeat for several runs)");
    evaluate_cmd->add_option("--test-file", f.test_file, "test CSV with performance values");
    evaluate_cmd->add_option("--levels", f.levels, "evaluation levels in percent")->delimiter(',');
    evaluate_cmd->add_option("--curve", f.curve, "curve CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    RunConfig cfg = resolve(f);
    if (predict_model)
        cfg.model = *predict_model;

    if (sample->parsed()) {
        cli::detail::emit(cfg.out, cmd_sample(cfg, std::cerr));
    } else if (tune_cmd->parsed()) {
        cli::detail::emit(cfg.out, dump_json(json(cmd_tune(cfg, std::cerr))));
    } else if (train_cmd->parsed()) {
        cli::detail::emit(cfg.out, dump_json(json(cmd_train(cfg, std::cerr))));
    } else if (predict_cmd->parsed()) {
        cli::detail::emit(cfg.out, cmd_predict(cfg));
    } else if (evaluate_cmd->parsed()) {
        const EvaluationReport rep = cmd_evaluate(cfg, std::cerr);
        cli::detail::emit(cfg.out, dump_json(rep.report));
        const std::string curve = cfg.curve.empty() ? default_curve_path(cfg.out) : cfg.curve;
        if (!curve.empty())
            write_text_file(curve, rep.curve_csv);
    }
    return exit_ok;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return exit_numerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_data;
    }
}
