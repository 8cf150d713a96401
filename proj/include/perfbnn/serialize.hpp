#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "perfbnn/bnn.hpp"
#include "perfbnn/calibration.hpp"
#include "perfbnn/dataset.hpp"
#include "perfbnn/ensemble.hpp"
#include "perfbnn/errors.hpp"
#include "perfbnn/hpo.hpp"

namespace perfbnn {

using nlohmann::json;

inline constexpr int model_format_version = 1;

namespace detail {

inline json vector_json(const Eigen::VectorXd& v)
{
    return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vector_from_json(const json& j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// +inf (a failed evaluation) is written as null.
inline json score_json(double s) { return std::isfinite(s) ? json(s) : json(nullptr); }

inline double score_from_json(const json& j)
{
    return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

} // namespace detail

// nlohmann ADL hooks --------------------------------------------------------

inline void to_json(json& j, const OptionSchema& s)
{
    j = json::array();
    for (const auto& o : s.options())
        j.push_back({{"name", o.name}, {"kind", o.kind == OptionKind::binary ? "binary" : "numeric"}, {"levels", o.levels}});
}

inline void from_json(const json& j, OptionSchema& s)
{
    std::vector<OptionSpec> opts;
    for (const auto& o : j) {
        const auto kind = o.at("kind").get<std::string>();
        if (kind != "binary" && kind != "numeric")
            throw DataError(DataErrorKind::invalid_argument, "unknown option kind '" + kind + "'");
        opts.push_back({o.at("name").get<std::string>(), kind == "binary" ? OptionKind::binary : OptionKind::numeric,
                        o.at("levels").get<std::vector<double>>()});
    }
    s = OptionSchema(std::move(opts));
}

inline void to_json(json& j, const Normalizer& n) { j = {{"y_min", n.y_min}, {"y_max", n.y_max}}; }

inline void from_json(const json& j, Normalizer& n)
{
    n.y_min = j.at("y_min").get<double>();
    n.y_max = j.at("y_max").get<double>();
    if (!(n.y_max > n.y_min))
        throw DataError(DataErrorKind::degenerate_range, "normalizer range is empty");
}

inline void to_json(json& j, const PreprocessReport& r)
{
    json dropped = json::array();
    for (const auto& d : r.dropped_columns)
        dropped.push_back({{"name", d.name}, {"reason", to_string(d.reason)}});
    j = {{"dropped_columns", dropped}, {"retained_count", r.retained_count}, {"retained_columns", r.retained_columns}};
}

inline void from_json(const json& j, PreprocessReport& r)
{
    r.dropped_columns.clear();
    for (const auto& d : j.at("dropped_columns")) {
        const auto reason = d.at("reason").get<std::string>();
        r.dropped_columns.push_back({d.at("name").get<std::string>(),
                                     reason == "constant" ? DropReason::constant : DropReason::linearly_dependent});
    }
    r.retained_count = j.at("retained_count").get<std::size_t>();
    r.retained_columns = j.at("retained_columns").get<std::vector<std::size_t>>();
    if (r.retained_count != r.retained_columns.size())
        throw DataError(DataErrorKind::invalid_argument, "preprocess report is inconsistent");
}

inline void to_json(json& j, const Hyperparams& hp)
{
    j = {{"depth", hp.depth},
         {"epochs", hp.epochs},
         {"base_lr", hp.base_lr},
         {"neurons_per_layer", hp.neurons_per_layer},
         {"laplace_scale", hp.laplace_scale}};
}

inline void from_json(const json& j, Hyperparams& hp)
{
    hp.depth = j.at("depth").get<int>();
    hp.epochs = j.at("epochs").get<int>();
    hp.base_lr = j.at("base_lr").get<double>();
    hp.neurons_per_layer = j.at("neurons_per_layer").get<int>();
    hp.laplace_scale = j.at("laplace_scale").get<double>();
}

inline void to_json(json& j, const CalibrationTable& t)
{
    j = {{"levels", t.levels}, {"zetas", t.zetas}, {"zeta_max", t.zeta_max}};
}

inline void from_json(const json& j, CalibrationTable& t)
{
    t.levels = j.at("levels").get<std::vector<double>>();
    t.zetas = j.at("zetas").get<std::vector<double>>();
    t.zeta_max = j.at("zeta_max").get<std::vector<double>>();
    t.validate();
}

inline void to_json(json& j, const BnnModel& m)
{
    const ParameterLayout layout(m.topology);
    json layers = json::array();
    for (const auto& l : layout.layers)
        layers.push_back({{"weight_offset", l.weight_offset},
                          {"bias_offset", l.bias_offset},
                          {"fan_in", l.fan_in},
                          {"fan_out", l.fan_out}});
    j = {{"topology", {{"input_dim", m.topology.input_dim}, {"hidden_layers", m.topology.hidden_layers}}},
         {"layout", layers},
         {"posterior", {{"mean", detail::vector_json(m.posterior.mean)},
                        {"raw_scale", detail::vector_json(m.posterior.raw_scale)}}},
         {"prior", {{"laplace_scale", m.prior.laplace_scale}, {"gaussian_sd", m.prior.gaussian_sd}}},
         {"training", {{"epochs", m.meta.epochs}, {"base_lr", m.meta.base_lr}, {"seed", m.meta.seed}}}};
}

inline void from_json(const json& j, BnnModel& m)
{
    m.topology.input_dim = j.at("topology").at("input_dim").get<int>();
    m.topology.hidden_layers = j.at("topology").at("hidden_layers").get<std::vector<int>>();
    const ParameterLayout layout(m.topology);
    const auto& layers = j.at("layout");
    if (layers.size() != layout.layers.size())
        throw DataError(DataErrorKind::invalid_argument, "model layout does not match its topology");
    for (std::size_t l = 0; l < layout.layers.size(); ++l) {
        const LayerSlice s{layers[l].at("weight_offset").get<Eigen::Index>(), layers[l].at("bias_offset").get<Eigen::Index>(),
                           layers[l].at("fan_in").get<Eigen::Index>(), layers[l].at("fan_out").get<Eigen::Index>()};
        if (!(s == layout.layers[l]))
            throw DataError(DataErrorKind::invalid_argument, "model layout does not match its topology");
    }
    m.posterior.mean = detail::vector_from_json(j.at("posterior").at("mean"));
    m.posterior.raw_scale = detail::vector_from_json(j.at("posterior").at("raw_scale"));
    if (m.posterior.mean.size() != layout.size || m.posterior.raw_scale.size() != layout.size)
        throw DataError(DataErrorKind::invalid_argument, "posterior length does not match topology");
    if (!m.posterior.mean.allFinite() || !m.posterior.raw_scale.allFinite())
        throw DataError(DataErrorKind::invalid_argument, "posterior contains non-finite values");
    m.prior.laplace_scale = j.at("prior").at("laplace_scale").get<double>();
    m.prior.gaussian_sd = j.at("prior").at("gaussian_sd").get<double>();
    m.meta.epochs = j.at("training").at("epochs").get<int>();
    m.meta.base_lr = j.at("training").at("base_lr").get<double>();
    m.meta.seed = j.at("training").at("seed").get<std::uint64_t>();
}

inline void to_json(json& j, const EnsembleModel& em)
{
    json members = json::array();
    for (const auto& m : em.members)
        members.push_back({{"bnn", m.model},
                           {"calibration", m.calibration},
                           {"train_indices", m.train_indices},
                           {"eval_indices", m.eval_indices},
                           {"predict_seed", m.predict_seed}});
    j = {{"format_version", model_format_version},
         {"schema", em.schema},
         {"performance_column", em.performance_column},
         {"preprocess", em.preprocess},
         {"normalizer", em.normalizer},
         {"hyperparams", em.hyperparams},
         {"config", {{"folds", em.config.folds},
                     {"predictive_samples", em.config.predictive_samples},
                     {"levels", em.config.levels},
                     {"grid_size", em.config.grid_size},
                     {"collinear_tolerance", em.config.collinear_tolerance}}},
         {"seed", em.seed},
         {"members", members}};
}

inline void from_json(const json& j, EnsembleModel& em)
{
    if (j.at("format_version").get<int>() != model_format_version)
        throw DataError(DataErrorKind::invalid_argument, "unsupported model format version");
    em.schema = j.at("schema").get<OptionSchema>();
    em.performance_column = j.at("performance_column").get<std::string>();
    em.preprocess = j.at("preprocess").get<PreprocessReport>();
    em.normalizer = j.at("normalizer").get<Normalizer>();
    em.hyperparams = j.at("hyperparams").get<Hyperparams>();
    const auto& c = j.at("config");
    em.config.folds = c.at("folds").get<int>();
    em.config.predictive_samples = c.at("predictive_samples").get<int>();
    em.config.levels = c.at("levels").get<std::vector<double>>();
    em.config.grid_size = c.at("grid_size").get<int>();
    em.config.collinear_tolerance = c.at("collinear_tolerance").get<double>();
    em.seed = j.at("seed").get<std::uint64_t>();
    em.members.clear();
    for (const auto& mj : j.at("members")) {
        EnsembleMember m;
        m.model = mj.at("bnn").get<BnnModel>();
        m.calibration = mj.at("calibration").get<CalibrationTable>();
        m.train_indices = mj.at("train_indices").get<std::vector<std::size_t>>();
        m.eval_indices = mj.at("eval_indices").get<std::vector<std::size_t>>();
        m.predict_seed = mj.at("predict_seed").get<std::uint64_t>();
        if (m.eval_indices.empty())
            throw DataError(DataErrorKind::invalid_argument, "ensemble member has an empty evaluation fold");
        em.members.push_back(std::move(m));
    }
    if (em.members.size() < 2 || static_cast<int>(em.members.size()) != em.config.folds)
        throw DataError(DataErrorKind::invalid_argument, "ensemble must have K >= 2 members, one per fold");
    for (auto col : em.preprocess.retained_columns)
        if (col >= em.schema.size())
            throw DataError(DataErrorKind::invalid_argument, "retained column index outside the schema");
    for (const auto& m : em.members)
        if (m.model.topology.input_dim != static_cast<int>(em.preprocess.retained_count))
            throw DataError(DataErrorKind::invalid_argument, "member input width differs from retained columns");
}

inline void to_json(json& j, const EvaluationRecord& r)
{
    j = {{"hyperparams", r.hyperparams}, {"score", detail::score_json(r.score)}, {"seed", r.seed}, {"phase", r.phase}};
}

inline void from_json(const json& j, EvaluationRecord& r)
{
    r.hyperparams = j.at("hyperparams").get<Hyperparams>();
    r.score = detail::score_from_json(j.at("score"));
    r.seed = j.at("seed").get<std::uint64_t>();
    r.phase = j.at("phase").get<std::string>();
}

inline void to_json(json& j, const TuningTrace& t)
{
    json best = json::array();
    for (double s : t.depth_best)
        best.push_back(detail::score_json(s));
    j = {{"seed", t.seed},
         {"space", {{"option_count", t.space.option_count}, {"max_depth", t.space.max_depth}}},
         {"records", t.records},
         {"depth_best", best},
         {"chosen_depth", t.chosen_depth},
         {"final_hyperparams", t.final_hyperparams}};
}

inline void from_json(const json& j, TuningTrace& t)
{
    t.seed = j.at("seed").get<std::uint64_t>();
    t.space.option_count = j.at("space").at("option_count").get<int>();
    t.space.max_depth = j.at("space").at("max_depth").get<int>();
    t.records = j.at("records").get<std::vector<EvaluationRecord>>();
    t.depth_best.clear();
    for (const auto& s : j.at("depth_best"))
        t.depth_best.push_back(detail::score_from_json(s));
    t.chosen_depth = j.at("chosen_depth").get<int>();
    t.final_hyperparams = j.at("final_hyperparams").get<Hyperparams>();
}

// File helpers --------------------------------------------------------------

inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

inline json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError(DataErrorKind::missing_file, "cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(DataErrorKind::bad_cell, "'" + path + "' is not valid JSON: " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError(DataErrorKind::missing_file, "cannot write '" + path + "'");
    out << text;
}

template <typename T>
T load_json_as(const std::string& path)
{
    const json j = read_json_file(path);
    try {
        return j.get<T>();
    } catch (const json::exception& e) {
        throw DataError(DataErrorKind::invalid_argument, "'" + path + "' has unexpected structure: " + e.what());
    }
}

} // namespace perfbnn
