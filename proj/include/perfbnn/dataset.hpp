#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "perfbnn/errors.hpp"
#include "perfbnn/random.hpp"

namespace perfbnn {

enum class OptionKind { binary, numeric };

struct OptionSpec {
    std::string name;
    OptionKind kind = OptionKind::binary;
    std::vector<double> levels; // sorted, distinct
};

/// Ordered configuration options with their observed levels.
class OptionSchema {
public:
    OptionSchema() = default;

    explicit OptionSchema(std::vector<OptionSpec> options) : options_(std::move(options)) { validate(); }

    std::size_t size() const noexcept { return options_.size(); }
    bool empty() const noexcept { return options_.empty(); }
    const OptionSpec& operator[](std::size_t j) const { return options_[j]; }
    const std::vector<OptionSpec>& options() const noexcept { return options_; }

    std::vector<std::string> names() const
    {
        std::vector<std::string> out;
        out.reserve(options_.size());
        for (const auto& o : options_)
            out.push_back(o.name);
        return out;
    }

    /// Index of the option called `name`, or size() when absent.
    std::size_t index_of(const std::string& name) const
    {
        for (std::size_t j = 0; j < options_.size(); ++j)
            if (options_[j].name == name)
                return j;
        return options_.size();
    }

    /// Position of `value` among option j's levels, or levels.size() when it is not a level.
    std::size_t level_index(std::size_t j, double value) const
    {
        const auto& lv = options_[j].levels;
        const auto it = std::lower_bound(lv.begin(), lv.end(), value);
        if (it == lv.end() || *it != value)
            return lv.size();
        return static_cast<std::size_t>(it - lv.begin());
    }

    OptionSchema subset(const std::vector<std::size_t>& columns) const
    {
        std::vector<OptionSpec> out;
        out.reserve(columns.size());
        for (auto c : columns)
            out.push_back(options_.at(c));
        return OptionSchema(std::move(out));
    }

    friend bool operator==(const OptionSchema& a, const OptionSchema& b)
    {
        if (a.size() != b.size())
            return false;
        for (std::size_t j = 0; j < a.size(); ++j)
            if (a[j].name != b[j].name || a[j].kind != b[j].kind || a[j].levels != b[j].levels)
                return false;
        return true;
    }

private:
    void validate() const
    {
        std::unordered_set<std::string> seen;
        for (const auto& o : options_) {
            if (o.name.empty())
                throw DataError(DataErrorKind::invalid_argument, "option names must be non-empty");
            if (!seen.insert(o.name).second)
                throw DataError(DataErrorKind::invalid_argument, "duplicate option name '" + o.name + "'");
            if (o.levels.empty())
                throw DataError(DataErrorKind::invalid_argument, "option '" + o.name + "' has no levels");
            if (!std::is_sorted(o.levels.begin(), o.levels.end()) ||
                std::adjacent_find(o.levels.begin(), o.levels.end()) != o.levels.end())
                throw DataError(DataErrorKind::invalid_argument,
                                "levels of option '" + o.name + "' must be sorted and distinct");
            if (o.kind == OptionKind::binary && o.levels != std::vector<double>{0.0, 1.0})
                throw DataError(DataErrorKind::invalid_argument,
                                "binary option '" + o.name + "' must have levels {0, 1}");
        }
    }

    std::vector<OptionSpec> options_;
};

/// Measured configurations: one row per measurement, one column per option.
struct PerformanceDataset {
    OptionSchema schema;
    Eigen::MatrixXd rows;         // N x n
    Eigen::VectorXd performance;  // N

    std::size_t size() const noexcept { return static_cast<std::size_t>(rows.rows()); }

    void validate() const
    {
        if (rows.rows() < 1)
            throw DataError(DataErrorKind::empty_file, "dataset has no rows");
        if (static_cast<std::size_t>(rows.cols()) != schema.size())
            throw DataError(DataErrorKind::schema_mismatch, "row width does not match schema size");
        if (performance.size() != rows.rows())
            throw DataError(DataErrorKind::schema_mismatch, "performance length does not match row count");
        for (Eigen::Index i = 0; i < rows.rows(); ++i)
            for (Eigen::Index j = 0; j < rows.cols(); ++j)
                if (schema.level_index(static_cast<std::size_t>(j), rows(i, j)) ==
                    schema[static_cast<std::size_t>(j)].levels.size())
                    throw DataError(DataErrorKind::schema_mismatch,
                                    "row " + std::to_string(i) + ": value outside levels of option '" +
                                        schema[static_cast<std::size_t>(j)].name + "'");
    }

    PerformanceDataset select_rows(const std::vector<std::size_t>& indices) const
    {
        PerformanceDataset out{schema, Eigen::MatrixXd(indices.size(), rows.cols()),
                               Eigen::VectorXd(indices.size())};
        for (std::size_t k = 0; k < indices.size(); ++k) {
            out.rows.row(static_cast<Eigen::Index>(k)) = rows.row(static_cast<Eigen::Index>(indices[k]));
            out.performance[static_cast<Eigen::Index>(k)] = performance[static_cast<Eigen::Index>(indices[k])];
        }
        return out;
    }

    PerformanceDataset select_columns(const std::vector<std::size_t>& columns) const
    {
        PerformanceDataset out{schema.subset(columns), Eigen::MatrixXd(rows.rows(), columns.size()), performance};
        for (std::size_t k = 0; k < columns.size(); ++k)
            out.rows.col(static_cast<Eigen::Index>(k)) = rows.col(static_cast<Eigen::Index>(columns[k]));
        return out;
    }
};

/// Builds the schema implied by a matrix of observed values: binary iff every value is 0 or 1.
inline OptionSchema infer_schema(const std::vector<std::string>& names, const Eigen::MatrixXd& rows)
{
    std::vector<OptionSpec> options;
    options.reserve(names.size());
    for (std::size_t j = 0; j < names.size(); ++j) {
        std::set<double> distinct;
        for (Eigen::Index i = 0; i < rows.rows(); ++i)
            distinct.insert(rows(i, static_cast<Eigen::Index>(j)));
        const bool binary = std::all_of(distinct.begin(), distinct.end(), [](double v) { return v == 0.0 || v == 1.0; });
        OptionSpec spec{names[j], binary ? OptionKind::binary : OptionKind::numeric, {}};
        spec.levels = binary ? std::vector<double>{0.0, 1.0} : std::vector<double>(distinct.begin(), distinct.end());
        options.push_back(std::move(spec));
    }
    return OptionSchema(std::move(options));
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

namespace detail {

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    std::string out = s.substr(b, e - b + 1);
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"')
        out = out.substr(1, out.size() - 2);
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ','))
        cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',')
        cells.emplace_back();
    return cells;
}

inline bool parse_double(const std::string& s, double& out)
{
    if (s.empty())
        return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+')
        ++first;
    const auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last && std::isfinite(out);
}

} // namespace detail

/// Reads a numeric CSV with a header row. A header-only file yields zero rows.
inline CsvTable read_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError(DataErrorKind::missing_file, "cannot open '" + path + "'");
    CsvTable table;
    std::string line;
    bool have_header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty())
            continue;
        auto cells = detail::split_csv_line(line);
        if (!have_header) {
            if (line_no == 1 && cells.size() > 0 && cells[0].size() >= 3 &&
                cells[0].compare(0, 3, "\xEF\xBB\xBF") == 0)
                cells[0] = cells[0].substr(3);
            table.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != table.header.size())
            throw DataError(DataErrorKind::bad_cell, path + ":" + std::to_string(line_no) + ": expected " +
                                                         std::to_string(table.header.size()) + " cells, found " +
                                                         std::to_string(cells.size()));
        std::vector<double> values(cells.size());
        for (std::size_t j = 0; j < cells.size(); ++j)
            if (!detail::parse_double(cells[j], values[j]))
                throw DataError(DataErrorKind::bad_cell, path + ": row " + std::to_string(table.rows.size() + 1) +
                                                             ", column '" + table.header[j] + "': cannot parse '" +
                                                             cells[j] + "' as a finite number");
        table.rows.push_back(std::move(values));
    }
    if (!have_header)
        throw DataError(DataErrorKind::empty_file, "'" + path + "' is empty");
    return table;
}

/// Loads measurements from CSV; every column except `performance_column` becomes an option.
inline PerformanceDataset load_dataset(const std::string& path, const std::string& performance_column)
{
    const CsvTable table = read_csv(path);
    const auto perf_it = std::find(table.header.begin(), table.header.end(), performance_column);
    if (perf_it == table.header.end())
        throw DataError(DataErrorKind::missing_column,
                        "'" + path + "' has no performance column '" + performance_column + "'");
    if (table.rows.empty())
        throw DataError(DataErrorKind::empty_file, "'" + path + "' contains a header but no data rows");
    const auto perf_col = static_cast<std::size_t>(perf_it - table.header.begin());

    std::vector<std::string> names;
    for (std::size_t j = 0; j < table.header.size(); ++j)
        if (j != perf_col)
            names.push_back(table.header[j]);

    const auto n_rows = static_cast<Eigen::Index>(table.rows.size());
    Eigen::MatrixXd rows(n_rows, static_cast<Eigen::Index>(names.size()));
    Eigen::VectorXd perf(n_rows);
    for (Eigen::Index i = 0; i < n_rows; ++i) {
        const auto& r = table.rows[static_cast<std::size_t>(i)];
        Eigen::Index c = 0;
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (j == perf_col)
                perf[i] = r[j];
            else
                rows(i, c++) = r[j];
        }
    }
    PerformanceDataset ds{infer_schema(names, rows), std::move(rows), std::move(perf)};
    ds.validate();
    return ds;
}

/// Shortest decimal text that round-trips to the same double.
inline std::string format_number(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline void write_dataset_csv(std::ostream& out, const PerformanceDataset& ds, const std::string& performance_column)
{
    for (const auto& o : ds.schema.options())
        out << o.name << ',';
    out << performance_column << '\n';
    for (Eigen::Index i = 0; i < ds.rows.rows(); ++i) {
        for (Eigen::Index j = 0; j < ds.rows.cols(); ++j)
            out << format_number(ds.rows(i, j)) << ',';
        out << format_number(ds.performance[i]) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Preprocessing

enum class DropReason { constant, linearly_dependent };

inline const char* to_string(DropReason r) noexcept
{
    return r == DropReason::constant ? "constant" : "linearly-dependent";
}

struct DroppedColumn {
    std::string name;
    DropReason reason;

    friend bool operator==(const DroppedColumn&, const DroppedColumn&) = default;
};

struct PreprocessReport {
    std::vector<DroppedColumn> dropped_columns;
    std::size_t retained_count = 0;
    std::vector<std::size_t> retained_columns; // indices into the original schema

    friend bool operator==(const PreprocessReport&, const PreprocessReport&) = default;
};

inline constexpr double default_collinear_tolerance = 1e-8;

/// Drops constant columns, then every column whose residual after least-squares projection
/// onto the intercept and the previously retained columns is below tol * ||column||.
inline std::pair<PerformanceDataset, PreprocessReport> remove_collinear(const PerformanceDataset& ds,
                                                                         double tol = default_collinear_tolerance)
{
    if (!(tol > 0.0))
        throw DataError(DataErrorKind::invalid_argument, "collinearity tolerance must be positive");

    const Eigen::Index n_rows = ds.rows.rows();
    PreprocessReport report;
    std::vector<Eigen::VectorXd> basis;
    basis.push_back(Eigen::VectorXd::Constant(n_rows, 1.0 / std::sqrt(static_cast<double>(n_rows))));

    for (std::size_t j = 0; j < ds.schema.size(); ++j) {
        const Eigen::VectorXd col = ds.rows.col(static_cast<Eigen::Index>(j));
        if ((col.array() == col[0]).all()) {
            report.dropped_columns.push_back({ds.schema[j].name, DropReason::constant});
            continue;
        }
        // Gram-Schmidt, applied twice for orthogonality in floating point.
        Eigen::VectorXd r = col;
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& q : basis)
                r -= q.dot(r) * q;
        const double rn = r.norm();
        if (rn < tol * col.norm()) {
            report.dropped_columns.push_back({ds.schema[j].name, DropReason::linearly_dependent});
            continue;
        }
        basis.push_back(r / rn);
        report.retained_columns.push_back(j);
    }
    report.retained_count = report.retained_columns.size();
    if (report.retained_count == 0)
        throw DataError(DataErrorKind::degenerate_range, "collinearity removal left no option columns");
    return {ds.select_columns(report.retained_columns), std::move(report)};
}

/// Affine map of performance values onto [0, 100], fitted on training data.
struct Normalizer {
    double y_min = 0.0;
    double y_max = 1.0;

    static Normalizer fit(const Eigen::VectorXd& performance)
    {
        if (performance.size() == 0)
            throw DataError(DataErrorKind::empty_file, "cannot fit a normalizer on no data");
        const double lo = performance.minCoeff();
        const double hi = performance.maxCoeff();
        if (!(hi > lo))
            throw DataError(DataErrorKind::degenerate_range,
                            "performance values are constant (" + format_number(lo) + "); cannot normalize");
        if (!std::isfinite(hi - lo))
            throw NumericalError("performance range " + format_number(lo) + " .. " + format_number(hi) +
                                 " overflows double precision");
        return {lo, hi};
    }

    double apply(double y) const noexcept { return (y - y_min) / (y_max - y_min) * 100.0; }
    double invert(double v) const noexcept { return v / 100.0 * (y_max - y_min) + y_min; }

    friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

inline std::pair<PerformanceDataset, Normalizer> normalize_performance(const PerformanceDataset& ds)
{
    const Normalizer nz = Normalizer::fit(ds.performance);
    PerformanceDataset out = ds;
    out.performance = ds.performance.unaryExpr([&](double y) { return nz.apply(y); });
    return {std::move(out), nz};
}

inline std::pair<double, double> denormalize_interval(double lo, double hi, const Normalizer& nz)
{
    if (lo > hi)
        throw DataError(DataErrorKind::invalid_argument, "interval lower bound exceeds upper bound");
    return {nz.invert(lo), nz.invert(hi)};
}

// ---------------------------------------------------------------------------
// Fold splitting

/// Shuffled partition of {0..N-1} into K folds whose sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed)
{
    if (k < 2)
        throw DataError(DataErrorKind::invalid_argument, "fold count must be at least 2");
    if (n < k)
        throw DataError(DataErrorKind::too_small,
                        "cannot split " + std::to_string(n) + " points into " + std::to_string(k) + " folds");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(idx);

    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = n / k + (f < n % k ? 1 : 0);
        folds[f].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                        idx.begin() + static_cast<std::ptrdiff_t>(pos + size));
        pos += size;
    }
    return folds;
}

} // namespace perfbnn
