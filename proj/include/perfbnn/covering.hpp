#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <queue>
#include <tuple>
#include <vector>

#include "perfbnn/dataset.hpp"
#include "perfbnn/random.hpp"

namespace perfbnn {

using Configuration = std::vector<double>;

namespace detail {

// Enumerates every t-subset of options and assigns each (subset, level combination) a dense id.
class TupleSpace {
public:
    TupleSpace(std::vector<std::size_t> level_counts, std::size_t t) : counts_(std::move(level_counts)), t_(t)
    {
        std::vector<std::size_t> combo(t);
        std::iota(combo.begin(), combo.end(), std::size_t{0});
        const std::size_t n = counts_.size();
        while (true) {
            subsets_.push_back(combo);
            offsets_.push_back(total_);
            std::size_t combos = 1;
            for (auto o : combo)
                combos *= counts_[o];
            total_ += combos;
            // next combination in lexicographic order
            std::size_t i = t;
            while (i > 0 && combo[i - 1] == n - t + i - 1)
                --i;
            if (i == 0)
                break;
            ++combo[i - 1];
            for (std::size_t k = i; k < t; ++k)
                combo[k] = combo[k - 1] + 1;
        }
    }

    std::size_t total() const noexcept { return total_; }
    std::size_t subset_count() const noexcept { return subsets_.size(); }
    const std::vector<std::size_t>& subset(std::size_t s) const { return subsets_[s]; }

    /// Tuple id covered by `config` (level indices) within subset s.
    std::size_t tuple_id(std::size_t s, const std::vector<std::uint16_t>& config) const
    {
        std::size_t id = 0;
        for (auto o : subsets_[s])
            id = id * counts_[o] + config[o];
        return offsets_[s] + id;
    }

    template <typename Fn>
    void for_each_tuple(const std::vector<std::uint16_t>& config, Fn&& fn) const
    {
        for (std::size_t s = 0; s < subsets_.size(); ++s)
            fn(tuple_id(s, config));
    }

private:
    std::vector<std::size_t> counts_;
    std::size_t t_;
    std::vector<std::vector<std::size_t>> subsets_;
    std::vector<std::size_t> offsets_;
    std::size_t total_ = 0;
};

// Lazy greedy set cover over a fixed candidate list. Coverage gain is submodular, so a stale
// heap key is an upper bound and the first candidate whose refreshed gain still tops the heap
// is a true maximizer. Ties resolve through a seeded random priority per candidate.
inline std::vector<std::size_t> greedy_cover(const TupleSpace& space,
                                             const std::vector<std::vector<std::uint16_t>>& candidates,
                                             std::vector<char>& covered, std::uint64_t seed)
{
    Rng rng(seed);
    using Entry = std::tuple<std::size_t, std::uint64_t, std::size_t>; // gain, priority, candidate
    std::priority_queue<Entry> heap;
    auto gain_of = [&](std::size_t c) {
        std::size_t g = 0;
        space.for_each_tuple(candidates[c], [&](std::size_t id) { g += covered[id] ? 0 : 1; });
        return g;
    };
    std::vector<std::uint64_t> priority(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        priority[c] = rng.next_u64();
        heap.emplace(gain_of(c), priority[c], c);
    }
    std::vector<std::size_t> chosen;
    while (!heap.empty()) {
        auto [stale_gain, prio, c] = heap.top();
        heap.pop();
        if (stale_gain == 0)
            break;
        const std::size_t g = gain_of(c);
        if (g == 0)
            continue;
        if (!heap.empty() && Entry{g, prio, c} < heap.top()) {
            heap.emplace(g, prio, c);
            continue;
        }
        chosen.push_back(c);
        space.for_each_tuple(candidates[c], [&](std::size_t id) { covered[id] = 1; });
    }
    return chosen;
}

inline constexpr std::size_t max_enumerated_candidates = std::size_t{1} << 18;

// AETG-style row construction for spaces too large to enumerate: every row starts from an
// uncovered tuple, so each accepted row covers at least one new tuple.
inline std::vector<std::vector<std::uint16_t>> construct_rows(const TupleSpace& space,
                                                              const std::vector<std::size_t>& counts,
                                                              std::vector<char>& covered, std::uint64_t seed)
{
    constexpr int attempts_per_row = 50;
    Rng rng(seed);
    const std::size_t n = counts.size();
    std::size_t uncovered = static_cast<std::size_t>(std::count(covered.begin(), covered.end(), 0));
    std::vector<std::vector<std::uint16_t>> rows;

    // Reverse lookup: id -> (subset, level combination).
    auto decode = [&](std::size_t id, std::vector<std::uint16_t>& row, std::vector<char>& fixed) {
        for (std::size_t s = space.subset_count(); s-- > 0;) {
            std::vector<std::uint16_t> probe(n, 0);
            const std::size_t base = space.tuple_id(s, probe);
            if (id >= base) {
                std::size_t local = id - base;
                const auto& sub = space.subset(s);
                for (std::size_t k = sub.size(); k-- > 0;) {
                    row[sub[k]] = static_cast<std::uint16_t>(local % counts[sub[k]]);
                    local /= counts[sub[k]];
                    fixed[sub[k]] = 1;
                }
                return;
            }
        }
    };

    while (uncovered > 0) {
        std::vector<std::size_t> open;
        for (std::size_t id = 0; id < covered.size(); ++id)
            if (!covered[id])
                open.push_back(id);

        std::vector<std::uint16_t> best_row;
        std::size_t best_gain = 0;
        for (int a = 0; a < attempts_per_row; ++a) {
            std::vector<std::uint16_t> row(n, 0);
            std::vector<char> fixed(n, 0);
            decode(open[rng.below(open.size())], row, fixed);
            std::vector<std::size_t> order;
            for (std::size_t o = 0; o < n; ++o)
                if (!fixed[o])
                    order.push_back(o);
            rng.shuffle(order);
            for (auto o : order) {
                // Choose the level covering the most new tuples among fully-fixed subsets.
                std::size_t best_level = rng.below(counts[o]);
                std::size_t level_gain = 0;
                fixed[o] = 1;
                for (std::size_t lvl = 0; lvl < counts[o]; ++lvl) {
                    row[o] = static_cast<std::uint16_t>(lvl);
                    std::size_t g = 0;
                    for (std::size_t s = 0; s < space.subset_count(); ++s) {
                        const auto& sub = space.subset(s);
                        if (std::find(sub.begin(), sub.end(), o) == sub.end())
                            continue;
                        if (std::all_of(sub.begin(), sub.end(), [&](std::size_t q) { return fixed[q] != 0; }))
                            g += covered[space.tuple_id(s, row)] ? 0 : 1;
                    }
                    if (g > level_gain) {
                        level_gain = g;
                        best_level = lvl;
                    }
                }
                row[o] = static_cast<std::uint16_t>(best_level);
            }
            std::size_t g = 0;
            space.for_each_tuple(row, [&](std::size_t id) { g += covered[id] ? 0 : 1; });
            if (g > best_gain) {
                best_gain = g;
                best_row = row;
            }
        }
        space.for_each_tuple(best_row, [&](std::size_t id) {
            if (!covered[id]) {
                covered[id] = 1;
                --uncovered;
            }
        });
        rows.push_back(std::move(best_row));
    }
    return rows;
}

inline std::vector<std::size_t> level_counts(const OptionSchema& schema)
{
    std::vector<std::size_t> counts;
    for (const auto& o : schema.options()) {
        if (o.levels.size() > 0xFFFF)
            throw DataError(DataErrorKind::invalid_argument, "option '" + o.name + "' has too many levels");
        counts.push_back(o.levels.size());
    }
    return counts;
}

inline void check_strength(const OptionSchema& schema, int t)
{
    if (t < 1 || t > 3 || static_cast<std::size_t>(t) > schema.size())
        throw DataError(DataErrorKind::invalid_argument,
                        "t-wise strength must satisfy 1 <= t <= min(3, option count); got t=" + std::to_string(t) +
                            " with " + std::to_string(schema.size()) + " options");
}

} // namespace detail

/// Covering array of strength t over the schema's levels: every combination of levels of
/// every t options appears in at least one returned configuration. Deterministic in `seed`.
inline std::vector<Configuration> twise_sample(const OptionSchema& schema, int t, std::uint64_t seed)
{
    detail::check_strength(schema, t);
    const auto counts = detail::level_counts(schema);
    const detail::TupleSpace space(counts, static_cast<std::size_t>(t));
    std::vector<char> covered(space.total(), 0);

    std::size_t full = 1;
    bool enumerable = true;
    for (auto c : counts) {
        if (full > detail::max_enumerated_candidates / c) {
            enumerable = false;
            break;
        }
        full *= c;
    }

    std::vector<std::vector<std::uint16_t>> picked;
    if (enumerable) {
        std::vector<std::vector<std::uint16_t>> candidates;
        candidates.reserve(full);
        std::vector<std::uint16_t> cur(counts.size(), 0);
        for (std::size_t k = 0; k < full; ++k) {
            candidates.push_back(cur);
            for (std::size_t o = counts.size(); o-- > 0;) {
                if (++cur[o] < counts[o])
                    break;
                cur[o] = 0;
            }
        }
        for (auto c : detail::greedy_cover(space, candidates, covered, seed))
            picked.push_back(candidates[c]);
    } else {
        picked = detail::construct_rows(space, counts, covered, seed);
    }

    std::vector<Configuration> out;
    out.reserve(picked.size());
    for (const auto& row : picked) {
        Configuration cfg(row.size());
        for (std::size_t o = 0; o < row.size(); ++o)
            cfg[o] = schema[o].levels[row[o]];
        out.push_back(std::move(cfg));
    }
    return out;
}

struct TwiseSelection {
    std::vector<std::size_t> rows; // indices into the population, in selection order
    std::size_t covered_tuples = 0;
    std::size_t coverable_tuples = 0; // tuples exhibited by at least one population row
    std::size_t total_tuples = 0;
};

/// Greedy t-wise selection restricted to rows of a measured population, so every chosen
/// configuration has a known performance value. Duplicate configurations are considered once.
inline TwiseSelection twise_select(const PerformanceDataset& population, int t, std::uint64_t seed)
{
    detail::check_strength(population.schema, t);
    const auto counts = detail::level_counts(population.schema);
    const detail::TupleSpace space(counts, static_cast<std::size_t>(t));

    std::vector<std::vector<std::uint16_t>> candidates;
    std::vector<std::size_t> source_row;
    std::map<std::vector<std::uint16_t>, std::size_t> seen;
    for (Eigen::Index i = 0; i < population.rows.rows(); ++i) {
        std::vector<std::uint16_t> cfg(counts.size());
        for (std::size_t o = 0; o < counts.size(); ++o)
            cfg[o] = static_cast<std::uint16_t>(
                population.schema.level_index(o, population.rows(i, static_cast<Eigen::Index>(o))));
        if (seen.emplace(cfg, candidates.size()).second) {
            candidates.push_back(std::move(cfg));
            source_row.push_back(static_cast<std::size_t>(i));
        }
    }

    std::vector<char> exhibited(space.total(), 0);
    for (const auto& c : candidates)
        space.for_each_tuple(c, [&](std::size_t id) { exhibited[id] = 1; });

    std::vector<char> covered(space.total(), 0);
    TwiseSelection sel;
    for (auto c : detail::greedy_cover(space, candidates, covered, seed))
        sel.rows.push_back(source_row[c]);
    sel.total_tuples = space.total();
    sel.coverable_tuples = static_cast<std::size_t>(std::count(exhibited.begin(), exhibited.end(), 1));
    sel.covered_tuples = static_cast<std::size_t>(std::count(covered.begin(), covered.end(), 1));
    return sel;
}

} // namespace perfbnn
