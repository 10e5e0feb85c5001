#pragma once

// Paired significance testing and summary statistics.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segbench/error.hpp"
#include "segbench/metrics.hpp"

namespace segbench {

enum class WilcoxonMode { exact, approx, automatic };

inline constexpr std::size_t kWilcoxonExactMaxN = 20;

struct WilcoxonResult {
    double p_value = 1.0;
    double w_plus = 0.0;  // sum of ranks of positive differences
    std::size_t n = 0;    // nonzero differences used
    bool exact = false;
};

/// Mid-ranks (1-based) of |d| with ties averaged.
inline std::vector<double> midranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    std::vector<double> r(values.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double rank = (double(i + 1) + double(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = rank;
        i = j + 1;
    }
    return r;
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped. Exact mode uses the full null distribution of the rank sum
/// (mid-ranks for ties); the approximation is normal with continuity and tie
/// corrections. Automatic mode is exact up to 20 nonzero pairs.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                           WilcoxonMode mode = WilcoxonMode::automatic) {
    if (a.size() != b.size() || a.empty()) throw InvalidArgument("wilcoxon: samples must be nonempty and of equal length");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        if (!std::isfinite(diff)) throw InvalidArgument("wilcoxon: non-finite difference");
        if (diff != 0.0) d.push_back(diff);
    }
    if (d.empty()) throw InvalidArgument("wilcoxon: all differences are zero");
    std::vector<double> absd(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) absd[i] = std::abs(d[i]);
    const auto ranks = midranks(absd);

    WilcoxonResult res;
    res.n = d.size();
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d[i] > 0) res.w_plus += ranks[i];

    const bool exact = mode == WilcoxonMode::exact || (mode == WilcoxonMode::automatic && res.n <= kWilcoxonExactMaxN);
    res.exact = exact;
    if (exact) {
        if (res.n > 60) throw InvalidArgument("wilcoxon: exact mode limited to 60 nonzero differences");
        // Doubled mid-ranks are integers; distribution of their signed sum by
        // dynamic programming over the ranks.
        std::vector<std::size_t> r2(res.n);
        std::size_t total = 0;
        for (std::size_t i = 0; i < res.n; ++i) total += r2[i] = static_cast<std::size_t>(std::llround(2.0 * ranks[i]));
        std::vector<double> ways(total + 1, 0.0);
        ways[0] = 1.0;
        std::size_t reach = 0;
        for (auto r : r2) {
            for (std::size_t s = reach + 1; s-- > 0;)
                if (ways[s] != 0.0) ways[s + r] += ways[s];
            reach += r;
        }
        const auto t = static_cast<std::size_t>(std::llround(2.0 * res.w_plus));
        double le = 0.0, ge = 0.0, all = 0.0;
        for (std::size_t s = 0; s <= total; ++s) {
            all += ways[s];
            if (s <= t) le += ways[s];
            if (s >= t) ge += ways[s];
        }
        res.p_value = std::min(1.0, 2.0 * std::min(le, ge) / all);
    } else {
        const double n = double(res.n);
        double tie_term = 0.0;
        std::vector<double> sorted = absd;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size();) {
            std::size_t j = i;
            while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
            const double tcount = double(j - i + 1);
            tie_term += tcount * tcount * tcount - tcount;
            i = j + 1;
        }
        const double mean = n * (n + 1) / 4.0;
        const double var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
        double diff = res.w_plus - mean;
        if (diff > 0) diff = std::max(0.0, diff - 0.5);
        else if (diff < 0) diff = std::min(0.0, diff + 0.5);
        const double z = var > 0 ? diff / std::sqrt(var) : 0.0;
        res.p_value = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
    }
    return res;
}

inline double bonferroni(double alpha, int n_comparisons) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("bonferroni: alpha must lie in (0,1)");
    if (n_comparisons < 1) throw InvalidArgument("bonferroni: at least one comparison required");
    return alpha / double(n_comparisons);
}

/// Significant only when p is strictly below the adjusted level.
inline bool is_significant(double p, double alpha_adj) { return p < alpha_adj; }

struct SummaryQuartiles {
    double q25 = 0.0;
    double median = 0.0;
    double q75 = 0.0;
};

inline SummaryQuartiles quartiles(std::vector<double> values) {
    if (values.empty()) throw InvalidArgument("quartiles: empty input");
    std::sort(values.begin(), values.end());
    return {percentile_sorted(values, 0.25), percentile_sorted(values, 0.5), percentile_sorted(values, 0.75)};
}

/// Per-case values of one metric for one method, keyed by case id.
struct MethodColumn {
    std::string method;
    std::map<std::string, double> by_case;
};

struct SignificanceRow {
    std::string metric;
    std::string method_a;
    std::string method_b;
    std::size_t n_pairs = 0;
    std::optional<double> p_value;  // empty when every paired difference is zero
    bool significant = false;
};

/// Wilcoxon test for every pair of methods on one metric, judged against
/// alpha / n_comparisons. Columns must cover the same case ids.
inline std::vector<SignificanceRow> significance_report(const std::string& metric,
                                                        const std::vector<MethodColumn>& columns, double alpha,
                                                        int n_comparisons) {
    const double alpha_adj = bonferroni(alpha, n_comparisons);
    std::vector<SignificanceRow> rows;
    for (std::size_t i = 0; i < columns.size(); ++i)
        for (std::size_t j = i + 1; j < columns.size(); ++j) {
            const auto& ca = columns[i];
            const auto& cb = columns[j];
            if (ca.by_case.size() != cb.by_case.size())
                throw InvalidArgument("significance_report: methods '" + ca.method + "' and '" + cb.method +
                                      "' cover different cases");
            std::vector<double> va, vb;
            for (const auto& [id, v] : ca.by_case) {
                auto it = cb.by_case.find(id);
                if (it == cb.by_case.end())
                    throw InvalidArgument("significance_report: case '" + id + "' missing for method '" + cb.method + "'");
                va.push_back(v);
                vb.push_back(it->second);
            }
            SignificanceRow row{metric, ca.method, cb.method, va.size(), std::nullopt, false};
            const bool any_diff = [&] {
                for (std::size_t k = 0; k < va.size(); ++k)
                    if (va[k] != vb[k]) return true;
                return false;
            }();
            if (!va.empty() && any_diff) {
                row.p_value = wilcoxon_signed_rank(va, vb).p_value;
                row.significant = is_significant(*row.p_value, alpha_adj);
            }
            rows.push_back(row);
        }
    return rows;
}

}  // namespace segbench
