#pragma once
// Statistics kernels: seeded bootstrap resampling, two-sample KS test,
// Spearman rank correlation, logistic least-squares fit, and grouped
// mean/std aggregation. All implemented in-repo and pinned by brute-force
// oracles in the test suite.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "conceptfaith/common.hpp"
#include "conceptfaith/table.hpp"
#include "conceptfaith/tensor.hpp"

namespace conceptfaith {

// ---------------------------------------------------------------------------
// Bootstrap.

struct BootstrapSpec {
    int replicates = 5;
    double sampling_ratio = 1.0;
    bool with_replacement = true;
    std::uint64_t seed = 0;
};

inline std::vector<std::vector<std::size_t>> bootstrap_indices(std::size_t n, const BootstrapSpec& spec) {
    require(n >= 1, "bootstrap over an empty source");
    require(spec.replicates >= 1, "bootstrap needs replicates >= 1");
    require(spec.sampling_ratio > 0.0, "bootstrap needs sampling_ratio > 0");
    const auto size = static_cast<std::size_t>(std::ceil(spec.sampling_ratio * static_cast<double>(n)));
    require(spec.with_replacement || size <= n, "cannot draw more than N without replacement");

    KeyedRng rng(spec.seed);
    std::vector<std::vector<std::size_t>> out(spec.replicates);
    std::vector<std::size_t> pool(n);
    for (auto& replicate : out) {
        replicate.resize(size);
        if (spec.with_replacement) {
            for (auto& idx : replicate) idx = rng.next_below(n);
        } else {
            for (std::size_t i = 0; i < n; ++i) pool[i] = i;
            for (std::size_t i = 0; i < size; ++i)
                std::swap(pool[i], pool[i + rng.next_below(n - i)]);
            std::copy_n(pool.begin(), size, replicate.begin());
        }
        // Replicates are multisets; a canonical order keeps downstream
        // floating-point sums reproducible.
        std::sort(replicate.begin(), replicate.end());
    }
    return out;
}

struct BootstrapResult {
    std::vector<double> replicate_values;
    double mean = 0.0;
    double stddev = 0.0;
};

// Caller-supplied recomputation: the statistic runs once per resampled
// multiset of values.
inline BootstrapResult bootstrap(const std::vector<double>& values, const BootstrapSpec& spec,
                                 const std::function<double(const std::vector<double>&)>& statistic) {
    BootstrapResult out;
    for (const auto& indices : bootstrap_indices(values.size(), spec)) {
        std::vector<double> sample;
        sample.reserve(indices.size());
        for (std::size_t idx : indices) sample.push_back(values[idx]);
        out.replicate_values.push_back(statistic(sample));
    }
    out.mean = mean_of(out.replicate_values);
    out.stddev = stddev_of(out.replicate_values);
    return out;
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov.

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t n1 = 0, n2 = 0;
    std::string method;
};

namespace detail {

// Asymptotic Kolmogorov survival function Q(z) = 2 sum (-1)^{j-1} e^{-2 j^2 z^2},
// with the theta-function small-z branch for numerical agreement near zero.
inline double kolmogorov_q(double z) {
    const double u = std::abs(z);
    if (u < 0.2) return 1.0;
    if (u < 0.755) {
        static const double c1 = -M_PI * M_PI / 8.0;
        const double v = 1.0 / (u * u);
        return 1.0 - std::sqrt(2.0 * M_PI) * (std::exp(c1 * v) + std::exp(9.0 * c1 * v) + std::exp(25.0 * c1 * v)) / u;
    }
    if (u < 6.8116) {
        const double v = u * u;
        double sum = 0.0;
        const int terms = std::max(1, static_cast<int>(std::lround(3.0 / u)));
        for (int j = 0; j < std::min(terms, 4); ++j)
            sum += (j % 2 == 0 ? 1.0 : -1.0) * std::exp(-2.0 * (j + 1.0) * (j + 1.0) * v);
        return std::clamp(2.0 * sum, 0.0, 1.0);
    }
    return 0.0;
}

}  // namespace detail

// Two-sided two-sample KS. D is the exact sup over pooled points of the
// right-continuous ECDF difference; p is asymptotic with effective
// n = n1*n2/(n1+n2).
inline TestResult ks_two_sample(const std::vector<double>& x, const std::vector<double>& y) {
    require(!x.empty() && !y.empty(), "ks_two_sample needs non-empty samples");
    std::vector<double> a(x), b(y);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::size_t n1 = a.size(), n2 = b.size();

    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < n1 && j < n2) {
        const double v = std::min(a[i], b[j]);
        while (i < n1 && a[i] == v) ++i;
        while (j < n2 && b[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2));
    }

    const double ne = static_cast<double>(n1) * n2 / static_cast<double>(n1 + n2);
    TestResult out;
    out.statistic = d;
    out.p_value = detail::kolmogorov_q(std::sqrt(ne) * d);
    out.n1 = n1;
    out.n2 = n2;
    out.method = "ks-two-sample";
    return out;
}

// ---------------------------------------------------------------------------
// Spearman.

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double mean_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

inline bool has_ties(const std::vector<double>& v) {
    std::vector<double> s(v);
    std::sort(s.begin(), s.end());
    return std::adjacent_find(s.begin(), s.end()) != s.end();
}

// Regularized incomplete beta I_x(a, b) by Lentz continued fraction.
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const bool swap_tail = x >= (a + 1.0) / (a + b + 2.0);
    if (swap_tail) return 1.0 - incomplete_beta(b, a, 1.0 - x);

    const double tiny = 1e-300;
    double c = 1.0, dd = 1.0 - (a + b) * x / (a + 1.0);
    if (std::abs(dd) < tiny) dd = tiny;
    dd = 1.0 / dd;
    double f = dd;
    for (int m = 1; m <= 300; ++m) {
        const double m2 = 2.0 * m;
        double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        dd = 1.0 + num * dd;
        if (std::abs(dd) < tiny) dd = tiny;
        c = 1.0 + num / c;
        if (std::abs(c) < tiny) c = tiny;
        dd = 1.0 / dd;
        f *= dd * c;
        num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        dd = 1.0 + num * dd;
        if (std::abs(dd) < tiny) dd = tiny;
        c = 1.0 + num / c;
        if (std::abs(c) < tiny) c = tiny;
        dd = 1.0 / dd;
        const double delta = dd * c;
        f *= delta;
        if (std::abs(delta - 1.0) < 1e-15) break;
    }
    return std::exp(ln_front) * f / a;
}

// Two-sided p for a t statistic with nu degrees of freedom.
inline double student_t_two_sided_p(double t, double nu) {
    if (!std::isfinite(t)) return 0.0;
    return incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t));
}

}  // namespace detail

// Spearman rank correlation with average ranks for ties; the classical
// 1 - 6*sum(d^2)/(n(n^2-1)) shortcut applies when both series are tie-free
// (it equals the rank Pearson exactly there). p via the t approximation with
// n-2 degrees of freedom.
inline TestResult spearman(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size(), "spearman needs equal-length series");
    const std::size_t n = x.size();
    require(n >= 3, "spearman needs at least 3 points");

    const std::vector<double> rx = detail::average_ranks(x);
    const std::vector<double> ry = detail::average_ranks(y);
    require(stddev_of(rx) > 0.0, "spearman undefined for constant x series");
    require(stddev_of(ry) > 0.0, "spearman undefined for constant y series");

    double rho;
    if (!detail::has_ties(x) && !detail::has_ties(y)) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
        const double dn = static_cast<double>(n);
        rho = 1.0 - 6.0 * d2 / (dn * (dn * dn - 1.0));
    } else {
        const double mx = mean_of(rx), my = mean_of(ry);
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sxy += (rx[i] - mx) * (ry[i] - my);
            sxx += (rx[i] - mx) * (rx[i] - mx);
            syy += (ry[i] - my) * (ry[i] - my);
        }
        rho = sxy / std::sqrt(sxx * syy);
    }

    TestResult out;
    out.statistic = rho;
    out.n1 = out.n2 = n;
    out.method = "spearman";
    if (std::abs(rho) >= 1.0) {
        out.p_value = 0.0;
    } else {
        const double nu = static_cast<double>(n) - 2.0;
        const double t = rho * std::sqrt(nu / (1.0 - rho * rho));
        out.p_value = detail::student_t_two_sided_p(t, nu);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Logistic fit: y = L / (1 + exp(-k (x - x0))), damped Gauss-Newton.

struct LogisticFit {
    double L = 1.0, k = 1.0, x0 = 0.0;
    double rmse = 0.0;
    bool converged = false;
    bool degenerate = false;
    int iterations = 0;
};

struct LogisticInit {
    double L = 0.0, k = 1.0, x0 = 0.0;
    bool use_defaults = true;  // L = max(y), k = 1, x0 = median(x)
};

namespace detail {

inline double logistic_value(double L, double k, double x0, double x) {
    const double e = std::clamp(-k * (x - x0), -500.0, 500.0);
    return L / (1.0 + std::exp(e));
}

inline bool solve3(double A[3][3], double b[3], double out[3]) {
    int perm[3] = {0, 1, 2};
    for (int col = 0; col < 3; ++col) {
        int best = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(A[perm[r]][col]) > std::abs(A[perm[best]][col])) best = r;
        std::swap(perm[col], perm[best]);
        const double pivot = A[perm[col]][col];
        if (std::abs(pivot) < 1e-300) return false;
        for (int r = col + 1; r < 3; ++r) {
            const double f = A[perm[r]][col] / pivot;
            for (int c = col; c < 3; ++c) A[perm[r]][c] -= f * A[perm[col]][c];
            b[perm[r]] -= f * b[perm[col]];
        }
    }
    for (int col = 2; col >= 0; --col) {
        double acc = b[perm[col]];
        for (int c = col + 1; c < 3; ++c) acc -= A[perm[col]][c] * out[c];
        out[col] = acc / A[perm[col]][col];
    }
    return true;
}

}  // namespace detail

inline LogisticFit fit_logistic(const std::vector<double>& x, const std::vector<double>& y,
                                const LogisticInit& init = {}) {
    require(x.size() == y.size(), "fit_logistic needs equal-length series");
    const std::size_t n = x.size();
    require(n >= 3, "fit_logistic needs at least 3 points");

    LogisticFit fit;
    if (stddev_of(y) == 0.0) {
        // k is unidentifiable on a flat series; report the flat curve.
        fit.L = 2.0 * mean_of(y);
        fit.k = 0.0;
        std::vector<double> xs(x);
        std::sort(xs.begin(), xs.end());
        fit.x0 = xs[n / 2];
        fit.rmse = 0.0;
        fit.degenerate = true;
        return fit;
    }

    if (init.use_defaults) {
        fit.L = *std::max_element(y.begin(), y.end());
        if (fit.L == 0.0) fit.L = 1.0;
        fit.k = 1.0;
        std::vector<double> xs(x);
        std::sort(xs.begin(), xs.end());
        fit.x0 = xs[n / 2];
    } else {
        fit.L = init.L;
        fit.k = init.k;
        fit.x0 = init.x0;
    }

    auto cost_of = [&](double L, double k, double x0) {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - detail::logistic_value(L, k, x0, x[i]);
            c += r * r;
        }
        return c;
    };

    double lambda = 1e-3;
    double cost = cost_of(fit.L, fit.k, fit.x0);
    const int max_iterations = 200;
    for (fit.iterations = 0; fit.iterations < max_iterations; ++fit.iterations) {
        double JtJ[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
        double Jtr[3] = {0, 0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            const double e = std::clamp(-fit.k * (x[i] - fit.x0), -500.0, 500.0);
            const double s = 1.0 / (1.0 + std::exp(e));
            const double f = fit.L * s;
            const double r = y[i] - f;
            const double jac[3] = {s, fit.L * s * (1.0 - s) * (x[i] - fit.x0), -fit.L * s * (1.0 - s) * fit.k};
            for (int a = 0; a < 3; ++a) {
                Jtr[a] += jac[a] * r;
                for (int b = 0; b < 3; ++b) JtJ[a][b] += jac[a] * jac[b];
            }
        }

        bool stepped = false;
        for (int attempt = 0; attempt < 16 && !stepped; ++attempt) {
            double A[3][3];
            double rhs[3] = {Jtr[0], Jtr[1], Jtr[2]};
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) A[a][b] = JtJ[a][b] + (a == b ? lambda * (1.0 + JtJ[a][a]) : 0.0);
            double delta[3];
            if (!detail::solve3(A, rhs, delta)) {
                lambda *= 4.0;
                continue;
            }
            const double nl = fit.L + delta[0], nk = fit.k + delta[1], nx0 = fit.x0 + delta[2];
            const double new_cost = cost_of(nl, nk, nx0);
            if (new_cost <= cost) {
                const double improvement = cost - new_cost;
                fit.L = nl;
                fit.k = nk;
                fit.x0 = nx0;
                cost = new_cost;
                lambda = std::max(lambda / 3.0, 1e-12);
                stepped = true;
                if (improvement <= 1e-15 * (1.0 + cost)) {
                    fit.converged = true;
                }
            } else {
                lambda *= 4.0;
            }
        }
        if (fit.converged || !stepped) break;
    }
    if (!fit.converged && cost <= 1e-20) fit.converged = true;  // exact fit reached in one pass
    fit.rmse = std::sqrt(cost / static_cast<double>(n));
    return fit;
}

// ---------------------------------------------------------------------------
// Grouped aggregation: one output row per distinct group-key tuple, with
// mean, sample std (0 when count = 1; the count column is the flag), count.

inline ResultTable aggregate(const ResultTable& table, const std::vector<std::string>& group_by,
                             const std::string& value_column) {
    std::vector<std::size_t> key_idx;
    for (const auto& key : group_by) key_idx.push_back(table.column_index(key));
    const std::size_t val_idx = table.column_index(value_column);

    std::map<std::vector<std::string>, std::vector<double>> groups;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        std::vector<std::string> key;
        key.reserve(key_idx.size());
        for (std::size_t idx : key_idx) key.push_back(table.rows[r][idx]);
        groups[std::move(key)].push_back(table.numeric(r, value_column));
    }
    (void)val_idx;

    std::vector<std::string> columns = group_by;
    columns.push_back("mean");
    columns.push_back("std");
    columns.push_back("count");
    ResultTable out(columns);
    for (const auto& [key, values] : groups) {
        std::vector<std::string> row = key;
        row.push_back(format_double(mean_of(values)));
        row.push_back(format_double(stddev_of(values)));
        row.push_back(std::to_string(values.size()));
        out.add_row(std::move(row));
    }
    return out;
}

}  // namespace conceptfaith
