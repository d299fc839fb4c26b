// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/geometry.hpp"

#include "atlasgs/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace atlasgs {

namespace {

inline double dist2(const double *a, const double *b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

inline double dist(const Vec3 &a, const Vec3 &b) { return std::sqrt(dist2(a.data(), b.data())); }

void check_points(const Tensor &t, const char *what) {
    if (t.rank() != 2 || t.dim(1) != 3) {
        throw ShapeError(std::string(what) + ": expected [N,3], got " + shape_string(t.shape()));
    }
    if (t.dim(0) == 0) {
        throw std::invalid_argument(std::string(what) + ": empty point set");
    }
}

// Nearest neighbor in `to` for every row of `from`.
void nearest(const double *from, std::size_t n, const double *to, std::size_t m,
             std::vector<std::size_t> &index, std::vector<double> &d2) {
    index.assign(n, 0);
    d2.assign(n, 0.0);
    parallel_for(n, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t j = 0; j < m; ++j) {
                const double d = dist2(from + i * 3, to + j * 3);
                if (d < best) {
                    best = d;
                    arg = j;
                }
            }
            index[i] = arg;
            d2[i] = best;
        }
    });
}

std::vector<double> flatten(const std::vector<Vec3> &p) {
    std::vector<double> out(p.size() * 3);
    for (std::size_t i = 0; i < p.size(); ++i) {
        out[i * 3] = p[i][0];
        out[i * 3 + 1] = p[i][1];
        out[i * 3 + 2] = p[i][2];
    }
    return out;
}

void check_equal_size(std::size_t a, std::size_t b, const char *what) {
    if (a != b) {
        throw std::invalid_argument(std::string(what) + ": size mismatch (" + std::to_string(a) +
                                    " vs " + std::to_string(b) + ")");
    }
    if (a == 0) {
        throw std::invalid_argument(std::string(what) + ": empty point set");
    }
}

} // namespace

std::vector<Vec3> to_points(const Tensor &t) {
    check_points(t, "to_points");
    const auto v = t.values();
    std::vector<Vec3> out(t.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = {v[i * 3], v[i * 3 + 1], v[i * 3 + 2]};
    }
    return out;
}

Tensor points_tensor(const std::vector<Vec3> &points) {
    return Tensor({points.size(), 3}, flatten(points));
}

double chamfer(const std::vector<Vec3> &p, const std::vector<Vec3> &q) {
    if (p.empty() || q.empty()) {
        throw std::invalid_argument("chamfer: empty point set");
    }
    const auto fp = flatten(p), fq = flatten(q);
    std::vector<std::size_t> idx;
    std::vector<double> d2;
    double total = 0.0;
    nearest(fp.data(), p.size(), fq.data(), q.size(), idx, d2);
    double s = 0.0;
    for (double d : d2) s += d;
    total += s / static_cast<double>(p.size());
    nearest(fq.data(), q.size(), fp.data(), p.size(), idx, d2);
    s = 0.0;
    for (double d : d2) s += d;
    total += s / static_cast<double>(q.size());
    return total;
}

Tensor chamfer(const Tensor &p, const Tensor &q) {
    check_points(p, "chamfer");
    check_points(q, "chamfer");
    const std::size_t n = p.dim(0), m = q.dim(0);
    const double *pv = p.values().data();
    const double *qv = q.values().data();
    std::vector<std::size_t> pq, qp;
    std::vector<double> dpq, dqp;
    nearest(pv, n, qv, m, pq, dpq);
    nearest(qv, m, pv, n, qp, dqp);
    double a = 0.0, b = 0.0;
    for (double d : dpq) a += d;
    for (double d : dqp) b += d;
    const double value = a / static_cast<double>(n) + b / static_cast<double>(m);
    return detail::make_result(
        "chamfer", {}, {value}, {&p, &q},
        [pn = p.node(), qn = q.node(), pq, qp, n, m](detail::Node &o) {
            const double g = o.grad[0];
            const double *pv = pn->value.data();
            const double *qv = qn->value.data();
            std::vector<double> gp(n * 3, 0.0), gq(m * 3, 0.0);
            const double sn = 2.0 * g / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t j = pq[i];
                for (int c = 0; c < 3; ++c) {
                    const double diff = pv[i * 3 + c] - qv[j * 3 + c];
                    gp[i * 3 + c] += sn * diff;
                    gq[j * 3 + c] -= sn * diff;
                }
            }
            const double sm = 2.0 * g / static_cast<double>(m);
            for (std::size_t j = 0; j < m; ++j) {
                const std::size_t i = qp[j];
                for (int c = 0; c < 3; ++c) {
                    const double diff = qv[j * 3 + c] - pv[i * 3 + c];
                    gq[j * 3 + c] += sm * diff;
                    gp[i * 3 + c] -= sm * diff;
                }
            }
            if (pn->requires_grad) {
                auto &t = pn->ensure_grad();
                for (std::size_t k = 0; k < gp.size(); ++k) t[k] += gp[k];
            }
            if (qn->requires_grad) {
                auto &t = qn->ensure_grad();
                for (std::size_t k = 0; k < gq.size(); ++k) t[k] += gq[k];
            }
        });
}

double emd_exact(const std::vector<Vec3> &p, const std::vector<Vec3> &q,
                 std::vector<std::size_t> *match) {
    check_equal_size(p.size(), q.size(), "emd_exact");
    const std::size_t n = p.size();
    // Shortest augmenting path formulation with potentials (1-based).
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> way(n + 1, 0), owner(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        owner[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = owner[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = dist(p[i0 - 1], q[j - 1]) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (owner[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> assignment(n);
    for (std::size_t j = 1; j <= n; ++j) {
        assignment[owner[j] - 1] = j - 1;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += dist(p[i], q[assignment[i]]);
    }
    if (match != nullptr) {
        *match = std::move(assignment);
    }
    return total / static_cast<double>(n);
}

std::vector<std::size_t> auction_assignment(const std::vector<Vec3> &p,
                                            const std::vector<Vec3> &q,
                                            const AuctionOptions &options) {
    check_equal_size(p.size(), q.size(), "emd_approx");
    const std::size_t n = p.size();
    std::vector<double> cost(n * n);
    double max_cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            cost[i * n + j] = dist(p[i], q[j]);
            max_cost = std::max(max_cost, cost[i * n + j]);
        }
    }
    std::vector<std::size_t> assignment(n);
    if (n == 1 || max_cost == 0.0) {
        for (std::size_t i = 0; i < n; ++i) assignment[i] = i;
        return assignment;
    }
    constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
    std::vector<double> price(n, 0.0);
    std::vector<std::size_t> owner(n), object(n);
    const double eps_final = max_cost * options.relative_epsilon;
    double eps = max_cost / 4.0;
    while (true) {
        std::fill(owner.begin(), owner.end(), kNone);
        std::fill(object.begin(), object.end(), kNone);
        std::deque<std::size_t> unassigned;
        for (std::size_t i = 0; i < n; ++i) unassigned.push_back(i);
        while (!unassigned.empty()) {
            const std::size_t i = unassigned.front();
            unassigned.pop_front();
            // Value of object j to person i is -cost - price.
            double best = -std::numeric_limits<double>::infinity();
            double second = best;
            std::size_t arg = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const double val = -cost[i * n + j] - price[j];
                if (val > best) {
                    second = best;
                    best = val;
                    arg = j;
                } else if (val > second) {
                    second = val;
                }
            }
            price[arg] += best - second + eps;
            if (owner[arg] != kNone) {
                object[owner[arg]] = kNone;
                unassigned.push_back(owner[arg]);
            }
            owner[arg] = i;
            object[i] = arg;
        }
        if (eps <= eps_final) {
            break;
        }
        eps = std::max(eps_final, eps / options.scaling);
    }
    return object;
}

double emd_approx(const std::vector<Vec3> &p, const std::vector<Vec3> &q,
                  const AuctionOptions &options) {
    const auto a = auction_assignment(p, q, options);
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        total += dist(p[i], q[a[i]]);
    }
    return total / static_cast<double>(p.size());
}

Tensor emd_approx(const Tensor &p, const Tensor &q, const AuctionOptions &options) {
    check_points(p, "emd_approx");
    check_points(q, "emd_approx");
    const auto pp = to_points(p), qq = to_points(q);
    const auto a = auction_assignment(pp, qq, options);
    const std::size_t n = pp.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += dist(pp[i], qq[a[i]]);
    }
    return detail::make_result(
        "emd_approx", {}, {total / static_cast<double>(n)}, {&p, &q},
        [pn = p.node(), qn = q.node(), a, n](detail::Node &o) {
            const double g = o.grad[0] / static_cast<double>(n);
            const double *pv = pn->value.data();
            const double *qv = qn->value.data();
            std::vector<double> *gp = pn->requires_grad ? &pn->ensure_grad() : nullptr;
            std::vector<double> *gq = qn->requires_grad ? &qn->ensure_grad() : nullptr;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t j = a[i];
                const double d = std::sqrt(dist2(pv + i * 3, qv + j * 3));
                if (d == 0.0) continue;
                for (int c = 0; c < 3; ++c) {
                    const double t = g * (pv[i * 3 + c] - qv[j * 3 + c]) / d;
                    if (gp) (*gp)[i * 3 + c] += t;
                    if (gq) (*gq)[j * 3 + c] -= t;
                }
            }
        });
}

std::vector<std::size_t> farthest_point_sampling(const std::vector<Vec3> &points, std::size_t k) {
    if (k > points.size()) {
        throw std::invalid_argument("farthest_point_sampling: k=" + std::to_string(k) +
                                    " exceeds point count " + std::to_string(points.size()));
    }
    std::vector<std::size_t> out;
    if (k == 0) {
        return out;
    }
    out.reserve(k);
    std::vector<double> best(points.size(), std::numeric_limits<double>::infinity());
    std::size_t current = 0;
    for (std::size_t s = 0; s < k; ++s) {
        out.push_back(current);
        best[current] = -1.0;
        std::size_t arg = 0;
        double far = -1.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (best[i] < 0.0) continue;
            best[i] = std::min(best[i], dist2(points[i].data(), points[current].data()));
            if (best[i] > far) {
                far = best[i];
                arg = i;
            }
        }
        current = arg;
    }
    return out;
}

Tensor kl_diag_gaussian(const Tensor &mean, const Tensor &logvar) {
    if (mean.shape() != logvar.shape()) {
        throw ShapeError("kl_diag_gaussian: shape mismatch " + shape_string(mean.shape()) +
                         " vs " + shape_string(logvar.shape()));
    }
    const Tensor terms = exp(logvar) + square(mean) - logvar;
    return scale(add_scalar(atlasgs::mean(terms), -1.0), 0.5);
}

} // namespace atlasgs
