"""Naive plain-loop implementations of every metric and kernel.

These are deliberately written with explicit summation loops, independently
of the vectorized kernels they check. Keep them slow and obvious.
"""

import math


def naive_lat_weights(lat):
    cos = [math.cos(math.radians(x)) for x in lat]
    mean = sum(cos) / len(cos)
    return [c / mean for c in cos]


def naive_weighted_mean(field2d, lat):
    w = naive_lat_weights(lat)
    h = len(field2d)
    wth = len(field2d[0])
    total = 0.0
    for i in range(h):
        for j in range(wth):
            total += w[i] * field2d[i][j]
    return total / (h * wth)


def naive_rmse(forecast, truth, lat):
    """Per-variable lat-weighted RMSE over (V, H, W) nested lists."""
    out = []
    for v in range(len(forecast)):
        sq = [
            [(forecast[v][i][j] - truth[v][i][j]) ** 2 for j in range(len(forecast[v][i]))]
            for i in range(len(forecast[v]))
        ]
        out.append(math.sqrt(naive_weighted_mean(sq, lat)))
    return out


def naive_acc(forecast, truth, clim, lat):
    w = naive_lat_weights(lat)
    out = []
    for v in range(len(forecast)):
        num = f2 = t2 = 0.0
        for i in range(len(forecast[v])):
            for j in range(len(forecast[v][i])):
                fa = forecast[v][i][j] - clim[v][i][j]
                ta = truth[v][i][j] - clim[v][i][j]
                num += w[i] * fa * ta
                f2 += w[i] * fa * fa
                t2 += w[i] * ta * ta
        out.append(num / math.sqrt(f2 * t2))
    return out


def naive_crps(members, truth, lat):
    """Kernel CRPS from an (M, V, H, W) nested list, plain 1/M^2 estimator."""
    m = len(members)
    out = []
    for v in range(len(truth)):
        field = []
        for i in range(len(truth[v])):
            row = []
            for j in range(len(truth[v][i])):
                term1 = sum(abs(members[a][v][i][j] - truth[v][i][j]) for a in range(m)) / m
                term2 = sum(
                    abs(members[a][v][i][j] - members[b][v][i][j])
                    for a in range(m)
                    for b in range(m)
                ) / (2 * m * m)
                row.append(term1 - term2)
            field.append(row)
        out.append(naive_weighted_mean(field, lat))
    return out


def naive_spread(members, lat):
    m = len(members)
    out = []
    for v in range(len(members[0])):
        field = []
        for i in range(len(members[0][v])):
            row = []
            for j in range(len(members[0][v][i])):
                vals = [members[a][v][i][j] for a in range(m)]
                mean = sum(vals) / m
                var = sum((x - mean) ** 2 for x in vals) / (m - 1)
                row.append(var)
            field.append(row)
        out.append(math.sqrt(naive_weighted_mean(field, lat)))
    return out


def naive_ssr(members, truth, lat):
    m = len(members)
    ens_mean = [
        [
            [sum(members[a][v][i][j] for a in range(m)) / m for j in range(len(truth[v][i]))]
            for i in range(len(truth[v]))
        ]
        for v in range(len(truth))
    ]
    sp = naive_spread(members, lat)
    skill = naive_rmse(ens_mean, truth, lat)
    return [s / k for s, k in zip(sp, skill)]


def naive_deterministic_loss(pred, true, lat):
    """The lat-weighted MSE objective over a (V, H, W) increment pair."""
    w = naive_lat_weights(lat)
    total = 0.0
    count = 0
    for v in range(len(pred)):
        for i in range(len(pred[v])):
            for j in range(len(pred[v][i])):
                total += w[i] * (pred[v][i][j] - true[v][i][j]) ** 2
                count += 1
    return total / count


def naive_sigma_schedule(sigma_max, sigma_min, rho, n):
    # at i=0 and i=n-1 the ramp is exactly 0 and 1, where the closed form
    # simplifies to the configured endpoints; evaluating the unsimplified
    # expression there only adds cancellation noise
    out = [sigma_max]
    for i in range(1, n - 1):
        a = sigma_max ** (1 / rho)
        b = sigma_min ** (1 / rho)
        out.append((a + (i / (n - 1)) * (b - a)) ** rho)
    out.append(sigma_min)
    out.append(0.0)
    return out
