"""Compiled block-coordinate-descent kernel behind :mod:`ddsra.core.lambda_solver`.

A problem is the tuple ``(prefix, kd, rate, ecoef, top_mem, upper, const)``:

* ``prefix[l]``: per-sample FLOPs of layers ``1..l``,
* ``kd[i]``: local epochs times batch size of device ``i``,
* ``rate[i]``: device FLOPs per second,
* ``ecoef[i]``: gateway energy per (FLOP * Hz^2) spent on device ``i``,
* ``top_mem[i, l]``: gateway memory for device ``i`` split at ``l``,
* ``upper[i]``: largest split the device can afford (memory and energy),
* ``const``: scalars indexed by the ``C_*`` constants below.

Set ``DDSRA_NO_JIT=1`` to run the same code as plain Python.
"""

from __future__ import annotations

import math
import os

import numpy as np

if os.environ.get("DDSRA_NO_JIT"):
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
else:
    from numba import njit

C_PHI, C_FMIN, C_FMAX, C_PMAX, C_ENERGY, C_MEMCAP, C_SNR, C_BITS, C_BW, C_DOWN = range(10)
N_CONST = 10
INF = math.inf
LN2 = math.log(2.0)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# -- evaluators ---------------------------------------------------------------

@njit(cache=True)
def device_time(pb, i, l, f):
    prefix, kd, rate, ecoef, top_mem, upper, c = pb
    bottom = prefix[l]
    top = prefix[-1] - bottom
    t = bottom / rate[i]
    if top > 0:
        if f <= 0:
            return INF
        t += top / (c[C_PHI] * f)
    return kd[i] * t


@njit(cache=True)
def training_time(pb, splits, freqs):
    worst = 0.0
    for i in range(splits.shape[0]):
        t = device_time(pb, i, splits[i], freqs[i])
        if t > worst:
            worst = t
    return worst


@njit(cache=True)
def training_energy(pb, splits, freqs):
    prefix, kd, rate, ecoef, top_mem, upper, c = pb
    total = 0.0
    for i in range(splits.shape[0]):
        total += ecoef[i] * (prefix[-1] - prefix[splits[i]]) * freqs[i] * freqs[i]
    return total


@njit(cache=True)
def gateway_memory(pb, splits):
    top_mem = pb[4]
    total = 0.0
    for i in range(splits.shape[0]):
        total += top_mem[i, splits[i]]
    return total


@njit(cache=True)
def up_time(pb, power):
    c = pb[6]
    if power <= 0:
        return INF
    rate = c[C_BW] * math.log2(1.0 + power * c[C_SNR])
    return c[C_BITS] / rate if rate > 0 else INF


@njit(cache=True)
def up_energy(pb, power):
    t = up_time(pb, power)
    return INF if math.isinf(t) else power * t


@njit(cache=True)
def round_value(pb, splits, freqs, power):
    return training_time(pb, splits, freqs) + up_time(pb, power) + pb[6][C_DOWN]


@njit(cache=True)
def feasible(pb, splits, freqs, power):
    upper, c = pb[5], pb[6]
    if not (0 < power <= c[C_PMAX]):
        return False
    fsum = 0.0
    for i in range(splits.shape[0]):
        if splits[i] < 0 or splits[i] > upper[i] or freqs[i] < 0:
            return False
        fsum += freqs[i]
    if fsum > c[C_FMAX] * (1 + 1e-12) or fsum < c[C_FMIN] * (1 - 1e-12):
        return False
    if gateway_memory(pb, splits) > c[C_MEMCAP]:
        return False
    return training_energy(pb, splits, freqs) + up_energy(pb, power) <= c[C_ENERGY] * (1 + 1e-12)


@njit(cache=True)
def offload_weights(pb, splits):
    # energy per Hz^2 of gateway CPU for each device's offloaded layers
    prefix, ecoef = pb[0], pb[3]
    return ecoef * (prefix[-1] - prefix[splits])


# -- scalar helpers -----------------------------------------------------------

@njit(cache=True)
def waterfill(lower, weights, total):
    """argmin sum w_i f_i^2 subject to sum f_i = total and f_i >= lower_i."""
    f = lower.copy()
    excess = total - f.sum()
    if excess <= 0:
        return f
    n_free = 0
    for i in range(f.shape[0]):
        if weights[i] <= 0:
            n_free += 1
    if n_free:
        share = excess / n_free
        for i in range(f.shape[0]):
            if weights[i] <= 0:
                f[i] += share
        return f
    order = np.argsort(lower * weights, kind="mergesort")
    fixed_sum = f.sum()
    inv_sum = 0.0
    n = order.shape[0]
    for k in range(n):
        i = order[k]
        fixed_sum -= lower[i]
        inv_sum += 1.0 / weights[i]
        level = (total - fixed_sum) / inv_sum
        if k + 1 == n or level <= lower[order[k + 1]] * weights[order[k + 1]]:
            for k2 in range(k + 1):
                i2 = order[k2]
                f[i2] = max(lower[i2], level / weights[i2])
            return f
    return f


@njit(cache=True)
def energy_gap(budget_rate, snr, x):
    # positive while transmitting at power x fits the budget
    return budget_rate * math.log2(1.0 + snr * x) - x


@njit(cache=True)
def power_for_budget(energy, bits, bandwidth, snr, p_max):
    if not energy > 0:
        return 0.0
    rate = bandwidth * energy / bits
    if rate * snr / LN2 <= 1.0:
        return 0.0
    if math.isinf(energy) or energy_gap(rate, snr, p_max) >= 0:
        return p_max
    lo, hi = 0.0, p_max
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        if energy_gap(rate, snr, mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def optimal_power(pb, splits, freqs):
    c = pb[6]
    left = c[C_ENERGY] - training_energy(pb, splits, freqs)
    return power_for_budget(left, c[C_BITS], c[C_BW], c[C_SNR], c[C_PMAX])


# -- blocks -------------------------------------------------------------------

@njit(cache=True)
def _pick(times, upper, eta, largest, out):
    for i in range(times.shape[0]):
        chosen = -1
        for l in range(upper[i] + 1):
            if times[i, l] <= eta:
                chosen = l
                if not largest:
                    break
        if chosen < 0:
            return False
        out[i] = chosen
    return True


@njit(cache=True)
def _partition_ok(pb, times, freqs, eta, largest, budget, out):
    if not _pick(times, pb[5], eta, largest, out):
        return False
    return gateway_memory(pb, out) <= pb[6][C_MEMCAP] and training_energy(pb, out, freqs) <= budget


@njit(cache=True)
def bisect_partition(pb, freqs, power, exact):
    """Split points minimizing the training time for fixed shares and power.

    Returns ``(found, splits)``.
    """
    upper, c = pb[5], pb[6]
    n = upper.shape[0]
    out = np.zeros(n, dtype=np.int64)
    budget = c[C_ENERGY] - up_energy(pb, power)
    if not budget >= 0:
        return False, out
    width = pb[0].shape[0]
    times = np.full((n, width), INF)
    pool = np.empty(n * width)
    count = 0
    for i in range(n):
        if upper[i] < 0:
            return False, out
        for l in range(upper[i] + 1):
            t = device_time(pb, i, l, freqs[i])
            times[i, l] = t
            if t < INF:
                pool[count] = t
                count += 1
    if count == 0:
        return False, out
    targets = np.unique(pool[:count])
    lo, hi = 0, targets.shape[0] - 1
    if not _partition_ok(pb, times, freqs, targets[hi], exact, budget, out):
        return False, out
    while lo < hi:
        mid = (lo + hi) // 2
        if _partition_ok(pb, times, freqs, targets[mid], exact, budget, out):
            hi = mid
        else:
            lo = mid + 1
    _pick(times, upper, targets[hi], exact, out)
    return True, out


@njit(cache=True)
def _shares(theta, bottom, work, active, out):
    # smallest shares meeting target theta; False if some device cannot
    total = 0.0
    for i in range(out.shape[0]):
        out[i] = 0.0
        if active[i]:
            slack = theta - bottom[i]
            if slack <= 0:
                return False, 0.0
            out[i] = work[i] / slack
            total += out[i]
    return True, total


@njit(cache=True)
def _alloc(theta, bottom, work, active, weights, f_min, f_cap, budget, out):
    ok, total = _shares(theta, bottom, work, active, out)
    if not ok or total > f_cap:
        return False, out
    f = out
    if total < f_min:
        f = waterfill(out, weights, f_min)
    energy = 0.0
    for i in range(f.shape[0]):
        energy += weights[i] * f[i] * f[i]
    return energy <= budget, f


@njit(cache=True)
def _freq_terms(pb, splits):
    # per device: on-device time, gateway cycles, energy weight, offloads anything
    prefix, kd, rate, ecoef, top_mem, upper, c = pb
    top = prefix[-1] - prefix[splits]
    return kd * prefix[splits] / rate, kd * top / c[C_PHI], ecoef * top, top > 0


@njit(cache=True)
def _freq_search(c, bottom, work, weights, active, budget, eps, scratch):
    # bisection on the training-time target; result may alias scratch
    if not budget >= 0:
        return False, scratch
    n = bottom.shape[0]
    f_cap = c[C_FMAX] * (1 + 1e-12)
    f_min = c[C_FMIN]
    if not active.any():
        for i in range(n):
            scratch[i] = 0.0
        return True, waterfill(scratch, weights, f_min)
    lo = bottom.max()
    for i in range(n):
        if active[i]:
            lo = max(lo, bottom[i] + work[i] / c[C_FMAX])
    ok, f = _alloc(lo, bottom, work, active, weights, f_min, f_cap, budget, scratch)
    if ok:
        return True, f
    # energy only falls as the target loosens; grow until feasible or hopeless
    free = (weights <= 0).any()
    hi = 2 * lo
    while True:
        ok, f = _alloc(hi, bottom, work, active, weights, f_min, f_cap, budget, scratch)
        if ok:
            break
        fine, total = _shares(hi, bottom, work, active, scratch)
        if fine and total <= f_min and not free:
            return False, scratch  # topped up to f_min at least energy and still over budget
        hi *= 2
        if hi > 1e300:
            return False, scratch
    while hi - lo > eps * hi:
        mid = 0.5 * (lo + hi)
        ok, f = _alloc(mid, bottom, work, active, weights, f_min, f_cap, budget, scratch)
        if ok:
            hi = mid
        else:
            lo = mid
    return _alloc(hi, bottom, work, active, weights, f_min, f_cap, budget, scratch)


@njit(cache=True)
def bisect_frequency(pb, splits, power, eps):
    """CPU shares minimizing the training time for fixed splits and power.

    Each target fixes the smallest share per device, which must fit under
    ``f_max`` and, after topping up to ``f_min`` at least energy, within the
    energy left after transmission.  Returns ``(found, shares)``.
    """
    bottom, work, weights, active = _freq_terms(pb, splits)
    budget = pb[6][C_ENERGY] - up_energy(pb, power)
    found, f = _freq_search(pb[6], bottom, work, weights, active, budget, eps, np.zeros(splits.shape[0]))
    return found, f.copy()


@njit(cache=True)
def _balance_score(pb, terms, power, coarse, scratch):
    bottom, work, weights, active = terms
    budget = pb[6][C_ENERGY] - up_energy(pb, power)
    found, f = _freq_search(pb[6], bottom, work, weights, active, budget, coarse, scratch)
    if not found:
        return INF
    worst = 0.0
    for i in range(f.shape[0]):
        t = bottom[i]
        if active[i]:
            t += work[i] / f[i]
        worst = max(worst, t)
    return worst + up_time(pb, power)


@njit(cache=True)
def balance_energy(pb, splits, power, eps, iters, coarse):
    """Golden-section search over transmit power with shares re-optimized per power.

    Returns ``(found, shares, power)``.
    """
    c = pb[6]
    n = splits.shape[0]
    terms = _freq_terms(pb, splits)
    weights = terms[2]
    scratch = np.empty(n)
    cheap = waterfill(np.zeros(n), weights, c[C_FMIN])
    cheapest = 0.0
    for i in range(n):
        cheapest += weights[i] * cheap[i] * cheap[i]
    p_hi = power_for_budget(c[C_ENERGY] - cheapest, c[C_BITS], c[C_BW], c[C_SNR], c[C_PMAX])
    none = np.zeros(n)
    if p_hi <= 0:
        return False, none, 0.0
    a, b = 0.0, p_hi
    x1, x2 = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    s1 = _balance_score(pb, terms, x1, coarse, scratch)
    s2 = _balance_score(pb, terms, x2, coarse, scratch)
    for _ in range(iters):
        if b - a <= coarse * b:
            break
        if s1 <= s2:
            b, x2, s2 = x2, x1, s1
            x1 = b - GOLDEN * (b - a)
            s1 = _balance_score(pb, terms, x1, coarse, scratch)
        else:
            a, x1, s1 = x1, x2, s2
            x2 = a + GOLDEN * (b - a)
            s2 = _balance_score(pb, terms, x2, coarse, scratch)
    best, best_score = -1.0, INF
    for p in (x1, x2, p_hi, power):
        if not (0 < p <= c[C_PMAX]):
            continue
        s = _balance_score(pb, terms, p, coarse, scratch)
        if s < best_score or (s == best_score and p > best):
            best, best_score = p, s
    if best < 0 or math.isinf(best_score):
        return False, none, 0.0
    found, f = bisect_frequency(pb, splits, best, eps)
    return found, f, best


# -- descent ------------------------------------------------------------------

@njit(cache=True)
def move_split(pb, splits, freqs, power, val, eps):
    """Best single-device split change with shares and power re-solved for it.

    Escapes stalls where a split only pays off once energy shifts between CPU
    and uplink.  Moves are screened with a coarse joint search; only the most
    promising one is solved accurately.  Returns ``(improved, value, splits,
    freqs, power)``.
    """
    prefix, kd, rate, upper, c = pb[0], pb[1], pb[2], pb[5], pb[6]
    best_screen = INF
    best_l = splits
    # no move can beat full CPU for the moved device and full transmit power
    floor = up_time(pb, c[C_PMAX]) + c[C_DOWN]
    for i in range(splits.shape[0]):
        for l in range(upper[i] + 1):
            if l == splits[i]:
                continue
            fastest = kd[i] * (prefix[l] / rate[i] + (prefix[-1] - prefix[l]) / (c[C_PHI] * c[C_FMAX]))
            if fastest + floor >= val:
                continue
            trial = splits.copy()
            trial[i] = l
            found, f, p = balance_energy(pb, trial, power, 1e-3, 12, 1e-2)
            if not found:
                continue
            v = round_value(pb, trial, f, p)
            if v < best_screen:
                best_screen, best_l = v, trial
    if best_screen > val * (1 + 1e-2):
        return False, val, splits, freqs, power
    found, f, p = balance_energy(pb, best_l, power, eps, 40, 1e-4)
    if not found:
        return False, val, splits, freqs, power
    v = round_value(pb, best_l, f, p)
    if v < val:
        return True, v, best_l, f, p
    return False, val, splits, freqs, power


@njit(cache=True)
def spread_idle(pb, splits, freqs):
    # devices with nothing offloaded cost no energy, so hand them the unused CPU
    depth = pb[0].shape[0] - 1
    n_idle = 0
    for i in range(splits.shape[0]):
        if splits[i] == depth:
            n_idle += 1
    spare = pb[6][C_FMAX] - freqs.sum()
    if n_idle == 0 or spare <= 0:
        return False, freqs
    f = freqs.copy()
    for i in range(splits.shape[0]):
        if splits[i] == depth:
            f[i] += spare / n_idle
    return True, f


@njit(cache=True)
def bcd(pb, splits, freqs, power, max_iter, tol, eps, exact, joint, trace):
    """Alternate the three blocks until the round delay stops improving.

    Writes the delay after each sweep into ``trace`` and returns
    ``(value, splits, freqs, power, trace_length)``.
    """
    c = pb[6]
    val = round_value(pb, splits, freqs, power)
    trace[0] = val
    used = 1
    for _ in range(max_iter):
        prev = val
        changed, spread = spread_idle(pb, splits, freqs)
        base = freqs
        for attempt in range(2 if changed else 1):
            fr = base if attempt == 0 else spread
            found, new_l = bisect_partition(pb, fr, power, exact)
            if found:
                v = round_value(pb, new_l, fr, power)
                if v < val or (v == val and attempt == 0):
                    splits, freqs, val = new_l, fr, v
        found, new_f = bisect_frequency(pb, splits, power, eps)
        if found:
            v = round_value(pb, splits, new_f, power)
            if v <= val:
                freqs, val = new_f, v
        new_p = optimal_power(pb, splits, freqs)
        if new_p > 0:
            v = round_value(pb, splits, freqs, new_p)
            if v <= val:
                power, val = new_p, v
        if not prev - val > tol * val and joint and power < c[C_PMAX]:
            # stalled with the energy budget binding: trade CPU energy against transmit energy
            found, jf, jp = balance_energy(pb, splits, power, eps, 40, 1e-4)
            if found:
                v = round_value(pb, splits, jf, jp)
                if v < val:
                    freqs, power, val = jf, jp, v
            moved, mv, ml, mf, mp = move_split(pb, splits, freqs, power, val, eps)
            if moved:
                splits, freqs, power, val = ml, mf, mp, mv
        trace[used] = val
        used += 1
        if not prev - val > tol * val:
            break
    return val, splits, freqs, power, used


@njit(cache=True)
def _deep_start(pb, eps):
    # most offloading that fits gateway memory, with the best shares for it
    top_mem, upper, c = pb[4], pb[5], pb[6]
    n = upper.shape[0]
    deep = np.zeros(n, dtype=np.int64)
    while gateway_memory(pb, deep) > c[C_MEMCAP]:
        pick, gain = -1, -INF
        for i in range(n):
            if deep[i] < upper[i]:
                g = top_mem[i, deep[i]] - top_mem[i, deep[i] + 1]
                if g > gain:
                    pick, gain = i, g
        if pick < 0:
            return False, deep, np.zeros(n), 0.0
        deep[pick] += 1
    found, freqs = bisect_frequency(pb, deep, c[C_PMAX], eps)
    if found and feasible(pb, deep, freqs, c[C_PMAX]):
        return True, deep, freqs, c[C_PMAX]
    freqs = waterfill(np.zeros(n), offload_weights(pb, deep), c[C_FMIN])
    power = optimal_power(pb, deep, freqs)
    if power > 0 and feasible(pb, deep, freqs, power):
        return True, deep, freqs, power
    return False, deep, freqs, 0.0


@njit(cache=True)
def solve(pb, freq_starts, max_iter, tol, eps, exact, joint):
    """Best BCD outcome over several starts, the winner polished with the joint energy step.

    Returns ``(value, splits, freqs, power, trace)``; ``value`` is ``inf`` if
    no start is feasible.
    """
    kd, upper, c = pb[1], pb[5], pb[6]
    n = upper.shape[0]
    n_starts = freq_starts.shape[0] + 2
    start_l = np.zeros((n_starts, n), dtype=np.int64)
    start_f = np.zeros((n_starts, n))
    start_p = np.zeros(n_starts)
    k = 0
    weights = kd / kd.sum()
    for s in range(freq_starts.shape[0]):
        total = max(freq_starts[s] * c[C_FMAX], c[C_FMIN])
        freqs = total * weights
        if training_energy(pb, upper, freqs) + up_energy(pb, c[C_PMAX]) <= c[C_ENERGY]:
            power = c[C_PMAX]
        else:
            power = optimal_power(pb, upper, freqs)
        if power > 0:
            start_l[k], start_f[k], start_p[k] = upper, freqs, power
            k += 1
    found, deep, freqs, power = _deep_start(pb, eps)
    if found:
        start_l[k], start_f[k], start_p[k] = deep, freqs, power
        k += 1
    # cheapest configuration: least offloading, minimum CPU, all remaining energy on the uplink
    freqs = waterfill(np.zeros(n), offload_weights(pb, upper), c[C_FMIN])
    power = optimal_power(pb, upper, freqs)
    if power > 0:
        start_l[k], start_f[k], start_p[k] = upper, freqs, power
        k += 1

    trace = np.empty(2 * max_iter + 2)
    scratch = np.empty(max_iter + 1)
    best_val = INF
    best_l, best_f, best_p, best_used = upper.copy(), np.zeros(n), 0.0, 0
    for s in range(k):
        val, sl, sf, sp, used = bcd(pb, start_l[s].copy(), start_f[s].copy(), start_p[s],
                                    max_iter, tol, eps, exact, False, scratch)
        if s == 0 or val < best_val:
            best_val, best_l, best_f, best_p, best_used = val, sl, sf, sp, used
            trace[:used] = scratch[:used]
    if k == 0 or not math.isfinite(best_val):
        return INF, best_l, best_f, best_p, trace[:0]
    if joint:
        val, sl, sf, sp, used = bcd(pb, best_l, best_f, best_p, max_iter, tol, eps, exact, True, scratch)
        trace[best_used:best_used + used - 1] = scratch[1:used]
        best_val, best_l, best_f, best_p, best_used = val, sl, sf, sp, best_used + used - 1
    return best_val, best_l, best_f, best_p, trace[:best_used].copy()
