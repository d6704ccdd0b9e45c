"""Pure-numpy twin of the compiled clearing kernel.

Same entry points, same algorithm flow, same status codes as
``levclear._kernels``; selected at import time when the extension is missing
or explicitly disabled.  Only the closed-form monotone rules (single-asset,
proportional) and the parametric demand families run here -- everything else
goes through the general engine in :mod:`levclear.clearing`.
"""

import numpy as np

COMPILED = False

_HISTORY = 8


def _demand_eval(code, packed, offsets, units, prices_tab, q_max, sold):
    if code == 0:
        return q_max.copy()
    if code == 1:
        qmax = packed[0::3]
        slope = packed[1::3]
        knot = packed[2::3]
        out = np.empty_like(sold)
        for k in range(sold.shape[0]):
            z = sold[k]
            if z <= knot[k]:
                out[k] = qmax[k] * max(1.0 - slope[k] * z, 0.0)
            else:
                edge = qmax[k] * max(1.0 - slope[k] * knot[k], 0.0)
                out[k] = edge * np.sqrt(knot[k] / z)
        return out
    if code == 2:
        qmax = packed[0::3]
        depth = packed[1::3]
        expo = packed[2::3]
        return qmax * np.maximum(1.0 - (sold / depth) ** expo, 0.0)
    out = np.empty_like(sold)
    for k in range(sold.shape[0]):
        lo, hi = offsets[k], offsets[k + 1]
        out[k] = np.interp(sold[k], units[lo:hi], prices_tab[lo:hi])
    return out


def _gammas(strat_code, req, prices, illiquid):
    if strat_code == 0:
        price = prices[0]
        if price > 0:
            return (req / price)[:, None]
        return np.where(req > 0, illiquid[:, 0], 0.0)[:, None]
    value = illiquid @ prices
    gamma = np.zeros_like(illiquid)
    ok = value > 0
    gamma[ok] = illiquid[ok] * (req[ok] / value[ok])[:, None]
    broke = (~ok) & (req > 0)
    gamma[broke] = illiquid[broke]
    return gamma


def _step(total, relative, liquid, illiquid, lev_cap, strat_code,
          code, packed, offsets, units, prices_tab, q_max, payments, prices):
    inc = payments @ relative[:, 1:]
    value = illiquid @ prices
    obligations = total[1:]
    shortfall = np.maximum(obligations - (liquid + inc), 0.0)
    headroom = lev_cap * np.maximum(liquid + value + inc - obligations, 0.0)
    req = np.maximum(shortfall - headroom, 0.0)
    gamma = _gammas(strat_code, req, prices, illiquid)
    sold = np.minimum(illiquid, gamma).sum(axis=0)
    new_prices = _demand_eval(code, packed, offsets, units, prices_tab, q_max, sold)
    new_payments = np.zeros_like(payments)
    new_payments[1:] = np.minimum(obligations, liquid + value + inc)
    return new_payments, new_prices, gamma


def solve_closed_form(total, relative, liquid, illiquid, lev_cap,
                      strat_code, demand_code, packed, offsets, units,
                      prices_tab, q_max, tol, max_iter, relax, start_low,
                      p_out, q_out, gamma_out):
    n = liquid.shape[0]
    m = illiquid.shape[1]
    if start_low:
        p = np.zeros(n + 1)
        q = np.zeros(m)
    else:
        p = total.copy()
        q = q_max.copy()
    args = (total, relative, liquid, illiquid, lev_cap, strat_code,
            demand_code, packed, offsets, units, prices_tab, q_max)
    history = []
    status = 1
    iterations = max_iter
    res = np.inf
    for it in range(1, max_iter + 1):
        np_, nq, _ = _step(*args, p, q)
        if relax >= 0.0:
            np_ = (1.0 - relax) * p + relax * np_
            nq = (1.0 - relax) * q + relax * nq
        step = max(np.abs(np_ - p).max(), np.abs(nq - q).max())
        if step <= tol:
            cp, cq, _ = _step(*args, np_, nq)
            res = max(np.abs(cp - np_).max(), np.abs(cq - nq).max())
            p, q = np_, nq
            if res <= tol:
                status, iterations = 0, it
                break
            continue
        cycled = any(max(np.abs(hp - np_).max(), np.abs(hq - nq).max()) <= 0.25 * tol
                     for hp, hq in history)
        history.append((np_.copy(), nq.copy()))
        if len(history) > _HISTORY:
            history.pop(0)
        p, q = np_, nq
        if cycled:
            status, iterations = 2, it
            break
    if status == 1:
        cp, cq, _ = _step(*args, p, q)
        res = max(np.abs(cp - p).max(), np.abs(cq - q).max())
    _, _, gamma = _step(*args, p, q)
    p_out[:] = p
    q_out[:] = q
    gamma_out[:, :] = gamma
    return iterations, status, float(res)


def scan_leverage(total, relative, liquid, illiquid, lambdas,
                  strat_code, demand_code, packed, offsets, units, prices_tab,
                  q_max, tol, max_iter,
                  p_grid, q_grid, iter_out, status_out, res_out):
    """Solve the clearing problem once per uniform leverage-cap value."""
    n = liquid.shape[0]
    m = illiquid.shape[1]
    gamma = np.zeros((n, m))
    p_out = np.zeros(n + 1)
    q_out = np.zeros(m)
    for g, lam in enumerate(lambdas):
        cap = np.full(n, lam)
        iters, status, res = solve_closed_form(
            total, relative, liquid, illiquid, cap,
            strat_code, demand_code, packed, offsets, units, prices_tab,
            q_max, tol, max_iter, -1.0, 0, p_out, q_out, gamma)
        p_grid[g, :] = p_out
        q_grid[g, :] = q_out
        iter_out[g] = iters
        status_out[g] = status
        res_out[g] = res
