"""Joint clearing with value-maximizing liquidation choices.

Every firm picks how to spread its forced sale across assets so as to
maximize the mark-to-market value of its own book, taking everyone else's
sales as given.  A fixed point of the resulting set-valued update is a
clearing payment vector, clearing prices, and a Nash profile of liquidation
strategies; converged solves carry a sampled no-improvement certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clearing import CONVERGED, MAX_ITER, OSCILLATING, default_tol
from .demand import InverseDemand, validate
from .model import (
    ClearingState,
    FinancialSystem,
    RelativeLiabilities,
    incoming_payments,
    liquidation_requirements,
)

_PRICE_FLOOR = 1e-12   # components priced below this leave the proceeds constraint


class DemandAssumptionError(ValueError):
    """The demand map failed a hard precondition for equilibrium solves."""


@dataclass
class EquilibriumSolution:
    state: ClearingState
    residual: float
    iterations: int
    status: str
    nash_gap: float

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def _project_rows(points, upper, prices, target, active, iters: int = 64):
    """Row-wise nearest feasible points: box [0, upper], priced proceeds on target.

    Vectorized dual bisection on the hyperplane multiplier; inactive
    (zero-priced) coordinates are only clipped.  The starting bracket is the
    analytic bound beyond which every priced coordinate clips to an extreme.
    """
    points = np.atleast_2d(points)
    pts = np.clip(points, 0.0, upper)
    if not active.any():
        return pts
    qa = prices[active]
    ua = upper[active]
    ya = points[:, active]

    def priced(mu):
        return np.clip(ya - mu[:, None] * qa, 0.0, ua) @ qa

    bound = (np.abs(ya).max(axis=1) + ua.max(initial=0.0)) / qa.min() + 1.0
    lo = -bound
    hi = bound
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        over = priced(mid) > target
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
    pts[:, active] = np.clip(ya - hi[:, None] * qa, 0.0, ua)
    return pts


def _project_slice(point, upper, prices, target, active):
    return _project_rows(point[None, :], upper, prices, target, active)[0]


def _feasible_interval(g, direction, upper):
    """Largest [t_lo, t_hi] with g + t*direction inside the box."""
    t_lo, t_hi = -np.inf, np.inf
    for k in range(g.shape[0]):
        d = direction[k]
        if d > 1e-300:
            t_hi = min(t_hi, (upper[k] - g[k]) / d)
            t_lo = max(t_lo, (0.0 - g[k]) / d)
        elif d < -1e-300:
            t_hi = min(t_hi, (0.0 - g[k]) / d)
            t_lo = max(t_lo, (upper[k] - g[k]) / d)
    if not np.isfinite(t_lo):
        t_lo = 0.0
    if not np.isfinite(t_hi):
        t_hi = 0.0
    return t_lo, t_hi


def _tangent_directions(rng, count, m, prices, active):
    """Random unit directions that keep the priced-proceeds constraint intact.

    Components below numerical dust are zeroed; otherwise the interval
    arithmetic downstream would blow projection residue up into real
    constraint violations.
    """
    d = rng.normal(size=(count, m))
    qa = prices[active]
    qa_norm2 = float(qa @ qa)
    if qa_norm2 > 0:
        comp = (d[:, active] @ qa) / qa_norm2
        d[:, active] -= comp[:, None] * qa
    norms = np.linalg.norm(d, axis=1)
    live = norms > 1e-12
    d[live] /= norms[live, None]
    d[~live] = 0.0
    d[np.abs(d) < 1e-12] = 0.0
    return d


def _greedy_fill(order, upper, prices, target, active):
    """Vertex of the slice: saturate assets in the given order until on target."""
    g = np.zeros_like(upper)
    remaining = target
    for k in order:
        if not active[k]:
            continue
        take = min(upper[k], remaining / prices[k])
        g[k] = take
        remaining -= take * prices[k]
        if remaining <= 0:
            break
    return g


def best_response(i: int, state: ClearingState, others_liquidations,
                  system: FinancialSystem, rl: RelativeLiabilities,
                  demand: InverseDemand, *, rng=None, n_starts: int = 20,
                  ascent_iters: int = 60, polish_rounds: int = 40,
                  fd_scale: float = 1e-6, warm_start=None) -> np.ndarray:
    """One firm's valuation-maximizing sale on its minimal-liquidation slice.

    The feasible set fixes the priced proceeds at the smaller of the
    requirement and the book's value; within it the firm shifts sales toward
    assets whose prices its trades hurt least.  Projected ascent with
    central-difference gradients runs from vertex and interior multi-starts;
    a derivative-free random-segment polish cleans up whatever ascent leaves.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    idx = i - 1
    holdings = system.illiquid[idx]
    prices = state.prices
    m = system.m
    required = liquidation_requirements(state.payments, state.prices, rl, system)[idx]
    active = prices > _PRICE_FLOOR
    capacity = float(prices @ holdings)
    target = min(capacity, required)
    if required <= 0:
        return np.zeros(m)
    if required >= capacity:
        return holdings.copy()

    others = np.minimum(system.illiquid, np.atleast_2d(others_liquidations)).sum(axis=0)
    others = others - np.minimum(holdings, np.atleast_2d(others_liquidations)[idx])
    base = np.maximum(others, 0.0)

    def objective(rows):
        return demand.evaluate(np.atleast_2d(rows) + base) @ holdings

    n_active = int(active.sum())
    if n_active <= 1:
        # the slice is a single point: the constraint pins the priced asset
        g = np.zeros(m)
        if n_active == 1:
            g[active] = target / prices[active]
        return g

    if warm_start is not None and n_starts <= 1:
        # converging tails call this with an incumbent that is usually already
        # optimal; a cheap stationarity probe skips the whole ascent then
        warm = _project_slice(np.minimum(warm_start, holdings), holdings,
                              prices, target, active)
        scale0 = max(float(holdings.max()), 1.0)
        probes = np.vstack([
            np.minimum(warm + fd_scale * scale0, holdings),
            np.maximum(warm - fd_scale * scale0, 0.0),
        ])
        f_w = float(objective(warm)[0])
        grad0 = np.zeros(m)
        for k in range(m):
            up1 = warm.copy()
            dn1 = warm.copy()
            up1[k] = probes[0, k]
            dn1[k] = probes[1, k]
            spread = up1[k] - dn1[k]
            if spread > 0:
                vals = objective(np.vstack([up1, dn1]))
                grad0[k] = (float(vals[0]) - float(vals[1])) / spread
        trial = _project_slice(warm + 1e-5 * scale0 * grad0, holdings, prices,
                               target, active)
        if float(objective(trial)[0]) <= f_w + 1e-13 * (1.0 + abs(f_w)):
            return warm

    # multi-starts: the incumbent, price-extreme vertices, random vertices,
    # random interior
    starts = []
    if warm_start is not None:
        starts.append(_project_slice(np.minimum(warm_start, holdings),
                                     holdings, prices, target, active))
    if len(starts) < n_starts or not starts:
        starts.append(_greedy_fill(np.argsort(-prices), holdings, prices,
                                   target, active))
    if len(starts) < n_starts:
        starts.append(_greedy_fill(np.argsort(prices), holdings, prices,
                                   target, active))
    for _ in range(max(0, (n_starts - len(starts) + 1) // 2)):
        starts.append(_greedy_fill(rng.permutation(m), holdings, prices, target, active))
    if len(starts) < n_starts:
        raw = rng.uniform(0.0, holdings, size=(n_starts - len(starts), m))
        interior = _project_rows(raw, holdings, prices, target, active)
        starts.extend(interior)
    g = np.array(starts)
    count = len(g)
    values = objective(g)

    scale = max(float(holdings.max()), 1.0)
    h = fd_scale * scale
    eta0 = 0.25 * scale
    ftol = 1e-13 * (1.0 + float(np.abs(values).max()))
    # a row that survives a whole step ladder without improving sits at a
    # point where the same ladder would fail again; retire it
    alive = np.ones(count, dtype=bool)
    for _ in range(ascent_iters):
        rows_alive = np.where(alive)[0]
        if rows_alive.size == 0:
            break
        ga = g[rows_alive]
        na = rows_alive.size
        up = np.repeat(ga[None, :, :], m, axis=0)
        dn = up.copy()
        for k in range(m):
            up[k, :, k] = np.minimum(ga[:, k] + h, holdings[k])
            dn[k, :, k] = np.maximum(ga[:, k] - h, 0.0)
        fu = objective(up.reshape(-1, m)).reshape(m, na)
        fd = objective(dn.reshape(-1, m)).reshape(m, na)
        spread = up[np.arange(m), :, np.arange(m)] - dn[np.arange(m), :, np.arange(m)]
        grad = np.zeros((na, m))
        nz = spread > 0
        grad.T[nz] = (fu[nz] - fd[nz]) / spread[nz]

        improved = np.zeros(na, dtype=bool)
        eta = eta0
        for _ in range(14):
            open_local = np.where(~improved)[0]
            if open_local.size == 0:
                break
            rows = rows_alive[open_local]
            cand = _project_rows(g[rows] + eta * grad[open_local],
                                 holdings, prices, target, active)
            vals = objective(cand)
            better = vals > values[rows] + ftol
            took = rows[better]
            g[took] = cand[better]
            values[took] = vals[better]
            improved[open_local[better]] = True
            eta *= 0.5
        alive[rows_alive[~improved]] = False

    # derivative-free polish: best point, random feasible segments
    best = int(np.argmax(values))
    g_best = g[best]
    f_best = float(values[best])
    for _ in range(polish_rounds):
        d = _tangent_directions(rng, 1, m, prices, active)[0]
        t_lo, t_hi = _feasible_interval(g_best, d, holdings)
        if t_hi - t_lo <= 0:
            continue
        ts = np.linspace(t_lo, t_hi, 33)
        pts = np.maximum(g_best[None, :] + ts[:, None] * d[None, :], 0.0)
        vals = objective(pts)
        j = int(np.argmax(vals))
        if vals[j] > f_best + ftol:
            cand = _project_slice(pts[j], holdings, prices, target, active)
            f_cand = float(objective(cand)[0])
            if f_cand > f_best:
                g_best, f_best = cand, f_cand
    return g_best


def sample_deviations(i, state, system, rl, *, rng, count=100, burn=5):
    """Hit-and-run walk over firm i's feasible slice; returns (count, m) points."""
    idx = i - 1
    holdings = system.illiquid[idx]
    prices = state.prices
    active = prices > _PRICE_FLOOR
    required = liquidation_requirements(state.payments, state.prices, rl, system)[idx]
    target = min(float(prices @ holdings), required)
    current = _project_slice(np.minimum(holdings, state.liquidations[idx]),
                             holdings, prices, target, active)
    out = np.empty((count, holdings.shape[0]))
    kept = 0
    steps = 0
    while kept < count:
        d = _tangent_directions(rng, 1, holdings.shape[0], prices, active)[0]
        t_lo, t_hi = _feasible_interval(current, d, holdings)
        if t_hi - t_lo > 0:
            moved = np.clip(current + rng.uniform(t_lo, t_hi) * d, 0.0, holdings)
            # walking accumulates drift off the proceeds constraint; snap back
            current = _project_slice(moved, holdings, prices, target, active)
        steps += 1
        if steps > burn:
            out[kept] = current
            kept += 1
    return out


def nash_certificate(state: ClearingState, system, rl, demand, *, rng,
                     samples_per_firm=100):
    """Largest relative valuation gain any firm finds among sampled deviations."""
    sold = state.sold(system)
    total = sold.sum(axis=0)
    worst = 0.0
    for i in range(1, system.n + 1):
        idx = i - 1
        holdings = system.illiquid[idx]
        base = total - sold[idx]
        here = float(demand.evaluate(sold[idx] + base) @ holdings)
        devs = sample_deviations(i, state, system, rl, rng=rng,
                                 count=samples_per_firm)
        vals = demand.evaluate(devs + base) @ holdings
        gain = (float(vals.max()) - here) / max(abs(here), 1e-12)
        worst = max(worst, gain)
    return worst


def psi_step(state: ClearingState, system: FinancialSystem,
             rl: RelativeLiabilities, demand: InverseDemand, *,
             rng=None, quick: bool = False) -> ClearingState:
    """One application of the modified clearing map.

    Payments and prices update exactly as in the known-strategy map (prices
    from the incoming liquidation matrix); every firm's sale is replaced by
    its best response against that same incoming matrix.  ``quick`` trades
    multi-start breadth for speed and is safe only mid-iteration, with a
    full-quality pass before convergence is accepted.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    sold = state.sold(system).sum(axis=0)
    new_prices = demand.evaluate(sold)
    assets = (system.liquid + system.illiquid @ state.prices
              + incoming_payments(state.payments, rl))
    new_payments = np.zeros_like(state.payments)
    new_payments[1:] = np.minimum(rl.total[1:], assets)
    responses = np.zeros_like(system.illiquid)
    extra = {"n_starts": 1, "polish_rounds": 8, "ascent_iters": 30} if quick else {}
    for i in range(1, system.n + 1):
        responses[i - 1] = best_response(i, state, state.liquidations, system,
                                         rl, demand, rng=rng,
                                         warm_start=state.liquidations[i - 1],
                                         **extra)
    return ClearingState(new_payments, new_prices, responses)


def solve_equilibrium(system: FinancialSystem, rl: RelativeLiabilities,
                      demand: InverseDemand, tol: float | None = None,
                      max_iter: int = 200, *, seed: int = 0,
                      deviation_samples: int = 100, deviation_rtol: float = 1e-6,
                      check_demand: bool = True) -> EquilibriumSolution:
    """Iterate the modified clearing map from full payments, top prices, no sales.

    Requires a demand map that passes the hard screening checks (monotone,
    strictly positive at total supply).  Convergence needs the payment,
    price, and realized-sales steps to all settle within tolerance, plus a
    sampled certificate that no firm gains more than ``deviation_rtol``
    relative valuation by deviating unilaterally.  Non-convergence is
    reported through the status; interpolation across scenario parameters is
    the caller's business.
    """
    if check_demand:
        report = validate(demand, system.total_supply)
        if not report.hard_ok:
            raise DemandAssumptionError(
                "demand map fails equilibrium preconditions: "
                f"{report.monotone_violations} monotonicity violations, "
                f"min price at total supply {report.min_price_at_supply:.3g}")
    if tol is None:
        tol = default_tol(system, rl, demand.max_price)
    top_value = float(np.max(demand.max_price))
    sold_tol = tol / max(top_value, 1e-12)

    payments = rl.total.copy()
    prices = demand.max_price.copy()
    liquidations = np.zeros_like(system.illiquid)
    history = []
    status = MAX_ITER
    iterations = max_iter
    residual = np.inf
    force_full = False
    for it in range(1, max_iter + 1):
        state = ClearingState(payments, prices, liquidations)
        quick = not force_full and it > 3 and it % 16 != 0
        # the same stream every pass keeps the update a deterministic map of
        # the state, which is what lets the iteration actually settle
        rng = np.random.default_rng([seed, 17])
        nxt = psi_step(state, system, rl, demand, rng=rng, quick=quick)
        d_pq = max(np.abs(nxt.payments - payments).max(),
                   np.abs(nxt.prices - prices).max())
        d_sold = np.abs(nxt.sold(system) - state.sold(system)).max()
        payments, prices, liquidations = nxt.payments, nxt.prices, nxt.liquidations
        if d_pq <= tol and d_sold <= sold_tol:
            if quick:
                # looked settled under the cheap update; insist on a full pass
                force_full = True
                continue
            status, iterations = CONVERGED, it
            break
        force_full = False
        key = (payments.copy(), prices.copy(), nxt.sold(system))
        cycled = any(
            max(np.abs(hp - payments).max(), np.abs(hq - prices).max()) <= 0.25 * tol
            and np.abs(hs - key[2]).max() <= 0.25 * sold_tol
            for hp, hq, hs in history)
        history.append(key)
        if len(history) > 8:
            history.pop(0)
        if cycled:
            status, iterations = OSCILLATING, it
            break

    final = ClearingState(payments, prices, liquidations)
    sold = final.sold(system).sum(axis=0)
    map_prices = demand.evaluate(sold)
    map_payments = np.minimum(
        rl.total[1:], system.liquid + system.illiquid @ prices
        + incoming_payments(payments, rl))
    residual = max(float(np.abs(map_payments - payments[1:]).max()),
                   float(np.abs(map_prices - prices).max()))
    nash_gap = np.nan
    if status == CONVERGED:
        cert_rng = np.random.default_rng([seed, 0, 1])
        nash_gap = nash_certificate(final, system, rl, demand, rng=cert_rng,
                                    samples_per_firm=deviation_samples)
        if residual > tol or nash_gap > deviation_rtol:
            status = MAX_ITER
    return EquilibriumSolution(final, residual, iterations, status, nash_gap)
