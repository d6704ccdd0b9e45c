"""Inverse demand: maps aggregate units sold to per-unit prices.

Every map F here is continuous, componentwise nonincreasing, and valued in
[0, max_price] with F(0) = max_price.  Three parametric families cover the
engine's fast path; arbitrary callables (including cross-impact maps) are
accepted on the slow path and can be screened with :func:`validate`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

KIND_CONSTANT = "constant"
KIND_PWL_SQRT = "piecewise_linear_sqrt"
KIND_POWER = "power_concave"
KIND_TABULATED = "tabulated"
KIND_CUSTOM = "custom"

_KERNEL_CODES = {KIND_CONSTANT: 0, KIND_PWL_SQRT: 1, KIND_POWER: 2, KIND_TABULATED: 3}


@dataclass(frozen=True)
class InverseDemand:
    """One price-impact map.  Build instances through the factory functions."""

    kind: str
    max_price: np.ndarray
    params: tuple = ()
    table: tuple = ()          # tabulated kind: ((units, prices), ...) per asset
    func: Optional[Callable] = None

    @property
    def m(self) -> int:
        return self.max_price.shape[0]

    def __call__(self, sold) -> np.ndarray:
        return self.evaluate(sold)

    def evaluate(self, sold) -> np.ndarray:
        """Price vector for aggregate units sold; rejects negative input.

        Accepts a batch of points as an (..., m) array.
        """
        z = np.asarray(sold, dtype=float)
        if z.shape[-1:] != (self.m,):
            raise ValueError(f"expected trailing dimension {self.m}, got {z.shape}")
        if np.any(z < 0):
            raise ValueError("units sold must be nonnegative")
        if self.kind == KIND_CONSTANT:
            return np.broadcast_to(self.max_price, z.shape).copy()
        if self.kind == KIND_PWL_SQRT:
            qmax, slope, knot = (np.asarray(p) for p in self.params)
            linear = qmax * np.maximum(1.0 - slope * z, 0.0)
            with np.errstate(invalid="ignore"):
                edge = np.where(np.isfinite(knot),
                                qmax * np.maximum(1.0 - slope * knot, 0.0), 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                tail = np.where(z > 0, edge * np.sqrt(np.minimum(knot / np.maximum(z, 1e-300), 1.0)), qmax)
            return np.where(z <= knot, linear, tail)
        if self.kind == KIND_POWER:
            qmax, depth, exponent = (np.asarray(p) for p in self.params)
            return qmax * np.maximum(1.0 - (z / depth) ** exponent, 0.0)
        if self.kind == KIND_TABULATED:
            out = np.empty_like(z)
            flat = z.reshape(-1, self.m)
            res = out.reshape(-1, self.m)
            for k, (units, prices) in enumerate(self.table):
                res[:, k] = np.interp(flat[:, k], units, prices)
            return out
        # custom: clamp into the declared band so downstream code sees a
        # well-formed price; validate() reports any violation of the raw map
        raw = np.asarray(self.func(z), dtype=float)
        return np.clip(raw, 0.0, self.max_price)

    def kernel_spec(self):
        """(code, packed params, table arrays) for the compiled kernel, or None."""
        if self.kind not in _KERNEL_CODES:
            return None
        code = _KERNEL_CODES[self.kind]
        if self.kind == KIND_CONSTANT:
            packed = np.ascontiguousarray(self.max_price)
        elif self.kind in (KIND_PWL_SQRT, KIND_POWER):
            packed = np.ascontiguousarray(np.column_stack(self.params).reshape(-1))
        else:
            packed = np.zeros(0)
        if self.kind == KIND_TABULATED:
            counts = [len(u) for u, _ in self.table]
            offsets = np.cumsum([0] + counts).astype(np.int64)
            units = np.concatenate([u for u, _ in self.table])
            prices = np.concatenate([p for _, p in self.table])
        else:
            offsets = np.zeros(1, dtype=np.int64)
            units = np.zeros(0)
            prices = np.zeros(0)
        return code, packed, offsets, units, prices


def _as_vector(value, m: int) -> np.ndarray:
    out = np.broadcast_to(np.asarray(value, dtype=float), (m,)).copy()
    return out


def constant(max_price, m: int | None = None) -> InverseDemand:
    """Price-insensitive market: F(z) = max_price everywhere."""
    q = np.atleast_1d(np.asarray(max_price, dtype=float))
    if m is not None:
        q = _as_vector(max_price, m)
    return InverseDemand(KIND_CONSTANT, q)


def piecewise_linear_sqrt(max_price=1.0, slope=2.0 / 3.0e8, knot=5.0e7,
                          m: int = 1) -> InverseDemand:
    """Linear impact up to a knot, then an inverse-square-root tail.

    The tail coefficient is chosen so the two branches meet continuously at
    the knot.  The defaults describe a unit-price market that loses a third
    of its value once fifty million units hit the book.  ``knot=inf`` gives a
    plain clipped-linear map.
    """
    qmax = _as_vector(max_price, m)
    sl = _as_vector(slope, m)
    kn = _as_vector(knot, m)
    if np.any(qmax <= 0):
        raise ValueError("max_price must be positive")
    if np.any(sl < 0) or np.any(kn < 0):
        raise ValueError("slope and knot must be nonnegative")
    finite = np.isfinite(kn)
    if np.any(sl[finite] * kn[finite] > 1.0):
        raise ValueError("price would cross zero before the knot; shrink slope or knot")
    return InverseDemand(KIND_PWL_SQRT, qmax, params=(qmax, sl, kn))


def power_concave(total_supply, depth_scale=2.5, exponent=1.5, max_price=1.0,
                  guard=1e-10) -> InverseDemand:
    """Concave power-law impact calibrated to the system-wide portfolio.

    Depth for asset k is ``depth_scale**(2/3) * total_supply_k + guard``; the
    tiny guard keeps the map defined for assets nobody holds.  With the
    default exponent the map is strictly concave on [0, total_supply].
    """
    supply = np.atleast_1d(np.asarray(total_supply, dtype=float))
    m = supply.shape[0]
    qmax = _as_vector(max_price, m)
    depth = depth_scale ** (2.0 / 3.0) * supply + guard
    exp = _as_vector(exponent, m)
    if np.any(depth <= 0):
        raise ValueError("depth must be positive")
    return InverseDemand(KIND_POWER, qmax, params=(qmax, depth, exp))


def tabulated(knots: Sequence[tuple]) -> InverseDemand:
    """Monotone piecewise-linear interpolation of (units, price) knots per asset.

    Prices are clamped at the last knot's value beyond it, which keeps the
    map nonincreasing by construction.
    """
    table = []
    qmax = []
    for units, prices in knots:
        u = np.asarray(units, dtype=float)
        p = np.asarray(prices, dtype=float)
        if u.ndim != 1 or u.shape != p.shape or u.shape[0] < 1:
            raise ValueError("each asset needs matching 1-D units and prices")
        if u[0] != 0:
            raise ValueError("knots must start at zero units")
        if np.any(np.diff(u) <= 0):
            raise ValueError("units must be strictly increasing")
        if np.any(np.diff(p) > 0):
            raise ValueError("prices must be nonincreasing in units")
        if np.any(p < 0):
            raise ValueError("prices must be nonnegative")
        table.append((u, p))
        qmax.append(p[0])
    return InverseDemand(KIND_TABULATED, np.asarray(qmax), table=tuple(table))


def custom(func: Callable, max_price) -> InverseDemand:
    """Wrap an arbitrary (possibly cross-impact) callable.

    The caller is responsible for continuity and monotonicity; run
    :func:`validate` before trusting equilibrium solves with it.
    """
    q = np.atleast_1d(np.asarray(max_price, dtype=float))
    return InverseDemand(KIND_CUSTOM, q, func=func)


@dataclass
class DemandReport:
    """Outcome of screening a demand map against the standing assumptions."""

    monotone_violations: int
    worst_monotone_gap: float
    max_price_gap: float                 # |F(0) - max_price| in sup norm
    positive_at_supply: bool
    min_price_at_supply: float
    quasiconcave_clean: Optional[bool]   # None when no holdings were supplied
    worst_quasiconcave_dip: float
    samples: int

    @property
    def hard_ok(self) -> bool:
        """Checks (monotone, positive residual market) that gate equilibrium runs."""
        return self.monotone_violations == 0 and self.positive_at_supply


def validate(demand: InverseDemand, total_supply, holdings=None, *, seed=0,
             grid_points=200, pair_samples=500, segments=1000,
             segment_points=50, tol=1e-12, qc_tol=1e-10) -> DemandReport:
    """Screen a demand map: monotonicity, residual-market price, quasi-concavity.

    Monotonicity and a strictly positive price at total supply are hard
    requirements for equilibrium solves.  The quasi-concavity sweep of each
    firm's portfolio value along random segments is advisory: sampling can
    refute the property, never prove it.
    """
    supply = np.atleast_1d(np.asarray(total_supply, dtype=float))
    m = demand.m
    rng = np.random.default_rng(seed)
    span = np.where(supply > 0, supply, 1.0)

    violations = 0
    worst = 0.0
    # axis-aligned ladders catch componentwise violations cheaply
    for k in range(m):
        zs = np.zeros((grid_points, m))
        zs[:, k] = np.linspace(0.0, span[k], grid_points)
        prices = demand.evaluate(zs)
        diffs = np.diff(prices, axis=0)
        bad = diffs > tol
        violations += int(bad.sum())
        if bad.any():
            worst = max(worst, float(diffs[bad].max()))
    # random ordered pairs catch cross-impact violations
    lo = rng.uniform(0.0, span, size=(pair_samples, m))
    hi = lo + rng.uniform(0.0, span, size=(pair_samples, m)) * 0.5
    f_lo = demand.evaluate(np.minimum(lo, span * 2))
    f_hi = demand.evaluate(np.minimum(hi, span * 2))
    bad = f_hi - f_lo > tol
    violations += int(bad.sum())
    if bad.any():
        worst = max(worst, float((f_hi - f_lo)[bad].max()))

    at_zero = demand.evaluate(np.zeros(m))
    max_price_gap = float(np.abs(at_zero - demand.max_price).max())
    at_supply = demand.evaluate(supply)
    min_at_supply = float(at_supply.min())

    qc_clean = None
    qc_dip = 0.0
    if holdings is not None:
        holdings = np.atleast_2d(np.asarray(holdings, dtype=float))
        a = rng.uniform(0.0, span, size=(segments, m))
        b = rng.uniform(0.0, span, size=(segments, m))
        ts = np.linspace(0.0, 1.0, segment_points)
        # (segments, points, m) grid of segment samples, one demand call
        pts = a[:, None, :] + ts[None, :, None] * (b - a)[:, None, :]
        prices = demand.evaluate(pts)
        values = np.einsum("im,spm->isp", holdings, prices)
        interior_min = values.min(axis=2)
        end_min = np.minimum(values[:, :, 0], values[:, :, -1])
        dips = end_min - interior_min
        qc_dip = float(dips.max(initial=0.0))
        qc_clean = bool(qc_dip <= qc_tol)

    return DemandReport(
        monotone_violations=violations,
        worst_monotone_gap=worst,
        max_price_gap=max_price_gap,
        positive_at_supply=bool(np.all(at_supply > 0)),
        min_price_at_supply=min_at_supply,
        quasiconcave_clean=qc_clean,
        worst_quasiconcave_dip=qc_dip,
        samples=grid_points * m + pair_samples,
    )


def from_spec(spec: dict, system=None) -> InverseDemand:
    """Build a demand map from a config block.

    Supply-bound kinds (power_concave) need the system they price.
    """
    kind = spec.get("kind")
    if kind == KIND_CONSTANT:
        return constant(spec.get("max_price", 1.0), m=spec.get("m"))
    if kind == KIND_PWL_SQRT:
        return piecewise_linear_sqrt(
            max_price=spec.get("max_price", 1.0),
            slope=spec.get("slope", 2.0 / 3.0e8),
            knot=spec.get("knot", 5.0e7),
            m=int(spec.get("m", 1)),
        )
    if kind == KIND_POWER:
        if system is None:
            raise ValueError("power_concave demand needs the system portfolio")
        return power_concave(
            system.total_supply,
            depth_scale=spec.get("depth_scale", 2.5),
            exponent=spec.get("exponent", 1.5),
            max_price=spec.get("max_price", 1.0),
            guard=spec.get("guard", 1e-10),
        )
    if kind == KIND_TABULATED:
        return tabulated([(np.asarray(k["units"]), np.asarray(k["prices"]))
                          for k in spec["knots"]])
    raise ValueError(f"unknown inverse-demand kind: {kind!r}")
