"""Bounded equivalent measure changes built from a martingale density.

Given a terminal density q (positive leaf values with mean one), the
transform q_delta = q / (delta + q) caps the density pointwise: the
normalized Z_delta = q_delta / E[q_delta] is bounded by 1 / Delta0 where
Delta0 = E[q / (1 + q)], uniformly in delta in (0, 1).  Shrinking delta
pulls Z_delta toward the original measure; growing it flattens Z_delta
toward 1 while keeping the measure equivalent.  The l1 distance
E|Z_delta - 1| therefore climbs from 0 as delta grows, which is what the
bracket-and-bisect search in ``delta_for_epsilon`` exploits.

The payoff of the construction: utility maximization under Z_delta is
value-bounded by U(x0 / (delta * E[q_delta])) whenever q came from a
martingale density, because the optimal terminal wealth has Q-expectation
at most x0 and Z_delta <= q / (delta * E[q_delta]) pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .markets import DensityProcess, MarketModel, density_from_leaf_values, price_martingale_residual
from .trees import EventTree

DELTA_MAX = 1.0 - 1e-9
REL_RESOLUTION = 1e-12
NORMALIZATION_TOL = 1e-12
BOUND_TOL = 1e-12


@dataclass
class DeltaMeasure:
    delta: float
    q: np.ndarray  # original terminal density on leaves
    q_delta: np.ndarray  # capped, unnormalized
    z_leaf: np.ndarray  # normalized terminal density
    density: DensityProcess  # extended to every node
    e_q_delta: float
    delta0: float  # E[q / (1 + q)]
    bound: float  # 1 / delta0, pointwise bound for z
    l1_dist: float  # E|Z_delta - 1|


def construct_q_delta(tree: EventTree, q, delta: float) -> DeltaMeasure:
    """Cap-and-normalize a terminal density: Z_delta = (q/(delta+q)) / E[...]."""
    q = np.asarray(q, dtype=np.float64)
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")
    if q.shape != (tree.leaves.size,):
        raise ValueError(
            f"expected one q value per leaf ({tree.leaves.size}), got {q.shape}"
        )
    if np.any(q <= 0.0) or not np.all(np.isfinite(q)):
        raise ValueError("terminal density values must be finite and positive")
    p = tree.unconditional_probs()[tree.leaves]
    mean = float(p @ q)
    if abs(mean - 1.0) > 1e-9:
        raise ValueError(f"terminal density must have mean 1, got {mean!r}")
    q_delta = q / (delta + q)
    e_q_delta = float(p @ q_delta)
    z_leaf = q_delta / e_q_delta
    delta0 = float(p @ (q / (1.0 + q)))
    bound = 1.0 / delta0
    if float(z_leaf.max()) > bound + BOUND_TOL:
        raise AssertionError(
            f"bound violated: max Z_delta {z_leaf.max()!r} exceeds 1/Delta0 {bound!r}"
        )
    e_z = float(p @ z_leaf)
    if abs(e_z - 1.0) > NORMALIZATION_TOL:
        raise AssertionError(f"normalization failed: E[Z_delta] = {e_z!r}")
    density = density_from_leaf_values(tree, z_leaf)
    l1 = float(p @ np.abs(z_leaf - 1.0))
    return DeltaMeasure(
        delta=float(delta),
        q=q,
        q_delta=q_delta,
        z_leaf=z_leaf,
        density=density,
        e_q_delta=e_q_delta,
        delta0=delta0,
        bound=bound,
        l1_dist=l1,
    )


def delta_for_epsilon(tree: EventTree, q, eps: float) -> DeltaMeasure:
    """Largest delta (to relative resolution 1e-12) with E|Z_delta - 1| <= eps.

    Walks the decreasing grid delta_k = 2^-k until the constraint first
    holds, then bisects inside that bracket.  Existence is guaranteed for
    strictly positive q: the l1 distance vanishes as delta -> 0.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    top = construct_q_delta(tree, q, DELTA_MAX)
    if top.l1_dist <= eps:
        return top
    hi = DELTA_MAX  # known infeasible side of the bracket
    lo = None
    delta = 0.5
    for _ in range(200):
        dm = construct_q_delta(tree, q, delta)
        if dm.l1_dist <= eps:
            lo = delta
            best = dm
            break
        hi = delta
        delta *= 0.5
    if lo is None:
        raise AssertionError(
            "no feasible delta found on the grid; terminal density is not "
            "strictly positive?"
        )
    while (hi - lo) / lo > REL_RESOLUTION:
        mid = 0.5 * (hi + lo)
        dm = construct_q_delta(tree, q, mid)
        if dm.l1_dist <= eps:
            lo, best = mid, dm
        else:
            hi = mid
    return best


def verify_value_bound(
    m: MarketModel,
    dm: DeltaMeasure,
    utility=None,
    x0: float = 1.0,
    tol: float = 1e-9,
) -> dict:
    """Check the viability value bound under the capped measure.

    Requires the underlying q to be the terminal restriction of a
    martingale density for the market; the optimal utility value under
    Z_delta must then stay below U(x0 / (delta * E[q_delta])) + tol.
    """
    from .utility import log_utility, maximize_utility

    utility = utility or log_utility()
    base = density_from_leaf_values(m.tree, dm.q)
    resid = price_martingale_residual(m, base)
    if resid > 1e-9:
        raise ValueError(
            f"q is not a martingale-density transform of this market "
            f"(price residual {resid!r})"
        )
    res = maximize_utility(m, utility, x0, measure=dm.density)
    if res.status != "ok":
        raise ValueError("market admits arbitrage; the bound presumes a density")
    cap = x0 / (dm.delta * dm.e_q_delta)
    bound = float(utility.value(cap))
    return {
        "passed": bool(res.value <= bound + tol),
        "value": res.value,
        "bound": bound,
        "wealth_cap": cap,
        "delta": dm.delta,
        "e_q_delta": dm.e_q_delta,
        "q_residual": resid,
        "tol": tol,
    }
