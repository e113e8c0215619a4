"""No-arbitrage decisions, martingale densities and arbitrage certificates.

On a finite leveled event tree, absence of arbitrage is equivalent to a
per-node one-period condition: at every internal node the origin must lie
in the relative interior of the convex hull of the outgoing price
increments.  That condition is decided by a small LP per node,

    maximize  eps   s.t.  sum_j q_j dS_j = 0 (per asset),
                          sum_j q_j = 1,  q_j >= eps,

whose optimum eps* is strictly positive exactly when an interior
martingale weight vector q exists.  Gluing the per-node weights
multiplicatively yields an equivalent martingale measure; on failure the
LP dual supplies a separating vector H with H.dS_j >= 0 for all branches
and > 0 for at least one, which lifts to a one-period arbitrage strategy.

Every verdict ships with a replayable certificate: the density's
martingale residuals on the NA side, the strategy's terminal gains on the
arbitrage side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .markets import (
    DensityProcess,
    MarketModel,
    UnitStrategy,
    price_martingale_residual,
    wealth_from_units,
)
from .simplex import solve_lp

DEGENERATE_TOL = 1e-12
EPS_POSITIVE_TOL = 1e-9
AMBIGUITY_BAND = 1e-9
EMM_RESIDUAL_TOL = 1e-9


class ArbitrageError(RuntimeError):
    """Raised by operations that require an arbitrage-free market."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


@dataclass
class NodeNaResult:
    eps_star: float
    q: np.ndarray | None = None  # interior one-step martingale weights
    separating: np.ndarray | None = None  # H with H.dS_j >= 0, some > 0
    degenerate: bool = False
    note: str = ""

    @property
    def is_na(self) -> bool:
        return self.q is not None


def _max_slack_lp(inc: np.ndarray):
    """LP data for max eps s.t. sum q_j dS_j = 0, sum q_j = 1, q_j >= eps.

    Substituting r_j = q_j - eps >= 0 and splitting eps = e+ - e- gives an
    equality-form LP in (r, e+, e-) >= 0.
    """
    k, d = inc.shape
    sigma = inc.sum(axis=0)  # column sums of increments
    A = np.zeros((d + 1, k + 2))
    A[:d, :k] = inc.T
    A[:d, k] = sigma
    A[:d, k + 1] = -sigma
    A[d, :k] = 1.0
    A[d, k] = k
    A[d, k + 1] = -k
    b = np.zeros(d + 1)
    b[d] = 1.0
    c = np.zeros(k + 2)
    c[k] = -1.0
    c[k + 1] = 1.0
    return A, b, c


def _separating_vector(inc: np.ndarray) -> tuple[np.ndarray | None, float]:
    """Best-effort separating vector via  max sum_j H.dS_j  s.t.
    H.dS_j >= 0 for all j and |H_i| <= 1.  The box keeps the LP bounded;
    a positive optimum certifies one-period arbitrage."""
    k, d = inc.shape
    # variables: h+ (d), h- (d), s (k slacks), u+ (d), u- (d)
    n = 2 * d + k + 2 * d
    A = np.zeros((k + 2 * d, n))
    A[:k, :d] = inc
    A[:k, d : 2 * d] = -inc
    A[:k, 2 * d : 2 * d + k] = -np.eye(k)
    A[k : k + d, :d] = np.eye(d)
    A[k : k + d, 2 * d + k : 3 * d + k] = np.eye(d)
    A[k + d :, d : 2 * d] = np.eye(d)
    A[k + d :, 3 * d + k :] = np.eye(d)
    b = np.concatenate([np.zeros(k), np.ones(2 * d)])
    gain_sum = inc.sum(axis=0)
    c = np.zeros(n)
    c[:d] = -gain_sum
    c[d : 2 * d] = gain_sum
    res = solve_lp(A, b, c)
    if res.status != "optimal":
        return None, 0.0
    h = res.x[:d] - res.x[d : 2 * d]
    return h, float(-res.objective)


def node_na_lp(
    increments,
    branch_probs,
    tol_pos: float = EPS_POSITIVE_TOL,
) -> NodeNaResult:
    """Decide one-period no-arbitrage for the increments out of one node.

    Returns interior weights q when eps* > tol_pos; otherwise a separating
    vector.  A fully degenerate node (all increments below 1e-12 in sup
    norm) keeps the physical branch probabilities as its weights, so a
    constant market gets the density that is identically one.
    """
    inc = np.atleast_2d(np.asarray(increments, dtype=np.float64))
    bp = np.asarray(branch_probs, dtype=np.float64)
    k = inc.shape[0]
    if bp.shape != (k,):
        raise ValueError(f"expected {k} branch probabilities, got {bp.shape}")

    if np.max(np.abs(inc)) < DEGENERATE_TOL:
        return NodeNaResult(
            eps_star=float(bp.min()), q=bp.copy(), degenerate=True,
            note="degenerate node: all increments ~ 0",
        )

    A, b, c = _max_slack_lp(inc)
    res = solve_lp(A, b, c)
    if res.status == "optimal":
        eps = float(res.x[k] - res.x[k + 1])
        if abs(eps) < AMBIGUITY_BAND:
            res = solve_lp(A, b, c, tol=1e-13)  # re-solve in the ambiguity band
            if res.status == "optimal":
                eps = float(res.x[k] - res.x[k + 1])
        if res.status == "optimal" and eps > tol_pos:
            q = res.x[:k] + eps
            q = _project_weights(inc, q)
            return NodeNaResult(eps_star=eps, q=q)
        sep, gain = _separating_vector(inc)
        return NodeNaResult(
            eps_star=eps if res.status == "optimal" else -np.inf,
            separating=sep,
            note=f"max-slack eps*={eps!r}; separating gain sum {gain!r}",
        )
    # No q at all solves the moment system: strong arbitrage. The phase-1
    # Farkas dual certifies it, but report the polished vector from the
    # separating LP.
    sep, gain = _separating_vector(inc)
    return NodeNaResult(
        eps_star=-np.inf,
        separating=sep,
        note=f"moment system infeasible; separating gain sum {gain!r}",
    )


def _project_weights(inc: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Least-norm correction of q onto {q: inc.T q = 0, sum q = 1}."""
    k = inc.shape[0]
    M = np.vstack([inc.T, np.ones((1, k))])
    target = np.zeros(M.shape[0])
    target[-1] = 1.0
    resid = M @ q - target
    corr, *_ = np.linalg.lstsq(M, resid, rcond=None)
    out = q - corr
    return out if np.all(out > 0.0) else q


@dataclass
class NaCertificate:
    """Replayable outcome of the global no-arbitrage decision."""

    verdict: str  # "NA" | "ARBITRAGE"
    density: DensityProcess | None = None
    emm_residual: float | None = None
    node_eps: dict = field(default_factory=dict)
    fail_node: int | None = None
    strategy: UnitStrategy | None = None
    replay: dict = field(default_factory=dict)


def check_na(m: MarketModel, tol_pos: float = EPS_POSITIVE_TOL) -> NaCertificate:
    """Global no-arbitrage decision with a glued EMM or a lifted strategy.

    Internal nodes are scanned breadth-first; the first failing node (if
    any) supplies the separating vector, lifted to a one-period unit
    strategy that is zero elsewhere.
    """
    t = m.tree
    node_eps: dict[int, float] = {}
    weights: dict[int, np.ndarray] = {}
    for v in t.internal:
        r = node_na_lp(m.increments(v), t.branch_prob[t.children[v]], tol_pos)
        node_eps[int(v)] = r.eps_star
        if not r.is_na:
            strategy = _lift_separating(m, int(v), r.separating)
            replay = _replay_arbitrage(m, strategy)
            return NaCertificate(
                verdict="ARBITRAGE",
                node_eps=node_eps,
                fail_node=int(v),
                strategy=strategy,
                replay=replay,
            )
        weights[int(v)] = r.q

    z = np.ones(t.n_nodes)
    for v in t.internal:
        kids = t.children[v]
        z[kids] = z[v] * weights[int(v)] / t.branch_prob[kids]
    density = DensityProcess(z=z)
    return NaCertificate(
        verdict="NA",
        density=density,
        emm_residual=price_martingale_residual(m, density),
        node_eps=node_eps,
    )


def _lift_separating(m: MarketModel, node: int, h: np.ndarray) -> UnitStrategy:
    holdings = np.zeros_like(m.prices)
    holdings[node] = h
    return UnitStrategy(holdings=holdings)


def _replay_arbitrage(m: MarketModel, s: UnitStrategy) -> dict:
    """Run the certificate from zero initial capital and summarize gains."""
    w = wealth_from_units(m, s, 0.0)
    gains = w.terminal(m.tree)
    p = m.tree.unconditional_probs()[m.tree.leaves]
    return {
        "min_gain": float(gains.min()),
        "max_gain": float(gains.max()),
        "prob_positive": float(p[gains > 0.0].sum()),
        "expected_gain": float(p @ gains),
    }


def find_emm(m: MarketModel, tol_pos: float = EPS_POSITIVE_TOL) -> DensityProcess | None:
    """The glued interior martingale density, or None under arbitrage."""
    cert = check_na(m, tol_pos)
    return cert.density if cert.verdict == "NA" else None


@dataclass
class SigmaDensityResult:
    density: DensityProcess | None
    phi: float = 1.0
    note: str = (
        "on a finite tree every sigma-martingale density is a martingale "
        "density: the integrand phi can be taken identically 1"
    )


def find_sigma_density(m: MarketModel) -> SigmaDensityResult:
    """Sigma-martingale density search; collapses to find_emm on trees."""
    return SigmaDensityResult(density=find_emm(m))


@dataclass
class NupbrResult:
    verdict: str  # "NUPBR" | "NO-NUPBR"
    explanation: str
    certificate: NaCertificate


def check_nupbr(m: MarketModel) -> NupbrResult:
    """Decide NUPBR via existence of a local martingale density.

    On a finite tree local martingale densities and martingale densities
    coincide, so the decision reduces to the same per-node LP sweep used
    for no-arbitrage; NUPBR holds iff that density set is non-empty.
    """
    cert = check_na(m)
    if cert.verdict == "NA":
        return NupbrResult(
            verdict="NUPBR",
            explanation=(
                "a strictly positive martingale density exists (glued from "
                "per-node interior weights), hence no unbounded profit with "
                "bounded risk"
            ),
            certificate=cert,
        )
    return NupbrResult(
        verdict="NO-NUPBR",
        explanation=(
            "no local martingale density exists on a finite tree once a node "
            "admits a separating vector; the lifted one-period strategy "
            "scales to unbounded profit with bounded risk"
        ),
        certificate=cert,
    )


def empirical_boundedness_probe(
    m: MarketModel,
    n_strategies: int = 200,
    seed: int = 0,
    x0: float = 1.0,
) -> dict:
    """Quantiles of terminal wealth over random admissible strategies.

    Draws unit strategies with standard normal holdings, scales each so the
    wealth from ``x0`` stays nonnegative at every node, and pools the
    terminal values (weighted by leaf probability).  The probe is
    diagnostic only: a bounded-looking table is evidence, not a proof of
    NUPBR, which is why the decision procedure is the LP sweep.
    """
    t = m.tree
    rng = np.random.default_rng(seed)
    p_leaf = t.unconditional_probs()[t.leaves]
    pooled_vals = []
    pooled_wts = []
    scaled = 0
    for _ in range(n_strategies):
        h = np.zeros_like(m.prices)
        h[t.internal] = rng.standard_normal((t.internal.size, m.d))
        gains = wealth_from_units(m, UnitStrategy(holdings=h), 0.0).values
        worst = float(gains.min())
        if worst < 0.0:
            h *= x0 / (-worst)
            scaled += 1
        w = wealth_from_units(m, UnitStrategy(holdings=h), x0)
        pooled_vals.append(w.terminal(t))
        pooled_wts.append(p_leaf / n_strategies)
    vals = np.concatenate(pooled_vals)
    wts = np.concatenate(pooled_wts)
    order = np.argsort(vals)
    vals = vals[order]
    cum = np.cumsum(wts[order])
    cum /= cum[-1]
    quantiles = {
        q: float(vals[np.searchsorted(cum, q, side="left")])
        for q in (0.5, 0.9, 0.99)
    }
    return {
        "n_strategies": n_strategies,
        "seed": seed,
        "x0": x0,
        "quantiles": quantiles,
        "max_observed": float(vals.max()),
        "strategies_scaled": scaled,
        "note": "diagnostic probe; the LP sweep is the decision procedure",
    }
