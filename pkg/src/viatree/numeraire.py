"""Numeraire (growth-optimal) portfolio on event-tree markets.

At each internal node the growth-optimal fractions maximize the expected
one-step log growth  f(pi) = sum_j p_j log(1 + pi . R_j)  over the open
polytope where every wealth factor stays positive.  Under no-arbitrage
the maximizer exists and satisfies the first-order condition
E[R / (1 + pi . R)] = 0, which is exactly the numeraire property: the
wealth of any admissible strategy divided by the candidate's wealth is a
supermartingale (with equality one step at a time when the condition
holds exactly, so complete binary nodes exhibit true martingale ratios).

The optional-stopping form of that statement needs no separate machinery
on a finite tree: the one-step inequalities glue along any stopping-time
cut, which is what ``verify_numeraire`` samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arbitrage import NaCertificate, check_na
from .markets import (
    FractionStrategy,
    MarketModel,
    UnitStrategy,
    WealthProcess,
    wealth_from_fractions,
    wealth_from_units,
)
from .trees import EventTree, StoppingTime

FOC_TOL = 1e-10
RATIO_TOL = 1e-8
DEFLATOR_TOL = 1e-10


def node_log_optimal(
    returns,
    probs,
    tol: float = FOC_TOL,
    max_iter: int = 200,
) -> tuple[np.ndarray, float, int]:
    """Damped Newton for the one-step log-growth problem.

    Starts at pi = 0 and backtracks to keep every factor 1 + pi . R_j
    strictly positive.  Singular Hessians (redundant assets) fall back to
    the least-norm Newton step, so the returned maximizer is the minimal
    one.  Returns (pi, sup-norm of the gradient, iterations).
    """
    R = np.atleast_2d(np.asarray(returns, dtype=np.float64))
    p = np.asarray(probs, dtype=np.float64)
    k, d = R.shape
    pi = np.zeros(d)
    if np.max(np.abs(R)) < 1e-12:
        return pi, 0.0, 0

    def value(x):
        g = 1.0 + R @ x
        if np.any(g <= 0.0):
            return -np.inf
        return float(p @ np.log(g))

    f = value(pi)
    it = 0
    for it in range(1, max_iter + 1):
        g = 1.0 + R @ pi
        grad = (p / g) @ R
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < tol:
            # polish with full Newton steps while the gradient still drops;
            # quadratic convergence puts it near machine precision, so
            # downstream one-step ratio identities hold to ~1e-13
            for _ in range(3):
                if gnorm == 0.0:
                    break
                H = (R.T * (p / g**2)) @ R
                step, *_ = np.linalg.lstsq(H, grad, rcond=None)
                cand = pi + step
                gc = 1.0 + R @ cand
                if not np.all(gc > 0.0):
                    break
                grad_c = (p / gc) @ R
                gn_c = float(np.max(np.abs(grad_c)))
                if gn_c >= gnorm:
                    break
                pi, g, grad, gnorm = cand, gc, grad_c, gn_c
            return pi, gnorm, it - 1
        H = (R.T * (p / g**2)) @ R  # negated Hessian, positive semidefinite
        step, *_ = np.linalg.lstsq(H, grad, rcond=None)
        slope = float(grad @ step)
        if slope <= 0.0:  # numerically null direction; nudge along gradient
            step = grad
            slope = float(grad @ grad)
        t = 1.0
        moved = False
        while t > 1e-14:
            cand = pi + t * step
            gc = 1.0 + R @ cand
            if np.all(gc > 0.0):
                fc = float(p @ np.log(gc))
                gn_c = float(np.max(np.abs((p / gc) @ R)))
                # Armijo, or plain gradient contraction: near the optimum the
                # objective is flat to machine precision while Newton still
                # shrinks the gradient quadratically.
                if fc > f + 1e-4 * t * slope or gn_c <= 0.9 * gnorm:
                    pi = cand
                    f = fc
                    moved = True
                    break
            t *= 0.5
        if not moved:
            # no admissible improvement left at this scale
            return pi, gnorm, it
    g = 1.0 + R @ pi
    grad = (p / g) @ R
    gnorm = float(np.max(np.abs(grad)))
    if gnorm >= tol:
        raise RuntimeError(
            f"log-growth Newton did not reach gradient {tol} "
            f"(residual {gnorm}); is the node arbitrage-free?"
        )
    return pi, gnorm, it


@dataclass
class NumeraireSolution:
    status: str  # "ok" | "arbitrage"
    fractions: FractionStrategy | None = None
    wealth: WealthProcess | None = None
    foc_sup: float | None = None
    node_gradients: dict = field(default_factory=dict)
    log_growth: float | None = None
    certificate: NaCertificate | None = None


def numeraire_portfolio(m: MarketModel, x0: float = 1.0) -> NumeraireSolution:
    """Growth-optimal fractions, wealth and per-node FOC residuals.

    Fractions do not depend on x0 and wealth is exactly linear in it (the
    cumulative growth factors are accumulated once).  On an arbitrage
    market there is no numeraire portfolio; the arbitrage certificate is
    returned instead.
    """
    if x0 <= 0.0:
        raise ValueError(f"initial capital must be positive, got {x0!r}")
    cert = check_na(m)
    if cert.verdict != "NA":
        return NumeraireSolution(status="arbitrage", certificate=cert)
    t = m.tree
    fr = np.zeros_like(m.prices)
    gradients: dict[int, float] = {}
    for v in t.internal:
        pi, gnorm, _ = node_log_optimal(
            m.simple_returns(v), t.branch_prob[t.children[v]]
        )
        fr[v] = pi
        gradients[int(v)] = gnorm
    strategy = FractionStrategy(fractions=fr)
    wealth = wealth_from_fractions(m, strategy, x0)
    p_leaf = t.unconditional_probs()[t.leaves]
    log_growth = float(p_leaf @ np.log(wealth.terminal(t) / x0))
    return NumeraireSolution(
        status="ok",
        fractions=strategy,
        wealth=wealth,
        foc_sup=max(gradients.values(), default=0.0),
        node_gradients=gradients,
        log_growth=log_growth,
        certificate=cert,
    )


def sample_feasible_fractions(
    m: MarketModel, rng: np.random.Generator, box: float = 2.0, margin: float = 1e-6
) -> FractionStrategy:
    """Uniform box draw per node, halved until all wealth factors clear
    the positivity margin."""
    t = m.tree
    fr = np.zeros_like(m.prices)
    for v in t.internal:
        R = m.simple_returns(v)
        pi = rng.uniform(-box, box, size=m.d)
        while np.min(1.0 + R @ pi) < margin:
            pi *= 0.5
        fr[v] = pi
    return FractionStrategy(fractions=fr)


def random_stopping_time(
    tree: EventTree, rng: np.random.Generator, stop_prob: float = 0.35
) -> StoppingTime:
    """A random cut: walk from the root, stopping each branch independently."""
    cut = []
    stack = [0]
    while stack:
        v = stack.pop()
        kids = tree.children[v]
        if kids.size == 0 or (v != 0 and rng.random() < stop_prob):
            cut.append(v)
        else:
            stack.extend(int(c) for c in kids)
    return StoppingTime.of(tree, cut)


def verify_numeraire(
    m: MarketModel,
    candidate: WealthProcess,
    strategies=None,
    n_strategies: int = 100,
    seed: int = 0,
    tol: float = RATIO_TOL,
    n_cuts: int = 3,
) -> dict:
    """Check the defining supermartingale property of a candidate numeraire.

    For each test strategy W and every internal node v the one-step ratio
    expectation E[W(child)/N(child) | v] must not exceed W(v)/N(v) + tol.
    Three random stopping-time cuts check the optional-stopping form, and
    binary nodes are additionally held to the martingale equality.
    """
    t = m.tree
    if np.any(candidate.values <= 0.0):
        raise ValueError("candidate numeraire wealth must be strictly positive")
    rng = np.random.default_rng(seed)
    if strategies is None:
        strategies = [
            sample_feasible_fractions(m, rng) for _ in range(n_strategies)
        ]
    ratio_excess = -np.inf  # max of E[ratio|v] - ratio(v); <= tol required
    binary_gap = 0.0
    p = t.unconditional_probs()
    cuts = [random_stopping_time(t, rng) for _ in range(n_cuts)]
    cut_rows = []
    cut_excess = -np.inf
    for s in strategies:
        w = (
            wealth_from_fractions(m, s, candidate.x0)
            if isinstance(s, FractionStrategy)
            else wealth_from_units(m, s, candidate.x0)
        )
        ratio = w.values / candidate.values
        for v in t.internal:
            kids = t.children[v]
            gap = float(t.branch_prob[kids] @ ratio[kids]) - ratio[v]
            ratio_excess = max(ratio_excess, gap)
            if kids.size == 2:
                binary_gap = max(binary_gap, abs(gap))
        for cut in cuts:
            ev = float(sum(p[v] * ratio[v] for v in cut.nodes))
            cut_excess = max(cut_excess, ev - ratio[0])
    for cut in cuts:
        cut_rows.append({"cut": list(cut.nodes)})
    passed = ratio_excess <= tol and cut_excess <= tol
    return {
        "passed": bool(passed),
        "worst_ratio_excess": float(ratio_excess),
        "binary_martingale_gap": float(binary_gap),
        "worst_cut_excess": float(cut_excess),
        "cuts": cut_rows,
        "n_strategies": len(strategies),
        "tol": tol,
    }


def deflator_probe(
    m: MarketModel,
    candidate: WealthProcess,
    n: int = 200,
    seed: int = 0,
    tol: float = RATIO_TOL,
) -> dict:
    """Probe the deflator x0 / N against sampled admissible wealths.

    Samples unit strategies, scales each so its wealth from x0 stays
    nonnegative, and checks E[W_T * x0 / N_T] <= x0 + tol.  Also reports
    E[x0 / N_T] itself, which cannot exceed 1 + 1e-10.
    """
    t = m.tree
    if np.any(candidate.values <= 0.0):
        raise ValueError("candidate numeraire wealth must be strictly positive")
    x0 = candidate.x0
    rng = np.random.default_rng(seed)
    p_leaf = t.unconditional_probs()[t.leaves]
    defl_T = x0 / candidate.terminal(t)
    base = float(p_leaf @ defl_T)
    worst = -np.inf
    for _ in range(n):
        h = np.zeros_like(m.prices)
        h[t.internal] = rng.standard_normal((t.internal.size, m.d))
        gains = wealth_from_units(m, UnitStrategy(holdings=h), 0.0).values
        low = float(gains.min())
        if low < 0.0:
            h *= x0 / (-low)
        w = wealth_from_units(m, UnitStrategy(holdings=h), x0)
        ev = float(p_leaf @ (w.terminal(t) * defl_T))
        worst = max(worst, ev - x0)
    passed = worst <= tol and base <= 1.0 + DEFLATOR_TOL
    return {
        "passed": bool(passed),
        "deflator_expectation": base,
        "worst_excess": float(worst),
        "n": n,
        "tol": tol,
    }
