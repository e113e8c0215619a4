"""Discounted market models on event trees, strategies, wealth and densities.

Prices are already discounted (there is no bank-account column), so
martingale statements are about the price vectors themselves.  A trading
strategy is predictable by construction: holdings or fractions are chosen
at a node and applied over its outgoing edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trees import EventTree, StoppingTime

SELF_FINANCING_TOL = 1e-12
MARTINGALE_FLAG_TOL = 1e-12


@dataclass
class MarketModel:
    """A d-asset discounted market on a leveled event tree."""

    tree: EventTree
    prices: np.ndarray  # shape (n_nodes, d)
    label: str = ""

    def __post_init__(self):
        self.prices = np.atleast_2d(np.asarray(self.prices, dtype=np.float64))
        if self.prices.shape[0] != self.tree.n_nodes:
            raise ValueError(
                f"prices has {self.prices.shape[0]} rows for "
                f"{self.tree.n_nodes} nodes"
            )
        if self.prices.shape[1] < 1:
            raise ValueError("market needs at least one asset")

    @property
    def d(self) -> int:
        return self.prices.shape[1]

    def increments(self, v: int) -> np.ndarray:
        """Price increments S(child) - S(v), one row per child of v."""
        kids = self.tree.children[v]
        return self.prices[kids] - self.prices[v]

    def simple_returns(self, v: int) -> np.ndarray:
        """Componentwise simple returns over the edges out of v."""
        base = self.prices[v]
        if np.any(base == 0.0):
            raise ValueError(
                f"simple returns undefined at node {v}: a price component is 0"
            )
        return self.increments(v) / base


def validate_market(m: MarketModel) -> list[str]:
    """Collect rule violations; an empty list means the market is valid."""
    problems = []
    if not np.all(np.isfinite(m.prices)):
        problems.append("prices contain NaN or infinity")
    if m.prices.shape[1] < 1:
        problems.append("market has no assets")
    # Tree-level invariants are enforced by EventTree's constructor; re-run
    # the probability sums here so a mutated tree is still caught.
    for v in m.tree.internal:
        s = m.tree.branch_prob[m.tree.children[v]].sum()
        if abs(s - 1.0) > 1e-12:
            problems.append(f"branch probabilities at node {v} sum to {s!r}")
    return problems


@dataclass
class UnitStrategy:
    """Holdings in units of each asset, chosen per internal node."""

    holdings: np.ndarray  # shape (n_nodes, d); rows at leaves are unused

    def __post_init__(self):
        self.holdings = np.atleast_2d(np.asarray(self.holdings, dtype=np.float64))


@dataclass
class FractionStrategy:
    """Wealth fractions invested in each asset, chosen per internal node."""

    fractions: np.ndarray  # shape (n_nodes, d); rows at leaves are unused

    def __post_init__(self):
        self.fractions = np.atleast_2d(np.asarray(self.fractions, dtype=np.float64))


@dataclass
class WealthProcess:
    x0: float
    values: np.ndarray  # shape (n_nodes,)

    def terminal(self, tree: EventTree) -> np.ndarray:
        return self.values[tree.leaves]


@dataclass
class DensityProcess:
    """Strictly positive density process with z(root) = 1."""

    z: np.ndarray  # shape (n_nodes,)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 1:
            raise ValueError("density values must be a flat per-node array")
        if self.z[0] != 1.0:
            raise ValueError(f"density must start at 1, got z(root)={self.z[0]!r}")
        if not np.all(np.isfinite(self.z)):
            bad = int(np.flatnonzero(~np.isfinite(self.z))[0])
            raise ValueError(f"density value at node {bad} is not finite")
        if np.any(self.z <= 0.0):
            bad = int(np.flatnonzero(self.z <= 0.0)[0])
            raise ValueError(
                f"density must be strictly positive; node {bad} has z={self.z[bad]!r}"
            )

    def martingale_residual(self, tree: EventTree) -> float:
        """sup over internal nodes of |E[z(child) | node] - z(node)|."""
        worst = 0.0
        for v in tree.internal:
            kids = tree.children[v]
            r = abs(float(tree.branch_prob[kids] @ self.z[kids]) - self.z[v])
            worst = max(worst, r)
        return worst

    def is_martingale(self, tree: EventTree, tol: float = MARTINGALE_FLAG_TOL) -> bool:
        return self.martingale_residual(tree) <= tol

    def expectation_at(self, tree: EventTree, cut: StoppingTime) -> float:
        """E[z at the cut]; equals 1 for martingale densities (optional stopping)."""
        p = tree.unconditional_probs()
        return float(sum(p[v] * self.z[v] for v in cut.nodes))

    def step_weights(self, tree: EventTree, v: int) -> np.ndarray:
        """One-step reweighted probabilities branch_prob * z(child)/z(node)."""
        kids = tree.children[v]
        return tree.branch_prob[kids] * self.z[kids] / self.z[v]


def wealth_from_units(m: MarketModel, s: UnitStrategy, x0: float) -> WealthProcess:
    """Self-financing wealth W(child) = W(node) + holdings(node) . dS."""
    h = s.holdings
    if h.shape != m.prices.shape:
        raise ValueError(
            f"holdings shape {h.shape} does not match prices {m.prices.shape}"
        )
    t = m.tree
    w = np.empty(t.n_nodes)
    w[0] = x0
    for v in t.internal:
        kids = t.children[v]
        w[kids] = w[v] + (m.prices[kids] - m.prices[v]) @ h[v]
    return WealthProcess(x0=float(x0), values=w)


def wealth_from_fractions(m: MarketModel, s: FractionStrategy, x0: float) -> WealthProcess:
    """Multiplicative wealth with one-step factor 1 + fractions . returns.

    The cumulative factor is accumulated once and scaled by ``x0`` at the
    end, so rescaling the initial capital rescales wealth with a single
    multiplication per node.
    """
    f = s.fractions
    if f.shape != m.prices.shape:
        raise ValueError(
            f"fractions shape {f.shape} does not match prices {m.prices.shape}"
        )
    t = m.tree
    growth = np.empty(t.n_nodes)
    growth[0] = 1.0
    for v in t.internal:
        kids = t.children[v]
        step = 1.0 + m.simple_returns(v) @ f[v]
        if np.any(step <= 0.0):
            j = kids[int(np.argmin(step))]
            raise ValueError(
                f"fraction strategy infeasible: wealth factor {step.min()!r} <= 0 "
                f"on edge {v} -> {j}"
            )
        growth[kids] = growth[v] * step
    return WealthProcess(x0=float(x0), values=x0 * growth)


def self_financing_residual(m: MarketModel, s: UnitStrategy, w: WealthProcess) -> float:
    """sup over edges of |dW - holdings . dS| for a unit-strategy wealth."""
    t = m.tree
    worst = 0.0
    for v in t.internal:
        kids = t.children[v]
        gains = (m.prices[kids] - m.prices[v]) @ s.holdings[v]
        r = np.max(np.abs(w.values[kids] - w.values[v] - gains))
        worst = max(worst, float(r))
    return worst


def price_martingale_residual(m: MarketModel, dp: DensityProcess) -> float:
    """sup over internal nodes and assets of the one-step density-weighted
    price increment |E[(z(child)/z(node)) dS | node]|."""
    t = m.tree
    worst = 0.0
    for v in t.internal:
        kids = t.children[v]
        wts = t.branch_prob[kids] * dp.z[kids] / dp.z[v]
        r = np.max(np.abs(wts @ (m.prices[kids] - m.prices[v])))
        worst = max(worst, float(r))
    return worst


def density_from_leaf_values(tree: EventTree, leaf_z: np.ndarray) -> DensityProcess:
    """Extend strictly positive leaf density values to a full density process
    by one-step conditional expectations (so the result is a martingale)."""
    leaf_z = np.asarray(leaf_z, dtype=np.float64)
    if leaf_z.shape != (tree.leaves.size,):
        raise ValueError(
            f"expected {tree.leaves.size} leaf values, got shape {leaf_z.shape}"
        )
    if np.any(leaf_z <= 0.0) or not np.all(np.isfinite(leaf_z)):
        raise ValueError("leaf density values must be finite and strictly positive")
    z = np.empty(tree.n_nodes)
    z[tree.leaves] = leaf_z
    for v in range(tree.n_nodes - 1, -1, -1):
        kids = tree.children[v]
        if kids.size:
            z[v] = float(tree.branch_prob[kids] @ z[kids])
    if abs(z[0] - 1.0) > 1e-9:
        raise ValueError(
            f"leaf values do not aggregate to a density: E[z_T] = {z[0]!r} != 1"
        )
    z[0] = 1.0
    return DensityProcess(z=z)
