"""Expected-utility maximization on tree markets and the viability suite.

Log and power (CRRA) utilities factor the dynamic program: the value
function separates into a wealth term and per-node coefficients, so the
optimal fractions solve one smooth concave problem per internal node.
General utilities lose that separation and are solved as a single concave
program over unit holdings at every internal node, with wealth kept
strictly positive (under no-arbitrage the optimum is interior, because
infinite marginal utility at zero wealth repels the boundary).

"No solution" is not a numerical condition: it happens exactly when the
market admits arbitrage, and the returned result then carries the
arbitrage certificate instead of a strategy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arbitrage import NaCertificate, check_na, find_sigma_density
from .markets import (
    DensityProcess,
    FractionStrategy,
    MarketModel,
    UnitStrategy,
    WealthProcess,
    wealth_from_fractions,
    wealth_from_units,
)
from .numeraire import node_log_optimal

FOC_TOL = 1e-10
CUSTOM_GRAD_TOL = 1e-8
PROBE_GRID = np.logspace(-8.0, 8.0, 65)


@dataclass
class UtilityFunction:
    """A utility on (0, infinity): strictly increasing, strictly concave,
    with infinite marginal utility at 0 and vanishing marginal utility at
    infinity (certified numerically for custom instances)."""

    kind: str  # "log" | "crra" | "custom"
    gamma: float | None = None
    _u: object = None
    _du: object = None
    _d2u: object = None
    name: str = ""

    def value(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "log":
            return np.log(x)
        if self.kind == "crra":
            g = self.gamma
            return x ** (1.0 - g) / (1.0 - g)
        return self._u(x)

    def marginal(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "log":
            return 1.0 / x
        if self.kind == "crra":
            return x ** (-self.gamma)
        return self._du(x)

    def second(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "log":
            return -1.0 / x**2
        if self.kind == "crra":
            return -self.gamma * x ** (-self.gamma - 1.0)
        if self._d2u is not None:
            return self._d2u(x)
        h = 1e-6 * np.maximum(x, 1e-6)
        return (self._du(x + h) - self._du(x - h)) / (2.0 * h)

    def certify(self) -> dict:
        """Numerical certificate on a log-spaced probe grid.

        Checks monotonicity, concavity (decreasing marginals), the Inada
        trends at both ends, and the tail elasticity x u'(x)/u(x) < 1
        (evaluated where u > 0).
        """
        x = PROBE_GRID
        u = np.asarray(self.value(x), dtype=np.float64)
        du = np.asarray(self.marginal(x), dtype=np.float64)
        finite = bool(np.all(np.isfinite(u)) and np.all(np.isfinite(du)))
        increasing = finite and bool(np.all(np.diff(u) > 0.0))
        concave = finite and bool(np.all(du > 0.0) and np.all(np.diff(du) < 0.0))
        # Inada trends: marginals blow up toward 0 and die out toward infinity.
        mid = du[x.searchsorted(1.0)]
        inada_zero = finite and bool(du[0] > du[8] > mid)
        inada_inf = finite and bool(du[-1] < du[-9] < mid)
        tail = x >= 100.0
        pos = tail & (u > 0.0)
        if np.any(pos):
            elasticity = float(np.max(x[pos] * du[pos] / u[pos]))
        else:
            elasticity = float("-inf")  # utility nonpositive on the tail
        elastic_ok = elasticity < 1.0
        passed = increasing and concave and inada_zero and inada_inf and elastic_ok
        return {
            "kind": self.kind,
            "finite": finite,
            "increasing": increasing,
            "concave": concave,
            "inada_zero": inada_zero,
            "inada_infinity": inada_inf,
            "tail_elasticity": elasticity,
            "elasticity_ok": bool(elastic_ok),
            "passed": bool(passed),
        }


def log_utility() -> UtilityFunction:
    return UtilityFunction(kind="log", name="log")


def crra_utility(gamma: float) -> UtilityFunction:
    if gamma <= 0.0 or gamma == 1.0:
        raise ValueError(
            f"CRRA exponent must be positive and different from 1, got {gamma!r}"
        )
    return UtilityFunction(kind="crra", gamma=float(gamma), name=f"crra({gamma})")


def custom_utility(u, du, d2u=None, name: str = "custom") -> UtilityFunction:
    return UtilityFunction(kind="custom", _u=u, _du=du, _d2u=d2u, name=name)


def node_power_optimal(
    returns,
    weights,
    gamma: float,
    tol: float = FOC_TOL,
    max_iter: int = 200,
):
    """Maximize sum_j a_j (1 + pi . R_j)^(1-gamma) over feasible fractions.

    The continuation weights ``a_j`` share the sign of 1/(1-gamma), which
    makes the objective concave for every admissible gamma.  Returns
    (pi, objective at the optimum in the original scale, gradient sup
    norm, iterations).
    """
    R = np.atleast_2d(np.asarray(returns, dtype=np.float64))
    a = np.asarray(weights, dtype=np.float64)
    k, d = R.shape
    scale = float(np.sum(np.abs(a)))
    if scale == 0.0:
        raise ValueError("continuation weights are all zero")
    ah = a / scale
    one_m_g = 1.0 - gamma
    pi = np.zeros(d)
    if np.max(np.abs(R)) < 1e-12:
        return pi, float(np.sum(a)), 0.0, 0

    def phi_grad(x):
        g = 1.0 + R @ x
        if np.any(g <= 0.0):
            return -np.inf, None, None
        pw = g**one_m_g
        val = float(ah @ pw)
        grad = one_m_g * ((ah * g ** (-gamma)) @ R)
        return val, grad, g

    f, grad, g = phi_grad(pi)
    gnorm = float(np.max(np.abs(grad)))
    it = 0
    for it in range(1, max_iter + 1):
        if gnorm < tol:
            break
        curv = gamma * one_m_g * (ah * g ** (-gamma - 1.0))
        H = (R.T * curv) @ R  # negated Hessian; PSD for all gamma
        step, *_ = np.linalg.lstsq(H, grad, rcond=None)
        slope = float(grad @ step)
        if slope <= 0.0:
            step = grad
            slope = float(grad @ grad)
        t = 1.0
        moved = False
        while t > 1e-14:
            cand = pi + t * step
            fc, grad_c, gc = phi_grad(cand)
            if grad_c is not None:
                gn_c = float(np.max(np.abs(grad_c)))
                if fc > f + 1e-4 * t * slope or gn_c <= 0.9 * gnorm:
                    pi, f, grad, g, gnorm = cand, fc, grad_c, gc, gn_c
                    moved = True
                    break
            t *= 0.5
        if not moved:
            break
    if gnorm >= tol:
        raise RuntimeError(
            f"power-utility Newton stalled at gradient {gnorm} (target {tol})"
        )
    return pi, f * scale, gnorm, it


@dataclass
class OptimalPortfolioResult:
    status: str  # "ok" | "no-solution"
    value: float | None = None
    strategy: object = None  # FractionStrategy or UnitStrategy
    wealth: WealthProcess | None = None
    foc_residual: float | None = None
    route: str = ""
    measure_used: str = "physical"
    utility_certificate: dict | None = None
    certificate: NaCertificate | None = None  # arbitrage certificate if any


def _step_weights(m: MarketModel, measure: DensityProcess | None):
    t = m.tree
    out = {}
    for v in t.internal:
        kids = t.children[v]
        w = t.branch_prob[kids].copy()
        if measure is not None:
            w *= measure.z[kids] / measure.z[v]
        out[int(v)] = w
    return out


def maximize_utility(
    m: MarketModel,
    utility: UtilityFunction,
    x0: float = 1.0,
    measure: DensityProcess | None = None,
) -> OptimalPortfolioResult:
    """Maximize E[U(terminal wealth)] over admissible self-financing
    strategies, optionally under a reweighted (density) measure.

    Log and CRRA run the separable backward recursion; custom certified
    utilities run the concave program over unit holdings.  If the market
    admits arbitrage the problem has no solution and the certificate comes
    back instead.
    """
    if x0 <= 0.0:
        raise ValueError(f"initial capital must be positive, got {x0!r}")
    ucert = utility.certify()
    if not ucert["passed"]:
        raise ValueError(f"utility failed its numerical certificate: {ucert}")
    na = check_na(m)
    if na.verdict != "NA":
        return OptimalPortfolioResult(
            status="no-solution",
            route="arbitrage-detected",
            measure_used="density" if measure is not None else "physical",
            utility_certificate=ucert,
            certificate=na,
        )
    weights = _step_weights(m, measure)
    measure_used = "density" if measure is not None else "physical"
    if utility.kind == "log":
        res = _solve_log(m, weights, x0)
    elif utility.kind == "crra":
        res = _solve_crra(m, weights, x0, utility.gamma)
    else:
        res = _solve_custom(m, weights, x0, utility)
    res.measure_used = measure_used
    res.utility_certificate = ucert
    res.certificate = na
    return res


def _solve_log(m, weights, x0) -> OptimalPortfolioResult:
    t = m.tree
    fr = np.zeros_like(m.prices)
    offs = np.zeros(t.n_nodes)  # continuation term E[sum of log factors]
    foc = 0.0
    for v in reversed(t.internal):
        kids = t.children[v]
        w = weights[int(v)]
        pi, gnorm, _ = node_log_optimal(m.simple_returns(v), w)
        fr[v] = pi
        foc = max(foc, gnorm)
        step = np.log(1.0 + m.simple_returns(v) @ pi)
        offs[v] = float(w @ (step + offs[kids]))
    strategy = FractionStrategy(fractions=fr)
    wealth = wealth_from_fractions(m, strategy, x0)
    return OptimalPortfolioResult(
        status="ok",
        value=float(np.log(x0) + offs[0]),
        strategy=strategy,
        wealth=wealth,
        foc_residual=foc,
        route="log-recursion",
    )


def _solve_crra(m, weights, x0, gamma) -> OptimalPortfolioResult:
    t = m.tree
    fr = np.zeros_like(m.prices)
    psi = np.empty(t.n_nodes)
    psi[t.leaves] = 1.0 / (1.0 - gamma)
    foc = 0.0
    for v in reversed(t.internal):
        kids = t.children[v]
        a = weights[int(v)] * psi[kids]
        pi, val, gnorm, _ = node_power_optimal(m.simple_returns(v), a, gamma)
        fr[v] = pi
        psi[v] = val
        foc = max(foc, gnorm)
    strategy = FractionStrategy(fractions=fr)
    wealth = wealth_from_fractions(m, strategy, x0)
    return OptimalPortfolioResult(
        status="ok",
        value=float(x0 ** (1.0 - gamma) * psi[0]),
        strategy=strategy,
        wealth=wealth,
        foc_residual=foc,
        route="crra-recursion",
    )


def _leaf_gain_matrix(m: MarketModel):
    """G with one row per leaf and one column per (internal node, asset):
    G[L, (v,i)] = dS_i on the edge the path to L takes out of v."""
    t = m.tree
    cols = {int(v): j for j, v in enumerate(t.internal)}
    d = m.d
    G = np.zeros((t.leaves.size, t.internal.size * d))
    for li, leaf in enumerate(t.leaves):
        path = t.path_to(int(leaf))
        for v, c in zip(path[:-1], path[1:]):
            j = cols[int(v)]
            G[li, j * d : (j + 1) * d] = m.prices[c] - m.prices[v]
    return G


def _solve_custom(m, weights, x0, utility, tol=CUSTOM_GRAD_TOL, max_iter=300):
    t = m.tree
    # leaf weights under the chosen measure
    qw = np.ones(t.n_nodes)
    for v in t.internal:
        kids = t.children[v]
        qw[kids] = qw[v] * weights[int(v)]
    qw = qw[t.leaves]
    G = _leaf_gain_matrix(m)
    n = G.shape[1]
    theta = np.zeros(n)

    def full_wealth(th):
        h = np.zeros_like(m.prices)
        h[t.internal] = th.reshape(t.internal.size, m.d)
        return wealth_from_units(m, UnitStrategy(holdings=h), x0)

    def objective(th):
        w = full_wealth(th)
        if np.any(w.values <= 0.0):
            return -np.inf, None, None
        wl = w.values[t.leaves]
        val = float(qw @ utility.value(wl))
        grad = G.T @ (qw * utility.marginal(wl))
        return val, grad, wl

    f, grad, wl = objective(theta)
    gnorm = float(np.max(np.abs(grad)))
    for _ in range(max_iter):
        if gnorm < tol:
            break
        curv = -qw * utility.second(wl)  # positive weights
        H = (G.T * curv) @ G
        step, *_ = np.linalg.lstsq(H, grad, rcond=None)
        slope = float(grad @ step)
        if slope <= 0.0:
            step = grad
            slope = float(grad @ grad)
        ts = 1.0
        moved = False
        while ts > 1e-14:
            cand = theta + ts * step
            fc, grad_c, wl_c = objective(cand)
            if grad_c is not None:
                gn_c = float(np.max(np.abs(grad_c)))
                if fc > f + 1e-4 * ts * slope or gn_c <= 0.9 * gnorm:
                    theta, f, grad, wl, gnorm = cand, fc, grad_c, wl_c, gn_c
                    moved = True
                    break
            ts *= 0.5
        if not moved:
            break
    if gnorm >= tol:
        raise RuntimeError(
            f"custom-utility program stalled at gradient {gnorm} (target {tol})"
        )
    h = np.zeros_like(m.prices)
    h[t.internal] = theta.reshape(t.internal.size, m.d)
    strategy = UnitStrategy(holdings=h)
    wealth = full_wealth(theta)
    return OptimalPortfolioResult(
        status="ok",
        value=f,
        strategy=strategy,
        wealth=wealth,
        foc_residual=gnorm,
        route="concave-program",
    )


def viability_under_measure(
    m: MarketModel,
    x0: float = 1.0,
    utility: UtilityFunction | None = None,
    tol: float = 1e-9,
) -> dict:
    """Utility maximization under the market's own martingale density.

    Under that measure trading is worthless in expectation, so the optimal
    value cannot exceed U(x0); the report checks exactly that bound.  A
    market with arbitrage has no such density and is reported non-viable
    with the certificate.
    """
    utility = utility or log_utility()
    sd = find_sigma_density(m)
    if sd.density is None:
        cert = check_na(m)
        return {
            "viable": False,
            "reason": "arbitrage: no sigma-martingale density exists",
            "certificate": cert,
        }
    res = maximize_utility(m, utility, x0, measure=sd.density)
    bound = float(utility.value(x0))
    return {
        "viable": True,
        "value": res.value,
        "bound": bound,
        "within_bound": bool(res.value <= bound + tol),
        "tol": tol,
        "foc_residual": res.foc_residual,
    }


@dataclass
class EquivalenceConfig:
    n_markets: int = 100
    d_range: tuple = (1, 3)
    depth_range: tuple = (1, 3)
    branch_range: tuple = (2, 4)
    price_range: tuple = (0.1, 10.0)
    seed: int = 0


@dataclass
class SuiteReport:
    n_markets: int
    counts: dict
    all_agree: bool
    disagreements: list = field(default_factory=list)
    rows: list = field(default_factory=list)


def equivalence_suite(config: EquivalenceConfig) -> SuiteReport:
    """Four decision routes on random markets, checked for pairwise agreement:

    (a) log-utility maximization has a solution,
    (b) the no-arbitrage sweep accepts,
    (c) an equivalent martingale density exists,
    (d) the numeraire portfolio exists.

    Half the markets are fully random (so both verdicts occur), half are
    martingale-built and should land on the accepting side.
    """
    from .generators import random_market, random_na_market
    from .market_io import market_to_dict

    rng = np.random.default_rng(config.seed)
    counts = {"NA": 0, "ARBITRAGE": 0}
    disagreements = []
    rows = []
    for i in range(config.n_markets):
        d = int(rng.integers(config.d_range[0], config.d_range[1] + 1))
        maker = random_market if i % 2 == 0 else random_na_market
        m = maker(
            rng,
            d=d,
            depth_range=config.depth_range,
            branch_range=config.branch_range,
            price_range=config.price_range,
            label=f"suite-{i}",
        )
        log_ok = maximize_utility(m, log_utility(), 1.0).status == "ok"
        na_ok = check_na(m).verdict == "NA"
        emm_ok = find_sigma_density(m).density is not None
        from .numeraire import numeraire_portfolio

        num_ok = numeraire_portfolio(m).status == "ok"
        verdicts = {
            "log_solvable": log_ok,
            "no_arbitrage": na_ok,
            "martingale_density": emm_ok,
            "numeraire": num_ok,
        }
        agree = len({log_ok, na_ok, emm_ok, num_ok}) == 1
        counts["NA" if na_ok else "ARBITRAGE"] += 1
        rows.append({"index": i, "label": m.label, "agree": agree, **verdicts})
        if not agree:
            disagreements.append(
                {"index": i, "verdicts": verdicts, "market": market_to_dict(m)}
            )
    return SuiteReport(
        n_markets=config.n_markets,
        counts=counts,
        all_agree=not disagreements,
        disagreements=disagreements,
        rows=rows,
    )
