"""Closed-form learning-rate conditions, error bounds, and thresholds.

All formulas are expressed in terms of:

    eta_tilde = m eta / (m + v)   effective step of the averaged model
    zeta                          second largest eigenvalue magnitude of W
    tau                           communication period
    L, sigma_sq, beta             smoothness and gradient-noise constants
    f1_minus_finf                 initial optimality gap F(x_1) - F_inf

The general bound on the average squared gradient norm after K steps splits
into an optimization term that vanishes as K grows, a statistical term from
averaged gradient noise, and a network term from inter-worker disagreement:

    bound = 2 (F1 - Finf) / (eta_tilde K)                       [opt]
          + eta_tilde L sigma_sq / m                            [stat]
          + eta_tilde^2 L^2 sigma_sq C(tau, zeta) (1 + v/m)^2   [network]

with C(tau, zeta) = (1 + zeta^2)/(1 - zeta^2) * tau - 1. The error floor is
the K -> infinity limit, i.e. stat + network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coopsgd.engine import RunTrace, effective_lr


class TheoryError(ValueError):
    """Raised when bound inputs are outside the analyzable regime."""


@dataclass(frozen=True)
class BoundInputs:
    """Everything the general bound needs, in one immutable bundle."""

    f1_minus_finf: float
    lipschitz: float
    sigma_sq: float
    m: int
    v: int
    tau: int
    zeta: float
    eta: float
    steps: int
    beta: float = 0.0

    def __post_init__(self):
        if self.f1_minus_finf < 0:
            raise TheoryError("initial gap F1 - Finf must be nonnegative")
        if self.lipschitz <= 0:
            raise TheoryError("Lipschitz constant must be positive")
        if self.sigma_sq < 0 or self.beta < 0:
            raise TheoryError("noise constants must be nonnegative")
        if self.m < 1 or self.v < 0:
            raise TheoryError("need m >= 1 and v >= 0")
        if self.tau < 1:
            raise TheoryError("tau must be >= 1")
        if self.eta <= 0:
            raise TheoryError("eta must be positive")
        if self.steps < 1:
            raise TheoryError("steps must be >= 1")

    @property
    def eta_tilde(self) -> float:
        return effective_lr(self.eta, self.m, self.v)


def _require_subunit_zeta(zeta: float) -> None:
    if not 0.0 <= zeta < 1.0:
        raise TheoryError(f"bounds require zeta in [0, 1), got {zeta}")


def network_coefficient(tau: int, zeta: float) -> float:
    """C(tau, zeta) = (1 + zeta^2) / (1 - zeta^2) * tau - 1."""
    _require_subunit_zeta(zeta)
    return (1.0 + zeta ** 2) / (1.0 - zeta ** 2) * tau - 1.0


def lr_condition(inputs: BoundInputs) -> tuple[float, bool]:
    """Left-hand side of the step-size condition and whether it holds.

    With beta = 0 this is the simplified form

        eta_tilde L + 5 eta_tilde^2 L^2 [(1 + v/m) tau / (1 - zeta)]^2 <= 1.

    With beta > 0 the sharper general form applies, which adds the
    beta-dependent terms and keeps the unsimplified tau/zeta factor:

        eta_tilde L (1 + beta/m) + 2 eta^2 L^2 beta tau / (1 - zeta^2)
        + eta^2 L^2 tau^2 / (1 - zeta)
          * (2 zeta^2/(1+zeta) + 2 zeta/(1-zeta) + (tau-1)/tau) <= 1.
    """
    _require_subunit_zeta(inputs.zeta)
    et, lip = inputs.eta_tilde, inputs.lipschitz
    tau, zeta = inputs.tau, inputs.zeta
    if inputs.beta == 0.0:
        blowup = (1.0 + inputs.v / inputs.m) * tau / (1.0 - zeta)
        lhs = et * lip + 5.0 * et ** 2 * lip ** 2 * blowup ** 2
    else:
        eta = inputs.eta
        lhs = (
            et * lip * (1.0 + inputs.beta / inputs.m)
            + 2.0 * eta ** 2 * lip ** 2 * inputs.beta * tau / (1.0 - zeta ** 2)
            + eta ** 2 * lip ** 2 * tau ** 2 / (1.0 - zeta)
            * (2.0 * zeta ** 2 / (1.0 + zeta) + 2.0 * zeta / (1.0 - zeta) + (tau - 1.0) / tau)
        )
    return float(lhs), bool(lhs <= 1.0)


@dataclass(frozen=True)
class BoundReport:
    """The general bound evaluated at one parameter point.

    A violated learning-rate condition does not raise: the bound value is
    still reported, flagged out-of-regime via `lr_ok`, because parameter
    sweeps deliberately cross the boundary.
    """

    lr_lhs: float
    lr_ok: bool
    bound: float
    floor: float
    opt_term: float
    stat_term: float
    network_term: float

    def to_dict(self) -> dict:
        return {
            "lr_lhs": self.lr_lhs,
            "lr_ok": self.lr_ok,
            "bound": self.bound,
            "floor": self.floor,
            "opt_term": self.opt_term,
            "stat_term": self.stat_term,
            "network_term": self.network_term,
        }


def theorem1_bound(inputs: BoundInputs) -> BoundReport:
    """General bound on the K-step average squared gradient norm."""
    _require_subunit_zeta(inputs.zeta)
    et, lip, m = inputs.eta_tilde, inputs.lipschitz, inputs.m
    opt = 2.0 * inputs.f1_minus_finf / (et * inputs.steps)
    stat = et * lip * inputs.sigma_sq / m
    network = (et ** 2 * lip ** 2 * inputs.sigma_sq
               * network_coefficient(inputs.tau, inputs.zeta)
               * (1.0 + inputs.v / m) ** 2)
    lhs, ok = lr_condition(inputs)
    return BoundReport(
        lr_lhs=lhs,
        lr_ok=ok,
        bound=opt + stat + network,
        floor=stat + network,
        opt_term=opt,
        stat_term=stat,
        network_term=network,
    )


@dataclass(frozen=True)
class FiniteHorizonReport:
    """Horizon-tuned step size and the resulting two-regime guarantees."""

    eta: float
    bound: float
    k_min: int
    k_min_tight: int


def corollary1_bound(f1_minus_finf: float, lipschitz: float, sigma_sq: float,
                     m: int, v: int, tau: int, zeta: float, steps: int) -> FiniteHorizonReport:
    """Bound under the horizon-dependent step eta = (m+v)/(L m) * sqrt(m/K).

    Valid once K >= 10 m [(1+v/m) tau/(1-zeta)]^2; from
    K >= (m+v)^2 m [(1+v/m) tau/(1-zeta)]^2 on, the network part is dominated
    and the bound becomes 2 [L (F1-Finf) + sigma_sq] / sqrt(m K).
    """
    _require_subunit_zeta(zeta)
    if m < 1 or v < 0 or tau < 1 or steps < 1:
        raise TheoryError("need m >= 1, v >= 0, tau >= 1, steps >= 1")
    eta = (m + v) / (lipschitz * m) * np.sqrt(m / steps)
    aug = 1.0 + v / m
    bound = ((2.0 * lipschitz * f1_minus_finf + sigma_sq) / np.sqrt(m * steps)
             + (m / steps) * aug ** 2 * network_coefficient(tau, zeta) * sigma_sq)
    blowup_sq = (aug * tau / (1.0 - zeta)) ** 2
    k_min = int(np.ceil(10.0 * m * blowup_sq))
    k_min_tight = int(np.ceil((m + v) ** 2 * m * blowup_sq))
    return FiniteHorizonReport(eta=float(eta), bound=float(bound),
                               k_min=k_min, k_min_tight=k_min_tight)


def pasgd_bound(f1_minus_finf: float, lipschitz: float, sigma_sq: float,
                m: int, tau: int, eta: float, steps: int) -> tuple[bool, float]:
    """Periodic-averaging specialization (zeta = 0, v = 0).

    Condition eta L + eta^2 L^2 tau (tau - 1) <= 1; bound
    2 (F1-Finf)/(eta K) + eta L sigma_sq / m + eta^2 L^2 sigma_sq (tau - 1).
    """
    if tau < 1 or m < 1 or eta <= 0 or steps < 1:
        raise TheoryError("need tau >= 1, m >= 1, eta > 0, steps >= 1")
    lhs = eta * lipschitz + eta ** 2 * lipschitz ** 2 * tau * (tau - 1.0)
    bound = (2.0 * f1_minus_finf / (eta * steps)
             + eta * lipschitz * sigma_sq / m
             + eta ** 2 * lipschitz ** 2 * sigma_sq * (tau - 1.0))
    return bool(lhs <= 1.0), float(bound)


def dpsgd_bound(f1_minus_finf: float, lipschitz: float, sigma_sq: float,
                m: int, zeta: float, eta: float, steps: int) -> tuple[bool, float]:
    """Decentralized specialization (tau = 1, v = 0).

    Condition eta L + eta^2 L^2 (2 zeta/(1-zeta)) (zeta/(1+zeta) + 1/(1-zeta)) <= 1;
    bound 2 (F1-Finf)/(eta K) + eta L sigma_sq/m
    + eta^2 L^2 sigma_sq 2 zeta^2/(1-zeta^2).
    """
    _require_subunit_zeta(zeta)
    if m < 1 or eta <= 0 or steps < 1:
        raise TheoryError("need m >= 1, eta > 0, steps >= 1")
    lhs = (eta * lipschitz + eta ** 2 * lipschitz ** 2
           * (2.0 * zeta / (1.0 - zeta)) * (zeta / (1.0 + zeta) + 1.0 / (1.0 - zeta)))
    bound = (2.0 * f1_minus_finf / (eta * steps)
             + eta * lipschitz * sigma_sq / m
             + eta ** 2 * lipschitz ** 2 * sigma_sq * 2.0 * zeta ** 2 / (1.0 - zeta ** 2))
    return bool(lhs <= 1.0), float(bound)


def easgd_bound(f1_minus_finf: float, lipschitz: float, sigma_sq: float,
                m: int, eta_tilde: float, steps: int) -> float:
    """Elastic averaging at the optimal elasticity (tau=1, v=1, zeta=m/(m+2)).

    At that zeta the network coefficient collapses to (m+1)/2:
    bound = 2 (F1-Finf)/(eta_tilde K) + eta_tilde L sigma_sq/m
          + 0.5 eta_tilde^2 L^2 sigma_sq (m+1).
    """
    if m < 1 or eta_tilde <= 0 or steps < 1:
        raise TheoryError("need m >= 1, eta_tilde > 0, steps >= 1")
    return float(2.0 * f1_minus_finf / (eta_tilde * steps)
                 + eta_tilde * lipschitz * sigma_sq / m
                 + 0.5 * eta_tilde ** 2 * lipschitz ** 2 * sigma_sq * (m + 1.0))


def max_stable_eta_tilde(lipschitz: float, tau: int, zeta: float, m: int, v: int,
                         fraction: float = 1.0) -> float:
    """Largest eta_tilde satisfying the beta = 0 step-size condition.

    Solves eta_tilde L + 5 eta_tilde^2 L^2 [(1+v/m) tau/(1-zeta)]^2 = 1 and
    returns `fraction` of the positive root. Handy for sweeps that want a
    comparable step inside the analyzable regime.
    """
    _require_subunit_zeta(zeta)
    if lipschitz <= 0 or tau < 1 or m < 1 or v < 0:
        raise TheoryError("need L > 0, tau >= 1, m >= 1, v >= 0")
    if not 0.0 < fraction <= 1.0:
        raise TheoryError("fraction must be in (0, 1]")
    blowup = (1.0 + v / m) * tau / (1.0 - zeta)
    quad = 5.0 * lipschitz ** 2 * blowup ** 2
    root = (-lipschitz + np.sqrt(lipschitz ** 2 + 4.0 * quad)) / (2.0 * quad)
    return float(fraction * root)


def zeta_threshold(tau: int) -> float:
    """zeta at which decentralized and tau-periodic floors coincide.

    zeta_tau = sqrt(1 - 2/(tau+1)); a decentralized matrix beats running
    tau local steps (in floor) exactly when its zeta is below this value.
    The threshold approaches 1 quickly as tau grows.
    """
    if tau < 1:
        raise TheoryError("tau must be >= 1")
    return float(np.sqrt(1.0 - 2.0 / (tau + 1.0)))


@dataclass(frozen=True)
class Lemma3Report:
    """Measured-dispersion form of the error bound, against one trace."""

    rhs: float
    measured: float
    holds: bool
    applicable: bool


def empirical_decomposition_bound(trace: RunTrace, inputs: BoundInputs) -> Lemma3Report:
    """Check the bound with the network term measured, not bounded.

    rhs = 2 (F1-Finf)/(eta_tilde K) + eta_tilde L sigma_sq / m
        + (L^2 / K) sum_k ||X_k (I - J)||_F^2 / m

    where the sum runs over the same gradient-evaluation states as the
    measured mean squared gradient norm. Expectations should be approximated
    by a seed-averaged trace. Requires eta_tilde L (1 + beta/m) <= 1;
    otherwise the report is flagged not applicable.
    """
    if trace.diverged or trace.rows != inputs.steps + 1:
        raise TheoryError("need a complete trace matching the configured horizon")
    et, lip, m = inputs.eta_tilde, inputs.lipschitz, inputs.m
    applicable = et * lip * (1.0 + inputs.beta / m) <= 1.0
    k = inputs.steps
    rhs = (2.0 * inputs.f1_minus_finf / (et * k)
           + et * lip * inputs.sigma_sq / m
           + lip ** 2 / k * float(trace.network_error[:k].sum()) / m)
    measured = trace.mean_grad_norm_sq
    return Lemma3Report(rhs=float(rhs), measured=float(measured),
                        holds=bool(measured <= rhs), applicable=bool(applicable))
