"""Execution engine for the A(tau, W, v) family of averaging SGD variants.

State is a d x (m+v) matrix X whose first m columns are worker models and
whose last v columns are auxiliary variables that take no gradient steps.
One iteration applies

    post rule:  X <- (X - eta G) W_k          (the default)
    pre rule:   X <- X W_k - eta G            (alternative form)

where W_k is the mixing matrix on synchronization steps (k divisible by tau)
and the identity otherwise, and G carries the workers' stochastic gradients
with explicit zero columns at auxiliary positions.

Because every mixing matrix has unit row sums, the all-column average
follows plain SGD with the effective learning rate m*eta/(m+v) under both
rules; `run` tracks the worst per-step defect of that recursion as a
self-check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from coopsgd.mixing import MixingMatrix

TRACE_CSV_COLUMNS = ["k", "loss", "grad_norm_sq", "network_error", "wall_clock_s"]


class ConfigError(ValueError):
    """Raised for invalid algorithm configurations."""


class EngineError(ValueError):
    """Raised for dimension mismatches and malformed engine inputs."""


def effective_lr(eta: float, m: int, v: int) -> float:
    """Step size of the averaged model: m * eta / (m + v)."""
    if eta <= 0:
        raise ConfigError("learning rate must be positive")
    if m < 1 or v < 0:
        raise ConfigError("need m >= 1 workers and v >= 0 auxiliaries")
    return m * eta / (m + v)


@dataclass(frozen=True)
class AlgorithmConfig:
    """The tuple A(tau, W, v) plus run parameters.

    `steps` must be divisible by `tau` so every run ends on a
    synchronization step; other horizons are rejected outright.
    """

    tau: int
    mixing: MixingMatrix
    v: int
    eta: float
    steps: int
    seed: int
    rule: str = "post"

    def __post_init__(self):
        if self.tau < 1:
            raise ConfigError("communication period tau must be >= 1")
        if self.v < 0:
            raise ConfigError("auxiliary count v must be >= 0")
        if self.mixing.n - self.v < 1:
            raise ConfigError(f"mixing matrix of size {self.mixing.n} leaves no workers for v={self.v}")
        if self.eta <= 0:
            raise ConfigError("learning rate eta must be positive")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.steps % self.tau != 0:
            lower = (self.steps // self.tau) * self.tau
            upper = lower + self.tau
            raise ConfigError(
                f"steps={self.steps} is not divisible by tau={self.tau}; "
                f"nearest valid values are {lower} and {upper}"
            )
        if self.rule not in ("post", "pre"):
            raise ConfigError(f"rule must be 'post' or 'pre', got {self.rule!r}")

    @property
    def m(self) -> int:
        return self.mixing.n - self.v

    @property
    def eta_tilde(self) -> float:
        return effective_lr(self.eta, self.m, self.v)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "v": self.v,
            "eta": self.eta,
            "K": self.steps,
            "seed": self.seed,
            "rule": self.rule,
            "mixing": {"n": self.mixing.n, "zeta": self.mixing.zeta},
        }


@dataclass(frozen=True)
class ParamMatrix:
    """d x (m+v) state: worker models first, auxiliary variables last."""

    X: np.ndarray
    m: int
    v: int

    def __post_init__(self):
        if self.X.ndim != 2:
            raise EngineError("parameter matrix must be 2-d")
        if self.X.shape[1] != self.m + self.v:
            raise EngineError(f"expected {self.m + self.v} columns, got {self.X.shape[1]}")

    @staticmethod
    def from_common_point(x0: np.ndarray, m: int, v: int) -> "ParamMatrix":
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        return ParamMatrix(np.tile(x0[:, None], (1, m + v)), m, v)


def averaged_model(params: ParamMatrix) -> np.ndarray:
    """Arithmetic mean over all m+v columns, auxiliaries included."""
    return params.X.mean(axis=1)


def network_error(params: ParamMatrix) -> float:
    """Total squared dispersion of columns around the column mean."""
    x = params.X
    xbar = x.mean(axis=1, keepdims=True)
    return float(((x - xbar) ** 2).sum())


def coop_step(params: ParamMatrix, w_k: MixingMatrix, eta: float, G: np.ndarray,
              rule: str = "post") -> ParamMatrix:
    """One exact update under the selected rule.

    G must have zero columns at the auxiliary positions; gradients only ever
    come from workers.
    """
    if rule not in ("post", "pre"):
        raise EngineError(f"rule must be 'post' or 'pre', got {rule!r}")
    X = params.X
    if w_k.n != X.shape[1]:
        raise EngineError(f"mixing matrix of size {w_k.n} does not match {X.shape[1]} columns")
    if G.shape != X.shape:
        raise EngineError(f"gradient matrix shape {G.shape} does not match state shape {X.shape}")
    if params.v > 0 and np.any(G[:, params.m:] != 0.0):
        raise EngineError("auxiliary gradient columns must be exactly zero")
    if rule == "post":
        new_x = (X - eta * G) @ w_k.entries
    else:
        new_x = X @ w_k.entries - eta * G
    return ParamMatrix(new_x, params.m, params.v)


@dataclass
class RunTrace:
    """Per-iteration record of a single run.

    Row r holds the state after r updates, for r = 0..K; row 0 is the common
    initialization. The convergence metric of interest averages
    `grad_norm_sq` over the K states at which gradients were evaluated
    (rows 0..K-1). Divergent runs are truncated at the last finite state.

    `wall_clock` is zero-filled here and merged in by the timeline module.
    """

    k: np.ndarray
    loss: np.ndarray
    grad_norm_sq: np.ndarray
    network_error: np.ndarray
    worker_loss_mean: np.ndarray
    worker_grad_norm_sq_mean: np.ndarray
    wall_clock: np.ndarray
    steps_requested: int
    diverged: bool
    recursion_defect_max: float

    @property
    def rows(self) -> int:
        return len(self.k)

    @property
    def mean_grad_norm_sq(self) -> float:
        """Average squared gradient norm over the gradient-evaluation states."""
        count = min(self.rows, self.steps_requested)
        return float(self.grad_norm_sq[:count].mean())

    @property
    def final_loss(self) -> float:
        return float(self.loss[-1])

    @property
    def initial_loss(self) -> float:
        return float(self.loss[0])

    def mean_network_error(self) -> float:
        count = min(self.rows, self.steps_requested)
        return float(self.network_error[:count].mean())

    def tail_slice(self, fraction: float = 0.2) -> slice:
        """Row range covering the final `fraction` of the requested horizon."""
        start = int(np.ceil((1.0 - fraction) * self.steps_requested))
        return slice(min(start, self.rows), self.rows)


def run_many(config: AlgorithmConfig, oracle, seeds: list[int], x0=1.0) -> list[RunTrace]:
    """Execute one configuration once per seed, as a single stacked system.

    All seeds share the update arithmetic on a (seeds, d, m+v) state array,
    which keeps the per-step cost nearly independent of the seed count.
    Worker i of seed s draws from the i-th child of SeedSequence(seeds[s]),
    so streams are independent across both seeds and workers, and adding
    workers never perturbs existing streams. `config.seed` is ignored here.

    `x0` may be a scalar (broadcast over coordinates) or a d-vector; every
    column starts at that common point. Non-finite state or metrics stop an
    individual seed early: its trace is truncated at the last finite row and
    flagged divergent, while the remaining seeds keep running.
    """
    if not seeds:
        raise ConfigError("need at least one seed")
    n = config.mixing.n
    m, v = config.m, config.v
    d = oracle.d
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 0:
        x0 = np.full(d, float(x0))
    if x0.shape != (d,):
        raise ConfigError(f"x0 must be a scalar or a vector of dimension {d}")

    n_seeds = len(seeds)
    rng_table = [
        [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(m)]
        for seed in seeds
    ]
    sample = oracle.batch_gradient_sampler(rng_table, config.steps)

    X = np.tile(x0[None, :, None], (n_seeds, 1, n))
    W = config.mixing.entries
    eta, eta_t, tau, K = config.eta, config.eta_tilde, config.tau, config.steps
    worker_avg = np.full(m, 1.0 / m)
    col_avg = np.full(n, 1.0 / n)

    loss = np.empty((n_seeds, K + 1))
    grad_sq = np.empty((n_seeds, K + 1))
    net_err = np.empty((n_seeds, K + 1))
    w_loss = np.empty((n_seeds, K + 1))
    w_grad_sq = np.empty((n_seeds, K + 1))

    def record(row: int) -> tuple[np.ndarray, np.ndarray]:
        """Fill metric row; returns (column means, per-seed finite flags)."""
        xbar = X @ col_avg
        cols = np.concatenate([X, xbar[:, :, None]], axis=2)
        vals, grads = oracle.batch_objective_and_grads(cols)
        loss[:, row] = vals[:, n]
        center = grads[:, :, n]
        grad_sq[:, row] = np.einsum("si,si->s", center, center)
        w_loss[:, row] = vals[:, :m].sum(axis=1) / m
        gw = grads[:, :, :m]
        w_grad_sq[:, row] = np.einsum("sij,sij->s", gw, gw) / m
        diff = X - xbar[:, :, None]
        net_err[:, row] = np.einsum("sij,sij->s", diff, diff)
        row_ok = (np.isfinite(loss[:, row]) & np.isfinite(grad_sq[:, row])
                  & np.isfinite(net_err[:, row]) & np.isfinite(w_loss[:, row])
                  & np.isfinite(w_grad_sq[:, row]))
        return xbar, row_ok

    # overflow/invalid simply mark divergence, so numpy warnings are noise here
    with np.errstate(over="ignore", invalid="ignore"):
        xbar_prev, ok0 = record(0)
        if not ok0.all():
            raise ConfigError("objective is non-finite at the initial point")

        alive = np.ones(n_seeds, dtype=bool)
        first_bad = np.full(n_seeds, K + 1)
        defect_max = np.zeros(n_seeds)
        G = np.zeros((n_seeds, d, n))
        for k in range(1, K + 1):
            G[:, :, :m] = sample(X[:, :, :m])
            sync = k % tau == 0
            if config.rule == "post":
                stepped = X - eta * G
                X = np.matmul(stepped, W) if sync else stepped
            else:
                mixed = np.matmul(X, W) if sync else X
                X = mixed - eta * G
            state_ok = np.isfinite(X).reshape(n_seeds, -1).all(axis=1)
            xbar, row_ok = record(k)
            ok = state_ok & row_ok
            newly_dead = alive & ~ok
            if newly_dead.any():
                first_bad[newly_dead] = k
                X[newly_dead] = 0.0  # park dead seeds; their rows are never emitted
                alive &= ok
                if not alive.any():
                    break
            predicted = xbar_prev - eta_t * (G[:, :, :m] @ worker_avg)
            step_defect = np.abs(xbar - predicted).max(axis=1)
            defect_max = np.where(alive, np.maximum(defect_max, step_defect), defect_max)
            xbar_prev = xbar

    traces = []
    for s in range(n_seeds):
        rows = int(min(first_bad[s], K + 1))
        traces.append(RunTrace(
            k=np.arange(rows),
            loss=loss[s, :rows].copy(),
            grad_norm_sq=grad_sq[s, :rows].copy(),
            network_error=net_err[s, :rows].copy(),
            worker_loss_mean=w_loss[s, :rows].copy(),
            worker_grad_norm_sq_mean=w_grad_sq[s, :rows].copy(),
            wall_clock=np.zeros(rows),
            steps_requested=K,
            diverged=rows < K + 1,
            recursion_defect_max=float(defect_max[s]),
        ))
    return traces


def run(config: AlgorithmConfig, oracle, x0=1.0) -> RunTrace:
    """Execute K steps of A(tau, W, v) for the config's own seed."""
    return run_many(config, oracle, [config.seed], x0=x0)[0]


def average_traces(traces: list[RunTrace]) -> RunTrace:
    """Pointwise mean of complete traces; the expectation proxy for bounds."""
    if not traces:
        raise EngineError("need at least one trace to average")
    rows = traces[0].rows
    if any(t.rows != rows for t in traces) or any(t.diverged for t in traces):
        raise EngineError("can only average complete traces of equal length")
    return RunTrace(
        k=traces[0].k.copy(),
        loss=np.mean([t.loss for t in traces], axis=0),
        grad_norm_sq=np.mean([t.grad_norm_sq for t in traces], axis=0),
        network_error=np.mean([t.network_error for t in traces], axis=0),
        worker_loss_mean=np.mean([t.worker_loss_mean for t in traces], axis=0),
        worker_grad_norm_sq_mean=np.mean([t.worker_grad_norm_sq_mean for t in traces], axis=0),
        wall_clock=np.mean([t.wall_clock for t in traces], axis=0),
        steps_requested=traces[0].steps_requested,
        diverged=False,
        recursion_defect_max=max(t.recursion_defect_max for t in traces),
    )


def write_trace_csv(trace: RunTrace, path) -> None:
    """Write the per-iteration trace with the stable plot-ready header.

    Floats are rendered with shortest round-trip repr, so identical runs
    produce byte-identical files.
    """
    ks = trace.k.tolist()
    cols = [trace.loss.tolist(), trace.grad_norm_sq.tolist(),
            trace.network_error.tolist(), trace.wall_clock.tolist()]
    lines = [",".join(TRACE_CSV_COLUMNS)]
    lines.extend(
        f"{ks[i]},{cols[0][i]!r},{cols[1][i]!r},{cols[2][i]!r},{cols[3][i]!r}"
        for i in range(trace.rows)
    )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Read back a trace CSV into column arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_CSV_COLUMNS:
            raise EngineError(f"unexpected trace header: {header}")
        rows = [[float(x) for x in row] for row in reader]
    data = np.asarray(rows) if rows else np.empty((0, len(TRACE_CSV_COLUMNS)))
    return {name: data[:, i] for i, name in enumerate(TRACE_CSV_COLUMNS)}


# ---------------------------------------------------------------------------
# Reference implementations of the classical update rules.
#
# These transcribe each algorithm's published per-worker form directly,
# without the matrix formulation used by coop_step, and exist purely as
# equivalence oracles for the special-case tests.
# ---------------------------------------------------------------------------

def reference_fullsync_step(X: np.ndarray, eta: float, G: np.ndarray) -> np.ndarray:
    """All workers share one model and apply the averaged gradient."""
    if X.shape != G.shape:
        raise EngineError("state and gradient shapes must match")
    d, m = X.shape
    total = np.zeros(d)
    for i in range(m):
        total += G[:, i]
    new_model = X[:, 0] - eta * (total / m)
    out = np.empty_like(X)
    for i in range(m):
        out[:, i] = new_model
    return out


def reference_pasgd_step(X: np.ndarray, eta: float, G: np.ndarray,
                         step_index: int, tau: int) -> np.ndarray:
    """Local step each iteration; average post-update models every tau steps."""
    if X.shape != G.shape:
        raise EngineError("state and gradient shapes must match")
    d, m = X.shape
    out = np.empty_like(X)
    if step_index % tau == 0:
        avg = np.zeros(d)
        for j in range(m):
            avg += X[:, j] - eta * G[:, j]
        avg /= m
        for i in range(m):
            out[:, i] = avg
    else:
        for i in range(m):
            out[:, i] = X[:, i] - eta * G[:, i]
    return out


def reference_easgd_step(X: np.ndarray, eta: float, G: np.ndarray, alpha: float) -> np.ndarray:
    """Elastic averaging: workers pulled toward the anchor in the last column.

    Matches the pre-multiply form of the framework with the elastic mixing
    matrix and one auxiliary variable.
    """
    if X.shape != G.shape:
        raise EngineError("state and gradient shapes must match")
    d, n = X.shape
    m = n - 1
    if m < 1:
        raise EngineError("elastic reference needs at least one worker plus the anchor")
    z = X[:, m]
    xbar = np.zeros(d)
    for i in range(m):
        xbar += X[:, i]
    xbar /= m
    out = np.empty_like(X)
    for i in range(m):
        out[:, i] = X[:, i] - eta * G[:, i] - alpha * (X[:, i] - z)
    out[:, m] = (1.0 - m * alpha) * z + m * alpha * xbar
    return out


def reference_dpsgd_step(X: np.ndarray, eta: float, G: np.ndarray,
                         w_entries: np.ndarray) -> np.ndarray:
    """Gossip then local step: x_i <- sum_j w_ji x_j - eta g_i."""
    if X.shape != G.shape:
        raise EngineError("state and gradient shapes must match")
    d, m = X.shape
    if w_entries.shape != (m, m):
        raise EngineError(f"mixing matrix shape {w_entries.shape} does not match {m} workers")
    out = np.empty_like(X)
    for i in range(m):
        mixed = np.zeros(d)
        for j in range(m):
            mixed += w_entries[j, i] * X[:, j]
        out[:, i] = mixed - eta * G[:, i]
    return out
