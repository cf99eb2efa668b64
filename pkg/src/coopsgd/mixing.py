"""Mixing matrices for consensus averaging: constructors and spectral analysis.

A mixing matrix is a symmetric real matrix whose rows sum to one. The key
quantity everywhere is zeta, the second largest eigenvalue magnitude

    zeta = max(|lambda_2|, |lambda_n|)        (eigenvalues sorted by value)

which controls how quickly repeated mixing contracts disagreement between
nodes: ||W^j - J||_op = zeta^j for the all-ones projector J. A matrix is
usable for averaging only when zeta < 1; zeta = 0 means one round of mixing
reaches exact consensus (W = J), zeta = 1 means some disagreement mode never
contracts (e.g. W = I).

All constructors return immutable `MixingMatrix` values with zeta cached
from a dense symmetric eigensolve, so it can never go stale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-12
ROW_SUM_TOL = 1e-12
ZETA_VALID_MARGIN = 1e-12
MAX_NODES = 256


class MixingError(ValueError):
    """Raised for malformed or dimensionally inconsistent mixing matrices."""


def _as_square_array(entries) -> np.ndarray:
    arr = np.asarray(entries, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise MixingError(f"mixing matrix must be square, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise MixingError("mixing matrix must have at least one node")
    if arr.shape[0] > MAX_NODES:
        raise MixingError(f"mixing matrix larger than {MAX_NODES} nodes is unsupported")
    if not np.isfinite(arr).all():
        raise MixingError("mixing matrix entries must be finite")
    return arr


def _second_largest_abs_eigenvalue(entries: np.ndarray) -> float:
    vals = np.linalg.eigvalsh(entries)  # ascending
    if vals.size == 1:
        return 0.0
    return float(max(abs(vals[0]), abs(vals[-2])))


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric matrix with unit row sums and its cached spectral quantity.

    `zeta` is always the numerically computed second largest absolute
    eigenvalue; values >= 1 are kept as-is and simply mark the matrix as
    unusable for consensus (see `is_valid`).
    """

    entries: np.ndarray
    n: int
    zeta: float

    @property
    def is_valid(self) -> bool:
        return self.zeta < 1.0 - ZETA_VALID_MARGIN

    def to_json(self) -> str:
        payload = {
            "n": self.n,
            "entries": [float(x) for x in self.entries.reshape(-1)],
            "zeta": self.zeta,
        }
        return json.dumps(payload)

    @staticmethod
    def from_json(text: str) -> "MixingMatrix":
        payload = json.loads(text)
        return mixing_from_dict(payload)


def as_mixing(entries) -> MixingMatrix:
    """Wrap a raw square array, enforcing symmetry and unit row sums.

    Defects beyond 1e-12 are construction errors; the zeta < 1 condition is
    deliberately not enforced here (see `validate_mixing`).
    """
    arr = _as_square_array(entries)
    sym_defect = float(np.max(np.abs(arr - arr.T)))
    if sym_defect > SYMMETRY_TOL:
        raise MixingError(f"matrix is not symmetric (max defect {sym_defect:.3e})")
    row_defect = float(np.max(np.abs(arr.sum(axis=1) - 1.0)))
    if row_defect > ROW_SUM_TOL:
        raise MixingError(f"row sums deviate from 1 (max defect {row_defect:.3e})")
    arr = arr.copy()
    arr.setflags(write=False)
    return MixingMatrix(entries=arr, n=arr.shape[0], zeta=_second_largest_abs_eigenvalue(arr))


def mixing_from_dict(payload: dict) -> MixingMatrix:
    """Rebuild a matrix from its {"n", "entries", "zeta"} JSON form.

    `zeta` in the payload is informational; it is recomputed on load.
    """
    unknown = set(payload) - {"n", "entries", "zeta"}
    if unknown:
        raise MixingError(f"unknown mixing fields: {sorted(unknown)}")
    if "n" not in payload or "entries" not in payload:
        raise MixingError("mixing payload requires 'n' and 'entries'")
    n = int(payload["n"])
    flat = np.asarray(payload["entries"], dtype=float)
    if flat.size != n * n:
        raise MixingError(f"expected {n * n} entries for n={n}, got {flat.size}")
    return as_mixing(flat.reshape(n, n))


@dataclass(frozen=True)
class MixingReport:
    """Outcome of `validate_mixing`: measured defects plus the verdict."""

    n: int
    symmetry_defect: float
    row_sum_defect: float
    zeta: float
    valid: bool


def validate_mixing(matrix) -> MixingReport:
    """Check the averaging assumptions and report defects; never raises.

    Valid means: symmetry and row-sum defects below 1e-12 and zeta < 1 - 1e-12.
    Accepts either a MixingMatrix or a raw square array.
    """
    arr = matrix.entries if isinstance(matrix, MixingMatrix) else _as_square_array(matrix)
    sym = float(np.max(np.abs(arr - arr.T)))
    row = float(np.max(np.abs(arr.sum(axis=1) - 1.0)))
    symmetrized = 0.5 * (arr + arr.T)
    zeta = _second_largest_abs_eigenvalue(symmetrized)
    valid = sym <= SYMMETRY_TOL and row <= ROW_SUM_TOL and zeta < 1.0 - ZETA_VALID_MARGIN
    return MixingReport(n=arr.shape[0], symmetry_defect=sym, row_sum_defect=row, zeta=zeta, valid=valid)


def spectral_gap(matrix) -> float:
    """Second largest absolute eigenvalue from a dense symmetric eigensolve."""
    if isinstance(matrix, MixingMatrix):
        return _second_largest_abs_eigenvalue(matrix.entries)
    arr = _as_square_array(matrix)
    sym = float(np.max(np.abs(arr - arr.T)))
    if sym > SYMMETRY_TOL:
        raise MixingError(f"spectral_gap requires a symmetric matrix (defect {sym:.3e})")
    return _second_largest_abs_eigenvalue(arr)


def power_deviation_norm(matrix: MixingMatrix, power: int) -> float:
    """Operator norm of W^j - J, numerically.

    For any matrix satisfying the averaging assumptions this equals zeta^j;
    the identity is exercised by the test suite rather than assumed here.
    """
    if power < 0:
        raise MixingError("power must be a nonnegative integer")
    arr = matrix.entries if isinstance(matrix, MixingMatrix) else _as_square_array(matrix)
    n = arr.shape[0]
    j_proj = np.full((n, n), 1.0 / n)
    wj = np.linalg.matrix_power(arr, power)
    return float(np.linalg.norm(wj - j_proj, 2))


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def make_fully_connected(n: int) -> MixingMatrix:
    """Uniform averaging matrix J with every entry 1/n (zeta = 0)."""
    if n < 1:
        raise MixingError("fully connected matrix needs n >= 1")
    return as_mixing(np.full((n, n), 1.0 / n))


def make_identity(n: int) -> MixingMatrix:
    """No-communication matrix (zeta = 1, invalid for averaging)."""
    if n < 1:
        raise MixingError("identity matrix needs n >= 1")
    return as_mixing(np.eye(n))


def make_easgd(m: int, alpha: float) -> MixingMatrix:
    """Elastic-averaging matrix over m workers plus one auxiliary anchor.

    Workers keep weight 1-alpha on themselves and exchange alpha with the
    anchor, which keeps 1 - m*alpha. Whether the result is usable (zeta < 1)
    depends on alpha and is reported by validate_mixing, not enforced here.
    """
    if m < 1:
        raise MixingError("elastic averaging needs m >= 1 workers")
    w = np.zeros((m + 1, m + 1))
    w[:m, :m] = (1.0 - alpha) * np.eye(m)
    w[:m, m] = alpha
    w[m, :m] = alpha
    w[m, m] = 1.0 - m * alpha
    return as_mixing(w)


def easgd_zeta(m: int, alpha: float) -> float:
    """Closed form zeta of the elastic matrix: max(|1-a|, |1-(m+1)a|).

    Values >= 1 are returned as-is; the caller decides about validity.
    """
    if m < 1:
        raise MixingError("easgd_zeta needs m >= 1")
    return max(abs(1.0 - alpha), abs(1.0 - (m + 1) * alpha))


def best_easgd_alpha(m: int) -> tuple[float, float]:
    """Elasticity minimizing zeta: alpha* = 2/(m+2), zeta* = m/(m+2)."""
    if m < 1:
        raise MixingError("best_easgd_alpha needs m >= 1")
    return 2.0 / (m + 2), m / (m + 2.0)


def make_generalized_elastic(base: MixingMatrix, alpha: float) -> MixingMatrix:
    """Attach one globally connected auxiliary node to an m-node matrix.

    Block form [[(1-a) W, a 1], [a 1^T, 1 - m a]]. The auxiliary pulls all
    nodes toward a common anchor, which strictly shrinks zeta for the right
    alpha (see `generalized_elastic_zeta`).
    """
    if alpha < 0:
        raise MixingError("alpha must be nonnegative")
    if not base.is_valid:
        raise MixingError("base matrix must itself satisfy the averaging assumptions")
    m = base.n
    w = np.zeros((m + 1, m + 1))
    w[:m, :m] = (1.0 - alpha) * base.entries
    w[:m, m] = alpha
    w[m, :m] = alpha
    w[m, m] = 1.0 - m * alpha
    return as_mixing(w)


def generalized_elastic_zeta(zeta: float, m: int, alpha: float) -> float:
    """Closed-form zeta of the bordered matrix: max((1-a) zeta, |1-(m+1)a|)."""
    if not 0.0 <= zeta < 1.0:
        raise MixingError("zeta must lie in [0, 1)")
    if m < 1:
        raise MixingError("generalized_elastic_zeta needs m >= 1")
    if not 0.0 <= alpha <= 1.0:
        raise MixingError("closed form requires alpha in [0, 1]")
    return max((1.0 - alpha) * zeta, abs(1.0 - (m + 1) * alpha))


def best_generalized_elastic_alpha(zeta: float, m: int) -> tuple[float, float]:
    """Alpha equalizing both branches: a* = (1+z)/(m+1+z), zeta' = m z/(m+1+z)."""
    if not 0.0 <= zeta < 1.0:
        raise MixingError("zeta must lie in [0, 1)")
    if m < 1:
        raise MixingError("best_generalized_elastic_alpha needs m >= 1")
    alpha = (1.0 + zeta) / (m + 1.0 + zeta)
    return alpha, m * zeta / (m + 1.0 + zeta)


def make_ring(m: int) -> MixingMatrix:
    """Ring topology with weight 1/3 on self and each of the two neighbors."""
    if m < 3:
        raise MixingError("ring needs m >= 3 nodes")
    w = np.zeros((m, m))
    third = 1.0 / 3.0
    for i in range(m):
        w[i, i] += third
        w[i, (i + 1) % m] += third
        w[i, (i - 1) % m] += third
    return as_mixing(w)


def make_dense_with_zeta(m: int, zeta: float) -> MixingMatrix:
    """Dense matrix with a prescribed zeta: (1-z) J + z I.

    All eigenvalues except the leading 1 equal z exactly, which makes this
    the simplest way to realize an arbitrary spectral target.
    """
    if m < 1:
        raise MixingError("make_dense_with_zeta needs m >= 1")
    if not 0.0 <= zeta <= 1.0:
        raise MixingError("zeta must lie in [0, 1]")
    w = (1.0 - zeta) * np.full((m, m), 1.0 / m) + zeta * np.eye(m)
    return as_mixing(w)


def make_hierarchical(group_sizes: list[int], alpha: float, inter: MixingMatrix) -> MixingMatrix:
    """Group-local elastic coupling plus mixing between group anchors.

    Workers appear first (group by group), followed by one auxiliary anchor
    per group. Inside group g each worker keeps 1-alpha and exchanges alpha
    with its anchor. Anchors mix among themselves through `inter`, scaled so
    every row still sums to one: off-diagonal anchor entries share the common
    factor min_g(1 - s_g*alpha) (symmetry requires a single scale) and each
    anchor diagonal absorbs the remainder. For equal group sizes s this is
    exactly (1 - s*alpha) * inter on the anchor block.
    """
    if len(group_sizes) == 0:
        raise MixingError("need at least one group")
    if any(s < 1 for s in group_sizes):
        raise MixingError("group sizes must be positive")
    if alpha < 0:
        raise MixingError("alpha must be nonnegative")
    g = len(group_sizes)
    if inter.n != g:
        raise MixingError(f"inter-group matrix is {inter.n}x{inter.n}, expected {g}x{g}")
    m = sum(group_sizes)
    n = m + g
    w = np.zeros((n, n))
    offsets = np.concatenate([[0], np.cumsum(group_sizes)])
    for gi, size in enumerate(group_sizes):
        lo, hi = offsets[gi], offsets[gi + 1]
        aux = m + gi
        for i in range(lo, hi):
            w[i, i] = 1.0 - alpha
            w[i, aux] = alpha
            w[aux, i] = alpha
    scale = min(1.0 - s * alpha for s in group_sizes)
    inter_e = inter.entries
    for gi in range(g):
        aux_i = m + gi
        off_total = 0.0
        for gj in range(g):
            if gj == gi:
                continue
            coupling = scale * inter_e[gi, gj]
            w[aux_i, m + gj] = coupling
            off_total += coupling
        w[aux_i, aux_i] = 1.0 - group_sizes[gi] * alpha - off_total
    return as_mixing(w)


def random_doubly_stochastic(n: int, rng: np.random.Generator, max_iters: int = 10_000) -> MixingMatrix:
    """Random symmetric doubly stochastic matrix via Sinkhorn balancing.

    Starts from a strictly positive symmetric seed, so the result is
    primitive and has zeta < 1. Iterates until the row-sum defect is below
    1e-13 to leave headroom under the 1e-12 construction tolerance.
    """
    if n < 1:
        raise MixingError("random_doubly_stochastic needs n >= 1")
    raw = rng.random((n, n)) + 0.1
    s = 0.5 * (raw + raw.T)
    for _ in range(max_iters):
        sums = s.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) < 1e-13:
            break
        scale = 1.0 / np.sqrt(sums)
        s = s * np.outer(scale, scale)
    else:
        raise MixingError("Sinkhorn balancing did not converge")
    s = 0.5 * (s + s.T)
    return as_mixing(s)


@dataclass(frozen=True)
class MixingSchedule:
    """Time-varying mixing: the base matrix every tau steps, identity between.

    Step indices count from 1; mixing fires at steps tau, 2*tau, ...
    """

    base: MixingMatrix
    tau: int

    def __post_init__(self):
        if self.tau < 1:
            raise MixingError("communication period tau must be >= 1")

    def at_step(self, k: int) -> MixingMatrix:
        if k % self.tau == 0:
            return self.base
        return make_identity(self.base.n)

    def is_sync_step(self, k: int) -> bool:
        return k % self.tau == 0
