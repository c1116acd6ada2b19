"""
lattice.py — exact combinatorics of the diamond hierarchical lattice path space.

A generation-n directed path is the tree of branch decisions of its recursive
decomposition p = (i; p_1, ..., p_s), stored breadth-first:

    level 0:  1 decision     branch taken across the whole lattice
    level 1:  s decisions    branch taken inside each segment of that branch
    level k:  s^k decisions

so the array holds (s^n - 1)/(s - 1) entries in {1..b}. Node t of level k owns
children t*s + j (j = 0..s-1) on level k+1. Coarsening to generation k keeps
the first (s^k - 1)/(s - 1) entries.

Cylinders of Γ_n are indexed by reading the decision array as a mixed-radix
number (base b, first entry most significant); every vector indexed by Γ_n in
this package uses that order.

Generation-n edges are addressed by their (branch, segment) pairs from the top
level down, encoded as a base-(b*s) integer in [0, (bs)^n). A path crosses s^n
distinct edges and N_n(p, q) is the size of the intersection of the edge sets.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize

from config import EXACT_GENERATION, MAX_CYLINDERS
from errors import BudgetError, DomainError, UsageError

logger = logging.getLogger(__name__)


# ── Parameters and counts ─────────────────────────────────────────────────────

@dataclass(frozen=True)
class LatticeParams:
    b: int
    s: int

    def __post_init__(self):
        if int(self.b) != self.b or int(self.s) != self.s or self.b < 2 or self.s < 2:
            raise UsageError(f"lattice needs integers b >= 2 and s >= 2, got b={self.b}, s={self.s}")

    def critical(self) -> bool:
        return self.b == self.s

    def require_critical(self, what: str) -> None:
        if not self.critical():
            raise UsageError(f"{what} requires a critical lattice (b = s), got b={self.b}, s={self.s}")


@dataclass(frozen=True)
class BigCount:
    """A count carried in log space, with the exact integer where it is practical."""

    log_value: float
    exact: int | None = None

    @property
    def log10(self) -> float:
        return self.log_value / math.log(10.0)

    def agrees(self, rel_tol: float = 1e-12) -> bool:
        if self.exact is None:
            return True
        return abs(math.log(self.exact) - self.log_value) <= rel_tol * max(1.0, abs(self.log_value))


def decision_length(s: int, n: int) -> int:
    return (s ** n - 1) // (s - 1)


def exact_path_count(params: LatticeParams, n: int) -> int:
    """c_0 = 1, c_{k+1} = b * c_k^s."""
    count = 1
    for _ in range(n):
        count = params.b * count ** params.s
    return count


def path_count(params: LatticeParams, n: int, exact_generation: int = EXACT_GENERATION) -> BigCount:
    if n < 0:
        raise UsageError(f"generation must be >= 0, got {n}")
    log_value = decision_length(params.s, n) * math.log(params.b)
    exact = exact_path_count(params, n) if n <= exact_generation else None
    return BigCount(log_value=log_value, exact=exact)


def edge_count(params: LatticeParams, n: int) -> int:
    return (params.b * params.s) ** n


def check_cylinder_budget(params: LatticeParams, n: int, budget: int = MAX_CYLINDERS) -> None:
    length = decision_length(params.s, n)
    if length * math.log(params.b) > math.log(budget) + 1e-9:
        feasible = n
        while feasible > 0 and decision_length(params.s, feasible) * math.log(params.b) > math.log(budget) + 1e-9:
            feasible -= 1
        raise BudgetError(
            f"|Γ_{n}| = {params.b}^{length} exceeds the cylinder budget {budget}; "
            f"largest feasible generation is {feasible}",
            limit=feasible,
        )


# ── Paths ─────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class CylinderPath:
    params: LatticeParams
    generation: int
    decisions: tuple[int, ...]

    def __post_init__(self):
        if self.generation < 0:
            raise UsageError(f"generation must be >= 0, got {self.generation}")
        expected = decision_length(self.params.s, self.generation)
        if len(self.decisions) != expected:
            raise UsageError(
                f"generation {self.generation} needs {expected} decisions, got {len(self.decisions)}"
            )
        if any(d < 1 or d > self.params.b for d in self.decisions):
            raise UsageError(f"decisions must lie in 1..{self.params.b}")

    @property
    def top(self) -> int:
        return self.decisions[0]

    @property
    def index(self) -> int:
        value = 0
        for d in self.decisions:
            value = value * self.params.b + (d - 1)
        return value

    @classmethod
    def from_index(cls, params: LatticeParams, n: int, index: int) -> "CylinderPath":
        length = decision_length(params.s, n)
        digits = []
        for _ in range(length):
            index, d = divmod(index, params.b)
            digits.append(d + 1)
        if index:
            raise UsageError(f"index out of range for generation {n}")
        return cls(params, n, tuple(reversed(digits)))

    def coarsen(self, k: int) -> "CylinderPath":
        if not 0 <= k <= self.generation:
            raise UsageError(f"cannot coarsen generation {self.generation} to {k}")
        return CylinderPath(self.params, k, self.decisions[: decision_length(self.params.s, k)])

    def subpaths(self) -> list["CylinderPath"]:
        """The generation-(n-1) paths p_1..p_s of p = (i; p_1, ..., p_s)."""
        if self.generation < 1:
            raise UsageError("the generation-0 path has no sub-paths")
        columns = _subpath_columns(self.params.s, self.generation)
        return [
            CylinderPath(self.params, self.generation - 1, tuple(self.decisions[c] for c in cols))
            for cols in columns
        ]


@lru_cache(maxsize=None)
def _subpath_columns(s: int, n: int) -> tuple[tuple[int, ...], ...]:
    """For each segment j, the positions in a generation-n array that form p_j."""
    columns = []
    for j in range(s):
        cols = []
        for k in range(n - 1):
            start = decision_length(s, k + 1) + j * s ** k
            cols.extend(range(start, start + s ** k))
        columns.append(tuple(cols))
    return tuple(columns)


def _check_pair(p: CylinderPath, q: CylinderPath) -> None:
    if p.params != q.params or p.generation != q.generation:
        raise UsageError(
            f"paths must share params and generation: {p.params}/{p.generation} vs {q.params}/{q.generation}"
        )


# ── Enumeration and index maps ────────────────────────────────────────────────

def _radix_weights(b: int, length: int) -> np.ndarray:
    return b ** np.arange(length - 1, -1, -1, dtype=np.int64)


def enumerate_paths(params: LatticeParams, n: int, budget: int = MAX_CYLINDERS) -> np.ndarray:
    """Decision matrix of all of Γ_n, one row per cylinder, in index order."""
    check_cylinder_budget(params, n, budget)
    length = decision_length(params.s, n)
    index = np.arange(params.b ** length, dtype=np.int64)
    weights = _radix_weights(params.b, length)
    matrix = (index[:, None] // weights[None, :]) % params.b + 1
    logger.debug("lattice: enumerated %d paths at generation %d", len(matrix), n)
    return matrix


def path_indices(decisions: np.ndarray, b: int) -> np.ndarray:
    decisions = np.atleast_2d(decisions)
    return (decisions - 1) @ _radix_weights(b, decisions.shape[1])


@lru_cache(maxsize=None)
def decomposition_map(params: LatticeParams, n: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Index form of p = (i; p_1, ..., p_s) over all of Γ_n.
    Returns (top, sub): top[p] is the 0-based branch i, sub[p, j] the index of
    p_j in Γ_{n-1}.
    """
    if n < 1:
        raise UsageError("decomposition needs generation >= 1")
    matrix = enumerate_paths(params, n)
    top = matrix[:, 0] - 1
    sub = np.stack(
        [path_indices(matrix[:, list(cols)], params.b) if cols else np.zeros(len(matrix), dtype=np.int64)
         for cols in _subpath_columns(params.s, n)],
        axis=1,
    )
    top.setflags(write=False)
    sub.setflags(write=False)
    return top, sub


# ── Edges ─────────────────────────────────────────────────────────────────────

@lru_cache(maxsize=None)
def _edge_layout(s: int, n: int, b: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    positions = np.arange(s ** n, dtype=np.int64)
    levels = np.arange(n, dtype=np.int64)
    # decision column read at each level for each position along the path
    columns = np.array([decision_length(s, int(l)) for l in levels], dtype=np.int64)[None, :] \
        + positions[:, None] // (s ** (n - levels))[None, :]
    digits = (positions[:, None] // (s ** (n - 1 - levels))[None, :]) % s
    weights = (b * s) ** (n - 1 - levels)
    return columns, digits, weights


def edge_ids(decisions: np.ndarray, params: LatticeParams, n: int) -> np.ndarray:
    """Edge ids crossed by each row of a decision matrix, shape (paths, s^n), in traversal order."""
    decisions = np.atleast_2d(np.asarray(decisions, dtype=np.int64))
    columns, digits, weights = _edge_layout(params.s, n, params.b)
    if n == 0:
        return np.zeros((len(decisions), 1), dtype=np.int64)
    pairs = (decisions[:, columns] - 1) * params.s + digits[None, :, :]
    return pairs @ weights


def path_edges(p: CylinderPath) -> np.ndarray:
    return edge_ids(np.array(p.decisions, dtype=np.int64)[None, :], p.params, p.generation)[0]


def incidence_matrix(decisions: np.ndarray, params: LatticeParams, n: int) -> np.ndarray:
    """0/1 matrix with rows = paths and columns = the (bs)^n generation-n edges."""
    ids = edge_ids(decisions, params, n)
    incidence = np.zeros((ids.shape[0], edge_count(params, n)))
    np.put_along_axis(incidence, ids, 1.0, axis=1)
    return incidence


# ── Intersections ─────────────────────────────────────────────────────────────

def shared_edge_count(p: CylinderPath, q: CylinderPath) -> int:
    """
    N_n(p, q) via N_0 = 1 and N_k = 0 if the top branches differ, else the sum of
    N_{k-1} over the s segment sub-pairs; evaluated bottom-up over the levels.
    """
    _check_pair(p, q)
    s, n = p.params.s, p.generation
    dp = np.asarray(p.decisions)
    dq = np.asarray(q.decisions)
    counts = np.ones(s ** n, dtype=np.int64)
    for level in range(n - 1, -1, -1):
        start = decision_length(s, level)
        same = dp[start:start + s ** level] == dq[start:start + s ** level]
        counts = np.where(same, counts.reshape(s ** level, s).sum(axis=1), 0)
    return int(counts[0])


def shared_edge_matrix(decisions: np.ndarray, params: LatticeParams, n: int) -> np.ndarray:
    incidence = incidence_matrix(decisions, params, n)
    return np.rint(incidence @ incidence.T).astype(np.int64)


def kappa_sq(b: int) -> float:
    return 2.0 / (b - 1)


def kernel_estimate(p: CylinderPath, q: CylinderPath) -> float:
    """κ² N_n(p,q) / n²: a finite-generation estimate of T(p,q), not the limit."""
    p.params.require_critical("kernel_estimate")
    if p.generation < 1:
        raise UsageError("kernel_estimate needs generation >= 1")
    n = p.generation
    return kappa_sq(p.params.b) * shared_edge_count(p, q) / n ** 2


def ultrametric_proxy_distance(p: CylinderPath, q: CylinderPath) -> float:
    """s^(-K) with K the deepest generation at which the coarsenings of p and q agree."""
    _check_pair(p, q)
    s = p.params.s
    mismatch = next((i for i, (x, y) in enumerate(zip(p.decisions, q.decisions)) if x != y), None)
    if mismatch is None:
        depth = p.generation
    else:
        depth = 0
        while decision_length(s, depth + 1) <= mismatch:
            depth += 1
    return float(s) ** (-depth)


# ── Sampling ──────────────────────────────────────────────────────────────────

def sample_uniform_decisions(params: LatticeParams, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(1, params.b + 1, size=(size, decision_length(params.s, n)))


def sample_uniform_path(params: LatticeParams, n: int, rng: np.random.Generator) -> CylinderPath:
    row = sample_uniform_decisions(params, n, 1, rng)[0]
    return CylinderPath(params, n, tuple(int(d) for d in row))


# ── Subcritical formulas (b < s) and dimensions ──────────────────────────────

def _require_subcritical(b: int, s: int) -> None:
    if b >= s:
        raise DomainError(
            f"b={b} >= s={s}: no nontrivial intersection fixed point outside the subcritical regime b < s"
        )


def intersection_fixed_point(b: int, s: int, xtol: float = 1e-15) -> float:
    """Unique fixed point in (0,1) of M(x) = (1 - (1-x)^s)/b, by bisection."""
    _require_subcritical(b, s)

    def excess(x: float) -> float:
        return (1.0 - (1.0 - x) ** s) / b - x

    return optimize.bisect(excess, 1e-9, 1.0, xtol=xtol, maxiter=500)


def intersection_hausdorff_dim(b: int, s: int) -> float:
    _require_subcritical(b, s)
    return (math.log(s) - math.log(b)) / math.log(s)


def dhl_hausdorff_dim(b: int, s: int) -> float:
    """Dimension of the lattice itself; two exactly when b = s."""
    LatticeParams(b, s)
    return (math.log(b) + math.log(s)) / math.log(s)
