"""Numerical witnesses for a KCL-preserving linear map between depth currents.

Given n < d pairs of depth-current vectors, a unit vector w orthogonal to
every difference I_a - I_b always exists, and phi(x) = w.x maps each pair to
one value. For unit-normalized inputs the difference matrix is controlled by
eps = max(1 - cos): sigma_min(A) <= ||A||_F <= sqrt(2 n eps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .agnn import forward_async, node_features
from .cktgraph import CircuitDag, DepthAssignment, assign_depths
from .errors import DimensionError, NotNormalized, NoWitness, TooFewDepths, TooManyPairs
from .kclloss import depth_current_embeddings
from .linalg import frobenius_norm, null_space_vector, smallest_singular_value
from .tensor import Tensor

WITNESS_TOL = 1e-9
NORM_TOL = 1e-9


@dataclass
class KclWitness:
    w: np.ndarray
    c: float
    residuals: np.ndarray
    A: np.ndarray
    sigma_min: float
    frobenius: float
    epsilon: float = float("nan")

    @property
    def residual_max(self) -> float:
        return float(self.residuals.max()) if self.residuals.size else 0.0

    @property
    def holds(self) -> bool:
        return self.residual_max <= WITNESS_TOL * max(1.0, self.frobenius)

    def phi(self, x) -> float:
        return float(self.w @ np.asarray(x, dtype=np.float64) + self.c)


def difference_matrix(I, I_prime) -> np.ndarray:
    """d x n matrix whose column i is I[i] - I_prime[i]."""
    a = [np.asarray(v, dtype=np.float64).ravel() for v in I]
    b = [np.asarray(v, dtype=np.float64).ravel() for v in I_prime]
    if len(a) != len(b) or not a:
        raise DimensionError(f"need equally many vectors on both sides, got {len(a)} and {len(b)}")
    d = a[0].size
    if any(v.size != d for v in (*a, *b)):
        raise DimensionError("vectors differ in length")
    n = len(a)
    if n >= d:
        raise DimensionError(f"need n < d, got n={n}, d={d}")
    return np.stack([x - y for x, y in zip(a, b)], axis=1)


def construct_phi(A) -> KclWitness:
    A = np.asarray(A, dtype=np.float64)
    fro = frobenius_norm(A)
    w = null_space_vector(A)
    if w is None:
        raise NoWitness(f"difference matrix of shape {A.shape} has full row rank (||A||_F={fro:.3e})")
    residuals = np.abs(w @ A)
    sigma = smallest_singular_value(A) if A.size else 0.0
    witness = KclWitness(w, 0.0, residuals, A, sigma, fro)
    if not witness.holds:
        raise NoWitness(
            f"residual {witness.residual_max:.3e} exceeds tolerance; "
            f"||A||_F={fro:.3e}, sigma_min={sigma:.3e}"
        )
    return witness


@dataclass
class EpsilonReport:
    epsilon: float
    frobenius: float
    bound: float
    sigma_min: float

    @property
    def chain_holds(self) -> bool:
        return self.sigma_min <= self.frobenius + 1e-12 and self.frobenius <= self.bound + 1e-12


def epsilon_bound_report(I, I_prime) -> EpsilonReport:
    """eps, ||A||_F, sqrt(2 n eps) and sigma_min for unit-normalized pairs."""
    for v in (*I, *I_prime):
        nv = float(np.linalg.norm(np.asarray(v, dtype=np.float64)))
        if abs(nv - 1.0) > NORM_TOL:
            raise NotNormalized(f"input norm {nv!r} is not 1")
    A = difference_matrix(I, I_prime)
    n = A.shape[1]
    eps = max(1.0 - float(np.dot(x, y)) for x, y in zip(I, I_prime))
    eps = max(eps, 0.0)
    return EpsilonReport(eps, frobenius_norm(A), math.sqrt(2.0 * n * eps), smallest_singular_value(A))


def _unit(v: np.ndarray) -> np.ndarray:
    nv = np.linalg.norm(v)
    if nv < 1e-12:
        out = np.zeros_like(v)
        out[0] = 1.0
        return out
    return v / nv


def depth_pairs(currents) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Disjoint pairing of consecutive depths: (0,1), (2,3), ..."""
    m = len(currents) - len(currents) % 2
    return [currents[i].I for i in range(0, m, 2)], [currents[i].I for i in range(1, m, 2)]


@dataclass
class VerifyResult:
    circuit: str
    witness: KclWitness
    n: int
    d: int
    epsilon: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.witness.holds

    def to_json(self) -> dict:
        return {
            "circuit": self.circuit,
            "n": self.n,
            "d": self.d,
            "residual_max": self.witness.residual_max,
            "epsilon": self.epsilon,
            "frobenius": self.witness.frobenius,
            "bound": self.bound,
            "sigma_min": self.witness.sigma_min,
            "pass": self.passed,
        }


def verify_trained_model(params: dict[str, Tensor], dag: CircuitDag,
                         depths: DepthAssignment | None = None) -> VerifyResult:
    """Witness for the depth currents of one circuit under the given encoder."""
    depths = depths or assign_depths(dag)
    emb = forward_async(dag, depths, node_features(dag), params)
    currents = depth_current_embeddings(emb, depths)
    if len(currents) < 2:
        raise TooFewDepths("need at least two non-empty depths")
    I, Ip = depth_pairs(currents)
    hidden = emb.h.shape[1]
    if len(I) >= hidden:
        raise TooManyPairs(f"{len(I)} depth pairs with hidden size {hidden}")
    witness = construct_phi(difference_matrix(I, Ip))
    rep = epsilon_bound_report([_unit(v) for v in I], [_unit(v) for v in Ip])
    witness.epsilon = rep.epsilon
    return VerifyResult(dag.name, witness, len(I), hidden, rep.epsilon, rep.bound)
