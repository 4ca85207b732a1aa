"""
ot_align.py
Laplacian-regularized optimal transport from image embeddings (source)
onto text embeddings (target).

The plan gamma minimizes

    <gamma, C>_F + eta / n^2 * (lambda_s * sum_ij S^s_ij ||d_i - d_j||^2
                                + lambda_t * sum_ij S^t_ij ||d'_i - d'_j||^2)

over couplings with marginals mu and nu, where C is the squared Euclidean
cost, d_i is the barycentric image of source point i (minus x_i in
displacement mode) and d'_j the same for target point j under gamma^T.
The solver is POT's generalized conditional gradient (`ot.optim.cg`): each
iteration solves an exact EMD on the linearized objective and line-searches
exactly on the quadratic.
"""

from __future__ import annotations

import json
import logging
import warnings
import zipfile
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np
import ot
from scipy.sparse.csgraph import laplacian
from sklearn.neighbors import NearestNeighbors, kneighbors_graph

from gapkit.embedding_io import PairedDataset
from gapkit.errors import ConvergenceWarning, NumericsError, ShapeMismatchError, ValidationError
from gapkit.helpers import _as_array
from gapkit.numerics import SimilarityMetric, pairwise_sq_euclidean, similarity_matrix

logger = logging.getLogger(__name__)

DEFAULT_SIM_K = 10
DEFAULT_OOS_NEIGHBORS = 5
EMD_MAX_ITER = 10_000_000
MARGINAL_TOL = 1e-10
SOLVER_VERSION = "gapkit-pot-cg/2"
PLAN_ARRAYS = ("gamma", "mu", "nu", "x_train", "y_train")


class RegMode(str, Enum):
    DISPLACEMENT = "displacement"
    POSITION = "position"


class SimilarityGraph(str, Enum):
    KNN = "knn"
    GAUSS = "gauss"


@dataclass(frozen=True)
class OtParams:
    """
    Hyper-parameters of the regularized transport.

    Attributes:
        eta: overall regularization weight (>= 0)
        lambda_s: weight of the source smoothness term (>= 0)
        lambda_t: weight of the target smoothness term (>= 0)
        sim_k: neighbour count of the S^s / S^t graphs (>= 1)
        reg_mode: regularize displacements or transported positions
        max_iters: conditional-gradient iteration cap
        tol: relative objective decrease below which the solver stops
        sim: similarity graph family for S^s / S^t
    """

    eta: float = 1.0
    lambda_s: float = 1.0
    lambda_t: float = 1.0
    sim_k: int = DEFAULT_SIM_K
    reg_mode: RegMode = RegMode.DISPLACEMENT
    max_iters: int = 100
    tol: float = 1e-9
    sim: SimilarityGraph = SimilarityGraph.KNN

    def __post_init__(self):
        for name in ("eta", "lambda_s", "lambda_t"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.sim_k < 1:
            raise ValidationError(f"sim_k must be >= 1, got {self.sim_k}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ValidationError(f"tol must be > 0, got {self.tol}")
        object.__setattr__(self, "reg_mode", RegMode(self.reg_mode))
        object.__setattr__(self, "sim", SimilarityGraph(self.sim))

    def to_dict(self) -> dict:
        record = asdict(self)
        record["reg_mode"] = self.reg_mode.value
        record["sim"] = self.sim.value
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "OtParams":
        return cls(**record)


@dataclass(frozen=True)
class TransportPlan:
    """
    A fitted coupling plus what is needed to map new points.

    Attributes:
        gamma: (n x m) non-negative coupling
        mu, nu: source and target marginals
        x_train, y_train: source and target support points
        params: the OtParams used for fitting
        objective_trace: objective value at the start and after each iteration
        converged: False when the solver stopped on max_iters
    """

    gamma: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    x_train: np.ndarray
    y_train: np.ndarray
    params: OtParams = field(default_factory=OtParams)
    objective_trace: tuple[float, ...] = ()
    converged: bool = True

    def feasibility_error(self) -> float:
        """Largest violation of gamma >= 0 and of both marginal constraints."""
        return max(
            float(np.abs(self.gamma.sum(axis=1) - self.mu).max()),
            float(np.abs(self.gamma.sum(axis=0) - self.nu).max()),
            float(max(0.0, -self.gamma.min())),
        )


def build_knn_similarity(X, k: int) -> np.ndarray:
    """
    Symmetrized k-nearest-neighbour graph with clamped cosine weights.

    Neighbours are found by cosine distance with the point itself excluded;
    an edge exists when either endpoint lists the other (union).

    Args:
        X (array-like): (n x d) points without zero rows.
        k (int): 1 <= k < n.
    Returns:
        np.ndarray: (n x n) symmetric weights, zero diagonal.
    """
    X = _as_array(X)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValidationError(f"k={k} out of range [1, {n - 1}]")
    cosine = similarity_matrix(X, X, SimilarityMetric.COSINE)
    edges = kneighbors_graph(
        X, n_neighbors=k, mode="connectivity", metric="cosine", include_self=False
    ).toarray() > 0
    edges = edges | edges.T
    weights = np.where(edges, np.maximum(cosine, 0.0), 0.0)
    np.fill_diagonal(weights, 0.0)
    return weights


def build_gauss_similarity(X) -> np.ndarray:
    """Gaussian kernel exp(-||x_i - x_j||^2 / h), h the mean squared distance."""
    X = _as_array(X)
    distances = pairwise_sq_euclidean(X, X)
    off_diagonal = distances[~np.eye(len(X), dtype=bool)]
    bandwidth = float(off_diagonal.mean()) if off_diagonal.size else 1.0
    weights = np.exp(-distances / max(bandwidth, np.finfo(float).tiny))
    np.fill_diagonal(weights, 0.0)
    return weights


def _similarity_graph(points: np.ndarray, params: OtParams) -> np.ndarray:
    if params.sim is SimilarityGraph.GAUSS:
        return build_gauss_similarity(points)
    k = params.sim_k
    if k >= len(points):
        k = len(points) - 1
        logger.info("sim_k=%d clamped to %d for %d points", params.sim_k, k, len(points))
    return build_knn_similarity(points, k)


def solve_emd(mu, nu, C) -> np.ndarray:
    """
    Exact optimal transport plan (network simplex, POT's `ot.emd`).

    Args:
        mu (array-like): (n,) non-negative source masses.
        nu (array-like): (m,) non-negative target masses, same total as mu.
        C (array-like): (n x m) cost matrix.
    Returns:
        np.ndarray: (n x m) optimal vertex plan.
    Raises:
        ValidationError: negative mass or marginal mismatch.
        NumericsError: the network simplex did not reach optimality.
    """
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    nu = np.ascontiguousarray(nu, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    if C.shape != (mu.size, nu.size):
        raise ShapeMismatchError(
            f"cost matrix shape {C.shape} does not match marginals ({mu.size}, {nu.size})"
        )
    if (mu < 0).any() or (nu < 0).any():
        raise ValidationError("negative mass in a marginal")
    if abs(mu.sum() - nu.sum()) > MARGINAL_TOL:
        raise ValidationError(
            f"marginal mismatch: source mass {mu.sum():.12g}, target mass {nu.sum():.12g}"
        )
    plan, log = ot.emd(mu, nu, C, numItermax=EMD_MAX_ITER, log=True)
    if log.get("warning"):
        raise NumericsError(f"network simplex failed: {log['warning']}")
    return np.asarray(plan, dtype=np.float64)


class _LaplaceProblem:
    """
    Quadratic objective of the regularized transport for fixed data.

    Uses instance attributes:
        - C: squared Euclidean cost between source and target
        - L_s, L_t: graph Laplacians of S^s and S^t
        - weight: eta / n^2
        - shift: 1 for displacement regularization, 0 for positions
    """

    def __init__(self, X, Y, params: OtParams, S_s, S_t, mu, nu):
        self.X, self.Y = X, Y
        self.mu, self.nu = mu, nu
        self.params = params
        self.C = pairwise_sq_euclidean(X, Y)
        self.L_s = laplacian(S_s)
        self.L_t = laplacian(S_t)
        self.weight = params.eta / X.shape[0] ** 2
        self.shift = 1.0 if params.reg_mode is RegMode.DISPLACEMENT else 0.0

    @property
    def regularized(self) -> bool:
        return self.weight > 0 and (self.params.lambda_s > 0 or self.params.lambda_t > 0)

    def _mapped(self, gamma, shift):
        source = (gamma @ self.Y) / self.mu[:, None] - shift * self.X
        target = (gamma.T @ self.X) / self.nu[:, None] - shift * self.Y
        return source, target

    def _smoothness(self, source, target) -> float:
        # sum_ij S_ij ||e_i - e_j||^2 = 2 tr(E^T L E)
        return 2.0 * (
            self.params.lambda_s * float(np.sum(source * (self.L_s @ source)))
            + self.params.lambda_t * float(np.sum(target * (self.L_t @ target)))
        )

    def terms(self, gamma) -> tuple[float, float]:
        cost = float(np.sum(gamma * self.C))
        if not self.regularized:
            return cost, 0.0
        return cost, self.regularizer(gamma)

    def objective(self, gamma) -> float:
        return sum(self.terms(gamma))

    def regularizer(self, gamma) -> float:
        source, target = self._mapped(gamma, self.shift)
        return self.weight * self._smoothness(source, target)

    def regularizer_gradient(self, gamma) -> np.ndarray:
        source, target = self._mapped(gamma, self.shift)
        grad_s = (self.L_s @ source @ self.Y.T) / self.mu[:, None]
        grad_t = (self.X @ target.T @ self.L_t) / self.nu[None, :]
        return 4.0 * self.weight * (
            self.params.lambda_s * grad_s + self.params.lambda_t * grad_t
        )

    def curvature(self, direction) -> float:
        """Coefficient a of step^2 in objective(gamma + step * direction)."""
        source, target = self._mapped(direction, 0.0)
        return self.weight * self._smoothness(source, target)

    def line_search(self, cost, G, deltaG, Mi, cost_G, *args, **kwargs):
        """
        Exact step on the quadratic objective, in the form `ot.optim.cg` calls it.

        Mi is the linearized cost; it may be offset by a constant, which does
        not change its inner product with a direction between two couplings.

        Returns:
            tuple: (step, function evaluations, objective at the new plan).
        """
        slope = float(np.sum(Mi * deltaG))
        if slope >= 0.0:
            return 0.0, 0, cost_G
        curvature = self.curvature(deltaG)
        step = 1.0 if curvature <= 0.0 else min(1.0, -slope / (2.0 * curvature))
        return step, 1, float(cost(G + step * deltaG))


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def transport_objective(
    gamma, X, Y, params: OtParams, S_s=None, S_t=None
) -> tuple[float, float]:
    """
    Evaluate the transport-cost and smoothness terms of a plan separately.

    Returns:
        tuple[float, float]: (<gamma, C>, regularizer) under uniform marginals.
    """
    X, Y = _as_array(X), _as_array(Y)
    S_s = _similarity_graph(X, params) if S_s is None else S_s
    S_t = _similarity_graph(Y, params) if S_t is None else S_t
    problem = _LaplaceProblem(
        X, Y, params, S_s, S_t, _uniform(X.shape[0]), _uniform(Y.shape[0])
    )
    return problem.terms(np.asarray(gamma, dtype=np.float64))


def solve_laplace_ot(dataset: PairedDataset, params: Optional[OtParams] = None) -> TransportPlan:
    """
    Fit the Laplacian-regularized transport of images onto texts.

    Runs POT's conditional gradient (`ot.optim.cg`) from the exact EMD plan,
    with an exact line search on the quadratic objective, so the objective
    never increases.

    Args:
        dataset (PairedDataset): training pairs, n >= 2.
        params (OtParams): hyper-parameters.
    Returns:
        TransportPlan: plan with objective trace; converged=False (and a
        ConvergenceWarning) when max_iters was exhausted.
    """
    params = params or OtParams()
    n = dataset.n
    if n < 2:
        raise ValidationError("regularized transport needs at least 2 pairs")
    X, Y = np.array(dataset.X), np.array(dataset.Y)
    mu, nu = _uniform(n), _uniform(n)

    problem = _LaplaceProblem(
        X, Y, params, _similarity_graph(X, params), _similarity_graph(Y, params), mu, nu
    )
    gamma = solve_emd(mu, nu, problem.C)
    if not problem.regularized:
        trace = (problem.objective(gamma),)
        logger.info("transport fitted on %d pairs by exact EMD: cost %.6g", n, trace[0])
        return TransportPlan(gamma, mu, nu, X, Y, params, trace, True)

    gamma, log = ot.optim.cg(
        mu,
        nu,
        problem.C,
        reg=1.0,
        f=problem.regularizer,
        df=problem.regularizer_gradient,
        G0=gamma,
        line_search=problem.line_search,
        numItermax=params.max_iters,
        numItermaxEmd=EMD_MAX_ITER,
        stopThr=params.tol,
        stopThr2=np.finfo(float).tiny,
        log=True,
    )
    gamma = np.asarray(gamma, dtype=np.float64)
    trace = tuple(float(value) for value in log["loss"])
    iterations = len(trace) - 1
    converged = iterations < params.max_iters or _settled(trace, params.tol)

    if not converged:
        message = (
            f"regularized transport stopped after {params.max_iters} iterations; "
            f"objective {trace[-1]:.6g}"
        )
        logger.warning(message)
        warnings.warn(message, ConvergenceWarning, stacklevel=2)
    logger.info(
        "transport fitted on %d pairs in %d iterations: objective %.6g -> %.6g",
        n,
        iterations,
        trace[0],
        trace[-1],
    )
    return TransportPlan(gamma, mu, nu, X, Y, params, trace, converged)


def _settled(trace: tuple[float, ...], tol: float) -> bool:
    if len(trace) < 2:
        return True
    change = abs(trace[-2] - trace[-1])
    return change < tol * abs(trace[-1]) or change < np.finfo(float).tiny


def _barycentric(coupling: np.ndarray, masses: np.ndarray, support: np.ndarray) -> np.ndarray:
    empty = np.flatnonzero(masses <= 0)
    if empty.size:
        raise ValidationError(f"zero marginal at row {int(empty[0])}")
    return (coupling @ support) / masses[:, None]


def transport_in_sample(plan: TransportPlan) -> np.ndarray:
    """Barycentric image of each training source point: (1/mu_i) sum_j gamma_ij y_j."""
    return _barycentric(plan.gamma, plan.mu, plan.y_train)


def transport_inverse_in_sample(plan: TransportPlan) -> np.ndarray:
    """Barycentric image of each training target point under gamma^T."""
    return _barycentric(plan.gamma.T, plan.nu, plan.x_train)


def _displace(points, anchors, displacements, nn: int) -> np.ndarray:
    points = _as_array(points)
    if anchors.shape[0] == 0:
        raise ValidationError("empty training set")
    if points.ndim != 2 or points.shape[1] != anchors.shape[1]:
        raise ShapeMismatchError(
            f"dimension mismatch: points have {points.shape[-1]} columns, "
            f"training set {anchors.shape[1]}"
        )
    if nn < 1:
        raise ValidationError(f"nn must be >= 1, got {nn}")
    nn = min(nn, anchors.shape[0])
    index = NearestNeighbors(n_neighbors=nn).fit(anchors)
    _, neighbours = index.kneighbors(points)
    return points + displacements[neighbours].mean(axis=1)


def transport_out_of_sample(
    plan: TransportPlan, X_new, nn: int = DEFAULT_OOS_NEIGHBORS
) -> np.ndarray:
    """
    Map new source points by the mean displacement of their nn nearest
    training source points.
    """
    displacements = transport_in_sample(plan) - plan.x_train
    return _displace(X_new, plan.x_train, displacements, nn)


def transport_inverse_out_of_sample(
    plan: TransportPlan, Y_new, nn: int = DEFAULT_OOS_NEIGHBORS
) -> np.ndarray:
    """Map new target points onto the source side (gamma^T direction)."""
    displacements = transport_inverse_in_sample(plan) - plan.y_train
    return _displace(Y_new, plan.y_train, displacements, nn)


def save_plan(plan: TransportPlan, path: Union[str, Path]) -> Path:
    """
    Write a plan container: one NPY entry per array plus metadata.json.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {
        "params": plan.params.to_dict(),
        "objective_trace": list(plan.objective_trace),
        "converged": plan.converged,
        "solver_version": SOLVER_VERSION,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as container:
        for name in PLAN_ARRAYS:
            with container.open(f"{name}.npy", "w") as handle:
                np.lib.format.write_array(
                    handle, np.ascontiguousarray(getattr(plan, name)), version=(1, 0)
                )
        container.writestr("metadata.json", json.dumps(metadata, indent=2, sort_keys=True))
    return path


def load_plan(path: Union[str, Path]) -> TransportPlan:
    """Read a container written by save_plan."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"plan file not found: {path}")
    with zipfile.ZipFile(path) as container:
        arrays = {}
        for name in PLAN_ARRAYS:
            with container.open(f"{name}.npy") as handle:
                arrays[name] = np.lib.format.read_array(handle, allow_pickle=False)
        metadata = json.loads(container.read("metadata.json"))
    return TransportPlan(
        params=OtParams.from_dict(metadata["params"]),
        objective_trace=tuple(metadata["objective_trace"]),
        converged=bool(metadata["converged"]),
        **arrays,
    )
