"""Two-site sweep optimization of a weight MPS over a labelled dataset.

The model output for a sample state x is the full overlap f(x) = <W, x>, and
training minimizes the ridge-regularized quadratic cost

    C(W) = 1/(2n) sum_j (f(x_j) - y_j)^2 + lam * |W|^2.

Each bond update merges two weight cores into a block, solves the local
least-squares problem with conjugate gradient on the normal equations, and
re-splits with a truncated SVD, absorbing the singular values toward the
next bond. Per-sample environment stacks keep one full sweep linear in the
chain length.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coarsegrain import ScaleData
from .errors import ArgumentError, DimensionError, NumericError, StateError
from .mps import MPS, BondTensor, canonicalize, inner, merge_bond, split_bond
from .util import chunk_ranges, thread_map


@dataclass
class TrainConfig:
    """Hyperparameters of sweep training.

    ``delta_weights`` is the absolute singular-value threshold of weight
    splits and ``chi_max`` the hard bond cap; ``lam`` is the ridge
    coefficient. A "sweep" is one full back-and-forth pass.
    """

    n_sweeps: int = 5
    delta_weights: float = 1e-14
    chi_max: int = 64
    lam: float = 0.0
    cg_max_iters: int = 20
    cg_tol: float = 1e-10
    init_bond: int = 2
    init_scale: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_sweeps < 1:
            raise ArgumentError("n_sweeps must be >= 1")
        if self.delta_weights < 0:
            raise ArgumentError("delta_weights must be >= 0")
        if self.chi_max < 1:
            raise ArgumentError("chi_max must be >= 1")
        if self.lam < 0:
            raise ArgumentError("lam must be >= 0")
        if self.cg_max_iters < 1:
            raise ArgumentError("cg_max_iters must be >= 1")
        if self.cg_tol < 0:
            raise ArgumentError("cg_tol must be >= 0")
        if self.init_bond < 1 or self.init_scale <= 0:
            raise ArgumentError("init_bond must be >= 1 and init_scale > 0")


@dataclass
class SweepStats:
    """Telemetry for one pass (or one full sweep, when emitted by train)."""

    sweep_index: int
    cost: float
    max_bond: int
    train_metric: float
    wall_time: float
    truncated_weight: float = 0.0


@dataclass
class SweepEvent:
    """Per-bond record handed to a monitor callback during a sweep."""

    direction: str
    bond: int
    cost_before: float
    cost_solved: float
    cost_truncated: float
    truncation_error: float


class Environment:
    """Per-sample partial contractions of the weight chain with every sample.

    ``left[s][j]`` contracts sites < j and ``right[s][j]`` contracts sites
    >= j, both as (weight bond, sample bond) matrices. Stacks are refreshed
    lazily in the direction a sweep consumes them.
    """

    def __init__(self, w: MPS, data: ScaleData, threads: int = 1):
        if data.n_samples == 0:
            raise ArgumentError("empty dataset")
        if data.n_sites != len(w):
            raise DimensionError(f"weights cover {len(w)} sites, samples {data.n_sites}")
        for x in data.samples:
            if x.site_dims != w.site_dims:
                raise DimensionError("sample site dimensions do not match the weights")
        self.data = data
        self.threads = threads
        self.n_sites = len(w)
        n = data.n_samples
        edge = np.ones((1, 1))
        self.left = [[None] * (self.n_sites + 1) for _ in range(n)]
        self.right = [[None] * (self.n_sites + 1) for _ in range(n)]
        for s in range(n):
            self.left[s][0] = edge
            self.right[s][self.n_sites] = edge

    def _foreach_sample(self, fn: Callable[[int], None]) -> None:
        if self.threads <= 1:
            for s in range(self.data.n_samples):
                fn(s)
            return

        def run(rng):
            for s in rng:
                fn(s)

        thread_map(run, chunk_ranges(self.data.n_samples, self.threads), self.threads)

    def refresh_right(self, w: MPS, down_to: int = 1) -> None:
        """Recompute right[s][j] for all j >= down_to from the current cores."""
        def fill(s):
            x = self.data.samples[s]
            for j in range(self.n_sites - 1, down_to - 1, -1):
                self.right[s][j] = _step_right(w.cores[j], x.cores[j], self.right[s][j + 1])

        self._foreach_sample(fill)

    def refresh_left(self, w: MPS, up_to: int | None = None) -> None:
        """Recompute left[s][j] for all j <= up_to from the current cores."""
        if up_to is None:
            up_to = self.n_sites - 1

        def fill(s):
            x = self.data.samples[s]
            for j in range(up_to):
                self.left[s][j + 1] = _step_left(self.left[s][j], w.cores[j], x.cores[j])

        self._foreach_sample(fill)

    def advance_left(self, w: MPS, j: int) -> None:
        """Update left[s][j+1] after core j changed during a rightward pass."""
        def fill(s):
            self.left[s][j + 1] = _step_left(self.left[s][j], w.cores[j],
                                             self.data.samples[s].cores[j])

        self._foreach_sample(fill)

    def advance_right(self, w: MPS, j: int) -> None:
        """Update right[s][j] after core j changed during a leftward pass."""
        def fill(s):
            self.right[s][j] = _step_right(w.cores[j], self.data.samples[s].cores[j],
                                           self.right[s][j + 1])

        self._foreach_sample(fill)

    def window_matrix(self, j: int) -> np.ndarray:
        """Stack each sample's projection into the (j, j+1) window.

        Row s flattens a (left bond, site, site, right bond) tensor in the
        same order as BondTensor.value.ravel(), so ``rows @ b.ravel()`` are
        the model outputs.
        """
        n = self.data.n_samples
        lw = self.left[0][j]
        rw = self.right[0][j + 2]
        if lw is None or rw is None:
            raise StateError(f"environment stacks not built for bond {j}")
        width = lw.shape[0] * 4 * rw.shape[0]
        out = np.empty((n, width))

        def fill(s):
            lm = self.left[s][j]
            rm = self.right[s][j + 2]
            xj = self.data.samples[s].cores[j]
            xj1 = self.data.samples[s].cores[j + 1]
            t = lm @ xj.reshape(xj.shape[0], -1)
            t = t.reshape(-1, xj.shape[2]) @ xj1.reshape(xj1.shape[0], -1)
            out[s] = (t.reshape(-1, rm.shape[1]) @ rm.T).ravel()

        self._foreach_sample(fill)
        return out


def _step_left(left: np.ndarray, wc: np.ndarray, xc: np.ndarray) -> np.ndarray:
    t = np.tensordot(left, wc, axes=(0, 0))            # (bx, s, bw')
    return np.tensordot(t, xc, axes=([0, 1], [0, 1]))  # (bw', bx')


def _step_right(wc: np.ndarray, xc: np.ndarray, right: np.ndarray) -> np.ndarray:
    t = np.tensordot(wc, right, axes=(2, 0))           # (bw, s, bx')
    return np.tensordot(t, xc, axes=([1, 2], [1, 2]))  # (bw, bx)


def model_output(w: MPS, x: MPS) -> float:
    """Scalar model response for one sample state."""
    return inner(w, x)


def model_outputs(w: MPS, data: ScaleData) -> np.ndarray:
    return np.array([inner(w, x) for x in data.samples])


def cost(w: MPS, data: ScaleData, lam: float = 0.0) -> float:
    """Mean squared error halved, plus the ridge term lam * |W|^2."""
    if data.n_samples == 0:
        raise ArgumentError("empty dataset")
    resid = model_outputs(w, data) - data.labels
    value = 0.5 * float(resid @ resid) / data.n_samples
    if lam:
        value += lam * inner(w, w)
    return value


def _window_cost(phi: np.ndarray, vec: np.ndarray, y: np.ndarray, lam: float) -> float:
    resid = phi @ vec - y
    value = 0.5 * float(resid @ resid) / len(y)
    if lam:
        value += lam * float(vec @ vec)
    return value


def local_gradient(env: Environment, b: BondTensor, lam: float = 0.0) -> BondTensor:
    """Negative cost gradient with respect to the merged block ``b``.

    Valid when the weights are canonical around the window, so that the
    ridge term reduces to lam * |b|^2.
    """
    phi = env.window_matrix(b.site_index)
    vec = b.value.ravel()
    if phi.shape[1] != vec.size:
        raise StateError("environment stacks disagree with the bond tensor shape")
    resid = env.data.labels - phi @ vec
    grad = phi.T @ resid / env.data.n_samples - 2.0 * lam * vec
    return BondTensor(grad.reshape(b.value.shape), b.site_index)


def _cg_normal(phi: np.ndarray, y: np.ndarray, x0: np.ndarray, lam: float,
               max_iters: int, tol: float) -> np.ndarray:
    """Conjugate gradient on (Phi^T Phi / n + 2 lam I) x = Phi^T y / n.

    The iterate monotonically decreases the quadratic objective, so the
    window cost never rises above its value at x0.
    """
    n = len(y)

    def matvec(v):
        out = phi.T @ (phi @ v) / n
        if lam:
            out += 2.0 * lam * v
        return out

    rhs = phi.T @ y / n
    anorm = float(np.sum(phi * phi)) / n + 2.0 * lam
    x = x0.copy()
    r = rhs - matvec(x)
    stop = tol * max(float(np.linalg.norm(rhs)), np.finfo(np.float64).tiny)
    rr = float(r @ r)
    if rr ** 0.5 <= stop:
        return x
    p = r.copy()
    for _ in range(max_iters):
        ap = matvec(p)
        pap = float(p @ ap)
        if not np.isfinite(pap):
            raise NumericError("conjugate gradient produced non-finite values; "
                               "try a larger lam or smaller chi_max")
        if pap <= 1e-14 * anorm * float(p @ p):
            # curvature along p is zero up to roundoff (rank-deficient
            # window): stepping further only amplifies null-space noise
            break
        alpha = rr / pap
        x += alpha * p
        r -= alpha * ap
        rr_new = float(r @ r)
        if not np.isfinite(rr_new):
            raise NumericError("conjugate gradient diverged; "
                               "try a larger lam or smaller chi_max")
        if rr_new ** 0.5 <= stop:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


def solve_local(b0: BondTensor, env: Environment, lam: float = 0.0,
                cg_max_iters: int = 20, cg_tol: float = 1e-10) -> BondTensor:
    """Minimize the window cost over the merged block, starting from ``b0``.

    Never returns a block with higher window cost than ``b0``.
    """
    phi = env.window_matrix(b0.site_index)
    vec0 = b0.value.ravel()
    if phi.shape[1] != vec0.size:
        raise StateError("environment stacks disagree with the bond tensor shape")
    y = env.data.labels
    vec = _cg_normal(phi, y, vec0, lam, cg_max_iters, cg_tol)
    if _window_cost(phi, vec, y, lam) > _window_cost(phi, vec0, y, lam):
        vec = vec0  # roundoff ascent: keep the starting block
    return BondTensor(vec.reshape(b0.value.shape), b0.site_index)


def _metric_from_outputs(f: np.ndarray, y: np.ndarray, task: str) -> float:
    if task == "classification":
        pred = np.where(f >= 0, 1.0, -1.0)
        truth = np.where(y >= 0, 1.0, -1.0)
        return float(np.mean(pred == truth))
    if task == "regression":
        return float(np.mean(np.abs(f - y)))
    raise ArgumentError(f"unknown task {task!r}")


def sweep(w: MPS, data: ScaleData, cfg: TrainConfig, direction: str = "lr",
          env: Environment | None = None, task: str = "regression",
          monitor: Callable[[SweepEvent], None] | None = None) -> tuple[MPS, SweepStats]:
    """One optimization pass over all bonds, left-to-right or right-to-left.

    With a persistent ``env``, alternating passes reuse the stacks built by
    the previous pass; a fresh environment is filled for the direction.
    """
    if direction not in ("lr", "rl"):
        raise ArgumentError(f"direction must be 'lr' or 'rl', got {direction!r}")
    n_sites = len(w)
    if n_sites < 2:
        raise ArgumentError("sweeping needs at least two sites")
    t0 = time.perf_counter()
    start = 0 if direction == "lr" else n_sites - 1
    w = canonicalize(w, start)
    if env is None:
        env = Environment(w, data, threads=1)
        if direction == "lr":
            env.refresh_right(w)
        else:
            env.refresh_left(w)
    y = data.labels
    lam = cfg.lam
    trunc_total = 0.0
    final_cost = np.nan
    final_resid = None
    bonds = range(n_sites - 1) if direction == "lr" else range(n_sites - 2, -1, -1)
    for j in bonds:
        b = merge_bond(w, j)
        phi = env.window_matrix(j)
        vec0 = b.value.ravel()
        if phi.shape[1] != vec0.size:
            raise StateError("environment stacks out of step with the weights")
        c_before = _window_cost(phi, vec0, y, lam)
        vec = _cg_normal(phi, y, vec0, lam, cfg.cg_max_iters, cfg.cg_tol)
        c_solved = _window_cost(phi, vec, y, lam)
        if c_solved > c_before:
            vec, c_solved = vec0, c_before
        new_center = j + 1 if direction == "lr" else j
        slack = 1e-12 * (c_before + float(y @ y) / len(y))
        w_new, err = split_bond(w, BondTensor(vec.reshape(b.value.shape), j),
                                cfg.delta_weights, cfg.chi_max, new_center)
        merged = merge_bond(w_new, j).value.ravel()
        c_trunc = _window_cost(phi, merged, y, lam)
        if c_trunc > c_before + slack:
            # the solve only helped in directions the bond cap cannot keep;
            # re-split the original block so the pass stays monotone
            w_new, err = split_bond(w, b, cfg.delta_weights, cfg.chi_max,
                                    new_center)
            merged = merge_bond(w_new, j).value.ravel()
            c_trunc = _window_cost(phi, merged, y, lam)
        w = w_new
        trunc_total += err
        if monitor is not None:
            monitor(SweepEvent(direction, j, c_before, c_solved, c_trunc, err))
        if direction == "lr":
            env.advance_left(w, j)
        else:
            env.advance_right(w, j + 1)
        final_cost = c_trunc
        final_resid = phi @ merged - y
    stats = SweepStats(
        sweep_index=0,
        cost=final_cost,
        max_bond=w.max_bond,
        train_metric=_metric_from_outputs(final_resid + y, y, task),
        wall_time=time.perf_counter() - t0,
        truncated_weight=trunc_total,
    )
    return w, stats


def random_weights(n_sites: int, cfg: TrainConfig, site_dim: int = 2) -> MPS:
    """Small zero-mean random start, so initial outputs are close to zero."""
    if n_sites < 2:
        raise ArgumentError("weights need at least two sites")
    rng = np.random.default_rng(cfg.seed)
    bonds = [1] + [cfg.init_bond] * (n_sites - 1) + [1]
    cores = [rng.normal(size=(bonds[j], site_dim, bonds[j + 1])) * cfg.init_scale
             for j in range(n_sites)]
    return MPS(cores)


def train(data: ScaleData, cfg: TrainConfig, w0: MPS | None = None,
          task: str = "regression", threads: int = 1,
          monitor: Callable[[SweepEvent], None] | None = None) -> tuple[MPS, list[SweepStats]]:
    """Run cfg.n_sweeps full back-and-forth sweeps; returns weights and stats.

    Starts from ``w0`` when given, otherwise from a seeded random chain.
    One SweepStats entry is emitted per full sweep, measured after its
    returning pass.
    """
    if data.n_samples == 0:
        raise ArgumentError("empty dataset")
    _metric_from_outputs(np.zeros(1), np.zeros(1), task)  # validate the task name
    w = w0.copy() if w0 is not None else random_weights(data.n_sites, cfg)
    w = canonicalize(w, 0)
    env = Environment(w, data, threads=threads)
    env.refresh_right(w)
    stats: list[SweepStats] = []
    for k in range(cfg.n_sweeps):
        t0 = time.perf_counter()
        w, forth = sweep(w, data, cfg, "lr", env, task, monitor)
        w, back = sweep(w, data, cfg, "rl", env, task, monitor)
        stats.append(SweepStats(
            sweep_index=k,
            cost=back.cost,
            max_bond=back.max_bond,
            train_metric=back.train_metric,
            wall_time=time.perf_counter() - t0,
            truncated_weight=forth.truncated_weight + back.truncated_weight,
        ))
    return w, stats


def evaluate(w: MPS, data: ScaleData, task: str) -> float:
    """Accuracy for classification (sign match, ties to +1), mean absolute
    deviation for regression."""
    if data.n_samples == 0:
        raise ArgumentError("empty dataset")
    return _metric_from_outputs(model_outputs(w, data), data.labels, task)
