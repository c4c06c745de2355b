"""Adam with gradient clipping and barrier continuation, for network or element design variables."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import constraints as C
from . import field_net as fn
from .errors import IllPosedProblem, InvalidArgument, NonFiniteError, RunAborted, SolverFailure
from .fea import ThermoElasticModel, element_props
from .mesh import BoundaryConditions, Grid2D, element_centers

log = logging.getLogger(__name__)


def clip_gradient(g: np.ndarray, threshold: float) -> np.ndarray:
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("gradient has non-finite entries")
    norm = np.linalg.norm(g)
    if norm > threshold:
        return g * (threshold / norm)
    return g


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(state: AdamState, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Bias-corrected Adam update; mutates ``state`` and returns the new parameters."""
    if x.shape != state.m.shape or grad.shape != x.shape:
        raise InvalidArgument("Adam state, parameters and gradient must share a shape")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad**2
    m_hat = state.m / (1 - state.beta1**state.step)
    v_hat = state.v / (1 - state.beta2**state.step)
    x_new = x - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(x_new)):
        raise NonFiniteError(f"non-finite Adam update at step {state.step}",
                             dump={"step": state.step, "grad_norm": float(np.linalg.norm(grad))})
    return x_new


@dataclass
class RunConfig:
    lr: float = 1e-2
    clip: float = 1.0
    max_iter: int = 500
    tol: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    deterministic: bool = True
    # Stop after this many consecutive |L_k - L_{k-1}| <= tol iterations.
    patience: int = 1
    # Only accept a stop at an iterate that satisfies the inequality constraints.
    require_feasible: bool = True
    partition_tol: float = 1e-2
    partition_dev_tol: float = 5e-2

    def __post_init__(self):
        if self.lr < 0 or self.clip <= 0 or self.tol <= 0 or self.max_iter < 0 or self.patience < 1:
            raise InvalidArgument("lr >= 0, clip > 0, tol > 0, max_iter >= 0 and patience >= 1 are required")


def is_feasible(values: dict, partition_active: bool, partition_tol: float = 1e-2,
                partition_dev_tol: float = 5e-2) -> bool:
    """Inequality constraints non-positive and, if the partition is active, both
    the averaged deviation |g_p| and the worst element deviation within tolerance."""
    if any(values[k] > 0 for k in ("g_m", "g_u", "g_l")):
        return False
    if not partition_active:
        return True
    return abs(values["g_p"]) <= partition_tol and values["partition_max_dev"] <= partition_dev_tol


@dataclass
class Problem:
    """Everything that defines the physics and constraints of a design problem."""

    grid: Grid2D
    bcs: BoundaryConditions
    material: object
    m_star: float = 1.0
    lse_t: float = 10.0
    schedule: C.BarrierSchedule = field(default_factory=C.BarrierSchedule)
    partition: bool | None = None  # None: active iff more than one component
    nu: float = 0.3
    T0: float = 0.0
    e_floor_rel: float = 1e-6
    solver: str = "direct"

    def __post_init__(self):
        if self.m_star <= 0:
            raise InvalidArgument("mass budget m* must be positive")
        self.model = ThermoElasticModel(self.grid, self.bcs, self.nu, self.T0, self.solver)
        self.centers = element_centers(self.grid)
        self.area = self.grid.element_area
        self.e_ref = reference_modulus(self.material)
        self.k_ref = reference_conductivity(self.material)

    @property
    def n_components(self) -> int:
        return self.material.n_components

    @property
    def partition_active(self) -> bool:
        return self.n_components > 1 if self.partition is None else self.partition


def reference_modulus(material) -> float:
    if hasattr(material, "E0"):
        return abs(material.E0)
    return float(max(abs(a.E) for a in material.anchors))


def reference_conductivity(material) -> float:
    if hasattr(material, "kappa0"):
        return abs(material.kappa0) or 1.0
    return float(max(abs(a.kappa) for a in material.anchors)) or 1.0


@dataclass
class Evaluation:
    rho: np.ndarray
    J: float
    loss: float
    grad_rho: np.ndarray
    values: dict
    partition_max_dev: float


def evaluate(problem: Problem, rho: np.ndarray, J0: float | None, tau: float) -> Evaluation:
    """Loss, its gradient w.r.t. rho and constraint values for one composition field.

    When ``J0`` is None the current compliance is used (first iteration).
    """
    props = element_props(problem.material, rho, problem.e_floor_rel * problem.e_ref,
                          problem.e_floor_rel * problem.k_ref)
    thermal, struct = problem.model.evaluate(props)
    dJ = problem.model.sensitivity(props, thermal, struct)
    cons = [C.mass_constraint(props.density, props.ddensity, problem.area, problem.m_star)]
    cons += list(C.lse_bounds(rho, problem.lse_t))
    gp, max_dev = C.partition_constraint(rho)
    if problem.partition_active:
        cons.append(gp)
    J0 = struct.J if J0 is None else J0
    if J0 <= 0:
        raise InvalidArgument(f"initial compliance must be positive, got {J0}")
    terms = C.total_loss(struct.J, dJ, J0, cons, tau)
    values = dict(terms.values)
    values.setdefault("g_p", gp.value)
    values["tau"] = tau
    values["partition_max_dev"] = max_dev
    return Evaluation(rho, struct.J, terms.loss, terms.grad, values, max_dev)


@dataclass
class OptimizationResult:
    rho: np.ndarray
    J: float
    J0: float
    iterations: int
    converged: bool
    history: list[dict]
    wall_time: float
    params: fn.MfnParams | None = None
    mode: str = "neural"

    @property
    def J_ratio(self) -> float:
        return self.J / self.J0

    @property
    def final(self) -> dict:
        return self.history[-1]


def _loop(problem: Problem, run: RunConfig, x0: np.ndarray, to_rho, pullback, mode: str, callback=None):
    t_start = time.perf_counter()
    sched = problem.schedule
    state = AdamState.zeros(x0.size, lr=run.lr, beta1=run.beta1, beta2=run.beta2, eps=run.eps)
    x = x0.copy()
    history = []

    def step_eval(x, k, J0):
        rho, aux = to_rho(x)
        ev = evaluate(problem, rho, J0, sched.tau(k))
        g = pullback(ev.grad_rho, aux)
        rec = {"iteration": k, **ev.values, "grad_norm": float(np.linalg.norm(g)),
               "loss": ev.loss, "partition_max_dev": ev.partition_max_dev,
               "rho_min": float(rho.min()), "rho_max": float(rho.max()),
               "wall_time": time.perf_counter() - t_start}
        history.append(rec)
        return ev, g

    ev, g = step_eval(x, 0, None)
    J0 = ev.J
    converged = False
    k = 0
    streak = 0
    while k < run.max_iter:
        x_good = x
        try:
            x = adam_step(state, x, clip_gradient(g, run.clip))
            k += 1
            prev_loss = ev.loss
            ev, g = step_eval(x, k, J0)
        except (SolverFailure, IllPosedProblem, NonFiniteError) as exc:
            raise RunAborted(exc, k, history, params=x_good, rho=ev.rho) from exc
        if callback is not None:
            callback(history[-1])
        if k % 25 == 0:
            log.info("%s it %d  L=%.5f  J=%.4f  J/J0=%.4f  g_m=%.3e", mode, k, ev.loss, ev.J, ev.J / J0,
                     ev.values["g_m"])
        streak = streak + 1 if abs(ev.loss - prev_loss) <= run.tol else 0
        if streak >= run.patience and (not run.require_feasible or
                                       is_feasible(ev.values, problem.partition_active, run.partition_tol,
                                                   run.partition_dev_tol)):
            converged = True
            break
    return x, ev, J0, k, converged, history, time.perf_counter() - t_start


def run_optimization(problem: Problem, params: fn.MfnParams, run: RunConfig, callback=None) -> OptimizationResult:
    """Optimize the trainable network weights; filter frequencies stay frozen."""
    if params.config.n_out != problem.n_components:
        raise InvalidArgument(f"network has {params.config.n_out} outputs, material has {problem.n_components} components")
    coords = problem.centers

    def to_rho(x):
        p = fn.trainable_load(params, x)
        rho, cache = fn.forward(p, coords, cache=True)
        return rho, (p, cache)

    def pullback(grad_rho, aux):
        p, cache = aux
        return fn.backward(p, coords, grad_rho, cache).flat()

    try:
        x, ev, J0, k, conv, hist, wall = _loop(problem, run, fn.trainable_flatten(params), to_rho, pullback,
                                              "neural", callback)
    except RunAborted as exc:
        exc.params = fn.trainable_load(params, exc.params)
        raise
    return OptimizationResult(ev.rho, ev.J, J0, k, conv, hist, wall, fn.trainable_load(params, x), "neural")


def run_baseline_element(problem: Problem, run: RunConfig, callback=None) -> OptimizationResult:
    """Element-wise compositions as design variables, initialized at 1/S."""
    S = problem.n_components
    n = problem.grid.n_elem
    x0 = np.full(n * S, 1.0 / S)

    def to_rho(x):
        return x.reshape(n, S), None

    def pullback(grad_rho, aux):
        return grad_rho.ravel()

    try:
        x, ev, J0, k, conv, hist, wall = _loop(problem, run, x0, to_rho, pullback, "baseline", callback)
    except RunAborted as exc:
        exc.params = None
        raise
    return OptimizationResult(ev.rho, ev.J, J0, k, conv, hist, wall, None, "baseline")
