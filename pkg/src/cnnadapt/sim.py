"""Fixed-step closed-loop simulator and scenario results.

One simulator step observes the state, assembles the stacked input
matrix, evaluates the network and its Jacobian, forms the control
input, then advances plant state and weights together with one RK4 step
of the coupled ODE.  The control input and the Jacobian are held
constant across the step (zero-order hold at the step rate); the
tracking error inside the weight-rate is re-evaluated at each RK4 stage
from the stage state and time.

Two engines produce identical dynamics: a plain-numpy reference loop in
this module (readable, used by the tests) and a compiled fast loop in
:mod:`cnnadapt.engine` used for full-length runs, where the damping
term forces step sizes in the microsecond range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .controller import (
    ControllerParams,
    GainCertificate,
    adaptation_rate,
    control_input,
    gain_certificate,
    gamma_vector,
)
from .errors import ConfigError, DivergenceError
from .jacobian import assemble_full_jacobian
from .network import (
    HistoryBuffer,
    NetworkSpec,
    build_input_matrix,
    forward,
    init_weights,
)

#: Tolerance when checking that one duration is an integer multiple of
#: another (relative to the finer step).
_GRID_TOL = 1e-6


def sech(z):
    """1/cosh with the argument clipped so large inputs underflow to 0."""
    return 1.0 / np.cosh(np.clip(z, -700.0, 700.0))


def plant_f(x: np.ndarray) -> np.ndarray:
    """Drift of the built-in two-state benchmark plant."""
    x1, x2 = float(x[0]), float(x[1])
    return np.array(
        [
            x1 * x2 * math.tanh(x2) + sech(x1),
            sech(x1 + x2) ** 2 - sech(x2) ** 2,
        ]
    )


def plant_g(x: np.ndarray, t: float) -> np.ndarray:
    """Additive disturbance switched on for the sudden-change study."""
    x1, x2 = float(x[0]), float(x[1])
    return np.array(
        [
            2.0 * x1**2 * x2 + 2.0 * math.sin(t) + 20.0,
            2.0 * x2**2 * math.tanh(x1) + 2.0 * math.cos(0.5 * t) + 20.0,
        ]
    )


@dataclass
class PlantModel:
    """Plant drift plus an optional disturbance gated on at ``t_g``."""

    f: Callable[[np.ndarray], np.ndarray]
    g: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    t_g: float = math.inf
    builtin: bool = False

    def rate(self, x: np.ndarray, t: float) -> np.ndarray:
        out = self.f(x)
        if self.g is not None and t >= self.t_g - 1e-9:
            out = out + self.g(x, t)
        return out


def make_builtin_plant(t_g: float = math.inf) -> PlantModel:
    return PlantModel(f=plant_f, g=plant_g, t_g=t_g, builtin=True)


@dataclass
class Trajectory:
    """Desired state and its analytic time derivative."""

    position: Callable[[float], np.ndarray]
    velocity: Callable[[float], np.ndarray]
    builtin: bool = False

    def validate_derivative(self, times=None, tol: float = 1e-6) -> None:
        """Check velocity against central differences of position."""
        if times is None:
            times = np.linspace(0.1, 9.9, 17)
        h = 1e-6
        for t in times:
            fd = (self.position(t + h) - self.position(t - h)) / (2.0 * h)
            v = self.velocity(t)
            if np.any(np.abs(fd - v) > tol * (1.0 + np.abs(v))):
                raise ConfigError(
                    f"trajectory velocity disagrees with position derivative "
                    f"at t={t:.3f}"
                )


def default_trajectory() -> Trajectory:
    """The benchmark reference: [sin(2t), -cos(t)]."""
    return Trajectory(
        position=lambda t: np.array([math.sin(2.0 * t), -math.cos(t)]),
        velocity=lambda t: np.array([2.0 * math.cos(2.0 * t), math.sin(t)]),
        builtin=True,
    )


def lumped_target(
    plant: PlantModel, traj: Trajectory, params: ControllerParams,
    x: np.ndarray, t: float,
) -> np.ndarray:
    """The unknown term an ideal feedforward would cancel.

    Equals the true plant rate minus the desired velocity minus the
    designer-matrix feedback on the tracking error; only computable in
    simulation, used to validate the harness independently of learning.
    """
    e = x - traj.position(t)
    return plant.rate(x, t) - traj.velocity(t) - params.A_c @ e


@dataclass
class SimConfig:
    """Fixed-step integration settings for one run."""

    dt: float = 1e-3
    t_end: float = 10.0
    seed: int = 0
    x0: np.ndarray = field(default_factory=lambda: np.array([1.0, 2.0]))
    init_weight_low: float = -0.1
    init_weight_high: float = 0.1
    record_dt: float = 1e-3
    divergence_limit: float = 1e6

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)


@dataclass
class Scenario:
    """Everything needed to run one closed-loop experiment."""

    name: str
    network: NetworkSpec
    controller: ControllerParams
    stack_dt: float
    sim: SimConfig
    plant: PlantModel
    trajectory: Trajectory
    oracle_mode: bool = False
    delta_bar: float = 0.0
    engine: str = "auto"

    def with_overrides(self, **kwargs) -> "Scenario":
        return replace(self, **kwargs)


def _require_multiple(coarse: float, fine: float, what: str) -> int:
    ratio = coarse / fine
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > _GRID_TOL * max(1.0, ratio):
        raise ConfigError(f"{what}: {coarse} is not an integer multiple of {fine}")
    return n


def validate_scenario(sc: Scenario) -> None:
    """Cross-field checks; raises ConfigError with the failing field."""
    n = sc.network.output_dim
    if sc.controller.dim != n:
        raise ConfigError(
            f"A_c is {sc.controller.dim}x{sc.controller.dim} but the network "
            f"output dimension is {n}"
        )
    if sc.sim.x0.size != n:
        raise ConfigError(f"x0 has {sc.sim.x0.size} entries, plant dimension is {n}")
    if sc.network.input_cols != 3 * n:
        raise ConfigError(
            f"input matrix width {sc.network.input_cols} != 3 * state dimension "
            f"(error, state, input stacks)"
        )
    if sc.sim.dt <= 0 or sc.sim.t_end <= 0:
        raise ConfigError("dt and t_end must be positive")
    if sc.sim.init_weight_low >= sc.sim.init_weight_high:
        raise ConfigError("init weight interval is empty")
    if sc.sim.divergence_limit <= 0:
        raise ConfigError("divergence_limit must be positive")
    _require_multiple(sc.stack_dt, sc.sim.dt, "stack_dt vs dt")
    _require_multiple(sc.sim.record_dt, sc.sim.dt, "record_dt vs dt")
    _require_multiple(sc.sim.t_end, sc.sim.dt, "t_end vs dt")
    _require_multiple(sc.sim.t_end, sc.sim.record_dt, "t_end vs record_dt")
    sc.trajectory.validate_derivative()
    if sc.engine not in ("auto", "fast", "reference"):
        raise ConfigError(f"unknown engine {sc.engine!r}")


def rmse(e: np.ndarray, t: np.ndarray, window: tuple[float, float]) -> tuple:
    """Per-component root-mean-square of e over a closed time window."""
    a, b = window
    mask = (t >= a - 1e-9) & (t <= b + 1e-9)
    if not np.any(mask):
        raise ValueError(f"no samples in window [{a}, {b}]")
    return tuple(np.sqrt(np.mean(np.asarray(e)[mask] ** 2, axis=0)))


def rk4_step(
    x: np.ndarray,
    theta: np.ndarray,
    t: float,
    dt: float,
    u: np.ndarray,
    jac: Optional[np.ndarray],
    plant: PlantModel,
    traj: Trajectory,
    params: ControllerParams,
    gamma_vec: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One RK4 step of the coupled plant/weight ODE with u, jac frozen.

    ``jac=None`` freezes the weights entirely (oracle mode).  The weight
    norm is rescaled to the ball after the step; raises DivergenceError
    on a non-finite result.
    """

    def rates(xs, ths, ts):
        dx = plant.rate(xs, ts) + u
        if jac is None:
            return dx, None
        es = xs - traj.position(ts)
        return dx, adaptation_rate(ths, jac, es, params, gamma_vec)

    k1x, k1t = rates(x, theta, t)
    k2x, k2t = rates(x + 0.5 * dt * k1x,
                     theta if k1t is None else theta + 0.5 * dt * k1t,
                     t + 0.5 * dt)
    k3x, k3t = rates(x + 0.5 * dt * k2x,
                     theta if k2t is None else theta + 0.5 * dt * k2t,
                     t + 0.5 * dt)
    k4x, k4t = rates(x + dt * k3x,
                     theta if k3t is None else theta + dt * k3t,
                     t + dt)
    x_new = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    if jac is None:
        theta_new = theta
    else:
        theta_new = theta + (dt / 6.0) * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
        norm = float(np.linalg.norm(theta_new))
        if norm > params.theta_bar:
            theta_new = theta_new * (params.theta_bar / norm)
    if not np.all(np.isfinite(x_new)):
        raise DivergenceError(f"non-finite state after step at t={t:.6f}: {x_new}")
    return x_new, theta_new


def _run_reference(sc: Scenario, seed: int) -> dict:
    """Plain-numpy closed loop; the behavioral reference for the engine."""
    spec, params, cfg = sc.network, sc.controller, sc.sim
    n = spec.output_dim
    n_steps = _require_multiple(cfg.t_end, cfg.dt, "t_end vs dt")
    stride = _require_multiple(cfg.record_dt, cfg.dt, "record_dt vs dt")
    steps_per_stack = _require_multiple(sc.stack_dt, cfg.dt, "stack_dt vs dt")

    rng = np.random.default_rng(seed)
    theta = init_weights(spec, rng, cfg.init_weight_low, cfg.init_weight_high)
    gamma_vec = gamma_vector(params, spec)
    buffer = HistoryBuffer(
        spec.input_cols, cfg.dt, (spec.input_rows - 1) * steps_per_stack + 1
    )

    n_rec = n_steps // stride + 1
    rec = {
        "t": np.zeros(n_rec),
        "x": np.zeros((n_rec, n)),
        "x_d": np.zeros((n_rec, n)),
        "e": np.zeros((n_rec, n)),
        "u": np.zeros((n_rec, n)),
        "theta_norm": np.zeros(n_rec),
        "phi_hat": np.zeros((n_rec, n)),
        "phi_prime_norm": np.zeros(n_rec),
    }

    x = cfg.x0.copy()
    u_prev = np.zeros(n)
    theta_norm_max = float(np.linalg.norm(theta))
    phi_prime_max = 0.0
    diverged = False
    diverged_at = None
    rows = 0

    for step_idx in range(n_steps + 1):
        t = step_idx * cfg.dt
        x_d = sc.trajectory.position(t)
        e = x - x_d
        xi = spec.alpha2 * np.concatenate([e, x, u_prev])
        buffer.append(t, xi)
        X = build_input_matrix(buffer, t, spec, sc.stack_dt)

        if sc.oracle_mode:
            phi_hat = lumped_target(sc.plant, sc.trajectory, params, x, t)
            jac = None
            jac_norm = 0.0
        else:
            trace = forward(spec, theta, X)
            phi_hat = trace.output
            jac = assemble_full_jacobian(trace, theta, spec)
            jac_norm = float(np.linalg.norm(jac, 2))
        u = control_input(phi_hat, e, params)

        theta_norm = float(np.linalg.norm(theta))
        theta_norm_max = max(theta_norm_max, theta_norm)
        phi_prime_max = max(phi_prime_max, jac_norm)

        if step_idx % stride == 0:
            r = step_idx // stride
            rec["t"][r] = t
            rec["x"][r] = x
            rec["x_d"][r] = x_d
            rec["e"][r] = e
            rec["u"][r] = u
            rec["theta_norm"][r] = theta_norm
            rec["phi_hat"][r] = phi_hat
            rec["phi_prime_norm"][r] = jac_norm
            rows = r + 1

        if step_idx == n_steps:
            break
        try:
            x, theta = rk4_step(
                x, theta, t, cfg.dt, u, jac, sc.plant, sc.trajectory, params,
                gamma_vec,
            )
        except DivergenceError:
            diverged = True
            diverged_at = t + cfg.dt
            break
        if float(np.linalg.norm(x)) > cfg.divergence_limit:
            diverged = True
            diverged_at = t + cfg.dt
            break
        u_prev = u

    for key in rec:
        rec[key] = rec[key][:rows]
    return {
        "rec": rec,
        "final_theta": theta,
        "theta_norm_max": theta_norm_max,
        "phi_prime_max": phi_prime_max,
        "diverged": diverged,
        "diverged_at": diverged_at,
    }


@dataclass
class RunResult:
    """Recorded trajectories and summary metrics of one run."""

    name: str
    seed: int
    engine: str
    dt: float
    stack_dt: float
    t_end: float
    record_dt: float
    weight_count: int
    t: np.ndarray
    x: np.ndarray
    x_d: np.ndarray
    e: np.ndarray
    u: np.ndarray
    theta_norm: np.ndarray
    phi_hat: np.ndarray
    phi_prime_norm: np.ndarray
    rmse: tuple
    post_change_rmse: Optional[tuple]
    diverged: bool
    diverged_at: Optional[float]
    theta_norm_max_full: float
    phi_prime_max_full: float
    final_theta: np.ndarray
    certificate: Optional[GainCertificate]
    disturbance_time: float

    @property
    def theta_norm_max(self) -> float:
        """Largest recorded weight norm (recomputable from the CSV)."""
        return float(self.theta_norm.max()) if self.theta_norm.size else 0.0

    @property
    def phi_prime_max(self) -> float:
        """Largest recorded Jacobian norm (recomputable from the CSV)."""
        return float(self.phi_prime_norm.max()) if self.phi_prime_norm.size else 0.0

    def csv_header(self) -> list[str]:
        n = self.x.shape[1] if self.x.ndim == 2 else 1
        cols = ["t"]
        cols += [f"x{i+1}" for i in range(n)]
        cols += [f"xd{i+1}" for i in range(n)]
        cols += [f"e{i+1}" for i in range(n)]
        cols += [f"u{i+1}" for i in range(n)]
        cols += ["theta_norm", "phi_prime_norm"]
        return cols

    def to_csv(self, path) -> None:
        data = np.column_stack(
            [self.t, self.x, self.x_d, self.e, self.u,
             self.theta_norm, self.phi_prime_norm]
        )
        np.savetxt(
            path, data, delimiter=",", comments="",
            header=",".join(self.csv_header()), fmt="%.12g",
        )

    def summary_text(self) -> str:
        lines = [
            f"scenario: {self.name}",
            f"seed: {self.seed}",
            f"engine: {self.engine}",
            f"weights: {self.weight_count}",
            (
                f"steps: dt={self.dt:g} s, t_end={self.t_end:g} s, "
                f"stack_dt={self.stack_dt:g} s, record_dt={self.record_dt:g} s"
            ),
        ]
        if self.diverged:
            lines.append(f"diverged: yes, at t={self.diverged_at:.6f} s")
            lines.append("rmse: n/a (diverged)")
        else:
            lines.append("diverged: no")
            lines.append(
                f"rmse [0, {self.t_end:g}] s: e1={self.rmse[0]:.4f} "
                f"e2={self.rmse[1]:.4f}"
            )
            if self.post_change_rmse is not None:
                lines.append(
                    f"rmse [{self.disturbance_time:g}, {self.t_end:g}] s "
                    f"(post-change): e1={self.post_change_rmse[0]:.4f} "
                    f"e2={self.post_change_rmse[1]:.4f}"
                )
        lines.append(f"weight-norm max (recorded): {self.theta_norm_max:.6g}")
        lines.append(f"jacobian-norm max (recorded): {self.phi_prime_max:.6g}")
        cert = self.certificate
        if cert is None:
            lines.append("gain certificate: n/a (oracle mode)")
        elif cert.computable:
            lines.append(
                f"gain certificate: beta1={cert.beta1:.6g} beta2={cert.beta2:.6g} "
                f"k_s_min={cert.k_s_min:.6g} k_s={cert.k_s:g} "
                f"satisfied: {cert.status}"
            )
        else:
            lines.append(f"gain certificate: {cert.status}")
        return "\n".join(lines) + "\n"


def _fast_capable(sc: Scenario) -> bool:
    return (
        sc.plant.builtin
        and sc.trajectory.builtin
        and sc.network.output_dim == 2
        and sc.network.activation == "tanh"
    )


def run_scenario(
    sc: Scenario, seed: Optional[int] = None, engine: Optional[str] = None
) -> RunResult:
    """Run one scenario and compute its summary metrics."""
    validate_scenario(sc)
    seed = sc.sim.seed if seed is None else int(seed)
    eng = engine if engine is not None else sc.engine
    if eng == "auto":
        eng = "fast" if _fast_capable(sc) else "reference"
    if eng == "fast":
        if not _fast_capable(sc):
            raise ConfigError(
                "fast engine requires the built-in plant/trajectory and a "
                "2-output tanh network"
            )
        from . import engine as _engine  # deferred: compiling numba is slow

        raw = _engine.run_fast(sc, seed)
    elif eng == "reference":
        raw = _run_reference(sc, seed)
    else:
        raise ConfigError(f"unknown engine {eng!r}")

    rec = raw["rec"]
    diverged = raw["diverged"]
    full_window = (0.0, sc.sim.t_end)
    run_rmse = (math.nan, math.nan)
    post = None
    if not diverged and rec["t"].size:
        run_rmse = rmse(rec["e"], rec["t"], full_window)
        if sc.plant.t_g < sc.sim.t_end:
            post = rmse(rec["e"], rec["t"], (sc.plant.t_g, sc.sim.t_end))

    if sc.oracle_mode:
        cert = None
    else:
        measured = float(rec["phi_prime_norm"].max()) if rec["t"].size else 0.0
        cert = gain_certificate(sc.controller, measured, sc.delta_bar)

    return RunResult(
        name=sc.name,
        seed=seed,
        engine=eng,
        dt=sc.sim.dt,
        stack_dt=sc.stack_dt,
        t_end=sc.sim.t_end,
        record_dt=sc.sim.record_dt,
        weight_count=sc.network.weight_count(),
        t=rec["t"],
        x=rec["x"],
        x_d=rec["x_d"],
        e=rec["e"],
        u=rec["u"],
        theta_norm=rec["theta_norm"],
        phi_hat=rec["phi_hat"],
        phi_prime_norm=rec["phi_prime_norm"],
        rmse=run_rmse,
        post_change_rmse=post,
        diverged=diverged,
        diverged_at=raw["diverged_at"],
        theta_norm_max_full=raw["theta_norm_max"],
        phi_prime_max_full=raw["phi_prime_max"],
        final_theta=raw["final_theta"],
        certificate=cert,
        disturbance_time=sc.plant.t_g,
    )
