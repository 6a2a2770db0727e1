"""Control law, projected weight adaptation, and the gain certificate.

The control input cancels the network estimate and adds a switching
term: ``u = -phi_hat - k_s * sgn(e)``.  Weights follow a gradient step
through the inverse of the designer matrix plus a damping term
``-rho * ||e|| * theta``, wrapped in a norm-ball projection that keeps
``||theta|| <= theta_bar``.

The certificate computes the two constants of the sufficient gain
condition from the damping factor, learning rates, designer matrix,
weight-norm bound, and (measured or assumed) Jacobian norm bound; it is
advisory only and never gates a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .network import NetworkSpec

#: Relative width of the projection blend annulus and of the tolerated
#: overshoot band outside the ball.
PROJECTION_MARGIN = 1e-3


@dataclass
class ControllerParams:
    """Gains and adaptation settings for one controller instance.

    ``gamma_fc`` / ``gamma_conv`` are the diagonal learning rates of the
    FC-weight and conv-weight segments (a single scalar config sets
    both).  ``A_c`` must be Hurwitz; this is checked on construction.
    """

    k_s: float
    A_c: np.ndarray
    gamma_fc: float
    gamma_conv: float
    rho: float
    theta_bar: float = 10.0
    sgn_mode: str = "exact"
    sgn_eps: float = 1e-3
    A_c_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.A_c = np.asarray(self.A_c, dtype=float)
        if self.A_c.ndim != 2 or self.A_c.shape[0] != self.A_c.shape[1]:
            raise ConfigError(f"A_c must be square, got shape {self.A_c.shape}")
        if np.any(np.real(np.linalg.eigvals(self.A_c)) >= 0):
            raise ConfigError("A_c must be Hurwitz (all eigenvalues in the open "
                              "left half plane)")
        if self.k_s <= 0:
            raise ConfigError("k_s must be positive")
        if self.gamma_fc <= 0 or self.gamma_conv <= 0:
            raise ConfigError("learning rates must be positive")
        if self.rho < 0:
            raise ConfigError("rho must be nonnegative")
        if self.theta_bar <= 0:
            raise ConfigError("theta_bar must be positive")
        if self.sgn_mode not in ("exact", "smoothed"):
            raise ConfigError(f"unknown sgn_mode {self.sgn_mode!r}")
        if self.sgn_mode == "smoothed" and self.sgn_eps <= 0:
            raise ConfigError("sgn_eps must be positive in smoothed mode")
        self.A_c_inv = np.linalg.inv(self.A_c)

    @property
    def dim(self) -> int:
        return self.A_c.shape[0]


def sgn(e: np.ndarray, params: ControllerParams) -> np.ndarray:
    """Sign vector of the tracking error, exact or tanh-smoothed."""
    e = np.asarray(e, dtype=float)
    if params.sgn_mode == "exact":
        return np.sign(e)
    return np.tanh(e / params.sgn_eps)


def control_input(
    phi_hat: np.ndarray, e: np.ndarray, params: ControllerParams
) -> np.ndarray:
    """u = -phi_hat - k_s * sgn(e)."""
    return -np.asarray(phi_hat, dtype=float) - params.k_s * sgn(e, params)


def gamma_vector(params: ControllerParams, spec: NetworkSpec) -> np.ndarray:
    """Per-coordinate learning rates in weight-layout order."""
    gamma = np.full(spec.weight_count(), params.gamma_conv)
    gamma[: spec.fc_weight_count()] = params.gamma_fc
    return gamma


def projection(
    theta: np.ndarray,
    tau: np.ndarray,
    theta_bar: float,
    margin: float = PROJECTION_MARGIN,
) -> np.ndarray:
    """Norm-ball projection of the raw adaptation rate.

    Passes ``tau`` through when the weights are safely inside the ball
    or the rate points inward.  Otherwise the outward radial component
    is removed, scaled by a blend factor that ramps from 0 to 1 across a
    thin annulus below the boundary, so the map is Lipschitz in theta
    and never pushes the norm beyond theta_bar * (1 + margin).
    """
    theta = np.asarray(theta, dtype=float)
    tau = np.asarray(tau, dtype=float)
    radial = float(theta @ tau)
    if radial <= 0.0:
        return tau
    nsq = float(theta @ theta)
    blend = (nsq - theta_bar**2) / (margin * theta_bar**2) + 1.0
    blend = min(1.0, max(0.0, blend))
    if blend == 0.0:
        return tau
    return tau - blend * (radial / nsq) * theta


def adaptation_rate(
    theta: np.ndarray,
    jac: np.ndarray,
    e: np.ndarray,
    params: ControllerParams,
    gamma_vec: np.ndarray,
) -> np.ndarray:
    """Projected weight rate: proj[-Gamma (A_c^-1 J)^T e - rho ||e|| theta]."""
    grad = jac.T @ (params.A_c_inv.T @ np.asarray(e, dtype=float))
    tau = -gamma_vec * grad - params.rho * np.linalg.norm(e) * theta
    return projection(theta, tau, params.theta_bar)


def adaptation_step(
    theta: np.ndarray,
    jac: np.ndarray,
    e: np.ndarray,
    params: ControllerParams,
    dt: float,
    gamma_vec: np.ndarray,
) -> np.ndarray:
    """One explicit-Euler step of the projected rate, then a ball clip.

    The projection bounds the continuous-time rate; the final rescale
    enforces ``||theta|| <= theta_bar`` exactly against discretization
    overshoot, whatever the step size.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    theta = np.asarray(theta, dtype=float)
    new = theta + dt * adaptation_rate(theta, jac, e, params, gamma_vec)
    norm = float(np.linalg.norm(new))
    if norm > params.theta_bar:
        new = new * (params.theta_bar / norm)
    return new


@dataclass(frozen=True)
class GainCertificate:
    """Constants of the sufficient switching-gain condition.

    ``k_s_min = beta1 * beta2**2 + delta_bar`` with
    ``beta1 = rho * ||Gamma^-1||`` and
    ``beta2 = (phi_prime_bound * (||A_c^-1|| + 1) + beta1 * theta_bar)
    / (2 * beta1)``.  With ``rho = 0`` the constants are undefined and
    the certificate reports not-computable.
    """

    beta1: float
    beta2: float
    k_s_min: float
    phi_prime_bound: float
    delta_bar: float
    k_s: float
    computable: bool

    @property
    def satisfied(self) -> bool | None:
        if not self.computable:
            return None
        return self.k_s >= self.k_s_min

    @property
    def status(self) -> str:
        if not self.computable:
            return "not-computable (rho=0)"
        return "yes" if self.satisfied else "no"


def gain_certificate(
    params: ControllerParams, phi_prime_bound: float, delta_bar: float
) -> GainCertificate:
    """Evaluate the gain condition for the given Jacobian-norm bound."""
    if params.rho == 0.0:
        return GainCertificate(
            beta1=float("nan"),
            beta2=float("nan"),
            k_s_min=float("nan"),
            phi_prime_bound=phi_prime_bound,
            delta_bar=delta_bar,
            k_s=params.k_s,
            computable=False,
        )
    gamma_inv_norm = 1.0 / min(params.gamma_fc, params.gamma_conv)
    beta1 = params.rho * gamma_inv_norm
    a_inv_norm = float(np.linalg.norm(params.A_c_inv, 2))
    beta2 = (phi_prime_bound * (a_inv_norm + 1.0) + beta1 * params.theta_bar) / (
        2.0 * beta1
    )
    k_s_min = beta1 * beta2**2 + delta_bar
    return GainCertificate(
        beta1=beta1,
        beta2=beta2,
        k_s_min=k_s_min,
        phi_prime_bound=phi_prime_bound,
        delta_bar=delta_bar,
        k_s=params.k_s,
        computable=True,
    )
