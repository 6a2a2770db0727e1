"""Finite-difference oracle for the analytic Jacobians.

This module deliberately knows nothing about :mod:`cnnadapt.jacobian`:
the numeric Jacobian is built from forward passes alone, so the two
routes stay independent.  Comparisons use the normalized error
|analytic - numeric| / (1 + |numeric|).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .network import NetworkSpec, forward


def finite_difference_jacobian(
    spec: NetworkSpec, theta: np.ndarray, X: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Central-difference Jacobian of the network output w.r.t. theta."""
    theta = np.asarray(theta, dtype=float).copy()
    jac = np.zeros((spec.output_dim, theta.size))
    for k in range(theta.size):
        saved = theta[k]
        theta[k] = saved + step
        plus = forward(spec, theta, X).output
        theta[k] = saved - step
        minus = forward(spec, theta, X).output
        theta[k] = saved
        jac[:, k] = (plus - minus) / (2.0 * step)
    return jac


def normalized_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|analytic - numeric| / (1 + |numeric|), elementwise."""
    return np.abs(analytic - numeric) / (1.0 + np.abs(numeric))


@dataclass
class GradCheckResult:
    """Worst-case comparison per weight coordinate across all trials."""

    max_error: float
    analytic: np.ndarray  # worst-offender analytic value per coordinate
    numeric: np.ndarray
    errors: np.ndarray  # worst normalized error per coordinate
    trials: int
    step: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error < 1e-6)

    def worst_coordinates(self, count: int = 10) -> list[tuple[int, float]]:
        order = np.argsort(self.errors)[::-1][:count]
        return [(int(k), float(self.errors[k])) for k in order]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "analytic", "numeric", "rel_err"])
            for k in range(self.errors.size):
                writer.writerow(
                    [k, f"{self.analytic[k]:.17g}", f"{self.numeric[k]:.17g}",
                     f"{self.errors[k]:.6e}"]
                )


def gradient_check(
    spec: NetworkSpec,
    analytic_fn,
    trials: int = 20,
    step: float = 1e-6,
    seed: int = 0,
    theta_scale: float = 0.5,
    x_scale: float | None = None,
) -> GradCheckResult:
    """Compare ``analytic_fn(spec, theta, X)`` against finite differences.

    Each trial draws weights uniformly from (-theta_scale, theta_scale)
    and input entries from (-x_scale, x_scale).  The default input scale
    mimics signals that have already been squashed by the input scaling,
    keeping the first activation away from hard saturation.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if x_scale is None:
        x_scale = 2.0 * spec.alpha2
    rng = np.random.default_rng(seed)
    count = spec.weight_count()
    worst_err = np.full(count, -1.0)
    worst_analytic = np.zeros(count)
    worst_numeric = np.zeros(count)
    for _ in range(trials):
        theta = rng.uniform(-theta_scale, theta_scale, count)
        X = rng.uniform(-x_scale, x_scale, (spec.input_rows, spec.input_cols))
        analytic = analytic_fn(spec, theta, X)
        numeric = finite_difference_jacobian(spec, theta, X, step=step)
        err = normalized_errors(analytic, numeric)
        rows = np.argmax(err, axis=0)
        cols = np.arange(count)
        trial_err = err[rows, cols]
        better = trial_err > worst_err
        worst_err[better] = trial_err[better]
        worst_analytic[better] = analytic[rows, cols][better]
        worst_numeric[better] = numeric[rows, cols][better]
    return GradCheckResult(
        max_error=float(worst_err.max()),
        analytic=worst_analytic,
        numeric=worst_numeric,
        errors=worst_err,
        trials=trials,
        step=step,
    )
