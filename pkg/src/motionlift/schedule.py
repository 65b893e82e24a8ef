"""DDPM variance schedule, forward noising, and ancestral reverse sampling.

Steps are 1-indexed: n runs from 1 to N, with alpha_bar[n-1] the cumulative
product through step n. All sampling works in the model's normalized
coordinate space; callers handle pixel/canvas conversion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class NoiseSchedule:
    beta: np.ndarray       # (N,)
    alpha: np.ndarray      # (N,) = 1 - beta
    alpha_bar: np.ndarray  # (N,) cumulative products

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if not (self.beta.shape == self.alpha.shape == self.alpha_bar.shape):
            raise ValueError("schedule arrays must share shape")
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ValueError("beta values must lie in (0, 1)")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if self.alpha_bar[-1] <= 0:
            raise ValueError("alpha_bar must stay positive")
        if np.abs(self.alpha_bar - np.cumprod(self.alpha)).max() > 1e-12:
            raise ValueError("alpha_bar inconsistent with cumprod(alpha)")

    @property
    def N(self) -> int:
        return len(self.beta)


def make_schedule(N: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule with cumulative-product alpha_bar."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got "
                         f"({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, N)
    alpha = 1.0 - beta
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def _check_step(n: int, sched: NoiseSchedule) -> None:
    if not 1 <= n <= sched.N:
        raise ValueError(f"diffusion step {n} outside [1, {sched.N}]")


def q_sample(x0: np.ndarray, n: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form marginal of the forward chain:
    X_n = sqrt(alpha_bar_n) X_0 + sqrt(1 - alpha_bar_n) eps."""
    _check_step(n, sched)
    ab = sched.alpha_bar[n - 1]
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * eps


def x0_to_eps(xn: np.ndarray, x0_hat: np.ndarray, n: int, sched: NoiseSchedule) -> np.ndarray:
    """Recover the noise estimate from an x0 prediction."""
    _check_step(n, sched)
    ab = sched.alpha_bar[n - 1]
    if ab >= 1.0:
        raise ValueError("alpha_bar = 1 leaves the noise unidentified")
    return (np.asarray(xn, dtype=np.float64) - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)


def analytic_gaussian_denoiser(xn: np.ndarray, n: int, sched: NoiseSchedule,
                               data_mean: np.ndarray | float,
                               data_var: float) -> np.ndarray:
    """Posterior mean E[x0 | xn] when x0 ~ N(mean, var I).

    Closed form: ((1 - ab) mu + var sqrt(ab) xn) / ((1 - ab) + ab var).
    Serves as an exact oracle for the learned denoiser.
    """
    if data_var < 0:
        raise ValueError("variance must be non-negative")
    _check_step(n, sched)
    ab = sched.alpha_bar[n - 1]
    num = (1.0 - ab) * np.asarray(data_mean, dtype=np.float64) \
        + data_var * np.sqrt(ab) * np.asarray(xn, dtype=np.float64)
    den = (1.0 - ab) + ab * data_var
    return num / den


# A denoiser for sampling purposes: maps (x_n, n) to an x0 estimate.
DenoiseFn = Callable[[np.ndarray, int], np.ndarray]


def posterior_mean_coeffs(n: int, sched: NoiseSchedule) -> tuple[float, float, float]:
    """Coefficients (on x0_hat, on x_n) and variance of q(x_{n-1} | x_n, x0)."""
    _check_step(n, sched)
    ab_n = sched.alpha_bar[n - 1]
    ab_prev = sched.alpha_bar[n - 2] if n >= 2 else 1.0
    beta_n = sched.beta[n - 1]
    alpha_n = sched.alpha[n - 1]
    coef_x0 = np.sqrt(ab_prev) * beta_n / (1.0 - ab_n)
    coef_xn = np.sqrt(alpha_n) * (1.0 - ab_prev) / (1.0 - ab_n)
    var = (1.0 - ab_prev) / (1.0 - ab_n) * beta_n
    return float(coef_x0), float(coef_xn), float(var)


def reverse_sample(denoise_fn: DenoiseFn, shape: tuple[int, ...], sched: NoiseSchedule,
                   rng: np.random.Generator) -> np.ndarray:
    """Ancestral DDPM sampling with an x0-parameterized denoiser.

    Starts from X_N ~ N(0, I); at each step the denoiser's x0 estimate feeds
    the posterior mean. No noise is added at the final step, so N = 1 with a
    perfect denoiser returns its x0 exactly.
    """
    x = rng.standard_normal(shape)
    for n in range(sched.N, 0, -1):
        x0_hat = denoise_fn(x, n)
        coef_x0, coef_xn, var = posterior_mean_coeffs(n, sched)
        mean = coef_x0 * x0_hat + coef_xn * x
        if n > 1:
            x = mean + np.sqrt(var) * rng.standard_normal(shape)
        else:
            x = mean
    return x
