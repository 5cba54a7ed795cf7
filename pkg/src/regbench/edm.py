"""Elucidated-diffusion noise schedule, stochastic samplers, and ensembles.

The noise schedule is the power-law ladder

    sigma_i = (smax^(1/rho) + (i/(N-1)) * (smin^(1/rho) - smax^(1/rho)))^rho

for i = 0..N-1, with sigma_N = 0 appended. Stochastic churn inflates the
level to sigma_hat = sigma_i * (1 + gamma_i) before each solver step, adding
fresh noise of std S_noise * sqrt(sigma_hat^2 - sigma_i^2); it is applied
identically ahead of both solvers. Samplers are pure given (seed, denoiser),
so ensemble members can be generated in any order or in parallel.

A denoiser is any callable D(x, sigma) -> x_hat of the same shape;
conditioning, if any, is bound into the callable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.random import Generator, Philox

from .errors import InvalidConfig, NonFiniteForecast, ShapeError

# Sampler defaults; training-time noise draws use sigma in [0.02, 88].
DEFAULT_SIGMA_MAX = 80.0
DEFAULT_SIGMA_MIN = 0.03
DEFAULT_RHO = 7.0
DEFAULT_NUM_LEVELS = 20
DEFAULT_CHURN_RATE = 2.5
DEFAULT_CHURN_MIN = 0.75
DEFAULT_CHURN_MAX = 80.0
DEFAULT_NOISE_INFLATION = 1.05
DEFAULT_ENSEMBLE_SIZE = 50
TRAIN_SIGMA_MIN = 0.02
TRAIN_SIGMA_MAX = 88.0


@dataclass(frozen=True)
class NoiseSchedule:
    """Sigma ladder shape, churn parameters, and ensemble size.

    ``num_levels`` is the number of noise levels and ``ensemble_size`` the
    member count; they are distinct fields even though both default from
    the same published table.
    """

    sigma_max: float = DEFAULT_SIGMA_MAX
    sigma_min: float = DEFAULT_SIGMA_MIN
    rho: float = DEFAULT_RHO
    num_levels: int = DEFAULT_NUM_LEVELS
    churn_rate: float = DEFAULT_CHURN_RATE
    churn_min: float = DEFAULT_CHURN_MIN
    churn_max: float = DEFAULT_CHURN_MAX
    noise_inflation: float = DEFAULT_NOISE_INFLATION
    ensemble_size: int = DEFAULT_ENSEMBLE_SIZE

    def __post_init__(self):
        if not (self.sigma_max > self.sigma_min > 0):
            raise InvalidConfig("need sigma_max > sigma_min > 0")
        if self.rho <= 0:
            raise InvalidConfig("rho must be positive")
        if self.num_levels < 2:
            raise InvalidConfig("need at least two noise levels")
        if self.ensemble_size < 1:
            raise InvalidConfig("ensemble size must be at least 1")
        if self.churn_rate < 0:
            raise InvalidConfig("churn rate must be non-negative")


def sigma_schedule(schedule: NoiseSchedule) -> np.ndarray:
    """Strictly decreasing ladder of num_levels sigmas plus a final zero.

    Endpoints are pinned to sigma_max / sigma_min exactly; interior values
    come from the power-law formula.
    """
    n = schedule.num_levels
    inv_rho = 1.0 / schedule.rho
    ramp = np.arange(n, dtype=np.float64) / (n - 1)
    sigmas = (
        schedule.sigma_max**inv_rho
        + ramp * (schedule.sigma_min**inv_rho - schedule.sigma_max**inv_rho)
    ) ** schedule.rho
    sigmas[0] = schedule.sigma_max
    sigmas[-1] = schedule.sigma_min
    return np.append(sigmas, 0.0)


def churn_gamma(sigma_i: float, schedule: NoiseSchedule) -> float:
    """Per-step churn factor: min(churn_rate/N, sqrt(2)-1) inside the band."""
    if sigma_i < 0:
        raise InvalidConfig("sigma must be non-negative")
    if schedule.churn_min <= sigma_i <= schedule.churn_max:
        return min(schedule.churn_rate / schedule.num_levels, math.sqrt(2.0) - 1.0)
    return 0.0


def _sampler_rng(seed: int) -> Generator:
    return Generator(Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, 0xED0], dtype=np.uint64)))


def _check_denoised(x: np.ndarray, shape) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != shape:
        raise ShapeError(f"denoiser returned shape {x.shape}, expected {shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteForecast("denoiser returned non-finite values")
    return x


def _churned(x, sigma, schedule, rng):
    gamma = churn_gamma(float(sigma), schedule)
    if gamma == 0.0:
        return x, float(sigma)
    sigma_hat = float(sigma) * (1.0 + gamma)
    noise_std = schedule.noise_inflation * math.sqrt(sigma_hat**2 - float(sigma) ** 2)
    return x + noise_std * rng.standard_normal(x.shape), sigma_hat


def sample_heun(
    denoiser, shape: tuple[int, int, int], schedule: NoiseSchedule, rng_seed: int
) -> np.ndarray:
    """One sample via the stochastic second-order (Heun) solver."""
    sigmas = sigma_schedule(schedule)
    rng = _sampler_rng(rng_seed)
    x = sigmas[0] * rng.standard_normal(shape)
    for i in range(schedule.num_levels):
        x_hat, sigma_hat = _churned(x, sigmas[i], schedule, rng)
        sigma_next = float(sigmas[i + 1])
        d = (x_hat - _check_denoised(denoiser(x_hat, sigma_hat), x_hat.shape)) / sigma_hat
        x = x_hat + (sigma_next - sigma_hat) * d
        if sigma_next > 0:
            d_prime = (x - _check_denoised(denoiser(x, sigma_next), x.shape)) / sigma_next
            x = x_hat + (sigma_next - sigma_hat) * 0.5 * (d + d_prime)
    return x


def sample_dpmpp2s(
    denoiser, shape: tuple[int, int, int], schedule: NoiseSchedule, rng_seed: int
) -> np.ndarray:
    """One sample via the second-order single-step solver in log-sigma time.

    Uses the same churn preconditioning as the Heun solver; the final step
    to sigma = 0 collapses to the denoised estimate.
    """
    sigmas = sigma_schedule(schedule)
    rng = _sampler_rng(rng_seed)
    x = sigmas[0] * rng.standard_normal(shape)
    for i in range(schedule.num_levels):
        x_hat, sigma_hat = _churned(x, sigmas[i], schedule, rng)
        sigma_next = float(sigmas[i + 1])
        denoised = _check_denoised(denoiser(x_hat, sigma_hat), x_hat.shape)
        if sigma_next == 0.0:
            x = denoised
            continue
        # log-sigma time t = -ln(sigma); midpoint rule with r = 1/2
        h = math.log(sigma_hat) - math.log(sigma_next)
        sigma_mid = math.exp(math.log(sigma_hat) - 0.5 * h)
        x_mid = (sigma_mid / sigma_hat) * x_hat - math.expm1(-0.5 * h) * denoised
        denoised_mid = _check_denoised(denoiser(x_mid, sigma_mid), x_hat.shape)
        x = (sigma_next / sigma_hat) * x_hat - math.expm1(-h) * denoised_mid
    return x


SAMPLERS = {"heun": sample_heun, "dpmpp2s": sample_dpmpp2s}


def member_seed(base_seed: int, member: int) -> int:
    """64-bit mixing hash of (base_seed, member index) for reproducible members."""
    z = (base_seed + 0x9E3779B97F4A7C15 * (member + 1)) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def generate_ensemble(
    denoiser,
    shape: tuple[int, int, int],
    schedule: NoiseSchedule,
    base_seed: int,
    sampler: str = "dpmpp2s",
) -> np.ndarray:
    """M independent increment samples, one per derived member seed.

    Returns an array of shape (M, V, H, W). Member m depends only on
    (base_seed, m), so any member can be regenerated alone.
    """
    if sampler not in SAMPLERS:
        raise InvalidConfig(f"unknown sampler {sampler!r}; choose from {sorted(SAMPLERS)}")
    draw = SAMPLERS[sampler]
    members = [
        draw(denoiser, shape, schedule, member_seed(base_seed, m))
        for m in range(schedule.ensemble_size)
    ]
    return np.stack(members, axis=0)


def edm_denoising_loss(eps_hat: np.ndarray, eps: np.ndarray) -> float:
    """Mean squared difference between predicted and injected noise."""
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps_hat.shape != eps.shape:
        raise ShapeError(f"noise shapes differ: {eps_hat.shape} vs {eps.shape}")
    return float(np.mean(np.square(eps - eps_hat)))


def weighted_denoising_loss(
    x_hat: np.ndarray, x: np.ndarray, sigma: float, sigma_data: float = 1.0
) -> float:
    """Signal-space regression loss with the framework's sigma weighting.

    Offered alongside the plain noise-prediction MSE for interoperability
    with denoisers trained under the elucidated framework.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x_hat.shape != x.shape:
        raise ShapeError(f"signal shapes differ: {x_hat.shape} vs {x.shape}")
    weight = (sigma**2 + sigma_data**2) / (sigma * sigma_data) ** 2
    return float(weight * np.mean(np.square(x_hat - x)))


def training_sigma(schedule: NoiseSchedule, rng: Generator) -> float:
    """Draw a training noise level: uniform over the N-level power ladder."""
    train = replace(
        schedule, sigma_max=TRAIN_SIGMA_MAX, sigma_min=TRAIN_SIGMA_MIN
    )
    ladder = sigma_schedule(train)[:-1]
    return float(rng.choice(ladder))


# -- reference denoisers -------------------------------------------------------


class ConstantDenoiser:
    """D(x, sigma) = value everywhere; both samplers return it exactly."""

    def __init__(self, value: float):
        self.value = value

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray:
        return np.full_like(x, self.value)


class GaussianAnalyticDenoiser:
    """Exact posterior mean for per-element data ~ Normal(mu, s^2).

    D(x, sigma) = (x * s^2 + mu * sigma^2) / (s^2 + sigma^2): the ideal
    denoiser, used to validate sampler output distributions analytically.
    """

    def __init__(self, mu: float, s: float):
        self.mu = mu
        self.s = s

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray:
        s2 = self.s**2
        return (x * s2 + self.mu * sigma**2) / (s2 + sigma**2)


DENOISERS = {"constant": ConstantDenoiser, "gaussian": GaussianAnalyticDenoiser}
