"""Noise schedules and the closed-form forward process on latent graphs.

Arrays are indexed 0..T with beta(0) = 0, so alpha_bar(0) = 1 and step t of
the forward process is exactly the identity at t = 0. The latent arguments
may be numpy arrays or tensors with the same broadcasting semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    kind: str
    beta_min: float
    beta_max: float
    betas: np.ndarray  # (T+1,), betas[0] = 0
    alphas: np.ndarray  # 1 - betas
    alpha_bar: np.ndarray  # cumulative product, alpha_bar[0] = 1
    snr: np.ndarray  # alphas / betas, +inf at t=0


@dataclass
class NoisyGraphState:
    vertex_latents: object
    edge_latents: object
    t: int
    eps_v: object
    eps_e: object


def make_schedule(
    T: int,
    beta_min: float,
    beta_max: float,
    kind: str = "sigmoid",
    strict: bool = True,
) -> NoiseSchedule:
    """Build a beta schedule over steps 1..T.

    sigmoid kind: logistic ramp sig(12 t/T - 6) rescaled so the curve spans
    [beta_min, beta_max] with beta(T) = beta_max exactly. linear kind: affine
    from beta(1) = beta_min to beta(T) = beta_max. strict=False permits the
    degenerate beta_min = beta_max constant schedule.
    """
    if T < 1:
        raise ValueError("invalid parameter: T must be >= 1")
    if not (0.0 <= beta_min and beta_max < 1.0):
        raise ValueError("invalid parameter: need 0 <= beta_min, beta_max < 1")
    if strict and not beta_min < beta_max:
        raise ValueError("invalid parameter: need beta_min < beta_max")
    if not strict and beta_min > beta_max:
        raise ValueError("invalid parameter: need beta_min <= beta_max")
    if kind not in ("sigmoid", "linear"):
        raise ValueError(f"invalid parameter: unknown schedule kind {kind!r}")

    t = np.arange(1, T + 1, dtype=np.float64)
    if kind == "sigmoid":
        lo = 1.0 / (1.0 + math.exp(6.0))  # sig(-6)
        hi = 1.0 / (1.0 + math.exp(-6.0))  # sig(6)
        s = (1.0 / (1.0 + np.exp(-(12.0 * t / T - 6.0))) - lo) / (hi - lo)
    else:
        s = (t - 1.0) / (T - 1.0) if T > 1 else np.ones(1, dtype=np.float64)
    # lerp form hits beta_max exactly at t=T where s=1.0
    body = (1.0 - s) * beta_min + s * beta_max
    betas = np.concatenate([[0.0], body])
    alphas = 1.0 - betas
    alpha_bar = np.cumprod(alphas)
    with np.errstate(divide="ignore"):
        snr = alphas / betas
    return NoiseSchedule(
        T=T,
        kind=kind,
        beta_min=beta_min,
        beta_max=beta_max,
        betas=betas,
        alphas=alphas,
        alpha_bar=alpha_bar,
        snr=snr,
    )


def _zeros_like(x):
    return x * 0


def _sample_like(x, rng: np.random.Generator):
    return rng.standard_normal(np.shape(x))


def forward_noise(
    vertex_latents,
    edge_latents,
    t: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
    noise: tuple | None = None,
) -> NoisyGraphState:
    """Jump directly to step t: x(t) = sqrt(abar t) x0 + sqrt(1 - abar t) eps.

    Pass `noise=(eps_v, eps_e)` for a deterministic result; otherwise the rng
    samples standard normal noise of matching shape.
    """
    if not 0 <= t <= schedule.T:
        raise ValueError(f"invalid parameter: t={t} outside [0, {schedule.T}]")
    if noise is not None:
        eps_v, eps_e = noise
    elif rng is not None:
        eps_v = _sample_like(vertex_latents, rng)
        eps_e = _sample_like(edge_latents, rng)
    else:
        raise ValueError("invalid parameter: provide rng or explicit noise")
    abar = float(schedule.alpha_bar[t])
    sig = math.sqrt(abar)
    noi = math.sqrt(1.0 - abar)
    return NoisyGraphState(
        vertex_latents=sig * vertex_latents + noi * eps_v,
        edge_latents=sig * edge_latents + noi * eps_e,
        t=t,
        eps_v=eps_v,
        eps_e=eps_e,
    )


def stepwise_forward(
    vertex_latents,
    edge_latents,
    t: int,
    step_noises: list,
    schedule: NoiseSchedule,
):
    """Apply the single-step kernel t times:
    x(i) = sqrt(1 - beta i) x(i-1) + sqrt(beta i) eps_i."""
    if not 0 <= t <= schedule.T:
        raise ValueError(f"invalid parameter: t={t} outside [0, {schedule.T}]")
    if len(step_noises) != t:
        raise ValueError("invalid parameter: need one noise pair per step")
    v, e = vertex_latents, edge_latents
    for i in range(1, t + 1):
        beta = float(schedule.betas[i])
        keep = math.sqrt(1.0 - beta)
        add = math.sqrt(beta)
        eps_v, eps_e = step_noises[i - 1]
        v = keep * v + add * eps_v
        e = keep * e + add * eps_e
    return v, e


def _mse(a, b) -> object:
    diff = a - b
    return (diff * diff).mean()


def simple_loss(pred_v, pred_e, true_v, true_e):
    """Vertex MSE plus edge MSE; an empty edge set contributes 0.

    Works on numpy arrays and on autograd tensors alike.
    """
    if tuple(np.shape(pred_v)) != tuple(np.shape(true_v)):
        raise ValueError("shape mismatch on vertex latents")
    if tuple(np.shape(pred_e)) != tuple(np.shape(true_e)):
        raise ValueError("shape mismatch on edge latents")
    loss = _mse(pred_v, true_v)
    if int(np.prod(np.shape(true_e))) > 0:
        loss = loss + _mse(pred_e, true_e)
    return loss
