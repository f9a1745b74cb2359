"""Stochastic feature-statistic augmentation.

A gated layer that resamples the per-sample channel statistics of a
feature map and renormalizes the map onto the new statistics. Channel
variance budgets come either from the batch itself ("client" variant), a
fixed width ("random"), or the batch variances rescaled by cross-client
modulation coefficients ("full").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import channel_mean_std
from .stats import EPS_VAR, BatchStatVariance, channel_stats
from .tensor import Tensor

VARIANTS = ("full", "client", "random")


@dataclass(frozen=True)
class ModulationCoefficients:
    """Per-channel rescaling weights, each vector summing to C."""

    gamma_mu: np.ndarray
    gamma_sigma: np.ndarray

    @classmethod
    def zero(cls, channels: int) -> "ModulationCoefficients":
        return cls(np.zeros(channels), np.zeros(channels))


@dataclass(frozen=True)
class FusedVariance:
    """Final per-channel variance budgets for statistic resampling."""

    var_mu_hat: np.ndarray
    var_sigma_hat: np.ndarray


@dataclass(frozen=True)
class FfaConfig:
    p: float = 0.5
    variant: str = "full"
    alpha: float = 0.99
    random_std: float = 0.5
    eps_var: float = EPS_VAR
    # one noise draw per (sample, channel); flip to share draws across
    # the batch, i.e. one draw per channel
    eps_per_sample: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0,1], got {self.p}")
        if self.random_std < 0:
            raise ValueError("random_std must be nonnegative")


def modulate(shared_var: np.ndarray) -> np.ndarray:
    """Convert cross-client variances to per-channel weights summing to C.

    Weight of channel j is (1 + 1/v_j)^-1 = v_j/(1+v_j), the heavy-tailed
    unit-degree form; a zero-variance channel gets weight 0 (continuous
    limit). All-zero input degenerates to uniform weights.
    """
    v = np.asarray(shared_var, dtype=np.float64)
    if np.any(v < 0):
        raise ValueError("shared variances must be nonnegative")
    w = v / (1.0 + v)
    total = w.sum()
    if total == 0.0:
        return np.ones_like(v)
    return v.size * w / total


def fuse(gamma: np.ndarray, client_var: np.ndarray) -> np.ndarray:
    """Residual rescaling: fused variance = (gamma + 1) * client variance."""
    gamma = np.asarray(gamma, dtype=np.float64)
    client_var = np.asarray(client_var, dtype=np.float64)
    if gamma.shape != client_var.shape:
        raise ValueError(
            f"shape mismatch: gamma {gamma.shape} vs variance {client_var.shape}"
        )
    return (gamma + 1.0) * client_var


def variant_variances(variant: str, client_var: BatchStatVariance,
                      gamma: ModulationCoefficients | None,
                      random_std: float = 0.5) -> FusedVariance:
    """Pick the variance budget for a variant.

    client_var carries the batch variances (var_mu, var_sigma). For the
    full variant a missing gamma (nothing aggregated yet) degenerates to
    the client-only budget.
    """
    if variant == "random":
        c = client_var.var_mu.shape[0]
        v = np.full(c, random_std ** 2)
        return FusedVariance(var_mu_hat=v, var_sigma_hat=v.copy())
    if variant == "client":
        return FusedVariance(
            var_mu_hat=np.asarray(client_var.var_mu, dtype=np.float64),
            var_sigma_hat=np.asarray(client_var.var_sigma, dtype=np.float64),
        )
    if variant == "full":
        if gamma is None:
            gamma = ModulationCoefficients.zero(client_var.var_mu.shape[0])
        return FusedVariance(
            var_mu_hat=fuse(gamma.gamma_mu, client_var.var_mu),
            var_sigma_hat=fuse(gamma.gamma_sigma, client_var.var_sigma),
        )
    raise ValueError(f"unknown variant {variant!r}")


def ffa_transform(x: Tensor, fused: FusedVariance, eps_mu: np.ndarray,
                  eps_sigma: np.ndarray, eps_var: float = EPS_VAR) -> Tensor:
    """Deterministic core of the augmentation, Tensor in, Tensor out.

    eps_mu/eps_sigma broadcast against [B,C]; gradients flow through the
    feature map and its statistics, not through the variance budgets.
    """
    mu, sigma = channel_mean_std(x, eps_var=eps_var)
    s_mu = np.sqrt(fused.var_mu_hat)[None, :, None, None]
    s_sigma = np.sqrt(fused.var_sigma_hat)[None, :, None, None]
    em = np.asarray(eps_mu, dtype=np.float64)
    es = np.asarray(eps_sigma, dtype=np.float64)
    em = em.reshape(em.shape + (1, 1))
    es = es.reshape(es.shape + (1, 1))
    mu_hat = mu + em * s_mu
    sigma_hat = sigma + es * s_sigma
    return sigma_hat * ((x - mu) / sigma) + mu_hat


def draw_eps(cfg: FfaConfig, rng: np.random.Generator, batch: int,
             channels: int) -> tuple[np.ndarray, np.ndarray]:
    rows = batch if cfg.eps_per_sample else 1
    eps_mu = rng.standard_normal((rows, channels))
    eps_sigma = rng.standard_normal((rows, channels))
    return eps_mu, eps_sigma


def augment(x: Tensor, fused: FusedVariance, cfg: FfaConfig,
            rng: np.random.Generator, training: bool = True,
            eps=None):
    """Apply the gated statistic perturbation to a feature map.

    Returns (x_hat, used_eps). used_eps is None when the gate stayed
    closed (eval mode, p == 0, or an unlucky draw). Passing eps forces
    the gate open with those draws; the rng is not consumed.
    """
    if eps is None:
        if not training or cfg.p == 0.0:
            return x, None
        if rng.random() >= cfg.p:
            return x, None
        eps = draw_eps(cfg, rng, x.shape[0], x.shape[1])
    eps_mu, eps_sigma = eps
    x_hat = ffa_transform(x, fused, eps_mu, eps_sigma, eps_var=cfg.eps_var)
    return x_hat, (eps_mu, eps_sigma)


def noise_view(x: np.ndarray, fused: FusedVariance, used_eps,
               eps_var: float = EPS_VAR) -> np.ndarray:
    """Additive-noise form of the same perturbation.

    e = eps_sigma * S_sigma * (x - mu)/sigma + eps_mu * S_mu, so that
    x + e reproduces the augmented map exactly (up to rounding).
    """
    eps_mu, eps_sigma = used_eps
    st = channel_stats(x, eps_var=eps_var)
    mu = st.mu[:, :, None, None]
    sigma = st.sigma[:, :, None, None]
    s_mu = np.sqrt(fused.var_mu_hat)[None, :, None, None]
    s_sigma = np.sqrt(fused.var_sigma_hat)[None, :, None, None]
    em = np.asarray(eps_mu, dtype=np.float64)
    es = np.asarray(eps_sigma, dtype=np.float64)
    em = em.reshape(em.shape + (1, 1))
    es = es.reshape(es.shape + (1, 1))
    return es * s_sigma * (x - mu) / sigma + em * s_mu
