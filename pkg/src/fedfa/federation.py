"""Round orchestration: selection, broadcast, aggregation, statistic exchange.

One round is: select clients, broadcast the global model (plus the current
modulation coefficients when statistic exchange is on), run local training
through a caller-supplied function, aggregate parameters, recompute
cross-client statistic variances and modulation coefficients, and account
for every byte that crossed the wire.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .augment import FfaConfig, ModulationCoefficients, modulate
from .stats import MomentumStats
from .rng import stream

log = logging.getLogger("fedfa")

FLOAT_BYTES = 8  # statistics travel as float64 vectors


class ClientTrainingError(RuntimeError):
    """Raised by a local-training function to simulate a client failure."""


@dataclass
class ClientState:
    client_id: int
    data: object  # ClientData; opaque here
    params: dict | None = None  # Tensor replica, rebuilt each round
    momentum: list[MomentumStats] = field(default_factory=list)
    ffa: FfaConfig | None = None


@dataclass
class ServerState:
    params: dict[str, np.ndarray]
    stat_channels: tuple[int, ...] = ()
    client_stats: dict[int, list[MomentumStats]] = field(default_factory=dict)
    coeffs: list[ModulationCoefficients] | None = None
    momentum_buf: dict[str, np.ndarray] | None = None


@dataclass
class RoundReport:
    round_index: int
    selected: list[int]
    train_loss: dict[int, float]
    eval_acc: dict[int, float] = field(default_factory=dict)
    mean_eval_acc: float | None = None
    uplink_bytes_per_client: int = 0
    downlink_bytes_per_client: int = 0
    uplink_bytes: int = 0
    downlink_bytes: int = 0
    wall_clock: float = 0.0


@dataclass
class LocalResult:
    params: dict[str, np.ndarray]
    momentum: list[MomentumStats]
    train_loss: float
    n_samples: int


@dataclass(frozen=True)
class RoundConfig:
    participation: float = 1.0
    aggregation: str = "samples"  # or "uniform"
    server_momentum: float = 0.0
    exchange_stats: bool = False
    alpha: float = 0.99
    seed: int = 0


def sharing_variances(stats_by_client: list[MomentumStats]):
    """Biased per-channel variance of the momentum statistics across clients."""
    if not stats_by_client:
        raise ValueError("no client statistics to aggregate")
    mu = np.stack([s.mu_bar for s in stats_by_client])
    sigma = np.stack([s.sigma_bar for s in stats_by_client])
    return mu.var(axis=0), sigma.var(axis=0)


def aggregate(models: list[tuple[dict[str, np.ndarray], float]]) -> dict[str, np.ndarray]:
    """Weighted average of parameter dicts.

    Computed as base + sum p_i (x_i - base) so averaging identical models
    is bit-exact regardless of the weights.
    """
    if not models:
        raise ValueError("nothing to aggregate")
    base = models[0][0]
    names = list(base.keys())
    for params, w in models:
        if w <= 0:
            raise ValueError(f"aggregation weight must be positive, got {w}")
        if list(params.keys()) != names:
            raise ValueError("parameter sets differ across clients")
        for k in names:
            if params[k].shape != base[k].shape:
                raise ValueError(
                    f"shape mismatch for {k}: {params[k].shape} vs {base[k].shape}"
                )
    total = sum(w for _, w in models)
    out = {}
    for k in names:
        acc = base[k].copy()
        for params, w in models:
            delta = params[k] - base[k]
            if np.any(delta):
                acc += (w / total) * delta
        out[k] = acc
    return out


def comm_cost(channels_per_ffa_layer, bytes_per_value: int) -> int:
    """Extra bytes per client per round for the statistic exchange.

    Two vectors up (running mean and std) and two down (the modulation
    coefficients), each one value per channel per augmentation site.
    """
    channels = list(channels_per_ffa_layer)
    if any(c <= 0 for c in channels):
        raise ValueError("channel counts must be positive")
    return 4 * sum(channels) * bytes_per_value


def select_clients(m: int, participation: float, seed: int, round_index: int) -> list[int]:
    if not 0.0 < participation <= 1.0:
        raise ValueError(f"participation must lie in (0,1], got {participation}")
    if participation == 1.0:
        return list(range(m))
    n = max(1, int(round(participation * m)))
    rng = stream(seed, "select", round_index)
    return sorted(rng.choice(m, size=n, replace=False).tolist())


def recompute_coeffs(server: ServerState) -> None:
    """Recompute per-site modulation coefficients from stored statistics."""
    if not server.client_stats:
        server.coeffs = None
        return
    sites = len(server.stat_channels)
    coeffs = []
    for k in range(sites):
        per_client = [st[k] for st in server.client_stats.values()]
        var_mu, var_sigma = sharing_variances(per_client)
        coeffs.append(ModulationCoefficients(
            gamma_mu=modulate(var_mu),
            gamma_sigma=modulate(var_sigma),
        ))
    server.coeffs = coeffs


def run_round(server: ServerState, clients: list[ClientState],
              round_index: int, cfg: RoundConfig, train_fn) -> RoundReport:
    """Execute one communication round, mutating server and client states.

    train_fn(client, round_index, coeffs) -> LocalResult does the local
    optimization; a ClientTrainingError drops that client from the round.
    """
    t0 = time.perf_counter()
    selected = select_clients(len(clients), cfg.participation, cfg.seed, round_index)

    param_bytes = len(checkpoint.encode(server.params))
    stat_bytes = 2 * sum(server.stat_channels) * FLOAT_BYTES if cfg.exchange_stats else 0

    results: list[tuple[ClientState, LocalResult]] = []
    train_loss: dict[int, float] = {}
    for idx in selected:
        client = clients[idx]
        client.params = {k: v.copy() for k, v in server.params.items()}
        client.momentum = [
            MomentumStats.fresh(c, cfg.alpha) for c in server.stat_channels
        ]
        try:
            res = train_fn(client, round_index, server.coeffs)
        except ClientTrainingError as err:
            log.warning("client %d dropped in round %d: %s", idx, round_index, err)
            continue
        results.append((client, res))
        train_loss[idx] = res.train_loss
        if cfg.exchange_stats:
            server.client_stats[idx] = res.momentum

    if results:
        if cfg.aggregation == "uniform":
            weighted = [(r.params, 1.0) for _, r in results]
        else:
            weighted = [(r.params, float(r.n_samples)) for _, r in results]
        agg = aggregate(weighted)
        if cfg.server_momentum > 0.0:
            if server.momentum_buf is None:
                server.momentum_buf = {k: np.zeros_like(v) for k, v in server.params.items()}
            for k in server.params:
                delta = server.params[k] - agg[k]
                buf = cfg.server_momentum * server.momentum_buf[k] + delta
                server.momentum_buf[k] = buf
                server.params[k] = server.params[k] - buf
        else:
            server.params = agg

    if cfg.exchange_stats:
        recompute_coeffs(server)

    # broadcast reaches every selected client; uplink only the survivors
    return RoundReport(
        round_index=round_index,
        selected=selected,
        train_loss=train_loss,
        uplink_bytes_per_client=param_bytes + stat_bytes,
        downlink_bytes_per_client=param_bytes + stat_bytes,
        uplink_bytes=len(results) * (param_bytes + stat_bytes),
        downlink_bytes=len(selected) * (param_bytes + stat_bytes),
        wall_clock=time.perf_counter() - t0,
    )
