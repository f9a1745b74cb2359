"""Experiment driver: local training loops, baselines, metric emission."""

from __future__ import annotations

import json
import os
import time

import numpy as np

from . import checkpoint
from . import data as datamod
from .augment import FfaConfig, augment, variant_variances
from .config import DatasetConfig, ExperimentConfig
from .federation import (ClientState, LocalResult, RoundConfig, ServerState,
                         run_round)
from .layers import ConvNet, default_net_spec, init_params, softmax_cross_entropy
from .optim import Sgd
from .rng import stream
from .stats import batch_variances, channel_stats, momentum_update
from .tensor import Tensor

FFA_VARIANTS = {"fedfa": "full", "fedfa-c": "client", "fedfa-r": "random"}


def resolve_run_root(run_root=None) -> str:
    return run_root or os.environ.get("FEDFA_RUN_ROOT", "runs")


def build_dataset(dcfg: DatasetConfig, m: int, seed: int) -> datamod.FederatedDataset:
    spec = datamod.TaskSpec(classes=dcfg.classes, image_size=dcfg.image_size,
                            channels=dcfg.channels, noise=dcfg.noise)
    base = datamod.make_base_sampler(spec, seed)
    if dcfg.kind == "feature_shift":
        return datamod.make_feature_shift(
            base, m, dcfg.shift_strength, seed,
            dcfg.train_per_client, dcfg.test_per_client, classes=dcfg.classes)
    n = m * (dcfg.train_per_client + dcfg.test_per_client)
    x, y = base(n, stream(seed, "data", 99))
    if dcfg.kind == "dirichlet":
        return datamod.dirichlet_partition(x, y, m, dcfg.concentration, seed,
                                           dcfg.test_fraction)
    return datamod.size_skew(x, y, m, dcfg.size_ratio, seed, dcfg.test_fraction)


def mixup_batch(x: np.ndarray, y: np.ndarray, beta_param: float,
                rng: np.random.Generator, lam: float | None = None):
    """Convex combination of the batch with a shuffled copy of itself.

    Returns (x_mixed, y, y_partner, lam); the loss is the lam-weighted sum
    of the losses against both label vectors.
    """
    if beta_param <= 0:
        raise ValueError("beta_param must be positive")
    if x.shape[0] < 2:
        return x, y, y, 1.0
    if lam is None:
        lam = float(rng.beta(beta_param, beta_param))
    perm = rng.permutation(x.shape[0])
    x_mixed = lam * x + (1.0 - lam) * x[perm]
    return x_mixed, y, y[perm], lam


def make_train_fn(cfg: ExperimentConfig, net_spec):
    """Build the per-client local training function for one experiment."""
    variant = FFA_VARIANTS.get(cfg.algorithm)
    ffa_cfg = FfaConfig(p=cfg.p, variant=variant or "full", alpha=cfg.alpha,
                        random_std=cfg.random_std) if variant else None
    sites = len(net_spec.stages)

    def train_fn(client: ClientState, round_index: int, coeffs) -> LocalResult:
        anchor = client.params  # broadcast copy, numpy
        tparams = {k: Tensor(v.copy()) for k, v in anchor.items()}
        net = ConvNet(net_spec, tparams)
        opt = Sgd(tparams, lr=cfg.lr,
                  prox_mu=cfg.prox_mu if cfg.algorithm == "fedprox" else 0.0,
                  anchor=anchor if cfg.algorithm == "fedprox" else None)
        momentum = list(client.momentum)
        ffa_rngs = [stream(cfg.seed, "ffa", round_index, client.client_id, k)
                    for k in range(sites)] if variant else None
        mix_rng = (stream(cfg.seed, "mixup", round_index, client.client_id)
                   if cfg.algorithm == "mixup" else None)

        def make_hook(k):
            def hook(t):
                st = channel_stats(t.data, eps_var=ffa_cfg.eps_var)
                bv = batch_variances(st)
                gamma = None
                if variant == "full" and coeffs is not None and not cfg.force_zero_gamma:
                    gamma = coeffs[k]
                fused = variant_variances(variant, bv, gamma, cfg.random_std)
                out, used = augment(t, fused, ffa_cfg, ffa_rngs[k])
                if used is not None:
                    momentum[k] = momentum_update(momentum[k], st)
                return out
            return hook

        hooks = [make_hook(k) for k in range(sites)] if variant else None
        x_all, y_all = client.data.x_train, client.data.y_train
        n = x_all.shape[0]
        losses = []
        for epoch in range(cfg.local_epochs):
            order = stream(cfg.seed, "shuffle", round_index,
                           client.client_id, epoch).permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                xb, yb = x_all[idx], y_all[idx]
                net.zero_grad()
                if cfg.algorithm == "mixup":
                    xb, ya, yb2, lam = mixup_batch(xb, yb, cfg.mixup_beta, mix_rng)
                    logits, _ = net.forward(Tensor(xb))
                    loss = (softmax_cross_entropy(logits, ya) * lam
                            + softmax_cross_entropy(logits, yb2) * (1.0 - lam))
                else:
                    logits, _ = net.forward(Tensor(xb), hooks=hooks)
                    loss = softmax_cross_entropy(logits, yb)
                loss.backward()
                opt.step()
                losses.append(float(loss.data))
        return LocalResult(
            params={k: t.data for k, t in tparams.items()},
            momentum=momentum,
            train_loss=float(np.mean(losses)) if losses else float("nan"),
            n_samples=n,
        )

    return train_fn


def evaluate(params: dict[str, np.ndarray], net_spec, x: np.ndarray,
             y: np.ndarray, chunk: int = 512) -> float:
    net = ConvNet(net_spec, {k: Tensor(v) for k, v in params.items()})
    hits = 0
    for start in range(0, x.shape[0], chunk):
        pred = net.predict(x[start:start + chunk])
        hits += int((pred == y[start:start + chunk]).sum())
    return hits / x.shape[0]


def _eval_round(server, net_spec, ds, client_ids):
    accs = {i: evaluate(server.params, net_spec,
                        ds.clients[i].x_test, ds.clients[i].y_test)
            for i in client_ids}
    mean = float(np.mean(list(accs.values())))
    return accs, mean


def federated_training(cfg: ExperimentConfig, ds, client_ids,
                       eval_ids=None, on_round=None):
    """Train a federation over the given client indices.

    Returns (server, records): one record dict per round, round 0 being
    the evaluation of the freshly initialized global model.
    """
    eval_ids = list(client_ids) if eval_ids is None else list(eval_ids)
    net_spec = default_net_spec(channels=cfg.dataset.channels,
                                image_size=cfg.dataset.image_size,
                                classes=ds.classes)
    init = {k: t.data for k, t in
            init_params(net_spec, stream(cfg.seed, "init")).items()}
    is_ffa = cfg.algorithm in FFA_VARIANTS
    server = ServerState(
        params=init,
        stat_channels=net_spec.stage_channels if is_ffa else (),
    )
    round_cfg = RoundConfig(
        participation=cfg.participation,
        aggregation=cfg.aggregation,
        server_momentum=cfg.server_momentum if cfg.algorithm == "fedavgm" else 0.0,
        exchange_stats=is_ffa,
        alpha=cfg.alpha,
        seed=cfg.seed,
    )
    clients = [ClientState(client_id=i, data=ds.clients[i]) for i in client_ids]
    train_fn = make_train_fn(cfg, net_spec)

    records = []
    accs, mean = _eval_round(server, net_spec, ds, eval_ids)
    records.append({"round": 0, "train_loss": {}, "mean_train_loss": None,
                    "test_acc": {str(i): a for i, a in accs.items()},
                    "mean_test_acc": mean, "selected": [],
                    "uplink_bytes": 0, "downlink_bytes": 0,
                    "uplink_bytes_per_client": 0,
                    "downlink_bytes_per_client": 0})
    timings = []
    for r in range(1, cfg.rounds + 1):
        report = run_round(server, clients, r, round_cfg, train_fn)
        accs, mean = _eval_round(server, net_spec, ds, eval_ids)
        report.eval_acc = accs
        report.mean_eval_acc = mean
        sel_ids = [clients[i].client_id for i in report.selected]
        records.append({
            "round": r,
            "train_loss": {str(clients[i].client_id): v
                           for i, v in report.train_loss.items()},
            "mean_train_loss": (float(np.mean(list(report.train_loss.values())))
                                if report.train_loss else None),
            "test_acc": {str(i): a for i, a in accs.items()},
            "mean_test_acc": mean,
            "selected": sel_ids,
            "uplink_bytes": report.uplink_bytes,
            "downlink_bytes": report.downlink_bytes,
            "uplink_bytes_per_client": report.uplink_bytes_per_client,
            "downlink_bytes_per_client": report.downlink_bytes_per_client,
        })
        timings.append(report.wall_clock)
        if on_round is not None:
            on_round(r, records[-1])
    return server, net_spec, records, timings


def run_experiment(cfg: ExperimentConfig, run_root=None) -> str:
    """Run one experiment end to end; returns the run directory path."""
    cfg.validate()
    run_dir = os.path.join(resolve_run_root(run_root), cfg.name)
    os.makedirs(run_dir, exist_ok=True)
    cfg.to_json(os.path.join(run_dir, "config.json"))

    t0 = time.perf_counter()
    ds = build_dataset(cfg.dataset, cfg.clients, cfg.seed)
    server, net_spec, records, timings = federated_training(
        cfg, ds, list(range(cfg.clients)))

    with open(os.path.join(run_dir, "metrics.jsonl"), "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    checkpoint.save(os.path.join(run_dir, "model.bin"), server.params)
    with open(os.path.join(run_dir, "timing.txt"), "w") as f:
        f.write(f"total_seconds {time.perf_counter() - t0:.3f}\n")
        for i, w in enumerate(timings, start=1):
            f.write(f"round{i}_seconds {w:.3f}\n")
    return run_dir


def leave_one_out(cfg: ExperimentConfig, held_out_client: int,
                  run_root=None) -> dict:
    """Train on all clients but one; report generalization to the held-out.

    The dataset is built exactly as in run_experiment, so the held-out
    client's data is what it would have contributed in federation.
    """
    cfg.validate()
    if not 0 <= held_out_client < cfg.clients:
        raise ValueError(f"held_out_client must be in [0, {cfg.clients})")
    if cfg.clients < 2:
        raise ValueError("leave-one-out needs at least 2 clients")
    ds = build_dataset(cfg.dataset, cfg.clients, cfg.seed)
    train_ids = [i for i in range(cfg.clients) if i != held_out_client]
    server, net_spec, records, _ = federated_training(cfg, ds, train_ids)

    held = ds.clients[held_out_client]
    held_acc = evaluate(server.params, net_spec, held.x_test, held.y_test)
    in_fed = records[-1]["mean_test_acc"]
    result = {
        "held_out_client": held_out_client,
        "held_out_acc": held_acc,
        "in_federation_acc": in_fed,
        "participation_gap": in_fed - held_acc,
        "rounds": cfg.rounds,
        "algorithm": cfg.algorithm,
        "seed": cfg.seed,
    }
    if run_root is not None:
        run_dir = os.path.join(resolve_run_root(run_root),
                               f"{cfg.name}_loo{held_out_client}")
        os.makedirs(run_dir, exist_ok=True)
        cfg.to_json(os.path.join(run_dir, "config.json"))
        with open(os.path.join(run_dir, "leave_one_out.json"), "w") as f:
            json.dump(result, f, indent=2, sort_keys=True)
            f.write("\n")
    return result
