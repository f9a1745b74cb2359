import csv
import json
import os

import numpy as np
import pytest

from fedfa import checkpoint
from fedfa.cli import main
from fedfa.config import DatasetConfig, ExperimentConfig
from fedfa.experiment import (build_dataset, evaluate, leave_one_out,
                              mixup_batch, run_experiment)
from fedfa.layers import ConvNet, default_net_spec, init_params
from fedfa.report import collect_runs, emit_report
from fedfa.rng import stream
from fedfa.tensor import Tensor
from fedfa.theory import linear_check, reference_check, theory_check

TINY_DS = dict(classes=3, image_size=4, channels=2, noise=0.5,
               train_per_client=8, test_per_client=4)


def tiny_cfg(**kw):
    ds = DatasetConfig(**TINY_DS)
    base = dict(algorithm="fedfa", rounds=2, lr=0.05, batch_size=8,
                clients=2, seed=0, dataset=ds)
    base.update(kw)
    return ExperimentConfig(**base)


# ------------------------------------------------------------------ config

def test_config_round_trip(tmp_path):
    cfg = tiny_cfg(algorithm="fedprox", prox_mu=0.3, run_name="x")
    path = tmp_path / "c.json"
    cfg.to_json(path)
    assert ExperimentConfig.from_json(path) == cfg


def test_config_defaults():
    cfg = ExperimentConfig()
    assert cfg.p == 0.5
    assert cfg.alpha == 0.99
    assert cfg.local_epochs == 1
    assert cfg.participation == 1.0
    assert cfg.algorithm == "fedfa"


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown experiment"):
        ExperimentConfig.from_dict({"algorithm": "fedavg", "lrate": 0.1})
    with pytest.raises(ValueError, match="unknown dataset"):
        ExperimentConfig.from_dict({"dataset": {"classs": 4}})


def test_config_validation():
    with pytest.raises(ValueError, match="algorithm"):
        tiny_cfg(algorithm="fedsgd").validate()
    with pytest.raises(ValueError, match="rounds"):
        tiny_cfg(rounds=-1).validate()
    with pytest.raises(ValueError, match="p must"):
        tiny_cfg(p=1.5).validate()
    with pytest.raises(ValueError, match="aggregation"):
        tiny_cfg(aggregation="median").validate()
    with pytest.raises(ValueError, match="dataset kind"):
        ExperimentConfig(dataset=DatasetConfig(kind="iid")).validate()
    with pytest.raises(ValueError, match="divisible"):
        ExperimentConfig(dataset=DatasetConfig(image_size=6)).validate()


def test_config_name():
    assert tiny_cfg(algorithm="fedavg", seed=3).name == "fedavg_seed3"
    assert tiny_cfg(run_name="ablation1").name == "ablation1"


# ------------------------------------------------------------------- mixup

def test_mixup_lam_one_identity():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 2, 3, 3))
    y = np.arange(4)
    xm, ya, yb, lam = mixup_batch(x, y, 0.2, rng, lam=1.0)
    assert np.array_equal(xm, x)
    assert np.array_equal(ya, y)
    assert lam == 1.0


def test_mixup_half_blend_consistent():
    rng = np.random.default_rng(1)
    x = np.arange(4.0).reshape(4, 1, 1, 1)
    y = np.arange(4)
    xm, ya, yb, lam = mixup_batch(x, y, 0.2, rng, lam=0.5)
    # partner labels identify the permutation; check the blend matches it
    assert np.allclose(xm[:, 0, 0, 0], 0.5 * y + 0.5 * yb)
    assert np.array_equal(ya, y)


def test_mixup_sum_preserved():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 2, 2, 2))
    xm, _, _, lam = mixup_batch(x, np.zeros(6, dtype=int), 0.4, rng)
    assert 0.0 <= lam <= 1.0
    assert xm.sum() == pytest.approx(x.sum(), abs=1e-9)


def test_mixup_small_batch_passthrough():
    x = np.ones((1, 2, 2, 2))
    y = np.zeros(1, dtype=int)
    xm, ya, yb, lam = mixup_batch(x, y, 0.2, np.random.default_rng(0))
    assert xm is x and lam == 1.0


def test_mixup_bad_beta():
    with pytest.raises(ValueError, match="beta"):
        mixup_batch(np.ones((2, 1, 1, 1)), np.zeros(2, dtype=int), 0.0,
                    np.random.default_rng(0))


# -------------------------------------------------------------- experiment

def test_build_dataset_kinds():
    for kind in ("feature_shift", "dirichlet", "size_skew"):
        ds = build_dataset(DatasetConfig(kind=kind, **TINY_DS), m=3, seed=0)
        assert len(ds.clients) == 3
        assert ds.classes == 3
        for c in ds.clients:
            assert c.n_train >= 1


def test_run_experiment_zero_rounds(tmp_path):
    run_dir = run_experiment(tiny_cfg(rounds=0), run_root=tmp_path)
    with open(os.path.join(run_dir, "metrics.jsonl")) as f:
        records = [json.loads(l) for l in f]
    assert len(records) == 1
    assert records[0]["round"] == 0
    assert records[0]["train_loss"] == {}
    assert records[0]["mean_train_loss"] is None
    assert 0.0 <= records[0]["mean_test_acc"] <= 1.0


def test_run_experiment_artifacts(tmp_path):
    cfg = tiny_cfg()
    run_dir = run_experiment(cfg, run_root=tmp_path)
    assert os.path.basename(run_dir) == "fedfa_seed0"
    for name in ("config.json", "metrics.jsonl", "model.bin", "timing.txt"):
        assert os.path.isfile(os.path.join(run_dir, name)), name
    assert ExperimentConfig.from_json(os.path.join(run_dir, "config.json")) == cfg
    params = checkpoint.load(os.path.join(run_dir, "model.bin"))
    spec = default_net_spec(channels=2, image_size=4, classes=3)
    want = init_params(spec, stream(0, "init"))
    assert set(params) == set(want)
    with open(os.path.join(run_dir, "timing.txt")) as f:
        lines = f.read().splitlines()
    assert lines[0].startswith("total_seconds ")
    assert len(lines) == 1 + cfg.rounds


def test_run_experiment_deterministic(tmp_path):
    cfg = tiny_cfg(rounds=3)
    d1 = run_experiment(cfg, run_root=tmp_path / "a")
    d2 = run_experiment(cfg, run_root=tmp_path / "b")
    m1 = open(os.path.join(d1, "metrics.jsonl"), "rb").read()
    m2 = open(os.path.join(d2, "metrics.jsonl"), "rb").read()
    assert m1 == m2
    b1 = open(os.path.join(d1, "model.bin"), "rb").read()
    b2 = open(os.path.join(d2, "model.bin"), "rb").read()
    assert b1 == b2


def test_run_experiment_records_schema(tmp_path):
    run_dir = run_experiment(tiny_cfg(rounds=2), run_root=tmp_path)
    keys = {"round", "train_loss", "mean_train_loss", "test_acc",
            "mean_test_acc", "selected", "uplink_bytes", "downlink_bytes",
            "uplink_bytes_per_client", "downlink_bytes_per_client"}
    with open(os.path.join(run_dir, "metrics.jsonl")) as f:
        for line in f:
            rec = json.loads(line)
            assert set(rec) == keys
    assert rec["round"] == 2
    assert rec["selected"] == [0, 1]
    assert rec["uplink_bytes"] > 0


def test_training_reduces_loss(tmp_path):
    cfg = tiny_cfg(algorithm="fedavg", rounds=5,
                   dataset=DatasetConfig(**{**TINY_DS, "train_per_client": 24}))
    run_dir = run_experiment(cfg, run_root=tmp_path)
    with open(os.path.join(run_dir, "metrics.jsonl")) as f:
        records = [json.loads(l) for l in f]
    assert records[-1]["mean_train_loss"] < records[1]["mean_train_loss"]
    assert records[-1]["mean_test_acc"] > records[0]["mean_test_acc"]


def test_every_algorithm_runs(tmp_path):
    for algo in ("fedavg", "fedprox", "fedavgm", "mixup",
                 "fedfa", "fedfa-c", "fedfa-r"):
        cfg = tiny_cfg(algorithm=algo, rounds=1)
        run_dir = run_experiment(cfg, run_root=tmp_path)
        with open(os.path.join(run_dir, "metrics.jsonl")) as f:
            records = [json.loads(l) for l in f]
        assert len(records) == 2, algo
        assert records[1]["mean_train_loss"] is not None, algo


def test_stat_exchange_only_for_augmented(tmp_path):
    plain = run_experiment(tiny_cfg(algorithm="fedavg", rounds=1,
                                    run_name="pl"), run_root=tmp_path)
    aug = run_experiment(tiny_cfg(algorithm="fedfa", rounds=1,
                                  run_name="au"), run_root=tmp_path)
    rec_p = json.loads(open(os.path.join(plain, "metrics.jsonl")).readlines()[-1])
    rec_a = json.loads(open(os.path.join(aug, "metrics.jsonl")).readlines()[-1])
    spec = default_net_spec(channels=2, image_size=4, classes=3)
    extra = 2 * sum(spec.stage_channels) * 8
    assert rec_a["uplink_bytes_per_client"] - rec_p["uplink_bytes_per_client"] == extra


def test_leave_one_out(tmp_path):
    cfg = tiny_cfg(clients=3, rounds=2)
    out = leave_one_out(cfg, held_out_client=1, run_root=tmp_path)
    assert out["held_out_client"] == 1
    assert 0.0 <= out["held_out_acc"] <= 1.0
    assert out["participation_gap"] == pytest.approx(
        out["in_federation_acc"] - out["held_out_acc"])
    saved = json.load(open(os.path.join(tmp_path, "fedfa_seed0_loo1",
                                        "leave_one_out.json")))
    assert saved == pytest.approx(out)


def test_leave_one_out_bad_index():
    with pytest.raises(ValueError, match="held_out_client"):
        leave_one_out(tiny_cfg(), held_out_client=7)


def test_evaluate_bounds():
    spec = default_net_spec(channels=2, image_size=4, classes=3)
    params = init_params(spec, stream(0, "init"))
    x = np.random.default_rng(0).standard_normal((10, 2, 4, 4))
    y = np.zeros(10, dtype=int)
    acc = evaluate({k: t.data for k, t in params.items()}, spec, x, y)
    assert 0.0 <= acc <= 1.0


# ------------------------------------------------------------------ theory

def test_theory_zero_noise_exact():
    spec = default_net_spec(channels=2, image_size=4, classes=3)
    net = ConvNet(spec, init_params(spec, stream(0, "init")))
    x = np.random.default_rng(0).standard_normal((4, 2, 4, 4))
    y = np.random.default_rng(1).integers(0, 3, size=4)
    report = theory_check(net, (x, y), [None, None], [0.1, 0.01])
    assert report.linear_coefficient == 0.0
    assert report.residuals == [0.0, 0.0]
    assert report.exponent is None


def test_theory_reference_configuration():
    report = reference_check()
    assert report.passes()
    assert 1.8 <= report.exponent <= 2.2
    assert report.details["usable_points"] >= 2


def test_theory_affine_pipeline_exact():
    report = linear_check()
    assert all(r < 1e-10 for r in report.residuals)
    assert report.exponent is None


def test_theory_rejects_bad_scales():
    spec = default_net_spec(channels=2, image_size=4, classes=3)
    net = ConvNet(spec, init_params(spec, stream(0, "init")))
    x = np.zeros((2, 2, 4, 4))
    y = np.zeros(2, dtype=int)
    with pytest.raises(ValueError, match="positive"):
        theory_check(net, (x, y), [None, None], [0.1, -0.1])


def test_theory_flags_nonfinite_loss():
    spec = default_net_spec(channels=2, image_size=4, classes=3)
    net = ConvNet(spec, init_params(spec, stream(0, "init")))
    x = np.random.default_rng(0).standard_normal((2, 2, 4, 4))
    y = np.zeros(2, dtype=int)
    _, tape = net.forward(Tensor(x))
    bad = np.full_like(tape.stage_outputs[0].data, np.inf)
    with np.errstate(all="ignore"), pytest.raises(FloatingPointError,
                                                  match="noise scale"):
        theory_check(net, (x, y), [bad, None], [0.5])


# ------------------------------------------------------------------ report

def test_report_empty_root(tmp_path):
    csv_path, svg_path, warnings = emit_report(tmp_path)
    rows = list(csv.reader(open(csv_path)))
    assert rows == [["algorithm", "seed", "round",
                     "mean_test_acc", "mean_train_loss"]]
    assert os.path.isfile(svg_path)


def test_report_two_algorithms(tmp_path):
    for algo in ("fedavg", "fedfa"):
        run_experiment(tiny_cfg(algorithm=algo, rounds=1), run_root=tmp_path)
    csv_path, svg_path, warnings = emit_report(tmp_path)
    assert warnings == []
    rows = list(csv.reader(open(csv_path)))
    assert len(rows) == 1 + 2 * 2  # header + 2 runs x 2 records
    svg = open(svg_path).read()
    assert svg.count("<polyline") == 2
    assert ">fedavg</text>" in svg and ">fedfa</text>" in svg


def test_collect_runs_warns_on_stray_dir(tmp_path):
    os.makedirs(tmp_path / "not_a_run")
    run_experiment(tiny_cfg(rounds=0), run_root=tmp_path)
    runs, warnings = collect_runs(tmp_path)
    assert len(runs) == 1
    assert any("not_a_run" in w for w in warnings)


def test_report_accepts_single_run_dir(tmp_path):
    run_dir = run_experiment(tiny_cfg(rounds=1), run_root=tmp_path)
    runs, warnings = collect_runs(run_dir)
    assert len(runs) == 1 and runs[0]["algorithm"] == "fedfa"


# --------------------------------------------------------------------- cli

def test_cli_commcost(capsys):
    assert main(["commcost", "64", "192", "384", "256", "256"]) == 0
    assert capsys.readouterr().out.strip() == "18432"
    assert main(["commcost", "32", "64", "128", "256", "512",
                 "--bytes-per-value", "4"]) == 0
    assert capsys.readouterr().out.strip() == "15872"


def test_cli_run_and_report(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    tiny_cfg(rounds=1).to_json(cfg_path)
    assert main(["run", str(cfg_path), "--run-root", str(tmp_path / "runs")]) == 0
    out = capsys.readouterr().out
    assert "mean_test_acc" in out
    assert main(["report", str(tmp_path / "runs")]) == 0
    assert os.path.isfile(tmp_path / "runs" / "summary.csv")
    assert os.path.isfile(tmp_path / "runs" / "accuracy.svg")


def test_cli_sweep(tmp_path, capsys):
    for seed in (0, 1):
        tiny_cfg(rounds=1, seed=seed).to_json(tmp_path / f"s{seed}.json")
    code = main(["sweep", str(tmp_path / "s*.json"),
                 "--run-root", str(tmp_path / "runs"), "--workers", "1"])
    assert code == 0
    assert sorted(os.listdir(tmp_path / "runs")) == ["fedfa_seed0", "fedfa_seed1"]


def test_cli_sweep_no_match(tmp_path, capsys):
    assert main(["sweep", str(tmp_path / "nothing*.json")]) == 1
    assert "no configs match" in capsys.readouterr().err


def test_cli_check_invariants(capsys):
    assert main(["check", "invariants"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6
    assert "6/6 invariant groups passed" in out


def test_cli_check_theory(capsys):
    assert main(["check", "theory"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "exponent" in out
