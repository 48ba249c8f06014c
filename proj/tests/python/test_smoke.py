import json
import math
import os
from pathlib import Path

import pytest

import dpn

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


def toy(rows=400):
    return {
        "name": "py",
        "data": {"source": "synth_multiplicative",
                 "multiplicative": {"rows": rows, "users": 8, "items": 8, "dim": 4, "scale": 3.0}},
        "model": {"family": "feature_dpn", "embed_dim": 4,
                  "layers": [{"kind": "feature_dpo", "units": 3, "context": "x:user"}]},
        "train": {"lr": 0.01, "batch_size": 64, "epochs": 2},
    }


def brute_auc(s, y):
    pos = [a for a, l in zip(s, y) if l == 1]
    neg = [a for a, l in zip(s, y) if l == 0]
    won = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return won / (len(pos) * len(neg))


def test_auc_matches_pairwise():
    s = [0.1, 0.4, 0.4, 0.8, 0.3, 0.9, 0.4]
    y = [0, 1, 0, 1, 0, 1, 1]
    assert dpn.auc(s, y) == pytest.approx(brute_auc(s, y), abs=1e-15)


def test_logloss_clipped():
    assert dpn.logloss([0.0], [1.0]) == pytest.approx(-math.log(1e-7))


def test_single_class_auc_raises():
    with pytest.raises(dpn.MetricError):
        dpn.auc([0.1, 0.2], [1, 1])


def test_resolve_rejects_unknown_keys():
    cfg = toy()
    cfg["train"]["momentum"] = 0.9
    with pytest.raises(dpn.ConfigError, match="momentum"):
        dpn.resolve_config(cfg)
    assert issubclass(dpn.ConfigError, dpn.Error)


def test_committed_configs_load():
    names = sorted(p.name for p in CONFIGS.glob("*.json"))
    assert "movielens_mlp.json" in names
    for n in names:
        assert dpn.load_config(CONFIGS / n)["name"] == n[:-5]


def test_param_counts():
    mlp = dpn.load_config(CONFIGS / "movielens_mlp.json")["model"]
    c = dpn.param_counts(mlp, [("userId", 10), ("movieId", 10), ("tag", 10)])
    assert c["dense"] == c["analytic"] == 101101
    assert c["embedding"] == 300


def test_train_is_deterministic(tmp_path):
    a = dpn.train(toy(), tmp_path / "a")
    b = dpn.train(toy())
    a.pop("timing"), b.pop("timing")
    assert a == b
    assert len(a["epochs"]) == 2
    assert 0.0 <= a["test"]["auc"] <= 1.0
    on_disk = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert on_disk == json.loads(json.dumps(a))


def test_verify_identities():
    rows = dpn.verify("identities")
    assert rows and all(r["passed"] for r in rows)
    assert not all(r["passed"] for r in dpn.verify("identities", inject_fault=True))
    with pytest.raises(dpn.UsageError):
        dpn.verify("everything")


def test_missing_data_path():
    cfg = toy()
    cfg["data"] = {"source": "csv", "path": os.path.join("no", "such", "file.csv")}
    with pytest.raises(dpn.ConfigError, match="file.csv"):
        dpn.train(cfg)
