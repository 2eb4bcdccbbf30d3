import json
import math

import pytest

import omnifuse


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    overrides = {
        "n_tiles": 16,
        "n_classes": 4,
        "img_channels": 2,
        "opt_channels": 2,
        "opt_len_min": 6,
        "opt_len_max": 8,
        "rad_len_min": 6,
        "rad_len_max": 8,
        "seed": 11,
    }
    info = omnifuse.generate_dataset(str(root), json.dumps(overrides))
    return root, info


def test_version():
    assert omnifuse.__version__ == "0.1.0"


def test_generate_and_info(dataset):
    root, info = dataset
    assert info["tiles"] == 16
    assert info["classes"] == 4
    assert set(info["modalities"]) == {"vhr", "optical_ts", "radar_ts"}
    assert sum(info["splits"].values()) == 16

    loaded = omnifuse.dataset_info(str(root))
    assert loaded["tiles"] == 16
    assert len(loaded["label_vocab"]) == 4
    kinds = {m["name"]: m["kind"] for m in loaded["modalities"]}
    assert kinds["vhr"] == "image"
    assert kinds["optical_ts"] == "time_series"


def test_generate_rejects_unknown_key(tmp_path):
    with pytest.raises(ValueError):
        omnifuse.generate_dataset(str(tmp_path / "x"), json.dumps({"warp": 1}))


def test_select_dates():
    att = [0.1, 0.9, 0.2, 0.8, 0.3, 0.05, 0.4, 0.7]
    assert omnifuse.select_dates(att, 0.25) == [1, 3]
    assert omnifuse.select_dates([0.5, 0.5, 0.5, 0.5], 0.25) == [0]


def test_run_checks_fast():
    results = omnifuse.run_checks(seeds=2)
    assert len(results) == 11
    assert all(r["pass"] for r in results), [r for r in results if not r["pass"]]

    faulty = omnifuse.run_checks(seeds=2, inject_fault="grad")
    failed = [r for r in faulty if not r["pass"]]
    assert [r["name"] for r in failed] == ["gradient-losses"]


def test_train_eval_roundtrip(dataset, tmp_path):
    root, _ = dataset
    cfg = {
        "d": 16,
        "blocks": 1,
        "heads": 2,
        "batch_tiles": 8,
        "pretrain_epochs": 2,
        "finetune_epochs": 2,
        "seed": 5,
    }
    pre = omnifuse.pretrain(str(root), str(tmp_path / "pre"), json.dumps(cfg))
    assert pre["epochs"] == 2
    assert math.isfinite(pre["loss_total"]) and pre["loss_total"] > 0

    fin = omnifuse.finetune(
        str(root),
        str(tmp_path / "fin"),
        from_checkpoint=pre["checkpoint"],
        config_json=json.dumps({"finetune_epochs": 2, "label_fraction": 1.0}),
    )
    assert fin["epochs"] >= 1
    assert 0.0 <= fin["f1_weighted"] <= 1.0

    with pytest.raises(ValueError):
        omnifuse.finetune(
            str(root),
            str(tmp_path / "bad"),
            from_checkpoint=pre["checkpoint"],
            config_json=json.dumps({"d": 32}),
        )

    ev = omnifuse.evaluate(fin["checkpoint"], str(root), split="val")
    assert math.isfinite(ev["bce"])
    assert 0.0 <= ev["f1_weighted"] <= 1.0
    assert len(ev["per_class"]) == 4

    uni = omnifuse.evaluate(fin["checkpoint"], str(root), split="val", modalities=["vhr"])
    assert math.isfinite(uni["bce"])


def test_default_config_parses():
    cfg = json.loads(omnifuse.default_config())
    assert cfg["d"] == 256
    assert cfg["gamma"] == 0.1
