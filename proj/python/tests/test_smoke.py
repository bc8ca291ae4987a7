# SPDX-License-Identifier: Apache-2.0
# Copyright (C) 2026 The ltag authors

import math
from pathlib import Path

import numpy as np
import pytest

import ltag

ROOT = Path(__file__).resolve().parents[2]


@pytest.fixture(scope="module")
def scenario():
    return ltag.Scenario.load(str(ROOT / "scenarios" / "benchmark.yaml"))


@pytest.fixture(scope="module")
def small(scenario):
    train, _ = ltag.generate(scenario, 300, seed=1)
    test, _ = ltag.generate(scenario, 100, seed=1001)
    return train, test


def test_scenario_roundtrip(scenario):
    again = ltag.Scenario.parse(scenario.dump())
    assert again.receiver_ids == scenario.receiver_ids
    assert again.n_cells == scenario.n_cells


def test_bad_yaml_raises():
    with pytest.raises(ValueError):
        ltag.Scenario.parse("receivers: [")


def test_generate_shapes(small):
    train, _ = small
    n = len(train)
    assert n > 300
    assert train.values.shape == (n, train.n_features)
    assert train.mask.shape == train.values.shape
    assert len(train.labels) == n and len(train.types) == n
    assert set(np.unique(train.mask)) <= {0.0, 1.0}


def test_generate_is_deterministic(scenario):
    a, _ = ltag.generate(scenario, 20, seed=7)
    b, _ = ltag.generate(scenario, 20, seed=7)
    assert np.array_equal(a.values, b.values)


def test_train_predict_save_load(small, tmp_path):
    train, test = small
    model = ltag.train(train, max_epochs=40, seed=3)
    m = ltag.evaluate(model, test)
    assert m["messages"]["accuracy"] > 0.8
    assert m["connections"]["accuracy"] >= 0.8
    p = model.predict(test.values, test.mask, test.types)
    assert p.shape == (len(test),)
    assert np.all((p >= 0) & (p <= 1))

    path = tmp_path / "model.txt"
    model.save(str(path))
    again = ltag.Model.load(str(path))
    assert np.array_equal(again.predict(test.values, test.mask, test.types), p)


def test_predict_rejects_mismatched_rows(small):
    train, test = small
    model = ltag.train(train, max_epochs=2, seed=1)
    with pytest.raises(ValueError):
        model.predict(test.values, test.mask, test.types[:-1])


def test_dataset_csv_roundtrip(small, tmp_path):
    _, test = small
    path = tmp_path / "d.csv"
    test.save_csv(str(path))
    again = ltag.Dataset.load_csv(str(path))
    assert len(again) == len(test)
    assert np.allclose(again.values, test.values, equal_nan=True)


def test_snr_sweep_tracks_truth():
    pts = ltag.snr_sweep([-5.0, 5.0, 15.0], trials=20, seed=1)
    means = [p["p2a_mean"] for p in pts]
    assert means[0] < means[1] < means[2]
    assert ltag.spearman([p["snr_db"] for p in pts], means) == pytest.approx(1.0)


def test_aoa_sweep_broadside_balanced():
    pts = dict(ltag.aoa_sweep([90.0], trials=20, seed=1))
    assert abs(pts[90.0]) < 1.0


def test_channelize_tone_lands_in_its_channel():
    fs = 1.92e6
    n = 19200
    t = np.arange(n) / fs
    tone = np.exp(2j * math.pi * 180e3 * t)
    out = ltag.channelize(list(tone), fs, [(180e3, 180e3), (-500e3, 180e3)])
    assert len(out) == 2
    hit = np.abs(np.asarray(out[0][1][200:-200])) ** 2
    miss = np.abs(np.asarray(out[1][1][200:-200])) ** 2
    assert hit.mean() > 1e4 * max(miss.mean(), 1e-30)


def test_bus_round_trip():
    s = ltag.bus_round_trip(50, 64)
    assert s["count"] == 50
    assert s["p50_us"] > 0
