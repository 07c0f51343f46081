import json
import math

import numpy as np
import pytest

import spdnas


def test_distance_and_maps():
    e = math.e
    x = np.diag([e * e, 1.0])
    assert spdnas.spd_distance(np.eye(2), x) == pytest.approx(1.0, rel=1e-14)
    a = spdnas.random_spd(5, seed=1)
    b = spdnas.random_spd(5, seed=2)
    assert spdnas.is_spd(a)
    back = spdnas.exp_map(a, spdnas.log_map(a, b))
    np.testing.assert_allclose(back, b, atol=1e-9)
    np.testing.assert_allclose(spdnas.expm(spdnas.logm(a)), a, atol=1e-10)


def test_sym_eig_sorted():
    values, vectors = spdnas.sym_eig(np.diag([1.0, 3.0, 2.0]))
    np.testing.assert_allclose(values, [3.0, 2.0, 1.0])
    np.testing.assert_allclose(vectors.T @ vectors, np.eye(3), atol=1e-14)


def test_karcher_matches_geodesic_midpoint():
    r = spdnas.karcher_wfm([np.diag([4.0, 1.0]), np.diag([1.0, 4.0])], [0.5, 0.5], max_iters=50, tol=1e-12)
    np.testing.assert_allclose(r["mean"], np.diag([2.0, 2.0]), atol=1e-10)
    assert r["converged"]
    rec = spdnas.recursive_wfm([np.diag([4.0, 1.0]), np.diag([1.0, 4.0])], [0.5, 0.5])
    np.testing.assert_allclose(rec["mean"], r["mean"], atol=1e-10)


def test_simplex_maps():
    np.testing.assert_allclose(spdnas.sparsemax([0.7, 0.3]), [0.7, 0.3])
    p = spdnas.sparsemax([2.0, 0.0, -1.0])
    assert p.tolist() == [1.0, 0.0, 0.0]
    assert spdnas.softmax([0.0, 0.0]).tolist() == [0.5, 0.5]
    assert spdnas.normalized_sigmoid([1.0, 1.0, 1.0, 1.0]).sum() == pytest.approx(1.0)


def test_layers_and_stiefel():
    x = spdnas.random_spd(20, cond=100.0, seed=3)
    w = spdnas.random_stiefel(20, 10, seed=4)
    assert spdnas.orthonormality_error(w) < 1e-12
    y = spdnas.bimap(x, w)
    assert y.shape == (10, 10)
    assert spdnas.is_spd(y)
    r = spdnas.reeig(np.diag([1.0, 1e-6]), epsilon=1e-4)
    np.testing.assert_allclose(np.diag(r), [1.0, 1e-4])
    np.testing.assert_allclose(spdnas.expeig(spdnas.logeig(y)), y, atol=1e-9)
    assert spdnas.avg_pool_reduced(y, 2).shape == (5, 5)
    step = spdnas.riem_sgd_step(w, np.ones((20, 10)), 0.1)
    assert spdnas.orthonormality_error(step) < 1e-10


def test_errors_are_typed():
    with pytest.raises(spdnas.DomainError):
        spdnas.logm(np.diag([1.0, -1.0]))
    with pytest.raises(spdnas.ShapeError):
        spdnas.spd_distance(np.eye(2), np.eye(3))
    with pytest.raises(spdnas.ConfigError):
        spdnas.search({"model": {"classes": 1}})
    assert issubclass(spdnas.ConfigError, spdnas.Error)


def test_synthetic_data():
    xs, ys = spdnas.synth_generate(classes=3, dim=6, per_class=4, seed=2)
    assert len(xs) == 12
    assert sorted(set(ys)) == [0, 1, 2]
    assert all(spdnas.is_spd(x) for x in xs)


def test_search_and_train_tiny():
    cfg = spdnas.config(
        seed=5,
        workers=1,
        data={"synth": {"classes": 3, "dim": 6, "per_class": 8, "noise": 0.5}},
        model={"input_dim": 6, "classes": 3, "nodes": 4, "cells": [{"kind": "reduction", "out_dim": 2}]},
        search={"epochs": 1, "batch_size": 6},
        train={"epochs": 1, "batch_size": 6},
    )
    s1 = spdnas.search(cfg)
    s2 = spdnas.search(json.dumps(cfg))
    assert s1["genotype"] == s2["genotype"]
    assert s1["alpha_csv"] == s2["alpha_csv"]
    assert len(s1["metrics"]) == 1
    dot = spdnas.export_dot(json.dumps(s1["genotype"]))
    assert dot.startswith("digraph")
    count, mb = spdnas.param_report(json.dumps(s1["genotype"]))
    assert count > 0 and mb == pytest.approx(count * 4 / 2**20)
    t = spdnas.train(cfg, s1["genotype"])
    assert 0.0 <= t["test_acc"] <= 1.0
    assert math.isfinite(t["test_loss"])
