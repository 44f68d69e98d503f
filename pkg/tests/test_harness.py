import json
import math

import numpy as np
import pytest

from msle_lab import rng
from msle_lab.conformal import DrivingFunction
from msle_lab.harness import (MIN_COMPARE, ExperimentConfig, InsufficientSamples, cmd_compare,
                              cmd_drive, cmd_sample, cmd_simulate, cmd_validate,
                              compare_marginals, compare_samples, density_constant,
                              domain_radius, ks_against_brownian, load_domain, marginals,
                              read_drivings_csv, stopped_value, truncate_at_ball)
from msle_lab.lattice import build_rect_domain, inner_ball


def test_config_validation_and_hash(tmp_path):
    cfg = ExperimentConfig(meshes=(15, 31), masses=(0.0, 2.0), samples=10)
    assert cfg.spacing(15) == 1 / 16
    with pytest.raises(ValueError):
        ExperimentConfig(meshes=(3,), masses=(3.0,))
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"meshes": [15], "colour": "red"})
    assert cfg.digest == ExperimentConfig(meshes=[15, 31], masses=[0.0, 2.0], samples=10,
                                          out="elsewhere").digest
    assert cfg.digest != ExperimentConfig(meshes=(15, 31), masses=(0.0, 2.0), samples=11).digest
    toml = tmp_path / "c.toml"
    toml.write_text("meshes = [15, 31]\nmasses = [0.0, 2.0]\nsamples = 10\n")
    js = tmp_path / "c.json"
    js.write_text(json.dumps({"meshes": [15, 31], "masses": [0.0, 2.0], "samples": 10}))
    assert ExperimentConfig.from_file(toml).digest == cfg.digest
    assert ExperimentConfig.from_file(js) == cfg


def test_domain_file_round_trip(tmp_path):
    dom = build_rect_domain(4, 3, 0.2, "left", "right", (2, 2))
    data = {"mesh": 0.2, "interior": [list(v) for v in dom.vertices],
            "a": [list(x) for x in dom.boundary_edges[dom.a_edge]],
            "b": [list(x) for x in dom.boundary_edges[dom.b_edge]], "origin": [2, 2]}
    path = tmp_path / "dom.json"
    path.write_text(json.dumps(data))
    back = load_domain(path)
    assert back.interior == dom.interior
    assert back.a_int == dom.a_int and back.b_int == dom.b_int and back.origin == (2, 2)


def test_stopping_helpers():
    d = DrivingFunction([0.1, 0.1, 0.1], [0.5, -0.2, 0.3])
    assert stopped_value(d, 0.15) == -0.2
    assert stopped_value(d, 5.0) == 0.3
    assert stopped_value(DrivingFunction([], []), 0.2) == 0.0
    assert marginals([d], [0.1, 0.3]).tolist() == [[0.5, 0.3]]
    dom = build_rect_domain(7, 7, 1 / 8)
    curve = [dom.a_out] + [(4, j) for j in range(1, 8)] + [dom.b_out]
    ball = inner_ball(dom, 0.3)
    cut = truncate_at_ball(dom, curve, 0.3)
    assert not set(cut) & ball and curve[len(cut)] in ball
    assert truncate_at_ball(dom, curve, 0.0) == curve


def test_statistics_refuse_small_samples():
    x = np.zeros(MIN_COMPARE - 1)
    with pytest.raises(InsufficientSamples):
        compare_samples(x, x)
    with pytest.raises(InsufficientSamples):
        ks_against_brownian(x, 0.5)
    with pytest.raises(InsufficientSamples):
        cmd_compare(ExperimentConfig(samples=100), out=None)


def test_statistics_on_known_laws():
    gen = rng.generator(5, 0)
    t = 0.5
    x = gen.normal(0.0, math.sqrt(2 * t), size=(2000, 1))
    y = gen.normal(0.0, math.sqrt(2 * t), size=(2000, 1))
    c = compare_samples(x[:, 0], y[:, 0])
    assert c.pooled_se == pytest.approx(math.sqrt(2 * t * 2 / 2000), rel=0.1)
    rows = compare_marginals(x, y, [t], 0.0)
    assert rows[0]["passed"] and rows[0]["ks_brownian_p"] >= 0.01
    shifted = compare_marginals(x + 0.3, y, [t], 1.0)
    assert not shifted[0]["passed"]
    assert ks_against_brownian(x[:, 0] * 2, t) < 0.01


def test_validate_suite():
    checks = cmd_validate()
    assert [c.name for c in checks] == [
        "resolvent identity", "green symmetry", "path probability formula",
        "martingale one-step", "boundary ratio decay", "continuum resolvent", "hadamard",
        "massive hadamard"]
    assert all(c.passed for c in checks), [c.line() for c in checks]
    assert checks[0].line().startswith("PASS")


def test_validate_negative_control_fails():
    checks = cmd_validate(negative_control=True)
    assert not checks[0].passed


def test_validate_massless_degenerates():
    checks = {c.name: c for c in cmd_validate(seeds=[1], masses=(0.0,))}
    assert checks["massive hadamard"].residual == checks["hadamard"].residual
    assert checks["continuum resolvent"].residual == 0.0
    assert all(c.passed for c in checks.values())


def test_sample_is_deterministic_and_bounded(tmp_path):
    dom = build_rect_domain(8, 8, 1 / 9)
    m = 1 / domain_radius(dom)
    cfg = ExperimentConfig(meshes=(8,), masses=(0.0, m), samples=40, seed=3)
    first = cmd_sample(cfg, out=tmp_path / "a")
    second = cmd_sample(cfg, out=tmp_path / "b")
    assert [p.read_bytes() for p in first] == [p.read_bytes() for p in second]
    lines = first[1].read_text().splitlines()
    header = json.loads(lines[0])
    assert header["config_hash"] == cfg.digest and header["m"] == m
    bound = density_constant(dom, m) * (m * domain_radius(dom)) ** 2
    logs = [json.loads(line)["log_density"] for line in lines[1:]]
    assert len(logs) == 40 and max(logs) <= bound
    assert all(json.loads(line)["log_density"] == 0.0 for line in first[0].read_text().splitlines()[1:])


def test_drive_straight_curve_has_zero_driving(tmp_path):
    cfg = ExperimentConfig(meshes=(15,), times=(0.25,))
    dom = cfg.domain(15)
    straight = [dom.a_out] + [(8, j) for j in range(1, 16)] + [dom.b_out]
    (path,) = cmd_drive(cfg, out=tmp_path, curves=[straight])
    (drv,) = read_drivings_csv(path.read_text())
    assert np.abs(drv.xi).max() <= 1e-9
    assert drv.total_capacity >= 0.25


def test_drive_and_simulate_are_deterministic(tmp_path):
    cfg = ExperimentConfig(meshes=(7,), masses=(0.0, 1.5), samples=3, times=(0.05,),
                           sim_mesh=15, sim_dt=1e-2, seed=9)
    for command in (cmd_drive, cmd_simulate):
        a = command(cfg, out=tmp_path / "a")
        b = command(cfg, out=tmp_path / "b")
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
        assert all(p.read_text().startswith(f"# config_hash: {cfg.digest}") for p in a)
    sims = read_drivings_csv((tmp_path / "a" / "sim_n7_m1.5.csv").read_text())
    assert len(sims) == 3 and all(d.total_capacity == pytest.approx(0.05) for d in sims)
    drift = (tmp_path / "a" / "drift_n7_m1.5.csv").read_text().splitlines()
    body = [line for line in drift if not line.startswith("#")]
    assert body[0] == "sample,t,N_m,lambda,int_P,int_PPm,int_QK"
    assert len(body) == 1 + 3  # five steps at cadence five: one report each
