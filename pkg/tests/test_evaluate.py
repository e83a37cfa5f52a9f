"""Metrics and deterministic result writers."""

import json
import math

import numpy as np
import pytest

from mpnav.evaluate import (
    error_cdf,
    max_error_pct,
    rmse_3d,
    run_drift_profile,
    write_csv,
    write_drift_profile,
    write_manifest,
    write_noise_sweep,
    write_outage_sweep,
)


def test_rmse_3d_basic():
    t = np.array([0.0, 1.0])
    assert rmse_3d(t, [3.0, 4.0]) == pytest.approx(math.sqrt(12.5))
    assert rmse_3d(t, [2.0, 2.0]) == pytest.approx(2.0)


def test_rmse_3d_window_selects():
    t = np.arange(5.0)
    e = np.array([10.0, 1.0, 1.0, 1.0, 10.0])
    assert rmse_3d(t, e, (1.0, 3.0)) == pytest.approx(1.0)
    # window edges are inclusive with tolerance
    assert rmse_3d(t, e, (1.0 + 1e-12, 3.0)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        rmse_3d(t, e, (10.0, 11.0))


def test_max_error_pct_basic():
    t = np.array([0.0, 1.0])
    arc = np.array([0.0, 100.0])
    assert max_error_pct(t, [0.5, 1.0], arc) == pytest.approx(1.0)
    # the denominator is travel inside the window, not total travel
    t = np.arange(3.0)
    arc = np.array([0.0, 100.0, 200.0])
    assert max_error_pct(t, [1.0, 2.0, 3.0], arc, (1.0, 2.0)) == pytest.approx(3.0)


def test_max_error_pct_rejects_zero_travel():
    t = np.array([0.0, 1.0])
    arc = np.array([5.0, 5.0])
    with pytest.raises(ValueError):
        max_error_pct(t, [1.0, 1.0], arc)


def test_error_cdf_shape():
    e, p = error_cdf([3.0, 1.0, 2.0, 2.0])
    assert np.array_equal(e, [1.0, 2.0, 2.0, 3.0])
    assert p == pytest.approx([0.25, 0.5, 0.75, 1.0])
    assert p[-1] == 1.0
    assert np.all(np.diff(e) >= 0.0)
    with pytest.raises(ValueError):
        error_cdf([])


def test_fmt_and_write_csv(tmp_path):
    path = tmp_path / "x.csv"
    write_csv(path, ("a", "b", "c"), [(1, 2.5, "s"), (True, 1e-11, 0.1)])
    text = path.read_text()
    assert text == "a,b,c\n1,2.5,s\n1,1e-11,0.1\n"
    with pytest.raises(ValueError):
        write_csv(path, ("a",), [(1, 2)])


def test_write_manifest_versions(tmp_path):
    path = tmp_path / "manifest.json"
    write_manifest(path, {"k": 1}, {"mode": "single", "seed": 3})
    body = json.loads(path.read_text())
    assert body["config"] == {"k": 1}
    assert body["mode"] == "single"
    assert body["seed"] == 3
    for key in ("package_version", "numpy_version", "scipy_version"):
        assert isinstance(body[key], str) and body[key]
    # deterministic serialization: sorted keys, trailing newline
    assert path.read_text().endswith("\n")
    assert list(body) == sorted(body)


def test_drift_profile_sweep_scales(tmp_path):
    sweep = run_drift_profile(
        bias_scales=(1.0, 4.0), seeds=(0, 1, 2), duration_s=20.0, rate_hz=20.0
    )
    again = run_drift_profile(
        bias_scales=(1.0, 4.0), seeds=(0, 1, 2), duration_s=20.0, rate_hz=20.0
    )
    assert sweep == again
    med = [np.median(r["final_drift_m"]) for r in sweep["rows"]]
    assert med[1] > med[0] > 0.0
    write_drift_profile(tmp_path, sweep)
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0] == "bias_scale,median_drift_m"
    assert len(lines) == 3
    lines = (tmp_path / "seeds.csv").read_text().splitlines()
    assert lines[0] == "bias_scale,seed,final_drift_m"
    assert len(lines) == 7


def synthetic_outage_sweep():
    return {
        "mode": "outage-sweep",
        "seeds": [0, 1],
        "cases": [
            {
                "case": 0,
                "duration_s": 20.0,
                "speed_mps": 9.8,
                "distance_m": 196.0,
                "rmse_with_m": [0.1, 0.3],
                "rmse_without_m": [2.0, 4.0],
                "maxpct_with": [0.2, 0.4],
                "maxpct_without": [3.0, 5.0],
            }
        ],
    }


def test_write_outage_sweep_schema(tmp_path):
    write_outage_sweep(tmp_path, synthetic_outage_sweep())
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0] == (
        "case,duration_s,speed_mps,distance_m,"
        "rms_without_m,pct_without,rms_with_m,pct_with"
    )
    assert lines[1] == "0,20,9.8,196,3,4,0.2,0.3"
    lines = (tmp_path / "seeds.csv").read_text().splitlines()
    assert lines[0] == "case,seed,rms_without_m,pct_without,rms_with_m,pct_with"
    assert lines[1] == "0,0,2,3,0.1,0.2"
    assert lines[2] == "0,1,4,5,0.3,0.4"


def test_write_noise_sweep_schema(tmp_path):
    sweep = {
        "mode": "noise-sweep",
        "seeds": [0, 1],
        "var_ranges": [0.5],
        "var_angles": [0.01],
        "cells": [
            {
                "var_range_m2": 0.5,
                "var_angle_deg2": 0.01,
                "rmse_with_m": [0.1, 0.2],
                "rmse_without_m": [1.0, 3.0],
            }
        ],
    }
    write_noise_sweep(tmp_path, sweep)
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0] == "var_range_m2,var_angle_deg2,rmse_with_med_m,rmse_without_med_m"
    assert lines[1] == "0.5,0.01,0.15,2"
    lines = (tmp_path / "seeds.csv").read_text().splitlines()
    assert lines[0] == "var_range_m2,var_angle_deg2,seed,rmse_with_m,rmse_without_m"
    assert len(lines) == 3
