import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsisae.errors import ConfigError, ContractError, HsiSaeError, ShapeError
from hsisae.hsidata import GroundTruth, SynthSpec, normalize_bands, save_cube, save_ground_truth, stratified_split, synth_scene
from hsisae.numkit import Rng, derive_seed
from hsisae.pipeline import (
    PALETTE,
    ExperimentConfig,
    _fit_scheme,
    compute_metrics,
    palette_color,
    render_map,
    run_experiment,
)

TINY = {"width": 12, "height": 10, "bands": 8, "n_classes": 3, "noise": 0.05, "seed": 1}

QUICK = {
    "svm": {},
    "pca-svm": {"pca": {"k": 3}},
    "ae-svm": {"hidden_sizes": [6], "ae": {"epochs": 3}},
    "sae-lr": {"hidden_sizes": [6, 5], "ae": {"epochs": 3}, "finetune": {"epochs": 3}},
    "ssae-lr": {"hidden_sizes": [10, 5], "ae": {"epochs": 3}, "finetune": {"epochs": 3}, "patch": {"window": 3}},
}


def config(scheme, synth=TINY, **extra):
    raw = {"scheme": scheme, "seed": 3, "data": {"synth": dict(synth)}}
    raw.update(QUICK[scheme])
    raw.update(extra)
    return raw


# --- metrics --------------------------------------------------------------------


def test_metrics_all_correct():
    r = compute_metrics([1, 2, 3, 3], [1, 2, 3, 3], 3)
    assert r.overall_error == 0.0
    assert r.confusion == [[1, 0, 0], [0, 1, 0], [0, 0, 2]]


def test_metrics_hand_count():
    r = compute_metrics([1, 1, 2, 2], [1, 2, 2, 2], 2)
    assert r.overall_error == 0.25 and r.overall_error_percent == 25.0
    assert r.confusion == [[1, 1], [0, 2]]
    assert r.per_class_accuracy == [0.5, 1.0]


def test_metrics_absent_class_accuracy_is_none():
    assert compute_metrics([1, 1], [1, 2], 3).per_class_accuracy[2] is None


def test_metrics_errors():
    with pytest.raises(ShapeError):
        compute_metrics([1, 2], [1], 2)
    with pytest.raises(ContractError):
        compute_metrics([1, 3], [1, 1], 2)
    with pytest.raises(ContractError):
        compute_metrics([], [], 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 6), st.integers(1, 60))
def test_metrics_invariants(seed, C, n):
    rng = Rng(seed)
    truth = (rng.permutation(n) % C) + 1
    pred = np.minimum((rng.random(n) * C).astype(int) + 1, C)
    r = compute_metrics(truth, pred, C)
    conf = np.array(r.confusion)
    assert conf.sum() == n == r.n_test
    assert r.overall_error == 1.0 - np.trace(conf) / n
    perm = rng.permutation(C) + 1
    relabeled = compute_metrics(perm[truth - 1], perm[pred - 1], C)
    assert relabeled.overall_error == r.overall_error


# --- maps -------------------------------------------------------------------------


def test_render_map_direct_mapping():
    gt = GroundTruth(np.array([[1, 2], [0, 1]]))
    data = render_map(np.array([[1, 2], [0, 1]]), gt)
    header = b"P6\n2 2\n255\n"
    assert data.startswith(header)
    body = data[len(header):]
    assert len(body) == 12
    expected = bytes(PALETTE[1] + PALETTE[2] + (0, 0, 0) + PALETTE[1])
    assert body == expected


def test_render_map_hides_unlabeled_and_writes(tmp_path):
    gt = GroundTruth(np.array([[0, 1, 1]]))
    data = render_map(np.array([[3, 3, 17]]), gt, tmp_path / "m.ppm")
    assert (tmp_path / "m.ppm").read_bytes() == data
    body = data[len(b"P6\n3 1\n255\n"):]
    assert body[:3] == b"\x00\x00\x00"
    assert tuple(body[3:6]) == PALETTE[3]
    assert tuple(body[6:9]) == palette_color(17) == PALETTE[2]


def test_render_map_dimension_mismatch():
    with pytest.raises(ShapeError):
        render_map(np.zeros((2, 2), dtype=int), GroundTruth(np.zeros((2, 3), dtype=int)))


def test_palette_is_fixed():
    assert len(PALETTE) == 16 and PALETTE[0] == (0, 0, 0)
    assert len(set(PALETTE)) == 16


# --- configuration -------------------------------------------------------------------


def test_config_defaults_materialised():
    cfg = ExperimentConfig.from_dict({"scheme": "sae-lr", "seed": 5, "data": {"synth": {}}})
    d = cfg.to_dict()
    assert d["hidden_sizes"] == [100, 100, 100, 100]
    assert d["ae"]["seed"] == derive_seed(5, "ae")
    assert d["finetune"]["alpha"] == 0.1
    assert d["split"] == {"train_fraction": 0.5, "seed": derive_seed(5, "split")}
    assert "svm" not in d and "pca" not in d


def test_config_scheme_sections():
    assert ExperimentConfig.from_dict({"scheme": "pca-svm", "data": {"synth": {}}}).pca.variance == 0.999
    ss = ExperimentConfig.from_dict({"scheme": "ssae-lr", "data": {"synth": {}}})
    assert ss.pca.k == 3 and ss.patch.window == 7 and ss.hidden_sizes == [310, 100, 100, 100]


@pytest.mark.parametrize(
    "raw",
    [
        {"scheme": "knn", "data": {"synth": {}}},
        {"scheme": "svm"},
        {"scheme": "svm", "data": {"synth": {}}, "colour": 1},
        {"scheme": "svm", "data": {"synth": {"bogus": 1}}},
        {"scheme": "svm", "data": {"cube": "a.hsc"}},
        {"scheme": "svm", "data": {"synth": {}}, "svm": {"lam": -1}},
        {"scheme": "svm", "data": {"synth": {}}, "split": {"train_fraction": 1.0}},
        {"scheme": "svm", "data": {"synth": {}}, "seed": -1},
        {"scheme": "ae-svm", "data": {"synth": {}}, "hidden_sizes": [10, 10]},
        {"scheme": "sae-lr", "data": {"synth": {}}, "hidden_sizes": []},
        {"scheme": "ssae-lr", "data": {"synth": {}}, "pca": {"variance": 0.9}},
        {"scheme": "ssae-lr", "data": {"synth": {}}, "patch": {"window": 4}},
        {"scheme": "svm", "data": {"synth": {}}, "outputs": {"log": "x"}},
    ],
)
def test_config_rejects(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


def test_config_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "absent.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.json")


# --- experiments ------------------------------------------------------------------------


def test_svm_noiseless_two_class_scene_is_perfect():
    synth = {"width": 16, "height": 16, "bands": 10, "n_classes": 2, "noise": 0.0, "seed": 4}
    report = run_experiment(config("svm", synth))
    assert report.overall_error == 0.0


@pytest.mark.parametrize("scheme", sorted(QUICK))
def test_every_scheme_runs_and_is_deterministic(scheme):
    a = run_experiment(config(scheme))
    b = run_experiment(config(scheme))
    da, db = a.to_dict(), b.to_dict()
    da.pop("wall_clock_seconds")
    db.pop("wall_clock_seconds")
    assert json.dumps(da, sort_keys=True) == json.dumps(db, sort_keys=True)
    conf = np.array(a.confusion)
    assert conf.sum() == a.n_test
    assert a.overall_error == 1.0 - np.trace(conf) / a.n_test
    assert a.config["scheme"] == scheme


@pytest.mark.parametrize("scheme", sorted(QUICK))
def test_test_labels_do_not_influence_training(scheme):
    cfg = ExperimentConfig.from_dict(config(scheme))
    cube, gt = synth_scene(cfg.data.synth)
    cube = normalize_bands(cube)
    split = stratified_split(gt, cfg.split.train_fraction, cfg.split.seed)
    scrambled = gt.labels.copy()
    t = split.test
    scrambled[t[:, 0], t[:, 1]] = (Rng(0).permutation(len(t)) % gt.n_classes) + 1
    gt2 = GroundTruth(scrambled, n_classes=gt.n_classes)
    f1, c1 = _fit_scheme(cfg, cube, gt, split)
    f2, c2 = _fit_scheme(cfg, cube, gt2, split)
    np.testing.assert_array_equal(c1(f1(t)), c2(f2(t)))


def test_report_and_map_files(tmp_path):
    raw = config("svm", outputs={"report": str(tmp_path / "r.json"), "map": str(tmp_path / "m.ppm")})
    report = run_experiment(raw)
    saved = json.loads((tmp_path / "r.json").read_text())
    assert saved["overall_error"] == report.overall_error
    assert saved["config"]["svm"]["lam"] == 1e-4
    assert (tmp_path / "m.ppm").read_bytes().startswith(b"P6\n12 10\n255\n")


def test_run_from_files(tmp_path):
    cube, gt = synth_scene(SynthSpec(**TINY))
    save_cube(cube, tmp_path / "s.hsc")
    save_ground_truth(gt, tmp_path / "s.pgm")
    (tmp_path / "cfg.json").write_text(json.dumps({"scheme": "svm", "data": {"cube": "s.hsc", "gt": "s.pgm"}}))
    from_files = run_experiment(ExperimentConfig.load(tmp_path / "cfg.json"))
    from_synth = run_experiment({"scheme": "svm", "data": {"synth": TINY}})
    assert from_files.confusion == from_synth.confusion


def test_errors_carry_stage_name(tmp_path):
    raw = {"scheme": "svm", "data": {"cube": str(tmp_path / "none.hsc"), "gt": str(tmp_path / "none.pgm")}}
    with pytest.raises(HsiSaeError) as info:
        run_experiment(raw)
    assert info.value.stage == "data"
    assert str(info.value).startswith("[data]")


def test_pca_k_beyond_bands_reports_stage():
    raw = config("ssae-lr", pca={"k": 50})
    with pytest.raises(ContractError) as info:
        run_experiment(raw)
    assert info.value.stage == "pca"
