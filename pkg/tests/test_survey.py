import json

import numpy as np
import pytest

import darcyscale.survey as survey_mod
from darcyscale.grid import GridShape
from darcyscale.survey import (ConfigError, EnsembleAbortError, SurveyConfig,
                               bias_summary, bootstrap_median_diff_quantile,
                               bootstrap_median_quantile, cdf_table,
                               emit_report, load_report, run_survey)
from _fields import uniform_field

SMALL = dict(n_models=3, n=64, resolutions=(32,), seed0=50)


# --- config ----------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        SurveyConfig(n_models=0, n=64, resolutions=(32,))
    with pytest.raises(ConfigError):
        SurveyConfig(n_models=1, n=64, resolutions=(16,))
    SurveyConfig(n_models=1, n=64, resolutions=(16,), allow_small_targets=True)
    with pytest.raises(ConfigError):
        SurveyConfig(n_models=1, n=64, resolutions=(48,))
    with pytest.raises(ConfigError):
        SurveyConfig(n_models=1, n=64, resolutions=(32,), methods=("XY",))
    with pytest.raises(ConfigError):
        SurveyConfig(n_models=1, n=64, resolutions=(32,), xy_mode="odd")
    with pytest.raises(ConfigError):
        SurveyConfig(n_models=1, n=64, resolutions=(32,), ratio_tol=1.0)


def test_config_round_trip_dict():
    cfg = SurveyConfig(**SMALL)
    again = SurveyConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        SurveyConfig.from_dict({**SMALL, "bogus": 1})


# --- statistics helpers ----------------------------------------------------

def test_cdf_table_counting():
    assert cdf_table([-5.0, 5.0, 10.0], [7.0])[0] == pytest.approx(2 / 3)
    assert cdf_table([-5.0, 5.0, 10.0], [100.0])[0] == 1.0
    grid = np.linspace(0, 20, 9)
    p = cdf_table([-5.0, 5.0, 10.0], grid)
    assert np.all(np.diff(p) >= 0)
    assert p[-1] == 1.0
    with pytest.raises(ValueError):
        cdf_table([], [1.0])


def test_bias_summary():
    out = bias_summary([-3.0, -3.0, -3.0])
    assert out["median_eps"] == -3.0
    assert out["negative_fraction"] == 1.0
    assert bias_summary([-2.0, 0.0, 2.0])["median_eps"] == 0.0


def test_bootstrap_helpers():
    rng = np.random.default_rng(0)
    x = rng.normal(-5.0, 1.0, 200)
    assert bootstrap_median_quantile(x, 0.95) < 0  # clearly negative median
    y = rng.normal(0.0, 1.0, 200)
    assert bootstrap_median_diff_quantile(x, y, 0.95) < 0
    assert bootstrap_median_diff_quantile(y, x, 0.05) > 0


# --- survey driver ---------------------------------------------------------

def test_uniform_stub_gives_zero_errors(monkeypatch):
    def stub(params):
        return uniform_field(params.shape.n, 0.8, ayy=1.2)
    monkeypatch.setattr(survey_mod, "generate_model", stub)
    report = run_survey(SurveyConfig(n_models=2, n=64, resolutions=(32,), seed0=0))
    for method in ("MG", "KK", "Mean"):
        eps = report.errors(method, 32)
        assert np.max(np.abs(eps)) < 1e-9


def test_survey_runs_and_aggregates(tmp_path):
    report = run_survey(SurveyConfig(**SMALL))
    assert len(report.models) == 3
    assert report.aggregates["n_admissible"] == 3
    panel = report.aggregates["panels"]["MG/32"]
    assert panel["n"] == 3
    assert abs(sum(panel["histogram"]["probabilities"]) - 1.0) < 1e-12
    p = panel["cdf"]["p"]
    assert all(b >= a for a, b in zip(p, p[1:]))


def test_survey_deterministic_and_emit_stable(tmp_path):
    cfg = SurveyConfig(**SMALL)
    r1 = run_survey(cfg)
    r2 = run_survey(cfg)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    emit_report(r1, d1)
    emit_report(r2, d2)
    for name in ("report.json", "histograms.csv", "cdf.csv"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
    for name in ("histograms.svg", "cdf.svg"):
        assert (d1 / name).stat().st_size > 0


def test_parallel_matches_serial():
    serial = run_survey(SurveyConfig(n_models=2, n=64, resolutions=(32,),
                                     seed0=60, parallelism=1))
    parallel = run_survey(SurveyConfig(n_models=2, n=64, resolutions=(32,),
                                       seed0=60, parallelism=2))
    assert serial.models == parallel.models
    assert serial.aggregates == parallel.aggregates


def test_report_load_round_trip(tmp_path):
    report = run_survey(SurveyConfig(**SMALL))
    emit_report(report, tmp_path)
    loaded = load_report(tmp_path / "report.json")
    assert loaded.config == report.config
    assert loaded.models == json.loads(json.dumps(report.models))
    out2 = tmp_path / "again"
    emit_report(loaded, out2)
    assert (out2 / "cdf.csv").read_bytes() == (tmp_path / "cdf.csv").read_bytes()


def test_inadmissible_models_excluded(monkeypatch):
    calls = {"i": 0}

    def stub(params):
        return uniform_field(params.shape.n, 0.8)
    monkeypatch.setattr(survey_mod, "generate_model", stub)

    real_validate = survey_mod.validate

    def fake_validate(report, tol):
        calls["i"] += 1
        return calls["i"] > 1  # first model inadmissible
    monkeypatch.setattr(survey_mod, "validate", fake_validate)
    report = run_survey(SurveyConfig(n_models=3, n=64, resolutions=(32,)))
    assert report.aggregates["n_excluded"] == 1
    assert report.aggregates["panels"]["MG/32"]["n"] == 2
    monkeypatch.setattr(survey_mod, "validate", real_validate)


def test_abort_when_mostly_inadmissible(monkeypatch):
    def stub(params):
        return uniform_field(params.shape.n, 0.8)
    monkeypatch.setattr(survey_mod, "generate_model", stub)
    monkeypatch.setattr(survey_mod, "validate", lambda report, tol: False)
    with pytest.raises(EnsembleAbortError):
        run_survey(SurveyConfig(n_models=4, n=64, resolutions=(32,)))


def test_per_model_failure_recorded_not_fatal(monkeypatch):
    from darcyscale.modelgen import GenerationError
    real = survey_mod.generate_model

    def flaky(params):
        if params.seed == 51:
            raise GenerationError("boom")
        return real(params)
    monkeypatch.setattr(survey_mod, "generate_model", flaky)
    report = run_survey(SurveyConfig(**SMALL))
    rec = report.models[1]
    assert rec["error"].startswith("GenerationError")
    assert not rec["admissible"]
    assert report.aggregates["panels"]["MG/32"]["n"] == 2
