"""Acceptance gate: one pass/fail line per criterion."""

import importlib.resources
import json

import numpy as np
import pytest

from darcyscale.grid import GridShape, TensorField
from darcyscale.solver import solve
from darcyscale.spectral import build_spectral, low_mode_source, verify_low_mode_exactness
from darcyscale.survey import (SurveyConfig, bootstrap_median_diff_quantile,
                               bootstrap_median_quantile, emit_report,
                               run_survey)
from darcyscale.upscale import (UpscalePlan, cost_model, kk_closed_form,
                                mg_closed_form, mg_decimate_general, run_plan)
from _fields import (horizontal_layers, random_small_field, uniform_field,
                     vertical_layers)

SURVEY_KW = dict(n_models=100, n=128, resolutions=(64, 32), ratio_tol=1.05,
                 seed0=1000, parallelism=1)


def report_line(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def surveys():
    zero = run_survey(SurveyConfig(xy_mode="zero", **SURVEY_KW))
    finite = run_survey(SurveyConfig(xy_mode="finite", **SURVEY_KW))
    return zero, finite


def test_criterion_1_constant_coefficient_exactness():
    worst_f, worst_r = 0.0, 0.0
    for c in (1e-6, 0.7, 2.0):
        rep = solve(uniform_field(64, c))
        worst_f = max(worst_f, abs(rep.f - c) / c)
        worst_r = max(worst_r, rep.validation_ratio - 1.0)
    ok = worst_f <= 1e-10 and worst_r <= 1e-10
    report_line("criterion 1 (constant-coefficient exactness)", ok,
                f"max |f-a_xx|/a_xx = {worst_f:.2e}, max ratio-1 = {worst_r:.2e}")


def test_criterion_2_layered_media():
    p, q = 1.0, 0.01
    fv = solve(vertical_layers(128, p, q)).f
    ev = abs(fv - 2 * p * q / (p + q)) / (2 * p * q / (p + q))
    fh = solve(horizontal_layers(128, p, q)).f
    eh = abs(fh - 0.5 * (p + q)) / (0.5 * (p + q))
    ok = ev < 0.01 and eh < 0.01
    report_line("criterion 2 (layered-media analytics)", ok,
                f"series rel err {ev:.2e}, parallel rel err {eh:.2e}")


def test_criterion_3_mg_closed_form_equivalence():
    rng = np.random.default_rng(12345)
    zeros = np.zeros((2, 2))
    worst = 0.0
    for _ in range(1000):
        a = rng.uniform(0.05, 2.0, 4)
        b = rng.uniform(0.05, 2.0, 4)
        cf = np.array(mg_closed_form(*a, *b))
        gen = np.array(mg_decimate_general(a.reshape(2, 2), zeros, b.reshape(2, 2)))
        worst = max(worst, np.max(np.abs(cf - gen) / np.maximum(np.abs(cf), 1e-3)))
    u = mg_closed_form(*[0.9] * 4, *[1.4] * 4)
    fixed = (abs(u[0] - 0.9) < 1e-14 and abs(u[2] - 1.4) < 1e-13 and u[1] == 0.0)
    ok = worst <= 1e-12 and fixed
    report_line("criterion 3 (MG closed form == general Schur)", ok,
                f"worst rel dev over 1000 blocks = {worst:.2e}, uniform fixed point {fixed}")


def test_criterion_4_spectral_oracle():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(10):
        fld = random_small_field(8, rng)
        op = build_spectral(fld)
        for mode in ((1, 0), (0, 1), (1, 1)):
            src = low_mode_source(op, *mode)
            worst = max(worst, verify_low_mode_exactness(fld, 2, src))
    u = uniform_field(8, 0.6)
    udev = verify_low_mode_exactness(u, 2, low_mode_source(build_spectral(u), 1, 0))
    ok = worst <= 1e-9 and udev <= 1e-12
    report_line("criterion 4 (spectral reduction exactness)", ok,
                f"worst dev {worst:.2e} over 10 random 8x8 fields, uniform dev {udev:.2e}")


def test_criterion_5_kk_orientation():
    c, d = 0.7, 1.3
    corr = kk_closed_form(*[c] * 4, *[d] * 4)
    fixed = abs(corr[0] - c) / c < 1e-14 and abs(corr[2] - d) / d < 1e-14
    printed = kk_closed_form(*[c] * 4, *[d] * 4, as_printed=True)
    violation = abs(printed[0] - c) / c
    ok = fixed and violation > 0.5 and abs(printed[0] - 1 / c) / (1 / c) < 1e-12
    report_line("criterion 5 (KK orientation)", ok,
                f"corrected fixed point {fixed}; as-printed gives {printed[0]:.4f} "
                f"(= 1/{c}) vs {c}, rel violation {violation:.2f}")


def test_criterion_6_sweep_count_and_cost():
    n = 512
    fld = uniform_field(n, 1.0)
    timings = []
    out = run_plan(fld, UpscalePlan("Mean", 2, 32), timings=timings)
    sweeps_ok = len(timings) == 4 and out.shape.n == 32
    cost_ok = True
    for k in range(1, 5):
        total = sum(2.0 ** (-2 * i) for i in range(k))
        target = n >> k
        cost_ok &= np.isclose(cost_model(n, 2, target, "MG"), n * n * 16 * total)
        cost_ok &= np.isclose(cost_model(n, 2, target, "Mean"), n * n * 4 * total)
        cost_ok &= np.isclose(cost_model(n, 2, target, "KK"), n * n * 4 * total)
    ok = sweeps_ok and cost_ok
    report_line("criterion 6 (sweep count and cost model)", ok,
                f"512->32 ran {len(timings)} sweeps; scaling formulas match for K=1..4")


def test_criterion_7_scaled_survey(surveys):
    zero, finite = surveys
    abs_z = {m: {t: np.abs(zero.errors(m, t)) for t in (64, 32)}
             for m in ("MG", "KK", "Mean")}
    abs_f = {m: {t: np.abs(finite.errors(m, t)) for t in (64, 32)}
             for m in ("MG", "KK", "Mean")}

    # (a) MG not worse than KK, better than Mean (zero-xy, target 32)
    d_kk = bootstrap_median_diff_quantile(abs_z["MG"][32], abs_z["KK"][32], 0.05)
    d_mean = bootstrap_median_diff_quantile(abs_z["MG"][32], abs_z["Mean"][32], 0.95)
    a_ok = d_kk <= 0.0 and d_mean < 0.0

    # (b) finite-xy widens the MG advantage over KK
    margin_fin_lo = bootstrap_median_diff_quantile(abs_f["KK"][32], abs_f["MG"][32], 0.05)
    margin_zero_hi = bootstrap_median_diff_quantile(abs_z["KK"][32], abs_z["MG"][32], 0.95)
    b_ok = margin_fin_lo > margin_zero_hi

    # (c) overprediction bias: median eps < 0 for every method at target 32
    c_ok = True
    for rep in (zero, finite):
        for m in ("MG", "KK", "Mean"):
            c_ok &= bootstrap_median_quantile(rep.errors(m, 32), 0.95) < 0.0

    # (d) per-method degradation from target 64 to 32
    d_ok = True
    for m in ("MG", "KK", "Mean"):
        d_ok &= bootstrap_median_diff_quantile(abs_z[m][32], abs_z[m][64], 0.05) > 0.0
        d_ok &= bootstrap_median_diff_quantile(abs_f[m][32], abs_f[m][64], 0.05) > 0.0

    ok = a_ok and b_ok and c_ok and d_ok
    meds = {m: round(float(np.median(abs_z[m][32])), 3) for m in ("MG", "KK", "Mean")}
    report_line("criterion 7 (scaled statistical survey)", ok,
                f"zero-xy med|eps|@32 {meds}; ordering {a_ok}, "
                f"finite-xy margin {b_ok} ({margin_fin_lo:.2f} > {margin_zero_hi:.2f}), "
                f"bias {c_ok}, degradation {d_ok}")


def test_criterion_8_determinism(surveys, tmp_path):
    zero, _ = surveys
    again = run_survey(SurveyConfig(xy_mode="zero", **SURVEY_KW))
    d1, d2 = tmp_path / "a", tmp_path / "b"
    emit_report(zero, d1)
    emit_report(again, d2)
    b1 = (d1 / "report.json").read_bytes()
    b2 = (d2 / "report.json").read_bytes()
    ok = b1 == b2
    report_line("criterion 8 (survey determinism)", ok,
                f"repeated survey report.json byte-identical: {ok} ({len(b1)} bytes)")


def test_criterion_9_full_scale_preset_smoke():
    ref = importlib.resources.files("darcyscale") / "presets" / "full_scale.json"
    data = json.loads(ref.read_text(encoding="utf-8"))
    full = SurveyConfig.from_dict(data)
    assert full.n_models == 500 and full.n == 512 and min(full.resolutions) == 32
    smoke = SurveyConfig.from_dict({**data, "n_models": 5, "parallelism": 1})
    report = run_survey(smoke)
    n_adm = report.aggregates["n_admissible"]
    ratios = [rec["validation_ratio"] for rec in report.models]
    ok = n_adm == 5 and all(r <= 1.05 for r in ratios)
    report_line("criterion 9 (full-scale preset smoke)", ok,
                f"5/5 models at 512 admissible at 1.05; ratios "
                f"{[round(r, 4) for r in ratios]}")
