"""Ensemble surveys of upscaling error statistics.

For each model seed the driver generates a percolating field, solves it
exactly, validates the solve, then for every requested method decimates
one pyramid and solves the intermediate field at each target resolution.
Errors are percent flow-rate deviations; aggregates (histograms, CDFs of
|error|, bias summaries) use only models whose exact solve passed
validation.  Everything is deterministic in the base seed: model i uses
seed0 + i, and worker results are gathered in model order regardless of
completion order, so a repeated run writes an identical report.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .grid import GridShape
from .modelgen import PRNG_ID, ChannelSpec, GenerationError, ModelParams, generate_model
from .solver import SingularFieldError, flow_error, solve, validate
from .upscale import METHODS, DecimationError, pyramid

MIN_TARGET = 32
CDF_POINTS = 64


class ConfigError(ValueError):
    pass


class EnsembleAbortError(RuntimeError):
    """Raised when fewer than half of the exact solves are admissible."""


@dataclass(frozen=True)
class SurveyConfig:
    n_models: int
    n: int
    resolutions: tuple[int, ...]
    methods: tuple[str, ...] = METHODS
    xy_mode: str = "zero"
    ratio_tol: float = 1.05
    seed0: int = 0
    parallelism: int = 1
    allow_small_targets: bool = False
    channel: ChannelSpec | None = None

    def __post_init__(self):
        if self.n_models < 1:
            raise ConfigError("n_models must be positive")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if not self.methods:
            raise ConfigError("at least one method required")
        if self.xy_mode not in ("zero", "finite"):
            raise ConfigError(f"xy_mode must be 'zero' or 'finite', got {self.xy_mode!r}")
        if not self.resolutions:
            raise ConfigError("at least one target resolution required")
        if min(self.resolutions) < MIN_TARGET and not self.allow_small_targets:
            raise ConfigError(
                f"targets below {MIN_TARGET} lose essentially all information; "
                "set allow_small_targets to override")
        for t in self.resolutions:
            if not (t < self.n and self.n % t == 0):
                raise ConfigError(f"target {t} must divide n={self.n}")
        if not self.ratio_tol > 1.0:
            raise ConfigError("ratio_tol must exceed 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be positive")

    def channel_spec(self) -> ChannelSpec:
        if self.channel is not None:
            if self.channel.xy_mode != self.xy_mode:
                raise ConfigError("channel.xy_mode disagrees with survey xy_mode")
            return self.channel
        return ChannelSpec(xy_mode=self.xy_mode)

    @classmethod
    def from_dict(cls, data: dict) -> "SurveyConfig":
        data = dict(data)
        if "resolutions" in data:
            data["resolutions"] = tuple(int(t) for t in data["resolutions"])
        if "methods" in data:
            data["methods"] = tuple(data["methods"])
        if isinstance(data.get("channel"), dict):
            ch = dict(data["channel"])
            for key in ("piece_len_range", "aspect_range", "incline_range",
                        "magnitude_range", "xy_fraction_range"):
                if key in ch and ch[key] is not None:
                    ch[key] = tuple(ch[key])
            data["channel"] = ChannelSpec(**ch)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if self.channel is not None:
            out["channel"] = dataclasses.asdict(self.channel)
        return out


@dataclass
class SurveyReport:
    config: SurveyConfig
    models: list  # per-model record dicts, in model-index order
    aggregates: dict  # per (method, resolution) statistics

    def errors(self, method: str, resolution: int) -> np.ndarray:
        """Errors of admissible models for one panel."""
        out = [rec["results"][method][str(resolution)]["eps"]
               for rec in self.models
               if rec.get("admissible") and not rec.get("error")]
        return np.array(out)

    def to_dict(self) -> dict:
        return {
            "provenance": {
                "package": "darcyscale",
                "version": __version__,
                "prng": PRNG_ID,
            },
            "config": self.config.to_dict(),
            "models": self.models,
            "aggregates": self.aggregates,
        }


def _run_model(payload) -> dict:
    config, index = payload
    seed = config.seed0 + index
    rec = {"index": index, "seed": seed}
    try:
        fld = generate_model(ModelParams(GridShape(config.n), seed, config.channel_spec()))
        exact = solve(fld)
        rec["f_exact"] = exact.f
        rec["validation_ratio"] = exact.validation_ratio
        rec["admissible"] = validate(exact, config.ratio_tol)
        results = {}
        for method in config.methods:
            pyr = pyramid(fld, method, 2, config.resolutions)
            per_res = {}
            for t in config.resolutions:
                f_model = solve(pyr[t]).f
                per_res[str(t)] = {"f_model": f_model,
                                   "eps": flow_error(exact.f, f_model)}
            results[method] = per_res
        rec["results"] = results
    except (GenerationError, SingularFieldError, DecimationError) as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["admissible"] = False
    return rec


def run_survey(config: SurveyConfig) -> SurveyReport:
    payloads = [(config, i) for i in range(config.n_models)]
    if config.parallelism == 1:
        models = [_run_model(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            models = list(pool.map(_run_model, payloads))  # ordered gather
    admissible = sum(1 for r in models if r.get("admissible"))
    if admissible < 0.5 * config.n_models:
        raise EnsembleAbortError(
            f"only {admissible}/{config.n_models} exact solves admissible "
            f"at ratio_tol={config.ratio_tol}")
    report = SurveyReport(config, models, {})
    report.aggregates = _aggregate(report)
    return report


def _aggregate(report: SurveyReport) -> dict:
    config = report.config
    agg = {
        "n_admissible": sum(1 for r in report.models if r.get("admissible")),
        "n_excluded": sum(1 for r in report.models if not r.get("admissible")),
        "panels": {},
    }
    for method in config.methods:
        for t in config.resolutions:
            errors = report.errors(method, t)
            if errors.size == 0:
                continue
            counts, edges = np.histogram(errors, bins="fd")
            xs = cdf_grid(errors)
            panel = {
                "n": int(errors.size),
                "median_eps": float(np.median(errors)),
                "median_abs_eps": float(np.median(np.abs(errors))),
                "bias": bias_summary(errors),
                "histogram": {
                    "edges": edges.tolist(),
                    "probabilities": (counts / errors.size).tolist(),
                },
                "cdf": {"x": xs.tolist(), "p": cdf_table(errors, xs).tolist()},
            }
            agg["panels"][f"{method}/{t}"] = panel
    return agg


def cdf_grid(errors) -> np.ndarray:
    top = float(np.max(np.abs(errors)))
    if top == 0.0:
        top = 1.0
    return np.linspace(0.0, top, CDF_POINTS)


def cdf_table(errors, grid) -> np.ndarray:
    """Empirical P(|eps| < x) on the given grid of x values."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("empty error sample")
    a = np.sort(np.abs(errors))
    return np.searchsorted(a, np.asarray(grid, dtype=float), side="left") / a.size


def bias_summary(errors) -> dict:
    """Median error and overprediction fraction (eps < 0 means overprediction)."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("empty error sample")
    return {
        "median_eps": float(np.median(errors)),
        "negative_fraction": float(np.mean(errors < 0.0)),
    }


def bootstrap_median_quantile(sample, prob, n_boot=2000, seed=0):
    """Bootstrap quantile of the sample median (for one-sided confidence bounds)."""
    sample = np.asarray(sample, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, sample.size, size=(n_boot, sample.size))
    meds = np.median(sample[idx], axis=1)
    return float(np.quantile(meds, prob))


def bootstrap_median_diff_quantile(a, b, prob, n_boot=2000, seed=0):
    """Bootstrap quantile of median(a) - median(b) for independent resamples."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rng = np.random.default_rng(seed)
    da = np.median(a[rng.integers(0, a.size, size=(n_boot, a.size))], axis=1)
    db = np.median(b[rng.integers(0, b.size, size=(n_boot, b.size))], axis=1)
    return float(np.quantile(da - db, prob))


# ---------------------------------------------------------------------------
# artifact emission

def _json_bytes(data) -> bytes:
    return json.dumps(data, indent=2, sort_keys=True).encode("utf-8") + b"\n"


def emit_report(report: SurveyReport, out_dir) -> list[str]:
    """Write report.json, histograms.csv, cdf.csv and the SVG panels.

    Serialization is deterministic: identical reports produce identical
    bytes (plots carry no timestamps).
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, "report.json")
    with open(path, "wb") as fh:
        fh.write(_json_bytes(report.to_dict()))
    written.append(path)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "resolution", "bin_left", "bin_right", "probability"])
    for key, panel in sorted(report.aggregates["panels"].items()):
        method, res = key.split("/")
        edges = panel["histogram"]["edges"]
        for k, p in enumerate(panel["histogram"]["probabilities"]):
            w.writerow([method, res, repr(edges[k]), repr(edges[k + 1]), repr(p)])
    path = os.path.join(out_dir, "histograms.csv")
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())
    written.append(path)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "resolution", "x", "p"])
    for key, panel in sorted(report.aggregates["panels"].items()):
        method, res = key.split("/")
        for x, p in zip(panel["cdf"]["x"], panel["cdf"]["p"]):
            w.writerow([method, res, repr(x), repr(p)])
    path = os.path.join(out_dir, "cdf.csv")
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())
    written.append(path)

    written.extend(_emit_plots(report, out_dir))
    return written


def _emit_plots(report: SurveyReport, out_dir) -> list[str]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    config = report.config
    methods = list(config.methods)
    resolutions = list(config.resolutions)
    written = []
    meta = {"Date": None}  # keep SVG output reproducible

    fig, axes = plt.subplots(len(resolutions), len(methods),
                             figsize=(4 * len(methods), 3 * len(resolutions)),
                             squeeze=False)
    for r, t in enumerate(resolutions):
        for c, method in enumerate(methods):
            ax = axes[r][c]
            panel = report.aggregates["panels"].get(f"{method}/{t}")
            if panel:
                edges = np.array(panel["histogram"]["edges"])
                probs = np.array(panel["histogram"]["probabilities"])
                ax.bar(edges[:-1], probs, width=np.diff(edges), align="edge")
            ax.set_title(f"{method}, target {t}")
            ax.set_xlabel("error (%)")
            ax.set_ylabel("probability")
    fig.tight_layout()
    path = os.path.join(out_dir, "histograms.svg")
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    written.append(path)

    fig, axes = plt.subplots(1, len(resolutions),
                             figsize=(5 * len(resolutions), 4), squeeze=False)
    for c, t in enumerate(resolutions):
        ax = axes[0][c]
        for method in methods:
            panel = report.aggregates["panels"].get(f"{method}/{t}")
            if panel:
                ax.plot(panel["cdf"]["x"], panel["cdf"]["p"], label=method)
        ax.set_title(f"target {t}")
        ax.set_xlabel("x (%)")
        ax.set_ylabel("P(|error| < x)")
        ax.set_ylim(0, 1.02)
        ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "cdf.svg")
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    written.append(path)
    return written


def load_report(path) -> SurveyReport:
    with open(path, "rb") as fh:
        data = json.loads(fh.read().decode("utf-8"))
    config = SurveyConfig.from_dict(data["config"])
    return SurveyReport(config, data["models"], data["aggregates"])
