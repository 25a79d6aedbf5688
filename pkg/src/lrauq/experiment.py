"""Config-driven experiment pipeline.

A run builds an experimental design, trains an LRA and a sparse PCE,
estimates their errors, writes response densities and failure-probability
curves, and collects the headline numbers in ``summary.json``.

Configs are YAML files validated against ``data/config.schema.json``.
All randomness derives from two seeds: ``seeds.ed`` (design sampling) and
``seeds.analysis`` (cross-validation folds, validation sample, reliability
sampling), each stage using its own stream.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np
import yaml

from . import __version__
from .benchmodels.beam import beam_analytical_pf, beam_deflection, beam_input_model
from .benchmodels.eole import effective_conductivity, eole_build, square_grid
from .benchmodels.truss import TrussModel, truss_input_model
from .lra import LraConfig, select_lra
from .metrics import conditional_generalization_error, error_report, kde
from .pce import PceConfig, select_pce
from .polybasis import PolyFamily
from .probcore import (ExperimentalDesign, InputModel, build_design, standard_normal_rows,
                       to_physical, to_standard, write_sample_csv)
from .reliability import PfCurve, pf_curve

log = logging.getLogger(__name__)

EVAL_CHUNK = 100_000

# stream tags appended to the analysis seed
VALIDATION_STREAM = 1
SURROGATE_STREAM = 2
REFERENCE_STREAM = 3


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


def _schema(name: str) -> dict:
    return json.loads(resources.files("lrauq.data").joinpath(name).read_text())


def bundled_configs() -> dict[str, Path]:
    root = resources.files("lrauq.data").joinpath("configs")
    return {p.name[:-4]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".cfg")}


def resolve_config_path(ref: str | os.PathLike) -> Path:
    """A config file path, or the name of a bundled config."""
    path = Path(ref)
    if path.is_file():
        return path
    bundled = bundled_configs()
    key = path.name[:-4] if path.name.endswith(".cfg") else path.name
    if key in bundled:
        return bundled[key]
    raise ConfigError(f"no config file {str(ref)!r} (bundled: {', '.join(sorted(bundled))})")


DEFAULTS = {
    "seeds": {"ed": 0, "analysis": 0},
    "basis": "hermite",
    "ed": {"kind": "sobol"},
    "lra": {"degrees": [1, 2, 3], "r_max": 10, "max_sweeps": 50,
            "min_err_decrease": 1e-6, "cv_folds": 3},
    "pce": {"pt": [1, 2, 3, 4, 5], "q": [0.25, 0.5, 0.75, 1.0], "max_basis_size": 20_000},
    "validation": {"size": 100_000},
    "kde": {"points": 200},
    "reliability": {"surrogate_n": 10_000_000, "reference": "none", "reference_n": 1_000_000,
                    "batch": 100, "target_cov": 0.1, "max_batches": 10_000},
    "eole": {"grid": 11, "corr_length": 0.2, "threshold": 0.99, "mean": 1.0, "std": 0.3},
}


@dataclass
class ExperimentConfig:
    raw: dict
    source: Path | None = None

    def section(self, key: str) -> dict:
        return {**DEFAULTS.get(key, {}), **self.raw.get(key, {})}

    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def model(self) -> str:
        return self.raw["model"]

    @property
    def base_dir(self) -> Path:
        return self.source.parent if self.source is not None else Path.cwd()

    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def seeds(self) -> dict:
        return self.section("seeds")

    @property
    def threads(self) -> int:
        env = os.environ.get("UQ_THREADS")
        if env:
            try:
                return max(1, int(env))
            except ValueError as exc:
                raise ConfigError(f"UQ_THREADS must be an integer, got {env!r}") from exc
        return int(self.raw.get("threads", os.cpu_count() or 1))


def parse_config(raw: dict, source: Path | None = None) -> ExperimentConfig:
    """Schema and consistency checks; raises :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        jsonschema.validate(raw, _schema("config.schema.json"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    cfg = ExperimentConfig(raw, source)
    ed, lra = cfg.section("ed"), cfg.section("lra")
    need = max(2 * lra["cv_folds"], 3)
    if ed["size"] < need:
        raise ConfigError(f"ed/size: {ed['size']} points are too few; "
                          f"cross-validation with {lra['cv_folds']} folds needs at least {need}")
    if any(q > 1 for q in cfg.section("pce")["q"]):
        raise ConfigError("pce/q: values must lie in (0, 1]")
    if cfg.model == "external-table" and "table" not in raw:
        raise ConfigError("external-table model needs a 'table' section")
    if cfg.model == "truss" and "geometry" in raw.get("truss", {}):
        if not cfg.path(raw["truss"]["geometry"]).is_file():
            raise ConfigError(f"truss/geometry: file {raw['truss']['geometry']!r} not found")
    if "reliability" in raw:
        rel = cfg.section("reliability")
        ts = rel["thresholds"]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ConfigError("reliability/thresholds: must be sorted ascending")
        if rel["reference"] == "analytical" and cfg.model != "beam":
            raise ConfigError("reliability/reference: analytical solution exists for the beam only")
        if cfg.model == "external-table" and rel["reference"] != "none":
            raise ConfigError("reliability/reference: no model to evaluate for an external table")
    if "input_model" in raw:
        try:
            InputModel.from_dict(raw["input_model"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"input_model: {exc}") from None
    return cfg


def load_config(ref) -> ExperimentConfig:
    path = resolve_config_path(ref)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return parse_config(raw, path)


# ---------------------------------------------------------------------------
@dataclass
class Problem:
    model_fn: Callable[[np.ndarray], np.ndarray] | None
    input_model: InputModel
    analytical_pf: Callable | None = None
    table: tuple[np.ndarray, np.ndarray] | None = None
    validation_table: tuple[np.ndarray, np.ndarray] | None = None
    artifacts: dict | None = None


def _read_table(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigError(f"{path}: table needs a header and at least one row")
    header = [h.strip() for h in rows[0]]
    if header[-1] != "y":
        raise ConfigError(f"{path}: last column must be named 'y'")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data.shape[1] != len(header):
        raise ConfigError(f"{path}: ragged rows")
    return data[:, :-1], data[:, -1]


def _check_dim(im: InputModel, dim: int, what: str) -> None:
    if im.dim != dim:
        raise ConfigError(f"input_model: {what} takes {dim} inputs, got {im.dim}")


def build_problem(cfg: ExperimentConfig) -> Problem:
    custom = InputModel.from_dict(cfg.raw["input_model"]) if "input_model" in cfg.raw else None
    if cfg.model == "beam":
        im = custom or beam_input_model()
        _check_dim(im, 5, "beam")
        return Problem(beam_deflection, im, beam_analytical_pf)
    if cfg.model == "truss":
        geo = cfg.raw.get("truss", {}).get("geometry")
        truss = TrussModel.from_json(cfg.path(geo)) if geo else TrussModel.default()
        im = custom or truss_input_model()
        _check_dim(im, truss.n_inputs, "truss")
        return Problem(truss, im)
    if cfg.model == "eole-demo":
        e = cfg.section("eole")
        field = eole_build(square_grid(e["grid"]), e["corr_length"], e["threshold"],
                           e["mean"], e["std"])
        log.info("EOLE field: %d modes retained", field.n_terms)
        return Problem(lambda xi: effective_conductivity(field, xi),
                       InputModel.independent_normal(field.n_terms),
                       artifacts={"eole_field.json": field.to_dict()})
    t = cfg.raw["table"]
    x, y = _read_table(cfg.path(t["path"]))
    im = custom or InputModel.independent_normal(x.shape[1])
    _check_dim(im, x.shape[1], "table")
    val = _read_table(cfg.path(t["validation"])) if "validation" in t else None
    return Problem(None, im, table=(x, y), validation_table=val)


def _evaluate(fn, x: np.ndarray) -> np.ndarray:
    return np.concatenate([np.asarray(fn(x[s:s + EVAL_CHUNK]), dtype=float).ravel()
                           for s in range(0, x.shape[0], EVAL_CHUNK)])


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


class _Artifacts:
    def __init__(self, out: Path):
        self.out = out
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        self.written.append(p)
        return p

    def json(self, name: str, obj) -> None:
        text = json.dumps(_clean(obj), indent=2, allow_nan=False)
        self.path(name).write_text(text + "\n", encoding="utf-8")

    def density(self, name: str, grid: np.ndarray, dens: np.ndarray) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "density"])
            w.writerows([repr(float(a)), repr(float(b))] for a, b in zip(grid, dens))

    def curve(self, name: str, curve: PfCurve) -> None:
        curve.to_csv(self.path(name))

    def mark_partial(self) -> None:
        for p in self.written:
            if p.exists():
                p.rename(p.with_name(f"{p.stem}_partial{p.suffix}"))


def _curve_summary(curve: PfCurve) -> dict:
    rows = curve.rows()
    return {"pf": [r["pf"] for r in rows], "beta": [r["beta"] for r in rows],
            "cov": [r["cov"] for r in rows], "n_evals": [r["n_evals"] for r in rows],
            "errors": list(curve.errors)}


def _conditional(model, yv, uv, thresholds) -> list[dict]:
    out = []
    for t in thresholds:
        try:
            rep = conditional_generalization_error(model, yv, uv, t)
            out.append({"threshold": t, "relative": rep.relative, "absolute": rep.absolute,
                        "bias": rep.bias, "n_points": rep.n_points})
        except ValueError as exc:
            out.append({"threshold": t, "error": str(exc)})
    return out


def run_experiment(cfg: ExperimentConfig, output: str | os.PathLike | None = None) -> dict:
    """Run every stage and return the summary; raises :class:`StageError`
    (artifacts renamed with a ``_partial`` suffix and ``error.json``
    written) when a stage fails."""
    # relative output paths are taken from the working directory
    out = Path(output if output is not None else cfg.raw.get("output", f"runs/{cfg.name}"))
    out.mkdir(parents=True, exist_ok=True)
    art = _Artifacts(out)
    stage = "setup"
    try:
        problem = build_problem(cfg)
        im = problem.input_model
        seeds = cfg.seeds
        a_seed = seeds["analysis"]
        threads = cfg.threads
        fams = PolyFamily(cfg.raw.get("basis", "hermite"))
        ed_spec = cfg.section("ed")
        for name, doc in (problem.artifacts or {}).items():
            art.json(name, doc)

        stage = "design"
        t0 = time.perf_counter()
        if problem.table is not None:
            x, y = problem.table
            n = ed_spec["size"]
            if x.shape[0] < n:
                raise ValueError(f"table has {x.shape[0]} rows, design size is {n}")
            ed = ExperimentalDesign.from_physical(x[:n], y[:n], im)
        else:
            ed = build_design(problem.model_fn, im, ed_spec["size"], ed_spec["kind"], seeds["ed"])
        write_sample_csv(art.path("ed.csv"), ed.x, ed.y)
        log.info("design: %d points (%.2fs)", ed.size, time.perf_counter() - t0)

        stage = "lra"
        lc = cfg.section("lra")
        lra_cfg = LraConfig(r_max=lc["r_max"], degrees=tuple(lc["degrees"]),
                            max_sweeps=lc["max_sweeps"], min_err_decrease=lc["min_err_decrease"],
                            cv_folds=lc["cv_folds"], seed=a_seed, threads=threads)
        lra, cv = select_lra(ed, fams, lra_cfg, im)
        art.json("lra_model.json", lra.to_dict())
        log.info("LRA: rank %d, degree %d, CV error %.3g", lra.rank, cv.selected_degree, cv.cv_error)

        stage = "pce"
        pc = cfg.section("pce")
        pce, pce_report = select_pce(ed, fams, PceConfig(tuple(pc["pt"]), tuple(pc["q"]),
                                                         pc["max_basis_size"], threads), im)
        art.json("pce_model.json", pce.to_dict())
        log.info("PCE: pt %d, q %g, %d terms, LOO %.3g", pce.info["pt"], pce.info["q"],
                 pce.size, pce.loo)

        stage = "validation"
        uv = yv = None
        if problem.validation_table is not None:
            xv, yv = problem.validation_table
            uv = to_standard(xv, im)
        elif problem.model_fn is not None:
            nv = cfg.section("validation")["size"]
            uv = standard_normal_rows(im.dim, 0, nv, (a_seed, VALIDATION_STREAM))
            yv = _evaluate(problem.model_fn, to_physical(uv, im))

        stage = "errors"
        rel = cfg.section("reliability") if "reliability" in cfg.raw else None
        thresholds = [float(t) for t in rel["thresholds"]] if rel else []
        errors = {}
        gen = {}
        for key, model, extra in (("lra", lra, {"cv": cv.cv_error, "cv_table": cv.to_dict()}),
                                  ("pce", pce, {"loo": pce.loo, "grid": pce_report.table})):
            entry = {"empirical": error_report(ed.y, model.predict(ed.u)).to_dict(), **extra}
            if yv is not None:
                pred = _evaluate(model.predict, uv)
                g = error_report(yv, pred)
                gen[key] = (g, pred)
                entry["generalization"] = g.to_dict()
                entry["conditional"] = _conditional(model, yv, uv, thresholds)
            errors[key] = entry
        art.json("errors.json", errors)

        stage = "kde"
        if yv is not None:
            npts = cfg.section("kde")["points"]
            lo, hi = float(yv.min()), float(yv.max())
            pad = 0.1 * (hi - lo)
            grid = np.linspace(lo - pad, hi + pad, npts)
            art.density("kde_model.csv", grid, kde(yv, grid))
            for key in ("lra", "pce"):
                art.density(f"kde_{key}.csv", grid, kde(gen[key][1], grid))

        stage = "reliability"
        rel_summary = None
        if rel is not None and thresholds:
            curves = {}
            for key, model in (("lra", lra), ("pce", pce)):
                curves[key] = pf_curve(model.predict, thresholds, "mcs", dim=im.dim,
                                       n=rel["surrogate_n"], seed=(a_seed, SURROGATE_STREAM),
                                       threads=threads)
            method = rel["reference"]
            if method == "analytical":
                curves["reference"] = pf_curve(None, thresholds, "analytical", dim=im.dim,
                                               analytical=problem.analytical_pf)
            elif method != "none":
                curves["reference"] = pf_curve(problem.model_fn, thresholds, method, input_model=im,
                                               n=rel["reference_n"],
                                               seed=(a_seed, REFERENCE_STREAM), threads=threads,
                                               batch=rel["batch"], target_cov=rel["target_cov"],
                                               max_batches=rel["max_batches"])
            for key, curve in curves.items():
                art.curve(f"pf_curve_{key}.csv", curve)
            rel_summary = {
                "thresholds": thresholds,
                "surrogate_n": rel["surrogate_n"],
                "reference_method": None if method == "none" else method,
                "reference": _curve_summary(curves["reference"]) if "reference" in curves else None,
                "lra": _curve_summary(curves["lra"]),
                "pce": _curve_summary(curves["pce"]),
            }

        stage = "summary"
        summary = {
            "name": cfg.name,
            "model": cfg.model,
            "version": __version__,
            "seeds": {"ed": seeds["ed"], "analysis": a_seed},
            "ed": {"kind": ed_spec["kind"], "size": ed.size},
            "dim": im.dim,
            "lra": {
                "rank": lra.rank,
                "degree": cv.selected_degree,
                "cv_error": cv.cv_error,
                "empirical_error": errors["lra"]["empirical"]["relative"],
                "generalization_error": gen["lra"][0].relative if "lra" in gen else None,
            },
            "pce": {
                "pt": pce.info["pt"],
                "q": pce.info["q"],
                "n_terms": pce.size,
                "loo": pce.loo,
                "empirical_error": errors["pce"]["empirical"]["relative"],
                "generalization_error": gen["pce"][0].relative if "pce" in gen else None,
            },
            "reliability": rel_summary,
        }
        summary = _clean(summary)
        jsonschema.validate(summary, _schema("summary.schema.json"))
        art.json("summary.json", summary)
        return summary
    except Exception as exc:
        art.mark_partial()
        (out / "error.json").write_text(json.dumps(
            {"stage": stage, "error_type": type(exc).__name__, "message": str(exc)}, indent=2) + "\n")
        if isinstance(exc, ConfigError):
            raise
        raise StageError(stage, exc) from exc
