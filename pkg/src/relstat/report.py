"""Run orchestration: configuration, search, holdout scoring and JSON reports."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .gp import Dataset, JitterPolicy, rmse
from .io import load_csv
from .kernels import dominant_frequency
from .optimize import OptimizeConfig
from .search import (
    ModelCandidate, SearchTrace, bic, candidate_components, candidate_predict,
    ckl_search, overfit_diagnostic, rkl_search, srkl_search,
)
from .text import parse_kernel

__all__ = ["SCHEMA", "RunConfig", "RunReport", "run_search", "export_plot_data", "validate_report"]

SCHEMA = 1
GRID_POINTS = 200
RUN_MODES = ("ckl", "rkl", "srkl")


@dataclass(frozen=True)
class RunConfig:
    inputs: tuple[str, ...] = ()
    mode: str = "ckl"
    depth: int = 2
    sm_components: int = 3
    holdout: int = 13
    restarts: int = 3
    max_iter: int = 200
    seed: int = 0
    jitter_base: float = 1e-8
    normalize_inputs: bool = False
    out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(str(p) for p in self.inputs))
        if self.mode not in RUN_MODES:
            raise ValueError(f"mode must be one of {RUN_MODES}, got {self.mode!r}")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.sm_components < 1:
            raise ValueError("sm_components must be >= 1")
        if self.holdout < 0:
            raise ValueError("holdout must be >= 0")
        if self.restarts < 1 or self.max_iter < 1:
            raise ValueError("restarts and max_iter must be >= 1")
        if not self.jitter_base > 0:
            raise ValueError("jitter_base must be positive")

    def optimizer(self) -> OptimizeConfig:
        return OptimizeConfig(max_iter=self.max_iter, restarts=self.restarts, seed=self.seed,
                              jitter=JitterPolicy(base=self.jitter_base))


@dataclass
class RunReport:
    """Everything a run produced, as plain JSON-ready values.

    ``timing`` holds wall-clock figures and is the only field that varies
    between identical runs.
    """

    config: dict
    kernels: list[str]
    best: str | list[str]
    traces: list[dict]
    datasets: list[dict]
    total_nll: float
    n_params: int
    n_points: int
    bic: float
    selection_bic: float | None = None
    selection_params: int | None = None
    overfit_depth: int | None = None
    max_jitter: float = 0.0
    timing: dict = field(default_factory=dict)
    schema: int = SCHEMA

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunReport:
        d = dict(d)
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> RunReport:
        return cls.from_dict(json.loads(text))

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


def _floats(a) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _trace_summary(trace: SearchTrace, ids: list[str]) -> dict:
    depths = []
    for rec in trace.depths:
        b = rec.best
        depths.append({
            "depth": rec.depth,
            "best": b.description,
            "score": float(b.score),
            "bic": float(b.bic),
            "n_params": int(b.n_params),
            "nll_shared": float(b.shared_nll if b.shared_nll is not None else b.total_nll),
            "nll_full": float(b.total_nll),
            "candidates": len(rec.candidates),
            "failures": list(rec.failures),
        })
    return {"datasets": ids, "mode": trace.mode, "aborted": trace.aborted, "depths": depths}


def _band(mean, var) -> dict:
    sd = np.sqrt(np.asarray(var))
    return {"mean": _floats(mean), "lo": _floats(mean - 2 * sd), "hi": _floats(mean + 2 * sd)}


def _dataset_entry(cand: ModelCandidate, j: int, train: Dataset, test: Dataset | None,
                   full: Dataset, to_model, jitter) -> dict:
    t = full.t
    grid = np.linspace(t.min(), t.max(), GRID_POINTS) if t.max() > t.min() else t[:1].copy()
    entry = {
        "id": train.id,
        "kernel": cand.description,
        "n_train": len(train),
        "n_holdout": 0 if test is None else len(test),
        "nll": float(cand.per_dataset_nll[j]),
    }
    scales = cand.scales
    if scales is not None:
        entry["scales"] = {"log_b2": float(scales.log_b2[j]), "log_v2": float(scales.log_v2[j])}
    if cand.sm:
        entry["sm_natural"] = _floats(np.exp(cand.sm[j]))
        entry["sm_dominant_frequency"] = dominant_frequency(np.exp(cand.sm[j]))
    if test is not None:
        post = candidate_predict(cand, j, train, to_model(test.t), jitter)
        entry["holdout_rmse"] = rmse(post.mean, test.y)
    else:
        entry["holdout_rmse"] = None
    dec = candidate_components(cand, j, train, to_model(grid), jitter)
    post = candidate_predict(cand, j, train, to_model(grid), jitter)
    entry["grid"] = _floats(grid)
    entry["components"] = [{"description": c.description, **_band(c.mean, c.var)} for c in dec.components]
    entry["posterior"] = _band(post.mean, post.var)
    return entry


def _load(config: RunConfig) -> list[Dataset]:
    if not config.inputs:
        raise ValueError("no input files")
    data = [load_csv(p) for p in config.inputs]
    ids = [d.id for d in data]
    if len(set(ids)) != len(ids):
        raise ValueError(f"dataset ids (file stems) must be unique: {ids}")
    shortest = min(len(d) for d in data)
    if config.holdout >= shortest:
        raise ValueError(f"holdout {config.holdout} must be smaller than the shortest series ({shortest} points)")
    return data


def run_search(config: RunConfig, datasets: Sequence[Dataset] | None = None) -> RunReport:
    """Run the configured search and assemble its report.

    ``datasets`` bypasses file loading (the config's ``inputs`` are then
    only echoed).  The last ``holdout`` points of every series are withheld
    from training and scored by RMSE.
    """
    started = time.perf_counter()
    data = list(datasets) if datasets is not None else _load(config)
    if datasets is not None and config.holdout >= min(len(d) for d in data):
        raise ValueError("holdout must be smaller than the shortest series")
    lo = min(float(d.t.min()) for d in data)
    hi = max(float(d.t.max()) for d in data)
    span = hi - lo if hi > lo else 1.0
    if config.normalize_inputs:
        def to_model(t):
            return (np.asarray(t, dtype=float) - lo) / span
    else:
        def to_model(t):
            return np.asarray(t, dtype=float)

    splits = [d.split(config.holdout) for d in data]
    train = [Dataset(tr.id, to_model(tr.t), tr.y) for tr, _ in splits]
    opt = config.optimizer()

    if config.mode == "ckl":
        results = [ckl_search(d, max_depth=config.depth, config=opt) for d in train]
        fits = [(best, [k]) for k, (best, _) in enumerate(results)]
        traces = [_trace_summary(tr, [train[k].id]) for k, (_, tr) in enumerate(results)]
        kernels = [best.description for best, _ in results]
        overfit = None
    else:
        if config.mode == "rkl":
            best, trace = rkl_search(train, max_depth=config.depth, config=opt)
            kernels = [best.description]
            overfit = None
        else:
            bests, trace = srkl_search(train, max_depth=config.depth, q=config.sm_components, config=opt)
            best = trace.best
            kernels = [b.description for b in bests]
            overfit = overfit_diagnostic(trace)
        fits = [(best, list(range(len(train))))]
        traces = [_trace_summary(trace, [d.id for d in train])]
        results = [(best, trace)]

    entries, jit = [], []
    for cand, idx in fits:
        jit.append(cand.jitter)
        for j, k in enumerate(idx):
            _, test = splits[k]
            entries.append(_dataset_entry(cand, j, train[k], test, data[k], to_model, opt.jitter))

    total_nll = float(sum(c.total_nll for c, _ in fits))
    n_params = int(sum(c.n_params for c, _ in fits))
    n_points = int(sum(len(d) for d in train))
    report = RunReport(
        config=asdict(config) | {"inputs": list(config.inputs)},
        kernels=kernels,
        best=fits[0][0].description if len(fits) == 1 else kernels,
        traces=traces,
        datasets=entries,
        total_nll=total_nll,
        n_params=n_params,
        n_points=n_points,
        bic=bic(total_nll, n_params, n_points),
        overfit_depth=overfit,
        max_jitter=float(max(jit)),
    )
    if config.mode == "srkl":
        cand = fits[0][0]
        report.selection_bic = float(cand.selection_bic)
        report.selection_params = int(cand.selection_params)
    report.timing = {"wall_clock_s": time.perf_counter() - started}
    return report


def _slug(text: str) -> str:
    keep = [c if c.isalnum() else "_" for c in text]
    return "_".join(filter(None, "".join(keep).split("_")))


def _write_band(path: Path, t, band: dict):
    rows = ["t,mean,lo,hi"]
    for row in zip(t, band["mean"], band["lo"], band["hi"]):
        rows.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def export_plot_data(report: RunReport, out_dir) -> Path:
    """One ``t,mean,lo,hi`` CSV per (dataset, component), plus ``index.json``.

    A dataset with several components also gets its full posterior as
    ``<id>__posterior.csv``.  Returns the index path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {}
    for entry in report.datasets:
        if "components" not in entry:
            raise ValueError(f"report has no decomposition for {entry.get('id')!r}")
        files = []
        for k, comp in enumerate(entry["components"]):
            name = f"{entry['id']}__{k:02d}_{_slug(comp['description'])}.csv"
            _write_band(out / name, entry["grid"], comp)
            files.append({"file": name, "description": comp["description"]})
        item = {"kernel": entry["kernel"], "components": files}
        if len(entry["components"]) > 1:
            name = f"{entry['id']}__posterior.csv"
            _write_band(out / name, entry["grid"], entry["posterior"])
            item["posterior"] = name
        index[entry["id"]] = item
    path = out / "index.json"
    path.write_text(json.dumps(index, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def validate_report(report: RunReport) -> None:
    """Check the BIC identity and that every kernel string parses."""
    for text in report.kernels:
        parse_kernel(text)
    expected = bic(report.total_nll, report.n_params, report.n_points)
    if abs(expected - report.bic) > 1e-9 * max(1.0, abs(expected)):
        raise ValueError(f"report BIC {report.bic} disagrees with its NLL/P/N ({expected})")
