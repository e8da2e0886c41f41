"""(n, d, k) sweeps against the exact-retrain oracle, log-log slope fits, reports."""
from __future__ import annotations

import csv
import itertools
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from . import attribution, certificate, ermcore, synthgen
from .errors import DropkitError, InsufficientPoints, MaxIterExceeded, ZeroError

# CSV contract: exact column order
COLUMNS = (
    "n", "d", "k", "trial", "strategy",
    "err_if_exact", "err_ns_exact", "err_rif_exact", "err_drif_exact",
    "err_if_ns", "err_rif_ns", "err_drif_ns", "err_rif_drif",
    "ns_delta_norm", "cert_bound", "cert_ok", "flag",
)
ERROR_COLUMNS = COLUMNS[5:13]
_PAIR_COLUMN = {
    frozenset(("IF", "EXACT")): "err_if_exact",
    frozenset(("NS", "EXACT")): "err_ns_exact",
    frozenset(("RIF", "EXACT")): "err_rif_exact",
    frozenset(("DRIF", "EXACT")): "err_drif_exact",
    frozenset(("IF", "NS")): "err_if_ns",
    frozenset(("RIF", "NS")): "err_rif_ns",
    frozenset(("DRIF", "NS")): "err_drif_ns",
    frozenset(("RIF", "DRIF")): "err_rif_drif",
}
AXES = ("n", "d", "k")


def pair_column(pair) -> str:
    """Map ("NS", "EXACT"), "ns_exact", "err_ns_exact" or "ns-exact" to a column / value name."""
    if isinstance(pair, str):
        key = pair.strip().lower()
        if key.startswith("err_"):
            key = key[4:]
        parts = key.replace("-", "_").split("_")
        if len(parts) == 2 and all(p.upper() in attribution.METHODS for p in parts):
            pair = tuple(parts)
        else:
            return pair
    col = _PAIR_COLUMN.get(frozenset(p.upper() for p in pair))
    if col is None:
        raise ValueError(f"no error column for method pair {pair!r}")
    return col


@dataclass(frozen=True)
class SweepSpec:
    n_grid: tuple = (4000, 8000, 16000, 32000)
    d_grid: tuple = (8, 16, 32)
    k_grid: tuple = (2, 4, 8, 16)
    trials_per_cell: int = 50
    strategies: tuple = ("random",)
    methods: tuple = (("NS", "EXACT"), ("IF", "EXACT"), ("IF", "NS"), ("DRIF", "NS"))
    lam: float = 0.0
    base_seed: int = 0
    loss: str = "logistic"
    theta_star_norm: float = 1.0
    certify: bool = False
    certificate: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("n_grid", "d_grid", "k_grid", "strategies"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"{name} must be nonempty")
            object.__setattr__(self, name, vals)
        object.__setattr__(self, "methods", tuple(tuple(p) if not isinstance(p, str) else p for p in self.methods))
        if any(v < 1 for v in self.n_grid + self.d_grid) or any(v < 0 for v in self.k_grid):
            raise ValueError("grid values must be positive")
        if max(self.k_grid) >= min(self.n_grid) or max(self.d_grid) >= min(self.n_grid):
            raise ValueError("every cell needs k < n and d < n")
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be >= 1")
        for s in self.strategies:
            if s not in synthgen.STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")

    @classmethod
    def from_json(cls, source: Union[str, os.PathLike, dict]) -> "SweepSpec":
        if isinstance(source, dict):
            obj = dict(source)
        else:
            with open(source) as fh:
                obj = json.load(fh)
        obj.pop("schema", None)
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        return cls(**obj)

    def to_json(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        out["methods"] = [list(p) if not isinstance(p, str) else p for p in self.methods]
        for key in ("n_grid", "d_grid", "k_grid", "strategies"):
            out[key] = list(out[key])
        return out

    def cells(self):
        for n, d, k in itertools.product(self.n_grid, self.d_grid, self.k_grid):
            for s in self.strategies:
                yield n, d, k, s


@dataclass
class SweepRecord:
    n: int
    d: int
    k: int
    trial: int
    strategy: str
    error_map: dict = field(default_factory=dict)
    ns_delta_norm: float = math.nan
    certificate_bound: float = math.nan
    cert_ok: Optional[bool] = None
    flag: str = ""
    wall_time: float = 0.0
    # not part of records.csv: kept for in-process analysis
    delta_norms: dict = field(default_factory=dict, repr=False)
    theta_star_err: float = math.nan

    def value(self, name: str) -> float:
        if name in ("n", "d", "k", "trial"):
            return float(getattr(self, name))
        if name in ERROR_COLUMNS:
            return self.error_map.get(name, math.nan)
        if name == "ns_delta_norm":
            return self.ns_delta_norm
        if name == "theta_star_err":
            return self.theta_star_err
        if name == "cert_bound":
            return self.certificate_bound
        raise KeyError(name)

    def to_row(self) -> list[str]:
        row = [str(self.n), str(self.d), str(self.k), str(self.trial), self.strategy]
        row += [_fmt(self.error_map.get(c, math.nan)) for c in ERROR_COLUMNS]
        row += [
            _fmt(self.ns_delta_norm),
            _fmt(self.certificate_bound),
            "" if self.cert_ok is None else ("true" if self.cert_ok else "false"),
            self.flag,
        ]
        return row

    @classmethod
    def from_row(cls, row: dict) -> "SweepRecord":
        ok = row["cert_ok"]
        return cls(
            n=int(row["n"]),
            d=int(row["d"]),
            k=int(row["k"]),
            trial=int(row["trial"]),
            strategy=row["strategy"],
            error_map={c: float(row[c]) for c in ERROR_COLUMNS},
            ns_delta_norm=float(row["ns_delta_norm"]),
            certificate_bound=float(row["cert_bound"]),
            cert_ok=None if ok == "" else ok == "true",
            flag=row["flag"],
        )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trial_seeds(base_seed: int, n: int, d: int, k: int, trial: int, strategy: str) -> tuple[int, int]:
    """Deterministic (data_seed, drop_seed) for one sweep trial."""
    s_idx = synthgen.STRATEGIES.index(strategy)
    ss = np.random.SeedSequence([base_seed, n, d, k, trial, s_idx])
    data_seed, drop_seed = ss.generate_state(2, dtype=np.uint64)
    return int(data_seed), int(drop_seed)


def run_trial(spec: SweepSpec, n: int, d: int, k: int, trial: int, strategy: str) -> SweepRecord:
    start = time.perf_counter()
    rec = SweepRecord(n, d, k, trial, strategy)
    data_seed, drop_seed = trial_seeds(spec.base_seed, n, d, k, trial, strategy)
    flags = []
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", MaxIterExceeded)
            inst = synthgen.generate(
                synthgen.SynthConfig(n, d, spec.theta_star_norm, spec.lam, data_seed)
            )
            loss_spec = ermcore.LossSpec(spec.loss, spec.lam)
            report = ermcore.fit(inst.dataset, loss_spec)
            if not report.converged:
                flags.append("fit_nonconverged")
            rec.theta_star_err = float(np.linalg.norm(report.theta - inst.theta_star))
            state = ermcore.build_state(inst.dataset, loss_spec, report.theta)
            T = synthgen.sample_dropset(inst, state, strategy, k, drop_seed)
            ests = attribution.estimate(state, T, ("IF", "NS", "RIF", "DRIF"))
            exact = attribution.estimate_exact(state, T, ns_estimate=ests["NS"])
            if any(issubclass(w.category, MaxIterExceeded) for w in caught) and "fit_nonconverged" not in flags:
                flags.append("retrain_nonconverged")
        table = attribution.compare(list(ests.values()), exact)
        for pair, col in _PAIR_COLUMN.items():
            a, b = sorted(pair)
            rec.error_map[col] = table.distance(a, b)
        rec.delta_norms = dict(table.delta_norms)
        rec.ns_delta_norm = table.delta_norms["NS"]
        if spec.certify:
            cfg = certificate.CertificateConfig(**{"seed": drop_seed, **spec.certificate})
            try:
                cert = certificate.certify_ns(state, T, cfg)
                rec.certificate_bound = cert.bound
                rec.cert_ok = cert.condition_ok
            except DropkitError as exc:
                rec.certificate_bound = math.inf
                rec.cert_ok = False
                flags.append(f"cert_{type(exc).__name__}")
    except DropkitError as exc:
        flags.append(type(exc).__name__)
        for col in ERROR_COLUMNS:
            rec.error_map.setdefault(col, math.nan)
    rec.flag = ";".join(flags)
    rec.wall_time = time.perf_counter() - start
    return rec


def _run_trial_args(args):
    return run_trial(*args)


def default_workers() -> int:
    env = os.environ.get("DROPKIT_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_sweep(spec: SweepSpec, workers: Optional[int] = None, progress: Optional[Callable] = None) -> list[SweepRecord]:
    """Run every (cell, trial); failures become flagged records.

    Output is sorted by (n, d, k, strategy, trial) regardless of worker count.
    """
    jobs = [
        (spec, n, d, k, trial, s)
        for n, d, k, s in spec.cells()
        for trial in range(spec.trials_per_cell)
    ]
    workers = default_workers() if workers is None else max(1, int(workers))
    records = []
    if workers == 1 or len(jobs) == 1:
        for job in jobs:
            records.append(run_trial(*job))
            if progress:
                progress(records[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rec in pool.map(_run_trial_args, jobs, chunksize=max(1, len(jobs) // (8 * workers))):
                records.append(rec)
                if progress:
                    progress(rec)
    records.sort(key=lambda r: (r.n, r.d, r.k, synthgen.STRATEGIES.index(r.strategy), r.trial))
    return records


@dataclass(frozen=True)
class SlopeFit:
    axis: str
    pair: str
    slope: float
    intercept: float
    r_squared: float
    n_points: int
    ci_halfwidth: float
    axis_values: tuple = ()
    medians: tuple = ()

    def to_json(self) -> dict:
        out = asdict(self)
        out["axis_values"] = list(self.axis_values)
        out["medians"] = list(self.medians)
        return certificate._encode(out)


def _matches(rec: SweepRecord, flt) -> bool:
    if flt is None:
        return True
    if callable(flt):
        return bool(flt(rec))
    return all(getattr(rec, key) == val for key, val in flt.items())


def cell_medians(records: Iterable[SweepRecord], axis: str, column: str, flt=None) -> tuple[dict, int]:
    """axis value -> median of ``column`` over unflagged records passing ``flt``."""
    groups: dict = {}
    zeros = 0
    for rec in records:
        if rec.flag or not _matches(rec, flt):
            continue
        v = rec.value(column)
        if not math.isfinite(v):
            continue
        if v == 0.0:
            zeros += 1
            continue
        groups.setdefault(getattr(rec, axis), []).append(v)
    meds = {key: float(np.median(vals)) for key, vals in sorted(groups.items())}
    return meds, zeros


def fit_scaling(records: Sequence[SweepRecord], axis: str, pair, flt=None) -> SlopeFit:
    """OLS of log(median value) on log(axis value) across cells; 95% CI from residuals.

    Records with a value of exactly zero cannot enter a log-log fit and are
    excluded; ZeroError is raised when that leaves too few cells.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    column = pair_column(pair)
    meds, zeros = cell_medians(records, axis, column, flt)
    if len(meds) < 3:
        if zeros:
            raise ZeroError(f"{zeros} zero-valued {column} entries leave only {len(meds)} usable cells")
        raise InsufficientPoints(f"need >= 3 distinct {axis} values, got {len(meds)}")
    if zeros:
        warnings.warn(f"excluded {zeros} zero-valued {column} entries from the fit", stacklevel=2)
    xs = np.log(np.array(list(meds.keys()), dtype=float))
    ys = np.log(np.array(list(meds.values())))
    res = stats.linregress(xs, ys)
    dof = len(xs) - 2
    half = float(stats.t.ppf(0.975, dof) * res.stderr) if dof > 0 else math.inf
    return SlopeFit(
        axis=axis,
        pair=column,
        slope=float(res.slope),
        intercept=float(res.intercept),
        r_squared=float(min(max(res.rvalue**2, 0.0), 1.0)),
        n_points=len(xs),
        ci_halfwidth=half,
        axis_values=tuple(meds.keys()),
        medians=tuple(meds.values()),
    )


def read_records(path: Union[str, os.PathLike]) -> list[SweepRecord]:
    with open(path, newline="") as fh:
        return [SweepRecord.from_row(row) for row in csv.DictReader(fh)]


def _summary_markdown(records, slope_fits) -> str:
    lines = ["# Sweep summary", ""]
    lines.append(f"{len(records)} records, {sum(1 for r in records if r.flag)} flagged.")
    lines.append("")
    lines.append("## Per-cell medians")
    lines.append("")
    head = ["n", "d", "k", "strategy", "trials"] + [c[4:] for c in ERROR_COLUMNS]
    lines.append("| " + " | ".join(head) + " |")
    lines.append("|" + "---|" * len(head))
    cells: dict = {}
    for r in records:
        cells.setdefault((r.n, r.d, r.k, r.strategy), []).append(r)
    for (n, d, k, s), recs in sorted(cells.items()):
        good = [r for r in recs if not r.flag]
        meds = []
        for c in ERROR_COLUMNS:
            vals = [r.value(c) for r in good if math.isfinite(r.value(c))]
            meds.append(f"{np.median(vals):.3e}" if vals else "-")
        label = f"{s} (heuristic)" if s == "adversarial_aligned" else s
        lines.append("| " + " | ".join([str(n), str(d), str(k), label, str(len(good))] + meds) + " |")
    if any(r.strategy == "adversarial_aligned" for r in records):
        lines.append("")
        lines.append("adversarial_aligned is a heuristic witness for worst-case drops, not the maximum over T.")
    lines.append("")
    lines.append("## Slope fits")
    lines.append("")
    if slope_fits:
        lines.append("| axis | value | slope | 95% CI | r^2 | points |")
        lines.append("|---|---|---|---|---|---|")
        for f in slope_fits:
            lines.append(
                f"| {f.axis} | {f.pair} | {f.slope:.4f} | ±{f.ci_halfwidth:.4f} | {f.r_squared:.4f} | {f.n_points} |"
            )
    else:
        lines.append("(none)")
    lines.append("")
    return "\n".join(lines)


def emit_report(records: Sequence[SweepRecord], slope_fits: Sequence[SlopeFit], out_dir) -> list[Path]:
    """Write records.csv, slopes.json and summary.md into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "records.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(COLUMNS)
            for rec in records:
                writer.writerow(rec.to_row())
        slopes_path = out / "slopes.json"
        with open(slopes_path, "w") as fh:
            json.dump([f.to_json() for f in slope_fits], fh, indent=2)
            fh.write("\n")
        summary_path = out / "summary.md"
        summary_path.write_text(_summary_markdown(records, slope_fits))
    except OSError as exc:
        raise OSError(f"failed writing report under {out}: {exc}") from exc
    return [csv_path, slopes_path, summary_path]
