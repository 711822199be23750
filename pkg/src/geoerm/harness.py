"""Experiment harness: sweeps, replication, aggregation, CSV/SVG output,
and the invariant self-check suite.

All emitted files are byte-reproducible for a given (spec, seed): rows are
produced in a fixed order, floats are printed at 17 significant digits, and
nothing volatile (timestamps, measured wall time) is written.  Per-row wall
times are logged to the console instead and the wall_time_s column carries
a 0.0 placeholder.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import baselines, manifold, objective, solver, synthdata
from .errors import ConfigurationError, GeoermError
from .synthdata import ExperimentConfig, SyntheticTruth, max_error

log = logging.getLogger("geoerm")

SWEEP_AXES = ("h", "n", "T", "p")
METHOD_NAMES = ("GeoERM", "SingleTask", "Pooled", "PlainERM", "NaiveOrtho")

ROWS_HEADER = "method,axis,value,replication,seed,error,failed,wall_time_s"
SUMMARY_HEADER = "method,axis,value,mean_error,sd_error,count"


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: vary ``axis`` over ``values`` with everything else fixed."""

    axis: str
    values: tuple[float, ...]
    fixed: ExperimentConfig
    replications: int = 100
    methods: tuple[str, ...] = METHOD_NAMES

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigurationError(f"axis must be one of {SWEEP_AXES}")
        vals = tuple(float(v) for v in self.values)
        if len(vals) == 0:
            raise ConfigurationError("values must be non-empty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigurationError("values must be strictly increasing")
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        methods = tuple(self.methods)
        if len(methods) == 0:
            raise ConfigurationError("methods must be non-empty")
        for m in methods:
            if m not in METHOD_NAMES:
                raise ConfigurationError(
                    f"unknown method {m!r}; choose from {METHOD_NAMES}"
                )
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "methods", methods)


@dataclass(frozen=True)
class ResultRow:
    method: str
    axis: str
    value: float
    replication: int
    seed: int
    error: float  # nan when failed
    failed: bool
    wall_time_s: float


@dataclass(frozen=True)
class SummaryRow:
    method: str
    axis: str
    value: float
    mean_error: float
    sd_error: float
    count: int


def _row_seed(base: int, value_index: int, rep: int) -> int:
    ss = np.random.SeedSequence(entropy=base, spawn_key=(value_index, rep))
    lo, hi = ss.generate_state(2, np.uint32)
    return (int(hi) << 32) | int(lo)


def _config_at(spec: SweepSpec, value: float, seed: int) -> ExperimentConfig:
    v = value if spec.axis == "h" else int(round(value))
    return dataclasses.replace(spec.fixed, **{spec.axis: v}, seed=seed)


def fit_method(name: str, tasks, cfg: ExperimentConfig,
               hp: objective.Hyperparams,
               rng: np.random.Generator) -> list[np.ndarray]:
    """Run one method on a task suite and return its per-task estimates."""
    if name == "GeoERM":
        return solver.geoerm_fit(tasks, cfg.r, hp, rng).state.beta
    if name == "SingleTask":
        return [baselines.single_task_fit(t) for t in tasks]
    if name == "Pooled":
        beta = baselines.pooled_fit(tasks)
        return [beta for _ in tasks]
    if name == "PlainERM":
        return baselines.plain_erm_fit(tasks, cfg.r, hp, rng).state.beta
    if name == "NaiveOrtho":
        return baselines.naive_ortho_fit(tasks, cfg.r, hp, rng).state.beta
    raise ConfigurationError(f"unknown method {name!r}")


def run_sweep(spec: SweepSpec) -> list[ResultRow]:
    """All (value, replication, method) cells in a fixed deterministic
    order.  A failed fit is recorded (failed=True, error=nan) and the sweep
    continues."""
    rows: list[ResultRow] = []
    for vi, value in enumerate(spec.values):
        for rep in range(spec.replications):
            seed = _row_seed(spec.fixed.seed, vi, rep)
            cfg = _config_at(spec, value, seed)
            tasks, truth = synthdata.gen_suite(cfg)
            hp = synthdata.resolve_hyperparams(cfg)
            for method in spec.methods:
                rng = synthdata.solver_rng(seed)
                t0 = time.perf_counter()
                try:
                    betas = fit_method(method, tasks, cfg, hp, rng)
                    err = max_error(betas, truth)
                    failed = not math.isfinite(err)
                except (GeoermError, np.linalg.LinAlgError) as exc:
                    log.warning("fit failed: %s %s=%g rep=%d: %s",
                                method, spec.axis, value, rep, exc)
                    err, failed = math.nan, True
                elapsed = time.perf_counter() - t0
                log.info("%s %s=%g rep=%d error=%s (%.2fs)",
                         method, spec.axis, value, rep, err, elapsed)
                rows.append(ResultRow(
                    method=method, axis=spec.axis, value=float(value),
                    replication=rep, seed=seed,
                    error=err if not failed else math.nan,
                    failed=failed, wall_time_s=0.0,
                ))
    return rows


def aggregate(rows: Sequence[ResultRow]) -> list[SummaryRow]:
    """Mean and sample standard deviation per (method, axis value),
    skipping failed rows."""
    if len(rows) == 0:
        raise ConfigurationError("no rows to aggregate")
    cells: dict[tuple[str, str, float], list[float]] = {}
    order: list[tuple[str, str, float]] = []
    for row in rows:
        key = (row.method, row.axis, row.value)
        if key not in cells:
            cells[key] = []
            order.append(key)
        if not row.failed:
            cells[key].append(row.error)
    out = []
    for key in order:
        vals = cells[key]
        count = len(vals)
        mean = sum(vals) / count if count else math.nan
        if count > 1:
            sd = math.sqrt(sum((v - mean) ** 2 for v in vals) / (count - 1))
        else:
            sd = 0.0 if count == 1 else math.nan
        out.append(SummaryRow(key[0], key[1], key[2], mean, sd, count))
    return out


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def emit_csv(items: Sequence[ResultRow] | Sequence[SummaryRow], path) -> Path:
    """Write rows or summaries as CSV: fixed header, 17-significant-digit
    floats, LF line endings."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if len(items) > 0 and isinstance(items[0], SummaryRow):
        writer.writerow(SUMMARY_HEADER.split(","))
        for s in items:
            writer.writerow([s.method, s.axis, _fmt(s.value), _fmt(s.mean_error),
                             _fmt(s.sd_error), str(s.count)])
    else:
        writer.writerow(ROWS_HEADER.split(","))
        for r in items:
            writer.writerow([r.method, r.axis, _fmt(r.value), str(r.replication),
                             str(r.seed), _fmt(r.error),
                             "true" if r.failed else "false",
                             _fmt(r.wall_time_s)])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue().encode("utf-8"))
    return path


def parse_rows_csv(path) -> list[ResultRow]:
    """Read back a rows CSV produced by emit_csv."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            rows.append(ResultRow(
                method=rec["method"], axis=rec["axis"],
                value=float(rec["value"]), replication=int(rec["replication"]),
                seed=int(rec["seed"]), error=float(rec["error"]),
                failed=rec["failed"] == "true",
                wall_time_s=float(rec["wall_time_s"]),
            ))
    return rows


_PALETTE = ("#1b6ca8", "#c23b22", "#2e8540", "#8e44ad", "#e67e22")


def emit_plot(summary: Sequence[SummaryRow], path) -> Path:
    """Self-contained SVG: one line per method over the axis values, with a
    shaded +/- 1 sd band.  The file starts with '<svg' and uses no external
    assets."""
    if len(summary) == 0:
        raise ConfigurationError("empty summary: nothing to plot")
    axis = summary[0].axis
    methods: list[str] = []
    for s in summary:
        if s.method not in methods:
            methods.append(s.method)
    xs = sorted({s.value for s in summary})
    if len(xs) == 1:
        xs = [xs[0] - 0.5, xs[0] + 0.5]
        pad_x = True
    else:
        pad_x = False
    los, his = [], []
    for s in summary:
        if math.isfinite(s.mean_error):
            los.append(s.mean_error - s.sd_error)
            his.append(s.mean_error + s.sd_error)
    y_lo = min(los) if los else 0.0
    y_hi = max(his) if his else 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    y_pad = 0.08 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    width, height = 640.0, 420.0
    ml, mr, mt, mb = 62.0, 16.0, 18.0, 46.0

    def sx(v: float) -> float:
        return ml + (v - xs[0]) / (xs[-1] - xs[0]) * (width - ml - mr)

    def sy(v: float) -> float:
        return height - mb - (v - y_lo) / (y_hi - y_lo) * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width:g}" height="{height:g}" '
        f'viewBox="0 0 {width:g} {height:g}">',
        f'<rect x="0" y="0" width="{width:g}" height="{height:g}" fill="#ffffff"/>',
    ]
    # axes
    parts.append(
        f'<line x1="{ml:g}" y1="{height - mb:g}" x2="{width - mr:g}" '
        f'y2="{height - mb:g}" stroke="#000000" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{ml:g}" y1="{mt:g}" x2="{ml:g}" y2="{height - mb:g}" '
        f'stroke="#000000" stroke-width="1"/>'
    )
    tick_xs = xs if not pad_x else [sum(xs) / 2.0]
    for v in tick_xs:
        parts.append(
            f'<text x="{sx(v):.2f}" y="{height - mb + 18:.2f}" '
            f'font-size="12" font-family="sans-serif" '
            f'text-anchor="middle">{v:.6g}</text>'
        )
    for frac in (0.0, 0.5, 1.0):
        v = y_lo + frac * (y_hi - y_lo)
        parts.append(
            f'<text x="{ml - 6:.2f}" y="{sy(v) + 4:.2f}" font-size="12" '
            f'font-family="sans-serif" text-anchor="end">{v:.4g}</text>'
        )
    parts.append(
        f'<text x="{(ml + width - mr) / 2:.2f}" y="{height - 10:.2f}" '
        f'font-size="13" font-family="sans-serif" '
        f'text-anchor="middle">{escape(axis)}</text>'
    )
    parts.append(
        f'<text x="14" y="{(mt + height - mb) / 2:.2f}" font-size="13" '
        f'font-family="sans-serif" text-anchor="middle" '
        f'transform="rotate(-90 14 {(mt + height - mb) / 2:.2f})">error</text>'
    )

    by_method = {
        m: sorted((s for s in summary if s.method == m), key=lambda s: s.value)
        for m in methods
    }
    for i, m in enumerate(methods):
        color = _PALETTE[i % len(_PALETTE)]
        pts = [s for s in by_method[m] if math.isfinite(s.mean_error)]
        if len(pts) == 0:
            # keep one polyline per method even when all cells failed
            parts.append(f'<polyline points="" fill="none" stroke="{color}"/>')
            continue
        upper = [(sx(s.value), sy(s.mean_error + s.sd_error)) for s in pts]
        lower = [(sx(s.value), sy(s.mean_error - s.sd_error)) for s in pts]
        band = " ".join(f"{x:.2f},{y:.2f}" for x, y in upper + lower[::-1])
        parts.append(
            f'<polygon points="{band}" fill="{color}" fill-opacity="0.15" '
            f'stroke="none"/>'
        )
        line = " ".join(f"{sx(s.value):.2f},{sy(s.mean_error):.2f}" for s in pts)
        parts.append(
            f'<polyline points="{line}" fill="none" stroke="{color}" '
            f'stroke-width="2"/>'
        )
        ly = mt + 16 + 16 * i
        parts.append(
            f'<line x1="{width - mr - 150:.2f}" y1="{ly:.2f}" '
            f'x2="{width - mr - 126:.2f}" y2="{ly:.2f}" stroke="{color}" '
            f'stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{width - mr - 120:.2f}" y="{ly + 4:.2f}" font-size="12" '
            f'font-family="sans-serif">{escape(m)}</text>'
        )
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(("\n".join(parts) + "\n").encode("utf-8"))
    return path


def write_manifest(path, payload: dict) -> Path:
    """run_manifest.json: resolved configuration and library version; no
    volatile fields, so the bytes are reproducible."""
    from . import __version__

    path = Path(path)
    data = dict(payload)
    data["geoerm_version"] = __version__
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(
        (json.dumps(data, indent=2, sort_keys=True) + "\n").encode("utf-8")
    )
    return path


# ---------------------------------------------------------------------------
# self check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class CheckReport:
    results: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_text(self) -> str:
        lines = [
            f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}"
            for r in self.results
        ]
        lines.append(
            f"self-check: {sum(r.passed for r in self.results)}/"
            f"{len(self.results)} checks passed"
        )
        return "\n".join(lines)


def _check_manifold(rng: np.random.Generator) -> list[CheckResult]:
    worst_ortho = 0.0
    worst_agree = 0.0
    worst_idem = 0.0
    worst_adj = 0.0
    worst_annih = 0.0
    worst_decomp = 0.0
    for _ in range(200):
        p = int(rng.integers(2, 31))
        r = int(rng.integers(1, min(p, 6) + 1))
        A = manifold.random_stiefel(p, r, rng)
        G = rng.standard_normal((p, r))
        K = rng.standard_normal((p, r))
        H = manifold.project_tangent(A, G)
        R = manifold.polar_retract(A, H)
        worst_ortho = max(worst_ortho, float(np.linalg.norm(
            R.matrix.T @ R.matrix - np.eye(r))))
        R2 = manifold.polar_retract_svd(A, H)
        worst_agree = max(worst_agree, float(np.linalg.norm(R.matrix - R2.matrix)))
        PG = H.matrix
        PPG = manifold.project_tangent(A, PG).matrix
        worst_idem = max(worst_idem, float(np.linalg.norm(PPG - PG)))
        PK = manifold.project_tangent(A, K).matrix
        worst_adj = max(worst_adj, abs(float(np.sum(PG * K) - np.sum(G * PK))))
        S = manifold.sym(rng.standard_normal((r, r)))
        worst_annih = max(worst_annih, float(np.linalg.norm(
            manifold.project_tangent(A, A.matrix @ S).matrix)))
        recon = PG + A.matrix @ manifold.sym(A.matrix.T @ G)
        worst_decomp = max(worst_decomp, float(np.linalg.norm(recon - G)))
    dims_ok = all(
        manifold.manifold_dim(p, r) == _tangent_basis_rank(p, r, rng)
        for p, r in ((3, 2), (5, 3))
    )
    return [
        CheckResult("manifold.retraction_orthonormality", worst_ortho <= 1e-8,
                    f"max defect {worst_ortho:.2e} (tol 1e-8)"),
        CheckResult("manifold.gram_vs_svd_retraction", worst_agree <= 1e-9,
                    f"max gap {worst_agree:.2e} (tol 1e-9)"),
        CheckResult("manifold.projection_idempotent", worst_idem <= 1e-10,
                    f"max gap {worst_idem:.2e} (tol 1e-10)"),
        CheckResult("manifold.projection_self_adjoint", worst_adj <= 1e-10,
                    f"max gap {worst_adj:.2e} (tol 1e-10)"),
        CheckResult("manifold.normal_space_annihilation", worst_annih <= 1e-10,
                    f"max norm {worst_annih:.2e} (tol 1e-10)"),
        CheckResult("manifold.orthogonal_decomposition", worst_decomp <= 1e-12,
                    f"max gap {worst_decomp:.2e} (tol 1e-12)"),
        CheckResult("manifold.dimension_formula", dims_ok,
                    "rank of tangent spanning set matches p*r - r(r+1)/2"),
    ]


def _tangent_basis_rank(p: int, r: int, rng: np.random.Generator) -> int:
    """Rank of a spanning set of tangent directions at a random point."""
    A = manifold.random_stiefel(p, r, rng).matrix
    Q, _ = np.linalg.qr(np.linalg.svd(A, full_matrices=True)[0][:, r:])
    Aperp = Q
    rows = []
    for i in range(r):
        for j in range(i + 1, r):
            Om = np.zeros((r, r))
            Om[i, j], Om[j, i] = 1.0, -1.0
            rows.append((A @ Om).ravel())
    for k in range(p - r):
        for l in range(r):
            E = np.zeros((p - r, r))
            E[k, l] = 1.0
            rows.append((Aperp @ E).ravel())
    if not rows:
        return 0
    return int(np.linalg.matrix_rank(np.stack(rows), tol=1e-10))


def _finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                      h: float = 1e-6) -> np.ndarray:
    """Central finite differences, entry by entry."""
    g = np.zeros_like(x, dtype=float)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return g


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


def _check_objective(rng: np.random.Generator) -> list[CheckResult]:
    n, p, r = 12, 5, 2
    worst_loss = 0.0
    worst_pen = 0.0
    mu = 1e-3
    for kind in ("regression", "classification"):
        for _ in range(4):
            X = rng.standard_normal((n, p))
            y = (rng.standard_normal(n) if kind == "regression"
                 else (rng.random(n) < 0.5).astype(float))
            task = objective.TaskData(X=X, y=y, kind=kind)
            beta = rng.standard_normal(p)
            fd = _finite_diff_grad(lambda b: objective.loss_value(task, b), beta)
            worst_loss = max(worst_loss, _rel_err(
                objective.loss_grad_beta(task, beta), fd))
    for _ in range(4):
        Am = rng.standard_normal((p, r))
        Bm = manifold.random_stiefel(p, r, rng).matrix
        term = objective.penalty_term(Am, Bm, mu)
        fd = _finite_diff_grad(
            lambda M: objective.penalty(M, Bm, mu), Am)
        worst_pen = max(worst_pen, _rel_err(term.grad_A, fd))
    A = manifold.random_stiefel(p, r, rng)
    B = manifold.random_stiefel(p, r, rng)
    sym_gap = abs(objective.penalty(A, B, 1e-3) - objective.penalty(B, A, 1e-3))
    return [
        CheckResult("objective.loss_gradients_fd", worst_loss <= 1e-5,
                    f"max rel err {worst_loss:.2e} (tol 1e-5)"),
        CheckResult("objective.penalty_gradient_fd", worst_pen <= 1e-4,
                    f"max rel err {worst_pen:.2e} (tol 1e-4)"),
        CheckResult("objective.penalty_symmetry", sym_gap <= 1e-12,
                    f"|pen(A,B) - pen(B,A)| = {sym_gap:.2e}"),
    ]


def _check_solver(rng: np.random.Generator) -> list[CheckResult]:
    cfg = ExperimentConfig(T=3, n=40, p=10, r=2, h=0.3, eps=0.0, seed=7,
                           iterations=60, alpha=1e-3)
    tasks, _ = synthdata.gen_suite(cfg)
    hp = dataclasses.replace(synthdata.resolve_hyperparams(cfg),
                             optimizer="sgd", theta_optimizer="sgd")
    _, obj_hist, _ = solver.step1(tasks, cfg.r, hp, synthdata.solver_rng(7))
    increases = float(np.max(np.diff(obj_hist))) if len(obj_hist) > 1 else 0.0
    grid = np.linspace(-1.0, 6.0, 70001)
    toy_obj = 0.5 * (grid - 2.0) ** 2 + np.abs(grid)
    toy_best = grid[np.argmin(toy_obj)]
    task = objective.TaskData(X=np.array([[1.0]]), y=np.array([2.0]))
    refined = solver.step2_refine(task, np.zeros(1), 1.0)
    prox_gap = abs(float(refined.beta[0]) - toy_best)
    return [
        CheckResult("solver.plain_gradient_descent", increases <= 1e-10,
                    f"max per-step increase {increases:.2e} (tol 1e-10)"),
        CheckResult("solver.step2_toy_minimizer", prox_gap <= 1e-4,
                    f"|beta - grid argmin| = {prox_gap:.2e}"),
    ]


def _check_synthdata(rng: np.random.Generator) -> list[CheckResult]:
    cfg = ExperimentConfig(T=6, n=30, p=12, r=3, h=0.4, eps=0.2, seed=11)
    tasks_a, truth_a = synthdata.gen_suite(cfg)
    tasks_b, truth_b = synthdata.gen_suite(cfg)
    det = all(
        np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
        for a, b in zip(tasks_a, tasks_b)
    ) and truth_a.regular == truth_b.regular
    n_out = sum(1 for t in range(cfg.T) if t not in truth_a.regular)
    counts_ok = n_out == cfg.n_outliers and len(truth_a.regular) == cfg.T - n_out
    iso_ok = True
    for t in sorted(truth_a.regular):
        beta = truth_a.beta_true[t]
        if not np.isfinite(beta).all():
            iso_ok = False
    angles = []
    for h in (0.05, 0.8):
        cfg_h = dataclasses.replace(cfg, h=h, eps=0.0, T=30)
        _, truth_h = synthdata.gen_suite(cfg_h)
        c = truth_h.center.matrix
        total = 0.0
        for t in range(cfg_h.T):
            rng_t = synthdata.task_rng(cfg_h.seed, t)
            _, _, A = synthdata.gen_regular_task(truth_h.center, cfg_h, rng_t)
            s = np.clip(np.linalg.svd(c.T @ A.matrix, compute_uv=False), -1, 1)
            total += float(np.mean(np.arccos(s)))
        angles.append(total / cfg_h.T)
    return [
        CheckResult("synthdata.determinism", det,
                    "same config twice gives identical suites"),
        CheckResult("synthdata.outlier_count", counts_ok,
                    f"{n_out} outliers for eps={cfg.eps}, T={cfg.T}"),
        CheckResult("synthdata.finite_truth", iso_ok,
                    "all regular-task coefficients finite"),
        CheckResult("synthdata.heterogeneity_monotone", angles[0] < angles[1],
                    f"mean principal angle {angles[0]:.3f} < {angles[1]:.3f}"),
    ]


def self_check() -> CheckReport:
    """Run the cross-module invariant suite at small sizes (< 60 s)."""
    rng = np.random.default_rng(20260810)
    results: list[CheckResult] = []
    results += _check_manifold(rng)
    results += _check_objective(rng)
    results += _check_solver(rng)
    results += _check_synthdata(rng)
    return CheckReport(tuple(results))
