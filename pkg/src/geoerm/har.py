"""Human-activity-recognition study on the UCI smartphone dataset.

The loader reads the standard release layout (train/X_train.txt etc.),
relabels the six activities into static {SITTING, LAYING} -> 0 versus
dynamic -> 1, and groups rows by subject so that each of the 30 subjects
becomes one binary classification task.  The shipped release partitions
the *subjects* between its train and test files (21 vs 9), which leaves
every subject with an empty half, so each subject's pooled rows are
re-split 70/30 deterministically to give every task a held-out test set.

Features are standardized per subject with that subject's training-split
statistics only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import harness
from .errors import ConfigurationError, GeoermError, IngestionError
from .objective import Hyperparams, TaskData
from .synthdata import subseq

N_SUBJECTS = 30
N_FEATURES = 561
N_SAMPLES_TOTAL = 10_299
STATIC_ACTIVITIES = (4, 6)  # SITTING, LAYING
ACTIVITY_CODES = (1, 2, 3, 4, 5, 6)
TEST_FRACTION = 0.3
SPLIT_SEED = 561_030  # per-subject re-split; fixed so loads are reproducible
SD_FLOOR = 1e-8

REQUIRED_FILES = (
    "train/X_train.txt",
    "train/y_train.txt",
    "train/subject_train.txt",
    "test/X_test.txt",
    "test/y_test.txt",
    "test/subject_test.txt",
)


@dataclass(frozen=True, eq=False)
class SubjectTask:
    """One subject's binary classification task with its held-out split."""

    subject: int
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray


@dataclass(frozen=True, eq=False)
class HarDataset:
    subjects: tuple[SubjectTask, ...]

    @property
    def p(self) -> int:
        return self.subjects[0].X_train.shape[1]


@dataclass(frozen=True)
class HarReportRow:
    method: str
    r: int
    mean_error_pct: float
    sd_error_pct: float
    cells: int  # tasks x replications behind the mean


@dataclass(frozen=True)
class HarReport:
    rows: tuple[HarReportRow, ...]


def _read_matrix(path: Path, expect_cols: Optional[int]) -> np.ndarray:
    """Whitespace-delimited numeric matrix with file:line error reporting."""
    if not path.is_file():
        raise IngestionError(f"missing data file: {path}")
    rows = []
    width = expect_cols
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if width is None:
                width = len(parts)
            if len(parts) != width:
                raise IngestionError(
                    f"{path}:{lineno}: expected {width} values, got {len(parts)}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise IngestionError(f"{path}: file is empty")
    return np.asarray(rows, dtype=float)


def _read_int_column(path: Path) -> np.ndarray:
    m = _read_matrix(path, expect_cols=1)
    return m[:, 0].astype(int)


def _relabel(activities: np.ndarray, path: Path) -> np.ndarray:
    bad = ~np.isin(activities, ACTIVITY_CODES)
    if bad.any():
        line = int(np.argmax(bad)) + 1
        raise IngestionError(
            f"{path}:{line}: unknown activity code {activities[bad][0]}"
        )
    return np.where(np.isin(activities, STATIC_ACTIVITIES), 0.0, 1.0)


def load_har(data_dir, *, require_full: bool = True,
             test_fraction: float = TEST_FRACTION) -> HarDataset:
    """Load the UCI layout under ``data_dir`` into 30 per-subject tasks.

    require_full enforces the release-level counts (561 features, 10 299
    rows, subjects 1..30); disable it for reduced fixtures.
    """
    root = Path(data_dir)
    missing = [f for f in REQUIRED_FILES if not (root / f).is_file()]
    if missing:
        raise IngestionError(
            f"HAR data not found under {root}: missing {', '.join(missing)}"
        )

    blocks = []
    total = 0
    p = None
    for split in ("train", "test"):
        X = _read_matrix(root / split / f"X_{split}.txt", expect_cols=p)
        p = X.shape[1]
        y_path = root / split / f"y_{split}.txt"
        y = _relabel(_read_int_column(y_path), y_path)
        subj = _read_int_column(root / split / f"subject_{split}.txt")
        if not (len(y) == len(subj) == X.shape[0]):
            raise IngestionError(
                f"{root / split}: X/y/subject row counts disagree "
                f"({X.shape[0]}/{len(y)}/{len(subj)})"
            )
        blocks.append((X, y, subj))
        total += X.shape[0]

    if require_full:
        if p != N_FEATURES:
            raise IngestionError(f"expected {N_FEATURES} features, found {p}")
        if total != N_SAMPLES_TOTAL:
            raise IngestionError(
                f"expected {N_SAMPLES_TOTAL} rows across splits, found {total}"
            )

    X_all = np.vstack([b[0] for b in blocks])
    y_all = np.concatenate([b[1] for b in blocks])
    subj_all = np.concatenate([b[2] for b in blocks])
    present = sorted(set(int(s) for s in subj_all))
    if any(s < 1 or s > N_SUBJECTS for s in present):
        raise IngestionError(f"subject ids outside 1..{N_SUBJECTS}: {present}")
    if require_full and len(present) != N_SUBJECTS:
        raise IngestionError(
            f"expected {N_SUBJECTS} subjects, found {len(present)}"
        )

    subjects = []
    for s in present:
        idx = np.flatnonzero(subj_all == s)
        rng = np.random.default_rng(subseq(SPLIT_SEED, s))
        perm = rng.permutation(len(idx))
        n_test = max(1, int(round(test_fraction * len(idx))))
        test_idx = idx[perm[:n_test]]
        train_idx = idx[perm[n_test:]]
        if len(train_idx) == 0:
            raise IngestionError(f"subject {s}: no training rows after split")
        subjects.append(SubjectTask(
            subject=s,
            X_train=X_all[train_idx], y_train=y_all[train_idx],
            X_test=X_all[test_idx], y_test=y_all[test_idx],
        ))
    return HarDataset(subjects=tuple(subjects))


def standardize_per_subject(ds: HarDataset) -> HarDataset:
    """Center/scale each subject's features by that subject's training-split
    mean and sd (sd floored at 1e-8); the same transform is applied to the
    subject's test rows."""
    out = []
    for rec in ds.subjects:
        mean = rec.X_train.mean(axis=0)
        sd = np.maximum(rec.X_train.std(axis=0), SD_FLOOR)
        out.append(SubjectTask(
            subject=rec.subject,
            X_train=(rec.X_train - mean) / sd,
            y_train=rec.y_train,
            X_test=(rec.X_test - mean) / sd,
            y_test=rec.y_test,
        ))
    return HarDataset(subjects=tuple(out))


def classification_error_pct(beta: np.ndarray, X: np.ndarray,
                             y: np.ndarray) -> float:
    """Misclassified fraction (percent) at prediction threshold 1/2,
    i.e. predicted class = [X beta >= 0]."""
    pred = (X @ beta >= 0.0).astype(float)
    return 100.0 * float(np.mean(pred != y))


def _har_hyperparams(r: int, T: int, p: int, base: Optional[Hyperparams],
                     iterations: int) -> Hyperparams:
    if base is not None:
        return base
    ln_t = math.log(T)
    return Hyperparams(
        lam=math.sqrt(r * (p + ln_t)),
        gamma=math.sqrt(p + ln_t),
        iterations=iterations,
    )


@dataclass(frozen=True)
class _HarCfg:
    """Just enough config for harness.fit_method's method dispatch."""

    r: int


def run_har(ds: HarDataset, methods: Sequence[str],
            r_values: Sequence[int] = (5, 10, 15),
            hp: Optional[Hyperparams] = None, seed: int = 0,
            replications: int = 10, iterations: int = 500) -> HarReport:
    """Fit every method at every r; each subject is one task.

    The data are fixed, so replications vary only the optimizer
    initialization seed.  Per-cell failures are recorded and skipped.
    """
    if replications < 1:
        raise ConfigurationError("replications must be >= 1")
    tasks = [
        TaskData(X=rec.X_train, y=rec.y_train, kind="classification")
        for rec in ds.subjects
    ]
    T = len(tasks)
    p = tasks[0].p

    rows = []
    for method in methods:
        if method not in harness.METHOD_NAMES:
            raise ConfigurationError(f"unknown method {method!r}")
        deterministic = method in ("SingleTask", "Pooled")
        for r in sorted(r_values):
            hp_r = _har_hyperparams(r, T, p, hp, iterations)
            cell_errors: list[float] = []
            reps = 1 if deterministic else replications
            for rep in range(reps):
                rng = np.random.default_rng(
                    subseq(seed, harness.METHOD_NAMES.index(method), r, rep)
                )
                try:
                    cfg_like = _HarCfg(r=r)
                    betas = harness.fit_method(method, tasks, cfg_like, hp_r, rng)
                except (GeoermError, np.linalg.LinAlgError) as exc:
                    harness.log.warning("HAR fit failed: %s r=%d rep=%d: %s",
                                        method, r, rep, exc)
                    continue
                for rec, beta in zip(ds.subjects, betas):
                    cell_errors.append(
                        classification_error_pct(beta, rec.X_test, rec.y_test)
                    )
            if cell_errors:
                arr = np.asarray(cell_errors)
                mean = float(arr.mean())
                sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
            else:
                mean, sd = math.nan, math.nan
            rows.append(HarReportRow(method, r, mean, sd, len(cell_errors)))
    return HarReport(tuple(rows))


def har_report_csv(report: HarReport, path) -> Path:
    path = Path(path)
    lines = ["method,r,mean_error_pct,sd_error_pct,cells"]
    for row in report.rows:
        lines.append(
            f"{row.method},{row.r},{row.mean_error_pct:.17g},"
            f"{row.sd_error_pct:.17g},{row.cells}"
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return path
