"""Ablation grid over method subsets, feature importance and correlation diagnostics."""

from __future__ import annotations

import csv
import json
import logging
import traceback
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DatasetManifest, split_random
from .ensemble import METHODS, PROPOSED, MethodSelection, TextureEnsemble, all_selections
from .forest import RandomForestRegressor
from .tensor import Tensor, no_grad
from .training import aggregate, train

log = logging.getLogger(__name__)

ABLATION_HEADER = ["deepten", "gap", "histogram", "fap", "mean_acc", "std_acc", "n_splits"]
IMPORTANCE_HEADER = ["method", "importance", "rank"]

# Published single-dataset grid (FMD): (deepten, gap, histogram, fap) -> accuracy.
PUBLISHED_FMD_ACCURACIES = {
    (1, 1, 1, 1): 82.0, (0, 1, 1, 1): 80.7, (1, 0, 1, 1): 83.1, (1, 1, 0, 1): 81.9,
    (1, 1, 1, 0): 82.2,
    (1, 1, 0, 0): 82.7, (1, 0, 1, 0): 81.9, (1, 0, 0, 1): 82.3, (0, 0, 1, 1): 52.8,
    (0, 1, 1, 0): 80.2, (0, 1, 0, 1): 77.4,
    (1, 0, 0, 0): 80.0, (0, 1, 0, 0): 79.4, (0, 0, 1, 0): 72.9, (0, 0, 0, 1): 33.8,
}


def cell_seed(master: int, cell: int, split: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, cell, split])


@dataclass
class AblationCell:
    selection: MethodSelection
    dataset_id: str = ""
    split_accuracies: list[float] = field(default_factory=list)
    error: str = ""

    @property
    def mean(self) -> float:
        return aggregate(self.split_accuracies)[0] if self.split_accuracies else float("nan")

    @property
    def std(self) -> float:
        return aggregate(self.split_accuracies)[1] if self.split_accuracies else float("nan")

    @property
    def proposed(self) -> bool:
        return self.selection == PROPOSED

    def to_json(self) -> dict:
        return {"methods": list(self.selection.methods), "dataset_id": self.dataset_id,
                "split_accuracies": self.split_accuracies, "error": self.error}

    @classmethod
    def from_json(cls, d: dict) -> "AblationCell":
        return cls(MethodSelection.from_methods(d["methods"]), d.get("dataset_id", ""),
                   [float(a) for a in d["split_accuracies"]], d.get("error", ""))


def run_cell(manifest: DatasetManifest, cfg, selection: MethodSelection,
             metrics_path=None) -> AblationCell:
    """Train/evaluate one selection on every split of ``manifest``."""
    cell = AblationCell(selection, manifest.dataset_id)
    for k, split in enumerate(manifest.splits):
        ss = cell_seed(cfg.run.seed, selection.bitmask, k)
        init_seed, train_seed = ss.generate_state(2)
        model = TextureEnsemble(cfg.ensemble(manifest.n_classes, selection),
                                np.random.default_rng(int(init_seed)))
        tcfg = type(cfg.train)(**{**asdict(cfg.train), "seed": int(train_seed)})
        result = train(model, manifest, split, tcfg, cfg.augment,
                       run_id=f"cell{selection.bitmask:02d}-split{k}", metrics_path=metrics_path)
        cell.split_accuracies.append(result.test_acc)
    return cell


def _run_cell_safe(args) -> AblationCell:
    manifest, cfg, selection, metrics_path = args
    try:
        return run_cell(manifest, cfg, selection, metrics_path)
    except Exception as exc:  # one bad cell must not sink the grid
        log.error("cell %s failed: %s", selection, exc)
        return AblationCell(selection, manifest.dataset_id,
                            error="".join(traceback.format_exception_only(type(exc), exc)).strip())


def run_ablation(manifest: DatasetManifest, cfg, out_dir=None,
                 selections: Sequence[MethodSelection] | None = None,
                 workers: int = 1) -> list[AblationCell]:
    """Train every nonempty method subset; cells are checkpointed and resumed from ``out_dir``."""
    if not manifest.splits:
        split_random(manifest, cfg.data.n_splits, cfg.data.train_fraction, cfg.data.split_seed)
    selections = list(selections) if selections is not None else all_selections()
    selections.sort(key=lambda s: s.bitmask)
    ckpt_dir = Path(out_dir) / "cells" if out_dir is not None else None
    done: dict[int, AblationCell] = {}
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        for sel in selections:
            path = ckpt_dir / f"cell_{sel.bitmask:02d}.json"
            if path.exists():
                cell = AblationCell.from_json(json.loads(path.read_text()))
                if not cell.error:
                    done[sel.bitmask] = cell
    todo = [s for s in selections if s.bitmask not in done]
    jobs = [(manifest, cfg, s, None) for s in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_safe, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_cell_safe(job))
            if ckpt_dir is not None:
                _save_cell(ckpt_dir, results[-1])
    for cell in results:
        done[cell.selection.bitmask] = cell
        if ckpt_dir is not None:
            _save_cell(ckpt_dir, cell)
    return [done[s.bitmask] for s in selections]


def _save_cell(ckpt_dir: Path, cell: AblationCell) -> None:
    path = ckpt_dir / f"cell_{cell.selection.bitmask:02d}.json"
    path.write_text(json.dumps(cell.to_json(), indent=1))


# -- feature importance -----------------------------------------------------
@dataclass
class ImportanceReport:
    methods: tuple[str, ...]
    importances: np.ndarray
    per_seed: np.ndarray
    rankings: list[tuple[str, ...]]
    majority_ranking: tuple[str, ...]
    n_trees: int
    seeds: list[int]
    degenerate: bool = False

    @property
    def ranking(self) -> tuple[str, ...]:
        return self.majority_ranking

    def rank_of(self, method: str) -> int:
        return self.majority_ranking.index(method) + 1

    def metadata(self) -> dict:
        return {"n_trees": self.n_trees, "seeds": self.seeds, "max_depth": None,
                "bootstrap": True, "max_features": "all", "degenerate": self.degenerate,
                "rankings": [list(r) for r in self.rankings]}


def rf_importance(design, targets, n_trees: int = 200, seeds: Sequence[int] = range(10),
                  methods: Sequence[str] = METHODS) -> ImportanceReport:
    """Random-forest importance of binary method-presence features for accuracy.

    Rows are put in canonical order first, so the result does not depend on
    how the design matrix was listed.  The majority ranking is the most
    frequent per-seed ranking; ties go to the one agreeing with the mean.
    """
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    seeds = [int(s) for s in seeds]
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[1] != len(methods):
        raise ValueError(f"design {X.shape} does not match {len(y)} targets / {len(methods)} methods")
    if len({tuple(r) for r in X}) != len(X):
        raise ValueError("design rows must have distinct feature patterns")
    methods = tuple(methods)
    k = len(methods)
    if np.ptp(y) == 0:
        uniform = np.full(k, 1.0 / k)
        return ImportanceReport(methods, uniform, np.tile(uniform, (len(seeds), 1)),
                                [methods] * len(seeds), methods, n_trees, seeds, degenerate=True)
    order = np.lexsort(np.column_stack([X, y]).T[::-1])
    X, y = X[order], y[order]
    per_seed = np.array([RandomForestRegressor(n_trees, seed=s).fit(X, y).feature_importances_
                         for s in seeds])
    mean = per_seed.mean(axis=0)
    mean = mean / mean.sum()
    rankings = [tuple(methods[i] for i in np.argsort(-imp, kind="stable")) for imp in per_seed]
    by_mean = tuple(methods[i] for i in np.argsort(-mean, kind="stable"))
    counts = Counter(rankings)
    top = max(counts.values())
    tied = [r for r in counts if counts[r] == top]
    majority = by_mean if by_mean in tied else tied[0]
    return ImportanceReport(methods, mean, per_seed, rankings, majority, n_trees, seeds)


def design_from_cells(cells: Sequence[AblationCell]) -> tuple[np.ndarray, np.ndarray]:
    ok = [c for c in cells if c.split_accuracies]
    X = np.array([[int(f) for f in c.selection.flags] for c in ok], dtype=float)
    return X, np.array([c.mean for c in ok])


def published_fmd_design() -> tuple[np.ndarray, np.ndarray]:
    keys = list(PUBLISHED_FMD_ACCURACIES)
    return np.array(keys, dtype=float), np.array([PUBLISHED_FMD_ACCURACIES[k] for k in keys])


# -- correlation diagnostic ---------------------------------------------------
@dataclass
class PairCorrelation:
    a: str
    b: str
    mean_abs: float
    matched_abs: float


@dataclass
class CorrelationSummary:
    pairs: list[PairCorrelation]
    matrix: np.ndarray
    kept: dict[str, int]
    excluded: dict[str, int]

    def pair(self, a: str, b: str) -> PairCorrelation:
        for p in self.pairs:
            if {p.a, p.b} == {a, b}:
                return p
        raise KeyError((a, b))


def correlation_summary(features: dict[str, np.ndarray], tol: float = 1e-12) -> CorrelationSummary:
    """Pearson correlations between every cross-method pair of feature dimensions.

    ``mean_abs`` averages |rho| over all cross pairs; ``matched_abs`` averages,
    over every dimension of both blocks, its largest |rho| with the other
    block.  Zero-variance dimensions are dropped and counted.
    """
    names = list(features)
    if len(names) < 2:
        raise ValueError("need at least two methods")
    blocks, kept, excluded = {}, {}, {}
    for name in names:
        f = np.asarray(features[name], dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 8:
            raise ValueError(f"{name}: need a (batch >= 8, d) feature block, got {f.shape}")
        live = f.std(axis=0) > tol
        blocks[name] = f[:, live]
        kept[name], excluded[name] = int(live.sum()), int((~live).sum())
    allf = np.concatenate([blocks[n] for n in names], axis=1)
    z = (allf - allf.mean(axis=0)) / allf.std(axis=0)
    matrix = z.T @ z / len(z)
    np.fill_diagonal(matrix, 1.0)
    bounds = np.cumsum([0] + [kept[n] for n in names])
    pairs = []
    for i, a in enumerate(names):
        for j in range(i + 1, len(names)):
            block = np.abs(matrix[bounds[i]:bounds[i + 1], bounds[j]:bounds[j + 1]])
            if block.size == 0:
                pairs.append(PairCorrelation(a, names[j], float("nan"), float("nan")))
                continue
            matched = np.concatenate([block.max(axis=1), block.max(axis=0)]).mean()
            pairs.append(PairCorrelation(a, names[j], float(block.mean()), float(matched)))
    return CorrelationSummary(pairs, matrix, kept, excluded)


def correlation_diagnostic(model: TextureEnsemble, images) -> CorrelationSummary:
    """Run ``model`` in eval mode on a batch and correlate its method outputs."""
    model.eval()
    with no_grad():
        feats = model.features(images if isinstance(images, Tensor) else Tensor(images))
    return correlation_summary({k: v.data for k, v in feats.items()})


# -- reports ------------------------------------------------------------------
def write_ablation_csv(cells: Sequence[AblationCell], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ABLATION_HEADER)
        for c in cells:
            w.writerow([int(f) for f in c.selection.flags]
                       + [repr(c.mean), repr(c.std), len(c.split_accuracies)])
    return path


def read_accuracy_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix and accuracies from an ablation CSV (``mean_acc`` or ``accuracy`` column)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rows")
    col = "mean_acc" if "mean_acc" in rows[0] else "accuracy"
    missing = [c for c in (*METHODS, col) if c not in rows[0]]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    X = np.array([[float(r[m]) for m in METHODS] for r in rows])
    y = np.array([float(r[col]) for r in rows])
    keep = np.isfinite(y)
    return X[keep], y[keep]


def write_importance_csv(report: ImportanceReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(IMPORTANCE_HEADER)
        for m, imp in zip(report.methods, report.importances):
            w.writerow([m, repr(float(imp)), report.rank_of(m)])
    return path


def importance_svg(report: ImportanceReport, width: int = 400, height: int = 260) -> str:
    """Bar chart with one ``<rect>`` per method."""
    pad, bar_gap = 40, 20
    n = len(report.methods)
    bar_w = (width - 2 * pad - bar_gap * (n - 1)) / n
    top = max(float(report.importances.max()), 1e-12)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">'
             'Feature importance of texture methods</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
             'stroke="black"/>']
    for i, (m, imp) in enumerate(zip(report.methods, report.importances)):
        h = (height - 2 * pad - 10) * float(imp) / top
        x = pad + i * (bar_w + bar_gap)
        y = height - pad - h
        parts.append(f'<rect class="bar" x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
                     f'height="{h:.1f}" fill="#4a7ab5"><title>{m}: {imp:.4f}</title></rect>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{height - pad + 16}" '
                     f'text-anchor="middle" font-size="12">{m}</text>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{y - 4:.1f}" '
                     f'text-anchor="middle" font-size="11">{imp:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def report_emit(cells: Sequence[AblationCell] | None, importance: ImportanceReport | None,
                out_dir) -> dict[str, Path]:
    """Write ablation.csv, importance.csv and importance.svg (whichever inputs are given)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        if cells is not None:
            paths["ablation"] = write_ablation_csv(cells, out / "ablation.csv")
        if importance is not None:
            paths["importance"] = write_importance_csv(importance, out / "importance.csv")
            svg = out / "importance.svg"
            svg.write_text(importance_svg(importance))
            paths["svg"] = svg
            (out / "importance.json").write_text(json.dumps(importance.metadata(), indent=1))
    except OSError as exc:
        raise OSError(f"could not write report under {out}: {exc}") from exc
    return paths
