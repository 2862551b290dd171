"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    n_checked: int
    n_skipped: int = 0
    tolerance: float = 1e-4
    numerical_failure: bool = False
    message: str = ""
    worst: tuple = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return not self.numerical_failure and self.max_rel_error <= self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.message})" if self.message else ""
        return (f"{status} {self.name}: max rel err {self.max_rel_error:.3e} over "
                f"{self.n_checked} coords, {self.n_skipped} skipped{extra}")


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
               tolerance: float = 1e-4, n_coords: int = 100,
               rng: np.random.Generator | None = None, name: str = "op",
               kink_tol: float = 0.05, floor: float = 1e-6) -> GradCheckReport:
    """Compare backprop gradients of the scalar ``fn()`` with central differences.

    ``inputs`` are the leaf tensors (usually float64) whose coordinates get
    perturbed.  Coordinates where the one-sided differences disagree by more
    than ``kink_tol`` (relative) sit on a non-differentiable point such as a
    max-pool tie and are skipped; the count is reported.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in inputs:
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    out = fn()
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        return GradCheckReport(name, float("inf"), 0, tolerance=tolerance,
                               numerical_failure=True, message="non-finite forward value")
    out.backward()
    analytic = [t.grad.copy() for t in inputs]
    if not all(np.isfinite(a).all() for a in analytic):
        return GradCheckReport(name, float("inf"), 0, tolerance=tolerance,
                               numerical_failure=True, message="non-finite analytic gradient")

    sizes = np.array([t.size for t in inputs])
    total = int(sizes.sum())
    picks = np.arange(total) if total <= n_coords else rng.choice(total, n_coords, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    f0 = float(out.data)
    worst, worst_err, skipped, checked = (), 0.0, 0, 0
    for flat in np.sort(picks):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        t, idx = inputs[k], int(flat - offsets[k])
        view = t.data.reshape(-1)
        orig = view[idx]
        with no_grad():
            view[idx] = orig + h
            fp = float(fn().data)
            view[idx] = orig - h
            fm = float(fn().data)
        view[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            return GradCheckReport(name, float("inf"), checked, skipped, tolerance, True,
                                   "non-finite value under perturbation")
        fwd, bwd = (fp - f0) / h, (f0 - fm) / h
        if abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd), 1.0):
            skipped += 1
            continue
        numeric = (fp - fm) / (2 * h)
        a = float(analytic[k].reshape(-1)[idx])
        err = relative_error(a, numeric, floor)
        checked += 1
        if err > worst_err:
            worst_err, worst = err, (k, idx, a, numeric)
    return GradCheckReport(name, worst_err, checked, skipped, tolerance, worst=worst)


def layer_suite(n_coords: int = 120, h: float = 1e-5, tolerance: float = 1e-4,
                seed: int = 0) -> list[GradCheckReport]:
    """Gradient checks for every texture layer, a residual block and the FC head (float64)."""
    from .backbone import ResidualBlock
    from .ensemble import Head
    from .layers import EncodingLayer, FractalPooling, GlobalPooling, HistogramLayer
    from .tensor import default_dtype

    rng = np.random.default_rng(seed)
    reports = []
    with default_dtype(np.float64):
        cases = [
            ("histogram", HistogramLayer(8, rng, n_bins=3, reduced_channels=4, groups=4),
             (2, 8, 6, 6)),
            ("encoding", EncodingLayer(6, rng, n_codes=4, out_features=5), (3, 6, 3, 3)),
            ("fap", FractalPooling(n_bins=6, upsample=2), (2, 3, 9, 9)),
            ("gap", GlobalPooling(6, rng, out_features=5), (3, 6, 3, 3)),
            ("residual_block", ResidualBlock(4, 6, 2, rng), (2, 4, 6, 6)),
            ("fc_head", Head(10, 4, rng, depth=2, hidden=7), (3, 10)),
        ]
        for name, module, shape in cases:
            module.train()
            x = Tensor(rng.standard_normal(shape), requires_grad=True)
            if name == "fap":
                x.data = np.abs(x.data) + 0.1 * rng.standard_normal(shape)
            probe = None

            def loss():
                nonlocal probe
                out = module(x)
                if probe is None:
                    probe = np.random.default_rng(seed + 1).standard_normal(out.shape)
                return (out * probe).sum()

            leaves = [x] + module.parameters()
            reports.append(grad_check(loss, leaves, h=h, tolerance=tolerance,
                                      n_coords=n_coords, rng=rng, name=name))
    return reports
