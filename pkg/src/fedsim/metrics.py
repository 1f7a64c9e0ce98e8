"""Accuracy summaries (best mean-client / best combined) and fairness density."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KDE_GRID_SIZE = 512
KDE_BANDWIDTH_FLOOR = 1e-3
KDE_INTEGRAL_TOL = 1e-3


@dataclass(frozen=True)
class MetricsSummary:
    bmcta: float
    bmcta_round: int
    bta: float
    bta_round: int
    final_client_accuracies: tuple


@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def __post_init__(self) -> None:
        g = np.ascontiguousarray(np.asarray(self.grid, dtype=np.float64))
        d = np.ascontiguousarray(np.asarray(self.density, dtype=np.float64))
        if g.shape != d.shape or g.ndim != 1:
            raise ValueError("grid and density must be 1-D vectors of equal length")
        if np.any(d < 0):
            raise ValueError("density must be nonnegative")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        g.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "density", d)


def bmcta(records, client_weights=None) -> tuple:
    """Best over rounds of the mean client accuracy; earliest round on ties.

    The mean is unweighted by default; pass ``client_weights`` for the
    test-size-weighted sensitivity variant.
    """
    if not records:
        raise ValueError("no round records")
    if client_weights is not None:
        w = np.asarray(client_weights, dtype=np.float64)
        w = w / w.sum()
    best_val, best_round = -1.0, -1
    for rec in records:
        accs = np.asarray(rec.client_accuracies, dtype=np.float64)
        mean = float(accs @ w) if client_weights is not None else float(accs.mean())
        if mean > best_val:
            best_val, best_round = mean, rec.round
    return best_val, best_round


def bta(records, test_sizes) -> tuple:
    """Best over rounds of accuracy on the pooled test set; earliest on ties.

    Per-client correct counts are integers, so the pooled accuracy is exact.
    """
    if not records:
        raise ValueError("no round records")
    sizes = np.asarray(test_sizes, dtype=np.int64)
    if sizes.size == 0 or np.any(sizes <= 0):
        raise ValueError("test shard sizes must all be positive")
    total = int(sizes.sum())
    best_val, best_round = -1.0, -1
    for rec in records:
        accs = np.asarray(rec.client_accuracies, dtype=np.float64)
        if accs.size != sizes.size:
            raise ValueError("accuracy vector length does not match test sizes")
        correct = int(np.rint(accs * sizes).sum())
        combined = correct / total
        if combined > best_val:
            best_val, best_round = combined, rec.round
    return best_val, best_round


def kde_fairness(accuracies, grid_size: int = KDE_GRID_SIZE) -> DensityEstimate:
    """Gaussian KDE of client accuracies over [0, 1].

    Scott's-rule bandwidth (sample std * N^(-1/5), floored at 1e-3); mass
    outside [0, 1] is folded back by reflection at both boundaries, so the
    density integrates to 1.
    """
    x = np.asarray(accuracies, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need at least 2 accuracies")
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("accuracies must lie in [0, 1]")
    n = x.size
    h = max(float(x.std(ddof=1)) * n ** (-0.2), KDE_BANDWIDTH_FLOOR)
    grid = np.linspace(0.0, 1.0, grid_size)

    def gauss(u):
        return np.exp(-0.5 * (u / h) ** 2) / (h * np.sqrt(2.0 * np.pi))

    # Method of images for reflecting boundaries at 0 and 1: kernel centers
    # x + 2k and -x + 2k. |k| <= 2 leaves negligible mass even at the widest
    # possible bandwidth.
    density = np.zeros(grid_size)
    for k in range(-2, 3):
        density += gauss(grid[:, None] - (x + 2.0 * k)[None, :]).sum(axis=1)
        density += gauss(grid[:, None] - (-x + 2.0 * k)[None, :]).sum(axis=1)
    density /= n
    integral = float(np.trapezoid(density, grid))
    if not 0.5 < integral < 1.5:
        raise AssertionError(f"density integral {integral} far from 1")
    # The floored bandwidth can undersample a spike on a 512-point grid;
    # rescale so the emitted samples trapezoid-integrate to exactly 1.
    density /= integral
    return DensityEstimate(grid, density, h)


def summarize(records, test_sizes) -> MetricsSummary:
    best_mean, mean_round = bmcta(records)
    best_combined, combined_round = bta(records, test_sizes)
    return MetricsSummary(
        bmcta=best_mean,
        bmcta_round=mean_round,
        bta=best_combined,
        bta_round=combined_round,
        final_client_accuracies=tuple(float(a) for a in records[-1].client_accuracies),
    )


def density_to_csv(est: DensityEstimate) -> str:
    lines = ["grid,density"]
    for g, d in zip(est.grid, est.density):
        lines.append(f"{float(g)!r},{float(d)!r}")
    return "\n".join(lines) + "\n"
