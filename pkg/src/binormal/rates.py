"""Power-law fits on log-log data."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

MIN_SAMPLES = 8


class FitRefused(ValueError):
    pass


@dataclass
class RateFit:
    exponent: float
    constant: float
    residual: float
    window: tuple[float, float]
    n_samples: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def fit_decay_rate(x, y, min_decades: float = 1.0, min_samples: int = MIN_SAMPLES) -> RateFit:
    """Least-squares fit y ~ C x^p on log-log axes.

    Non-positive ``y`` are dropped before fitting.  The fit is refused when
    fewer than ``min_samples`` points survive or the surviving abscissae
    span less than ``min_decades`` decades.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (y > 0) & (x > 0) & np.isfinite(y)
    x, y = x[keep], y[keep]
    if len(x) < min_samples:
        raise FitRefused(f"only {len(x)} positive samples; need {min_samples}")
    span = np.log10(x.max() / x.min())
    if span < min_decades - 1e-12:
        raise FitRefused(f"window spans {span:.2f} decades; need {min_decades}")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - A @ coef
    return RateFit(float(coef[0]), float(np.exp(coef[1])), float(np.sqrt(np.mean(res ** 2))),
                   (float(x.min()), float(x.max())), len(x))
