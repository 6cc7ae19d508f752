"""Empirical CDFs, the two-sample Kolmogorov-Smirnov test and Fleiss' kappa."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

# exact permutation p-values up to this many n*m lattice cells
EXACT_MAX_CELLS = 10_000


@dataclass(frozen=True)
class Ecdf:
    """Right-continuous step function ``F(x) = #(samples <= x) / n``."""

    values: np.ndarray

    @classmethod
    def of(cls, samples: Sequence[float]) -> "Ecdf":
        arr = np.sort(np.asarray(samples, dtype=float))
        if arr.size == 0:
            raise ValueError("ECDF of an empty sample")
        return cls(arr)

    def __call__(self, x):
        return np.searchsorted(self.values, x, side="right") / self.values.size


def ecdf_export(samples: Sequence[float], grid: Sequence[float] | None = None) -> list[tuple[float, float]]:
    """``(x, F(x))`` rows; the default grid is the distinct sample values."""
    f = Ecdf.of(samples)
    xs = np.unique(f.values) if grid is None else np.asarray(grid, dtype=float)
    return [(float(x), float(y)) for x, y in zip(xs, f(xs))]


def write_ecdf_csv(rows: list[tuple[float, float]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "F"])
        for x, y in rows:
            w.writerow([repr(x), repr(y)])


@dataclass(frozen=True)
class KsResult:
    d: float
    p: float
    n: int
    m: int
    method: str = "asymptotic"

    def to_dict(self) -> dict:
        return {"d": self.d, "p": self.p, "n": self.n, "m": self.m, "method": self.method}


def kolmogorov_sf(lam: float, tol: float = 1e-12) -> float:
    """``2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lam^2)``, clamped to [0, 1]."""
    # below 0.17 the tail 1 - Q is < 1e-17, i.e. Q == 1.0 in double precision
    if lam < 0.17:
        return 1.0
    total, k = 0.0, 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < tol:
            break
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def ks_asymptotic_p(d: float, n: int, m: int) -> float:
    """Stephens-corrected asymptotic p-value."""
    ne = n * m / (n + m)
    root = math.sqrt(ne)
    return kolmogorov_sf((root + 0.12 + 0.11 / root) * d)


def _gaps(a: np.ndarray, b: np.ndarray):
    """Integer lattice gaps ``|i*m - j*n|`` at every distinct pooled value,
    and the (i, j) checkpoint coordinates."""
    pooled = np.unique(np.concatenate([a, b]))
    i = np.searchsorted(a, pooled, side="right")
    j = np.searchsorted(b, pooled, side="right")
    return np.abs(i * b.size - j * a.size), i, j


def _exact_p(gap_obs: int, i_chk: np.ndarray, j_chk: np.ndarray, n: int, m: int) -> float:
    """P(D >= d_obs) under random relabelling, by lattice-path counting.

    A path from (0, 0) to (n, m) avoids the rejection region when every
    checkpoint (the end of a block of tied pooled values) has
    ``|i*m - j*n| < gap_obs``. Ties are honoured by checking only there.
    """
    check = np.zeros(n + m + 1, dtype=bool)
    check[(i_chk + j_chk)] = True
    # number of paths reaching (i, j) that stay inside the acceptance band
    row = [0] * (m + 1)
    row[0] = 1
    for j in range(1, m + 1):
        row[j] = row[j - 1] if not (check[j] and j * n >= gap_obs) else 0
    for i in range(1, n + 1):
        inside = not check[i] or i * m < gap_obs
        row[0] = row[0] if inside else 0
        for j in range(1, m + 1):
            s = i + j
            if check[s] and abs(i * m - j * n) >= gap_obs:
                row[j] = 0
            else:
                row[j] = row[j] + row[j - 1]
    inside_paths = row[m]
    total = math.comb(n + m, n)
    return (total - inside_paths) / total


def ks_two_sample(a: Sequence[float], b: Sequence[float], method: str = "auto") -> KsResult:
    """Two-sample KS statistic and p-value.

    ``d`` is exact (both ECDFs evaluated at every distinct pooled value).
    ``method="exact"`` counts relabelling paths and so equals the permutation
    p-value; ``"asymptotic"`` uses the Stephens-corrected Kolmogorov series;
    ``"auto"`` is exact while ``n*m`` is at most ``EXACT_MAX_CELLS``.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    n, m = a.size, b.size
    if n == 0 or m == 0:
        raise ValueError("KS test needs two non-empty samples")
    gaps, i_chk, j_chk = _gaps(a, b)
    gap_obs = int(gaps.max())
    d = gap_obs / (n * m)
    if method == "auto":
        method = "exact" if n * m <= EXACT_MAX_CELLS else "asymptotic"
    if method == "exact":
        p = 1.0 if gap_obs == 0 else _exact_p(gap_obs, i_chk, j_chk, n, m)
    elif method == "asymptotic":
        p = ks_asymptotic_p(d, n, m)
    else:
        raise ValueError(f"unknown KS method {method!r}")
    return KsResult(d=d, p=min(1.0, max(0.0, p)), n=n, m=m, method=method)


# ---------------------------------------------------------------------------
# Fleiss' kappa

def ratings_matrix(assignments: dict[str, list[str]], categories: Sequence[str]) -> np.ndarray:
    """Items x categories count matrix from per-item lists of rater labels."""
    col = {c: k for k, c in enumerate(categories)}
    out = np.zeros((len(assignments), len(categories)), dtype=int)
    for r, labels in enumerate(assignments.values()):
        for lab in labels:
            out[r, col[lab]] += 1
    return out


def fleiss_kappa(ratings) -> float | None:
    """Fleiss' kappa of an items x categories count matrix.

    Every row must sum to the same number of raters r >= 2. Returns ``None``
    when expected agreement is 1 (all ratings in one category), where kappa
    is undefined.
    """
    m = np.asarray(ratings)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ValueError("ratings must be a non-empty items x categories matrix")
    if not np.issubdtype(m.dtype, np.integer):
        if not np.all(m == np.round(m)):
            raise ValueError("ratings must be integer counts")
        m = m.astype(np.int64)
    if (m < 0).any():
        raise ValueError("ratings must be non-negative")
    r_per_item = m.sum(axis=1)
    r = int(r_per_item[0])
    if not (r_per_item == r).all():
        raise ValueError("every item needs the same number of ratings")
    if r < 2:
        raise ValueError("Fleiss' kappa needs at least two raters per item")
    n_items = m.shape[0]
    p_j = m.sum(axis=0) / (n_items * r)
    p_i = ((m * m).sum(axis=1) - r) / (r * (r - 1))
    p_bar = p_i.mean()
    p_e = float((p_j * p_j).sum())
    if p_e == 1.0:
        return None
    return float((p_bar - p_e) / (1.0 - p_e))
