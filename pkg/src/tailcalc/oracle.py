"""Independent ground truth: Monte-Carlo tails, brute-force moments,
grid convolution.

The Monte-Carlo sampler uses counter-based Philox streams keyed by
(seed, shard); shards are independent and reduced in fixed shard order, so
results are bit-identical for a given configuration no matter how many
workers run the shards.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product as _cartesian
from typing import Callable, Sequence

import numpy as np

from .laplace import MomentVector, Scalar
from .tails import DistributionSpec, UnsupportedFamilyError, tail_callable

Z99 = 2.5758293035489004  # two-sided 99% normal quantile


class SamplerError(ValueError):
    """No sampler is available for the requested family."""


def sampler(spec: DistributionSpec) -> Callable[[np.random.Generator, tuple], np.ndarray]:
    """Vectorised sampler for one innovation family."""
    p = spec.param
    if spec.family == "pareto":
        alpha = float(p("alpha"))
        return lambda gen, shape: gen.random(shape) ** (-1.0 / alpha) - 1.0
    if spec.family == "burr":
        beta, tau, gam = float(p("beta")), float(p("tau")), float(p("gamma"))
        return lambda gen, shape: (
            beta * (gen.random(shape) ** (-1.0 / gam) - 1.0)
        ) ** (1.0 / tau)
    if spec.family == "frechet":
        alpha = float(p("alpha"))
        return lambda gen, shape: (-np.log(gen.random(shape))) ** (-1.0 / alpha)
    if spec.family == "exponential":
        theta = float(p("theta"))
        return lambda gen, shape: gen.exponential(theta, shape)
    if spec.family == "student":
        alpha = float(p("alpha"))
        return lambda gen, shape: gen.standard_t(alpha, shape)
    if spec.family == "log-gamma":
        lam, alpha = float(p("lambda")), float(p("alpha"))
        return lambda gen, shape: np.exp(gen.gamma(lam, 1.0, shape) / alpha)
    raise SamplerError(f"no sampler for family {spec.family!r}")


@dataclass(frozen=True)
class McConfig:
    """Configuration of one Monte-Carlo run.

    thresholds must be ascending; `truncation` is the number of retained
    weights for infinite weight families; `shards` splits the sample count
    into independently seeded streams.
    """

    n_samples: int
    thresholds: tuple
    seed: int = 0
    truncation: int = 32
    shards: int = 256

    def __post_init__(self) -> None:
        th = tuple(float(t) for t in self.thresholds)
        object.__setattr__(self, "thresholds", th)
        if list(th) != sorted(th):
            raise ValueError("thresholds must be ascending")
        if self.n_samples <= 0 or self.shards <= 0:
            raise ValueError("need positive sample and shard counts")


@dataclass(frozen=True)
class McRow:
    threshold: float
    estimate: float
    ci_lo: float
    ci_hi: float
    hits: int


@dataclass(frozen=True)
class McResult:
    rows: tuple
    n_samples: int
    truncation_bias_bound: tuple

    def estimates(self) -> list[float]:
        return [r.estimate for r in self.rows]


def _shard_sizes(total: int, shards: int) -> list[int]:
    base = total // shards
    sizes = [base] * shards
    for i in range(total - base * shards):
        sizes[i] += 1
    return [s for s in sizes if s > 0]


def truncation_bias_bound(
    weights: Sequence[float],
    dropped: Sequence[float],
    spec: DistributionSpec,
    thresholds: Sequence[float],
    slack: float = 0.5,
) -> list[float]:
    """Bound P{sum of dropped terms > slack * t} <= sum_i Fbar(slack t / c_i)."""
    if not dropped:
        return [0.0 for _ in thresholds]
    fbar = tail_callable(spec)
    out = []
    for t in thresholds:
        out.append(float(sum(fbar(slack * t / c) for c in dropped if c > 0)))
    return out


def mc_tail(w, spec: DistributionSpec, cfg: McConfig) -> McResult:
    """Monte-Carlo estimates of P{sum_i c_i X_i > t} with 99% binomial CIs.

    Deterministic for fixed cfg: per-shard Philox streams keyed by
    (seed, shard index), reduced in shard order.  TAILCALC_THREADS > 1
    runs shards in a thread pool without changing the result.
    """
    values = [float(v) for v in w.truncated_values(cfg.truncation)]
    if w.kind == "ar1":
        full = [float(w.a) ** i for i in range(cfg.truncation + 64)]
        dropped = full[cfg.truncation:]
    else:
        dropped = []
    weights = np.array(values)
    draw = sampler(spec)
    thresholds = np.array(cfg.thresholds)

    sizes = _shard_sizes(cfg.n_samples, cfg.shards)

    def run_shard(args) -> np.ndarray:
        idx, size = args
        gen = np.random.Generator(np.random.Philox(key=[cfg.seed, idx]))
        # Chunk within the shard to bound memory; the stream order is fixed.
        counts = np.zeros(len(thresholds), dtype=np.int64)
        chunk = max(1, min(size, (1 << 22) // max(len(weights), 1)))
        done = 0
        while done < size:
            n = min(chunk, size - done)
            x = draw(gen, (n, len(weights)))
            sums = x @ weights
            counts += (sums[None, :] > thresholds[:, None]).sum(axis=1)
            done += n
        return counts

    workers = int(os.environ.get("TAILCALC_THREADS", "1"))
    jobs = list(enumerate(sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            shard_counts = list(pool.map(run_shard, jobs))
    else:
        shard_counts = [run_shard(j) for j in jobs]

    total = np.zeros(len(thresholds), dtype=np.int64)
    for c in shard_counts:  # fixed shard order
        total += c

    n = cfg.n_samples
    rows = []
    for t, hits in zip(cfg.thresholds, total.tolist()):
        if hits == 0:
            raise SamplerError(f"degenerate CI: zero hits at threshold {t}")
        p = hits / n
        half = Z99 * math.sqrt(p * (1.0 - p) / n)
        rows.append(McRow(t, p, max(p - half, 0.0), min(p + half, 1.0), hits))
    bias = truncation_bias_bound(values, dropped, spec, cfg.thresholds)
    return McResult(tuple(rows), n, tuple(bias))


# ---------------------------------------------------------------------------
# Brute-force moments of finite weighted sums


def _compositions(total: int, parts: int):
    """All tuples of nonnegative ints of length `parts` summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


def brute_moments(weights: Sequence, fm: MomentVector, j: int) -> Scalar:
    """E (sum_i c_i X_i)^j by multinomial expansion over independent factors."""
    if j > fm.m:
        raise ValueError("not enough innovation moments")
    n = len(weights)
    total: Scalar = 0
    for comp in _compositions(j, n):
        coeff = math.factorial(j)
        for k in comp:
            coeff //= math.factorial(k)
        term: Scalar = Fraction(coeff, 1)
        for c, k in zip(weights, comp):
            if k:
                term = term * c ** k * fm.mu[k]
        total = total + term
    return total


# ---------------------------------------------------------------------------
# Grid Stieltjes convolution


@dataclass(frozen=True)
class ConvolutionGrid:
    """Tail of a nonnegative law tabulated on a uniform grid over [0, T]."""

    t: np.ndarray
    tail: np.ndarray

    def __post_init__(self) -> None:
        if self.t.shape != self.tail.shape:
            raise ValueError("grid and tail must have the same shape")
        h = np.diff(self.t)
        if h.size and not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
            raise ValueError("grid must be uniform")

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])


def numeric_convolution(f1: ConvolutionGrid, f2: ConvolutionGrid) -> ConvolutionGrid:
    """Tail grid of X1 + X2 (independent, nonnegative) by trapezoid-rule
    Stieltjes convolution; the quadrature error is O(h^2).

    Uses tail(X1+X2)(t) = tail1(t) + int_0^t tail2(t-x) d F1(x) with the
    density of F1 obtained by central finite differences of its tail.
    """
    if f1.t.shape != f2.t.shape or abs(f1.h - f2.h) > 1e-12 * f1.h:
        raise ValueError("grid mismatch")
    h = f1.h
    n = f1.t.size
    dens1 = -np.gradient(f1.tail, h, edge_order=2)
    # trapezoid weights for int_0^{t_k} tail2(t_k - x) dens1(x) dx
    rev = f2.tail
    out = np.empty(n)
    kernel = dens1.copy()
    # direct O(n^2) loop in vectorised form: for each k use dot of slices
    for k in range(n):
        if k == 0:
            out[0] = f1.tail[0]
            continue
        seg = kernel[: k + 1] * rev[k::-1]
        integral = h * (seg.sum() - 0.5 * (seg[0] + seg[-1]))
        out[k] = f1.tail[k] + integral
    return ConvolutionGrid(f1.t, out)


def grid_from_spec(spec: DistributionSpec, t_max: float, h: float) -> ConvolutionGrid:
    fbar = tail_callable(spec)
    t = np.arange(0.0, t_max + h / 2, h)
    return ConvolutionGrid(t, np.array([fbar(x) for x in t]))


def point_mass_grid(t_max: float, h: float) -> ConvolutionGrid:
    """Tail grid of the point mass at 0."""
    t = np.arange(0.0, t_max + h / 2, h)
    return ConvolutionGrid(t, np.zeros_like(t))
