"""Edit-distance error rates, chance rates and power-law scaling fits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError

UNITS = ("phoneme", "word", "char")


@dataclass(frozen=True)
class ErrorReport:
    substitutions: int
    insertions: int
    deletions: int
    reference_length: int
    rate: float
    empty_reference: bool = False

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions


def levenshtein(ref, hyp) -> ErrorReport:
    """Unit-cost alignment of ``hyp`` against ``ref`` with its S/I/D breakdown.

    Among the minimal-cost alignments the one with the fewest insertions plus
    deletions is reported (substitution preferred over an insert/delete pair).
    That choice is unique, so swapping the arguments swaps I and D exactly. An
    empty reference is counted with length 1 and flagged.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    # lexicographic cost: total edits, then indels among them
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    g = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = g[:, 0] = np.arange(n + 1)
    d[0, :] = g[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        r = ref[i - 1]
        for j in range(1, m + 1):
            best = (d[i - 1, j - 1] + (r != hyp[j - 1]), g[i - 1, j - 1])
            best = min(best, (d[i - 1, j] + 1, g[i - 1, j] + 1), (d[i, j - 1] + 1, g[i, j - 1] + 1))
            d[i, j], g[i, j] = best
    dist, indels = int(d[n, m]), int(g[n, m])
    I = (indels + m - n) // 2
    D = indels - I
    S = dist - indels
    return ErrorReport(S, I, D, n, dist / max(n, 1), n == 0)


def tokenize(text, unit):
    """Split a transcript into scoring units."""
    if unit not in UNITS:
        raise ParameterError(f"unit must be one of {UNITS}, got {unit!r}")
    if not isinstance(text, str):
        return list(text)
    if unit == "char":
        return list(" ".join(text.split()))
    return text.split()


def corpus_rates(refs, hyps, unit="word", per_sentence_mean=False):
    """Pooled error rate sum(S+I+D) / sum(len(ref)), or the mean of per-sentence rates.

    Returns ``(rate, reports)``.
    """
    refs, hyps = list(refs), list(hyps)
    if len(refs) != len(hyps):
        raise ParameterError(f"{len(refs)} references but {len(hyps)} hypotheses")
    reports = [levenshtein(tokenize(r, unit), tokenize(h, unit)) for r, h in zip(refs, hyps)]
    if not reports:
        return 0.0, reports
    if per_sentence_mean:
        return float(np.mean([rep.rate for rep in reports])), reports
    errors = sum(rep.errors for rep in reports)
    length = sum(max(rep.reference_length, 1) if rep.empty_reference else rep.reference_length
                 for rep in reports)
    return errors / length, reports


def chance_rate(inventory_size, ref_lengths, trials=10_000, seed=0) -> float:
    """Monte Carlo corpus error rate of uniform random hypotheses of matched length.

    Each trial draws a random reference and an independent random hypothesis of
    the same length for every entry of ``ref_lengths`` and pools the errors.
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    if inventory_size < 1:
        raise ParameterError("inventory_size must be >= 1")
    lengths = [int(n) for n in ref_lengths]
    if not lengths or sum(lengths) == 0:
        raise ParameterError("need at least one non-empty reference length")
    rng = np.random.default_rng(seed)
    errors = np.zeros(trials, dtype=np.int64)
    for n in lengths:
        ref = rng.integers(0, inventory_size, (trials, n))
        hyp = rng.integers(0, inventory_size, (trials, n))
        errors += _batch_distance(ref, hyp)
    return float(errors.mean() / sum(lengths))


def _batch_distance(a, b):
    """Edit distances between row pairs of two (trials, n) / (trials, m) arrays."""
    trials, m = b.shape
    prev = np.tile(np.arange(m + 1), (trials, 1))
    for i in range(a.shape[1]):
        cur = np.empty_like(prev)
        cur[:, 0] = i + 1
        sub = prev[:, :-1] + (a[:, i:i + 1] != b)
        best = np.minimum(sub, prev[:, 1:] + 1)
        for j in range(m):
            cur[:, j + 1] = np.minimum(best[:, j], cur[:, j] + 1)
        prev = cur
    return prev[:, -1]


@dataclass(frozen=True)
class ScalingFit:
    alpha: float
    beta: float
    r_squared: float
    points: tuple

    def predict(self, n):
        return self.alpha / np.power(n, self.beta)


def fit_scaling(points) -> ScalingFit:
    """Least-squares fit of E = alpha / N**beta on (ln N, ln E)."""
    pts = [(float(n), float(e)) for n, e in points]
    if len(pts) < 2:
        raise ParameterError("need at least 2 points")
    if any(not (n > 0 and e > 0) for n, e in pts):
        raise ParameterError("scaling fit needs N > 0 and E > 0")
    x = np.log([n for n, _ in pts])
    y = np.log([e for _, e in pts])
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        raise ParameterError("all N are equal; slope is undefined")
    slope = float(((x - xm) * (y - ym)).sum()) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    syy = float(((y - ym) ** 2).sum())
    ss_res = float((resid**2).sum())
    # a flat law is reproduced exactly; call that a perfect fit
    r2 = 1.0 if syy == 0.0 else 1.0 - ss_res / syy
    return ScalingFit(math.exp(intercept), -slope, r2, tuple(pts))


def paired_permutation_test(a, b, n_permutations=10_000, seed=0) -> float:
    """Two-sided p-value for mean(a - b) != 0 by random sign flips of paired differences."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if diff.ndim != 1 or diff.size == 0:
        raise ParameterError("need two equal-length non-empty score vectors")
    observed = abs(diff.mean())
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=(n_permutations, diff.size))
    means = np.abs((signs * diff).mean(axis=1))
    return float((1 + np.sum(means >= observed - 1e-12)) / (n_permutations + 1))
