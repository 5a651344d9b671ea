"""Connectionist temporal classification: loss, gradient and decoders.

Lattices are (T, K) arrays of natural-log probabilities where one column is
the blank (by convention the last one, ``K - 1``). All recursions run in the
log domain.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np
from scipy.special import logsumexp

from .exceptions import InfeasibleAlignmentError, ParameterError

NEG_INF = -np.inf


def _logadd(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def min_frames(labels) -> int:
    """Shortest lattice that can emit ``labels``: one frame each plus a blank between repeats."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _extended(labels, blank):
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    # skip[s]: state s may be entered from s - 2 (label differs from the previous label)
    skip = np.zeros(len(ext), dtype=bool)
    skip[3::2] = ext[3::2] != ext[1:-2:2]
    return ext, skip


def ctc_forward(log_probs, labels, blank=None):
    """Return (log_alpha, log_likelihood) with alpha including frame t's emission."""
    lp = np.asarray(log_probs, dtype=np.float64)
    T, K = lp.shape
    blank = K - 1 if blank is None else blank
    ext, skip = _extended(labels, blank)
    S = len(ext)
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = lp[0, blank]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    emit = lp[:, ext]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]
    loglik = alpha[-1, -1] if S == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    return alpha, loglik


def ctc_backward(log_probs, labels, blank=None):
    """Log beta, including frame t's emission."""
    lp = np.asarray(log_probs, dtype=np.float64)
    T, K = lp.shape
    blank = K - 1 if blank is None else blank
    ext, skip = _extended(labels, blank)
    S = len(ext)
    beta = np.full((T, S), NEG_INF)
    emit = lp[:, ext]
    beta[-1, -1] = emit[-1, -1]
    if S > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]
    return beta


def ctc_loss(log_probs, labels, blank=None):
    """Negative log-likelihood of ``labels`` and its gradient w.r.t. ``log_probs``.

    Parameters
    ----------
    log_probs : array (T, K)
        Frame log-probabilities. Rows need not be normalized; the gradient is
        taken treating each entry as a free variable.
    labels : sequence of int
        Target ids, none equal to ``blank``.
    blank : int, optional
        Blank column, default ``K - 1``.

    Returns
    -------
    loss : float
    grad : array (T, K)
        ``-gamma``, the negated per-frame label occupancy posteriors.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2:
        raise ParameterError("lattice must be 2-D (frames, classes)")
    T, K = lp.shape
    blank = K - 1 if blank is None else blank
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if np.any(labels == blank) or np.any(labels < 0) or np.any(labels >= K):
        raise ParameterError("labels must be non-blank class ids")
    need = min_frames(labels)
    if T < max(need, 1):
        raise InfeasibleAlignmentError(f"{T} frames cannot emit {len(labels)} labels (need {need})")
    alpha, loglik = ctc_forward(lp, labels, blank)
    if loglik == NEG_INF:
        raise InfeasibleAlignmentError("every alignment has zero probability")
    beta = ctc_backward(lp, labels, blank)
    ext, _ = _extended(labels, blank)
    emit = lp[:, ext]
    # alpha and beta both include the frame's emission; impossible cells stay at zero
    with np.errstate(invalid="ignore"):
        occupancy = np.where(np.isfinite(emit), np.exp(alpha + beta - emit - loglik), 0.0)
    grad = np.zeros_like(lp)
    np.add.at(grad.T, ext, -occupancy.T)
    return float(-loglik), grad


def greedy_decode(log_probs, blank=None) -> list:
    """Best path: frame argmax (lowest index on ties), merge repeats, drop blanks."""
    lp = np.asarray(log_probs)
    blank = lp.shape[1] - 1 if blank is None else blank
    best = np.argmax(lp, axis=1)
    out, prev = [], None
    for k in best:
        if k != prev and k != blank:
            out.append(int(k))
        prev = k
    return out


def beam_decode(log_probs, width=50, blank=None, lm=None, lm_weight=1.0, n_best=None):
    """CTC prefix beam search.

    Each prefix keeps separate blank-ending and label-ending probabilities so
    that alignments collapsing to the same prefix are summed. With ``lm``, a
    callable ``lm(prefix, symbol) -> natural log prob``, each emitted symbol
    adds ``lm_weight * lm(prefix, symbol)`` (shallow fusion).

    Returns a list of ``(labels, score)`` best first; ties go to the lower
    class-index sequence, then the shorter prefix.
    """
    if width < 1:
        raise ParameterError("beam width must be >= 1")
    lp = np.asarray(log_probs, dtype=np.float64)
    T, K = lp.shape
    blank = K - 1 if blank is None else blank
    symbols = [k for k in range(K) if k != blank]
    lm_cache = {}

    def lm_term(prefix, c):
        if lm is None:
            return 0.0
        key = (prefix, c)
        if key not in lm_cache:
            lm_cache[key] = lm_weight * lm(prefix, c)
        return lm_cache[key]

    beams = {(): (0.0, NEG_INF)}  # prefix -> (log p ending in blank, log p ending in label)
    for t in range(T):
        row = lp[t].tolist()
        nb = defaultdict(lambda: [NEG_INF, NEG_INF])
        for prefix, (pb, pnb) in beams.items():
            total = _logadd(pb, pnb)
            entry = nb[prefix]
            entry[0] = _logadd(entry[0], total + row[blank])
            last = prefix[-1] if prefix else None
            if last is not None:
                entry[1] = _logadd(entry[1], pnb + row[last])
            for c in symbols:
                base = pb if c == last else total
                score = base + row[c]
                if score == NEG_INF:
                    continue
                if lm is not None:
                    score += lm_term(prefix, c)
                e = nb[prefix + (c,)]
                e[1] = _logadd(e[1], score)
        ranked = sorted(nb.items(), key=lambda kv: (-_logadd(*kv[1]), kv[0]))
        beams = {p: tuple(v) for p, v in ranked[:width]}
    ranked = sorted(((list(p), _logadd(*v)) for p, v in beams.items()),
                    key=lambda item: (-item[1], item[0]))
    return ranked if n_best is None else ranked[:n_best]


def log_softmax(logits, axis=-1):
    return logits - logsumexp(logits, axis=axis, keepdims=True)
