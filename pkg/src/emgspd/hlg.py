"""Lexicon- and grammar-constrained CTC decoding.

The CTC topology (H), the pronunciation lexicon (L) and an n-gram grammar (G)
are composed on the fly rather than materialized as one automaton. A
hypothesis is keyed by its completed words, its position in the lexicon trie
and its last emitted phoneme; like CTC prefix search it keeps separate
probabilities for ending in blank and ending in a label, so all alignments of
the same phoneme string are summed. Pruning keeps the ``width`` best
hypotheses per frame.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .ctc import NEG_INF, _logadd
from .exceptions import ParameterError
from .io import PhonemeInventory
from .lm import BOS, EOS, LN10, NGramModel

ROOT = 0


class LexiconTrie:
    """Phoneme-labelled prefix tree; terminal nodes carry the words they spell."""

    def __init__(self, lexicon: dict, inventory: PhonemeInventory):
        self.children = [{}]
        self.words = [[]]
        self.phoneme = [None]
        for word, prons in lexicon.items():
            for pron in prons:
                if not pron:
                    raise ParameterError(f"word {word!r} has an empty pronunciation")
                node = ROOT
                for ph in pron:
                    k = inventory.index(ph)
                    nxt = self.children[node].get(k)
                    if nxt is None:
                        nxt = len(self.children)
                        self.children.append({})
                        self.words.append([])
                        self.phoneme.append(k)
                        self.children[node][k] = nxt
                    node = nxt
                if word not in self.words[node]:
                    self.words[node].append(word)

    def __len__(self):
        return len(self.children)

    def lookup(self, ids):
        """Words spelled exactly by phoneme ids, or an empty list."""
        node = ROOT
        for k in ids:
            node = self.children[node].get(k)
            if node is None:
                return []
        return list(self.words[node])


@dataclass
class DecodingGraph:
    """H, L and G plus composition weights.

    ``lm=None`` means a uniform grammar (no LM term). ``silence`` names an
    optional phoneme that may repeat freely between words.
    """

    inventory: PhonemeInventory
    trie: LexiconTrie
    lm: NGramModel | None = None
    lm_weight: float = 1.0
    word_insertion_penalty: float = 0.0
    silence: str | None = None
    _lm_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, lexicon, inventory, lm=None, lm_weight=1.0, word_insertion_penalty=0.0,
              silence=None):
        return cls(inventory, LexiconTrie(lexicon, inventory), lm, lm_weight,
                   word_insertion_penalty, silence)

    @property
    def blank(self):
        return self.inventory.blank_id

    def word_score(self, history, word) -> float:
        """Weighted natural-log LM score of ``word`` after ``history`` plus insertion penalty."""
        key = (history, word)
        if key not in self._lm_cache:
            lm = 0.0
            if self.lm is not None:
                lm = self.lm_weight * LN10 * self.lm.logprob((BOS,) + history, word)
            self._lm_cache[key] = lm + self.word_insertion_penalty
        return self._lm_cache[key]

    def final_score(self, history) -> float:
        if self.lm is None:
            return 0.0
        return self.lm_weight * LN10 * self.lm.logprob((BOS,) + history, EOS)


@dataclass
class WordHypothesis:
    words: list
    score: float
    acoustic: float


@dataclass
class DecodeResult:
    words: list
    score: float
    empty: bool
    n_best: list = field(default_factory=list)


def hlg_decode(log_probs, graph: DecodingGraph, width=50, n_best=1) -> DecodeResult:
    """Frame-synchronous beam search over the composed H, L, G search space.

    score = ln p_ctc(phonemes | lattice) + lm_weight * ln p_lm(words, incl. </s>)
            + word_insertion_penalty * len(words)

    Only hypotheses ending on a word boundary with at least one word are
    complete; if none survives, ``empty`` is set and ``words`` is ``[]``.
    """
    if width < 1:
        raise ParameterError("beam width must be >= 1")
    lp = np.asarray(log_probs, dtype=np.float64)
    T, K = lp.shape
    if K != graph.inventory.n_classes:
        raise ParameterError(f"lattice has {K} classes, graph expects {graph.inventory.n_classes}")
    blank = graph.blank
    children = graph.trie.children
    node_words = graph.trie.words
    sil = graph.inventory.index(graph.silence) if graph.silence is not None else None

    # key: (words tuple, trie node, last phoneme id or None) -> [log p blank-end, log p label-end]
    beams = {((), ROOT, None): [0.0, NEG_INF]}
    lm_part = {(): 0.0}

    for t in range(T):
        row = lp[t].tolist()
        nb = defaultdict(lambda: [NEG_INF, NEG_INF])
        for key, (pb, pnb) in beams.items():
            words, node, last = key
            total = _logadd(pb, pnb)
            e = nb[key]
            e[0] = _logadd(e[0], total + row[blank])
            if last is not None:
                e[1] = _logadd(e[1], pnb + row[last])
            steps = list(children[node].items())
            if sil is not None and node == ROOT:
                steps.append((sil, ROOT))
            for c, child in steps:
                score = (pb if c == last else total) + row[c]
                if score == NEG_INF:
                    continue
                if child != ROOT and children[child]:
                    inner = nb[(words, child, c)]
                    inner[1] = _logadd(inner[1], score)
                if child == ROOT:  # silence self-loop at a word boundary
                    s = nb[(words, ROOT, c)]
                    s[1] = _logadd(s[1], score)
                    continue
                for w in node_words[child]:
                    new_words = words + (w,)
                    if new_words not in lm_part:
                        lm_part[new_words] = lm_part[words] + graph.word_score(words, w)
                    done = nb[(new_words, ROOT, c)]
                    done[1] = _logadd(done[1], score)
        ranked = sorted(nb.items(),
                        key=lambda kv: (-(_logadd(*kv[1]) + lm_part[kv[0][0]]), kv[0][0],
                                        kv[0][1], -1 if kv[0][2] is None else kv[0][2]))
        beams = {k: v for k, v in ranked[:width]}

    finals = {}
    for (words, node, _last), (pb, pnb) in beams.items():
        if node != ROOT or not words:
            continue
        ac = _logadd(pb, pnb)
        # same words reached through different last phonemes (pronunciations) are summed
        prev = finals.get(words, NEG_INF)
        finals[words] = _logadd(prev, ac)
    hyps = [WordHypothesis(list(w), ac + lm_part[w] + graph.final_score(w), ac)
            for w, ac in finals.items()]
    hyps.sort(key=lambda h: (-h.score, h.words))
    if not hyps:
        return DecodeResult([], -math.inf, True, [])
    return DecodeResult(hyps[0].words, hyps[0].score, False, hyps[:n_best])
