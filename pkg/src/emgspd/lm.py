"""Backoff n-gram language models: ARPA I/O, Kneser-Ney training, rescoring.

Probabilities are stored as log10, as in ARPA files. Anything combined with
acoustic scores is converted to natural log first.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict

from .exceptions import FormatError, ParameterError

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SPACE = "<sp>"
LOG10_FLOOR = -99.0
LN10 = math.log(10.0)


class NGramModel:
    """Backoff model: ``probs[n][ngram] = log10 p`` and ``backoffs[ngram] = log10 bow``."""

    def __init__(self, order, probs=None, backoffs=None):
        if order < 1:
            raise ParameterError("n-gram order must be >= 1")
        self.order = order
        self.probs = probs if probs is not None else {n: {} for n in range(1, order + 1)}
        self.backoffs = backoffs if backoffs is not None else {}

    @property
    def vocabulary(self):
        return set(w for (w,) in self.probs[1])

    def logprob(self, context, token) -> float:
        """log10 p(token | context) by backoff recursion; OOV tokens get ``<unk>`` or -99."""
        context = tuple(context)[max(0, len(tuple(context)) - (self.order - 1)):]
        acc = 0.0
        while True:
            entry = self.probs[len(context) + 1].get(context + (token,))
            if entry is not None:
                return acc + entry
            if not context:
                unk = self.probs[1].get((UNK,))
                return acc + (unk if unk is not None else LOG10_FLOOR)
            acc += self.backoffs.get(context, 0.0)
            context = context[1:]

    def score_sequence(self, tokens, bos=True, eos=True) -> float:
        """Total log10 probability of ``tokens`` with optional sentence markers."""
        history = [BOS] if bos else []
        total = 0.0
        for tok in list(tokens) + ([EOS] if eos else []):
            total += self.logprob(history, tok)
            history.append(tok)
        return total

    def counts(self):
        return {n: len(self.probs[n]) for n in range(1, self.order + 1)}

    def natural_scorer(self, symbols=None):
        """Callable ``(prefix, symbol) -> ln p`` for beam search shallow fusion.

        ``symbols`` maps class ids to tokens; the history starts with ``<s>``.
        """
        def score(prefix, c):
            hist = [BOS] + [symbols[i] if symbols is not None else i for i in prefix]
            tok = symbols[c] if symbols is not None else c
            return LN10 * self.logprob(hist, tok)
        return score


# ---------------------------------------------------------------------------
# training


def train_ngram(corpus, order=4, discount=0.75, sentence_markers=True) -> NGramModel:
    """Interpolated Kneser-Ney with one fixed discount, stored in backoff form.

    The highest order uses raw counts; lower orders use continuation counts
    (number of distinct left neighbours) except for n-grams starting with
    ``<s>``, which have no left neighbour and keep raw counts. Unigrams are the
    undiscounted relative frequencies of those counts.

    Parameters
    ----------
    corpus : iterable of token sequences
    order : int
    discount : float in (0, 1]
    sentence_markers : bool
        Wrap each sequence in ``<s> ... </s>``.
    """
    sentences = [list(s) for s in corpus]
    if order < 1:
        raise ParameterError("order must be >= 1")
    if not 0 < discount <= 1:
        raise ParameterError("discount must lie in (0, 1]")
    if not any(sentences):
        raise ParameterError("cannot train a language model on an empty corpus")

    raw = [defaultdict(int) for _ in range(order + 1)]
    left = [defaultdict(set) for _ in range(order + 1)]
    for sent in sentences:
        toks = [BOS] + sent + [EOS] if sentence_markers else sent
        for i in range(len(toks)):
            for n in range(1, order + 1):
                if i + n > len(toks):
                    break
                gram = tuple(toks[i:i + n])
                if gram == (BOS,):
                    continue
                raw[n][gram] += 1
                if i > 0:
                    left[n][gram].add(toks[i - 1])

    def adjusted(n, gram):
        if n == order or gram[0] == BOS:
            return raw[n][gram]
        # sentence-initial n-grams without markers have no left neighbour
        return len(left[n][gram]) or raw[n][gram]

    # per order: context -> (total adjusted count, number of distinct followers)
    stats = [dict() for _ in range(order + 1)]
    for n in range(1, order + 1):
        acc = defaultdict(lambda: [0, 0])
        for gram in raw[n]:
            a = adjusted(n, gram)
            s = acc[gram[:-1]]
            s[0] += a
            s[1] += 1
        stats[n] = dict(acc)

    prob = [dict() for _ in range(order + 1)]  # natural-scale interpolated probabilities
    total1, _ = stats[1][()]
    for gram in raw[1]:
        prob[1][gram] = adjusted(1, gram) / total1

    def lower(n, context, token):
        # interpolated probability at order n (context length n - 1)
        while n > 1 and context not in stats[n]:
            n, context = n - 1, context[1:]
        if n == 1:
            return prob[1].get((token,), 0.0)
        gram = context + (token,)
        if gram in prob[n]:
            return prob[n][gram]
        total, types = stats[n][context]
        return discount * types / total * lower(n - 1, context[1:], token)

    gammas = {}
    for n in range(2, order + 1):
        for context, (total, types) in stats[n].items():
            gammas[context] = discount * types / total
        for gram in sorted(raw[n]):
            context = gram[:-1]
            total, _ = stats[n][context]
            a = adjusted(n, gram)
            prob[n][gram] = max(a - discount, 0.0) / total + gammas[context] * lower(
                n - 1, context[1:], gram[-1])

    model = NGramModel(order)
    for n in range(1, order + 1):
        for gram, p in prob[n].items():
            model.probs[n][gram] = math.log10(p)
    if sentence_markers:
        model.probs[1][(BOS,)] = LOG10_FLOOR
    for context, g in gammas.items():
        if context in model.probs[len(context)]:
            model.backoffs[context] = math.log10(g)
    return model


# ---------------------------------------------------------------------------
# ARPA files


def save_arpa(path, model: NGramModel):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n\\data\\\n")
        for n in range(1, model.order + 1):
            fh.write(f"ngram {n}={len(model.probs[n])}\n")
        for n in range(1, model.order + 1):
            fh.write(f"\n\\{n}-grams:\n")
            for gram in sorted(model.probs[n]):
                line = f"{model.probs[n][gram]!r}\t{' '.join(gram)}"
                if gram in model.backoffs:
                    line += f"\t{model.backoffs[gram]!r}"
                fh.write(line + "\n")
        fh.write("\n\\end\\\n")


_SECTION = re.compile(r"^\\(\d+)-grams:$")
_COUNT = re.compile(r"^ngram (\d+)\s*=\s*(\d+)$")


def load_arpa(path) -> NGramModel:
    """Parse an ARPA file; declared counts are checked against the entries read."""
    declared = {}
    probs, backoffs = {}, {}
    section = None
    seen_end = False
    section_line = {}
    lineno = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw_line in enumerate(fh, 1):
            line = raw_line.strip()
            if not line:
                continue
            if line == "\\data\\":
                section = "data"
                continue
            if line == "\\end\\":
                seen_end = True
                break
            m = _SECTION.match(line)
            if m:
                section = int(m.group(1))
                if section not in declared:
                    raise FormatError(f"section {section}-grams not declared in \\data\\", lineno)
                probs[section] = {}
                section_line[section] = lineno
                continue
            if section == "data":
                m = _COUNT.match(line)
                if not m:
                    raise FormatError(f"bad \\data\\ line {line!r}", lineno)
                declared[int(m.group(1))] = int(m.group(2))
                continue
            if not isinstance(section, int):
                raise FormatError(f"unexpected content {line!r}", lineno)
            parts = line.split()
            try:
                logp = float(parts[0])
                gram = tuple(parts[1:1 + section])
                if len(gram) != section:
                    raise ValueError
                bow = parts[1 + section:]
                if len(bow) > 1:
                    raise ValueError
            except (ValueError, IndexError):
                raise FormatError(f"malformed {section}-gram entry {line!r}", lineno) from None
            probs[section][gram] = logp
            if bow:
                try:
                    backoffs[gram] = float(bow[0])
                except ValueError:
                    raise FormatError(f"bad backoff weight {bow[0]!r}", lineno) from None
    if not seen_end:
        raise FormatError(f"{path}: missing \\end\\ marker", lineno)
    if not declared:
        raise FormatError(f"{path}: missing \\data\\ section")
    order = max(declared)
    for n, count in declared.items():
        got = len(probs.get(n, {}))
        if got != count:
            raise FormatError(f"{path}: \\data\\ declares {count} {n}-grams, found {got}",
                              section_line.get(n, lineno))
    return NGramModel(order, {n: probs.get(n, {}) for n in range(1, order + 1)}, backoffs)


# ---------------------------------------------------------------------------
# character-level rescoring


def text_to_chars(text):
    """Character tokens for a char LM; spaces become ``<sp>``."""
    return [SPACE if ch == " " else ch for ch in text]


def char_lm_rescore(hypotheses, lm: NGramModel, weight=1.0):
    """Re-rank ``(text, score)`` pairs by ``score + weight * ln p_lm(text)`` (stable sort)."""
    rescored = [(text, score + weight * LN10 * lm.score_sequence(text_to_chars(text)))
                for text, score in hypotheses]
    return sorted(rescored, key=lambda item: -item[1])
