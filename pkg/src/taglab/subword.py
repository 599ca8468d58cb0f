"""Byte-pair merge vocabularies over character sequences.

Learning is canonical BPE: every word starts as its character sequence and
the most frequent adjacent symbol pair (weighted by word frequency) is merged
repeatedly. Segmentation replays the merge list in learned order, so any word
seen at training time reproduces its training-time segmentation. Characters
never seen in training segment to UNK_PIECE, which is treated as an atomic
symbol and never participates in merges.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

from .errors import VocabError

UNK_PIECE = "<unk>"

# Learning stops once the best pair occurs fewer than this many times; a
# merge seen once carries no generalizable signal at desk scale.
MIN_PAIR_COUNT = 2


@dataclass(frozen=True)
class BpeVocab:
    """An ordered merge list plus the symbol inventory it induces."""

    merges: tuple[tuple[str, str], ...]
    pieces: frozenset[str]
    max_vocab: int

    def to_json(self) -> dict:
        return {
            "merges": [list(m) for m in self.merges],
            "max_vocab": self.max_vocab,
            "alphabet": sorted(p for p in self.pieces if p != UNK_PIECE and len(p) == 1),
        }

    def piece_list(self) -> list[str]:
        """Pieces in a stable order: sorted alphabet, then merge products in
        merge order, then UNK_PIECE last. Stable across save/load, so
        embedding tables indexed by piece id survive checkpointing."""
        ordered = sorted(p for p in self.pieces if p != UNK_PIECE and len(p) == 1)
        seen = set(ordered)
        for left, right in self.merges:
            product = left + right
            if product not in seen:
                ordered.append(product)
                seen.add(product)
        ordered.append(UNK_PIECE)
        return ordered


def learn_bpe(corpus, max_vocab: int) -> BpeVocab:
    """Learn up to `max_vocab` pieces (characters + merge products) from an
    iterable of surface strings.

    Ties between equally frequent pairs resolve to the lexicographically
    smallest (left, right). An empty corpus yields a vocab of just UNK_PIECE.
    """
    if max_vocab < 1:
        raise VocabError(f"max_vocab must be positive, got {max_vocab}")
    word_freq = Counter()
    for word in corpus:
        if word:
            word_freq[word] += 1
    if not word_freq:
        return BpeVocab((), frozenset({UNK_PIECE}), max_vocab)

    words = {w: tuple(w) for w in word_freq}
    pieces = {c for w in word_freq for c in w}
    merges: list[tuple[str, str]] = []

    while len(pieces) < max_vocab:
        pair_counts = Counter()
        for w, symbols in words.items():
            freq = word_freq[w]
            for left, right in zip(symbols, symbols[1:]):
                pair_counts[(left, right)] += freq
        best = None
        for pair, count in pair_counts.items():
            if count < MIN_PAIR_COUNT or pair[0] + pair[1] == UNK_PIECE:
                continue
            if best is None or (-count, pair) < (-best[1], best[0]):
                best = (pair, count)
        if best is None:
            break
        pair = best[0]
        merges.append(pair)
        pieces.add(pair[0] + pair[1])
        words = {w: _merge_once(symbols, pair) for w, symbols in words.items()}

    return BpeVocab(tuple(merges), frozenset(pieces | {UNK_PIECE}), max_vocab)


def _merge_once(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    """Replace every non-overlapping left-to-right occurrence of `pair`."""
    left, right = pair
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def segment_word(word: str, vocab: BpeVocab) -> list[str]:
    """Split `word` into pieces by replaying the merge list in order.

    Unknown characters become UNK_PIECE (atomic, never merged). Joining the
    output with the original character restored at each UNK_PIECE position
    reconstructs the word exactly.
    """
    if not word:
        return []
    symbols = tuple(c if c in vocab.pieces else UNK_PIECE for c in word)
    for pair in vocab.merges:
        if len(symbols) == 1:
            break
        symbols = _merge_once_skipping_unk(symbols, pair)
    return list(symbols)


def _merge_once_skipping_unk(symbols, pair):
    left, right = pair
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if (
            i + 1 < n
            and symbols[i] == left
            and symbols[i + 1] == right
            and symbols[i] != UNK_PIECE
            and symbols[i + 1] != UNK_PIECE
        ):
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def reconstruct(word: str, pieces: list[str]) -> str:
    """Join a segmentation back into its word, restoring the original
    character wherever the segmenter emitted UNK_PIECE."""
    out = []
    pos = 0
    for piece in pieces:
        if piece == UNK_PIECE:
            out.append(word[pos])
            pos += 1
        else:
            out.append(piece)
            pos += len(piece)
    return "".join(out)


def save_vocab(vocab: BpeVocab) -> str:
    return json.dumps(vocab.to_json(), ensure_ascii=False, indent=2) + "\n"


def load_vocab(text) -> BpeVocab:
    """Inverse of save_vocab. The alphabet key preserves characters that
    never took part in a merge; files without it fall back to the symbols
    reachable from the merge list alone."""
    try:
        doc = json.loads(text)
        merges = tuple((str(l), str(r)) for l, r in doc["merges"])
        max_vocab = int(doc["max_vocab"])
        alphabet = {str(c) for c in doc.get("alphabet", [])}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise VocabError(f"malformed BPE vocab file: {e}")
    pieces = set(alphabet)
    for left, right in merges:
        pieces.add(left)
        pieces.add(right)
        pieces.add(left + right)
    return BpeVocab(merges, frozenset(pieces | {UNK_PIECE}), max_vocab)
