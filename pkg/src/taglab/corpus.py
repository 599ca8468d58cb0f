"""Tagged-corpus I/O in the two-column CoNLL style, plus splitting and stats.

File format: one token per line as ``surface<TAB>tag``, a blank line between
sentences, LF endings (CRLF accepted on input), and a single trailing newline
after the last token line. Parsing and writing round-trip byte-exactly.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

from .errors import ParseError
from .tagset import UNK_TAG, TagSet

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Token:
    surface: str
    tag: str

    def __post_init__(self):
        if not self.surface:
            raise ParseError("token surface must be non-empty")
        if any(c in self.surface for c in "\t\r\n"):
            raise ParseError(f"token surface {self.surface!r} contains "
                             "tab/newline characters")


@dataclass(frozen=True)
class TaggedSentence:
    tokens: tuple[Token, ...]

    def __post_init__(self):
        if not self.tokens:
            raise ParseError("a sentence must contain at least one token")

    def __len__(self) -> int:
        return len(self.tokens)

    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    def tags(self) -> list[str]:
        return [t.tag for t in self.tokens]


@dataclass(frozen=True)
class Dataset:
    sentences: tuple[TaggedSentence, ...]
    name: str = ""

    def __len__(self) -> int:
        return len(self.sentences)

    def token_count(self) -> int:
        return sum(len(s) for s in self.sentences)


def sentence(pairs) -> TaggedSentence:
    """Convenience constructor from (surface, tag) pairs."""
    return TaggedSentence(tuple(Token(s, t) for s, t in pairs))


@dataclass(frozen=True)
class ParseReport:
    """Counts collected while parsing in permissive mode."""

    unknown_tag_tokens: int
    unknown_tags: dict[str, int]


@dataclass(frozen=True)
class ParseResult:
    dataset: Dataset
    report: ParseReport


def parse_conll_detailed(
    data, tagset: TagSet, mode: str = "strict", name: str = ""
) -> ParseResult:
    """Parse two-column text into a Dataset plus a permissive-mode report.

    In strict mode a tag outside `tagset` is an error naming the line; in
    permissive mode it becomes UNK_TAG and is counted in the report. Blank
    lines close sentences; runs of blank lines produce no empty sentences.
    """
    if mode not in ("strict", "permissive"):
        raise ValueError(f"unknown parse mode {mode!r}")
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"input is not valid UTF-8: {e}")
    else:
        text = data

    sentences: list[TaggedSentence] = []
    current: list[Token] = []
    unknown = Counter()

    def close():
        if current:
            sentences.append(TaggedSentence(tuple(current)))
            current.clear()

    for lineno, line in enumerate(text.split("\n"), start=1):
        if line.endswith("\r"):
            line = line[:-1]
        if line == "":
            close()
            continue
        columns = line.split("\t")
        if len(columns) != 2:
            raise ParseError(
                f"line {lineno}: expected 2 tab-separated columns, "
                f"got {len(columns)}",
                line=lineno,
            )
        surface, tag = columns
        if not surface:
            raise ParseError(f"line {lineno}: empty surface column", line=lineno)
        if tag not in tagset:
            if mode == "strict":
                raise ParseError(
                    f"line {lineno}: unknown tag {tag!r}", line=lineno
                )
            unknown[tag] += 1
            tag = UNK_TAG
        current.append(Token(surface, tag))
    close()

    dataset = Dataset(tuple(sentences), name=name)
    report = ParseReport(sum(unknown.values()), dict(unknown))
    return ParseResult(dataset, report)


def parse_conll(data, tagset: TagSet, mode: str = "strict", name: str = "") -> Dataset:
    return parse_conll_detailed(data, tagset, mode, name).dataset


def write_conll(dataset: Dataset) -> str:
    """Canonical two-column form; parse_conll(write_conll(d)) == d."""
    blocks = [
        "".join(f"{t.surface}\t{t.tag}\n" for t in s.tokens)
        for s in dataset.sentences
    ]
    return "\n".join(blocks)


@dataclass(frozen=True)
class SplitSpec:
    """Ratios for a train/dev/test split plus the shuffle seed.

    Ratios are held as exact fractions (floats are read through their decimal
    repr) so size arithmetic is reproducible: train and dev get the floor of
    ratio*n sentences, test takes the remainder.
    """

    train_ratio: Fraction
    dev_ratio: Fraction
    test_ratio: Fraction
    seed: int = 0

    def __post_init__(self):
        for label in ("train_ratio", "dev_ratio", "test_ratio"):
            value = getattr(self, label)
            if not isinstance(value, Fraction):
                object.__setattr__(self, label, Fraction(str(value)))
        ratios = (self.train_ratio, self.dev_ratio, self.test_ratio)
        if any(not (0 < r < 1) for r in ratios):
            raise ValueError(f"split ratios must lie in (0, 1), got {ratios}")
        if sum(ratios) != 1:
            raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
        if not (0 <= self.seed <= _MASK64):
            raise ValueError("seed must be an unsigned 64-bit integer")


class SplitMix64:
    """The SplitMix64 generator (Steele et al.); 64-bit state, 64-bit output.

    Chosen because it is tiny and precisely specified, which keeps dataset
    splits reproducible across independent implementations.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


def _shuffled_indices(n: int, seed: int) -> list[int]:
    # Fisher-Yates driven by SplitMix64; index draw is next_u64() mod (i+1)
    rng = SplitMix64(seed)
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.next_u64() % (i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def split_dataset(dataset: Dataset, spec: SplitSpec):
    """Shuffle sentences with the seeded PRNG and cut train/dev/test
    contiguously; identical (dataset, seed) gives an identical split."""
    n = len(dataset.sentences)
    if n < 3:
        raise ParseError(f"need at least 3 sentences to split, got {n}")
    order = _shuffled_indices(n, spec.seed)
    n_train = int(spec.train_ratio * n)
    n_dev = int(spec.dev_ratio * n)
    train_idx = order[:n_train]
    dev_idx = order[n_train : n_train + n_dev]
    test_idx = order[n_train + n_dev :]
    pick = lambda idx, label: Dataset(
        tuple(dataset.sentences[i] for i in idx),
        name=f"{dataset.name}/{label}" if dataset.name else label,
    )
    return pick(train_idx, "train"), pick(dev_idx, "dev"), pick(test_idx, "test")


@dataclass(frozen=True)
class StatsReport:
    sentences: int
    tokens: int
    types: int
    tag_frequencies: dict[str, int]

    def to_json(self) -> dict:
        return {
            "sentences": self.sentences,
            "tokens": self.tokens,
            "types": self.types,
            "tag_frequencies": dict(self.tag_frequencies),
        }


def corpus_stats(dataset: Dataset, tagset: TagSet | None = None) -> StatsReport:
    """Sentence/token/type counts and per-tag frequencies."""
    tag_freq = Counter()
    surfaces = set()
    tokens = 0
    for s in dataset.sentences:
        for t in s.tokens:
            tag_freq[t.tag] += 1
            surfaces.add(t.surface)
            tokens += 1
    return StatsReport(len(dataset.sentences), tokens, len(surfaces), dict(tag_freq))
