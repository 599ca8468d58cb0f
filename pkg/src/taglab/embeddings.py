"""Per-token embedding providers and their stacking.

Four provider kinds share one interface (embed a sentence, expose trainable
parameters, serialize for checkpoints):

* lookup       trainable table over the training vocabulary, shared UNK row
* subword      trainable table over BPE pieces, word = mean of its pieces
* char_lm      frozen forward+backward character LMs; word vectors read from
               hidden states over the sentence's character stream
* external     frozen vectors loaded from a text file, mean-vector fallback

A stack is an ordered list of providers; a token's final vector is the
concatenation of the providers' vectors in stack order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ShapeError, TrainingError, VocabError
from .subword import UNK_PIECE, BpeVocab, segment_word

log = logging.getLogger(__name__)

UNK_WORD = "<unk>"
UNK_CHAR = "\x00"  # internal id-0 stand-in for characters outside a char vocab


# ---------------------------------------------------------------------------
# lookup provider
# ---------------------------------------------------------------------------


class LookupProvider:
    """Whole-word table; out-of-vocabulary surfaces share one trainable row."""

    kind = "lookup"
    trainable = True

    def __init__(self, tokens: list[str], table: Parameter):
        if table.data.shape[0] != len(tokens) + 1:
            raise ShapeError(
                f"lookup table has {table.data.shape[0]} rows for "
                f"{len(tokens)} tokens (+1 UNK)"
            )
        self.tokens = list(tokens)
        self.table = table
        self.dim = table.data.shape[1]
        self._ids = {tok: i + 1 for i, tok in enumerate(self.tokens)}  # 0 = UNK

    @classmethod
    def build(cls, surfaces, dim: int, rng: np.random.Generator, min_count: int = 1,
              name: str = "lookup.table") -> "LookupProvider":
        counts: dict[str, int] = {}
        for s in surfaces:
            counts[s] = counts.get(s, 0) + 1
        tokens = sorted(t for t, c in counts.items() if c >= min_count)
        table = Parameter(rng.uniform(-0.1, 0.1, size=(len(tokens) + 1, dim)), name)
        return cls(tokens, table)

    def embed(self, sentence: list[str]) -> Tensor:
        ids = [self._ids.get(tok, 0) for tok in sentence]
        return ad.index_select(self.table, ids, axis=0)

    def parameters(self):
        return [self.table]

    def spec(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "tokens": self.tokens}

    def tensors(self) -> dict[str, np.ndarray]:
        return {"table": self.table.data}

    @classmethod
    def from_state(cls, spec: dict, tensors: dict, name: str) -> "LookupProvider":
        return cls(spec["tokens"], Parameter(tensors["table"], name))


# ---------------------------------------------------------------------------
# subword provider
# ---------------------------------------------------------------------------


class SubwordProvider:
    """BPE piece table; a word embeds as the arithmetic mean of its pieces,
    so vector magnitude does not scale with piece count."""

    kind = "subword"
    trainable = True

    def __init__(self, vocab: BpeVocab, table: Parameter):
        self.vocab = vocab
        self.pieces = vocab.piece_list()
        if table.data.shape[0] != len(self.pieces):
            raise ShapeError(
                f"subword table has {table.data.shape[0]} rows for "
                f"{len(self.pieces)} pieces"
            )
        self.table = table
        self.dim = table.data.shape[1]
        self._ids = {p: i for i, p in enumerate(self.pieces)}

    @classmethod
    def build(cls, vocab: BpeVocab, dim: int, rng: np.random.Generator,
              name: str = "subword.table") -> "SubwordProvider":
        rows = len(vocab.piece_list())
        table = Parameter(rng.uniform(-0.1, 0.1, size=(rows, dim)), name)
        return cls(vocab, table)

    def embed(self, sentence: list[str]) -> Tensor:
        piece_ids: list[int] = []
        spans: list[tuple[int, int]] = []
        for word in sentence:
            pieces = segment_word(word, self.vocab)
            start = len(piece_ids)
            piece_ids.extend(self._ids[p] for p in pieces)
            spans.append((start, len(piece_ids)))
        gathered = ad.index_select(self.table, piece_ids, axis=0)
        # one averaging matmul instead of a mean per word
        weights = np.zeros((len(sentence), len(piece_ids)))
        for row, (start, end) in enumerate(spans):
            weights[row, start:end] = 1.0 / (end - start)
        return ad.matmul(Tensor(weights), gathered)

    def parameters(self):
        return [self.table]

    def spec(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "bpe": self.vocab.to_json()}

    def tensors(self) -> dict[str, np.ndarray]:
        return {"table": self.table.data}

    @classmethod
    def from_state(cls, spec: dict, tensors: dict, name: str) -> "SubwordProvider":
        doc = spec["bpe"]
        merges = tuple((l, r) for l, r in doc["merges"])
        pieces = set(doc.get("alphabet", []))
        for left, right in merges:
            pieces.update((left, right, left + right))
        vocab = BpeVocab(merges, frozenset(pieces | {UNK_PIECE}), doc["max_vocab"])
        return cls(vocab, Parameter(tensors["table"], name))


# ---------------------------------------------------------------------------
# character language models
# ---------------------------------------------------------------------------


@dataclass
class CharLmConfig:
    direction: str = "forward"
    hidden_dim: int = 128
    char_dim: int = 24
    epochs: int = 5
    learning_rate: float = 0.005
    chunk_len: int = 64
    seed: int = 0


class CharLm:
    """A one-layer character LSTM language model.

    Holds an embedding table, the LSTM weights and an output projection; the
    next-character distribution is the softmax of the projected hidden state.
    Character id 0 is reserved for unseen characters.
    """

    def __init__(self, direction: str, chars: list[str], char_dim: int,
                 hidden_dim: int, params: dict[str, Parameter]):
        if direction not in ("forward", "backward"):
            raise VocabError(f"unknown char-LM direction {direction!r}")
        self.direction = direction
        self.chars = list(chars)
        self.char_dim = char_dim
        self.hidden_dim = hidden_dim
        self._ids = {c: i + 1 for i, c in enumerate(self.chars)}  # 0 = unseen
        self.emb = params["emb"]
        self.w_in = params["w_in"]
        self.w_rec = params["w_rec"]
        self.bias = params["bias"]
        self.out_w = params["out_w"]
        self.out_b = params["out_b"]
        self.epoch_losses: list[float] = []

    @classmethod
    def init(cls, direction: str, chars: list[str], char_dim: int,
             hidden_dim: int, rng: np.random.Generator) -> "CharLm":
        c = len(chars) + 1
        scale = 1.0 / np.sqrt(hidden_dim)
        params = {
            "emb": Parameter(rng.uniform(-0.1, 0.1, (c, char_dim)), f"charlm.{direction}.emb"),
            "w_in": Parameter(rng.uniform(-scale, scale, (char_dim, 4 * hidden_dim)),
                              f"charlm.{direction}.w_in"),
            "w_rec": Parameter(rng.uniform(-scale, scale, (hidden_dim, 4 * hidden_dim)),
                               f"charlm.{direction}.w_rec"),
            "bias": Parameter(np.zeros(4 * hidden_dim), f"charlm.{direction}.bias"),
            "out_w": Parameter(rng.uniform(-scale, scale, (hidden_dim, c)),
                               f"charlm.{direction}.out_w"),
            "out_b": Parameter(np.zeros(c), f"charlm.{direction}.out_b"),
        }
        lm = cls(direction, chars, char_dim, hidden_dim, params)
        lm.bias.data[hidden_dim : 2 * hidden_dim] = 1.0  # forget gate
        return lm

    def char_ids(self, text: str) -> list[int]:
        return [self._ids.get(c, 0) for c in text]

    def parameters(self):
        return [self.emb, self.w_in, self.w_rec, self.bias, self.out_w, self.out_b]

    def chunk_loss(self, ids: list[int]) -> Tensor:
        """Mean next-character negative log-likelihood over one chunk."""
        inputs, targets = ids[:-1], ids[1:]
        x = ad.index_select(self.emb, inputs, axis=0)
        hidden = ad.lstm_sequence(x, self.w_in, self.w_rec, self.bias)
        logits = ad.add(ad.matmul(hidden, self.out_w), self.out_b)
        onehot = np.zeros(logits.shape)
        onehot[np.arange(len(targets)), targets] = 1.0
        gold = ad.reduce_sum(ad.mul(logits, Tensor(onehot)))
        norm = ad.reduce_sum(ad.log_sum_exp(logits, axis=1))
        return ad.mul(ad.sub(norm, gold), Tensor(1.0 / len(targets)))

    def hidden_states(self, ids: list[int]) -> np.ndarray:
        """Frozen forward scan: hidden state after each character."""
        H = self.hidden_dim
        h = np.zeros(H)
        c = np.zeros(H)
        out = np.empty((len(ids), H))
        w_in, w_rec, bias = self.w_in.data, self.w_rec.data, self.bias.data
        emb = self.emb.data
        for t, cid in enumerate(ids):
            pre = emb[cid] @ w_in + h @ w_rec + bias
            i = _sig(pre[:H])
            f = _sig(pre[H : 2 * H])
            g = np.tanh(pre[2 * H : 3 * H])
            o = _sig(pre[3 * H :])
            c = f * c + i * g
            h = o * np.tanh(c)
            out[t] = h
        return out

    def to_state(self) -> dict:
        return {
            "direction": self.direction,
            "chars": self.chars,
            "char_dim": self.char_dim,
            "hidden_dim": self.hidden_dim,
        }

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "emb": self.emb.data,
            "w_in": self.w_in.data,
            "w_rec": self.w_rec.data,
            "bias": self.bias.data,
            "out_w": self.out_w.data,
            "out_b": self.out_b.data,
        }

    @classmethod
    def from_state(cls, state: dict, tensors: dict, prefix: str = "charlm") -> "CharLm":
        direction = state["direction"]
        params = {
            key: Parameter(tensors[key], f"{prefix}.{direction}.{key}")
            for key in ("emb", "w_in", "w_rec", "bias", "out_w", "out_b")
        }
        return cls(direction, state["chars"], state["char_dim"],
                   state["hidden_dim"], params)


def _sig(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _streams(corpus) -> list[str]:
    streams = []
    for item in corpus:
        text = " ".join(item) if not isinstance(item, str) else item
        if text:
            streams.append(text)
    return streams


def train_char_lm(corpus, config: CharLmConfig) -> CharLm:
    """Train one directional character LM with next-character cross-entropy.

    Backpropagation is truncated at `chunk_len` characters: chunks are
    independent windows with a fresh zero state. The per-epoch mean loss is
    logged and kept on the returned model (`epoch_losses`).
    """
    streams = _streams(corpus)
    if not streams:
        raise TrainingError("char-LM training corpus is empty")
    chars = sorted({c for s in streams for c in s})
    rng = np.random.default_rng(config.seed)
    lm = CharLm.init(config.direction, chars, config.char_dim, config.hidden_dim, rng)
    if config.direction == "backward":
        streams = [s[::-1] for s in streams]

    chunks = []
    for s in streams:
        ids = lm.char_ids(s)
        for start in range(0, len(ids) - 1, config.chunk_len):
            chunk = ids[start : start + config.chunk_len + 1]
            if len(chunk) >= 2:
                chunks.append(chunk)

    opt = ad.Adam(config.learning_rate)
    params = lm.parameters()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(chunks))
        total = 0.0
        count = 0
        for idx in order:
            chunk = chunks[idx]
            loss = lm.chunk_loss(chunk)
            loss.backward()
            ad.clip_grad_norm(params, 5.0)
            opt.step(params)
            total += loss.item() * (len(chunk) - 1)
            count += len(chunk) - 1
        lm.epoch_losses.append(total / count)
        log.info("char-lm %s epoch %d loss %.4f", config.direction, epoch,
                 total / count)
    return lm


def char_lm_loss(lm: CharLm, corpus) -> float:
    """Mean per-character NLL of `corpus` under a (frozen) char LM."""
    streams = _streams(corpus)
    if lm.direction == "backward":
        streams = [s[::-1] for s in streams]
    total = 0.0
    count = 0
    for s in streams:
        ids = lm.char_ids(s)
        if len(ids) < 2:
            continue
        loss = lm.chunk_loss(ids)
        total += loss.item() * (len(ids) - 1)
        count += len(ids) - 1
    if count == 0:
        raise TrainingError("corpus has no character bigrams to score")
    return total / count


def extract_word_states(lm_pair, sentence: list[str]) -> np.ndarray:
    """Contextual word vectors from a forward+backward char-LM pair.

    The forward LM reads the sentence's character stream (tokens joined by
    one space); a word's forward vector is the hidden state after its last
    character. The backward LM reads the reversed stream; a word's backward
    vector is the state after its first character is consumed in that order.
    Rows are [forward, backward] concatenations.
    """
    fwd, bwd = lm_pair
    if fwd.hidden_dim != bwd.hidden_dim:
        raise ShapeError(
            f"char-LM pair hidden sizes differ: {fwd.hidden_dim} vs {bwd.hidden_dim}"
        )
    if not sentence:
        raise ShapeError("cannot embed an empty sentence")
    stream = " ".join(sentence)
    n = len(stream)
    fwd_states = fwd.hidden_states(fwd.char_ids(stream))
    bwd_states = bwd.hidden_states(bwd.char_ids(stream[::-1]))
    rows = []
    pos = 0
    for word in sentence:
        start = pos
        end = pos + len(word) - 1
        rows.append(np.concatenate([fwd_states[end], bwd_states[n - 1 - start]]))
        pos = end + 2  # skip the joining space
    return np.stack(rows)


class CharLmProvider:
    """Frozen contextual provider backed by a forward+backward LM pair."""

    kind = "char_lm"
    trainable = False

    def __init__(self, forward: CharLm, backward: CharLm):
        if forward.direction != "forward" or backward.direction != "backward":
            raise VocabError("char_lm provider needs one forward and one backward LM")
        self.forward = forward
        self.backward = backward
        self.dim = forward.hidden_dim + backward.hidden_dim

    def embed(self, sentence: list[str]) -> Tensor:
        return Tensor(extract_word_states((self.forward, self.backward), sentence))

    def parameters(self):
        return []

    def spec(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "forward": self.forward.to_state(),
            "backward": self.backward.to_state(),
        }

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for side, lm in (("forward", self.forward), ("backward", self.backward)):
            for key, arr in lm.tensors().items():
                out[f"{side}.{key}"] = arr
        return out

    @classmethod
    def from_state(cls, spec: dict, tensors: dict, name: str) -> "CharLmProvider":
        def side(which):
            sub = {k.split(".", 1)[1]: v for k, v in tensors.items()
                   if k.startswith(which + ".")}
            return CharLm.from_state(spec[which], sub, prefix=name)

        return cls(side("forward"), side("backward"))


# ---------------------------------------------------------------------------
# external vectors
# ---------------------------------------------------------------------------


class ExternalProvider:
    """Frozen vectors from a text file; unknown words get the mean vector."""

    kind = "external"
    trainable = False

    def __init__(self, tokens: list[str], matrix: np.ndarray, duplicates: int = 0):
        self.tokens = list(tokens)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.dim = self.matrix.shape[1]
        self.duplicates = duplicates
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        self.unk_vector = self.matrix.mean(axis=0)

    def embed(self, sentence: list[str]) -> Tensor:
        rows = np.stack([
            self.matrix[self._ids[tok]] if tok in self._ids else self.unk_vector
            for tok in sentence
        ])
        return Tensor(rows)

    def parameters(self):
        return []

    def spec(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "tokens": self.tokens}

    def tensors(self) -> dict[str, np.ndarray]:
        return {"matrix": self.matrix}

    @classmethod
    def from_state(cls, spec: dict, tensors: dict, name: str) -> "ExternalProvider":
        return cls(spec["tokens"], tensors["matrix"])


def load_vector_file(text) -> ExternalProvider:
    """Parse the plain-text vector format: a "<count> <dim>" header, then one
    token and `dim` decimal numbers per line. Duplicate tokens keep the last
    occurrence (counted and logged)."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise VocabError(f"vector file is not valid UTF-8: {e}")
    lines = text.splitlines()
    if not lines:
        raise VocabError("vector file is empty")
    header = lines[0].split()
    if len(header) != 2:
        raise VocabError("vector file header must be '<count> <dim>'")
    try:
        count, dim = int(header[0]), int(header[1])
    except ValueError:
        raise VocabError(f"non-numeric vector file header: {lines[0]!r}")
    if count < 1 or dim < 1:
        raise VocabError(f"vector file header out of range: {lines[0]!r}")
    if len(lines) - 1 != count:
        raise VocabError(
            f"vector file declares {count} rows but has {len(lines) - 1}"
        )
    entries: dict[str, np.ndarray] = {}
    duplicates = 0
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if len(fields) != dim + 1:
            raise VocabError(
                f"line {lineno}: expected token + {dim} numbers, "
                f"got {len(fields)} fields"
            )
        token = fields[0]
        try:
            vec = np.array([float(v) for v in fields[1:]], dtype=np.float64)
        except ValueError:
            raise VocabError(f"line {lineno}: non-numeric vector component")
        if token in entries:
            duplicates += 1
        entries[token] = vec
    if duplicates:
        log.warning("vector file: %d duplicate tokens (last occurrence kept)",
                    duplicates)
    tokens = list(entries.keys())
    matrix = np.stack([entries[t] for t in tokens])
    return ExternalProvider(tokens, matrix, duplicates=duplicates)


# ---------------------------------------------------------------------------
# stacking
# ---------------------------------------------------------------------------

PROVIDER_TYPES = {
    cls.kind: cls
    for cls in (LookupProvider, SubwordProvider, CharLmProvider, ExternalProvider)
}


class EmbeddingStack:
    """Ordered providers; output width is the sum of provider widths."""

    def __init__(self, providers: list):
        if not providers:
            raise ShapeError("an embedding stack needs at least one provider")
        self.providers = list(providers)
        self.dim = sum(p.dim for p in providers)

    def parameters(self):
        out = []
        for p in self.providers:
            out.extend(p.parameters())
        return out


def embed_sentence(stack: EmbeddingStack, sentence: list[str]) -> Tensor:
    """Rows are per-token concatenations of provider vectors in stack order."""
    if not sentence:
        raise ShapeError("cannot embed an empty sentence")
    return ad.concat([p.embed(sentence) for p in stack.providers], axis=1)
