"""Sequence taggers: a linear-chain CRF over per-token emission scores, with
the emissions produced either by a BiLSTM over stacked embeddings or by a
direct linear projection of the embeddings (the CRF-only variant).

CRF inference is exact: the forward recursion for the log-partition, Viterbi
for decoding (ties broken toward the lower tag id at every backtracking
step), and forward-backward for per-position posteriors.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .embeddings import EmbeddingStack, embed_sentence
from .errors import ShapeError
from .tagset import TagSet, tag_index

ARCHITECTURES = ("crf_only", "bilstm_crf")


class LstmCell:
    """Parameters for one LSTM direction; gate layout (input, forget, cell,
    output) with the forget-gate bias initialized to 1."""

    def __init__(self, w_in: Parameter, w_rec: Parameter, bias: Parameter):
        four_h = w_in.data.shape[1]
        self.input_dim = w_in.data.shape[0]
        self.hidden_dim = four_h // 4
        if w_rec.data.shape != (self.hidden_dim, four_h) or bias.data.shape != (four_h,):
            raise ShapeError(
                f"inconsistent LSTM shapes: w_in {w_in.data.shape}, "
                f"w_rec {w_rec.data.shape}, bias {bias.data.shape}"
            )
        self.w_in = w_in
        self.w_rec = w_rec
        self.bias = bias

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator,
             name: str) -> "LstmCell":
        scale = 1.0 / np.sqrt(hidden_dim)
        w_in = Parameter(rng.uniform(-scale, scale, (input_dim, 4 * hidden_dim)),
                         f"{name}.w_in")
        w_rec = Parameter(rng.uniform(-scale, scale, (hidden_dim, 4 * hidden_dim)),
                          f"{name}.w_rec")
        bias = Parameter(np.zeros(4 * hidden_dim), f"{name}.bias")
        bias.data[hidden_dim : 2 * hidden_dim] = 1.0
        return cls(w_in, w_rec, bias)

    def parameters(self):
        return [self.w_in, self.w_rec, self.bias]


class CrfLayer:
    """Transition scores over K tags plus virtual START/STOP states.

    The matrix is (K+2)x(K+2); row/column K is START, K+1 is STOP. Entries
    into START and out of STOP are pinned at -inf and never touched by any
    computation, so no gradient ever reaches them.
    """

    def __init__(self, num_tags: int, transitions: Parameter):
        if transitions.data.shape != (num_tags + 2, num_tags + 2):
            raise ShapeError(
                f"CRF transitions shape {transitions.data.shape} does not "
                f"match {num_tags} tags (+START/STOP)"
            )
        self.num_tags = num_tags
        self.start = num_tags
        self.stop = num_tags + 1
        self.transitions = transitions
        transitions.data[:, self.start] = -np.inf
        transitions.data[self.stop, :] = -np.inf

    @classmethod
    def init(cls, num_tags: int, rng: np.random.Generator,
             name: str = "crf.transitions") -> "CrfLayer":
        trans = Parameter(rng.uniform(-0.1, 0.1, (num_tags + 2, num_tags + 2)), name)
        return cls(num_tags, trans)

    def parameters(self):
        return [self.transitions]

    # finite sub-blocks used by every computation
    def _inner(self) -> Tensor:
        K = self.num_tags
        block = ad.index_select(self.transitions, range(K), axis=0)
        return ad.index_select(block, range(K), axis=1)

    def _start_row(self) -> Tensor:
        K = self.num_tags
        row = ad.index_select(self.transitions, [self.start], axis=0)
        return ad.index_select(row, range(K), axis=1)

    def _stop_row(self) -> Tensor:
        K = self.num_tags
        col = ad.index_select(self.transitions, range(K), axis=0)
        col = ad.index_select(col, [self.stop], axis=1)
        return ad.reshape(col, (1, K))

    def blocks_raw(self):
        t = self.transitions.data
        K = self.num_tags
        return t[:K, :K], t[self.start, :K], t[:K, self.stop]


def _check_emissions(emissions, num_tags: int):
    data = emissions.data if isinstance(emissions, Tensor) else np.asarray(emissions)
    if data.ndim != 2 or data.shape[1] != num_tags:
        raise ShapeError(
            f"emissions shape {data.shape} does not match {num_tags} tags"
        )
    if data.shape[0] < 1:
        raise ShapeError("emissions must cover at least one position")
    return data


def crf_score_sequence(crf: CrfLayer, emissions, path) -> Tensor:
    """Score of one tag path: START transition + per-position emissions +
    adjacent transitions + STOP transition. Differentiable in both inputs."""
    if not isinstance(emissions, Tensor):
        emissions = Tensor(emissions)
    data = _check_emissions(emissions, crf.num_tags)
    T = data.shape[0]
    path = list(path)
    if len(path) != T:
        raise ShapeError(f"path length {len(path)} does not match {T} positions")
    if any(not 0 <= y < crf.num_tags for y in path):
        raise ShapeError(f"path contains a tag id outside 0..{crf.num_tags - 1}")

    onehot = np.zeros_like(data)
    onehot[np.arange(T), path] = 1.0
    emit_score = ad.reduce_sum(ad.mul(emissions, Tensor(onehot)))

    width = crf.num_tags + 2
    hops = [crf.start * width + path[0]]
    hops += [a * width + b for a, b in zip(path, path[1:])]
    hops += [path[-1] * width + crf.stop]
    flat = ad.reshape(crf.transitions, (width * width,))
    trans_score = ad.reduce_sum(ad.index_select(flat, hops, axis=0))
    return ad.add(emit_score, trans_score)


def crf_log_partition(crf: CrfLayer, emissions) -> Tensor:
    """log sum over all K^T paths of exp(path score), by the forward
    recursion in log space."""
    if not isinstance(emissions, Tensor):
        emissions = Tensor(emissions)
    data = _check_emissions(emissions, crf.num_tags)
    T = data.shape[0]
    inner = crf._inner()
    alpha = ad.add(crf._start_row(), ad.index_select(emissions, [0], axis=0))
    for t in range(1, T):
        scores = ad.add(ad.reshape(alpha, (crf.num_tags, 1)), inner)
        alpha = ad.add(
            ad.log_sum_exp(scores, axis=0, keepdims=True),
            ad.index_select(emissions, [t], axis=0),
        )
    final = ad.log_sum_exp(ad.add(alpha, crf._stop_row()), axis=1)
    return ad.reshape(final, ())


def crf_nll(crf: CrfLayer, emissions, gold_path) -> Tensor:
    """Negative log-likelihood of the gold path; non-negative by
    construction since the gold path is one summand of the partition."""
    return ad.sub(
        crf_log_partition(crf, emissions),
        crf_score_sequence(crf, emissions, gold_path),
    )


def viterbi_decode(crf: CrfLayer, emissions) -> tuple[list[int], float]:
    """Exact argmax path and its score; ties resolve to the lower tag id at
    each backtracking step (argmax returns the first maximum)."""
    data = _check_emissions(emissions, crf.num_tags)
    T, K = data.shape
    inner, start, stop = crf.blocks_raw()
    delta = start + data[0]
    backptr = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + inner
        backptr[t] = np.argmax(scores, axis=0)
        delta = scores[backptr[t], np.arange(K)] + data[t]
    final = delta + stop
    last = int(np.argmax(final))
    path = [last]
    for t in range(T - 1, 0, -1):
        last = int(backptr[t][last])
        path.append(last)
    path.reverse()
    return path, float(final[path[-1]])


def posterior_marginals(crf: CrfLayer, emissions) -> np.ndarray:
    """Per-position tag posteriors by forward-backward; rows sum to 1."""
    data = _check_emissions(emissions, crf.num_tags)
    T, K = data.shape
    inner, start, stop = crf.blocks_raw()

    alpha = np.empty((T, K))
    alpha[0] = start + data[0]
    for t in range(1, T):
        alpha[t] = _lse(alpha[t - 1][:, None] + inner, axis=0) + data[t]
    beta = np.empty((T, K))
    beta[T - 1] = stop
    for t in range(T - 2, -1, -1):
        beta[t] = _lse(inner + (data[t + 1] + beta[t + 1])[None, :], axis=1)
    log_z = _lse(alpha[T - 1] + stop, axis=0)
    return np.exp(alpha + beta - log_z)


def _lse(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    out = np.log(np.exp(x - m).sum(axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


class TaggerModel:
    """A tagging model: embedding stack, optional BiLSTM, emission
    projection, CRF, and the tagset it predicts into."""

    def __init__(self, architecture: str, stack: EmbeddingStack, tagset: TagSet,
                 bilstm: tuple[LstmCell, LstmCell] | None,
                 emit_w: Parameter, emit_b: Parameter, crf: CrfLayer):
        if architecture not in ARCHITECTURES:
            raise ShapeError(f"unknown architecture {architecture!r}")
        num_tags = len(tagset)
        encoder_dim = stack.dim
        if architecture == "bilstm_crf":
            if bilstm is None:
                raise ShapeError("bilstm_crf architecture requires LSTM cells")
            encoder_dim = bilstm[0].hidden_dim + bilstm[1].hidden_dim
        elif bilstm is not None:
            raise ShapeError("crf_only architecture does not take LSTM cells")
        if emit_w.data.shape != (encoder_dim, num_tags) or emit_b.data.shape != (num_tags,):
            raise ShapeError(
                f"emission projection {emit_w.data.shape}/{emit_b.data.shape} "
                f"does not map encoder width {encoder_dim} to {num_tags} tags"
            )
        if crf.num_tags != num_tags:
            raise ShapeError(
                f"CRF over {crf.num_tags} tags does not match tagset of {num_tags}"
            )
        self.architecture = architecture
        self.stack = stack
        self.tagset = tagset
        self.tag_to_id, self.id_to_tag = tag_index(tagset)
        self.bilstm = bilstm
        self.emit_w = emit_w
        self.emit_b = emit_b
        self.crf = crf
        self.hidden_dim = bilstm[0].hidden_dim if bilstm else 0

    @classmethod
    def init(cls, architecture: str, stack: EmbeddingStack, tagset: TagSet,
             hidden_dim: int, rng: np.random.Generator) -> "TaggerModel":
        num_tags = len(tagset)
        bilstm = None
        encoder_dim = stack.dim
        if architecture == "bilstm_crf":
            bilstm = (
                LstmCell.init(stack.dim, hidden_dim, rng, "bilstm.fwd"),
                LstmCell.init(stack.dim, hidden_dim, rng, "bilstm.bwd"),
            )
            encoder_dim = 2 * hidden_dim
        scale = 1.0 / np.sqrt(max(encoder_dim, 1))
        emit_w = Parameter(rng.uniform(-scale, scale, (encoder_dim, num_tags)),
                           "emission.w")
        emit_b = Parameter(np.zeros(num_tags), "emission.b")
        crf = CrfLayer.init(num_tags, rng)
        return cls(architecture, stack, tagset, bilstm, emit_w, emit_b, crf)

    def parameters(self) -> list[Parameter]:
        params = list(self.stack.parameters())
        if self.bilstm:
            params += self.bilstm[0].parameters() + self.bilstm[1].parameters()
        params += [self.emit_w, self.emit_b]
        params += self.crf.parameters()
        return params

    def emissions(self, sentence: list[str], *, training: bool = False,
                  dropout: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
        """Embed, encode, and project one sentence to [T, K] scores."""
        embedded = embed_sentence(self.stack, sentence)
        embedded = ad.dropout(embedded, dropout, rng, training=training)
        if self.architecture == "bilstm_crf":
            encoded = bilstm_encode(self, embedded)
            encoded = ad.dropout(encoded, dropout, rng, training=training)
        else:
            encoded = embedded
        return ad.add(ad.matmul(encoded, self.emit_w), self.emit_b)

    def sentence_nll(self, sentence: list[str], tags: list[str], *,
                     training: bool = False, dropout: float = 0.0,
                     rng: np.random.Generator | None = None) -> Tensor:
        path = [self.tag_to_id[t] for t in tags]
        emissions = self.emissions(sentence, training=training, dropout=dropout, rng=rng)
        return crf_nll(self.crf, emissions, path)


def bilstm_encode(model: TaggerModel, embedded: Tensor) -> Tensor:
    """Row t of the output is [forward state at t, backward state at t],
    both scans starting from zero states."""
    if model.architecture != "bilstm_crf":
        raise ShapeError("bilstm_encode requires the bilstm_crf architecture")
    fwd, bwd = model.bilstm
    if embedded.data.shape[1] != fwd.input_dim:
        raise ShapeError(
            f"embedded width {embedded.data.shape} does not match LSTM input "
            f"dim {fwd.input_dim}"
        )
    left = ad.lstm_sequence(embedded, fwd.w_in, fwd.w_rec, fwd.bias)
    right = ad.lstm_sequence(embedded, bwd.w_in, bwd.w_rec, bwd.bias, reverse=True)
    return ad.concat([left, right], axis=1)


def tag_sentence(model: TaggerModel, sentence: list[str]) -> list[tuple[str, float]]:
    """Viterbi-decode one sentence; confidence at t is the CRF posterior of
    the decoded tag at t."""
    if not sentence:
        raise ShapeError("cannot tag an empty sentence")
    emissions = model.emissions(sentence).data
    path, _ = viterbi_decode(model.crf, emissions)
    marginals = posterior_marginals(model.crf, emissions)
    return [
        (model.id_to_tag[tag_id], float(marginals[t, tag_id]))
        for t, tag_id in enumerate(path)
    ]
