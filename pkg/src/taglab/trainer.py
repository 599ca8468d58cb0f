"""Mini-batch training with dev-driven early stopping.

Per epoch: shuffle the training sentences with a seeded PRNG, walk them in
mini-batches (each sentence scored at its own length, batch loss = mean NLL
per token), clip gradients, step. After each epoch the dev set is decoded
and scored by micro-F1; when the score stalls for `patience` consecutive
epochs the learning rate is multiplied by `anneal_factor` and the weights
are restored from the best checkpoint so far. Training stops at `max_epochs`
or once the rate drops below `min_lr`.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Parameter, SGD
from .corpus import Dataset, TaggedSentence, Token
from .embeddings import (
    CharLmProvider,
    EmbeddingStack,
    LookupProvider,
    PROVIDER_TYPES,
    SubwordProvider,
    load_vector_file,
)
from .errors import CheckpointError, TrainingError
from .evaluation import compute_confusion, compute_report
from .subword import learn_bpe
from .tagger import CrfLayer, LstmCell, TaggerModel, viterbi_decode
from .tagset import TagSet, load_tagset

CHECKPOINT_VERSION = "1"

DEFAULT_PROVIDERS = [
    {"kind": "lookup", "dim": 64},
    {"kind": "subword", "dim": 50, "max_vocab": 500},
]


@dataclass
class TrainingConfig:
    architecture: str = "bilstm_crf"
    hidden_dim: int = 256
    batch_size: int = 32
    max_epochs: int = 20
    optimizer: str = "sgd"
    learning_rate: float = 0.1
    anneal_factor: float = 0.5
    patience: int = 3
    min_lr: float = 1e-4
    seed: int = 0
    dropout: float = 0.1
    clip_norm: float = 5.0
    warmup_steps: int = 0
    providers: list = field(default_factory=lambda: [dict(p) for p in DEFAULT_PROVIDERS])

    def __post_init__(self):
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.anneal_factor < 1:
            raise TrainingError(
                f"anneal_factor must lie in (0, 1), got {self.anneal_factor}"
            )
        if self.patience < 1:
            raise TrainingError(f"patience must be >= 1, got {self.patience}")
        if self.optimizer not in ("sgd", "adam"):
            raise TrainingError(f"unknown optimizer {self.optimizer!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc) -> "TrainingConfig":
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise TrainingError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class LearningCurvePoint:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_micro_f1: float
    learning_rate: float


def curve_to_csv(points) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "dev_loss", "dev_micro_f1",
                     "learning_rate"])
    for p in points:
        writer.writerow([p.epoch, repr(p.train_loss), repr(p.dev_loss),
                         repr(p.dev_micro_f1), repr(p.learning_rate)])
    return out.getvalue()


# ---------------------------------------------------------------------------
# model construction from a config
# ---------------------------------------------------------------------------


def _build_provider(spec: dict, index: int, surfaces: list[str],
                    rng: np.random.Generator):
    kind = spec.get("kind")
    name = f"stack.{index}"
    if kind == "lookup":
        return LookupProvider.build(
            surfaces, int(spec.get("dim", 64)), rng,
            min_count=int(spec.get("min_count", 1)), name=f"{name}.table",
        )
    if kind == "subword":
        vocab = learn_bpe(surfaces, int(spec.get("max_vocab", 500)))
        return SubwordProvider.build(vocab, int(spec.get("dim", 50)), rng,
                                     name=f"{name}.table")
    if kind == "char_lm":
        path = spec.get("path")
        if not path:
            raise TrainingError("char_lm provider needs a 'path' to a trained "
                                "LM artifact")
        with open(path, "r", encoding="utf-8") as fh:
            return load_char_lm_pair(fh.read(), name=name)
    if kind == "external":
        path = spec.get("path")
        if not path:
            raise TrainingError("external provider needs a 'path' to a vector file")
        with open(path, "r", encoding="utf-8") as fh:
            return load_vector_file(fh.read())
    raise TrainingError(f"unknown embedding provider kind {kind!r}")


def build_model(train: Dataset, tagset: TagSet, config: TrainingConfig) -> TaggerModel:
    rng = np.random.default_rng(config.seed)
    surfaces = [t.surface for s in train.sentences for t in s.tokens]
    providers = [
        _build_provider(spec, i, surfaces, rng)
        for i, spec in enumerate(config.providers)
    ]
    stack = EmbeddingStack(providers)
    return TaggerModel.init(config.architecture, stack, tagset,
                            config.hidden_dim, rng)


def _make_optimizer(config: TrainingConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate, warmup_steps=config.warmup_steps)
    return SGD(config.learning_rate)


def _validate_tags(dataset: Dataset, tagset: TagSet, label: str):
    for s in dataset.sentences:
        for t in s.tokens:
            if t.tag not in tagset:
                raise TrainingError(
                    f"{label} dataset contains tag {t.tag!r} outside the tagset"
                )


def predict_dataset(model: TaggerModel, dataset: Dataset) -> Dataset:
    """Viterbi-decode every sentence, keeping surfaces."""
    out = []
    for s in dataset.sentences:
        emissions = model.emissions(s.surfaces()).data
        path, _ = viterbi_decode(model.crf, emissions)
        out.append(TaggedSentence(tuple(
            Token(tok.surface, model.id_to_tag[y])
            for tok, y in zip(s.tokens, path)
        )))
    return Dataset(tuple(out), name=f"{dataset.name}/predicted")


def dataset_micro_f1(model: TaggerModel, dataset: Dataset) -> float:
    predicted = predict_dataset(model, dataset)
    report = compute_report(compute_confusion(dataset, predicted))
    return report.micro.f1


def mean_token_nll(model: TaggerModel, dataset: Dataset) -> float:
    total = 0.0
    tokens = 0
    for s in dataset.sentences:
        loss = model.sentence_nll(s.surfaces(), s.tags())
        total += loss.item() * len(s)
        tokens += len(s)
    return total / tokens


def _snapshot(params: list[Parameter]) -> dict[str, np.ndarray]:
    return {p.name: p.data.copy() for p in params}


def _restore(params: list[Parameter], saved: dict[str, np.ndarray]):
    for p in params:
        p.data[...] = saved[p.name]


def train(train_data: Dataset, dev_data: Dataset, config: TrainingConfig,
          tagset: TagSet):
    """Run the full loop; returns (best Checkpoint, learning curve)."""
    if len(train_data.sentences) == 0 or len(dev_data.sentences) == 0:
        raise TrainingError("train and dev datasets must be non-empty")
    _validate_tags(train_data, tagset, "train")
    _validate_tags(dev_data, tagset, "dev")

    model = build_model(train_data, tagset, config)
    params = model.parameters()
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise TrainingError(f"duplicate parameter names: {sorted(names)}")
    opt = _make_optimizer(config)
    shuffle_rng = np.random.default_rng((config.seed, 0xA11CE))
    dropout_rng = np.random.default_rng((config.seed, 0xD0))

    curve: list[LearningCurvePoint] = []
    best_state = _snapshot(params)
    best_f1 = -math.inf
    best_epoch = 0
    stalled = 0
    sentences = train_data.sentences

    epoch = 0
    while epoch < config.max_epochs and opt.learning_rate >= config.min_lr:
        epoch += 1
        epoch_lr = opt.learning_rate
        order = shuffle_rng.permutation(len(sentences))
        epoch_nll = 0.0
        epoch_tokens = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            losses = []
            batch_tokens = 0
            for idx in batch:
                s = sentences[idx]
                nll = model.sentence_nll(
                    s.surfaces(), s.tags(),
                    training=True, dropout=config.dropout, rng=dropout_rng,
                )
                losses.append(nll)
                batch_tokens += len(s)
            total = losses[0]
            for extra in losses[1:]:
                total = ad.add(total, extra)
            batch_loss = ad.mul(total, ad.Tensor(1.0 / batch_tokens))
            value = batch_loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            batch_loss.backward()
            ad.clip_grad_norm(params, config.clip_norm)
            opt.step(params)
            epoch_nll += value * batch_tokens
            epoch_tokens += batch_tokens

        dev_f1 = dataset_micro_f1(model, dev_data)
        dev_loss = mean_token_nll(model, dev_data)
        curve.append(LearningCurvePoint(
            epoch, epoch_nll / epoch_tokens, dev_loss, dev_f1, epoch_lr,
        ))
        if dev_f1 > best_f1:
            best_f1 = dev_f1
            best_state = _snapshot(params)
            best_epoch = epoch
            stalled = 0
        else:
            stalled += 1
            if stalled >= config.patience:
                opt.learning_rate *= config.anneal_factor
                _restore(params, best_state)
                stalled = 0

    _restore(params, best_state)
    checkpoint = checkpoint_from_model(
        model, config, tagset,
        best_dev_f1=best_f1 if curve else 0.0, epoch=best_epoch,
    )
    return checkpoint, curve


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    version: str
    config: TrainingConfig
    tagset: TagSet
    vocabularies: dict
    tensors: dict[str, np.ndarray]
    best_dev_f1: float
    epoch: int

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "config": self.config.to_json(),
            "tagset": self.tagset.definition(),
            "vocabularies": self.vocabularies,
            "tensors": {
                name: {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
                for name, arr in self.tensors.items()
            },
            "best_dev_f1": self.best_dev_f1,
            "epoch": self.epoch,
        }

    def build_model(self) -> TaggerModel:
        return model_from_checkpoint(self)


def checkpoint_from_model(model: TaggerModel, config: TrainingConfig,
                          tagset: TagSet, best_dev_f1: float = 0.0,
                          epoch: int = 0) -> Checkpoint:
    vocabularies = {}
    tensors: dict[str, np.ndarray] = {}
    for i, provider in enumerate(model.stack.providers):
        vocabularies[str(i)] = provider.spec()
        for key, arr in provider.tensors().items():
            tensors[f"stack.{i}.{key}"] = arr
    if model.bilstm is not None:
        for label, cell in zip(("fwd", "bwd"), model.bilstm):
            tensors[f"bilstm.{label}.w_in"] = cell.w_in.data
            tensors[f"bilstm.{label}.w_rec"] = cell.w_rec.data
            tensors[f"bilstm.{label}.bias"] = cell.bias.data
    tensors["emission.w"] = model.emit_w.data
    tensors["emission.b"] = model.emit_b.data
    # the CRF matrix is stored as its finite blocks; the -inf walls around
    # START/STOP are structural and rebuilt on load
    inner, start, stop = model.crf.blocks_raw()
    tensors["crf.inner"] = inner
    tensors["crf.start"] = start
    tensors["crf.stop"] = stop
    return Checkpoint(CHECKPOINT_VERSION, config, tagset, vocabularies,
                      tensors, best_dev_f1, epoch)


def model_from_checkpoint(ckpt: Checkpoint) -> TaggerModel:
    config = ckpt.config
    providers = []
    for i in range(len(ckpt.vocabularies)):
        spec = ckpt.vocabularies.get(str(i))
        if spec is None:
            raise CheckpointError(f"missing vocabulary entry for provider {i}")
        kind = spec.get("kind")
        cls = PROVIDER_TYPES.get(kind)
        if cls is None:
            raise CheckpointError(f"unknown provider kind {kind!r} in checkpoint")
        prefix = f"stack.{i}."
        sub = {
            name[len(prefix):]: arr
            for name, arr in ckpt.tensors.items()
            if name.startswith(prefix)
        }
        providers.append(cls.from_state(spec, sub, f"stack.{i}"))
    stack = EmbeddingStack(providers)
    tagset = ckpt.tagset
    num_tags = len(tagset)

    def grab(name):
        if name not in ckpt.tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        return ckpt.tensors[name]

    bilstm = None
    if config.architecture == "bilstm_crf":
        cells = []
        for label in ("fwd", "bwd"):
            cells.append(LstmCell(
                Parameter(grab(f"bilstm.{label}.w_in"), f"bilstm.{label}.w_in"),
                Parameter(grab(f"bilstm.{label}.w_rec"), f"bilstm.{label}.w_rec"),
                Parameter(grab(f"bilstm.{label}.bias"), f"bilstm.{label}.bias"),
            ))
        bilstm = (cells[0], cells[1])
    emit_w = Parameter(grab("emission.w"), "emission.w")
    emit_b = Parameter(grab("emission.b"), "emission.b")
    inner = grab("crf.inner")
    trans = np.full((num_tags + 2, num_tags + 2), -np.inf)
    trans[:num_tags, :num_tags] = inner
    trans[num_tags, :num_tags] = grab("crf.start")
    trans[:num_tags, num_tags + 1] = grab("crf.stop")
    crf = CrfLayer(num_tags, Parameter(trans, "crf.transitions"))
    return TaggerModel(config.architecture, stack, tagset, bilstm,
                       emit_w, emit_b, crf)


def save_checkpoint(checkpoint: Checkpoint, path: str):
    doc = checkpoint.to_json()
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False)
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path!r}: {e}")
    return checkpoint_from_json(doc)


def checkpoint_from_json(doc: dict) -> Checkpoint:
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc.get('version')!r}; "
            f"expected {CHECKPOINT_VERSION!r}"
        )
    for key in ("config", "tagset", "vocabularies", "tensors"):
        if key not in doc:
            raise CheckpointError(f"checkpoint is missing the {key!r} section")
    config = TrainingConfig.from_json(doc["config"])
    tagset = load_tagset(doc["tagset"])
    tensors = {}
    for name, entry in doc["tensors"].items():
        shape = tuple(int(d) for d in entry["shape"])
        values = entry["values"]
        expected = int(np.prod(shape)) if shape else 1
        if len(values) != expected:
            raise CheckpointError(
                f"tensor {name!r}: {len(values)} values do not fill shape {shape}"
            )
        tensors[name] = np.array(values, dtype=np.float64).reshape(shape)
    return Checkpoint(doc["version"], config, tagset, doc["vocabularies"],
                      tensors, float(doc.get("best_dev_f1", 0.0)),
                      int(doc.get("epoch", 0)))


def load_model(path: str) -> TaggerModel:
    return load_checkpoint(path).build_model()


# ---------------------------------------------------------------------------
# char-LM pair artifacts (trained separately, referenced by provider config)
# ---------------------------------------------------------------------------


def save_char_lm_pair(forward, backward) -> str:
    def side(lm):
        return {
            "state": lm.to_state(),
            "tensors": {
                k: {"shape": list(a.shape), "values": a.reshape(-1).tolist()}
                for k, a in lm.tensors().items()
            },
        }

    return json.dumps({"forward": side(forward), "backward": side(backward)},
                      ensure_ascii=False) + "\n"


def load_char_lm_pair(text, name: str = "charlm") -> CharLmProvider:
    from .embeddings import CharLm

    try:
        doc = json.loads(text)

        def side(which):
            entry = doc[which]
            tensors = {
                k: np.array(v["values"], dtype=np.float64).reshape(v["shape"])
                for k, v in entry["tensors"].items()
            }
            return CharLm.from_state(entry["state"], tensors, prefix=name)

        return CharLmProvider(side("forward"), side("backward"))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed char-LM artifact: {e}")
