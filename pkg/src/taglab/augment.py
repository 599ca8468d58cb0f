"""Grow training data from model output: auto-annotate raw sentences, queue
them for human correction, and merge the reviewed items back into training.

The queue is one JSON file, rewritten atomically on every change, so a crash
can never leave a half-written file. Items move pending -> corrected (tags
edited) or pending -> approved (model output accepted as-is); merged data
always validates strictly against the tagset.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

from .corpus import Dataset, TaggedSentence, Token
from .errors import QueueError
from .tagset import TagSet

STATUSES = ("pending", "corrected", "approved")


@dataclass
class ReviewItem:
    id: str
    tokens: list[str]
    model_tags: list[str]
    confidences: list[float]
    status: str = "pending"
    corrected_tags: list[str] | None = None
    provenance: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise QueueError(f"invalid status {self.status!r}")
        if not (len(self.tokens) == len(self.model_tags) == len(self.confidences)):
            raise QueueError(
                f"item {self.id}: tokens/model_tags/confidences lengths differ"
            )
        if (self.corrected_tags is not None) != (self.status == "corrected"):
            raise QueueError(
                f"item {self.id}: corrected_tags present iff status is corrected"
            )

    def mean_confidence(self) -> float:
        return sum(self.confidences) / len(self.confidences)

    def final_tags(self) -> list[str]:
        return self.corrected_tags if self.corrected_tags is not None else self.model_tags

    def disagreements(self) -> int:
        if self.corrected_tags is None:
            return 0
        return sum(a != b for a, b in zip(self.model_tags, self.corrected_tags))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "tokens": self.tokens,
            "model_tags": self.model_tags,
            "confidences": self.confidences,
            "status": self.status,
            "corrected_tags": self.corrected_tags,
            "provenance": self.provenance,
        }


@dataclass
class ReviewQueue:
    items: list[ReviewItem] = field(default_factory=list)

    def __post_init__(self):
        self._index = {}
        for item in self.items:
            if item.id in self._index:
                raise QueueError(f"duplicate item id {item.id!r}")
            self._index[item.id] = item

    def get(self, item_id: str) -> ReviewItem | None:
        return self._index.get(item_id)

    def add(self, item: ReviewItem):
        if item.id in self._index:
            raise QueueError(f"duplicate item id {item.id!r}")
        self.items.append(item)
        self._index[item.id] = item

    def counters(self) -> dict[str, int]:
        out = {status: 0 for status in STATUSES}
        for item in self.items:
            out[item.status] += 1
        out["total"] = len(self.items)
        return out

    def by_confidence(self, status: str | None = "pending",
                      limit: int | None = None) -> list[ReviewItem]:
        """Items filtered by status, least confident first (review order)."""
        selected = [i for i in self.items
                    if status is None or i.status == status]
        selected.sort(key=lambda i: (i.mean_confidence(), i.id))
        return selected[:limit] if limit is not None else selected

    def total_disagreements(self) -> int:
        return sum(i.disagreements() for i in self.items)


def item_id_for(tokens: list[str], index: int) -> str:
    digest = hashlib.sha1(" ".join(tokens).encode("utf-8")).hexdigest()[:12]
    return f"{index:05d}-{digest}"


def auto_annotate(model, raw_sentences, provenance: str = "") -> ReviewQueue:
    """Tag every pre-tokenized sentence with the model and queue it pending.

    Ids are deterministic (content hash plus position), so re-running on the
    same input reproduces the same queue.
    """
    from .tagger import tag_sentence

    queue = ReviewQueue()
    for index, tokens in enumerate(raw_sentences):
        tokens = list(tokens)
        if not tokens:
            continue
        tagged = tag_sentence(model, tokens)
        queue.add(ReviewItem(
            id=item_id_for(tokens, index),
            tokens=tokens,
            model_tags=[tag for tag, _ in tagged],
            confidences=[conf for _, conf in tagged],
            provenance=provenance,
        ))
    return queue


def _require_item(queue: ReviewQueue, item_id: str) -> ReviewItem:
    item = queue.get(item_id)
    if item is None:
        raise QueueError(f"unknown review item {item_id!r}")
    return item


def apply_correction(queue: ReviewQueue, item_id: str,
                     corrected_tags: list[str], tagset: TagSet) -> ReviewItem:
    """Attach human-corrected tags to a pending item.

    The model's original tags are kept for disagreement statistics. Only
    pending items may be corrected; every tag must be a tagset member.
    """
    item = _require_item(queue, item_id)
    if item.status != "pending":
        raise QueueError(
            f"item {item_id!r} is {item.status}, not pending", conflict=True
        )
    if len(corrected_tags) != len(item.tokens):
        raise QueueError(
            f"item {item_id!r}: {len(corrected_tags)} tags for "
            f"{len(item.tokens)} tokens"
        )
    for tag in corrected_tags:
        if tag not in tagset:
            raise QueueError(f"invalid tag {tag!r}: not in the tagset")
    item.corrected_tags = list(corrected_tags)
    item.status = "corrected"
    return item


def approve_item(queue: ReviewQueue, item_id: str) -> ReviewItem:
    """Accept a pending item's model tags without edits."""
    item = _require_item(queue, item_id)
    if item.status != "pending":
        raise QueueError(
            f"item {item_id!r} is {item.status}, not pending", conflict=True
        )
    item.status = "approved"
    return item


def merge_corrections(queue: ReviewQueue, train: Dataset) -> Dataset:
    """Append every corrected/approved item to the training data.

    Corrected items contribute their corrected tags, approved items their
    model tags; pending items are skipped. Existing sentences are untouched.
    """
    added = []
    for item in queue.items:
        if item.status == "pending":
            continue
        added.append(TaggedSentence(tuple(
            Token(surface, tag)
            for surface, tag in zip(item.tokens, item.final_tags())
        )))
    return Dataset(train.sentences + tuple(added), name=train.name)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def queue_to_json(queue: ReviewQueue) -> dict:
    return {"items": [item.to_json() for item in queue.items]}


def queue_from_json(doc) -> ReviewQueue:
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise QueueError(f"queue file is not valid JSON: {e}")
    try:
        items = [
            ReviewItem(
                id=entry["id"],
                tokens=list(entry["tokens"]),
                model_tags=list(entry["model_tags"]),
                confidences=[float(c) for c in entry["confidences"]],
                status=entry.get("status", "pending"),
                corrected_tags=(list(entry["corrected_tags"])
                                if entry.get("corrected_tags") is not None else None),
                provenance=entry.get("provenance", ""),
            )
            for entry in doc["items"]
        ]
    except (KeyError, TypeError) as e:
        raise QueueError(f"malformed queue file: {e}")
    return ReviewQueue(items)


def save_queue(queue: ReviewQueue, path: str):
    """Atomic replace-on-write: readers never observe a partial file."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(queue_to_json(queue), fh, ensure_ascii=False)
        fh.write("\n")
    os.replace(tmp, path)


def load_queue(path: str) -> ReviewQueue:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return queue_from_json(fh.read())
    except OSError as e:
        raise QueueError(f"cannot read queue file {path!r}: {e}")
