"""Exception hierarchy shared by all taglab modules.

Every error raised on a data or validation path derives from TaglabError so
the CLI can map it to a stable exit code; programming errors (bugs) are left
as plain Python exceptions.
"""


class TaglabError(Exception):
    """Base class for all errors raised by taglab on data/validation paths."""

    code = "error"

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.message = message
        self.detail = detail

    def to_json(self):
        out = {"code": self.code, "message": self.message}
        if self.detail is not None:
            out["detail"] = self.detail
        return out


class ParseError(TaglabError):
    """Malformed corpus input (bad column count, bad encoding, bad tag)."""

    code = "parse_error"

    def __init__(self, message, line=None):
        detail = {"line": line} if line is not None else None
        super().__init__(message, detail)
        self.line = line


class TagsetError(TaglabError):
    """Invalid tagset definition or lookup of a tag outside the tagset."""

    code = "tagset_error"


class VocabError(TaglabError):
    """Bad vocabulary artifact (BPE file, vector file, character map)."""

    code = "vocab_error"


class ShapeError(TaglabError):
    """Tensor shape mismatch; message names both offending shapes."""

    code = "shape_error"


class TrainingError(TaglabError):
    """Non-finite loss or gradient, or an invalid training configuration."""

    code = "training_error"


class CheckpointError(TaglabError):
    """Unreadable, version-mismatched, or shape-inconsistent checkpoint."""

    code = "checkpoint_error"


class EvalError(TaglabError):
    """Gold/prediction structure mismatch or empty evaluation input."""

    code = "eval_error"


class QueueError(TaglabError):
    """Review-queue violation: unknown id, bad status transition, bad tags."""

    code = "queue_error"

    def __init__(self, message, detail=None, conflict=False):
        super().__init__(message, detail)
        self.conflict = conflict
