"""taglab: a sequence-labeling toolkit.

Corpus handling in the two-column CoNLL style, BIS tagset support, stacked
subword/contextual embeddings, CRF and BiLSTM-CRF taggers trained by
gradient descent, tag-level evaluation, and a human-in-the-loop review
service for growing training data from model output.
"""

__version__ = "0.1.0"

from .corpus import (
    Dataset,
    SplitSpec,
    TaggedSentence,
    Token,
    corpus_stats,
    parse_conll,
    split_dataset,
    write_conll,
)
from .errors import TaglabError
from .tagset import TagSet, collapse_tag, default_tagset, load_tagset, tag_index

__all__ = [
    "Dataset",
    "SplitSpec",
    "TaggedSentence",
    "TagSet",
    "TaglabError",
    "Token",
    "collapse_tag",
    "corpus_stats",
    "default_tagset",
    "load_tagset",
    "parse_conll",
    "split_dataset",
    "tag_index",
    "write_conll",
]
