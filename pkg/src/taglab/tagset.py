"""Closed tag inventories with top-level categories.

A TagSet is pure data: an ordered list of tag identifiers, each belonging to
exactly one top-level category (Noun, Verb, ...). The bundled default is the
BIS (Bureau of Indian Standards) inventory for Indian languages: 34 tags in
11 categories. Coarse-grained evaluation collapses every tag to its category.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from .errors import TagsetError

# Sentinel accepted in gold data under permissive parsing; never a member of
# any TagSet and never predicted by a model.
UNK_TAG = "UNK-TAG"

# Category that UNK_TAG collapses to.
UNKNOWN_CATEGORY = "UNKNOWN"


@dataclass(frozen=True)
class TagSet:
    """An ordered, validated tag inventory with a tag -> category map."""

    tags: tuple[str, ...]
    categories: tuple[str, ...]
    category_of: dict[str, str] = field(repr=False)

    def __contains__(self, tag: str) -> bool:
        return tag in self.category_of

    def __len__(self) -> int:
        return len(self.tags)

    def definition(self) -> dict[str, list[str]]:
        """The JSON-serializable {category: [tag, ...]} form."""
        out: dict[str, list[str]] = {c: [] for c in self.categories}
        for tag in self.tags:
            out[self.category_of[tag]].append(tag)
        return out


def load_tagset(definition) -> TagSet:
    """Build a TagSet from a {category: [tag, ...]} mapping or its JSON text.

    Tag order is the order of appearance in the definition; category order
    likewise. Duplicate tags, whitespace in identifiers, empty categories and
    an empty definition are rejected.
    """
    if isinstance(definition, (str, bytes)):
        try:
            definition = json.loads(definition)
        except json.JSONDecodeError as e:
            raise TagsetError(f"tagset definition is not valid JSON: {e}")
    if not isinstance(definition, dict) or not definition:
        raise TagsetError("tagset definition must be a non-empty object of "
                          "{category: [tags...]}")
    tags: list[str] = []
    categories: list[str] = []
    category_of: dict[str, str] = {}
    for category, members in definition.items():
        if not isinstance(category, str) or not category:
            raise TagsetError(f"invalid category name: {category!r}")
        if not isinstance(members, list) or not members:
            raise TagsetError(f"category {category!r} has no tags")
        categories.append(category)
        for tag in members:
            if not isinstance(tag, str) or not tag or any(c.isspace() for c in tag):
                raise TagsetError(f"invalid tag identifier {tag!r} "
                                  f"in category {category!r}")
            if tag == UNK_TAG:
                raise TagsetError(f"tag identifier {tag!r} is reserved")
            if tag in category_of:
                raise TagsetError(f"duplicate tag {tag!r} (categories "
                                  f"{category_of[tag]!r} and {category!r})")
            category_of[tag] = category
            tags.append(tag)
    return TagSet(tuple(tags), tuple(categories), category_of)


def default_tagset() -> TagSet:
    """The bundled BIS tagset (34 tags, 11 top-level categories)."""
    text = resources.files("taglab.data").joinpath("bis_tagset.json").read_text("utf-8")
    return load_tagset(text)


def collapse_tag(tag: str, tagset: TagSet) -> str:
    """Map a tag to its top-level category; UNK_TAG maps to UNKNOWN."""
    if tag == UNK_TAG:
        return UNKNOWN_CATEGORY
    category = tagset.category_of.get(tag)
    if category is None:
        raise TagsetError(f"tag {tag!r} is not in the tagset")
    return category


def tag_index(tagset: TagSet) -> tuple[dict[str, int], tuple[str, ...]]:
    """Dense ids 0..K-1 in declaration order: (tag -> id map, id -> tag list)."""
    return {tag: i for i, tag in enumerate(tagset.tags)}, tagset.tags
