"""Additive three-way secret sharing of scalars and vectors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple, Union

from .errors import ConfigMismatch, EmptyVector, LengthMismatch, MissingComponent
from .field import DEFAULT_FIELD, FieldConfig, FieldElement, SeededRng, as_residues

PARTIES = (1, 2, 3)


def next_party(i: int) -> int:
    """Ring successor: 1 -> 2 -> 3 -> 1."""
    return i % 3 + 1


def prev_party(i: int) -> int:
    return (i + 1) % 3 + 1


@dataclass(frozen=True)
class SecretShares:
    """Shares ``(x1, x2, x3)`` of one secret; component i belongs to party i."""

    components: Tuple[FieldElement, FieldElement, FieldElement]

    @property
    def field(self) -> FieldConfig:
        return self.components[0].field

    def __getitem__(self, party: int) -> FieldElement:
        return self.components[party - 1]


@dataclass(frozen=True)
class ShareVector:
    """Per-party residue vectors; party i holds ``components[i - 1]``."""

    field: FieldConfig
    components: Tuple[Tuple[int, ...], Tuple[int, ...], Tuple[int, ...]]

    def __post_init__(self):
        lengths = {len(c) for c in self.components}
        if len(self.components) != 3 or len(lengths) != 1:
            raise LengthMismatch(f"per-party vectors differ in length: {sorted(lengths)}")

    def __len__(self) -> int:
        return len(self.components[0])

    def __getitem__(self, party: int) -> Tuple[int, ...]:
        return self.components[party - 1]


def split(x: Union[FieldElement, int], rng: SeededRng, field: Optional[FieldConfig] = None) -> SecretShares:
    if isinstance(x, FieldElement):
        field = x.field
        x = x.value
    field = field or DEFAULT_FIELD
    p = field.p
    x1 = rng.below(p)
    x2 = rng.below(p)
    x3 = (x - x1 - x2) % p
    return SecretShares((FieldElement(x1, field), FieldElement(x2, field), FieldElement(x3, field)))


def reconstruct(shares: Union[SecretShares, Sequence, Mapping]) -> FieldElement:
    if isinstance(shares, SecretShares):
        parts = list(shares.components)
    elif isinstance(shares, Mapping):
        parts = [shares.get(i) for i in PARTIES]
    else:
        parts = list(shares)
        if len(parts) != 3:
            raise MissingComponent(f"expected 3 components, got {len(parts)}")
    if any(s is None for s in parts):
        raise MissingComponent("share component missing")
    field = parts[0].field
    for s in parts[1:]:
        if s.field != field:
            raise ConfigMismatch(f"p={field.p} vs p={s.field.p}")
    return FieldElement(sum(s.value for s in parts), field)


def split_vector(v: Sequence, rng: SeededRng, field: Optional[FieldConfig] = None) -> ShareVector:
    if len(v) == 0:
        raise EmptyVector("cannot share an empty vector")
    if field is None:
        field = v[0].field if isinstance(v[0], FieldElement) else DEFAULT_FIELD
    p = field.p
    cols: List[List[int]] = [[], [], []]
    for x in as_residues(v, field):
        x1 = rng.below(p)
        x2 = rng.below(p)
        cols[0].append(x1)
        cols[1].append(x2)
        cols[2].append((x - x1 - x2) % p)
    return ShareVector(field, (tuple(cols[0]), tuple(cols[1]), tuple(cols[2])))


def reconstruct_vector(sv: ShareVector) -> List[FieldElement]:
    p = sv.field.p
    return [FieldElement((a + b + c) % p, sv.field) for a, b, c in zip(*sv.components)]


def local_add(a_i: FieldElement, b_i: FieldElement) -> FieldElement:
    """One party's share of ``x + y``; no communication."""
    return a_i + b_i
