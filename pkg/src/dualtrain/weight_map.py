"""
Base <-> motivated parameter association and the switch-time copy routines.

A :class:`WeightMap` pairs each base tensor with a region of the motivated
tensor it lives in. Regions are per-dimension ``(offset, length)`` ranges;
the maps built here always use prefix ranges (offset 0):

* 1-D vectors (biases, norm affine, running stats): first ``d`` entries;
* 2-D dense weights: first ``out`` rows x first ``in`` columns;
* 4-D conv weights: first ``out`` x first ``in`` channels, full kernel;
* 3-D embedding-style weights: full leading dims, first ``d`` of the last.

Blocks are re-indexed per stage by a depth rule. ``"last"`` sends base block
``l-1`` to motivated block ``l'-1`` and keeps the others in place; ``"prefix"``
keeps every block index. Everything not covered on the motivated side (the
differential layers) is never touched by a copy.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import IntegrityError, MappingError
from .store import ParamStore
from .zoo import ArchConfig, layout

DEPTH_RULES = ("last", "prefix")
DEFAULT_DEPTH_RULE = {"DepthResNet": "last", "WidthConvNet": "prefix", "WidthMLP": "prefix"}

_BLOCK = re.compile(r"^stage(\d+)\.block(\d+)\.")


@dataclass(frozen=True)
class RegionRef:
    name: str
    slices: Tuple[Tuple[int, int], ...]

    @property
    def index(self) -> Tuple[slice, ...]:
        return tuple(slice(o, o + n) for o, n in self.slices)

    @property
    def lengths(self) -> Tuple[int, ...]:
        return tuple(n for _, n in self.slices)

    @property
    def volume(self) -> int:
        return int(np.prod(self.lengths, dtype=np.int64))

    def fits(self, shape: Sequence[int]) -> bool:
        return len(shape) == len(self.slices) and all(
            o >= 0 and n >= 0 and o + n <= d for (o, n), d in zip(self.slices, shape)
        )

    def __str__(self):
        return f"{self.name}[{','.join(f'{o}:{o + n}' for o, n in self.slices)}]"

    @classmethod
    def parse(cls, text: str) -> "RegionRef":
        m = re.fullmatch(r"\s*([^\[\s]+)\[([0-9:,]*)\]\s*", text)
        if not m:
            raise ValueError(f"malformed region {text!r}")
        slices = []
        for part in filter(None, m.group(2).split(",")):
            a, b = (int(v) for v in part.split(":"))
            slices.append((a, b - a))
        return cls(m.group(1), tuple(slices))


@dataclass(frozen=True)
class MapEntry:
    base: RegionRef
    motivated: RegionRef
    trainable: bool


class WeightMap:
    """Entries in base-store order, plus the full tensor shapes on both sides."""

    def __init__(
        self,
        entries: Sequence[MapEntry],
        base_shapes: Dict[str, Tuple[int, ...]],
        motivated_shapes: Dict[str, Tuple[int, ...]],
    ):
        self.entries = list(entries)
        self.base_shapes = dict(base_shapes)
        self.motivated_shapes = dict(motivated_shapes)
        for e in self.entries:
            if e.base.lengths != e.motivated.lengths:
                raise MappingError(f"{e.base} and {e.motivated} differ in extent", [e.base.name])
            if not e.base.fits(self.base_shapes[e.base.name]):
                raise MappingError(f"{e.base} exceeds base shape", [e.base.name])
            if not e.motivated.fits(self.motivated_shapes[e.motivated.name]):
                raise MappingError(f"{e.motivated} exceeds motivated shape", [e.motivated.name])

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def dump(self) -> str:
        return "".join(f"{e.base} -> {e.motivated}\n" for e in self.entries)

    def motivated_coverage(self) -> Dict[str, np.ndarray]:
        """Per motivated tensor, a count of how many entries cover each element."""
        counts = {n: np.zeros(s, dtype=np.int64) for n, s in self.motivated_shapes.items()}
        for e in self.entries:
            counts[e.motivated.name][e.motivated.index] += 1
        return counts

    def base_coverage(self) -> Dict[str, np.ndarray]:
        counts = {n: np.zeros(s, dtype=np.int64) for n, s in self.base_shapes.items()}
        for e in self.entries:
            counts[e.base.name][e.base.index] += 1
        return counts

    def validate(self) -> None:
        """Raise MappingError unless the map is total and non-overlapping on the
        base side and pairwise disjoint on the motivated side."""
        bad = [n for n, c in self.base_coverage().items() if not np.all(c == 1)]
        if bad:
            raise MappingError("base elements not covered exactly once", bad)
        bad = [n for n, c in self.motivated_coverage().items() if np.any(c > 1)]
        if bad:
            raise MappingError("motivated regions overlap", bad)

    def differential_names(self) -> List[str]:
        """Motivated tensors that no entry touches at all."""
        cov = self.motivated_coverage()
        return [n for n, c in cov.items() if not c.any()]


def parse_dump(text: str) -> List[Tuple[RegionRef, RegionRef]]:
    pairs = []
    for line in text.splitlines():
        if not line.strip():
            continue
        left, right = line.split("->")
        pairs.append((RegionRef.parse(left), RegionRef.parse(right)))
    return pairs


def _map_block(name: str, base_layers, mot_layers, rule: str) -> str:
    m = _BLOCK.match(name)
    if not m:
        return name
    stage, block = int(m.group(1)), int(m.group(2))
    l, l2 = base_layers[stage], mot_layers[stage]
    target = l2 - 1 if rule == "last" and block == l - 1 else block
    return f"stage{stage}.block{target}." + name[m.end():]


def _prefix_slices(base_shape, mot_shape) -> Optional[Tuple[Tuple[int, int], ...]]:
    nd = len(base_shape)
    if nd != len(mot_shape):
        return None
    if nd == 4 and tuple(base_shape[2:]) != tuple(mot_shape[2:]):
        return None  # kernel sizes must agree
    if nd == 3 and tuple(base_shape[:2]) != tuple(mot_shape[:2]):
        return None
    if any(b > m for b, m in zip(base_shape, mot_shape)):
        return None
    if nd not in (1, 2, 3, 4):
        return None
    return tuple((0, b) for b in base_shape)


def build_map(base_cfg: ArchConfig, mot_cfg: ArchConfig, depth_rule: Optional[str] = None) -> WeightMap:
    """Construct the canonical map from ``base_cfg`` into ``mot_cfg``."""
    base, mot = base_cfg.resolved(), mot_cfg.resolved()
    if base.family != mot.family:
        raise MappingError(f"family mismatch: {base.family} vs {mot.family}")
    rule = depth_rule or DEFAULT_DEPTH_RULE[base.family]
    if rule not in DEPTH_RULES:
        raise MappingError(f"unknown depth rule {rule!r}; expected one of {DEPTH_RULES}")
    problems = []
    if base.level > mot.level:
        problems.append(f"base level {base.level} above motivated level {mot.level}")
    if base.num_classes != mot.num_classes or base.input_shape != mot.input_shape:
        problems.append("num_classes / input_shape differ")
    if len(base.stage_layers) != len(mot.stage_layers):
        problems.append(f"stage count {len(base.stage_layers)} vs {len(mot.stage_layers)}")
    elif any(b > m for b, m in zip(base.stage_layers, mot.stage_layers)):
        problems.append(f"stage_layers {base.stage_layers} not contained in {mot.stage_layers}")
    if problems:
        raise MappingError("configs are not a containment pair: " + "; ".join(problems))

    base_specs = layout(base).specs
    mot_shapes = {s.name: s.shape for s in layout(mot).specs}
    entries, unmappable = [], []
    for spec in base_specs:
        target = _map_block(spec.name, base.stage_layers, mot.stage_layers, rule)
        slices = _prefix_slices(spec.shape, mot_shapes[target]) if target in mot_shapes else None
        if slices is None:
            unmappable.append(spec.name)
            continue
        entries.append(
            MapEntry(RegionRef(spec.name, slices), RegionRef(target, slices), spec.trainable)
        )
    if unmappable:
        raise MappingError(
            f"{len(unmappable)} base tensors have no motivated counterpart: " + ", ".join(unmappable),
            unmappable,
        )
    return WeightMap(entries, {s.name: s.shape for s in base_specs}, mot_shapes)


# ---------------------------------------------------------------------------
# copies
# ---------------------------------------------------------------------------

def _check_store(store: ParamStore, shapes: Dict[str, Tuple[int, ...]], side: str) -> None:
    drift = []
    for name, shape in shapes.items():
        if name not in store:
            drift.append(f"{name}: missing")
        elif store.value(name).shape != tuple(shape):
            drift.append(f"{name}: {store.value(name).shape} != {tuple(shape)}")
    if drift:
        raise IntegrityError(f"{side} store does not match the weight map: " + "; ".join(drift))


def copy_small_big(base: ParamStore, mot: ParamStore, wmap: WeightMap) -> None:
    """Motivated region := base region for every entry (params and buffers)."""
    _check_store(base, wmap.base_shapes, "base")
    _check_store(mot, wmap.motivated_shapes, "motivated")
    for e in wmap.entries:
        mot.value(e.motivated.name)[e.motivated.index] = base.value(e.base.name)[e.base.index]


def copy_big_small(base: ParamStore, mot: ParamStore, wmap: WeightMap) -> None:
    """Base region := motivated region for every entry (params and buffers)."""
    _check_store(base, wmap.base_shapes, "base")
    _check_store(mot, wmap.motivated_shapes, "motivated")
    for e in wmap.entries:
        base.value(e.base.name)[e.base.index] = mot.value(e.motivated.name)[e.motivated.index]


def extract(mot: ParamStore, wmap: WeightMap) -> ParamStore:
    """A fresh base-layout store holding the motivated model's mapped regions."""
    _check_store(mot, wmap.motivated_shapes, "motivated")
    out = ParamStore()
    for e in wmap.entries:
        out.register(e.base.name, mot.value(e.motivated.name)[e.motivated.index].copy(), e.trainable)
    return out


def copy_optimizer_state(src_state, dst_state, wmap: WeightMap, direction: str) -> None:
    """Copy per-parameter optimizer slots region-wise, like the weights.

    ``direction`` is ``"small_big"`` (src is the base optimizer's state) or
    ``"big_small"`` (src is the motivated optimizer's state). Step counters
    are left alone.
    """
    if direction not in ("small_big", "big_small"):
        raise ValueError(f"direction must be 'small_big' or 'big_small', got {direction!r}")
    if set(src_state.slot_names) != set(dst_state.slot_names):
        raise IntegrityError(
            f"optimizer slot sets differ: {sorted(src_state.slot_names)} vs {sorted(dst_state.slot_names)}"
        )
    for e in wmap.entries:
        if not e.trainable:
            continue
        if direction == "small_big":
            src, dst = e.base, e.motivated
        else:
            src, dst = e.motivated, e.base
        try:
            s_slots, d_slots = src_state.slots[src.name], dst_state.slots[dst.name]
        except KeyError as exc:
            raise IntegrityError(f"optimizer state has no slots for {exc.args[0]!r}") from None
        for slot in src_state.slot_names:
            d_slots[slot][dst.index] = s_slots[slot][src.index]
