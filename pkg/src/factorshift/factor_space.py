"""Five-axis environment configuration space, tag codec, and Hamming shells.

An environment configuration assigns one level to each of five axes
(scene, season, weather, time, agent).  Configurations are written as
compact 5/6-character tags (``RSuDDC``, ``UFRNA``, ...) which are the
canonical textual form in all files, CLI arguments, and reports.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Iterable


class Axis(str, Enum):
    SCENE = "scene"
    SEASON = "season"
    WEATHER = "weather"
    TIME = "time"
    AGENT = "agent"


# Level order is canonical: it fixes enumeration order and tie-breaking
# everywhere downstream.
LEVELS: dict[Axis, tuple[str, ...]] = {
    Axis.SCENE: ("rural", "urban"),
    Axis.SEASON: ("summer", "winter", "spring", "fall"),
    Axis.WEATHER: ("dry", "rain", "snow"),
    Axis.TIME: ("day", "night"),
    Axis.AGENT: ("car", "animal"),
}

AXES: tuple[Axis, ...] = tuple(Axis)

_CODES: dict[Axis, dict[str, str]] = {
    Axis.SCENE: {"rural": "R", "urban": "U"},
    Axis.SEASON: {"summer": "Su", "winter": "W", "spring": "Sp", "fall": "F"},
    Axis.WEATHER: {"dry": "D", "rain": "R", "snow": "S"},
    Axis.TIME: {"day": "D", "night": "N"},
    Axis.AGENT: {"car": "C", "animal": "A"},
}
_DECODE: dict[Axis, dict[str, str]] = {
    ax: {code: level for level, code in table.items()} for ax, table in _CODES.items()
}


class TagError(ValueError):
    """Raised for malformed configuration tags.

    ``position`` is the 1-based character position of the first offending
    character (or one past the end for truncated tags).
    """

    def __init__(self, tag: str, position: int, reason: str):
        self.tag = tag
        self.position = position
        self.reason = reason
        super().__init__(f"bad tag {tag!r} at position {position}: {reason}")


@dataclass(frozen=True, order=True)
class EnvConfig:
    """One point of the environment space: a level per axis."""

    scene: str
    season: str
    weather: str
    time: str
    agent: str

    def __post_init__(self):
        for axis in AXES:
            value = getattr(self, axis.value)
            if value not in LEVELS[axis]:
                raise ValueError(f"unknown {axis.value} level {value!r}")

    def level(self, axis: Axis) -> str:
        return getattr(self, axis.value)

    @property
    def tag(self) -> str:
        return format_tag(self)

    def __str__(self) -> str:
        return format_tag(self)


IdSupport = frozenset  # of EnvConfig; non-empty wherever consumed


def format_tag(config: EnvConfig) -> str:
    """Encode a configuration as its positional tag (inverse of parse_tag)."""
    return "".join(_CODES[axis][config.level(axis)] for axis in AXES)


def parse_tag(tag: str) -> EnvConfig:
    """Decode a 5/6-character tag into an EnvConfig.

    The season field is the only variable-width one (Su/Sp vs W/F), and its
    codes are prefix-free against what may follow, so the parse is
    positional and unambiguous.  Raises TagError naming the first offending
    1-based position.
    """
    if len(tag) < 5 or len(tag) > 6:
        raise TagError(tag, len(tag) + 1, f"length {len(tag)}, expected 5 or 6")
    pos = 0
    levels: dict[Axis, str] = {}
    for axis in AXES:
        width = 2 if axis is Axis.SEASON and tag[pos : pos + 1] == "S" else 1
        code = tag[pos : pos + width]
        level = _DECODE[axis].get(code)
        if level is None or len(code) < width:
            raise TagError(tag, pos + 1, f"unknown {axis.value} code {code!r}")
        levels[axis] = level
        pos += width
    if pos != len(tag):
        raise TagError(tag, pos + 1, f"trailing characters {tag[pos:]!r}")
    return EnvConfig(**{axis.value: levels[axis] for axis in AXES})


def enumerate_space() -> list[EnvConfig]:
    """All 96 configurations in lexicographic axis order (stable across runs)."""
    return [
        EnvConfig(*combo)
        for combo in itertools.product(*(LEVELS[axis] for axis in AXES))
    ]


_SPACE = enumerate_space()
_CANON_INDEX = {config: i for i, config in enumerate(_SPACE)}


def canonical_index(config: EnvConfig) -> int:
    """Position of a configuration in the canonical enumeration."""
    return _CANON_INDEX[config]


def canonical_sort(configs: Iterable[EnvConfig]) -> list[EnvConfig]:
    return sorted(configs, key=canonical_index)


def hamming(a: EnvConfig, b: EnvConfig) -> int:
    """Number of axes on which two configurations differ (0..5)."""
    return sum(1 for axis in AXES if a.level(axis) != b.level(axis))


def changed_axes(a: EnvConfig, b: EnvConfig) -> frozenset[Axis]:
    return frozenset(axis for axis in AXES if a.level(axis) != b.level(axis))


def distance_to_support(config: EnvConfig, support: Iterable[EnvConfig]) -> int:
    """Min Hamming distance from a configuration to any support member."""
    distances = [hamming(config, member) for member in support]
    if not distances:
        raise ValueError("support must be non-empty")
    return min(distances)


def shell(support: Iterable[EnvConfig], k: int) -> set[EnvConfig]:
    """Configurations at min-Hamming distance exactly k from the support.

    shell(support, 0) equals the support itself; the shells for k = 0..5
    partition the full 96-point space.
    """
    if not 0 <= k <= len(AXES):
        raise ValueError(f"k must be in 0..{len(AXES)}, got {k}")
    members = list(support)
    if not members:
        raise ValueError("support must be non-empty")
    return {e for e in _SPACE if distance_to_support(e, members) == k}


def make_support(tags: Iterable[str]) -> frozenset[EnvConfig]:
    """Parse a collection of tags into an ID support set."""
    support = frozenset(parse_tag(t) for t in tags)
    if not support:
        raise ValueError("support must be non-empty")
    return support
