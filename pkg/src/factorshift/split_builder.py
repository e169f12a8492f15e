"""Matched-budget ID/OOD test suites with leakage checks and stratification."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .factor_space import (
    Axis,
    EnvConfig,
    canonical_sort,
    distance_to_support,
    parse_tag,
    shell,
)
from .seeding import derive_seed

ADMISSIBLE_KS = frozenset({0, 1, 2, 3})


@dataclass(frozen=True)
class TestSuite:
    """An ID support plus per-k OOD shells with one shared episode budget.

    The (route, seed) pair of every episode is a pure function of the suite,
    so any two policies evaluated on it consume identical randomness.
    """

    __test__ = False  # not a pytest class, despite the name

    id_support: frozenset[EnvConfig]
    shells: dict[int, tuple[EnvConfig, ...]]
    episodes_per_config: int
    seed_base: int
    route_set_id: str = "routes-v1"

    def configs(self) -> list[tuple[int, EnvConfig]]:
        """(k, config) rows in ascending k, canonical tag order within k."""
        return [(k, c) for k in sorted(self.shells) for c in self.shells[k]]

    def episode_seed(self, tag: str, episode: int) -> int:
        return derive_seed(self.seed_base, "eval", tag, episode)

    def route_seed(self, episode: int) -> int:
        # Route identity is config-independent: episode j uses the same
        # route seed in every configuration (matched routes).
        return derive_seed(self.seed_base, "route", self.route_set_id, episode)


def build_suite(
    support: frozenset[EnvConfig],
    ks: set[int],
    budget: int,
    seed_base: int,
    route_set_id: str = "routes-v1",
) -> TestSuite:
    """Construct a suite whose shells are exact min-Hamming-distance sets."""
    if not support:
        raise ValueError("support must be non-empty")
    bad = set(ks) - ADMISSIBLE_KS
    if bad:
        raise ValueError(f"ks must be within {sorted(ADMISSIBLE_KS)}, got extra {sorted(bad)}")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    shells = {k: tuple(canonical_sort(shell(support, k))) for k in sorted(ks)}
    return TestSuite(
        id_support=frozenset(support),
        shells=shells,
        episodes_per_config=budget,
        seed_base=seed_base,
        route_set_id=route_set_id,
    )


def check_leakage(suite: TestSuite) -> list[str]:
    """Validate shell membership; returns one message per violation.

    Empty result means (a) no ID member leaked into any k>=1 shell and
    (b) every shell member sits at min-distance exactly k from the support.
    """
    violations: list[str] = []
    seen: dict[EnvConfig, int] = {}
    for k, configs in suite.shells.items():
        for config in configs:
            if config in seen:
                violations.append(
                    f"{config.tag} appears in shells {seen[config]} and {k}"
                )
            seen[config] = k
            if k >= 1 and config in suite.id_support:
                violations.append(f"ID member {config.tag} leaked into shell {k}")
            actual = distance_to_support(config, suite.id_support)
            if actual != k:
                violations.append(
                    f"{config.tag} in shell {k} but min-distance is {actual}"
                )
    return violations


def stratify(
    support: frozenset[EnvConfig], axis: Axis
) -> dict[str, set[EnvConfig]]:
    """Partition support members by their level on one axis."""
    if not support:
        raise ValueError("support must be non-empty")
    parts: dict[str, set[EnvConfig]] = {}
    for member in support:
        parts.setdefault(member.level(axis), set()).add(member)
    return parts


def write_suite(path: str | Path, suite: TestSuite) -> None:
    """Serialize a suite to its human-readable text format."""
    lines = [
        f"route_set_id = {suite.route_set_id}",
        f"seed_base = {suite.seed_base}",
        f"episodes_per_config = {suite.episodes_per_config}",
        "support = " + " ".join(c.tag for c in canonical_sort(suite.id_support)),
    ]
    for k in sorted(suite.shells):
        lines.append(f"[shell {k}]")
        lines.extend(c.tag for c in suite.shells[k])
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_suite(path: str | Path) -> TestSuite:
    """Parse a suite file written by write_suite."""
    header: dict[str, str] = {}
    shells: dict[int, list[EnvConfig]] = {}
    current: list[EnvConfig] | None = None
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[shell "):
            k = int(line[len("[shell ") : -1])
            current = shells.setdefault(k, [])
        elif "=" in line and current is None:
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
        else:
            if current is None:
                raise ValueError(f"unexpected line outside a shell section: {line!r}")
            current.append(parse_tag(line))
    for key in ("seed_base", "episodes_per_config", "support"):
        if key not in header:
            raise ValueError(f"suite file missing {key!r}")
    return TestSuite(
        id_support=frozenset(parse_tag(t) for t in header["support"].split()),
        shells={k: tuple(v) for k, v in sorted(shells.items())},
        episodes_per_config=int(header["episodes_per_config"]),
        seed_base=int(header["seed_base"]),
        route_set_id=header.get("route_set_id", "routes-v1"),
    )
