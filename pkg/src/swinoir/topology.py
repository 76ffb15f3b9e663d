"""Block connectivity for the main feature-extraction stack.

Blocks are numbered from 1. Block 1 reads the pre-extracted feature map;
every later block ``n`` reads the outputs of the blocks listed in
``sources[n]``, in ascending order.

Interval-dense wiring: block ``n`` reads block 1 plus every earlier block
whose parity differs from ``n``::

    n = 3 -> {1, 2}      n = 5 -> {1, 2, 4}      n = 7 -> {1, 2, 4, 6}
    n = 4 -> {1, 3}      n = 6 -> {1, 3, 5}      n = 8 -> {1, 3, 5, 7}

Skip wiring, the ablation baseline, reads only the previous block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

from .errors import DomainError

Strategy = Literal["interval-dense", "skip"]
STRATEGIES: tuple[str, ...] = ("interval-dense", "skip")


@dataclass(frozen=True)
class ConnectionTopology:
    block_count: int
    sources: tuple[frozenset[int], ...]
    strategy: str = "interval-dense"

    def __post_init__(self):
        if self.block_count < 1 or len(self.sources) != self.block_count:
            raise DomainError(f"need {self.block_count} source sets, got {len(self.sources)}")
        if self.sources[0]:
            raise DomainError("block 1 cannot have block sources")
        for n, src in enumerate(self.sources, start=1):
            if any(not 1 <= k < n for k in src):
                raise DomainError(f"block {n} has a source outside 1..{n - 1}: {sorted(src)}")
            if n >= 2 and not src:
                raise DomainError(f"block {n} has no sources")

    def sources_of(self, n: int) -> list[int]:
        """Ascending source indices of 1-based block ``n``."""
        if not 1 <= n <= self.block_count:
            raise DomainError(f"block index {n} outside 1..{self.block_count}")
        return sorted(self.sources[n - 1])

    def fan_in(self, n: int) -> int:
        return len(self.sources[n - 1])

    def as_lists(self) -> list[list[int]]:
        return [sorted(s) for s in self.sources]

    def to_text(self) -> str:
        lines = [f"strategy: {self.strategy}", f"blocks: {self.block_count}"]
        for n, src in enumerate(self.as_lists(), start=1):
            feeds = ", ".join(f"F{k}" for k in src) if src else "F_pre"
            lines.append(f"block {n} <- [{feeds}]")
        return "\n".join(lines)

    def to_dot(self) -> str:
        lines = [f'digraph "{self.strategy}" {{', "  rankdir=LR;", '  pre [label="F_pre"];']
        for n in range(1, self.block_count + 1):
            lines.append(f'  b{n} [label="IDSTB {n}"];')
        lines.append("  pre -> b1;")
        for n, src in enumerate(self.as_lists(), start=1):
            for k in src:
                lines.append(f"  b{k} -> b{n};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def interval_dense_sources(n: int, m: int) -> frozenset[int]:
    """Blocks that feed block ``n`` of ``m`` under interval-dense wiring."""
    if m < 1:
        raise DomainError(f"block count must be >= 1, got {m}")
    if not 1 <= n <= m:
        raise DomainError(f"block index {n} outside 1..{m}")
    if n == 1:
        return frozenset()
    return frozenset({1} | {k for k in range(1, n) if k % 2 == (n - 1) % 2})


def build_topology(m: int) -> ConnectionTopology:
    if m < 1:
        raise DomainError(f"block count must be >= 1, got {m}")
    return ConnectionTopology(m, tuple(interval_dense_sources(n, m) for n in range(1, m + 1)), "interval-dense")


def skip_topology(m: int) -> ConnectionTopology:
    if m < 1:
        raise DomainError(f"block count must be >= 1, got {m}")
    sources = tuple(frozenset() if n == 1 else frozenset({n - 1}) for n in range(1, m + 1))
    return ConnectionTopology(m, sources, "skip")


def make_topology(m: int, strategy: str = "interval-dense") -> ConnectionTopology:
    if strategy == "interval-dense":
        return build_topology(m)
    if strategy == "skip":
        return skip_topology(m)
    raise DomainError(f"unknown connection strategy {strategy!r}; expected one of {STRATEGIES}")
