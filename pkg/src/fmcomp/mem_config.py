"""Buffer-bank model: ping-pong feature buffers, scratch pad and index buffer.

The 480 KB bank is 2 x 128 KB feature buffers, a 64 KB scratch pad, a 32 KB
index buffer and two configurable 64 KB memories (two 32 KB sub-banks each)
that can be lent to the scratch pad or to the feature buffers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InfeasiblePlanError

KB = 1024
TOTAL_BYTES = 480 * KB
INDEX_BYTES = 32 * KB
BASE_FEATURE_BYTES = 128 * KB
BASE_SCRATCH_BYTES = 64 * KB
SUBBANK_BYTES = 32 * KB
PSUM_WORD_BYTES = 4
SCRATCH_CHOICES_KB = (64, 128, 192)
FEATURE_CHOICES_KB = (128, 160, 192)

FEATURE_A, FEATURE_B, SCRATCH = "feature_a", "feature_b", "scratch"


@dataclass(frozen=True)
class MemoryLayout:
    feature_a: int
    feature_b: int
    scratch: int
    index: int = INDEX_BYTES
    # cfg_assignment[m][s] is the owner of sub-bank s of configurable memory m
    cfg_assignment: tuple[tuple[str, str], tuple[str, str]] = (
        (FEATURE_A, FEATURE_A),
        (FEATURE_B, FEATURE_B),
    )

    def __post_init__(self):
        if self.feature_a // KB not in FEATURE_CHOICES_KB or self.feature_a % KB:
            raise ValueError(f"feature_a {self.feature_a} B is not a supported size")
        if self.feature_b // KB not in FEATURE_CHOICES_KB or self.feature_b % KB:
            raise ValueError(f"feature_b {self.feature_b} B is not a supported size")
        if self.scratch // KB not in SCRATCH_CHOICES_KB or self.scratch % KB:
            raise ValueError(f"scratch {self.scratch} B is not a supported size")
        if self.index != INDEX_BYTES:
            raise ValueError("index buffer is fixed at 32 KB")
        if self.total != TOTAL_BYTES:
            raise ValueError(f"layout totals {self.total} B, expected {TOTAL_BYTES} B")
        owned = {FEATURE_A: BASE_FEATURE_BYTES, FEATURE_B: BASE_FEATURE_BYTES,
                 SCRATCH: BASE_SCRATCH_BYTES}
        for memory in self.cfg_assignment:
            for owner in memory:
                owned[owner] += SUBBANK_BYTES
        if (owned[FEATURE_A], owned[FEATURE_B], owned[SCRATCH]) != (
            self.feature_a, self.feature_b, self.scratch
        ):
            raise ValueError("sub-bank assignment does not match the buffer sizes")

    @property
    def total(self) -> int:
        return self.feature_a + self.feature_b + self.scratch + self.index

    def input_buffer(self, layer_index: int) -> str:
        """Ping-pong role: even layers read A and write B, odd layers the reverse."""
        return FEATURE_A if layer_index % 2 == 0 else FEATURE_B

    def output_buffer(self, layer_index: int) -> str:
        return FEATURE_B if layer_index % 2 == 0 else FEATURE_A

    def size_of(self, role: str) -> int:
        return getattr(self, role)


def configure(scratch_request: int) -> MemoryLayout:
    """Lay out the bank for a scratch-pad size given in bytes (64/128/192 KB)."""
    if scratch_request == 192 * KB:
        return MemoryLayout(128 * KB, 128 * KB, 192 * KB,
                            cfg_assignment=((SCRATCH, SCRATCH), (SCRATCH, SCRATCH)))
    if scratch_request == 128 * KB:
        # One memory goes to the scratch pad, the other is split so both
        # ping-pong buffers stay the same size.
        return MemoryLayout(160 * KB, 160 * KB, 128 * KB,
                            cfg_assignment=((SCRATCH, SCRATCH), (FEATURE_A, FEATURE_B)))
    if scratch_request == 64 * KB:
        return MemoryLayout(192 * KB, 192 * KB, 64 * KB,
                            cfg_assignment=((FEATURE_A, FEATURE_A), (FEATURE_B, FEATURE_B)))
    raise ValueError(
        f"unsupported scratch size {scratch_request} B; "
        f"choose one of {[s * KB for s in SCRATCH_CHOICES_KB]}"
    )


def configure_kb(scratch_kb: int) -> MemoryLayout:
    return configure(scratch_kb * KB)


DEFAULT_LAYOUT = configure(64 * KB)


@dataclass(frozen=True)
class LayerDemand:
    """On-chip storage a layer needs if processed in one pass."""

    in_bytes: int
    out_bytes: int
    psum_bytes: int
    row_frames: int = 1

    def __post_init__(self):
        if min(self.in_bytes, self.out_bytes, self.psum_bytes) < 0:
            raise ValueError("byte demands must be non-negative")
        if self.row_frames < 1:
            raise ValueError("a layer has at least one row frame")


def psum_bytes(out_height: int, out_width: int, kernel: int) -> int:
    """Scratch pad needed for one group of output filters in flight."""
    in_flight = 8 if kernel == 1 else 4
    return out_height * out_width * in_flight * PSUM_WORD_BYTES


def layer_demand(
    in_bytes: int, out_bytes: int, out_height: int, out_width: int,
    kernel: int, in_height: int | None = None,
) -> LayerDemand:
    rows = in_height if in_height is not None else out_height
    return LayerDemand(
        in_bytes, out_bytes, psum_bytes(out_height, out_width, kernel),
        row_frames=max(1, math.ceil(rows / 8)),
    )


@dataclass(frozen=True)
class TilingPlan:
    fits_on_chip: bool
    tiles: int
    spill_bytes: int
    layout: MemoryLayout = DEFAULT_LAYOUT

    def __post_init__(self):
        if self.fits_on_chip and (self.tiles != 1 or self.spill_bytes != 0):
            raise ValueError("an on-chip plan has one tile and no spill")


def plan_capacities(
    demand: LayerDemand, feature_a: int, feature_b: int, scratch: int
) -> tuple[bool, int, int]:
    """``(fits, tiles, spill_bytes)`` for arbitrary buffer capacities.

    A tile of ``k`` row frames needs ``k / row_frames`` of each demand. Data
    that does not fit whole in its buffer is staged off-chip once, which is
    what ``spill_bytes`` counts.
    """
    caps = (feature_a, feature_b, scratch)
    needs = (demand.in_bytes, demand.out_bytes, demand.psum_bytes)
    if all(n <= c for n, c in zip(needs, caps)):
        return True, 1, 0
    n_rf = demand.row_frames
    k_max = n_rf
    for need, cap in zip(needs, caps):
        if need:
            k_max = min(k_max, cap * n_rf // need)
    if k_max < 1:
        raise InfeasiblePlanError(
            f"one row frame needs {[math.ceil(n / n_rf) for n in needs]} B "
            f"(input, output, psum) but buffers hold {list(caps)} B"
        )
    spill = (demand.in_bytes if demand.in_bytes > feature_a else 0) + (
        demand.out_bytes if demand.out_bytes > feature_b else 0
    )
    return False, math.ceil(n_rf / k_max), spill


def plan_layer(demand: LayerDemand, layout: MemoryLayout = DEFAULT_LAYOUT) -> TilingPlan:
    """Smallest row-frame partition of the layer that fits ``layout``."""
    fits, tiles, spill = plan_capacities(
        demand, layout.feature_a, layout.feature_b, layout.scratch
    )
    return TilingPlan(fits, tiles, spill, layout)


def plan_best(
    demand: LayerDemand, scratch_choices_kb=SCRATCH_CHOICES_KB
) -> TilingPlan:
    """Try every allowed layout and keep the one with least spill, then fewest tiles."""
    best = None
    for s in scratch_choices_kb:
        try:
            plan = plan_layer(demand, configure_kb(s))
        except InfeasiblePlanError:
            continue
        if best is None or (plan.spill_bytes, plan.tiles) < (best.spill_bytes, best.tiles):
            best = plan
    if best is None:
        raise InfeasiblePlanError("no buffer layout can hold a single row frame")
    return best
