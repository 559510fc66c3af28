# *****************************************************************************
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
# *****************************************************************************

"""
Convolution layers, L1 tiling, IMA job decomposition and cluster mappings.

Everything here is pure planning; no simulator state is touched.
"""

import enum
import json
import math
import pathlib

from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from aimcsim.arch_config import L1_WORD_BYTES, ImaConfig
from aimcsim.cluster import ImaJob
from aimcsim.errors import DimensionError, MappingError
from aimcsim.logger import package_logger

DEFAULT_BENCHMARK_PIXELS = 64


class Strategy(str, enum.Enum):
    PIPELINING = "pipelining"
    DATA_PARALLEL = "data_parallel"


@dataclass(frozen=True)
class LayerDescriptor:
    name: str
    c_in: int
    c_out: int
    kernel: int = 1
    w_in: int = 1
    h_in: int = 1
    stride: int = 1
    bytes_per_elem: int = 1

    def __post_init__(self) -> None:
        for attr in ("c_in", "c_out", "kernel", "w_in", "h_in", "stride", "bytes_per_elem"):
            if getattr(self, attr) < 1:
                raise MappingError(f"layer {self.name}: {attr} must be ≥ 1, got {getattr(self, attr)}")
        if self.kernel > self.w_in or self.kernel > self.h_in:
            raise MappingError(f"layer {self.name}: {self.kernel}x{self.kernel} kernel larger than the input")

    @property
    def w_out(self) -> int:
        return (self.w_in - self.kernel) // self.stride + 1

    @property
    def h_out(self) -> int:
        return (self.h_in - self.kernel) // self.stride + 1

    @property
    def out_pixels(self) -> int:
        return self.w_out * self.h_out

    @property
    def rows_needed(self) -> int:
        return self.c_in * self.kernel * self.kernel

    @property
    def macs_per_pixel(self) -> int:
        return self.rows_needed * self.c_out

    def in_tile_bytes(self, pixels: int) -> int:
        """Input footprint of a run of output pixels along W, k - 1 halo columns included."""
        span = pixels if self.kernel == 1 else (pixels - 1) * self.stride + self.kernel
        return span * self.kernel * self.c_in * self.bytes_per_elem

    def out_tile_bytes(self, pixels: int, c_out: Optional[int] = None) -> int:
        return pixels * (self.c_out if c_out is None else c_out) * self.bytes_per_elem


@dataclass(frozen=True)
class TilePlan:
    w_tile: int
    n_tiles: int
    in_tile_bytes: int
    out_tile_bytes: int
    double_buffered: bool = True


def tiles_required(layer: LayerDescriptor, rows: int, cols: int) -> int:
    return math.ceil(layer.rows_needed / rows) * math.ceil(layer.c_out / cols)


def build_tile_plan(
    layer: LayerDescriptor,
    l1_bytes: int,
    runtime_reserve: int = 8192,
    max_pixels: Optional[int] = None,
    c_out: Optional[int] = None,
    in_copies: int = 1,
) -> TilePlan:
    """
    Largest double-buffered tile along W that fits the L1 budget.

    :param layer: Layer to tile
    :param l1_bytes: L1 capacity
    :param runtime_reserve: Bytes kept for stacks and descriptors
    :param max_pixels: Optional runtime cap on pixels per tile, 0 or None for none
    :param c_out: Output channels computed by this cluster, defaults to the whole layer
    :param in_copies: Partial inputs summed by this cluster, one per upstream row block
    :raises DimensionError: When one pixel alone exceeds the budget
    """
    budget = l1_bytes - runtime_reserve
    width = layer.c_out if c_out is None else c_out

    def footprint(pixels: int) -> int:
        return 2 * (in_copies * layer.in_tile_bytes(pixels) + layer.out_tile_bytes(pixels, width))

    if footprint(1) > budget:
        raise DimensionError(
            f"layer {layer.name}: one pixel needs {footprint(1)} bytes with double buffering, "
            f"L1 budget is {budget} bytes"
        )
    per_pixel = footprint(2) - footprint(1)
    w_tile = max(1, (budget - footprint(1)) // per_pixel + 1)
    while footprint(w_tile + 1) <= budget:
        w_tile += 1
    while footprint(w_tile) > budget:
        w_tile -= 1
    if max_pixels:
        w_tile = min(w_tile, max_pixels)

    return TilePlan(
        w_tile=w_tile,
        n_tiles=math.ceil(layer.out_pixels / w_tile),
        in_tile_bytes=in_copies * layer.in_tile_bytes(w_tile),
        out_tile_bytes=layer.out_tile_bytes(w_tile, width),
    )


def ima_job_decompose(
    pixels: int,
    layer: LayerDescriptor,
    ima: ImaConfig,
    c_out_slice: Optional[Tuple[int, int]] = None,
    resident: Optional[str] = None,
    weight_prefix: Optional[str] = None,
    in_base: int = 0,
    out_base: int = 0,
    rows_slice: Optional[Tuple[int, int]] = None,
) -> List[ImaJob]:
    """
    Split a tile of output pixels into crossbar-sized jobs.

    Jobs are ordered weight sub-matrix outer, pixel inner, so a weight tile is
    programmed at most once per call. Addresses are L1 word addresses of each
    job's input slice and output slice.

    :param resident: Weight tile already programmed in the IMA
    :param rows_slice: Unrolled input rows (c_in k^2) handled here, defaults to all of them
    """
    lo, hi = c_out_slice if c_out_slice is not None else (0, layer.c_out)
    rows_needed = layer.rows_needed
    row_lo, row_hi = rows_slice if rows_slice is not None else (0, rows_needed)
    prefix = weight_prefix or layer.name
    jobs = []
    for col in range(math.ceil((hi - lo) / ima.cols)):
        c_out = min(ima.cols, hi - lo - col * ima.cols)
        for row in range(math.ceil((row_hi - row_lo) / ima.rows)):
            c_in = min(ima.rows, row_hi - row_lo - row * ima.rows)
            tile = f"{prefix}/{row}.{col}"
            for pixel in range(pixels):
                jobs.append(
                    ImaJob(
                        c_in=c_in,
                        c_out=c_out,
                        l1_src=in_base + (pixel * rows_needed + row_lo + row * ima.rows) // L1_WORD_BYTES,
                        l1_dst=out_base + (pixel * (hi - lo) + col * ima.cols) // L1_WORD_BYTES,
                        needs_reprogram=tile != resident,
                        weight_tile=tile,
                    )
                )
                resident = tile
    return jobs


def balanced_partition(total: int, parts: int) -> List[int]:
    """Sizes of ``parts`` contiguous groups that differ by at most one, larger groups first."""
    base, extra = divmod(total, parts)
    return [base + 1 if index < extra else base for index in range(parts)]


@dataclass(frozen=True)
class Assignment:
    """
    :param c_in_slice: Unrolled input rows (c_in k^2) held on this cluster's crossbar
    :param c_out_slice: Output channels computed here
    """

    cluster: int
    layer: int
    c_in_slice: Tuple[int, int]
    c_out_slice: Tuple[int, int]
    weight_tile: str
    serialized_after: Optional[int] = None


@dataclass(frozen=True)
class Edge:
    """Data movement at a layer boundary; None stands for L2."""

    layer: int
    src: Optional[int]
    dst: Optional[int]


@dataclass(frozen=True)
class MappingPlan:
    strategy: Strategy
    layers: Tuple[LayerDescriptor, ...]
    assignments: Tuple[Tuple[Assignment, ...], ...]
    edges: Tuple[Edge, ...]

    @property
    def n_clusters(self) -> int:
        return len(self.assignments)

    def input_sources(self, cluster: int) -> Tuple[int, ...]:
        """Producer clusters feeding ``cluster``; empty when its input comes from L2."""
        edges = [edge for edge in self.edges if edge.dst == cluster]
        if not edges:
            raise MappingError(f"cluster {cluster} has no input edge")
        return tuple(edge.src for edge in edges if edge.src is not None)

    def output_sinks(self, cluster: int) -> Tuple[int, ...]:
        """Consumer clusters of ``cluster``; empty when its output goes to L2."""
        edges = [edge for edge in self.edges if edge.src == cluster]
        if not edges:
            raise MappingError(f"cluster {cluster} has no output edge")
        return tuple(edge.dst for edge in edges if edge.dst is not None)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "strategy": self.strategy.value,
            "layers": [vars(layer) for layer in self.layers],
            "assignments": [
                [
                    {
                        "layer": item.layer,
                        "c_in_slice": list(item.c_in_slice),
                        "c_out_slice": list(item.c_out_slice),
                        "weight_tile": item.weight_tile,
                        "serialized_after": item.serialized_after,
                    }
                    for item in cluster
                ]
                for cluster in self.assignments
            ],
            "edges": [{"layer": edge.layer, "src": edge.src, "dst": edge.dst} for edge in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _require_clusters(n_cl: int) -> None:
    if n_cl < 1:
        raise MappingError(f"need at least one cluster, got {n_cl}")


def _crossbar_blocks(layer: LayerDescriptor, ima: ImaConfig) -> List[Tuple[Tuple[int, int], Tuple[int, int]]]:
    """Row and column slices of every crossbar a layer needs, column-major."""
    rows_needed = layer.rows_needed
    return [
        ((lo, min(lo + ima.rows, rows_needed)), (col, min(col + ima.cols, layer.c_out)))
        for col in range(0, layer.c_out, ima.cols)
        for lo in range(0, rows_needed, ima.rows)
    ]


_Layout = Tuple[List[Tuple[Assignment, ...]], List[Edge]]


def _spread_layers(layers: Sequence[LayerDescriptor], ima: ImaConfig) -> _Layout:
    assignments: List[Tuple[Assignment, ...]] = []
    edges: List[Edge] = []
    previous: List[Optional[int]] = [None]
    for index, layer in enumerate(layers):
        blocks = _crossbar_blocks(layer, ima)
        stage = []
        for number, (rows_slice, cols_slice) in enumerate(blocks):
            cluster = len(assignments)
            tile = layer.name if len(blocks) == 1 else f"{layer.name}@{number}"
            assignments.append((Assignment(cluster, index, rows_slice, cols_slice, tile),))
            stage.append(cluster)
        edges.extend(Edge(index, src, dst) for src in previous for dst in stage)
        previous = stage
    edges.extend(Edge(len(layers) - 1, src, None) for src in previous)
    return assignments, edges


def _group_layers(layers: Sequence[LayerDescriptor], n_cl: int) -> _Layout:
    used = min(n_cl, len(layers))
    assignments = []
    edges = [Edge(0, None, 0)]
    index = 0
    for cluster, size in enumerate(balanced_partition(len(layers), used)):
        group = []
        for position in range(size):
            layer = layers[index]
            group.append(
                Assignment(
                    cluster=cluster,
                    layer=index,
                    c_in_slice=(0, layer.rows_needed),
                    c_out_slice=(0, layer.c_out),
                    weight_tile=layer.name,
                    serialized_after=index - 1 if position else None,
                )
            )
            index += 1
        assignments.append(tuple(group))
        if cluster + 1 < used:
            edges.append(Edge(index, cluster, cluster + 1))
    edges.append(Edge(len(layers) - 1, used - 1, None))
    return assignments, edges


def map_pipelining(
    layers: Sequence[LayerDescriptor], n_cl: int, ima: Optional[ImaConfig] = None
) -> MappingPlan:
    """
    Chain layers over clusters, one stage per layer while crossbars last.

    A layer needing several crossbars gets one cluster per crossbar; every
    cluster of a stage receives each upstream cluster's output and sums the
    partial results of row-split producers. When the layers need more
    crossbars than there are clusters, whole layers are grouped contiguously
    instead: groups differ by at most one layer, the earlier clusters take
    the extra ones, and co-located layers share the crossbar one after the
    other.

    :param ima: Crossbar geometry, the default IMA when None
    """
    _require_clusters(n_cl)
    if not layers:
        raise MappingError("a pipelining plan needs at least one layer")
    ima = ima or ImaConfig()
    crossbars = sum(tiles_required(layer, ima.rows, ima.cols) for layer in layers)
    if crossbars <= n_cl:
        assignments, edges = _spread_layers(layers, ima)
    else:
        assignments, edges = _group_layers(layers, n_cl)
        package_logger.debug(f"Layers need {crossbars} crossbars, {n_cl} clusters available: serializing layers")

    plan = MappingPlan(Strategy.PIPELINING, tuple(layers), tuple(assignments), tuple(edges))
    package_logger.debug(f"Pipelining plan: {len(layers)} layers on {plan.n_clusters} of {n_cl} clusters")
    return plan


def map_data_parallel(layer: LayerDescriptor, n_cl: int) -> MappingPlan:
    """
    Split one layer's output channels in balanced contiguous slices.

    A layer with fewer output channels than clusters uses one cluster per channel.
    """
    _require_clusters(n_cl)
    used = min(n_cl, layer.c_out)
    assignments = []
    edges = []
    lo = 0
    for cluster, size in enumerate(balanced_partition(layer.c_out, used)):
        tile = layer.name if used == 1 else f"{layer.name}[{lo}:{lo + size}]"
        assignments.append((Assignment(cluster, 0, (0, layer.rows_needed), (lo, lo + size), tile),))
        lo += size
    edges.extend(Edge(0, None, cluster) for cluster in range(used))
    edges.extend(Edge(0, cluster, None) for cluster in range(used))

    package_logger.debug(f"Data-parallel plan: {layer.name} c_out {layer.c_out} over {used} clusters")
    return MappingPlan(Strategy.DATA_PARALLEL, (layer,), tuple(assignments), tuple(edges))


@dataclass(frozen=True)
class StageTiming:
    stage_cycles: Tuple[int, ...]
    critical_stage: int
    interval: int


def pipeline_stage_cycles(plan: MappingPlan, timings: Mapping[int, int]) -> StageTiming:
    """
    Steady-state stage times of a plan.

    :param timings: Cycles per tile of every layer index
    :return: Per-stage cycles, the first slowest stage and the initiation interval
    """
    stages = tuple(sum(timings[item.layer] for item in cluster) for cluster in plan.assignments)
    critical = max(range(len(stages)), key=lambda index: (stages[index], -index))
    return StageTiming(stages, critical, stages[critical])


def parse_layer_table(text: str) -> List[LayerDescriptor]:
    """
    Parse ``name c_in c_out k w_in h_in stride`` lines; ``#`` starts a comment.

    :raises MappingError: With the offending line number
    """
    layers = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 7:
            raise MappingError(f"layer table line {number}: expected 7 fields, got {len(fields)}")
        try:
            values = [int(field) for field in fields[1:]]
        except ValueError:
            raise MappingError(f"layer table line {number}: non-integer field in '{line}'") from None
        try:
            layers.append(LayerDescriptor(fields[0], *values))
        except MappingError as e:
            raise MappingError(f"layer table line {number}: {e}") from None
    if not layers:
        raise MappingError("layer table contains no layers")
    return layers


def load_layer_table(path: Union[str, pathlib.Path]) -> List[LayerDescriptor]:
    path = pathlib.Path(path)
    layers = parse_layer_table(path.read_text(encoding="utf-8"))
    package_logger.info(f"Loaded {len(layers)} layers from {path}")
    return layers


def benchmark_layers(
    strategy: Strategy, n_cl: int, ima: ImaConfig, pixels: int = DEFAULT_BENCHMARK_PIXELS
) -> List[LayerDescriptor]:
    """
    The evaluated benchmarks: a chain of n_cl identical crossbar-sized 1x1
    layers for pipelining, one layer with n_cl crossbars of output channels
    for data parallelism. The spatial extent is a square when pixels is one.
    """
    side = math.isqrt(pixels)
    w_in, h_in = (side, side) if side * side == pixels else (pixels, 1)
    if strategy == Strategy.PIPELINING:
        return [LayerDescriptor(f"conv{index}", ima.rows, ima.cols, 1, w_in, h_in) for index in range(n_cl)]
    return [LayerDescriptor("conv", ima.rows, ima.cols * n_cl, 1, w_in, h_in)]


def build_plan(
    strategy: Strategy, layers: Sequence[LayerDescriptor], n_cl: int, ima: Optional[ImaConfig] = None
) -> MappingPlan:
    if strategy == Strategy.PIPELINING:
        return map_pipelining(layers, n_cl, ima)
    if len(layers) != 1:
        raise MappingError(f"data parallelism maps a single layer, got {len(layers)}")
    return map_data_parallel(layers[0], n_cl)
