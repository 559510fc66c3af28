# *****************************************************************************
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
# *****************************************************************************

"""
Hardware description of the many-cluster AIMC system.

The description is a YAML document (see docs/config_schema.md). parse_config
turns it into a frozen ArchConfig with defaults applied, render_config is the
canonical serializer, and validate checks every invariant and returns either
a ValidatedArch handle or the full list of violations.

Example:
    cfg = parse_config(pathlib.Path("default.yaml").read_text())
    arch = validate(cfg)
"""

import dataclasses
import enum
import math
import pathlib

from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, Optional, Union

import yaml

from aimcsim.errors import ConfigError
from aimcsim.logger import package_logger

L1_WORD_BYTES = 4
MAX_CROSSBAR_DIM = 1024
MAX_CLUSTERS = 64


class InterconnectKind(str, enum.Enum):
    WIRED = "wired"
    WIRELESS = "wireless"


class Accounting(str, enum.Enum):
    AGGREGATE_SHARED = "aggregate_shared"
    PER_DIRECTION = "per_direction"


@dataclass(frozen=True)
class ImaConfig:
    rows: int = 256
    cols: int = 256
    ports: int = 16
    port_width_bytes: int = 4
    t_eval_ns: float = 130.0
    input_bits: int = 8
    weight_bits: int = 4

    @property
    def stream_bytes_per_cycle(self) -> int:
        return self.ports * self.port_width_bytes


@dataclass(frozen=True)
class ClusterConfig:
    n_cores: int = 8
    l1_bytes: int = 65536
    l1_banks: int = 16
    dma_channels: int = 2
    ima: ImaConfig = ImaConfig()
    prog_overhead_cycles: int = 150
    event_latency_cycles: int = 2
    tile_overhead_cycles: int = 40
    runtime_reserve_bytes: int = 8192
    max_tile_pixels: int = 8
    dma_port_bytes: int = 32


@dataclass(frozen=True)
class InterconnectConfig:
    kind: InterconnectKind
    bandwidth_bits_per_cycle: int
    latency_cycles: int
    broadcast_enabled: bool
    accounting: Accounting = Accounting.AGGREGATE_SHARED
    peer_links: bool = True

    @property
    def label(self) -> str:
        suffix = "+bcast" if self.broadcast_enabled else ""
        return f"{self.kind.value}-{self.bandwidth_bits_per_cycle}b-{self.latency_cycles}c{suffix}"


@dataclass(frozen=True)
class L2Config:
    banks: int = 16
    bank_word_bytes: int = 8
    capacity_bytes: int = 16 * 1024 * 1024


@dataclass(frozen=True)
class ArchConfig:
    f_clock: float
    n_clusters: int
    cluster: ClusterConfig
    interconnect: InterconnectConfig
    l2: L2Config = L2Config()


@dataclass(frozen=True)
class ValidatedArch:
    """
    Immutable handle on a configuration that passed validate().

    Carries the cycle quantities derived from real-valued parameters so every
    model uses the same rounding.
    """

    config: ArchConfig
    eval_cycles: int

    @property
    def f_clock(self) -> float:
        return self.config.f_clock

    @property
    def n_clusters(self) -> int:
        return self.config.n_clusters

    @property
    def cluster(self) -> ClusterConfig:
        return self.config.cluster

    @property
    def ima(self) -> ImaConfig:
        return self.config.cluster.ima

    @property
    def interconnect(self) -> InterconnectConfig:
        return self.config.interconnect

    @property
    def l2(self) -> L2Config:
        return self.config.l2


def cycles_from_ns(duration_ns: float, f_clock_hz: float) -> int:
    """
    Convert a duration to whole cycles, rounding up.

    The product is rounded to 9 decimals first so that exact products such as
    100 ns at 400 MHz do not pick up a spurious extra cycle from binary floats.
    """
    return math.ceil(round(duration_ns * f_clock_hz * 1e-9, 9))


def bits_per_cycle(bandwidth_gbit_s: float, f_clock_hz: float) -> float:
    """
    Convert a link bandwidth to bits per clock cycle.

    :param bandwidth_gbit_s: Bandwidth in Gbit/s
    :param f_clock_hz: Clock frequency in Hz
    """
    if bandwidth_gbit_s <= 0 or f_clock_hz <= 0:
        raise ValueError(f"bandwidth and clock must be positive, got {bandwidth_gbit_s} Gbit/s at {f_clock_hz} Hz")
    return float(Fraction(str(bandwidth_gbit_s)) * 10**9 / Fraction(str(f_clock_hz)))


def _is_power_of_two(value: int) -> bool:
    return value > 0 and (value & (value - 1)) == 0


def _violations(cfg: ArchConfig) -> List[str]:
    violations: List[str] = []
    cluster = cfg.cluster
    ima = cluster.ima
    link = cfg.interconnect
    l2 = cfg.l2

    if not cfg.f_clock > 0:
        violations.append("f_clock must be > 0")
    if cfg.n_clusters < 1:
        violations.append("n_clusters must be ≥ 1")
    elif cfg.n_clusters > MAX_CLUSTERS:
        violations.append(f"n_clusters must be ≤ {MAX_CLUSTERS}")

    if cluster.n_cores < 1:
        violations.append("n_cores must be ≥ 1")
    if cluster.dma_channels < 1:
        violations.append("dma_channels must be ≥ 1")
    if not _is_power_of_two(cluster.l1_banks):
        violations.append("l1_banks must be a power of two")
    elif cluster.l1_bytes <= 0 or cluster.l1_bytes % cluster.l1_banks != 0:
        violations.append("l1_bytes must be positive and divisible by l1_banks")
    if cluster.prog_overhead_cycles < 0:
        violations.append("prog_overhead_cycles must be ≥ 0")
    if cluster.event_latency_cycles < 1:
        violations.append("event_latency_cycles must be ≥ 1")
    if cluster.tile_overhead_cycles < 0:
        violations.append("tile_overhead_cycles must be ≥ 0")
    if cluster.runtime_reserve_bytes < 0 or cluster.runtime_reserve_bytes >= cluster.l1_bytes:
        violations.append("runtime_reserve_bytes must be ≥ 0 and smaller than l1_bytes")
    if cluster.max_tile_pixels < 0:
        violations.append("max_tile_pixels must be ≥ 0")
    if cluster.dma_port_bytes < 1:
        violations.append("dma_port_bytes must be ≥ 1")

    for name in ("rows", "cols"):
        value = getattr(ima, name)
        if value < 1:
            violations.append(f"{name} must be ≥ 1")
        elif value > MAX_CROSSBAR_DIM:
            violations.append(f"{name} exceeds {MAX_CROSSBAR_DIM}")
    if ima.ports < 1 or ima.port_width_bytes < 1:
        violations.append("ports and port_width_bytes must be ≥ 1")
    else:
        if ima.stream_bytes_per_cycle > ima.rows:
            violations.append("ports × port_width_bytes must not exceed rows")
        if ima.stream_bytes_per_cycle % L1_WORD_BYTES != 0:
            violations.append(f"ports × port_width_bytes must be a multiple of the {L1_WORD_BYTES}-byte L1 word")
    if not ima.t_eval_ns > 0:
        violations.append("t_eval_ns must be > 0")
    if ima.input_bits < 1 or ima.weight_bits < 1:
        violations.append("input_bits and weight_bits must be ≥ 1")

    if link.bandwidth_bits_per_cycle < 1:
        violations.append("bandwidth_bits_per_cycle must be a positive integer")
    if link.latency_cycles < 1:
        violations.append("latency_cycles must be ≥ 1")
    if link.kind == InterconnectKind.WIRED and link.broadcast_enabled:
        violations.append("broadcast_enabled requires a wireless interconnect")

    if l2.banks < 1:
        violations.append("l2 banks must be ≥ 1")
    if l2.bank_word_bytes < 1:
        violations.append("bank_word_bytes must be ≥ 1")
    if l2.capacity_bytes < 1:
        violations.append("capacity_bytes must be ≥ 1")
    if l2.banks >= 1 and l2.bank_word_bytes >= 1 and l2.banks * l2.bank_word_bytes * 8 < link.bandwidth_bits_per_cycle:
        violations.append("aggregate L2 bank bandwidth must sustain the interconnect bandwidth")

    return violations


def validate(cfg: ArchConfig) -> Union[ValidatedArch, List[str]]:
    """
    Check every invariant of the hardware description.

    :param cfg: Configuration to check
    :return: A ValidatedArch handle, or the complete list of violations
    """
    violations = _violations(cfg)
    if violations:
        return violations
    return ValidatedArch(config=cfg, eval_cycles=cycles_from_ns(cfg.cluster.ima.t_eval_ns, cfg.f_clock))


def require_valid(cfg: ArchConfig) -> ValidatedArch:
    result = validate(cfg)
    if isinstance(result, list):
        raise ConfigError(result)
    return result


_TOP_KEYS = ("f_clock", "n_clusters", "cluster", "interconnect", "l2")
_CLUSTER_KEYS = tuple(f.name for f in dataclasses.fields(ClusterConfig))
_IMA_KEYS = tuple(f.name for f in dataclasses.fields(ImaConfig))
_LINK_KEYS = (
    "kind",
    "bandwidth_bits_per_cycle",
    "bandwidth_gbit_s",
    "latency_cycles",
    "broadcast_enabled",
    "accounting",
    "peer_links",
)
_L2_KEYS = tuple(f.name for f in dataclasses.fields(L2Config))

_FLOAT_FIELDS = {"f_clock", "t_eval_ns", "bandwidth_gbit_s"}
_BOOL_FIELDS = {"broadcast_enabled", "peer_links"}


class _SectionReader:
    """Collects every problem of a document instead of stopping at the first."""

    def __init__(self) -> None:
        self.violations: List[str] = []

    def section(self, data: Dict[str, Any], key: str, allowed: tuple, prefix: str = "") -> Dict[str, Any]:
        value = data.get(key)
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.violations.append(f"{prefix}{key} must be a mapping")
            return {}
        self.unknown(value, allowed, f"{prefix}{key}.")
        return value

    def unknown(self, data: Dict[str, Any], allowed: tuple, prefix: str = "") -> None:
        for key in data:
            if key not in allowed:
                self.violations.append(f"unknown key '{prefix}{key}'")

    def value(self, data: Dict[str, Any], key: str, default: Any, prefix: str = "", required: bool = False) -> Any:
        if key not in data or data[key] is None:
            if required:
                self.violations.append(f"missing required key {prefix}{key}")
            return default
        raw = data[key]
        if key in _BOOL_FIELDS:
            if not isinstance(raw, bool):
                self.violations.append(f"{prefix}{key} must be true or false")
                return default
            return raw
        if key in _FLOAT_FIELDS:
            try:
                if isinstance(raw, bool):
                    raise ValueError(raw)
                return float(raw)
            except (TypeError, ValueError):
                self.violations.append(f"{prefix}{key} must be a number, got {raw!r}")
                return default
        integral = isinstance(raw, int) or (isinstance(raw, float) and raw.is_integer())
        if isinstance(raw, bool) or not integral:
            self.violations.append(f"{prefix}{key} must be an integer, got {raw!r}")
            return default
        return int(raw)

    def choice(self, data: Dict[str, Any], key: str, enum_type: type, default: Any, prefix: str = "") -> Any:
        if key not in data or data[key] is None:
            if default is None:
                self.violations.append(f"missing required key {prefix}{key}")
            return default
        try:
            return enum_type(data[key])
        except ValueError:
            allowed = ", ".join(member.value for member in enum_type)
            self.violations.append(f"{prefix}{key} must be one of {allowed}, got {data[key]!r}")
            return default


def _read_interconnect(reader: _SectionReader, data: Dict[str, Any], f_clock: float) -> InterconnectConfig:
    section = reader.section(data, "interconnect", _LINK_KEYS)
    if "interconnect" not in data:
        reader.violations.append("missing required key interconnect.kind")
        return InterconnectConfig(InterconnectKind.WIRED, 0, 9, False)
    kind = reader.choice(section, "kind", InterconnectKind, None, "interconnect.") or InterconnectKind.WIRED

    bandwidth = 0
    if "bandwidth_bits_per_cycle" in section and "bandwidth_gbit_s" in section:
        reader.violations.append(
            "interconnect sets both bandwidth_bits_per_cycle and bandwidth_gbit_s, give exactly one"
        )
    if "bandwidth_bits_per_cycle" in section:
        bandwidth = reader.value(section, "bandwidth_bits_per_cycle", 0, "interconnect.")
    elif "bandwidth_gbit_s" in section:
        gbit_s = reader.value(section, "bandwidth_gbit_s", 0.0, "interconnect.")
        if gbit_s > 0 and f_clock > 0:
            converted = bits_per_cycle(gbit_s, f_clock)
            if converted != int(converted):
                reader.violations.append(
                    f"interconnect.bandwidth_gbit_s = {gbit_s} is {converted} bit/cycle, "
                    "bandwidth must be a whole number of bits per cycle"
                )
            bandwidth = int(converted)
        else:
            reader.violations.append("interconnect.bandwidth_gbit_s must be > 0")
    else:
        reader.violations.append("missing required key interconnect.bandwidth_bits_per_cycle")

    wireless = kind == InterconnectKind.WIRELESS
    return InterconnectConfig(
        kind=kind,
        bandwidth_bits_per_cycle=bandwidth,
        latency_cycles=reader.value(section, "latency_cycles", 1 if wireless else 9, "interconnect."),
        broadcast_enabled=reader.value(section, "broadcast_enabled", wireless, "interconnect."),
        accounting=reader.choice(
            section, "accounting", Accounting, Accounting.AGGREGATE_SHARED, "interconnect."
        ),
        peer_links=reader.value(section, "peer_links", True, "interconnect."),
    )


def parse_config(text: str) -> ArchConfig:
    """
    Parse a YAML hardware description.

    :param text: Document text
    :return: Fully populated configuration, defaults applied
    :raises ConfigError: On syntax errors, unknown or missing keys and invariant violations
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        problem = getattr(e, "problem", None) or str(e)
        if mark is not None:
            raise ConfigError([f"syntax error at line {mark.line + 1}, column {mark.column + 1}: {problem}"])
        raise ConfigError([f"syntax error: {problem}"])

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(["configuration document must be a mapping"])

    reader = _SectionReader()
    reader.unknown(data, _TOP_KEYS)
    f_clock = reader.value(data, "f_clock", 0.0, required=True)
    n_clusters = reader.value(data, "n_clusters", 0, required=True)

    cluster_data = reader.section(data, "cluster", _CLUSTER_KEYS)
    ima_data = reader.section(cluster_data, "ima", _IMA_KEYS, "cluster.")
    ima = ImaConfig(
        **{
            name: reader.value(ima_data, name, getattr(ImaConfig, name), "cluster.ima.")
            for name in _IMA_KEYS
        }
    )
    cluster = ClusterConfig(
        ima=ima,
        **{
            name: reader.value(cluster_data, name, getattr(ClusterConfig, name), "cluster.")
            for name in _CLUSTER_KEYS
            if name != "ima"
        },
    )
    interconnect = _read_interconnect(reader, data, f_clock)
    l2_data = reader.section(data, "l2", _L2_KEYS)
    l2 = L2Config(**{name: reader.value(l2_data, name, getattr(L2Config, name), "l2.") for name in _L2_KEYS})

    if reader.violations:
        raise ConfigError(reader.violations)

    cfg = ArchConfig(f_clock=f_clock, n_clusters=n_clusters, cluster=cluster, interconnect=interconnect, l2=l2)
    violations = _violations(cfg)
    if violations:
        raise ConfigError(violations)
    return cfg


def config_to_dict(cfg: ArchConfig) -> Dict[str, Any]:
    def plain(value: Any) -> Any:
        if isinstance(value, enum.Enum):
            return value.value
        if isinstance(value, dict):
            return {key: plain(item) for key, item in value.items()}
        return value

    return plain(dataclasses.asdict(cfg))


def render_config(cfg: ArchConfig) -> str:
    """Canonical YAML rendering; parse_config(render_config(cfg)) == cfg."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, allow_unicode=True)


def load_config(path: Union[str, pathlib.Path]) -> ArchConfig:
    """
    Read and parse a configuration file.

    :param path: Path to a UTF-8 YAML document
    :raises OSError: When the file can not be read
    :raises ConfigError: When the document is invalid
    """
    path = pathlib.Path(path)
    cfg = parse_config(path.read_text(encoding="utf-8"))
    package_logger.info(
        f"Loaded {path}: {cfg.n_clusters} clusters, {cfg.interconnect.label} at {cfg.f_clock / 1e6:g} MHz"
    )
    return cfg


def default_config_path() -> pathlib.Path:
    return pathlib.Path(__file__).resolve().parent / "configs" / "default.yaml"


def default_config() -> ArchConfig:
    """The evaluated system: 350 MHz, 16 clusters, 256x256 IMA, wired 256 bit/cycle with 9-cycle latency."""
    return parse_config(default_config_path().read_text(encoding="utf-8"))


def with_interconnect(
    cfg: ArchConfig,
    kind: Optional[InterconnectKind] = None,
    bandwidth_bits_per_cycle: Optional[int] = None,
    latency_cycles: Optional[int] = None,
    broadcast_enabled: Optional[bool] = None,
    accounting: Optional[Accounting] = None,
) -> ArchConfig:
    changes = {
        "kind": kind,
        "bandwidth_bits_per_cycle": bandwidth_bits_per_cycle,
        "latency_cycles": latency_cycles,
        "broadcast_enabled": broadcast_enabled,
        "accounting": accounting,
    }
    interconnect = dataclasses.replace(
        cfg.interconnect, **{key: value for key, value in changes.items() if value is not None}
    )
    return dataclasses.replace(cfg, interconnect=interconnect)


def with_clusters(cfg: ArchConfig, n_clusters: int) -> ArchConfig:
    return dataclasses.replace(cfg, n_clusters=n_clusters)


def with_cluster_overrides(cfg: ArchConfig, **changes: Any) -> ArchConfig:
    return dataclasses.replace(cfg, cluster=dataclasses.replace(cfg.cluster, **changes))
