"""Configuration files, kernel snapshots and observable CSV streams."""
from __future__ import annotations

import configparser
import hashlib
import os
import struct
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import RECORD_FIELDS, EvolutionState, ObservableRecord
from .kernels import KernelOperator
from .lattice import MomentumLattice

OUTPUT_DIR_ENV = "BDFDYN_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


class SnapshotError(ValueError):
    pass


# configuration

# canonical key -> accepted spellings
ALIASES = {"cutoff": ("Λ",), "alpha": ("α",), "dt": ("Δt",), "lambda": ("λ",)}

INITIAL_MODES = ("vacuum", "charged_free", "charged_scf", "snapshot")


@dataclass
class LatticeConfig:
    h: float
    cutoff: float


@dataclass
class SourceConfig:
    Z: float = 0.0
    width: float = 1.0
    alpha: float = 0.05


@dataclass
class InitialConfig:
    mode: str = "vacuum"
    N: int = 0
    snapshot_path: Optional[str] = None


@dataclass
class EvolveConfig:
    dt: float
    n_steps: int
    record_interval: int = 1
    integrator: str = "unitary"
    idempotence_hard_limit: float = 1e-6


@dataclass
class ScfConfig:
    lam: float = 0.0
    N: Optional[int] = None
    tol: float = 1e-12
    max_iter: int = 200
    damping: float = 1.0


@dataclass
class OutputConfig:
    directory: str = "output"
    snapshot_interval: int = 0


@dataclass
class SimulationConfig:
    lattice: LatticeConfig
    source: SourceConfig = field(default_factory=SourceConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    evolve: Optional[EvolveConfig] = None
    scf: ScfConfig = field(default_factory=ScfConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def output_directory(self) -> str:
        return os.environ.get(OUTPUT_DIR_ENV) or self.output.directory


def _label(section, key):
    alias = ALIASES.get(key)
    if alias:
        return f"{section}.{key} ({section}.{alias[0]})"
    return f"{section}.{key}"


class _Section:
    def __init__(self, name, items):
        self.name = name
        self.items = {}
        canon = {a: k for k, al in ALIASES.items() for a in al}
        for key, value in items:
            key = canon.get(key, key)
            if key in self.items:
                raise ConfigError(f"{_label(name, key)}: given more than once")
            self.items[key] = value
        self.used = set()

    def get(self, key, kind, default=None, required=False):
        self.used.add(key)
        if key not in self.items:
            if required:
                raise ConfigError(f"{_label(self.name, key)}: required key is missing")
            return default
        raw = self.items[key].strip()
        try:
            if kind is int:
                value = int(raw)
            elif kind is float:
                value = float(raw)
                if not np.isfinite(value):
                    raise ValueError
            else:
                value = raw
        except ValueError:
            raise ConfigError(f"{_label(self.name, key)}: expected {kind.__name__}, got {raw!r}") from None
        return value

    def check(self, key, ok, msg):
        if not ok:
            raise ConfigError(f"{_label(self.name, key)}: {msg}")

    def finish(self):
        extra = sorted(set(self.items) - self.used)
        if extra:
            raise ConfigError(f"{_label(self.name, extra[0])}: unknown key")


SECTIONS = ("lattice", "source", "initial", "evolve", "scf", "output")


def parse_config(text: str) -> SimulationConfig:
    """Parse and validate an INI-style configuration document."""
    parser = configparser.ConfigParser(interpolation=None, strict=False)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{name}: unknown section")
    if not parser.has_section("lattice"):
        raise ConfigError("lattice: required section is missing")

    def section(name):
        items = parser.items(name) if parser.has_section(name) else []
        return _Section(name, items)

    s = section("lattice")
    lat = LatticeConfig(s.get("h", float, required=True), s.get("cutoff", float, required=True))
    s.check("h", lat.h > 0, "must be positive")
    s.check("cutoff", lat.cutoff > 0, "must be positive")
    s.finish()

    s = section("source")
    src = SourceConfig(s.get("Z", float, 0.0), s.get("width", float, 1.0), s.get("alpha", float, 0.05))
    s.check("width", src.width > 0, "must be positive")
    s.check("alpha", src.alpha >= 0, "must be >= 0")
    if src.alpha >= 4 / np.pi:
        warnings.warn(f"source.alpha = {src.alpha} >= 4/pi: no global-in-time bound", RuntimeWarning, stacklevel=2)
    s.finish()

    s = section("initial")
    ini = InitialConfig(s.get("mode", str, "vacuum"), s.get("N", int, 0), s.get("snapshot_path", str))
    s.check("mode", ini.mode in INITIAL_MODES, f"must be one of {', '.join(INITIAL_MODES)}")
    s.check("N", ini.N >= 0, "must be >= 0")
    if ini.mode == "snapshot":
        s.check("snapshot_path", bool(ini.snapshot_path), "required when mode = snapshot")
    s.finish()

    evo = None
    if parser.has_section("evolve"):
        s = section("evolve")
        evo = EvolveConfig(
            s.get("dt", float, required=True),
            s.get("n_steps", int, required=True),
            s.get("record_interval", int, 1),
            s.get("integrator", str, "unitary"),
            s.get("idempotence_hard_limit", float, 1e-6),
        )
        s.check("dt", evo.dt > 0, "must be positive")
        s.check("n_steps", evo.n_steps >= 0, "must be >= 0")
        s.check("record_interval", evo.record_interval >= 1, "must be >= 1")
        s.check("integrator", evo.integrator in ("unitary", "rk4"), "must be unitary or rk4")
        s.check("idempotence_hard_limit", evo.idempotence_hard_limit > 0, "must be positive")
        s.finish()

    s = section("scf")
    scf = ScfConfig(
        s.get("lambda", float, 0.0),
        s.get("N", int, None),
        s.get("tol", float, 1e-12),
        s.get("max_iter", int, 200),
        s.get("damping", float, 1.0),
    )
    s.check("N", scf.N is None or scf.N >= 0, "must be >= 0")
    s.check("tol", scf.tol > 0, "must be positive")
    s.check("max_iter", scf.max_iter >= 1, "must be >= 1")
    s.check("damping", 0 < scf.damping <= 1, "must lie in (0, 1]")
    s.finish()

    s = section("output")
    out = OutputConfig(s.get("directory", str, "output"), s.get("snapshot_interval", int, 0))
    s.check("snapshot_interval", out.snapshot_interval >= 0, "must be >= 0")
    s.finish()

    return SimulationConfig(lat, src, ini, evo, scf, out)


def load_config(path) -> SimulationConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# snapshots

MAGIC = b"BDFK"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIddQQd32s")


@dataclass
class SnapshotHeader:
    magic: bytes
    version: int
    h: float
    cutoff: float
    M: int
    step_index: int
    t: float
    checksum: bytes

    def pack(self) -> bytes:
        return HEADER.pack(self.magic, self.version, self.h, self.cutoff, self.M, self.step_index, self.t, self.checksum)

    @classmethod
    def unpack(cls, raw: bytes) -> "SnapshotHeader":
        return cls(*HEADER.unpack(raw))


def _payload(P: KernelOperator) -> bytes:
    m = P.lattice.size
    # (p, q, block row, block column), interleaved little-endian (re, im)
    blocks = P.data.reshape(m, 4, m, 4).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(blocks, dtype="<c16").tobytes()


def write_snapshot(state: EvolutionState, path) -> None:
    lat = state.lattice
    payload = _payload(state.P)
    header = SnapshotHeader(
        MAGIC, FORMAT_VERSION, lat.h, lat.cutoff, lat.size, state.step_index, state.t, hashlib.sha256(payload).digest()
    )
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header.pack())
        fh.write(payload)
    os.replace(tmp, path)


def read_snapshot_header(path) -> SnapshotHeader:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise SnapshotError(f"{path}: truncated header")
    header = SnapshotHeader.unpack(raw)
    if header.magic != MAGIC:
        raise SnapshotError(f"{path}: bad magic {header.magic!r}")
    if header.version != FORMAT_VERSION:
        raise SnapshotError(f"{path}: unsupported format version {header.version}")
    return header


def read_snapshot(path, lattice: MomentumLattice) -> EvolutionState:
    header = read_snapshot_header(path)
    for name, have, want in (("h", header.h, lattice.h), ("cutoff", header.cutoff, lattice.cutoff), ("M", header.M, lattice.size)):
        if have != want:
            raise SnapshotError(f"{path}: snapshot {name} = {have!r} does not match lattice {name} = {want!r}")
    m = lattice.size
    expected = m * m * 16 * 16
    with open(path, "rb") as fh:
        fh.seek(HEADER.size)
        payload = fh.read(expected + 1)
    if len(payload) != expected:
        kind = "truncated" if len(payload) < expected else "oversized"
        raise SnapshotError(f"{path}: {kind} payload ({len(payload)} bytes, expected {expected})")
    if hashlib.sha256(payload).digest() != header.checksum:
        raise SnapshotError(f"{path}: payload checksum mismatch")
    blocks = np.frombuffer(payload, dtype="<c16").reshape(m, m, 4, 4)
    data = np.ascontiguousarray(blocks.transpose(0, 2, 1, 3)).reshape(4 * m, 4 * m).astype(complex)
    P = KernelOperator(lattice, data, hermitian=True)
    return EvolutionState.from_projector(P, header.t, header.step_index)


# observables

CSV_HEADER = ",".join(RECORD_FIELDS)


def _row(record: ObservableRecord) -> str:
    return ",".join(format(float(v), ".17g") for v in record.as_tuple())


class CsvSink:
    """Callable sink writing one CSV row per record; appends when ``append`` is set."""

    def __init__(self, path, append: bool = False):
        self.path = path
        fresh = not (append and os.path.exists(path) and os.path.getsize(path) > 0)
        self._fh = open(path, "a" if not fresh else "w", encoding="utf-8", newline="")
        if fresh:
            self._fh.write(CSV_HEADER + "\n")

    def __call__(self, record: ObservableRecord):
        self._fh.write(_row(record) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit_observables(records, path) -> None:
    with CsvSink(path) as sink:
        for r in records:
            sink(r)


def read_observables(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        rows = [[float(x) for x in line.split(",")] for line in fh if line.strip()]
    return np.array(rows, dtype=float).reshape(-1, len(RECORD_FIELDS))
