"""Flat parameter vectors with a shared / supervised-head / unsupervised-head partition.

Layout is always ``[theta | phi | eta]``: backbone parameters first, then the
supervised head, then the unsupervised head.  Every update returns a new
:class:`ParamVector`; the underlying arrays are marked read-only.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument, NumericError

SEGMENTS = ("theta", "phi", "eta")
MAGIC = b"BLJPARAM"

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


@dataclass(frozen=True)
class Partition:
    d_theta: int
    d_phi: int
    d_eta: int

    def __post_init__(self):
        if min(self.d_theta, self.d_phi, self.d_eta) < 0:
            raise InvalidArgument(f"negative segment size in {self}")

    @property
    def total(self) -> int:
        return self.d_theta + self.d_phi + self.d_eta

    def slice(self, segment: str) -> slice:
        if segment == "theta":
            return slice(0, self.d_theta)
        if segment == "phi":
            return slice(self.d_theta, self.d_theta + self.d_phi)
        if segment == "eta":
            return slice(self.d_theta + self.d_phi, self.total)
        if segment == "all":
            return slice(0, self.total)
        raise InvalidArgument(f"unknown segment {segment!r}")

    def mask(self, *segments: str) -> np.ndarray:
        out = np.zeros(self.total, dtype=bool)
        for seg in segments:
            out[self.slice(seg)] = True
        return out


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ParamVector:
    data: np.ndarray
    partition: Partition

    def __post_init__(self):
        data = self.data
        if not (isinstance(data, np.ndarray) and data.dtype == np.float64 and not data.flags.writeable):
            data = _frozen(data)
            object.__setattr__(self, "data", data)
        if data.ndim != 1 or data.shape[0] != self.partition.total:
            raise InvalidArgument(
                f"parameter length {data.shape} does not match partition total {self.partition.total}"
            )

    def segment(self, name: str) -> np.ndarray:
        return self.data[self.partition.slice(name)]

    @property
    def theta(self) -> np.ndarray:
        return self.segment("theta")

    @property
    def phi(self) -> np.ndarray:
        return self.segment("phi")

    @property
    def eta(self) -> np.ndarray:
        return self.segment("eta")

    def replace(self, data) -> "ParamVector":
        return ParamVector(_frozen(data), self.partition)

    def digest(self) -> bytes:
        return hashlib.blake2b(self.data.tobytes(), digest_size=16).digest()

    def __len__(self):
        return self.partition.total

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.partition == other.partition and self.data.tobytes() == other.data.tobytes()

    __hash__ = None


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def tag_hash(tag) -> int:
    digest = hashlib.blake2b(str(tag).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """SplitMix64 generator.

    Output ``i`` (1-based) after construction is ``mix(seed + i * GOLDEN)``, so
    blocks are produced with vectorized uint64 arithmetic and still match the
    sequential definition exactly.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def derive(self, *tags) -> "Rng":
        """Independent child stream keyed on ``tags``; does not advance ``self``."""
        state = self.state
        for tag in tags:
            state = _mix64((state ^ tag_hash(tag)) & _MASK64)
        return Rng(state)

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        return _mix64(self.state)

    def u64(self, n: int) -> np.ndarray:
        n = int(n)
        if n < 0:
            raise InvalidArgument("negative draw count")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * np.uint64(_GOLDEN)
        self.state = (self.state + n * _GOLDEN) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniform(self, shape=()) -> np.ndarray:
        """Doubles in [0, 1) from the top 53 bits."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return u.reshape(shape)

    def normal(self, shape=()) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        u1 = 1.0 - self.uniform(n)
        u2 = self.uniform(n)
        return (np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)).reshape(shape)

    def bernoulli(self, p: float, shape) -> np.ndarray:
        return self.uniform(shape) < p

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.u64(n), kind="stable")

    def integers(self, high: int, shape=()) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        return (self.u64(n) % np.uint64(high)).astype(np.int64).reshape(shape)


def derive_seed(seed: int, *tags) -> int:
    """64-bit seed for the child stream ``Rng(seed).derive(*tags)``."""
    return Rng(seed).derive(*tags).state


@dataclass(frozen=True)
class InitScheme:
    kind: str = "uniform"
    scale: float = 0.5

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian", "zeros"):
            raise InvalidArgument(f"unknown init scheme {self.kind!r}")
        if self.scale < 0:
            raise InvalidArgument("init scale must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "InitScheme":
        """``"uniform:0.1"``, ``"gaussian:0.5"`` or ``"zeros"``."""
        kind, _, scale = text.partition(":")
        return cls(kind.strip(), float(scale) if scale else (0.0 if kind.strip() == "zeros" else 0.5))

    def __str__(self):
        return "zeros" if self.kind == "zeros" else f"{self.kind}:{self.scale!r}"


def draw(scheme: InitScheme, n: int, rng: Rng) -> np.ndarray:
    if scheme.kind == "zeros":
        return np.zeros(n)
    if scheme.kind == "uniform":
        return scheme.scale * (2.0 * rng.uniform(n) - 1.0)
    return scheme.scale * rng.normal(n)


def init_params(partition: Partition, scheme: InitScheme, seed: int) -> ParamVector:
    if partition.total < 1:
        raise InvalidArgument("partition has no parameters")
    return ParamVector(_frozen(draw(scheme, partition.total, Rng(seed))), partition)


def reinit_segment(params: ParamVector, segment: str, scheme: InitScheme, seed: int) -> ParamVector:
    sl = params.partition.slice(segment)
    data = params.data.copy()
    data[sl] = draw(scheme, sl.stop - sl.start, Rng(seed))
    return params.replace(data)


def check_finite(values, what="parameters"):
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise NumericError(f"non-finite {what}", coordinate=bad)


def _check_length(params: ParamVector, g: np.ndarray):
    if g.shape != (params.partition.total,):
        raise InvalidArgument(f"gradient shape {g.shape} does not match partition total {params.partition.total}")


def axpy_segment(v: ParamVector, segment, scale: float, g: np.ndarray) -> ParamVector:
    """``v - scale * g`` on the selected segment(s); other entries untouched.

    ``segment`` is one segment name, ``"all"``, or a tuple of names.
    """
    g = np.asarray(g, dtype=np.float64)
    _check_length(v, g)
    segments = (segment,) if isinstance(segment, str) else tuple(segment)
    data = v.data.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for seg in segments:
            sl = v.partition.slice(seg)
            data[sl] = v.data[sl] - scale * g[sl]
    check_finite(data)
    return v.replace(data)


class GradNorms(NamedTuple):
    theta: float
    phi: float
    eta: float
    all: float


def grad_norms(g: np.ndarray, partition: Partition) -> GradNorms:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (partition.total,):
        raise InvalidArgument(f"gradient shape {g.shape} does not match partition total {partition.total}")
    parts = [float(np.linalg.norm(g[partition.slice(s)])) for s in SEGMENTS]
    return GradNorms(*parts, float(np.linalg.norm(g)))


def save_params(params: ParamVector, path) -> None:
    """Write the BLJPARAM snapshot format atomically."""
    from .io import atomic_write_bytes

    atomic_write_bytes(path, params_to_bytes(params))


def params_to_bytes(params: ParamVector) -> bytes:
    p = params.partition
    header = MAGIC + struct.pack("<QQQ", p.d_theta, p.d_phi, p.d_eta)
    return header + params.data.astype("<f8").tobytes()


def params_from_bytes(blob: bytes) -> ParamVector:
    if len(blob) < 32 or blob[:8] != MAGIC:
        raise InvalidArgument("not a BLJPARAM snapshot")
    d_theta, d_phi, d_eta = struct.unpack("<QQQ", blob[8:32])
    partition = Partition(d_theta, d_phi, d_eta)
    body = blob[32:]
    if len(body) != 8 * partition.total:
        raise InvalidArgument("snapshot body length does not match its header")
    return ParamVector(np.frombuffer(body, dtype="<f8").astype(np.float64), partition)


def load_params(path) -> ParamVector:
    return params_from_bytes(Path(path).read_bytes())
