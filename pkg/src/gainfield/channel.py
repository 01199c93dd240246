"""Channel instances for the K-user MISO interference channel.

A channel instance holds one N-antenna vector per (transmitter,
receiver) pair, a receiver noise power, and the coupling profile that
sets per-link variances. Entries are circularly-symmetric complex
Gaussians drawn from per-link substreams of a named 64-bit generator,
so instances are reproducible across platforms from (seed, k, l) alone.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ParseError",
    "CouplingProfile",
    "ChannelSet",
    "LocalCSI",
    "link_rng",
    "generate_instance",
    "local_view",
    "serialize",
    "deserialize",
    "write_instance",
    "read_instance",
]

_MAGIC = b"GFCHSET1"
_VERSION = 1
_MAX_DIM = 64
_PROFILE_CODES = {"chain_geometric": 0, "uniform": 1, "custom": 2}
_PROFILE_NAMES = {v: k for k, v in _PROFILE_CODES.items()}


class ParseError(ValueError):
    """Malformed instance file; `offset` is the failing byte position."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class CouplingProfile:
    """Per-link variance rule.

    kind "chain_geometric": direct links have unit variance and the
    cross link (k, l) has variance cross_scale * 10**(1 - 2|k - l|),
    i.e. users sit on a line and coupling decays geometrically with
    index distance. kind "uniform": every cross link has variance
    cross_scale. kind "custom": an explicit (K, K) table.
    """

    kind: str = "chain_geometric"
    cross_scale: float = 1.0
    table: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind not in _PROFILE_CODES:
            raise ValueError(f"unknown coupling profile kind {self.kind!r}")
        if self.kind == "custom":
            if self.table is None:
                raise ValueError("custom profile requires a variance table")
            t = np.asarray(self.table, dtype=np.float64)
            if t.ndim != 2 or t.shape[0] != t.shape[1] or np.any(t <= 0):
                raise ValueError("variance table must be square and positive")
            object.__setattr__(self, "table", t)

    def variances(self, n_users: int) -> np.ndarray:
        """(K, K) table; entry [k, l] is the tx k -> rx l variance."""
        if self.kind == "custom":
            if self.table.shape[0] != n_users:
                raise ValueError(
                    f"variance table is {self.table.shape[0]}x"
                    f"{self.table.shape[0]}, expected {n_users}"
                )
            return self.table.copy()
        idx = np.arange(n_users)
        dist = np.abs(idx[:, None] - idx[None, :])
        if self.kind == "uniform":
            v = np.full((n_users, n_users), self.cross_scale)
        else:
            v = self.cross_scale * 10.0 ** (1.0 - 2.0 * dist)
        np.fill_diagonal(v, 1.0)
        return v


@dataclass(frozen=True)
class ChannelSet:
    """Immutable bundle of channel vectors for one instance.

    h[k, l] is the N-vector from transmitter k to receiver l;
    gains[k, l] = ||h[k, l]||^2. sigma2 is the receiver noise power.
    """

    h: np.ndarray
    sigma2: float
    seed: int
    profile: CouplingProfile
    gains: np.ndarray = field(init=False)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.complex128)
        if h.ndim != 3 or h.shape[0] != h.shape[1]:
            raise ValueError(f"expected (K, K, N) vectors, got {h.shape}")
        if self.sigma2 <= 0:
            raise ValueError(f"noise power must be positive, got {self.sigma2}")
        h.setflags(write=False)
        gains = np.einsum("kli,kli->kl", h.conj(), h).real
        gains.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "gains", gains)

    @property
    def n_users(self) -> int:
        return self.h.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.h.shape[2]


@dataclass(frozen=True)
class LocalCSI:
    """What transmitter k is allowed to know about the channel.

    Outgoing vectors h[k, l] for every receiver l, plus the scalar
    incoming gains ||h[l, k]||^2; never the incoming vectors themselves.
    """

    k: int
    outgoing: np.ndarray
    incoming_gains: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.outgoing.setflags(write=False)
        self.incoming_gains.setflags(write=False)


def link_rng(seed: int, k: int, l: int, attempt: int = 0) -> np.random.Generator:
    """The documented stream-splitting rule.

    Link (k, l) of the instance with a given master seed draws from
    PCG64 keyed by SeedSequence(seed, spawn_key=(k, l, attempt));
    `attempt` increments when a degenerate draw is rejected.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(k, l, attempt))
    return np.random.Generator(np.random.PCG64(ss))


def _sample_link(seed, k, l, n, variance, min_norm2=0.0):
    scale = np.sqrt(variance / 2.0)
    for attempt in range(64):
        rng = link_rng(seed, k, l, attempt)
        flat = rng.standard_normal(2 * n)
        vec = scale * (flat[0::2] + 1j * flat[1::2])
        if float(np.vdot(vec, vec).real) >= min_norm2:
            return vec
    raise RuntimeError(
        f"could not draw link ({k},{l}) with squared norm >= {min_norm2}"
    )


def generate_instance(
    n_users: int,
    n_antennas: int,
    sigma2: float = 1e-2,
    seed: int = 0,
    profile: CouplingProfile | None = None,
    min_direct_gain: float = 1e-9,
) -> ChannelSet:
    """Draw a reproducible channel instance.

    Each entry of h[k, l] is an independent circularly-symmetric
    complex Gaussian with the profile's per-link variance: 2N standard
    normals in (re, im) antenna order scaled by sqrt(variance / 2).
    Direct links whose squared norm falls below `min_direct_gain` are
    redrawn from the next attempt substream.
    """
    if not (1 <= n_users <= _MAX_DIM and 1 <= n_antennas <= _MAX_DIM):
        raise ValueError(f"dimensions out of range: K={n_users}, N={n_antennas}")
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must fit an unsigned 64-bit integer")
    profile = profile or CouplingProfile()
    var = profile.variances(n_users)
    h = np.empty((n_users, n_users, n_antennas), dtype=np.complex128)
    for k in range(n_users):
        for l in range(n_users):
            floor = min_direct_gain if k == l else 0.0
            h[k, l] = _sample_link(seed, k, l, n_antennas, var[k, l], floor)
    return ChannelSet(h=h, sigma2=sigma2, seed=seed, profile=profile)


def local_view(cs: ChannelSet, k: int) -> LocalCSI:
    """Local channel knowledge of transmitter k."""
    if not 0 <= k < cs.n_users:
        raise ValueError(f"user index {k} out of range")
    return LocalCSI(
        k=k,
        outgoing=cs.h[k].copy(),
        incoming_gains=cs.gains[:, k].copy(),
        sigma2=cs.sigma2,
    )


# --- serialization -----------------------------------------------------

def serialize(cs: ChannelSet) -> bytes:
    """Binary form: self-describing header + row-major (re, im) pairs."""
    head = bytearray()
    head += _MAGIC
    head += struct.pack("<IIIdQ", _VERSION, cs.n_users, cs.n_antennas,
                        cs.sigma2, cs.seed)
    head += struct.pack("<Id", _PROFILE_CODES[cs.profile.kind],
                        cs.profile.cross_scale)
    if cs.profile.kind == "custom":
        head += cs.profile.table.astype("<f8").tobytes()
    pairs = np.empty((cs.h.size, 2), dtype="<f8")
    flat = cs.h.reshape(-1)
    pairs[:, 0] = flat.real
    pairs[:, 1] = flat.imag
    return bytes(head) + pairs.tobytes()


def _take(buf: bytes, offset: int, size: int, what: str):
    if offset + size > len(buf):
        raise ParseError(f"truncated while reading {what}", offset)
    return buf[offset : offset + size], offset + size


def _deserialize_binary(buf: bytes) -> ChannelSet:
    raw, off = _take(buf, 0, 8, "magic")
    if raw != _MAGIC:
        raise ParseError(f"bad magic {raw!r}", 0)
    raw, off = _take(buf, off, struct.calcsize("<IIIdQ"), "header")
    version, k, n, sigma2, seed = struct.unpack("<IIIdQ", raw)
    if version != _VERSION:
        raise ParseError(f"unsupported version {version}", 8)
    if not (1 <= k <= _MAX_DIM and 1 <= n <= _MAX_DIM):
        raise ParseError(f"dimensions out of range: K={k}, N={n}", 12)
    raw, off = _take(buf, off, struct.calcsize("<Id"), "coupling profile")
    code, cross_scale = struct.unpack("<Id", raw)
    if code not in _PROFILE_NAMES:
        raise ParseError(f"unknown profile code {code}", off - 12)
    if code == _PROFILE_CODES["custom"]:
        raw, off = _take(buf, off, 8 * k * k, "variance table")
        table = np.frombuffer(raw, dtype="<f8").reshape(k, k).copy()
        profile = CouplingProfile("custom", cross_scale, table)
    else:
        profile = CouplingProfile(_PROFILE_NAMES[code], cross_scale)
    raw, off = _take(buf, off, 16 * k * k * n, "channel entries")
    pairs = np.frombuffer(raw, dtype="<f8").reshape(-1, 2)
    h = (pairs[:, 0] + 1j * pairs[:, 1]).reshape(k, k, n)
    if off != len(buf):
        raise ParseError(f"{len(buf) - off} trailing bytes", off)
    return ChannelSet(h=h, sigma2=sigma2, seed=seed, profile=profile)


def _deserialize_json(text: str) -> ChannelSet:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", e.pos) from e
    try:
        if doc["format"] != _MAGIC.decode():
            raise ParseError(f"bad format tag {doc['format']!r}", 0)
        prof = doc["profile"]
        table = np.array(prof["table"]) if "table" in prof else None
        profile = CouplingProfile(
            prof["kind"], prof.get("cross_scale", 1.0), table
        )
        arr = np.array(doc["h"], dtype=np.float64)
        h = arr[..., 0] + 1j * arr[..., 1]
        return ChannelSet(
            h=h, sigma2=doc["sigma2"], seed=doc["seed"], profile=profile
        )
    except (KeyError, TypeError, IndexError) as e:
        raise ParseError(f"missing or malformed field: {e}", 0) from e


def deserialize(data: bytes | str) -> ChannelSet:
    """Parse either the binary form or its JSON mirror."""
    if isinstance(data, str):
        return _deserialize_json(data)
    if data[:1] == b"{":
        return _deserialize_json(data.decode("utf-8"))
    return _deserialize_binary(data)


def to_json(cs: ChannelSet) -> str:
    """JSON mirror of the binary format (exact float round trip)."""
    doc = {
        "format": _MAGIC.decode(),
        "version": _VERSION,
        "K": cs.n_users,
        "N": cs.n_antennas,
        "sigma2": cs.sigma2,
        "seed": cs.seed,
        "profile": {"kind": cs.profile.kind,
                    "cross_scale": cs.profile.cross_scale},
        "h": [
            [[[float(z.real), float(z.imag)] for z in cs.h[k, l]]
             for l in range(cs.n_users)]
            for k in range(cs.n_users)
        ],
    }
    if cs.profile.kind == "custom":
        doc["profile"]["table"] = cs.profile.table.tolist()
    return json.dumps(doc)


def write_instance(cs: ChannelSet, path: str) -> None:
    if str(path).endswith(".json"):
        with open(path, "w") as f:
            f.write(to_json(cs))
    else:
        with open(path, "wb") as f:
            f.write(serialize(cs))


def read_instance(path: str) -> ChannelSet:
    with open(path, "rb") as f:
        return deserialize(f.read())
