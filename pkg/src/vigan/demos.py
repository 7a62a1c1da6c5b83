"""Expert demonstration sets and the VIGD container.

Layout (all integers little-endian)::

    b"VIGD"  u32 version
    u32 len, env id (utf-8)
    u8 modality (0 state_action, 1 state_only, 2 frames)
    u32 n_traj, u32 state_dim, u32 action_dim, u32 width, u32 height, u32 channels
    per trajectory:
        u32 T                       (number of transitions)
        state_action: (T+1)*state_dim f64 states, T*action_dim f64 actions, T f64 log-probs
        state_only:   (T+1)*state_dim f64 states
        frames:       (T+1)*height*width*channels u8 pixels

Trajectories carry ordering only, never timestamps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"VIGD"
VERSION = 1
MODALITIES = ("state_action", "state_only", "frames")


class DemoFormatError(ValueError):
    pass


class BadMagicError(DemoFormatError):
    pass


class VersionMismatchError(DemoFormatError):
    pass


class TruncatedPayloadError(DemoFormatError):
    pass


@dataclass
class DemoTrajectory:
    states: np.ndarray | None = None  # (T+1, state_dim)
    actions: np.ndarray | None = None  # (T, action_dim)
    log_probs: np.ndarray | None = None  # (T,)
    frames: np.ndarray | None = None  # (T+1, H, W, C)

    def __len__(self) -> int:
        ref = self.frames if self.frames is not None else self.states
        return len(ref) - 1

    def __eq__(self, other) -> bool:
        if not isinstance(other, DemoTrajectory):
            return NotImplemented
        for name in ("states", "actions", "log_probs", "frames"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and (a.shape != b.shape or a.dtype != b.dtype or a.tobytes() != b.tobytes()):
                return False
        return True


@dataclass
class DemoSet:
    env_id: str
    modality: str
    trajectories: list[DemoTrajectory] = field(default_factory=list)
    frame_shape: tuple[int, int, int] | None = None  # (H, W, C) for frames

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.modality == "frames" and self.frame_shape is None and self.trajectories:
            self.frame_shape = tuple(self.trajectories[0].frames.shape[1:])
        for i, tr in enumerate(self.trajectories):
            self._validate(i, tr)

    def _validate(self, i: int, tr: DemoTrajectory) -> None:
        need = {"state_action": ("states", "actions", "log_probs"), "state_only": ("states",),
                "frames": ("frames",)}[self.modality]
        for name in ("states", "actions", "log_probs", "frames"):
            present = getattr(tr, name) is not None
            if present != (name in need):
                raise ValueError(f"trajectory {i}: field {name!r} {'unexpected' if present else 'missing'} "
                                 f"for {self.modality} demos")
        if len(tr) < 1:
            raise ValueError(f"trajectory {i} has no transitions")
        if self.modality == "frames":
            if tr.frames.dtype != np.uint8 or tuple(tr.frames.shape[1:]) != tuple(self.frame_shape):
                raise ValueError(f"trajectory {i}: frames must be uint8 {self.frame_shape}")
        if self.modality == "state_action":
            if len(tr.actions) != len(tr) or len(tr.log_probs) != len(tr):
                raise ValueError(f"trajectory {i}: action arrays do not match {len(tr)} transitions")

    @property
    def n_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @property
    def state_dim(self) -> int:
        return 0 if self.modality == "frames" else int(self.trajectories[0].states.shape[1])

    @property
    def action_dim(self) -> int:
        return int(self.trajectories[0].actions.shape[1]) if self.modality == "state_action" else 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, DemoSet):
            return NotImplemented
        return (self.env_id == other.env_id and self.modality == other.modality
                and self.frame_shape == other.frame_shape and self.trajectories == other.trajectories)


def from_trajectories(env_id: str, trajs, modality: str) -> DemoSet:
    """Convert rollout trajectories into a demo set of the given modality."""
    out = []
    for tr in trajs:
        if modality == "state_action":
            out.append(DemoTrajectory(states=tr.states.copy(), actions=tr.actions.copy(), log_probs=tr.log_probs.copy()))
        elif modality == "state_only":
            out.append(DemoTrajectory(states=tr.states.copy()))
        elif modality == "frames":
            if tr.frames is None:
                raise ValueError("frames modality needs rendered trajectories")
            out.append(DemoTrajectory(frames=tr.frames.copy()))
        else:
            raise ValueError(f"modality must be one of {MODALITIES}, got {modality!r}")
    return DemoSet(env_id, modality, out)


def dumps_demos(demos: DemoSet) -> bytes:
    env = demos.env_id.encode("utf-8")
    h, w, c = demos.frame_shape if demos.frame_shape is not None else (0, 0, 0)
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(env)), env,
             struct.pack("<B", MODALITIES.index(demos.modality)),
             struct.pack("<6I", len(demos.trajectories), demos.state_dim, demos.action_dim, w, h, c)]
    for tr in demos.trajectories:
        parts.append(struct.pack("<I", len(tr)))
        if demos.modality == "frames":
            parts.append(np.ascontiguousarray(tr.frames, dtype=np.uint8).tobytes())
            continue
        parts.append(np.ascontiguousarray(tr.states, dtype="<f8").tobytes())
        if demos.modality == "state_action":
            parts.append(np.ascontiguousarray(tr.actions, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(tr.log_probs, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob, self.pos = blob, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedPayloadError(f"truncated payload while reading {what}: need {n} bytes at offset "
                                        f"{self.pos}, file has {len(self.blob)}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, count: int, dtype: str, shape, what: str) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(size, what), dtype=dtype).reshape(shape).astype(dtype.lstrip("<"))


def loads_demos(blob: bytes) -> DemoSet:
    rd = _Reader(blob)
    magic = rd.take(4, "magic") if len(blob) >= 4 else blob
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = rd.unpack("<I", "version")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported VIGD version {version}, this build reads {VERSION}")
    (n,) = rd.unpack("<I", "env id length")
    env_id = rd.take(n, "env id").decode("utf-8")
    (mod,) = rd.unpack("<B", "modality")
    if mod >= len(MODALITIES):
        raise DemoFormatError(f"unknown modality code {mod}")
    modality = MODALITIES[mod]
    n_traj, sd, ad, w, h, c = rd.unpack("<6I", "header counts")
    trajs = []
    for i in range(n_traj):
        (T,) = rd.unpack("<I", f"trajectory {i} length")
        if modality == "frames":
            trajs.append(DemoTrajectory(frames=rd.array((T + 1) * h * w * c, "u1", (T + 1, h, w, c), f"frames of {i}")))
            continue
        states = rd.array((T + 1) * sd, "<f8", (T + 1, sd), f"states of {i}")
        if modality == "state_action":
            actions = rd.array(T * ad, "<f8", (T, ad), f"actions of {i}")
            log_probs = rd.array(T, "<f8", (T,), f"log-probs of {i}")
            trajs.append(DemoTrajectory(states=states, actions=actions, log_probs=log_probs))
        else:
            trajs.append(DemoTrajectory(states=states))
    if rd.pos != len(blob):
        raise DemoFormatError(f"{len(blob) - rd.pos} trailing bytes after the last trajectory")
    return DemoSet(env_id, modality, trajs, (h, w, c) if modality == "frames" else None)


def save_demos(demos: DemoSet, path) -> None:
    Path(path).write_bytes(dumps_demos(demos))


def load_demos(path) -> DemoSet:
    return loads_demos(Path(path).read_bytes())


def header_size(env_id: str) -> int:
    return 4 + 4 + 4 + len(env_id.encode("utf-8")) + 1 + 24


def phase_shift(demos: DemoSet, shift: int | None = None) -> DemoSet:
    """Rotate every frame trajectory cyclically; default shift is half its length."""
    if demos.modality != "frames":
        raise ValueError("phase shifting applies to frames demos")
    out = []
    for tr in demos.trajectories:
        k = len(tr.frames) // 2 if shift is None else shift % len(tr.frames)
        out.append(DemoTrajectory(frames=np.roll(tr.frames, -k, axis=0)))
    return DemoSet(demos.env_id, "frames", out, demos.frame_shape)


def shuffle_demos(demos: DemoSet, rng: np.random.Generator) -> DemoSet:
    """Permute trajectory order and rotate each to a random starting phase."""
    order = rng.permutation(len(demos.trajectories))
    out = []
    for i in order:
        tr = demos.trajectories[i]
        out.append(DemoTrajectory(frames=np.roll(tr.frames, -int(rng.integers(len(tr.frames))), axis=0)))
    return DemoSet(demos.env_id, "frames", out, demos.frame_shape)
