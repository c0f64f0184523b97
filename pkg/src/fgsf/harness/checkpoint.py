"""Binary checkpoints of a training loop.

Layout (all integers little-endian)::

    b"FGSF"  u32 version
    u32 n    then n arrays:   u16 name_len, name, u8 ndim, u64 dims[ndim], f64 data
    u32 n    then n counters: u16 name_len, name, i64 value
    u32 n    then n RNGs:     u16 name_len, name, u128 state, u128 inc, u8 has_uint32, u32 uinteger
    u32 n    then n blobs:    u16 name_len, name, u32 size, bytes

Entries are written in a fixed order, so saving a loaded checkpoint
reproduces the original file byte for byte.
"""

from __future__ import annotations

import configparser
import io
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fgsf.env import make_env
from fgsf.harness.config import RunConfig, build_config, config_to_dict, dump_config
from fgsf.loop import CSV_COLUMNS, STREAMS, LoopState
from fgsf.metrics import WeightSnapshot
from fgsf.ndmath import Mlp
from fgsf.sac import Adam, ReplayBuffer, SacAgent

MAGIC = b"FGSF"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)
    rng_states: dict[str, dict] = field(default_factory=dict)
    blobs: dict[str, bytes] = field(default_factory=dict)

    def config(self) -> RunConfig:
        """The run configuration stored with the checkpoint."""
        if "config" not in self.blobs:
            raise CheckpointError("checkpoint has no stored config")
        try:
            return _config_from_blob(self.blobs["config"])
        except (configparser.Error, UnicodeDecodeError, ValueError) as exc:
            raise CheckpointError(f"stored config is unreadable: {exc}") from exc


# ---------------------------------------------------------------------------
# encoding


def _name(buf: io.BytesIO, name: str) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def encode(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(ckpt.arrays)))
    for name, arr in ckpt.arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        _name(buf, name)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    buf.write(struct.pack("<I", len(ckpt.counters)))
    for name, value in ckpt.counters.items():
        _name(buf, name)
        buf.write(struct.pack("<q", int(value)))
    buf.write(struct.pack("<I", len(ckpt.rng_states)))
    for name, st in ckpt.rng_states.items():
        if st["bit_generator"] != "PCG64":
            raise CheckpointError(f"stream {name}: only PCG64 states are supported")
        _name(buf, name)
        buf.write(int(st["state"]["state"]).to_bytes(16, "little"))
        buf.write(int(st["state"]["inc"]).to_bytes(16, "little"))
        buf.write(struct.pack("<BI", int(st["has_uint32"]), int(st["uinteger"])))
    buf.write(struct.pack("<I", len(ckpt.blobs)))
    for name, blob in ckpt.blobs.items():
        _name(buf, name)
        buf.write(struct.pack("<I", len(blob)))
        buf.write(blob)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("corrupt entry name") from exc


def decode(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if len(data) < len(MAGIC) and MAGIC.startswith(data):
        raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(data)} (inside the magic)")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, this build reads version {VERSION}")
    ckpt = Checkpoint()
    (n,) = r.unpack("<I")
    for _ in range(n):
        name = r.name()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        ckpt.arrays[name] = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    (n,) = r.unpack("<I")
    for _ in range(n):
        name = r.name()
        (ckpt.counters[name],) = r.unpack("<q")
    (n,) = r.unpack("<I")
    for _ in range(n):
        name = r.name()
        state = int.from_bytes(r.take(16), "little")
        inc = int.from_bytes(r.take(16), "little")
        has_uint32, uinteger = r.unpack("<BI")
        ckpt.rng_states[name] = {
            "bit_generator": "PCG64", "state": {"state": state, "inc": inc},
            "has_uint32": has_uint32, "uinteger": uinteger,
        }
    (n,) = r.unpack("<I")
    for _ in range(n):
        name = r.name()
        (size,) = r.unpack("<I")
        ckpt.blobs[name] = r.take(size)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint payload")
    return ckpt


def write_atomic(path: str | Path, data: bytes) -> None:
    """Write to a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    write_atomic(path, encode(ckpt))


def read_checkpoint(path: str | Path) -> Checkpoint:
    return decode(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# loop state <-> checkpoint


def _put_net(arrays: dict, prefix: str, net: Mlp) -> None:
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}.W{i}"] = w
        arrays[f"{prefix}.b{i}"] = b


def _get_net(arrays: dict, prefix: str, net: Mlp) -> None:
    for i in range(net.n_layers):
        for kind, dest in (("W", net.weights), ("b", net.biases)):
            arr = arrays[f"{prefix}.{kind}{i}"]
            if arr.shape != dest[i].shape:
                raise CheckpointError(f"{prefix}.{kind}{i}: shape {arr.shape} != {dest[i].shape}")
            dest[i][...] = arr


def _put_adam(arrays: dict, counters: dict, prefix: str, opt: Adam) -> None:
    for i, (m, v) in enumerate(zip(opt.m, opt.v)):
        arrays[f"{prefix}.m{i}"] = m
        arrays[f"{prefix}.v{i}"] = v
    counters[f"{prefix}.t"] = opt.t


def _get_adam(arrays: dict, counters: dict, prefix: str, opt: Adam) -> None:
    for i in range(len(opt.m)):
        opt.m[i][...] = arrays[f"{prefix}.m{i}"]
        opt.v[i][...] = arrays[f"{prefix}.v{i}"]
    opt.t = counters[f"{prefix}.t"]


_BUFFER_FIELDS = ("obs", "action", "reward", "next_obs", "done")


def capture(state: LoopState, rows: list[dict] | None = None) -> Checkpoint:
    """Snapshot everything the loop needs to continue bit-for-bit."""
    ag = state.agent
    arrays: dict[str, np.ndarray] = {}
    counters: dict[str, int] = {}
    _put_net(arrays, "actor", ag.policy.net)
    for name, net in zip(("q1", "q2", "q1_target", "q2_target"), ag.critic.nets + ag.target_critic.nets):
        _put_net(arrays, name, net)
    arrays["log_alpha"] = ag.log_alpha
    _put_adam(arrays, counters, "adam.actor", ag.actor_opt)
    _put_adam(arrays, counters, "adam.critic", ag.critic_opt)
    _put_adam(arrays, counters, "adam.alpha", ag.alpha_opt)
    buf = state.buffer
    for f in _BUFFER_FIELDS:
        arrays[f"buffer.{f}"] = getattr(buf, f)[: buf.size]
    counters["buffer.cursor"] = buf.cursor
    counters["buffer.size"] = buf.size
    for key, value in state.env.get_state().items():
        arrays[f"env.{key}"] = np.array(float(value))
    arrays["loop.obs"] = state.obs
    arrays["loop.episode_return"] = np.array(state.episode_return)
    arrays["loop.pending_returns"] = np.array(state.pending_returns, dtype=np.float64)
    arrays["loop.eval_records"] = np.array(state.eval_records, dtype=np.float64).reshape(-1, 3)
    arrays["loop.elapsed_ms"] = np.array(state.wall_ms())
    for kind, snap in state.snapshots.items():
        arrays[f"snapshot.{kind}"] = snap.values
        counters[f"snapshot.{kind}.step"] = snap.step
    arrays["log.rows"] = np.array([[r[c] for c in CSV_COLUMNS] for r in rows or []],
                                  dtype=np.float64).reshape(-1, len(CSV_COLUMNS))
    counters["loop.env_steps"] = state.env_steps
    counters["loop.grad_steps"] = state.grad_steps
    counters["loop.episodes"] = state.episodes
    rngs = {name: state.rngs[name].bit_generator.state for name in STREAMS}
    blobs = {"config": dump_config(state.config).encode("utf-8")}
    return Checkpoint(arrays, counters, rngs, blobs)


def _config_from_blob(blob: bytes) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string(blob.decode("utf-8"))
    return build_config({s: dict(parser[s]) for s in parser.sections()})


def restore(ckpt: Checkpoint, config: RunConfig | None = None) -> tuple[LoopState, list[dict]]:
    """Rebuild a loop state (and the rows logged so far) from a checkpoint.

    ``config`` defaults to the one stored in the checkpoint; a caller-supplied
    config may only differ in output and bookkeeping fields.
    """
    stored = ckpt.config()
    if config is None:
        config = stored
    elif _training_fields(config) != _training_fields(stored):
        raise CheckpointError("config differs from the checkpointed run in training-relevant fields")
    try:
        a, c = ckpt.arrays, ckpt.counters
        rngs = {}
        for name in STREAMS:
            bitgen = np.random.PCG64()
            bitgen.state = ckpt.rng_states[name]
            rngs[name] = np.random.Generator(bitgen)
        env = make_env(config.env, rngs["env"])
        env.set_state({k[4:]: float(v) for k, v in a.items() if k.startswith("env.")})
        agent = SacAgent.create(env.obs_dim, env.act_dim, config.sac, np.random.default_rng(0))
        _get_net(a, "actor", agent.policy.net)
        for name, net in zip(("q1", "q2", "q1_target", "q2_target"), agent.critic.nets + agent.target_critic.nets):
            _get_net(a, name, net)
        agent.log_alpha[...] = a["log_alpha"]
        _get_adam(a, c, "adam.actor", agent.actor_opt)
        _get_adam(a, c, "adam.critic", agent.critic_opt)
        _get_adam(a, c, "adam.alpha", agent.alpha_opt)
        buf = ReplayBuffer(config.sac.buffer_capacity, env.obs_dim, env.act_dim)
        buf.size, buf.cursor = c["buffer.size"], c["buffer.cursor"]
        for f in _BUFFER_FIELDS:
            getattr(buf, f)[: buf.size] = a[f"buffer.{f}"]
        state = LoopState(config, env, agent, buf, rngs, a["loop.obs"].copy())
        state.env_steps = c["loop.env_steps"]
        state.grad_steps = c["loop.grad_steps"]
        state.episodes = c["loop.episodes"]
        state.episode_return = float(a["loop.episode_return"])
        state.pending_returns = [float(x) for x in a["loop.pending_returns"]]
        state.eval_records = [(int(s), int(i), float(r)) for s, i, r in a["loop.eval_records"]]
        state.elapsed_ms = float(a["loop.elapsed_ms"])
        state.snapshots = {
            kind: WeightSnapshot(a[f"snapshot.{kind}"].copy(), c[f"snapshot.{kind}.step"])
            for kind in ("actor", "critic")
        }
        rows = []
        for vals in a["log.rows"]:
            row = dict(zip(CSV_COLUMNS, (float(v) for v in vals)))
            row["step"] = int(row["step"])
            rows.append(row)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing entry {exc}") from None
    except ValueError as exc:
        raise CheckpointError(f"checkpoint payload inconsistent with config: {exc}") from exc
    return state, rows


_BOOKKEEPING = ("output_dir", "checkpoint_every", "record_wall_time")


def _training_fields(cfg: RunConfig) -> dict:
    d = config_to_dict(cfg)
    for key in _BOOKKEEPING:
        d["run"].pop(key, None)
    return d


def save_checkpoint(state: LoopState, path: str | Path, rows: list[dict] | None = None) -> None:
    write_checkpoint(capture(state, rows), path)


def load_checkpoint(path: str | Path, config: RunConfig | None = None) -> tuple[LoopState, list[dict]]:
    return restore(read_checkpoint(path), config)


__all__ = [
    "BadMagicError", "Checkpoint", "CheckpointError", "TruncatedCheckpointError", "VersionMismatchError",
    "capture", "decode", "encode", "load_checkpoint", "read_checkpoint", "restore", "save_checkpoint",
    "write_atomic", "write_checkpoint",
]
