"""Model configuration, the named-tensor parameter store, trainability policies,
and a deterministic binary checkpoint container."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

ADAPTER_TASKS = ("reasoning", "retrieval")
POLICY_FULL = "full"
POLICY_ADAPTERS = "adapters_and_head_only"

_CKPT_MAGIC = b"KGQACKPT1\n"


class CheckpointError(RuntimeError):
    """Checkpoint file corrupt or incompatible (shapes, vocabulary hash, version)."""


@dataclass
class ModelConfig:
    """Shapes and switches of the encoder stack.

    `dtype` is the working precision: float64 for tests and gradient checks,
    float32 allowed for training runs.  `adapter_dim` is the bottleneck width
    of the task adapters (0 disables them).
    """

    vocab_size: int
    layers: int = 2
    d: int = 64
    heads: int = 4
    d_ff: int = 256
    max_len: int = 512
    adapter_dim: int = 8
    dropout: float = 0.1
    separate_graph_positions: bool = False
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must cover at least PAD and UNK")
        if self.layers < 0 or self.d < 1 or self.heads < 1 or self.d_ff < 1:
            raise ValueError("model dimensions must be positive (layers may be 0)")
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if self.max_len < 2:
            raise ValueError("max_len must leave room for a question and a topic")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape map for every tensor the config implies."""
    d, h = cfg.d, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "embed": (cfg.vocab_size, d),
        "pos": (cfg.max_len, d),
        "head.w": (d,),
        "head.b": (),
    }
    if cfg.separate_graph_positions:
        shapes["pos_graph"] = (cfg.max_len, d)
    for i in range(cfg.layers):
        p = f"enc{i}"
        shapes.update(
            {
                f"{p}.attn.wq": (d, d),
                f"{p}.attn.bq": (d,),
                f"{p}.attn.wk": (d, d),
                f"{p}.attn.bk": (d,),
                f"{p}.attn.wv": (d, d),
                f"{p}.attn.bv": (d,),
                f"{p}.attn.wo": (d, d),
                f"{p}.attn.bo": (d,),
                f"{p}.ln1.scale": (d,),
                f"{p}.ln1.shift": (d,),
                f"{p}.ffn.w1": (d, h),
                f"{p}.ffn.b1": (h,),
                f"{p}.ffn.w2": (h, d),
                f"{p}.ffn.b2": (d,),
                f"{p}.ln2.scale": (d,),
                f"{p}.ln2.shift": (d,),
            }
        )
        if cfg.adapter_dim > 0:
            b = cfg.adapter_dim
            for task in ADAPTER_TASKS:
                for sub in ("attn", "ffn"):
                    a = f"{p}.adapter.{task}.{sub}"
                    shapes[f"{a}.down_w"] = (d, b)
                    shapes[f"{a}.down_b"] = (b,)
                    shapes[f"{a}.up_w"] = (b, d)
                    shapes[f"{a}.up_b"] = (d,)
    return shapes


class ModelParameters:
    """Named tensors plus per-tensor trainable flags."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray], trainable: dict[str, bool]):
        self.config = config
        self.arrays = arrays
        self.trainable = trainable

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return sorted(self.arrays)

    @classmethod
    def init(cls, config: ModelConfig) -> "ModelParameters":
        """Seeded initialization: N(0, 0.02) weights, zero biases, unit layer norms.

        Adapter up-projections start at zero so an activated adapter is an
        exact identity until fine-tuned; down-projections share the global
        near-zero scale, keeping fresh adapters dormant rather than injecting
        an O(1) random bottleneck transform the moment training moves up_w.
        """
        rng = np.random.default_rng(config.seed)
        dt = config.np_dtype
        arrays: dict[str, np.ndarray] = {}
        for name, shape in expected_shapes(config).items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf in ("bq", "bk", "bv", "bo", "b1", "b2", "shift", "down_b", "up_b", "b") or name == "head.b":
                arrays[name] = np.zeros(shape, dtype=dt)
            elif leaf == "scale":
                arrays[name] = np.ones(shape, dtype=dt)
            elif leaf == "up_w":
                arrays[name] = np.zeros(shape, dtype=dt)
            else:
                arrays[name] = rng.normal(0.0, 0.02, size=shape).astype(dt)
        trainable = {name: True for name in arrays}
        return cls(config, arrays, trainable)

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            self.config,
            {k: v.copy() for k, v in self.arrays.items()},
            dict(self.trainable),
        )

    # -- trainability ----------------------------------------------------

    def set_trainable(self, policy: str, adapter: str | None = None) -> None:
        """Apply a trainability policy.

        `full` marks every tensor trainable.  `adapters_and_head_only` marks
        the named adapter set (or both sets when `adapter` is None) plus the
        scoring head; it requires adapters to exist.
        """
        if policy == POLICY_FULL:
            for name in self.arrays:
                self.trainable[name] = True
            return
        if policy != POLICY_ADAPTERS:
            raise ValueError(f"unknown trainability policy {policy!r}")
        if self.config.adapter_dim <= 0:
            raise ValueError("adapter-only policy requires adapter_dim > 0")
        if adapter is not None and adapter not in ADAPTER_TASKS:
            raise ValueError(f"unknown adapter set {adapter!r}")
        tasks = (adapter,) if adapter else ADAPTER_TASKS
        tags = tuple(f".adapter.{t}." for t in tasks)
        for name in self.arrays:
            self.trainable[name] = name.startswith("head.") or any(tag in name for tag in tags)

    def count_parameters(self) -> tuple[int, int]:
        """(total, trainable) scalar parameter counts."""
        total = sum(a.size for a in self.arrays.values())
        train = sum(a.size for n, a in self.arrays.items() if self.trainable[n])
        return total, train

    # -- hashing ----------------------------------------------------------

    def state_hash(self, exclude_substrings: tuple[str, ...] = ()) -> str:
        """SHA-256 over tensors in name order; `exclude_substrings` filters names.

        With exclude=(".adapter.", "head.") this hashes exactly the base
        tensors, which adapter-only fine-tuning must leave untouched.
        """
        h = hashlib.sha256()
        for name in self.names():
            if any(s in name for s in exclude_substrings):
                continue
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.arrays[name]).tobytes())
        return h.hexdigest()


def save_checkpoint(
    path: str | Path,
    params: ModelParameters,
    vocab_hash: str,
    meta: dict | None = None,
) -> None:
    """Write a deterministic binary checkpoint (JSON header + raw tensor bytes).

    The byte stream depends only on the model state, so identical runs give
    identical file hashes.
    """
    names = params.names()
    header = {
        "format_version": 1,
        "config": params.config.to_dict(),
        "vocab_hash": vocab_hash,
        "trainable": {n: bool(params.trainable[n]) for n in names},
        "arrays": [
            {"name": n, "dtype": str(params.arrays[n].dtype), "shape": list(params.arrays[n].shape)}
            for n in names
        ],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack(">Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params.arrays[n]).tobytes())


def load_checkpoint(
    path: str | Path,
    expected_vocab_hash: str | None = None,
) -> tuple[ModelParameters, dict]:
    """Load a checkpoint, verifying format, shape table, and vocabulary hash."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack(">Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != 1:
            raise CheckpointError(f"{path}: unsupported format version")
        cfg = ModelConfig.from_dict(header["config"])
        if expected_vocab_hash is not None and header["vocab_hash"] != expected_vocab_hash:
            raise CheckpointError(
                f"{path}: vocabulary hash mismatch "
                f"(checkpoint {header['vocab_hash'][:12]}, expected {expected_vocab_hash[:12]})"
            )
        want = expected_shapes(cfg)
        arrays: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            name, shape = spec["name"], tuple(spec["shape"])
            if name not in want:
                raise CheckpointError(f"{path}: unexpected tensor {name!r}")
            if shape != want[name]:
                raise CheckpointError(
                    f"{path}: tensor {name!r} has shape {shape}, config implies {want[name]}"
                )
            dt = np.dtype(spec["dtype"])
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if shape else dt.itemsize
            buf = fh.read(n_bytes)
            if len(buf) != n_bytes:
                raise CheckpointError(f"{path}: truncated tensor payload for {name!r}")
            arrays[name] = np.frombuffer(buf, dtype=dt).reshape(shape).copy()
        if set(arrays) != set(want):
            missing = sorted(set(want) - set(arrays))
            raise CheckpointError(f"{path}: missing tensors {missing}")
    trainable = {n: bool(header["trainable"].get(n, True)) for n in arrays}
    return ModelParameters(cfg, arrays, trainable), dict(header.get("meta", {}), vocab_hash=header["vocab_hash"])


def checkpoint_hash(path: str | Path) -> str:
    """SHA-256 of the checkpoint file bytes (the format is timestamp-free)."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
