"""Trainable parameters, Adam, and the binary checkpoint format."""

import struct

import numpy as np

from .errors import CheckpointError

CHECKPOINT_MAGIC = b"KDAR"
CHECKPOINT_VERSION = 1


class Parameter:
    """Named dense tensor with gradient and Adam moment buffers."""

    def __init__(self, name, data):
        self.name = name
        self.data = np.ascontiguousarray(data)
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape


def xavier_uniform(shape, rng, dtype):
    """Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ParameterStore:
    """All trainable tensors, keyed by name, in one dtype.

    One writer (the optimizer) or many readers; forward passes that do not
    record gradients may share it read-only.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params = {}

    def add(self, name, data):
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        p = Parameter(name, np.asarray(data, dtype=self.dtype))
        self.params[name] = p
        return p

    def __getitem__(self, name):
        return self.params[name]

    def zero_grads(self):
        for p in self.params.values():
            p.grad[...] = 0

    @classmethod
    def for_model(cls, num_users, num_items, num_entities, num_relations, embed_dim,
                  rng, dtype=np.float32):
        """The six trainable tensors: ID embeddings on both graphs plus the
        two attention projections."""
        store = cls(dtype=dtype)
        store.add("user_cf_emb", xavier_uniform((num_users, embed_dim), rng, dtype))
        store.add("item_cf_emb", xavier_uniform((num_items, embed_dim), rng, dtype))
        store.add("entity_emb", xavier_uniform((num_entities, embed_dim), rng, dtype))
        store.add("relation_emb", xavier_uniform((num_relations, embed_dim), rng, dtype))
        store.add("attn_key", xavier_uniform((embed_dim, embed_dim), rng, dtype))
        store.add("attn_query", xavier_uniform((embed_dim, embed_dim), rng, dtype))
        return store


class Adam:
    """Adam with bias correction; gradients are zeroed after each step."""

    def __init__(self, store, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for p in self.store.params.values():
            g = p.grad
            p.m *= b1
            p.m += (1.0 - b1) * g
            p.v *= b2
            p.v += (1.0 - b2) * g * g
            p.data -= self.lr * (p.m / bias1) / (np.sqrt(p.v / bias2) + self.eps)
            p.grad[...] = 0


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout: magic "KDAR", u32 version, u32 entry count, then per entry:
# u32 name length, name bytes, u32 rank, u32 dims..., row-major little-endian
# float32 values. Adam moments, when saved, are appended as additional entries
# named adam.m.<param> / adam.v.<param> plus a scalar adam.step entry.
# Values are always stored as float32; a float64 store saves with a downcast.


def _write_entry(fh, name, array):
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", array.ndim))
    for dim in array.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _read_entry(fh, path):
    header = fh.read(4)
    if len(header) != 4:
        raise CheckpointError(f"{path}: truncated checkpoint (entry header)")
    (name_len,) = struct.unpack("<I", header)
    raw = fh.read(name_len)
    if len(raw) != name_len:
        raise CheckpointError(f"{path}: truncated checkpoint (entry name)")
    name = raw.decode("utf-8")
    rank_raw = fh.read(4)
    if len(rank_raw) != 4:
        raise CheckpointError(f"{path}: truncated checkpoint (rank)")
    (rank,) = struct.unpack("<I", rank_raw)
    dims = []
    for _ in range(rank):
        dim_raw = fh.read(4)
        if len(dim_raw) != 4:
            raise CheckpointError(f"{path}: truncated checkpoint (dims)")
        dims.append(struct.unpack("<I", dim_raw)[0])
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    payload = fh.read(count * 4)
    if len(payload) != count * 4:
        raise CheckpointError(f"{path}: truncated checkpoint (payload of {name})")
    array = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return name, array


def save_checkpoint(path, store, adam=None):
    entries = [(name, p.data) for name, p in store.params.items()]
    if adam is not None:
        for name, p in store.params.items():
            entries.append((f"adam.m.{name}", p.m))
            entries.append((f"adam.v.{name}", p.v))
        entries.append(("adam.step", np.array([adam.step_count], dtype=np.float32)))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(entries)))
        for name, array in entries:
            _write_entry(fh, name, array)


def read_checkpoint(path):
    """Raw entry dict from a checkpoint file."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        version_raw = fh.read(4)
        if len(version_raw) != 4:
            raise CheckpointError(f"{path}: truncated checkpoint (version)")
        (version,) = struct.unpack("<I", version_raw)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        count_raw = fh.read(4)
        if len(count_raw) != 4:
            raise CheckpointError(f"{path}: truncated checkpoint (entry count)")
        (count,) = struct.unpack("<I", count_raw)
        entries = {}
        for _ in range(count):
            name, array = _read_entry(fh, path)
            entries[name] = array
    return entries


def load_checkpoint(path, store, adam=None):
    """Load parameters (and optionally Adam state) into an existing store.

    Shapes must match the store exactly; a checkpoint written at a different
    embedding width is rejected.
    """
    entries = read_checkpoint(path)
    for name, p in store.params.items():
        if name not in entries:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        array = entries[name]
        if tuple(array.shape) != tuple(p.data.shape):
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: checkpoint {array.shape}, store {p.data.shape}"
            )
        p.data[...] = array.astype(store.dtype)
    if adam is not None:
        if "adam.step" not in entries:
            raise CheckpointError(f"{path}: checkpoint carries no optimizer state")
        adam.step_count = int(entries["adam.step"][0])
        for name, p in store.params.items():
            p.m[...] = entries[f"adam.m.{name}"].astype(store.dtype)
            p.v[...] = entries[f"adam.v.{name}"].astype(store.dtype)
