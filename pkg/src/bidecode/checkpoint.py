"""Binary checkpoints with a fixed little-endian layout.

Layout: version byte; u32 topology-JSON length + bytes; u64 step counter;
u32 tensor count; per tensor a length-prefixed name and shape entry; then
the raw float64 values of every tensor in table order. The fixed layout
makes save -> load -> save byte-identical, and loading refuses topology
mismatches instead of coercing.
"""

import json
import struct

import numpy as np

from .exceptions import TopologyMismatchError
from .model import BiDecoderModel, DirectionalModel, ModelDims

FORMAT_VERSION = 1


def _topology(model, method):
    return {
        "kind": model.kind,
        "direction": model.direction,
        "method": method,
        "dims": model.dims.as_dict(),
    }


def save_checkpoint(path, model, method="baseline", optimizer=None, step=0):
    tensors = dict(model.named_params())
    if optimizer is not None:
        tensors.update(
            {k: _Raw(v) for k, v in optimizer.moment_arrays().items()}
        )
        step = optimizer.t
    topo = json.dumps(_topology(model, method), sort_keys=True).encode()

    with open(path, "wb") as f:
        f.write(struct.pack("<B", FORMAT_VERSION))
        f.write(struct.pack("<I", len(topo)))
        f.write(topo)
        f.write(struct.pack("<Q", step))
        names = sorted(tensors)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            arr = _values(tensors[name])
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
        for name in names:
            f.write(np.ascontiguousarray(_values(tensors[name]), dtype="<f8").tobytes())


class _Raw:
    def __init__(self, arr):
        self.values = arr


def _values(t):
    return t.values


def read_checkpoint(path):
    """Parse a checkpoint into (topology dict, step, name -> ndarray)."""
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals if len(vals) > 1 else vals[0]

    version = take("<B")
    if version != FORMAT_VERSION:
        raise TopologyMismatchError(f"unsupported checkpoint version {version}")
    tlen = take("<I")
    topo = json.loads(blob[off : off + tlen].decode())
    off += tlen
    step = take("<Q")
    count = take("<I")
    table = []
    for _ in range(count):
        nlen = take("<H")
        name = blob[off : off + nlen].decode()
        off += nlen
        ndim = take("<B")
        shape = tuple(take("<I") for _ in range(ndim))
        table.append((name, shape))
    arrays = {}
    for name, shape in table:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(
            blob, dtype="<f8", count=n, offset=off
        ).reshape(shape).copy()
        off += 8 * n
    return topo, step, arrays


def load_checkpoint(path):
    """Rebuild the model (and return optimizer moments) from a checkpoint."""
    topo, step, arrays = read_checkpoint(path)
    dims = ModelDims(**topo["dims"])
    if topo["kind"] == "bidecoder":
        model = BiDecoderModel(dims)
    else:
        model = DirectionalModel(dims, direction=topo["direction"])
    params = model.named_params()
    moments = {}
    for name, arr in arrays.items():
        if name.startswith("adam."):
            moments[name] = arr
            continue
        if name not in params:
            raise TopologyMismatchError(f"unexpected tensor {name} in checkpoint")
        if params[name].values.shape != arr.shape:
            raise TopologyMismatchError(
                f"{name}: checkpoint shape {arr.shape} vs model {params[name].values.shape}"
            )
        params[name].values[...] = arr
    missing = set(params) - {n for n in arrays if not n.startswith("adam.")}
    if missing:
        raise TopologyMismatchError(f"checkpoint missing tensors: {sorted(missing)[:3]}...")
    return model, topo, step, moments


def restore_optimizer(optimizer, moments, step):
    for k in optimizer.params:
        mk, vk = f"adam.m.{k}", f"adam.v.{k}"
        if mk in moments:
            optimizer.m[k][...] = moments[mk]
        if vk in moments:
            optimizer.v[k][...] = moments[vk]
    optimizer.t = step
