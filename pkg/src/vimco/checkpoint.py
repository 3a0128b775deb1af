"""Named-tensor archive.

Layout: a text header, then raw little-endian float64 blocks.

    vimco-tensors 1
    # key = value          (metadata, any number of lines)
    name rank d1 .. dr offset
    ...
    end

Offsets count bytes from the first byte after the ``end`` line.
"""
import numpy as np

MAGIC = "vimco-tensors 1"


def save(path, tensors, meta=None):
    lines = [MAGIC]
    for k, v in (meta or {}).items():
        if "\n" in str(v) or "=" in str(k):
            raise ValueError(f"metadata entry {k!r} cannot be written")
        lines.append(f"# {k} = {v}")
    blobs, offset = [], 0
    for name in sorted(tensors):
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name {name!r} must be non-empty with no whitespace")
        a = np.array(tensors[name], dtype="<f8", order="C")
        lines.append(" ".join([name, str(a.ndim), *map(str, a.shape), str(offset)]))
        blobs.append(a.tobytes())
        offset += a.nbytes
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for b in blobs:
            fh.write(b)


def load(path):
    """(tensors, meta); metadata values come back as strings."""
    with open(path, "rb") as fh:
        raw = fh.read()
    pos = 0
    entries, meta = [], {}
    first = True
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise ValueError(f"{path}: header not terminated")
        line = raw[pos:nl].decode("ascii")
        pos = nl + 1
        if first:
            if line != MAGIC:
                raise ValueError(f"{path}: not a tensor archive")
            first = False
        elif line == "end":
            break
        elif line.startswith("#"):
            k, _, v = line[1:].partition("=")
            meta[k.strip()] = v.strip()
        else:
            f = line.split()
            rank = int(f[1])
            entries.append((f[0], tuple(int(d) for d in f[2:2 + rank]), int(f[2 + rank])))
    body = raw[pos:]
    out = {}
    for name, shape, off in entries:
        n = int(np.prod(shape, dtype=np.int64))
        if off + 8 * n > len(body):
            raise ValueError(f"{path}: tensor {name!r} is truncated")
        out[name] = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape).copy()
    return out, meta
