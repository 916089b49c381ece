"""CSV emission and the single-file checkpoint container.

Checkpoint layout::

    STRADIFF-CHECKPOINT\\n
    <u64 header length><JSON header>
    repeated records: <u32 name length><name><u32 ndim><u64 dims...><float64 LE data>

The JSON header carries the format version, epoch, optimizer step count,
config echo, rng state and the ordered list of record names.
"""

import csv
import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

FLOAT_FMT = "%.17g"
MAGIC = b"STRADIFF-CHECKPOINT\n"
FORMAT_VERSION = 1


def write_csv(path, header, rows):
    """Write a numeric matrix with a header row at full float precision."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[1] != len(header):
        raise ValueError(f"{len(header)} column names for {rows.shape[1]} columns")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, rows, fmt=FLOAT_FMT, delimiter=",")
    return path


def read_csv(path):
    """Return ``(header, matrix)`` from a file written by :func:`write_csv`."""
    path = Path(path)
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
        if not header:
            raise ValueError(f"{path}: empty file")
        rows = [r for r in csv.reader(fh) if r]
    try:
        data = np.array([[float(x) for x in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if data.size == 0:
        data = np.empty((0, len(header)))
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: rows have {data.shape[1]} fields, header has {len(header)}")
    return header, data


def write_series(path, t, X, prefix):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    header = ["t"] + [f"{prefix}_{j + 1}" for j in range(X.shape[1])]
    return write_csv(path, header, np.column_stack([t, X]))


def read_series(path):
    """``(t, X)`` from a file with a leading ``t`` column."""
    header, data = read_csv(path)
    if header[0] != "t":
        raise ValueError(f"{path}: first column must be 't', got {header[0]!r}")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite values")
    return data[:, 0], data[:, 1:]


def write_mixing(path, truth):
    """Ground-truth mixing matrices, one row per matrix row, tagged by block."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        width = truth.A.shape[1] if truth.B is None else max(truth.A.shape[1], truth.B.shape[1])
        w.writerow(["block", "row"] + [f"c_{j + 1}" for j in range(width)])
        for block, M in (("A", truth.A), ("B", truth.B)):
            if M is None:
                continue
            for i, row in enumerate(M):
                w.writerow([block, i + 1] + [FLOAT_FMT % x for x in row])
    return Path(path)


def write_paths(out_dir, epoch, paths):
    """One CSV per branch: rows are reverse-chain states, tau from L down to 0."""
    files = []
    for k, path in enumerate(paths):
        L = path.shape[0] - 1
        tau = np.arange(L, -1, -1, dtype=np.float64)
        header = ["tau"] + [f"x_{i + 1}" for i in range(path.shape[1])]
        f = Path(out_dir) / f"path_epoch{epoch}_source{k + 1}.csv"
        write_csv(f, header, np.column_stack([tau, path]))
        files.append(f)
    return files


def write_report(path, report, T):
    """Per-epoch loss terms, matched correlations and length-scales."""
    if not report.losses:
        n = 0
    else:
        n = len(report.lengthscales[0])
    has_corr = bool(report.correlations)
    header = ["epoch", "rec", "prior", "diff", "kl", "total"]
    if has_corr:
        header += [f"corr_{k + 1}" for k in range(n)]
    header += [f"ell_{k + 1}" for k in range(n)]
    header += [f"ell_rescaled_{k + 1}" for k in range(n)]
    rows = []
    for i, b in enumerate(report.losses):
        ells = np.asarray(report.lengthscales[i])
        row = [b.epoch, b.rec, b.prior, b.diff, b.kl, b.total]
        if has_corr:
            row += list(report.correlations[i])
        row += list(ells) + list(ells * (T - 1))
        rows.append(row)
    rows = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return write_csv(path, header, rows)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def save_checkpoint(path, header, tensors):
    """Write ``header`` (JSON-able dict) and named float64 arrays to one file."""
    header = dict(header, version=FORMAT_VERSION, tensors=list(tensors))
    blob = json.dumps(header, default=_json_default, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")  # keeps 0-d shapes; tobytes is C order
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Return ``(header, tensors)``; raises CheckpointError on any mismatch."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint file")
    pos = len(MAGIC)

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + nbytes]
        pos += nbytes
        return chunk

    (hlen,) = struct.unpack("<Q", take(8))
    try:
        header = json.loads(take(hlen))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version!r} is incompatible "
                              f"with this build (expects {FORMAT_VERSION})")
    tensors = {}
    for expected in header["tensors"]:
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode()
        if name != expected:
            raise CheckpointError(f"{path}: record {name!r} out of order (expected {expected!r})")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after last record")
    return header, tensors


def save_state(path, state, run_config):
    """Checkpoint every tensor, moment buffer, rng state and the config echo."""
    tensors = {}
    for name, p in state.named_tensors().items():
        tensors[name] = p.value
        tensors[name + "@m"] = p.m
        tensors[name + "@v"] = p.v
    tensors["data.y_mean"] = state.y_mean
    tensors["data.y_std"] = state.y_std
    header = {
        "epoch": state.epoch,
        "optimizer_t": state.optimizer.t,
        "rng": state.rng.bit_generator.state,
        "T": state.T,
        "m": state.m,
        "config": dataclasses.asdict(run_config),
    }
    return save_checkpoint(path, header, tensors)


def load_state(path):
    """Rebuild ``(state, run_config)`` from :func:`save_state` output."""
    from .config import RunConfig
    from .objective import init_state
    header, tensors = load_checkpoint(path)
    cfg_dict = dict(header["config"])
    cfg_dict["snapshot_epochs"] = tuple(cfg_dict.get("snapshot_epochs", ()))
    try:
        run_config = RunConfig(**cfg_dict)
        train_config = run_config.train_config()
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad config echo ({exc})") from None
    state = init_state(header["T"], header["m"], train_config,
                       tensors["data.y_mean"], tensors["data.y_std"])
    named = state.named_tensors()
    expected = set(named) | {n + s for n in named for s in ("@m", "@v")} | {"data.y_mean", "data.y_std"}
    if set(tensors) != expected:
        missing = sorted(expected - set(tensors))
        extra = sorted(set(tensors) - expected)
        raise CheckpointError(f"{path}: tensor set mismatch (missing {missing}, unexpected {extra})")
    for name, p in named.items():
        if tensors[name].shape != p.value.shape:
            raise CheckpointError(f"{path}: {name} has shape {tensors[name].shape}, "
                                  f"model expects {p.value.shape}")
        p.value = tensors[name].copy()
        p.m = tensors[name + "@m"].copy()
        p.v = tensors[name + "@v"].copy()
        p.cache.clear()
    state.rng.bit_generator.state = header["rng"]
    state.optimizer.t = header["optimizer_t"]
    state.epoch = header["epoch"]
    return state, run_config
