"""On-disk formats: datasets, checkpoints, metrics logs and reports.

Dataset
    A directory of ``.npy`` arrays plus ``manifest.json``. The manifest lists
    the sha256 of every array file, the generating spec and seed, and a
    dataset hash (sha256 over the sorted ``name:sha256`` lines).

Checkpoint (little-endian throughout)
    ========  ======================================================
    bytes     content
    ========  ======================================================
    8         magic ``b"ARLCKPT1"``
    8         u64 seed
    32        sha256 of the experiment config
    32        sha256 of the dataset (the manifest's dataset hash)
    4         u32 phase (1 or 2)
    4*8       u64 d, p, N (labeled columns), M (unlabeled columns)
    8*d*p     f64 projection, row-major
    8*d*(N+M) f64 weight bank, row-major (d rows)
    8*M       i64 pseudo ids of the unlabeled columns
    8         u64 byte length L of the JSON tail
    L         UTF-8 JSON: {"ethnicity": [...], "meta": {...}}
    ========  ======================================================

Every CSV starts with one ``# config_hash=... dataset_hash=... seed=...``
line; rows are written in a fixed order and floats with ``repr`` so reruns
are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ARLError, WeightBank
from .pools import LabeledPool, TestSet, UnlabeledPool
from .synth import Population, PopulationSpec
from .train import EmbeddingModel

MAGIC = b"ARLCKPT1"
DATASET_FORMAT = "arl-dataset/1"
_HEAD = struct.Struct("<8sQ32s32sI4Q")


class ChecksumMismatch(ARLError, ValueError):
    pass


class IoError(ARLError, OSError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def config_hash(config: dict) -> str:
    return sha256_hex(canonical_json(config).encode())


def _file_sha(path: Path) -> str:
    return sha256_hex(path.read_bytes())


def _dataset_hash(files: dict[str, str]) -> str:
    return sha256_hex("".join(f"{k}:{files[k]}\n" for k in sorted(files)).encode())


# ---------------------------------------------------------------- dataset


def _dataset_arrays(pop: Population) -> dict[str, np.ndarray]:
    arrays = {}
    for prefix, pool in (("labeled", pop.labeled), ("unlabeled", pop.unlabeled), ("test", pop.test)):
        for name, arr in pool.arrays().items():
            arrays[f"{prefix}_{name}"] = np.ascontiguousarray(arr)
    for tag, pairs in sorted(pop.accuracy_pairs.items()):
        arrays[f"pairs_{tag}"] = np.ascontiguousarray(pairs, dtype=np.int64)
    return arrays


def save_dataset(pop: Population, out: Path, seed: int) -> dict:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = {}
        for name, arr in _dataset_arrays(pop).items():
            path = out / f"{name}.npy"
            np.save(path, arr, allow_pickle=False)
            files[path.name] = _file_sha(path)
        manifest = {
            "format": DATASET_FORMAT,
            "seed": int(seed),
            "spec": pop.spec.to_dict(),
            "files": files,
            "dataset_hash": _dataset_hash(files),
            "counts": {"labeled": len(pop.labeled), "unlabeled": len(pop.unlabeled), "test": len(pop.test)},
        }
        (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write dataset to {out}: {exc}") from exc
    return manifest


def load_manifest(path: Path) -> dict:
    try:
        return json.loads((Path(path) / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read manifest in {path}: {exc}") from exc


def load_dataset(path: Path) -> tuple[Population, dict]:
    """Load and verify a dataset; any checksum difference raises ChecksumMismatch."""
    path = Path(path)
    manifest = load_manifest(path)
    if manifest.get("format") != DATASET_FORMAT:
        raise IoError(f"unknown dataset format {manifest.get('format')!r}")
    files = manifest["files"]
    if _dataset_hash(files) != manifest["dataset_hash"]:
        raise ChecksumMismatch("manifest dataset hash does not match its file list")
    arrays = {}
    for name, digest in files.items():
        fp = path / name
        try:
            raw = fp.read_bytes()
        except OSError as exc:
            raise IoError(f"missing dataset file {fp}: {exc}") from exc
        if sha256_hex(raw) != digest:
            raise ChecksumMismatch(f"{name}: checksum differs from manifest")
        arrays[name[: -len(".npy")]] = np.load(fp, allow_pickle=False)

    def pool(cls, prefix):
        return cls(**{k[len(prefix) + 1 :]: v for k, v in arrays.items() if k.startswith(prefix + "_")})

    pairs = {k[len("pairs_") :]: v for k, v in arrays.items() if k.startswith("pairs_")}
    pop = Population(
        spec=PopulationSpec.from_dict(manifest["spec"]),
        labeled=pool(LabeledPool, "labeled"),
        unlabeled=pool(UnlabeledPool, "unlabeled"),
        test=pool(TestSet, "test"),
        accuracy_pairs=pairs,
    )
    return pop, manifest


# ------------------------------------------------------------- checkpoint


@dataclass
class Checkpoint:
    model: EmbeddingModel
    bank: WeightBank
    seed: int
    config_hash: str
    dataset_hash: str
    phase: int
    meta: dict = field(default_factory=dict)


def save_checkpoint(path: Path, ckpt: Checkpoint) -> None:
    P = ckpt.model.projection
    bank = ckpt.bank
    d, p = P.shape
    tail = canonical_json({"ethnicity": [str(e) for e in bank.ethnicity], "meta": ckpt.meta}).encode()
    head = _HEAD.pack(
        MAGIC,
        ckpt.seed,
        bytes.fromhex(ckpt.config_hash),
        bytes.fromhex(ckpt.dataset_hash),
        ckpt.phase,
        d,
        p,
        bank.n_labeled,
        bank.n_unlabeled,
    )
    try:
        with open(path, "wb") as fh:
            fh.write(head)
            fh.write(np.ascontiguousarray(P, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(bank.weights, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(bank.pseudo_ids, dtype="<i8").tobytes())
            fh.write(struct.pack("<Q", len(tail)))
            fh.write(tail)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: Path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _HEAD.size or raw[:8] != MAGIC:
        raise IoError(f"{path} is not a checkpoint")
    magic, seed, cfg, data, phase, d, p, n, m = _HEAD.unpack_from(raw)
    off = _HEAD.size

    def take(count, dtype):
        nonlocal off
        nbytes = 8 * count
        if off + nbytes > len(raw):
            raise IoError(f"{path} is truncated")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).astype(dtype[1:])
        off += nbytes
        return arr

    P = take(d * p, "<f8").reshape(d, p)
    W = take(d * (n + m), "<f8").reshape(d, n + m)
    pseudo = take(m, "<i8")
    (tail_len,) = struct.unpack_from("<Q", raw, off)
    off += 8
    tail = json.loads(raw[off : off + tail_len].decode())
    bank = WeightBank(W, n, pseudo, np.array(tail["ethnicity"], dtype=str))
    return Checkpoint(EmbeddingModel(P), bank, seed, cfg.hex(), data.hex(), phase, tail["meta"])


# ----------------------------------------------------------------- CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows, stamp: dict) -> None:
    """CSV with a leading ``# key=value ...`` provenance line."""
    try:
        with open(path, "w", newline="") as fh:
            fh.write("# " + " ".join(f"{k}={stamp[k]}" for k in sorted(stamp)) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_csv(path: Path) -> tuple[dict, list[dict]]:
    with open(path, newline="") as fh:
        first = fh.readline()
        stamp = dict(item.split("=", 1) for item in first[2:].split())
        return stamp, list(csv.DictReader(fh))


def write_json(path: Path, obj) -> None:
    try:
        Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def format_delta(value: float, base: float) -> str:
    """Percent value with its change versus a baseline, e.g. ``56.70(4.08)``."""
    v = round(100.0 * value, 2)
    dv = round(100.0 * value - 100.0 * base, 2) + 0.0
    return f"{v:.2f}({dv:.2f})"
