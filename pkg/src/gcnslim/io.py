"""Checkpoints, similarity-matrix exports and report files.

Binary artifacts share one layout: a magic line, one line of JSON header,
then the array as raw little-endian row-major bytes.  The header carries a
SHA-256 of the payload, verified on load.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"GCNSLIM-CHECKPOINT 1\n"
SIMILARITY_MAGIC = b"GCNSLIM-SIMILARITY 1\n"
REPORT_COLUMNS = ("epoch", "loss", "recall10", "ndcg10", "seconds")


class CorruptFileError(ValueError):
    pass


def _checksum(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def _write_blob(path, magic: bytes, header: dict, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
    header = dict(header, dtype=arr.dtype.str, shape=list(arr.shape), checksum=_checksum(arr))
    with Path(path).open("wb") as fh:
        fh.write(magic)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(arr.tobytes())


def _read_blob(path, magic: bytes) -> tuple[dict, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    raw = path.read_bytes()
    if not raw.startswith(magic):
        raise CorruptFileError(f"{path}: bad magic line")
    end = raw.index(b"\n", len(magic))
    try:
        header = json.loads(raw[len(magic):end])
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: unreadable header ({exc})") from None
    payload = raw[end + 1:]
    arr = np.frombuffer(payload, dtype=np.dtype(header["dtype"]))
    expected = int(np.prod(header["shape"]))
    if arr.size != expected:
        raise CorruptFileError(f"{path}: expected {expected} values, found {arr.size}")
    arr = arr.reshape(header["shape"]).copy()
    if _checksum(arr) != header["checksum"]:
        raise CorruptFileError(f"{path}: checksum mismatch")
    return header, arr


def save_checkpoint(path, params: np.ndarray, model_config: dict, num_users: int,
                    num_items: int, seed: int, epoch: int, extra: dict | None = None) -> None:
    header = {"config": model_config, "M": num_users, "N": num_items, "d": params.shape[1],
              "seed": seed, "epoch": epoch}
    if extra:
        header.update(extra)
    _write_blob(path, CHECKPOINT_MAGIC, header, params)


def load_checkpoint(path) -> tuple[dict, np.ndarray]:
    header, params = _read_blob(path, CHECKPOINT_MAGIC)
    if params.shape != (header["M"] + header["N"], header["d"]):
        raise CorruptFileError(f"{path}: shape does not match M, N, d")
    return header, params


def export_similarity(path, B: np.ndarray, dim: int) -> None:
    _write_blob(path, SIMILARITY_MAGIC, {"N": B.shape[0], "d": dim}, B)


def load_similarity(path) -> tuple[dict, np.ndarray]:
    return _read_blob(path, SIMILARITY_MAGIC)


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return _clean(value.item())
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")


def write_train_report(out_dir, report) -> None:
    """``report.csv`` (epoch,loss,recall10,ndcg10,seconds) and ``report.json``."""
    out = Path(out_dir)
    with (out / "report.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for e in report.epochs:
            w.writerow([e.epoch, repr(float(e.loss)), _fmt(e.recall10), _fmt(e.ndcg10),
                        f"{e.seconds:.3f}"])
    write_json(out / "report.json", report.to_dict())


def _fmt(x: float) -> str:
    return "" if not math.isfinite(x) else repr(float(x))


def write_rows_csv(path, rows: list[dict], columns) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})


def write_per_user_csv(path, per_user: dict) -> None:
    rows = [{"user": int(u), "recall": float(r), "ndcg": float(g)}
            for u, r, g in zip(per_user["user"], per_user["recall"], per_user["ndcg"])]
    write_rows_csv(path, rows, ("user", "recall", "ndcg"))
