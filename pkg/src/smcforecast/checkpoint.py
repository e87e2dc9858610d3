"""Versioned JSON checkpoints with content hashes.

A checkpoint stores named float arrays ("blocks"), the configuration that
produced them, and a sha256 over the block contents. JSON keeps the format
inspectable; floats serialize via repr so values round-trip bit-exactly.
Converters to and from the parameter dataclasses of each model live here so
the CLI can treat all artifacts uniformly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .baselines import HmmParams
from .gru import AuxHeadParams, GruCellParams, GruParams
from .ssm import SsmParams, check_finite_params
from .util import DataError, SchemaError, atomic_write_text

FORMAT_VERSION = 1

_CELL_FIELDS = ("w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn",
                "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn")


def blocks_sha256(blocks) -> str:
    """Hash of block names, shapes, and raw float64 bytes, order-independent."""
    h = hashlib.sha256()
    for name in sorted(blocks):
        arr = np.ascontiguousarray(blocks[name], dtype=np.float64)
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class Checkpoint:
    kind: str
    blocks: dict
    config: dict
    sha256: str


def save_checkpoint(path, kind, blocks, config=None):
    """Write a checkpoint atomically; returns its content hash."""
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config or {},
        "sha256": blocks_sha256(blocks),
        "blocks": {
            name: {
                "shape": list(np.asarray(arr).shape),
                "data": np.asarray(arr, dtype=float).ravel().tolist(),
            }
            for name, arr in sorted(blocks.items())
        },
    }
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return payload["sha256"]


def load_checkpoint(path, expect_kind=None) -> Checkpoint:
    """Read and verify a checkpoint; hash or version mismatches raise."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid checkpoint JSON ({exc})") from None
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {version!r}")
    kind = payload.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise SchemaError(f"{path}: checkpoint kind {kind!r}, expected {expect_kind!r}")
    blocks = {}
    for name, entry in payload["blocks"].items():
        arr = np.array(entry["data"], dtype=float).reshape(entry["shape"])
        blocks[name] = arr
    digest = blocks_sha256(blocks)
    if digest != payload.get("sha256"):
        raise DataError(f"{path}: checkpoint content does not match its hash")
    return Checkpoint(kind=kind, blocks=blocks, config=payload.get("config", {}),
                      sha256=digest)


# extractor (+ auxiliary head) ------------------------------------------------


def gru_to_blocks(gru: GruParams, head: AuxHeadParams | None = None) -> dict:
    blocks = {}
    for i, cell in enumerate(gru.layers):
        for name in _CELL_FIELDS:
            blocks[f"layer{i}.{name}"] = np.asarray(getattr(cell, name))
    if head is not None:
        for name in _CELL_FIELDS:
            blocks[f"head.cell.{name}"] = np.asarray(getattr(head.cell, name))
        blocks["head.w_out"] = np.asarray(head.w_out)
        blocks["head.b_out"] = np.array(head.b_out)
        blocks["head.y0"] = np.array(head.y0)
    return blocks


def _cell_from_blocks(blocks, prefix) -> GruCellParams:
    kw = {}
    for name in _CELL_FIELDS:
        key = prefix + name
        if key not in blocks:
            raise SchemaError(f"checkpoint is missing block {key!r}")
        kw[name] = blocks[key].copy()
    return GruCellParams(**kw)


def blocks_to_gru(blocks):
    """Reconstruct (GruParams, AuxHeadParams or None) from checkpoint blocks."""
    n_layers = 0
    while f"layer{n_layers}.w_ir" in blocks:
        n_layers += 1
    if n_layers == 0:
        raise SchemaError("checkpoint holds no extractor layers")
    gru = GruParams(layers=[_cell_from_blocks(blocks, f"layer{i}.")
                            for i in range(n_layers)])
    head = None
    if "head.w_out" in blocks:
        head = AuxHeadParams(
            cell=_cell_from_blocks(blocks, "head.cell."),
            w_out=blocks["head.w_out"].copy(),
            b_out=float(blocks["head.b_out"]),
            y0=float(blocks["head.y0"]),
        )
    return gru, head


# state-space layer -----------------------------------------------------------


def ssm_to_blocks(params: SsmParams) -> dict:
    return {
        "w_gx": params.w_gx, "b_gx": params.b_gx,
        "w_gu": params.w_gu, "b_gu": params.b_gu,
        "w_f": params.w_f, "b_f": np.array(params.b_f),
        "rho_x": params.rho_x, "rho_y": np.array(params.rho_y),
    }


def blocks_to_ssm(blocks) -> SsmParams:
    required = ("w_gx", "b_gx", "w_gu", "b_gu", "w_f", "b_f", "rho_x", "rho_y")
    for name in required:
        if name not in blocks:
            raise SchemaError(f"checkpoint is missing block {name!r}")
    params = SsmParams(
        w_gx=blocks["w_gx"].copy(), b_gx=blocks["b_gx"].copy(),
        w_gu=blocks["w_gu"].copy(), b_gu=blocks["b_gu"].copy(),
        w_f=blocks["w_f"].copy(), b_f=float(blocks["b_f"]),
        rho_x=blocks["rho_x"].copy(), rho_y=float(blocks["rho_y"]),
    )
    check_finite_params(params)
    return params


# linear baseline --------------------------------------------------------------


def hmm_to_blocks(params: HmmParams) -> dict:
    blocks = {
        "a": params.a, "c": params.c, "q": params.q,
        "r": np.array(params.r), "mu0": params.mu0, "p0": params.p0,
    }
    if params.b is not None:
        blocks["b"] = params.b
    return blocks


def blocks_to_hmm(blocks) -> HmmParams:
    required = ("a", "c", "q", "r", "mu0", "p0")
    for name in required:
        if name not in blocks:
            raise SchemaError(f"checkpoint is missing block {name!r}")
    return HmmParams(
        a=blocks["a"].copy(),
        b=blocks["b"].copy() if "b" in blocks else None,
        c=blocks["c"].copy(),
        q=blocks["q"].copy(),
        r=float(blocks["r"]),
        mu0=blocks["mu0"].copy(),
        p0=blocks["p0"].copy(),
    )
