"""Persistence: dataset and weight containers, reports, and OBJ mesh export.

Dataset containers are directories holding a human-readable JSON manifest
plus one raw little-endian float32 file per field.  Weight containers are a
single binary file with the "M3DM" magic, a JSON header, and float64
payload arrays (bit-exact round trips).  Reports are emitted twice: a
structured JSON file and a tab-delimited text table.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .baseline import GlobalDirection
from .controller import Controller, forward
from .core_model import MorphableBasis, eval_shape, eval_texture
from .latent_world import AttributeHyperplane, PairedDataset

DATASET_FORMAT_VERSION = 1
WEIGHT_FORMAT_VERSION = 1
WEIGHT_MAGIC = b"M3DM"

_DATASET_FIELDS = ("w_proj", "s_pos", "s_neg", "p_pos", "p_neg")


class ContainerError(RuntimeError):
    """Base class for container load failures."""


class ContainerVersionError(ContainerError):
    """Declared format version is unknown."""


class ContainerTruncatedError(ContainerError):
    """An array file does not hold exactly count * dim * 4 bytes."""


class ContainerMismatchError(ContainerError):
    """Manifest metadata disagrees with the stored arrays."""


def save_dataset(dataset: PairedDataset, path: str | Path) -> Path:
    """Write a paired dataset as manifest + five raw float32 array files."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {
        "w_proj": dataset.w_proj,
        "s_pos": dataset.s_pos,
        "s_neg": dataset.s_neg,
        "p_pos": dataset.p_pos,
        "p_neg": dataset.p_neg,
    }
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "kind": "paired-dataset",
        "seed": int(dataset.seed),
        "latent_dim": int(dataset.d),
        "param_dims": {
            "k_id": dataset.k_dims[0],
            "k_expr": dataset.k_dims[1],
            "k_tex": dataset.k_dims[2],
        },
        "attributes": [
            {
                "name": dataset.attribute,
                "s_max": float(dataset.s_max),
                "hyperplane_fingerprint": dataset.hyperplane_fingerprint,
            }
        ],
        "count": len(dataset),
        "mode": dataset.mode,
        "arrays": {},
    }
    for name, arr in arrays.items():
        fname = f"{name}.f32"
        data = np.ascontiguousarray(arr, dtype="<f4")
        (out / fname).write_bytes(data.tobytes())
        manifest["arrays"][name] = {"file": fname, "shape": list(arr.shape)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(path: str | Path) -> PairedDataset:
    """Load and validate a dataset container; arrays come back as float64."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ContainerError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    version = manifest.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise ContainerVersionError(
            f"unknown dataset format_version {version!r}, expected {DATASET_FORMAT_VERSION}"
        )
    arrays: dict[str, np.ndarray] = {}
    for name in _DATASET_FIELDS:
        if name not in manifest["arrays"]:
            raise ContainerMismatchError(f"manifest missing array entry {name!r}")
        entry = manifest["arrays"][name]
        shape = tuple(int(s) for s in entry["shape"])
        fpath = root / entry["file"]
        if not fpath.exists():
            raise ContainerTruncatedError(f"array file {entry['file']!r} is missing")
        blob = fpath.read_bytes()
        expected = int(np.prod(shape)) * 4
        if len(blob) != expected:
            raise ContainerTruncatedError(
                f"array file {entry['file']!r} holds {len(blob)} bytes, expected {expected}"
            )
        arrays[name] = np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float64)

    count = int(manifest["count"])
    dims = manifest["param_dims"]
    k_dims = (int(dims["k_id"]), int(dims["k_expr"]), int(dims["k_tex"]))
    k_total = sum(k_dims)
    d = int(manifest["latent_dim"])
    checks = [
        ("count", count, "s_pos rows", arrays["s_pos"].shape[0]),
        ("latent_dim", d, "w_proj width", arrays["w_proj"].shape[1]),
        ("sum(param_dims)", k_total, "p_pos width", arrays["p_pos"].shape[1]),
        ("sum(param_dims)", k_total, "p_neg width", arrays["p_neg"].shape[1]),
    ]
    for decl_name, declared, actual_name, actual in checks:
        if declared != actual:
            raise ContainerMismatchError(
                f"manifest {decl_name}={declared} disagrees with {actual_name}={actual}"
            )
    for name in _DATASET_FIELDS:
        if arrays[name].shape[0] != count:
            raise ContainerMismatchError(
                f"manifest count={count} disagrees with {name} rows={arrays[name].shape[0]}"
            )
    attr = manifest["attributes"][0]
    return PairedDataset(
        attribute=attr["name"],
        seed=int(manifest["seed"]),
        s_max=float(attr["s_max"]),
        k_dims=k_dims,
        hyperplane_fingerprint=attr.get("hyperplane_fingerprint", ""),
        w_proj=arrays["w_proj"],
        s_pos=arrays["s_pos"],
        s_neg=arrays["s_neg"],
        p_pos=arrays["p_pos"],
        p_neg=arrays["p_neg"],
        mode=manifest.get("mode", "direct"),
    )


def _weight_payload(obj) -> tuple[str, dict, list[tuple[str, np.ndarray]]]:
    if isinstance(obj, Controller):
        meta = {"attribute": obj.attribute, "residual": obj.residual, "layers": len(obj.weights)}
        arrays = []
        for i, (w, b) in enumerate(zip(obj.weights, obj.biases)):
            arrays.append((f"W{i}", w))
            arrays.append((f"b{i}", b))
        return "controller", meta, arrays
    if isinstance(obj, GlobalDirection):
        meta = {
            "attribute": obj.attribute,
            "scale_alpha": obj.scale_alpha,
            "fingerprint": obj.fingerprint,
        }
        return "direction", meta, [("p_hat", obj.p_hat), ("center", obj.center)]
    if isinstance(obj, AttributeHyperplane):
        meta = {"b_hat": obj.b_hat, "train_accuracy": obj.train_accuracy}
        return "hyperplane", meta, [("u_hat", obj.u_hat)]
    raise TypeError(f"cannot serialize {type(obj).__name__} as a weight container")


def save_weights(obj, path: str | Path) -> Path:
    """Serialize a controller, direction, or hyperplane to one binary file."""
    kind, meta, arrays = _weight_payload(obj)
    header = {
        "kind": kind,
        "meta": meta,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(np.uint32(WEIGHT_FORMAT_VERSION).tobytes())
        fh.write(np.uint32(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return out


def load_weights(path: str | Path):
    """Load a weight container back into its original object type."""
    blob = Path(path).read_bytes()
    if blob[:4] != WEIGHT_MAGIC:
        raise ContainerMismatchError(f"bad magic {blob[:4]!r}, expected {WEIGHT_MAGIC!r}")
    version = int(np.frombuffer(blob[4:8], dtype="<u4")[0])
    if version != WEIGHT_FORMAT_VERSION:
        raise ContainerVersionError(
            f"unknown weight format_version {version}, expected {WEIGHT_FORMAT_VERSION}"
        )
    header_len = int(np.frombuffer(blob[8:12], dtype="<u4")[0])
    header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    offset = 12 + header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape)) * 8
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ContainerTruncatedError(
                f"array {entry['name']!r} holds {len(chunk)} bytes, expected {nbytes}"
            )
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes

    kind = header["kind"]
    meta = header["meta"]
    if kind == "controller":
        layers = int(meta["layers"])
        return Controller(
            attribute=meta["attribute"],
            residual=bool(meta["residual"]),
            weights=[arrays[f"W{i}"] for i in range(layers)],
            biases=[arrays[f"b{i}"] for i in range(layers)],
        )
    if kind == "direction":
        return GlobalDirection(
            p_hat=arrays["p_hat"],
            attribute=meta["attribute"],
            scale_alpha=float(meta["scale_alpha"]),
            center=arrays["center"],
            fingerprint=meta.get("fingerprint", ""),
        )
    if kind == "hyperplane":
        return AttributeHyperplane(
            u_hat=arrays["u_hat"],
            b_hat=float(meta["b_hat"]),
            train_accuracy=float(meta["train_accuracy"]),
        )
    raise ContainerVersionError(f"unknown payload kind {kind!r}")


def export_obj(
    shape: np.ndarray,
    texture: np.ndarray,
    triangles: np.ndarray,
    path: str | Path,
) -> Path:
    """Write a vertex-colored OBJ: "v x y z r g b" lines then 1-based faces.

    Colors are clamped into [0, 1] for viewer compatibility; coordinates are
    written with 6 significant digits.
    """
    verts = np.asarray(shape, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(texture, dtype=np.float64).reshape(-1, 3)
    if len(colors) != len(verts):
        raise ValueError(f"texture rows {len(colors)} != vertex rows {len(verts)}")
    if not np.all(np.isfinite(verts)):
        raise ValueError("non-finite vertex coordinates")
    if not np.all(np.isfinite(colors)):
        raise ValueError("non-finite vertex colors")
    colors = np.clip(colors, 0.0, 1.0)
    tris = np.asarray(triangles, dtype=np.int64)
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for (x, y, z), (r, g, b) in zip(verts, colors):
        lines.append(f"v {x:.6g} {y:.6g} {z:.6g} {r:.6g} {g:.6g} {b:.6g}")
    for i, j, k in tris + 1:
        lines.append(f"f {i} {j} {k}")
    out.write_text("\n".join(lines) + "\n")
    return out


def parse_obj(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read back vertices, colors, and 0-based triangles from our OBJ output."""
    verts, colors, tris = [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            vals = [float(v) for v in parts[1:]]
            verts.append(vals[:3])
            colors.append(vals[3:6] if len(vals) >= 6 else [1.0, 1.0, 1.0])
        elif parts[0] == "f":
            tris.append([int(t.split("/")[0]) - 1 for t in parts[1:4]])
    return np.asarray(verts), np.asarray(colors), np.asarray(tris, dtype=np.int64)


DEFAULT_SWEEP_SCORES = tuple(np.arange(-2.0, 2.0 + 1e-9, 0.5))


def export_score_sweep(
    controller: Controller,
    p_src: np.ndarray,
    scores: Sequence[float],
    basis: MorphableBasis,
    out_dir: str | Path,
    attribute: str | None = None,
) -> list[Path]:
    """One vertex-colored OBJ per score: the controller's edit of p_src.

    Filenames follow sweep_<attr>_<score>.obj; the default grid runs -2.0 to
    2.0 in steps of 0.5 (nine meshes).
    """
    attr = attribute if attribute is not None else (controller.attribute or "attr")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k_i, k_e, k_t = basis.k_dims
    paths = []
    for s in scores:
        edited = forward(controller, np.asarray(p_src, dtype=np.float64), float(s))
        shape = eval_shape(basis, edited[:k_i], edited[k_i : k_i + k_e])
        texture = eval_texture(basis, edited[k_i + k_e :])
        fname = f"sweep_{attr}_{s:+.6g}.obj"
        paths.append(export_obj(shape, texture, basis.triangles, out / fname))
    return paths


def format_table(
    row_labels: Sequence[str],
    col_labels: Sequence[str],
    values: dict[str, dict[str, float]],
    corner: str = "method",
) -> str:
    """Tab-delimited table, rows by method and columns by attribute."""
    lines = ["\t".join([corner] + list(col_labels))]
    for row in row_labels:
        cells = [f"{values[row][col]:.6g}" for col in col_labels]
        lines.append("\t".join([row] + cells))
    return "\n".join(lines) + "\n"


def write_report(report: dict, prefix: str | Path) -> tuple[Path, Path]:
    """Emit <prefix>.json (structured) and <prefix>.txt (delimited table).

    The report dict must carry "rows", "columns", and "cells" for the table;
    everything is written deterministically (sorted keys, fixed float
    formatting), so identical inputs give byte-identical files.
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    json_path = prefix.with_suffix(".json")
    txt_path = prefix.with_suffix(".txt")
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    txt_path.write_text(
        format_table(report["rows"], report["columns"], report["cells"], corner=report.get("corner", "method"))
    )
    return json_path, txt_path
