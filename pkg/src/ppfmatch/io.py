"""File formats: point clouds (text, ASCII PLY), correspondences, ground truth."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ppfmatch.errors import ParseError
from ppfmatch.geom import RigidTransform
from ppfmatch.matcher import CorrespondenceSet
from ppfmatch.metrics import GroundTruth


def read_xyz(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read ``x y z [nx ny nz]`` lines; ``#`` starts a comment.

    Returns points and normals (``None`` if no line carries them).
    """
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals = [float(tok) for tok in line.split()]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if len(vals) not in (3, 6):
            raise ParseError(f"{path}:{lineno}: expected 3 or 6 values, got {len(vals)}")
        rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no points")
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise ParseError(f"{path}: mixed lines with and without normals")
    arr = np.array(rows)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{path}: non-finite coordinates")
    if arr.shape[1] == 6:
        return arr[:, :3], _unit(arr[:, 3:], path)
    return arr, None


def _unit(normals: np.ndarray, path) -> np.ndarray:
    norm = np.linalg.norm(normals, axis=1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ParseError(f"{path}: zero-length normal")
    return normals / norm


def write_xyz(path: str | Path, points, normals=None) -> None:
    data = np.asarray(points) if normals is None else np.hstack([points, normals])
    np.savetxt(path, data, fmt="%.17g")


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    """ASCII PLY with a vertex element holding x, y, z and optionally nx, ny, nz."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}: missing 'ply' header")
    elements: list[tuple[str, int, list[str]]] = []
    end = None
    for i, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise ParseError(f"{path}: only ASCII PLY is supported")
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError(f"{path}: property before element")
            if tok[1] == "list":
                elements[-1][2].append("__list__")
            else:
                elements[-1][2].append(tok[-1])
        elif tok[0] == "end_header":
            end = i + 1
            break
    if end is None:
        raise ParseError(f"{path}: missing end_header")
    cursor = end
    for name, count, props in elements:
        body = lines[cursor:cursor + count]
        cursor += count
        if name != "vertex":
            continue
        if "__list__" in props or not {"x", "y", "z"} <= set(props):
            raise ParseError(f"{path}: vertex element needs scalar x, y, z properties")
        if len(body) != count:
            raise ParseError(f"{path}: expected {count} vertices, found {len(body)}")
        try:
            data = np.array([[float(v) for v in row.split()[:len(props)]] for row in body])
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        if data.shape != (count, len(props)):
            raise ParseError(f"{path}: malformed vertex rows")
        col = {p: i for i, p in enumerate(props)}
        points = data[:, [col["x"], col["y"], col["z"]]]
        normals = None
        if {"nx", "ny", "nz"} <= set(props):
            normals = _unit(data[:, [col["nx"], col["ny"], col["nz"]]], path)
        return points, normals
    raise ParseError(f"{path}: no vertex element")


def read_cloud(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    if path.suffix.lower() == ".ply":
        return read_ply(path)
    return read_xyz(path)


def write_correspondences(path: str | Path, corr: CorrespondenceSet, header: dict) -> None:
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        for u, v, c in corr.pairs():
            fh.write(f"{u} {v} {c:.17g}\n")


def read_correspondences(path: str | Path) -> tuple[CorrespondenceSet, dict]:
    header: dict = {}
    src, tgt, conf = [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.startswith("#"):
            if lineno == 1:
                try:
                    header = json.loads(line[1:])
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{path}: bad header ({exc})") from exc
            continue
        if not line.strip():
            continue
        tok = line.split()
        try:
            src.append(int(tok[0]))
            tgt.append(int(tok[1]))
            conf.append(float(tok[2]))
        except (IndexError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: expected 'u v confidence'") from exc
    return CorrespondenceSet(src, tgt, conf, "point", meta=header), header


def ground_truth_to_json(gt: GroundTruth) -> dict:
    out = {"correspondences": gt.correspondences.tolist(), **gt.meta}
    if gt.transform is not None:
        out["transform"] = gt.transform.as_matrix().tolist()
    else:
        out["flow"] = gt.flow.tolist()
    return out


def ground_truth_from_json(data: dict) -> GroundTruth:
    meta = {k: v for k, v in data.items() if k not in ("correspondences", "transform", "flow")}
    transform = RigidTransform.from_matrix(data["transform"]) if "transform" in data else None
    flow = np.asarray(data["flow"]) if "flow" in data else None
    return GroundTruth(np.asarray(data["correspondences"]), transform, flow, meta)


def write_ground_truth(path: str | Path, gt: GroundTruth) -> None:
    Path(path).write_text(json.dumps(ground_truth_to_json(gt)))


def read_ground_truth(path: str | Path) -> GroundTruth:
    try:
        return ground_truth_from_json(json.loads(Path(path).read_text()))
    except (OSError, KeyError, ValueError) as exc:
        raise ParseError(f"{path}: cannot read ground truth ({exc})") from exc
