"""Model files and synthetic test models.

A model file is JSON::

    {"format": "gregsolid-model", "version": 1,
     "domain": "<catalog shape>",
     "metadata": {"name": ..., "units": ...},
     "patches": [<patch descriptor>, ...]}

Patch descriptors are the dictionaries produced by
``BoundaryPatch.descriptor``: ``tensor_spline`` entries carry degrees, knot
arrays, the control net and the domain corners sent to the parameter square
corners; ``sampled_grid`` entries carry face-parameter pairs in the face frame
and the matching model-space points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boundary import BoundaryPatch, SampledGridPatch, TensorSplinePatch, face_frame, ingest_patches
from .domain import SHAPES, PolyhedralDomain, build_domain
from .errors import IngestionError
from .spline import BSplinePatch, KnotVector

FORMAT = "gregsolid-model"
VERSION = 1
SYNTH_KINDS = ("cube", "twisted_prism", "bulged_pentaprism")


@dataclass
class Model:
    domain: PolyhedralDomain
    patches: list[BoundaryPatch]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "domain": self.domain.name,
            "metadata": dict(self.metadata),
            "patches": [p.descriptor() for p in self.patches],
        }


def dumps_model(model: Model) -> str:
    return json.dumps(model.to_dict(), sort_keys=True, indent=1) + "\n"


def save_model(model: Model, path) -> None:
    Path(path).write_text(dumps_model(model))


def model_from_dict(data) -> Model:
    if not isinstance(data, dict):
        raise IngestionError("model file must contain a JSON object")
    if data.get("format") != FORMAT:
        raise IngestionError(f"not a model file (format {data.get('format')!r})")
    if data.get("version") != VERSION:
        raise IngestionError(f"unsupported model version {data.get('version')!r}")
    shape = data.get("domain")
    if shape not in SHAPES:
        raise IngestionError(f"unknown domain {shape!r}; expected one of {', '.join(SHAPES)}")
    patches = data.get("patches")
    if not isinstance(patches, list):
        raise IngestionError("'patches' must be a list")
    meta = data.get("metadata", {})
    if not isinstance(meta, dict):
        raise IngestionError("'metadata' must be an object")
    d = build_domain(shape)
    return Model(d, ingest_patches(d, patches), meta)


def load_model(path) -> Model:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IngestionError(f"cannot read model {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(data)


# --- synthetic models ------------------------------------------------------


def _structured_face_grid(d: PolyhedralDomain, face: int, n: int) -> np.ndarray:
    """Structured sampling of a face polygon, shape ``(ns, nt, 3)``.

    Every polygon edge gets ``n`` uniform segments, except edge 1 of a
    pentagon, which gets ``2n`` so that opposite sides match.
    """
    c = d.corners[list(d.faces[face])]
    k = len(c)
    s = np.linspace(0, 1, n + 1)

    def seg(a, b, m):
        t = np.linspace(0, 1, m + 1)[:, None]
        return (1 - t) * a + t * b

    if k == 4:
        S, T = np.meshgrid(s, s, indexing="ij")
        S, T = S[..., None], T[..., None]
        return (1 - S) * (1 - T) * c[0] + S * (1 - T) * c[1] + S * T * c[2] + (1 - S) * T * c[3]
    if k == 3:
        S, T = np.meshgrid(s, s, indexing="ij")
        S, T = S[..., None], T[..., None]
        return (1 - T) * ((1 - S) * c[0] + S * c[1]) + T * c[2]
    if k == 5:
        bottom = seg(c[0], c[1], n)
        top = seg(c[3], c[2], n)
        right = seg(c[1], c[2], 2 * n)
        left = np.concatenate([seg(c[0], c[4], n), seg(c[4], c[3], n)[1:]])
        S, T = np.meshgrid(s, np.linspace(0, 1, 2 * n + 1), indexing="ij")
        S, T = S[..., None], T[..., None]
        coons = (
            (1 - T) * bottom[:, None]
            + T * top[:, None]
            + (1 - S) * left[None, :]
            + S * right[None, :]
            - ((1 - S) * (1 - T) * c[0] + S * (1 - T) * c[1] + S * T * c[2] + (1 - S) * T * c[3])
        )
        return coons
    raise ValueError(f"no structured sampling for {k}-sided faces")


def sampled_patch(d: PolyhedralDomain, face: int, phi, n: int = 16) -> SampledGridPatch:
    """Sampled-grid patch of the map ``phi`` restricted to a face."""
    G = _structured_face_grid(d, face, n)
    origin, basis = face_frame(d, face)
    params = (G - origin) @ basis.T
    return SampledGridPatch(d, face, params, phi(G))


def _identity_quad_patch(d: PolyhedralDomain, face: int, phi) -> TensorSplinePatch:
    f = list(d.faces[face])
    corners = [f[0], f[1], f[2], f[3]]
    ctrl = np.array([[d.corners[corners[0]], d.corners[corners[3]]], [d.corners[corners[1]], d.corners[corners[2]]]])
    lin = KnotVector.uniform(1, 2)
    return TensorSplinePatch(d, face, BSplinePatch(lin, lin, phi(ctrl)), corners)


def _height(d: PolyhedralDomain, p):
    z = d.corners[:, 2]
    return (p[..., 2] - z.min()) / (z.max() - z.min())


def synth_model(kind: str, magnitude: float = 0.0, resolution: int = 16) -> Model:
    """Small analytic stand-ins for scanned models.

    ``cube`` stretches the unit cube along x by ``1 + magnitude`` (identity at
    0); ``twisted_prism`` rotates horizontal slices of a triangular prism by
    ``magnitude`` times the normalized height; ``bulged_pentaprism`` scales
    slices of a pentagonal prism radially by ``1 + magnitude * sin(pi h)``.
    """
    if magnitude < 0 or not np.isfinite(magnitude):
        raise ValueError("magnitude must be a finite non-negative number")
    meta = {"name": f"{kind}_{magnitude:g}", "units": "unit", "kind": kind, "magnitude": float(magnitude)}
    if kind == "cube":
        d = build_domain("hexahedron")
        scale = np.array([1.0 + magnitude, 1.0, 1.0])
        patches = [_identity_quad_patch(d, f, lambda p: p * scale) for f in range(d.n_faces)]
    elif kind == "twisted_prism":
        d = build_domain("triangular_prism")

        def phi(p):
            th = magnitude * _height(d, p)
            c, s = np.cos(th), np.sin(th)
            return np.stack([c * p[..., 0] - s * p[..., 1], s * p[..., 0] + c * p[..., 1], p[..., 2]], axis=-1)

        patches = [sampled_patch(d, f, phi, resolution) for f in range(d.n_faces)]
    elif kind == "bulged_pentaprism":
        d = build_domain("pentagonal_prism")

        def phi(p):
            r = 1.0 + magnitude * np.sin(np.pi * _height(d, p))
            return np.stack([r * p[..., 0], r * p[..., 1], p[..., 2]], axis=-1)

        patches = [sampled_patch(d, f, phi, resolution) for f in range(d.n_faces)]
    else:
        raise ValueError(f"unknown synthetic model {kind!r}; expected one of {', '.join(SYNTH_KINDS)}")
    return Model(d, ingest_patches(d, patches), meta)
