"""Deterministic RoI relational graph.

Nodes come from bounding boxes plus an externally supplied feature vector.
An undirected edge joins i and j when their centroid distance is below
``tau_d`` or their feature cosine is above ``tau_s``; it is stored in both
directions. Each direction carries

* spatial features ``[d, r_x, r_y, r_z, v_i / v_j]`` with r the unit vector
  from centroid i toward centroid j, and
* morphological features ``[s, ct_i, pet_i, ct_j, pet_j]`` (mean CT and PET
  intensity inside each box).

The export also lists, per edge, the concatenation
``h_i ‖ h_j ‖ spatial ‖ morphological`` for a downstream learner.

Feature sidecar format (all little-endian): a uint32 byte length L, then L
bytes of UTF-8 JSON ``{"count": N, "dim": D, "dtype": "<f4"}``, then N*D
float32 values, row-major.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .corpus import BoundingBox3D
from .errors import ConfigError, SchemaError


@dataclass(frozen=True)
class GraphConfig:
    tau_d: float
    tau_s: float

    def __post_init__(self):
        if not (isinstance(self.tau_d, (int, float)) and math.isfinite(self.tau_d) and self.tau_d > 0):
            raise ConfigError(f"tau_d must be a positive number, got {self.tau_d!r}")
        if not (isinstance(self.tau_s, (int, float)) and -1.0 <= self.tau_s <= 1.0):
            raise ConfigError(f"tau_s must lie in [-1, 1], got {self.tau_s!r}")

    def to_dict(self):
        return {"tau_d": self.tau_d, "tau_s": self.tau_s}


@dataclass(frozen=True, eq=False)
class RoINode:
    feature: np.ndarray
    bbox: BoundingBox3D
    centroid: np.ndarray
    volume: float
    mean_intensity_ct: float = 0.0
    mean_intensity_pet: float = 0.0

    def to_dict(self, index: int) -> dict[str, Any]:
        return {
            "index": index,
            "bbox": list(self.bbox.as_tuple()),
            "centroid": self.centroid.tolist(),
            "volume": self.volume,
            "mean_intensity_ct": self.mean_intensity_ct,
            "mean_intensity_pet": self.mean_intensity_pet,
            "feature": self.feature.tolist(),
        }


def _subvolume_mean(sub, bbox: BoundingBox3D, name: str) -> float:
    arr = np.asarray(sub, dtype=np.float64)
    extents = bbox.extents
    if any(e != int(e) for e in extents) or arr.shape != tuple(int(e) for e in extents):
        raise ConfigError(
            f"{name} subvolume shape {arr.shape} does not match bbox extents {extents}")
    return float(arr.mean())


def derive_node(bbox: BoundingBox3D | Sequence[float], feature: Sequence[float],
                ct: Optional[np.ndarray] = None, pet: Optional[np.ndarray] = None) -> RoINode:
    """Node geometry and intensities from a box and optional (x, y, z)-ordered subvolumes.

    Missing subvolumes give intensity 0.
    """
    if not isinstance(bbox, BoundingBox3D):
        bbox = BoundingBox3D.from_sequence(list(bbox))
    vec = np.asarray(feature, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0 or not np.all(np.isfinite(vec)):
        raise SchemaError("node feature must be a non-empty finite vector")
    if not np.any(vec):
        raise SchemaError("node feature must be non-zero")
    ex, ey, ez = bbox.extents
    vec.setflags(write=False)
    centroid = np.array(bbox.centroid)
    centroid.setflags(write=False)
    return RoINode(
        feature=vec,
        bbox=bbox,
        centroid=centroid,
        volume=float(ex * ey * ez),
        mean_intensity_ct=0.0 if ct is None else _subvolume_mean(ct, bbox, "CT"),
        mean_intensity_pet=0.0 if pet is None else _subvolume_mean(pet, bbox, "PET"),
    )


def crop(volume: np.ndarray, bbox: BoundingBox3D) -> np.ndarray:
    """The (x, y, z)-indexed region of ``volume`` covered by an integer bbox."""
    b = [int(v) for v in bbox.as_tuple()]
    if [float(v) for v in b] != [float(v) for v in bbox.as_tuple()]:
        raise ConfigError("cropping requires integer bbox coordinates")
    if any(hi > n for hi, n in zip(b[3:], volume.shape)):
        raise ConfigError(f"bbox {b} exceeds volume shape {volume.shape}")
    return volume[b[0]:b[3], b[1]:b[4], b[2]:b[5]]


def _feature_cosine(a: np.ndarray, b: np.ndarray) -> float:
    value = float(a @ b) / (float(np.linalg.norm(a)) * float(np.linalg.norm(b)))
    return min(1.0, max(-1.0, value))


@dataclass(frozen=True)
class RoIEdge:
    i: int
    j: int
    distance: float
    direction: tuple[float, float, float]
    volume_ratio: float
    feature_similarity: float
    spatial_features: tuple[float, ...]
    morphological_features: tuple[float, ...]
    coincident_centroids: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "i": self.i,
            "j": self.j,
            "distance": self.distance,
            "direction": list(self.direction),
            "volume_ratio": self.volume_ratio,
            "feature_similarity": self.feature_similarity,
            "spatial_features": list(self.spatial_features),
            "morphological_features": list(self.morphological_features),
            "coincident_centroids": self.coincident_centroids,
        }


def edge_features(node_i: RoINode, node_j: RoINode):
    """``(spatial, morphological, coincident)`` for the directed pair i -> j.

    When the centroids coincide the direction is the zero vector and
    ``coincident`` is True.
    """
    if node_i is node_j:
        raise ConfigError("self-loop: edge features need two distinct nodes")
    if node_i.feature.shape != node_j.feature.shape:
        raise ConfigError("feature dimension mismatch")
    delta = node_j.centroid - node_i.centroid
    dist = float(np.linalg.norm(delta))
    coincident = dist == 0.0
    direction = np.zeros(3) if coincident else delta / dist
    spatial = (dist, *(float(x) for x in direction), node_i.volume / node_j.volume)
    morph = (
        _feature_cosine(node_i.feature, node_j.feature),
        node_i.mean_intensity_ct, node_i.mean_intensity_pet,
        node_j.mean_intensity_ct, node_j.mean_intensity_pet,
    )
    return spatial, morph, coincident


@dataclass
class RoIGraph:
    nodes: list[RoINode]
    edges: list[RoIEdge]
    config: GraphConfig
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self, include_edge_inputs: bool = True) -> dict[str, Any]:
        edges = []
        for e in self.edges:
            d = e.to_dict()
            if include_edge_inputs:
                d["edge_input"] = (
                    self.nodes[e.i].feature.tolist() + self.nodes[e.j].feature.tolist()
                    + list(e.spatial_features) + list(e.morphological_features))
            edges.append(d)
        return {
            **self.extra,
            "nodes": [n.to_dict(k) for k, n in enumerate(self.nodes)],
            "edges": edges,
            "config": self.config.to_dict(),
        }


def build_graph(nodes: Sequence[RoINode], config: GraphConfig) -> RoIGraph:
    """Connect every pair meeting either criterion; edges sorted by (i, j)."""
    nodes = list(nodes)
    if not nodes:
        raise ConfigError("graph needs at least one node")
    dims = {n.feature.shape for n in nodes}
    if len(dims) != 1:
        raise ConfigError(f"feature dimension mismatch: {sorted(d[0] for d in dims)}")
    edges = []
    for i, a in enumerate(nodes):
        for j in range(i + 1, len(nodes)):
            b = nodes[j]
            spatial, morph, coincident = edge_features(a, b)
            if not (spatial[0] < config.tau_d or morph[0] > config.tau_s):
                continue
            back_spatial, back_morph, _ = edge_features(b, a)
            edges.append(RoIEdge(i, j, spatial[0], spatial[1:4], spatial[4], morph[0],
                                 spatial, morph, coincident))
            edges.append(RoIEdge(j, i, back_spatial[0], back_spatial[1:4], back_spatial[4],
                                 back_morph[0], back_spatial, back_morph, coincident))
    edges.sort(key=lambda e: (e.i, e.j))
    return RoIGraph(nodes, edges, config)


# --- feature sidecar ----------------------------------------------------------------


def write_features(path: str | Path, features: np.ndarray) -> None:
    arr = np.asarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ConfigError("features must be a 2-D array (count x dim)")
    header = json.dumps({"count": arr.shape[0], "dim": arr.shape[1], "dtype": "<f4"},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_features(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise SchemaError(f"{path}: truncated feature file")
    (hlen,) = struct.unpack_from("<I", data, 0)
    try:
        header = json.loads(data[4:4 + hlen].decode("utf-8"))
        count, dim = int(header["count"]), int(header["dim"])
    except (ValueError, KeyError, TypeError, UnicodeDecodeError):
        raise SchemaError(f"{path}: malformed feature header") from None
    if header.get("dtype", "<f4") != "<f4":
        raise SchemaError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    body = data[4 + hlen:]
    if len(body) != count * dim * 4:
        raise SchemaError(f"{path}: expected {count * dim * 4} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float64)


def load_nodes(path: str | Path) -> list[RoINode]:
    """Nodes from JSON: a list of ``{"bbox", "feature"?, "mean_intensity_ct"?,
    "mean_intensity_pet"?}`` or ``{"nodes": [...], "features_file": "x.bin"}``
    where the sidecar (relative to the JSON file) supplies missing features."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    sidecar = None
    if isinstance(data, dict):
        if data.get("features_file"):
            sidecar = read_features(path.parent / data["features_file"])
        data = data.get("nodes")
    if not isinstance(data, list):
        raise SchemaError(f"{path}: expected a list of nodes")
    if sidecar is not None and len(sidecar) != len(data):
        raise SchemaError(f"{path}: {len(data)} nodes but {len(sidecar)} feature rows")
    nodes = []
    for k, item in enumerate(data):
        if not isinstance(item, dict) or "bbox" not in item:
            raise SchemaError(f"node {k}: needs a 'bbox'")
        feature = item.get("feature")
        if feature is None:
            if sidecar is None:
                raise SchemaError(f"node {k}: no feature and no features_file")
            feature = sidecar[k]
        node = derive_node(item["bbox"], feature)
        ct = float(item.get("mean_intensity_ct", 0.0))
        pet = float(item.get("mean_intensity_pet", 0.0))
        nodes.append(RoINode(node.feature, node.bbox, node.centroid, node.volume, ct, pet))
    return nodes
