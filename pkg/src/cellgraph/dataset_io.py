"""On-disk dataset container: `CGRF0001` binary format.

Layout (all little-endian):
    8-byte magic  b"CGRF0001"  (4-byte tag + 4-byte version)
    u32 manifest length, then manifest as UTF-8 JSON
    per record:
        u32 node count, u32 edge count, u8 flag byte
        float32 features row-major, float32 positions (n x 2)
        edge triplets (u32, u32, float32)
        [flag bit 0] int32 node labels
        [flag bit 1] int32 graph label
        [flag bit 2] float32 time, u8 event
        u32 CRC32 of the record payload
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from .graphdata import CellGraph

MAGIC_TAG = b"CGRF"
FORMAT_VERSION = b"0001"

_FLAG_NODE_LABELS = 1
_FLAG_GRAPH_LABEL = 2
_FLAG_SURVIVAL = 4


class DatasetFormatError(Exception):
    pass


@dataclass
class DatasetManifest:
    name: str
    num_records: int
    feature_dim: int
    class_names: list = field(default_factory=list)
    splits: dict = field(default_factory=dict)
    magnification: str = ""

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in raw.items() if k in known})


def _encode_record(graph):
    n, e = graph.num_nodes, graph.num_edges
    flags = 0
    if graph.node_labels is not None:
        flags |= _FLAG_NODE_LABELS
    if graph.graph_label is not None:
        flags |= _FLAG_GRAPH_LABEL
    if graph.survival is not None:
        flags |= _FLAG_SURVIVAL
    parts = [struct.pack("<IIB", n, e, flags)]
    parts.append(np.ascontiguousarray(graph.node_features, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(graph.node_positions, dtype="<f4").tobytes())
    if e:
        trip = np.zeros(e, dtype=[("i", "<u4"), ("j", "<u4"), ("w", "<f4")])
        trip["i"] = graph.edge_index[:, 0]
        trip["j"] = graph.edge_index[:, 1]
        trip["w"] = graph.edge_weight
        parts.append(trip.tobytes())
    if flags & _FLAG_NODE_LABELS:
        parts.append(np.ascontiguousarray(graph.node_labels, dtype="<i4").tobytes())
    if flags & _FLAG_GRAPH_LABEL:
        parts.append(struct.pack("<i", int(graph.graph_label)))
    if flags & _FLAG_SURVIVAL:
        t, ev = graph.survival
        parts.append(struct.pack("<fB", float(t), int(ev)))
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def _read_exact(fh, size, what):
    buf = fh.read(size)
    if len(buf) != size:
        raise DatasetFormatError(f"truncated {what}: wanted {size} bytes, got {len(buf)}")
    return buf


def _decode_record(fh, feature_dim, magnification):
    header = _read_exact(fh, 9, "record header")
    n, e, flags = struct.unpack("<IIB", header)
    payload = [header]

    def take(size, what):
        buf = _read_exact(fh, size, what)
        payload.append(buf)
        return buf

    feats = np.frombuffer(take(4 * n * feature_dim, "features"), dtype="<f4")
    feats = feats.reshape(n, feature_dim).astype(np.float32)
    pos = np.frombuffer(take(4 * n * 2, "positions"), dtype="<f4").reshape(n, 2).astype(np.float32)
    if e:
        trip = np.frombuffer(take(12 * e, "edges"), dtype=[("i", "<u4"), ("j", "<u4"), ("w", "<f4")])
        edge_index = np.stack([trip["i"], trip["j"]], axis=1).astype(np.int64)
        edge_weight = trip["w"].astype(np.float32)
    else:
        edge_index = np.zeros((0, 2), dtype=np.int64)
        edge_weight = np.zeros(0, dtype=np.float32)
    node_labels = None
    if flags & _FLAG_NODE_LABELS:
        node_labels = np.frombuffer(take(4 * n, "node labels"), dtype="<i4").astype(np.int64)
    graph_label = None
    if flags & _FLAG_GRAPH_LABEL:
        graph_label = struct.unpack("<i", take(4, "graph label"))[0]
    survival = None
    if flags & _FLAG_SURVIVAL:
        t, ev = struct.unpack("<fB", take(5, "survival"))
        survival = (float(t), int(ev))
    stored = struct.unpack("<I", _read_exact(fh, 4, "record checksum"))[0]
    actual = zlib.crc32(b"".join(payload)) & 0xFFFFFFFF
    if stored != actual:
        raise DatasetFormatError(f"checksum failure: stored {stored:#x}, computed {actual:#x}")
    return CellGraph(node_features=feats, node_positions=pos,
                     edge_index=edge_index, edge_weight=edge_weight,
                     node_labels=node_labels, graph_label=graph_label,
                     survival=survival, magnification=magnification)


def write_dataset(path, manifest, graphs):
    graphs = list(graphs)
    if len(graphs) != manifest.num_records:
        raise ValueError("manifest record count does not match graph list")
    for g in graphs:
        if g.feature_dim != manifest.feature_dim:
            raise ValueError("graph feature dimension does not match manifest")
    mbytes = manifest.to_json().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC_TAG + FORMAT_VERSION)
        fh.write(struct.pack("<I", len(mbytes)))
        fh.write(mbytes)
        for g in graphs:
            fh.write(_encode_record(g))


def read_dataset(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "magic")
        if magic[:4] != MAGIC_TAG:
            raise DatasetFormatError(f"not a cell-graph dataset (magic {magic[:4]!r})")
        if magic[4:] != FORMAT_VERSION:
            raise DatasetFormatError(
                f"unsupported format version {magic[4:].decode('ascii', 'replace')!r}; "
                f"this build reads version {FORMAT_VERSION.decode()!r} only")
        mlen = struct.unpack("<I", _read_exact(fh, 4, "manifest length"))[0]
        manifest = DatasetManifest.from_json(_read_exact(fh, mlen, "manifest").decode("utf-8"))
        graphs = [_decode_record(fh, manifest.feature_dim, manifest.magnification)
                  for _ in range(manifest.num_records)]
        if fh.read(1):
            raise DatasetFormatError("trailing bytes after last record")
    return manifest, graphs
