"""Per-object feature histories and the per-agent KNN graph observation.

Each tracked object contributes a per-frame feature [role one-hot, world
coordinates, edge distances]; a ring buffer keeps the most recent four frames
(newest first, padded by repetition at episode start). A controlled agent
observes the complete graph over itself plus its K nearest tracked objects,
with node embeddings formed by concatenating the four buffered frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tracker import TrackSet

HISTORY = 4


def feature_dim(n_roles: int) -> int:
    return n_roles + 6  # one-hot + 2 coords + 4 edge distances


def node_embedding_dim(n_roles: int) -> int:
    return HISTORY * feature_dim(n_roles)


@dataclass(frozen=True)
class FrameFeature:
    role_onehot: np.ndarray  # (R,)
    coords: np.ndarray  # (2,)
    edge_distances: np.ndarray  # (4,) to left/right/bottom/top walls

    def vector(self) -> np.ndarray:
        return np.concatenate([self.role_onehot, self.coords, self.edge_distances])


def frame_feature(role: int, coords: np.ndarray, n_roles: int, half_extent: float = 1.0) -> FrameFeature:
    onehot = np.zeros(n_roles)
    onehot[role] = 1.0
    x, y = float(coords[0]), float(coords[1])
    g = np.array([x + half_extent, half_extent - x, y + half_extent, half_extent - y])
    return FrameFeature(role_onehot=onehot, coords=np.array([x, y]), edge_distances=g)


def _feature_matrix(tracks: TrackSet, n_roles: int, half_extent: float) -> np.ndarray:
    m = tracks.n_tracks
    feats = np.zeros((m, feature_dim(n_roles)))
    feats[np.arange(m), tracks.roles] = 1.0
    x = tracks.coords[:, 0]
    y = tracks.coords[:, 1]
    feats[:, n_roles : n_roles + 2] = tracks.coords
    feats[:, n_roles + 2] = x + half_extent
    feats[:, n_roles + 3] = half_extent - x
    feats[:, n_roles + 4] = y + half_extent
    feats[:, n_roles + 5] = half_extent - y
    return feats


@dataclass
class TrackletWindows:
    """Ring buffers of the last HISTORY per-frame features, newest first."""

    buffer: np.ndarray  # (m, HISTORY, F)
    n_roles: int
    half_extent: float = 1.0
    initialized: bool = False

    @property
    def n_tracks(self) -> int:
        return self.buffer.shape[0]


def make_windows(n_tracks: int, n_roles: int, half_extent: float = 1.0) -> TrackletWindows:
    return TrackletWindows(
        buffer=np.zeros((n_tracks, HISTORY, feature_dim(n_roles))),
        n_roles=n_roles,
        half_extent=half_extent,
    )


def push_frame(windows: TrackletWindows, tracks: TrackSet) -> TrackletWindows:
    """Shift each window by one frame; the first push fills all four slots."""
    if tracks.n_tracks != windows.n_tracks:
        raise ValueError("track count does not match windows")
    feats = _feature_matrix(tracks, windows.n_roles, windows.half_extent)
    new = np.empty_like(windows.buffer)
    if windows.initialized:
        new[:, 1:] = windows.buffer[:, :-1]
        new[:, 0] = feats
    else:
        new[:] = feats[:, None, :]
    return TrackletWindows(
        buffer=new, n_roles=windows.n_roles, half_extent=windows.half_extent, initialized=True
    )


def build_node_embedding(windows: TrackletWindows, track_id: int) -> np.ndarray:
    """Concatenate the four buffered frames, newest first."""
    if not windows.initialized:
        raise ValueError("windows not initialized; push a frame first")
    return windows.buffer[track_id].ravel().copy()


@dataclass(frozen=True)
class AgentGraph:
    """Complete graph over one controlled agent (row 0) and its K neighbors."""

    agent_id: int
    neighbor_ids: np.ndarray  # (K,) ascending track ids
    node_features: np.ndarray  # (K+1, HISTORY*F)

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    def adjacency(self) -> np.ndarray:
        return complete_adjacency(self.n_nodes).copy()


_ADJ_CACHE: dict = {}


def complete_adjacency(n_nodes: int) -> np.ndarray:
    adj = _ADJ_CACHE.get(n_nodes)
    if adj is None:
        adj = np.ones((n_nodes, n_nodes)) - np.eye(n_nodes)
        _ADJ_CACHE[n_nodes] = adj
    return adj


_OTHERS_CACHE: dict = {}


def _others(m: int, agent_id: int) -> np.ndarray:
    key = (m, agent_id)
    arr = _OTHERS_CACHE.get(key)
    if arr is None:
        arr = np.array([i for i in range(m) if i != agent_id], np.int64)
        _OTHERS_CACHE[key] = arr
    return arr


def knn_graph(windows: TrackletWindows, tracks: TrackSet, agent_id: int, k: int) -> AgentGraph:
    """Neighbors are the k nearest tracks by current position, ties to smaller id."""
    m = tracks.n_tracks
    if k > m - 1:
        raise ValueError(f"k={k} exceeds available objects m-1={m - 1}")
    if not windows.initialized:
        raise ValueError("windows not initialized; push a frame first")
    others = _others(m, agent_id)
    diff = tracks.coords[others] - tracks.coords[agent_id]
    d = diff[:, 0] ** 2 + diff[:, 1] ** 2  # squared distance orders the same
    # stable sort over ascending ids == (distance, id) lexicographic order
    order = np.argsort(d, kind="stable")
    chosen = np.sort(others[order[:k]])
    idx = np.empty(k + 1, np.int64)
    idx[0] = agent_id
    idx[1:] = chosen
    rows = windows.buffer[idx].reshape(k + 1, -1)
    return AgentGraph(agent_id=agent_id, neighbor_ids=chosen, node_features=rows)
