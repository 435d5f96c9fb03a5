"""Identity-stable tracking by repeated unbalanced assignment.

Each frame, tracks are matched to detections by minimizing squared distance
plus a large penalty for role mismatches. The deficit side of the problem is
padded with zero-cost surrogates so a square solver applies: a track matched
to a surrogate column keeps its previous role and coordinates (carry-forward),
a detection matched to a surrogate row is discarded as spurious.

The solver reports the minimum-cost matching with ties broken toward the
lexicographically smallest assignment vector, which makes the whole tracker
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .kernels import lap_solve, lex_min_matching
from .perception import Detection

ROLE_PENALTY_DEFAULT = 1.0e6


@dataclass(frozen=True)
class Track:
    track_id: int
    role: int
    coords: np.ndarray
    staleness: int


@dataclass
class TrackSet:
    roles: np.ndarray  # (m,) int32, immutable per track
    coords: np.ndarray  # (m, 2)
    staleness: np.ndarray  # (m,) int64, frames since last real detection

    @property
    def n_tracks(self) -> int:
        return len(self.roles)

    @property
    def tracks(self) -> list:
        return [
            Track(i, int(self.roles[i]), self.coords[i].copy(), int(self.staleness[i]))
            for i in range(self.n_tracks)
        ]


@dataclass(frozen=True)
class CostMatrix:
    """Square padded assignment costs: real rows/cols first, zero surrogates after."""

    matrix: np.ndarray
    n_tracks: int
    n_detections: int


def _cost_fill(coords, roles, det_xy, det_roles, role_penalty):
    m, k = len(roles), len(det_roles)
    cost = np.zeros((max(m, k), max(m, k)))
    if k:
        diff = coords[:, None, :] - det_xy[None, :, :]
        sq = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2
        cost[:m, :k] = sq + np.where(roles[:, None] != det_roles[None, :], role_penalty, 0.0)
    return cost


def build_cost_matrix(tracks: TrackSet, dets: Sequence[Detection], role_penalty: float = ROLE_PENALTY_DEFAULT) -> CostMatrix:
    """Entry (o, k) = ||c_o - c~_k||^2 + role_penalty * [roles differ], zero-padded square."""
    m = tracks.n_tracks
    if m == 0:
        raise ValueError("tracks must be nonempty")
    k = len(dets)
    if k:
        det_xy = np.stack([d.coords for d in dets])
        det_roles = np.array([d.role for d in dets])
    else:
        det_xy = np.zeros((0, 2))
        det_roles = np.zeros(0, np.int64)
    cost = _cost_fill(tracks.coords, tracks.roles, det_xy, det_roles, role_penalty)
    return CostMatrix(matrix=cost, n_tracks=m, n_detections=k)


def solve_assignment(cost: np.ndarray):
    """Minimum-cost perfect matching on a square nonnegative matrix.

    Returns (assignment, total) where assignment[i] is the column matched to
    row i. Among all optimal matchings the lexicographically smallest
    assignment vector is returned: the solver's dual potentials certify the
    set of edges usable by any optimal matching, and the lexicographic minimum
    is extracted from that subgraph.
    """
    c = np.ascontiguousarray(np.asarray(cost, dtype=np.float64))
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
        raise ValueError(f"cost matrix must be square and nonempty, got shape {c.shape}")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix must be finite")
    if (c < 0).any():
        raise ValueError("cost matrix must be nonnegative")
    assign = _solve_lex(c)
    total = 0.0
    for i in range(len(assign)):
        total += c[i, assign[i]]
    return assign, total


_EPS64 = float(np.finfo(np.float64).eps)


def _solve_lex(c: np.ndarray) -> np.ndarray:
    """Optimal assignment, lexicographically smallest (no input validation)."""
    assign, u, v = lap_solve(c)
    tol = 256.0 * _EPS64 * (1.0 + float(c.max()))
    admissible = (c - u[:, None] - v[None, :]) <= tol
    admissible[np.arange(len(assign)), assign] = True  # guard the found matching
    return lex_min_matching(admissible, assign)


def advance_tracks(tracks: TrackSet, dets: Sequence[Detection], role_penalty: float = ROLE_PENALTY_DEFAULT) -> TrackSet:
    """One tracking step: match, update matched tracks, carry the rest forward."""
    cm = build_cost_matrix(tracks, dets, role_penalty)
    assign = _solve_lex(cm.matrix)
    coords = tracks.coords.copy()
    staleness = tracks.staleness.copy()
    for o in range(cm.n_tracks):
        j = assign[o]
        if j < cm.n_detections:
            coords[o] = dets[j].coords
            staleness[o] = 0
        else:
            staleness[o] += 1
    return TrackSet(roles=tracks.roles.copy(), coords=coords, staleness=staleness)


def init_tracks(dets: Sequence[Detection], census: Mapping[int, int]) -> TrackSet:
    """Bootstrap tracks from the first frame's detections.

    Detections are sorted by (role, x, y) and ids assigned in that order;
    roles with too few detections are padded with stale tracks at the arena
    center, roles with too many keep the largest-area detections.
    """
    m = int(sum(census.values()))
    if m == 0:
        raise ValueError("census must be nonempty")
    roles = np.empty(m, np.int32)
    coords = np.zeros((m, 2))
    staleness = np.zeros(m, np.int64)
    idx = 0
    for role in sorted(census):
        want = int(census[role])
        cand = sorted(
            (d for d in dets if d.role == role),
            key=lambda d: (float(d.coords[0]), float(d.coords[1])),
        )
        if len(cand) > want:
            by_area = sorted(range(len(cand)), key=lambda i: (-cand[i].area, i))
            keep = sorted(by_area[:want])
            cand = [cand[i] for i in keep]
        for slot in range(want):
            roles[idx] = role
            if slot < len(cand):
                coords[idx] = cand[slot].coords
                staleness[idx] = 0
            else:
                staleness[idx] = 1  # never observed yet
            idx += 1
    return TrackSet(roles=roles, coords=coords, staleness=staleness)
