"""Geometry score: witness-complex filtrations over random landmark sets,
dimension-1 persistence via boundary-matrix reduction over GF(2), relative
living times, and the squared-L2 distance between mean RLT distributions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import rng as rngmod
from .errors import DataError, ShapeError


@dataclass
class GsConfig:
    n_sets: int = 1000
    landmark_size: int = 64
    i_max: int = 100
    gamma: Optional[float] = None  # None: (1/128)/(N/5000) with N = dataset size
    seed: int = 0

    def __post_init__(self):
        if self.n_sets < 1 or self.landmark_size < 1 or self.i_max < 1:
            raise DataError("n_sets, landmark_size, and i_max must be >= 1")

    def resolve_gamma(self, n_samples: int) -> float:
        if self.gamma is not None:
            return self.gamma
        return (1.0 / 128.0) / (n_samples / 5000.0)


@dataclass
class Filtration:
    """Simplices up to dimension 2 with birth values, sorted by (birth, dim)."""

    simplices: list  # (verts tuple, dim, birth), sorted

    def validate_faces(self) -> None:
        birth = {s: b for s, _, b in self.simplices}
        for verts, dim, b in self.simplices:
            if dim == 0:
                continue
            for i in range(len(verts)):
                face = verts[:i] + verts[i + 1:]
                if face not in birth:
                    raise DataError(f"face {face} of {verts} missing from filtration")
                if birth[face] > b + 1e-12:
                    raise DataError(f"face {face} born after coface {verts}")


def witness_filtration(landmarks: np.ndarray, witnesses: np.ndarray,
                       alpha_max: Optional[float] = None) -> Filtration:
    """Relaxed weak-witness filtration on the landmark points.

    A simplex s (dim <= 2) is born at min over witnesses w of
    [max_{l in s} d(w, l) - nu(w)] where nu(w) is w's distance to its nearest
    landmark; vertices are born at 0.  Face-property violations are removed by
    raising births to the maximum over faces.  Simplices born at or after
    alpha_max are dropped (they never exist inside the observation window).
    """
    landmarks = np.asarray(landmarks, dtype=np.float64)
    witnesses = np.asarray(witnesses, dtype=np.float64)
    if landmarks.ndim != 2 or witnesses.ndim != 2:
        raise ShapeError("landmarks/witnesses must be 2-D point arrays")
    m = landmarks.shape[0]
    simplices = [((i,), 0, 0.0) for i in range(m)]
    if m >= 2:
        d = cdist(witnesses, landmarks)          # W x m
        nu = d.min(axis=1)
        pairmax = np.maximum(d[:, :, None], d[:, None, :]) - nu[:, None, None]
        edge_birth = pairmax.min(axis=0)         # m x m, symmetric
        keep = np.ones((m, m), dtype=bool)
        if alpha_max is not None:
            keep = edge_birth < alpha_max
        iu, ju = np.triu_indices(m, 1)
        emask = keep[iu, ju]
        simplices.extend(
            ((int(i), int(j)), 1, float(b))
            for i, j, b in zip(iu[emask], ju[emask], edge_birth[iu, ju][emask]))
        # triangles: only where all three edges survive
        adj = keep & ~np.eye(m, dtype=bool) if alpha_max is not None \
            else np.ones((m, m), dtype=bool)
        tris = []
        for i in range(m):
            for j in range(i + 1, m):
                if not adj[i, j]:
                    continue
                ks = np.nonzero(adj[i] & adj[j])[0]
                tris.extend((i, j, int(k)) for k in ks if k > j)
        if tris:
            tri_arr = np.asarray(tris)
            births = np.empty(len(tris))
            chunk = 4096
            for lo in range(0, len(tris), chunk):
                sub = tri_arr[lo:lo + chunk]
                tmax = d[:, sub].max(axis=2) - nu[:, None]   # W x chunk
                births[lo:lo + chunk] = tmax.min(axis=0)
            # monotonization: a coface can never precede its faces
            births = np.maximum.reduce([
                births,
                edge_birth[tri_arr[:, 0], tri_arr[:, 1]],
                edge_birth[tri_arr[:, 0], tri_arr[:, 2]],
                edge_birth[tri_arr[:, 1], tri_arr[:, 2]]])
            if alpha_max is not None:
                tmask = births < alpha_max
                tris = [t for t, ok in zip(tris, tmask) if ok]
                births = births[tmask]
            simplices.extend((t, 2, float(b)) for t, b in zip(tris, births))
    simplices.sort(key=lambda t: (t[2], t[1], t[0]))
    return Filtration(simplices)


def persistence_beta1(filt: Filtration, alpha_max: float) -> list:
    """Dimension-1 birth-death intervals via standard column reduction over
    GF(2); classes alive at alpha_max are clipped there."""
    filt.validate_faces()

    # The boundary matrix is block diagonal by dimension (a dim-1 column's
    # pivot is a vertex, a dim-2 column's entries are edges), so the two blocks
    # reduce independently.  Edges: union-find decides which edge columns
    # vanish (those close a loop).  Triangles: GF(2) reduction over edge-index
    # bitsets; each pivot edge is the loop killed by that triangle.
    edge_index: dict = {}
    edge_birth = []
    positive = []
    parent: dict = {}

    def find(v):
        root = v
        while parent.setdefault(root, root) != root:
            root = parent[root]
        while parent[v] != root:
            parent[v], v = root, parent[v]
        return root

    tri_cols = []
    for verts, dim, birth in filt.simplices:
        if dim == 1:
            edge_index[verts] = len(edge_birth)
            edge_birth.append(birth)
            ra, rb = find(verts[0]), find(verts[1])
            positive.append(ra == rb)
            parent[ra] = rb
        elif dim == 2:
            a, b, c = verts
            col = ((1 << edge_index[(a, b)]) | (1 << edge_index[(a, c)])
                   | (1 << edge_index[(b, c)]))
            tri_cols.append((col, birth))

    pivot_col: dict = {}
    death_of: dict = {}
    for col, birth in tri_cols:
        while col:
            lo = col.bit_length() - 1
            other = pivot_col.get(lo)
            if other is None:
                pivot_col[lo] = col
                death_of[lo] = birth
                break
            col ^= other

    intervals = []
    for i, birth in enumerate(edge_birth):
        if not positive[i]:
            continue
        death = min(death_of.get(i, alpha_max), alpha_max)
        birth = min(birth, alpha_max)
        if death > birth:
            intervals.append((birth, death))
    return intervals


def betti1_curve(intervals, alphas: np.ndarray) -> np.ndarray:
    """Number of intervals containing each alpha (half-open [birth, death))."""
    out = np.zeros(len(alphas), dtype=int)
    for b, d in intervals:
        out += (alphas >= b) & (alphas < d)
    return out


def rlt(intervals, alpha_max: float, i_max: int) -> np.ndarray:
    """Fraction of [0, alpha_max] during which exactly i one-dim holes exist."""
    if alpha_max <= 0:
        raise DataError("alpha_max must be positive")
    events = []
    for b, d in intervals:
        b, d = min(b, alpha_max), min(d, alpha_max)
        if d > b:
            events.append((b, 1))
            events.append((d, -1))
    out = np.zeros(i_max)
    if not events:
        out[0] = 1.0
        return out
    events.sort()
    prev, count = 0.0, 0
    for t, delta in events:
        if t > prev:
            out[min(count, i_max - 1)] += (t - prev) / alpha_max
        count += delta
        prev = t
    if prev < alpha_max:
        out[min(count, i_max - 1)] += (alpha_max - prev) / alpha_max
    return out


def rlt_for_landmarks(data: np.ndarray, landmark_idx: np.ndarray,
                      gamma: float, i_max: int) -> Optional[np.ndarray]:
    """RLT vector for one landmark set; None when the set is degenerate."""
    landmarks = data[landmark_idx]
    dmax = float(pdist(landmarks).max()) if len(landmarks) > 1 else 0.0
    if dmax <= 0:
        return None
    alpha_max = gamma * dmax
    filt = witness_filtration(landmarks, data, alpha_max=alpha_max)
    intervals = persistence_beta1(filt, alpha_max)
    return rlt(intervals, alpha_max, i_max)


def mrlt(dataset: np.ndarray, cfg: GsConfig, seed_tag: str = "mrlt") -> np.ndarray:
    """Mean RLT over cfg.n_sets random landmark sets drawn from the dataset."""
    data = np.asarray(dataset, dtype=np.float64)
    data = data.reshape(data.shape[0], -1)
    n = data.shape[0]
    if n < cfg.landmark_size:
        raise DataError(f"dataset size {n} < landmark size {cfg.landmark_size}")
    gamma = cfg.resolve_gamma(n)
    acc = np.zeros(cfg.i_max)
    used = 0
    for j in range(cfg.n_sets):
        gen = rngmod.stream(cfg.seed, seed_tag, j)
        idx = gen.choice(n, size=cfg.landmark_size, replace=False)
        vec = rlt_for_landmarks(data, idx, gamma, cfg.i_max)
        if vec is None:
            warnings.warn(f"degenerate landmark set {j} skipped (zero diameter)")
            continue
        acc += vec
        used += 1
    if used == 0:
        out = np.zeros(cfg.i_max)
        out[0] = 1.0  # identical samples: no geometry at all
        return out
    return acc / used


def geometry_score(fake: np.ndarray, real: np.ndarray, cfg: GsConfig):
    """Squared L2 distance between the MRLT distributions (raw scale; tables
    typically report it x1e3).  Returns (gs, mrlt_fake, mrlt_real)."""
    m_fake = mrlt(fake, cfg)
    m_real = mrlt(real, cfg)
    gs = float(np.sum((m_fake - m_real) ** 2))
    return gs, m_fake, m_real
