import numpy as np
import pytest

from dicgan import gscore as gs
from dicgan.errors import DataError


def gf2_rank(mat):
    m = [row.copy() for row in mat.astype(np.uint8)]
    rank, rows, cols = 0, len(m), (len(m[0]) if len(m) else 0)
    pivot_row = 0
    for c in range(cols):
        pr = None
        for r in range(pivot_row, rows):
            if m[r][c]:
                pr = r
                break
        if pr is None:
            continue
        m[pivot_row], m[pr] = m[pr], m[pivot_row]
        for r in range(rows):
            if r != pivot_row and m[r][c]:
                m[r] ^= m[pivot_row]
        pivot_row += 1
        rank += 1
        if pivot_row == rows:
            break
    return rank


def brute_force_beta1(filt: gs.Filtration, alpha: float) -> int:
    """Assemble the complex at alpha and compute beta1 = dim ker d1 - rank d2
    over GF(2) from explicit boundary matrices."""
    verts, edges, tris = [], [], []
    for s, dim, b in filt.simplices:
        if b > alpha:
            continue
        (verts if dim == 0 else edges if dim == 1 else tris).append(s)
    if not edges:
        return 0
    vmap = {v[0]: i for i, v in enumerate(verts)}
    d1 = np.zeros((len(verts), len(edges)), dtype=np.uint8)
    for j, (a, b_) in enumerate(edges):
        d1[vmap[a], j] = 1
        d1[vmap[b_], j] = 1
    emap = {e: j for j, e in enumerate(edges)}
    d2 = np.zeros((len(edges), max(len(tris), 1)), dtype=np.uint8)
    for j, (a, b_, c) in enumerate(tris):
        for face in ((a, b_), (a, c), (b_, c)):
            d2[emap[face], j] = 1
    r1 = gf2_rank(d1)
    r2 = gf2_rank(d2) if tris else 0
    return len(edges) - r1 - r2


class TestWitnessFiltration:
    def test_single_landmark(self):
        filt = gs.witness_filtration(np.zeros((1, 2)), np.zeros((5, 2)))
        assert filt.simplices == [((0,), 0, 0.0)]

    def test_equilateral_triangle_no_positive_interval(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
        filt = gs.witness_filtration(pts, pts)
        births = {s: b for s, d, b in filt.simplices}
        for e in ((0, 1), (0, 2), (1, 2)):
            assert births[e] == pytest.approx(1.0)
        assert births[(0, 1, 2)] == pytest.approx(1.0)
        intervals = gs.persistence_beta1(filt, alpha_max=3.0)
        assert intervals == []

    def test_unit_square_hand_computation(self):
        # Witness relaxation makes the diagonals cheaper than their length:
        # corner (1,0) witnesses edge {0,2} at max(1,1) - 0 = 1, so every edge
        # and triangle is born at 1 and no positive H1 interval survives.
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        filt = gs.witness_filtration(pts, pts)
        births = {s: b for s, d, b in filt.simplices}
        for e in ((0, 1), (1, 2), (2, 3), (0, 3), (0, 2), (1, 3)):
            assert births[e] == pytest.approx(1.0)
        assert gs.persistence_beta1(filt, alpha_max=3.0) == []

    def test_rectangle_hand_computation(self):
        # 2x1 rectangle: short edges born at 1, long edges at 2 (endpoint
        # witnesses), diagonals at 2 via the opposite side corners.
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]])
        filt = gs.witness_filtration(pts, pts)
        births = {s: b for s, d, b in filt.simplices}
        assert births[(0, 3)] == pytest.approx(1.0)
        assert births[(1, 2)] == pytest.approx(1.0)
        for e in ((0, 1), (2, 3), (0, 2), (1, 3)):
            assert births[e] == pytest.approx(2.0)

    def test_alpha_max_prunes(self):
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]])
        filt = gs.witness_filtration(pts, pts, alpha_max=1.5)
        dims = [d for _, d, _ in filt.simplices]
        assert dims.count(1) == 2 and dims.count(2) == 0

    def test_face_property_holds(self, rng):
        pts = rng.standard_normal((8, 3))
        wit = rng.standard_normal((60, 3))
        filt = gs.witness_filtration(pts, wit)
        filt.validate_faces()  # raises on violation


class TestPersistence:
    def test_no_edges_no_intervals(self):
        filt = gs.Filtration([((0,), 0, 0.0), ((1,), 0, 0.0)])
        assert gs.persistence_beta1(filt, 1.0) == []

    def test_face_violation_raises(self):
        filt = gs.Filtration([((0,), 0, 0.0), ((1,), 0, 0.0), ((0, 1), 1, 0.5),
                              ((0, 2), 1, 0.5)])
        with pytest.raises(DataError):
            gs.persistence_beta1(filt, 1.0)

    def test_circle_of_landmarks_dominant_interval(self):
        t = np.linspace(0, 2 * np.pi, 9)[:-1]
        landmarks = np.stack([np.cos(t), np.sin(t)], axis=1)
        tw = np.linspace(0, 2 * np.pi, 201)[:-1]
        witnesses = np.stack([np.cos(tw), np.sin(tw)], axis=1)
        alpha_max = 1.0
        filt = gs.witness_filtration(landmarks, witnesses, alpha_max=alpha_max)
        intervals = gs.persistence_beta1(filt, alpha_max)
        lengths = sorted(d - b for b, d in intervals)
        assert lengths and lengths[-1] > alpha_max / 2

    @pytest.mark.parametrize("trial", range(20))
    def test_intervals_match_brute_force_betti(self, trial):
        gen = np.random.default_rng(trial)
        m = int(gen.integers(4, 11))
        pts = gen.standard_normal((m, 2))
        wit = gen.standard_normal((40, 2))
        filt = gs.witness_filtration(pts, wit)
        amax = float(max(b for _, _, b in filt.simplices)) * 1.05 + 1e-9
        intervals = gs.persistence_beta1(filt, amax)
        alphas = np.linspace(0, amax, 50)
        curve = gs.betti1_curve(intervals, alphas)
        for a, expected in zip(alphas, curve):
            assert brute_force_beta1(filt, a) == expected


class TestRlt:
    def test_no_intervals(self):
        v = gs.rlt([], 1.0, 10)
        assert v[0] == 1.0 and v.sum() == 1.0

    def test_single_interval(self):
        v = gs.rlt([(0.2, 0.6)], 1.0, 10)
        assert v[0] == pytest.approx(0.6)
        assert v[1] == pytest.approx(0.4)

    def test_two_overlapping(self):
        v = gs.rlt([(0.1, 0.5), (0.3, 0.7)], 1.0, 10)
        assert v[0] == pytest.approx(0.4)
        assert v[1] == pytest.approx(0.4)
        assert v[2] == pytest.approx(0.2)

    def test_sums_to_one(self, rng):
        for _ in range(20):
            n = rng.integers(0, 6)
            ivs = []
            for _ in range(n):
                b = rng.uniform(0, 1)
                ivs.append((b, b + rng.uniform(0, 1)))
            v = gs.rlt(ivs, 1.0, 100)
            assert v.sum() == pytest.approx(1.0, abs=1e-9)

    def test_clip_at_alpha_max(self):
        v = gs.rlt([(0.5, np.inf)], 1.0, 10)
        assert v[0] == pytest.approx(0.5) and v[1] == pytest.approx(0.5)


def circle_points(n, seed, noise=0.01):
    gen = np.random.default_rng(seed)
    t = gen.uniform(0, 2 * np.pi, n)
    pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    return pts + noise * gen.standard_normal(pts.shape)


def disk_points(n, seed):
    gen = np.random.default_rng(seed)
    r = np.sqrt(gen.uniform(0, 1, n))
    t = gen.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)


class TestMrlt:
    def test_identical_samples(self):
        data = np.ones((80, 5))
        cfg = gs.GsConfig(n_sets=5, landmark_size=8, i_max=10, seed=0)
        with pytest.warns(UserWarning):
            v = gs.mrlt(data, cfg)
        assert v[0] == 1.0

    def test_circle_has_one_hole(self):
        data = circle_points(300, 0)
        cfg = gs.GsConfig(n_sets=10, landmark_size=32, i_max=20, gamma=0.5, seed=1)
        v = gs.mrlt(data, cfg)
        assert v[1] > 0.5

    def test_determinism(self):
        data = circle_points(100, 2)
        cfg = gs.GsConfig(n_sets=4, landmark_size=16, i_max=10, gamma=0.5, seed=3)
        assert np.array_equal(gs.mrlt(data, cfg), gs.mrlt(data, cfg))

    def test_landmark_size_guard(self):
        with pytest.raises(DataError):
            gs.mrlt(np.zeros((5, 3)), gs.GsConfig(n_sets=1, landmark_size=10))

    def test_duplicates_do_not_change_rlt_with_forced_landmarks(self):
        data = circle_points(120, 4)
        idx = np.arange(0, 120, 2)[:32]
        gamma = 0.5
        a = gs.rlt_for_landmarks(data, idx, gamma, 20)
        dup = np.concatenate([data, data[:10]])
        b = gs.rlt_for_landmarks(dup, idx, gamma, 20)
        assert np.array_equal(a, b)


class TestGeometryScore:
    def test_same_dataset_zero(self):
        data = circle_points(100, 5)
        cfg = gs.GsConfig(n_sets=3, landmark_size=16, i_max=10, gamma=0.5, seed=6)
        score, mf, mr = gs.geometry_score(data, data, cfg)
        assert score == 0.0
        assert np.array_equal(mf, mr)

    def test_delta_distributions(self):
        # MRLT_fake = delta_0 vs MRLT_real = delta_1 -> squared L2 = 2
        a = np.zeros(10)
        a[0] = 1.0
        b = np.zeros(10)
        b[1] = 1.0
        assert float(np.sum((a - b) ** 2)) == 2.0

    def test_circle_vs_disk_separation(self):
        cfg = gs.GsConfig(n_sets=8, landmark_size=32, i_max=20, gamma=0.5, seed=7)
        baselines, separations = [], []
        for s in range(5):
            c1 = circle_points(200, 10 + s)
            c2 = circle_points(200, 100 + s)
            d1 = disk_points(200, 20 + s)
            baselines.append(gs.geometry_score(c1, c2, cfg)[0])
            separations.append(gs.geometry_score(d1, c1, cfg)[0])
        assert np.mean(separations) > 10 * max(np.mean(baselines), 1e-6)

    def test_symmetry(self):
        cfg = gs.GsConfig(n_sets=3, landmark_size=16, i_max=10, gamma=0.5, seed=8)
        a = circle_points(100, 30)
        b = disk_points(100, 31)
        s1 = gs.geometry_score(a, b, cfg)[0]
        s2 = gs.geometry_score(b, a, cfg)[0]
        assert s1 == pytest.approx(s2)
