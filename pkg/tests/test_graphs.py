"""Distance/correlation adjacency builders and transition matrices."""

import numpy as np
import pytest

from eegssl.graphs import (
    ElectrodeLayout,
    Graph,
    build_correlation_graph,
    build_correlation_graph_from_windows,
    build_distance_graph,
    correlation_weights,
    load_layout_csv,
    standard_1020_layout,
    transitions,
    transitions_of,
)
from eegssl.signals import SignalWindow


def _random_unit_layout(rng, n):
    pts = rng.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return ElectrodeLayout(names=[f"e{i}" for i in range(n)], positions=pts)


def _kernel_oracle(positions, kappa, threshold_mode):
    """Scalar re-derivation of the Gaussian-kernel adjacency."""
    n = len(positions)
    dists = []
    for i in range(n):
        for j in range(i + 1, n):
            dists.append(np.linalg.norm(positions[i] - positions[j]))
    sigma = np.std(dists)
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            d = np.linalg.norm(positions[i] - positions[j])
            weight = np.exp(-(d**2) / sigma**2)
            if threshold_mode == "distance":
                keep = d <= kappa
            else:
                keep = weight >= kappa
            w[i, j] = weight if keep else 0.0
    return w


class TestDistanceGraph:
    def test_matches_scalar_oracle_on_random_layouts(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            n = int(rng.integers(3, 9))
            layout = _random_unit_layout(rng, n)
            for mode, kappa in (("distance", 1.2), ("weight", 0.4)):
                g = build_distance_graph(layout, kappa=kappa, threshold_mode=mode)
                oracle = _kernel_oracle(layout.positions, kappa, mode)
                np.testing.assert_allclose(g.w, oracle, rtol=0.0, atol=1e-12)

    def test_coincident_pair_gets_weight_one(self):
        pts = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
        layout = ElectrodeLayout(names=list("abcd"), positions=pts)
        g = build_distance_graph(layout, kappa=0.5, threshold_mode="distance")
        assert g.w[0, 1] == 1.0
        assert g.w[1, 0] == 1.0

    def test_pair_beyond_threshold_is_zero(self):
        rng = np.random.default_rng(4)
        layout = _random_unit_layout(rng, 6)
        g = build_distance_graph(layout, kappa=1.0, threshold_mode="distance")
        diff = layout.positions[:, None, :] - layout.positions[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        assert (g.w[dist > 1.0] == 0.0).all()
        assert (g.w[(dist <= 1.0)] > 0.0).all()

    def test_symmetry_is_exact(self):
        rng = np.random.default_rng(8)
        for seed in range(10):
            layout = _random_unit_layout(np.random.default_rng(seed), 7)
            g = build_distance_graph(layout, kappa=1.1)
            assert np.array_equal(g.w, g.w.T)

    def test_zero_distance_spread_is_an_error(self):
        # Equidistant points (and a fortiori coincident ones) leave the
        # kernel width undefined.
        pts = np.eye(3)
        layout = ElectrodeLayout(names=list("abc"), positions=pts)
        with pytest.raises(ValueError, match="spread"):
            build_distance_graph(layout, kappa=2.0)

    def test_builtin_layout_loads(self):
        layout = standard_1020_layout()
        assert len(layout.names) == 19
        assert layout.index_of("F3") == 2
        g = build_distance_graph(layout, kappa=0.9)
        assert g.num_nodes == 19
        assert np.array_equal(g.w, g.w.T)
        assert (g.w != 0).sum() > 19  # connects beyond self-loops


class TestCorrelationGraph:
    def _window(self, mat):
        return SignalWindow(np.asarray(mat, dtype=float), 0, ("s", 0))

    def test_copied_channel_has_raw_weight_one(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=100)
        w = self._window([a, a.copy(), rng.normal(size=100)])
        raw = correlation_weights(w)
        assert raw[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_sin_cos_have_zero_weight(self):
        t = np.arange(200)
        s = np.sin(2 * np.pi * 4 * t / 200)
        c = np.cos(2 * np.pi * 4 * t / 200)
        raw = correlation_weights(self._window([s, c, t.astype(float)]))
        assert raw[0, 1] == pytest.approx(0.0, abs=1e-10)

    def test_toy_window_matches_bruteforce_topk(self):
        rng = np.random.default_rng(23)
        mat = rng.normal(size=(4, 64))
        g = build_correlation_graph(self._window(mat), k_neighbors=2)

        # Brute-force oracle: pairwise |pearson|, keep 2 best per row.
        centered = mat - mat.mean(axis=1, keepdims=True)
        expected = np.zeros((4, 4))
        raw = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                num = float(centered[i] @ centered[j])
                den = np.linalg.norm(centered[i]) * np.linalg.norm(centered[j])
                raw[i, j] = abs(num) / den
        for i in range(4):
            others = [j for j in range(4) if j != i]
            best = sorted(others, key=lambda j: (-raw[i, j], j))[:2]
            for j in best:
                expected[i, j] = raw[i, j]
        np.testing.assert_allclose(g.w, expected, atol=1e-12)

    def test_row_sparsity_and_zero_diagonal(self):
        rng = np.random.default_rng(5)
        for seed in range(20):
            mat = np.random.default_rng(seed).normal(size=(8, 50))
            g = build_correlation_graph(self._window(mat), k_neighbors=3)
            assert (np.count_nonzero(g.w, axis=1) <= 3).all()
            assert (np.diag(g.w) == 0).all()

    def test_affine_rescaling_invariance(self):
        rng = np.random.default_rng(12)
        mat = rng.normal(size=(6, 80))
        scales = rng.uniform(0.5, 4.0, size=(6, 1))
        offsets = rng.normal(size=(6, 1)) * 10
        a = build_correlation_graph(self._window(mat), 3)
        b = build_correlation_graph(self._window(scales * mat + offsets), 3)
        np.testing.assert_allclose(a.w, b.w, atol=1e-10)

    def test_constant_channel_rejected(self):
        mat = np.ones((3, 40))
        mat[0] = np.arange(40)
        mat[2] = np.sin(np.arange(40))
        with pytest.raises(ValueError, match="channel 1"):
            build_correlation_graph(self._window(mat), 2)

    def test_corpus_level_graph_averages_windows(self):
        rng = np.random.default_rng(9)
        wins = [self._window(rng.normal(size=(5, 60))) for _ in range(4)]
        g = build_correlation_graph_from_windows(wins, k_neighbors=2)
        mean_raw = sum(correlation_weights(w) for w in wins) / 4
        for i in range(5):
            nz = np.nonzero(g.w[i])[0]
            assert len(nz) <= 2
            np.testing.assert_allclose(g.w[i, nz], mean_raw[i, nz])

    def test_tie_breaks_prefer_lower_index(self):
        t = np.linspace(0, 1, 50)
        base = np.sin(2 * np.pi * 5 * t)
        noise = np.random.default_rng(1).normal(size=50)
        # channels 1 and 2 are identical copies of 0: tied weight 1.0
        mat = np.stack([base, base, base, noise])
        g = build_correlation_graph(SignalWindow(mat, 0, ("s", 0)), k_neighbors=1)
        assert g.w[0, 1] > 0 and g.w[0, 2] == 0


class TestTransitions:
    def test_symmetric_adjacency_gives_equal_transitions(self):
        rng = np.random.default_rng(2)
        w = rng.uniform(size=(6, 6))
        w = w + w.T
        g = Graph(w=w, mode="distance")
        out_t, in_t = transitions(g)
        np.testing.assert_allclose(out_t, in_t, atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        w = rng.uniform(size=(7, 7))
        out_t, in_t = transitions_of(w)
        np.testing.assert_allclose(out_t.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(in_t.sum(axis=1), 1.0, atol=1e-12)

    def test_matches_dense_diag_inverse_oracle(self):
        rng = np.random.default_rng(11)
        w = rng.uniform(size=(5, 5)) * (rng.uniform(size=(5, 5)) > 0.3)
        w[2] = 0.0  # isolated-out node
        out_t, in_t = transitions_of(w)
        row = w.sum(axis=1)
        col = w.sum(axis=0)
        d_out = np.diag([1.0 / r if r > 0 else 0.0 for r in row])
        d_in = np.diag([1.0 / c if c > 0 else 0.0 for c in col])
        np.testing.assert_allclose(out_t, d_out @ w, atol=1e-14)
        np.testing.assert_allclose(in_t, d_in @ w.T, atol=1e-14)
        assert np.array_equal(out_t[2], np.zeros(5))


def test_layout_csv_roundtrip(tmp_path):
    layout = standard_1020_layout()
    p = tmp_path / "layout.csv"
    with p.open("w") as f:
        f.write("name,x,y,z\n")
        for name, pos in zip(layout.names, layout.positions):
            f.write(f"{name},{float(pos[0])!r},{float(pos[1])!r},{float(pos[2])!r}\n")
    again = load_layout_csv(p)
    assert again.names == layout.names
    np.testing.assert_allclose(again.positions, layout.positions)


def test_layout_requires_unit_norm():
    with pytest.raises(ValueError, match="unit sphere"):
        ElectrodeLayout(names=["a", "b"], positions=np.array([[1.0, 0, 0], [2.0, 0, 0]]))
