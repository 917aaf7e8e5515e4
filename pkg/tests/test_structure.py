import datetime

import numpy as np
import pytest
import scipy.sparse as sp

import epibias
from epibias import NumericalError, ValidationError
from epibias.structure import scale_structure


def count_zero_eigs(Q, tol=1e-9):
    Qd = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
    vals = np.linalg.eigvalsh(Qd)
    return int((np.abs(vals) < tol).sum())


def make_stack(provinces, matrices, start=datetime.date(2020, 1, 18)):
    days = tuple(start + datetime.timedelta(days=k) for k in range(len(matrices)))
    return epibias.MobilityStack(provinces, days, np.stack(matrices))


# Hand-computed 5-province fixture, dyadic values so every pipeline step is
# exact in floating point. Averaged flows (before the diagonal is zeroed):
RAW_AVG = np.array(
    [
        [0.25, 0.25, 0.125, 0.125, 0.0],
        [0.25, 0.50, 0.25, 0.0, 0.0],
        [0.125, 0.125, 0.25, 0.25, 0.5],
        [0.125, 0.0, 0.375, 0.0, 0.0],
        [0.0, 0.0, 0.5, 0.0, 0.125],
    ]
)
# zero diag -> row sums (.5, .5, 1, .5, .5) -> normalize -> symmetrize:
#   m12=.5  m13=.1875  m14=.25  m23=.3125  m34=.5  m35=.75
# positive weights sorted: [.1875, .25, .3125, .5, .5, .75]; 80th pct = .5
# keep >= .5 (both ties kept): edges (1,2), (3,4), (3,5)
EXPECTED_M = np.zeros((5, 5))
EXPECTED_M[0, 1] = EXPECTED_M[1, 0] = 0.5
EXPECTED_M[2, 3] = EXPECTED_M[3, 2] = 0.5
EXPECTED_M[2, 4] = EXPECTED_M[4, 2] = 0.75


@pytest.fixture
def five_province_stack():
    provinces = epibias.ProvinceIndex.from_ids([f"P{k}" for k in range(1, 6)])
    # two days averaging exactly to RAW_AVG
    return make_stack(provinces, [RAW_AVG * 0.5, RAW_AVG * 1.5])


class TestMobilityPipeline:
    def test_hand_computed_fixture_exact(self, five_province_stack):
        s = epibias.build_mobility_weights(five_province_stack, quantile_keep=0.2, scale=False)
        assert np.array_equal(s.M.toarray(), EXPECTED_M)
        assert s.n_components == 2
        assert s.quantile_threshold == 0.5
        assert np.array_equal(s.degrees, EXPECTED_M.sum(axis=1))
        assert np.array_equal(s.Q_u.toarray(), np.diag(EXPECTED_M.sum(axis=1)) - EXPECTED_M)

    def test_two_node_pipeline(self):
        provinces = epibias.ProvinceIndex.from_ids(["P1", "P2"])
        avg = np.array([[0.5, 0.5], [0.2, 0.8]])
        stack = make_stack(provinces, [avg])
        s = epibias.build_mobility_weights(stack, quantile_keep=0.2, scale=False)
        assert np.array_equal(s.M.toarray(), np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.array_equal(s.Q_u.toarray(), np.array([[1.0, -1.0], [-1.0, 1.0]]))

    def test_top_quintile_exactly_two_of_ten(self, rng):
        # 10 distinct positive symmetric weights -> exactly the top 2 survive
        n = 5
        vals = rng.permutation(np.arange(1.0, 11.0))
        M = np.zeros((n, n))
        M[np.triu_indices(n, 1)] = vals
        M = M + M.T
        row_sums = M.sum(axis=1)
        flows = M / row_sums[:, None]
        provinces = epibias.ProvinceIndex.from_ids([f"P{k}" for k in range(n)])
        stack = make_stack(provinces, [flows])
        s = epibias.build_mobility_weights(stack, quantile_keep=0.2, scale=False)
        sym = (flows + flows.T) / 2.0
        top2 = np.sort(sym[np.triu_indices(n, 1)])[-2:]
        kept = s.M.toarray()[np.triu_indices(n, 1)]
        assert (kept > 0).sum() == 2
        assert set(kept[kept > 0]) == set(top2)

    def test_disconnection_reported_and_rank_matches(self, five_province_stack):
        s = epibias.build_mobility_weights(five_province_stack, quantile_keep=0.2)
        assert s.n_components == 2
        assert count_zero_eigs(s.Q_u) == 2
        assert s.rank == 5 - 2

    def test_all_zero_graph_rejected(self):
        provinces = epibias.ProvinceIndex.from_ids(["P1", "P2"])
        stack = make_stack(provinces, [np.diag([1.0, 1.0])])  # only self-flows
        with pytest.raises(ValidationError, match="empty mobility graph"):
            epibias.build_mobility_weights(stack)

    def test_row_normalization_rows_sum_to_one(self, five_province_stack):
        avg = five_province_stack.flows.mean(axis=0)
        np.fill_diagonal(avg, 0.0)
        row_sums = avg.sum(axis=1)
        normed = avg / row_sums[:, None]
        assert np.allclose(normed.sum(axis=1), 1.0)

    def test_quantile_keep_validated(self, five_province_stack):
        for bad in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(ValidationError):
                epibias.build_mobility_weights(five_province_stack, quantile_keep=bad)


class TestRW1:
    def test_n3_matrix(self):
        t = epibias.rw1_structure(3, scale=False)
        assert np.array_equal(
            t.Q_v.toarray(), np.array([[1.0, -1, 0], [-1, 2, -1], [0, -1, 1]])
        )

    def test_n2_matrix(self):
        t = epibias.rw1_structure(2, scale=False)
        assert np.array_equal(t.Q_v.toarray(), np.array([[1.0, -1], [-1, 1]]))

    @pytest.mark.parametrize("n", [2, 3, 7, 20])
    def test_row_sums_zero(self, n):
        t = epibias.rw1_structure(n)
        assert np.allclose(t.Q_v.toarray().sum(axis=1), 0.0, atol=1e-12)
        assert t.rank == n - 1

    def test_too_short_rejected(self):
        with pytest.raises(ValidationError):
            epibias.rw1_structure(1)


class TestScaling:
    def test_idempotent(self):
        t = epibias.rw1_structure(6)
        _, factor = scale_structure(t.Q_v, nullspace_dim=1)
        assert factor == pytest.approx(1.0, abs=1e-10)

    def test_rw1_factor_matches_dense_pseudo_inverse(self):
        # oracle: geometric mean of the diagonal of the Moore-Penrose inverse
        raw = epibias.rw1_structure(3, scale=False).Q_v.toarray()
        _, factor = scale_structure(raw, nullspace_dim=1)
        diag = np.diag(np.linalg.pinv(raw))
        assert factor == pytest.approx(float(np.exp(np.mean(np.log(diag)))), rel=1e-12)

    def test_scale_invariance_of_output(self):
        raw = epibias.rw1_structure(5, scale=False).Q_v.toarray()
        scaled1, _ = scale_structure(raw, 1)
        scaled2, _ = scale_structure(3.7 * raw, 1)
        assert np.allclose(scaled1, scaled2, rtol=1e-12)

    def test_extra_singularity_rejected(self):
        Q = np.zeros((4, 4))
        Q[:2, :2] = [[1.0, -1.0], [-1.0, 1.0]]  # two isolated nodes: nullity 3
        with pytest.raises(NumericalError, match="beyond its nullspace"):
            scale_structure(Q, nullspace_dim=1)

    def test_marginal_variances_after_scaling(self):
        # geometric mean of the constrained marginal variances should be 1
        s = epibias.spatial_structure_from_weights(epibias.grid_weights(3, 3))
        diag = np.diag(np.linalg.pinv(s.Q_u.toarray()))
        assert np.exp(np.mean(np.log(diag))) == pytest.approx(1.0, rel=1e-10)


class TestInteraction:
    def test_2x2_kronecker_rank(self):
        spatial = epibias.spatial_structure_from_weights(
            np.array([[0.0, 1.0], [1.0, 0.0]]), scale=False
        )
        # bypass the simulator minimums: direct structure build
        temporal = epibias.rw1_structure(2, scale=False)
        inter = epibias.interaction_structure(spatial, temporal)
        base = np.array([[1.0, -1.0], [-1.0, 1.0]])
        assert np.array_equal(inter.Q_w.toarray(), np.kron(base, base))
        assert inter.rank == 1
        assert count_zero_eigs(inter.Q_w) == 3

    def test_null_vector(self, ring_structures):
        inter = ring_structures.interaction
        ones = np.ones(inter.Q_w.shape[0])
        assert np.abs(inter.Q_w @ ones).max() < 1e-9

    def test_nnz_multiplies(self, ring_structures):
        s, t = ring_structures.spatial, ring_structures.temporal
        assert ring_structures.interaction.Q_w.nnz == s.Q_u.nnz * t.Q_v.nnz

    def test_constraint_rows_connected_case(self, ring_structures):
        inter = ring_structures.interaction
        n_s, n_t = 8, 5
        A = inter.constraints.toarray()
        assert A.shape[0] == n_s + n_t - 1
        assert np.linalg.matrix_rank(A) == n_s + n_t - 1
        # constraints annihilate exactly the nullspace of Q_w
        assert inter.rank == (n_s - 1) * (n_t - 1)
        nullity = n_s * n_t - inter.rank
        assert A.shape[0] == nullity

    def test_disconnected_constraint_rows(self, five_province_stack):
        s = epibias.build_mobility_weights(five_province_stack)
        t = epibias.rw1_structure(4)
        inter = epibias.interaction_structure(s, t)
        # c * n_t + n_s - c rows with c = 2 components
        assert inter.constraints.shape[0] == 2 * 4 + 5 - 2
        nullity = 5 * 4 - inter.rank
        assert inter.constraints.shape[0] == nullity

    def test_kronecker_ordering_is_province_major(self, ring_structures):
        s, t = ring_structures.spatial, ring_structures.temporal
        u = np.arange(1.0, 9.0)
        v = np.arange(1.0, 6.0)
        kron_vec = np.kron(u, v)
        for i in range(8):
            for j in range(5):
                assert kron_vec[i * 5 + j] == u[i] * v[j]

    def test_log_gendet_matches_dense(self, ring_structures):
        inter = ring_structures.interaction
        vals = np.linalg.eigvalsh(inter.Q_w.toarray())
        pos = vals[vals > 1e-9]
        assert inter.log_gendet == pytest.approx(float(np.log(pos).sum()), rel=1e-9)


class TestPSDInvariants:
    @pytest.mark.parametrize(
        "builder",
        [
            lambda: epibias.spatial_structure_from_weights(epibias.ring_weights(8)).Q_u,
            lambda: epibias.spatial_structure_from_weights(epibias.grid_weights(4, 4)).Q_u,
            lambda: epibias.rw1_structure(11).Q_v,
        ],
    )
    def test_symmetric_psd(self, builder):
        Q = builder().toarray()
        assert np.abs(Q - Q.T).max() < 1e-12
        assert np.linalg.eigvalsh(Q).min() > -1e-9
