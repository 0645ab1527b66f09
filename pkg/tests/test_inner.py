import numpy as np
import pytest

from bilevelgossip import TopologySpec, build_mixing_matrix, make_quadratic_problem
from bilevelgossip.compression import Compressor, compress_rows, rescale_biased
from bilevelgossip.errors import ConfigError, DivergenceError, NumericError
from bilevelgossip.inner import InnerState, inner_init, inner_run, inner_step, refresh_tracker
from bilevelgossip.metrics import PayloadLedger
from bilevelgossip.rng import substream


class FrozenLower:
    """Lower objective of the quadratic family at frozen upper iterates,
    wired through public oracles only."""

    def __init__(self, problem, x_rows):
        self.problem = problem
        self.x_rows = x_rows

    def grad_rows(self, d_rows):
        return self.problem.grad_y_lower_rows(self.x_rows, d_rows)

    def target(self):
        return self.problem.lower_solution(self.x_rows)


@pytest.fixture(scope="module")
def setting():
    prob = make_quadratic_problem(m=10, dim_x=8, dim_y=6, seed=0)
    w = build_mixing_matrix(TopologySpec(kind="ring", m=10)).matrix
    x = np.random.default_rng(0).normal(size=(10, 8)) * 0.5
    return prob, w, FrozenLower(prob, x)


def rngs_for(compressor, m, tag=0):
    if compressor.kind == "rand_k" or (
        compressor.kind == "rescaled" and compressor.inner.kind == "rand_k"
    ):
        return [substream(99, "t", tag, i) for i in range(m)]
    return None


COMPRESSORS = {
    "identity": Compressor.identity(),
    "top_k": Compressor.top_k(0.3),
    "rand_k": Compressor.rand_k(0.3),
    "rescaled_top_k": rescale_biased(Compressor.top_k(0.3)),
}


class TestExactRecursions:
    @pytest.mark.parametrize("variant", ["reference", "naive", "uncompressed"])
    @pytest.mark.parametrize("comp_name", sorted(COMPRESSORS))
    def test_mean_update_and_tracking(self, setting, variant, comp_name):
        """Whatever the compressor drops, the network means follow the
        plain recursions: mean(d) -= eta mean(s), mean(s) = mean(grad)."""
        prob, w, field = setting
        comp = COMPRESSORS[comp_name]
        d0 = np.random.default_rng(1).normal(size=(10, prob.dim_y))
        st = inner_init(field, d0, w, comp, variant)
        eta, gamma = 0.1, 0.4
        for k in range(8):
            dbar, sbar = st.d.mean(axis=0), st.s.mean(axis=0)
            inner_step(st, field, w, gamma, eta, comp, rngs_for(comp, 10, k))
            assert np.allclose(st.d.mean(axis=0), dbar - eta * sbar, atol=1e-9)
            grads = field.grad_rows(st.d)
            assert np.allclose(st.s.mean(axis=0), grads.mean(axis=0), atol=1e-9)

    def test_aggregate_equals_mixed_references(self, setting):
        # agg is maintained incrementally; it must always equal W @ ref
        # recomputed from scratch
        prob, w, field = setting
        comp = Compressor.top_k(0.3)
        st = inner_init(field, np.zeros((10, prob.dim_y)), w, comp, "reference")
        for k in range(12):
            inner_step(st, field, w, 0.3, 0.1, comp)
            assert np.allclose(st.agg_d, w @ st.ref_d, atol=1e-9)
            assert np.allclose(st.agg_s, w @ st.ref_s, atol=1e-9)


class TestInit:
    def test_reference_seeding(self, setting):
        prob, w, field = setting
        d0 = np.random.default_rng(2).normal(size=(10, prob.dim_y))
        ledger = PayloadLedger()
        st = inner_init(field, d0, w, Compressor.top_k(0.3), "reference", ledger, "inner_y")
        assert np.array_equal(st.ref_d, st.d)
        assert np.array_equal(st.ref_s, st.s)
        assert np.allclose(st.agg_d, w @ st.d, atol=1e-14)
        # one dense d and one dense s message per node
        assert ledger.total("inner_y") == 2 * 10 * prob.dim_y
        assert ledger.message_count("inner_y") == 20

    def test_trackers_start_at_gradients(self, setting):
        prob, w, field = setting
        d0 = np.random.default_rng(3).normal(size=(10, prob.dim_y))
        st = inner_init(field, d0, w, Compressor.identity(), "uncompressed")
        assert np.array_equal(st.s, field.grad_rows(d0))

    def test_naive_starts_with_zero_memory(self, setting):
        prob, w, field = setting
        ledger = PayloadLedger()
        st = inner_init(
            field, np.zeros((10, prob.dim_y)), w, Compressor.top_k(0.3), "naive", ledger
        )
        assert np.all(st.err_d == 0.0) and np.all(st.err_s == 0.0)
        assert ledger.grand_total() == 0  # no init exchange for this variant

    def test_identity_compressor_collapses_variants(self, setting):
        prob, w, field = setting
        st = inner_init(field, np.zeros((10, prob.dim_y)), w, Compressor.identity(), "reference")
        assert st.variant == "uncompressed"
        assert st.ref_d is None

    def test_shape_errors(self, setting):
        prob, w, field = setting
        with pytest.raises(ConfigError, match="m, dim"):
            inner_init(field, np.zeros(6), w, Compressor.identity())
        with pytest.raises(ConfigError, match="10-node"):
            inner_init(field, np.zeros((4, 6)), w, Compressor.identity())

    def test_unknown_variant(self, setting):
        prob, w, field = setting
        with pytest.raises(ConfigError, match="unknown inner variant"):
            inner_init(field, np.zeros((10, 6)), w, Compressor.identity(), "choco")


class TestNaiveVariant:
    def test_error_feedback_replay(self, setting):
        """One step equals plain gossip on d plus the gossip difference
        of the error mass transmitted this step."""
        prob, w, field = setting
        comp = Compressor.top_k(0.3)
        st = inner_init(field, np.random.default_rng(4).normal(size=(10, prob.dim_y)), w, comp, "naive")
        for _ in range(3):  # build up nonzero memories first
            inner_step(st, field, w, 0.4, 0.1, comp)
        d, s, err_before = st.d.copy(), st.s.copy(), st.err_d.copy()
        gamma, eta = 0.4, 0.1
        inner_step(st, field, w, gamma, eta, comp)
        sent = err_before - st.err_d  # memory drained into the message
        expected = (1 - gamma) * d + gamma * (w @ d) + gamma * (w @ sent - sent) - eta * s
        assert np.allclose(st.d, expected, atol=1e-12)

    def test_memory_holds_compression_leftover(self, setting):
        prob, w, field = setting
        comp = Compressor.top_k(0.3)
        st = inner_init(field, np.random.default_rng(5).normal(size=(10, prob.dim_y)), w, comp, "naive")
        d, err = st.d.copy(), st.err_d.copy()
        inner_step(st, field, w, 0.4, 0.1, comp)
        q, _ = compress_rows(comp, d + err)
        assert np.allclose(st.err_d, (d + err) - q, atol=1e-15)


class TestIdentityCollapse:
    def test_all_variants_identical_under_identity(self, setting):
        prob, w, field = setting
        ident = Compressor.identity()
        d0 = np.random.default_rng(6).normal(size=(10, prob.dim_y))
        finals = []
        for variant in ("reference", "naive", "uncompressed"):
            st = inner_init(field, d0.copy(), w, ident, variant)
            inner_run(field, st, w, 0.5, 0.1, 10, ident)
            finals.append((st.d.copy(), st.s.copy()))
        for d, s in finals[1:]:
            assert np.array_equal(d, finals[0][0])
            assert np.array_equal(s, finals[0][1])


class TestRun:
    def test_report_lengths_and_payload(self, setting):
        prob, w, field = setting
        comp = Compressor.top_k(0.3)
        ledger = PayloadLedger()
        st = inner_init(field, np.zeros((10, prob.dim_y)), w, comp, "reference", ledger, "inner_y")
        init_words = ledger.total("inner_y")
        rep = inner_run(field, st, w, 0.3, 0.1, 7, comp, ledger=ledger, channel="inner_y")
        assert len(rep.gap) == 8  # entry 0 plus one per step
        assert rep.payload_words[0] == 0
        per_step = 2 * 10 * comp.words_per_message(prob.dim_y)
        assert rep.payload_words[-1] == 7 * per_step
        assert ledger.total("inner_y") == init_words + 7 * per_step
        ledger.audit()

    def test_gap_starts_at_distance_to_target(self, setting):
        prob, w, field = setting
        st = inner_init(field, np.zeros((10, prob.dim_y)), w, Compressor.identity(), "uncompressed")
        rep = inner_run(field, st, w, 1.0, 0.05, 1, Compressor.identity())
        assert rep.gap[0] == pytest.approx(float(np.sum(field.target() ** 2)), rel=1e-12)

    def test_zero_steps_rejected(self, setting):
        prob, w, field = setting
        st = inner_init(field, np.zeros((10, prob.dim_y)), w, Compressor.identity(), "uncompressed")
        with pytest.raises(ConfigError, match="at least 1"):
            inner_run(field, st, w, 1.0, 0.05, 0, Compressor.identity())

    def test_step_size_validation(self, setting):
        prob, w, field = setting
        st = inner_init(field, np.zeros((10, prob.dim_y)), w, Compressor.identity(), "uncompressed")
        with pytest.raises(ConfigError, match="gamma"):
            inner_step(st, field, w, 0.0, 0.1, Compressor.identity())
        with pytest.raises(ConfigError, match="eta"):
            inner_step(st, field, w, 0.5, -0.1, Compressor.identity())

    def test_divergence_detected(self, setting):
        # eta far above 2/L: the gap grows geometrically and the
        # windowed detector fires before overflow
        prob, w, field = setting
        st = inner_init(field, np.zeros((10, prob.dim_y)), w, Compressor.identity(), "uncompressed")
        with pytest.raises(DivergenceError, match="gap grew"):
            inner_run(field, st, w, 1.0, 2.5, 200, Compressor.identity())

    def test_overflow_names_node_and_step(self, setting):
        prob, w, field = setting
        st = inner_init(field, np.zeros((10, prob.dim_y)), w, Compressor.identity(), "uncompressed")
        with pytest.raises(NumericError, match=r"non-finite .* inner step \d"):
            with np.errstate(over="ignore", invalid="ignore"):
                inner_run(field, st, w, 1.0, 1e150, 30, Compressor.identity())


class TestWarmRestart:
    def test_refresh_realigns_tracker_mean(self, setting):
        prob, w, _ = setting
        x_a = np.random.default_rng(7).normal(size=(10, prob.dim_x)) * 0.5
        x_b = np.random.default_rng(8).normal(size=(10, prob.dim_x)) * 0.5
        field_a, field_b = FrozenLower(prob, x_a), FrozenLower(prob, x_b)
        comp = Compressor.top_k(0.3)
        st = inner_init(field_a, np.zeros((10, prob.dim_y)), w, comp, "reference")
        inner_run(field_a, st, w, 0.3, 0.1, 5, comp)
        ref_d = st.ref_d.copy()
        refresh_tracker(st, field_b)
        # mean tracking holds for the new objective, references untouched
        assert np.allclose(st.s.mean(axis=0), field_b.grad_rows(st.d).mean(axis=0), atol=1e-12)
        assert np.array_equal(st.ref_d, ref_d)
        rep = inner_run(field_b, st, w, 0.3, 0.1, 30, comp)
        assert rep.gap[-1] < rep.gap[0]


class TestSingleNode:
    def test_tracker_equals_gradient_and_gap_decays(self):
        prob = make_quadratic_problem(m=1, dim_x=4, dim_y=3, seed=0)
        w = build_mixing_matrix(TopologySpec(kind="complete", m=1)).matrix
        field = FrozenLower(prob, np.random.default_rng(0).normal(size=(1, 4)))
        comp = Compressor.top_k(0.5)
        st = inner_init(field, np.zeros((1, prob.dim_y)), w, comp, "reference")
        rep = inner_run(field, st, w, 1.0, 0.2, 60, comp)
        assert np.allclose(st.s, field.grad_rows(st.d), atol=1e-12)
        assert rep.gap[-1] < 1e-6 * rep.gap[0]
        assert rep.spread_d[-1] == 0.0


class TestConvergenceQuality:
    def test_burn_in_contracts_at_strong_convexity_rate(self, setting):
        """Dense gossip at eta = 0.05 on the unit-curvature lower
        objective: per-step gap ratios settle below 1 - eta mu / 2."""
        prob, w, field = setting
        ident = Compressor.identity()
        st = inner_init(field, np.zeros((10, prob.dim_y)), w, ident, "uncompressed")
        rep = inner_run(field, st, w, 1.0, 0.05, 200, ident)
        g = np.asarray(rep.gap)
        ratios = g[31:] / g[30:-1]
        assert ratios.max() <= 1.0 - 0.05 * prob.constants.mu / 2.0
        assert ratios.max() == pytest.approx(0.9025, abs=0.01)

    def test_compressed_tracks_dense_at_third_of_payload(self, setting):
        prob, w, field = setting
        topk, ident = Compressor.top_k(0.3), Compressor.identity()
        st_c = inner_init(field, np.zeros((10, prob.dim_y)), w, topk, "reference")
        rep_c = inner_run(field, st_c, w, 0.3, 0.1, 40, topk)
        st_d = inner_init(field, np.zeros((10, prob.dim_y)), w, ident, "uncompressed")
        rep_d = inner_run(field, st_d, w, 0.3, 0.1, 40, ident)
        assert rep_c.gap[-1] <= 10.0 * rep_d.gap[-1]
        assert rep_c.payload_words[-1] / rep_d.payload_words[-1] == pytest.approx(1 / 3)
        assert rep_c.gap[-1] / rep_d.gap[-1] == pytest.approx(0.8892, abs=0.01)


class TestStateProperties:
    def test_shape_accessors(self):
        st = InnerState(variant="uncompressed", d=np.zeros((4, 7)), s=np.zeros((4, 7)), grad=np.zeros((4, 7)))
        assert st.m == 4
        assert st.dim == 7
