import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracfed.analysis import (
    audit_decrease,
    bias_probe,
    kappa,
    memory_weights,
    stationarity_report,
)
from fracfed.errors import UsageError
from fracfed.numerics import FracConfig
from fracfed.objectives import MLP, LogReg, Quadratic
from fracfed.optimizers import decaying_sgd_rates, run_fosgd, run_sgd
from fracfed.partition import ClientShard, PartitionSpec, partition, severity_preset, synth_classification


class TestKappa:
    def test_boundary_is_zero(self):
        assert kappa(2.0 / 3.0, 3.0) == 0.0

    def test_peak(self):
        assert kappa(1.0 / 4.0, 4.0) == pytest.approx(1.0 / 8.0, rel=1e-15)

    @given(st.floats(0.01, 100.0), st.floats(1e-6, 1 - 1e-6))
    def test_positive_inside_cap(self, L, frac):
        assert kappa(frac * 2.0 / L, L) > 0.0

    def test_scan_max_at_inverse_L(self):
        L = 2.5
        grid = np.linspace(1e-4, 2 / L - 1e-4, 20001)
        vals = [kappa(a, L) for a in grid]
        assert grid[int(np.argmax(vals))] == pytest.approx(1 / L, abs=1e-4)
        assert max(vals) == pytest.approx(1 / (2 * L), rel=1e-8)


class TestAudit:
    def test_capped_run_clean(self):
        obj = Quadratic(np.eye(2))
        cfg = FracConfig(0.7, mu0=1.5, delta=0.5, cap=2.0)
        traj = run_fosgd(obj, [2.0, -1.0], cfg, 200)
        audits = audit_decrease(traj, obj, cfg)
        assert len(audits) == 200 and all(a.ok for a in audits)

    def test_injected_boundary_step(self):
        obj = Quadratic.diagonal([4.0, 1.0])
        traj = run_sgd(obj, [1.0, 1.0], 3, lambda i: 0.5)
        assert all(a.kappa_t == 0.0 for a in audit_decrease(traj, obj))

    def test_injected_inverse_L(self):
        obj = Quadratic.diagonal([4.0, 1.0])
        traj = run_sgd(obj, [1.0, 1.0], 3, lambda i: 0.25)
        for a in audit_decrease(traj, obj):
            assert a.kappa_t == pytest.approx(1 / 8, rel=1e-15) and a.ok

    def test_uncapped_large_step_flagged(self):
        obj = Quadratic.diagonal([4.0, 1.0])
        cfg = FracConfig(0.8, mu0=2.0, delta=1e-5)
        flagged = [a for a in audit_decrease(run_fosgd(obj, [1.0, 1.0], cfg, 20), obj, cfg) if a.cap_violation]
        assert flagged

    def test_step_mismatch_detected(self):
        obj = Quadratic.diagonal([4.0, 1.0])
        cfg = FracConfig(0.6, mu0=0.3, delta=0.2, cap=0.5)
        traj = run_fosgd(obj, [1.0, 1.0], cfg, 10)
        traj.steps[5] *= 1.01
        assert audit_decrease(traj, obj, cfg)[5].step_mismatch

    def test_alpha_one_matches_classical_audit(self):
        obj = Quadratic.diagonal([3.0, 0.5])
        cfg = FracConfig(1.0, mu0=0.6)
        fo = audit_decrease(run_fosgd(obj, [1.0, -2.0], cfg, 40), obj, cfg)
        gd = audit_decrease(run_sgd(obj, [1.0, -2.0], 40, decaying_sgd_rates(0.6)), obj)
        assert fo == gd

    def test_needs_smoothness(self):
        ds = synth_classification(20, 2, 2, 1.0, seed=0)
        mlp = MLP(ds, width=3)
        traj = run_sgd(mlp, np.zeros(mlp.dim), 2, lambda i: 0.1)
        with pytest.raises(UsageError):
            audit_decrease(traj, mlp)


@pytest.fixture(scope="module")
def data():
    ds = synth_classification(500, 5, 10, 3.0, seed=4)
    obj = LogReg(ds)
    theta = np.random.default_rng(0).normal(scale=0.3, size=obj.dim)
    return ds, obj, theta


class TestBias:
    def test_duplicated_clients(self, data):
        ds, obj, theta = data
        shards = [ClientShard(k, np.arange(ds.n)) for k in range(3)]
        for p in bias_probe(shards, obj, theta, 0.8):
            assert np.linalg.norm(p.term_structural) <= 1e-12

    def test_alpha_one_no_scaling_term(self, data):
        ds, obj, theta = data
        for p in bias_probe(partition(ds, PartitionSpec("iid", 4), 0), obj, theta, 1.0):
            assert not np.any(p.term_scaling)

    def test_reconstruction(self, data):
        ds, obj, theta = data
        for p in bias_probe(partition(ds, severity_preset("severe", 5, 10), 0), obj, theta, 0.37):
            assert np.allclose(p.term_structural + p.term_scaling + p.grad_global,
                               p.alpha_t * p.grad_local, rtol=0, atol=1e-12)
            assert np.allclose(p.term_structural + p.term_scaling, p.bias, rtol=0, atol=1e-12)

    def test_severe_more_structural_than_iid(self, data):
        ds, obj, theta = data

        def mean_structural(spec):
            probes = bias_probe(partition(ds, spec, 1), obj, theta, 0.9)
            return np.mean([np.linalg.norm(p.term_structural) for p in probes])

        assert mean_structural(severity_preset("severe", 10, 10)) > mean_structural(PartitionSpec("iid", 10))


class TestMemoryWeights:
    def test_alpha_one_two_terms(self):
        assert np.allclose(memory_weights(1.0, 1), [0.8, 0.2], rtol=0, atol=1e-15)

    @given(st.floats(0.01, 1.0), st.integers(1, 500))
    def test_probability_vector(self, alpha, J):
        w = memory_weights(alpha, J)
        assert w.size == J + 1
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.all(np.diff(w) < 0)

    def test_smaller_alpha_heavier_tail(self):
        assert memory_weights(0.5, 20)[20] > memory_weights(0.97, 20)[20]

    @given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.integers(2, 200))
    def test_tail_mass_ordering(self, a, b, J):
        lo, hi = sorted((a, b))
        if hi - lo < 1e-3:
            return
        j = J // 2
        assert memory_weights(lo, J)[j:].sum() > memory_weights(hi, J)[j:].sum()

    @pytest.mark.parametrize("alpha, J", [(0.0, 5), (1.2, 5), (0.5, 0)])
    def test_rejects(self, alpha, J):
        with pytest.raises(UsageError):
            memory_weights(alpha, J)


class TestStationarity:
    def test_capped_quadratic_reaches(self):
        obj = Quadratic.diagonal([4.0, 1.0])
        traj = run_fosgd(obj, [1.0, 1.0], FracConfig(0.8, mu0=0.4, delta=1.0, cap=0.5), 500)
        rep = stationarity_report(traj.grad_norms)
        assert rep.reached(1e-3) and np.all(np.diff(rep.running_min) <= 0)

    def test_zero_gradient_start(self):
        rep = stationarity_report([0.0, 0.0, 0.0])
        assert all(v == 0 for v in rep.first_below.values())

    def test_constant_gradient_not_reached(self):
        rep = stationarity_report([1.0] * 50)
        assert not any(rep.reached(t) for t in (1e-1, 1e-2, 1e-3))
        assert all(v is None for v in rep.first_below.values())
