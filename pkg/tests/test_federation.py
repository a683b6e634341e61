import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fracfed.errors import NumericError, UsageError
from fracfed.federation import (
    ClientUpdateResult,
    FedConfig,
    ServerState,
    aggregate,
    client_update,
    comm_meter,
    mb_to_target,
    rounds_to_target,
    run_federation,
    sample_clients,
)
from fracfed.numerics import FracConfig, derive_stream
from fracfed.objectives import LogReg, Quadratic
from fracfed.optimizers import run_fosgd
from fracfed.partition import ClientShard, PartitionSpec, partition, synth_classification, train_test_split


def _result(cid, theta, n):
    theta = np.asarray(theta, dtype=float)
    return ClientUpdateResult(cid, theta, n, 1, theta.size * 4)


@pytest.fixture(scope="module")
def two_blobs():
    ds = synth_classification(400, 2, 2, 4.0, seed=0)
    train, test = train_test_split(ds, 0.25, seed=0)
    return train, test, LogReg(train)


class TestSampling:
    @pytest.mark.parametrize("K, C, m", [(10, 0.2, 2), (10, 0.05, 1), (5, 1.0, 5), (7, 0.5, 3)])
    def test_sizes(self, K, C, m):
        got = sample_clients(K, C, 0, derive_stream(0, "sample"))
        assert len(got) == m and len(set(got)) == m and got == sorted(got)
        assert all(0 <= k < K for k in got)

    def test_full_participation(self):
        assert sample_clients(5, 1.0, 3, derive_stream(1, "sample")) == [0, 1, 2, 3, 4]

    def test_rounds_vary_and_repeat(self):
        s = derive_stream(0, "sample")
        draws = [tuple(sample_clients(20, 0.2, t, s)) for t in range(10)]
        assert len(set(draws)) > 1
        assert draws == [tuple(sample_clients(20, 0.2, t, s)) for t in range(10)]

    @pytest.mark.parametrize("K, C", [(0, 0.5), (3, 0.0), (3, 1.5)])
    def test_rejects(self, K, C):
        with pytest.raises(UsageError):
            sample_clients(K, C, 0, derive_stream(0, "sample"))


class TestAggregate:
    def test_equal_weights(self):
        assert np.array_equal(aggregate([_result(0, [1, 3], 2), _result(1, [3, 5], 2)]), [2.0, 4.0])

    def test_single_result_unchanged(self):
        theta = np.array([0.1, 1 / 3, -7.77e-5])
        assert np.array_equal(aggregate([_result(4, theta, 13)]), theta)

    def test_unequal_weights(self):
        assert np.array_equal(aggregate([_result(0, [0], 1), _result(1, [4], 3)]), [3.0])

    def test_order_independent(self):
        rs = [_result(k, np.random.default_rng(k).normal(size=6), k + 1) for k in range(5)]
        assert np.array_equal(aggregate(rs), aggregate(rs[::-1]))

    @given(hnp.arrays(np.float64, (4, 3), elements=st.floats(-1e6, 1e6)),
           st.lists(st.integers(1, 1000), min_size=4, max_size=4))
    def test_convexity(self, thetas, ns):
        agg = aggregate([_result(k, thetas[k], ns[k]) for k in range(4)])
        slack = 1e-9 * (1 + np.abs(thetas).max())
        assert np.all(agg >= thetas.min(axis=0) - slack) and np.all(agg <= thetas.max(axis=0) + slack)

    def test_rejects_empty_and_mismatch(self):
        with pytest.raises(UsageError):
            aggregate([])
        with pytest.raises(UsageError):
            aggregate([_result(0, [1.0], 1), _result(1, [1.0, 2.0], 1)])


class TestCommMeter:
    def test_examples(self):
        assert comm_meter(2, 1000, "fedavg", 0) == 16000
        assert comm_meter(2, 1000, "fofedavg", 5) == 16000
        assert comm_meter(2, 1000, "fofedavg", 1, "broadcast-prev") == 24000
        assert comm_meter(2, 1000, "fofedavg", 0, "broadcast-prev") == 16000
        assert comm_meter(2, 1000, "fedavg", 3, "broadcast-prev") == 16000

    def test_unknown_mode(self):
        with pytest.raises(UsageError):
            comm_meter(1, 1, "fedavg", 0, "carrier-pigeon")


class TestClientUpdate:
    def test_round_zero_is_one_sgd_step(self):
        obj = Quadratic.diagonal([2.0, 1.0])
        shard = ClientShard(0, np.arange(3))
        cfg = FedConfig("fofedavg", K=1, C=1.0, E=1, B=3, frac=FracConfig(0.5, mu0=0.1))
        res = client_update(shard, ServerState(np.array([1.0, 1.0])), cfg, obj, derive_stream(0, "c"))
        assert res.local_steps_taken == 1
        assert np.array_equal(res.theta_local, np.array([1.0, 1.0]) - 0.1 * np.array([2.0, 1.0]))

    def test_step_count(self, two_blobs):
        train, _, obj = two_blobs
        shard = ClientShard(0, np.arange(70))
        cfg = FedConfig("fedavg", K=1, C=1.0, E=3, B=16, eta=0.1)
        res = client_update(shard, ServerState(np.zeros(obj.dim)), cfg, obj, derive_stream(0, "c"))
        assert res.local_steps_taken == 3 * 5 and res.bytes_up == obj.dim * 4

    def test_numeric_error_carries_context(self, two_blobs):
        train, _, obj = two_blobs
        shard = ClientShard(2, np.arange(40))
        cfg = FedConfig("fedavg", K=3, C=1.0, E=2, B=8, eta=1e308)
        theta = np.full(obj.dim, 1e10)
        with pytest.raises(NumericError) as err, np.errstate(all="ignore"):
            client_update(shard, ServerState(theta), cfg, obj, derive_stream(0, "c"))
        assert err.value.context["client_id"] == 2 and err.value.context["round"] == 0
        assert {"epoch", "batch"} <= set(err.value.context)

    def test_server_state_invariant(self):
        with pytest.raises(UsageError):
            ServerState(np.zeros(2), np.zeros(2), 0)
        with pytest.raises(UsageError):
            ServerState(np.zeros(2), None, 1)


class TestFedConfig:
    @pytest.mark.parametrize("kw", [
        dict(algorithm="scaffold", K=2, eta=0.1),
        dict(algorithm="fedavg", K=2),
        dict(algorithm="fofedavg", K=2),
        dict(algorithm="fedavg", K=2, eta=0.1, C=0.0),
        dict(algorithm="fedavg", K=2, eta=0.1, comm_mode="x"),
        dict(algorithm="fedprox", K=2, eta=0.1, prox_mu=-1.0),
    ])
    def test_rejects(self, kw):
        with pytest.raises(UsageError):
            FedConfig(**kw)

    def test_m_uses_floor(self):
        assert FedConfig("fedavg", K=14, C=0.2, eta=0.1).m == 2


class TestRunFederation:
    def test_zero_rounds(self, two_blobs):
        train, test, obj = two_blobs
        shards = partition(train, PartitionSpec("iid", 4), 0)
        seen = []
        recs = run_federation(obj, shards, FedConfig("fedavg", K=4, eta=0.1, rounds=0), 0,
                              test=test, on_round=lambda r, s: seen.append(s))
        assert recs == [] and seen == []

    def test_fedavg_iid_accuracy(self, two_blobs):
        train, test, obj = two_blobs
        shards = partition(train, PartitionSpec("iid", 4), 0)
        cfg = FedConfig("fedavg", K=4, C=1.0, E=1, B=32, eta=0.01, rounds=30)
        assert run_federation(obj, shards, cfg, 0, test=test)[-1].test_accuracy >= 0.9

    def test_fofedavg_not_slower_on_two_blobs(self):
        wins = 0
        for seed in range(3):
            ds = synth_classification(400, 2, 2, 4.0, seed=seed)
            train, test = train_test_split(ds, 0.25, seed)
            obj, shards = LogReg(train), partition(train, PartitionSpec("iid", 4), seed)
            common = dict(K=4, C=1.0, E=1, B=32, rounds=30)
            fa = run_federation(obj, shards, FedConfig("fedavg", eta=0.01, **common), seed, test=test)
            fo = run_federation(obj, shards, FedConfig("fofedavg", frac=FracConfig(0.97, mu0=0.01), **common),
                                seed, test=test)
            r_fa, r_fo = rounds_to_target(fa, 0.9), rounds_to_target(fo, 0.9)
            wins += r_fo is not None and (r_fa is None or r_fo <= r_fa)
        assert wins >= 2

    def test_alpha_one_matches_decaying_fedavg(self, small_logreg):
        ds, obj = small_logreg
        shards = partition(ds, PartitionSpec("iid", 3), 1)
        common = dict(K=3, C=1.0, E=2, B=8, rounds=5)
        a, b = [], []
        run_federation(obj, shards, FedConfig("fofedavg", frac=FracConfig(1.0, mu0=0.3), **common), 2,
                       on_round=lambda r, s: a.append(s.theta_global))
        run_federation(obj, shards, FedConfig("fedavg", eta=0.3, eta_schedule="decay", **common), 2,
                       on_round=lambda r, s: b.append(s.theta_global))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_single_client_matches_centralized(self, small_logreg):
        ds, obj = small_logreg
        cfg = FracConfig(0.6, mu0=0.3, delta=1e-3)
        models = []
        run_federation(obj, [ClientShard(0, np.arange(ds.n))],
                       FedConfig("fofedavg", K=1, C=1.0, E=1, B=ds.n, frac=cfg, rounds=12), 0,
                       theta0=np.zeros(obj.dim), on_round=lambda r, s: models.append(s.theta_global))
        central = run_fosgd(obj, np.zeros(obj.dim), cfg, 12, schedule_offset=1)
        assert all(np.array_equal(x, y) for x, y in zip(models, central.thetas[1:]))

    @pytest.mark.parametrize("algorithm", ["fofedavg", "fedavg", "fedprox"])
    def test_parallel_is_bit_identical(self, algorithm, blobs):
        shards = partition(blobs, PartitionSpec("dirichlet", 6, dirichlet_alpha=0.5), 3)
        obj = LogReg(blobs)
        cfg = FedConfig(algorithm, K=6, C=0.5, E=2, B=16, rounds=4, eta=0.05, prox_mu=0.1,
                        frac=FracConfig(0.8, mu0=0.05))
        seq = run_federation(obj, shards, cfg, 5, test=blobs)
        par = run_federation(obj, shards, cfg, 5, test=blobs, parallel=4)
        strip = lambda recs: [{**vars(r), "wall_millis": None} for r in recs]  # noqa: E731
        assert strip(seq) == strip(par)

    @pytest.mark.parametrize("mode", ["client-caches-prev", "broadcast-prev"])
    def test_cumulative_bytes_closed_form(self, mode, blobs):
        obj = LogReg(blobs)
        shards = partition(blobs, PartitionSpec("iid", 10), 0)
        cfg = FedConfig("fofedavg", K=10, C=0.3, rounds=6, comm_mode=mode, frac=FracConfig(0.9, mu0=0.05))
        recs = run_federation(obj, shards, cfg, 0)
        want = 0
        for t, rec in enumerate(recs):
            want += comm_meter(3, obj.dim, "fofedavg", t, mode)
            assert rec.bytes_cumulative == want
        assert np.all(np.diff([r.bytes_cumulative for r in recs]) > 0)

    def test_fedprox_zero_mu_is_fedavg(self, blobs):
        obj = LogReg(blobs)
        shards = partition(blobs, PartitionSpec("iid", 4), 0)
        common = dict(K=4, C=0.5, E=1, B=32, eta=0.05, rounds=3)
        a = run_federation(obj, shards, FedConfig("fedavg", **common), 1)
        b = run_federation(obj, shards, FedConfig("fedprox", prox_mu=0.0, **common), 1)
        assert [r.train_loss for r in a] == [r.train_loss for r in b]

    def test_fedprox_pulls_toward_global(self, blobs):
        obj = LogReg(blobs)
        shard = ClientShard(0, np.arange(200))
        server = ServerState(np.zeros(obj.dim))
        drift = []
        for mu in (0.0, 5.0):
            cfg = FedConfig("fedprox", K=1, E=3, B=16, eta=0.05, prox_mu=mu)
            res = client_update(shard, server, cfg, obj, derive_stream(0, "c"))
            drift.append(np.linalg.norm(res.theta_local))
        assert drift[1] < drift[0]

    def test_shard_count_mismatch(self, blobs):
        obj = LogReg(blobs)
        with pytest.raises(UsageError):
            run_federation(obj, partition(blobs, PartitionSpec("iid", 3), 0),
                           FedConfig("fedavg", K=4, eta=0.1), 0)


class TestTargets:
    def _recs(self, accs, per_round=6_000_000):
        from fracfed.federation import RoundRecord
        return [RoundRecord(t, "fofedavg", 0, 0.9, 1.0, a, 0.1, per_round * (t + 1), 0) for t, a in enumerate(accs)]

    def test_rounds_and_mb(self):
        recs = self._recs([0.2, 0.5, 0.55, 0.61, 0.7])
        assert rounds_to_target(recs, 0.6) == 4
        assert mb_to_target(recs, 0.6) == 24.0

    def test_never_reached(self):
        recs = self._recs([0.2, 0.3])
        assert rounds_to_target(recs, 0.6) is None and mb_to_target(recs, 0.6) is None


def _client_seconds(obj, n_k, E, reps=5):
    shard = ClientShard(0, np.arange(n_k))
    cfg = FedConfig("fofedavg", K=1, E=E, B=10, frac=FracConfig(0.8, mu0=0.05))
    server = ServerState(np.zeros(obj.dim) + 0.01, np.zeros(obj.dim), 1)
    best = float("inf")
    for _ in range(reps):
        start = time.perf_counter()
        client_update(shard, server, cfg, obj, derive_stream(0, "c"))
        best = min(best, time.perf_counter() - start)
    return best


@pytest.mark.slow
def test_client_cost_grows_linearly():
    ds = synth_classification(2000, 10, 5, 2.0, seed=0)
    obj = LogReg(ds)
    base = _client_seconds(obj, 400, 1)
    e_ratio = _client_seconds(obj, 400, 4) / base
    n_ratio = _client_seconds(obj, 1600, 1) / base
    # 4x the work should cost roughly 4x; the bounds only catch gross nonlinearity.
    assert 2.0 <= e_ratio <= 8.0
    assert 2.0 <= n_ratio <= 8.0
