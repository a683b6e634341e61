"""Invariant suite run by ``fracfed check``.

Each check returns ``(ok, detail)``. Checks import their targets through
module attributes, so a patched function (e.g. a fault-injected
``numerics.frac_factor``) is what gets exercised.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from fracfed import analysis, federation, numerics, objectives, optimizers, partition


def check_gamma():
    worst = 0.0
    for x in (0.6, 0.9, 1.0, 1.3):
        lhs, rhs = numerics.gamma(x + 1.0), x * numerics.gamma(x)
        worst = max(worst, abs(lhs - rhs) / abs(rhs))
    closed = abs(numerics.gamma(1.5) - math.sqrt(math.pi) / 2) / (math.sqrt(math.pi) / 2)
    ok = worst <= 1e-10 and closed <= 1e-12
    return ok, f"recurrence rel err {worst:.2e}, Gamma(1.5) rel err {closed:.2e}"


def check_frac_factor():
    cfg = numerics.FracConfig(0.5, mu0=0.1, delta=0.1)
    got = numerics.frac_factor(cfg, 3.9)
    want = 2.0 / (math.sqrt(math.pi) / 2.0)
    one = numerics.frac_factor(numerics.FracConfig(1.0), 7.3)
    ok = abs(got - want) <= 1e-12 * want and one == 1.0
    return ok, f"factor(0.5, 0.1, 3.9)={got!r} vs {want!r}; alpha=1 -> {one!r}"


def _synth_logreg(seed=3, n=60, p=4, k=3):
    ds = partition.synth_classification(n, p, k, 3.0, seed)
    return ds, objectives.LogReg(ds)


def check_alpha_one_equivalence():
    _, obj = _synth_logreg()
    theta0 = np.zeros(obj.dim)
    cfg = numerics.FracConfig(1.0, mu0=0.3, delta=1e-5)
    fo = optimizers.run_fosgd(obj, theta0, cfg, 30)
    sgd = optimizers.run_sgd(obj, theta0, 30, optimizers.decaying_sgd_rates(0.3))
    same = all(np.array_equal(a, b) for a, b in zip(fo.thetas, sgd.thetas))
    return same, "FOSGD(alpha=1) vs decaying SGD, 30 steps: " + ("bit-identical" if same else "DIFFER")


def check_sufficient_decrease():
    obj = objectives.Quadratic.diagonal([4.0, 1.0])
    L = obj.smoothness()
    bad, notes = 0, []
    for alpha in (0.5, 0.8, 0.97):
        cfg = numerics.FracConfig(alpha, mu0=0.4, delta=1.0, cap=2.0 / L)
        traj = optimizers.run_fosgd(obj, [1.0, 1.0], cfg, 200)
        audits = analysis.audit_decrease(traj, obj, cfg)
        n_bad = sum(not a.ok for a in audits)
        rep = analysis.stationarity_report(traj.grad_norms)
        bad += n_bad + (not rep.reached(1e-3))
        notes.append(f"alpha={alpha}: {n_bad} violations, min|g|={rep.running_min[-1]:.1e}")
    return bad == 0, "; ".join(notes)


def check_cap_gate():
    obj = objectives.Quadratic.diagonal([4.0, 1.0])
    cfg = numerics.FracConfig(0.8, mu0=2.0, delta=1e-5)
    traj = optimizers.run_fosgd(obj, [1.0, 1.0], cfg, 20)
    flagged = sum(a.cap_violation for a in analysis.audit_decrease(traj, obj, cfg))
    return flagged > 0, f"uncapped mu0=2.0 run: {flagged} steps flagged above 2/L"


def check_partitions():
    ds = partition.synth_classification(600, 5, 10, 3.0, 11)
    problems = []
    for name in partition.PRESETS:
        spec = partition.severity_preset(name, 10, 10)
        shards = partition.partition(ds, spec, 5)
        idx = np.concatenate([s.indices for s in shards])
        if idx.size != ds.n or np.unique(idx).size != ds.n:
            problems.append(f"{name}: not a disjoint cover")
        if spec.scheme == "shard":
            bound = spec.shards_per_client * spec.classes_per_shard
            rep = partition.heterogeneity_report(shards, ds)
            if rep.classes_per_client.max() > bound:
                problems.append(f"{name}: class bound {bound} exceeded")
        again = partition.partition(ds, spec, 5)
        if any(not np.array_equal(a.indices, b.indices) for a, b in zip(shards, again)):
            problems.append(f"{name}: not deterministic")
    return not problems, "; ".join(problems) or f"{len(partition.PRESETS)} presets cover, bound, repeat"


def check_gradients():
    ds, lr = _synth_logreg(seed=4)
    mlp = objectives.MLP(ds, width=6)
    rng = numerics.derive_stream(9, "check-grad").generator()
    e_lr = max(objectives.grad_check(lr, rng.normal(size=lr.dim), None, 1e-5) for _ in range(2))
    e_mlp = max(objectives.grad_check(mlp, rng.normal(size=mlp.dim) * 0.5, None, 1e-5) for _ in range(2))
    return e_lr <= 1e-5 and e_mlp <= 1e-4, f"logreg {e_lr:.1e} (<=1e-5), mlp {e_mlp:.1e} (<=1e-4)"


def check_federated_equivalences():
    ds, obj = _synth_logreg(seed=6, n=80)
    shards = partition.partition(ds, partition.PartitionSpec("iid", 4), 2)
    common = dict(K=4, C=1.0, E=2, B=8, rounds=4)
    fo_models, avg_models = [], []
    federation.run_federation(
        obj, shards, federation.FedConfig("fofedavg", frac=numerics.FracConfig(1.0, mu0=0.2), **common), 1,
        on_round=lambda r, s: fo_models.append(s.theta_global),
    )
    federation.run_federation(
        obj, shards, federation.FedConfig("fedavg", eta=0.2, eta_schedule="decay", **common), 1,
        on_round=lambda r, s: avg_models.append(s.theta_global),
    )
    alpha_one = all(np.array_equal(a, b) for a, b in zip(fo_models, avg_models))

    whole = [partition.ClientShard(0, np.arange(ds.n))]
    cfg = numerics.FracConfig(0.7, mu0=0.2, delta=1e-3)
    fed_models = []
    federation.run_federation(
        obj, whole, federation.FedConfig("fofedavg", K=1, C=1.0, E=1, B=ds.n, frac=cfg, rounds=10), 1,
        theta0=np.zeros(obj.dim), on_round=lambda r, s: fed_models.append(s.theta_global),
    )
    central = optimizers.run_fosgd(obj, np.zeros(obj.dim), cfg, 10, schedule_offset=1)
    degenerate = all(np.array_equal(a, b) for a, b in zip(fed_models, central.thetas[1:]))
    ok = alpha_one and degenerate
    return ok, f"alpha=1 FOFedAvg==FedAvg(decay): {alpha_one}; K=1 federation==centralized: {degenerate}"


def check_comm_meter():
    per = federation.comm_meter(2, 1000, "fedavg", 3)
    fo = federation.comm_meter(2, 1000, "fofedavg", 3)
    bp = federation.comm_meter(2, 1000, "fofedavg", 3, "broadcast-prev")
    ok = (per, fo, bp) == (16000, 16000, 24000)
    return ok, f"fedavg {per}, fofedavg {fo}, broadcast-prev {bp} bytes/round"


SUITES: list[tuple[str, Callable]] = [
    ("gamma", check_gamma),
    ("frac-factor", check_frac_factor),
    ("alpha1-equivalence", check_alpha_one_equivalence),
    ("sufficient-decrease", check_sufficient_decrease),
    ("cap-gate", check_cap_gate),
    ("partition", check_partitions),
    ("gradient-check", check_gradients),
    ("federated-equivalence", check_federated_equivalences),
    ("comm-meter", check_comm_meter),
]


def run_all(echo=print) -> bool:
    all_ok = True
    for name, fn in SUITES:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        echo(f"{'PASS' if ok else 'FAIL'}  {name:<24} {detail}")
    return all_ok
