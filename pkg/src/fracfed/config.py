"""Experiment config files.

Configs are INI files read with :mod:`configparser`. Grammar::

    [dataset]     kind = synth | idx | container
                  n, p, num_classes, class_sep, seed     (synth)
                  images, labels                         (idx)
                  path                                   (container)
                  test_fraction = 0.2
    [partition]   preset = iid | mild | moderate | severe | severe-dirichlet
                  or scheme = iid | dirichlet | shard with
                  dirichlet_alpha / shards_per_client / classes_per_shard
                  K = 10
    [model]       kind = logreg | mlp ; width = 16
    [algorithm]   names = fofedavg, fedavg, fedprox   (comma list)
                  C, E, B, rounds, target_accuracy, comm_mode,
                  alpha, mu0, delta, cap, eta, eta_schedule, prox_mu
    [run]         seeds = 0, 1, 2
    [sweep]       alphas = 0.5, 0.97 ; seeds = ...
    [output]      dir = out ; formats = csv, json

Unknown sections or keys are errors; every problem is reported at once.
"""

from __future__ import annotations

import configparser
import difflib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fracfed.errors import ConfigError, UsageError
from fracfed.federation import ALGORITHMS, COMM_MODES, FedConfig
from fracfed.numerics import FracConfig
from fracfed.partition import PRESETS, PartitionSpec, severity_preset

DEFAULT_C = 0.2
DEFAULT_DELTA = 1e-5
DEFAULT_MU0 = 0.01
DEFAULT_ALPHA = 0.97

SCHEMA = {
    "dataset": ("kind", "n", "p", "num_classes", "class_sep", "seed", "images", "labels", "path", "test_fraction"),
    "partition": ("preset", "scheme", "K", "dirichlet_alpha", "shards_per_client", "classes_per_shard"),
    "model": ("kind", "width"),
    "algorithm": (
        "names", "C", "E", "B", "rounds", "target_accuracy", "comm_mode",
        "alpha", "mu0", "delta", "cap", "eta", "eta_schedule", "prox_mu",
    ),
    "run": ("seeds",),
    "sweep": ("alphas", "seeds"),
    "output": ("dir", "formats"),
}
_KEY_LOOKUP = {sec: {k.lower(): k for k in keys} for sec, keys in SCHEMA.items()}


@dataclass
class DatasetSection:
    kind: str = "synth"
    n: int = 2000
    p: int = 20
    num_classes: int = 10
    class_sep: float = 3.0
    seed: Optional[int] = None
    images: Optional[Path] = None
    labels: Optional[Path] = None
    path: Optional[Path] = None
    test_fraction: float = 0.2


@dataclass
class AlgorithmSection:
    names: list = field(default_factory=lambda: ["fofedavg"])
    C: float = DEFAULT_C
    E: int = 1
    B: int = 32
    rounds: int = 10
    target_accuracy: Optional[float] = None
    comm_mode: str = "client-caches-prev"
    alpha: float = DEFAULT_ALPHA
    mu0: float = DEFAULT_MU0
    delta: float = DEFAULT_DELTA
    cap: Optional[float] = None
    eta: Optional[float] = None
    eta_schedule: str = "constant"
    prox_mu: float = 0.01


@dataclass
class ExperimentConfig:
    dataset: DatasetSection
    partition: PartitionSpec
    partition_preset: Optional[str]
    model_kind: str
    model_width: int
    algorithm: AlgorithmSection
    seeds: list
    sweep_alphas: Optional[list]
    sweep_seeds: Optional[list]
    out_dir: Path
    formats: list
    source: Optional[Path] = None

    @property
    def K(self) -> int:
        return self.partition.K

    def fed_config(self, name: str, alpha: Optional[float] = None) -> FedConfig:
        a = self.algorithm
        frac = None
        if name == "fofedavg":
            frac = FracConfig(alpha if alpha is not None else a.alpha, a.mu0, a.delta, a.cap)
        return FedConfig(
            algorithm=name,
            K=self.K,
            C=a.C,
            E=a.E,
            B=a.B,
            frac=frac,
            eta=a.eta if a.eta is not None else a.mu0,
            eta_schedule=a.eta_schedule,
            prox_mu=a.prox_mu,
            rounds=a.rounds,
            target_accuracy=a.target_accuracy,
            comm_mode=a.comm_mode,
        )


class _Reader:
    """Typed access to one section that records errors instead of raising."""

    def __init__(self, parser, section, errors):
        self.sec = parser[section] if parser.has_section(section) else {}
        self.name = section
        self.errors = errors

    def _raw(self, key):
        return self.sec.get(key.lower()) if self.sec else None

    def get(self, key, conv, default=None):
        raw = self._raw(key)
        if raw is None or raw.strip() == "":
            return default
        try:
            return conv(raw.strip())
        except (TypeError, ValueError):
            self.errors.append(f"[{self.name}] {key}={raw!r} is not a valid {conv.__name__}")
            return default

    def get_list(self, key, conv, default=None):
        raw = self._raw(key)
        if raw is None or raw.strip() == "":
            return default
        out = []
        for item in raw.replace("\n", ",").split(","):
            item = item.strip()
            if not item:
                continue
            try:
                out.append(conv(item))
            except ValueError:
                self.errors.append(f"[{self.name}] {key}: {item!r} is not a valid {conv.__name__}")
        return out


def _alpha_ok(value, where, errors):
    if not 0.0 < value <= 1.0:
        errors.append(
            f"{where}: alpha={value} outside (0, 1]; the convergence theory only covers "
            "fractional orders in (0, 1]"
        )


def _check_unknown(parser, errors):
    for sec in parser.sections():
        if sec not in SCHEMA:
            hint = difflib.get_close_matches(sec, SCHEMA.keys(), n=1)
            errors.append(f"unknown section [{sec}]" + (f"; did you mean [{hint[0]}]?" if hint else ""))
            continue
        for key in parser[sec]:
            if key not in _KEY_LOOKUP[sec]:
                hint = difflib.get_close_matches(key, list(_KEY_LOOKUP[sec]), n=1)
                suffix = f"; did you mean '{_KEY_LOOKUP[sec][hint[0]]}'?" if hint else ""
                errors.append(f"unknown key '{key}' in [{sec}]{suffix}")


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    return parse_config_text(text, base_dir=path.parent, source=path)


def parse_config_text(text: str, base_dir=".", source=None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"malformed config: {exc}"]) from exc
    errors: list[str] = []
    base_dir = Path(base_dir)
    _check_unknown(parser, errors)

    d = _Reader(parser, "dataset", errors)
    ds = DatasetSection()
    ds.kind = d.get("kind", str, ds.kind)
    ds.n = d.get("n", int, ds.n)
    ds.p = d.get("p", int, ds.p)
    ds.num_classes = d.get("num_classes", int, ds.num_classes)
    ds.class_sep = d.get("class_sep", float, ds.class_sep)
    ds.seed = d.get("seed", int, None)
    ds.test_fraction = d.get("test_fraction", float, ds.test_fraction)
    if ds.kind not in ("synth", "idx", "container"):
        errors.append(f"[dataset] kind={ds.kind!r}; expected synth, idx or container")
    if not 0.0 < ds.test_fraction < 1.0:
        errors.append(f"[dataset] test_fraction={ds.test_fraction} must lie in (0, 1)")
    needed = {"idx": ("images", "labels"), "container": ("path",)}.get(ds.kind, ())
    for key in needed:
        value = d.get(key, str)
        if value is None:
            errors.append(f"[dataset] {key} is required for kind={ds.kind}")
            continue
        p = Path(value)
        p = p if p.is_absolute() else base_dir / p
        if not p.exists():
            errors.append(f"[dataset] {key} file not found: {p}")
        setattr(ds, key, p)
    if ds.kind == "synth" and (ds.n < ds.num_classes or ds.p < 2 or ds.num_classes < 1):
        errors.append("[dataset] synth needs n >= num_classes >= 1 and p >= 2")

    pr = _Reader(parser, "partition", errors)
    K = pr.get("K", int, 10)
    preset = pr.get("preset", str)
    scheme = pr.get("scheme", str)
    spec = None
    if preset and scheme:
        errors.append("[partition] give either preset or scheme, not both")
    elif scheme:
        try:
            spec = PartitionSpec(
                scheme,
                K,
                dirichlet_alpha=pr.get("dirichlet_alpha", float),
                shards_per_client=pr.get("shards_per_client", int),
                classes_per_shard=pr.get("classes_per_shard", int),
            )
        except UsageError as exc:
            errors.append(f"[partition] {exc}")
    else:
        preset = preset or "iid"
        if preset not in PRESETS:
            errors.append(f"[partition] unknown preset {preset!r}; expected one of {', '.join(PRESETS)}")
        else:
            try:
                spec = severity_preset(preset, K, ds.num_classes)
            except UsageError as exc:
                errors.append(f"[partition] {exc}")

    m = _Reader(parser, "model", errors)
    model_kind = m.get("kind", str, "logreg")
    width = m.get("width", int, 16)
    if model_kind not in ("logreg", "mlp"):
        errors.append(f"[model] kind={model_kind!r}; expected logreg or mlp")
    if not 1 <= width <= 64:
        errors.append(f"[model] width={width} must lie in [1, 64]")

    a = _Reader(parser, "algorithm", errors)
    alg = AlgorithmSection()
    alg.names = a.get_list("names", str, alg.names)
    for attr, conv in (("C", float), ("E", int), ("B", int), ("rounds", int), ("target_accuracy", float),
                       ("comm_mode", str), ("alpha", float), ("mu0", float), ("delta", float), ("cap", float),
                       ("eta", float), ("eta_schedule", str), ("prox_mu", float)):
        setattr(alg, attr, a.get(attr, conv, getattr(alg, attr)))
    for name in alg.names:
        if name not in ALGORITHMS:
            errors.append(f"[algorithm] unknown algorithm {name!r}; expected one of {', '.join(ALGORITHMS)}")
    if not alg.names:
        errors.append("[algorithm] names must list at least one algorithm")
    _alpha_ok(alg.alpha, "[algorithm]", errors)
    if not 0.0 < alg.C <= 1.0:
        errors.append(f"[algorithm] C={alg.C} must lie in (0, 1]")
    if alg.E < 1 or alg.B < 1 or alg.rounds < 0:
        errors.append("[algorithm] E and B must be >= 1, rounds >= 0")
    for attr in ("mu0", "delta"):
        if not getattr(alg, attr) > 0:
            errors.append(f"[algorithm] {attr} must be positive")
    if alg.cap is not None and not alg.cap > 0:
        errors.append("[algorithm] cap must be positive")
    if alg.eta is not None and not alg.eta > 0:
        errors.append("[algorithm] eta must be positive")
    if alg.comm_mode not in COMM_MODES:
        errors.append(f"[algorithm] comm_mode={alg.comm_mode!r}; expected one of {', '.join(COMM_MODES)}")
    if alg.eta_schedule not in ("constant", "decay"):
        errors.append(f"[algorithm] eta_schedule={alg.eta_schedule!r}; expected constant or decay")
    if alg.target_accuracy is not None and not 0.0 < alg.target_accuracy <= 1.0:
        errors.append("[algorithm] target_accuracy must lie in (0, 1]")

    seeds = _Reader(parser, "run", errors).get_list("seeds", int, [0])
    if not seeds:
        errors.append("[run] seeds must be nonempty")

    sw = _Reader(parser, "sweep", errors)
    sweep_alphas = sw.get_list("alphas", float)
    sweep_seeds = sw.get_list("seeds", int)
    if parser.has_section("sweep"):
        if not sweep_alphas:
            errors.append("[sweep] alphas must be a nonempty list")
        if sweep_seeds is not None and not sweep_seeds:
            errors.append("[sweep] seeds must be nonempty")
    for value in sweep_alphas or ():
        _alpha_ok(value, "[sweep]", errors)

    o = _Reader(parser, "output", errors)
    out_dir = Path(o.get("dir", str, "out"))
    formats = o.get_list("formats", str, ["csv", "json"])
    for fmt in formats:
        if fmt not in ("csv", "json"):
            errors.append(f"[output] unknown format {fmt!r}; expected csv or json")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        dataset=ds,
        partition=spec,
        partition_preset=preset if not scheme else None,
        model_kind=model_kind,
        model_width=width,
        algorithm=alg,
        seeds=seeds,
        sweep_alphas=sweep_alphas,
        sweep_seeds=sweep_seeds,
        out_dir=out_dir,
        formats=formats,
        source=Path(source) if source else None,
    )
