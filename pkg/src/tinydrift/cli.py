"""Experiment runner: replicated drift experiments to CSV curves.

The configuration is an INI file::

    [experiment]
    runs = 20              ; replicated runs, run i uses seed + i
    seed = 0
    initial_per_class = 100
    out = results
    budget_bytes = 143400  ; optional memory budget for the report

    [scenario]             ; or several [scenario.<name>] sections
    drift_kind = class_change
    ...                    ; any DriftScenario field except seed

    [engine.hybrid]        ; one section per engine, the suffix names it
    kind = hybrid
    capacity = 200
    h = 10                 ; CusumConfig fields are given inline

Audio scenarios may add a ``[features]`` section (``n_fft``, ``hop``,
``n_selected``, ``weights``, ``colormap``). Command-line flags override
file values. See ``docs/example.ini`` for a commented example.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adapt import EngineConfig, make_engine
from .cdt import CusumConfig
from .core import MemoryLedger, memory_bytes, memory_footprint
from .features import SpectrogramFeatureExtractor, load_colormap, read_weights
from .stream import (AUDIO, DriftScenario, aggregate, featurize_stream,
                     gen_audio_stream, gen_audio_training, gen_feature_stream,
                     gen_feature_training, run_test_then_train)

_CUSUM_FIELDS = {f.name for f in dataclasses.fields(CusumConfig)}
_SCENARIO_FIELDS = {f.name: f for f in dataclasses.fields(DriftScenario)}


class ConfigError(ValueError):
    """An invalid or missing configuration value."""


@dataclass(frozen=True)
class FeatureConfig:
    n_fft: int = 512
    hop: int = 512
    n_selected: int = 1
    n_filters: int = 64
    weights_path: Optional[str] = None
    colormap_path: Optional[str] = None


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: DriftScenario
    engines: tuple
    n_runs: int = 20
    initial_per_class: int = 100
    out_dir: Optional[str] = None
    seed: int = 0
    budget_bytes: Optional[int] = None
    features: FeatureConfig = field(default_factory=FeatureConfig)
    jobs: int = 1

    def __post_init__(self):
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")
        if self.initial_per_class < 1:
            raise ConfigError("initial_per_class must be at least 1")
        if not self.engines:
            raise ConfigError("no engines configured")
        labels = [e.label for e in self.engines]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate engine names: {labels}")


# --- parsing ---------------------------------------------------------------

def _convert(section, key, raw, kind):
    try:
        if kind is bool:
            return {"true": True, "yes": True, "1": True, "on": True,
                    "false": False, "no": False, "0": False, "off": False}[raw.lower()]
        if kind is tuple:
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if raw.lower() in ("none", ""):
            return None
        return kind(raw)
    except (KeyError, ValueError):
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None


def _field_kind(f):
    if f.default is None or f.default is dataclasses.MISSING:
        hint = str(f.type)
        for name, kind in (("tuple", tuple), ("float", float), ("int", int), ("bool", bool)):
            if name in hint:
                return kind
        return str
    return type(f.default)


def _parse_scenario(cp, name, seed):
    sec = cp[name]
    kwargs = {}
    for key, raw in sec.items():
        if key == "seed":
            continue
        if key not in _SCENARIO_FIELDS:
            raise ConfigError(f"[{name}] unknown scenario field {key!r}")
        kwargs[key] = _convert(name, key, raw, _field_kind(_SCENARIO_FIELDS[key]))
    try:
        return DriftScenario(seed=seed, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def _parse_engine(cp, name):
    sec = cp[name]
    label = name.split(".", 1)[1]
    eng, cus = {}, {}
    cusum_types = {f.name: f for f in dataclasses.fields(CusumConfig)}
    for key, raw in sec.items():
        if key == "kind":
            eng[key] = raw.strip()
        elif key == "capacity":
            eng[key] = _convert(name, key, raw, int)
        elif key in ("condense_on_init", "condense_on_adapt"):
            eng[key] = _convert(name, key, raw, bool)
        elif key in _CUSUM_FIELDS:
            cus[key] = _convert(name, key, raw, _field_kind(cusum_types[key]))
        else:
            raise ConfigError(f"[{name}] unknown engine field {key!r}")
    if "kind" not in eng:
        raise ConfigError(f"[{name}] missing 'kind'")
    try:
        if cus:
            if eng["kind"] == "hybrid":
                cus.setdefault("grid_mode", "below_only")
            eng["cusum"] = CusumConfig(**cus)
        return EngineConfig(name=label, **eng)
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read an INI experiment file; ``overrides`` (from flags) win over it."""
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path):
        raise ConfigError(f"cannot read configuration file {path!r}")
    exp = cp["experiment"] if cp.has_section("experiment") else {}

    def get(key, kind, default):
        if key in overrides:
            return overrides[key]
        return _convert("experiment", key, exp[key], kind) if key in exp else default

    seed = get("seed", int, 0)
    scen_names = [s for s in cp.sections() if s == "scenario" or s.startswith("scenario.")]
    if "scenario" in overrides:
        wanted = f"scenario.{overrides['scenario']}"
        if wanted not in scen_names:
            raise ConfigError(f"no [{wanted}] section; have {scen_names}")
        scen_name = wanted
    elif len(scen_names) == 1:
        scen_name = scen_names[0]
    else:
        raise ConfigError(f"need exactly one scenario section or --scenario, have {scen_names}")
    scenario = _parse_scenario(cp, scen_name, seed)

    engines = [_parse_engine(cp, s) for s in cp.sections() if s.startswith("engine.")]
    if overrides.get("engine"):
        keep = set(overrides["engine"])
        missing = keep - {e.label for e in engines}
        if missing:
            raise ConfigError(f"unknown engine(s) {sorted(missing)}")
        engines = [e for e in engines if e.label in keep]

    feats = FeatureConfig()
    if cp.has_section("features"):
        fs = cp["features"]
        feats = FeatureConfig(
            n_fft=_convert("features", "n_fft", fs.get("n_fft", "512"), int),
            hop=_convert("features", "hop", fs.get("hop", "512"), int),
            n_selected=_convert("features", "n_selected", fs.get("n_selected", "1"), int),
            n_filters=_convert("features", "n_filters", fs.get("n_filters", "64"), int),
            weights_path=fs.get("weights"), colormap_path=fs.get("colormap"))

    return ExperimentConfig(
        scenario=scenario, engines=tuple(engines),
        n_runs=get("runs", int, 20),
        initial_per_class=get("initial_per_class", int, 100),
        out_dir=get("out", str, None), seed=seed,
        budget_bytes=get("budget_bytes", int, None),
        features=feats, jobs=get("jobs", int, 1))


# --- running ---------------------------------------------------------------

def _feature_data(config: ExperimentConfig, scenario: DriftScenario, bank, cmap):
    if scenario.source_kind != AUDIO:
        X, y = gen_feature_training(scenario, config.initial_per_class)
        return X, y, gen_feature_stream(scenario)
    fc = config.features
    clips, y = gen_audio_training(scenario, config.initial_per_class)
    ex = SpectrogramFeatureExtractor(bank=bank, n_fft=fc.n_fft, hop=fc.hop,
                                     n_selected=fc.n_selected, colormap=cmap,
                                     n_filters=fc.n_filters, random_state=scenario.seed)
    ex.fit(clips)
    return ex.transform(clips), y, featurize_stream(gen_audio_stream(scenario), ex)


def run_single(config: ExperimentConfig, run_index: int, bank=None, cmap=None) -> dict:
    """One replicated run of every engine on the stream seeded ``seed + run_index``."""
    scenario = dataclasses.replace(config.scenario, seed=config.seed + run_index)
    X, y, stream = _feature_data(config, scenario, bank, cmap)
    out = {}
    for ec in config.engines:
        engine = make_engine(ec).fit(X, y)
        out[ec.label] = run_test_then_train(engine, stream)
    return {"dim": X.shape[1], "runs": out}


def _job(args):
    return run_single(*args)


@dataclass
class EngineReport:
    name: str
    peak_store: int
    peak_samples: int
    peak_bytes: int
    bound_bytes: Optional[int]
    budget_bytes: Optional[int]
    detections: int

    @property
    def within_budget(self) -> Optional[bool]:
        if self.budget_bytes is None:
            return None
        return self.peak_bytes <= self.budget_bytes


@dataclass
class ExperimentResult:
    accuracy: dict
    samples: dict
    report: list
    feature_dim: int


def bound_samples(ec: EngineConfig) -> Optional[int]:
    """Worst-case number of stored samples of an engine configuration."""
    if ec.capacity is None:
        return None
    return 2 * ec.capacity if ec.kind == "active" else ec.capacity


def run_experiment(config: ExperimentConfig, ledger: MemoryLedger = MemoryLedger()
                   ) -> ExperimentResult:
    """Execute ``n_runs`` seeded runs per engine, aggregate and write CSVs.

    Seeds are ``config.seed + i`` for run ``i``. Runs go to a process pool of
    ``config.jobs`` workers; files are written only after every run ends.
    """
    bank = cmap = None
    if config.scenario.source_kind == AUDIO:
        try:
            if config.features.weights_path:
                bank = read_weights(config.features.weights_path)
            if config.features.colormap_path:
                cmap = load_colormap(config.features.colormap_path)
        except OSError as exc:
            raise ConfigError(f"cannot read feature file: {exc}") from None
    args = [(config, i, bank, cmap) for i in range(config.n_runs)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_job, args))
    else:
        results = [_job(a) for a in args]

    dim = results[0]["dim"]
    accuracy, samples, report = {}, {}, []
    for ec in config.engines:
        runs = [r["runs"][ec.label] for r in results]
        accuracy[ec.label] = aggregate([r.accuracy_curve for r in runs])
        held = [np.add(r.store_sizes, r.window_sizes) for r in runs]
        samples[ec.label] = aggregate(held)
        peak = int(max(h.max() for h in held))
        bound = bound_samples(ec)
        report.append(EngineReport(
            name=ec.label,
            peak_store=int(max(max(r.store_sizes) for r in runs)),
            peak_samples=peak,
            peak_bytes=memory_bytes(peak, ledger, dim),
            bound_bytes=None if bound is None else memory_bytes(bound, ledger, dim),
            budget_bytes=config.budget_bytes,
            detections=sum(len(r.detections) for r in runs)))

    if config.out_dir is not None:
        os.makedirs(config.out_dir, exist_ok=True)
        emit_csv(accuracy, os.path.join(config.out_dir, "accuracy.csv"))
        emit_csv(samples, os.path.join(config.out_dir, "samples.csv"))
    return ExperimentResult(accuracy, samples, report, dim)


def emit_csv(curves: dict, path) -> None:
    """Write ``index,<name>_mean,<name>_std,...`` with one row per step."""
    if not curves:
        raise ValueError("no curves to write")
    lengths = {len(c.mean) for c in curves.values()} | {len(c.std) for c in curves.values()}
    if len(lengths) != 1:
        raise ValueError(f"curves have unequal lengths: {sorted(lengths)}")
    names = list(curves)
    header = ["index"] + [f"{n}_{part}" for n in names for part in ("mean", "std")]
    cols = [a for n in names for a in (curves[n].mean, curves[n].std)]
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for i in range(lengths.pop()):
            f.write(",".join([str(i + 1)] + ["%.6g" % c[i] for c in cols]) + "\n")


def format_report(result: ExperimentResult) -> str:
    lines = [f"feature dim {result.feature_dim}",
             f"{'engine':<16}{'peak |T|':>10}{'peak held':>11}{'peak B':>12}"
             f"{'bound B':>12}{'budget':>10}{'detections':>12}"]
    for r in result.report:
        ok = {None: "-", True: "ok", False: "OVER"}[r.within_budget]
        lines.append(f"{r.name:<16}{r.peak_store:>10}{r.peak_samples:>11}{r.peak_bytes:>12}"
                     f"{r.bound_bytes if r.bound_bytes is not None else '-':>12}{ok:>10}"
                     f"{r.detections:>12}")
    return "\n".join(lines)


def format_footprint(blocks: dict) -> str:
    lines = [f"{'block':<15}{'shape':<20}{'bytes':>10}"]
    for name, (shape, nbytes) in blocks.items():
        s = "" if shape is None else "x".join(str(v) for v in shape)
        lines.append(f"{name:<15}{s:<20}{nbytes:>10,}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tinydrift", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a configured experiment")
    r.add_argument("config", help="INI experiment file")
    r.add_argument("--seed", type=int)
    r.add_argument("--runs", type=int)
    r.add_argument("--out")
    r.add_argument("--engine", action="append", help="engine name to run (repeatable)")
    r.add_argument("--scenario", help="name of the [scenario.<name>] section to use")
    r.add_argument("--jobs", type=int, help="worker processes")
    fp = sub.add_parser("footprint", help="print the memory budget of a deployment")
    fp.add_argument("--rate", type=int, default=22050)
    fp.add_argument("--n-fft", type=int, default=512)
    fp.add_argument("--hop", type=int, default=512)
    fp.add_argument("--max-size", type=int, default=50)
    fp.add_argument("--n-selected", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "footprint":
            print(format_footprint(memory_footprint(args.rate, args.n_fft, args.hop,
                                                    args.max_size, n_selected=args.n_selected)))
            return 0
        config = load_config(args.config, {
            "seed": args.seed, "runs": args.runs, "out": args.out,
            "engine": args.engine, "scenario": args.scenario, "jobs": args.jobs})
        result = run_experiment(config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(format_report(result))
    if config.out_dir:
        print(f"wrote {config.out_dir}/accuracy.csv and {config.out_dir}/samples.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
