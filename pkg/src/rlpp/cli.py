"""Command-line entry point: ``rlpp simulate | train | fit | eval | convert``.

Exit codes: 0 success, 2 usage or invalid input, 3 numerical failure, 4 file
or format problem. Every command checks its inputs before creating outputs.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import _backend
from . import baselines as B
from . import evaluate as E
from .core import Dataset, EventSequence
from .errors import FileFormatError, NumericalError, RLPPError, ValidationError
from .io import detect_kind, read_config, read_csv_sequences, read_events, write_events
from .kernel import KernelConfig
from .policy import PolicyParams, load_params, rollouts, save_params
from .rng import RngStream
from .simulate import check_spec, preset, simulate_dataset, spec_from_dict
from .train import TrainConfig, load_checkpoint, train, write_trace_csv

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

_NAME_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


class UsageError(ValidationError):
    pass


# ------------------------------------------------------------------ helpers

def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def _out_dir(path) -> Path:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise UsageError(f"--out {p} exists and is not a directory")
    return p


def _out_file(path) -> Path:
    p = Path(path)
    if p.is_dir():
        raise UsageError(f"--out {p} is a directory")
    if not p.parent.exists():
        raise FileNotFoundError(f"output directory {p.parent} does not exist")
    return p


def _load_spec(text: str, T: float):
    """A preset name or a JSON spec file."""
    if Path(text).is_file():
        try:
            return spec_from_dict(json.loads(Path(text).read_text()))
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{text}: not JSON ({exc.msg})") from None
    return preset(text, T)


def _parse_value(field: dataclasses.Field, raw: str):
    name = field.name
    if name == "init_bias":
        if raw.lower() in ("none", ""):
            return None
        return "data" if raw.lower() == "data" else raw
    if name == "kernel":
        return raw
    default = field.default
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"config key {name}: cannot parse {raw!r}") from None
    return raw


def train_config_from_file(path, seed: int) -> TrainConfig:
    values = read_config(path) if path is not None else {}
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    kwargs = {}
    for key, raw in values.items():
        if key == "seed":
            raise UsageError("the seed comes from --seed, not the config file")
        if key not in fields:
            raise UsageError(f"unknown config key {key!r}")
        kwargs[key] = _parse_value(fields[key], raw)
    return TrainConfig(seed=seed, **kwargs)


def _load_policy(path) -> PolicyParams:
    kind = detect_kind(path)
    if kind == "policy":
        return load_params(path)
    if kind == "checkpoint":
        return load_checkpoint(path)[0].params
    if kind == "fit":
        fit = B.load_fit(path)
        if isinstance(fit, B.PolicyMLEFit):
            return fit.params
    raise UsageError(f"{path} does not hold policy weights")


class _Candidate:
    """A named model or dataset given to ``eval``."""

    def __init__(self, name: str, source: str, T: float):
        if not _NAME_RE.match(name):
            raise UsageError(f"candidate name {name!r} may only use letters, digits, '.', '_' and '-'")
        self.name = name
        self.data: Dataset | None = None
        self.model = None  # spec or PolicyParams used for own-model rescaling
        if source.startswith("preset:"):
            self.model = preset(source[len("preset:"):], T)
            check_spec(self.model, T)
            return
        path = _require_file(source)
        kind = detect_kind(path)
        if kind == "events":
            self.data = read_events(path)
            if self.data.window_end != T:
                raise UsageError(f"{path} has T={self.data.window_end} but the expert has T={T}")
        elif kind == "fit":
            fit = B.load_fit(path)
            self.model = fit.spec
            if not isinstance(self.model, PolicyParams):
                check_spec(self.model, T)
        else:
            self.model = _load_policy(path)

    def samples(self, T: float, n: int, rng: RngStream) -> Dataset:
        if self.data is not None:
            return self.data
        if isinstance(self.model, PolicyParams):
            return Dataset([r.sequence for r in rollouts(self.model, T, n, rng)], T)
        return simulate_dataset(self.model, T, n, rng)


# ----------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if not (math.isfinite(args.T) and args.T > 0):
        raise UsageError("--T must be positive")
    if (args.preset is None) == (args.spec is None):
        raise UsageError("give exactly one of --preset and --spec")
    spec = preset(args.preset, args.T) if args.preset else _load_spec(str(_require_file(args.spec)), args.T)
    check_spec(spec, args.T)
    out = _out_file(args.out)
    data = simulate_dataset(spec, args.T, args.n, RngStream(args.seed), method=args.method)
    write_events(data, out)
    print(f"wrote {len(data)} sequences to {out} (mean count {data.counts().mean():.4f})")
    return EXIT_OK


def _latest_checkpoint(out: Path) -> Path | None:
    found = sorted(out.glob("checkpoint_*.json"))
    return found[-1] if found else None


def cmd_train(args) -> int:
    expert = read_events(_require_file(args.expert))
    config = train_config_from_file(_require_file(args.config) if args.config else None, args.seed)
    out = _out_dir(args.out)
    resume = None
    if args.resume:
        ckpt = _latest_checkpoint(out) if out.is_dir() else None
        if ckpt is None:
            raise UsageError(f"--resume given but {out} holds no checkpoint")
        resume, saved = load_checkpoint(ckpt)
        if dataclasses.replace(saved, iterations=config.iterations) != config:
            raise UsageError(f"{ckpt} was written with a different configuration")
        if resume.iteration > config.iterations:
            raise UsageError(f"{ckpt} is already past {config.iterations} iterations")
    out.mkdir(parents=True, exist_ok=True)
    last = [resume.iteration if resume else 0]

    def progress(state):
        last[0] = state.iteration

    try:
        params, trace = train(expert, config, checkpoint_dir=out, resume=resume, callback=progress, timing=args.timing)
    except NumericalError as exc:
        raise type(exc)(f"iteration {last[0]}: {exc}") from exc
    save_params(params, out / "policy.json")
    write_trace_csv(trace, out / "trace.csv", timing=args.timing)
    msg = f"trained {config.iterations} iterations; policy in {out / 'policy.json'}"
    if trace:
        msg += f" (final batch mmd2 {trace[-1].mmd2:.6g})"
    print(msg)
    return EXIT_OK


def cmd_fit(args) -> int:
    expert = read_events(_require_file(args.expert))
    out = _out_file(args.out)
    if args.model == "hawkes":
        fit = B.fit_hawkes(expert, tol=args.tol)
    elif args.model == "sc":
        fit = B.fit_self_correcting(expert, tol=args.tol)
    elif args.model == "ip":
        if args.K < 1:
            raise UsageError("--K must be at least 1")
        fit = B.fit_inhomogeneous_poisson(expert, K=args.K, tol=args.tol)
    else:
        fit = B.fit_policy_mle(
            expert, d=args.d, dist=args.dist, seed=args.seed, iterations=args.iterations,
            learning_rate=args.learning_rate, freeze_recurrent=args.freeze_recurrent,
        )
    B.save_fit(fit, out)
    print(f"{args.model} fit written to {out} (log-likelihood {fit.log_likelihood:.6f})")
    return EXIT_OK


def _ks_block(data: Dataset, model, level: float):
    pvals = E.ks_pvalues(data, model, min_events=1)
    if pvals.size == 0:
        return None, None, None
    gaps = np.concatenate([E.time_rescale(s, model).values for s in data])
    return pvals, gaps, float(np.mean(pvals > level))


def cmd_eval(args) -> int:
    expert = read_events(_require_file(args.expert))
    T = expert.window_end
    if args.bins < 1:
        raise UsageError("--bins must be at least 1")
    truth = _load_spec(args.truth, T) if args.truth else None
    if truth is not None:
        check_spec(truth, T)
    mode = args.rescale or ("ground-truth" if truth is not None else "own")
    if mode == "ground-truth" and truth is None:
        raise UsageError("--rescale ground-truth needs --truth")
    cands = []
    for item in args.model or []:
        if "=" not in item:
            raise UsageError(f"--model expects NAME=PATH, got {item!r}")
        name, source = item.split("=", 1)
        if name == "expert" or any(c.name == name for c in cands):
            raise UsageError(f"duplicate candidate name {name!r}")
        cands.append(_Candidate(name, source, T))
    count = args.count if args.count is not None else len(expert)
    if count < 1:
        raise UsageError("--count must be at least 1")
    kernel = KernelConfig(args.bandwidth) if args.bandwidth is not None else None
    out = _out_dir(args.out)

    datasets = [(c.name, c.samples(T, count, RngStream(args.seed, (j,)))) for j, c in enumerate(cands)]
    report = E.compare_report(expert, datasets, bins=args.bins, kernel=kernel)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"rescale": mode, "count": count, "ks_level": args.level}
    ks_targets = []
    if mode == "ground-truth":
        ks_targets.append(("expert", expert, truth))
    for c, (name, data) in zip(cands, datasets):
        model = truth if mode == "ground-truth" else c.model
        if model is not None:
            ks_targets.append((name, data, model))
    ks_summary = {}
    for name, data, model in ks_targets:
        pvals, gaps, rate = _ks_block(data, model, args.level)
        if pvals is None:
            continue
        pts = E.qq_points(gaps, min(args.quantiles, gaps.size))
        E.write_pairs_csv(out / f"qq_{name}.csv", ("theoretical", "empirical"), pts)
        E.write_pairs_csv(out / f"pvalue_cdf_{name}.csv", ("p", "cdf"), E.pvalue_cdf(pvals))
        ks_summary[name] = {
            "ks_pass_rate": rate,
            "ks_sequences": int(pvals.size),
            "qq_slope": E.qq_slope(E.qq_points(gaps)),
            "pvalue_cdf_sup_deviation": E.cdf_sup_deviation(pvals),
        }
    for c in report.candidates:
        c.extras.update(ks_summary.get(c.name, {}))
    if "expert" in ks_summary:
        extra["expert"] = ks_summary["expert"]
    E.write_report(report, out, extra)
    for c in report.candidates:
        print(f"{c.name}: intensity MAE {c.mae:.6g}, mmd2 {c.mmd2:.6g}")
    return EXIT_OK


def cmd_convert(args) -> int:
    src = _require_file(args.input)
    out = _out_file(args.out)
    if not (math.isfinite(args.T) and args.T > 0):
        raise UsageError("--T must be positive")
    if args.scale <= 0:
        raise UsageError("--scale must be positive")
    seqs = []
    for i, t in enumerate(read_csv_sequences(src, args.offset, args.scale), start=1):
        if args.sort:
            t = np.sort(t)
        if args.clip:
            t = t[(t >= 0) & (t < args.T)]
        try:
            seqs.append(EventSequence.checked(t, args.T))
        except ValidationError as exc:
            raise ValidationError(f"{src} line {i}: {exc}") from None
    if not seqs:
        raise FileFormatError(f"{src}: no sequences")
    write_events(Dataset(seqs, args.T), out)
    print(f"converted {len(seqs)} sequences to {out}")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, required=True, help="random seed (required)")
    common.add_argument("--out", required=True, help="output file or directory")
    common.add_argument("--threads", type=int, default=1, help="threads for kernel sums")

    p = argparse.ArgumentParser(prog="rlpp", description="Point-process learning by policy gradient.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a ground-truth process")
    s.add_argument("--preset", help="IP, HP, IP_HP1 or IP_HP2")
    s.add_argument("--spec", help="JSON intensity spec file")
    s.add_argument("--T", type=float, default=15.0, help="window end")
    s.add_argument("--n", type=int, required=True, help="number of sequences")
    s.add_argument("--method", choices=("auto", "thinning", "inversion"), default="auto")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", parents=[common], help="train a policy on expert sequences")
    t.add_argument("--expert", required=True)
    t.add_argument("--config", help="key = value training configuration")
    t.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")
    t.add_argument("--timing", action="store_true", help="record wall-clock times (outputs become non-reproducible)")
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("fit", parents=[common], help="maximum-likelihood baseline fit")
    f.add_argument("--expert", required=True)
    f.add_argument("--model", required=True, choices=("hawkes", "ip", "sc", "policy-mle"))
    f.add_argument("--K", type=int, default=4, help="mixture components for ip")
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--iterations", type=int, default=500, help="policy-mle Adam steps")
    f.add_argument("--learning-rate", type=float, default=1e-3)
    f.add_argument("--d", type=int, default=64)
    f.add_argument("--dist", choices=("exponential", "rayleigh"), default="exponential")
    f.add_argument("--freeze-recurrent", action="store_true")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", parents=[common], help="compare candidates with the expert data")
    e.add_argument("--expert", required=True)
    e.add_argument("--model", action="append", metavar="NAME=PATH",
                   help="event file, fit file, policy, checkpoint or preset:NAME (repeatable)")
    e.add_argument("--truth", help="ground-truth preset name or JSON spec file")
    e.add_argument("--rescale", choices=("ground-truth", "own"))
    e.add_argument("--count", type=int, help="sequences to generate per model (default: expert size)")
    e.add_argument("--bins", type=int, default=20)
    e.add_argument("--quantiles", type=int, default=200, help="QQ points written per candidate")
    e.add_argument("--level", type=float, default=0.05, help="KS significance level")
    e.add_argument("--bandwidth", type=float, help="kernel bandwidth (default: median trick on the expert)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("convert", parents=[common], help="CSV timestamps to an event file")
    c.add_argument("--input", required=True)
    c.add_argument("--T", type=float, required=True)
    c.add_argument("--offset", type=float, default=0.0)
    c.add_argument("--scale", type=float, default=1.0, help="mapped time = (t - offset) * scale")
    c.add_argument("--sort", action="store_true")
    c.add_argument("--clip", action="store_true", help="drop events outside [0, T)")
    c.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    _backend.set_threads(args.threads)
    try:
        return args.func(args)
    except (FileFormatError, OSError) as exc:
        print(f"rlpp: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"rlpp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RLPPError, ValueError) as exc:
        print(f"rlpp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
