"""Command-line harness: fit models, compare configurations, run noise diagnostics.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data as datamod
from . import diagnostics
from .engine import (
    ALGORITHMS,
    Constant,
    ConstantM,
    LinearRamp,
    PowerDecay,
    Settings,
    fit,
)
from .errors import ConfigError, ContractError, DataError, NumericalError, SviError
from .models import LDA, GaussianMixture, MatrixFactorization
from .trace import ElboTrace, TraceWriter, emit_csv, save_snapshot

MODELS = ("gmm", "dpgmm", "pmf", "lda")
DEFAULT_K = {"gmm": 4, "dpgmm": 50, "lda": 10}
GENERATOR_KIND = {"gmm": "gmm", "dpgmm": "gmm", "pmf": "ratings", "lda": "lda"}

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


@dataclass
class RunConfig:
    """Everything needed to reproduce one run.

    ``m`` is ``"<int>"`` or ``"ramp:<slope>"``; ``rho`` is ``"const:<v>"`` or
    ``"power:<tau0>,<kappa>"``.  ``generate`` is ``"<kind>:key=value,..."``
    with kind ``gmm``, ``ratings`` or ``lda``.
    """

    model: str = "gmm"
    data: str | None = None
    format: str | None = None
    vocab: str | None = None
    generate: str | None = None
    algo: str = "svi+"
    batch_size: int | None = None
    m: str | None = None
    rho: str = "power:1,0.7"
    iters: int = 100
    seed: int = 0
    eval_every: int | None = None
    out: str | None = None
    K: int | None = None
    d: int = 5
    mass: float = 1.0
    noise: str = "per-rating"
    heldout: int = 0
    standardize: bool = True
    label: str | None = None

    def settings(self) -> Settings:
        return Settings(self.algo, self.batch_size, parse_m(self.m), parse_rho(self.rho),
                        self.iters, self.seed, self.eval_every)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


_INT_FIELDS = {"batch_size", "iters", "seed", "eval_every", "K", "d", "heldout"}
_FLOAT_FIELDS = {"mass"}
_BOOL_FIELDS = {"standardize"}
_TRUE, _FALSE = ("1", "true", "yes", "on"), ("0", "false", "no", "off")


def _coerce(name: str, text):
    if text is None:
        return None
    if isinstance(text, str) and text.strip().lower() in ("", "none"):
        return None
    try:
        if name in _INT_FIELDS:
            return int(text)
        if name in _FLOAT_FIELDS:
            return float(text)
        if name in _BOOL_FIELDS:
            if isinstance(text, bool):
                return text
            low = str(text).strip().lower()
            if low in _TRUE or low in _FALSE:
                return low in _TRUE
            raise ValueError(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot parse {text!r}") from None
    return str(text)


def parse_m(text):
    """``None`` -> plain SVI; ``"10"`` -> constant 10; ``"ramp:50"`` -> ``50 t``."""
    if text is None:
        return ConstantM()
    text = str(text).strip()
    try:
        if text.startswith("ramp:"):
            return LinearRamp(int(text[5:]))
        return ConstantM(int(text))
    except (ValueError, ContractError) as exc:
        raise ConfigError(f"m: invalid schedule {text!r} ({exc})") from None


def parse_rho(text):
    text = str(text).strip()
    try:
        kind, _, arg = text.partition(":")
        if kind == "const":
            return Constant(float(arg))
        if kind == "power":
            tau0, kappa = (float(x) for x in arg.split(","))
            return PowerDecay(tau0, kappa)
    except (ValueError, ContractError) as exc:
        raise ConfigError(f"rho: invalid schedule {text!r} ({exc})") from None
    raise ConfigError(f"rho: expected const:<v> or power:<tau0>,<kappa>, got {text!r}")


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path} ({exc.strerror})") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"config: {path} line {n}: expected key=value")
        if key not in known:
            raise ConfigError(f"{key}: unknown setting ({path} line {n})")
        out[key] = value.strip()
    return out


def make_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Config file values first, then command-line overrides (non-``None`` wins)."""
    merged = {}
    for src in (file_values or {}), (overrides or {}):
        for k, v in src.items():
            if v is not None:
                merged[k] = _coerce(k, v)
    cfg = replace(RunConfig(), **merged)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Reject every inconsistent combination before any data is touched."""
    if cfg.model not in MODELS:
        raise ConfigError(f"model: unknown model {cfg.model!r}")
    if cfg.algo not in ALGORITHMS:
        raise ConfigError(f"algo: unknown algorithm {cfg.algo!r}")
    if (cfg.data is None) == (cfg.generate is None):
        raise ConfigError("data/generate: give exactly one of data and generate")
    if cfg.iters < 1:
        raise ConfigError("iters: must be >= 1")
    if cfg.seed < 0:
        raise ConfigError("seed: must be >= 0")
    if cfg.eval_every is not None and cfg.eval_every < 1:
        raise ConfigError("eval_every: must be >= 1")
    if cfg.batch_size is not None and cfg.batch_size < 1:
        raise ConfigError("batch_size: must be >= 1")
    if cfg.K is not None and cfg.K < 2:
        raise ConfigError("K: must be >= 2")
    if cfg.d < 1:
        raise ConfigError("d: must be >= 1")
    if cfg.mass <= 0:
        raise ConfigError("mass: must be > 0")
    if cfg.noise not in ("per-rating", "per-factor"):
        raise ConfigError(f"noise: unknown mode {cfg.noise!r}")
    if cfg.heldout < 0:
        raise ConfigError("heldout: must be >= 0")
    if cfg.heldout and cfg.model != "lda":
        raise ConfigError("heldout: only supported for model=lda")
    m = parse_m(cfg.m)
    parse_rho(cfg.rho)
    if cfg.algo == "svi+" and isinstance(m, ConstantM) and m.M is not None and cfg.batch_size is not None \
            and m.M > cfg.batch_size:
        raise ConfigError(f"m/batch_size: effective batch size m={m.M} exceeds batch_size={cfg.batch_size}")
    if cfg.generate is not None:
        kind = cfg.generate.partition(":")[0]
        if kind != GENERATOR_KIND[cfg.model]:
            raise ConfigError(f"generate/model: generator {kind!r} does not fit model {cfg.model!r}")


def _check_against_data(cfg: RunConfig, N: int) -> None:
    if cfg.algo == "batch":
        return
    S = N if cfg.batch_size is None else cfg.batch_size
    if S > N:
        raise ConfigError(f"batch_size: {S} exceeds the number of data points N={N}")
    m = parse_m(cfg.m)
    if cfg.algo == "svi+" and isinstance(m, ConstantM) and m.M is not None and m.M > S:
        raise ConfigError(f"m/batch_size: effective batch size m={m.M} exceeds batch_size={S}")


# ---------------------------------------------------------------------------
# data and models


def _kv(text: str) -> dict:
    out = {}
    for part in filter(None, text.split(",")):
        key, sep, value = part.partition("=")
        if not sep:
            raise ConfigError(f"generate: expected key=value, got {part!r}")
        out[key.strip()] = value.strip()
    return out


def generate_data(spec: str):
    kind, _, rest = spec.partition(":")
    kw = _kv(rest)
    try:
        if kind == "gmm":
            n = int(kw.pop("n", 250))
            seed = int(kw.pop("seed", 0))
            scale = float(kw.pop("scale", 1.0))
            if kw:
                raise ConfigError(f"generate: unknown keys {sorted(kw)}")
            return datamod.gen_gmm_synthetic(n, datamod.ClusterSpec(scale=scale), seed)
        if kind == "ratings":
            args = dict(users=500, items=300, d=5, density=0.05, sigma2=0.25, seed=0)
            for k in list(kw):
                if k not in args:
                    raise ConfigError(f"generate: unknown key {k!r}")
                args[k] = type(args[k])(kw.pop(k))
            ds, _ = datamod.gen_ratings_synthetic(args["users"], args["items"], args["d"],
                                                  args["density"], args["sigma2"], args["seed"])
            return ds
        if kind == "lda":
            args = dict(D=2000, V=500, K=10, len=50, seed=0)
            for k in list(kw):
                if k not in args:
                    raise ConfigError(f"generate: unknown key {k!r}")
                args[k] = int(kw.pop(k))
            corpus, _ = datamod.gen_lda_synthetic(args["D"], args["V"], args["K"], args["len"],
                                                  args["seed"])
            return corpus
    except ValueError as exc:
        raise ConfigError(f"generate: {exc}") from None
    except ContractError as exc:
        raise ConfigError(f"generate: {exc}") from None
    raise ConfigError(f"generate: unknown generator {kind!r}")


def load_data(cfg: RunConfig):
    if cfg.generate is not None:
        return generate_data(cfg.generate)
    try:
        if cfg.model in ("gmm", "dpgmm"):
            fmt = cfg.format or "csv"
            if fmt not in ("csv", "csv-header"):
                raise ConfigError(f"format: {fmt!r} is not a feature-matrix format")
            feats = datamod.parse_numeric_csv(cfg.data, skip_header=fmt == "csv-header")
            return feats.standardized() if cfg.standardize else feats
        if cfg.model == "pmf":
            fmt = cfg.format or "dat"
            if fmt not in ("dat", "csv"):
                raise ConfigError(f"format: {fmt!r} is not a ratings format")
            return datamod.parse_movielens(cfg.data, fmt)
        return datamod.parse_bow(cfg.data, cfg.vocab)
    except ContractError as exc:
        raise DataError(f"{cfg.data}: {exc}") from None
    except OSError as exc:
        raise DataError(f"{cfg.data}: {exc.strerror or exc}") from None


def build_model(cfg: RunConfig, data):
    K = cfg.K or DEFAULT_K.get(cfg.model)
    if cfg.model == "gmm":
        return GaussianMixture.from_data(data, K)
    if cfg.model == "dpgmm":
        return GaussianMixture.from_data(data, K, dp_mass=cfg.mass)
    if cfg.model == "pmf":
        return MatrixFactorization.from_data(data, d=cfg.d, noise=cfg.noise)
    return LDA.from_data(data, K)


def split_heldout(cfg: RunConfig, corpus):
    if not cfg.heldout:
        return corpus, None
    D = len(corpus)
    if cfg.heldout >= D:
        raise ConfigError(f"heldout: {cfg.heldout} leaves no training documents (D={D})")
    return corpus.subset(np.arange(D - cfg.heldout)), corpus.subset(np.arange(D - cfg.heldout, D))


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    trace: ElboTrace
    state: object
    model: object
    config: RunConfig
    N: int = 0


def run(cfg: RunConfig, data=None, write: bool = True) -> RunResult:
    """Execute one configured run; writes config, trace and snapshot under ``cfg.out``."""
    validate(cfg)
    if data is None:
        data = load_data(cfg)
    train, heldout = split_heldout(cfg, data) if cfg.model == "lda" else (data, None)
    model = build_model(cfg, train)
    N = model.n_data(train)
    _check_against_data(cfg, N)
    evaluate = None
    if heldout is not None:
        evaluate = lambda g: model.heldout_objective(heldout, g)  # noqa: E731
    out = Path(cfg.out) if (write and cfg.out) else None
    writer = None
    trace = ElboTrace()
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        resolved = replace(cfg, batch_size=N if cfg.algo == "batch" or cfg.batch_size is None
                           else cfg.batch_size)
        (out / "config.txt").write_text(resolved.to_text() + f"n_data={N}\n")
        writer = TraceWriter(out / "trace.csv")

    def on_row(row):
        trace.append(row)
        if writer is not None:
            writer(row)

    try:
        _, state = fit(model, train, cfg.settings(), evaluate=evaluate, on_row=on_row)
    finally:
        if writer is not None:
            writer.close()
    if out is not None:
        save_snapshot(out / "snapshot.txt", model.name, state.globals)
    return RunResult(trace, state, model, cfg, N)


def parse_seeds(text: str) -> list[int]:
    """``"0-9"`` or ``"0,3,5"``."""
    out = []
    try:
        for part in filter(None, str(text).split(",")):
            lo, sep, hi = part.partition("-")
            out.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
    except ValueError:
        raise ConfigError(f"seeds: cannot parse {text!r}") from None
    if not out:
        raise ConfigError("seeds: empty seed list")
    return out


@dataclass
class Comparison:
    labels: list[str]
    iterations: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    finals: np.ndarray
    wins: np.ndarray = field(default=None)


def compare(configs: list[RunConfig], seeds, data=None) -> Comparison:
    """Run every (config, seed) pair and summarize ELBO curves and final-value wins.

    All configs at the same seed share their batch and noise streams.  A
    config wins a seed when its final value is strictly greater than every
    other config's.
    """
    if len(configs) < 2:
        raise ConfigError("configs: compare needs at least two configurations")
    labels = [c.label or f"config{i}" for i, c in enumerate(configs)]
    if len(set(labels)) != len(labels):
        raise ConfigError("label: configuration labels must be distinct")
    for c in configs:
        validate(c)
    if data is None:
        data = load_data(configs[0])
    curves = {}
    finals = np.empty((len(configs), len(seeds)))
    iterations = None
    for i, c in enumerate(configs):
        for j, seed in enumerate(seeds):
            res = run(replace(c, seed=seed, out=None), data=data, write=False)
            its = res.trace.column("iteration")
            if iterations is None:
                iterations = its
            elif not np.array_equal(its, iterations):
                raise ConfigError("eval_every/iters: configs must evaluate at the same iterations")
            curves[i, j] = res.trace.column("elbo")
            finals[i, j] = curves[i, j][-1]
    stack = np.array([[curves[i, j] for j in range(len(seeds))] for i in range(len(configs))])
    sd = stack.std(axis=1, ddof=1) if len(seeds) > 1 else np.zeros((stack.shape[0], stack.shape[2]))
    wins = np.zeros(len(configs), dtype=int)
    for j in range(len(seeds)):
        col = finals[:, j]
        best = np.argmax(col)
        if np.sum(col == col[best]) == 1:
            wins[best] += 1
    return Comparison(labels, iterations, stack.mean(axis=1), sd, finals, wins)


def write_comparison(cmp: Comparison, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cols = ["iteration"] + [f"{lab}_{s}" for lab in cmp.labels for s in ("mean", "sd")]
    rows = []
    for t, it in enumerate(cmp.iterations):
        row = [int(it)]
        for i in range(len(cmp.labels)):
            row += [float(cmp.mean[i, t]), float(cmp.sd[i, t])]
        rows.append(row)
    emit_csv(rows, out / "summary.csv", columns=cols)
    wins = [[lab, float(cmp.finals[i].mean()), int(cmp.wins[i])] for i, lab in enumerate(cmp.labels)]
    emit_csv(wins, out / "wins.csv", columns=["config", "final_mean", "wins"])


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--data", help="input path")
    p.add_argument("--format", help="csv | csv-header | dat | bow")
    p.add_argument("--vocab", help="vocabulary file for bag-of-words input")
    p.add_argument("--generate", help="synthetic data, e.g. gmm:n=250,seed=0")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--m", help="effective batch size: <int> or ramp:<slope>")
    p.add_argument("--rho", help="step size: const:<v> or power:<tau0>,<kappa>")
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--K", type=int, help="number of components or topics")
    p.add_argument("--d", type=int, help="factor dimension (pmf)")
    p.add_argument("--mass", type=float, help="DP concentration (dpgmm)")
    p.add_argument("--noise", choices=("per-rating", "per-factor"), help="pmf noise grouping")
    p.add_argument("--heldout", type=int, help="held-out documents (lda)")
    p.add_argument("--standardize", help="standardize feature columns of --data input (yes/no)")


_FIELD_NAMES = [f.name for f in fields(RunConfig)]


def _config_from_args(args, model: str) -> RunConfig:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {k: getattr(args, k, None) for k in _FIELD_NAMES if k != "model"}
    overrides["model"] = model
    return make_config(file_values, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sviplus", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gmm", "dpgmm", "pmf", "lda"):
        _common(sub.add_parser(f"fit-{name}", help=f"fit the {name} model"))
    p = sub.add_parser("diagnose-noise", help="Gaussianity of SVI+ gradients versus tau")
    _common(p)
    p.add_argument("--model", dest="diag_model", choices=MODELS, default="gmm")
    p.add_argument("--M", dest="effective", type=int, default=25)
    p.add_argument("--taus", default="1,2,4,8")
    p.add_argument("--replicates", type=int, default=2000)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--warmup", type=int, default=5, help="batch sweeps before freezing the state")
    p = sub.add_parser("occupancy", help="size-sorted cluster occupancy over seeds")
    _common(p)
    p.add_argument("--seeds", default="0-9")
    p.add_argument("--threshold", type=float, default=0.01)
    p = sub.add_parser("compare", help="run several configs over shared seeds")
    p.add_argument("configs", nargs="+", help="config files (label defaults to file stem)")
    p.add_argument("--seeds", default="0-9")
    p.add_argument("--out", required=True)
    return parser


def _cmd_fit(args, model: str) -> int:
    cfg = _config_from_args(args, model)
    res = run(cfg)
    last = res.trace.rows[-1]
    print(f"{cfg.model} {cfg.algo}: iteration {last.iteration} objective {last.elbo!r}")
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    cfg = _config_from_args(args, args.diag_model)
    data = load_data(cfg)
    model = build_model(cfg, data)
    warm = replace(cfg, algo="batch", iters=max(1, args.warmup), eval_every=max(1, args.warmup))
    _, state = fit(model, data, warm.settings())
    taus = [int(x) for x in args.taus.split(",")]
    rows = diagnostics.theorem1_trend(model, data, state, args.effective, taus, args.replicates,
                                      rng=cfg.seed, repeats=args.repeats)
    for r in rows:
        print(f"tau={r.tau} |S|={r.batch_size} max_ks={r.max_ks:.5f} energy={r.energy:.5f}")
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        diagnostics.write_trend_csv(rows, Path(cfg.out) / "trend.csv")
    return EXIT_OK


def _cmd_occupancy(args) -> int:
    cfg = _config_from_args(args, "dpgmm")
    data = load_data(cfg)
    states = []
    model = None
    for seed in parse_seeds(args.seeds):
        res = run(replace(cfg, seed=seed, out=None), data=data, write=False)
        states.append(res.state)
        model = res.model
    occ = diagnostics.cluster_occupancy(model, states, data)
    counts = [diagnostics.effective_cluster_count(s, args.threshold) for s in occ.shares]
    print(f"effective clusters per run: {counts}; median {float(np.median(counts))}")
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        diagnostics.write_occupancy_csv(occ, Path(cfg.out) / "occupancy.csv")
        with open(Path(cfg.out) / "counts.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "effective_clusters"])
            w.writerows(zip(parse_seeds(args.seeds), counts))
    return EXIT_OK


def _cmd_compare(args) -> int:
    configs = []
    for path in args.configs:
        values = read_config_file(path)
        values.setdefault("label", Path(path).stem)
        configs.append(make_config(values))
    cmp = compare(configs, parse_seeds(args.seeds))
    write_comparison(cmp, Path(args.out))
    for lab, f, w in zip(cmp.labels, cmp.finals.mean(axis=1), cmp.wins):
        print(f"{lab}: mean final {float(f)!r}, wins {w}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command.startswith("fit-"):
            return _cmd_fit(args, args.command[4:])
        if args.command == "diagnose-noise":
            return _cmd_diagnose(args)
        if args.command == "occupancy":
            return _cmd_occupancy(args)
        return _cmd_compare(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SviError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
