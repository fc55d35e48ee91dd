"""Command-line entry point: ``thinshell <subcommand> [flags]``.

Every report is deterministic JSON (or CSV) embedding the configuration,
the seed and the package version.  Exit codes: 0 pass, 1 usage, 2
numerical or capability failure, 3 invariant-suite failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import constants as const
from . import coupling, geometry, localization, verify
from . import rng as _rng
from .errors import ConfigurationError, ThinShellError
from .measures import DiscreteMeasure, GridMeasure, Region, discretize_density, family_from_name

SUBCOMMANDS = ("localize", "stopped", "tau", "sigma", "widths", "compare", "verify")
MAX_SEED = 2**64 - 1


def _grid_gaussian(region: Region, bounds, resolution) -> GridMeasure:
    def logf(x):
        return -0.5 * np.einsum("ij,ij->i", x, x) + region.log_indicator(x)

    return discretize_density(logf, bounds, resolution)


def named_measure(name: str) -> DiscreteMeasure | GridMeasure:
    """Initial measures for the localization subcommands, or a JSON file path."""
    if name == "twopoint":
        return DiscreteMeasure.two_point()
    if name == "twopoint-skew":
        return DiscreteMeasure.two_point(weights=(0.3, 0.7))
    if name == "threepoint-2d":
        return DiscreteMeasure(np.array([[-1.2, 0.0], [0.3, 1.0], [0.9, -1.0]]), np.array([0.4, 0.3, 0.3]))
    if name == "fourpoint-2d":
        return DiscreteMeasure(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
                               np.array([0.1, 0.2, 0.3, 0.4]))
    if name == "gaussian-grid":
        return _grid_gaussian(Region(), [(-6.0, 6.0)], 512)
    if name == "interval-grid":
        return _grid_gaussian(Region("box", half_width=1.0), [(-1.0, 1.0)], 256)
    if name == "slab-grid":
        return _grid_gaussian(Region("slab", half_width=0.5, axis=0), [(-0.5, 0.5), (-5.0, 5.0)], (16, 40))
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        return DiscreteMeasure.from_json(json.loads(path.read_text()))
    raise ConfigurationError(f"unknown measure {name!r}")


@dataclass
class RunConfig:
    subcommand: str
    seed: int = 0
    n: int = 2
    N: int = 100_000
    paths: int = 1000
    dt: float = localization.DEFAULT_DT
    theta: float = 1.0
    t: float = 2.0
    family: str = "gaussian"
    body: str = "cube"
    norm: str | None = None
    measure: str = "twopoint"
    threads: int = 1
    out: str | None = None
    format: str = "json"

    def validate(self) -> None:
        problems = []
        if self.subcommand not in SUBCOMMANDS:
            problems.append(f"subcommand: must be one of {', '.join(SUBCOMMANDS)}")
        if not 0 <= self.seed <= MAX_SEED:
            problems.append("seed: must be a 64-bit unsigned integer")
        if self.n < 1:
            problems.append("n: must be >= 1")
        if self.N < 1000:
            problems.append("N: must be >= 1000")
        if self.paths < 1:
            problems.append("paths: must be >= 1")
        if not 0 < self.dt <= localization.MAX_DT:
            problems.append(f"dt: must lie in (0, {localization.MAX_DT}]")
        if not self.theta > 0:
            problems.append("theta: must be > 0")
        if not (self.t > 0 and math.isfinite(self.t)):
            problems.append("t: must be a positive finite time")
        if self.threads < 1:
            problems.append("threads: must be >= 1")
        if self.format not in ("json", "csv"):
            problems.append("format: must be json or csv")
        if problems:
            raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems))

    def echo(self) -> dict:
        # output location and thread count never influence the report
        return {k: v for k, v in asdict(self).items() if k not in ("out", "threads")}


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    kind = _TYPES[key]
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return value


def read_config_file(path: str) -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "t_max":
            key = "t"
        if key not in _TYPES or key == "subcommand":
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thinshell", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value file; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--N", type=int)
        p.add_argument("--paths", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--theta", type=float)
        p.add_argument("--t", "--t-max", dest="t", type=float)
        p.add_argument("--family")
        p.add_argument("--body")
        p.add_argument("--norm")
        p.add_argument("--measure")
        p.add_argument("--threads", type=int)
        p.add_argument("--out")
        p.add_argument("--format", choices=("json", "csv"))
    return parser


def parse_config(argv) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    path = args.pop("config")
    values = read_config_file(path) if path else {}
    values.update({k: v for k, v in args.items() if v is not None})
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# subcommands; each returns (result dict, csv rows or None, passed)


def _localize(cfg: RunConfig):
    mu = named_measure(cfg.measure)
    times = sorted({s for s in (0.5, 1.0, 2.0) if s < cfg.t} | {cfg.t})
    rule = localization.StoppingRule.fixed_horizon(cfg.t)
    traces, rep = localization.batch_run(mu, rule, dt=cfg.dt, path_count=cfg.paths, seed=cfg.seed,
                                         sample_times=times, keep_traces=cfg.paths >= 100)
    result = {"batch": rep.to_json()}
    if cfg.paths >= 100:
        result["decay"] = localization.decay_diagnostic(traces, t_fit=min(2.0, cfg.t)).to_json()
    rows = [["t", "mean_trA", "se_trA", "bound_exp_t_trA0"]]
    rows += [[t, m, s, rep.tr_A0 * math.exp(-t)] for t, m, s in zip(rep.time_grid, rep.mean_trA, rep.se_trA)]
    return result, rows, True


def _stopped(cfg: RunConfig):
    mu = named_measure(cfg.measure)
    rep = localization.stopped_run(mu, cfg.theta, dt=cfg.dt, path_count=cfg.paths, seed=cfg.seed,
                                   t_max=cfg.t if cfg.t > 2.0 else localization.DEFAULT_HORIZON)
    result = {"stopped": rep.to_json()}
    M, QV = coupling.stopped_endpoints(rep)
    passed = True
    if M.shape[0] >= 1000:
        g = _rng.generator(cfg.seed, 1 << 20).standard_normal(M.shape)
        Y, _ = coupling.maurey_extend_batch(M, QV, g)
        conf = coupling.gaussian_conformance(Y, seed=cfg.seed)
        dom = [coupling.convex_dominance_check(M, phi, QV=QV, seed=cfg.seed).to_json()
               for phi in coupling.convex_catalog(M.shape[1])]
        result["conformance"] = conf.to_json()
        result["dominance"] = dom
        passed = conf.passed and all(d["passed"] for d in dom)
    else:
        result["conformance"] = "skipped: needs at least 1000 paths"
    return result, None, passed


def _tau(cfg: RunConfig):
    est = const.estimate_tau(family_from_name(cfg.family, cfg.n), N=cfg.N, seed=cfg.seed)
    return est.to_json(), None, True


def _sigma(cfg: RunConfig):
    est = const.estimate_sigma(family_from_name(cfg.family, cfg.n), N=cfg.N, seed=cfg.seed)
    return est.to_json(), None, True


def _widths(cfg: RunConfig):
    body = geometry.body_from_name(cfg.body, cfg.n)
    M = geometry.mean_width_M(body.gauge, N=cfg.N, seed=cfg.seed, stream=0)
    Ms = geometry.mean_width_Mstar(body.gauge, N=cfg.N, seed=cfg.seed, stream=1)
    result = {"body": body.name, "n": cfg.n, "M": M.to_json(), "Mstar": Ms.to_json(),
              "c_n": geometry.chi_mean(cfg.n), "L_K": geometry.isotropic_constant(body)}
    return result, None, True


def _compare(cfg: RunConfig):
    fam = family_from_name(cfg.family, cfg.n)
    specs = [geometry.norm_from_name(cfg.norm, cfg.n)] if cfg.norm else geometry.norm_catalog(cfg.n)
    tau_hat = const.estimate_tau(fam, N=max(cfg.N, 10_000), seed=cfg.seed, stream=99).tau
    reports = [geometry.compare_norms_experiment(fam, spec, N=cfg.N, seed=cfg.seed, stream=2 * i,
                                                 tau_hat=tau_hat) for i, spec in enumerate(specs)]
    rows = [geometry.CSV_HEADER]
    for r in reports:
        j = r.to_json()
        rows.append([cfg.n, j["family"], j["norm"], j["E_X"]["estimate"], j["E_Gamma"]["estimate"],
                     j["ratio"], j["tau_hat"], j["bound"]])
    return {"reports": [r.to_json() for r in reports]}, rows, True


def _verify(cfg: RunConfig):
    results = verify.run_suite(cfg.seed)
    return {"checks": [r.to_json() for r in results]}, None, all(r.passed for r in results)


HANDLERS = {"localize": _localize, "stopped": _stopped, "tau": _tau, "sigma": _sigma,
            "widths": _widths, "compare": _compare, "verify": _verify}


# --------------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def render(report: dict, rows, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(_plain(report), sort_keys=True, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if rows is None:
        writer.writerow(["key", "value"])
        writer.writerows(_flatten(_plain(report)))
    else:
        writer.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])
    return buf.getvalue()


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _flatten(obj[k], f"{prefix}{k}.")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}{i}.")
    else:
        yield [prefix[:-1], obj]


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def run_subcommand(cfg: RunConfig) -> int:
    previous = _rng.get_threads()
    _rng.set_threads(cfg.threads)
    try:
        result, rows, passed = HANDLERS[cfg.subcommand](cfg)
    finally:
        _rng.set_threads(previous)
    report = {"version": __version__, "subcommand": cfg.subcommand, "seed": cfg.seed,
              "config": cfg.echo(), "result": result, "passed": bool(passed)}
    _emit(render(report, rows, cfg.format), cfg.out)
    if passed:
        return 0
    return 3 if cfg.subcommand == "verify" else 2


def _error_report(exc: Exception, code: int) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code,
                       "version": __version__}, sort_keys=True) + "\n"


def main(argv=None) -> int:
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except ConfigurationError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return 1
    except (OSError, ValueError, TypeError) as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return 1
    try:
        return run_subcommand(cfg)
    except ThinShellError as exc:
        sys.stderr.write(_error_report(exc, exc.exit_code))
        return exc.exit_code
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(_error_report(exc, 2))
        return 2


if __name__ == "__main__":
    sys.exit(main())
