"""Command-line entry point: ``blockhankel <subcommand> --config spec.yaml ...``.

Exit codes: 0 success, 1 invalid configuration, 2 solver non-convergence,
3 I/O failure. Failures print one ``error code=<n> kind=<k> message=<m>``
line on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import container, harness, indeptest
from .equivalents import ConvergenceError, density_from_stieltjes, solve_canonical
from .resolvent import gram_eigs, histogram
from .sampler import draw
from .spectra import EnsembleSpec, SpecError, load_spec

SUBCOMMANDS = ("sample", "solve", "density", "spectrum", "verify-rates", "indep-test")

EXIT_OK, EXIT_SPEC, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    config: str | None = None
    seed: int = 0
    threads: int = 1
    out: str | None = None
    dry_run: bool = False
    z: list[complex] = field(default_factory=list)
    tol: float = 1e-10
    max_iter: int = 10_000
    damping: float = 0.0
    eps: float = 1e-3
    x_min: float | None = None
    x_max: float | None = None
    x_step: float | None = None
    trials: int = 200
    bins: int = 50
    ladder: list[tuple[int, int, int]] = field(default_factory=list)
    statistic: str = "variance"
    test_matrix: str = "identity"
    fmt: str = "bin"
    trial: int = 0
    series: str | None = None
    L: int | None = None
    normalization: str = "per-sample"
    hist_out: str | None = None

    def validate(self) -> None:
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.tol <= 0:
            raise ConfigError("tol must be > 0")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if not 0 <= self.damping < 1:
            raise ConfigError("damping must lie in [0, 1)")
        if not 1e-4 <= self.eps <= 1e-1:
            raise ConfigError("eps must lie in [1e-4, 1e-1]")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.bins < 20:
            raise ConfigError("bins must be >= 20")
        needs_config = self.subcommand != "indep-test" or self.series is None
        if needs_config and self.config is None:
            raise ConfigError(f"{self.subcommand} needs --config")
        if self.subcommand == "indep-test" and self.series is not None and self.L is None:
            raise ConfigError("indep-test on a series needs --L")
        if self.subcommand == "sample" and self.fmt == "bin" and self.out is None:
            raise ConfigError("binary sample output needs --out")
        if self.subcommand == "verify-rates" and self.statistic not in ("variance", "bias"):
            raise ConfigError("statistic must be 'variance' or 'bias'")


def parse_complex(text: str) -> complex:
    try:
        return complex(text.strip().replace(" ", "").replace("i", "j"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a complex number: {text!r}") from None


def parse_ladder(text: str) -> list[tuple[int, int, int]]:
    try:
        out = [tuple(int(v) for v in part.split(",")) for part in text.split(";") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ladder {text!r}; use 'M,L,N;M,L,N'") from None
    if any(len(e) != 3 for e in out):
        raise argparse.ArgumentTypeError("each ladder entry needs three integers M,L,N")
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="ensemble spec (YAML)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", help="output path (stdout when omitted, except binary samples)")
    common.add_argument("--dry-run", action="store_true", help="validate and print the plan only")

    parser = argparse.ArgumentParser(prog="blockhankel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("sample", parents=[common], help="draw one block-Hankel matrix W")
    p.add_argument("--format", dest="fmt", choices=("bin", "csv"), default="bin")
    p.add_argument("--trial", type=int, default=0)

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--tol", type=float, default=1e-10)
    solver.add_argument("--max-iter", type=int, default=10_000)
    solver.add_argument("--damping", type=float, default=0.0)

    p = sub.add_parser("solve", parents=[common, solver], help="solve the canonical equations at points z")
    p.add_argument("--z", type=parse_complex, action="append", default=[], help="evaluation point, e.g. 2j or -1")
    p.add_argument("--z-grid", nargs=4, metavar=("RE_MIN", "RE_MAX", "COUNT", "IM"),
                   help="COUNT equispaced points RE + i*IM")

    p = sub.add_parser("density", parents=[common, solver], help="density of the deterministic equivalent")
    p.add_argument("--x-min", type=float)
    p.add_argument("--x-max", type=float)
    p.add_argument("--x-step", type=float)
    p.add_argument("--eps", type=float, default=1e-3)

    p = sub.add_parser("spectrum", parents=[common], help="eigenvalues of W W^H and their histogram")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--hist-out", help="histogram CSV path (default: <out>.hist.csv)")

    p = sub.add_parser("verify-rates", parents=[common], help="Monte Carlo variance/bias sweeps")
    p.add_argument("--ladder", type=parse_ladder, default=[])
    p.add_argument("--z", type=parse_complex, default=2j)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--statistic", choices=("variance", "bias"), default="variance")
    p.add_argument("--test-matrix", choices=("identity", "random"), default="identity")

    p = sub.add_parser("indep-test", parents=[common], help="log-det independence statistic")
    p.add_argument("--series", help="CSV of a multichannel series (columns = channels)")
    p.add_argument("--L", type=int)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--normalization", choices=("per-sample", "paper-literal"), default="per-sample")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    cfg = RunConfig(**values)
    z = getattr(args, "z", None)
    if isinstance(z, complex):
        cfg.z = [z]
    grid = getattr(args, "z_grid", None)
    if grid:
        lo, hi, count, im = float(grid[0]), float(grid[1]), int(grid[2]), float(grid[3])
        cfg.z = list(cfg.z) + [complex(x, im) for x in np.linspace(lo, hi, count)]
    cfg.validate()
    return cfg


def _emit(cfg: RunConfig, text: str, path: str | None = None) -> None:
    target = path if path is not None else cfg.out
    if target is None:
        sys.stdout.write(text)
    else:
        container.atomic_write(target, text)


def _default_x_grid(spec: EnsembleSpec, cfg: RunConfig) -> np.ndarray:
    grid = indeptest.default_logdet_grid(spec)
    lo = cfg.x_min if cfg.x_min is not None else 0.0
    hi = cfg.x_max if cfg.x_max is not None else float(grid[-1])
    if hi <= lo:
        raise ConfigError("x-max must exceed x-min")
    step = cfg.x_step if cfg.x_step is not None else (hi - lo) / 400
    if step <= 0:
        raise ConfigError("x-step must be positive")
    return lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)


def plan(cfg: RunConfig, spec: EnsembleSpec | None) -> dict:
    out = {k: v for k, v in asdict(cfg).items() if v is not None}
    out["z"] = [[z.real, z.imag] for z in cfg.z]
    if spec is not None:
        out["ensemble"] = {"M": spec.M, "L": spec.L, "N": spec.N, "c_N": spec.c_N,
                           "densities": [d.to_dict() for d in spec.densities]}
    return out


def dispatch(cfg: RunConfig) -> int:
    spec = load_spec(cfg.config) if cfg.config is not None else None
    if cfg.dry_run:
        sys.stdout.write(json.dumps(plan(cfg, spec), sort_keys=True) + "\n")
        return EXIT_OK
    handler = {
        "sample": _run_sample,
        "solve": _run_solve,
        "density": _run_density,
        "spectrum": _run_spectrum,
        "verify-rates": _run_rates,
        "indep-test": _run_indep,
    }[cfg.subcommand]
    handler(cfg, spec)
    return EXIT_OK


def _run_sample(cfg, spec):
    sample = draw(spec, cfg.seed, cfg.trial)
    if cfg.fmt == "bin":
        container.atomic_write(cfg.out, container.encode_matrix(sample.W, spec.M, spec.L, spec.N, cfg.seed))
    else:
        _emit(cfg, container.matrix_to_csv(sample.W))


def _run_solve(cfg, spec):
    zs = cfg.z or [2j]
    rows = []
    for z in zs:
        pair = solve_canonical(spec, z, tol=cfg.tol, max_iter=cfg.max_iter, damping=cfg.damping)
        t = pair.t
        rows.append((z.real, z.imag, t.real, t.imag, pair.iterations, pair.final_residual))
    _emit(cfg, container.csv_text(["re_z", "im_z", "re_t", "im_t", "iterations", "residual"], rows))


def _run_density(cfg, spec):
    xs = _default_x_grid(spec, cfg)
    res = density_from_stieltjes(spec, xs, cfg.eps, tol=cfg.tol)
    if not res.converged.all():
        bad = xs[~res.converged]
        raise ConvergenceError(f"density solve failed at {bad.size} grid points (first x={bad[0]:g})")
    _emit(cfg, container.csv_text(["x", "f"], zip(res.x, res.f)))


def _run_spectrum(cfg, spec):
    sample = gram_eigs(draw(spec, cfg.seed).W, cfg.seed, spec)
    _emit(cfg, container.csv_text(["eigenvalue"], ((v,) for v in sample.eigenvalues)))
    hist = histogram(sample, cfg.bins)
    hist_path = cfg.hist_out or (cfg.out + ".hist.csv" if cfg.out else None)
    rows = ((l, r, int(c), d) for l, r, c, d in hist)
    text = container.csv_text(["bin_left", "bin_right", "count", "density"], rows)
    if hist_path is None:
        sys.stdout.write(text)
    else:
        container.atomic_write(hist_path, text)


def _run_rates(cfg, spec):
    ladder = cfg.ladder or [(spec.M * k, spec.L, spec.N * k) for k in (1, 2, 4)]
    z = cfg.z[0] if cfg.z else 2j
    A = None if cfg.test_matrix == "identity" else "random"
    if cfg.statistic == "variance":
        report = harness.variance_sweep(spec, ladder, z, cfg.trials, cfg.seed, A, cfg.threads)
    else:
        report = harness.bias_sweep(spec, ladder, z, cfg.trials, cfg.seed, A, cfg.threads)
    _emit(cfg, report.to_csv())


def _run_indep(cfg, spec):
    if cfg.series is not None:
        x = container.read_series_csv(cfg.series)
        res = indeptest.run_test_on_series(x, cfg.L, spec, cfg.eps, cfg.normalization)
    else:
        if cfg.L is not None and cfg.L != spec.L:
            raise ConfigError(f"--L {cfg.L} disagrees with the config's L={spec.L}")
        res = indeptest.run_test(spec, cfg.seed, cfg.eps, cfg.normalization)
    row = res.row()
    _emit(cfg, container.csv_text(list(row), [list(row.values())]))


def _fail(code: int, kind: str, exc: BaseException) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    sys.stderr.write(f"error code={code} kind={kind} message={json.dumps(msg)}\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which would read as non-convergence
        return EXIT_OK if exc.code in (0, None) else EXIT_SPEC
    try:
        cfg = config_from_args(args)
        return dispatch(cfg)
    except ConvergenceError as exc:
        return _fail(EXIT_SOLVER, "no-convergence", exc)
    except (SpecError, ConfigError) as exc:
        return _fail(EXIT_SPEC, "invalid-spec", exc)
    except yaml.YAMLError as exc:
        return _fail(EXIT_SPEC, "invalid-spec", exc)
    except OSError as exc:
        return _fail(EXIT_IO, "io", exc)
    except ValueError as exc:
        return _fail(EXIT_SPEC, "invalid-input", exc)


if __name__ == "__main__":
    sys.exit(main())
