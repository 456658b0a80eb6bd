"""Command-line front end.

Every command writes one CSV or JSON file whose header records the full parameter set and
the tool version. Settings may come from a plain ``key = value`` file given with
``--config``; flags on the command line take precedence.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
VOLATILE_PREFIX = "# volatile "


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


# ----------------------------------------------------------------------------- k paths


def _labels() -> dict[str, complex]:
    from .lattice import ETA1, special_points

    return {"G": 0j, "K": special_points().k0, "M": ETA1 / 2, "X": 0.5j}


def kpath_parse(spec: str) -> list[complex]:
    """Points spaced evenly by arc length along a polyline.

    ``spec`` is ``LABELS:count`` with labels from G, K, M, X, or ``re,im;re,im;...:count``.
    """
    body, sep, count_text = spec.rpartition(":")
    if not sep:
        raise ConfigError(f"k path {spec!r} lacks ':count'")
    try:
        count = int(count_text)
    except ValueError:
        raise ConfigError(f"k path count {count_text!r} is not an integer") from None
    if count < 1:
        raise ConfigError("k path count must be positive")
    if ";" in body or "," in body:
        try:
            vertices = [complex(float(a), float(b)) for a, b in (p.split(",") for p in body.split(";"))]
        except ValueError:
            raise ConfigError(f"malformed explicit k path {body!r}") from None
    else:
        table = _labels()
        unknown = [c for c in body if c not in table]
        if unknown or not body:
            raise ConfigError(f"unknown k label(s) {unknown or body!r}; use G, K, M, X")
        vertices = [table[c] for c in body]
    if count == 1 or len(vertices) == 1:
        return [vertices[0]] * count if len(vertices) == 1 else [vertices[0]]
    seg = np.abs(np.diff(vertices))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    out = []
    for t in np.linspace(0.0, cum[-1], count):
        i = min(int(np.searchsorted(cum, t, side="right")) - 1, len(seg) - 1)
        frac = 0.0 if seg[i] == 0 else (t - cum[i]) / seg[i]
        out.append(complex(vertices[i] + frac * (vertices[i + 1] - vertices[i])))
    return out


# ----------------------------------------------------------------------------- parsing


def _pair(text: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two integers 'a,b', got {text!r}") from None
    return a, b


def _complex(text: str) -> complex:
    text = text.strip()
    try:
        if "," in text:
            a, b = text.split(",")
            return complex(float(a), float(b))
        return complex(text.replace(" ", "").replace("i", "j"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a complex number: {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="magbm", description="Magnetic Bistritzer-MacDonald numerics")
    top.add_argument("--version", action="version", version=f"magbm {__version__}")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_default):
        p.add_argument("--config", type=Path, help="file of 'key = value' lines")
        p.add_argument("--out", type=Path, default=Path(out_default))
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (default: MMS_THREADS or the number of cores)")

    def flux_args(p):
        p.add_argument("--flux", type=int, default=0, help="flux quanta p through the magnetic cell")
        p.add_argument("--lambda", dest="lam", type=_pair, default=(1, 1), help="cell scaling 'l1,l2'")
        p.add_argument("--aper", type=Path, help="periodic vector potential modes file")

    p = sub.add_parser("bands", help="band structure along a k path")
    common(p, "bands.csv")
    flux_args(p)
    p.add_argument("--model", choices=["chiral", "antichiral", "full"], default="chiral")
    p.add_argument("--alpha0", type=float, default=0.0)
    p.add_argument("--alpha1", type=float, default=0.0)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--backend", choices=["pw", "fd", "landau"], help="default: fd with a field, pw without")
    p.add_argument("--grid", type=int, default=None, help="truncation: grid side, momentum radius or top level")
    p.add_argument("--kpath", default="GKMG:30")
    p.add_argument("--nbands", type=int, default=4)
    p.add_argument("--format", choices=["csv", "json"], default="csv")

    p = sub.add_parser("magic", help="magic angles from the Birman-Schwinger spectrum")
    common(p, "magic.json")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--trunc", type=int, default=16)
    p.add_argument("--k", type=_complex, default=0.5)
    p.add_argument("--aper", type=Path)
    p.add_argument("--no-polish", action="store_true")

    p = sub.add_parser("zeromode", help="lowest-level kernel states and their zeros")
    common(p, "zeromode.json")
    p.add_argument("--flux", type=int, default=1)
    p.add_argument("--lambda", dest="lam", type=_pair, default=(1, 1))
    p.add_argument("--k", type=_complex, default=0.3 + 0.2j)
    p.add_argument("--grid", type=int, default=96)

    p = sub.add_parser("chern", help="Chern number of the zero-energy pair")
    common(p, "chern.json")
    p.add_argument("--method", choices=["curvature", "streda"], default="curvature")
    p.add_argument("--alpha1", type=float, default=0.0)
    p.add_argument("--flux", type=int, default=1)
    p.add_argument("--lambda", dest="lam", type=_pair, default=(1, 1))
    p.add_argument("--M", type=int, default=12, help="k grid side")
    p.add_argument("--nmax", type=int, default=20)
    p.add_argument("--streda-lambdas", type=str, default="1,2;1,3",
                   help="two cell scalings for the density derivative")
    p.add_argument("--operator", choices=["DstarD", "DDstar"], default="DstarD")
    p.add_argument("--window", type=float, default=1e-2)

    p = sub.add_parser("squeeze", help="exponential squeezing at small twist")
    common(p, "squeeze.json")
    p.add_argument("--thetas", type=_floats, default=[0.10, 0.08, 0.06, 0.05, 0.04])
    p.add_argument("--k", type=_complex, default=0.5)
    p.add_argument("--c2", type=float, default=1.5)
    p.add_argument("--n-factor", type=float, default=6.0)

    p = sub.add_parser("histogram", help="eigenvalue histogram of the semiclassical operator")
    common(p, "histogram.csv")
    p.add_argument("--h", type=float, default=0.01)
    p.add_argument("--k", type=_complex, default=0.5)
    p.add_argument("--bins", type=int, default=200)
    p.add_argument("--window", type=float, default=None)
    p.add_argument("--alpha1", type=float, default=1.0)
    p.add_argument("--scaled-axis", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("check", help="run the invariant suite")
    common(p, "check.json")
    p.add_argument("--fast", action="store_true", help="skip checks marked slow")
    p.add_argument("--module", default=None, help="only checks of this module")
    return top


def read_config(path: Path) -> list[tuple[str, str]]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    items = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        items.append((key.strip(), value.strip()))
    return items


def _config_argv(sub: argparse.ArgumentParser, items) -> list[str]:
    """Translate config entries into flags placed before the command-line ones."""
    options = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                options[opt[2:].replace("-", "_")] = (opt, action)
    argv = []
    for key, value in items:
        name = key.replace("-", "_")
        if name in ("config", "help") or name not in options:
            raise ConfigError(f"unknown config key {key!r}")
        opt, action = options[name]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append(opt)
            elif value.lower() not in ("0", "false", "no", "off"):
                raise ConfigError(f"config key {key!r} expects a boolean")
        else:
            argv.append(f"{opt}={value}")
    return argv


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    cfg_argv = _config_argv(sub, read_config(args.config))
    return parser.parse_args([args.command, *cfg_argv, *argv[argv.index(args.command) + 1:]])


def thread_count(args) -> int:
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("MMS_THREADS"):
        try:
            n = int(os.environ["MMS_THREADS"])
        except ValueError:
            raise ConfigError("MMS_THREADS must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("thread count must be positive")
    return n


# ----------------------------------------------------------------------------- output


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, np.generic):
        return value.item()
    return value


def run_metadata(args) -> dict:
    params = {k: _jsonable(v) for k, v in sorted(vars(args).items())
              if k not in ("out", "config", "threads")}
    return {"tool": "magbm", "version": __version__, "command": args.command, "params": params}


def _run_date() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
           else _dt.datetime.now(_dt.timezone.utc))
    return now.replace(microsecond=0).isoformat()


def render_csv(meta: dict, body: str) -> str:
    head = [f"# {key}: {json.dumps(meta[key], sort_keys=True)}" for key in sorted(meta)]
    head.append(f"{VOLATILE_PREFIX}date: {_run_date()}")
    return "\n".join(head) + "\n" + body


def render_json(meta: dict, payload: dict) -> str:
    return json.dumps({"meta": meta, **payload}, indent=2, sort_keys=True) + "\n"


def reproducible_digest(path) -> str:
    """SHA-256 of a written file with volatile comment lines left out."""
    lines = Path(path).read_text().splitlines(keepends=True)
    kept = "".join(line for line in lines if not line.startswith(VOLATILE_PREFIX))
    return hashlib.sha256(kept.encode()).hexdigest()


def write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".partial")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(text)
        tmp.replace(path)
    finally:
        tmp.unlink(missing_ok=True)


# ----------------------------------------------------------------------------- commands


def _potential(args, B: float = 0.0):
    from .potentials import MagneticPotential, load_per_coeffs

    coeffs = ()
    if getattr(args, "aper", None) is not None:
        try:
            coeffs = load_per_coeffs(args.aper)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load periodic potential: {exc}") from None
    return MagneticPotential(B, coeffs)


def _flux(args):
    from .lattice import flux_spec, make_lattice

    try:
        return flux_spec(args.flux, make_lattice(args.lam))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_bands(args, workers):
    from . import operators, spectra
    from .lattice import make_lattice

    lattice = make_lattice(args.lam)
    if args.flux < 0:
        raise ConfigError("flux must be non-negative")
    B = _flux(args).B if args.flux else 0.0
    A = _potential(args, B)
    backend = args.backend or ("fd" if args.flux else "pw")
    if backend == "pw" and args.flux:
        raise ConfigError("plane waves need zero constant field; use --backend fd or landau")
    if backend == "landau" and not args.flux:
        raise ConfigError("the Landau-level backend needs --flux >= 1")
    builders = {"pw": (operators.plane_wave, 8), "fd": (operators.finite_difference, 96),
                "landau": (operators.landau_levels, 40)}
    build, default_size = builders[backend]
    try:
        basis = build(args.grid or default_size, lattice)
    except operators.AssemblyError as exc:
        raise ConfigError(str(exc)) from None
    params = spectra.ModelParams(args.alpha0, args.alpha1, args.theta, A)
    model = {"chiral": "Chiral", "antichiral": "AntiChiral", "full": "Full"}[args.model]
    bands = spectra.band_structure(model, params, kpath_parse(args.kpath), basis, args.nbands, workers)
    meta = run_metadata(args) | {"backend": bands.backend}
    if args.format == "csv":
        return render_csv(meta, bands.to_csv())
    rows = [{"k": [k.real, k.imag], "E": list(map(float, e))} for k, e in zip(bands.kpath, bands.energies)]
    return render_json(meta, {"bands": rows})


def cmd_magic(args, workers):
    from . import magic

    A = _potential(args)
    try:
        found = magic.magic_angles(args.radius, args.trunc, args.k, A if A.per_coeffs else None,
                                   polish=not args.no_polish)
    except magic.TruncationError as exc:
        raise ConfigError(str(exc)) from None
    return render_json(run_metadata(args), json.loads(found.to_json()))


def cmd_zeromode(args, workers):
    from . import zero_modes

    flux = _flux(args)
    kb = zero_modes.kernel_a(flux, args.k, n=args.grid)
    states = []
    for u, res, berr in zip(kb.states, kb.residuals, kb.boundary_errors):
        zeros, total = zero_modes.zero_locate(u)
        states.append({"residual": res, "boundary_error": berr, "winding": total,
                       "zeros": [{"z": [z.position.real, z.position.imag], "mult": z.multiplicity}
                                 for z in zeros]})
    if not kb.certified():
        raise NumericalFailure(f"kernel residual above {kb.tolerance}: {max(kb.residuals):.3g}")
    return render_json(run_metadata(args), {"dim": kb.dim, "states": states})


def cmd_chern(args, workers):
    from . import chern
    from .lattice import flux_spec, make_lattice

    if args.method == "curvature":
        fam = chern.build_projector_family("chiral", args.alpha1, _flux(args), M=args.M, nmax=args.nmax)
        result = chern.chern_curvature(fam)
    else:
        try:
            lams = [_pair(t) for t in args.streda_lambdas.split(";")]
        except argparse.ArgumentTypeError as exc:
            raise ConfigError(str(exc)) from None
        if len(lams) != 2:
            raise ConfigError("--streda-lambdas needs two cell scalings")
        pair = [flux_spec(args.flux, make_lattice(l)) for l in lams]
        result = chern.chern_streda(args.alpha1, pair, args.operator, args.window)
    if not result.integral:
        raise NumericalFailure(f"raw Chern sum {result.raw_curvature_sum:.4f} is not near an integer")
    return render_json(run_metadata(args), {"result": json.loads(result.to_json())})


def cmd_squeeze(args, workers):
    from . import spectra

    try:
        rep = spectra.squeezing_experiment(args.thetas, args.k, c2=args.c2, n_factor=args.n_factor,
                                           workers=workers)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    payload = {"theta": rep.theta_list, "band_maxima": rep.band_maxima, "group_sizes": rep.group_sizes,
               "fit": {"slope": rep.fit_slope, "intercept": rep.fit_intercept, "r2": rep.fit_r2},
               "counts": rep.counts, "count_ratio": rep.count_ratio, "c2_estimate": rep.c2_estimate}
    return render_json(run_metadata(args), payload)


def cmd_histogram(args, workers):
    from . import spectra

    try:
        hist = spectra.eigen_histogram(args.h, args.k, args.bins, args.window, args.alpha1,
                                       args.scaled_axis, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    meta = run_metadata(args) | {"dimension": hist.dimension, "method": hist.method}
    return render_csv(meta, hist.to_csv())


def cmd_check(args, workers):
    from . import invariants

    results = invariants.run_checks(include_slow=not args.fast, select=args.module)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  [{r.module}] {r.name}: {r.detail} ({r.seconds:.1f} s)",
              flush=True)
    payload = {"checks": [{"module": r.module, "name": r.name, "passed": r.passed, "detail": r.detail}
                          for r in results]}
    text = render_json(run_metadata(args), payload)
    failed = [r.name for r in results if not r.passed]
    return text, failed


COMMANDS = {
    "bands": cmd_bands,
    "magic": cmd_magic,
    "zeromode": cmd_zeromode,
    "chern": cmd_chern,
    "squeeze": cmd_squeeze,
    "histogram": cmd_histogram,
    "check": cmd_check,
}


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        workers = thread_count(args)
        result = COMMANDS[args.command](args, workers)
        failed = []
        if isinstance(result, tuple):
            result, failed = result
        write_atomic(args.out, result)
        if failed:
            return _fail("invariant", f"{len(failed)} check(s) failed: {', '.join(failed)}", EXIT_NUMERIC)
        return EXIT_OK
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        return _fail("numerical", f"{type(exc).__name__}: {exc}", EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
