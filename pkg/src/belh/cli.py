"""Command-line driver: ``belh <subcommand> --config FILE --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, diagnostics as dg, dynamics as dy, uniaxial as ux, verify
from .experiments import eps_sweep, sweep_ratio, tail_summary

log = logging.getLogger("belh")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4

SUBCOMMANDS = ("verify", "run", "uniaxial", "compare-uniaxial", "tail", "eps-sweep")


def fmt(x):
    return "%.17g" % x


def _now():
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    subcommand: str
    config: str | None
    config_source: str | None
    seed: int | None
    version: str
    out_dir: str
    started: str
    finished: str | None = None
    status: str | None = None
    extra: dict = field(default_factory=dict)

    def write(self, path):
        tmp = Path(str(path) + ".tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)

    @classmethod
    def read(cls, path):
        return cls(**json.loads(Path(path).read_text()))


def packaged_configs():
    root = resources.files("belh") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def resolve_config(name):
    """A path on disk, or the stem of a packaged config."""
    p = Path(name)
    if p.exists():
        return p
    res = resources.files("belh") / "configs" / f"{p.stem}.ini"
    if not p.suffix or p.parent == Path("."):
        if res.is_file():
            return res
    raise cfgmod.ConfigError(
        f"config {name!r} not found (packaged configs: {', '.join(packaged_configs())})")


def threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("BELH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise cfgmod.ConfigError(f"BELH_THREADS must be an integer, got {env!r}") from None
    return 1


class _CsvSink:
    """Append-only CSV writer flushed after every row."""

    def __init__(self, path, header):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(header)
        self.fh.flush()

    def row(self, values):
        self.w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in values])
        self.fh.flush()

    def close(self):
        self.fh.close()


# ---------------------------------------------------------------------------
# subcommands

def cmd_verify(args, out: Path, manifest: RunManifest):
    xi = tuple(args.xi) if args.xi else verify.DEFAULT_XI
    results = verify.run_suite(seed=args.seed or 0, xi_values=xi, mutate=args.mutate,
                               samples=args.samples)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    report = {"passed": not failed, "failed": failed,
              "residuals": {r.name: r.residual for r in results},
              "mutation": args.mutate}
    (out / "verify.json").write_text(json.dumps(report, indent=2) + "\n")
    if failed:
        print("FAILED: " + json.dumps(failed))
        return EXIT_VERIFY
    return EXIT_OK


def _run_series(scfg: dy.SolverConfig, out: Path, args, name="diagnostics.csv", quiet=False):
    sink = _CsvSink(out / name, dg.csv_header(scfg.tail_radii))
    ck = out / "checkpoint.bin" if args.checkpoint_every else None
    try:
        state, records = dy.run(scfg, on_record=lambda r: sink.row(dg.csv_row(r)),
                                checkpoint_every=args.checkpoint_every, checkpoint_path=ck)
    finally:
        sink.close()
    if ck is not None:
        dy.write_checkpoint(ck, state, scfg.params)
    if not quiet:
        r = dg.physical_energy_residual(records)
        print(f"t={state.t:.6g} energy={dg.total_energy(records)[-1]:.10g} "
              f"max|r_energy|={np.abs(r).max():.3e} records={len(records)}")
    return state, records


def cmd_run(args, out, manifest):
    pc = cfgmod.load(resolve_config(args.config), "run")
    scfg = cfgmod.solver_config(pc, seed=args.seed, workers=threads(args))
    manifest.seed = scfg.initial.seed
    _run_series(scfg, out, args)
    return EXIT_OK


def _scalar_csv(rep: ux.BlowupReport, path):
    sink = _CsvSink(path, ["time", "max_q", "moment", "dt", "comparison"])
    comp = rep.comparison if rep.comparison is not None else np.full(rep.times.shape, np.nan)
    for (t, q, m, d), y in zip(rep.csv_rows(), comp):
        sink.row([float(t), float(q), float(m), float(d), float(y)])
    sink.close()


def _summary(rep: ux.BlowupReport):
    return {"blowup": rep.blowup, "blowup_time": rep.blowup_time, "threshold": rep.threshold,
            "threshold_time": rep.threshold_time, "growth_exponent": rep.growth_exponent,
            "halvings": rep.halvings, "lambda1": rep.lambda1, "final_max_q": float(rep.max_q[-1]),
            "dominates_comparison": rep.dominates_comparison(),
            "comparison_valid": rep.comparison_valid, "nonnegative": rep.nonnegative}


def cmd_uniaxial(args, out, manifest):
    pc = cfgmod.load(resolve_config(args.config), "uniaxial")
    base = cfgmod.scalar_run(pc)
    sweep = pc.section("sweep")
    grid = [sweep.get(k, (getattr(base, k),)) for k in ("a", "b", "c")]
    rows = []
    sink = _CsvSink(out / "summary.csv", ["a", "b", "c", "blowup", "blowup_time", "threshold",
                                          "threshold_time", "growth_exponent", "final_max_q"])
    for a, b, c in itertools.product(*grid):
        run = cfgmod.scalar_run(pc, a=a, b=b, c=c)
        rep = ux.run_scalar(run)
        tag = f"a{a:g}_b{b:g}_c{c:g}"
        _scalar_csv(rep, out / f"scalar_{tag}.csv")
        s = _summary(rep)
        rows.append(dict(a=a, b=b, c=c, **s))
        nan = float("nan")
        sink.row([a, b, c, int(rep.blowup), rep.blowup_time if rep.blowup else nan,
                  rep.threshold if rep.threshold is not None else nan,
                  rep.threshold_time if rep.threshold_time is not None else nan,
                  rep.growth_exponent if rep.growth_exponent is not None else nan,
                  float(rep.max_q[-1])])
        when = f"blow-up at t={rep.blowup_time:.6g}" if rep.blowup else "bounded"
        print(f"a={a:g} b={b:g} c={c:g}: {when}, max|q|={rep.max_q[-1]:.4g}, "
              f"threshold={s['threshold']}, growth exponent={s['growth_exponent']}")
    sink.close()
    manifest.extra["runs"] = rows
    return EXIT_OK


def cmd_compare_uniaxial(args, out, manifest):
    pc = cfgmod.load(resolve_config(args.config), "compare-uniaxial")
    run = cfgmod.scalar_run(pc, adaptive=False)
    tsec = pc.section("tensor")
    n = tsec.get("n", (64, 8, 8))
    n = tuple(n) * 3 if len(n) == 1 else tuple(n)
    tol, utol = tsec.get("tol", 1e-8), tsec.get("uniaxial_tol", 1e-10)
    sink = _CsvSink(out / "compare.csv", ["time", "max_diff", "max_nonuniaxial"])
    try:
        res = ux.compare_uniaxial(run, n=n, every=tsec.get("every", 10), workers=threads(args),
                                  on_sample=lambda t, d, e: sink.row([float(t), d, e]))
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc)) from None
    finally:
        sink.close()
    ok = res.passed(tol, utol)
    print(f"max |q_scalar - q_tensor| = {res.max_diff.max():.3e} (tol {tol:g}); "
          f"max non-uniaxial part = {res.max_nonuniaxial.max():.3e} (tol {utol:g})")
    manifest.extra.update(max_diff=float(res.max_diff.max()),
                          max_nonuniaxial=float(res.max_nonuniaxial.max()), passed=ok)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_tail(args, out, manifest):
    pc = cfgmod.load(resolve_config(args.config), "tail")
    scfg = cfgmod.solver_config(pc, seed=args.seed, workers=threads(args))
    if not scfg.tail_radii:
        raise cfgmod.ConfigError("tail needs [diagnostics] tail_radii")
    manifest.seed = scfg.initial.seed
    _, records = _run_series(scfg, out, args)
    radii = scfg.tail_radii
    summary = tail_summary(records, radii)
    with open(out / "tail_summary.csv", "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["R", "sup_Y", "cumulative_flux", "max_abs_local_residual"])
        for row in summary["rows"]:
            w.writerow([fmt(v) for v in row])
    print(f"sup Y_R monotone in R: {summary['Y_monotone']}; "
          f"|cumulative flux| decreasing in R: {summary['flux_decreasing']}")
    for R, y, f, r in summary["rows"]:
        print(f"R={R:g}: sup Y={y:.6g} flux={f:.3e} local residual={r:.3e}")
    manifest.extra.update(Y_monotone=summary["Y_monotone"],
                          flux_decreasing=summary["flux_decreasing"])
    return EXIT_OK


def cmd_eps_sweep(args, out, manifest):
    pc = cfgmod.load(resolve_config(args.config), "eps-sweep")
    scfg = cfgmod.solver_config(pc, seed=args.seed, workers=threads(args))
    eps_values = pc.section("sweep").get("eps")
    if not eps_values:
        raise cfgmod.ConfigError("eps-sweep needs [sweep] eps")
    manifest.seed = scfg.initial.seed
    sink = _CsvSink(out / "eps_sweep.csv", ["eps", "sqrt_eps_lapu_L2L2", "trapezoid_value",
                                            "max_abs_energy_residual"])

    def report(pt):
        sink.row([pt.eps, pt.value, pt.value_trapezoid, pt.max_energy_residual])
        print(f"eps={pt.eps:g}: sqrt(eps)*||lap u||_L2L2 = {pt.value:.6g}")
    try:
        res = eps_sweep(scfg, eps_values, report)
    finally:
        sink.close()
    ratio = sweep_ratio(res)
    print(f"max/min across sweep = {ratio:.4g}")
    manifest.extra["ratio"] = ratio
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "run": cmd_run, "uniaxial": cmd_uniaxial,
            "compare-uniaxial": cmd_compare_uniaxial, "tail": cmd_tail,
            "eps-sweep": cmd_eps_sweep}


def build_parser():
    ap = argparse.ArgumentParser(prog="belh", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"belh {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "verify",
                        help="INI file or packaged config name")
        sp.add_argument("--out", default=None, help="output directory (default out/<command>)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None,
                        help="FFT worker threads (fallback: BELH_THREADS)")
        sp.add_argument("--checkpoint-every", type=int, default=0, metavar="N",
                        help="write out/checkpoint.bin every N steps")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            sp.add_argument("--mutate", choices=verify.MUTATIONS, default=None,
                            help="inject a known error to check the suite catches it")
            sp.add_argument("--xi", type=float, nargs="+", default=None)
            sp.add_argument("--samples", type=int, default=1_000_000,
                            help="samples for the constant checks")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or Path("out") / args.command)
    text = source = None
    try:
        if args.config:
            src = resolve_config(args.config)
            text, source = src.read_text(), str(src)
        out.mkdir(parents=True, exist_ok=True)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = RunManifest(subcommand=args.command, config=text, config_source=source,
                           seed=args.seed, version=__version__, out_dir=str(out.resolve()),
                           started=_now())
    mpath = out / "manifest.json"
    manifest.write(mpath)
    code = EXIT_OK
    try:
        code = COMMANDS[args.command](args, out, manifest)
        manifest.status = "ok" if code == EXIT_OK else "verification failed"
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        manifest.status, code = f"config error: {exc}", EXIT_CONFIG
    except (dy.NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        manifest.status, code = f"numerical failure: {exc}", EXIT_NUMERIC
    finally:
        manifest.finished = _now()
        manifest.write(mpath)
    return code


if __name__ == "__main__":
    sys.exit(main())
