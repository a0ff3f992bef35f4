"""Command-line entry point ``coalkit``.

Exit status: 0 on success, 2 on a configuration error, 1 on a runtime failure.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__
from .bgw import BGWSpec, total_progeny_pmf
from .coag import CoagulationError, gelation_diagnostics, integrate
from .coalescent import sample_log, simulate
from .dist import (CompoundPoissonSpec, DistributionError, cpois_pmf, empirical_pmf, parse_law,
                   size_biased, m_star, tv_distance)
from .experiments import (EXPERIMENTS, REGIMES, ConfigError, ExperimentConfig, _jsonable,
                          resolve_seed, run_experiment)
from .exploration import (explore_block, first_step_zeta, neighbour_count, neighbour_tv_bound,
                          zeta_spec)

log = logging.getLogger("coalkit")


class UsageError(Exception):
    """Raised instead of argparse's SystemExit so main() controls the exit code."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


@contextlib.contextmanager
def _output(path: Optional[str]):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _header(fh, meta: Dict[str, Any]) -> None:
    for key, value in meta.items():
        fh.write(f"# {key}: {json.dumps(_jsonable(value))}\n")


def _meta(args, seed, **extra) -> Dict[str, Any]:
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    meta = {"version": __version__, "command": args.command, "seed": seed, "config": config}
    meta.update(extra)
    return meta


def _length_law(text: str):
    try:
        return parse_law(text)
    except DistributionError as exc:
        raise ConfigError(str(exc)) from exc


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    p = _length_law(args.p)
    if not args.until_coalescence and args.horizon is None:
        raise ConfigError("give --horizon or --until-coalescence")
    seed = resolve_seed(args.seed)
    sim = simulate(args.n, p, args.horizon, seed, until_coalescence=args.until_coalescence,
                   skip_trivial=args.skip_trivial)
    obs = sim.observables
    summary = {"events": len(sim.log), "T_singleton": obs.T_singleton, "T_coal": obs.T_coal,
               "truncated": obs.truncated, "horizon": obs.horizon,
               "final_block_count": sim.partition.block_count,
               "final_largest": sim.partition.largest}
    meta = _meta(args, seed)
    if args.events_out:
        with _output(args.events_out) as fh:
            _header(fh, meta)
            sim.log.to_csv(fh)
    with _output(args.out) as fh:
        if args.format == "json":
            payload = {"meta": meta, "summary": summary,
                       "observables": {"time": obs.time, "block_count": obs.block_count,
                                       "singleton_count": obs.singleton_count,
                                       "largest": obs.largest,
                                       "second_largest": obs.second_largest}}
            json.dump(_jsonable(payload), fh, indent=2)
            fh.write("\n")
        else:
            _header(fh, {**meta, "summary": summary})
            obs.to_csv(fh)
    return 0


def cmd_tuple_stats(args) -> int:
    """Laws of the first-step counts of the exploration at time ``n t``."""
    p = _length_law(args.p)
    n, t = args.n, args.t
    seed = resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    forbidden = list(range(2, 2 + args.forbidden))
    zeta = np.empty(args.reps, dtype=np.int64)
    neigh = np.empty(args.reps, dtype=np.int64)
    for r in range(args.reps):
        events = sample_log(n, p, n * t, rng)
        zeta[r] = first_step_zeta(1, events)
        neigh[r] = neighbour_count(1, forbidden, events)
    top = int(max(zeta.max(), neigh.max())) + 1
    zeta_exact = cpois_pmf(zeta_spec(p, n, t), top + 20)
    neigh_exact = cpois_pmf(CompoundPoissonSpec(t * m_star(p), size_biased(p)), top + 20)
    zeta_emp = np.pad(empirical_pmf(zeta), (0, top + 21))[:top + 21]
    neigh_emp = np.pad(empirical_pmf(neigh), (0, top + 21))[:top + 21]
    summary = {"tv_zeta_vs_cpois": tv_distance(zeta_emp, zeta_exact),
               "tv_neighbours_vs_limit": tv_distance(neigh_emp, neigh_exact),
               "neighbour_tv_bound": neighbour_tv_bound(p, t, n, args.forbidden)}
    meta = _meta(args, seed)
    if args.trace_out:
        events = sample_log(n, p, n * t, rng)
        with _output(args.trace_out) as fh:
            _header(fh, meta)
            explore_block(1, events).to_csv(fh)
    with _output(args.out) as fh:
        rows = [{"k": k, "zeta_empirical": float(zeta_emp[k]), "zeta_cpois": float(zeta_exact[k]),
                 "neighbours_empirical": float(neigh_emp[k]),
                 "neighbours_limit": float(neigh_exact[k])} for k in range(top + 21)]
        if args.format == "json":
            json.dump(_jsonable({"meta": meta, "records": rows, "summary": summary}), fh, indent=2)
            fh.write("\n")
        else:
            _header(fh, {**meta, "summary": summary})
            fh.write(",".join(rows[0]) + "\n")
            for row in rows:
                fh.write(",".join(repr(v) for v in row.values()) + "\n")
    return 0


def cmd_bgw_pmf(args) -> int:
    if args.p is not None:
        if args.t is None:
            raise ConfigError("--p needs --t (the limiting process CPois(t m*, size-biased p))")
        spec = BGWSpec.limiting(_length_law(args.p), args.t, args.u)
    else:
        if args.lam is None or args.jump is None:
            raise ConfigError("give --lambda and --jump, or --p and --t")
        try:
            jump = parse_law(args.jump, length=False)
        except DistributionError as exc:
            raise ConfigError(str(exc)) from exc
        spec = BGWSpec(args.u, CompoundPoissonSpec(args.lam, jump))
    pmf = total_progeny_pmf(spec, args.kmax)
    meta = _meta(args, None, rate=spec.rate, jump=spec.jump.label or spec.jump.kind)
    with _output(args.out) as fh:
        if args.format == "json":
            payload = {"meta": meta,
                       "records": [{"k": k, "P": float(pmf[k])} for k in range(spec.u, args.kmax + 1)],
                       "summary": {"q": pmf.q, "nonextinction": pmf.nonextinction,
                                   "truncation": pmf.truncation}}
            json.dump(_jsonable(payload), fh, indent=2)
            fh.write("\n")
        else:
            pmf.to_csv(fh, meta={k: json.dumps(_jsonable(v)) for k, v in meta.items()})
    return 0


def cmd_coag(args) -> int:
    p = _length_law(args.p)
    traj = integrate(p, args.t_end, args.kmax, args.dt, record_every=args.record_every)
    diag = gelation_diagnostics(traj, p)
    meta = _meta(args, None, gelation=diag._asdict())
    if args.summary_out:
        with _output(args.summary_out) as fh:
            _header(fh, meta)
            traj.summary_to_csv(fh)
    with _output(args.out) as fh:
        if args.format == "json":
            payload = {"meta": meta, "times": traj.times,
                       "moments": [dict(zip(("t", "m1", "m2", "gel_mass"), row))
                                   for row in traj.moments().tolist()],
                       "rho": [s.rho[1:] for s in traj.states]}
            json.dump(_jsonable(payload), fh)
            fh.write("\n")
        else:
            _header(fh, meta)
            traj.to_csv(fh)
    return 0


_EXPERIMENT_FLAGS = ("n", "p", "t", "reps", "seed", "out", "format", "threads", "kmax", "a",
                     "regime", "theta", "c_log", "a_factor", "alpha_prime", "include_stress")


def build_experiment_config(args) -> ExperimentConfig:
    data: Dict[str, Any] = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        if data.get("experiment", args.name) != args.name:
            raise ConfigError(f"config is for experiment {data['experiment']!r}, not {args.name!r}")
    data["experiment"] = args.name
    for key in _EXPERIMENT_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if "threads" not in data:
        data["threads"] = os.cpu_count() or 1
    if isinstance(data.get("n"), list) and len(data["n"]) == 1:
        data["n"] = data["n"][0]
    data["seed"] = resolve_seed(data.get("seed"))
    return ExperimentConfig.from_dict(data)


def cmd_experiment(args) -> int:
    cfg = build_experiment_config(args)
    report = run_experiment(cfg)
    report.write(cfg.out, cfg.format)
    for v in report.verdicts:
        status = "PASS" if v["passed"] else "FAIL"
        gate = "" if v["gated"] else " (reported, not gated)"
        print(f"{status} {v['name']}: {v['statistic']:.6g} {v['comparison']} {v['threshold']:g}{gate}",
              file=sys.stderr)
    return 0


# -- parser ------------------------------------------------------------------


def _int_list(text: str) -> List[int]:
    try:
        return [int(float(x)) for x in text.split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _time(text: str):
    return text if text.strip().endswith("/m2") else float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coalkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"coalkit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, formats=True):
        sp.add_argument("--out", default="-", help="output path, '-' for stdout (default)")
        if formats:
            sp.add_argument("--format", choices=("csv", "json"), default="csv")

    sp = sub.add_parser("simulate", help="run one trajectory of the coalescent")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--p", required=True, help="tuple-length law, e.g. dirac:2, log:0.5")
    sp.add_argument("--horizon", type=float, help="final time (or cap with --until-coalescence)")
    sp.add_argument("--until-coalescence", action="store_true")
    sp.add_argument("--skip-trivial", action="store_true", help="thin out tuples that merge nothing")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--events-out", help="also write the event log CSV here")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("tuple-stats", help="first-step exploration counts vs their compound Poisson laws")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--p", required=True)
    sp.add_argument("--t", type=float, required=True, help="macroscopic time; events up to n*t")
    sp.add_argument("--reps", type=int, default=10_000)
    sp.add_argument("--forbidden", type=int, default=0, help="size of the forbidden set V")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trace-out", help="write the exploration trace of element 1 here")
    common(sp)
    sp.set_defaults(func=cmd_tuple_stats)

    sp = sub.add_parser("bgw-pmf", help="tabulate the total-progeny law")
    sp.add_argument("--u", type=int, default=1)
    sp.add_argument("--lambda", dest="lam", type=float, help="offspring rate")
    sp.add_argument("--jump", help="jump law on {0,1,...}, e.g. dirac:1")
    sp.add_argument("--p", help="tuple-length law; uses CPois(t m*, size-biased p)")
    sp.add_argument("--t", type=float)
    sp.add_argument("--kmax", type=int, default=100)
    common(sp)
    sp.set_defaults(func=cmd_bgw_pmf)

    sp = sub.add_parser("coag", help="integrate the coagulation equations")
    sp.add_argument("--p", required=True)
    sp.add_argument("--t-end", type=float, required=True)
    sp.add_argument("--kmax", type=int, default=300)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--record-every", type=float, default=0.01)
    sp.add_argument("--summary-out", help="write t,m1,m2,gel_mass here")
    common(sp)
    sp.set_defaults(func=cmd_coag)

    sp = sub.add_parser("experiment", help="replicated experiment with verdicts")
    sp.add_argument("name", choices=EXPERIMENTS)
    sp.add_argument("--config", help="JSON config file; explicit flags override it")
    sp.add_argument("--n", type=_int_list, help="size or comma-separated n-sweep")
    sp.add_argument("--p")
    sp.add_argument("--t", type=_time, help="time, or '<c>/m2'")
    sp.add_argument("--reps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int, help="worker processes (default: CPU count)")
    sp.add_argument("--kmax", type=int)
    sp.add_argument("--a", type=_float_list, help="threshold offsets, e.g. 0,1")
    sp.add_argument("--regime", choices=REGIMES)
    sp.add_argument("--theta", type=float)
    sp.add_argument("--c-log", dest="c_log", type=float)
    sp.add_argument("--a-factor", dest="a_factor", type=float)
    sp.add_argument("--alpha-prime", dest="alpha_prime", type=float)
    sp.add_argument("--include-stress", action="store_const", const=True, default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--format", choices=("csv", "json"), default=None)
    sp.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DistributionError) as exc:
        print(f"coalkit: config error: {exc}", file=sys.stderr)
        return 2
    except CoagulationError as exc:
        print(f"coalkit: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"coalkit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
