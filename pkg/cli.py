# cli.py
"""
Command-line entry point for the standard-map laboratory.

    python cli.py <subcommand> [flags]

Results go to standard output (or ``--out``) as JSON, or CSV where a table
exists and ``--format csv`` is given. Failures print a JSON error object on
standard error and exit nonzero: 2 usage / cache, 3 numeric failure,
4 inconclusive homoclinic test, 1 unexpected.
"""

import argparse
import logging
import math
import sys
import traceback

import numpy as np

from modules import cocycle, export, manifolds, periodic, regions, scheduler, statistics
from modules.config import RunConfig, build_config
from modules.errors import InsufficientDataError, LabError, UsageError
from modules.map_core import Params, TorusPoint, derive_params

logger = logging.getLogger(__name__)

EXIT_INCONCLUSIVE = 4


class LabArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ==================== Shared helpers ====================

def _params(args, cfg: RunConfig) -> Params:
    return derive_params(cfg.k, eps=cfg.eps, harmonic=cfg.harmonic, allow_small=args.allow_small)


def _point(args, xname="x", yname="y") -> TorusPoint:
    x, y = getattr(args, xname), getattr(args, yname)
    if x is None or y is None:
        raise UsageError(f"--{xname} and --{yname} are required")
    return TorusPoint(float(x), float(y))


def _census(cfg: RunConfig, params: Params, n: int, least_period: bool = False) -> periodic.PeriodicDatabase:
    if cfg.cache_dir:
        return periodic.cached_census(params, n, cfg.cache_dir, grid_res=cfg.grid_res,
                                      newton_tol=cfg.newton_tol, dedup_tol=cfg.dedup_tol,
                                      least_period=least_period, threads=cfg.threads, progress=cfg.progress)
    return periodic.find_periodic(params, n, grid_res=cfg.grid_res, newton_tol=cfg.newton_tol,
                                  dedup_tol=cfg.dedup_tol, least_period=least_period,
                                  threads=cfg.threads, progress=cfg.progress)


def _rho_census(cfg: RunConfig, params: Params, n: int) -> periodic.PeriodicDatabase:
    return periodic.filter_rho_hyperbolic(_census(cfg, params, n), cfg.rho)


def _mean_lambda(db: periodic.PeriodicDatabase) -> float:
    if not db.points:
        raise InsufficientDataError(f"no rho-hyperbolic points of period {db.n}")
    return float(np.mean([p.lambda_ for p in db.points]))


def _stage(report: dict, name: str, func):
    """Run one report stage; a failure is recorded as an error entry."""
    try:
        report[name] = func()
    except Exception as e:
        logger.error(f"Report stage '{name}' failed: {traceback.format_exc()}")
        report[name] = {"error": str(e)}
    return report[name]


# ==================== Subcommands ====================

def cmd_orbit(args, cfg):
    params = _params(args, cfg)
    window = cocycle.iterate_orbit(params, _point(args), args.n_back, args.n_fwd)
    frame = window.to_frame()
    return {"k": params.k, "n_back": args.n_back, "n_fwd": args.n_fwd, "points": frame}, frame, 0


def cmd_lyapunov(args, cfg):
    params = _params(args, cfg)
    if args.x is not None or args.y is not None:
        est = cocycle.lyapunov(params, _point(args), cfg.horizon, backward=args.backward)
        return {"k": params.k, "estimate": est}, None, 0

    rng = scheduler.rng_streams(cfg.seed, 1)[0]
    x, y = rng.random(args.orbits), rng.random(args.orbits)
    est = cocycle.lyapunov(params, TorusPoint(x, y), cfg.horizon, backward=args.backward)
    payload = {
        "k": params.k,
        "horizon": cfg.horizon,
        "orbits": args.orbits,
        "median_lambda_plus": float(np.median(est.lambda_plus)),
        "mean_lambda_plus": float(np.mean(est.lambda_plus)),
        "reference_log_pi_k": math.log(math.pi * params.k),
    }
    return payload, None, 0


def cmd_pliss(args, cfg):
    if not args.seq:
        raise UsageError("--seq is required")
    try:
        seq = [float(s) for s in args.seq.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seq must be a comma-separated list of numbers, got {args.seq!r}")
    out = cocycle.pliss_times(seq, args.alpha1, args.alpha2, args.pliss_eps)
    return {"length": len(seq), "pliss": out}, None, 0


def cmd_regions(args, cfg):
    params = _params(args, cfg)
    if args.rates:
        rates = cocycle.membership_rates(params, samples=cfg.z_samples, seed=cfg.seed, threads=cfg.threads)
        return rates, None, 0

    p = _point(args)
    payload = {"k": params.k, "point": p, "label": regions.classify_region(params, p)}
    if args.membership:
        _stage(payload, "z_membership", lambda: cocycle.z_membership(params, p))
        _stage(payload, "x_membership", lambda: cocycle.x_membership(params, p))
    return payload, None, 0


def cmd_cone_audit(args, cfg):
    if cfg.k_list:
        result = regions.smallest_passing_k(cfg.k_list, samples=cfg.samples, seed=cfg.seed,
                                            threads=cfg.threads, eps=cfg.eps, harmonic=cfg.harmonic)
        return result, regions.audit_frame(result["records"]), 0

    params = _params(args, cfg)
    records = regions.audit_cone_lemmas(params, samples=cfg.samples, seed=cfg.seed, threads=cfg.threads,
                                        z_samples=cfg.z_samples, progress=cfg.progress)
    for rec in records:
        logger.info(f"{rec['lemma']}: pass rate {rec['pass_rate']}, worst margin {rec['worst_margin']}")
    return {"k": params.k, "records": records}, regions.audit_frame(records), 0


def cmd_periodic(args, cfg):
    params = _params(args, cfg)
    db = _census(cfg, params, cfg.n, least_period=args.least_period)
    if args.rho is not None:
        db = periodic.filter_rho_hyperbolic(db, cfg.rho)
    payload = periodic.to_record(db).model_dump(by_alias=True)
    payload["count"] = len(db.points)
    payload["audit"] = periodic.audit_database(db)
    return payload, db.to_frame(), 0


def cmd_entropy(args, cfg):
    params = _params(args, cfg)
    counts = [(n, len(_rho_census(cfg, params, n).points)) for n in range(1, cfg.n_max + 1)]
    fit = statistics.entropy_fit(counts)
    return {"k": params.k, "rho": cfg.rho, "fit": fit, "references": statistics.entropy_references(params)}, None, 0


def cmd_mme(args, cfg):
    params = _params(args, cfg)
    db = _rho_census(cfg, params, cfg.n)
    m = statistics.empirical_measure(db.coords(), grid=cfg.hist_grid, max_freq=cfg.max_freq)
    payload = {
        "k": params.k,
        "n": cfg.n,
        "rho": cfg.rho,
        "atom_count": m.atom_count,
        "max_freq": m.max_freq,
        "fourier": statistics.fourier_frame(m),
        "involution_defect": statistics.involution_defect(m),
    }
    return payload, statistics.grid_frame(m), 0


def cmd_density(args, cfg):
    params = _params(args, cfg)
    db = _rho_census(cfg, params, cfg.n)
    radii = statistics.density_radii(params.k)
    epsilon = args.epsilon if args.epsilon is not None else radii["perturbation_radius"]
    ok, radius = statistics.density_check(db.coords(), epsilon)
    payload = {"k": params.k, "n": cfg.n, "rho": cfg.rho, "count": len(db.points),
               "epsilon": epsilon, "covering_radius": radius, "dense": ok, **radii}
    return payload, None, 0


def cmd_dimension(args, cfg):
    if args.h is not None and args.lp is not None and args.lm is not None:
        return statistics.young_dimension(args.h, args.lp, args.lm), None, 0
    params = _params(args, cfg)
    counts = [(n, len(_rho_census(cfg, params, n).points)) for n in range(1, cfg.n_max + 1)]
    h = statistics.entropy_fit(counts).slope
    lam = _mean_lambda(_rho_census(cfg, params, cfg.n_max))
    return statistics.young_dimension(h, lam, -lam), None, 0


def cmd_manifold(args, cfg):
    params = _params(args, cfg)
    seed = manifolds.seed_local_manifold(params, _point(args), args.side, cfg.h_max)
    direction = "forward" if args.side == "unstable" else "backward"
    curve, report = manifolds.grow_curve(params, seed, direction, args.max_iter, args.target, cfg.h_max)
    payload = {"k": params.k, "side": args.side, "vertices": len(curve.vertices),
               "total_length": curve.total_length, "report": report}
    code = EXIT_INCONCLUSIVE if report.truncated else 0
    return payload, curve.to_frame(), code


def cmd_homoclinic(args, cfg):
    params = _params(args, cfg)
    p, q = _point(args, "px", "py"), _point(args, "qx", "qy")
    result = manifolds.homoclinically_related(params, p, q, max_iter=args.max_iter, target_length=args.target,
                                              h_max=cfg.h_max)
    payload = {"k": params.k, "p": p, "q": q, "related": result.related,
               "inconclusive": result.related is None, "witnesses": result.witnesses,
               "reports": result.reports}
    return payload, None, EXIT_INCONCLUSIVE if result.related is None else 0


def build_report(cfg: RunConfig, params: Params) -> dict:
    """periodic -> entropy -> mme -> involution defect -> density -> dimension."""
    report = {"k": params.k, "rho": cfg.rho, "n_max": cfg.n_max, "eps": params.eps, "seed": cfg.seed}
    dbs = {}

    def census():
        out = {}
        for n in range(1, cfg.n_max + 1):
            dbs[n] = _rho_census(cfg, params, n)
            out[str(n)] = periodic.audit_database(dbs[n])
        return out

    def measure_of(n):
        return statistics.empirical_measure(dbs[n].coords(), grid=cfg.hist_grid, max_freq=cfg.max_freq)

    _stage(report, "periodic", census)
    fit = _stage(report, "entropy", lambda: statistics.entropy_fit([(n, len(d.points)) for n, d in dbs.items()]))
    _stage(report, "entropy_references", lambda: statistics.entropy_references(params))

    def mme():
        top = measure_of(cfg.n_max)
        out = {"atom_count": top.atom_count, "fourier": statistics.fourier_frame(top)}
        if cfg.n_max > 1:
            out["distance_to_previous_n"] = statistics.measure_distance(measure_of(cfg.n_max - 1), top)
        report["_measure"] = top
        return out

    _stage(report, "mme", mme)
    _stage(report, "involution_defect", lambda: statistics.involution_defect(measure_of(cfg.n_max)))

    def density():
        radii = statistics.density_radii(params.k)
        ok, radius = statistics.density_check(dbs[cfg.n_max].coords(), radii["perturbation_radius"])
        return {"covering_radius": radius, "dense": ok, **radii}

    _stage(report, "density", density)

    def dimension():
        if isinstance(fit, dict):
            raise InsufficientDataError("entropy fit unavailable")
        lam = _mean_lambda(dbs[cfg.n_max])
        return statistics.young_dimension(fit.slope, lam, -lam)

    _stage(report, "dimension", dimension)
    return report


def cmd_report(args, cfg):
    if not cfg.k_list:
        report = build_report(cfg, _params(args, cfg))
        report.pop("_measure", None)
        return report, None, 0

    runs, measures = [], []
    for k in cfg.k_list:
        params = derive_params(k, eps=cfg.eps, harmonic=cfg.harmonic, allow_small=args.allow_small)
        report = build_report(cfg, params)
        measures.append((params.k, report.pop("_measure", None)))
        runs.append(report)
    continuity = []
    for (ka, ma), (kb, mb) in zip(measures, measures[1:]):
        entry = {"k_a": ka, "k_b": kb}
        if ma is None or mb is None:
            entry["error"] = "measure unavailable"
        else:
            entry["distance"] = statistics.measure_distance(ma, mb)
        continuity.append(entry)
    return {"runs": runs, "continuity": continuity}, None, 0


HANDLERS = {
    "orbit": cmd_orbit,
    "lyapunov": cmd_lyapunov,
    "pliss": cmd_pliss,
    "regions": cmd_regions,
    "cone-audit": cmd_cone_audit,
    "periodic": cmd_periodic,
    "entropy": cmd_entropy,
    "mme": cmd_mme,
    "density": cmd_density,
    "dimension": cmd_dimension,
    "manifold": cmd_manifold,
    "homoclinic": cmd_homoclinic,
    "report": cmd_report,
}


# ==================== Parser ====================

def build_parser() -> argparse.ArgumentParser:
    common = LabArgumentParser(add_help=False)
    g = common.add_argument_group("run configuration")
    g.add_argument("--config", help="flat key=value configuration file")
    g.add_argument("--k", type=float, help="coupling constant")
    g.add_argument("--n", type=int, help="power of the map")
    g.add_argument("--n-max", type=int, help="largest n for entropy fits and reports")
    g.add_argument("--rho", type=float, help="hyperbolicity threshold")
    g.add_argument("--grid", dest="grid_res", type=int, help="Newton seeds per axis")
    g.add_argument("--threads", type=int, help="worker processes")
    g.add_argument("--seed", type=int, help="random seed")
    g.add_argument("--tol-newton", dest="newton_tol", type=float)
    g.add_argument("--tol-dedup", dest="dedup_tol", type=float)
    g.add_argument("--samples", type=int, help="Monte Carlo samples")
    g.add_argument("--z-samples", type=int, help="samples for Z / X membership rates")
    g.add_argument("--horizon", type=int, help="Lyapunov horizon")
    g.add_argument("--h-max", type=float, help="largest vertex spacing on grown curves")
    g.add_argument("--eps", type=float, help="amplitude of the trigonometric perturbation")
    g.add_argument("--harmonic", type=int, help="frequency of the trigonometric perturbation")
    g.add_argument("--k-list", help="comma-separated couplings")
    g.add_argument("--max-freq", type=int, help="Fourier box half-width")
    g.add_argument("--hist-grid", type=int, help="histogram resolution of empirical measures")
    g.add_argument("--cache-dir", help="directory of cached periodic databases")
    g.add_argument("--out", help="output file (default: standard output)")
    g.add_argument("--format", dest="out_format", choices=["json", "csv"])
    g.add_argument("--log-level")
    g.add_argument("--progress", action="store_const", const=True, default=None)
    g.add_argument("--allow-small", action="store_true", help="accept 0 < k <= 1")

    parser = LabArgumentParser(prog="cli.py", description="Standard-map numerical laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    def point(p, x="x", y="y"):
        p.add_argument(f"--{x}", type=float)
        p.add_argument(f"--{y}", type=float)

    p = add("orbit", "orbit window around a point")
    point(p)
    p.add_argument("--n-back", type=int, default=0)
    p.add_argument("--n-fwd", type=int, default=10)

    p = add("lyapunov", "Lyapunov exponent at a point or median over random orbits")
    point(p)
    p.add_argument("--orbits", type=int, default=100)
    p.add_argument("--backward", action="store_true")

    p = add("pliss", "Pliss times of a sequence")
    p.add_argument("--seq")
    p.add_argument("--alpha1", type=float, required=True)
    p.add_argument("--alpha2", type=float, required=True)
    p.add_argument("--pliss-eps", type=float, required=True)

    p = add("regions", "critical-strip label, Z / X membership, membership rates")
    point(p)
    p.add_argument("--membership", action="store_true")
    p.add_argument("--rates", action="store_true")

    add("cone-audit", "Monte Carlo audit of the cone lemmas")

    p = add("periodic", "periodic-point census")
    p.add_argument("--least-period", action="store_true")

    add("entropy", "growth rate of rho-hyperbolic periodic points")
    add("mme", "empirical measure of rho-hyperbolic periodic points")

    p = add("density", "covering radius of rho-hyperbolic periodic points")
    p.add_argument("--epsilon", type=float)

    p = add("dimension", "Young's dimension formula")
    p.add_argument("--h", type=float)
    p.add_argument("--lp", type=float)
    p.add_argument("--lm", type=float)

    p = add("manifold", "grow a local stable or unstable manifold")
    point(p)
    p.add_argument("--side", choices=["stable", "unstable"], default="unstable")
    p.add_argument("--max-iter", type=int, default=40)
    p.add_argument("--target", type=float, default=4.0)

    p = add("homoclinic", "homoclinic-relation test between two points")
    point(p, "px", "py")
    point(p, "qx", "qy")
    p.add_argument("--max-iter", type=int, default=40)
    p.add_argument("--target", type=float, default=4.0)

    add("report", "periodic -> entropy -> mme -> density -> dimension")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = build_config(vars(args), args.config)
        logging.basicConfig(level=cfg.log_level, stream=sys.stderr, force=True,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        payload, frame, code = HANDLERS[args.command](args, cfg)
        export.write_output(payload, cfg.out, cfg.out_format, frame)
        return code
    except LabError as e:
        logger.error(f"{e.kind}: {e}")
        sys.stderr.write(export.dumps({"error": e.kind, "message": str(e)}) + "\n")
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected failure: {traceback.format_exc()}")
        sys.stderr.write(export.dumps({"error": "internal", "message": str(e)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
