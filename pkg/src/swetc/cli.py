"""Command-line front end: ``swetc {synth,simulate,analyze,reproduce}``.

Exit codes: 0 on success, 2 when a design is infeasible or undecided (or a
reproduction has failing or undecided rows, or a certificate check fails),
1 on any error including bad flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, experiments, synthesis
from .experiments import atomic_write
from .plant import DelayModel, Disturbance, load_config, trigger_from_dict
from .simulator import SimConfig, SimulationError, run

log = logging.getLogger("swetc")

EXIT_OK, EXIT_ERROR, EXIT_NEGATIVE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def resolve_plant(name):
    """A plant file path, or the name of a shipped plant file."""
    p = Path(name)
    if p.is_file():
        return p
    shipped = experiments.preset_dir() / "plants" / p.name
    if shipped.is_file():
        return shipped
    shipped = shipped.with_suffix(".json")
    if shipped.is_file():
        return shipped
    raise UsageError(f"plant file {name!r} not found")


def _out_dir(args):
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- synth -----------------------------------------------------------------------

def _read_grid(path):
    text = Path(path).read_text().strip()
    if text.startswith("["):
        return [float(v) for v in json.loads(text)]
    return [float(v) for v in text.replace(",", "\n").split() if v]


def cmd_synth(args):
    plant, gain = load_config(resolve_plant(args.plant))
    opts = synthesis.SolverOptions(depth_tol=args.depth_tol)
    kw = dict(delta=args.delta, opts=opts)
    if args.theorem in ("2", "delpar"):
        kw.update(gamma=args.gamma, eta_max=args.etaM)

    def factory(eps):
        return lambda h: synthesis.feasibility(args.theorem, plant, gain, h=h, eps=eps, **kw)

    tol = args.tol if args.tol is not None else 1e-3
    rows, result, h = [], None, args.h
    if args.sweep:
        sw = synthesis.sweep_eps(factory, _read_grid(args.sweep), tol=tol, h_hi0=args.h_hi,
                                 jobs=args.jobs)
        rows = sw.rows
        for eps, hm, status in rows:
            print(f"eps={eps:g} h_max={'' if hm is None else f'{hm:.4f}'} status={status}")
        ok = any(s == "feasible" for _, _, s in rows)
    elif args.max_h:
        mh = synthesis.max_h(factory(args.eps), tol=tol, h_hi0=args.h_hi)
        rows = [(args.eps, mh.h_max, mh.status.value)]
        if mh.h_max is None:
            print(f"h_max=none status={mh.status.value}")
        else:
            print(f"h_max={mh.h_max:.4f}±{tol:g} status={mh.status.value}")
        result, h, ok = mh.result, mh.h_max, mh.h_max is not None
    else:
        if h is None:
            raise UsageError("give --h, --max-h or --sweep")
        result = factory(args.eps)(h)
        rows = [(args.eps, h if result.feasible else None, result.status.value)]
        print(f"status={result.status.value} depth={result.depth:.3e}")
        ok = result.feasible
    csv_text = "eps,h_max,status\n" + "".join(
        f"{e!r},{'' if hm is None else repr(float(hm))},{s}\n" for e, hm, s in rows)
    if args.out:
        atomic_write(_out_dir(args) / "synth.csv", csv_text)
    else:
        sys.stdout.write(csv_text)
    if args.cert_out:
        if result is None or not result.feasible:
            raise UsageError("--cert-out needs a feasible point (use --h or --max-h)")
        if args.theorem not in ("1", "2"):
            raise UsageError("certificates are written for theorems 1 and 2")
        tag = "T1" if args.theorem == "1" else "T2"
        params = dict(h=float(h), eps=args.eps, delta=args.delta)
        if tag == "T2":
            params.update(gamma=args.gamma, eta_max=args.etaM)
        cert = analysis.Certificate.from_result(tag, result, **params)
        atomic_write(Path(args.cert_out), cert.to_json() + "\n")
    return EXIT_OK if ok else EXIT_NEGATIVE


# -- simulate --------------------------------------------------------------------

def _sim_document(args, plant_doc, Omega):
    trig = {"kind": args.trigger}
    if args.trigger != "continuous":
        trig["h"] = args.h
    if args.trigger != "periodic":
        trig["eps"] = args.eps
        trig["Omega"] = Omega.tolist()
    dist = json.loads(args.disturbance) if args.disturbance else None
    if dist and Path(str(args.disturbance)).is_file():
        dist = json.loads(Path(args.disturbance).read_text())
    return {"plant": plant_doc, "trigger": trig, "dt": args.dt, "T_f": args.Tf,
            "x0": args.x0, "seed": args.seed,
            "delay": {"eta_max": args.etaM, "mode": args.delay if args.etaM > 0 else "zero",
                      "value": args.delay_value},
            "disturbance": dist or {}}


def run_document(doc):
    """Simulate from a run document written by ``simulate``."""
    plant, gain = load_config(doc["plant"])
    trig = trigger_from_dict(doc["trigger"], plant.l)
    cfg = SimConfig(trigger=trig, dt=doc["dt"], T_f=doc["T_f"], x0=doc["x0"] or (),
                    seed=doc["seed"], delay=DelayModel(**doc["delay"]),
                    disturbance=Disturbance.from_dict(doc["disturbance"]))
    return run(plant, gain, cfg)


def cmd_simulate(args):
    path = resolve_plant(args.plant)
    plant, _ = load_config(path)
    if args.trigger != "continuous" and args.h is None:
        raise UsageError(f"trigger {args.trigger} needs --h")
    Omega = np.eye(plant.l)
    if args.cert:
        Omega = analysis.Certificate.from_json(Path(args.cert)).witness["Omega"]
    doc = _sim_document(args, json.loads(path.read_text()), Omega)
    traj = run_document(doc)
    out = _out_dir(args)
    stem = args.name
    atomic_write(out / f"{stem}.csv", traj.trajectory_csv())
    atomic_write(out / f"{stem}.events.csv", traj.events_csv())
    atomic_write(out / f"{stem}.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    rep = analysis.count_metrics(traj)
    print(f"sent={rep.SM} avg_period={rep.avg_period} min_gap={rep.min_gap} "
          f"zeno={int(rep.zeno)}")
    print(f"wrote {out / (stem + '.csv')} and {out / (stem + '.events.csv')}")
    return EXIT_OK


# -- analyze ---------------------------------------------------------------------

def _load_columns(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return data


def cmd_analyze(args):
    traj_path = Path(args.traj)
    side = traj_path.with_suffix(".json")
    if not side.is_file():
        raise UsageError(f"run document {side} not found (written by simulate)")
    doc = json.loads(side.read_text())
    traj = run_document(doc)
    cols = _load_columns(traj_path)
    xs = np.column_stack([cols[f"x{i + 1}"] for i in range(traj.x.shape[1])])
    if xs.shape != traj.x.shape or not np.allclose(xs, traj.x, rtol=1e-12, atol=1e-12):
        raise UsageError(f"{traj_path} does not match its run document")
    rep = analysis.count_metrics(traj)
    try:
        rep.delta_hat = analysis.fit_decay(traj)
    except ValueError:
        rep.delta_hat = None
    status = EXIT_OK
    cert = None
    if args.cert:
        cert = analysis.Certificate.from_json(Path(args.cert))
        if cert.tag == "T1":
            fs = analysis.eval_certificate_T1(traj, cert)
            ok = fs.ok(1e-6) and fs.continuity_ok(1e-6)
        else:
            fs = analysis.eval_certificate_T2(traj, cert)
            ok = fs.ok(1e-4)
        print(f"certificate {cert.tag}: max_residual={fs.max_residual:.3e} "
              f"scale={fs.scale:.3e} ok={int(ok)}", file=sys.stderr)
        if not ok:
            status = EXIT_NEGATIVE
    gamma = args.gamma if args.gamma is not None else (
        cert.params.get("gamma") if cert is not None and cert.tag == "T2" else None)
    if gamma is not None and not np.any(traj.x[0]):
        rep.J = analysis.empirical_l2(traj, gamma)
    eta_max = doc["delay"]["eta_max"]
    text = analysis.metrics_csv([analysis.metrics_row(traj_path.stem, traj, rep, eta_max)])
    if args.out:
        atomic_write(_out_dir(args) / f"{traj_path.stem}.metrics.csv", text)
    sys.stdout.write(text)
    return status


# -- reproduce -------------------------------------------------------------------

def cmd_reproduce(args):
    names = list(experiments.PRESETS) if args.preset == "all" else [args.preset]
    status = EXIT_OK
    out = Path(args.out or "out")
    for name in names:
        table = experiments.reproduce(name, out, seed=args.seed, jobs=args.jobs, tol=args.tol)
        print(table.summary_md())
        print(f"artifacts in {out / table.name}")
        if table.failed or table.undecided:
            status = EXIT_NEGATIVE
    return status


# -- parser ----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="random seed for delays and noise (default: preset or 0)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers")
    common.add_argument("--tol", type=float, default=None,
                        help="bisection tolerance on h (default 1e-3)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="swetc", parents=[common],
                     description="Switching event-triggered control: synthesis, "
                                 "simulation, analysis and reproduction.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="LMI feasibility and largest h")
    p.add_argument("--theorem", required=True, choices=synthesis.THEOREMS)
    p.add_argument("--plant", required=True)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--etaM", type=float, default=0.0)
    p.add_argument("--h-hi", type=float, default=10.0, help="initial upper bracket for h")
    p.add_argument("--depth-tol", type=float, default=1e-4,
                   help="minimum interior depth of a feasible point")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--max-h", action="store_true", help="bisect the largest feasible h")
    mode.add_argument("--sweep", metavar="FILE", help="eps grid (JSON list or one per line)")
    p.add_argument("--cert-out", metavar="FILE", help="write the certificate as JSON")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", parents=[common], help="simulate one run")
    p.add_argument("--plant", required=True)
    p.add_argument("--trigger", required=True,
                   choices=("periodic", "periodic-et", "switching", "continuous"))
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--x0", type=_floats, default=[])
    p.add_argument("--Tf", type=float, default=20.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--etaM", type=float, default=0.0)
    p.add_argument("--delay", choices=("zero", "constant", "random"), default="random")
    p.add_argument("--delay-value", type=float, default=0.0)
    p.add_argument("--disturbance", default=None,
                   help='JSON text or file, e.g. {"w": {"kind": "decaying-sine", "amp": 1}}')
    p.add_argument("--cert", default=None, help="take the trigger weight from a certificate")
    p.add_argument("--name", default="run", help="file stem of the outputs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common], help="metrics and certificate check")
    p.add_argument("--traj", required=True, help="trajectory CSV written by simulate")
    p.add_argument("--cert", default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("reproduce", parents=[common], help="run a named preset")
    p.add_argument("preset", help=f"one of {', '.join(experiments.PRESETS)}, 'all' or a path")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is None and args.command != "reproduce":
        args.seed = 0
    try:
        return args.func(args)
    except (UsageError, experiments.PresetError, analysis.CertificateError,
            SimulationError, KeyError, ValueError, OSError) as exc:
        print(f"swetc: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
