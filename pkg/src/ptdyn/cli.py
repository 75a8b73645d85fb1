"""Command-line entry point: ``ptdyn {run,sweep-h,sweep-ne,dipole,bounds}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .checkpoint import save_trajectory
from .config import ExperimentConfig, config_from_dict, config_to_dict, tomllib
from .errors import ConfigError, PropagationError, PTDynError
from .plotting import bar_plot, line_plot

log = logging.getLogger("ptdyn")

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2


def fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _parse_override(text):
    if "=" not in text:
        raise ConfigError(f"--set expects section.key=value, got {text!r}")
    key, value = text.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"--set key must look like section.key, got {key!r}")
    try:
        parsed = tomllib.loads(f"v = {value}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value
    return parts[0], parts[1], parsed


def resolve_config(path, overrides) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for text in overrides or ():
        section, key, value = _parse_override(text)
        data.setdefault(section, {})[key] = value
    return config_from_dict(data)


# -- commands ------------------------------------------------------------------


def cmd_run(cfg, out, args):
    res = ex.run_experiment(cfg, not args.no_cache)
    save_trajectory(res.trajectory, out / "trajectory.bin")
    c = res.conservation
    write_csv(
        out / "conservation.csv",
        ["t", "ortho_defect", "tr_sigma", "tr_sigma2", "tr_sigma3"],
        zip(c.times, c.ortho_defect, c.tr_sigma, c.tr_sigma2, c.tr_sigma3),
    )
    drift = c.drift()
    line_plot(
        out / "conservation.svg",
        c.times,
        {
            "|Phi^H Phi - I|_F": np.maximum(c.ortho_defect, 1e-17),
            "|tr sigma - tr sigma_0|": np.abs(c.tr_sigma - c.tr_sigma[0]) + 1e-17,
            "|tr sigma^2 - tr sigma_0^2|": np.abs(c.tr_sigma2 - c.tr_sigma2[0]) + 1e-17,
            "|tr sigma^3 - tr sigma_0^3|": np.abs(c.tr_sigma3 - c.tr_sigma3[0]) + 1e-17,
        },
        xlabel="t",
        ylabel="deviation",
        logy=True,
    )
    return {"mu": res.mu, **{f"max_drift_{k}": v for k, v in drift.items()}}


def cmd_sweep_h(cfg, out, args):
    res = ex.sweep_h(cfg, threads=args.threads, use_cache=not args.no_cache)
    rows = []
    for scheme, errs in res.errors.items():
        for k, h in enumerate(res.step_sizes):
            rows.append(
                [
                    scheme,
                    h,
                    errs.get("phi", [None] * len(res.step_sizes))[k],
                    errs.get("sigma", [None] * len(res.step_sizes))[k],
                    errs.get("psi", [None] * len(res.step_sizes))[k],
                    errs["rho"][k],
                ]
            )
    write_csv(out / "errors.csv", ["scheme", "h", "err_phi", "err_sigma", "err_psi", "err_rho"], rows)
    slope_rows = [
        [scheme, q, slope] for scheme, d in res.slopes.items() for q, slope in d.items()
    ]
    write_csv(out / "slopes.csv", ["scheme", "quantity", "slope"], slope_rows)
    series = {}
    for scheme, errs in res.errors.items():
        for q, vals in errs.items():
            series[f"{scheme.upper()} {q}"] = vals
    line_plot(
        out / "errors.svg",
        res.step_sizes,
        series,
        xlabel="h",
        ylabel=f"relative error ({res.norm}-norm)",
        logx=True,
        logy=True,
        markers=True,
    )
    summary = {"mu": res.mu}
    for scheme, d in res.slopes.items():
        for q, slope in d.items():
            summary[f"slope_{scheme}_{q}"] = slope
    return summary


def cmd_sweep_ne(cfg, out, args):
    points = ex.sweep_ne(cfg, threads=args.threads, use_cache=not args.no_cache)
    keys = ["pt_phi", "pt_sigma", "sd_psi", "pt_rho_2", "sd_rho_2", "pt_rho_fro", "sd_rho_fro"]
    write_csv(
        out / "ne_errors.csv",
        ["n_electrons", "rank", "mu", *keys],
        ([p.n_electrons, p.rank, p.mu, *(p.errors.get(k) for k in keys)] for p in points),
    )
    write_csv(
        out / "ne_bounds.csv",
        ["n_electrons", "pt_aggregate", "sd_aggregate", "h3psi_h2"],
        ([p.n_electrons, p.bound_pt, p.bound_sd, p.h3psi] for p in points),
    )
    for p in points:
        tag = fmt(p.n_electrons)
        write_csv(
            out / f"histogram_ne{tag}.csv",
            ["orbital_energy", "err_pt", "err_sd"],
            zip(p.hist_energies, p.hist_pt, p.hist_sd),
        )
        bar_plot(
            out / f"histogram_ne{tag}.svg",
            {"PT": p.hist_energies, "SD": p.hist_energies},
            {"PT": p.hist_pt, "SD": p.hist_sd},
            xlabel="initial orbital energy",
            ylabel="orbital error",
            title=f"N_e = {tag}",
        )
    ne = [p.n_electrons for p in points]
    line_plot(
        out / "ne_errors.svg",
        ne,
        {k: [p.errors[k] for p in points] for k in keys},
        xlabel="N_e",
        ylabel="relative error",
        logy=True,
        markers=True,
    )
    line_plot(
        out / "ne_bounds.svg",
        ne,
        {
            "PT commutator aggregate": [p.bound_pt for p in points],
            "SD aggregate": [p.bound_sd for p in points],
            "|H^3 Psi| h^2": [p.h3psi for p in points],
        },
        xlabel="N_e",
        ylabel="bound",
        logy=True,
        markers=True,
    )
    return {f"mu_ne{fmt(p.n_electrons)}": p.mu for p in points}


def cmd_dipole(cfg, out, args):
    res = ex.dipole_experiment(cfg, threads=args.threads, use_cache=not args.no_cache)
    write_csv(
        out / "dipole.csv",
        ["t", "dip_pt_coarse", "dip_sd_coarse", "dip_ref"],
        zip(res.times, res.pt, res.sd, res.ref),
    )
    write_csv(out / "dipole_summary.csv", ["sup_dev_pt", "sup_dev_sd"], [[res.sup_pt, res.sup_sd]])
    line_plot(
        out / "dipole.svg",
        res.times,
        {"PT-IM": res.pt, "SD-IM": res.sd, "reference": res.ref},
        xlabel="t",
        ylabel="dipole <x>",
    )
    return {"sup_dev_pt": res.sup_pt, "sup_dev_sd": res.sup_sd}


def cmd_bounds(cfg, out, args):
    summary = {}
    if cfg.model.kind == "linear":
        rep = ex.bounds_along_run(cfg, not args.no_cache)
        names = sorted(rep.projector)
        header = ["t", *(f"P_{n}" for n in names), *(f"rho_{n}" for n in names), *sorted(rep.orbital)]
        header += ["pt_aggregate", "sd_aggregate", "h3psi_h2"]
        cols = [rep.times]
        cols += [rep.projector[n] for n in names] + [rep.density[n] for n in names]
        cols += [rep.orbital[n] for n in sorted(rep.orbital)]
        cols += [rep.pt_aggregate, rep.sd_aggregate, rep.h3psi_term]
        write_csv(out / "bounds.csv", header, zip(*cols))
        line_plot(
            out / "bounds.svg",
            rep.times,
            {"PT commutator aggregate": rep.pt_aggregate, "|H^3 Psi| h^2": rep.h3psi_term},
            xlabel="t",
            ylabel="bound",
            logy=True,
        )
        summary["max_pt_aggregate"] = float(rep.pt_aggregate.max())
        summary["max_h3psi_h2"] = float(rep.h3psi_term.max())
    scan = ex.adiabatic_scan(cfg)
    write_csv(
        out / "adiabatic.csv",
        ["eps", "pt_aggregate", "sd_aggregate", "h3psi_h2"],
        zip(scan.eps, scan.pt_aggregate, scan.sd_aggregate, scan.h3psi),
    )
    line_plot(
        out / "adiabatic.svg",
        scan.eps,
        {"PT aggregate": scan.pt_aggregate, "SD aggregate": scan.sd_aggregate},
        xlabel="eps",
        ylabel="bound",
        logx=True,
        logy=True,
        markers=True,
    )
    summary["pt_eps_exponent"] = scan.pt_exponent
    summary["sd_eps_exponent"] = scan.sd_exponent
    return summary


COMMANDS = {
    "run": cmd_run,
    "sweep-h": cmd_sweep_h,
    "sweep-ne": cmd_sweep_ne,
    "dipole": cmd_dipole,
    "bounds": cmd_bounds,
}


def build_parser():
    p = argparse.ArgumentParser(
        prog="ptdyn",
        description="Parallel-transport and Schroedinger-gauge propagation of driven 1D density matrices.",
    )
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="TOML configuration file")
        s.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
        s.add_argument("--threads", type=int, default=1, help="worker threads for sweep points")
        s.add_argument("--no-cache", action="store_true", help="recompute reference trajectories")
        s.add_argument(
            "--set",
            action="append",
            metavar="SECTION.KEY=VALUE",
            help="override one config value, e.g. --set run.h=0.02",
        )
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = resolve_config(args.config, args.set)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "config.json", "w") as fh:
            json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True, default=list)
            fh.write("\n")
        summary = COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"ptdyn: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PropagationError as exc:
        print(f"ptdyn: propagation failed at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PTDynError as exc:
        print(f"ptdyn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"ptdyn: I/O error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for key, value in summary.items():
        print(f"{key},{fmt(value)}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
