"""Command-line front end: ``mcwf [--config FILE] [--key value ...]``.

Every flag can also be given as a ``key=value`` line in the config file;
flags win.  Results go to ``--output``: ``series.csv``, ``stats.csv`` and a
``manifest`` (itself a valid config file that reproduces the run).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .ensemble import run_ensemble, time_average
from .errors import MCWFError, ValidationError
from .hilbert import coherent_state, density_matrix, fock
from .integrating import IntegratingControls
from .markov import ChainSpec, discrete_chain_ensemble, gillespie_trajectory, state_at
from .master import evolve_master
from .models import (PICTURES, ModeParams, ParticleParams, make_mode_system,
                     make_particle_system, wave_numbers)
from .ode import StepControl
from .stepwise import DpControls, run_trajectory
from .timeseries import COLUMNS, TimeSeries

MODELS = ("mode", "particle")
METHODS = ("stepwise", "integrating", "master", "oracle-gillespie", "oracle-discrete")
SAMPLINGS = ("equal-time", "equal-steps")


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _complex(s):
    return complex(str(s).replace(" ", "").replace("i", "j"))


# name -> (type, default, help)
OPTIONS = {
    "model": (str, "mode", "mode | particle"),
    "method": (str, "stepwise", " | ".join(METHODS)),
    "picture": (str, None, "schroedinger | interaction | non-unitary-interaction"),
    "cutoff": (int, 80, "Fock-space cutoff (basis 0..cutoff-1)"),
    "kappa": (float, 1.0, "mode damping rate"),
    "nTh": (float, 0.0, "thermal photon number"),
    "eta": (_complex, 0j, "drive amplitude (complex, e.g. 1+0.5j)"),
    "delta": (float, 0.0, "detuning"),
    "n0": (int, 10, "initial Fock state"),
    "alpha": (_complex, None, "initial coherent amplitude (overrides n0)"),
    "kCutoff": (int, 20, "particle wave-number cutoff"),
    "omegaRec": (float, 1.0, "recoil frequency"),
    "V": (float, 1.0, "lattice depth"),
    "KRatio": (int, 1, "lattice wave number K / dk"),
    "kWidth": (float, 2.0, "width of the Gaussian initial wave-number profile"),
    "dpLimit": (float, 0.1, "jump probability limit per step"),
    "dpOvershoot": (float, None, "rejection threshold (default 10 dpLimit)"),
    "normTol": (float, 0.001, "norm tolerance of the integrating method"),
    "maxIters": (int, 5, "root-finding iterations of the integrating method"),
    "Dt": (float, 0.05, "sampling interval"),
    "T": (float, 5.0, "end time"),
    "epsAbs": (float, 1e-12, "absolute ODE tolerance"),
    "epsRel": (float, 1e-6, "relative ODE tolerance"),
    "dtMin": (float, 1e-14, "smallest ODE step"),
    "nTraj": (int, 1, "number of trajectories"),
    "seed": (int, 0, "base seed; trajectory i uses stream (seed, i)"),
    "jobs": (int, 1, "worker threads"),
    "renormalize": (_bool, True, "renormalize after every step"),
    "sampling": (str, "equal-time", "time-average rule: equal-time | equal-steps"),
    "output": (str, ".", "output directory"),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def manifest_lines(self):
        out = []
        for k in OPTIONS:
            v = self.values[k]
            if v is None or k == "output":
                continue
            if isinstance(v, float):
                v = repr(v)
            elif isinstance(v, complex):
                v = f"{v.real!r}{v.imag:+.17g}j"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out.append(f"{k}={v}")
        return out


def read_config_file(path) -> dict:
    """Flat ``key=value`` lines, ``#`` comments, UTF-8."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}", "expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


def _parser():
    ap = argparse.ArgumentParser(prog="mcwf", description=__doc__.splitlines()[0],
                                 allow_abbrev=False)
    ap.add_argument("--config", help="key=value file; flags override its values")
    for k, (_, default, help_) in OPTIONS.items():
        ap.add_argument(f"--{k}", dest=k, default=None,
                        help=f"{help_} (default {default})")
    return ap


def parse_config(argv=None, config_file=None) -> RunConfig:
    """Resolve defaults, config file and flags into a validated :class:`RunConfig`.

    Raises:
        ValidationError: naming the first offending key.
    """
    args, extra = _parser().parse_known_args(argv)
    if extra:
        raise ValidationError(extra[0].lstrip("-").split("=")[0], "unknown flag")
    raw = {}
    path = config_file or args.config
    if path:
        raw.update(read_config_file(path))
    for k in OPTIONS:
        v = getattr(args, k)
        if v is not None:
            raw[k] = v
    unknown = sorted(set(raw) - set(OPTIONS))
    if unknown:
        raise ValidationError(unknown[0], "unknown key")
    values = {}
    for k, (typ, default, _) in OPTIONS.items():
        if k in raw and raw[k] not in ("", None):
            try:
                values[k] = typ(raw[k])
            except (TypeError, ValueError) as exc:
                raise ValidationError(k, f"cannot parse {raw[k]!r}: {exc}") from None
        else:
            values[k] = default
    _validate(values)
    return RunConfig(values)


def _validate(v):
    def need(key, ok, msg):
        if not ok:
            raise ValidationError(key, msg)

    for k, x in v.items():
        if isinstance(x, (float, complex)):
            need(k, np.isfinite(x), "must be finite")
    need("model", v["model"] in MODELS, f"must be one of {MODELS}")
    need("method", v["method"] in METHODS, f"must be one of {METHODS}")
    need("sampling", v["sampling"] in SAMPLINGS, f"must be one of {SAMPLINGS}")
    if v["picture"] is None:
        if v["model"] == "particle":
            v["picture"] = "interaction"
        else:
            v["picture"] = "schroedinger" if v["method"] == "master" \
                else "non-unitary-interaction"
    need("picture", v["picture"] in PICTURES, f"must be one of {PICTURES}")
    need("dpLimit", 0 < v["dpLimit"] < 1, "must lie in (0, 1)")
    if v["dpOvershoot"] is not None:
        need("dpOvershoot", v["dpOvershoot"] > v["dpLimit"], "must exceed dpLimit")
    need("normTol", 0 < v["normTol"] < 0.1, "must lie in (0, 0.1)")
    need("maxIters", v["maxIters"] >= 1, "must be >= 1")
    need("Dt", v["Dt"] > 0, "must be positive")
    need("T", v["T"] >= v["Dt"], "must be >= Dt")
    n = round(v["T"] / v["Dt"])
    need("T", abs(n * v["Dt"] - v["T"]) <= 1e-9 * v["T"], "must be a multiple of Dt")
    need("epsAbs", v["epsAbs"] > 0, "must be positive")
    need("epsRel", v["epsRel"] > 0, "must be positive")
    need("dtMin", v["dtMin"] > 0, "must be positive")
    need("nTraj", v["nTraj"] >= 1, "must be >= 1")
    need("jobs", v["jobs"] >= 1, "must be >= 1")
    need("seed", 0 <= v["seed"] < 2 ** 63, "must lie in [0, 2**63)")
    need("cutoff", v["cutoff"] >= 2, "must be >= 2")
    need("kappa", v["kappa"] > 0, "must be positive")
    need("nTh", v["nTh"] >= 0, "must be non-negative")
    need("n0", 0 <= v["n0"] < v["cutoff"], "must lie in [0, cutoff)")
    need("KRatio", v["KRatio"] >= 1, "must be >= 1")
    need("kCutoff", v["kCutoff"] >= v["KRatio"], "must be >= KRatio")
    need("kWidth", v["kWidth"] > 0, "must be positive")
    if v["model"] == "particle":
        need("method", v["method"] in ("stepwise", "integrating", "master"),
             "oracles exist for the mode model only")
    if v["method"].startswith("oracle"):
        need("eta", v["eta"] == 0, "the birth-death oracle needs eta=0")
        need("alpha", v["alpha"] is None, "the birth-death oracle needs a Fock input")
    if v["sampling"] == "equal-steps":
        need("nTraj", v["nTraj"] == 1 and v["method"] == "stepwise",
             "equal-steps sampling needs a single stepwise trajectory")


def build_system(cfg: RunConfig):
    if cfg.model == "mode":
        p = ModeParams(cutoff=cfg.cutoff, kappa=cfg.kappa, nTh=cfg.nTh, eta=cfg.eta,
                       delta=cfg.delta)
        system = make_mode_system(p, cfg.picture)
        if cfg.alpha is not None:
            psi, _ = coherent_state(cfg.alpha, cfg.cutoff)
        else:
            psi = fock(cfg.n0, cfg.cutoff)
        return system, psi
    p = ParticleParams(k_cutoff=cfg.kCutoff, omega_rec=cfg.omegaRec, V=cfg.V,
                       K_ratio=cfg.KRatio)
    system = make_particle_system(p, cfg.picture)
    k = wave_numbers(cfg.kCutoff).astype(float)
    psi = np.exp(-0.25 * (k / cfg.kWidth) ** 2).astype(np.complex128)
    return system, psi / np.linalg.norm(psi)


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_series(path, series: TimeSeries):
    cols = [c for c in COLUMNS if c in series.values]
    cols += [c for c in series.values if c not in cols]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + cols)
        for i, t in enumerate(series.grid):
            w.writerow([_fmt(t)] + [_fmt(series[c][i]) for c in cols])


def write_stats(path, stats: dict):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in stats.items():
            w.writerow([k, _fmt(v)])


def write_manifest(path, cfg: RunConfig, argv):
    import numba
    import scipy
    lines = [f"# mcwf {__version__}, numpy {np.__version__}, scipy {scipy.__version__}, "
             f"numba {numba.__version__}",
             "# command: mcwf " + " ".join(argv)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines + cfg.manifest_lines()) + "\n")


def _oracle_series(cfg, grid):
    spec = ChainSpec(cfg.kappa, cfg.nTh)
    states = np.zeros((cfg.nTraj, grid.size))
    if cfg.method == "oracle-gillespie":
        for i in range(cfg.nTraj):
            path = gillespie_trajectory(cfg.n0, spec, cfg.T, seed=(cfg.seed, i))
            states[i] = [state_at(path, cfg.n0, t) for t in grid]
    else:
        states = discrete_chain_ensemble(cfg.n0, spec, cfg.dpLimit, cfg.Dt, cfg.T,
                                         cfg.nTraj, seed=cfg.seed, return_path=True)
    mean = states.mean(axis=0)
    series = TimeSeries(grid, {"re_a": np.zeros_like(mean), "im_a": np.zeros_like(mean),
                               "n": mean, "var_n": states.var(axis=0)})
    return series, {"n_traj": cfg.nTraj, "final_mean_n": float(mean[-1])}


def run(cfg: RunConfig, argv=()) -> int:
    """Execute a resolved configuration and write its artifacts; returns 0."""
    os.makedirs(cfg.output, exist_ok=True)
    ode_ctl = StepControl(eps_abs=cfg.epsAbs, eps_rel=cfg.epsRel, dt_min=cfg.dtMin)
    grid = np.arange(int(round(cfg.T / cfg.Dt)) + 1) * cfg.Dt
    stats = {"method": cfg.method, "model": cfg.model, "picture": cfg.picture}
    if cfg.method.startswith("oracle"):
        series, extra = _oracle_series(cfg, grid)
        stats.update(extra)
    else:
        system, psi = build_system(cfg)
        if cfg.method == "master":
            series = evolve_master(density_matrix(psi), system, cfg.Dt, cfg.T, ode_ctl)
        elif cfg.method == "stepwise" and cfg.sampling == "equal-steps":
            ctl = DpControls(cfg.dpLimit, cfg.Dt, cfg.T, cfg.dpOvershoot)
            rec = run_trajectory(psi, system, ctl, ode_ctl, cfg.seed, 0, record_steps=True,
                                 renormalize=cfg.renormalize)
            series = TimeSeries.from_expectations(rec.grid, rec.observables)
            stats.update(rec.stats)
            steps = rec.steps
            stats["time_average_n"] = time_average(
                list(zip(steps["n"], steps["dt"])), "equal-steps")
            stats["unweighted_step_average_n"] = float(np.mean(steps["n"]))
        else:
            if cfg.method == "stepwise":
                ctl = DpControls(cfg.dpLimit, cfg.Dt, cfg.T, cfg.dpOvershoot)
            else:
                ctl = IntegratingControls(cfg.Dt, cfg.T, cfg.normTol, cfg.maxIters)
            ens = run_ensemble(cfg.method, system, psi, ctl, cfg.nTraj, cfg.seed, ode_ctl,
                               jobs=cfg.jobs, renormalize=cfg.renormalize,
                               keep_samples=False)
            series = ens.mean
            stats.update(ens.as_dict())
            if cfg.method == "stepwise" and ens.inv_rate_n.sum() > 0:
                stats["predicted_mean_dt"] = ens.predicted_mean_dt(cfg.dpLimit)
            if cfg.nTraj == 1:
                stats["time_average_n"] = time_average(
                    [(v, None) for v in series["n"]], "equal-time")
    write_series(os.path.join(cfg.output, "series.csv"), series)
    write_stats(os.path.join(cfg.output, "stats.csv"), stats)
    write_manifest(os.path.join(cfg.output, "manifest"), cfg, list(argv))
    return 0


def error_record(exc: BaseException) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc),
           "exit_code": getattr(exc, "exit_code", 3)}
    for attr in ("key", "failed_indices", "codes", "tail_weight"):
        val = getattr(exc, attr, None)
        if val is not None:
            rec[attr] = val
    return rec


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = parse_config(argv)
        return run(cfg, argv)
    except MCWFError as exc:
        rec = error_record(exc)
    except (ValueError, OSError) as exc:
        # parameter objects raise plain ValueError on bad physics input
        rec = error_record(exc)
        rec["exit_code"] = 2
    except Exception as exc:  # noqa: BLE001
        rec = error_record(exc)
        rec["exit_code"] = 3
    print(json.dumps(rec, default=str), file=sys.stderr)
    return int(rec["exit_code"])


if __name__ == "__main__":
    sys.exit(main())
