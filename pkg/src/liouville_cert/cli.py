"""``liouville-cert`` command-line interface."""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext

import numpy as np

from . import __version__
from .bcf import (
    HybridizationPair,
    SampledBcf,
    StationarityError,
    bcf_numeric,
    model_bcf,
    npoint_bcf,
    sample,
    super_bcf,
    wick_check,
)
from .bounds import UncertifiablePairingError, certify
from .config import ConfigError, RunConfig, load_config
from .dynamics import InstabilityError, dyson_for_model, propagate_adaptive
from .fit import RankError, fit_and_certify
from .linalg import DimensionError, trace_norm
from .models import FockLeakageError, SpecError, SpinBosonSpec, assemble
from .serialize import read_csv, write_csv, write_json

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_CONFIG", "EXIT_UNCERTIFIABLE", "EXIT_NUMERICAL"]

EXIT_OK, EXIT_CONFIG, EXIT_UNCERTIFIABLE, EXIT_NUMERICAL = 0, 2, 3, 4


class NumericalFailure(RuntimeError):
    pass


def _threads():
    raw = os.environ.get("LIOUVILLE_CERT_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("LIOUVILLE_CERT_THREADS must be a positive integer") from None
    if n < 1:
        raise ConfigError("LIOUVILLE_CERT_THREADS must be a positive integer")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _one_config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required")
    if len(args.config) != 1:
        raise ConfigError("this command takes exactly one --config")
    return load_config(args.config[0])


def _prefix(args, cfg: RunConfig | None) -> str:
    return args.out or (cfg.output if cfg else "run")


def _grid_entries(n_rows: int, n_cols: int, stem: str) -> list:
    return [(i, j, f"{stem}_{i + 1}_{j + 1}") for i in range(n_rows) for j in range(n_cols)]


# --------------------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = _one_config(args)
    T = args.horizon or cfg.T
    traj, model = propagate_adaptive(cfg.spec, T, cfg.steps, cfg.rho_s0, cfg.observables)
    ds = model.dim_sys
    entries = _grid_entries(ds, ds, "rho")
    header = ["t"] + [f"re_{name}" for *_, name in entries] + [f"im_{name}" for *_, name in entries]
    cols = [traj.times] + [traj.rho_s[:, i, j].real for i, j, _ in entries] \
        + [traj.rho_s[:, i, j].imag for i, j, _ in entries]
    for name, series in traj.observables.items():
        header += [f"re_{name}", f"im_{name}"]
        cols += [series.real, series.imag]
    path = write_csv(f"{_prefix(args, cfg)}_traj.csv", header, cols)
    print(f"wrote {path} (fock cutoff {getattr(model.spec, 'fock_cutoff', '-')})")
    return EXIT_OK


def _load_for_compare(path, T, steps):
    cfg = load_config(path)
    traj, model = propagate_adaptive(cfg.spec, T, steps, cfg.rho_s0)
    return cfg, traj, model


def cmd_compare(args) -> int:
    if not args.config or len(args.config) != 2:
        raise ConfigError("compare takes exactly two --config files")
    first = load_config(args.config[0])
    T = args.horizon or first.T
    steps = first.steps
    cfg_a, ta, ma = _load_for_compare(args.config[0], T, steps)
    cfg_b, tb, mb = _load_for_compare(args.config[1], T, steps)
    reference = None
    if args.reference:
        ref_cfg = load_config(args.reference)
        reference = assemble(ref_cfg.spec, ref_cfg.rho_s0)
    report = certify(ma, mb, T, steps, args.grid or 256, reference=reference, trajectories=(ta, tb))
    prefix = _prefix(args, cfg_a)
    report.to_csv(f"{prefix}_bounds.csv")
    report.to_json(f"{prefix}_bounds.json")
    print(f"eps1 = {report.eps_l1:.6g}, max gap = {report.empirical_gap.max():.6g}, "
          f"certified = {report.certified} ({report.route})")
    if not report.certified:
        raise NumericalFailure("measured gap exceeds the improved bound plus quadrature margin")
    return EXIT_OK


def _bcf_columns(t, values, stem, labels_prefix=""):
    p, q = values.shape[1:]
    header, cols = [], []
    for i, j, name in _grid_entries(p, q, stem):
        header += [f"re_{labels_prefix}{name}", f"im_{labels_prefix}{name}"]
        cols += [values[:, i, j].real, values[:, i, j].imag]
    return header, cols


def cmd_bcf(args) -> int:
    cfg = _one_config(args)
    T = args.horizon or cfg.T
    G = args.grid or 100
    model = assemble(cfg.spec, cfg.rho_s0)
    closed = model_bcf(cfg.spec)
    sampled = sample(closed, T, G)
    prefix = _prefix(args, cfg)
    h, c = _bcf_columns(sampled.t, sampled.samples, "c")
    write_csv(f"{prefix}_bcf.csv", ["t"] + h, [sampled.t] + c)
    analytic = super_bcf(closed)(sampled.t)
    numeric = bcf_numeric(model, sampled.t)
    ha, ca = _bcf_columns(sampled.t, analytic, "C", "analytic_")
    hn, cn = _bcf_columns(sampled.t, numeric, "C", "numeric_")
    write_csv(f"{prefix}_bcf_check.csv", ["t"] + ha + hn, [sampled.t] + ca + cn)
    dev = float(np.abs(analytic - numeric).max())
    write_json(f"{prefix}_bcf_check.json", {"max_deviation": dev, "N": model.N, "T": T, "G": G,
                                             "pair": isinstance(closed, HybridizationPair)})
    print(f"max |closed form - numerical trace| = {dev:.3e}")
    return EXIT_OK


def cmd_wick(args) -> int:
    cfg = _one_config(args)
    order = args.order or 4
    if order not in (4, 6):
        raise ConfigError("--order must be 4 or 6 for wick")
    k = args.samples or 25
    T = args.horizon or cfg.T
    model = assemble(cfg.spec, cfg.rho_s0)
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seed)
    gaps, lhs = [], []
    for _ in range(k):
        alphas = rng.integers(0, model.N, size=order)
        times = rng.uniform(0.0, T, size=order)
        l, _, gap = wick_check(model, alphas, times)
        gaps.append(gap)
        lhs.append(abs(l))
    odd = []
    for m in (order - 3, order - 1):
        for _ in range(k):
            alphas = rng.integers(0, model.N, size=m)
            times = np.sort(rng.uniform(0.0, T, size=m))[::-1]
            odd.append(abs(npoint_bcf(model, alphas, times)))
    payload = {"order": order, "samples": k, "seed": int(args.seed if args.seed is not None else cfg.seed),
               "max_gap": max(gaps), "max_abs_value": max(lhs), "max_odd_value": max(odd), "T": T}
    write_json(f"{_prefix(args, cfg)}_wick.json", payload)
    print(f"order {order}: max gap = {payload['max_gap']:.3e} over {k} tuples")
    return EXIT_OK


def cmd_dyson(args) -> int:
    cfg = _one_config(args)
    if not isinstance(cfg.spec, SpinBosonSpec):
        raise ConfigError("dyson supports spin-boson models only")
    T = args.horizon or cfg.T
    order = 2 if args.order is None else args.order
    traj, model = propagate_adaptive(cfg.spec, T, 1, cfg.rho_s0)
    C = super_bcf(model_bcf(cfg.spec))
    res = dyson_for_model(model, C, T, order, args.grid)
    full = traj.rho_s[-1]
    payload = {
        "order": order, "T": T, "grids": list(res.grids),
        "rho_dyson": [[[z.real, z.imag] for z in row] for row in res.rho],
        "rho_full": [[[z.real, z.imag] for z in row] for row in full],
        "residual_trace_norm": trace_norm(res.rho - full), "quadrature_error": res.quad_error,
    }
    write_json(f"{_prefix(args, cfg)}_dyson.json", payload)
    print(f"order {order}: ||rho_dyson - rho_full||_tr = {payload['residual_trace_norm']:.3e}")
    return EXIT_OK


def _load_bcf_csv(path) -> SampledBcf:
    header, data = read_csv(path)
    if header[:3] != ["t", "re_c_1_1", "im_c_1_1"]:
        raise ConfigError(f"{path}: expected columns t, re_c_1_1, im_c_1_1")
    return SampledBcf(data[:, 0], (data[:, 1] + 1j * data[:, 2])[:, None, None])


def _fit_target(args):
    if args.bcf:
        return None, _load_bcf_csv(args.bcf)
    cfg = _one_config(args)
    if not isinstance(cfg.spec, SpinBosonSpec) or cfg.spec.n != 1:
        raise ConfigError("fitting needs a single-spin spin-boson model (scalar correlation function)")
    return cfg, model_bcf(cfg.spec)


def cmd_fit(args) -> int:
    cfg, target = _fit_target(args)
    K = 1 if args.modes is None else args.modes
    T = args.horizon or (cfg.T if cfg else None)
    result = fit_and_certify(target, K, T, args.grid or 400)
    path = result.to_json(f"{_prefix(args, cfg)}_fit.json")
    print(f"K = {K}: L1 residual {result.residual_l1:.3e}, eps1 = {result.eps1:.3e}; wrote {path}")
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg, target = _fit_target(args)
    if cfg is None:
        raise ConfigError("certify needs a model --config (the fit is checked against it)")
    K = 1 if args.modes is None else args.modes
    T = args.horizon or cfg.T
    result = fit_and_certify(target, K, T, args.grid or 400)
    prefix = _prefix(args, cfg)
    result.to_json(f"{prefix}_fit.json")
    pseudo = result.params.to_spec(sys_hamiltonian=cfg.spec.sys_hamiltonian, sys_jumps=cfg.spec.sys_jumps)
    ta, ma = propagate_adaptive(cfg.spec, T, cfg.steps, cfg.rho_s0)
    tb, mb = propagate_adaptive(pseudo, T, cfg.steps, cfg.rho_s0)
    report = certify(ma, mb, T, cfg.steps, 256, trajectories=(ta, tb))
    report.to_csv(f"{prefix}_bounds.csv")
    report.to_json(f"{prefix}_bounds.json")
    print(f"K = {K}: eps1 = {report.eps_l1:.3e}, max gap = {report.empirical_gap.max():.3e}, "
          f"certified = {report.certified}")
    if not report.certified:
        raise NumericalFailure("measured gap exceeds the improved bound plus quadrature margin")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "compare": cmd_compare, "bcf": cmd_bcf, "wick": cmd_wick,
    "dyson": cmd_dyson, "fit": cmd_fit, "certify": cmd_certify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liouville-cert",
                                     description="Open-system propagation and trace-norm error certificates.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", action="append", metavar="PATH",
                        help="JSON run configuration (repeat for compare)")
    parser.add_argument("--out", metavar="PREFIX", help="output path prefix")
    parser.add_argument("--horizon", type=float, metavar="T", help="final time (overrides the config)")
    parser.add_argument("--grid", type=int, metavar="G", help="quadrature / sampling panels")
    parser.add_argument("--order", type=int, metavar="M", help="Dyson order or Wick correlation order")
    parser.add_argument("--modes", type=int, metavar="K", help="pseudomode count for fit/certify")
    parser.add_argument("--samples", type=int, metavar="K", help="random time tuples for wick")
    parser.add_argument("--reference", metavar="PATH", help="contractive reference configuration")
    parser.add_argument("--bcf", metavar="PATH", help="sampled correlation CSV (fit)")
    parser.add_argument("--seed", type=int, metavar="N", help="random seed (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.horizon is not None and not args.horizon > 0:
            raise ConfigError("--horizon must be positive")
        with _threads():
            return COMMANDS[args.command](args)
    except (ConfigError, SpecError, DimensionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UncertifiablePairingError as exc:
        print(f"uncertifiable pairing: {exc}", file=sys.stderr)
        return EXIT_UNCERTIFIABLE
    except (FockLeakageError, InstabilityError, StationarityError, RankError, NumericalFailure,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, NotImplementedError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
