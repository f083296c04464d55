"""Command-line front end.

Every subcommand reads an optional config file, applies flag overrides, writes
its artifacts into the output directory and prints one summary line.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import edmd, eigen, evaluation, plotting
from .config import (BANK_KEYS, DATASET_KEYS, RunConfig, config_from_mapping, dump_config, fingerprint,
                     load_config, resolve_params)
from .dynamics import SimulationFault, input_dim, make_model, simulate, state_dim, write_trajectory_csv
from .lstsq import RankCollapse
from .params import ConfigError, dump_params, parse_kv_text

log = logging.getLogger("koopvd")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISMATCH = 4
EXIT_NUMERIC = 5

WORKFLOWS = ("simulate", "gen-dataset", "fit-edmd", "fit-eigen", "evaluate", "sweep")


class ArtifactMismatch(ValueError):
    """Loaded artifacts disagree in fingerprint or dimensions."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"koopvd: usage error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def parse_orders(text: str) -> tuple:
    """``1..10`` or ``1,3,5`` or a mix like ``1..3,7``."""
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError(f"empty order list {text!r}")
    return tuple(out)


# --------------------------------------------------------------------------
# context


@dataclasses.dataclass
class Context:
    cfg: RunConfig
    vp: object
    tp: object
    out: Path

    def fp(self, keys=None) -> str:
        return fingerprint(self.cfg, self.vp, self.tp, keys)

    def path(self, name: str) -> Path:
        return self.out / name


def _meta_sidecar(path: Path, items: Dict[str, str]) -> None:
    path.with_suffix(path.suffix + ".meta").write_text("".join(f"{k} = {v}\n" for k, v in sorted(items.items())))


def _read_meta_sidecar(path: Path) -> Dict[str, str]:
    p = Path(str(path) + ".meta")
    return parse_kv_text(p.read_text(), str(p)) if p.exists() else {}


# --------------------------------------------------------------------------
# workflows


def cmd_simulate(ctx: Context) -> str:
    cfg = ctx.cfg
    n, m = state_dim(cfg.model), input_dim(cfg.model)
    x0 = np.asarray(cfg.x0 or (0.0,) * n, dtype=float)
    u = np.asarray(cfg.inputs or (0.0,) * m, dtype=float)
    if x0.shape != (n,) or u.shape != (m,):
        raise ArtifactMismatch(f"model {cfg.model} needs x0 of length {n} and inputs of length {m}, "
                               f"got {x0.size} and {u.size}")
    f = make_model(cfg.model, ctx.vp, ctx.tp)
    traj = simulate(f, x0, u, cfg.Ts, cfg.n_steps)
    csv_path = ctx.path("trajectory.csv")
    write_trajectory_csv(csv_path, traj, cfg.Ts)
    fp = ctx.fp(("model", "Ts", "x0", "inputs", "n_steps"))
    _meta_sidecar(csv_path, {"fingerprint": fp, "model": cfg.model})
    svg = ctx.path("trajectory.svg")
    plotting.emit_plot(csv_path, "trajectory", svg, fp)
    return f"simulate model={cfg.model} steps={cfg.n_steps} final={_fmt_vec(traj[-1])} -> {csv_path} {svg}"


def _dataset(ctx: Context, write: bool = True):
    cfg = ctx.cfg
    if cfg.dataset:
        ds = edmd.load_dataset(cfg.dataset)
        if "fingerprint" not in ds.meta:
            raise ArtifactMismatch(f"{cfg.dataset}: dataset carries no fingerprint")
        return ds, Path(cfg.dataset)
    ds = edmd.generate_grid_dataset(ctx.vp, cfg.ranges, cfg.grid_counts, cfg.force_levels, cfg.n_force, cfg.Ts,
                                    cfg.force_mode, cfg.seed)
    ds.meta["fingerprint"] = ctx.fp(DATASET_KEYS)
    path = ctx.path("dataset.csv")
    if write:
        edmd.save_dataset(path, ds)
    return ds, path


def cmd_gen_dataset(ctx: Context) -> str:
    if ctx.cfg.dataset:
        raise ConfigError("gen-dataset writes a new dataset; unset 'dataset'")
    ds, path = _dataset(ctx)
    return f"gen-dataset rows={ds.K} fingerprint={ds.meta['fingerprint']} -> {path}"


def cmd_fit_edmd(ctx: Context) -> str:
    ds, ds_path = _dataset(ctx)
    basis = edmd.build_polynomial_basis(ctx.cfg.order)
    model = edmd.fit_predictor(ds, basis)
    obj = edmd.edmd_objective(ds, basis, model.A, model.B, relative=True)
    path = Path(ctx.cfg.predictor) if ctx.cfg.predictor else ctx.path("predictor_edmd.txt")
    edmd.save_predictor(path, model, {"kind": "edmd", "data_fingerprint": ds.meta["fingerprint"],
                                      "fingerprint": ctx.fp(DATASET_KEYS + ("order",))})
    return f"fit-edmd order={basis.order} n_lift={basis.dim} rel_objective={obj:.6g} -> {path}"


def _bank_paths(ctx: Context):
    if ctx.cfg.bank:
        base = Path(ctx.cfg.bank)
        return base.with_name(base.name + "_states.csv"), base.with_name(base.name + "_psi.txt")
    return ctx.path("bank_states.csv"), ctx.path("bank_psi.txt")


def cmd_fit_eigen(ctx: Context) -> str:
    cfg = ctx.cfg
    bank, model, _ = eigen.eigen_pipeline(ctx.vp, ctx.tp, cfg.energy, cfg.n_theta, cfg.n_phi, cfg.bank_T, cfg.Ts,
                                          cfg.bank_inputs, cfg.lattice_order, cfg.lattice_cap, cfg.n_centers,
                                          cfg.seed, cfg.output_rcond)
    fp = ctx.fp(BANK_KEYS)
    bank.meta["fingerprint"] = fp
    states_path, psi_path = _bank_paths(ctx)
    eigen.save_bank(states_path, psi_path, bank)
    residual = eigen.bank_output_residual(bank, model.C)
    rel = np.sqrt(residual / np.sum(bank.states**2))
    path = Path(cfg.predictor) if cfg.predictor else ctx.path("predictor_eigen.txt")
    edmd.save_predictor(path, model, {"kind": "eigen", "data_fingerprint": fp,
                                      "fingerprint": ctx.fp(BANK_KEYS + ("output_rcond",))})
    return (f"fit-eigen n_traj={bank.n_traj} n_lambda={len(bank.eigenvalues)} n_lift={bank.n_lift} "
            f"bank_rel_residual={rel:.4g} -> {path} {states_path} {psi_path}")


def _check_fingerprint(pred_meta: Dict[str, str], data_fp: str, pred_path, data_path) -> None:
    got = pred_meta.get("data_fingerprint", "")
    if not got or not data_fp or got != data_fp:
        raise ArtifactMismatch(f"fingerprint mismatch: predictor {pred_path} was fitted on data {got or '?'}, "
                               f"{data_path} has {data_fp or '?'}")


def cmd_evaluate(ctx: Context) -> str:
    cfg = ctx.cfg
    if cfg.model == "3state_force":
        return _evaluate_edmd(ctx)
    if cfg.model != "3state":
        raise ConfigError(f"evaluate supports models 3state (eigenfunctions) and 3state_force (EDMD), not {cfg.model}")
    pred_path = Path(cfg.predictor) if cfg.predictor else ctx.path("predictor_eigen.txt")
    states_path, psi_path = _bank_paths(ctx)
    bank = eigen.load_bank(states_path, psi_path)
    header, meta, _ = edmd.read_predictor_file(pred_path)
    _check_fingerprint(meta, bank.meta.get("fingerprint", ""), pred_path, psi_path)
    if int(header["n_lift"]) != bank.n_lift:
        raise ArtifactMismatch(f"{pred_path} lifts to {header['n_lift']} coordinates, bank provides {bank.n_lift}")
    model = edmd.load_predictor(pred_path, bank.nn_lift)
    f = make_model("3state", ctx.vp, ctx.tp)
    semi_axes = eigen.energy_semi_axes(cfg.energy, ctx.vp)
    fp = ctx.fp()
    report = evaluation.eigen_experiment(model, bank, f, semi_axes, cfg.n_test, cfg.horizon, cfg.seed,
                                         cfg.bank_inputs, fingerprint=fp,
                                         convention=cfg.rmse_convention, threads=cfg.threads)
    csv_path = ctx.path("report.csv")
    summary = evaluation.save_report(csv_path, report)
    svg = ctx.path("report.svg")
    plotting.plot_report(report.initial_conditions, report.rmse_pct, svg, report.fault, fp)
    return (f"evaluate eigen n={len(report.rmse_pct)} mean_rmse_pct={report.mean:.3f} std={report.std:.3f} "
            f"faults={report.n_faults} -> {csv_path} {summary} {svg}")


def _evaluate_edmd(ctx: Context) -> str:
    cfg = ctx.cfg
    pred_path = Path(cfg.predictor) if cfg.predictor else ctx.path("predictor_edmd.txt")
    ds_path = Path(cfg.dataset) if cfg.dataset else ctx.path("dataset.csv")
    header, meta, _ = edmd.read_predictor_file(pred_path)
    _check_fingerprint(meta, _read_meta_sidecar(ds_path).get("fingerprint", ""), pred_path, ds_path)
    model = edmd.load_predictor(pred_path)
    if model.n_inputs != 4 or model.n_outputs != 3:
        raise ArtifactMismatch(f"{pred_path}: expected 4 inputs and 3 outputs, got {model.n_inputs}/{model.n_outputs}")
    rng = np.random.default_rng(cfg.seed)
    u = rng.uniform(-cfg.restart_input_max, cfg.restart_input_max, size=(cfg.restart_steps, 4))
    f = make_model("3state_force", ctx.vp, ctx.tp)
    res = evaluation.restart_prediction(model, np.asarray(cfg.restart_x0, dtype=float), u, cfg.restart_every, f,
                                        convention=cfg.rmse_convention)
    csv_path = ctx.path("restart.csv")
    evaluation.save_restart(csv_path, res)
    fp = ctx.fp()
    _meta_sidecar(csv_path, {"fingerprint": fp, "predictor": meta.get("fingerprint", "")})
    svg = ctx.path("restart.svg")
    plotting.emit_plot(csv_path, "restart", svg, fp)
    return (f"evaluate edmd segments={len(res.segments)} mean_segment_rmse_pct={np.nanmean(res.segment_rmse):.4f} "
            f"-> {csv_path} {svg}")


def cmd_sweep(ctx: Context) -> str:
    cfg = ctx.cfg
    ds, _ = _dataset(ctx, write=False)
    f = make_model("3state_force", ctx.vp, ctx.tp)
    progress = lambda row: log.info("order %d: mean %.4g%% faults %d", row.order, row.mean_rmse_pct, row.n_faults)
    rows = evaluation.basis_sweep(cfg.orders, ds, f, cfg.sweep_n_test, cfg.sweep_horizon, cfg.seed,
                                  cfg.sweep_input_max, cfg.ranges, cfg.rmse_convention, progress, cfg.threads)
    csv_path = ctx.path("sweep.csv")
    evaluation.save_sweep(csv_path, rows)
    fp = ctx.fp()
    _meta_sidecar(csv_path, {"fingerprint": fp, "data_fingerprint": ds.meta.get("fingerprint", "")})
    svg = ctx.path("sweep.svg")
    plotting.emit_plot(csv_path, "sweep", svg, fp)
    vals = np.array([r.mean_rmse_pct for r in rows])
    best = rows[int(np.nanargmin(vals))] if np.isfinite(vals).any() else None
    best_txt = f"best_order={best.order} best_mean_rmse_pct={best.mean_rmse_pct:.4g}" if best else "best_order=none"
    return f"sweep orders={len(rows)} {best_txt} -> {csv_path} {svg}"


COMMANDS = {
    "simulate": cmd_simulate,
    "gen-dataset": cmd_gen_dataset,
    "fit-edmd": cmd_fit_edmd,
    "fit-eigen": cmd_fit_eigen,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def _fmt_vec(v) -> str:
    return "[" + ",".join(f"{x:.6g}" for x in v) + "]"


# --------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="koopvd", description="Koopman linear predictors for a singletrack vehicle model.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value run configuration file")
        sp.add_argument("--out", help="output directory (default: $KOOPVD_OUT_DIR or ./koopvd_out)")
        sp.add_argument("--params", help="vehicle/tire parameter file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help="worker threads for per-trajectory evaluation")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
        sp.add_argument("-v", "--verbose", action="store_true")

    for name in WORKFLOWS:
        sp = sub.add_parser(name)
        common(sp)
        if name == "sweep":
            sp.add_argument("--orders", help="basis orders, e.g. 1..10 or 2,4,6")
        if name in ("fit-edmd", "sweep", "simulate", "evaluate"):
            sp.add_argument("--model", help="model variant")
    run = sub.add_parser("run", help="run the workflows listed under 'workflow' in the config")
    common(run)
    pl = sub.add_parser("plot", help="render an SVG from a CSV artifact")
    pl.add_argument("--input", required=True)
    pl.add_argument("--kind", required=True, choices=plotting.PLOT_KINDS)
    pl.add_argument("--output", required=True)
    pl.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(args) -> Context:
    cfg, inline = (load_config(args.config) if args.config else (RunConfig(), {}))
    flags: Dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        flags[k.strip()] = v.strip()
    for key in ("out", "params", "seed", "threads", "orders", "model"):
        value = getattr(args, key, None)
        if value is None:
            continue
        if key == "orders":
            try:
                value = ",".join(map(str, parse_orders(value)))
            except ValueError as exc:
                raise ConfigError(f"--orders: {exc}") from None
        flags["out_dir" if key == "out" else key] = str(value)
    cfg, inline_flags = config_from_mapping(flags, cfg, source="command line")
    inline.update(inline_flags)
    vp, tp = resolve_params(cfg, inline)
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return Context(cfg, vp, tp, out)


def _workflow_list(cfg: RunConfig) -> List[str]:
    steps = [s for s in cfg.workflow.replace(",", " ").split() if s]
    if not steps:
        raise ConfigError("config has no 'workflow' entry")
    bad = [s for s in steps if s not in COMMANDS]
    if bad:
        raise ConfigError(f"unknown workflow steps {bad}; expected from {WORKFLOWS}")
    return steps


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.command == "plot":
            fp = _read_meta_sidecar(Path(args.input)).get("fingerprint", "")
            if not fp:
                summary = Path(args.input).with_suffix(".summary.txt")
                if summary.exists():
                    fp = parse_kv_text(summary.read_text()).get("fingerprint", "")
            out = plotting.emit_plot(args.input, args.kind, args.output, fp)
            print(f"plot kind={args.kind} -> {out}")
            return EXIT_OK
        ctx = _resolve(args)
        steps = _workflow_list(ctx.cfg) if args.command == "run" else [args.command]
        # resolved parameters go in too, so the file alone reproduces the run
        (ctx.out / "run_config.cfg").write_text(dump_config(dataclasses.replace(ctx.cfg, params=""))
                                                  + dump_params(ctx.vp, ctx.tp))
        for step in steps:
            print(COMMANDS[step](ctx), flush=True)
        return EXIT_OK
    except (ConfigError, plotting.PlotSchemaError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"koopvd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArtifactMismatch, KeyError) as exc:
        print(f"koopvd: artifact mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (SimulationFault, edmd.PredictionFault, RankCollapse, edmd.DatasetTooLarge, OverflowError) as exc:
        print(f"koopvd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"koopvd: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
