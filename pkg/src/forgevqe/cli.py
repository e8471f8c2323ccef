"""Command-line experiment runner.

``forge-vqe <command> --config run.ini [--out DIR] [--threads N] [--resume CKPT]``

Exit status: 0 on success, 1 when a computation fails, 2 for invalid input
(no output files are written in that case).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .adapt import plain_state, run_adapt, summary_row
from .config import ConfigError, ExperimentConfig, load_config
from .fermion import fermi_hubbard
from .forge import ForgingError, build_reference, run_edef, schmidt_of
from .oracle import solve
from .persistence import CheckpointError, load_checkpoint, save_checkpoint, write_csv, write_trace
from .resources import generator_cnots, pauli_strings
from .schmidt import degenerate_groups, entropy, max_entropy, truncation_infidelity

log = logging.getLogger("forgevqe")

COMMANDS = ("scan", "schmidt", "adapt", "edef", "oracle", "resources")
SUMMARY_COLUMNS = ("cuts", "N_q", "N_it", "eps_E", "I_conv", "r")


class InputError(Exception):
    """Raised before any output is produced; maps to exit status 2."""


def _g(x) -> str:
    return format(float(x), ".12g")


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _summary(out: Path, row: dict) -> None:
    vals = [str(row["cuts"]), str(row["N_q"]), str(row["N_it"]),
            _g(row["eps_E"]), _g(row["I_conv"]), _g(row["r"])]
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, [vals])
    print(" ".join(f"{k}={v}" for k, v in zip(SUMMARY_COLUMNS, vals)))


def _first_cut(model):
    table = model.table
    return table.block(1, "A")


# ------------------------------------------------------------------ commands


def cmd_scan(cfg: ExperimentConfig, args) -> int:
    if cfg.kind != "fh":
        raise InputError("scan sweeps the Fermi-Hubbard inter-cluster hopping; use kind = fh")
    p = cfg.model_params
    header = ["t_m", "S", "S_norm"] + [f"lambda_{i + 1}" for i in range(cfg.n_values)] + \
        [f"I_{i + 1}" for i in range(cfg.n_values)]
    rows = []
    worst = 0.0
    for tm in cfg.scan_t_m:
        model = fermi_hubbard(p["n_sites"], p["t"], tm, p["u"], p["n_up"], p["n_down"])
        ground = solve(model)
        sd = schmidt_of(model, ground, _first_cut(model))
        vals = list(sd.values[: cfg.n_values]) + [0.0] * max(0, cfg.n_values - sd.values.size)
        infs = [truncation_infidelity(sd, n + 1) for n in range(cfg.n_values)]
        s = entropy(sd)
        rows.append([_g(tm), _g(s), _g(s / max_entropy(sd.cut))] + [_g(v) for v in vals] + [_g(v) for v in infs])
        worst = max(worst, truncation_infidelity(sd, cfg.scan_chi))
    out = _out(args)
    write_csv(out / "scan.csv", header, rows)
    print(f"points={len(rows)} chi={cfg.scan_chi} max_I_chi={_g(worst)}")
    return 0


def cmd_schmidt(cfg: ExperimentConfig, args) -> int:
    model = cfg.model()
    ground = solve(model)
    sd = schmidt_of(model, ground, _first_cut(model))
    group_of = {}
    for gid, grp in enumerate(degenerate_groups(sd.values)):
        for i in grp:
            group_of[i] = gid
    rows = []
    for i, v in enumerate(sd.values):
        label = "/".join(str(x) for x in sd.labels[i]) if sd.labels[i] is not None else ""
        rows.append([str(i + 1), _g(v), _g(v * v), label, str(group_of.get(i, -1)),
                     _g(truncation_infidelity(sd, i + 1))])
    out = _out(args)
    write_csv(out / "schmidt.csv", ["index", "lambda", "lambda_sq", "sector", "group", "I_n"], rows)
    s = entropy(sd)
    print(f"S={_g(s)} S_norm={_g(s / max_entropy(sd.cut))} rank={sd.rank}")
    return 0


def cmd_oracle(cfg: ExperimentConfig, args) -> int:
    model = cfg.model()
    ground = solve(model)
    row = [model.name, str(model.n_modes), str(ground.basis.dim), _g(ground.energy),
           _g(ground.residual), str(ground.eigenspace.shape[1]),
           str(ground.n_iter)]
    out = _out(args)
    write_csv(out / "oracle.csv",
              ["model", "n_modes", "dim", "energy", "residual", "multiplicity", "solver_iterations"], [row])
    print(f"energy={_g(ground.energy)} dim={ground.basis.dim} residual={_g(ground.residual)}")
    return 0


def _meta(cfg: ExperimentConfig, engine: str) -> dict:
    p = {k: v for k, v in cfg.model_params.items() if k not in ("text", "interaction")}
    if "text" in cfg.model_params:
        p["interaction_sha256"] = hashlib.sha256(cfg.model_params["text"].encode()).hexdigest()
    return {"engine": engine, "cuts": cfg.cuts if engine == "edef" else 0, "kind": cfg.kind, "model": p}


def _engine(cfg: ExperimentConfig, args, engine: str):
    """Run (or resume) the adaptive loop; returns ``(records, state, n_q, out)``."""
    model = cfg.model()
    meta = _meta(cfg, engine)
    resume = None
    if args.resume:
        state, records, saved = load_checkpoint(args.resume)
        if saved != json.loads(json.dumps(meta)):
            raise InputError("checkpoint was written for a different configuration")
        resume = (state, records)
    opts = cfg.loop_options()
    ground = solve(model)
    if engine == "adapt":
        vs = plain_state(model)
    else:
        try:
            vs = build_reference(model, ground, cfg.cuts, cfg.forge_options())
        except ForgingError as exc:
            raise InputError(f"model cannot be forged: {exc}") from None
    records = None
    if resume is not None:
        try:
            vs.load_dict(resume[0])
        except (KeyError, ValueError) as exc:
            raise InputError(f"checkpoint does not fit the configuration: {exc}") from None
        records = resume[1]
    out = _out(args)

    def on_record(state, recs):
        r = recs[-1]
        log.info("iter %d E=%.10f I=%.3e grad=%.3e %s %s", r.iteration, r.energy, r.infidelity,
                 r.max_gradient, r.circuit_id, r.generator_id)
        save_checkpoint(out / "checkpoint.json", state.to_dict(), recs, meta)
        write_trace(out / "trace.csv", recs)

    if engine == "adapt":
        records, vs = run_adapt(model, opts, ground, vs, records, on_record)
        n_q = model.n_modes
    else:
        records, vs = run_edef(model, cfg.cuts, opts, None, ground, vs, records, on_record)
        n_q = max(len(b) for b in vs.blocks)
    save_checkpoint(out / "checkpoint.json", vs.to_dict(), records, meta)
    write_trace(out / "trace.csv", records)
    return records, vs, n_q, out


def cmd_adapt(cfg: ExperimentConfig, args) -> int:
    records, _, n_q, out = _engine(cfg, args, "adapt")
    _summary(out, summary_row(records, 0, n_q))
    return 0


def cmd_edef(cfg: ExperimentConfig, args) -> int:
    if cfg.cuts not in (1, 2):
        raise InputError("edef needs [run] cuts = 1 or 2")
    records, _, n_q, out = _engine(cfg, args, "edef")
    _summary(out, summary_row(records, cfg.cuts, n_q))
    return 0


def cmd_resources(cfg: ExperimentConfig, args) -> int:
    engine = "adapt" if cfg.cuts == 0 else "edef"
    records, vs, n_q, out = _engine(cfg, args, engine)
    rows = []
    for name, circ in vs.circuits.items():
        total = 0
        for k, g in enumerate(circ.operators):
            c = generator_cnots(g)
            total += c
            rows.append([name, str(k + 1), g.label, str(len(pauli_strings(g.indices))), str(c), str(total)])
    write_csv(out / "resources.csv", ["circuit", "position", "generator", "pauli_strings", "cnots", "cumulative"], rows)
    _summary(out, summary_row(records, cfg.cuts, n_q))
    return 0


HANDLERS = {
    "scan": cmd_scan, "schmidt": cmd_schmidt, "adapt": cmd_adapt,
    "edef": cmd_edef, "oracle": cmd_oracle, "resources": cmd_resources,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="forge-vqe", description="ADAPT-VQE and entanglement forging experiments")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="INI experiment file")
    ap.add_argument("--out", default="forge-vqe-out", help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
    ap.add_argument("--resume", default=None, help="checkpoint to continue from")
    ap.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        threads = args.threads if args.threads is not None else cfg.threads
        if threads is not None and threads < 1:
            raise ConfigError("--threads must be positive")
        if args.resume and args.command not in ("adapt", "edef", "resources"):
            raise ConfigError(f"--resume does not apply to {args.command}")
        try:
            cfg.model()
        except ValueError as exc:
            raise ConfigError(f"invalid model: {exc}") from None
        with threadpool_limits(limits=threads):
            return HANDLERS[args.command](cfg, args)
    except (ConfigError, CheckpointError, InputError) as exc:
        print(f"forge-vqe: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"forge-vqe: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
