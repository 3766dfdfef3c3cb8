"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 some samples could not be
delivered within the simulation horizon, 4 calibration target unreachable.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import constellation as cst
from .config import ConfigError, default_config_path, dump_config, load_config
from .experiments import (masking_csv, masking_experiment, region_scores_csv, sweep_csv,
                          sweep_offload)
from .orchestrator import Pipeline, train_confidence, write_outputs

OUTPUT_ENV = "SATGROUND_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_INCOMPLETE, EXIT_CALIBRATION = 0, 2, 3, 4

log = logging.getLogger("satground")


def _fractions(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError("fractions must lie in [0, 1]")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", default=None,
                        help="scenario YAML (default: the bundled scenario)")
    common.add_argument("-o", "--output-dir", default=None,
                        help=f"output directory (default: ${OUTPUT_ENV} or ./satground-out)")
    common.add_argument("--seed", type=int, default=None, help="override samples.seed")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="satground", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="simulate the scenario")
    run.add_argument("--policy", default=None,
                     choices=["Progressive", "SatelliteOnly", "GroundOnly",
                              "ConfidenceAfterFullInference", "RandomOffload"])
    run.add_argument("--fraction", type=float, default=None, help="RandomOffload share")

    train = sub.add_parser("train-confidence", parents=[common],
                           help="train the confidence network and save it")
    train.add_argument("--model-out", default=None, help="default: <output-dir>/confidence.pcn")
    train.add_argument("--samples", type=int, default=None,
                       help="override confidence.train_samples")

    sub.add_parser("contact-report", parents=[common], help="write contact windows as CSV")

    sweep = sub.add_parser("sweep", parents=[common], help="mean simi versus offload share")
    sweep.add_argument("--fractions", type=_fractions,
                       default=[i / 10 for i in range(11)])
    sweep.add_argument("--preprocess", action="store_true",
                       help="filter offloaded images before ground inference")

    mask = sub.add_parser("mask-experiment", parents=[common],
                          help="random / ideal / attention masking on detection tasks")
    mask.add_argument("--fractions", type=_fractions, default=[0.0, 0.2, 0.4, 0.6, 0.8])
    mask.add_argument("--count", type=int, default=500)

    cal = sub.add_parser("calibrate-mask", parents=[common],
                         help="solve the elevation mask for the target contact fraction")
    cal.add_argument("--target", type=float, default=None,
                     help="override constellation.calibration_target")
    return p


def _output_dir(args) -> Path:
    out = Path(args.output_dir or os.environ.get(OUTPUT_ENV) or "satground-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    path = Path(args.config) if args.config else default_config_path()
    cfg = load_config(path)
    if args.seed is not None:
        cfg = cfg.with_updates(samples__seed=args.seed)
    return cfg


def _write_resolved(cfg, out: Path):
    (out / "resolved_config.yaml").write_text(dump_config(cfg))


def cmd_run(args, cfg, out):
    if args.policy or args.fraction is not None:
        policy = {"name": args.policy or cfg.policy.name, "seed": cfg.policy.seed}
        if args.fraction is not None:
            policy["fraction"] = args.fraction
        cfg = cfg.with_updates(policy=policy)
    _write_resolved(cfg, out)
    result = Pipeline(cfg).run()
    paths = write_outputs(result, out)
    m = result.metrics
    print(f"{result.policy}: {m.n_samples} samples, offload fraction {m.offload_fraction:.3f}, "
          f"mean simi {m.mean_simi}, mean latency {m.mean_latency_s} s")
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    if m.n_incomplete:
        print(f"{m.n_incomplete} samples did not reach the ground station within the horizon",
              file=sys.stderr)
        return EXIT_INCOMPLETE
    return EXIT_OK


def cmd_train(args, cfg, out):
    net = train_confidence(cfg, args.samples)
    path = Path(args.model_out) if args.model_out else out / "confidence.pcn"
    net.save(path)
    print(f"saved {path}; final loss {net.loss_history_[-1] if net.loss_history_ else None}")
    return EXIT_OK


def cmd_contacts(args, cfg, out):
    c = cfg.constellation
    gs = c.ground_station.spec()
    lines = ["sat_id,gs_id,start_s,end_s"]
    fractions = []
    for sat in c.satellites:
        windows = cst.contact_windows(sat.spec(), gs, c.horizon_s, c.step_s)
        fractions.append(cst.contact_fraction(windows, c.horizon_s))
        lines += [f"{sat.id},{c.ground_station.id},{w.start_s!r},{w.end_s!r}" for w in windows]
    path = out / "contacts.csv"
    path.write_text("\n".join(lines) + "\n")
    print(f"mean contact fraction {sum(fractions) / len(fractions):.6f}; wrote {path}")
    return EXIT_OK


def cmd_sweep(args, cfg, out):
    rows = sweep_offload(Pipeline(cfg), args.fractions, preprocess=args.preprocess,
                         seed=cfg.policy.seed)
    (out / "sweep.csv").write_text(sweep_csv(rows))
    _write_resolved(cfg, out)
    for r in rows:
        print(f"{r.fraction:.2f}  ranked {r.confidence_ranked:.4f}  random {r.random:.4f}")
    return EXIT_OK


def cmd_mask(args, cfg, out):
    result = masking_experiment(Pipeline(cfg), args.fractions, args.count)
    (out / "masking.csv").write_text(masking_csv(result.rows))
    (out / "region_scores.csv").write_text(region_scores_csv(result.region_scores))
    _write_resolved(cfg, out)
    for r in result.rows:
        print(f"{r.fraction:.3f}  {r.strategy:<20} {r.mean_simi:.4f}")
    return EXIT_OK


def cmd_calibrate(args, cfg, out):
    c = cfg.constellation
    target = c.calibration_target if args.target is None else args.target
    try:
        mask, frac = cst.calibrate_mask([s.spec() for s in c.satellites],
                                        c.ground_station.spec(), c.horizon_s, target,
                                        c.calibration_tolerance, c.step_s)
    except cst.CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    cfg = cfg.with_updates(constellation__ground_station__min_elevation_deg=mask,
                           constellation__calibration_target=target)
    _write_resolved(cfg, out)
    print(f"elevation mask {mask!r} deg gives contact fraction {frac:.6f} (target {target})")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "train-confidence": cmd_train, "contact-report": cmd_contacts,
            "sweep": cmd_sweep, "mask-experiment": cmd_mask, "calibrate-mask": cmd_calibrate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        out = _output_dir(args)
        return COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
