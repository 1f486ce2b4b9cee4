"""Command-line entry point: ``srnet <train|infer|eval|ablate|gradcheck|synth>``.

Directory layout shared by the subcommands::

    synth out/      -> out/frames/00000.ppm ..., out/masks/00000.pgm ...
    train out/      -> out/params/*.srtn, out/config.txt, out/loss.csv
    infer out/      -> out/00000.pgm ... (label maps)
"""

from __future__ import annotations

import argparse
import csv
import glob
import logging
import os
import sys
import time

import numpy as np

from . import io
from .gradcheck import GATE, format_table, run_checks
from .metrics import EvalReport, score_sequence
from .pipeline import (DEFAULT_VARIANTS, RunConfig, ablate, format_ablation, new_state,
                       register_first, step, train_toy)
from .synth import SequenceSpec, generate, teleport_sequence
from .tensor import no_grad

log = logging.getLogger("srnet")


def _sorted_files(directory: str, exts) -> list:
    files = [f for ext in exts for f in glob.glob(os.path.join(directory, f"*{ext}"))]
    return sorted(files)


def _read_config(path: str | None) -> tuple[RunConfig, dict]:
    kv = io.read_kv(path) if path else {}
    return RunConfig.from_kv(kv), kv


def cmd_synth(args) -> int:
    spec = SequenceSpec.from_kv(io.read_kv(args.spec))
    frames, labels = generate(spec)
    os.makedirs(os.path.join(args.out, "frames"), exist_ok=True)
    os.makedirs(os.path.join(args.out, "masks"), exist_ok=True)
    for t in range(len(frames)):
        io.write_ppm(os.path.join(args.out, "frames", f"{t:05d}.ppm"), frames[t])
        io.write_pgm(os.path.join(args.out, "masks", f"{t:05d}.pgm"), labels[t].astype(np.uint8))
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg, _ = _read_config(args.config)
    spec = SequenceSpec.from_kv(io.read_kv(args.spec))

    def report(it, loss):
        if it % args.print_every == 0:
            print(f"iter {it:4d}  loss {loss:.5f}", flush=True)

    result = train_toy(spec, cfg, callback=report)
    os.makedirs(args.out, exist_ok=True)
    io.save_params(result.params, os.path.join(args.out, "params"))
    io.write_kv(os.path.join(args.out, "config.txt"), cfg.to_kv())
    with open(os.path.join(args.out, "loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        w.writerows((i, repr(v)) for i, v in enumerate(result.losses))
    print(f"trained {len(result.losses)} iterations in {result.seconds:.1f}s, "
          f"final loss {result.losses[-1]:.5f}; saved to {args.out}")
    return 0


def _config_for_params(params_dir: str, explicit: str | None) -> RunConfig:
    if explicit:
        return _read_config(explicit)[0]
    for cand in (os.path.join(params_dir, "config.txt"), os.path.join(os.path.dirname(os.path.abspath(params_dir)), "config.txt")):
        if os.path.exists(cand):
            return RunConfig.from_kv(io.read_kv(cand))
    raise SystemExit(f"no config.txt next to {params_dir}; pass --config")


def cmd_infer(args) -> int:
    cfg = _config_for_params(args.params, args.config)
    params = io.load_params(args.params, dtype=cfg.np_dtype)
    paths = _sorted_files(args.frames, (".ppm", ".srtn"))
    if not paths:
        raise SystemExit(f"no .ppm or .srtn frames in {args.frames}")
    mask0 = io.read_labels(args.mask0)
    os.makedirs(args.out, exist_ok=True)
    io.write_pgm(os.path.join(args.out, "00000.pgm"), mask0.astype(np.uint8))
    state = new_state(cfg, params)
    with no_grad():
        register_first(state, io.read_frame(paths[0]), mask0)
        t0 = time.perf_counter()
        for t, path in enumerate(paths[1:], start=1):
            _, labels = step(state, io.read_frame(path))
            io.write_pgm(os.path.join(args.out, f"{t:05d}.pgm"), labels.astype(np.uint8))
        elapsed = time.perf_counter() - t0
    n = len(paths) - 1
    fps = n / elapsed if n and elapsed > 0 else float("nan")
    print(f"segmented {n} frames ({state.n_objects} objects) in {elapsed:.2f}s: {fps:.2f} FPS")
    return 0


def _label_stack(directory: str) -> tuple[list, np.ndarray]:
    files = _sorted_files(directory, (".pgm",))
    return [os.path.basename(f) for f in files], np.stack([io.read_labels(f) for f in files])


def _sequences(gt_dir: str) -> list:
    subdirs = sorted(d for d in os.listdir(gt_dir) if os.path.isdir(os.path.join(gt_dir, d)))
    return subdirs or [""]


def cmd_eval(args) -> int:
    report = EvalReport()
    for seq in _sequences(args.gt):
        g_names, gt = _label_stack(os.path.join(args.gt, seq))
        p_names, pred = _label_stack(os.path.join(args.pred, seq))
        if g_names != p_names:
            raise SystemExit(f"prediction and ground-truth files differ in {seq or args.gt}")
        name = seq or os.path.basename(os.path.normpath(args.gt))
        for obj, (j, f) in score_sequence(pred, gt).items():
            report.add(name, obj, j, f)
    report.to_csv(args.report)
    print(report.summary())
    return 0


def cmd_ablate(args) -> int:
    cfg, kv = _read_config(args.config)
    if args.spec:
        specs = [SequenceSpec.from_kv(io.read_kv(args.spec))]
    elif any(k.startswith("spec.") for k in kv):
        specs = [SequenceSpec.from_kv({k: v for k, v in kv.items() if k.startswith("spec.")})]
    else:
        specs = [teleport_sequence(cfg.seed)]
    wanted = kv.get("ablate.variants")
    variants = DEFAULT_VARIANTS
    if wanted is not None:
        wanted = [wanted] if isinstance(wanted, str) else list(wanted)
        known = dict(DEFAULT_VARIANTS)
        missing = [w for w in wanted if w not in known]
        if missing:
            raise SystemExit(f"unknown variants {missing}; known: {', '.join(known)}")
        variants = [(w, known[w]) for w in wanted]
    rows = ablate(cfg, specs, variants)
    print(format_ablation(rows))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "J", "F", "JF", "final_loss", "fps"])
            for r in rows:
                w.writerow([r.name, repr(r.report.J), repr(r.report.F), repr(r.report.JF),
                            repr(r.final_loss), f"{r.fps:.3f}"])
    return 0


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    try:
        results = run_checks(args.op, seed=args.seed)
    except KeyError as exc:
        raise SystemExit(str(exc.args[0]))
    print(format_table(results))
    worst = max(e for errs in results.values() for e in errs.values())
    print(f"max relative error {worst:.3e} (gate {GATE:g}) in {time.perf_counter() - t0:.1f}s")
    return 0 if worst <= GATE else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srnet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic sequence to PPM frames and PGM label maps")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train on one synthetic sequence")
    p.add_argument("--spec", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--print-every", type=int, default=20)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="segment a frame directory from its first-frame mask")
    p.add_argument("--params", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--mask0", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="defaults to config.txt beside the params directory")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score predicted label maps against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and score module toggles under one budget")
    p.add_argument("--config", required=True)
    p.add_argument("--spec")
    p.add_argument("--out", help="optional CSV of the table")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--op", action="append", help="restrict to this op (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
