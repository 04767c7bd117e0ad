"""Command-line entry point.

Every subcommand that builds a run configuration accepts ``--config FILE``
(flat ``key = value`` text) and one flag per configuration field; flags win
over the file, the file wins over the defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import typing
from dataclasses import fields
from pathlib import Path

import numpy as np
from PIL import Image

from tryon.config import RunConfig, _field_types
from tryon.data import Batch, save_dataset

log = logging.getLogger("tryon")


def add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value run configuration file")
    g = p.add_argument_group("run configuration")
    types = _field_types()
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        t = types[f.name]
        if t is bool:
            # "--flag" alone means true; "--flag false" and, for names that do not
            # already start with "no", "--no-flag" turn it off
            g.add_argument(flag, dest=f.name, nargs="?", const="true", default=None,
                           metavar="BOOL")
            if not f.name.startswith("no_"):
                g.add_argument("--no-" + f.name.replace("_", "-"), dest=f.name,
                               action="store_const", const="false")
        else:
            meta = "A,B" if typing.get_origin(t) is tuple else t.__name__.upper()
            g.add_argument(flag, dest=f.name, default=None, metavar=meta)


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)
                 if getattr(args, f.name, None) is not None}
    return cfg.with_overrides(**overrides)


def _records(cfg: RunConfig, split: str):
    from tryon.train import load_records

    recs = load_records(cfg, split)
    if not recs:
        raise SystemExit(f"no {split} records found")
    return recs


def _save_png(img, path) -> None:
    from tryon.pipeline import to_uint8

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_make_synth(args) -> int:
    from tryon.data import DEFAULT_PALETTE, generate_synthetic_dataset

    cfg = config_from_args(args)
    size = tuple(cfg.out_size)
    out = Path(args.out)
    recs = generate_synthetic_dataset(cfg.seed, args.n if args.n is not None else cfg.synth_n,
                                      size, DEFAULT_PALETTE, cfg.synth_occlusion_prob)
    pairs = save_dataset(recs, out)
    (out / "palette.txt").write_text(DEFAULT_PALETTE.to_config())
    (out / "meta.json").write_text(json.dumps({r.pair_id: r.meta for r in recs}, indent=2))
    print(f"wrote {len(recs)} records to {out} (pairs file {pairs})")
    return 0


def cmd_train_tocg(args) -> int:
    from tryon.train import train_tocg

    cfg = config_from_args(args)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    cfg.save(Path(args.out) / "config.txt")
    res = train_tocg(cfg, args.out, resume=args.resume)
    print(f"checkpoint {res.checkpoint}\nmetrics {res.log}")
    return 0


def cmd_train_toig(args) -> int:
    from tryon.train import train_toig

    cfg = config_from_args(args)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    cfg.save(Path(args.out) / "config.txt")
    res = train_toig(cfg, args.tocg, args.out, resume=args.resume)
    print(f"checkpoint {res.checkpoint}\nmetrics {res.log}")
    return 0


def cmd_calibrate(args) -> int:
    from tryon.pipeline import Pipeline, calibrate
    from tryon.rejection import threshold_sweep

    cfg = config_from_args(args)
    pipe = Pipeline.from_checkpoints(args.tocg)
    cal = calibrate(pipe, _records(cfg, "train"), cfg.rejection_threshold)
    cal.save(args.out)
    print(f"L = {cal.L:.6g} over {len(cal.scores)} samples -> {args.out}")
    for row in threshold_sweep(cal):
        print(f"  tau {row['threshold']:.2f}: accept {row['accept_rate']:.3f}")
    return 0


def cmd_reject(args) -> int:
    from tryon.pipeline import Pipeline
    from tryon.rejection import RejectionCalibration, gate, threshold_sweep

    cfg = config_from_args(args)
    cal = RejectionCalibration.load(args.calibration)
    pipe = Pipeline.from_checkpoints(args.tocg, calibration_path=args.calibration)
    recs = _records(cfg, args.split)
    d = pipe.d_scores(Batch.stack(recs)).tolist()
    rows = []
    for rec, dk in zip(recs, d):
        g = gate(dk, cal, args.threshold)
        rows.append({"pair_id": rec.pair_id, "d": dk, "p_accept": g.p, "accepted": g.accepted})
        print(f"{rec.pair_id}\tD={dk:.4f}\tp={g.p:.4f}\t{'accept' if g.accepted else 'reject'}")
    sweep = threshold_sweep(cal, d)
    if args.out:
        Path(args.out).write_text(json.dumps({"decisions": rows, "sweep": sweep}, indent=2))
    print(f"accepted {sum(r['accepted'] for r in rows)}/{len(rows)}")
    return 0


def cmd_infer(args) -> int:
    from tryon.pipeline import swap_cloth

    cfg = config_from_args(args)
    recs = _records(cfg, args.split)
    person = recs[args.person]
    cloth = recs[args.cloth if args.cloth is not None else args.person]
    if args.server:
        import httpx

        from tryon.schemas import InferRequest, InferResponse, RecordPayload

        req = InferRequest(person=RecordPayload.from_record(person),
                           cloth=RecordPayload.from_record(cloth), threshold=args.threshold)
        r = httpx.post(args.server.rstrip("/") + "/infer", json=req.model_dump(), timeout=120)
        r.raise_for_status()
        resp = InferResponse.model_validate(r.json())
        accepted, p = resp.accepted, resp.p_accept
        image = resp.image.to_tensor() if resp.image is not None else None
    else:
        from tryon.pipeline import Pipeline

        if not args.tocg:
            raise SystemExit("--tocg is required without --server")
        pipe = Pipeline.from_checkpoints(args.tocg, args.toig, args.calibration)
        res = pipe.infer(Batch.stack([swap_cloth(person, cloth)]), threshold=args.threshold)[0]
        accepted, p, image = res.accepted, res.p_accept, res.image
    summary = {"person": person.pair_id, "cloth": cloth.pair_id, "accepted": accepted,
               "p_accept": p}
    if image is not None and args.out:
        _save_png(image, args.out)
        summary["image"] = str(args.out)
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    from tryon.pipeline import Pipeline, evaluate

    cfg = config_from_args(args)
    pipe = Pipeline.from_checkpoints(args.tocg, args.toig)
    report = evaluate(pipe, _records(cfg, "test"), args.out, seed=cfg.seed)
    print(f"paired SSIM {report['paired_ssim']:.4f} over {report['n']} test pairs")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from tryon.pipeline import Pipeline
    from tryon.service import create_app

    pipe = Pipeline.from_checkpoints(args.tocg, args.toig, args.calibration)
    uvicorn.run(create_app(pipe), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tryon", description="two-stage virtual try-on")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-synth", help="write a synthetic dataset directory")
    add_config_flags(s)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, help="number of records (default: synth_n)")
    s.set_defaults(func=cmd_make_synth)

    s = sub.add_parser("train-tocg", help="train the condition generator")
    add_config_flags(s)
    s.add_argument("--out", required=True)
    s.add_argument("--resume", help="checkpoint to resume from")
    s.set_defaults(func=cmd_train_tocg)

    s = sub.add_parser("train-toig", help="train the image generator")
    add_config_flags(s)
    s.add_argument("--tocg", required=True, help="condition-generator checkpoint")
    s.add_argument("--out", required=True)
    s.add_argument("--resume")
    s.set_defaults(func=cmd_train_toig)

    s = sub.add_parser("calibrate-reject", help="estimate the rejection normalizer")
    add_config_flags(s)
    s.add_argument("--tocg", required=True)
    s.add_argument("--out", required=True, help="calibration JSON to write")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("reject", help="gate records with a calibration file")
    add_config_flags(s)
    s.add_argument("--tocg", required=True)
    s.add_argument("--calibration", required=True)
    s.add_argument("--split", default="test", choices=("train", "test"))
    s.add_argument("--threshold", type=float)
    s.add_argument("--out", help="JSON report path")
    s.set_defaults(func=cmd_reject)

    s = sub.add_parser("infer", help="dress one person in one garment")
    add_config_flags(s)
    s.add_argument("--tocg")
    s.add_argument("--toig")
    s.add_argument("--calibration")
    s.add_argument("--server", help="service URL; run remotely instead of loading checkpoints")
    s.add_argument("--split", default="test", choices=("train", "test"))
    s.add_argument("--person", type=int, default=0, help="record index of the person")
    s.add_argument("--cloth", type=int, help="record index of the garment (default: own)")
    s.add_argument("--threshold", type=float)
    s.add_argument("--out", help="PNG path for the result")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="paired SSIM and result grids on the test split")
    add_config_flags(s)
    s.add_argument("--tocg", required=True)
    s.add_argument("--toig", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--tocg", required=True)
    s.add_argument("--toig")
    s.add_argument("--calibration")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
