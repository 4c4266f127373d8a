"""Command-line entry point: ``cephalo3d <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import errors as E
from . import evaluate as ev
from . import phantom, pipeline
from .gradcheck import TOLERANCE, run_all
from .landmarks import (
    LANDMARK_NAMES,
    landmarks_world_to_voxel,
    read_landmarks,
    write_landmarks,
)
from .volgrid import preprocess, read_cvol, write_cvol

log = logging.getLogger("cephalo3d")

EXIT_CODES = """exit codes:
  0   success
  1   gradient check failed / other package error
  2   usage error
  3   bad config key or value
  4   shape mismatch
  5   volume larger than the network grid
  6   invalid state (e.g. double normalization)
  7   landmark outside the grid
  8   training diverged
  9   incomplete evaluation data
  10  degenerate statistics input
  11  too little data for a statistical test
  12  malformed input file
  13  invalid argument
  14  unreadable or missing file
"""

PROFILE_PHANTOM_DIMS = {"toy": (64, 64, 76), "full": (128, 128, 152)}
SPLIT_FILE = "split.txt"


def _configs(args):
    return pipeline.load_config(args.config, args.profile, args.seed)


def _subset(root: Path, subset: str):
    samples = phantom.read_dataset(root)
    split = root / SPLIT_FILE
    if subset == "all" or not split.exists():
        return samples
    wanted = {
        name for tag, name in (ln.split("\t") for ln in split.read_text(encoding="utf-8").splitlines() if ln.strip())
        if tag == subset
    }
    return [s for s in samples if s[0] in wanted]


def cmd_phantom(args):
    dims = PROFILE_PHANTOM_DIMS[args.profile or "toy"]
    seed = args.seed if args.seed is not None else 0
    base = phantom.PhantomSpec(dims=dims, jitter=args.jitter, noise_hu=args.noise_hu, seed=seed)
    seeds = [phantom.sample_seed(seed, k) for k in range(args.n)]
    samples = phantom.generate_dataset(args.n, base)
    phantom.write_dataset(args.out, samples, seeds)
    train_idx, test_idx = phantom.split_indices(args.n, (2, 1), seed)
    lines = [f"train\tsample_{k}" for k in train_idx] + [f"test\tsample_{k}" for k in test_idx]
    (Path(args.out) / SPLIT_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {args.n} phantoms to {args.out} ({len(train_idx)} train / {len(test_idx)} test)")


def cmd_preprocess(args):
    _, _, _, grid = _configs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for name, vol, lm in _subset(Path(args.inp), "all"):
        net = preprocess(vol, grid)
        d = out / name
        d.mkdir(exist_ok=True)
        write_cvol(net, d / "volume.cvol")
        vox = landmarks_world_to_voxel(lm, net) if lm.frame == "world" else lm
        write_landmarks(vox, d / "landmarks.txt")
        names.append(name)
    (out / "manifest.txt").write_text("".join(f"{n}\tpreprocessed\n" for n in names), encoding="utf-8")
    split = Path(args.inp) / SPLIT_FILE
    if split.exists():
        (out / SPLIT_FILE).write_text(split.read_text(encoding="utf-8"), encoding="utf-8")
    print(f"preprocessed {len(names)} volumes into {out}")


def cmd_train(args):
    mc, tc, ac, grid = _configs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    if args.learning_rate is not None:
        tc = replace(tc, learning_rate=args.learning_rate)
    if args.clip_norm is not None:
        tc = replace(tc, clip_norm=args.clip_norm)
    tc = replace(tc, checkpoint=str(out / "model.cw3d"), log_path=str(out / "train_log.tsv"))
    samples = _subset(Path(args.inp), args.subset)
    if not samples:
        raise E.InvalidArgumentError(f"no samples in {args.inp} for subset {args.subset!r}")
    (out / "config.txt").write_text(pipeline.dump_config(mc, tc, ac, grid), encoding="utf-8")
    model = pipeline.build(mc)
    result = pipeline.train(model, [(v, lm) for _, v, lm in samples], tc, ac, grid)
    print(f"trained {len(result.epochs)} epochs on {len(samples)} samples; "
          f"final mean loss {result.mean_loss[-1]:.4f}; checkpoint {tc.checkpoint}")


def _load_model(args):
    mc, _, _, grid = _configs(args)
    ckpt = args.checkpoint
    if ckpt is None:
        raise E.InvalidArgumentError("--checkpoint is required")
    return pipeline.build(mc).load(ckpt), grid


def cmd_predict(args):
    model, grid = _load_model(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inp = Path(args.inp)
    if inp.is_file():
        items = [(inp.stem, read_cvol(inp))]
    else:
        items = [(name, vol) for name, vol, _ in _subset(inp, args.subset)]
    for name, vol in items:
        pred = pipeline.predict(model, vol, grid)
        (out / name).mkdir(exist_ok=True)
        write_landmarks(pred, out / name / "landmarks.txt")
    (out / "manifest.txt").write_text("".join(f"{n}\tprediction\n" for n, _ in items), encoding="utf-8")
    print(f"predicted {len(items)} volumes into {out}")


def read_error_fixture(path):
    """TSV rows ``subject landmark dx dy dz d3`` -> {subject: [LandmarkError]}."""
    errors = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise E.FileFormatError(f"{path}:{lineno}: expected 'subject landmark dx dy dz d3'")
        subject, name = parts[:2]
        try:
            dx, dy, dz, d3 = (float(v) for v in parts[2:])
        except ValueError as exc:
            raise E.FileFormatError(f"{path}:{lineno}: {exc}") from None
        errors.setdefault(subject, []).append(ev.LandmarkError(name, dx, dy, dz, d3))
    return errors


def collect_errors(pred_dir: Path, ref_dir: Path, subset="all"):
    preds = {name: read_landmarks(pred_dir / name / "landmarks.txt")
             for name in sorted(p.name for p in pred_dir.iterdir() if (p / "landmarks.txt").exists())}
    errors = {}
    for name, _, ref in _subset(ref_dir, subset):
        if name in preds:
            errors[name] = ev.set_errors(ref, preds[name])
    if not errors:
        raise E.IncompleteDataError(f"no predictions in {pred_dir} match references in {ref_dir}")
    return errors


def _stats_lines(errors):
    lines = []
    groups = ev.group_samples(errors)
    try:
        kw = ev.kruskal_wallis(*groups.values())
        lines.append(f"# kruskal_wallis_groups\tH={kw.statistic:.4f}\tp={kw.pvalue:.4f}\tdf={kw.df}")
    except (E.InsufficientDataError, E.InvalidArgumentError) as exc:
        lines.append(f"# kruskal_wallis_groups\tskipped: {exc}")
    return lines


def _emit_report(report, fmt, out, extra=()):
    text = report.to_json() if fmt == "json" else report.to_table() + "".join(f"{ln}\n" for ln in extra)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
        json_path = Path(out).with_suffix(".json")
        if fmt != "json":
            json_path.write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(text)


def cmd_evaluate(args):
    if args.errors:
        errors = read_error_fixture(args.errors)
    else:
        if not args.ref:
            raise E.InvalidArgumentError("evaluate needs --errors, or --in predictions with --ref references")
        errors = collect_errors(Path(args.inp), Path(args.ref), args.subset)
    report = ev.build_report(errors)
    _emit_report(report, args.format, args.out, _stats_lines(errors))


def cmd_report(args):
    data = json.loads(Path(args.inp).read_text(encoding="utf-8"))
    report = ev.EvalReport.from_dict(data)
    _emit_report(report, args.format, args.out)
    if args.points:
        _export_points(Path(args.pred), Path(args.ref), Path(args.points))


def _export_points(pred_dir, ref_dir, path):
    """Point list for external viewers: one reference/prediction pair per line."""
    lines = ["subject\tlandmark\tref_x\tref_y\tref_z\tpred_x\tpred_y\tpred_z"]
    for name, _, ref in phantom.read_dataset(ref_dir):
        f = pred_dir / name / "landmarks.txt"
        if not f.exists():
            continue
        pred = read_landmarks(f)
        for lm in LANDMARK_NAMES:
            r, p = ref[lm], pred[lm]
            lines.append("\t".join([name, lm] + [f"{v:.3f}" for v in (*r, *p)]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_gradcheck(args):
    seed = args.seed if args.seed is not None else 0
    results = run_all(args.trials, seed)
    for r in results:
        print(f"{r.layer:<24}{'PASS' if r.passed else 'FAIL'}  max_rel_err={r.max_rel_error:.3e}  "
              f"trials={r.trials}  tol={TOLERANCE:g}")
    if not all(r.passed for r in results):
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="root seed (u64)")
    common.add_argument("--in", dest="inp", help="input path")
    common.add_argument("--out", help="output path")
    common.add_argument("--profile", choices=sorted(pipeline.PROFILES), help="toy or full model profile")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(
        prog="cephalo3d",
        description="3D cephalometric landmark localization on CT-like volumes.",
        epilog=EXIT_CODES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", metavar="command")

    s = sub.add_parser("phantom", parents=[common], help="generate a synthetic phantom dataset")
    s.add_argument("--n", type=int, default=27)
    s.add_argument("--jitter", type=float, default=0.10)
    s.add_argument("--noise-hu", type=float, default=0.0)
    s.set_defaults(func=cmd_phantom, needs=("out",))

    s = sub.add_parser("preprocess", parents=[common], help="resample, pad and normalize a dataset")
    s.set_defaults(func=cmd_preprocess, needs=("inp", "out"))

    s = sub.add_parser("train", parents=[common], help="train a model on a dataset directory")
    s.add_argument("--epochs", type=int)
    s.add_argument("--learning-rate", type=float, help="Adadelta step multiplier (default 1.0; 0.1 suits the toy profile)")
    s.add_argument("--clip-norm", type=float, help="global gradient-norm clip, 0 = off")
    s.add_argument("--subset", choices=("train", "test", "all"), default="train")
    s.set_defaults(func=cmd_train, needs=("inp", "out"))

    s = sub.add_parser("predict", parents=[common], help="predict landmarks for volumes")
    s.add_argument("--checkpoint")
    s.add_argument("--subset", choices=("train", "test", "all"), default="test")
    s.set_defaults(func=cmd_predict, needs=("inp", "out"))

    s = sub.add_parser("evaluate", parents=[common], help="compare predictions to references")
    s.add_argument("--ref", help="reference dataset directory")
    s.add_argument("--errors", help="TSV of per-subject landmark errors instead of --in/--ref")
    s.add_argument("--subset", choices=("train", "test", "all"), default="all")
    s.add_argument("--format", choices=("table", "json"), default="table")
    s.set_defaults(func=cmd_evaluate, needs=())

    s = sub.add_parser("report", parents=[common], help="re-render a saved JSON report")
    s.add_argument("--format", choices=("table", "json"), default="table")
    s.add_argument("--points", help="also export reference/prediction point pairs to this file")
    s.add_argument("--pred", help="prediction directory (for --points)")
    s.add_argument("--ref", help="reference dataset directory (for --points)")
    s.set_defaults(func=cmd_report, needs=("inp",))

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every layer")
    s.add_argument("--trials", type=int, default=20)
    s.set_defaults(func=cmd_gradcheck, needs=())
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    missing = [f"--{'in' if n == 'inp' else n}" for n in args.needs if getattr(args, n) is None]
    if missing:
        parser.error(f"{args.command} requires {' '.join(missing)}")
    try:
        return args.func(args) or 0
    except E.CephaloError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 14


if __name__ == "__main__":
    sys.exit(main())
