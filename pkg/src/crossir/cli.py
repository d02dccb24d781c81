"""Command-line entry point.

One binary, several subcommands: dataset preparation (convert), the
two-stage trainer (train), file-level codec (encode/decode), metric and
BD-rate tooling (eval, sweep, plot), the ablation driver (ablate), and a
fast invariant suite (selftest).

Every command prints a machine-readable JSON summary on stdout and logs
on stderr.  Exit codes: 0 ok, 2 usage, 3 data error, 4 model error,
5 invariant failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import CrossIRError, DataError, InvariantError, ModelError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4
EXIT_INVARIANT = 5


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _emit(doc: dict) -> None:
    json.dump(doc, sys.stdout, indent=2, default=_json_default)
    sys.stdout.write("\n")
    sys.stdout.flush()


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return str(obj)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _apply_determinism(args) -> None:
    import torch

    if getattr(args, "seed", None) is not None:
        torch.manual_seed(args.seed)
        np.random.seed(args.seed % 2**32)
    if getattr(args, "deterministic", False):
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _read_config_file(path: str) -> dict:
    """Parse a TOML-style key = value file into CLI defaults.

    Only scalar keys are supported; values are parsed as JSON scalars
    when possible, else kept as strings.  Lines starting with # are
    comments.
    """
    mapping = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        value = value.strip("\"'")
        try:
            mapping[key] = json.loads(value)
        except json.JSONDecodeError:
            mapping[key] = value
    return mapping


# ---------------------------------------------------------------------------
# subcommand implementations


def cmd_convert(args) -> int:
    from .dataio import DatasetManifest, load_pair, save_manifest
    from .synthetic import SyntheticConfig, make_pairs, write_dataset

    root = Path(args.out_root)
    if args.synthetic:
        h, w = _parse_size(args.size)
        cfg = SyntheticConfig()
        pairs = make_pairs(args.synthetic, (h, w), seed=args.seed or 0, cfg=cfg, split=args.split)
        manifest_path = write_dataset(root, pairs, split=args.split)
        _emit(
            {
                "command": "convert",
                "mode": "synthetic",
                "pairs": len(pairs),
                "size": [h, w],
                "manifest": str(manifest_path),
            }
        )
        return EXIT_OK

    if not args.rgb_dir or not args.ir_dir:
        raise DataError("convert needs --rgb-dir and --ir-dir (or --synthetic N)")
    rgb_dir, ir_dir = Path(args.rgb_dir), Path(args.ir_dir)
    exts = {".png", ".jpg", ".jpeg"}
    rgb_files = {p.stem: p for p in sorted(rgb_dir.iterdir()) if p.suffix.lower() in exts}
    ir_files = {p.stem: p for p in sorted(ir_dir.iterdir()) if p.suffix.lower() in exts}
    stems = sorted(set(rgb_files) & set(ir_files))
    if not stems:
        raise DataError(f"no matching image stems between {rgb_dir} and {ir_dir}")
    entries = []
    for stem in stems:
        load_pair(rgb_files[stem], ir_files[stem])  # validates alignment and bit depth
        entries.append(
            (
                os.path.relpath(rgb_files[stem], root),
                os.path.relpath(ir_files[stem], root),
            )
        )
    manifest_path = save_manifest(DatasetManifest(root=root, pairs=entries, split=args.split))
    skipped = sorted((set(rgb_files) | set(ir_files)) - set(stems))
    _emit(
        {
            "command": "convert",
            "mode": "pair-directories",
            "pairs": len(entries),
            "skipped_stems": skipped,
            "manifest": str(manifest_path),
        }
    )
    return EXIT_OK


def _parse_size(text: str):
    try:
        h, w = (int(part) for part in text.lower().split("x"))
    except ValueError as exc:
        raise DataError(f"bad --size {text!r}, expected HxW") from exc
    return h, w


def cmd_train(args) -> int:
    from .training import (
        PairDataset,
        TrainConfig,
        load_training_pairs,
        run_stage1,
        run_stage2,
        stage_tag,
    )

    cfg = TrainConfig(
        lambda_value=args.lambda_value,
        stage=args.stage,
        steps=args.steps,
        out_dir=args.out_dir,
        preset=args.preset,
        variant=args.variant,
        batch_size=args.batch_size,
        crop=args.crop,
        quant_mode=args.quant_mode,
        seed=args.seed if args.seed is not None else 0,
    )
    pairs = load_training_pairs(args.dataset_root, args.split)
    dataset = PairDataset(pairs, crop=cfg.crop, seed=cfg.seed)
    _log(f"training stage {cfg.stage}: {len(pairs)} pairs, {cfg.steps} steps")
    t0 = time.monotonic()
    if cfg.stage == 1:
        ckpt = run_stage1(cfg, dataset, resume_from=args.resume)
    else:
        ckpt = run_stage2(
            cfg,
            dataset,
            stage1_ckpt=args.stage1_ckpt,
            from_scratch=args.from_scratch,
            resume_from=args.resume,
        )
    _emit(
        {
            "command": "train",
            "stage": cfg.stage,
            "lambda": cfg.lambda_value,
            "steps": cfg.steps,
            "checkpoint": ckpt,
            "csv": os.path.join(cfg.out_dir, f"{stage_tag(cfg)}.csv"),
            "seconds": round(time.monotonic() - t0, 2),
        }
    )
    return EXIT_OK


def _load_codec(ckpt_path: str):
    from .training import load_checkpoint

    codec, payload = load_checkpoint(ckpt_path)
    codec.eval()
    return codec, payload


def _encode_impl(args) -> int:
    from .dataio import load_pair
    from .model import STREAM_NAMES, encode_pair

    codec, _ = _load_codec(args.ckpt)
    pair = load_pair(args.rgb, args.ir)
    t0 = time.monotonic()
    res = encode_pair(codec, pair)
    Path(args.out).write_bytes(res.container)
    num_pixels = pair.height * pair.width
    streams = [
        {
            "name": name,
            "bytes": len(stream),
            "estimated_bits": round(est, 3),
            "symbol_sha256": digest,
        }
        for name, stream, est, digest in zip(
            STREAM_NAMES, res.streams, res.estimated_bits, res.symbol_digests
        )
    ]
    from .evaluation import psnr_plane

    _emit(
        {
            "command": "encode",
            "out": args.out,
            "width": pair.width,
            "height": pair.height,
            "container_bytes": len(res.container),
            "bpp": len(res.container) * 8.0 / num_pixels,
            "streams": streams,
            "recon_rgb_sha256": _sha256(res.recon_rgb.tobytes()),
            "recon_ir_sha256": _sha256(res.recon_ir.tobytes()),
            "encoder_side_psnr_ir": psnr_plane(pair.ir, res.recon_ir),
            "model_fingerprint": codec.model_fingerprint(),
            "seconds": round(time.monotonic() - t0, 2),
        }
    )
    return EXIT_OK


def cmd_decode(args) -> int:
    from PIL import Image

    from .model import decode_container

    codec, _ = _load_codec(args.ckpt)
    data = Path(args.infile).read_bytes()
    t0 = time.monotonic()
    res = decode_container(codec, data)
    Image.fromarray(res.rgb).save(args.out_rgb)
    Image.fromarray(res.ir).save(args.out_ir)
    _emit(
        {
            "command": "decode",
            "in": args.infile,
            "out_rgb": args.out_rgb,
            "out_ir": args.out_ir,
            "width": res.header.width,
            "height": res.header.height,
            "recon_rgb_sha256": _sha256(res.rgb.tobytes()),
            "recon_ir_sha256": _sha256(res.ir.tobytes()),
            "symbol_digests": res.symbol_digests,
            "seconds": round(time.monotonic() - t0, 2),
        }
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import bd_rate, curve_from_json

    curves = []
    for path in args.curve:
        with open(path, "r", encoding="utf-8") as fh:
            curves.append(curve_from_json(json.load(fh)))
    doc = {"command": "eval", "curves": [c.label for c in curves]}
    if args.bd:
        if len(curves) < 2:
            raise DataError("--bd needs at least two --curve files (anchor first)")
        anchor = curves[0]
        reports = []
        for test in curves[1:]:
            rep = bd_rate(anchor, test, metric=args.metric, method=args.method)
            reports.append(
                {
                    "anchor": rep.anchor,
                    "test": rep.test,
                    "bd_rate_percent": round(rep.bd_rate_percent, 4),
                    "overlap": [float(rep.overlap[0]), float(rep.overlap[1])],
                    "method": rep.method,
                    "metric": args.metric,
                }
            )
        doc["bd_reports"] = reports
    _emit(doc)
    return EXIT_OK


def _collect_checkpoints(args) -> list:
    paths = list(args.ckpt or [])
    if args.ckpt_dir:
        paths.extend(
            str(p) for p in sorted(Path(args.ckpt_dir).glob("*.pt")) if "nan_dump" not in p.name
        )
    if not paths:
        raise DataError("no checkpoints: pass --ckpt or --ckpt-dir")
    return paths


def cmd_sweep(args) -> int:
    from .dataio import load_manifest
    from .evaluation import curve_to_json, run_rd_sweep

    manifest = load_manifest(args.dataset_root, args.split)
    pairs = [manifest.load(i) for i in range(len(manifest))]
    paths = _collect_checkpoints(args)
    _log(f"sweep: {len(paths)} checkpoints over {len(pairs)} pairs")
    curve = run_rd_sweep(
        paths,
        pairs,
        label=args.label,
        out_csv=args.csv,
        out_json=args.out,
    )
    _emit({"command": "sweep", "out": args.out, "csv": args.csv, **curve_to_json(curve)})
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .evaluation import ablation_run
    from .training import load_training_pairs

    pairs = load_training_pairs(args.dataset_root, args.split)
    report = ablation_run(
        pairs,
        lambdas=args.lambda_value,
        steps_stage1=args.steps1,
        steps_stage2=args.steps2,
        out_dir=args.out_dir,
        variants=args.variants,
        seed=args.seed if args.seed is not None else 0,
        crop=args.crop,
    )
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, default=_json_default))
    _emit({"command": "ablate", "out": args.out, **report})
    return EXIT_OK


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .evaluation import curve_from_json

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for path in args.curve:
        with open(path, "r", encoding="utf-8") as fh:
            curve = curve_from_json(json.load(fh))
        rates = curve.rates()
        quals = curve.qualities(args.metric)
        ax.plot(rates, quals, marker="o", label=curve.label)
    ax.set_xlabel("bpp (container bytes)")
    ax.set_ylabel(args.metric)
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out)
    _emit({"command": "plot", "out": args.out, "curves": len(args.curve)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# selftest


def _selftest_coder(rng, corrupt_cdf_path=None) -> dict:
    from .coder import CdfTableSet, build_scale_table, gaussian_cdf_tables
    from . import kernel

    table = build_scale_table()
    tables = gaussian_cdf_tables(table[::8])
    n = 4096
    idx = rng.integers(0, len(tables.tables), n)
    means = rng.normal(0, 2, n)
    sym = np.round(rng.normal(0, 6, n)).astype(np.int64)
    blob = kernel.encode_symbols(sym, idx, means, tables)
    back = kernel.decode_symbols(blob, idx, means, n, tables)
    ok = bool(np.array_equal(sym, back))
    if corrupt_cdf_path:
        # the check itself must catch broken tables: round-trip through them
        try:
            corrupt = CdfTableSet.deserialize(Path(corrupt_cdf_path).read_bytes())
            blob2 = kernel.encode_symbols(sym, idx, means, corrupt)
            back2 = kernel.decode_symbols(blob2, idx, means, n, corrupt)
            ok &= bool(np.array_equal(sym, back2))
        except CrossIRError:
            ok = False
    return {"name": "range_coder_round_trip", "passed": bool(ok)}


def _selftest_container(rng) -> dict:
    from .coder import ContainerHeader, pack_container, unpack_container
    from .errors import DecodeError

    streams = [bytes(rng.integers(0, 256, int(k)).astype(np.uint8)) for k in rng.integers(0, 64, 12)]
    header = ContainerHeader(width=129, height=77, lambda_index=3, slice_count=5, flags=42)
    blob = pack_container(header, streams)
    h2, s2 = unpack_container(blob)
    ok = h2 == header and s2 == streams
    try:
        unpack_container(blob[: len(blob) // 2])
        ok = False
    except DecodeError:
        pass
    return {"name": "container_pack_unpack", "passed": bool(ok)}


def _selftest_causality(rng) -> dict:
    """Spot-check the decode-side causality rules on a fresh toy model.

    Perturbations are applied at fixed hyper context, matching what a
    decoder actually sees (the hyperprior is transmitted first).  The
    trained-model rule (IR responsiveness of RGB parameters) lives in
    the full test suite, not here.
    """
    import torch

    from .ccem import split_slices
    from .codec_net import NetConfig
    from .model import JointCodec

    cfg = NetConfig.toy()
    codec = JointCodec(cfg)
    codec.eval()
    ccem = codec.ccem
    sc = cfg.slice_channels
    same = lambda a, b: bool(torch.equal(a.mu, b.mu) and torch.equal(a.sigma, b.sigma))
    ok = True
    with torch.no_grad():
        y_ir = torch.randn(1, cfg.latent_channels, 8, 8)
        y_yuv = torch.randn(1, cfg.latent_channels, 8, 8)
        hyper_ir = torch.randn(1, 2 * cfg.latent_channels, 8, 8)
        hyper_rgb = torch.randn(1, 2 * cfg.latent_channels, 8, 8)

        y_hat_ir, _, base_ir = ccem._code_modality("ir", y_ir, hyper_ir, None, "round")
        f_ir_low = ccem.ir_lowfreq(split_slices(y_hat_ir, cfg.num_slices))
        _, _, base_rgb = ccem._code_modality("rgb", y_yuv, hyper_rgb, f_ir_low, "round")

        # later-slice perturbations must not move earlier parameters
        for modality, y, hyper, flow, base in (
            ("ir", y_ir, hyper_ir, None, base_ir),
            ("rgb", y_yuv, hyper_rgb, f_ir_low, base_rgb),
        ):
            j = int(rng.integers(1, cfg.num_slices))
            bump = y.clone()
            bump[:, j * sc : (j + 1) * sc] += float(rng.normal(2.0, 0.5))
            _, _, pert = ccem._code_modality(modality, bump, hyper, flow, "round")
            ok &= all(same(base[i], pert[i]) for i in range(j + 1))

        # RGB latents must never reach IR parameters
        pert2 = ccem.entropy_forward(y_yuv + 3.0, y_ir, mode="round")
        base2 = ccem.entropy_forward(y_yuv, y_ir, mode="round")
        ok &= all(same(a, b) for a, b in zip(base2["params_ir"], pert2["params_ir"]))
    return {"name": "ccem_causality_spot", "passed": bool(ok)}


def _selftest_gradients(rng) -> dict:
    import torch

    from .ccem import EntropyParams, gaussian_likelihood

    y = torch.tensor(rng.normal(0, 1, (8,)), dtype=torch.float64, requires_grad=True)
    params = EntropyParams(
        mu=torch.tensor(rng.normal(0, 1, (8,)), dtype=torch.float64),
        sigma=torch.tensor(1.0 + rng.random(8), dtype=torch.float64),
    )
    like = gaussian_likelihood(y, params).sum()
    (grad,) = torch.autograd.grad(like, y)
    eps = 1e-5
    ok = True
    for i in range(len(y)):
        yp = y.detach().clone()
        ym = y.detach().clone()
        yp[i] += eps
        ym[i] -= eps
        fd = (
            gaussian_likelihood(yp, params).sum() - gaussian_likelihood(ym, params).sum()
        ) / (2 * eps)
        denom = max(abs(float(fd)), abs(float(grad[i])), 1e-8)
        ok &= abs(float(fd) - float(grad[i])) / denom < 1e-4
    return {"name": "gaussian_likelihood_gradient", "passed": bool(ok)}


def _selftest_prior(rng) -> dict:
    import torch

    from .ccem import FactorizedPrior

    prior = FactorizedPrior(12)
    support = torch.arange(-60, 61, dtype=torch.float32)
    grid = support[None, None, :, None].repeat(1, 12, 1, 1)  # (1, C, 121, 1)
    with torch.no_grad():
        mass = prior.likelihood(grid).sum(dim=2)
    ok = bool(((mass >= 0.999) & (mass <= 1.0)).all())
    return {"name": "factorized_prior_mass", "passed": ok}


def cmd_selftest(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    t0 = time.monotonic()
    checks = [
        _selftest_coder(rng, corrupt_cdf_path=args.corrupt_cdf),
        _selftest_container(rng),
        _selftest_causality(rng),
        _selftest_gradients(rng),
        _selftest_prior(rng),
    ]
    passed = all(c["passed"] for c in checks)
    _emit(
        {
            "command": "selftest",
            "passed": passed,
            "checks": checks,
            "seconds": round(time.monotonic() - t0, 2),
        }
    )
    return EXIT_OK if passed else EXIT_INVARIANT


# ---------------------------------------------------------------------------
# parser


def _add_global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    # present on the root and every subcommand so the flags work in either
    # position; SUPPRESS keeps subparser defaults from clobbering root values
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="TOML-style key = value defaults file")
    p.add_argument("--seed", type=int, default=default, help="global RNG seed")
    p.add_argument(
        "--deterministic",
        action="store_true",
        default=argparse.SUPPRESS if suppress else False,
        help="force deterministic torch kernels",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossir",
        description="Joint RGB/infrared image-pair compression toolkit",
    )
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="build a dataset manifest (or synthesize one)")
    p.add_argument("--rgb-dir")
    p.add_argument("--ir-dir")
    p.add_argument("--out-root", required=True)
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--synthetic", type=int, default=0, metavar="N")
    p.add_argument("--size", default="128x128", help="HxW for synthetic pairs")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, required=True, choices=[1, 2])
    p.add_argument("--lambda", dest="lambda_value", type=float, required=True)
    p.add_argument("--preset", default="toy", choices=["toy", "full"])
    p.add_argument("--variant", default="full",
                   choices=["full", "no_lceb", "no_lcfb", "hyper_only"])
    p.add_argument("--dataset-root", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--crop", type=int, default=256)
    p.add_argument("--quant-mode", default="ste", choices=["ste", "mixed"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", help="checkpoint to resume this stage from")
    p.add_argument("--stage1-ckpt", help="stage-1 checkpoint seeding stage 2")
    p.add_argument("--from-scratch", action="store_true",
                   help="stage 2 without a stage-1 checkpoint (comparison runs)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="compress one RGB/IR pair to a .cir file")
    p.add_argument("--rgb", required=True)
    p.add_argument("--ir", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_encode_impl)

    p = sub.add_parser("decode", help="decompress a .cir file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out-rgb", required=True)
    p.add_argument("--out-ir", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="BD-rate between stored RD curves")
    p.add_argument("--curve", action="append", required=True)
    p.add_argument("--bd", action="store_true")
    p.add_argument("--metric", default="psnr_joint")
    p.add_argument("--method", default="cubic", choices=["cubic", "akima"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate checkpoints into an RD curve")
    p.add_argument("--ckpt", action="append")
    p.add_argument("--ckpt-dir")
    p.add_argument("--dataset-root", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--label", default="crossir")
    p.add_argument("--out", required=True, help="curve JSON output")
    p.add_argument("--csv")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="train and compare entropy-model variants")
    p.add_argument("--dataset-root", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--lambda", dest="lambda_value", type=float, action="append", required=True)
    p.add_argument("--steps1", type=int, required=True)
    p.add_argument("--steps2", type=int, required=True)
    p.add_argument("--crop", type=int, default=128)
    p.add_argument("--variants", nargs="+",
                   default=["full", "no_lceb", "no_lcfb", "hyper_only"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render RD curves to SVG")
    p.add_argument("--curve", action="append", required=True)
    p.add_argument("--metric", default="psnr_joint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("selftest", help="fast invariant suite")
    p.add_argument("--corrupt-cdf", help="path to a deliberately corrupted CDF blob")
    p.set_defaults(func=cmd_selftest)

    for sp in sub.choices.values():
        _add_global_flags(sp, suppress=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # pre-scan for --config so file values become defaults, flags still win
    pre, _ = parser.parse_known_args(argv)
    if pre.config:
        defaults = _read_config_file(pre.config)
        known = {a.dest for a in parser._actions}
        for sp in parser._subparsers._group_actions[0].choices.values():
            known |= {a.dest for a in sp._actions}
        parser.set_defaults(**{k: v for k, v in defaults.items() if k in known})
        for sp in parser._subparsers._group_actions[0].choices.values():
            sp.set_defaults(**{k: v for k, v in defaults.items() if k in known})
    args = parser.parse_args(argv)
    try:
        _apply_determinism(args)
        return args.func(args)
    except InvariantError as exc:
        _log(f"invariant failure: {exc}")
        return EXIT_INVARIANT
    except ModelError as exc:
        _log(f"model error: {exc}")
        return EXIT_MODEL
    except DataError as exc:
        _log(f"data error: {exc}")
        return EXIT_DATA
    except CrossIRError as exc:
        _log(f"error: {exc}")
        return EXIT_DATA
    except FileNotFoundError as exc:
        _log(f"data error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
