"""Command-line interface.

Exit codes: 0 success, 1 other codec/training failure, 2 usage error or
missing input, 3 model hash mismatch, 4 corrupt stream or model file,
5 verification mismatch. Records go to stdout, one per line, tab-separated;
the resolved configuration and diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, get_type_hints

import numpy as np

from .container import (CompressedContainer, compress_image, decompress_image, feature_maps,
                        measure_bpp)
from .corpus import Corpus, load_corpus, read_pgm, write_pgm
from .errors import (ConfigurationError, CorruptStreamError, LvpError, ModelCorruptError,
                     ModelHashMismatchError, RoundTripError, UsageError)
from .evaluate import evaluate, round_trip
from .model import LVPNet
from .train import TrainConfig, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_HASH, EXIT_CORRUPT, EXIT_MISMATCH = 0, 1, 2, 3, 4, 5
VARIANTS = ("cnn_sampling", "no_qcm", "rate_sweep")
RATE_GRID = (0.05, 0.10, 0.15, 0.20, 0.25)

FLAG_KEYS = {"seed": "seed", "rate": "rate", "qstep": "q_step", "mode": "mode",
             "epochs": "epochs", "lr": "lr", "batch_size": "batch_size",
             "decay_every": "decay_every", "qcm_blocks": "qcm_blocks", "stages": "stages",
             "sampler": "sampler", "predictor_channels": "predictor_channels"}


def workers() -> int:
    raw = os.environ.get("LVPNET_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"LVPNET_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _parse_value(key: str, text: str, hint):
    text = text.strip()
    if text.lower() in ("none", "") and "Optional" in str(hint):
        return None
    if "bool" in str(hint):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {text!r}")
    kind = int if "int" in str(hint) else float if "float" in str(hint) else str
    try:
        return kind(text)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    hints = get_type_hints(TrainConfig)
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in hints:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _parse_value(key, value, hints[key])
    return out


def resolve_config(args) -> TrainConfig:
    values = read_config(args.config) if getattr(args, "config", None) else {}
    hints = get_type_hints(TrainConfig)
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = _parse_value(key, str(v), hints[key])
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        if key.strip() not in hints:
            raise UsageError(f"unknown key {key.strip()!r}")
        values[key.strip()] = _parse_value(key, value, hints[key.strip()])
    cfg = TrainConfig(**values)
    for f in dataclasses.fields(cfg):
        print(f"# {f.name} = {getattr(cfg, f.name)}", file=sys.stderr)
    return cfg


def _corpus(path) -> Corpus:
    if not Path(path).is_dir():
        raise UsageError(f"corpus directory {path} does not exist")
    return load_corpus(path)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# -- commands -----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    corpus = _corpus(args.corpus)
    log = open(args.log, "w") if args.log else None

    def on_epoch(e):
        line = f"{e.epoch}\t{_fmt(e.loss_bpp)}\t{e.lr:.6g}"
        print(line, flush=True)
        if log:
            print(line, file=log, flush=True)

    try:
        res = train(corpus, cfg, on_epoch=on_epoch)
    finally:
        if log:
            log.close()
    digest = res.model.save(args.out)
    print(f"# model {args.out} hash {digest.hex()}", file=sys.stderr)
    return EXIT_OK


def cmd_compress(args) -> int:
    model = LVPNet.load(args.model)
    c = compress_image(read_pgm(args.input), model)
    Path(args.output).write_bytes(c.to_bytes())
    print(_fmt(measure_bpp(c)))
    return EXIT_OK


def cmd_decompress(args) -> int:
    model = LVPNet.load(args.model)
    blob = Path(args.input).read_bytes()
    write_pgm(args.output, decompress_image(CompressedContainer.from_bytes(blob), model))
    return EXIT_OK


def _verify_one(task):
    name, image, model_path, lvp = task
    model = LVPNet.load(model_path)
    try:
        c, _, _ = round_trip(image, model)
        if lvp is not None:
            stored = Path(lvp).read_bytes()
            out = decompress_image(stored, model)
            if out.shape != image.shape or not np.array_equal(out, image):
                raise RoundTripError("stored container decodes to a different image")
            # encoding is deterministic, so any altered bit shows up here even
            # where the range decoder would not notice it (flush bytes)
            if stored != c.to_bytes():
                raise RoundTripError("stored container differs from a fresh encoding")
    except (RoundTripError, CorruptStreamError, ModelHashMismatchError) as exc:
        return name, None, None, str(exc)
    return name, measure_bpp(c), c.pixels.bit_count / image.size, None


def _pool_map(fn, tasks):
    n = min(workers(), len(tasks))
    if n <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(n) as ex:
        return list(ex.map(fn, tasks))


def cmd_verify(args) -> int:
    corpus = _corpus(args.corpus)
    LVPNet.load(args.model)  # fail early on a bad model file
    tasks = []
    for name, im in zip(corpus.names, corpus.images):
        sidecar = Path(args.corpus) / (Path(name.split("#")[0]).stem + ".lvp")
        lvp = sidecar if "#" not in name and sidecar.exists() else None
        tasks.append((name, im, args.model, lvp))
    results = sorted(_pool_map(_verify_one, tasks))
    bad = [r for r in results if r[3] is not None]
    for name, bpp, pbpp, err in results:
        if err is None:
            print(f"{name}\t{_fmt(bpp)}\t{_fmt(pbpp)}")
        else:
            print(f"{name}\tMISMATCH\t{err}")
    good = [r for r in results if r[3] is None]
    if good:
        print(f"mean\t{_fmt(np.mean([r[1] for r in good]))}\t{_fmt(np.mean([r[2] for r in good]))}")
    if bad:
        print("verification failed: " + ", ".join(r[0] for r in bad), file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_eval(args) -> int:
    model = LVPNet.load(args.model)
    rep = evaluate(_corpus(args.corpus), model, runs=args.runs)
    for r in rep.images:
        print(f"{r.name}\t{_fmt(r.bpp)}\t{_fmt(r.pixel_bpp)}\t{r.encode_ms:.3f}\t{r.decode_ms:.3f}")
    print(f"mean\t{_fmt(rep.mean_bpp)}\t{_fmt(rep.mean_pixel_bpp)}\t{rep.encode_ms:.3f}\t"
          f"{rep.decode_ms:.3f}")
    print(f"amortized\t{_fmt(rep.amortized_bpp)}")
    return EXIT_OK


def _ablate_variants(requested: list[str]) -> list[tuple[str, dict]]:
    rows = [("full", {})]
    if "no_qcm" in requested:
        rows.append(("no_qcm", {"use_qcm": False}))
    if "cnn_sampling" in requested:
        rows.append(("cnn_sampling", {"sampler": "cnn"}))
    if "no_qcm" in requested and "cnn_sampling" in requested:
        rows.append(("cnn_no_qcm", {"sampler": "cnn", "use_qcm": False}))
    return rows


def _ablate_job(job):
    kind, name, base, changes, corpus, single_n, single_epochs, runs = job
    cfg = dataclasses.replace(base, mode="dataset", **changes)
    model = train(corpus, cfg).model
    rep = evaluate(corpus, model, runs=runs)
    if kind == "rate":
        return kind, name, rep.mean_pixel_bpp, rep.mean_bpp
    single = []
    for im in corpus.images[:single_n]:
        scfg = dataclasses.replace(cfg, mode="single", qcm_blocks=None, epochs=single_epochs,
                                   batch_size=1)
        smodel = train(Corpus([im]), scfg).model
        srep = evaluate(Corpus([im]), smodel, runs=1)
        single.append(srep.images[0].pixel_bpp)
    return (kind, name, rep.mean_pixel_bpp, float(np.mean(single)) if single else float("nan"),
            rep.encode_ms, rep.decode_ms)


def cmd_ablate(args) -> int:
    requested = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = sorted(set(requested) - set(VARIANTS))
    if unknown:
        raise UsageError(f"unknown ablation variant(s): {', '.join(unknown)}")
    base = resolve_config(args)
    corpus = _corpus(args.corpus)
    jobs = [("table", name, base, ch, corpus, args.single_images, args.single_epochs, args.runs)
            for name, ch in _ablate_variants(requested)]
    if "rate_sweep" in requested:
        jobs += [("rate", f"{r:.2f}", base, {"rate": r}, corpus, 0, 0, 1) for r in RATE_GRID]
    results = _pool_map(_ablate_job, jobs)
    order = {name: i for i, (name, _) in enumerate(_ablate_variants(requested))}
    print("variant\tdataset_bpp\tsingle_bpp\tencode_ms\tdecode_ms")
    for _, name, bpp, single, enc, dec in sorted((r for r in results if r[0] == "table"),
                                                 key=lambda r: order[r[1]]):
        print(f"{name}\t{_fmt(bpp)}\t{_fmt(single)}\t{enc:.3f}\t{dec:.3f}")
    rates = sorted(r for r in results if r[0] == "rate")
    if rates:
        print("rate\tpixel_bpp\tcontainer_bpp")
        for _, r, bpp, cbpp in rates:
            print(f"{r}\t{_fmt(bpp)}\t{_fmt(cbpp)}")
    return EXIT_OK


def cmd_features(args) -> int:
    model = LVPNet.load(args.model)
    maps = feature_maps(read_pgm(args.input), model)
    np.savez(args.output, **maps)
    for k, v in maps.items():
        print(f"{k}\t{'x'.join(map(str, v.shape))}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------

def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--rate", type=float)
    p.add_argument("--qstep", type=float)
    p.add_argument("--mode", choices=["dataset", "single"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--decay-every", dest="decay_every", type=int)
    p.add_argument("--qcm-blocks", dest="qcm_blocks", type=int)
    p.add_argument("--stages", type=int)
    p.add_argument("--sampler", choices=["gmsm", "cnn"])
    p.add_argument("--predictor-channels", dest="predictor_channels", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any configuration key")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lvpnet", description="Learned lossless grayscale image codec.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on a corpus directory")
    _config_flags(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--log", help="also write the epoch log here")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("compress", help="PGM -> .lvp")
    p.add_argument("--model", required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("decompress", help=".lvp -> PGM")
    p.add_argument("--model", required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(fn=cmd_decompress)

    p = sub.add_parser("verify", help="round-trip every image of a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("corpus")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("eval", help="rate and timing report")
    p.add_argument("--model", required=True)
    p.add_argument("--runs", type=int, default=5, help="timing runs per image (median)")
    p.add_argument("corpus")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare model variants")
    _config_flags(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--single-images", dest="single_images", type=int, default=1,
                   help="images used for the single-image column")
    p.add_argument("--single-epochs", dest="single_epochs", type=int, default=50)
    p.add_argument("--runs", type=int, default=5)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("features", help="dump intermediate planes of one image to .npz")
    p.add_argument("--model", required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(fn=cmd_features)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"lvpnet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"lvpnet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelHashMismatchError as exc:
        print(f"lvpnet: {exc}", file=sys.stderr)
        return EXIT_HASH
    except (CorruptStreamError, ModelCorruptError) as exc:
        print(f"lvpnet: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except RoundTripError as exc:
        print(f"lvpnet: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except LvpError as exc:
        print(f"lvpnet: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
