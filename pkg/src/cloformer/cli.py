"""Command line entry point: ``cloformer <subcommand> ...``.

Failures print one line, ``ERROR <category>: <detail>``, to stderr and exit
with status 2 (usage and library errors) or 1 (a check that ran but failed).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .accounting import count_flops
from .analysis import band_energy, branch_spectra, high_band_mass, write_bands_csv, write_pgm
from .checkpoint import load_checkpoint, save_checkpoint
from .checks import GRAD_CASES, equivariance_error, grad_errors
from .clot import load_tensor, save_tensor
from .data import gen_synth_dataset
from .errors import ArgumentError, CloError
from .model import build_model, model_forward
from .specs import build_ablation, preset, spec_from_text
from .tensor import Tensor, no_grad
from .train import TrainConfig, train_loop

GRAD_TOL = 1e-5
EQUIV_TOL = 1e-5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


def _spec(args):
    spec = preset(args.variant)
    if getattr(args, "config", None):
        spec = spec_from_text(Path(args.config).read_text(), base=spec)
    return spec


def _parse_knobs(text: str) -> dict:
    knobs = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise ArgumentError(f"knob {item!r} is not key=value")
        k, v = item.split("=", 1)
        knobs[k.strip()] = v.strip()
    return knobs


def cmd_build(args):
    spec = _spec(args)
    m = build_model(spec, args.seed)
    n = sum(t.size for t in m.parameters().values())
    print(f"{spec.name}: {n} parameters in {len(m.parameters())} tensors")
    if args.out:
        save_checkpoint(m, args.out)
        print(f"wrote {args.out}")


def cmd_cost(args):
    m = build_model(_spec(args), 0)
    r = count_flops(m, (args.input, args.input))
    print(r.to_text())
    print()
    print(r.to_csv(), end="")
    if args.csv:
        Path(args.csv).write_text(r.to_csv())


def cmd_forward(args):
    m = load_checkpoint(args.ckpt)
    x = load_tensor(args.input).astype(m.dtype)
    with no_grad():
        logits = model_forward(x, m)
    for row in logits.data:
        print(" ".join(f"{v:.6g}" for v in row))
    if args.out:
        save_tensor(logits, args.out)


def cmd_gradcheck(args):
    errs = grad_errors([args.module] if args.module else None, args.seed)
    ok = True
    for name, e in errs.items():
        good = e < GRAD_TOL
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} {name} rel_err={e:.3e}")
    return 0 if ok else 1


def cmd_equivariance(args):
    err = equivariance_error(args.padding, args.seed)
    good = err < EQUIV_TOL
    print(f"{'PASS' if good else 'FAIL'} padding={args.padding} max_abs_diff={err:.3e}")
    return 0 if good else 1


def cmd_train(args):
    spec = _spec(args)
    ds = gen_synth_dataset(args.samples, spec.num_classes, args.hw, args.seed)
    m = build_model(spec, args.seed)
    cfg = TrainConfig(steps=args.steps, batch_size=args.batch, lr=args.lr,
                      weight_decay=args.wd, seed=args.seed, target_acc=args.target_acc)
    train_loop(m, ds, cfg, log=lambda r: print(
        f"epoch {r['epoch']} step {r['step']} loss {r['loss']:.4f} train_acc {r['train_acc']:.4f}", flush=True))
    save_checkpoint(m, args.out)
    print(f"wrote {args.out}")


def cmd_spectrum(args):
    m = load_checkpoint(args.ckpt)
    ds = gen_synth_dataset(args.samples, min(m.spec.num_classes, 16), args.hw, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for r in branch_spectra(m, Tensor(ds.images, dtype=m.dtype), args.stage):
        bands = band_energy(r, args.bands)
        tag = r.source.rsplit(".", 2)[-2:]
        stem = out / f"stage{args.stage}_{'_'.join(tag)}"
        write_pgm(r, stem.with_suffix(".pgm"))
        write_bands_csv(bands, stem.with_suffix(".csv"))
        print(f"{r.source}: high-band mass {high_band_mass(bands):.4f}")


def cmd_ablate(args):
    spec = build_ablation(preset(args.variant), _parse_knobs(args.knobs))
    m = build_model(spec, args.seed)
    x = Tensor(np.random.default_rng(args.seed).random((1, 3, args.input, args.input)), dtype=m.dtype)
    with no_grad():
        logits = model_forward(x, m)
    r = count_flops(m, (args.input, args.input))
    print(f"params {r.total_params} flops {r.total_flops} logits {logits.shape}")


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cloformer", description="Build, cost, train and inspect CloFormer models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def variant(sp, default="xxs"):
        sp.add_argument("--variant", default=default, help="xxs, xs, s or xxs-64")
        sp.add_argument("--config", help="key = value file applied over the variant")

    sp = sub.add_parser("build", help="allocate a model and report its size")
    variant(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="write a checkpoint here")
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("cost", help="parameter and FLOP breakdown")
    variant(sp)
    sp.add_argument("--input", type=int, default=224)
    sp.add_argument("--csv", help="also write the CSV breakdown to this file")
    sp.set_defaults(func=cmd_cost)

    sp = sub.add_parser("forward", help="logits for a CLOT image batch")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", help="write logits as CLOT")
    sp.set_defaults(func=cmd_forward)

    sp = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    sp.add_argument("--module", choices=sorted(GRAD_CASES))
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("equivariance", help="shift equivariance of the local operator")
    sp.add_argument("--padding", default="circular", choices=["circular", "zero"])
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_equivariance)

    sp = sub.add_parser("train", help="train on synthetic shapes")
    variant(sp, "xxs-64")
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--samples", type=int, default=256)
    sp.add_argument("--hw", type=int, default=64)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--wd", type=float, default=0.05)
    sp.add_argument("--target-acc", type=float, default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("spectrum", help="branch spectra of a trained model")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--stage", type=int, required=True, choices=[2, 3])
    sp.add_argument("--out", required=True)
    sp.add_argument("--samples", type=int, default=32)
    sp.add_argument("--hw", type=int, default=128)
    sp.add_argument("--bands", type=int, default=8)
    sp.add_argument("--seed", type=int, default=1)
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("ablate", help="build and run one ablation configuration")
    sp.add_argument("--knobs", default="", help="comma-separated key=value, e.g. row=shared")
    sp.add_argument("--variant", default="xxs-64")
    sp.add_argument("--input", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return args.func(args) or 0
    except CloError as e:
        print(f"ERROR {e.category}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"ERROR io: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
