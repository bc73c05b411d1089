"""Command-line entry point.

    lafite datagen      --out data/
    lafite train        --train data/train.tsv --out ckpt/
    lafite bank         --train data/train.tsv --out bank/
    lafite tune         --train data/train.tsv --checkpoint ckpt/ --bank bank/ --out tune/
    lafite reconstruct  --manifest data/test.tsv --checkpoint ckpt/ --bank bank/ --out recon/
    lafite eval         --manifest data/test.tsv --checkpoint ckpt/ --bank bank/ --tuned tune/ --out eval/
    lafite heatmap      --manifest data/test.tsv --checkpoint ckpt/ --bank bank/ --tuned tune/ --out maps/

Every subcommand takes ``--config``, ``--seed``, ``--threads`` and ``--out``
and echoes the effective configuration to ``<out>/config.cfg``. Exit codes:
0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as _config
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, PipelineConfig
from .features import (
    FormatError,
    SampleRecord,
    load_all,
    mask_or_zeros,
    read_manifest,
    save_tensor,
    synth_latent_dataset,
    write_manifest,
)
from .membank import EditConfig, load_coreset, save_coreset
from .metrics import UndefinedMetricError, format_report
from .pipeline import Detector, coreset_from, pseudo_validation, schedule_from, train
from .scoring import normalize_per_category, normalize_per_image, write_pgm
from .tune import select_k, select_tau, write_sweep

CONFIG_ERROR = 2
DATA_ERROR = 3


class DataError(Exception):
    pass


# --- helpers -----------------------------------------------------------------


def _effective_config(args) -> PipelineConfig:
    cfg = _config.load(args.config) if args.config else PipelineConfig().validate()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed).validate()
    return cfg


def _manifest(path, what: str):
    if path is None:
        raise DataError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise DataError(f"--{what}: manifest not found: {p}")
    return read_manifest(p)


def _training_data(args):
    m = _manifest(args.train, "train")
    try:
        m.check_training()
    except ValueError as e:
        raise DataError(str(e)) from None
    return m, load_all(m)


def _check_shape(cfg: PipelineConfig, xs) -> None:
    want = (cfg.data.h, cfg.data.w, cfg.data.c)
    for x in xs:
        if x.shape != want:
            raise ConfigError("data.h/w/c", f"config says {want} but tensors are {x.shape}")


def _detector(cfg: PipelineConfig, args, need_bank: bool) -> Detector:
    if args.checkpoint is None:
        raise DataError("--checkpoint is required")
    net = load_checkpoint(args.checkpoint)
    if net.T != cfg.diffusion.T:
        raise ConfigError("diffusion.T", f"checkpoint was trained with T={net.T}")
    cs = None
    if args.bank is not None:
        cs = load_coreset(args.bank)
    elif need_bank:
        raise DataError("--bank is required")
    return Detector.from_config(cfg, net, cs, schedule_from(cfg))


def _read_tuned(path) -> tuple[int, int]:
    p = Path(path)
    p = p / "tuned.tsv" if p.is_dir() else p
    kv = {}
    for line in p.read_text(encoding="utf-8").splitlines():
        if line and not line.startswith("#"):
            k, v = line.split("\t")
            kv[k] = int(v)
    try:
        return kv["tau"], kv["K"]
    except KeyError as e:
        raise DataError(f"{p}: missing {e.args[0]}") from None


def _tau_k(cfg: PipelineConfig, args) -> tuple[int, int]:
    tau, K = cfg.diffusion.tau, cfg.edit.K
    if getattr(args, "tuned", None):
        tau, K = _read_tuned(args.tuned)
    if getattr(args, "tau", None):
        tau = args.tau
    if getattr(args, "K", None):
        K = args.K
    if not 1 <= tau <= cfg.diffusion.T:
        raise ConfigError("diffusion.tau", f"tau={tau} outside [1, T={cfg.diffusion.T}]")
    return tau, K


def _test_data(args):
    m = _manifest(args.manifest, "manifest")
    xs = load_all(m)
    return m, xs, [r.id for r in m]


# --- subcommands -----------------------------------------------------------


def cmd_datagen(cfg: PipelineConfig, args, out: Path) -> None:
    d = cfg.data
    synth_latent_dataset(
        d.n_classes,
        d.samples_per_class,
        d.h,
        d.w,
        d.c,
        d.anomaly_fraction,
        cfg.seed,
        out_dir=out,
        test_per_class=d.test_per_class,
        offset=d.offset,
        std=d.std,
    )


def cmd_train(cfg, args, out):
    _, xs = _training_data(args)
    _check_shape(cfg, xs)
    net, losses = train(cfg, xs, schedule_from(cfg))
    save_checkpoint(net, out)
    lines = ["step\tloss"] + [f"{i + 1}\t{v:.6f}" for i, v in enumerate(losses)]
    (out / "losses.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_bank(cfg, args, out):
    _, xs = _training_data(args)
    _check_shape(cfg, xs)
    cs = coreset_from(cfg, xs)
    save_coreset(cs, out)


def cmd_tune(cfg, args, out):
    m, xs = _training_data(args)
    det = _detector(cfg, args, need_bank=True)
    ids = [r.id for r in m]
    pv = pseudo_validation(cfg, xs, ids)
    px, pids = [p.tensor for p in pv], [p.id for p in pv]
    py = np.array([p.label for p in pv])
    if py.min() == py.max():
        raise DataError("pseudo validation set has a single class; check synth.normal_fraction")
    tau, tau_scores = select_tau(cfg.tune.tau_values, det, px, pids, py)
    K, k_scores = select_k(cfg.tune.k_values, tau, det, px, pids, py, cfg.edit.weight_mode)
    write_sweep(out / "tau_sweep.tsv", "tau", tau_scores)
    write_sweep(out / "k_sweep.tsv", "K", k_scores)
    (out / "tuned.tsv").write_text(f"tau\t{tau}\nK\t{K}\n", encoding="utf-8")


def _edit_or_none(cfg, args, K):
    return None if args.no_edit else EditConfig(K, cfg.edit.weight_mode)


def cmd_reconstruct(cfg, args, out):
    m, xs, ids = _test_data(args)
    det = _detector(cfg, args, need_bank=not args.no_edit)
    tau, K = _tau_k(cfg, args)
    rec = det.reconstruct(xs, ids, tau, _edit_or_none(cfg, args, K))
    recs = []
    for r, x in zip(m, rec):
        path = f"rec/{r.id}.laft"
        save_tensor(out / path, x)
        recs.append(SampleRecord(r.id, r.label, path, r.class_id))
    write_manifest(out / "reconstructed.tsv", recs)


def cmd_eval(cfg, args, out):
    m, xs, ids = _test_data(args)
    det = _detector(cfg, args, need_bank=True)
    tau, K = _tau_k(cfg, args)
    labels = m.labels()
    masks = [mask_or_zeros(m, r, (cfg.data.h, cfg.data.w)) for r in m]
    rows = [("tau", "-", float(tau)), ("K", "-", float(K))]
    for split, edit in (("with_editing", EditConfig(K, cfg.edit.weight_mode)), ("without_editing", None)):
        res = det.evaluate(xs, ids, labels, masks, tau, edit, cfg.eval.fpr_limit)
        rows += [(k, split, v) for k, v in res.items()]
    (out / "report.tsv").write_text(format_report(rows), encoding="utf-8")


def cmd_heatmap(cfg, args, out):
    m, xs, ids = _test_data(args)
    det = _detector(cfg, args, need_bank=not args.no_edit)
    tau, K = _tau_k(cfg, args)
    maps = det.score_maps(xs, ids, tau, _edit_or_none(cfg, args, K))
    for r, hm in zip(m, normalize_per_image(maps)):
        write_pgm(out / "per_image" / f"{r.id}.pgm", hm)
    classes = sorted({r.class_id for r in m})
    for c in classes:
        idx = [i for i, r in enumerate(m) if r.class_id == c]
        for i, hm in zip(idx, normalize_per_category([maps[i] for i in idx])):
            write_pgm(out / "per_category" / f"{m.records[i].id}.pgm", hm)


COMMANDS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "bank": cmd_bank,
    "tune": cmd_tune,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "heatmap": cmd_heatmap,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (1 is bit-exact)")
    common.add_argument("--out", required=True, help="output directory")

    p = argparse.ArgumentParser(prog="lafite", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("datagen", parents=[common], help="write a synthetic latent dataset")
    for name, hlp in (("train", "train the denoiser"), ("bank", "build the core set")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("--train", help="manifest of normal training tensors")
    sp = sub.add_parser("tune", parents=[common], help="select tau and K on pseudo validation")
    sp.add_argument("--train", help="manifest of normal training tensors")
    sp.add_argument("--checkpoint")
    sp.add_argument("--bank")
    for name, hlp in (
        ("reconstruct", "write reconstructed tensors"),
        ("eval", "metrics report with and without feature editing"),
        ("heatmap", "write PGM anomaly maps"),
    ):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("--manifest", help="manifest of tensors to score")
        sp.add_argument("--checkpoint")
        sp.add_argument("--bank")
        sp.add_argument("--tuned", help="tune output directory or tuned.tsv")
        sp.add_argument("--tau", type=int)
        sp.add_argument("--K", type=int)
        if name != "eval":
            sp.add_argument("--no-edit", action="store_true", help="skip feature editing")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        cfg = _effective_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _config.save(cfg, out / "config.cfg")
        with threadpool_limits(args.threads):
            COMMANDS[args.command](cfg, args, out)
    except ConfigError as e:
        print(f"lafite {args.command}: config error: {e}", file=sys.stderr)
        return CONFIG_ERROR
    except (DataError, FormatError, UndefinedMetricError, OSError, ValueError) as e:
        print(f"lafite {args.command}: data error: {e}", file=sys.stderr)
        return DATA_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
