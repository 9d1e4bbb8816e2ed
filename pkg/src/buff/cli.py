"""Command-line pipeline: config parsing and the staged workflow.

Stages: train-bayes -> make-masks -> train-diff -> infer -> eval, plus
selfcheck.  Every tunable is a namespaced key with a documented default;
a config file holds ``key = value`` lines, command-line pairs override the
file, and the env var BUFF_SEED overrides data.seed last.

Seed derivation inside the pipeline (all offsets fixed):
  bayes net init        bayes.seed        batches  bayes.seed + 1
  predictor init        diffusion.seed    encoder init  diffusion.seed + 1
  encoder pretraining   diffusion.seed + 2    diffusion batches/noise  diffusion.seed + 3
  sampling for image i  infer.seed + i
  eval-set images       data.seed + 1_000_000 (train images use data.seed)
"""
from __future__ import annotations

import argparse
import contextlib
import fcntl
import os
import sys
from pathlib import Path

import numpy as np

from . import selfcheck as selfcheck_mod
from .bayes import forward_uncertainty, init_uncertainty_net, predict_mask, train_uncertainty
from .data import DatasetSpec, bicubic_resize, crop_patches, degrade, gen_dataset
from .diffusion import (
    init_encoder,
    init_noise_predictor,
    make_schedule,
    pretrain_encoder,
    sample_sr,
    train_diffusion,
)
from .errors import ConfigError, StageError
from .gg import gg_variance
from .io import (
    load_checkpoint,
    load_masks,
    read_pgm,
    save_checkpoint,
    save_masks,
    write_metrics_csv,
    write_pgm,
)
from .mask import RefineConfig, refine_mask
from .metrics import ause, mask_quality_label, psnr, sparsification, ssim
from .nets import TrainConfig

STAGES = ("train-bayes", "make-masks", "train-diff", "infer", "eval", "selfcheck")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (converter, default, help)
CONFIG_KEYS = {
    "data.seed": (int, 0, "seed for the synthetic training images"),
    "data.count": (int, 64, "number of training images"),
    "data.eval_count": (int, 16, "number of held-out images"),
    "data.size": (int, 32, "HR side length"),
    "data.scale": (int, 4, "super-resolution factor (2 or 4)"),
    "data.patch": (int, 32, "HR patch side for training crops"),
    "data.stride": (int, 32, "stride between patch windows"),
    "data.mix_smooth": (float, 1.0, "weight of smooth-gradient images"),
    "data.mix_grating": (float, 1.0, "weight of sinusoidal-grating images"),
    "data.mix_blobs": (float, 1.0, "weight of random-blob images"),
    "data.mix_checker": (float, 1.0, "weight of checker-edge images"),
    "bayes.seed": (int, 1, "uncertainty net init seed (+1 for batches)"),
    "bayes.channels": (int, 16, "uncertainty net trunk width"),
    "bayes.iterations": (int, 2000, "uncertainty training iterations"),
    "bayes.batch": (int, 16, "uncertainty training batch size"),
    "bayes.lr": (float, 1e-4, "uncertainty training learning rate"),
    "bayes.lr_decay_factor": (float, 0.5, "step decay multiplier"),
    "bayes.lr_decay_every": (int, 1000, "iterations between decays"),
    "bayes.adam_beta1": (float, 0.9, "Adam beta1"),
    "bayes.adam_beta2": (float, 0.999, "Adam beta2"),
    "refine.k": (float, 10.0, "sigmoid steepness of the adjustment factor"),
    "refine.delta1": (float, 1.2, "amplification base"),
    "refine.delta2": (float, 0.85, "reduction base"),
    "refine.gamma": (float, 0.4, "amplification/reduction intensity"),
    "refine.threshold": (float, 0.01, "fixed variance threshold"),
    "refine.threshold_mode": (str, "per_image_median", "fixed | per_image_median"),
    "mask.unit": (_bool, False, "replace all modulation masks by 1 (baseline)"),
    "diffusion.seed": (int, 2, "predictor init seed (see module docstring)"),
    "diffusion.T": (int, 100, "number of diffusion steps"),
    "diffusion.beta_start": (float, 1e-4, "first beta of the linear schedule"),
    "diffusion.beta_end": (float, 0.05, "last beta of the linear schedule"),
    "diffusion.base_channels": (int, 16, "U-net base width"),
    "diffusion.enc_channels": (int, 8, "LR encoder feature width"),
    "diffusion.iterations": (int, 5000, "diffusion training iterations"),
    "diffusion.batch": (int, 16, "diffusion training batch size"),
    "diffusion.lr": (float, 2e-4, "diffusion learning rate"),
    "diffusion.adam_beta1": (float, 0.9, "Adam beta1"),
    "diffusion.adam_beta2": (float, 0.999, "Adam beta2"),
    "diffusion.lr_schedule": (str, "cosine", "cosine | step"),
    "diffusion.lr_decay_factor": (float, 0.5, "step decay multiplier (step mode)"),
    "diffusion.lr_decay_every": (int, 2000, "iterations between decays (step mode)"),
    "diffusion.use_bg": (_bool, True, "modulate the training noise by the mask"),
    "diffusion.use_be": (_bool, True, "feed the mask to the LR encoder"),
    "diffusion.pretrain_iters": (int, 1500, "encoder MAE pretraining iterations (0 = off)"),
    "diffusion.pretrain_lr": (float, 1e-3, "encoder pretraining learning rate"),
    "diffusion.residual_scale": (float, 24.0, "residual amplification inside the chain"),
    "infer.seed": (int, 3, "sampling seed (per-image offset added)"),
    "eval.sparsification_steps": (int, 20, "removal fractions for the AUSE metric"),
    "paths.run_dir": (str, "runs/default", "artifact directory"),
}


class RunConfig:
    """Validated flat key/value configuration with typed accessors."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key):
        return self.values[key]

    def dump(self) -> str:
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values))

    # -- derived sub-configurations -------------------------------------

    def dataset_spec(self, train: bool = True) -> DatasetSpec:
        mix = tuple(
            self[f"data.mix_{name}"] for name in ("smooth", "grating", "blobs", "checker")
        )
        return DatasetSpec(
            count=self["data.count"] if train else self["data.eval_count"],
            size=self["data.size"],
            scale=self["data.scale"],
            mix=mix,
            seed=self["data.seed"] if train else self["data.seed"] + 1_000_000,
        )

    def refine_config(self) -> RefineConfig:
        return RefineConfig(
            threshold=self["refine.threshold"],
            steepness=self["refine.k"],
            amp_base=self["refine.delta1"],
            red_base=self["refine.delta2"],
            intensity=self["refine.gamma"],
            threshold_mode=self["refine.threshold_mode"],
        )

    def bayes_train_config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self["bayes.iterations"],
            batch_size=self["bayes.batch"],
            learning_rate=self["bayes.lr"],
            lr_decay_factor=self["bayes.lr_decay_factor"],
            lr_decay_every=self["bayes.lr_decay_every"],
            adam_beta1=self["bayes.adam_beta1"],
            adam_beta2=self["bayes.adam_beta2"],
            seed=self["bayes.seed"] + 1,
            lr_schedule="step",
        )

    def diffusion_train_config(self, iterations=None, seed_offset=3) -> TrainConfig:
        return TrainConfig(
            iterations=iterations or self["diffusion.iterations"],
            batch_size=self["diffusion.batch"],
            learning_rate=self["diffusion.lr"],
            lr_decay_factor=self["diffusion.lr_decay_factor"],
            lr_decay_every=self["diffusion.lr_decay_every"],
            adam_beta1=self["diffusion.adam_beta1"],
            adam_beta2=self["diffusion.adam_beta2"],
            seed=self["diffusion.seed"] + seed_offset,
            lr_schedule=self["diffusion.lr_schedule"],
        )


def _convert(key: str, raw: str, where: str):
    if key not in CONFIG_KEYS:
        raise ConfigError(f"unknown config key '{key}' ({where})")
    conv = CONFIG_KEYS[key][0]
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key} ({where}): {exc}") from exc


def parse_config(text: str | None, overrides=(), env=None) -> RunConfig:
    """Defaults <- config file lines <- key=value overrides <- BUFF_SEED."""
    values = {k: default for k, (_, default, _) in CONFIG_KEYS.items()}
    if text is not None:
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"expected key=value (file line {lineno}): {line!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            values[key] = _convert(key, raw, f"file line {lineno}")
    for pair in overrides:
        if "=" not in pair:
            raise ConfigError(f"override must be key=value, got {pair!r}")
        key, raw = (part.strip() for part in pair.split("=", 1))
        values[key] = _convert(key, raw, "command line")
    env = os.environ if env is None else env
    if "BUFF_SEED" in env:
        values["data.seed"] = _convert("data.seed", env["BUFF_SEED"], "env BUFF_SEED")
    return RunConfig(values)


# ---------------------------------------------------------------------------
# artifact paths and helpers


class RunPaths:
    def __init__(self, run_dir):
        self.root = Path(run_dir)
        self.data_dir = self.root / "data"
        self.sr_dir = self.root / "sr"
        self.bayes_ckpt = self.root / "bayes.ckpt"
        self.diffusion_ckpt = self.root / "diffusion.ckpt"
        self.masks = self.root / "masks.buff"
        self.metrics_csv = self.root / "metrics.csv"
        self.log = self.root / "run.log"
        self.lock = self.root / ".lock"


@contextlib.contextmanager
def _artifact_lock(paths: RunPaths):
    paths.root.mkdir(parents=True, exist_ok=True)
    with open(paths.lock, "w") as handle:
        try:
            fcntl.flock(handle, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError as exc:
            raise StageError(
                f"another stage is running in {paths.root} (lock {paths.lock})"
            ) from exc
        yield


def _log(paths: RunPaths, stage: str, message: str, echo: bool = True):
    line = f"[{stage}] {message}"
    if echo:
        print(line)
    with open(paths.log, "a") as f:
        f.write(line + "\n")


def _require(path: Path, what: str, produced_by: str):
    if not path.exists():
        raise StageError(f"missing {what}: {path} (run '{produced_by}' first)")


def _train_pairs(cfg: RunConfig):
    size, scale = cfg["data.size"], cfg["data.scale"]
    images = gen_dataset(cfg.dataset_spec(train=True))
    pairs = []
    for hr in images:
        lr = degrade(hr, scale)
        pairs.append((bicubic_resize(lr, size, size), hr))
    return images, pairs


# ---------------------------------------------------------------------------
# stages


def _stage_train_bayes(cfg: RunConfig, paths: RunPaths):
    images, pairs = _train_pairs(cfg)
    paths.data_dir.mkdir(parents=True, exist_ok=True)
    for i, hr in enumerate(images):
        write_pgm(paths.data_dir / f"train_{i:04d}.pgm", hr)
    for i, hr in enumerate(gen_dataset(cfg.dataset_spec(train=False))):
        write_pgm(paths.data_dir / f"eval_{i:04d}.pgm", hr)
    net = init_uncertainty_net(cfg["bayes.seed"], cfg["bayes.channels"])
    net, history = train_uncertainty(net, pairs, cfg.bayes_train_config())
    save_checkpoint(paths.bayes_ckpt, net)
    _log(paths, "train-bayes", f"trained {len(history)} iterations, "
         f"loss {history[0]:.4f} -> {history[-1]:.4f}")
    _log(paths, "train-bayes", f"wrote {paths.bayes_ckpt}")
    return 0


def _stage_make_masks(cfg: RunConfig, paths: RunPaths):
    _require(paths.bayes_ckpt, "uncertainty checkpoint", "train-bayes")
    net = load_checkpoint(paths.bayes_ckpt)
    images = gen_dataset(cfg.dataset_spec(train=True))
    scale = cfg["data.scale"]
    refine_cfg = cfg.refine_config()
    masks = []
    for hr in images:
        if cfg["mask.unit"]:
            masks.append(np.ones_like(hr))
        else:
            masks.append(refine_mask(predict_mask(net, degrade(hr, scale), scale), refine_cfg))
    save_masks(paths.masks, masks)
    flat = np.concatenate([m.ravel() for m in masks])
    _log(paths, "make-masks", f"wrote {len(masks)} masks to {paths.masks} "
         f"(range {flat.min():.3f}..{flat.max():.3f})")
    return 0


def _stage_train_diff(cfg: RunConfig, paths: RunPaths):
    _require(paths.masks, "modulation masks", "make-masks")
    masks = [m.astype(np.float64) for m in load_masks(paths.masks)]
    images = gen_dataset(cfg.dataset_spec(train=True))
    if len(masks) != len(images):
        raise StageError(
            f"{paths.masks} holds {len(masks)} masks for {len(images)} images; "
            "re-run make-masks"
        )
    scale = cfg["data.scale"]
    triples = []
    for hr, b in zip(images, masks):
        ps = crop_patches(hr, degrade(hr, scale), b, cfg["data.patch"], cfg["data.stride"])
        triples.extend(ps.triples)
    use_bg, use_be = cfg["diffusion.use_bg"], cfg["diffusion.use_be"]
    encoder = init_encoder(cfg["diffusion.seed"] + 1, cfg["diffusion.enc_channels"], use_be)
    if cfg["diffusion.pretrain_iters"] > 0:
        pre_cfg = TrainConfig(
            iterations=cfg["diffusion.pretrain_iters"],
            batch_size=cfg["diffusion.batch"],
            learning_rate=cfg["diffusion.pretrain_lr"],
            adam_beta1=cfg["diffusion.adam_beta1"],
            adam_beta2=cfg["diffusion.adam_beta2"],
            seed=cfg["diffusion.seed"] + 2,
            lr_schedule="cosine",
        )
        encoder, pre_hist = pretrain_encoder(encoder, triples, pre_cfg, use_be)
        _log(paths, "train-diff", f"encoder pretraining loss "
             f"{pre_hist[0]:.4f} -> {pre_hist[-1]:.4f}")
    predictor = init_noise_predictor(
        cfg["diffusion.seed"], cfg["diffusion.base_channels"],
        cond_channels=cfg["diffusion.enc_channels"],
    )
    sched = make_schedule(
        cfg["diffusion.T"], cfg["diffusion.beta_start"], cfg["diffusion.beta_end"]
    )
    predictor, history = train_diffusion(
        predictor, encoder, triples, sched, cfg.diffusion_train_config(),
        use_bg=use_bg, use_be=use_be,
        residual_scale=cfg["diffusion.residual_scale"],
    )
    merged = {f"predictor.{k}": v for k, v in predictor.items()}
    merged.update({f"encoder.{k}": v for k, v in encoder.items()})
    save_checkpoint(paths.diffusion_ckpt, merged)
    _log(paths, "train-diff", f"trained {len(history)} iterations, "
         f"loss {np.mean(history[:50]):.4f} -> {np.mean(history[-50:]):.4f}")
    _log(paths, "train-diff", f"wrote {paths.diffusion_ckpt}")
    return 0


def _split_diffusion_ckpt(tensors):
    predictor = {k[len("predictor."):]: v for k, v in tensors.items() if k.startswith("predictor.")}
    encoder = {k[len("encoder."):]: v for k, v in tensors.items() if k.startswith("encoder.")}
    return predictor, encoder


def _stage_infer(cfg: RunConfig, paths: RunPaths):
    _require(paths.bayes_ckpt, "uncertainty checkpoint", "train-bayes")
    _require(paths.diffusion_ckpt, "diffusion checkpoint", "train-diff")
    bayes_net = load_checkpoint(paths.bayes_ckpt)
    predictor, encoder = _split_diffusion_ckpt(load_checkpoint(paths.diffusion_ckpt))
    sched = make_schedule(
        cfg["diffusion.T"], cfg["diffusion.beta_start"], cfg["diffusion.beta_end"]
    )
    paths.sr_dir.mkdir(parents=True, exist_ok=True)
    scale = cfg["data.scale"]
    for i, hr in enumerate(gen_dataset(cfg.dataset_spec(train=False))):
        sr = sample_sr(
            degrade(hr, scale), predictor, encoder, bayes_net, sched,
            cfg.refine_config(), scale, seed=cfg["infer.seed"] + i,
            use_be=cfg["diffusion.use_be"], unit_mask=cfg["mask.unit"],
            residual_scale=cfg["diffusion.residual_scale"],
        )
        write_pgm(paths.sr_dir / f"sr_{i:04d}.pgm", sr)
    _log(paths, "infer", f"wrote {cfg['data.eval_count']} SR images to {paths.sr_dir}")
    return 0


def _stage_eval(cfg: RunConfig, paths: RunPaths):
    _require(paths.bayes_ckpt, "uncertainty checkpoint", "train-bayes")
    _require(paths.sr_dir / "sr_0000.pgm", "SR images", "infer")
    bayes_net = load_checkpoint(paths.bayes_ckpt)
    scale, size = cfg["data.scale"], cfg["data.size"]
    rows, sr_psnrs, bi_psnrs, auses = [], [], [], []
    for i, hr in enumerate(gen_dataset(cfg.dataset_spec(train=False))):
        sr = read_pgm(paths.sr_dir / f"sr_{i:04d}.pgm")
        lr = degrade(hr, scale)
        lr_up = bicubic_resize(lr, size, size)
        field = forward_uncertainty(bayes_net, lr_up)
        curve = sparsification(
            gg_variance(field.scale, field.shape),
            np.abs(field.mean - hr),
            cfg["eval.sparsification_steps"],
        )
        row = (f"img_{i:04d}", psnr(sr, hr), ssim(sr, hr), ause(curve))
        rows.append(row)
        sr_psnrs.append(row[1])
        bi_psnrs.append(psnr(lr_up, hr))
        auses.append(row[3])
    write_metrics_csv(paths.metrics_csv, rows)
    mean_ause = float(np.mean(auses))
    _log(paths, "eval", f"mean SR PSNR {np.mean(sr_psnrs):.3f} dB "
         f"(bicubic {np.mean(bi_psnrs):.3f} dB, delta {np.mean(sr_psnrs) - np.mean(bi_psnrs):+.3f})")
    _log(paths, "eval", f"mean SSIM {np.mean([r[2] for r in rows]):.4f}")
    _log(paths, "eval", f"mean AUSE {mean_ause:.4f} "
         f"(mask quality: {mask_quality_label(mean_ause)})")
    _log(paths, "eval", f"wrote {paths.metrics_csv}")
    return 0


def _stage_selfcheck(cfg: RunConfig, paths: RunPaths):
    failures = 0
    for name, ok, detail in selfcheck_mod.run_all():
        line = f"PASS {name}" if ok else f"FAIL {name}: {detail}"
        _log(paths, "selfcheck", line)
        failures += 0 if ok else 1
    _log(paths, "selfcheck", f"{failures} failure(s)")
    return 1 if failures else 0


_STAGE_FNS = {
    "train-bayes": _stage_train_bayes,
    "make-masks": _stage_make_masks,
    "train-diff": _stage_train_diff,
    "infer": _stage_infer,
    "eval": _stage_eval,
    "selfcheck": _stage_selfcheck,
}


def run_stage(stage: str, cfg: RunConfig) -> int:
    """Run one pipeline stage; returns a process exit status."""
    import torch

    torch.set_num_threads(1)  # keeps artifact bytes machine-load independent
    if stage not in _STAGE_FNS:
        raise ConfigError(f"unknown stage {stage!r}, expected one of {STAGES}")
    paths = RunPaths(cfg["paths.run_dir"])
    try:
        with _artifact_lock(paths):
            _log(paths, stage, "effective config:\n" + cfg.dump(), echo=False)
            return _STAGE_FNS[stage](cfg, paths)
    except (StageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="buff",
        description="uncertainty-guided diffusion super-resolution pipeline",
    )
    parser.add_argument("stage", choices=STAGES)
    parser.add_argument("--config", type=Path, default=None, help="key=value config file")
    parser.add_argument("overrides", nargs="*", help="key=value overrides")
    args = parser.parse_intermixed_args(argv)
    try:
        text = args.config.read_text() if args.config else None
        cfg = parse_config(text, args.overrides)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run_stage(args.stage, cfg)


if __name__ == "__main__":
    sys.exit(main())
