"""Training loop: two-path style-expansion training with optional texture
regularization, poly learning-rate decay, CSV loss logging, resumable state,
and a halt-on-divergence guard.

Per step: clean forward, style observation from unlabeled images through the
EMA encoder, style sampling, substituted forward, loss sum, optimizer step,
EMA update. The substituted path is skipped while the style source is still
cold (nothing observed yet); its losses count as zero then.
"""

import csv
import json
import time
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .network import EmaEncoder, SegNetwork, save_network
from .objectives import LossBundle, cross_entropy_loss, kl_alignment_loss
from .scenes import SceneDataset
from .seeding import named_rng, named_seed
from .stylemodel import StyleModel, StyleReservoir, sample_prior_styles
from .texture_manifold import load_texture_encoder, texture_regularizer

STATE_FORMAT = "styleseg.train-state/v1"
LOSS_COLUMNS = ("step", "ce", "style", "align", "tex", "total")


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss appears; the last checkpoint stays good."""


class Trainer:
    def __init__(self, config: TrainConfig):
        self.cfg = config
        self.out = Path(config.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        torch.manual_seed(named_seed(config.seed, "torch"))

        self.net = SegNetwork(num_classes=config.num_classes, widths=config.widths)
        self.opt = torch.optim.AdamW(self.net.parameters(), lr=config.lr,
                                     betas=config.betas,
                                     weight_decay=config.weight_decay)
        self.train_data = SceneDataset(config.data_root, config.train_split)
        if self.train_data.labels is None:
            raise ValueError("training split has no labels")

        self.step = 0
        self.last_checkpoint_step = None
        self.batch_rng = named_rng(config.seed, "batches")
        self.style_rng = named_rng(config.seed, "styles")
        self.unlabeled_rng = named_rng(config.seed, "unlabeled")

        self.ema = None
        self.style_models = None
        self.reservoirs = None
        self.unlabeled_data = None
        if config.uses_style_model:
            self.unlabeled_data = SceneDataset(config.data_root, config.unlabeled_split)
            self.ema = EmaEncoder(self.net.encoder, alpha=config.ema_alpha)
            stage_channels = {s: config.widths[s] for s in config.substitution_stages}
            if config.style_mode == "generated":
                self.style_models = {
                    s: StyleModel(c, buffer_capacity=config.buffer_capacity,
                                  quantile_table_size=config.quantile_table_size,
                                  pooled=config.pooled_style_stats)
                    for s, c in stage_channels.items()}
            else:
                self.reservoirs = {s: StyleReservoir(c, capacity=config.buffer_capacity)
                                   for s, c in stage_channels.items()}

        self.texture_model = None
        if config.texture_reg:
            self.texture_model, report = load_texture_encoder(config.texture_encoder_path)
            acc = report.get("holdout_accuracy")
            if acc is not None and acc < 0.9:
                raise ValueError(f"texture encoder accuracy {acc:.3f} below the 0.9 floor")
            if self.texture_model.widths != tuple(config.widths):
                raise ValueError(
                    f"texture encoder widths {self.texture_model.widths} do not "
                    f"match segmentation widths {tuple(config.widths)}")

    # -- data plumbing ---------------------------------------------------

    def _train_batch(self):
        idx = self.batch_rng.integers(0, len(self.train_data), size=self.cfg.batch_size)
        images = torch.from_numpy(self.train_data.images[idx])
        labels = torch.from_numpy(self.train_data.labels[idx])
        return images, labels

    def _unlabeled_batch(self):
        idx = self.unlabeled_rng.integers(0, len(self.unlabeled_data),
                                          size=self.cfg.batch_size)
        return torch.from_numpy(self.unlabeled_data.images[idx])

    # -- style plumbing ---------------------------------------------------

    def _observe_unlabeled_styles(self) -> None:
        styles = self.ema.extract_styles(self._unlabeled_batch(),
                                         self.cfg.substitution_stages)
        for stage, (mean, std) in styles.items():
            if self.style_models is not None:
                self.style_models[stage].observe(mean, std)
            else:
                self.reservoirs[stage].add(mean, std)

    def _sample_styles(self):
        """Per-stage style tensors, or None while the style source is cold."""
        cfg = self.cfg
        out = {}
        for stage in cfg.substitution_stages:
            channels = cfg.widths[stage]
            if cfg.style_mode == "random":
                mean, std = sample_prior_styles(cfg.batch_size, channels, self.style_rng)
            elif cfg.style_mode == "real":
                if not self.reservoirs[stage].ready:
                    return None
                mean, std = self.reservoirs[stage].sample(cfg.batch_size, self.style_rng)
            else:
                if not self.style_models[stage].ready:
                    return None
                mean, std = self.style_models[stage].sample(cfg.batch_size, self.style_rng)
            out[stage] = (torch.from_numpy(mean.astype(np.float32)),
                          torch.from_numpy(std.astype(np.float32)))
        return out

    # -- optimization ------------------------------------------------------

    def _lr_now(self) -> float:
        frac = min(self.step / self.cfg.steps, 1.0)
        return self.cfg.lr * (1.0 - frac) ** self.cfg.poly_power

    def train_step(self) -> dict:
        cfg = self.cfg
        lr = self._lr_now()
        for group in self.opt.param_groups:
            group["lr"] = lr

        images, labels = self._train_batch()
        feats = self.net.forward_features(images)
        logits = self.net.decode(feats, images.shape[-2:])
        ce = cross_entropy_loss(logits, labels)

        zero = torch.zeros((), dtype=logits.dtype)
        texture = zero
        if self.texture_model is not None:
            texture = texture_regularizer(feats, self.texture_model, images, labels,
                                          cfg.stage_weights, cfg.natural_class_ids)

        style_loss = zero
        align = zero
        if cfg.uses_style_paths:
            if cfg.uses_style_model:
                self._observe_unlabeled_styles()
            styles = self._sample_styles()
            if styles is not None:
                logits_aug, _ = self.net.forward_substituted(feats, styles,
                                                             images.shape[-2:])
                style_loss = cross_entropy_loss(logits_aug, labels)
                align = kl_alignment_loss(logits, logits_aug)

        bundle = LossBundle(ce=ce, style=style_loss, align=align, texture=texture)
        total = bundle.total
        if not torch.isfinite(total):
            self._record_divergence(bundle)
            raise TrainingDiverged(
                f"non-finite loss at step {self.step}; "
                f"last good checkpoint at step {self.last_checkpoint_step}")

        self.opt.zero_grad(set_to_none=True)
        total.backward()
        self.opt.step()
        if self.ema is not None:
            self.ema.update()
        self.step += 1
        values = bundle.detach_values()
        values["lr"] = lr
        return values

    def _record_divergence(self, bundle: LossBundle) -> None:
        info = {"step": self.step,
                "losses": {k: repr(v) for k, v in vars(bundle).items()},
                "last_checkpoint_step": self.last_checkpoint_step}
        (self.out / "diverged.json").write_text(json.dumps(info, indent=2))

    # -- persistence -------------------------------------------------------

    def save_state(self, path=None) -> Path:
        path = Path(path) if path else self.out / "state_latest.pt"
        payload = {
            "format": STATE_FORMAT,
            "step": self.step,
            "config": self.cfg.to_dict(),
            "network": self.net.state_dict(),
            "optimizer": self.opt.state_dict(),
            "rng": {
                "batches": self.batch_rng.bit_generator.state,
                "styles": self.style_rng.bit_generator.state,
                "unlabeled": self.unlabeled_rng.bit_generator.state,
                "torch": torch.get_rng_state(),
            },
        }
        if self.ema is not None:
            payload["ema"] = self.ema.shadow.state_dict()
        if self.style_models is not None:
            payload["style_models"] = {s: m.state_dict()
                                       for s, m in self.style_models.items()}
        if self.reservoirs is not None:
            payload["reservoirs"] = {s: (r._means.copy(), r._stds.copy())
                                     for s, r in self.reservoirs.items()}
        torch.save(payload, path)
        self.last_checkpoint_step = self.step
        return path

    @classmethod
    def restore(cls, state_path) -> "Trainer":
        payload = torch.load(state_path, map_location="cpu", weights_only=False)
        if payload.get("format") != STATE_FORMAT:
            raise ValueError(f"unrecognized train state format: {payload.get('format')!r}")
        trainer = cls(TrainConfig.from_dict(payload["config"]))
        trainer.step = payload["step"]
        trainer.net.load_state_dict(payload["network"])
        trainer.opt.load_state_dict(payload["optimizer"])
        trainer.batch_rng.bit_generator.state = payload["rng"]["batches"]
        trainer.style_rng.bit_generator.state = payload["rng"]["styles"]
        trainer.unlabeled_rng.bit_generator.state = payload["rng"]["unlabeled"]
        torch.set_rng_state(payload["rng"]["torch"])
        if trainer.ema is not None:
            trainer.ema.shadow.load_state_dict(payload["ema"])
        if trainer.style_models is not None:
            trainer.style_models = {
                s: StyleModel.from_state(state)
                for s, state in payload["style_models"].items()}
        if trainer.reservoirs is not None:
            for s, (means, stds) in payload["reservoirs"].items():
                if means.shape[0]:
                    trainer.reservoirs[s].add(means, stds)
        trainer.last_checkpoint_step = payload["step"]
        return trainer

    def _truncate_loss_log(self) -> None:
        # drop rows past the restored step so the log stays monotone
        path = self.out / "losses.csv"
        if not path.exists():
            return
        with path.open() as fh:
            rows = list(csv.reader(fh))
        kept = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= self.step]
        with path.open("w", newline="") as fh:
            csv.writer(fh).writerows(kept)

    # -- main loop ----------------------------------------------------------

    def train(self, quiet: bool = False) -> dict:
        cfg = self.cfg
        cfg.save(self.out / "config.json")
        loss_path = self.out / "losses.csv"
        resuming = self.step > 0 and loss_path.exists()
        if resuming:
            self._truncate_loss_log()
        mode = "a" if resuming else "w"
        started = time.time()
        with loss_path.open(mode, newline="") as fh:
            writer = csv.writer(fh)
            if mode == "w":
                writer.writerow(LOSS_COLUMNS)
            while self.step < cfg.steps:
                values = self.train_step()
                writer.writerow([self.step,
                                 f"{values['ce']:.6f}", f"{values['style']:.6f}",
                                 f"{values['align']:.6f}", f"{values['texture']:.6f}",
                                 f"{values['total']:.6f}"])
                if self.step % cfg.checkpoint_every == 0 or self.step == cfg.steps:
                    fh.flush()
                    self.save_state()
                if not quiet and cfg.log_every and self.step % cfg.log_every == 0:
                    print(f"step {self.step}/{cfg.steps} "
                          f"total {values['total']:.4f} ce {values['ce']:.4f} "
                          f"style {values['style']:.4f} align {values['align']:.4f} "
                          f"tex {values['texture']:.4f} lr {values['lr']:.2e}",
                          flush=True)

        final_net = self.out / "network_final.pt"
        save_network(final_net, self.net,
                     extra={"step": self.step, "train_seed": cfg.seed,
                            "style_mode": cfg.style_mode,
                            "texture_reg": cfg.texture_reg})
        if self.style_models is not None:
            for stage, model in self.style_models.items():
                model.save(self.out / f"style_stage{stage}.npz")
        summary = {
            "steps": self.step,
            "wall_seconds": round(time.time() - started, 1),
            "network_checkpoint": str(final_net),
            "style_mode": cfg.style_mode,
            "texture_reg": cfg.texture_reg,
            "seed": cfg.seed,
        }
        (self.out / "summary.json").write_text(json.dumps(summary, indent=2))
        return summary
