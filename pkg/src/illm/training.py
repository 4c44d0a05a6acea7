"""Two-stage training orchestration.

Stage 1 pretrains the full autoencoder on the rate-distortion objective
with rate targeting and a warmup+cosine learning rate.  Stage 2 freezes
the encoder and entropy model and fine-tunes the decoder against a
discriminator (multi-class by default, binary PatchGAN as the baseline).
The labeler stage trains the vector-quantizing labeler.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

from .codec import HyperpriorCodec, likelihood_bits, quantize, save_checkpoint
from .discriminator import make_discriminator
from .errors import DomainError
from .labeler import VQLabeler
from .losses import (
    LossWeights,
    binary_gan_losses,
    distortion,
    illm_disc_loss,
    illm_gen_loss,
)
from .schedules import RateTargetSchedule, StagePlan, freeze_plan, lr_at_step, rate_lambda

SESSION_VERSION = 1
_EMA_DECAY = 0.9


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def _apply_freeze(codec: HyperpriorCodec, stage: str) -> None:
    mask = freeze_plan(stage)
    groups = {
        "encoder": codec.encoder_parameters(),
        "entropy": codec.entropy_parameters(),
        "decoder": codec.decoder_parameters(),
    }
    for name, params in groups.items():
        for p in params:
            p.requires_grad_(mask[name])


class TrainingSession:
    """Holds models, optimizers, and rate-targeting state for one stage."""

    def __init__(
        self,
        stage: str,
        codec: HyperpriorCodec | None = None,
        labeler: VQLabeler | None = None,
        discriminator: nn.Module | None = None,
        plan: StagePlan | None = None,
        sched: RateTargetSchedule | None = None,
        weights: LossWeights | None = None,
        extractor=None,
    ):
        if stage in ("pretrain", "finetune") and codec is None:
            raise DomainError(f"stage {stage!r} requires a codec")
        if stage == "labeler" and labeler is None:
            raise DomainError("labeler stage requires a labeler model")
        if stage == "finetune":
            if discriminator is None:
                raise DomainError("stage 2 requires a discriminator")
            if getattr(discriminator, "config", None) is not None:
                if discriminator.config.kind == "illm_unet" and labeler is None:
                    raise DomainError("stage 2 with the multi-class head requires a frozen labeler")
        self.stage = stage
        self.codec = codec
        self.labeler = labeler
        self.discriminator = discriminator
        self.plan = plan or StagePlan(stage="pretrain")
        self.sched = sched
        self.weights = weights or LossWeights()
        self.extractor = extractor
        self.step = 0
        self.ema_bpp: float | None = None

        if codec is not None:
            _apply_freeze(codec, stage if stage != "labeler" else "labeler")
        if stage == "labeler":
            self.optimizer = torch.optim.AdamW(
                labeler.parameters(),
                lr=self.plan.peak_lr,
                betas=self.plan.betas,
                weight_decay=self.plan.weight_decay,
            )
        elif stage == "pretrain":
            self.optimizer = torch.optim.AdamW(
                codec.parameters(),
                lr=self.plan.peak_lr,
                betas=self.plan.betas,
                weight_decay=self.plan.weight_decay,
            )
        else:  # finetune: decoder-only generator optimizer + discriminator
            if labeler is not None:
                self.labeler.eval()
                for p in self.labeler.parameters():
                    p.requires_grad_(False)
            self.optimizer = torch.optim.AdamW(
                codec.decoder_parameters(),
                lr=self.plan.peak_lr,
                betas=self.plan.betas,
                weight_decay=self.plan.weight_decay,
            )
            self.disc_optimizer = torch.optim.AdamW(
                discriminator.parameters(),
                lr=self.plan.disc_lr,
                betas=self.plan.betas,
                weight_decay=self.plan.weight_decay,
            )

    # -- steps ---------------------------------------------------------------
    def _set_lr(self, optimizer, lr):
        for group in optimizer.param_groups:
            group["lr"] = lr

    @staticmethod
    def _scalar(x) -> float:
        return float(x.detach()) if torch.is_tensor(x) else float(x)

    def _update_ema(self, bpp: float) -> float:
        self.ema_bpp = bpp if self.ema_bpp is None else (
            _EMA_DECAY * self.ema_bpp + (1 - _EMA_DECAY) * bpp
        )
        return self.ema_bpp

    def stage1_step(self, batch: torch.Tensor) -> dict:
        if self.stage != "pretrain":
            raise DomainError("stage1_step only valid in the pretrain stage")
        lr = lr_at_step(min(self.step + 1, self.plan.total_steps), self.plan)
        self._set_lr(self.optimizer, lr)

        recon, rate, _ = self.codec.forward_train(batch)
        dist = distortion(recon, batch, self.weights, self.extractor)
        ema = self._update_ema(self._scalar(rate.bpp))
        penalty, target = rate_lambda(self.step, ema, self.sched) if self.sched else (1.0, 0.0)
        loss = penalty * rate.bpp + self.weights.lambda_distortion * dist

        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.step += 1
        return {
            "stage": 1,
            "step": self.step,
            "lr": lr,
            "loss": self._scalar(loss),
            "bpp": self._scalar(rate.bpp),
            "ema_bpp": ema,
            "distortion": self._scalar(dist),
            "rate_penalty": penalty,
            "effective_target": target,
        }

    def _frozen_reconstruction(self, batch: torch.Tensor):
        """Decoder input via the frozen encoder/entropy path (no grads)."""
        with torch.no_grad():
            y = self.codec.analyze(batch)
            means, scales, _, hyper_bits = self.codec.entropy_params(y, "round")
            y_hat = quantize(y, means, "round")
            latent_bits = likelihood_bits(y_hat, means, scales).sum()
            pixels = batch.shape[0] * batch.shape[-2] * batch.shape[-1]
            bpp = float(latent_bits + hyper_bits) / pixels
        recon = torch.clamp(self.codec.decoder(y_hat), 0.0, 1.0)
        return recon, y_hat, bpp

    def stage2_step(self, batch: torch.Tensor) -> dict:
        if self.stage != "finetune":
            raise DomainError("stage2_step only valid in the finetune stage")
        disc = self.discriminator
        multiclass = disc.config.kind == "illm_unet"
        recon, y_hat, bpp = self._frozen_reconstruction(batch)

        if multiclass:
            with torch.no_grad():
                labels = self.labeler.label_map(batch)
            logits_real = disc(batch)
            logits_fake = disc(recon.detach())
            loss_d = illm_disc_loss(logits_real, logits_fake, labels)
            acc = float(
                (logits_real.argmax(dim=1) == labels.argmax(dim=1)).float().mean()
            )
        else:
            up = F.interpolate(y_hat, size=batch.shape[-2:], mode="nearest")
            cond = up if disc.config.conditioning_channels else None
            logits_real = disc(batch, cond) if cond is not None else disc(batch)
            logits_fake = disc(recon.detach(), cond) if cond is not None else disc(recon.detach())
            loss_d, _ = binary_gan_losses(logits_real, logits_fake)
            acc = float((logits_real > 0).float().mean())
        self.disc_optimizer.zero_grad()
        loss_d.backward()
        self.disc_optimizer.step()

        if multiclass:
            gen_adv = illm_gen_loss(disc(recon), labels)
        else:
            up = F.interpolate(y_hat, size=batch.shape[-2:], mode="nearest")
            cond = up if disc.config.conditioning_channels else None
            fake_logits = disc(recon, cond) if cond is not None else disc(recon)
            gen_adv = binary_gan_losses(fake_logits, fake_logits)[1]
        dist = distortion(recon, batch, self.weights, self.extractor)
        gen_loss = (
            self.weights.lambda_distortion * dist + self.weights.lambda_adv * gen_adv
        )
        self.optimizer.zero_grad()
        gen_loss.backward()
        self.optimizer.step()
        self.step += 1
        return {
            "stage": 2,
            "step": self.step,
            "loss_d": self._scalar(loss_d),
            "loss_g_adv": self._scalar(gen_adv),
            "distortion": self._scalar(dist),
            "bpp": bpp,
            "objective": self.weights.lambda_rate * bpp
            + self.weights.lambda_distortion * self._scalar(dist)
            + self.weights.lambda_adv * self._scalar(gen_adv),
            "disc_real_accuracy": acc,
        }

    def labeler_step(self, batch: torch.Tensor) -> dict:
        if self.stage != "labeler":
            raise DomainError("labeler_step only valid in the labeler stage")
        lr = lr_at_step(min(self.step + 1, self.plan.total_steps), self.plan)
        self._set_lr(self.optimizer, lr)
        out = self.labeler.vq_loss(batch, self.extractor)
        self.optimizer.zero_grad()
        out["total"].backward()
        self.optimizer.step()
        self.step += 1
        return {
            "stage": "labeler",
            "step": self.step,
            "lr": lr,
            "loss": self._scalar(out["total"]),
            "reconstruction": self._scalar(out["reconstruction"]),
            "embedding": self._scalar(out["embedding"]),
            "commitment": self._scalar(out["commitment"]),
        }

    # -- persistence -----------------------------------------------------------
    def save(self, path) -> None:
        payload = {
            "session_version": SESSION_VERSION,
            "stage": self.stage,
            "step": self.step,
            "ema_bpp": self.ema_bpp,
            "plan": self.plan,
            "sched": self.sched,
            "weights": self.weights,
            "optimizer": self.optimizer.state_dict(),
        }
        if self.codec is not None:
            payload["codec_config"] = self.codec.config
            payload["codec_state"] = self.codec.state_dict()
        if self.labeler is not None:
            payload["labeler_config"] = self.labeler.config
            payload["labeler_state"] = self.labeler.state_dict()
        if self.discriminator is not None:
            payload["disc_config"] = self.discriminator.config
            payload["disc_state"] = self.discriminator.state_dict()
            payload["disc_optimizer"] = self.disc_optimizer.state_dict()
        torch.save(payload, path)

    @classmethod
    def load(cls, path, extractor=None) -> "TrainingSession":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("session_version") != SESSION_VERSION:
            raise DomainError(f"unsupported training session file {path}")
        codec = labeler = disc = None
        if "codec_state" in payload:
            codec = HyperpriorCodec(payload["codec_config"])
            codec.load_state_dict(payload["codec_state"])
        if "labeler_state" in payload:
            labeler = VQLabeler(payload["labeler_config"])
            labeler.load_state_dict(payload["labeler_state"])
        if "disc_state" in payload:
            disc = make_discriminator(payload["disc_config"])
            disc.load_state_dict(payload["disc_state"])
        session = cls(
            payload["stage"],
            codec=codec,
            labeler=labeler,
            discriminator=disc,
            plan=payload["plan"],
            sched=payload["sched"],
            weights=payload["weights"],
            extractor=extractor,
        )
        session.step = payload["step"]
        session.ema_bpp = payload["ema_bpp"]
        session.optimizer.load_state_dict(payload["optimizer"])
        if disc is not None:
            session.disc_optimizer.load_state_dict(payload["disc_optimizer"])
        return session


# -- data ---------------------------------------------------------------------

_IMAGE_SUFFIXES = (".png", ".ppm", ".jpg", ".jpeg", ".bmp")


class ImageDirectoryDataset:
    """Directory of images with the 50/50 crop augmentation policy.

    Each sample is either a random resized crop or a plain random crop to
    the training resolution, followed by a random horizontal flip.
    """

    def __init__(self, root, crop_size: int = 256, train: bool = True, seed: int = 0):
        self.paths = sorted(
            p for p in Path(root).iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
        )
        if not self.paths:
            raise DomainError(f"no images found under {root}")
        self.crop_size = crop_size
        self.train = train
        self.rng = random.Random(seed)

    def __len__(self):
        return len(self.paths)

    def _load(self, path) -> Image.Image:
        img = Image.open(path).convert("RGB")
        s = self.crop_size
        if img.width < s or img.height < s:
            scale = max(s / img.width, s / img.height)
            img = img.resize(
                (max(s, round(img.width * scale)), max(s, round(img.height * scale))),
                Image.BILINEAR,
            )
        return img

    def _plain_crop(self, img):
        s = self.crop_size
        x = self.rng.randint(0, img.width - s)
        y = self.rng.randint(0, img.height - s)
        return img.crop((x, y, x + s, y + s))

    def _resized_crop(self, img):
        s = self.crop_size
        area = img.width * img.height
        for _ in range(10):
            frac = self.rng.uniform(0.3, 1.0)
            aspect = self.rng.uniform(3 / 4, 4 / 3)
            w = round((area * frac * aspect) ** 0.5)
            h = round((area * frac / aspect) ** 0.5)
            if w <= img.width and h <= img.height:
                x = self.rng.randint(0, img.width - w)
                y = self.rng.randint(0, img.height - h)
                return img.crop((x, y, x + w, y + h)).resize((s, s), Image.BILINEAR)
        return self._plain_crop(img)

    def __getitem__(self, index) -> torch.Tensor:
        img = self._load(self.paths[index])
        if self.train:
            img = self._resized_crop(img) if self.rng.random() < 0.5 else self._plain_crop(img)
            if self.rng.random() < 0.5:
                img = img.transpose(Image.FLIP_LEFT_RIGHT)
        else:
            img = img.crop((0, 0, self.crop_size, self.crop_size))
        arr = np.asarray(img, dtype=np.float32) / 255.0
        return torch.from_numpy(arr).permute(2, 0, 1)

    def batches(self, batch_size: int, steps: int):
        """Endless shuffled batches for `steps` iterations."""
        order = list(range(len(self.paths)))
        for _ in range(steps):
            picks = [order[self.rng.randrange(len(order))] for _ in range(batch_size)]
            yield torch.stack([self[i] for i in picks])


class MetricsLogger:
    """JSON-lines metrics sink."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def log(self, metrics: dict) -> None:
        self._fh.write(json.dumps(metrics) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def evaluate_rd_objective(
    codec: HyperpriorCodec,
    images: torch.Tensor,
    weights: LossWeights,
    sched: RateTargetSchedule,
    extractor=None,
) -> float:
    """Deterministic rate-distortion objective over an eval set.

    Uses round quantization and the schedule's strong (post-boost) rate
    penalty, so the value is comparable across checkpoints.
    """
    was_training = codec.training
    codec.eval()
    total = 0.0
    with torch.no_grad():
        for img in images:
            x = img.unsqueeze(0)
            rate = codec.eval_rate(x)
            y = codec.analyze(x)
            means, _, _, _ = codec.entropy_params(y, "round")
            recon = codec.synthesize(quantize(y, means, "round"))
            dist = distortion(recon, x, weights, extractor)
            total += sched.lambda_a * rate.bpp + weights.lambda_distortion * float(dist)
    if was_training:
        codec.train()
    return total / len(images)


def save_stage_checkpoints(session: TrainingSession, out_dir, tag: str) -> dict:
    """Write deployable model checkpoints next to the resumable session."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    if session.codec is not None:
        path = out_dir / f"codec_{tag}.pt"
        save_checkpoint(path, session.codec, "codec", {"step": session.step})
        written["codec"] = str(path)
    if session.labeler is not None:
        path = out_dir / f"labeler_{tag}.pt"
        save_checkpoint(path, session.labeler, "labeler", {"step": session.step})
        written["labeler"] = str(path)
    session_path = out_dir / f"session_{tag}.pt"
    session.save(session_path)
    written["session"] = str(session_path)
    return written
