"""Two-stage training: supervised reconstruction GAN, then style-space RSM."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from .config import RunConfig
from .discriminators import ImageDiscriminator
from .losses import FixedFeatureNet, feature_matching, hinge_losses, perceptual_loss
from .metrics import FeatureStats, frechet_distance
from .model import Generator, ModelConfig, to_nchw
from .mrsa import compose_swapped
from .rsm import RegionalStyleMapping, group_real_styles
from .styles import StyleMatrix
from .tensor import Adam, Tensor, mean, no_grad, softplus
from .toyfaces import Dataset

log = logging.getLogger(__name__)

LOSS_LOG_HEADER = ("step", "loss_G_adv", "loss_FM", "loss_perc", "loss_D")


class TrainingError(RuntimeError):
    """Training hit a non-finite loss; ``state`` holds the last good checkpoint."""

    def __init__(self, message: str, state: dict[str, np.ndarray] | None = None):
        super().__init__(message)
        self.state = state


@dataclass
class TrainConfig:
    lr_g: float = 0.0001
    lr_d: float = 0.0004
    lr_rsm: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    batch: int = 8
    steps: int = 3000
    rsm_steps: int = 500
    seed: int = 0
    lambda_fm: float = 10.0
    lambda_perc: float = 10.0
    no_softmax: bool = False
    no_sa: bool = False
    rsm_stargan_mode: bool = False

    @classmethod
    def from_run_config(cls, cfg: RunConfig) -> "TrainConfig":
        return cls(
            lr_g=cfg.lr_g,
            lr_d=cfg.lr_d,
            lr_rsm=cfg.lr_rsm,
            batch=cfg.batch,
            steps=cfg.steps,
            rsm_steps=cfg.rsm_steps,
            seed=cfg.seed,
            lambda_fm=cfg.lambda_fm,
            lambda_perc=cfg.lambda_perc,
            no_softmax=cfg.ablate_softmax,
            no_sa=cfg.ablate_sa,
            rsm_stargan_mode=cfg.rsm_stargan_mode,
        )


def model_config_from_run(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(
        image_size=cfg.image_size,
        num_classes=cfg.num_classes,
        style_dim=cfg.style_dim,
        ablate_softmax=cfg.ablate_softmax,
        ablate_sa=cfg.ablate_sa,
    )


# -- state (de)serialization -------------------------------------------------
def config_tensors(cfg: ModelConfig) -> dict[str, np.ndarray]:
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        out[f"config.{f.name}"] = np.atleast_1d(np.asarray(value, dtype=np.float32))
    return out


def model_config_from_state(state: dict[str, np.ndarray]) -> ModelConfig:
    kwargs = {}
    for f in fields(ModelConfig):
        key = f"config.{f.name}"
        if key not in state:
            continue
        arr = state[key]
        default = getattr(ModelConfig(), f.name)
        if isinstance(default, bool):
            kwargs[f.name] = bool(arr[0])
        elif isinstance(default, list):
            kwargs[f.name] = [int(v) for v in arr]
        else:
            kwargs[f.name] = int(arr[0])
    return ModelConfig(**kwargs)


def module_state(module, prefix: str) -> dict[str, np.ndarray]:
    out = {f"{prefix}.{k}": p.data for k, p in module.named_parameters().items()}
    out.update({f"{prefix}buf.{k}": v for k, v in module.named_buffers().items()})
    return out


def load_module_state(module, prefix: str, state: dict[str, np.ndarray], strict: bool = True) -> None:
    params = module.named_parameters()
    for name, p in params.items():
        key = f"{prefix}.{name}"
        if key not in state:
            if strict:
                raise KeyError(f"checkpoint lacks tensor '{key}'")
            continue
        if state[key].shape != p.shape:
            raise ValueError(f"tensor '{key}' has shape {state[key].shape}, expected {p.shape}")
        p.data = state[key].astype(np.float32).copy()
    bufs = {k[len(prefix) + 4 :]: v for k, v in state.items() if k.startswith(f"{prefix}buf.")}
    module.load_buffers(bufs)


def _finite(value: float, what: str, state_fn: Callable[[], dict]) -> float:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite {what} ({value})", state_fn())
    return value


# -- stage 1 -------------------------------------------------------------------
class Stage1Trainer:
    """Encoder/MRSA/decoder trained on self-reconstruction with hinge GAN,
    feature-matching and perceptual losses; TTUR rates."""

    def __init__(self, model_cfg: ModelConfig, cfg: TrainConfig):
        self.model_cfg = model_cfg
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 0])
        self.G = Generator(model_cfg, rng)
        self.D = ImageDiscriminator(model_cfg.num_classes, rng)
        self.perceptual = FixedFeatureNet(seed=1234)
        self.opt_g = Adam(self.G.named_parameters(), cfg.lr_g, cfg.beta1, cfg.beta2)
        self.opt_d = Adam(self.D.named_parameters(), cfg.lr_d, cfg.beta1, cfg.beta2)
        self.batch_rng = np.random.default_rng([cfg.seed, 1])
        self.step = 0
        self._last_good: dict[str, np.ndarray] | None = None

    # state -----------------------------------------------------------------
    def state(self) -> dict[str, np.ndarray]:
        out = config_tensors(self.model_cfg)
        out["train.step"] = np.array([self.step], dtype=np.float32)
        out["train.seed"] = np.array([self.cfg.seed], dtype=np.float32)
        out.update(module_state(self.G, "G"))
        out.update(module_state(self.D, "D"))
        out.update(self.opt_g.state_tensors("optG"))
        out.update(self.opt_d.state_tensors("optD"))
        return {k: np.array(v, dtype=np.float32) for k, v in out.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        load_module_state(self.G, "G", state)
        load_module_state(self.D, "D", state)
        self.opt_g.load_state_tensors("optG", state)
        self.opt_d.load_state_tensors("optD", state)
        self.step = int(state.get("train.step", [0])[0])

    # one step ----------------------------------------------------------------
    def train_step(self, images: np.ndarray, labels: np.ndarray) -> dict[str, float]:
        cfg = self.cfg
        self.G.train()
        self.D.train()
        real = to_nchw(images)

        # generator update; discriminator parameters are constants here
        self.D.requires_grad_(False)
        with no_grad():
            _, real_feats = self.D(real, labels)
        fake = self.G.reconstruct(real, labels)
        fake_logits, fake_feats = self.D(fake, labels)
        _, loss_adv = hinge_losses(None, fake_logits)
        loss_fm = feature_matching(real_feats, fake_feats)
        loss_perc = perceptual_loss(real, fake, self.perceptual)
        total = loss_adv + loss_fm * cfg.lambda_fm + loss_perc * cfg.lambda_perc
        values = {
            "loss_G_adv": float(loss_adv.data),
            "loss_FM": float(loss_fm.data),
            "loss_perc": float(loss_perc.data),
        }
        for k, v in values.items():
            _finite(v, k, self._good_state)
        assert values["loss_FM"] >= 0 and values["loss_perc"] >= 0
        self.opt_g.zero_grad()
        total.backward()
        self.opt_g.step()

        # discriminator update on the detached fake
        self.D.requires_grad_(True)
        real_logits, _ = self.D(real, labels)
        fake_logits, _ = self.D(fake.detach(), labels)
        loss_d, _ = hinge_losses(real_logits, fake_logits)
        values["loss_D"] = _finite(float(loss_d.data), "loss_D", self._good_state)
        assert values["loss_D"] >= 0
        self.opt_d.zero_grad()
        loss_d.backward()
        self.opt_d.step()

        self.step += 1
        values["loss_G"] = values["loss_G_adv"] + cfg.lambda_fm * values["loss_FM"] + cfg.lambda_perc * values["loss_perc"]
        return values

    def _good_state(self) -> dict[str, np.ndarray] | None:
        return self._last_good

    def sample_batch(self, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
        if len(dataset) < self.cfg.batch:
            raise ValueError(f"dataset has {len(dataset)} samples, fewer than batch size {self.cfg.batch}")
        idx = self.batch_rng.choice(len(dataset), size=self.cfg.batch, replace=False)
        return dataset.images[idx], dataset.labels[idx]

    def run(self, dataset: Dataset, steps: int | None = None, log_path=None, keep_last_good: bool = True) -> list[dict]:
        steps = self.cfg.steps if steps is None else steps
        history = []
        writer = None
        fh = None
        if log_path is not None:
            fh = open(log_path, "w", newline="")
            writer = csv.writer(fh)
            writer.writerow(LOSS_LOG_HEADER)
        try:
            for _ in range(steps):
                if keep_last_good:
                    self._last_good = self.state()
                images, labels = self.sample_batch(dataset)
                values = self.train_step(images, labels)
                history.append(values)
                if writer is not None:
                    writer.writerow([self.step] + [f"{values[k]:.6g}" for k in LOSS_LOG_HEADER[1:]])
                if self.step % 100 == 0:
                    log.info("stage1 step %d  G %.4f  D %.4f", self.step, values["loss_G"], values["loss_D"])
        finally:
            if fh is not None:
                fh.close()
        return history


def train_stage1(dataset: Dataset, cfg: TrainConfig, model_cfg: ModelConfig | None = None, log_path=None) -> dict[str, np.ndarray]:
    trainer = Stage1Trainer(model_cfg or ModelConfig(image_size=dataset.images.shape[1]), cfg)
    trainer.run(dataset, log_path=log_path)
    return trainer.state()


def load_generator(state: dict[str, np.ndarray]) -> tuple[Generator, ImageDiscriminator]:
    model_cfg = model_config_from_state(state)
    rng = np.random.default_rng(0)
    G = Generator(model_cfg, rng)
    D = ImageDiscriminator(model_cfg.num_classes, rng)
    load_module_state(G, "G", state)
    load_module_state(D, "D", state, strict=False)
    G.eval()
    D.eval()
    return G, D


# -- stage 2 -------------------------------------------------------------------
def encode_dataset(G: Generator, dataset: Dataset, chunk: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Frozen-encoder style matrices (N, C, D) and validity (N, C)."""
    G.eval()
    styles, valid = [], []
    with no_grad():
        for i in range(0, len(dataset), chunk):
            sm = G.encode(to_nchw(dataset.images[i : i + chunk]), dataset.labels[i : i + chunk])
            styles.append(sm.styles.data)
            valid.append(sm.valid)
    return np.concatenate(styles), np.concatenate(valid)


class Stage2Trainer:
    """Trains the mapping nets with encoder, MRSA and decoder frozen.

    Default: non-saturating GAN in style space against encoder styles.
    ``rsm_stargan_mode``: mapping nets are driven by the frozen image
    discriminator through the frozen decoder instead.
    """

    def __init__(self, stage1_state: dict[str, np.ndarray], cfg: TrainConfig, dataset: Dataset):
        self.cfg = cfg
        self.stage1_state = stage1_state
        self.G, self.D = load_generator(stage1_state)
        self.G.requires_grad_(False)
        self.D.requires_grad_(False)
        mcfg = self.G.cfg
        rng = np.random.default_rng([cfg.seed, 2])
        self.rsm = RegionalStyleMapping(mcfg.style_dim, rng, num_classes=mcfg.num_classes)
        self.opt_m = Adam({f"mappers.{k}": p for k, p in _mapper_params(self.rsm).items()}, cfg.lr_rsm, cfg.beta1, cfg.beta2)
        self.opt_sd = Adam({f"discs.{k}": p for k, p in _disc_params(self.rsm).items()}, cfg.lr_rsm, cfg.beta1, cfg.beta2)
        self.dataset = dataset
        self.real_styles, self.real_valid = encode_dataset(self.G, dataset)
        self.batch_rng = np.random.default_rng([cfg.seed, 3])
        self.z_rng = np.random.default_rng([cfg.seed, 4])
        self.step = 0

    def state(self) -> dict[str, np.ndarray]:
        out = {k: np.array(v, dtype=np.float32) for k, v in self.stage1_state.items()}
        out.update(module_state(self.rsm, "RSM"))
        out.update(self.opt_m.state_tensors("optM"))
        out.update(self.opt_sd.state_tensors("optSD"))
        out["rsm.step"] = np.array([self.step], dtype=np.float32)
        return {k: np.array(v, dtype=np.float32) for k, v in out.items()}

    def _real_group_batch(self, j: int) -> Tensor:
        group = self.rsm.groups[j]
        pool = group_real_styles(self.real_styles, self.real_valid, group)
        idx = self.batch_rng.choice(len(pool), size=min(self.cfg.batch, len(pool)), replace=False)
        return Tensor(pool[idx])

    def train_step(self) -> dict[str, float]:
        if self.cfg.rsm_stargan_mode:
            return self._stargan_step()
        rsm, b = self.rsm, self.cfg.batch
        reals = [self._real_group_batch(j) for j in range(len(rsm.groups))]
        zs = rsm.latents(self.z_rng, b)

        for disc in rsm.discs:
            disc.train().requires_grad_(True)
        for mapper in rsm.mappers:
            mapper.requires_grad_(False)
        with no_grad():
            fakes = [rsm.sample_group_styles(z, j) for j, z in enumerate(zs)]
        loss_d = None
        for real, fake, disc in zip(reals, fakes, rsm.discs):
            term = mean(softplus(-disc(real))) + mean(softplus(disc(fake)))
            loss_d = term if loss_d is None else loss_d + term
        self.opt_sd.zero_grad()
        loss_d.backward()
        self.opt_sd.step()

        for disc in rsm.discs:
            disc.requires_grad_(False)
        for mapper in rsm.mappers:
            mapper.requires_grad_(True)
        loss_g = None
        for j, (z, disc) in enumerate(zip(zs, rsm.discs)):
            term = mean(softplus(-disc(rsm.sample_group_styles(z, j))))
            loss_g = term if loss_g is None else loss_g + term
        self.opt_m.zero_grad()
        loss_g.backward()
        self.opt_m.step()

        self.step += 1
        values = {"loss_M": float(loss_g.data), "loss_SD": float(loss_d.data)}
        for k, v in values.items():
            _finite(v, k, self.state)
        return values

    def _stargan_step(self) -> dict[str, float]:
        rsm, b = self.rsm, self.cfg.batch
        idx = self.batch_rng.choice(len(self.dataset), size=b, replace=False)
        labels = self.dataset.labels[idx]
        s_t = StyleMatrix(Tensor(self.real_styles[idx]), self.real_valid[idx])
        for mapper in rsm.mappers:
            mapper.requires_grad_(True)
        s_r = rsm.sample(self.z_rng, b)
        s_rp = compose_swapped(s_t, s_r, range(rsm.num_classes))
        s_rp = StyleMatrix(s_rp.styles * Tensor(s_t.valid[:, :, None].astype(np.float32)), s_t.valid)
        fake = self.G.decoder(self.G.correct(s_rp, s_t), labels)
        logits, _ = self.D(fake, labels)
        _, loss_g = hinge_losses(None, logits)
        self.opt_m.zero_grad()
        loss_g.backward()
        self.opt_m.step()
        self.step += 1
        return {"loss_M": _finite(float(loss_g.data), "loss_M", self.state), "loss_SD": 0.0}

    def style_frechet(self, n_samples: int = 512, seed: int = 99) -> list[float]:
        return style_frechet(self.rsm, self.real_styles, self.real_valid, n_samples, seed)

    def run(self, steps: int | None = None) -> list[dict]:
        steps = self.cfg.rsm_steps if steps is None else steps
        history = []
        for _ in range(steps):
            history.append(self.train_step())
            if self.step % 100 == 0:
                log.info("stage2 step %d  M %.4f  SD %.4f", self.step, history[-1]["loss_M"], history[-1]["loss_SD"])
        return history


def _mapper_params(rsm: RegionalStyleMapping) -> dict[str, Tensor]:
    out = {}
    for j, m in enumerate(rsm.mappers):
        out.update({f"{j}.{k}": p for k, p in m.named_parameters().items()})
    return out


def _disc_params(rsm: RegionalStyleMapping) -> dict[str, Tensor]:
    out = {}
    for j, d in enumerate(rsm.discs):
        out.update({f"{j}.{k}": p for k, p in d.named_parameters().items()})
    return out


def style_frechet(rsm: RegionalStyleMapping, styles: np.ndarray, valid: np.ndarray, n_samples: int = 512, seed: int = 99) -> list[float]:
    """Per-group diagonal Frechet distance between sampled and encoder styles."""
    rng = np.random.default_rng(seed)
    out = []
    with no_grad():
        for j, group in enumerate(rsm.groups):
            real = group_real_styles(styles, valid, group).reshape(-1, len(group) * rsm.style_dim)
            z = Tensor(rng.standard_normal((n_samples, rsm.latent_dim)).astype(np.float32))
            fake = rsm.sample_group_styles(z, j).data.reshape(n_samples, -1)
            out.append(frechet_distance(FeatureStats.from_samples(real), FeatureStats.from_samples(fake)))
    return out


def load_rsm(state: dict[str, np.ndarray]) -> RegionalStyleMapping:
    mcfg = model_config_from_state(state)
    rsm = RegionalStyleMapping(mcfg.style_dim, np.random.default_rng(0), num_classes=mcfg.num_classes)
    load_module_state(rsm, "RSM", state)
    rsm.eval()
    return rsm


def train_stage2_rsm(dataset: Dataset, stage1_state: dict[str, np.ndarray], cfg: TrainConfig) -> dict[str, np.ndarray]:
    trainer = Stage2Trainer(stage1_state, cfg, dataset)
    trainer.run()
    return trainer.state()


def save_checkpoint(path, state: dict[str, np.ndarray]) -> Path:
    return checkpoint.save(path, state)
