"""Training loop: degrade, sample, augment, forward, loss, backward, Adam."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, TextIO

import numpy as np

from . import checkpoint as ckpt
from . import data as D
from .autodiff import Tape, backward
from .config import RunConfig
from .model import AcnetModel, forward, init_params
from .optim import TrainState, adam_step, lr_schedule
from .tensor import NonFiniteError

log = logging.getLogger(__name__)


@dataclass
class StepResult:
    step: int
    lr: float
    loss: float
    scale: int

    def line(self) -> str:
        return f"{self.step}\t{self.lr:.6g}\t{self.loss:.9g}"


def make_pairs(hr_images: list[np.ndarray], scales) -> dict[int, list[D.ImagePair]]:
    """Noise-free LR/HR pairs per scale; noise is drawn per patch during training."""
    return {s: [D.degrade(hr, s) for hr in hr_images] for s in scales}


def load_hr_images(data_dir) -> list[np.ndarray]:
    paths = D.list_images(data_dir)
    if not paths:
        raise ValueError(f"no HR images found in {data_dir}")
    return [D.load_image(p) for p in paths]


def train_step(model: AcnetModel, state: TrainState, batch: D.PatchBatch, reduction: str) -> StepResult:
    tape = Tape()
    pred = forward(model, tape.constant(batch.lr), batch.scale, ops=tape)
    loss = tape.mse_loss(pred, tape.constant(batch.hr), reduction)
    if not np.isfinite(loss.value):
        raise NonFiniteError(f"non-finite loss at step {state.step + 1}")
    grads = backward(tape)
    lr = lr_schedule(state.step, state.hyper.lr, state.hyper.halving_period)
    adam_step(model.parameters(), grads, state, lr=lr)
    return StepResult(state.step, lr, float(loss.value), batch.scale)


class Trainer:
    """Owns the model, optimiser state and RNG for one training run."""

    def __init__(self, cfg: RunConfig, hr_images: list[np.ndarray],
                 model: AcnetModel | None = None, state: TrainState | None = None,
                 rng_state: dict | None = None):
        if not hr_images:
            raise ValueError("training needs at least one HR image")
        self.cfg = cfg
        mcfg = cfg.model_config()
        if model is None:
            model = init_params(mcfg, cfg.seed)
        elif model.config != mcfg:
            raise ValueError(f"checkpoint config {model.config} is incompatible with run config {mcfg}")
        if model.fused:
            raise ValueError("cannot train a fused model")
        self.model = model
        if state is None:
            state = TrainState.fresh(model.parameters(), cfg.hyper(), cfg.seed)
        else:
            state.hyper = cfg.hyper()  # a resumed run follows its own config
        self.state = state
        self.rng = np.random.default_rng(cfg.seed)
        if rng_state is not None:
            self.rng.bit_generator.state = rng_state
        self.pairs = make_pairs(hr_images, mcfg.scales)
        for s, pairs in self.pairs.items():
            for p in pairs:
                if min(p.lr.shape[:2]) < cfg.patch:
                    raise ValueError(f"x{s} LR image {p.lr.shape[:2]} smaller than patch {cfg.patch}")

    def next_batch(self) -> D.PatchBatch:
        cfg, rng = self.cfg, self.rng
        scales = self.model.config.scales
        s = scales[0] if len(scales) == 1 else int(scales[rng.integers(len(scales))])
        batch = D.sample_patches(self.pairs[s], cfg.patch, cfg.batch, rng)
        lo, hi = self.model.config.noise_sigma_range
        if hi > 0:
            for b in range(batch.lr.shape[0]):
                sigma = float(rng.uniform(lo, hi))
                batch.lr[b] = D.add_noise(batch.lr[b], sigma, rng)
        return D.augment(batch, rng)

    def step(self) -> StepResult:
        return train_step(self.model, self.state, self.next_batch(), self.cfg.loss_reduction)

    def save(self, path) -> None:
        ckpt.save(path, self.model, self.state, self.rng.bit_generator.state)

    def run(self, steps: int | None = None, log_file: TextIO | None = None,
            checkpoint_path=None, on_step: Callable[[StepResult], None] | None = None) -> list[StepResult]:
        steps = self.cfg.steps if steps is None else steps
        results = []
        while self.state.step < steps:
            r = self.step()
            results.append(r)
            if log_file is not None:
                log_file.write(r.line() + "\n")
                log_file.flush()
            if on_step is not None:
                on_step(r)
            if checkpoint_path and r.step % self.cfg.checkpoint_every == 0:
                self.save(checkpoint_path)
                log.info("step %d: checkpoint written to %s", r.step, checkpoint_path)
        if checkpoint_path:
            self.save(checkpoint_path)
        return results


def train(cfg: RunConfig, hr_images=None, log_path=None, checkpoint_path=None) -> Trainer:
    """Run (or resume) training as ``cfg`` describes."""
    if hr_images is None:
        hr_images = load_hr_images(cfg.data_dir)
    model = state = rng_state = None
    if cfg.resume:
        model, state, rng_state = ckpt.load(cfg.resume)
    trainer = Trainer(cfg, hr_images, model, state, rng_state)
    log_path = cfg.log if log_path is None else log_path
    checkpoint_path = cfg.checkpoint if checkpoint_path is None else checkpoint_path
    mode = "a" if cfg.resume else "w"
    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        with open(log_path, mode, encoding="utf-8") as fh:
            trainer.run(log_file=fh, checkpoint_path=checkpoint_path)
    else:
        trainer.run(checkpoint_path=checkpoint_path)
    return trainer
