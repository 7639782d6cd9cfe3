"""Training loop and inference helpers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from shadoc.augment import SamplePair, augment, mixup
from shadoc.autodiff.tensor import GradTape, Tensor, debug_checks, no_grad
from shadoc.checkpoint import Checkpoint, model_checkpoint
from shadoc.config import RunConfig
from shadoc.errors import ConfigError, NonFiniteError, TrainingError
from shadoc.imaging.image import quantize
from shadoc.imaging.metrics import psnr
from shadoc.losses import LossWeights, default_extractor, total_loss
from shadoc.model import ShaDocFormer
from shadoc.optim import Adam

logger = logging.getLogger(__name__)


def to_tensor(img: np.ndarray) -> Tensor:
    """H x W x 3 float image -> [1, 3, H, W] tensor."""
    return Tensor(np.transpose(img, (2, 0, 1))[None])


def to_image(t: Tensor) -> np.ndarray:
    return np.transpose(t.data[0], (1, 2, 0))


def restore(model: ShaDocFormer, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run the pipeline on an H x W x 3 float image; returns uint8 (restored, soft mask)."""
    with no_grad():
        out, mask = model(to_tensor(image))
    return quantize(to_image(out)), quantize(to_image(mask))


def mean_psnr(model: ShaDocFormer, pairs: Sequence[SamplePair]) -> float:
    """Mean PSNR of 8-bit restored outputs against 8-bit targets."""
    scores = [psnr(restore(model, p.input)[0], quantize(p.target)) for p in pairs]
    return math.inf if any(math.isinf(s) for s in scores) else float(np.mean(scores))


@dataclass
class TrainResult:
    model: ShaDocFormer
    optimizer: Adam
    log: list[str] = field(default_factory=list)
    final_psnr: float = float("nan")

    def checkpoint(self) -> Checkpoint:
        extra = default_extractor().named_tensors() + self.optimizer.state_tensors()
        return model_checkpoint(self.model, extra)


def _diagnose_nan(model: ShaDocFormer, x: Tensor, y: Tensor, weights: LossWeights) -> str:
    try:
        with no_grad(), debug_checks():
            out, _ = model(x, clamp=False)
            total_loss(out, y, weights)
    except NonFiniteError as exc:
        return exc.op
    return "unknown (forward was finite on replay)"


def train(config: RunConfig, pairs: Sequence[SamplePair], val_pairs: Sequence[SamplePair] | None = None,
          steps: int | None = None, seed: int | None = None,
          on_log: Callable[[str], None] | None = None) -> TrainResult:
    """Batch-1 Adam training of the full pipeline under the composite loss.

    All randomness (init, sampling, augmentation) derives from ``seed``, so two
    runs with the same arguments produce bit-identical parameters.
    """
    if not pairs:
        raise ConfigError("training set is empty")
    tc = config.train
    steps = tc.steps if steps is None else steps
    seed = tc.seed if seed is None else seed
    val_pairs = list(val_pairs) if val_pairs else list(pairs)
    weights = LossWeights(config.loss.w_mse, config.loss.w_ssim, config.loss.w_p)

    model = ShaDocFormer(config.model, seed=seed)
    opt = Adam(model.named_parameters(), lr=tc.lr)
    rng = np.random.default_rng([seed, 1])
    result = TrainResult(model, opt)

    def emit(line: str) -> None:
        result.log.append(line)
        if on_log:
            on_log(line)

    scale_range = (tc.scale_min, tc.scale_max)
    for step in range(1, steps + 1):
        pair = pairs[int(rng.integers(len(pairs)))]
        if tc.augment:
            pair = augment(pair, rng, tc.crop, tc.flip_p, scale_range)
            if tc.mixup_p > 0 and rng.random() < tc.mixup_p:
                other = augment(pairs[int(rng.integers(len(pairs)))], rng, tc.crop, tc.flip_p, scale_range)
                lam = float(rng.beta(tc.mixup_alpha, tc.mixup_alpha))
                if other.input.shape == pair.input.shape:
                    pair = mixup(pair, other, lam)
        x, y = to_tensor(pair.input), to_tensor(pair.target)

        with GradTape() as tape:
            # loss on the pre-clamp prediction; a saturated clamp would zero every gradient
            out, _ = model(x, clamp=False)
            loss, parts = total_loss(out, y, weights)
        if not math.isfinite(parts.total):
            op = _diagnose_nan(model, x, y, weights)
            raise TrainingError(f"non-finite loss at step {step}; first non-finite op: {op}")
        tape.backward(loss)
        opt.step()
        opt.zero_grad()
        emit(parts.log_line(step))

        if step == steps or (tc.eval_every > 0 and step % tc.eval_every == 0):
            result.final_psnr = mean_psnr(model, val_pairs)
            emit(f"step={step} val_psnr={result.final_psnr:.4f}")

    if steps == 0:
        result.final_psnr = mean_psnr(model, val_pairs)
    return result
