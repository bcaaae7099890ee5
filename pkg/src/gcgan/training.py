"""Adversarial training of the generator/discriminator pair."""
from __future__ import annotations

import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .data import Dataset, estimate_correlation, sample_windows
from .errors import ConfigurationError
from .graph_filter import build_graph_filter
from .model import (
    DEFAULT_DISCRIMINATOR_M,
    DEFAULT_DISCRIMINATOR_WIDTHS,
    DEFAULT_GENERATOR_M,
    DEFAULT_GENERATOR_WIDTHS,
    Discriminator,
    Generator,
    LayerSpec,
    Variant,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "gcgan-checkpoint/1"
LOG_HEADER = "epoch,d_loss,g_loss,d_acc_real,d_acc_fake,seconds"


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class ModelConfig:
    generator_widths: list[int] = field(default_factory=lambda: list(DEFAULT_GENERATOR_WIDTHS))
    generator_m: list[int] = field(default_factory=lambda: list(DEFAULT_GENERATOR_M))
    discriminator_widths: list[int] = field(default_factory=lambda: list(DEFAULT_DISCRIMINATOR_WIDTHS))
    discriminator_m: list[int] = field(default_factory=lambda: list(DEFAULT_DISCRIMINATOR_M))
    leaky_slope: float = 0.2
    graph_filter: str = "exponential"

    def __post_init__(self):
        if self.generator_widths[-1] != self.discriminator_widths[0]:
            raise ConfigurationError("generator output width must equal discriminator input width")
        if len(self.generator_widths) < 2 or len(self.discriminator_widths) < 2:
            raise ConfigurationError("each network needs at least one layer")

    @property
    def noise_dim(self) -> int:
        return self.generator_widths[0]

    @property
    def horizon(self) -> int:
        return self.generator_widths[-1]


@dataclass
class TrainConfig:
    epochs: int = 2000
    d_steps_per_g_step: int = 1
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon_opt: float = 1e-8
    clamp_eps: float = 1e-7
    noise_distribution: str = "gaussian"
    batch_windows_per_epoch: int = 1
    seed: int = 0
    variant: str = "conv1d"
    generator_loss: str = "saturating"
    early_stop: bool = False
    early_stop_window: int = 50
    early_stop_tol: float = 1e-4
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.d_steps_per_g_step < 1 or self.batch_windows_per_epoch < 1:
            raise ConfigurationError("epochs >= 0, d_steps_per_g_step >= 1, batch_windows_per_epoch >= 1")
        if not 0.0 < self.learning_rate < 1.0:
            raise ConfigurationError(f"learning_rate must lie in (0, 1), got {self.learning_rate}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigurationError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon_opt <= 0:
            raise ConfigurationError("epsilon_opt must be positive")
        if not 0.0 < self.clamp_eps <= 0.01:
            raise ConfigurationError(f"clamp_eps must lie in (0, 0.01], got {self.clamp_eps}")
        if self.noise_distribution not in ("gaussian", "laplace"):
            raise ConfigurationError(f"unknown noise distribution {self.noise_distribution!r}")
        if self.generator_loss not in ("saturating", "nonsaturating"):
            raise ConfigurationError(f"unknown generator loss {self.generator_loss!r}")
        if self.variant not in {v.value for v in Variant}:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        self.variant = Variant(self.variant).value

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    d_loss: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)
    d_accuracy_real: list[float] = field(default_factory=list)
    d_accuracy_fake: list[float] = field(default_factory=list)
    wall_seconds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.d_loss)

    def record(self, d_loss, g_loss, acc_real, acc_fake, seconds) -> None:
        self.d_loss.append(float(d_loss))
        self.g_loss.append(float(g_loss))
        self.d_accuracy_real.append(float(acc_real))
        self.d_accuracy_fake.append(float(acc_fake))
        self.wall_seconds.append(float(seconds))

    def same_trajectory(self, other: "TrainHistory") -> bool:
        """Equality of everything except wall-clock timings."""
        return (self.d_loss == other.d_loss and self.g_loss == other.g_loss
                and self.d_accuracy_real == other.d_accuracy_real
                and self.d_accuracy_fake == other.d_accuracy_fake)

    def log_line(self, i: int) -> str:
        return (f"{i},{self.d_loss[i]!r},{self.g_loss[i]!r},{self.d_accuracy_real[i]!r},"
                f"{self.d_accuracy_fake[i]!r},{self.wall_seconds[i]:.6f}")

    def write_log(self, path) -> None:
        lines = [LOG_HEADER] + [self.log_line(i) for i in range(len(self))]
        Path(path).write_text("\n".join(lines) + "\n")


# -- noise and losses ------------------------------------------------------

def sample_noise(n: int, k: int, dist: str = "gaussian", rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    if dist == "gaussian":
        return rng.standard_normal((n, k))
    if dist == "laplace":
        return rng.laplace(0.0, 1.0, size=(n, k))
    raise ConfigurationError(f"unknown noise distribution {dist!r}")


def _clamped(p: Node, eps: float) -> Node:
    return ad.clamp(p, eps, 1.0 - eps)


def generator_loss(d: Discriminator, x_hat: Node, clamp_eps: float = 1e-7,
                   nonsaturating: bool = False) -> Node:
    """``log(1 - D(x_hat))``, or ``-log D(x_hat)`` when ``nonsaturating``."""
    p = _clamped(d.forward(x_hat), clamp_eps)
    if nonsaturating:
        return ad.neg(ad.log(p))
    return ad.log(ad.one_minus(p))


def _discriminator_terms(d: Discriminator, x_real, x_hat, clamp_eps: float):
    x_real = Node(x_real.value if isinstance(x_real, Node) else x_real)
    x_hat = Node(x_hat.value if isinstance(x_hat, Node) else x_hat)
    p_real = d.forward(x_real)
    p_fake = d.forward(x_hat)
    loss = ad.neg(ad.add(ad.log(_clamped(p_real, clamp_eps)),
                         ad.log(ad.one_minus(_clamped(p_fake, clamp_eps)))))
    return loss, p_real.item(), p_fake.item()


def discriminator_loss(d: Discriminator, x_real, x_hat, clamp_eps: float = 1e-7) -> Node:
    """``-(log D(x_real) + log(1 - D(x_hat)))``; the fake sample is detached."""
    return _discriminator_terms(d, x_real, x_hat, clamp_eps)[0]


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Node], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update of ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.value.shape:
            raise ad.ShapeError(f"gradient shape {g.shape} != parameter shape {p.value.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    def __init__(self, params: dict[str, Node], lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        grads = {name: p.grad for name, p in self.params.items()}
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)


# -- checkpoints --------------------------------------------------------------

@dataclass
class Checkpoint:
    generator: Generator
    discriminator: Discriminator
    train_config: TrainConfig
    model_config: ModelConfig
    metadata: dict
    rng_state: dict | None = None
    reference_noise: np.ndarray | None = None
    reference_output: np.ndarray | None = None
    epoch: int = 0

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {"graph_filter": np.asarray(self.generator.graph_filter)}
        for name, p in self.generator.parameters().items():
            arrays[f"gen/{name}"] = p.value
        for name, p in self.discriminator.parameters().items():
            arrays[f"disc/{name}"] = p.value
        if self.discriminator.graph_filter is not self.generator.graph_filter and not np.array_equal(
                self.discriminator.graph_filter, self.generator.graph_filter):
            arrays["disc_graph_filter"] = np.asarray(self.discriminator.graph_filter)
        if self.reference_noise is not None:
            arrays["reference_noise"] = self.reference_noise
            arrays["reference_output"] = self.reference_output
        meta = {
            "format": CHECKPOINT_FORMAT,
            "epoch": self.epoch,
            "variant": self.generator.variant.value,
            "generator_specs": [s.to_dict() for s in self.generator.specs],
            "generator_params": [w.name for w in self.generator.weights],
            "discriminator_specs": [s.to_dict() for s in self.discriminator.specs],
            "discriminator_params": [w.name for w in self.discriminator.weights],
            "train_config": asdict(self.train_config),
            "model_config": asdict(self.model_config),
            "metadata": self.metadata,
            "rng_state": self.rng_state,
        }
        buf = io.BytesIO()
        np.savez(buf, meta=np.array(json.dumps(meta)), **arrays)
        path.write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
            arrays = {k: z[k] for k in z.files if k != "meta"}
        a = arrays["graph_filter"]
        a_disc = arrays.get("disc_graph_filter", a)
        variant = Variant(meta["variant"])
        gen = Generator(a, [LayerSpec.from_dict(s) for s in meta["generator_specs"]], variant,
                        weights=[Node(arrays[f"gen/{n}"], requires_grad=True, name=n)
                                 for n in meta["generator_params"]])
        disc = Discriminator(a_disc, [LayerSpec.from_dict(s) for s in meta["discriminator_specs"]], variant,
                             weights=[Node(arrays[f"disc/{n}"], requires_grad=True, name=n)
                                      for n in meta["discriminator_params"]],
                             readout=arrays["disc/d_readout"], bias=arrays["disc/d_bias"])
        return cls(
            generator=gen,
            discriminator=disc,
            train_config=TrainConfig(**meta["train_config"]),
            model_config=ModelConfig(**meta["model_config"]),
            metadata=meta["metadata"],
            rng_state=meta["rng_state"],
            reference_noise=arrays.get("reference_noise"),
            reference_output=arrays.get("reference_output"),
            epoch=int(meta["epoch"]),
        )


# -- training loop ------------------------------------------------------------

@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    history: TrainHistory
    checkpoint: Checkpoint


def build_models(config: TrainConfig, model_config: ModelConfig, graph_filter, rng):
    variant = Variant(config.variant)
    gen = Generator.build(graph_filter, model_config.generator_widths, model_config.generator_m,
                          variant, rng=rng)
    disc = Discriminator.build(graph_filter, model_config.discriminator_widths,
                               model_config.discriminator_m, variant,
                               slope=model_config.leaky_slope, rng=rng)
    return gen, disc


def dataset_metadata(dataset: Dataset) -> dict:
    return {
        "farm_ids": list(dataset.farm_ids),
        "capacities": [float(c) for c in dataset.capacities],
        "interval_minutes": float(dataset.interval_minutes),
        "encoding": "symmetric",
    }


def _converged(history: TrainHistory, window: int, tol: float) -> bool:
    if len(history) <= window:
        return False
    return (abs(history.d_loss[-1] - history.d_loss[-1 - window]) < tol
            and abs(history.g_loss[-1] - history.g_loss[-1 - window]) < tol)


def _check_finite(loss: Node, which: str, epoch: int) -> None:
    if not math.isfinite(loss.item()):
        raise TrainingError(f"non-finite {which} loss at epoch {epoch}")


def train(config: TrainConfig, dataset: Dataset, model_config: ModelConfig | None = None,
          checkpoint_path=None, log_path=None) -> TrainResult:
    """Alternate discriminator and generator updates for ``config.epochs`` epochs.

    Each epoch runs ``batch_windows_per_epoch`` iterations of
    ``d_steps_per_g_step`` discriminator steps followed by one generator step,
    one real window and one noise draw per step.
    """
    model_config = model_config or ModelConfig()
    t = model_config.horizon
    if t > dataset.n_steps:
        raise ConfigurationError(f"dataset has {dataset.n_steps} steps, shorter than horizon T={t}")

    a = build_graph_filter(estimate_correlation(dataset), model_config.graph_filter)
    rng = np.random.default_rng(config.seed)
    gen, disc = build_models(config, model_config, a, rng)
    g_opt = Adam(gen.parameters(), config.learning_rate, config.beta1, config.beta2, config.epsilon_opt)
    d_opt = Adam(disc.parameters(), config.learning_rate, config.beta1, config.beta2, config.epsilon_opt)
    n, k = dataset.n_farms, model_config.noise_dim
    nonsat = config.generator_loss == "nonsaturating"
    history = TrainHistory()
    ref_noise = sample_noise(n, k, config.noise_distribution, np.random.default_rng([config.seed, 1]))
    meta = dataset_metadata(dataset)

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(gen, disc, config, model_config, meta, rng.bit_generator.state,
                          ref_noise, gen(ref_noise), epoch)

    log_fh = None
    if log_path is not None:
        log_fh = open(log_path, "w")
        log_fh.write(LOG_HEADER + "\n")
    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            d_losses, g_losses, hits_real, hits_fake = [], [], [], []
            for _ in range(config.batch_windows_per_epoch):
                for _ in range(config.d_steps_per_g_step):
                    real = sample_windows(dataset, t, 1, rng)[0]
                    fake = gen(sample_noise(n, k, config.noise_distribution, rng))
                    loss_d, p_real, p_fake = _discriminator_terms(disc, real, fake, config.clamp_eps)
                    _check_finite(loss_d, "discriminator", epoch)
                    ad.backward(loss_d)
                    d_opt.step()
                    d_losses.append(loss_d.item())
                    hits_real.append(p_real > 0.5)
                    hits_fake.append(p_fake < 0.5)
                z = Node(sample_noise(n, k, config.noise_distribution, rng))
                loss_g = generator_loss(disc, gen.forward(z), config.clamp_eps, nonsat)
                _check_finite(loss_g, "generator", epoch)
                ad.backward(loss_g)
                g_opt.step()
                g_losses.append(loss_g.item())
            history.record(np.mean(d_losses), np.mean(g_losses), np.mean(hits_real), np.mean(hits_fake),
                           time.perf_counter() - t0)
            if log_fh is not None:
                log_fh.write(history.log_line(epoch) + "\n")
            if checkpoint_path is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                snapshot(epoch + 1).save(checkpoint_path)
            if config.early_stop and _converged(history, config.early_stop_window, config.early_stop_tol):
                log.info("early stop at epoch %d", epoch)
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    ckpt = snapshot(len(history))
    if checkpoint_path is not None:
        ckpt.save(checkpoint_path)
    return TrainResult(gen, disc, history, ckpt)
