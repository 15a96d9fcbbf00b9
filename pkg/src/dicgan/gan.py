"""DC-GAN style generator/discriminator at configurable resolution, classical
and physics-guided variants, losses, training loop, sampling, and
mode-collapse detection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from . import rng as rngmod
from . import tensorcore as tc
from .errors import ConfigError, NumericalError, ShapeError
from .fields import (DatasetMeta, FieldDataset, dataset_from_array, ftc_bytes,
                     load_ftc, write_atomic)
from .strain import VmConfig, strain_feature

PROB_CLAMP = 1e-7


@dataclass
class GanSpec:
    latent_dim: int = 5
    base_grid: int = 8
    base_channels: int = 64
    up_blocks: int = 1
    down_blocks: int = 3
    physics_guided: bool = False
    init_std: float = 0.02
    literal_loss: bool = False  # use the saturating -log D(G(z)) term in L_D
    vm: VmConfig = field(default_factory=VmConfig)

    @property
    def resolution(self) -> int:
        return self.base_grid * 2 ** self.up_blocks

    def __post_init__(self):
        if self.resolution % 2 ** self.down_blocks != 0:
            raise ConfigError(
                f"resolution {self.resolution} not divisible by 2^{self.down_blocks}")
        if self.up_blocks >= 1 and self.base_channels % 2 ** (self.up_blocks - 1) != 0:
            raise ConfigError("base_channels must be divisible by 2^(up_blocks-1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @staticmethod
    def from_dict(d: dict) -> "GanSpec":
        d = dict(d)
        if "vm" in d and isinstance(d["vm"], dict):
            d["vm"] = VmConfig(**d["vm"])
        return GanSpec(**d)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    lr: float = 0.002
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    collapse_tau: Optional[float] = None  # None: calibrated from the real corpus
    checkpoint_every: int = 0             # 0: final checkpoint only
    restart_on_collapse: int = 0          # max automatic restarts with fresh seed

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2 (batch norm)")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


# ---------------------------------------------------------------------------
# layers


class Linear:
    def __init__(self, fin: int, fout: int, gen: np.random.Generator,
                 std: float, dtype):
        self.weight = tc.Tensor(std * gen.standard_normal((fin, fout)),
                                requires_grad=True, dtype=dtype)
        self.bias = tc.Tensor(np.zeros(fout), requires_grad=True, dtype=dtype)

    def __call__(self, x):
        return tc.linear(x, self.weight, self.bias)

    def params(self):
        return [self.weight, self.bias]


class Conv2d:
    def __init__(self, cin: int, cout: int, k: int, stride: int, padding: int,
                 gen: np.random.Generator, std: float, dtype):
        self.weight = tc.Tensor(std * gen.standard_normal((cout, cin, k, k)),
                                requires_grad=True, dtype=dtype)
        self.bias = tc.Tensor(np.zeros(cout), requires_grad=True, dtype=dtype)
        self.stride, self.padding = stride, padding

    def __call__(self, x):
        return tc.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def params(self):
        return [self.weight, self.bias]


class BatchNorm2d:
    def __init__(self, channels: int, gen: np.random.Generator, std: float, dtype):
        self.weight = tc.Tensor(1.0 + std * gen.standard_normal(channels),
                                requires_grad=True, dtype=dtype)
        self.bias = tc.Tensor(np.zeros(channels), requires_grad=True, dtype=dtype)
        self.stats = tc.BatchNormStats(channels, dtype=dtype)

    def __call__(self, x, training: bool):
        return tc.batch_norm(x, self.weight, self.bias, self.stats, training)

    def params(self):
        return [self.weight, self.bias]


# ---------------------------------------------------------------------------
# networks


class Generator:
    """z (N x n) -> linear to s*s*C -> BN -> ReLU -> reshape; then up_blocks of
    [nearest 2x upsample -> BN -> ReLU -> 3x3 conv], channels halving per
    block; tanh after the final conv."""

    def __init__(self, spec: GanSpec, gen: np.random.Generator, dtype=np.float64):
        s, c = spec.base_grid, spec.base_channels
        self.spec = spec
        self.fc = Linear(spec.latent_dim, s * s * c, gen, spec.init_std, dtype)
        self.fc_bn = BatchNorm2d(c, gen, spec.init_std, dtype)
        self.blocks = []
        ch = c
        for i in range(spec.up_blocks):
            out_ch = 2 if i == spec.up_blocks - 1 else ch // 2
            bn = BatchNorm2d(ch, gen, spec.init_std, dtype)
            conv = Conv2d(ch, out_ch, 3, 1, 1, gen, spec.init_std, dtype)
            self.blocks.append((bn, conv))
            ch = out_ch

    def forward(self, z: tc.Tensor, training: bool = True) -> tc.Tensor:
        spec = self.spec
        n = z.shape[0]
        x = self.fc(z)
        x = tc.reshape(x, (n, spec.base_channels, spec.base_grid, spec.base_grid))
        x = tc.relu(self.fc_bn(x, training))
        for bn, conv in self.blocks:
            x = tc.upsample_nearest2x(x)
            x = tc.relu(bn(x, training))
            x = conv(x)
        return tc.tanh(x)

    def params(self):
        out = self.fc.params() + self.fc_bn.params()
        for bn, conv in self.blocks:
            out += bn.params() + conv.params()
        return out


class Discriminator:
    """down_blocks of [4x4 stride-2 conv -> BN -> LeakyReLU(0.2)] with channel
    plan 64 -> 128 -> 1, then flatten -> linear -> sigmoid.  The physics-guided
    variant derives the von Mises strain and concatenates it as channel 3."""

    def __init__(self, spec: GanSpec, gen: np.random.Generator, dtype=np.float64):
        self.spec = spec
        r = spec.resolution
        cin = 3 if spec.physics_guided else 2
        plan = [64 * 2 ** i for i in range(spec.down_blocks - 1)] + [1]
        self.blocks = []
        ch = cin
        for cout in plan:
            conv = Conv2d(ch, cout, 4, 2, 1, gen, spec.init_std, dtype)
            bn = BatchNorm2d(cout, gen, spec.init_std, dtype)
            self.blocks.append((conv, bn))
            ch = cout
        feat = r // 2 ** spec.down_blocks
        self.fc = Linear(feat * feat, 1, gen, spec.init_std, dtype)

    def forward(self, x: tc.Tensor, training: bool = True) -> tc.Tensor:
        spec = self.spec
        if spec.physics_guided:
            if x.shape[1] == 2:
                x = tc.concat([x, strain_feature(x, spec.vm)], axis=1)
            elif x.shape[1] != 3:
                raise ShapeError(f"physics-guided discriminator got {x.shape[1]} channels")
        for conv, bn in self.blocks:
            x = tc.leaky_relu(bn(conv(x), training), 0.2)
        n = x.shape[0]
        x = tc.reshape(x, (n, x.data.size // n))
        return tc.sigmoid(self.fc(x))

    def params(self):
        out = []
        for conv, bn in self.blocks:
            out += conv.params() + bn.params()
        return out + self.fc.params()


def build_generator(spec: GanSpec, seed: int, dtype=np.float64) -> Generator:
    return Generator(spec, rngmod.stream(seed, "gen-init"), dtype)


def build_discriminator(spec: GanSpec, seed: int, dtype=np.float64) -> Discriminator:
    return Discriminator(spec, rngmod.stream(seed, "disc-init"), dtype)


# ---------------------------------------------------------------------------
# losses


def _clamped(p: tc.Tensor) -> tc.Tensor:
    return tc.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def d_loss(d_real: tc.Tensor, d_fake: tc.Tensor, literal: bool = False) -> tc.Tensor:
    """-log D(x) - log(1 - D(G(z))); ``literal`` switches the second term to
    -log D(G(z))."""
    term_real = tc.log(_clamped(d_real))
    if literal:
        term_fake = tc.log(_clamped(d_fake))
    else:
        term_fake = tc.log(_clamped(tc.add(tc.mul(d_fake, -1.0), 1.0)))
    return tc.mul(tc.add(tc.tmean(term_real), tc.tmean(term_fake)), -1.0)


def g_loss(d_fake: tc.Tensor) -> tc.Tensor:
    """Non-saturating generator loss -log D(G(z))."""
    return tc.mul(tc.tmean(tc.log(_clamped(d_fake))), -1.0)


# ---------------------------------------------------------------------------
# mode collapse


def collapse_statistic(samples: np.ndarray) -> float:
    """Mean pairwise L2 distance between flattened samples, normalized by the
    square root of the pixel count (H*W)."""
    n = samples.shape[0]
    if n < 2:
        raise ShapeError("collapse statistic needs >= 2 samples")
    hw = samples.shape[-1] * samples.shape[-2]
    flat = samples.reshape(n, -1)
    from scipy.spatial.distance import pdist
    return float(pdist(flat).mean() / math.sqrt(hw))


def collapse_check(samples: np.ndarray, tau: float):
    stat = collapse_statistic(samples)
    return stat < tau, stat


def calibrate_collapse_tau(real: np.ndarray, fraction: float = 0.1) -> float:
    """Default threshold: 10% of the real corpus' pairwise-distance statistic."""
    n = min(len(real), 64)
    return fraction * collapse_statistic(real[:n])


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainState:
    spec: GanSpec
    cfg: TrainConfig
    generator: Generator
    discriminator: Discriminator
    epoch: int = 0
    step: int = 0
    history: list = field(default_factory=list)  # (step, epoch, L_D, L_G, D_real, D_fake)
    collapsed: bool = False
    collapse_stat: float = float("nan")
    restarts: int = 0
    effective_seed: int = 0


def _sample_raw(generator: Generator, count: int, gen: np.random.Generator,
                dtype=np.float32) -> np.ndarray:
    if count == 0:
        return np.zeros((0, 2, generator.spec.resolution, generator.spec.resolution))
    out = []
    bs = 64
    for i in range(0, count, bs):
        m = min(bs, count - i)
        z = tc.Tensor(gen.standard_normal((m, generator.spec.latent_dim)), dtype=dtype)
        out.append(generator.forward(z, training=False).data.astype(np.float64))
    return np.concatenate(out)


def sample(generator: Generator, count: int, seed: int) -> FieldDataset:
    """Draw ``count`` scaled fake samples, deterministic per seed."""
    arr = _sample_raw(generator, count, rngmod.stream(seed, "sample"),
                      dtype=generator.params()[0].dtype)
    return dataset_from_array(arr, DatasetMeta(source="synthetic", seed=seed), scaled=True)


def sample_array(generator: Generator, count: int, seed: int) -> np.ndarray:
    return _sample_raw(generator, count, rngmod.stream(seed, "sample"),
                       dtype=generator.params()[0].dtype)


def _train_once(data: np.ndarray, spec: GanSpec, cfg: TrainConfig, seed: int,
                dtype, log_cb) -> TrainState:
    n_samples = data.shape[0]
    if data.shape[2] != spec.resolution:
        raise ConfigError(f"dataset resolution {data.shape[2]} != spec {spec.resolution}")
    gen_net = build_generator(spec, seed, dtype)
    disc_net = build_discriminator(spec, seed, dtype)
    opt_g = tc.AdamState(gen_net.params(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    opt_d = tc.AdamState(disc_net.params(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    shuffle_gen = rngmod.stream(seed, "shuffle")
    z_gen = rngmod.stream(seed, "latent")
    state = TrainState(spec=spec, cfg=cfg, generator=gen_net, discriminator=disc_net,
                       effective_seed=seed)
    data = data.astype(dtype)

    for epoch in range(cfg.epochs):
        order = shuffle_gen.permutation(n_samples)
        for start in range(0, n_samples, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:  # batch norm needs >= 2; a size-1 leftover is skipped
                continue
            real = tc.Tensor(data[idx], dtype=dtype)
            z = tc.Tensor(z_gen.standard_normal((len(idx), spec.latent_dim)), dtype=dtype)

            # discriminator step
            fake = gen_net.forward(z, training=True).detach()
            d_real = disc_net.forward(real, training=True)
            d_fake = disc_net.forward(fake, training=True)
            ld = d_loss(d_real, d_fake, literal=spec.literal_loss)
            ld.backward()
            opt_d.step()

            # generator step (same z, fresh graph)
            fake2 = gen_net.forward(z, training=True)
            d_fake2 = disc_net.forward(fake2, training=True)
            lg = g_loss(d_fake2)
            lg.backward()
            opt_g.step()

            ld_v, lg_v = ld.item(), lg.item()
            if not (math.isfinite(ld_v) and math.isfinite(lg_v)):
                raise NumericalError(f"NaN/Inf loss at step {state.step}: L_D={ld_v}, L_G={lg_v}")
            state.step += 1
            rec = (state.step, epoch + 1, ld_v, lg_v,
                   float(d_real.data.mean()), float(d_fake.data.mean()))
            state.history.append(rec)
        state.epoch = epoch + 1
        if log_cb is not None:
            log_cb(state)
    return state


def train(dataset, spec: GanSpec, cfg: TrainConfig, dtype=np.float32,
          log_cb: Optional[Callable] = None) -> TrainState:
    """Adversarial training; deterministic per master seed.  On mode collapse
    the run is flagged and optionally restarted with a derived fresh seed."""
    data = dataset.as_array() if isinstance(dataset, FieldDataset) else np.asarray(dataset)
    tau = cfg.collapse_tau
    if tau is None:
        tau = calibrate_collapse_tau(data)
    seed = cfg.seed
    state = None
    for attempt in range(cfg.restart_on_collapse + 1):
        state = _train_once(data, spec, cfg, seed, dtype, log_cb)
        probe = _sample_raw(state.generator, 64, rngmod.stream(seed, "collapse-probe"), dtype)
        state.collapsed, state.collapse_stat = collapse_check(probe, tau)
        state.restarts = attempt
        if not state.collapsed:
            break
        seed = int(rngmod.stream(seed, "restart").integers(0, 2 ** 31))
    return state


# ---------------------------------------------------------------------------
# checkpoints


def _bn_layers(state: TrainState, prefix: str):
    if prefix == "g":
        return [state.generator.fc_bn] + [b for b, _ in state.generator.blocks]
    return [b for _, b in state.discriminator.blocks]


def _named_params(state: TrainState) -> dict:
    out = {}
    for i, p in enumerate(state.generator.params()):
        out[f"g.{i}"] = p.data
    for i, p in enumerate(state.discriminator.params()):
        out[f"d.{i}"] = p.data
    for prefix in ("g", "d"):
        for j, bn in enumerate(_bn_layers(state, prefix)):
            out[f"{prefix}.bn{j}.mean"] = bn.stats.mean
            out[f"{prefix}.bn{j}.var"] = bn.stats.var
    return out


def save_checkpoint(path_prefix, state: TrainState) -> None:
    """FTC1 parameter container + JSON manifest (spec, config, epoch, losses)."""
    tensors = {k: np.asarray(v, dtype=np.float64) for k, v in _named_params(state).items()}
    write_atomic(str(path_prefix) + ".ftc", ftc_bytes(tensors))
    manifest = {
        "spec": state.spec.to_dict(),
        "train": asdict(state.cfg),
        "epoch": state.epoch,
        "step": state.step,
        "collapsed": state.collapsed,
        "collapse_stat": state.collapse_stat,
        "effective_seed": state.effective_seed,
        "restarts": state.restarts,
        "tensors": {k: list(v.shape) for k, v in tensors.items()},
        "history_tail": state.history[-5:],
    }
    write_atomic(str(path_prefix) + ".json",
                 json.dumps(manifest, indent=2, sort_keys=True).encode() + b"\n")


def load_checkpoint(path_prefix, dtype=np.float32) -> TrainState:
    with open(str(path_prefix) + ".json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    spec = GanSpec.from_dict(manifest["spec"])
    cfg = TrainConfig(**manifest["train"])
    tensors = load_ftc(str(path_prefix) + ".ftc")
    state = TrainState(spec=spec, cfg=cfg,
                       generator=build_generator(spec, cfg.seed, dtype),
                       discriminator=build_discriminator(spec, cfg.seed, dtype),
                       epoch=manifest["epoch"], step=manifest["step"],
                       collapsed=manifest["collapsed"],
                       collapse_stat=manifest["collapse_stat"],
                       effective_seed=manifest.get("effective_seed", cfg.seed),
                       restarts=manifest.get("restarts", 0))
    for i, p in enumerate(state.generator.params()):
        p.data = tensors[f"g.{i}"].astype(dtype)
    for i, p in enumerate(state.discriminator.params()):
        p.data = tensors[f"d.{i}"].astype(dtype)
    for prefix in ("g", "d"):
        for j, bn in enumerate(_bn_layers(state, prefix)):
            bn.stats.mean = tensors[f"{prefix}.bn{j}.mean"].astype(dtype)
            bn.stats.var = tensors[f"{prefix}.bn{j}.var"].astype(dtype)
    return state


def history_csv(history) -> str:
    lines = ["step,epoch,L_D,L_G,D_real_mean,D_fake_mean"]
    for step, epoch, ld, lg, dr, df in history:
        lines.append(f"{step},{epoch},{ld!r},{lg!r},{dr!r},{df!r}")
    return "\n".join(lines) + "\n"
