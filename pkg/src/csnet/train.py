"""ADAM training loop over the four model variants.

Variants: ``standard`` pools all triplets into one network with the
plain hinge loss; ``specialist_set`` trains one independent network per
condition; ``csn_fixed`` and ``csn_learned`` train a single network
plus a mask bank with the joint loss, with the bank frozen or trainable
respectively. Snapshot selection keeps the epoch with the lowest
validation triplet error.

The stated moment controls (beta1=0.1, beta2=0.001) invert the usual
ADAM convention and would make the moment estimates near-memoryless;
by default they are interpreted as (1-decay) so the effective decay
factors are 0.9/0.999. Set ``literal_betas`` to use them verbatim.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import evaluate
from .autodiff import Param, Tensor, backward, zero_grads
from .data import SplitDataset, Triplet
from .errors import ConfigError, ContractError, TrainingDiverged
from .model import EmbeddingNet, LossConfig, MaskBank, csn_loss

VARIANTS = ("standard", "specialist_set", "csn_fixed", "csn_learned")


@dataclass(frozen=True)
class OptimizerConfig:
    alpha: float = 5e-5
    beta1: float = 0.1
    beta2: float = 0.001
    epsilon: float = 1e-8
    literal_betas: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"beta controls must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")

    def decay_factors(self) -> tuple[float, float]:
        """Effective first/second moment decay factors."""
        if self.literal_betas:
            return self.beta1, self.beta2
        return 1.0 - self.beta1, 1.0 - self.beta2


class AdamState:
    """Per-parameter moment estimates plus the shared step counter."""

    def __init__(self, params: Sequence[Param]):
        self.first_moment = {p.id: np.zeros_like(p.data) for p in params}
        self.second_moment = {p.id: np.zeros_like(p.data) for p in params}
        self.step_count = 0


def adam_step(params: Sequence[Param], state: AdamState, cfg: OptimizerConfig) -> None:
    """One bias-corrected ADAM update in place; frozen params must not be passed."""
    b1, b2 = cfg.decay_factors()
    state.step_count += 1
    t = state.step_count
    for p in params:
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {p.id!r} at step {t}")
        m = state.first_moment[p.id]
        v = state.second_moment[p.id]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.value.data -= cfg.alpha * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


@dataclass(frozen=True)
class MaskInit:
    mode: str = "normal"  # "disjoint" | "normal"
    mean: float = 0.9
    variance: float = 0.7

    def __post_init__(self):
        if self.mode not in ("disjoint", "normal"):
            raise ConfigError(f"mask_init mode must be 'disjoint' or 'normal', got {self.mode!r}")
        if self.variance <= 0:
            raise ConfigError(f"mask_init variance must be > 0, got {self.variance}")


def init_masks(
    d: int,
    n_c: int,
    mode: str = "disjoint",
    seed: int = 0,
    mean: float = 0.9,
    variance: float = 0.7,
    trainable: bool | None = None,
) -> MaskBank:
    """Build the mask bank.

    Disjoint mode allocates one contiguous block of d // n_c dimensions
    per condition (1.0 inside the block, -1.0 elsewhere so the
    rectified masks are exact indicator blocks); a remainder goes to
    the last condition. Normal mode draws beta from
    Normal(mean, variance). Trainability defaults to False for disjoint
    and True for normal.
    """
    if n_c > d:
        raise ConfigError(f"need n_c <= d, got n_c={n_c}, d={d}")
    if mode == "disjoint":
        beta = np.full((d, n_c), -1.0)
        block = d // n_c
        for c in range(n_c):
            hi = (c + 1) * block if c < n_c - 1 else d
            beta[c * block : hi, c] = 1.0
        return MaskBank(beta, trainable=bool(trainable) if trainable is not None else False)
    if mode == "normal":
        rng = np.random.default_rng(seed)
        beta = rng.normal(mean, np.sqrt(variance), size=(d, n_c))
        return MaskBank(beta, trainable=bool(trainable) if trainable is not None else True)
    raise ConfigError(f"unknown mask init mode {mode!r}")


@dataclass(frozen=True)
class TrainConfig:
    variant: str
    hidden_sizes: tuple[int, ...] = (128, 64)
    embedding_dim: int = 64
    batch_size: int = 64
    epochs: int = 50
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    mask_init: MaskInit = field(default_factory=MaskInit)
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.embedding_dim < 1:
            raise ConfigError(f"embedding_dim must be >= 1, got {self.embedding_dim}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_error: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        return early_stop_select([r.val_error for r in self.records])


@dataclass
class TrainResult:
    variant: str
    nets: list[EmbeddingNet]
    bank: MaskBank | None
    history: TrainHistory
    conditions: list[str]

    def eval_model(self):
        """(model, masks) pair in the shape evaluate.triplet_error expects."""
        if self.variant == "specialist_set":
            return self.nets, None
        if self.variant == "standard":
            return self.nets[0], None
        return self.nets[0], self.bank


def early_stop_select(val_errors: Sequence[float], checkpoints: Sequence | None = None):
    """Index (or checkpoint) with minimal validation error, earliest on ties."""
    if len(val_errors) == 0:
        raise ContractError("early_stop_select: no epochs recorded")
    best = int(np.argmin(np.asarray(val_errors)))
    if checkpoints is not None:
        if len(checkpoints) != len(val_errors):
            raise ContractError("early_stop_select: checkpoints do not match history")
        return checkpoints[best]
    return best


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


def _epoch_order(triplets: Sequence[Triplet], rng: np.random.Generator) -> list[Triplet]:
    """Shuffle within each condition, then interleave conditions round-robin
    so every batch carries near-equal per-condition counts."""
    by_cond: dict[int, list[Triplet]] = {}
    for t in triplets:
        by_cond.setdefault(t.condition, []).append(t)
    pools = [by_cond[c] for c in sorted(by_cond)]
    for pool in pools:
        perm = rng.permutation(len(pool))
        pool[:] = [pool[i] for i in perm]
    order: list[Triplet] = []
    longest = max(len(p) for p in pools)
    for i in range(longest):
        for pool in pools:
            if i < len(pool):
                order.append(pool[i])
    return order


def _run_epoch(
    net: EmbeddingNet,
    bank: MaskBank,
    trainable: list[Param],
    state: AdamState,
    triplets: Sequence[Triplet],
    ds: SplitDataset,
    lcfg: LossConfig,
    ocfg: OptimizerConfig,
    batch_size: int,
    rng: np.random.Generator,
) -> float:
    """One pass over the materialized triplet list; returns mean train loss."""
    order = _epoch_order(triplets, rng)
    total = 0.0
    row_cache: dict[int, Tensor] = {}

    def x(i: int) -> Tensor:
        t = row_cache.get(i)
        if t is None:
            t = Tensor(ds.features[i])
            row_cache[i] = t
        return t

    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        row_cache.clear()
        batch = [(x(t.anchor), x(t.close), x(t.far), t.condition) for t in chunk]
        zero_grads(trainable)
        loss = csn_loss(net, bank, batch, lcfg)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at batch starting {start}")
        backward(loss)
        adam_step(trainable, state, ocfg)
        total += value * len(chunk)
    return total / len(order)


def train(
    cfg: TrainConfig,
    ds: SplitDataset,
    train_triplets: Sequence[Triplet],
    val_triplets: Sequence[Triplet],
    conditions: Sequence[str],
    on_improve=None,
) -> TrainResult:
    """Train the configured variant; returns the best-validation-epoch model.

    Training is a pure function of (cfg, ds, triplets): every random
    draw comes from seeds derived from cfg.seed. ``on_improve(epoch,
    nets, bank)`` fires whenever the validation error reaches a new
    minimum, letting callers snapshot checkpoints as they happen.
    """
    if len(train_triplets) < cfg.batch_size:
        raise ConfigError(
            f"{len(train_triplets)} training triplets cannot fill a batch of {cfg.batch_size}"
        )
    n_c = len(conditions)
    for t in list(train_triplets) + list(val_triplets):
        if not 0 <= t.condition < n_c:
            raise ConfigError(f"triplet condition {t.condition} out of range for {n_c} conditions")
    d = cfg.embedding_dim
    layer_sizes = [ds.feature_len, *cfg.hidden_sizes]
    ones_bank = MaskBank(np.ones((d, n_c)), trainable=False)
    plain_loss = LossConfig(cfg.loss.margin_h, 0.0, 0.0)

    if cfg.variant == "specialist_set":
        nets = [
            EmbeddingNet(layer_sizes, d, seed=_derived_seed(cfg.seed, 10, c)) for c in range(n_c)
        ]
        states = [AdamState(net.params()) for net in nets]
        per_cond = [[t for t in train_triplets if t.condition == c] for c in range(n_c)]
        for c, pool in enumerate(per_cond):
            if len(pool) < 1:
                raise ConfigError(f"specialist_set: no training triplets for condition {c}")
        history = TrainHistory()
        # Each expert early-stops independently on its own condition's
        # validation error; the pooled error is recorded for the history.
        best_states: list[list[np.ndarray] | None] = [None] * n_c
        best_errors = [np.inf] * n_c
        pooled_best = np.inf
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            losses = []
            for c, net in enumerate(nets):
                rng = np.random.default_rng(_derived_seed(cfg.seed, 20, epoch, c))
                losses.append(
                    _run_epoch(
                        net, ones_bank, net.params(), states[c], per_cond[c], ds,
                        plain_loss, cfg.optimizer, cfg.batch_size, rng,
                    )
                    * len(per_cond[c])
                )
            train_loss = sum(losses) / len(train_triplets)
            report = evaluate.triplet_error(nets, None, val_triplets, ds)
            history.records.append(
                EpochRecord(epoch, train_loss, report.overall_error, time.perf_counter() - t0)
            )
            for c in range(n_c):
                err_c = report.per_condition_error.get(c, np.inf)
                if err_c < best_errors[c]:
                    best_errors[c] = err_c
                    best_states[c] = nets[c].get_state()
            if report.overall_error < pooled_best:
                pooled_best = report.overall_error
                if on_improve is not None:
                    on_improve(epoch, nets, None)
        for net, st in zip(nets, best_states):
            if st is not None:
                net.set_state(st)
        return TrainResult("specialist_set", nets, None, history, list(conditions))

    net = EmbeddingNet(layer_sizes, d, seed=_derived_seed(cfg.seed, 10))
    if cfg.variant == "standard":
        bank, lcfg = ones_bank, plain_loss
        trainable = net.params()
    elif cfg.variant == "csn_fixed":
        bank = init_masks(d, n_c, "disjoint", trainable=False)
        lcfg = cfg.loss
        trainable = net.params()
    else:  # csn_learned
        bank = init_masks(
            d, n_c, cfg.mask_init.mode,
            seed=_derived_seed(cfg.seed, 11),
            mean=cfg.mask_init.mean, variance=cfg.mask_init.variance,
            trainable=True,
        )
        lcfg = cfg.loss
        trainable = net.params() + [bank.beta]

    state = AdamState(trainable)
    history = TrainHistory()
    best_net_state: list[np.ndarray] | None = None
    best_bank_state: np.ndarray | None = None
    best_error = np.inf
    eval_bank = bank if cfg.variant in ("csn_fixed", "csn_learned") else None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng(_derived_seed(cfg.seed, 20, epoch))
        train_loss = _run_epoch(
            net, bank, trainable, state, train_triplets, ds, lcfg, cfg.optimizer, cfg.batch_size, rng
        )
        report = evaluate.triplet_error(net, eval_bank, val_triplets, ds)
        history.records.append(
            EpochRecord(epoch, train_loss, report.overall_error, time.perf_counter() - t0)
        )
        if report.overall_error < best_error:
            best_error = report.overall_error
            best_net_state = net.get_state()
            best_bank_state = bank.get_state()
            if on_improve is not None:
                on_improve(epoch, [net], bank if cfg.variant in ("csn_fixed", "csn_learned") else None)
    net.set_state(best_net_state)
    bank.set_state(best_bank_state)
    result_bank = bank if cfg.variant in ("csn_fixed", "csn_learned") else None
    return TrainResult(cfg.variant, [net], result_bank, history, list(conditions))


def write_metrics(history: TrainHistory, path: str | Path) -> None:
    """Line-delimited per-epoch records. Wall-clock seconds stay out of the
    artifact so reruns of the same config produce identical bytes; they are
    available on the in-memory history and in console logs."""
    with open(path, "w") as fh:
        for r in history.records:
            fh.write(
                json.dumps(
                    {"epoch": r.epoch, "train_loss": r.train_loss, "val_error": r.val_error},
                    sort_keys=True,
                )
                + "\n"
            )
