"""Run configuration: one validated structure drives every command.

Code defaults reproduce the full-scale hyperparameters (learning rate
5e-5, batch 256, 200 epochs, 200k/20k/40k triplets per condition); the
shipped desk profile overrides the scale-sensitive knobs so the whole
pipeline runs on one CPU in minutes. Parsing is strict: unknown or
ill-typed keys fail with the offending key path.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .data import COLOR_CHANNELS, SHAPE_GLYPHS, SIZE_RADII
from .errors import ConfigError
from .model import LossConfig
from .train import MaskInit, OptimizerConfig, TrainConfig, VARIANTS


@dataclass(frozen=True)
class DataConfig:
    n_samples: int = 51200
    image_side: int = 16
    noise_std: float = 0.02
    seed: int = 7
    shapes: tuple[str, ...] = SHAPE_GLYPHS
    colors: tuple[str, ...] = tuple(COLOR_CHANNELS)
    sizes: tuple[str, ...] = tuple(SIZE_RADII)
    radii: dict = field(default_factory=lambda: {k: list(v) for k, v in SIZE_RADII.items()})
    center_jitter: float = 1.0
    brightness_max: float = 2.0
    fractions: tuple[float, float, float] = (0.70, 0.10, 0.20)
    triplets_train: int = 200_000
    triplets_val: int = 20_000
    triplets_test: int = 40_000
    numeric_gap: float = 2.0


@dataclass(frozen=True)
class ModelConfig:
    hidden_sizes: tuple[int, ...] = (128, 64)
    embedding_dim: int = 64


@dataclass(frozen=True)
class TrainingConfig:
    variant: str = "csn_learned"
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0
    mask_init: MaskInit = field(default_factory=MaskInit)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"training.variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True)
class EvalConfig:
    budgets: tuple[int, ...] = (5_000, 12_500, 25_000, 50_000, 200_000)
    sweep_variants: tuple[str, ...] = VARIANTS
    probe_attribute: str = "shape_color"
    probe_hidden: int = 0
    probe_steps: int = 400
    probe_alpha: float = 0.05
    mask_threshold: float = 1e-3


@dataclass(frozen=True)
class IoConfig:
    out_dir: str = "runs"


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    io: IoConfig = field(default_factory=IoConfig)

    conditions: tuple[str, ...] = ("shape", "color", "size", "size_value")

    def to_dict(self) -> dict:
        """Canonical dict in exactly the schema parse_config accepts."""
        doc = {
            "data": asdict(self.data),
            "model": asdict(self.model),
            "loss": {
                "margin": self.loss.margin_h,
                "lambda1": self.loss.lambda1,
                "lambda2": self.loss.lambda2,
            },
            "optimizer": asdict(self.optimizer),
            "training": asdict(self.training),
            "eval": asdict(self.eval),
            "io": asdict(self.io),
            "conditions": list(self.conditions),
        }
        for key in ("shapes", "colors", "sizes", "fractions"):
            doc["data"][key] = list(doc["data"][key])
        doc["model"]["hidden_sizes"] = list(doc["model"]["hidden_sizes"])
        doc["eval"]["budgets"] = list(doc["eval"]["budgets"])
        doc["eval"]["sweep_variants"] = list(doc["eval"]["sweep_variants"])
        return doc

    def train_config(self, variant: str | None = None, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            variant=variant if variant is not None else self.training.variant,
            hidden_sizes=tuple(self.model.hidden_sizes),
            embedding_dim=self.model.embedding_dim,
            batch_size=self.training.batch_size,
            epochs=self.training.epochs,
            loss=self.loss,
            optimizer=self.optimizer,
            mask_init=self.training.mask_init,
            seed=seed if seed is not None else self.training.seed,
        )


def desk_config() -> RunConfig:
    """The shipped desk-scale profile: the full benchmark on one CPU."""
    return RunConfig(
        data=DataConfig(
            n_samples=1280,
            triplets_train=5_000,
            triplets_val=500,
            triplets_test=1_000,
        ),
        optimizer=OptimizerConfig(alpha=1e-3),
        training=TrainingConfig(variant="csn_learned", batch_size=64, epochs=30),
        eval=EvalConfig(budgets=(500, 1_000, 2_000, 5_000)),
    )


# ---------------------------------------------------------------------------
# Strict parsing
# ---------------------------------------------------------------------------


def _expect(doc: Any, typ: type | tuple, path: str):
    if typ is float and isinstance(doc, int) and not isinstance(doc, bool):
        return float(doc)
    if not isinstance(doc, typ) or isinstance(doc, bool) and typ is not bool:
        raise ConfigError(f"{path}: expected {getattr(typ, '__name__', typ)}, got {type(doc).__name__}")
    return doc


def _reject_unknown(doc: dict, known: Sequence[str], path: str) -> None:
    for key in doc:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key")


def _seq(doc: Any, typ: type, path: str) -> tuple:
    _expect(doc, list, path)
    return tuple(_expect(v, typ, f"{path}[{i}]") for i, v in enumerate(doc))


def parse_config(doc: dict, base: RunConfig | None = None) -> RunConfig:
    """Parse a JSON-style dict, overriding the base (desk profile by default)."""
    base = base if base is not None else desk_config()
    _expect(doc, dict, "config")
    sections = ("data", "model", "loss", "optimizer", "training", "eval", "io", "conditions")
    _reject_unknown(doc, sections, "config")

    data = base.data
    if "data" in doc:
        d = _expect(doc["data"], dict, "data")
        keys = (
            "n_samples", "image_side", "noise_std", "seed", "shapes", "colors", "sizes",
            "radii", "center_jitter", "brightness_max", "fractions",
            "triplets_train", "triplets_val", "triplets_test", "numeric_gap",
        )
        _reject_unknown(d, keys, "data")
        radii = data.radii
        if "radii" in d:
            raw = _expect(d["radii"], dict, "data.radii")
            radii = {k: list(_seq(v, float, f"data.radii.{k}")) for k, v in raw.items()}
        fr = tuple(_seq(d["fractions"], float, "data.fractions")) if "fractions" in d else data.fractions
        if "fractions" in d and len(fr) != 3:
            raise ConfigError("data.fractions: expected three fractions")
        data = DataConfig(
            n_samples=_expect(d.get("n_samples", data.n_samples), int, "data.n_samples"),
            image_side=_expect(d.get("image_side", data.image_side), int, "data.image_side"),
            noise_std=_expect(d.get("noise_std", data.noise_std), float, "data.noise_std"),
            seed=_expect(d.get("seed", data.seed), int, "data.seed"),
            shapes=_seq(d["shapes"], str, "data.shapes") if "shapes" in d else data.shapes,
            colors=_seq(d["colors"], str, "data.colors") if "colors" in d else data.colors,
            sizes=_seq(d["sizes"], str, "data.sizes") if "sizes" in d else data.sizes,
            radii=radii,
            center_jitter=_expect(d.get("center_jitter", data.center_jitter), float, "data.center_jitter"),
            brightness_max=_expect(d.get("brightness_max", data.brightness_max), float, "data.brightness_max"),
            fractions=fr,
            triplets_train=_expect(d.get("triplets_train", data.triplets_train), int, "data.triplets_train"),
            triplets_val=_expect(d.get("triplets_val", data.triplets_val), int, "data.triplets_val"),
            triplets_test=_expect(d.get("triplets_test", data.triplets_test), int, "data.triplets_test"),
            numeric_gap=_expect(d.get("numeric_gap", data.numeric_gap), float, "data.numeric_gap"),
        )

    model = base.model
    if "model" in doc:
        m = _expect(doc["model"], dict, "model")
        _reject_unknown(m, ("hidden_sizes", "embedding_dim"), "model")
        model = ModelConfig(
            hidden_sizes=_seq(m["hidden_sizes"], int, "model.hidden_sizes")
            if "hidden_sizes" in m
            else model.hidden_sizes,
            embedding_dim=_expect(m.get("embedding_dim", model.embedding_dim), int, "model.embedding_dim"),
        )

    loss = base.loss
    if "loss" in doc:
        l = _expect(doc["loss"], dict, "loss")
        _reject_unknown(l, ("margin", "lambda1", "lambda2"), "loss")
        loss = LossConfig(
            margin_h=_expect(l.get("margin", loss.margin_h), float, "loss.margin"),
            lambda1=_expect(l.get("lambda1", loss.lambda1), float, "loss.lambda1"),
            lambda2=_expect(l.get("lambda2", loss.lambda2), float, "loss.lambda2"),
        )

    optimizer = base.optimizer
    if "optimizer" in doc:
        o = _expect(doc["optimizer"], dict, "optimizer")
        _reject_unknown(o, ("alpha", "beta1", "beta2", "epsilon", "literal_betas"), "optimizer")
        optimizer = OptimizerConfig(
            alpha=_expect(o.get("alpha", optimizer.alpha), float, "optimizer.alpha"),
            beta1=_expect(o.get("beta1", optimizer.beta1), float, "optimizer.beta1"),
            beta2=_expect(o.get("beta2", optimizer.beta2), float, "optimizer.beta2"),
            epsilon=_expect(o.get("epsilon", optimizer.epsilon), float, "optimizer.epsilon"),
            literal_betas=_expect(o.get("literal_betas", optimizer.literal_betas), bool, "optimizer.literal_betas"),
        )

    training = base.training
    if "training" in doc:
        t = _expect(doc["training"], dict, "training")
        _reject_unknown(t, ("variant", "batch_size", "epochs", "seed", "mask_init"), "training")
        mask_init = training.mask_init
        if "mask_init" in t:
            mi = _expect(t["mask_init"], dict, "training.mask_init")
            _reject_unknown(mi, ("mode", "mean", "variance"), "training.mask_init")
            mask_init = MaskInit(
                mode=_expect(mi.get("mode", mask_init.mode), str, "training.mask_init.mode"),
                mean=_expect(mi.get("mean", mask_init.mean), float, "training.mask_init.mean"),
                variance=_expect(mi.get("variance", mask_init.variance), float, "training.mask_init.variance"),
            )
        training = TrainingConfig(
            variant=_expect(t.get("variant", training.variant), str, "training.variant"),
            batch_size=_expect(t.get("batch_size", training.batch_size), int, "training.batch_size"),
            epochs=_expect(t.get("epochs", training.epochs), int, "training.epochs"),
            seed=_expect(t.get("seed", training.seed), int, "training.seed"),
            mask_init=mask_init,
        )

    eval_cfg = base.eval
    if "eval" in doc:
        e = _expect(doc["eval"], dict, "eval")
        keys = (
            "budgets", "sweep_variants", "probe_attribute", "probe_hidden",
            "probe_steps", "probe_alpha", "mask_threshold",
        )
        _reject_unknown(e, keys, "eval")
        eval_cfg = EvalConfig(
            budgets=_seq(e["budgets"], int, "eval.budgets") if "budgets" in e else eval_cfg.budgets,
            sweep_variants=_seq(e["sweep_variants"], str, "eval.sweep_variants")
            if "sweep_variants" in e
            else eval_cfg.sweep_variants,
            probe_attribute=_expect(e.get("probe_attribute", eval_cfg.probe_attribute), str, "eval.probe_attribute"),
            probe_hidden=_expect(e.get("probe_hidden", eval_cfg.probe_hidden), int, "eval.probe_hidden"),
            probe_steps=_expect(e.get("probe_steps", eval_cfg.probe_steps), int, "eval.probe_steps"),
            probe_alpha=_expect(e.get("probe_alpha", eval_cfg.probe_alpha), float, "eval.probe_alpha"),
            mask_threshold=_expect(e.get("mask_threshold", eval_cfg.mask_threshold), float, "eval.mask_threshold"),
        )

    io_cfg = base.io
    if "io" in doc:
        i = _expect(doc["io"], dict, "io")
        _reject_unknown(i, ("out_dir",), "io")
        io_cfg = IoConfig(out_dir=_expect(i.get("out_dir", io_cfg.out_dir), str, "io.out_dir"))

    conditions = base.conditions
    if "conditions" in doc:
        conditions = _seq(doc["conditions"], str, "conditions")
        if len(conditions) == 0:
            raise ConfigError("conditions: must name at least one attribute")

    cfg = RunConfig(
        data=data, model=model, loss=loss, optimizer=optimizer,
        training=training, eval=eval_cfg, io=io_cfg, conditions=conditions,
    )
    for v in cfg.eval.sweep_variants:
        if v not in VARIANTS:
            raise ConfigError(f"eval.sweep_variants: unknown variant {v!r}")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
