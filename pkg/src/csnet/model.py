"""Embedding network, per-condition masks, and the loss terms.

The embedding is a composition y = P·g(x): ``g`` is a small dense ReLU
network and ``P`` a linear projection into the d-dimensional embedding
space. A mask bank holds one learnable column per similarity condition;
rectifying a column yields the nonnegative gating vector that selects
the subspace in which that condition's distances are measured.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Tensor
from .errors import ContractError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    """Weights of the joint loss: hinge margin plus the two regularizer weights."""

    margin_h: float = 0.2
    lambda1: float = 5e-3
    lambda2: float = 5e-4

    def __post_init__(self):
        for name in ("margin_h", "lambda1", "lambda2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ContractError(f"LossConfig.{name} must be finite and >= 0, got {v}")


class EmbeddingNet:
    """Dense ReLU feature extractor g plus a linear projection into R^d.

    ``layer_sizes`` lists the input dimension followed by the hidden
    widths; the last entry is the output width b of g. The projection
    matrix has shape (d, b).
    """

    def __init__(self, layer_sizes: Sequence[int], embedding_dim: int, seed: int = 0):
        if len(layer_sizes) < 1 or any(s < 1 for s in layer_sizes):
            raise ContractError(f"layer_sizes must be positive, got {layer_sizes}")
        if embedding_dim < 1:
            raise ContractError(f"embedding_dim must be positive, got {embedding_dim}")
        self.layer_sizes = list(layer_sizes)
        self.embedding_dim = int(embedding_dim)
        rng = np.random.default_rng(seed)
        self.hidden: list[tuple[Param, Param]] = []
        for i, (n_in, n_out) in enumerate(zip(self.layer_sizes, self.layer_sizes[1:])):
            w = rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in)
            self.hidden.append((Param(w, f"g.{i}.weight"), Param(np.zeros(n_out), f"g.{i}.bias")))
        b_dim = self.layer_sizes[-1]
        proj = rng.standard_normal((self.embedding_dim, b_dim)) * np.sqrt(1.0 / b_dim)
        self.projection = Param(proj, "projection")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def params(self) -> list[Param]:
        out = []
        for w, b in self.hidden:
            out.extend((w, b))
        out.append(self.projection)
        return out

    def get_state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params()]

    def set_state(self, state: Sequence[np.ndarray]) -> None:
        params = self.params()
        if len(state) != len(params):
            raise ContractError("state does not match parameter list")
        for p, arr in zip(params, state):
            if p.data.shape != arr.shape:
                raise ShapeError(f"state shape {arr.shape} != param {p.id} shape {p.data.shape}")
            p.data[...] = arr

    def forward_arrays(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward pass; floats match the differentiable path."""
        h = np.asarray(x, dtype=np.float64)
        for w, b in self.hidden:
            h = np.maximum(h @ w.data + b.data, 0.0)
        return h @ np.ascontiguousarray(self.projection.data.T)


class MaskBank:
    """Learnable mask parameters, one column of beta per condition.

    The gating vector for condition c is max(0, beta[:, c]). When
    ``trainable`` is false the optimizer must leave beta untouched.
    """

    def __init__(self, beta: np.ndarray, trainable: bool):
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 2:
            raise ShapeError(f"beta must be a (d, n_c) matrix, got shape {beta.shape}")
        self.beta = Param(beta, "mask.beta")
        self.trainable = bool(trainable)

    @property
    def d(self) -> int:
        return self.beta.data.shape[0]

    @property
    def n_conditions(self) -> int:
        return self.beta.data.shape[1]

    def rectified(self) -> np.ndarray:
        """The full (d, n_c) matrix of rectified mask values."""
        return np.maximum(self.beta.data, 0.0)

    def get_state(self) -> np.ndarray:
        return self.beta.data.copy()

    def set_state(self, arr: np.ndarray) -> None:
        if arr.shape != self.beta.data.shape:
            raise ShapeError(f"state shape {arr.shape} != beta shape {self.beta.data.shape}")
        self.beta.data[...] = arr


def embed(net: EmbeddingNet, x: Tensor) -> Tensor:
    """Differentiable y = P·g(x) applied row-wise to a (batch, input_dim) tensor."""
    if x.data.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"embed: expected (batch, {net.input_dim}) input, got {x.shape}")
    h = x
    for w, b in net.hidden:
        h = ad.relu(ad.add(ad.matmul(h, w.value), b.value))
    return ad.matmul(h, ad.transpose(net.projection.value))


def mask(bank: MaskBank, c: int) -> Tensor:
    """Rectified mask column for condition c."""
    if not 0 <= c < bank.n_conditions:
        raise IndexError(f"condition {c} out of range for {bank.n_conditions} conditions")
    return ad.relu(ad.col(bank.beta.value, c))


def masked_distance(y_i: Tensor, y_j: Tensor, m_c: Tensor) -> Tensor:
    """Euclidean distance between the two vectors after gating by m_c."""
    return ad.euclidean_norm(ad.mul(ad.sub(y_i, y_j), m_c))


def triplet_loss_standard(y_a: Tensor, y_close: Tensor, y_far: Tensor, h: float) -> Tensor:
    d_close = ad.euclidean_norm(ad.sub(y_a, y_close))
    d_far = ad.euclidean_norm(ad.sub(y_a, y_far))
    return ad.hinge(ad.add_scalar(ad.sub(d_close, d_far), h))


def triplet_loss_masked(y_a: Tensor, y_close: Tensor, y_far: Tensor, m_c: Tensor, h: float) -> Tensor:
    d_close = masked_distance(y_a, y_close, m_c)
    d_far = masked_distance(y_a, y_far, m_c)
    return ad.hinge(ad.add_scalar(ad.sub(d_close, d_far), h))


def embedding_loss(y: Tensor) -> Tensor:
    """Mean squared L2 norm over the rows of an embedding batch."""
    if y.data.ndim != 2:
        raise ShapeError(f"embedding_loss: expected (batch, d), got {y.shape}")
    return ad.scale(ad.sum_all(ad.mul(y, y)), 1.0 / y.shape[0])


def mask_loss(bank: MaskBank) -> Tensor:
    """L1 mass of all rectified mask entries."""
    return ad.sum_all(ad.relu(bank.beta.value))


def csn_loss(net: EmbeddingNet, bank: MaskBank, batch: Sequence[tuple], cfg: LossConfig) -> Tensor:
    """Joint loss over a batch of (x_anchor, x_close, x_far, condition) tuples.

    The hinge terms are averaged over the batch; the embedding-norm
    penalty averages over the images appearing in the batch with each
    distinct input object counted once; the mask penalty is added once.
    """
    if not batch:
        raise ContractError("csn_loss: empty batch")
    row_of: dict[int, int] = {}
    stacked: list[np.ndarray] = []

    def row_index(x) -> int:
        key = id(x)
        if key not in row_of:
            row_of[key] = len(stacked)
            stacked.append(x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64))
        return row_of[key]

    a_idx, c_idx, f_idx, conds = [], [], [], []
    for x_a, x_close, x_far, cond in batch:
        if not 0 <= cond < bank.n_conditions:
            raise IndexError(f"condition {cond} out of range for {bank.n_conditions} conditions")
        a_idx.append(row_index(x_a))
        c_idx.append(row_index(x_close))
        f_idx.append(row_index(x_far))
        conds.append(int(cond))

    x = Tensor(np.stack(stacked))
    y = embed(net, x)
    masks_by_row = ad.relu(ad.transpose(bank.beta.value))  # (n_c, d)
    y_a = ad.rows(y, a_idx)
    y_c = ad.rows(y, c_idx)
    y_f = ad.rows(y, f_idx)
    m = ad.rows(masks_by_row, conds)
    d_close = ad.row_norms(ad.mul(ad.sub(y_a, y_c), m))
    d_far = ad.row_norms(ad.mul(ad.sub(y_a, y_f), m))
    loss = ad.mean_all(ad.relu(ad.add_scalar(ad.sub(d_close, d_far), cfg.margin_h)))
    if cfg.lambda1 != 0.0:
        loss = ad.add(loss, ad.scale(embedding_loss(y), cfg.lambda1))
    if cfg.lambda2 != 0.0:
        loss = ad.add(loss, ad.scale(mask_loss(bank), cfg.lambda2))
    return loss


# ---------------------------------------------------------------------------
# Checkpoints: a single JSON file with base64-packed float64 arrays.
# JSON keeps the file self-describing; raw little-endian payloads make the
# round trip bit-exact and the bytes reproducible (no timestamps).
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "csnet-checkpoint-v1"


def _pack(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii"),
    }


def _unpack(obj: dict) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8")
    return raw.reshape(obj["shape"]).astype(np.float64)


def save_checkpoint(
    path: str | Path,
    nets: Sequence[EmbeddingNet],
    bank: MaskBank | None,
    variant: str,
    extra: dict | None = None,
) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "variant": variant,
        "embedding_dim": nets[0].embedding_dim,
        "n_conditions": bank.n_conditions if bank is not None else None,
        "networks": [
            {
                "layer_sizes": net.layer_sizes,
                "params": [{"id": p.id, **_pack(p.data)} for p in net.params()],
            }
            for net in nets
        ],
        "mask_bank": None
        if bank is None
        else {"trainable": bank.trainable, "beta": _pack(bank.beta.data)},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path: str | Path) -> tuple[list[EmbeddingNet], MaskBank | None, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"not a {CHECKPOINT_FORMAT} file: {path}")
    nets = []
    for net_doc in doc["networks"]:
        net = EmbeddingNet(net_doc["layer_sizes"], doc["embedding_dim"], seed=0)
        params = net.params()
        if [p.id for p in params] != [q["id"] for q in net_doc["params"]]:
            raise ContractError(f"parameter list mismatch in checkpoint {path}")
        net.set_state([_unpack(q) for q in net_doc["params"]])
        nets.append(net)
    bank = None
    if doc["mask_bank"] is not None:
        bank = MaskBank(_unpack(doc["mask_bank"]["beta"]), doc["mask_bank"]["trainable"])
    meta = {"variant": doc["variant"], "extra": doc["extra"]}
    return nets, bank, meta
