"""Triplet-prediction error, mask statistics, budget sweeps, and probes.

Evaluation is read-only over models and data. A triplet counts as an
error when the anchor-to-close distance is greater than or equal to the
anchor-to-far distance in the condition's subspace; ties count as
errors so results are never inflated by degenerate embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Tensor
from .data import SPLIT_TAGS, SplitDataset, Triplet, sample_triplets
from .errors import CapabilityError, ConfigError, ContractError, RoutingError
from .model import EmbeddingNet, MaskBank


@dataclass(frozen=True)
class EvalReport:
    overall_error: float
    per_condition_error: dict[int, float]
    per_condition_count: dict[int, int]
    n_triplets: int

    def to_dict(self) -> dict:
        return {
            "overall_error": self.overall_error,
            "per_condition_error": {str(k): v for k, v in sorted(self.per_condition_error.items())},
            "per_condition_count": {str(k): v for k, v in sorted(self.per_condition_count.items())},
            "n_triplets": self.n_triplets,
        }


@dataclass(frozen=True)
class MaskReport:
    threshold: float
    active_counts: dict[int, int]
    sparsity: dict[int, float]
    l1_mass: dict[int, float]
    overlap: dict[tuple[int, int], int]
    matrix: np.ndarray  # rectified (d, n_c)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "active_counts": {str(k): v for k, v in sorted(self.active_counts.items())},
            "sparsity": {str(k): v for k, v in sorted(self.sparsity.items())},
            "l1_mass": {str(k): v for k, v in sorted(self.l1_mass.items())},
            "overlap": {f"{a},{b}": v for (a, b), v in sorted(self.overlap.items())},
            "matrix": self.matrix.tolist(),
        }


def embed_rows(net: EmbeddingNet, ds: SplitDataset, indices: np.ndarray) -> np.ndarray:
    return net.forward_arrays(ds.features[indices])


def triplet_error(
    model: EmbeddingNet | Sequence[EmbeddingNet],
    masks: MaskBank | None,
    triplets: Sequence[Triplet],
    ds: SplitDataset,
) -> EvalReport:
    """Fraction of triplets whose masked-distance ordering contradicts the oracle.

    ``model`` is either one embedding network (standard and CSN
    variants) or a sequence of per-condition specialists. Masks must be
    supplied exactly for the CSN variants; specialists and the standard
    variant evaluate with plain Euclidean distance.
    """
    if len(triplets) == 0:
        raise ContractError("triplet_error: empty triplet list")
    specialists = isinstance(model, (list, tuple))
    if specialists and masks is not None:
        raise CapabilityError("specialist evaluation does not use masks")

    by_cond: dict[int, list[Triplet]] = {}
    for t in triplets:
        by_cond.setdefault(t.condition, []).append(t)

    errors: dict[int, int] = {}
    counts: dict[int, int] = {}
    cache: dict[int, tuple[np.ndarray, dict[int, int]]] = {}

    def embedding_for(c: int, needed: np.ndarray) -> tuple[np.ndarray, dict[int, int]]:
        key = c if specialists else -1
        if key not in cache:
            if specialists:
                if c >= len(model):
                    raise RoutingError(f"condition {c} has no specialist network")
                net = model[c]
                idx = needed
            else:
                net = model
                idx = np.unique(np.array([(t.anchor, t.close, t.far) for t in triplets]).ravel())
            cache[key] = (embed_rows(net, ds, idx), {int(i): r for r, i in enumerate(idx)})
        return cache[key]

    for c in sorted(by_cond):
        ts = by_cond[c]
        needed = np.unique(np.array([(t.anchor, t.close, t.far) for t in ts]).ravel())
        y, row_of = embedding_for(c, needed)
        a = np.array([row_of[t.anchor] for t in ts])
        cl = np.array([row_of[t.close] for t in ts])
        fa = np.array([row_of[t.far] for t in ts])
        if masks is not None:
            if c >= masks.n_conditions:
                raise RoutingError(f"condition {c} has no mask column")
            m = masks.rectified()[:, c]
        else:
            m = 1.0
        dc = (((y[a] - y[cl]) * m) ** 2).sum(axis=1)
        df = (((y[a] - y[fa]) * m) ** 2).sum(axis=1)
        errors[c] = int(np.count_nonzero(dc >= df))
        counts[c] = len(ts)

    total = sum(counts.values())
    return EvalReport(
        overall_error=sum(errors.values()) / total,
        per_condition_error={c: errors[c] / counts[c] for c in counts},
        per_condition_count=dict(counts),
        n_triplets=total,
    )


def mask_stats(bank: MaskBank, threshold: float = 1e-3) -> MaskReport:
    """Active-dimension counts, sparsity, L1 mass, and pairwise overlaps."""
    if threshold < 0:
        raise ContractError(f"threshold must be >= 0, got {threshold}")
    rect = bank.rectified()
    d, n_c = rect.shape
    active = rect > threshold
    overlap = {}
    for i in range(n_c):
        for j in range(i + 1, n_c):
            overlap[(i, j)] = int(np.count_nonzero(active[:, i] & active[:, j]))
    return MaskReport(
        threshold=threshold,
        active_counts={c: int(active[:, c].sum()) for c in range(n_c)},
        sparsity={c: 1.0 - float(active[:, c].sum()) / d for c in range(n_c)},
        l1_mass={c: float(rect[:, c].sum()) for c in range(n_c)},
        overlap=overlap,
        matrix=rect,
    )


@dataclass(frozen=True)
class SweepRow:
    variant: str
    budget: int
    error: float
    seed: int


def budget_sweep(
    cfg_template,
    ds: SplitDataset,
    conditions: Sequence[str],
    budgets: Sequence[int],
    variants: Sequence[str],
    k_val: int,
    k_test: int,
    seed: int,
) -> list[SweepRow]:
    """Train every (variant, budget) cell on its own derived seed and evaluate
    all cells on one shared test triplet set."""
    from . import train as train_mod  # deferred: train depends on this module

    if list(budgets) != sorted(budgets) or len(budgets) == 0:
        raise ConfigError(f"budgets must be ascending and nonempty, got {budgets}")

    def derived(*parts: int) -> int:
        return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])

    val_triplets: list[Triplet] = []
    test_triplets: list[Triplet] = []
    for c_i, name in enumerate(conditions):
        val_triplets.extend(
            sample_triplets(ds, name, "val", k_val, derived(seed, 1, c_i), condition_index=c_i)
        )
        test_triplets.extend(
            sample_triplets(ds, name, "test", k_test, derived(seed, 2, c_i), condition_index=c_i)
        )

    rows = []
    for v_i, variant in enumerate(variants):
        for b_i, budget in enumerate(budgets):
            cell_seed = derived(seed, 3, v_i, b_i)
            train_triplets: list[Triplet] = []
            for c_i, name in enumerate(conditions):
                train_triplets.extend(
                    sample_triplets(
                        ds, name, "train", budget, derived(cell_seed, c_i), condition_index=c_i
                    )
                )
            cfg = replace(cfg_template, variant=variant, seed=cell_seed)
            result = train_mod.train(cfg, ds, train_triplets, val_triplets, conditions)
            report = triplet_error(*result.eval_model(), test_triplets, ds)
            rows.append(SweepRow(variant, int(budget), report.overall_error, cell_seed))
    return rows


def linear_probe(
    model: EmbeddingNet,
    ds: SplitDataset,
    probe_attribute: str,
    trained_conditions: Sequence[str],
    hidden_size: int = 0,
    steps: int = 400,
    alpha: float = 0.05,
    seed: int = 0,
) -> float:
    """Top-1 test accuracy of a softmax head trained on frozen embeddings.

    The probe attribute must not have served as a triplet condition.
    Embeddings are standardized with train-split statistics so variants
    with different embedding scales are compared fairly. ``hidden_size``
    > 0 inserts one ReLU layer before the classifier.
    """
    if probe_attribute in trained_conditions:
        raise ContractError(f"probe attribute {probe_attribute!r} was a training condition")
    spec = ds.attribute(probe_attribute)
    if spec.kind != "categorical":
        raise ConfigError(f"probe attribute must be categorical, got {spec.kind}")
    if isinstance(model, (list, tuple)):
        raise CapabilityError("linear_probe expects a single embedding network")

    idx_train = ds.split_indices("train")
    idx_test = ds.split_indices("test")
    y_train = embed_rows(model, ds, idx_train)
    y_test = embed_rows(model, ds, idx_test)
    mu = y_train.mean(axis=0)
    sd = y_train.std(axis=0)
    sd[sd == 0.0] = 1.0
    y_train = (y_train - mu) / sd
    y_test = (y_test - mu) / sd
    lab_train = ds.labels[probe_attribute][idx_train].astype(np.intp)
    lab_test = ds.labels[probe_attribute][idx_test].astype(np.intp)
    n_classes = spec.cardinality

    from .train import AdamState, OptimizerConfig, adam_step  # deferred, see budget_sweep

    rng = np.random.default_rng(seed)
    d = y_train.shape[1]
    params: list[Param]
    if hidden_size > 0:
        w1 = Param(rng.standard_normal((d, hidden_size)) * np.sqrt(2.0 / d), "probe.w1")
        b1 = Param(np.zeros(hidden_size), "probe.b1")
        w2 = Param(np.zeros((hidden_size, n_classes)), "probe.w2")
        b2 = Param(np.zeros(n_classes), "probe.b2")
        params = [w1, b1, w2, b2]
    else:
        w2 = Param(np.zeros((d, n_classes)), "probe.w")
        b2 = Param(np.zeros(n_classes), "probe.b")
        params = [w2, b2]

    x_t = Tensor(y_train)
    ocfg = OptimizerConfig(alpha=alpha, beta1=0.1, beta2=0.001, literal_betas=False)
    state = AdamState(params)

    def logits_of(x: Tensor) -> Tensor:
        h = x
        if hidden_size > 0:
            h = ad.relu(ad.add(ad.matmul(h, w1.value), b1.value))
        return ad.add(ad.matmul(h, w2.value), b2.value)

    for _ in range(steps):
        ad.zero_grads(params)
        logits = logits_of(x_t)
        loss = ad.mean_all(ad.sub(ad.logsumexp_rows(logits), ad.pick(logits, lab_train)))
        ad.backward(loss)
        adam_step(params, state, ocfg)

    test_logits = logits_of(Tensor(y_test)).data
    pred = np.argmax(test_logits, axis=1)
    return float(np.mean(pred == lab_test))


def export_embeddings(
    model: EmbeddingNet,
    masks: MaskBank | None,
    ds: SplitDataset,
    condition: int | None,
    path: str | Path,
    threshold: float = 1e-3,
) -> None:
    """Write one row per sample: index, split tag, labels, then either the
    full embedding or the condition's masked subspace vector (dimensions at
    or below the mask threshold are written as exact zeros)."""
    if isinstance(model, (list, tuple)):
        raise CapabilityError("export_embeddings expects a single embedding network")
    if masks is not None and condition is None:
        raise ContractError("a condition is required when masks are supplied")
    if masks is not None and not 0 <= condition < masks.n_conditions:
        raise RoutingError(f"condition {condition} has no mask column")

    y = model.forward_arrays(ds.features)
    if masks is not None:
        m = masks.rectified()[:, condition].copy()
        m[m <= threshold] = 0.0
        y = y * m
    names = [a.name for a in ds.attributes]
    dim = y.shape[1]
    with open(path, "w") as fh:
        header = ["index", "split", *names, *[f"e{k}" for k in range(dim)]]
        fh.write("\t".join(header) + "\n")
        for i in range(ds.n_samples):
            tag = SPLIT_TAGS[int(ds.split[i])] if ds.split is not None else "unsplit"
            labels = [_format_label(ds, name, i) for name in names]
            coords = [f"{v:.17g}" for v in y[i]]
            fh.write("\t".join([str(i), tag, *labels, *coords]) + "\n")


def _format_label(ds: SplitDataset, name: str, i: int) -> str:
    v = ds.labels[name][i]
    if ds.attribute(name).kind == "categorical":
        return str(int(v))
    return f"{float(v):.17g}"


def load_exported_embeddings(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read back an export file; returns (header, embedding matrix)."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split("\t")
    first_dim = next(i for i, h in enumerate(header) if h == "e0")
    mat = np.array([[float(x) for x in line.split("\t")[first_dim:]] for line in lines[1:]])
    return header, mat
