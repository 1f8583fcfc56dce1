"""Built-in verification battery: gradient checks against central finite
differences for every registered operation and for the full joint loss,
identity checks against straight-line recomputations, and triplet oracle
audits. The CLI ``verify`` command runs this battery and fails on any check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import data as data_mod
from .autodiff import Param, Tensor, grad_check
from .model import EmbeddingNet, LossConfig, MaskBank, csn_loss, triplet_loss_standard

OP_TOLERANCE = 1e-6
LOSS_TOLERANCE = 1e-4
IDENTITY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<38s} max_err={self.value:.3e}  (< {self.threshold:.0e})"


def _check(name: str, value: float, threshold: float) -> CheckResult:
    return CheckResult(name, float(value), threshold, bool(value < threshold))


# --- per-operation gradient harnesses --------------------------------------
# Inputs are sampled away from the non-differentiable points (ReLU and the
# hinge at 0, the norm at the zero vector) so central differences are valid.


def _away_from_zero(rng, shape, low=0.3, high=1.5):
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _op_cases(rng: np.random.Generator) -> dict[str, Callable[[], tuple[Callable, list[Param]]]]:
    def matmul():
        a = Param(rng.normal(size=(3, 4)), "a")
        b = Param(rng.normal(size=(4, 2)), "b")
        return lambda: ad.sum_all(ad.mul(ad.matmul(a.value, b.value), ad.matmul(a.value, b.value))), [a, b]

    def transpose():
        a = Param(rng.normal(size=(3, 4)), "a")
        return lambda: ad.sum_all(ad.mul(ad.transpose(a.value), ad.transpose(a.value))), [a]

    def add():
        a = Param(rng.normal(size=(3, 4)), "a")
        b = Param(rng.normal(size=4), "b")
        return lambda: ad.sum_all(ad.mul(ad.add(a.value, b.value), ad.add(a.value, b.value))), [a, b]

    def sub():
        a = Param(rng.normal(size=(3, 4)), "a")
        b = Param(rng.normal(size=4), "b")
        return lambda: ad.sum_all(ad.mul(ad.sub(a.value, b.value), ad.sub(a.value, b.value))), [a, b]

    def mul():
        a = Param(rng.normal(size=(4, 3)), "a")
        b = Param(rng.normal(size=3), "b")
        return lambda: ad.sum_all(ad.mul(ad.mul(a.value, b.value), a.value)), [a, b]

    def scale():
        a = Param(rng.normal(size=(2, 3)), "a")
        return lambda: ad.sum_all(ad.mul(ad.scale(a.value, 1.7), ad.scale(a.value, -0.3))), [a]

    def add_scalar():
        a = Param(rng.normal(size=5), "a")
        return lambda: ad.sum_all(ad.mul(ad.add_scalar(a.value, 0.9), ad.add_scalar(a.value, 0.9))), [a]

    def relu():
        a = Param(_away_from_zero(rng, (3, 4)), "a")
        return lambda: ad.sum_all(ad.mul(ad.relu(a.value), ad.relu(a.value))), [a]

    def hinge():
        s = Param(rng.uniform(0.4, 1.2, size=()), "s")
        return lambda: ad.hinge(s.value), [s]

    def euclidean_norm():
        a = Param(_away_from_zero(rng, 6), "a")
        return lambda: ad.euclidean_norm(a.value), [a]

    def row_norms():
        a = Param(_away_from_zero(rng, (4, 3)), "a")
        return lambda: ad.sum_all(ad.mul(ad.row_norms(a.value), ad.row_norms(a.value))), [a]

    def sum_all():
        a = Param(rng.normal(size=(3, 3)), "a")
        return lambda: ad.sum_all(ad.mul(a.value, a.value)), [a]

    def mean_all():
        a = Param(rng.normal(size=(3, 3)), "a")
        return lambda: ad.mean_all(ad.mul(a.value, a.value)), [a]

    def rows():
        a = Param(rng.normal(size=(5, 3)), "a")
        idx = [0, 2, 2, 4]
        return lambda: ad.sum_all(ad.mul(ad.rows(a.value, idx), ad.rows(a.value, idx))), [a]

    def col():
        a = Param(rng.normal(size=(4, 3)), "a")
        return lambda: ad.sum_all(ad.mul(ad.col(a.value, 1), ad.col(a.value, 1))), [a]

    def logsumexp_rows():
        a = Param(rng.normal(size=(3, 4)), "a")
        return lambda: ad.sum_all(ad.mul(ad.logsumexp_rows(a.value), ad.logsumexp_rows(a.value))), [a]

    def pick():
        a = Param(rng.normal(size=(4, 3)), "a")
        idx = [0, 2, 1, 1]
        return lambda: ad.sum_all(ad.mul(ad.pick(a.value, idx), ad.pick(a.value, idx))), [a]

    return {fn.__name__: fn for fn in (
        matmul, transpose, add, sub, mul, scale, add_scalar, relu, hinge,
        euclidean_norm, row_norms, sum_all, mean_all, rows, col, logsumexp_rows, pick,
    )}


def _tiny_problem(seed: int, trainable_masks: bool):
    """A small network, mask bank and kink-free batch for full-loss checks."""
    rng = np.random.default_rng(seed)
    net = EmbeddingNet([6, 8, 5], 6, seed=seed)
    beta = rng.normal(0.5, 0.6, size=(6, 2))
    bank = MaskBank(beta, trainable=trainable_masks)
    xs = [Tensor(rng.normal(size=6)) for _ in range(7)]
    batch = [
        (xs[0], xs[1], xs[2], 0),
        (xs[3], xs[4], xs[0], 1),
        (xs[5], xs[6], xs[3], 0),
    ]
    cfg = LossConfig(margin_h=0.37, lambda1=5e-3, lambda2=5e-4)
    return net, bank, batch, cfg


def reference_csn_loss(net: EmbeddingNet, bank: MaskBank, batch, cfg: LossConfig) -> float:
    """Straight-line numpy recomputation of the joint loss, term by term,
    independent of the autodiff graph."""
    seen: dict[int, np.ndarray] = {}
    hinge_total = 0.0
    for x_a, x_c, x_f, cond in batch:
        ys = []
        for x in (x_a, x_c, x_f):
            arr = x.data if isinstance(x, Tensor) else np.asarray(x, float)
            h = arr[None, :]
            for w, b in net.hidden:
                h = np.maximum(h @ w.data + b.data, 0.0)
            y = (h @ net.projection.data.T)[0]
            seen.setdefault(id(x), y)
            ys.append(y)
        m = np.maximum(bank.beta.data[:, cond], 0.0)
        d_close = np.sqrt(np.sum(((ys[0] - ys[1]) * m) ** 2))
        d_far = np.sqrt(np.sum(((ys[0] - ys[2]) * m) ** 2))
        hinge_total += max(0.0, d_close - d_far + cfg.margin_h)
    l_t = hinge_total / len(batch)
    uniq = list(seen.values())
    l_w = sum(float(y @ y) for y in uniq) / len(uniq)
    l_m = float(np.maximum(bank.beta.data, 0.0).sum())
    return l_t + cfg.lambda1 * l_w + cfg.lambda2 * l_m


def _loss_margins_ok(net, bank, batch, cfg, slack=0.02) -> bool:
    """True when no hinge in the batch sits within ``slack`` of its kink."""
    for x_a, x_c, x_f, cond in batch:
        ys = []
        for x in (x_a, x_c, x_f):
            h = x.data[None, :]
            for w, b in net.hidden:
                h = np.maximum(h @ w.data + b.data, 0.0)
            ys.append((h @ net.projection.data.T)[0])
        m = np.maximum(bank.beta.data[:, cond], 0.0)
        s = np.sqrt(np.sum(((ys[0] - ys[1]) * m) ** 2)) - np.sqrt(np.sum(((ys[0] - ys[2]) * m) ** 2))
        if abs(s + cfg.margin_h) < slack:
            return False
    return True


def run_battery(perturb_gradients: float = 0.0, seed: int = 2024) -> list[CheckResult]:
    """Run every verification check; ``perturb_gradients`` biases the matmul
    backward rule to demonstrate the harness actually detects wrong gradients."""
    results: list[CheckResult] = []
    rng = np.random.default_rng(seed)
    ad.set_gradient_perturbation(perturb_gradients)
    try:
        cases = _op_cases(rng)
        missing = sorted(set(ad.OPS) - set(cases))
        if missing:
            raise RuntimeError(f"ops without a gradient-check case: {missing}")
        for name in sorted(cases):
            fn, params = cases[name]()
            results.append(_check(f"grad:{name}", grad_check(fn, params, eps=1e-6), OP_TOLERANCE))

        # Analytic sanity: f(w) = |w|^2 has gradient 2w and exact central differences.
        w = Param(rng.normal(size=5), "w")
        results.append(
            _check("grad:squared_norm", grad_check(lambda: ad.sum_all(ad.mul(w.value, w.value)), [w], eps=1e-5), 1e-9)
        )
        c = Param(rng.normal(size=4), "c")
        results.append(
            _check("grad:constant_fn", grad_check(lambda: ad.scale(ad.sum_all(ad.sub(c.value, c.value)), 0.0), [c], eps=1e-5), 1e-12)
        )

        for label, trainable in (("fixed_masks", False), ("learned_masks", True)):
            for attempt in range(8):
                net, bank, batch, cfg = _tiny_problem(seed + 17 * attempt, trainable)
                if _loss_margins_ok(net, bank, batch, cfg):
                    break
            params = net.params() + ([bank.beta] if trainable else [])
            err = grad_check(lambda: csn_loss(net, bank, batch, cfg), params, eps=1e-6)
            results.append(_check(f"grad:csn_loss_{label}", err, LOSS_TOLERANCE))

            got = csn_loss(net, bank, batch, cfg).item()
            want = reference_csn_loss(net, bank, batch, cfg)
            results.append(_check(f"oracle:csn_loss_{label}", abs(got - want), 1e-10))
    finally:
        ad.set_gradient_perturbation(0.0)

    # Mask-reduction identity: all-ones masks and no regularizers reduce the
    # joint loss to the plain pooled hinge loss.
    worst = 0.0
    net, _, _, _ = _tiny_problem(seed, False)
    ones = MaskBank(np.ones((6, 2)), trainable=False)
    plain = LossConfig(0.3, 0.0, 0.0)
    for _ in range(50):
        xs = [Tensor(rng.normal(size=6)) for _ in range(6)]
        batch = [
            (xs[0], xs[1], xs[2], int(rng.integers(2))),
            (xs[3], xs[4], xs[5], int(rng.integers(2))),
        ]
        joint = csn_loss(net, ones, batch, plain).item()
        y = [net.forward_arrays(x.data[None, :])[0] for x in xs]
        manual = 0.0
        for x_a, x_c, x_f, _cond in batch:
            ya, yc, yf = (Tensor(y[xs.index(t)]) for t in (x_a, x_c, x_f))
            manual += triplet_loss_standard(ya, yc, yf, plain.margin_h).item()
        worst = max(worst, abs(joint - manual / len(batch)))
    results.append(_check("identity:mask_reduction", worst, IDENTITY_TOLERANCE))

    # Oracle audit on a freshly generated dataset.
    ds = data_mod.generate_shapes(None, n=64, image_side=16, noise_std=0.01, seed=5)
    ds = data_mod.split(ds, (0.70, 0.10, 0.20), seed=5)
    conds = ["shape", "color", "size", "size_value"]
    tr, va, te = data_mod.build_benchmark(ds, conds, 60, 20, 20, seed=5)
    violations = (
        data_mod.audit_triplets(ds, tr, conds, "train")
        + data_mod.audit_triplets(ds, va, conds, "val")
        + data_mod.audit_triplets(ds, te, conds, "test")
    )
    results.append(_check("audit:triplet_oracle", float(len(violations)), 1.0))
    return results
