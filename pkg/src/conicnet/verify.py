"""Self-contained property suites behind the `verify` command.

Every theorem-level guarantee of the library is exercised on freshly drawn
random instances: exact quarter-turn equivariance of the conic layer (with
a brute-force second opinion), the rotation-to-shift property of the
transition, shift invariance of the DFT magnitude, the fast-vs-naive DFT
comparison, quarter-turn distribution over multiplication, end-to-end
logit invariance in both precisions, and finite-difference agreement of
every backward pass. Each suite reports its instance count, worst error
and tolerance; the suite seed is printed so failures are replayable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conic import (
    Activation,
    ConicConvLayer,
    conic_backward,
    conic_forward,
    conic_pool_gaps,
)
from .geometry import InterpScheme
from .network import DenseBlock, Model, ModelConfig, build_model, cross_entropy_batch
from .reference import naive_conic_forward, naive_dft2
from .tensors import VERIFY_DTYPE, circular_shift, finite_diff_grad, make_rng, rot90, spawn_rngs
from .transition import (
    TransitionLayer,
    dft2_magnitude,
    dft2_magnitude_with_cache,
    transition_backward,
    transition_forward,
)

KINK_MARGIN = 1e-4  # instances with a pooling/ReLU margin below this are redrawn
SPECTRUM_FLOOR = 1e-3  # gradient checks need all |Z| above this


@dataclass
class SuiteResult:
    name: str
    instances: int
    max_error: float
    tolerance: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.note})" if self.note else ""
        return (
            f"{status}  {self.name}: {self.instances} instances, "
            f"max error {self.max_error:.3e} (tolerance {self.tolerance:.1e}){extra}"
        )


def _random_conic_layer(rng, R, D, d=None, K=None, h=None, activation=None, origin_pool_all=True):
    d = d or int(rng.integers(1, 3))
    K = K or int(rng.integers(1, 3))
    h = h or int(rng.choice([3, 5]))
    activation = activation or Activation(rng.choice(["relu", "identity"]))
    return ConicConvLayer(
        rng.standard_normal((K, h, h, d)).astype(VERIFY_DTYPE),
        rng.standard_normal(K).astype(VERIFY_DTYPE),
        subdivisions=R,
        downsample=D,
        activation=activation,
        origin_pool_all=origin_pool_all,
    )


def equivariance_suite(seed, instances_per_combo=50, perturb_origin=False, tolerance=1e-9):
    """conic_forward(rot90(x, n)) == rot90(conic_forward(x), n) for all n."""
    rng = make_rng(seed)
    worst = 0.0
    count = 0
    for R in (1, 2, 3):
        for D in (1, 2):
            for _ in range(instances_per_combo):
                M = int(rng.choice([7, 9, 11]))
                layer = _random_conic_layer(rng, R, D, origin_pool_all=not perturb_origin)
                a = rng.standard_normal((M, M, layer.depth)).astype(VERIFY_DTYPE)
                base = conic_forward(a, layer)
                for n in range(4):
                    diff = np.abs(conic_forward(rot90(a, n), layer) - rot90(base, n)).max()
                    worst = max(worst, float(diff))
                count += 1
    name = "conic equivariance" + (" (perturbed origin)" if perturb_origin else "")
    return SuiteResult(name, count, worst, tolerance, worst < tolerance)


def conic_oracle_suite(seed, instances_per_combo=2, tolerance=1e-9):
    """Fast masked implementation against the literal per-pixel reference."""
    rng = make_rng(seed)
    worst = 0.0
    count = 0
    for R in (1, 2, 3):
        for D in (1, 2):
            for _ in range(instances_per_combo):
                layer = _random_conic_layer(rng, R, D)
                a = rng.standard_normal((9, 9, layer.depth)).astype(VERIFY_DTYPE)
                diff = np.abs(conic_forward(a, layer) - naive_conic_forward(a, layer)).max()
                worst = max(worst, float(diff))
                count += 1
    return SuiteResult("conic layer vs brute-force reference", count, worst, tolerance, worst < tolerance)


def lemma_suite(seed, instances=50):
    """Quarter-turn remaps distribute over elementwise products, bitwise."""
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(instances):
        shape = (int(rng.integers(1, 6)) * 2 + 1,) * 2 + (int(rng.integers(1, 4)),)
        a = rng.standard_normal(shape)
        b = rng.standard_normal(shape)
        for n in range(4):
            if not np.array_equal(rot90(a * b, n), rot90(a, n) * rot90(b, n)):
                worst = max(worst, float(np.abs(rot90(a * b, n) - rot90(a, n) * rot90(b, n)).max()))
    return SuiteResult("quarter-turn product lemma (exact)", instances, worst, 0.0, worst == 0.0)


def transition_shift_suite(seed, instances=50, tolerance=1e-10):
    """Rotating the transition input circularly shifts the grid by +R."""
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(instances):
        R = int(rng.integers(1, 4))
        K = int(rng.integers(1, 4))
        M = int(rng.choice([5, 7]))
        d = int(rng.integers(1, 3))
        layer = TransitionLayer(rng.standard_normal((K, M, M, d)).astype(VERIFY_DTYPE), R)
        a = rng.standard_normal((M, M, d)).astype(VERIFY_DTYPE)
        z = transition_forward(a, layer)
        for n in range(4):
            zr = transition_forward(rot90(a, n), layer)
            diff = np.abs(zr - circular_shift(z, axis=1, amount=n * R)).max()
            worst = max(worst, float(diff))
    return SuiteResult("transition rotation-to-shift", instances, worst, tolerance, worst < tolerance)


def dft_oracle_suite(seed, instances=50, tolerance=1e-10):
    """Fast DFT path against the literal double sum, plus shift invariance
    of the magnitude and the Parseval scaling check."""
    rng = make_rng(seed)
    worst = 0.0
    for i in range(instances):
        K = int(rng.choice([1, 2, 4, 8]))
        L = int(rng.choice([2, 4, 8, 16]))
        z = rng.standard_normal((K, L))
        mag = dft2_magnitude(z)
        worst = max(worst, float(np.abs(mag - np.abs(naive_dft2(z))).max()))
        for s in range(L):
            worst = max(worst, float(np.abs(dft2_magnitude(circular_shift(z, 1, s)) - mag).max()))
        for s in range(K):
            worst = max(worst, float(np.abs(dft2_magnitude(circular_shift(z, 0, s)) - mag).max()))
        parseval = abs((mag**2).sum() - K * L * (z**2).sum()) / max((mag**2).sum(), 1.0)
        worst = max(worst, float(parseval))
    return SuiteResult("DFT fast path vs reference + shift invariance", instances, worst, tolerance, worst < tolerance)


def _tiny_model_config(precision, rng=None) -> ModelConfig:
    conic_R = 1 if rng is None else int(rng.integers(1, 3))
    trans_R = 1 if rng is None else int(rng.integers(1, 3))
    fc = [4] if rng is None else [int(rng.integers(3, 7))]
    return ModelConfig(
        arch="ricnn",
        input_size=9,
        input_depth=1,
        classes=3,
        conic=[{"filters": 2, "size": 3, "subdivisions": conic_R, "downsample": 2, "activation": "relu"}],
        transition_filters=3,
        transition_subdivisions=trans_R,
        fc=fc,
        precision=precision,
    )


def invariance_suite(seed, instances=20, precision="f64", tolerance=1e-9):
    """End-to-end logit invariance under quarter-turn input rotations,
    on random models with randomized subdivision counts."""
    rng = make_rng(seed)
    worst = 0.0
    for i in range(instances):
        config = _tiny_model_config(precision, rng)
        model = build_model(config, seed=int(rng.integers(2**31)))
        x = rng.standard_normal((9, 9, 1)).astype(config.dtype)
        logits = model.forward(x)
        scale = max(float(np.abs(logits).max()), 1e-12)
        for n in range(1, 4):
            diff = np.abs(model.forward(rot90(x, n)) - logits).max()
            worst = max(worst, float(diff) / scale)
    return SuiteResult(
        f"end-to-end logit invariance ({precision})", instances, worst, tolerance, worst < tolerance
    )


def _relative_error(got, want, floor=1e-3):
    """Elementwise relative error with an absolute floor.

    Central differences on an O(10) objective at h=1e-6 carry ~1e-9 of
    cancellation noise; the floor keeps that from dominating elements whose
    true gradient is tiny, while still holding them to an absolute bound of
    tol * floor.
    """
    denom = np.maximum(np.maximum(np.abs(got), np.abs(want)), floor)
    return float((np.abs(got - want) / denom).max())


def gradient_conic_suite(seed, instances=50, tolerance=1e-5, h=1e-6):
    rng = make_rng(seed)
    worst = 0.0
    done = 0
    redraws = 0
    while done < instances:
        R = int(rng.integers(1, 3))
        D = int(rng.choice([1, 2]))
        layer = _random_conic_layer(rng, R, D, d=2, K=2, h=3, activation=Activation.RELU)
        a = rng.standard_normal((7, 7, 2)).astype(VERIFY_DTYPE)
        out, cache = conic_forward(a, layer, want_cache=True)
        if conic_pool_gaps(a, layer) < KINK_MARGIN or np.abs(cache.pre).min() < KINK_MARGIN:
            redraws += 1
            if redraws > 20 * instances:
                raise RuntimeError("too many kink redraws; data pathology")
            continue
        g = rng.standard_normal(out.shape)
        gi, gf, gb = conic_backward(g, cache)

        def with_filters(w):
            l2 = ConicConvLayer(w, layer.biases, subdivisions=R, downsample=D,
                                activation=layer.activation)
            return float((conic_forward(a, l2) * g).sum())

        worst = max(worst, _relative_error(finite_diff_grad(lambda x: float((conic_forward(x, layer) * g).sum()), a, h), gi))
        worst = max(worst, _relative_error(finite_diff_grad(with_filters, layer.filters, h), gf))
        done += 1
    note = f"{redraws} kink redraws" if redraws else ""
    return SuiteResult("conic backward vs finite differences", instances, worst, tolerance, worst < tolerance, note)


def gradient_transition_suite(seed, instances=50, tolerance=1e-5, h=1e-6):
    rng = make_rng(seed)
    worst = 0.0
    done = 0
    redraws = 0
    while done < instances:
        R = int(rng.integers(1, 3))
        K = int(rng.integers(1, 3))
        layer = TransitionLayer(rng.standard_normal((K, 5, 5, 2)).astype(VERIFY_DTYPE), R)
        a = rng.standard_normal((5, 5, 2)).astype(VERIFY_DTYPE)
        z, tcache = transition_forward(a, layer, want_cache=True)
        mag, mcache = dft2_magnitude_with_cache(z)
        if np.abs(mcache.spectrum).min() < SPECTRUM_FLOOR:
            redraws += 1
            continue
        g = rng.standard_normal(mag.shape)
        ga, gw = transition_backward(g, tcache, mcache)

        def f_a(x):
            return float((dft2_magnitude(transition_forward(x, layer)) * g).sum())

        def f_w(w):
            return float((dft2_magnitude(transition_forward(a, TransitionLayer(w, R))) * g).sum())

        worst = max(worst, _relative_error(finite_diff_grad(f_a, a, h), ga))
        worst = max(worst, _relative_error(finite_diff_grad(f_w, layer.weights, h), gw))
        done += 1
    note = f"{redraws} near-zero-bin redraws" if redraws else ""
    return SuiteResult("transition+DFT backward vs finite differences", instances, worst, tolerance, worst < tolerance, note)


def gradient_dense_suite(seed, instances=50, tolerance=1e-5, h=1e-6):
    rng = make_rng(seed)
    worst = 0.0
    done = 0
    while done < instances:
        n_in = int(rng.integers(2, 8))
        n_out = int(rng.integers(2, 8))
        act = Activation(rng.choice(["relu", "identity"]))
        block = DenseBlock(rng.standard_normal((n_out, n_in)), rng.standard_normal(n_out), act)
        x = rng.standard_normal(n_in)
        out, cache = block.forward(x)
        if act is Activation.RELU and np.abs(cache[1]).min() < KINK_MARGIN:
            continue
        g = rng.standard_normal(out.shape)
        gi, pgrads = block.backward(g, cache)

        def f_x(v):
            return float((block.forward(v)[0] * g).sum())

        def f_w(w):
            return float((DenseBlock(w, block.biases, act).forward(x)[0] * g).sum())

        worst = max(worst, _relative_error(finite_diff_grad(f_x, x, h), gi))
        worst = max(worst, _relative_error(finite_diff_grad(f_w, block.weights, h), pgrads["weights"]))
        done += 1
    return SuiteResult("dense backward vs finite differences", instances, worst, tolerance, worst < tolerance)


def _model_kink_margin(model: Model, x) -> float:
    margin = np.inf
    out = x
    for block in model.blocks:
        if block.kind == "conic":
            margin = min(margin, conic_pool_gaps(out, block.layer))
        out, cache = block.forward(out)
        if block.kind == "conic":
            margin = min(margin, float(np.abs(cache.pre).min()))
        elif block.kind == "transition":
            spectrum_min = float(np.abs(cache[1].spectrum).min())
            if spectrum_min < SPECTRUM_FLOOR:
                return 0.0
        elif block.kind == "dense" and block.activation is Activation.RELU:
            margin = min(margin, float(np.abs(cache[1]).min()))
    return margin


def gradient_model_suite(seed, instances=50, tolerance=1e-5, h=1e-6):
    """Whole-network gradient (input + every parameter) against the oracle,
    through softmax cross-entropy."""
    rng = make_rng(seed)
    worst = 0.0
    done = 0
    redraws = 0
    while done < instances:
        config = _tiny_model_config("f64")
        model = build_model(config, seed=int(rng.integers(2**31)))
        # random non-degenerate parameters, not the small init
        params = {k: rng.standard_normal(p.shape) * 0.5 for k, p in model.params().items()}
        model.set_params(params)
        x = rng.standard_normal((1, 9, 9, 1))
        label = np.array([int(rng.integers(config.classes))])
        if _model_kink_margin(model, x) < KINK_MARGIN:
            redraws += 1
            if redraws > 50 * instances:
                raise RuntimeError("too many kink redraws; data pathology")
            continue

        logits, caches = model.forward_train(x)
        _, grad_logits = cross_entropy_batch(logits, label)
        grad_x, grads = model.backward(grad_logits, caches)

        def loss_with(key, value):
            saved = model.params()[key]
            model.set_params({key: value})
            out = cross_entropy_batch(model.forward(x), label)[0]
            model.set_params({key: saved})
            return out

        for key in sorted(model.params()):
            fd = finite_diff_grad(lambda v, k=key: loss_with(k, v), model.params()[key], h)
            worst = max(worst, _relative_error(fd, grads[key]))
        fd_x = finite_diff_grad(lambda v: cross_entropy_batch(model.forward(v), label)[0], x, h)
        worst = max(worst, _relative_error(fd_x, grad_x))
        done += 1
    note = f"{redraws} kink redraws" if redraws else ""
    return SuiteResult("full-model backward vs finite differences", instances, worst, tolerance, worst < tolerance, note)


def rng_suite(seed, draws=10**6):
    a = make_rng(seed).random(draws)
    b = make_rng(seed).random(draws)
    equal = np.array_equal(a, b)
    return SuiteResult("seeded generator reproducibility", 2, 0.0 if equal else 1.0, 0.0, equal)


def run_all(seed: int, perturb_origin: bool = False, quick: bool = False) -> list[SuiteResult]:
    """Every suite with its own child seed. `quick` shrinks instance counts
    for smoke testing; the acceptance gate runs the full counts."""
    n = 5 if quick else 50
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(12)]
    results = [
        equivariance_suite(seeds[0], max(2, n), perturb_origin=perturb_origin),
        conic_oracle_suite(seeds[1], 1 if quick else 2),
        lemma_suite(seeds[2], n),
        transition_shift_suite(seeds[3], n),
        dft_oracle_suite(seeds[4], n),
        invariance_suite(seeds[5], 4 if quick else 20, "f64", 1e-9),
        invariance_suite(seeds[6], 4 if quick else 20, "f32", 1e-4),
        gradient_conic_suite(seeds[7], n),
        gradient_transition_suite(seeds[8], n),
        gradient_dense_suite(seeds[9], n),
        gradient_model_suite(seeds[10], 5 if quick else 50),
        rng_suite(seeds[11]),
    ]
    return results
