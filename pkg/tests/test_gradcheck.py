"""Analytic gradients versus central finite differences.

Everything runs in float64, so truncation (O(h^2)) and rounding (O(eps/h))
both sit far below the 1e-4 gate. The losses contain L1 and leaky-ReLU
kinks; a difference quotient straddling one is wrong by construction, so
elements that miss tolerance at the base step are retried at smaller h.
A broken backward pass fails at every h, because the quotient converges to
the true derivative while the analytic value stays put.
The helpers are shared with the slow end-to-end suite, which re-runs them
at a larger sample size.
"""

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from polypforge.classifier import ResNetTileClassifier
from polypforge.common import tiles_to_tensor
from polypforge.cyclegan import CycleGanTranslator, adversarial_loss, identity_loss

REL_TOLERANCE = 1e-4
STEPS = (1e-5, 1e-6, 1e-7)


def sample_param_elements(modules, n, rng):
    """Uniformly sample ``n`` scalar parameter elements across ``modules``."""
    params = [p for m in modules for p in m.parameters() if p.requires_grad]
    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    flat = rng.choice(total, size=min(n, total), replace=False)
    bounds = np.cumsum(sizes)
    elements = []
    for position in flat:
        tensor_index = int(np.searchsorted(bounds, position, side="right"))
        offset = int(position - (bounds[tensor_index] - sizes[tensor_index]))
        elements.append((params[tensor_index], offset))
    return elements


def _difference_quotient(loss_fn, p, offset, h):
    with torch.no_grad():
        original = float(p.view(-1)[offset])
        p.view(-1)[offset] = original + h
        upper = float(loss_fn())
        p.view(-1)[offset] = original - h
        lower = float(loss_fn())
        p.view(-1)[offset] = original
    return (upper - lower) / (2.0 * h)


def gradient_relative_errors(loss_fn, elements, steps=STEPS):
    """Relative error between backward() and the central difference quotient.

    The denominator is floored at 1e-6 so near-zero gradients compare on an
    absolute scale. Each element keeps its best error across ``steps``;
    smaller steps are only evaluated when the current one misses tolerance.
    """
    for p, _ in elements:
        p.grad = None
    loss_fn().backward()
    errors = []
    for p, offset in elements:
        analytic = float(p.grad.view(-1)[offset])
        best = np.inf
        for h in steps:
            difference = _difference_quotient(loss_fn, p, offset, h)
            best = min(best, abs(difference - analytic)
                       / max(abs(difference), abs(analytic), 1e-6))
            if best < REL_TOLERANCE:
                break
        errors.append(best)
    return errors


def classifier_loss_check(n_params, seed=0):
    """Cross-entropy loss of the residual classifier on a fixed batch."""
    rng = np.random.default_rng(seed)
    clf = ResNetTileClassifier(seed=seed).initialize(["a", "b"])
    model = clf.model_.double().eval()
    pixels = rng.integers(0, 256, size=(4, 32, 32, 3), dtype=np.uint8)
    inputs = tiles_to_tensor(pixels).double()
    targets = torch.tensor([0, 1, 0, 1])

    def loss_fn():
        return F.cross_entropy(model(inputs), targets)

    elements = sample_param_elements([model], n_params, rng)
    return gradient_relative_errors(loss_fn, elements)


def generator_loss_check(n_params, seed=0):
    """Combined generator objective: adversarial + cycle + identity terms."""
    rng = np.random.default_rng(seed)
    translator = CycleGanTranslator(
        image_size=8, base_filters=2, residual_blocks=1, disc_filters=2,
        disc_layers=1, lambda_cycle=10.0, lambda_identity=5.0,
        checkpoint_epochs=(), seed=seed).initialize()
    nets = (translator.G_, translator.F_, translator.D_X_, translator.D_Y_)
    for net in nets:
        net.double()
    bx = tiles_to_tensor(rng.integers(0, 256, size=(2, 8, 8, 3), dtype=np.uint8)).double()
    by = tiles_to_tensor(rng.integers(0, 256, size=(2, 8, 8, 3), dtype=np.uint8)).double()

    def loss_fn():
        fake_y = translator.G_(bx)
        fake_x = translator.F_(by)
        adversarial = (adversarial_loss(translator.D_Y_(fake_y), "real")
                       + adversarial_loss(translator.D_X_(fake_x), "real"))
        cycle = (F.l1_loss(translator.F_(fake_y), bx)
                 + F.l1_loss(translator.G_(fake_x), by))
        identity = (identity_loss(by, translator.G_)
                    + identity_loss(bx, translator.F_))
        return adversarial + 10.0 * cycle + 5.0 * identity

    elements = sample_param_elements([translator.G_, translator.F_], n_params, rng)
    return gradient_relative_errors(loss_fn, elements)


class TestHarness:
    def test_quadratic_has_known_gradient(self):
        p = torch.nn.Parameter(torch.tensor([2.0, -3.0, 0.5], dtype=torch.float64))
        errors = gradient_relative_errors(lambda: (p ** 2).sum(), [(p, 0), (p, 1), (p, 2)])
        assert max(errors) < 1e-9

    def test_sampling_covers_all_tensors_without_repeats(self):
        a = torch.nn.Linear(3, 2).double()
        rng = np.random.default_rng(0)
        elements = sample_param_elements([a], 8, rng)
        assert len(elements) == 8
        assert len({(id(p), i) for p, i in elements}) == 8


class TestModelGradients:
    def test_classifier_loss(self):
        errors = classifier_loss_check(n_params=25)
        assert max(errors) < REL_TOLERANCE

    def test_generator_total_loss(self):
        errors = generator_loss_check(n_params=25)
        assert max(errors) < REL_TOLERANCE
