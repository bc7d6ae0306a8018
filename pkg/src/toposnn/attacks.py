"""Input perturbation attacks and the resulting accuracy drop.

Four kinds: additive Gaussian noise, FGSM, PGD (projected iterated FGSM),
and random per-timestep pixel masking. Perturbed pixels always stay in
[0, 1]; `strength` is sigma for gaussian, epsilon for fgsm/pgd, and the
masked fraction for mask.
"""

import numpy as np

from toposnn import autodiff as ad
from toposnn.autodiff import Tensor
from toposnn.rng import named_rng
from toposnn.snn import no_grad

ATTACK_KINDS = ("gaussian", "fgsm", "pgd", "mask")


def _input_gradient(net, images, labels):
    """d L_task / d images; parameters untouched."""
    x = Tensor(images, requires_grad=True)
    with no_grad(net):
        x.requires_grad = True
        logits, _ = net.forward(x, record=False)
        loss = ad.softmax_cross_entropy(logits, labels)
        loss.backward()
    return x.grad


def _accuracy(net, images, labels, batch_size=50):
    n = images.shape[0]
    correct = 0
    with no_grad(net):
        for i in range(0, n, batch_size):
            logits, _ = net.forward(Tensor(images[i:i + batch_size]),
                                    record=False)
            correct += int((logits.data.argmax(axis=1) ==
                            labels[i:i + batch_size]).sum())
    return correct / n


def perturb(net, images, labels, kind, strength, seed=0, pgd_steps=4):
    """Perturbed inputs for one attack kind.

    Returns either (B,C,H,W) images or, for 'mask', a (T,B,C,H,W) stack
    with an independent random mask at each timestep.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if strength < 0:
        raise ValueError("attack strength must be >= 0")
    if kind == "gaussian":
        if strength == 0:
            return images.copy()
        rng = named_rng(seed, "attack:gaussian")
        return np.clip(images + rng.normal(0.0, strength, images.shape), 0, 1)
    if kind == "fgsm":
        if strength == 0:
            return images.copy()
        g = _input_gradient(net, images, labels)
        return np.clip(images + strength * np.sign(g), 0, 1)
    if kind == "pgd":
        if strength == 0:
            return images.copy()
        step = strength / pgd_steps
        x = images.copy()
        for _ in range(pgd_steps):
            g = _input_gradient(net, x, labels)
            x = x + step * np.sign(g)
            x = np.clip(x, images - strength, images + strength)
            x = np.clip(x, 0, 1)
        return x
    if kind == "mask":
        rng = named_rng(seed, "attack:mask")
        t = net.spec.timesteps
        stack = np.broadcast_to(images, (t,) + images.shape).copy()
        if strength > 0:
            keep = rng.random(stack.shape) >= strength
            stack *= keep
        return stack
    raise ValueError(f"unknown attack kind {kind!r}; "
                     f"choose from {ATTACK_KINDS}")


def attack(net, images, labels, kind, strength, seed=0, pgd_steps=4):
    """Run one attack; returns (perturbed, clean_acc, attacked_acc)."""
    labels = np.asarray(labels, dtype=np.intp)
    perturbed = perturb(net, images, labels, kind, strength, seed, pgd_steps)
    clean = _accuracy(net, images, labels)
    if perturbed.ndim == 5:
        with no_grad(net):
            logits, _ = net.forward(Tensor(perturbed), record=False)
        attacked = float((logits.data.argmax(axis=1) == labels).mean())
    else:
        attacked = _accuracy(net, perturbed, labels)
    return perturbed, clean, attacked
