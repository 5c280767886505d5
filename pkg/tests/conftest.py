import numpy as np
import pytest

from diclflow import autodiff as ad


def central_diff(build, params, rng, probes=6, step=1e-6):
    """Worst relative error between analytic and finite-difference gradients.

    build() must construct a fresh scalar Var from the current parameter
    values; params are the Vars to probe (their .grad is reset here).
    """
    for p in params:
        p.grad[...] = 0.0
    out = build()
    ad.backward(out)
    grads = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.value.ravel()
        idx = rng.choice(flat.size, size=min(probes, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            hi = build().value
            flat[i] = orig - step
            lo = build().value
            flat[i] = orig
            fd = (hi - lo) / (2 * step)
            an = g.ravel()[i]
            worst = max(worst, abs(fd - an) / max(1e-8, abs(fd), abs(an)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)
