"""Finite-difference harness for whole blocks, shared by several test modules."""
import numpy as np

from res2lab.autodiff import grad_check, ops
from res2lab.res2net import Bound, block_forward, init_block_params, is_buffer


def block_grad_check(cfg, seed=0, batch=2, size=5, training=True, threshold=1e-4, **kw):
    """Grad-check every trainable tensor of one block plus its input.

    BN affine terms and FC biases are moved off their init values so no
    gradient is trivially zero; the loss is a fixed random projection.
    """
    rng = np.random.default_rng(seed)
    params = init_block_params(cfg, rng)
    buffers = {k: v.astype(np.float64) for k, v in params.items() if is_buffer(k)}
    values = {}
    for k, v in params.items():
        if is_buffer(k):
            continue
        v = v.astype(np.float64)
        if k.endswith((".gamma", ".beta", ".bias")):
            v = v + rng.normal(0, 0.1, v.shape)
        values[k] = v
    values["input"] = rng.standard_normal((batch, cfg.in_channels, size, size))
    probe = {}

    def loss(tape, leaves):
        b = Bound(tape, {**buffers, **{k: l.value for k, l in leaves.items()}}, np.float64)
        b.leaves.update(leaves)
        out = block_forward(leaves["input"], cfg, b, training=training)
        if "w" not in probe:
            probe["w"] = np.random.default_rng(seed + 1).standard_normal(out.shape)
        return ops.weighted_sum(out, probe["w"])

    return grad_check(loss, values, threshold=threshold, seed=seed, **kw)


def unit_var():
    """A float32 running variance that makes ``sqrt(var + eps)`` exactly 1."""
    v = np.float32(1) - np.float32(1e-5)
    for _ in range(8):
        if np.sqrt(v + np.float32(1e-5)) == np.float32(1):
            return v
        v = np.nextafter(v, np.float32(2))
    raise AssertionError("no float32 variance gives a unit denominator")


def delta_block(cfg, seed=0):
    """Block params with centred delta 3x3 kernels and BN that is exactly the identity."""
    from res2lab.res2net import kernel_indices

    params = init_block_params(cfg, np.random.default_rng(seed))
    for k in params:
        if k.endswith(".running_var"):
            params[k] = np.full_like(params[k], unit_var())
    per_group = cfg.width // cfg.cardinality
    for i in kernel_indices(cfg):
        w = np.zeros_like(params[f"convs.{i}.weight"])
        for o in range(cfg.width):
            w[o, o % per_group, 1, 1] = 1
        params[f"convs.{i}.weight"] = w
    return params


def block_taps(x, cfg, params, training=False):
    from res2lab.autodiff import Tape

    tape = Tape()
    taps = {}
    block_forward(tape.leaf(np.asarray(x)), cfg, Bound(tape, params), training=training, taps=taps)
    return {k: v.value for k, v in taps.items()}
