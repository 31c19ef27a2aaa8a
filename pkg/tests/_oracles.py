"""Independent reference implementations used by the tests."""

import numpy as np


def ref_loss(tensors, sizes, scale, cur, tgt, joints, labels):
    """Batch loss written directly from the layer list.

    Any tensor may carry an extra leading axis of M variants (biases as (M, 1, n));
    the result then has shape (M,). Everything broadcasts through ``np.matmul``.
    """
    n_f = sizes["fingers"]
    feats_c, feats_t = [], []
    for i in range(n_f):
        def enc(x):
            h = np.tanh(x @ tensors[f"enc{i}_W1"] + tensors[f"enc{i}_b1"])
            return np.tanh(h @ tensors[f"enc{i}_W2"] + tensors[f"enc{i}_b2"]) + tensors[f"pe{i}"]
        feats_c.append(enc(cur[:, i]))
        feats_t.append(enc(tgt[:, i]))
    parts = feats_c + feats_t + [joints]
    lead = np.broadcast_shapes(*(p.shape[:-1] for p in parts))
    u = np.concatenate([np.broadcast_to(p, lead + p.shape[-1:]) for p in parts], axis=-1)
    h = np.tanh(u @ tensors["fuse_W"] + tensors["fuse_b"])
    n_head = len(sizes["head"]) + 1
    for j in range(1, n_head):
        h = np.tanh(h @ tensors[f"head_W{j}"] + tensors[f"head_b{j}"])
    out = (h @ tensors[f"head_W{n_head}"] + tensors[f"head_b{n_head}"]) * scale
    r = out - labels
    return np.mean(np.sum(r * r, axis=-1), axis=-1)


def central_differences(params, batch, name, h=1e-5, chunk=256):
    """Central-difference gradient of the batch loss for every entry of one tensor."""
    cur, tgt, joints, labels = batch
    base = params.tensors[name]
    grad = np.empty(base.size)
    for start in range(0, base.size, chunk):
        idx = np.arange(start, min(start + chunk, base.size))
        m = len(idx)
        losses = []
        for sign in (1.0, -1.0):
            stack = np.repeat(base.reshape(1, -1), m, axis=0)
            stack[np.arange(m), idx] += sign * h
            stack = stack.reshape((m,) + base.shape)
            if base.ndim == 1:
                stack = stack[:, None, :]
            t = dict(params.tensors)
            t[name] = stack
            losses.append(ref_loss(t, params.sizes, params.output_scale, cur, tgt, joints, labels))
        grad[idx] = (losses[0] - losses[1]) / (2 * h)
    return grad.reshape(base.shape)
