import numpy as np

from longscape.core import Tape, Tensor, grad


def max_rel_err(a, b) -> float:
    """max|a-b| scaled by the largest magnitude in either array."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def numeric_grad(f, arrays, h=1e-4):
    """Central differences of scalar ``f(*arrays)`` with respect to every entry."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f(*arrays)
            flat[i] = old - h
            fm = f(*arrays)
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def analytic_grad(build, arrays):
    """Gradient of scalar ``build(*tensors)`` via the tape."""
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape():
        loss = build(*ts)
    return [g.data for g in grad(loss, ts)]


def check_gradients(build, arrays, h=1e-4):
    """Max relative error between tape gradients and central differences."""
    def f(*arrs):
        return float(build(*[Tensor._wrap(a) for a in arrs]).data)

    num = numeric_grad(f, arrays, h)
    ana = analytic_grad(build, arrays)
    return max(max_rel_err(a, n) for a, n in zip(ana, num))


def block_check(forward, store, inputs, seed=0, h=1e-6, coords=0):
    """Compare tape gradients of ``sum(forward(*inputs) * R)`` with central differences.

    ``forward`` reads its parameters from ``store`` (float64).  With
    ``coords == 0`` every parameter and input entry is perturbed; otherwise
    that many randomly drawn entries are, which scales to whole networks.
    Either way the error is taken relative to the largest entry of the
    whole tape gradient, so sampling estimates the same quantity as the
    exhaustive check.
    """
    from longscape import core as C

    rng = np.random.default_rng(seed)
    xs = [Tensor(a, requires_grad=True) for a in inputs]
    params = [t for _, t in store.items()]
    with Tape():
        out = forward(*xs)
        weights = rng.standard_normal(out.shape)
        loss = C.sum(C.mul(out, C.constant(weights)))
    ana = [g.data for g in grad(loss, params + xs)]
    arrays = [p.data for p in params] + [x.data for x in xs]

    def f(*_):
        return float(np.sum(forward(*[Tensor._wrap(x.data) for x in xs]).data * weights))

    if coords == 0:
        num = numeric_grad(f, arrays, h)
        return max_rel_err(np.concatenate([a.ravel() for a in ana]), np.concatenate([n.ravel() for n in num]))
    sizes = np.array([a.size for a in arrays])
    picks = rng.choice(sizes.sum(), size=min(coords, sizes.sum()), replace=False)
    bounds = np.cumsum(sizes)
    exact, approx = [], []
    for flat_index in picks:
        k = int(np.searchsorted(bounds, flat_index, side="right"))
        i = int(flat_index - (bounds[k] - sizes[k]))
        flat = arrays[k].reshape(-1)
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        approx.append((fp - fm) / (2 * h))
        exact.append(ana[k].reshape(-1)[i])
    return _sampled_err(exact, approx, ana)


def _sampled_err(exact, approx, full) -> float:
    scale = max(max(float(np.abs(g).max(initial=0.0)) for g in full), 1e-12)
    return float(np.abs(np.asarray(exact) - np.asarray(approx)).max() / scale)


def sampled_check(forward, store, inputs, seed=0, h=1e-10, coords=24, reference_dtype=np.longdouble):
    """Tape gradient of a whole network (float64) against central differences
    of ``forward(store, *inputs)`` evaluated in ``reference_dtype``.

    For badly conditioned networks the float64 forward pass itself carries
    roundoff far above 1e-5 of a finite difference, so the reference runs in
    extended precision at the same float64 point, with a five-point stencil.
    ``coords`` randomly drawn parameter or input entries are probed and the
    error is relative to the largest entry of the whole tape gradient.
    """
    from longscape import core as C

    rng = np.random.default_rng(seed)
    xs = [Tensor(a, requires_grad=True) for a in inputs]
    params = [t for _, t in store.items()]
    with Tape():
        out = forward(store, *xs)
        weights = rng.standard_normal(out.shape)
        loss = C.sum(C.mul(out, C.constant(weights)))
    ana = [g.data for g in grad(loss, params + xs)]

    ref = store.astype(reference_dtype)
    ref_inputs = [np.asarray(a, dtype=reference_dtype) for a in inputs]
    arrays = [t.data for _, t in ref.items()] + ref_inputs
    w_ref = weights.astype(reference_dtype)

    def f():
        return np.sum(forward(ref, *[Tensor._wrap(a) for a in ref_inputs]).data * w_ref)

    sizes = np.array([a.size for a in arrays])
    bounds = np.cumsum(sizes)
    exact, approx = [], []
    for flat_index in rng.choice(sizes.sum(), size=min(coords, sizes.sum()), replace=False):
        k = int(np.searchsorted(bounds, flat_index, side="right"))
        i = int(flat_index - (bounds[k] - sizes[k]))
        flat = arrays[k].reshape(-1)
        old = flat[i]
        vals = {}
        for step in (-2, -1, 1, 2):
            flat[i] = old + step * h
            vals[step] = f()
        flat[i] = old
        # five-point central stencil, truncation error O(h^4)
        approx.append(float((8 * (vals[1] - vals[-1]) - (vals[2] - vals[-2])) / (12 * h)))
        exact.append(ana[k].reshape(-1)[i])
    return _sampled_err(exact, approx, ana)

