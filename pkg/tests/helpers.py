"""Shared test utilities: central finite differences and small graphs."""

import numpy as np

from deepdds.chem import featurize, mol_from_smiles
from deepdds.tensor import Tensor

FD_STEP = 1e-5


def numerical_grad(f, arrays, h=FD_STEP):
    """Central differences of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + h
            up = f()
            a[idx] = old - h
            down = f()
            a[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.zeros_like(n) if a is None else a
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def check_gradients(build_loss, params, h=FD_STEP):
    """Compare backward() against finite differences for ``params`` (Tensors)."""
    for p in params:
        p.grad = None
    loss = build_loss()
    loss.backward()
    analytic = [p.grad for p in params]
    numeric = numerical_grad(lambda: build_loss().item(), [p.data for p in params], h)
    return max_relative_error(analytic, numeric)


def graph_input(smiles):
    g = mol_from_smiles(smiles)
    return g, featurize(g)


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def random_smiles(rng, n_atoms, max_rings=3, elements="CCCNOS"):
    """A connected random molecule as SMILES: a random tree plus a few ring closures."""
    parent = [-1] + [int(rng.integers(0, i)) for i in range(1, n_atoms)]
    children = [[] for _ in range(n_atoms)]
    for i in range(1, n_atoms):
        children[parent[i]].append(i)
    tree = {frozenset((i, parent[i])) for i in range(1, n_atoms)}
    closures = [[] for _ in range(n_atoms)]
    used = set()
    for ring in range(1, max_rings + 1):
        u, v = (int(t) for t in rng.integers(0, n_atoms, size=2))
        edge = frozenset((u, v))
        if u == v or edge in tree or edge in used:
            continue
        used.add(edge)
        closures[u].append(str(ring))
        closures[v].append(str(ring))
    symbols = [elements[int(rng.integers(0, len(elements)))] for _ in range(n_atoms)]

    def emit(i):
        out = symbols[i] + "".join(closures[i])
        kids = children[i]
        for k in kids[:-1]:
            out += "(" + emit(k) + ")"
        if kids:
            out += emit(kids[-1])
        return out

    return emit(0)
