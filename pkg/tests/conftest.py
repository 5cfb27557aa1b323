import numpy as np
import pytest

from crtprune.galton_watson import OffspringLaw
from crtprune.tree import Tree


def leaf_count_series(law: OffspringLaw, n_terms: int) -> np.ndarray:
    """Coefficients of the smallest pgf solution f = sum_k p_k f^k with an
    extra leaf marker on the k=0 term; independent check for the samplers."""
    a = np.zeros(n_terms + 1)
    pk = dict(zip(law.values.tolist(), law.probs.tolist()))
    for _ in range(4 * n_terms):
        f = np.zeros(n_terms + 1)
        f[1] = pk.get(0, 0.0)
        power = np.zeros(n_terms + 1)
        power[0] = 1.0
        for k in range(1, max(pk) + 1):
            power = np.convolve(power, a)[:n_terms + 1]
            if k in pk and k != 0:
                f += pk[k] * power
        if np.allclose(f, a, atol=1e-15):
            return f
        a = f
    return a


def random_tree(rng: np.random.Generator, max_nodes: int = 200,
                split_p: float = 0.45, mean_len: float = 1.0,
                trunc_p: float = 0.0) -> Tree:
    """Small random tree for invariant tests; no unary nodes, root has one child."""
    parent = [-1]
    length = [0.0]
    trunc = [False]
    todo = [0]
    while todo and len(parent) < max_nodes:
        node = todo.pop()
        if node == 0:
            n_kids = 1
        elif rng.random() < split_p:
            n_kids = 2 + int(rng.random() < 0.3)
        else:
            if trunc_p and rng.random() < trunc_p:
                trunc[node] = True
            continue
        if len(parent) + n_kids > max_nodes:
            continue
        for _ in range(n_kids):
            parent.append(node)
            length.append(float(rng.exponential(mean_len)) + 1e-9)
            trunc.append(False)
            todo.append(len(parent) - 1)
    # anything left unexpanded stays a leaf
    t = Tree(parent, length, trunc)
    t.validate()
    return t


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
