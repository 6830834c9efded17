"""Shared construction helpers for the test suite."""

import numpy as np

from neuropath import Grid, NetworkSpec, forward
from neuropath.verify import random_conv, random_pool


def toy_net(rng, kinds="cpc", cin=1, cmax=2):
    """Small network from a kind string: 'c' conv, 'p' pool."""
    layers = []
    c = cin
    for k in kinds:
        if k == "p":
            layers.append(random_pool(c))
        else:
            cout = int(rng.integers(1, cmax + 1))
            layers.append(random_conv(rng, c, cout))
            c = cout
    return NetworkSpec(tuple(layers))


def random_pair(rng, net, extents=(8, 8), cin=1):
    w, h = extents
    a = Grid(rng.random((w, h, cin)).astype(np.float32))
    b = Grid(rng.random((w, h, cin)).astype(np.float32))
    t = len(net.layers)
    return forward(net, a, 1, t), forward(net, b, 1, t)
