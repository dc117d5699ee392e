"""Built-in two-hidden-layer example with a known exact solution.

A 4-4-4-4 network with activations p_1(t) = c_{1,2} t^2 + c_{1,1} t + 1 and
p_2(t) = c_{2,1} t + c_{2,0}, two training samples generated noise-free at
coefficients (1, -2, 1, -1).  The global training optimum is therefore zero
loss at exactly those coefficients, which makes this fixture the end-to-end
regression guard for the whole pipeline: relaxation order 1 must fail the
flat truncation test, order 2 must pass and recover the coefficients.
"""

from __future__ import annotations

import numpy as np

from .netmodel import NetworkSpec, TrainingSet

EXAMPLE_COEFFS = (1.0, -2.0, 1.0, -1.0)

_W1 = [
    [1, 0, -1, 1],
    [0, 1, 1, 1],
    [-1, 0, 1, -1],
    [-2, 1, -1, 0],
]
_W2 = [
    [1, -1, 0, 2],
    [2, 1, 1, 0],
    [1, 1, 1, 2],
    [0, 1, 1, 1],
]
_W3 = [
    [1, 1, 0, 1],
    [-2, -1, 1, 1],
    [1, 0, 1, 1],
    [-1, 0, -2, 1],
]

_X = [
    [2, 1, 0, -1],
    [-1, 1, 1, 1],
]
_Y = [
    [66, -22, 106, -104],
    [38, 30, 46, -33],
]


def example_network() -> NetworkSpec:
    return NetworkSpec(
        dims=(4, 4, 4, 4),
        act_degrees=(2, 1),
        weights=(np.array(_W1, float), np.array(_W2, float), np.array(_W3, float)),
    )


def example_training_set() -> TrainingSet:
    return TrainingSet(xs=np.array(_X, float), ys=np.array(_Y, float))
