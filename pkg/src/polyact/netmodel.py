"""Feedforward networks with learnable polynomial activation coefficients.

The architecture is fixed (layer widths and weight matrices are given); only
the activation polynomials' coefficients are unknown.  Layer ell applies

    p_ell(t) = c_{ell,d} t**d + ... + c_{ell,1} t + c_{ell,0}

elementwise to the pre-activation W_ell @ h_{ell-1}.  For identifiability the
constant coefficients of all hidden layers except the last are pinned to 1
(see `scale_equivalence_witness` for the invariance that forces this), so the
free coefficient vector is laid out as

    (c_{1,1}, ..., c_{1,d_1},
     ...,
     c_{D-1,1}, ..., c_{D-1,d_{D-1}},
     c_{D,0}, c_{D,1}, ..., c_{D,d_D})

`symbolic_forward` builds the network output as polynomials in these
coefficients for a fixed numeric input; `numeric_forward` is the plain
float evaluation used for data generation and residual checks.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .polyring import Polynomial, compose_affine


@dataclass(frozen=True)
class NetworkSpec:
    """Layer dimensions, weights, and per-layer activation degrees.

    dims has length D+2: (m_0, ..., m_{D+1}).  weights[ell] is the matrix
    W_{ell+1} of shape m_{ell+1} x m_ell.  act_degrees has length D.
    """

    dims: tuple
    act_degrees: tuple
    weights: tuple = field(repr=False)

    def __post_init__(self):
        dims = tuple(int(m) for m in self.dims)
        degrees = tuple(int(d) for d in self.act_degrees)
        weights = tuple(np.asarray(w, dtype=float) for w in self.weights)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "act_degrees", degrees)
        object.__setattr__(self, "weights", weights)
        if len(dims) < 3:
            raise ValueError("need at least one hidden layer")
        if len(degrees) != len(dims) - 2:
            raise ValueError(
                f"got {len(degrees)} activation degrees for {len(dims) - 2} hidden layers"
            )
        if any(d < 1 for d in degrees):
            raise ValueError("activation degrees must be >= 1")
        if len(weights) != len(dims) - 1:
            raise ValueError(f"expected {len(dims) - 1} weight matrices, got {len(weights)}")
        for ell, w in enumerate(weights):
            expect = (dims[ell + 1], dims[ell])
            if w.shape != expect:
                raise ValueError(
                    f"weight matrix {ell + 1} has shape {w.shape}, expected {expect}"
                )

    @property
    def depth(self) -> int:
        """Number of hidden layers D."""
        return len(self.dims) - 2

    @property
    def coeff_length(self) -> int:
        """Length of the free coefficient vector: d_1 + ... + d_D + 1."""
        return sum(self.act_degrees) + 1

    def coeff_labels(self) -> list[str]:
        """Names like 'c11', 'c12', ..., 'c20', 'c21' matching the layout."""
        labels = []
        D = self.depth
        for ell, d in enumerate(self.act_degrees, start=1):
            lo = 0 if ell == D else 1
            labels.extend(f"c{ell}{j}" for j in range(lo, d + 1))
        return labels


def check_coefficients(net: NetworkSpec, coeffs: Sequence[float]) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (net.coeff_length,):
        raise ValueError(
            f"coefficient vector has shape {c.shape}, expected ({net.coeff_length},)"
        )
    return c


def layer_coefficients(net: NetworkSpec, coeffs: Sequence[float]) -> list[np.ndarray]:
    """Split the free vector into per-layer arrays (c_{ell,0}, ..., c_{ell,d}).

    Hidden layers before the last get their pinned constant 1 restored.
    """
    c = check_coefficients(net, coeffs)
    out = []
    pos = 0
    D = net.depth
    for ell, d in enumerate(net.act_degrees, start=1):
        if ell < D:
            layer = np.concatenate(([1.0], c[pos : pos + d]))
            pos += d
        else:
            layer = c[pos : pos + d + 1]
            pos += d + 1
        out.append(layer)
    return out


@dataclass(frozen=True)
class Provenance:
    """How a synthetic TrainingSet was generated."""

    c_true: np.ndarray
    seed: int
    noise_scale: float
    shared_noise: bool
    noise: np.ndarray  # N x m_{D+1} noise vectors actually added


@dataclass(frozen=True)
class TrainingSet:
    """Input-output pairs; inputs are rows of xs, outputs rows of ys."""

    xs: np.ndarray
    ys: np.ndarray
    provenance: Provenance | None = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        if xs.ndim != 2 or ys.ndim != 2 or xs.shape[0] != ys.shape[0] or xs.shape[0] < 1:
            raise ValueError(f"bad sample arrays: xs {xs.shape}, ys {ys.shape}")

    def __len__(self) -> int:
        return self.xs.shape[0]


def numeric_forward(net: NetworkSpec, coeffs: Sequence[float], x: Sequence[float]) -> np.ndarray:
    """Evaluate the network at input x with the given free coefficients."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.dims[0],):
        raise ValueError(f"input has shape {x.shape}, expected ({net.dims[0]},)")
    layers = layer_coefficients(net, coeffs)
    h = x
    for ell in range(net.depth):
        v = net.weights[ell] @ h
        h = _polyval_ascending(layers[ell], v)
    return net.weights[-1] @ h


def _polyval_ascending(coeffs_ascending: np.ndarray, t: np.ndarray) -> np.ndarray:
    # np.polyval wants highest degree first.
    return np.polyval(coeffs_ascending[::-1], t)


def symbolic_forward(net: NetworkSpec, x: Sequence[float]) -> list[Polynomial]:
    """Network output at input x as polynomials in the free coefficients.

    Returns one Polynomial per output component, over n = coeff_length
    variables ordered exactly like the free coefficient vector.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (net.dims[0],):
        raise ValueError(f"input has shape {x.shape}, expected ({net.dims[0]},)")
    n = net.coeff_length
    D = net.depth

    # Per-layer activation coefficients as polynomials, ascending degree.
    coeff_polys = []
    pos = 0
    for ell, d in enumerate(net.act_degrees, start=1):
        if ell < D:
            layer = [Polynomial.constant(n, 1.0)]
            layer += [Polynomial.variable(n, pos + j) for j in range(d)]
            pos += d
        else:
            layer = [Polynomial.variable(n, pos + j) for j in range(d + 1)]
            pos += d + 1
        coeff_polys.append(layer)

    h = [Polynomial.constant(n, float(xi)) for xi in x]
    for ell in range(D):
        W = net.weights[ell]
        v = []
        for i in range(W.shape[0]):
            acc = Polynomial.zero(n)
            for j, hj in enumerate(h):
                if W[i, j] != 0.0:
                    acc = acc + W[i, j] * hj
            v.append(acc)
        h = compose_affine(list(reversed(coeff_polys[ell])), v)

    W = net.weights[-1]
    out = []
    for i in range(W.shape[0]):
        acc = Polynomial.zero(n)
        for j, hj in enumerate(h):
            if W[i, j] != 0.0:
                acc = acc + W[i, j] * hj
        out.append(acc)
    return out


def generate_synthetic(
    net: NetworkSpec,
    c_true: Sequence[float],
    n_samples: int,
    noise_scale: float,
    seed: int,
    shared_noise: bool = False,
    input_range: tuple = (-1.0, 1.0),
) -> TrainingSet:
    """Draw inputs uniformly from a box and add Gaussian output noise.

    Inputs default to [-1, 1]^{m_0}.  Noise vectors are noise_scale *
    standard normal, redrawn per sample by default; shared_noise=True reuses
    a single draw for every sample.  Deterministic for a given seed.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    c = check_coefficients(net, c_true)
    rng = np.random.default_rng(seed)
    m_out = net.dims[-1]
    lo, hi = input_range
    xs = rng.uniform(lo, hi, size=(n_samples, net.dims[0]))
    if shared_noise:
        eps = np.tile(noise_scale * rng.standard_normal(m_out), (n_samples, 1))
    else:
        eps = noise_scale * rng.standard_normal((n_samples, m_out))
    ys = np.array([numeric_forward(net, c, x) for x in xs]) + eps
    prov = Provenance(
        c_true=c.copy(),
        seed=seed,
        noise_scale=noise_scale,
        shared_noise=shared_noise,
        noise=eps,
    )
    return TrainingSet(xs=xs, ys=ys, provenance=prov)


def scale_equivalence_witness(
    net: NetworkSpec, coeffs4: Sequence[float], tau: float, x: Sequence[float]
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate a 2-hidden-layer linear-activation net at two equivalent points.

    coeffs4 = (c_{1,0}, c_{1,1}, c_{2,0}, c_{2,1}) with the first-layer
    constant treated as free for this diagnostic.  The second evaluation
    rescales (c_{1,0}, c_{1,1}) by tau and c_{2,1} by 1/tau, which leaves the
    network function unchanged and is why c_{1,0} is pinned to 1 elsewhere.
    """
    if tau == 0:
        raise ValueError("tau must be nonzero")
    if net.depth != 2 or net.act_degrees != (1, 1):
        raise ValueError("witness requires a 2-hidden-layer net with linear activations")
    c10, c11, c20, c21 = (float(v) for v in coeffs4)
    x = np.asarray(x, dtype=float)

    def forward(layers):
        h = x
        for ell in range(2):
            v = net.weights[ell] @ h
            h = _polyval_ascending(np.asarray(layers[ell]), v)
        return net.weights[-1] @ h

    base = forward([(c10, c11), (c20, c21)])
    scaled = forward([(tau * c10, tau * c11), (c20, c21 / tau)])
    return base, scaled


# -- file formats -----------------------------------------------------------


def network_to_json(net: NetworkSpec) -> dict:
    return {
        "dims": list(net.dims),
        "act_degrees": list(net.act_degrees),
        "weights": [w.tolist() for w in net.weights],
    }


def network_from_json(obj: dict) -> NetworkSpec:
    for key in ("dims", "act_degrees", "weights"):
        if key not in obj:
            raise ValueError(f"network file missing field '{key}'")
    return NetworkSpec(
        dims=tuple(obj["dims"]),
        act_degrees=tuple(obj["act_degrees"]),
        weights=tuple(np.asarray(w, dtype=float) for w in obj["weights"]),
    )


def save_network(net: NetworkSpec, path) -> None:
    Path(path).write_text(json.dumps(network_to_json(net), indent=2) + "\n")


def load_network(path) -> NetworkSpec:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"network file {path} is not valid JSON: {exc}") from exc
    return network_from_json(obj)


def training_set_to_json(data: TrainingSet) -> dict:
    return {
        "samples": [
            {"x": x.tolist(), "y": y.tolist()} for x, y in zip(data.xs, data.ys)
        ]
    }


def save_training_set(data: TrainingSet, path) -> None:
    Path(path).write_text(json.dumps(training_set_to_json(data), indent=2) + "\n")


def save_provenance(data: TrainingSet, path) -> None:
    if data.provenance is None:
        raise ValueError("training set has no provenance record")
    prov = data.provenance
    obj = {
        "c_true": prov.c_true.tolist(),
        "seed": prov.seed,
        "noise_scale": prov.noise_scale,
        "shared_noise": prov.shared_noise,
        "noise_norms": [float(np.linalg.norm(e)) for e in prov.noise],
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def load_training_set(path) -> TrainingSet:
    """Read samples from .json ({'samples': [{'x':…,'y':…}…]}) or .csv."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"data file {path} is not valid JSON: {exc}") from exc
    if "samples" not in obj:
        raise ValueError(f"data file {path} missing field 'samples'")
    xs, ys = [], []
    for i, sample in enumerate(obj["samples"]):
        if "x" not in sample or "y" not in sample:
            raise ValueError(f"sample {i} in {path} missing field 'x' or 'y'")
        xs.append(sample["x"])
        ys.append(sample["y"])
    return TrainingSet(xs=np.asarray(xs, float), ys=np.asarray(ys, float))


def _load_csv(path) -> TrainingSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        x_cols = [i for i, name in enumerate(header) if name.strip().startswith("x_")]
        y_cols = [i for i, name in enumerate(header) if name.strip().startswith("y_")]
        if not x_cols or not y_cols:
            raise ValueError(f"CSV {path} needs x_* and y_* columns, got {header}")
        xs, ys = [], []
        for row in reader:
            if not row:
                continue
            xs.append([float(row[i]) for i in x_cols])
            ys.append([float(row[i]) for i in y_cols])
    return TrainingSet(xs=np.asarray(xs, float), ys=np.asarray(ys, float))


def save_training_set_csv(data: TrainingSet, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    m0 = data.xs.shape[1]
    m_out = data.ys.shape[1]
    writer.writerow([f"x_{j + 1}" for j in range(m0)] + [f"y_{j + 1}" for j in range(m_out)])
    for x, y in zip(data.xs, data.ys):
        writer.writerow([repr(v) for v in x] + [repr(v) for v in y])
    Path(path).write_text(buf.getvalue())
