"""Synthetic training experiments: generation, metrics, sweeps, residuals.

Instances are drawn per a fixed protocol: weight entries uniform on [-1, 1]
scaled by gain/sqrt(fan-in), true coefficients with magnitudes uniform on
[c_min, c_max] and random signs, inputs uniform on [input_low, input_high],
and per-sample Gaussian output noise.  Defaults are desk scale: widths around
8 and 20 training samples keep every relaxation solvable in seconds while
preserving the qualitative behavior of the large-table protocol (identical
coefficient-space dimensions, only wider layers and more samples there).

Recovery is scored by AbsErr = ||c_true - c_pred||_2 and RelErr = AbsErr
divided by the norm of the mean noise vector actually entering the averaged
residual (the mean per-sample noise norm is reported alongside).  Test-set
quality is scored by per-sample residuals against noise-free predictions,
their MSE/RMSE, and a first-order trend fit of the residual norms.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .hierarchy import HierarchyResult, HierarchySolverError, solve_hierarchy
from .netmodel import NetworkSpec, TrainingSet, generate_synthetic, numeric_forward
from .popbuild import build_pop
from .sdpsolve import SolverOptions

# Desk-scale generation defaults; chosen so that the averaged-residual
# system is overdetermined and well conditioned for every built-in family.
DEFAULT_WEIGHT_GAIN = 3.5
DEFAULT_INPUT_RANGE = (0.0, 1.0)
DEFAULT_COEFF_MAGNITUDE = (0.5, 2.0)


@dataclass(frozen=True)
class ExperimentConfig:
    dims: tuple
    act_degrees: tuple
    n_train: int = 20
    n_test: int = 20
    noise_scale: float = 1e-2
    seed: int = 0
    k_max: int = 3
    weight_gain: float = DEFAULT_WEIGHT_GAIN
    input_range: tuple = DEFAULT_INPUT_RANGE
    coeff_magnitude: tuple = DEFAULT_COEFF_MAGNITUDE
    gap_tol: float = 1e-9
    feas_tol: float = 1e-9
    rank_tol: float = 1e-3
    cert_tol: float = 1e-6
    box_radius: float | None = None

    def solver_options(self) -> SolverOptions:
        return SolverOptions(gap_tol=self.gap_tol, feas_tol=self.feas_tol)

    def label(self) -> str:
        return f"(N={self.n_train}, dims={'x'.join(str(m) for m in self.dims)})"


def make_random_network(
    dims: Sequence[int],
    act_degrees: Sequence[int],
    rng: np.random.Generator,
    weight_gain: float = DEFAULT_WEIGHT_GAIN,
) -> NetworkSpec:
    """Weights i.i.d. uniform on [-1, 1], scaled by weight_gain / sqrt(fan-in)."""
    dims = tuple(dims)
    weights = tuple(
        rng.uniform(-1.0, 1.0, size=(dims[l + 1], dims[l])) * weight_gain / np.sqrt(dims[l])
        for l in range(len(dims) - 1)
    )
    return NetworkSpec(dims=dims, act_degrees=tuple(act_degrees), weights=weights)


def draw_true_coefficients(
    length: int, rng: np.random.Generator, magnitude: tuple = DEFAULT_COEFF_MAGNITUDE
) -> np.ndarray:
    """Random signs with magnitudes bounded away from zero.

    Near-zero activation coefficients make deeper layers unidentifiable
    (their whole downstream chain drops out of the network map), so the draw
    mirrors the small-integer magnitudes of the worked example instead.
    """
    mags = rng.uniform(magnitude[0], magnitude[1], size=length)
    signs = rng.choice([-1.0, 1.0], size=length)
    return mags * signs


def synthesize_instance(cfg: ExperimentConfig):
    """Deterministically build (network, c_true, train set, test set)."""
    rng = np.random.default_rng(cfg.seed)
    net = make_random_network(cfg.dims, cfg.act_degrees, rng, cfg.weight_gain)
    c_true = draw_true_coefficients(net.coeff_length, rng, cfg.coeff_magnitude)
    train = generate_synthetic(
        net, c_true, cfg.n_train, cfg.noise_scale, seed=cfg.seed + 1_000_003,
        input_range=cfg.input_range,
    )
    test = generate_synthetic(
        net, c_true, cfg.n_test, 0.0, seed=cfg.seed + 2_000_003,
        input_range=cfg.input_range,
    )
    return net, c_true, train, test


@dataclass
class ResidualAnalysis:
    residuals: np.ndarray  # n_test x m_out, prediction minus test output
    mse: float
    rmse: float
    norm_trend_slope: float
    norm_trend_stderr: float

    def components_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["i", "j", "residual"])
        for i, row in enumerate(self.residuals, start=1):
            for j, value in enumerate(row, start=1):
                writer.writerow([i, j, repr(float(value))])
        return buf.getvalue()

    def norms_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["i", "residual_norm"])
        for i, row in enumerate(self.residuals, start=1):
            writer.writerow([i, repr(float(np.linalg.norm(row)))])
        return buf.getvalue()


def residual_analysis(net: NetworkSpec, c_pred: Sequence[float], test: TrainingSet) -> ResidualAnalysis:
    """Noise-free predictions against a held-out set, per-sample residuals."""
    preds = np.array([numeric_forward(net, c_pred, x) for x in test.xs])
    residuals = preds - test.ys
    sq_norms = np.sum(residuals**2, axis=1)
    mse = float(np.mean(sq_norms))
    norms = np.sqrt(sq_norms)
    slope, stderr = _trend_fit(norms)
    return ResidualAnalysis(
        residuals=residuals,
        mse=mse,
        rmse=float(np.sqrt(mse)),
        norm_trend_slope=slope,
        norm_trend_stderr=stderr,
    )


def _trend_fit(values: np.ndarray) -> tuple:
    """Least-squares slope of values against sample index, with its stderr."""
    n = len(values)
    if n < 3:
        return 0.0, float("inf")
    t = np.arange(1, n + 1, dtype=float)
    t_c = t - t.mean()
    slope = float(np.dot(t_c, values - values.mean()) / np.dot(t_c, t_c))
    fitted = values.mean() + slope * t_c
    dof = n - 2
    s2 = float(np.sum((values - fitted) ** 2) / dof)
    stderr = float(np.sqrt(s2 / np.dot(t_c, t_c)))
    return slope, stderr


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    outcome: str
    certified: bool
    abs_err: float | None
    rel_err: float | None
    theta: float | None
    noise_denominator: float  # norm of the mean noise vector
    mean_noise_norm: float  # mean per-sample noise norm
    c_true: np.ndarray
    c_pred: np.ndarray | None
    hierarchy: HierarchyResult | None
    test: ResidualAnalysis | None
    time_build: float
    time_solve: float
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "dims": list(self.config.dims),
            "act_degrees": list(self.config.act_degrees),
            "n_train": self.config.n_train,
            "noise_scale": self.config.noise_scale,
            "seed": self.config.seed,
            "outcome": self.outcome,
            "certified": self.certified,
            "abs_err": self.abs_err,
            "rel_err": self.rel_err,
            "theta": self.theta,
            "noise_denominator": self.noise_denominator,
            "mean_noise_norm": self.mean_noise_norm,
            "c_true": list(self.c_true),
            "c_pred": None if self.c_pred is None else list(self.c_pred),
            "mse": None if self.test is None else self.test.mse,
            "rmse": None if self.test is None else self.test.rmse,
            "orders": None if self.hierarchy is None else [r.to_json() for r in self.hierarchy.orders],
            "time_build": self.time_build,
            "time_solve": self.time_solve,
            "error": self.error,
        }


def run_training_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Generate an instance, run the hierarchy, score recovery and test error.

    Solver failures land in the report's error field instead of raising, so
    sweeps keep going.
    """
    net, c_true, train, test = synthesize_instance(cfg)
    noise = train.provenance.noise
    denom = float(np.linalg.norm(noise.mean(axis=0)))
    mean_norm = float(np.mean(np.linalg.norm(noise, axis=1)))

    t0 = time.perf_counter()
    pop = build_pop(net, train)
    if cfg.box_radius is not None:
        from .popbuild import add_box_constraints

        pop = add_box_constraints(pop, cfg.box_radius)
    t1 = time.perf_counter()

    error = None
    result: HierarchyResult | None = None
    try:
        result = solve_hierarchy(
            pop,
            k_max=cfg.k_max,
            solver_options=cfg.solver_options(),
            rank_tol=cfg.rank_tol,
            cert_tol=cfg.cert_tol,
        )
    except HierarchySolverError as exc:
        error = str(exc)
        result = exc.partial
    t2 = time.perf_counter()

    c_pred = None if result is None else result.coefficients
    abs_err = rel_err = None
    analysis = None
    if c_pred is not None:
        abs_err = float(np.linalg.norm(c_true - c_pred))
        rel_err = abs_err / denom if denom > 0 else None
        analysis = residual_analysis(net, c_pred, test)
    return ExperimentReport(
        config=cfg,
        outcome="SolverFailure" if result is None else result.outcome,
        certified=bool(result is not None and result.certified),
        abs_err=abs_err,
        rel_err=rel_err,
        theta=None if result is None else result.theta,
        noise_denominator=denom,
        mean_noise_norm=mean_norm,
        c_true=c_true,
        c_pred=None if c_pred is None else np.asarray(c_pred),
        hierarchy=result,
        test=analysis,
        time_build=t1 - t0,
        time_solve=t2 - t1,
        error=error,
    )


# -- built-in activation families -------------------------------------------

FAMILY_SPECS = {
    "2-layer-quadratic": ((2, 2), 2),
    "2-layer-quad-cubic": ((2, 3), 2),
    "3-layer-linear": ((1, 1, 1), 3),
    "3-layer-quad-linear": ((2, 1, 1), 3),
}

RESIDUAL_FAMILY = "2-layer-cubic-quad"
RESIDUAL_FAMILY_SPEC = ((3, 2), 2)

PAPER_SCALE_ROWS = [(50, 20), (100, 25), (150, 30), (200, 35), (250, 40)]


def family_config(
    name: str, seed: int = 0, noise_scale: float = 1e-2, width: int = 8, n_train: int = 20
) -> ExperimentConfig:
    if name == RESIDUAL_FAMILY:
        act, depth = RESIDUAL_FAMILY_SPEC
    else:
        act, depth = FAMILY_SPECS[name]
    dims = (width,) * (depth + 2)
    return ExperimentConfig(
        dims=dims, act_degrees=act, n_train=n_train, n_test=n_train,
        noise_scale=noise_scale, seed=seed,
    )


def family_sweep_configs(
    name: str, noise_scale: float = 1e-2, paper_scale: bool = False, seed: int = 0
) -> list:
    """Five rows shaped like the accuracy tables: growing (N, width)."""
    rows = PAPER_SCALE_ROWS if paper_scale else [(20, 5), (20, 6), (20, 7), (20, 8), (30, 8)]
    return [
        replace(family_config(name, seed=seed + i, noise_scale=noise_scale,
                              width=w, n_train=n), )
        for i, (n, w) in enumerate(rows)
    ]


# -- sweeps ------------------------------------------------------------------


@dataclass
class SweepTable:
    reports: list

    def rows(self) -> list:
        out = []
        for rep in self.reports:
            out.append(
                {
                    "dims": rep.config.label(),
                    "AbsErr": rep.abs_err,
                    "RelErr": rep.rel_err,
                    "Time": rep.time_build + rep.time_solve,
                    "noise_norm": rep.noise_denominator,
                    "outcome": rep.outcome,
                }
            )
        return out

    def to_text(self) -> str:
        header = f"{'(N, dims)':28s} {'AbsErr':>10s} {'RelErr':>10s} {'Time':>8s} {'|eps|':>10s}  outcome"
        lines = [header, "-" * len(header)]
        for row in self.rows():
            abs_err = "n/a" if row["AbsErr"] is None else f"{row['AbsErr']:.4f}"
            rel_err = "n/a" if row["RelErr"] is None else f"{row['RelErr']:.4f}"
            lines.append(
                f"{row['dims']:28s} {abs_err:>10s} {rel_err:>10s} "
                f"{row['Time']:>8.2f} {row['noise_norm']:>10.4f}  {row['outcome']}"
            )
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["dims", "abs_err", "rel_err", "time_s", "noise_norm", "outcome"])
        for row in self.rows():
            writer.writerow(
                [
                    row["dims"],
                    "" if row["AbsErr"] is None else repr(row["AbsErr"]),
                    "" if row["RelErr"] is None else repr(row["RelErr"]),
                    f"{row['Time']:.3f}",
                    repr(row["noise_norm"]),
                    row["outcome"],
                ]
            )
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"rows": [rep.to_json() for rep in self.reports]}


def sweep(configs: Sequence[ExperimentConfig], workers: int = 1) -> SweepTable:
    """Run each config; failures are recorded per row and the sweep continues."""
    configs = list(configs)
    if not configs:
        raise ValueError("empty sweep")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_training_experiment, configs))
    else:
        reports = [run_training_experiment(cfg) for cfg in configs]
    return SweepTable(reports=reports)


def report_to_json_str(report: ExperimentReport, **kwargs) -> str:
    return json.dumps(report.to_json(), **kwargs)
