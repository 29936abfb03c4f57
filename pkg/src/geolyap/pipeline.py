"""Scenario pipelines behind the CLI commands.

Each runner validates everything it needs before creating any output file
(config errors must not leave partial output), then writes reports and CSV
dumps with deterministic bytes: seeded sampling, ordered reductions, sorted
JSON keys, and no timestamps.  Worker pools only parallelize the per-sample
map; inputs are drawn up front, so the byte output is independent of the
worker count.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .certify import (
    ANCHOR_ENVELOPE_FIT,
    CertificationReport,
    CheckRow,
    GridSpec,
    check_input_signal,
    classify_stability,
    iss_certify,
    make_certificate,
    run_geometry_suite,
    sample_states,
    verify_converse_certificate,
)
from .config import ConfigError, ScenarioConfig
from .envelopes import StabilityEnvelope
from .flows import Region, flow, lipschitz_estimate
from .lyapunov import LyapunovFunction, choose_delta, construct_ugas_V, massera_G
from .manifolds import GeometryError, ManifoldPoint, manifold_from_name

logger = logging.getLogger("geolyap")

EXIT_OK = 0
EXIT_CERTIFICATION_FAILED = 2
EXIT_CONFIG_ERROR = 3


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list]):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


class _Mapper:
    """Order-preserving map, optionally over a thread pool."""

    def __init__(self, workers: int):
        self.workers = max(1, workers)

    def __enter__(self):
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        return (lambda fn, items: self._pool.map(fn, items)) if self._pool else map

    def __exit__(self, *exc):
        if self._pool:
            self._pool.shutdown()
        return False


def _estimate_lipschitz(config: ScenarioConfig, field) -> float:
    region = Region(config.equilibrium, config.grid.radius)
    estimate = lipschitz_estimate(field, region, config.grid.t0_list,
                                  n_pairs=max(32, config.grid.n_points), seed=config.seed)
    logger.info("lipschitz estimate: transport %.4f covariant %.4f",
                estimate.transport_constant, estimate.covariant_constant)
    return estimate.inflated()


def _fit_trajectories(config: ScenarioConfig, spec, horizon: float):
    rng = np.random.default_rng(config.seed + 1)
    m = config.manifold
    trajectories = []
    n_starts = max(3, min(8, config.grid.n_points // 4))
    for t0 in config.grid.t0_list:
        for _ in range(n_starts):
            r = config.grid.radius * rng.uniform(0.3, 1.0)
            v = m.random_tangent(rng, config.equilibrium.coords, norm=r)
            x0 = ManifoldPoint(m, m.exp(config.equilibrium.coords, v))
            trajectories.append(flow(spec.field, t0, x0, t0 + horizon, config.step))
    return classify_stability(trajectories, config.equilibrium)


def _resolve_delta(config: ScenarioConfig, envelope: StabilityEnvelope) -> float:
    if config.delta.mode == "explicit":
        return config.delta.value
    return choose_delta(envelope.K, envelope.rate, config.delta.target).delta


def _failure_report(stage_anchor: str, message: str) -> dict:
    return {
        "verdict": False,
        "failed_stage": stage_anchor,
        "message": message,
        "rows": [],
    }


def _samples_csv_rows(V: LyapunovFunction, field, x_star: ManifoldPoint,
                      grid: GridSpec, seed: int, step: float, mapper) -> list[list]:
    m = field.manifold
    rng = np.random.default_rng(seed + 2)
    states = sample_states(m, x_star, GridSpec(min(grid.n_points, 24), grid.radius,
                                               grid.t0_list), rng)

    def one(state):
        t, x = state
        d = m.dist(x.coords, x_star.coords)
        v = V.evaluate(t, x)
        lie = V.lie_derivative(t, x)
        return [t, d, v, lie]

    return [row for row in mapper(one, states)]


def run_certify(config: ScenarioConfig, out_dir: Path, mode: str = "exp",
                workers: int = 1) -> int:
    """estimate L -> fit envelope -> choose horizon -> construct V -> verify."""
    if mode not in ("exp", "massera"):
        raise ConfigError(f"mode must be 'exp' or 'massera', got {mode!r}")
    spec = config.build_system()
    out_dir.mkdir(parents=True, exist_ok=True)

    fit_horizon = (config.massera.fit_horizon
                   if mode == "massera" and config.massera is not None
                   else config.fit_horizon)
    envelope = _fit_trajectories(config, spec, fit_horizon)
    logger.info("stability class: %s", envelope.stability_class)

    if mode == "exp":
        if not envelope.is_exponential:
            msg = (f"{ANCHOR_ENVELOPE_FIT}: trajectories classify as "
                   f"{envelope.stability_class}, not exponentially stable "
                   f"(fit residual {envelope.fit_residual:.3g})")
            logger.error(msg)
            _write_json(out_dir / "report.json", {
                "schema_version": 1, "mode": mode, "envelope": envelope.to_json(),
                "report": _failure_report(ANCHOR_ENVELOPE_FIT, msg),
            })
            (out_dir / "report.txt").write_text("certification FAILED\n" + msg + "\n")
            return EXIT_CERTIFICATION_FAILED
        L = _estimate_lipschitz(config, spec.field)
        delta = _resolve_delta(config, envelope)
        with _Mapper(workers) as mapper:
            report = verify_converse_certificate(
                spec.field, config.equilibrium, L, envelope, delta, config.p,
                GridSpec(config.grid.n_points, config.grid.radius, config.grid.t0_list),
                seed=config.seed, step=config.step,
                envelope_horizon=config.envelope_horizon, map_fn=mapper)
            certificate = make_certificate(spec.field, config.equilibrium, L,
                                           envelope, delta, config.p, step=config.step)
            samples = _samples_csv_rows(certificate.V, spec.field, config.equilibrium,
                                        GridSpec(config.grid.n_points, config.grid.radius,
                                                 config.grid.t0_list),
                                        config.seed, config.step, mapper)
        payload = {
            "schema_version": 1,
            "mode": mode,
            "envelope": envelope.to_json(),
            "certificate": certificate.to_json(),
            "report": report.to_dict(),
        }
        _write_json(out_dir / "report.json", payload)
        (out_dir / "report.txt").write_text(report.to_text())
        _write_csv(out_dir / "samples.csv", ["t", "distance", "V", "lie_derivative"], samples)
        return EXIT_OK if report.verdict else EXIT_CERTIFICATION_FAILED

    return _run_certify_massera(config, spec, envelope, out_dir, workers)


def _run_certify_massera(config: ScenarioConfig, spec, envelope: StabilityEnvelope,
                         out_dir: Path, workers: int) -> int:
    if config.massera is None:
        raise ConfigError("massera mode requires a 'massera' config section")
    if envelope.stability_class == "US":
        msg = ("ugas-envelope: trajectories do not decay; "
               "asymptotic construction unavailable")
        _write_json(out_dir / "report.json", {
            "schema_version": 1, "mode": "massera", "envelope": envelope.to_json(),
            "report": _failure_report("ugas-envelope", msg),
        })
        (out_dir / "report.txt").write_text("certification FAILED\n" + msg + "\n")
        return EXIT_CERTIFICATION_FAILED

    # Decay flows get slow at long horizons; a coarser integrator step keeps
    # evaluation at desk scale without touching the envelope fit.
    eval_step = max(config.step, 0.05)
    V = construct_ugas_V(spec.field, config.equilibrium, envelope,
                         config.massera.t_max, config.massera.tail_tol,
                         step=eval_step)
    times, g_vals = envelope.beta.decay_profile()
    reshaping = massera_G(times, g_vals)

    m = config.manifold
    rng = np.random.default_rng(config.seed)
    n_states = min(config.grid.n_points, 50)
    # The reshaping is extremely flat near the equilibrium (values below
    # 1e-12 for algebraic envelopes), so sign checks sample the outer region.
    states = sample_states(m, config.equilibrium, GridSpec(
        n_states, config.grid.radius, config.grid.t0_list), rng, r_min_frac=0.3)

    with _Mapper(workers) as mapper:
        def state_row(state):
            t, x = state
            d = m.dist(x.coords, config.equilibrium.coords)
            v = V.evaluate(t, x)
            lie = V.lie_derivative(t, x)
            return [t, d, v, lie]

        sample_rows = list(mapper(state_row, states))

    v_min = min(r[2] for r in sample_rows)
    lie_max = max(r[3] for r in sample_rows)
    v_at_star = V.evaluate(0.0, config.equilibrium)

    s_probe = np.linspace(0.0, float(reshaping.s_knots[-1]), 64)
    g_gaps = np.diff([reshaping.value(s) for s in s_probe])
    gp_gaps = np.diff([reshaping.derivative(s) for s in s_probe])

    radii = np.linspace(0.4 * config.grid.radius, config.grid.radius, 10)
    direction = m.random_tangent(np.random.default_rng(config.seed + 3),
                                 config.equilibrium.coords, norm=1.0)
    ray_values = [V.evaluate(0.0, ManifoldPoint(m, m.exp(config.equilibrium.coords,
                                                         r * direction)))
                  for r in radii]
    ray_gaps = np.diff(ray_values)

    zero_val = reshaping.value(0.0)
    rows = (
        CheckRow("reshaping-zero", "massera-reshaping", 0.0, zero_val,
                 0.0 if zero_val == 0.0 else -abs(zero_val), zero_val == 0.0),
        CheckRow("reshaping-monotone", "massera-reshaping", 0.0,
                 float(min(g_gaps.min(), gp_gaps.min())),
                 float(min(g_gaps.min(), gp_gaps.min())),
                 bool(g_gaps.min() > 0 and gp_gaps.min() > 0)),
        CheckRow("truncation-tail", "ugas-tail", config.massera.tail_tol,
                 V.tail_bound, (config.massera.tail_tol - V.tail_bound)
                 / config.massera.tail_tol, V.tail_bound <= config.massera.tail_tol),
        CheckRow("positivity", "ugas-positivity", 0.0, v_min, v_min,
                 v_min > 0.0 and abs(v_at_star) < 1e-12),
        CheckRow("decay", "ugas-decay", 0.0, lie_max, -lie_max, lie_max < 0.0),
        CheckRow("radial-monotonicity", "ugas-monotonicity", 0.0,
                 float(ray_gaps.min()), float(ray_gaps.min()),
                 bool(ray_gaps.min() > 0)),
    )
    report = CertificationReport(rows)
    payload = {
        "schema_version": 1,
        "mode": "massera",
        "envelope": envelope.to_json(),
        "certificate": {
            "mode": "massera", "delta": V.horizon, "p": V.p,
            "constants": {"k1": reshaping.k1, "k2": reshaping.k2},
            "tail_bound": V.tail_bound,
        },
        "report": report.to_dict(),
    }
    _write_json(out_dir / "report.json", payload)
    (out_dir / "report.txt").write_text(report.to_text())
    _write_csv(out_dir / "samples.csv", ["t", "distance", "V", "lie_derivative"],
               sample_rows)
    return EXIT_OK if report.verdict else EXIT_CERTIFICATION_FAILED


def run_iss(config: ScenarioConfig, out_dir: Path, workers: int = 1) -> int:
    """Certify the unforced system, then run the disturbance robustness check."""
    if config.disturbance is None:
        raise ConfigError("iss requires a 'disturbance' config section")
    spec = config.build_system()
    # Contract scan before any output: the generator must respect its bound.
    horizon_max = max(config.iss_horizons) + max(config.grid.t0_list)
    check_input_signal(spec.input_signal, spec.input_bound, horizon_max)

    unforced = config.build_system_unforced()
    envelope = _fit_trajectories(config, unforced, config.fit_horizon)
    if not envelope.is_exponential:
        msg = (f"{ANCHOR_ENVELOPE_FIT}: unforced system classifies as "
               f"{envelope.stability_class}, not exponentially stable")
        logger.error(msg)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "report.json", {
            "schema_version": 1, "mode": "iss", "envelope": envelope.to_json(),
            "report": _failure_report(ANCHOR_ENVELOPE_FIT, msg),
        })
        (out_dir / "report.txt").write_text("certification FAILED\n" + msg + "\n")
        return EXIT_CERTIFICATION_FAILED
    L = _estimate_lipschitz(config, unforced.field)
    delta = _resolve_delta(config, envelope)
    out_dir.mkdir(parents=True, exist_ok=True)

    grid = GridSpec(config.grid.n_points, config.grid.radius, config.grid.t0_list)
    with _Mapper(workers) as mapper:
        base_report = verify_converse_certificate(
            unforced.field, config.equilibrium, L, envelope, delta, config.p,
            grid, seed=config.seed, step=config.step,
            envelope_horizon=config.envelope_horizon, map_fn=mapper)
        certificate = make_certificate(unforced.field, config.equilibrium, L,
                                       envelope, delta, config.p, step=config.step)
        if not base_report.verdict:
            payload = {
                "schema_version": 1, "mode": "iss",
                "envelope": envelope.to_json(),
                "certificate": certificate.to_json(),
                "unforced_report": base_report.to_dict(),
                "report": _failure_report("uges-precondition",
                                          "unforced certification failed"),
            }
            _write_json(out_dir / "report.json", payload)
            (out_dir / "report.txt").write_text(base_report.to_text())
            return EXIT_CERTIFICATION_FAILED

        iss_report = iss_certify(spec.field, config.equilibrium, certificate,
                                 spec.input_signal, spec.input_bound,
                                 config.iss_horizons, seed=config.seed,
                                 grid=grid, step=config.step, map_fn=mapper)

    closed = spec.field.with_input_signal(spec.input_signal)
    m = config.manifold
    rng = np.random.default_rng(config.seed + 4)
    v0 = m.random_tangent(rng, config.equilibrium.coords, norm=config.grid.radius)
    x0 = ManifoldPoint(m, m.exp(config.equilibrium.coords, v0))
    t_grid = np.arange(0.0, max(config.iss_horizons) + 1e-9, 0.1)
    traj = flow(closed, 0.0, x0, float(t_grid[-1]), config.step)
    series = []
    stride = max(1, int(round(0.1 / config.step)))
    for i in range(0, len(traj), stride):
        t = float(traj.times[i])
        pt = traj.points[i]
        series.append([t, m.dist(pt, config.equilibrium.coords),
                       certificate.V._evaluate_raw(t, pt),
                       float(np.linalg.norm(np.asarray(spec.input_signal(t))))])

    payload = {
        "schema_version": 1,
        "mode": "iss",
        "envelope": envelope.to_json(),
        "certificate": certificate.to_json(),
        "unforced_report": base_report.to_dict(),
        "report": iss_report.to_dict(),
    }
    _write_json(out_dir / "report.json", payload)
    (out_dir / "report.txt").write_text(iss_report.to_text())
    _write_csv(out_dir / "samples.csv", ["t", "distance", "V", "u_norm"], series)
    return EXIT_OK if iss_report.passed else EXIT_CERTIFICATION_FAILED


def run_flow(config: ScenarioConfig, out_dir: Path) -> int:
    """Integrate one trajectory per start time and dump plot-ready CSV."""
    spec = config.build_system()
    out_dir.mkdir(parents=True, exist_ok=True)
    m = config.manifold
    rng = np.random.default_rng(config.seed)
    v0 = m.random_tangent(rng, config.equilibrium.coords, norm=config.grid.radius)
    x0 = ManifoldPoint(m, m.exp(config.equilibrium.coords, v0))
    field = (spec.field.with_input_signal(spec.input_signal)
             if spec.input_signal is not None else spec.field)
    for i, t0 in enumerate(config.grid.t0_list):
        traj = flow(field, t0, x0, t0 + config.fit_horizon, config.step)
        header, rows = traj.csv_rows()
        header.append("distance")
        for row, pt in zip(rows, traj.points):
            row.append(m.dist(pt, config.equilibrium.coords))
        _write_csv(out_dir / f"trajectory_{i}.csv", header, rows)
    return EXIT_OK


def run_verify_geometry(manifold_name: str, seed: int, n: int, out_dir: Path,
                        inject_fault: bool = False) -> int:
    """Run the geometry property suite and write its report."""
    try:
        manifold = manifold_from_name(manifold_name)
    except GeometryError as err:
        raise ConfigError(str(err)) from err
    if n < 1:
        raise ConfigError("sample count must be >= 1")
    report = run_geometry_suite(manifold, seed, n, inject_fault=inject_fault)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": 1,
        "manifold": manifold.name,
        "seed": seed,
        "n": n,
        "report": report.to_dict(),
        "failing": [r.name for r in report.rows if not r.passed],
    }
    _write_json(out_dir / "report.json", payload)
    (out_dir / "report.txt").write_text(report.to_text())
    return EXIT_OK if report.verdict else EXIT_CERTIFICATION_FAILED
