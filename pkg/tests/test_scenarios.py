"""Scenario parsing, object construction, and deterministic execution."""

import numpy as np
import pytest

from nabla_calc import MetricField, magnetic_example_bundle
from nabla_calc.errors import ConfigError, ResolutionError
from nabla_calc.reports import report_payload
from nabla_calc.scenarios import (
    BUILTINS,
    build_context,
    builtin_scenario,
    list_builtins,
    parse_scenario,
    run_scenario,
)


def tiny_config():
    return {
        "name": "tiny",
        "chart": {"box": [[-1, 1], [-1, 1]], "h": 2 / 24},
        "metric": {"kind": "flat"},
        "bundle": {"kind": "trivial", "fiber_dim": 2},
        "seed": 3,
        "checks": [
            {
                "check": "norm-table",
                "tolerance": 1.0,
                "orders": [0, 1],
                "exponents": [2],
            }
        ],
    }


def test_parse_round_trips_the_tiny_config():
    s = parse_scenario(tiny_config())
    assert s.name == "tiny"
    assert s.chart["box"] == ((-1.0, 1.0), (-1.0, 1.0))
    assert s.chart["fd_order"] == 4
    assert s.seed == 3 and len(s.checks) == 1


@pytest.mark.parametrize(
    "mangle",
    [
        lambda c: c.update(extra_key=1),
        lambda c: c.pop("name"),
        lambda c: c.update(name="bad name with spaces"),
        lambda c: c["chart"].update(h=-0.1),
        lambda c: c["chart"].update(box=[[1, -1]]),
        lambda c: c["chart"].update(fd_order=3),
        lambda c: c["bundle"].update(fiber_dim=0),
        lambda c: c["checks"][0].update(tolerance=0),
        lambda c: c["checks"][0].update(bogus_param=1),
        lambda c: c.update(seed=-4),
        lambda c: c.update(fields={"v": ["x1"]}),
    ],
)
def test_config_errors(mangle):
    cfg = tiny_config()
    mangle(cfg)
    with pytest.raises(ConfigError):
        parse_scenario(cfg)


@pytest.mark.parametrize(
    "mangle",
    [
        lambda c: c["metric"].update(kind="hyperbolic"),
        lambda c: c["bundle"].update(kind="mystery"),
        lambda c: c["checks"].append({"check": "no-such-check", "tolerance": 1.0}),
        lambda c: c.update(embedding={"name": "torus"}),
        lambda c: c["checks"].append(
            {"check": "weighted-duality", "tolerance": 1.0, "form": "ghost"}
        ),
        lambda c: c["checks"].append(
            {"check": "mapping-bound", "tolerance": 1.0, "operator": "ghost"}
        ),
    ],
)
def test_resolution_errors(mangle):
    cfg = tiny_config()
    mangle(cfg)
    with pytest.raises(ResolutionError):
        parse_scenario(cfg)


def test_empty_check_list_gives_empty_passing_report():
    cfg = tiny_config()
    cfg["checks"] = []
    report = run_scenario(parse_scenario(cfg))
    assert report.passed
    assert report.checks == [] and report.norms == []


def test_same_seed_same_payload():
    s = parse_scenario(tiny_config())
    a = report_payload(run_scenario(s))
    b = report_payload(run_scenario(s))
    assert a == b


def test_threaded_run_matches_serial():
    cfg = tiny_config()
    cfg["checks"] = cfg["checks"] + [
        {"check": "norm-table", "tolerance": 1.0, "orders": [0], "exponents": [1]}
    ]
    s = parse_scenario(cfg)
    serial = report_payload(run_scenario(s, threads=1))
    pooled = report_payload(run_scenario(s, threads=2))
    assert serial == pooled


def test_seed_override_changes_digests():
    s = parse_scenario(tiny_config())
    base = run_scenario(s)
    other = run_scenario(s, seed=99)
    assert other.seed == 99
    assert base.checks[0].digest != other.checks[0].digest


def test_grid_overrides():
    s = parse_scenario(tiny_config())
    ctx = build_context(s, h=2 / 12, fd_order=2)
    assert ctx.grid.shape == (13, 13)
    assert ctx.grid.fd_order == 2


def test_context_matches_hand_built_objects():
    cfg = tiny_config()
    cfg["bundle"] = {"kind": "magnetic-example"}
    cfg["weight"] = {"rho": "2 + x1", "admissible": True}
    cfg["fields"] = {"spin": ["x2", "-x1"]}
    s = parse_scenario(cfg)
    ctx = build_context(s)
    grid = ctx.grid
    assert np.array_equal(ctx.metric.values, MetricField.flat(grid).values)
    want = magnetic_example_bundle(grid)
    assert np.allclose(ctx.bundle.potentials, want.potentials)
    assert np.allclose(ctx.weight.rho, 2 + grid.coords[0])
    assert np.allclose(ctx.fields["spin"][..., 0], grid.coords[1])
    assert np.allclose(ctx.fields["spin"][..., 1], -grid.coords[0])


def test_conformal_metric_from_expression():
    cfg = tiny_config()
    cfg["metric"] = {"kind": "conformal", "phi": "x1*x2/4"}
    ctx = build_context(parse_scenario(cfg))
    grid = ctx.grid
    phi = grid.coords[0] * grid.coords[1] / 4
    want = MetricField.conformal(grid, phi)
    assert np.allclose(ctx.metric.values, want.values)


def test_complex_weight_expression_is_rejected():
    cfg = tiny_config()
    cfg["weight"] = {"rho": "exp(i*x1)"}
    with pytest.raises(ConfigError):
        build_context(parse_scenario(cfg))


def test_operator_and_form_construction():
    cfg = tiny_config()
    cfg["embedding"] = {"name": "identity", "frechet": True}
    cfg["operators"] = {
        "drift": {
            "form": "nabla",
            "coefficients": [
                [1, [["1", "0", "0", "0"], ["0", "1", "0", "0"]]]
            ],
        }
    }
    cfg["forms"] = {
        "mass": {"half_order": 0, "table": [[0, 0, [["1", "0"], ["0", "1"]]]]}
    }
    ctx = build_context(parse_scenario(cfg))
    op = ctx.nabla_ops["drift"]
    assert op.coefficients.order == 1
    assert np.allclose(op.coefficients.entries[0], 0.0)
    form = ctx.bidiff_forms["mass"]
    assert form.half_order == 0
    assert ctx.gens is not None


def test_misshaped_operator_matrix_is_rejected():
    cfg = tiny_config()
    cfg["operators"] = {
        "bad": {"form": "nabla", "coefficients": [[1, [["1", "0"], ["0", "1"]]]]}
    }
    with pytest.raises(ConfigError):
        build_context(parse_scenario(cfg))


def test_builtins_parse_and_deep_copy():
    assert list_builtins() == sorted(BUILTINS)
    for name in list_builtins():
        cfg = builtin_scenario(name)
        parse_scenario(cfg)
        cfg["seed"] = 12345
        assert BUILTINS[name].get("seed") != 12345
    with pytest.raises(ResolutionError):
        builtin_scenario("missing")


def test_embedded_metric_needs_embedding():
    cfg = tiny_config()
    cfg["metric"] = {"kind": "embedded"}
    with pytest.raises(ConfigError):
        parse_scenario(cfg)
