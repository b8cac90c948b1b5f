"""Scenario configs: validation, object construction, and check execution.

A scenario is a JSON-shaped dict naming a chart, a metric, a bundle, and
optionally a weight, an embedding, vector fields, operators, and
bidifferential forms, all through small closed-form expression strings.
Its check list invokes registered checks by name with tolerances.  The
same seed always produces the same report, and checks may run in
parallel threads since each draws from its own counter-based stream.
"""

import copy
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bidiff import BidiffSpec
from .bundles import BundleSpec, FockSlice, magnetic_example_bundle
from .checks import CHECKS, allowed_params
from .errors import ConfigError, NablaCalcError, ResolutionError
from .expressions import evaluate
from .generators import (
    build_generators,
    graph_embedding,
    identity_embedding,
    polar_isometrize,
    random_embedding,
    sphere_ambient_embedding,
)
from .geometry import MetricField, WeightPair
from .grid import ChartGrid
from .operators import MixedOpSpec, MixedTerm, NablaOpSpec
from .reports import CheckRow, Report
from .sections import seeded_rng

_TOP_KEYS = (
    "name",
    "chart",
    "metric",
    "bundle",
    "weight",
    "embedding",
    "fields",
    "operators",
    "forms",
    "checks",
    "seed",
    "out",
)
_METRIC_KINDS = ("flat", "conformal", "matrix", "embedded")
_EMBEDDING_NAMES = ("identity", "sphere-ambient", "graph", "random")


@dataclass
class Scenario:
    """A validated scenario config, still in declarative form."""

    name: str
    chart: dict
    metric: dict
    bundle: dict
    weight: dict | None
    embedding: dict | None
    fields: dict
    operators: dict
    forms: dict
    checks: list
    seed: int
    out: str | None


@dataclass
class CheckContext:
    """Everything a scenario built, handed to each check."""

    name: str
    grid: object
    metric: object
    bundle: object
    weight: object = None
    gens: object = None
    fields: dict = field(default_factory=dict)
    nabla_ops: dict = field(default_factory=dict)
    bidiff_forms: dict = field(default_factory=dict)
    seed: int = 0


def _check_keys(cfg, allowed, what):
    extra = sorted(set(cfg) - set(allowed))
    if extra:
        raise ConfigError(f"{what} has unknown keys {extra}")


def _need(cfg, key, what):
    if key not in cfg:
        raise ConfigError(f"{what} is missing the {key!r} entry")
    return cfg[key]


def parse_scenario(cfg):
    """Validate a config dict into a Scenario; resolve all referenced names."""
    if not isinstance(cfg, dict):
        raise ConfigError(f"scenario config must be an object, got {type(cfg).__name__}")
    _check_keys(cfg, _TOP_KEYS, "scenario")
    name = _need(cfg, "name", "scenario")
    if not isinstance(name, str) or not name or not all(
        c.isalnum() or c in "._-" for c in name
    ):
        raise ConfigError(f"scenario name {name!r} must be a [A-Za-z0-9._-] string")

    chart = dict(_need(cfg, "chart", "scenario"))
    _check_keys(chart, ("box", "h", "margin", "fd_order"), "chart")
    box = _need(chart, "box", "chart")
    try:
        box = tuple((float(lo), float(hi)) for lo, hi in box)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"chart box must list [lo, hi] pairs: {exc}") from exc
    if not box or any(hi <= lo for lo, hi in box):
        raise ConfigError(f"chart box {box} needs lo < hi on every axis")
    h = float(_need(chart, "h", "chart"))
    if h <= 0:
        raise ConfigError(f"chart spacing must be positive, got {h}")
    fd_order = int(chart.get("fd_order", 4))
    if fd_order not in (2, 4):
        raise ConfigError(f"fd_order must be 2 or 4, got {fd_order}")
    margin = chart.get("margin")
    if margin is not None and int(margin) < 0:
        raise ConfigError(f"chart margin must be >= 0, got {margin}")
    chart = {
        "box": box,
        "h": h,
        "fd_order": fd_order,
        "margin": None if margin is None else int(margin),
    }

    metric = dict(_need(cfg, "metric", "scenario"))
    kind = _need(metric, "kind", "metric")
    if kind not in _METRIC_KINDS:
        raise ResolutionError(f"unknown metric kind {kind!r}")
    if kind == "conformal":
        _need(metric, "phi", "conformal metric")
    if kind == "matrix":
        _need(metric, "entries", "matrix metric")

    bundle = dict(_need(cfg, "bundle", "scenario"))
    bkind = _need(bundle, "kind", "bundle")
    if bkind == "trivial":
        d = int(_need(bundle, "fiber_dim", "bundle"))
        if d < 1:
            raise ConfigError(f"fiber_dim must be >= 1, got {d}")
    elif bkind != "magnetic-example":
        raise ResolutionError(f"unknown bundle kind {bkind!r}")

    weight = cfg.get("weight")
    if weight is not None:
        weight = dict(weight)
        _check_keys(weight, ("rho", "f0", "admissible"), "weight")
        _need(weight, "rho", "weight")

    embedding = cfg.get("embedding")
    if embedding is not None:
        embedding = dict(embedding)
        _check_keys(
            embedding,
            ("name", "heights", "ambient", "isometrize", "amplitude", "frechet"),
            "embedding",
        )
        ename = _need(embedding, "name", "embedding")
        if ename not in _EMBEDDING_NAMES:
            raise ResolutionError(f"unknown embedding {ename!r}")
        if ename == "graph":
            _need(embedding, "heights", "graph embedding")
        if ename == "random":
            _need(embedding, "ambient", "random embedding")
    if metric["kind"] == "embedded" and embedding is None:
        raise ConfigError("an embedded metric needs an embedding")

    fields = dict(cfg.get("fields", {}))
    for fname, comps in fields.items():
        if not isinstance(comps, (list, tuple)) or len(comps) != len(box):
            raise ConfigError(
                f"field {fname!r} needs one component expression per axis"
            )

    operators = dict(cfg.get("operators", {}))
    for oname, ocfg in operators.items():
        _check_keys(
            ocfg, ("form", "coefficients", "terms", "class"), f"operator {oname!r}"
        )
        form = _need(ocfg, "form", f"operator {oname!r}")
        if form == "nabla":
            _need(ocfg, "coefficients", f"operator {oname!r}")
        elif form == "mixed":
            terms = _need(ocfg, "terms", f"operator {oname!r}")
            for term in terms:
                for ref in _need(term, "fields", f"operator {oname!r} term"):
                    if ref not in fields:
                        raise ResolutionError(
                            f"operator {oname!r} references unknown field {ref!r}"
                        )
        else:
            raise ConfigError(f"operator {oname!r} form must be nabla or mixed")

    forms = dict(cfg.get("forms", {}))
    for fname, fcfg in forms.items():
        _check_keys(fcfg, ("half_order", "table", "class"), f"form {fname!r}")
        _need(fcfg, "half_order", f"form {fname!r}")
        _need(fcfg, "table", f"form {fname!r}")

    checks = list(cfg.get("checks", []))
    for entry in checks:
        if not isinstance(entry, dict) or "check" not in entry:
            raise ConfigError(f"check entries need a 'check' name, got {entry!r}")
        allowed = allowed_params(entry["check"])
        _check_keys(entry, allowed, f"check {entry['check']!r}")
        tol = _need(entry, "tolerance", f"check {entry['check']!r}")
        if not isinstance(tol, (int, float)) or not tol > 0:
            raise ConfigError(
                f"check {entry['check']!r} tolerance must be positive, got {tol!r}"
            )
        form_ref = entry.get("form")
        if form_ref is not None and form_ref not in forms:
            raise ResolutionError(
                f"check {entry['check']!r} references unknown form {form_ref!r}"
            )
        op_ref = entry.get("operator")
        if op_ref is not None and op_ref not in operators:
            raise ResolutionError(
                f"check {entry['check']!r} references unknown operator {op_ref!r}"
            )

    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    out = cfg.get("out")
    return Scenario(
        name=name,
        chart=chart,
        metric=metric,
        bundle=bundle,
        weight=weight,
        embedding=embedding,
        fields=fields,
        operators=operators,
        forms=forms,
        checks=checks,
        seed=seed,
        out=out,
    )


def _real_field(expr, grid, what):
    values = np.broadcast_to(np.asarray(evaluate(expr, grid)), grid.shape)
    if np.iscomplexobj(values) and np.max(np.abs(values.imag)) > 0:
        raise ConfigError(f"{what} expression {expr!r} must be real")
    return np.ascontiguousarray(values.real.astype(float))


def _matrix_field(entries, grid, what):
    if not entries or not all(isinstance(row, (list, tuple)) for row in entries):
        raise ConfigError(f"{what} must be a matrix of expression strings")
    cols = len(entries[0])
    if cols == 0 or any(len(row) != cols for row in entries):
        raise ConfigError(f"{what} rows must all have the same length")
    out = np.zeros(grid.shape + (len(entries), cols), dtype=complex)
    for a, row in enumerate(entries):
        for b, expr in enumerate(row):
            out[..., a, b] = np.broadcast_to(
                np.asarray(evaluate(expr, grid)), grid.shape
            )
    return out


def _build_grid(scenario, h=None, fd_order=None):
    chart = scenario.chart
    h_val = float(h) if h is not None else chart["h"]
    if h_val <= 0:
        raise ConfigError(f"grid spacing must be positive, got {h_val}")
    fd = int(fd_order) if fd_order is not None else chart["fd_order"]
    shape = tuple(
        int(round((hi - lo) / h_val)) + 1 for lo, hi in chart["box"]
    )
    if any(m < 9 for m in shape):
        raise ConfigError(
            f"spacing {h_val} leaves fewer than 9 points per axis: {shape}"
        )
    return ChartGrid(
        chart["box"], shape, fd_order=fd, support_margin=chart["margin"]
    )


def _build_embedding(scenario, grid, seed):
    cfg = scenario.embedding
    if cfg is None:
        return None, None
    name = cfg["name"]
    if name == "identity":
        return identity_embedding(
            grid, isometric=scenario.metric["kind"] == "flat"
        ), None
    if name == "sphere-ambient":
        return sphere_ambient_embedding(grid)
    if name == "graph":
        heights = np.stack(
            [
                _real_field(expr, grid, "graph height")
                for expr in cfg["heights"]
            ],
            axis=-1,
        )
        return graph_embedding(grid, heights), None
    rng = seeded_rng(seed, f"{scenario.name}:embedding")
    kw = {}
    if "amplitude" in cfg:
        kw["amplitude"] = float(cfg["amplitude"])
    return random_embedding(grid, int(cfg["ambient"]), rng, **kw), None


def _build_metric(scenario, grid, emb, induced):
    kind = scenario.metric["kind"]
    if kind == "flat":
        return MetricField.flat(grid)
    if kind == "conformal":
        return MetricField.conformal(
            grid, _real_field(scenario.metric["phi"], grid, "conformal factor")
        )
    if kind == "matrix":
        values = _matrix_field(scenario.metric["entries"], grid, "metric entries")
        if np.max(np.abs(values.imag)) > 0:
            raise ConfigError("metric entries must be real")
        return MetricField(grid, values.real)
    if induced is not None:
        return induced
    return MetricField(grid, emb.gram())


def _build_bundle(scenario, grid):
    cfg = scenario.bundle
    if cfg["kind"] == "magnetic-example":
        return magnetic_example_bundle(grid)
    d = int(cfg["fiber_dim"])
    pots = None
    if cfg.get("potentials") is not None:
        mats = cfg["potentials"]
        if len(mats) != grid.dim:
            raise ConfigError(
                f"potentials need one matrix per axis, got {len(mats)} "
                f"for a {grid.dim}d chart"
            )
        pots = np.stack(
            [
                _matrix_field(mat, grid, f"potential matrix {k + 1}")
                for k, mat in enumerate(mats)
            ],
            axis=grid.dim,
        )
    fiber_metric = None
    if cfg.get("fiber_metric") is not None:
        fiber_metric = _matrix_field(cfg["fiber_metric"], grid, "fiber metric")
    return BundleSpec(grid, d, potentials=pots, fiber_metric=fiber_metric)


def _build_operators(scenario, grid, bundle, metric, fields):
    n = grid.dim
    d = bundle.fiber_dim
    ops = {}
    for name, cfg in scenario.operators.items():
        tag = cfg.get("class", "smooth")
        if cfg["form"] == "nabla":
            by_j = {}
            for item in cfg["coefficients"]:
                j = int(item[0])
                mat = _matrix_field(item[1], grid, f"operator {name!r} level {j}")
                want = (d, n**j * d)
                if mat.shape[-2:] != want:
                    raise ConfigError(
                        f"operator {name!r} level {j} coefficient must be "
                        f"{want[0]} x {want[1]}, got {mat.shape[-2]} x {mat.shape[-1]}"
                    )
                by_j[j] = mat
            if not by_j:
                raise ConfigError(f"operator {name!r} has no coefficient levels")
            entries = [
                by_j.get(j, np.zeros(grid.shape + (d, n**j * d), dtype=complex))
                for j in range(max(by_j) + 1)
            ]
            ops[name] = NablaOpSpec(
                bundle, bundle, metric, FockSlice(grid, d, d, entries), tag
            )
        else:
            terms = []
            for term in cfg["terms"]:
                coeff = _matrix_field(
                    term["coefficient"], grid, f"operator {name!r} coefficient"
                )
                terms.append(
                    MixedTerm(coeff, fields=[fields[ref] for ref in term["fields"]])
                )
            ops[name] = MixedOpSpec(
                bundle, bundle, metric, terms, coefficient_class=tag
            )
    return ops


def _build_forms(scenario, grid, bundle, metric):
    n = grid.dim
    d = bundle.fiber_dim
    forms = {}
    for name, cfg in scenario.forms.items():
        m = int(cfg["half_order"])
        table = {}
        for item in cfg["table"]:
            i, j = int(item[0]), int(item[1])
            mat = _matrix_field(item[2], grid, f"form {name!r} entry ({i}, {j})")
            want = (n**j * d, n**i * d)
            if mat.shape[-2:] != want:
                raise ConfigError(
                    f"form {name!r} entry ({i}, {j}) must be "
                    f"{want[0]} x {want[1]}, got {mat.shape[-2]} x {mat.shape[-1]}"
                )
            table[(i, j)] = mat
        forms[name] = BidiffSpec(
            bundle, bundle, metric, m, table, cfg.get("class", "smooth")
        )
    return forms


def build_context(scenario, h=None, fd_order=None, seed=None):
    """Construct every object a scenario declares, ready for its checks."""
    seed_used = scenario.seed if seed is None else int(seed)
    try:
        grid = _build_grid(scenario, h, fd_order)
        emb, induced = _build_embedding(scenario, grid, seed_used)
        metric = _build_metric(scenario, grid, emb, induced)
        gens = None
        if emb is not None:
            if scenario.embedding.get("isometrize"):
                emb = polar_isometrize(emb, metric)
            gens = build_generators(
                emb, metric, frechet=bool(scenario.embedding.get("frechet", False))
            )
        bundle = _build_bundle(scenario, grid)
        fields = {
            fname: np.stack(
                [
                    _real_field(expr, grid, f"field {fname!r}")
                    for expr in comps
                ],
                axis=-1,
            )
            for fname, comps in scenario.fields.items()
        }
        weight = None
        if scenario.weight is not None:
            rho = _real_field(scenario.weight["rho"], grid, "weight rho")
            f0 = None
            if scenario.weight.get("f0") is not None:
                f0 = _real_field(scenario.weight["f0"], grid, "weight f0")
            weight = WeightPair(
                grid, rho, f0=f0, admissible=bool(scenario.weight.get("admissible"))
            )
        nabla_ops = _build_operators(scenario, grid, bundle, metric, fields)
        forms = _build_forms(scenario, grid, bundle, metric)
    except ConfigError:
        raise
    except NablaCalcError as exc:
        raise ConfigError(f"scenario {scenario.name!r} failed to build: {exc}") from exc
    return CheckContext(
        name=scenario.name,
        grid=grid,
        metric=metric,
        bundle=bundle,
        weight=weight,
        gens=gens,
        fields=fields,
        nabla_ops=nabla_ops,
        bidiff_forms=forms,
        seed=seed_used,
    )


def _thread_count(threads):
    if threads is not None:
        return max(1, int(threads))
    raw = os.environ.get("NABLA_CALC_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"NABLA_CALC_THREADS must be an integer, got {raw!r}") from exc


def run_scenario(scenario, h=None, fd_order=None, seed=None, threads=None):
    """Execute every configured check; returns the assembled Report."""
    seed_used = scenario.seed if seed is None else int(seed)
    workers = _thread_count(threads)
    ctx = build_context(scenario, h=h, fd_order=fd_order, seed=seed_used)

    def run_one(entry):
        name = entry["check"]
        fn = CHECKS[name][0]
        params = {k: v for k, v in entry.items() if k != "check"}
        digest = hashlib.sha256(
            json.dumps(
                {"scenario": scenario.name, "seed": seed_used, "check": entry},
                sort_keys=True,
            ).encode()
        ).hexdigest()[:16]
        start = time.perf_counter()
        try:
            out = fn(ctx, params)
        except NablaCalcError as exc:
            raise type(exc)(f"check {name!r}: {exc}") from exc
        runtime = (time.perf_counter() - start) * 1000.0
        row = CheckRow(
            check=name,
            digest=digest,
            measured=out["measured"],
            bound=out["bound"],
            tolerance=float(params["tolerance"]),
            passed=out["passed"],
            runtime_ms=runtime,
        )
        return row, out["norms"]

    if workers > 1 and len(scenario.checks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, scenario.checks))
    else:
        outcomes = [run_one(entry) for entry in scenario.checks]
    report = Report(scenario=scenario.name, seed=seed_used)
    for row, norms in outcomes:
        report.checks.append(row)
        report.norms.extend(norms)
    return report


def _box(*pairs):
    return [list(p) for p in pairs]


BUILTINS = {
    "magnetic-example": {
        "name": "magnetic-example",
        "chart": {"box": _box((-1, 1), (-1, 1)), "h": 2 / 128, "fd_order": 4},
        "metric": {"kind": "flat"},
        "bundle": {"kind": "magnetic-example"},
        "seed": 20,
        "checks": [
            {"check": "multiindex-formulas", "tolerance": 1e-5, "trials": 20},
            {"check": "leibniz-rule", "tolerance": 1e-5, "trials": 5},
            {"check": "curvature-commutator", "tolerance": 1e-5, "trials": 5},
        ],
    },
    "sphere-ffc": {
        "name": "sphere-ffc",
        "chart": {"box": _box((-1, 1), (-1, 1)), "h": 2 / 64, "fd_order": 4},
        "metric": {"kind": "embedded"},
        "bundle": {"kind": "trivial", "fiber_dim": 1},
        "embedding": {"name": "sphere-ambient", "frechet": True},
        "seed": 21,
        "checks": [
            {"check": "generator-identities", "tolerance": 1e-5, "trials": 5},
            {
                "check": "norm-table",
                "tolerance": 1.0,
                "orders": [0, 1, 2],
                "exponents": [2, "inf"],
            },
        ],
    },
    "half-line-weighted": {
        "name": "half-line-weighted",
        "chart": {"box": _box((1, 3)), "h": 2 / 128, "fd_order": 4},
        "metric": {"kind": "flat"},
        "bundle": {"kind": "trivial", "fiber_dim": 1},
        "weight": {"rho": "x1", "admissible": True},
        "embedding": {"name": "identity", "frechet": True},
        "forms": {
            "mass-gradient": {
                "half_order": 1,
                "table": [[0, 0, [["1"]]], [1, 1, [["1"]]]],
            }
        },
        "seed": 22,
        "checks": [
            {"check": "weighted-ratio", "tolerance": 0.01, "orders": [0, 1], "p": 2},
            {
                "check": "weighted-duality",
                "tolerance": 1e-6,
                "form": "mass-gradient",
                "pairs": 3,
            },
        ],
    },
    "random-embedding": {
        "name": "random-embedding",
        "chart": {
            "box": _box((-1, 1), (-1, 1)),
            "h": 2 / 96,
            "fd_order": 4,
            "margin": 8,
        },
        "metric": {"kind": "conformal", "phi": "0.1*x1*x2 - 0.05*x2"},
        "bundle": {"kind": "trivial", "fiber_dim": 1},
        "embedding": {
            "name": "random",
            "ambient": 4,
            "isometrize": True,
            "frechet": True,
        },
        "seed": 23,
        "checks": [
            {"check": "generator-identities", "tolerance": 1e-5, "trials": 5},
            {
                "check": "operator-rewrite",
                "tolerance": 1e-3,
                "specs": 5,
                "max_order": 2,
            },
        ],
    },
    "covering-suite": {
        "name": "covering-suite",
        "chart": {"box": _box((-1, 1), (-1, 1)), "h": 2 / 96, "fd_order": 4},
        "metric": {"kind": "flat"},
        "bundle": {"kind": "trivial", "fiber_dim": 2},
        "seed": 24,
        "checks": [
            {
                "check": "covering-bounds",
                "tolerance": 1e-10,
                "coverings": 10,
                "s": 1,
                "exponents": [1, 2, "inf"],
            },
            {
                "check": "norm-table",
                "tolerance": 1.0,
                "orders": [0, 1],
                "exponents": [1, 2, "inf"],
            },
        ],
    },
    "flat-operators": {
        "name": "flat-operators",
        "chart": {
            "box": _box((-1, 1), (-1, 1)),
            "h": 2 / 128,
            "fd_order": 4,
            "margin": 8,
        },
        "metric": {"kind": "flat"},
        "bundle": {"kind": "magnetic-example"},
        "embedding": {"name": "identity", "frechet": True},
        "operators": {
            "drift-gradient": {
                "form": "nabla",
                "class": "totally-bounded",
                "coefficients": [
                    [0, [["cos(x2)/4", "0"], ["0", "cos(x2)/4"]]],
                    [
                        1,
                        [
                            ["sin(x1)/3", "0", "1/2", "0"],
                            ["0", "sin(x1)/3", "0", "1/2"],
                        ],
                    ],
                ],
            }
        },
        "seed": 25,
        "checks": [
            {"check": "adjoint-pairing", "tolerance": 1e-5, "pairs": 10},
            {
                "check": "mapping-bound",
                "tolerance": 1.0,
                "operator": "drift-gradient",
                "s": 1,
                "p": 2,
                "trials": 10,
            },
            {
                "check": "divergence-duality",
                "tolerance": 1e-5,
                "pairs": 10,
                "half_orders": [1, 2],
            },
            {"check": "norm-equivalence", "tolerance": 1e-9, "trials": 25, "s": 2},
            {
                "check": "multiplication-property",
                "tolerance": 1e-9,
                "trials": 25,
                "s": 2,
                "p": "inf",
                "q": 2,
                "r": 2,
            },
        ],
    },
}


def list_builtins():
    return sorted(BUILTINS)


def builtin_scenario(name):
    """A deep copy of a built-in scenario config."""
    if name not in BUILTINS:
        raise ResolutionError(
            f"no built-in scenario named {name!r}; available: {list_builtins()}"
        )
    return copy.deepcopy(BUILTINS[name])
