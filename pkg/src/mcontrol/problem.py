"""Problem files: JSON documents describing a coupled-system instance.

A problem file is a single JSON object with a ``schema`` field.  Spectra,
control vectors and initial data may be given as explicit lists or as small
generator descriptors; parsing expands every generator, and emitting writes
the canonical explicit form, so ``emit(parse(f))`` is a fixed point.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .spectrum import CoupledModel, build_coupled_model

SCHEMA = "mcontrol.problem/1"
B_NORMALIZED = math.sqrt(2.0 / math.pi) * math.pi

TOLERANCE_KEYS = ("duplicate_tol", "overlap_tol", "resonance_guard", "solver_tol", "verify_tol", "cond_warn")
OPTION_KEYS = ("tikhonov", "n_max", "rho", "epsilon", "free_value")

__all__ = [
    "SCHEMA",
    "ProblemFile",
    "parse_problem",
    "problem_from_document",
    "canonicalize",
    "emit_problem",
    "preset_problem",
    "PRESETS",
]


@dataclass(frozen=True, eq=False)
class ProblemFile:
    """Fully expanded problem description."""

    name: str
    spec_y: np.ndarray
    spec_z: np.ndarray
    coupling: np.ndarray
    b_y: np.ndarray
    b_z: np.ndarray
    x0_y: np.ndarray
    x0_z: np.ndarray
    t1: float
    n_synth: int
    n_verify: int
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def build_model(self) -> CoupledModel:
        return build_coupled_model(self.spec_y, self.spec_z, self.coupling, self.b_y, self.b_z, self.t1,
                                   duplicate_tol=self.tolerances.get("duplicate_tol"))

    @property
    def x0(self):
        return (self.x0_y, self.x0_z)

    def to_document(self) -> dict:
        """Canonical explicit JSON document."""
        return {
            "schema": SCHEMA,
            "name": self.name,
            "t1": float(self.t1),
            "spec_y": {"kind": "explicit", "values": [float(v) for v in self.spec_y]},
            "spec_z": {"kind": "explicit", "values": [float(v) for v in self.spec_z]},
            "coupling": {"kind": "dense", "rows": [[float(v) for v in row] for row in self.coupling]},
            "b_y": {"kind": "explicit", "values": [float(v) for v in self.b_y]},
            "b_z": {"kind": "explicit", "values": [float(v) for v in self.b_z]},
            "x0_y": {"kind": "explicit", "values": [float(v) for v in self.x0_y]},
            "x0_z": {"kind": "explicit", "values": [float(v) for v in self.x0_z]},
            "n_synth": int(self.n_synth),
            "n_verify": int(self.n_verify),
            "tolerances": {k: self.tolerances[k] for k in sorted(self.tolerances)},
            "options": {k: self.options[k] for k in sorted(self.options)},
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProblemFile):
            return NotImplemented
        return self.to_document() == other.to_document()

    def replace(self, **changes) -> ProblemFile:
        doc = self.to_document()
        for key, value in changes.items():
            if isinstance(value, np.ndarray):
                value = value.tolist()
            doc[key] = value
        return problem_from_document(doc)


def _line_of(text: str | None, key: str):
    if not text:
        return None
    match = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, match.start()) + 1 if match else None


class _Reader:
    """Collects field-level decoding with line context and invariant violations."""

    def __init__(self, doc: dict, text: str | None):
        self.doc = doc
        self.text = text
        self.violations: list[str] = []

    def fail(self, key, message):
        raise ParseError(message, line=_line_of(self.text, key), field=key)

    def number(self, key, value, *, integer=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(key, f"expected a number, got {type(value).__name__}")
        if integer:
            if isinstance(value, float) and not value.is_integer():
                self.fail(key, f"expected an integer, got {value}")
            return int(value)
        return float(value)

    def numbers(self, key, values):
        if not isinstance(values, list):
            self.fail(key, "expected a list of numbers")
        return np.array([self.number(key, v) for v in values], dtype=float)

    def vector(self, key, spec, count):
        """Expand an eigenvalue or coordinate generator."""
        if isinstance(spec, list):
            return self.numbers(key, spec)
        if not isinstance(spec, dict) or "kind" not in spec:
            self.fail(key, "expected a list or an object with a 'kind'")
        kind = spec["kind"]
        n = self.number(key, spec["count"], integer=True) if "count" in spec else count
        if kind == "explicit":
            values = self.numbers(key, spec.get("values"))
            if "count" in spec and n != len(values):
                self.violations.append(f"{key}: count {n} does not match {len(values)} explicit values")
            return values
        if n is None:
            self.fail(key, f"generator '{kind}' needs a 'count'")
        if n < 0:
            self.violations.append(f"{key}: count must be non-negative")
            return np.zeros(0)
        m = np.arange(1, n + 1, dtype=float)
        scale = self.number(key, spec.get("scale", 1.0))
        if kind == "shifted_square":
            return self.number(key, spec.get("shift", 0.0)) - m**2
        if kind == "square":
            return -(m**2)
        if kind == "alternating_over_m":
            return scale * (-1.0) ** (m - 1) / m
        if kind == "harmonic":
            return scale / m
        if kind == "exp_decay":
            return scale * np.exp(-self.number(key, spec.get("rate", 1.0)) * m)
        if kind == "zero":
            return np.zeros(n)
        if kind == "constant":
            return np.full(n, scale)
        self.fail(key, f"unknown generator kind '{kind}'")

    def coupling(self, spec, ny, nz):
        key = "coupling"
        if isinstance(spec, list):
            spec = {"kind": "dense", "rows": spec}
        if not isinstance(spec, dict) or "kind" not in spec:
            self.fail(key, "expected an object with a 'kind'")
        kind = spec["kind"]
        if kind == "identity_scaled":
            return self.number(key, spec.get("alpha", 1.0)) * np.eye(ny, nz)
        if kind == "zero":
            return np.zeros((ny, nz))
        if kind == "dense":
            rows = spec.get("rows")
            if not isinstance(rows, list):
                self.fail(key, "'rows' must be a list of lists")
            out = []
            for i, row in enumerate(rows):
                vals = self.numbers(key, row)
                if len(vals) != nz:
                    self.violations.append(f"coupling row {i} has length {len(vals)}, expected {nz}")
                out.append(vals)
            if len(out) != ny:
                self.violations.append(f"coupling has {len(out)} rows, expected {ny}")
            if self.violations:
                return np.zeros((ny, nz))
            return np.array(out, dtype=float).reshape(ny, nz)
        self.fail(key, f"unknown coupling kind '{kind}'")


def problem_from_document(doc: dict, text: str | None = None) -> ProblemFile:
    """Validate a decoded document and expand its generators."""
    if not isinstance(doc, dict):
        raise ParseError("top-level JSON value must be an object")
    rd = _Reader(doc, text)
    schema = doc.get("schema")
    if schema != SCHEMA:
        rd.fail("schema", f"unsupported schema {schema!r}, expected {SCHEMA!r}")
    for key in ("spec_y", "spec_z", "t1"):
        if key not in doc:
            rd.fail(key, "required field is missing")
    spec_y = rd.vector("spec_y", doc["spec_y"], None)
    spec_z = rd.vector("spec_z", doc["spec_z"], None)
    ny, nz = len(spec_y), len(spec_z)
    coupling = rd.coupling(doc.get("coupling", {"kind": "zero"}), ny, nz)
    zero = {"kind": "zero"}
    b_y = rd.vector("b_y", doc.get("b_y", zero), ny)
    b_z = rd.vector("b_z", doc.get("b_z", zero), nz)
    x0_y = rd.vector("x0_y", doc.get("x0_y", zero), ny)
    x0_z = rd.vector("x0_z", doc.get("x0_z", zero), nz)
    for key, vec, n in (("b_y", b_y, ny), ("b_z", b_z, nz), ("x0_y", x0_y, ny), ("x0_z", x0_z, nz)):
        if len(vec) != n:
            rd.violations.append(f"{key} has length {len(vec)}, expected {n}")
    t1 = rd.number("t1", doc["t1"])
    if not t1 > 0:
        rd.violations.append(f"t1 must be positive, got {t1}")
    n_synth = rd.number("n_synth", doc.get("n_synth", min(8, ny)), integer=True)
    n_verify = rd.number("n_verify", doc.get("n_verify", min(2 * n_synth, ny)), integer=True)
    if not 1 <= n_synth <= max(ny, 1):
        rd.violations.append(f"n_synth={n_synth} must lie in [1, {ny}]")
    if not n_synth <= n_verify <= ny:
        rd.violations.append(f"n_verify={n_verify} must lie in [n_synth, {ny}]")
    tolerances = doc.get("tolerances", {}) or {}
    if not isinstance(tolerances, dict):
        rd.fail("tolerances", "expected an object")
    tol = {}
    for key, value in tolerances.items():
        if key not in TOLERANCE_KEYS:
            rd.fail("tolerances", f"unknown tolerance '{key}'")
        tol[key] = rd.number(key, value)
        if not tol[key] > 0:
            rd.violations.append(f"tolerance {key} must be positive, got {tol[key]}")
    options = doc.get("options", {}) or {}
    if not isinstance(options, dict):
        rd.fail("options", "expected an object")
    opts = {}
    for key, value in options.items():
        if key not in OPTION_KEYS:
            rd.fail("options", f"unknown option '{key}'")
        if value is None:
            opts[key] = None
        else:
            opts[key] = rd.number(key, value, integer=(key == "n_max"))
    if opts.get("tikhonov") is not None and opts["tikhonov"] < 0:
        rd.violations.append("option tikhonov must be non-negative")
    if rd.violations:
        raise ValidationError(rd.violations)
    name = str(doc.get("name", "problem"))
    return ProblemFile(name, spec_y, spec_z, coupling, b_y, b_z, x0_y, x0_z, t1, n_synth, n_verify, tol, opts)


def parse_problem(path) -> ProblemFile:
    """Read, decode and validate a problem file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc
    return problem_from_document(doc, text)


def canonicalize(doc: dict) -> dict:
    """Explicit form of a document (generators expanded, defaults filled)."""
    return problem_from_document(doc).to_document()


def emit_problem(problem: ProblemFile, path=None) -> str:
    """Serialize to canonical JSON; also write to ``path`` when given."""
    text = json.dumps(problem.to_document(), indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _example1(modes, t1, alpha, normalization):
    scale = B_NORMALIZED if normalization == "orthonormal" else math.pi
    return {
        "schema": SCHEMA,
        "name": "example1",
        "t1": t1,
        "spec_y": {"kind": "shifted_square", "count": modes, "shift": 1.0},
        "spec_z": {"kind": "square", "count": modes},
        "coupling": {"kind": "identity_scaled", "alpha": alpha},
        "b_y": {"kind": "alternating_over_m", "scale": scale},
        "b_z": {"kind": "zero"},
        "x0_y": {"kind": "harmonic", "scale": 1.0},
        "x0_z": {"kind": "harmonic", "scale": 1.0},
        "n_synth": min(8, modes),
        "n_verify": min(16, modes),
    }


def _example2(modes, t1, alpha, normalization):
    scale = B_NORMALIZED if normalization == "orthonormal" else math.pi
    return {
        "schema": SCHEMA,
        "name": "example2",
        "t1": t1,
        "spec_y": {"kind": "square", "count": modes},
        "spec_z": {"kind": "square", "count": modes},
        "coupling": {"kind": "identity_scaled", "alpha": alpha},
        "b_y": {"kind": "alternating_over_m", "scale": scale},
        "b_z": {"kind": "zero"},
        "x0_y": {"kind": "zero"},
        "x0_z": {"kind": "exp_decay", "scale": 1.0, "rate": 1.0},
        "n_synth": min(6, modes),
        "n_verify": min(12, modes),
    }


PRESETS = {"example1": (_example1, 16), "example2": (_example2, 12)}


def preset_problem(name: str, modes=None, t1=1.0, alpha=1.0, normalization="orthonormal") -> ProblemFile:
    """Built-in instances.

    ``example1``: Y eigenvalues 1 - m^2, Z eigenvalues -m^2, C = alpha I,
    b_y = s (-1)^(m-1) / m, b_z = 0, x0 = (1/j, 1/j).
    ``example2``: both branches -n^2, C = alpha I, same b_y, x0 = (0, e^-n).
    ``normalization="orthonormal"`` uses s = sqrt(2/pi) pi (coordinates in the
    normalised sine basis); ``"raw"`` uses s = pi.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown preset '{name}'; choose from {sorted(PRESETS)}")
    if normalization not in ("orthonormal", "raw"):
        raise ValueError("normalization must be 'orthonormal' or 'raw'")
    build, default_modes = PRESETS[name]
    modes = default_modes if modes is None else int(modes)
    if modes < 1:
        raise ValueError("modes must be positive")
    return problem_from_document(build(modes, float(t1), float(alpha), normalization))
