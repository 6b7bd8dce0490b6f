"""Problem specification: flat key=value config text and named families.

Config files are plain text, one ``dotted.key = value`` per line, ``#``
comments allowed.  Field sources (twist and boundary data) are either a
named family

    const(c) | gaussian-bump(a, s) | cone-lipschitz(a) | sharp-alpha(alpha)
    quadratic(c)   (boundary)

or free expression text in the x1..xn language.  Everything validates before
any compute: the phase range, the grid, and a positivity pre-scan of the
twist on all nodes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .exprlang import ExprSyntaxError, parse_expression
from .grids import GridFunction

_FAMILY_RE = re.compile(r"^([a-z][a-z0-9-]*)\(([^()]*)\)$")


def parse_scalar(text: str) -> float:
    """A float literal or a constant expression like ``pi/2``."""
    try:
        return float(text)
    except ValueError:
        expr = parse_expression(text)
        if expr.max_variable > 0:
            raise DomainError(f"scalar value {text!r} may not use variables")
        return float(expr(np.zeros((1, 1)))[0])


def parse_config(text: str) -> dict:
    """Flat key=value lines into a dict; later keys override earlier ones."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _family_args(arg_text: str):
    arg_text = arg_text.strip()
    if not arg_text:
        return []
    return [parse_scalar(a) for a in arg_text.split(",")]


def field_source(text: str):
    """Compile a twist/boundary source into a callable over coordinates."""
    text = text.strip()
    match = _FAMILY_RE.match(text)
    if match:
        name, raw_args = match.groups()
        args = _family_args(raw_args)
        if name == "const":
            (c,) = args or (1.0,)
            return lambda x: np.full(x.shape[:-1], float(c))
        if name == "gaussian-bump":
            a, s = (args + [2.0])[:2] if args else (0.5, 2.0)
            return lambda x: 1.0 + a * np.exp(-s * np.sum(x**2, axis=-1))
        if name == "cone-lipschitz":
            (a,) = args or (0.5,)
            return lambda x: 1.0 + a * np.sqrt(np.sum(x**2, axis=-1))
        if name == "sharp-alpha":
            (alpha,) = args or (0.5,)
            if not 0.0 < alpha < 1.0:
                raise DomainError("sharp-alpha needs alpha in (0, 1)")

            def sharp(x):
                x1 = np.abs(x[..., 0])
                t = np.where(x1 > 0.0, x1, 1.0) ** (alpha - 1.0)
                f = np.sqrt(t / (t + 2.0))
                return np.where(x1 > 0.0, f, 1.0)  # continuous limit value

            return sharp
        if name == "quadratic":
            (c,) = args or (0.5,)
            return lambda x: 0.5 * c * np.sum(x**2, axis=-1)
        raise DomainError(f"unknown field family {name!r}")
    expr = parse_expression(text)
    return expr


@dataclass
class ProblemSpec:
    """Validated description of one solve."""

    n: int = 3
    grid: int = 17
    theta: float = 3 * np.arctan(0.5)
    f_source: str = "const(1)"
    boundary_source: str = "quadratic(0.5)"
    reference: str = ""
    waypoints: int = 5
    newton_tol: float = 1e-10
    max_newton: int = 30
    seed: int = 0
    out: str = ""
    deterministic: bool = False
    raw: dict = field(default_factory=dict)

    KEYS = {
        "problem.n": ("n", int),
        "problem.grid": ("grid", int),
        "problem.theta": ("theta", parse_scalar),
        "problem.f": ("f_source", str),
        "problem.boundary": ("boundary_source", str),
        "problem.reference": ("reference", str),
        "continuation.waypoints": ("waypoints", int),
        "newton.tol": ("newton_tol", float),
        "newton.max_iterations": ("max_newton", int),
        "run.seed": ("seed", int),
        "run.out": ("out", str),
        "run.deterministic": ("deterministic", lambda v: v.lower() == "true"),
    }

    @classmethod
    def from_config(cls, config: dict) -> "ProblemSpec":
        spec = cls(raw=dict(config))
        for key, value in config.items():
            if key.startswith("sweep."):
                continue
            if key not in cls.KEYS:
                raise DomainError(f"unknown config key {key!r}")
            attr, conv = cls.KEYS[key]
            try:
                setattr(spec, attr, conv(value))
            except (ValueError, ExprSyntaxError) as exc:
                raise DomainError(f"bad value for {key}: {exc}") from exc
        spec.validate()
        return spec

    @classmethod
    def from_text(cls, text: str) -> "ProblemSpec":
        return cls.from_config(parse_config(text))

    def validate(self):
        if self.n not in (2, 3):
            raise DomainError(f"problem.n must be 2 or 3, got {self.n}")
        if self.grid < 9 or self.grid % 2 == 0:
            raise DomainError("problem.grid must be odd and >= 9")
        if not abs(self.theta) < self.n * np.pi / 2:
            raise DomainError(
                f"theta={self.theta!r} outside the phase range "
                f"(-{self.n}*pi/2, {self.n}*pi/2)"
            )
        # pre-scan the twist for positivity on all nodes
        f_fn = field_source(self.f_source)
        probe = GridFunction(self.n, self.grid)
        f_vals = np.asarray(f_fn(probe.coords()), dtype=float)
        if np.any(~np.isfinite(f_vals)) or np.any(f_vals <= 0.0):
            raise DomainError(
                f"twist source {self.f_source!r} is not positive on all nodes"
            )
        field_source(self.boundary_source)
        if self.reference:
            self.reference_solution(probe=True)

    def build_fields(self):
        """(f, phi) grid functions for the target problem."""
        f_fn = field_source(self.f_source)
        b_fn = field_source(self.boundary_source)
        f = GridFunction.from_callable(self.n, self.grid, f_fn)
        phi = GridFunction.from_callable(self.n, self.grid, b_fn)
        return f, phi

    def reference_solution(self, probe: bool = False):
        """Analytic reference u* when ``problem.reference`` names one."""
        match = _FAMILY_RE.match(self.reference.strip())
        if not match:
            raise DomainError(
                f"problem.reference must be quadratic(c) or quartic(a, b); "
                f"got {self.reference!r}"
            )
        name, raw_args = match.groups()
        args = _family_args(raw_args)
        if name == "quadratic":
            (c,) = args or (0.5,)
            fn = lambda x: 0.5 * c * np.sum(x**2, axis=-1)  # noqa: E731
        elif name == "quartic":
            a, b = (args + [0.05])[:2] if args else (0.25, 0.05)
            fn = lambda x: a * np.sum(x**2, axis=-1) + b * np.sum(  # noqa: E731
                x**4, axis=-1
            )
        else:
            raise DomainError(f"unknown reference family {name!r}")
        if probe:
            return None
        return GridFunction.from_callable(self.n, self.grid, fn)

    def to_text(self) -> str:
        lines = [
            f"problem.n = {self.n}",
            f"problem.grid = {self.grid}",
            f"problem.theta = {self.theta!r}",
            f"problem.f = {self.f_source}",
            f"problem.boundary = {self.boundary_source}",
            f"continuation.waypoints = {self.waypoints}",
            f"newton.tol = {self.newton_tol!r}",
            f"newton.max_iterations = {self.max_newton}",
            f"run.seed = {self.seed}",
            f"run.deterministic = {str(self.deterministic).lower()}",
        ]
        if self.reference:
            lines.insert(5, f"problem.reference = {self.reference}")
        if self.out:
            lines.append(f"run.out = {self.out}")
        return "\n".join(lines) + "\n"
