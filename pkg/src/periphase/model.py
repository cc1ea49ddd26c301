"""Periodic signal, coefficient registry, and occupation-time arithmetic.

The model is a scalar diffusion

    d xi_t = [ S(theta, t) + b(xi_t) ] dt + sigma(xi_t) dW_t

whose drift carries a T-periodic input

    S(theta, t) = lambda(t) + lambda_star(t) * 1_{(theta, theta+a)}(t mod T),

i.e. an extra burst of known shape and duration `a` switched on at the
unknown phase theta within every period.  The function registries are
closed (two periodic kinds, three coefficient kinds) so that Lipschitz
constants and the ellipticity bounds on sigma are certifiable, which the
test suite relies on.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

__all__ = [
    "PeriodicFn",
    "CoefFn",
    "SignalSpec",
    "DiffusionModel",
    "signal_value",
    "occupation_measure",
    "parse_model_config",
    "model_config_items",
]

_MAX_RATIONAL_SLOPE = 3.0 * math.sqrt(3.0) / 8.0  # max |d/dx 1/(1+x^2)|


@dataclass(frozen=True)
class PeriodicFn:
    """T-periodic scalar function: ``constant(c)`` or ``sinusoid(c0, c1, phase)``.

    The sinusoid evaluates to ``c0 + c1*sin(2*pi*t/period + phase)``.
    """

    kind: str
    params: tuple[float, ...]
    period: float

    def __post_init__(self) -> None:
        if self.period <= 0:
            raise ValueError(f"period must be positive, got {self.period}")
        if self.kind == "constant":
            if len(self.params) != 1:
                raise ValueError("constant takes one parameter")
        elif self.kind == "sinusoid":
            if len(self.params) != 3:
                raise ValueError("sinusoid takes (c0, c1, phase)")
        else:
            raise ValueError(f"unknown periodic kind {self.kind!r}")

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            return self.params[0]
        c0, c1, phase = self.params
        return c0 + c1 * math.sin(2.0 * math.pi * t / self.period + phase)

    @property
    def minimum(self) -> float:
        """Lower bound of the function over one period."""
        if self.kind == "constant":
            return self.params[0]
        return self.params[0] - abs(self.params[1])

    @property
    def maximum(self) -> float:
        if self.kind == "constant":
            return self.params[0]
        return self.params[0] + abs(self.params[1])

    def require_strictly_positive(self, role: str) -> None:
        if self.minimum <= 0:
            raise ValueError(
                f"{role} must be strictly positive on [0, T]; "
                f"minimum is {self.minimum}"
            )


@dataclass(frozen=True)
class CoefFn:
    """State coefficient: ``affine(beta, gamma)``, ``constant(s)``, or
    ``bounded_rational(s0, s1)``.

    affine(beta, gamma) is x -> beta - gamma*x, bounded_rational(s0, s1) is
    x -> s0 + s1/(1+x^2).  All kinds are globally Lipschitz with a
    computable constant.
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.kind == "affine":
            if len(self.params) != 2:
                raise ValueError("affine takes (beta, gamma)")
        elif self.kind == "constant":
            if len(self.params) != 1:
                raise ValueError("constant takes one parameter")
        elif self.kind == "bounded_rational":
            if len(self.params) != 2:
                raise ValueError("bounded_rational takes (s0, s1)")
        else:
            raise ValueError(f"unknown coefficient kind {self.kind!r}")

    def __call__(self, x):
        if self.kind == "affine":
            beta, gamma = self.params
            return beta - gamma * x
        if self.kind == "constant":
            import numpy as np

            if hasattr(x, "shape"):
                return np.full_like(x, self.params[0], dtype=float)
            return self.params[0]
        s0, s1 = self.params
        return s0 + s1 / (1.0 + x * x)

    @property
    def lipschitz_constant(self) -> float:
        if self.kind == "affine":
            return abs(self.params[1])
        if self.kind == "constant":
            return 0.0
        return abs(self.params[1]) * _MAX_RATIONAL_SLOPE

    def validate_as_sigma(self) -> tuple[float, float]:
        """Check the ellipticity condition 1/M <= sigma <= M and return
        the (lower, upper) bounds."""
        if self.kind == "constant":
            s = self.params[0]
            if s <= 0:
                raise ValueError("constant sigma requires s > 0")
            return (s, s)
        if self.kind == "bounded_rational":
            s0, s1 = self.params
            if s0 <= 0 or s1 < 0:
                raise ValueError("bounded_rational sigma requires s0 > 0, s1 >= 0")
            return (s0, s0 + s1)
        raise ValueError("affine sigma is not bounded away from 0 and infinity")


@dataclass(frozen=True)
class SignalSpec:
    """The periodic input: base level, burst shape, period, burst duration
    and phase."""

    lam: PeriodicFn
    lam_star: PeriodicFn
    T: float
    a: float
    theta: float

    def __post_init__(self) -> None:
        if self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if not 0 < self.a < self.T:
            raise ValueError(f"duration must satisfy 0 < a < T, got a={self.a}, T={self.T}")
        if not 0 < self.theta < self.T - self.a:
            raise ValueError(
                f"theta={self.theta} outside the parameter space (0, {self.T - self.a})"
            )
        if self.lam.period != self.T or self.lam_star.period != self.T:
            raise ValueError("lambda and lambda_star must share the model period T")
        self.lam_star.require_strictly_positive("lambda_star")
        if self.lam.minimum < 0:
            raise ValueError("lambda must be nonnegative")

    @property
    def theta_domain(self) -> tuple[float, float]:
        return (0.0, self.T - self.a)


@dataclass(frozen=True)
class DiffusionModel:
    """Signal plus state coefficients b (drift) and sigma (diffusion)."""

    signal: SignalSpec
    b: CoefFn
    sigma: CoefFn

    def __post_init__(self) -> None:
        self.sigma.validate_as_sigma()

    @property
    def harris_guaranteed(self) -> bool:
        """True when mean reversion makes the period-sampled chain positive
        Harris without further assumptions (affine drift with gamma > 0)."""
        return self.b.kind == "affine" and self.b.params[1] > 0

    def sigma_bounds(self) -> tuple[float, float]:
        return self.sigma.validate_as_sigma()


def signal_value(spec: SignalSpec, t: float, theta_override: float | None = None) -> float:
    """Evaluate S(theta, t), with the burst window open at both endpoints.

    A time with ``t mod T`` exactly equal to theta or theta+a counts as
    outside the burst."""
    theta = spec.theta if theta_override is None else theta_override
    lo, hi = spec.theta_domain
    if not lo < theta < hi:
        raise ValueError(f"theta={theta} outside parameter space ({lo}, {hi})")
    phase = math.fmod(t, spec.T)
    if phase < 0:
        phase += spec.T
    value = spec.lam(t)
    if theta < phase < theta + spec.a:
        value += spec.lam_star(t)
    return value


def occupation_measure(T: float, r1: float, r2: float, t: float) -> float:
    """Lebesgue measure of {s in [0, t] : s mod T in (r1, r2)}, in closed
    form (full periods plus a partial remainder)."""
    if not 0 <= r1 < r2 <= T:
        raise ValueError(f"need 0 <= r1 < r2 <= T, got r1={r1}, r2={r2}, T={T}")
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    k = math.floor(t / T)
    rem = t - k * T
    partial = min(max(rem - r1, 0.0), r2 - r1)
    return k * (r2 - r1) + partial


# -- config text format -------------------------------------------------------
#
# Flat `key = value` lines with dotted keys and `#` comments, e.g.
#
#   model.T = 10.0
#   model.a = 3.0
#   model.theta = 4.0
#   model.lambda = constant(1.0)
#   model.lambda_star = constant(2.0)
#   model.b = affine(0.0, 1.0)
#   model.sigma = constant(1.0)

_CALL_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*\(([^()]*)\)\s*$")

_MODEL_KEYS = (
    "model.T",
    "model.a",
    "model.theta",
    "model.lambda",
    "model.lambda_star",
    "model.b",
    "model.sigma",
)


class ConfigError(ValueError):
    """Raised on malformed config text, carrying line/key diagnostics."""


def _parse_call(text: str, key: str, line_no: int | None = None) -> tuple[str, tuple[float, ...]]:
    m = _CALL_RE.match(text.strip().strip('"').strip("'"))
    where = f" (line {line_no})" if line_no is not None else ""
    if not m:
        raise ConfigError(f"key {key}{where}: expected name(args), got {text!r}")
    name = m.group(1)
    args_text = m.group(2).strip()
    try:
        args = tuple(float(p) for p in args_text.split(",")) if args_text else ()
    except ValueError as exc:
        raise ConfigError(f"key {key}{where}: bad numeric argument in {text!r}") from exc
    return name, args


def parse_config_text(text: str) -> dict[str, tuple[str, int]]:
    """Parse `key = value` lines into {key: (raw value, line number)}."""
    out: dict[str, tuple[str, int]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"line {line_no}: empty key or value in {raw!r}")
        if key in out:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        out[key] = (value, line_no)
    return out


def _scalar(entries: dict[str, tuple[str, int]], key: str) -> float:
    if key not in entries:
        raise ConfigError(f"missing required key {key!r}")
    value, line_no = entries[key]
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"key {key} (line {line_no}): expected a number, got {value!r}") from exc


def parse_model_config(text: str) -> DiffusionModel:
    """Build a DiffusionModel from config text; unknown model.* keys are
    rejected, other sections are ignored."""
    entries = parse_config_text(text)
    for key in entries:
        if key.startswith("model.") and key not in _MODEL_KEYS:
            line_no = entries[key][1]
            raise ConfigError(f"unknown key {key!r} (line {line_no})")
    return model_from_entries(entries)


def model_from_entries(entries: dict[str, tuple[str, int]]) -> DiffusionModel:
    T = _scalar(entries, "model.T")
    a = _scalar(entries, "model.a")
    theta = _scalar(entries, "model.theta")

    def periodic(key: str) -> PeriodicFn:
        if key not in entries:
            raise ConfigError(f"missing required key {key!r}")
        value, line_no = entries[key]
        name, args = _parse_call(value, key, line_no)
        try:
            return PeriodicFn(name, args, T)
        except ValueError as exc:
            raise ConfigError(f"key {key} (line {line_no}): {exc}") from exc

    def coef(key: str) -> CoefFn:
        if key not in entries:
            raise ConfigError(f"missing required key {key!r}")
        value, line_no = entries[key]
        name, args = _parse_call(value, key, line_no)
        try:
            return CoefFn(name, args)
        except ValueError as exc:
            raise ConfigError(f"key {key} (line {line_no}): {exc}") from exc

    try:
        signal = SignalSpec(
            lam=periodic("model.lambda"),
            lam_star=periodic("model.lambda_star"),
            T=T,
            a=a,
            theta=theta,
        )
        return DiffusionModel(signal=signal, b=coef("model.b"), sigma=coef("model.sigma"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _format_call(kind: str, params: tuple[float, ...]) -> str:
    args = ",".join(format(p, ".17g") for p in params)
    return f"{kind}({args})"


def model_config_items(model: DiffusionModel) -> list[tuple[str, str]]:
    """The model as ordered (key, value) pairs in the config text format."""
    sig = model.signal
    return [
        ("model.T", format(sig.T, ".17g")),
        ("model.a", format(sig.a, ".17g")),
        ("model.theta", format(sig.theta, ".17g")),
        ("model.lambda", _format_call(sig.lam.kind, sig.lam.params)),
        ("model.lambda_star", _format_call(sig.lam_star.kind, sig.lam_star.params)),
        ("model.b", _format_call(model.b.kind, model.b.params)),
        ("model.sigma", _format_call(model.sigma.kind, model.sigma.params)),
    ]
