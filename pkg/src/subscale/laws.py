"""Closed-form scaling-law families and their analytic gradients.

Families:

* power           L(x)    = lam * x**(-alpha), used for loss vs compute,
                            batch size, or learning rate.
* chinchilla      L(N, D) = E + lam_n/N**alpha_n + lam_d/D**alpha_d.
* suboptimal      chinchilla with each coefficient multiplied by a logistic
                            repetition factor of the over-training ratio
                            OTR = D/N; captures the extra loss incurred when
                            tokens far exceed the optimal budget for N.
* saturating_perf P(n)    = p0 * (1 - exp(-beta * I(n))) with information
                            gain I(n) = i0 * n**(-alpha) (redundant, high
                            density data) or I(n) = i0 * n when alpha == 0
                            (diverse, low-density data).
* decayed_perf    P(C)    = decay * lam * C**alpha, a performance power law
                            scaled by a density decay factor in (0, 1].

Note the two distinct "R_D"-style quantities: the over-training repetition
factor (``repetition_factor``, a logistic of OTR used by the suboptimal
loss law) and the density decay factor (``DecayedPerfParams.decay``, a
fitted constant per dataset).  They are unrelated parameters.

All evaluators accept scalars or numpy arrays and are smooth in their
parameters; the ``*_gradient`` functions return the exact partials in a
fixed column order consumed by the fitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Union

import numpy as np

from .errors import UnknownFamily

ArrayLike = Union[float, np.ndarray]


def _as_array(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _ret(value: np.ndarray, scalar: bool):
    return float(value) if scalar else value


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# Parameter types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLawParams:
    """lam * x**(-alpha)."""

    lam: float
    alpha: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")


@dataclass(frozen=True)
class ChinchillaParams:
    """E + lam_n/N**alpha_n + lam_d/D**alpha_d."""

    e_irreducible: float
    lambda_n: float
    alpha_n: float
    lambda_d: float
    alpha_d: float

    def __post_init__(self):
        if self.e_irreducible < 0:
            raise ValueError("e_irreducible must be >= 0")
        for name in ("lambda_n", "alpha_n", "lambda_d", "alpha_d"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class SubOptimalParams:
    """Chinchilla form with logistic repetition factors of OTR.

    k1 steers the factor on the data term, k2 the factor on the model term.
    """

    e_irreducible: float
    lambda_n: float
    alpha_n: float
    lambda_d: float
    alpha_d: float
    k1: float
    k2: float

    def __post_init__(self):
        if self.e_irreducible < 0:
            raise ValueError("e_irreducible must be >= 0")
        for name in ("lambda_n", "alpha_n", "lambda_d", "alpha_d"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("k1 and k2 must be >= 0")


@dataclass(frozen=True)
class SaturatingPerfParams:
    """p0 * (1 - exp(-beta * I(n))); alpha == 0 selects linear gain I = i0*n."""

    p0: float
    beta: float
    i0: float
    alpha: float = 0.0

    def __post_init__(self):
        if not self.p0 > 0:
            raise ValueError("p0 must be > 0")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not self.i0 > 0:
            raise ValueError("i0 must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


@dataclass(frozen=True)
class DecayedPerfParams:
    """decay * lam * C**alpha with density decay factor in (0, 1]."""

    decay: float
    lam: float
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")


LawParams = Union[
    PowerLawParams,
    ChinchillaParams,
    SubOptimalParams,
    SaturatingPerfParams,
    DecayedPerfParams,
]

# family tag -> (class, python attr -> json key)
_FAMILIES: dict[str, tuple[type, dict[str, str]]] = {
    "power": (PowerLawParams, {"lam": "lambda", "alpha": "alpha"}),
    "chinchilla": (
        ChinchillaParams,
        {f.name: f.name for f in fields(ChinchillaParams)},
    ),
    "suboptimal": (
        SubOptimalParams,
        {f.name: f.name for f in fields(SubOptimalParams)},
    ),
    "saturating_perf": (
        SaturatingPerfParams,
        {f.name: f.name for f in fields(SaturatingPerfParams)},
    ),
    "decayed_perf": (
        DecayedPerfParams,
        {"decay": "decay", "lam": "lambda", "alpha": "alpha"},
    ),
}


def family_of(params: LawParams) -> str:
    for tag, (cls, _) in _FAMILIES.items():
        if type(params) is cls:
            return tag
    raise UnknownFamily(type(params).__name__)


def params_to_dict(params: LawParams) -> dict:
    """JSON-ready mapping with a ``family`` discriminator."""
    tag = family_of(params)
    _, keymap = _FAMILIES[tag]
    out = {"family": tag}
    for attr, key in keymap.items():
        out[key] = getattr(params, attr)
    return out


def params_from_dict(data: dict) -> LawParams:
    """Inverse of :func:`params_to_dict`."""
    tag = data.get("family")
    if tag not in _FAMILIES:
        raise UnknownFamily(str(tag))
    cls, keymap = _FAMILIES[tag]
    kwargs = {}
    for attr, key in keymap.items():
        if key not in data:
            raise UnknownFamily(f"{tag}: missing field {key!r}")
        kwargs[attr] = float(data[key])
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------


def eval_power(params: PowerLawParams, x: ArrayLike) -> ArrayLike:
    """lam * x**(-alpha) for x > 0, computed in log space."""
    xa, scalar = _as_array(x)
    if np.any(xa <= 0):
        raise ValueError("x must be > 0")
    return _ret(np.exp(math.log(params.lam) - params.alpha * np.log(xa)), scalar)


def repetition_factor(otr: ArrayLike, k: float) -> ArrayLike:
    """Logistic over-training multiplier 1 + sigmoid(k * otr).

    Ranges over [1.5, 2) for otr > 0 and k >= 0; strictly increasing in otr
    when k > 0, constant 1.5 when k == 0.  The logistic saturates to 1.0 in
    float64 once k*otr exceeds ~37, so the output is clamped one ulp under
    the mathematical supremum of 2 to keep the documented range contract.
    """
    r, scalar = _as_array(otr)
    if np.any(r <= 0):
        raise ValueError("otr must be > 0")
    if k < 0:
        raise ValueError("k must be >= 0")
    sig = np.minimum(_sigmoid(k * r), 1.0 - 2.0**-52)
    return _ret(1.0 + sig, scalar)


def eval_chinchilla(params: ChinchillaParams, n: ArrayLike, d: ArrayLike) -> ArrayLike:
    """E + lam_n/N**alpha_n + lam_d/D**alpha_d for N, D > 0."""
    na, s1 = _as_array(n)
    da, s2 = _as_array(d)
    if np.any(na <= 0) or np.any(da <= 0):
        raise ValueError("n and d must be > 0")
    term_n = np.exp(math.log(params.lambda_n) - params.alpha_n * np.log(na))
    term_d = np.exp(math.log(params.lambda_d) - params.alpha_d * np.log(da))
    return _ret(params.e_irreducible + term_n + term_d, s1 and s2)


def eval_suboptimal(params: SubOptimalParams, n: ArrayLike, d: ArrayLike) -> ArrayLike:
    """Chinchilla terms scaled by repetition factors of OTR = d/n."""
    na, s1 = _as_array(n)
    da, s2 = _as_array(d)
    if np.any(na <= 0) or np.any(da <= 0):
        raise ValueError("n and d must be > 0")
    r = da / na
    r_d = 1.0 + _sigmoid(params.k1 * r)
    r_n = 1.0 + _sigmoid(params.k2 * r)
    term_n = r_n * np.exp(math.log(params.lambda_n) - params.alpha_n * np.log(na))
    term_d = r_d * np.exp(math.log(params.lambda_d) - params.alpha_d * np.log(da))
    return _ret(params.e_irreducible + term_n + term_d, s1 and s2)


def eval_saturating_perf(params: SaturatingPerfParams, n_samples: ArrayLike) -> ArrayLike:
    """Saturating performance p0 * (1 - exp(-beta * I(n))).

    alpha > 0 uses diminishing information gain I = i0 * n**(-alpha);
    alpha == 0 is the low-density regime with linear gain I = i0 * n.

    Note the literal consequence of the high-density form: the per-sample
    gain I(n) shrinks with n, so P itself decreases in n for alpha > 0.
    The model is evaluated exactly as parameterized; treat it as a
    pointwise gain model, not a cumulative learning curve.
    """
    na, scalar = _as_array(n_samples)
    if np.any(na <= 0):
        raise ValueError("n_samples must be > 0")
    if params.alpha > 0:
        gain = params.i0 * np.power(na, -params.alpha)
    else:
        gain = params.i0 * na
    return _ret(params.p0 * -np.expm1(-params.beta * gain), scalar)


def eval_decayed_perf(params: DecayedPerfParams, c: ArrayLike) -> ArrayLike:
    """decay * lam * C**alpha for compute C > 0."""
    ca, scalar = _as_array(c)
    if np.any(ca <= 0):
        raise ValueError("c must be > 0")
    return _ret(
        params.decay * np.exp(math.log(params.lam) + params.alpha * np.log(ca)),
        scalar,
    )


def loss_at(params: LawParams, n: ArrayLike, d: ArrayLike) -> ArrayLike:
    """Evaluate a loss-family law at (model size, tokens).

    The power family is evaluated at compute C = 6*n*d; performance
    families are rejected.
    """
    if isinstance(params, PowerLawParams):
        na, s1 = _as_array(n)
        da, s2 = _as_array(d)
        c = 6.0 * na * da
        return eval_power(params, float(c) if (s1 and s2) else c)
    if isinstance(params, ChinchillaParams):
        return eval_chinchilla(params, n, d)
    if isinstance(params, SubOptimalParams):
        return eval_suboptimal(params, n, d)
    raise UnknownFamily(f"{family_of(params)} is not a loss law over (N, D)")


# ---------------------------------------------------------------------------
# Analytic gradients (column order matches the fitter's packing)
# ---------------------------------------------------------------------------


def power_gradient(params: PowerLawParams, x: ArrayLike) -> np.ndarray:
    """Partials of eval_power wrt (lam, alpha); shape (len(x), 2)."""
    xa, _ = _as_array(x)
    xa = np.atleast_1d(xa)
    base = np.exp(-params.alpha * np.log(xa))
    return np.column_stack([base, -params.lam * np.log(xa) * base])


def chinchilla_gradient(params: ChinchillaParams, n: ArrayLike, d: ArrayLike) -> np.ndarray:
    """Partials wrt (e_irreducible, lambda_n, alpha_n, lambda_d, alpha_d)."""
    na = np.atleast_1d(np.asarray(n, dtype=float))
    da = np.atleast_1d(np.asarray(d, dtype=float))
    ln_n, ln_d = np.log(na), np.log(da)
    t_n = np.exp(-params.alpha_n * ln_n)
    t_d = np.exp(-params.alpha_d * ln_d)
    return np.column_stack(
        [
            np.ones_like(na),
            t_n,
            -params.lambda_n * ln_n * t_n,
            t_d,
            -params.lambda_d * ln_d * t_d,
        ]
    )


def suboptimal_gradient(params: SubOptimalParams, n: ArrayLike, d: ArrayLike) -> np.ndarray:
    """Partials wrt (e, lambda_n, alpha_n, lambda_d, alpha_d, k1, k2).

    The k-columns chain through the logistic: d/dk sigmoid(k*r) =
    sigmoid*(1-sigmoid)*r.
    """
    na = np.atleast_1d(np.asarray(n, dtype=float))
    da = np.atleast_1d(np.asarray(d, dtype=float))
    r = da / na
    ln_n, ln_d = np.log(na), np.log(da)
    t_n = np.exp(-params.alpha_n * ln_n)
    t_d = np.exp(-params.alpha_d * ln_d)
    s_d = _sigmoid(params.k1 * r)
    s_n = _sigmoid(params.k2 * r)
    r_d = 1.0 + s_d
    r_n = 1.0 + s_n
    return np.column_stack(
        [
            np.ones_like(na),
            r_n * t_n,
            -params.lambda_n * r_n * ln_n * t_n,
            r_d * t_d,
            -params.lambda_d * r_d * ln_d * t_d,
            params.lambda_d * t_d * s_d * (1.0 - s_d) * r,
            params.lambda_n * t_n * s_n * (1.0 - s_n) * r,
        ]
    )


def saturating_perf_gradient(
    params: SaturatingPerfParams, n_samples: ArrayLike
) -> np.ndarray:
    """Partials wrt (p0, beta, i0, alpha).

    The alpha column uses the diminishing-gain branch; at the alpha == 0
    regime boundary the gain switches to linear and the column is zero
    (the branch itself does not vary with alpha).
    """
    na = np.atleast_1d(np.asarray(n_samples, dtype=float))
    ln_n = np.log(na)
    if params.alpha > 0:
        gain = params.i0 * np.power(na, -params.alpha)
        d_gain_alpha = -gain * ln_n
    else:
        gain = params.i0 * na
        d_gain_alpha = np.zeros_like(na)
    decay = np.exp(-params.beta * gain)
    d_gain = params.p0 * params.beta * decay
    return np.column_stack(
        [
            -np.expm1(-params.beta * gain),
            params.p0 * gain * decay,
            d_gain * gain / params.i0,
            d_gain * d_gain_alpha,
        ]
    )


def decayed_perf_gradient(params: DecayedPerfParams, c: ArrayLike) -> np.ndarray:
    """Partials wrt (decay, lam, alpha)."""
    ca = np.atleast_1d(np.asarray(c, dtype=float))
    ln_c = np.log(ca)
    base = np.exp(math.log(params.lam) + params.alpha * ln_c)
    return np.column_stack(
        [base, params.decay * base / params.lam, params.decay * base * ln_c]
    )
