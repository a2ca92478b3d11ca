"""Filter function banks over the Laplacian spectrum.

Four kinds: heat (low-pass exponentials), ideal (index cutoffs, the spectral
upsampling special case), Meyer (multi-scale tight frame), and the trainable
bank built on orthonormalized Jacobi polynomials with polynomial coefficient
decomposition (PCD).

Every evaluated bank must satisfy the energy consistency condition
G(lambda) = sum_s h_s(lambda)^2 >= EPSILON_G at all truncated eigenvalues;
`eval_bank` enforces it, since the closed-form map refinement divides by G.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import digamma, gammaln

from .errors import ConsistencyError, DataError

EPSILON_G = 1e-8

_X_TOL = 1e-12  # clamping band around [-1, 1]


# ---------------------------------------------------------------------------
# Jacobi polynomial machinery


def _check_shape_params(a: float, b: float) -> None:
    if a <= -1.0 or b <= -1.0:
        raise DataError(f"Jacobi shape parameters must exceed -1, got a={a}, b={b}")


def _clamp_unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if (x < -1.0 - _X_TOL).any() or (x > 1.0 + _X_TOL).any():
        raise DataError("Jacobi argument outside [-1 - 1e-12, 1 + 1e-12]")
    return np.clip(x, -1.0, 1.0)


def _mu_coeffs(l: int, a: float, b: float):
    """Three-term recurrence coefficients for order l >= 2."""
    s = a + b
    num = (2 * l + s) * (2 * l + s - 1)
    den = 2 * l * (l + s)
    mu = num / den
    d2 = 2 * l * (l + s) * (2 * l + s - 2)
    mu_p = (2 * l + s - 1) * (a * a - b * b) / d2
    e = l * (l + s) * (2 * l + s - 2)
    mu_pp = (l + a - 1) * (l + b - 1) * (2 * l + s) / e
    return mu, mu_p, mu_pp


def _mu_coeffs_grad(l: int, a: float, b: float):
    """Partial derivatives of (mu, mu', mu'') w.r.t. a and b."""
    s = a + b
    num = (2 * l + s) * (2 * l + s - 1)
    den = 2 * l * (l + s)
    dnum = 4 * l + 2 * s - 1
    dden = 2 * l
    dmu = (dnum * den - num * dden) / den ** 2       # same for a and b

    d2 = 2 * l * (l + s) * (2 * l + s - 2)
    dd2 = 2 * l * (3 * l + 2 * s - 2)
    p = (2 * l + s - 1) / d2
    dp = (d2 - (2 * l + s - 1) * dd2) / d2 ** 2
    q = a * a - b * b
    dmup_a = dp * q + p * 2 * a
    dmup_b = dp * q - p * 2 * b

    e = l * (l + s) * (2 * l + s - 2)
    de = l * (3 * l + 2 * s - 2)
    n = (l + a - 1) * (l + b - 1) * (2 * l + s)
    dn_a = (l + b - 1) * (2 * l + s) + (l + a - 1) * (l + b - 1)
    dn_b = (l + a - 1) * (2 * l + s) + (l + a - 1) * (l + b - 1)
    dmupp_a = (dn_a * e - n * de) / e ** 2
    dmupp_b = (dn_b * e - n * de) / e ** 2
    return dmu, dmu, dmup_a, dmup_b, dmupp_a, dmupp_b


def _jacobi_recurrence(a: float, b: float, order: int, x: np.ndarray,
                       gains: Optional[np.ndarray] = None) -> np.ndarray:
    """Unnormalized Jacobi polynomial rows J_0..J_order at x.

    With `gains` (length order+1, index 0 unused) the recurrence runs in its
    decomposed form, producing (prod_{i<=l} beta_i) * J_l per row.
    """
    out = np.empty((order + 1, x.shape[0]))
    out[0] = 1.0
    if order >= 1:
        j1 = (a - b) / 2.0 + (a + b + 2.0) / 2.0 * x
        out[1] = gains[1] * j1 if gains is not None else j1
    for l in range(2, order + 1):
        mu, mu_p, mu_pp = _mu_coeffs(l, a, b)
        if gains is not None:
            out[l] = gains[l] * (mu * x + mu_p) * out[l - 1] \
                - gains[l] * gains[l - 1] * mu_pp * out[l - 2]
        else:
            out[l] = (mu * x + mu_p) * out[l - 1] - mu_pp * out[l - 2]
    return out


def jacobi_norms(a: float, b: float, order: int) -> np.ndarray:
    """L2 norms of J_l under the weight (1-x)^a (1+x)^b on [-1, 1]."""
    _check_shape_params(a, b)
    ls = np.arange(order + 1, dtype=np.float64)
    log_sq = (a + b + 1) * math.log(2.0) + gammaln(ls + a + 1) \
        + gammaln(ls + b + 1) - gammaln(ls + 1)
    # (2l+a+b+1) Gamma(l+a+b+1) -> Gamma(a+b+2) at l = 0 (avoids the pole)
    log_sq[0] -= gammaln(a + b + 2)
    if order >= 1:
        log_sq[1:] -= np.log(2 * ls[1:] + a + b + 1) + gammaln(ls[1:] + a + b + 1)
    return np.exp(0.5 * log_sq)


def _log_norm_grads(a: float, b: float, order: int):
    """d log||J_l|| / da and / db."""
    ls = np.arange(order + 1, dtype=np.float64)
    common_a = math.log(2.0) + digamma(ls + a + 1)
    common_b = math.log(2.0) + digamma(ls + b + 1)
    da = np.empty(order + 1)
    db = np.empty(order + 1)
    da[0] = 0.5 * (common_a[0] - digamma(a + b + 2))
    db[0] = 0.5 * (common_b[0] - digamma(a + b + 2))
    if order >= 1:
        tail = 1.0 / (2 * ls[1:] + a + b + 1) + digamma(ls[1:] + a + b + 1)
        da[1:] = 0.5 * (common_a[1:] - tail)
        db[1:] = 0.5 * (common_b[1:] - tail)
    return da, db


def jacobi_eval(a: float, b: float, order: int, x,
                gains: Optional[np.ndarray] = None) -> np.ndarray:
    """Orthonormalized Jacobi polynomial values, one row per order 0..order.

    Rows are J_l / ||J_l||, orthonormal under (1-x)^a (1+x)^b. When `gains`
    is given the recurrence runs in decomposed (PCD) form, so row l carries
    the extra factor prod_{i<=l} gains[i] (index 0 unused).
    """
    _check_shape_params(a, b)
    x = _clamp_unit(x)
    if gains is not None:
        gains = np.asarray(gains, dtype=np.float64)
        if gains.shape != (order + 1,):
            raise DataError(f"gains must have length {order + 1}")
    raw = _jacobi_recurrence(a, b, order, x, gains)
    return raw / jacobi_norms(a, b, order)[:, None]


def jacobi_eval_with_shape_grad(a: float, b: float, order: int, x):
    """Orthonormalized values plus their partials w.r.t. a and b (no gains)."""
    _check_shape_params(a, b)
    x = _clamp_unit(x)
    m = x.shape[0]
    J = np.empty((order + 1, m))
    dJa = np.zeros((order + 1, m))
    dJb = np.zeros((order + 1, m))
    J[0] = 1.0
    if order >= 1:
        J[1] = (a - b) / 2.0 + (a + b + 2.0) / 2.0 * x
        dJa[1] = 0.5 + 0.5 * x
        dJb[1] = -0.5 + 0.5 * x
    for l in range(2, order + 1):
        mu, mu_p, mu_pp = _mu_coeffs(l, a, b)
        dmu_a, dmu_b, dmup_a, dmup_b, dmupp_a, dmupp_b = _mu_coeffs_grad(l, a, b)
        lin = mu * x + mu_p
        J[l] = lin * J[l - 1] - mu_pp * J[l - 2]
        dJa[l] = (dmu_a * x + dmup_a) * J[l - 1] + lin * dJa[l - 1] \
            - dmupp_a * J[l - 2] - mu_pp * dJa[l - 2]
        dJb[l] = (dmu_b * x + dmup_b) * J[l - 1] + lin * dJb[l - 1] \
            - dmupp_b * J[l - 2] - mu_pp * dJb[l - 2]
    norms = jacobi_norms(a, b, order)[:, None]
    dlog_a, dlog_b = _log_norm_grads(a, b, order)
    B = J / norms
    dBa = dJa / norms - B * dlog_a[:, None]
    dBb = dJb / norms - B * dlog_b[:, None]
    return B, dBa, dBb


# ---------------------------------------------------------------------------
# Smooth reparameterizations


def softplus(x: float) -> float:
    return float(np.logaddexp(0.0, x))


def softplus_inverse(y: float) -> float:
    if y <= 0:
        raise DataError("softplus inverse needs a positive argument")
    return float(y + np.log(-np.expm1(-y)))


def shape_from_raw(raw: float) -> float:
    """Maps an unconstrained parameter to a shape value in (-1, inf)."""
    return softplus(raw) - 1.0


def shape_raw_grad(raw: float) -> float:
    """d shape / d raw (the logistic sigmoid)."""
    return float(1.0 / (1.0 + np.exp(-raw)))


def pcd_expand(alpha: np.ndarray, gamma: np.ndarray,
               beta_cap: float) -> np.ndarray:
    """Effective coefficients w_sl = alpha_sl * prod_{i=1..l} beta_i.

    beta_i = beta_cap * tanh(gamma_i); gamma[0] is inert (order 0 is never
    scaled, so a vanishing gain kills every order above 0 but not the
    constant).
    """
    if beta_cap <= 0:
        raise DataError("beta_cap must be positive")
    alpha = np.asarray(alpha, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    betas = beta_cap * np.tanh(gamma)
    u = np.concatenate([[1.0], np.cumprod(betas[1:])])
    return alpha * u[None, :]


# ---------------------------------------------------------------------------
# Bank kinds


@dataclass(frozen=True, eq=False)
class HeatBank:
    """Low-pass exponentials h_s(lambda) = exp(-t_s lambda)."""

    times: tuple

    kind = "heat"

    @property
    def channels(self) -> int:
        return len(self.times)

    def _evaluate(self, lam: np.ndarray) -> np.ndarray:
        if not self.times:
            raise DataError("heat bank needs at least one time")
        return np.exp(-np.outer(np.asarray(self.times, dtype=np.float64), lam))


@dataclass(frozen=True, eq=False)
class IdealBank:
    """Index cutoffs: channel s passes the first cutoffs[s] eigenvalues.

    Cutoffs must be strictly increasing and the last one must equal the
    truncation order it is evaluated on, so G >= 1 everywhere.
    """

    cutoffs: tuple

    kind = "ideal"

    @property
    def channels(self) -> int:
        return len(self.cutoffs)

    def _evaluate(self, lam: np.ndarray) -> np.ndarray:
        cuts = np.asarray(self.cutoffs, dtype=np.int64)
        if cuts.size == 0 or (np.diff(cuts) <= 0).any() or cuts[0] < 1:
            raise DataError("ideal cutoffs must be strictly increasing and >= 1")
        if cuts[-1] != len(lam):
            raise DataError(
                f"last ideal cutoff ({cuts[-1]}) must equal the truncation "
                f"order ({len(lam)})")
        idx = np.arange(len(lam))
        return (idx[None, :] < cuts[:, None]).astype(np.float64)


def _meyer_nu(t: np.ndarray) -> np.ndarray:
    return t ** 4 * (35.0 - 84.0 * t + 70.0 * t ** 2 - 20.0 * t ** 3)


def _meyer_scaling(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    out[x <= 1.0] = 1.0
    band = (x > 1.0) & (x < 2.0)
    out[band] = np.cos(0.5 * np.pi * _meyer_nu(x[band] - 1.0))
    return out


def _meyer_wavelet(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    rise = (x >= 1.0) & (x <= 2.0)
    out[rise] = np.sin(0.5 * np.pi * _meyer_nu(x[rise] - 1.0))
    fall = (x > 2.0) & (x < 4.0)
    out[fall] = np.cos(0.5 * np.pi * _meyer_nu(0.5 * x[fall] - 1.0))
    return out


@dataclass(frozen=True, eq=False)
class MeyerBank:
    """Tight Meyer frame: one scaling function plus dyadic wavelets.

    With S channels, G(lambda) = 1 identically on [0, lam_max] where lam_max
    is the largest evaluated eigenvalue.
    """

    scales: int

    kind = "meyer"

    @property
    def channels(self) -> int:
        return self.scales

    def _evaluate(self, lam: np.ndarray) -> np.ndarray:
        if self.scales < 1:
            raise DataError("Meyer bank needs at least one scale")
        lam_max = lam[-1] if lam[-1] > 0 else 1.0
        x = lam * (2.0 ** (self.scales - 1) / lam_max)
        rows = [_meyer_scaling(x)]
        for j in range(1, self.scales):
            rows.append(_meyer_wavelet(x / 2.0 ** (j - 1)))
        return np.vstack(rows)


@dataclass(frozen=True, eq=False)
class JacobiBank:
    """Trainable bank: channels are PCD-decomposed combinations of
    orthonormal Jacobi polynomials on the rescaled spectrum.

    alpha holds the per-channel coefficients over orders 0..L, gamma the
    recursion gains (index 0 inert), a_raw/b_raw the unconstrained shape
    parameters (softplus-shifted into (-1, inf)). lam_max records the design
    spectrum scale for plots and serialization; evaluation always rescales by
    the largest eigenvalue of the spectrum at hand.
    """

    alpha: np.ndarray            # (S, L+1)
    gamma: np.ndarray            # (L+1,)
    a_raw: float
    b_raw: float
    beta_cap: float = 2.0
    lam_max: Optional[float] = None

    kind = "jacobi"

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        gamma = np.asarray(self.gamma, dtype=np.float64)
        if alpha.ndim != 2:
            raise DataError("alpha must be (channels, order+1)")
        if gamma.shape != (alpha.shape[1],):
            raise DataError("gamma length must equal order+1")
        if self.beta_cap <= 0:
            raise DataError("beta_cap must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma", gamma)

    @property
    def channels(self) -> int:
        return self.alpha.shape[0]

    @property
    def order(self) -> int:
        return self.alpha.shape[1] - 1

    @property
    def a(self) -> float:
        return shape_from_raw(self.a_raw)

    @property
    def b(self) -> float:
        return shape_from_raw(self.b_raw)

    @property
    def betas(self) -> np.ndarray:
        return self.beta_cap * np.tanh(self.gamma)

    def scaled_argument(self, lam: np.ndarray) -> np.ndarray:
        lam_max = lam[-1] if lam[-1] > 0 else 1.0
        return np.clip(2.0 * lam / lam_max - 1.0, -1.0, 1.0)

    def _evaluate(self, lam: np.ndarray) -> np.ndarray:
        x = self.scaled_argument(lam)
        basis = jacobi_eval(self.a, self.b, self.order, x, gains=self.betas)
        return self.alpha @ basis

    def with_params(self, alpha=None, gamma=None, a_raw=None,
                    b_raw=None) -> "JacobiBank":
        return replace(
            self,
            alpha=self.alpha if alpha is None else alpha,
            gamma=self.gamma if gamma is None else gamma,
            a_raw=self.a_raw if a_raw is None else float(a_raw),
            b_raw=self.b_raw if b_raw is None else float(b_raw),
        )


FilterBank = Union[HeatBank, IdealBank, MeyerBank, JacobiBank]


@dataclass(frozen=True, eq=False)
class FilterResponse:
    """Sampled responses H[s, i] = h_s(lambda_i) and energies G = sum_s H^2."""

    values: np.ndarray   # (S, k)
    energy: np.ndarray   # (k,)

    @property
    def channels(self) -> int:
        return self.values.shape[0]


def eval_bank(bank: FilterBank, lam, *, epsilon: float = EPSILON_G) -> FilterResponse:
    """Evaluate a bank on a truncated spectrum, enforcing min G >= epsilon."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim != 1 or lam.size == 0:
        raise DataError("spectrum must be a nonempty 1-d array")
    if (np.diff(lam) < -1e-12 * max(abs(lam[-1]), 1.0)).any():
        raise DataError("spectrum must be ascending")
    if lam[0] < -1e-8 * max(abs(lam[-1]), 1.0):
        raise DataError("spectrum must be nonnegative")
    lam = np.maximum(lam, 0.0)
    H = bank._evaluate(lam)
    if not np.isfinite(H).all():
        raise DataError("filter response contains non-finite values")
    G = np.einsum("sk,sk->k", H, H)
    j = int(np.argmin(G))
    if G[j] < epsilon:
        raise ConsistencyError(index=j, value=float(G[j]), threshold=epsilon)
    return FilterResponse(values=H, energy=G)


def response_curve(bank: FilterBank, lam_max: float,
                   samples: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Dense response curves for plotting (no consistency gate)."""
    if isinstance(bank, IdealBank):
        k = bank.cutoffs[-1]
        idx = np.arange(k, dtype=np.float64)
        return idx, bank._evaluate(idx)
    grid = np.linspace(0.0, lam_max, samples)
    return grid, bank._evaluate(grid)


def heat_initialized_jacobi(channels: int = 6, order: int = 8,
                            lam_max: float = 1.0, beta_cap: float = 2.0,
                            time_span: tuple = (0.1, 10.0)) -> JacobiBank:
    """Jacobi bank least-squares fitted to a heat bank with log-spaced times.

    The times are `time_span` divided by lam_max, so the slowest channel
    still passes an appreciable fraction of the top of the spectrum, which
    keeps the consistency condition comfortably satisfied at step 0.
    """
    if beta_cap <= 1.0:
        raise DataError("beta_cap must exceed 1 for unit initial gains")
    times = np.geomspace(time_span[0], time_span[1], channels) / lam_max
    x = -np.cos(np.linspace(0.0, np.pi, 257))        # dense, ascending
    gamma = np.full(order + 1, np.arctanh(1.0 / beta_cap))
    raw = softplus_inverse(1.0)                      # a = b = 0
    basis = jacobi_eval(0.0, 0.0, order, x)          # unit gains
    lam_grid = (x + 1.0) * (lam_max / 2.0)
    targets = np.exp(-np.outer(times, lam_grid))
    alpha, *_ = np.linalg.lstsq(basis.T, targets.T, rcond=None)
    return JacobiBank(alpha=alpha.T, gamma=gamma, a_raw=raw, b_raw=raw,
                      beta_cap=beta_cap, lam_max=float(lam_max))


# ---------------------------------------------------------------------------
# Plain-text (de)serialization


def bank_to_text(bank: FilterBank) -> str:
    lines = ["shapematch-bank 1", f"kind {bank.kind}",
             f"channels {bank.channels}"]
    if isinstance(bank, HeatBank):
        lines.append("times " + " ".join("%.17g" % t for t in bank.times))
    elif isinstance(bank, IdealBank):
        lines.append("cutoffs " + " ".join(str(int(c)) for c in bank.cutoffs))
    elif isinstance(bank, MeyerBank):
        lines.append(f"scales {bank.scales}")
    elif isinstance(bank, JacobiBank):
        lines.append(f"order {bank.order}")
        lines.append("a_raw %.17g" % bank.a_raw)
        lines.append("b_raw %.17g" % bank.b_raw)
        lines.append("beta_cap %.17g" % bank.beta_cap)
        lines.append("lam_max " + ("none" if bank.lam_max is None
                                   else "%.17g" % bank.lam_max))
        lines.append("gamma " + " ".join("%.17g" % g for g in bank.gamma))
        for row in bank.alpha:
            lines.append("alpha " + " ".join("%.17g" % w for w in row))
        lines.append(f"# effective a={bank.a:.6g} b={bank.b:.6g}")
    else:
        raise DataError(f"cannot serialize bank of type {type(bank).__name__}")
    return "\n".join(lines) + "\n"


def bank_from_text(text: str) -> FilterBank:
    fields: dict = {"alpha": []}
    lines = [ln.strip() for ln in text.splitlines()
             if ln.strip() and not ln.strip().startswith("#")]
    if not lines or not lines[0].startswith("shapematch-bank"):
        raise DataError("not a shapematch filter bank record")
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "alpha":
            fields["alpha"].append([float(t) for t in rest.split()])
        else:
            fields[key] = rest.strip()
    kind = fields.get("kind")
    try:
        if kind == "heat":
            return HeatBank(times=tuple(float(t) for t in fields["times"].split()))
        if kind == "ideal":
            return IdealBank(cutoffs=tuple(int(t) for t in fields["cutoffs"].split()))
        if kind == "meyer":
            return MeyerBank(scales=int(fields["scales"]))
        if kind == "jacobi":
            lam_max = fields.get("lam_max", "none")
            return JacobiBank(
                alpha=np.array(fields["alpha"], dtype=np.float64),
                gamma=np.array([float(t) for t in fields["gamma"].split()]),
                a_raw=float(fields["a_raw"]),
                b_raw=float(fields["b_raw"]),
                beta_cap=float(fields["beta_cap"]),
                lam_max=None if lam_max == "none" else float(lam_max),
            )
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed filter bank record: {exc}") from exc
    raise DataError(f"unknown filter bank kind '{kind}'")


def save_bank(bank: FilterBank, path) -> None:
    Path(path).write_text(bank_to_text(bank))


def load_bank(path) -> FilterBank:
    path = Path(path)
    if not path.exists():
        raise DataError(f"filter bank file not found: {path}")
    return bank_from_text(path.read_text())
