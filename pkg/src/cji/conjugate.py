"""Conjugate transformation and its per-timestep scalar coefficients.

The transform absorbing the linear and measurement-consistency drift is

    A_t = exp(kappa1(t)) [I + (exp(kappa2(t)) - 1) P],

where P is the orthogonal projector of the degradation operator, so A_t and
its inverse act through one projector application and two scalars.  All drift
coefficients (the Phi integrals) decompose the same way: a scalar on I, a
scalar on P, and a scalar through H^+.  Nothing here ever forms a d x d
matrix; tables store five scalars per timestep.

Integrals whose integrands blow up at t=0 (anything carrying 1/sigma or
1/r^2) start at the configurable floor cfg.t_floor instead of 0; sampling
grids never step below the floor either.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import CoefficientOverflowError, ConfigError
from .quadrature import adaptive_simpson
from .schedules import DiffusionSchedule, FlowSchedule, GuidanceConfig

# exp() overflows double precision just above exp(709).
EXP_GUARD = 700.0

DEFAULT_TOL = 1e-5


@dataclass(frozen=True)
class ScalarPair:
    """Coefficient a*I + b*P acting on length-d vectors."""

    id_coeff: float
    proj_coeff: float

    def apply(self, x, px):
        return self.id_coeff * x + self.proj_coeff * px


@dataclass(frozen=True)
class PhiValues:
    """Drift coefficients at one time: phi_y on H^+, two scalar pairs."""

    phi_y: float
    phi_main: ScalarPair
    phi_j: ScalarPair


def _kind_of(sched) -> str:
    if isinstance(sched, DiffusionSchedule):
        return "diffusion"
    if isinstance(sched, FlowSchedule):
        return "flow"
    raise ConfigError(f"expected a schedule, got {type(sched).__name__}")


def kappa1(t, lam: float, sched) -> float:
    """int_0^t (lam + beta_s/2) ds for diffusion; lam*t for flows."""
    if _kind_of(sched) == "diffusion":
        return lam * np.asarray(t, dtype=float) + 0.5 * sched.beta_int(t)
    return lam * np.asarray(t, dtype=float)


def kappa2_origin(cfg: GuidanceConfig, sched) -> float:
    """Lower integration limit of kappa2: 0 when the integrand is regular
    there, cfg.t_floor when it is singular."""
    kind = _kind_of(sched)
    if cfg.schedule_kind == "adaptive_paper":
        return 0.0
    if kind == "diffusion" and cfg.schedule_kind == "constant_r2":
        return 0.0
    return cfg.t_floor


def kappa2_integrand(s, cfg: GuidanceConfig, sched):
    """d(kappa2)/ds: the scalar weight on P inside the transform exponent.

    Algebraically simplified per schedule kind so the guidance-weight factors
    cancel exactly instead of forming 0/0 at the endpoints.
    """
    s = np.asarray(s, dtype=float)
    w = cfg.w
    if _kind_of(sched) == "diffusion":
        beta = sched.beta(s)
        if cfg.schedule_kind == "adaptive_paper":
            return -0.5 * w * beta
        if cfg.schedule_kind == "constant_r2":
            return -0.5 * w * beta * np.exp(sched.beta_int(s))
        return -0.5 * w * beta / (sched.mu(s) ** 2 * sched.sigma_sq(s))
    # Flows carry no 1/2: the transform exponent must cancel the full
    # projector drift w_t r^-2 gamma gammadot^2 / (alpha (gamma alphadot -
    # gammadot alpha)) of the conditional velocity field.
    alpha = sched.alpha(s)
    gamma = sched.gamma(s)
    if cfg.schedule_kind == "adaptive_paper":
        return w * alpha * gamma
    if cfg.schedule_kind == "constant_r2":
        return w * gamma / alpha
    return w * (alpha * alpha + gamma * gamma) / (alpha * gamma)


def kappa2(t, cfg: GuidanceConfig, sched):
    """Closed-form evaluation of the P-exponent for every schedule kind.

    Accepts scalars or arrays; returns a float for scalar input.
    """
    scalar = np.isscalar(t) or np.ndim(t) == 0
    t = np.asarray(t, dtype=float)
    w = cfg.w
    if w == 0.0:
        out = np.zeros_like(t)
        return float(out) if scalar else out
    if _kind_of(sched) == "diffusion":
        if cfg.schedule_kind == "adaptive_paper":
            out = -0.5 * w * sched.beta_int(t)
        elif cfg.schedule_kind == "constant_r2":
            out = -0.5 * w * np.expm1(sched.beta_int(t))
        else:
            # constant: -(w/2) int beta e^B/(1 - e^-B) = -(w/2) [e^B + ln(e^B - 1)]
            def anti(s):
                bb = sched.beta_int(s)
                return np.exp(bb) + bb + np.log(-np.expm1(-bb))
            out = -0.5 * w * (anti(t) - anti(kappa2_origin(cfg, sched)))
    else:
        if cfg.schedule_kind == "adaptive_paper":
            out = w * (t * t / 2.0 - t ** 3 / 3.0)
        elif cfg.schedule_kind == "constant_r2":
            lo = kappa2_origin(cfg, sched)
            out = w * ((np.log(t) - t) - (math.log(lo) - lo))
        else:
            lo = kappa2_origin(cfg, sched)

            def anti(s):
                return np.log(s / (1.0 - s)) - 2.0 * s

            out = w * (anti(t) - anti(lo))
    return float(out) if scalar else out


def kappa3(t, cfg: GuidanceConfig, sched, *, tol: float = 1e-9,
           expm1_factor: bool = False) -> float:
    """First-order noise correction coefficient on H^+ (H^+)^T.

    kappa3 = -sigma_y^2 * (int_floor^t kappa2'(s)/r_s^2 ds) * exp(kappa1 + kappa2).

    With ``expm1_factor`` the trailing factor becomes exp(kappa1+kappa2) - 1;
    that variant does not achieve the fourth-order error in sigma_y and is
    kept only for comparison.
    """
    if cfg.sigma_y < 0:
        raise ConfigError("sigma_y must be >= 0")
    if cfg.sigma_y == 0.0 or cfg.w == 0.0:
        return 0.0
    t = float(t)
    lo = cfg.t_floor
    if t <= lo:
        return 0.0

    def integrand(s):
        return kappa2_integrand(s, cfg, sched) / sched.r_sq(s)

    base = adaptive_simpson(integrand, lo, t, atol=tol, rtol=tol)
    k12 = float(kappa1(t, cfg.lam, sched)) + kappa2(t, cfg, sched)
    _exp_guard(k12, "kappa1 + kappa2")
    factor = math.exp(k12) - 1.0 if expm1_factor else math.exp(k12)
    return -(cfg.sigma_y ** 2) * base * factor


def _exp_guard(value: float, what: str):
    if value > EXP_GUARD:
        raise CoefficientOverflowError(
            f"{what} = {value:.3g} would overflow exp(); reduce w or lambda"
        )


def _a_scalars(t, cfg, sched, inverse: bool):
    k1 = float(kappa1(t, cfg.lam, sched))
    k2 = kappa2(t, cfg, sched)
    if inverse:
        k1, k2 = -k1, -k2
    _exp_guard(k1, "kappa1" if not inverse else "-kappa1")
    _exp_guard(k1 + k2, "kappa1 + kappa2" if not inverse else "-(kappa1 + kappa2)")
    return math.exp(k1), math.exp(k1 + k2)


def a_apply(t, x, op, cfg: GuidanceConfig, sched):
    """A_t x = e^{k1} (I - P) x + e^{k1+k2} P x.

    The orthogonal-split form avoids the cancellation of the equivalent
    e^{k1} [x + (e^{k2} - 1) P x] when k2 is strongly negative.
    """
    e1, e12 = _a_scalars(t, cfg, sched, inverse=False)
    px = op.proj_apply(x)
    return e1 * (x - px) + e12 * px


def a_inv_apply(t, x, op, cfg: GuidanceConfig, sched):
    """A_t^{-1} x = e^{-k1} (I - P) x + e^{-(k1+k2)} P x."""
    e1, e12 = _a_scalars(t, cfg, sched, inverse=True)
    px = op.proj_apply(x)
    return e1 * (x - px) + e12 * px


def a_noisy_apply(t, x, op, cfg: GuidanceConfig, sched, *,
                  expm1_factor: bool = False):
    """First-order-in-sigma_y^2 noisy transform: A_t x + kappa3 H^+ (H^+)^T x.

    The expansion assumes sigma_y^2 small against r_t^2 times the smallest
    kept eigenvalue of H H^T; ill-conditioned Gram spectra need either a
    larger spectral threshold or the explicit sampler.
    """
    out = a_apply(t, x, op, cfg, sched)
    k3 = kappa3(t, cfg, sched, expm1_factor=expm1_factor)
    if k3 != 0.0:
        out = out + k3 * op.pinv_outer_apply(x)
    return out


def a_noisy_inv_apply(t, x, op, cfg: GuidanceConfig, sched, *,
                      expm1_factor: bool = False):
    """Inverse of the noisy transform to the same order:
    A^{-1} x - kappa3 A^{-1} H^+ (H^+)^T A^{-1} x."""
    out = a_inv_apply(t, x, op, cfg, sched)
    k3 = kappa3(t, cfg, sched, expm1_factor=expm1_factor)
    if k3 != 0.0:
        k1 = float(kappa1(t, cfg.lam, sched))
        k2 = kappa2(t, cfg, sched)
        _exp_guard(-2.0 * (k1 + k2), "-2 (kappa1 + kappa2)")
        out = out - k3 * math.exp(-2.0 * (k1 + k2)) * op.pinv_outer_apply(x)
    return out


def phi_origin(cfg: GuidanceConfig, sched) -> float:
    """Lower integration limit of the Phi coefficients."""
    if _kind_of(sched) == "diffusion":
        return cfg.t_floor  # beta/sigma integrand is singular at 0
    return 0.0 if cfg.schedule_kind == "adaptive_paper" else cfg.t_floor


def _diffusion_guide(s, cfg, sched):
    """w_t / r_t^2, simplified per schedule kind (no 0/0 at the endpoints)."""
    if cfg.schedule_kind == "adaptive_paper":
        return cfg.w * sched.mu(s) ** 2
    if cfg.schedule_kind == "constant_r2":
        return cfg.w * np.ones_like(s)
    return cfg.w / sched.r_sq(s)


def _phi_integrands_diffusion(cfg, sched, squared_transform):
    lam = cfg.lam

    def parts(s):
        s = np.asarray(s, dtype=float)
        beta = sched.beta(s)
        mu = sched.mu(s)
        sigma = sched.sigma(s)
        guide = _diffusion_guide(s, cfg, sched)
        k1 = lam * s + 0.5 * sched.beta_int(s)
        k2 = kappa2(s, cfg, sched)
        e1 = np.exp(k1)
        ek2 = np.exp(k2)
        e12 = e1 * ek2
        return beta, mu, sigma, guide, e1, ek2, e12

    def phi_y(s):
        beta, mu, _, guide, _, _, e12 = parts(s)
        return -guide * beta / (2.0 * mu) * e12

    def phi_main_id(s):
        beta, _, sigma, _, e1, _, _ = parts(s)
        return beta / (2.0 * sigma) * e1

    def phi_main_p(s):
        beta, mu, sigma, guide, e1, ek2, e12 = parts(s)
        # Literal form keeps the transform inside the bracket, squaring the
        # projected factor; the simplified closed form carries it once.
        factor = e12 * e12 if squared_transform else e12
        return (beta / (2.0 * sigma) * e1 * (ek2 - 1.0)
                - guide * sigma * beta / (2.0 * mu * mu) * factor)

    def phi_j_id(s):
        beta, mu, sigma, guide, e1, _, _ = parts(s)
        return guide * sigma * beta / (2.0 * mu) * e1

    def phi_j_p(s):
        beta, mu, sigma, guide, e1, ek2, _ = parts(s)
        return guide * sigma * beta / (2.0 * mu) * e1 * (ek2 - 1.0)

    return phi_y, phi_main_id, phi_main_p, phi_j_id, phi_j_p


def _flow_guide_over_alpha(s, cfg, sched):
    """(w_t / r_t^2) * gamma / alpha, simplified per schedule kind."""
    alpha = sched.alpha(s)
    gamma = sched.gamma(s)
    if cfg.schedule_kind == "adaptive_paper":
        return cfg.w * alpha * gamma
    if cfg.schedule_kind == "constant_r2":
        return cfg.w * gamma / alpha
    return cfg.w * (alpha * alpha + gamma * gamma) / (alpha * gamma)


def _phi_integrands_flow(cfg, sched):
    lam = cfg.lam

    def parts(s):
        s = np.asarray(s, dtype=float)
        gamma = sched.gamma(s)
        guide = _flow_guide_over_alpha(s, cfg, sched)
        e1 = np.exp(lam * s)
        ek2 = np.exp(kappa2(s, cfg, sched))
        return gamma, guide, e1, ek2, e1 * ek2

    def phi_y(s):
        _, guide, _, _, e12 = parts(s)
        return guide * e12

    def phi_b_id(s):
        _, _, e1, _, _ = parts(s)
        return e1

    def phi_b_p(s):
        gamma, guide, e1, ek2, e12 = parts(s)
        return e1 * (ek2 - 1.0) - guide * gamma * e12

    def phi_j_id(s):
        gamma, guide, e1, _, _ = parts(s)
        return guide * gamma * e1

    def phi_j_p(s):
        gamma, guide, e1, ek2, _ = parts(s)
        return guide * gamma * e1 * (ek2 - 1.0)

    return phi_y, phi_b_id, phi_b_p, phi_j_id, phi_j_p


def _integrate(f, lo, t, tol):
    if t == lo:
        return 0.0
    return adaptive_simpson(f, lo, t, atol=tol, rtol=tol)


def phi_diffusion(t, cfg: GuidanceConfig, sched: DiffusionSchedule, *,
                  tol: float = DEFAULT_TOL, squared_transform: bool = False) -> PhiValues:
    """Drift coefficients at time t for the projected diffusion dynamics."""
    lo = phi_origin(cfg, sched)
    fy, fmi, fmp, fji, fjp = _phi_integrands_diffusion(cfg, sched, squared_transform)
    guided = cfg.w != 0.0
    return PhiValues(
        phi_y=_integrate(fy, lo, t, tol) if guided else 0.0,
        phi_main=ScalarPair(
            _integrate(fmi, lo, t, tol),
            _integrate(fmp, lo, t, tol) if guided else 0.0,
        ),
        phi_j=ScalarPair(
            _integrate(fji, lo, t, tol) if guided else 0.0,
            _integrate(fjp, lo, t, tol) if guided else 0.0,
        ),
    )


def phi_flow(t, cfg: GuidanceConfig, sched: FlowSchedule | None = None, *,
             tol: float = DEFAULT_TOL) -> PhiValues:
    """Drift coefficients at time t for the projected flow dynamics."""
    sched = sched or FlowSchedule()
    lo = phi_origin(cfg, sched)
    fy, fbi, fbp, fji, fjp = _phi_integrands_flow(cfg, sched)
    guided = cfg.w != 0.0
    return PhiValues(
        phi_y=_integrate(fy, lo, t, tol) if guided else 0.0,
        phi_main=ScalarPair(
            _integrate(fbi, lo, t, tol),
            _integrate(fbp, lo, t, tol) if guided else 0.0,
        ),
        phi_j=ScalarPair(
            _integrate(fji, lo, t, tol) if guided else 0.0,
            _integrate(fjp, lo, t, tol) if guided else 0.0,
        ),
    )


@dataclass(frozen=True)
class CoefficientTable:
    """Per-timestep scalars, independent of any sample or observation."""

    kind: str  # "diffusion" | "flow"
    times: np.ndarray
    kappa1: np.ndarray
    kappa2: np.ndarray
    kappa3: np.ndarray
    phi_y: np.ndarray
    phi_main_id: np.ndarray
    phi_main_p: np.ndarray
    phi_j_id: np.ndarray
    phi_j_p: np.ndarray

    def __len__(self):
        return self.times.size

    def phi_at(self, i: int) -> PhiValues:
        return PhiValues(
            phi_y=float(self.phi_y[i]),
            phi_main=ScalarPair(float(self.phi_main_id[i]), float(self.phi_main_p[i])),
            phi_j=ScalarPair(float(self.phi_j_id[i]), float(self.phi_j_p[i])),
        )


def precompute_table(grid, cfg: GuidanceConfig, sched, *, tol: float = DEFAULT_TOL,
                     squared_transform: bool = False) -> CoefficientTable:
    """Evaluate every coefficient on the sampling grid.

    Each entry is computed with the same calls as the scalar phi_* functions,
    so shared times agree bitwise with direct evaluation.  The table is
    immutable and shared read-only across chains.
    """
    kind = _kind_of(sched)
    times = np.asarray(grid, dtype=float)
    n = times.size
    cols = {name: np.zeros(n) for name in (
        "kappa1", "kappa2", "kappa3", "phi_y",
        "phi_main_id", "phi_main_p", "phi_j_id", "phi_j_p")}
    for i, t in enumerate(times):
        cols["kappa1"][i] = float(kappa1(t, cfg.lam, sched))
        cols["kappa2"][i] = kappa2(t, cfg, sched)
        if cfg.sigma_y > 0:
            cols["kappa3"][i] = kappa3(t, cfg, sched)
        if kind == "diffusion":
            phi = phi_diffusion(t, cfg, sched, tol=tol, squared_transform=squared_transform)
        else:
            phi = phi_flow(t, cfg, sched, tol=tol)
        cols["phi_y"][i] = phi.phi_y
        cols["phi_main_id"][i] = phi.phi_main.id_coeff
        cols["phi_main_p"][i] = phi.phi_main.proj_coeff
        cols["phi_j_id"][i] = phi.phi_j.id_coeff
        cols["phi_j_p"][i] = phi.phi_j.proj_coeff
    for name, col in cols.items():
        if not np.all(np.isfinite(col)):
            raise ConfigError(f"non-finite coefficient in column {name}")
    return CoefficientTable(kind=kind, times=times, **cols)


CSV_COLUMNS = ("t", "kappa1", "kappa2", "kappa3", "phi_y",
               "phi_main_id", "phi_main_p", "phi_j_id", "phi_j_p")


def table_to_csv(table: CoefficientTable) -> str:
    """One CSV row per grid time; repr() gives shortest round-trip decimals."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for i in range(len(table)):
        writer.writerow([
            repr(float(v)) for v in (
                table.times[i], table.kappa1[i], table.kappa2[i],
                table.kappa3[i], table.phi_y[i], table.phi_main_id[i],
                table.phi_main_p[i], table.phi_j_id[i], table.phi_j_p[i])
        ])
    return buf.getvalue()


def table_from_csv(text: str, kind: str = "diffusion") -> CoefficientTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ConfigError(f"unexpected coefficient CSV header {header}")
    rows = [[float(v) for v in row] for row in reader if row]
    arr = np.asarray(rows, dtype=float)
    return CoefficientTable(
        kind=kind, times=arr[:, 0], kappa1=arr[:, 1], kappa2=arr[:, 2],
        kappa3=arr[:, 3], phi_y=arr[:, 4], phi_main_id=arr[:, 5],
        phi_main_p=arr[:, 6], phi_j_id=arr[:, 7], phi_j_p=arr[:, 8],
    )
