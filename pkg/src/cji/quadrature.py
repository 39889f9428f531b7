"""One-dimensional adaptive composite Simpson quadrature.

The integrands here are smooth scalar functions of time, but several have
steep boundary layers (1/sqrt(s) type behaviour near the integration floor),
so intervals are refined adaptively.  The function is evaluated on arrays of
abscissae so each refinement sweep is a single vectorized call.
"""

from __future__ import annotations

import numpy as np

from .errors import QuadratureError

MAX_EVALS = 2_000_000


def adaptive_simpson(f, a: float, b: float, *, atol: float = 1e-5,
                     rtol: float = 1e-5, initial_panels: int = 8) -> float:
    """Integrate f over [a, b] to the requested absolute/relative tolerance.

    f must map an ndarray of points to an ndarray of values.  Richardson
    extrapolation of the accepted Simpson pairs gives one extra order.
    Raises QuadratureError (with the achieved error estimate) if the interval
    budget runs out before the tolerance is met.
    """
    if a == b:
        return 0.0
    sign = 1.0
    if b < a:
        a, b = b, a
        sign = -1.0

    edges = np.linspace(a, b, initial_panels + 1)
    left = edges[:-1]
    right = edges[1:]
    mid = 0.5 * (left + right)
    fl, fm, fr = f(left), f(mid), f(right)
    simpson = (right - left) / 6.0 * (fl + 4.0 * fm + fr)

    total = float(np.sum(simpson))
    result = 0.0
    n_evals = 3 * initial_panels

    while left.size:
        lm = 0.5 * (left + mid)
        rm = 0.5 * (mid + right)
        flm, frm = f(lm), f(rm)
        n_evals += 2 * left.size
        s_left = (mid - left) / 6.0 * (fl + 4.0 * flm + fm)
        s_right = (right - mid) / 6.0 * (fm + 4.0 * frm + fr)
        refined = s_left + s_right
        err = (refined - simpson) / 15.0

        # Error budget proportional to interval length.
        budget = (right - left) / (b - a) * max(atol, rtol * abs(total))
        done = np.abs(err) <= budget
        result += float(np.sum(refined[done] + err[done]))

        keep = ~done
        if not np.any(keep):
            break
        if n_evals > MAX_EVALS:
            achieved = float(np.max(np.abs(err[keep]) / np.maximum(budget[keep], 1e-300)))
            raise QuadratureError(
                f"quadrature did not converge on {keep.sum()} subintervals "
                f"(worst error {achieved:.3g}x over budget)",
                achieved=float(np.sum(np.abs(err[keep]))),
            )
        # Split every unconverged interval in two.
        left = np.concatenate([left[keep], mid[keep]])
        right = np.concatenate([mid[keep], right[keep]])
        fl = np.concatenate([fl[keep], fm[keep]])
        fr = np.concatenate([fm[keep], fr[keep]])
        mid = np.concatenate([lm[keep], rm[keep]])
        fm = np.concatenate([flm[keep], frm[keep]])
        simpson = np.concatenate([s_left[keep], s_right[keep]])
        total = result + float(np.sum(simpson))

    return sign * result
