"""Independent numeric oracles shared by the unit and acceptance tests.

These deliberately avoid the closed forms used by the package: integrals are
done by Gauss quadrature on directly-fitted affine fields, and proximal maps
by sampling their defining objectives on a grid and refining the quadratic
vertex (exact for the piecewise-quadratic objectives involved).
"""

import numpy as np

# degree-5, 7-point Gauss rule on the reference triangle
_G7_PTS = [(1 / 3, 1 / 3, 1 / 3)]
for _a in ((6 - np.sqrt(15)) / 21, (6 + np.sqrt(15)) / 21):
    _G7_PTS += [(_a, _a, 1 - 2 * _a), (_a, 1 - 2 * _a, _a), (1 - 2 * _a, _a, _a)]
G7_POINTS = np.array(_G7_PTS)
G7_WEIGHTS = np.array(
    [9 / 40]
    + [(155 - np.sqrt(15)) / 1200] * 3
    + [(155 + np.sqrt(15)) / 1200] * 3
)


def gauss7_phase_field_integral(pts, gamma, z, lam, alpha):
    """Quadrature of lam |grad z|^2 + z^2 |grad gamma|^2 + alpha^2 (z-1)^2 / (4 lam)
    over one triangle, with the affine fields fitted from vertex values."""
    vander = np.column_stack([pts, np.ones(3)])
    cg = np.linalg.solve(vander, gamma)
    cz = np.linalg.solve(vander, z)
    area = 0.5 * abs(np.linalg.det(vander))
    gg = cg[0] ** 2 + cg[1] ** 2
    gz = cz[0] ** 2 + cz[1] ** 2
    zq = G7_POINTS @ z
    integrand = lam * gz + zq**2 * gg + alpha**2 * (zq - 1) ** 2 / (4 * lam)
    return area * float(G7_WEIGHTS @ integrand)


def brute_min_1d(f, lo, hi, n=4001):
    """Minimize a piecewise-quadratic 1D function by grid + parabola vertex.

    The vertex of the parabola through three neighbouring samples is exact for
    quadratics, so accuracy is limited only by round-off; boundary minima are
    returned exactly.
    """
    xs = np.linspace(lo, hi, n)
    fs = f(xs)
    i = int(np.argmin(fs))
    if i == 0 or i == n - 1:
        return xs[i]
    h = xs[1] - xs[0]
    denom = fs[i + 1] - 2 * fs[i] + fs[i - 1]
    if denom <= 0:
        return xs[i]
    x = xs[i] - 0.5 * h * (fs[i + 1] - fs[i - 1]) / denom
    return min(max(x, lo), hi)


def brute_disk_projection(v, radius, n=2049):
    """Project a 2-vector onto a disk by minimizing over the feasible set.

    The unconstrained vertex of 0.5 ||u - v||^2 is v itself; when infeasible
    the minimizer lies on the boundary circle, located by zooming an angular
    grid twice and fitting the final parabola at a grid spacing coarse enough
    to stay above function-value round-off.
    """
    v = np.asarray(v, dtype=float)
    if np.hypot(v[0], v[1]) <= radius:
        return v.copy()

    def obj(theta):
        u0 = radius * np.cos(theta) - v[0]
        u1 = radius * np.sin(theta) - v[1]
        return 0.5 * (u0 * u0 + u1 * u1)

    lo, hi = 0.0, 2 * np.pi
    for _ in range(2):
        ts = np.linspace(lo, hi, n)
        i = int(np.argmin(obj(ts)))
        span = (hi - lo) / n
        lo, hi = ts[i] - 2 * span, ts[i] + 2 * span
    theta = brute_min_1d(obj, lo, hi, n=41)
    return radius * np.array([np.cos(theta), np.sin(theta)])
