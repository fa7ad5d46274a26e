"""Regenerate frozen.json from high-precision mpmath computations.

Run from the repository root: python tests/oracles/make_oracles.py
Nothing here imports the package under test.
"""
import json
import os

import mpmath as mp

mp.mp.dps = 40


def f(y, lam, a):
    y, lam, a = mp.mpf(y), mp.mpf(lam), mp.mpf(a)
    if y == 1:
        return lam * mp.log(a)
    return lam * mp.log(lam * (mp.exp(a * (1 - y) / lam) - 1) / (1 - y))


def fp(y, lam, a):
    return mp.diff(lambda t: f(t, lam, a), y)


def fpp(y, lam, a):
    return mp.diff(lambda t: f(t, lam, a), y, 2)


def entropy_reward(vx, lam, a):
    # E[u] + lam * entropy under density prop. to exp(u (1 - vx) / lam) on [0, a]
    th = (1 - mp.mpf(vx)) / lam
    Z = mp.quad(lambda u: mp.exp(u * th), [0, a])
    dens = lambda u: mp.exp(u * th) / Z
    return mp.quad(lambda u: (u - lam * mp.log(dens(u))) * dens(u), [0, a])


def kappa(F2, F1, F0):
    roots = [r for r in mp.polyroots([F2, F1, F0], extraprec=60) if abs(mp.im(r)) < mp.mpf(10) ** -30]
    pos = [mp.re(r) for r in roots if mp.re(r) > 0]
    return max(pos)


def targets(d1, d2, q12, q21, lam, a):
    f0 = f(0, lam, a)
    A = mp.matrix([[d1 + q12, -q12], [-q21, d2 + q21]])
    g = mp.lu_solve(A, mp.matrix([f0, f0]))
    return g[1], g[0]        # (value in regime 2 = p 0, value in regime 1 = p 1)


def main():
    pts = [(0.0, 1.0, 1.0), (0.5, 1.0, 1.0), (-3.0, 0.5, 2.0), (2.5, 2.0, 0.6),
           (0.999, 1.0, 1.0), (1.0 + 1e-6, 1.0, 3.0), (-50.0, 1.0, 1.0)]
    out = {
        "f": [[y, lam, a, float(f(y, lam, a))] for y, lam, a in pts],
        "fp": [[y, lam, a, float(fp(y, lam, a))] for y, lam, a in pts],
        "fpp": [[y, lam, a, float(fpp(y, lam, a))] for y, lam, a in pts],
        "entropy_reward": [[vx, lam, a, float(entropy_reward(vx, lam, a))]
                           for vx, lam, a in [(0.0, 1.0, 1.0), (0.7, 1.0, 1.0), (2.0, 0.5, 2.0),
                                              (-1.0, 1.0, 3.0)]],
        "kappa": [[F2, F1, F0, float(kappa(F2, F1, F0))]
                  for F2, F1, F0 in [(1.0, 0.0, -4.0), (1.0, -3.0, 2.0), (0.045, -0.3, -1.2),
                                     (2.0, 1.0, -1e-6), (1e-8, -1.0, 1e-3)]],
        "targets": [[d1, d2, q12, q21, lam, a, [float(v) for v in targets(d1, d2, q12, q21, lam, a)]]
                    for d1, d2, q12, q21, lam, a in [(0.1, 0.3, 0.36, 2.89, 1.0, 1.0),
                                                     (0.2, 0.05, 1.0, 0.5, 0.5, 2.0)]],
        "root_a2_lam1": float(mp.findroot(lambda y: f(y, 1, 2), 1.5)),
    }
    path = os.path.join(os.path.dirname(__file__), "frozen.json")
    with open(path, "w") as fh:
        json.dump(out, fh, indent=1)


if __name__ == "__main__":
    main()
