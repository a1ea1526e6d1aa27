"""Direct evaluation of alpha-composited expected depth for two isotropic
Gaussian primitives, in 50-digit arithmetic. Prints the values pinned by the
C++ renderer oracle tests."""
from mpmath import mp, mpf, sqrt, exp

mp.dps = 50


def render(prims, d):
    n = sqrt(sum(x * x for x in d))
    d = [x / n for x in d]
    rows = []
    for c, var_axis, alpha in prims:
        t = sqrt(sum(x * x for x in c))
        p = sum(ci * di for ci, di in zip(c, d))
        var = sum(di * di * var_axis for di in d)
        rows.append((t, p, alpha * exp(-(t - p) ** 2 / (2 * var))))
    rows.sort(key=lambda r: r[0])
    trans, depth, weights = mpf(1), mpf(0), []
    for t, p, a in rows:
        weights.append(a * trans)
        depth += a * trans * p
        trans *= 1 - a
    return depth, weights


fx = fy = mpf(220)
cx = cy = mpf(112)
ray = [(mpf(118) - cx) / fx, (mpf(109) - cy) / fy, mpf(1)]
prims = [
    ([mpf("0.05"), mpf("-0.02"), mpf("0.4")], mpf("1e-4"), mpf("0.5")),
    ([mpf("-0.04"), mpf("0.06"), mpf("0.6")], mpf("1e-4"), mpf("0.5")),
]
depth, w = render(prims, ray)
print("ray", [mp.nstr(x, 20) for x in ray])
print("w1 %s" % mp.nstr(w[0], 20))
print("w2 %s" % mp.nstr(w[1], 20))
print("depth %s" % mp.nstr(depth, 20))
on_axis, w_axis = render([([0, 0, mpf("0.4")], mpf("1e-4"), mpf("0.5")), ([0, 0, mpf("0.6")], mpf("1e-4"), mpf("0.5"))], [0, 0, 1])
print("on_axis depth %s" % mp.nstr(on_axis, 20))
