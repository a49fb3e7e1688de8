"""Independent brute-force references used by the tests.

Everything here works on plain dictionaries and ``itertools`` loops over
cells, sharing no code with the package's vectorized kernels.
"""
import itertools
import math
from collections import defaultdict


def cells(names, mass):
    """Yield ``({name: value}, p)`` for every cell with positive mass."""
    for idx in itertools.product(*(range(c) for c in mass.shape)):
        p = float(mass[idx])
        if p > 0:
            yield dict(zip(names, idx)), p


def marginal(names, mass, keep):
    out = defaultdict(float)
    for cell, p in cells(names, mass):
        out[tuple(cell[k] for k in keep)] += p
    return out


def entropy(names, mass, vars_, given=()):
    """H(vars | given) as -sum p(a,c) log2 p(a|c)."""
    joint = marginal(names, mass, tuple(vars_) + tuple(given))
    cond = marginal(names, mass, tuple(given))
    k = len(vars_)
    return -sum(p * math.log2(p / cond[key[k:]]) for key, p in joint.items() if p > 0)


def mutual_information(names, mass, a, b, given=()):
    """I(a; b | c) as sum p(a,b,c) log2 [p(a,b,c) p(c) / (p(a,c) p(b,c))]."""
    a, b, c = tuple(a), tuple(b), tuple(given)
    pabc = marginal(names, mass, a + b + c)
    pac = marginal(names, mass, a + c)
    pbc = marginal(names, mass, b + c)
    pc = marginal(names, mass, c)
    na, nb = len(a), len(b)
    total = 0.0
    for key, p in pabc.items():
        ka, kb, kc = key[:na], key[na:na + nb], key[na + nb:]
        total += p * math.log2(p * pc[kc] / (pac[ka + kc] * pbc[kb + kc]))
    return total


def nofb_joint(p_s, pu0, pu1, pu2, px, W):
    """Cell-by-cell product p(s)p(u0|s)p(u1|s,u0)p(u2|s,u0)p(x|s,u0,u1,u2)p(y1,y2,z|x,s)."""
    import numpy as np
    nx, ns, n1, n2, nz = W.shape
    shape = (ns, pu0.shape[1], pu1.shape[2], pu2.shape[2], nx, n1, n2, nz)
    out = np.zeros(shape)
    for s, u0, u1, u2, x, y1, y2, z in itertools.product(*(range(c) for c in shape)):
        out[s, u0, u1, u2, x, y1, y2, z] = (p_s[s] * pu0[s, u0] * pu1[s, u0, u1] * pu2[s, u0, u2]
                                            * px[s, u0, u1, u2, x] * W[x, s, y1, y2, z])
    return out


def fb_joint(p_s, px, W, pv1, pv2):
    """Cell-by-cell product p(s)p(x|s)p(y1,y2,z|x,s)p(v1|y1)p(v2|y2)."""
    import numpy as np
    nx, ns, n1, n2, nz = W.shape
    shape = (ns, nx, n1, n2, nz, pv1.shape[1], pv2.shape[1])
    out = np.zeros(shape)
    for s, x, y1, y2, z, v1, v2 in itertools.product(*(range(c) for c in shape)):
        out[s, x, y1, y2, z, v1, v2] = (p_s[s] * px[s, x] * W[x, s, y1, y2, z]
                                        * pv1[y1, v1] * pv2[y2, v2])
    return out


def inner_nofb(names, mass):
    """The six inner-bound values and four slacks, one MI call per term."""
    def I(a, b, c=()):
        return mutual_information(names, mass, a, b, c)

    pp = lambda v: max(v, 0.0)
    common = min(I(["U0"], ["Y1"]), I(["U0"], ["Y2"]))
    i1y1 = I(["U1"], ["Y1"], ["U0"])
    i2y2 = I(["U2"], ["Y2"], ["U0"])
    vals = {
        "r0": pp(common - I(["U0"], ["Z"])),
        "r1": pp(i1y1 - I(["U1"], ["Y2", "U2"], ["U0"])),
        "r2": pp(i2y2 - I(["U2"], ["Y1", "U1"], ["U0"])),
        "r0_plus_r1": pp(common + i1y1 - I(["U0", "U1"], ["Z"])),
        "r0_plus_r2": pp(common + i2y2 - I(["U0", "U2"], ["Z"])),
        "r0_plus_r1_plus_r2": pp(common + i1y1 + i2y2 - I(["U0", "U1", "U2"], ["Z"])
                                 - I(["U1"], ["U2"], ["U0"])),
    }
    slacks = (I(["U0"], ["Y1"]) - I(["U0"], ["S"]), I(["U0"], ["Y2"]) - I(["U0"], ["S"]),
              i1y1 - I(["U1"], ["S"], ["U0"]), i2y2 - I(["U2"], ["S"], ["U0"]))
    return vals, slacks


def outer_nofb(names, mass):
    def I(b, c):
        return mutual_information(names, mass, ["X", "S"], b, c)

    pp = lambda v: max(v, 0.0)
    return (pp(min(I(["Y1"], ["Z"]), I(["Y2"], ["Z"]))),
            pp(min(I(["Y1"], ["Y2"]), I(["Y1"], ["Z"]))),
            pp(min(I(["Y2"], ["Y1"]), I(["Y2"], ["Z"]))))


def inner_fb(names, mass):
    def I(a, b):
        return mutual_information(names, mass, a, b)

    pp = lambda v: max(v, 0.0)
    xs = ["X", "S"]
    r1 = pp(min(I(xs, ["V1"]) - I(["V1"], ["Y2"]), I(xs, ["V1"]) - I(["V1"], ["Z"])))
    r2 = pp(min(I(xs, ["V2"]) - I(["V2"], ["Y1"]), I(xs, ["V2"]) - I(["V2"], ["Z"])))
    s = pp(I(xs, ["V1", "V2"]) - I(["V1", "V2"], ["Z"]))
    return r1, r2, s


def wiretap_secrecy(p_u, p_y_given_u, p_z_given_u):
    """[I(U;Y) - I(U;Z)]^+ for a single-letter wiretap setting given as plain lists."""
    def mi(pu, k):
        ny = len(k[0])
        py = [sum(pu[u] * k[u][y] for u in range(len(pu))) for y in range(ny)]
        return sum(pu[u] * k[u][y] * math.log2(k[u][y] / py[y])
                   for u in range(len(pu)) for y in range(ny) if pu[u] * k[u][y] > 0)
    return max(mi(p_u, p_y_given_u) - mi(p_u, p_z_given_u), 0.0)
