"""Fixed-grid composite Simpson reference for the plume-shine dose.

Independent of the Rust code: parses the shipped data file itself and
integrates the point kernel over the same truncated volume with n intervals
per axis. Usage: simpson_oracle.py NUCLIDE CLASS H X1 [n] [mfp_multiple] [y1]
"""
import math
import sys
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parent.parent / "crates/core/data/nuclides.dat"
ALPHA = 1.602176634e-13 * 3.6e9
EPS = 0.5
SIGMA_MULT = 4.0
BRIGGS = {
    "A": (0.22, ("lin", 0.20, 0.0)),
    "B": (0.16, ("lin", 0.12, 0.0)),
    "C": (0.11, ("sqrt", 0.08, 0.0002)),
    "D": (0.08, ("sqrt", 0.06, 0.0015)),
    "E": (0.06, ("hyp", 0.03, 0.0003)),
    "F": (0.04, ("hyp", 0.016, 0.0003)),
}


def load(path=DATA):
    photon, nuclides, section = [], {}, None
    for raw in path.read_text().splitlines():
        line = raw.split("#")[0].strip()
        if not line:
            continue
        if line.startswith("["):
            section = line[1:-1]
            if section.startswith("nuclide "):
                nuclides[section.split()[1]] = []
            continue
        parts = line.split()
        if section == "photon":
            photon.append([float(p) for p in parts])
        elif section.startswith("nuclide ") and parts[0] != "half_life_s":
            nuclides[section.split()[1]].append((float(parts[0]), float(parts[1])))
    return np.array(photon), nuclides


def loglog(grid, col, e):
    return math.exp(np.interp(math.log(e), np.log(grid[:, 0]), np.log(grid[:, col])))


def sigmas(cls, x):
    cy, (law, c, k) = BRIGGS[cls]
    sy = cy * x / np.sqrt(1 + 0.0001 * x)
    if law == "lin":
        sz = c * x
    elif law == "sqrt":
        sz = c * x / np.sqrt(1 + k * x)
    else:
        sz = c * x / (1 + k * x)
    return sy, sz


def simpson_weights(n):
    w = np.ones(n + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return w / 3


def line_dose(grid, e, yld, cls, h, x1, n, mfp_mult, y1=0.0, z1=1.0):
    mu, mua, a, b = (loglog(grid, c, e) for c in (1, 2, 3, 4))
    reach = mfp_mult / mu
    xlo, xhi = max(EPS, x1 - reach), x1 + reach
    w = simpson_weights(n)
    t = np.linspace(-1.0, 1.0, n + 1)
    total = 0.0
    xs = np.linspace(xlo, xhi, n + 1)
    for wx, x in zip(w, xs):
        sy, sz = sigmas(cls, x)
        ys = SIGMA_MULT * sy * t
        zlo, zhi = max(0.0, h - SIGMA_MULT * sz), h + SIGMA_MULT * sz
        zs = np.linspace(zlo, zhi, n + 1)
        Y, Z = np.meshgrid(ys, zs, indexing="ij")
        chi = (np.exp(-Y**2 / (2 * sy**2)) / (2 * math.pi * sy * sz)
               * (np.exp(-(Z - h) ** 2 / (2 * sz**2)) + np.exp(-(Z + h) ** 2 / (2 * sz**2))))
        r2 = np.maximum((x - x1) ** 2 + (Y - y1) ** 2 + (Z - z1) ** 2, EPS * EPS)
        mr = mu * np.sqrt(r2)
        k = (1 + a * mr * np.exp(b * mr)) * np.exp(-mr) / (4 * math.pi * r2)
        inner = np.einsum("i,j,ij->", w, w, k * chi) * (ys[1] - ys[0]) * (zs[1] - zs[0])
        total += wx * inner
    total *= xs[1] - xs[0]
    return ALPHA * e * yld * mua * total


def dose(nuclide, cls, h, x1, n=96, mfp_mult=5.0, y1=0.0):
    grid, nuclides = load()
    return sum(line_dose(grid, e, y, cls, h, x1, n, mfp_mult, y1) for e, y in nuclides[nuclide])


if __name__ == "__main__":
    a = sys.argv[1:]
    n = int(a[4]) if len(a) > 4 else 96
    m = float(a[5]) if len(a) > 5 else 5.0
    y1 = float(a[6]) if len(a) > 6 else 0.0
    print(f"{dose(a[0], a[1], float(a[2]), float(a[3]), n, m, y1):.10e}")
