"""Regenerates the field-file fixtures (deterministic; numpy default_rng with fixed seeds)."""
import itertools
import os

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))


def grid_nodes(dim, n, hw):
    h = 2.0 * hw / (n - 1)
    coords = -hw + h * np.arange(n)
    # flat order: first index fastest
    idx = list(itertools.product(range(n), repeat=dim))
    idx = [tuple(reversed(t)) for t in idx]
    pts = np.array([[coords[i] for i in t] for t in idx])
    return h, idx, pts


def write(name, dim, n, hw, values):
    h, idx, _ = grid_nodes(dim, n, hw)
    with open(os.path.join(HERE, name), "w", newline="\n") as f:
        f.write("grid %d %.17g %.17g\n" % (dim, h, hw))
        for t, v in zip(idx, values):
            f.write(" ".join(str(i) for i in t) + " ")
            if np.ndim(v) == 0:
                f.write("%.17g\n" % v)
            else:
                f.write(" ".join("%.17g" % c for c in v) + "\n")


def pair(name, dim, n, hw, r0, r1):
    r1 = r1 * (r0.sum() / r1.sum())
    assert np.count_nonzero(r0) <= 64 and np.count_nonzero(r1) <= 64, name
    write("ot_%s_rho0.txt" % name, dim, n, hw, r0)
    write("ot_%s_rho1.txt" % name, dim, n, hw, r1)


def main():
    rng = np.random.default_rng(20240611)

    _, _, p = grid_nodes(2, 13, 1.5)
    r0 = (np.linalg.norm(p, axis=1) < 0.8).astype(float)
    r1 = (np.linalg.norm(p - [0.25, 0.0], axis=1) < 0.8).astype(float)
    pair("disc_shift", 2, 13, 1.5, r0, r1)

    _, idx, p = grid_nodes(2, 11, 1.25)
    ij = np.array(idx)
    r0 = np.where((ij[:, 0] < 7) & (ij[:, 1] < 7), rng.uniform(0.5, 1.5, len(p)), 0.0)
    r1 = np.where((ij[:, 0] >= 5) & (ij[:, 1] >= 5), rng.uniform(0.5, 1.5, len(p)), 0.0)
    pair("random_blocks", 2, 11, 1.25, r0, r1)

    _, _, p = grid_nodes(1, 65, 1.0)
    x = p[:, 0]
    r0 = np.where(np.abs(x + 0.4) < 0.5, np.exp(-((x + 0.4) / 0.3) ** 2), 0.0)
    r1 = np.where(np.abs(x - 0.3) < 0.25, 1.0, 0.0) + np.where(np.abs(x - 0.8) < 0.15, 2.0, 0.0)
    pair("line_bumps", 1, 65, 1.0, r0, r1)

    _, idx, p = grid_nodes(3, 7, 0.75)
    ijk = np.array(idx)
    r0 = np.where(np.all(ijk < 3, axis=1), rng.uniform(0.5, 1.5, len(p)), 0.0)
    r1 = np.where((ijk[:, 0] >= 3) & (ijk[:, 1] >= 3) & (ijk[:, 2] >= 2) & (ijk[:, 2] < 5), rng.uniform(0.5, 1.5, len(p)), 0.0)
    pair("cube_3d", 3, 7, 0.75, r0, r1)

    _, _, p = grid_nodes(2, 17, 1.0)
    r = np.linalg.norm(p, axis=1)
    pair("dilation", 2, 17, 1.0, (r < 0.35).astype(float), (r < 0.5).astype(float))

    # custom-file translation instance on 65^2 nodes, halfwidth 1.25
    _, _, p = grid_nodes(2, 65, 1.25)
    b = np.array([0.05, 0.0])
    write("custom_rho0.txt", 2, 65, 1.25, (np.linalg.norm(p, axis=1) < 1.15).astype(float))
    write("custom_rho1.txt", 2, 65, 1.25, (np.linalg.norm(p - b, axis=1) < 1.15).astype(float))
    write("custom_map.txt", 2, 65, 1.25, [tuple(q + b) for q in p])


if __name__ == "__main__":
    main()
