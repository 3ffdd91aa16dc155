"""Regenerate the synthetic feeder fixtures shipped with the package.

The 13-bus-shaped feeder closes one 7-cycle (7 radial configurations); the
37-bus-shaped feeder closes an edge-disjoint 3-cycle and 7-cycle (21
configurations, 38 candidate lines). Values are synthetic but distinct.
"""

from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "gridprobe" / "data"


def emit(name, tree_edges, extra_edges, switchable, loads, seed, r_range):
    rng = np.random.default_rng(seed)
    edges = list(tree_edges) + list(extra_edges)
    n_extra = len(extra_edges)
    r = np.round(rng.permutation(np.linspace(*r_range, len(edges))), 6)
    ratio = np.round(rng.uniform(0.45, 0.75, len(edges)), 3)
    x = np.round(r * ratio, 6)
    lines = []
    for k, (u, v) in enumerate(edges):
        sid = f"L{k + 1}"
        sw = 1 if (u, v) in switchable or (v, u) in switchable else 0
        lines.append(f"{sid} {u} {v} {r[k]:.6f} {x[k]:.6f} {sw}")
    out = ["# synthetic radial feeder fixture (per-unit)", "[lines]",
           "# id from to r_pu x_pu switchable"]
    out += lines
    out += ["[loads]", "# bus p_pu q_pu"]
    tanphi = np.tan(np.arccos(0.95))
    for bus, p in loads.items():
        out.append(f"{bus} {p:.4f} {p * tanphi:.5f}")
    out += ["[status]", " ".join(f"L{k + 1}" for k in range(len(tree_edges)))]
    (DATA / f"{name}.feeder").write_text("\n".join(out) + "\n")
    print(name, "->", len(edges), "lines,", n_extra, "extras")


def main():
    DATA.mkdir(parents=True, exist_ok=True)

    # 3-bus worked-example path: r = (1, 2)
    (DATA / "path3.feeder").write_text(
        "# two-line path feeder used by the worked examples\n"
        "[lines]\n"
        "# id from to r_pu x_pu switchable\n"
        "L1 0 1 1.0 1.0 0\n"
        "L2 1 2 2.0 2.0 0\n"
        "[loads]\n"
        "# bus p_pu q_pu\n"
        "1 0.015 0.00493\n"
        "2 0.020 0.00657\n"
        "[status]\n"
        "L1 L2\n"
    )
    print("path3 -> 2 lines")

    tree13 = [(0, 1), (1, 2), (2, 3), (3, 4), (2, 5), (5, 6), (1, 7),
              (7, 8), (8, 9), (7, 10), (10, 11), (11, 12)]
    extra13 = [(4, 9)]
    cycle13 = {(3, 4), (2, 3), (1, 2), (1, 7), (7, 8), (8, 9), (4, 9)}
    # buses that are leaves in at least one configuration host the probing
    # inverters (rated at the local load) and carry the larger loads
    probed13 = {3, 4, 6, 8, 9, 12}
    rng = np.random.default_rng(13)
    loads13 = {b: float(np.round(rng.uniform(0.30, 0.60) if b in probed13
                                 else rng.uniform(0.04, 0.10), 4))
               for b in range(1, 13)}
    emit("feeder13", tree13, extra13, cycle13, loads13, seed=113, r_range=(0.012, 0.038))

    tree37 = [
        (0, 1), (1, 2), (2, 3), (3, 4), (4, 5),
        (2, 6), (6, 7), (7, 8),
        (3, 9), (9, 10), (10, 11), (10, 12),
        (4, 13), (13, 14), (14, 15), (14, 16),
        (5, 17), (17, 18), (18, 19), (18, 20), (5, 21),
        (1, 22), (22, 23), (23, 24), (22, 25),
        (7, 26), (26, 27),
        (9, 28), (28, 29), (29, 30),
        (13, 31), (31, 32),
        (21, 33), (33, 34), (34, 35), (33, 36),
    ]
    extra37 = [(11, 12), (20, 34)]
    cycle37 = {(10, 11), (10, 12), (11, 12),
               (17, 18), (18, 20), (5, 17), (5, 21), (21, 33), (33, 34), (20, 34)}
    probed37 = {8, 11, 12, 15, 16, 17, 19, 20, 21, 24, 25, 27, 30, 32, 35, 36}
    rng = np.random.default_rng(37)
    loads37 = {b: float(np.round(rng.uniform(0.25, 0.55) if b in probed37
                                 else rng.uniform(0.03, 0.08), 4))
               for b in range(1, 37)}
    emit("feeder37", tree37, extra37, cycle37, loads37, seed=137, r_range=(0.006, 0.020))


if __name__ == "__main__":
    main()
