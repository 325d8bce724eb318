"""Smoke test for the peierls_py bindings."""

import math

import peierls_py as pp


def main():
    grid = pp.Grid(8.0, 1.0 / 16.0)
    assert grid.n == 128, grid
    assert abs(grid.p_nodes()[0] + math.pi) < 1e-12

    model = pp.FiberModel()
    assert model.f == 5
    p, e, gap = model.band(grid)
    assert len(p) == len(e) == len(gap) > 0
    assert min(gap) > 0.5

    t = pp.max_time()
    assert abs(t - 2.7625) < 1e-3, t

    eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    slope, _, r2 = pp.fit_slope(eps, [3 * x * x for x in eps])
    assert abs(slope - 2.0) < 1e-12 and abs(r2 - 1.0) < 1e-12

    rows, slopes, digest = pp.sweep("experiment.t_points = 2\n", "localized")
    assert len(rows) == 8 and len(digest) == 64
    assert slopes[-1][1] > 0.9, slopes

    w = pp.wavepacket_wigner(grid)
    total = sum(sum(r) for r in w)
    assert abs(total - 1.0) < 1e-10, total

    checks = pp.selftest()
    assert all(c[3] for c in checks), [c for c in checks if not c[3]]

    try:
        pp.Grid(8.0, 0.3)
    except ValueError:
        pass
    else:
        raise AssertionError("non-integer N accepted")

    print("peierls_py smoke test passed")


if __name__ == "__main__":
    main()
