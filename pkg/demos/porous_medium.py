"""Pure aggregation without noise: the PDE solver against the Barenblatt profile.

With sigma = 0, no confinement and gamma2 = 1 the limit equation is the
porous medium equation rho_t = div(rho grad rho).  Its self-similar
solution spreads like t^(1/3) in one dimension while its peak decays like
t^(-1/3).  The finite-volume scheme should track both, and its L1 error
should shrink under grid refinement.

Run with ``python demos/porous_medium.py``.
"""

from dataclasses import replace
from pathlib import Path

import numpy as np

from meanfield.config import validate_config
from meanfield.pde import barenblatt, barenblatt_radius, gate_report, solve

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "pde_barenblatt.json"


def main():
    base = validate_config(CONFIG.read_text(), "pde")
    t0 = base.init.t0
    print(f"Barenblatt start t0={t0}, horizon T={base.T}, box [{base.low}, {base.high}]")

    print("\nrefinement study (L1 error at T)")
    errors = {}
    for cells in (64, 128, 256, 512):
        cfg = replace(base, cells=cells)
        res = solve(cfg)
        errors[cells] = gate_report(cfg, res)["l1_error"]
        rate = "" if cells == 64 else f"  ratio {errors[cells // 2] / errors[cells]:.2f}"
        print(f"  {cells:4d} cells  L1 {errors[cells]:.3e}{rate}")

    res = solve(base, times=np.linspace(0.0, base.T, 5))
    x = res.grid.centers()[:, 0]
    print("\nfront position and peak height over time")
    print("     t   support(num)  support(exact)   max rho   max exact")
    for t in res.times:
        rho = res.snapshots[t].values
        exact = barenblatt(x[:, None], t + t0)
        support = np.abs(x[rho > 1e-6]).max()
        print(f"  {t:4.2f}   {support:11.3f}  {barenblatt_radius(t + t0):14.3f}"
              f"   {rho.max():7.4f}   {exact.max():9.4f}")


if __name__ == "__main__":
    main()
