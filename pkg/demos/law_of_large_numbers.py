"""The particle density approaching the PDE as N grows.

Starting from the shipped non-viscous plan (noise sigma_N = 0.5 N^(-1/4)
vanishes as N grows), we shrink the sweep so it runs in about a minute.
For each N we mollify the particles at the plan's checkpoints, take the
worst squared L2 distance to the finite-volume solution and average over
replicas.  The fitted log-log slope is then set against the exponents a
Gronwall-type bound predicts for each error source.

Run with ``python demos/law_of_large_numbers.py``.
"""

from dataclasses import replace
from pathlib import Path

from meanfield import lab
from meanfield.config import validate_config

PLAN = Path(__file__).resolve().parents[1] / "configs" / "plan_nonviscous.json"


def main():
    plan = validate_config(PLAN.read_text(), "plan")
    plan = replace(plan, N_list=(100, 400, 1600), replicas=6, checkpoints=5)
    m = plan.model
    print(f"d={m.d}, beta={m.beta}, T={m.T}, dt={m.dt}, replicas={plan.replicas}")

    out = lab.lln_l2_experiment(plan)
    print("\n     N   sigma_N   E sup_t ||h_N - rho||^2   std error")
    for row in out["table"]:
        print(f"  {row['N']:5d}   {m.sigma(row['N']):.4f}   {row['mean']:23.3e}   {row['se']:.1e}")
    print(f"strictly decreasing: {out['decreasing']}, fitted slope {out['slope']:.2f}")

    rep = lab.rate_report({"l2": out["table"]}, model=m)
    print("\npredicted exponent of N per error term:")
    for name, e in rep["predicted"].items():
        print(f"  {name:18s} {e:+.3f}")
    print(f"slowest term {rep['dominant_exponent']:+.3f}, observed {out['slope']:+.2f}")


if __name__ == "__main__":
    main()
