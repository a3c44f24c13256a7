"""Limit cycle, phase response and measurement backaction of the quantum van der Pol oscillator.

Run:  python3 demos/cycle_and_prc.py [N]
Writes cycle_prc.csv next to the working directory.
"""

import sys

import numpy as np

from qphase import fp_analysis as fp
from qphase.hilbert import adjoint, make_annihilation, make_qvdp
from qphase.limit_cycle import find_limit_cycle, harmonicity
from qphase.phase_response import backaction_coeffs, harmonic_fit, homodyne_difference_prcs, prc_along


def main(N=10):
    model = make_qvdp(N, delta=1.0, gamma_g=0.2, gamma_d=1.0)
    lc = find_limit_cycle(model)
    h = harmonicity(lc)
    print(f"period {lc.period:.6f}  mean |<a>| {h['mean_abs_a']:.5f}  spread {h['relative_spread']:.1e}")

    # phase response to small unitary kicks exp(-i g S)
    a = make_annihilation(N)
    curves = {"theta": lc.thetas}
    for name, S, mode in (("i(a-adag)", 1j * (a - adjoint(a)), 1), ("i(a2-adag2)", 1j * (a @ a - adjoint(a @ a)), 2)):
        Z = prc_along(lc, S)
        fit = harmonic_fit(Z, mode)
        print(f"Z[{name}]: amplitude {fit['amplitude']:.5f}, mode {fp.dominant_mode(Z)}, residual {fit['residual']:.1e}")
        curves[f"Z[{name}]"] = Z

    # heterodyne backaction: two quadratures per jump, constant total power
    table = backaction_coeffs(lc)
    ba = table.backaction_strengths()
    print(f"v1 {ba['1']['v']:.5f}  v2 {ba['2']['v']:.5f}  v {ba['v']:.5f}")
    print(f"sum Y^2 relative spread {np.ptp(table.noise_variance()) / table.noise_variance().mean():.1e}")
    curves.update(table.backaction)

    # homodyne backaction relative to the noiseless cycle
    hd = homodyne_difference_prcs(lc, 0.0)
    for key in sorted(hd):
        print(f"homodyne {key}: dominant mode {fp.dominant_mode(hd[key])}, peak-to-peak {np.ptp(hd[key]):.4f}")
    curves.update(hd)

    with open("cycle_prc.csv", "w") as fh:
        fh.write(",".join(curves) + "\n")
        for row in zip(*curves.values()):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 10)
