"""Regenerate the shipped filter tables under src/wdncnn/filters/.

Needs PyWavelets (dev only). The published 62-tap dmey table is not
orthonormal (sum of squares ~1.0022), so it is projected onto the nearest
filter satisfying the double-shift orthonormality and DC constraints.
The raw published table is also written to tests/data for comparison.
"""

from pathlib import Path

import numpy as np
import pywt
from scipy.optimize import minimize

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "src" / "wdncnn" / "filters"


def _write(path, name, coeffs):
    lines = [f"{name} {len(coeffs)}"] + [repr(float(c)) for c in coeffs]
    path.write_text("\n".join(lines) + "\n")


def _orthonormal_constraints(h):
    n_taps = len(h)
    res = [np.dot(h[2 * n:], h[: n_taps - 2 * n]) - (1.0 if n == 0 else 0.0) for n in range(n_taps // 2)]
    res.append(h.sum() - np.sqrt(2.0))
    return np.array(res)


def refine_orthonormal(h0):
    result = minimize(
        lambda h: np.sum((h - h0) ** 2),
        h0,
        jac=lambda h: 2.0 * (h - h0),
        constraints=[{"type": "eq", "fun": _orthonormal_constraints}],
        method="SLSQP",
        options={"ftol": 1e-20, "maxiter": 1000},
    )
    return result.x


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    _write(OUT / "haar.txt", "haar", [1 / np.sqrt(2.0), 1 / np.sqrt(2.0)])
    _write(OUT / "sym8.txt", "sym8", pywt.Wavelet("sym8").dec_lo)
    published = np.array(pywt.Wavelet("dmey").dec_lo)
    _write(ROOT / "tests" / "data" / "dmey_published.txt", "dmey", published)
    refined = refine_orthonormal(published)
    print("dmey max coefficient change:", np.abs(refined - published).max())
    print("dmey constraint residual:", np.abs(_orthonormal_constraints(refined)).max())
    _write(OUT / "dmey.txt", "dmey", refined)


if __name__ == "__main__":
    main()
