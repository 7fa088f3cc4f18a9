"""Smoke test for the selref Python extension.

Build and install first, e.g. `maturin build --release` in crates/python
and `pip install` the wheel, then run `python3 python/smoke_test.py`.
"""

import math
import random

import selref


def main():
    freqs = [-15.0 + 0.05 * i for i in range(601)]
    model = selref.Model(1.3e17)

    eps = model.dielectric(freqs, 13.0)
    assert all(e.imag > 0 for e in eps)
    r = model.reflectivity(freqs, 13.0)
    assert all(0.0 <= x < 1.0 for x in r)

    # Noise-free round trip.
    clean = model.signal(freqs, 4.98, excitation=0.36, shift=-0.3)
    fit = model.fit(freqs, clean)
    assert fit.converged, fit
    assert abs(fit.width - 4.98) / 4.98 < 5e-3, fit
    assert abs(fit.excitation - 0.36) / 0.36 < 5e-3, fit

    # 1% noise: the width lands near the truth with a finite uncertainty.
    rng = random.Random(3)
    truth = model.signal(freqs, 13.0)
    p2p = max(truth) - min(truth)
    noisy = [v + rng.gauss(0.0, 0.01 * p2p) for v in truth]
    fit = model.fit(freqs, noisy, fixed=[("excitation", 1.0)])
    sigma = fit.uncertainties()["width"]
    assert abs(fit.width - 13.0) / 13.0 < 0.02 and 0 < sigma < 1, (fit, sigma)

    line = selref.linear_fit([0.0, 1.0, 2.0], [1.0, 3.0, 5.0])
    assert math.isclose(line["slope"], 2.0) and math.isclose(line["intercept"], 1.0)

    series = []
    for n in (2.2e16, 7.6e16, 1.3e17):
        g1 = 13.0 * n / 1.3e17
        pts = [(e, g1 * (0.1 + 0.9 * e), 0.01) for e in (0.36, 0.5, 0.65, 0.8, 1.0)]
        series.append((n, pts))
    result = selref.analyze(series)
    assert abs(result["normalized_slope"] - 0.9) < 1e-9
    assert result["verdict"] == "consistent with zero slope"

    lockin = selref.Model(1.3e17, mode="lockin-first-harmonic", depth_ghz=0.001)
    d = model.signal(freqs, 13.0)
    s = lockin.signal(freqs, 13.0)
    peak = max(abs(x) for x in d)
    worst = max(abs(a - 0.0005 * b) / abs(0.0005 * b) for a, b in zip(s, d) if abs(b) > 0.01 * peak)
    assert worst < 1e-3, worst

    try:
        selref.Model(1e17, window_index=0.5)
    except ValueError:
        pass
    else:
        raise AssertionError("window index below 1 accepted")

    print(f"selref smoke test ok: {model!r}, A(1.3e17) = {selref.amplitude_ghz(1.3e17):.4f} GHz")


if __name__ == "__main__":
    main()
