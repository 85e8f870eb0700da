"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written the slow, obvious way (pure
Python loops, quadrature, textbook formulas) and nothing imports from
the package's hot paths.
"""

import math

MASK64 = (1 << 64) - 1


def splitmix64_ref(idx, seed):
    """Scalar splitmix64 with explicit int masking: uniform in [0, 1)."""
    z = (seed + (idx + 1) * 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    z = z ^ (z >> 31)
    return (z >> 11) * 2.0 ** -53


def penalty_ref(window, gs, rho):
    """Hand evaluation of the penalty expression, Python floats only."""
    m = len(window)
    acc = 0.0
    for v in window:
        acc += float(v) * float(v)
    val = gs * (math.sqrt(acc / (m * gs * rho * rho)) - 1.0)
    return val if val > 0.0 else 0.0


def mov_update_ref(w, e, x_filt, y, x, mu, alpha):
    """Element-by-element weight update."""
    return [
        float(w[i]) + mu * (e * float(x_filt[i]) - alpha * y * float(x[i]))
        for i in range(len(w))
    ]


def fir_ref(taps, signal):
    """Direct-form convolution, one output per input sample."""
    out = []
    for n in range(len(signal)):
        acc = 0.0
        for k, t in enumerate(taps):
            if n - k >= 0:
                acc += t * signal[n - k]
        out.append(acc)
    return out


def surrogate_cost(w, d, x_filt, x, alpha):
    """Instantaneous cost whose negative half-gradient is the update."""
    err = d - sum(wi * xi for wi, xi in zip(w, x_filt))
    out = sum(wi * xi for wi, xi in zip(w, x))
    return err * err + alpha * out * out


def numeric_gradient(f, w, h=1e-6):
    """Central-difference gradient of a scalar function of a vector."""
    g = []
    for i in range(len(w)):
        wp = list(w)
        wm = list(w)
        wp[i] += h
        wm[i] -= h
        g.append((f(wp) - f(wm)) / (2.0 * h))
    return g


def clipped_sine_harmonic_db(amp, limit, k):
    """Level of the k-th harmonic of a hard-clipped sine, re fundamental.

    Fourier coefficients of f(t) = clip(amp*sin(t), +/-limit) by
    numerical quadrature (odd function: sine series only).
    """
    from scipy.integrate import quad

    def f(t):
        v = amp * math.sin(t)
        return max(-limit, min(limit, v))

    def bk(kk):
        val, _err = quad(lambda t: f(t) * math.sin(kk * t), 0.0, math.pi,
                         limit=200)
        return 2.0 * val / math.pi

    b1 = bk(1)
    bkk = bk(k)
    return 20.0 * math.log10(max(abs(bkk), 1e-30) / abs(b1))


def two_monopole_reduction_db(d_over_lambda):
    """Closed-form optimal two-monopole power ratio, evaluated directly."""
    kd = 2.0 * math.pi * d_over_lambda
    s = math.sin(kd) / kd
    return 10.0 * math.log10(1.0 - s * s)


def spl_from_amplitude(amp):
    """Calibrated SPL of a pure sine of given amplitude (no weighting)."""
    return 20.0 * math.log10(amp / math.sqrt(2.0)) + 94.0
