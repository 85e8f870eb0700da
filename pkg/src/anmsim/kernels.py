"""Hot inner loops of the simulator.

Everything here is written as plain scalar loops so the same source runs
two ways: compiled with numba's ``@njit`` (default), or interpreted as-is
when numba is unavailable or ``ANMSIM_DISABLE_NUMBA=1`` is set. Both paths
execute the identical sequence of float64 operations, so results are
bit-for-bit equal; ``benchmarks/bench_kernels.py`` compares their speed.

The coupled plant/controller loop advances one sample at a time because
acoustic paths may have zero delay: a unit's output can reach its error
microphone within the same tick, so no block-level shortcut exists.

Ring buffers are power-of-two sized and indexed with a bitmask against a
monotonically increasing global sample counter.
"""

import math
import os

import numpy as np

_env = os.environ.get("ANMSIM_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _env in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("numba disabled by ANMSIM_DISABLE_NUMBA")
    from numba import njit

    NUMBA_ENABLED = True
except ImportError:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap

    NUMBA_ENABLED = False

# unit run-state codes shared with runner.py
STATE_OFF = 0
STATE_CALIBRATING = 1
STATE_RUN_FF = 2
STATE_RUN_FB = 3

SAT_NONE = 0
SAT_HARD = 1
SAT_TANH = 2

ALG_FXLMS = 0
ALG_MOV = 1

NORM_EPS = 1e-6
GS_FLOOR = 1e-12


@njit(cache=True)
def penalty_alpha(sumsq, frame_len, gs, rho2):
    """Time-varying penalty from the windowed disturbance-estimate power.

    alpha = max(gs * (sqrt(sumsq / (frame_len * gs * rho2)) - 1), 0).
    rho2 may be +inf, which pins alpha to 0.
    """
    ratio = sumsq / (frame_len * gs * rho2)
    return max(gs * (math.sqrt(ratio) - 1.0), 0.0)


@njit(cache=True)
def saturate_sample(kind, limit, x):
    if kind == SAT_HARD:
        if x > limit:
            return limit
        if x < -limit:
            return -limit
        return x
    if kind == SAT_TANH:
        return limit * math.tanh(x / limit)
    return x


@njit(cache=True)
def _ctl_emit(n, u, x, W, L, XR, xr_mask, running):
    """Push the reference sample and produce the control signal y(n)."""
    XR[u, n & xr_mask] = x
    y = 0.0
    if running:
        for i in range(L):
            y += W[u, i] * XR[u, (n - i) & xr_mask]
    return y


@njit(cache=True)
def _ctl_absorb(
    n, u, e, y, W, L, XR, XF, xr_mask, YB, yb_mask, SH, K, DHW, Mwin,
    alpha, mu, normalize, adapt,
):
    """Post-mic half of the controller tick: filtered reference, disturbance
    estimate, and the weight update. Returns (dhat, finite_ok)."""
    xf = 0.0
    for k in range(K):
        xf += SH[u, k] * XR[u, (n - k) & xr_mask]
    XF[u, n & xr_mask] = xf
    yh = 0.0
    for k in range(K):
        yh += SH[u, k] * YB[u, (n - k) & yb_mask]
    dh = e + yh
    DHW[u, n % Mwin] = dh
    ok = True
    if adapt:
        mu_eff = mu
        if normalize:
            nrm = 0.0
            for i in range(L):
                v = XF[u, (n - i) & xr_mask]
                nrm += v * v
            mu_eff = mu / (NORM_EPS + nrm)
        for i in range(L):
            W[u, i] += mu_eff * (
                e * XF[u, (n - i) & xr_mask] - alpha * y * XR[u, (n - i) & xr_mask]
            )
    if not (math.isfinite(e) and math.isfinite(y) and math.isfinite(dh)):
        ok = False
    return dh, ok


@njit(cache=True)
def _plant_tick(
    n, t, n_src, n_units, n_mics, src_col, emis,
    SRING, s_mask, ORING, o_mask,
    sat_kind, sat_limit,
    ms_delay, ms_gain, ms_fir, ms_flen,
    mu_delay, mu_gain, mu_fir, mu_flen,
    mic_out, true_out,
):
    """One acoustic tick: store source/unit samples, mix every microphone.

    true_out receives the source-only contribution (the plant-internal
    disturbance d), mic_out the full superposition.
    """
    for s in range(n_src):
        SRING[s, n & s_mask] = src_col[s]
    for u in range(n_units):
        ORING[u, n & o_mask] = saturate_sample(sat_kind[u], sat_limit[u], emis[u])
    for m in range(n_mics):
        d = 0.0
        for s in range(n_src):
            acc = 0.0
            base = n - ms_delay[m, s]
            for k in range(ms_flen[m, s]):
                acc += ms_fir[m, s, k] * SRING[s, (base - k) & s_mask]
            d += ms_gain[m, s] * acc
        v = d
        for u in range(n_units):
            acc = 0.0
            base = n - mu_delay[m, u]
            for k in range(mu_flen[m, u]):
                acc += mu_fir[m, u, k] * ORING[u, (base - k) & o_mask]
            v += mu_gain[m, u] * acc
        true_out[m, t] = d
        mic_out[m, t] = v


@njit(cache=True)
def plant_block(
    n0, nt, src_block, emis_block,
    SRING, s_mask, ORING, o_mask, sat_kind, sat_limit,
    ms_delay, ms_gain, ms_fir, ms_flen,
    mu_delay, mu_gain, mu_fir, mu_flen,
    mic_out, true_out,
):
    """Open-loop plant: mix caller-supplied unit emissions for nt ticks."""
    n_src = src_block.shape[0]
    n_units = emis_block.shape[0]
    n_mics = mic_out.shape[0]
    for t in range(nt):
        _plant_tick(
            n0 + t, t, n_src, n_units, n_mics,
            src_block[:, t], emis_block[:, t],
            SRING, s_mask, ORING, o_mask, sat_kind, sat_limit,
            ms_delay, ms_gain, ms_fir, ms_flen,
            mu_delay, mu_gain, mu_fir, mu_flen,
            mic_out, true_out,
        )


@njit(cache=True)
def ctl_block(
    n0, nt, mode_fb, x_block, e_block,
    W, L, XR, XF, xr_mask, YB, yb_mask, SH, K, DHW, Mwin,
    alg, gs, rho2, mu, normalize, adapt, alpha_in, dhat_prev,
    y_out, dhat_out, alpha_out,
):
    """Open-loop controller: consume aligned reference/error streams.

    In feedback mode (mode_fb) the reference is the previous tick's
    disturbance estimate and x_block is ignored. alpha is refreshed at
    every frame boundary (n % Mwin == 0). Returns (alpha, dhat_prev,
    finite_ok) so streaming callers can carry state across blocks.
    """
    alpha = alpha_in
    dh_prev = dhat_prev
    ok = True
    for t in range(nt):
        n = n0 + t
        if n % Mwin == 0:
            if alg == ALG_MOV:
                s2 = 0.0
                for i in range(Mwin):
                    s2 += DHW[0, i] * DHW[0, i]
                alpha = penalty_alpha(s2, Mwin, gs, rho2)
            else:
                alpha = 0.0
        x = dh_prev if mode_fb else x_block[t]
        y = _ctl_emit(n, 0, x, W, L, XR, xr_mask, True)
        YB[0, n & yb_mask] = y
        e = e_block[t]
        dh, fin = _ctl_absorb(
            n, 0, e, y, W, L, XR, XF, xr_mask, YB, yb_mask, SH, K, DHW, Mwin,
            alpha, mu, normalize, adapt,
        )
        if not fin:
            ok = False
        dh_prev = dh
        y_out[t] = y
        dhat_out[t] = dh
        alpha_out[t] = alpha
    return alpha, dh_prev, ok


@njit(cache=True)
def engine_frame(
    n0, nt, src_block, calib_block,
    ustate, refsrc, err_mic,
    W, L, XR, XF, xr_mask, YB, yb_mask, SH, K, DHW, Mwin,
    alg, gs, rho2, mu, normalize, adapt, alpha, dhat_prev,
    SRING, s_mask, ORING, o_mask, sat_kind, sat_limit,
    ms_delay, ms_gain, ms_fir, ms_flen,
    mu_delay, mu_gain, mu_fir, mu_flen,
    mic_out, true_out, y_out, e_out, dhat_out, finite_ok,
):
    """Closed-loop tick loop: all units and the plant advance in lockstep.

    alpha is refreshed in place at each unit's own frame boundary
    (n % Mwin[u] == 0) and held constant within the frame, so the caller
    may advance in blocks of any size; parameter/state changes applied
    between calls land on block boundaries.

    adapt[u] == 0 freezes a running unit's weight update while its
    reference and disturbance histories keep filling; the caller uses
    this to warm the normalization window up before adaptation starts.

    Running units drive the plant with the negated control signal: the
    output stage inverts phase so the emitted wave is the anti-noise.
    """
    n_src = src_block.shape[0]
    n_units = W.shape[0]
    n_mics = mic_out.shape[0]
    emis = np.empty(n_units)
    for t in range(nt):
        n = n0 + t
        for u in range(n_units):
            st = ustate[u]
            running = st == STATE_RUN_FF or st == STATE_RUN_FB
            if running and n % Mwin[u] == 0:
                if alg[u] == ALG_MOV:
                    s2 = 0.0
                    for i in range(Mwin[u]):
                        s2 += DHW[u, i] * DHW[u, i]
                    alpha[u] = penalty_alpha(s2, Mwin[u], gs[u], rho2[u])
                else:
                    alpha[u] = 0.0
            if st == STATE_RUN_FF:
                x = src_block[refsrc[u], t]
            elif st == STATE_RUN_FB:
                x = dhat_prev[u]
            else:
                x = 0.0
            y = _ctl_emit(n, u, x, W, L[u], XR, xr_mask, running)
            YB[u, n & yb_mask] = y
            y_out[u, t] = y
            if st == STATE_CALIBRATING:
                emis[u] = calib_block[u, t]
            elif running:
                emis[u] = -y
            else:
                emis[u] = 0.0
        _plant_tick(
            n, t, n_src, n_units, n_mics, src_block[:, t], emis,
            SRING, s_mask, ORING, o_mask, sat_kind, sat_limit,
            ms_delay, ms_gain, ms_fir, ms_flen,
            mu_delay, mu_gain, mu_fir, mu_flen,
            mic_out, true_out,
        )
        for u in range(n_units):
            st = ustate[u]
            e = mic_out[err_mic[u], t]
            e_out[u, t] = e
            if st == STATE_RUN_FF or st == STATE_RUN_FB:
                dh, fin = _ctl_absorb(
                    n, u, e, y_out[u, t], W, L[u], XR, XF, xr_mask,
                    YB, yb_mask, SH, K[u], DHW, Mwin[u],
                    alpha[u], mu[u], normalize[u] != 0, adapt[u] != 0,
                )
                dhat_prev[u] = dh
                dhat_out[u, t] = dh
                if not fin:
                    finite_ok[u] = 0
            else:
                dhat_out[u, t] = 0.0


@njit(cache=True)
def sysid_block(n0, nt, u_block, m_block, SH, K, UH, uh_mask, mu_id):
    """LMS secondary-path identification over one recorded block.

    Per sample: eps = measured - shat . u_history; shat += mu_id * eps * u_hist.
    Returns the sum of squared residuals for trend monitoring.
    """
    acc = 0.0
    for t in range(nt):
        n = n0 + t
        UH[0, n & uh_mask] = u_block[t]
        yh = 0.0
        for k in range(K):
            yh += SH[0, k] * UH[0, (n - k) & uh_mask]
        eps = m_block[t] - yh
        for k in range(K):
            SH[0, k] += mu_id * eps * UH[0, (n - k) & uh_mask]
        acc += eps * eps
    return acc


@njit(cache=True)
def window_sumsq(row, count):
    s = 0.0
    for i in range(count):
        s += row[i] * row[i]
    return s


def next_pow2(n):
    """Smallest power of two >= n (n >= 1)."""
    p = 1
    while p < n:
        p *= 2
    return p
