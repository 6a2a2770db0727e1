"""Compiled closed-loop engine for full-length runs.

A numba twin of the reference loop in :mod:`cnnadapt.sim`: same step
semantics (observe, stack history, forward, Jacobian, control with
zero-order hold, coupled RK4, ball clip), restricted to the built-in
two-state plant and trajectory.  The equivalence tests in the suite
hold the two engines together; any change here must keep them matching.

Everything is laid out flat: weights stay in their layout vector and
layer matrices are indexed through offset tables, so the hot loop does
no allocation.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .controller import PROJECTION_MARGIN, gamma_vector
from .network import init_weights
from .sim import Scenario


@njit(cache=True)
def _sech(z):
    if z > 700.0:
        z = 700.0
    elif z < -700.0:
        z = -700.0
    return 1.0 / math.cosh(z)


@njit(cache=True)
def _plant_rate(x0, x1, t, u0, u1, t_g):
    f0 = x0 * x1 * math.tanh(x1) + _sech(x0)
    s12 = _sech(x0 + x1)
    s2 = _sech(x1)
    f1 = s12 * s12 - s2 * s2
    if t >= t_g - 1e-9:
        f0 += 2.0 * x0 * x0 * x1 + 2.0 * math.sin(t) + 20.0
        f1 += 2.0 * x1 * x1 * math.tanh(x0) + 2.0 * math.cos(0.5 * t) + 20.0
    return f0 + u0, f1 + u1


@njit(cache=True)
def _forward(
    theta, X, dense_only, alpha1, alpha2,
    conv_p, conv_q, act_r, act_c, w_off, b_off,
    fc_dims, v_off, act, pre, C, fc_in, fc_pre,
):
    kc = conv_p.size
    n0, m0 = X.shape
    if dense_only:
        idx = 0
        for c in range(m0):
            for r in range(n0):
                C[idx] = alpha1 * math.tanh(X[r, c] / alpha2)
                idx += 1
        C[idx] = 1.0
    else:
        for r in range(n0):
            for c in range(m0):
                act[0, r, c] = alpha1 * math.tanh(X[r, c])
        for j in range(kc):
            p = conv_p[j]
            q = conv_q[j]
            ic = act_c[j]
            orows = act_r[j] - p + 1
            for oi in range(orows):
                for k in range(q):
                    s = 0.0
                    base = w_off[j] + k * p * ic
                    for rr in range(p):
                        for cc in range(ic):
                            s += theta[base + rr * ic + cc] * act[j, oi + rr, cc]
                    pre[j, oi, k] = s + theta[b_off[j] + k]
            if j + 1 < kc:
                for r in range(orows):
                    for c in range(q):
                        act[j + 1, r, c] = math.tanh(pre[j, r, c])
        fr = act_r[kc - 1] - conv_p[kc - 1] + 1
        fq = conv_q[kc - 1]
        idx = 0
        for c in range(fq):
            for r in range(fr):
                C[idx] = pre[kc - 1, r, c]
                idx += 1
        C[idx] = 1.0
    n_fc = v_off.size
    for j in range(n_fc):
        lin = fc_dims[j] + 1
        lout = fc_dims[j + 1]
        if j == 0:
            for i in range(lin):
                fc_in[0, i] = C[i]
        else:
            for i in range(fc_dims[j]):
                fc_in[j, i] = math.tanh(fc_pre[j - 1, i])
            fc_in[j, fc_dims[j]] = 1.0
        base = v_off[j]
        for o in range(lout):
            s = 0.0
            for i in range(lin):
                s += theta[base + i * lout + o] * fc_in[j, i]
            fc_pre[j, o] = s


@njit(cache=True)
def _jacobian(
    theta, dense_only,
    conv_p, conv_q, act_r, act_c, w_off, b_off,
    fc_dims, v_off, act, pre, fc_in,
    D, U, Gcur, Gnext, dact, jac,
):
    kc = conv_p.size
    n_fc = v_off.size
    n_out = fc_dims[n_fc]
    # chain factors D_l = V_l[:-1].T * (1 - tanh^2), l = 1..n_fc-1
    for l in range(1, n_fc):
        lin = fc_dims[l]
        lout = fc_dims[l + 1]
        base = v_off[l]
        for i in range(lin):
            a = fc_in[l, i]
            s = 1.0 - a * a
            for o in range(lout):
                D[l - 1, o, i] = theta[base + i * lout + o] * s
    # upstream products U[j] = D_{n_fc-1} ... D_j, U[n_fc] = identity
    for o in range(n_out):
        for i in range(n_out):
            U[n_fc, o, i] = 1.0 if o == i else 0.0
    for j in range(n_fc - 1, 0, -1):
        for o in range(n_out):
            for i in range(fc_dims[j]):
                s = 0.0
                for m in range(fc_dims[j + 1]):
                    s += U[j + 1, o, m] * D[j - 1, m, i]
                U[j, o, i] = s
    # FC blocks: kron(fc_in_j^T, U[j+1])
    for j in range(n_fc):
        lin = fc_dims[j] + 1
        lout = fc_dims[j + 1]
        base = v_off[j]
        for io in range(n_out):
            for i in range(lin):
                v = fc_in[j, i]
                for o in range(lout):
                    jac[io, base + i * lout + o] = v * U[j + 1, io, o]
    if dense_only:
        return
    # conv blocks, one network output at a time
    fr = act_r[kc - 1] - conv_p[kc - 1] + 1
    fq = conv_q[kc - 1]
    l1 = fc_dims[1]
    v0 = v_off[0]
    for io in range(n_out):
        # seed: (U[1] @ V0^T) folded back column-major, bias slot dropped
        for c in range(fq):
            for r in range(fr):
                idx = c * fr + r
                s = 0.0
                for m in range(l1):
                    s += U[1, io, m] * theta[v0 + idx * l1 + m]
                Gcur[r, c] = s
        for j in range(kc - 1, -1, -1):
            p = conv_p[j]
            q = conv_q[j]
            ic = act_c[j]
            orows = act_r[j] - p + 1
            for k in range(q):
                base = w_off[j] + k * p * ic
                for rr in range(p):
                    for cc in range(ic):
                        s = 0.0
                        for oi in range(orows):
                            s += Gcur[oi, k] * act[j, oi + rr, cc]
                        jac[io, base + rr * ic + cc] = s
                s = 0.0
                for oi in range(orows):
                    s += Gcur[oi, k]
                jac[io, b_off[j] + k] = s
            if j > 0:
                for r in range(act_r[j]):
                    for c in range(ic):
                        dact[r, c] = 0.0
                for oi in range(orows):
                    for k in range(q):
                        g = Gcur[oi, k]
                        base = w_off[j] + k * p * ic
                        for rr in range(p):
                            for cc in range(ic):
                                dact[oi + rr, cc] += g * theta[base + rr * ic + cc]
                for r in range(act_r[j]):
                    for c in range(ic):
                        a = act[j, r, c]
                        Gnext[r, c] = dact[r, c] * (1.0 - a * a)
                tmp = Gcur
                Gcur = Gnext
                Gnext = tmp


@njit(cache=True)
def _theta_rate(theta, jac, e0, e1, ainv_t, gamma_vec, rho, theta_bar, margin, out):
    w0 = ainv_t[0, 0] * e0 + ainv_t[0, 1] * e1
    w1 = ainv_t[1, 0] * e0 + ainv_t[1, 1] * e1
    enorm = math.sqrt(e0 * e0 + e1 * e1)
    count = theta.size
    for k in range(count):
        grad = jac[0, k] * w0 + jac[1, k] * w1
        out[k] = -gamma_vec[k] * grad - rho * enorm * theta[k]
    radial = 0.0
    nsq = 0.0
    for k in range(count):
        radial += theta[k] * out[k]
        nsq += theta[k] * theta[k]
    if radial > 0.0:
        blend = (nsq - theta_bar * theta_bar) / (margin * theta_bar * theta_bar) + 1.0
        if blend > 1.0:
            blend = 1.0
        if blend > 0.0:
            coef = blend * radial / nsq
            for k in range(count):
                out[k] -= coef * theta[k]


@njit(cache=True)
def _run_kernel(
    theta, n0, m0, dense_only, alpha1, alpha2,
    conv_p, conv_q, act_r, act_c, w_off, b_off, fc_dims, v_off,
    a_c, ainv_t, k_s, rho, theta_bar, margin, gamma_vec,
    sgn_exact, sgn_eps, oracle_mode,
    t_g, dt, n_steps, stack_steps, stride, x_init, div_limit,
    rec_t, rec_x, rec_xd, rec_e, rec_u, rec_thn, rec_phi, rec_jn,
    status,
):
    count = theta.size
    kc = conv_p.size
    n_fc = v_off.size
    # scratch must fit every activation AND every raw conv output,
    # whose column count is the filter count
    max_r = 1
    max_c = 1
    for j in range(kc):
        if act_r[j] > max_r:
            max_r = act_r[j]
        if act_c[j] > max_c:
            max_c = act_c[j]
        if conv_q[j] > max_c:
            max_c = conv_q[j]
    max_in = 0
    max_w = 0
    for j in range(n_fc):
        if fc_dims[j] + 1 > max_in:
            max_in = fc_dims[j] + 1
        if fc_dims[j + 1] > max_w:
            max_w = fc_dims[j + 1]
    l0 = fc_dims[0]

    X = np.zeros((n0, m0))
    act = np.zeros((max(kc, 1), max_r, max_c))
    pre = np.zeros((max(kc, 1), max_r, max_c))
    C = np.zeros(l0 + 1)
    fc_in = np.zeros((n_fc, max_in))
    fc_pre = np.zeros((n_fc, max_w))
    D = np.zeros((max(n_fc - 1, 1), max_w, max_w))
    U = np.zeros((n_fc + 1, 2, max_w))
    Gcur = np.zeros((max_r, max_c))
    Gnext = np.zeros((max_r, max_c))
    dact = np.zeros((max_r, max_c))
    jac = np.zeros((2, count))
    rate = np.zeros(count)
    th_stage = np.zeros(count)
    k1t = np.zeros(count)
    k2t = np.zeros(count)
    k3t = np.zeros(count)
    k4t = np.zeros(count)

    depth = (n0 - 1) * stack_steps + 1
    ring = np.zeros((depth, m0))

    x0 = x_init[0]
    x1 = x_init[1]
    u_prev0 = 0.0
    u_prev1 = 0.0
    theta_norm_max = 0.0
    s = 0.0
    for k in range(count):
        s += theta[k] * theta[k]
    theta_norm_max = math.sqrt(s)
    phi_prime_max = 0.0
    diverged = 0.0
    diverged_at = 0.0
    rows = 0

    for step in range(n_steps + 1):
        t = step * dt
        xd0 = math.sin(2.0 * t)
        xd1 = -math.cos(t)
        e0 = x0 - xd0
        e1 = x1 - xd1

        pos = step % depth
        ring[pos, 0] = alpha2 * e0
        ring[pos, 1] = alpha2 * e1
        ring[pos, 2] = alpha2 * x0
        ring[pos, 3] = alpha2 * x1
        ring[pos, 4] = alpha2 * u_prev0
        ring[pos, 5] = alpha2 * u_prev1
        for k in range(n0):
            back = k * stack_steps
            if back > step:
                for c in range(m0):
                    X[k, c] = 0.0
            else:
                src = (pos - back) % depth
                for c in range(m0):
                    X[k, c] = ring[src, c]

        if oracle_mode:
            f0, f1 = _plant_rate(x0, x1, t, 0.0, 0.0, t_g)
            xdd0 = 2.0 * math.cos(2.0 * t)
            xdd1 = math.sin(t)
            phi0 = f0 - xdd0 - (a_c[0, 0] * e0 + a_c[0, 1] * e1)
            phi1 = f1 - xdd1 - (a_c[1, 0] * e0 + a_c[1, 1] * e1)
            jn = 0.0
        else:
            _forward(theta, X, dense_only, alpha1, alpha2,
                     conv_p, conv_q, act_r, act_c, w_off, b_off,
                     fc_dims, v_off, act, pre, C, fc_in, fc_pre)
            phi0 = fc_pre[n_fc - 1, 0]
            phi1 = fc_pre[n_fc - 1, 1]
            _jacobian(theta, dense_only,
                      conv_p, conv_q, act_r, act_c, w_off, b_off,
                      fc_dims, v_off, act, pre, fc_in,
                      D, U, Gcur, Gnext, dact, jac)
            aa = 0.0
            bb = 0.0
            cc_ = 0.0
            for k in range(count):
                aa += jac[0, k] * jac[0, k]
                bb += jac[0, k] * jac[1, k]
                cc_ += jac[1, k] * jac[1, k]
            disc = math.sqrt((aa - cc_) * (aa - cc_) + 4.0 * bb * bb)
            lam = 0.5 * ((aa + cc_) + disc)
            jn = math.sqrt(lam) if lam > 0.0 else 0.0

        if sgn_exact:
            s0 = 1.0 if e0 > 0.0 else (-1.0 if e0 < 0.0 else 0.0)
            s1 = 1.0 if e1 > 0.0 else (-1.0 if e1 < 0.0 else 0.0)
        else:
            s0 = math.tanh(e0 / sgn_eps)
            s1 = math.tanh(e1 / sgn_eps)
        u0 = -phi0 - k_s * s0
        u1 = -phi1 - k_s * s1

        s = 0.0
        for k in range(count):
            s += theta[k] * theta[k]
        theta_norm = math.sqrt(s)
        if theta_norm > theta_norm_max:
            theta_norm_max = theta_norm
        if jn > phi_prime_max:
            phi_prime_max = jn

        if step % stride == 0:
            r = step // stride
            rec_t[r] = t
            rec_x[r, 0] = x0
            rec_x[r, 1] = x1
            rec_xd[r, 0] = xd0
            rec_xd[r, 1] = xd1
            rec_e[r, 0] = e0
            rec_e[r, 1] = e1
            rec_u[r, 0] = u0
            rec_u[r, 1] = u1
            rec_thn[r] = theta_norm
            rec_phi[r, 0] = phi0
            rec_phi[r, 1] = phi1
            rec_jn[r] = jn
            rows = r + 1

        if step == n_steps:
            break

        # coupled RK4, u and jac held constant
        k1x0, k1x1 = _plant_rate(x0, x1, t, u0, u1, t_g)
        if not oracle_mode:
            _theta_rate(theta, jac, e0, e1, ainv_t, gamma_vec, rho,
                        theta_bar, margin, k1t)

        th = t + 0.5 * dt
        xs0 = x0 + 0.5 * dt * k1x0
        xs1 = x1 + 0.5 * dt * k1x1
        k2x0, k2x1 = _plant_rate(xs0, xs1, th, u0, u1, t_g)
        if not oracle_mode:
            es0 = xs0 - math.sin(2.0 * th)
            es1 = xs1 + math.cos(th)
            for k in range(count):
                th_stage[k] = theta[k] + 0.5 * dt * k1t[k]
            _theta_rate(th_stage, jac, es0, es1, ainv_t, gamma_vec, rho,
                        theta_bar, margin, k2t)

        xs0 = x0 + 0.5 * dt * k2x0
        xs1 = x1 + 0.5 * dt * k2x1
        k3x0, k3x1 = _plant_rate(xs0, xs1, th, u0, u1, t_g)
        if not oracle_mode:
            es0 = xs0 - math.sin(2.0 * th)
            es1 = xs1 + math.cos(th)
            for k in range(count):
                th_stage[k] = theta[k] + 0.5 * dt * k2t[k]
            _theta_rate(th_stage, jac, es0, es1, ainv_t, gamma_vec, rho,
                        theta_bar, margin, k3t)

        tf = t + dt
        xs0 = x0 + dt * k3x0
        xs1 = x1 + dt * k3x1
        k4x0, k4x1 = _plant_rate(xs0, xs1, tf, u0, u1, t_g)
        if not oracle_mode:
            es0 = xs0 - math.sin(2.0 * tf)
            es1 = xs1 + math.cos(tf)
            for k in range(count):
                th_stage[k] = theta[k] + dt * k3t[k]
            _theta_rate(th_stage, jac, es0, es1, ainv_t, gamma_vec, rho,
                        theta_bar, margin, k4t)

        x0 = x0 + (dt / 6.0) * (k1x0 + 2.0 * k2x0 + 2.0 * k3x0 + k4x0)
        x1 = x1 + (dt / 6.0) * (k1x1 + 2.0 * k2x1 + 2.0 * k3x1 + k4x1)
        if not oracle_mode:
            s = 0.0
            for k in range(count):
                theta[k] = theta[k] + (dt / 6.0) * (
                    k1t[k] + 2.0 * k2t[k] + 2.0 * k3t[k] + k4t[k]
                )
                s += theta[k] * theta[k]
            norm = math.sqrt(s)
            if norm > theta_bar:
                scale = theta_bar / norm
                for k in range(count):
                    theta[k] *= scale

        if (not math.isfinite(x0)) or (not math.isfinite(x1)) or (
            math.sqrt(x0 * x0 + x1 * x1) > div_limit
        ):
            diverged = 1.0
            diverged_at = tf
            break
        u_prev0 = u0
        u_prev1 = u1

    status[0] = diverged
    status[1] = diverged_at
    status[2] = theta_norm_max
    status[3] = phi_prime_max
    status[4] = rows


def _layout_tables(spec):
    kc = len(spec.conv_layers)
    conv_p = np.zeros(kc, dtype=np.int64)
    conv_q = np.zeros(kc, dtype=np.int64)
    act_r = np.zeros(max(kc, 1), dtype=np.int64)
    act_c = np.zeros(max(kc, 1), dtype=np.int64)
    rows, cols = spec.input_rows, spec.input_cols
    for j, layer in enumerate(spec.conv_layers):
        conv_p[j] = layer.rows
        conv_q[j] = layer.count
        act_r[j] = rows
        act_c[j] = cols
        rows, cols = rows - layer.rows + 1, layer.count
    w_off = np.zeros(max(kc, 1), dtype=np.int64)
    b_off = np.zeros(max(kc, 1), dtype=np.int64)
    for j, slices in enumerate(spec.filter_slices()):
        w_off[j] = slices[0].start
    for j, s in enumerate(spec.bias_slices()):
        b_off[j] = s.start
    fc_dims = np.array(spec.fc_dims(), dtype=np.int64)
    v_off = np.array([s.start for s in spec.fc_slices()], dtype=np.int64)
    return conv_p, conv_q, act_r, act_c, w_off, b_off, fc_dims, v_off


def run_fast(sc: Scenario, seed: int) -> dict:
    """Run the compiled loop; returns the same raw dict as the reference."""
    spec, params, cfg = sc.network, sc.controller, sc.sim
    n_steps = int(round(cfg.t_end / cfg.dt))
    stride = int(round(cfg.record_dt / cfg.dt))
    stack_steps = int(round(sc.stack_dt / cfg.dt))

    rng = np.random.default_rng(seed)
    theta = init_weights(spec, rng, cfg.init_weight_low, cfg.init_weight_high)
    gamma_vec = gamma_vector(params, spec)
    tables = _layout_tables(spec)

    n_rec = n_steps // stride + 1
    rec_t = np.zeros(n_rec)
    rec_x = np.zeros((n_rec, 2))
    rec_xd = np.zeros((n_rec, 2))
    rec_e = np.zeros((n_rec, 2))
    rec_u = np.zeros((n_rec, 2))
    rec_thn = np.zeros(n_rec)
    rec_phi = np.zeros((n_rec, 2))
    rec_jn = np.zeros(n_rec)
    status = np.zeros(5)

    _run_kernel(
        theta, spec.input_rows, spec.input_cols,
        spec.dense_only, spec.alpha1, spec.alpha2,
        *tables,
        params.A_c, np.ascontiguousarray(params.A_c_inv.T),
        params.k_s, params.rho, params.theta_bar, PROJECTION_MARGIN, gamma_vec,
        params.sgn_mode == "exact", params.sgn_eps, sc.oracle_mode,
        sc.plant.t_g, cfg.dt, n_steps, stack_steps, stride,
        cfg.x0, cfg.divergence_limit,
        rec_t, rec_x, rec_xd, rec_e, rec_u, rec_thn, rec_phi, rec_jn,
        status,
    )

    rows = int(status[4])
    rec = {
        "t": rec_t[:rows],
        "x": rec_x[:rows],
        "x_d": rec_xd[:rows],
        "e": rec_e[:rows],
        "u": rec_u[:rows],
        "theta_norm": rec_thn[:rows],
        "phi_hat": rec_phi[:rows],
        "phi_prime_norm": rec_jn[:rows],
    }
    return {
        "rec": rec,
        "final_theta": theta,
        "theta_norm_max": float(status[2]),
        "phi_prime_max": float(status[3]),
        "diverged": bool(status[0]),
        "diverged_at": float(status[1]) if status[0] else None,
    }
