"""Compiled inner loop of the time-domain integrator.

One step solves the implicit-trapezoidal update of the differential
states together with the network algebraic constraints by damped Newton
on the combined residual.  Everything here operates on flat float64
arrays; the Engine in engine.py owns the mapping to model objects.

State layout
    z = [delta(nm) | omega(nm) | servo(ngov) | p_agc? | p_wind? | f_meas? |
         theta(nb) | vmag(nb)]

(f_meas is the wind plant's filtered frequency measurement; its droop
acts on that signal, while machine governors act on the instantaneous
COI frequency they sense at the shaft.)

Limiter flag bits (stable across eval/jacobian):
    bit m        machine m mechanical power clamped
    bit 8 + gi   governor gi command at an output limit
    bit 16       AGC state pinned at a headroom bound
    bit 17 / 18  wind order clamped at available / at zero
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

STATUS_OK = 0
STATUS_DIVERGED = 1
STATUS_NAN = 2

FLAG_AGC = 16
FLAG_WIND_HI = 17
FLAG_WIND_LO = 18

# held-input slots (u array)
U_F_HELD = 0
U_AGC_AT_HI = 1
U_AGC_AT_LO = 2
N_U = 3

# scalar parameter slots (sc array)
SC_F_N = 0
SC_OMEGA_N = 1
SC_HSUM = 2
SC_AGC_KI = 3
SC_AGC_BETA = 4
SC_AGC_LO = 5
SC_AGC_HI = 6
SC_W_RATED = 7
SC_W_CI = 8
SC_W_VR = 9
SC_W_CO = 10
SC_W_CURT = 11
SC_W_DB = 12
SC_W_DROOP = 13
SC_W_TC = 14
SC_W_Q0 = 15
SC_W_PART = 16
SC_W_TM = 17
N_SC = 18

# integer parameter slots (iv array)
IV_NM = 0
IV_NB = 1
IV_NGOV = 2
IV_HAS_AGC = 3
IV_HAS_WIND = 4
IV_W_BUS = 5
IV_I_AGC = 6
IV_I_PW = 7
IV_NX = 8
IV_W_CH = 9
IV_I_FM = 10
N_IV = 11


@njit(cache=True)
def _wind_avail(vw, sc):
    if vw < sc[SC_W_CI] or vw > sc[SC_W_CO]:
        return 0.0
    if vw >= sc[SC_W_VR]:
        return sc[SC_W_RATED]
    num = vw**3 - sc[SC_W_CI] ** 3
    den = sc[SC_W_VR] ** 3 - sc[SC_W_CI] ** 3
    return sc[SC_W_RATED] * num / den


@njit(cache=True)
def eval_rhs(z, kappa, u, G, B, mach_bus, H, D, XDT, EMF, PDISP, PMAX, PMIN,
             mach_gov, gov_mach, gov_R, gov_DB, gov_T, gov_LO, gov_HI,
             agc_part, load_bus, load_p, load_q, load_ch, sc, iv):
    """Right-hand sides at state z: returns (f, g, f_coi_hz, p_loss, q_loss, flags).

    u holds per-step inputs that stay constant during the Newton solve:
    u[0] the wind plant's held frequency measurement, u[1]/u[2] flags
    marking the AGC state pinned at its upper/lower bound at step start
    (pinning on the start-of-step state keeps the active set stable
    inside the solve).
    """
    nm = iv[IV_NM]
    nb = iv[IV_NB]
    ngov = iv[IV_NGOV]
    nx = iv[IV_NX]
    f_n = sc[SC_F_N]

    f = np.zeros(nx)
    g = np.zeros(2 * nb)
    flags = np.int64(0)

    hw = 0.0
    for m in range(nm):
        hw += H[m] * z[nm + m]
    fcoi_hz = f_n * hw / sc[SC_HSUM]
    dfreq = fcoi_hz - f_n

    p_agc = z[iv[IV_I_AGC]] if iv[IV_HAS_AGC] == 1 else 0.0

    # network power drawn from each bus
    p_loss = 0.0
    q_loss = 0.0
    for k in range(nb):
        tk = z[nx + k]
        vk = z[nx + nb + k]
        pk = 0.0
        qk = 0.0
        for j in range(nb):
            gkj = G[k, j]
            bkj = B[k, j]
            if gkj != 0.0 or bkj != 0.0:
                dth = tk - z[nx + j]
                cs = math.cos(dth)
                sn = math.sin(dth)
                vj = z[nx + nb + j]
                pk += vk * vj * (gkj * cs + bkj * sn)
                qk += vk * vj * (gkj * sn - bkj * cs)
        g[k] = -pk
        g[nb + k] = -qk
        p_loss += pk
        q_loss += qk

    for l in range(load_bus.shape[0]):
        fac = 1.0
        if load_ch[l] >= 0:
            fac += kappa[load_ch[l]]
        g[load_bus[l]] -= load_p[l] * fac
        g[nb + load_bus[l]] -= load_q[l] * fac

    for m in range(nm):
        b = mach_bus[m]
        vk = z[nx + nb + b]
        d = z[m] - z[nx + b]
        pe = EMF[m] * vk * math.sin(d) / XDT[m]
        qe = (EMF[m] * vk * math.cos(d) - vk * vk) / XDT[m]
        g[b] += pe
        g[nb + b] += qe
        gi = mach_gov[m]
        pg = z[2 * nm + gi] if gi >= 0 else 0.0
        pm = PDISP[m] + pg + agc_part[m] * p_agc
        if pm > PMAX[m]:
            pm = PMAX[m]
            flags |= np.int64(1) << m
        elif pm < PMIN[m]:
            pm = PMIN[m]
            flags |= np.int64(1) << m
        f[m] = sc[SC_OMEGA_N] * (z[nm + m] - 1.0)
        f[nm + m] = (pm - pe - D[m] * (z[nm + m] - 1.0)) / (2.0 * H[m])

    for gi in range(ngov):
        db = gov_DB[gi]
        if dfreq > db:
            e = dfreq - db
        elif dfreq < -db:
            e = dfreq + db
        else:
            e = 0.0
        cmd = -e / (gov_R[gi] * f_n)
        if cmd > gov_HI[gi]:
            cmd = gov_HI[gi]
            flags |= np.int64(1) << (8 + gi)
        elif cmd < gov_LO[gi]:
            cmd = gov_LO[gi]
            flags |= np.int64(1) << (8 + gi)
        f[2 * nm + gi] = (cmd - z[2 * nm + gi]) / gov_T[gi]

    if iv[IV_HAS_AGC] == 1:
        i_agc = iv[IV_I_AGC]
        dagc = -sc[SC_AGC_KI] * sc[SC_AGC_BETA] * dfreq
        # anti-windup: no integration outward while pinned at a bound
        if (u[U_AGC_AT_HI] != 0.0 and dagc > 0.0) or (
            u[U_AGC_AT_LO] != 0.0 and dagc < 0.0
        ):
            dagc = 0.0
            flags |= np.int64(1) << FLAG_AGC
        f[i_agc] = dagc

    if iv[IV_HAS_WIND] == 1:
        i_pw = iv[IV_I_PW]
        i_fm = iv[IV_I_FM]
        vw = kappa[iv[IV_W_CH]]
        if vw < 0.0:
            vw = 0.0
        avail = _wind_avail(vw, sc)
        # filtered measurement state; the droop acts on the held sample u[0]
        f[i_fm] = (fcoi_hz - z[i_fm]) / sc[SC_W_TM]
        dfm = u[U_F_HELD] - f_n
        db = sc[SC_W_DB]
        if dfm > db:
            e = dfm - db
        elif dfm < -db:
            e = dfm + db
        else:
            e = 0.0
        order = (1.0 - sc[SC_W_CURT]) * avail - e / (sc[SC_W_DROOP] * f_n) * sc[
            SC_W_RATED
        ] + sc[SC_W_PART] * p_agc
        if order > avail:
            order = avail
            flags |= np.int64(1) << FLAG_WIND_HI
        elif order < 0.0:
            order = 0.0
            flags |= np.int64(1) << FLAG_WIND_LO
        f[i_pw] = (order - z[i_pw]) / sc[SC_W_TC]
        wb = iv[IV_W_BUS]
        g[wb] += z[i_pw]
        g[nb + wb] += sc[SC_W_Q0]

    return f, g, fcoi_hz, p_loss, q_loss, flags


@njit(cache=True)
def jacobian(z, kappa, u, cdt, G, B, mach_bus, H, D, XDT, EMF, PDISP, PMAX, PMIN,
             mach_gov, gov_mach, gov_R, gov_DB, gov_T, gov_LO, gov_HI,
             agc_part, load_bus, load_p, load_q, load_ch, sc, iv):
    """Jacobian of the step residual: [[I - cdt df/dz], [dg/dz]].

    cdt is theta*dt; clamp/deadband masks are re-derived from z so they
    stay consistent with eval_rhs at the same point.
    """
    nm = iv[IV_NM]
    nb = iv[IV_NB]
    ngov = iv[IV_NGOV]
    nx = iv[IV_NX]
    f_n = sc[SC_F_N]
    hsum = sc[SC_HSUM]
    n_tot = nx + 2 * nb
    J = np.zeros((n_tot, n_tot))

    hw = 0.0
    for m in range(nm):
        hw += H[m] * z[nm + m]
    dfreq = f_n * hw / hsum - f_n

    p_agc = z[iv[IV_I_AGC]] if iv[IV_HAS_AGC] == 1 else 0.0

    for i in range(nx):
        J[i, i] = 1.0

    # network partials enter the g rows with a minus sign
    for k in range(nb):
        tk = z[nx + k]
        vk = z[nx + nb + k]
        rp = nx + k
        rq = nx + nb + k
        pk = 0.0
        qk = 0.0
        for j in range(nb):
            gkj = G[k, j]
            bkj = B[k, j]
            if gkj == 0.0 and bkj == 0.0:
                continue
            dth = tk - z[nx + j]
            cs = math.cos(dth)
            sn = math.sin(dth)
            vj = z[nx + nb + j]
            a = vk * vj * (gkj * cs + bkj * sn)   # P-term k,j
            bq = vk * vj * (gkj * sn - bkj * cs)  # Q-term k,j
            pk += a
            qk += bq
            if j != k:
                J[rp, nx + j] -= bq          # dP/dth_j = +bq -> minus
                J[rp, nx + nb + j] -= a / vj
                J[rq, nx + j] -= -a          # dQ/dth_j = -a
                J[rq, nx + nb + j] -= bq / vj
        gkk = G[k, k]
        bkk = B[k, k]
        J[rp, nx + k] -= -qk - bkk * vk * vk
        J[rp, nx + nb + k] -= pk / vk + gkk * vk
        J[rq, nx + k] -= pk - gkk * vk * vk
        J[rq, nx + nb + k] -= qk / vk - bkk * vk

    for m in range(nm):
        b = mach_bus[m]
        vk = z[nx + nb + b]
        d = z[m] - z[nx + b]
        cs = math.cos(d)
        sn = math.sin(d)
        x = XDT[m]
        pe = EMF[m] * vk * sn / x
        dpe_dd = EMF[m] * vk * cs / x
        dpe_dv = EMF[m] * sn / x
        dqe_dv = (EMF[m] * cs - 2.0 * vk) / x
        rp = nx + b
        rq = nx + nb + b
        # machine injection into network rows
        J[rp, m] += dpe_dd
        J[rp, nx + b] += -dpe_dd
        J[rp, nx + nb + b] += dpe_dv
        J[rq, m] += -pe
        J[rq, nx + b] += pe
        J[rq, nx + nb + b] += dqe_dv
        # swing rows
        twoh = 2.0 * H[m]
        gi = mach_gov[m]
        pg = z[2 * nm + gi] if gi >= 0 else 0.0
        pm = PDISP[m] + pg + agc_part[m] * p_agc
        pm_free = PMIN[m] < pm < PMAX[m]
        J[m, nm + m] -= cdt * sc[SC_OMEGA_N]
        J[nm + m, m] -= cdt * (-dpe_dd / twoh)
        J[nm + m, nm + m] -= cdt * (-D[m] / twoh)
        J[nm + m, nx + b] -= cdt * (dpe_dd / twoh)
        J[nm + m, nx + nb + b] -= cdt * (-dpe_dv / twoh)
        if pm_free:
            if gi >= 0:
                J[nm + m, 2 * nm + gi] -= cdt * (1.0 / twoh)
            if iv[IV_HAS_AGC] == 1 and agc_part[m] != 0.0:
                J[nm + m, iv[IV_I_AGC]] -= cdt * (agc_part[m] / twoh)

    # d(f_coi)/d(omega_j) = f_n * H_j / Hsum
    for gi in range(ngov):
        r = 2 * nm + gi
        J[r, r] -= cdt * (-1.0 / gov_T[gi])
        db = gov_DB[gi]
        active = dfreq > db or dfreq < -db
        if active:
            cmd = -(dfreq - db if dfreq > db else dfreq + db) / (gov_R[gi] * f_n)
            if gov_LO[gi] < cmd < gov_HI[gi]:
                for j in range(nm):
                    dd = -(H[j] / hsum) / gov_R[gi] / gov_T[gi]
                    J[r, nm + j] -= cdt * dd

    if iv[IV_HAS_AGC] == 1:
        i_agc = iv[IV_I_AGC]
        dagc = -sc[SC_AGC_KI] * sc[SC_AGC_BETA] * dfreq
        pinned = (u[U_AGC_AT_HI] != 0.0 and dagc > 0.0) or (
            u[U_AGC_AT_LO] != 0.0 and dagc < 0.0
        )
        if not pinned:
            for j in range(nm):
                dd = -sc[SC_AGC_KI] * sc[SC_AGC_BETA] * f_n * H[j] / hsum
                J[i_agc, nm + j] -= cdt * dd

    if iv[IV_HAS_WIND] == 1:
        i_pw = iv[IV_I_PW]
        i_fm = iv[IV_I_FM]
        wb = iv[IV_W_BUS]
        vw = kappa[iv[IV_W_CH]]
        if vw < 0.0:
            vw = 0.0
        avail = _wind_avail(vw, sc)
        # measurement filter row (the droop input u[0] is held, so the
        # droop itself contributes no state coupling)
        J[i_fm, i_fm] -= cdt * (-1.0 / sc[SC_W_TM])
        for j in range(nm):
            J[i_fm, nm + j] -= cdt * (f_n * H[j] / hsum / sc[SC_W_TM])
        dfm = u[0] - f_n
        dbw = sc[SC_W_DB]
        if dfm > dbw:
            e = dfm - dbw
        elif dfm < -dbw:
            e = dfm + dbw
        else:
            e = 0.0
        order = (1.0 - sc[SC_W_CURT]) * avail - e / (sc[SC_W_DROOP] * f_n) * sc[
            SC_W_RATED
        ] + sc[SC_W_PART] * p_agc
        dfm = u[U_F_HELD] - f_n
        dbw = sc[SC_W_DB]
        if dfm > dbw:
            e = dfm - dbw
        elif dfm < -dbw:
            e = dfm + dbw
        else:
            e = 0.0
        order = (1.0 - sc[SC_W_CURT]) * avail - e / (sc[SC_W_DROOP] * f_n) * sc[
            SC_W_RATED
        ] + sc[SC_W_PART] * p_agc
        free = 0.0 < order < avail
        J[i_pw, i_pw] -= cdt * (-1.0 / sc[SC_W_TC])
        if free and iv[IV_HAS_AGC] == 1 and sc[SC_W_PART] != 0.0:
            J[i_pw, iv[IV_I_AGC]] -= cdt * (sc[SC_W_PART] / sc[SC_W_TC])
        J[nx + wb, i_pw] += 1.0

    return J


@njit(cache=True)
def step_once(x, y, kappa, u, f_prev, dt, theta, tol, maxit,
              G, B, mach_bus, H, D, XDT, EMF, PDISP, PMAX, PMIN,
              mach_gov, gov_mach, gov_R, gov_DB, gov_T, gov_LO, gov_HI,
              agc_part, load_bus, load_p, load_q, load_ch, sc, iv):
    """One trapezoidal step from (x, y) with the stochastic inputs already
    advanced to kappa and held inputs u.

    Returns (x_new, y_new, f_new, f_coi_hz, p_loss, q_loss, iterations,
    residual, flags, status).
    """
    nx = x.shape[0]
    ny = y.shape[0]
    n_tot = nx + ny
    z = np.empty(n_tot)
    z[:nx] = x
    z[nx:] = y

    f_z, g_z, fcoi, ploss, qloss, flags = eval_rhs(
        z, kappa, u, G, B, mach_bus, H, D, XDT, EMF, PDISP, PMAX, PMIN,
        mach_gov, gov_mach, gov_R, gov_DB, gov_T, gov_LO, gov_HI,
        agc_part, load_bus, load_p, load_q, load_ch, sc, iv)
    R = np.empty(n_tot)
    for i in range(nx):
        R[i] = z[i] - x[i] - dt * (theta * f_z[i] + (1.0 - theta) * f_prev[i])
    for i in range(ny):
        R[nx + i] = g_z[i]
    res = 0.0
    for i in range(n_tot):
        a = abs(R[i])
        if a > res:
            res = a

    it = 0
    status = STATUS_OK
    while res > tol and it < maxit:
        J = jacobian(z, kappa, u, theta * dt,
                     G, B, mach_bus, H, D, XDT, EMF, PDISP, PMAX, PMIN,
                     mach_gov, gov_mach, gov_R, gov_DB, gov_T, gov_LO, gov_HI,
                     agc_part, load_bus, load_p, load_q, load_ch, sc, iv)
        dz = np.linalg.solve(J, R)
        lam = 1.0
        accepted = False
        z_try = z
        f_t, g_t, fcoi_t, ploss_t, qloss_t, flags_t = f_z, g_z, fcoi, ploss, qloss, flags
        res_t = res
        for _ in range(6):
            z_try = z - lam * dz
            f_t, g_t, fcoi_t, ploss_t, qloss_t, flags_t = eval_rhs(
                z_try, kappa, u, G, B, mach_bus, H, D, XDT, EMF, PDISP, PMAX, PMIN,
                mach_gov, gov_mach, gov_R, gov_DB, gov_T, gov_LO, gov_HI,
                agc_part, load_bus, load_p, load_q, load_ch, sc, iv)
            res_t = 0.0
            ok = True
            for i in range(nx):
                ri = z_try[i] - x[i] - dt * (theta * f_t[i] + (1.0 - theta) * f_prev[i])
                R[i] = ri
                a = abs(ri)
                if not math.isfinite(a):
                    ok = False
                    break
                if a > res_t:
                    res_t = a
            if ok:
                for i in range(ny):
                    R[nx + i] = g_t[i]
                    a = abs(g_t[i])
                    if not math.isfinite(a):
                        ok = False
                        break
                    if a > res_t:
                        res_t = a
            if ok and (res_t < res or res_t < tol):
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            status = STATUS_DIVERGED
            break
        z = z_try
        f_z, g_z, fcoi, ploss, qloss, flags = f_t, g_t, fcoi_t, ploss_t, qloss_t, flags_t
        res = res_t
        it += 1

    if status == STATUS_OK and res > tol:
        status = STATUS_DIVERGED
    if status == STATUS_OK:
        for i in range(n_tot):
            if not math.isfinite(z[i]):
                status = STATUS_NAN
                break

    return z[:nx].copy(), z[nx:].copy(), f_z, fcoi, ploss, qloss, it, res, flags, status
