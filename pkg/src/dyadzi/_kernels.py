"""Compiled inner loops for the data-augmentation sampler.

Each latent-variable draw gets its own counter-based random stream keyed by
(seed, chain, iteration, unit, substep), so imputation is deterministic under
any scheduling. The scalar adaptive-rejection sampler here mirrors ars.py
for the two target families that occur in the sweep: a trait posterior
(conditional normal times item likelihood) and a single multinomial-logit
coordinate posterior.

Status codes returned by samplers: 0 ok, 1 concavity violation, 2 iteration
cap exceeded, 3 hull construction failure.
"""

import math

import numpy as np
from numba import njit, prange

U64 = np.uint64
_GOLD = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)
_S30 = U64(30)
_S27 = U64(27)
_S31 = U64(31)
_S11 = U64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53

SUB_XI = 11
SUB_ETA = 22
SUB_GAMMA = 33

_KMAX = 48
_TID_ETA = 0
_TID_GAMMA = 1


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True)
def _key(seed, a, b, c, d):
    h = _mix64(U64(seed))
    h = _mix64(h ^ (U64(a) * _GOLD))
    h = _mix64(h ^ (U64(b) * _GOLD))
    h = _mix64(h ^ (U64(c) * _GOLD))
    h = _mix64(h ^ (U64(d) * _GOLD))
    return h


@njit(cache=True)
def _u01(state):
    """Next uniform in the open interval (0, 1)."""
    state = state + _GOLD
    z = _mix64(state)
    return state, (float(z >> _S11) + 0.5) * _INV53


@njit(cache=True)
def _normal(state):
    state, u1 = _u01(state)
    state, u2 = _u01(state)
    return state, math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True)
def _softplus(s):
    if s > 0.0:
        return s + math.log1p(math.exp(-s))
    return math.log1p(math.exp(s))


@njit(cache=True)
def _sigmoid(s):
    if s >= 0.0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)


@njit(cache=True)
def _target(tid, x, a1, a2, a3, a4, sc):
    """Log-density (up to a constant) and gradient of the ARS targets.

    tid 0 -- trait posterior: a1=y, a2=mask, a3=intercepts, a4=loadings,
    sc=(cond mean, 1/cond var).
    tid 1 -- logit coordinate posterior: a1=log other-cell mass, a2=own-cell
    base predictor, a3=covariate column, sc=(sufficient stat, 1/prior var).
    """
    h = 0.0
    dh = 0.0
    if tid == _TID_ETA:
        mu = sc[0]
        inv_var = sc[1]
        for j in range(a1.shape[0]):
            m = a2[j]
            if m > 0.0:
                s = a3[j] + a4[j] * x
                h += a1[j] * s - _softplus(s)
                dh += a4[j] * (a1[j] - _sigmoid(s))
        d = x - mu
        h -= 0.5 * inv_var * d * d
        dh -= inv_var * d
    else:
        S = sc[0]
        inv_var = sc[1]
        h = S * x - 0.5 * inv_var * x * x
        dh = S - inv_var * x
        for i in range(a1.shape[0]):
            s = a2[i] + a3[i] * x
            la = a1[i]
            # log(exp(la) + exp(s)) and its x-derivative
            if la >= s:
                h -= la + math.log1p(math.exp(s - la))
            else:
                h -= s + math.log1p(math.exp(la - s))
            dh -= a3[i] * _sigmoid(s - la)
    return h, dh


@njit(cache=True)
def _grad_hess(tid, x, a1, a2, a3, a4, sc):
    g = 0.0
    hess = 0.0
    if tid == _TID_ETA:
        inv_var = sc[1]
        for j in range(a1.shape[0]):
            m = a2[j]
            if m > 0.0:
                s = a3[j] + a4[j] * x
                p = _sigmoid(s)
                g += a4[j] * (a1[j] - p)
                hess -= a4[j] * a4[j] * p * (1.0 - p)
        g -= inv_var * (x - sc[0])
        hess -= inv_var
    else:
        inv_var = sc[1]
        g = sc[0] - inv_var * x
        hess = -inv_var
        for i in range(a1.shape[0]):
            p = _sigmoid(a2[i] + a3[i] * x - a1[i])
            g -= a3[i] * p
            hess -= a3[i] * a3[i] * p * (1.0 - p)
    return g, hess


@njit(cache=True)
def _newton_mode(tid, a1, a2, a3, a4, sc, x0, max_steps):
    """Mode and local standard deviation of a strictly concave target."""
    x = x0
    for _ in range(max_steps):
        g, hess = _grad_hess(tid, x, a1, a2, a3, a4, sc)
        step = -g / hess
        if step > 50.0:
            step = 50.0
        elif step < -50.0:
            step = -50.0
        x += step
        if abs(step) < 1e-9:
            break
    g, hess = _grad_hess(tid, x, a1, a2, a3, a4, sc)
    sd = 1.0 / math.sqrt(-hess)
    return x, sd


@njit(cache=True)
def _seg_logmass(h, d, xj, zl, zu):
    """Log integral of exp(h + d*(x-xj)) over (zl, zu)."""
    if d > 0.0:
        w = d * (zu - zl)
        if w < 0.693:
            tail = math.log(-math.expm1(-w))
        else:
            tail = math.log1p(-math.exp(-w))
        return h + d * (zu - xj) - math.log(d) + tail
    elif d < 0.0:
        w = -d * (zu - zl)
        if w < 0.693:
            tail = math.log(-math.expm1(-w))
        else:
            tail = math.log1p(-math.exp(-w))
        return h + d * (zl - xj) - math.log(-d) + tail
    else:
        return h + math.log(zu - zl)


@njit(cache=True)
def _ars_draw(tid, a1, a2, a3, a4, sc, mode, sd, state, max_iter):
    """One exact draw from a log-concave target via adaptive rejection.

    The envelope starts from four abscissae around the supplied mode, spread
    by the local standard deviation, with the end points pushed outward until
    their slopes give an integrable hull.
    """
    xs = np.empty(_KMAX)
    hs = np.empty(_KMAX)
    ds = np.empty(_KMAX)
    z = np.empty(_KMAX + 1)
    lm = np.empty(_KMAX)

    xs[0] = mode - 2.2 * sd
    xs[1] = mode - 0.75 * sd
    xs[2] = mode + 0.75 * sd
    xs[3] = mode + 2.2 * sd
    k = 4
    nev = 0
    for j in range(k):
        hs[j], ds[j] = _target(tid, xs[j], a1, a2, a3, a4, sc)
        nev += 1
    # Integrability: leftmost slope must be positive, rightmost negative.
    width = 2.0 * sd
    tries = 0
    while ds[0] <= 0.0:
        xs[0] -= width
        width *= 2.0
        hs[0], ds[0] = _target(tid, xs[0], a1, a2, a3, a4, sc)
        nev += 1
        tries += 1
        if tries > 200:
            return 0.0, state, nev, 3
    width = 2.0 * sd
    tries = 0
    while ds[k - 1] >= 0.0:
        xs[k - 1] += width
        width *= 2.0
        hs[k - 1], ds[k - 1] = _target(tid, xs[k - 1], a1, a2, a3, a4, sc)
        nev += 1
        tries += 1
        if tries > 200:
            return 0.0, state, nev, 3

    for _ in range(max_iter):
        # Tangent intersections (fallback: midpoint keeps dominance).
        z[0] = -np.inf
        z[k] = np.inf
        for j in range(1, k):
            den = ds[j - 1] - ds[j]
            if den > 1e-14:
                zz = (hs[j] - hs[j - 1] - xs[j] * ds[j] + xs[j - 1] * ds[j - 1]) / den
                if zz < xs[j - 1] or zz > xs[j]:
                    zz = 0.5 * (xs[j - 1] + xs[j])
            else:
                zz = 0.5 * (xs[j - 1] + xs[j])
            z[j] = zz
        big = -np.inf
        for j in range(k):
            lm[j] = _seg_logmass(hs[j], ds[j], xs[j], z[j], z[j + 1])
            if lm[j] > big:
                big = lm[j]
        total = 0.0
        for j in range(k):
            total += math.exp(lm[j] - big)

        state, u = _u01(state)
        acc = 0.0
        seg = k - 1
        for j in range(k):
            acc += math.exp(lm[j] - big) / total
            if u <= acc:
                seg = j
                break
        zl = z[seg]
        zu = z[seg + 1]
        d = ds[seg]
        state, v = _u01(state)
        if d > 0.0:
            if zl == -np.inf:
                x = zu + math.log(v) / d
            else:
                x = zu + math.log(v + (1.0 - v) * math.exp(d * (zl - zu))) / d
        elif d < 0.0:
            if zu == np.inf:
                x = zl + math.log(1.0 - v) / d
            else:
                x = zl + math.log((1.0 - v) + v * math.exp(d * (zu - zl))) / d
        else:
            x = zl + v * (zu - zl)
        if not math.isfinite(x):
            continue

        up = hs[seg] + ds[seg] * (x - xs[seg])
        # Chord squeeze between adjacent abscissae.
        low = -np.inf
        if xs[0] <= x <= xs[k - 1]:
            jj = 0
            for j in range(k - 1):
                if x <= xs[j + 1]:
                    jj = j
                    break
            if xs[jj + 1] > xs[jj]:
                w = (x - xs[jj]) / (xs[jj + 1] - xs[jj])
                low = (1.0 - w) * hs[jj] + w * hs[jj + 1]

        state, uu = _u01(state)
        logu = math.log(uu)
        if logu <= low - up:
            return x, state, nev, 0
        hx, dx = _target(tid, x, a1, a2, a3, a4, sc)
        nev += 1
        if hx > up + 1e-8:
            return x, state, nev, 1
        if logu <= hx - up:
            return x, state, nev, 0
        if k < _KMAX:
            pos = k
            for j in range(k):
                if x < xs[j]:
                    pos = j
                    break
            if (pos == 0 or x - xs[pos - 1] > 1e-12) and (pos == k or xs[pos] - x > 1e-12):
                for j in range(k, pos, -1):
                    xs[j] = xs[j - 1]
                    hs[j] = hs[j - 1]
                    ds[j] = ds[j - 1]
                xs[pos] = x
                hs[pos] = hx
                ds[pos] = dx
                k += 1
    return 0.0, state, nev, 2


@njit(cache=True)
def _block_loglik1(y, m, a, b, eta):
    total = 0.0
    for j in range(y.shape[0]):
        if m[j] > 0.0:
            s = a[j] + b[j] * eta
            total += y[j] * s - _softplus(s)
    return total


@njit(cache=True, parallel=True)
def impute_xi_kernel(
    seed,
    chain,
    iteration,
    meas_on,
    Y_G,
    M_G,
    A_G,
    B_G,
    Y_R,
    M_R,
    A_R,
    B_R,
    g_flag,
    r_flag,
    LPxi,
    eta,
    xi,
):
    """Draw the class pair per dyad from the four-cell conditional (A1 step).

    Cells are ordered (00, 01, 10, 11); cells with class 0 in a block are
    excluded outright when that block has an observed nonzero response.
    """
    n = Y_G.shape[0]
    for i in prange(n):
        state = _key(seed, chain, iteration, i, SUB_XI)
        lw = np.empty(4)
        if meas_on:
            lg1 = _block_loglik1(Y_G[i], M_G[i], A_G[i], B_G[i], eta[i, 0])
            lr1 = _block_loglik1(Y_R[i], M_R[i], A_R[i], B_R[i], eta[i, 1])
            lg0 = -np.inf if g_flag[i] else 0.0
            lr0 = -np.inf if r_flag[i] else 0.0
        else:
            lg1 = 0.0
            lr1 = 0.0
            lg0 = 0.0
            lr0 = 0.0
        lw[0] = LPxi[i, 0] + lg0 + lr0
        lw[1] = LPxi[i, 1] + lg0 + lr1
        lw[2] = LPxi[i, 2] + lg1 + lr0
        lw[3] = LPxi[i, 3] + lg1 + lr1
        big = lw[0]
        for c in range(1, 4):
            if lw[c] > big:
                big = lw[c]
        total = 0.0
        for c in range(4):
            total += math.exp(lw[c] - big)
        state, u = _u01(state)
        acc = 0.0
        cell = 3
        for c in range(4):
            acc += math.exp(lw[c] - big) / total
            if u <= acc:
                cell = c
                break
        xi[i, 0] = cell // 2
        xi[i, 1] = cell % 2


@njit(cache=True, parallel=True)
def impute_eta_kernel(
    seed,
    chain,
    iteration,
    meas_on,
    Y_G,
    M_G,
    A_G,
    B_G,
    Y_R,
    M_R,
    A_R,
    B_R,
    xi,
    eta,
    mu,
    sigma2_G,
    sigma2_R,
    rho,
    mode_cache,
    status,
    nevals,
    max_iter,
):
    """Draw the trait pair per dyad (A2-A3 steps), G first then R.

    Class-0 blocks take a direct conditional-normal draw; class-1 blocks use
    adaptive rejection sampling on the normal-times-items posterior, warm
    started from the previous iteration's mode.
    """
    n = Y_G.shape[0]
    rho2 = rho * rho
    cvar_G = sigma2_G * (1.0 - rho2)
    cvar_R = sigma2_R * (1.0 - rho2)
    csd_G = math.sqrt(cvar_G)
    csd_R = math.sqrt(cvar_R)
    slope_G = rho * math.sqrt(sigma2_G / sigma2_R)
    slope_R = rho * math.sqrt(sigma2_R / sigma2_G)
    for i in prange(n):
        state = _key(seed, chain, iteration, i, SUB_ETA)
        status[i] = 0
        sc = np.empty(2)

        mu_c = mu[i, 0] + slope_G * (eta[i, 1] - mu[i, 1])
        use_meas = meas_on and xi[i, 0] == 1
        if use_meas:
            nobs = 0.0
            for j in range(M_G.shape[1]):
                nobs += M_G[i, j]
            use_meas = nobs > 0.0
        if use_meas:
            sc[0] = mu_c
            sc[1] = 1.0 / cvar_G
            m0, sd0 = _newton_mode(
                _TID_ETA, Y_G[i], M_G[i], A_G[i], B_G[i], sc, mode_cache[i, 0], 30
            )
            mode_cache[i, 0] = m0
            x, state, ne, st = _ars_draw(
                _TID_ETA, Y_G[i], M_G[i], A_G[i], B_G[i], sc, m0, sd0, state, max_iter
            )
            nevals[i] = ne
            if st != 0:
                status[i] = st
                continue
            eta[i, 0] = x
        else:
            state, zdraw = _normal(state)
            eta[i, 0] = mu_c + csd_G * zdraw

        mu_c = mu[i, 1] + slope_R * (eta[i, 0] - mu[i, 0])
        use_meas = meas_on and xi[i, 1] == 1
        if use_meas:
            nobs = 0.0
            for j in range(M_R.shape[1]):
                nobs += M_R[i, j]
            use_meas = nobs > 0.0
        if use_meas:
            sc[0] = mu_c
            sc[1] = 1.0 / cvar_R
            m0, sd0 = _newton_mode(
                _TID_ETA, Y_R[i], M_R[i], A_R[i], B_R[i], sc, mode_cache[i, 1], 30
            )
            mode_cache[i, 1] = m0
            x, state, ne, st = _ars_draw(
                _TID_ETA, Y_R[i], M_R[i], A_R[i], B_R[i], sc, m0, sd0, state, max_iter
            )
            nevals[i] += ne
            if st != 0:
                status[i] = st
                continue
            eta[i, 1] = x
        else:
            state, zdraw = _normal(state)
            eta[i, 1] = mu_c + csd_R * zdraw


@njit(cache=True)
def draw_gamma_kernel(
    seed,
    chain,
    iteration,
    X,
    cells,
    LPxi,
    gamma,
    prior_inv_var,
    mode_cache,
    max_iter,
):
    """Coordinate-wise Gibbs update of the logit coefficients (A8 step).

    Cycles covariates in the outer loop and cells (0,1), (1,0), (1,1) in the
    inner loop, drawing each scalar by adaptive rejection from its full
    conditional. LPxi and gamma are updated in place.
    """
    n, q = X.shape
    logA = np.empty(n)
    bvec = np.empty(n)
    sc = np.empty(2)
    dummy = np.empty(0)
    total_nev = 0
    for r in range(q):
        for c in range(3):
            cell = c + 1
            gcur = gamma[c, r]
            S = 0.0
            for i in range(n):
                # log-sum-exp of the other three cells
                big = -np.inf
                for cc in range(4):
                    if cc != cell and LPxi[i, cc] > big:
                        big = LPxi[i, cc]
                acc = 0.0
                for cc in range(4):
                    if cc != cell:
                        acc += math.exp(LPxi[i, cc] - big)
                logA[i] = big + math.log(acc)
                bvec[i] = LPxi[i, cell] - gcur * X[i, r]
                if cells[i] == cell:
                    S += X[i, r]
            sc[0] = S
            sc[1] = prior_inv_var
            m0, sd0 = _newton_mode(
                _TID_GAMMA, logA, bvec, X[:, r], dummy, sc, mode_cache[r, c], 30
            )
            mode_cache[r, c] = m0
            state = _key(seed, chain, iteration, r * 3 + c, SUB_GAMMA)
            x, state, nev, st = _ars_draw(
                _TID_GAMMA, logA, bvec, X[:, r], dummy, sc, m0, sd0, state, max_iter
            )
            total_nev += nev
            if st != 0:
                return st, total_nev
            gamma[c, r] = x
            for i in range(n):
                LPxi[i, cell] = bvec[i] + x * X[i, r]
    return 0, total_nev
