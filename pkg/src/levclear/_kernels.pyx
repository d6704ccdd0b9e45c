# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled clearing kernel: tight Picard loops for the closed-form rules.

Mirrors :mod:`levclear._reference` (same entries, flow, and status codes).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport pow, sqrt

COMPILED = True

cdef int HISTORY = 8


cdef inline double dmax(double a, double b) noexcept nogil:
    return a if a > b else b


cdef inline double dmin(double a, double b) noexcept nogil:
    return a if a < b else b


cdef void demand_eval(int code, const double[::1] packed, const long[::1] offsets,
                      const double[::1] units, const double[::1] prices_tab,
                      const double[::1] q_max, const double[::1] sold, double[::1] out,
                      int m) noexcept nogil:
    cdef int k
    cdef double z, edge
    cdef long lo, hi, j
    if code == 0:
        for k in range(m):
            out[k] = q_max[k]
    elif code == 1:
        for k in range(m):
            z = sold[k]
            if z <= packed[3 * k + 2]:
                out[k] = packed[3 * k] * dmax(1.0 - packed[3 * k + 1] * z, 0.0)
            else:
                edge = packed[3 * k] * dmax(1.0 - packed[3 * k + 1] * packed[3 * k + 2], 0.0)
                out[k] = edge * sqrt(packed[3 * k + 2] / z)
    elif code == 2:
        for k in range(m):
            out[k] = packed[3 * k] * dmax(1.0 - pow(sold[k] / packed[3 * k + 1], packed[3 * k + 2]), 0.0)
    else:
        for k in range(m):
            lo = offsets[k]
            hi = offsets[k + 1]
            z = sold[k]
            if z <= units[lo]:
                out[k] = prices_tab[lo]
            elif z >= units[hi - 1]:
                out[k] = prices_tab[hi - 1]
            else:
                j = lo
                while units[j + 1] < z:
                    j += 1
                out[k] = prices_tab[j] + (prices_tab[j + 1] - prices_tab[j]) \
                    * (z - units[j]) / (units[j + 1] - units[j])


cdef void step(const double[::1] total, const double[:, ::1] relative,
               const double[::1] liquid,
               const double[:, ::1] illiquid, const double[::1] lev_cap,
               int strat_code, int demand_code, const double[::1] packed,
               const long[::1] offsets, const double[::1] units,
               const double[::1] prices_tab,
               const double[::1] q_max, int n, int m,
               const double[::1] p, const double[::1] q,
               double[::1] new_p, double[::1] new_q,
               double[:, ::1] gamma, double[::1] sold,
               double[::1] inc, double[::1] value) noexcept nogil:
    cdef int i, j, k
    cdef double pj, acc, shortfall, headroom, req, price, f
    for i in range(n):
        inc[i] = 0.0
    for j in range(n + 1):
        pj = p[j]
        if pj != 0.0:
            for i in range(n):
                inc[i] += relative[j, i + 1] * pj
    for i in range(n):
        acc = 0.0
        for k in range(m):
            acc += illiquid[i, k] * q[k]
        value[i] = acc
    for k in range(m):
        sold[k] = 0.0
    for i in range(n):
        shortfall = dmax(total[i + 1] - (liquid[i] + inc[i]), 0.0)
        headroom = lev_cap[i] * dmax(liquid[i] + value[i] + inc[i] - total[i + 1], 0.0)
        req = dmax(shortfall - headroom, 0.0)
        if strat_code == 0:
            price = q[0]
            if price > 0.0:
                gamma[i, 0] = req / price
            elif req > 0.0:
                gamma[i, 0] = illiquid[i, 0]
            else:
                gamma[i, 0] = 0.0
            sold[0] += dmin(illiquid[i, 0], gamma[i, 0])
        else:
            if value[i] > 0.0:
                f = req / value[i]
                for k in range(m):
                    gamma[i, k] = illiquid[i, k] * f
                    sold[k] += dmin(illiquid[i, k], gamma[i, k])
            elif req > 0.0:
                for k in range(m):
                    gamma[i, k] = illiquid[i, k]
                    sold[k] += illiquid[i, k]
            else:
                for k in range(m):
                    gamma[i, k] = 0.0
    demand_eval(demand_code, packed, offsets, units, prices_tab, q_max,
                sold, new_q, m)
    new_p[0] = 0.0
    for i in range(n):
        new_p[i + 1] = dmin(total[i + 1], liquid[i] + value[i] + inc[i])


cdef double diff_norm(const double[::1] a, const double[::1] b, int size) noexcept nogil:
    cdef int i
    cdef double worst = 0.0, d
    for i in range(size):
        d = a[i] - b[i]
        if d < 0.0:
            d = -d
        if d > worst:
            worst = d
    return worst


def solve_closed_form(const double[::1] total, const double[:, ::1] relative,
                      const double[::1] liquid, const double[:, ::1] illiquid,
                      const double[::1] lev_cap, int strat_code, int demand_code,
                      const double[::1] packed, const long[::1] offsets,
                      const double[::1] units,
                      const double[::1] prices_tab, const double[::1] q_max,
                      double tol, int max_iter, double relax, int start_low,
                      double[::1] p_out, double[::1] q_out,
                      double[:, ::1] gamma_out):
    cdef int n = liquid.shape[0]
    cdef int m = illiquid.shape[1]
    buf = np.zeros((6, n + 1))
    qbuf = np.zeros((4, m))
    hist_p = np.zeros((HISTORY, n + 1))
    hist_q = np.zeros((HISTORY, m))
    cdef double[:, ::1] hp = hist_p
    cdef double[:, ::1] hq = hist_q
    cdef double[::1] p = buf[0]
    cdef double[::1] new_p = buf[1]
    cdef double[::1] cert_p = buf[2]
    cdef double[::1] inc = buf[3, :n]
    cdef double[::1] value = buf[4, :n]
    cdef double[::1] q = qbuf[0]
    cdef double[::1] new_q = qbuf[1]
    cdef double[::1] cert_q = qbuf[2]
    cdef double[::1] sold = qbuf[3]
    cdef int it, i, k, h, nhist = 0, head = 0
    cdef int status = 1, iterations = max_iter
    cdef double stepn, res = np.inf
    cdef bint cycled

    if start_low:
        for i in range(n + 1):
            p[i] = 0.0
        for k in range(m):
            q[k] = 0.0
    else:
        for i in range(n + 1):
            p[i] = total[i]
        for k in range(m):
            q[k] = q_max[k]

    for it in range(1, max_iter + 1):
        step(total, relative, liquid, illiquid, lev_cap, strat_code,
             demand_code, packed, offsets, units, prices_tab, q_max, n, m,
             p, q, new_p, new_q, gamma_out, sold, inc, value)
        if relax >= 0.0:
            for i in range(n + 1):
                new_p[i] = (1.0 - relax) * p[i] + relax * new_p[i]
            for k in range(m):
                new_q[k] = (1.0 - relax) * q[k] + relax * new_q[k]
        stepn = dmax(diff_norm(new_p, p, n + 1), diff_norm(new_q, q, m))
        if stepn <= tol:
            step(total, relative, liquid, illiquid, lev_cap, strat_code,
                 demand_code, packed, offsets, units, prices_tab, q_max, n, m,
                 new_p, new_q, cert_p, cert_q, gamma_out, sold, inc, value)
            res = dmax(diff_norm(cert_p, new_p, n + 1), diff_norm(cert_q, new_q, m))
            for i in range(n + 1):
                p[i] = new_p[i]
            for k in range(m):
                q[k] = new_q[k]
            if res <= tol:
                status = 0
                iterations = it
                break
            continue
        cycled = False
        for h in range(nhist):
            if dmax(diff_norm(hp[h], new_p, n + 1), diff_norm(hq[h], new_q, m)) <= 0.25 * tol:
                cycled = True
                break
        for i in range(n + 1):
            hp[head, i] = new_p[i]
        for k in range(m):
            hq[head, k] = new_q[k]
        head = (head + 1) % HISTORY
        if nhist < HISTORY:
            nhist += 1
        for i in range(n + 1):
            p[i] = new_p[i]
        for k in range(m):
            q[k] = new_q[k]
        if cycled:
            status = 2
            iterations = it
            break
    if status == 1:
        step(total, relative, liquid, illiquid, lev_cap, strat_code,
             demand_code, packed, offsets, units, prices_tab, q_max, n, m,
             p, q, cert_p, cert_q, gamma_out, sold, inc, value)
        res = dmax(diff_norm(cert_p, p, n + 1), diff_norm(cert_q, q, m))
    # final liquidations evaluated at the returned state
    step(total, relative, liquid, illiquid, lev_cap, strat_code, demand_code,
         packed, offsets, units, prices_tab, q_max, n, m,
         p, q, cert_p, cert_q, gamma_out, sold, inc, value)
    for i in range(n + 1):
        p_out[i] = p[i]
    for k in range(m):
        q_out[k] = q[k]
    return iterations, status, res


def scan_leverage(const double[::1] total, const double[:, ::1] relative,
                  const double[::1] liquid, const double[:, ::1] illiquid,
                  const double[::1] lambdas, int strat_code, int demand_code,
                  const double[::1] packed, const long[::1] offsets,
                  const double[::1] units,
                  const double[::1] prices_tab, const double[::1] q_max,
                  double tol, int max_iter,
                  double[:, ::1] p_grid, double[:, ::1] q_grid,
                  long[::1] iter_out, long[::1] status_out,
                  double[::1] res_out):
    """Solve the clearing problem once per uniform leverage-cap value."""
    cdef int n = liquid.shape[0]
    cdef int m = illiquid.shape[1]
    cdef Py_ssize_t g
    cdef int i
    cap_arr = np.zeros(n)
    gamma_arr = np.zeros((n, m))
    cdef double[::1] cap = cap_arr
    cdef double[:, ::1] gamma = gamma_arr
    for g in range(lambdas.shape[0]):
        for i in range(n):
            cap[i] = lambdas[g]
        iters, status, res = solve_closed_form(
            total, relative, liquid, illiquid, cap, strat_code, demand_code,
            packed, offsets, units, prices_tab, q_max, tol, max_iter, -1.0, 0,
            p_grid[g], q_grid[g], gamma)
        iter_out[g] = iters
        status_out[g] = status
        res_out[g] = res
