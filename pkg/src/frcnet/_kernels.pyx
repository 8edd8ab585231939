# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forecast kernel: RK4 predictor + trapezoidal Newton corrector.

One trajectory per call; all arithmetic is sequential C so a batch of calls
reproduces single calls bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, isfinite
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef extern from *:
    """
#include <math.h>
#include <stdint.h>
#include <string.h>
/* tanh over an array: em1 = expm1(2|x|) from a degree-13 polynomial after
   range reduction by ln2, then em1 / (em1 + 2). Loops are branch-free so the
   compiler can vectorise them. */
static void frc_tanh_inplace(double* x, int n) {
    const double log2e = 1.4426950408889634, ln2hi = 6.93147180369123816490e-01,
                 ln2lo = 1.90821492927058770002e-10, shifter = 6755399441055744.0;
    for (int i = 0; i < n; i++) {
        double v = x[i];
        double a = fabs(v);
        a = a > 20.0 ? 20.0 : a;
        double y = a + a;
        double kd = y * log2e + shifter;
        double k = kd - shifter;
        double r = (y - k * ln2hi) - k * ln2lo;
        double q = 1.0 / 6227020800.0;
        q = q * r + 1.0 / 479001600.0;
        q = q * r + 1.0 / 39916800.0;
        q = q * r + 1.0 / 3628800.0;
        q = q * r + 1.0 / 362880.0;
        q = q * r + 1.0 / 40320.0;
        q = q * r + 1.0 / 5040.0;
        q = q * r + 1.0 / 720.0;
        q = q * r + 1.0 / 120.0;
        q = q * r + 1.0 / 24.0;
        q = q * r + 1.0 / 6.0;
        q = q * r + 0.5;
        double pm1 = r + (r * r) * q;          /* expm1(r) */
        int64_t kb;
        memcpy(&kb, &kd, 8);
        int64_t sb = ((kb - (int64_t)0x4338000000000000LL) + 1023) << 52;
        double s;
        memcpy(&s, &sb, 8);                      /* 2^k */
        double em1 = s * pm1 + (s - 1.0);
        double t = em1 / (em1 + 2.0);
        x[i] = copysign(t, v);
    }
}

/* dst = b + W src with W stored column-major (rows x cols); each output
   accumulates the bias first and then columns in ascending order. */
static void frc_affine(const double* restrict w, const double* restrict b,
                       const double* restrict src, double* restrict dst,
                       int rows, int cols) {
    for (int i = 0; i < rows; i++) dst[i] = b[i];
    for (int j = 0; j < cols; j++) {
        const double s = src[j];
        const double* restrict col = w + (long)j * rows;
        for (int i = 0; i < rows; i++) dst[i] = dst[i] + col[i] * s;
    }
}

/* the two input-tangent directions pushed through the same weights */
static void frc_tangent(const double* restrict w, const double* restrict s0,
                        const double* restrict s1, double* restrict d0,
                        double* restrict d1, int rows, int cols) {
    for (int i = 0; i < rows; i++) { d0[i] = 0.0; d1[i] = 0.0; }
    for (int j = 0; j < cols; j++) {
        const double a = s0[j], c = s1[j];
        const double* restrict col = w + (long)j * rows;
        for (int i = 0; i < rows; i++) {
            d0[i] = d0[i] + col[i] * a;
            d1[i] = d1[i] + col[i] * c;
        }
    }
}
    """
    void frc_tanh_inplace(double* x, int n) noexcept nogil
    void frc_affine(const double* w, const double* b, const double* src, double* dst,
                    int rows, int cols) noexcept nogil
    void frc_tangent(const double* w, const double* s0, const double* s1, double* d0,
                     double* d1, int rows, int cols) noexcept nogil

cdef struct Scratch:
    double* h0
    double* h1
    double* a0
    double* a1
    double* b0
    double* b1
    double* outA
    double* dA0
    double* dA1
    double* outB
    double* dB0
    double* dB1


cdef class PackedNet:
    """Flat parameter buffer plus layer table for one OperatorNetwork."""

    cdef public int variant
    cdef public int p
    cdef public int n_branches
    cdef public int max_width
    cdef double[::1] params
    cdef int[:, ::1] layers
    cdef int br_first[2]
    cdef int br_count[2]
    cdef double sshift[2]
    cdef double sscale[2]
    cdef double oscale[2]
    cdef double cbias[2]
    cdef double ushift, uscale, tshift, tscale

    def __init__(self, net):
        names = list(net.branches)
        self.variant = {"V1": 1, "V2": 2, "V3": 3}[net.variant]
        self.p = net.latent_dim
        self.n_branches = len(names)
        chunks, table = [], []
        off = 0
        width = 3
        for bi, name in enumerate(names):
            layers = net.branches[name]
            self.br_first[bi] = len(table)
            self.br_count[bi] = len(layers)
            for layer in layers:
                # column-major so the inner loop runs over outputs
                w = np.asfortranarray(layer.weight, dtype=np.float64)
                b = np.ascontiguousarray(layer.bias, dtype=np.float64)
                rows, cols = w.shape
                table.append((rows, cols, 1 if layer.activation else 0, off, off + w.size))
                chunks.extend((w.ravel(order="F"), b))
                off += w.size + b.size
                width = max(width, rows, cols)
        self.params = np.concatenate(chunks).astype(np.float64)
        self.layers = np.ascontiguousarray(np.array(table, dtype=np.intc))
        self.max_width = width
        nm = net.norm
        for i in range(2):
            self.sshift[i] = nm.state_shift[i]
            self.sscale[i] = nm.state_scale[i]
            self.oscale[i] = nm.out_scale[i]
            self.cbias[i] = net.combine_bias[i]
        self.ushift, self.uscale = nm.u_shift, nm.u_scale
        self.tshift, self.tscale = nm.t_shift, nm.t_scale

    cdef int _alloc(self, Scratch* s) nogil:
        cdef int w = self.max_width
        cdef double* block = <double*> malloc(12 * w * sizeof(double))
        if block == NULL:
            return -1
        s.h0 = block
        s.h1 = block + w
        s.a0 = block + 2 * w
        s.a1 = block + 3 * w
        s.b0 = block + 4 * w
        s.b1 = block + 5 * w
        s.outA = block + 6 * w
        s.dA0 = block + 7 * w
        s.dA1 = block + 8 * w
        s.outB = block + 9 * w
        s.dB0 = block + 10 * w
        s.dB1 = block + 11 * w
        return 0

    cdef void _run_branch(self, int bi, double* z, double* dz0, double* dz1, bint tang,
                          double* out, double* dout0, double* dout1, Scratch* s) noexcept nogil:
        cdef int first = self.br_first[bi]
        cdef int count = self.br_count[bi]
        cdef int li, i, j, rows, cols, act
        cdef double* src = z
        cdef double* s0 = dz0
        cdef double* s1 = dz1
        cdef double* dst
        cdef double* d0
        cdef double* d1
        cdef double* w
        cdef double t0, t1, th, slope
        cdef double* P = &self.params[0]
        for li in range(count):
            rows = self.layers[first + li, 0]
            cols = self.layers[first + li, 1]
            act = self.layers[first + li, 2]
            w = P + self.layers[first + li, 3]
            if li == count - 1:
                dst, d0, d1 = out, dout0, dout1
            elif li % 2 == 0:
                dst, d0, d1 = s.h0, s.a0, s.b0
            else:
                dst, d0, d1 = s.h1, s.a1, s.b1
            frc_affine(w, P + self.layers[first + li, 4], src, dst, rows, cols)
            if tang:
                frc_tangent(w, s0, s1, d0, d1, rows, cols)
            if act:
                frc_tanh_inplace(dst, rows)
                if tang:
                    for i in range(rows):
                        th = dst[i]
                        slope = 1.0 - th * th
                        d0[i] = d0[i] * slope
                        d1[i] = d1[i] * slope
            src, s0, s1 = dst, d0, d1

    cdef void _field(self, double q, double v, double t, double u, double* g, double* J,
                     bint tang, Scratch* s) noexcept nogil:
        """Free-response field (plus V1's forcing input) and its state Jacobian."""
        cdef double z[3]
        cdef double dz0[3]
        cdef double dz1[3]
        cdef double zt[1]
        cdef double acc0, acc1, j00, j01, j10, j11, al
        cdef int l, p = self.p
        z[0] = (q - self.sshift[0]) / self.sscale[0]
        z[1] = (v - self.sshift[1]) / self.sscale[1]
        z[2] = (u - self.ushift) / self.uscale
        dz0[0] = 1.0 / self.sscale[0]
        dz0[1] = 0.0
        dz0[2] = 0.0
        dz1[0] = 0.0
        dz1[1] = 1.0 / self.sscale[1]
        dz1[2] = 0.0
        if self.variant == 2:
            self._run_branch(0, z, dz0, dz1, tang, s.outA, s.dA0, s.dA1, s)
            g[0] = s.outA[0] * self.oscale[0]
            g[1] = s.outA[1] * self.oscale[1]
            if tang:
                J[0] = s.dA0[0] * self.oscale[0]
                J[1] = s.dA1[0] * self.oscale[0]
                J[2] = s.dA0[1] * self.oscale[1]
                J[3] = s.dA1[1] * self.oscale[1]
            return
        if self.variant == 3:
            self._run_branch(0, z, dz0, dz1, tang, s.outA, s.dA0, s.dA1, s)
            self._run_branch(1, z, dz0, dz1, tang, s.outB, s.dB0, s.dB1, s)
            acc0 = 0.0
            acc1 = 0.0
            j00 = 0.0
            j01 = 0.0
            j10 = 0.0
            j11 = 0.0
            for l in range(p):
                al = s.outA[l]
                acc0 = acc0 + al * s.outB[2 * l]
                acc1 = acc1 + al * s.outB[2 * l + 1]
                if tang:
                    j00 = j00 + (s.dA0[l] * s.outB[2 * l] + al * s.dB0[2 * l])
                    j01 = j01 + (s.dA1[l] * s.outB[2 * l] + al * s.dB1[2 * l])
                    j10 = j10 + (s.dA0[l] * s.outB[2 * l + 1] + al * s.dB0[2 * l + 1])
                    j11 = j11 + (s.dA1[l] * s.outB[2 * l + 1] + al * s.dB1[2 * l + 1])
        else:
            zt[0] = (t - self.tshift) / self.tscale
            self._run_branch(0, z, dz0, dz1, tang, s.outA, s.dA0, s.dA1, s)
            self._run_branch(1, zt, dz0, dz1, False, s.outB, s.dB0, s.dB1, s)
            acc0 = 0.0
            acc1 = 0.0
            j00 = 0.0
            j01 = 0.0
            j10 = 0.0
            j11 = 0.0
            for l in range(p):
                al = s.outB[l]
                acc0 = acc0 + s.outA[2 * l] * al
                acc1 = acc1 + s.outA[2 * l + 1] * al
                if tang:
                    j00 = j00 + s.dA0[2 * l] * al
                    j01 = j01 + s.dA1[2 * l] * al
                    j10 = j10 + s.dA0[2 * l + 1] * al
                    j11 = j11 + s.dA1[2 * l + 1] * al
            acc0 = acc0 + self.cbias[0]
            acc1 = acc1 + self.cbias[1]
        g[0] = acc0 * self.oscale[0]
        g[1] = acc1 * self.oscale[1]
        if tang:
            J[0] = j00 * self.oscale[0]
            J[1] = j01 * self.oscale[0]
            J[2] = j10 * self.oscale[1]
            J[3] = j11 * self.oscale[1]

    cdef inline void _aug(self, double q, double v, double t, double u, double* g, double* J,
                          bint tang, Scratch* s) noexcept nogil:
        self._field(q, v, t, u, g, J, tang, s)
        if self.variant != 1:
            g[1] = g[1] + u

    def evaluate(self, double q, double v, double t=0.0, double u=0.0):
        """Return (G, J) of the augmented field at one state (testing aid)."""
        cdef Scratch s
        cdef double g[2]
        cdef double J[4]
        if self._alloc(&s) != 0:
            raise MemoryError()
        self._aug(q, v, t, u, g, J, True, &s)
        free(s.h0)
        return np.array([g[0], g[1]]), np.array([[J[0], J[1]], [J[2], J[3]]])

    def forecast(self, double q0, double v0, const double[::1] tk, const double[::1] u_grid,
                 const double[::1] u_mid, double h, double tol, int max_iter,
                 double[:, ::1] out, int[::1] iters, double[::1] resid):
        """Integrate ``len(tk) - 1`` steps from ``(q0, v0)``.

        Returns ``(n_filled, all_converged, failure_index)``; ``failure_index``
        is -1 unless a step produced a non-finite value or a singular
        residual Jacobian, in which case rows past it are left unfilled.
        """
        cdef Scratch s
        cdef int n = tk.shape[0] - 1
        cdef int k, it, fail = -1, ok = 1
        cdef double x0, x1, g00, g01, y0, y1, k1a, k1b, k2a, k2b, k3a, k3b
        cdef double xn0, xn1, r0, r1, res, m00, m01, m10, m11, det, hh = 0.5 * h
        cdef double th, t1, um, u1
        cdef double g[2]
        cdef double J[4]
        if self._alloc(&s) != 0:
            raise MemoryError()
        with nogil:
            x0 = q0
            x1 = v0
            out[0, 0] = x0
            out[0, 1] = x1
            self._aug(x0, x1, tk[0], u_grid[0], g, J, False, &s)
            g00 = g[0]
            g01 = g[1]
            for k in range(n):
                th = tk[k] + hh
                t1 = tk[k + 1]
                um = u_mid[k]
                u1 = u_grid[k + 1]
                # staged RK4 predictor
                y0 = x0 + hh * g00
                y1 = x1 + hh * g01
                self._aug(y0, y1, th, um, g, J, False, &s)
                k1a = g[0]
                k1b = g[1]
                y0 = x0 + hh * k1a
                y1 = x1 + hh * k1b
                self._aug(y0, y1, th, um, g, J, False, &s)
                k2a = g[0]
                k2b = g[1]
                y0 = x0 + h * k2a
                y1 = x1 + h * k2b
                self._aug(y0, y1, t1, u1, g, J, False, &s)
                k3a = g[0]
                k3b = g[1]
                xn0 = x0 + h / 6.0 * (g00 + 2.0 * k1a + 2.0 * k2a + k3a)
                xn1 = x1 + h / 6.0 * (g01 + 2.0 * k1b + 2.0 * k2b + k3b)
                if not (isfinite(xn0) and isfinite(xn1)):
                    fail = k
                    break
                # implicit trapezoid corrector
                # tangents only where an update may follow: the first evaluation
                # always, later ones lazily (usually the check after one update
                # already converges)
                it = 0
                while True:
                    self._aug(xn0, xn1, t1, u1, g, J, it == 0, &s)
                    r0 = xn0 - x0 - hh * (g00 + g[0])
                    r1 = xn1 - x1 - hh * (g01 + g[1])
                    res = fabs(r0) if fabs(r0) > fabs(r1) else fabs(r1)
                    if not isfinite(res):
                        fail = k
                        break
                    if res <= tol:
                        break
                    if it == max_iter:
                        ok = 0
                        break
                    if it > 0:
                        self._aug(xn0, xn1, t1, u1, g, J, True, &s)
                    m00 = 1.0 - hh * J[0]
                    m01 = -hh * J[1]
                    m10 = -hh * J[2]
                    m11 = 1.0 - hh * J[3]
                    det = m00 * m11 - m01 * m10
                    if fabs(det) < 1e-14:
                        fail = k
                        break
                    xn0 = xn0 - (m11 * r0 - m01 * r1) / det
                    xn1 = xn1 - (m00 * r1 - m10 * r0) / det
                    it = it + 1
                if fail >= 0:
                    break
                iters[k] = it
                resid[k] = res
                x0 = xn0
                x1 = xn1
                g00 = g[0]
                g01 = g[1]
                out[k + 1, 0] = x0
                out[k + 1, 1] = x1
        free(s.h0)
        return (n if fail < 0 else fail + 1), bool(ok), fail
