/* Register-tiled dense product used by _kernels.pyx.
 *
 * out[i][j] = a(i,0)*b[0][j] + a(i,1)*b[1][j] + ... added strictly in order of
 * the contracted index, one rounding per product and one per addition.  This
 * is exactly what the numpy fallback computes, so the two agree bit for bit.
 * Build with -ffp-contract=off so products are never fused into the adds.
 * a(i,k) lives at a[i*a_rs + k*a_ks], which covers both A and A^T.
 *
 * Both operands are copied into zero-padded contiguous panels first.  Without
 * that, rows of B that sit a power-of-two stride apart all land in the same
 * few L1 sets and the kernel runs several times slower.  Padding only feeds
 * output cells that are never stored.
 */
#ifndef FGSF_GEMM_H
#define FGSF_GEMM_H

#include <stddef.h>
#include <stdlib.h>
#include <string.h>

#if defined(__AVX512F__)
#include <immintrin.h>

#define FGSF_TI 8
#define FGSF_TJ 8

/* ap: kdim x 8 panel of A, bp: kdim x 8 panel of B, t: 8 x 8 result */
static void fgsf_tile(const double *ap, const double *bp, double *t, ptrdiff_t kdim)
{
    __m512d b = _mm512_loadu_pd(bp);
    __m512d x0 = _mm512_mul_pd(_mm512_set1_pd(ap[0]), b);
    __m512d x1 = _mm512_mul_pd(_mm512_set1_pd(ap[1]), b);
    __m512d x2 = _mm512_mul_pd(_mm512_set1_pd(ap[2]), b);
    __m512d x3 = _mm512_mul_pd(_mm512_set1_pd(ap[3]), b);
    __m512d x4 = _mm512_mul_pd(_mm512_set1_pd(ap[4]), b);
    __m512d x5 = _mm512_mul_pd(_mm512_set1_pd(ap[5]), b);
    __m512d x6 = _mm512_mul_pd(_mm512_set1_pd(ap[6]), b);
    __m512d x7 = _mm512_mul_pd(_mm512_set1_pd(ap[7]), b);
    for (ptrdiff_t k = 1; k < kdim; ++k) {
        const double *ak = ap + FGSF_TI * k;
        b = _mm512_loadu_pd(bp + FGSF_TJ * k);
        x0 = _mm512_add_pd(x0, _mm512_mul_pd(_mm512_set1_pd(ak[0]), b));
        x1 = _mm512_add_pd(x1, _mm512_mul_pd(_mm512_set1_pd(ak[1]), b));
        x2 = _mm512_add_pd(x2, _mm512_mul_pd(_mm512_set1_pd(ak[2]), b));
        x3 = _mm512_add_pd(x3, _mm512_mul_pd(_mm512_set1_pd(ak[3]), b));
        x4 = _mm512_add_pd(x4, _mm512_mul_pd(_mm512_set1_pd(ak[4]), b));
        x5 = _mm512_add_pd(x5, _mm512_mul_pd(_mm512_set1_pd(ak[5]), b));
        x6 = _mm512_add_pd(x6, _mm512_mul_pd(_mm512_set1_pd(ak[6]), b));
        x7 = _mm512_add_pd(x7, _mm512_mul_pd(_mm512_set1_pd(ak[7]), b));
    }
    _mm512_storeu_pd(t, x0);
    _mm512_storeu_pd(t + 8, x1);
    _mm512_storeu_pd(t + 16, x2);
    _mm512_storeu_pd(t + 24, x3);
    _mm512_storeu_pd(t + 32, x4);
    _mm512_storeu_pd(t + 40, x5);
    _mm512_storeu_pd(t + 48, x6);
    _mm512_storeu_pd(t + 56, x7);
}

#elif defined(__AVX__)
#include <immintrin.h>

#define FGSF_TI 4
#define FGSF_TJ 8

/* ap: kdim x 4 panel of A, bp: kdim x 8 panel of B, t: 4 x 8 result */
static void fgsf_tile(const double *ap, const double *bp, double *t, ptrdiff_t kdim)
{
    __m256d b0 = _mm256_loadu_pd(bp), b1 = _mm256_loadu_pd(bp + 4), s;
    s = _mm256_broadcast_sd(ap);
    __m256d x0 = _mm256_mul_pd(s, b0), y0 = _mm256_mul_pd(s, b1);
    s = _mm256_broadcast_sd(ap + 1);
    __m256d x1 = _mm256_mul_pd(s, b0), y1 = _mm256_mul_pd(s, b1);
    s = _mm256_broadcast_sd(ap + 2);
    __m256d x2 = _mm256_mul_pd(s, b0), y2 = _mm256_mul_pd(s, b1);
    s = _mm256_broadcast_sd(ap + 3);
    __m256d x3 = _mm256_mul_pd(s, b0), y3 = _mm256_mul_pd(s, b1);
    for (ptrdiff_t k = 1; k < kdim; ++k) {
        const double *ak = ap + FGSF_TI * k;
        b0 = _mm256_loadu_pd(bp + FGSF_TJ * k);
        b1 = _mm256_loadu_pd(bp + FGSF_TJ * k + 4);
        s = _mm256_broadcast_sd(ak);
        x0 = _mm256_add_pd(x0, _mm256_mul_pd(s, b0)); y0 = _mm256_add_pd(y0, _mm256_mul_pd(s, b1));
        s = _mm256_broadcast_sd(ak + 1);
        x1 = _mm256_add_pd(x1, _mm256_mul_pd(s, b0)); y1 = _mm256_add_pd(y1, _mm256_mul_pd(s, b1));
        s = _mm256_broadcast_sd(ak + 2);
        x2 = _mm256_add_pd(x2, _mm256_mul_pd(s, b0)); y2 = _mm256_add_pd(y2, _mm256_mul_pd(s, b1));
        s = _mm256_broadcast_sd(ak + 3);
        x3 = _mm256_add_pd(x3, _mm256_mul_pd(s, b0)); y3 = _mm256_add_pd(y3, _mm256_mul_pd(s, b1));
    }
    _mm256_storeu_pd(t, x0); _mm256_storeu_pd(t + 4, y0);
    _mm256_storeu_pd(t + 8, x1); _mm256_storeu_pd(t + 12, y1);
    _mm256_storeu_pd(t + 16, x2); _mm256_storeu_pd(t + 20, y2);
    _mm256_storeu_pd(t + 24, x3); _mm256_storeu_pd(t + 28, y3);
}

#else

#define FGSF_TI 4
#define FGSF_TJ 8

typedef double v2d __attribute__((vector_size(16), aligned(8)));

static void fgsf_tile(const double *ap, const double *bp, double *t, ptrdiff_t kdim)
{
    v2d acc[FGSF_TI][FGSF_TJ / 2];
    for (int r = 0; r < FGSF_TI; ++r)
        for (int c = 0; c < FGSF_TJ / 2; ++c) {
            v2d bv;
            memcpy(&bv, bp + 2 * c, sizeof bv);
            acc[r][c] = ap[r] * bv;
        }
    for (ptrdiff_t k = 1; k < kdim; ++k)
        for (int r = 0; r < FGSF_TI; ++r)
            for (int c = 0; c < FGSF_TJ / 2; ++c) {
                v2d bv;
                memcpy(&bv, bp + FGSF_TJ * k + 2 * c, sizeof bv);
                acc[r][c] = acc[r][c] + ap[FGSF_TI * k + r] * bv;
            }
    for (int r = 0; r < FGSF_TI; ++r)
        memcpy(t + r * FGSF_TJ, acc[r], FGSF_TJ * sizeof(double));
}

#endif

/* returns 0 on success, -1 if scratch memory could not be allocated */
static int fgsf_gemm(const double *a, ptrdiff_t a_rs, ptrdiff_t a_ks, const double *b, ptrdiff_t b_ks,
                     double *out, ptrdiff_t n, ptrdiff_t m, ptrdiff_t kdim)
{
    ptrdiff_t ni = (n + FGSF_TI - 1) / FGSF_TI;
    double *apack = calloc((size_t)(ni * kdim * FGSF_TI), sizeof(double));
    double *bpack = malloc((size_t)(kdim * FGSF_TJ) * sizeof(double));
    double tile[FGSF_TI * FGSF_TJ];
    if (!apack || !bpack) {
        free(apack);
        free(bpack);
        return -1;
    }
    for (ptrdiff_t i = 0; i < n; ++i) {
        double *dst = apack + (i / FGSF_TI) * kdim * FGSF_TI + (i % FGSF_TI);
        for (ptrdiff_t k = 0; k < kdim; ++k)
            dst[k * FGSF_TI] = a[i * a_rs + k * a_ks];
    }
    for (ptrdiff_t j = 0; j < m; j += FGSF_TJ) {
        ptrdiff_t cols = m - j < FGSF_TJ ? m - j : FGSF_TJ;
        for (ptrdiff_t k = 0; k < kdim; ++k) {
            double *dst = bpack + k * FGSF_TJ;
            memcpy(dst, b + k * b_ks + j, (size_t)cols * sizeof(double));
            for (ptrdiff_t c = cols; c < FGSF_TJ; ++c)
                dst[c] = 0.0;
        }
        for (ptrdiff_t it = 0; it < ni; ++it) {
            ptrdiff_t i = it * FGSF_TI;
            ptrdiff_t rows = n - i < FGSF_TI ? n - i : FGSF_TI;
            fgsf_tile(apack + it * kdim * FGSF_TI, bpack, tile, kdim);
            for (ptrdiff_t r = 0; r < rows; ++r)
                memcpy(out + (i + r) * m + j, tile + r * FGSF_TJ, (size_t)cols * sizeof(double));
        }
    }
    free(apack);
    free(bpack);
    return 0;
}

#endif
