/* matvec: generated by mdh for system model Artificial2+1 */
#include <stdint.h>
#include <stdlib.h>
#include <stdio.h>
#include <math.h>
#ifdef _OPENMP
#include <omp.h>
#endif

#define MDH_APPLY(m, args) m args

/* ---- preparation: sizes and partitioning ---- */
#define N_1 INT64_C(512)
#define N_2 INT64_C(4096)
#define P_1_1 INT64_C(2)
#define P_1_2 INT64_C(4)
#define P_2_1 INT64_C(8)
#define P_2_2 INT64_C(16)
#define P_3_1 INT64_C(32)
#define P_3_2 INT64_C(64)
#define S_1_1 INT64_C(256)
#define S_2_1 INT64_C(32)
#define S_3_1 INT64_C(1)
#define S_1_2 INT64_C(1024)
#define S_2_2 INT64_C(64)
#define S_3_2 INT64_C(1)
#define I_1 (p_1_1*S_1_1 + p_2_1*S_2_1 + p_3_1*S_3_1)
#define I_2 (p_1_2*S_1_2 + p_2_2*S_2_2 + p_3_2*S_3_2)
#define NLEAF INT64_C(2097152)
#define LEAF ((I_1)*N_2 + I_2)
#define NOUT INT64_C(512)
#define OUT (I_1)
#define NSLOT INT64_C(16)
#define SLOT (p_2_2)

static inline int64_t mdh_abs_i64(int64_t a) { return a < 0 ? -a : a; }
static inline int64_t mdh_min_i64(int64_t a, int64_t b) { return a < b ? a : b; }
static inline int64_t mdh_max_i64(int64_t a, int64_t b) { return a > b ? a : b; }
static inline double mdh_min_f64(double a, double b) { return a < b ? a : b; }
static inline double mdh_max_f64(double a, double b) { return a > b ? a : b; }

/* scalar function */
static inline void mdh_f(const int64_t in_M_0, const int64_t in_v_0, const int64_t i_1, const int64_t i_2, int64_t *out_0) {
    (void)i_1;
    (void)i_2;
    *out_0 = (in_M_0 * in_v_0);  /* w[0] */
}

/* combine operator +: a := a (+) b */
static inline void mdh_combine(int64_t *a_0, const int64_t b_0) {
    *a_0 = *a_0 + b_0;
}

/* ---- index functions, layouts and MDA aliases ---- */
#define g_M_N1 INT64_C(512)
#define g_M_N2 INT64_C(4096)
#define g_M_AT(c1,c2) g_M[((c1))*g_M_N2 + (c2)]
#define IDX_M_0(i1,i2) (((i1)), ((i2)))
#define g_v_N1 INT64_C(4096)
#define g_v_AT(c1) g_v[(c1)]
#define IDX_v_0(i1,i2) (((i2)))
#define g_w_N1 INT64_C(512)
#define g_w_AT(c1) g_w[(c1)]
#define IDX_w_0(i1,i2) (((i1)))
#define s_v_N1 INT64_C(4096)
/* v: staged in L1 with layout [1], 4096 of 4096 cells after size reduction */
#define s_v_AT(c1) s_v[(((c1) - (0)) / 1)]
#define MDA_M_0 (MDH_APPLY(g_M_AT, IDX_M_0(I_1,I_2)))
#define MDA_v_0 (MDH_APPLY(s_v_AT, IDX_v_0(I_1,I_2)))

/* ---- kernel ---- */
void mdh_kernel(const int64_t *restrict g_M, const int64_t *restrict g_v, int64_t *restrict g_w) {
    /* fused prefix: 6 levels; separate nests: none */
    /* BUF v at level (1, 1) (de) changes region or layout; host memory backs every region here */
    /* BUF w at level (1, 2) (re) changes region or layout; host memory backs every region here */
    int64_t *s_v = (int64_t *)malloc(sizeof(int64_t) * INT64_C(4096));
    for (int64_t r1 = 0; r1 < s_v_N1; ++r1) {
        s_v_AT((0 + 1*r1)) = g_v_AT((0 + 1*r1));
    }
    int64_t *acc_0 = (int64_t *)malloc(sizeof(int64_t) * NOUT * NSLOT);
    unsigned char *has = (unsigned char *)calloc((size_t)(NOUT * NSLOT), 1);
    /* ---- de-composition, scalar and re-composition ---- */
    {
        for (int64_t p_1_1 = 0; p_1_1 < P_1_1; ++p_1_1) {  /* (HM,1) */
            for (int64_t p_1_2 = 0; p_1_2 < P_1_2; ++p_1_2) {  /* (HM,2) */
                #pragma omp parallel for
                for (int64_t p_2_1 = 0; p_2_1 < P_2_1; ++p_2_1) {  /* (COR,1) */
                    for (int64_t p_2_2 = 0; p_2_2 < P_2_2; ++p_2_2) {  /* (COR,2) */
                        for (int64_t p_3_1 = 0; p_3_1 < P_3_1; ++p_3_1) {  /* (L1,1) */
                            for (int64_t p_3_2 = 0; p_3_2 < P_3_2; ++p_3_2) {  /* (L1,2) */
                                {
                                    int64_t r_0;
                                    mdh_f(MDA_M_0, MDA_v_0, I_1, I_2, &r_0);
                                    const int64_t at = OUT * NSLOT + SLOT;
                                    if (!has[at]) {
                                        acc_0[at] = r_0;
                                        has[at] = 1;
                                    }
                                    else mdh_combine(&acc_0[at], r_0);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    /* ---- reduction merge: per-slot accumulators combined in slot order ---- */
    int64_t *res_0 = (int64_t *)malloc(sizeof(int64_t) * NOUT);
    for (int64_t o = 0; o < NOUT; ++o) {
        int first = 1;
        for (int64_t s = 0; s < NSLOT; ++s) {
            const int64_t at = o * NSLOT + s;
            if (!has[at]) continue;
            if (first) {
                res_0[o] = acc_0[at];
                first = 0;
            }
            else mdh_combine(&res_0[o], acc_0[at]);
        }
    }
    /* output view */
    for (int64_t o = 0; o < NOUT; ++o) {
        const int64_t o_1 = (o / INT64_C(1)) % INT64_C(512);
        (void)o_1;
        const int64_t o_2 = (o / INT64_C(1)) % INT64_C(1);
        (void)o_2;
        MDH_APPLY(g_w_AT, IDX_w_0(o_1,o_2)) = res_0[o];
    }
    free(res_0);
    free(s_v);
    free(acc_0);
    free(has);
}

