//! Dense reference computations checked against the structured kernels.

use commqr::caqr::{caqr_sequential, SeqLayout};
use commqr::householder::{
    apply_compact, apply_q, explicit_q, form_t, house, qr_stacked_triangles, qr_unblocked,
    update_pair,
};
use commqr::matrix::{gaussian, generate_conditioned};
use commqr::tsqr::{tsqr_apply, tsqr_explicit_q, tsqr_factor};
use commqr::{make_tree, Backend, BlockStore, DenseMatrix, FlopCounter, MachineModel, TreeShape};

/// Singular values by one-sided Jacobi rotations on the columns.
fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    let mut u = a.clone();
    let n = u.cols();
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..u.rows() {
                    alpha += u[(i, p)] * u[(i, p)];
                    beta += u[(i, q)] * u[(i, q)];
                    gamma += u[(i, p)] * u[(i, q)];
                }
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..u.rows() {
                    let (x, y) = (u[(i, p)], u[(i, q)]);
                    u[(i, p)] = c * x - s * y;
                    u[(i, q)] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut s: Vec<f64> = (0..n)
        .map(|j| u.col(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn reflector(v: &[f64], tau: f64) -> DenseMatrix {
    let m = v.len();
    DenseMatrix::from_fn(m, m, |i, j| f64::from(u8::from(i == j)) - tau * v[i] * v[j])
}

/// `Q` as the product of dense reflectors.
fn dense_q(y: &DenseMatrix, tau: &[f64]) -> DenseMatrix {
    let m = y.rows();
    let mut q = DenseMatrix::identity(m);
    for (j, &t) in tau.iter().enumerate() {
        q = q.matmul(&reflector(y.col(j), t)).unwrap();
    }
    q
}

fn upper(seed: u64, n: usize) -> DenseMatrix {
    qr_unblocked(&gaussian(n + 3, n, seed), &mut FlopCounter::default())
        .unwrap()
        .r
}

#[test]
fn generated_condition_number_matches_svd() {
    for (kappa, seed) in [(1e2, 1), (1e5, 2), (1e8, 3)] {
        let a = generate_conditioned(80, 12, kappa, seed).unwrap();
        let s = singular_values(&a);
        let got = s[0] / s[s.len() - 1];
        assert!((got / kappa - 1.0).abs() < 1e-6, "{kappa}: {got}");
        assert!((s[0] - 1.0).abs() < 1e-10);
    }
}

#[test]
fn house_zeroes_the_tail() {
    for w in [
        vec![3.0, 4.0],
        vec![-1.0, 2.0, -2.0],
        vec![0.0, 1.0],
        vec![-5.0, 0.0, 0.0],
        vec![2.0, 0.0],
    ] {
        let (v, tau) = house(&w);
        let h = reflector(&v, tau);
        let hw = h
            .matmul(&DenseMatrix::from_col_major(w.len(), 1, w.clone()).unwrap())
            .unwrap();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let want_sign = if w[0] >= 0.0 { -1.0 } else { 1.0 };
        let tail_zero = w[1..].iter().all(|x| *x == 0.0);
        if !(tail_zero && w[0] >= 0.0) {
            assert!((hw[(0, 0)] - want_sign * norm).abs() < 1e-14, "{w:?}");
        }
        for i in 1..w.len() {
            assert!(hw[(i, 0)].abs() < 1e-14, "{w:?}");
        }
        let hth = h.tmatmul(&h).unwrap();
        assert!(hth.max_abs_diff(&DenseMatrix::identity(w.len())) < 1e-14);
    }
}

#[test]
fn apply_matches_dense_reflector_product() {
    let a = gaussian(30, 7, 5);
    let f = qr_unblocked(&a, &mut FlopCounter::default()).unwrap();
    let q = dense_q(&f.y, &f.tau);
    let c = gaussian(30, 4, 6);
    let mut fc = FlopCounter::default();
    let qt_c = apply_q(&f, &c, true, &mut fc).unwrap();
    let want = q.tmatmul(&c).unwrap();
    assert!(qt_c.max_abs_diff(&want) < 1e-13);
    let q_c = apply_q(&f, &c, false, &mut fc).unwrap();
    assert!(q_c.max_abs_diff(&q.matmul(&c).unwrap()) < 1e-13);
    // QᵀA = [R; 0]
    let qt_a = q.tmatmul(&a).unwrap();
    assert!(qt_a.submatrix(0, 0, 7, 7).max_abs_diff(&f.r) < 1e-13);
    assert!(qt_a.submatrix(7, 0, 23, 7).max_abs() < 1e-13);
}

#[test]
fn compact_form_matches_reflectors() {
    let a = gaussian(40, 9, 7);
    let f = qr_unblocked(&a, &mut FlopCounter::default()).unwrap();
    let mut fc = FlopCounter::default();
    let t = form_t(&f, &mut fc);
    let c = gaussian(40, 5, 8);
    for transpose in [false, true] {
        let mut got = c.clone();
        apply_compact(&f, &t, &mut got, transpose, &mut fc).unwrap();
        let want = apply_q(&f, &c, transpose, &mut fc).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-13, "transpose={transpose}");
    }
}

#[test]
fn stacked_triangles_match_dense_qr() {
    let blocks: Vec<DenseMatrix> = (0..4).map(|s| upper(10 + s, 6)).collect();
    let refs: Vec<&DenseMatrix> = blocks.iter().collect();
    let f = qr_stacked_triangles(&refs, &mut FlopCounter::default()).unwrap();
    let stacked = DenseMatrix::vstack(&refs).unwrap();
    let mut want = qr_unblocked(&stacked, &mut FlopCounter::default())
        .unwrap()
        .r;
    let mut got = f.r.clone();
    want.sign_normalize_rows();
    got.sign_normalize_rows();
    assert!(got.max_abs_diff(&want) < 1e-13);
    let q = dense_q(&f.y, &f.tau);
    let qr = q.submatrix(0, 0, 24, 6).matmul(&f.r).unwrap();
    assert!(qr.max_abs_diff(&stacked) < 1e-13);
}

#[test]
fn pair_update_matches_dense_apply() {
    let n = 5;
    let (r0, r1) = (upper(1, n), upper(2, n));
    let f = qr_stacked_triangles(&[&r0, &r1], &mut FlopCounter::default()).unwrap();
    let (c0, c1) = (gaussian(n, 3, 3), gaussian(n, 3, 4));
    let (d0, d1) = update_pair(
        &f.lower_triangle_block(),
        &f.tau,
        &c0,
        &c1,
        &mut FlopCounter::default(),
    )
    .unwrap();
    let q = dense_q(&f.y, &f.tau);
    let want = q
        .tmatmul(&DenseMatrix::vstack(&[&c0, &c1]).unwrap())
        .unwrap();
    assert!(d0.max_abs_diff(&want.submatrix(0, 0, n, 3)) < 1e-13);
    assert!(d1.max_abs_diff(&want.submatrix(n, 0, n, 3)) < 1e-13);
}

#[test]
fn tsqr_apply_matches_explicit_q() {
    let a = gaussian(120, 6, 9);
    let m = MachineModel::unit();
    for shape in [TreeShape::Flat, TreeShape::Binary, TreeShape::Qary(3)] {
        let tree = make_tree(&shape, 5).unwrap();
        let (tq, r, _) = tsqr_factor(&a, 5, &tree, &m).unwrap();
        let q = tsqr_explicit_q(&tq).unwrap();
        assert!(q.matmul(&r).unwrap().max_abs_diff(&a) < 1e-13 * a.frobenius_norm());
        let c = gaussian(120, 3, 10);
        let (qt_c, _) = tsqr_apply(&tq, &c, true, &m).unwrap();
        // the first n rows of the root block hold Q's part of QᵀC
        let want = q.tmatmul(&c).unwrap();
        let root = tq.row_starts[tq.tree.root()];
        assert!(
            qt_c.submatrix(root, 0, 6, 3).max_abs_diff(&want) < 1e-13,
            "{shape:?}"
        );
    }
}

#[test]
fn sequential_caqr_q_times_r_is_a() {
    let a = gaussian(96, 48, 12);
    let l = SeqLayout::new(96, 48, 24, 12).unwrap();
    let mut s = BlockStore::create_2d(&a, l.block_rows, l.pc(), &Backend::Memory).unwrap();
    let (r, mut f, _) = caqr_sequential(&mut s, l.peak_words(), &MachineModel::unit()).unwrap();
    let q = f.explicit_q().unwrap();
    assert!(q.matmul(&r).unwrap().max_abs_diff(&a) < 1e-12 * a.frobenius_norm());
    let qt_a = f.apply(&a, true).unwrap();
    assert!(qt_a.submatrix(0, 0, 48, 48).max_abs_diff(&r) < 1e-12 * a.frobenius_norm());
    assert!(qt_a.submatrix(48, 0, 48, 48).max_abs() < 1e-12 * a.frobenius_norm());
}

#[test]
fn unblocked_q_is_dense_householder_q() {
    let a = gaussian(20, 20, 13);
    let f = qr_unblocked(&a, &mut FlopCounter::default()).unwrap();
    let q = explicit_q(&f);
    assert!(q.max_abs_diff(&dense_q(&f.y, &f.tau)) < 1e-13);
}
