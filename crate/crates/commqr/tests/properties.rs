use proptest::prelude::*;

use commqr::caqr::{caqr_parallel_sim, caqr_sequential, GridLayout, SeqLayout};
use commqr::householder::qr_unblocked;
use commqr::matrix::gaussian;
use commqr::model::{evaluate, Algorithm, ModelParams};
use commqr::store::Header;
use commqr::tsqr::{plan_ooc, tsqr_apply_ooc, tsqr_factor, tsqr_factor_ooc};
use commqr::{
    make_tree, Backend, BlockStore, DenseMatrix, FlopCounter, MachineModel, ReductionTree,
    TreeShape,
};

fn normalized(mut r: DenseMatrix) -> DenseMatrix {
    r.sign_normalize_rows();
    r
}

fn reference_r(a: &DenseMatrix) -> DenseMatrix {
    normalized(qr_unblocked(a, &mut FlopCounter::default()).unwrap().r)
}

fn shape() -> impl Strategy<Value = TreeShape> {
    prop_oneof![
        Just(TreeShape::Flat),
        Just(TreeShape::Binary),
        (2usize..6).prop_map(TreeShape::Qary),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn built_trees_validate(shape in shape(), p in 1usize..70) {
        let t = make_tree(&shape, p).unwrap();
        t.validate().unwrap();
        prop_assert_eq!(t.leaf_count(), p);
        let again = ReductionTree::parse(&t.to_string(), p).unwrap();
        prop_assert_eq!(&again, &t);
        match shape {
            TreeShape::Flat => prop_assert_eq!(t.critical_path_length(), p - 1),
            TreeShape::Binary => {
                prop_assert_eq!(t.critical_path_length(), p.next_power_of_two().trailing_zeros() as usize)
            }
            _ => {}
        }
    }

    #[test]
    fn tsqr_r_matches_householder(shape in shape(), p in 1usize..9, n in 1usize..7, extra in 0usize..20, seed in 0u64..1000) {
        let m = p * n + extra;
        let a = gaussian(m, n, seed);
        let tree = make_tree(&shape, p).unwrap();
        let (_, r, _) = tsqr_factor(&a, p, &tree, &MachineModel::unit()).unwrap();
        prop_assert!(normalized(r).max_abs_diff(&reference_r(&a)) <= 1e-12 * a.frobenius_norm());
    }

    #[test]
    fn binary_tsqr_counts_are_exact(l in 0u32..7, n in 1usize..9, seed in 0u64..100) {
        let p = 1usize << l;
        let a = gaussian(p * n, n, seed);
        let tree = make_tree(&TreeShape::Binary, p).unwrap();
        let (_, _, rep) = tsqr_factor(&a, p, &tree, &MachineModel::power5()).unwrap();
        let w = (n * (n + 1) / 2) as u64;
        prop_assert_eq!(rep.comm.messages, u64::from(l));
        prop_assert_eq!(rep.comm.words, u64::from(l) * w);
    }

    #[test]
    fn factorizations_are_deterministic(seed in 0u64..1000) {
        let a = gaussian(64, 5, seed);
        let tree = make_tree(&TreeShape::Binary, 4).unwrap();
        let m = MachineModel::peta();
        let (_, r1, c1) = tsqr_factor(&a, 4, &tree, &m).unwrap();
        let (_, r2, c2) = tsqr_factor(&a, 4, &tree, &m).unwrap();
        prop_assert_eq!(r1, r2);
        prop_assert_eq!(c1, c2);
        prop_assert_eq!(gaussian(64, 5, seed), a);
    }

    #[test]
    fn ooc_counters_match_model(n in 1usize..9, m_mul in 1usize..40, extra_w in 0usize..600) {
        let m = n * m_mul + 3;
        let w = commqr::tsqr::ooc_min_fast_words(n) + extra_w;
        let plan = plan_ooc(m, n, w).unwrap();
        let a = gaussian(m, n, 1);
        let mut s = BlockStore::create(&a, plan.block_rows, &Backend::Memory).unwrap();
        let (mut q, r, rep) = tsqr_factor_ooc(&mut s, w, &MachineModel::unit()).unwrap();
        let rows = (plan.p * plan.block_rows) as f64;
        let model = evaluate(Algorithm::TsqrSeq, &ModelParams::new(rows, n as f64).with_p(plan.p as f64), &MachineModel::unit()).unwrap();
        prop_assert_eq!(rep.comm.messages as f64, model.messages);
        prop_assert_eq!(rep.comm.words as f64, model.words);
        prop_assert!(normalized(r).max_abs_diff(&reference_r(&a)) <= 1e-12 * a.frobenius_norm());

        let c = gaussian(m, 2, 2);
        let mut cs = BlockStore::create(&c, plan.block_rows, &Backend::Memory).unwrap();
        cs.clear_log();
        if let Ok(arep) = tsqr_apply_ooc(&mut q, &mut cs, true, w, &MachineModel::unit()) {
            prop_assert_eq!(arep.comm.messages, 3 * plan.p as u64);
        }
    }

    #[test]
    fn parallel_caqr_messages_match_model(lr in 0u32..3, lc in 0u32..3, bi in 0usize..3, extra in 0usize..9, seed in 0u64..50) {
        let (pr, pc) = (1usize << lr, 1usize << lc);
        let b = [2usize, 3, 4][bi];
        let n = b * pc * 2;
        let m = n.max(b * pr) + extra * pr;
        let layout = GridLayout::new(m, n, b, pr, pc).unwrap();
        let a = gaussian(m, n, seed);
        let (r, _, rep) = caqr_parallel_sim(&a, &layout, &MachineModel::power5()).unwrap();
        prop_assert_eq!(rep.comm.messages, layout.model_messages());
        let params = ModelParams::new(m as f64, n as f64).with_b(b as f64).with_grid(pr as f64, pc as f64);
        let model = evaluate(Algorithm::CaqrPar, &params, &MachineModel::power5()).unwrap();
        prop_assert_eq!(rep.comm.messages as f64, model.messages);
        prop_assert!(normalized(r).max_abs_diff(&reference_r(&a)) <= 1e-11 * a.frobenius_norm());
    }

    #[test]
    fn sequential_caqr_messages_match_model(nb in 2usize..6, pc in 1usize..4, ratio in 1usize..3, rows in 1usize..4, seed in 0u64..50) {
        let n = nb * pc;
        let mb = nb * ratio;
        let m = (n.div_ceil(mb) + rows) * mb;
        let l = SeqLayout::new(m, n, mb, nb).unwrap();
        let a = gaussian(m, n, seed);
        let mut s = BlockStore::create_2d(&a, mb, pc, &Backend::Memory).unwrap();
        s.clear_log();
        let (r, _, rep) = caqr_sequential(&mut s, l.peak_words(), &MachineModel::unit()).unwrap();
        prop_assert_eq!(rep.comm, l.transfers());
        let params = ModelParams::new(m as f64, n as f64).with_grid(l.pr() as f64, pc as f64);
        let model = evaluate(Algorithm::CaqrSeq, &params, &MachineModel::unit()).unwrap();
        prop_assert_eq!(rep.comm.messages as f64, model.messages);
        prop_assert!(normalized(r).max_abs_diff(&reference_r(&a)) <= 1e-11 * a.frobenius_norm());
    }

    #[test]
    fn store_bytes_roundtrip(m in 1usize..40, n in 1usize..6, br in 1usize..12) {
        prop_assume!(br <= m);
        let a = gaussian(m, n, 3);
        let mut s = BlockStore::create(&a, br, &Backend::Memory).unwrap();
        let bytes = s.to_bytes().unwrap();
        let mut back = BlockStore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_matrix().unwrap(), a);
    }

    #[test]
    fn decoders_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200), text in "\\PC{0,80}") {
        let _ = BlockStore::from_bytes(&bytes);
        let _ = Header::decode(&bytes);
        let _ = DenseMatrix::from_csv(&text);
        let _ = ReductionTree::parse(&text, 4);
        let _ = MachineModel::from_config(&text);
    }

    #[test]
    fn csv_roundtrip(r in 1usize..8, c in 1usize..8, seed in 0u64..100) {
        let a = gaussian(r, c, seed);
        prop_assert_eq!(DenseMatrix::from_csv(&a.to_csv()).unwrap(), a);
    }

    #[test]
    fn model_fractions_and_monotonicity(ln in 3.0f64..6.0, lp in 0u32..10, b in 1u32..40, scale in 1.0f64..10.0) {
        let n = 10f64.powf(ln);
        let p = 1u64 << lp;
        let pr = 1u64 << (lp / 2);
        let pc = p / pr;
        let params = ModelParams::new(n, n).with_p(p as f64).with_b(f64::from(b)).with_grid(pr as f64, pc as f64);
        let base = MachineModel::power5();
        for alg in [Algorithm::CaqrPar, Algorithm::Pdgeqrf] {
            let Ok(p0) = evaluate(alg, &params, &base) else { continue };
            let f = p0.fractions();
            prop_assert!((f.latency + f.bandwidth + f.compute - 1.0).abs() <= 1e-12);
            for k in 0..3 {
                let mut m = base.clone();
                match k {
                    0 => m.alpha *= scale,
                    1 => m.beta *= scale,
                    _ => m.gamma *= scale,
                }
                prop_assert!(evaluate(alg, &params, &m).unwrap().time >= p0.time);
            }
        }
    }
}
