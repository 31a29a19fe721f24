use commqr::matrix::gaussian;
use commqr::tsqr::{plan_ooc, tsqr_factor_ooc};
use commqr::{Backend, BlockStore, Error, MachineModel};

#[test]
fn file_store_reopens_with_same_contents() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.blk");
    let a = gaussian(37, 4, 11);
    let s = BlockStore::create(&a, 8, &Backend::File(path.clone())).unwrap();
    assert_eq!(s.padding(), 3);
    drop(s);
    let mut back = BlockStore::open(&path).unwrap();
    assert_eq!(back.m(), 37);
    assert_eq!(back.to_matrix().unwrap(), a);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(
        BlockStore::from_bytes(&bytes).unwrap().to_matrix().unwrap(),
        a
    );
}

#[test]
fn truncated_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.blk");
    BlockStore::create(&gaussian(32, 4, 1), 8, &Backend::File(path.clone())).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 7, 20, bytes.len() - 8] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(BlockStore::open(&path).is_err(), "cut at {cut}");
    }
    assert!(matches!(
        BlockStore::open(&dir.path().join("missing")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn file_and_memory_backends_count_the_same() {
    let dir = tempfile::tempdir().unwrap();
    let (m, n, w) = (300, 6, 200);
    let plan = plan_ooc(m, n, w).unwrap();
    let a = gaussian(m, n, 4);
    let mut mem = BlockStore::create(&a, plan.block_rows, &Backend::Memory).unwrap();
    let mut file = BlockStore::create(
        &a,
        plan.block_rows,
        &Backend::File(dir.path().join("a.blk")),
    )
    .unwrap();
    let (_, r1, c1) = tsqr_factor_ooc(&mut mem, w, &MachineModel::unit()).unwrap();
    let (_, r2, c2) = tsqr_factor_ooc(&mut file, w, &MachineModel::unit()).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(c1.comm, c2.comm);
}
