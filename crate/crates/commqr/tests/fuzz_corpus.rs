//! Replays the fuzz seed corpus through the decoders.

use std::fs;
use std::path::PathBuf;

use commqr::store::Header;
use commqr::{BlockStore, DenseMatrix, MachineModel, ReductionTree};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

#[test]
fn matrix_csv_seeds() {
    let mut ok = 0;
    for (_, bytes) in seeds("matrix_csv") {
        if let Ok(a) = DenseMatrix::from_csv(&String::from_utf8_lossy(&bytes)) {
            let back = DenseMatrix::from_csv(&a.to_csv()).unwrap();
            assert_eq!((back.rows(), back.cols()), (a.rows(), a.cols()));
            ok += 1;
        }
    }
    assert_eq!(ok, 2);
}

#[test]
fn tree_parse_seeds() {
    for (name, bytes) in seeds("tree_parse") {
        let p = usize::from(bytes[0] % 64) + 1;
        let parsed = ReductionTree::parse(&String::from_utf8_lossy(&bytes[1..]), p);
        assert_eq!(parsed.is_ok(), name != "dead_survivor", "{name}");
        if let Ok(t) = parsed {
            assert_eq!(ReductionTree::parse(&t.to_string(), p).unwrap(), t);
        }
    }
}

#[test]
fn store_decode_seeds() {
    for (name, bytes) in seeds("store_decode") {
        let good = !matches!(name.as_str(), "truncated" | "huge_dims");
        assert!(Header::decode(&bytes).is_ok());
        let s = BlockStore::from_bytes(&bytes);
        assert_eq!(s.is_ok(), good, "{name}");
        if let Ok(mut s) = s {
            s.to_matrix().unwrap();
        }
    }
}

#[test]
fn machine_config_seeds() {
    for (name, bytes) in seeds("machine_config") {
        let r = MachineModel::from_config(&String::from_utf8_lossy(&bytes));
        assert_eq!(r.is_ok(), name == "cluster", "{name}");
    }
}
