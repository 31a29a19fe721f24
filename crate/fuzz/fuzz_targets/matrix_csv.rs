#![no_main]
use libfuzzer_sys::fuzz_target;

use commqr::DenseMatrix;

fuzz_target!(|data: &str| {
    if let Ok(a) = DenseMatrix::from_csv(data) {
        let back = DenseMatrix::from_csv(&a.to_csv()).expect("re-parse");
        assert_eq!(back.rows(), a.rows());
        assert_eq!(back.cols(), a.cols());
    }
});
