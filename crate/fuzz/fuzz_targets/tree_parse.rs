#![no_main]
use libfuzzer_sys::fuzz_target;

use commqr::ReductionTree;

fuzz_target!(|data: &[u8]| {
    let Some((&p, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let p = usize::from(p % 64) + 1;
    if let Ok(t) = ReductionTree::parse(text, p) {
        t.validate().expect("parsed trees are valid");
        let again = ReductionTree::parse(&t.to_string(), p).expect("display re-parses");
        assert_eq!(again, t);
        let _ = t.critical_path_length();
    }
});
