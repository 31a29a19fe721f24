#![no_main]
use libfuzzer_sys::fuzz_target;

use commqr::MachineModel;

fuzz_target!(|data: &str| {
    let _ = MachineModel::from_config(data);
});
