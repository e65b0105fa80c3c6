#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // The checkpoint reader must reject arbitrary bytes without panicking
    // or allocating unbounded memory.
    let _ = tensorcore::checkpoint::decode(data);
});
