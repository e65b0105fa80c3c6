#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything the decoder accepts must re-encode to the identical bytes:
    // the format is self-delimiting with no redundant encodings.
    if let Ok(traj) = datastore::trajectory::decode(data) {
        assert_eq!(traj.encode(), data, "decode/encode is not the identity");
    }
});
