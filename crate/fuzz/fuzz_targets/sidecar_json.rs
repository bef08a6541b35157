#![no_main]

use libfuzzer_sys::fuzz_target;
use stackelberg_heat::io::FieldSidecar;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sidecar) = FieldSidecar::from_json(text) {
        let grid = sidecar.grid().expect("accepted sidecar has a grid");
        assert_eq!(grid.points_per_axis(), sidecar.n);
        let back = FieldSidecar::from_json(&sidecar.to_json().unwrap()).unwrap();
        assert_eq!(back, sidecar);
    }
});
