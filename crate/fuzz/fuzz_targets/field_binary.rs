#![no_main]

use libfuzzer_sys::fuzz_target;
use stackelberg_heat::io::{decode_field, decode_series, encode_values, FieldSidecar};

// Input layout: sidecar JSON, a zero byte, then the raw payload.
fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|b| *b == 0) else {
        return;
    };
    let Ok(text) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let Ok(sidecar) = FieldSidecar::from_json(text) else {
        return;
    };
    let payload = &data[split + 1..];
    if let Ok(field) = decode_field(payload, &sidecar) {
        assert_eq!(encode_values(field.values()), payload);
    }
    if let Ok(series) = decode_series(payload, &sidecar) {
        assert_eq!(series.steps(), sidecar.frames);
    }
});
