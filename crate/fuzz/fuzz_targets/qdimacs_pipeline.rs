#![no_main]

use libfuzzer_sys::fuzz_target;
use qbfchan::rational::integer;
use qbfchan::{build_channel, evaluate_qbf, optimal_bad_probability, parse_qdimacs, ChannelParams};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(f) = parse_qdimacs(text) else { return };
    if f.n() > 4 || f.m() > 4 {
        return;
    }
    let truth = evaluate_qbf(&f).unwrap().truth;
    let spec = build_channel(&f, ChannelParams::new(3, 5, None).unwrap());
    assert_eq!(spec.state_count(), 6 * f.m() * f.n() + 3);
    let (beta, _) = optimal_bad_probability(&spec).unwrap();
    assert_eq!(beta == integer(0), truth);
});
