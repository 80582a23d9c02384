#![no_main]

use libfuzzer_sys::fuzz_target;
use orfel::store::{ingest, Schema};

// First byte picks the separator and header flag; the rest is the edge list.
fuzz_target!(|data: &[u8]| {
    let Some((&flags, text)) = data.split_first() else {
        return;
    };
    let schema = Schema {
        separator: [',', '\t', ';', ' '][(flags & 3) as usize],
        has_header: flags & 4 != 0,
        ..Schema::default()
    };
    let Ok(out) = ingest(text, &schema) else {
        return;
    };
    let r = &out.report;
    assert_eq!(r.accepted + r.rejected + r.duplicates, r.lines);
    assert_eq!(r.accepted, out.edges.edges.len());
    assert!(r.rejected * 10 <= r.lines);
    for e in &out.edges.edges {
        assert!((e.user as usize) < out.edges.num_users());
        assert!((e.product as usize) < out.edges.num_products());
        assert_ne!(e.weight, 0);
    }
});
