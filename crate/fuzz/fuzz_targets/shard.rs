#![no_main]

use libfuzzer_sys::fuzz_target;
use orfel::store::{decode_records, decode_shard, encode_shard, ShardHeader, HEADER_LEN, RECORD_LEN};

fuzz_target!(|data: &[u8]| {
    if let Ok((header, records)) = decode_shard(data) {
        assert_eq!(header.records as usize, records.len());
        assert_eq!(data.len(), HEADER_LEN + records.len() * RECORD_LEN);
        assert_eq!(encode_shard(&records), data);
    }
    if let Ok(header) = ShardHeader::decode(data) {
        assert_eq!(&header.encode()[..], &data[..HEADER_LEN]);
    }
    let mut out = Vec::new();
    if decode_records(data, 0, &mut out).is_ok() {
        assert_eq!(out.len() * RECORD_LEN, data.len());
    }
});
