use featcodec::feature::{
    decode_stream, encode_stream, read_stream, read_stream_json, synth_stream, write_stream, write_stream_json,
    SynthConfig,
};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        descriptor_length: 100,
        frames: 6,
        min_features: 3,
        max_features: 12,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn binary_and_json_files_agree() {
    let s = synth_stream(&small(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("s.bfs");
    let json = dir.path().join("s.json");
    let written = write_stream(&s, &bin).unwrap();
    assert_eq!(written, std::fs::metadata(&bin).unwrap().len());
    write_stream_json(&s, &json).unwrap();
    assert_eq!(read_stream(&bin).unwrap(), s);
    assert_eq!(read_stream_json(&json).unwrap(), s);
}

#[test]
fn truncation_is_rejected_except_before_metadata() {
    let s = synth_stream(&small(2)).unwrap();
    let bytes = encode_stream(&s).unwrap();
    let mut bare = s.clone();
    bare.metadata.clear();
    let frames_end = encode_stream(&bare).unwrap().len();
    for cut in 0..bytes.len() {
        match decode_stream(&bytes[..cut]) {
            // The metadata trailer is optional, so the frame section alone is valid.
            Ok(decoded) => assert!(cut == frames_end && decoded == bare, "prefix of {cut} bytes accepted"),
            Err(_) => assert_ne!(cut, frames_end),
        }
    }
}

#[test]
fn bad_magic_is_rejected() {
    let mut bytes = encode_stream(&synth_stream(&small(3)).unwrap()).unwrap();
    bytes[0] ^= 0xFF;
    assert!(decode_stream(&bytes).is_err());
}
