use featcodec::bovw::{
    aggregate_sequence, build_global, decode_global_stream, encode_global_stream, learn_dictionary,
    quantize_global, train_bovw_codebooks, ClusterMethod, Dictionary, DictionaryConfig, GlobalDescriptor,
    GopStrategy,
};
use featcodec::feature::{synth_stream, BinaryDescriptor, FeatureStream, SynthConfig};

fn stream(seed: u64) -> FeatureStream {
    synth_stream(&SynthConfig {
        descriptor_length: 64,
        frames: 12,
        min_features: 30,
        max_features: 40,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn dictionary() -> Dictionary {
    let s = stream(1);
    let sample: Vec<BinaryDescriptor> = s.descriptors().cloned().collect();
    let learned = learn_dictionary(&sample, &DictionaryConfig::new(16, ClusterMethod::KMedians, 4)).unwrap();
    let mut dict = learned.dictionary;
    dict.compute_idf(&s.frames).unwrap();
    dict
}

fn globals(dict: &Dictionary, s: &FeatureStream) -> Vec<GlobalDescriptor> {
    s.frames.iter().map(|f| build_global(f.descriptors(), dict).unwrap()).collect()
}

#[test]
fn dictionary_file_round_trip() {
    let dict = dictionary();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dict.bfdc");
    dict.write(&path).unwrap();
    assert_eq!(Dictionary::read(&path).unwrap(), dict);
}

#[test]
fn global_stream_round_trip_both_modes() {
    let dict = dictionary();
    let train = globals(&dict, &stream(2));
    let (intra, inter) = train_bovw_codebooks(&[train], 0.05).unwrap();
    let test: Vec<_> = globals(&dict, &stream(3))
        .iter()
        .map(|g| quantize_global(g, 0.05).unwrap())
        .collect();
    let (bytes, rate) = encode_global_stream(&test, &intra, None).unwrap();
    assert_eq!(decode_global_stream(&bytes, &intra, None).unwrap(), test);
    assert_eq!(rate.frame_bits.len(), test.len());
    let (bytes, _) = encode_global_stream(&test, &intra, Some(&inter)).unwrap();
    assert_eq!(decode_global_stream(&bytes, &intra, Some(&inter)).unwrap(), test);
}

#[test]
fn larger_gop_sends_fewer_descriptors() {
    let dict = dictionary();
    let g = globals(&dict, &stream(4));
    let counts: Vec<usize> = [1, 2, 4, 12]
        .iter()
        .map(|&gop| aggregate_sequence(&g, gop, GopStrategy::Skip).unwrap().len())
        .collect();
    assert_eq!(counts, vec![12, 6, 3, 1]);
    let median = aggregate_sequence(&g, 4, GopStrategy::Median).unwrap();
    assert!(median.iter().all(|m| (m.norm() - 1.0).abs() < 1e-9 || m.norm() == 0.0));
}
