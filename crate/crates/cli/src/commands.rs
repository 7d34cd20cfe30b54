use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use featcodec::boosting::{rank_dexels, read_pairs_csv, synth_planted_pairs, write_pairs_csv, DexelRanking, PlantedPairsConfig};
use featcodec::bovw::{
    aggregate_sequence, build_global, decode_global_stream, encode_global_stream, learn_dictionary, quantize_global,
    train_bovw_codebooks, Dictionary, DictionaryConfig, GlobalDescriptor, InterBovwCodebook,
    IntraBovwCodebook,
};
use featcodec::codebook::{Codebook, Section, SectionKind};
use featcodec::eval::{
    evaluate_retrieval, homography_precision, prepare_retrieval, prepare_with_dictionary, run_rate_efficiency,
    synth_planar, synth_retrieval, write_relevance, write_sweep_csv, Aggregation, GroundTruth, HomographyEvalConfig,
    PlanarConfig, QueryCoding, RansacConfig, RetrievalSynthConfig, SweepConfig,
};
use featcodec::feature::{
    read_stream, read_stream_json, synth_stream, write_stream, write_stream_json, BinaryDescriptor, FeatureStream,
    SynthConfig,
};
use featcodec::local::{
    decode_local_stream, encode_local_stream, train_local_codebook, EncoderConfig, LocalCodebook, LocalCodec,
    LocalTrainingConfig, SearchWindow,
};

use crate::{
    AggregationArg, BovwDecodeArgs, BovwEncodeArgs, CliError, Command, DecodeArgs, DictLearnArgs, EncodeArgs,
    EvalHomographyArgs, EvalRetrievalArgs, GlobalMode, RankArgs, RetrievalArgs, SweepArgs, SynthArgs, SynthKind,
    TrainBovwArgs, TrainLocalArgs, WindowArgs, CODEBOOK_DIR_ENV,
};

type Outcome = Result<(), CliError>;

pub fn init_threads(jobs: usize) -> Outcome {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    if jobs > 1 {
        eprintln!("note: built without parallel support; --jobs {jobs} runs sequentially");
    }
    Ok(())
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Synth(a) => synth(a),
        Command::RankDexels(a) => rank(a),
        Command::TrainLocal(a) => train_local(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::DictLearn(a) => dict_learn(a),
        Command::TrainBovw(a) => train_bovw(a),
        Command::BovwEncode(a) => bovw_encode(a),
        Command::BovwDecode(a) => bovw_decode(a),
        Command::EvalHomography(a) => eval_homography(a),
        Command::EvalRetrieval(a) => eval_retrieval(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn read_features(path: &Path) -> Result<FeatureStream, CliError> {
    let stream = if is_json(path) { read_stream_json(path) } else { read_stream(path) };
    stream.map_err(|e| with_path(e, path))
}

fn write_features(stream: &FeatureStream, path: &Path) -> Result<u64, CliError> {
    let written = if is_json(path) { write_stream_json(stream, path) } else { write_stream(stream, path) };
    written.map_err(|e| with_path(e, path))
}

/// Puts the file name into i/o messages so the single error line says which
/// file failed.
fn with_path(e: featcodec::Error, path: &Path) -> CliError {
    match e {
        featcodec::Error::Io(io) => CliError::Data(featcodec::Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        ))),
        other => CliError::Data(other),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| with_path(e.into(), path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| with_path(e.into(), path))
}

fn resolve(explicit: Option<PathBuf>, dir: Option<&Path>, name: impl FnOnce() -> Option<String>, flag: &str) -> Result<PathBuf, CliError> {
    if let Some(p) = explicit {
        return Ok(p);
    }
    match (dir, name()) {
        (Some(d), Some(n)) => Ok(d.join(n)),
        _ => Err(CliError::Usage(format!("pass {flag} or set {CODEBOOK_DIR_ENV}"))),
    }
}

fn read_codebook(path: &Path) -> Result<Codebook, CliError> {
    Codebook::read(path).map_err(|e| with_path(e, path))
}

fn load_local(path: &Path) -> Result<Arc<LocalCodebook>, CliError> {
    Ok(Arc::new(LocalCodebook::from_codebook(&read_codebook(path)?)?))
}

fn load_bovw(path: &Path) -> Result<(IntraBovwCodebook, Option<InterBovwCodebook>), CliError> {
    let cb = read_codebook(path)?;
    let intra = match cb.find(SectionKind::IntraBovw) {
        Some(Section::IntraBovw(c)) => c.clone(),
        _ => {
            return Err(CliError::Data(featcodec::Error::Config(format!(
                "{} has no BoVW intra section",
                path.display()
            ))))
        }
    };
    let inter = match cb.find(SectionKind::InterBovw) {
        Some(Section::InterBovw(c)) => Some(c.clone()),
        _ => None,
    };
    Ok((intra, inter))
}

fn load_selection(path: &Path) -> Result<DexelRanking, CliError> {
    match read_codebook(path)?.find(SectionKind::DexelSelection) {
        Some(Section::DexelSelection { ranking, .. }) => Ok(ranking.clone()),
        _ => Err(CliError::Data(featcodec::Error::Config(format!(
            "{} has no dexel selection section",
            path.display()
        )))),
    }
}

fn window(w: &WindowArgs) -> SearchWindow {
    SearchWindow {
        dx: w.window_dx,
        dy: w.window_dy,
        dscale: w.window_dscale,
    }
}

fn synth(a: SynthArgs) -> Outcome {
    match a.kind {
        SynthKind::Stream => {
            let defaults = SynthConfig::default();
            let cfg = SynthConfig {
                descriptor_length: a.descriptor_length,
                frames: a.frames,
                min_features: a.min_features,
                max_features: a.max_features,
                duplication: a.duplication,
                flip_probability: a.flip.unwrap_or(defaults.flip_probability),
                width: a.width,
                height: a.height,
                seed: a.seed,
                ..defaults
            };
            let stream = synth_stream(&cfg)?;
            let bytes = write_features(&stream, &a.out)?;
            println!(
                "wrote {} frames, {} features ({bytes} bytes) to {}",
                stream.frames.len(),
                stream.feature_count(),
                a.out.display()
            );
        }
        SynthKind::Pairs => {
            let cfg = PlantedPairsConfig {
                descriptor_length: a.descriptor_length,
                planted: a.planted,
                pairs: a.pairs,
                planted_flip: a.planted_flip,
                seed: a.seed,
                ..PlantedPairsConfig::default()
            };
            let (pairs, planted) = synth_planted_pairs(&cfg)?;
            write_pairs_csv(&pairs, &a.out).map_err(|e| with_path(e, &a.out))?;
            println!("wrote {} pairs to {}; planted dexels {planted:?}", pairs.len(), a.out.display());
        }
        SynthKind::Planar => {
            let truth_path = a
                .truth
                .ok_or_else(|| CliError::Usage("--kind planar needs --truth <FILE>".into()))?;
            let defaults = PlanarConfig::default();
            let cfg = PlanarConfig {
                descriptor_length: a.descriptor_length,
                frames: a.frames,
                inliers: a.inliers,
                outlier_fraction: a.outlier_fraction,
                noise: a.noise,
                flip_probability: a.flip.unwrap_or(defaults.flip_probability),
                width: a.width,
                height: a.height,
                seed: a.seed,
            };
            let seq = synth_planar(&cfg)?;
            write_features(&seq.stream, &a.out)?;
            seq.truth.write_csv(&truth_path).map_err(|e| with_path(e, &truth_path))?;
            println!(
                "wrote {} frames ({} features each) to {}, ground truth to {}",
                seq.stream.frames.len(),
                cfg.inliers + cfg.outliers(),
                a.out.display(),
                truth_path.display()
            );
        }
    }
    Ok(())
}

fn rank(a: RankArgs) -> Outcome {
    let pairs = read_pairs_csv(&a.pairs, a.descriptor_length).map_err(|e| with_path(e, &a.pairs))?;
    let rounds = a.rounds.unwrap_or(a.descriptor_length);
    let ranking = rank_dexels(&pairs, rounds, a.asymmetry)?;
    let head: Vec<usize> = ranking.order.iter().copied().take(16).collect();
    Codebook::new(vec![Section::DexelSelection {
        descriptor_length: a.descriptor_length,
        ranking,
    }])
    .write(&a.out)
    .map_err(|e| with_path(e, &a.out))?;
    println!("ranked {rounds} dexels from {} pairs; first {head:?}", pairs.len());
    Ok(())
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<FeatureStream>, CliError> {
    paths.iter().map(|p| read_features(p)).collect()
}

fn train_local(a: TrainLocalArgs) -> Outcome {
    let out = resolve(a.out, a.codebook_dir.as_deref(), || Some(format!("local-k{}.bfcb", a.k)), "--out")?;
    let streams = read_all(&a.train)?;
    let p = streams[0].descriptor_length;
    let selection = match &a.selection {
        Some(path) => load_selection(path)?,
        None => DexelRanking::identity(p),
    };
    let cfg = LocalTrainingConfig {
        k: a.k,
        window: window(&a.window),
        selection,
        lambda: a.lambda,
        passes: a.passes,
    };
    let book = train_local_codebook(&streams, &cfg)?;
    let bytes = book.to_codebook().write(&out).map_err(|e| with_path(e, &out))?;
    let features: usize = streams.iter().map(FeatureStream::feature_count).sum();
    println!("trained K = {} on {features} features; wrote {bytes} bytes to {}", a.k, out.display());
    Ok(())
}

fn encode(a: EncodeArgs) -> Outcome {
    let path = resolve(a.codebook, a.codebook_dir.as_deref(), || Some(format!("local-k{}.bfcb", a.k)), "--codebook")?;
    let book = load_local(&path)?;
    let stream = read_features(&a.stream)?;
    let cfg = EncoderConfig {
        lambda: a.lambda,
        window: window(&a.window),
        mode: a.mode,
        ..EncoderConfig::new(a.k)
    };
    let codec = LocalCodec::new(book, cfg)?;
    let (bytes, rate) = encode_local_stream(&codec, &stream)?;
    write_bytes(&a.out, &bytes)?;
    println!(
        "encoded {} frames, {} features in {} mode: {:.2} bits/feature (descriptor {:.2}, location {:.2}), {:.1}% inter, {} bytes",
        rate.frames.len(),
        rate.feature_count(),
        a.mode,
        rate.bits_per_feature(),
        rate.mean_bits(|f| f.descriptor_bits),
        rate.mean_bits(|f| f.location_bits),
        100.0 * rate.inter_fraction(),
        bytes.len()
    );
    Ok(())
}

fn decode(a: DecodeArgs) -> Outcome {
    let path = resolve(a.codebook, a.codebook_dir.as_deref(), || a.k.map(|k| format!("local-k{k}.bfcb")), "--codebook (or --k)")?;
    let book = load_local(&path)?;
    let stream = decode_local_stream(&read_bytes(&a.input)?, book)?;
    write_features(&stream, &a.out)?;
    println!(
        "decoded {} frames, {} features of {} dexels to {}",
        stream.frames.len(),
        stream.feature_count(),
        stream.descriptor_length,
        a.out.display()
    );
    Ok(())
}

fn dict_learn(a: DictLearnArgs) -> Outcome {
    let streams = read_all(&a.train)?;
    let sample: Vec<BinaryDescriptor> = streams.iter().flat_map(|s| s.descriptors().cloned()).collect();
    let cfg = DictionaryConfig {
        max_iterations: a.max_iterations,
        ..DictionaryConfig::new(a.words, a.method, a.seed)
    };
    let learned = learn_dictionary(&sample, &cfg)?;
    let mut dict = learned.dictionary;
    let frames: Vec<_> = streams.iter().flat_map(|s| s.frames.iter().cloned()).collect();
    dict.compute_idf(&frames)?;
    dict.write(&a.out).map_err(|e| with_path(e, &a.out))?;
    println!(
        "learned {} words from {} descriptors: total distortion {:.1} after {} iterations, {}",
        a.words,
        sample.len(),
        learned.distortion.last().copied().unwrap_or(0.0),
        learned.distortion.len(),
        if learned.converged { "converged" } else { "iteration cap reached" }
    );
    Ok(())
}

fn globals(stream: &FeatureStream, dict: &Dictionary) -> Result<Vec<GlobalDescriptor>, CliError> {
    Ok(stream
        .frames
        .iter()
        .map(|f| build_global(f.descriptors(), dict))
        .collect::<featcodec::Result<_>>()?)
}

fn read_dictionary(path: &Path) -> Result<Dictionary, CliError> {
    Dictionary::read(path).map_err(|e| with_path(e, path))
}

fn train_bovw(a: TrainBovwArgs) -> Outcome {
    let out = resolve(a.out, a.codebook_dir.as_deref(), || Some("bovw.bfcb".into()), "--out")?;
    let dict = read_dictionary(&a.dict)?;
    let sequences = read_all(&a.train)?
        .iter()
        .map(|s| globals(s, &dict))
        .collect::<Result<Vec<_>, _>>()?;
    let (intra, inter) = train_bovw_codebooks(&sequences, a.delta)?;
    let bytes = Codebook::new(vec![Section::IntraBovw(intra), Section::InterBovw(inter)])
        .write(&out)
        .map_err(|e| with_path(e, &out))?;
    let frames: usize = sequences.iter().map(Vec::len).sum();
    println!("trained delta = {} on {frames} frames; wrote {bytes} bytes to {}", a.delta, out.display());
    Ok(())
}

fn bovw_encode(a: BovwEncodeArgs) -> Outcome {
    if a.gop == 0 {
        return Err(CliError::Usage("--gop must be at least 1".into()));
    }
    let path = resolve(a.codebook, a.codebook_dir.as_deref(), || Some("bovw.bfcb".into()), "--codebook")?;
    let (intra, inter) = load_bovw(&path)?;
    if let Some(d) = a.delta.filter(|&d| d != intra.delta) {
        return Err(CliError::Usage(format!(
            "--delta {d} differs from the codebook step {}; retrain with train-bovw",
            intra.delta
        )));
    }
    let inter = match a.mode {
        GlobalMode::Intra => None,
        GlobalMode::Inter => Some(inter.ok_or_else(|| {
            CliError::Data(featcodec::Error::Config(format!("{} has no BoVW inter section", path.display())))
        })?),
    };
    let dict = read_dictionary(&a.dict)?;
    let stream = read_features(&a.stream)?;
    let sent = aggregate_sequence(&globals(&stream, &dict)?, a.gop, a.strategy)?;
    let quantized = sent
        .iter()
        .map(|g| quantize_global(g, intra.delta))
        .collect::<featcodec::Result<Vec<_>>>()?;
    let (bytes, rate) = encode_global_stream(&quantized, &intra, inter.as_ref())?;
    write_bytes(&a.out, &bytes)?;
    println!(
        "encoded {} global descriptors from {} frames: {:.2} bytes/query, {} bytes",
        quantized.len(),
        stream.frames.len(),
        rate.bytes_per_query(),
        bytes.len()
    );
    Ok(())
}

fn bovw_decode(a: BovwDecodeArgs) -> Outcome {
    let path = resolve(a.codebook, a.codebook_dir.as_deref(), || Some("bovw.bfcb".into()), "--codebook")?;
    let (intra, inter) = load_bovw(&path)?;
    let frames = decode_global_stream(&read_bytes(&a.input)?, &intra, inter.as_ref())?;
    let mut out = BufWriter::new(File::create(&a.out).map_err(|e| with_path(e.into(), &a.out))?);
    let header: Vec<String> = (0..intra.words).map(|j| format!("w{j}")).collect();
    writeln!(out, "frame,{}", header.join(","))?;
    for (n, q) in frames.iter().enumerate() {
        let values: Vec<String> = q.dequantize().values.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{n},{}", values.join(","))?;
    }
    out.flush()?;
    println!("decoded {} global descriptors to {}", frames.len(), a.out.display());
    Ok(())
}

fn eval_homography(a: EvalHomographyArgs) -> Outcome {
    let stream = read_features(&a.stream)?;
    let truth = GroundTruth::read_csv(&a.truth).map_err(|e| with_path(e, &a.truth))?;
    let cfg = HomographyEvalConfig {
        ratio: a.ratio,
        ransac: RansacConfig {
            iterations: a.iterations,
            threshold: a.threshold,
            seed: a.seed,
        },
        epsilon: a.epsilon,
    };
    let report = homography_precision(&stream, &truth, &cfg)?;
    if let Some(path) = &a.errors {
        let mut out = BufWriter::new(File::create(path).map_err(|e| with_path(e.into(), path))?);
        writeln!(out, "pair,error")?;
        for (n, e) in report.errors.iter().enumerate() {
            writeln!(out, "{n},{}", e.map(|v| v.to_string()).unwrap_or_default())?;
        }
        out.flush()?;
    }
    println!(
        "precision {:.4} ({}/{} pairs within {} px)",
        report.precision(),
        report.correct(),
        report.errors.len(),
        a.epsilon
    );
    Ok(())
}

fn retrieval_config(r: &RetrievalArgs, seed: u64) -> RetrievalSynthConfig {
    RetrievalSynthConfig {
        descriptor_length: r.descriptor_length,
        images: r.images,
        clusters: r.clusters,
        query_frames: r.query_frames,
        seed,
        ..RetrievalSynthConfig::default()
    }
}

fn eval_retrieval(a: EvalRetrievalArgs) -> Outcome {
    let data = synth_retrieval(&retrieval_config(&a.data, a.seed))?;
    let setup = match &a.dict {
        Some(path) => prepare_with_dictionary(&data, read_dictionary(path)?)?,
        None => prepare_retrieval(&data, a.data.words, a.data.method, a.seed)?,
    };
    let coding = QueryCoding {
        delta: a.delta,
        inter: a.inter,
        gop: a.gop,
        strategy: a.strategy,
        aggregation: match a.aggregation {
            AggregationArg::PerFrame => Aggregation::PerFrame,
            AggregationArg::MedianRank => Aggregation::MedianRank,
        },
        top_k: a.top_k,
        rerank: a.rerank,
        ratio: a.ratio,
    };
    let report = evaluate_retrieval(&setup, &coding)?;
    if let Some(path) = &a.per_query {
        let mut out = BufWriter::new(File::create(path).map_err(|e| with_path(e.into(), path))?);
        writeln!(out, "query,ap")?;
        for (id, ap) in &report.per_query {
            writeln!(out, "{id},{ap}")?;
        }
        out.flush()?;
    }
    if let Some(path) = &a.relevance_out {
        write_relevance(&data.relevance(), path).map_err(|e| with_path(e, path))?;
    }
    println!(
        "MAP {:.4} over {} queries, {:.2} bytes/query",
        report.map,
        report.per_query.len(),
        report.bytes_per_query
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Outcome {
    let mut cfg = SweepConfig::new(a.grid);
    cfg.seed = a.seed;
    cfg.mode = a.mode;
    cfg.lambda = a.lambda;
    cfg.planar.frames = a.frames;
    cfg.selection = a.selection.as_deref().map(load_selection).transpose()?;
    cfg.codebook_dir = a.codebook_dir;
    cfg.retrieval = retrieval_config(&a.retrieval, a.seed);
    cfg.words = a.retrieval.words;
    cfg.method = a.retrieval.method;
    cfg.coding.delta = Some(a.delta);
    cfg.coding.strategy = a.strategy;
    cfg.coding.inter = a.inter;
    let rows = run_rate_efficiency(&cfg)?;
    let file = File::create(&a.out).map_err(|e| with_path(e.into(), &a.out))?;
    write_sweep_csv(&rows, BufWriter::new(file))?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}
