use std::collections::hash_map::RandomState;
use std::hash::BuildHasher;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fpclass_core::baseline::{extract_feature_vector, write_feature_csv, FeatureConfig};
use fpclass_core::checkpoint::{dataset_digest, load_model, save_model, TrainingMetadata};
use fpclass_core::classifier::{init_network, CnnClassifier, KnnPipeline};
use fpclass_core::evaluation::{
    rejection_rate, robustness_protocol, stratified_kfold, Classifier, ConfusionMatrix, EvaluationReport,
    Prediction, PriorGroups,
};
use fpclass_core::io::{read_dataset, DatasetWriter, MANIFEST};
use fpclass_core::optimizer::{train_with_progress, Sample, SgdConfig};
use fpclass_core::synthgen::{
    assign_classes, generate_fingers, FingerprintDataset, FingerprintRecord, GeneratorConfig, HenryClass,
    QualityPreset,
};
use fpclass_core::topology::{build_caffenet_variant, build_proposed, NetworkTopology};

use crate::{
    ClassifierKind, EvalArgs, Failure, GenerateArgs, ImageSize, Net, NetArgs, RobustnessArgs, TrainArgs,
};

/// Fingers rendered per batch while generating; bounds memory use.
const GENERATE_CHUNK: usize = 64;

fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let s = RandomState::new().hash_one(std::process::id());
            println!("seed: {s} (drawn; pass --seed {s} to reproduce)");
            s
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn load(data: &Path) -> Result<FingerprintDataset, Failure> {
    if !data.join(MANIFEST).is_file() {
        return Err(usage(format!("no {MANIFEST} in {}", data.display())));
    }
    let ds = read_dataset(data)?;
    if ds.records.is_empty() {
        return Err(usage(format!(
            "{} lists no images",
            data.join(MANIFEST).display()
        )));
    }
    Ok(ds)
}

fn histogram_lines(hist: &[usize; 5]) -> String {
    let total: usize = hist.iter().sum();
    HenryClass::ALL
        .iter()
        .zip(hist)
        .map(|(c, &n)| {
            format!(
                "  {} {:>7} ({:5.1}%)\n",
                c.code(),
                n,
                100.0 * n as f64 / total.max(1) as f64
            )
        })
        .collect()
}

pub fn generate(a: GenerateArgs) -> Result<(), Failure> {
    if a.fingers == 0 || a.impressions == 0 {
        return Err(usage("--fingers and --impressions must be positive"));
    }
    let seed = resolve_seed(a.seed);
    let config = match a.size {
        ImageSize::Full => GeneratorConfig::full(),
        ImageSize::Desk => GeneratorConfig::desk(),
    };
    let preset = if a.no_perturbation {
        QualityPreset::none(a.quality)
    } else {
        QualityPreset::of(a.quality)
    };
    let classes = assign_classes(a.fingers, a.distribution, seed);
    let ids: Vec<u32> = (1..=a.fingers as u32).collect();
    let mut writer = DatasetWriter::create(&a.out)?;
    let mut hist = [0usize; 5];
    for chunk in ids.chunks(GENERATE_CHUNK) {
        for (truth, records) in generate_fingers(chunk, &classes, a.impressions, &preset, seed, &config)? {
            hist[truth.class.index()] += 1;
            for r in &records {
                writer.write(r)?;
            }
        }
    }
    writer.finish()?;
    println!(
        "wrote {} fingers x {} impressions ({}x{}, quality {}) to {}",
        a.fingers,
        a.impressions,
        config.width,
        config.height,
        a.quality.name(),
        a.out.display()
    );
    println!("seed: {seed}");
    print!("class histogram (fingers):\n{}", histogram_lines(&hist));
    Ok(())
}

fn parse_input(s: &str) -> Result<(usize, usize), Failure> {
    let bad = || usage(format!("--input must look like HxW, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((
        h.trim().parse().map_err(|_| bad())?,
        w.trim().parse().map_err(|_| bad())?,
    ))
}

fn topology(net: &NetArgs, ds: &FingerprintDataset) -> Result<NetworkTopology, Failure> {
    let base = match net.net {
        Net::Caffenet => build_caffenet_variant(net.scale)?,
        Net::Proposed => build_proposed(net.scale)?,
    };
    let (h, w) = match &net.input {
        Some(s) => parse_input(s)?,
        None => {
            let s = ds.records[0].image.shape();
            (s[1], s[2])
        }
    };
    Ok(base.with_input(1, h, w)?)
}

pub(crate) fn sgd_config(net: &NetArgs, seed: u64) -> SgdConfig {
    let mut c = match net.net {
        Net::Caffenet => SgdConfig::caffenet(),
        Net::Proposed => SgdConfig::proposed(),
    };
    if let Some(i) = net.iters {
        c = c.with_iterations(i);
    }
    c.batch_size = net.batch.unwrap_or(c.batch_size);
    c.base_lr = net.lr.unwrap_or(c.base_lr);
    c.momentum = net.momentum.unwrap_or(c.momentum);
    c.gamma = net.gamma.unwrap_or(c.gamma);
    c.step_size = net.step.unwrap_or(c.step_size);
    c.weight_decay = net.weight_decay.unwrap_or(c.weight_decay);
    c.seed = seed;
    c
}

fn net_name(net: Net) -> &'static str {
    match net {
        Net::Caffenet => "caffenet",
        Net::Proposed => "proposed",
    }
}

fn describe(t: &NetworkTopology) -> String {
    let [c, h, w] = t.input;
    format!("{c}x{h}x{w}")
}

fn with_sgd(report: EvaluationReport, c: &SgdConfig) -> EvaluationReport {
    report
        .setting("iterations", c.iterations)
        .setting("batch_size", c.batch_size)
        .setting("base_lr", c.base_lr)
        .setting("momentum", c.momentum)
        .setting("gamma", c.gamma)
        .setting("step_size", c.step_size)
        .setting("weight_decay", c.weight_decay)
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let ds = load(&a.data)?;
    let seed = resolve_seed(a.seed);
    let topo = topology(&a.net, &ds)?;
    let config = sgd_config(&a.net, seed);
    config.validate()?;
    let mut net = init_network(&topo, seed)?;
    let samples: Vec<Sample<'_>> = ds.records.iter().map(|r| (&r.image, r.class.index())).collect();
    let every = (config.iterations / 20).max(1);
    let clock = Instant::now();
    let trace = train_with_progress(&mut net, &samples, &config, |it, lr, loss| {
        if it % every == 0 || it + 1 == config.iterations {
            eprintln!("iter {:>6}  lr {lr:.3e}  loss {loss:.5}", it + 1);
        }
    })?;
    let seconds = clock.elapsed().as_secs_f64();
    let meta = TrainingMetadata {
        seed,
        iterations: config.iterations as u64,
        dataset_digest: dataset_digest(&ds.records),
    };
    save_model(&a.out, &net, &meta)?;
    let loss_path = a.loss_csv.unwrap_or_else(|| suffixed(&a.out, ".loss.csv"));
    std::fs::write(&loss_path, trace.to_csv()).map_err(|e| Failure::Core(io_err(&loss_path, e)))?;
    println!("seed: {seed}");
    println!(
        "topology: {} scale {} input {}",
        net_name(a.net.net),
        a.net.scale,
        describe(&topo)
    );
    println!("parameters: {}", topo.param_count()?.total);
    println!(
        "sgd: iterations {} batch {} lr {} momentum {} gamma {} step {} weight_decay {}",
        config.iterations,
        config.batch_size,
        config.base_lr,
        config.momentum,
        config.gamma,
        config.step_size,
        config.weight_decay
    );
    println!("mean offset: {}", net.topology().mean_offset);
    if let Some((head, tail)) = trace.head_tail_means(0.1) {
        println!("loss: first 10% {head:.5}, last 10% {tail:.5}");
    }
    println!("dataset digest: {}", meta.digest_hex());
    println!("checkpoint: {}", a.out.display());
    println!("loss trace: {}", loss_path.display());
    println!("runtime.train_seconds: {seconds:.3}");
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn io_err(path: &Path, e: std::io::Error) -> fpclass_core::Error {
    fpclass_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn emit(report: &EvaluationReport, out: Option<&Path>) -> Result<(), Failure> {
    let text = report.to_text()?;
    print!("{text}");
    if let Some(prefix) = out {
        for (suffix, body) in [(".txt", text), (".csv", report.to_csv()?)] {
            let p = suffixed(prefix, suffix);
            std::fs::write(&p, body).map_err(|e| Failure::Core(io_err(&p, e)))?;
        }
    }
    Ok(())
}

fn make_classifier(
    kind: ClassifierKind,
    k: usize,
    net: &NetArgs,
    ds: &FingerprintDataset,
    seed: u64,
) -> Result<(Box<dyn Classifier>, EvaluationReport), Failure> {
    let report = EvaluationReport::new(ConfusionMatrix::default());
    Ok(match kind {
        ClassifierKind::Cnn => {
            let topo = topology(net, ds)?;
            let config = sgd_config(net, seed);
            config.validate()?;
            let report = report
                .setting("classifier", "cnn")
                .setting("topology", net_name(net.net))
                .setting("scale", net.scale)
                .setting("input", describe(&topo));
            (
                Box::new(CnnClassifier::new(topo, config)),
                with_sgd(report, &config),
            )
        }
        ClassifierKind::Knn => {
            if k == 0 {
                return Err(usage("--k must be positive"));
            }
            let fc = FeatureConfig::for_width(ds.records[0].image.shape()[2]);
            let report = report
                .setting("classifier", "knn")
                .setting("k", k)
                .setting("block_size", fc.block_size)
                .setting("coherence_threshold", fc.coherence_threshold);
            (Box::new(KnnPipeline::new(fc, k)), report)
        }
    })
}

fn quality_of(ds: &FingerprintDataset) -> String {
    let mut names: Vec<&str> = ds.records.iter().map(|r| r.quality.name()).collect();
    names.sort_unstable();
    names.dedup();
    names.join("+")
}

fn confusion_of(records: &[&FingerprintRecord], preds: &[Prediction]) -> Result<ConfusionMatrix, Failure> {
    let (t, p): (Vec<HenryClass>, Vec<HenryClass>) = records
        .iter()
        .zip(preds)
        .filter_map(|(r, p)| p.class().map(|c| (r.class, c)))
        .unzip();
    Ok(ConfusionMatrix::from_labels(&t, &p)?)
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    if let Some(m) = &a.model {
        if !m.is_file() {
            return Err(usage(format!("model file {} not found", m.display())));
        }
    }
    let ds = load(&a.data)?;
    let mut report = match (&a.model, a.cv) {
        (Some(model), _) => {
            let (net, meta) = load_model(model)?;
            let all: Vec<&FingerprintRecord> = ds.records.iter().collect();
            let topo = net.topology().clone();
            let clf = CnnClassifier::from_network(net, SgdConfig::proposed());
            let clock = Instant::now();
            let preds = clf.predict_all(&all)?;
            let test_seconds = clock.elapsed().as_secs_f64();
            let mut r = EvaluationReport::new(confusion_of(&all, &preds)?)
                .setting("command", "eval")
                .setting("data", a.data.display())
                .setting("quality", quality_of(&ds))
                .setting("model", model.display())
                .setting("input", describe(&topo))
                .setting("seed", meta.seed)
                .setting("iterations", meta.iterations)
                .setting("training_digest", meta.digest_hex());
            r.rejection_rate = rejection_rate(&preds);
            r.test_seconds = test_seconds;
            r
        }
        (None, Some(k)) => {
            let seed = resolve_seed(a.seed);
            let folds = stratified_kfold(&ds.records, k, seed)?;
            let (mut clf, template) = make_classifier(a.classifier, a.k, &a.net, &ds, seed)?;
            let mut total = ConfusionMatrix::default();
            let mut all_preds = Vec::new();
            let (mut train_s, mut test_s) = (0.0, 0.0);
            let mut fold_acc = Vec::new();
            for (i, fold) in folds.iter().enumerate() {
                let train: Vec<&FingerprintRecord> = fold.train.iter().map(|&j| &ds.records[j]).collect();
                let test: Vec<&FingerprintRecord> = fold.test.iter().map(|&j| &ds.records[j]).collect();
                let clock = Instant::now();
                clf.fit(&train)?;
                train_s += clock.elapsed().as_secs_f64();
                let clock = Instant::now();
                let preds = clf.predict_all(&test)?;
                test_s += clock.elapsed().as_secs_f64();
                let m = confusion_of(&test, &preds)?;
                eprintln!("fold {}/{k}: accuracy {:.4}", i + 1, m.accuracy());
                fold_acc.push(m.accuracy());
                total.add(&m);
                all_preds.extend(preds);
            }
            let mut r = EvaluationReport {
                confusion: total,
                ..template
            };
            let mut settings = vec![
                ("command".to_string(), "eval".to_string()),
                ("data".to_string(), a.data.display().to_string()),
                ("quality".to_string(), quality_of(&ds)),
                ("seed".to_string(), seed.to_string()),
                ("folds".to_string(), k.to_string()),
            ];
            settings.append(&mut r.settings);
            r.settings = settings;
            r.fold_accuracies = fold_acc;
            r.rejection_rate = rejection_rate(&all_preds);
            r.train_seconds = train_s;
            r.test_seconds = test_s;
            r
        }
        (None, None) => return Err(usage("eval needs --cv K or --model PATH")),
    };
    if report.confusion.total() == 0 {
        return Err(usage("every record was rejected; nothing to report"));
    }
    report
        .extra
        .push(("penetration_formula".into(), "1 - q_i (1 - p_i)".into()));
    emit(&report, a.out.as_deref())
}

pub fn robustness(a: RobustnessArgs) -> Result<(), Failure> {
    let ds = load(&a.data)?;
    let seed = resolve_seed(a.seed);
    let templates: Vec<&FingerprintRecord> = ds.impression(1).collect();
    let inputs: Vec<&FingerprintRecord> = ds.records.iter().filter(|r| r.impression_id != 1).collect();
    if inputs.is_empty() {
        return Err(Failure::Core(fpclass_core::Error::Protocol(
            "robustness needs at least two impressions per finger".into(),
        )));
    }
    let (mut clf, template) = make_classifier(a.classifier, a.k, &a.net, &ds, seed)?;
    if let (Some(path), ClassifierKind::Knn) = (&a.features_csv, a.classifier) {
        let fc = FeatureConfig::for_width(ds.records[0].image.shape()[2]);
        let ex: Vec<_> = ds
            .records
            .iter()
            .map(|r| extract_feature_vector(&r.image, &fc))
            .collect::<Result<_, _>>()?;
        let rows: Vec<_> = ds.records.iter().zip(&ex).collect();
        let file = std::fs::File::create(path).map_err(|e| Failure::Core(io_err(path, e)))?;
        write_feature_csv(file, &rows, &fc)?;
    }
    let groups = if a.manual_priors {
        PriorGroups::Manual
    } else {
        PriorGroups::Relabeled
    };
    let rr = robustness_protocol(&templates, &inputs, clf.as_mut(), groups)?;
    let mut r = EvaluationReport {
        confusion: rr.confusion,
        ..template
    };
    let mut settings = vec![
        ("command".to_string(), "robustness".to_string()),
        ("data".to_string(), a.data.display().to_string()),
        ("quality".to_string(), quality_of(&ds)),
        ("seed".to_string(), seed.to_string()),
        ("templates".to_string(), "impression 1".to_string()),
        (
            "prior_groups".to_string(),
            if a.manual_priors { "manual" } else { "relabeled" }.to_string(),
        ),
    ];
    settings.append(&mut r.settings);
    r.settings = settings;
    r.rejection_rate = rr.rejection_rate;
    r.train_seconds = rr.train_seconds;
    r.test_seconds = rr.test_seconds;
    r.extra = vec![
        (
            "relabeled".into(),
            format!("{} fingers changed", rr.relabeled_changes),
        ),
        ("fingers".into(), rr.fingers_total.to_string()),
        ("fingers_excluded".into(), rr.fingers_excluded.to_string()),
        ("robustness_accuracy".into(), format!("{:.6}", rr.accuracy)),
        (
            "robustness_penetration_rate".into(),
            format!("{:.6}", rr.penetration_rate),
        ),
    ];
    emit(&r, a.out.as_deref())
}
