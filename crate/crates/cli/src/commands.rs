use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::Parser;
use rayon::prelude::*;

use rfcaug_core::augment::{
    augment_batch, AugmentConfig, AugmentMode, Baseline, BatchTransform, Chain, ComposeOrder, CorruptionKind,
    CorruptionSpec, CorruptionTable, OnlineAugment,
};
use rfcaug_core::classifier::{self, ClassifierState, SgdSchedule};
use rfcaug_core::oodval::{self, OodRow, OodTable, ScoreSet};
use rfcaug_core::probe::{mean_amplitude, probe_table};
use rfcaug_core::spectral::{apply_mask, dft2, make_masks};
use rfcaug_core::tensorio::{self, encode_npy_u8};
use rfcaug_core::{Error, ImageTensor, LabeledDataset};

use crate::manifest::{self, Manifest};
use crate::{AugmentArgs, Cli, Command, CorruptArgs, EvalOodArgs, ProbeArgs, ReplayArgs, StatsArgs, TrainArgs};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Augment(a) => augment(&a),
        Command::Train(a) => train(&a),
        Command::Probe(a) => probe(&a),
        Command::EvalOod(a) => eval_ood(&a),
        Command::Corrupt(a) => corrupt(&a),
        Command::Stats(a) => stats(&a),
        Command::Replay(a) => replay(&a),
    }
}

fn is_npy(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("npy"))
}

fn load_labeled(path: &Path, class_count: usize) -> Result<LabeledDataset> {
    tensorio::load_cifar_binary(path, class_count).with_context(|| format!("loading {}", path.display()))
}

/// `.npy` files load unlabeled; anything else is read as CIFAR binary.
fn load_images(path: &Path, class_count: usize) -> Result<Vec<ImageTensor>> {
    if is_npy(path) {
        tensorio::load_npy_u8(path).with_context(|| format!("loading {}", path.display()))
    } else {
        Ok(load_labeled(path, class_count)?.into_images())
    }
}

fn load_model(path: &Path) -> Result<ClassifierState> {
    classifier::load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn check_model_dims(model: &ClassifierState, images: &[ImageTensor], what: &str) -> Result<()> {
    if let Some(img) = images.iter().find(|i| i.data().len() != model.input_dim()) {
        return Err(Error::Shape(format!(
            "model expects {} inputs but {what} has {:?} images",
            model.input_dim(),
            img.dims()
        ))
        .into());
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| anyhow!("bad {what} {s:?}")))
        .collect()
}

fn augment_mode(mode: &str, order: &str) -> Result<AugmentMode> {
    let order: ComposeOrder = order.parse()?;
    Ok(match mode.parse()? {
        AugmentMode::RfcApr(_) => AugmentMode::RfcApr(order),
        m => m,
    })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn finish(m: &Manifest, output: &Path, explicit: Option<&Path>) -> Result<()> {
    let path = manifest::default_path(output, explicit);
    m.write(&path)?;
    eprintln!("manifest: {}", path.display());
    Ok(())
}

fn augment(a: &AugmentArgs) -> Result<()> {
    let config = AugmentConfig {
        radius: a.radius,
        apply_probability: a.prob,
        mode: augment_mode(&a.mode, &a.order)?,
        seed: a.seed,
    };
    config.validate()?;
    let mut m = Manifest::new("augment");
    m.arg("input", a.input.display())
        .arg("output", a.output.display())
        .arg("class-count", a.class_count)
        .arg("radius", a.radius)
        .arg("mode", &a.mode)
        .arg("order", &a.order)
        .arg("prob", a.prob)
        .arg("seed", a.seed)
        .opt_arg("samples-dir", a.samples_dir.as_ref().map(|p| p.display()))
        .arg("sample-count", a.sample_count)
        .opt_arg("manifest", a.manifest.as_ref().map(|p| p.display()));
    m.input(&a.input)?;

    let dataset = load_labeled(&a.input, a.class_count)?;
    let out = augment_batch(&dataset, &config)?;
    tensorio::write_cifar_binary(&out, &a.output)?;
    m.output(&a.output)?;
    eprintln!("{} images in, {} out", dataset.len(), out.len());

    if let Some(dir) = &a.samples_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (k, img) in out.images()[dataset.len()..].iter().take(a.sample_count).enumerate() {
            let path = dir.join(format!("sample_{k:04}.ppm"));
            tensorio::write_ppm(img, &path)?;
            m.output(&path)?;
        }
    }
    finish(&m, &a.output, a.manifest.as_deref())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut schedule = SgdSchedule::scaled(a.epochs);
    if let Some(ms) = &a.milestones {
        schedule.milestone_epochs = parse_list(ms, "milestone")?;
    }
    schedule.base_lr = a.lr;
    schedule.decay_factor = a.decay;
    schedule.momentum = a.momentum;
    schedule.weight_decay = a.weight_decay;
    schedule.batch_size = a.batch_size;
    schedule.validate()?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.output.as_os_str().to_owned();
        s.push(".log.csv");
        PathBuf::from(s)
    });

    let mut m = Manifest::new("train");
    m.arg("train", a.train.display())
        .opt_arg("test", a.test.as_ref().map(|p| p.display()))
        .arg("output", a.output.display())
        .arg("log", log_path.display())
        .arg("class-count", a.class_count)
        .arg("hidden", a.hidden)
        .arg("epochs", a.epochs)
        .arg(
            "milestones",
            schedule
                .milestone_epochs
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        )
        .arg("lr", a.lr)
        .arg("decay", a.decay)
        .arg("momentum", a.momentum)
        .arg("weight-decay", a.weight_decay)
        .arg("batch-size", a.batch_size)
        .arg("seed", a.seed)
        .arg("augment", &a.augment)
        .arg("radius", a.radius)
        .arg("prob", a.prob)
        .arg("order", &a.order)
        .opt_arg("manifest", a.manifest.as_ref().map(|p| p.display()));
    m.input(&a.train)?;
    if let Some(t) = &a.test {
        m.input(t)?;
    }

    let train_set = load_labeled(&a.train, a.class_count)?;
    let first = train_set
        .images()
        .first()
        .ok_or_else(|| anyhow!("training set is empty"))?;
    let test_set = a.test.as_deref().map(|p| load_labeled(p, a.class_count)).transpose()?;
    let (h, w, c) = first.dims();
    let init = ClassifierState::init(h * w * c, a.hidden, a.class_count, a.seed)?;
    if let Some(t) = &test_set {
        check_model_dims(&init, t.images(), "the test set")?;
    }

    let baseline = Baseline::default();
    let online = |mode: AugmentMode| -> Result<Box<dyn BatchTransform + '_>> {
        let config = AugmentConfig {
            radius: a.radius,
            apply_probability: a.prob,
            mode,
            seed: 0,
        };
        config.validate()?;
        Ok(Box::new(Chain(vec![
            Box::new(baseline),
            Box::new(OnlineAugment {
                pool: &train_set,
                config,
            }),
        ])))
    };
    let hook: Option<Box<dyn BatchTransform + '_>> = match a.augment.as_str() {
        "none" => None,
        "baseline" => Some(Box::new(baseline)),
        mode => Some(online(augment_mode(mode, &a.order)?)?),
    };

    let outcome = classifier::train(init, &train_set, &schedule, hook.as_deref(), a.seed, test_set.as_ref())?;
    if let Some(last) = outcome.log.last() {
        eprintln!(
            "epoch {}: loss {:.4}, train acc {:.4}{}",
            last.epoch,
            last.loss,
            last.train_acc,
            last.test_acc.map(|t| format!(", test acc {t:.4}")).unwrap_or_default()
        );
    }
    classifier::save_model(&outcome.state, &a.output)?;
    write_file(&log_path, outcome.log_csv())?;
    m.output(&a.output)?;
    m.output(&log_path)?;
    finish(&m, &a.output, a.manifest.as_deref())
}

fn probe(a: &ProbeArgs) -> Result<()> {
    let radii: Vec<f64> = parse_list(&a.radii, "radius")?;
    let mut m = Manifest::new("probe");
    m.arg("model", a.model.display())
        .arg("test", a.test.display())
        .arg("output", a.output.display())
        .arg("class-count", a.class_count)
        .arg("radii", &a.radii)
        .opt_arg("mean-from", a.mean_from.as_ref().map(|p| p.display()))
        .arg("seed", a.seed)
        .opt_arg("manifest", a.manifest.as_ref().map(|p| p.display()));
    m.input(&a.model)?;
    m.input(&a.test)?;

    let model = load_model(&a.model)?;
    let test = load_labeled(&a.test, a.class_count)?;
    check_model_dims(&model, test.images(), "the test set")?;
    let mean = match &a.mean_from {
        Some(p) => {
            m.input(p)?;
            mean_amplitude(&load_images(p, a.class_count)?)?
        }
        None => mean_amplitude(test.images())?,
    };
    let table = probe_table(&model, &test, &radii, &mean)?;
    print!("{}", table.render_text());
    write_file(&a.output, table.to_csv())?;
    m.output(&a.output)?;
    finish(&m, &a.output, a.manifest.as_deref())
}

/// `name=path`, or a bare path named after its file stem.
fn named_path(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (name, path)
        }
    }
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    oodval::read_score_column(file).with_context(|| format!("reading {}", path.display()))
}

fn eval_ood(a: &EvalOodArgs) -> Result<()> {
    let mut m = Manifest::new("eval-ood");
    m.opt_arg("model", a.model.as_ref().map(|p| p.display()))
        .opt_arg("in", a.in_data.as_ref().map(|p| p.display()));
    for o in &a.ood {
        m.arg("ood", o);
    }
    m.opt_arg("in-scores", a.in_scores.as_ref().map(|p| p.display()));
    for o in &a.ood_scores {
        m.arg("ood-scores", o);
    }
    for s in &a.scores {
        m.arg("scores", s.display());
    }
    m.arg("output", a.output.display())
        .opt_arg("export-scores", a.export_scores.as_ref().map(|p| p.display()))
        .arg("class-count", a.class_count)
        .arg("seed", a.seed)
        .opt_arg("manifest", a.manifest.as_ref().map(|p| p.display()));

    // Every evaluated pair, as (name, scores).
    let mut sets: Vec<(String, ScoreSet)> = Vec::new();
    let mut in_accuracy = None;
    match (&a.model, &a.in_data) {
        (Some(model_path), Some(in_path)) => {
            ensure!(!a.ood.is_empty(), "--model needs at least one --ood set");
            m.input(model_path)?;
            m.input(in_path)?;
            let model = load_model(model_path)?;
            let in_set = load_labeled(in_path, a.class_count)?;
            check_model_dims(&model, in_set.images(), "the in-distribution set")?;
            let mut ood = Vec::new();
            for spec in &a.ood {
                let (name, path) = named_path(spec);
                m.input(&path)?;
                let images = load_images(&path, a.class_count)?;
                check_model_dims(&model, &images, &name)?;
                ood.push((name, images));
            }
            in_accuracy = Some(classifier::accuracy(&model, &in_set)?);
            let in_scores = oodval::score_dataset(&model, in_set.images())?;
            for (name, images) in &ood {
                sets.push((
                    name.clone(),
                    ScoreSet::new(in_scores.clone(), oodval::score_dataset(&model, images)?)?,
                ));
            }
        }
        (None, None) => {}
        _ => bail!("--model and --in must be given together"),
    }
    if let Some(in_path) = &a.in_scores {
        ensure!(
            !a.ood_scores.is_empty(),
            "--in-scores needs at least one --ood-scores file"
        );
        m.input(in_path)?;
        let in_scores = read_scores(in_path)?;
        for spec in &a.ood_scores {
            let (name, path) = named_path(spec);
            m.input(&path)?;
            sets.push((name, ScoreSet::new(in_scores.clone(), read_scores(&path)?)?));
        }
    } else {
        ensure!(a.ood_scores.is_empty(), "--ood-scores needs --in-scores");
    }
    for path in &a.scores {
        m.input(path)?;
        // Files written by --export-scores are named `<name>.scores.csv`.
        let (name, _) = named_path(&path.to_string_lossy());
        let name = name.strip_suffix(".scores").unwrap_or(&name).to_string();
        sets.push((
            name,
            ScoreSet::read_csv(path).with_context(|| format!("reading {}", path.display()))?,
        ));
    }
    ensure!(
        !sets.is_empty(),
        "nothing to evaluate: give --model/--in/--ood, --in-scores/--ood-scores or --scores"
    );

    let mut rows = Vec::with_capacity(sets.len());
    for (name, set) in &sets {
        let report = oodval::auroc(set).with_context(|| format!("scoring {name}"))?;
        println!("{name}\tAUROC {:.4}", report.auroc);
        rows.push(OodRow {
            name: name.clone(),
            report,
        });
    }
    if let Some(acc) = in_accuracy {
        println!("in-distribution accuracy {acc:.4}");
    }
    let table = OodTable {
        in_accuracy: in_accuracy.unwrap_or(f64::NAN),
        rows,
    };
    write_file(&a.output, table.to_csv())?;
    m.output(&a.output)?;

    if let Some(dir) = &a.export_scores {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, set) in &sets {
            let path = dir.join(format!("{name}.scores.csv"));
            set.write_csv(&path)?;
            m.output(&path)?;
        }
    }
    finish(&m, &a.output, a.manifest.as_deref())
}

fn corrupt(a: &CorruptArgs) -> Result<()> {
    let kind: CorruptionKind = a.kind.parse()?;
    let spec = CorruptionSpec::new(kind, a.severity, a.seed)?;
    let mut m = Manifest::new("corrupt");
    m.arg("input", a.input.display())
        .arg("output", a.output.display())
        .arg("kind", kind)
        .arg("severity", a.severity)
        .arg("seed", a.seed)
        .opt_arg("constants", a.constants.as_ref().map(|p| p.display()))
        .arg("class-count", a.class_count)
        .opt_arg("manifest", a.manifest.as_ref().map(|p| p.display()));
    m.input(&a.input)?;
    let table = match &a.constants {
        Some(p) => {
            m.input(p)?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            CorruptionTable::parse(&text)?
        }
        None => CorruptionTable::default(),
    };

    let apply = |images: &[ImageTensor]| -> Result<Vec<ImageTensor>> {
        images
            .par_iter()
            .enumerate()
            .map(|(i, img)| table.apply(img, &spec, i as u64).map_err(anyhow::Error::from))
            .collect()
    };
    if is_npy(&a.input) {
        let images = apply(&load_images(&a.input, a.class_count)?)?;
        write_file(&a.output, encode_npy_u8(&images)?)?;
    } else {
        let dataset = load_labeled(&a.input, a.class_count)?;
        let images = apply(dataset.images())?;
        tensorio::write_cifar_binary(&LabeledDataset::new(images, a.class_count)?, &a.output)?;
    }
    m.output(&a.output)?;
    finish(&m, &a.output, a.manifest.as_deref())
}

fn stats(a: &StatsArgs) -> Result<()> {
    let images = load_images(&a.input, a.class_count)?;
    let first = images
        .first()
        .ok_or_else(|| anyhow!("{} holds no images", a.input.display()))?;
    let (h, w, c) = first.dims();
    let mut out = String::new();
    let _ = writeln!(out, "images: {} ({h}x{w}x{c})", images.len());

    if images.iter().any(|i| i.label().is_some()) {
        let mut hist = vec![0usize; a.class_count];
        for img in &images {
            if let Some(l) = img.label() {
                hist[l] += 1;
            }
        }
        let cells: Vec<String> = hist.iter().enumerate().map(|(k, n)| format!("{k}:{n}")).collect();
        let _ = writeln!(out, "classes: {}", cells.join(" "));
    }

    for ch in 0..c {
        let values = || images.iter().flat_map(|i| i.plane(ch).iter().copied());
        let n = (images.len() * h * w) as f64;
        let mean = values().sum::<f64>() / n;
        let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let min = values().fold(f64::INFINITY, f64::min);
        let max = values().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            out,
            "channel {ch}: mean {mean:.6} std {:.6} min {min:.6} max {max:.6}",
            var.sqrt()
        );
    }

    let (low, _) = make_masks(h, w, a.radius)?;
    let fractions = images
        .par_iter()
        .map(|img| {
            let spec = dft2(img);
            let total = spec.energy();
            let low_energy = apply_mask(&spec, &low)?.energy();
            Ok(if total > 0.0 { low_energy / total } else { 0.0 })
        })
        .collect::<rfcaug_core::Result<Vec<f64>>>()?;
    let mean_low = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let _ = writeln!(
        out,
        "band energy (r = {}): low {mean_low:.6} high {:.6}",
        a.radius,
        1.0 - mean_low
    );
    print!("{out}");

    if let Some(path) = &a.output {
        let mut m = Manifest::new("stats");
        m.arg("input", a.input.display())
            .arg("output", path.display())
            .arg("class-count", a.class_count)
            .arg("radius", a.radius)
            .arg("seed", a.seed)
            .opt_arg("manifest", a.manifest.as_ref().map(|p| p.display()));
        m.input(&a.input)?;
        write_file(path, &out)?;
        m.output(path)?;
        finish(&m, path, a.manifest.as_deref())?;
    }
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let recorded = Manifest::read(&a.manifest)?;
    ensure!(recorded.command != "replay", "a manifest cannot record a replay");
    if recorded.version != rfcaug_core::VERSION {
        eprintln!(
            "warning: manifest written by version {}, replaying with {}",
            recorded.version,
            rfcaug_core::VERSION
        );
    }
    for (path, hash) in &recorded.inputs {
        let now = manifest::sha256_file(path)?;
        ensure!(&now == hash, "input {} changed since the recorded run", path.display());
    }
    let cli = Cli::try_parse_from(recorded.argv()).context("manifest arguments no longer parse")?;
    dispatch(cli.command)?;

    let mut mismatched = Vec::new();
    for (path, hash) in &recorded.outputs {
        if &manifest::sha256_file(path)? != hash {
            mismatched.push(path.display().to_string());
        }
    }
    if !mismatched.is_empty() {
        bail!("replay diverged: {}", mismatched.join(", "));
    }
    println!("replay ok: {} outputs match", recorded.outputs.len());
    Ok(())
}
