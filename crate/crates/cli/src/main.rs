//! `posdec`: staged command-line front end for the decoding pipeline.
//!
//! Stages read their inputs from the previous stage's outputs and write
//! their own outputs atomically. Logs go to standard error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use posdec::config::PipelineConfig;
use posdec::evaluate::{loso_folds, CrossvalReport};
use posdec::features::FeatureMatrix;
use posdec::forest::Forest;
use posdec::fsutil::{read_to_string, write_atomic};
use posdec::importance::{topomap_svg, ImportanceReport};
use posdec::montage::{Montage, DEFAULT_NEIGHBORS};
use posdec::pipeline;
use posdec::recording::{events_from_text, events_to_text, Recording};
use posdec::spectral::Band;
use posdec::synth::{generate_dataset, truth_text, Profile};
use posdec::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "posdec", version, about = "Cross-subject EEG finger-position decoding")]
struct Cli {
    /// Config file (defaults to $POSDEC_CONFIG, then built-in defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override any config key, e.g. `--set forest.max_depth=12`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into the data directory.
    Synth(SynthArgs),
    /// Laplacian, channel intersection, highpass, common average reference.
    Preprocess,
    /// μ identification, trial cropping, bandpower features, outliers, normalisation.
    Features(FeatureArgs),
    /// Leave-one-subject-out random forests.
    Crossval(CrossvalArgs),
    /// Permutation importances of the fold forests and their aggregates.
    Importance(ImportanceArgs),
    /// Subject and key tables plus confusion export.
    Report,
    /// Print the effective configuration.
    Config,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Geometric class-gain ratio; 1 plants no class information.
    #[arg(long)]
    gain_ratio: Option<f64>,
}

#[derive(Args)]
struct FeatureArgs {
    /// Fixed μ band for a subject, e.g. `S03=9:11`.
    #[arg(long = "mu-band", value_name = "SUBJ=LOW:HIGH")]
    mu_bands: Vec<String>,
    /// Also write per-feature outlier counts.
    #[arg(long)]
    export_outlier_report: bool,
}

#[derive(Args)]
struct CrossvalArgs {
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ImportanceArgs {
    #[arg(long)]
    resolution: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::discover(cli.config.as_deref())?;
    let mut errors = Vec::new();
    for s in &cli.sets {
        match s.split_once('=') {
            Some((k, v)) => {
                if let Err(Error::ConfigFields(f)) = cfg.set_str(k.trim(), v.trim()) {
                    errors.extend(f);
                }
            }
            None => errors.push(format!("--set {s}: expected KEY=VALUE")),
        }
    }
    if let Some(d) = cli.data_dir {
        cfg.data_dir = d;
    }
    if let Some(d) = cli.out_dir {
        cfg.out_dir = d;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    match &cli.command {
        Command::Synth(a) => {
            if let Some(p) = &a.profile {
                cfg.synth.profile = p.clone();
            }
            if let Some(s) = a.seed {
                cfg.synth.seed = s;
            }
            if let Some(r) = a.gain_ratio {
                cfg.synth.effect.class_gains = posdec::synth::geometric_gains(r);
            }
        }
        Command::Features(a) => {
            for m in &a.mu_bands {
                match m.split_once('=').map(|(s, b)| (s, Band::parse(b))) {
                    Some((s, Ok(b))) => {
                        cfg.spectral.mu_overrides.insert(s.to_string(), b);
                    }
                    _ => errors.push(format!("--mu-band {m}: expected SUBJ=LOW:HIGH")),
                }
            }
        }
        Command::Crossval(a) => {
            if let Some(t) = a.trees {
                cfg.forest.n_trees = t;
            }
            if a.mtry.is_some() {
                cfg.forest.mtry = a.mtry;
            }
            if let Some(s) = a.seed {
                cfg.forest.seed = s;
            }
        }
        Command::Importance(a) => {
            if let Some(r) = a.resolution {
                cfg.topomap_resolution = r;
            }
        }
        _ => {}
    }
    if let Err(Error::ConfigFields(f)) = cfg.validate() {
        errors.extend(f);
    }
    if !errors.is_empty() {
        return Err(Error::ConfigFields(errors));
    }
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    match cli.command {
        Command::Synth(_) => synth(&cfg),
        Command::Preprocess => preprocess(&cfg),
        Command::Features(a) => features(&cfg, a.export_outlier_report),
        Command::Crossval(_) => crossval(&cfg),
        Command::Importance(_) => importance(&cfg),
        Command::Report => report(&cfg),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn subjects_in(dir: &Path) -> Result<Vec<String>> {
    let text = read_to_string(&dir.join("subjects.txt"))?;
    let subjects: Vec<String> =
        text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect();
    if subjects.is_empty() {
        return Err(Error::Data(format!("{} lists no subjects", dir.join("subjects.txt").display())));
    }
    Ok(subjects)
}

fn load_montage(dir: &Path, cfg: &PipelineConfig) -> Result<Montage> {
    let m = Montage::load(&dir.join("montage.txt"))?;
    if cfg.dsp.neighbors == DEFAULT_NEIGHBORS {
        Ok(m)
    } else {
        Montage::with_nearest_neighbors(m.channels().to_vec(), m.positions().to_vec(), cfg.dsp.neighbors)
    }
}

fn synth(cfg: &PipelineConfig) -> Result<()> {
    let profile = Profile::by_name(&cfg.synth.profile)?;
    let dir = &cfg.data_dir;
    log::info!("generating {} profile ({} subjects) into {}", profile.name, profile.n_subjects, dir.display());
    let data = generate_dataset::<f32>(&profile, &cfg.synth.effect, cfg.synth.seed)?;
    let mut ids = String::new();
    for s in &data.subjects {
        let id = &s.recording.subject_id;
        s.recording.save(&dir.join(format!("{id}.pdrc")))?;
        s.resting.save(&dir.join(format!("{id}.rest.pdrc")))?;
        write_text(&dir.join(format!("{id}.events.csv")), &events_to_text(&s.events))?;
        ids.push_str(id);
        ids.push('\n');
    }
    write_text(&dir.join("subjects.txt"), &ids)?;
    write_text(&dir.join("montage.txt"), &data.montage.to_text())?;
    write_text(&dir.join("truth.txt"), &truth_text(&profile, &cfg.synth.effect, cfg.synth.seed, &data))
}

fn preprocess(cfg: &PipelineConfig) -> Result<()> {
    let src = &cfg.data_dir;
    let dst = cfg.out_dir.join("preprocessed");
    let subjects = subjects_in(src)?;
    let montage = load_montage(src, cfg)?;
    let mut lists = Vec::new();
    for s in &subjects {
        lists.push(Recording::<f64>::load(&src.join(format!("{s}.pdrc")))?.channels);
    }
    let refs: Vec<&[String]> = lists.iter().map(Vec::as_slice).collect();
    let common = pipeline::common_channels(&refs)?;
    log::info!("{} channels common to {} subjects", common.len(), subjects.len());
    for s in &subjects {
        let rec = Recording::<f64>::load(&src.join(format!("{s}.pdrc")))?;
        pipeline::preprocess_recording(&rec, &montage, &common, cfg)?.save(&dst.join(format!("{s}.pdrc")))?;
        let rest_path = src.join(format!("{s}.rest.pdrc"));
        if rest_path.exists() {
            let rest = Recording::<f64>::load(&rest_path)?;
            pipeline::preprocess_recording(&rest, &montage, &common, cfg)?
                .save(&dst.join(format!("{s}.rest.pdrc")))?;
        }
        let events = read_to_string(&src.join(format!("{s}.events.csv")))?;
        write_text(&dst.join(format!("{s}.events.csv")), &events)?;
        log::info!("{s}: preprocessed");
    }
    write_text(&dst.join("subjects.txt"), &(subjects.join("\n") + "\n"))?;
    write_text(&dst.join("channels.txt"), &(common.join("\n") + "\n"))?;
    write_text(&dst.join("montage.txt"), &montage.to_text())
}

fn features(cfg: &PipelineConfig, outlier_report: bool) -> Result<()> {
    let src = cfg.out_dir.join("preprocessed");
    let subjects = subjects_in(&src)?;
    let channels: Vec<String> = read_to_string(&src.join("channels.txt"))?.lines().map(String::from).collect();
    let layout = cfg.layout(channels.len())?;
    let mut builder = pipeline::FeatureBuilder::<f64>::new(layout.clone(), channels.clone());
    let mut bands_text = String::from("subject,mu_low,mu_high,beta_low,beta_high\n");
    for s in &subjects {
        let rec = Recording::<f64>::load(&src.join(format!("{s}.pdrc")))?;
        if rec.channels != channels {
            return Err(Error::Data(format!("{s}: channels differ from channels.txt")));
        }
        let rest_path = src.join(format!("{s}.rest.pdrc"));
        let rest = if rest_path.exists() { Some(Recording::<f64>::load(&rest_path)?) } else { None };
        let bands = pipeline::subject_bands(s, rest.as_ref(), cfg)?;
        let events_path = src.join(format!("{s}.events.csv"));
        let events = events_from_text(&read_to_string(&events_path)?, &events_path)?;
        let (rows, meta) = pipeline::trial_features(&rec, &events, &bands, &layout)?;
        bands_text.push_str(&format!("{s},{},{},{},{}\n", bands.mu.low, bands.mu.high, bands.beta.low, bands.beta.high));
        log::info!("{s}: {} trials, μ band {}", rows.len(), bands.mu);
        builder.add_subject(rows, meta, bands);
    }
    let matrix = builder.finish(cfg.robust.sigma)?;
    matrix.save(&cfg.out_dir.join("features.pfm"))?;
    write_text(&cfg.out_dir.join("mu_bands.csv"), &bands_text)?;
    if outlier_report {
        write_text(&cfg.out_dir.join("outliers.csv"), &matrix.outlier_report())?;
    }
    Ok(())
}

fn fold_path(out: &Path, index: usize, subject: &str) -> PathBuf {
    out.join("folds").join(format!("fold_{index:02}_{subject}.forest"))
}

fn crossval(cfg: &PipelineConfig) -> Result<()> {
    let matrix = FeatureMatrix::<f64>::load(&cfg.out_dir.join("features.pfm"))?;
    log::info!(
        "{} trials × {} features, {} trees per fold",
        matrix.n_rows(),
        matrix.n_features(),
        cfg.forest.n_trees
    );
    let report = posdec::evaluate::run_crossval(&matrix, &cfg.crossval(), |fold, forest| {
        forest.save(&fold_path(&cfg.out_dir, fold.index, &fold.test))
    })?;
    write_text(&cfg.out_dir.join("crossval.txt"), &report.to_text())?;
    log::info!("accuracy {:.2} % (p = {:.3e})", 100.0 * report.accuracy, report.p_value);
    Ok(())
}

fn importance(cfg: &PipelineConfig) -> Result<()> {
    let matrix = FeatureMatrix::<f64>::load(&cfg.out_dir.join("features.pfm"))?;
    let folds = loso_folds(&matrix.subjects())?;
    let mut scores = Vec::with_capacity(folds.len());
    for fold in &folds {
        let forest = Forest::<f64>::load(&fold_path(&cfg.out_dir, fold.index, &fold.test))?;
        let imp = pipeline::fold_importance(&matrix, fold, &forest, cfg)?;
        log::info!("fold {} ({}): baseline OOB error {:.4}", fold.index, fold.test, imp.baseline);
        scores.push(imp.scores);
    }
    let report = ImportanceReport::build(&scores, &matrix.layout, &matrix.channels)?;
    let dir = cfg.out_dir.join("importance");
    write_text(&dir.join("fis.csv"), &report.fis_csv())?;
    write_text(&dir.join("cis.csv"), &report.cis_csv())?;
    write_text(&dir.join("wis.csv"), &report.wis_csv())?;
    write_text(&dir.join("wis.svg"), &report.wis_svg())?;
    write_text(&dir.join("summary.txt"), &report.summary())?;
    let montage = Montage::load(&cfg.out_dir.join("preprocessed").join("montage.txt"))?;
    let (mu, beta) = pipeline::topomaps(&report, &montage, cfg.topomap_resolution)?;
    let positions = pipeline::channel_positions(&report.channels, &montage)?;
    write_text(&dir.join("topomap_mu.csv"), &mu.to_csv())?;
    write_text(&dir.join("topomap_beta.csv"), &beta.to_csv())?;
    write_text(&dir.join("topomap_mu.svg"), &topomap_svg(&mu, &report.channels, &positions, "CIS μ"))?;
    write_text(&dir.join("topomap_beta.svg"), &topomap_svg(&beta, &report.channels, &positions, "CIS β"))?;
    log::info!("top channel {}", report.top_channel_name());
    Ok(())
}

fn report(cfg: &PipelineConfig) -> Result<()> {
    let cv_path = cfg.out_dir.join("crossval.txt");
    let cv = CrossvalReport::from_text(&read_to_string(&cv_path)?, &cv_path)?;
    let summary = read_to_string(&cfg.out_dir.join("importance").join("summary.txt"))?;
    let text = format!(
        "Per-subject prediction accuracy\n\n{}\nPer-key rates\n\n{}\nImportance\n\n{}",
        cv.table_subjects(),
        cv.table_keys(),
        summary
    );
    write_text(&cfg.out_dir.join("report.txt"), &text)?;
    write_text(&cfg.out_dir.join("confusion.csv"), &cv.confusion_csv())?;
    print!("{text}");
    Ok(())
}
