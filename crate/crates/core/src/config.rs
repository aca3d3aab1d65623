//! Pipeline configuration: one flat `section.key = value` document, every
//! key optional, defaults equal to the published analysis settings.
//!
//! ```toml
//! dsp.cutoff = 3.0
//! forest.n_trees = 100
//! spectral.mu_band.S03 = "9:11"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::error::{Error, Result};
use crate::evaluate::CrossvalConfig;
use crate::forest::ForestParams;
use crate::layout::FeatureLayout;
use crate::montage::DEFAULT_NEIGHBORS;
use crate::robust::ImputeMode;
use crate::spectral::{Band, MuSearch};
use crate::synth::{geometric_gains, EffectSpec, Profile};

/// Environment variable naming the config file.
pub const CONFIG_ENV: &str = "POSDEC_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct DspConfig {
    pub cutoff: f64,
    pub order: usize,
    pub neighbors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralConfig {
    pub beta: Band,
    pub mu_search: MuSearch,
    pub mu_channels: Vec<String>,
    /// Per-subject μ bands that bypass the search.
    pub mu_overrides: BTreeMap<String, Band>,
    pub window_len: f64,
    pub window_step: f64,
    pub trial_len: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustConfig {
    pub sigma: f64,
    pub impute: ImputeMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub profile: String,
    pub seed: u64,
    pub effect: EffectSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub dsp: DspConfig,
    pub spectral: SpectralConfig,
    pub robust: RobustConfig,
    pub forest: ForestParams,
    pub max_resident: usize,
    pub topomap_resolution: usize,
    pub synth: SynthConfig,
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            dsp: DspConfig { cutoff: 3.0, order: 3, neighbors: DEFAULT_NEIGHBORS },
            spectral: SpectralConfig {
                beta: Band::BETA,
                mu_search: MuSearch::default(),
                mu_channels: vec!["C3".into(), "C4".into()],
                mu_overrides: BTreeMap::new(),
                window_len: 1.0,
                window_step: 0.05,
                trial_len: 3.0,
            },
            robust: RobustConfig { sigma: 3.0, impute: ImputeMode::TrainingMean },
            forest: ForestParams::default(),
            max_resident: 4,
            topomap_resolution: 64,
            synth: SynthConfig { profile: "desk".into(), seed: 1, effect: EffectSpec::default() },
            threads: None,
        }
    }
}

/// Flattens nested tables into dotted keys.
fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn as_usize(v: &Value) -> Option<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Some(*i as usize),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn as_u64(v: &Value) -> Option<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Some(*i as u64),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn as_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn as_band(v: &Value) -> Option<Band> {
    match v {
        Value::String(s) => Band::parse(s).ok(),
        Value::Array(a) if a.len() == 2 => Band::new(as_f64(&a[0])?, as_f64(&a[1])?).ok(),
        _ => None,
    }
}

fn as_window(v: &Value) -> Option<(f64, f64)> {
    let (a, b) = match v {
        Value::String(s) => {
            let (a, b) = s.split_once(':')?;
            (a.trim().parse().ok()?, b.trim().parse().ok()?)
        }
        Value::Array(a) if a.len() == 2 => (as_f64(&a[0])?, as_f64(&a[1])?),
        _ => return None,
    };
    (a >= 0.0 && b > a).then_some((a, b))
}

fn as_list<T>(v: &Value, item: impl Fn(&Value) -> Option<T>) -> Option<Vec<T>> {
    match v {
        Value::Array(a) => a.iter().map(item).collect(),
        Value::String(s) => s
            .split(',')
            .map(|p| item(&Value::String(p.trim().to_string())))
            .collect(),
        _ => None,
    }
}

impl PipelineConfig {
    /// Parses a config document; errors list every offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config is not valid TOML: {e}")))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut cfg = Self::default();
        let errors: Vec<String> = entries
            .iter()
            .filter_map(|(k, v)| cfg.set(k, v).err())
            .collect();
        if !errors.is_empty() {
            return Err(Error::ConfigFields(errors));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::Config(format!("cannot read config file {}: {e}", path.display())),
        })?;
        Self::from_toml_str(&text)
    }

    /// Config from `explicit`, else from `$POSDEC_CONFIG`, else defaults.
    pub fn discover(explicit: Option<&Path>) -> Result<Self> {
        if let Some(p) = explicit {
            return Self::load(p);
        }
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
            _ => Ok(Self::default()),
        }
    }

    /// Applies a `key=value` override given on the command line; the value
    /// is read as a TOML value, falling back to a bare string.
    pub fn set_str(&mut self, key: &str, raw: &str) -> Result<()> {
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key, &value).map_err(|e| Error::ConfigFields(vec![e]))
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, v: &Value) -> std::result::Result<(), String> {
        let bad = |what: &str| format!("{key}: expected {what}, got {v}");
        macro_rules! put {
            ($field:expr, $conv:expr, $what:expr) => {
                $field = $conv(v).ok_or_else(|| bad($what))?
            };
        }
        if let Some(subject) = key.strip_prefix("spectral.mu_band.") {
            let band = as_band(v).ok_or_else(|| bad("a band \"LOW:HIGH\""))?;
            self.spectral.mu_overrides.insert(subject.to_string(), band);
            return Ok(());
        }
        let e = &mut self.synth.effect;
        match key {
            "threads" => self.threads = Some(as_usize(v).ok_or_else(|| bad("a thread count"))?),
            "paths.data_dir" => put!(self.data_dir, |v| as_string(v).map(PathBuf::from), "a path"),
            "paths.out_dir" => put!(self.out_dir, |v| as_string(v).map(PathBuf::from), "a path"),
            "dsp.cutoff" => put!(self.dsp.cutoff, as_f64, "a frequency in Hz"),
            "dsp.order" => put!(self.dsp.order, as_usize, "a filter order"),
            "dsp.neighbors" => put!(self.dsp.neighbors, as_usize, "a neighbor count"),
            "spectral.beta" => put!(self.spectral.beta, as_band, "a band \"LOW:HIGH\""),
            "spectral.mu_range" => {
                let b = as_band(v).ok_or_else(|| bad("a range \"LOW:HIGH\""))?;
                self.spectral.mu_search.range = (b.low, b.high);
            }
            "spectral.mu_widths" => {
                put!(self.spectral.mu_search.widths, |v| as_list(v, |x| as_usize(x).map(|w| w as u32)), "a list of widths")
            }
            "spectral.mu_channels" => put!(self.spectral.mu_channels, |v| as_list(v, as_string), "a list of channel names"),
            "spectral.rest_min_seconds" => put!(self.spectral.mu_search.min_duration, as_f64, "seconds"),
            "spectral.window_len" => put!(self.spectral.window_len, as_f64, "seconds"),
            "spectral.window_step" => put!(self.spectral.window_step, as_f64, "seconds"),
            "spectral.trial_len" => put!(self.spectral.trial_len, as_f64, "seconds"),
            "robust.sigma" => put!(self.robust.sigma, as_f64, "a threshold in standard deviations"),
            "robust.impute" => {
                self.robust.impute = match as_string(v).as_deref() {
                    Some("training-mean") => ImputeMode::TrainingMean,
                    Some("keep-held-out") => ImputeMode::KeepHeldOut,
                    _ => return Err(bad("\"training-mean\" or \"keep-held-out\"")),
                }
            }
            "forest.n_trees" => put!(self.forest.n_trees, as_usize, "a tree count"),
            "forest.mtry" => {
                self.forest.mtry = match v {
                    Value::String(s) if s == "auto" => None,
                    _ => Some(as_usize(v).ok_or_else(|| bad("a count or \"auto\""))?),
                }
            }
            "forest.min_node_size" => put!(self.forest.min_node_size, as_usize, "a row count"),
            "forest.max_depth" => {
                self.forest.max_depth = match as_usize(v).ok_or_else(|| bad("a depth (0 = unlimited)"))? {
                    0 => None,
                    d => Some(d),
                }
            }
            "forest.seed" => put!(self.forest.seed, as_u64, "an unsigned seed"),
            "forest.max_resident" => put!(self.max_resident, as_usize, "a forest count"),
            "importance.resolution" => put!(self.topomap_resolution, as_usize, "a grid size"),
            "synth.profile" => put!(self.synth.profile, as_string, "a profile name"),
            "synth.seed" => put!(self.synth.seed, as_u64, "an unsigned seed"),
            "synth.effect_channel" => put!(e.effect_channel, as_string, "a channel name"),
            "synth.effect_band" => put!(e.effect_band, as_band, "a band \"LOW:HIGH\""),
            "synth.effect_window" => {
                e.effect_window = as_window(v).ok_or_else(|| bad("a window \"START:END\" in seconds"))?;
            }
            "synth.gain_ratio" => {
                let r = as_f64(v).ok_or_else(|| bad("a ratio"))?;
                e.class_gains = geometric_gains(r);
            }
            "synth.class_gains" => {
                let g = as_list(v, as_f64).ok_or_else(|| bad("nine gains"))?;
                e.class_gains = g.try_into().map_err(|_| bad("exactly nine gains"))?;
            }
            "synth.burst_amplitude" => put!(e.burst_amplitude, as_f64, "an amplitude"),
            "synth.tonic_amplitude" => put!(e.tonic_amplitude, as_f64, "an amplitude"),
            "synth.mu_amplitude" => put!(e.mu_amplitude, as_f64, "an amplitude"),
            "synth.mu_rest_amplitude" => put!(e.mu_rest_amplitude, as_f64, "an amplitude"),
            "synth.noise_amplitude" => put!(e.noise_amplitude, as_f64, "an amplitude"),
            "synth.noise_exponent" => put!(e.noise_exponent, as_f64, "an exponent"),
            "synth.common_mode" => put!(e.common_mode, as_f64, "an amplitude"),
            _ => return Err(format!("{key}: unknown setting")),
        }
        Ok(())
    }

    /// Checks every field and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let d = &self.dsp;
        if !(d.cutoff.is_finite() && d.cutoff > 0.0) {
            bad.push(format!("dsp.cutoff: must be positive, got {}", d.cutoff));
        }
        if !(1..=12).contains(&d.order) {
            bad.push(format!("dsp.order: must be in 1..=12, got {}", d.order));
        }
        if d.neighbors == 0 {
            bad.push("dsp.neighbors: must be at least 1".into());
        }
        let s = &self.spectral;
        if s.mu_search.range.0 >= s.mu_search.range.1 {
            bad.push("spectral.mu_range: low edge must be below high edge".into());
        }
        if s.mu_search.widths.is_empty() || s.mu_search.widths.contains(&0) {
            bad.push("spectral.mu_widths: need at least one positive width".into());
        }
        if s.mu_channels.is_empty() {
            bad.push("spectral.mu_channels: need at least one channel".into());
        }
        if FeatureLayout::with_timing(1, s.trial_len, s.window_len, s.window_step).is_err() {
            bad.push(format!(
                "spectral.window_len/window_step/trial_len: {} s windows every {} s do not tile a {} s trial",
                s.window_len, s.window_step, s.trial_len
            ));
        }
        if !(self.robust.sigma.is_finite() && self.robust.sigma > 0.0) {
            bad.push(format!("robust.sigma: must be positive, got {}", self.robust.sigma));
        }
        if self.forest.n_trees == 0 {
            bad.push("forest.n_trees: must be at least 1".into());
        }
        if self.forest.mtry == Some(0) {
            bad.push("forest.mtry: must be at least 1".into());
        }
        if self.forest.min_node_size == 0 {
            bad.push("forest.min_node_size: must be at least 1".into());
        }
        if self.max_resident == 0 {
            bad.push("forest.max_resident: must be at least 1".into());
        }
        if self.topomap_resolution < 2 {
            bad.push("importance.resolution: must be at least 2".into());
        }
        if self.threads == Some(0) {
            bad.push("threads: must be at least 1".into());
        }
        if Profile::by_name(&self.synth.profile).is_err() {
            bad.push(format!("synth.profile: unknown profile {:?} (desk, full)", self.synth.profile));
        }
        if let Err(Error::ConfigFields(f)) = self.synth.effect.validate() {
            bad.extend(f);
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigFields(bad))
        }
    }

    pub fn crossval(&self) -> CrossvalConfig {
        CrossvalConfig { forest: self.forest, impute: self.robust.impute, max_resident: self.max_resident }
    }

    pub fn layout(&self, n_channels: usize) -> Result<FeatureLayout> {
        let s = &self.spectral;
        FeatureLayout::with_timing(n_channels, s.trial_len, s.window_len, s.window_step)
    }

    /// Effective settings as a config document.
    pub fn to_toml(&self) -> String {
        let s = &self.spectral;
        let e = &self.synth.effect;
        let gains: Vec<String> = e.class_gains.iter().map(|g| g.to_string()).collect();
        let mut out = format!(
            "paths.data_dir = {:?}\npaths.out_dir = {:?}\n\
             dsp.cutoff = {:?}\ndsp.order = {}\ndsp.neighbors = {}\n\
             spectral.beta = \"{}\"\nspectral.mu_range = \"{}:{}\"\nspectral.mu_widths = {:?}\n\
             spectral.mu_channels = {:?}\nspectral.rest_min_seconds = {:?}\n\
             spectral.window_len = {:?}\nspectral.window_step = {:?}\nspectral.trial_len = {:?}\n\
             robust.sigma = {:?}\nrobust.impute = \"{}\"\n\
             forest.n_trees = {}\nforest.mtry = {}\nforest.min_node_size = {}\nforest.max_depth = {}\n\
             forest.seed = {}\nforest.max_resident = {}\nimportance.resolution = {}\n\
             synth.profile = {:?}\nsynth.seed = {}\nsynth.effect_channel = {:?}\nsynth.effect_band = \"{}\"\n\
             synth.effect_window = \"{}:{}\"\nsynth.class_gains = [{}]\nsynth.burst_amplitude = {:?}\n\
             synth.tonic_amplitude = {:?}\nsynth.mu_amplitude = {:?}\nsynth.mu_rest_amplitude = {:?}\n\
             synth.noise_amplitude = {:?}\nsynth.noise_exponent = {:?}\nsynth.common_mode = {:?}\n",
            self.data_dir.display().to_string(),
            self.out_dir.display().to_string(),
            self.dsp.cutoff,
            self.dsp.order,
            self.dsp.neighbors,
            s.beta,
            s.mu_search.range.0,
            s.mu_search.range.1,
            s.mu_search.widths,
            s.mu_channels,
            s.mu_search.min_duration,
            s.window_len,
            s.window_step,
            s.trial_len,
            self.robust.sigma,
            match self.robust.impute {
                ImputeMode::TrainingMean => "training-mean",
                ImputeMode::KeepHeldOut => "keep-held-out",
            },
            self.forest.n_trees,
            self.forest.mtry.map_or("\"auto\"".to_string(), |m| m.to_string()),
            self.forest.min_node_size,
            self.forest.max_depth.unwrap_or(0),
            self.forest.seed,
            self.max_resident,
            self.topomap_resolution,
            self.synth.profile,
            self.synth.seed,
            e.effect_channel,
            e.effect_band,
            e.effect_window.0,
            e.effect_window.1,
            gains.join(", "),
            e.burst_amplitude,
            e.tonic_amplitude,
            e.mu_amplitude,
            e.mu_rest_amplitude,
            e.noise_amplitude,
            e.noise_exponent,
            e.common_mode,
        );
        for (subject, band) in &s.mu_overrides {
            out.push_str(&format!("spectral.mu_band.{subject} = \"{band}\"\n"));
        }
        out
    }
}
