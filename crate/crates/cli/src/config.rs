//! Run configuration: defaults, config files (TOML or JSON) and command-line
//! overrides. Flags win over the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use eraps_core::synth::{DgpSpec, ExperimentConfig};
use eraps_core::{Aggregation, ClassifierSpec, Method, RegParams, SplitMode, SweepGrid, ThresholdMode};
use serde::{Deserialize, Serialize};

/// The significance levels of the standard evaluation table.
pub const DEFAULT_ALPHAS: [f64; 5] = [0.05, 0.075, 0.1, 0.15, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ClassConditional {
    #[default]
    Off,
    /// One threshold per class.
    PerClass,
    /// The largest class threshold for every label.
    Max,
}

impl From<ClassConditional> for ThresholdMode {
    fn from(c: ClassConditional) -> Self {
        match c {
            ClassConditional::Off => ThresholdMode::Marginal,
            ClassConditional::PerClass => ThresholdMode::ClassConditional,
            ClassConditional::Max => ThresholdMode::ClassMax,
        }
    }
}

/// Synthetic data used when no dataset path is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSource {
    pub dgp: DgpSpec,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        Self {
            dgp: DgpSpec::default(),
            n_train: 2000,
            n_test: 1000,
        }
    }
}

/// Settings of the `verify` suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub dgp: DgpSpec,
    pub alpha: f64,
    pub gap_t: Vec<usize>,
    pub gap_reps: usize,
    pub convergence_t: Vec<usize>,
    pub convergence_reps: usize,
    pub dkw_t: Vec<usize>,
    pub dkw_reps: usize,
    pub experiment: ExperimentConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            dgp: DgpSpec::default(),
            alpha: 0.1,
            gap_t: vec![200, 800, 3200],
            gap_reps: 20,
            convergence_t: vec![5000],
            convergence_reps: 10,
            dkw_t: vec![1000],
            dkw_reps: 500,
            experiment: ExperimentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub methods: Vec<Method>,
    pub alphas: Vec<f64>,
    pub lambda: f64,
    pub k_reg: usize,
    /// Bootstrap models.
    #[serde(rename = "B")]
    pub n_models: usize,
    pub phi: Aggregation,
    pub batch_size: usize,
    pub classifier: ClassifierSpec,
    pub split: SplitMode,
    /// CSV dataset; synthetic data when absent.
    pub data: Option<PathBuf>,
    pub label_column: String,
    pub train_count: Option<usize>,
    pub train_fraction: f64,
    /// Declared class names, fixing the label dictionary and `K`.
    pub classes: Option<Vec<String>>,
    pub synthetic: SyntheticSource,
    pub seed: u64,
    /// Output stem: reports go to `<output>.json` and `<output>.csv`.
    pub output: PathBuf,
    pub class_conditional: ClassConditional,
    pub strata: Option<Vec<f64>>,
    /// Sweep grid; the default grid for `K` when absent.
    pub sweep: Option<SweepGrid>,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Eraps],
            alphas: DEFAULT_ALPHAS.to_vec(),
            lambda: 1.0,
            k_reg: 2,
            n_models: 30,
            phi: Aggregation::Mean,
            batch_size: 1,
            classifier: ClassifierSpec::default(),
            split: SplitMode::SequentialHalf,
            data: None,
            label_column: "label".into(),
            train_count: None,
            train_fraction: 0.5,
            classes: None,
            synthetic: SyntheticSource::default(),
            seed: 0,
            output: PathBuf::from("eraps-report"),
            class_conditional: ClassConditional::Off,
            strata: None,
            sweep: None,
            verify: VerifyConfig::default(),
        }
    }
}

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Config file (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated significance levels.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// Comma-separated methods: eraps, sraps, saps, naive.
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<Method>>,
    /// Penalty strength; a comma-separated list sets the sweep grid.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    /// Rank cutoff; a comma-separated list sets the sweep grid.
    #[arg(long, value_delimiter = ',')]
    pub kreg: Option<Vec<usize>>,
    /// Bootstrap models.
    #[arg(long = "B")]
    pub n_models: Option<usize>,
    /// ERAPS labels revealed per slide
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// mean, median or trimmed-mean:<fraction>.
    #[arg(long)]
    pub phi: Option<Aggregation>,
    /// Output stem.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// CSV dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated class names fixing the label dictionary.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Name of the label column
    #[arg(long)]
    pub label_column: Option<String>,
    /// Leading rows used for training
    #[arg(long)]
    pub train_count: Option<usize>,
    /// Class-conditional calibration (per-class when given without a value).
    #[arg(long, num_args = 0..=1, default_missing_value = "per-class")]
    pub class_conditional: Option<ClassConditional>,
    /// Comma-separated set-size bin edges.
    #[arg(long, value_delimiter = ',')]
    pub strata: Option<Vec<f64>>,
    /// Replications for every verify experiment.
    #[arg(long)]
    pub reps: Option<usize>,
}

/// Reads a config file, choosing the format from the extension (TOML unless
/// it ends in `.json`).
pub fn load_file(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing JSON config {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing TOML config {}", path.display()))
    }
}

/// Which subcommand the overrides are for: `run` takes a single
/// regularizer pair, `sweep` accepts lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Run,
    Sweep,
    Verify,
    Ingest,
}

impl Overrides {
    pub fn resolve(&self, purpose: Purpose) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => load_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
            c.verify.experiment.seed = v;
        }
        if let Some(v) = &self.alpha {
            c.alphas = v.clone();
            if let Some(&a) = v.first() {
                c.verify.alpha = a;
            }
        }
        if let Some(v) = &self.method {
            c.methods = v.clone();
        }
        match purpose {
            Purpose::Sweep => {
                if self.lambda.is_some() || self.kreg.is_some() {
                    let mut grid = c.sweep.clone().unwrap_or(SweepGrid {
                        lambdas: vec![c.lambda],
                        k_regs: vec![c.k_reg],
                    });
                    if let Some(v) = &self.lambda {
                        grid.lambdas = v.clone();
                    }
                    if let Some(v) = &self.kreg {
                        grid.k_regs = v.clone();
                    }
                    c.sweep = Some(grid);
                }
            }
            _ => {
                if let Some(v) = &self.lambda {
                    c.lambda = single("lambda", v)?;
                }
                if let Some(v) = &self.kreg {
                    c.k_reg = single("kreg", v)?;
                }
            }
        }
        if let Some(v) = self.n_models {
            c.n_models = v;
            c.verify.experiment.ensemble.n_models = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
            c.verify.experiment.batch_size = Some(v);
        }
        if let Some(v) = self.phi {
            c.phi = v;
            c.verify.experiment.ensemble.phi = v;
        }
        if let Some(v) = &self.output {
            c.output = v.clone();
        }
        if let Some(v) = &self.data {
            c.data = Some(v.clone());
        }
        if let Some(v) = &self.classes {
            c.classes = Some(v.clone());
        }
        if let Some(v) = &self.label_column {
            c.label_column = v.clone();
        }
        if let Some(v) = self.train_count {
            c.train_count = Some(v);
        }
        if let Some(v) = self.class_conditional {
            c.class_conditional = v;
        }
        if let Some(v) = &self.strata {
            c.strata = Some(v.clone());
        }
        if let Some(v) = self.reps {
            c.verify.gap_reps = v;
            c.verify.convergence_reps = v;
            c.verify.dkw_reps = v;
        }
        c.validate(purpose)?;
        Ok(c)
    }
}

fn single<T: Copy>(name: &str, values: &[T]) -> Result<T> {
    match values {
        [v] => Ok(*v),
        _ => bail!("{name}: expected one value (lists are only accepted by `sweep`)"),
    }
}

impl RunConfig {
    pub fn reg(&self) -> Result<RegParams> {
        RegParams::new(self.lambda, self.k_reg).context("lambda/k_reg")
    }

    pub fn validate(&self, purpose: Purpose) -> Result<()> {
        if purpose == Purpose::Verify {
            let v = &self.verify;
            for (name, reps) in [
                ("gap_reps", v.gap_reps),
                ("convergence_reps", v.convergence_reps),
                ("dkw_reps", v.dkw_reps),
            ] {
                if reps == 0 {
                    bail!("{name}: must be at least 1");
                }
            }
            if !(0.0..1.0).contains(&v.alpha) {
                bail!("alpha: {} is outside [0, 1)", v.alpha);
            }
            v.dgp.validate().context("verify.dgp")?;
            return Ok(());
        }
        if purpose == Purpose::Ingest {
            return self.validate_split();
        }
        if self.methods.is_empty() {
            bail!("methods: at least one method is required");
        }
        if self.alphas.is_empty() {
            bail!("alphas: at least one significance level is required");
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..1.0).contains(*a)) {
            bail!("alphas: {a} is outside [0, 1)");
        }
        if purpose == Purpose::Run {
            self.reg()?;
        }
        if self.n_models == 0 {
            bail!("B: must be at least 1");
        }
        if self.batch_size == 0 {
            bail!("batch_size: must be at least 1");
        }
        self.phi.validate().context("phi")?;
        self.classifier.validate().context("classifier")?;
        self.validate_split()?;
        if self.data.is_none() {
            let s = &self.synthetic;
            s.dgp.validate().context("synthetic")?;
            if s.n_train < 2 || s.n_test == 0 {
                bail!("synthetic: n_train must be at least 2 and n_test at least 1");
            }
        }
        Ok(())
    }

    fn validate_split(&self) -> Result<()> {
        if self.train_count.is_none() && !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction: {} is outside (0, 1)", self.train_fraction);
        }
        Ok(())
    }

    pub fn threshold_mode(&self) -> ThresholdMode {
        self.class_conditional.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_standard_protocol() {
        let c = RunConfig::default();
        assert_eq!(c.n_models, 30);
        assert_eq!(c.alphas, DEFAULT_ALPHAS.to_vec());
        assert_eq!((c.lambda, c.k_reg), (1.0, 2));
        assert_eq!(c.split, SplitMode::SequentialHalf);
        c.validate(Purpose::Run).unwrap();
    }

    #[test]
    fn toml_and_json_files_parse() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        std::fs::write(
            &toml_path,
            "methods = [\"sraps\", \"naive\"]\nalphas = [0.1]\nB = 5\nphi = { kind = \"median\" }\n[synthetic.dgp]\nn_classes = 3\n",
        )
        .unwrap();
        let c = load_file(&toml_path).unwrap();
        assert_eq!(c.methods, vec![Method::Sraps, Method::Naive]);
        assert_eq!(c.n_models, 5);
        assert_eq!(c.phi, Aggregation::Median);
        assert_eq!(c.synthetic.dgp.n_classes, 3);

        let json_path = dir.path().join("c.json");
        std::fs::write(&json_path, r#"{"alphas": [0.2], "seed": 4}"#).unwrap();
        let c = load_file(&json_path).unwrap();
        assert_eq!((c.alphas.clone(), c.seed), (vec![0.2], 4));
    }

    #[test]
    fn flags_win_over_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 1\nlambda = 2.0\n").unwrap();
        let o = Overrides {
            config: Some(path),
            seed: Some(9),
            ..Overrides::default()
        };
        let c = o.resolve(Purpose::Run).unwrap();
        assert_eq!((c.seed, c.lambda), (9, 2.0));
    }

    #[test]
    fn invalid_fields_are_named() {
        let bad = |o: Overrides| o.resolve(Purpose::Run).unwrap_err().to_string();
        assert!(bad(Overrides {
            alpha: Some(vec![1.5]),
            ..Overrides::default()
        })
        .contains("alphas"));
        assert!(bad(Overrides {
            n_models: Some(0),
            ..Overrides::default()
        })
        .contains('B'));
        assert!(bad(Overrides {
            lambda: Some(vec![1.0, 2.0]),
            ..Overrides::default()
        })
        .contains("lambda"));
        let err = Overrides {
            reps: Some(0),
            ..Overrides::default()
        }
        .resolve(Purpose::Verify)
        .unwrap_err()
        .to_string();
        assert!(err.contains("reps"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("alpha_list = [0.1]").is_err());
    }
}
