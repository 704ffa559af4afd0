//! The `fusion-shap` command line.
//!
//! Every subcommand reads an optional JSON config (`--config`) whose keys
//! mirror the long flags; flags win over the file. Relative paths inside a
//! config file resolve against the file's directory. The output directory is
//! taken from `--out-dir`, then `FUSION_SHAP_OUT_DIR`, then the config, then
//! `fusion-shap-out`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::codec::{fit_linear_codec, round_trip_rmse, ManifoldCodec};
use crate::error::{Error, Result};
use crate::experiment::{score_method, sweep_dims, MetricSettings, SweepStatus};
use crate::explain::{explain, Context, EstimatorMode, ExplainSettings, ImputationSpec, Method};
use crate::formats::{self, write_file};
use crate::image::{Image, Shape};
use crate::mapping::WeightMode;
use crate::metrics::axioms::AxiomCheck;
use crate::metrics::{MetricReport, PerturbationKind};
use crate::model::{BlackBoxModel, GradientTarget};
use crate::shapley::{AttributionVector, PixelGrid};
use crate::synth::synthetic_task;

pub const OUT_DIR_ENV: &str = "FUSION_SHAP_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "fusion-shap-out";
pub const DEFAULT_SWEEP_DIMS: [usize; 4] = [2, 4, 8, 16];
pub const DEFAULT_SWEEP_IMAGES: usize = 2;

#[derive(Parser, Debug)]
#[command(name = "fusion-shap", version, about = "Manifold-aware Shapley saliency maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Explain one image and write CSV, PGM and a JSON sidecar.
    Explain(RunArgs),
    /// Infidelity, sensitivity and axiom checks for one or more methods.
    Metrics(RunArgs),
    /// Fit a codec per latent dimension and score the fusion map with each.
    SweepDims(RunArgs),
    /// Fit a linear codec to a dataset.
    FitCodec(RunArgs),
    /// Write the seeded synthetic task (model, datasets, images) to disk.
    Synth(RunArgs),
}

/// Flags shared by all subcommands; each one overrides the config key of the
/// same name.
#[derive(Args, Debug, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub codec: Option<PathBuf>,
    /// Image to explain (CSV or PGM); repeat for metrics and sweeps.
    #[arg(long)]
    pub image: Vec<PathBuf>,
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Dataset JSON: codec fitting, sweeps and empirical imputation.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Output file for fit-codec (default `<out-dir>/codec.json`).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// traditional, manifold, fusion, grad, ig, smoothgrad or constant;
    /// repeat or comma-separate for metrics.
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<Method>,
    #[arg(long = "class")]
    pub class_index: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pixel groups as `COLSxROWS`.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<PixelGrid>,
    /// auto, exact or sampled.
    #[arg(long, value_parser = parse_lower::<EstimatorMode>)]
    pub estimator: Option<EstimatorMode>,
    #[arg(long)]
    pub permutations: Option<usize>,
    /// baseline or empirical.
    #[arg(long)]
    pub imputation: Option<String>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// absolute or signed.
    #[arg(long, value_parser = parse_lower::<WeightMode>)]
    pub weights: Option<WeightMode>,
    #[arg(long)]
    pub grid_steps: Option<usize>,
    #[arg(long)]
    pub ig_steps: Option<usize>,
    #[arg(long)]
    pub sg_samples: Option<usize>,
    #[arg(long)]
    pub sg_sigma: Option<f64>,
    /// confidence or logit.
    #[arg(long, value_parser = parse_lower::<GradientTarget>)]
    pub gradient_target: Option<GradientTarget>,
    /// gaussian or patch-baseline.
    #[arg(long)]
    pub perturbation: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub infd_samples: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub probes: Option<usize>,
    /// Latent dimensions for sweep-dims, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Run sweep-dims on the built-in synthetic task with this task seed.
    #[arg(long)]
    pub synthetic: Option<u64>,
    /// How many synthetic evaluation images a sweep scores.
    #[arg(long)]
    pub eval_images: Option<usize>,
    /// Also write positive and negative heatmaps.
    #[arg(long)]
    pub signed: bool,
}

fn parse_grid(s: &str) -> std::result::Result<PixelGrid, String> {
    let (c, r) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected COLSxROWS, got `{s}`"))?;
    let n = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok(PixelGrid::new(n(c)?, n(r)?))
}

fn parse_lower<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|e| e.to_string())
}

/// The merged configuration of one invocation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub codec: Option<PathBuf>,
    pub image: Vec<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub method: Vec<Method>,
    pub class_index: Option<usize>,
    /// One seed for every random stream; seeds inside `explain` and `metrics`
    /// are overwritten by it.
    pub seed: u64,
    pub explain: ExplainSettings,
    pub metrics: MetricSettings,
    pub dims: Vec<usize>,
    pub latent_dim: Option<usize>,
    pub synthetic: Option<u64>,
    pub eval_images: Option<usize>,
    pub signed: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("{}: config", path.display()), e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut cfg.model, &mut cfg.codec, &mut cfg.baseline, &mut cfg.dataset, &mut cfg.out_dir, &mut cfg.output]
            .into_iter()
            .flatten()
        {
            rebase(p);
        }
        cfg.image.iter_mut().for_each(rebase);
        Ok(cfg)
    }

    /// Config file (if any) overridden by flags.
    pub fn from_args(args: &RunArgs) -> Result<Self> {
        let mut c = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        // `.into()` rewraps values for fields that are themselves options.
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = args.$flag.clone() { $field = v.into(); })*
            };
        }
        set! {
            model => c.model, codec => c.codec, baseline => c.baseline, dataset => c.dataset,
            out_dir => c.out_dir, output => c.output, class_index => c.class_index, seed => c.seed,
            latent_dim => c.latent_dim, synthetic => c.synthetic, eval_images => c.eval_images,
            grid => c.explain.grid, estimator => c.explain.estimator,
            permutations => c.explain.num_permutations, weights => c.explain.weight_mode,
            grid_steps => c.explain.grid_steps, ig_steps => c.explain.ig_steps,
            sg_samples => c.explain.smoothgrad_samples, sg_sigma => c.explain.smoothgrad_sigma,
            gradient_target => c.explain.gradient_target, infd_samples => c.metrics.perturbation.num_samples,
            radius => c.metrics.radius, probes => c.metrics.num_probes,
        }
        if !args.image.is_empty() {
            c.image = args.image.clone();
        }
        if !args.method.is_empty() {
            c.method = args.method.clone();
        }
        if !args.dims.is_empty() {
            c.dims = args.dims.clone();
        }
        c.signed |= args.signed;

        match args.imputation.as_deref() {
            None => {}
            Some("baseline") => c.explain.imputation = ImputationSpec::Baseline,
            Some("empirical") => c.explain.imputation = ImputationSpec::Empirical { mc_samples: 16 },
            Some(other) => return Err(Error::Config(format!("unknown imputation `{other}`"))),
        }
        if let (Some(n), ImputationSpec::Empirical { mc_samples }) = (args.mc_samples, &mut c.explain.imputation) {
            *mc_samples = n;
        }

        match args.perturbation.as_deref() {
            None => {}
            Some("gaussian") => {
                c.metrics.perturbation.kind = PerturbationKind::Gaussian { sigma: crate::metrics::DEFAULT_SIGMA }
            }
            Some("patch-baseline") => c.metrics.perturbation.kind = PerturbationKind::PatchBaseline { patch_size: 2 },
            Some(other) => return Err(Error::Config(format!("unknown perturbation `{other}`"))),
        }
        match (&mut c.metrics.perturbation.kind, args.sigma, args.patch_size) {
            (PerturbationKind::Gaussian { sigma }, Some(s), _) => *sigma = s,
            (PerturbationKind::PatchBaseline { patch_size }, _, Some(p)) => *patch_size = p,
            (_, None, None) => {}
            _ => return Err(Error::Config("--sigma/--patch-size do not match the perturbation kind".into())),
        }

        c.explain.seed = c.seed;
        c.metrics.perturbation.seed = c.seed;
        c.metrics.probe_seed = c.seed;
        Ok(c)
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    fn require<'a>(&self, value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing --{name}")))
    }
}

/// Loaded model, optional codec, baseline and pool.
struct Inputs {
    model: BlackBoxModel,
    codec: Option<ManifoldCodec>,
    baseline: Option<Image>,
    dataset: Option<Vec<Image>>,
}

impl Inputs {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let model = BlackBoxModel::load(cfg.require(&cfg.model, "model")?)?;
        let codec = cfg.codec.as_deref().map(ManifoldCodec::load).transpose()?;
        if let Some(c) = &codec {
            if c.shape() != model.input_shape() {
                return Err(Error::shape(model.input_shape(), c.shape()));
            }
        }
        let baseline = cfg.baseline.as_deref().map(formats::load_image).transpose()?;
        let dataset = cfg.dataset.as_deref().map(formats::load_dataset).transpose()?;
        Ok(Inputs {
            model,
            codec,
            baseline,
            dataset,
        })
    }

    fn context(&self) -> Result<Context<'_>> {
        let mut ctx = Context::new(&self.model, self.codec.as_ref());
        if let Some(b) = &self.baseline {
            ctx = ctx.with_baseline(b.clone())?;
        }
        if let (Some(data), Some(_)) = (&self.dataset, &self.codec) {
            ctx = ctx.with_pool(data)?;
        }
        Ok(ctx)
    }
}

fn load_images(cfg: &RunConfig, shape: Shape) -> Result<Vec<Image>> {
    if cfg.image.is_empty() {
        return Err(Error::Config("missing --image".into()));
    }
    cfg.image
        .iter()
        .map(|p| {
            let im = formats::load_image(p)?;
            im.ensure_shape(shape)?;
            Ok(im)
        })
        .collect()
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct FusionSidecar<'a> {
    alpha: f64,
    chosen_objective: f64,
    objective_curve: &'a [crate::fusion::CurvePoint],
    traditional_total: f64,
    manifold_total: f64,
}

#[derive(Serialize)]
struct ExplainSidecar<'a> {
    method: Method,
    class_index: usize,
    seed: u64,
    shape: Shape,
    total: f64,
    /// `f(I)_t − f(baseline)_t`.
    confidence_delta: f64,
    fusion: Option<FusionSidecar<'a>>,
    traditional_attribution: Option<&'a AttributionVector>,
    manifold_attribution: Option<&'a AttributionVector>,
    manifold_code: Option<&'a [f64]>,
    settings: &'a ExplainSettings,
    files: Vec<String>,
}

/// Files written by a command, relative names in write order.
pub type Written = Vec<PathBuf>;

pub fn cmd_explain(cfg: &RunConfig, out_dir: &Path) -> Result<Written> {
    let inputs = Inputs::load(cfg)?;
    let ctx = inputs.context()?;
    let image = match load_images(cfg, inputs.model.input_shape())?.as_slice() {
        [one] => one.clone(),
        _ => return Err(Error::Config("explain takes exactly one --image".into())),
    };
    let method = match cfg.method.as_slice() {
        [] => Method::Fusion,
        [m] => *m,
        _ => return Err(Error::Config("explain takes exactly one --method".into())),
    };
    let class_index = match cfg.class_index {
        Some(t) => t,
        None => ctx.top_class(&image)?,
    };
    let e = explain(&ctx, &image, class_index, method, &cfg.explain)?;
    create_dir(out_dir)?;

    let stem = method.name();
    let comment = format!("fusion-shap {stem} class={class_index} seed={}", cfg.seed);
    let mut files = vec![(format!("{stem}.csv"), formats::values_to_csv(e.map.shape(), e.map.values()).into_bytes())];
    if cfg.signed {
        let (pos, neg) = formats::signed_heatmaps(&e.map, &comment);
        files.push((format!("{stem}.pos.pgm"), pos));
        files.push((format!("{stem}.neg.pgm"), neg));
    }
    files.push((format!("{stem}.pgm"), formats::heatmap_pgm(&e.map, &comment)));

    let sidecar = ExplainSidecar {
        method,
        class_index,
        seed: cfg.seed,
        shape: e.map.shape(),
        total: e.map.total(),
        confidence_delta: inputs.model.score(&image, class_index)? - inputs.model.score(&ctx.baseline, class_index)?,
        fusion: e.fusion.as_ref().map(|f| FusionSidecar {
            alpha: f.alpha,
            chosen_objective: f.chosen_objective,
            objective_curve: &f.objective_curve,
            traditional_total: e.traditional.as_ref().map_or(0.0, |t| t.0.total()),
            manifold_total: e.manifold.as_ref().map_or(0.0, |m| m.map.total()),
        }),
        traditional_attribution: e.traditional.as_ref().map(|t| &t.1),
        manifold_attribution: e.manifold.as_ref().map(|m| &m.attribution),
        manifold_code: e.manifold.as_ref().map(|m| m.code.as_slice()),
        settings: &cfg.explain,
        files: files.iter().map(|f| f.0.clone()).collect(),
    };
    files.push((format!("{stem}.json"), to_json(&sidecar).into_bytes()));
    write_all(out_dir, files)
}

fn write_all(out_dir: &Path, files: Vec<(String, Vec<u8>)>) -> Result<Written> {
    files
        .into_iter()
        .map(|(name, bytes)| {
            let path = out_dir.join(name);
            write_file(&path, bytes)?;
            Ok(path)
        })
        .collect()
}

#[derive(Serialize)]
struct MetricsRow {
    #[serde(flatten)]
    report: MetricReport,
    complete_allocation: AxiomCheck,
    no_unrelated_allocation: AxiomCheck,
    images: usize,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    seed: u64,
    images: Vec<String>,
    settings: &'a ExplainSettings,
    rows: Vec<MetricsRow>,
}

fn status(c: &AxiomCheck) -> &'static str {
    if c.status.passed() {
        "pass"
    } else {
        "fail"
    }
}

pub fn cmd_metrics(cfg: &RunConfig, out_dir: &Path) -> Result<Written> {
    let inputs = Inputs::load(cfg)?;
    let ctx = inputs.context()?;
    let images = load_images(cfg, inputs.model.input_shape())?;
    let methods: Vec<Method> = if cfg.method.is_empty() {
        Method::ALL
            .into_iter()
            .filter(|m| inputs.codec.is_some() || !m.needs_codec())
            .collect()
    } else {
        cfg.method.clone()
    };
    let mut rows = Vec::with_capacity(methods.len());
    for &method in &methods {
        let s = score_method(&ctx, &images, method, &cfg.explain, &cfg.metrics)?;
        rows.push(MetricsRow {
            report: MetricReport {
                method: method.name().to_string(),
                infidelity: s.infidelity,
                sensitivity: s.sensitivity,
                perturbation: cfg.metrics.perturbation,
                radius: cfg.metrics.radius,
                num_probes: cfg.metrics.num_probes,
                probe_seed: cfg.metrics.probe_seed,
            },
            complete_allocation: s.complete_allocation,
            no_unrelated_allocation: s.no_unrelated_allocation,
            images: s.images,
        });
    }
    let mut csv = String::from("method,infidelity,sensitivity,complete_allocation,no_unrelated_allocation,seed\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.report.method,
            r.report.infidelity,
            r.report.sensitivity,
            status(&r.complete_allocation),
            status(&r.no_unrelated_allocation),
            cfg.seed
        ));
    }
    let file = MetricsFile {
        seed: cfg.seed,
        images: cfg.image.iter().map(|p| p.display().to_string()).collect(),
        settings: &cfg.explain,
        rows,
    };
    create_dir(out_dir)?;
    write_all(
        out_dir,
        vec![
            ("metrics.csv".into(), csv.into_bytes()),
            ("metrics.json".into(), to_json(&file).into_bytes()),
        ],
    )
}

pub const SWEEP_HEADER: &str = "dim,infidelity,sensitivity,status,seed";

pub fn cmd_sweep_dims(cfg: &RunConfig, out_dir: &Path) -> Result<Written> {
    let dims = if cfg.dims.is_empty() {
        DEFAULT_SWEEP_DIMS.to_vec()
    } else {
        cfg.dims.clone()
    };
    let (model, dataset, images) = match cfg.synthetic {
        Some(task_seed) => {
            let task = synthetic_task(task_seed)?;
            let n = cfg.eval_images.unwrap_or(DEFAULT_SWEEP_IMAGES).min(task.eval.len());
            (task.model, task.train, task.eval[..n].to_vec())
        }
        None => {
            let model = BlackBoxModel::load(cfg.require(&cfg.model, "model")?)?;
            let dataset = formats::load_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
            let images = load_images(cfg, model.input_shape())?;
            (model, dataset, images)
        }
    };
    let rows = sweep_dims(&model, &dataset, &images, &dims, &cfg.explain, &cfg.metrics)?;
    let mut csv = format!("{SWEEP_HEADER}\n");
    for r in &rows {
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let status = match &r.status {
            SweepStatus::Ok => "ok".to_string(),
            SweepStatus::Skipped(why) => {
                eprintln!("warning: dim {} skipped: {why}", r.dim);
                format!("skipped {}", why.split(':').next().unwrap_or(why))
            }
        };
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.dim,
            num(r.infidelity),
            num(r.sensitivity),
            status,
            cfg.seed
        ));
    }
    create_dir(out_dir)?;
    write_all(out_dir, vec![("sweep.csv".into(), csv.into_bytes())])
}

pub fn cmd_fit_codec(cfg: &RunConfig, out_dir: &Path) -> Result<Written> {
    let dataset = formats::load_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    let latent = cfg
        .latent_dim
        .ok_or_else(|| Error::Config("missing --latent-dim".into()))?;
    let codec = fit_linear_codec(&dataset, latent)?;
    let path = match &cfg.output {
        Some(p) => p.clone(),
        None => {
            create_dir(out_dir)?;
            out_dir.join("codec.json")
        }
    };
    codec.save(&path)?;
    println!("latent_dim={latent} rmse={}", round_trip_rmse(&codec, &dataset)?);
    Ok(vec![path])
}

pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<Written> {
    let task = synthetic_task(cfg.seed)?;
    create_dir(out_dir)?;
    let mut files = vec![
        ("model.json".to_string(), task.model.to_json().into_bytes()),
        ("train.json".to_string(), formats::dataset_json(&task.train)?.into_bytes()),
        ("eval.json".to_string(), formats::dataset_json(&task.eval)?.into_bytes()),
    ];
    for (k, im) in task.eval.iter().enumerate() {
        files.push((format!("eval_{k}.csv"), formats::image_to_csv(im).into_bytes()));
    }
    write_all(out_dir, files)
}

pub fn run(cli: Cli) -> Result<Written> {
    let args = match &cli.command {
        Command::Explain(a) | Command::Metrics(a) | Command::SweepDims(a) | Command::FitCodec(a) | Command::Synth(a) => a,
    };
    let cfg = RunConfig::from_args(args)?;
    let out_dir = cfg.out_dir(args.out_dir.as_deref());
    match cli.command {
        Command::Explain(_) => cmd_explain(&cfg, &out_dir),
        Command::Metrics(_) => cmd_metrics(&cfg, &out_dir),
        Command::SweepDims(_) => cmd_sweep_dims(&cfg, &out_dir),
        Command::FitCodec(_) => cmd_fit_codec(&cfg, &out_dir),
        Command::Synth(_) => cmd_synth(&cfg, &out_dir),
    }
}

/// Parses `args`, runs, and returns the process exit code. Failures print a
/// single `error[CODE]: message` line to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or_default();
            eprintln!("error[E_USAGE]: {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    match run(cli) {
        Ok(written) => {
            for p in written {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            1
        }
    }
}
