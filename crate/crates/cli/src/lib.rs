//! Command-line front end: parameter accounting, gradient checks, synthetic
//! data, training, enhancement and evaluation.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numeric failure
//! (divergence, non-finite values, failed gradient check).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use ttnet::audio::{apply_mask_resynthesize, extract_features, segmental_snr, GammatoneBank, CHANNELS, HOP, WINDOW};
use ttnet::config::RunConfig;
use ttnet::format::{load_model, read_wav, save_model, write_wav, FloatWidth};
use ttnet::gradcheck::{self, Suite};
use ttnet::lstm::CountConvention;
use ttnet::synth::{self, DEFAULT_SNRS};
use ttnet::tensornet::{mask_mse_loss, train, Example, ParamTable};
use ttnet::{Error, TensorNet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ttnet", version, about = "Tensor-train LSTM speech enhancement toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer parameter counts against dense baselines.
    CountParams(CountArgs),
    /// Finite-difference verification of every hand-written gradient.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic noisy-speech corpus.
    SynthData(SynthArgs),
    /// Train a mask estimator on a synthetic corpus.
    Train(TrainArgs),
    /// Enhance one noisy WAV file.
    Enhance(EnhanceArgs),
    /// Mask MSE and segmental-SNR gain per SNR bucket.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct CountArgs {
    /// `table1` counts an input-to-hidden fused map per LSTM; `model` counts what is stored.
    #[arg(long, default_value = "table1")]
    pub convention: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "fig2-reduced")]
    pub size: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Scale one analytic gradient entry per check by (1 + value).
    #[arg(long, hide = true)]
    pub inject_fault: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub utterances: usize,
    /// Comma-separated SNRs in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snr: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Utterance length in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub seconds: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV; defaults to the model path with `.report.csv`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `epochs` from the config.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Required unless `--oracle` is given.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Use the ideal ratio mask instead of model predictions.
    #[arg(long)]
    pub oracle: bool,
    /// Write the CSV table here instead of printing it.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::CountParams(a) => count_params(&a, out),
        Command::Gradcheck(a) => run_gradcheck(&a, out),
        Command::SynthData(a) => synth_data(&a, out),
        Command::Train(a) => run_train(&a, out, err),
        Command::Enhance(a) => enhance(&a, out),
        Command::Evaluate(a) => evaluate(&a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Invalid(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_INVALID
        }
        Err(Failure::Numeric(msg)) => {
            let _ = writeln!(err, "numeric failure: {msg}");
            EXIT_NUMERIC
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Invalid(format!("{}: {}", p.display(), e))),
        None => Ok(RunConfig::default()),
    }
}

/// `1234567` -> `1,234,567`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Three significant figures in `d.dde-x` form.
pub fn rate(r: f64) -> String {
    format!("{r:.2e}")
}

pub fn render_param_table(table: &ParamTable) -> String {
    let mut s = format!(
        "{:<22} {:>12} {:>16} {:>12}\n",
        "layer", "tt_params", "dense_params", "compression"
    );
    for l in &table.layers {
        s.push_str(&format!(
            "{:<22} {:>12} {:>16} {:>12}\n",
            l.name,
            thousands(l.tensor_net),
            thousands(l.dense_baseline),
            rate(l.rate())
        ));
    }
    s.push_str(&format!(
        "{:<22} {:>12} {:>16} {:>12}\n",
        "Total",
        thousands(table.total_tensor_net()),
        thousands(table.total_dense()),
        rate(table.total_rate())
    ));
    s
}

fn count_params(a: &CountArgs, out: &mut dyn Write) -> CmdResult {
    let convention: CountConvention = a.convention.parse()?;
    let cfg = load_config(a.config.as_deref())?;
    let model = TensorNet::zeros(&cfg.architecture, 0.0)?;
    let table = model.count_params(convention)?;
    write!(out, "{}", render_param_table(&table))?;
    match convention {
        CountConvention::Table1 => {
            if table.total_tensor_net() == 32_760 && table.layers.get(1).map(|l| l.tensor_net) == Some(10_256) {
                writeln!(
                    out,
                    "note: TT-LSTM layers 2 and 3 share one shape and both count 10,256; a printed 10,255 for layer 2 \
                     is a typo, since only 10,256 sums to the 32,760 total."
                )?;
            }
            writeln!(
                out,
                "note: table1 counts each TT-LSTM as one gate-fused map over the layer input only, plus 4H gate biases."
            )?;
        }
        CountConvention::Model => {
            let reference = model.count_params(CountConvention::Table1)?;
            let diff = table.total_tensor_net() as i64 - reference.total_tensor_net() as i64;
            writeln!(
                out,
                "note: model counts the stored gate-fused map over the concatenation [h, x] (width H + D); \
                 the table1 convention maps the input x alone and totals {} ({:+} here).",
                thousands(reference.total_tensor_net()),
                diff
            )?;
        }
    }
    Ok(())
}

fn run_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> CmdResult {
    let suite: Suite = a.size.parse()?;
    let report = gradcheck::run(suite, a.seed, a.inject_fault)?;
    write!(out, "{}", report.render())?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "max relative error {:.3e} exceeds {:.0e}",
            report.max_error(),
            gradcheck::TOLERANCE
        )))
    }
}

fn synth_data(a: &SynthArgs, out: &mut dyn Write) -> CmdResult {
    let snrs = a.snr.clone().unwrap_or_else(|| DEFAULT_SNRS.to_vec());
    let utterances = synth::generate(a.utterances, &snrs, a.seconds, a.seed)?;
    let bank = GammatoneBank::new();
    let entries = synth::write_dataset(&a.out, &utterances, &bank)?;
    writeln!(out, "wrote {} utterances to {}", entries.len(), a.out.display())?;
    for e in &entries {
        writeln!(
            out,
            "{} snr={} noise={} frames={}",
            e.id, e.snr_db, e.noise_kind, e.frames
        )?;
    }
    Ok(())
}

fn load_data(dir: &Path) -> Result<Vec<(synth::ManifestEntry, Example)>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::Invalid(format!(
            "data directory {} does not exist",
            dir.display()
        )));
    }
    Ok(synth::load_examples(dir)?)
}

fn run_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let data = load_data(&a.data)?;
    if data.is_empty() {
        return Err(Failure::Invalid(format!("{} lists no utterances", a.data.display())));
    }
    let mut examples: Vec<Example> = data.into_iter().map(|(_, ex)| ex).collect();
    let n_val = (examples.len() as f64 * cfg.train.val_fraction).floor() as usize;
    if n_val >= examples.len() {
        return Err(Failure::Invalid("validation split leaves no training data".into()));
    }
    let validation = examples.split_off(examples.len() - n_val);
    let mut model = TensorNet::new(&cfg.architecture, cfg.train.seed, cfg.train.dropout)?;
    let started = Instant::now();
    let report = train(&mut model, &examples, &validation, &cfg.train)?;
    let _ = writeln!(err, "trained in {:.1} s", started.elapsed().as_secs_f64());
    writeln!(out, "initial loss {:.6e}", report.initial_loss)?;
    for e in 0..report.train_loss.len() {
        write!(
            out,
            "epoch {:>3}/{}  train_loss={:.6e}  eval_loss={:.6e}",
            e + 1,
            report.train_loss.len(),
            report.train_loss[e],
            report.eval_loss[e]
        )?;
        if let Some(v) = report.val_loss[e] {
            write!(out, "  val_loss={v:.6e}")?;
        }
        writeln!(out)?;
    }
    save_model(&model, &a.out, FloatWidth::F64)?;
    let report_path = a.report.clone().unwrap_or_else(|| a.out.with_extension("report.csv"));
    std::fs::write(&report_path, report.to_csv())?;
    writeln!(out, "model written to {}", a.out.display())?;
    writeln!(out, "report written to {}", report_path.display())?;
    Ok(())
}

fn check_audio_model(model: &TensorNet) -> CmdResult {
    if model.feature_dim() != ttnet::audio::FEATURE_WIDTH || model.mask_dim() != CHANNELS {
        return Err(Failure::Invalid(format!(
            "model maps {} features to {} mask values; audio needs {} -> {}",
            model.feature_dim(),
            model.mask_dim(),
            ttnet::audio::FEATURE_WIDTH,
            CHANNELS
        )));
    }
    Ok(())
}

fn enhance(a: &EnhanceArgs, out: &mut dyn Write) -> CmdResult {
    let model = load_model(&a.model)?;
    check_audio_model(&model)?;
    let noisy = read_wav(&a.input)?;
    let bank = GammatoneBank::new();
    let features = extract_features(&bank, &noisy)?;
    let mask = model.forward(&features, false, 0)?;
    let enhanced = apply_mask_resynthesize(&noisy, &mask, &bank)?;
    write_wav(&a.out, &enhanced)?;
    writeln!(
        out,
        "enhanced {} samples ({} frames) -> {}",
        enhanced.len(),
        mask.rows(),
        a.out.display()
    )?;
    Ok(())
}

#[derive(Default)]
struct Bucket {
    count: usize,
    mask_mse: f64,
    gain: f64,
}

fn evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> CmdResult {
    let model = match (&a.model, a.oracle) {
        (_, true) => None,
        (Some(p), false) => {
            let m = load_model(p)?;
            check_audio_model(&m)?;
            Some(m)
        }
        (None, false) => return Err(Failure::Invalid("--model is required unless --oracle is given".into())),
    };
    let data = load_data(&a.data)?;
    if data.is_empty() {
        return Err(Failure::Invalid(format!("{} lists no utterances", a.data.display())));
    }
    let bank = GammatoneBank::new();
    let mut buckets: BTreeMap<i64, (f64, Bucket)> = BTreeMap::new();
    for (entry, ex) in &data {
        let mask = match &model {
            Some(m) => m.forward(&ex.features, false, 0)?,
            None => ex.target.clone(),
        };
        let mse = mask_mse_loss(&mask, &ex.target)?;
        let (clean, noisy) = synth::load_waves(&a.data, entry)?;
        let enhanced = apply_mask_resynthesize(&noisy, &mask, &bank)?;
        let before = segmental_snr(&clean.samples, &noisy.samples, WINDOW, HOP)?;
        let after = segmental_snr(&clean.samples, &enhanced.samples, WINDOW, HOP)?;
        let key = (entry.snr_db * 1000.0).round() as i64;
        let b = &mut buckets.entry(key).or_insert((entry.snr_db, Bucket::default())).1;
        b.count += 1;
        b.mask_mse += mse;
        b.gain += after - before;
    }
    let mut csv = String::from("snr,count,mask_mse,segsnr_gain\n");
    let mut table = format!(
        "{:>8} {:>6} {:>12} {:>14}   ({})\n",
        "snr_db",
        "count",
        "mask_mse",
        "segsnr_gain",
        if a.oracle { "oracle mask" } else { "model mask" }
    );
    let (mut n, mut mse_sum, mut gain_sum) = (0usize, 0.0, 0.0);
    for (snr, b) in buckets.values() {
        let (mse, gain) = (b.mask_mse / b.count as f64, b.gain / b.count as f64);
        csv.push_str(&format!("{},{},{:.6},{:.4}\n", snr, b.count, mse, gain));
        table.push_str(&format!("{:>8} {:>6} {:>12.6} {:>14.4}\n", snr, b.count, mse, gain));
        n += b.count;
        mse_sum += b.mask_mse;
        gain_sum += b.gain;
    }
    table.push_str(&format!(
        "{:>8} {:>6} {:>12.6} {:>14.4}\n",
        "all",
        n,
        mse_sum / n as f64,
        gain_sum / n as f64
    ));
    write!(out, "{table}")?;
    match &a.csv {
        Some(p) => {
            std::fs::write(p, &csv)?;
            writeln!(out, "csv written to {}", p.display())?;
        }
        None => write!(out, "\n{csv}")?,
    }
    Ok(())
}
