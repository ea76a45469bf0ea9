//! `mzmix` binary: the decomposition pipeline, its individual stages, the
//! synthetic-spectrum simulator and the evaluation harness as subcommands.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mzmix::config::PipelineConfig;
use mzmix::error::{Error, Result};
use mzmix::evaluate::{argmax_f1, evaluate_positions, sweep_parameter, SweepParam};
use mzmix::io;
use mzmix::pipeline::{
    run_pipeline, stage_baseline, stage_decompose, stage_detect, stage_partition,
    stage_postprocess, EvaluationBundle, PartitionManifest,
};
use mzmix::plot::emit_plot;
use mzmix::preprocess::mean_spectrum;
use mzmix::simulate::{generate_dataset, SimConfig};
use mzmix::spectrum::{Spectrum, SpectrumSet};

#[derive(Parser)]
#[command(
    name = "mzmix",
    version,
    about = "Gaussian mixture decomposition of mass spectra with automatic signal partitioning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a ground-truth manifest.
    Simulate(SimulateArgs),
    /// Average spectra and subtract the baseline.
    Preprocess(PreprocessArgs),
    /// Detect peaks; emits position,height,fwhh,quality CSV.
    Detect(DetectArgs),
    /// Split a corrected spectrum into splitters and segments.
    Partition(PartitionArgs),
    /// Fit the segments of a partition and aggregate the model.
    Decompose(DecomposeArgs),
    /// Filter noise components and merge near-duplicates of a model.
    Postprocess(PostprocessArgs),
    /// Score detections or a model against a truth manifest.
    Evaluate(EvaluateArgs),
    /// Run the whole chain in one process.
    Pipeline(PipelineArgs),
    /// Render a spectrum / model / peaks overlay as SVG.
    Plot(PlotArgs),
}

/// Pipeline tunables shared by several subcommands. A config file provides
/// the base values; any flag set here overrides it.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    baseline_window: Option<f64>,
    #[arg(long)]
    baseline_quantile: Option<f64>,
    /// Skip baseline estimation and subtraction.
    #[arg(long)]
    no_baseline_correction: bool,
    #[arg(long)]
    smoothing_halfwidth: Option<f64>,
    #[arg(long)]
    min_snr: Option<f64>,
    #[arg(long)]
    min_quality: Option<f64>,
    #[arg(long)]
    min_gap: Option<f64>,
    #[arg(long)]
    max_gap: Option<f64>,
    #[arg(long)]
    quality_search_mult: Option<f64>,
    #[arg(long)]
    margin_mult: Option<f64>,
    #[arg(long)]
    taper_mult: Option<f64>,
    #[arg(long)]
    floor_frac: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha_min: Option<f64>,
    #[arg(long)]
    sigma_min_mult: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// EM convergence tolerance (config key `rel_tol`).
    #[arg(long)]
    em_tol: Option<f64>,
    #[arg(long)]
    k_max_cap: Option<usize>,
    #[arg(long)]
    mz_thr: Option<f64>,
    #[arg(long)]
    sigma_thr: Option<f64>,
    /// Disable the noise-component filter.
    #[arg(long)]
    no_filter: bool,
    /// Disable duplicate-component merging.
    #[arg(long)]
    no_merge: bool,
    /// Disable post-processing entirely.
    #[arg(long)]
    no_postprocess: bool,
    #[arg(long)]
    expected_cv: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    config.$field = v;
                }
            };
        }
        set!(baseline_window);
        set!(baseline_quantile);
        set!(min_snr);
        set!(min_quality);
        set!(min_gap);
        set!(max_gap);
        set!(quality_search_mult);
        set!(margin_mult);
        set!(taper_mult);
        set!(floor_frac);
        set!(epsilon);
        set!(alpha_min);
        set!(sigma_min_mult);
        set!(max_iters);
        if let Some(v) = self.em_tol {
            config.rel_tol = v;
        }
        set!(k_max_cap);
        set!(mz_thr);
        set!(sigma_thr);
        set!(expected_cv);
        set!(seed);
        if let Some(hw) = self.smoothing_halfwidth {
            config.smoothing_halfwidth = Some(hw);
        }
        if self.no_baseline_correction {
            config.baseline_enabled = false;
        }
        if self.no_filter {
            config.filter_enabled = false;
        }
        if self.no_merge {
            config.merge_enabled = false;
        }
        if self.no_postprocess {
            config.postprocess_enabled = false;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    n_components: usize,
    #[arg(long, default_value_t = 100)]
    n_samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 2000.0)]
    grid_min: f64,
    #[arg(long, default_value_t = 10000.0)]
    grid_max: f64,
    #[arg(long, default_value_t = 10000)]
    grid_points: usize,
    #[arg(long, default_value_t = 0.002)]
    peak_cv: f64,
    /// Disable the ARMA noise component.
    #[arg(long)]
    no_noise: bool,
    /// Disable the two-exponential baseline.
    #[arg(long)]
    no_baseline: bool,
    /// Directory for sample CSVs, mean.csv and truth.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input spectrum CSV; repeat to average several spectra first.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct DetectArgs {
    /// Baseline-corrected spectrum CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PartitionArgs {
    /// Baseline-corrected spectrum CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_manifest: PathBuf,
    #[arg(long)]
    out_residual: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Baseline-corrected spectrum CSV (the one partition ran on).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_diagnostics: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out_model: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Detected peak positions (first CSV column). Any detector's output.
    #[arg(long, conflicts_with = "model")]
    detected: Option<PathBuf>,
    /// Model JSON whose component means act as detected positions.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Truth manifest from `simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// Relative matching tolerance.
    #[arg(long, default_value_t = 0.003)]
    rel_tol: f64,
    /// Report JSON path (single evaluation) or CSV path (sweep).
    #[arg(long)]
    out: PathBuf,
    /// Sweep this pipeline parameter instead of a single evaluation.
    #[arg(long)]
    sweep_param: Option<String>,
    /// Comma-separated grid of sweep values.
    #[arg(long)]
    sweep_values: Option<String>,
    /// Spectrum CSV the sweep runs the pipeline on (for example mean.csv).
    #[arg(long)]
    spectrum: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PipelineArgs {
    /// Input spectrum CSV. Omit when simulating.
    #[arg(long, conflicts_with = "simulate")]
    input: Option<PathBuf>,
    /// Simulate a dataset (per --n-components/--n-samples/--seed) and run
    /// on its mean spectrum.
    #[arg(long)]
    simulate: bool,
    #[arg(long, default_value_t = 100)]
    n_components: usize,
    #[arg(long, default_value_t = 20)]
    n_samples: usize,
    #[arg(long)]
    no_noise: bool,
    #[arg(long)]
    no_baseline: bool,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_diagnostics: Option<PathBuf>,
    #[arg(long)]
    out_svg: Option<PathBuf>,
    /// Write the simulated truth manifest here.
    #[arg(long)]
    out_truth: Option<PathBuf>,
    /// Write the baseline-corrected input here.
    #[arg(long)]
    out_corrected: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    spectrum: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Peak positions CSV (first column).
    #[arg(long)]
    peaks: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Partition(args) => cmd_partition(args),
        Command::Decompose(args) => cmd_decompose(args),
        Command::Postprocess(args) => cmd_postprocess(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::Plot(args) => cmd_plot(args),
    }
}

fn sim_config_of(
    n_components: usize,
    n_samples: usize,
    seed: u64,
    no_noise: bool,
    no_baseline: bool,
) -> SimConfig {
    let mut sim = SimConfig {
        n_components,
        n_samples,
        seed,
        ..SimConfig::default()
    };
    sim.noise.enabled = !no_noise;
    sim.baseline.enabled = !no_baseline;
    sim
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut sim = sim_config_of(
        args.n_components,
        args.n_samples,
        args.seed,
        args.no_noise,
        args.no_baseline,
    );
    sim.grid_min = args.grid_min;
    sim.grid_max = args.grid_max;
    sim.grid_points = args.grid_points;
    sim.peak_cv = args.peak_cv;
    let (set, truth) = generate_dataset(&sim)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for m in 0..set.n_spectra() {
        let path = args.out_dir.join(format!("sample_{m:04}.csv"));
        io::write_spectrum_csv(path, &set.spectrum(m)?)?;
    }
    io::write_spectrum_csv(args.out_dir.join("mean.csv"), &mean_spectrum(&set))?;
    io::write_json(args.out_dir.join("truth.json"), &truth)?;
    println!(
        "simulated {} samples of {} components into {}",
        set.n_spectra(),
        truth.catalog.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn read_spectra_mean(paths: &[PathBuf]) -> Result<Spectrum> {
    let spectra: Result<Vec<Spectrum>> = paths.iter().map(io::read_spectrum_csv).collect();
    let spectra = spectra?;
    if spectra.len() == 1 {
        return Ok(spectra.into_iter().next().unwrap());
    }
    Ok(mean_spectrum(&SpectrumSet::from_spectra(spectra)?))
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let config = args.config.build()?;
    let input = read_spectra_mean(&args.input)?;
    let corrected = stage_baseline(&input, &config)?;
    io::write_spectrum_csv(&args.output, &corrected)?;
    println!(
        "preprocessed {} spectra -> {}",
        args.input.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let config = args.config.build()?;
    let spectrum = io::read_spectrum_csv(&args.input)?;
    let (peaks, avg_cv) = stage_detect(&spectrum, &config)?;
    io::write_peaklist_csv(&args.output, &peaks)?;
    println!(
        "detected {} peaks (avg cv {avg_cv:.6}) -> {}",
        peaks.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_partition(args: PartitionArgs) -> Result<()> {
    let config = args.config.build()?;
    let spectrum = io::read_spectrum_csv(&args.input)?;
    let (peaks, avg_cv) = stage_detect(&spectrum, &config)?;
    let stage = stage_partition(&spectrum, &peaks, avg_cv, &config)?;
    io::write_spectrum_csv(&args.out_residual, &stage.residual)?;
    let residual_name = args
        .out_residual
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.out_residual.display().to_string());
    let manifest = PartitionManifest::from_stage(&stage, residual_name);
    io::write_json(&args.out_manifest, &manifest)?;
    println!(
        "{} splitters, {} segments, {} rejected anchors -> {}",
        stage.splitters.len(),
        stage.segments.len(),
        stage.rejected_anchors.len(),
        args.out_manifest.display()
    );
    Ok(())
}

fn resolve_sibling(manifest_path: &Path, name: &str) -> PathBuf {
    let as_path = Path::new(name);
    if as_path.is_absolute() {
        return as_path.to_path_buf();
    }
    manifest_path
        .parent()
        .map(|dir| dir.join(name))
        .unwrap_or_else(|| as_path.to_path_buf())
}

fn cmd_decompose(args: DecomposeArgs) -> Result<()> {
    let config = args.config.build()?;
    let spectrum = io::read_spectrum_csv(&args.input)?;
    let manifest = io::read_partition_manifest(&args.manifest)?;
    let residual = io::read_spectrum_csv(resolve_sibling(&args.manifest, &manifest.residual_csv))?;
    let segments = manifest.segments_on(&residual)?;
    let (model, diagnostics) = stage_decompose(
        &spectrum,
        &manifest.splitters,
        &segments,
        manifest.avg_cv,
        &config,
    )?;
    io::write_model_json(&args.out_model, &model)?;
    if let Some(path) = &args.out_diagnostics {
        io::write_json(path, &diagnostics)?;
    }
    println!(
        "aggregated {} components -> {}",
        model.k(),
        args.out_model.display()
    );
    Ok(())
}

fn cmd_postprocess(args: PostprocessArgs) -> Result<()> {
    let config = args.config.build()?;
    let model = io::read_model_json(&args.model)?;
    let (out, filter_applied, removed, warnings) = stage_postprocess(&model, &config)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    io::write_model_json(&args.out_model, &out)?;
    println!(
        "postprocessed K {} -> {} (filter applied: {filter_applied}, removed {removed})",
        model.k(),
        out.k()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let truth = io::read_truth_json(&args.truth)?;
    let truth_positions = truth.true_positions();
    if let Some(param) = &args.sweep_param {
        let param: SweepParam = param.parse()?;
        let values: Vec<f64> = args
            .sweep_values
            .as_deref()
            .ok_or_else(|| Error::Config("--sweep-values required with --sweep-param".into()))?
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad sweep value `{v}`")))
            })
            .collect::<Result<_>>()?;
        let spectrum_path = args
            .spectrum
            .as_ref()
            .ok_or_else(|| Error::Config("--spectrum required for a sweep".into()))?;
        let spectrum = io::read_spectrum_csv(spectrum_path)?;
        let base = args.config.build()?;
        let points = sweep_parameter(&base, param, &values, &spectrum, &truth_positions, args.rel_tol);
        let mut csv = String::from("param,value,n_true,n_detected,n_matched,fdr,sensitivity,f1,error\n");
        for p in &points {
            match (&p.report, &p.error) {
                (Some(r), _) => csv.push_str(&format!(
                    "{param},{},{},{},{},{},{},{},\n",
                    p.value, r.n_true, r.n_detected, r.n_matched_true, r.fdr, r.sensitivity, r.f1
                )),
                (None, Some(e)) => {
                    csv.push_str(&format!("{param},{},,,,,,,\"{e}\"\n", p.value))
                }
                (None, None) => unreachable!("sweep point without report or error"),
            }
        }
        std::fs::write(&args.out, csv)?;
        match argmax_f1(&points) {
            Some(best) => println!(
                "swept {param} over {} points; best F1 {:.4} at {param} = {}",
                points.len(),
                best.report.as_ref().map(|r| r.f1).unwrap_or(0.0),
                best.value
            ),
            None => println!("swept {param} over {} points; no point succeeded", points.len()),
        }
        return Ok(());
    }

    let detected: Vec<f64> = match (&args.detected, &args.model) {
        (Some(path), None) => io::read_positions_csv(path)?,
        (None, Some(path)) => io::read_model_json(path)?.means(),
        _ => {
            return Err(Error::Config(
                "provide exactly one of --detected or --model".into(),
            ))
        }
    };
    let report = evaluate_positions(&detected, &truth_positions, args.rel_tol)?;
    println!(
        "n_true {} n_detected {} matched {} FDR {:.4} S {:.4} F1 {:.4}",
        report.n_true,
        report.n_detected,
        report.n_matched_true,
        report.fdr,
        report.sensitivity,
        report.f1
    );
    io::write_json(
        &args.out,
        &EvaluationBundle {
            rel_tol: args.rel_tol,
            report,
        },
    )?;
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs) -> Result<()> {
    let config = args.config.build()?;
    let input = if args.simulate {
        let sim = sim_config_of(
            args.n_components,
            args.n_samples,
            config.seed,
            args.no_noise,
            args.no_baseline,
        );
        let (set, truth) = generate_dataset(&sim)?;
        if let Some(path) = &args.out_truth {
            io::write_json(path, &truth)?;
        }
        mean_spectrum(&set)
    } else {
        let path = args
            .input
            .as_ref()
            .ok_or_else(|| Error::Config("either --input or --simulate is required".into()))?;
        io::read_spectrum_csv(path)?
    };
    let output = run_pipeline(&input, &config)?;
    io::write_model_json(&args.out_model, &output.model)?;
    if let Some(path) = &args.out_diagnostics {
        io::write_json(path, &output.diagnostics)?;
    }
    if let Some(path) = &args.out_corrected {
        io::write_spectrum_csv(path, &output.corrected)?;
    }
    if let Some(path) = &args.out_svg {
        emit_plot(
            &output.corrected,
            Some(&output.model),
            Some(&output.detected.positions()),
            path,
        )?;
    }
    println!(
        "K = {} components (aggregate {}), delta {:.4} -> {}",
        output.model.k(),
        output.aggregate.k(),
        output.diagnostics.delta_final,
        args.out_model.display()
    );
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    let spectrum = io::read_spectrum_csv(&args.spectrum)?;
    let model = args.model.as_ref().map(io::read_model_json).transpose()?;
    let peaks = args.peaks.as_ref().map(io::read_positions_csv).transpose()?;
    emit_plot(&spectrum, model.as_ref(), peaks.as_deref(), &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
