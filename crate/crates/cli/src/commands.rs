use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use trunk_snn::checkpoint::Checkpoint;
use trunk_snn::dataset::{generate_dataset_with, sample_rng, Dataset, GenerateOptions};
use trunk_snn::inference::{
    error_curve, run_inference, sample_targets, write_summary_csv, write_trajectory_csv, InferenceOptions, InferenceRun,
    InferenceTarget,
};
use trunk_snn::kinematics::{sample_random_pose, ArmSpec, GearState, Pose};
use trunk_snn::model::{median, quantile_sorted, ForwardModel};
use trunk_snn::optim::OptimizerKind;
use trunk_snn::train::{evaluate as evaluate_model, initial_checkpoint, train as run_training, write_metrics_csv, TrainError, TrainEvent};

use crate::config::{ExperimentConfig, Start};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Role {
    Train,
    Test,
}

/// Goals for `infer`: a count of random reachable targets or a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSource {
    Count(usize),
    File(PathBuf),
}

impl TargetSource {
    pub fn parse(arg: &str) -> Self {
        match arg.parse() {
            Ok(n) => TargetSource::Count(n),
            Err(_) => TargetSource::File(PathBuf::from(arg)),
        }
    }
}

const TEST_SEED_SALT: u64 = 0x7e57_0000;
const START_SEED_SALT: u64 = 0x57a7_0000;

pub const COMPARISON_HEADER: &str = "optimizer,iteration,q25_pos_err_mm,median_pos_err_mm,q75_pos_err_mm";
pub const FINAL_HEADER: &str = "optimizer,runs,q25_final_mm,median_final_mm,q75_final_mm,rising_fraction";
pub const MEDIAN_CURVE_HEADER: &str = "iteration,q25_pos_err_mm,median_pos_err_mm,q75_pos_err_mm";
pub const EVALUATION_HEADER: &str = "joint,pos_mean_mm,pos_q25_mm,pos_median_mm,pos_q75_mm,pos_q90_mm,pos_max_mm,\
rot_mean_deg,rot_q25_deg,rot_median_deg,rot_q75_deg,rot_q90_deg,rot_max_deg";

fn refuse_existing(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(CliError::io(path, "already exists (use --force to overwrite)"));
    }
    Ok(())
}

fn prepare_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::io(dir, "is not empty (use --force to overwrite)"));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

/// Writes through a temporary sibling so a crash never leaves a torn file.
fn save_checkpoint(state: &Checkpoint, path: &Path) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    state.save(&tmp).map_err(|e| CliError::format(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| CliError::format(path, e))
}

pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    Dataset::load(path).map_err(|e| CliError::format(path, e))
}

fn check_arm(what: &Path, found: &ArmSpec, expected: &ArmSpec) -> CliResult<()> {
    if found != expected {
        return Err(CliError::Usage(format!(
            "{}: arm {found:?} does not match the configured arm {expected:?}",
            what.display()
        )));
    }
    Ok(())
}

// ---- generate ----

pub fn generate(cfg: &ExperimentConfig, out: &Path, samples: Option<usize>, role: Role, force: bool) -> CliResult<Dataset> {
    refuse_existing(out, force)?;
    let (n, seed) = match role {
        Role::Train => (samples.unwrap_or(cfg.train_samples), cfg.seed),
        Role::Test => (samples.unwrap_or(cfg.test_samples), cfg.seed ^ TEST_SEED_SALT),
    };
    if n == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let opts = GenerateOptions {
        p_edge: cfg.edge_probability,
        neutral_only: false,
    };
    let data = generate_dataset_with(&cfg.arm, n, seed, opts);
    data.save(out).map_err(|e| CliError::format(out, e))?;
    let (lo, hi) = data.position_range();
    println!("wrote {} samples to {}", data.len(), out.display());
    println!("normalization {:.6} mm", data.normalization);
    for (axis, (l, h)) in ["x", "y", "z"].iter().zip(lo.iter().zip(hi)) {
        println!("{axis} range [{l:.2}, {h:.2}] mm");
    }
    Ok(data)
}

// ---- train ----

pub struct TrainPaths<'a> {
    pub data: &'a Path,
    pub test: Option<&'a Path>,
    pub out: &'a Path,
    pub metrics: Option<&'a Path>,
    pub resume: Option<&'a Path>,
}

pub fn default_metrics_path(out: &Path) -> PathBuf {
    out.with_extension("metrics.csv")
}

pub fn train(cfg: &ExperimentConfig, paths: TrainPaths<'_>, force: bool) -> CliResult<Checkpoint> {
    let metrics = paths.metrics.map(Path::to_path_buf).unwrap_or_else(|| default_metrics_path(paths.out));
    if paths.resume == Some(paths.out) {
        return Err(CliError::Usage("--resume and --out must differ; inputs are never modified".into()));
    }
    refuse_existing(paths.out, force)?;
    refuse_existing(&metrics, force)?;

    let data = load_dataset(paths.data)?;
    check_arm(paths.data, &data.spec, &cfg.arm)?;
    let test = paths.test.map(load_dataset).transpose()?;
    if let (Some(t), Some(p)) = (&test, paths.test) {
        check_arm(p, &t.spec, &cfg.arm)?;
    }

    let state = match paths.resume {
        Some(p) => {
            let mut c = load_checkpoint(p)?;
            check_arm(p, &c.model.spec, &cfg.arm)?;
            let wanted = trunk_snn::train::TrainConfig {
                seed: cfg.seed,
                epochs: c.config.epochs,
                ..cfg.train
            };
            if wanted != c.config {
                eprintln!("warning: resuming with the training settings stored in {}", p.display());
            }
            c.config.epochs = cfg.train.epochs;
            println!("resuming from {} at update {}", p.display(), c.updates);
            c
        }
        None => {
            let config = trunk_snn::train::TrainConfig { seed: cfg.seed, ..cfg.train };
            initial_checkpoint(&data, cfg.hidden, config)?
        }
    };

    let every = cfg.checkpoint_every;
    let mut write_error: Option<CliError> = None;
    let result = run_training(state, &data, test.as_ref(), |event| {
        let outcome = match event {
            TrainEvent::Update { update, state, .. } if (update + 1) % every == 0 => save_checkpoint(state, paths.out),
            TrainEvent::Epoch { row, state } => {
                println!(
                    "epoch {} update {} lr {:.2e} loss {:.6} test {:.3} mm {:.3} deg",
                    row.epoch, row.update, row.lr, row.loss, row.test_pos_mm, row.test_rot_deg
                );
                write_with(&metrics, |w| write_metrics_csv(&state.history, w))
            }
            _ => Ok(()),
        };
        if let Err(e) = outcome {
            write_error.get_or_insert(e);
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    match result {
        Ok(state) => {
            save_checkpoint(&state, paths.out)?;
            write_with(&metrics, |w| write_metrics_csv(&state.history, w))?;
            println!("wrote {} after {} updates", paths.out.display(), state.updates);
            Ok(state)
        }
        Err(TrainError::Diverged { update, loss, last_good }) => {
            save_checkpoint(&last_good, paths.out)?;
            Err(CliError::Numeric(format!(
                "training diverged at update {update} (loss {loss}); last good state written to {}",
                paths.out.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

// ---- evaluate ----

pub fn evaluate(checkpoint: &Path, data: &Path, out: Option<&Path>, force: bool) -> CliResult<()> {
    if let Some(o) = out {
        refuse_existing(o, force)?;
    }
    let model = load_checkpoint(checkpoint)?.model;
    let ds = load_dataset(data)?;
    let ev = evaluate_model(&model, &ds)?;
    println!("joint  pos median mm  pos q90 mm  rot median deg  rot q90 deg");
    for (k, (p, r)) in ev.position_mm.iter().zip(&ev.rotation_deg).enumerate() {
        println!("{:>5}  {:>13.3}  {:>10.3}  {:>14.3}  {:>11.3}", k + 1, p.median, p.q90, r.median, r.q90);
    }
    println!(
        "end-effector median {:.3} mm = {:.4} normalized units",
        ev.end_effector_position().median,
        ev.end_effector_normalized.median
    );
    if let Some(o) = out {
        write_with(o, |w| {
            writeln!(w, "{EVALUATION_HEADER}")?;
            for (k, (p, r)) in ev.position_mm.iter().zip(&ev.rotation_deg).enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    k + 1,
                    p.mean,
                    p.q25,
                    p.median,
                    p.q75,
                    p.q90,
                    p.max,
                    r.mean,
                    r.q25,
                    r.median,
                    r.q75,
                    r.q90,
                    r.max
                )?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

// ---- infer ----

/// Reads `x_mm, y_mm, z_mm, qw, qx, qy, qz` rows; a header row is optional.
/// Entries outside the arm's reach are flagged on stderr but kept.
pub fn read_targets(path: &Path, spec: &ArmSpec) -> CliResult<Vec<Pose>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut goals = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::io(path, e))?;
        let values: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(e) => return Err(CliError::Usage(format!("{}: row {}: {e}", path.display(), row + 1))),
        };
        if values.len() != 7 || values.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Usage(format!(
                "{}: row {}: expected 7 finite values x_mm,y_mm,z_mm,qw,qx,qy,qz",
                path.display(),
                row + 1
            )));
        }
        let qn = values[3..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if qn < 1e-9 {
            return Err(CliError::Usage(format!("{}: row {}: zero quaternion", path.display(), row + 1)));
        }
        let pose = Pose::from_array(values.try_into().expect("seven values"));
        if pose.p.norm() > spec.max_reach() {
            eprintln!(
                "warning: target {} at {:.1} mm lies beyond the arm's reach of {:.1} mm",
                goals.len(),
                pose.p.norm(),
                spec.max_reach()
            );
        }
        goals.push(pose);
    }
    if goals.is_empty() {
        return Err(CliError::Usage(format!("{}: no targets", path.display())));
    }
    Ok(goals)
}

fn start_state(cfg: &ExperimentConfig, spec: &ArmSpec, index: usize) -> GearState {
    match cfg.start {
        Start::Neutral => GearState::neutral(spec),
        Start::Random => sample_random_pose(spec, 0.0, &mut sample_rng(cfg.seed ^ START_SEED_SALT, index as u64)),
    }
}

fn run_all(cfg: &ExperimentConfig, model: &ForwardModel, goals: &[Pose], opts: InferenceOptions) -> CliResult<Vec<InferenceRun>> {
    goals
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let target = InferenceTarget {
                gamma1: cfg.gamma1,
                gamma2: cfg.gamma2,
                ..InferenceTarget::new(*g)
            };
            run_inference(model, &start_state(cfg, &model.spec, i), target, opts).map_err(CliError::from)
        })
        .collect()
}

/// Per-iteration `(q25, median, q75)` of the position error over runs.
pub fn quantile_curves(runs: &[InferenceRun], length: usize) -> Vec<[f64; 3]> {
    let curves: Vec<Vec<f64>> = runs.iter().map(|r| error_curve(r, length)).collect();
    (0..length)
        .map(|i| {
            let mut col: Vec<f64> = curves.iter().map(|c| c[i]).collect();
            col.sort_by(f64::total_cmp);
            [quantile_sorted(&col, 0.25), quantile_sorted(&col, 0.5), quantile_sorted(&col, 0.75)]
        })
        .collect()
}

fn curve_length(runs: &[InferenceRun]) -> usize {
    runs.iter().map(InferenceRun::iterations).max().unwrap_or(0)
}

/// True if the run's error ever exceeds its initial error.
pub fn rises_above_start(run: &InferenceRun) -> bool {
    match run.history.first() {
        Some(first) => run.history.iter().any(|r| r.pos_err_mm > first.pos_err_mm) || run.final_pos_err_mm > first.pos_err_mm,
        None => false,
    }
}

pub fn infer(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    targets: &TargetSource,
    out_dir: &Path,
    force: bool,
) -> CliResult<Vec<InferenceRun>> {
    let model = load_checkpoint(checkpoint)?.model;
    let goals = match targets {
        TargetSource::Count(n) => sample_targets(&model.spec, *n, cfg.seed),
        TargetSource::File(p) => read_targets(p, &model.spec)?,
    };
    if goals.is_empty() {
        return Err(CliError::Usage("no targets".into()));
    }
    prepare_dir(out_dir, force)?;
    let runs = run_all(cfg, &model, &goals, cfg.infer)?;

    let traj_dir = out_dir.join("trajectories");
    fs::create_dir_all(&traj_dir).map_err(|e| CliError::io(&traj_dir, e))?;
    for (i, run) in runs.iter().enumerate() {
        write_with(&traj_dir.join(format!("run_{i:04}.csv")), |w| write_trajectory_csv(run, w))?;
    }
    write_with(&out_dir.join("summary.csv"), |w| write_summary_csv(&runs, w))?;
    let curve = quantile_curves(&runs, curve_length(&runs));
    write_with(&out_dir.join("median_curve.csv"), |w| {
        writeln!(w, "{MEDIAN_CURVE_HEADER}")?;
        for (i, [q25, med, q75]) in curve.iter().enumerate() {
            writeln!(w, "{i},{q25},{med},{q75}")?;
        }
        Ok(())
    })?;

    let finals: Vec<f64> = runs.iter().map(|r| r.final_pos_err_mm).collect();
    let rot: Vec<f64> = runs.iter().map(|r| r.final_rot_err_deg).collect();
    let converged = runs.iter().filter(|r| r.converged).count();
    println!(
        "{} runs ({}, correction {}): median final error {:.3} mm, {:.3} deg; {converged} converged",
        runs.len(),
        cfg.infer.optimizer,
        if cfg.infer.correction { "on" } else { "off" },
        median(&finals),
        median(&rot)
    );
    Ok(runs)
}

// ---- compare-optimizers ----

/// Final-error summary of one optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSummary {
    pub optimizer: OptimizerKind,
    pub runs: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub rising_fraction: f64,
}

pub fn compare_optimizers(
    cfg: &ExperimentConfig,
    checkpoints: &[PathBuf],
    runs: usize,
    out_dir: &Path,
    force: bool,
) -> CliResult<Vec<OptimizerSummary>> {
    if checkpoints.is_empty() || runs == 0 {
        return Err(CliError::Usage("need at least one checkpoint and one run".into()));
    }
    if checkpoints.len() != cfg.compare_models {
        eprintln!(
            "warning: {} checkpoints given, {} configured (compare.models)",
            checkpoints.len(),
            cfg.compare_models
        );
    }
    let models: Vec<ForwardModel> = checkpoints
        .iter()
        .map(|p| load_checkpoint(p).map(|c| c.model))
        .collect::<CliResult<_>>()?;
    for (m, p) in models.iter().zip(checkpoints).skip(1) {
        check_arm(p, &m.spec, &models[0].spec)?;
    }
    prepare_dir(out_dir, force)?;

    // one target set, split across the models
    let goals = sample_targets(&models[0].spec, runs, cfg.seed);
    let share = runs.div_ceil(models.len());
    let mut summaries = Vec::new();
    let mut curve_rows = Vec::new();
    for kind in OptimizerKind::ALL {
        let opts = InferenceOptions {
            optimizer: kind,
            ..cfg.infer
        };
        let mut all = Vec::with_capacity(runs);
        for (model, chunk) in models.iter().zip(goals.chunks(share)) {
            all.extend(run_all(cfg, model, chunk, opts)?);
        }
        let mut finals: Vec<f64> = all.iter().map(|r| r.final_pos_err_mm).collect();
        finals.sort_by(f64::total_cmp);
        let rising = all.iter().filter(|r| rises_above_start(r)).count();
        let s = OptimizerSummary {
            optimizer: kind,
            runs: all.len(),
            q25: quantile_sorted(&finals, 0.25),
            median: quantile_sorted(&finals, 0.5),
            q75: quantile_sorted(&finals, 0.75),
            rising_fraction: rising as f64 / all.len() as f64,
        };
        println!(
            "{:<12} median final {:.4} mm (q25 {:.4}, q75 {:.4}); {:.0}% of runs rise above their initial error",
            kind.name(),
            s.median,
            s.q25,
            s.q75,
            100.0 * s.rising_fraction
        );
        for (i, q) in quantile_curves(&all, cfg.infer.max_iterations).into_iter().enumerate() {
            curve_rows.push((kind, i, q));
        }
        summaries.push(s);
    }

    write_with(&out_dir.join("comparison.csv"), |w| {
        writeln!(w, "{COMPARISON_HEADER}")?;
        for (kind, i, [q25, med, q75]) in &curve_rows {
            writeln!(w, "{},{i},{q25},{med},{q75}", kind.name())?;
        }
        Ok(())
    })?;
    write_with(&out_dir.join("final.csv"), |w| {
        writeln!(w, "{FINAL_HEADER}")?;
        for s in &summaries {
            writeln!(w, "{},{},{},{},{},{}", s.optimizer.name(), s.runs, s.q25, s.median, s.q75, s.rising_fraction)?;
        }
        Ok(())
    })?;
    Ok(summaries)
}
