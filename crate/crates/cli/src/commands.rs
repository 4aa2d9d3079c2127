use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use studpar_core::distill::{
    adaptive_pruning, random_shallow_teacher, sequential_training, teacher_accuracy, train_group_classifier,
    train_teacher, AccuracyTable, ConvergenceRecord, DistillConfig, EnsembleState, ShallowTeacher, Splits,
    StopReason, Teacher,
};
use studpar_core::nn::{Checkpoint, TeacherModel};
use studpar_core::perf::{comparison_rows, factor_table_csv, PerfModel};
use studpar_core::sim::{latency_csv, run_simulation, SimPerf, WorkloadKind};

use crate::config::{load, require_file, resolve, Calibration, DistillRun, PerfRun, PruneRun, ReportRun, SimulateRun};
use crate::error::CliError;
use crate::manifest::OutputDir;
use crate::report;

pub const DISTILL_CONFIG_FILE: &str = "config.json";
pub const TEACHER_FILE: &str = "teacher.json";
pub const ENSEMBLE_FILE: &str = "ensemble.json";

/// Teacher as stored by `distill`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "teacher", rename_all = "snake_case")]
pub enum SavedTeacher {
    Residual(Checkpoint),
    Shallow { net: Checkpoint, head: Checkpoint },
}

pub enum LoadedTeacher {
    Residual(TeacherModel),
    Shallow(ShallowTeacher),
}

impl LoadedTeacher {
    pub fn as_teacher(&self) -> &dyn Teacher {
        match self {
            LoadedTeacher::Residual(t) => t,
            LoadedTeacher::Shallow(t) => t,
        }
    }

    fn save(&self) -> SavedTeacher {
        match self {
            LoadedTeacher::Residual(t) => SavedTeacher::Residual(Checkpoint::from_teacher(t)),
            LoadedTeacher::Shallow(t) => SavedTeacher::Shallow {
                net: Checkpoint::from_student(&t.net),
                head: Checkpoint::from_dense(&t.head),
            },
        }
    }

    fn load(saved: SavedTeacher) -> Result<Self, CliError> {
        Ok(match saved {
            SavedTeacher::Residual(c) => LoadedTeacher::Residual(c.into_teacher()?),
            SavedTeacher::Shallow { net, head } => LoadedTeacher::Shallow(ShallowTeacher {
                net: net.into_student()?,
                head: head.into_dense()?,
            }),
        })
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    require_file(path, what)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct DistillSummary {
    students: usize,
    stop: StopReason,
    teacher_test_acc: f64,
    /// Full group with a classifier fit on its frozen representation.
    group_test_acc: f64,
    retention: f64,
    train_residual_mse: f64,
    val_residual_mse: f64,
}

#[derive(Serialize)]
struct Convergence<'a> {
    stop: StopReason,
    records: &'a [ConvergenceRecord],
    teacher_epoch_losses: &'a [f64],
    student_epoch_losses: &'a [Vec<f64>],
}

pub fn distill(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut run: DistillRun = load(config)?;
    if let Some(s) = seed {
        run.seed = s;
    }
    run.distill.seed = run.seed;
    run.distill.validate()?;
    run.task.validate()?;
    let splits = run.task.generate(run.seed)?;
    let (teacher, teacher_losses, seed_student) = if run.capacity_matched {
        let t = random_shallow_teacher(
            splits.train.d_in(),
            run.teacher.shape.width,
            run.distill.student_depth,
            run.task.n_classes,
            run.seed,
        )?;
        let net = t.net.clone();
        (LoadedTeacher::Shallow(t), Vec::new(), Some(net))
    } else {
        let (t, losses) = train_teacher(&splits.train, &run.teacher, run.seed)?;
        (LoadedTeacher::Residual(t), losses, None)
    };
    let t = teacher.as_teacher();
    let teacher_test_acc = teacher_accuracy(t, &splits.test)?;
    let seq = sequential_training(t, &splits, &run.distill, seed_student.as_ref())?;
    let group = train_group_classifier(t, seq.state.clone(), &splits, &run.distill)?;
    let m = seq.state.len();
    let group_test_acc = group.table.row(m).map_or(0.0, |r| r.test_acc);
    let last_kept = seq
        .records
        .iter()
        .rev()
        .find(|r| r.kept)
        .ok_or_else(|| CliError::config("no student was kept"))?;
    let summary = DistillSummary {
        students: m,
        stop: seq.stop,
        teacher_test_acc,
        group_test_acc,
        retention: if teacher_test_acc > 0.0 { group_test_acc / teacher_test_acc } else { 0.0 },
        train_residual_mse: last_kept.train_residual_mse,
        val_residual_mse: last_kept.residual_mse,
    };
    let mut dir = OutputDir::create(out)?;
    dir.write_json(DISTILL_CONFIG_FILE, &run)?;
    dir.write_json(TEACHER_FILE, &teacher.save())?;
    dir.write_json(ENSEMBLE_FILE, &seq.state)?;
    dir.write_json(
        "convergence.json",
        &Convergence {
            stop: seq.stop,
            records: &seq.records,
            teacher_epoch_losses: &teacher_losses,
            student_epoch_losses: &seq.epoch_losses,
        },
    )?;
    dir.write_json("summary.json", &summary)?;
    dir.finish("distill", Some(run.seed), &run)?;
    Ok(())
}

/// Everything `prune` needs from a distill run.
pub struct DistillArtifacts {
    pub run: DistillRun,
    pub splits: Splits,
    pub teacher: LoadedTeacher,
    pub state: EnsembleState,
}

pub fn load_distill_artifacts(dir: &Path) -> Result<DistillArtifacts, CliError> {
    let run: DistillRun = read_json(&dir.join(DISTILL_CONFIG_FILE), "distill config")?;
    let teacher = LoadedTeacher::load(read_json(&dir.join(TEACHER_FILE), "teacher checkpoint")?)?;
    let state: EnsembleState = read_json(&dir.join(ENSEMBLE_FILE), "ensemble checkpoint")?;
    state.validate()?;
    let splits = run.task.generate(run.seed)?;
    Ok(DistillArtifacts {
        run,
        splits,
        teacher,
        state,
    })
}

#[derive(Serialize)]
struct Baselines {
    /// Full group, classifier only.
    full_group_val_acc: f64,
    full_group_test_acc: f64,
    /// First student alone, classifier only.
    single_student_test_acc: f64,
}

#[derive(Serialize)]
struct PruneSummary {
    students: usize,
    best_k: usize,
    best_val_acc: f64,
    best_test_acc: f64,
    teacher_test_acc: f64,
    table: AccuracyTable,
    epoch_losses: Vec<f64>,
    baselines: Option<Baselines>,
}

fn baselines(a: &DistillArtifacts, cfg: &DistillConfig) -> Result<Baselines, CliError> {
    let t = a.teacher.as_teacher();
    let full = train_group_classifier(t, a.state.clone(), &a.splits, cfg)?;
    let mut one = a.state.clone();
    one.truncate(1);
    let single = train_group_classifier(t, one, &a.splits, cfg)?;
    let m = a.state.len();
    let full_row = full.table.row(m).expect("table covers every prefix");
    Ok(Baselines {
        full_group_val_acc: full_row.val_acc,
        full_group_test_acc: full_row.test_acc,
        single_student_test_acc: single.table.row(1).expect("one row").test_acc,
    })
}

pub fn prune(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let config = config.ok_or_else(|| CliError::config("prune needs --config naming a distill_dir"))?;
    let mut run: PruneRun = load(Some(config))?;
    run.distill_dir = resolve(Some(config), &run.distill_dir);
    let a = load_distill_artifacts(&run.distill_dir)?;
    let mut cfg = a.run.distill.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let t = a.teacher.as_teacher();
    let pruned = adaptive_pruning(t, a.state.clone(), &a.splits, &cfg)?;
    let best = *pruned.table.row(pruned.best_k).expect("best row exists");
    let summary = PruneSummary {
        students: a.state.len(),
        best_k: pruned.best_k,
        best_val_acc: best.val_acc,
        best_test_acc: best.test_acc,
        teacher_test_acc: teacher_accuracy(t, &a.splits.test)?,
        table: pruned.table.clone(),
        epoch_losses: pruned.epoch_losses.clone(),
        baselines: if run.compare_baselines { Some(baselines(&a, &cfg)?) } else { None },
    };
    let mut dir = OutputDir::create(out)?;
    dir.write("accuracy_table.csv", pruned.table.to_csv_string())?;
    dir.write_json("pruned_ensemble.json", &pruned.state)?;
    dir.write_json("prune_summary.json", &summary)?;
    dir.finish("prune", Some(cfg.seed), &run)?;
    Ok(())
}

fn calibrate(c: &Calibration) -> Result<(PerfModel, SimPerf), CliError> {
    let mut model = PerfModel::default();
    let t = model.calibrate(&c.reference, c.observed_latency_ms)?;
    Ok((
        model,
        SimPerf {
            t_unit_ms: t,
            capacity: c.reference.capacity,
            pcie_t: c.reference.pcie_t,
            gather_ms: c.reference.gather_ms,
        },
    ))
}

#[derive(Serialize)]
struct CalibrationOut {
    t_unit_ms: f64,
}

pub fn simulate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut run: SimulateRun = load(config)?;
    if let Some(s) = seed {
        run.seed = s;
    }
    if let WorkloadKind::Trace { path, .. } = &mut run.workload {
        *path = resolve(config, path);
        require_file(path, "trace")?;
    }
    if let Some(p) = &run.accuracy_table {
        let p = resolve(config, p);
        require_file(&p, "accuracy table")?;
        run.cluster.controller.accuracy_table = Some(AccuracyTable::import(&p)?);
    }
    run.cluster.validate()?;
    let (_, perf) = calibrate(&run.calibration)?;
    let result = run_simulation(&run.cluster, &run.workload, &perf, run.seed)?;
    let mut dir = OutputDir::create(out)?;
    dir.write("metrics.json", result.metrics.to_json() + "\n")?;
    dir.write("latency.csv", latency_csv(&result.records))?;
    dir.write_json("calibration.json", &CalibrationOut { t_unit_ms: perf.t_unit_ms })?;
    dir.finish("simulate", Some(run.seed), &run)?;
    Ok(())
}

pub fn perf(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let run: PerfRun = load(config)?;
    let (model, perf) = calibrate(&run.calibration)?;
    let rows = run.rows.clone().unwrap_or_else(|| comparison_rows(run.student_tokens));
    let table = model.factor_table(&rows)?;
    let mut dir = OutputDir::create(out)?;
    dir.write("factor_table.csv", factor_table_csv(&table))?;
    dir.write_json("calibration.json", &CalibrationOut { t_unit_ms: perf.t_unit_ms })?;
    dir.finish("perf", seed, &run)?;
    Ok(())
}

pub fn report(config: Option<&Path>, inputs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let run: ReportRun = load(config)?;
    let mut paths: Vec<PathBuf> = inputs.to_vec();
    paths.extend(run.inputs.iter().map(|p| resolve(config, p)));
    let runs = report::load_all(&paths)?;
    let mut dir = OutputDir::create(out)?;
    dir.write("comparison.csv", report::comparison_csv(&runs))?;
    dir.write("series.csv", report::series_csv(&runs))?;
    let echo = ReportRun { inputs: paths };
    dir.finish("report", None, &echo)?;
    Ok(())
}
