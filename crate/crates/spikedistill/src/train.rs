//! Training loops, evaluation, metrics, and run-directory management.
//!
//! A run directory receives: `config.toml` (the resolved echo, written before
//! training), `metrics.tsv` (append-only, one line of tab-separated
//! key:value pairs per (epoch, split), fully deterministic), `timing.log`
//! (wall-clock per epoch, deliberately outside the determinism contract),
//! and checkpoints (`*.best.ckpt` on a new best test accuracy, `last.ckpt`
//! every epoch for bit-exact resume).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::analytics::{self, EnergyModel, EnergyReport};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{self, BatchPlan, Dataset, NormConstants};
use crate::distill::{self, DistillBlocks, DistillConfig};
use crate::error::{Error, Result};
use crate::layers::{self, ActivityProbe, ModelBundle, Parameter, Role};
use crate::optim::{scheduled_lr, LrSchedule, OptimKind, Optimizer};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tape::{SurrogateMode, Tape};
use crate::tensor::Tensor;

/// One metrics line. `wall_seconds` is kept in memory and in `timing.log`
/// but never enters `metrics.tsv`, which must be byte-identical across
/// reruns of the same seed.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub task_loss: f64,
    pub ld_loss: f64,
    pub bkd_loss: f64,
    pub md_loss: f64,
    pub top1: f64,
    pub firing_rate: f64,
    pub wall_seconds: f64,
}

impl MetricsRecord {
    pub fn tsv_line(&self) -> String {
        format!(
            "epoch:{}\tsplit:{}\ttask_loss:{}\tld_loss:{}\tbkd_loss:{}\tmd_loss:{}\ttop1:{}\tfiring_rate:{}",
            self.epoch,
            self.split,
            self.task_loss,
            self.ld_loss,
            self.bkd_loss,
            self.md_loss,
            self.top1,
            self.firing_rate
        )
    }
}

pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    pub best_epoch: usize,
    pub best_top1: f64,
    pub best_ckpt: PathBuf,
    pub last_ckpt: PathBuf,
}

/// Loaded train/test pair plus its normalization constants.
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub norm: NormConstants,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<LoadedData> {
    let root = cfg.data_root();
    match cfg.dataset.kind.as_str() {
        "mnist" => {
            let mut train = data::load_idx(
                &root.join("train-images-idx3-ubyte"),
                &root.join("train-labels-idx1-ubyte"),
            )?;
            train.name = "mnist".into();
            train.split = "train".into();
            let mut test = data::load_idx(
                &root.join("t10k-images-idx3-ubyte"),
                &root.join("t10k-labels-idx1-ubyte"),
            )?;
            test.name = "mnist".into();
            test.split = "test".into();
            Ok(LoadedData { train, test, norm: NormConstants::mnist() })
        }
        "cifar10" => {
            let dir = if root.join("cifar-10-batches-bin").is_dir() {
                root.join("cifar-10-batches-bin")
            } else {
                root.clone()
            };
            let (mut train, mut test) = data::load_cifar_binary(&dir)?;
            train.split = "train".into();
            test.split = "test".into();
            Ok(LoadedData { train, test, norm: NormConstants::cifar10() })
        }
        "synth" => {
            let train = data::synth_digits(cfg.dataset.synth_train, synth_seed(cfg), "train");
            let test = data::synth_digits(cfg.dataset.synth_test, synth_seed(cfg), "test");
            Ok(LoadedData { train, test, norm: NormConstants::mnist() })
        }
        other => Err(Error::Config(format!("unknown dataset kind '{other}'"))),
    }
}

/// Synthetic data is a fixed benchmark: its content must not move with the
/// run seed, or cross-seed comparisons would train on different data.
fn synth_seed(_cfg: &RunConfig) -> u64 {
    0x5d1617
}

fn batch_plan(cfg: &RunConfig, split: &str) -> BatchPlan {
    let subset = match split {
        "train" => cfg.dataset.train_subset,
        _ => cfg.dataset.test_subset,
    };
    BatchPlan {
        batch_size: cfg.run.batch_size,
        seed: cfg.run.seed,
        subset: if subset == 0 { None } else { Some(subset) },
    }
}

fn argmax_row<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn top1_count<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let n = logits.shape()[1];
    logits
        .data()
        .chunks(n)
        .zip(labels)
        .filter(|(row, &label)| argmax_row(row) == label)
        .count()
}

// ---------------------------------------------------------------------------
// run directory plumbing
// ---------------------------------------------------------------------------

/// Exclusive lock on a run directory; removed on drop.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = dir.join("lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::State(format!(
                "run directory {} is locked by another writer",
                dir.display()
            ))),
            Err(e) => Err(Error::io(path.display().to_string(), e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

struct RunDir {
    dir: PathBuf,
    _lock: RunLock,
    metrics: fs::File,
    timing: fs::File,
}

impl RunDir {
    fn open(cfg: &RunConfig) -> Result<Self> {
        let dir = PathBuf::from(&cfg.run.out_dir);
        let lock = RunLock::acquire(&dir)?;
        fs::write(dir.join("config.toml"), cfg.echo())
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
        let metrics = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("metrics.tsv"))
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
        let timing = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("timing.log"))
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
        Ok(RunDir { dir, _lock: lock, metrics, timing })
    }

    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        writeln!(self.metrics, "{}", rec.tsv_line())
            .and_then(|_| writeln!(self.timing, "epoch:{}\tsplit:{}\twall_seconds:{:.3}", rec.epoch, rec.split, rec.wall_seconds))
            .map_err(|e| Error::io(self.dir.display().to_string(), e))
    }
}

// ---------------------------------------------------------------------------
// teacher
// ---------------------------------------------------------------------------

fn checkpoint_of<T: Scalar>(
    cfg: &RunConfig,
    epoch: u64,
    params: &[Parameter<T>],
    extra: Vec<(String, Tensor<T>)>,
    opt: &Optimizer<T>,
    opt_params: &[Parameter<T>],
) -> Checkpoint<T> {
    let mut tensors: Vec<(String, Tensor<T>)> =
        params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    tensors.extend(extra);
    tensors.extend(opt.state_tensors(opt_params));
    Checkpoint { epoch, master_seed: cfg.run.seed, optim_step: opt.step_count, tensors }
}

fn make_optimizer<T: Scalar>(cfg: &RunConfig, params: &[Parameter<T>]) -> Result<Optimizer<T>> {
    match OptimKind::from_str(&cfg.optim.kind)? {
        OptimKind::SgdMomentum => Ok(Optimizer::sgd_momentum(
            T::from_f64(cfg.optim.momentum),
            T::from_f64(cfg.optim.weight_decay),
            params,
        )),
        OptimKind::Adam => Ok(Optimizer::adam(
            T::from_f64(cfg.optim.betas[0]),
            T::from_f64(cfg.optim.betas[1]),
            T::from_f64(cfg.optim.weight_decay),
            params,
        )),
    }
}

fn augment_batch(images: &mut [u8], batch: usize, c: usize, h: usize, w: usize, s: &mut Stream) {
    let plane = h * w;
    let img_len = c * plane;
    let mut scratch = vec![0u8; img_len];
    for b in 0..batch {
        let dy = s.next_below(9) as isize - 4;
        let dx = s.next_below(9) as isize - 4;
        let flip = s.next_below(2) == 1;
        let img = &mut images[b * img_len..(b + 1) * img_len];
        scratch.copy_from_slice(img);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sx = if flip { w - 1 - x } else { x } as isize + dx;
                    let sy = y as isize + dy;
                    let v = if sx < 0 || sx >= w as isize || sy < 0 || sy >= h as isize {
                        0
                    } else {
                        scratch[ch * plane + sy as usize * w + sx as usize]
                    };
                    img[ch * plane + y * w + x] = v;
                }
            }
        }
    }
}

/// Pretrain the continuous teacher with plain cross-entropy; keeps the
/// best-test-accuracy checkpoint.
pub fn train_teacher<T: Scalar>(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let data = load_dataset(cfg)?;
    let mut model: ModelBundle<T> = layers::build_teacher(&cfg.arch_config(), cfg.run.seed)?;
    let mut opt = make_optimizer(cfg, &model.params)?;
    let mut start_epoch = 0usize;
    if let Some(path) = resume {
        let ckpt = Checkpoint::<T>::load(path)?;
        ckpt.apply_to_params(&mut model.params)?;
        opt.load_state(&model.params, &ckpt.tensors)?;
        opt.step_count = ckpt.optim_step;
        start_epoch = ckpt.epoch as usize;
    }
    model.trained = true;

    let mut run_dir = RunDir::open(cfg)?;
    let plan = batch_plan(cfg, "train");
    let schedule = LrSchedule::from_str(&cfg.optim.schedule)?;
    let norm = &data.norm;
    let (c, h, w) = (data.train.channels, data.train.height, data.train.width);

    let mut records = Vec::new();
    let (mut best_top1, mut best_epoch) = (f64::NEG_INFINITY, 0);
    let best_path = run_dir.dir.join("teacher.best.ckpt");
    let last_path = run_dir.dir.join("last.ckpt");

    for epoch in start_epoch..cfg.run.epochs {
        let clock = Instant::now();
        let lr = T::from_f64(scheduled_lr(cfg.optim.lr, schedule, epoch, cfg.run.epochs));
        let order = plan.epoch_order(data.train.n, epoch);
        let (mut loss_sum, mut hit_sum, mut seen) = (0.0f64, 0usize, 0usize);
        for (iter, batch_idx) in order.chunks(cfg.run.batch_size).enumerate() {
            let (mut images, labels) = data::gather(&data.train, batch_idx);
            if cfg.dataset.augment && cfg.dataset.kind == "cifar10" {
                let mut s = Stream::derive(cfg.run.seed, "augment", &[epoch as u64, iter as u64]);
                augment_batch(&mut images, batch_idx.len(), c, h, w, &mut s);
            }
            let x = data::normalize_batch::<T>(&images, batch_idx.len(), c, h, w, norm)?;
            let mut tape = Tape::new();
            let vars = layers::bind(&mut tape, &model, true);
            let xv = tape.constant(x);
            let (logits, _) = layers::forward_ann_traced(&mut tape, &model, &vars, xv)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            let loss_val = tape.value(loss).item()?.to_f64_lossless();
            if !loss_val.is_finite() {
                return Err(Error::Numeric(format!(
                    "teacher loss diverged at epoch {epoch} iter {iter}"
                )));
            }
            loss_sum += loss_val * batch_idx.len() as f64;
            hit_sum += top1_count(tape.value(logits), &labels);
            seen += batch_idx.len();
            let mut grads = tape.backward(loss)?;
            layers::extract_grads(&mut grads, &vars, &mut model.params);
            opt.step(&mut model.params, lr, cfg.optim.clip_norm)?;
        }

        let train_rec = MetricsRecord {
            epoch,
            split: "train".into(),
            task_loss: loss_sum / seen as f64,
            ld_loss: 0.0,
            bkd_loss: 0.0,
            md_loss: 0.0,
            top1: hit_sum as f64 / seen as f64,
            firing_rate: 0.0,
            wall_seconds: clock.elapsed().as_secs_f64(),
        };
        run_dir.record(&train_rec)?;
        records.push(train_rec);

        let eval_clock = Instant::now();
        let mut test_rec = evaluate_teacher(cfg, &model, &data.test, norm)?;
        test_rec.epoch = epoch;
        test_rec.wall_seconds = eval_clock.elapsed().as_secs_f64();
        run_dir.record(&test_rec)?;
        let ckpt = checkpoint_of(cfg, epoch as u64 + 1, &model.params, vec![], &opt, &model.params);
        ckpt.save(&last_path)?;
        if test_rec.top1 > best_top1 {
            best_top1 = test_rec.top1;
            best_epoch = epoch;
            ckpt.save(&best_path)?;
        }
        eprintln!(
            "[teacher] epoch {epoch}: train loss {:.4}, test top1 {:.4}",
            records.last().unwrap().task_loss,
            test_rec.top1
        );
        records.push(test_rec);
    }
    Ok(TrainOutcome { records, best_epoch, best_top1, best_ckpt: best_path, last_ckpt: last_path })
}

fn evaluate_teacher<T: Scalar>(
    cfg: &RunConfig,
    model: &ModelBundle<T>,
    split: &Dataset,
    norm: &NormConstants,
) -> Result<MetricsRecord> {
    let plan = batch_plan(cfg, &split.split);
    let order = plan.eval_order(split.n);
    let (mut loss_sum, mut hits, mut seen) = (0.0f64, 0usize, 0usize);
    for batch_idx in order.chunks(cfg.run.batch_size) {
        let (images, labels) = data::gather(split, batch_idx);
        let x = data::normalize_batch::<T>(
            &images,
            batch_idx.len(),
            split.channels,
            split.height,
            split.width,
            norm,
        )?;
        let (logits, _) = layers::forward_teacher(model, &x)?;
        let mut tape = Tape::new();
        let lv = tape.constant(logits.clone());
        let loss = tape.cross_entropy(lv, &labels)?;
        loss_sum += tape.value(loss).item()?.to_f64_lossless() * batch_idx.len() as f64;
        hits += top1_count(&logits, &labels);
        seen += batch_idx.len();
    }
    Ok(MetricsRecord {
        epoch: 0,
        split: split.split.clone(),
        task_loss: loss_sum / seen as f64,
        ld_loss: 0.0,
        bkd_loss: 0.0,
        md_loss: 0.0,
        top1: hits as f64 / seen as f64,
        firing_rate: 0.0,
        wall_seconds: 0.0,
    })
}

// ---------------------------------------------------------------------------
// student
// ---------------------------------------------------------------------------

/// Load a teacher checkpoint into a frozen, inference-ready model.
pub fn load_teacher<T: Scalar>(cfg: &RunConfig, path: &Path) -> Result<ModelBundle<T>> {
    let ckpt = Checkpoint::<T>::load(path)?;
    let mut teacher: ModelBundle<T> = layers::build_teacher(&cfg.arch_config(), cfg.run.seed)?;
    ckpt.apply_to_params(&mut teacher.params)?;
    teacher.trained = true;
    Ok(teacher)
}

/// Distillation training per the configured mode. The teacher runs untraced
/// and is hash-checked for frozenness every epoch.
pub fn train_student<T: Scalar>(
    cfg: &RunConfig,
    teacher_path: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    let data = load_dataset(cfg)?;
    let dcfg: DistillConfig<T> = cfg.distill_config()?;
    let teacher: ModelBundle<T> = load_teacher(cfg, teacher_path)?;
    let mut student: ModelBundle<T> = layers::build_student(&cfg.arch_config(), cfg.run.seed)?;
    layers::check_tap_compat(&teacher, &student)?;

    let needs_teacher = dcfg.mode.uses_ld() && dcfg.w_ld > T::zero()
        || dcfg.mode.uses_bkd() && dcfg.w_bkd > T::zero();
    let use_bkd = dcfg.mode.uses_bkd() && dcfg.w_bkd > T::zero();
    let use_ld = dcfg.mode.uses_ld() && dcfg.w_ld > T::zero();
    let mut blocks: Option<DistillBlocks<T>> = if use_bkd {
        Some(DistillBlocks::new(student.tap_channels, teacher.tap_channels, cfg.run.seed))
    } else {
        None
    };

    let mut opt = make_optimizer(cfg, &student.params)?;
    let mut opt_blocks = match &blocks {
        Some(b) => Some(make_optimizer(cfg, &b.params)?),
        None => None,
    };

    let mut start_epoch = 0usize;
    if let Some(path) = resume {
        let ckpt = Checkpoint::<T>::load(path)?;
        ckpt.apply_to_params(&mut student.params)?;
        opt.load_state(&student.params, &ckpt.tensors)?;
        opt.step_count = ckpt.optim_step;
        if let (Some(b), Some(ob)) = (&mut blocks, &mut opt_blocks) {
            ckpt.apply_to_params(&mut b.params)?;
            ob.load_state(&b.params, &ckpt.tensors)?;
            ob.step_count = ckpt.optim_step;
        }
        start_epoch = ckpt.epoch as usize;
    }
    student.trained = true;

    let teacher_hash = teacher.params_hash();
    let mut run_dir = RunDir::open(cfg)?;
    let plan = batch_plan(cfg, "train");
    let schedule = LrSchedule::from_str(&cfg.optim.schedule)?;
    let ncfg = cfg.neuron_config::<T>();
    let norm = &data.norm;
    let (c, h, w) = (data.train.channels, data.train.height, data.train.width);

    let mut records = Vec::new();
    let (mut best_top1, mut best_epoch) = (f64::NEG_INFINITY, 0);
    let best_path = run_dir.dir.join("student.best.ckpt");
    let last_path = run_dir.dir.join("last.ckpt");

    for epoch in start_epoch..cfg.run.epochs {
        let clock = Instant::now();
        if teacher.params_hash() != teacher_hash {
            return Err(Error::State("frozen-teacher invariant violated".into()));
        }
        let lr = T::from_f64(scheduled_lr(cfg.optim.lr, schedule, epoch, cfg.run.epochs));
        let order = plan.epoch_order(data.train.n, epoch);
        let (mut task_sum, mut ld_sum, mut bkd_sum, mut hit_sum, mut rate_sum, mut seen) =
            (0.0f64, 0.0f64, 0.0f64, 0usize, 0.0f64, 0usize);
        for (iter, batch_idx) in order.chunks(cfg.run.batch_size).enumerate() {
            let (mut images, labels) = data::gather(&data.train, batch_idx);
            if cfg.dataset.augment && cfg.dataset.kind == "cifar10" {
                let mut s = Stream::derive(cfg.run.seed, "augment", &[epoch as u64, iter as u64]);
                augment_batch(&mut images, batch_idx.len(), c, h, w, &mut s);
            }
            let x = data::normalize_batch::<T>(&images, batch_idx.len(), c, h, w, norm)?;

            let teacher_out = if needs_teacher {
                Some(layers::forward_teacher(&teacher, &x)?)
            } else {
                None
            };

            let mut tape = Tape::new();
            let vars = layers::bind(&mut tape, &student, true);
            let block_vars = blocks.as_ref().map(|b| distill::bind_blocks(&mut tape, b, true));
            let xv = tape.constant(x);
            let fwd = layers::forward_student_traced(
                &mut tape,
                &student,
                &vars,
                xv,
                cfg.run.time_steps,
                &ncfg,
                SurrogateMode::Hard,
                None,
            )?;
            let task = tape.cross_entropy(fwd.logits, &labels)?;

            let l_ld = if use_ld {
                let (y_tea, _) = teacher_out.as_ref().expect("teacher ran");
                Some(distill::ld_loss(&mut tape, fwd.logits, y_tea, dcfg.tau_temp)?)
            } else {
                None
            };
            let l_bkd = if use_bkd {
                let (_, f_tea) = teacher_out.as_ref().expect("teacher ran");
                let mut mask_stream =
                    Stream::derive(cfg.run.seed, "mask", &[epoch as u64, iter as u64]);
                let mask = distill::sample_blur_mask::<T>(
                    batch_idx.len(),
                    teacher.tap_channels,
                    dcfg.lambda,
                    &mut mask_stream,
                )?;
                let f_tilde = distill::time_average(&mut tape, &fwd.tap)?;
                let f_hat = distill::blurred_restore(
                    &mut tape,
                    f_tilde,
                    &mask,
                    blocks.as_ref().expect("blocks built"),
                    block_vars.as_ref().expect("blocks bound"),
                )?;
                Some(distill::bkd_loss(&mut tape, f_hat, f_tea)?)
            } else {
                None
            };
            let total = distill::total_loss(&mut tape, task, l_ld, l_bkd, &dcfg)?;

            let total_val = tape.value(total).item()?.to_f64_lossless();
            if !total_val.is_finite() {
                return Err(Error::Numeric(format!(
                    "student loss diverged at epoch {epoch} iter {iter}"
                )));
            }
            let bn = batch_idx.len() as f64;
            task_sum += tape.value(task).item()?.to_f64_lossless() * bn;
            if let Some(v) = l_ld {
                ld_sum += tape.value(v).item()?.to_f64_lossless() * bn;
            }
            if let Some(v) = l_bkd {
                bkd_sum += tape.value(v).item()?.to_f64_lossless() * bn;
            }
            rate_sum +=
                analytics::firing_rate(tape.value(fwd.tap.stacked), false)? * bn;
            hit_sum += top1_count(tape.value(fwd.logits), &labels);
            seen += batch_idx.len();

            let mut grads = tape.backward(total)?;
            layers::extract_grads(&mut grads, &vars, &mut student.params);
            if let (Some(bv), Some(b)) = (&block_vars, &mut blocks) {
                layers::extract_grads(&mut grads, bv, &mut b.params);
            }
            opt.step(&mut student.params, lr, cfg.optim.clip_norm)?;
            if let (Some(ob), Some(b)) = (&mut opt_blocks, &mut blocks) {
                ob.step(&mut b.params, lr, cfg.optim.clip_norm)?;
            }
        }

        let seen_f = seen as f64;
        let (ld_mean, bkd_mean) = (ld_sum / seen_f, bkd_sum / seen_f);
        let train_rec = MetricsRecord {
            epoch,
            split: "train".into(),
            task_loss: task_sum / seen_f,
            ld_loss: ld_mean,
            bkd_loss: bkd_mean,
            md_loss: dcfg.w_ld.to_f64_lossless() * ld_mean
                + dcfg.w_bkd.to_f64_lossless() * bkd_mean,
            top1: hit_sum as f64 / seen_f,
            firing_rate: rate_sum / seen_f,
            wall_seconds: clock.elapsed().as_secs_f64(),
        };
        run_dir.record(&train_rec)?;
        records.push(train_rec);

        let eval_clock = Instant::now();
        let mut test_rec = evaluate_student(cfg, &student, &data.test, norm)?;
        test_rec.epoch = epoch;
        test_rec.wall_seconds = eval_clock.elapsed().as_secs_f64();
        run_dir.record(&test_rec)?;

        let mut extra: Vec<(String, Tensor<T>)> = Vec::new();
        let mut opt_state_params: Vec<Parameter<T>> = student.params.clone();
        if let Some(b) = &blocks {
            extra.extend(b.params.iter().map(|p| (p.name.clone(), p.value.clone())));
            opt_state_params.extend(b.params.iter().cloned());
        }
        let mut tensors: Vec<(String, Tensor<T>)> =
            student.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        tensors.extend(extra);
        tensors.extend(opt.state_tensors(&student.params));
        if let (Some(ob), Some(b)) = (&opt_blocks, &blocks) {
            tensors.extend(ob.state_tensors(&b.params));
        }
        let ckpt = Checkpoint {
            epoch: epoch as u64 + 1,
            master_seed: cfg.run.seed,
            optim_step: opt.step_count,
            tensors,
        };
        ckpt.save(&last_path)?;
        if test_rec.top1 > best_top1 {
            best_top1 = test_rec.top1;
            best_epoch = epoch;
            ckpt.save(&best_path)?;
        }
        eprintln!(
            "[student/{}] epoch {epoch}: task {:.4}, test top1 {:.4}, rate {:.4}",
            dcfg.mode,
            records.last().unwrap().task_loss,
            test_rec.top1,
            test_rec.firing_rate
        );
        records.push(test_rec);
    }
    Ok(TrainOutcome { records, best_epoch, best_top1, best_ckpt: best_path, last_ckpt: last_path })
}

/// Deterministic evaluation of a student model over a split: task loss,
/// top-1, and the tap firing rate.
pub fn evaluate_student<T: Scalar>(
    cfg: &RunConfig,
    student: &ModelBundle<T>,
    split: &Dataset,
    norm: &NormConstants,
) -> Result<MetricsRecord> {
    let ncfg = cfg.neuron_config::<T>();
    let plan = batch_plan(cfg, &split.split);
    let order = plan.eval_order(split.n);
    let (mut loss_sum, mut hits, mut rate_sum, mut seen) = (0.0f64, 0usize, 0.0f64, 0usize);
    for batch_idx in order.chunks(cfg.run.batch_size) {
        let (images, labels) = data::gather(split, batch_idx);
        let x = data::normalize_batch::<T>(
            &images,
            batch_idx.len(),
            split.channels,
            split.height,
            split.width,
            norm,
        )?;
        let mut tape = Tape::new();
        let vars = layers::bind(&mut tape, student, false);
        let xv = tape.constant(x);
        let fwd = layers::forward_student_traced(
            &mut tape,
            student,
            &vars,
            xv,
            cfg.run.time_steps,
            &ncfg,
            SurrogateMode::Hard,
            None,
        )?;
        let loss = tape.cross_entropy(fwd.logits, &labels)?;
        let bn = batch_idx.len() as f64;
        loss_sum += tape.value(loss).item()?.to_f64_lossless() * bn;
        rate_sum += analytics::firing_rate(tape.value(fwd.tap.stacked), false)? * bn;
        hits += top1_count(tape.value(fwd.logits), &labels);
        seen += batch_idx.len();
    }
    Ok(MetricsRecord {
        epoch: 0,
        split: split.split.clone(),
        task_loss: loss_sum / seen as f64,
        ld_loss: 0.0,
        bkd_loss: 0.0,
        md_loss: 0.0,
        top1: hits as f64 / seen as f64,
        firing_rate: rate_sum / seen as f64,
        wall_seconds: 0.0,
    })
}

/// Role stored in a checkpoint, inferred from tensor names.
pub fn checkpoint_role<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Role> {
    if ckpt.has_prefix("teacher/") {
        Ok(Role::TeacherAnn)
    } else if ckpt.has_prefix("student/") {
        Ok(Role::StudentSnn)
    } else {
        Err(Error::Format("checkpoint contains neither teacher nor student tensors".into()))
    }
}

/// Evaluate a checkpoint on a split. Distillation-block tensors in student
/// checkpoints are ignored; only model weights load.
pub fn evaluate_checkpoint<T: Scalar>(
    cfg: &RunConfig,
    ckpt_path: &Path,
    split_name: &str,
) -> Result<MetricsRecord> {
    let data = load_dataset(cfg)?;
    let split = match split_name {
        "train" => &data.train,
        "test" => &data.test,
        other => return Err(Error::Config(format!("unknown split '{other}'"))),
    };
    let ckpt = Checkpoint::<T>::load(ckpt_path)?;
    match checkpoint_role(&ckpt)? {
        Role::TeacherAnn => {
            let mut teacher: ModelBundle<T> =
                layers::build_teacher(&cfg.arch_config(), cfg.run.seed)?;
            ckpt.apply_to_params(&mut teacher.params)?;
            teacher.trained = true;
            evaluate_teacher(cfg, &teacher, split, &data.norm)
        }
        Role::StudentSnn => {
            let mut student: ModelBundle<T> =
                layers::build_student(&cfg.arch_config(), cfg.run.seed)?;
            ckpt.apply_to_params(&mut student.params)?;
            student.trained = true;
            evaluate_student(cfg, &student, split, &data.norm)
        }
    }
}

pub struct AnalyzeOutput {
    pub report: EnergyReport,
    pub tap_rate: f64,
    pub top1: f64,
    pub norm_note: String,
}

/// Firing-rate and energy report over the test split.
pub fn analyze_checkpoint<T: Scalar>(cfg: &RunConfig, ckpt_path: &Path) -> Result<AnalyzeOutput> {
    let data = load_dataset(cfg)?;
    let split = &data.test;
    let ckpt = Checkpoint::<T>::load(ckpt_path)?;
    let model = EnergyModel::default();
    match checkpoint_role(&ckpt)? {
        Role::TeacherAnn => {
            let mut teacher: ModelBundle<T> =
                layers::build_teacher(&cfg.arch_config(), cfg.run.seed)?;
            ckpt.apply_to_params(&mut teacher.params)?;
            teacher.trained = true;
            let flops = analytics::model_flops(&teacher);
            // an ANN is all MAC operations
            let rows: Vec<analytics::ReportRow> = flops
                .iter()
                .map(|(name, f)| analytics::ReportRow {
                    layer: name.clone(),
                    op_kind: "MAC",
                    flops: *f,
                    r_input: 1.0,
                    sops: 0.0,
                    energy_j: model.e_mac * f,
                })
                .collect();
            let total: f64 = rows.iter().map(|r| r.energy_j).sum();
            let rec = evaluate_teacher(cfg, &teacher, split, &data.norm)?;
            Ok(AnalyzeOutput {
                report: EnergyReport {
                    rows,
                    total_energy_j: total,
                    ann_equivalent_j: total,
                    t: 1,
                },
                tap_rate: 0.0,
                top1: rec.top1,
                norm_note: data.norm.describe(),
            })
        }
        Role::StudentSnn => {
            let mut student: ModelBundle<T> =
                layers::build_student(&cfg.arch_config(), cfg.run.seed)?;
            ckpt.apply_to_params(&mut student.params)?;
            student.trained = true;
            let ncfg = cfg.neuron_config::<T>();
            let plan = batch_plan(cfg, "test");
            let order = plan.eval_order(split.n);
            let mut probe = ActivityProbe::default();
            let (mut hits, mut rate_sum, mut seen) = (0usize, 0.0f64, 0usize);
            for batch_idx in order.chunks(cfg.run.batch_size) {
                let (images, labels) = data::gather(split, batch_idx);
                let x = data::normalize_batch::<T>(
                    &images,
                    batch_idx.len(),
                    split.channels,
                    split.height,
                    split.width,
                    &data.norm,
                )?;
                let mut tape = Tape::new();
                let vars = layers::bind(&mut tape, &student, false);
                let xv = tape.constant(x);
                let fwd = layers::forward_student_traced(
                    &mut tape,
                    &student,
                    &vars,
                    xv,
                    cfg.run.time_steps,
                    &ncfg,
                    SurrogateMode::Hard,
                    Some(&mut probe),
                )?;
                rate_sum += analytics::firing_rate(tape.value(fwd.tap.stacked), false)?
                    * batch_idx.len() as f64;
                hits += top1_count(tape.value(fwd.logits), &labels);
                seen += batch_idx.len();
            }
            let flops = analytics::model_flops(&student);
            let rates = probe.rates();
            // the first (encoding) layer is charged as MAC; its measured
            // input mean is of normalized analog pixels, clamp for reporting
            let mut rates_clamped = rates.clone();
            if !rates_clamped.is_empty() {
                rates_clamped[0] = rates_clamped[0].clamp(0.0, 1.0);
            }
            let report = analytics::energy_report(&flops, &rates_clamped, cfg.run.time_steps, &model)?;
            Ok(AnalyzeOutput {
                report,
                tap_rate: rate_sum / seen as f64,
                top1: hits as f64 / seen as f64,
                norm_note: data.norm.describe(),
            })
        }
    }
}

/// The gradient-oracle suite as a CLI-facing runner: prints one line per
/// case, returns Err if any case fails.
pub fn run_gradcheck(seed: u64, cases_per_op: usize, out: &mut dyn Write) -> Result<()> {
    let cases = crate::gradcheck::run_full_suite(seed, cases_per_op)?;
    let mut failures = 0usize;
    for case in &cases {
        let status = if case.passed() { "ok" } else { "FAIL" };
        writeln!(out, "{status}  {}  rel_err {:.3e}  tol {:.1e}", case.name, case.max_rel_err, case.tol)
            .map_err(|e| Error::io("stdout", e))?;
        if !case.passed() {
            failures += 1;
        }
    }
    writeln!(out, "{} cases, {} failures", cases.len(), failures)
        .map_err(|e| Error::io("stdout", e))?;
    if failures > 0 {
        return Err(Error::Numeric(format!("{failures} gradient checks failed")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.dataset.kind = "synth".into();
        cfg.dataset.synth_train = 64;
        cfg.dataset.synth_test = 32;
        cfg.run.epochs = 1;
        cfg.run.batch_size = 16;
        cfg.run.time_steps = 2;
        cfg.run.out_dir = dir.join("run").to_string_lossy().into_owned();
        cfg
    }

    #[test]
    fn teacher_smoke_train_reduces_loss() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(tmp.path());
        cfg.run.epochs = 2;
        let out = train_teacher::<f32>(&cfg, None).unwrap();
        let train_losses: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.split == "train")
            .map(|r| r.task_loss)
            .collect();
        assert!(train_losses[1] < train_losses[0], "losses: {train_losses:?}");
        assert!(out.best_ckpt.exists());
        assert!(out.last_ckpt.exists());
        assert!(tmp.path().join("run/config.toml").exists());
        assert!(tmp.path().join("run/metrics.tsv").exists());
        // lock released after the run
        assert!(!tmp.path().join("run/lock").exists());
    }

    #[test]
    fn random_student_sits_at_chance() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(tmp.path());
        cfg.dataset.synth_test = 2000;
        let data = load_dataset(&cfg).unwrap();
        let mut student: ModelBundle<f32> =
            layers::build_student(&cfg.arch_config(), 3).unwrap();
        student.trained = true;
        let rec = evaluate_student(&cfg, &student, &data.test, &data.norm).unwrap();
        assert!((rec.top1 - 0.10).abs() <= 0.03, "random-weight top1 {}", rec.top1);
        assert!((0.0..=1.0).contains(&rec.firing_rate));
        // identical evaluations match exactly
        let rec2 = evaluate_student(&cfg, &student, &data.test, &data.norm).unwrap();
        assert_eq!(rec.tsv_line(), rec2.tsv_line());
    }

    #[test]
    fn run_dir_lock_excludes_second_writer() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(tmp.path());
        let dir = PathBuf::from(&cfg.run.out_dir);
        let _first = RunLock::acquire(&dir).unwrap();
        assert!(matches!(RunLock::acquire(&dir), Err(Error::State(_))));
    }
}
