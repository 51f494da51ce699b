//! Mini-batch Adam training with periodic validation and early stopping.

use std::time::{Duration, Instant};

use lmcsc_core::adam::AdamState;
use lmcsc_core::dataset::{crop_patch, ImagePair, Patch, PatchDataset, PatchSpec};
use lmcsc_core::grad::mse_loss;
use lmcsc_core::metrics::psnr_from_mse;
use lmcsc_core::network::{init_params, predict, NetworkParams};
use lmcsc_core::train::{apply_update, reduce_batch, sample_loss_grad, Sample};
use lmcsc_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{Error, Result};

/// Random access to training patches.
pub trait PatchSource: Sync {
    fn len(&self) -> usize;
    fn patch(&self, i: usize) -> Result<Patch<f32>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PatchSource for PatchDataset<f32> {
    fn len(&self) -> usize {
        self.patches.len()
    }
    fn patch(&self, i: usize) -> Result<Patch<f32>> {
        Ok(self.patches[i].clone())
    }
}

/// Patches described by position only and cropped on demand.
#[derive(Debug, Clone)]
pub struct LazyPatches {
    pub pairs: Vec<ImagePair<f32>>,
    pub specs: Vec<PatchSpec>,
    pub size: usize,
}

impl PatchSource for LazyPatches {
    fn len(&self) -> usize {
        self.specs.len()
    }
    fn patch(&self, i: usize) -> Result<Patch<f32>> {
        let spec = self.specs[i];
        Ok(crop_patch(&self.pairs[spec.source], spec, self.size)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    /// Mean batch loss before this step's update.
    pub loss: f64,
    pub val_psnr: Option<f64>,
    /// Not written to CSV, so logs stay byte-identical across runs.
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    /// `step,loss,val_psnr`; the PSNR column is empty between evaluations.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,val_psnr\n");
        for r in &self.records {
            let psnr = r.val_psnr.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.step, r.loss, psnr));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Worker threads for per-sample gradients; results do not depend on it.
    pub threads: usize,
    /// Replace every guidance patch by zeros (ablation).
    pub zero_guidance: bool,
    /// Print progress to stderr every this many steps (0 = silent).
    pub progress_every: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            zero_guidance: false,
            progress_every: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation PSNR (the last ones when
    /// validation is disabled).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: TrainLog,
    pub best_val_psnr: Option<f64>,
    pub stopped_early: bool,
}

fn guidance_of(p: &Patch<f32>, zero: bool) -> Tensor<f32> {
    if zero {
        Tensor::zeros(1, p.guidance.height(), p.guidance.width())
    } else {
        p.guidance.clone()
    }
}

/// Mean per-patch MSE of the network output on a patch set.
pub fn mean_mse(params: &NetworkParams<f32>, data: &dyn PatchSource, zero_guidance: bool) -> Result<f64> {
    if data.is_empty() {
        return Err(lmcsc_core::Error::Domain("empty validation set".into()).into());
    }
    let mut total = 0.0f64;
    for i in 0..data.len() {
        let p = data.patch(i)?;
        let yhat = predict(&p.lr_up, &guidance_of(&p, zero_guidance), params)?;
        total += f64::from(mse_loss(&yhat, &p.hr)?);
    }
    Ok(total / data.len() as f64)
}

/// Mean per-patch MSE of the degraded input itself (the bicubic baseline).
pub fn baseline_mse(data: &dyn PatchSource) -> Result<f64> {
    if data.is_empty() {
        return Err(lmcsc_core::Error::Domain("empty validation set".into()).into());
    }
    let mut total = 0.0f64;
    for i in 0..data.len() {
        let p = data.patch(i)?;
        total += f64::from(mse_loss(&p.lr_up, &p.hr)?);
    }
    Ok(total / data.len() as f64)
}

fn make_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| lmcsc_core::Error::Domain(format!("cannot start {threads} worker threads: {e}")).into())
}

/// Train from `init_params(cfg.net(), cfg.seed)`.
///
/// Batches are drawn by walking seeded permutations of the training set.
/// Per-sample gradients are reduced in batch order, so the result is the
/// same for any thread count.
pub fn train(
    cfg: &TrainConfig,
    train_set: &dyn PatchSource,
    val_set: Option<&dyn PatchSource>,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate().map_err(|e| lmcsc_core::Error::Domain(e.to_string()))?;
    if train_set.is_empty() {
        return Err(lmcsc_core::Error::Domain("training set is empty".into()).into());
    }
    let pool = make_pool(opts.threads)?;
    let mut params = init_params::<f32>(&cfg.net(), cfg.seed)?;
    let mut adam = AdamState::new(&params, cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();

    let start = Instant::now();
    let mut log = TrainLog::default();
    let snapshot = |params: &NetworkParams<f32>, adam: &AdamState<NetworkParams<f32>>, step: u64| Checkpoint {
        config: cfg.clone(),
        step,
        params: params.clone(),
        adam: Some(adam.clone()),
    };
    let validate = |params: &NetworkParams<f32>| -> Result<Option<f64>> {
        match val_set {
            Some(v) if cfg.eval_every > 0 => Ok(Some(psnr_from_mse(mean_mse(params, v, opts.zero_guidance)?, 1.0))),
            _ => Ok(None),
        }
    };

    let mut best = snapshot(&params, &adam, 0);
    let mut best_psnr = None;
    let mut stale = 0u64;
    let mut stopped_early = false;

    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let parts = pool.install(|| {
            batch
                .par_iter()
                .map(|&i| {
                    let p = train_set.patch(i)?;
                    let g = guidance_of(&p, opts.zero_guidance);
                    let sample = Sample {
                        lr_up: &p.lr_up,
                        guidance: &g,
                        hr: &p.hr,
                    };
                    Ok(sample_loss_grad(&params, sample)?)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let (loss, grads) = reduce_batch(parts)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                loss: f64::from(loss),
            });
        }
        apply_update(&mut params, &grads, &mut adam)?;

        let evaluate = cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps);
        let val_psnr = if evaluate { validate(&params)? } else { None };
        log.records.push(LogRecord {
            step,
            loss: f64::from(loss),
            val_psnr,
            elapsed: start.elapsed(),
        });
        if opts.progress_every > 0 && (step % opts.progress_every == 0 || val_psnr.is_some()) {
            let v = val_psnr.map(|p| format!(" val_psnr {p:.3} dB")).unwrap_or_default();
            eprintln!("step {step} loss {loss:.6e}{v} ({:.1?})", start.elapsed());
        }
        if let Some(p) = val_psnr {
            if best_psnr.is_none_or(|b| p > b) {
                best_psnr = Some(p);
                best = snapshot(&params, &adam, step);
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience > 0 && stale >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    let last_step = log.records.last().map_or(0, |r| r.step);
    let last = snapshot(&params, &adam, last_step);
    if best_psnr.is_none() {
        best = last.clone();
    }
    Ok(TrainOutcome {
        best,
        last,
        log,
        best_val_psnr: best_psnr,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lmcsc_core::dataset::sample_positions;
    use rand::Rng;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            k: 4,
            kernel_size: 3,
            stages_lmcsc: 2,
            stages_guidance: 2,
            patch_size: 8,
            batch_size: 3,
            lr: 1e-2,
            init_std: 0.1,
            init_threshold: 0.01,
            steps: 12,
            eval_every: 4,
            val_patches: 4,
            ..TrainConfig::default()
        }
    }

    fn data(seed: u64) -> LazyPatches {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = (0..2)
            .map(|_| {
                let hr = Tensor::from_fn(1, 16, 16, |_, _, _| rng.random_range(0.0f32..1.0));
                let g = hr.map(|v| 0.5 * v + 0.25);
                ImagePair::from_hr(hr, g, 2).unwrap()
            })
            .collect();
        LazyPatches {
            pairs,
            specs: sample_positions(&[(16, 16), (16, 16)], 10, 8, seed).unwrap(),
            size: 8,
        }
    }

    #[test]
    fn zero_steps_returns_initial_parameters() {
        let cfg = TrainConfig { steps: 0, ..tiny_cfg() };
        let out = train(&cfg, &data(1), None, &TrainOptions::default()).unwrap();
        assert_eq!(out.last.params, init_params::<f32>(&cfg.net(), cfg.seed).unwrap());
        assert_eq!(out.best.params, out.last.params);
        assert!(out.log.records.is_empty());
        assert_eq!(out.log.to_csv(), "step,loss,val_psnr\n");
    }

    #[test]
    fn identical_runs_and_thread_counts_agree() {
        let (tr, val) = (data(2), data(3));
        let run = |threads| {
            train(
                &tiny_cfg(),
                &tr,
                Some(&val),
                &TrainOptions {
                    threads,
                    ..TrainOptions::default()
                },
            )
            .unwrap()
        };
        let a = run(1);
        let b = run(1);
        let c = run(3);
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert_eq!(a.last.to_bytes(), b.last.to_bytes());
        assert_eq!(a.last.to_bytes(), c.last.to_bytes());
        assert_eq!(a.log.records.len(), 12);
        let evals: Vec<u64> = a.log.records.iter().filter(|r| r.val_psnr.is_some()).map(|r| r.step).collect();
        assert_eq!(evals, [4, 8, 12]);
        assert!(a.log.records.windows(2).all(|w| w[0].step < w[1].step));
        assert!(a.best.step >= 4);
    }

    #[test]
    fn patience_stops_training() {
        let cfg = TrainConfig {
            lr: 1e-12,
            steps: 100,
            eval_every: 1,
            patience: 2,
            ..tiny_cfg()
        };
        let (tr, val) = (data(4), data(5));
        let out = train(&cfg, &tr, Some(&val), &TrainOptions::default()).unwrap();
        assert!(out.stopped_early);
        assert!(out.log.records.len() < 100);
    }

    #[test]
    fn diverging_loss_aborts() {
        let cfg = TrainConfig { lr: 1e30, steps: 50, ..tiny_cfg() };
        match train(&cfg, &data(6), None, &TrainOptions::default()) {
            Err(Error::NonFiniteLoss { step, .. }) => assert!(step > 1),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.log.records.len())),
        }
    }

    #[test]
    fn log_csv_format() {
        let log = TrainLog {
            records: vec![
                LogRecord {
                    step: 1,
                    loss: 0.5,
                    val_psnr: None,
                    elapsed: Duration::ZERO,
                },
                LogRecord {
                    step: 2,
                    loss: 0.25,
                    val_psnr: Some(20.5),
                    elapsed: Duration::ZERO,
                },
            ],
        };
        assert_eq!(log.to_csv(), "step,loss,val_psnr\n1,0.5,\n2,0.25,20.5\n");
    }
}
