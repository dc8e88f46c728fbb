use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{L1Scope, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::evaluate_samples;
use crate::hsdata::{extract_patches, Dataset, HyperCube, MaskRaster, Sample, Split};
use crate::losses::{
    activation_overlap, combined_objective, cross_entropy, dice_loss, l1_off_class, l1_penalty, LossParts,
    LossRecord, Targets,
};
use crate::models::{Checkpoint, CheckpointInfo, Mode, Model, Variant, HEAD_PARAM, PROTOTYPE_PARAM};
use crate::prototypes::project_model;
use crate::substrate::cubes_to_tensor;

/// Mirrors cube and mask left-right with probability `flip_p`.
pub fn augment(cube: &HyperCube, mask: &MaskRaster, flip_p: f64, seed: u64) -> Result<(HyperCube, MaskRaster)> {
    if (cube.height(), cube.width()) != (mask.height(), mask.width()) {
        return Err(Error::Shape("cube and mask differ in size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if flip_p > 0.0 && rng.random::<f64>() < flip_p {
        Ok((cube.flip_horizontal(), mask.flip_horizontal()))
    } else {
        Ok((cube.clone(), mask.clone()))
    }
}

/// Which parameters the optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Everything.
    Full,
    /// After projection: encoder and prototypes frozen.
    Joint,
    /// Head only.
    LastLayer,
}

/// Phase of each epoch. Projection happens at the start of the first
/// non-`Full` epoch for the projection variant.
pub fn phase_schedule(cfg: &TrainConfig) -> Vec<Phase> {
    let e = cfg.epochs;
    if cfg.model.variant != Variant::Ramanseg {
        return vec![Phase::Full; e];
    }
    let proj = ((e as f64) * cfg.projection_epoch_fraction).floor() as usize;
    let proj = proj.min(e);
    let last = e - (((e as f64) * cfg.last_layer_fraction).round() as usize).min(e - proj);
    (0..e)
        .map(|i| {
            if i < proj {
                Phase::Full
            } else if i < last {
                Phase::Joint
            } else {
                Phase::LastLayer
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    pub val_dice: f64,
    /// Whether this epoch may be selected as the best checkpoint.
    pub eligible: bool,
}

pub struct TrainOutcome {
    /// Parameters of the best eligible epoch.
    pub best: Model,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    /// Validation Dice before the first step.
    pub initial_val_dice: f64,
    pub history: Vec<EpochRecord>,
    pub log: Vec<LossRecord>,
    pub optimizer_steps: usize,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        self.best.to_checkpoint(CheckpointInfo {
            seed,
            epoch: self.best_epoch,
            val_dice: Some(self.best_val_dice),
        })
    }
}

/// Training log as CSV with header `step,L,L_CE,L_Dice,L_A,L_L1`.
pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut s = String::from(LossRecord::CSV_HEADER);
    s.push('\n');
    for r in log {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,phase,mean_loss,val_dice,eligible\n");
    for h in history {
        let phase = match h.phase {
            Phase::Full => "full",
            Phase::Joint => "joint",
            Phase::LastLayer => "last_layer",
        };
        s.push_str(&format!("{},{phase},{},{},{}\n", h.epoch, h.mean_loss, h.val_dice, h.eligible));
    }
    s
}

fn trainable(model: &Model, phase: Phase) -> Vec<Var> {
    let store = model.params();
    match phase {
        Phase::Full => store.vars(),
        Phase::LastLayer => store.vars_with_prefix(&[HEAD_PARAM]),
        Phase::Joint => {
            let pre = model.config().addon_position == crate::models::AddonPosition::Pre;
            store
                .names()
                .filter(|n| {
                    let frozen = n.starts_with("backbone.")
                        || n.starts_with("latent.")
                        || *n == PROTOTYPE_PARAM
                        || (pre && n.starts_with("addon."));
                    !frozen
                })
                .filter_map(|n| store.get(n).cloned())
                .collect()
        }
    }
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step as u64 + 1)
}

fn batch_loss(model: &Model, cfg: &TrainConfig, cubes: &[&HyperCube], masks: &[&MaskRaster], step: usize) -> Result<(Tensor, LossRecord)> {
    let x = cubes_to_tensor(cubes, cfg.precision)?;
    let out = model.forward(&x, Mode::Train { seed: step_seed(cfg.seed, step) })?;
    let dtype = cfg.precision.dtype();
    let c = cfg.model.num_classes;
    let parts = match &out.latent {
        None => {
            let (_, _, h, w) = out.probabilities.dims4()?;
            let t = Targets::from_masks(masks, (h, w), c, dtype)?;
            // The baseline is trained with Dice loss alone.
            LossParts {
                ce: dice_loss(&out.probabilities, &t.one_hot)?,
                dice: None,
                overlap: None,
                l1: None,
            }
        }
        Some(lat) => {
            let (_, _, hd, wd) = lat.logits.dims4()?;
            let t = Targets::from_masks(masks, (hd, wd), c, dtype)?;
            let class_of = cfg.model.prototype_classes();
            let head = model.ramanseg().unwrap().head_weight();
            LossParts {
                ce: cross_entropy(&lat.logits, &t)?,
                dice: (cfg.model.variant == Variant::RamansegProjectionFree)
                    .then(|| dice_loss(&lat.probabilities, &t.one_hot))
                    .transpose()?,
                overlap: Some(activation_overlap(&lat.similarity, &class_of, c, cfg.pair_convention)?),
                l1: Some(match cfg.l1_scope {
                    L1Scope::All => l1_penalty(head)?,
                    L1Scope::OffClass => l1_off_class(head, &class_of)?,
                }),
            }
        }
    };
    combined_objective(&parts, &cfg.loss, step)
}

/// Trains one model on the dataset's train split, selecting the best epoch by
/// validation Dice.
pub fn train_model(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = data.split(Split::Train);
    let val = data.split(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(Error::Precondition("training needs non-empty train and val splits".into()));
    }
    let mut model = Model::new(&cfg.model, cfg.seed, cfg.precision)?;
    train_from(&mut model, &train, &val, cfg)
}

/// Training loop on an existing model.
pub fn train_from(model: &mut Model, train: &[&Sample], val: &[&Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut patches = Vec::new();
    for s in train {
        let side = cfg.patch_size.min(s.cube.height()).min(s.cube.width());
        patches.extend(extract_patches(s, side, cfg.patch_stride.min(side))?);
    }
    let schedule = phase_schedule(cfg);
    let val_dice = |m: &Model| -> Result<f64> { Ok(evaluate_samples(std::slice::from_ref(m), val, &cfg.inference)?.mean_dice()) };
    let initial_val_dice = val_dice(model)?;
    info!("initial validation Dice {initial_val_dice:.4}, {} training patches", patches.len());

    let mut best: Option<(Model, usize, f64)> = None;
    let mut since_best = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut log = Vec::new();
    let mut step = 0;
    let mut stopped_early = false;
    let mut optimizer: Option<(Phase, AdamW)> = None;
    let mut order: Vec<usize> = (0..patches.len()).collect();

    for (epoch, &phase) in schedule.iter().enumerate() {
        let project_now = cfg.model.variant == Variant::Ramanseg
            && phase != Phase::Full
            && (epoch == 0 || schedule[epoch - 1] == Phase::Full);
        if project_now {
            let proj = project_model(model, train)?;
            info!(
                "epoch {epoch}: projected {} prototypes (mean shift {:.4})",
                proj.distances.len(),
                proj.distances.iter().sum::<f64>() / proj.distances.len() as f64
            );
        }
        if optimizer.as_ref().is_none_or(|(p, _)| *p != phase) {
            let params = ParamsAdamW {
                lr: cfg.learning_rate,
                weight_decay: cfg.weight_decay,
                ..Default::default()
            };
            optimizer = Some((phase, AdamW::new(trainable(model, phase), params)?));
        }
        let opt = &mut optimizer.as_mut().unwrap().1;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let aug = chunk
                .iter()
                .map(|&i| augment(&patches[i].0, &patches[i].1, cfg.augment_flip_p, rng.random()))
                .collect::<Result<Vec<_>>>()?;
            let cubes: Vec<&HyperCube> = aug.iter().map(|(c, _)| c).collect();
            let masks: Vec<&MaskRaster> = aug.iter().map(|(_, m)| m).collect();
            let (loss, rec) = match batch_loss(model, cfg, &cubes, &masks, step) {
                Ok(v) => v,
                Err(Error::NonFiniteLoss { term }) => {
                    let last_good = match &best {
                        Some((m, e, d)) => Some(Box::new(m.to_checkpoint(CheckpointInfo {
                            seed: cfg.seed,
                            epoch: *e,
                            val_dice: Some(*d),
                        })?)),
                        None => None,
                    };
                    return Err(Error::Diverged { step, term, last_good });
                }
                Err(e) => return Err(e),
            };
            opt.backward_step(&loss)?;
            losses.push(rec.total);
            log.push(rec);
            step += 1;
        }

        let dice = val_dice(model)?;
        let eligible = cfg.model.variant != Variant::Ramanseg || phase != Phase::Full;
        let mean_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        info!("epoch {epoch} ({phase:?}): loss {mean_loss:.5}, val Dice {dice:.4}");
        history.push(EpochRecord {
            epoch,
            phase,
            mean_loss,
            val_dice: dice,
            eligible,
        });
        if !eligible {
            continue;
        }
        if best.as_ref().is_none_or(|(_, _, d)| dice > *d) {
            best = Some((model.deep_copy(cfg.precision)?, epoch, dice));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                warn!("early stop after epoch {epoch}: no improvement in {since_best} epochs");
                stopped_early = true;
                break;
            }
        }
    }

    let (best, best_epoch, best_val_dice) = match best {
        Some(b) => b,
        None => {
            let d = history.last().map_or(initial_val_dice, |h| h.val_dice);
            (model.deep_copy(cfg.precision)?, cfg.epochs.saturating_sub(1), d)
        }
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_dice,
        initial_val_dice,
        history,
        log,
        optimizer_steps: step,
        stopped_early,
    })
}
