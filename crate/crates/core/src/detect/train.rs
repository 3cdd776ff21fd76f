use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mean_ap, GtSegment, MapReport};
use super::model::{DfAlign, LabelSet};
use super::proposals::{decode_proposals, soft_nms, Proposal};
use crate::bsd::{diffusion_loss, infer_foreground, NetDenoiser};
use crate::data::{CategorySplit, Dataset, VideoSample};
use crate::error::{Error, Result};
use crate::fpa::{cls_loss, diou_loss, fg_loss, total_loss, LossParts, LossReport, PromptTokenType};
use crate::numerics::{Adam, DenseArray, Tape, Var};
use crate::suc::ConditionType;

const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0000;
const EVAL_STREAM: u64 = 0x6576_616c_0000_0000;

/// Pooled representation of the rows in `rows` (all rows if empty).
fn pooled(f_v: &DenseArray, rows: &[usize]) -> Result<DenseArray> {
    if rows.is_empty() {
        f_v.mean_rows()
    } else {
        f_v.select_rows(rows).mean_rows()
    }
}

fn fg_rows(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
}

/// Detection losses of one video: classification, foreground, localisation.
fn detection_losses(
    model: &DfAlign,
    tape: &mut Tape,
    logits: Var,
    fg: Var,
    dist: Var,
    video: &VideoSample,
    labels: &LabelSet,
) -> Result<(Var, Var, Option<Var>)> {
    let n = video.num_segments();
    let mask = video.foreground_mask();
    let cats: Vec<Option<usize>> = (0..n).map(|i| video.covering(i).map(|a| a.category)).collect();
    let onehot = labels.onehot(&cats)?;
    let l_cls = cls_loss(tape, logits, &onehot, &mask)?;
    let l_fg = fg_loss(tape, fg, &mask, model.cfg.fpa.fg_loss)?;
    let rows = fg_rows(&mask);
    if rows.is_empty() {
        return Ok((l_cls, l_fg, None));
    }
    let k = rows.len();
    let d = tape.gather_rows(dist, &rows)?;
    let mut centre = DenseArray::zeros(&[k, 2]);
    let mut sign = DenseArray::zeros(&[k, 2]);
    let mut gt = DenseArray::zeros(&[k, 2]);
    for (r, &s) in rows.iter().enumerate() {
        let c = s as f64 + 0.5;
        let a = video.covering(s).expect("foreground row is covered");
        centre.set(r, 0, c);
        centre.set(r, 1, c);
        sign.set(r, 0, -1.0);
        sign.set(r, 1, 1.0);
        gt.set(r, 0, a.start);
        gt.set(r, 1, a.end);
    }
    let signed = tape.mul_const(d, &sign)?;
    let cv = tape.constant(centre);
    let pred = tape.add(cv, signed)?;
    Ok((l_cls, l_fg, Some(diou_loss(tape, pred, &gt)?)))
}

/// Label set for one training batch: every class present in the batch plus
/// a random number of other seen classes.
fn episode_labels<R: Rng + ?Sized>(
    base: &LabelSet,
    split: &CategorySplit,
    batch: &[&VideoSample],
    rng: &mut R,
) -> Result<LabelSet> {
    let must: BTreeSet<usize> = batch.iter().flat_map(|v| v.annotations.iter().map(|a| a.category)).collect();
    let mut others: Vec<usize> = base.ids.iter().copied().filter(|c| !must.contains(c)).collect();
    others.shuffle(rng);
    let lo = must.len().max(2).min(base.len());
    let size = rng.random_range(lo..=base.len());
    let mut ids: Vec<usize> = must.into_iter().collect();
    ids.extend(others.into_iter().take(size.saturating_sub(ids.len())));
    ids.sort_unstable();
    base.subset(split, &ids)
}

/// One optimiser step on `batch`.
pub fn train_batch<R: Rng + ?Sized>(
    model: &mut DfAlign,
    opt: &mut Adam,
    batch: &[&VideoSample],
    labels: &LabelSet,
    rng: &mut R,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let cfg = &model.cfg;
    let bsd = cfg.uses_bsd();
    let b = batch.len() as f64;
    let mut tape = Tape::new();
    let text = model.project_text(&mut tape, labels)?;
    let shared_c = if bsd && cfg.suc.condition_type != ConditionType::PerAction {
        model.conditioner.condition(&mut tape, &model.store, text, None)?
    } else {
        None
    };

    let mut df_terms = Vec::new();
    let mut cls_terms = Vec::new();
    let mut fg_terms = Vec::new();
    let mut loc_terms = Vec::new();
    for video in batch {
        let x = tape.constant(video.features.as_matrix());
        let n = video.num_segments();
        let f_v = model.backbone.forward(&mut tape, &model.store, x, n)?;
        let prompt = match cfg.fpa.prompt_token_type {
            PromptTokenType::None => None,
            PromptTokenType::Learnable => Some(tape.param(&model.store, model.prompt_token)),
            PromptTokenType::Video => Some(tape.mean_rows(f_v)?),
            PromptTokenType::Foreground => {
                let fv = tape.value(f_v).clone();
                let h_v = pooled(&fv, &[])?;
                let h_f = pooled(&fv, &fg_rows(&video.foreground_mask()))?;
                let c = if cfg.suc.condition_type == ConditionType::PerAction {
                    let cat = video
                        .annotations
                        .first()
                        .ok_or_else(|| Error::Precondition(format!("video {} has no actions", video.id)))?
                        .category;
                    let k = labels
                        .index_of(cat)
                        .ok_or_else(|| Error::Precondition(format!("category {cat} is not in the label set")))?;
                    model.conditioner.condition(&mut tape, &model.store, text, Some(k))?
                } else {
                    shared_c
                };
                let (l_df, _) = diffusion_loss(
                    &mut tape,
                    &model.denoiser,
                    &model.store,
                    &h_v,
                    &h_f,
                    c,
                    &model.schedule,
                    cfg.diffusion.paper_literal_forward,
                    rng,
                )?;
                df_terms.push(l_df);
                let h = if cfg.fpa.teacher_forcing {
                    tape.constant(h_f)
                } else if cfg.fpa.backprop_one_step {
                    let hv = tape.constant(h_v);
                    model.denoiser.forward(&mut tape, &model.store, hv, &[model.schedule.steps()], c)?
                } else {
                    let cv = c.map(|c| tape.value(c).clone());
                    let den = NetDenoiser {
                        net: &model.denoiser,
                        store: &model.store,
                    };
                    let h = infer_foreground(&den, &h_v, cv.as_ref(), &model.schedule, rng)?;
                    tape.constant(h)
                };
                Some(h)
            }
        };
        let out = model.heads(&mut tape, f_v, text.specific, prompt)?;
        let (l_cls, l_fg, l_loc) = detection_losses(model, &mut tape, out.logits, out.fg, out.dist, video, labels)?;
        cls_terms.push(l_cls);
        fg_terms.push(l_fg);
        loc_terms.extend(l_loc);
    }
    let mut mean = |terms: &[Var]| -> Result<Option<Var>> {
        let mut acc: Option<Var> = None;
        for &t in terms {
            acc = Some(match acc {
                Some(a) => tape.add(a, t)?,
                None => t,
            });
        }
        Ok(acc.map(|a| tape.scale(a, 1.0 / b)))
    };
    let parts = LossParts {
        df: mean(&df_terms)?,
        cls: mean(&cls_terms)?,
        fg: mean(&fg_terms)?,
        loc: mean(&loc_terms)?,
    };
    let weights = cfg.fpa.weights;
    let total = total_loss(&mut tape, parts, weights)?;
    let report = LossReport::from_tape(&tape, parts, weights);
    if !report.is_finite() {
        return Err(Error::NonFinite(format!("training loss {report:?}")));
    }
    let grads = tape.backward(total)?;
    model.store.zero_grads();
    tape.accumulate(&grads, &mut model.store);
    opt.step(&mut model.store);
    Ok(report)
}

/// One pass over `videos` in shuffled batches; returns the mean report.
pub fn train_epoch<R: Rng + ?Sized>(
    model: &mut DfAlign,
    opt: &mut Adam,
    videos: &[VideoSample],
    split: &CategorySplit,
    labels: &LabelSet,
    rng: &mut R,
) -> Result<LossReport> {
    if videos.is_empty() {
        return Err(Error::Precondition("no training videos".into()));
    }
    let mut order: Vec<usize> = (0..videos.len()).collect();
    order.shuffle(rng);
    let mut sum = LossReport::default();
    let mut count = 0usize;
    for chunk in order.chunks(model.cfg.train.batch) {
        let batch: Vec<&VideoSample> = chunk.iter().map(|&i| &videos[i]).collect();
        let set = if model.cfg.train.episodic_labels {
            episode_labels(labels, split, &batch, rng)?
        } else {
            labels.clone()
        };
        let r = train_batch(model, opt, &batch, &set, rng)?;
        sum.accumulate(&r);
        count += 1;
    }
    Ok(sum.scaled(1.0 / count as f64))
}

pub fn steps_per_epoch(num_videos: usize, batch: usize) -> usize {
    num_videos.div_ceil(batch.max(1))
}

/// Builds a model from `seed` and trains it on the seen split. `on_epoch`
/// receives the zero-based epoch and its mean report.
pub fn fit(
    cfg: &crate::config::RunConfig,
    data: &Dataset,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &LossReport),
) -> Result<DfAlign> {
    let mut model = DfAlign::new(cfg, seed)?;
    let labels = LabelSet::new(&data.split, &data.split.seen, cfg)?;
    let spe = steps_per_epoch(data.train.len(), cfg.train.batch) as u64;
    let mut opt = Adam::new(&model.store, cfg.train.lr, spe * cfg.train.warmup_epochs as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TRAIN_STREAM);
    for epoch in 0..cfg.train.epochs {
        let r = train_epoch(&mut model, &mut opt, &data.train, &data.split, &labels, &mut rng)?;
        on_epoch(epoch, &r);
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: std::collections::BTreeMap<String, f64>,
    pub avg_map: f64,
    pub per_class: std::collections::BTreeMap<String, Vec<f64>>,
    pub config_hash: String,
    pub seed: u64,
    pub wall_s: f64,
}

impl MetricsReport {
    fn from_map(m: MapReport, config_hash: String, seed: u64, wall_s: f64) -> Self {
        Self {
            map: m.map,
            avg_map: m.avg_map,
            per_class: m.per_class,
            config_hash,
            seed,
            wall_s,
        }
    }
}

/// Ground-truth segments of `videos`, tagged by position.
pub fn ground_truth(videos: &[VideoSample]) -> Vec<GtSegment> {
    videos
        .iter()
        .enumerate()
        .flat_map(|(v, s)| {
            s.annotations.iter().map(move |a| GtSegment {
                video: v,
                start: a.start,
                end: a.end,
                category: a.category,
            })
        })
        .collect()
}

fn video_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_STREAM);
    rng.set_stream(index as u64);
    rng
}

/// Post-NMS proposals for every video, in video order.
pub fn detect_all(model: &DfAlign, videos: &[VideoSample], labels: &LabelSet, seed: u64) -> Result<Vec<Proposal>> {
    let conds = model.conditions(labels)?;
    let d = &model.cfg.detect;
    let per_video: Vec<Vec<Proposal>> = videos
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let mut rng = video_rng(seed, i);
            let p = model.predict(&v.features, labels, &conds, &mut rng)?;
            let props = decode_proposals(i, &p.dist, &p.logits, &p.fg, &labels.ids, d.fg_threshold)?;
            Ok(soft_nms(&props, d.sigma_nms, d.score_floor))
        })
        .collect::<Result<_>>()?;
    Ok(per_video.into_iter().flatten().collect())
}

/// Detection on the unseen split and tIoU-mAP over `detect.tiou_grid`.
pub fn evaluate(model: &DfAlign, data: &Dataset, seed: u64) -> Result<MetricsReport> {
    let started = Instant::now();
    let labels = LabelSet::new(&data.split, &data.split.unseen, &model.cfg)?;
    let props = detect_all(model, &data.test, &labels, seed)?;
    let gt = ground_truth(&data.test);
    let names = &data.split.category_names;
    let m = mean_ap(&props, &gt, &model.cfg.detect.tiou_grid, |c| names[c].clone());
    Ok(MetricsReport::from_map(
        m,
        model.cfg.hash(),
        seed,
        started.elapsed().as_secs_f64(),
    ))
}
