//! Joint optimization of the carrier set and the keyed decoder.
//!
//! Each step samples one view and runs up to three kinds of passes: the
//! carrier against its own ground truth, every registered key's decoded set
//! against that secret's ground truth, and one freshly drawn wrong key
//! against the carrier ground truth. All weighted passes backpropagate into
//! the shared carrier; keyed passes also reach the decoder. A pass whose
//! weight is zero is skipped outright, so a configuration with no keyed
//! passes reduces to plain photometric splat training bit for bit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainingConfig;
use crate::dataset::{CombinedDataset, CombinedView};
use crate::decoder::{
    decode, decoder_backward, embed_key, DecoderConfig, DecoderGrads, DecoderParams, KeyEmbedding,
};
use crate::error::TrainError;
use crate::gaussians::{activate, quat_to_rotation, GaussianGrads, GaussianSet};
use crate::loss::{photometric_with_grad, scale_grad};
use crate::metrics::psnr;
use crate::optim::{position_lr_at, AdamConfig, DecoderAdam, GaussianAdam};
use crate::render::{backward, render, RenderAux, RenderOptions};
use crate::scalar::{real, Real};
use crate::sh::SH_C0;

// Disjoint seed offsets, one per consumer. Adding or removing one consumer
// never shifts the draws of another, which is what keeps reduced
// configurations (no secrets, zero weights) on the exact same trajectory.
const STREAM_VIEWS: u64 = 0x76ca_39a3_6ad8_052f;
const STREAM_WRONG_KEY: u64 = 0x45f0_6cbd_9e2e_7d41;
const STREAM_DENSIFY: u64 = 0x8d2e_9a11_5b7f_03c3;
const STREAM_DECODER_INIT: u64 = 0x13a8_55de_61c9_2e77;
const STREAM_EVAL_KEY: u64 = 0x5bd1_e995_7b79_2391;

/// Characters a key may contain.
pub const KEY_ALPHABET: &[u8; 62] =
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

/// Required key length.
pub const KEY_LENGTH: usize = 16;

/// Raw (unweighted) component losses of one step. `total` is the weighted
/// sum actually optimized.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub cover: f64,
    pub secrets: Vec<f64>,
    pub incorrect: f64,
}

/// One metrics row: the losses of the step it was taken at plus full-dataset
/// PSNR evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub loss: LossReport,
    pub psnr_cover: f64,
    pub psnr_secrets: Vec<f64>,
    /// Mean PSNR of a fixed wrong-key decode against the secret ground
    /// truths. `None` when no keys are registered.
    pub psnr_wrong_key: Option<f64>,
}

/// Metrics collected over a run, one row per logging point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub secret_count: usize,
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new(secret_count: usize) -> Self {
        MetricsLog {
            secret_count,
            rows: Vec::new(),
        }
    }

    /// CSV with one column per component. Floats use the shortest
    /// round-trippable form, so equal runs produce equal files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss_total,loss_cover");
        for s in 0..self.secret_count {
            out.push_str(&format!(",loss_secret_{s}"));
        }
        out.push_str(",loss_incorrect,psnr_cover");
        for s in 0..self.secret_count {
            out.push_str(&format!(",psnr_secret_{s}"));
        }
        if self.secret_count > 0 {
            out.push_str(",psnr_wrongkey_vs_secret");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{}",
                row.iteration, row.loss.total, row.loss.cover
            ));
            for l in &row.loss.secrets {
                out.push_str(&format!(",{l}"));
            }
            out.push_str(&format!(",{},{}", row.loss.incorrect, row.psnr_cover));
            for p in &row.psnr_secrets {
                out.push_str(&format!(",{p}"));
            }
            if let Some(w) = row.psnr_wrong_key {
                out.push_str(&format!(",{w}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Everything a run mutates, separable from the immutable config and data.
pub struct TrainState<T: Real> {
    pub iteration: usize,
    pub cover: GaussianSet<T>,
    pub decoder: Option<DecoderParams<T>>,
    pub keys: Vec<KeyEmbedding<T>>,
    pub cover_adam: GaussianAdam<T>,
    pub decoder_adam: Option<DecoderAdam<T>>,
    /// Accumulated view-space gradient norms since the last densification,
    /// indexed like `cover`, with per-gaussian observation counts.
    pub densify_norm: Vec<f64>,
    pub densify_obs: Vec<u32>,
    /// Max distance of any camera center from their centroid. Scales the
    /// clone/split decision.
    pub extent: f64,
    rng_views: ChaCha8Rng,
    rng_wrong_key: ChaCha8Rng,
    rng_densify: ChaCha8Rng,
    view_queue: Vec<usize>,
    eval_wrong_key: Option<KeyEmbedding<T>>,
}

impl<T: Real> TrainState<T> {
    /// Next view index under without-replacement epoch shuffling.
    fn next_view(&mut self, total: usize) -> usize {
        if self.view_queue.is_empty() {
            self.view_queue = (0..total).collect();
            self.view_queue.shuffle(&mut self.rng_views);
        }
        self.view_queue.pop().expect("queue was just refilled")
    }
}

/// Max distance of any camera center from the centroid of all centers.
pub fn camera_extent<T: Real>(views: &[CombinedView<T>]) -> f64 {
    let centers: Vec<[f64; 3]> = views
        .iter()
        .map(|v| {
            let c = v.camera.center();
            [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()]
        })
        .collect();
    let n = centers.len().max(1) as f64;
    let mut mean = [0.0f64; 3];
    for c in &centers {
        for k in 0..3 {
            mean[k] += c[k] / n;
        }
    }
    let max_d = centers
        .iter()
        .map(|c| {
            ((c[0] - mean[0]).powi(2) + (c[1] - mean[1]).powi(2) + (c[2] - mean[2]).powi(2)).sqrt()
        })
        .fold(0.0f64, f64::max);
    if max_d > 0.0 {
        max_d
    } else {
        1.0
    }
}

/// Seeds one isotropic gaussian per reconstruction point: color is the
/// inverse-activated DC band, opacity starts at 0.1, and the scale is the
/// mean distance to the nearest neighbours (up to three). Keeps at most
/// `max_points` points but measures distances over the whole cloud.
pub fn init_cover_from_sfm<T: Real>(
    positions: &[[T; 3]],
    colors: &[[T; 3]],
    sh_degree: usize,
    max_points: usize,
) -> Result<GaussianSet<T>, TrainError> {
    if positions.is_empty() {
        return Err(TrainError::BadConfig {
            message: "no reconstruction points to initialize from".into(),
        });
    }
    if positions.len() != colors.len() {
        return Err(TrainError::BadConfig {
            message: "reconstruction points and colors differ in length".into(),
        });
    }
    let total = positions.len();
    let n = total.min(max_points.max(1));
    let mut set = GaussianSet::empty(sh_degree);
    let basis = set.basis_len();
    let logit = real::<T>((1.0f64 / 9.0).ln());
    for i in 0..n {
        // Three smallest squared distances to any other point.
        let mut best = [f64::INFINITY; 3];
        for j in 0..total {
            if j == i {
                continue;
            }
            let mut d2 = 0.0;
            for k in 0..3 {
                let d = positions[i][k].as_f64() - positions[j][k].as_f64();
                d2 += d * d;
            }
            if d2 < best[2] {
                best[2] = d2;
                if best[2] < best[1] {
                    best.swap(1, 2);
                }
                if best[1] < best[0] {
                    best.swap(0, 1);
                }
            }
        }
        let neighbours = best.iter().take_while(|d| d.is_finite()).count();
        let mean_d = if neighbours == 0 {
            0.1
        } else {
            best[..neighbours].iter().map(|d| d.sqrt()).sum::<f64>() / neighbours as f64
        };
        let s = real::<T>(mean_d.max(1e-7).ln());
        set.positions.push(positions[i]);
        set.opacity_logits.push(logit);
        set.rotations.push([T::one(), T::zero(), T::zero(), T::zero()]);
        set.log_scales.push([s, s, s]);
        let half = real::<T>(0.5);
        let c0 = real::<T>(SH_C0);
        let mut row = vec![T::zero(); basis * 3];
        for k in 0..3 {
            row[k] = (colors[i][k] - half) / c0;
        }
        set.sh.extend_from_slice(&row);
    }
    Ok(set)
}

/// Uniform draw over 16-character alphanumeric keys that are not registered.
/// Rejection keeps the distribution uniform over the complement.
pub fn sample_wrong_key(rng: &mut ChaCha8Rng, registered: &[String]) -> String {
    loop {
        let key: String = (0..KEY_LENGTH)
            .map(|_| KEY_ALPHABET[rng.gen_range(0..KEY_ALPHABET.len())] as char)
            .collect();
        if registered.iter().all(|k| k != &key) {
            return key;
        }
    }
}

/// Builds the initial state: carrier from the reconstruction points, fresh
/// optimizers, embedded keys, and a decoder when any key is registered.
pub fn init_state<T: Real>(
    config: &TrainingConfig,
    dataset: &CombinedDataset<T>,
) -> Result<TrainState<T>, TrainError> {
    config.validate(dataset.secret_count())?;
    if dataset.views.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let cover = init_cover_from_sfm(
        &dataset.sfm_positions,
        &dataset.sfm_colors,
        config.sh_degree,
        config.max_gaussians,
    )?;
    let cover_adam = GaussianAdam::new(cover.len(), config.sh_degree, AdamConfig::default());
    let keys = config
        .secret_keys
        .iter()
        .map(|k| embed_key(k, config.decoder_key_dim))
        .collect::<Result<Vec<_>, _>>()?;
    let (decoder, decoder_adam, eval_wrong_key) = if keys.is_empty() {
        (None, None, None)
    } else {
        let params = DecoderParams::new(
            DecoderConfig {
                hidden: config.decoder_hidden,
                key_dim: config.decoder_key_dim,
                sh_degree: config.sh_degree,
            },
            config.mask,
            config.seed ^ STREAM_DECODER_INIT,
        );
        let adam = DecoderAdam::new(&params, AdamConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ STREAM_EVAL_KEY);
        let wrong = sample_wrong_key(&mut rng, &config.secret_keys);
        let wrong = embed_key(&wrong, config.decoder_key_dim)?;
        (Some(params), Some(adam), Some(wrong))
    };
    let n = cover.len();
    Ok(TrainState {
        iteration: 0,
        cover,
        decoder,
        keys,
        cover_adam,
        decoder_adam,
        densify_norm: vec![0.0; n],
        densify_obs: vec![0; n],
        extent: camera_extent(&dataset.views),
        rng_views: ChaCha8Rng::seed_from_u64(config.seed ^ STREAM_VIEWS),
        rng_wrong_key: ChaCha8Rng::seed_from_u64(config.seed ^ STREAM_WRONG_KEY),
        rng_densify: ChaCha8Rng::seed_from_u64(config.seed ^ STREAM_DENSIFY),
        view_queue: Vec::new(),
        eval_wrong_key,
    })
}

fn record_view_space<T: Real>(
    norm: &mut [f64],
    obs: &mut [u32],
    grads: &GaussianGrads<T>,
    aux: &RenderAux<T>,
) {
    for i in aux.visible_sources() {
        norm[i] += grads.vspace_norm[i].as_f64();
        obs[i] += 1;
    }
}

fn add_decoder_grads<T: Real>(dst: &mut DecoderGrads<T>, src: &DecoderGrads<T>) {
    let mut src = src.clone();
    let from = src.tensors_mut();
    let into = dst.tensors_mut();
    for (d, s) in into.into_iter().zip(from) {
        for (a, b) in d.iter_mut().zip(s.iter()) {
            *a = *a + *b;
        }
    }
}

/// One optimization step against `dataset.views[view_index]`. Applies the
/// Adam updates and reports the component losses; weights fold into the
/// image gradients before backprop so accumulation stays unweighted.
pub fn train_step<T: Real>(
    state: &mut TrainState<T>,
    config: &TrainingConfig,
    dataset: &CombinedDataset<T>,
    betas: &[f64],
    view_index: usize,
) -> Result<LossReport, TrainError> {
    let view = &dataset.views[view_index];
    let options = RenderOptions::default();
    let mut grads = GaussianGrads::zeros(state.cover.len(), state.cover.sh_degree);
    let mut dec_grads = state.decoder.as_ref().map(|p| p.zeros_like());
    let mut report = LossReport {
        total: 0.0,
        cover: 0.0,
        secrets: vec![0.0; state.keys.len()],
        incorrect: 0.0,
    };

    if config.beta_cover > 0.0 {
        if let Some(gt) = &view.cover_gt {
            let (image, aux) = render(&state.cover, &view.camera, &options)?;
            let (loss, mut grad) = photometric_with_grad(&image, gt, real(config.lambda_cover))?;
            report.cover = loss.as_f64();
            scale_grad(&mut grad, real(config.beta_cover));
            let g = backward(&state.cover, &view.camera, &aux, &grad)?;
            record_view_space(&mut state.densify_norm, &mut state.densify_obs, &g, &aux);
            grads.accumulate(&g);
        }
    }

    for s in 0..state.keys.len() {
        if betas[s] <= 0.0 {
            continue;
        }
        let Some(gt) = &view.secret_gt[s] else {
            continue;
        };
        let key = &state.keys[s];
        let params = state.decoder.as_ref().expect("keys imply a decoder");
        let decoded = decode(&state.cover, key, config.mask, params)?;
        let (image, aux) = render(&decoded, &view.camera, &options)?;
        let (loss, mut grad) = photometric_with_grad(&image, gt, real(config.lambda_secret))?;
        report.secrets[s] = loss.as_f64();
        scale_grad(&mut grad, real(betas[s]));
        let g_decoded = backward(&decoded, &view.camera, &aux, &grad)?;
        let (g_params, g_cover) = decoder_backward(&state.cover, key, config.mask, params, &g_decoded)?;
        record_view_space(&mut state.densify_norm, &mut state.densify_obs, &g_cover, &aux);
        grads.accumulate(&g_cover);
        add_decoder_grads(dec_grads.as_mut().expect("keys imply a decoder"), &g_params);
    }

    if config.beta_incorrect > 0.0 && !state.keys.is_empty() {
        if let Some(gt) = &view.cover_gt {
            let wrong = sample_wrong_key(&mut state.rng_wrong_key, &config.secret_keys);
            let wrong = embed_key::<T>(&wrong, config.decoder_key_dim)?;
            let params = state.decoder.as_ref().expect("keys imply a decoder");
            let decoded = decode(&state.cover, &wrong, config.mask, params)?;
            let (image, aux) = render(&decoded, &view.camera, &options)?;
            let (loss, mut grad) =
                photometric_with_grad(&image, gt, real(config.lambda_incorrect))?;
            report.incorrect = loss.as_f64();
            scale_grad(&mut grad, real(config.beta_incorrect));
            let g_decoded = backward(&decoded, &view.camera, &aux, &grad)?;
            let (g_params, g_cover) =
                decoder_backward(&state.cover, &wrong, config.mask, params, &g_decoded)?;
            // No densification stats: the wrong-key pass must not create
            // clone pressure for structure the carrier scene never asked for.
            grads.accumulate(&g_cover);
            add_decoder_grads(dec_grads.as_mut().expect("keys imply a decoder"), &g_params);
        }
    }

    report.total = config.beta_cover * report.cover
        + betas
            .iter()
            .zip(&report.secrets)
            .map(|(b, l)| b * l)
            .sum::<f64>()
        + config.beta_incorrect * report.incorrect;

    let iteration = state.iteration;
    let check = |value: f64, component: &'static str| {
        if value.is_finite() {
            Ok(())
        } else {
            Err(TrainError::NonFiniteLoss {
                iteration,
                component,
            })
        }
    };
    check(report.cover, "cover")?;
    for l in &report.secrets {
        check(*l, "secret")?;
    }
    check(report.incorrect, "incorrect")?;
    check(report.total, "total")?;

    let mut rates = config.rates;
    rates.position = position_lr_at(
        state.iteration,
        config.iterations,
        config.rates.position,
        config.position_lr_final,
    );
    state.cover_adam.update(&mut state.cover, &grads, &rates);
    if let (Some(params), Some(adam)) = (state.decoder.as_mut(), state.decoder_adam.as_mut()) {
        adam.update(
            params,
            dec_grads.as_ref().expect("allocated with the decoder"),
            config.decoder_lr,
        );
    }
    state.iteration += 1;
    Ok(report)
}

/// Fixed four uniform draws per call so the stream alignment never depends
/// on a rejection loop.
fn sample_normal3(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let pair = |rng: &mut ChaCha8Rng| {
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    };
    let (a, b) = pair(rng);
    let (c, _) = pair(rng);
    [a, b, c]
}

fn push_row<T: Real>(dst: &mut GaussianSet<T>, src: &GaussianSet<T>, i: usize) {
    let w = src.basis_len() * 3;
    dst.positions.push(src.positions[i]);
    dst.opacity_logits.push(src.opacity_logits[i]);
    dst.rotations.push(src.rotations[i]);
    dst.log_scales.push(src.log_scales[i]);
    dst.sh.extend_from_slice(&src.sh[i * w..(i + 1) * w]);
}

/// Adjusts capacity from the accumulated view-space pressure: gaussians over
/// the threshold are cloned in place when small and replaced by two children
/// sampled inside the parent (scales shrunk by 1.6) when large. Low-opacity
/// gaussians are pruned in the same sweep. The budget fills highest pressure
/// first and the accumulators reset.
pub fn densify<T: Real>(state: &mut TrainState<T>, config: &TrainingConfig) -> Result<(), TrainError> {
    let n = state.cover.len();
    let act = activate(&state.cover)?;
    let mean: Vec<f64> = (0..n)
        .map(|i| {
            if state.densify_obs[i] > 0 {
                state.densify_norm[i] / state.densify_obs[i] as f64
            } else {
                0.0
            }
        })
        .collect();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| mean[i] > config.densify_grad_threshold)
        .collect();
    candidates.sort_by(|&a, &b| {
        mean[b]
            .partial_cmp(&mean[a])
            .expect("means are finite")
            .then(a.cmp(&b))
    });

    let mut room = config.max_gaussians.saturating_sub(n);
    let clone_limit = state.extent * 0.01;
    let shrink = real::<T>(1.6f64.ln());
    let mut removed = vec![false; n];
    let mut children: GaussianSet<T> = GaussianSet::empty(state.cover.sh_degree);
    for &i in &candidates {
        if room == 0 {
            break;
        }
        room -= 1;
        let widest = act.scales[i]
            .iter()
            .fold(f64::NEG_INFINITY, |m, s| m.max(s.as_f64()));
        if widest < clone_limit {
            push_row(&mut children, &state.cover, i);
        } else {
            removed[i] = true;
            let rot = quat_to_rotation(&act.rotations[i]);
            for _ in 0..2 {
                let z = sample_normal3(&mut state.rng_densify);
                let local = [
                    act.scales[i][0].as_f64() * z[0],
                    act.scales[i][1].as_f64() * z[1],
                    act.scales[i][2].as_f64() * z[2],
                ];
                push_row(&mut children, &state.cover, i);
                let last = children.len() - 1;
                for r in 0..3 {
                    let offset = rot[r][0].as_f64() * local[0]
                        + rot[r][1].as_f64() * local[1]
                        + rot[r][2].as_f64() * local[2];
                    children.positions[last][r] =
                        state.cover.positions[i][r] + real::<T>(offset);
                }
                for k in 0..3 {
                    children.log_scales[last][k] = state.cover.log_scales[i][k] - shrink;
                }
            }
        }
    }

    let threshold = real::<T>(config.prune_opacity_threshold);
    for i in 0..n {
        if act.opacities[i] < threshold {
            removed[i] = true;
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    let kept = state.cover.select(&keep);
    state.cover = kept;
    state.cover.append(&children);
    state.cover_adam.select(&keep);
    state.cover_adam.extend_zeros(children.len());
    state.densify_norm = vec![0.0; state.cover.len()];
    state.densify_obs = vec![0; state.cover.len()];
    Ok(())
}

fn eval_metrics<T: Real>(
    state: &TrainState<T>,
    config: &TrainingConfig,
    dataset: &CombinedDataset<T>,
) -> Result<(f64, Vec<f64>, Option<f64>), TrainError> {
    let options = RenderOptions::default();
    let mut cover_sum = 0.0;
    let mut cover_n = 0usize;
    let mut secret_sum = vec![0.0; state.keys.len()];
    let mut secret_n = vec![0usize; state.keys.len()];
    let mut wrong_sum = 0.0;
    let mut wrong_n = 0usize;
    for view in &dataset.views {
        if let Some(gt) = &view.cover_gt {
            let (image, _) = render(&state.cover, &view.camera, &options)?;
            cover_sum += psnr(&image, gt)?;
            cover_n += 1;
        }
        if state.keys.is_empty() || view.secret_gt.iter().all(Option::is_none) {
            continue;
        }
        let params = state.decoder.as_ref().expect("keys imply a decoder");
        let wrong = state.eval_wrong_key.as_ref().expect("keys imply a wrong key");
        let wrong_image = {
            let decoded = decode(&state.cover, wrong, config.mask, params)?;
            render(&decoded, &view.camera, &options)?.0
        };
        for (s, key) in state.keys.iter().enumerate() {
            if let Some(gt) = &view.secret_gt[s] {
                let decoded = decode(&state.cover, key, config.mask, params)?;
                let (image, _) = render(&decoded, &view.camera, &options)?;
                secret_sum[s] += psnr(&image, gt)?;
                secret_n[s] += 1;
                wrong_sum += psnr(&wrong_image, gt)?;
                wrong_n += 1;
            }
        }
    }
    let psnr_cover = cover_sum / cover_n.max(1) as f64;
    let psnr_secrets = secret_sum
        .iter()
        .zip(&secret_n)
        .map(|(s, n)| s / (*n).max(1) as f64)
        .collect();
    let psnr_wrong = if state.keys.is_empty() {
        None
    } else {
        Some(wrong_sum / wrong_n.max(1) as f64)
    };
    Ok((psnr_cover, psnr_secrets, psnr_wrong))
}

/// Runs the full loop: epoch-shuffled view sampling, periodic densification
/// until the configured stop, and metrics rows at every logging interval
/// plus the final iteration. Returns the trained carrier, the decoder when
/// keys were registered, and the metrics log.
pub fn train<T: Real>(
    config: &TrainingConfig,
    dataset: &CombinedDataset<T>,
) -> Result<(GaussianSet<T>, Option<DecoderParams<T>>, MetricsLog), TrainError> {
    let mut state = init_state(config, dataset)?;
    let betas = config.secret_betas();
    let mut log = MetricsLog::new(state.keys.len());
    for it in 1..=config.iterations {
        let view_index = state.next_view(dataset.views.len());
        let report = train_step(&mut state, config, dataset, &betas, view_index)?;
        if config.densify_interval > 0
            && it % config.densify_interval == 0
            && it < config.densify_stop()
        {
            densify(&mut state, config)?;
        }
        if it == config.iterations || (config.metrics_interval > 0 && it % config.metrics_interval == 0)
        {
            let (psnr_cover, psnr_secrets, psnr_wrong_key) =
                eval_metrics(&state, config, dataset)?;
            log.rows.push(MetricsRow {
                iteration: it,
                loss: report,
                psnr_cover,
                psnr_secrets,
                psnr_wrong_key,
            });
        }
    }
    Ok((state.cover, state.decoder, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_combined_dataset;
    use crate::decoder::validate_key;
    use crate::synth::{synth_scene, SynthKind};

    type S = f64;

    fn tiny_dataset(with_secret: bool) -> CombinedDataset<S> {
        let (cover, _) = synth_scene(SynthKind::Blobs, 3, 16, 16, 7).expect("cover scene");
        let secrets: Vec<_> = if with_secret {
            vec![synth_scene(SynthKind::Rings, 3, 16, 16, 11).expect("secret scene").0]
        } else {
            Vec::new()
        };
        make_combined_dataset(&cover, &secrets, &vec![None; secrets.len() + 1])
            .expect("combined dataset")
    }

    fn tiny_config(keys: Vec<String>, iterations: usize) -> TrainingConfig {
        let mut config = TrainingConfig::desk();
        config.iterations = iterations;
        config.max_gaussians = 96;
        config.metrics_interval = 10;
        config.densify_interval = 10;
        config.densify_stop_iteration = 0;
        config.secret_keys = keys;
        config.decoder_hidden = 16;
        config.decoder_key_dim = 8;
        config.sh_degree = 1;
        config.seed = 5;
        config
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let dataset = tiny_dataset(false);
        let config = tiny_config(Vec::new(), 0);
        let init = init_state(&config, &dataset).expect("init");
        let (cover, decoder, log) = train(&config, &dataset).expect("train");
        assert_eq!(cover, init.cover);
        assert!(decoder.is_none());
        assert!(log.rows.is_empty());
    }

    #[test]
    fn wrong_key_sampling_never_returns_registered() {
        let registered = vec![
            "AAAAAAAAAAAAAAAA".to_string(),
            "0123456789abcdef".to_string(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100_000 {
            let key = sample_wrong_key(&mut rng, &registered);
            assert!(validate_key(&key).is_ok());
            assert!(!registered.contains(&key));
        }
    }

    #[test]
    fn wrong_key_rejection_actually_rejects() {
        // With every 'A'-leading key registered impossible to construct, use
        // a direct collision check instead: seed a draw, register its first
        // output, and confirm the same seed now yields the second draw.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let first = sample_wrong_key(&mut rng, &[]);
        let second = sample_wrong_key(&mut rng, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let redraw = sample_wrong_key(&mut rng, std::slice::from_ref(&first));
        assert_eq!(redraw, second);
    }

    #[test]
    fn loss_total_is_exact_weighted_sum() {
        let dataset = tiny_dataset(true);
        let mut config = tiny_config(vec!["S3cretKey0Secret".to_string()], 6);
        config.beta_cover = 0.4;
        config.beta_secret = vec![0.3];
        config.beta_incorrect = 0.02;
        let mut state = init_state(&config, &dataset).expect("init");
        let betas = config.secret_betas();
        for it in 0..6 {
            let view = it % dataset.views.len();
            let report = train_step(&mut state, &config, &dataset, &betas, view).expect("step");
            let expected = 0.4 * report.cover + 0.3 * report.secrets[0] + 0.02 * report.incorrect;
            assert!((report.total - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn fresh_decoder_incorrect_pass_matches_cover_loss() {
        // Zero-initialized branch outputs leave wrong-key decodes identical
        // to the carrier, so both passes compare the same image to the same
        // ground truth.
        let dataset = tiny_dataset(true);
        let config = tiny_config(vec!["S3cretKey0Secret".to_string()], 1);
        let mut state = init_state(&config, &dataset).expect("init");
        let betas = config.secret_betas();
        let report = train_step(&mut state, &config, &dataset, &betas, 0).expect("step");
        assert!(report.cover > 0.0);
        assert_eq!(report.cover, report.incorrect);
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let dataset = tiny_dataset(true);
        let mut config = tiny_config(vec!["S3cretKey0Secret".to_string()], 1);
        config.beta_cover = 0.0;
        config.beta_secret = vec![0.0];
        config.beta_incorrect = 0.0;
        config.densify_interval = 1000;
        let mut state = init_state(&config, &dataset).expect("init");
        let cover0 = state.cover.clone();
        let decoder0 = state.decoder.clone().expect("decoder");
        let betas = config.secret_betas();
        for it in 0..3 {
            let report =
                train_step(&mut state, &config, &dataset, &betas, it % dataset.views.len())
                    .expect("step");
            assert_eq!(report.total, 0.0);
        }
        assert_eq!(state.cover, cover0);
        let mut after = state.decoder.clone().expect("decoder");
        let mut before = decoder0.clone();
        for (a, b) in after.tensors_mut().into_iter().zip(before.tensors_mut()) {
            assert_eq!(&*a, &*b);
        }
    }

    #[test]
    fn plain_reduction_matches_no_secret_run_bitwise() {
        let (cover, _) = synth_scene::<S>(SynthKind::Blobs, 3, 16, 16, 7).expect("cover scene");
        let (mut secret, _) =
            synth_scene::<S>(SynthKind::Rings, 3, 16, 16, 11).expect("secret scene");
        // Drop the secret's reconstruction points so both runs seed the same
        // carrier; the property under test is that zero-weight keyed passes
        // leave the trajectory untouched, not that initialization ignores
        // extra geometry.
        secret.sfm_positions.clear();
        secret.sfm_colors.clear();
        let plain_data = make_combined_dataset(&cover, &[], &[None]).expect("plain data");
        let joint_data =
            make_combined_dataset(&cover, &[secret], &[None, None]).expect("joint data");
        assert_eq!(plain_data.views.len(), joint_data.views.len());

        let plain_cfg = tiny_config(Vec::new(), 40);
        let mut reduced_cfg = tiny_config(vec!["S3cretKey0Secret".to_string()], 40);
        reduced_cfg.beta_secret = vec![0.0];
        reduced_cfg.beta_incorrect = 0.0;

        let (plain, _, plain_log) = train(&plain_cfg, &plain_data).expect("plain run");
        let (reduced, _, reduced_log) = train(&reduced_cfg, &joint_data).expect("reduced run");

        assert_eq!(plain, reduced);
        assert_eq!(plain_log.rows.len(), reduced_log.rows.len());
        for (a, b) in plain_log.rows.iter().zip(&reduced_log.rows) {
            assert_eq!(a.loss.cover.to_bits(), b.loss.cover.to_bits());
            assert_eq!(a.psnr_cover.to_bits(), b.psnr_cover.to_bits());
        }
    }

    #[test]
    fn loss_decreases_on_single_gaussian_fit() {
        let (scene, _) = synth_scene::<S>(SynthKind::Blobs, 4, 16, 16, 3).expect("scene");
        let dataset = make_combined_dataset(&scene, &[], &[None]).expect("data");
        let mut config = tiny_config(Vec::new(), 200);
        config.metrics_interval = 200;
        config.densify_interval = 50;
        let mut state = init_state(&config, &dataset).expect("init");
        let betas = config.secret_betas();
        let first = train_step(&mut state, &config, &dataset, &betas, 0).expect("step");
        for _ in 1..200 {
            let view = state.next_view(dataset.views.len());
            train_step(&mut state, &config, &dataset, &betas, view).expect("step");
        }
        let last = train_step(&mut state, &config, &dataset, &betas, 0).expect("step");
        assert!(
            last.total < first.total,
            "loss should decrease: first {} last {}",
            first.total,
            last.total
        );
    }

    #[test]
    fn densify_respects_budget_and_stays_finite() {
        let dataset = tiny_dataset(false);
        let mut config = tiny_config(Vec::new(), 1);
        config.max_gaussians = 40;
        config.densify_grad_threshold = 1e-12;
        let mut state = init_state(&config, &dataset).expect("init");
        // Force every gaussian over the threshold.
        for i in 0..state.cover.len() {
            state.densify_norm[i] = 1.0;
            state.densify_obs[i] = 1;
        }
        densify(&mut state, &config).expect("densify");
        assert!(state.cover.len() <= 40);
        assert!(state.cover.validate().is_ok());
        assert_eq!(state.densify_norm.len(), state.cover.len());
        assert!(state.densify_obs.iter().all(|&o| o == 0));
    }

    #[test]
    fn densify_splits_large_and_clones_small() {
        let dataset = tiny_dataset(false);
        let mut config = tiny_config(Vec::new(), 1);
        config.max_gaussians = 400;
        config.prune_opacity_threshold = 0.0;
        let mut state = init_state(&config, &dataset).expect("init");
        let n = state.cover.len();
        // Gaussian 0 tiny (clone), gaussian 1 huge (split), rest idle.
        let tiny = real::<S>((state.extent * 0.001).ln());
        let huge = real::<S>((state.extent * 0.5).ln());
        state.cover.log_scales[0] = [tiny, tiny, tiny];
        state.cover.log_scales[1] = [huge, huge, huge];
        state.densify_norm[0] = 1.0;
        state.densify_obs[0] = 1;
        state.densify_norm[1] = 2.0;
        state.densify_obs[1] = 1;
        let split_parent_scales = state.cover.log_scales[1];
        densify(&mut state, &config).expect("densify");
        // Clone adds one copy, split removes the parent and adds two.
        assert_eq!(state.cover.len(), n + 2);
        let shrunk = split_parent_scales[0] - real::<S>(1.6f64.ln());
        let shrunk_count = state
            .cover
            .log_scales
            .iter()
            .filter(|s| (s[0] - shrunk).abs() < 1e-12)
            .count();
        assert_eq!(shrunk_count, 2);
        let parents_left = state
            .cover
            .log_scales
            .iter()
            .filter(|s| (s[0] - split_parent_scales[0]).abs() < 1e-12)
            .count();
        assert_eq!(parents_left, 0);
    }

    #[test]
    fn densify_prunes_transparent_gaussians() {
        let dataset = tiny_dataset(false);
        let config = tiny_config(Vec::new(), 1);
        let mut state = init_state(&config, &dataset).expect("init");
        let n = state.cover.len();
        state.cover.opacity_logits[2] = real::<S>(-12.0);
        densify(&mut state, &config).expect("densify");
        assert_eq!(state.cover.len(), n - 1);
    }

    #[test]
    fn deterministic_across_runs() {
        let dataset = tiny_dataset(true);
        let config = tiny_config(vec!["S3cretKey0Secret".to_string()], 25);
        let (cover_a, _, log_a) = train(&config, &dataset).expect("run a");
        let (cover_b, _, log_b) = train(&config, &dataset).expect("run b");
        assert_eq!(cover_a, cover_b);
        assert_eq!(log_a.to_csv(), log_b.to_csv());
    }

    #[test]
    fn metrics_csv_shape_matches_columns() {
        let dataset = tiny_dataset(true);
        let mut config = tiny_config(vec!["S3cretKey0Secret".to_string()], 13);
        config.metrics_interval = 5;
        let (_, _, log) = train(&config, &dataset).expect("train");
        // Rows at 5, 10, and the final iteration 13.
        assert_eq!(
            log.rows.iter().map(|r| r.iteration).collect::<Vec<_>>(),
            vec![5, 10, 13]
        );
        let csv = log.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().expect("header");
        assert_eq!(
            header,
            "iteration,loss_total,loss_cover,loss_secret_0,loss_incorrect,\
             psnr_cover,psnr_secret_0,psnr_wrongkey_vs_secret"
        );
        let columns = header.split(',').count();
        for line in lines {
            assert_eq!(line.split(',').count(), columns);
        }
    }

    #[test]
    fn init_uses_sfm_geometry() {
        let positions: Vec<[S; 3]> = vec![
            [0.0, 0.0, 0.0],
            [0.2, 0.0, 0.0],
            [0.0, 0.2, 0.0],
            [5.0, 5.0, 5.0],
        ];
        let colors: Vec<[S; 3]> = vec![[0.5; 3], [1.0, 0.5, 0.5], [0.5; 3], [0.5; 3]];
        let set = init_cover_from_sfm(&positions, &colors, 2, 100).expect("init");
        assert_eq!(set.len(), 4);
        // Mid-gray maps to zero DC, pure red to a positive red coefficient.
        assert!(set.sh[0].abs() < 1e-12);
        let basis = set.basis_len();
        assert!(set.sh[basis * 3] > 0.0);
        // The isolated point gets a larger scale than the clustered ones.
        assert!(set.log_scales[3][0] > set.log_scales[0][0]);
        // Opacity activates to 0.1.
        let act = activate(&set).expect("activate");
        assert!((act.opacities[0].as_f64() - 0.1).abs() < 1e-9);
    }

    #[test]
    fn init_caps_points_at_budget() {
        let positions: Vec<[S; 3]> = (0..10)
            .map(|i| [i as f64 * 0.1, 0.0, 0.0])
            .collect();
        let colors = vec![[0.5; 3]; 10];
        let set = init_cover_from_sfm(&positions, &colors, 1, 4).expect("init");
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn joint_training_improves_secret_psnr() {
        let dataset = tiny_dataset(true);
        let mut config = tiny_config(vec!["S3cretKey0Secret".to_string()], 60);
        config.metrics_interval = 30;
        let (_, decoder, log) = train(&config, &dataset).expect("train");
        assert!(decoder.is_some());
        let first = &log.rows.first().expect("first row");
        let last = &log.rows.last().expect("last row");
        assert!(
            last.psnr_secrets[0] > first.psnr_secrets[0],
            "secret psnr should improve: {} -> {}",
            first.psnr_secrets[0],
            last.psnr_secrets[0]
        );
    }
}
