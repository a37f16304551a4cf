//! The keyed decoder: turns cover Gaussians into a hidden set when fed the
//! right passphrase.
//!
//! Per Gaussian, its normalized attributes are concatenated with the key
//! embedding, pushed through a shared two-layer trunk, and five per-group
//! branches (opacity, rotation, scale, position, sh) emit bounded residuals
//! that are added to the raw parameters. A boolean mask gates each branch;
//! a gated-off group is copied bit for bit, which is what makes the "wrong
//! key changes nothing it should not" guarantees testable.
//!
//! Normalization statistics are recomputed per call and treated as
//! constants in the backward pass; differentiating through a per-set
//! min/max is non-smooth at the extremes and destabilizes training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::DecodeError;
use crate::gaussians::{sh_basis_len, GaussianGrads, GaussianSet};
use crate::scalar::{real, Real};

/// Unit-norm conditioning vector derived from a passphrase.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyEmbedding<T: Real> {
    pub vector: Vec<T>,
    pub source_key: String,
}

/// Gates which attribute groups the decoder may rewrite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FeatureMask {
    pub opacity: bool,
    pub rotation: bool,
    pub scale: bool,
    pub position: bool,
    pub sh: bool,
}

impl Default for FeatureMask {
    fn default() -> Self {
        FeatureMask::ALL
    }
}

impl FeatureMask {
    pub const ALL: FeatureMask = FeatureMask {
        opacity: true,
        rotation: true,
        scale: true,
        position: true,
        sh: true,
    };
    pub const NONE: FeatureMask = FeatureMask {
        opacity: false,
        rotation: false,
        scale: false,
        position: false,
        sh: false,
    };

    pub fn flags(self) -> [bool; 5] {
        [
            self.opacity,
            self.rotation,
            self.scale,
            self.position,
            self.sh,
        ]
    }
}

/// Structural hyperparameters of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub key_dim: usize,
    pub sh_degree: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden: 128,
            key_dim: 64,
            sh_degree: 3,
        }
    }
}

/// Number of scalar attribute channels fed to the decoder.
pub fn feature_width(sh_degree: usize) -> usize {
    11 + 3 * sh_basis_len(sh_degree)
}

fn branch_widths(sh_degree: usize) -> [usize; 5] {
    [1, 4, 3, 3, 3 * sh_basis_len(sh_degree)]
}

/// Dense affine layer, weights row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Real> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> Linear<T> {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            w: vec![T::zero(); in_dim * out_dim],
            b: vec![T::zero(); out_dim],
        }
    }

    fn fan_in_uniform(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut layer = Linear::zeros(in_dim, out_dim);
        for w in layer.w.iter_mut() {
            *w = real(rng.gen_range(-bound..bound));
        }
        layer
    }

    fn forward(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.w[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.b[r];
            for (wk, xk) in row.iter().zip(x.iter()) {
                acc += *wk * *xk;
            }
            *o = acc;
        }
    }

    /// Accumulates parameter gradients and writes the input gradient.
    fn backward(&self, x: &[T], gy: &[T], gw: &mut Linear<T>, gx: &mut [T]) {
        for v in gx.iter_mut() {
            *v = T::zero();
        }
        for (r, g) in gy.iter().enumerate() {
            gw.b[r] += *g;
            let row = &self.w[r * self.in_dim..(r + 1) * self.in_dim];
            let grow = &mut gw.w[r * self.in_dim..(r + 1) * self.in_dim];
            for k in 0..self.in_dim {
                grow[k] += *g * x[k];
                gx[k] += row[k] * *g;
            }
        }
    }
}

/// One attribute branch: hidden layer, output layer, residual scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T: Real> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
    pub scale: T,
}

/// Full decoder parameter set. The same struct doubles as the gradient
/// container (see [`DecoderParams::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T: Real> {
    pub config: DecoderConfig,
    pub mask: FeatureMask,
    pub trunk1: Linear<T>,
    pub trunk2: Linear<T>,
    pub branches: [Branch<T>; 5],
}

pub type DecoderGrads<T> = DecoderParams<T>;

impl<T: Real> DecoderParams<T> {
    /// Fresh decoder: fan-in uniform trunk and branch hidden layers, zero
    /// branch output layers so decoding starts as the identity map.
    pub fn new(config: DecoderConfig, mask: FeatureMask, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_in = feature_width(config.sh_degree) + config.key_dim;
        let h = config.hidden;
        let widths = branch_widths(config.sh_degree);
        let branches = widths.map(|width| Branch {
            l1: Linear::fan_in_uniform(h, h, &mut rng),
            l2: Linear::zeros(h, width),
            scale: real(0.1),
        });
        DecoderParams {
            config,
            mask,
            trunk1: Linear::fan_in_uniform(d_in, h, &mut rng),
            trunk2: Linear::fan_in_uniform(h, h, &mut rng),
            branches,
        }
    }

    /// Same shapes, all tensors zero. Used for gradients and moments.
    pub fn zeros_like(&self) -> DecoderParams<T> {
        let zero_linear = |l: &Linear<T>| Linear {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            w: vec![T::zero(); l.w.len()],
            b: vec![T::zero(); l.b.len()],
        };
        DecoderParams {
            config: self.config,
            mask: self.mask,
            trunk1: zero_linear(&self.trunk1),
            trunk2: zero_linear(&self.trunk2),
            branches: [0, 1, 2, 3, 4].map(|k| Branch {
                l1: zero_linear(&self.branches[k].l1),
                l2: zero_linear(&self.branches[k].l2),
                scale: T::zero(),
            }),
        }
    }

    /// Flat views over every trainable tensor, in a fixed order shared with
    /// the checkpoint format and the optimizer.
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(4 + 5 * 5);
        out.push(&mut self.trunk1.w);
        out.push(&mut self.trunk1.b);
        out.push(&mut self.trunk2.w);
        out.push(&mut self.trunk2.b);
        for branch in self.branches.iter_mut() {
            out.push(&mut branch.l1.w);
            out.push(&mut branch.l1.b);
            out.push(&mut branch.l2.w);
            out.push(&mut branch.l2.b);
            out.push(std::slice::from_mut(&mut branch.scale));
        }
        out
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn scatter_hash(hash: u64, accum: &mut [f64]) {
    let k = accum.len() as u64;
    let mut state = hash;
    for _ in 0..8 {
        let draw = splitmix64(&mut state);
        let idx = (draw % k) as usize;
        let sign = if (draw >> 32) & 1 == 0 { 1.0 } else { -1.0 };
        accum[idx] += sign;
    }
}

/// Required key shape: 16 alphanumeric ASCII characters.
pub fn validate_key(key: &str) -> Result<(), DecodeError> {
    if key.is_empty() {
        return Err(DecodeError::EmptyKey);
    }
    if key.len() != 16 || !key.bytes().all(|b| b.is_ascii_alphanumeric()) {
        return Err(DecodeError::InvalidKey {
            got: key.to_string(),
        });
    }
    Ok(())
}

/// Hashed n-gram embedding: every (position, char) pair and every adjacent
/// bigram scatters signed increments into the vector, which is then
/// L2-normalized. Deterministic across runs and platforms.
pub fn embed_key<T: Real>(key: &str, key_dim: usize) -> Result<KeyEmbedding<T>, DecodeError> {
    validate_key(key)?;
    embed_key_relaxed(key, key_dim)
}

/// Same embedding without the strict 16-alphanumeric shape check; the key
/// must only be non-empty. Exposed for callers that manage their own key
/// policy.
pub fn embed_key_relaxed<T: Real>(
    key: &str,
    key_dim: usize,
) -> Result<KeyEmbedding<T>, DecodeError> {
    if key.is_empty() {
        return Err(DecodeError::EmptyKey);
    }
    assert!(key_dim > 0, "key dimension must be positive");
    let mut accum = vec![0.0f64; key_dim];
    let bytes = key.as_bytes();
    for (pos, byte) in bytes.iter().enumerate() {
        scatter_hash(fnv1a64(&[pos as u8, *byte]), &mut accum);
    }
    // Bigrams are positional; otherwise a repeated-character key collapses
    // to one coherent component and single-character edits barely move it.
    for (pos, pair) in bytes.windows(2).enumerate() {
        scatter_hash(fnv1a64(&[pos as u8, pair[0], pair[1], 0xa5]), &mut accum);
    }
    let norm = accum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Cancellation across all 8·(2n-1) increments; fall back to a
        // deterministic unit vector.
        accum[0] = 1.0;
    }
    let norm = accum.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(KeyEmbedding {
        vector: accum.iter().map(|v| T::from_f64(v / norm)).collect(),
        source_key: key.to_string(),
    })
}

/// Per-channel min/max captured by [`normalize_features`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormRecord<T: Real> {
    pub mins: Vec<T>,
    pub maxs: Vec<T>,
}

fn channel_value<T: Real>(set: &GaussianSet<T>, i: usize, ch: usize) -> T {
    match ch {
        0 => set.opacity_logits[i],
        1..=4 => set.rotations[i][ch - 1],
        5..=7 => set.log_scales[i][ch - 5],
        8..=10 => set.positions[i][ch - 8],
        _ => set.sh_of(i)[ch - 11],
    }
}

/// Min-max normalizes every attribute channel over the set, in the fixed
/// order (opacity, rotation, scale, position, sh). Constant channels map
/// to 0.5. Returns the row-major N x F matrix and the statistics record.
pub fn normalize_features<T: Real>(set: &GaussianSet<T>) -> (Vec<T>, NormRecord<T>) {
    let f = feature_width(set.sh_degree);
    let n = set.len();
    let mut mins = vec![T::infinity(); f];
    let mut maxs = vec![T::neg_infinity(); f];
    for i in 0..n {
        for ch in 0..f {
            let v = channel_value(set, i, ch);
            if v < mins[ch] {
                mins[ch] = v;
            }
            if v > maxs[ch] {
                maxs[ch] = v;
            }
        }
    }
    let record = NormRecord { mins, maxs };
    let matrix = apply_record(set, &record);
    (matrix, record)
}

/// Normalizes with previously captured statistics. Values outside the
/// recorded range extrapolate linearly; constant channels stay 0.5.
pub fn apply_record<T: Real>(set: &GaussianSet<T>, record: &NormRecord<T>) -> Vec<T> {
    let f = feature_width(set.sh_degree);
    let n = set.len();
    let half = real::<T>(0.5);
    let mut matrix = vec![T::zero(); n * f];
    for i in 0..n {
        for ch in 0..f {
            let range = record.maxs[ch] - record.mins[ch];
            matrix[i * f + ch] = if range > T::zero() {
                (channel_value(set, i, ch) - record.mins[ch]) / range
            } else {
                half
            };
        }
    }
    matrix
}

fn check_shapes<T: Real>(
    set: &GaussianSet<T>,
    key: &KeyEmbedding<T>,
    params: &DecoderParams<T>,
) -> Result<(), DecodeError> {
    if params.config.sh_degree != set.sh_degree {
        return Err(DecodeError::ShWidthMismatch {
            expected: sh_basis_len(params.config.sh_degree) * 3,
            got: set.basis_len() * 3,
        });
    }
    if key.vector.len() != params.config.key_dim {
        return Err(DecodeError::KeyDimMismatch {
            expected: params.config.key_dim,
            got: key.vector.len(),
        });
    }
    set.validate()?;
    Ok(())
}

struct RowBuffers<T: Real> {
    features: Vec<T>,
    t1: Vec<T>,
    hidden: Vec<T>,
    branch_hidden: Vec<T>,
    branch_out: Vec<T>,
}

impl<T: Real> RowBuffers<T> {
    fn new(d_in: usize, h: usize, max_width: usize) -> Self {
        RowBuffers {
            features: vec![T::zero(); d_in],
            t1: vec![T::zero(); h],
            hidden: vec![T::zero(); h],
            branch_hidden: vec![T::zero(); h],
            branch_out: vec![T::zero(); max_width],
        }
    }
}

fn relu_inplace<T: Real>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn trunk_forward<T: Real>(
    params: &DecoderParams<T>,
    matrix: &[T],
    key: &[T],
    i: usize,
    f: usize,
    buf: &mut RowBuffers<T>,
) {
    buf.features[..f].copy_from_slice(&matrix[i * f..(i + 1) * f]);
    buf.features[f..].copy_from_slice(key);
    params.trunk1.forward(&buf.features, &mut buf.t1);
    relu_inplace(&mut buf.t1);
    params.trunk2.forward(&buf.t1, &mut buf.hidden);
    relu_inplace(&mut buf.hidden);
}

fn branch_residual<T: Real>(
    branch: &Branch<T>,
    hidden: &[T],
    buf_hidden: &mut [T],
    out: &mut [T],
) {
    branch.l1.forward(hidden, buf_hidden);
    relu_inplace(buf_hidden);
    branch.l2.forward(buf_hidden, out);
    for v in out.iter_mut() {
        *v = branch.scale * v.tanh();
    }
}

/// Runs the decoder with statistics recomputed from `cover`.
pub fn decode<T: Real>(
    cover: &GaussianSet<T>,
    key: &KeyEmbedding<T>,
    mask: FeatureMask,
    params: &DecoderParams<T>,
) -> Result<GaussianSet<T>, DecodeError> {
    let (matrix, _) = normalize_features(cover);
    decode_normalized(cover, key, mask, params, &matrix)
}

/// Runs the decoder with caller-supplied statistics. Pruning-robustness
/// probes use this to keep the conditioning stable while rows are removed.
pub fn decode_with_record<T: Real>(
    cover: &GaussianSet<T>,
    key: &KeyEmbedding<T>,
    mask: FeatureMask,
    params: &DecoderParams<T>,
    record: &NormRecord<T>,
) -> Result<GaussianSet<T>, DecodeError> {
    let f = feature_width(cover.sh_degree);
    if record.mins.len() != f || record.maxs.len() != f {
        return Err(DecodeError::RecordMismatch {
            expected: f,
            got: record.mins.len(),
        });
    }
    let matrix = apply_record(cover, record);
    decode_normalized(cover, key, mask, params, &matrix)
}

fn decode_normalized<T: Real>(
    cover: &GaussianSet<T>,
    key: &KeyEmbedding<T>,
    mask: FeatureMask,
    params: &DecoderParams<T>,
    matrix: &[T],
) -> Result<GaussianSet<T>, DecodeError> {
    check_shapes(cover, key, params)?;
    // Disabled groups are copied wholesale, which preserves them bit for
    // bit; enabled groups are overwritten below.
    let mut out = cover.clone();
    let flags = mask.flags();
    if flags.iter().all(|f| !f) {
        return Ok(out);
    }

    let f = feature_width(cover.sh_degree);
    let h = params.config.hidden;
    let widths = branch_widths(cover.sh_degree);
    let d_in = f + params.config.key_dim;
    let mut buf = RowBuffers::new(d_in, h, widths[4]);

    for i in 0..cover.len() {
        trunk_forward(params, matrix, &key.vector, i, f, &mut buf);
        for (g, enabled) in flags.iter().enumerate() {
            if !*enabled {
                continue;
            }
            let width = widths[g];
            let residual = &mut buf.branch_out[..width];
            branch_residual(
                &params.branches[g],
                &buf.hidden,
                &mut buf.branch_hidden,
                residual,
            );
            match g {
                0 => out.opacity_logits[i] += residual[0],
                1 => {
                    for ax in 0..4 {
                        out.rotations[i][ax] += residual[ax];
                    }
                }
                2 => {
                    for ax in 0..3 {
                        out.log_scales[i][ax] += residual[ax];
                    }
                }
                3 => {
                    for ax in 0..3 {
                        out.positions[i][ax] += residual[ax];
                    }
                }
                _ => {
                    let base = i * widths[4];
                    for (k, r) in residual.iter().enumerate() {
                        out.sh[base + k] += *r;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a loss on the decoded set, with respect to the decoder
/// weights and to the cover parameters.
///
/// The cover receives the identity path for every group (enabled groups
/// add residuals, disabled ones are copies) plus the conditioning path
/// through the feature matrix, scaled by the recorded channel ranges.
/// `grad_secret.vspace_norm` is carried over index-aligned, since decoded
/// Gaussian i originates from cover Gaussian i.
pub fn decoder_backward<T: Real>(
    cover: &GaussianSet<T>,
    key: &KeyEmbedding<T>,
    mask: FeatureMask,
    params: &DecoderParams<T>,
    grad_secret: &GaussianGrads<T>,
) -> Result<(DecoderGrads<T>, GaussianGrads<T>), DecodeError> {
    check_shapes(cover, key, params)?;
    let n = cover.len();
    if grad_secret.positions.len() != n {
        return Err(DecodeError::Gaussian(
            crate::error::GaussianError::ShapeMismatch {
                field: "grad_secret",
                got: grad_secret.positions.len(),
                expected: n,
            },
        ));
    }

    let (matrix, record) = normalize_features(cover);
    let f = feature_width(cover.sh_degree);
    let h = params.config.hidden;
    let widths = branch_widths(cover.sh_degree);
    let d_in = f + params.config.key_dim;
    let flags = mask.flags();

    let mut gparams = params.zeros_like();
    let mut gcover = GaussianGrads::zeros(n, cover.sh_degree);

    // Identity path: every group passes grad_secret through.
    gcover.positions.clone_from(&grad_secret.positions);
    gcover.opacity_logits.clone_from(&grad_secret.opacity_logits);
    gcover.rotations.clone_from(&grad_secret.rotations);
    gcover.log_scales.clone_from(&grad_secret.log_scales);
    gcover.sh.clone_from(&grad_secret.sh);
    gcover.vspace_norm.clone_from(&grad_secret.vspace_norm);

    if flags.iter().all(|flag| !flag) {
        return Ok((gparams, gcover));
    }

    let mut buf = RowBuffers::new(d_in, h, widths[4]);
    let mut ghidden = vec![T::zero(); h];
    let mut gbranch_hidden = vec![T::zero(); h];
    let mut gz = vec![T::zero(); widths[4]];
    let mut gt1 = vec![T::zero(); h];
    let mut gfeatures = vec![T::zero(); d_in];

    for i in 0..n {
        trunk_forward(params, &matrix, &key.vector, i, f, &mut buf);
        for v in ghidden.iter_mut() {
            *v = T::zero();
        }
        let mut any_active = false;

        for (g, enabled) in flags.iter().enumerate() {
            if !*enabled {
                continue;
            }
            let width = widths[g];
            let branch = &params.branches[g];
            // Recompute branch intermediates for this row.
            branch.l1.forward(&buf.hidden, &mut buf.branch_hidden);
            relu_inplace(&mut buf.branch_hidden);
            branch
                .l2
                .forward(&buf.branch_hidden, &mut buf.branch_out[..width]);

            let gout: &[T] = match g {
                0 => std::slice::from_ref(&grad_secret.opacity_logits[i]),
                1 => &grad_secret.rotations[i],
                2 => &grad_secret.log_scales[i],
                3 => &grad_secret.positions[i],
                _ => &grad_secret.sh[i * widths[4]..(i + 1) * widths[4]],
            };
            let mut live = false;
            for k in 0..width {
                let t = buf.branch_out[k].tanh();
                gparams.branches[g].scale += gout[k] * t;
                gz[k] = gout[k] * branch.scale * (T::one() - t * t);
                if gz[k] != T::zero() {
                    live = true;
                }
            }
            if !live && gout.iter().all(|v| *v == T::zero()) {
                continue;
            }
            any_active = true;
            branch.l2.backward(
                &buf.branch_hidden,
                &gz[..width],
                &mut gparams.branches[g].l2,
                &mut gbranch_hidden,
            );
            for k in 0..h {
                if buf.branch_hidden[k] == T::zero() {
                    gbranch_hidden[k] = T::zero();
                }
            }
            let mut gh_local = vec![T::zero(); h];
            branch.l1.backward(
                &buf.hidden,
                &gbranch_hidden,
                &mut gparams.branches[g].l1,
                &mut gh_local,
            );
            for k in 0..h {
                ghidden[k] += gh_local[k];
            }
        }

        if !any_active {
            continue;
        }
        for k in 0..h {
            if buf.hidden[k] == T::zero() {
                ghidden[k] = T::zero();
            }
        }
        params
            .trunk2
            .backward(&buf.t1, &ghidden, &mut gparams.trunk2, &mut gt1);
        for k in 0..h {
            if buf.t1[k] == T::zero() {
                gt1[k] = T::zero();
            }
        }
        params
            .trunk1
            .backward(&buf.features, &gt1, &mut gparams.trunk1, &mut gfeatures);

        // Conditioning path back to the raw channels; statistics are
        // constants, so the factor is the reciprocal recorded range.
        for ch in 0..f {
            let range = record.maxs[ch] - record.mins[ch];
            if range <= T::zero() {
                continue;
            }
            let g = gfeatures[ch] / range;
            match ch {
                0 => gcover.opacity_logits[i] += g,
                1..=4 => gcover.rotations[i][ch - 1] += g,
                5..=7 => gcover.log_scales[i][ch - 5] += g,
                8..=10 => gcover.positions[i][ch - 8] += g,
                _ => gcover.sh[i * widths[4] + (ch - 11)] += g,
            }
        }
    }
    Ok((gparams, gcover))
}

const DECODER_MAGIC: &[u8; 4] = b"GSDC";
const DECODER_VERSION: u32 = 1;

/// Serializes a decoder to its checkpoint format: magic, version, config,
/// mask, then every tensor as (rows, cols, float32 data), little-endian.
pub fn write_decoder<T: Real>(params: &DecoderParams<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DECODER_MAGIC);
    out.extend_from_slice(&DECODER_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.config.hidden as u32).to_le_bytes());
    out.extend_from_slice(&(params.config.key_dim as u32).to_le_bytes());
    out.extend_from_slice(&(params.config.sh_degree as u32).to_le_bytes());
    for flag in params.mask.flags() {
        out.push(flag as u8);
    }
    fn push_tensor<T: Real>(out: &mut Vec<u8>, rows: usize, cols: usize, data: &[T]) {
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in data {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    fn push_linear<T: Real>(out: &mut Vec<u8>, l: &Linear<T>) {
        push_tensor(out, l.out_dim, l.in_dim, &l.w);
        push_tensor(out, l.out_dim, 1, &l.b);
    }
    push_linear(&mut out, &params.trunk1);
    push_linear(&mut out, &params.trunk2);
    for branch in &params.branches {
        push_linear(&mut out, &branch.l1);
        push_linear(&mut out, &branch.l2);
        push_tensor(&mut out, 1, 1, std::slice::from_ref(&branch.scale));
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.pos + n > self.bytes.len() {
            return Err(DecodeError::BadCheckpoint {
                message: format!("unexpected end of file at byte {}", self.pos),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor<T: Real>(&mut self, rows: usize, cols: usize, name: &str) -> Result<Vec<T>, DecodeError> {
        let r = self.u32()? as usize;
        let c = self.u32()? as usize;
        if r != rows || c != cols {
            return Err(DecodeError::BadCheckpoint {
                message: format!("{name}: shape {r}x{c}, expected {rows}x{cols}"),
            });
        }
        let raw = self.take(rows * cols * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| T::from_f64(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect())
    }
}

/// Parses a decoder checkpoint.
pub fn read_decoder<T: Real>(bytes: &[u8]) -> Result<DecoderParams<T>, DecodeError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != DECODER_MAGIC {
        return Err(DecodeError::BadCheckpoint {
            message: "bad magic".to_string(),
        });
    }
    let version = cur.u32()?;
    if version != DECODER_VERSION {
        return Err(DecodeError::BadCheckpoint {
            message: format!("unsupported version {version}"),
        });
    }
    let hidden = cur.u32()? as usize;
    let key_dim = cur.u32()? as usize;
    let sh_degree = cur.u32()? as usize;
    if hidden == 0 || key_dim == 0 || sh_degree > 3 {
        return Err(DecodeError::BadCheckpoint {
            message: format!("implausible config H={hidden} K={key_dim} degree={sh_degree}"),
        });
    }
    let raw_flags = cur.take(5)?;
    let mut flags = [false; 5];
    for (k, b) in raw_flags.iter().enumerate() {
        flags[k] = match b {
            0 => false,
            1 => true,
            other => {
                return Err(DecodeError::BadCheckpoint {
                    message: format!("mask byte {k} is {other}"),
                })
            }
        };
    }
    let config = DecoderConfig {
        hidden,
        key_dim,
        sh_degree,
    };
    let mask = FeatureMask {
        opacity: flags[0],
        rotation: flags[1],
        scale: flags[2],
        position: flags[3],
        sh: flags[4],
    };
    let d_in = feature_width(sh_degree) + key_dim;
    let widths = branch_widths(sh_degree);

    let read_linear = |cur: &mut Cursor, in_dim: usize, out_dim: usize, name: &str| {
        Ok::<Linear<T>, DecodeError>(Linear {
            in_dim,
            out_dim,
            w: cur.tensor(out_dim, in_dim, name)?,
            b: cur.tensor(out_dim, 1, name)?,
        })
    };
    let trunk1 = read_linear(&mut cur, d_in, hidden, "trunk1")?;
    let trunk2 = read_linear(&mut cur, hidden, hidden, "trunk2")?;
    let mut branches = Vec::with_capacity(5);
    for (g, width) in widths.into_iter().enumerate() {
        let l1 = read_linear(&mut cur, hidden, hidden, "branch l1")?;
        let l2 = read_linear(&mut cur, hidden, width, "branch l2")?;
        let scale = cur.tensor::<T>(1, 1, "branch scale")?[0];
        let _ = g;
        branches.push(Branch { l1, l2, scale });
    }
    if cur.pos != bytes.len() {
        return Err(DecodeError::BadCheckpoint {
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    let branches: [Branch<T>; 5] = match branches.try_into() {
        Ok(b) => b,
        Err(_) => unreachable!("exactly five branches were read"),
    };
    Ok(DecoderParams {
        config,
        mask,
        trunk1,
        trunk2,
        branches,
    })
}
