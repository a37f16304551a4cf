//! Debiased entropic optimal transport between attribute histograms.
//!
//! Bin i sits at position i/(B-1) and the ground cost is squared distance.
//! The solver runs in the log domain with the regularizer annealed from 1
//! down to its target, so the small-epsilon regime stays stable. Each solve
//! brackets the cost between its dual value and the primal value of the
//! implied plan rounded onto the marginals, and stops once the bracket is
//! tight, so a slow-mixing pair degrades to a certified interval instead of
//! a silently wrong number. The debiased divergence of a histogram against
//! itself cancels bitwise to 0, and the two arguments are solved in a
//! canonical order, making the divergence symmetric to the bit.

use crate::error::MetricError;
use crate::gaussians::GaussianSet;
use crate::histogram::{feature_histograms, union_bounds, FeatureGroup, GROUPS};
use crate::scalar::Real;

pub const DEFAULT_EPSILON: f64 = 1e-2;
pub const DEFAULT_BINS: usize = 64;

/// Marginal tolerance at the target regularizer.
const MARGINAL_TOL: f64 = 1e-9;
/// Looser tolerance for intermediate annealing stages.
const STAGE_TOL: f64 = 1e-6;
/// Iteration cap per intermediate stage; warm starts keep these short.
const STAGE_CAP: usize = 300;
/// Iteration budget per transport solve.
const MAX_ITERS: usize = 10_000;
/// Duality-gap width at which the bracket midpoint is accepted.
const VALUE_GAP_TOL: f64 = 1e-5;
/// Final-stage iterations between bracket evaluations.
const GAP_CHECK_EVERY: usize = 25;

fn validate(h: &[f64]) -> Result<(), MetricError> {
    if h.iter().any(|m| *m < 0.0) {
        return Err(MetricError::NegativeMass);
    }
    let sum: f64 = h.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(MetricError::NotNormalized { sum });
    }
    Ok(())
}

/// Log-sum-exp of `weights[k] - costs[k]` over one contiguous row.
#[inline]
fn lse_row(weights: &[f64], costs: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for (w, c) in weights.iter().zip(costs) {
        let t = w - c;
        if t > m {
            m = t;
        }
    }
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut s = 0.0f64;
    for (w, c) in weights.iter().zip(costs) {
        s += (w - c - m).exp();
    }
    m + s.ln()
}

/// State shared by the bound evaluations: marginals, their logs, potentials,
/// and the cost matrix divided by the target regularizer.
struct Bracket<'a> {
    p: &'a [f64],
    q: &'a [f64],
    logp: &'a [f64],
    logq: &'a [f64],
    eps: f64,
    ce: &'a [f64],
}

impl Bracket<'_> {
    /// Unconstrained dual objective of (f, g), with the mass slack folded
    /// in: a lower bound on the entropic cost for any potentials.
    fn dual(&self, f: &[f64], g: &[f64]) -> f64 {
        let b = self.p.len();
        let mut dual = 0.0f64;
        for i in 0..b {
            if self.p[i] > 0.0 {
                dual += self.p[i] * f[i];
            }
        }
        let mut wj = vec![0.0f64; b];
        for j in 0..b {
            if self.q[j] > 0.0 {
                dual += self.q[j] * g[j];
            }
            wj[j] = self.logq[j] + g[j] / self.eps;
        }
        let mut mass = 0.0f64;
        for i in 0..b {
            if self.p[i] <= 0.0 {
                continue;
            }
            let lse = lse_row(&wj, &self.ce[i * b..(i + 1) * b]);
            if lse > f64::NEG_INFINITY {
                mass += (self.logp[i] + f[i] / self.eps + lse).exp();
            }
        }
        dual - self.eps * (mass - 1.0)
    }

    /// Primal objective of the plan implied by (f, g) after rounding it
    /// onto the exact marginals: scale overfull rows, then overfull
    /// columns, then spread the remaining deficit as a rank-one fill. The
    /// result is feasible, so its cost upper-bounds the entropic optimum.
    fn rounded_primal(&self, f: &[f64], g: &[f64]) -> f64 {
        let b = self.p.len();
        let mut plan = vec![0.0f64; b * b];
        for i in 0..b {
            if self.p[i] <= 0.0 {
                continue;
            }
            let base = self.logp[i] + f[i] / self.eps;
            for j in 0..b {
                if self.q[j] <= 0.0 {
                    continue;
                }
                plan[i * b + j] =
                    (base + self.logq[j] + g[j] / self.eps - self.ce[i * b + j]).exp();
            }
        }
        for i in 0..b {
            let row: f64 = plan[i * b..(i + 1) * b].iter().sum();
            if row > self.p[i] {
                let r = self.p[i] / row;
                for v in &mut plan[i * b..(i + 1) * b] {
                    *v *= r;
                }
            }
        }
        let mut col = vec![0.0f64; b];
        for i in 0..b {
            for j in 0..b {
                col[j] += plan[i * b + j];
            }
        }
        for j in 0..b {
            if col[j] > self.q[j] {
                let r = self.q[j] / col[j];
                for i in 0..b {
                    plan[i * b + j] *= r;
                }
                col[j] = self.q[j];
            }
        }
        let mut err_r = vec![0.0f64; b];
        let mut err_c = vec![0.0f64; b];
        let mut deficit = 0.0f64;
        for i in 0..b {
            let row: f64 = plan[i * b..(i + 1) * b].iter().sum();
            err_r[i] = (self.p[i] - row).max(0.0);
            deficit += err_r[i];
        }
        for j in 0..b {
            err_c[j] = (self.q[j] - col[j]).max(0.0);
        }
        if deficit > 0.0 {
            for i in 0..b {
                if err_r[i] <= 0.0 {
                    continue;
                }
                for j in 0..b {
                    plan[i * b + j] += err_r[i] * err_c[j] / deficit;
                }
            }
        }
        let mut value = 0.0f64;
        for i in 0..b {
            for j in 0..b {
                let m = plan[i * b + j];
                if m <= 0.0 {
                    continue;
                }
                // Mass is positive only where both marginals are, so the
                // reference term stays finite.
                let kl = (m.ln() - self.logp[i] - self.logq[j]) * m;
                value += m * (self.eps * self.ce[i * b + j]) + self.eps * kl;
            }
        }
        value
    }

    /// Midpoint of [dual, primal]: off by at most half the bracket width.
    fn midpoint(&self, f: &[f64], g: &[f64]) -> (f64, f64) {
        let lo = self.dual(f, g);
        let hi = self.rounded_primal(f, g);
        (0.5 * (lo + hi), hi - lo)
    }
}

/// Entropic transport cost between two histograms, with the iterations
/// spent. The potentials warm-start each annealing stage from the previous
/// one; intermediate stages are capped, and the final stage takes
/// overrelaxed steps (falling back to plain steps if the marginal violation
/// ever grows), periodically accepting the bracket midpoint once the
/// duality gap is below [`VALUE_GAP_TOL`].
fn ot_eps(p: &[f64], q: &[f64], eps: f64, budget: usize) -> (f64, usize) {
    let b = p.len();
    if b == 1 {
        return (0.0, 0);
    }
    let denom = (b - 1) as f64;
    let logm = |m: f64| if m > 0.0 { m.ln() } else { f64::NEG_INFINITY };
    let logp: Vec<f64> = p.iter().map(|m| logm(*m)).collect();
    let logq: Vec<f64> = q.iter().map(|m| logm(*m)).collect();
    let mut f = vec![0.0f64; b];
    let mut g = vec![0.0f64; b];
    let mut row_lse = vec![0.0f64; b];
    // Cost over the stage regularizer; symmetric, so rows serve both update
    // directions with unit stride.
    let mut ce = vec![0.0f64; b * b];
    let mut wj = vec![0.0f64; b];
    let mut wi = vec![0.0f64; b];
    let mut iters = 0usize;

    let mut stages: Vec<f64> = Vec::new();
    let mut e = 1.0f64;
    while e > eps {
        stages.push(e);
        e *= 0.5;
    }
    stages.push(eps);

    let fill_costs = |ce: &mut [f64], stage_eps: f64| {
        for i in 0..b {
            for j in 0..b {
                let d = (i as f64 - j as f64) / denom;
                ce[i * b + j] = d * d / stage_eps;
            }
        }
    };

    let last = stages.len() - 1;
    for (si, stage_eps) in stages.iter().copied().enumerate() {
        fill_costs(&mut ce, stage_eps);
        let is_last = si == last;
        let tol = if is_last { MARGINAL_TOL } else { STAGE_TOL };
        let mut theta = if is_last { 1.9 } else { 1.0 };
        let mut best_viol = f64::INFINITY;
        let mut spent = 0usize;
        loop {
            // Row log-sums against the current g; also the row marginals of
            // the plan implied by the current (f, g), so one pass serves both
            // the convergence check and the next f update.
            for j in 0..b {
                wj[j] = logq[j] + g[j] / stage_eps;
            }
            let mut viol = 0.0f64;
            for i in 0..b {
                let lse = lse_row(&wj, &ce[i * b..(i + 1) * b]);
                row_lse[i] = lse;
                if p[i] > 0.0 {
                    let row_mass = (logp[i] + f[i] / stage_eps + lse).exp();
                    let dv = (row_mass - p[i]).abs();
                    if dv > viol {
                        viol = dv;
                    }
                }
            }
            if viol < tol || iters >= budget || (!is_last && spent >= STAGE_CAP) {
                break;
            }
            if is_last && spent % GAP_CHECK_EVERY == 0 {
                let bracket = Bracket {
                    p,
                    q,
                    logp: &logp,
                    logq: &logq,
                    eps,
                    ce: &ce,
                };
                let (mid, gap) = bracket.midpoint(&f, &g);
                if gap <= VALUE_GAP_TOL {
                    return (mid, iters);
                }
            }
            if viol > 10.0 * best_viol {
                theta = 1.0;
            }
            if viol < best_viol {
                best_viol = viol;
            }
            iters += 1;
            spent += 1;
            for i in 0..b {
                if row_lse[i] > f64::NEG_INFINITY {
                    f[i] = (1.0 - theta) * f[i] - theta * stage_eps * row_lse[i];
                }
            }
            for i in 0..b {
                wi[i] = logp[i] + f[i] / stage_eps;
            }
            for j in 0..b {
                let lse = lse_row(&wi, &ce[j * b..(j + 1) * b]);
                if lse > f64::NEG_INFINITY {
                    g[j] = (1.0 - theta) * g[j] - theta * stage_eps * lse;
                }
            }
        }
    }

    // Converged by marginals, or ran out of budget mid-anneal: either way,
    // report the certified midpoint at the target regularizer.
    fill_costs(&mut ce, eps);
    let bracket = Bracket {
        p,
        q,
        logp: &logp,
        logq: &logq,
        eps,
        ce: &ce,
    };
    (bracket.midpoint(&f, &g).0, iters)
}

/// Debiased divergence between two probability histograms.
pub fn sinkhorn_divergence(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64, MetricError> {
    sinkhorn_divergence_with_iters(p, q, epsilon).map(|(v, _)| v)
}

/// Same as [`sinkhorn_divergence`], also reporting solver iterations summed
/// across the three transport solves.
pub fn sinkhorn_divergence_with_iters(
    p: &[f64],
    q: &[f64],
    epsilon: f64,
) -> Result<(f64, usize), MetricError> {
    assert!(epsilon > 0.0, "regularizer must be positive");
    if p.len() != q.len() {
        return Err(MetricError::BinMismatch {
            a: p.len(),
            b: q.len(),
        });
    }
    validate(p)?;
    validate(q)?;
    // The cost is symmetric, so the transport value does not depend on the
    // argument order; solving in a canonical order makes the computed value
    // independent of it too, to the last bit.
    let (a, c) = canonical_order(p, q);
    let (pq, i1) = ot_eps(a, c, epsilon, MAX_ITERS);
    let (pp, i2) = ot_eps(p, p, epsilon, MAX_ITERS);
    let (qq, i3) = ot_eps(q, q, epsilon, MAX_ITERS);
    let s = (pq - 0.5 * pp - 0.5 * qq).max(0.0);
    Ok((s, i1 + i2 + i3))
}

/// Orders two histograms by their first differing entry.
fn canonical_order<'a>(p: &'a [f64], q: &'a [f64]) -> (&'a [f64], &'a [f64]) {
    for (a, b) in p.iter().zip(q.iter()) {
        match a.total_cmp(b) {
            std::cmp::Ordering::Less => return (p, q),
            std::cmp::Ordering::Greater => return (q, p),
            std::cmp::Ordering::Equal => {}
        }
    }
    (p, q)
}

/// Exact transport cost between two histograms on the same bin grid under
/// the squared ground cost, via the monotone quantile coupling. Exact for
/// any convex cost in one dimension; used as the solver's reference.
pub fn exact_ot_1d(p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    if p.len() != q.len() {
        return Err(MetricError::BinMismatch {
            a: p.len(),
            b: q.len(),
        });
    }
    validate(p)?;
    validate(q)?;
    let b = p.len();
    if b == 1 {
        return Ok(0.0);
    }
    let denom = (b - 1) as f64;
    let mut i = 0usize;
    let mut j = 0usize;
    let mut pi = p[0];
    let mut qj = q[0];
    let mut total = 0.0f64;
    loop {
        while i < b && pi <= 0.0 {
            i += 1;
            if i < b {
                pi = p[i];
            }
        }
        while j < b && qj <= 0.0 {
            j += 1;
            if j < b {
                qj = q[j];
            }
        }
        if i >= b || j >= b {
            break;
        }
        let m = pi.min(qj);
        let d = (i as f64 - j as f64) / denom;
        total += m * d * d;
        pi -= m;
        qj -= m;
    }
    Ok(total)
}

/// Divergence of one attribute group: the mean over its scalar channels.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GroupDivergence {
    pub group: FeatureGroup,
    pub label: &'static str,
    pub divergence: f64,
    pub channels: usize,
}

/// Per-attribute transport report between two Gaussian sets.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SinkhornReport {
    pub epsilon: f64,
    pub bins: usize,
    pub groups: Vec<GroupDivergence>,
    /// Sum of the five group divergences.
    pub total: f64,
    /// Solver iterations summed over all channels.
    pub iterations: usize,
}

/// Attribute-distribution divergence between two sets. Histograms share
/// per-channel bounds over the union of both sets; channel divergences are
/// averaged within each group and the groups summed into the total.
pub fn sinkhorn_3d<T: Real>(
    gt: &GaussianSet<T>,
    stego: &GaussianSet<T>,
    epsilon: f64,
    bins: usize,
) -> Result<SinkhornReport, MetricError> {
    let bounds = union_bounds(&[gt, stego])?;
    let hg = feature_histograms(gt, bins, Some(&bounds))?;
    let hs = feature_histograms(stego, bins, Some(&bounds))?;
    let mut sums = [0.0f64; 5];
    let mut counts = [0usize; 5];
    let mut iterations = 0usize;
    for (a, c) in hg.channels.iter().zip(&hs.channels) {
        let (v, it) = sinkhorn_divergence_with_iters(&a.bins, &c.bins, epsilon)?;
        let gi = GROUPS.iter().position(|g| *g == a.group).unwrap();
        sums[gi] += v;
        counts[gi] += 1;
        iterations += it;
    }
    let mut groups = Vec::with_capacity(GROUPS.len());
    let mut total = 0.0f64;
    for (gi, group) in GROUPS.iter().copied().enumerate() {
        let divergence = if counts[gi] > 0 {
            sums[gi] / counts[gi] as f64
        } else {
            0.0
        };
        total += divergence;
        groups.push(GroupDivergence {
            group,
            label: group.label(),
            divergence,
            channels: counts[gi],
        });
    }
    Ok(SinkhornReport {
        epsilon,
        bins,
        groups,
        total,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hist(rng: &mut ChaCha8Rng, b: usize) -> Vec<f64> {
        let mut h: Vec<f64> = (0..b).map(|_| rng.gen_range(0.01..1.0f64)).collect();
        let s: f64 = h.iter().sum();
        for m in h.iter_mut() {
            *m /= s;
        }
        h
    }

    #[test]
    fn identical_histograms_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let p = random_hist(&mut rng, 64);
            let s = sinkhorn_divergence(&p, &p, 1e-2).unwrap();
            assert!(s.abs() <= 1e-12, "self divergence {s}");
        }
    }

    #[test]
    fn distant_point_masses_cost_one() {
        let mut p = vec![0.0f64; 64];
        let mut q = vec![0.0f64; 64];
        p[0] = 1.0;
        q[63] = 1.0;
        assert_eq!(exact_ot_1d(&p, &q).unwrap(), 1.0);
        let s = sinkhorn_divergence(&p, &q, 1e-3).unwrap();
        assert!((s - 1.0).abs() < 1e-2, "divergence {s}");
    }

    #[test]
    fn matches_quantile_coupling_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let p = random_hist(&mut rng, 64);
            let q = random_hist(&mut rng, 64);
            let exact = exact_ot_1d(&p, &q).unwrap();
            let s = sinkhorn_divergence(&p, &q, 1e-3).unwrap();
            assert!((s - exact).abs() < 1e-2, "solver {s} vs exact {exact}");
        }
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            let p = random_hist(&mut rng, 64);
            let q = random_hist(&mut rng, 64);
            let a = sinkhorn_divergence(&p, &q, 1e-2).unwrap();
            let b = sinkhorn_divergence(&q, &p, 1e-2).unwrap();
            assert!((a - b).abs() <= 1e-9, "asymmetry {}", (a - b).abs());
        }
    }

    #[test]
    fn shrinking_regularizer_approaches_exact_transport() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..3 {
            let p = random_hist(&mut rng, 64);
            let q = random_hist(&mut rng, 64);
            let exact = exact_ot_1d(&p, &q).unwrap();
            let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3]
                .iter()
                .map(|eps| (sinkhorn_divergence(&p, &q, *eps).unwrap() - exact).abs())
                .collect();
            assert!(gaps[0] >= gaps[1] - 1e-6, "gaps {gaps:?}");
            assert!(gaps[1] >= gaps[2] - 1e-6, "gaps {gaps:?}");
            assert!(gaps[2] < 1e-2);
        }
    }

    #[test]
    fn rejects_bad_histograms() {
        let p = vec![0.5; 2];
        assert!(matches!(
            sinkhorn_divergence(&p, &[0.9, 0.2], 1e-2),
            Err(MetricError::NotNormalized { .. })
        ));
        assert!(matches!(
            sinkhorn_divergence(&p, &[1.5, -0.5], 1e-2),
            Err(MetricError::NegativeMass)
        ));
        assert!(matches!(
            sinkhorn_divergence(&p, &[1.0], 1e-2),
            Err(MetricError::BinMismatch { a: 2, b: 1 })
        ));
    }

    #[test]
    fn oracle_closed_forms() {
        let mut p = vec![0.0f64; 64];
        p[0] = 1.0;
        let mut q = vec![0.0f64; 64];
        q[0] = 0.5;
        q[63] = 0.5;
        // Half the mass stays, half travels the whole axis.
        assert!((exact_ot_1d(&p, &q).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(exact_ot_1d(&q, &q).unwrap(), 0.0);
        let a = exact_ot_1d(&p, &q).unwrap();
        let b = exact_ot_1d(&q, &p).unwrap();
        assert_eq!(a, b);
    }

    fn toy_set(n: usize, logit_shift: f64) -> GaussianSet<f64> {
        let mut set = GaussianSet::empty(0);
        for i in 0..n {
            let t = i as f64 / n as f64;
            set.positions.push([t, 1.0 - t, t * t]);
            set.opacity_logits.push(4.0 * t - 2.0 + logit_shift);
            let w = 1.0 + t;
            set.rotations.push([w, 0.2, t, 0.1]);
            set.log_scales.push([t - 0.5, 0.1 * t, -t]);
            set.sh.extend_from_slice(&[t, 0.5 - t, 0.2]);
        }
        set
    }

    #[test]
    fn identical_sets_give_zero_total() {
        let set = toy_set(40, 0.0);
        let report = sinkhorn_3d(&set, &set, 1e-2, 32).unwrap();
        assert!(report.total.abs() < 1e-6, "total {}", report.total);
    }

    #[test]
    fn report_total_is_group_sum() {
        let gt = toy_set(40, 0.0);
        let stego = toy_set(40, 0.8);
        let report = sinkhorn_3d(&gt, &stego, 1e-2, 32).unwrap();
        let sum: f64 = report.groups.iter().map(|g| g.divergence).sum();
        assert!((report.total - sum).abs() <= 1e-12);
        assert_eq!(report.groups.len(), 5);
        let labels: Vec<&str> = report.groups.iter().map(|g| g.label).collect();
        assert_eq!(labels, ["op", "sc", "ro", "xyz", "sh"]);
    }

    #[test]
    fn opacity_shift_increases_opacity_divergence() {
        let gt = toy_set(60, 0.0);
        let near = sinkhorn_3d(&gt, &toy_set(60, 0.0), 1e-2, 32).unwrap();
        let far = sinkhorn_3d(&gt, &toy_set(60, 0.9), 1e-2, 32).unwrap();
        let op = |r: &SinkhornReport| r.groups[0].divergence;
        assert!(op(&far) > op(&near), "{} vs {}", op(&far), op(&near));
    }
}
