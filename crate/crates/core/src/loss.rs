//! The multi-window temporal loss and its multi-scale aggregation.
//!
//! A prediction set gathers, at one scale level, the outputs of all four
//! windows of a training sample next to the seven ground-truth frames. Seven
//! term families are computed over it:
//!
//! * `r1`, `r2` — reconstruction against ground truth for stride-1 (9 norms)
//!   and stride-2 (3 norms) predictions;
//! * `tm1` — overlapping stride-1 predictions at half-steps -1 and +1 pulled
//!   toward each other;
//! * `tm2` — stride-2 predictions pulled toward the stride-1 predictions
//!   sharing their timestamps (-2 vs w1, 0 vs w2, +2 vs w3);
//! * `tmm` — the mean of each overlapping stride-1 pair pulled toward truth;
//! * `td1`, `td2` — consecutive-frame differences matched to the
//!   ground-truth differences, per window.
//!
//! Every norm is a stabilized RMSE, `sqrt(mean(d^2) + eps^2) - eps`, over all
//! pixels and channels jointly, so magnitudes are comparable across scale
//! levels. The offset keeps each term exactly zero at a perfect prediction
//! while the `eps^2` pad caps the gradient of near-zero residuals: a plain
//! RMSE has a constant-norm gradient no matter how small the residual, so
//! already-satisfied matching terms keep yanking the windows toward their
//! common blend and training stalls there. Below `eps` the term behaves
//! quadratically and its pull fades with the residual; above `eps` value and
//! gradient are RMSE to within `eps`. With `epsilon = 0` the plain RMSE is
//! recovered, its gradient at zero residual defined as zero.
//!
//! A term family's value is the plain sum of its norms. Analytic gradients
//! with respect to every prediction tensor are produced alongside the values.

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("all prediction and truth tensors must share one shape; saw {a:?} and {b:?}")]
    ShapeMismatch { a: (usize, usize, usize), b: (usize, usize, usize) },
    #[error("loss weights must be finite and nonnegative")]
    BadWeights,
    #[error("multiscale loss needs 3 levels, got {0}")]
    BadLevelCount(usize),
}

/// Outputs of the four windows plus ground truth, all tensors one shape.
/// Layout inside each tensor is irrelevant to the loss; the trainer uses
/// channel-major, tests use whatever is convenient.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    /// `stride1[w-1][s]` is window w's output at half-step `2w - 5 + s`.
    pub stride1: [[Array3<f64>; 3]; 3],
    /// `stride2[s]` is the wide window's output at half-step `2s - 2`.
    pub stride2: [Array3<f64>; 3],
    /// `truths[i]` is the ground truth at half-step `i - 3`.
    pub truths: [Array3<f64>; 7],
}

impl PredictionSet {
    pub fn new(
        stride1: [[Array3<f64>; 3]; 3],
        stride2: [Array3<f64>; 3],
        truths: [Array3<f64>; 7],
    ) -> Result<Self, LossError> {
        let shape = truths[0].dim();
        let check = |a: &Array3<f64>| -> Result<(), LossError> {
            if a.dim() != shape {
                Err(LossError::ShapeMismatch { a: shape, b: a.dim() })
            } else {
                Ok(())
            }
        };
        for w in &stride1 {
            for t in w {
                check(t)?;
            }
        }
        for t in &stride2 {
            check(t)?;
        }
        for t in &truths {
            check(t)?;
        }
        Ok(PredictionSet { stride1, stride2, truths })
    }

    /// Stride-1 window `w` (1..=3) at half-step `t`; panics off-schedule.
    pub fn s1(&self, w: usize, t: i32) -> &Array3<f64> {
        let slot = t - (2 * w as i32 - 5);
        assert!((0..3).contains(&slot), "window {w} has no output at half-step {t}");
        &self.stride1[w - 1][slot as usize]
    }

    /// Stride-2 prediction at half-step `t` (-2, 0 or +2).
    pub fn s2(&self, t: i32) -> &Array3<f64> {
        assert!(t % 2 == 0 && (-2..=2).contains(&t), "no stride-2 output at half-step {t}");
        &self.stride2[((t + 2) / 2) as usize]
    }

    /// Ground truth at half-step `t` (-3..=+3).
    pub fn truth(&self, t: i32) -> &Array3<f64> {
        assert!((-3..=3).contains(&t), "no ground truth at half-step {t}");
        &self.truths[(t + 3) as usize]
    }
}

/// Gradients of a scalar loss with respect to every prediction tensor,
/// shaped like the prediction half of a [`PredictionSet`].
#[derive(Debug, Clone)]
pub struct PredictionGrads {
    pub stride1: [[Array3<f64>; 3]; 3],
    pub stride2: [Array3<f64>; 3],
}

impl PredictionGrads {
    pub fn zeros_like(p: &PredictionSet) -> Self {
        let z = || Array3::zeros(p.truths[0].dim());
        PredictionGrads {
            stride1: [[z(), z(), z()], [z(), z(), z()], [z(), z(), z()]],
            stride2: [z(), z(), z()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_tm1: f64,
    pub lambda_tmm: f64,
    pub lambda_td: f64,
    /// Weight of the whole stride-2 group (r2, tm2, td2).
    pub lambda_sq: f64,
    pub lambda_tm2: f64,
    /// Per-level weights, coarsest first.
    pub level_weights: [f64; 3],
    /// Stabilizer inside every norm: `sqrt(mean(d^2) + epsilon^2) - epsilon`.
    /// 0 gives the plain RMSE.
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r: 1.0,
            lambda_tm1: 1.0,
            lambda_tmm: 1.0,
            lambda_td: 0.1,
            lambda_sq: 1.0,
            lambda_tm2: 0.1,
            level_weights: [4.0, 2.0, 1.0],
            epsilon: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [
            self.lambda_r,
            self.lambda_tm1,
            self.lambda_tmm,
            self.lambda_td,
            self.lambda_sq,
            self.lambda_tm2,
            self.level_weights[0],
            self.level_weights[1],
            self.level_weights[2],
            self.epsilon,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LossError::BadWeights);
        }
        Ok(())
    }
}

/// Which term families participate. Masked-out terms report 0 and produce no
/// gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TermMask {
    pub r1: bool,
    pub tm1: bool,
    pub tmm: bool,
    pub td1: bool,
    pub r2: bool,
    pub tm2: bool,
    pub td2: bool,
}

impl Default for TermMask {
    fn default() -> Self {
        TermMask::all()
    }
}

impl TermMask {
    pub fn all() -> Self {
        TermMask { r1: true, tm1: true, tmm: true, td1: true, r2: true, tm2: true, td2: true }
    }

    pub fn none() -> Self {
        TermMask { r1: false, tm1: false, tmm: false, td1: false, r2: false, tm2: false, td2: false }
    }

    /// The standard ablation ladder, columns (a)..(f): reconstruction only,
    /// then cumulatively +tm1, +tmm, +td1, +(r2, td2), +tm2 (everything).
    pub fn ladder(column: char) -> Option<TermMask> {
        let mut m = TermMask::none();
        m.r1 = true;
        if column == 'a' {
            return Some(m);
        }
        m.tm1 = true;
        if column == 'b' {
            return Some(m);
        }
        m.tmm = true;
        if column == 'c' {
            return Some(m);
        }
        m.td1 = true;
        if column == 'd' {
            return Some(m);
        }
        m.r2 = true;
        m.td2 = true;
        if column == 'e' {
            return Some(m);
        }
        m.tm2 = true;
        if column == 'f' {
            return Some(m);
        }
        None
    }
}

/// Raw (unweighted) values of the seven term families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TermValues {
    pub r1: f64,
    pub tm1: f64,
    pub tmm: f64,
    pub td1: f64,
    pub r2: f64,
    pub tm2: f64,
    pub td2: f64,
}

impl TermValues {
    /// The single-level weighted combination:
    /// `lr*r1 + ltm1*tm1 + ltmm*tmm + ltd*td1 + lsq*(lr*r2 + ltm2*tm2 + ltd*td2)`.
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.lambda_r * self.r1
            + w.lambda_tm1 * self.tm1
            + w.lambda_tmm * self.tmm
            + w.lambda_td * self.td1
            + w.lambda_sq
                * (w.lambda_r * self.r2 + w.lambda_tm2 * self.tm2 + w.lambda_td * self.td2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelBreakdown {
    pub level_weight: f64,
    pub terms: TermValues,
    /// This level's weighted combination, before the level weight.
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub levels: Vec<LevelBreakdown>,
    /// `sum(level_weight * weighted)` over levels.
    pub total: f64,
}

/// RMSE between two tensors: `sqrt(mean((a - b)^2))`.
pub fn rmse_distance(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    let n = a.len() as f64;
    (a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt()
}

/// The stabilized norm `sqrt(mean(d^2) + eps^2) - eps`.
fn norm(d: &Array3<f64>, eps: f64) -> f64 {
    let m = d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
    (m + eps * eps).sqrt() - eps
}

/// Scaled gradient of the stabilized norm with respect to `d`, i.e.
/// `coeff * d / (n * root)` where `root = sqrt(mean(d^2) + eps^2)` is supplied
/// by the caller; `None` stands for an all-zero gradient.
fn norm_grad(d: &Array3<f64>, root: f64, coeff: f64) -> Option<Array3<f64>> {
    if root == 0.0 || coeff == 0.0 {
        return None;
    }
    Some(d * (coeff / (d.len() as f64 * root)))
}

/// One term family evaluator with optional gradient accumulation. `targets`
/// receives `(slot, +-g)` contributions, where a slot names one prediction
/// tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    S1 { w: usize, t: i32 },
    S2 { t: i32 },
}

struct Accumulator<'g> {
    grads: Option<&'g mut PredictionGrads>,
    eps: f64,
}

impl Accumulator<'_> {
    fn add(&mut self, slot: Slot, g: &Array3<f64>, sign: f64) {
        if let Some(grads) = self.grads.as_deref_mut() {
            let target = match slot {
                Slot::S1 { w, t } => {
                    let s = (t - (2 * w as i32 - 5)) as usize;
                    &mut grads.stride1[w - 1][s]
                }
                Slot::S2 { t } => &mut grads.stride2[((t + 2) / 2) as usize],
            };
            if sign == 1.0 {
                *target += g;
            } else {
                target.scaled_add(sign, g);
            }
        }
    }

    /// `|| a - b ||` where both sides are predictions.
    fn pair(&mut self, p: &PredictionSet, a: Slot, b: Slot, coeff: f64) -> f64 {
        let (ta, tb) = (fetch(p, a), fetch(p, b));
        let d = ta - tb;
        let v = norm(&d, self.eps);
        if let Some(g) = norm_grad(&d, v + self.eps, coeff) {
            self.add(a, &g, 1.0);
            self.add(b, &g, -1.0);
        }
        v
    }

    /// `|| (a + b)/2 - truth(t) ||`.
    fn mean_vs_truth(&mut self, p: &PredictionSet, a: Slot, b: Slot, t: i32, coeff: f64) -> f64 {
        let d = (fetch(p, a) + fetch(p, b)) * 0.5 - p.truth(t);
        let v = norm(&d, self.eps);
        if let Some(g) = norm_grad(&d, v + self.eps, coeff * 0.5) {
            self.add(a, &g, 1.0);
            self.add(b, &g, 1.0);
        }
        v
    }

    /// `|| p(t0) - p(t1) - (y(t0) - y(t1)) ||` within one window.
    fn diff_vs_truth(&mut self, p: &PredictionSet, a: Slot, b: Slot, t0: i32, t1: i32, coeff: f64) -> f64 {
        let d = fetch(p, a) - fetch(p, b) - p.truth(t0) + p.truth(t1);
        let v = norm(&d, self.eps);
        if let Some(g) = norm_grad(&d, v + self.eps, coeff) {
            self.add(a, &g, 1.0);
            self.add(b, &g, -1.0);
        }
        v
    }

    /// `|| p - truth(t) ||`.
    fn vs_truth(&mut self, p: &PredictionSet, a: Slot, t: i32, coeff: f64) -> f64 {
        let d = fetch(p, a) - p.truth(t);
        let v = norm(&d, self.eps);
        if let Some(g) = norm_grad(&d, v + self.eps, coeff) {
            self.add(a, &g, 1.0);
        }
        v
    }
}

fn fetch<'p>(p: &'p PredictionSet, slot: Slot) -> &'p Array3<f64> {
    match slot {
        Slot::S1 { w, t } => p.s1(w, t),
        Slot::S2 { t } => p.s2(t),
    }
}

fn compute_terms(
    p: &PredictionSet,
    weights: &LossWeights,
    mask: TermMask,
    level_weight: f64,
    mut grads: Option<&mut PredictionGrads>,
) -> TermValues {
    let mut acc = Accumulator { grads: grads.take(), eps: weights.epsilon };
    let mut t = TermValues::default();

    if mask.tm1 {
        let c = level_weight * weights.lambda_tm1;
        t.tm1 = acc.pair(p, Slot::S1 { w: 1, t: -1 }, Slot::S1 { w: 2, t: -1 }, c)
            + acc.pair(p, Slot::S1 { w: 2, t: 1 }, Slot::S1 { w: 3, t: 1 }, c);
    }
    if mask.tm2 {
        let c = level_weight * weights.lambda_sq * weights.lambda_tm2;
        t.tm2 = acc.pair(p, Slot::S2 { t: -2 }, Slot::S1 { w: 1, t: -2 }, c)
            + acc.pair(p, Slot::S2 { t: 0 }, Slot::S1 { w: 2, t: 0 }, c)
            + acc.pair(p, Slot::S2 { t: 2 }, Slot::S1 { w: 3, t: 2 }, c);
    }
    if mask.tmm {
        let c = level_weight * weights.lambda_tmm;
        t.tmm = acc.mean_vs_truth(p, Slot::S1 { w: 1, t: -1 }, Slot::S1 { w: 2, t: -1 }, -1, c)
            + acc.mean_vs_truth(p, Slot::S1 { w: 2, t: 1 }, Slot::S1 { w: 3, t: 1 }, 1, c);
    }
    if mask.td1 {
        let c = level_weight * weights.lambda_td;
        for w in 1..=3usize {
            let t0 = 2 * w as i32 - 5;
            for s in 0..2 {
                let (ta, tb) = (t0 + s, t0 + s + 1);
                t.td1 += acc.diff_vs_truth(
                    p,
                    Slot::S1 { w, t: ta },
                    Slot::S1 { w, t: tb },
                    ta,
                    tb,
                    c,
                );
            }
        }
    }
    if mask.td2 {
        let c = level_weight * weights.lambda_sq * weights.lambda_td;
        t.td2 = acc.diff_vs_truth(p, Slot::S2 { t: -2 }, Slot::S2 { t: 0 }, -2, 0, c)
            + acc.diff_vs_truth(p, Slot::S2 { t: 0 }, Slot::S2 { t: 2 }, 0, 2, c);
    }
    if mask.r1 {
        let c = level_weight * weights.lambda_r;
        for w in 1..=3usize {
            for s in 0..3 {
                let tt = 2 * w as i32 - 5 + s;
                t.r1 += acc.vs_truth(p, Slot::S1 { w, t: tt }, tt, c);
            }
        }
    }
    if mask.r2 {
        let c = level_weight * weights.lambda_sq * weights.lambda_r;
        for s in 0..3 {
            let tt = 2 * (s - 1);
            t.r2 += acc.vs_truth(p, Slot::S2 { t: tt }, tt, c);
        }
    }
    t
}

// Value-only accessors for the individual term families.

pub fn temporal_matching_s1(p: &PredictionSet) -> f64 {
    only(p, TermMask { tm1: true, ..TermMask::none() }).tm1
}

pub fn temporal_matching_s2(p: &PredictionSet) -> f64 {
    only(p, TermMask { tm2: true, ..TermMask::none() }).tm2
}

pub fn temporal_matching_mean(p: &PredictionSet) -> f64 {
    only(p, TermMask { tmm: true, ..TermMask::none() }).tmm
}

pub fn temporal_difference_s1(p: &PredictionSet) -> f64 {
    only(p, TermMask { td1: true, ..TermMask::none() }).td1
}

pub fn temporal_difference_s2(p: &PredictionSet) -> f64 {
    only(p, TermMask { td2: true, ..TermMask::none() }).td2
}

pub fn reconstruction_s1(p: &PredictionSet) -> f64 {
    only(p, TermMask { r1: true, ..TermMask::none() }).r1
}

pub fn reconstruction_s2(p: &PredictionSet) -> f64 {
    only(p, TermMask { r2: true, ..TermMask::none() }).r2
}

fn only(p: &PredictionSet, mask: TermMask) -> TermValues {
    compute_terms(p, &LossWeights::default(), mask, 1.0, None)
}

/// Single-level weighted loss.
pub fn total_loss(p: &PredictionSet, weights: &LossWeights, mask: TermMask) -> LossBreakdown {
    let terms = compute_terms(p, weights, mask, 1.0, None);
    let weighted = terms.weighted(weights);
    LossBreakdown {
        levels: vec![LevelBreakdown { level_weight: 1.0, terms, weighted }],
        total: weighted,
    }
}

/// Single-level weighted loss plus gradients with respect to all 12
/// prediction tensors.
pub fn total_loss_grad(
    p: &PredictionSet,
    weights: &LossWeights,
    mask: TermMask,
) -> (LossBreakdown, PredictionGrads) {
    let mut grads = PredictionGrads::zeros_like(p);
    let terms = compute_terms(p, weights, mask, 1.0, Some(&mut grads));
    let weighted = terms.weighted(weights);
    (
        LossBreakdown {
            levels: vec![LevelBreakdown { level_weight: 1.0, terms, weighted }],
            total: weighted,
        },
        grads,
    )
}

/// Weighted sum over scale levels, coarsest first:
/// `total = sum_l level_weights[l] * weighted_l`.
pub fn multiscale_loss(
    per_level: &[PredictionSet],
    weights: &LossWeights,
    mask: TermMask,
) -> Result<LossBreakdown, LossError> {
    if per_level.len() != 3 {
        return Err(LossError::BadLevelCount(per_level.len()));
    }
    weights.validate()?;
    let mut levels = Vec::with_capacity(3);
    let mut total = 0.0;
    for (l, p) in per_level.iter().enumerate() {
        let terms = compute_terms(p, weights, mask, 1.0, None);
        let weighted = terms.weighted(weights);
        levels.push(LevelBreakdown { level_weight: weights.level_weights[l], terms, weighted });
        total += weights.level_weights[l] * weighted;
    }
    Ok(LossBreakdown { levels, total })
}

/// Multi-scale loss plus per-level prediction gradients, already scaled by
/// the level weights.
pub fn multiscale_loss_grad(
    per_level: &[PredictionSet],
    weights: &LossWeights,
    mask: TermMask,
) -> Result<(LossBreakdown, Vec<PredictionGrads>), LossError> {
    if per_level.len() != 3 {
        return Err(LossError::BadLevelCount(per_level.len()));
    }
    weights.validate()?;
    let mut levels = Vec::with_capacity(3);
    let mut grads = Vec::with_capacity(3);
    let mut total = 0.0;
    for (l, p) in per_level.iter().enumerate() {
        let mut g = PredictionGrads::zeros_like(p);
        let lw = weights.level_weights[l];
        let terms = compute_terms(p, weights, mask, lw, Some(&mut g));
        let weighted = terms.weighted(weights);
        levels.push(LevelBreakdown { level_weight: lw, terms, weighted });
        total += lw * weighted;
        grads.push(g);
    }
    Ok((LossBreakdown { levels, total }, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DIM: (usize, usize, usize) = (4, 4, 3);

    /// The stabilized norm of a constant-`x` residual under default weights.
    fn ch(x: f64) -> f64 {
        let eps = LossWeights::default().epsilon;
        (x * x + eps * eps).sqrt() - eps
    }

    fn rand_tensor(rng: &mut ChaCha8Rng) -> Array3<f64> {
        Array3::from_shape_fn(DIM, |_| rng.gen_range(-1.0..1.0))
    }

    fn random_set(seed: u64) -> PredictionSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PredictionSet::new(
            [
                [rand_tensor(&mut rng), rand_tensor(&mut rng), rand_tensor(&mut rng)],
                [rand_tensor(&mut rng), rand_tensor(&mut rng), rand_tensor(&mut rng)],
                [rand_tensor(&mut rng), rand_tensor(&mut rng), rand_tensor(&mut rng)],
            ],
            [rand_tensor(&mut rng), rand_tensor(&mut rng), rand_tensor(&mut rng)],
            std::array::from_fn(|_| rand_tensor(&mut rng)),
        )
        .unwrap()
    }

    /// Predictions exactly equal to their ground truths everywhere.
    fn perfect_set(seed: u64) -> PredictionSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truths: [Array3<f64>; 7] = std::array::from_fn(|_| rand_tensor(&mut rng));
        let truth_at = |t: i32| truths[(t + 3) as usize].clone();
        PredictionSet::new(
            std::array::from_fn(|wi| {
                let t0 = 2 * (wi as i32 + 1) - 5;
                std::array::from_fn(|s| truth_at(t0 + s as i32))
            }),
            std::array::from_fn(|s| truth_at(2 * (s as i32 - 1))),
            truths,
        )
        .unwrap()
    }

    #[test]
    fn all_terms_vanish_on_perfect_predictions() {
        let p = perfect_set(1);
        assert_eq!(temporal_matching_s1(&p), 0.0);
        assert_eq!(temporal_matching_s2(&p), 0.0);
        assert_eq!(temporal_matching_mean(&p), 0.0);
        assert_eq!(temporal_difference_s1(&p), 0.0);
        assert_eq!(temporal_difference_s2(&p), 0.0);
        assert_eq!(reconstruction_s1(&p), 0.0);
        assert_eq!(reconstruction_s2(&p), 0.0);
        assert_eq!(total_loss(&p, &LossWeights::default(), TermMask::all()).total, 0.0);
    }

    #[test]
    fn all_terms_are_nonnegative_on_random_sets() {
        for seed in 0..20 {
            let p = random_set(seed);
            for v in [
                temporal_matching_s1(&p),
                temporal_matching_s2(&p),
                temporal_matching_mean(&p),
                temporal_difference_s1(&p),
                temporal_difference_s2(&p),
                reconstruction_s1(&p),
                reconstruction_s2(&p),
            ] {
                assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn matching_of_constant_offset_is_twice_the_offset() {
        // Overlap partners differ by a constant c everywhere; the norm of a
        // constant residual is ch(c), so tm1 = 2 ch(c).
        let mut p = perfect_set(2);
        let c = 0.3;
        p.stride1[0][2] = p.s1(2, -1) + c; // w1 at -1
        p.stride1[2][0] = p.s1(2, 1) + c; // w3 at +1
        assert_abs_diff_eq!(temporal_matching_s1(&p), 2.0 * ch(c), epsilon = 1e-12);
    }

    #[test]
    fn stride2_matching_uses_the_three_even_pairings() {
        let mut p = perfect_set(3);
        // Equal stride-1/stride-2 predictions: zero.
        p.stride2 = [p.s1(1, -2).clone(), p.s1(2, 0).clone(), p.s1(3, 2).clone()];
        assert_eq!(temporal_matching_s2(&p), 0.0);
        // Only the (-2, w1) pairing is perturbed; exactly one norm responds.
        p.stride2[0] += 0.25;
        assert_abs_diff_eq!(temporal_matching_s2(&p), ch(0.25), epsilon = 1e-12);
        // Perturbing a stride-1 frame at an odd half-step must not matter.
        let before = temporal_matching_s2(&p);
        p.stride1[1][0] += 0.7; // w2 at -1
        assert_eq!(temporal_matching_s2(&p), before);
    }

    #[test]
    fn matching_mean_cancels_symmetric_errors() {
        let mut p = perfect_set(4);
        let delta = rand_tensor(&mut ChaCha8Rng::seed_from_u64(99));
        // w1 and w2 stray from truth in opposite directions at -1; their mean
        // is still the truth, so tmm stays 0 while tm1 does not.
        p.stride1[0][2] = p.truth(-1) + &delta;
        p.stride1[1][0] = p.truth(-1) - &delta;
        assert_abs_diff_eq!(temporal_matching_mean(&p), 0.0, epsilon = 1e-12);
        assert!(temporal_matching_s1(&p) > 0.0);
    }

    #[test]
    fn difference_terms_ignore_global_offsets() {
        let base = random_set(5);
        let mut shifted = base.clone();
        for w in &mut shifted.stride1 {
            for t in w {
                *t += 0.42;
            }
        }
        for t in &mut shifted.stride2 {
            *t += 0.42;
        }
        assert_abs_diff_eq!(
            temporal_difference_s1(&shifted),
            temporal_difference_s1(&base),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            temporal_difference_s2(&shifted),
            temporal_difference_s2(&base),
            epsilon = 1e-12
        );

        // Shifting predictions AND truths together also changes nothing.
        let mut both = base.clone();
        for t in &mut both.truths {
            *t += 0.13;
        }
        for w in &mut both.stride1 {
            for t in w {
                *t += 0.13;
            }
        }
        for t in &mut both.stride2 {
            *t += 0.13;
        }
        assert_abs_diff_eq!(
            temporal_difference_s1(&both),
            temporal_difference_s1(&base),
            epsilon = 1e-12
        );
    }

    #[test]
    fn first_window_difference_pairs_the_right_times() {
        let mut p = perfect_set(6);
        // Break only the truth-difference between half-steps -3 and -2: the
        // w=1 window's first pair responds, everything else is still zero.
        p.stride1[0][0] += 0.2; // w1 at -3
        let td = temporal_difference_s1(&p);
        assert_abs_diff_eq!(td, ch(0.2), epsilon = 1e-12);
    }

    #[test]
    fn reconstruction_counts_nine_and_three_terms() {
        let mut p = perfect_set(7);
        let c = 0.11;
        for w in &mut p.stride1 {
            for t in w {
                *t += c;
            }
        }
        for t in &mut p.stride2 {
            *t += c;
        }
        assert_abs_diff_eq!(reconstruction_s1(&p), 9.0 * ch(c), epsilon = 1e-12);
        assert_abs_diff_eq!(reconstruction_s2(&p), 3.0 * ch(c), epsilon = 1e-12);
    }

    #[test]
    fn total_combines_terms_with_the_default_weights() {
        let p = random_set(8);
        let w = LossWeights::default();
        assert_eq!(w.lambda_r, 1.0);
        assert_eq!(w.lambda_tm1, 1.0);
        assert_eq!(w.lambda_tmm, 1.0);
        assert_eq!(w.lambda_td, 0.1);
        assert_eq!(w.lambda_sq, 1.0);
        assert_eq!(w.lambda_tm2, 0.1);
        assert_eq!(w.level_weights, [4.0, 2.0, 1.0]);

        let b = total_loss(&p, &w, TermMask::all());
        let t = &b.levels[0].terms;
        let want = t.r1 + t.tm1 + t.tmm + 0.1 * t.td1 + 1.0 * (t.r2 + 0.1 * t.tm2 + 0.1 * t.td2);
        assert_abs_diff_eq!(b.total, want, epsilon = 1e-12 * want.abs().max(1.0));

        // Recombination invariant.
        assert_abs_diff_eq!(
            b.total,
            b.levels[0].terms.weighted(&w) * b.levels[0].level_weight,
            epsilon = 1e-9
        );
    }

    #[test]
    fn mask_zeroes_terms_and_total() {
        let p = random_set(9);
        let w = LossWeights::default();
        let only_r1 = total_loss(&p, &w, TermMask::ladder('a').unwrap());
        assert_eq!(only_r1.levels[0].terms.tm1, 0.0);
        assert_eq!(only_r1.levels[0].terms.td2, 0.0);
        assert_abs_diff_eq!(
            only_r1.total,
            w.lambda_r * reconstruction_s1(&p),
            epsilon = 1e-12
        );
        assert_eq!(total_loss(&p, &w, TermMask::none()).total, 0.0);
    }

    #[test]
    fn ladder_masks_accumulate() {
        let a = TermMask::ladder('a').unwrap();
        assert!(a.r1 && !a.tm1 && !a.tmm && !a.td1 && !a.r2 && !a.tm2 && !a.td2);
        let d = TermMask::ladder('d').unwrap();
        assert!(d.r1 && d.tm1 && d.tmm && d.td1 && !d.r2 && !d.tm2 && !d.td2);
        let e = TermMask::ladder('e').unwrap();
        assert!(e.r2 && e.td2 && !e.tm2);
        assert_eq!(TermMask::ladder('f').unwrap(), TermMask::all());
        assert_eq!(TermMask::ladder('z'), None);
    }

    #[test]
    fn scaling_term_weights_scales_the_total() {
        let p = random_set(10);
        let w = LossWeights::default();
        let mut scaled = w;
        for v in [
            &mut scaled.lambda_r,
            &mut scaled.lambda_tm1,
            &mut scaled.lambda_tmm,
            &mut scaled.lambda_td,
            &mut scaled.lambda_tm2,
        ] {
            *v *= 3.0;
        }
        let base = total_loss(&p, &w, TermMask::all()).total;
        let tripled = total_loss(&p, &scaled, TermMask::all()).total;
        assert_abs_diff_eq!(tripled, 3.0 * base, epsilon = 1e-9);
    }

    #[test]
    fn multiscale_matches_hand_arithmetic() {
        let sets = [random_set(11), random_set(11), random_set(11)];
        let w = LossWeights::default();
        let b = multiscale_loss(&sets, &w, TermMask::all()).unwrap();
        // Identical per-level inputs: total is (4 + 2 + 1) x one level.
        let one = total_loss(&sets[0], &w, TermMask::all()).total;
        assert_abs_diff_eq!(b.total, 7.0 * one, epsilon = 1e-9);

        let mut only3 = w;
        only3.level_weights = [0.0, 0.0, 1.0];
        let d = multiscale_loss(&sets, &only3, TermMask::all()).unwrap();
        assert_abs_diff_eq!(d.total, one, epsilon = 1e-12);
    }

    #[test]
    fn gradients_match_central_differences() {
        let p = random_set(12);
        let w = LossWeights::default();
        let mask = TermMask::all();
        let (_, grads) = total_loss_grad(&p, &w, mask);
        let mut rng = ChaCha8Rng::seed_from_u64(555);
        let eps = 1e-3;
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        for wi in 0..3 {
            for s in 0..3 {
                for _ in 0..4 {
                    let idx = (
                        rng.gen_range(0..DIM.0),
                        rng.gen_range(0..DIM.1),
                        rng.gen_range(0..DIM.2),
                    );
                    let mut plus = p.clone();
                    plus.stride1[wi][s][idx] += eps;
                    let mut minus = p.clone();
                    minus.stride1[wi][s][idx] -= eps;
                    let fd = (total_loss(&plus, &w, mask).total
                        - total_loss(&minus, &w, mask).total)
                        / (2.0 * eps);
                    let an = grads.stride1[wi][s][idx];
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                    worst = worst.max(rel);
                    checked += 1;
                }
            }
        }
        for s in 0..3 {
            for _ in 0..4 {
                let idx = (
                    rng.gen_range(0..DIM.0),
                    rng.gen_range(0..DIM.1),
                    rng.gen_range(0..DIM.2),
                );
                let mut plus = p.clone();
                plus.stride2[s][idx] += eps;
                let mut minus = p.clone();
                minus.stride2[s][idx] -= eps;
                let fd = (total_loss(&plus, &w, mask).total - total_loss(&minus, &w, mask).total)
                    / (2.0 * eps);
                let an = grads.stride2[s][idx];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
                checked += 1;
            }
        }
        assert!(checked >= 48);
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn masked_terms_produce_no_gradient() {
        let p = random_set(13);
        let w = LossWeights::default();
        // tm2 touches stride2 tensors; with the mask ending at (d) the only
        // gradient into stride2 would come from r2/td2/tm2, all off.
        let (_, grads) = total_loss_grad(&p, &w, TermMask::ladder('d').unwrap());
        for g in &grads.stride2 {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradients_vanish_at_the_perfect_point() {
        let p = perfect_set(14);
        let (b, grads) = total_loss_grad(&p, &LossWeights::default(), TermMask::all());
        assert_eq!(b.total, 0.0);
        for w in &grads.stride1 {
            for g in w {
                assert!(g.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn gradient_pull_fades_below_epsilon() {
        // A matching pair whose members differ by a constant delta: the
        // per-element gradient is delta / (n sqrt(delta^2 + eps^2)). Far above
        // eps that is the plain RMSE gradient 1/n; far below, it shrinks in
        // proportion to delta instead of staying at full strength.
        let w = LossWeights::default();
        let n = (DIM.0 * DIM.1 * DIM.2) as f64;
        let mask = TermMask { tm1: true, ..TermMask::none() };
        let pull = |delta: f64| {
            let mut p = perfect_set(20);
            p.stride1[0][2] = p.s1(2, -1) + delta;
            let (_, grads) = total_loss_grad(&p, &w, mask);
            grads.stride1[0][2][(0, 0, 0)] * n
        };
        assert_abs_diff_eq!(pull(0.3), 1.0, epsilon = 1e-4);
        let tiny = 1e-5;
        let want = tiny / (tiny * tiny + w.epsilon * w.epsilon).sqrt();
        assert_abs_diff_eq!(pull(tiny), want, epsilon = 1e-9);
        assert!(pull(tiny) < 0.011);
    }

    #[test]
    fn multiscale_gradients_scale_with_level_weights() {
        let sets = [random_set(15), random_set(15), random_set(15)];
        let w = LossWeights::default();
        let (_, grads) = multiscale_loss_grad(&sets, &w, TermMask::all()).unwrap();
        // Identical inputs per level: gradients must be proportional to the
        // level weights 4:2:1.
        let g0 = grads[0].stride1[0][0][(0, 0, 0)];
        let g1 = grads[1].stride1[0][0][(0, 0, 0)];
        let g2 = grads[2].stride1[0][0][(0, 0, 0)];
        assert_abs_diff_eq!(g0, 4.0 * g2, epsilon = 1e-12);
        assert_abs_diff_eq!(g1, 2.0 * g2, epsilon = 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let good = rand_tensor(&mut rng);
        let bad = Array3::zeros((2, 2, 3));
        let r = PredictionSet::new(
            std::array::from_fn(|_| std::array::from_fn(|_| good.clone())),
            [good.clone(), bad, good.clone()],
            std::array::from_fn(|_| good.clone()),
        );
        assert!(matches!(r, Err(LossError::ShapeMismatch { .. })));
    }

    #[test]
    fn weights_are_validated() {
        let mut w = LossWeights::default();
        w.lambda_td = -0.1;
        assert!(w.validate().is_err());
        let sets = [random_set(1), random_set(2), random_set(3)];
        assert!(multiscale_loss(&sets, &w, TermMask::all()).is_err());
    }
}
