//! Strictly proper scoring rules and their use as token-level losses.
//!
//! Two evaluation paths exist:
//!
//! * the exact path ([`score`], [`expected_score`], [`smoothed_score`],
//!   [`masked_log_smoothed_score`]) works on a [`ProbVector`] and keeps
//!   `-inf` as a legitimate value (the logarithmic score of a zero
//!   probability);
//! * the training path ([`token_loss`], [`loss_gradient_logits`]) works on
//!   logits, takes logs through `log_softmax` clamped below at
//!   `ln(p_min)` with `p_min = 1e-12`, and always yields finite values.
//!
//! Scores are utilities (higher is better); losses are their negation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{weighted, Scalar};
use crate::simplex::{self, entmax, power_sum, Logits, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Logarithmic,
    Brier,
    Spherical,
    AlphaPower,
    PseudoSpherical,
    /// `S(p, i) = p_i`. Improper; kept as a negative control.
    Linear,
}

impl RuleKind {
    pub fn uses_alpha(self) -> bool {
        matches!(self, RuleKind::AlphaPower | RuleKind::PseudoSpherical)
    }
}

impl std::str::FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "log" | "logarithmic" => RuleKind::Logarithmic,
            "brier" => RuleKind::Brier,
            "spherical" => RuleKind::Spherical,
            "alpha_power" | "power" => RuleKind::AlphaPower,
            "pseudo_spherical" => RuleKind::PseudoSpherical,
            "linear" => RuleKind::Linear,
            other => return Err(Error::Config(format!("unknown scoring rule `{other}`"))),
        })
    }
}

/// A scoring rule together with its `α` parameter (ignored unless the kind
/// is [`RuleKind::AlphaPower`] or [`RuleKind::PseudoSpherical`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRule")]
pub struct ScoreRule {
    pub kind: RuleKind,
    pub alpha: f64,
}

#[derive(Deserialize)]
struct RawRule {
    kind: RuleKind,
    #[serde(default = "default_alpha")]
    alpha: f64,
}

fn default_alpha() -> f64 {
    2.0
}

impl TryFrom<RawRule> for ScoreRule {
    type Error = Error;

    fn try_from(raw: RawRule) -> Result<Self> {
        ScoreRule::new(raw.kind, raw.alpha)
    }
}

impl ScoreRule {
    pub fn new(kind: RuleKind, alpha: f64) -> Result<Self> {
        if kind.uses_alpha() && !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::ParameterDomain {
                name: "alpha",
                value: alpha,
                expected: "alpha > 1",
            });
        }
        Ok(Self { kind, alpha })
    }

    pub const fn logarithmic() -> Self {
        Self { kind: RuleKind::Logarithmic, alpha: 2.0 }
    }

    pub const fn brier() -> Self {
        Self { kind: RuleKind::Brier, alpha: 2.0 }
    }

    pub const fn spherical() -> Self {
        Self { kind: RuleKind::Spherical, alpha: 2.0 }
    }

    pub const fn linear() -> Self {
        Self { kind: RuleKind::Linear, alpha: 2.0 }
    }

    pub fn alpha_power(alpha: f64) -> Result<Self> {
        Self::new(RuleKind::AlphaPower, alpha)
    }

    pub fn pseudo_spherical(alpha: f64) -> Result<Self> {
        Self::new(RuleKind::PseudoSpherical, alpha)
    }

    /// Short label used in reports, e.g. `brier` or `alpha_power(1.5)`.
    pub fn label(&self) -> String {
        let name = serde_json::to_value(self.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        if self.kind.uses_alpha() {
            format!("{name}({})", self.alpha)
        } else {
            name
        }
    }
}

/// Score smoothing settings: the smoothing factor `ε` and whether the
/// masked logarithmic term is added.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SmoothingConfig {
    #[serde(default)]
    pub eps: f64,
    #[serde(default)]
    pub mask_enhanced: bool,
}

impl SmoothingConfig {
    pub const NONE: SmoothingConfig = SmoothingConfig { eps: 0.0, mask_enhanced: false };

    pub fn new(eps: f64, mask_enhanced: bool) -> Result<Self> {
        let cfg = Self { eps, mask_enhanced };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::ParameterDomain {
                name: "eps",
                value: self.eps,
                expected: "0 <= eps <= 1",
            });
        }
        if self.mask_enhanced && self.eps == 0.0 {
            return Err(Error::Config(
                "mask-enhanced smoothing needs eps > 0 (the threshold eps/m would be 0)".into(),
            ));
        }
        Ok(())
    }
}

/// Per-distribution quantities shared by every `S(p, j)` of one `p`.
struct Prepared<'a, T> {
    rule: ScoreRule,
    p: &'a [T],
    alpha: T,
    /// Brier: `Σp²`; Spherical: `|p|`; α-power: `Σp^α`;
    /// pseudo-spherical: `(Σp^α)^((α−1)/α)`.
    global: T,
}

impl<'a, T: Scalar> Prepared<'a, T> {
    fn new(rule: ScoreRule, p: &'a [T]) -> Self {
        let alpha = T::lit(rule.alpha);
        let global = match rule.kind {
            RuleKind::Brier => p.iter().map(|&v| v * v).sum(),
            RuleKind::Spherical => simplex::euclidean_norm(p),
            RuleKind::AlphaPower => power_sum(p, alpha),
            RuleKind::PseudoSpherical => power_sum(p, alpha).powf((alpha - T::one()) / alpha),
            RuleKind::Logarithmic | RuleKind::Linear => T::zero(),
        };
        Self { rule, p, alpha, global }
    }

    fn at(&self, i: usize) -> T {
        let pi = self.p[i];
        let two = T::lit(2.0);
        match self.rule.kind {
            RuleKind::Logarithmic => {
                if pi > T::zero() {
                    pi.ln()
                } else {
                    T::neg_infinity()
                }
            }
            RuleKind::Brier => two * pi - self.global,
            RuleKind::Spherical => pi / self.global,
            RuleKind::AlphaPower => {
                let a = self.alpha;
                a * pi.powf(a - T::one()) - (a - T::one()) * self.global
            }
            RuleKind::PseudoSpherical => pi.powf(self.alpha - T::one()) / self.global,
            RuleKind::Linear => pi,
        }
    }

    fn sum_all(&self) -> T {
        (0..self.p.len()).map(|j| self.at(j)).sum()
    }
}

fn check_index(i: usize, m: usize) -> Result<()> {
    if i >= m {
        Err(Error::IndexOutOfRange { index: i, len: m })
    } else {
        Ok(())
    }
}

/// `S(p, i)`. The logarithmic score of a zero probability is `-inf`.
pub fn score<T: Scalar>(rule: ScoreRule, p: &ProbVector<T>, i: usize) -> Result<T> {
    check_index(i, p.len())?;
    Ok(Prepared::new(rule, p.values()).at(i))
}

/// Expected score `S(p, q) = Σ_i q_i S(p, i)` with `0·(−inf) = 0`.
pub fn expected_score<T: Scalar>(rule: ScoreRule, p: &ProbVector<T>, q: &ProbVector<T>) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), found: q.len() });
    }
    let prep = Prepared::new(rule, p.values());
    Ok(q.values()
        .iter()
        .enumerate()
        .map(|(i, &qi)| weighted(qi, prep.at(i)))
        .sum())
}

/// Smoothed score `S^ε(p, i) = (1−ε) S(p, i) + (ε/m) Σ_j S(p, j)`.
pub fn smoothed_score<T: Scalar>(
    rule: ScoreRule,
    cfg: SmoothingConfig,
    p: &ProbVector<T>,
    i: usize,
) -> Result<T> {
    cfg.validate()?;
    if cfg.mask_enhanced {
        return Err(Error::Config(
            "smoothed_score takes a plain smoothing config; use masked_log_smoothed_score".into(),
        ));
    }
    check_index(i, p.len())?;
    Ok(smoothed_unchecked(&Prepared::new(rule, p.values()), cfg.eps, i))
}

fn smoothed_unchecked<T: Scalar>(prep: &Prepared<'_, T>, eps: f64, i: usize) -> T {
    let eps_t = T::lit(eps);
    let m = T::from_usize(prep.p.len()).unwrap();
    let own = weighted(T::one() - eps_t, prep.at(i));
    if eps == 0.0 {
        return own;
    }
    own + eps_t / m * prep.sum_all()
}

/// `(ε/m) Σ_j 1{p_j < ε/m} log p_j`; `-inf` when a masked entry is zero.
fn mask_term<T: Scalar>(p: &[T], eps: f64) -> T {
    let m = T::from_usize(p.len()).unwrap();
    let weight = T::lit(eps) / m;
    let mut acc = T::zero();
    for &v in p {
        if v < weight {
            acc += if v > T::zero() { v.ln() } else { T::neg_infinity() };
        }
    }
    weighted(weight, acc)
}

/// Mask-enhanced smoothed score
/// `S^ε_log(p, i) = S^ε(p, i) + (ε/m) Σ_j 1{p_j < ε/m} log p_j`.
pub fn masked_log_smoothed_score<T: Scalar>(
    rule: ScoreRule,
    cfg: SmoothingConfig,
    p: &ProbVector<T>,
    i: usize,
) -> Result<T> {
    if !cfg.mask_enhanced {
        return Err(Error::Config("masked_log_smoothed_score needs mask_enhanced = true".into()));
    }
    cfg.validate()?;
    check_index(i, p.len())?;
    let prep = Prepared::new(rule, p.values());
    Ok(smoothed_unchecked(&prep, cfg.eps, i) + mask_term(p.values(), cfg.eps))
}

/// Whichever of `S`, `S^ε`, `S^ε_log` the config selects.
pub fn variant_score<T: Scalar>(
    rule: ScoreRule,
    cfg: SmoothingConfig,
    p: &ProbVector<T>,
    i: usize,
) -> Result<T> {
    if cfg.mask_enhanced {
        masked_log_smoothed_score(rule, cfg, p, i)
    } else {
        smoothed_score(rule, cfg, p, i)
    }
}

/// Expected value of the selected variant under `q`, evaluated directly from
/// the per-outcome definition (not through `q^ε`).
pub fn expected_variant_score<T: Scalar>(
    rule: ScoreRule,
    cfg: SmoothingConfig,
    p: &ProbVector<T>,
    q: &ProbVector<T>,
) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), found: q.len() });
    }
    cfg.validate()?;
    let prep = Prepared::new(rule, p.values());
    let penalty = if cfg.mask_enhanced { mask_term(p.values(), cfg.eps) } else { T::zero() };
    Ok(q.values()
        .iter()
        .enumerate()
        .map(|(i, &qi)| weighted(qi, smoothed_unchecked(&prep, cfg.eps, i) + penalty))
        .sum())
}

// ---------------------------------------------------------------------------
// training path
// ---------------------------------------------------------------------------

/// Per-token loss `-S_variant(softmax(z), i)` on the training path.
pub fn token_loss<T: Scalar>(rule: ScoreRule, cfg: SmoothingConfig, z: &Logits<T>, i: usize) -> Result<T> {
    cfg.validate()?;
    check_index(i, z.len())?;
    Ok(token_loss_and_grad(rule, cfg, z.values(), i, false).0)
}

/// Gradient of [`token_loss`] with respect to the logits.
///
/// Mask membership of the enhanced variant is fixed by the forward pass; the
/// gradient only flows through the log-probabilities of masked entries. For
/// the unsmoothed logarithmic rule this is exactly `softmax(z) − e_i`.
pub fn loss_gradient_logits<T: Scalar>(
    rule: ScoreRule,
    cfg: SmoothingConfig,
    z: &Logits<T>,
    i: usize,
) -> Result<Vec<T>> {
    cfg.validate()?;
    check_index(i, z.len())?;
    Ok(token_loss_and_grad(rule, cfg, z.values(), i, true).1)
}

/// Loss value and (optionally) its logit gradient. Inputs are assumed valid.
///
/// With `w = (1−ε) e_i + ε/m` the smoothed score is `F(p) = Σ_j w_j S(p, j)`.
/// Each rule provides `h_k = p_k ∂F/∂p_k`, and the chain rule through
/// softmax gives `∂F/∂z_k = h_k − p_k Σ_j h_j`.
pub(crate) fn token_loss_and_grad<T: Scalar>(
    rule: ScoreRule,
    cfg: SmoothingConfig,
    z: &[T],
    i: usize,
    want_grad: bool,
) -> (T, Vec<T>) {
    let m = z.len();
    let mf = T::from_usize(m).unwrap();
    let eps = T::lit(cfg.eps);
    let spread = eps / mf;
    let mut w = vec![spread; m];
    w[i] += T::one() - eps;
    let w_total: T = w.iter().copied().sum();

    let p = simplex::softmax_slice(z);
    let needs_log = rule.kind == RuleKind::Logarithmic || cfg.mask_enhanced;
    let floor = T::prob_floor().ln();
    let log_p = if needs_log { simplex::log_softmax_slice(z) } else { Vec::new() };
    let clamped = |j: usize| log_p[j] < floor;
    let clamped_log = |j: usize| log_p[j].max(floor);

    let two = T::lit(2.0);
    let alpha = T::lit(rule.alpha);
    let am1 = alpha - T::one();
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();

    let mut h = vec![T::zero(); if want_grad { m } else { 0 }];
    let value = match rule.kind {
        RuleKind::Logarithmic => {
            if want_grad {
                for k in 0..m {
                    if !clamped(k) {
                        h[k] = w[k];
                    }
                }
            }
            (0..m).map(|j| w[j] * clamped_log(j)).sum()
        }
        RuleKind::Brier => {
            let sq: T = p.iter().map(|&v| v * v).sum();
            if want_grad {
                for k in 0..m {
                    h[k] = two * w[k] * p[k] - two * w_total * p[k] * p[k];
                }
            }
            two * dot(&w, &p) - w_total * sq
        }
        RuleKind::Spherical => {
            let norm = simplex::euclidean_norm(&p);
            let wp = dot(&w, &p);
            if want_grad {
                let n3 = norm * norm * norm;
                for k in 0..m {
                    h[k] = w[k] * p[k] / norm - wp * p[k] * p[k] / n3;
                }
            }
            wp / norm
        }
        RuleKind::AlphaPower => {
            let pa: Vec<T> = p.iter().map(|&v| v.powf(am1)).collect();
            let total = dot(&pa, &p);
            if want_grad {
                let c = alpha * am1;
                for k in 0..m {
                    h[k] = c * (w[k] * pa[k] - w_total * pa[k] * p[k]);
                }
            }
            alpha * dot(&w, &pa) - am1 * w_total * total
        }
        RuleKind::PseudoSpherical => {
            let pa: Vec<T> = p.iter().map(|&v| v.powf(am1)).collect();
            let total = dot(&pa, &p);
            let norm = total.powf(am1 / alpha);
            let a = dot(&w, &pa);
            if want_grad {
                for k in 0..m {
                    h[k] = am1 * (w[k] * pa[k] / norm - a * pa[k] * p[k] / (norm * total));
                }
            }
            a / norm
        }
        RuleKind::Linear => {
            if want_grad {
                for k in 0..m {
                    h[k] = w[k] * p[k];
                }
            }
            dot(&w, &p)
        }
    };

    let mut value = value;
    if cfg.mask_enhanced {
        for j in 0..m {
            if p[j] < spread {
                value += spread * clamped_log(j);
                if want_grad && !clamped(j) {
                    h[j] += spread;
                }
            }
        }
    }

    if !want_grad {
        return (-value, Vec::new());
    }
    let h_total: T = h.iter().copied().sum();
    let grad = (0..m).map(|k| p[k] * h_total - h[k]).collect();
    (-value, grad)
}

/// Result of comparing the α-entmax loss with the affinely transformed
/// α-power loss at one logit vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivalenceGap {
    pub gap: f64,
    pub gold_in_support: bool,
}

/// `|L_entmax − (L_power + 1)/(α(α−1))|` at `p = entmax(z, α)`, where
/// `L_entmax = (p − e_x)·z + H_α(p)` and
/// `L_power = (α−1) Σ p_j^α − α p_x^(α−1)`. The two agree whenever `p_x > 0`.
pub fn entmax_power_equivalence_gap<T: Scalar>(z: &Logits<T>, x: usize, alpha: T) -> Result<EquivalenceGap> {
    check_index(x, z.len())?;
    let p = entmax(z, alpha)?;
    let pv = p.values();
    let zv = z.values();
    let entmax_loss = pv.iter().zip(zv).map(|(&a, &b)| a * b).sum::<T>() - zv[x]
        + simplex::tsallis_unchecked(pv, alpha);
    let am1 = alpha - T::one();
    let power_loss = am1 * power_sum(pv, alpha) - alpha * pv[x].powf(am1);
    let gap = (entmax_loss - (power_loss + T::one()) / (alpha * am1)).abs();
    Ok(EquivalenceGap { gap: gap.to_f64_lossy(), gold_in_support: pv[x] > T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::simplex::{smooth_distribution, softmax};
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVector<f64> {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn all_rules() -> Vec<ScoreRule> {
        vec![
            ScoreRule::logarithmic(),
            ScoreRule::brier(),
            ScoreRule::spherical(),
            ScoreRule::alpha_power(1.5).unwrap(),
            ScoreRule::alpha_power(2.5).unwrap(),
            ScoreRule::pseudo_spherical(1.5).unwrap(),
            ScoreRule::pseudo_spherical(3.0).unwrap(),
            ScoreRule::linear(),
        ]
    }

    /// Central finite differences of the training loss.
    fn fd_grad(rule: ScoreRule, cfg: SmoothingConfig, z: &[f64], i: usize, h: f64) -> Vec<f64> {
        (0..z.len())
            .map(|k| {
                let mut up = z.to_vec();
                let mut dn = z.to_vec();
                up[k] += h;
                dn[k] -= h;
                let fu = token_loss(rule, cfg, &Logits::new(up).unwrap(), i).unwrap();
                let fd = token_loss(rule, cfg, &Logits::new(dn).unwrap(), i).unwrap();
                (fu - fd) / (2.0 * h)
            })
            .collect()
    }

    fn random_simplex(rng: &mut SplitMix64, m: usize) -> ProbVector<f64> {
        let raw: Vec<f64> = (0..m).map(|_| -(1.0 - rng.next_f64()).ln()).collect();
        let t: f64 = raw.iter().sum();
        pv(&raw.iter().map(|v| v / t).collect::<Vec<_>>())
    }

    #[test]
    fn score_examples() {
        let u4 = ProbVector::<f64>::uniform(4).unwrap();
        for i in 0..4 {
            assert!((score(ScoreRule::brier(), &u4, i).unwrap() - 0.25).abs() < 1e-15);
        }
        let e = ProbVector::<f64>::one_hot(5, 3).unwrap();
        assert_eq!(score(ScoreRule::spherical(), &e, 3).unwrap(), 1.0);

        let ps3 = ScoreRule::pseudo_spherical(3.0).unwrap();
        let want = 4f64.powf(-2.0 / 3.0);
        for i in 0..4 {
            assert!((score(ps3, &u4, i).unwrap() - want).abs() < 1e-14);
        }
        assert!((want - 0.39685).abs() < 1e-5);
    }

    #[test]
    fn log_score_of_zero_is_neg_infinity() {
        let e = ProbVector::<f64>::one_hot(3, 0).unwrap();
        assert_eq!(score(ScoreRule::logarithmic(), &e, 1).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn index_out_of_range() {
        let u = ProbVector::<f64>::uniform(3).unwrap();
        assert!(matches!(
            score(ScoreRule::brier(), &u, 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn rule_alpha_validated() {
        assert!(ScoreRule::alpha_power(1.0).is_err());
        assert!(ScoreRule::pseudo_spherical(0.5).is_err());
        assert!(ScoreRule::new(RuleKind::Brier, 0.0).is_ok());
        let bad: std::result::Result<ScoreRule, _> =
            serde_json::from_str(r#"{"kind":"alpha_power","alpha":0.9}"#);
        assert!(bad.is_err());
        let ok: ScoreRule = serde_json::from_str(r#"{"kind":"spherical"}"#).unwrap();
        assert_eq!(ok, ScoreRule::spherical());
    }

    #[test]
    fn table_one_values() {
        let q = ProbVector::<f64>::one_hot(100, 0).unwrap();
        let qe = smooth_distribution(&q, 0.1).unwrap();
        let ex = |r, p: &ProbVector<f64>| expected_score(r, p, &qe).unwrap();
        assert!((ex(ScoreRule::brier(), &q) - 0.8020).abs() < 5e-5);
        assert!((ex(ScoreRule::spherical(), &qe) - 0.9011).abs() < 5e-5);
        assert_eq!(ex(ScoreRule::logarithmic(), &q), f64::NEG_INFINITY);
    }

    #[test]
    fn expected_score_dimension_mismatch() {
        let a = ProbVector::<f64>::uniform(3).unwrap();
        let b = ProbVector::<f64>::uniform(4).unwrap();
        assert!(matches!(
            expected_score(ScoreRule::brier(), &a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn smoothed_score_examples() {
        let p = pv(&[0.7, 0.3]);
        let none = SmoothingConfig::NONE;
        for r in all_rules() {
            for i in 0..2 {
                assert_eq!(smoothed_score(r, none, &p, i).unwrap(), score(r, &p, i).unwrap());
            }
            let full = SmoothingConfig::new(1.0, false).unwrap();
            let a = smoothed_score(r, full, &p, 0).unwrap();
            let b = smoothed_score(r, full, &p, 1).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
        let half = SmoothingConfig::new(0.5, false).unwrap();
        let v = smoothed_score(ScoreRule::brier(), half, &p, 0).unwrap();
        assert!((v - 0.62).abs() < 1e-14, "{v}");
    }

    #[test]
    fn masked_score_examples() {
        let cfg = SmoothingConfig::new(0.2, true).unwrap();
        let plain = SmoothingConfig::new(0.2, false).unwrap();

        let p = pv(&[0.6, 0.4]);
        assert_eq!(
            masked_log_smoothed_score(ScoreRule::brier(), cfg, &p, 0).unwrap(),
            smoothed_score(ScoreRule::brier(), plain, &p, 0).unwrap()
        );

        let p = pv(&[0.95, 0.05]);
        let masked = masked_log_smoothed_score(ScoreRule::brier(), cfg, &p, 0).unwrap();
        let smooth = smoothed_score(ScoreRule::brier(), plain, &p, 0).unwrap();
        assert!((masked - (smooth - 0.29957)).abs() < 1e-5);
        assert!((masked - smooth - 0.1 * 0.05f64.ln()).abs() < 1e-15);

        let p = pv(&[1.0, 0.0]);
        assert_eq!(
            masked_log_smoothed_score(ScoreRule::spherical(), cfg, &p, 0).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn masked_requires_positive_eps() {
        assert!(matches!(SmoothingConfig::new(0.0, true), Err(Error::Config(_))));
        let bad = SmoothingConfig { eps: 0.0, mask_enhanced: true };
        let p = pv(&[0.5, 0.5]);
        assert!(masked_log_smoothed_score(ScoreRule::brier(), bad, &p, 0).is_err());
        assert!(SmoothingConfig::new(1.2, false).is_err());
    }

    #[test]
    fn log_gradient_is_p_minus_onehot() {
        let z = Logits::new(vec![0.0; 4]).unwrap();
        let g = loss_gradient_logits(ScoreRule::logarithmic(), SmoothingConfig::NONE, &z, 2).unwrap();
        assert_eq!(g, vec![0.25, 0.25, -0.75, 0.25]);

        let mut rng = SplitMix64::new(5);
        let z: Vec<f64> = (0..10).map(|_| 2.0 * rng.normal()).collect();
        let p = softmax(&Logits::new(z.clone()).unwrap()).unwrap();
        let g = loss_gradient_logits(ScoreRule::logarithmic(), SmoothingConfig::NONE, &Logits::new(z).unwrap(), 7)
            .unwrap();
        for k in 0..10 {
            let want = p.values()[k] - if k == 7 { 1.0 } else { 0.0 };
            assert!((g[k] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn brier_gradient_vanishes_at_saturation() {
        let z = Logits::new(vec![-40.0, 40.0, -40.0]).unwrap();
        let g: Vec<f64> = loss_gradient_logits(ScoreRule::brier(), SmoothingConfig::NONE, &z, 1).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(99);
        let cfgs = [
            SmoothingConfig::NONE,
            SmoothingConfig::new(0.1, false).unwrap(),
            SmoothingConfig::new(0.1, true).unwrap(),
        ];
        for rule in all_rules() {
            for cfg in cfgs {
                for m in [2usize, 8, 32] {
                    for _ in 0..5 {
                        let z: Vec<f64> = (0..m).map(|_| 1.5 * rng.normal()).collect();
                        let i = rng.below(m as u64) as usize;
                        let a = loss_gradient_logits(rule, cfg, &Logits::new(z.clone()).unwrap(), i).unwrap();
                        let n = fd_grad(rule, cfg, &z, i, 1e-5);
                        for k in 0..m {
                            if a[k].abs() > 1e-8 {
                                let rel = (a[k] - n[k]).abs() / a[k].abs().max(n[k].abs());
                                assert!(rel < 1e-4, "{} {cfg:?} m={m} k={k}: {} vs {}", rule.label(), a[k], n[k]);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn token_loss_matches_exact_path() {
        let z = Logits::new(vec![0.3, -1.2, 2.0, 0.1]).unwrap();
        let p = softmax(&z).unwrap();
        let cfg = SmoothingConfig::new(0.1, true).unwrap();
        for rule in all_rules() {
            for i in 0..4 {
                let train: f64 = token_loss(rule, cfg, &z, i).unwrap();
                let exact = variant_score(rule, cfg, &p, i).unwrap();
                assert!((train + exact).abs() < 1e-12, "{}", rule.label());
            }
        }
    }

    #[test]
    fn equivalence_examples() {
        let mut rng = SplitMix64::new(17);
        let mut checked = 0;
        while checked < 20 {
            let z = Logits::new((0..6).map(|_| rng.normal()).collect()).unwrap();
            let x = rng.below(6) as usize;
            let r = entmax_power_equivalence_gap(&z, x, 2.0).unwrap();
            if r.gold_in_support {
                assert!(r.gap < 1e-8);
                checked += 1;
            }
        }
        let z = Logits::new(vec![0.4; 7]).unwrap();
        for x in 0..7 {
            let r = entmax_power_equivalence_gap(&z, x, 1.5).unwrap();
            assert!(r.gold_in_support && r.gap < 1e-8);
        }
        let r = entmax_power_equivalence_gap(&Logits::new(vec![10.0, 0.0]).unwrap(), 1, 2.0).unwrap();
        assert!(!r.gold_in_support);
    }

    #[test]
    fn rule_kind_parsing() {
        assert_eq!("log".parse::<RuleKind>().unwrap(), RuleKind::Logarithmic);
        assert_eq!("pseudo-spherical".parse::<RuleKind>().unwrap(), RuleKind::PseudoSpherical);
        assert!("hinge".parse::<RuleKind>().is_err());
        assert_eq!(ScoreRule::alpha_power(1.5).unwrap().label(), "alpha_power(1.5)");
    }

    fn arb_simplex() -> impl Strategy<Value = ProbVector<f64>> {
        prop::collection::vec(0.001f64..1.0, 2..12).prop_map(|raw| {
            let t: f64 = raw.iter().sum();
            ProbVector::new(raw.iter().map(|v| v / t).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn argmax_invariance(p in arb_simplex(), eps in 0.0f64..1.0, mask in any::<bool>()) {
            let mode = p.argmax();
            let mut sorted = p.values().to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assume!(sorted[0] - sorted[1] > 1e-9);
            prop_assume!(!(mask && eps == 0.0));
            // at eps = 1 every outcome scores the same
            prop_assume!(eps < 0.999);
            let cfg = SmoothingConfig::new(eps, mask).unwrap();
            for rule in all_rules() {
                let vals: Vec<f64> = (0..p.len()).map(|i| variant_score(rule, cfg, &p, i).unwrap()).collect();
                prop_assert_eq!(crate::simplex::argmax(&vals), mode, "{}", rule.label());
            }
        }

        #[test]
        fn special_cases_collapse(p in arb_simplex(), seed in any::<u64>()) {
            let i = (seed % p.len() as u64) as usize;
            let b = score(ScoreRule::brier(), &p, i).unwrap();
            let a2 = score(ScoreRule::alpha_power(2.0).unwrap(), &p, i).unwrap();
            prop_assert!((a2 - b).abs() < 1e-12);
            let s = score(ScoreRule::spherical(), &p, i).unwrap();
            let ps2 = score(ScoreRule::pseudo_spherical(2.0).unwrap(), &p, i).unwrap();
            prop_assert!((ps2 - s).abs() < 1e-12);
        }

        #[test]
        fn expected_smoothed_equals_score_at_smoothed_q(seed in any::<u64>(), m in 2usize..10, eps in 0.0f64..=1.0) {
            let mut rng = SplitMix64::new(seed);
            let p = random_simplex(&mut rng, m);
            let q = random_simplex(&mut rng, m);
            let cfg = SmoothingConfig::new(eps, false).unwrap();
            let qe = smooth_distribution(&q, eps).unwrap();
            for rule in all_rules() {
                let lhs = expected_variant_score(rule, cfg, &p, &q).unwrap();
                let rhs = expected_score(rule, &p, &qe).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-12, "{}: {} vs {}", rule.label(), lhs, rhs);
            }
        }

        #[test]
        fn masked_dominance(seed in any::<u64>(), m in 2usize..10, eps in 0.01f64..1.0) {
            let mut rng = SplitMix64::new(seed);
            let p = random_simplex(&mut rng, m);
            let q = random_simplex(&mut rng, m);
            let plain = SmoothingConfig::new(eps, false).unwrap();
            let masked = SmoothingConfig::new(eps, true).unwrap();
            let any_masked = p.values().iter().any(|&v| v < eps / m as f64);
            for rule in all_rules() {
                let a = expected_variant_score(rule, masked, &p, &q).unwrap();
                let b = expected_variant_score(rule, plain, &p, &q).unwrap();
                prop_assert!(a <= b);
                if !any_masked {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn bounded_rules(p in arb_simplex(), seed in any::<u64>()) {
            let i = (seed % p.len() as u64) as usize;
            let b = score(ScoreRule::brier(), &p, i).unwrap();
            prop_assert!((-1.0..=1.0).contains(&b));
            let s = score(ScoreRule::spherical(), &p, i).unwrap();
            prop_assert!((0.0..=1.0 + 1e-15).contains(&s));
        }
    }

    #[test]
    fn log_score_unbounded_below() {
        let mut last = 0.0;
        for k in 1..20 {
            let tiny = 10f64.powi(-k);
            let p = pv(&[1.0 - tiny, tiny]);
            let s = score(ScoreRule::logarithmic(), &p, 1).unwrap();
            assert!(s < last);
            last = s;
        }
        assert!(last < -40.0);
    }
}
