//! Rényi-DP accounting: per-step curves, composition, subsampling
//! amplification, and conversion to (ε, δ)-DP.
//!
//! The decoder release adds `N(0, (σC)²I)` to a gradient average whose
//! replace-one sensitivity is `2C`, so one step is `(α, 2α/σ²)`-RDP. When the
//! step only touches a uniformly chosen one of `K` disjoint partitions, the
//! per-record participation rate is `q = 1/K` and the integer-order binomial
//! bound below tightens the per-step curve. `eps_for_training` composes `T`
//! steps under both views and reports the smaller conversion.

use crate::error::{Error, Result};

/// Default conversion grid: integer orders 2 through 256.
pub fn default_order_grid() -> Vec<f64> {
    (2..=256).map(|a| a as f64).collect()
}

/// An RDP guarantee sampled on a grid of orders: the mechanism satisfies
/// (α, ε(α))-RDP at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    orders: Vec<f64>,
    epsilons: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<f64>, epsilons: Vec<f64>) -> Result<Self> {
        if orders.is_empty() {
            return Err(Error::invalid_parameter("orders", "grid must be nonempty"));
        }
        if orders.len() != epsilons.len() {
            return Err(Error::GridMismatch(format!(
                "{} orders but {} epsilon values",
                orders.len(),
                epsilons.len()
            )));
        }
        for w in orders.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::invalid_parameter(
                    "orders",
                    format!("grid must be strictly increasing, got {} then {}", w[0], w[1]),
                ));
            }
        }
        for &a in &orders {
            if !(a > 1.0) || !a.is_finite() {
                return Err(Error::InvalidOrder(a));
            }
        }
        for &e in &epsilons {
            if e.is_nan() || e < 0.0 {
                return Err(Error::invalid_parameter(
                    "epsilons",
                    format!("RDP values must be nonnegative, got {e}"),
                ));
            }
        }
        Ok(RdpCurve { orders, epsilons })
    }

    /// Evaluate `f` at every order of the grid.
    pub fn from_fn(orders: Vec<f64>, f: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        let epsilons = orders.iter().map(|&a| f(a)).collect::<Result<Vec<_>>>()?;
        RdpCurve::new(orders, epsilons)
    }

    pub fn zero(orders: Vec<f64>) -> Result<Self> {
        let n = orders.len();
        RdpCurve::new(orders, vec![0.0; n])
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    fn check_same_grid(&self, other: &RdpCurve) -> Result<()> {
        if self.orders != other.orders {
            return Err(Error::GridMismatch(
                "curves are sampled on different order grids".into(),
            ));
        }
        Ok(())
    }

    /// Pointwise sum (sequential composition of the two mechanisms).
    pub fn add_assign(&mut self, other: &RdpCurve) -> Result<()> {
        self.check_same_grid(other)?;
        for (e, &o) in self.epsilons.iter_mut().zip(&other.epsilons) {
            *e += o;
        }
        Ok(())
    }

    /// Pointwise minimum of two valid bounds, itself a valid bound.
    pub fn pointwise_min(&self, other: &RdpCurve) -> Result<RdpCurve> {
        self.check_same_grid(other)?;
        let eps = self
            .epsilons
            .iter()
            .zip(&other.epsilons)
            .map(|(&a, &b)| a.min(b))
            .collect();
        RdpCurve::new(self.orders.clone(), eps)
    }
}

/// Noise scale and clipping bound of the decoder release, plus the target δ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    pub clip_bound: f64,
    pub noise_multiplier: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_bound > 0.0) || !self.clip_bound.is_finite() {
            return Err(Error::invalid_parameter(
                "clip_bound",
                format!("must be finite and positive, got {}", self.clip_bound),
            ));
        }
        if !(self.noise_multiplier > 0.0) || !self.noise_multiplier.is_finite() {
            return Err(Error::invalid_parameter(
                "noise_multiplier",
                format!("must be finite and positive, got {}", self.noise_multiplier),
            ));
        }
        check_delta(self.delta)?;
        Ok(())
    }
}

/// Cumulative privacy loss after a number of released steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpend {
    pub steps: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub best_order: f64,
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid_parameter(
            "delta",
            format!("must lie strictly inside (0, 1), got {delta}"),
        ));
    }
    Ok(())
}

/// RDP of the Gaussian mechanism: α·Δ²/(2σ²), evaluated as 0.5·α·r² with
/// r = Δ/σ so that rescaling sensitivity and noise by a common factor that
/// divides exactly leaves the result bitwise unchanged.
pub fn gaussian_rdp(alpha: f64, noise_std: f64, sensitivity: f64) -> Result<f64> {
    if !(alpha > 1.0) || alpha.is_nan() {
        return Err(Error::InvalidOrder(alpha));
    }
    if !(noise_std > 0.0) || !noise_std.is_finite() {
        return Err(Error::invalid_parameter(
            "noise_std",
            format!("must be finite and positive, got {noise_std}"),
        ));
    }
    if sensitivity < 0.0 || sensitivity.is_nan() {
        return Err(Error::invalid_parameter(
            "sensitivity",
            format!("must be nonnegative, got {sensitivity}"),
        ));
    }
    let r = sensitivity / noise_std;
    Ok(0.5 * alpha * r * r)
}

/// RDP of one decoder update: 2α/σ². The released average has sensitivity 2C
/// and noise std σC, so this equals `gaussian_rdp(α, σ·C, 2·C)` for every C.
pub fn decoder_step_rdp(alpha: f64, sigma: f64) -> Result<f64> {
    gaussian_rdp(alpha, sigma, 2.0)
}

/// Integer-order binomial bound for the subsampled Gaussian mechanism at
/// sampling rate `q` and effective noise multiplier `z` (noise std divided by
/// sensitivity):
///
/// ```text
/// eps(α) = (α-1)⁻¹ · ln Σ_{j=0}^{α} C(α,j) (1-q)^{α-j} q^j exp(j(j-1)/(2z²))
/// ```
///
/// evaluated in log space. q = 0 returns 0 (the data is never touched);
/// q = 1 returns the plain Gaussian value α/(2z²).
pub fn subsampled_gaussian_rdp(alpha: f64, q: f64, z: f64) -> Result<f64> {
    if !(alpha > 1.0) || alpha.is_nan() {
        return Err(Error::InvalidOrder(alpha));
    }
    if alpha.fract() != 0.0 || alpha < 2.0 || alpha > 1e6 {
        return Err(Error::UnsupportedOrder(alpha));
    }
    if !(0.0..=1.0).contains(&q) || q.is_nan() {
        return Err(Error::invalid_parameter(
            "q",
            format!("sampling rate must lie in [0, 1], got {q}"),
        ));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::invalid_parameter(
            "z",
            format!("effective noise multiplier must be finite and positive, got {z}"),
        ));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return gaussian_rdp(alpha, z, 1.0);
    }
    let a = alpha as usize;
    // ln k! for k = 0..=a.
    let mut lnfact = vec![0.0; a + 1];
    for k in 1..=a {
        lnfact[k] = lnfact[k - 1] + (k as f64).ln();
    }
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let inv_2z2 = 1.0 / (2.0 * z * z);
    let terms: Vec<f64> = (0..=a)
        .map(|j| {
            let jf = j as f64;
            lnfact[a] - lnfact[j] - lnfact[a - j]
                + (a - j) as f64 * ln_1mq
                + jf * ln_q
                + jf * (jf - 1.0) * inv_2z2
        })
        .collect();
    let log_sum = log_sum_exp(&terms);
    // The j-sum dominates Σ C(α,j)(1-q)^{α-j} q^j = 1, so the log is ≥ 0 up
    // to rounding; clamp stray negative rounding error.
    Ok((log_sum / (alpha - 1.0)).max(0.0))
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|&t| (t - m).exp()).sum::<f64>().ln()
}

/// Sequential composition: pointwise sum over a shared order grid, folded in
/// list order.
pub fn compose_rdp(curves: &[RdpCurve]) -> Result<RdpCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::invalid_parameter("curves", "cannot compose an empty list"))?;
    let mut acc = first.clone();
    for c in &curves[1..] {
        acc.add_assign(c)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConversion {
    pub epsilon: f64,
    pub best_order: f64,
}

/// Convert an RDP curve to (ε, δ)-DP: minimize ε(α) + ln(1/δ)/(α-1) over the
/// grid. Ties keep the smallest order.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<DpConversion> {
    check_delta(delta)?;
    let ln_inv_delta = -delta.ln();
    let mut best: Option<DpConversion> = None;
    for (&a, &e) in curve.orders().iter().zip(curve.epsilons()) {
        let eps = e + ln_inv_delta / (a - 1.0);
        if best.map_or(true, |b| eps < b.epsilon) {
            best = Some(DpConversion { epsilon: eps, best_order: a });
        }
    }
    best.ok_or_else(|| Error::invalid_parameter("curve", "cannot convert an empty curve"))
}

/// T-fold composition of `step`, summed in step order so the result is
/// bitwise identical to `compose_rdp(&vec![step; T])`.
fn compose_steps(step: &RdpCurve, steps: u64) -> Result<RdpCurve> {
    let mut acc = step.clone();
    for _ in 1..steps {
        acc.add_assign(step)?;
    }
    Ok(acc)
}

/// Privacy of a full training run whose every step updates the decoder from a
/// uniformly chosen one of `k_pool` disjoint partitions.
pub fn eps_for_training(k_pool: usize, sigma: f64, steps: u64, delta: f64) -> Result<PrivacySpend> {
    if k_pool == 0 {
        return Err(Error::invalid_parameter("k_pool", "need at least one partition"));
    }
    eps_for_training_at_rate(1.0 / k_pool as f64, sigma, steps, delta)
}

/// As `eps_for_training`, with an explicit per-record participation rate.
/// Returns the smaller of the amplified conversion and the unamplified
/// fallback (T copies of the plain decoder step).
pub fn eps_for_training_at_rate(
    q: f64,
    sigma: f64,
    steps: u64,
    delta: f64,
) -> Result<PrivacySpend> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid_parameter(
            "sigma",
            format!("must be finite and positive, got {sigma}"),
        ));
    }
    check_delta(delta)?;
    if !(0.0..=1.0).contains(&q) || q.is_nan() {
        return Err(Error::invalid_parameter(
            "q",
            format!("sampling rate must lie in [0, 1], got {q}"),
        ));
    }
    let grid = default_order_grid();
    if steps == 0 {
        // Nothing has been released; ε = 0 by definition. The reported order
        // is the top of the grid, where the conversion term is smallest.
        return Ok(PrivacySpend {
            steps: 0,
            epsilon: 0.0,
            delta,
            best_order: *grid.last().expect("grid nonempty"),
        });
    }
    let z = sigma / 2.0;
    let amplified = RdpCurve::from_fn(grid.clone(), |a| subsampled_gaussian_rdp(a, q, z))?;
    let fallback = RdpCurve::from_fn(grid, |a| decoder_step_rdp(a, sigma))?;
    let conv_amp = rdp_to_dp(&compose_steps(&amplified, steps)?, delta)?;
    let conv_fall = rdp_to_dp(&compose_steps(&fallback, steps)?, delta)?;
    let best = if conv_amp.epsilon <= conv_fall.epsilon {
        conv_amp
    } else {
        conv_fall
    };
    Ok(PrivacySpend {
        steps,
        epsilon: best.epsilon,
        delta,
        best_order: best.best_order,
    })
}

// ----------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    const LN_1E5: f64 = 11.512925464970229;

    #[test]
    fn gaussian_rdp_matches_closed_form() {
        assert_eq!(gaussian_rdp(2.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(gaussian_rdp(8.0, 4.0, 2.0).unwrap(), 1.0);
        assert_eq!(gaussian_rdp(17.0, 3.0, 0.0).unwrap(), 0.0);
        assert!(matches!(gaussian_rdp(1.0, 1.0, 1.0), Err(Error::InvalidOrder(_))));
        assert!(gaussian_rdp(2.0, 0.0, 1.0).is_err());
        assert!(gaussian_rdp(2.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_rdp_is_linear_in_alpha_and_quadratic_in_ratio() {
        let base = gaussian_rdp(2.0, 3.0, 1.5).unwrap();
        for k in 2..10 {
            let a = k as f64;
            let v = gaussian_rdp(2.0 * a, 3.0, 1.5).unwrap();
            assert!((v - a * base).abs() <= 1e-12 * v.abs());
        }
        let doubled = gaussian_rdp(2.0, 3.0, 3.0).unwrap();
        assert!((doubled - 4.0 * base).abs() <= 1e-12 * doubled.abs());
    }

    #[test]
    fn decoder_step_matches_direct_formula_and_scaled_gaussian() {
        assert_eq!(decoder_step_rdp(4.0, 2.0).unwrap(), 2.0);
        assert_eq!(decoder_step_rdp(2.0, 1.0).unwrap(), 4.0);
        // Sensitivity 2C with noise std σC collapses to the same ratio for
        // clip bounds whose products round to exact rescalings.
        for &c in &[0.1, 1.0, 10.0] {
            for &sigma in &[0.5, 1.0, 2.0, 8.0] {
                let direct = decoder_step_rdp(33.0, sigma).unwrap();
                let scaled = gaussian_rdp(33.0, sigma * c, 2.0 * c).unwrap();
                assert_eq!(direct.to_bits(), scaled.to_bits(), "c={c} sigma={sigma}");
            }
        }
    }

    #[test]
    fn subsampled_hand_value_and_edge_cases() {
        // q=0.01, z=1, α=2: ln(0.9801 + 0.0198 + 0.0001·e) / 1.
        let v = subsampled_gaussian_rdp(2.0, 0.01, 1.0).unwrap();
        let expect = 0.0001718134220745314;
        assert!((v - expect).abs() <= 1e-12 * expect, "{v}");
        for a in [2.0, 3.0, 17.0] {
            assert_eq!(subsampled_gaussian_rdp(a, 0.0, 2.0).unwrap(), 0.0);
        }
        // q=1 falls back to the plain Gaussian mechanism, bitwise.
        let full = subsampled_gaussian_rdp(7.0, 1.0, 1.5).unwrap();
        let plain = gaussian_rdp(7.0, 1.5, 1.0).unwrap();
        assert_eq!(full.to_bits(), plain.to_bits());
    }

    #[test]
    fn subsampled_rejects_bad_orders_and_rates() {
        assert!(matches!(
            subsampled_gaussian_rdp(2.5, 0.1, 1.0),
            Err(Error::UnsupportedOrder(_))
        ));
        assert!(matches!(
            subsampled_gaussian_rdp(1.0, 0.1, 1.0),
            Err(Error::InvalidOrder(_))
        ));
        assert!(subsampled_gaussian_rdp(2.0, -0.1, 1.0).is_err());
        assert!(subsampled_gaussian_rdp(2.0, 1.1, 1.0).is_err());
        assert!(subsampled_gaussian_rdp(2.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn subsampled_is_monotone_in_q_and_alpha_antitone_in_z() {
        let qs = [0.0, 0.001, 0.01, 0.05, 0.2, 0.5, 0.9, 1.0];
        let alphas = [2.0, 3.0, 4.0, 8.0, 16.0, 64.0];
        let zs = [0.5, 1.0, 2.0, 4.0, 16.0];
        for &a in &alphas {
            for &z in &zs {
                let mut prev: f64 = -1.0;
                for &q in &qs {
                    let v = subsampled_gaussian_rdp(a, q, z).unwrap();
                    assert!(v >= prev - 1e-15 * prev.abs(), "q sweep a={a} z={z} q={q}");
                    prev = v;
                }
            }
        }
        for &q in &qs[1..] {
            for &z in &zs {
                let mut prev: f64 = -1.0;
                for &a in &alphas {
                    let v = subsampled_gaussian_rdp(a, q, z).unwrap();
                    assert!(v >= prev - 1e-15 * prev.abs(), "alpha sweep q={q} z={z}");
                    prev = v;
                }
            }
        }
        for &q in &qs {
            for &a in &alphas {
                let mut prev = f64::INFINITY;
                for &z in &zs {
                    let v = subsampled_gaussian_rdp(a, q, z).unwrap();
                    assert!(v <= prev + 1e-15 * prev.abs(), "z sweep q={q} a={a}");
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn curve_validation() {
        assert!(RdpCurve::new(vec![], vec![]).is_err());
        assert!(RdpCurve::new(vec![2.0, 2.0], vec![0.0, 0.0]).is_err());
        assert!(RdpCurve::new(vec![3.0, 2.0], vec![0.0, 0.0]).is_err());
        assert!(RdpCurve::new(vec![1.0, 2.0], vec![0.0, 0.0]).is_err());
        assert!(RdpCurve::new(vec![2.0], vec![-0.5]).is_err());
        assert!(RdpCurve::new(vec![2.0], vec![0.0, 1.0]).is_err());
        assert!(RdpCurve::new(vec![2.0, 3.0], vec![0.5, 0.25]).is_ok());
    }

    #[test]
    fn compose_sums_pointwise_and_rejects_mismatched_grids() {
        let a = RdpCurve::new(vec![2.0, 4.0], vec![0.5, 1.0]).unwrap();
        let b = RdpCurve::new(vec![2.0, 4.0], vec![0.7, 0.25]).unwrap();
        let c = compose_rdp(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.epsilons(), &[1.2, 1.25]);
        // Commutative pointwise.
        let c2 = compose_rdp(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(c.epsilons(), c2.epsilons());
        // Zero curve is the identity.
        let z = RdpCurve::zero(vec![2.0, 4.0]).unwrap();
        let with_zero = compose_rdp(&[a.clone(), z]).unwrap();
        assert_eq!(with_zero.epsilons(), a.epsilons());
        let other_grid = RdpCurve::new(vec![2.0, 5.0], vec![0.1, 0.1]).unwrap();
        assert!(matches!(
            compose_rdp(&[a, other_grid]),
            Err(Error::GridMismatch(_))
        ));
        assert!(compose_rdp(&[]).is_err());
    }

    #[test]
    fn compose_of_t_copies_tracks_t_times_curve() {
        let step = RdpCurve::from_fn(default_order_grid(), |a| decoder_step_rdp(a, 3.0)).unwrap();
        for t in [1u64, 2, 10, 137] {
            let composed = compose_steps(&step, t).unwrap();
            for (i, &e) in composed.epsilons().iter().enumerate() {
                let direct = t as f64 * step.epsilons()[i];
                assert!(
                    (e - direct).abs() <= 1e-12 * direct.max(1.0),
                    "t={t}, order index {i}"
                );
            }
        }
    }

    #[test]
    fn rdp_to_dp_single_point_matches_hand_value() {
        let c = RdpCurve::new(vec![2.0], vec![1.0]).unwrap();
        let conv = rdp_to_dp(&c, 1e-5).unwrap();
        assert!((conv.epsilon - (1.0 + LN_1E5)).abs() < 1e-12);
        assert_eq!(conv.best_order, 2.0);
        assert!(rdp_to_dp(&c, 0.0).is_err());
        assert!(rdp_to_dp(&c, 1.0).is_err());
    }

    #[test]
    fn rdp_to_dp_zero_curve_picks_largest_order() {
        let c = RdpCurve::zero(default_order_grid()).unwrap();
        let conv = rdp_to_dp(&c, 1e-5).unwrap();
        assert_eq!(conv.best_order, 256.0);
        assert!((conv.epsilon - LN_1E5 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn rdp_to_dp_matches_exhaustive_search() {
        let orders: Vec<f64> = (2..=64).map(|a| a as f64).collect();
        let eps: Vec<f64> = orders.iter().map(|&a| 0.01 * a).collect();
        let c = RdpCurve::new(orders.clone(), eps.clone()).unwrap();
        let conv = rdp_to_dp(&c, 1e-5).unwrap();
        let mut best = f64::INFINITY;
        let mut best_a = 0.0;
        for (&a, &e) in orders.iter().zip(&eps) {
            let v = e + LN_1E5 / (a - 1.0);
            if v < best {
                best = v;
                best_a = a;
            }
        }
        assert_eq!(conv.epsilon.to_bits(), best.to_bits());
        assert_eq!(conv.best_order, best_a);
    }

    #[test]
    fn rdp_to_dp_never_increases_when_a_curve_point_decreases() {
        let orders = default_order_grid();
        let eps: Vec<f64> = orders.iter().map(|&a| 0.02 * a).collect();
        let base = rdp_to_dp(&RdpCurve::new(orders.clone(), eps.clone()).unwrap(), 1e-5).unwrap();
        for i in (0..orders.len()).step_by(17) {
            let mut lowered = eps.clone();
            lowered[i] *= 0.5;
            let conv =
                rdp_to_dp(&RdpCurve::new(orders.clone(), lowered).unwrap(), 1e-5).unwrap();
            assert!(conv.epsilon <= base.epsilon + 1e-15);
        }
    }

    #[test]
    fn training_spend_zero_steps_is_exactly_zero() {
        let spend = eps_for_training(20, 8.0, 0, 1e-5).unwrap();
        assert_eq!(spend.epsilon, 0.0);
        assert_eq!(spend.steps, 0);
        assert_eq!(spend.delta, 1e-5);
    }

    #[test]
    fn training_spend_at_k1_equals_composed_decoder_curve() {
        for &(sigma, t) in &[(2.0, 1u64), (2.0, 40), (3.7, 11), (8.0, 500)] {
            let spend = eps_for_training(1, sigma, t, 1e-5).unwrap();
            let step =
                RdpCurve::from_fn(default_order_grid(), |a| decoder_step_rdp(a, sigma)).unwrap();
            let composed = compose_rdp(&vec![step; t as usize]).unwrap();
            let conv = rdp_to_dp(&composed, 1e-5).unwrap();
            assert_eq!(spend.epsilon.to_bits(), conv.epsilon.to_bits(), "sigma={sigma} t={t}");
            assert_eq!(spend.best_order, conv.best_order);
        }
    }

    #[test]
    fn training_spend_frozen_reference_points() {
        // Independent reimplementation of the bound (Python mpmath-checked):
        // K=1, σ=2, T=1, δ=1e-5 and the desk configuration.
        let single = eps_for_training(1, 2.0, 1, 1e-5).unwrap();
        assert!((single.epsilon - 5.302585092994046).abs() < 1e-9);
        assert_eq!(single.best_order, 6.0);

        let desk = eps_for_training(20, 8.0, 500, 1e-5).unwrap();
        assert!((desk.epsilon - 1.4389663818912672).abs() < 1e-6, "{}", desk.epsilon);
        assert_eq!(desk.best_order, 17.0);
        // Amplification helps: the unamplified conversion is far larger.
        let fall = RdpCurve::from_fn(default_order_grid(), |a| {
            Ok(500.0 * decoder_step_rdp(a, 8.0)?)
        })
        .unwrap();
        let unamp = rdp_to_dp(&fall, 1e-5).unwrap();
        assert!(desk.epsilon < unamp.epsilon);
    }

    #[test]
    fn training_spend_monotonicity_sweep() {
        let mut prev = 0.0;
        for t in [0u64, 1, 5, 25, 125, 625] {
            let e = eps_for_training(10, 4.0, t, 1e-5).unwrap().epsilon;
            assert!(e >= prev - 1e-15, "T sweep at {t}");
            prev = e;
        }
        let mut prev = f64::INFINITY;
        for sigma in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let e = eps_for_training(10, sigma, 100, 1e-5).unwrap().epsilon;
            assert!(e <= prev + 1e-15, "sigma sweep at {sigma}");
            prev = e;
        }
        let mut prev = f64::INFINITY;
        for k in [1usize, 2, 5, 20, 100] {
            let e = eps_for_training(k, 4.0, 100, 1e-5).unwrap().epsilon;
            assert!(e <= prev + 1e-15, "K sweep at {k}");
            prev = e;
        }
    }

    #[test]
    fn training_spend_never_exceeds_unamplified_conversion() {
        for &(k, sigma, t) in &[(2usize, 1.0, 10u64), (5, 2.0, 50), (20, 8.0, 500), (3, 0.7, 7)] {
            let spend = eps_for_training(k, sigma, t, 1e-5).unwrap();
            let fall = RdpCurve::from_fn(default_order_grid(), |a| {
                Ok(t as f64 * decoder_step_rdp(a, sigma)?)
            })
            .unwrap();
            let unamp = rdp_to_dp(&fall, 1e-5).unwrap();
            assert!(spend.epsilon <= unamp.epsilon * (1.0 + 1e-12), "k={k} sigma={sigma} t={t}");
        }
    }

    #[test]
    fn privacy_params_validation() {
        let good = PrivacyParams { clip_bound: 1.0, noise_multiplier: 8.0, delta: 1e-5 };
        good.validate().unwrap();
        for bad in [
            PrivacyParams { clip_bound: 0.0, ..good },
            PrivacyParams { noise_multiplier: -1.0, ..good },
            PrivacyParams { delta: 0.0, ..good },
            PrivacyParams { delta: 1.0, ..good },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
