//! Physical parameters and the scalar formulas shared by the matrix builders.
//!
//! Everything downstream works in units of the cavity damping rate γ. The only
//! place where physical rates (s⁻¹) enter is [`eps_of_theta`] for the coupled
//! ε mode and [`overlap_density`], which is kept in physical units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the mean number of atoms inside the cavity during one transit is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsMode {
    /// ε held fixed while θ varies.
    Fixed(f64),
    /// ε = γ√N·θ/g follows θ.
    Coupled,
}

impl Default for EpsMode {
    fn default() -> Self {
        EpsMode::Fixed(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Dimensionless flux N = R/γ.
    pub flux_n: f64,
    /// Thermal photon occupancy.
    pub n_b: f64,
    /// Pump parameter θ = gτ√N.
    pub theta: f64,
    /// Single-photon Rabi frequency g in s⁻¹.
    pub rabi_g: f64,
    /// Cavity damping rate γ in s⁻¹.
    pub gamma: f64,
    pub eps_mode: EpsMode,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            flux_n: 50.0,
            n_b: 0.0,
            theta: 1.0,
            rabi_g: 39_000.0,
            gamma: 10.0,
            eps_mode: EpsMode::Fixed(0.0),
        }
    }
}

impl ModelParams {
    pub fn one_atom(flux_n: f64, n_b: f64, theta: f64) -> Self {
        ModelParams {
            flux_n,
            n_b,
            theta,
            ..Default::default()
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps_mode = EpsMode::Fixed(eps);
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter(msg.to_string()))
            }
        }
        check(self.flux_n.is_finite() && self.flux_n > 0.0, "flux_n must be > 0")?;
        check(self.n_b.is_finite() && self.n_b >= 0.0, "n_b must be >= 0")?;
        check(self.theta.is_finite() && self.theta >= 0.0, "theta must be >= 0")?;
        check(self.rabi_g.is_finite() && self.rabi_g > 0.0, "rabi_g must be > 0")?;
        check(self.gamma.is_finite() && self.gamma > 0.0, "gamma must be > 0")?;
        if let EpsMode::Fixed(eps) = self.eps_mode {
            check(eps.is_finite() && eps >= 0.0, "eps must be >= 0")?;
        }
        Ok(())
    }

    /// Mean number of atoms in the cavity, resolved from the ε mode.
    pub fn eps(&self) -> f64 {
        match self.eps_mode {
            EpsMode::Fixed(eps) => eps,
            EpsMode::Coupled => eps_of_theta(self.theta, self.flux_n, self.gamma, self.rabi_g),
        }
    }

    /// Rabi angle per unit √n accumulated during a full transit, gτ = θ/√N.
    pub fn g_tau(&self) -> f64 {
        self.theta / self.flux_n.sqrt()
    }

    /// Transit time τ = θ/(g√N) in seconds.
    pub fn transit_time(&self) -> f64 {
        self.theta / (self.rabi_g * self.flux_n.sqrt())
    }

    /// Atom arrival rate R = Nγ in s⁻¹.
    pub fn atom_rate(&self) -> f64 {
        self.flux_n * self.gamma
    }
}

/// One-atom emission probability q_n = sin²(θ√(n/N)).
pub fn emission_prob(n: usize, theta: f64, flux_n: f64) -> f64 {
    let s = (theta * (n as f64 / flux_n).sqrt()).sin();
    s * s
}

/// Probability that a randomly chosen beam atom belongs to an n-atom event.
pub fn event_probability(n: u32, eps: f64) -> f64 {
    assert!(n >= 1, "event size starts at 1");
    let gap = -(-eps).exp_m1();
    (-2.0 * eps).exp() * gap.powi(n as i32 - 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventProbabilities {
    /// Raw P₁, P₂.
    pub p_raw: [f64; 2],
    /// P̃₁ = P₁/(P₁ + 2P₂).
    pub p1_mod: f64,
    /// P̃₂ = P₂/(P₁ + 2P₂).
    pub p2_mod: f64,
}

/// Modified one- and two-atom probabilities with P̃₁ + 2P̃₂ = 1.
///
/// The common factor e^(−2ε) cancels in the ratios, so they are formed from
/// a = 1 − e^(−ε) directly and stay finite where P₁ underflows.
pub fn modified_probabilities(eps: f64) -> EventProbabilities {
    let a = -(-eps).exp_m1();
    let denom = 1.0 + 2.0 * a;
    EventProbabilities {
        p_raw: [event_probability(1, eps), event_probability(2, eps)],
        p1_mod: 1.0 / denom,
        p2_mod: a / denom,
    }
}

/// Conditional arrival-gap density w(s) = R e^(−Rs)/(1 − e^(−Rτ)) in s⁻¹.
pub fn overlap_density(s: f64, rate: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(
            "overlap density needs a positive transit time".into(),
        ));
    }
    if !(rate > 0.0) {
        return Err(Error::InvalidParameter("atom rate must be > 0".into()));
    }
    if !(0.0..=tau).contains(&s) {
        return Err(Error::InvalidParameter(format!(
            "gap s = {s} outside [0, {tau}]"
        )));
    }
    Ok(rate * (-rate * s).exp() / -(-rate * tau).exp_m1())
}

/// The same density in the scaled variable u = s/τ ∈ [0, 1], with ε = Rτ.
/// Integrates to one on [0, 1]; tends to 1 as ε → 0.
pub fn overlap_weight(u: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        return 1.0;
    }
    eps * (-eps * u).exp() / -(-eps).exp_m1()
}

/// ε = γ√N·θ/g, the mean number of pump atoms inside the cavity.
pub fn eps_of_theta(theta: f64, flux_n: f64, gamma: f64, rabi_g: f64) -> f64 {
    gamma * flux_n.sqrt() * theta / rabi_g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, LN_2, PI};

    #[test]
    fn emission_prob_examples() {
        assert_eq!(emission_prob(0, 3.7, 12.0), 0.0);
        assert!((emission_prob(50, FRAC_PI_2, 50.0) - 1.0).abs() < 1e-15);
        let n: f64 = 10.0;
        assert!(emission_prob(1, PI * n.sqrt(), n) < 1e-30);
    }

    #[test]
    fn event_probability_examples() {
        assert_eq!(event_probability(1, 0.0), 1.0);
        assert_eq!(event_probability(2, 0.0), 0.0);
        assert!((event_probability(1, LN_2) - 0.25).abs() < 1e-15);
        assert!((event_probability(2, LN_2) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn modified_probability_examples() {
        let p = modified_probabilities(0.0);
        assert_eq!((p.p1_mod, p.p2_mod), (1.0, 0.0));
        let p = modified_probabilities(LN_2);
        assert!((p.p1_mod - 0.5).abs() < 1e-15);
        assert!((p.p2_mod - 0.25).abs() < 1e-15);
        let eps = 1e-4;
        let p = modified_probabilities(eps);
        assert!((p.p1_mod - (1.0 - 2.0 * eps)).abs() < 10.0 * eps * eps);
        assert!((p.p2_mod - eps).abs() < 10.0 * eps * eps);
    }

    #[test]
    fn flux_normalization_partial_sums() {
        for &eps in &[0.0, 0.1, 0.5, 1.0] {
            let mut prev = 0.0;
            let mut sum = 0.0;
            for n in 1..=200u32 {
                sum += n as f64 * event_probability(n, eps);
                assert!(sum >= prev);
                prev = sum;
            }
            assert!((sum - 1.0).abs() < 1e-12, "eps={eps} sum={sum}");
        }
        // ε = 2 converges more slowly but is still monotone toward 1
        let sum: f64 = (1..=200u32)
            .map(|n| n as f64 * event_probability(n, 2.0))
            .sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn overlap_density_examples() {
        let (rate, tau) = (500.0, 2e-4);
        let eps = rate * tau;
        let w0 = overlap_density(0.0, rate, tau).unwrap();
        assert!((w0 - rate / (1.0 - (-eps).exp())).abs() < 1e-9 * w0);
        let small = overlap_density(0.5e-6, 1.0, 1e-6).unwrap();
        assert!((small * 1e-6 - 1.0).abs() < 1e-6);
        assert!(overlap_density(0.0, rate, 0.0).is_err());
        assert!(overlap_density(3e-4, rate, tau).is_err());
    }

    #[test]
    fn coupled_eps_examples() {
        let eps = eps_of_theta(20.0, 10.0, 10.0, 39_000.0);
        assert!((eps - 0.016).abs() < 5e-4);
        assert_eq!(eps_of_theta(0.0, 10.0, 10.0, 39_000.0), 0.0);
        let e1 = eps_of_theta(3.0, 10.0, 10.0, 39_000.0);
        let e2 = eps_of_theta(6.0, 10.0, 10.0, 39_000.0);
        assert!((e2 - 2.0 * e1).abs() < 1e-18);
    }

    #[test]
    fn validate_rejects_bad_fields() {
        assert!(ModelParams::default().validate().is_ok());
        let bad = ModelParams {
            flux_n: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(ModelParams::default().with_eps(-0.1).validate().is_err());
        assert!(ModelParams::default().with_theta(f64::NAN).validate().is_err());
    }

    proptest! {
        #[test]
        fn modified_probabilities_normalized(eps in 0.0f64..5.0) {
            let p = modified_probabilities(eps);
            prop_assert!((p.p1_mod + 2.0 * p.p2_mod - 1.0).abs() <= 2.0 * f64::EPSILON);
            prop_assert!((0.0..=1.0).contains(&p.p1_mod));
            prop_assert!((0.0..=1.0).contains(&p.p2_mod));
        }

        #[test]
        fn emission_prob_scale_invariant(n in 0usize..300, theta in 0.0f64..30.0,
                                         flux in 0.5f64..100.0, c in 0.1f64..10.0) {
            let a = emission_prob(n, theta, flux);
            let b = emission_prob(n, c * theta, c * c * flux);
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn overlap_weight_decreasing(eps in 0.0f64..3.0, u1 in 0.0f64..1.0, u2 in 0.0f64..1.0) {
            let (lo, hi) = if u1 < u2 { (u1, u2) } else { (u2, u1) };
            let a = overlap_weight(lo, eps);
            let b = overlap_weight(hi, eps);
            prop_assert!(b >= 0.0);
            prop_assert!(a >= b);
        }
    }
}
