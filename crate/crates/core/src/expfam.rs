//! Exponential-family observation models, parameterized by their means.
//!
//! Every operation here takes and returns means rather than natural
//! parameters. The pairwise evidence rate [`ObservationModel::c_cost`] relies
//! on the fact that the minimizing alternative of
//! `beta * d(top || x) + psi * d(alt || x)` is the distribution whose mean is
//! the effort-weighted average of the two means, so the log-partition function
//! never has to be formed.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Means closer than this to 0 or 1 are clamped before a Bernoulli KL
/// evaluation.
pub const BERNOULLI_CLAMP: f64 = 1e-12;

/// Smallest gap between the two largest means an instance may have.
pub const MIN_TOP_GAP: f64 = 1e-9;

/// Distribution family of a single measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationModel {
    /// Binary outcomes with success probability equal to the mean; means live
    /// in `(0, 1)`.
    Bernoulli,
    /// Normal outcomes with known noise scale `sigma`; means live in the open
    /// interval `(lo, hi)`.
    Gaussian { sigma: f64, lo: f64, hi: f64 },
}

impl ObservationModel {
    pub fn bernoulli() -> Self {
        ObservationModel::Bernoulli
    }

    pub fn gaussian(sigma: f64, lo: f64, hi: f64) -> Result<Self> {
        let model = ObservationModel::Gaussian { sigma, lo, hi };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ObservationModel::Bernoulli => Ok(()),
            ObservationModel::Gaussian { sigma, lo, hi } => {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::Domain(format!(
                        "gaussian noise scale must be positive, got {sigma}"
                    )));
                }
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Domain(format!(
                        "gaussian mean domain must satisfy lo < hi, got ({lo}, {hi})"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObservationModel::Bernoulli => "bernoulli",
            ObservationModel::Gaussian { .. } => "gaussian",
        }
    }

    /// Open interval of admissible means.
    pub fn domain(&self) -> (f64, f64) {
        match *self {
            ObservationModel::Bernoulli => (0.0, 1.0),
            ObservationModel::Gaussian { lo, hi, .. } => (lo, hi),
        }
    }

    /// Noise scale of the Gaussian model, `None` for Bernoulli.
    pub fn sigma(&self) -> Option<f64> {
        match *self {
            ObservationModel::Bernoulli => None,
            ObservationModel::Gaussian { sigma, .. } => Some(sigma),
        }
    }

    /// Sub-Gaussian parameter of the observations: `sigma` for the Gaussian
    /// model and `1/2` for bounded binary outcomes.
    pub fn subgaussian_scale(&self) -> f64 {
        match *self {
            ObservationModel::Bernoulli => 0.5,
            ObservationModel::Gaussian { sigma, .. } => sigma,
        }
    }

    pub fn contains(&self, mean: f64) -> bool {
        let (lo, hi) = self.domain();
        mean.is_finite() && mean > lo && mean < hi
    }

    pub fn check_mean(&self, mean: f64) -> Result<()> {
        if self.contains(mean) {
            Ok(())
        } else {
            let (lo, hi) = self.domain();
            Err(Error::Domain(format!(
                "mean {mean} is outside the open {} domain ({lo}, {hi})",
                self.name()
            )))
        }
    }

    /// Checks that `y` is a value the model can emit.
    pub fn check_observation(&self, y: f64) -> Result<()> {
        match self {
            ObservationModel::Bernoulli if y == 0.0 || y == 1.0 => Ok(()),
            ObservationModel::Bernoulli => Err(Error::Input(format!(
                "bernoulli observations must be 0 or 1, got {y}"
            ))),
            ObservationModel::Gaussian { .. } if y.is_finite() => Ok(()),
            ObservationModel::Gaussian { .. } => {
                Err(Error::Input(format!("non-finite observation {y}")))
            }
        }
    }

    /// Draws one observation with the given mean.
    pub fn sample<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> Result<f64> {
        self.check_mean(mean)?;
        Ok(self.sample_unchecked(mean, rng))
    }

    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> f64 {
        match *self {
            ObservationModel::Bernoulli => {
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            ObservationModel::Gaussian { sigma, .. } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sigma * z
            }
        }
    }

    /// KL divergence `d(p || q)` in nats between the members with means `p`
    /// and `q`.
    pub fn kl(&self, p: f64, q: f64) -> Result<f64> {
        self.check_mean(p)?;
        self.check_mean(q)?;
        Ok(self.kl_unchecked(p, q))
    }

    pub(crate) fn kl_unchecked(&self, p: f64, q: f64) -> f64 {
        match *self {
            ObservationModel::Bernoulli => {
                let p = p.clamp(BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP);
                let q = q.clamp(BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP);
                let d = p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
                // rounding can leave a tiny negative value when p ~ q
                d.max(0.0)
            }
            ObservationModel::Gaussian { sigma, .. } => {
                let diff = p - q;
                diff * diff / (2.0 * sigma * sigma)
            }
        }
    }

    /// Pairwise evidence rate for ruling out the alternative when efforts
    /// `beta` and `psi` go to the top and alternative designs respectively:
    /// `min_x beta * d(top || x) + psi * d(alt || x)`.
    ///
    /// Returns 0 when `beta + psi == 0`.
    pub fn c_cost(&self, beta: f64, psi: f64, mean_top: f64, mean_alt: f64) -> Result<f64> {
        if !(beta.is_finite() && psi.is_finite() && beta >= 0.0 && psi >= 0.0) {
            return Err(Error::Domain(format!(
                "efforts must be finite and nonnegative, got beta={beta}, psi={psi}"
            )));
        }
        self.check_mean(mean_top)?;
        self.check_mean(mean_alt)?;
        Ok(self.c_cost_unchecked(beta, psi, mean_top, mean_alt))
    }

    pub(crate) fn c_cost_unchecked(&self, beta: f64, psi: f64, mean_top: f64, mean_alt: f64) -> f64 {
        let total = beta + psi;
        if total <= 0.0 {
            return 0.0;
        }
        let pooled = (beta * mean_top + psi * mean_alt) / total;
        beta * self.kl_unchecked(mean_top, pooled) + psi * self.kl_unchecked(mean_alt, pooled)
    }

    /// Log-likelihood of `y` under mean `mean`, up to an additive constant
    /// that does not depend on the mean.
    pub(crate) fn log_likelihood(&self, y: f64, mean: f64) -> f64 {
        match *self {
            ObservationModel::Bernoulli => {
                if y > 0.5 {
                    mean.ln()
                } else {
                    (-mean).ln_1p()
                }
            }
            ObservationModel::Gaussian { sigma, .. } => {
                let r = y - mean;
                -r * r / (2.0 * sigma * sigma)
            }
        }
    }
}

/// One observation from `model` with the given mean.
pub fn sample_observation<R: Rng + ?Sized>(
    model: &ObservationModel,
    mean: f64,
    rng: &mut R,
) -> Result<f64> {
    model.sample(mean, rng)
}

pub fn kl(model: &ObservationModel, p: f64, q: f64) -> Result<f64> {
    model.kl(p, q)
}

pub fn c_cost(
    model: &ObservationModel,
    beta: f64,
    psi: f64,
    mean_top: f64,
    mean_alt: f64,
) -> Result<f64> {
    model.c_cost(beta, psi, mean_top, mean_alt)
}

/// Closed form of the Gaussian evidence rate:
/// `(beta * psi / (beta + psi)) * delta^2 / (2 sigma^2)`.
pub fn c_gaussian_closed_form(beta: f64, psi: f64, delta: f64, sigma: f64) -> Result<f64> {
    if !(beta >= 0.0 && psi >= 0.0 && beta + psi > 0.0) {
        return Err(Error::Domain(format!(
            "efforts must be nonnegative and not both zero, got beta={beta}, psi={psi}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok(beta * psi / (beta + psi) * delta * delta / (2.0 * sigma * sigma))
}

/// A problem instance: an observation model and the true mean of every arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance")]
pub struct InstanceSpec {
    pub model: ObservationModel,
    means: Vec<f64>,
    #[serde(skip_serializing)]
    best: usize,
}

impl InstanceSpec {
    /// Validates that there are at least two arms, all means are inside the
    /// model's domain, and all means are pairwise distinct.
    pub fn new(model: ObservationModel, means: Vec<f64>) -> Result<Self> {
        model.validate()?;
        if means.len() < 2 {
            return Err(Error::Input(format!(
                "an instance needs at least two arms, got {}",
                means.len()
            )));
        }
        for &m in &means {
            model.check_mean(m)?;
        }
        let mut sorted = means.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Input(
                "arm means must be pairwise distinct (the best arm has to be unique)".into(),
            ));
        }
        if sorted[0] - sorted[1] < MIN_TOP_GAP {
            return Err(Error::Input(format!(
                "the two largest means differ by {:e}, below the minimum gap {MIN_TOP_GAP:e}",
                sorted[0] - sorted[1]
            )));
        }
        let best = crate::argmax(&means);
        Ok(InstanceSpec { model, means, best })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    /// Index of the strictly largest mean.
    pub fn best(&self) -> usize {
        self.best
    }

    /// `mean(best) - mean(i)` for every arm (zero at the best arm).
    pub fn gaps(&self) -> Vec<f64> {
        let top = self.means[self.best];
        self.means.iter().map(|m| top - m).collect()
    }

    /// Gaps of the suboptimal arms only, in arm order.
    pub fn suboptimal_gaps(&self) -> Vec<f64> {
        let top = self.means[self.best];
        self.means
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != self.best)
            .map(|(_, m)| top - m)
            .collect()
    }

    /// Stable textual identity used to check that traces being aggregated
    /// came from the same problem.
    pub fn fingerprint(&self) -> String {
        let means: Vec<String> = self.means.iter().map(|m| format!("{m}")).collect();
        match self.model {
            ObservationModel::Bernoulli => format!("bernoulli[{}]", means.join(",")),
            ObservationModel::Gaussian { sigma, lo, hi } => {
                format!("gaussian(s={sigma},{lo},{hi})[{}]", means.join(","))
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    model: ObservationModel,
    means: Vec<f64>,
}

impl TryFrom<RawInstance> for InstanceSpec {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        InstanceSpec::new(raw.model, raw.means)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian() -> ObservationModel {
        ObservationModel::gaussian(1.0, -10.0, 10.0).unwrap()
    }

    #[test]
    fn bernoulli_near_one_almost_always_succeeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ObservationModel::bernoulli();
        let ones = (0..10_000)
            .map(|_| m.sample(1.0 - 1e-9, &mut rng).unwrap())
            .filter(|&y| y == 1.0)
            .count();
        assert_eq!(ones, 10_000);
    }

    #[test]
    fn gaussian_sample_mean_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = gaussian();
        let n = 1_000_000;
        let s: f64 = (0..n).map(|_| m.sample(0.0, &mut rng).unwrap()).sum();
        assert!((s / n as f64).abs() < 0.01);
    }

    #[test]
    fn bernoulli_sample_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = ObservationModel::bernoulli();
        let n = 1_000_000;
        let ys: Vec<f64> = (0..n).map(|_| m.sample(0.5, &mut rng).unwrap()).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
        assert!((var - 0.25).abs() < 0.005);
    }

    #[test]
    fn sampling_outside_domain_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            ObservationModel::bernoulli().sample(1.2, &mut rng),
            Err(Error::Domain(_))
        ));
        assert!(matches!(gaussian().sample(11.0, &mut rng), Err(Error::Domain(_))));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(ObservationModel::bernoulli().kl(0.5, 0.5).unwrap(), 0.0);
        assert_eq!(gaussian().kl(0.5, 0.5).unwrap(), 0.0);
        assert!((gaussian().kl(1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        // 0.5 ln 2 + 0.5 ln(2/3)
        let expected = 0.5 * 2f64.ln() + 0.5 * (0.5f64 / 0.75).ln();
        let got = ObservationModel::bernoulli().kl(0.5, 0.25).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.143841).abs() < 1e-6);
        assert!(ObservationModel::bernoulli().kl(0.5, 0.0).is_err());
    }

    #[test]
    fn kl_nonnegative_zero_only_on_diagonal() {
        let b = ObservationModel::bernoulli();
        let g = gaussian();
        for i in 1..50 {
            for j in 1..50 {
                let (p, q) = (i as f64 / 50.0, j as f64 / 50.0);
                for model in [&b, &g] {
                    let d = model.kl(p, q).unwrap();
                    if i == j {
                        assert_eq!(d, 0.0);
                    } else {
                        assert!(d > 0.0, "{model:?} kl({p},{q}) = {d}");
                    }
                }
            }
        }
    }

    #[test]
    fn c_cost_zero_effort_on_top() {
        assert_eq!(ObservationModel::bernoulli().c_cost(0.0, 0.5, 0.7, 0.2).unwrap(), 0.0);
        assert_eq!(gaussian().c_cost(0.0, 0.0, 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(gaussian().c_cost(0.3, 0.0, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn c_cost_gaussian_example() {
        let c = gaussian().c_cost(0.5, 0.5, 1.0, 0.0).unwrap();
        assert!((c - 0.125).abs() < 1e-15);
    }

    #[test]
    fn closed_form_examples() {
        assert!((c_gaussian_closed_form(0.5, 0.5, 1.0, 1.0).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(c_gaussian_closed_form(0.4, 0.0, 3.0, 2.0).unwrap(), 0.0);
        assert!((c_gaussian_closed_form(0.3, 0.7, 2.0, 2.0).unwrap() - 0.105).abs() < 1e-15);
        assert!(c_gaussian_closed_form(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(c_gaussian_closed_form(0.5, 0.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn instance_validation() {
        let b = ObservationModel::bernoulli();
        let inst = InstanceSpec::new(b, vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(inst.best(), 4);
        assert_eq!(inst.k(), 5);
        let gaps = inst.suboptimal_gaps();
        assert!((gaps[0] - 0.4).abs() < 1e-15 && (gaps[3] - 0.1).abs() < 1e-15);
        assert!(InstanceSpec::new(b, vec![0.3]).is_err());
        assert!(InstanceSpec::new(b, vec![0.3, 0.3, 0.1]).is_err());
        assert!(InstanceSpec::new(b, vec![0.3, 1.0]).is_err());
        assert!(InstanceSpec::new(b, vec![0.3, 0.3 + 1e-12]).is_err());
        assert!(ObservationModel::gaussian(0.0, 0.0, 1.0).is_err());
        assert!(ObservationModel::gaussian(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn model_serde_shape() {
        let g = ObservationModel::gaussian(2.0, -1.0, 3.0).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"kind":"gaussian","sigma":2.0,"lo":-1.0,"hi":3.0}"#);
        let back: ObservationModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        let b: ObservationModel = serde_json::from_str(r#"{"kind":"bernoulli"}"#).unwrap();
        assert_eq!(b, ObservationModel::Bernoulli);
        let inst: InstanceSpec =
            serde_json::from_str(r#"{"model":{"kind":"bernoulli"},"means":[0.2,0.7,0.1]}"#).unwrap();
        assert_eq!(inst.best(), 1);
        let dup = serde_json::from_str::<InstanceSpec>(r#"{"model":{"kind":"bernoulli"},"means":[0.2,0.2]}"#);
        assert!(dup.is_err());
    }
}
