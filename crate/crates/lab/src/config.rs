//! Parameter schedules loaded from JSON, with checks that θ, ε and γ are ordered.

use std::collections::BTreeMap;
use std::path::Path;

use openbook_core::excess::FitOptions;
use openbook_core::measures::{DensityFlavor, DensityParams, SampleLayout};
use openbook_core::transport::{ConeSampling, DEFAULT_LP_EPS};
use serde::{Deserialize, Serialize};

use crate::decay::{default_epsilon, DecayParams};
use crate::error::{LabError, Result};
use crate::whitney::WhitneyParams;

/// `θ_N ≪ ε_i` and `ε_N ≪ γ` are read as a factor of this size.
pub const ORDERING_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// `ε_N` for `N = 1, 2, …`; missing entries default to `10⁻³ · 4^{−N}`.
    pub epsilons: Vec<f64>,
    pub eta: f64,
    pub theta: f64,
    pub kappa: f64,
    pub tau: f64,
    pub delta_bar: f64,
    pub c0: f64,
    pub a_gamma: f64,
    pub a_sigma: f64,
    /// `γ(Q, m, n, n̄)` of the drift bound, only used for the ordering check.
    pub gamma: f64,
    /// Fattening constant of the graph approximation.
    pub lambda: f64,
    /// Largest `Q` the schedule must cover.
    pub q_max: usize,
    pub steps: usize,
    pub candidates: usize,
    pub floor: f64,
    pub min_samples: usize,
    pub lp_eps: f64,
    pub cone_count: Option<usize>,
    pub layout: SampleLayout,
    pub fit_threshold: f64,
    pub max_sheets: usize,
    pub max_generation: u32,
    pub layer_delta: f64,
    pub density_threshold: Option<f64>,
    pub flavor: DensityFlavor,
    pub tolerances: BTreeMap<String, f64>,
}

impl Default for Params {
    fn default() -> Self {
        let d = DecayParams::default();
        let w = WhitneyParams::default();
        let f = FitOptions::default();
        Params {
            epsilons: Vec::new(),
            eta: d.eta,
            theta: d.theta,
            kappa: d.kappa,
            tau: w.tau,
            delta_bar: w.delta_bar,
            c0: 1.0,
            a_gamma: 0.0,
            a_sigma: 0.0,
            gamma: 1.0,
            lambda: 1.25,
            q_max: 4,
            steps: d.steps,
            candidates: d.candidates,
            floor: d.floor,
            min_samples: d.min_samples,
            lp_eps: DEFAULT_LP_EPS,
            cone_count: None,
            layout: SampleLayout::Stratified,
            fit_threshold: f.threshold,
            max_sheets: f.max_sheets,
            max_generation: w.max_generation,
            layer_delta: w.layer_delta,
            density_threshold: w.density_threshold,
            flavor: DensityFlavor::Interior,
            tolerances: BTreeMap::new(),
        }
    }
}

impl Params {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let p: Params = serde_json::from_str(&text).map_err(|e| LabError::Format {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn epsilon(&self, n: usize) -> f64 {
        self.epsilons
            .get(n.wrapping_sub(1))
            .copied()
            .unwrap_or_else(|| default_epsilon(n))
    }

    /// `ε_1, …, ε_{n}`
    pub fn epsilon_schedule(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|k| self.epsilon(k)).collect()
    }

    pub fn tolerance(&self, name: &str, default: f64) -> f64 {
        self.tolerances.get(name).copied().unwrap_or(default)
    }

    /// Hard range checks; returns violations of `θ_N ≪ ε_i ≪ γ` as warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |what: &str| Err(LabError::Config(what.to_string()));
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad("theta must lie in (0, 1)");
        }
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return bad("eta must lie in (0, 1/2)");
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return bad("epsilons must lie in (0, 1)");
        }
        if !(self.kappa > 0.0) || !(self.tau > 0.0) || !(self.gamma > 0.0) || !(self.c0 >= 0.0) {
            return bad("kappa, tau and gamma must be positive, c0 nonnegative");
        }
        if !(self.delta_bar > 0.0 && self.delta_bar < 1.0) {
            return bad("delta_bar must lie in (0, 1)");
        }
        if !(self.lambda > 1.0 && self.lambda <= 1.5) {
            return bad("lambda must lie in (1, 3/2]");
        }
        if !(self.a_gamma >= 0.0 && self.a_sigma >= 0.0) {
            return bad("A_Γ and A_Σ must be nonnegative");
        }
        if self.steps == 0 || self.candidates == 0 || self.q_max == 0 || self.max_sheets == 0 {
            return bad("steps, candidates, q_max and max_sheets must be positive");
        }
        if !(self.lp_eps > 0.0) || !(self.floor >= 0.0) {
            return bad("lp_eps must be positive and floor nonnegative");
        }
        if !(self.layer_delta > 0.0 && self.layer_delta < 1.0) {
            return bad("layer_delta must lie in (0, 1)");
        }
        let mut warnings = Vec::new();
        for n in 1..self.q_max {
            let min_eps = (n + 1..=self.q_max)
                .map(|i| self.epsilon(i))
                .fold(f64::INFINITY, f64::min);
            if self.theta * ORDERING_FACTOR > min_eps {
                warnings.push(format!(
                    "theta_{n} = {} is not << min eps_i = {min_eps:e} (i > {n})",
                    self.theta
                ));
            }
        }
        for n in 1..=self.q_max {
            if self.epsilon(n) * ORDERING_FACTOR > self.gamma {
                warnings.push(format!(
                    "eps_{n} = {:e} is not << gamma = {}",
                    self.epsilon(n),
                    self.gamma
                ));
            }
        }
        Ok(warnings)
    }

    /// As [`Params::validate`], with ordering violations fatal.
    pub fn validate_strict(&self) -> Result<()> {
        let w = self.validate()?;
        match w.first() {
            Some(first) => Err(LabError::Config(first.clone())),
            None => Ok(()),
        }
    }

    pub fn cone_sampling(&self, seed: u64) -> ConeSampling {
        ConeSampling {
            count: self.cone_count,
            seed,
            layout: self.layout,
        }
    }

    pub fn fit(&self, q: Option<usize>) -> FitOptions {
        FitOptions {
            max_sheets: self.max_sheets,
            q,
            threshold: self.fit_threshold,
        }
    }

    pub fn density(&self) -> DensityParams {
        DensityParams {
            flavor: self.flavor,
            a_gamma: self.a_gamma,
            a_sigma: self.a_sigma,
            c0: self.c0,
        }
    }

    pub fn decay(&self, seed: u64) -> DecayParams {
        DecayParams {
            steps: self.steps,
            eta: self.eta,
            theta: self.theta,
            epsilons: self.epsilons.clone(),
            kappa: self.kappa,
            a_gamma: self.a_gamma,
            a_sigma: self.a_sigma,
            candidates: self.candidates,
            floor: self.floor,
            min_samples: self.min_samples,
            cone: self.cone_sampling(seed),
            fit: self.fit(None),
            record_timings: false,
        }
    }

    pub fn whitney(&self) -> WhitneyParams {
        WhitneyParams {
            max_generation: self.max_generation,
            tau: self.tau,
            delta_bar: self.delta_bar,
            density_threshold: self.density_threshold,
            layer_delta: self.layer_delta,
            ..WhitneyParams::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_with_ordering_warnings() {
        let p = Params::default();
        let w = p.validate().unwrap();
        // θ = 0.01 against ε_i ≤ 2.5e-4
        assert!(w.iter().any(|s| s.starts_with("theta_1")));
        assert!(p.validate_strict().is_err());
    }

    #[test]
    fn consistent_schedule_is_clean() {
        let p = Params {
            theta: 1e-6,
            epsilons: vec![1e-2, 1e-3, 1e-4, 1e-4],
            ..Params::default()
        };
        assert!(p.validate().unwrap().is_empty());
        p.validate_strict().unwrap();
    }

    #[test]
    fn range_errors() {
        for p in [
            Params {
                theta: 0.0,
                ..Params::default()
            },
            Params {
                eta: 0.5,
                ..Params::default()
            },
            Params {
                epsilons: vec![2.0],
                ..Params::default()
            },
            Params {
                lambda: 2.0,
                ..Params::default()
            },
        ] {
            assert!(matches!(p.validate(), Err(LabError::Config(_))));
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(&path, r#"{"thetaa": 0.1}"#).unwrap();
        assert!(matches!(Params::load(&path), Err(LabError::Format { .. })));
        std::fs::write(&path, r#"{"theta": 0.5, "tolerances": {"density": 0.02}}"#).unwrap();
        let p = Params::load(&path).unwrap();
        assert_eq!(p.tolerance("density", 0.01), 0.02);
    }
}
