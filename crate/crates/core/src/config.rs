//! Experiment configuration: a versioned TOML document with every tolerance
//! spelled out after defaults are applied.

use serde::{Deserialize, Serialize};

use crate::analysis::TimeProfile;
use crate::dynamics::{Congestion, Interaction, InteractionKernel, Presence, SpeedField};
use crate::equilibrium::{Discretization, EquilibriumParams, InitialDensity, Scheme};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryCost, SignedDomain};
use crate::grid::Point;
use crate::hjb::SolverParams;
use crate::trajectories::TrajectoryOptions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Ball { center: Point, radius: f64 },
    RoundedRect { center: Point, half: Point, corner: Option<f64> },
    Interval { lo: f64, hi: f64 },
}

impl DomainSpec {
    pub fn build(&self) -> Result<SignedDomain> {
        match *self {
            DomainSpec::Ball { center, radius } => SignedDomain::ball(center, radius),
            DomainSpec::RoundedRect { center, half, corner } => {
                SignedDomain::rounded_rect(center, half, corner)
            }
            DomainSpec::Interval { lo, hi } => SignedDomain::interval(lo, hi),
        }
    }
}

/// Either a population-dependent kernel or a prescribed time-only speed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsSpec {
    Kernel {
        congestion: Congestion,
        interaction: Interaction,
        presence: Presence,
    },
    Profile { profile: TimeProfile },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub h: f64,
    /// `Δt = cfl · h / k_max`.
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    /// Horizon padding: the time grid covers `T_max (1 + pad)`.
    #[serde(default = "default_pad")]
    pub pad: f64,
}

fn default_cfl() -> f64 {
    0.5
}

fn default_pad() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumSpec {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    pub tol: Option<f64>,
    pub tol_fp: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_particles")]
    pub particles: usize,
}

fn default_scheme() -> Scheme {
    Scheme::FictitiousPlay
}

fn default_max_iter() -> usize {
    200
}

fn default_particles() -> usize {
    100_000
}

impl Default for EquilibriumSpec {
    fn default() -> Self {
        EquilibriumSpec {
            scheme: default_scheme(),
            tol: None,
            tol_fp: None,
            max_iter: default_max_iter(),
            particles: default_particles(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_exponents")]
    pub exponents: Vec<f64>,
}

fn default_epsilons() -> Vec<f64> {
    vec![0.16, 0.08, 0.04]
}

fn default_exponents() -> Vec<f64> {
    vec![2.0, f64::INFINITY]
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            epsilons: default_epsilons(),
            exponents: default_exponents(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    /// Random starts for trajectory-based checks.
    #[serde(default = "default_starts")]
    pub starts: usize,
    /// Cells around ridge nodes skipped by the HJ residual.
    #[serde(default = "default_ridge_band")]
    pub ridge_band: usize,
}

fn default_starts() -> usize {
    1000
}

fn default_ridge_band() -> usize {
    2
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            starts: default_starts(),
            ridge_band: default_ridge_band(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; all cores when absent.
    pub threads: Option<usize>,
    pub domain: DomainSpec,
    pub cost: BoundaryCost,
    pub dynamics: DynamicsSpec,
    pub grid: GridSpec,
    pub initial: Option<InitialDensity>,
    #[serde(default)]
    pub equilibrium: EquilibriumSpec,
    #[serde(default)]
    pub study: StudySpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub trajectories: TrajectoryOptions,
}

/// Everything a pipeline needs, built from a validated config.
pub struct Problem {
    pub domain: SignedDomain,
    pub cost: BoundaryCost,
    pub kernel: Option<InteractionKernel>,
    pub profile: Option<TimeProfile>,
    pub disc: Discretization,
}

impl Problem {
    /// Speed field of a prescribed profile, or of the frozen initial density
    /// for a kernel.
    pub fn profile_field(&self) -> Option<SpeedField> {
        let p = self.profile?;
        Some(SpeedField::from_fn(
            self.disc.grid.clone(),
            self.disc.time,
            move |t, _| p.value(t),
        ))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(toml_path(&e), e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// TOML with all defaults filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn equilibrium_params(&self) -> EquilibriumParams {
        EquilibriumParams {
            scheme: self.equilibrium.scheme,
            tol: self.equilibrium.tol,
            tol_fp: self.equilibrium.tol_fp,
            max_iter: self.equilibrium.max_iter,
            particles: self.equilibrium.particles,
            seed: self.seed,
            solver: self.solver.clone(),
            trajectories: self.trajectories.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.problem().map(|_| ())
    }

    /// Builds and cross-checks the domain, cost, dynamics and grids.
    pub fn problem(&self) -> Result<Problem> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::config(
                "schema",
                format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema),
            ));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("seed", "must fit a signed 64-bit integer"));
        }
        let domain = self.domain.build().map_err(|e| Error::config("domain", e.to_string()))?;
        self.cost
            .validate(&domain)
            .map_err(|e| Error::config("cost", e.to_string()))?;
        if !(self.grid.h > 0.0) || self.grid.h > 0.25 * domain.inradius() {
            return Err(Error::config("grid.h", "must be positive and resolve the domain"));
        }
        if !(self.grid.cfl > 0.0 && self.grid.cfl <= 1.0) {
            return Err(Error::config("grid.cfl", "must lie in (0, 1]"));
        }
        if !(self.grid.pad >= 0.0) {
            return Err(Error::config("grid.pad", "must be nonnegative"));
        }
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(Error::config("threads", "must be positive"));
            }
        }
        for (i, &p) in self.study.exponents.iter().enumerate() {
            if !(p > 1.0) {
                return Err(Error::config(
                    format!("study.exponents[{i}]"),
                    format!("exponent {p} must exceed 1"),
                ));
            }
        }
        let interacting = matches!(self.dynamics, DynamicsSpec::Kernel { .. });
        for (i, &e) in self.study.epsilons.iter().enumerate() {
            if interacting && (!(e > 0.0) || e > 0.5 * domain.tube()) {
                return Err(Error::config(
                    format!("study.epsilons[{i}]"),
                    format!("width {e} must lie in (0, {}]", 0.5 * domain.tube()),
                ));
            }
        }
        if self.equilibrium.particles == 0 {
            return Err(Error::config("equilibrium.particles", "must be positive"));
        }
        if let Scheme::DampedPicard { theta } = self.equilibrium.scheme {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::config("equilibrium.scheme.theta", "must lie in (0, 1]"));
            }
        }
        if let Some(rho) = &self.initial {
            rho.validate(&domain)
                .map_err(|e| Error::config("initial", e.to_string()))?;
        }
        let (kernel, profile, bounds) = match &self.dynamics {
            DynamicsSpec::Kernel {
                congestion,
                interaction,
                presence,
            } => {
                let k = InteractionKernel::new(
                    congestion.clone(),
                    interaction.clone(),
                    *presence,
                    domain.clone(),
                )
                .map_err(|e| Error::config("dynamics", e.to_string()))?;
                let b = k.speed_bounds();
                (Some(k), None, b)
            }
            DynamicsSpec::Profile { profile } => {
                // the horizon depends on the bounds, which only need a guess
                // long enough to contain it
                let guess = 4.0 * domain.inradius();
                let (lo, hi) = profile.bounds(guess);
                profile
                    .validate(guess)
                    .map_err(|e| Error::config("dynamics.profile", e.to_string()))?;
                (None, Some(*profile), (lo, hi))
            }
        };
        self.cost
            .check_against(&domain, bounds.1)
            .map_err(|e| Error::config("cost", e.to_string()))?;
        let disc = Discretization::new(
            &domain,
            &self.cost,
            self.grid.h,
            bounds,
            self.grid.cfl,
            self.grid.pad,
        )
        .map_err(|e| Error::config("grid", e.to_string()))?;
        if let Some(p) = profile {
            p.validate(disc.time.end())
                .map_err(|e| Error::config("dynamics.profile", e.to_string()))?;
        }
        Ok(Problem {
            domain,
            cost: self.cost.clone(),
            kernel,
            profile,
            disc,
        })
    }
}

fn toml_path(e: &toml::de::Error) -> String {
    e.span()
        .map(|s| format!("byte {}..{}", s.start, s.end))
        .unwrap_or_else(|| "<root>".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BALL: &str = r#"
schema = 1
name = "ball"
[domain]
kind = "ball"
center = [0.0, 0.0]
radius = 1.0
[cost]
kind = "zero"
[dynamics]
kind = "profile"
profile = { kind = "constant", value = 1.0 }
[grid]
h = 0.0625
"#;

    #[test]
    fn defaults_are_filled_and_round_trip() {
        let cfg = ExperimentConfig::from_toml(BALL).unwrap();
        assert_eq!(cfg.grid.cfl, 0.5);
        assert_eq!(cfg.equilibrium.max_iter, 200);
        assert_eq!(cfg.study.exponents[1], f64::INFINITY);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn steep_costs_and_bad_exponents_are_rejected() {
        let steep = BALL.replace(
            "kind = \"zero\"",
            "kind = \"cosine\"\namplitude = 3.0\ndirection = [1.0, 0.0]",
        );
        let err = ExperimentConfig::from_toml(&steep).unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid { ref path, .. } if path == "cost"), "{err}");
        let mut cfg = ExperimentConfig::from_toml(BALL).unwrap();
        cfg.study.exponents = vec![1.0];
        assert!(matches!(
            cfg.validate(),
            Err(Error::ConfigInvalid { ref path, .. }) if path == "study.exponents[0]"
        ));
    }

    #[test]
    fn sharp_corners_are_rejected() {
        let rect = BALL.replace(
            "kind = \"ball\"\ncenter = [0.0, 0.0]\nradius = 1.0",
            "kind = \"rounded_rect\"\ncenter = [0.0, 0.0]\nhalf = [1.0, 0.5]\ncorner = 0.0",
        );
        let err = ExperimentConfig::from_toml(&rect).unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid { ref path, .. } if path == "domain"));
    }

    #[test]
    fn unknown_keys_are_reported() {
        let typo = BALL.replace("h = 0.0625", "h = 0.0625\nhh = 1.0");
        assert!(matches!(
            ExperimentConfig::from_toml(&typo),
            Err(Error::ConfigInvalid { .. })
        ));
    }
}
