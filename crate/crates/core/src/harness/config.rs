use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthetic::{ProfileKind, SingularProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Linear,
    Nn,
    Selfcheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Delta,
    Efv,
    Fv,
    Lfv,
    Jfv,
    Tic0,
    TicKappa,
    Ric,
    /// Ground-truth gap of a trained network.
    Tilde,
}

impl Estimator {
    pub const LINEAR: [Estimator; 8] = [
        Estimator::Delta,
        Estimator::Efv,
        Estimator::Fv,
        Estimator::Lfv,
        Estimator::Jfv,
        Estimator::Tic0,
        Estimator::TicKappa,
        Estimator::Ric,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Delta => "delta",
            Estimator::Efv => "efv",
            Estimator::Fv => "fv",
            Estimator::Lfv => "lfv",
            Estimator::Jfv => "jfv",
            Estimator::Tic0 => "tic0",
            Estimator::TicKappa => "tic_kappa",
            Estimator::Ric => "ric",
            Estimator::Tilde => "tilde",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = Estimator::LINEAR.iter().chain(std::iter::once(&Estimator::Tilde));
        all.copied().find(|e| e.name() == s).ok_or_else(|| Error::Config {
            field: "estimators",
            reason: format!("unknown estimator `{s}`"),
        })
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub n: usize,
    pub alpha: f64,
    /// Noise variance, used both to generate data and as the known σ₀².
    pub sigma_sq: f64,
    pub profile: ProfileKind,
    pub d: Vec<usize>,
    pub m: Vec<usize>,
    pub reps: usize,
    /// Replications for the network ground-truth gap.
    pub tilde_reps: usize,
    /// Chain lengths; linear mode takes exactly one.
    pub t: Vec<usize>,
    pub step: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub estimators: BTreeSet<Estimator>,
    pub kappa: f64,
    pub lr: f64,
    pub train_iters: usize,
    /// Standard deviation of the elementwise init perturbation around θ₀.
    pub init_sd: f64,
    /// Keep (U, V, β₀) fixed across replications and redraw only y.
    pub fixed_design: bool,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn linear(n: usize, profile: ProfileKind) -> Self {
        ExperimentConfig {
            mode: Mode::Linear,
            n,
            alpha: 0.1,
            sigma_sq: 1.0,
            profile,
            d: vec![],
            m: vec![],
            reps: 50,
            tilde_reps: 0,
            t: vec![15 * n],
            step: 1.0 / (10.0 * n as f64),
            burn_in: 0.0,
            seed: 7,
            estimators: Estimator::LINEAR.into_iter().collect(),
            kappa: 0.1,
            lr: 0.0,
            train_iters: 0,
            init_sd: 0.0,
            fixed_design: false,
            threads: None,
            out: None,
        }
    }

    pub fn nn(n: usize) -> Self {
        ExperimentConfig {
            mode: Mode::Nn,
            n,
            alpha: 1e-3,
            sigma_sq: 1.0,
            profile: ProfileKind::Intrinsic10,
            d: vec![5],
            m: vec![50],
            reps: 20,
            tilde_reps: 50,
            t: vec![1000],
            step: 1e-5,
            burn_in: 0.1,
            seed: 7,
            estimators: [Estimator::Lfv, Estimator::Tilde].into_iter().collect(),
            kappa: 0.1,
            lr: 0.1,
            train_iters: 100,
            init_sd: 0.1,
            fixed_design: false,
            threads: None,
            out: None,
        }
    }

    pub fn selfcheck(seed: u64) -> Self {
        ExperimentConfig {
            mode: Mode::Selfcheck,
            seed,
            ..Self::linear(20, ProfileKind::Intrinsic10)
        }
    }

    pub fn wants(&self, e: Estimator) -> bool {
        self.estimators.contains(&e)
    }

    pub fn p(&self) -> usize {
        2 * self.n
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| Err(Error::Config { field, reason: reason.into() });
        if self.reps == 0 {
            return bad("reps", "must be at least 1");
        }
        if self.mode == Mode::Selfcheck {
            return Ok(());
        }
        if self.n == 0 {
            return bad("n", "must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", "must be positive");
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad("step", "must be positive");
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return bad("burn_in", "must lie in [0, 1)");
        }
        if !(self.kappa >= 0.0) {
            return bad("kappa", "must be nonnegative");
        }
        if self.t.is_empty() || self.t.iter().any(|&t| t < 2) {
            return bad("t", "chain lengths must be at least 2");
        }
        if self.threads == Some(0) {
            return bad("threads", "must be at least 1");
        }
        match self.mode {
            Mode::Linear => {
                SingularProfile::new(self.profile, self.n)?;
                if !(self.sigma_sq > 0.0) {
                    return bad("sigma_sq", "must be positive");
                }
                if self.t.len() != 1 {
                    return bad("t", "linear mode takes a single chain length");
                }
                if self.wants(Estimator::Tilde) {
                    return bad("estimators", "tilde is only available in nn mode");
                }
                if self.estimators.is_empty() {
                    return bad("estimators", "select at least one estimator");
                }
            }
            Mode::Nn => {
                if self.d.is_empty() || self.d.contains(&0) {
                    return bad("d", "need at least one input dimension >= 1");
                }
                if self.m.is_empty() || self.m.contains(&0) {
                    return bad("m", "need at least one hidden width >= 1");
                }
                if !(self.sigma_sq >= 0.0) {
                    return bad("sigma_sq", "must be nonnegative");
                }
                if self.wants(Estimator::Lfv) && self.sigma_sq == 0.0 {
                    return bad("sigma_sq", "lfv needs a positive noise variance");
                }
                if self.estimators.iter().any(|e| !matches!(e, Estimator::Lfv | Estimator::Tilde)) {
                    return bad("estimators", "nn mode supports lfv and tilde");
                }
                if !(self.lr >= 0.0) {
                    return bad("lr", "must be nonnegative");
                }
                if !(self.init_sd >= 0.0) {
                    return bad("init_sd", "must be nonnegative");
                }
                for &t in &self.t {
                    let kept = t - (self.burn_in * t as f64).floor() as usize;
                    if kept < 2 {
                        return bad("burn_in", "leaves fewer than 2 retained steps");
                    }
                }
            }
            Mode::Selfcheck => {}
        }
        Ok(())
    }
}

/// Partially specified settings from a JSON file or command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub n: Option<usize>,
    pub alpha: Option<f64>,
    pub sigma_sq: Option<f64>,
    pub profile: Option<ProfileKind>,
    pub d: Option<Vec<usize>>,
    pub m: Option<Vec<usize>>,
    pub reps: Option<usize>,
    pub tilde_reps: Option<usize>,
    pub t: Option<Vec<usize>>,
    pub step: Option<f64>,
    pub burn_in: Option<f64>,
    pub seed: Option<u64>,
    pub estimators: Option<Vec<Estimator>>,
    pub kappa: Option<f64>,
    pub lr: Option<f64>,
    pub train_iters: Option<usize>,
    pub init_sd: Option<f64>,
    pub fixed_design: Option<bool>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

macro_rules! take_later {
    ($base:ident, $later:ident; $($f:ident),*) => {
        ConfigOverrides { $($f: $later.$f.or($base.$f)),* }
    };
}

impl ConfigOverrides {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            field: "config",
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config {
            field: "config",
            reason: format!("invalid JSON in {}: {e}", path.display()),
        })
    }

    /// Fields set in `later` win.
    pub fn merge(self, later: ConfigOverrides) -> ConfigOverrides {
        let base = self;
        take_later!(base, later; n, alpha, sigma_sq, profile, d, m, reps, tilde_reps, t, step,
            burn_in, seed, estimators, kappa, lr, train_iters, init_sd, fixed_design, threads, out)
    }

    /// Fills unset fields with the defaults of `mode` and validates.
    pub fn resolve(self, mode: Mode) -> Result<ExperimentConfig> {
        let o = self;
        let n_default = match mode {
            Mode::Nn => 1000,
            _ => 100,
        };
        let n = o.n.unwrap_or(n_default);
        let profile = o.profile.unwrap_or(ProfileKind::Intrinsic10);
        let mut cfg = match mode {
            Mode::Linear => ExperimentConfig::linear(n, profile),
            Mode::Nn => ExperimentConfig::nn(n),
            Mode::Selfcheck => ExperimentConfig::selfcheck(7),
        };
        cfg.profile = profile;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = o.$f { cfg.$f = v; })* };
        }
        set!(alpha, sigma_sq, d, m, reps, tilde_reps, t, step, burn_in, seed, kappa, lr, train_iters,
            init_sd, fixed_design);
        if let Some(e) = o.estimators {
            cfg.estimators = e.into_iter().collect();
        }
        cfg.threads = o.threads;
        cfg.out = o.out;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_defaults_follow_n() {
        let cfg = ConfigOverrides { n: Some(200), ..Default::default() }.resolve(Mode::Linear).unwrap();
        assert_eq!(cfg.t, vec![3000]);
        assert_eq!(cfg.step, 1.0 / 2000.0);
        assert_eq!(cfg.reps, 50);
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.estimators.len(), 8);
    }

    #[test]
    fn nn_defaults() {
        let cfg = ConfigOverrides::default().resolve(Mode::Nn).unwrap();
        assert_eq!((cfg.n, cfg.reps, cfg.tilde_reps), (1000, 20, 50));
        assert_eq!(cfg.t, vec![1000]);
        assert_eq!((cfg.step, cfg.burn_in, cfg.alpha, cfg.lr), (1e-5, 0.1, 1e-3, 0.1));
        assert_eq!(cfg.train_iters, 100);
    }

    #[test]
    fn later_overrides_win() {
        let file: ConfigOverrides = serde_json::from_str(r#"{"n": 50, "reps": 3, "profile": "inverse-sqrt"}"#).unwrap();
        let flags = ConfigOverrides { reps: Some(9), ..Default::default() };
        let cfg = file.merge(flags).resolve(Mode::Linear).unwrap();
        assert_eq!((cfg.n, cfg.reps, cfg.profile), (50, 9, ProfileKind::InverseSqrt));
    }

    #[test]
    fn unknown_json_field_rejected() {
        assert!(serde_json::from_str::<ConfigOverrides>(r#"{"nn": 3}"#).is_err());
    }

    #[test]
    fn usage_errors_name_the_field() {
        let err = ConfigOverrides { reps: Some(0), ..Default::default() }.resolve(Mode::Linear).unwrap_err();
        assert!(matches!(err, Error::Config { field: "reps", .. }));
        let err = ConfigOverrides { n: Some(5), ..Default::default() }.resolve(Mode::Linear).unwrap_err();
        assert!(matches!(err, Error::Config { field: "n", .. }));
        let err = ConfigOverrides { t: Some(vec![10, 20]), ..Default::default() }.resolve(Mode::Linear).unwrap_err();
        assert!(matches!(err, Error::Config { field: "t", .. }));
        let err = ConfigOverrides { sigma_sq: Some(0.0), ..Default::default() }.resolve(Mode::Nn).unwrap_err();
        assert!(matches!(err, Error::Config { field: "sigma_sq", .. }));
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::LINEAR {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert!("waic".parse::<Estimator>().is_err());
    }
}
