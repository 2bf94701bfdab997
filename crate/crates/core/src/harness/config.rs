use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audit::{AssumptionOptions, EventGrid};
use crate::error::{Error, Result};
use crate::featurize::{Activation, Covariates, DataSpec, FeatureSpec, Target, WeightDist};
use crate::solver::{LpOptions, SolverOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Fig1,
    Scaling,
    Latent,
    Audit,
    Solve,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig1 => "fig1",
            Experiment::Scaling => "scaling",
            Experiment::Latent => "latent",
            Experiment::Audit => "audit",
            Experiment::Solve => "solve",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSettings {
    pub hermite_m_max: usize,
    pub quad_order: usize,
    pub ell: usize,
    pub c0: f64,
    /// Radius at which the small-ball probability is reported.
    pub eta: f64,
    pub smallball_samples: usize,
    pub directions: usize,
    pub assumptions: AssumptionOptions,
    pub grid: EventGrid,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self {
            hermite_m_max: 12,
            quad_order: 60,
            ell: 1,
            c0: 0.1,
            eta: 0.1,
            smallball_samples: 100_000,
            directions: 200,
            assumptions: AssumptionOptions::default(),
            grid: EventGrid::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub d: usize,
    pub n: usize,
    pub p_list: Vec<f64>,
    #[serde(rename = "N_list")]
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Feature noise standard deviation.
    pub gamma: f64,
    pub activation: Activation,
    pub weight_dist: WeightDist,
    pub covariates: Covariates,
    /// Activation of the ridge target `f*(x) = sigma*(x_1)`.
    pub target_activation: Activation,
    #[serde(rename = "M_test")]
    pub m_test: usize,
    #[serde(rename = "N_ref")]
    pub n_ref: usize,
    /// Monte Carlo size for kernels without a closed form.
    pub kernel_mc_samples: usize,
    pub solver: SolverOptions,
    pub lp: LpOptions,
    pub audit: AuditSettings,
    pub output_path: String,
}

fn powers_of_two(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

impl ExperimentConfig {
    /// Defaults for each experiment. `fig1` uses `d = 30`, `n = 150`, 20 seeds,
    /// `p in {1, 1.25, 1.5, 2}` and `N = 2^6 .. 2^13`.
    pub fn defaults(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            d: 30,
            n: 150,
            p_list: vec![1.0, 1.25, 1.5, 2.0],
            n_list: powers_of_two(6, 13),
            seeds: (0..20).collect(),
            gamma: 0.0,
            activation: Activation::Relu,
            weight_dist: WeightDist::GaussianIsotropic,
            covariates: Covariates::UniformSphereSqrtD,
            target_activation: Activation::Relu,
            m_test: 20_000,
            n_ref: 1 << 14,
            kernel_mc_samples: crate::featurize::DEFAULT_MC_SAMPLES,
            solver: SolverOptions::default(),
            lp: LpOptions::default(),
            audit: AuditSettings::default(),
            output_path: format!("out/{}", experiment.name()),
        };
        match experiment {
            Experiment::Fig1 => base,
            Experiment::Scaling => Self { d: 10, n: 50, p_list: vec![2.0], n_list: powers_of_two(8, 13), seeds: (0..10).collect(), ..base },
            Experiment::Latent => Self {
                d: 10,
                n: 50,
                p_list: vec![2.0],
                n_list: powers_of_two(8, 12),
                seeds: (0..10).collect(),
                gamma: 1.0,
                activation: Activation::Identity,
                ..base
            },
            Experiment::Audit => Self { d: 5, n: 20, p_list: vec![2.0], n_list: vec![256], seeds: vec![0], ..base },
            Experiment::Solve => Self { p_list: vec![2.0], n_list: vec![1024], seeds: vec![0], ..base },
        }
    }

    /// Defaults for `experiment`, overlaid with `file` (a JSON object), then with
    /// `key=value` assignments (dotted keys reach nested fields; values parse as
    /// JSON and fall back to strings). A `seed` replaces the seed list with
    /// `seed, seed + 1, ...` of the same length.
    pub fn resolve(experiment: Experiment, file: Option<Value>, sets: &[String], seed: Option<u64>) -> Result<Self> {
        let mut v = serde_json::to_value(Self::defaults(experiment))?;
        if let Some(f) = file {
            if !f.is_object() {
                return Err(Error::Config("config file must hold a JSON object".into()));
            }
            merge(&mut v, f);
        }
        v["experiment"] = serde_json::to_value(experiment)?;
        for s in sets {
            let (key, raw) = s.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {s:?}")))?;
            let val = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
            set_path(&mut v, key, val)?;
        }
        let mut cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(s) = seed {
            let k = cfg.seeds.len().max(1) as u64;
            cfg.seeds = (s..s + k).collect();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.p_list.is_empty() || self.n_list.is_empty() || self.seeds.is_empty() {
            return bad("p_list, N_list and seeds must be nonempty");
        }
        if self.n_list.windows(2).any(|w| w[1] < w[0]) {
            return bad("N_list must be sorted ascending");
        }
        if self.n_list[0] == 0 || self.d == 0 || self.n == 0 {
            return bad("d, n and every N must be positive");
        }
        if self.p_list.iter().any(|p| !(p.is_finite() && *p >= 1.0)) {
            return bad("every p must be finite and >= 1");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be finite and >= 0");
        }
        if self.m_test < 100 {
            return Err(Error::InvalidM(self.m_test));
        }
        self.solver.validate()
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec::new(self.activation.clone(), self.weight_dist, self.gamma)
    }

    /// Ridge target along the first coordinate.
    pub fn data_spec(&self) -> Result<DataSpec> {
        let mut w_star = vec![0.0; self.d];
        w_star[0] = 1.0;
        DataSpec::new(self.d, self.covariates, Target::Ridge { w_star, activation: self.target_activation.clone() })
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(v: &mut Value, key: &str, val: Value) -> Result<()> {
    let mut cur = v;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| Error::Config(format!("{key}: not an object at {part}")))?;
        if !obj.contains_key(*part) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), val);
            return Ok(());
        }
        cur = obj.get_mut(*part).expect("checked");
    }
    Ok(())
}
