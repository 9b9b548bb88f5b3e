//! Flat `key = value` experiment configuration.
//!
//! Keys mirror the run configuration field names. Every key is optional;
//! values from the file are overridden by command-line flags, and anything
//! left unset takes the library default.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use afford_core::envs::EnvKind;
use afford_core::predictor::{Arch, ConvWidths};
use afford_core::trainer::{default_checkpoints, Method, RunConfig};
use afford_core::GridShape;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::stats::DEFAULT_REPS;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub env: Option<String>,
    pub envs: Option<Vec<String>>,
    pub method: Option<String>,
    pub methods: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub budget: Option<usize>,
    pub warmup: Option<usize>,
    pub eval_checkpoints: Option<Vec<usize>>,
    pub eval_episodes: Option<usize>,
    pub c_expl: Option<f64>,
    pub c_eval: Option<f64>,
    pub thompson: Option<bool>,
    pub random_fraction: Option<f64>,
    pub boltzmann_temperature: Option<f64>,
    pub ensemble: Option<usize>,
    pub grid: Option<String>,
    pub orientations: Option<usize>,
    pub arch: Option<String>,
    pub widths: Option<[usize; 3]>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub updates_per_interaction: Option<usize>,
    pub independent_batches: Option<bool>,
    pub p_hi: Option<f64>,
    pub p_lo: Option<f64>,
    pub edge_band: Option<[f64; 2]>,
    pub n_objects: Option<usize>,
    pub handle_p: Option<f64>,
    pub border: Option<usize>,
    pub bootstrap_reps: Option<usize>,
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:expr, $over:expr, $($f:ident),+ $(,)?) => {
        Settings { $($f: $over.$f.or($base.$f)),+ }
    };
}

impl Settings {
    pub fn parse(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|source| Error::ConfigFile { path: path.into(), source })
    }

    /// Values set in `over` win.
    pub fn overlay(self, over: Settings) -> Settings {
        overlay!(
            self, over, env, envs, method, methods, seed, seeds, budget, warmup, eval_checkpoints, eval_episodes,
            c_expl, c_eval, thompson, random_fraction, boltzmann_temperature, ensemble, grid, orientations, arch,
            widths, learning_rate, batch_size, updates_per_interaction, independent_batches, p_hi, p_lo, edge_band,
            n_objects, handle_p, border, bootstrap_reps, out,
        )
    }

    pub fn env_kind(&self) -> Result<EnvKind> {
        parse_named(self.env.as_deref().unwrap_or("shape_grasp"))
    }

    pub fn method_kind(&self) -> Result<Method> {
        parse_named(self.method.as_deref().unwrap_or("ida"))
    }

    /// Envs of a sweep: `envs`, else the single `env` (default shape_grasp).
    pub fn env_list(&self) -> Result<Vec<EnvKind>> {
        match &self.envs {
            Some(list) => list.iter().map(|s| parse_named(s)).collect(),
            None => Ok(vec![self.env_kind()?]),
        }
    }

    /// Methods of a sweep: `methods`, else `method`, else every method.
    pub fn method_list(&self) -> Result<Vec<Method>> {
        match (&self.methods, &self.method) {
            (Some(list), _) => list.iter().map(|s| parse_named(s)).collect(),
            (None, Some(one)) => Ok(vec![parse_named(one)?]),
            (None, None) => Ok(Method::ALL.to_vec()),
        }
    }

    pub fn base_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// `seeds` consecutive seeds starting at `seed`.
    pub fn seed_list(&self) -> Result<Vec<u64>> {
        let n = self.seeds.unwrap_or(1);
        if n == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        Ok((0..n as u64).map(|i| self.base_seed() + i).collect())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn reps(&self) -> usize {
        self.bootstrap_reps.unwrap_or(DEFAULT_REPS)
    }

    /// Full run configuration for one (method, env, seed), validated.
    pub fn run_config(&self, method: Method, env: EnvKind, seed: u64) -> Result<RunConfig> {
        let mut cfg = RunConfig::new(method, env, seed);
        let m = &mut cfg.model;
        if let Some(g) = &self.grid {
            m.grid = parse_grid(g)?;
        }
        if let Some(q) = self.orientations {
            m.orientations = q;
        }
        if let Some(n) = self.ensemble {
            m.n_heads = n;
        }
        if let Some(a) = &self.arch {
            m.arch = parse_named::<Arch>(a)?;
        }
        if let Some([stem, down, bottleneck]) = self.widths {
            m.widths = ConvWidths { stem, down, bottleneck };
        }
        set(&mut m.learning_rate, self.learning_rate);
        set(&mut m.batch_size, self.batch_size);
        set(&mut m.updates_per_interaction, self.updates_per_interaction);
        set(&mut m.independent_batches, self.independent_batches);

        let e = &mut cfg.env;
        e.grid = cfg.model.grid;
        e.orientations = cfg.model.orientations;
        set(&mut e.p_hi, self.p_hi);
        set(&mut e.p_lo, self.p_lo);
        if let Some([lo, hi]) = self.edge_band {
            e.edge_band = (lo, hi);
        }
        set(&mut e.n_objects, self.n_objects);
        set(&mut e.handle_p, self.handle_p);
        set(&mut e.border, self.border);

        let p = &mut cfg.policy;
        set(&mut p.c_expl, self.c_expl);
        set(&mut p.c_eval, self.c_eval);
        set(&mut p.thompson, self.thompson);
        set(&mut p.random_fraction, self.random_fraction);
        set(&mut p.boltzmann_temperature, self.boltzmann_temperature);

        set(&mut cfg.budget, self.budget);
        set(&mut cfg.warmup, self.warmup);
        set(&mut cfg.eval_episodes, self.eval_episodes);
        cfg.eval_checkpoints = match &self.eval_checkpoints {
            Some(c) => c.clone(),
            None => default_checkpoints(cfg.budget),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_named<T: FromStr<Err = afford_core::Error>>(s: &str) -> Result<T> {
    s.trim().parse().map_err(Error::Core)
}

/// `HxW`, or a single number for a square grid.
pub fn parse_grid(s: &str) -> Result<GridShape> {
    let bad = || Error::Config(format!("bad grid `{s}`; expected HxW or N"));
    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok(GridShape::new(num(h)?, num(w)?)),
        None => {
            let n = num(s)?;
            Ok(GridShape::new(n, n))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_library_defaults() {
        let s = Settings::parse("").unwrap();
        let cfg = s.run_config(Method::Ida, EnvKind::ShapeGrasp, 4).unwrap();
        assert_eq!(cfg, RunConfig::new(Method::Ida, EnvKind::ShapeGrasp, 4));
    }

    #[test]
    fn keys_reach_the_run_config() {
        let s = Settings::parse(
            r#"
            env = "drawer_toy"
            budget = 60
            warmup = 5
            grid = "16x24"
            orientations = 4
            ensemble = 3
            arch = "tabular"
            learning_rate = 1e-3
            c_expl = 0.5
            p_lo = 0.1
            edge_band = [0.5, 1.5]
            eval_checkpoints = [30, 60]
            "#,
        )
        .unwrap();
        let cfg = s.run_config(Method::JsdOnly, s.env_kind().unwrap(), 1).unwrap();
        assert_eq!(cfg.env.kind, EnvKind::DrawerToy);
        assert_eq!((cfg.budget, cfg.warmup), (60, 5));
        assert_eq!(cfg.model.grid, GridShape::new(16, 24));
        assert_eq!(cfg.env.grid, cfg.model.grid);
        assert_eq!((cfg.model.orientations, cfg.env.orientations), (4, 4));
        assert_eq!((cfg.model.n_heads, cfg.model.arch), (3, Arch::Tabular));
        assert_eq!(cfg.model.learning_rate, 1e-3);
        assert_eq!(cfg.policy.c_expl, 0.5);
        assert_eq!((cfg.env.p_lo, cfg.env.edge_band), (0.1, (0.5, 1.5)));
        assert_eq!(cfg.eval_checkpoints, vec![30, 60]);
    }

    #[test]
    fn default_checkpoints_follow_the_budget() {
        let s = Settings { budget: Some(60), ..Settings::default() };
        assert_eq!(s.run_config(Method::Random, EnvKind::ShapeGrasp, 0).unwrap().eval_checkpoints, vec![25, 50, 60]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Settings::parse("budgte = 3").is_err());
        assert!(Settings::parse("budget = \"many\"").is_err());
    }

    #[test]
    fn overlay_prefers_the_override() {
        let file = Settings { budget: Some(100), seed: Some(3), ..Settings::default() };
        let flags = Settings { budget: Some(40), ..Settings::default() };
        let s = file.overlay(flags);
        assert_eq!((s.budget, s.seed), (Some(40), Some(3)));
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let zero = Settings { budget: Some(0), ..Settings::default() };
        let err = zero.run_config(Method::Ida, EnvKind::ShapeGrasp, 0).unwrap_err();
        assert!(err.is_usage(), "{err}");
        let bad_env = Settings { env: Some("kitchen".into()), ..Settings::default() };
        assert!(bad_env.env_kind().unwrap_err().is_usage());
        let bad_arch = Settings { arch: Some("mlp".into()), ..Settings::default() };
        assert!(bad_arch.run_config(Method::Ida, EnvKind::ShapeGrasp, 0).unwrap_err().is_usage());
    }

    #[test]
    fn lists_and_seeds() {
        let s = Settings { methods: Some(vec!["ida".into(), "random".into()]), seed: Some(10), seeds: Some(3), ..Settings::default() };
        assert_eq!(s.method_list().unwrap(), vec![Method::Ida, Method::Random]);
        assert_eq!(s.seed_list().unwrap(), vec![10, 11, 12]);
        assert_eq!(s.env_list().unwrap(), vec![EnvKind::ShapeGrasp]);
        let both = Settings { envs: Some(vec!["shape_grasp".into(), "drawer_toy".into()]), ..Settings::default() };
        assert_eq!(both.env_list().unwrap(), EnvKind::ALL.to_vec());
        assert!(Settings { seeds: Some(0), ..Settings::default() }.seed_list().is_err());
    }

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("32").unwrap(), GridShape::new(32, 32));
        assert_eq!(parse_grid("16x8").unwrap(), GridShape::new(16, 8));
        assert!(parse_grid("16x").is_err());
    }
}
