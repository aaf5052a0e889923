use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kv_levelset::{DerivativeForm, DescentConfig, Rasterization};
use crate::matops::BoundMode;

/// How the inclusion conductivity is updated in simultaneous recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaUpdate {
    /// σ₁ is kept at the root of `Φ` for every shape and the level set
    /// descends the reduced objective `J(D, σ₁(D))`.
    Reduced,
    /// One level-set step at fixed σ₁, then one safeguarded Newton step.
    Alternating,
    /// As `Alternating`, with projected steps that decrease `Φ` itself.
    Literal,
}

/// Mesh on which the NtD data of the monotonicity stages are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NtdMesh {
    Inversion,
    Data,
}

/// All run parameters. Text form: one `key = value` per line, `#` starts a
/// comment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub phantom: String,
    pub sigma0: f64,
    pub sigma1: f64,
    pub data_n: usize,
    pub inversion_n: usize,
    pub currents: usize,
    pub orthonormalize: bool,
    pub measurements: usize,
    pub ntd_mesh: NtdMesh,
    pub calibrate: bool,
    pub delta: f64,
    pub eta: f64,
    pub seed: Option<u64>,
    pub alpha: f64,
    pub cbar: f64,
    pub bounds: BoundMode,
    pub pixels: usize,
    pub balls: usize,
    pub ball_radius: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub init_threshold: f64,
    pub min_component: usize,
    pub descent: DescentConfig,
    pub sigma1_init: f64,
    pub sigma1_max: Option<f64>,
    pub newton_tol: f64,
    pub sigma_update: SigmaUpdate,
    pub samples: usize,
    pub exec: Exec,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phantom: "disk".into(),
            sigma0: 1.0,
            sigma1: 2.0,
            data_n: 128,
            inversion_n: 64,
            currents: 23,
            orthonormalize: true,
            measurements: 5,
            ntd_mesh: NtdMesh::Inversion,
            calibrate: true,
            delta: 0.0,
            eta: 0.0,
            seed: None,
            alpha: 0.5,
            cbar: 0.5,
            bounds: BoundMode::Full,
            pixels: 10,
            balls: 10,
            ball_radius: 0.05,
            qp_tol: 1e-8,
            qp_max_iter: 200_000,
            init_threshold: 0.5,
            min_component: 2,
            descent: DescentConfig::default(),
            sigma1_init: 1.5,
            sigma1_max: None,
            newton_tol: 1e-8,
            sigma_update: SigmaUpdate::Reduced,
            samples: 1024,
            exec: Exec::Rayon,
            output: PathBuf::from("out"),
        }
    }
}

pub const CONFIG_KEYS: [&str; 40] = [
    "phantom",
    "sigma0",
    "sigma1",
    "data_n",
    "inversion_n",
    "currents",
    "orthonormalize",
    "measurements",
    "ntd_mesh",
    "calibrate",
    "delta",
    "eta",
    "seed",
    "alpha",
    "cbar",
    "bounds",
    "pixels",
    "balls",
    "ball_radius",
    "qp_tol",
    "qp_max_iter",
    "init_threshold",
    "min_component",
    "dt_scale",
    "dt_shrink",
    "dt_min",
    "max_iter",
    "stop_tol",
    "stop_window",
    "reinit_every",
    "clearance",
    "rasterization",
    "derivative",
    "sigma1_init",
    "sigma1_max",
    "newton_tol",
    "sigma_update",
    "samples",
    "exec",
    "output",
];

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse(format!("invalid value '{v}' for '{key}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Parse(format!("invalid value '{v}' for '{key}'"))),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let d = &mut self.descent;
        match key.trim() {
            "phantom" => self.phantom = v.to_string(),
            "sigma0" => self.sigma0 = parse(key, v)?,
            "sigma1" => self.sigma1 = parse(key, v)?,
            "data_n" => self.data_n = parse(key, v)?,
            "inversion_n" => self.inversion_n = parse(key, v)?,
            "currents" => self.currents = parse(key, v)?,
            "orthonormalize" => self.orthonormalize = parse_bool(key, v)?,
            "measurements" => self.measurements = parse(key, v)?,
            "ntd_mesh" => {
                self.ntd_mesh = match v {
                    "inversion" => NtdMesh::Inversion,
                    "data" => NtdMesh::Data,
                    _ => return Err(Error::Parse(format!("invalid value '{v}' for '{key}'"))),
                }
            }
            "calibrate" => self.calibrate = parse_bool(key, v)?,
            "delta" => self.delta = parse(key, v)?,
            "eta" => self.eta = parse(key, v)?,
            "seed" => {
                self.seed = if v == "none" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "alpha" => self.alpha = parse(key, v)?,
            "cbar" => self.cbar = parse(key, v)?,
            "bounds" => {
                self.bounds = match v {
                    "full" => BoundMode::Full,
                    "simplified" => BoundMode::Simplified,
                    _ => return Err(Error::Parse(format!("invalid value '{v}' for '{key}'"))),
                }
            }
            "pixels" => self.pixels = parse(key, v)?,
            "balls" => self.balls = parse(key, v)?,
            "ball_radius" => self.ball_radius = parse(key, v)?,
            "qp_tol" => self.qp_tol = parse(key, v)?,
            "qp_max_iter" => self.qp_max_iter = parse(key, v)?,
            "init_threshold" => self.init_threshold = parse(key, v)?,
            "min_component" => self.min_component = parse(key, v)?,
            "dt_scale" => d.dt_scale = parse(key, v)?,
            "dt_shrink" => d.shrink = parse(key, v)?,
            "dt_min" => d.dt_min = parse(key, v)?,
            "max_iter" => d.max_iter = parse(key, v)?,
            "stop_tol" => d.stop_tol = parse(key, v)?,
            "stop_window" => d.stop_window = parse(key, v)?,
            "reinit_every" => d.reinit_every = parse(key, v)?,
            "clearance" => d.clearance = parse(key, v)?,
            "rasterization" => {
                d.rasterization = match v {
                    "centroid" => Rasterization::Centroid,
                    "area_fraction" => Rasterization::AreaFraction,
                    _ => return Err(Error::Parse(format!("invalid value '{v}' for '{key}'"))),
                }
            }
            "derivative" => {
                d.form = match v {
                    "distributed" => DerivativeForm::Distributed,
                    "literal" => DerivativeForm::Literal,
                    _ => return Err(Error::Parse(format!("invalid value '{v}' for '{key}'"))),
                }
            }
            "sigma1_init" => self.sigma1_init = parse(key, v)?,
            "sigma1_max" => {
                self.sigma1_max = if v == "auto" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "newton_tol" => self.newton_tol = parse(key, v)?,
            "sigma_update" => {
                self.sigma_update = match v {
                    "reduced" => SigmaUpdate::Reduced,
                    "alternating" => SigmaUpdate::Alternating,
                    "literal" => SigmaUpdate::Literal,
                    _ => return Err(Error::Parse(format!("invalid value '{v}' for '{key}'"))),
                }
            }
            "samples" => self.samples = parse(key, v)?,
            "exec" => {
                self.exec = match v {
                    "parallel" => Exec::Rayon,
                    "sequential" => Exec::Sequential,
                    _ => return Err(Error::Parse(format!("invalid value '{v}' for '{key}'"))),
                }
            }
            "output" => self.output = PathBuf::from(v),
            other => return Err(Error::Parse(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every assignment of a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn sigma1_max(&self) -> f64 {
        self.sigma1_max.unwrap_or(10.0 * self.sigma0)
    }

    pub fn noisy(&self) -> bool {
        self.delta > 0.0 || self.eta > 0.0
    }

    /// Seed for noise generation; required whenever noise is requested.
    pub fn noise_seed(&self) -> Result<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None if !self.noisy() => Ok(0),
            None => Err(Error::invalid("a seed is required for noisy runs")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        if self.inversion_n == 0 || self.data_n <= self.inversion_n {
            return fail("data grid must be finer than the inversion grid");
        }
        if !(self.sigma0 > 0.0 && self.sigma1 > 0.0) || self.sigma0 == self.sigma1 {
            return fail("conductivities must be positive and distinct");
        }
        if self.currents == 0 || self.measurements == 0 || self.pixels == 0 || self.balls == 0 {
            return fail("counts must be positive");
        }
        if !(self.delta >= 0.0 && self.eta >= 0.0) {
            return fail("noise levels must be non-negative");
        }
        let positive = [
            self.alpha,
            self.cbar,
            self.ball_radius,
            self.qp_tol,
            self.init_threshold,
            self.newton_tol,
        ];
        if positive.iter().any(|&x| !(x > 0.0)) || self.qp_max_iter == 0 || self.samples == 0 {
            return fail("tolerances and sizes must be positive");
        }
        if !(self.sigma1_init > self.sigma0 && self.sigma1_init <= self.sigma1_max()) {
            return fail("sigma1_init must lie in (sigma0, sigma1_max]");
        }
        self.noise_seed()?;
        self.descent.validate()
    }

    /// Canonical echo of every key, suitable for the run manifest and for
    /// reading back.
    pub fn to_text(&self) -> String {
        let d = &self.descent;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("phantom", self.phantom.clone());
        kv("sigma0", format!("{:?}", self.sigma0));
        kv("sigma1", format!("{:?}", self.sigma1));
        kv("data_n", self.data_n.to_string());
        kv("inversion_n", self.inversion_n.to_string());
        kv("currents", self.currents.to_string());
        kv("orthonormalize", self.orthonormalize.to_string());
        kv("measurements", self.measurements.to_string());
        kv(
            "ntd_mesh",
            match self.ntd_mesh {
                NtdMesh::Inversion => "inversion",
                NtdMesh::Data => "data",
            }
            .into(),
        );
        kv("calibrate", self.calibrate.to_string());
        kv("delta", format!("{:?}", self.delta));
        kv("eta", format!("{:?}", self.eta));
        kv("seed", self.seed.map_or("none".into(), |s| s.to_string()));
        kv("alpha", format!("{:?}", self.alpha));
        kv("cbar", format!("{:?}", self.cbar));
        kv(
            "bounds",
            match self.bounds {
                BoundMode::Full => "full",
                BoundMode::Simplified => "simplified",
            }
            .into(),
        );
        kv("pixels", self.pixels.to_string());
        kv("balls", self.balls.to_string());
        kv("ball_radius", format!("{:?}", self.ball_radius));
        kv("qp_tol", format!("{:?}", self.qp_tol));
        kv("qp_max_iter", self.qp_max_iter.to_string());
        kv("init_threshold", format!("{:?}", self.init_threshold));
        kv("min_component", self.min_component.to_string());
        kv("dt_scale", format!("{:?}", d.dt_scale));
        kv("dt_shrink", format!("{:?}", d.shrink));
        kv("dt_min", format!("{:?}", d.dt_min));
        kv("max_iter", d.max_iter.to_string());
        kv("stop_tol", format!("{:?}", d.stop_tol));
        kv("stop_window", d.stop_window.to_string());
        kv("reinit_every", d.reinit_every.to_string());
        kv("clearance", format!("{:?}", d.clearance));
        kv(
            "rasterization",
            match d.rasterization {
                Rasterization::Centroid => "centroid",
                Rasterization::AreaFraction => "area_fraction",
            }
            .into(),
        );
        kv(
            "derivative",
            match d.form {
                DerivativeForm::Distributed => "distributed",
                DerivativeForm::Literal => "literal",
            }
            .into(),
        );
        kv("sigma1_init", format!("{:?}", self.sigma1_init));
        kv(
            "sigma1_max",
            self.sigma1_max.map_or("auto".into(), |x| format!("{x:?}")),
        );
        kv("newton_tol", format!("{:?}", self.newton_tol));
        kv(
            "sigma_update",
            match self.sigma_update {
                SigmaUpdate::Reduced => "reduced",
                SigmaUpdate::Alternating => "alternating",
                SigmaUpdate::Literal => "literal",
            }
            .into(),
        );
        kv("samples", self.samples.to_string());
        kv(
            "exec",
            match self.exec {
                Exec::Rayon => "parallel",
                Exec::Sequential => "sequential",
            }
            .into(),
        );
        kv("output", self.output.display().to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parses_comments_and_overrides() {
        let text = "# experiment\nphantom = square  # trailing\n\ndelta = 0.1\nseed = 7\nbounds = simplified\nrasterization = area_fraction\n";
        let mut c = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(c.phantom, "square");
        assert_eq!(c.delta, 0.1);
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.bounds, BoundMode::Simplified);
        assert_eq!(c.descent.rasterization, Rasterization::AreaFraction);
        c.set("delta", "0.2").unwrap();
        assert_eq!(c.delta, 0.2);
        c.validate().unwrap();
        let mut edited = c.clone();
        edited.set("seed", "none").unwrap();
        assert!(edited.validate().is_err());
    }

    #[test]
    fn every_listed_key_is_settable() {
        let reference = ExperimentConfig::default().to_text();
        let mut c = ExperimentConfig::default();
        for line in reference.lines() {
            let (k, v) = line.split_once(" = ").unwrap();
            assert!(CONFIG_KEYS.contains(&k), "{k}");
            c.set(k, v).unwrap();
        }
        assert_eq!(reference.lines().count(), CONFIG_KEYS.len());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_text("colour = blue").is_err());
        assert!(ExperimentConfig::from_text("delta 0.1").is_err());
        assert!(ExperimentConfig::from_text("pixels = many").is_err());
        let c = ExperimentConfig::from_text("data_n = 64").unwrap();
        assert!(c.validate().is_err());
    }
}
