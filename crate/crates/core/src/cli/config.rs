//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Hyperparams, ModelConfig};
use crate::tensor::DataDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Cartesian,
    Radial,
    Full,
}

impl MaskKind {
    fn name(self) -> &'static str {
        match self {
            MaskKind::Cartesian => "cartesian",
            MaskKind::Radial => "radial",
            MaskKind::Full => "full",
        }
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartesian" => Ok(MaskKind::Cartesian),
            "radial" => Ok(MaskKind::Radial),
            "full" => Ok(MaskKind::Full),
            _ => Err(Error::Config(format!("unknown mask kind '{s}' (cartesian, radial, full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Emit {
    pub png: bool,
    pub csv: bool,
    pub trace: bool,
}

impl FromStr for Emit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut e = Emit::default();
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            match item {
                "png" => e.png = true,
                "csv" => e.csv = true,
                "trace" => e.trace = true,
                "none" => {}
                _ => return Err(Error::Config(format!("unknown emit flag '{item}' (png, csv, trace)"))),
            }
        }
        Ok(e)
    }
}

impl Emit {
    fn render(&self) -> String {
        let mut v = Vec::new();
        if self.png {
            v.push("png");
        }
        if self.csv {
            v.push("csv");
        }
        if self.trace {
            v.push("trace");
        }
        if v.is_empty() {
            "none".into()
        } else {
            v.join(",")
        }
    }
}

/// Everything a command needs; starts from the desk-scale defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    pub n_f: usize,
    pub n_p: usize,
    pub n_fr: usize,
    pub noise_std: f64,
    pub phantom_seed: u64,
    pub ring_period: f64,
    /// Input k-space; defaults to `<out>/kspace.tens`.
    pub kspace: Option<PathBuf>,
    /// Reference image series for metrics; defaults to `<out>/image.tens` when present.
    pub truth: Option<PathBuf>,
    /// Estimates scored by `evaluate`.
    pub estimates: Vec<PathBuf>,
    pub mask: Option<PathBuf>,
    pub mask_kind: MaskKind,
    pub acceleration: f64,
    /// Radial spokes per frame; derived from `acceleration` when absent.
    pub spokes: Option<usize>,
    pub mask_seed: u64,
    pub upsilon: usize,
    pub m: usize,
    pub q: usize,
    pub inner_dims: Vec<usize>,
    pub n_l: usize,
    pub hp: Hyperparams,
    /// `λ3` as given; `None` scales the default by the data magnitude.
    pub lambda3: Option<f64>,
    pub seeds: Vec<u64>,
    pub emit: Emit,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("out"),
            n_f: 64,
            n_p: 64,
            n_fr: 32,
            noise_std: 0.005,
            phantom_seed: 0,
            ring_period: 8.0,
            kspace: None,
            truth: None,
            estimates: Vec::new(),
            mask: None,
            mask_kind: MaskKind::Cartesian,
            acceleration: 4.0,
            spokes: None,
            mask_seed: 0,
            upsilon: 6,
            m: 1,
            q: 2,
            inner_dims: vec![6],
            n_l: 16,
            hp: Hyperparams::default(),
            lambda3: None,
            seeds: vec![0],
            emit: Emit { png: false, csv: true, trace: true },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses config text on top of the defaults. `#` starts a comment; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.root_message())))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let hp = &mut self.hp;
        match key {
            "out" => self.out = PathBuf::from(v),
            "n_f" => self.n_f = parse(key, v)?,
            "n_p" => self.n_p = parse(key, v)?,
            "n_fr" => self.n_fr = parse(key, v)?,
            "noise_std" => self.noise_std = parse(key, v)?,
            "phantom_seed" => self.phantom_seed = parse(key, v)?,
            "ring_period" => self.ring_period = parse(key, v)?,
            "kspace" => self.kspace = Some(PathBuf::from(v)),
            "truth" => self.truth = Some(PathBuf::from(v)),
            "estimate" => self.estimates = v.split(',').map(|s| PathBuf::from(s.trim())).collect(),
            "mask" => self.mask = Some(PathBuf::from(v)),
            "mask_kind" => self.mask_kind = v.parse()?,
            "acceleration" => self.acceleration = parse(key, v)?,
            "spokes" => self.spokes = Some(parse(key, v)?),
            "mask_seed" => self.mask_seed = parse(key, v)?,
            "upsilon" => self.upsilon = parse(key, v)?,
            "m" => self.m = parse(key, v)?,
            "q" => self.q = parse(key, v)?,
            "inner_dims" => self.inner_dims = parse_list(key, v)?,
            "n_l" => self.n_l = parse(key, v)?,
            "lambda1" => hp.lambda1 = parse(key, v)?,
            "lambda2" => hp.lambda2 = parse(key, v)?,
            "lambda3" => self.lambda3 = Some(parse(key, v)?),
            "lambda4" => hp.lambda4 = parse(key, v)?,
            "tau_x" => hp.tau_x = parse(key, v)?,
            "tau_z" => hp.tau_z = parse(key, v)?,
            "tau_a" => hp.tau_a = parse(key, v)?,
            "tau_b" => hp.tau_b = parse(key, v)?,
            "gamma0" => hp.gamma0 = parse(key, v)?,
            "zeta" => hp.zeta = parse(key, v)?,
            "max_outer" => hp.max_outer = parse(key, v)?,
            "tol_rel" => hp.tol_rel = parse(key, v)?,
            "b_tol" => hp.b_tol = parse(key, v)?,
            "b_max_iter" => hp.b_max_iter = parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "emit" => self.emit = v.parse()?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn dims(&self) -> Result<DataDims> {
        DataDims::new(self.n_f, self.n_p, self.n_fr)
    }

    pub fn model(&self) -> Result<ModelConfig> {
        ModelConfig::new(self.m, self.q, self.inner_dims.clone(), self.n_l, self.dims()?)
    }

    pub fn kspace_path(&self) -> PathBuf {
        self.kspace.clone().unwrap_or_else(|| self.out.join("kspace.tens"))
    }

    pub fn mask_path(&self) -> PathBuf {
        self.mask.clone().unwrap_or_else(|| self.out.join("mask.tens"))
    }

    /// Explicit reference, else the generated image when it exists.
    pub fn truth_path(&self) -> Option<PathBuf> {
        self.truth.clone().or_else(|| {
            let p = self.out.join("image.tens");
            p.exists().then_some(p)
        })
    }

    /// Every setting as `key = value` lines, parseable by [`RunConfig::parse`].
    pub fn render(&self) -> String {
        let hp = &self.hp;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("out", self.out.display().to_string());
        kv("n_f", self.n_f.to_string());
        kv("n_p", self.n_p.to_string());
        kv("n_fr", self.n_fr.to_string());
        kv("noise_std", self.noise_std.to_string());
        kv("phantom_seed", self.phantom_seed.to_string());
        kv("ring_period", self.ring_period.to_string());
        if let Some(p) = &self.kspace {
            kv("kspace", p.display().to_string());
        }
        if let Some(p) = &self.truth {
            kv("truth", p.display().to_string());
        }
        if !self.estimates.is_empty() {
            kv("estimate", self.estimates.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","));
        }
        if let Some(p) = &self.mask {
            kv("mask", p.display().to_string());
        }
        kv("mask_kind", self.mask_kind.name().into());
        kv("acceleration", self.acceleration.to_string());
        if let Some(sp) = self.spokes {
            kv("spokes", sp.to_string());
        }
        kv("mask_seed", self.mask_seed.to_string());
        kv("upsilon", self.upsilon.to_string());
        kv("m", self.m.to_string());
        kv("q", self.q.to_string());
        kv("inner_dims", join(&self.inner_dims));
        kv("n_l", self.n_l.to_string());
        kv("lambda1", hp.lambda1.to_string());
        kv("lambda2", hp.lambda2.to_string());
        if let Some(l3) = self.lambda3 {
            kv("lambda3", l3.to_string());
        }
        kv("lambda4", hp.lambda4.to_string());
        kv("tau_x", hp.tau_x.to_string());
        kv("tau_z", hp.tau_z.to_string());
        kv("tau_a", hp.tau_a.to_string());
        kv("tau_b", hp.tau_b.to_string());
        kv("gamma0", hp.gamma0.to_string());
        kv("zeta", hp.zeta.to_string());
        kv("max_outer", hp.max_outer.to_string());
        kv("tol_rel", hp.tol_rel.to_string());
        kv("b_tol", hp.b_tol.to_string());
        kv("b_max_iter", hp.b_max_iter.to_string());
        kv("seeds", join(&self.seeds));
        kv("emit", self.emit.render());
        s
    }
}

impl Error {
    fn root_message(&self) -> String {
        match self.root() {
            Error::Config(m) => m.clone(),
            e => e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let cfg = RunConfig::parse("# desk run\nn_f = 32\nseeds = 1, 2,3\nlambda1=0.5 # inline\nemit = png,trace\n").unwrap();
        assert_eq!(cfg.n_f, 32);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.hp.lambda1, 0.5);
        assert!(cfg.emit.png && cfg.emit.trace && !cfg.emit.csv);

        let err = RunConfig::parse("lamda1 = 0.5").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("lamda1")), "{err}");
        assert!(matches!(RunConfig::parse("n_f = abc"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("n_f 32"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("mask_kind = spiral"), Err(Error::Config(_))));
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = RunConfig::parse("mask_kind = radial\nspokes = 5\nlambda3 = 0.02\ninner_dims = 2,6\nq = 3").unwrap();
        cfg.truth = Some(PathBuf::from("t.tens"));
        let again = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(cfg, again);
    }
}
