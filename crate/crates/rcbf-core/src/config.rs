//! Experiment configuration: a line-oriented `key = value` format with
//! `[section]` headers and `#` comments. All physical values are SI.
//!
//! Sections and keys:
//!
//! ```text
//! [experiment]  name, seed
//! [system]      kind = scalar | segway; segway params: wheel_mass, body_mass,
//!               body_inertia, body_com_length, wheel_radius, gravity,
//!               viscous_friction
//! [alpha]       kind = linear | cubic; c
//! [filter]      kind = none | cbf | rcbf | issf | tunable | mrcbf
//!               rcbf: gamma1, gamma2        issf: eps
//!               tunable: gamma1, gamma2, c1, c2
//!               mrcbf: delta, plus either explicit l_lfh, l_lgh, l_alphah or
//!               lip_min, lip_max (vectors), lip_samples for sampled estimates
//! [compare]     same keys as [filter]; optional second filter
//! [nominal]     kind = zero | linear; gain = row-major m×n comma list
//! [estimate]    kind = exact | constant_offset | inward_gradient |
//!               random_bounded; offset (vector), delta, seed
//! [disturbance] kind = none | constant | worst_case | random_bounded;
//!               d (vector), dbar, seed
//! [sim]         dt, horizon, escape_radius, record_stride, x0 (vector)
//! [sweep]       variable = estimate_delta | disturbance_dbar; values (list)
//! [certify]     grid_min, grid_max (vectors), grid_points (counts) or
//!               grid_step (scalar, 1-D); zero_tol (optional)
//! [thresholds]  beta, samples, box_min, box_max (vectors)
//! [output]      dir, prefix
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::barrier::Barrier;
use crate::classk::ClassKappa;
use crate::error::{Error, Result};
use crate::filter::{estimate_lipschitz, BoxRegion, FilterKind, MrcbfParams};
use crate::sim::{nominal_linear, nominal_zero, Controller, SimConfig};
use crate::system::{lie_derivatives, ControlAffineSystem, State};
use crate::systems::{default_segway_gain, scalar_example, segway, SegwayParams};
use crate::uncertainty::{DisturbanceModel, EstimateModel};
use crate::{robustness::RobustnessFunction, system::Input};

#[derive(Debug, Clone, PartialEq)]
pub enum SystemConfig {
    Scalar,
    Segway(SegwayParams),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlphaConfig {
    Linear { c: f64 },
    Cubic { c: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LipschitzSource {
    Explicit { l_lfh: f64, l_lgh: f64, l_alphah: f64 },
    Sampled { lo: Vec<f64>, hi: Vec<f64>, samples: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterConfig {
    None,
    Cbf,
    Rcbf { gamma1: f64, gamma2: f64 },
    Issf { eps: f64 },
    Tunable { gamma1: f64, gamma2: f64, c1: f64, c2: f64 },
    Mrcbf { delta: f64, lipschitz: LipschitzSource },
}

impl FilterConfig {
    pub fn label(&self) -> &'static str {
        match self {
            FilterConfig::None => "nominal",
            FilterConfig::Cbf => "cbf",
            FilterConfig::Rcbf { .. } => "rcbf",
            FilterConfig::Issf { .. } => "issf",
            FilterConfig::Tunable { .. } => "tunable",
            FilterConfig::Mrcbf { .. } => "mrcbf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NominalConfig {
    Zero,
    Linear { gain: Vec<f64> },
    SegwayDefaultGain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    EstimateDelta,
    DisturbanceDbar,
}

impl SweepVariable {
    pub fn label(&self) -> &'static str {
        match self {
            SweepVariable::EstimateDelta => "estimate_delta",
            SweepVariable::DisturbanceDbar => "disturbance_dbar",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyConfig {
    pub grid_min: Vec<f64>,
    pub grid_max: Vec<f64>,
    pub grid_points: Vec<usize>,
    pub zero_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdsConfig {
    pub beta: f64,
    pub samples: usize,
    pub box_min: Vec<f64>,
    pub box_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub system: SystemConfig,
    pub alpha: AlphaConfig,
    pub filter: FilterConfig,
    pub compare: Option<FilterConfig>,
    pub nominal: NominalConfig,
    pub estimate: EstimateConfig,
    pub disturbance: DisturbanceConfig,
    pub dt: f64,
    pub horizon: f64,
    pub escape_radius: f64,
    pub record_stride: usize,
    pub x0: Vec<f64>,
    pub sweep: Option<SweepConfig>,
    pub certify: Option<CertifyConfig>,
    pub thresholds: Option<ThresholdsConfig>,
    pub out_dir: String,
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimateConfig {
    Exact,
    ConstantOffset { offset: Vec<f64> },
    InwardGradient { delta: f64 },
    RandomBounded { delta: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceConfig {
    None,
    Constant { d: Vec<f64> },
    WorstCase { dbar: f64 },
    RandomBounded { dbar: f64, seed: u64 },
}

// ---------------------------------------------------------------------------
// parsing

struct RawSection {
    lines: BTreeMap<String, (usize, String)>,
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, RawSection>> {
    let mut sections: BTreeMap<String, RawSection> = BTreeMap::new();
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(Error::Config(format!(
                    "line {lineno}: malformed section header '{line}'"
                )));
            }
            current = line[1..line.len() - 1].trim().to_lowercase();
            sections.entry(current.clone()).or_insert(RawSection {
                lines: BTreeMap::new(),
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {lineno}: expected 'key = value', got '{line}'"))
        })?;
        if current.is_empty() {
            return Err(Error::Config(format!(
                "line {lineno}: key '{}' appears before any [section]",
                key.trim()
            )));
        }
        let section = sections.get_mut(&current).unwrap();
        let key = key.trim().to_lowercase();
        if section
            .lines
            .insert(key.clone(), (lineno, value.trim().to_string()))
            .is_some()
        {
            return Err(Error::Config(format!(
                "line {lineno}: duplicate key '{key}' in [{current}]"
            )));
        }
    }
    Ok(sections)
}

struct SectionReader<'a> {
    name: &'a str,
    raw: Option<&'a RawSection>,
    used: std::cell::RefCell<Vec<String>>,
}

impl<'a> SectionReader<'a> {
    fn get(&self, key: &str) -> Option<&'a str> {
        let v = self.raw.and_then(|s| s.lines.get(key)).map(|(_, v)| v.as_str());
        if v.is_some() {
            self.used.borrow_mut().push(key.to_string());
        }
        v
    }

    fn require(&self, key: &str) -> Result<&'a str> {
        self.get(key).ok_or_else(|| {
            Error::Config(format!("missing key '{key}' in section [{}]", self.name))
        })
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>().map_err(|e| {
                    Error::Config(format!("[{}] {key} = '{v}': {e}", self.name))
                })
            })
            .transpose()
    }

    fn f64_req(&self, key: &str) -> Result<f64> {
        self.require(key)?;
        Ok(self.f64(key)?.unwrap())
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|e| Error::Config(format!("[{}] {key} = '{v}': {e}", self.name)))
            })
            .transpose()
            .map(|o| o.unwrap_or(default))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|e| Error::Config(format!("[{}] {key} = '{v}': {e}", self.name)))
            })
            .transpose()
            .map(|o| o.unwrap_or(default))
    }

    fn vec_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim().parse::<f64>().map_err(|e| {
                            Error::Config(format!("[{}] {key} = '{v}': {e}", self.name))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .transpose()
    }

    fn vec_usize(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim().parse::<usize>().map_err(|e| {
                            Error::Config(format!("[{}] {key} = '{v}': {e}", self.name))
                        })
                    })
                    .collect::<Result<Vec<usize>>>()
            })
            .transpose()
    }

    fn finish(&self) -> Result<()> {
        if let Some(raw) = self.raw {
            let used = self.used.borrow();
            for (key, (lineno, _)) in &raw.lines {
                if !used.iter().any(|u| u == key) {
                    return Err(Error::Config(format!(
                        "line {lineno}: unknown key '{key}' in section [{}]",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

fn parse_filter_section(sec: &SectionReader) -> Result<FilterConfig> {
    let kind = sec.require("kind")?.to_lowercase();
    let cfg = match kind.as_str() {
        "none" => FilterConfig::None,
        "cbf" => FilterConfig::Cbf,
        "rcbf" => FilterConfig::Rcbf {
            gamma1: sec.f64_req("gamma1")?,
            gamma2: sec.f64_req("gamma2")?,
        },
        "issf" => FilterConfig::Issf { eps: sec.f64_req("eps")? },
        "tunable" => FilterConfig::Tunable {
            gamma1: sec.f64_req("gamma1")?,
            gamma2: sec.f64_req("gamma2")?,
            c1: sec.f64_or("c1", 0.0)?,
            c2: sec.f64_or("c2", 0.0)?,
        },
        "mrcbf" => {
            let delta = sec.f64_req("delta")?;
            let lipschitz = if let (Some(l_lfh), Some(l_lgh), Some(l_alphah)) = (
                sec.f64("l_lfh")?,
                sec.f64("l_lgh")?,
                sec.f64("l_alphah")?,
            ) {
                LipschitzSource::Explicit { l_lfh, l_lgh, l_alphah }
            } else {
                let lo = sec.vec_f64("lip_min")?.ok_or_else(|| {
                    Error::Config(format!(
                        "[{}] mrcbf needs l_lfh/l_lgh/l_alphah or lip_min/lip_max",
                        sec.name
                    ))
                })?;
                let hi = sec.vec_f64("lip_max")?.ok_or_else(|| {
                    Error::Config(format!("[{}] mrcbf missing lip_max", sec.name))
                })?;
                LipschitzSource::Sampled {
                    lo,
                    hi,
                    samples: sec.usize_or("lip_samples", 100_000)?,
                }
            };
            FilterConfig::Mrcbf { delta, lipschitz }
        }
        other => {
            return Err(Error::Config(format!(
                "[{}] unknown filter kind '{other}'",
                sec.name
            )))
        }
    };
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let sections = parse_sections(text)?;
        let reader = |name: &'static str| SectionReader {
            name,
            raw: sections.get(name),
            used: std::cell::RefCell::new(Vec::new()),
        };
        for key in sections.keys() {
            const KNOWN: [&str; 12] = [
                "experiment", "system", "alpha", "filter", "compare", "nominal", "estimate",
                "disturbance", "sim", "sweep", "certify", "thresholds",
            ];
            if !KNOWN.contains(&key.as_str()) && key != "output" {
                return Err(Error::Config(format!("unknown section [{key}]")));
            }
        }

        let exp = reader("experiment");
        let name = exp.get("name").unwrap_or("experiment").to_string();
        let seed = exp.u64_or("seed", 0)?;
        exp.finish()?;

        let sys_sec = reader("system");
        let system = match sys_sec.require("kind")?.to_lowercase().as_str() {
            "scalar" => SystemConfig::Scalar,
            "segway" => {
                let d = SegwayParams::default();
                SystemConfig::Segway(SegwayParams {
                    wheel_mass: sys_sec.f64_or("wheel_mass", d.wheel_mass)?,
                    body_mass: sys_sec.f64_or("body_mass", d.body_mass)?,
                    body_inertia: sys_sec.f64_or("body_inertia", d.body_inertia)?,
                    body_com_length: sys_sec.f64_or("body_com_length", d.body_com_length)?,
                    wheel_radius: sys_sec.f64_or("wheel_radius", d.wheel_radius)?,
                    gravity: sys_sec.f64_or("gravity", d.gravity)?,
                    viscous_friction: sys_sec.f64_or("viscous_friction", d.viscous_friction)?,
                })
            }
            other => return Err(Error::Config(format!("[system] unknown kind '{other}'"))),
        };
        sys_sec.finish()?;

        let alpha_sec = reader("alpha");
        let alpha = match alpha_sec.get("kind").unwrap_or("linear").to_lowercase().as_str() {
            "linear" => AlphaConfig::Linear { c: alpha_sec.f64_or("c", 1.0)? },
            "cubic" => AlphaConfig::Cubic { c: alpha_sec.f64_or("c", 1.0)? },
            other => return Err(Error::Config(format!("[alpha] unknown kind '{other}'"))),
        };
        alpha_sec.finish()?;

        let filter_sec = reader("filter");
        let filter = if sections.contains_key("filter") {
            parse_filter_section(&filter_sec)?
        } else {
            FilterConfig::None
        };
        filter_sec.finish()?;

        let compare = if sections.contains_key("compare") {
            let compare_sec = reader("compare");
            let c = parse_filter_section(&compare_sec)?;
            compare_sec.finish()?;
            Some(c)
        } else {
            None
        };

        let nom_sec = reader("nominal");
        let nominal = match nom_sec.get("kind").unwrap_or("zero").to_lowercase().as_str() {
            "zero" => NominalConfig::Zero,
            "linear" => match nom_sec.vec_f64("gain")? {
                Some(gain) => NominalConfig::Linear { gain },
                None => NominalConfig::SegwayDefaultGain,
            },
            "segway_lqr" => NominalConfig::SegwayDefaultGain,
            other => return Err(Error::Config(format!("[nominal] unknown kind '{other}'"))),
        };
        nom_sec.finish()?;

        let est_sec = reader("estimate");
        let estimate = match est_sec.get("kind").unwrap_or("exact").to_lowercase().as_str() {
            "exact" => EstimateConfig::Exact,
            "constant_offset" => EstimateConfig::ConstantOffset {
                offset: est_sec.vec_f64("offset")?.ok_or_else(|| {
                    Error::Config("[estimate] constant_offset needs 'offset'".into())
                })?,
            },
            "inward_gradient" => EstimateConfig::InwardGradient {
                delta: est_sec.f64_req("delta")?,
            },
            "random_bounded" => EstimateConfig::RandomBounded {
                delta: est_sec.f64_req("delta")?,
                seed: est_sec.u64_or("seed", seed.wrapping_add(1))?,
            },
            other => return Err(Error::Config(format!("[estimate] unknown kind '{other}'"))),
        };
        est_sec.finish()?;

        let dist_sec = reader("disturbance");
        let disturbance = match dist_sec.get("kind").unwrap_or("none").to_lowercase().as_str() {
            "none" => DisturbanceConfig::None,
            "constant" => DisturbanceConfig::Constant {
                d: dist_sec.vec_f64("d")?.ok_or_else(|| {
                    Error::Config("[disturbance] constant needs 'd'".into())
                })?,
            },
            "worst_case" => DisturbanceConfig::WorstCase {
                dbar: dist_sec.f64_req("dbar")?,
            },
            "random_bounded" => DisturbanceConfig::RandomBounded {
                dbar: dist_sec.f64_req("dbar")?,
                seed: dist_sec.u64_or("seed", seed.wrapping_add(2))?,
            },
            other => return Err(Error::Config(format!("[disturbance] unknown kind '{other}'"))),
        };
        dist_sec.finish()?;

        let sim_sec = reader("sim");
        let dt = sim_sec.f64_or("dt", 1e-3)?;
        let horizon = sim_sec.f64_or("horizon", 20.0)?;
        let x0 = sim_sec
            .vec_f64("x0")?
            .ok_or_else(|| Error::Config("[sim] missing x0".into()))?;
        let escape_default = if x0.len() == 1 { 10.0 } else { 1e3 };
        let escape_radius = sim_sec.f64_or("escape_radius", escape_default)?;
        let record_stride = sim_sec.usize_or("record_stride", 1)?;
        sim_sec.finish()?;

        let sweep = if sections.contains_key("sweep") {
            let sweep_sec = reader("sweep");
            let variable = match sweep_sec.require("variable")?.to_lowercase().as_str() {
                "estimate_delta" => SweepVariable::EstimateDelta,
                "disturbance_dbar" => SweepVariable::DisturbanceDbar,
                other => {
                    return Err(Error::Config(format!(
                        "[sweep] unknown variable '{other}'"
                    )))
                }
            };
            let values = sweep_sec
                .vec_f64("values")?
                .ok_or_else(|| Error::Config("[sweep] missing values".into()))?;
            sweep_sec.finish()?;
            if values.is_empty() {
                return Err(Error::Config("[sweep] values list is empty".into()));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("[sweep] values must be finite".into()));
            }
            if values.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Config("[sweep] values must be sorted ascending".into()));
            }
            Some(SweepConfig { variable, values })
        } else {
            None
        };

        let certify = if sections.contains_key("certify") {
            let c = reader("certify");
            let grid_min = c
                .vec_f64("grid_min")?
                .ok_or_else(|| Error::Config("[certify] missing grid_min".into()))?;
            let grid_max = c
                .vec_f64("grid_max")?
                .ok_or_else(|| Error::Config("[certify] missing grid_max".into()))?;
            let grid_points = match c.vec_usize("grid_points")? {
                Some(p) => p,
                None => {
                    let step = c.f64("grid_step")?.ok_or_else(|| {
                        Error::Config("[certify] needs grid_points or grid_step".into())
                    })?;
                    grid_min
                        .iter()
                        .zip(&grid_max)
                        .map(|(lo, hi)| ((hi - lo) / step).round() as usize + 1)
                        .collect()
                }
            };
            let zero_tol = c.f64("zero_tol")?;
            c.finish()?;
            Some(CertifyConfig {
                grid_min,
                grid_max,
                grid_points,
                zero_tol,
            })
        } else {
            None
        };

        let thresholds_cfg = if sections.contains_key("thresholds") {
            let t = reader("thresholds");
            let cfg = ThresholdsConfig {
                beta: t.f64_req("beta")?,
                samples: t.usize_or("samples", 4000)?,
                box_min: t
                    .vec_f64("box_min")?
                    .ok_or_else(|| Error::Config("[thresholds] missing box_min".into()))?,
                box_max: t
                    .vec_f64("box_max")?
                    .ok_or_else(|| Error::Config("[thresholds] missing box_max".into()))?,
            };
            t.finish()?;
            Some(cfg)
        } else {
            None
        };

        let out_sec = reader("output");
        let out_dir = out_sec.get("dir").unwrap_or("out").to_string();
        let prefix = out_sec.get("prefix").unwrap_or(&name).to_string();
        out_sec.finish()?;

        Ok(ExperimentConfig {
            name,
            seed,
            system,
            alpha,
            filter,
            compare,
            nominal,
            estimate,
            disturbance,
            dt,
            horizon,
            escape_radius,
            record_stride,
            x0,
            sweep,
            certify,
            thresholds: thresholds_cfg,
            out_dir,
            prefix,
        })
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }
}

// ---------------------------------------------------------------------------
// instantiation

/// Everything needed to run simulations for one configuration.
pub struct Scenario {
    pub system: ControlAffineSystem,
    pub barrier: Barrier,
    pub alpha: ClassKappa,
    pub filter: Option<FilterKind>,
    pub compare: Option<FilterKind>,
    pub nominal: Controller,
    pub estimate: EstimateModel,
    pub disturbance: DisturbanceModel,
    pub sim: SimConfig,
    pub x0: State,
}

/// Build a concrete filter from its configuration; for the
/// measurement-robust kind with sampled constants this runs the seeded
/// Lipschitz estimation.
pub fn build_filter(
    cfg: &FilterConfig,
    sys: &ControlAffineSystem,
    bar: &Barrier,
    alpha: &ClassKappa,
    seed: u64,
) -> Result<Option<FilterKind>> {
    Ok(match cfg {
        FilterConfig::None => None,
        FilterConfig::Cbf => Some(FilterKind::PlainCbf),
        FilterConfig::Rcbf { gamma1, gamma2 } => Some(FilterKind::Rcbf(
            RobustnessFunction::polynomial(*gamma1, *gamma2)?,
        )),
        FilterConfig::Issf { eps } => Some(FilterKind::Issf { eps: *eps }),
        FilterConfig::Tunable { gamma1, gamma2, c1, c2 } => Some(FilterKind::TunableRcbf {
            gamma1: *gamma1,
            gamma2: *gamma2,
            c1: *c1,
            c2: *c2,
        }),
        FilterConfig::Mrcbf { delta, lipschitz } => {
            let (l_lfh, l_lgh, l_alphah) = match lipschitz {
                LipschitzSource::Explicit { l_lfh, l_lgh, l_alphah } => {
                    (*l_lfh, *l_lgh, *l_alphah)
                }
                LipschitzSource::Sampled { lo, hi, samples } => {
                    if lo.len() != sys.n() || hi.len() != sys.n() {
                        return Err(Error::Config(format!(
                            "lip_min/lip_max must have length n={}",
                            sys.n()
                        )));
                    }
                    let region = BoxRegion::new(lo.clone(), hi.clone())?;
                    let sys_f = sys.clone();
                    let bar_f = bar.clone();
                    let l_lfh = estimate_lipschitz(
                        move |x: &State| {
                            let (lfh, _) = lie_derivatives(&sys_f, &bar_f, x)
                                .expect("lipschitz sampling stays in-dimension");
                            State::from_vec(vec![lfh])
                        },
                        &region,
                        *samples,
                        seed.wrapping_add(101),
                    )?;
                    let sys_g = sys.clone();
                    let bar_g = bar.clone();
                    let l_lgh = estimate_lipschitz(
                        move |x: &State| {
                            let (_, lgh) = lie_derivatives(&sys_g, &bar_g, x)
                                .expect("lipschitz sampling stays in-dimension");
                            lgh
                        },
                        &region,
                        *samples,
                        seed.wrapping_add(102),
                    )?;
                    let bar_h = bar.clone();
                    let alpha_h = alpha.clone();
                    let l_alphah = estimate_lipschitz(
                        move |x: &State| State::from_vec(vec![alpha_h.eval(bar_h.h(x))]),
                        &region,
                        *samples,
                        seed.wrapping_add(103),
                    )?;
                    (l_lfh, l_lgh, l_alphah)
                }
            };
            Some(FilterKind::Mrcbf(MrcbfParams::constant_delta(
                *delta, l_lfh, l_lgh, l_alphah,
            )?))
        }
    })
}

impl ExperimentConfig {
    pub fn instantiate(&self) -> Result<Scenario> {
        let (system, barrier) = match &self.system {
            SystemConfig::Scalar => scalar_example(),
            SystemConfig::Segway(p) => segway(p)?,
        };
        let alpha = match self.alpha {
            AlphaConfig::Linear { c } => ClassKappa::linear(c)?,
            AlphaConfig::Cubic { c } => ClassKappa::cubic(c)?,
        };
        let filter = build_filter(&self.filter, &system, &barrier, &alpha, self.seed)?;
        let compare = match &self.compare {
            Some(c) => build_filter(c, &system, &barrier, &alpha, self.seed)?,
            None => None,
        };
        let nominal = match &self.nominal {
            NominalConfig::Zero => nominal_zero(system.m()),
            NominalConfig::Linear { gain } => {
                let (m, n) = (system.m(), system.n());
                if gain.len() != m * n {
                    return Err(Error::Config(format!(
                        "[nominal] gain has {} entries, expected m*n = {}",
                        gain.len(),
                        m * n
                    )));
                }
                nominal_linear(DMatrix::from_row_slice(m, n, gain))
            }
            NominalConfig::SegwayDefaultGain => {
                if system.n() != 4 || system.m() != 1 {
                    return Err(Error::Config(
                        "[nominal] default gain is 1x4 and only fits the segway".into(),
                    ));
                }
                nominal_linear(default_segway_gain())
            }
        };
        let estimate = match &self.estimate {
            EstimateConfig::Exact => EstimateModel::Exact,
            EstimateConfig::ConstantOffset { offset } => EstimateModel::ConstantOffset {
                offset: offset.clone(),
            },
            EstimateConfig::InwardGradient { delta } => {
                EstimateModel::InwardGradient { delta: *delta }
            }
            EstimateConfig::RandomBounded { delta, seed } => EstimateModel::RandomBounded {
                delta: *delta,
                seed: *seed,
            },
        };
        let disturbance = match &self.disturbance {
            DisturbanceConfig::None => DisturbanceModel::None,
            DisturbanceConfig::Constant { d } => DisturbanceModel::Constant { d: d.clone() },
            DisturbanceConfig::WorstCase { dbar } => {
                DisturbanceModel::WorstCaseAntiGradient { dbar: *dbar }
            }
            DisturbanceConfig::RandomBounded { dbar, seed } => DisturbanceModel::RandomBounded {
                dbar: *dbar,
                seed: *seed,
            },
        };
        let sim = SimConfig::new(self.dt, self.horizon, self.escape_radius, self.record_stride)?;
        if self.x0.len() != system.n() {
            return Err(Error::Config(format!(
                "[sim] x0 has length {}, system '{}' expects {}",
                self.x0.len(),
                system.label(),
                system.n()
            )));
        }
        Ok(Scenario {
            system,
            barrier,
            alpha,
            filter,
            compare,
            nominal,
            estimate,
            disturbance,
            sim,
            x0: State::from_vec(self.x0.clone()),
        })
    }

    /// Apply a sweep value to the relevant model, scaling direction vectors
    /// to the requested magnitude.
    pub fn estimate_for(&self, value: f64) -> Result<EstimateModel> {
        match &self.estimate {
            EstimateConfig::ConstantOffset { offset } => {
                let norm = offset.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 && value != 0.0 {
                    return Err(Error::Config(
                        "[estimate] cannot sweep a zero offset direction".into(),
                    ));
                }
                let scaled = if value == 0.0 {
                    vec![0.0; offset.len()]
                } else {
                    offset.iter().map(|v| v / norm * value).collect()
                };
                Ok(EstimateModel::ConstantOffset { offset: scaled })
            }
            EstimateConfig::InwardGradient { .. } => {
                Ok(EstimateModel::InwardGradient { delta: value })
            }
            EstimateConfig::RandomBounded { seed, .. } => Ok(EstimateModel::RandomBounded {
                delta: value,
                seed: *seed,
            }),
            EstimateConfig::Exact => Err(Error::Config(
                "[sweep] estimate_delta sweep needs a non-exact estimate model".into(),
            )),
        }
    }

    pub fn disturbance_for(&self, value: f64) -> Result<DisturbanceModel> {
        match &self.disturbance {
            DisturbanceConfig::Constant { d } => {
                let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 && value != 0.0 {
                    return Err(Error::Config(
                        "[disturbance] cannot sweep a zero direction".into(),
                    ));
                }
                let scaled = if value == 0.0 {
                    vec![0.0; d.len()]
                } else {
                    d.iter().map(|v| v / norm * value).collect()
                };
                Ok(DisturbanceModel::Constant { d: scaled })
            }
            DisturbanceConfig::WorstCase { .. } => {
                Ok(DisturbanceModel::WorstCaseAntiGradient { dbar: value })
            }
            DisturbanceConfig::RandomBounded { seed, .. } => Ok(DisturbanceModel::RandomBounded {
                dbar: value,
                seed: *seed,
            }),
            DisturbanceConfig::None => Err(Error::Config(
                "[sweep] disturbance_dbar sweep needs a disturbance model".into(),
            )),
        }
    }
}

/// Realized filter controller x̂ ↦ u for sensitivity estimation. Panics on
/// infeasible states, so callers should certify first or sample inside the
/// validity region.
pub fn filter_controller(
    sys: &ControlAffineSystem,
    bar: &Barrier,
    alpha: &ClassKappa,
    kind: &FilterKind,
    nominal: &Controller,
) -> impl Fn(&State) -> Input + Sync {
    let sys = sys.clone();
    let bar = bar.clone();
    let alpha = alpha.clone();
    let kind = kind.clone();
    let nominal = nominal.clone();
    move |xhat: &State| {
        let u_d = nominal(xhat);
        crate::filter::apply_filter(&sys, &bar, &alpha, &kind, &u_d, xhat)
            .expect("filter infeasible while estimating controller sensitivity")
            .u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
# sample configuration
[experiment]
name = demo
seed = 7

[system]
kind = scalar

[alpha]
kind = linear
c = 1.0

[filter]
kind = rcbf
gamma1 = 0.2
gamma2 = 0.2

[nominal]
kind = zero

[estimate]
kind = constant_offset
offset = -0.1

[disturbance]
kind = none

[sim]
dt = 0.001
horizon = 20.0
escape_radius = 10.0
record_stride = 10
x0 = 1.3

[sweep]
variable = estimate_delta
values = 0.0, 0.1, 0.2

[output]
dir = out/demo
prefix = demo
"#;

    #[test]
    fn parses_sample() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.name, "demo");
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.system, SystemConfig::Scalar);
        assert_eq!(cfg.filter, FilterConfig::Rcbf { gamma1: 0.2, gamma2: 0.2 });
        assert_eq!(cfg.x0, vec![1.3]);
        let sweep = cfg.sweep.as_ref().unwrap();
        assert_eq!(sweep.variable, SweepVariable::EstimateDelta);
        assert_eq!(sweep.values.len(), 3);
        let scenario = cfg.instantiate().unwrap();
        assert_eq!(scenario.system.n(), 1);
        assert!(scenario.filter.is_some());
    }

    #[test]
    fn unknown_key_reports_line() {
        let bad = SAMPLE.replace("record_stride = 10", "record_strid = 10");
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("record_strid"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn bad_float_reports_key() {
        let bad = SAMPLE.replace("gamma1 = 0.2", "gamma1 = zero point two");
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        assert!(err.to_string().contains("gamma1"));
    }

    #[test]
    fn empty_sweep_rejected() {
        let bad = SAMPLE.replace("values = 0.0, 0.1, 0.2", "values =");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn unsorted_sweep_rejected() {
        let bad = SAMPLE.replace("values = 0.0, 0.1, 0.2", "values = 0.2, 0.1");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn sweep_scales_offset_direction() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        match cfg.estimate_for(0.5).unwrap() {
            EstimateModel::ConstantOffset { offset } => {
                assert!((offset[0] + 0.5).abs() < 1e-12);
            }
            other => panic!("unexpected model {other:?}"),
        }
        match cfg.estimate_for(0.0).unwrap() {
            EstimateModel::ConstantOffset { offset } => assert_eq!(offset[0], 0.0),
            other => panic!("unexpected model {other:?}"),
        }
    }

    #[test]
    fn segway_section_with_overrides() {
        let text = r#"
[system]
kind = segway
body_mass = 12.5

[sim]
x0 = -4, -0.5, 0, 1

[nominal]
kind = linear
"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        match cfg.system {
            SystemConfig::Segway(p) => {
                assert_eq!(p.body_mass, 12.5);
                assert_eq!(p.wheel_mass, SegwayParams::default().wheel_mass);
            }
            _ => panic!("expected segway"),
        }
        assert_eq!(cfg.nominal, NominalConfig::SegwayDefaultGain);
        let scenario = cfg.instantiate().unwrap();
        assert_eq!(scenario.system.n(), 4);
    }
}
