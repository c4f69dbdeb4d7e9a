//! End-to-end inference runs: build a model, iterate an engine, log the
//! 4-connected energy per iteration and emit label maps.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::baselines::{sgm_forward, MeanField, SgmIterative, SgmVariant};
use crate::error::{Error, Result};
use crate::grid::DirectionSet;
use crate::io::{labels_to_image, load_pgm, read_cost_volume, save_pgm, stereo_unaries, write_energy_csv, EnergyRow};
use crate::isgmr::Isgmr;
use crate::potentials::{energy, PairwiseFunction, PairwiseKind, Potentials, TreeCoefficients};
use crate::real::Real;
use crate::synth;
use crate::trwp::Trwp;
use crate::with_threads;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// One pass of revised SGM.
    Sgm,
    /// Standard SGM, re-run with the previous costs as unaries.
    SgmStd,
    Isgmr,
    Trwp,
    MeanField,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sgm" => Self::Sgm,
            "sgm-std" => Self::SgmStd,
            "isgmr" => Self::Isgmr,
            "trwp" => Self::Trwp,
            "mf" => Self::MeanField,
            _ => return Err(Error::InvalidParameter(format!("unknown method {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            _ => Err(Error::InvalidParameter(format!("unknown precision {s:?}"))),
        }
    }
}

/// Where the unary terms come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    CostVolume(PathBuf),
    Stereo { left: PathBuf, right: PathBuf },
    /// Seeded synthetic stereo pair of the given size.
    Synthetic { height: usize, width: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub connectivity: usize,
    pub iterations: usize,
    pub pairwise: PairwiseKind,
    pub weight: f64,
    pub rho: f64,
    /// Label count for stereo sources; ignored for cost volumes.
    pub max_disp: usize,
    pub source: Source,
    pub seed: u64,
    pub threads: usize,
    pub precision: Precision,
    /// Extra untimed-energy forward repeats used for the mean timing.
    pub timing_repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Trwp,
            connectivity: 4,
            iterations: 50,
            pairwise: PairwiseKind::TruncatedLinear { tau: 2.0 },
            weight: 1.0,
            rho: 0.5,
            max_disp: 16,
            source: Source::Synthetic { height: 32, width: 32 },
            seed: 0,
            threads: 0,
            precision: Precision::F32,
            timing_repeats: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub height: usize,
    pub width: usize,
    pub rows: Vec<EnergyRow>,
    pub first_labels: Vec<u8>,
    pub final_labels: Vec<u8>,
    /// Mean wall time of a full forward pass over the timing repeats.
    pub mean_forward_ms: Option<f64>,
}

/// Builds the 64-bit model described by `cfg`.
pub fn build_potentials(cfg: &RunConfig) -> Result<Potentials<f64>> {
    let unary = match &cfg.source {
        Source::CostVolume(path) => read_cost_volume(path)?.cast(),
        Source::Stereo { left, right } => stereo_unaries(&load_pgm(left)?, &load_pgm(right)?, cfg.max_disp)?,
        Source::Synthetic { height, width } => {
            let pair = synth::stereo_pair(cfg.seed, *height, *width, cfg.max_disp);
            stereo_unaries(&pair.left, &pair.right, cfg.max_disp)?
        }
    };
    let pw = PairwiseFunction::build(cfg.pairwise, unary.labels)?;
    Potentials::with_constant_weight(unary, pw, cfg.connectivity, cfg.weight)
}

fn check(cfg: &RunConfig) -> Result<()> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    if cfg.method == Method::Sgm && cfg.iterations != 1 {
        return Err(Error::InvalidParameter("sgm is a single pass; use --iters 1 or sgm-std".into()));
    }
    Ok(())
}

/// Executes the configured run.
pub fn run_inference(cfg: &RunConfig) -> Result<RunReport> {
    check(cfg)?;
    let pot = build_potentials(cfg)?;
    with_threads(cfg.threads, || match cfg.precision {
        Precision::F32 => run_typed::<f32>(&pot, cfg),
        Precision::F64 => run_typed::<f64>(&pot, cfg),
    })?
}

/// Anything that advances one iteration and reports a labelling.
trait Stepper {
    fn advance(&mut self) -> Result<Vec<u8>>;
}

impl<T: Real> Stepper for Isgmr<'_, T> {
    fn advance(&mut self) -> Result<Vec<u8>> {
        self.step();
        Ok(self.output().labels)
    }
}

impl<T: Real> Stepper for Trwp<'_, T> {
    fn advance(&mut self) -> Result<Vec<u8>> {
        self.step();
        Ok(self.output().labels)
    }
}

impl<T: Real> Stepper for SgmIterative<'_, T> {
    fn advance(&mut self) -> Result<Vec<u8>> {
        Ok(self.step()?.labels)
    }
}

impl<T: Real> Stepper for MeanField<'_, T> {
    fn advance(&mut self) -> Result<Vec<u8>> {
        self.step();
        Ok(self.output().labels)
    }
}

struct OnePass<'a, T> {
    pot: &'a Potentials<T>,
    dirs: &'a DirectionSet,
}

impl<T: Real> Stepper for OnePass<'_, T> {
    fn advance(&mut self) -> Result<Vec<u8>> {
        Ok(sgm_forward(self.pot, self.dirs, SgmVariant::Revised)?.labels)
    }
}

fn stepper<'a, T: Real>(
    pot: &'a Potentials<T>,
    rho: &'a TreeCoefficients<T>,
    dirs: &'a DirectionSet,
    method: Method,
) -> Result<Box<dyn Stepper + 'a>> {
    Ok(match method {
        Method::Sgm => Box::new(OnePass { pot, dirs }),
        Method::SgmStd => Box::new(SgmIterative::new(pot, dirs)?),
        Method::Isgmr => Box::new(Isgmr::new(pot, dirs)?),
        Method::Trwp => Box::new(Trwp::new(pot, rho, dirs)?),
        Method::MeanField => Box::new(MeanField::new(pot, dirs)?),
    })
}

fn run_typed<T: Real>(pot64: &Potentials<f64>, cfg: &RunConfig) -> Result<RunReport> {
    let pot: Potentials<T> = pot64.cast();
    let rho = TreeCoefficients::uniform(cfg.rho)?;
    let dirs = DirectionSet::connectivity(cfg.connectivity)?;
    let mut s = stepper(&pot, &rho, &dirs, cfg.method)?;
    let mut rows = Vec::with_capacity(cfg.iterations);
    let mut first = Vec::new();
    let mut last = Vec::new();
    let mut elapsed = 0.0;
    for k in 1..=cfg.iterations {
        let t = Instant::now();
        let labels = s.advance()?;
        elapsed += t.elapsed().as_secs_f64() * 1e3;
        rows.push(EnergyRow { iteration: k, energy: energy(pot64, &labels, 4)?, forward_ms: elapsed });
        if k == 1 {
            first = labels.clone();
        }
        last = labels;
    }
    let mean_forward_ms = if cfg.timing_repeats > 0 {
        let mut total = 0.0;
        for _ in 0..cfg.timing_repeats {
            let mut s = stepper(&pot, &rho, &dirs, cfg.method)?;
            let t = Instant::now();
            for _ in 0..cfg.iterations {
                s.advance()?;
            }
            total += t.elapsed().as_secs_f64() * 1e3;
        }
        Some(total / cfg.timing_repeats as f64)
    } else {
        None
    };
    Ok(RunReport {
        height: pot.unary.height,
        width: pot.unary.width,
        rows,
        first_labels: first,
        final_labels: last,
        mean_forward_ms,
    })
}

/// Writes `energy.csv`, `labels_first.pgm` and `labels_final.pgm` into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_energy_csv(File::create(dir.join("energy.csv"))?, &report.rows)?;
    save_pgm(dir.join("labels_first.pgm"), &labels_to_image(&report.first_labels, report.height, report.width))?;
    save_pgm(dir.join("labels_final.pgm"), &labels_to_image(&report.final_labels, report.height, report.width))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(method: Method, iterations: usize) -> RunConfig {
        RunConfig {
            method,
            iterations,
            max_disp: 4,
            source: Source::Synthetic { height: 6, width: 7 },
            ..RunConfig::default()
        }
    }

    #[test]
    fn every_method_runs() {
        for m in [Method::SgmStd, Method::Isgmr, Method::Trwp, Method::MeanField] {
            let r = run_inference(&small(m, 3)).unwrap();
            assert_eq!(r.rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![1, 2, 3]);
            assert_eq!(r.final_labels.len(), 42);
        }
        assert_eq!(run_inference(&small(Method::Sgm, 1)).unwrap().rows.len(), 1);
    }

    #[test]
    fn sgm_rejects_iterations() {
        assert!(run_inference(&small(Method::Sgm, 2)).is_err());
        assert!(run_inference(&small(Method::Isgmr, 0)).is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!("sgm-std".parse::<Method>().unwrap(), Method::SgmStd);
        assert!("bp".parse::<Method>().is_err());
        assert_eq!("f64".parse::<Precision>().unwrap(), Precision::F64);
    }
}
