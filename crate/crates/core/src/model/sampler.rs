use super::schedule::Schedule;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::keyed_gaussian_vec;

/// Maps a noisy sample and its noise level to a clean-sample estimate.
pub trait Denoiser {
    fn denoise(&mut self, x: &Mat, sigma: f32) -> Result<Mat>;
}

impl<F> Denoiser for F
where
    F: FnMut(&Mat, f32) -> Result<Mat> + ?Sized,
{
    fn denoise(&mut self, x: &Mat, sigma: f32) -> Result<Mat> {
        self(x, sigma)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Mat,
    pub model_calls: usize,
    /// Number of steps whose active expert differs from the previous step's.
    pub switch_count: usize,
}

/// Noise for `stream` 0 (the initial sample) and `step + 1` (re-noising after
/// step `step`), depending only on `(seed, stream)`.
fn noise(rows: usize, cols: usize, seed: u64, stream: u64) -> Mat {
    Mat::from_vec(rows, cols, keyed_gaussian_vec(rows * cols, seed, stream)).unwrap()
}

/// `step(sigma, x)` returns the index of the expert it used and its output.
fn run(
    sched: &Schedule,
    shape: (usize, usize),
    seed: u64,
    mut step: impl FnMut(f32, &Mat) -> (usize, Result<Mat>),
) -> Result<Sample> {
    let (rows, cols) = shape;
    let sig = sched.sigmas();
    let mut x = noise(rows, cols, seed, 0);
    x.data.iter_mut().for_each(|v| *v *= sig[0]);
    let mut calls = 0;
    let mut switches = 0;
    let mut active: Option<usize> = None;
    for i in 0..sched.num_steps() {
        let (which, x0) = step(sig[i], &x);
        let x0 = x0?;
        if active.is_some_and(|a| a != which) {
            switches += 1;
        }
        active = Some(which);
        calls += 1;
        if (x0.rows, x0.cols) != (rows, cols) {
            return Err(Error::ShapeMismatch(format!(
                "denoiser returned {}x{}, expected {rows}x{cols}",
                x0.rows, x0.cols
            )));
        }
        let next = sig[i + 1];
        if next > 0.0 {
            let eps = noise(rows, cols, seed, i as u64 + 1);
            x = x0;
            for (v, e) in x.data.iter_mut().zip(&eps.data) {
                *v += next * e;
            }
        } else {
            x = x0;
        }
    }
    Ok(Sample {
        x,
        model_calls: calls,
        switch_count: switches,
    })
}

/// Multistep consistency sampling:
///
/// ```text
/// x <- sigma_0 * eps_0
/// for i in 0..N:  x0 <- model(x, sigma_i)
///                 x  <- x0 + sigma_{i+1} * eps_{i+1}   if sigma_{i+1} > 0, else return x0
/// ```
///
/// Exactly `sched.num_steps()` model calls.
pub fn consistency_sample<D: Denoiser + ?Sized>(
    model: &mut D,
    sched: &Schedule,
    shape: (usize, usize),
    seed: u64,
) -> Result<Sample> {
    run(sched, shape, seed, |sigma, x| (0, model.denoise(x, sigma)))
}

pub struct TwoExpertConfig<'a, D: ?Sized> {
    /// High-noise expert runs while `sigma > boundary_sigma`.
    pub boundary_sigma: f32,
    pub high_noise_model: &'a mut D,
    pub low_noise_model: &'a mut D,
}

/// Consistency sampling that dispatches each step to the high- or low-noise
/// expert by comparing the step's sigma with the boundary.
pub fn two_expert_sample<D: Denoiser + ?Sized>(
    cfg: TwoExpertConfig<'_, D>,
    sched: &Schedule,
    shape: (usize, usize),
    seed: u64,
) -> Result<Sample> {
    if !(cfg.boundary_sigma > 0.0 && cfg.boundary_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "boundary sigma must be positive and finite, got {}",
            cfg.boundary_sigma
        )));
    }
    let boundary = cfg.boundary_sigma;
    let high = cfg.high_noise_model;
    let low = cfg.low_noise_model;
    run(sched, shape, seed, |sigma, x| {
        if sigma > boundary {
            (0, high.denoise(x, sigma))
        } else {
            (1, low.denoise(x, sigma))
        }
    })
}
