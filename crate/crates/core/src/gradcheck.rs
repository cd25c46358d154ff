//! Central finite-difference oracle for hand-derived gradients.
//!
//! Checks run in `f64`. The relative error of one coordinate is
//! `|a - n| / max(|a|, |n|, 1e-8)` with `a` analytic and `n` numeric.
//!
//! Piecewise-smooth functions (max pooling) can report which smooth piece
//! they were evaluated on. A coordinate whose `±h` probes land on a different
//! piece than the unperturbed point has no valid difference quotient and is
//! skipped; the report counts such coordinates.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::Parameterized;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_THRESHOLD: f64 = 1e-5;
const DENOM_FLOOR: f64 = 1e-8;

pub fn coordinate_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Max coordinate-wise relative error between two equally shaped tensors.
pub fn relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| coordinate_error(a, n))
        .fold(0.0, f64::max)
}

/// Numeric gradient of `f` at `x` by central differences.
pub fn central_difference(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub threshold: f64,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: DEFAULT_STEP,
            threshold: DEFAULT_THRESHOLD,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
    /// `|a - n| / max(|a|, |n|)` over the checked coordinates as vectors.
    pub norm_rel_error: f64,
    /// Coordinates whose probes crossed into another smooth piece.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.coords - p.skipped).sum()
    }

    pub fn max_norm_error(&self) -> f64 {
        self.params.iter().map(|p| p.norm_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.threshold
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error >= self.threshold)
    }
}

/// Compares `analytic` (in visit order) against central differences of the
/// scalar `f` over every parameter of `model`.
///
/// `f` must be deterministic: it is evaluated twice at the unperturbed point
/// and any difference fails with [`Error::OracleInvalid`].
pub fn grad_check<M, F>(
    model: &mut M,
    analytic: &[Tensor<f64>],
    opts: &GradCheckOptions,
    mut f: F,
) -> Result<GradCheckReport>
where
    M: Parameterized<f64> + ?Sized,
    F: FnMut(&M) -> f64,
{
    grad_check_piecewise(model, analytic, opts, |m| (f(m), Vec::new()))
}

/// [`grad_check`] for a function that also returns an identifier of the
/// smooth piece it was evaluated on.
pub fn grad_check_piecewise<M, F>(
    model: &mut M,
    analytic: &[Tensor<f64>],
    opts: &GradCheckOptions,
    mut f: F,
) -> Result<GradCheckReport>
where
    M: Parameterized<f64> + ?Sized,
    F: FnMut(&M) -> (f64, Vec<usize>),
{
    let (first, piece) = f(model);
    let (second, _) = f(model);
    if first.to_bits() != second.to_bits() {
        return Err(Error::OracleInvalid { first, second });
    }
    let names = model.param_names();
    if names.len() != analytic.len() {
        return Err(Error::validation(format!(
            "grad_check: {} analytic gradients for {} parameters",
            analytic.len(),
            names.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = Vec::with_capacity(names.len());
    for (idx, name) in names.iter().enumerate() {
        let len = analytic[idx].len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < len => sample(&mut rng, len, m).into_vec(),
            _ => (0..len).collect(),
        };
        let mut worst = 0.0f64;
        let (mut diff, mut a_norm, mut n_norm) = (0.0, 0.0, 0.0);
        let mut skipped = 0;
        for &c in &coords {
            let (up, up_piece) = perturb(model, idx, c, opts.step, &mut f);
            let (down, down_piece) = perturb(model, idx, c, -opts.step, &mut f);
            if up_piece != piece || down_piece != piece {
                skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[idx].data()[c];
            worst = worst.max(coordinate_error(a, numeric));
            diff += (a - numeric) * (a - numeric);
            a_norm += a * a;
            n_norm += numeric * numeric;
        }
        params.push(ParamCheck {
            name: name.clone(),
            coords: coords.len(),
            max_rel_error: worst,
            norm_rel_error: diff.sqrt() / a_norm.sqrt().max(n_norm.sqrt()).max(DENOM_FLOOR),
            skipped,
        });
    }
    Ok(GradCheckReport {
        params,
        threshold: opts.threshold,
    })
}

fn perturb<M: Parameterized<f64> + ?Sized>(
    model: &mut M,
    idx: usize,
    coord: usize,
    delta: f64,
    f: &mut impl FnMut(&M) -> (f64, Vec<usize>),
) -> (f64, Vec<usize>) {
    let mut orig = 0.0;
    set_coord(model, idx, coord, |v| {
        orig = *v;
        *v += delta;
    });
    let value = f(model);
    set_coord(model, idx, coord, |v| *v = orig);
    value
}

fn set_coord<M: Parameterized<f64> + ?Sized>(model: &mut M, idx: usize, coord: usize, mut op: impl FnMut(&mut f64)) {
    let mut i = 0;
    model.visit_params_mut("", &mut |_, t| {
        if i == idx {
            op(&mut t.data_mut()[coord]);
        }
        i += 1;
    });
}
