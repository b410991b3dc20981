//! Central finite-difference verification of analytic gradients.

use rand::SeedableRng;

use super::layer::{Layer, Params, SeedRng};
use super::Tensor;
use crate::error::Result;

/// Step used for central differences.
pub const STEP: f64 = 1e-5;
/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Magnitude floor of the relative-error denominator; gradients smaller than this are
/// compared in absolute terms.
pub const MAGNITUDE_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<48} elements={:<5} max_rel_err={:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.max_rel_error
        )
    }
}

/// Compares `analytic` against central differences of `loss` for every tensor in `params`.
///
/// At most `max_per_tensor` elements are probed per tensor (evenly strided).
pub fn check_params<P, F>(
    prefix: &str,
    params: &P,
    analytic: &P,
    max_per_tensor: usize,
    mut loss: F,
) -> Result<Vec<GradCheckEntry>>
where
    P: Params<f64> + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    let mut grads = Vec::new();
    analytic.visit(prefix, &mut |name, t| grads.push((name.to_string(), t.clone())));

    let mut probe = params.clone();
    let mut entries = Vec::with_capacity(grads.len());
    for (slot, (name, grad)) in grads.iter().enumerate() {
        let n = grad.len();
        let stride = n.div_ceil(max_per_tensor.max(1)).max(1);
        let mut max_rel: f64 = 0.0;
        let mut checked = 0;
        for idx in (0..n).step_by(stride) {
            let orig = read_slot(&probe, slot, idx);
            let mut central = |h: f64| -> Result<f64> {
                write_slot(&mut probe, slot, idx, orig + h);
                let up = loss(&probe)?;
                write_slot(&mut probe, slot, idx, orig - h);
                let down = loss(&probe)?;
                write_slot(&mut probe, slot, idx, orig);
                Ok((up - down) / (2.0 * h))
            };
            let analytic = grad.data()[idx];
            let mut err = relative_error(analytic, central(STEP)?);
            if !(err < TOLERANCE) {
                // A ReLU kink inside [x - h, x + h] spoils the difference quotient; retry with
                // smaller steps and trust them only if they agree with each other.
                let (fine, finer) = (central(STEP / 10.0)?, central(STEP / 100.0)?);
                if relative_error(fine, finer) < TOLERANCE {
                    err = relative_error(analytic, finer);
                }
            }
            max_rel = if err.is_nan() { f64::INFINITY } else { max_rel.max(err) };
            checked += 1;
        }
        entries.push(GradCheckEntry {
            name: name.trim_start_matches('.').to_string(),
            checked,
            max_rel_error: max_rel,
            passed: max_rel < TOLERANCE,
        });
    }
    Ok(entries)
}

fn read_slot<P: Params<f64>>(p: &P, slot: usize, idx: usize) -> f64 {
    let mut i = 0;
    let mut v = 0.0;
    p.visit("", &mut |_, t| {
        if i == slot {
            v = t.data()[idx];
        }
        i += 1;
    });
    v
}

fn write_slot<P: Params<f64>>(p: &mut P, slot: usize, idx: usize, value: f64) {
    let mut i = 0;
    p.visit_mut("", &mut |_, t| {
        if i == slot {
            t.data_mut()[idx] = value;
        }
        i += 1;
    });
}

/// Checks a [`Layer`] under the scalar loss `<layer(x), u>` for a random upstream `u`.
/// Reports every parameter tensor and the input gradient.
pub fn check_layer<L: Layer<f64>>(
    name: &str,
    layer: &L,
    x: &Tensor<f64>,
    seed: u64,
    max_per_tensor: usize,
) -> Result<Vec<GradCheckEntry>> {
    let mut rng = SeedRng::seed_from_u64(seed);
    let (y, cache) = layer.forward(x, None)?;
    let upstream = Tensor::<f64>::uniform(y.shape(), -1.0, 1.0, &mut rng);
    let mut grads = layer.zeros_like();
    let dx = layer.backward(&cache, &upstream, &mut grads)?;

    let objective = |l: &L, input: &Tensor<f64>| -> Result<f64> {
        let (y, _) = l.forward(input, None)?;
        y.dot(&upstream)
    };
    let mut entries = check_params(name, layer, &grads, max_per_tensor, |l| objective(l, x))?;
    entries.extend(check_params(
        &format!("{name}.input"),
        x,
        &dx,
        max_per_tensor,
        |input| objective(layer, input),
    )?);
    Ok(entries)
}
