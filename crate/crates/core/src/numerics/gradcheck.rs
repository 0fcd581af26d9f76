use super::{NumericsError, Prng, Tensor};

/// Which parameter coordinates a gradient check perturbs.
#[derive(Debug, Clone, Copy)]
pub enum Coordinates {
    All,
    /// `count` coordinates drawn uniformly (with replacement) over all
    /// parameter entries.
    Random { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates below [`NOISE_FLOOR`] on both routes.
    pub skipped: usize,
}

/// Coordinates where both the analytic and the numeric gradient are
/// smaller than this are not scored: central-difference roundoff (about
/// `1e-16 * |loss| / h`) would dominate the relative error there.
pub const NOISE_FLOOR: f64 = 1e-4;

/// Compares analytic gradients against central differences.
///
/// `loss_and_grad` returns the loss and its analytic gradient (one tensor
/// per parameter) at the given parameters. The reported error per
/// coordinate is `|analytic - numeric| / (|analytic| + 1e-12)`; see
/// [`NOISE_FLOOR`] for coordinates that are skipped.
pub fn finite_diff_check<F>(
    loss_and_grad: F,
    params: &[Tensor],
    h: f64,
    coords: Coordinates,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>), NumericsError>,
{
    if !(h > 0.0) {
        return Err(NumericsError::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let (_, analytic) = loss_and_grad(params)?;
    let sizes: Vec<usize> = params.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();

    let picks: Vec<(usize, usize)> = match coords {
        Coordinates::All => sizes
            .iter()
            .enumerate()
            .flat_map(|(p, &n)| (0..n).map(move |i| (p, i)))
            .collect(),
        Coordinates::Random { count, seed } => {
            let mut rng = Prng::new(seed);
            let count = if total == 0 { 0 } else { count };
            (0..count)
                .map(|_| {
                    let mut flat = rng.below(total);
                    let mut p = 0;
                    while flat >= sizes[p] {
                        flat -= sizes[p];
                        p += 1;
                    }
                    (p, flat)
                })
                .collect()
        }
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    for (p, i) in picks {
        let orig = work[p].data()[i];
        work[p].data_mut()[i] = orig + h;
        let (up, _) = loss_and_grad(&work)?;
        work[p].data_mut()[i] = orig - h;
        let (down, _) = loss_and_grad(&work)?;
        work[p].data_mut()[i] = orig;

        let numeric = (up - down) / (2.0 * h);
        let a = analytic[p].data()[i];
        if a.abs().max(numeric.abs()) < NOISE_FLOOR {
            report.skipped += 1;
            continue;
        }
        let err = (a - numeric).abs() / (a.abs() + 1e-12);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((p, i));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        // f(w) = sum_i c_i w_i^2
        let coeffs = [0.5, 2.0, -1.5];
        let f = |ps: &[Tensor]| {
            let w = ps[0].data();
            let loss = w.iter().zip(coeffs).map(|(x, c)| c * x * x).sum();
            let grad = w.iter().zip(coeffs).map(|(x, c)| 2.0 * c * x).collect();
            Ok((loss, vec![Tensor::vector(grad)]))
        };
        let r = finite_diff_check(f, &[Tensor::vector(vec![0.3, -1.2, 2.5])], 1e-5, Coordinates::All).unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error <= 1e-9, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |ps: &[Tensor]| {
            let x = ps[0].item();
            Ok((x * x * x, vec![Tensor::scalar(2.0 * x)]))
        };
        let r = finite_diff_check(f, &[Tensor::scalar(1.0)], 1e-5, Coordinates::All).unwrap();
        assert!(r.max_rel_error > 0.3);
    }

    #[test]
    fn tiny_coordinates_are_skipped_not_hidden() {
        // analytic claims 0 where the true gradient is 1: still caught
        let f = |ps: &[Tensor]| Ok((ps[0].item(), vec![Tensor::scalar(0.0)]));
        let r = finite_diff_check(f, &[Tensor::scalar(1.0)], 1e-5, Coordinates::All).unwrap();
        assert_eq!(r.skipped, 0);
        assert!(r.max_rel_error > 1.0);
        let flat = |_: &[Tensor]| Ok((3.0, vec![Tensor::scalar(0.0)]));
        let r = finite_diff_check(flat, &[Tensor::scalar(1.0)], 1e-5, Coordinates::All).unwrap();
        assert_eq!((r.checked, r.skipped), (0, 1));
    }

    #[test]
    fn step_must_be_positive() {
        let f = |_: &[Tensor]| Ok((0.0, vec![Tensor::scalar(0.0)]));
        assert!(finite_diff_check(f, &[Tensor::scalar(0.0)], 0.0, Coordinates::All).is_err());
    }
}
