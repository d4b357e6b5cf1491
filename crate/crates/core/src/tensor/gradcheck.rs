/// Result of comparing an analytic gradient to central finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
}

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Central differences with step `h` on every coordinate of `x`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn gradient_check<F>(f: F, x: &[f64], analytic: &[f64], h: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    gradient_check_at(f, x, analytic, h, &coords)
}

/// Like [`gradient_check`] but only on the listed coordinates.
pub fn gradient_check_at<F>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    coords: &[usize],
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
    };
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let abs = (numeric - analytic[i]).abs();
        let rel = abs / numeric.abs().max(analytic[i].abs()).max(REL_ERROR_FLOOR);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report
}
