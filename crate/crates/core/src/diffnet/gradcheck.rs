use crate::numerics::Rng;

/// Central-difference check of `analytic` against `f` at `x`.
///
/// Returns the largest relative error over the checked coordinates, where
/// the denominator is `max(|a|, |n|, 1e-3·max|a|)` so coordinates with a
/// vanishing gradient are judged against the gradient's overall scale. With
/// `subset = Some((k, rng))` only `k` random coordinates are checked.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    subset: Option<(usize, &mut Rng)>,
) -> f64 {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let coords: Vec<usize> = match subset {
        Some((k, rng)) if k < x.len() => {
            let mut all: Vec<usize> = (0..x.len()).collect();
            rng.shuffle(&mut all);
            all.truncate(k);
            all
        }
        _ => (0..x.len()).collect(),
    };
    let scale = analytic.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    let mut probe = x.to_vec();
    let mut worst = 0.0_f64;
    for i in coords {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}
