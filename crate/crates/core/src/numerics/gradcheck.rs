use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, NumericsError, Tensor, Var};

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub pass: bool,
}

/// Magnitude below which errors are measured absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Checks `analytic` against central differences of `f` at `point`.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> f64, analytic: &[f64], point: &[f64], h: f64, tol: f64) -> GradCheckReport {
    assert!(h > 0.0, "finite-difference step must be positive");
    assert_eq!(analytic.len(), point.len(), "gradient length must match point");
    let numeric = central_difference(&mut f, point, h);
    let (worst_index, max_rel_err) = analytic.iter().zip(&numeric).map(|(&a, &n)| relative_error(a, n)).enumerate().fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    GradCheckReport { max_rel_err, worst_index, analytic: analytic.to_vec(), numeric, pass: max_rel_err <= tol }
}

/// Gradient check of a graph-building function with respect to all of its
/// inputs. The scalar under test is `sum(w * out)` with fixed random weights
/// `w ~ U(-1, 1)` drawn from `seed`, so every output coordinate contributes.
pub fn check_graph_gradients<F>(inputs: &[Tensor], seed: u64, h: f64, tol: f64, build: F) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    let point: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let unflatten = |flat: &[f64]| -> Vec<Tensor> {
        let mut offset = 0;
        shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let t = Tensor::new(s.clone(), flat[offset..offset + n].to_vec()).expect("shape product");
                offset += n;
                t
            })
            .collect()
    };
    let eval = |flat: &[f64]| -> Result<(Graph, Vec<Var>, Var), NumericsError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = unflatten(flat).into_iter().map(|t| g.constant(t)).collect();
        let out = build(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (g0, _, out0) = eval(&point)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_c0ffee);
    let weights: Vec<f64> = (0..g0.value(out0).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let weighted = |g: &mut Graph, out: Var| -> Result<Var, NumericsError> {
        let shape = g.value(out).shape().to_vec();
        let w = g.constant(Tensor::new(shape, weights.clone())?);
        let prod = g.mul(out, w)?;
        g.sum(prod)
    };
    let (mut g, vars, out) = eval(&point)?;
    let loss = weighted(&mut g, out)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| match grads.wrt(v) {
            Some(d) => d.to_vec(),
            None => vec![0.0; g.value(v).len()],
        })
        .collect();
    let f = |flat: &[f64]| -> f64 {
        let (mut g, _, out) = eval(flat).expect("perturbed evaluation");
        let loss = weighted(&mut g, out).expect("weighted loss");
        g.value(loss).item()
    };
    Ok(grad_check(f, &analytic, &point, h, tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_passes_and_corrupted_fails() {
        let f = |x: &[f64]| x[0] * x[0] * x[1] + 3.0 * x[1];
        let p = [1.5, -2.0];
        let g = [2.0 * 1.5 * -2.0, 1.5 * 1.5 + 3.0];
        let r = grad_check(f, &g, &p, 1e-5, 1e-6);
        assert!(r.pass, "{r:?}");
        let bad: Vec<f64> = g.iter().map(|v| v * 1.1).collect();
        let r = grad_check(f, &bad, &p, 1e-5, 1e-6);
        assert!(!r.pass);
        assert!((r.max_rel_err - 0.1 / 1.1).abs() < 1e-6, "{}", r.max_rel_err);
    }
}
