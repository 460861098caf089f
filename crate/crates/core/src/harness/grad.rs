//! Backpropagation through the softmax.

use ndarray::{Array2, ArrayView1, Zip};

use crate::error::{Error, Result};

/// `J^T g` for the softmax Jacobian at probabilities `p`:
/// `grad_i = p_i (g_i - sum_j p_j g_j)`.
pub fn softmax_chain(p: ArrayView1<'_, f64>, upstream: ArrayView1<'_, f64>) -> Vec<f64> {
    let dot = p.dot(&upstream);
    p.iter()
        .zip(upstream)
        .map(|(&p, &g)| p * (g - dot))
        .collect()
}

/// Row-wise [`softmax_chain`].
pub fn softmax_chain_rows(probs: &Array2<f64>, upstream: &Array2<f64>) -> Result<Array2<f64>> {
    if probs.dim() != upstream.dim() {
        return Err(Error::shape(format!(
            "probabilities {:?} vs upstream gradient {:?}",
            probs.dim(),
            upstream.dim()
        )));
    }
    let mut out = Array2::zeros(probs.raw_dim());
    Zip::from(out.rows_mut())
        .and(probs.rows())
        .and(upstream.rows())
        .for_each(|mut o, p, g| {
            let dot = p.dot(&g);
            Zip::from(&mut o)
                .and(&p)
                .and(&g)
                .for_each(|o, &p, &g| *o = p * (g - dot));
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moe::softmax;
    use ndarray::arr1;

    #[test]
    fn uniform_constant_upstream_is_null() {
        let p = arr1(&[0.25; 4]);
        let g = arr1(&[3.0; 4]);
        assert!(softmax_chain(p.view(), g.view())
            .iter()
            .all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn two_category_formula() {
        let p = arr1(&softmax(&[1.0, 0.0]));
        let grad = softmax_chain(p.view(), arr1(&[1.0, 0.0]).view());
        assert!((grad[0] - 0.19661193324148185).abs() < 1e-15);
        assert!((grad[1] + 0.19661193324148185).abs() < 1e-15);
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = crate::Rng64::new(5);
        let z: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let w: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        // loss(p) = sum_i w_i p_i^2
        let loss = |z: &[f64]| {
            softmax(z)
                .iter()
                .zip(&w)
                .map(|(p, w)| w * p * p)
                .sum::<f64>()
        };
        let p = arr1(&softmax(&z));
        let g = arr1(
            &p.iter()
                .zip(&w)
                .map(|(p, w)| 2.0 * w * p)
                .collect::<Vec<_>>(),
        );
        let analytic = softmax_chain(p.view(), g.view());
        let h = 1e-6;
        for i in 0..5 {
            let (mut up, mut down) = (z.clone(), z.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-6, "{fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn rows_match_single() {
        let probs = Array2::from_shape_vec((2, 3), vec![0.2, 0.3, 0.5, 0.6, 0.3, 0.1]).unwrap();
        let up = Array2::from_shape_vec((2, 3), vec![1.0, -1.0, 0.5, 0.0, 2.0, 1.0]).unwrap();
        let rows = softmax_chain_rows(&probs, &up).unwrap();
        for r in 0..2 {
            assert_eq!(rows.row(r).to_vec(), softmax_chain(probs.row(r), up.row(r)));
        }
        assert!(softmax_chain_rows(&probs, &up.t().to_owned()).is_err());
    }
}
