use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::prng::Prng;
use super::scalar::Scalar;

/// Lower clamp for the uniform variate behind each Gumbel draw.
pub const GUMBEL_EPS: f64 = 1e-12;

/// `softmax((logits + g) / τ)` along the last axis with fresh Gumbel noise `g`.
///
/// With `hard`, the forward value is the one-hot arg-max of the relaxed sample
/// while gradients flow through the relaxed sample (straight-through).
pub fn gumbel_softmax<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    temperature: f64,
    hard: bool,
    rng: &mut Prng,
) -> Result<Var> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Contract(format!(
            "gumbel_softmax temperature must be > 0, got {temperature}"
        )));
    }
    let shape = g.shape(logits).to_vec();
    let n: usize = shape.iter().product();
    let noise: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.gumbel(GUMBEL_EPS)))
        .collect();
    let noise = g.constant(&shape, noise)?;
    let perturbed = g.add(logits, noise)?;
    let scaled = g.scale(perturbed, T::from_f64(1.0 / temperature))?;
    let soft = g.softmax(scaled, -1)?;
    if hard {
        g.straight_through(soft)
    } else {
        Ok(soft)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    #[test]
    fn soft_sample_sums_to_one() {
        let mut rng = Prng::new(11, 3);
        for _ in 0..50 {
            let mut g = Graph::<f64>::new();
            let logits: Vec<f64> = (0..7).map(|_| rng.normal() * 3.0).collect();
            let x = g.input(Tensor::new(&[7], logits).unwrap());
            let y = gumbel_softmax(&mut g, x, 1.0, false, &mut rng).unwrap();
            let s: f64 = g.value(y).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_positive_temperature() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[3]));
        let mut rng = Prng::new(0, 0);
        assert!(gumbel_softmax(&mut g, x, 0.0, false, &mut rng).is_err());
        assert!(gumbel_softmax(&mut g, x, -1.0, false, &mut rng).is_err());
    }

    #[test]
    fn low_temperature_approaches_one_hot() {
        let logits = vec![0.3, 1.2, -0.4, 0.9];
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[4], logits.clone()).unwrap());
        // Same noise for both temperatures.
        let mut r1 = Prng::new(5, 3);
        let mut r2 = Prng::new(5, 3);
        let warm = gumbel_softmax(&mut g, x, 1.0, false, &mut r1).unwrap();
        let cold = gumbel_softmax(&mut g, x, 1e-3, false, &mut r2).unwrap();
        let mut noise = Prng::new(5, 3);
        let perturbed: Vec<f64> = logits
            .iter()
            .map(|l| l + noise.gumbel(GUMBEL_EPS))
            .collect();
        let winner = crate::numcore::argmax(&perturbed);
        assert!(g.value(cold)[winner] > 0.999);
        assert_eq!(crate::numcore::argmax(g.value(warm)), winner);
    }

    #[test]
    fn hard_mode_is_one_hot_with_soft_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(
            Tensor::from_f64(&[3], &[0.1, 0.2, 0.3])
                .unwrap()
                .with_grad(),
        );
        let mut rng = Prng::new(2, 3);
        let y = gumbel_softmax(&mut g, x, 1.0, true, &mut rng).unwrap();
        assert_eq!(g.value(y).iter().filter(|&&v| v == 1.0).count(), 1);
        let w = g.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let p = g.mul(y, w).unwrap();
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().iter().any(|v| v.abs() > 1e-6));
    }
}
