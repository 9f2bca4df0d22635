use crate::error::{Error, Result};

/// Total variation ½‖p − q‖₁.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim("tv distance", p.len(), q.len()));
    }
    let l1: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * l1).clamp(0.0, 1.0))
}

/// 1-D Wasserstein distance Σ_i |F_p(i) − F_q(i)| (x_{i+1} − x_i).
pub fn w1_distance_1d(p: &[f64], q: &[f64], positions: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim("w1 distance", p.len(), q.len()));
    }
    if positions.len() != p.len() {
        return Err(Error::dim("w1 positions", p.len(), positions.len()));
    }
    if positions.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Contract("positions must be strictly increasing".into()));
    }
    let (mut fp, mut fq, mut w) = (0.0, 0.0, 0.0);
    for i in 0..p.len().saturating_sub(1) {
        fp += p[i];
        fq += q[i];
        w += (fp - fq).abs() * (positions[i + 1] - positions[i]);
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn equal_distributions_are_at_zero() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(w1_distance_1d(&p, &p, &[0.0, 1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_point_masses() {
        let p = [1.0, 0.0, 0.0, 0.0];
        let q = [0.0, 0.0, 0.0, 1.0];
        let x = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(tv_distance(&p, &q).unwrap(), 1.0);
        assert_eq!(w1_distance_1d(&p, &q, &x).unwrap(), 3.0);
    }

    #[test]
    fn tv_range_on_random_pairs() {
        let mut r = rng::from_seed(1);
        for _ in 0..1000 {
            let n = r.gen_range(1..8);
            let mut p: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
            let mut q: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
            let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
            p.iter_mut().for_each(|v| *v /= sp);
            q.iter_mut().for_each(|v| *v /= sq);
            let tv = tv_distance(&p, &q).unwrap();
            assert!((0.0..=1.0).contains(&tv));
        }
    }

    #[test]
    fn errors() {
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
        assert!(w1_distance_1d(&[0.5, 0.5], &[0.5, 0.5], &[1.0, 1.0]).is_err());
        assert!(w1_distance_1d(&[0.5, 0.5], &[0.5, 0.5], &[1.0]).is_err());
    }
}
