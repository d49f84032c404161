//! Fully connected layer, `y = x w + b` with `w` stored as [in, out].

use super::{NnError, Real, Tensor};

#[derive(Debug, Clone)]
pub struct FcCache<T> {
    input: Tensor<T>,
    weight: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn fc_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, FcCache<T>), NnError> {
    let (n, d, m) = match (x.shape(), w.shape()) {
        (&[n, d], &[wd, m]) if wd == d && b.shape() == [m] => (n, d, m),
        _ => {
            return Err(NnError::Shape(format!(
                "linear layer: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            )))
        }
    };
    let (xs, ws) = (x.data(), w.data());
    let mut out = Vec::with_capacity(n * m);
    for ni in 0..n {
        let mut row = b.data().to_vec();
        for (di, &xv) in xs[ni * d..(ni + 1) * d].iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&ws[di * m..(di + 1) * m]) {
                *o = *o + xv * wv;
            }
        }
        out.extend(row);
    }
    Ok((
        Tensor::new(vec![n, m], out)?,
        FcCache {
            input: x.clone(),
            weight: w.clone(),
        },
    ))
}

pub fn fc_backward<T: Real>(cache: &FcCache<T>, grad_out: &Tensor<T>) -> Result<FcGrads<T>, NnError> {
    let (n, d) = (cache.input.shape()[0], cache.input.shape()[1]);
    let m = cache.weight.shape()[1];
    if grad_out.shape() != [n, m] {
        return Err(NnError::StaleCache(format!(
            "linear cache is for [{n}, {m}], gradient is {:?}",
            grad_out.shape()
        )));
    }
    let (xs, ws, gs) = (cache.input.data(), cache.weight.data(), grad_out.data());
    let mut dx = vec![T::zero(); n * d];
    let mut dw = vec![T::zero(); d * m];
    let mut db = vec![T::zero(); m];
    for ni in 0..n {
        let g = &gs[ni * m..(ni + 1) * m];
        for (acc, &gv) in db.iter_mut().zip(g) {
            *acc = *acc + gv;
        }
        for di in 0..d {
            let w_row = &ws[di * m..(di + 1) * m];
            dx[ni * d + di] = w_row.iter().zip(g).fold(T::zero(), |a, (&wv, &gv)| a + wv * gv);
            let xv = xs[ni * d + di];
            if xv != T::zero() {
                for (acc, &gv) in dw[di * m..(di + 1) * m].iter_mut().zip(g) {
                    *acc = *acc + xv * gv;
                }
            }
        }
    }
    Ok(FcGrads {
        input: Tensor::new(vec![n, d], dx)?,
        weight: Tensor::new(vec![d, m], dw)?,
        bias: Tensor::new(vec![m], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight() {
        let x = Tensor::<f64>::from_f64(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = Tensor::from_f64(&[3, 3], &eye).unwrap();
        let (y, _) = fc_forward(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_matmul() {
        let x = Tensor::<f64>::from_f64(&[1, 2], &[1.0, 2.0]).unwrap();
        let w = Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap();
        let (y, cache) = fc_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);
        let g = fc_backward(&cache, &Tensor::from_f64(&[1, 2], &[1.0, -1.0]).unwrap()).unwrap();
        assert_eq!(g.input.data(), &[1.0, -1.0]);
        assert_eq!(g.weight.data(), &[1.0, -1.0, 2.0, -2.0]);
        assert_eq!(g.bias.data(), &[1.0, -1.0]);
    }

    #[test]
    fn mismatched_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 3]);
        assert!(fc_forward(&x, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2])).is_err());
        assert!(fc_forward(&x, &Tensor::zeros(&[3, 2]), &Tensor::zeros(&[3])).is_err());
    }
}
