//! Minimal dense numeric array.
//!
//! Double precision, row major, no broadcasting or views. The handful of
//! operations here are exactly what the recurrent cell equations need, with a
//! fixed summation order so repeated runs are bit-identical.

use crate::error::{shape_string, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!(
                "tensor dimensions must be positive, got {}",
                shape_string(&shape)
            )));
        }
        if data.len() != expect {
            return Err(Error::Argument(format!(
                "data length {} does not match shape {} (expected {})",
                data.len(),
                shape_string(&shape),
                expect
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor {
            shape: vec![n],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn shape_string(&self) -> String {
        shape_string(&self.shape)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape("add", other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape("sub", other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn scale_assign(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dimension(
                op,
                self.shape_string(),
                other.shape_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Relu,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn scalar_activation(x: f64, kind: ActivationKind) -> f64 {
    match kind {
        ActivationKind::Sigmoid => sigmoid(x),
        ActivationKind::Tanh => x.tanh(),
        ActivationKind::Relu => x.max(0.0),
    }
}

/// Derivative expressed in terms of the forward output `y`.
/// ReLU uses the subgradient 0 at the kink.
pub fn scalar_activation_grad(y: f64, kind: ActivationKind) -> f64 {
    match kind {
        ActivationKind::Sigmoid => y * (1.0 - y),
        ActivationKind::Tanh => 1.0 - y * y,
        ActivationKind::Relu => {
            if y > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

pub fn apply_activation(t: &Tensor, kind: ActivationKind) -> Tensor {
    t.map(|v| scalar_activation(v, kind))
}

/// Elementwise activation derivative from forward outputs.
pub fn activation_grad(y: &Tensor, kind: ActivationKind) -> Tensor {
    y.map(|v| scalar_activation_grad(v, kind))
}

/// Standard matrix product with a fixed row-major inner loop, so the
/// summation order (and therefore the result bits) never varies between runs.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(Error::dimension(
            "matmul",
            a.shape_string(),
            b.shape_string(),
        ));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let mut acc = 0.0;
            for (kk, &av) in arow.iter().enumerate().take(k) {
                acc += av * b.data[kk * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::matrix(m, n, out)
}

/// `m (r x c) * v [c] -> [r]`, accumulating along each row in index order.
pub fn matvec(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    if m.shape().len() != 2 || v.shape().len() != 1 || m.cols() != v.len() {
        return Err(Error::dimension(
            "matvec",
            m.shape_string(),
            v.shape_string(),
        ));
    }
    let data = (0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .zip(v.data())
                .fold(0.0, |acc, (a, b)| acc + a * b)
        })
        .collect();
    Ok(Tensor::vector(data))
}

/// `m^T (c x r view) * v [r] -> [c]`.
pub fn matvec_transposed(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    if m.shape().len() != 2 || v.shape().len() != 1 || m.rows() != v.len() {
        return Err(Error::dimension(
            "matvec_transposed",
            m.shape_string(),
            v.shape_string(),
        ));
    }
    let (r, c) = (m.rows(), m.cols());
    let mut out = vec![0.0; c];
    for i in 0..r {
        let vi = v.data()[i];
        for (j, o) in out.iter_mut().enumerate() {
            *o += m.data[i * c + j] * vi;
        }
    }
    Ok(Tensor::vector(out))
}

/// `acc (r x c) += u [r] v^T [c]`.
pub fn outer_add_assign(acc: &mut Tensor, u: &Tensor, v: &Tensor) -> Result<()> {
    if acc.shape().len() != 2 || acc.rows() != u.len() || acc.cols() != v.len() {
        return Err(Error::dimension(
            "outer_add_assign",
            acc.shape_string(),
            format!("{}x{}", u.len(), v.len()),
        ));
    }
    let c = acc.cols();
    for i in 0..u.len() {
        let ui = u.data()[i];
        let row = &mut acc.data[i * c..(i + 1) * c];
        for (o, &vj) in row.iter_mut().zip(v.data()) {
            *o += ui * vj;
        }
    }
    Ok(())
}

/// Elementwise product of same-shaped tensors.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dimension(
            "hadamard",
            a.shape_string(),
            b.shape_string(),
        ));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| x * y)
        .collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&i2, &a).unwrap(), a);
    }

    #[test]
    fn matmul_row_times_column() {
        let a = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap();
        // 1*3 + 2*4
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Tensor::zeros(vec![2, 3]);
        let b = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 9.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&z, &b).unwrap(), Tensor::zeros(vec![2, 2]));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 2]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("2x2"), "{err}");
    }

    #[test]
    fn hadamard_cases() {
        let a = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let ones = Tensor::vector(vec![1.0, 1.0, 1.0]);
        assert_eq!(hadamard(&a, &ones).unwrap(), a);

        let x = Tensor::vector(vec![2.0, 3.0]);
        let y = Tensor::vector(vec![4.0, 5.0]);
        assert_eq!(hadamard(&x, &y).unwrap().data(), &[8.0, 15.0]);

        let z = Tensor::vector(vec![0.0]);
        let v = Tensor::vector(vec![123.0]);
        assert_eq!(hadamard(&v, &z).unwrap().data(), &[0.0]);
    }

    #[test]
    fn activation_values() {
        assert_eq!(scalar_activation(0.0, ActivationKind::Sigmoid), 0.5);
        assert_eq!(scalar_activation(0.0, ActivationKind::Tanh), 0.0);
        // Direct evaluation of 1/(1+e^-2.5).
        let want = 1.0 / (1.0 + (-2.5f64).exp());
        assert!((want - 0.92414).abs() < 1e-5);
        assert!((scalar_activation(2.5, ActivationKind::Sigmoid) - want).abs() < 1e-12);
    }

    #[test]
    fn activation_gradients_from_outputs() {
        assert_eq!(scalar_activation_grad(0.5, ActivationKind::Sigmoid), 0.25);
        assert_eq!(scalar_activation_grad(0.0, ActivationKind::Tanh), 1.0);
        assert_eq!(scalar_activation_grad(3.0, ActivationKind::Relu), 1.0);
        // Subgradient 0 at the kink.
        assert_eq!(scalar_activation_grad(0.0, ActivationKind::Relu), 0.0);
    }

    #[test]
    fn tensor_shape_validation() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    proptest! {
        #[test]
        fn sigmoid_bounds_and_symmetry(x in -36.0f64..36.0) {
            // Beyond |x| ~ 36.7 the f64 result saturates to exactly 0 or 1,
            // so the strict bound is checked on the non-saturated range.
            let s = sigmoid(x);
            prop_assert!(s > 0.0 && s < 1.0);
            prop_assert!((sigmoid(-x) - (1.0 - s)).abs() < 1e-12);
        }

        #[test]
        fn tanh_matches_scaled_sigmoid(x in -20.0f64..20.0) {
            prop_assert!((x.tanh() - (2.0 * sigmoid(2.0 * x) - 1.0)).abs() < 1e-12);
        }

        #[test]
        fn matmul_associative(vals in proptest::collection::vec(-2.0f64..2.0, 27)) {
            let a = Tensor::matrix(3, 3, vals[0..9].to_vec()).unwrap();
            let b = Tensor::matrix(3, 3, vals[9..18].to_vec()).unwrap();
            let c = Tensor::matrix(3, 3, vals[18..27].to_vec()).unwrap();
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (l, r) in left.data().iter().zip(right.data()) {
                let scale = l.abs().max(r.abs()).max(1.0);
                prop_assert!((l - r).abs() / scale < 1e-9);
            }
        }

        #[test]
        fn hadamard_commutes_and_respects_zero(
            a in proptest::collection::vec(-10.0f64..10.0, 8),
            mask in proptest::collection::vec(proptest::bool::ANY, 8),
        ) {
            let b: Vec<f64> = a.iter().zip(&mask).map(|(&v, &m)| if m { 0.0 } else { v + 1.0 }).collect();
            let ta = Tensor::vector(a.clone());
            let tb = Tensor::vector(b.clone());
            let ab = hadamard(&ta, &tb).unwrap();
            let ba = hadamard(&tb, &ta).unwrap();
            prop_assert_eq!(ab.clone(), ba);
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    prop_assert_eq!(ab.data()[i], 0.0);
                }
            }
        }
    }
}
