//! Prior means and covariance kernels for the three working models.
//!
//! * linear regression: `g(x) = x' gamma`, `gamma ~ N(mu, Sigma_gamma)`,
//!   so `mu(x) = x' mu` and `K(x, x') = x' Sigma_gamma x'`;
//! * RBF Gaussian process: `K(x, x') = s^2 exp(-|x - x'|^2 / (2 l^2))`;
//! * NTK-linearized network: `g(x) = f(x; w0) + grad f(x; w0)' (gamma - w0)`,
//!   `gamma ~ N(mu, I / lambda)`, so `K(x, x') = grad f(x)' grad f(x') / lambda`.
//!
//! The linear and NTK kernels are finite-rank and expose their basis
//! `phi(x)` so the posterior can work in parameter space.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf,
    Ntk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
        }
    }

    fn id(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully connected scalar-output network without biases.
///
/// Layer `1` maps `input_dim -> width`, layers `2..L-1` map `width -> width`
/// and the output layer maps `width -> 1`. `weights` holds
/// `vec(W_1), ..., vec(W_L)`, each matrix row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    depth: usize,
    width: usize,
    input_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
}

impl MlpSpec {
    pub fn new(depth: usize, width: usize, input_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if depth < 2 {
            return Err(Error::invalid(format!("network depth must be at least 2, got {depth}")));
        }
        if width == 0 || input_dim == 0 {
            return Err(Error::invalid("network width and input dimension must be positive"));
        }
        let expected = Self::count(depth, width, input_dim);
        if weights.len() != expected {
            return Err(Error::dims("MLP parameter vector", expected, weights.len()));
        }
        Ok(Self {
            depth,
            width,
            input_dim,
            activation: Activation::Tanh,
            weights,
        })
    }

    fn count(depth: usize, width: usize, input_dim: usize) -> usize {
        width * input_dim + (depth - 2) * width * width + width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    /// `(rows, cols, offset)` of every weight matrix.
    pub fn layers(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.depth);
        let mut offset = 0;
        for l in 0..self.depth {
            let (rows, cols) = match l {
                0 => (self.width, self.input_dim),
                l if l + 1 == self.depth => (1, self.width),
                _ => (self.width, self.width),
            };
            out.push((rows, cols, offset));
            offset += rows * cols;
        }
        out
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.depth, self.width, self.input_dim, weights)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::dims("network input", self.input_dim, x.len()));
        }
        Ok(())
    }

    /// Hidden activations `h_0 = x, h_1, ..., h_{L-1}` and the scalar output.
    fn activations(&self, x: &[f64]) -> (Vec<Vec<f64>>, f64) {
        let layers = self.layers();
        let mut hs = vec![x.to_vec()];
        for &(rows, cols, off) in &layers[..self.depth - 1] {
            let prev = hs.last().unwrap();
            let next = (0..rows)
                .map(|i| {
                    let row = &self.weights[off + i * cols..off + (i + 1) * cols];
                    self.activation.apply(row.iter().zip(prev).map(|(w, h)| w * h).sum())
                })
                .collect();
            hs.push(next);
        }
        let (_, cols, off) = layers[self.depth - 1];
        let last = hs.last().unwrap();
        let out = self.weights[off..off + cols].iter().zip(last).map(|(w, h)| w * h).sum();
        (hs, out)
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.activations(x).1)
    }

    /// Gradient of the output with respect to every weight, by backprop.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let layers = self.layers();
        let (hs, _) = self.activations(x);
        let mut grad = vec![0.0; self.weights.len()];

        // Output layer: d f / d W_L = h_{L-1}.
        let (_, cols, off) = layers[self.depth - 1];
        grad[off..off + cols].copy_from_slice(&hs[self.depth - 1]);

        // delta = d f / d a_l for the pre-activations of hidden layer l.
        let out_w = &self.weights[off..off + cols];
        let mut delta: Vec<f64> = out_w
            .iter()
            .zip(&hs[self.depth - 1])
            .map(|(w, h)| w * self.activation.derivative_from_output(*h))
            .collect();
        for l in (0..self.depth - 1).rev() {
            let (rows, cols, off) = layers[l];
            let input = &hs[l];
            for i in 0..rows {
                for j in 0..cols {
                    grad[off + i * cols + j] = delta[i] * input[j];
                }
            }
            if l > 0 {
                let mut back = vec![0.0; cols];
                for i in 0..rows {
                    let row = &self.weights[off + i * cols..off + (i + 1) * cols];
                    for j in 0..cols {
                        back[j] += row[j] * delta[i];
                    }
                }
                delta = back
                    .iter()
                    .zip(input)
                    .map(|(b, h)| b * self.activation.derivative_from_output(*h))
                    .collect();
            }
        }
        Ok(grad)
    }

    /// Flat weight file: a comment, an architecture line
    /// `depth width input_dim activation`, then one weight per line.
    pub fn to_weight_file(&self) -> String {
        let mut s = String::from("# depth width input_dim activation\n");
        let _ = writeln!(s, "{} {} {} {}", self.depth, self.width, self.input_dim, self.activation.id());
        for w in &self.weights {
            let _ = writeln!(s, "{w}");
        }
        s
    }

    pub fn from_weight_file(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("weight file has no architecture line".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::Parse(format!("bad architecture line `{header}`")));
        }
        let num = |s: &str| -> Result<usize> { s.parse().map_err(|e| Error::Parse(format!("`{s}`: {e}"))) };
        let (depth, width, input_dim) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        let activation: Activation = parts[3].parse()?;
        let weights = lines
            .map(|l| l.parse::<f64>().map_err(|e| Error::Parse(format!("weight `{l}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut spec = Self::new(depth, width, input_dim, weights)?;
        spec.activation = activation;
        Ok(spec)
    }
}

/// Random initial weights: hidden layers `N(0, 4/width)`, output layer
/// `N(0, 2/width)`.
pub fn init_mlp<R: Rng + ?Sized>(depth: usize, width: usize, input_dim: usize, rng: &mut R) -> Result<MlpSpec> {
    if depth < 2 {
        return Err(Error::invalid(format!("network depth must be at least 2, got {depth}")));
    }
    if width == 0 || input_dim == 0 {
        return Err(Error::invalid("network width and input dimension must be positive"));
    }
    let hidden = Normal::new(0.0, (4.0 / width as f64).sqrt()).expect("finite sd");
    let output = Normal::new(0.0, (2.0 / width as f64).sqrt()).expect("finite sd");
    let n_hidden = MlpSpec::count(depth, width, input_dim) - width;
    let mut weights: Vec<f64> = (0..n_hidden).map(|_| hidden.sample(rng)).collect();
    weights.extend((0..width).map(|_| output.sample(rng)));
    MlpSpec::new(depth, width, input_dim, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFn {
    Zero,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Linear {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
    Rbf {
        lengthscale: f64,
        signal: f64,
        mean: MeanFn,
    },
    Ntk {
        /// Network whose weights are the linearization point.
        mlp: MlpSpec,
        /// Prior mean of the parameters; the linearization point when `None`.
        prior_weights: Option<DVector<f64>>,
        /// Prior precision: `Sigma_gamma = I / regularization`.
        regularization: f64,
    },
}

impl KernelSpec {
    pub fn linear(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::dims("linear kernel covariance", mean.len(), cov.nrows()));
        }
        check_psd(&cov, "linear kernel covariance")?;
        Ok(KernelSpec::Linear { mean, cov })
    }

    /// `gamma ~ N(0, variance * I)`.
    pub fn isotropic_linear(dim: usize, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::invalid("prior variance must be positive"));
        }
        Self::linear(DVector::zeros(dim), DMatrix::identity(dim, dim) * variance)
    }

    pub fn rbf(lengthscale: f64) -> Result<Self> {
        Self::rbf_with(lengthscale, 1.0, MeanFn::Zero)
    }

    pub fn rbf_with(lengthscale: f64, signal: f64, mean: MeanFn) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::invalid(format!("RBF lengthscale must be positive, got {lengthscale}")));
        }
        if !(signal > 0.0 && signal.is_finite()) {
            return Err(Error::invalid(format!("RBF signal scale must be positive, got {signal}")));
        }
        Ok(KernelSpec::Rbf {
            lengthscale,
            signal,
            mean,
        })
    }

    pub fn ntk(mlp: MlpSpec) -> Self {
        KernelSpec::Ntk {
            mlp,
            prior_weights: None,
            regularization: 1.0,
        }
    }

    pub fn ntk_with(mlp: MlpSpec, prior_weights: Option<DVector<f64>>, regularization: f64) -> Result<Self> {
        if !(regularization > 0.0 && regularization.is_finite()) {
            return Err(Error::invalid("NTK regularization must be positive"));
        }
        if let Some(w) = &prior_weights {
            if w.len() != mlp.param_count() {
                return Err(Error::dims("NTK prior weights", mlp.param_count(), w.len()));
            }
        }
        Ok(KernelSpec::Ntk {
            mlp,
            prior_weights,
            regularization,
        })
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            KernelSpec::Linear { .. } => KernelKind::Linear,
            KernelSpec::Rbf { .. } => KernelKind::Rbf,
            KernelSpec::Ntk { .. } => KernelKind::Ntk,
        }
    }

    /// Required input dimension; `None` when any dimension is accepted.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            KernelSpec::Linear { mean, .. } => Some(mean.len()),
            KernelSpec::Rbf { .. } => None,
            KernelSpec::Ntk { mlp, .. } => Some(mlp.input_dim()),
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        match self.input_dim() {
            Some(d) if d != x.len() => Err(Error::dims("kernel input", d, x.len())),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        self.check(x)?;
        self.check(x2)?;
        match self {
            KernelSpec::Linear { cov, .. } => {
                let a = DVector::from_column_slice(x);
                let b = DVector::from_column_slice(x2);
                // Averaging both orders keeps K(x, x') == K(x', x) bit for bit.
                Ok(0.5 * (a.dot(&(cov * &b)) + b.dot(&(cov * &a))))
            }
            KernelSpec::Rbf {
                lengthscale, signal, ..
            } => {
                if x.len() != x2.len() {
                    return Err(Error::dims("kernel input", x.len(), x2.len()));
                }
                let sq: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
                Ok(signal * signal * (-sq / (2.0 * lengthscale * lengthscale)).exp())
            }
            KernelSpec::Ntk {
                mlp, regularization, ..
            } => {
                let a = mlp.gradient(x)?;
                let b = mlp.gradient(x2)?;
                Ok(a.iter().zip(&b).map(|(u, v)| u * v).sum::<f64>() / regularization)
            }
        }
    }

    pub fn prior_mean(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        match self {
            KernelSpec::Linear { mean, .. } => Ok(mean.iter().zip(x).map(|(m, v)| m * v).sum()),
            KernelSpec::Rbf { mean, .. } => Ok(match mean {
                MeanFn::Zero => 0.0,
                MeanFn::Constant(c) => *c,
            }),
            KernelSpec::Ntk {
                mlp, prior_weights, ..
            } => {
                let f = mlp.forward(x)?;
                match prior_weights {
                    None => Ok(f),
                    Some(w) => {
                        let grad = mlp.gradient(x)?;
                        let shift: f64 = grad
                            .iter()
                            .zip(w.iter().zip(mlp.weights()))
                            .map(|(g, (p, l))| g * (p - l))
                            .sum();
                        Ok(f + shift)
                    }
                }
            }
        }
    }

    /// Basis `phi(x)` of a finite-rank kernel; `None` for RBF.
    pub fn basis(&self, x: &[f64]) -> Option<Result<DVector<f64>>> {
        match self {
            KernelSpec::Linear { .. } => Some(self.check(x).map(|_| DVector::from_column_slice(x))),
            KernelSpec::Rbf { .. } => None,
            KernelSpec::Ntk { mlp, .. } => Some(mlp.gradient(x).map(DVector::from_vec)),
        }
    }

    /// Parameter prior `(mu_gamma, Sigma_gamma)` of a finite-rank kernel.
    pub fn parameter_prior(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        match self {
            KernelSpec::Linear { mean, cov } => Some((mean.clone(), cov.clone())),
            KernelSpec::Rbf { .. } => None,
            KernelSpec::Ntk {
                mlp,
                prior_weights,
                regularization,
            } => {
                let p = mlp.param_count();
                let mean = prior_weights
                    .clone()
                    .unwrap_or_else(|| DVector::from_column_slice(mlp.weights()));
                Some((mean, DMatrix::identity(p, p) / *regularization))
            }
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    spec.eval(x, x2)
}

pub fn prior_mean(spec: &KernelSpec, x: &[f64]) -> Result<f64> {
    spec.prior_mean(x)
}

/// Gradient of the network output with respect to all parameters.
pub fn ntk_features(spec: &MlpSpec, x: &[f64]) -> Result<Vec<f64>> {
    spec.gradient(x)
}

/// Gram matrix `K(points_i, points_j)`.
pub fn gram(spec: &KernelSpec, points: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval(points[i].as_slice(), points[j].as_slice())?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::invalid(format!("{what} is not symmetric")));
    }
    let min = m
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min < -1e-10 * scale {
        return Err(Error::invalid(format!("{what} is not positive semidefinite (min eigenvalue {min:e})")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn rbf_self_similarity_is_signal_squared() {
        let k = KernelSpec::rbf(0.7).unwrap();
        assert_eq!(k.eval(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(k.prior_mean(&[3.0]).unwrap(), 0.0);
        assert!(KernelSpec::rbf(0.0).is_err());
    }

    #[test]
    fn linear_identity_is_dot_product() {
        let k = KernelSpec::isotropic_linear(2, 1.0).unwrap();
        assert_eq!(k.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(k.prior_mean(&[5.0, -1.0]).unwrap(), 0.0);
        assert!(k.eval(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn linear_rejects_indefinite_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(KernelSpec::linear(DVector::zeros(2), cov).is_err());
    }

    #[test]
    fn init_is_deterministic_and_checks_depth() {
        let a = init_mlp(2, 12, 3, &mut stream_rng(1, Stream::Agent)).unwrap();
        let b = init_mlp(2, 12, 3, &mut stream_rng(1, Stream::Agent)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.param_count(), 12 * 3 + 12);
        assert!(init_mlp(1, 12, 3, &mut stream_rng(1, Stream::Agent)).is_err());
    }

    #[test]
    fn hidden_weight_variance_matches_init_scheme() {
        // 10^5 hidden draws: width 50, input 2000 -> 10^5 weights in W_1.
        let mlp = init_mlp(2, 50, 2000, &mut stream_rng(3, Stream::Agent)).unwrap();
        let (rows, cols, off) = mlp.layers()[0];
        let w = &mlp.weights()[off..off + rows * cols];
        assert_eq!(w.len(), 100_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let target = 4.0 / 50.0;
        assert!((var / target - 1.0).abs() < 0.05, "var {var} vs {target}");
    }

    #[test]
    fn output_layer_gradient_is_last_hidden_activation() {
        let mlp = init_mlp(3, 5, 2, &mut stream_rng(9, Stream::Agent)).unwrap();
        let x = [0.3, -1.2];
        let g = mlp.gradient(&x).unwrap();
        let (hs, _) = mlp.activations(&x);
        let (_, cols, off) = mlp.layers()[2];
        assert_eq!(&g[off..off + cols], hs[2].as_slice());
    }

    #[test]
    fn zero_output_weights_cut_the_chain() {
        let mlp = init_mlp(2, 4, 3, &mut stream_rng(5, Stream::Agent)).unwrap();
        let mut w = mlp.weights().to_vec();
        let (_, cols, off) = mlp.layers()[1];
        w[off..off + cols].iter_mut().for_each(|v| *v = 0.0);
        let cut = mlp.with_weights(w).unwrap();
        let g = cut.gradient(&[1.0, 2.0, 3.0]).unwrap();
        assert!(g[..off].iter().all(|&v| v == 0.0));
        assert!(g[off..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn zero_middle_layer_cuts_first_layer() {
        let mlp = init_mlp(3, 4, 2, &mut stream_rng(6, Stream::Agent)).unwrap();
        let mut w = mlp.weights().to_vec();
        let (rows, cols, off) = mlp.layers()[1];
        w[off..off + rows * cols].iter_mut().for_each(|v| *v = 0.0);
        let cut = mlp.with_weights(w).unwrap();
        let g = cut.gradient(&[0.5, -0.5]).unwrap();
        let (r0, c0, _) = cut.layers()[0];
        assert!(g[..r0 * c0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ntk_kernel_is_feature_inner_product() {
        let mlp = init_mlp(2, 6, 3, &mut stream_rng(2, Stream::Agent)).unwrap();
        let k = KernelSpec::ntk(mlp.clone());
        let (x, y) = ([0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]);
        let fx = ntk_features(&mlp, &x).unwrap();
        let fy = ntk_features(&mlp, &y).unwrap();
        let dot: f64 = fx.iter().zip(&fy).map(|(a, b)| a * b).sum();
        assert_eq!(k.eval(&x, &y).unwrap(), dot);
        let sq: f64 = fx.iter().map(|a| a * a).sum();
        assert_eq!(k.eval(&x, &x).unwrap(), sq);
        assert_eq!(k.prior_mean(&x).unwrap(), mlp.forward(&x).unwrap());
    }

    #[test]
    fn weight_file_round_trip() {
        let mlp = init_mlp(3, 4, 2, &mut stream_rng(8, Stream::Agent)).unwrap();
        let text = mlp.to_weight_file();
        assert!(text.lines().nth(1).unwrap() == "3 4 2 tanh");
        assert_eq!(MlpSpec::from_weight_file(&text).unwrap(), mlp);
        assert!(MlpSpec::from_weight_file("2 4 2 relu\n").is_err());
    }
}
