//! Dense row-major n-dimensional float tensors.
//!
//! The training path runs entirely in `f32`; the same kernels instantiated
//! with `f64` back the finite-difference gradient oracle, where 32-bit
//! rounding noise would drown the error being measured. There is no implicit
//! broadcasting: binary operations require identical shapes, and all shape
//! adaptation is explicit via [`Tensor::reshape`].

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element types the kernels are generic over (`f32` for learnable math,
/// `f64` for the gradient-check oracle).
pub trait Scalar:
    Float + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f32(self) -> f32;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f32(self) -> f32 {
        self
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense tensor with contiguous row-major storage.
///
/// Invariant: `data.len() == product(shape)` at all times.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::ShapeMismatch(format!("shape {shape:?} overflows usize")))
    })
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected = element_count(&shape)?;
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = element_count(shape).expect("shape overflow");
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = element_count(shape).expect("shape overflow");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = element_count(shape).expect("shape overflow");
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, &ix) in index.iter().enumerate() {
            debug_assert!(ix < self.shape[i], "index {index:?} out of {:?}", self.shape);
            off = off * self.shape[i] + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Same data, new shape. Fails unless the element counts agree.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        let n = element_count(new_shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) to {new_shape:?} ({n} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Self {
            shape: new_shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Consuming reshape; avoids the data copy.
    pub fn into_reshaped(mut self, new_shape: &[usize]) -> Result<Self> {
        let n = element_count(new_shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) to {new_shape:?} ({n} elements)",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = new_shape.to_vec();
        Ok(self)
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{op}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(|v| v.tanh())
    }

    pub fn exp(&self) -> Self {
        self.map(|v| v.exp())
    }

    pub fn ln(&self) -> Self {
        self.map(|v| v.ln())
    }

    /// Left-to-right sum of all elements (fixed order for reproducibility).
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// In-place elementwise accumulation.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Standard 2-D matrix product: `(m,k) x (k,n) -> (m,n)`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = dims2(self, "matmul lhs")?;
        let (k2, n) = dims2(other, "matmul rhs")?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul: inner dims {k} vs {k2} ({:?} x {:?})",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row_out = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                let row_b = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row_out.iter_mut().zip(row_b.iter()) {
                    *o = *o + a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// `a x b^T`: `(m,k) x (n,k) -> (m,n)`. Both operands are read along
    /// contiguous rows, so this is the fast path for gradient products.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        let (m, k) = dims2(self, "matmul_nt lhs")?;
        let (n, k2) = dims2(other, "matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul_nt: inner dims {k} vs {k2} ({:?} x {:?}^T)",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row_a = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let row_b = &other.data[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for (&a, &b) in row_a.iter().zip(row_b.iter()) {
                    acc = acc + a * b;
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// `a^T x b`: `(k,m) x (k,n) -> (m,n)`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        let (k, m) = dims2(self, "matmul_tn lhs")?;
        let (k2, n) = dims2(other, "matmul_tn rhs")?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul_tn: inner dims {k} vs {k2} ({:?}^T x {:?})",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        for p in 0..k {
            let row_a = &self.data[p * m..(p + 1) * m];
            let row_b = &other.data[p * n..(p + 1) * n];
            for (i, &a) in row_a.iter().enumerate() {
                let row_out = &mut out[i * n..(i + 1) * n];
                for (o, &b) in row_out.iter_mut().zip(row_b.iter()) {
                    *o = *o + a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

// Raw-slice matmul kernels used by the convolution layer to write straight
// into preallocated buffers. All accumulate over the shared dimension in
// ascending order, keeping reductions bit-reproducible.

/// `out = a (m,k) x b (k,n)`; `out` is overwritten.
pub(crate) fn matmul_into<T: Scalar>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(T::zero());
    for i in 0..m {
        let row_out = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let row_b = &b[p * n..(p + 1) * n];
            for (o, &bv) in row_out.iter_mut().zip(row_b.iter()) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += a (m,k) x b^T` where `b` is `(n,k)`.
pub(crate) fn matmul_nt_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row_a = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let row_b = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in row_a.iter().zip(row_b.iter()) {
                acc = acc + x * y;
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

/// `out = a^T x b` where `a` is `(k,m)` and `b` is `(k,n)`; `out` is overwritten.
pub(crate) fn matmul_tn_into<T: Scalar>(
    a: &[T],
    b: &[T],
    k: usize,
    m: usize,
    n: usize,
    out: &mut [T],
) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(T::zero());
    for p in 0..k {
        let row_a = &a[p * m..(p + 1) * m];
        let row_b = &b[p * n..(p + 1) * n];
        for (i, &av) in row_a.iter().enumerate() {
            let row_out = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row_out.iter_mut().zip(row_b.iter()) {
                *o = *o + av * bv;
            }
        }
    }
}

fn dims2<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::ShapeMismatch(format!(
            "{what}: expected 2-D, got {other:?}"
        ))),
    }
}

impl Tensor<f32> {
    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

impl Tensor<f64> {
    pub fn to_f32(&self) -> Tensor<f32> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Central-difference gradient of a scalar-valued function, 64-bit only.
///
/// `h` defaults to 1e-3 via [`DEFAULT_FD_STEP`]; callers probing functions
/// with kinks (ReLU, max-pool) should pass a smaller step.
pub fn finite_diff_grad(
    f: impl Fn(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    h: f64,
) -> Tensor<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let plus = f(&probe);
        probe.data[i] = orig - h;
        let minus = f(&probe);
        probe.data[i] = orig;
        grad.data[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

pub const DEFAULT_FD_STEP: f64 = 1e-3;

// ---------------------------------------------------------------------------
// VLT1 tensor file format: magic "VLT1", u8 rank, rank x u32 LE dims,
// product(dims) x f32 LE. No padding, no compression.
// ---------------------------------------------------------------------------

pub const VLT1_MAGIC: &[u8; 4] = b"VLT1";

impl Tensor<f32> {
    pub fn write_vlt1(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(VLT1_MAGIC)?;
        w.write_all(&[self.shape.len() as u8])?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_vlt1(r: &mut impl Read, name: &str) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, name)?;
        if &magic != VLT1_MAGIC {
            return Err(Error::BadMagic(name.to_string()));
        }
        let mut rank = [0u8; 1];
        read_exact(r, &mut rank, name)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut dim = [0u8; 4];
            read_exact(r, &mut dim, name)?;
            shape.push(u32::from_le_bytes(dim) as usize);
        }
        let n = element_count(&shape)?;
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            read_exact(r, &mut buf, name)?;
            data.push(f32::from_le_bytes(buf));
        }
        Tensor::new(shape, data)
    }

    /// Atomic save: write to a sibling temp file, then rename into place.
    pub fn save_vlt1(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("vlt.tmp");
        let mut file = fs::File::create(&tmp)
            .map_err(|e| Error::io(format!("create {}", tmp.display()), e))?;
        self.write_vlt1(&mut file)
            .map_err(|e| Error::io(format!("write {}", tmp.display()), e))?;
        file.sync_all()
            .map_err(|e| Error::io(format!("sync {}", tmp.display()), e))?;
        drop(file);
        fs::rename(&tmp, path)
            .map_err(|e| Error::io(format!("rename {} -> {}", tmp.display(), path.display()), e))
    }

    pub fn load_vlt1(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        let mut cursor = &bytes[..];
        let t = Self::read_vlt1(&mut cursor, &path.display().to_string())?;
        if !cursor.is_empty() {
            return Err(Error::MalformedManifest(format!(
                "{}: {} trailing bytes after tensor payload",
                path.display(),
                cursor.len()
            )));
        }
        Ok(t)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], name: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TruncatedFile(name.to_string())
        } else {
            Error::io(format!("read {name}"), e)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    #[test]
    fn reshape_keeps_data_order() {
        let t = Tensor::<f32>::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let r = t.reshape(&[3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
    }

    #[test]
    fn reshape_video_tensor_flattens_to_1260000() {
        // 3 * 28 * 100 * 150 = 1,260,000
        let t = Tensor::<f32>::zeros(&[3, 28, 100, 150]);
        let flat = t.reshape(&[1_260_000]).unwrap();
        assert_eq!(flat.len(), 1_260_000);
    }

    #[test]
    fn reshape_rejects_product_mismatch() {
        let t = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(
            t.reshape(&[4, 2]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn reshape_roundtrip_is_identity() {
        let t = Tensor::<f32>::from_fn(&[4, 5, 2], |i| i as f32);
        let back = t.reshape(&[40]).unwrap().reshape(&[4, 5, 2]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn relu_matches_definition_and_is_idempotent() {
        let t = Tensor::<f32>::new(vec![3], vec![-1.0, 0.0, 2.5]).unwrap();
        let r = t.relu();
        assert_eq!(r.data(), &[0.0, 0.0, 2.5]);
        assert_eq!(r.relu(), r);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let t = Tensor::<f32>::new(vec![1], vec![0.0]).unwrap();
        assert_eq!(t.sigmoid().data(), &[0.5]);
    }

    #[test]
    fn add_elementwise() {
        let a = Tensor::<f32>::new(vec![2], vec![1., 2.]).unwrap();
        let b = Tensor::<f32>::new(vec![2], vec![3., 4.]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4., 6.]);
        let bad = Tensor::<f32>::zeros(&[3]);
        assert!(a.add(&bad).is_err());
    }

    #[test]
    fn matmul_identity_and_small_product() {
        let ident = Tensor::<f32>::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let m = Tensor::<f32>::from_fn(&[3, 3], |i| i as f32);
        assert_eq!(ident.matmul(&m).unwrap(), m);

        let a = Tensor::<f32>::new(vec![1, 2], vec![1., 1.]).unwrap();
        let b = Tensor::<f32>::new(vec![2, 1], vec![2., 3.]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[5.0]);

        let z = Tensor::<f32>::zeros(&[2, 2]);
        let m2 = Tensor::<f32>::from_fn(&[2, 2], |i| (i + 1) as f32);
        assert_eq!(z.matmul(&m2).unwrap(), Tensor::<f32>::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_rejects_inner_dim_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(a.matmul(&b).is_err());
        assert!(a.matmul_nt(&Tensor::<f32>::zeros(&[4, 2])).is_err());
        assert!(a.matmul_tn(&Tensor::<f32>::zeros(&[3, 4])).is_err());
    }

    #[test]
    fn matmul_transposed_variants_agree_with_plain() {
        let mut rng = stream(11, Purpose::Synthetic, 0);
        let a = Tensor::<f64>::from_fn(&[4, 3], |_| rng.gen_range(-1.0..1.0));
        let b = Tensor::<f64>::from_fn(&[3, 5], |_| rng.gen_range(-1.0..1.0));

        let plain = a.matmul(&b).unwrap();

        // b^T has shape (5,3); matmul_nt(a, b^T) must equal a x b.
        let bt = Tensor::<f64>::from_fn(&[5, 3], |i| b.at(&[i % 3, i / 3]));
        assert_eq!(a.matmul_nt(&bt).unwrap(), plain);

        // a^T has shape (3,4); matmul_tn(a^T, b) must equal a x b.
        let at = Tensor::<f64>::from_fn(&[3, 4], |i| a.at(&[i % 4, i / 4]));
        assert_eq!(at.matmul_tn(&b).unwrap(), plain);
    }

    #[test]
    fn matmul_associative_within_tolerance() {
        let mut rng = stream(3, Purpose::Synthetic, 1);
        for _ in 0..5 {
            let a = Tensor::<f64>::from_fn(&[3, 4], |_| rng.gen_range(-1.0..1.0));
            let b = Tensor::<f64>::from_fn(&[4, 2], |_| rng.gen_range(-1.0..1.0));
            let c = Tensor::<f64>::from_fn(&[2, 5], |_| rng.gen_range(-1.0..1.0));
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (&l, &r) in left.data().iter().zip(right.data().iter()) {
                assert!((l - r).abs() < 1e-10, "assoc violated: {l} vs {r}");
            }
        }
    }

    #[test]
    fn finite_diff_of_quadratic() {
        let x = Tensor::<f64>::new(vec![2], vec![1.0, 2.0]).unwrap();
        let grad = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-3);
        assert!((grad.data()[0] - 2.0).abs() < 1e-6);
        assert!((grad.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_of_relu_sum_away_from_kink() {
        let x = Tensor::<f64>::new(vec![2], vec![-1.0, 2.0]).unwrap();
        let grad = finite_diff_grad(
            |t| t.data().iter().map(|&v| v.max(0.0)).sum(),
            &x,
            1e-3,
        );
        assert!(grad.data()[0].abs() < 1e-9);
        assert!((grad.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn finite_diff_of_linear_recovers_coefficients() {
        let mut rng = stream(17, Purpose::Synthetic, 2);
        let coeff: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::<f64>::from_fn(&[6], |_| rng.gen_range(-1.0..1.0));
        let c = coeff.clone();
        let grad = finite_diff_grad(
            move |t| t.data().iter().zip(c.iter()).map(|(a, b)| a * b).sum(),
            &x,
            1e-3,
        );
        for (g, c) in grad.data().iter().zip(coeff.iter()) {
            assert!((g - c).abs() < 1e-8, "{g} vs {c}");
        }
    }

    #[test]
    fn vlt1_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.vlt");
        let mut rng = stream(5, Purpose::Synthetic, 3);
        let t = Tensor::<f32>::from_fn(&[2, 3, 4], |_| rng.gen_range(-10.0f32..10.0));
        t.save_vlt1(&path).unwrap();
        let back = Tensor::<f32>::load_vlt1(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn vlt1_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.vlt");
        let t = Tensor::<f32>::zeros(&[4]);
        t.save_vlt1(&path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Tensor::<f32>::load_vlt1(&path),
            Err(Error::BadMagic(_))
        ));

        let good = {
            bytes[0] = b'V';
            bytes
        };
        std::fs::write(&path, &good[..good.len() - 2]).unwrap();
        assert!(matches!(
            Tensor::<f32>::load_vlt1(&path),
            Err(Error::TruncatedFile(_))
        ));
    }
}
