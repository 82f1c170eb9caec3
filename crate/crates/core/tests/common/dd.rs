//! Double-double arithmetic (about 106 bits) for finite-difference oracles.
//!
//! Only what the oracles need: field operations, sqrt, exp, ln, a cyclic
//! Jacobi eigenvalue solver, and re-implementations of the rank loss and a
//! small network objective that share no code with the library.

use std::ops::{Add, Div, Mul, Neg, Sub};

use rfr_core::net::{Activation, Network};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn norm(hi: f64, lo: f64) -> Dd {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn scale(self, s: f64) -> Dd {
        self * Dd::from(s)
    }

    pub fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        let x = 1.0 / self.hi.sqrt();
        let ax = self.hi * x;
        let r = self - Dd::from(ax) * Dd::from(ax);
        Dd::from(ax) + Dd::from(r.hi * x * 0.5)
    }

    pub fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd::from(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.scale(k)).scale(1.0 / 1024.0);
        // Taylor series of exp(r) - 1 with |r| < 4e-4
        let mut term = r;
        let mut sum = r;
        for i in 2..=14 {
            term = term * r / Dd::from(i as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // (1 + s)^2 - 1 = s (2 + s), squared ten times
        for _ in 0..10 {
            sum = sum * (sum + Dd::from(2.0));
        }
        let e = sum + Dd::ONE;
        let p = 2f64.powi(k as i32);
        Dd { hi: e.hi * p, lo: e.lo * p }
    }

    pub fn ln(self) -> Dd {
        assert!(self.hi > 0.0, "ln of non-positive value");
        let mut y = Dd::from(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::norm(s, e + f)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        Dd::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from(q2);
        let q3 = r.hi / b.hi;
        Dd::norm(q1, q2) + Dd::from(q3)
    }
}

/// Eigenvalues of a symmetric matrix (row-major, `n × n`) by cyclic Jacobi.
pub fn sym_eigenvalues(a: &[Dd], n: usize) -> Vec<Dd> {
    let mut a = a.to_vec();
    let scale: f64 = a.iter().map(|v| v.hi * v.hi).sum::<f64>().sqrt();
    for _sweep in 0..60 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].hi.powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-31 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.hi == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (apq.scale(2.0));
                let root = (theta * theta + Dd::ONE).sqrt();
                let t = if theta.hi.abs() > 1e100 {
                    Dd::ONE / theta.scale(2.0)
                } else if theta.hi >= 0.0 {
                    Dd::ONE / (theta + root)
                } else {
                    -(Dd::ONE / (root - theta))
                };
                let c = Dd::ONE / (t * t + Dd::ONE).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// `Σ λ log λ` of the scaled Gram matrix of the row-normalized `h` (`rows × cols`).
pub fn rfr_loss(h: &[Dd], rows: usize, cols: usize) -> Dd {
    let mut hbar = h.to_vec();
    for i in 0..rows {
        let row = &mut hbar[i * cols..(i + 1) * cols];
        let norm = row.iter().fold(Dd::ZERO, |s, &v| s + v * v).sqrt();
        for v in row.iter_mut() {
            *v = *v / norm;
        }
    }
    let inv_n = Dd::ONE / Dd::from(rows as f64);
    let mut c = vec![Dd::ZERO; cols * cols];
    for p in 0..cols {
        for q in p..cols {
            let mut s = Dd::ZERO;
            for i in 0..rows {
                s = s + hbar[i * cols + p] * hbar[i * cols + q];
            }
            c[p * cols + q] = s * inv_n;
            c[q * cols + p] = c[p * cols + q];
        }
    }
    let floor = Dd::from(1e-12);
    sym_eigenvalues(&c, cols).into_iter().fold(Dd::ZERO, |acc, l| {
        let l = if l.hi > floor.hi { l } else { floor };
        acc + l * l.ln()
    })
}

/// Network objective `mean CE + α·Σλlogλ(features)` with parameters given
/// in the library's flat order (per layer: weights row-major, then bias; head last).
pub fn network_objective(
    net: &Network,
    params: &[Dd],
    inputs: &[f64],
    labels: &[usize],
    alpha: f64,
) -> Dd {
    let n = labels.len();
    let mut dims: Vec<usize> = vec![net.input_dim()];
    let mut acts: Vec<Activation> = Vec::new();
    for l in net.layers() {
        dims.push(l.affine.weights.rows());
        acts.push(l.activation);
    }
    let k = net.num_classes();
    let mut a: Vec<Dd> = inputs.iter().map(|&v| Dd::from(v)).collect();
    let mut off = 0;
    let affine = |a: &[Dd], din: usize, dout: usize, off: &mut usize| -> Vec<Dd> {
        let w = &params[*off..*off + din * dout];
        let b = &params[*off + din * dout..*off + din * dout + dout];
        *off += din * dout + dout;
        let mut z = vec![Dd::ZERO; n * dout];
        for i in 0..n {
            for o in 0..dout {
                let mut s = b[o];
                for j in 0..din {
                    s = s + w[o * din + j] * a[i * din + j];
                }
                z[i * dout + o] = s;
            }
        }
        z
    };
    for (l, act) in acts.iter().enumerate() {
        let mut z = affine(&a, dims[l], dims[l + 1], &mut off);
        if *act == Activation::Relu {
            for v in z.iter_mut() {
                if v.hi < 0.0 {
                    *v = Dd::ZERO;
                }
            }
        }
        a = z;
    }
    let d = *dims.last().unwrap();
    let logits = affine(&a, d, k, &mut off);
    let mut ce = Dd::ZERO;
    for i in 0..n {
        let row = &logits[i * k..(i + 1) * k];
        let m = row.iter().map(|v| v.hi).fold(f64::NEG_INFINITY, f64::max);
        let sum = row.iter().fold(Dd::ZERO, |s, &v| s + (v - Dd::from(m)).exp());
        ce = ce + (Dd::from(m) + sum.ln() - row[labels[i]]);
    }
    let ce = ce / Dd::from(n as f64);
    if alpha == 0.0 {
        return ce;
    }
    ce + rfr_loss(&a, n, d).scale(alpha)
}
