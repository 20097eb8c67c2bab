//! `model.okra` container.
//!
//! ```text
//! "OKRM" | version u16 | model type u8 (1 = kpca, 2 = svm) | payload
//! ```
//!
//! All integers are little-endian `u64` unless noted, all reals `f64` LE.
//! KPCA payload: `n, m, eigenvalues[m], components[n*m] (row-major),
//! col_means[n], total_mean, requested`.
//! SVM payload: `c, n_train, n_classes, classes[n_classes] (i32),
//! n_machines`, then per machine `bias, converged u8, passes, n_sv,
//! support[n_sv], dual_coefs[n_sv]`.

use std::io::{self, Read, Write};

use super::kpca::{Centering, KpcaModel};
use super::pipeline::TrainedModel;
use super::svm::{BinarySvm, SvmModel};
use crate::linalg::Matrix;

pub const MODEL_MAGIC: &[u8; 4] = b"OKRM";
pub const MODEL_VERSION: u16 = 1;

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn put_u64(w: &mut impl Write, v: usize) -> io::Result<()> {
    w.write_all(&(v as u64).to_le_bytes())
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }

    fn u64(&mut self) -> io::Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes()?))
            .map_err(|_| invalid("length overflows usize"))
    }

    /// A count that must fit in `limit` items; guards allocations.
    fn count(&mut self, limit: usize) -> io::Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(invalid(format!("count {n} exceeds limit {limit}")));
        }
        Ok(n)
    }

    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> io::Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

const MAX_ITEMS: usize = 1 << 32;

pub fn write_model(w: &mut impl Write, model: &TrainedModel) -> io::Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    match model {
        TrainedModel::Kpca(m) => {
            w.write_all(&[1])?;
            let (n, k) = (m.components.rows(), m.components.cols());
            put_u64(w, n)?;
            put_u64(w, k)?;
            put_f64s(w, &m.eigenvalues)?;
            put_f64s(w, m.components.as_slice())?;
            put_f64s(w, &m.centering.col_means)?;
            put_f64s(w, &[m.centering.total_mean])?;
            put_u64(w, m.requested)
        }
        TrainedModel::Svm(m) => {
            w.write_all(&[2])?;
            put_f64s(w, &[m.c])?;
            put_u64(w, m.n_train)?;
            put_u64(w, m.classes.len())?;
            for c in &m.classes {
                w.write_all(&c.to_le_bytes())?;
            }
            put_u64(w, m.machines.len())?;
            for mach in &m.machines {
                put_f64s(w, &[mach.bias])?;
                w.write_all(&[mach.converged as u8])?;
                put_u64(w, mach.passes)?;
                put_u64(w, mach.support.len())?;
                for &s in &mach.support {
                    put_u64(w, s)?;
                }
                put_f64s(w, &mach.dual_coefs)?;
            }
            Ok(())
        }
    }
}

pub fn read_model(r: impl Read) -> io::Result<TrainedModel> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != MODEL_MAGIC {
        return Err(invalid("bad model magic"));
    }
    let version = u16::from_le_bytes(r.bytes()?);
    if version != MODEL_VERSION {
        return Err(invalid(format!("unsupported model version {version}")));
    }
    match r.bytes::<1>()?[0] {
        1 => {
            let n = r.count(MAX_ITEMS)?;
            let m = r.count(n.max(1))?;
            let eigenvalues = r.f64s(m)?;
            let components = Matrix::from_vec(n, m, r.f64s(n * m)?);
            let col_means = r.f64s(n)?;
            let total_mean = r.f64()?;
            let requested = r.u64()?;
            Ok(TrainedModel::Kpca(KpcaModel {
                eigenvalues,
                components,
                centering: Centering {
                    col_means,
                    total_mean,
                },
                requested,
            }))
        }
        2 => {
            let c = r.f64()?;
            let n_train = r.count(MAX_ITEMS)?;
            let n_classes = r.count(MAX_ITEMS)?;
            let classes = (0..n_classes)
                .map(|_| Ok(i32::from_le_bytes(r.bytes()?)))
                .collect::<io::Result<_>>()?;
            let n_machines = r.count(n_classes)?;
            let mut machines = Vec::with_capacity(n_machines);
            for _ in 0..n_machines {
                let bias = r.f64()?;
                let converged = r.bytes::<1>()?[0] != 0;
                let passes = r.u64()?;
                let n_sv = r.count(n_train)?;
                let support = (0..n_sv).map(|_| r.u64()).collect::<io::Result<Vec<_>>>()?;
                if support.iter().any(|&s| s >= n_train) {
                    return Err(invalid("support index out of range"));
                }
                let dual_coefs = r.f64s(n_sv)?;
                machines.push(BinarySvm {
                    dual_coefs,
                    support,
                    bias,
                    converged,
                    passes,
                });
            }
            Ok(TrainedModel::Svm(SvmModel {
                c,
                classes,
                machines,
                n_train,
            }))
        }
        t => Err(invalid(format!("unknown model type {t}"))),
    }
}
