//! Extended Kalman filter.
//!
//! Predict: `x⁻ = f(x)`, `P⁻ = F P Fᵀ + Q`.
//! Update: `ẑ = h(x⁻)`, `K = P⁻Hᵀ(H P⁻ Hᵀ + R)⁻¹`, `x⁺ = x⁻ + K(z − ẑ)`,
//! `P⁺ = (I − K H) P⁻`.
//! Both steps re-symmetrize `P` to keep round-off from accumulating.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// State-transition and measurement maps with their Jacobians and noise
/// covariances.
pub trait EkfModel {
    fn state_dim(&self) -> usize;
    fn measurement_dim(&self) -> usize;
    fn transition(&self, x: &DVector<f64>) -> DVector<f64>;
    fn transition_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn measure(&self, x: &DVector<f64>) -> DVector<f64>;
    fn measurement_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn process_noise(&self) -> DMatrix<f64>;
    fn measurement_noise(&self) -> DMatrix<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    /// Number of completed updates.
    pub k: usize,
}

impl EkfState {
    pub fn new(x0: DVector<f64>, p0: DMatrix<f64>) -> Result<Self> {
        let n = x0.len();
        if p0.shape() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "P0 is {:?}, state has {n} components",
                p0.shape()
            )));
        }
        Ok(Self { x: x0, p: p0, k: 0 })
    }
}

fn symmetrize(p: DMatrix<f64>) -> DMatrix<f64> {
    (&p + p.transpose()) * 0.5
}

pub fn ekf_predict<M: EkfModel + ?Sized>(s: &EkfState, m: &M) -> EkfState {
    let f = m.transition_jacobian(&s.x);
    let x = m.transition(&s.x);
    let p = &f * &s.p * f.transpose() + m.process_noise();
    EkfState {
        x,
        p: symmetrize(p),
        k: s.k,
    }
}

pub fn ekf_update<M: EkfModel + ?Sized>(s: &EkfState, z: &DVector<f64>, m: &M) -> Result<EkfState> {
    if z.len() != m.measurement_dim() {
        return Err(Error::ShapeMismatch(format!(
            "measurement has {} components, model expects {}",
            z.len(),
            m.measurement_dim()
        )));
    }
    let h = m.measurement_jacobian(&s.x);
    let z_hat = m.measure(&s.x);
    let innovation_cov = &h * &s.p * h.transpose() + m.measurement_noise();

    let sv = innovation_cov.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-12 * smax.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularInnovation);
    }
    let s_inv = innovation_cov
        .try_inverse()
        .ok_or(Error::SingularInnovation)?;
    let gain = &s.p * h.transpose() * s_inv;
    let x = &s.x + &gain * (z - z_hat);
    let n = s.x.len();
    let p = (DMatrix::identity(n, n) - &gain * &h) * &s.p;
    Ok(EkfState {
        x,
        p: symmetrize(p),
        k: s.k + 1,
    })
}

/// Linear model `x' = F x`, `z = H x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl EkfModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    fn measurement_dim(&self) -> usize {
        self.h.nrows()
    }

    fn transition(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.f * x
    }

    fn transition_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.f.clone()
    }

    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x
    }

    fn measurement_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.h.clone()
    }

    fn process_noise(&self) -> DMatrix<f64> {
        self.q.clone()
    }

    fn measurement_noise(&self) -> DMatrix<f64> {
        self.r.clone()
    }
}

/// Planar constant-velocity state `[x, y, vx, vy]` observed by two position
/// sensors stacked as `[gaze_x, gaze_y, det_x, det_y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantVelocity {
    /// Step in seconds.
    pub dt: f64,
    /// Diagonal of Q.
    pub q: [f64; 4],
    /// Diagonal of R.
    pub r: [f64; 4],
}

impl EkfModel for ConstantVelocity {
    fn state_dim(&self) -> usize {
        4
    }

    fn measurement_dim(&self) -> usize {
        4
    }

    fn transition(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![
            x[0] + self.dt * x[2],
            x[1] + self.dt * x[3],
            x[2],
            x[3],
        ])
    }

    fn transition_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut f = DMatrix::identity(4, 4);
        f[(0, 2)] = self.dt;
        f[(1, 3)] = self.dt;
        f
    }

    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[0], x[1], x[0], x[1]])
    }

    fn measurement_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0,
            ],
        )
    }

    fn process_noise(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&self.q))
    }

    fn measurement_noise(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&self.r))
    }
}
