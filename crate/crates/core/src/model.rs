//! The linear dynamical system, trajectories and simulation.
//!
//! ```text
//! x_{t+1} = A x_t + B u_t + w_t
//! y_t     = C x_t + D u_t + z_t
//! ```

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::distribution::NoiseModel;
use crate::error::{Result, SysIdError};
use crate::linalg;
use crate::rng::{self, stream};

/// System matrices `(A, B, C, D)` with state, observation and input dimensions `(n, m, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl SystemMatrices {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = c.nrows();
        let p = b.ncols();
        if n == 0 || m == 0 || p == 0 {
            return Err(SysIdError::Dimension("n, m and p must be positive".into()));
        }
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.shape() != (m, p) {
            return Err(SysIdError::Dimension(format!(
                "A {:?}, B {:?}, C {:?}, D {:?} are inconsistent",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if mat.iter().any(|x| !x.is_finite()) {
                return Err(SysIdError::NonFinite(name));
            }
        }
        Ok(SystemMatrices { a, b, c, d })
    }

    /// Scalar system `(a, b, c, d)`.
    pub fn scalar(a: f64, b: f64, c: f64, d: f64) -> Self {
        let one = |x| DMatrix::from_element(1, 1, x);
        SystemMatrices {
            a: one(a),
            b: one(b),
            c: one(c),
            d: one(d),
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    /// `(U^{-1} A U, U^{-1} B, C U, D)`.
    pub fn transformed(&self, u: &DMatrix<f64>) -> Result<Self> {
        let inv = u
            .clone()
            .try_inverse()
            .ok_or_else(|| SysIdError::RankDeficient("similarity transform is singular".into()))?;
        SystemMatrices::new(&inv * &self.a * u, &inv * &self.b, &self.c * u, self.d.clone())
    }

    /// One state update using the same arithmetic as [`simulate`].
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut next = w.clone();
        next.gemv(1.0, &self.a, x, 1.0);
        next.gemv(1.0, &self.b, u, 1.0);
        next
    }

    /// One observation using the same arithmetic as [`simulate`].
    pub fn observe(&self, x: &DVector<f64>, u: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let mut y = z.clone();
        y.gemv(1.0, &self.c, x, 1.0);
        y.gemv(1.0, &self.d, u, 1.0);
        y
    }
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct SystemRepr {
    n: usize,
    m: usize,
    p: usize,
    A: Vec<Vec<f64>>,
    B: Vec<Vec<f64>>,
    C: Vec<Vec<f64>>,
    D: Vec<Vec<f64>>,
}

impl Serialize for SystemMatrices {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SystemRepr {
            n: self.n(),
            m: self.m(),
            p: self.p(),
            A: linalg::to_rows(&self.a),
            B: linalg::to_rows(&self.b),
            C: linalg::to_rows(&self.c),
            D: linalg::to_rows(&self.d),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SystemMatrices {
    fn deserialize<De: Deserializer<'de>>(d: De) -> std::result::Result<Self, De::Error> {
        use serde::de::Error;
        let r = SystemRepr::deserialize(d)?;
        let check_rows = |name: &str, rows: &[Vec<f64>], want: usize| {
            if rows.len() != want {
                Err(De::Error::custom(format!("{name} has {} rows, expected {want}", rows.len())))
            } else {
                Ok(())
            }
        };
        check_rows("A", &r.A, r.n)?;
        check_rows("B", &r.B, r.n)?;
        check_rows("C", &r.C, r.m)?;
        check_rows("D", &r.D, r.m)?;
        let a = linalg::from_rows(&r.A, r.n).map_err(De::Error::custom)?;
        let b = linalg::from_rows(&r.B, r.p).map_err(De::Error::custom)?;
        let c = linalg::from_rows(&r.C, r.n).map_err(De::Error::custom)?;
        let dd = linalg::from_rows(&r.D, r.p).map_err(De::Error::custom)?;
        SystemMatrices::new(a, b, c, dd).map_err(De::Error::custom)
    }
}

/// Markov parameters `X_0 = D`, `X_j = C A^{j-1} B` for `j = 1..=k`.
pub fn markov_parameters(sys: &SystemMatrices, k: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(sys.d.clone());
    let mut ca = sys.c.clone();
    for _ in 1..=k {
        out.push(&ca * &sys.b);
        ca = &ca * &sys.a;
    }
    out
}

/// Hidden quantities recorded by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    /// `x_0 .. x_{T+1}` as columns (`n x (T+2)`).
    pub states: DMatrix<f64>,
    /// `w_0 .. w_T` as columns.
    pub process_noise: DMatrix<f64>,
    /// `z_0 .. z_T` as columns.
    pub observation_noise: DMatrix<f64>,
}

/// Inputs `u_0..u_T` and observations `y_0..y_T`, stored column-per-time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub inputs: DMatrix<f64>,
    pub observations: DMatrix<f64>,
    pub hidden: Option<HiddenStates>,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn new(inputs: DMatrix<f64>, observations: DMatrix<f64>) -> Result<Self> {
        if inputs.ncols() != observations.ncols() || inputs.ncols() == 0 {
            return Err(SysIdError::Dimension(format!(
                "{} input columns vs {} observation columns",
                inputs.ncols(),
                observations.ncols()
            )));
        }
        Ok(Trajectory {
            inputs,
            observations,
            hidden: None,
            seed: None,
        })
    }

    /// Final time index `T`.
    pub fn horizon(&self) -> usize {
        self.inputs.ncols() - 1
    }

    pub fn m(&self) -> usize {
        self.observations.nrows()
    }

    pub fn p(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn u(&self, t: usize) -> DVectorView<'_, f64> {
        self.inputs.column(t)
    }

    pub fn y(&self, t: usize) -> DVectorView<'_, f64> {
        self.observations.column(t)
    }

    /// The same data with time origin moved to `start` (hidden fields dropped).
    pub fn shifted(&self, start: usize) -> Result<Self> {
        if start >= self.inputs.ncols() {
            return Err(SysIdError::OutOfRange {
                index: start,
                horizon: self.horizon(),
            });
        }
        let cols = self.inputs.ncols() - start;
        Trajectory::new(
            self.inputs.columns(start, cols).into_owned(),
            self.observations.columns(start, cols).into_owned(),
        )
    }
}

/// Simulates the system for `t = 0..=T`.
///
/// `u_t`, `w_t` and `z_t` are drawn from substreams `(seed, stream, t)` and `x_0`
/// from `(seed, initial, 0)`, so every draw is independent of every other and
/// of the horizon.
pub fn simulate(sys: &SystemMatrices, noise: &NoiseModel, horizon: usize, seed: u64) -> Result<Trajectory> {
    if horizon < 1 {
        return Err(SysIdError::InvalidArgument("horizon must be at least 1".into()));
    }
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    noise.validate(n, m, p)?;
    let len = horizon + 1;
    let mut inputs = DMatrix::zeros(p, len);
    let mut observations = DMatrix::zeros(m, len);
    let mut states = DMatrix::zeros(n, len + 1);
    let mut wmat = DMatrix::zeros(n, len);
    let mut zmat = DMatrix::zeros(m, len);

    let mut sn = DVector::zeros(n);
    let mut sm = DVector::zeros(m);
    let mut sp = DVector::zeros(p);
    let mut x = DVector::zeros(n);
    noise
        .initial
        .sample_into(&mut rng::substream(seed, stream::INITIAL, 0), &mut sn, &mut x);
    states.set_column(0, &x);
    let mut u = DVector::zeros(p);
    let mut w = DVector::zeros(n);
    let mut z = DVector::zeros(m);
    for t in 0..len {
        let tt = t as u64;
        noise
            .input
            .sample_into(&mut rng::substream(seed, stream::INPUT, tt), &mut sp, &mut u);
        noise
            .process
            .sample_into(&mut rng::substream(seed, stream::PROCESS, tt), &mut sn, &mut w);
        noise
            .observation
            .sample_into(&mut rng::substream(seed, stream::OBSERVATION, tt), &mut sm, &mut z);
        let y = sys.observe(&x, &u, &z);
        x = sys.step(&x, &u, &w);
        inputs.set_column(t, &u);
        observations.set_column(t, &y);
        wmat.set_column(t, &w);
        zmat.set_column(t, &z);
        states.set_column(t + 1, &x);
    }
    Ok(Trajectory {
        inputs,
        observations,
        hidden: Some(HiddenStates {
            states,
            process_noise: wmat,
            observation_noise: zmat,
        }),
        seed: Some(seed),
    })
}

/// `y_t = D u_t + z_t + sum_{i=1..t} C A^{i-1} (B u_{t-i} + w_{t-i}) + C A^t x_0`,
/// evaluated from the recorded draws without running the recursion.
pub fn closed_form_y(
    sys: &SystemMatrices,
    inputs: &DMatrix<f64>,
    process_noise: &DMatrix<f64>,
    observation_noise: &DMatrix<f64>,
    x0: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    let len = inputs.ncols().min(process_noise.ncols()).min(observation_noise.ncols());
    if t >= len {
        return Err(SysIdError::OutOfRange {
            index: t,
            horizon: len.saturating_sub(1),
        });
    }
    if inputs.nrows() != sys.p()
        || process_noise.nrows() != sys.n()
        || observation_noise.nrows() != sys.m()
        || x0.len() != sys.n()
    {
        return Err(SysIdError::Dimension("sequence dimensions do not match the system".into()));
    }
    let mut y = &sys.d * inputs.column(t) + observation_noise.column(t);
    let mut ca = sys.c.clone();
    for i in 1..=t {
        let drive = &sys.b * inputs.column(t - i) + process_noise.column(t - i);
        y += &ca * drive;
        ca = &ca * &sys.a;
    }
    y += ca * x0;
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{DistributionKind, DistributionSpec};

    fn noiseless(n: usize, m: usize, p: usize, kind: DistributionKind) -> NoiseModel {
        NoiseModel {
            input: DistributionSpec::isotropic(kind, p),
            process: DistributionSpec::zero(n),
            observation: DistributionSpec::zero(m),
            initial: DistributionSpec::zero(n),
        }
    }

    #[test]
    fn zero_system_outputs_zero() {
        let sys = SystemMatrices::scalar(0.0, 0.0, 0.0, 0.0);
        let traj = simulate(&sys, &noiseless(1, 1, 1, DistributionKind::Gaussian), 20, 5).unwrap();
        assert!(traj.observations.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn unit_inputs_into_integrator_count_up() {
        let sys = SystemMatrices::scalar(1.0, 1.0, 1.0, 1.0);
        let t_max = 10;
        let inputs = DMatrix::from_element(1, t_max + 1, 1.0);
        let zeros = DMatrix::zeros(1, t_max + 1);
        let x0 = DVector::zeros(1);
        for t in 0..=t_max {
            let y = closed_form_y(&sys, &inputs, &zeros, &zeros, &x0, t).unwrap();
            assert_eq!(y[0], (t + 1) as f64);
        }
    }

    #[test]
    fn closed_form_small_cases() {
        let sys = SystemMatrices::scalar(1.0, 1.0, 1.0, 0.0);
        let inputs = DMatrix::from_element(1, 4, 1.0);
        let zeros = DMatrix::zeros(1, 4);
        let y = closed_form_y(&sys, &inputs, &zeros, &zeros, &DVector::zeros(1), 3).unwrap();
        assert_eq!(y[0], 3.0);

        let sys = SystemMatrices::scalar(0.7, 2.0, 3.0, 5.0);
        let inputs = DMatrix::from_element(1, 1, 2.0);
        let z = DMatrix::from_element(1, 1, 0.25);
        let y = closed_form_y(&sys, &inputs, &zeros.columns(0, 1).into_owned(), &z, &DVector::from_element(1, 4.0), 0)
            .unwrap();
        assert_eq!(y[0], 5.0 * 2.0 + 0.25 + 3.0 * 4.0);
        assert!(closed_form_y(&sys, &inputs, &zeros, &z, &DVector::zeros(1), 1).is_err());
    }

    #[test]
    fn simulate_is_deterministic_and_checks_dimensions() {
        let sys = SystemMatrices::scalar(0.9, 1.0, 1.0, 0.0);
        let noise = NoiseModel::standard(DistributionKind::Laplace, 1, 1, 1, 1.0, 1.0);
        let a = simulate(&sys, &noise, 50, 11).unwrap();
        let b = simulate(&sys, &noise, 50, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate(&sys, &noise, 80, 11).unwrap();
        assert_eq!(a.observations, c.observations.columns(0, 51).into_owned());
        let wrong = NoiseModel::standard(DistributionKind::Gaussian, 2, 1, 1, 1.0, 1.0);
        assert!(simulate(&sys, &wrong, 10, 0).is_err());
        assert!(simulate(&sys, &noise, 0, 0).is_err());
    }

    #[test]
    fn system_json_round_trip() {
        let sys = SystemMatrices::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.25]),
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            DMatrix::from_row_slice(1, 2, &[3.0, 4.0]),
            DMatrix::from_row_slice(1, 1, &[0.1]),
        )
        .unwrap();
        let s = serde_json::to_string(&sys).unwrap();
        assert!(s.contains("\"A\":[[0.5,1.0],[0.0,0.25]]"));
        let back: SystemMatrices = serde_json::from_str(&s).unwrap();
        assert_eq!(sys, back);
    }

    #[test]
    fn inconsistent_dimensions_rejected() {
        let r = SystemMatrices::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
        );
        assert!(r.is_err());
    }
}
