//! Linear signal model observed by `N` sensors over a randomized schedule.
//!
//! The state evolves as `x(t+1) = A x(t) + w(t)` and sensor `n` observes
//! `y_n(t) = C_n x(t) + v_n(t)`. At each time an i.i.d. draw `I(t)` from the
//! schedule decides which subset of sensors reaches the estimator.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::matcone::CovMatrix;

/// Upper bound on the number of sensors (power-set ids fit in 16 bits).
pub const MAX_SENSORS: usize = 16;

/// Tolerance on the total mass of a schedule.
pub const SCHEDULE_SUM_TOL: f64 = 1e-12;

/// A subset of sensors as a bitmask: bit `k` set means sensor `k + 1` transmits.
/// Id 0 is the empty set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SubsetId(pub u32);

impl SubsetId {
    pub const EMPTY: SubsetId = SubsetId(0);

    /// From 1-based sensor numbers.
    pub fn from_sensors(sensors: &[usize]) -> Result<Self> {
        let mut id = 0u32;
        for &s in sensors {
            if s == 0 || s > MAX_SENSORS {
                return Err(Error::InvalidArgument(format!(
                    "sensor numbers are 1-based and at most {MAX_SENSORS}, got {s}"
                )));
            }
            id |= 1 << (s - 1);
        }
        Ok(SubsetId(id))
    }

    pub fn id(self) -> u32 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, sensor: usize) -> bool {
        sensor >= 1 && sensor <= 32 && self.0 & (1 << (sensor - 1)) != 0
    }

    pub fn is_subset_of(self, other: SubsetId) -> bool {
        self.0 & !other.0 == 0
    }

    /// 1-based sensor numbers in ascending order.
    pub fn sensors(self) -> Vec<usize> {
        (0..32).filter(|k| self.0 & (1 << k) != 0).map(|k| k + 1).collect()
    }
}

impl fmt::Display for SubsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sensors().iter().map(|s| s.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl Serialize for SubsetId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.sensors().serialize(serializer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    pub c: DMatrix<f64>,
    pub r: CovMatrix,
}

impl Sensor {
    pub fn new(c: DMatrix<f64>, r: CovMatrix) -> Self {
        Sensor { c, r }
    }
}

/// Validated system matrices and sensor models.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorNetwork {
    a: DMatrix<f64>,
    q: CovMatrix,
    p0: CovMatrix,
    sensors: Vec<Sensor>,
}

impl SensorNetwork {
    pub fn new(a: DMatrix<f64>, q: CovMatrix, p0: CovMatrix, sensors: Vec<Sensor>) -> Result<Self> {
        let m = a.nrows();
        if m == 0 || a.ncols() != m {
            return Err(Error::dims("A", "square matrix", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if q.dim() != m {
            return Err(Error::dims("Q", m, q.dim()));
        }
        if p0.dim() != m {
            return Err(Error::dims("P0", m, p0.dim()));
        }
        if sensors.is_empty() || sensors.len() > MAX_SENSORS {
            return Err(Error::InvalidArgument(format!(
                "network needs between 1 and {MAX_SENSORS} sensors, got {}",
                sensors.len()
            )));
        }
        for (k, s) in sensors.iter().enumerate() {
            let n = k + 1;
            if s.c.ncols() != m || s.c.nrows() == 0 {
                return Err(Error::dims(
                    format!("C of sensor {n}"),
                    format!("m x {m} with m >= 1"),
                    format!("{}x{}", s.c.nrows(), s.c.ncols()),
                ));
            }
            if s.r.dim() != s.c.nrows() {
                return Err(Error::dims(format!("R of sensor {n}"), s.c.nrows(), s.r.dim()));
            }
            let min = s.r.min_eigenvalue();
            if min <= 0.0 {
                return Err(Error::NotPositiveDefinite {
                    what: format!("R of sensor {n}"),
                    min_eigenvalue: min,
                });
            }
        }
        Ok(SensorNetwork { a, q, p0, sensors })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &CovMatrix {
        &self.q
    }

    pub fn p0(&self) -> &CovMatrix {
        &self.p0
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    /// State dimension `M`.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Number of sensors `N`.
    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// Number of subsets, `2^N`.
    pub fn n_subsets(&self) -> u32 {
        1u32 << self.sensors.len()
    }

    pub fn with_p0(&self, p0: CovMatrix) -> Result<Self> {
        SensorNetwork::new(self.a.clone(), self.q.clone(), p0, self.sensors.clone())
    }

    pub fn check_subset(&self, i: SubsetId) -> Result<()> {
        if i.0 >= self.n_subsets() {
            return Err(Error::SubsetOutOfRange {
                id: i.0,
                sensors: self.n_sensors(),
            });
        }
        Ok(())
    }

    /// Stacked `(C^i, R^i)` with sensors in ascending order.
    pub fn stacked_model(&self, i: SubsetId) -> Result<StackedObsModel> {
        if i.is_empty() {
            return Err(Error::EmptySubset);
        }
        self.check_subset(i)?;
        self.stacked_model_in_order(&i.sensors())
    }

    /// Stacked model for an explicit sensor order (1-based numbers).
    pub fn stacked_model_in_order(&self, order: &[usize]) -> Result<StackedObsModel> {
        if order.is_empty() {
            return Err(Error::EmptySubset);
        }
        let mut members = Vec::with_capacity(order.len());
        for &n in order {
            let sensor = n
                .checked_sub(1)
                .and_then(|k| self.sensors.get(k))
                .ok_or_else(|| Error::InvalidArgument(format!("no sensor {n} in network")))?;
            members.push(sensor);
        }
        let m = self.state_dim();
        let rows: usize = members.iter().map(|s| s.c.nrows()).sum();
        let mut c = DMatrix::zeros(rows, m);
        let mut r = DMatrix::zeros(rows, rows);
        let mut offset = 0;
        for s in members {
            let k = s.c.nrows();
            c.view_mut((offset, 0), (k, m)).copy_from(&s.c);
            r.view_mut((offset, offset), (k, k)).copy_from(s.r.as_matrix());
            offset += k;
        }
        Ok(StackedObsModel {
            c,
            r: CovMatrix::from_matrix(r)?,
        })
    }
}

/// `build_network`: validate and assemble a [`SensorNetwork`].
pub fn build_network(a: DMatrix<f64>, q: CovMatrix, p0: CovMatrix, sensors: Vec<Sensor>) -> Result<SensorNetwork> {
    SensorNetwork::new(a, q, p0, sensors)
}

/// Observation model of a subset: stacked `C^i` and block-diagonal `R^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedObsModel {
    pub c: DMatrix<f64>,
    pub r: CovMatrix,
}

pub fn subset_observation_model(net: &SensorNetwork, i: SubsetId) -> Result<StackedObsModel> {
    net.stacked_model(i)
}

/// Probability distribution over subsets, stored sparsely (atoms with
/// positive mass only, ascending id).
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    atoms: Vec<(SubsetId, f64)>,
    cumulative: Vec<f64>,
}

impl Schedule {
    /// Zero-probability entries are dropped. The total must already be 1.
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (SubsetId, f64)>,
    {
        let mut atoms: Vec<(SubsetId, f64)> = Vec::new();
        let mut total = 0.0;
        let mut seen = 0usize;
        for (id, p) in entries {
            seen += 1;
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidSchedule(format!("probability of {id} is {p}")));
            }
            if p > 1.0 {
                return Err(Error::InvalidSchedule(format!("probability of {id} exceeds 1: {p}")));
            }
            if atoms.iter().any(|(a, _)| *a == id) {
                return Err(Error::InvalidSchedule(format!("subset {id} listed twice")));
            }
            total += p;
            if p > 0.0 {
                atoms.push((id, p));
            }
        }
        if seen == 0 || atoms.is_empty() {
            return Err(Error::InvalidSchedule("no atoms with positive probability".into()));
        }
        if (total - 1.0).abs() > SCHEDULE_SUM_TOL {
            return Err(Error::InvalidSchedule(format!(
                "probabilities sum to {total} (deficit {:e})",
                1.0 - total
            )));
        }
        atoms.sort_by_key(|(id, _)| *id);
        let cumulative = atoms
            .iter()
            .scan(0.0, |acc, (_, p)| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(Schedule { atoms, cumulative })
    }

    /// The single-sensor intermittent model: `{∅: 1-γ, {1}: γ}`.
    pub fn bernoulli(gamma: f64) -> Result<Self> {
        Schedule::from_entries([(SubsetId::EMPTY, 1.0 - gamma), (SubsetId(1), gamma)])
    }

    pub fn atoms(&self) -> &[(SubsetId, f64)] {
        &self.atoms
    }

    pub fn prob(&self, i: SubsetId) -> f64 {
        self.atoms.iter().find(|(a, _)| *a == i).map_or(0.0, |(_, p)| *p)
    }

    pub fn support(&self) -> impl Iterator<Item = SubsetId> + '_ {
        self.atoms.iter().map(|(id, _)| *id)
    }

    /// Ensure every atom names sensors that exist in `net`.
    pub fn check_against(&self, net: &SensorNetwork) -> Result<()> {
        self.support().try_for_each(|id| net.check_subset(id))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SubsetId {
        let u: f64 = rng.random();
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.atoms[k.min(self.atoms.len() - 1)].0
    }
}

pub fn schedule_from_entries<I>(entries: I) -> Result<Schedule>
where
    I: IntoIterator<Item = (SubsetId, f64)>,
{
    Schedule::from_entries(entries)
}

/// One i.i.d. draw `I(t)` from the schedule.
pub fn sample_subset<R: Rng + ?Sized>(schedule: &Schedule, rng: &mut R) -> SubsetId {
    schedule.sample(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    /// `x(0), ..., x(T)`.
    pub states: Vec<DVector<f64>>,
}

impl StateTrajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }
}

/// What reached the estimator at one time step. `y` is `None` iff the subset is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub subset: SubsetId,
    pub y: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObsTrajectory {
    pub slots: Vec<Observation>,
}

impl ObsTrajectory {
    pub fn subsets(&self) -> impl Iterator<Item = SubsetId> + '_ {
        self.slots.iter().map(|o| o.subset)
    }
}

fn gaussian<R: Rng + ?Sized>(sqrt_cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(sqrt_cov.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    sqrt_cov * z
}

/// `x(0) ~ N(0, P0)`, `x(t+1) = A x(t) + w(t)` with `w(t) ~ N(0, Q)`.
pub fn simulate_signal<R: Rng + ?Sized>(net: &SensorNetwork, horizon: usize, rng: &mut R) -> Result<StateTrajectory> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let p0_sqrt = net.p0().psd_sqrt();
    let q_sqrt = net.q().psd_sqrt();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut x = gaussian(&p0_sqrt, rng);
    states.push(x.clone());
    for _ in 0..horizon {
        x = net.a() * &x + gaussian(&q_sqrt, rng);
        states.push(x.clone());
    }
    Ok(StateTrajectory { states })
}

/// `y(t) = C^{I(t)} x(t) + v(t)` for each scheduled slot; empty slots carry no data.
pub fn simulate_observations<R: Rng + ?Sized>(
    net: &SensorNetwork,
    states: &StateTrajectory,
    subsets: &[SubsetId],
    rng: &mut R,
) -> Result<ObsTrajectory> {
    if subsets.len() > states.states.len() {
        return Err(Error::dims("subset sequence length", format!("<= {}", states.states.len()), subsets.len()));
    }
    let mut models: HashMap<SubsetId, (StackedObsModel, DMatrix<f64>)> = HashMap::new();
    let mut slots = Vec::with_capacity(subsets.len());
    for (t, &i) in subsets.iter().enumerate() {
        if i.is_empty() {
            slots.push(Observation { subset: i, y: None });
            continue;
        }
        if !models.contains_key(&i) {
            let model = net.stacked_model(i)?;
            let r_sqrt = model.r.psd_sqrt();
            models.insert(i, (model, r_sqrt));
        }
        let (model, r_sqrt) = &models[&i];
        let y = &model.c * &states.states[t] + gaussian(r_sqrt, rng);
        slots.push(Observation { subset: i, y: Some(y) });
    }
    Ok(ObsTrajectory { slots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{sys1d, sys2d};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builds_reference_networks() {
        let n = sys1d();
        assert_eq!((n.state_dim(), n.n_sensors()), (1, 1));
        let n = sys2d();
        assert_eq!((n.state_dim(), n.n_sensors(), n.n_subsets()), (2, 2, 4));
    }

    #[test]
    fn rejects_singular_sensor_noise() {
        let err = SensorNetwork::new(
            DMatrix::from_element(1, 1, 2.0),
            CovMatrix::identity(1),
            CovMatrix::identity(1),
            vec![Sensor::new(DMatrix::from_element(1, 1, 1.0), CovMatrix::zeros(1))],
        )
        .unwrap_err();
        assert!(err.to_string().contains("sensor 1"), "{err}");
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let err = SensorNetwork::new(
            DMatrix::identity(2, 2),
            CovMatrix::identity(2),
            CovMatrix::identity(2),
            vec![Sensor::new(DMatrix::from_element(1, 3, 1.0), CovMatrix::identity(1))],
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let err = SensorNetwork::new(
            DMatrix::identity(2, 2),
            CovMatrix::identity(1),
            CovMatrix::identity(2),
            vec![Sensor::new(DMatrix::from_element(1, 2, 1.0), CovMatrix::identity(1))],
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn subset_ids_map_to_sensors() {
        let id = SubsetId::from_sensors(&[1, 3]).unwrap();
        assert_eq!(id.0, 0b101);
        assert_eq!(id.sensors(), vec![1, 3]);
        assert_eq!(id.to_string(), "{1,3}");
        assert_eq!(SubsetId::EMPTY.to_string(), "{}");
        assert!(SubsetId(1).is_subset_of(id));
        assert!(!SubsetId(2).is_subset_of(id));
        assert!(SubsetId::from_sensors(&[0]).is_err());
    }

    #[test]
    fn stacked_models() {
        let net = sys2d();
        let both = net.stacked_model(SubsetId(0b11)).unwrap();
        assert_eq!(both.c, DMatrix::identity(2, 2));
        assert_eq!(both.r.as_matrix(), &DMatrix::identity(2, 2));
        let second = net.stacked_model(SubsetId(0b10)).unwrap();
        assert_eq!(second.c, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        assert_eq!(second.r.get(0, 0), 1.0);
        let one = sys1d().stacked_model(SubsetId(1)).unwrap();
        assert_eq!((one.c[(0, 0)], one.r.get(0, 0)), (1.0, 1.0));
        assert!(matches!(net.stacked_model(SubsetId::EMPTY), Err(Error::EmptySubset)));
        assert!(matches!(net.stacked_model(SubsetId(4)), Err(Error::SubsetOutOfRange { .. })));
    }

    #[test]
    fn stacked_submask_is_row_subblock() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let net = crate::testkit::random_network(&mut rng, 3, 4);
            let full = net.stacked_model(SubsetId(net.n_subsets() - 1)).unwrap();
            let total_rows: usize = net.sensors().iter().map(|s| s.c.nrows()).sum();
            assert_eq!(full.c.nrows(), total_rows);
            let offsets: Vec<usize> = net
                .sensors()
                .iter()
                .scan(0, |acc, s| {
                    let o = *acc;
                    *acc += s.c.nrows();
                    Some(o)
                })
                .collect();
            for mask in 1..net.n_subsets() {
                let sub = net.stacked_model(SubsetId(mask)).unwrap();
                let mut row = 0;
                for n in SubsetId(mask).sensors() {
                    let k = net.sensors()[n - 1].c.nrows();
                    let o = offsets[n - 1];
                    assert_eq!(sub.c.rows(row, k), full.c.rows(o, k));
                    assert_eq!(sub.r.as_matrix().view((row, row), (k, k)), full.r.as_matrix().view((o, o), (k, k)));
                    row += k;
                }
            }
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::bernoulli(0.5).is_ok());
        assert!(Schedule::from_entries([(SubsetId(1), 1.0)]).is_ok());
        let err = Schedule::from_entries([(SubsetId(0), 0.5), (SubsetId(1), 0.4)]).unwrap_err();
        assert!(err.to_string().contains("0.9"), "{err}");
        assert!(Schedule::from_entries([(SubsetId(0), -0.5), (SubsetId(1), 1.5)]).is_err());
        assert!(Schedule::from_entries(std::iter::empty()).is_err());
        assert!(Schedule::from_entries([(SubsetId(1), 0.5), (SubsetId(1), 0.5)]).is_err());
        let s = Schedule::from_entries([(SubsetId(2), 0.0), (SubsetId(1), 1.0)]).unwrap();
        assert_eq!(s.atoms().len(), 1);
        assert!(Schedule::from_entries([(SubsetId(4), 1.0)]).unwrap().check_against(&sys2d()).is_err());
    }

    #[test]
    fn degenerate_schedule_always_draws_its_atom() {
        let s = Schedule::from_entries([(SubsetId(1), 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| sample_subset(&s, &mut rng) == SubsetId(1)));
    }

    #[test]
    fn bernoulli_frequency_within_four_sigma() {
        let s = Schedule::bernoulli(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let empty = (0..n).filter(|_| sample_subset(&s, &mut rng).is_empty()).count();
        let freq = empty as f64 / n as f64;
        // 4 * sqrt(0.25 / 1e5) = 0.0063
        assert!((freq - 0.5).abs() < 0.007, "{freq}");
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let s = Schedule::from_entries([(SubsetId(0), 0.2), (SubsetId(1), 0.3), (SubsetId(3), 0.5)]).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| sample_subset(&s, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    // chi-square critical values at significance 1e-3 for 1..=7 degrees of freedom
    const CHI2_CRIT_1E3: [f64; 7] = [10.828, 13.816, 16.266, 18.467, 20.515, 22.458, 24.322];

    #[test]
    fn sampling_passes_chi_square_goodness_of_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..10 {
            let atoms = rng.random_range(2..=8usize);
            let weights: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let head: f64 = probs[..atoms - 1].iter().sum();
            probs[atoms - 1] = 1.0 - head;
            let s = Schedule::from_entries((0..atoms).map(|k| (SubsetId(k as u32), probs[k]))).unwrap();
            let n = 100_000;
            let mut counts = vec![0usize; atoms];
            let mut draw_rng = ChaCha8Rng::seed_from_u64(100 + trial);
            for _ in 0..n {
                counts[sample_subset(&s, &mut draw_rng).0 as usize] += 1;
            }
            let chi2: f64 = counts
                .iter()
                .zip(&probs)
                .map(|(&c, &p)| {
                    let e = p * n as f64;
                    (c as f64 - e).powi(2) / e
                })
                .sum();
            assert!(chi2 < CHI2_CRIT_1E3[atoms - 2], "trial {trial}: chi2 {chi2} with {atoms} atoms");
        }
    }

    #[test]
    fn noiseless_unstable_signal_stays_at_zero() {
        let net = SensorNetwork::new(
            DMatrix::from_element(1, 1, 2.0),
            CovMatrix::zeros(1),
            CovMatrix::zeros(1),
            vec![Sensor::new(DMatrix::from_element(1, 1, 1.0), CovMatrix::identity(1))],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let traj = simulate_signal(&net, 3, &mut rng).unwrap();
        assert_eq!(traj.states.len(), 4);
        assert!(traj.states.iter().all(|x| x[0] == 0.0));
        assert!(simulate_signal(&net, 0, &mut rng).is_err());
    }

    #[test]
    fn signal_increments_have_zero_mean_and_covariance_q() {
        let net = SensorNetwork::new(
            DMatrix::from_element(1, 1, 0.5),
            CovMatrix::identity(1),
            CovMatrix::identity(1),
            vec![Sensor::new(DMatrix::from_element(1, 1, 1.0), CovMatrix::identity(1))],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = 10_000;
        let traj = simulate_signal(&net, t, &mut rng).unwrap();
        let w: Vec<f64> = traj.states.windows(2).map(|p| p[1][0] - 0.5 * p[0][0]).collect();
        let mean = w.iter().sum::<f64>() / t as f64;
        assert!(mean.abs() < 4.0 / (t as f64).sqrt(), "{mean}");

        // 2-dim, T = 1e5: sample covariance of increments within 5 sqrt(2/T) ||Q||
        let q = CovMatrix::from_row_slice(2, &[1.0, 0.3, 0.3, 0.5]).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.9]);
        let net = SensorNetwork::new(
            a.clone(),
            q.clone(),
            CovMatrix::identity(2),
            vec![Sensor::new(DMatrix::identity(2, 2), CovMatrix::identity(2))],
        )
        .unwrap();
        let t = 100_000;
        let traj = simulate_signal(&net, t, &mut rng).unwrap();
        let mut cov = DMatrix::<f64>::zeros(2, 2);
        for p in traj.states.windows(2) {
            let w = &p[1] - &a * &p[0];
            cov += &w * w.transpose();
        }
        cov /= t as f64;
        let bound = 5.0 * (2.0 / t as f64).sqrt() * crate::matcone::spectral_norm(&q);
        assert!((cov - q.as_matrix()).abs().max() < bound);
    }

    #[test]
    fn signal_is_reproducible() {
        let net = sys2d();
        let a = simulate_signal(&net, 50, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let b = simulate_signal(&net, 50, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn observations_follow_the_schedule() {
        let net = sys2d();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let states = simulate_signal(&net, 5, &mut rng).unwrap();
        let obs = simulate_observations(&net, &states, &[SubsetId::EMPTY; 5], &mut rng).unwrap();
        assert!(obs.slots.iter().all(|o| o.y.is_none()));
        let obs = simulate_observations(&net, &states, &[SubsetId(3); 5], &mut rng).unwrap();
        assert!(obs.slots.iter().all(|o| o.y.as_ref().unwrap().len() == 2));
    }

    #[test]
    fn observation_noise_has_variance_r() {
        let net = sys1d();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = 10_000;
        let states = simulate_signal(&net, 20, &mut rng).unwrap();
        // reuse a short state path; only the residual matters
        let states = StateTrajectory {
            states: (0..t).map(|k| states.states[k % 21].clone()).collect(),
        };
        let obs = simulate_observations(&net, &states, &vec![SubsetId(1); t], &mut rng).unwrap();
        let resid: Vec<f64> = obs
            .slots
            .iter()
            .zip(&states.states)
            .map(|(o, x)| o.y.as_ref().unwrap()[0] - x[0])
            .collect();
        let mean = resid.iter().sum::<f64>() / t as f64;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
        // sd of the variance estimator is sqrt(2/(T-1)) ~ 0.014
        assert!((var - 1.0).abs() < 0.06, "{var}");
    }
}
