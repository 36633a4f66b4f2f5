//! Expectation-maximization fitting with multi-restart.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::model::{
    visit_perms, CanonicalIndex, ClusterTensor, MembershipMatrix, Model, PROB_FLOOR,
};
use crate::spec::ModelSpec;

/// Observations per parallel work unit. Partial statistics are merged in
/// chunk order, so results are identical for any worker count.
const CHUNK: usize = 1024;

/// Posterior distribution over cluster permutations for one observation.
#[derive(Debug, Clone)]
pub struct Responsibility {
    pub observation: Observation,
    dims: Vec<usize>,
    omega: Vec<f64>,
}

impl Responsibility {
    /// Responsibilities over the full permutation set, odometer order (last
    /// layer fastest).
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn get(&self, k: &[usize]) -> f64 {
        debug_assert_eq!(k.len(), self.dims.len());
        let mut flat = 0;
        for (n, &kn) in k.iter().enumerate() {
            flat = flat * self.dims[n] + kn;
        }
        self.omega[flat]
    }

    pub fn sum(&self) -> f64 {
        self.omega.iter().sum()
    }
}

/// Accumulated M-step inputs. `theta_den` is the occurrence count of each
/// entity and depends only on the data; the rest are responsibility sums.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    pub spec: ModelSpec,
    pub index: Arc<CanonicalIndex>,
    /// Per type, entity-major F_t x K_t accumulator of responsibility mass.
    pub theta_num: Vec<Vec<f64>>,
    /// Per type, length F_t: total occurrences C_m of each entity.
    pub theta_den: Vec<Vec<f64>>,
    /// Per canonical cell, length-O accumulator.
    pub p_num: Vec<f64>,
    /// Per canonical cell scalar accumulator.
    pub p_den: Vec<f64>,
}

impl SufficientStats {
    pub fn zeroed(spec: &ModelSpec, index: Arc<CanonicalIndex>) -> Self {
        let theta_num = spec
            .types
            .iter()
            .map(|t| vec![0.0; t.entity_count * t.cluster_count])
            .collect();
        let theta_den = spec.types.iter().map(|t| vec![0.0; t.entity_count]).collect();
        let p_num = vec![0.0; index.cell_count() * spec.output_count];
        let p_den = vec![0.0; index.cell_count()];
        SufficientStats { spec: spec.clone(), index, theta_num, theta_den, p_num, p_den }
    }

    pub fn merge_from(&mut self, other: &SufficientStats) {
        for (a, b) in self.theta_num.iter_mut().zip(&other.theta_num) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.theta_den.iter_mut().zip(&other.theta_den) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.p_num.iter_mut().zip(&other.p_num) {
            *x += y;
        }
        for (x, y) in self.p_den.iter_mut().zip(&other.p_den) {
            *x += y;
        }
    }
}

/// Which restarts keep their fitted parameters in the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    BestLikelihood,
    All,
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Relative log-likelihood change below which an iteration counts toward
    /// convergence.
    pub rel_tol: f64,
    /// Consecutive small-change iterations required to declare convergence.
    pub patience: usize,
    pub max_iters: usize,
    pub restarts: usize,
    /// Restart r runs with seed `seed + r`.
    pub seed: u64,
    pub keep: Keep,
    /// Merge partial statistics in fixed chunk order (bit-reproducible for
    /// any worker count). Turning this off uses an unordered reduction.
    pub deterministic: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            rel_tol: 1e-4,
            patience: 30,
            max_iters: 1000,
            restarts: 100,
            seed: 0,
            keep: Keep::BestLikelihood,
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RestartReport {
    pub seed: u64,
    /// Number of M-steps applied.
    pub iterations: usize,
    /// Training log-likelihood per iteration, ending at the final model's.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub final_log_likelihood: f64,
    /// Present unless dropped by [`Keep::BestLikelihood`].
    pub model: Option<Model>,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub restarts: Vec<RestartReport>,
    /// Index of the restart with the highest final training likelihood
    /// (lowest index on ties).
    pub selected: usize,
}

impl FitReport {
    pub fn selected_report(&self) -> &RestartReport {
        &self.restarts[self.selected]
    }

    pub fn best_model(&self) -> &Model {
        self.restarts[self.selected]
            .model
            .as_ref()
            .expect("selected restart always keeps its model")
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, len: usize, out: &mut Vec<f64>) {
    use rand::Rng;
    let start = out.len();
    let mut sum = 0.0;
    for _ in 0..len {
        // OpenClosed01 is strictly positive, so no degenerate rows.
        let x: f64 = rng.sample(rand::distr::OpenClosed01);
        sum += x;
        out.push(x);
    }
    for x in &mut out[start..] {
        *x /= sum;
    }
}

/// Independent uniform-random simplex rows for every membership row and
/// every canonical tensor cell; deterministic in `seed`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<Model> {
    let index = CanonicalIndex::new(spec)?;
    Ok(init_with_index(spec, index, seed))
}

fn init_with_index(spec: &ModelSpec, index: Arc<CanonicalIndex>, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let memberships = spec
        .types
        .iter()
        .map(|t| {
            let mut theta = Vec::with_capacity(t.entity_count * t.cluster_count);
            for _ in 0..t.entity_count {
                random_simplex(&mut rng, t.cluster_count, &mut theta);
            }
            MembershipMatrix::new(t.name.clone(), t.entity_count, t.cluster_count, theta)
                .expect("random simplex rows are valid")
        })
        .collect();
    let mut cells = Vec::with_capacity(index.cell_count() * spec.output_count);
    for _ in 0..index.cell_count() {
        random_simplex(&mut rng, spec.output_count, &mut cells);
    }
    let tensor = ClusterTensor::from_cells(index, spec.output_count, cells)
        .expect("random simplex cells are valid");
    Model::new(spec.clone(), memberships, tensor).expect("init matches spec")
}

/// Weight of every permutation for (context, output): tensor probability of
/// the output times the product of membership entries. Returns the sum,
/// which equals P(output | context).
fn fill_weights(model: &Model, rows: &[&[f64]], output: usize, w: &mut [f64]) -> f64 {
    let index = model.tensor().index();
    let mut z = 0.0;
    visit_perms(index.dims(), |flat, k| {
        let mut prod = model.tensor().cell_distribution(index.cell_of_flat(flat))[output];
        for (n, &kn) in k.iter().enumerate() {
            prod *= rows[n][kn];
        }
        w[flat] = prod;
        z += prod;
    });
    z
}

fn normalize_weights(w: &mut [f64], z: f64) {
    if z > 0.0 {
        for x in w.iter_mut() {
            *x /= z;
        }
    } else {
        // Flooring every zero weight and renormalizing yields the uniform
        // vector.
        let u = 1.0 / w.len() as f64;
        w.fill(u);
    }
}

/// Posterior over cluster permutations for one observation; sums to 1.
pub fn e_step(model: &Model, obs: &Observation) -> Result<Responsibility> {
    model.validate_context(&obs.context)?;
    if obs.output >= model.spec().output_count {
        return Err(Error::DataMismatch(format!("output {} out of range", obs.output)));
    }
    let rows = model.context_rows(&obs.context);
    let mut omega = vec![0.0; model.tensor().index().perm_count()];
    let z = fill_weights(model, &rows, obs.output, &mut omega);
    normalize_weights(&mut omega, z);
    Ok(Responsibility {
        observation: obs.clone(),
        dims: model.tensor().index().dims().to_vec(),
        omega,
    })
}

/// Number of times `cluster` appears in `k` at the given positions. With
/// `positions` = the layer slots occupied by one entity, this is the
/// occurrence count that weights that entity's membership update.
pub fn count_in_block(k: &[usize], positions: &[usize], cluster: usize) -> usize {
    positions.iter().filter(|&&p| k[p] == cluster).count()
}

struct Partial {
    stats: SufficientStats,
    log_likelihood: f64,
}

fn accumulate_chunk(model: &Model, chunk: &[Observation], stats: &mut SufficientStats) -> f64 {
    let index = model.tensor().index().clone();
    let layer_types = model.layer_types().to_vec();
    let cluster_counts: Vec<usize> = index.dims().to_vec();
    let output_count = model.spec().output_count;
    let mut w = vec![0.0; index.perm_count()];
    let mut ll = 0.0;
    for obs in chunk {
        let rows = model.context_rows(&obs.context);
        let z = fill_weights(model, &rows, obs.output, &mut w);
        ll += obs.count as f64 * z.max(PROB_FLOOR).ln();
        normalize_weights(&mut w, z);
        let count = obs.count as f64;
        let full_to_cell = index.full_to_cell();
        visit_perms(index.dims(), |flat, k| {
            let wc = count * w[flat];
            for (n, &kn) in k.iter().enumerate() {
                let t = layer_types[n];
                stats.theta_num[t][obs.context[n] * cluster_counts[n] + kn] += wc;
            }
            let cell = full_to_cell[flat] as usize;
            stats.p_num[cell * output_count + obs.output] += wc;
            stats.p_den[cell] += wc;
        });
    }
    ll
}

/// One pass over the data: fold every observation's responsibilities into
/// sufficient statistics. Also returns the training log-likelihood of
/// `model`, which the weight normalizers yield for free.
pub fn accumulate_with_ll(
    model: &Model,
    data: &Dataset,
    deterministic: bool,
) -> Result<(SufficientStats, f64)> {
    if data.spec() != model.spec() {
        return Err(Error::DataMismatch("dataset spec does not match model spec".into()));
    }
    let spec = model.spec();
    let index = model.tensor().index().clone();
    let make_partial = |chunk: &[Observation]| {
        let mut stats = SufficientStats::zeroed(spec, index.clone());
        let log_likelihood = accumulate_chunk(model, chunk, &mut stats);
        Partial { stats, log_likelihood }
    };
    let mut total = if deterministic {
        let partials: Vec<Partial> = data
            .observations()
            .par_chunks(CHUNK)
            .map(make_partial)
            .collect();
        let mut total = Partial {
            stats: SufficientStats::zeroed(spec, index.clone()),
            log_likelihood: 0.0,
        };
        for p in &partials {
            total.stats.merge_from(&p.stats);
            total.log_likelihood += p.log_likelihood;
        }
        total
    } else {
        data.observations()
            .par_chunks(CHUNK)
            .map(make_partial)
            .reduce(
                || Partial {
                    stats: SufficientStats::zeroed(spec, index.clone()),
                    log_likelihood: 0.0,
                },
                |mut a, b| {
                    a.stats.merge_from(&b.stats);
                    a.log_likelihood += b.log_likelihood;
                    a
                },
            )
    };
    total.stats.theta_den = data.entity_occurrences();
    Ok((total.stats, total.log_likelihood))
}

pub fn accumulate(model: &Model, data: &Dataset) -> Result<SufficientStats> {
    accumulate_with_ll(model, data, true).map(|(stats, _)| stats)
}

/// Closed-form parameter update. Membership rows are `theta_num / C_m` with
/// no renormalization: the accumulation algebra makes each row sum to its
/// own denominator, and the constructor asserts that within 1e-9 rather than
/// papering over it. Entities never observed (C_m = 0) get uniform rows;
/// cells with no responsibility mass get uniform distributions.
pub fn m_step(stats: &SufficientStats) -> Model {
    let spec = &stats.spec;
    let memberships = spec
        .types
        .iter()
        .enumerate()
        .map(|(t, ty)| {
            let k = ty.cluster_count;
            let mut theta = vec![0.0; ty.entity_count * k];
            for m in 0..ty.entity_count {
                let c_m = stats.theta_den[t][m];
                let row = &mut theta[m * k..(m + 1) * k];
                if c_m > 0.0 {
                    for (n, x) in row.iter_mut().enumerate() {
                        *x = stats.theta_num[t][m * k + n] / c_m;
                    }
                } else {
                    row.fill(1.0 / k as f64);
                }
            }
            MembershipMatrix::new(ty.name.clone(), ty.entity_count, k, theta)
                .expect("membership update must self-normalize")
        })
        .collect();
    let o = spec.output_count;
    let mut cells = vec![0.0; stats.index.cell_count() * o];
    for cell in 0..stats.index.cell_count() {
        let den = stats.p_den[cell];
        let row = &mut cells[cell * o..(cell + 1) * o];
        if den > 0.0 {
            for (s, x) in row.iter_mut().enumerate() {
                *x = stats.p_num[cell * o + s] / den;
            }
        } else {
            row.fill(1.0 / o as f64);
        }
    }
    let tensor = ClusterTensor::from_cells(stats.index.clone(), o, cells)
        .expect("tensor update must self-normalize");
    Model::new(spec.clone(), memberships, tensor).expect("update matches spec")
}

fn run_restart(
    spec: &ModelSpec,
    data: &Dataset,
    index: Arc<CanonicalIndex>,
    cfg: &FitConfig,
    seed: u64,
) -> Result<RestartReport> {
    let mut model = init_with_index(spec, index, seed);
    let mut trace: Vec<f64> = Vec::new();
    let mut streak = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;
    loop {
        let (stats, ll) = accumulate_with_ll(&model, data, cfg.deterministic)?;
        if !ll.is_finite() {
            return Err(Error::Fit(format!(
                "non-finite log-likelihood at iteration {iterations} (seed {seed})"
            )));
        }
        if let Some(&prev) = trace.last() {
            let rel = if prev == 0.0 {
                (ll - prev).abs()
            } else {
                (ll - prev).abs() / prev.abs()
            };
            if rel < cfg.rel_tol {
                streak += 1;
            } else {
                streak = 0;
            }
        }
        trace.push(ll);
        if streak >= cfg.patience {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iters {
            break;
        }
        model = m_step(&stats);
        iterations += 1;
        log::debug!("seed {seed} iter {iterations} ll {ll}");
    }
    let final_log_likelihood = *trace.last().expect("at least one likelihood evaluation");
    Ok(RestartReport {
        seed,
        iterations,
        trace,
        converged,
        final_log_likelihood,
        model: Some(model),
    })
}

/// One EM run from the exact seed given; the fitted model is always kept.
pub fn fit_single(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &FitConfig,
    seed: u64,
) -> Result<RestartReport> {
    if data.spec() != spec {
        return Err(Error::DataMismatch("dataset spec does not match fit spec".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let index = CanonicalIndex::new(spec)?;
    run_restart(spec, data, index, cfg, seed)
}

/// Multi-restart EM. Restart r runs from seed `cfg.seed + r`; restarts run
/// in parallel and the report is deterministic for a given config.
pub fn fit(spec: &ModelSpec, data: &Dataset, cfg: &FitConfig) -> Result<FitReport> {
    if data.spec() != spec {
        return Err(Error::DataMismatch("dataset spec does not match fit spec".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if cfg.restarts == 0 {
        return Err(Error::Config("restarts must be >= 1".into()));
    }
    let index = CanonicalIndex::new(spec)?;
    let mut restarts: Vec<RestartReport> = (0..cfg.restarts as u64)
        .into_par_iter()
        .map(|r| run_restart(spec, data, index.clone(), cfg, cfg.seed.wrapping_add(r)))
        .collect::<Result<_>>()?;
    let mut selected = 0;
    for (i, r) in restarts.iter().enumerate() {
        if r.final_log_likelihood > restarts[selected].final_log_likelihood {
            selected = i;
        }
    }
    if cfg.keep == Keep::BestLikelihood {
        for (i, r) in restarts.iter_mut().enumerate() {
            if i != selected {
                r.model = None;
            }
        }
    }
    Ok(FitReport { restarts, selected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::TypeDef;

    fn spec_1(f: usize, k: usize, o: usize) -> ModelSpec {
        ModelSpec::new(vec![TypeDef::new("f", f, k)], vec!["f".into()], o).unwrap()
    }

    fn spec_2_1() -> ModelSpec {
        ModelSpec::new(
            vec![TypeDef::new("f", 5, 2), TypeDef::new("g", 3, 2)],
            vec!["f".into(), "f".into(), "g".into()],
            3,
        )
        .unwrap()
    }

    fn obs(context: &[usize], output: usize, count: u64) -> Observation {
        Observation { context: context.to_vec(), output, count }
    }

    fn small_dataset(spec: &ModelSpec) -> Dataset {
        Dataset::new(
            spec.clone(),
            vec![
                obs(&[0, 1, 0], 0, 2),
                obs(&[2, 2, 1], 1, 1),
                obs(&[1, 3, 2], 2, 3),
                obs(&[0, 4, 0], 1, 1),
            ],
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let spec = spec_2_1();
        let a = init_params(&spec, 42).unwrap();
        let b = init_params(&spec, 42).unwrap();
        assert_eq!(a, b);
        let c = init_params(&spec, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_with_single_cluster_is_exactly_one() {
        let spec = spec_1(3, 1, 2);
        let model = init_params(&spec, 7).unwrap();
        for row in model.membership(0).rows() {
            assert_eq!(row, &[1.0]);
        }
    }

    #[test]
    fn init_cells_are_simplex_rows() {
        let spec = spec_2_1();
        let model = init_params(&spec, 11).unwrap();
        for (_, dist) in model.tensor().cells() {
            let sum: f64 = dist.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(dist.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn e_step_single_permutation_is_one() {
        let spec = spec_1(3, 1, 2);
        let model = init_params(&spec, 1).unwrap();
        let r = e_step(&model, &obs(&[2], 1, 1)).unwrap();
        assert_eq!(r.omega(), &[1.0]);
    }

    #[test]
    fn e_step_sums_to_one() {
        let spec = spec_2_1();
        let model = init_params(&spec, 3).unwrap();
        for context in [[0, 1, 2], [4, 4, 0], [2, 3, 1]] {
            for output in 0..3 {
                let r = e_step(&model, &obs(&context, output, 1)).unwrap();
                assert!((r.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn e_step_zero_denominator_is_uniform() {
        let spec = spec_1(2, 2, 2);
        let index = CanonicalIndex::new(&spec).unwrap();
        let tensor =
            ClusterTensor::from_cells(index, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let memberships =
            vec![MembershipMatrix::new("f", 2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap()];
        let model = Model::new(spec, memberships, tensor).unwrap();
        let r = e_step(&model, &obs(&[0], 1, 1)).unwrap();
        assert_eq!(r.omega(), &[0.5, 0.5]);
    }

    #[test]
    fn count_in_block_counts_positions_of_entity() {
        // layers [f,f,g], context (m,m,g1): entity m occupies positions 0,1
        let k = [2, 2, 1];
        assert_eq!(count_in_block(&k, &[0, 1], 2), 2);
        assert_eq!(count_in_block(&k, &[0, 1], 1), 0);
        let total: usize = (0..3).map(|n| count_in_block(&k, &[0, 1], n)).sum();
        assert_eq!(total, 2);
    }

    #[test]
    fn accumulate_single_cluster_counts_occurrences() {
        let spec = ModelSpec::new(
            vec![TypeDef::new("f", 3, 1), TypeDef::new("g", 2, 1)],
            vec!["f".into(), "f".into(), "g".into()],
            2,
        )
        .unwrap();
        let data =
            Dataset::new(spec.clone(), vec![obs(&[1, 1, 0], 0, 3)]).unwrap();
        let model = init_params(&spec, 0).unwrap();
        let stats = accumulate(&model, &data).unwrap();
        assert_eq!(stats.theta_num[0][1], 6.0); // two slots x count 3
        assert_eq!(stats.theta_num[1][0], 3.0);
        assert_eq!(stats.theta_den[0][1], 6.0);
        assert_eq!(stats.p_num[0], 3.0); // single cell, output 0
        assert_eq!(stats.p_num[1], 0.0);
        assert_eq!(stats.p_den[0], 3.0);
    }

    #[test]
    fn accumulate_empty_dataset_is_zero() {
        let spec = spec_2_1();
        let data = Dataset::new(spec.clone(), vec![]).unwrap();
        let model = init_params(&spec, 0).unwrap();
        let stats = accumulate(&model, &data).unwrap();
        assert!(stats.theta_num.iter().flatten().all(|&x| x == 0.0));
        assert!(stats.p_num.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn m_step_divides_by_occurrences() {
        let spec = spec_1(2, 2, 2);
        let index = CanonicalIndex::new(&spec).unwrap();
        let mut stats = SufficientStats::zeroed(&spec, index);
        stats.theta_num[0][0] = 2.0;
        stats.theta_num[0][1] = 2.0;
        stats.theta_den[0][0] = 4.0;
        // entity 1 unseen -> uniform row
        stats.p_num = vec![1.0, 3.0, 0.0, 0.0];
        stats.p_den = vec![4.0, 0.0];
        let model = m_step(&stats);
        assert_eq!(model.membership(0).row(0), &[0.5, 0.5]);
        assert_eq!(model.membership(0).row(1), &[0.5, 0.5]);
        assert_eq!(model.tensor().cell_distribution(0), &[0.25, 0.75]);
        assert_eq!(model.tensor().cell_distribution(1), &[0.5, 0.5]);
    }

    #[test]
    fn one_observation_concentrates_output() {
        // Single observation (f1, o1) under a 2-cluster single-layer spec:
        // one EM step moves theta_f1 to the responsibilities and makes every
        // responsible cell certain about the output.
        let spec = spec_1(2, 2, 3);
        let data = Dataset::new(spec.clone(), vec![obs(&[1], 1, 1)]).unwrap();
        let model = init_params(&spec, 9).unwrap();
        let r = e_step(&model, &data.observations()[0]).unwrap();
        let stats = accumulate(&model, &data).unwrap();
        let next = m_step(&stats);
        assert!((next.membership(0).row(1)[0] - r.omega()[0]).abs() < 1e-12);
        assert!((next.membership(0).row(1)[1] - r.omega()[1]).abs() < 1e-12);
        for k in 0..2 {
            assert!((next.tensor().distribution(&[k])[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_trace_is_monotone() {
        let spec = spec_2_1();
        let data = small_dataset(&spec);
        let cfg = FitConfig { restarts: 2, max_iters: 60, ..FitConfig::default() };
        let report = fit(&spec, &data, &cfg).unwrap();
        for r in &report.restarts {
            for pair in r.trace.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-9, "trace decreased: {pair:?}");
            }
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let spec = spec_2_1();
        let data = small_dataset(&spec);
        let cfg = FitConfig {
            restarts: 3,
            max_iters: 40,
            keep: Keep::All,
            ..FitConfig::default()
        };
        let a = fit(&spec, &data, &cfg).unwrap();
        let b = fit(&spec, &data, &cfg).unwrap();
        assert_eq!(a.selected, b.selected);
        for (ra, rb) in a.restarts.iter().zip(&b.restarts) {
            assert_eq!(ra.trace, rb.trace);
            assert_eq!(ra.model, rb.model);
        }
    }

    #[test]
    fn fit_converged_model_is_a_fixed_point() {
        let spec = spec_1(3, 2, 2);
        let data = Dataset::new(
            spec.clone(),
            vec![obs(&[0], 0, 4), obs(&[1], 1, 3), obs(&[2], 0, 1), obs(&[2], 1, 1)],
        )
        .unwrap();
        let cfg = FitConfig {
            restarts: 1,
            max_iters: 400,
            rel_tol: 0.0,
            ..FitConfig::default()
        };
        let report = fit(&spec, &data, &cfg).unwrap();
        let model = report.best_model();
        let before = model.log_likelihood(&data).unwrap();
        let after = m_step(&accumulate(model, &data).unwrap())
            .log_likelihood(&data)
            .unwrap();
        assert!((after - before).abs() < 1e-9);
    }

    #[test]
    fn fit_selects_best_restart_and_keeps_only_it() {
        let spec = spec_2_1();
        let data = small_dataset(&spec);
        let cfg = FitConfig { restarts: 4, max_iters: 30, ..FitConfig::default() };
        let report = fit(&spec, &data, &cfg).unwrap();
        let best = report.selected;
        for (i, r) in report.restarts.iter().enumerate() {
            assert!(r.final_log_likelihood <= report.restarts[best].final_log_likelihood);
            assert_eq!(r.model.is_some(), i == best);
        }
    }

    #[test]
    fn fit_rejects_empty_dataset() {
        let spec = spec_2_1();
        let data = Dataset::new(spec.clone(), vec![]).unwrap();
        let err = fit(&spec, &data, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyData));
    }

    #[test]
    fn deterministic_and_fast_reduction_agree_closely() {
        let spec = spec_2_1();
        let data = small_dataset(&spec);
        let model = init_params(&spec, 5).unwrap();
        let (a, ll_a) = accumulate_with_ll(&model, &data, true).unwrap();
        let (b, ll_b) = accumulate_with_ll(&model, &data, false).unwrap();
        assert!((ll_a - ll_b).abs() < 1e-9);
        for (x, y) in a.p_num.iter().zip(&b.p_num) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn trace_likelihood_matches_model_log_likelihood() {
        let spec = spec_2_1();
        let data = small_dataset(&spec);
        let cfg = FitConfig { restarts: 1, max_iters: 20, ..FitConfig::default() };
        let report = fit(&spec, &data, &cfg).unwrap();
        let model = report.best_model();
        let ll = model.log_likelihood(&data).unwrap();
        assert!((ll - report.selected_report().final_log_likelihood).abs() < 1e-9);
    }
}
