//! Deterministic input generators for cross-checks and benchmarks.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use simsbm_core::{
    CanonicalIndex, ClusterTensor, Dataset, MembershipMatrix, Model, ModelSpec, Observation,
};

/// Uniformly random contexts and outputs; counts in 1..=3.
pub fn uniform_dataset(spec: &ModelSpec, rows: usize, seed: u64) -> Dataset {
    random_dataset(spec, rows, seed, 3)
}

/// Uniformly random contexts and outputs, one count unit per row, so the
/// dataset weight equals `rows`.
pub fn uniform_unit_dataset(spec: &ModelSpec, rows: usize, seed: u64) -> Dataset {
    random_dataset(spec, rows, seed, 1)
}

fn random_dataset(spec: &ModelSpec, rows: usize, seed: u64, max_count: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types = spec.layer_type_indices();
    let raw = (0..rows)
        .map(|_| Observation {
            context: types
                .iter()
                .map(|&t| rng.random_range(0..spec.types[t].entity_count))
                .collect(),
            output: rng.random_range(0..spec.output_count),
            count: rng.random_range(1..=max_count),
        })
        .collect();
    Dataset::new(spec.clone(), raw).expect("generated rows are in range")
}

/// Uniformly random contexts, outputs drawn from the model's predictive
/// distribution; one count unit per row before deduplication.
pub fn sample_from_model(model: &Model, rows: usize, seed: u64) -> Dataset {
    let spec = model.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types = spec.layer_type_indices();
    let raw = (0..rows)
        .map(|_| {
            let context: Vec<usize> = types
                .iter()
                .map(|&t| rng.random_range(0..spec.types[t].entity_count))
                .collect();
            let probs = model.predict(&context).expect("context is in range");
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut output = spec.output_count - 1;
            for (o, p) in probs.iter().enumerate() {
                cum += p;
                if u < cum {
                    output = o;
                    break;
                }
            }
            Observation { context, output, count: 1 }
        })
        .collect();
    Dataset::new(spec.clone(), raw).expect("generated rows are in range")
}

/// A well-separated model: entity m of type t concentrates on cluster
/// `m % K_t` with weight `theta_peak`, and the cell for clusters `k` peaks
/// on output `(sum (n+1) k_n) % O` with weight `p_peak`; leftover mass is
/// spread evenly.
pub fn peaked_model(spec: &ModelSpec, theta_peak: f64, p_peak: f64) -> Model {
    let memberships = spec
        .types
        .iter()
        .map(|t| {
            let k = t.cluster_count;
            let rows = (0..t.entity_count)
                .map(|m| {
                    if k == 1 {
                        vec![1.0]
                    } else {
                        let rest = (1.0 - theta_peak) / (k - 1) as f64;
                        let mut row = vec![rest; k];
                        row[m % k] = theta_peak;
                        row
                    }
                })
                .collect();
            MembershipMatrix::from_rows(t.name.clone(), rows).expect("rows sum to one")
        })
        .collect();
    let index = CanonicalIndex::new(spec).expect("spec fits in memory");
    let o = spec.output_count;
    let mut cells = Vec::with_capacity(index.cell_count() * o);
    for cell in 0..index.cell_count() {
        let key = index.cell_key(cell);
        let peak: usize = key.iter().enumerate().map(|(n, &k)| (n + 1) * k).sum::<usize>() % o;
        if o == 1 {
            cells.push(1.0);
        } else {
            let rest = (1.0 - p_peak) / (o - 1) as f64;
            let mut row = vec![rest; o];
            row[peak] = p_peak;
            cells.extend(row);
        }
    }
    let tensor = ClusterTensor::from_cells(index, o, cells).expect("rows sum to one");
    Model::new(spec.clone(), memberships, tensor).expect("parameters match spec")
}
