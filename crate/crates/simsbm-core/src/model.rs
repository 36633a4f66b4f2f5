//! Model parameters and the predictive distribution.

use std::collections::HashMap;
use std::sync::Arc;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::spec::ModelSpec;

/// Probabilities are clamped here before logarithms; EM on sparse data can
/// zero out cells.
pub const PROB_FLOOR: f64 = 1e-12;

/// Constructors accept probability rows whose sum is within this of 1.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Hard cap on the full cluster-permutation count. The E-step enumerates
/// every permutation per observation, so anything larger is out of reach
/// regardless of how the tensor is stored.
pub const MAX_TENSOR_CELLS: u64 = 10_000_000;

fn check_prob_row(row: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &x in row {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::ModelFormat(format!("{what}: entry {x} is not a probability")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::ModelFormat(format!("{what}: row sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Entity-to-cluster memberships for one type: rows are entities, columns
/// clusters, every row on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix {
    type_name: String,
    entity_count: usize,
    cluster_count: usize,
    theta: Vec<f64>,
}

impl MembershipMatrix {
    pub fn new(
        type_name: impl Into<String>,
        entity_count: usize,
        cluster_count: usize,
        theta: Vec<f64>,
    ) -> Result<Self> {
        let type_name = type_name.into();
        if theta.len() != entity_count * cluster_count {
            return Err(Error::ModelFormat(format!(
                "membership matrix for type {type_name:?}: got {} entries, expected {}x{}",
                theta.len(),
                entity_count,
                cluster_count
            )));
        }
        for m in 0..entity_count {
            check_prob_row(
                &theta[m * cluster_count..(m + 1) * cluster_count],
                &format!("membership row {m} of type {type_name:?}"),
            )?;
        }
        Ok(MembershipMatrix { type_name, entity_count, cluster_count, theta })
    }

    pub fn from_rows(type_name: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let entity_count = rows.len();
        let cluster_count = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(entity_count * cluster_count);
        for row in &rows {
            if row.len() != cluster_count {
                return Err(Error::ModelFormat("ragged membership rows".into()));
            }
            flat.extend_from_slice(row);
        }
        Self::new(type_name, entity_count, cluster_count, flat)
    }

    pub fn type_name(&self) -> &str {
        &self.type_name
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn row(&self, entity: usize) -> &[f64] {
        &self.theta[entity * self.cluster_count..(entity + 1) * self.cluster_count]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.theta.chunks_exact(self.cluster_count)
    }
}

/// Maps every full cluster permutation to its canonical cell: the
/// permutation with entries sorted ascending inside each same-type layer
/// block. Cells are numbered by first appearance in odometer order (last
/// layer fastest), so a canonical representative is the lexicographically
/// smallest member of its class.
#[derive(Debug)]
pub struct CanonicalIndex {
    dims: Vec<usize>,
    type_blocks: Vec<Vec<usize>>,
    full_to_cell: Vec<u32>,
    cell_keys: Vec<Vec<usize>>,
}

impl CanonicalIndex {
    pub fn new(spec: &ModelSpec) -> Result<Arc<Self>> {
        let dims = spec.layer_cluster_counts();
        let full: u128 = dims.iter().map(|&d| d as u128).product();
        if full > MAX_TENSOR_CELLS as u128 {
            return Err(Error::TensorTooLarge { cells: full, max: MAX_TENSOR_CELLS });
        }
        let full = full as usize;
        let type_blocks = spec.type_blocks();
        let mut full_to_cell = vec![0u32; full];
        let mut cell_keys: Vec<Vec<usize>> = Vec::new();
        let mut seen: HashMap<Vec<usize>, u32> = HashMap::new();
        visit_perms(&dims, |flat, k| {
            let mut canon = k.to_vec();
            crate::spec::canonicalize_in_place(&type_blocks, &mut canon);
            let next_id = cell_keys.len() as u32;
            let id = *seen.entry(canon.clone()).or_insert_with(|| {
                cell_keys.push(canon);
                next_id
            });
            full_to_cell[flat] = id;
        });
        Ok(Arc::new(CanonicalIndex { dims, type_blocks, full_to_cell, cell_keys }))
    }

    /// Cluster count per layer.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of full permutations.
    pub fn perm_count(&self) -> usize {
        self.full_to_cell.len()
    }

    /// Number of canonical cells (symmetry classes).
    pub fn cell_count(&self) -> usize {
        self.cell_keys.len()
    }

    pub fn flat_index(&self, k: &[usize]) -> usize {
        debug_assert_eq!(k.len(), self.dims.len());
        let mut flat = 0;
        for (n, &kn) in k.iter().enumerate() {
            debug_assert!(kn < self.dims[n]);
            flat = flat * self.dims[n] + kn;
        }
        flat
    }

    pub fn cell_of_flat(&self, flat: usize) -> usize {
        self.full_to_cell[flat] as usize
    }

    pub fn cell_of(&self, k: &[usize]) -> usize {
        self.cell_of_flat(self.flat_index(k))
    }

    /// Canonical representative permutation of a cell.
    pub fn cell_key(&self, cell: usize) -> &[usize] {
        &self.cell_keys[cell]
    }

    pub(crate) fn full_to_cell(&self) -> &[u32] {
        &self.full_to_cell
    }
}

/// Enumerates cluster permutations in odometer order (last layer fastest),
/// passing the running flat index alongside the permutation.
pub(crate) fn visit_perms(dims: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = dims.iter().product();
    let mut k = vec![0usize; dims.len()];
    for flat in 0..total {
        f(flat, &k);
        for pos in (0..dims.len()).rev() {
            k[pos] += 1;
            if k[pos] < dims[pos] {
                break;
            }
            k[pos] = 0;
        }
    }
}

/// Per cluster permutation, a distribution over outputs. Same-type symmetry
/// is structural: storage is keyed by canonical cell and every lookup
/// redirects through [`CanonicalIndex`], so symmetric permutations cannot
/// disagree.
#[derive(Debug, Clone)]
pub struct ClusterTensor {
    index: Arc<CanonicalIndex>,
    output_count: usize,
    probs: Vec<f64>,
}

impl ClusterTensor {
    /// `cells` holds one length-`output_count` distribution per canonical
    /// cell, flattened in cell order.
    pub fn from_cells(
        index: Arc<CanonicalIndex>,
        output_count: usize,
        cells: Vec<f64>,
    ) -> Result<Self> {
        if cells.len() != index.cell_count() * output_count {
            return Err(Error::ModelFormat(format!(
                "cluster tensor: got {} entries, expected {} cells x {} outputs",
                cells.len(),
                index.cell_count(),
                output_count
            )));
        }
        for (c, row) in cells.chunks_exact(output_count).enumerate() {
            check_prob_row(row, &format!("tensor cell {:?}", index.cell_key(c)))?;
        }
        Ok(ClusterTensor { index, output_count, probs: cells })
    }

    pub fn index(&self) -> &Arc<CanonicalIndex> {
        &self.index
    }

    pub fn output_count(&self) -> usize {
        self.output_count
    }

    /// Distribution for a full (not necessarily canonical) permutation.
    pub fn distribution(&self, k: &[usize]) -> &[f64] {
        self.cell_distribution(self.index.cell_of(k))
    }

    pub fn cell_distribution(&self, cell: usize) -> &[f64] {
        &self.probs[cell * self.output_count..(cell + 1) * self.output_count]
    }

    pub fn cells(&self) -> impl Iterator<Item = (&[usize], &[f64])> {
        self.index
            .cell_keys
            .iter()
            .map(Vec::as_slice)
            .zip(self.probs.chunks_exact(self.output_count))
    }
}

impl PartialEq for ClusterTensor {
    fn eq(&self, other: &Self) -> bool {
        self.output_count == other.output_count
            && self.index.dims == other.index.dims
            && self.index.type_blocks == other.index.type_blocks
            && self.probs == other.probs
    }
}

/// Immutable fitted parameters: one membership matrix per type plus the
/// cluster-interaction tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    memberships: Vec<MembershipMatrix>,
    tensor: ClusterTensor,
    layer_types: Vec<usize>,
}

impl Model {
    pub fn new(
        spec: ModelSpec,
        memberships: Vec<MembershipMatrix>,
        tensor: ClusterTensor,
    ) -> Result<Self> {
        if memberships.len() != spec.types.len() {
            return Err(Error::ModelFormat(format!(
                "expected {} membership matrices, got {}",
                spec.types.len(),
                memberships.len()
            )));
        }
        for (t, m) in spec.types.iter().zip(&memberships) {
            if m.type_name() != t.name
                || m.entity_count() != t.entity_count
                || m.cluster_count() != t.cluster_count
            {
                return Err(Error::ModelFormat(format!(
                    "membership matrix {:?} ({}x{}) does not match type {:?} ({}x{})",
                    m.type_name(),
                    m.entity_count(),
                    m.cluster_count(),
                    t.name,
                    t.entity_count,
                    t.cluster_count
                )));
            }
        }
        if tensor.index().dims() != spec.layer_cluster_counts().as_slice() {
            return Err(Error::ModelFormat("tensor dims do not match spec layers".into()));
        }
        if tensor.output_count() != spec.output_count {
            return Err(Error::ModelFormat("tensor output count does not match spec".into()));
        }
        let layer_types = spec.layer_type_indices();
        Ok(Model { spec, memberships, tensor, layer_types })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn memberships(&self) -> &[MembershipMatrix] {
        &self.memberships
    }

    pub fn membership(&self, type_index: usize) -> &MembershipMatrix {
        &self.memberships[type_index]
    }

    pub fn tensor(&self) -> &ClusterTensor {
        &self.tensor
    }

    pub(crate) fn layer_types(&self) -> &[usize] {
        &self.layer_types
    }

    /// Membership row per layer for a context.
    pub(crate) fn context_rows<'a>(&'a self, context: &[usize]) -> Vec<&'a [f64]> {
        context
            .iter()
            .zip(&self.layer_types)
            .map(|(&e, &t)| self.memberships[t].row(e))
            .collect()
    }

    pub fn validate_context(&self, context: &[usize]) -> Result<()> {
        if context.len() != self.spec.layer_count() {
            return Err(Error::DataMismatch(format!(
                "context has {} layers, model has {}",
                context.len(),
                self.spec.layer_count()
            )));
        }
        for (n, (&e, &t)) in context.iter().zip(&self.layer_types).enumerate() {
            if e >= self.spec.types[t].entity_count {
                return Err(Error::DataMismatch(format!(
                    "entity {e} out of range for type {:?} (layer {n})",
                    self.spec.types[t].name
                )));
            }
        }
        Ok(())
    }

    /// P(o | context): the tensor distribution averaged over cluster
    /// permutations, each weighted by the product of its membership entries.
    /// Sums over the full permutation set; entries sum to 1 up to rounding.
    pub fn predict(&self, context: &[usize]) -> Result<Vec<f64>> {
        self.validate_context(context)?;
        let rows = self.context_rows(context);
        let mut out = vec![0.0; self.spec.output_count];
        visit_perms(self.tensor.index().dims(), |flat, k| {
            let mut w = 1.0;
            for (n, &kn) in k.iter().enumerate() {
                w *= rows[n][kn];
            }
            let cell = self.tensor.index().cell_of_flat(flat);
            let dist = self.tensor.cell_distribution(cell);
            for (acc, &p) in out.iter_mut().zip(dist) {
                *acc += w * p;
            }
        });
        Ok(out)
    }

    /// Sum over observations of `count * ln P(output | context)`, with the
    /// probability floor applied. Always <= 0.
    pub fn log_likelihood(&self, data: &Dataset) -> Result<f64> {
        if data.spec() != &self.spec {
            return Err(Error::DataMismatch(
                "dataset spec does not match model spec".into(),
            ));
        }
        let mut ll = 0.0;
        for obs in data.observations() {
            let rows = self.context_rows(&obs.context);
            let mut p = 0.0;
            visit_perms(self.tensor.index().dims(), |flat, k| {
                let mut w = 1.0;
                for (n, &kn) in k.iter().enumerate() {
                    w *= rows[n][kn];
                }
                let cell = self.tensor.index().cell_of_flat(flat);
                p += w * self.tensor.cell_distribution(cell)[obs.output];
            });
            ll += obs.count as f64 * p.max(PROB_FLOOR).ln();
        }
        Ok(ll)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Observation;
    use crate::spec::TypeDef;

    fn spec_ff(k: usize, o: usize) -> ModelSpec {
        ModelSpec::new(
            vec![TypeDef::new("f", 4, k)],
            vec!["f".into(), "f".into()],
            o,
        )
        .unwrap()
    }

    fn uniform_model(spec: &ModelSpec) -> Model {
        let memberships = spec
            .types
            .iter()
            .map(|t| {
                MembershipMatrix::new(
                    t.name.clone(),
                    t.entity_count,
                    t.cluster_count,
                    vec![1.0 / t.cluster_count as f64; t.entity_count * t.cluster_count],
                )
                .unwrap()
            })
            .collect();
        let index = CanonicalIndex::new(spec).unwrap();
        let cells = vec![1.0 / spec.output_count as f64; index.cell_count() * spec.output_count];
        let tensor = ClusterTensor::from_cells(index, spec.output_count, cells).unwrap();
        Model::new(spec.clone(), memberships, tensor).unwrap()
    }

    #[test]
    fn canonical_index_merges_symmetric_cells() {
        let spec = spec_ff(2, 2);
        let index = CanonicalIndex::new(&spec).unwrap();
        assert_eq!(index.perm_count(), 4);
        assert_eq!(index.cell_count(), 3); // (0,0), (0,1)~(1,0), (1,1)
        assert_eq!(index.cell_of(&[1, 0]), index.cell_of(&[0, 1]));
        assert_ne!(index.cell_of(&[0, 0]), index.cell_of(&[1, 1]));
    }

    #[test]
    fn canonical_representative_is_sorted() {
        let spec = ModelSpec::new(
            vec![TypeDef::new("f", 2, 3), TypeDef::new("g", 2, 2)],
            vec!["f".into(), "f".into(), "g".into()],
            2,
        )
        .unwrap();
        let index = CanonicalIndex::new(&spec).unwrap();
        for cell in 0..index.cell_count() {
            let key = index.cell_key(cell);
            assert!(key[0] <= key[1], "f-block of {key:?} not sorted");
        }
        assert_eq!(index.perm_count(), 18);
        assert_eq!(index.cell_count(), 12); // 6 multisets of (k1,k2) x 2
    }

    #[test]
    fn tensor_cap_is_enforced() {
        let spec = ModelSpec::new(
            vec![TypeDef::new("f", 2, 200)],
            vec!["f".into(), "f".into(), "f".into(), "f".into()],
            2,
        )
        .unwrap();
        assert!(matches!(
            CanonicalIndex::new(&spec),
            Err(Error::TensorTooLarge { .. })
        ));
    }

    #[test]
    fn single_cluster_predict_returns_tensor_row() {
        let spec = spec_ff(1, 3);
        let index = CanonicalIndex::new(&spec).unwrap();
        let tensor =
            ClusterTensor::from_cells(index, 3, vec![0.2, 0.5, 0.3]).unwrap();
        let memberships = vec![MembershipMatrix::new("f", 4, 1, vec![1.0; 4]).unwrap()];
        let model = Model::new(spec, memberships, tensor).unwrap();
        let p = model.predict(&[0, 3]).unwrap();
        assert_eq!(p, vec![0.2, 0.5, 0.3]);
    }

    #[test]
    fn one_hot_memberships_select_one_cell() {
        let spec = spec_ff(2, 2);
        let index = CanonicalIndex::new(&spec).unwrap();
        // cells in odometer-first-appearance order: (0,0), (0,1), (1,1)
        let cells = vec![0.9, 0.1, 0.3, 0.7, 0.5, 0.5];
        let tensor = ClusterTensor::from_cells(index, 2, cells).unwrap();
        let theta = vec![
            1.0, 0.0, // entity 0 -> cluster 0
            0.0, 1.0, // entity 1 -> cluster 1
            1.0, 0.0, 1.0, 0.0,
        ];
        let memberships = vec![MembershipMatrix::new("f", 4, 2, theta).unwrap()];
        let model = Model::new(spec, memberships, tensor).unwrap();
        assert_eq!(model.predict(&[0, 0]).unwrap(), vec![0.9, 0.1]);
        assert_eq!(model.predict(&[0, 1]).unwrap(), vec![0.3, 0.7]);
        assert_eq!(model.predict(&[1, 0]).unwrap(), vec![0.3, 0.7]);
        assert_eq!(model.predict(&[1, 1]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn uniform_model_predicts_uniform() {
        let spec = spec_ff(3, 4);
        let model = uniform_model(&spec);
        let p = model.predict(&[1, 2]).unwrap();
        for &x in &p {
            assert!((x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_rejects_out_of_range() {
        let spec = spec_ff(2, 2);
        let model = uniform_model(&spec);
        assert!(model.predict(&[0, 4]).is_err());
        assert!(model.predict(&[0]).is_err());
    }

    #[test]
    fn log_likelihood_matches_hand_value() {
        let spec = spec_ff(1, 2);
        let index = CanonicalIndex::new(&spec).unwrap();
        let tensor = ClusterTensor::from_cells(index, 2, vec![0.5, 0.5]).unwrap();
        let memberships = vec![MembershipMatrix::new("f", 4, 1, vec![1.0; 4]).unwrap()];
        let model = Model::new(spec.clone(), memberships, tensor).unwrap();
        let data = Dataset::new(
            spec,
            vec![Observation { context: vec![0, 1], output: 0, count: 2 }],
        )
        .unwrap();
        let ll = model.log_likelihood(&data).unwrap();
        assert!((ll - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn certain_model_has_zero_log_likelihood() {
        let spec = spec_ff(1, 2);
        let index = CanonicalIndex::new(&spec).unwrap();
        let tensor = ClusterTensor::from_cells(index, 2, vec![1.0, 0.0]).unwrap();
        let memberships = vec![MembershipMatrix::new("f", 4, 1, vec![1.0; 4]).unwrap()];
        let model = Model::new(spec.clone(), memberships, tensor).unwrap();
        let data = Dataset::new(
            spec,
            vec![Observation { context: vec![2, 3], output: 0, count: 5 }],
        )
        .unwrap();
        assert_eq!(model.log_likelihood(&data).unwrap(), 0.0);
    }

    #[test]
    fn zero_probability_is_floored() {
        let spec = spec_ff(1, 2);
        let index = CanonicalIndex::new(&spec).unwrap();
        let tensor = ClusterTensor::from_cells(index, 2, vec![1.0, 0.0]).unwrap();
        let memberships = vec![MembershipMatrix::new("f", 4, 1, vec![1.0; 4]).unwrap()];
        let model = Model::new(spec.clone(), memberships, tensor).unwrap();
        let data = Dataset::new(
            spec,
            vec![Observation { context: vec![0, 0], output: 1, count: 1 }],
        )
        .unwrap();
        let ll = model.log_likelihood(&data).unwrap();
        assert!((ll - PROB_FLOOR.ln()).abs() < 1e-9);
        assert!(ll.is_finite());
    }

    #[test]
    fn membership_rejects_bad_rows() {
        assert!(MembershipMatrix::new("f", 1, 2, vec![0.6, 0.5]).is_err());
        assert!(MembershipMatrix::new("f", 1, 2, vec![1.2, -0.2]).is_err());
        assert!(MembershipMatrix::new("f", 1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn tensor_rejects_bad_rows() {
        let spec = spec_ff(1, 2);
        let index = CanonicalIndex::new(&spec).unwrap();
        assert!(ClusterTensor::from_cells(index.clone(), 2, vec![0.7, 0.7]).is_err());
        assert!(ClusterTensor::from_cells(index, 2, vec![1.0]).is_err());
    }
}
