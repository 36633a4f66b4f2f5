//! Deduplicated, canonicalized observation multisets.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::spec::{canonicalize_in_place, ModelSpec};

/// One context/output pair with its multiplicity. `context[n]` is the entity
/// index on layer n; the stored form is canonical (same-type blocks sorted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub context: Vec<usize>,
    pub output: usize,
    pub count: u64,
}

/// Observations are unique by (canonical context, output) and kept in sorted
/// order, so construction is independent of input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    spec: ModelSpec,
    observations: Vec<Observation>,
    total_weight: u64,
}

impl Dataset {
    /// Canonicalizes, validates ranges, merges duplicates, sorts.
    pub fn new(spec: ModelSpec, raw: Vec<Observation>) -> Result<Self> {
        let layer_types = spec.layer_type_indices();
        let blocks = spec.type_blocks();
        let mut merged: BTreeMap<(Vec<usize>, usize), u64> = BTreeMap::new();
        for (i, mut obs) in raw.into_iter().enumerate() {
            if obs.context.len() != spec.layer_count() {
                return Err(Error::DataMismatch(format!(
                    "observation {i}: context has {} layers, spec has {}",
                    obs.context.len(),
                    spec.layer_count()
                )));
            }
            for (n, (&e, &t)) in obs.context.iter().zip(&layer_types).enumerate() {
                if e >= spec.types[t].entity_count {
                    return Err(Error::DataMismatch(format!(
                        "observation {i}: entity {e} out of range for type {:?} (layer {n})",
                        spec.types[t].name
                    )));
                }
            }
            if obs.output >= spec.output_count {
                return Err(Error::DataMismatch(format!(
                    "observation {i}: output {} out of range ({} outputs)",
                    obs.output, spec.output_count
                )));
            }
            if obs.count == 0 {
                return Err(Error::DataMismatch(format!(
                    "observation {i}: count must be >= 1"
                )));
            }
            canonicalize_in_place(&blocks, &mut obs.context);
            *merged.entry((obs.context, obs.output)).or_insert(0) += obs.count;
        }
        let mut observations = Vec::with_capacity(merged.len());
        let mut total_weight: u64 = 0;
        for ((context, output), count) in merged {
            total_weight += count;
            observations.push(Observation { context, output, count });
        }
        Ok(Dataset { spec, observations, total_weight })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Sum of observation counts: the size of the underlying multiset.
    pub fn total_weight(&self) -> u64 {
        self.total_weight
    }

    /// Occurrence count of every entity, per type: how many times each entity
    /// appears across all layer slots of its type, weighted by observation
    /// counts. This is the membership-update denominator and depends only on
    /// the data.
    pub fn entity_occurrences(&self) -> Vec<Vec<f64>> {
        let layer_types = self.spec.layer_type_indices();
        let mut occ: Vec<Vec<f64>> = self
            .spec
            .types
            .iter()
            .map(|t| vec![0.0; t.entity_count])
            .collect();
        for obs in &self.observations {
            for (&e, &t) in obs.context.iter().zip(&layer_types) {
                occ[t][e] += obs.count as f64;
            }
        }
        occ
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::TypeDef;

    fn spec() -> ModelSpec {
        ModelSpec::new(
            vec![TypeDef::new("f", 6, 2), TypeDef::new("g", 4, 2)],
            vec!["f".into(), "f".into(), "g".into()],
            3,
        )
        .unwrap()
    }

    fn obs(context: &[usize], output: usize, count: u64) -> Observation {
        Observation { context: context.to_vec(), output, count }
    }

    #[test]
    fn permuted_duplicates_merge() {
        let d = Dataset::new(
            spec(),
            vec![obs(&[2, 1, 0], 1, 1), obs(&[1, 2, 0], 1, 2)],
        )
        .unwrap();
        assert_eq!(d.observations().len(), 1);
        assert_eq!(d.observations()[0], obs(&[1, 2, 0], 1, 3));
        assert_eq!(d.total_weight(), 3);
    }

    #[test]
    fn construction_is_order_independent() {
        let rows = vec![obs(&[3, 1, 2], 0, 1), obs(&[0, 0, 1], 2, 4), obs(&[1, 3, 2], 1, 1)];
        let mut reversed = rows.clone();
        reversed.reverse();
        let a = Dataset::new(spec(), rows).unwrap();
        let b = Dataset::new(spec(), reversed).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_entity_is_rejected() {
        let err = Dataset::new(spec(), vec![obs(&[6, 0, 0], 0, 1)]).unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }

    #[test]
    fn out_of_range_output_is_rejected() {
        assert!(Dataset::new(spec(), vec![obs(&[0, 0, 0], 3, 1)]).is_err());
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(Dataset::new(spec(), vec![obs(&[0, 0, 0], 0, 0)]).is_err());
    }

    #[test]
    fn wrong_arity_is_rejected() {
        assert!(Dataset::new(spec(), vec![obs(&[0, 0], 0, 1)]).is_err());
    }

    #[test]
    fn entity_occurrences_count_layer_slots() {
        let d = Dataset::new(
            spec(),
            vec![obs(&[1, 1, 0], 0, 2), obs(&[1, 3, 2], 1, 1)],
        )
        .unwrap();
        let occ = d.entity_occurrences();
        assert_eq!(occ[0][1], 5.0); // two slots in the first obs (count 2), one in the second
        assert_eq!(occ[0][3], 1.0);
        assert_eq!(occ[1][0], 2.0);
        assert_eq!(occ[1][2], 1.0);
    }
}
