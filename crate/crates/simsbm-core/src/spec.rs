//! Model structure declaration: entity types, layer assignments, output count.

use std::fmt;

use crate::error::{Error, Result};

/// One entity type: a shared membership matrix of `entity_count` rows over
/// `cluster_count` clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDef {
    pub name: String,
    pub entity_count: usize,
    pub cluster_count: usize,
}

impl TypeDef {
    pub fn new(name: impl Into<String>, entity_count: usize, cluster_count: usize) -> Self {
        TypeDef { name: name.into(), entity_count, cluster_count }
    }
}

/// Declares the shape of a model: the entity types, one type name per context
/// layer (repeats encode same-type interactions), and the output vocabulary
/// size. Layers of the same type share one membership matrix and are
/// interchangeable, so contexts and cluster tuples are canonicalized by
/// sorting within same-type layer blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub types: Vec<TypeDef>,
    pub layers: Vec<String>,
    pub output_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnknownLayerType { layer: usize, name: String },
    DuplicateTypeName { name: String },
    UnusedType { name: String },
    NoTypes,
    NoLayers,
    ZeroEntityCount { name: String },
    ZeroClusterCount { name: String },
    OutputCountTooSmall { got: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownLayerType { layer, name } => {
                write!(f, "layer {layer} references unknown type {name:?}")
            }
            Violation::DuplicateTypeName { name } => {
                write!(f, "type {name:?} declared more than once")
            }
            Violation::UnusedType { name } => {
                write!(f, "type {name:?} is not used by any layer")
            }
            Violation::NoTypes => write!(f, "at least one type is required"),
            Violation::NoLayers => write!(f, "at least one layer is required"),
            Violation::ZeroEntityCount { name } => {
                write!(f, "type {name:?} must have at least one entity")
            }
            Violation::ZeroClusterCount { name } => {
                write!(f, "type {name:?} must have at least one cluster")
            }
            Violation::OutputCountTooSmall { got } => {
                write!(f, "output_count must be >= 2, got {got}")
            }
        }
    }
}

/// Collects every violation instead of stopping at the first.
pub fn validate_spec(types: &[TypeDef], layers: &[String], output_count: usize) -> Vec<Violation> {
    let mut violations = Vec::new();
    if types.is_empty() {
        violations.push(Violation::NoTypes);
    }
    if layers.is_empty() {
        violations.push(Violation::NoLayers);
    }
    for (i, t) in types.iter().enumerate() {
        if types[..i].iter().any(|u| u.name == t.name) {
            violations.push(Violation::DuplicateTypeName { name: t.name.clone() });
        }
        if t.entity_count == 0 {
            violations.push(Violation::ZeroEntityCount { name: t.name.clone() });
        }
        if t.cluster_count == 0 {
            violations.push(Violation::ZeroClusterCount { name: t.name.clone() });
        }
        if !layers.iter().any(|l| *l == t.name) {
            violations.push(Violation::UnusedType { name: t.name.clone() });
        }
    }
    for (i, l) in layers.iter().enumerate() {
        if !types.iter().any(|t| t.name == *l) {
            violations.push(Violation::UnknownLayerType { layer: i, name: l.clone() });
        }
    }
    if output_count < 2 {
        violations.push(Violation::OutputCountTooSmall { got: output_count });
    }
    violations
}

impl ModelSpec {
    pub fn new(types: Vec<TypeDef>, layers: Vec<String>, output_count: usize) -> Result<Self> {
        let violations = validate_spec(&types, &layers, output_count);
        if violations.is_empty() {
            Ok(ModelSpec { types, layers, output_count })
        } else {
            Err(Error::InvalidSpec(violations))
        }
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Type index of each layer, in layer order.
    pub fn layer_type_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| self.type_index(l).expect("validated layer type"))
            .collect()
    }

    /// Cluster count of each layer's type, in layer order.
    pub fn layer_cluster_counts(&self) -> Vec<usize> {
        self.layer_type_indices()
            .iter()
            .map(|&t| self.types[t].cluster_count)
            .collect()
    }

    /// Layer positions of each type, in type order. Blocks need not be
    /// contiguous.
    pub fn type_blocks(&self) -> Vec<Vec<usize>> {
        let idx = self.layer_type_indices();
        let mut blocks = vec![Vec::new(); self.types.len()];
        for (pos, &t) in idx.iter().enumerate() {
            blocks[t].push(pos);
        }
        blocks
    }

    /// Number of layers assigned to each type, in type order.
    pub fn multiplicities(&self) -> Vec<usize> {
        self.type_blocks().iter().map(|b| b.len()).collect()
    }

    /// The interaction-order notation, e.g. `SIMSBM(2,1)` for two layers of
    /// the first type and one of the second.
    pub fn notation(&self) -> String {
        let counts: Vec<String> =
            self.multiplicities().iter().map(|c| c.to_string()).collect();
        format!("SIMSBM({})", counts.join(","))
    }
}

/// Sorts entity indices ascending within each same-type layer block, leaving
/// cross-type order untouched. Idempotent; the canonical form is what
/// datasets store.
pub fn canonicalize_context(spec: &ModelSpec, context: &[usize]) -> Vec<usize> {
    let mut out = context.to_vec();
    canonicalize_in_place(&spec.type_blocks(), &mut out);
    out
}

pub(crate) fn canonicalize_in_place(type_blocks: &[Vec<usize>], context: &mut [usize]) {
    for block in type_blocks {
        if block.len() < 2 {
            continue;
        }
        let mut values: Vec<usize> = block.iter().map(|&p| context[p]).collect();
        values.sort_unstable();
        for (&p, v) in block.iter().zip(values) {
            context[p] = v;
        }
    }
}

/// One entry of the `--spec` shorthand: type name, number of layers of that
/// type, and (optionally) its cluster count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShorthandType {
    pub name: String,
    pub multiplicity: usize,
    pub clusters: Option<usize>,
}

/// Parses the spec shorthand `"f:2@5,g:1@3"`: type `f` appears on two layers
/// with 5 clusters, type `g` on one layer with 3 clusters. The `@clusters`
/// part may be omitted where cluster counts are irrelevant (e.g. `expand`).
pub fn parse_spec_shorthand(input: &str) -> Result<Vec<ShorthandType>> {
    let err = |msg: String| Error::Config(format!("spec shorthand {input:?}: {msg}"));
    let mut out: Vec<ShorthandType> = Vec::new();
    for part in input.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(err("empty entry".into()));
        }
        let (name, rest) = part
            .split_once(':')
            .ok_or_else(|| err(format!("missing ':' in {part:?}")))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(err(format!("empty type name in {part:?}")));
        }
        let (mult_str, clusters) = match rest.split_once('@') {
            Some((m, k)) => {
                let k: usize = k
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad cluster count in {part:?}")))?;
                if k == 0 {
                    return Err(err(format!("cluster count must be >= 1 in {part:?}")));
                }
                (m, Some(k))
            }
            None => (rest, None),
        };
        let multiplicity: usize = mult_str
            .trim()
            .parse()
            .map_err(|_| err(format!("bad multiplicity in {part:?}")))?;
        if multiplicity == 0 {
            return Err(err(format!("multiplicity must be >= 1 in {part:?}")));
        }
        if out.iter().any(|s| s.name == name) {
            return Err(err(format!("type {name:?} listed twice")));
        }
        out.push(ShorthandType { name: name.to_string(), multiplicity, clusters });
    }
    Ok(out)
}
