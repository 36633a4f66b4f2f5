//! File formats: tuple datasets (TSV), persisted models (JSON), fit reports.
//!
//! Dataset files are UTF-8, tab-separated, one observation per line, with a
//! `#types f f g out` header naming each layer's type plus the literal
//! output marker. Other `#` lines are comments. Multiplicity is encoded by
//! repeating a line. Vocabularies collect the distinct tokens of each type
//! sorted lexicographically, so the dataset a file produces does not depend
//! on row order.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Observation};
use crate::em::{FitConfig, FitReport, Keep};
use crate::error::{Error, Result};
use crate::model::{CanonicalIndex, ClusterTensor, MembershipMatrix, Model};
use crate::spec::{ModelSpec, TypeDef};

/// Bidirectional token <-> dense index map; indices are contiguous from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMap {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TokenMap {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::DataMismatch(format!("duplicate token {t:?}")));
            }
        }
        Ok(TokenMap { tokens, index })
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Per-type entity tokens plus output tokens, aligned with a spec's type
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    types: Vec<TokenMap>,
    outputs: TokenMap,
}

impl Vocabulary {
    pub fn new(types: Vec<TokenMap>, outputs: TokenMap) -> Self {
        Vocabulary { types, outputs }
    }

    /// Tokens `"0"`, `"1"`, ... matching raw indices; handy when data was
    /// built programmatically.
    pub fn identity(spec: &ModelSpec) -> Self {
        let types = spec
            .types
            .iter()
            .map(|t| {
                TokenMap::from_tokens((0..t.entity_count).map(|i| i.to_string()).collect())
                    .expect("indices are distinct")
            })
            .collect();
        let outputs =
            TokenMap::from_tokens((0..spec.output_count).map(|i| i.to_string()).collect())
                .expect("indices are distinct");
        Vocabulary { types, outputs }
    }

    pub fn type_map(&self, type_index: usize) -> &TokenMap {
        &self.types[type_index]
    }

    pub fn type_maps(&self) -> &[TokenMap] {
        &self.types
    }

    pub fn outputs(&self) -> &TokenMap {
        &self.outputs
    }

    fn matches_spec(&self, spec: &ModelSpec) -> Result<()> {
        if self.types.len() != spec.types.len() {
            return Err(Error::DataMismatch(format!(
                "vocabulary has {} types, spec has {}",
                self.types.len(),
                spec.types.len()
            )));
        }
        for (map, t) in self.types.iter().zip(&spec.types) {
            if map.len() != t.entity_count {
                return Err(Error::DataMismatch(format!(
                    "vocabulary for type {:?} has {} tokens, spec has {} entities",
                    t.name,
                    map.len(),
                    t.entity_count
                )));
            }
        }
        if self.outputs.len() != spec.output_count {
            return Err(Error::DataMismatch(format!(
                "vocabulary has {} outputs, spec has {}",
                self.outputs.len(),
                spec.output_count
            )));
        }
        Ok(())
    }
}

/// How `load_dataset` resolves the model structure.
pub enum SpecMode<'a> {
    /// Build the spec from the file: entity and output counts come from the
    /// vocabularies, cluster counts from this list (types not listed get 1).
    Infer { cluster_counts: &'a [(String, usize)] },
    /// Map tokens through an existing model's vocabulary; unknown tokens are
    /// errors.
    Explicit { spec: &'a ModelSpec, vocab: &'a Vocabulary },
}

struct RawFile {
    layers: Vec<String>,
    /// (entity tokens, output token, line number)
    rows: Vec<(Vec<String>, String, usize)>,
}

fn parse_tsv(path: &Path) -> Result<RawFile> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut layers: Option<Vec<String>> = None;
    let mut header_line = 0;
    let mut rows = Vec::new();
    for (i, raw_line) in content.lines().enumerate() {
        let lineno = i + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let Some(layer_names) = &layers else {
            let rest = line.strip_prefix("#types").ok_or_else(|| Error::Parse {
                path: path.into(),
                line: lineno,
                message: "first line must be a '#types <layer types...> out' header".into(),
            })?;
            let mut names: Vec<String> = rest.split_whitespace().map(String::from).collect();
            if names.last().map(String::as_str) != Some("out") {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    message: "header must end with the literal output marker 'out'".into(),
                });
            }
            names.pop();
            if names.is_empty() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    message: "header declares no layers".into(),
                });
            }
            layers = Some(names);
            header_line = lineno;
            continue;
        };
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != layer_names.len() + 1 {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno,
                message: format!(
                    "expected {} tab-separated fields, got {}",
                    layer_names.len() + 1,
                    fields.len()
                ),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno,
                message: "empty field".into(),
            });
        }
        let output = fields[layer_names.len()].to_string();
        let entities = fields[..layer_names.len()].iter().map(|s| s.to_string()).collect();
        rows.push((entities, output, lineno));
    }
    let layers = layers.ok_or_else(|| Error::Parse {
        path: path.into(),
        line: header_line.max(1),
        message: "missing '#types' header".into(),
    })?;
    Ok(RawFile { layers, rows })
}

/// Reads a tuple dataset. Rows are canonicalized and duplicates merged, so
/// the result is independent of row order.
pub fn load_dataset(path: &Path, mode: SpecMode) -> Result<(Dataset, Vocabulary)> {
    let raw = parse_tsv(path)?;
    match mode {
        SpecMode::Infer { cluster_counts } => {
            if raw.rows.is_empty() {
                return Err(Error::EmptyData);
            }
            let mut type_names: Vec<String> = Vec::new();
            for l in &raw.layers {
                if !type_names.contains(l) {
                    type_names.push(l.clone());
                }
            }
            for (name, _) in cluster_counts {
                if !type_names.contains(name) {
                    return Err(Error::Config(format!(
                        "cluster count given for type {name:?}, which is not in the file header"
                    )));
                }
            }
            let layer_of: Vec<usize> = raw
                .layers
                .iter()
                .map(|l| type_names.iter().position(|t| t == l).unwrap())
                .collect();
            let mut token_sets: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); type_names.len()];
            let mut output_set: BTreeSet<&str> = BTreeSet::new();
            for (entities, output, _) in &raw.rows {
                for (tok, &t) in entities.iter().zip(&layer_of) {
                    token_sets[t].insert(tok);
                }
                output_set.insert(output);
            }
            let type_maps: Vec<TokenMap> = token_sets
                .iter()
                .map(|s| {
                    TokenMap::from_tokens(s.iter().map(|t| t.to_string()).collect())
                        .expect("set elements are distinct")
                })
                .collect();
            let outputs =
                TokenMap::from_tokens(output_set.iter().map(|t| t.to_string()).collect())
                    .expect("set elements are distinct");
            let types: Vec<TypeDef> = type_names
                .iter()
                .enumerate()
                .map(|(t, name)| {
                    let k = cluster_counts
                        .iter()
                        .find(|(n, _)| n == name)
                        .map_or(1, |(_, k)| *k);
                    TypeDef::new(name.clone(), type_maps[t].len(), k)
                })
                .collect();
            let spec = ModelSpec::new(types, raw.layers.clone(), outputs.len())?;
            let observations = raw
                .rows
                .iter()
                .map(|(entities, output, _)| Observation {
                    context: entities
                        .iter()
                        .zip(&layer_of)
                        .map(|(tok, &t)| type_maps[t].get(tok).unwrap())
                        .collect(),
                    output: outputs.get(output).unwrap(),
                    count: 1,
                })
                .collect();
            let data = Dataset::new(spec, observations)?;
            Ok((data, Vocabulary::new(type_maps, outputs)))
        }
        SpecMode::Explicit { spec, vocab } => {
            vocab.matches_spec(spec)?;
            if raw.layers != spec.layers {
                return Err(Error::Parse {
                    path: path.into(),
                    line: 1,
                    message: format!(
                        "header layers {:?} do not match the model's layers {:?}",
                        raw.layers, spec.layers
                    ),
                });
            }
            let layer_types = spec.layer_type_indices();
            let mut observations = Vec::with_capacity(raw.rows.len());
            for (entities, output, lineno) in &raw.rows {
                let mut context = Vec::with_capacity(entities.len());
                for (tok, &t) in entities.iter().zip(&layer_types) {
                    let idx = vocab.type_map(t).get(tok).ok_or_else(|| Error::Parse {
                        path: path.into(),
                        line: *lineno,
                        message: format!(
                            "unknown token {tok:?} for type {:?}",
                            spec.types[t].name
                        ),
                    })?;
                    context.push(idx);
                }
                let output = vocab.outputs().get(output).ok_or_else(|| Error::Parse {
                    path: path.into(),
                    line: *lineno,
                    message: format!("unknown output token {output:?}"),
                })?;
                observations.push(Observation { context, output, count: 1 });
            }
            let data = Dataset::new(spec.clone(), observations)?;
            Ok((data, vocab.clone()))
        }
    }
}

/// Writes a header-only TSV: an empty dataset over the given layers.
pub fn save_dataset_header(layers: &[String], path: &Path) -> Result<()> {
    let text = format!("#types {} out\n", layers.join(" "));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a dataset back to TSV; an observation with count c becomes c
/// identical lines.
pub fn save_dataset(data: &Dataset, vocab: &Vocabulary, path: &Path) -> Result<()> {
    vocab.matches_spec(data.spec())?;
    let layer_types = data.spec().layer_type_indices();
    let mut out = String::new();
    out.push_str("#types ");
    out.push_str(&data.spec().layers.join(" "));
    out.push_str(" out\n");
    for obs in data.observations() {
        let mut line = String::new();
        for (&e, &t) in obs.context.iter().zip(&layer_types) {
            line.push_str(vocab.type_map(t).token(e));
            line.push('\t');
        }
        line.push_str(vocab.outputs().token(obs.output));
        line.push('\n');
        for _ in 0..obs.count {
            out.push_str(&line);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn index_combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        let remaining = k - current.len();
        for i in start..=(n - remaining) {
            current.push(i);
            rec(i + 1, n, k, current, out);
            current.pop();
        }
    }
    if k <= n {
        rec(0, n, k, &mut current, &mut out);
    }
    out
}

/// Rewrites a dataset for a lower interaction order: each observation is
/// replaced by every size-r combination of its same-type layer block (one
/// per index combination, so a block with repeated entities contributes each
/// distinct multiset with its multiplicity), all inheriting the source
/// count. The target spec must differ from the source only by reduced
/// multiplicities.
pub fn expand_lower_order(
    data: &Dataset,
    spec_from: &ModelSpec,
    spec_to: &ModelSpec,
) -> Result<Dataset> {
    if data.spec() != spec_from {
        return Err(Error::DataMismatch("dataset spec does not match source spec".into()));
    }
    if spec_to.types != spec_from.types || spec_to.output_count != spec_from.output_count {
        return Err(Error::Config(
            "target spec must keep the source types and output count".into(),
        ));
    }
    let from_blocks = spec_from.type_blocks();
    let to_blocks = spec_to.type_blocks();
    for (t, ty) in spec_from.types.iter().enumerate() {
        if to_blocks[t].len() > from_blocks[t].len() {
            return Err(Error::Config(format!(
                "multiplicity increase requested for type {:?} ({} -> {})",
                ty.name,
                from_blocks[t].len(),
                to_blocks[t].len()
            )));
        }
    }
    // Per type, all ways to pick target-multiplicity positions from the
    // source block.
    let choices: Vec<Vec<Vec<usize>>> = from_blocks
        .iter()
        .zip(&to_blocks)
        .map(|(from, to)| index_combinations(from.len(), to.len()))
        .collect();
    let mut rows = Vec::new();
    for obs in data.observations() {
        let mut contexts = vec![vec![0usize; spec_to.layer_count()]];
        for (t, type_choices) in choices.iter().enumerate() {
            let block_values: Vec<usize> =
                from_blocks[t].iter().map(|&p| obs.context[p]).collect();
            let mut next = Vec::with_capacity(contexts.len() * type_choices.len());
            for ctx in &contexts {
                for pick in type_choices {
                    let mut ctx = ctx.clone();
                    for (&slot, &i) in to_blocks[t].iter().zip(pick) {
                        ctx[slot] = block_values[i];
                    }
                    next.push(ctx);
                }
            }
            contexts = next;
        }
        for context in contexts {
            rows.push(Observation { context, output: obs.output, count: obs.count });
        }
    }
    Dataset::new(spec_to.clone(), rows)
}

/// The persisted artifact: fitted parameters plus the vocabulary that maps
/// tokens to them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub vocab: Vocabulary,
}

impl TrainedModel {
    pub fn new(model: Model, vocab: Vocabulary) -> Result<Self> {
        vocab.matches_spec(model.spec())?;
        Ok(TrainedModel { model, vocab })
    }

    /// Maps one token per layer through the vocabulary and predicts.
    pub fn predict_tokens(&self, tokens: &[&str]) -> Result<Vec<f64>> {
        let spec = self.model.spec();
        if tokens.len() != spec.layer_count() {
            return Err(Error::DataMismatch(format!(
                "got {} tokens, model has {} layers",
                tokens.len(),
                spec.layer_count()
            )));
        }
        let layer_types = spec.layer_type_indices();
        let mut context = Vec::with_capacity(tokens.len());
        for (tok, &t) in tokens.iter().zip(&layer_types) {
            let idx = self.vocab.type_map(t).get(tok).ok_or_else(|| {
                Error::DataMismatch(format!(
                    "unknown token {tok:?} for type {:?}",
                    spec.types[t].name
                ))
            })?;
            context.push(idx);
        }
        self.model.predict(&context)
    }
}

const MODEL_FORMAT: &str = "simsbm-model";
const MODEL_VERSION: u32 = 1;
/// Loads reject rows whose sum drifts past this before the stricter
/// construction check runs; it exists to name the failure clearly.
const LOAD_ROW_TOL: f64 = 1e-6;

#[derive(Serialize, Deserialize)]
struct TypeDto {
    name: String,
    entities: usize,
    clusters: usize,
}

#[derive(Serialize, Deserialize)]
struct SpecDto {
    types: Vec<TypeDto>,
    layers: Vec<String>,
    outputs: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabDto {
    types: Vec<Vec<String>>,
    outputs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct MembershipDto {
    #[serde(rename = "type")]
    type_name: String,
    rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CellDto {
    clusters: Vec<usize>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFileDto {
    format: String,
    version: u32,
    spec: SpecDto,
    vocabulary: VocabDto,
    memberships: Vec<MembershipDto>,
    tensor: Vec<CellDto>,
}

pub fn save_model(trained: &TrainedModel, path: &Path) -> Result<()> {
    let spec = trained.model.spec();
    let dto = ModelFileDto {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        spec: SpecDto {
            types: spec
                .types
                .iter()
                .map(|t| TypeDto {
                    name: t.name.clone(),
                    entities: t.entity_count,
                    clusters: t.cluster_count,
                })
                .collect(),
            layers: spec.layers.clone(),
            outputs: spec.output_count,
        },
        vocabulary: VocabDto {
            types: trained
                .vocab
                .type_maps()
                .iter()
                .map(|m| m.tokens().to_vec())
                .collect(),
            outputs: trained.vocab.outputs().tokens().to_vec(),
        },
        memberships: trained
            .model
            .memberships()
            .iter()
            .map(|m| MembershipDto {
                type_name: m.type_name().to_string(),
                rows: m.rows().map(<[f64]>::to_vec).collect(),
            })
            .collect(),
        tensor: trained
            .model
            .tensor()
            .cells()
            .map(|(key, probs)| CellDto { clusters: key.to_vec(), probs: probs.to_vec() })
            .collect(),
    };
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, &dto)
        .map_err(|e| Error::io(path, e.into()))?;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))
}

fn coarse_row_check(row: &[f64], what: &str) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > LOAD_ROW_TOL {
        return Err(Error::ModelFormat(format!(
            "corrupted normalization: {what} sums to {sum}"
        )));
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dto: ModelFileDto = serde_json::from_str(&content)
        .map_err(|e| Error::ModelFormat(format!("{}: {e}", path.display())))?;
    if dto.format != MODEL_FORMAT {
        return Err(Error::ModelFormat(format!(
            "{}: not a {MODEL_FORMAT} file (format tag {:?})",
            path.display(),
            dto.format
        )));
    }
    if dto.version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!(
            "{}: unsupported version {} (expected {MODEL_VERSION})",
            path.display(),
            dto.version
        )));
    }
    let types: Vec<TypeDef> = dto
        .spec
        .types
        .iter()
        .map(|t| TypeDef::new(t.name.clone(), t.entities, t.clusters))
        .collect();
    let spec = ModelSpec::new(types, dto.spec.layers, dto.spec.outputs)
        .map_err(|e| Error::ModelFormat(format!("invalid spec in model file: {e}")))?;

    let type_maps = dto
        .vocabulary
        .types
        .into_iter()
        .map(TokenMap::from_tokens)
        .collect::<Result<Vec<_>>>()?;
    let outputs = TokenMap::from_tokens(dto.vocabulary.outputs)?;
    let vocab = Vocabulary::new(type_maps, outputs);

    let mut memberships = Vec::with_capacity(spec.types.len());
    for ty in &spec.types {
        let matches: Vec<&MembershipDto> = dto
            .memberships
            .iter()
            .filter(|m| m.type_name == ty.name)
            .collect();
        let dto_m = match matches.as_slice() {
            [one] => *one,
            [] => {
                return Err(Error::ModelFormat(format!(
                    "missing membership matrix for type {:?}",
                    ty.name
                )))
            }
            _ => {
                return Err(Error::ModelFormat(format!(
                    "duplicate membership matrix for type {:?}",
                    ty.name
                )))
            }
        };
        for (m, row) in dto_m.rows.iter().enumerate() {
            coarse_row_check(row, &format!("membership row {m} of type {:?}", ty.name))?;
        }
        memberships.push(MembershipMatrix::from_rows(ty.name.clone(), dto_m.rows.clone())?);
    }

    let index = CanonicalIndex::new(&spec)?;
    let o = spec.output_count;
    let dims = index.dims().to_vec();
    let mut cells: Vec<Option<Vec<f64>>> = vec![None; index.cell_count()];
    for cell in &dto.tensor {
        if cell.clusters.len() != dims.len()
            || cell.clusters.iter().zip(&dims).any(|(&k, &d)| k >= d)
        {
            return Err(Error::ModelFormat(format!(
                "tensor cell {:?} is out of range for dims {:?}",
                cell.clusters, dims
            )));
        }
        coarse_row_check(&cell.probs, &format!("tensor cell {:?}", cell.clusters))?;
        let id = index.cell_of(&cell.clusters);
        if cells[id].is_some() {
            return Err(Error::ModelFormat(format!(
                "duplicate tensor cell {:?}",
                cell.clusters
            )));
        }
        cells[id] = Some(cell.probs.clone());
    }
    let mut flat = Vec::with_capacity(index.cell_count() * o);
    for (id, cell) in cells.into_iter().enumerate() {
        let probs = cell.ok_or_else(|| {
            Error::ModelFormat(format!("missing tensor cell {:?}", index.cell_key(id)))
        })?;
        if probs.len() != o {
            return Err(Error::ModelFormat(format!(
                "tensor cell {:?} has {} probabilities, expected {o}",
                index.cell_key(id),
                probs.len()
            )));
        }
        flat.extend(probs);
    }
    let tensor = ClusterTensor::from_cells(index, o, flat)?;
    let model = Model::new(spec, memberships, tensor)?;
    TrainedModel::new(model, vocab)
}

const FIT_REPORT_FORMAT: &str = "simsbm-fit-report";

/// Likelihood traces and convergence flags per restart; parameters live in
/// the model file, not here.
pub fn save_fit_report(
    path: &Path,
    spec: &ModelSpec,
    cfg: &FitConfig,
    report: &FitReport,
) -> Result<()> {
    let value = serde_json::json!({
        "format": FIT_REPORT_FORMAT,
        "version": 1,
        "notation": spec.notation(),
        "config": {
            "rel_tol": cfg.rel_tol,
            "patience": cfg.patience,
            "max_iters": cfg.max_iters,
            "restarts": cfg.restarts,
            "seed": cfg.seed,
            "keep": match cfg.keep { Keep::BestLikelihood => "best", Keep::All => "all" },
            "deterministic": cfg.deterministic,
        },
        "selected": report.selected,
        "restarts": report.restarts.iter().map(|r| serde_json::json!({
            "seed": r.seed,
            "iterations": r.iterations,
            "converged": r.converged,
            "final_log_likelihood": r.final_log_likelihood,
            "trace": r.trace,
        })).collect::<Vec<_>>(),
    });
    let mut text = serde_json::to_string_pretty(&value)
        .expect("report serialization cannot fail");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::init_params;
    use tempfile::TempDir;

    fn write_file(dir: &TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        fs::write(&path, content).unwrap();
        path
    }

    fn clusters(pairs: &[(&str, usize)]) -> Vec<(String, usize)> {
        pairs.iter().map(|(n, k)| (n.to_string(), *k)).collect()
    }

    #[test]
    fn identical_rows_merge() {
        let dir = TempDir::new().unwrap();
        let path = write_file(
            &dir,
            "d.tsv",
            "#types f g out\na\tx\tyes\na\tx\tyes\nb\ty\tno\n",
        );
        let (data, vocab) =
            load_dataset(&path, SpecMode::Infer { cluster_counts: &clusters(&[("f", 2)]) })
                .unwrap();
        assert_eq!(data.observations().len(), 2);
        assert_eq!(data.total_weight(), 3);
        assert_eq!(vocab.outputs().tokens(), &["no".to_string(), "yes".to_string()]);
        assert_eq!(data.spec().types[0].cluster_count, 2);
        assert_eq!(data.spec().types[1].cluster_count, 1);
    }

    #[test]
    fn permuted_same_type_rows_merge() {
        let dir = TempDir::new().unwrap();
        let path = write_file(&dir, "d.tsv", "#types f f out\na\tb\to\nb\ta\to\nb\tb\tq\n");
        let (data, _) =
            load_dataset(&path, SpecMode::Infer { cluster_counts: &[] }).unwrap();
        assert_eq!(data.observations().len(), 2);
        assert_eq!(data.observations()[0].count, 2);
    }

    #[test]
    fn mixed_file_matches_hand_count() {
        let dir = TempDir::new().unwrap();
        let path = write_file(
            &dir,
            "d.tsv",
            "#types f f g out\n# a comment\na\tb\tx\tu\nb\ta\tx\tu\n\nc\ta\ty\tv\na\tc\ty\tv\na\ta\tx\tu\nc\tc\tz\tu\n",
        );
        let (data, vocab) =
            load_dataset(&path, SpecMode::Infer { cluster_counts: &[] }).unwrap();
        assert_eq!(data.total_weight(), 6);
        assert_eq!(data.observations().len(), 4);
        assert_eq!(vocab.type_map(0).len(), 3);
        assert_eq!(vocab.type_map(1).len(), 3);
        assert_eq!(vocab.outputs().len(), 2);
    }

    #[test]
    fn row_order_does_not_matter() {
        let dir = TempDir::new().unwrap();
        let a = write_file(&dir, "a.tsv", "#types f g out\np\tx\tu\nq\ty\tv\n");
        let b = write_file(&dir, "b.tsv", "#types f g out\nq\ty\tv\np\tx\tu\n");
        let (da, va) = load_dataset(&a, SpecMode::Infer { cluster_counts: &[] }).unwrap();
        let (db, vb) = load_dataset(&b, SpecMode::Infer { cluster_counts: &[] }).unwrap();
        assert_eq!(da, db);
        assert_eq!(va, vb);
    }

    #[test]
    fn ragged_row_reports_line() {
        let dir = TempDir::new().unwrap();
        let path = write_file(&dir, "d.tsv", "#types f g out\na\tx\tu\na\tu\n");
        let err = load_dataset(&path, SpecMode::Infer { cluster_counts: &[] }).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn header_must_declare_out_marker() {
        let dir = TempDir::new().unwrap();
        let path = write_file(&dir, "d.tsv", "#types f g\na\tx\n");
        assert!(load_dataset(&path, SpecMode::Infer { cluster_counts: &[] }).is_err());
    }

    #[test]
    fn unknown_cluster_type_is_config_error() {
        let dir = TempDir::new().unwrap();
        let path = write_file(&dir, "d.tsv", "#types f out\na\tu\nb\tv\n");
        let err = load_dataset(
            &path,
            SpecMode::Infer { cluster_counts: &clusters(&[("z", 2)]) },
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn empty_data_rows_error_in_infer_mode() {
        let dir = TempDir::new().unwrap();
        let path = write_file(&dir, "d.tsv", "#types f out\n# nothing\n");
        assert!(matches!(
            load_dataset(&path, SpecMode::Infer { cluster_counts: &[] }),
            Err(Error::EmptyData)
        ));
    }

    #[test]
    fn explicit_mode_rejects_unknown_tokens_with_line() {
        let dir = TempDir::new().unwrap();
        let train = write_file(&dir, "t.tsv", "#types f out\na\tu\nb\tv\n");
        let (data, vocab) =
            load_dataset(&train, SpecMode::Infer { cluster_counts: &[] }).unwrap();
        let spec = data.spec().clone();
        let test = write_file(&dir, "e.tsv", "#types f out\na\tu\nz\tv\n");
        let err = load_dataset(&test, SpecMode::Explicit { spec: &spec, vocab: &vocab })
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:") && msg.contains("\"z\""), "{msg}");
    }

    #[test]
    fn explicit_mode_rejects_wrong_header() {
        let dir = TempDir::new().unwrap();
        let train = write_file(&dir, "t.tsv", "#types f out\na\tu\nb\tv\n");
        let (data, vocab) =
            load_dataset(&train, SpecMode::Infer { cluster_counts: &[] }).unwrap();
        let spec = data.spec().clone();
        let test = write_file(&dir, "e.tsv", "#types g out\na\tu\n");
        assert!(load_dataset(&test, SpecMode::Explicit { spec: &spec, vocab: &vocab }).is_err());
    }

    #[test]
    fn dataset_round_trips_through_tsv() {
        let dir = TempDir::new().unwrap();
        let path = write_file(
            &dir,
            "d.tsv",
            "#types f f g out\nb\ta\tx\tu\na\tb\tx\tu\nc\tc\ty\tv\na\tc\tz\tu\n",
        );
        let (data, vocab) =
            load_dataset(&path, SpecMode::Infer { cluster_counts: &clusters(&[("f", 2), ("g", 2)]) })
                .unwrap();
        let out = dir.path().join("round.tsv");
        save_dataset(&data, &vocab, &out).unwrap();
        let (data2, vocab2) = load_dataset(
            &out,
            SpecMode::Infer { cluster_counts: &clusters(&[("f", 2), ("g", 2)]) },
        )
        .unwrap();
        assert_eq!(data, data2);
        assert_eq!(vocab, vocab2);
    }

    fn spec_f3(k: usize) -> ModelSpec {
        ModelSpec::new(
            vec![TypeDef::new("f", 4, k)],
            vec!["f".into(), "f".into(), "f".into()],
            2,
        )
        .unwrap()
    }

    fn spec_f2(k: usize) -> ModelSpec {
        ModelSpec::new(vec![TypeDef::new("f", 4, k)], vec!["f".into(), "f".into()], 2).unwrap()
    }

    #[test]
    fn expansion_worked_example() {
        // {(1,2,3,o)} at order 3 becomes {(1,2,o),(1,3,o),(2,3,o)} at order 2
        let from = spec_f3(1);
        let to = spec_f2(1);
        let data = Dataset::new(
            from.clone(),
            vec![Observation { context: vec![1, 2, 3], output: 0, count: 1 }],
        )
        .unwrap();
        let out = expand_lower_order(&data, &from, &to).unwrap();
        let got: Vec<(Vec<usize>, u64)> = out
            .observations()
            .iter()
            .map(|o| (o.context.clone(), o.count))
            .collect();
        assert_eq!(
            got,
            vec![(vec![1, 2], 1), (vec![1, 3], 1), (vec![2, 3], 1)]
        );
    }

    #[test]
    fn expansion_merges_repeated_entities() {
        // (a,a,o) reduced from order 2 to order 1 gives (a,o) with count 2
        let from = spec_f2(1);
        let to =
            ModelSpec::new(vec![TypeDef::new("f", 4, 1)], vec!["f".into()], 2).unwrap();
        let data = Dataset::new(
            from.clone(),
            vec![Observation { context: vec![2, 2], output: 1, count: 1 }],
        )
        .unwrap();
        let out = expand_lower_order(&data, &from, &to).unwrap();
        assert_eq!(out.observations().len(), 1);
        assert_eq!(out.observations()[0].count, 2);
    }

    #[test]
    fn identity_expansion_is_a_no_op() {
        let spec = spec_f2(1);
        let data = Dataset::new(
            spec.clone(),
            vec![
                Observation { context: vec![0, 1], output: 0, count: 2 },
                Observation { context: vec![1, 3], output: 1, count: 1 },
            ],
        )
        .unwrap();
        let out = expand_lower_order(&data, &spec, &spec).unwrap();
        assert_eq!(out, data);
    }

    #[test]
    fn expansion_rejects_multiplicity_increase() {
        let from = spec_f2(1);
        let to = spec_f3(1);
        let data = Dataset::new(
            from.clone(),
            vec![Observation { context: vec![0, 1], output: 0, count: 1 }],
        )
        .unwrap();
        let err = expand_lower_order(&data, &from, &to).unwrap_err();
        assert!(err.to_string().contains("multiplicity increase"), "{err}");
    }

    #[test]
    fn expansion_conserves_provenance_weight() {
        let from = spec_f3(1);
        let to = spec_f2(1);
        let data = Dataset::new(
            from.clone(),
            vec![
                Observation { context: vec![0, 1, 2], output: 0, count: 5 },
                Observation { context: vec![1, 1, 3], output: 1, count: 2 },
            ],
        )
        .unwrap();
        let out = expand_lower_order(&data, &from, &to).unwrap();
        // every source unit yields C(3,2) = 3 pairs
        assert_eq!(out.total_weight(), 3 * 5 + 3 * 2);
    }

    #[test]
    fn model_round_trips_bit_for_bit() {
        let spec = ModelSpec::new(
            vec![TypeDef::new("f", 5, 3), TypeDef::new("g", 2, 2)],
            vec!["f".into(), "f".into(), "g".into()],
            4,
        )
        .unwrap();
        let model = init_params(&spec, 123).unwrap();
        let trained = TrainedModel::new(model, Vocabulary::identity(&spec)).unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.json");
        save_model(&trained, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(trained, loaded);
    }

    #[test]
    fn truncated_model_file_errors() {
        let spec = spec_f2(2);
        let model = init_params(&spec, 1).unwrap();
        let trained = TrainedModel::new(model, Vocabulary::identity(&spec)).unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.json");
        save_model(&trained, &path).unwrap();
        let content = fs::read_to_string(&path).unwrap();
        fs::write(&path, &content[..content.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn version_mismatch_errors() {
        let spec = spec_f2(2);
        let model = init_params(&spec, 1).unwrap();
        let trained = TrainedModel::new(model, Vocabulary::identity(&spec)).unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.json");
        save_model(&trained, &path).unwrap();
        let content = fs::read_to_string(&path).unwrap().replace(
            "\"version\": 1",
            "\"version\": 99",
        );
        fs::write(&path, content).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn corrupted_normalization_errors() {
        let spec = spec_f2(2);
        let model = init_params(&spec, 1).unwrap();
        let trained = TrainedModel::new(model, Vocabulary::identity(&spec)).unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.json");
        save_model(&trained, &path).unwrap();
        let mut dto: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        dto["memberships"][0]["rows"][0][0] = serde_json::json!(0.9999);
        dto["memberships"][0]["rows"][0][1] = serde_json::json!(0.9999);
        fs::write(&path, serde_json::to_string(&dto).unwrap()).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("normalization"), "{err}");
    }

    #[test]
    fn hand_written_minimal_model_loads() {
        let dir = TempDir::new().unwrap();
        let path = write_file(
            &dir,
            "m.json",
            r#"{
  "format": "simsbm-model",
  "version": 1,
  "spec": {"types": [{"name": "f", "entities": 2, "clusters": 1}], "layers": ["f"], "outputs": 2},
  "vocabulary": {"types": [["a", "b"]], "outputs": ["no", "yes"]},
  "memberships": [{"type": "f", "rows": [[1.0], [1.0]]}],
  "tensor": [{"clusters": [0], "probs": [0.25, 0.75]}]
}"#,
        );
        let trained = load_model(&path).unwrap();
        assert_eq!(trained.model.spec().notation(), "SIMSBM(1)");
        assert_eq!(trained.predict_tokens(&["b"]).unwrap(), vec![0.25, 0.75]);
        assert!(trained.predict_tokens(&["z"]).is_err());
    }

    #[test]
    fn non_canonical_tensor_keys_are_accepted() {
        let dir = TempDir::new().unwrap();
        let path = write_file(
            &dir,
            "m.json",
            r#"{
  "format": "simsbm-model",
  "version": 1,
  "spec": {"types": [{"name": "f", "entities": 2, "clusters": 2}], "layers": ["f", "f"], "outputs": 2},
  "vocabulary": {"types": [["a", "b"]], "outputs": ["no", "yes"]},
  "memberships": [{"type": "f", "rows": [[1.0, 0.0], [0.0, 1.0]]}],
  "tensor": [
    {"clusters": [0, 0], "probs": [0.5, 0.5]},
    {"clusters": [1, 0], "probs": [0.1, 0.9]},
    {"clusters": [1, 1], "probs": [0.8, 0.2]}
  ]
}"#,
        );
        let trained = load_model(&path).unwrap();
        assert_eq!(trained.model.tensor().distribution(&[0, 1]), &[0.1, 0.9]);
        assert_eq!(trained.model.tensor().distribution(&[1, 0]), &[0.1, 0.9]);
    }

    #[test]
    fn missing_tensor_cell_errors() {
        let dir = TempDir::new().unwrap();
        let path = write_file(
            &dir,
            "m.json",
            r#"{
  "format": "simsbm-model",
  "version": 1,
  "spec": {"types": [{"name": "f", "entities": 2, "clusters": 2}], "layers": ["f", "f"], "outputs": 2},
  "vocabulary": {"types": [["a", "b"]], "outputs": ["no", "yes"]},
  "memberships": [{"type": "f", "rows": [[1.0, 0.0], [0.0, 1.0]]}],
  "tensor": [
    {"clusters": [0, 0], "probs": [0.5, 0.5]},
    {"clusters": [1, 1], "probs": [0.8, 0.2]}
  ]
}"#,
        );
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("missing tensor cell"), "{err}");
    }
}
