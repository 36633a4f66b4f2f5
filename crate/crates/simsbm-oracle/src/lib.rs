//! Brute-force reference implementations used to cross-check the main crate.
//!
//! Everything here favors the most literal possible transcription of the
//! underlying math over speed: full cluster-permutation tables instead of a
//! canonical index, explicit occurrence counting, quadratic pair-counting
//! metrics. Nothing in this crate calls the main crate's inference, scoring,
//! or metric code; only its data types and parameter accessors are reused.

pub mod gen;

use std::collections::BTreeMap;

use simsbm_core::{Dataset, Model, ModelSpec};

const FLOOR: f64 = 1e-12;
const MAX_PERMS: usize = 200_000;

/// Positions of each type's layers, recomputed from the spec by name.
pub fn blocks_of(spec: &ModelSpec) -> Vec<Vec<usize>> {
    spec.types
        .iter()
        .map(|t| {
            spec.layers
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == t.name)
                .map(|(n, _)| n)
                .collect()
        })
        .collect()
}

/// Sorts cluster assignments within each same-type block.
pub fn naive_canonicalize(spec: &ModelSpec, k: &[usize]) -> Vec<usize> {
    let mut out = k.to_vec();
    for block in blocks_of(spec) {
        let mut vals: Vec<usize> = block.iter().map(|&n| out[n]).collect();
        vals.sort_unstable();
        for (&n, v) in block.iter().zip(vals) {
            out[n] = v;
        }
    }
    out
}

/// Every cluster assignment vector, odometer order, last layer fastest.
pub fn all_perms(dims: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = dims.iter().product();
    assert!(total <= MAX_PERMS, "permutation table too large for the oracle");
    let mut out = Vec::with_capacity(total);
    let mut k = vec![0usize; dims.len()];
    loop {
        out.push(k.clone());
        let mut n = dims.len();
        loop {
            if n == 0 {
                return out;
            }
            n -= 1;
            k[n] += 1;
            if k[n] < dims[n] {
                break;
            }
            k[n] = 0;
        }
    }
}

fn layer_dims(spec: &ModelSpec) -> Vec<usize> {
    let types = spec.layer_type_indices();
    types.iter().map(|&t| spec.types[t].cluster_count).collect()
}

/// Parameters in the oracle's own representation: per-type membership rows
/// and a full (untied) table with one output distribution per cluster
/// assignment vector.
#[derive(Debug, Clone)]
pub struct NaiveParams {
    /// `theta[t][entity][cluster]`
    pub theta: Vec<Vec<Vec<f64>>>,
    /// full assignment vector -> output distribution
    pub table: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl NaiveParams {
    /// Copies a fitted model's parameters, expanding tied cells into the
    /// full table with the oracle's own canonicalization.
    pub fn from_model(model: &Model) -> Self {
        let spec = model.spec();
        let theta = model
            .memberships()
            .iter()
            .map(|m| m.rows().map(<[f64]>::to_vec).collect())
            .collect();
        let cells: BTreeMap<Vec<usize>, Vec<f64>> = model
            .tensor()
            .cells()
            .map(|(k, p)| (k.to_vec(), p.to_vec()))
            .collect();
        let mut table = BTreeMap::new();
        for perm in all_perms(&layer_dims(spec)) {
            let canon = naive_canonicalize(spec, &perm);
            let probs = cells
                .get(&canon)
                .expect("every canonical key is a stored cell")
                .clone();
            table.insert(perm, probs);
        }
        NaiveParams { theta, table }
    }
}

/// P(output | context) by summing over the full assignment table.
pub fn naive_predict(spec: &ModelSpec, params: &NaiveParams, context: &[usize]) -> Vec<f64> {
    let types = spec.layer_type_indices();
    let mut out = vec![0.0; spec.output_count];
    for (perm, probs) in &params.table {
        let mut w = 1.0;
        for (n, &k) in perm.iter().enumerate() {
            w *= params.theta[types[n]][context[n]][k];
        }
        for (o, x) in out.iter_mut().enumerate() {
            *x += w * probs[o];
        }
    }
    out
}

/// Posterior over full cluster assignment vectors for one observation, in
/// odometer order (last layer fastest); uniform when the joint mass is zero.
pub fn naive_responsibilities(
    spec: &ModelSpec,
    params: &NaiveParams,
    context: &[usize],
    output: usize,
) -> Vec<f64> {
    let types = spec.layer_type_indices();
    let perms = all_perms(&layer_dims(spec));
    let mut omega = Vec::with_capacity(perms.len());
    let mut z = 0.0;
    for perm in &perms {
        let mut w = params.table[perm][output];
        for (n, &k) in perm.iter().enumerate() {
            w *= params.theta[types[n]][context[n]][k];
        }
        omega.push(w);
        z += w;
    }
    if z > 0.0 {
        for w in &mut omega {
            *w /= z;
        }
    } else {
        let u = 1.0 / omega.len() as f64;
        omega.fill(u);
    }
    omega
}

pub fn naive_log_likelihood(spec: &ModelSpec, params: &NaiveParams, data: &Dataset) -> f64 {
    let mut ll = 0.0;
    for obs in data.observations() {
        let p = naive_predict(spec, params, &obs.context)[obs.output];
        ll += obs.count as f64 * p.max(FLOOR).ln();
    }
    ll
}

/// One EM update, written from the update equations: responsibilities over
/// the full table, membership numerators through explicit appearance counts
/// `c(entity, cluster)`, tensor numerators pooled over sorted-block classes.
/// Returns the new parameters and the log-likelihood of the old ones.
pub fn naive_em_step(
    spec: &ModelSpec,
    params: &NaiveParams,
    data: &Dataset,
) -> (NaiveParams, f64) {
    let types = spec.layer_type_indices();
    let blocks = blocks_of(spec);
    let o_count = spec.output_count;
    let perms = all_perms(&layer_dims(spec));

    // per-type weighted appearance totals, the membership denominators
    let mut occ: Vec<Vec<f64>> = spec
        .types
        .iter()
        .map(|t| vec![0.0; t.entity_count])
        .collect();
    for obs in data.observations() {
        for (n, &e) in obs.context.iter().enumerate() {
            occ[types[n]][e] += obs.count as f64;
        }
    }

    let mut theta_num: Vec<Vec<Vec<f64>>> = spec
        .types
        .iter()
        .map(|t| vec![vec![0.0; t.cluster_count]; t.entity_count])
        .collect();
    let mut p_num: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut ll = 0.0;

    for obs in data.observations() {
        let count = obs.count as f64;
        let mut w: Vec<f64> = Vec::with_capacity(perms.len());
        for perm in &perms {
            let mut x = params.table[perm][obs.output];
            for (n, &k) in perm.iter().enumerate() {
                x *= params.theta[types[n]][obs.context[n]][k];
            }
            w.push(x);
        }
        let z: f64 = w.iter().sum();
        ll += count * z.max(FLOOR).ln();
        let omega: Vec<f64> = if z > 0.0 {
            w.iter().map(|x| x / z).collect()
        } else {
            vec![1.0 / perms.len() as f64; perms.len()]
        };

        for (perm, &om) in perms.iter().zip(&omega) {
            let canon = naive_canonicalize(spec, perm);
            let cell = p_num.entry(canon).or_insert_with(|| vec![0.0; o_count]);
            cell[obs.output] += count * om;

            for (t, block) in blocks.iter().enumerate() {
                let mut distinct: Vec<usize> = block.iter().map(|&n| obs.context[n]).collect();
                distinct.sort_unstable();
                distinct.dedup();
                for &m in &distinct {
                    for k in 0..spec.types[t].cluster_count {
                        // appearances of entity m with cluster k in this block
                        let c = block
                            .iter()
                            .filter(|&&n| obs.context[n] == m && perm[n] == k)
                            .count();
                        if c > 0 {
                            theta_num[t][m][k] += count * om * c as f64;
                        }
                    }
                }
            }
        }
    }

    let theta: Vec<Vec<Vec<f64>>> = theta_num
        .iter()
        .enumerate()
        .map(|(t, rows)| {
            rows.iter()
                .enumerate()
                .map(|(m, row)| {
                    if occ[t][m] > 0.0 {
                        row.iter().map(|x| x / occ[t][m]).collect()
                    } else {
                        vec![1.0 / row.len() as f64; row.len()]
                    }
                })
                .collect()
        })
        .collect();

    let mut class_probs: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for perm in &perms {
        let canon = naive_canonicalize(spec, perm);
        if class_probs.contains_key(&canon) {
            continue;
        }
        let probs = match p_num.get(&canon) {
            Some(num) => {
                let den: f64 = num.iter().sum();
                if den > 0.0 {
                    num.iter().map(|x| x / den).collect()
                } else {
                    vec![1.0 / o_count as f64; o_count]
                }
            }
            None => vec![1.0 / o_count as f64; o_count],
        };
        class_probs.insert(canon, probs);
    }
    let table: BTreeMap<Vec<usize>, Vec<f64>> = perms
        .iter()
        .map(|perm| {
            let canon = naive_canonicalize(spec, perm);
            (perm.clone(), class_probs[&canon].clone())
        })
        .collect();

    (NaiveParams { theta, table }, ll)
}

/// Metric values from the most direct definitions (quadratic scans,
/// pair counting). Field meanings match the main crate's report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveMetrics {
    pub p_at_1: f64,
    pub rap: f64,
    pub cov_err_norm: f64,
    pub f1_max: f64,
    pub roc_auc: f64,
    pub avg_precision: f64,
}

/// Returns `None` when no class has both a positive and a negative row, in
/// which case ranking quality under ROC is undefined.
pub fn naive_metrics(output_count: usize, rows: &[(usize, Vec<f64>)]) -> Option<NaiveMetrics> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;

    let mut hits = 0.0;
    let mut rap = 0.0;
    let mut cov = 0.0;
    for (truth, scores) in rows {
        let mut best = 0;
        for (o, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = o;
            }
        }
        if best == *truth {
            hits += 1.0;
        }
        let rank = 1 + scores.iter().filter(|&&s| s > scores[*truth]).count();
        rap += 1.0 / rank as f64;
        cov += rank as f64 / output_count as f64;
    }

    // One threshold shared by every class; at each the class F1 values are
    // averaged weighted by positives, and the best average wins.
    let mut thresholds: Vec<f64> = Vec::new();
    for (_, scores) in rows {
        for &s in scores {
            if !thresholds.contains(&s) {
                thresholds.push(s);
            }
        }
    }
    let mut f1_max: f64 = 0.0;
    for &tau in &thresholds {
        let mut weighted = 0.0;
        for class in 0..output_count {
            let n_pos = rows.iter().filter(|(truth, _)| *truth == class).count() as f64;
            if n_pos == 0.0 {
                continue;
            }
            let tp = rows
                .iter()
                .filter(|(truth, s)| *truth == class && s[class] >= tau)
                .count() as f64;
            let fp = rows
                .iter()
                .filter(|(truth, s)| *truth != class && s[class] >= tau)
                .count() as f64;
            let fn_ = n_pos - tp;
            let denom = 2.0 * tp + fp + fn_;
            if denom > 0.0 {
                weighted += n_pos * 2.0 * tp / denom;
            }
        }
        f1_max = f1_max.max(weighted / n);
    }

    let mut ap_sum = 0.0;
    let mut auc_sum = 0.0;
    let mut auc_weight = 0.0;
    for class in 0..output_count {
        let scored: Vec<(f64, bool)> = rows
            .iter()
            .map(|(truth, scores)| (scores[class], *truth == class))
            .collect();
        let n_pos = scored.iter().filter(|(_, pos)| *pos).count() as f64;
        if n_pos == 0.0 {
            continue;
        }
        let n_neg = scored.len() as f64 - n_pos;

        if n_neg > 0.0 {
            let mut pairs = 0.0;
            for &(sp, pos) in &scored {
                if !pos {
                    continue;
                }
                for &(sn, neg_pos) in &scored {
                    if neg_pos {
                        continue;
                    }
                    if sp > sn {
                        pairs += 1.0;
                    } else if sp == sn {
                        pairs += 0.5;
                    }
                }
            }
            auc_sum += n_pos * pairs / (n_pos * n_neg);
            auc_weight += n_pos;
        }

        let mut distinct: Vec<f64> = scored.iter().map(|&(s, _)| s).collect();
        distinct.sort_by(|a, b| b.total_cmp(a));
        distinct.dedup();
        let mut cum_tp = 0.0;
        let mut cum_cnt = 0.0;
        let mut ap = 0.0;
        for v in distinct {
            let group: Vec<&(f64, bool)> = scored.iter().filter(|&&(s, _)| s == v).collect();
            let gtp = group.iter().filter(|(_, pos)| *pos).count() as f64;
            cum_tp += gtp;
            cum_cnt += group.len() as f64;
            if gtp > 0.0 {
                ap += (gtp / n_pos) * (cum_tp / cum_cnt);
            }
        }
        ap_sum += n_pos * ap;
    }

    if auc_weight == 0.0 {
        return None;
    }
    Some(NaiveMetrics {
        p_at_1: hits / n,
        rap: rap / n,
        cov_err_norm: cov / n,
        f1_max,
        roc_auc: auc_sum / auc_weight,
        avg_precision: ap_sum / n,
    })
}

fn normalize_or_uniform(num: &[f64], den: f64) -> Vec<f64> {
    if den > 0.0 {
        num.iter().map(|x| x / den).collect()
    } else {
        vec![1.0 / num.len() as f64; num.len()]
    }
}

/// Single membership matrix, one layer: P(o|f) = sum_k theta[f][k] p[k][o].
/// Runs `iters` updates; the returned trace holds the log-likelihood before
/// each update plus that of the final parameters.
pub fn mmsbm_em(
    theta0: &[Vec<f64>],
    p0: &[Vec<f64>],
    obs: &[(usize, usize, u64)],
    iters: usize,
) -> Vec<f64> {
    let f_count = theta0.len();
    let k_count = theta0[0].len();
    let o_count = p0[0].len();
    let mut theta = theta0.to_vec();
    let mut p = p0.to_vec();
    let mut occ = vec![0.0; f_count];
    for &(e, _, c) in obs {
        occ[e] += c as f64;
    }
    let mut trace = Vec::with_capacity(iters + 1);
    for step in 0..=iters {
        let mut ll = 0.0;
        let mut tn = vec![vec![0.0; k_count]; f_count];
        let mut pn = vec![vec![0.0; o_count]; k_count];
        for &(e, o, c) in obs {
            let c = c as f64;
            let w: Vec<f64> = (0..k_count).map(|k| theta[e][k] * p[k][o]).collect();
            let z: f64 = w.iter().sum();
            ll += c * z.max(FLOOR).ln();
            for k in 0..k_count {
                let om = if z > 0.0 { w[k] / z } else { 1.0 / k_count as f64 };
                tn[e][k] += c * om;
                pn[k][o] += c * om;
            }
        }
        trace.push(ll);
        if step == iters {
            break;
        }
        theta = (0..f_count)
            .map(|e| normalize_or_uniform(&tn[e], occ[e]))
            .collect();
        p = pn
            .iter()
            .map(|row| normalize_or_uniform(row, row.iter().sum()))
            .collect();
    }
    trace
}

/// Two membership matrices, one layer each:
/// P(o|f,g) = sum_kl theta[f][k] phi[g][l] p[k][l][o].
pub fn bimmsbm_em(
    theta0: &[Vec<f64>],
    phi0: &[Vec<f64>],
    p0: &[Vec<Vec<f64>>],
    obs: &[(usize, usize, usize, u64)],
    iters: usize,
) -> Vec<f64> {
    let f_count = theta0.len();
    let g_count = phi0.len();
    let k_count = theta0[0].len();
    let l_count = phi0[0].len();
    let o_count = p0[0][0].len();
    let mut theta = theta0.to_vec();
    let mut phi = phi0.to_vec();
    let mut p = p0.to_vec();
    let mut occ_f = vec![0.0; f_count];
    let mut occ_g = vec![0.0; g_count];
    for &(e, g, _, c) in obs {
        occ_f[e] += c as f64;
        occ_g[g] += c as f64;
    }
    let mut trace = Vec::with_capacity(iters + 1);
    for step in 0..=iters {
        let mut ll = 0.0;
        let mut tn = vec![vec![0.0; k_count]; f_count];
        let mut gn = vec![vec![0.0; l_count]; g_count];
        let mut pn = vec![vec![vec![0.0; o_count]; l_count]; k_count];
        for &(e, g, o, c) in obs {
            let c = c as f64;
            let mut w = vec![vec![0.0; l_count]; k_count];
            let mut z = 0.0;
            for k in 0..k_count {
                for l in 0..l_count {
                    w[k][l] = theta[e][k] * phi[g][l] * p[k][l][o];
                    z += w[k][l];
                }
            }
            ll += c * z.max(FLOOR).ln();
            for k in 0..k_count {
                for l in 0..l_count {
                    let om = if z > 0.0 {
                        w[k][l] / z
                    } else {
                        1.0 / (k_count * l_count) as f64
                    };
                    tn[e][k] += c * om;
                    gn[g][l] += c * om;
                    pn[k][l][o] += c * om;
                }
            }
        }
        trace.push(ll);
        if step == iters {
            break;
        }
        theta = (0..f_count)
            .map(|e| normalize_or_uniform(&tn[e], occ_f[e]))
            .collect();
        phi = (0..g_count)
            .map(|g| normalize_or_uniform(&gn[g], occ_g[g]))
            .collect();
        for k in 0..k_count {
            for l in 0..l_count {
                p[k][l] = normalize_or_uniform(&pn[k][l], pn[k][l].iter().sum());
            }
        }
    }
    trace
}

/// One membership matrix appearing on both layers, tied table over
/// unordered cluster pairs: P(o|f1,f2) = sum_kl theta[f1][k] theta[f2][l]
/// p[{k,l}][o].
pub fn immsbm_em(
    theta0: &[Vec<f64>],
    p0: &BTreeMap<(usize, usize), Vec<f64>>,
    obs: &[(usize, usize, usize, u64)],
    iters: usize,
) -> Vec<f64> {
    let f_count = theta0.len();
    let k_count = theta0[0].len();
    let o_count = p0.values().next().unwrap().len();
    let mut theta = theta0.to_vec();
    let mut p = p0.clone();
    let mut occ = vec![0.0; f_count];
    for &(a, b, _, c) in obs {
        occ[a] += c as f64;
        occ[b] += c as f64;
    }
    let pair = |k: usize, l: usize| (k.min(l), k.max(l));
    let mut trace = Vec::with_capacity(iters + 1);
    for step in 0..=iters {
        let mut ll = 0.0;
        let mut tn = vec![vec![0.0; k_count]; f_count];
        let mut pn: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for &(a, b, o, c) in obs {
            let c = c as f64;
            let mut w = vec![vec![0.0; k_count]; k_count];
            let mut z = 0.0;
            for k in 0..k_count {
                for l in 0..k_count {
                    w[k][l] = theta[a][k] * theta[b][l] * p[&pair(k, l)][o];
                    z += w[k][l];
                }
            }
            ll += c * z.max(FLOOR).ln();
            for k in 0..k_count {
                for l in 0..k_count {
                    let om = if z > 0.0 {
                        w[k][l] / z
                    } else {
                        1.0 / (k_count * k_count) as f64
                    };
                    tn[a][k] += c * om;
                    tn[b][l] += c * om;
                    pn.entry(pair(k, l)).or_insert_with(|| vec![0.0; o_count])[o] += c * om;
                }
            }
        }
        trace.push(ll);
        if step == iters {
            break;
        }
        theta = (0..f_count)
            .map(|e| normalize_or_uniform(&tn[e], occ[e]))
            .collect();
        for k in 0..k_count {
            for l in k..k_count {
                let probs = match pn.get(&(k, l)) {
                    Some(num) => normalize_or_uniform(num, num.iter().sum()),
                    None => vec![1.0 / o_count as f64; o_count],
                };
                p.insert((k, l), probs);
            }
        }
    }
    trace
}
