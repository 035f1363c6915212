//! Pruning patterns: the library, the categorical sampler and mask
//! realization over conv kernels and (tiled) matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Masks, ModelError, ModelIR, SlotKind};
use crate::numerics::{apply_mask, Tensor};

pub const MIN_PATTERNS: usize = 2;
pub const MAX_PATTERNS: usize = 10;
pub const LIBRARY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("pattern count {0} outside {MIN_PATTERNS}..={MAX_PATTERNS}")]
    CountOutOfRange(usize),
    #[error("catalog for kernel {0} yields only {1} distinct patterns")]
    CatalogExhausted(usize, usize),
    #[error("duplicate pattern at index {0}")]
    Duplicate(usize),
    #[error("invalid pattern: {0}")]
    Invalid(String),
    #[error("pattern {pattern:?} does not fit conv window {window:?}")]
    ShapeMismatch { pattern: [usize; 2], window: [usize; 2] },
    #[error("probability vector does not sum to 1 (sum {0})")]
    Unnormalized(f64),
    #[error("probability vector has {found} entries, library has {expected}")]
    DistributionLength { expected: usize, found: usize },
    #[error("model has no prunable operators")]
    NoPrunable,
    #[error("assignment mismatch: {0}")]
    Assignment(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Binary keep-mask over a `rows x cols` window, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pattern {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl Pattern {
    pub fn new(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self, PatternError> {
        if rows == 0 || cols == 0 || keep.len() != rows * cols {
            return Err(PatternError::Invalid(format!("{} entries for a {rows}x{cols} mask", keep.len())));
        }
        Ok(Self { rows, cols, keep })
    }

    fn from_fn(k: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let keep = (0..k * k).map(|i| f(i / k, i % k)).collect();
        Self { rows: k, cols: k, keep }
    }

    /// Build from nested 0/1 rows.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self, PatternError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(PatternError::Invalid("ragged rows".into()));
        }
        let mut keep = Vec::with_capacity(r * c);
        for &v in rows.iter().flatten() {
            match v {
                0 => keep.push(false),
                1 => keep.push(true),
                other => return Err(PatternError::Invalid(format!("entry {other} is not 0 or 1"))),
            }
        }
        Self::new(r, c, keep)
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.keep.chunks(self.cols).map(|r| r.iter().map(|&b| b as u8).collect()).collect()
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn keeps(&self, i: usize, j: usize) -> bool {
        self.keep[(i % self.rows) * self.cols + j % self.cols]
    }

    /// Row-major flags.
    pub fn entries(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&b| b).count()
    }

    pub fn keep_fraction(&self) -> f64 {
        self.kept() as f64 / self.keep.len() as f64
    }
}

#[derive(Serialize, Deserialize)]
struct LibraryFile {
    version: u32,
    kernel: [usize; 2],
    patterns: Vec<Vec<Vec<u8>>>,
}

/// Ordered pattern set. Index 0 keeps everything, index 1 drops everything.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternLibrary {
    kernel: [usize; 2],
    patterns: Vec<Pattern>,
}

/// Names of the built-in catalog entries after keep-all and drop-all.
pub const CATALOG: [&str; 8] = [
    "cross",
    "corners",
    "center-row",
    "center-column",
    "diagonal",
    "anti-diagonal",
    "ring",
    "center-only",
];

fn catalog_pattern(name: &str, k: usize) -> Pattern {
    let m = k / 2;
    let last = k - 1;
    match name {
        "cross" => Pattern::from_fn(k, |i, j| i == m || j == m),
        "corners" => Pattern::from_fn(k, |i, j| (i == 0 || i == last) && (j == 0 || j == last)),
        "center-row" => Pattern::from_fn(k, |i, _| i == m),
        "center-column" => Pattern::from_fn(k, |_, j| j == m),
        "diagonal" => Pattern::from_fn(k, |i, j| i == j),
        "anti-diagonal" => Pattern::from_fn(k, |i, j| i + j == last),
        "ring" => Pattern::from_fn(k, |i, j| i == 0 || j == 0 || i == last || j == last),
        "center-only" => Pattern::from_fn(k, |i, j| i == m && j == m),
        _ => unreachable!("unknown catalog entry"),
    }
}

impl PatternLibrary {
    /// Validates count bounds, shapes, the keep-all/drop-all prefix and
    /// uniqueness.
    pub fn new(kernel: [usize; 2], patterns: Vec<Pattern>) -> Result<Self, PatternError> {
        if !(MIN_PATTERNS..=MAX_PATTERNS).contains(&patterns.len()) {
            return Err(PatternError::CountOutOfRange(patterns.len()));
        }
        if let Some(p) = patterns.iter().find(|p| p.shape() != kernel) {
            return Err(PatternError::ShapeMismatch {
                pattern: p.shape(),
                window: kernel,
            });
        }
        if patterns[0].kept() != patterns[0].keep.len() {
            return Err(PatternError::Invalid("index 0 must keep every position".into()));
        }
        if patterns[1].kept() != 0 {
            return Err(PatternError::Invalid("index 1 must drop every position".into()));
        }
        let mut seen = BTreeSet::new();
        for (i, p) in patterns.iter().enumerate() {
            if !seen.insert(p.keep.clone()) {
                return Err(PatternError::Duplicate(i));
            }
        }
        Ok(Self { kernel, patterns })
    }

    /// Keep-all, drop-all, then the catalog in order, truncated to `n`.
    /// Catalog shapes that collapse onto an earlier mask (small `k`) are skipped.
    pub fn default_library(k: usize, n: usize) -> Result<Self, PatternError> {
        if !(MIN_PATTERNS..=MAX_PATTERNS).contains(&n) {
            return Err(PatternError::CountOutOfRange(n));
        }
        if k == 0 {
            return Err(PatternError::Invalid("kernel size 0".into()));
        }
        let mut patterns = vec![Pattern::from_fn(k, |_, _| true), Pattern::from_fn(k, |_, _| false)];
        for name in CATALOG {
            if patterns.len() == n {
                break;
            }
            let p = catalog_pattern(name, k);
            if !patterns.contains(&p) {
                patterns.push(p);
            }
        }
        if patterns.len() < n {
            return Err(PatternError::CatalogExhausted(k, patterns.len()));
        }
        Self::new([k, k], patterns)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn kernel(&self) -> [usize; 2] {
        self.kernel
    }

    pub fn get(&self, index: usize) -> Option<&Pattern> {
        self.patterns.get(index)
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn to_json(&self) -> Result<String, PatternError> {
        let file = LibraryFile {
            version: LIBRARY_VERSION,
            kernel: self.kernel,
            patterns: self.patterns.iter().map(Pattern::to_rows).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, PatternError> {
        let file: LibraryFile = serde_json::from_str(text)?;
        if file.version != LIBRARY_VERSION {
            return Err(PatternError::Invalid(format!("unsupported library version {}", file.version)));
        }
        let patterns = file
            .patterns
            .iter()
            .map(|rows| Pattern::from_rows(rows))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(file.kernel, patterns)
    }

    pub fn save(&self, path: &Path) -> Result<(), PatternError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PatternError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Pattern indices keyed by weight name. Each entry holds one index for the
/// whole weight, or one per filter in per-kernel mode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternAssignment(pub BTreeMap<String, Vec<usize>>);

impl PatternAssignment {
    /// Every prunable weight gets `index`.
    pub fn uniform(model: &ModelIR, index: usize) -> Self {
        Self(
            prunable_slots(model)
                .into_iter()
                .map(|(name, _, _)| (name, vec![index]))
                .collect(),
        )
    }

    /// Pattern index used for filter `filter` of `weight`.
    pub fn index_for(&self, weight: &str, filter: usize) -> Option<usize> {
        let v = self.0.get(weight)?;
        if v.len() == 1 {
            Some(v[0])
        } else {
            v.get(filter).copied()
        }
    }

    /// First 16 hex characters of the SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&self.0).expect("assignment serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }

    /// Checks coverage, index bounds, per-kernel lengths and group sharing.
    pub fn validate(&self, model: &ModelIR, library: &PatternLibrary) -> Result<(), PatternError> {
        let slots = prunable_slots(model);
        let expected: BTreeSet<&str> = slots.iter().map(|(n, _, _)| n.as_str()).collect();
        let found: BTreeSet<&str> = self.0.keys().map(String::as_str).collect();
        if expected != found {
            let missing: Vec<_> = expected.difference(&found).collect();
            let extra: Vec<_> = found.difference(&expected).collect();
            return Err(PatternError::Assignment(format!("missing {missing:?}, unexpected {extra:?}")));
        }
        for (name, shape, kind) in &slots {
            let idx = &self.0[name];
            let per_filter_ok = *kind == SlotKind::ConvKernel && idx.len() == shape[0];
            if idx.len() != 1 && !per_filter_ok {
                return Err(PatternError::Assignment(format!("`{name}` has {} indices", idx.len())));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= library.len()) {
                return Err(PatternError::Assignment(format!("`{name}` uses pattern {bad} of {}", library.len())));
            }
        }
        for (group, members) in model.residual_groups() {
            let first = &self.0[&members[0]];
            if members.iter().any(|m| &self.0[m] != first) {
                return Err(PatternError::Assignment(format!("residual group `{group}` is not shared")));
            }
        }
        Ok(())
    }
}

fn prunable_slots(model: &ModelIR) -> Vec<(String, Vec<usize>, SlotKind)> {
    model
        .prunable_operators()
        .flat_map(|op| op.weight_slots())
        .map(|s| (s.name, s.shape, s.kind))
        .collect()
}

/// One categorical draw: the weights it covers and, in per-kernel mode, the
/// filter it targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingUnit {
    pub weights: Vec<String>,
    pub filter: Option<usize>,
}

/// Units in operator order. A residual group is a single unit placed at its
/// first member; in per-kernel mode conv weights split into one unit per filter.
pub fn sampling_units(model: &ModelIR, per_kernel: bool) -> Result<Vec<SamplingUnit>, PatternError> {
    let groups = model.residual_groups();
    let mut units = Vec::new();
    let mut done_groups = BTreeSet::new();
    for op in model.prunable_operators() {
        let members: Vec<String> = match &op.residual_group {
            Some(g) => {
                if !done_groups.insert(g.clone()) {
                    continue;
                }
                groups.iter().find(|(name, _)| name == g).map(|(_, m)| m.clone()).unwrap_or_default()
            }
            None => vec![op.id.clone()],
        };
        let member_ops: Vec<_> = members.iter().filter_map(|m| model.operator(m)).collect();
        let slot_lists: Vec<_> = member_ops.iter().map(|o| o.weight_slots()).collect();
        let slot_count = slot_lists[0].len();
        for s in 0..slot_count {
            let names: Vec<String> = slot_lists.iter().map(|l| l[s].name.clone()).collect();
            let first = &slot_lists[0][s];
            if per_kernel && first.kind == SlotKind::ConvKernel {
                let filters = first.shape[0];
                if slot_lists.iter().any(|l| l[s].shape[0] != filters) {
                    return Err(PatternError::Assignment(format!(
                        "per-kernel sharing needs equal filter counts in group of `{}`",
                        op.id
                    )));
                }
                for f in 0..filters {
                    units.push(SamplingUnit {
                        weights: names.clone(),
                        filter: Some(f),
                    });
                }
            } else {
                units.push(SamplingUnit {
                    weights: names,
                    filter: None,
                });
            }
        }
    }
    if units.is_empty() {
        return Err(PatternError::NoPrunable);
    }
    Ok(units)
}

/// Assignment from one chosen index per unit (as produced by [`sampling_units`]).
pub fn assignment_from_choices(
    model: &ModelIR,
    units: &[SamplingUnit],
    choices: &[usize],
) -> Result<PatternAssignment, PatternError> {
    if units.len() != choices.len() {
        return Err(PatternError::Assignment(format!("{} choices for {} units", choices.len(), units.len())));
    }
    let filters: BTreeMap<String, usize> = prunable_slots(model).into_iter().map(|(n, s, _)| (n, s[0])).collect();
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (unit, &c) in units.iter().zip(choices) {
        for w in &unit.weights {
            match unit.filter {
                None => {
                    map.insert(w.clone(), vec![c]);
                }
                Some(f) => {
                    let entry = map.entry(w.clone()).or_insert_with(|| vec![0; filters[w]]);
                    entry[f] = c;
                }
            }
        }
    }
    Ok(PatternAssignment(map))
}

/// Tolerance for `F` summing to one.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Inverse-CDF categorical draw from one `rng.gen::<f64>()`.
pub fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cum += p;
        if u < cum {
            return i;
        }
    }
    last_positive
}

pub fn check_distribution(probs: &[f64], n: usize) -> Result<(), PatternError> {
    if probs.len() != n {
        return Err(PatternError::DistributionLength {
            expected: n,
            found: probs.len(),
        });
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(PatternError::Unnormalized(sum));
    }
    Ok(())
}

/// Result of one sampling pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub assignment: PatternAssignment,
    /// One index per sampling unit, in unit order.
    pub choices: Vec<usize>,
    /// Sum of `ln F[choice]` over units.
    pub log_prob: f64,
}

/// One draw per sampling unit from the shared distribution `probs`.
pub fn sample_assignment<R: Rng + ?Sized>(
    probs: &[f64],
    model: &ModelIR,
    library: &PatternLibrary,
    per_kernel: bool,
    rng: &mut R,
) -> Result<Sample, PatternError> {
    check_distribution(probs, library.len())?;
    let units = sampling_units(model, per_kernel)?;
    let choices: Vec<usize> = units.iter().map(|_| draw_categorical(probs, rng)).collect();
    let log_prob = choices.iter().map(|&c| probs[c].ln()).sum();
    let assignment = assignment_from_choices(model, &units, &choices)?;
    Ok(Sample {
        assignment,
        choices,
        log_prob,
    })
}

/// Binary mask for a weight of `shape`. Conv weights `[F,C,k,k]` repeat the
/// pattern in every filter and channel; matrices tile it modulo its shape.
pub fn realize_mask(pattern: &Pattern, shape: &[usize], kind: SlotKind) -> Result<Tensor, PatternError> {
    realize_with(shape, kind, |_| pattern)
}

fn realize_with<'p>(
    shape: &[usize],
    kind: SlotKind,
    pattern_for_filter: impl Fn(usize) -> &'p Pattern,
) -> Result<Tensor, PatternError> {
    match kind {
        SlotKind::ConvKernel => {
            let [f, c, kh, kw] = shape else {
                return Err(PatternError::Invalid(format!("conv weight shape {shape:?}")));
            };
            let window = kh * kw;
            let mut data = Vec::with_capacity(f * c * window);
            for fi in 0..*f {
                let p = pattern_for_filter(fi);
                if p.shape() != [*kh, *kw] {
                    return Err(PatternError::ShapeMismatch {
                        pattern: p.shape(),
                        window: [*kh, *kw],
                    });
                }
                for _ in 0..*c {
                    data.extend(p.keep.iter().map(|&b| b as u8 as f64));
                }
            }
            Ok(Tensor::new(shape.to_vec(), data).map_err(ModelError::from)?)
        }
        SlotKind::Matrix => {
            let [r, c] = shape else {
                return Err(PatternError::Invalid(format!("matrix weight shape {shape:?}")));
            };
            let p = pattern_for_filter(0);
            let cols = *c;
            Ok(Tensor::from_fn(&[*r, cols], |i| p.keeps(i / cols, i % cols) as u8 as f64))
        }
    }
}

/// Masks for every prunable weight under `assignment`.
pub fn realize_masks(
    model: &ModelIR,
    library: &PatternLibrary,
    assignment: &PatternAssignment,
) -> Result<Masks, PatternError> {
    assignment.validate(model, library)?;
    let mut masks = BTreeMap::new();
    for (name, shape, kind) in prunable_slots(model) {
        let idx = &assignment.0[&name];
        let mask = realize_with(&shape, kind, |f| &library.patterns[if idx.len() == 1 { idx[0] } else { idx[f] }])?;
        masks.insert(name, mask);
    }
    Ok(Masks(masks))
}

/// Copy of `model` with every masked weight position set to exactly zero.
pub fn apply_pruning(
    model: &ModelIR,
    library: &PatternLibrary,
    assignment: &PatternAssignment,
) -> Result<ModelIR, PatternError> {
    let masks = realize_masks(model, library, assignment)?;
    Ok(apply_masks(model, &masks))
}

pub fn apply_masks(model: &ModelIR, masks: &Masks) -> ModelIR {
    let mut pruned = model.clone();
    for (name, mask) in &masks.0 {
        if let Some(w) = pruned.weights.get_mut(name) {
            *w = apply_mask(w, mask);
        }
    }
    pruned
}
