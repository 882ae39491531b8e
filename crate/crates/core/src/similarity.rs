//! Linear CKA, orthogonal Procrustes similarity and their composition into
//! layer-by-layer grids.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::matrix::{frobenius_norm, nuclear_norm, procrustes_normalize, ActivationMatrix};
use crate::{Error, Result};

/// Floating-point excursions beyond a metric's range smaller than this are
/// clamped; anything larger is reported as an error.
pub const CLAMP_SLACK: f64 = 1e-6;

/// Cells whose CKA and Procrustes scores differ by more than this are flagged.
pub const DISAGREEMENT_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Metric {
    Cka,
    Procrustes,
    /// The smaller of the CKA and Procrustes scores.
    Conservative,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cka => "cka",
            Metric::Procrustes => "procrustes",
            Metric::Conservative => "conservative",
        }
    }
}

impl core::fmt::Display for Metric {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cka" => Ok(Metric::Cka),
            "procrustes" => Ok(Metric::Procrustes),
            "conservative" => Ok(Metric::Conservative),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimilarityScore {
    pub value: f64,
    pub metric: Metric,
    pub n_examples: usize,
}

/// Procrustes distance between normalized matrices, in `[0, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ProcrustesDistance(pub f64);

fn clamp_checked(value: f64, hi: f64, metric: &'static str) -> Result<f64> {
    if !value.is_finite() || value < -CLAMP_SLACK || value > hi + CLAMP_SLACK {
        return Err(Error::OutOfRange { metric, value });
    }
    Ok(value.clamp(0.0, hi))
}

fn check_rows(x: &ActivationMatrix, y: &ActivationMatrix) -> Result<usize> {
    if x.n() != y.n() {
        return Err(Error::Shape(format!(
            "`{}` has {} examples but `{}` has {}",
            x.layer_name(),
            x.n(),
            y.layer_name(),
            y.n()
        )));
    }
    if x.n() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: x.n() });
    }
    Ok(x.n())
}

/// A layer centered and scaled to unit Frobenius norm, with the norm of its
/// Gram matrix cached. Both metrics are invariant to isotropic scaling, so a
/// single prepared form serves CKA and Procrustes alike.
#[derive(Debug, Clone)]
pub struct PreparedLayer {
    normalized: ActivationMatrix,
    gram_norm: f64,
}

impl PreparedLayer {
    pub fn new(m: &ActivationMatrix) -> Result<Self> {
        let normalized = if m.is_normalized() { m.clone() } else { procrustes_normalize(m)? };
        let x = normalized.matrix();
        // ‖XᵀX‖_F = ‖XXᵀ‖_F; take the smaller Gram matrix.
        let gram = if x.cols() <= x.rows() { x.t_matmul(x)? } else { x.matmul_t(x)? };
        let gram_norm = frobenius_norm(&gram)?;
        Ok(Self { normalized, gram_norm })
    }

    pub fn layer_name(&self) -> &str {
        self.normalized.layer_name()
    }

    pub fn n(&self) -> usize {
        self.normalized.n()
    }

    pub fn normalized(&self) -> &ActivationMatrix {
        &self.normalized
    }
}

/// Both metric values for one pair of prepared layers.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellDetail {
    pub cka: f64,
    pub procrustes: f64,
}

impl CellDetail {
    pub fn disagrees(&self) -> bool {
        libm::fabs(self.cka - self.procrustes) > DISAGREEMENT_THRESHOLD
    }
}

fn cka_from_cross(cross_sq: f64, x: &PreparedLayer, y: &PreparedLayer) -> Result<f64> {
    clamp_checked(cross_sq / (x.gram_norm * y.gram_norm), 1.0, "cka")
}

fn procrustes_from_nuclear(nuclear: f64, x: &PreparedLayer, y: &PreparedLayer) -> Result<f64> {
    let fx = frobenius_norm(x.normalized.matrix())?;
    let fy = frobenius_norm(y.normalized.matrix())?;
    clamp_checked(fx * fx + fy * fy - 2.0 * nuclear, 2.0, "procrustes distance")
}

/// Scores one pair of prepared layers. For the conservative metric the
/// returned detail carries both constituent scores.
pub fn score_prepared(
    x: &PreparedLayer,
    y: &PreparedLayer,
    metric: Metric,
) -> Result<(f64, Option<CellDetail>)> {
    check_rows(&x.normalized, &y.normalized)?;
    let cross = y.normalized.matrix().t_matmul(x.normalized.matrix())?;
    let cka = || -> Result<f64> {
        let f = frobenius_norm(&cross)?;
        cka_from_cross(f * f, x, y)
    };
    let ps = || -> Result<f64> {
        let pd = procrustes_from_nuclear(nuclear_norm(&cross)?, x, y)?;
        clamp_checked(1.0 - pd / 2.0, 1.0, "procrustes similarity")
    };
    match metric {
        Metric::Cka => Ok((cka()?, None)),
        Metric::Procrustes => Ok((ps()?, None)),
        Metric::Conservative => {
            let detail = CellDetail { cka: cka()?, procrustes: ps()? };
            Ok((detail.cka.min(detail.procrustes), Some(detail)))
        }
    }
}

fn score(x: &ActivationMatrix, y: &ActivationMatrix, metric: Metric) -> Result<SimilarityScore> {
    let n = check_rows(x, y)?;
    let (value, _) = score_prepared(&PreparedLayer::new(x)?, &PreparedLayer::new(y)?, metric)?;
    Ok(SimilarityScore { value, metric, n_examples: n })
}

/// `‖YᵀX‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F)` on column-centered activations.
pub fn linear_cka(x: &ActivationMatrix, y: &ActivationMatrix) -> Result<SimilarityScore> {
    score(x, y, Metric::Cka)
}

/// `‖Ẋ‖²_F + ‖Ẏ‖²_F − 2‖ẎᵀẊ‖_*` for inputs already passed through
/// [`procrustes_normalize`].
pub fn procrustes_distance(xdot: &ActivationMatrix, ydot: &ActivationMatrix) -> Result<ProcrustesDistance> {
    for m in [xdot, ydot] {
        if !m.is_normalized() {
            return Err(Error::Contract(format!(
                "procrustes_distance needs normalized input, `{}` is not",
                m.layer_name()
            )));
        }
    }
    check_rows(xdot, ydot)?;
    let nuclear = nuclear_norm(&ydot.matrix().t_matmul(xdot.matrix())?)?;
    let fx = frobenius_norm(xdot.matrix())?;
    let fy = frobenius_norm(ydot.matrix())?;
    Ok(ProcrustesDistance(clamp_checked(fx * fx + fy * fy - 2.0 * nuclear, 2.0, "procrustes distance")?))
}

/// `1 − P_d(Ẋ, Ẏ) / 2`, normalizing both inputs internally.
pub fn procrustes_similarity(x: &ActivationMatrix, y: &ActivationMatrix) -> Result<SimilarityScore> {
    score(x, y, Metric::Procrustes)
}

/// The smaller of [`linear_cka`] and [`procrustes_similarity`].
pub fn conservative_score(x: &ActivationMatrix, y: &ActivationMatrix) -> Result<SimilarityScore> {
    score(x, y, Metric::Conservative)
}

pub fn similarity(x: &ActivationMatrix, y: &ActivationMatrix, metric: Metric) -> Result<SimilarityScore> {
    score(x, y, metric)
}

/// Scores between every layer of model A (rows) and model B (columns).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimilarityGrid {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// Row-major `rows.len() × cols.len()`.
    pub scores: Vec<f64>,
    pub metric: Metric,
    pub n_examples: usize,
    pub seeds_averaged: usize,
    /// Both constituent scores per cell; present for conservative grids.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub details: Option<Vec<CellDetail>>,
}

impl SimilarityGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.cols.len() + j]
    }

    pub fn score(&self, i: usize, j: usize) -> SimilarityScore {
        SimilarityScore { value: self.get(i, j), metric: self.metric, n_examples: self.n_examples }
    }

    /// Looks a cell up by layer names.
    pub fn get_named(&self, row: &str, col: &str) -> Option<f64> {
        let i = self.rows.iter().position(|r| r == row)?;
        let j = self.cols.iter().position(|c| c == col)?;
        Some(self.get(i, j))
    }

    pub fn detail(&self, i: usize, j: usize) -> Option<CellDetail> {
        self.details.as_ref().map(|d| d[i * self.cols.len() + j])
    }

    /// Cells where the two metrics disagree beyond [`DISAGREEMENT_THRESHOLD`].
    pub fn flagged_cells(&self) -> Vec<(usize, usize)> {
        let Some(details) = &self.details else { return Vec::new() };
        let c = self.cols.len();
        details
            .iter()
            .enumerate()
            .filter(|(_, d)| d.disagrees())
            .map(|(k, _)| (k / c, k % c))
            .collect()
    }

    pub fn transpose(&self) -> SimilarityGrid {
        let (r, c) = self.shape();
        let mut scores = Vec::with_capacity(r * c);
        let mut details = self.details.as_ref().map(|_| Vec::with_capacity(r * c));
        for j in 0..c {
            for i in 0..r {
                scores.push(self.get(i, j));
                if let (Some(out), Some(d)) = (details.as_mut(), self.detail(i, j)) {
                    out.push(d);
                }
            }
        }
        SimilarityGrid {
            rows: self.cols.clone(),
            cols: self.rows.clone(),
            scores,
            metric: self.metric,
            n_examples: self.n_examples,
            seeds_averaged: self.seeds_averaged,
            details,
        }
    }
}

/// Prepares every layer once, checking that all share one example count.
pub fn prepare_layers(layers_a: &[ActivationMatrix], layers_b: &[ActivationMatrix]) -> Result<(Vec<PreparedLayer>, Vec<PreparedLayer>, usize)> {
    let n = layers_a
        .first()
        .or(layers_b.first())
        .map(ActivationMatrix::n)
        .ok_or_else(|| Error::InvalidInput("no layers to compare".into()))?;
    for m in layers_a.iter().chain(layers_b) {
        if m.n() != n {
            return Err(Error::Shape(format!(
                "layer `{}` has {} examples, expected {n}",
                m.layer_name(),
                m.n()
            )));
        }
    }
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let a = layers_a.iter().map(PreparedLayer::new).collect::<Result<Vec<_>>>()?;
    let b = layers_b.iter().map(PreparedLayer::new).collect::<Result<Vec<_>>>()?;
    Ok((a, b, n))
}

/// Assembles a grid from row-major cell results.
pub fn grid_from_cells(
    a: &[PreparedLayer],
    b: &[PreparedLayer],
    metric: Metric,
    n_examples: usize,
    cells: Vec<(f64, Option<CellDetail>)>,
) -> SimilarityGrid {
    let mut scores = Vec::with_capacity(cells.len());
    let mut details = (metric == Metric::Conservative).then(|| Vec::with_capacity(cells.len()));
    for (v, d) in cells {
        scores.push(v);
        if let (Some(out), Some(d)) = (details.as_mut(), d) {
            out.push(d);
        }
    }
    SimilarityGrid {
        rows: a.iter().map(|l| l.layer_name().into()).collect(),
        cols: b.iter().map(|l| l.layer_name().into()).collect(),
        scores,
        metric,
        n_examples,
        seeds_averaged: 1,
        details,
    }
}

pub fn pairwise_grid(
    layers_a: &[ActivationMatrix],
    layers_b: &[ActivationMatrix],
    metric: Metric,
) -> Result<SimilarityGrid> {
    let (a, b, n) = prepare_layers(layers_a, layers_b)?;
    let mut cells = Vec::with_capacity(a.len() * b.len());
    for x in &a {
        for y in &b {
            cells.push(score_prepared(x, y, metric)?);
        }
    }
    Ok(grid_from_cells(&a, &b, metric, n, cells))
}

/// Elementwise mean of grids over seeds.
pub fn average_grids(grids: &[SimilarityGrid]) -> Result<SimilarityGrid> {
    let first = grids.first().ok_or_else(|| Error::InvalidInput("no grids to average".into()))?;
    for g in &grids[1..] {
        if g.rows != first.rows || g.cols != first.cols || g.metric != first.metric {
            return Err(Error::InvalidInput(
                "grids to average must share layer lists and metric".into(),
            ));
        }
    }
    let k = grids.len() as f64;
    let cells = first.scores.len();
    let scores = (0..cells).map(|c| grids.iter().map(|g| g.scores[c]).sum::<f64>() / k).collect();
    let details = if grids.iter().all(|g| g.details.is_some()) {
        Some(
            (0..cells)
                .map(|c| {
                    let (mut cka, mut ps) = (0.0, 0.0);
                    for g in grids {
                        let d = g.details.as_ref().unwrap()[c];
                        cka += d.cka;
                        ps += d.procrustes;
                    }
                    CellDetail { cka: cka / k, procrustes: ps / k }
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(SimilarityGrid {
        rows: first.rows.clone(),
        cols: first.cols.clone(),
        scores,
        metric: first.metric,
        n_examples: first.n_examples,
        seeds_averaged: grids.len(),
        details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn col(name: &str, v: &[f64]) -> ActivationMatrix {
        ActivationMatrix::new(name, Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()).unwrap()
    }

    fn wave(name: &str, n: usize, p: usize, phase: f64) -> ActivationMatrix {
        let m = Matrix::from_fn(n, p, |i, j| ((i * (j + 2)) as f64 * 0.731 + phase * j as f64).sin());
        ActivationMatrix::new(name, m).unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        let x = wave("x", 12, 3, 0.1);
        assert!((linear_cka(&x, &x).unwrap().value - 1.0).abs() < 1e-12);
        assert!((procrustes_similarity(&x, &x).unwrap().value - 1.0).abs() < 1e-12);
        assert!((conservative_score(&x, &x).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_columns_have_zero_cka() {
        let x = col("x", &[1.0, -1.0, 1.0, -1.0]);
        let y = col("y", &[1.0, 1.0, -1.0, -1.0]);
        assert_eq!(linear_cka(&x, &y).unwrap().value, 0.0);
    }

    #[test]
    fn distance_extremes() {
        let x = procrustes_normalize(&col("x", &[1.0, -1.0, 1.0, -1.0])).unwrap();
        let y = procrustes_normalize(&col("y", &[1.0, 1.0, -1.0, -1.0])).unwrap();
        assert!(procrustes_distance(&x, &x).unwrap().0.abs() < 1e-15);
        assert!((procrustes_distance(&x, &y).unwrap().0 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn distance_requires_normalized_inputs() {
        let x = wave("x", 6, 2, 0.0);
        assert!(matches!(procrustes_distance(&x, &x), Err(Error::Contract(_))));
    }

    #[test]
    fn row_mismatch_is_a_shape_error() {
        let err = linear_cka(&wave("x", 5, 2, 0.0), &wave("y", 6, 2, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn degenerate_input_rejected() {
        let err = linear_cka(&col("flat", &[3.0; 4]), &col("y", &[1.0, 2.0, 3.0, 4.0])).unwrap_err();
        assert_eq!(err, Error::Degenerate("flat".into()));
    }

    #[test]
    fn clamp_tolerates_rounding_only() {
        assert_eq!(clamp_checked(1.0 + 1e-9, 1.0, "t").unwrap(), 1.0);
        assert_eq!(clamp_checked(-1e-12, 1.0, "t").unwrap(), 0.0);
        assert!(clamp_checked(1.01, 1.0, "t").is_err());
        assert!(clamp_checked(f64::NAN, 1.0, "t").is_err());
    }

    #[test]
    fn conservative_is_min_of_constituents() {
        let x = wave("x", 9, 4, 0.3);
        let y = wave("y", 9, 2, 1.7);
        let c = conservative_score(&x, &y).unwrap();
        assert_eq!(c.metric, Metric::Conservative);
        assert!(c.value <= linear_cka(&x, &y).unwrap().value);
        assert!(c.value <= procrustes_similarity(&x, &y).unwrap().value);
    }

    #[test]
    fn grid_shape_and_diagonal() {
        let layers: Vec<_> = (0..3).map(|k| wave(&format!("l{k}"), 10, k + 1, k as f64)).collect();
        let g = pairwise_grid(&layers[..2], &layers, Metric::Cka).unwrap();
        assert_eq!(g.shape(), (2, 3));
        assert_eq!(g.rows, ["l0", "l1"]);
        let full = pairwise_grid(&layers, &layers, Metric::Conservative).unwrap();
        for i in 0..3 {
            assert!((full.get(i, i) - 1.0).abs() < 1e-6);
        }
        assert!(full.details.is_some());
    }

    #[test]
    fn grid_names_offending_layer() {
        let err = pairwise_grid(&[wave("a", 8, 2, 0.0)], &[wave("short", 7, 2, 0.0)], Metric::Cka).unwrap_err();
        match err {
            Error::Shape(msg) => assert!(msg.contains("short")),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn averaging() {
        let base = SimilarityGrid {
            rows: alloc::vec!["a".into()],
            cols: alloc::vec!["b".into()],
            scores: alloc::vec![0.2],
            metric: Metric::Cka,
            n_examples: 4,
            seeds_averaged: 1,
            details: None,
        };
        assert_eq!(average_grids(&[base.clone()]).unwrap(), base);
        let mut other = base.clone();
        other.scores[0] = 0.4;
        let avg = average_grids(&[base.clone(), other]).unwrap();
        assert!((avg.scores[0] - 0.3).abs() < 1e-15);
        assert_eq!(avg.seeds_averaged, 2);
        assert!(average_grids(&[]).is_err());
        let mut wrong = base.clone();
        wrong.metric = Metric::Procrustes;
        assert!(average_grids(&[base, wrong]).is_err());
    }

    #[test]
    fn flags_disagreeing_cells() {
        let g = SimilarityGrid {
            rows: alloc::vec!["a".into()],
            cols: alloc::vec!["b".into(), "c".into()],
            scores: alloc::vec![0.1, 0.5],
            metric: Metric::Conservative,
            n_examples: 4,
            seeds_averaged: 1,
            details: Some(alloc::vec![
                CellDetail { cka: 0.1, procrustes: 0.6 },
                CellDetail { cka: 0.5, procrustes: 0.55 },
            ]),
        };
        assert_eq!(g.flagged_cells(), [(0, 0)]);
    }
}
