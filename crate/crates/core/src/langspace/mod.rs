//! The learned flag table read back as a language space: distances, t-SNE
//! projection, UPGMA clustering and plot artifacts.

mod plot;
mod tsne;
mod upgma;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trainer::Checkpoint;

pub use plot::{
    emit_plot, family_order, parse_plot_tsv, render_plot_svg, render_plot_tsv, OTHER_COLOR, PALETTE,
};
pub use tsne::{
    conditional_probabilities, joint_probabilities, kl_divergence, squared_distances, tsne_project,
    tsne_rows, Projection2D, TsneConfig,
};
pub use upgma::{
    cut_and_score, purity, silhouette, upgma_cluster, ClusterScore, Dendrogram, Merge,
};

/// Rows of the flag table with the codes and families they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSpace {
    matrix: Vec<Vec<f64>>,
    codes: Vec<String>,
    families: Vec<String>,
}

impl LanguageSpace {
    pub fn new(codes: Vec<String>, families: Vec<String>, matrix: Vec<Vec<f64>>) -> Result<Self> {
        if matrix.len() != codes.len() || families.len() != codes.len() {
            return Err(Error::SpaceMismatch {
                rows: matrix.len(),
                languages: codes.len(),
            });
        }
        let dim = matrix.first().map_or(0, Vec::len);
        if dim == 0 && !matrix.is_empty() {
            return Err(Error::InvalidArgument("language vectors are empty".into()));
        }
        for (code, row) in codes.iter().zip(&matrix) {
            if row.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "vector of `{code}` has {} entries, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("language vector of `{code}`")));
            }
        }
        Ok(LanguageSpace {
            matrix,
            codes,
            families,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn families(&self) -> &[String] {
        &self.families
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i]
    }

    /// The space restricted to languages not named in `codes`.
    pub fn without(&self, codes: &[&str]) -> Result<Self> {
        for c in codes {
            if !self.codes.iter().any(|x| x == c) {
                return Err(Error::UnknownLanguage(c.to_string()));
            }
        }
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| !codes.contains(&self.codes[i].as_str()))
            .collect();
        LanguageSpace::new(
            keep.iter().map(|&i| self.codes[i].clone()).collect(),
            keep.iter().map(|&i| self.families[i].clone()).collect(),
            keep.iter().map(|&i| self.matrix[i].clone()).collect(),
        )
    }

    /// `lang<TAB>family<TAB>v_1..v_d`, shortest round-trip decimals.
    pub fn to_tsv(&self, provenance: &BTreeMap<String, String>) -> String {
        let mut out = String::new();
        for (k, v) in provenance {
            let _ = writeln!(out, "# {k}={v}");
        }
        for ((code, family), row) in self.codes.iter().zip(&self.families).zip(&self.matrix) {
            out.push_str(code);
            out.push('\t');
            out.push_str(family);
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let (mut codes, mut families, mut matrix) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let mut cols = line.trim_end_matches('\r').split('\t');
            let code = cols.next().unwrap_or_default().to_string();
            let family = cols
                .next()
                .ok_or_else(|| parse_err("expected `lang<TAB>family<TAB>values`".into()))?
                .to_string();
            let row = cols
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|e| parse_err(format!("bad value `{c}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            codes.push(code);
            families.push(family);
            matrix.push(row);
        }
        LanguageSpace::new(codes, families, matrix)
    }

    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LanguageSpace::from_tsv(&text, path)
    }
}

/// Copies the flag table out of a checkpoint.
pub fn extract_language_space(checkpoint: &Checkpoint) -> Result<LanguageSpace> {
    let table = &checkpoint.params.lang_embed;
    let languages = checkpoint.inventory.languages();
    if table.rows() != languages.len() {
        return Err(Error::SpaceMismatch {
            rows: table.rows(),
            languages: languages.len(),
        });
    }
    LanguageSpace::new(
        languages.iter().map(|l| l.code.clone()).collect(),
        languages.iter().map(|l| l.family.clone()).collect(),
        (0..table.rows()).map(|i| table.row(i).to_vec()).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

/// Symmetric `L×L` distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
    metric: Metric,
}

impl DistanceMatrix {
    /// Validates symmetry (1e-9), zero diagonal and non-negative entries.
    pub fn from_rows(rows: Vec<Vec<f64>>, metric: Metric) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::shape("distance_matrix", &[n, n], &[i, row.len()]));
            }
            values.extend_from_slice(row);
        }
        let d = DistanceMatrix { n, values, metric };
        for i in 0..n {
            if d.get(i, i) != 0.0 {
                return Err(Error::InvalidArgument(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = d.get(i, j);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "invalid distance {v} at ({i}, {j})"
                    )));
                }
                if (v - d.get(j, i)).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "asymmetric distances at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Mean distance over same-family pairs and over cross-family pairs.
    /// A side with no pairs yields NaN.
    pub fn family_means(&self, families: &[String]) -> Result<(f64, f64)> {
        check_labels(families, self.n)?;
        let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..self.n {
            for j in i + 1..self.n {
                if families[i] == families[j] {
                    intra += self.get(i, j);
                    n_intra += 1;
                } else {
                    inter += self.get(i, j);
                    n_inter += 1;
                }
            }
        }
        Ok((intra / n_intra as f64, inter / n_inter as f64))
    }

    pub fn to_tsv(&self, codes: &[String], provenance: &BTreeMap<String, String>) -> String {
        let mut out = String::new();
        for (k, v) in provenance {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "# metric={}", self.metric);
        out.push_str("lang");
        for c in codes {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for (i, c) in codes.iter().enumerate() {
            out.push_str(c);
            for v in self.row(i) {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn check_labels(labels: &[String], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::MissingLabels(format!(
            "{} labels for {n} languages",
            labels.len()
        )));
    }
    if let Some(i) = labels.iter().position(|l| l.is_empty()) {
        return Err(Error::MissingLabels(format!("language {i} has no family")));
    }
    Ok(())
}

pub fn pairwise_distances(space: &LanguageSpace, metric: Metric) -> Result<DistanceMatrix> {
    let n = space.len();
    let norms: Vec<f64> = space.matrix.iter().map(|r| dot(r, r).sqrt()).collect();
    if metric == Metric::Cosine {
        if let Some(i) = norms.iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroVector(space.codes[i].clone()));
        }
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&space.matrix[i], &space.matrix[j]);
            let d = match metric {
                Metric::Cosine => (1.0 - dot(a, b) / (norms[i] * norms[j])).clamp(0.0, 2.0),
                Metric::Euclidean => a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
            };
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, values, metric })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::AdamConfig;
    use crate::corpus::{LanguageInventory, Vocabulary};
    use crate::nmt::{ModelConfig, ModelParams};
    use crate::trainer::OptimizerState;
    use proptest::prelude::*;

    fn space(rows: Vec<Vec<f64>>) -> LanguageSpace {
        let n = rows.len();
        LanguageSpace::new(
            (0..n).map(|i| format!("l{i}")).collect(),
            (0..n).map(|i| format!("f{}", i % 2)).collect(),
            rows,
        )
        .unwrap()
    }

    fn checkpoint(langs: usize, rows: usize) -> Checkpoint {
        let mut cfg = ModelConfig::new(8, 16, 4, 3, rows);
        cfg.lang_embed_dim = 16;
        let inv: String = (0..langs)
            .map(|i| format!("x{i}\tfam{}\n", i / 4))
            .collect();
        Checkpoint {
            params: ModelParams::init(cfg, 3).unwrap(),
            vocab: Vocabulary::build(&[vec!["a", "b", "c", "d"]], 1, 8).unwrap(),
            inventory: LanguageInventory::parse(&inv).unwrap(),
            step: 0,
            optimizer: OptimizerState::Adam {
                config: AdamConfig::default(),
                state: Default::default(),
            },
            provenance: BTreeMap::new(),
        }
    }

    #[test]
    fn extract_copies_table() {
        let c = checkpoint(12, 12);
        let s = extract_language_space(&c).unwrap();
        assert_eq!((s.len(), s.dim()), (12, 16));
        assert_eq!(s.row(5), c.params.lang_embed.row(5));
        assert_eq!(s.codes()[11], "x11");
        assert_eq!(s.families()[11], "fam2");
        assert_eq!(extract_language_space(&c).unwrap(), s);
    }

    #[test]
    fn extract_rejects_row_mismatch() {
        let c = checkpoint(12, 11);
        assert!(matches!(
            extract_language_space(&c),
            Err(Error::SpaceMismatch {
                rows: 11,
                languages: 12
            })
        ));
    }

    #[test]
    fn cosine_analytic_values() {
        let s = space(vec![
            vec![1.0, 0.0],
            vec![0.0, 3.0],
            vec![-2.0, 0.0],
            vec![1.0, 0.0],
        ]);
        let d = pairwise_distances(&s, Metric::Cosine).unwrap();
        assert_eq!(d.get(0, 3), 0.0);
        assert!((d.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((d.get(0, 2) - 2.0).abs() < 1e-15);
        let e = pairwise_distances(&s, Metric::Euclidean).unwrap();
        assert!((e.get(1, 2) - 13f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_rows() {
        let s = space(vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
        match pairwise_distances(&s, Metric::Cosine) {
            Err(Error::ZeroVector(code)) => assert_eq!(code, "l1"),
            other => panic!("{other:?}"),
        }
        assert!(pairwise_distances(&s, Metric::Euclidean).is_ok());
    }

    #[test]
    fn tsv_round_trip_is_exact() {
        let s = space(vec![vec![0.1, 1.0 / 3.0], vec![-2.5e-9, 7.0]]);
        let text = s.to_tsv(&BTreeMap::from([("seed".into(), "1".into())]));
        assert!(text.starts_with("# seed=1\nl0\tf0\t0.1\t0.3333333333333333\n"));
        assert_eq!(LanguageSpace::from_tsv(&text, Path::new("x")).unwrap(), s);
    }

    #[test]
    fn without_drops_named_languages() {
        let s = space(vec![vec![1.0], vec![2.0], vec![3.0]]);
        let t = s.without(&["l1"]).unwrap();
        assert_eq!(t.codes(), ["l0", "l2"]);
        assert_eq!(t.matrix(), [vec![1.0], vec![3.0]]);
        assert!(s.without(&["zz"]).is_err());
    }

    #[test]
    fn family_means_split_pairs() {
        let d = DistanceMatrix::from_rows(
            vec![
                vec![0.0, 1.0, 4.0],
                vec![1.0, 0.0, 6.0],
                vec![4.0, 6.0, 0.0],
            ],
            Metric::Euclidean,
        )
        .unwrap();
        let fam = vec!["a".to_string(), "a".into(), "b".into()];
        assert_eq!(d.family_means(&fam).unwrap(), (1.0, 5.0));
        assert!(d.family_means(&fam[..2]).is_err());
    }

    #[test]
    fn from_rows_validates() {
        assert!(
            DistanceMatrix::from_rows(vec![vec![0.0, 1.0], vec![2.0, 0.0]], Metric::Cosine)
                .is_err()
        );
        assert!(DistanceMatrix::from_rows(vec![vec![1.0]], Metric::Cosine).is_err());
    }

    proptest! {
        #[test]
        fn distances_symmetric_zero_diagonal(
            rows in proptest::collection::vec(proptest::collection::vec(0.1f64..5.0, 4), 2..9),
            cosine in any::<bool>(),
        ) {
            let metric = if cosine { Metric::Cosine } else { Metric::Euclidean };
            let d = pairwise_distances(&space(rows), metric).unwrap();
            for i in 0..d.len() {
                prop_assert_eq!(d.get(i, i), 0.0);
                for j in 0..d.len() {
                    prop_assert!((d.get(i, j) - d.get(j, i)).abs() <= 1e-9);
                    if cosine {
                        prop_assert!((0.0..=2.0).contains(&d.get(i, j)));
                    }
                }
            }
        }
    }
}
