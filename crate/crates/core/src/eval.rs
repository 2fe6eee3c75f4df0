//! Retrieval and zero-shot classification metrics, plus the multilingual and
//! emergent audio↔image evaluations built on them.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, Result};
use crate::numeric::{dot, l2_normalize_rows, Matrix};
use crate::synthdata::{Split, SyntheticDataset};

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    /// E.g. `audio->text`.
    pub direction: String,
    pub language: String,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub r_avg: f64,
    pub n_queries: usize,
}

impl RetrievalReport {
    /// Report from already-computed recalls; `r_avg` is their mean.
    pub fn from_components(direction: &str, language: &str, r1: f64, r5: f64, r10: f64, n_queries: usize) -> Self {
        Self {
            direction: direction.into(),
            language: language.into(),
            r1,
            r5,
            r10,
            r_avg: (r1 + r5 + r10) / 3.0,
            n_queries,
        }
    }

    pub fn with_tags(mut self, direction: &str, language: &str) -> Self {
        self.direction = direction.into();
        self.language = language.into();
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationReport {
    pub language: String,
    pub accuracy: f64,
    pub n: usize,
}

/// 0-based rank of the true gallery item for each query, by descending
/// cosine similarity. Ties rank the lower gallery index first.
pub fn true_item_ranks(queries: &Matrix, gallery: &Matrix, truth: &[usize]) -> Result<Vec<usize>> {
    if gallery.rows() == 0 {
        return Err(Error::param("empty gallery"));
    }
    if queries.cols() != gallery.cols() {
        return Err(Error::Shape {
            op: "recall_at_k",
            left: queries.shape(),
            right: gallery.shape(),
        });
    }
    if truth.len() != queries.rows() {
        return Err(Error::param(format!(
            "truth has {} entries for {} queries",
            truth.len(),
            queries.rows()
        )));
    }
    if let Some(t) = truth.iter().find(|&&t| t >= gallery.rows()) {
        return Err(Error::param(format!(
            "truth index {t} outside gallery of {}",
            gallery.rows()
        )));
    }
    Ok((0..queries.rows())
        .into_par_iter()
        .map(|q| {
            let query = queries.row(q);
            let t = truth[q];
            let target = dot(query, gallery.row(t));
            (0..gallery.rows())
                .filter(|&j| {
                    let s = dot(query, gallery.row(j));
                    s > target || (s == target && j < t)
                })
                .count()
        })
        .collect())
}

/// R@1, R@5, R@10 and their mean. `k` larger than the gallery is clipped to
/// the gallery size.
pub fn recall_at_k(queries: &Matrix, gallery: &Matrix, truth: &[usize]) -> Result<RetrievalReport> {
    let ranks = true_item_ranks(queries, gallery, truth)?;
    let g = gallery.rows();
    let mut r = [0.0; 3];
    for (slot, &k) in r.iter_mut().zip(&RECALL_KS) {
        if k > g {
            log::warn!("recall@{k} clipped to gallery size {g}");
        }
        let k = k.min(g);
        *slot = ranks.iter().filter(|&&rank| rank < k).count() as f64 / ranks.len() as f64;
    }
    Ok(RetrievalReport::from_components("", "", r[0], r[1], r[2], ranks.len()))
}

/// Nearest-prototype prediction; ties go to the lower class index.
pub fn zero_shot_predict(samples: &Matrix, prototypes: &Matrix) -> Result<Vec<usize>> {
    if prototypes.rows() < 2 {
        return Err(Error::param("zero-shot classification needs at least 2 classes"));
    }
    if samples.cols() != prototypes.cols() {
        return Err(Error::Shape {
            op: "zero_shot_classify",
            left: samples.shape(),
            right: prototypes.shape(),
        });
    }
    Ok((0..samples.rows())
        .map(|i| {
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..prototypes.rows() {
                let s = dot(samples.row(i), prototypes.row(c));
                if s > best.1 {
                    best = (c, s);
                }
            }
            best.0
        })
        .collect())
}

pub fn zero_shot_classify(samples: &Matrix, prototypes: &Matrix, labels: &[usize]) -> Result<ClassificationReport> {
    if labels.len() != samples.rows() {
        return Err(Error::param("one label per sample required"));
    }
    let pred = zero_shot_predict(samples, prototypes)?;
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(ClassificationReport {
        language: String::new(),
        accuracy: correct as f64 / labels.len().max(1) as f64,
        n: labels.len(),
    })
}

/// Unit-norm mean embedding per class.
pub fn class_prototypes(embeddings: &Matrix, labels: &[usize], num_classes: usize) -> Result<Matrix> {
    let mut sums = Matrix::zeros(num_classes, embeddings.cols());
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::param(format!("label {l} out of range")));
        }
        for (s, v) in sums.row_mut(l).iter_mut().zip(embeddings.row(i)) {
            *s += v;
        }
    }
    l2_normalize_rows(&sums)
}

/// Retrieval and classification results for one text language.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageReport {
    pub language: String,
    pub audio_to_text: RetrievalReport,
    pub text_to_audio: RetrievalReport,
    pub classification: ClassificationReport,
}

fn identity_truth(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Audio embeddings of a split, clips fixed to `target_len` frames.
pub fn embed_audio(audio: &EncoderParams, ds: &SyntheticDataset, idx: &[usize], target_len: usize) -> Result<Matrix> {
    encode(audio, &ds.audio_matrix(idx, target_len)?)
}

/// Evaluates the audio encoder against text in each requested language.
/// Class prototypes come from the training split's text in that language.
pub fn multilingual_sweep(
    audio: &EncoderParams,
    frozen_text: &EncoderParams,
    ds: &SyntheticDataset,
    languages: &[String],
    target_len: usize,
) -> Result<Vec<LanguageReport>> {
    let test = ds.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::param("test split is empty"));
    }
    let train = ds.indices(Split::Train);
    let audio_emb = embed_audio(audio, ds, &test, target_len)?;
    let truth = identity_truth(test.len());
    let test_labels = ds.labels(&test);
    let mut out = Vec::with_capacity(languages.len());
    for name in languages {
        let l = ds.language_index(name)?;
        let text_emb = encode(frozen_text, &ds.text_matrix(&test, l)?)?;
        let a2t = recall_at_k(&audio_emb, &text_emb, &truth)?.with_tags("audio->text", name);
        let t2a = recall_at_k(&text_emb, &audio_emb, &truth)?.with_tags("text->audio", name);
        let protos = class_prototypes(
            &encode(frozen_text, &ds.text_matrix(&train, l)?)?,
            &ds.labels(&train),
            ds.world.num_classes,
        )?;
        let mut cls = zero_shot_classify(&audio_emb, &protos, &test_labels)?;
        cls.language = name.clone();
        out.push(LanguageReport {
            language: name.clone(),
            audio_to_text: a2t,
            text_to_audio: t2a,
            classification: cls,
        });
    }
    Ok(out)
}

/// Audio↔image retrieval on the test split. Refuses to run if any
/// audio-image pair has reached an optimizer.
pub fn emergent_crossmodal_eval(
    audio: &EncoderParams,
    frozen_image: &EncoderParams,
    ds: &SyntheticDataset,
    target_len: usize,
) -> Result<(RetrievalReport, RetrievalReport)> {
    if ds.audio_image_contaminated {
        return Err(Error::protocol(
            "dataset provenance shows audio-image training pairs; emergent evaluation is invalid",
        ));
    }
    let test = ds.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::param("test split is empty"));
    }
    let a = embed_audio(audio, ds, &test, target_len)?;
    let i = encode(frozen_image, &ds.image_matrix(&test)?)?;
    let truth = identity_truth(test.len());
    Ok((
        recall_at_k(&a, &i, &truth)?.with_tags("audio->image", "-"),
        recall_at_k(&i, &a, &truth)?.with_tags("image->audio", "-"),
    ))
}

/// Text↔image retrieval of the anchor pair on `split`, English text.
pub fn anchor_retrieval(
    text: &EncoderParams,
    image: &EncoderParams,
    ds: &SyntheticDataset,
    split: Split,
) -> Result<(RetrievalReport, RetrievalReport)> {
    let idx = ds.indices(split);
    let t = encode(text, &ds.text_matrix(&idx, 0)?)?;
    let i = encode(image, &ds.image_matrix(&idx)?)?;
    let truth = identity_truth(idx.len());
    Ok((
        recall_at_k(&t, &i, &truth)?.with_tags("text->image", "english"),
        recall_at_k(&i, &t, &truth)?.with_tags("image->text", "english"),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" | "json-lines" => Ok(ReportFormat::JsonLines),
            other => Err(Error::Config(format!("unknown report format {other:?} (csv|jsonl)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Float(f64),
    Int(u64),
}

/// Column-ordered rows rendered as CSV or JSON lines. Floats print with four
/// decimals so output bytes are stable.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

pub const RETRIEVAL_HEADER: [&str; 7] = ["direction", "language", "r1", "r5", "r10", "r_avg", "n"];

impl Table {
    pub fn retrieval(reports: &[RetrievalReport]) -> Self {
        Self {
            header: RETRIEVAL_HEADER.to_vec(),
            rows: reports
                .iter()
                .map(|r| {
                    vec![
                        Cell::Text(r.direction.clone()),
                        Cell::Text(r.language.clone()),
                        Cell::Float(r.r1),
                        Cell::Float(r.r5),
                        Cell::Float(r.r10),
                        Cell::Float(r.r_avg),
                        Cell::Int(r.n_queries as u64),
                    ]
                })
                .collect(),
        }
    }

    pub fn classification(reports: &[ClassificationReport]) -> Self {
        Self {
            header: vec!["language", "accuracy", "n"],
            rows: reports
                .iter()
                .map(|r| {
                    vec![
                        Cell::Text(r.language.clone()),
                        Cell::Float(r.accuracy),
                        Cell::Int(r.n as u64),
                    ]
                })
                .collect(),
        }
    }

    pub fn render(&self, format: ReportFormat) -> String {
        let mut out = String::new();
        match format {
            ReportFormat::Csv => {
                out.push_str(&self.header.join(","));
                out.push('\n');
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(csv_cell).collect();
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
            }
            ReportFormat::JsonLines => {
                for row in &self.rows {
                    out.push('{');
                    for (i, (key, cell)) in self.header.iter().zip(row).enumerate() {
                        if i > 0 {
                            out.push(',');
                        }
                        let _ = write!(out, "{}:{}", json_string(key), json_cell(cell));
                    }
                    out.push_str("}\n");
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path, format: ReportFormat) -> Result<()> {
        std::fs::write(path, self.render(format)).map_err(|e| Error::io(path, e))
    }
}

fn fmt_float(v: f64) -> String {
    format!("{v:.4}")
}

fn csv_cell(c: &Cell) -> String {
    match c {
        Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Cell::Text(s) => s.clone(),
        Cell::Float(v) => fmt_float(*v),
        Cell::Int(v) => v.to_string(),
    }
}

fn json_cell(c: &Cell) -> String {
    match c {
        Cell::Text(s) => json_string(s),
        Cell::Float(v) => fmt_float(*v),
        Cell::Int(v) => v.to_string(),
    }
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Writes retrieval reports with the fixed header
/// `direction,language,r1,r5,r10,r_avg,n`.
pub fn emit_report(reports: &[RetrievalReport], path: &Path, format: ReportFormat) -> Result<()> {
    Table::retrieval(reports).write(path, format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn unit_rows(n: usize, d: usize, rng: &mut Rng) -> Matrix {
        l2_normalize_rows(&Matrix::from_fn(n, d, |_, _| rng.standard_normal()).unwrap()).unwrap()
    }

    #[test]
    fn mean_of_three_components() {
        let r = RetrievalReport::from_components("audio->text", "english", 0.3398, 0.6830, 0.8181, 1);
        assert!((r.r_avg - 0.6136).abs() < 5e-5);
    }

    #[test]
    fn singleton_gallery() {
        let q = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let r = recall_at_k(&q, &q, &[0]).unwrap();
        assert_eq!((r.r1, r.r5, r.r10), (1.0, 1.0, 1.0));
    }

    /// Hand-built 5-item case checked against sorting every similarity.
    #[test]
    fn toy_matches_exhaustive_ranking() {
        let g = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
            vec![0.6, 0.8],
        ])
        .unwrap();
        let q = Matrix::from_rows(&[vec![0.8, 0.6], vec![0.0, 1.0], vec![-0.6, -0.8]]).unwrap();
        let truth = [4, 0, 2];
        let ranks = true_item_ranks(&q, &g, &truth).unwrap();
        // q0: sims [.8,.6,-.8,-.6,.96] -> item 4 first.
        // q1: sims [0,1,0,-1,.8] -> item 0 ties with 2 at 0, wins on index: rank 2.
        // q2: sims [-.6,-.8,.6,.8,-.84] -> item 2 second.
        assert_eq!(ranks, vec![0, 2, 1]);
    }

    #[test]
    fn tie_breaks_to_lower_index() {
        let g = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let q = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(true_item_ranks(&q, &g, &[0, 2]).unwrap(), vec![0, 2]);
    }

    #[test]
    fn recall_is_monotone_and_scale_invariant() {
        let mut rng = Rng::new(12);
        let q = unit_rows(30, 4, &mut rng);
        let g = unit_rows(30, 4, &mut rng);
        let truth: Vec<usize> = (0..30).collect();
        let r = recall_at_k(&q, &g, &truth).unwrap();
        assert!(r.r1 <= r.r5 && r.r5 <= r.r10);
        let r2 = recall_at_k(&q.scale(14.3).unwrap(), &g, &truth).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn empty_gallery_rejected() {
        let q = Matrix::identity(2);
        assert!(true_item_ranks(&q, &q, &[0]).is_err());
    }

    #[test]
    fn prototype_match_is_correct() {
        let protos = Matrix::identity(3);
        let samples = Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(zero_shot_classify(&samples, &protos, &[1]).unwrap().accuracy, 1.0);
    }

    #[test]
    fn duplicated_prototypes_resolve_low() {
        let protos = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let samples = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(zero_shot_predict(&samples, &protos).unwrap(), vec![1]);
    }

    #[test]
    fn single_class_rejected() {
        let p = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(zero_shot_classify(&p, &p, &[0]).is_err());
    }

    #[test]
    fn random_case_matches_argmax_scan() {
        let mut rng = Rng::new(21);
        let samples = unit_rows(50, 6, &mut rng);
        let protos = unit_rows(5, 6, &mut rng);
        let labels: Vec<usize> = (0..50).map(|_| rng.choice(5).unwrap()).collect();
        let mut correct = 0;
        for (i, &label) in labels.iter().enumerate() {
            let sims: Vec<f64> = (0..5)
                .map(|c| samples.row(i).iter().zip(protos.row(c)).map(|(a, b)| a * b).sum())
                .collect();
            let best = (0..5).fold(0, |b, c| if sims[c] > sims[b] { c } else { b });
            correct += (best == label) as usize;
        }
        let rep = zero_shot_classify(&samples, &protos, &labels).unwrap();
        assert_eq!(rep.accuracy, correct as f64 / 50.0);
    }

    #[test]
    fn csv_and_jsonl_rendering() {
        let r = vec![RetrievalReport::from_components(
            "audio->text",
            "english",
            0.5,
            0.75,
            1.0,
            4,
        )];
        let csv = Table::retrieval(&r).render(ReportFormat::Csv);
        assert_eq!(
            csv,
            "direction,language,r1,r5,r10,r_avg,n\naudio->text,english,0.5000,0.7500,1.0000,0.7500,4\n"
        );
        let jl = Table::retrieval(&r).render(ReportFormat::JsonLines);
        let v: serde_json::Value = serde_json::from_str(jl.trim()).unwrap();
        assert_eq!(v["r5"], 0.75);
        assert_eq!(v["n"], 4);
        assert_eq!(
            Table::retrieval(&[]).render(ReportFormat::Csv),
            "direction,language,r1,r5,r10,r_avg,n\n"
        );
    }
}
