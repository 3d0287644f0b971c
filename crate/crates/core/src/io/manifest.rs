//! Dataset manifests: category name, sketch/annotation file references,
//! the exemplar index, and the resampling seed and point budget.

use crate::error::{Error, Result};
use crate::io::labels::{parse_label_file, LabelFile};
use crate::io::ndjson::{parse_ndjson, Strictness};
use crate::io::{config::parse_kv, read_to_string};
use crate::sketch::{normalize, resample, LabeledSketch, Sketch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const MANIFEST_HEADER: &str = "format=sketchseg-manifest-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub category: String,
    /// NDJSON file, relative to the manifest.
    pub sketches: String,
    /// Annotation file with one line per sketch (exemplar line doubles as
    /// the exemplar annotation).
    pub truth_labels: Option<String>,
    pub exemplar_index: usize,
    pub resample_seed: u64,
    pub n_points: usize,
}

impl DatasetManifest {
    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "{}\ncategory={}\nsketches={}\n",
            MANIFEST_HEADER, self.category, self.sketches
        );
        if let Some(t) = &self.truth_labels {
            out.push_str(&format!("truth_labels={}\n", t));
        }
        out.push_str(&format!(
            "exemplar_index={}\nresample_seed={}\nn_points={}\n",
            self.exemplar_index, self.resample_seed, self.n_points
        ));
        out
    }

    pub fn from_kv(text: &str) -> Result<DatasetManifest> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == MANIFEST_HEADER => {}
            other => {
                return Err(Error::Parse {
                    line: 1,
                    detail: format!("expected '{}', got {:?}", MANIFEST_HEADER, other.unwrap_or("")),
                })
            }
        }
        let rest: String = lines.collect::<Vec<_>>().join("\n");
        let pairs = parse_kv(&rest)?;
        let mut m = DatasetManifest {
            category: String::new(),
            sketches: String::new(),
            truth_labels: None,
            exemplar_index: 0,
            resample_seed: 0,
            n_points: crate::sketch::DEFAULT_POINT_COUNT,
        };
        for (k, v) in pairs {
            match k.as_str() {
                "category" => m.category = v,
                "sketches" => m.sketches = v,
                "truth_labels" => m.truth_labels = Some(v),
                "exemplar_index" => {
                    m.exemplar_index =
                        v.parse().map_err(|_| Error::Config(format!("bad exemplar_index '{}'", v)))?
                }
                "resample_seed" => {
                    m.resample_seed =
                        v.parse().map_err(|_| Error::Config(format!("bad resample_seed '{}'", v)))?
                }
                "n_points" => {
                    m.n_points =
                        v.parse().map_err(|_| Error::Config(format!("bad n_points '{}'", v)))?
                }
                other => return Err(Error::Config(format!("unknown manifest key '{}'", other))),
            }
        }
        if m.sketches.is_empty() {
            return Err(Error::Config("manifest is missing 'sketches'".into()));
        }
        Ok(m)
    }
}

/// A dataset made ready for training or evaluation: resampled, normalized,
/// exemplar labels attached, target ground truth (when annotated) remapped
/// into the exemplar's dictionary extended with any extra label names.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub category: String,
    pub exemplar: LabeledSketch,
    /// Non-exemplar sketches in file order.
    pub targets: Vec<Sketch>,
    /// Ground-truth point labels per target, when annotated. Ids index the
    /// extended dictionary in `all_label_names`.
    pub target_truths: Vec<Option<Vec<usize>>>,
    /// Original file indices of `targets`.
    pub target_indices: Vec<usize>,
    /// Exemplar label names first, then names seen only in target truth.
    pub all_label_names: Vec<String>,
}

/// Load a manifest and the files it references, resample and normalize
/// every sketch, and attach annotations.
pub fn load_dataset(manifest_path: &Path) -> Result<PreparedDataset> {
    let manifest = DatasetManifest::from_kv(&read_to_string(manifest_path)?)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let sketch_text = read_to_string(&base.join(&manifest.sketches))?;
    let parsed = parse_ndjson(&sketch_text, Strictness::Strict)?;
    if parsed.sketches.is_empty() {
        return Err(Error::EmptyPointSet("dataset"));
    }
    if manifest.exemplar_index >= parsed.sketches.len() {
        return Err(Error::Config(format!(
            "exemplar_index {} out of {} sketches",
            manifest.exemplar_index,
            parsed.sketches.len()
        )));
    }
    let labels: Option<LabelFile> = match &manifest.truth_labels {
        Some(rel) => Some(parse_label_file(&read_to_string(&base.join(rel))?)?),
        None => None,
    };
    let label_file = labels.ok_or(Error::UnlabeledExemplar)?;

    let mut rng = ChaCha8Rng::seed_from_u64(manifest.resample_seed);
    let mut prepared: Vec<Sketch> = Vec::with_capacity(parsed.sketches.len());
    for raw in &parsed.sketches {
        let resampled = resample(raw, manifest.n_points, &mut rng)?;
        prepared.push(normalize(&resampled)?.0);
    }

    // The exemplar's own tokens define the dense dictionary; extra names
    // from target annotations are appended after it.
    let ex_idx = manifest.exemplar_index;
    let ex_tokens = &label_file.lines[ex_idx];
    let mut names: Vec<String> = Vec::new();
    for t in ex_tokens {
        if !names.iter().any(|n| n == t) {
            names.push(t.clone());
        }
    }
    let exemplar_label_count = names.len();
    for line in &label_file.lines {
        for t in line {
            if !names.iter().any(|n| n == t) {
                names.push(t.clone());
            }
        }
    }
    let labels_for = |index: usize, sketch: &Sketch| -> Result<Vec<usize>> {
        let tokens = &label_file.lines[index];
        let id_of = |t: &String| names.iter().position(|n| n == t).expect("name collected");
        if tokens.len() == sketch.strokes.len() {
            Ok(sketch
                .strokes
                .iter()
                .zip(tokens.iter())
                .flat_map(|(s, t)| std::iter::repeat(id_of(t)).take(s.points.len()))
                .collect())
        } else if tokens.len() == sketch.point_count() {
            Ok(tokens.iter().map(id_of).collect())
        } else {
            Err(Error::LabelCount { got: tokens.len(), want: sketch.point_count() })
        }
    };

    let exemplar = LabeledSketch::new(
        prepared[ex_idx].clone(),
        labels_for(ex_idx, &prepared[ex_idx])?,
        names[..exemplar_label_count].to_vec(),
    )?;

    let mut targets = Vec::new();
    let mut target_truths = Vec::new();
    let mut target_indices = Vec::new();
    for (i, sketch) in prepared.iter().enumerate() {
        if i == ex_idx {
            continue;
        }
        let truth = if i < label_file.lines.len() {
            Some(labels_for(i, sketch)?)
        } else {
            None
        };
        targets.push(sketch.clone());
        target_truths.push(truth);
        target_indices.push(i);
    }
    Ok(PreparedDataset {
        category: manifest.category,
        exemplar,
        targets,
        target_truths,
        target_indices,
        all_label_names: names,
    })
}
