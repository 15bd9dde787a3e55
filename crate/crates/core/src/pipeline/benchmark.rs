//! Planted-weakspot benchmark.
//!
//! Class centroids sit at `(spacing / sqrt 2) * e_c`, so every pair is exactly
//! `spacing` apart. A fraction of the source class is drawn around
//! `mu_src + beta * (mu_tgt - mu_src)` and tagged with the minority value of
//! the planted attribute; all other records carry the majority value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{bind, DataError, DatasetBundle, DetectedObject, EmbeddingStore, Environment, Record, Scene, Split};

/// Geometry verified to satisfy the subgroup-misclassification property of
/// the default spec; see `tests/benchmark_defaults.rs`.
pub const DEFAULT_SPACING: f64 = 1.0;
pub const DEFAULT_NOISE: f64 = 0.1;

/// Multiplier on the expected subgroup-to-target distance.
const RADIUS_FACTOR: f64 = 1.1;

const NAMED_CLASSES: [(&str, &str, Environment, &str); 4] = [
    ("doctor", "stethoscope", Environment::Indoor, "hospital"),
    ("nurse", "clipboard", Environment::Indoor, "clinic"),
    ("lifeguard", "rescue buoy", Environment::Outdoor, "beach"),
    ("carpenter", "hammer", Environment::Indoor, "workshop"),
];

const ACTIONS: [&str; 6] = [
    "standing",
    "talking to a colleague",
    "looking at the camera",
    "walking",
    "sitting at a desk",
    "smiling",
];

const PLACES: [&str; 5] = [
    "in a bright room",
    "near a window",
    "at work",
    "in a hallway",
    "outside a building",
];

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error("invalid benchmark spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubgroupSpec {
    pub source_class: String,
    pub target_class: String,
    pub attribute: String,
    pub minority_value: String,
    pub majority_value: String,
    /// Share of the source class, per split, that belongs to the subgroup.
    pub fraction: f64,
    pub beta: f64,
    /// Object planted in every subgroup record's detections.
    pub marker_object: String,
}

impl Default for SubgroupSpec {
    fn default() -> Self {
        Self {
            source_class: "doctor".into(),
            target_class: "nurse".into(),
            attribute: "gender".into(),
            minority_value: "female".into(),
            majority_value: "male".into(),
            fraction: 0.2,
            beta: 0.8,
            marker_object: "potted plant".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub class_count: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub spacing: f64,
    pub noise: f64,
    pub subgroup: SubgroupSpec,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            class_count: 4,
            dim: 16,
            train_per_class: 200,
            test_per_class: 50,
            spacing: DEFAULT_SPACING,
            noise: DEFAULT_NOISE,
            subgroup: SubgroupSpec::default(),
            seed: 7,
        }
    }
}

pub fn class_labels(count: usize) -> Vec<String> {
    (0..count)
        .map(|i| match NAMED_CLASSES.get(i) {
            Some(c) => c.0.to_string(),
            None => format!("class_{i}"),
        })
        .collect()
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        let bad = |m: String| Err(BenchmarkError::InvalidSpec(m));
        if self.class_count < 2 {
            return bad(format!("class_count {} < 2", self.class_count));
        }
        if self.dim < self.class_count {
            return bad(format!("dim {} < class_count {}", self.dim, self.class_count));
        }
        if self.train_per_class < 2 || self.test_per_class < 2 {
            return bad("per-class counts must be at least 2".into());
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return bad(format!("spacing {} must be positive", self.spacing));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise {} must be >= 0", self.noise));
        }
        let g = &self.subgroup;
        if !(g.fraction > 0.0 && g.fraction < 1.0) {
            return bad(format!("fraction {} outside (0,1)", g.fraction));
        }
        if !(0.0..=1.0).contains(&g.beta) {
            return bad(format!("beta {} outside [0,1]", g.beta));
        }
        let labels = class_labels(self.class_count);
        for c in [&g.source_class, &g.target_class] {
            if !labels.contains(c) {
                return bad(format!("unknown class {c:?}"));
            }
        }
        if g.source_class == g.target_class {
            return bad("source and target class must differ".into());
        }
        if g.minority_value == g.majority_value {
            return bad("minority and majority values must differ".into());
        }
        Ok(())
    }

    pub fn centroid(&self, class_index: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        c[class_index] = self.spacing / std::f64::consts::SQRT_2;
        c
    }

    fn class_index(&self, label: &str) -> usize {
        class_labels(self.class_count).iter().position(|l| l == label).unwrap()
    }

    pub fn subgroup_center(&self) -> Vec<f64> {
        let src = self.centroid(self.class_index(&self.subgroup.source_class));
        let tgt = self.centroid(self.class_index(&self.subgroup.target_class));
        src.iter()
            .zip(&tgt)
            .map(|(s, t)| s + self.subgroup.beta * (t - s))
            .collect()
    }

    /// Radius slightly above the expected distance from a subgroup point to a
    /// target-class point.
    pub fn planted_radius(&self) -> f64 {
        let gap = (1.0 - self.subgroup.beta) * self.spacing;
        let spread = 2.0 * self.dim as f64 * self.noise * self.noise;
        RADIUS_FACTOR * (spread + gap * gap).sqrt()
    }

    /// Subgroup size for a split with `per_class` records of the source class.
    pub fn subgroup_count(&self, per_class: usize) -> usize {
        ((self.subgroup.fraction * per_class as f64).round() as usize).clamp(1, per_class - 1)
    }

    pub fn is_subgroup(&self, record: &Record) -> bool {
        record.attributes.get(&self.subgroup.attribute) == Some(&self.subgroup.minority_value)
    }
}

fn split_tag(split: Split) -> (&'static str, u64) {
    match split {
        Split::Train => ("train", 0),
        Split::Test => ("test", 1),
        Split::Procured => ("procured", 2),
    }
}

fn make_split(spec: &BenchmarkSpec, split: Split, per_class: usize) -> Result<DatasetBundle, BenchmarkError> {
    let (tag, stream) = split_tag(split);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let labels = class_labels(spec.class_count);
    let planted = spec.subgroup_count(per_class);
    let sub_center = spec.subgroup_center();
    let g = &spec.subgroup;

    let mut rows = Vec::with_capacity(spec.class_count * per_class * spec.dim);
    let mut records = Vec::with_capacity(spec.class_count * per_class);
    for (c, label) in labels.iter().enumerate() {
        let in_source = *label == g.source_class;
        let centroid = spec.centroid(c);
        for j in 0..per_class {
            let minority = in_source && j < planted;
            let center = if minority { &sub_center } else { &centroid };
            for &m in center {
                let eps: f64 = StandardNormal.sample(&mut rng);
                rows.push((m + spec.noise * eps) as f32);
            }
            let mut r = Record::new(format!("{tag}-{label}-{j:04}"), split, label.as_str());
            r.attributes.insert(
                g.attribute.clone(),
                if minority { &g.minority_value } else { &g.majority_value }.clone(),
            );
            let subject = if minority { "a woman" } else { "a man" };
            r.caption = Some(format!(
                "{subject} {} {}",
                ACTIONS[j % ACTIONS.len()],
                PLACES[(j / ACTIONS.len()) % PLACES.len()]
            ));
            let named = NAMED_CLASSES.get(c);
            r.scene = Some(Scene {
                environment: named.map(|n| n.2).unwrap_or_default(),
                venue: named.map(|n| n.3.to_string()),
            });
            let mut objects = vec![DetectedObject {
                label: "person".into(),
                relevance: 0.3,
            }];
            if let Some(n) = named {
                objects.push(DetectedObject {
                    label: n.1.into(),
                    relevance: 0.6,
                });
            }
            if minority {
                objects.push(DetectedObject {
                    label: g.marker_object.clone(),
                    relevance: 0.85,
                });
            }
            r.objects = Some(objects);
            records.push(r);
        }
    }
    Ok(bind(EmbeddingStore::new(spec.dim, rows)?, records)?)
}

/// Builds the `(train, test)` pair described by `spec`. Deterministic in the seed.
pub fn make_benchmark(spec: &BenchmarkSpec) -> Result<(DatasetBundle, DatasetBundle), BenchmarkError> {
    spec.validate()?;
    Ok((
        make_split(spec, Split::Train, spec.train_per_class)?,
        make_split(spec, Split::Test, spec.test_per_class)?,
    ))
}
