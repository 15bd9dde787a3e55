//! Audit → describe → procure → merge → fine-tune → re-audit.
//!
//! Human review sits between the two entry points: [`run_audit`] leaves a
//! review queue on disk, [`run_enhance`] consumes whatever verdicts it holds.

pub mod benchmark;
mod config;
mod report;

use std::borrow::Cow;
use std::error::Error as StdError;
use std::path::Path;

use thiserror::Error;

pub use config::{DataConfig, DatasetPaths, GroupPair, PipelineConfig, ProcurementSettings};
pub use report::{read_json, write_json, AuditReport, DisparityChange, EnhanceReport, ProcurementSummary};

use crate::audit::{self, Prediction, ReferenceSet, Weakspot};
use crate::data::{self, DatasetBundle};
use crate::index::NeighborIndex;
use crate::learner::{self, LinearClassifier, TrainConfig};
use crate::metrics::{self, DisparityReport, MetricsReport};
use crate::procurement::{
    self, BundleAnchors, Channel, Clients, Embedder, FixtureEmbedder, FixtureProvider, HttpEmbedder, HttpProvider,
    ImageProvider, ProcurementCache, SyntheticParams,
};
use crate::prompt::{self, DescriptionSet, Purpose};
use crate::review::{self, ReviewQueue, ReviewStore};
use benchmark::BenchmarkSpec;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<dyn StdError + Send + Sync>,
    },
}

impl PipelineError {
    pub fn stage(stage: &'static str, source: impl Into<Box<dyn StdError + Send + Sync>>) -> Self {
        PipelineError::Stage {
            stage,
            source: source.into(),
        }
    }
}

fn at<E: Into<Box<dyn StdError + Send + Sync>>>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::stage(stage, e)
}

/// Train and test bundles named by a config.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: DatasetBundle,
    pub test: DatasetBundle,
}

impl Datasets {
    pub fn load(config: &DataConfig) -> Result<Self, PipelineError> {
        let train = DatasetBundle::load(&config.train.store, &config.train.manifest).map_err(at("load train"))?;
        let test = DatasetBundle::load(&config.test.store, &config.test.manifest).map_err(at("load test"))?;
        if train.dim() != test.dim() {
            return Err(PipelineError::Config(format!(
                "train dim {} differs from test dim {}",
                train.dim(),
                test.dim()
            )));
        }
        Ok(Self { train, test })
    }

    /// Records scanned for pivotals and indexed as neighbors.
    pub fn audit_bundle(&self, reference: ReferenceSet) -> Result<Cow<'_, DatasetBundle>, PipelineError> {
        Ok(match reference {
            ReferenceSet::Test => Cow::Borrowed(&self.test),
            ReferenceSet::Train => Cow::Borrowed(&self.train),
            ReferenceSet::All => Cow::Owned(data::merge(&self.train, &self.test).map_err(at("merge splits"))?),
        })
    }
}

fn train_config(config: &PipelineConfig) -> TrainConfig {
    TrainConfig {
        seed: config.seed,
        ..config.train.clone()
    }
}

fn disparities(report: &MetricsReport, groups: &[GroupPair]) -> Vec<DisparityReport> {
    if !groups.is_empty() {
        return groups
            .iter()
            .filter_map(
                |g| match metrics::disparity(report, &g.attribute, &g.group_a, &g.group_b) {
                    Ok(d) => Some(d),
                    Err(e) => {
                        log::warn!("skipping disparity: {e}");
                        None
                    }
                },
            )
            .collect();
    }
    let mut out = Vec::new();
    for (attribute, values) in &report.per_group_accuracy {
        let keys: Vec<&String> = values.keys().collect();
        for (i, a) in keys.iter().enumerate() {
            for b in &keys[i + 1..] {
                if let Ok(d) = metrics::disparity(report, attribute, a, b) {
                    out.push(d);
                }
            }
        }
    }
    out
}

struct Evaluation {
    audit_predictions: Vec<Prediction>,
    metrics: MetricsReport,
    disparities: Vec<DisparityReport>,
}

fn evaluate_model(
    model: &LinearClassifier,
    sets: &Datasets,
    audit_bundle: &DatasetBundle,
    reference: ReferenceSet,
    groups: &[GroupPair],
) -> Result<Evaluation, PipelineError> {
    let audit_predictions = model.predict(audit_bundle).map_err(at("predict"))?;
    let test_predictions = if reference == ReferenceSet::Test {
        Cow::Borrowed(&audit_predictions)
    } else {
        Cow::Owned(model.predict(&sets.test).map_err(at("predict"))?)
    };
    let metrics = metrics::evaluate(&test_predictions, sets.test.records()).map_err(at("evaluate"))?;
    let disparities = disparities(&metrics, groups);
    Ok(Evaluation {
        audit_predictions,
        metrics,
        disparities,
    })
}

fn baseline(config: &PipelineConfig, sets: &Datasets) -> Result<LinearClassifier, PipelineError> {
    if let Some(path) = config.baseline_checkpoint.as_ref().filter(|p| p.exists()) {
        log::info!("loading baseline from {}", path.display());
        return LinearClassifier::load(path).map_err(at("load checkpoint"));
    }
    learner::train(&sets.train, &train_config(config)).map_err(at("train baseline"))
}

pub fn run_audit(config: &PipelineConfig) -> Result<AuditReport, PipelineError> {
    let sets = Datasets::load(&config.data)?;
    run_audit_with(config, &sets)
}

pub fn run_audit_with(config: &PipelineConfig, sets: &Datasets) -> Result<AuditReport, PipelineError> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir).map_err(at("create output dir"))?;
    let model = baseline(config, sets)?;
    model.save(config.baseline_path()).map_err(at("save checkpoint"))?;

    let reference = config.audit.reference;
    let bundle = sets.audit_bundle(reference)?;
    let eval = evaluate_model(&model, sets, &bundle, reference, &config.disparity_groups)?;
    let index = NeighborIndex::build(&bundle, |r| reference.keeps(r));
    let weakspots = audit::detect(&bundle, &eval.audit_predictions, &index, &config.audit).map_err(at("detect"))?;
    let grid = audit::grid(
        &bundle,
        &eval.audit_predictions,
        &index,
        &config.audit,
        &config.grid_radii(),
        config.audit.perplexity_threshold,
    )
    .map_err(at("grid"))?;

    let with_objects: Vec<data::Record> = bundle
        .records()
        .iter()
        .filter(|r| reference.keeps(r) && r.objects.is_some())
        .cloned()
        .collect();
    let associations = review::mine(
        &with_objects,
        &audit::prediction_map(&eval.audit_predictions),
        config.relevance_threshold,
    )
    .map_err(at("mine associations"))?;
    let shortlist = review::shortlist(&associations, &weakspots);
    let keys = shortlist.iter().map(|i| i.key.clone()).collect();
    ReviewStore::open(config.review_path())
        .and_then(|s| s.sync(shortlist))
        .map_err(at("sync review queue"))?;

    let report = AuditReport {
        audit: config.audit.clone(),
        baseline: eval.metrics,
        disparities: eval.disparities,
        pairs: audit::pair_summary(&weakspots),
        weakspots,
        grid,
        associations,
        shortlist: keys,
    };
    write_json(&report, config.audit_report_path())?;
    log::info!(
        "audit: accuracy {:.2}%, {} weakspots, {} shortlisted",
        report.baseline.overall_accuracy,
        report.weakspots.len(),
        report.shortlist.len()
    );
    Ok(report)
}

/// Descriptions for the persisted weakspots plus every association
/// currently marked spurious.
pub fn describe(
    config: &PipelineConfig,
    sets: &Datasets,
    weakspots: &[Weakspot],
    review: &ReviewQueue,
) -> Result<DescriptionSet, PipelineError> {
    let bundle = sets.audit_bundle(config.audit.reference)?;
    Ok(prompt::build_set(
        weakspots,
        &review.spurious(),
        &bundle,
        &config.attribute_variants,
    ))
}

/// Channels usable under the current config, in configured order.
fn usable_channels(config: &PipelineConfig) -> Vec<Channel> {
    let p = &config.procurement;
    let mut out = Vec::new();
    for &c in &p.channels {
        let ok = match c {
            Channel::Synthetic => true,
            Channel::Web | Channel::Txt2img if p.fixture_dir.is_some() => true,
            Channel::Web if !config.offline => p.web_endpoint.is_some() && p.embedder_endpoint.is_some(),
            Channel::Txt2img if !config.offline => p.txt2img_endpoint.is_some() && p.embedder_endpoint.is_some(),
            _ => false,
        };
        if ok && !out.contains(&c) {
            out.push(c);
        } else if !ok {
            log::warn!("channel {c} has no usable client; skipping");
        }
    }
    out
}

struct ClientSet {
    web: Option<Box<dyn ImageProvider>>,
    txt2img: Option<Box<dyn ImageProvider>>,
    embedder: Option<Box<dyn Embedder>>,
}

fn build_clients(config: &PipelineConfig) -> Result<ClientSet, PipelineError> {
    let p = &config.procurement;
    if let Some(dir) = &p.fixture_dir {
        let provider = FixtureProvider::load(dir).map_err(at("load fixtures"))?;
        let embedder = FixtureEmbedder::load(dir).map_err(at("load fixtures"))?;
        return Ok(ClientSet {
            web: Some(Box::new(provider.clone())),
            txt2img: Some(Box::new(provider)),
            embedder: Some(Box::new(embedder)),
        });
    }
    if config.offline {
        return Ok(ClientSet {
            web: None,
            txt2img: None,
            embedder: None,
        });
    }
    let http = |e: &Option<String>| {
        e.as_ref()
            .map(|u| Box::new(HttpProvider::new(u)) as Box<dyn ImageProvider>)
    };
    Ok(ClientSet {
        web: http(&p.web_endpoint),
        txt2img: http(&p.txt2img_endpoint),
        embedder: p
            .embedder_endpoint
            .as_ref()
            .map(|u| Box::new(HttpEmbedder::new(u)) as Box<dyn Embedder>),
    })
}

pub fn run_enhance(config: &PipelineConfig, review: &ReviewQueue) -> Result<EnhanceReport, PipelineError> {
    let sets = Datasets::load(&config.data)?;
    run_enhance_with(config, &sets, review)
}

pub fn run_enhance_with(
    config: &PipelineConfig,
    sets: &Datasets,
    review: &ReviewQueue,
) -> Result<EnhanceReport, PipelineError> {
    config.validate()?;
    let audit_report: AuditReport = read_json(config.audit_report_path())?;
    let model = LinearClassifier::load(config.baseline_path())
        .map_err(|e| PipelineError::Missing(format!("{}: {e}", config.baseline_path().display())))?;

    let descriptions = describe(config, sets, &audit_report.weakspots, review)?;
    descriptions
        .write_jsonl(config.prompts_path())
        .map_err(at("write prompts"))?;

    let channels = usable_channels(config);
    let requests = procurement::plan(&descriptions, &channels, config.procurement.per_count);
    std::fs::write(
        config.output_dir.join("procurement.jsonl"),
        procurement::requests_to_jsonl(&requests),
    )
    .map_err(at("write procurement plan"))?;

    let clients = build_clients(config)?;
    let bundle = sets.audit_bundle(config.audit.reference)?;
    let anchors = BundleAnchors {
        pivots: &bundle,
        centroids: &sets.train,
    };
    let params = SyntheticParams {
        alpha: config.procurement.alpha,
        sigma: config.procurement.sigma.unwrap_or(config.audit.radius / 4.0),
        seed: config.seed,
    };
    let cache = match &config.procurement.cache_dir {
        Some(dir) => ProcurementCache::on_disk(dir).map_err(at("open cache"))?,
        None => ProcurementCache::in_memory(),
    };
    let fulfillment = procurement::fulfill(
        &requests,
        &Clients {
            web: clients.web.as_deref(),
            txt2img: clients.txt2img.as_deref(),
            embedder: clients.embedder.as_deref(),
            anchors: Some(&anchors),
        },
        &params,
        sets.train.dim(),
        &cache,
    );
    for f in &fulfillment.failures {
        log::warn!("request {} ({}) failed: {}", f.request_id, f.channel, f.error);
    }
    log::info!(
        "procured {} records from {} requests ({} provider calls)",
        fulfillment.record_count(),
        requests.len(),
        fulfillment.provider_calls
    );

    let added = fulfillment.to_bundle(sets.train.dim()).map_err(at("collect batches"))?;
    let merged = data::merge(&sets.train, &added).map_err(at("merge"))?;
    let enhanced = learner::finetune(&model, &merged, &train_config(config)).map_err(at("finetune"))?;
    enhanced
        .save(config.output_dir.join("enhanced.ckpt"))
        .map_err(at("save checkpoint"))?;

    let reference = config.audit.reference;
    let groups: Vec<GroupPair> = audit_report
        .disparities
        .iter()
        .map(|d| GroupPair {
            attribute: d.attribute.clone(),
            group_a: d.group_a.clone(),
            group_b: d.group_b.clone(),
        })
        .collect();
    let after = evaluate_model(&enhanced, sets, &bundle, reference, &groups)?;
    let index = NeighborIndex::build(&bundle, |r| reference.keeps(r));
    let weakspots_after =
        audit::detect(&bundle, &after.audit_predictions, &index, &audit_report.audit).map_err(at("re-detect"))?;
    let radii: Vec<f64> = audit_report.grid.rows.iter().map(|r| r.radius).collect();
    let t_perp = audit_report
        .grid
        .rows
        .first()
        .map_or(audit_report.audit.perplexity_threshold, |r| r.perplexity_threshold);
    let grid_after = audit::grid(
        &bundle,
        &after.audit_predictions,
        &index,
        &audit_report.audit,
        &radii,
        t_perp,
    )
    .map_err(at("re-grid"))?;

    let disparities = audit_report
        .disparities
        .iter()
        .filter_map(|before| {
            let after = after.disparities.iter().find(|d| {
                d.attribute == before.attribute && d.group_a == before.group_a && d.group_b == before.group_b
            })?;
            Some(DisparityChange {
                before: before.clone(),
                after: after.clone(),
                reduction: metrics::disparity_reduction(before.disparity, after.disparity).ok(),
            })
        })
        .collect();

    let weakspot_descriptions = descriptions
        .entries
        .iter()
        .filter(|d| d.purpose == Purpose::Weakspot)
        .count();
    let report = EnhanceReport {
        audit: audit_report.audit.clone(),
        before: audit_report.baseline.clone(),
        after: after.metrics,
        disparities,
        procurement: ProcurementSummary {
            weakspot_descriptions,
            mitigation_descriptions: descriptions.len() - weakspot_descriptions,
            skipped_pivotals: descriptions.skipped.clone(),
            requests: requests.len(),
            fulfilled_requests: fulfillment.batches.len(),
            failures: fulfillment.failures.clone(),
            procured_records: added.len(),
            train_records: sets.train.len(),
            merged_records: merged.len(),
            augmentation_fraction: data::augmentation_fraction(added.len(), sets.train.len())
                .map_err(at("augmentation fraction"))?,
            screened: false,
        },
        grid_before: audit_report.grid.clone(),
        grid_after,
        weakspots_before: audit_report.weakspots.len(),
        weakspots_after: weakspots_after.len(),
        weakspots_after_ids: {
            let mut ids: Vec<String> = weakspots_after.into_iter().map(|w| w.pivotal_id).collect();
            ids.sort();
            ids
        },
    };
    write_json(&report, config.enhance_report_path())?;
    log::info!(
        "enhance: accuracy {:.2}% -> {:.2}%, weakspots {} -> {}",
        report.before.overall_accuracy,
        report.after.overall_accuracy,
        report.weakspots_before,
        report.weakspots_after
    );
    Ok(report)
}

/// Radii swept around the planted radius of a benchmark.
pub fn benchmark_radii(spec: &BenchmarkSpec) -> Vec<f64> {
    let r = spec.planted_radius();
    [0.5, 0.75, 1.0, 1.25, 1.5].iter().map(|f| f * r).collect()
}

/// Writes a benchmark's splits and a ready-to-run `pipeline.json` into `dir`.
/// Paths inside the written config are relative to `dir`.
pub fn emit_benchmark(spec: &BenchmarkSpec, dir: impl AsRef<Path>) -> Result<PipelineConfig, PipelineError> {
    let dir = dir.as_ref();
    let (train, test) = benchmark::make_benchmark(spec).map_err(at("benchmark"))?;
    std::fs::create_dir_all(dir).map_err(at("create benchmark dir"))?;
    train
        .save(dir.join("train.wsem"), dir.join("train.jsonl"))
        .map_err(at("write benchmark"))?;
    test.save(dir.join("test.wsem"), dir.join("test.jsonl"))
        .map_err(at("write benchmark"))?;

    let mut config = benchmark_config(spec);
    config.save(dir.join("pipeline.json"))?;
    config.resolve_paths(dir);
    Ok(config)
}

/// Pipeline config for a benchmark laid out as [`emit_benchmark`] writes it.
pub fn benchmark_config(spec: &BenchmarkSpec) -> PipelineConfig {
    let paths = |name: &str| DatasetPaths {
        store: format!("{name}.wsem").into(),
        manifest: format!("{name}.jsonl").into(),
    };
    let mut config = PipelineConfig::new(
        DataConfig {
            train: paths("train"),
            test: paths("test"),
        },
        "out",
    );
    config.audit.radius = spec.planted_radius();
    config.d_values = benchmark_radii(spec);
    config.seed = spec.seed;
    config.offline = true;
    let g = &spec.subgroup;
    config.disparity_groups = vec![GroupPair {
        attribute: g.attribute.clone(),
        group_a: g.majority_value.clone(),
        group_b: g.minority_value.clone(),
    }];
    config.attribute_variants = vec![format!("a {}", g.minority_value)];
    config
}
