//! End-to-end monitoring workflow over a [`RunStore`].
//!
//! A batch run aggregates the transactions at each configured granularity,
//! computes delta points, screens them, clusters the screened set, takes the
//! most suspicious cluster (or the expert's choice) as positives and trains
//! one network per granularity. Investigations then score a customer at
//! every level of the investigation profile and combine the degrees into an
//! alert; analysts record dispositions, which feed later retraining.

mod alert;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use alert::{combine_alert, AlertLevel, AlertThresholds};
pub use store::{
    ClusterArtifact, ClusterLabel, KnowledgeEvent, KnowledgeRecord, RunConfig, RunData, RunStatus,
    RunStore,
};

use crate::calendar::{Day, Granularity};
use crate::classifier::{
    build_training_set_from, predict, train, ClassifierError, NetworkConfig, SamplingPolicy,
    TrainedModel, TrainingSet,
};
use crate::clustering::{kmeans, ClusteringConfig, ClusteringError, ClusteringSummary};
use crate::features::{bucketize, compute_points, write_points_csv, AggregateKey, DeltaPoint, FeaturesError};
use crate::ingest::{write_transactions, IngestError, RawTransactionRecord};
use crate::screening::{screen_mask, ScreeningThresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Bucketize,
    Features,
    Screen,
    Cluster,
    Train,
    Persist,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Bucketize => "bucketize",
            Stage::Features => "features",
            Stage::Screen => "screen",
            Stage::Cluster => "cluster",
            Stage::Train => "train",
            Stage::Persist => "persist",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("run {run_id} failed at stage {stage}{}: {message}", granularity.map(|g| format!(" ({g})")).unwrap_or_default())]
    Stage {
        run_id: String,
        stage: Stage,
        granularity: Option<Granularity>,
        message: String,
    },
    #[error("{0} not found")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {message}", path.display())]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Features(#[from] FeaturesError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
}

impl PipelineError {
    /// True when the caller supplied something unusable (as opposed to an
    /// internal or storage failure).
    pub fn is_input_error(&self) -> bool {
        match self {
            PipelineError::Stage { .. }
            | PipelineError::NotFound(_)
            | PipelineError::Conflict(_)
            | PipelineError::Invalid(_)
            | PipelineError::Ingest(_)
            | PipelineError::Features(_) => true,
            PipelineError::Classifier(e) => !matches!(e, ClassifierError::NonFinite { .. }),
            PipelineError::Clustering(_) => true,
            PipelineError::Io { .. } | PipelineError::Corrupt { .. } => false,
        }
    }
}

/// Everything a batch run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchProfile {
    pub granularities: Vec<Granularity>,
    pub lookback_k: u32,
    pub thresholds: ScreeningThresholds,
    pub clustering: ClusteringConfig,
    pub network: NetworkConfig,
    pub sampling: SamplingPolicy,
    pub alert: AlertThresholds,
    /// Levels scored by an investigation.
    pub investigation: Vec<Granularity>,
    /// Logical date stamped on models; defaults to the latest transaction date.
    pub as_of: Option<Day>,
    /// Expert choice of suspicious cluster(s) per granularity, replacing the
    /// top-ranked cluster for the initial training.
    #[serde(default)]
    pub suspicious_overrides: BTreeMap<Granularity, Vec<usize>>,
}

impl Default for BatchProfile {
    fn default() -> Self {
        let levels = vec![Granularity::Day, Granularity::Week, Granularity::Month];
        BatchProfile {
            granularities: levels.clone(),
            lookback_k: crate::features::DEFAULT_LOOKBACK,
            thresholds: ScreeningThresholds::default(),
            clustering: ClusteringConfig::default(),
            network: NetworkConfig::default(),
            sampling: SamplingPolicy::default(),
            alert: AlertThresholds::default(),
            investigation: levels,
            as_of: None,
            suspicious_overrides: BTreeMap::new(),
        }
    }
}

impl BatchProfile {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: String| Err(PipelineError::Invalid(m));
        if self.granularities.is_empty() {
            return invalid("at least one granularity is required".into());
        }
        let unique: BTreeSet<_> = self.granularities.iter().collect();
        if unique.len() != self.granularities.len() {
            return invalid("granularities must be distinct".into());
        }
        if self.lookback_k > *crate::features::LOOKBACK_RANGE.end() {
            return invalid(format!("lookback k = {} exceeds 10", self.lookback_k));
        }
        if let Some(g) = self.investigation.iter().find(|g| !self.granularities.contains(g)) {
            return invalid(format!("investigation level {g} has no trained model"));
        }
        if !(0.0..=1.0).contains(&self.alert.review) || !(self.alert.review..=1.0).contains(&self.alert.alert) {
            return invalid("alert thresholds must satisfy 0 <= review <= alert <= 1".into());
        }
        self.clustering.validate()?;
        self.network.validate()?;
        for (g, clusters) in &self.suspicious_overrides {
            if clusters.iter().any(|&c| c >= self.clustering.n_clusters) {
                return invalid(format!("suspicious cluster override for {g} out of range"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Open,
    Suspicious,
    Cleared,
    /// Benign sub-fund exchange; never used as a positive again.
    Exchange,
}

impl Disposition {
    pub fn as_str(self) -> &'static str {
        match self {
            Disposition::Open => "open",
            Disposition::Suspicious => "suspicious",
            Disposition::Cleared => "cleared",
            Disposition::Exchange => "exchange",
        }
    }
}

impl FromStr for Disposition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "open" => Ok(Disposition::Open),
            "suspicious" => Ok(Disposition::Suspicious),
            "cleared" => Ok(Disposition::Cleared),
            "exchange" => Ok(Disposition::Exchange),
            _ => Err(format!("unknown disposition {s:?}")),
        }
    }
}

/// Per-level degrees of one customer at one date, with the analyst's verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCase {
    pub case_id: String,
    pub run_id: String,
    pub customer_id: String,
    pub fund_id: String,
    pub as_of_date: Day,
    pub degrees: BTreeMap<Granularity, f64>,
    /// `(delta1, delta2)` behind each degree.
    pub deltas: BTreeMap<Granularity, [f64; 2]>,
    pub alert_level: AlertLevel,
    pub rationale: Vec<String>,
    pub disposition: Disposition,
    pub note: Option<String>,
    pub disposition_at: Option<String>,
    pub excluded_from_training: bool,
}

impl ScoredCase {
    pub fn max_degree(&self) -> f64 {
        self.degrees.values().copied().fold(0.0, f64::max)
    }

    /// Equal apart from identity and disposition history.
    pub fn same_scoring(&self, other: &ScoredCase) -> bool {
        self.customer_id == other.customer_id
            && self.fund_id == other.fund_id
            && self.as_of_date == other.as_of_date
            && self.degrees == other.degrees
            && self.deltas == other.deltas
            && self.alert_level == other.alert_level
            && self.rationale == other.rationale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestigateRequest {
    pub customer_id: String,
    /// Required when the customer holds more than one fund.
    #[serde(default)]
    pub fund_id: Option<String>,
    pub date: Day,
    /// Defaults to the run's investigation profile.
    #[serde(default)]
    pub granularities: Option<Vec<Granularity>>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn stage_err(run_id: &str, stage: Stage, g: Option<Granularity>, e: impl fmt::Display) -> PipelineError {
    PipelineError::Stage {
        run_id: run_id.to_string(),
        stage,
        granularity: g,
        message: e.to_string(),
    }
}

/// Suspicious degree with the zero convention: a period without redemption
/// signals nothing and scores exactly zero.
fn degree_for(model: &TrainedModel, beta: f64, point: &DeltaPoint) -> Result<f64, ClassifierError> {
    if beta <= 0.0 {
        Ok(0.0)
    } else {
        predict(model, point)
    }
}

struct TrainJob {
    granularity: Granularity,
    set: TrainingSet,
    excluded: usize,
}

fn positives_for(
    points: &[DeltaPoint],
    artifact: &ClusterArtifact,
    clusters: &[usize],
    excluded_keys: &HashSet<AggregateKey>,
) -> (Vec<usize>, usize) {
    let mut positives: Vec<usize> = clusters.iter().flat_map(|&c| artifact.members_of(c)).collect();
    positives.sort_unstable();
    positives.dedup();
    let before = positives.len();
    positives.retain(|&i| !excluded_keys.contains(&points[i].key));
    let excluded = before - positives.len();
    (positives, excluded)
}

/// Trains every job on its own thread; each model only depends on its own
/// job and the seeds, so the result is deterministic.
fn train_all(jobs: &[TrainJob], config: &NetworkConfig) -> Vec<Result<TrainedModel, ClassifierError>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|job| s.spawn(move || train(&job.set, config, job.granularity)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}

/// Runs the full batch and persists every artifact under a new run id.
///
/// Any stage failure aborts the run; artifacts already written stay on disk
/// and the failure is logged to the run's knowledge log.
pub fn run_batch(
    store: &RunStore,
    records: &[RawTransactionRecord],
    profile: &BatchProfile,
) -> Result<String, PipelineError> {
    profile.validate()?;
    let _writer = store.lock_writer();

    let mut canonical = Vec::new();
    write_transactions(&mut canonical, records)?;
    let input_fingerprint = sha256_hex(&canonical);
    let as_of = profile
        .as_of
        .or_else(|| records.iter().map(|r| r.date).max())
        .unwrap_or(Day::from_days_since_epoch(0));
    let stem = format!(
        "run-{}-{}",
        chrono::Utc::now().format("%Y%m%dT%H%M%S"),
        &input_fingerprint[..8]
    );
    let (run_id, dir) = store.create_run_dir(&stem)?;
    store::write_atomic(&dir.join("transactions.csv"), &canonical)?;
    store.write_config(
        &dir,
        &RunConfig {
            run_id: run_id.clone(),
            profile: profile.clone(),
            input_fingerprint: input_fingerprint.clone(),
            record_count: records.len(),
            as_of,
            started_at: store::now_rfc3339(),
        },
    )?;
    store.append_knowledge(
        &run_id,
        KnowledgeEvent::RunStarted {
            profile: profile.clone(),
            input_fingerprint,
            records: records.len(),
        },
    )?;

    match execute_batch(store, &run_id, records, profile, as_of) {
        Ok(model_fingerprints) => {
            store.append_knowledge(&run_id, KnowledgeEvent::RunCompleted { model_fingerprints })?;
            log::info!("run {run_id} completed");
            Ok(run_id)
        }
        Err(e) => {
            let (stage, granularity) = match &e {
                PipelineError::Stage { stage, granularity, .. } => (*stage, *granularity),
                _ => (Stage::Persist, None),
            };
            store.append_knowledge(
                &run_id,
                KnowledgeEvent::StageFailed {
                    stage,
                    granularity,
                    message: e.to_string(),
                },
            )?;
            Err(e)
        }
    }
}

fn execute_batch(
    store: &RunStore,
    run_id: &str,
    records: &[RawTransactionRecord],
    profile: &BatchProfile,
    as_of: Day,
) -> Result<BTreeMap<Granularity, String>, PipelineError> {
    let dir = store.run_dir(run_id);
    let mut jobs = Vec::new();

    for &g in &profile.granularities {
        let aggregates = bucketize(records, g);
        if aggregates.is_empty() {
            return Err(stage_err(run_id, Stage::Bucketize, Some(g), "no aggregates"));
        }
        let points = compute_points(&aggregates, profile.lookback_k);
        let mask = screen_mask(&points, &profile.thresholds);

        let mut csv = Vec::new();
        write_points_csv(&mut csv, &aggregates, &points, Some(&mask))
            .map_err(|e| stage_err(run_id, Stage::Persist, Some(g), e))?;
        store::write_atomic(&dir.join("points").join(format!("{g}.csv")), &csv)?;

        let members: Vec<usize> = (0..points.len()).filter(|&i| mask[i]).collect();
        store.append_knowledge(
            run_id,
            KnowledgeEvent::Screened {
                granularity: g,
                thresholds: profile.thresholds,
                points: points.len(),
                screened: members.len(),
            },
        )?;

        let coords: Vec<[f64; 2]> = members.iter().map(|&i| points[i].coords()).collect();
        let result = kmeans(&coords, &profile.clustering)
            .map_err(|e| stage_err(run_id, Stage::Cluster, Some(g), e))?;
        let summary = ClusteringSummary::new(&result, &profile.clustering);
        let suspicious_clusters = profile
            .suspicious_overrides
            .get(&g)
            .cloned()
            .unwrap_or_else(|| vec![summary.ranking[0]]);
        let artifact = ClusterArtifact {
            granularity: g,
            summary: summary.clone(),
            members,
            assignments: result.assignments,
            suspicious_clusters,
        };
        store.write_clusters(&dir, &artifact)?;
        store.append_knowledge(run_id, KnowledgeEvent::Clustered { granularity: g, summary })?;

        let (positives, excluded) =
            positives_for(&points, &artifact, &artifact.suspicious_clusters, &HashSet::new());
        let set = build_training_set_from(&points, &positives, &profile.sampling)
            .map_err(|e| stage_err(run_id, Stage::Train, Some(g), e))?;
        jobs.push(TrainJob { granularity: g, set, excluded });
    }

    persist_models(store, run_id, profile, as_of, &jobs)
}

fn persist_models(
    store: &RunStore,
    run_id: &str,
    profile: &BatchProfile,
    as_of: Day,
    jobs: &[TrainJob],
) -> Result<BTreeMap<Granularity, String>, PipelineError> {
    let dir = store.run_dir(run_id);
    let mut fingerprints = BTreeMap::new();
    for (job, model) in jobs.iter().zip(train_all(jobs, &profile.network)) {
        let g = job.granularity;
        let mut model = model.map_err(|e| stage_err(run_id, Stage::Train, Some(g), e))?;
        model.created_at = as_of.to_string();
        store.write_model(&dir, &model)?;
        let fingerprint = model.fingerprint();
        store.append_knowledge(
            run_id,
            KnowledgeEvent::ModelTrained {
                granularity: g,
                model_fingerprint: fingerprint.clone(),
                training_set_fingerprint: model.training_set_fingerprint.clone(),
                positives: job.set.positives.len(),
                negatives: job.set.negatives.len(),
                excluded_positives: job.excluded,
                final_loss: model.final_loss,
            },
        )?;
        fingerprints.insert(g, fingerprint);
    }
    Ok(fingerprints)
}

/// Records an expert label for one cluster.
pub fn label_cluster(
    store: &RunStore,
    run_id: &str,
    g: Granularity,
    cluster: usize,
    label: ClusterLabel,
) -> Result<KnowledgeRecord, PipelineError> {
    let artifact = store.clusters(run_id, g)?;
    if cluster >= artifact.summary.centroids.len() {
        return Err(PipelineError::NotFound(format!("cluster {cluster} at {g}")));
    }
    let _writer = store.lock_writer();
    store.append_knowledge(run_id, KnowledgeEvent::ClusterLabeled { granularity: g, cluster, label })
}

/// Clusters used as positives given the expert labels: every cluster
/// labeled suspicious, or failing that the best-ranked cluster not labeled
/// normal.
pub fn suspicious_clusters(
    artifact: &ClusterArtifact,
    labels: &BTreeMap<usize, ClusterLabel>,
) -> Option<Vec<usize>> {
    let marked: Vec<usize> = labels
        .iter()
        .filter(|(_, &l)| l == ClusterLabel::Suspicious)
        .map(|(&c, _)| c)
        .collect();
    if !marked.is_empty() {
        return Some(marked);
    }
    artifact
        .summary
        .ranking
        .iter()
        .find(|c| labels.get(c) != Some(&ClusterLabel::Normal))
        .map(|&c| vec![c])
}

/// Retrains every granularity from the current labels, leaving out
/// positives that analysts disposed as exchanges. Returns the new model
/// fingerprints.
pub fn retrain(store: &RunStore, run_id: &str) -> Result<BTreeMap<Granularity, String>, PipelineError> {
    let config = store.config(run_id)?;
    let profile = &config.profile;
    let _writer = store.lock_writer();

    let exchange_cases: Vec<ScoredCase> = store
        .cases(run_id)?
        .into_iter()
        .filter(|c| c.disposition == Disposition::Exchange)
        .collect();

    let mut jobs = Vec::new();
    for &g in &profile.granularities {
        let rows = store.points(run_id, g)?;
        let points: Vec<DeltaPoint> = rows.iter().map(|r| r.point.clone()).collect();
        let artifact = store.clusters(run_id, g)?;
        let labels = store.cluster_labels(run_id, g)?;
        let clusters = suspicious_clusters(&artifact, &labels)
            .ok_or_else(|| PipelineError::Invalid(format!("every {g} cluster is labeled normal")))?;
        let excluded_keys: HashSet<AggregateKey> = exchange_cases
            .iter()
            .map(|c| AggregateKey {
                customer_id: c.customer_id.clone(),
                fund_id: c.fund_id.clone(),
                granularity: g,
                period_index: g.period_index(c.as_of_date),
            })
            .collect();
        let (positives, excluded) = positives_for(&points, &artifact, &clusters, &excluded_keys);
        let set = build_training_set_from(&points, &positives, &profile.sampling)?;
        jobs.push(TrainJob { granularity: g, set, excluded });
    }
    persist_models(store, run_id, profile, config.as_of, &jobs)
}

/// Scores one customer × fund at `date` on every requested level without
/// persisting anything.
pub fn score_case(data: &RunData, models: &BTreeMap<Granularity, TrainedModel>, req: &InvestigateRequest) -> Result<ScoredCase, PipelineError> {
    let profile = &data.config.profile;
    let mine: Vec<&RawTransactionRecord> = data
        .records
        .iter()
        .filter(|r| r.customer_id == req.customer_id)
        .collect();
    if mine.is_empty() {
        return Err(PipelineError::NotFound(format!("customer {}", req.customer_id)));
    }
    let fund_id = match &req.fund_id {
        Some(f) => f.clone(),
        None => {
            let funds: BTreeSet<&str> = mine.iter().map(|r| r.fund_id.as_str()).collect();
            if funds.len() > 1 {
                return Err(PipelineError::Invalid(format!(
                    "customer {} holds {} funds; specify one",
                    req.customer_id,
                    funds.len()
                )));
            }
            funds.into_iter().next().expect("non-empty").to_string()
        }
    };
    let series: Vec<RawTransactionRecord> = mine
        .into_iter()
        .filter(|r| r.fund_id == fund_id)
        .cloned()
        .collect();
    if series.is_empty() {
        return Err(PipelineError::NotFound(format!(
            "fund {fund_id} for customer {}",
            req.customer_id
        )));
    }

    let levels = req.granularities.clone().unwrap_or_else(|| profile.investigation.clone());
    let mut degrees = BTreeMap::new();
    let mut deltas = BTreeMap::new();
    for g in levels {
        let model = models
            .get(&g)
            .ok_or_else(|| PipelineError::NotFound(format!("{g} model of run {}", data.config.run_id)))?;
        let aggregates = bucketize(&series, g);
        let period = g.period_index(req.date);
        let Ok(pos) = aggregates.binary_search_by_key(&period, |a| a.key.period_index) else {
            continue;
        };
        let points = compute_points(&aggregates, profile.lookback_k);
        let point = &points[pos];
        degrees.insert(g, degree_for(model, aggregates[pos].beta, point)?);
        deltas.insert(g, point.coords());
    }
    let (alert_level, rationale) = combine_alert(&degrees, &profile.alert);
    Ok(ScoredCase {
        case_id: String::new(),
        run_id: data.config.run_id.clone(),
        customer_id: req.customer_id.clone(),
        fund_id,
        as_of_date: req.date,
        degrees,
        deltas,
        alert_level,
        rationale,
        disposition: Disposition::Open,
        note: None,
        disposition_at: None,
        excluded_from_training: false,
    })
}

/// Loads the models for the requested levels (or the run's investigation profile).
pub fn load_models(
    store: &RunStore,
    run_id: &str,
    levels: &[Granularity],
) -> Result<BTreeMap<Granularity, TrainedModel>, PipelineError> {
    levels
        .iter()
        .map(|&g| store.model(run_id, g).map(|m| (g, m)))
        .collect()
}

/// Scores a customer and stores the result as a new open case.
pub fn investigate(store: &RunStore, run_id: &str, req: &InvestigateRequest) -> Result<ScoredCase, PipelineError> {
    let data = store.run_data(run_id)?;
    let levels = req
        .granularities
        .clone()
        .unwrap_or_else(|| data.config.profile.investigation.clone());
    let models = load_models(store, run_id, &levels)?;
    let mut case = score_case(&data, &models, req)?;

    let _writer = store.lock_writer();
    case.case_id = store.next_case_id(run_id)?;
    store.append_case(run_id, &case)?;
    store.append_knowledge(
        run_id,
        KnowledgeEvent::CaseScored {
            case_id: case.case_id.clone(),
            case: case.clone(),
        },
    )?;
    Ok(case)
}

/// Stores the analyst's verdict as a new version of the case.
pub fn record_disposition(
    store: &RunStore,
    run_id: &str,
    case_id: &str,
    disposition: Disposition,
    note: Option<String>,
) -> Result<ScoredCase, PipelineError> {
    let _writer = store.lock_writer();
    let mut case = store.case(run_id, case_id)?;
    case.disposition = disposition;
    case.note = note.clone();
    case.disposition_at = Some(store::now_rfc3339());
    case.excluded_from_training = disposition == Disposition::Exchange;
    store.append_case(run_id, &case)?;
    store.append_knowledge(
        run_id,
        KnowledgeEvent::DispositionRecorded {
            case_id: case_id.to_string(),
            disposition,
            note,
        },
    )?;
    Ok(case)
}

/// Transactions behind a case: the coarsest scored period plus its lookback.
pub fn case_timeline(store: &RunStore, case: &ScoredCase) -> Result<Vec<RawTransactionRecord>, PipelineError> {
    let data = store.run_data(&case.run_id)?;
    let profile = &data.config.profile;
    let g = case
        .degrees
        .keys()
        .chain(profile.investigation.iter())
        .max()
        .copied()
        .unwrap_or(Granularity::Day);
    let p = g.period_index(case.as_of_date);
    let from = g.period_start(p - i64::from(profile.lookback_k));
    let to = g.period_end(p);
    Ok(data
        .records
        .iter()
        .filter(|r| r.customer_id == case.customer_id && r.fund_id == case.fund_id)
        .filter(|r| r.date >= from && r.date <= to)
        .cloned()
        .collect())
}

/// One scored customer-period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPoint {
    #[serde(flatten)]
    pub key: AggregateKey,
    pub period_start: Day,
    pub delta1: f64,
    pub delta2: f64,
    pub degree: f64,
    pub screened: bool,
}

/// Scores every stored point at the given levels, highest degree first.
pub fn score_all(store: &RunStore, run_id: &str, levels: &[Granularity]) -> Result<Vec<ScoredPoint>, PipelineError> {
    let mut out = Vec::new();
    for &g in levels {
        let model = store.model(run_id, g)?;
        let rows = store.points(run_id, g)?;
        for row in rows.iter() {
            out.push(ScoredPoint {
                key: row.point.key.clone(),
                period_start: row.point.key.period_start(),
                delta1: row.point.delta1,
                delta2: row.point.delta2,
                degree: degree_for(&model, row.aggregate.beta, &row.point)?,
                screened: row.screened.unwrap_or(false),
            });
        }
    }
    out.sort_by(|a, b| b.degree.total_cmp(&a.degree).then_with(|| a.key.cmp(&b.key)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerScore {
    pub customer_id: String,
    pub fund_id: String,
    pub granularity: Granularity,
    pub period_start: Day,
    pub degree: f64,
}

/// Customers ordered by their highest-scoring period.
pub fn rank_customers(ranked_points: &[ScoredPoint]) -> Vec<CustomerScore> {
    let mut seen = HashSet::new();
    ranked_points
        .iter()
        .filter(|p| seen.insert(p.key.customer_id.as_str()))
        .map(|p| CustomerScore {
            customer_id: p.key.customer_id.clone(),
            fund_id: p.key.fund_id.clone(),
            granularity: p.key.granularity,
            period_start: p.period_start,
            degree: p.degree,
        })
        .collect()
}

pub fn write_scored_csv<W: io::Write>(sink: W, ranked: &[ScoredPoint]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "rank", "customer_id", "fund_id", "granularity", "period_index", "period_start", "delta1", "delta2", "degree",
    ])?;
    for (i, p) in ranked.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            p.key.customer_id.clone(),
            p.key.fund_id.clone(),
            p.key.granularity.to_string(),
            p.key.period_index.to_string(),
            p.period_start.to_string(),
            p.delta1.to_string(),
            p.delta2.to_string(),
            p.degree.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
