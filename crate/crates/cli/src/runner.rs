//! Pipeline stages over an experiment plan: representations, soft labels, training and
//! reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use softts_core::dataset::load_ucr_dataset;
use softts_core::reporting::figures::{scatter_svg, write_figure};
use softts_core::reporting::tsne::embedding_csv;
use softts_core::reporting::{
    accuracy_matrix, aggregate_table, critical_difference, emit_figure, ranks_csv, Figure, RankReport,
    ReportError, ScatterPlot, TsneConfig, TsnePanel,
};
use softts_core::representation::{encode, load_representations, save_representations};
use softts_core::results::{CellKey, ResultsStore};
use softts_core::softlabel::{build_soft_labels, load_cache, save_cache, validate_criteria};
use softts_core::{EncoderSpec, ExperimentResult, LabeledDataset, Method, SoftLabelMatrix};
use softts_nn::{run_experiment, Classifier};

use crate::plan::{dataset_encoder, ExperimentPlan, Layout, MethodEntry, ModelEntry};

type Splits = Arc<(LabeledDataset, LabeledDataset)>;

/// A plan bound to its resolved datasets and artifact layout.
pub struct Pipeline {
    pub plan: ExperimentPlan,
    pub datasets: Vec<String>,
    pub layout: Layout,
    /// Reuse existing representation and soft-label files instead of recomputing them.
    pub resume: bool,
    splits: Mutex<BTreeMap<String, Splits>>,
}

/// One (dataset, model, method, seed) training run.
#[derive(Debug, Clone)]
pub struct Cell {
    pub dataset: String,
    pub model: ModelEntry,
    pub method: MethodEntry,
    pub seed: u64,
}

impl Cell {
    pub fn key(&self) -> CellKey {
        CellKey {
            dataset: self.dataset.clone(),
            model: self.model.preset.to_string(),
            method: self.method.label.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Default)]
pub struct TrainSummary {
    pub skipped: usize,
    pub completed: usize,
    pub diverged: Vec<String>,
    pub failed: Vec<(String, String)>,
}

#[derive(Debug, Default)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    pub notices: Vec<String>,
}

fn cell_label(k: &CellKey) -> String {
    format!("{}/{}/{}/seed{}", k.dataset, k.model, k.method, k.seed)
}

impl Pipeline {
    /// Resolves datasets up front, so an unknown name fails before any work starts.
    pub fn new(plan: ExperimentPlan, resume: bool) -> Result<Self> {
        let datasets = plan.dataset_names()?;
        let layout = Layout::new(&plan.output_dir);
        Ok(Self {
            plan,
            datasets,
            layout,
            resume,
            splits: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn splits(&self, dataset: &str) -> Result<Splits> {
        if let Some(s) = self.splits.lock().unwrap().get(dataset) {
            return Ok(s.clone());
        }
        let dir = self.plan.data.archive_root.join(dataset);
        let loaded = Arc::new(
            load_ucr_dataset(&dir, self.plan.data.normalize)
                .with_context(|| format!("loading {}", dir.display()))?,
        );
        self.splits
            .lock()
            .unwrap()
            .insert(dataset.to_owned(), loaded.clone());
        Ok(loaded)
    }

    /// (dataset, encoder) pairs needed by the `ss` entries.
    fn encoder_jobs(&self) -> Vec<(String, EncoderSpec)> {
        let encoders = self.plan.soft_label_encoders();
        self.datasets
            .iter()
            .flat_map(|d| encoders.iter().map(move |e| (d.clone(), dataset_encoder(e, d))))
            .collect()
    }

    fn representation_file(&self, dataset: &str, encoder: &EncoderSpec) -> Result<PathBuf> {
        let path = self.layout.representations(dataset, encoder);
        if self.resume && path.is_file() {
            return Ok(path);
        }
        let splits = self.splits(dataset)?;
        let reps = encode(&splits.0, encoder)
            .with_context(|| format!("encoding {dataset} with {}", encoder.key()))?;
        create_parent(&path)?;
        save_representations(&reps, &path)?;
        Ok(path)
    }

    /// Writes the training-split representations of every dataset for every encoder.
    pub fn encode(&self) -> Result<Vec<PathBuf>> {
        self.encoder_jobs()
            .iter()
            .map(|(d, e)| self.representation_file(d, e))
            .collect()
    }

    fn soft_label_file(&self, dataset: &str, encoder: &EncoderSpec, reuse: bool) -> Result<PathBuf> {
        let cfg = &self.plan.softlabel;
        let path = self.layout.soft_labels(dataset, encoder, cfg.gamma);
        if reuse && path.is_file() {
            return Ok(path);
        }
        let reps = load_representations(self.representation_file(dataset, encoder)?)?;
        let splits = self.splits(dataset)?;
        let train = &splits.0;
        let soft = build_soft_labels(&reps, &train.labels, train.num_classes(), cfg)
            .with_context(|| format!("soft labels for {dataset}"))?;
        let report = validate_criteria(&soft, &train.labels);
        if !report.is_clean() {
            eprintln!(
                "note: {dataset} ({}): {} rows without a strict own-class argmax, {} rows out of distance order",
                encoder.key(),
                report.non_strict_argmax.len(),
                report.non_monotone.len()
            );
        }
        create_parent(&path)?;
        save_cache(&soft, &path)?;
        Ok(path)
    }

    /// Writes soft-label caches, computing missing representations on the way.
    pub fn labels(&self) -> Result<Vec<PathBuf>> {
        self.encoder_jobs()
            .iter()
            .map(|(d, e)| self.soft_label_file(d, e, self.resume))
            .collect()
    }

    /// Soft-label caches for training; existing files are kept.
    fn ensure_labels(&self) -> Result<()> {
        for (d, e) in self.encoder_jobs() {
            self.soft_label_file(&d, &e, true)?;
        }
        Ok(())
    }

    /// Every cell of the plan, dataset-major.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for d in &self.datasets {
            for model in &self.plan.models {
                for method in &self.plan.methods {
                    for &seed in &self.plan.train.seeds {
                        out.push(Cell {
                            dataset: d.clone(),
                            model: model.clone(),
                            method: method.clone(),
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    fn run_cell(&self, cell: &Cell) -> Result<ExperimentResult> {
        let splits = self.splits(&cell.dataset)?;
        let (train, test) = (&splits.0, &splits.1);
        let spec = self
            .plan
            .model_spec(&cell.model, train.num_classes(), train.series_length(), cell.seed);
        let method_cfg = cell.method.resolve(cell.model.preset);
        let mut encoder_key = None;
        let soft: Option<SoftLabelMatrix> = if cell.method.method == Method::Ss {
            let enc = dataset_encoder(self.plan.encoder_for(&cell.method), &cell.dataset);
            encoder_key = Some(enc.key());
            let path = self.layout.soft_labels(&cell.dataset, &enc, self.plan.softlabel.gamma);
            Some(load_cache(&path).with_context(|| format!("reading {}", path.display()))?)
        } else {
            None
        };
        let config = self.plan.train.config(cell.seed);
        let exp = run_experiment(train, test, &spec, &method_cfg, &config, soft.as_ref())?;
        let checkpoint = self.layout.checkpoint(
            &cell.model.preset.to_string(),
            &cell.dataset,
            &cell.method.label,
            cell.seed,
        );
        create_parent(&checkpoint)?;
        exp.model.save(&checkpoint)?;
        let mut result = exp.result;
        result.method = cell.method.label.clone();
        result.encoder = encoder_key;
        Ok(result)
    }

    /// Trains every cell without a record. `workers` threads pull cells from a shared
    /// queue; records are appended as cells finish.
    pub fn train(&self, workers: usize) -> Result<TrainSummary> {
        let store = ResultsStore::new(self.layout.results());
        let existing = store.load()?;
        if !existing.skipped_lines.is_empty() {
            eprintln!(
                "note: ignoring unreadable lines {:?} in {}",
                existing.skipped_lines,
                store.path().display()
            );
        }
        let done: BTreeSet<CellKey> = existing.records.iter().map(|r| r.key()).collect();
        if !self.resume && !done.is_empty() {
            bail!(
                "{} already holds {} records; pass --resume to continue or choose another output_dir",
                store.path().display(),
                done.len()
            );
        }
        self.ensure_labels()?;
        let all = self.cells();
        let pending: Vec<Cell> = all.iter().filter(|c| !done.contains(&c.key())).cloned().collect();
        let summary = Mutex::new(TrainSummary {
            skipped: all.len() - pending.len(),
            ..TrainSummary::default()
        });
        let next = AtomicUsize::new(0);
        let total = pending.len();
        std::thread::scope(|scope| {
            for _ in 0..workers.max(1).min(total.max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(cell) = pending.get(i) else { break };
                    let label = cell_label(&cell.key());
                    match self.run_cell(cell) {
                        Ok(record) => {
                            let appended = store.append(&record);
                            let mut s = summary.lock().unwrap();
                            if let Err(e) = appended {
                                s.failed.push((label, format!("writing record: {e}")));
                                continue;
                            }
                            eprintln!(
                                "[{}/{total}] {label}: best {:.4} in {:.1}s",
                                i + 1,
                                record.best_accuracy,
                                record.wall_time
                            );
                            s.completed += 1;
                            if let Some(msg) = &record.message {
                                s.diverged.push(format!("{label}: {msg}"));
                            }
                        }
                        Err(e) => {
                            eprintln!("[{}/{total}] {label}: failed: {e:#}", i + 1);
                            summary.lock().unwrap().failed.push((label, format!("{e:#}")));
                        }
                    }
                });
            }
        });
        let mut summary = summary.into_inner().unwrap();
        summary.failed.sort();
        Ok(summary)
    }

    fn model_names(&self) -> Vec<String> {
        self.plan.models.iter().map(|m| m.preset.to_string()).collect()
    }

    /// Records belonging to this plan's matrix, ordered by cell.
    pub fn plan_records(&self) -> Result<Vec<ExperimentResult>> {
        let store = ResultsStore::new(self.layout.results());
        let wanted: BTreeSet<CellKey> = self.cells().iter().map(Cell::key).collect();
        let mut records: Vec<ExperimentResult> = store
            .load()?
            .records
            .into_iter()
            .filter(|r| wanted.contains(&r.key()))
            .collect();
        records.sort_by_key(|r| r.key());
        records.dedup_by_key(|r| r.key());
        Ok(records)
    }

    /// Table, ranks, critical-difference diagram, scatter plots and requested t-SNE maps.
    pub fn report(&self) -> Result<ReportSummary> {
        let records = self.plan_records()?;
        if records.is_empty() {
            bail!("no results in {} for this plan", self.layout.results().display());
        }
        let dir = self.layout.report_dir();
        fs::create_dir_all(&dir)?;
        let mut summary = ReportSummary::default();
        let models = self.model_names();

        let table = aggregate_table(&records, Some(&models))?;
        let path = dir.join("table.csv");
        write_text(&path, &table.to_csv())?;
        summary.files.push(path);

        let mut reports: Vec<(String, RankReport)> = Vec::new();
        for model in &models {
            match critical_difference(&records, model, self.plan.report.alpha) {
                Ok(r) => reports.push((model.clone(), r)),
                Err(e @ (ReportError::TooFewDatasets(_) | ReportError::TooFewMethods(_))) => {
                    summary.notices.push(format!("skipping rank analysis for {model}: {e}"))
                }
                Err(e) => return Err(e.into()),
            }
        }
        if reports.is_empty() {
            summary
                .notices
                .push("no critical-difference diagram: no model has enough datasets and methods".into());
        } else {
            let path = dir.join("ranks.csv");
            write_text(&path, &ranks_csv(&reports))?;
            summary.files.push(path);
            let path = dir.join("cd_diagram.svg");
            emit_figure(Figure::CdDiagram(&reports), &path)?;
            summary.files.push(path);
        }

        let [x_method, y_method] = &self.plan.report.scatter;
        for model in &models {
            let matrix = accuracy_matrix(&records, model)?;
            let (Some(xs), Some(ys)) = (matrix.column(x_method), matrix.column(y_method)) else {
                summary.notices.push(format!(
                    "no scatter plot for {model}: needs methods {x_method} and {y_method}"
                ));
                continue;
            };
            let plot = ScatterPlot {
                title: model.clone(),
                x_label: x_method.clone(),
                y_label: y_method.clone(),
                points: matrix
                    .datasets
                    .iter()
                    .zip(xs.into_iter().zip(ys))
                    .map(|(d, (x, y))| (d.clone(), x, y))
                    .collect(),
            };
            let svg = dir.join(format!("scatter_{model}.svg"));
            write_figure(&svg, &scatter_svg(&plot))?;
            let csv = dir.join(format!("scatter_{model}.csv"));
            write_text(&csv, &plot.to_csv())?;
            summary.files.extend([svg, csv]);
        }

        for req in &self.plan.report.tsne {
            let files = self.tsne_figure(req, &dir)?;
            summary.files.extend(files);
        }
        Ok(summary)
    }

    /// Penultimate features of the test split under each requested method's checkpoint.
    fn tsne_figure(&self, req: &crate::plan::TsneRequest, dir: &Path) -> Result<Vec<PathBuf>> {
        let model_name = req.model.to_string();
        let entry = self
            .plan
            .models
            .iter()
            .find(|m| m.preset == req.model)
            .cloned()
            .unwrap_or(ModelEntry {
                preset: req.model,
                base_channels: None,
            });
        if !self.datasets.contains(&req.dataset) {
            bail!("t-SNE request names dataset {} outside the plan", req.dataset);
        }
        let splits = self.splits(&req.dataset)?;
        let (train, test) = (&splits.0, &splits.1);
        let spec = self
            .plan
            .model_spec(&entry, train.num_classes(), train.series_length(), req.seed);
        let config = TsneConfig {
            perplexity: req.perplexity,
            seed: req.seed,
            ..TsneConfig::default()
        };
        let mut panels = Vec::new();
        let mut csv = String::from("method,x,y,label\n");
        for method in &req.methods {
            let path = self.layout.checkpoint(&model_name, &req.dataset, method, req.seed);
            let model = Classifier::load(&spec, &path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            let (_, features) = model.forward(&test.samples)?;
            let coords = softts_core::reporting::tsne_embed(&features, &config)?;
            let part = embedding_csv(&coords, &test.labels, Some(("method", method)));
            csv.extend(part.lines().skip(1).map(|l| format!("{l}\n")));
            panels.push(TsnePanel {
                title: method.clone(),
                coords,
                labels: test.labels.clone(),
            });
        }
        let stem = format!("tsne_{model_name}_{}", req.dataset);
        let csv_path = dir.join(format!("{stem}.csv"));
        write_text(&csv_path, &csv)?;
        let svg_path = dir.join(format!("{stem}.svg"));
        let names: Vec<String> = train.label_map.tokens().to_vec();
        emit_figure(Figure::TsnePlot(&panels, &names), &svg_path)?;
        Ok(vec![csv_path, svg_path])
    }
}

/// Training-split representations of one dataset directory.
pub fn encode_dataset(dir: &Path, encoder: &EncoderSpec, normalize: bool, out: &Path) -> Result<()> {
    let (train, _) =
        load_ucr_dataset(dir, normalize).with_context(|| format!("loading {}", dir.display()))?;
    let reps = encode(&train, encoder)?;
    create_parent(out)?;
    save_representations(&reps, out)?;
    Ok(())
}

/// Soft labels of one dataset's training split from a representation file.
pub fn label_dataset(
    reps: &Path,
    dir: &Path,
    config: &softts_core::SoftLabelConfig,
    normalize: bool,
    out: &Path,
) -> Result<softts_core::softlabel::ValidationReport> {
    let (train, _) =
        load_ucr_dataset(dir, normalize).with_context(|| format!("loading {}", dir.display()))?;
    let reps = load_representations(reps)?;
    let soft = build_soft_labels(&reps, &train.labels, train.num_classes(), config)?;
    create_parent(out)?;
    save_cache(&soft, out)?;
    Ok(validate_criteria(&soft, &train.labels))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
