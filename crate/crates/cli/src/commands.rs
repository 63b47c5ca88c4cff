//! The five subcommands as library functions, so tests can drive them
//! without a process boundary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gem_core::baselines::{
    fit_layer_gaussians, youden_threshold, BestLayer, Entropy, LastLayer, Method, OodScorer, TopK,
    TvScorer,
};
use gem_core::data::{
    read_candidates, read_embeddings, read_layer_traces, CandidateSet, EmbeddingSet, Label,
    LayerTrace,
};
use gem_core::detector::{bic_rows, centroid, distances, fit_detector, route, GemDetector, Route};
use gem_core::gmm::BicSweep;
use gem_core::metrics::{roc_curve, scored, EvalReport, RocCurve, ScoredSample};
use gem_core::GemError;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const ABLATE_MAX_COMPONENTS_CSV: &str = "ablate_max_components.csv";
pub const ABLATE_SIGMA_CSV: &str = "ablate_sigma.csv";
/// Sigma multipliers swept by `ablate`.
pub const ABLATE_SIGMAS: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

fn require_gem(cfg: &RunConfig, command: &str) -> Result<()> {
    if cfg.method == Method::Gem {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{command} only supports method gem (got {})",
            cfg.method
        )))
    }
}

/// Fits a GEM detector on `--train` and writes it to `--out`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<GemDetector> {
    require_gem(cfg, "fit")?;
    let train = read_embeddings(cfg.require(&cfg.train, "train")?)?;
    let out = cfg.require(&cfg.out, "out")?;
    let detector = fit_detector(&train, &cfg.fit, cfg.sigma())?;
    detector.save(out)?;
    Ok(detector)
}

pub fn render_fit(det: &GemDetector, format: crate::config::Format) -> Result<String> {
    use crate::config::Format;
    let m_star = det.model().n_components();
    Ok(match format {
        Format::Json => det.to_json()? + "\n",
        Format::Csv => {
            let mut s = String::from("m,log_likelihood,bic,selected\n");
            for r in det.bic_sweep() {
                let _ = writeln!(s, "{},{},{},{}", r.m, r.log_likelihood, r.bic, r.m == m_star);
            }
            s
        }
        Format::Table => {
            let mut s = format!("m* = {m_star}  (n_sigma {})\n\nBIC sweep\n", det.n_sigma());
            let _ = writeln!(s, "{:>4} {:>20} {:>20}", "m", "log-likelihood", "BIC");
            for r in det.bic_sweep() {
                let mark = if r.m == m_star { "  <" } else { "" };
                let _ = writeln!(s, "{:>4} {:>20.6} {:>20.6}{mark}", r.m, r.log_likelihood, r.bic);
            }
            let _ = writeln!(s, "\nComponents");
            let _ = writeln!(s, "{:>4} {:>12} {:>16} {:>16}", "j", "weight", "mean", "std");
            for (j, c) in det.model().components.iter().enumerate() {
                let _ = writeln!(s, "{:>4} {:>12.6} {:>16.6} {:>16.6}", j + 1, c.weight, c.mean, c.std);
            }
            s
        }
    })
}

/// One scored input line of `detect`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectLine {
    pub id: String,
    pub distance: f64,
    pub z: f64,
    pub is_ood: bool,
    pub route: Route,
}

fn load_detector(cfg: &RunConfig, path: &Path) -> Result<GemDetector> {
    let det = GemDetector::load(path)?;
    Ok(match cfg.n_sigma {
        Some(n) => det.with_n_sigma(n)?,
        None => det,
    })
}

/// Scores `--input` with the detector in `--detector`, in input order.
pub fn cmd_detect(cfg: &RunConfig) -> Result<Vec<DetectLine>> {
    require_gem(cfg, "detect")?;
    let det = load_detector(cfg, cfg.require(&cfg.detector, "detector")?)?;
    let input = read_embeddings(cfg.require(&cfg.input, "input")?)?;
    let verdicts = det.detect_batch(&input)?;
    Ok(input
        .sample_ids()
        .iter()
        .zip(verdicts)
        .map(|(id, v)| DetectLine {
            id: id.clone(),
            distance: v.distance,
            z: v.z,
            is_ood: v.is_ood,
            route: route(&v),
        })
        .collect())
}

pub fn render_detect(lines: &[DetectLine], format: crate::config::Format) -> Result<String> {
    use crate::config::Format;
    let route_name = |r: Route| match r {
        Route::Local => "LOCAL",
        Route::Fallback => "FALLBACK",
    };
    let mut s = String::new();
    match format {
        Format::Json => {
            for l in lines {
                s.push_str(&serde_json::to_string(l).map_err(GemError::from)?);
                s.push('\n');
            }
        }
        Format::Csv => {
            s.push_str("id,distance,z,is_ood,route\n");
            for l in lines {
                let _ = writeln!(s, "{},{},{},{},{}", l.id, l.distance, l.z, l.is_ood, route_name(l.route));
            }
        }
        Format::Table => {
            let _ = writeln!(s, "{:<16} {:>16} {:>12} {:>7} {:>9}", "id", "distance", "z", "is_ood", "route");
            for l in lines {
                let _ = writeln!(
                    s,
                    "{:<16} {:>16.6} {:>12.4} {:>7} {:>9}",
                    l.id,
                    l.distance,
                    l.z,
                    l.is_ood,
                    route_name(l.route)
                );
            }
        }
    }
    Ok(s)
}

/// Scores for the ID and OOD test splits plus the flags the method raised.
#[derive(Debug, Clone)]
pub struct Scoring {
    pub samples: Vec<ScoredSample>,
    pub flagged: Vec<bool>,
    /// Youden threshold, for score-based methods.
    pub threshold: Option<f64>,
    /// Sigma boundary, for GEM.
    pub n_sigma: Option<f64>,
    /// 0-based layer chosen by best-layer.
    pub best_layer: Option<usize>,
}

fn traces(path: &Path) -> Result<Vec<LayerTrace>> {
    Ok(read_layer_traces(path)?.traces())
}

fn candidates(path: &Path) -> Result<Vec<CandidateSet>> {
    Ok(read_candidates(path)?.sets)
}

fn gem_detector(cfg: &RunConfig) -> Result<GemDetector> {
    match &cfg.detector {
        Some(path) => load_detector(cfg, path),
        None => {
            let train = read_embeddings(cfg.require(&cfg.train, "train")?)?;
            Ok(fit_detector(&train, &cfg.fit, cfg.sigma())?)
        }
    }
}

fn gem_scoring(det: &GemDetector, id_test: &EmbeddingSet, ood_test: &EmbeddingSet) -> Result<Scoring> {
    let id = det.detect_batch(id_test)?;
    let ood = det.detect_batch(ood_test)?;
    let z = |vs: &[gem_core::detector::Verdict]| vs.iter().map(|v| v.z).collect::<Vec<_>>();
    Ok(Scoring {
        samples: scored(&z(&id), &z(&ood)),
        flagged: id.iter().chain(&ood).map(|v| v.is_ood).collect(),
        threshold: None,
        n_sigma: Some(det.n_sigma()),
        best_layer: None,
    })
}

fn score_both<T, S: OodScorer<T>>(scorer: &S, id: &[T], ood: &[T]) -> Result<Vec<ScoredSample>> {
    Ok(scored(&scorer.score_all(id)?, &scorer.score_all(ood)?))
}

/// Runs the configured method on `--id-test` / `--ood-test`.
pub fn score_splits(cfg: &RunConfig) -> Result<Scoring> {
    let id_path = cfg.require(&cfg.id_test, "id-test")?;
    let ood_path = cfg.require(&cfg.ood_test, "ood-test")?;
    let mut best_layer = None;
    let samples = match cfg.method {
        Method::Gem => {
            let det = gem_detector(cfg)?;
            return gem_scoring(&det, &read_embeddings(id_path)?, &read_embeddings(ood_path)?);
        }
        Method::Tv => {
            let g = fit_layer_gaussians(&traces(cfg.require(&cfg.train, "train")?)?, cfg.lambda)?;
            let scorer = TvScorer::new(&g, cfg.tv_order)?;
            score_both(&scorer, &traces(id_path)?, &traces(ood_path)?)?
        }
        Method::LastLayer => {
            let scorer = LastLayer::fit(&traces(cfg.require(&cfg.train, "train")?)?)?;
            score_both(&scorer, &traces(id_path)?, &traces(ood_path)?)?
        }
        Method::BestLayer => {
            let scorer = BestLayer::fit(
                &traces(cfg.require(&cfg.train, "train")?)?,
                &traces(cfg.require(&cfg.val_id, "val-id")?)?,
                &traces(cfg.require(&cfg.val_ood, "val-ood")?)?,
            )?;
            best_layer = Some(scorer.layer());
            score_both(&scorer, &traces(id_path)?, &traces(ood_path)?)?
        }
        Method::Topk => score_both(&TopK, &candidates(id_path)?, &candidates(ood_path)?)?,
        Method::Entropy => score_both(&Entropy, &candidates(id_path)?, &candidates(ood_path)?)?,
    };
    let youden = youden_threshold(&samples)?;
    Ok(Scoring {
        flagged: samples.iter().map(|s| s.score >= youden.threshold).collect(),
        samples,
        threshold: Some(youden.threshold),
        n_sigma: None,
        best_layer,
    })
}

/// Report printed and written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub report: EvalReport,
    /// 1-based layer number chosen by best-layer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_layer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv_order: Option<usize>,
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalOutput> {
    let s = score_splits(cfg)?;
    let mut report = EvalReport::from_scores(cfg.method.name(), &s.samples, &s.flagged)?;
    report.threshold = s.threshold;
    report.n_sigma = s.n_sigma;
    Ok(EvalOutput {
        report,
        best_layer: s.best_layer.map(|l| l + 1),
        tv_order: (cfg.method == Method::Tv).then_some(cfg.tv_order),
    })
}

const EVAL_CSV_HEADER: &str =
    "method,auroc,fpr95,accuracy,precision,recall,f1,tp,fp,tn,fn,threshold,n_sigma,best_layer";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn render_eval(out: &EvalOutput, format: crate::config::Format) -> Result<String> {
    use crate::config::Format;
    let r = &out.report;
    Ok(match format {
        Format::Json => json_pretty(out)?,
        Format::Csv => {
            let c = &r.confusion;
            format!(
                "{EVAL_CSV_HEADER}\n{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.method,
                r.auroc,
                r.fpr95,
                c.accuracy,
                c.precision,
                c.recall,
                c.f1,
                c.counts.tp,
                c.counts.fp,
                c.counts.tn,
                c.counts.fn_,
                opt(r.threshold),
                opt(r.n_sigma),
                opt(out.best_layer),
            )
        }
        Format::Table => {
            let mut s = format!("{r}\n");
            if let Some(l) = out.best_layer {
                let _ = writeln!(s, "best layer: {l}");
            }
            if let Some(i) = out.tv_order {
                let _ = writeln!(s, "tv order: {i}");
            }
            s
        }
    })
}

pub fn cmd_roc(cfg: &RunConfig) -> Result<RocCurve> {
    Ok(roc_curve(&score_splits(cfg)?.samples)?)
}

/// Metrics of one ablation setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    /// `max_components` or `n_sigma`, depending on the sweep.
    pub setting: f64,
    pub m_star: usize,
    pub auroc: f64,
    pub fpr95: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Fraction of ID test samples kept as ID.
    pub id_retention: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub by_max_components: Vec<AblationRow>,
    pub by_sigma: Vec<AblationRow>,
}

fn ablation_row(
    setting: f64,
    det: &GemDetector,
    id_test: &EmbeddingSet,
    ood_test: &EmbeddingSet,
) -> Result<AblationRow> {
    let s = gem_scoring(det, id_test, ood_test)?;
    let r = EvalReport::from_scores("gem", &s.samples, &s.flagged)?;
    let c = &r.confusion;
    Ok(AblationRow {
        setting,
        m_star: det.model().n_components(),
        auroc: r.auroc,
        fpr95: r.fpr95,
        accuracy: c.accuracy,
        precision: c.precision,
        recall: c.recall,
        f1: c.f1,
        id_retention: c.counts.tn as f64 / r.id_count as f64,
    })
}

/// Sweeps `max_components` over `1..=max_components` at the configured
/// sigma, then sigma over 1..5 at the full component range.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Ablation> {
    require_gem(cfg, "ablate")?;
    let train = read_embeddings(cfg.require(&cfg.train, "train")?)?;
    let id_test = &read_embeddings(cfg.require(&cfg.id_test, "id-test")?)?;
    let ood_test = &read_embeddings(cfg.require(&cfg.ood_test, "ood-test")?)?;
    if let Some(index) = train.labels().iter().position(|l| *l == Label::Ood) {
        return Err(GemError::Sample {
            field: "label",
            index,
            reason: "training rows must not be labelled OOD".into(),
        }
        .into());
    }
    let center = centroid(&train);
    let sweep = BicSweep::run(&distances(&train, &center)?, &cfg.fit)?;
    let rows = bic_rows(&sweep);
    let detector_for = |max: usize, n_sigma: f64| {
        GemDetector::from_parts(center.clone(), sweep.best_up_to(max).clone(), n_sigma, rows.clone())
    };

    let by_max_components = (1..=cfg.fit.max_components)
        .map(|max| ablation_row(max as f64, &detector_for(max, cfg.sigma())?, id_test, ood_test))
        .collect::<Result<Vec<_>>>()?;
    let by_sigma = ABLATE_SIGMAS
        .iter()
        .map(|&n| ablation_row(n, &detector_for(cfg.fit.max_components, n)?, id_test, ood_test))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ablation {
        by_max_components,
        by_sigma,
    })
}

impl Ablation {
    fn csv(rows: &[AblationRow], setting: &str) -> String {
        let mut s = format!("{setting},m_star,auroc,fpr95,accuracy,precision,recall,f1,id_retention\n");
        for r in rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.setting, r.m_star, r.auroc, r.fpr95, r.accuracy, r.precision, r.recall, r.f1, r.id_retention
            );
        }
        s
    }

    pub fn max_components_csv(&self) -> String {
        Self::csv(&self.by_max_components, "max_components")
    }

    pub fn sigma_csv(&self) -> String {
        Self::csv(&self.by_sigma, "n_sigma")
    }

    /// Writes both CSVs into `dir`, creating it if needed; returns their paths.
    pub fn write(&self, dir: &Path) -> Result<[PathBuf; 2]> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let a = dir.join(ABLATE_MAX_COMPONENTS_CSV);
        let b = dir.join(ABLATE_SIGMA_CSV);
        fs::write(&a, self.max_components_csv()).map_err(|e| CliError::io(&a, e))?;
        fs::write(&b, self.sigma_csv()).map_err(|e| CliError::io(&b, e))?;
        Ok([a, b])
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for (title, rows) in [("max_components", &self.by_max_components), ("n_sigma", &self.by_sigma)] {
            let _ = writeln!(
                s,
                "{title:>14} {:>6} {:>9} {:>9} {:>8} {:>9} {:>8} {:>7} {:>9}",
                "m*", "AUROC(%)", "FPR95(%)", "Acc.(%)", "Prec.(%)", "Rec.(%)", "F1(%)", "ID-ret.(%)"
            );
            for r in rows.iter() {
                let _ = writeln!(
                    s,
                    "{:>14} {:>6} {:>9.2} {:>9.2} {:>8.2} {:>9.2} {:>8.2} {:>7.2} {:>9.2}",
                    r.setting,
                    r.m_star,
                    100.0 * r.auroc,
                    100.0 * r.fpr95,
                    100.0 * r.accuracy,
                    100.0 * r.precision,
                    100.0 * r.recall,
                    100.0 * r.f1,
                    100.0 * r.id_retention
                );
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) fn json_pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v).map_err(GemError::from)? + "\n")
}
