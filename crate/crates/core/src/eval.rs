//! Registration metrics and the experiment harness comparing initialization
//! strategies on an unseen target task.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::data::{LandmarkSet, PairSample, Task, TaskSpec};
use crate::error::{Error, Result};
use crate::grid::{DisplacementField, ImageGrid};
use crate::kernels::warp_bilinear;
use crate::loss::total_loss;
use crate::metatrain::{fine_tune_with, meta_train, pretrain, TrainConfig};
use crate::model::{ArchSpec, RegistrationNet};
use crate::params::ParamVector;
use crate::rng::{derive_seed, INIT_TAG};
use crate::scalar::Real;

/// Mean distance between each moving-frame landmark and its fixed-frame
/// partner mapped through `phi` (bilinear sample of `phi` at the fixed point).
pub fn landmark_distance<T: Real>(phi: &DisplacementField<T>, lm: &LandmarkSet) -> Result<f64> {
    if lm.is_empty() {
        return Err(Error::config("landmark distance needs at least one landmark"));
    }
    let (h, w) = phi.dims();
    if !lm.within_bounds(h, w) {
        return Err(Error::config(format!("landmarks fall outside the {h}x{w} field")));
    }
    let total: f64 = lm
        .pairs
        .iter()
        .map(|l| {
            let (u, v) = phi.sample(T::lit(l.fixed.0), T::lit(l.fixed.1));
            let px = l.fixed.0 + u.to_f64_lossy();
            let py = l.fixed.1 + v.to_f64_lossy();
            (px - l.moving.0).hypot(py - l.moving.1)
        })
        .sum();
    Ok(total / lm.len() as f64)
}

/// Pearson correlation over all pixels; 0 when either image is constant.
pub fn global_ncc<T: Real>(a: &ImageGrid<T>, b: &ImageGrid<T>) -> Result<f64> {
    a.ensure_same_dims(b, "ncc inputs")?;
    let constant = |img: &ImageGrid<T>| {
        let (lo, hi) = img.min_max();
        lo == hi
    };
    if a.is_empty() || constant(a) || constant(b) {
        return Ok(0.0);
    }
    let n = a.len() as f64;
    let mean = |img: &ImageGrid<T>| img.data().iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        let da = x.to_f64_lossy() - ma;
        let db = y.to_f64_lossy() - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    let denom = (saa * sbb).sqrt();
    Ok(if denom > 0.0 { (sab / denom).clamp(-1.0, 1.0) } else { 0.0 })
}

/// Mean per-pixel Euclidean distance between two fields.
pub fn endpoint_error<T: Real>(phi: &DisplacementField<T>, gt: &DisplacementField<T>) -> Result<f64> {
    phi.u.ensure_same_dims(&gt.u, "endpoint error fields")?;
    let it = phi.u.data().iter().zip(phi.v.data()).zip(gt.u.data().iter().zip(gt.v.data()));
    let total: f64 = it
        .map(|((u, v), (gu, gv))| (u.to_f64_lossy() - gu.to_f64_lossy()).hypot(v.to_f64_lossy() - gv.to_f64_lossy()))
        .sum();
    Ok(total / phi.u.len() as f64)
}

/// Pixels with `x < W-1, y < H-1` whose forward-difference Jacobian of
/// `x -> x + phi(x)` has a non-positive determinant.
pub fn folding_count<T: Real>(phi: &DisplacementField<T>) -> usize {
    let (h, w) = phi.dims();
    let mut folds = 0;
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let u = |yy, xx| phi.u.get(yy, xx).to_f64_lossy();
            let v = |yy, xx| phi.v.get(yy, xx).to_f64_lossy();
            let dudx = 1.0 + u(y, x + 1) - u(y, x);
            let dudy = u(y + 1, x) - u(y, x);
            let dvdx = v(y, x + 1) - v(y, x);
            let dvdy = 1.0 + v(y + 1, x) - v(y, x);
            if dudx * dvdy - dudy * dvdx <= 0.0 {
                folds += 1;
            }
        }
    }
    folds
}

/// Metrics of one registered pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMetrics {
    pub pair_id: String,
    pub landmark_dist: f64,
    pub ncc: f64,
    pub epe: Option<f64>,
    pub folds: usize,
}

/// Scores a predicted field on a pair. Pairs without landmarks are a config error.
pub fn score_pair<T: Real>(pair: &PairSample<T>, phi: &DisplacementField<T>) -> Result<PairMetrics> {
    let lm = pair
        .landmarks
        .as_ref()
        .ok_or_else(|| Error::config(format!("pair {} has no landmarks", pair.id)))?;
    let warped = warp_bilinear(&pair.moving, phi)?;
    Ok(PairMetrics {
        pair_id: pair.id.clone(),
        landmark_dist: landmark_distance(phi, lm)?,
        ncc: global_ncc(&warped, &pair.fixed)?,
        epe: pair.gt_field.as_ref().map(|gt| endpoint_error(phi, gt)).transpose()?,
        folds: folding_count(phi),
    })
}

/// Registers every pair with `params` and scores it; also returns the mean loss.
pub fn evaluate_model<T: Real>(
    net: &RegistrationNet,
    params: &ParamVector<T>,
    pairs: &[PairSample<T>],
    cfg: &TrainConfig,
) -> Result<(Vec<PairMetrics>, f64)> {
    let mut rows = Vec::with_capacity(pairs.len());
    let mut loss = 0.0;
    for p in pairs {
        let phi = net.predict(params, &p.moving, &p.fixed)?;
        loss += total_loss(&p.fixed, &p.moving, &phi, &cfg.loss)?.value.to_f64_lossy();
        rows.push(score_pair(p, &phi)?);
    }
    Ok((rows, loss / pairs.len().max(1) as f64))
}

pub fn evaluate_identity<T: Real>(pairs: &[PairSample<T>]) -> Result<Vec<PairMetrics>> {
    pairs
        .iter()
        .map(|p| {
            let (h, w) = p.moving.dims();
            score_pair(p, &DisplacementField::zeros(h, w))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArmKind {
    /// Trained from scratch on every target pair, test pairs included.
    ModelSeen,
    /// Trained from scratch on the target fine-tune pairs only.
    ModelUnseen,
    /// Pooled pretraining on the sources, applied as is.
    Transfer,
    /// Pooled pretraining, then fine-tuning on the target.
    FineTune,
    /// Pretraining, meta-training, then fine-tuning on the target.
    Ours,
    /// The zero field.
    NotDeformed,
}

impl ArmKind {
    pub const ALL: [ArmKind; 6] = [
        ArmKind::ModelSeen,
        ArmKind::ModelUnseen,
        ArmKind::Transfer,
        ArmKind::FineTune,
        ArmKind::Ours,
        ArmKind::NotDeformed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArmKind::ModelSeen => "model_seen",
            ArmKind::ModelUnseen => "model_unseen",
            ArmKind::Transfer => "transfer",
            ArmKind::FineTune => "fine_tune",
            ArmKind::Ours => "ours",
            ArmKind::NotDeformed => "not_deformed",
        }
    }

    fn trains_on_target(self) -> bool {
        !matches!(self, ArmKind::Transfer | ArmKind::NotDeformed)
    }

    fn records_curve(self) -> bool {
        matches!(self, ArmKind::FineTune | ArmKind::Ours)
    }
}

impl fmt::Display for ArmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArmKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown arm {s:?}")))
    }
}

/// An arm plus the epoch counts at which it is reported (target-trained arms only).
#[derive(Clone, Debug, PartialEq)]
pub struct ArmSpec {
    pub kind: ArmKind,
    pub epochs: Vec<usize>,
}

impl ArmSpec {
    pub fn new(kind: ArmKind, epochs: &[usize]) -> Self {
        Self { kind, epochs: epochs.to_vec() }
    }

    /// Report labels, e.g. `fine_tune@10`.
    pub fn labels(&self) -> Vec<String> {
        if self.kind.trains_on_target() {
            self.epochs.iter().map(|e| format!("{}@{e}", self.kind)).collect()
        } else {
            vec![self.kind.name().to_string()]
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kind.trains_on_target() && self.epochs.is_empty() {
            return Err(Error::config(format!("arm {} needs at least one epoch count", self.kind)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonConfig {
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Fraction of target pairs held out for testing.
    pub test_fraction: f64,
    /// Curve sampling period in epochs.
    pub curve_every: usize,
    /// Regenerate synthetic task data per seed rather than sharing it.
    pub vary_data: bool,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            arch: ArchSpec::default(),
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            test_fraction: 0.2,
            curve_every: 10,
            vary_data: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub seed: u64,
    pub arm: String,
    pub metrics: PairMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub seed: u64,
    pub arm: String,
    pub epoch: usize,
    pub landmark_dist: f64,
    pub ncc: f64,
    pub loss: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn push(&mut self, seed: u64, arm: &str, metrics: Vec<PairMetrics>) {
        self.rows.extend(metrics.into_iter().map(|m| ReportRow { seed, arm: arm.to_string(), metrics: m }));
    }

    /// Arm labels in first-seen order.
    pub fn arms(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.arm) {
                out.push(r.arm.clone());
            }
        }
        out
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.seed) {
                out.push(r.seed);
            }
        }
        out
    }

    fn select<'a>(&'a self, seed: Option<u64>, arm: &'a str) -> impl Iterator<Item = &'a PairMetrics> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.arm == arm && seed.is_none_or(|s| s == r.seed))
            .map(|r| &r.metrics)
    }

    /// Mean landmark distance of `arm` on one seed.
    pub fn seed_mean_distance(&self, seed: u64, arm: &str) -> Option<f64> {
        let v: Vec<f64> = self.select(Some(seed), arm).map(|m| m.landmark_dist).collect();
        (!v.is_empty()).then(|| mean_std(&v).0)
    }

    /// Mean over seeds of the per-seed mean landmark distance.
    pub fn mean_distance(&self, arm: &str) -> Option<f64> {
        let v: Vec<f64> = self.seeds().into_iter().filter_map(|s| self.seed_mean_distance(s, arm)).collect();
        (!v.is_empty()).then(|| mean_std(&v).0)
    }

    /// Writes per-pair rows followed, for each `(seed, arm)`, by `mean` and
    /// `std_pop` aggregate rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seed", "arm", "pair_id", "landmark_dist_px", "ncc", "epe_px", "folds"])?;
        for seed in self.seeds() {
            for arm in self.arms() {
                let group: Vec<&PairMetrics> = self.select(Some(seed), &arm).collect();
                if group.is_empty() {
                    continue;
                }
                for m in &group {
                    w.write_record([
                        seed.to_string(),
                        arm.clone(),
                        m.pair_id.clone(),
                        m.landmark_dist.to_string(),
                        m.ncc.to_string(),
                        m.epe.map(|e| e.to_string()).unwrap_or_default(),
                        m.folds.to_string(),
                    ])?;
                }
                let col = |f: &dyn Fn(&PairMetrics) -> f64| mean_std(&group.iter().map(|m| f(m)).collect::<Vec<_>>());
                let dist = col(&|m| m.landmark_dist);
                let ncc = col(&|m| m.ncc);
                let folds = col(&|m| m.folds as f64);
                let epe = group
                    .iter()
                    .map(|m| m.epe)
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| mean_std(&v));
                for (label, pick) in [("mean", 0), ("std_pop", 1)] {
                    let get = |p: (f64, f64)| if pick == 0 { p.0 } else { p.1 };
                    w.write_record([
                        seed.to_string(),
                        arm.clone(),
                        label.to_string(),
                        get(dist).to_string(),
                        get(ncc).to_string(),
                        epe.map(|e| get(e).to_string()).unwrap_or_default(),
                        get(folds).to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<report>", e))
    }
}

pub fn write_curve_csv<W: Write>(out: W, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed", "arm", "epoch", "landmark_dist_px", "ncc", "loss"])?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.arm.clone(),
            r.epoch.to_string(),
            r.landmark_dist.to_string(),
            r.ncc.to_string(),
            r.loss.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<curve>", e))
}

/// Seed-averaged curve of one arm: `(epoch, mean landmark distance, mean loss)`.
pub fn mean_curve(rows: &[CurveRow], arm: &str) -> Vec<(usize, f64, f64)> {
    let mut epochs: Vec<usize> = rows.iter().filter(|r| r.arm == arm).map(|r| r.epoch).collect();
    epochs.sort_unstable();
    epochs.dedup();
    epochs
        .into_iter()
        .map(|e| {
            let sel: Vec<&CurveRow> = rows.iter().filter(|r| r.arm == arm && r.epoch == e).collect();
            let n = sel.len() as f64;
            (
                e,
                sel.iter().map(|r| r.landmark_dist).sum::<f64>() / n,
                sel.iter().map(|r| r.loss).sum::<f64>() / n,
            )
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct Comparison {
    pub report: EvalReport,
    pub curves: Vec<CurveRow>,
}

fn seeded_spec(spec: &TaskSpec, seed: u64, vary: bool) -> TaskSpec {
    let mut s = spec.clone();
    if vary {
        s.seed = derive_seed(spec.seed, &[seed]);
    }
    s
}

fn mean_of(rows: &[PairMetrics], f: impl Fn(&PairMetrics) -> f64) -> f64 {
    rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64
}

/// Runs every arm for every seed on the held-out split of `target`.
pub fn run_comparison<T: Real>(
    arms: &[ArmSpec],
    sources: &[TaskSpec],
    target: &TaskSpec,
    cfg: &ComparisonConfig,
) -> Result<Comparison> {
    if sources.iter().any(|s| s.id == target.id || s.source == target.source) {
        return Err(Error::config(format!("target task {} must not be among the sources", target.id)));
    }
    for a in arms {
        a.validate()?;
    }
    if cfg.curve_every == 0 {
        return Err(Error::config("curve_every must be at least 1"));
    }
    cfg.train.validate()?;
    let net = RegistrationNet::new(cfg.arch.clone())?;
    let needs = |k: ArmKind| arms.iter().any(|a| a.kind == k);
    let uses_sources = needs(ArmKind::Transfer) || needs(ArmKind::FineTune) || needs(ArmKind::Ours);
    if uses_sources && sources.is_empty() {
        return Err(Error::config("source-trained arms need at least one source task"));
    }

    let mut out = Comparison::default();
    for &seed in &cfg.seeds {
        let train = TrainConfig { seed, ..cfg.train.clone() };
        let full: Task<T> = seeded_spec(target, seed, cfg.vary_data).materialize()?;
        let (ft_set, test_set) = full.split(cfg.test_fraction)?;
        if test_set.is_empty() {
            return Err(Error::config(format!("target task {} has no test pairs", target.id)));
        }
        let theta0: ParamVector<T> = net.init_params(derive_seed(seed, &[INIT_TAG]));

        let theta_pt = if uses_sources {
            let src: Vec<Task<T>> = sources
                .iter()
                .map(|s| seeded_spec(s, seed, cfg.vary_data).materialize())
                .collect::<Result<_>>()?;
            let pt = pretrain(&net, &src, &train, &theta0, train.pretrain_steps)?.params;
            let meta = if needs(ArmKind::Ours) {
                Some(meta_train(&net, &pt, &src, &train)?.params)
            } else {
                None
            };
            Some((pt, meta))
        } else {
            None
        };

        for arm in arms {
            let start = match arm.kind {
                ArmKind::NotDeformed => {
                    out.report.push(seed, arm.kind.name(), evaluate_identity(&test_set.pairs)?);
                    continue;
                }
                ArmKind::Transfer => {
                    let pt = &theta_pt.as_ref().expect("sources trained").0;
                    let (rows, _) = evaluate_model(&net, pt, &test_set.pairs, &train)?;
                    out.report.push(seed, arm.kind.name(), rows);
                    continue;
                }
                ArmKind::ModelSeen | ArmKind::ModelUnseen => theta0.clone(),
                ArmKind::FineTune => theta_pt.as_ref().expect("sources trained").0.clone(),
                ArmKind::Ours => theta_pt.as_ref().and_then(|p| p.1.clone()).expect("meta trained"),
            };
            let train_set = if arm.kind == ArmKind::ModelSeen { &full } else { &ft_set };
            let max_epochs = arm.epochs.iter().copied().max().unwrap_or(0);
            let label = |e: usize| format!("{}@{e}", arm.kind);
            let report_at = |epoch: usize, params: &ParamVector<T>, out: &mut Comparison| -> Result<()> {
                let want_report = arm.epochs.contains(&epoch);
                let want_curve = arm.kind.records_curve() && epoch % cfg.curve_every == 0;
                if !want_report && !want_curve {
                    return Ok(());
                }
                let (rows, loss) = evaluate_model(&net, params, &test_set.pairs, &train)?;
                if want_curve {
                    out.curves.push(CurveRow {
                        seed,
                        arm: arm.kind.name().to_string(),
                        epoch,
                        landmark_dist: mean_of(&rows, |m| m.landmark_dist),
                        ncc: mean_of(&rows, |m| m.ncc),
                        loss,
                    });
                }
                if want_report {
                    out.report.push(seed, &label(epoch), rows);
                }
                Ok(())
            };
            report_at(0, &start, &mut out)?;
            fine_tune_with(&net, &start, train_set, max_epochs, &train, |e, p| report_at(e, p, &mut out))?;
        }
    }
    Ok(out)
}
