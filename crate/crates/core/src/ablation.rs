//! Ablation grids: named network variants trained and evaluated under shared
//! seeds, summarized as comparison tables and plot series.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cgm::CgmVariant;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::fbm::FbmVariant;
use crate::metrics::{format_table, MetricReport};
use crate::network::{attach_side_branch, detach_side_branch, NetworkConfig, Placement, DEPTH};
use crate::train::{evaluate, train_on, History, RunConfig};

/// One row of a grid: a label and the network it trains.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationEntry {
    pub name: String,
    pub network: NetworkConfig,
    /// Plot coordinates `(series, x)` for the series file.
    pub series: Option<(String, String)>,
}

impl AblationEntry {
    fn new(name: impl Into<String>, network: NetworkConfig) -> Self {
        Self {
            name: name.into(),
            network,
            series: None,
        }
    }

    fn at(mut self, series: impl Into<String>, x: impl Into<String>) -> Self {
        self.series = Some((series.into(), x.into()));
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub name: String,
    pub entries: Vec<AblationEntry>,
}

fn cgm_label(v: CgmVariant) -> String {
    format!("CGM({v})")
}

fn fbm_label(v: FbmVariant) -> &'static str {
    match v {
        FbmVariant::BaseConcat => "base(a)",
        FbmVariant::BaseAdd => "base(b)",
        FbmVariant::MaskBridge => "(c)",
        FbmVariant::DeepMaskBridge => "(d)",
    }
}

/// The single-task reference: encoder, decoder and plain skip fusion.
pub fn baseline_of(base: &NetworkConfig) -> NetworkConfig {
    NetworkConfig {
        cgm_variant: CgmVariant::Base,
        cgm_levels: [true; DEPTH],
        ..detach_side_branch(base)
    }
}

impl AblationGrid {
    pub const NAMES: [&'static str; 4] = ["cgm", "fbm", "side", "span"];

    /// Every CGM variant on the single-task network.
    pub fn cgm(base: &NetworkConfig) -> Self {
        let single = detach_side_branch(base);
        let entries = CgmVariant::ALL
            .into_iter()
            .map(|v| {
                let name = if v == CgmVariant::Base {
                    "baseline: CGM(base)".to_string()
                } else {
                    cgm_label(v)
                };
                AblationEntry::new(
                    name,
                    NetworkConfig {
                        cgm_variant: v,
                        cgm_levels: [true; DEPTH],
                        ..single.clone()
                    },
                )
                .at("cgm", v.to_string())
            })
            .collect();
        Self {
            name: "cgm".into(),
            entries,
        }
    }

    /// Bridge classes at each placement, plus the mixed (c, d) bridge at I.
    pub fn fbm(base: &NetworkConfig) -> Self {
        let mut entries = vec![AblationEntry::new("baseline", baseline_of(base))];
        for v in FbmVariant::ENCODER {
            for p in [Placement::I, Placement::II, Placement::III, Placement::IV] {
                let cfg = attach_side_branch(base, v, v, p);
                entries.push(
                    AblationEntry::new(format!("FBM {}({p})", fbm_label(v)), cfg).at(fbm_label(v), p.to_string()),
                );
            }
        }
        entries.push(
            AblationEntry::new(
                "FBM (c,d)(I)",
                attach_side_branch(base, FbmVariant::MaskBridge, FbmVariant::DeepMaskBridge, Placement::I),
            )
            .at("(c,d)", "I"),
        );
        Self {
            name: "fbm".into(),
            entries,
        }
    }

    /// Each CGM variant without and with the edge side branch.
    pub fn side(base: &NetworkConfig) -> Self {
        let mut entries = Vec::new();
        for v in CgmVariant::ALL {
            let single = NetworkConfig {
                cgm_variant: v,
                ..detach_side_branch(base)
            };
            let dual = attach_side_branch(
                &single,
                FbmVariant::MaskBridge,
                FbmVariant::DeepMaskBridge,
                Placement::I,
            );
            entries.push(AblationEntry::new(cgm_label(v), single).at(cgm_label(v), "single"));
            entries.push(AblationEntry::new(format!("{} + Side_B", cgm_label(v)), dual).at(cgm_label(v), "dual"));
        }
        Self {
            name: "side".into(),
            entries,
        }
    }

    /// One fusion level at a time using each non-base CGM variant, plain
    /// fusion elsewhere. Level `l` joins encoder layer `4 - l` and the
    /// decoder layer `4 + l`, so its span grows with `l`.
    pub fn span(base: &NetworkConfig) -> Self {
        let single = detach_side_branch(base);
        let mut entries = vec![AblationEntry::new("baseline", baseline_of(base))];
        for v in CgmVariant::ALL.into_iter().filter(|&v| v != CgmVariant::Base) {
            for level in 1..=DEPTH {
                let mut levels = [false; DEPTH];
                levels[level - 1] = true;
                let span = format!("Layer{}&{}", DEPTH - level, DEPTH + level);
                entries.push(
                    AblationEntry::new(
                        format!("{} {span}", cgm_label(v)),
                        NetworkConfig {
                            cgm_variant: v,
                            cgm_levels: levels,
                            ..single.clone()
                        },
                    )
                    .at(cgm_label(v), span),
                );
            }
        }
        Self {
            name: "span".into(),
            entries,
        }
    }

    pub fn by_name(name: &str, base: &NetworkConfig) -> Result<Self> {
        match name {
            "cgm" => Ok(Self::cgm(base)),
            "fbm" => Ok(Self::fbm(base)),
            "side" => Ok(Self::side(base)),
            "span" => Ok(Self::span(base)),
            other => Err(Error::Config(format!(
                "unknown grid {other:?}; expected one of {:?}",
                Self::NAMES
            ))),
        }
    }

    /// A grid of one entry.
    pub fn single(name: impl Into<String>, network: NetworkConfig) -> Self {
        let name = name.into();
        Self {
            entries: vec![AblationEntry::new(name.clone(), network)],
            name,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            e.network
                .validate()
                .map_err(|err| Error::Config(format!("grid entry {:?}: {err}", e.name)))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: std::result::Result<(MetricReport, History), String>,
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub entry: AblationEntry,
    pub runs: Vec<SeedRun>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl AblationRow {
    pub fn reports(&self) -> Vec<MetricReport> {
        self.runs
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|(m, _)| *m))
            .collect()
    }

    pub fn failures(&self) -> Vec<(u64, &str)> {
        self.runs
            .iter()
            .filter_map(|r| r.outcome.as_ref().err().map(|e| (r.seed, e.as_str())))
            .collect()
    }

    /// Per-metric median over successful seeds; `None` if every seed failed.
    pub fn median(&self) -> Option<MetricReport> {
        let reps = self.reports();
        let first = *reps.first()?;
        Some(MetricReport {
            iou: median(reps.iter().map(|r| r.iou).collect()),
            f1: median(reps.iter().map(|r| r.f1).collect()),
            recall: median(reps.iter().map(|r| r.recall).collect()),
            precision: median(reps.iter().map(|r| r.precision).collect()),
            mode: first.mode,
        })
    }
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub grid: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.entry.name == name)
    }

    /// Rows of medians; failed rows are marked and listed underneath.
    pub fn table(&self) -> String {
        let ok: Vec<(String, MetricReport)> = self
            .rows
            .iter()
            .filter_map(|r| r.median().map(|m| (r.entry.name.clone(), m)))
            .collect();
        let mut out = format_table(&format!("grid {} (median of {} seeds)", self.grid, self.seeds.len()), &ok);
        for r in &self.rows {
            if r.median().is_none() {
                let _ = writeln!(out, "{}  FAILED", r.entry.name);
            }
            for (seed, err) in r.failures() {
                let _ = writeln!(out, "  ! {} seed {seed}: {err}", r.entry.name);
            }
        }
        out
    }

    /// TOML-style `key = value` lines: one table per row.
    pub fn key_values(&self) -> String {
        let mut out = format!("grid = \"{}\"\nseeds = {:?}\n", self.grid, self.seeds);
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(out, "\n[row{i:02}]\nname = {:?}\n", r.entry.name);
            match r.median() {
                Some(m) => {
                    out.push_str("status = \"ok\"\n");
                    out.push_str(&m.to_key_values(""));
                }
                None => out.push_str("status = \"failed\"\n"),
            }
            for run in &r.runs {
                match &run.outcome {
                    Ok((m, _)) => {
                        let _ = writeln!(out, "seed{}_iou = {:.2}", run.seed, 100.0 * m.iou);
                    }
                    Err(e) => {
                        let _ = writeln!(out, "seed{}_error = {e:?}", run.seed);
                    }
                }
            }
        }
        out
    }

    /// `series,x,name,seed,iou,f1,recall,precision` per successful run.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("series,x,name,seed,iou,f1,recall,precision\n");
        for r in &self.rows {
            let (s, x) = r
                .entry
                .series
                .clone()
                .unwrap_or_else(|| (self.grid.clone(), r.entry.name.clone()));
            for run in &r.runs {
                if let Ok((m, _)) = &run.outcome {
                    let [(_, iou), (_, f1), (_, rec), (_, prec)] = m.columns();
                    let _ = writeln!(
                        out,
                        "{s},{x},{},{},{iou:.4},{f1:.4},{rec:.4},{prec:.4}",
                        r.entry.name, run.seed
                    );
                }
            }
        }
        out
    }

    /// Writes `table.txt`, `metrics.toml` and `series.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, text) in [
            ("table.txt", self.table()),
            ("metrics.toml", self.key_values()),
            ("series.csv", self.series_csv()),
        ] {
            let p = dir.join(file);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Trains and evaluates every grid entry for every seed on shared data.
/// A failing run is recorded and the remaining runs continue.
pub fn ablate(
    grid: &AblationGrid,
    base: &RunConfig,
    seeds: &[u64],
    train: &[Sample],
    test: &[Sample],
    progress: &mut dyn FnMut(&str, u64, &std::result::Result<(MetricReport, History), String>),
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if test.is_empty() {
        return Err(Error::Empty("ablation needs a test split".into()));
    }
    let mut rows = Vec::with_capacity(grid.entries.len());
    for entry in &grid.entries {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = RunConfig {
                network: entry.network.clone(),
                seed,
                ..base.clone()
            };
            let outcome = train_on(&cfg, train, test, &mut |_| {})
                .and_then(|out| {
                    let report = evaluate(&out.network, test, cfg.threshold, cfg.metric_mode)?;
                    Ok((report, out.history))
                })
                .map_err(|e| e.to_string());
            progress(&entry.name, seed, &outcome);
            runs.push(SeedRun { seed, outcome });
        }
        rows.push(AblationRow {
            entry: entry.clone(),
            runs,
        });
    }
    Ok(AblationReport {
        grid: grid.name.clone(),
        seeds: seeds.to_vec(),
        rows,
    })
}
