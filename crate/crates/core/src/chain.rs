//! Bottom-up chain building: generate, verify and persist every table a
//! set of targets depends on, smallest first.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{check_generatable, generate, GenerationStats};
use crate::index::{IndexSpace, PositionIndex};
use crate::material::{chain_order, MaterialSignature};
use crate::tablebase::{table_file_name, SubModelSet, WdlTable};
use crate::verify::{collect_violations, verify_decomposed, verify_full, verify_quiet_only, VerificationReport};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_PIECE_CAP: u32 = 4;
/// Largest cap accepted at all; a 5-piece table is about 537 MB of labels
/// plus working memory.
pub const MAX_PIECE_CAP: u32 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReports {
    pub decomposed: VerificationReport,
    pub full: VerificationReport,
    pub quiet_only: VerificationReport,
}

impl VerificationReports {
    pub fn all_passed(&self) -> bool {
        self.decomposed.passed() && self.full.passed() && self.quiet_only.passed()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub canonical_name: MaterialSignature,
    /// Relative to the manifest's directory.
    pub file_path: String,
    pub checksum: u32,
    pub space_size: u64,
    pub valid_positions: u64,
    pub generation_stats: GenerationStats,
    pub verification_reports: VerificationReports,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainManifest {
    pub entries: Vec<ManifestEntry>,
    pub created_at: String,
    pub tool_version: String,
}

impl ChainManifest {
    pub fn new() -> ChainManifest {
        ChainManifest {
            entries: Vec::new(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn entry(&self, sig: MaterialSignature) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.canonical_name == sig)
    }

    pub fn load(dir: &Path) -> Result<ChainManifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Manifest {
            path: path.display().to_string(),
            source,
        })
    }

    /// Writes `manifest.json` through a temporary file.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let io = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&tmp, text + "\n").map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }
}

impl Default for ChainManifest {
    fn default() -> ChainManifest {
        ChainManifest::new()
    }
}

#[derive(Clone, Debug)]
pub struct ChainOptions {
    pub out_dir: PathBuf,
    /// Rayon threads; `None` uses every available core.
    pub workers: Option<usize>,
    pub resume: bool,
    pub piece_cap: u32,
}

impl ChainOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> ChainOptions {
        ChainOptions {
            out_dir: out_dir.into(),
            workers: None,
            resume: false,
            piece_cap: DEFAULT_PIECE_CAP,
        }
    }
}

/// Builds and verifies the closure of `targets`. A table only becomes a
/// sub-model after all three verifiers report zero violations; the first
/// failure aborts the chain.
pub fn build_chain(targets: &[MaterialSignature], opts: &ChainOptions) -> Result<ChainManifest> {
    if opts.piece_cap > MAX_PIECE_CAP {
        return Err(Error::InvalidArgument(format!(
            "piece cap {} is above the supported maximum of {MAX_PIECE_CAP}",
            opts.piece_cap
        )));
    }
    for t in targets {
        if t.piece_count() > opts.piece_cap {
            return Err(Error::PieceCap {
                signature: t.to_string(),
                pieces: t.piece_count(),
                cap: opts.piece_cap,
            });
        }
        check_generatable(t.canonicalize_for_storage().0)?;
    }
    let order = chain_order(targets);
    fs::create_dir_all(&opts.out_dir).map_err(|source| Error::Io {
        path: opts.out_dir.display().to_string(),
        source,
    })?;
    let previous = if opts.resume {
        ChainManifest::load(&opts.out_dir).ok()
    } else {
        None
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.workers {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build()?;

    // Signatures with equal (pieces, pawns) never depend on each other.
    let mut layers: BTreeMap<(u32, u32), Vec<MaterialSignature>> = BTreeMap::new();
    for sig in order {
        layers.entry((sig.piece_count(), sig.pawn_count())).or_default().push(sig);
    }

    let mut manifest = ChainManifest::new();
    let mut sub = SubModelSet::new();
    for layer in layers.into_values() {
        let built: Vec<Result<(Arc<WdlTable>, ManifestEntry)>> = pool.install(|| {
            layer
                .par_iter()
                .map(|&sig| build_one(sig, &sub, opts, previous.as_ref()))
                .collect()
        });
        for item in built {
            let (table, entry) = item?;
            sub.insert(table)?;
            manifest.entries.push(entry);
        }
        manifest.save(&opts.out_dir)?;
    }
    Ok(manifest)
}

fn build_one(
    sig: MaterialSignature,
    sub: &SubModelSet,
    opts: &ChainOptions,
    previous: Option<&ChainManifest>,
) -> Result<(Arc<WdlTable>, ManifestEntry)> {
    let file_name = table_file_name(sig);
    let path = opts.out_dir.join(&file_name);
    let reused = previous
        .and_then(|m| m.entry(sig))
        .and_then(|e| WdlTable::load(&path).ok().filter(|t| t.checksum() == e.checksum).map(|t| (t, e.generation_stats.clone())));
    let (table, stats) = match reused {
        Some(found) => found,
        None => {
            let (t, stats) = generate(sig, sub)?;
            t.save(&path)?;
            (t, stats)
        }
    };
    let reports = VerificationReports {
        decomposed: verify_decomposed(&table, sub)?,
        full: verify_full(&table, sub)?,
        quiet_only: verify_quiet_only(&table, sub)?,
    };
    if !reports.all_passed() {
        let _ = fs::remove_file(&path);
        return Err(failure(&table, sub, &reports));
    }
    let entry = ManifestEntry {
        canonical_name: sig,
        file_path: file_name,
        checksum: table.checksum(),
        space_size: table.space_size(),
        valid_positions: reports.decomposed.position_counts.valid(),
        generation_stats: stats,
        verification_reports: reports,
    };
    Ok((Arc::new(table), entry))
}

fn failure(table: &WdlTable, sub: &SubModelSet, reports: &VerificationReports) -> Error {
    let mut details = format!(
        "decomposed {}, full {}, quiet-only {}",
        reports.decomposed.violations.total_v, reports.full.violations.total_v, reports.quiet_only.violations.total_v
    );
    if let (Ok(found), Ok(space)) = (collect_violations(table, sub, 10), IndexSpace::new(table.signature())) {
        for v in found {
            let fen = space
                .decode(PositionIndex(v.index.0))
                .ok()
                .flatten()
                .map_or_else(|| "?".to_string(), |p| p.fen());
            details.push_str(&format!("\n  {v}: {fen} labeled {:?}", table.get(v.index.0)));
        }
    }
    let total = reports
        .decomposed
        .violations
        .total_v
        .max(reports.full.violations.total_v)
        .max(reports.quiet_only.violations.total_v);
    Error::VerificationFailed {
        signature: table.signature().to_string(),
        total,
        details,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub name: MaterialSignature,
    pub valid_positions: u64,
    pub term_pct: f64,
    pub capt_pct: f64,
    pub quiet_pct: f64,
    pub decomposed_v: u64,
    pub full_v: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub name: MaterialSignature,
    pub valid_positions: u64,
    pub t_gen: f64,
    pub t_verify: f64,
    /// `t_verify / t_gen`.
    pub ratio: f64,
}

/// Capture share pooled over every endgame with the same piece count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceCountAggregate {
    pub pieces: u32,
    pub endgames: u32,
    pub valid_positions: u64,
    pub capt_pct: f64,
    pub quiet_pct: f64,
    pub estimated_speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub rows: Vec<StatsRow>,
    pub aggregates: Vec<PieceCountAggregate>,
    /// Machine-dependent; kept apart from the reproducible rows.
    pub timings: Vec<TimingRow>,
}

/// Per-endgame categories and violations, per-piece-count capture shares,
/// and generation vs decomposed-verification timings.
pub fn stats_table(manifest: &ChainManifest) -> StatsTable {
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut pooled: BTreeMap<u32, (u32, u64, u64, u64)> = BTreeMap::new();
    for e in &manifest.entries {
        let d = &e.verification_reports.decomposed;
        let c = d.position_counts;
        rows.push(StatsRow {
            name: e.canonical_name,
            valid_positions: c.valid(),
            term_pct: d.fractions.term_pct,
            capt_pct: d.fractions.capt_pct,
            quiet_pct: d.fractions.quiet_pct,
            decomposed_v: d.violations.total_v,
            full_v: e.verification_reports.full.violations.total_v,
        });
        let t_gen = e.generation_stats.wall_time;
        timings.push(TimingRow {
            name: e.canonical_name,
            valid_positions: c.valid(),
            t_gen,
            t_verify: d.wall_time,
            ratio: if t_gen > 0.0 { d.wall_time / t_gen } else { 0.0 },
        });
        if e.canonical_name.piece_count() >= 3 {
            let slot = pooled.entry(e.canonical_name.piece_count()).or_default();
            slot.0 += 1;
            slot.1 += c.valid();
            slot.2 += c.capture;
            slot.3 += c.quiet;
        }
    }
    let aggregates = pooled
        .into_iter()
        .map(|(pieces, (endgames, valid, capture, quiet))| {
            let pct = |n: u64| if valid == 0 { 0.0 } else { 100.0 * n as f64 / valid as f64 };
            let capt_pct = pct(capture);
            PieceCountAggregate {
                pieces,
                endgames,
                valid_positions: valid,
                capt_pct,
                quiet_pct: pct(quiet),
                estimated_speedup: 1.0 / (1.0 - capt_pct / 100.0),
            }
        })
        .collect();
    StatsTable {
        rows,
        aggregates,
        timings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(s: &str) -> MaterialSignature {
        s.parse().unwrap()
    }

    fn names(m: &ChainManifest) -> Vec<String> {
        m.entries.iter().map(|e| e.canonical_name.to_string()).collect()
    }

    #[test]
    fn kqvk_closure() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_chain(&[sig("KQvK")], &ChainOptions::new(dir.path())).unwrap();
        assert_eq!(names(&m), ["KvK", "KQvK"]);
        for e in &m.entries {
            assert!(e.verification_reports.all_passed());
            assert!(dir.path().join(&e.file_path).exists());
        }
        assert_eq!(ChainManifest::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn kpvk_closure_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let opts = ChainOptions::new(dir.path());
        let first = build_chain(&[sig("KPvK")], &opts).unwrap();
        assert_eq!(names(&first), ["KvK", "KQvK", "KRvK", "KBvK", "KNvK", "KPvK"]);

        let victim = dir.path().join("KRvK.cqdt");
        let untouched = dir.path().join("KQvK.cqdt");
        let stamp = fs::metadata(&untouched).unwrap().modified().unwrap();
        fs::remove_file(&victim).unwrap();
        let resumed = build_chain(
            &[sig("KPvK")],
            &ChainOptions {
                resume: true,
                ..opts.clone()
            },
        )
        .unwrap();
        assert!(victim.exists());
        assert_eq!(fs::metadata(&untouched).unwrap().modified().unwrap(), stamp);
        let sums = |m: &ChainManifest| m.entries.iter().map(|e| e.checksum).collect::<Vec<_>>();
        assert_eq!(sums(&first), sums(&resumed));
    }

    #[test]
    fn tampered_table_aborts_the_chain() {
        let dir = tempfile::tempdir().unwrap();
        let opts = ChainOptions::new(dir.path());
        let mut m = build_chain(&[sig("KQvK")], &opts).unwrap();
        let path = dir.path().join("KQvK.cqdt");
        let bad = crate::verify::mutate(&WdlTable::load(&path).unwrap(), 3, 1).unwrap();
        bad.save(&path).unwrap();
        m.entries[1].checksum = bad.checksum();
        m.save(dir.path()).unwrap();
        let resumed = ChainOptions { resume: true, ..opts };
        match build_chain(&[sig("KQvK")], &resumed) {
            Err(Error::VerificationFailed { signature, total, details }) => {
                assert_eq!(signature, "KQvK");
                assert!(total >= 1);
                assert!(details.lines().count() >= 2, "{details}");
            }
            other => panic!("expected a verification failure, got {other:?}"),
        }
        assert!(!path.exists());
    }

    #[test]
    fn piece_cap_and_pawns() {
        let dir = tempfile::tempdir().unwrap();
        let opts = ChainOptions::new(dir.path());
        assert!(matches!(build_chain(&[sig("KQRvKR")], &opts), Err(Error::PieceCap { .. })));
        assert!(matches!(build_chain(&[sig("KPvKP")], &opts), Err(Error::TwoSidedPawns(_))));
        let wide = ChainOptions {
            piece_cap: 6,
            ..opts
        };
        assert!(matches!(build_chain(&[sig("KQvK")], &wide), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn stats_rows_and_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_chain(&[sig("KQvK"), sig("KRvK")], &ChainOptions::new(dir.path())).unwrap();
        let s = stats_table(&m);
        assert_eq!(s.rows.len(), 3);
        assert_eq!(s.aggregates.len(), 1);
        let agg = &s.aggregates[0];
        assert_eq!((agg.pieces, agg.endgames), (3, 2));
        let (kq, kr) = (&s.rows[1], &s.rows[2]);
        let pooled = (kq.capt_pct * kq.valid_positions as f64 + kr.capt_pct * kr.valid_positions as f64)
            / (kq.valid_positions + kr.valid_positions) as f64;
        assert!((agg.capt_pct - pooled).abs() < 1e-9);
        assert!(s.rows.iter().all(|r| r.decomposed_v == r.full_v));
    }
}
