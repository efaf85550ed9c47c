//! The `cqd` command line.
//!
//! Exit codes: 0 on success with no violations, 1 when a verification
//! finds violations, 2 on usage, configuration or I/O errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::chain::{build_chain, stats_table, ChainManifest, ChainOptions, StatsTable, DEFAULT_PIECE_CAP};
use crate::error::{Error, Result};
use crate::generate::generate;
use crate::material::{all_signatures, MaterialSignature};
use crate::tablebase::{table_file_name, SubModelSet, WdlTable};
use crate::verify::{all_draw_table, collect_violations, mutate, verify, Mode};

#[derive(Parser, Debug)]
#[command(name = "cqd", version, about = "WDL endgame tablebases with capture-quiet decomposed verification")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct TbDir {
    /// Tablebase directory.
    #[arg(long, env = "CQD_TB_DIR")]
    tb: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one table from sub-model tables already in the directory.
    Gen {
        signature: MaterialSignature,
        #[command(flatten)]
        tb: TbDir,
    },
    /// Verify a table and print its report as JSON.
    Verify {
        signature: MaterialSignature,
        #[arg(long, value_enum, default_value_t = ModeArg::Decomposed)]
        mode: ModeArg,
        #[command(flatten)]
        tb: TbDir,
        /// Verify this file instead of the directory's table.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Print up to this many violations to stderr.
        #[arg(long, default_value_t = 10)]
        show: usize,
    },
    /// Build and verify every table the targets depend on.
    Chain {
        /// Comma-separated signatures.
        #[arg(long, value_delimiter = ',', required_unless_present = "max_pieces", conflicts_with = "max_pieces")]
        targets: Vec<MaterialSignature>,
        /// Every signature up to this many pieces.
        #[arg(long)]
        max_pieces: Option<u32>,
        #[arg(long)]
        out: PathBuf,
        /// Reuse tables whose checksum matches the existing manifest.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = DEFAULT_PIECE_CAP)]
        piece_cap: u32,
    },
    /// Per-endgame category fractions and violations from the manifest.
    Stats {
        #[command(flatten)]
        tb: TbDir,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Append the machine-dependent timing section.
        #[arg(long)]
        timings: bool,
    },
    /// Write a copy of a table with labels rotated at seeded indices.
    Mutate {
        signature: MaterialSignature,
        #[arg(long)]
        flips: u64,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        tb: TbDir,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a table labeling every valid position Draw.
    Alldraw {
        signature: MaterialSignature,
        /// Label checkmates Loss.
        #[arg(long)]
        fix_terminals: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Markdown tables of categories, timings and capture shares.
    Report {
        #[command(flatten)]
        tb: TbDir,
        #[arg(long, value_enum, default_value_t = ReportFormat::Markdown)]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Decomposed,
    Full,
    QuietOnly,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Decomposed => Mode::Decomposed,
            ModeArg::Full => Mode::Full,
            ModeArg::QuietOnly => Mode::QuietOnly,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Markdown,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Markdown,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut out = String::new();
    let result = execute(cli, &mut out);
    print!("{out}");
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::VerificationFailed { .. } => 1,
                _ => 2,
            }
        }
    }
}

fn execute(cli: Cli, out: &mut String) -> Result<i32> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build()?;
    let workers = cli.workers;
    pool.install(|| dispatch(cli.command, workers, out))
}

fn write_out(out: &mut String, text: &str) -> Result<()> {
    out.push_str(text);
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

fn canonical(sig: MaterialSignature) -> MaterialSignature {
    sig.canonicalize_for_storage().0
}

fn load_table(path: &Path, expected: MaterialSignature) -> Result<WdlTable> {
    let table = WdlTable::load(path)?;
    if table.signature() != expected {
        return Err(Error::WrongSignature {
            expected: expected.to_string(),
            found: table.signature().to_string(),
        });
    }
    Ok(table)
}

fn load_subs(sig: MaterialSignature, dir: &Path) -> Result<SubModelSet> {
    Ok(SubModelSet::load_for(sig, dir)?)
}

fn dispatch(command: Command, workers: Option<usize>, out: &mut String) -> Result<i32> {
    match command {
        Command::Gen { signature, tb } => {
            let sig = canonical(signature);
            let sub = load_subs(sig, &tb.tb)?;
            let (table, stats) = generate(sig, &sub)?;
            let path = tb.tb.join(table_file_name(sig));
            table.save(&path)?;
            eprintln!("wrote {}", path.display());
            write_out(out, &to_json(&stats))?;
            Ok(0)
        }
        Command::Verify {
            signature,
            mode,
            tb,
            table,
            show,
        } => {
            let sig = canonical(signature);
            let path = table.unwrap_or_else(|| tb.tb.join(table_file_name(sig)));
            let t = load_table(&path, sig)?;
            let sub = load_subs(sig, &tb.tb)?;
            let report = verify(mode.into(), &t, &sub)?;
            write_out(out, &to_json(&report))?;
            if report.passed() {
                return Ok(0);
            }
            if show > 0 {
                let space = crate::index::IndexSpace::new(sig)?;
                for v in collect_violations(&t, &sub, show)? {
                    let fen = space.decode(v.index)?.map_or_else(|| "?".into(), |p| p.fen());
                    eprintln!("{v}: {fen} labeled {:?}", t.get(v.index.0));
                }
            }
            Ok(1)
        }
        Command::Chain {
            targets,
            max_pieces,
            out: dir,
            resume,
            piece_cap,
        } => {
            let targets = match max_pieces {
                Some(n) => all_signatures(n),
                None => targets,
            };
            let opts = ChainOptions {
                out_dir: dir,
                workers,
                resume,
                piece_cap,
            };
            let manifest = build_chain(&targets, &opts)?;
            write_out(out, &chain_summary(&manifest))?;
            Ok(0)
        }
        Command::Stats { tb, format, timings } => {
            let manifest = ChainManifest::load(&tb.tb)?;
            write_out(out, &render_stats(&stats_table(&manifest), format, timings))?;
            Ok(0)
        }
        Command::Mutate {
            signature,
            flips,
            seed,
            tb,
            out: file,
        } => {
            let sig = canonical(signature);
            let t = load_table(&tb.tb.join(table_file_name(sig)), sig)?;
            mutate(&t, flips, seed)?.save(&file)?;
            eprintln!("wrote {}", file.display());
            Ok(0)
        }
        Command::Alldraw {
            signature,
            fix_terminals,
            out: file,
        } => {
            let sig = canonical(signature);
            all_draw_table(sig, fix_terminals)?.save(&file)?;
            eprintln!("wrote {}", file.display());
            Ok(0)
        }
        Command::Report { tb, format } => {
            let ReportFormat::Markdown = format;
            let manifest = ChainManifest::load(&tb.tb)?;
            write_out(out, &render_report(&stats_table(&manifest)))?;
            Ok(0)
        }
    }
}

fn chain_summary(m: &ChainManifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>12} {:>8} {:>6} {:>6} {:>6}", "endgame", "valid", "capt%", "dec_v", "full_v", "quiet_v");
    for e in &m.entries {
        let r = &e.verification_reports;
        let _ = writeln!(
            s,
            "{:<10} {:>12} {:>8.2} {:>6} {:>6} {:>6}",
            e.canonical_name.to_string(),
            e.valid_positions,
            r.decomposed.fractions.capt_pct,
            r.decomposed.violations.total_v,
            r.full.violations.total_v,
            r.quiet_only.violations.total_v
        );
    }
    let _ = writeln!(s, "{} tables verified", m.entries.len());
    s
}

/// Renders the stats table. Output without `timings` depends only on the
/// table contents.
pub fn render_stats(stats: &StatsTable, format: Format, timings: bool) -> String {
    let mut s = String::new();
    match format {
        Format::Json => {
            let mut v = serde_json::to_value(stats).expect("stats serialize");
            if !timings {
                v.as_object_mut().expect("object").remove("timings");
            }
            s = serde_json::to_string_pretty(&v).expect("stats serialize") + "\n";
        }
        Format::Csv => {
            s.push_str("endgame,valid_positions,term_pct,capt_pct,quiet_pct,decomposed_v,full_v\n");
            for r in &stats.rows {
                let _ = writeln!(
                    s,
                    "{},{},{:.4},{:.4},{:.4},{},{}",
                    r.name, r.valid_positions, r.term_pct, r.capt_pct, r.quiet_pct, r.decomposed_v, r.full_v
                );
            }
            s.push_str("\npieces,endgames,valid_positions,capt_pct,quiet_pct,estimated_speedup\n");
            for a in &stats.aggregates {
                let _ = writeln!(
                    s,
                    "{},{},{},{:.4},{:.4},{:.4}",
                    a.pieces, a.endgames, a.valid_positions, a.capt_pct, a.quiet_pct, a.estimated_speedup
                );
            }
            if timings {
                s.push_str("\nendgame,valid_positions,t_gen,t_verify,ratio\n");
                for t in &stats.timings {
                    let _ = writeln!(s, "{},{},{:.4},{:.4},{:.4}", t.name, t.valid_positions, t.t_gen, t.t_verify, t.ratio);
                }
            }
        }
        Format::Markdown => {
            s.push_str(&categories_markdown(stats));
            s.push('\n');
            s.push_str(&aggregates_markdown(stats));
            if timings {
                s.push('\n');
                s.push_str(&timings_markdown(stats));
            }
        }
    }
    s
}

fn categories_markdown(stats: &StatsTable) -> String {
    let mut s = String::from("| Endgame | Positions | Term% | Capt% | Quiet% | v_total | full_v |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    let (mut valid, mut term, mut capt, mut quiet) = (0u64, 0f64, 0f64, 0f64);
    for r in &stats.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {:.1} | {:.1} | {:.1} | {} | {} |",
            r.name, r.valid_positions, r.term_pct, r.capt_pct, r.quiet_pct, r.decomposed_v, r.full_v
        );
        let w = r.valid_positions as f64;
        valid += r.valid_positions;
        term += r.term_pct * w;
        capt += r.capt_pct * w;
        quiet += r.quiet_pct * w;
    }
    if valid > 0 {
        let v = valid as f64;
        let _ = writeln!(
            s,
            "| **Total** | {valid} | {:.1} | {:.1} | {:.1} | | |",
            term / v,
            capt / v,
            quiet / v
        );
    }
    s
}

fn aggregates_markdown(stats: &StatsTable) -> String {
    let mut s = String::from("| Pieces | Endgames | Positions | Capture % | Quiet % | Est. speedup |\n");
    s.push_str("|---:|---:|---:|---:|---:|---:|\n");
    for a in &stats.aggregates {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.1} | {:.1} | {:.2}x |",
            a.pieces, a.endgames, a.valid_positions, a.capt_pct, a.quiet_pct, a.estimated_speedup
        );
    }
    s
}

fn timings_markdown(stats: &StatsTable) -> String {
    let mut s = String::from("| Endgame | Positions | t_gen (s) | t_verify (s) | Ratio |\n");
    s.push_str("|---|---:|---:|---:|---:|\n");
    for t in &stats.timings {
        let _ = writeln!(
            s,
            "| {} | {} | {:.2} | {:.2} | {:.2} |",
            t.name, t.valid_positions, t.t_gen, t.t_verify, t.ratio
        );
    }
    s
}

fn render_report(stats: &StatsTable) -> String {
    let mut s = String::from("## Verification by category\n\n");
    s.push_str(&categories_markdown(stats));
    s.push_str("\n## Generation vs decomposed verification\n\nTimings are machine-dependent.\n\n");
    s.push_str(&timings_markdown(stats));
    s.push_str("\n## Capture share by piece count\n\n");
    s.push_str(&aggregates_markdown(stats));
    s
}

/// Loads every table listed in a manifest as a sub-model set.
pub fn load_manifest_tables(dir: &Path) -> Result<(ChainManifest, SubModelSet)> {
    let manifest = ChainManifest::load(dir)?;
    let mut sub = SubModelSet::new();
    for e in &manifest.entries {
        let t = load_table(&dir.join(&e.file_path), e.canonical_name)?;
        sub.insert(Arc::new(t))?;
    }
    Ok((manifest, sub))
}
