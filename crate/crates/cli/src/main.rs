//! `colier`: run the session server, render documents, simulate sessions
//! and inspect session directories.

use std::fmt::Write as _;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::parser::ValueSource;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use colier_core::persist::{read_document_at, SessionDir};
use colier_core::raster::{export_image, render_document, AssetStore};
use colier_core::SessionDocument;
use colier_server::{ServerConfig, DEFAULT_PORT};
use colier_sim::{run_scenario, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(name = "colier", version, about = "Collaborative layered raster editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the session server until interrupted.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "0.0.0.0")]
        host: IpAddr,
        /// Directory holding one subdirectory per session.
        #[arg(long, env = "COLIER_DATA", default_value = "./sessions")]
        data: PathBuf,
        /// Browser editor bundle served at `/`.
        #[arg(long, env = "COLIER_WEB_ROOT")]
        web_root: Option<PathBuf>,
    },
    /// Render a document or session directory to a PNG.
    Render {
        #[arg(long)]
        doc: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a seeded multi-client simulation and check convergence.
    Simulate {
        #[arg(long, default_value_t = 2)]
        clients: u32,
        #[arg(long, default_value_t = 100)]
        ops: u32,
        /// Uniform per-message delay range, `min:max` milliseconds.
        #[arg(long, default_value = "0:50", value_parser = parse_latency)]
        latency_ms: (u64, u64),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print a summary of a document or session directory.
    Inspect {
        #[arg(long)]
        doc: PathBuf,
    },
}

fn parse_latency(s: &str) -> Result<(u64, u64), String> {
    let (min, max) = s.split_once(':').ok_or("expected min:max")?;
    let min: u64 = min.trim().parse().map_err(|e| format!("min: {e}"))?;
    let max: u64 = max.trim().parse().map_err(|e| format!("max: {e}"))?;
    if min > max {
        return Err(format!("min {min} exceeds max {max}"));
    }
    Ok((min, max))
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    // The default data directory is created on first use; an explicit one
    // has to exist.
    let default_data = matches
        .subcommand_matches("serve")
        .is_some_and(|m| m.value_source("data") == Some(ValueSource::DefaultValue));
    match run(cli.command, default_data) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, default_data: bool) -> anyhow::Result<ExitCode> {
    match command {
        Command::Serve { port, host, data, web_root } => {
            init_tracing();
            if default_data && !data.exists() {
                std::fs::create_dir_all(&data).with_context(|| format!("creating {}", data.display()))?;
            }
            let config = ServerConfig { host, port, data_dir: data, web_root };
            let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
            rt.block_on(colier_server::serve(config))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Render { doc, out } => {
            render(&doc, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { clients, ops, latency_ms, seed, report } => {
            let config = ScenarioConfig { clients, ops, latency_ms, seed, ..Default::default() };
            let r = run_scenario(&config)?;
            if let Some(path) = report {
                std::fs::write(&path, r.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
            }
            println!(
                "converged={} finalSeq={} accepted={} rejected={} orderingViolations={} maxPropagationMs={}",
                r.converged,
                r.final_seq,
                r.accepted,
                r.rejected(),
                r.ordering_violations,
                r.max_observed_propagation_ms
            );
            if let Some(d) = &r.divergence {
                eprintln!("diverged: {d}");
            }
            Ok(if r.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Inspect { doc } => {
            let (document, seq) = read_document_at(&doc).with_context(|| format!("reading {}", doc.display()))?;
            print!("{}", summary(&document, seq));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

/// Assets live in `assets/` of a session directory, or next to a bare
/// document file.
fn assets_for(doc: &Path) -> PathBuf {
    if doc.is_dir() {
        SessionDir::new(doc).assets_dir()
    } else {
        doc.parent().unwrap_or(Path::new(".")).join(colier_core::persist::ASSETS_DIR)
    }
}

fn render(doc: &Path, out: &Path) -> anyhow::Result<()> {
    if !doc.exists() {
        bail!("{} does not exist", doc.display());
    }
    let (document, _) = read_document_at(doc).with_context(|| format!("reading {}", doc.display()))?;
    let assets = AssetStore::load_dir(&assets_for(doc))?;
    let img = render_document(&document, &assets)?;
    export_image(&img, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn summary(doc: &SessionDocument, seq: u64) -> String {
    let mut s = String::new();
    let m = &doc.meta;
    let _ = writeln!(s, "name:    {}", m.name);
    let _ = writeln!(s, "size:    {}x{}", m.width, m.height);
    let _ = writeln!(s, "seq:     {seq}");
    let _ = writeln!(s, "layers:  {} (bottom first)", doc.layers.len());
    for (i, l) in doc.layers.iter().enumerate() {
        let undone = l.strokes.iter().filter(|s| s.undone).count();
        let effects: Vec<String> = l
            .pipeline
            .iter()
            .map(|v| if v.enabled { v.effect.to_string() } else { format!("({})", v.effect) })
            .collect();
        let _ = writeln!(
            s,
            "  {i:>2} {} {:?} {} opacity={} strokes={} undone={} effects=[{}]",
            l.id,
            l.name,
            if l.visible { "visible" } else { "hidden" },
            l.opacity,
            l.strokes.len(),
            undone,
            effects.join(", ")
        );
        let mut locks = Vec::new();
        if l.locked {
            locks.push("locked".to_owned());
        }
        if let Some(x) = &l.exclusive_lock {
            locks.push(format!("exclusive lock by {} since {}", x.owner, x.since));
        }
        if !locks.is_empty() {
            let _ = writeln!(s, "     {}", locks.join("; "));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_ranges() {
        assert_eq!(parse_latency("0:200"), Ok((0, 200)));
        assert_eq!(parse_latency(" 5 : 5"), Ok((5, 5)));
        assert!(parse_latency("9:1").is_err());
        assert!(parse_latency("12").is_err());
        assert!(parse_latency("a:1").is_err());
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        let err = Cli::try_parse_from(["colier", "render", "--doc", "d", "--out", "o", "--dpi", "3"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn summary_lists_locks() {
        use colier_core::document::{ExclusiveLock, Layer, LayerId};
        let mut doc = SessionDocument::new("s", 10, 20, 0);
        let mut l = Layer::new(LayerId::new("L1"), "ink");
        l.locked = true;
        l.exclusive_lock = Some(ExclusiveLock { owner: "abc".into(), since: 7 });
        doc.layers.push(l);
        let text = summary(&doc, 4);
        assert!(text.contains("size:    10x20"));
        assert!(text.contains("seq:     4"));
        assert!(text.contains("locked; exclusive lock by abc since 7"));
    }
}
