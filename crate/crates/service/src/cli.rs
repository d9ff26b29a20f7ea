//! Command-line entry points.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use transens_core::cluster::{flat_roots, Hierarchy};
use transens_core::descriptors::compute_ensemble;
use transens_core::export::{export_all, export_scratchpad};
use transens_core::ingest::{load_manifest, write_dataset, Dataset, DatasetManifest};
use transens_core::pipeline::{reduce_full, Analysis};
use transens_core::session::Session;
use transens_core::strain::GlyphParams;
use transens_core::synth::{duplicate_ensemble, two_motif_dataset_jittered};

use crate::api::router;
use crate::state::{default_cluster_cutoff, AppState, ServeConfig};

#[derive(Debug, Parser)]
#[command(name = "transens", version, about = "Explore ensembles of atomic state-to-state transitions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, compute distances, reduce, cluster and export every cluster.
    Analyze(AnalyzeArgs),
    /// Export the scratchpad of a saved session with its HTML report.
    Report(ReportArgs),
    /// Serve the HTTP/JSON API on localhost.
    Serve(ServeArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Dataset manifest (TOML).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Bond cutoff in Å; overrides the manifest.
    #[arg(long)]
    pub bond_cutoff: Option<f64>,
    /// Directory for the cached distance matrix.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Distance below which transitions collapse onto their medoid; 0 keeps all.
    #[arg(long, default_value_t = 0.0)]
    pub reduction_cutoff: f64,
    /// Defaults to the middle of the widest gap between merge heights.
    #[arg(long)]
    pub cluster_cutoff: Option<f64>,
    /// Session whose cluster labels and notes name the exported folders.
    #[arg(long)]
    pub session: Option<PathBuf>,
    /// Export directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Saved session (JSON).
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Defaults to the session's cutoff, or 0.
    #[arg(long)]
    pub reduction_cutoff: Option<f64>,
    #[arg(long)]
    pub cluster_cutoff: Option<f64>,
    #[arg(long, default_value_t = 8731)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Kernel width in Å for group displacement fields.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Session file, loaded if present and saved after every change.
    #[arg(long)]
    pub session: Option<PathBuf>,
    /// Directory that receives exports.
    #[arg(long, default_value = "exports")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    /// Surface hops and core swaps under random poses.
    TwoMotif,
    /// Distinct transitions plus exact duplicates.
    Duplicates,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::TwoMotif)]
    pub kind: SynthKind,
    /// Transitions per motif, or distinct transitions.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Extra duplicate copies (`duplicates` only).
    #[arg(long, default_value_t = 0)]
    pub duplicates: usize,
    /// Atoms per state (`duplicates` only).
    #[arg(long, default_value_t = 38)]
    pub atoms: usize,
    /// Feature columns per atom.
    #[arg(long, default_value_t = 12)]
    pub features: usize,
    /// Thermal noise in Å (`two-motif` only).
    #[arg(long, default_value_t = 0.05)]
    pub jitter: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Input errors exit with 2, everything else with 1.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Input(_) => ExitCode::from(2),
            Failure::Other(_) => ExitCode::from(1),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (Failure::Input(e) | Failure::Other(e)) = self;
        let mut shown: Vec<String> = Vec::new();
        for cause in e.chain() {
            let text = cause.to_string();
            if !shown.last().is_some_and(|prev| prev.ends_with(&text)) {
                shown.push(text);
            }
        }
        f.write_str(&shown.join(": "))
    }
}

fn input<E: Into<anyhow::Error>>(stage: &'static str) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Input(e.into().context(stage))
}

fn other<E: Into<anyhow::Error>>(stage: &'static str) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Other(e.into().context(stage))
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn stage(name: &str, start: Instant, detail: impl std::fmt::Display) {
    println!("{name:<10} {:>9.3} s  {detail}", start.elapsed().as_secs_f64());
}

fn check_cutoff(name: &'static str, v: f64) -> Result<f64, Failure> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Failure::Input(anyhow!("{name} must be finite and >= 0, got {v}")))
    }
}

fn load(args: &InputArgs) -> Result<Dataset, Failure> {
    let t = Instant::now();
    let mut manifest = DatasetManifest::read(&args.manifest).map_err(input("load"))?;
    if let Some(c) = args.bond_cutoff {
        if !(c.is_finite() && c > 0.0) {
            return Err(Failure::Input(anyhow!("bond cutoff must be positive, got {c}")));
        }
        manifest.bond_cutoff = Some(c);
    }
    let d = load_manifest(&manifest)
        .with_context(|| format!("loading {}", args.manifest.display()))
        .map_err(input("load"))?;
    stage(
        "load",
        t,
        format_args!(
            "transitions={} states={} atoms={} features={} bond_cutoff={:.4}",
            d.len(),
            d.state_count(),
            d.atom_count(),
            d.feature_count(),
            d.bond_cutoff
        ),
    );
    Ok(d)
}

/// Runs distances, reduction and clustering with per-stage timing.
fn build(dataset: Dataset, args: &InputArgs, reduction_cutoff: f64) -> Result<Analysis, Failure> {
    let dataset = Arc::new(dataset);
    let t = Instant::now();
    let ensemble = compute_ensemble(&dataset, None, args.cache_dir.as_deref()).map_err(other("distances"))?;
    stage(
        "distances",
        t,
        format_args!(
            "matrix={}x{} whitened_dims={}{}",
            ensemble.matrix.len(),
            ensemble.matrix.len(),
            ensemble.whitening.as_ref().map_or(0, |w| w.retained()),
            if ensemble.from_cache { " (cached)" } else { "" }
        ),
    );
    let t = Instant::now();
    let reduction = reduce_full(&ensemble.matrix, reduction_cutoff).map_err(other("reduce"))?;
    let total = dataset.len();
    stage(
        "reduce",
        t,
        format_args!(
            "cutoff={reduction_cutoff} in={total} kept={} ({:.1}%) removed={}",
            reduction.kept.len(),
            100.0 * reduction.kept_fraction(total),
            total - reduction.kept.len()
        ),
    );
    let t = Instant::now();
    let hierarchy = Hierarchy::build(&reduction.reduced).map_err(other("cluster"))?;
    stage(
        "cluster",
        t,
        format_args!(
            "leaves={} root_height={:.6}",
            hierarchy.tree.leaf_count(),
            hierarchy.tree.height(hierarchy.tree.root())
        ),
    );
    Ok(Analysis {
        dataset,
        ensemble: Arc::new(ensemble),
        reduction,
        hierarchy,
    })
}

fn load_session(path: &Path) -> Result<Session, Failure> {
    Session::load(path).map_err(input("session"))
}

fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let reduction_cutoff = check_cutoff("reduction cutoff", args.reduction_cutoff)?;
    let cluster_cutoff = args.cluster_cutoff.map(|c| check_cutoff("cluster cutoff", c)).transpose()?;
    let mut session = args.session.as_deref().map(load_session).transpose()?;
    let dataset = load(&args.input)?;
    let analysis = build(dataset, &args.input, reduction_cutoff)?;
    let cutoff = cluster_cutoff.unwrap_or_else(|| default_cluster_cutoff(&analysis));
    let mut session = session.take().unwrap_or_else(|| Session::new(analysis.dataset.content_hash(), reduction_cutoff, cutoff));
    session.reduction_cutoff = reduction_cutoff;
    session.cluster_cutoff = cutoff;
    for line in session.validate(&analysis).lines() {
        eprintln!("warning: {line}");
    }
    let clusters = flat_roots(&analysis.hierarchy.tree, cutoff).len();
    println!("clusters   {clusters} at cutoff {cutoff:.6}");
    let t = Instant::now();
    let out = export_all(&session, &analysis, &args.out).map_err(other("export"))?;
    let leaf_folders = out.leaf_folders();
    stage(
        "export",
        t,
        format_args!(
            "leaf_folders={} transitions={} -> {}",
            leaf_folders.len(),
            leaf_folders.iter().map(|f| f.transitions.len()).sum::<usize>(),
            out.path.display()
        ),
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let session = load_session(&args.session)?;
    let dataset = load(&args.input)?;
    let analysis = build(dataset, &args.input, session.reduction_cutoff)?;
    let t = Instant::now();
    let out = export_scratchpad(&session, &analysis, &args.out).map_err(other("report"))?;
    for line in out.stale.lines() {
        eprintln!("warning: {line}");
    }
    stage(
        "report",
        t,
        format_args!(
            "folders={} files={} report={}",
            out.folders.len(),
            out.files.len(),
            out.report.display()
        ),
    );
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    if let Some(s) = args.sigma {
        if !(s.is_finite() && s > 0.0) {
            return Err(Failure::Input(anyhow!("sigma must be positive, got {s}")));
        }
    }
    let existing = match &args.session {
        Some(p) if p.exists() => Some(load_session(p)?),
        _ => None,
    };
    let reduction_cutoff = check_cutoff(
        "reduction cutoff",
        args.reduction_cutoff
            .or(existing.as_ref().map(|s| s.reduction_cutoff))
            .unwrap_or(0.0),
    )?;
    let dataset = load(&args.input)?;
    let analysis = build(dataset, &args.input, reduction_cutoff)?;
    let mut session = existing
        .unwrap_or_else(|| Session::new(analysis.dataset.content_hash(), reduction_cutoff, default_cluster_cutoff(&analysis)));
    if let Some(c) = args.cluster_cutoff {
        session.cluster_cutoff = check_cutoff("cluster cutoff", c)?;
    }
    let config = ServeConfig {
        sigma: args.sigma,
        glyphs: GlyphParams::default(),
        export_dir: args.out.clone(),
        session_path: args.session.clone(),
    };
    let (state, stale) = AppState::new(analysis, session, config);
    for line in stale.lines() {
        eprintln!("warning: {line}");
    }
    let addr = SocketAddr::new(args.host, args.port);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(other("runtime"))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))
            .map_err(other("serve"))?;
        println!("listening on http://{}", listener.local_addr().map_err(other("serve"))?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(other("serve"))
    })
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let t = Instant::now();
    let dataset = match args.kind {
        SynthKind::TwoMotif => {
            if !(args.jitter.is_finite() && args.jitter >= 0.0) {
                return Err(Failure::Input(anyhow!("jitter must be finite and >= 0")));
            }
            two_motif_dataset_jittered(args.count, args.features, args.jitter, args.seed)
                .map_err(other("synth"))?
                .0
        }
        SynthKind::Duplicates => {
            if args.count == 0 || args.atoms < 4 {
                return Err(Failure::Input(anyhow!("need at least one transition of four atoms")));
            }
            let pool = (1..).find(|p: &usize| p * (p - 1) >= 2 * args.count).unwrap().max(2);
            duplicate_ensemble(args.count, args.duplicates, args.atoms, args.features, pool, args.seed)
                .map_err(other("synth"))?
                .0
        }
    };
    let manifest = write_dataset(&dataset, &args.out).map_err(other("synth"))?;
    stage(
        "synth",
        t,
        format_args!("transitions={} -> {}", dataset.len(), manifest.display()),
    );
    Ok(())
}
