//! `facetgt`: batch front end for the annotation service.
//!
//! Every command talks to the service over HTTP. Without `--server` an
//! embedded service is started on a loopback port for the duration of the
//! command, backed by the `--store` directory (or memory).

mod batch;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use facetgt_client::Client;
use facetgt_core::api::{AttestRequest, CategorizeRequest, ImportRequest, MediaFlaw, NewConcept, PrecomputedImport};
use facetgt_core::canon::{Severity, ValidationReport};
use facetgt_core::io::{self, HierarchyDoc, ManifestMode, ManifestRequest, SplitSpec};
use facetgt_core::{
    fixtures, Atom, AnnotatorId, CategorizerConfig, Differentia, FacetId, FlawKind, MediaId, Mode, Observation,
    PropertyAssertion, ValueSet,
};
use facetgt_service::{AppState, ServiceConfig};
use serde::Deserialize;

/// Environment variable that takes precedence over `--store`.
const STORE_ENV: &str = "WORKBENCH_STORE";

#[derive(Debug, Parser)]
#[command(name = "facetgt", version, about = "Faceted ground-truth curation: hierarchies, annotation, flaws and agreement")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Store directory (hierarchy file + annotation log). Overridden by
    /// WORKBENCH_STORE.
    #[arg(long, global = true, value_name = "PATH")]
    store: Option<PathBuf>,
    /// Hierarchy file to install (compare-and-set) before running the command.
    #[arg(long, global = true, value_name = "PATH")]
    hierarchy: Option<PathBuf>,
    /// Seed for the train/test split.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Talk to a running service instead of starting an embedded one.
    #[arg(long, global = true, value_name = "URL")]
    server: Option<String>,
    /// Print JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest media.
    #[command(subcommand)]
    Import(ImportCmd),
    /// Check the hierarchy against the canons; exits 1 when any error-level
    /// violation is found.
    Validate,
    /// Run annotation sessions from batch files of steps.
    Annotate(AnnotateArgs),
    /// Assign dataset flaw categories and print per-category counts.
    Categorize {
        /// Store the computed categories on the media.
        #[arg(long)]
        persist: bool,
        #[arg(long)]
        csv: bool,
    },
    /// Inter-annotator agreement.
    Stats(StatsArgs),
    /// Write a train/test manifest.
    Export(ExportArgs),
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Inspect or change the hierarchy.
    #[command(subcommand)]
    Hierarchy(HierarchyCmd),
    /// List media or set their flaw category.
    #[command(subcommand)]
    Media(MediaCmd),
}

#[derive(Debug, Subcommand)]
enum ImportCmd {
    /// A category file: {"categories": [{"label", "gloss", "images"}]}.
    Imagenet {
        file: PathBuf,
        /// Image index (one reference per line); unlisted images are skipped.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Media stamped with expert flaw counts (defaults to the bundled
    /// nine-category corpus).
    Precomputed {
        /// CSV with category,flaw,original,ue columns.
        #[arg(long)]
        counts: Option<PathBuf>,
        /// CSV with category,size columns.
        #[arg(long)]
        sizes: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    /// Batch files (JSON or JSON lines).
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Annotator for files that are bare step lists.
    #[arg(long)]
    annotator: Option<String>,
    #[arg(long, default_value = "eng")]
    language: String,
    #[arg(long, default_value = "via-differentia")]
    mode: Mode,
    /// Continue after a failed step.
    #[arg(long)]
    keep_going: bool,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Restrict to media of one flaw category (e.g. single-object).
    #[arg(long)]
    scope: Option<FlawKind>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Comma-separated annotators, listed first.
    #[arg(long, value_delimiter = ',')]
    annotators: Vec<String>,
    /// Analyse a count grid file instead of the store's records.
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long, default_value = "dataset-label")]
    mode: ManifestMode,
    /// Media in the test split.
    #[arg(long, default_value_t = 0)]
    test: usize,
    /// Media in the train split; defaults to everything not in test.
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    no_stratify: bool,
    /// Comma-separated media ids; all media when absent.
    #[arg(long, value_delimiter = ',')]
    include: Vec<u64>,
    #[arg(long)]
    csv: bool,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum HierarchyCmd {
    /// Print the hierarchy document.
    Show,
    /// Replace the hierarchy (compare-and-set against --expect-version, or
    /// the current version).
    Put {
        file: PathBuf,
        #[arg(long)]
        expect_version: Option<u64>,
    },
    /// Add a child concept.
    AddConcept {
        #[arg(long)]
        parent: String,
        /// facet=value[,value...]
        #[arg(long = "assert", value_name = "FACET=VALUES")]
        assertion: String,
        #[arg(long)]
        gloss: Option<String>,
        #[arg(long)]
        expect_version: Option<u64>,
    },
    /// Attest that facets are relevant to the hierarchy's purpose.
    Attest {
        #[arg(required = true)]
        facets: Vec<String>,
        #[arg(long)]
        attestor: String,
    },
    /// Classify an observation without recording it.
    Preview {
        /// facet=value[,value...], repeatable.
        #[arg(long = "assert", value_name = "FACET=VALUES")]
        assertions: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
enum MediaCmd {
    List,
    /// Set a media item's flaw category by hand.
    Flaw { media: u64, kind: FlawKind },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CliConfig {
    categorizer: Option<CategorizerConfig>,
}

impl CliConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: CliConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(c) = &cfg.categorizer {
            c.validate()?;
        }
        Ok(cfg)
    }
}

fn store_dir(flag: Option<&Path>) -> Option<PathBuf> {
    std::env::var_os(STORE_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| flag.map(Path::to_path_buf))
}

fn service_config(g: &Global, cfg: &CliConfig) -> ServiceConfig {
    ServiceConfig {
        store_dir: store_dir(g.store.as_deref()),
        categorizer: cfg.categorizer.clone().unwrap_or_default(),
    }
}

async fn connect(g: &Global, cfg: &CliConfig) -> Result<Client> {
    let client = match &g.server {
        Some(url) => Client::new(url.clone()),
        None => {
            let state = AppState::open(service_config(g, cfg))?;
            let addr = facetgt_service::spawn(SocketAddr::from(([127, 0, 0, 1], 0)), state).await?;
            Client::new(format!("http://{addr}"))
        }
    };
    if let Some(path) = &g.hierarchy {
        install_hierarchy(&client, path).await?;
    }
    Ok(client)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_hierarchy_doc(path: &Path) -> Result<HierarchyDoc> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing hierarchy file {}", path.display()))
}

/// Installs a hierarchy file unless the service already holds the same
/// content.
async fn install_hierarchy(client: &Client, path: &Path) -> Result<()> {
    let doc = read_hierarchy_doc(path)?;
    let current = client.hierarchy().await?;
    let strip = |d: &HierarchyDoc| -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(d)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("version");
        }
        Ok(v)
    };
    if strip(&doc)? == strip(&current)? {
        return Ok(());
    }
    let r = client.put_hierarchy(&doc, current.version).await?;
    for w in r.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// `facet=v1,v2` with integers where they parse.
fn parse_assertion(s: &str) -> Result<PropertyAssertion> {
    let (facet, values) = s
        .split_once('=')
        .with_context(|| format!("`{s}` is not facet=value"))?;
    let atoms = values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(|v| match v.parse::<i64>() {
        Ok(i) => Atom::Int(i),
        Err(_) => Atom::Token(v.to_string()),
    });
    let value = ValueSet::new(atoms).with_context(|| format!("`{s}` has no values"))?;
    Ok(PropertyAssertion::new(FacetId::new(facet.trim()), value))
}

fn print_validation(report: &ValidationReport) {
    for v in &report.violations {
        let sev = match v.severity() {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        let facet = v.facet.as_ref().map(|f| f.as_str()).unwrap_or("-");
        let code = serde_json::to_value(v.code).ok().and_then(|c| c.as_str().map(str::to_string)).unwrap_or_default();
        println!("{sev:<8} {code} {} {facet}: {}", v.node_ref, v.detail);
    }
    for c in &report.coverage {
        println!(
            "coverage {}: {}/{} matched, {} unmatched, {} ambiguous ({:.1}%)",
            c.parent,
            c.matched,
            c.total,
            c.unmatched,
            c.ambiguous,
            100.0 * c.coverage_ratio
        );
    }
    println!(
        "{} error(s), {} warning(s) (hierarchy version {})",
        report.errors, report.warnings, report.hierarchy_version
    );
}

async fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    let cfg = CliConfig::load(g.config.as_deref())?;
    if let Command::Serve { addr } = &cli.command {
        return serve(g, &cfg, *addr).await;
    }
    let client = connect(g, &cfg).await?;
    match cli.command {
        Command::Serve { .. } => unreachable!("handled above"),
        Command::Import(ImportCmd::Imagenet { file, index }) => {
            let categories = io::read_category_file(&read(&file)?)?;
            let image_index = match index {
                Some(p) => Some(io::read_image_index(&read(&p)?).into_iter().collect()),
                None => None,
            };
            let report = client.import_imagenet(&ImportRequest { categories, image_index }).await?;
            if g.json {
                print_json(&report)?;
            } else {
                for w in &report.warnings {
                    eprintln!("warning: {w}");
                }
                for (cat, n) in &report.counts {
                    println!("{cat}\t{n}");
                }
                println!("imported {} media", report.total());
            }
        }
        Command::Import(ImportCmd::Precomputed { counts, sizes }) => {
            let counts = match counts {
                Some(p) => read(&p)?,
                None => fixtures::TABLE2_CSV.to_string(),
            };
            let sizes = match sizes {
                Some(p) => parse_sizes(&read(&p)?)?,
                None => fixtures::CORPUS_CATEGORIES.iter().map(|(c, n)| (c.to_string(), *n)).collect(),
            };
            let items = client.import_precomputed(&PrecomputedImport { counts, sizes }).await?;
            if g.json {
                print_json(&items)?;
            } else {
                println!("imported {} media", items.len());
            }
        }
        Command::Validate => {
            let report = client.validation().await?;
            if g.json {
                print_json(&report)?;
            } else {
                print_validation(&report);
            }
            if report.has_errors() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Annotate(args) => {
            let ok = batch::run(&client, &args, g.json).await?;
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Categorize { persist, csv } => {
            let resp = client
                .categorize(&CategorizeRequest {
                    config: cfg.categorizer.clone(),
                    persist,
                })
                .await?;
            if g.json {
                print_json(&resp)?;
            } else if csv {
                print!("{}", resp.report.to_csv());
            } else {
                print!("{}", resp.report);
                for (m, why) in &resp.report.skipped {
                    eprintln!("unassigned media {m}: {why}");
                }
            }
        }
        Command::Stats(args) => {
            let resp = match &args.grid {
                Some(p) => client.agreement_from_grid(&read(p)?, args.mode).await?,
                None => {
                    let ids: Vec<AnnotatorId> = args.annotators.iter().map(AnnotatorId::new).collect();
                    client
                        .agreement(args.scope, args.mode, (!ids.is_empty()).then_some(ids.as_slice()))
                        .await?
                }
            };
            if g.json {
                print_json(&resp)?;
            } else {
                print!("{}", resp.matrix.to_csv());
                println!();
                match &resp.report {
                    Some(r) => print!("{r}"),
                    None => println!("{}", resp.note.as_deref().unwrap_or("no statistics")),
                }
                if let Some(o) = &resp.outlier {
                    println!(
                        "outlier: {} (mean of row SDs {:.4} -> {:.4} with the column replaced by the others' mean)",
                        o.annotator,
                        o.mean_of_row_sds_after + o.reduction,
                        o.mean_of_row_sds_after
                    );
                }
            }
        }
        Command::Export(args) => export(&client, g, args).await?,
        Command::Hierarchy(cmd) => hierarchy(&client, g, cmd).await?,
        Command::Media(MediaCmd::List) => {
            let items = client.media().await?;
            if g.json {
                print_json(&items)?;
            } else {
                for m in items {
                    println!(
                        "{}\t{}\t{}\t{:?}\t{}",
                        m.media_id,
                        m.source_ref,
                        m.dataset_label.as_deref().unwrap_or("-"),
                        m.stage,
                        m.flaw.map(FlawKind::label).unwrap_or("-")
                    );
                }
            }
        }
        Command::Media(MediaCmd::Flaw { media, kind }) => {
            let item = client
                .assign_flaw(&MediaFlaw {
                    media_id: MediaId(media),
                    flaw: kind,
                })
                .await?;
            print_json(&item)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_sizes(text: &str) -> Result<Vec<(String, usize)>> {
    #[derive(Deserialize)]
    struct Row {
        category: String,
        size: usize,
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("category")) {
            continue;
        }
        let (c, n) = line.rsplit_once(',').with_context(|| format!("sizes line {}: expected category,size", i + 1))?;
        let row = Row {
            category: c.trim().to_string(),
            size: n.trim().parse().with_context(|| format!("sizes line {}: bad size", i + 1))?,
        };
        out.push((row.category, row.size));
    }
    Ok(out)
}

async fn export(client: &Client, g: &Global, args: ExportArgs) -> Result<()> {
    let include: Option<Vec<MediaId>> = (!args.include.is_empty()).then(|| args.include.iter().map(|&i| MediaId(i)).collect());
    let train = match args.train {
        Some(t) => t,
        None => {
            let n = match &include {
                Some(ids) => ids.iter().collect::<std::collections::BTreeSet<_>>().len(),
                None => client.media().await?.len(),
            };
            n.checked_sub(args.test)
                .with_context(|| format!("--test {} exceeds the {n} media", args.test))?
        }
    };
    let request = ManifestRequest {
        mode: args.mode,
        split: SplitSpec {
            train,
            test: args.test,
            seed: g.seed,
            stratify: !args.no_stratify,
        },
        include,
    };
    let text = if args.csv {
        client.export_manifest_csv(&request).await?
    } else {
        client.export_manifest(&request).await?.to_json()
    };
    match &args.out {
        Some(path) => {
            io::write_atomic(path, text.as_bytes())?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

async fn hierarchy(client: &Client, g: &Global, cmd: HierarchyCmd) -> Result<()> {
    match cmd {
        HierarchyCmd::Show => print_json(&client.hierarchy().await?)?,
        HierarchyCmd::Put { file, expect_version } => {
            let doc = read_hierarchy_doc(&file)?;
            let expected = match expect_version {
                Some(v) => v,
                None => client.hierarchy().await?.version,
            };
            let r = client.put_hierarchy(&doc, expected).await?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            println!("hierarchy version {}", r.hierarchy_version);
        }
        HierarchyCmd::AddConcept {
            parent,
            assertion,
            gloss,
            expect_version,
        } => {
            let expected_version = match expect_version {
                Some(v) => v,
                None => client.hierarchy().await?.version,
            };
            let created = client
                .add_concept(&NewConcept {
                    expected_version,
                    parent: parent.parse()?,
                    differentia: Differentia::new([parse_assertion(&assertion)?])?,
                    gloss,
                })
                .await?;
            if g.json {
                print_json(&created)?;
            } else {
                println!("{} (hierarchy version {})", created.node.path_index, created.hierarchy_version);
            }
        }
        HierarchyCmd::Attest { facets, attestor } => {
            let r = client
                .attest(&AttestRequest {
                    facets: facets.iter().map(|f| FacetId::new(f.as_str())).collect(),
                    attestor: Some(AnnotatorId::new(attestor)),
                })
                .await?;
            print_json(&r)?;
        }
        HierarchyCmd::Preview { assertions } => {
            let observed: Observation = assertions.iter().map(|a| parse_assertion(a)).collect::<Result<_>>()?;
            print_json(&client.preview(&observed).await?)?;
        }
    }
    Ok(())
}

async fn serve(g: &Global, cfg: &CliConfig, addr: SocketAddr) -> Result<ExitCode> {
    let state = AppState::open(service_config(g, cfg))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    let bound = listener.local_addr()?;
    let server = tokio::spawn(facetgt_service::serve(listener, state));
    if let Some(path) = &g.hierarchy {
        install_hierarchy(&Client::new(format!("http://{bound}")), path).await?;
    }
    println!("listening on http://{bound}");
    std::io::stdout().flush()?;
    tokio::select! {
        r = server => r??,
        r = tokio::signal::ctrl_c() => r?,
    }
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
