//! Command-line surface: ingest, treefit, test, pairwise, heatmap, simulate.
//!
//! Every artifact embeds a [`RunManifest`] (command, resolved settings,
//! SHA-256 of each input keyed by file name, tool version, seed) and is
//! written to a temporary file first, then renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dirichlet::FitOptions;
use crate::error::{Error, Result};
use crate::lrt::{overall_lrt, pairwise_tests, OverallTestResult, PairwiseReport};
use crate::ndd::{ndd_fit, FittedModel, Tree, TreeNodeSpec};
use crate::report;
use crate::simlab::{run_study, StudyConfig, StudyResult};
use crate::simplex::{
    aggregate_14_to_6, descriptive_proportions, pearson_correlation, AgeGrouping, ComponentSchema, CorrelationMatrix,
    GroupKey, OutcomeCounts, Panel, PanelRow, ProportionTable, RowMeta, DEFAULT_MIN_TOTAL, DEFAULT_SMOOTHING,
    RAW14_COMPONENTS, SIX_COMPONENTS,
};
use crate::treesearch::{find_tree, Criterion, SearchConfig, SearchTrace};
use crate::FORMAT_VERSION;

pub const TOOL_VERSION: &str = concat!("ldm ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "ldm", version, about = "Nested Dirichlet fitting, testing and tree search for compositional count data")]
pub struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a plate-appearance CSV into a panel.
    Ingest(IngestArgs),
    /// Search a tree and fit it to a panel.
    Treefit(TreefitArgs),
    /// Overall likelihood-ratio test across groups, split by layer.
    Test(TestArgs),
    /// The test for every pair of groups.
    Pairwise(PairwiseArgs),
    /// Correlation heatmaps, pooled and per group.
    Heatmap(HeatmapArgs),
    /// Monte-Carlo rejection-rate study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaKind {
    Raw14,
    Six,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    #[serde(skip)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "raw14")]
    pub schema: SchemaKind,
    #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
    pub smoothing: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_TOTAL)]
    pub min_pa: u64,
    #[arg(long)]
    pub season: Option<i32>,
    /// Abort on the first malformed row instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, default_value_t = 26)]
    pub young_max: u32,
    #[arg(long, default_value_t = 35)]
    pub experienced_min: u32,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TreefitArgs {
    #[arg(long)]
    #[serde(skip)]
    pub panel: PathBuf,
    #[arg(long, default_value = "bic")]
    pub criterion: Criterion,
    #[arg(long, default_value_t = 12)]
    pub max_exhaustive_k: usize,
    /// Overrides the smoothing recorded in the panel.
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Grouping for the per-group branch annotations.
    #[arg(long, default_value = "age_group")]
    pub group_by: GroupKey,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Also write the search trace as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub trace_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TestArgs {
    #[arg(long)]
    #[serde(skip)]
    pub panel: PathBuf,
    /// Tree JSON (a treefit output or a bare tree), or `baseball` for the
    /// built-in six-outcome tree.
    #[arg(long)]
    #[serde(skip)]
    pub tree: String,
    #[arg(long, default_value = "age_group")]
    pub group_by: GroupKey,
    #[arg(long)]
    pub season: Option<i32>,
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PairwiseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub test: TestArgs,
    /// Report Bonferroni-adjusted p-values.
    #[arg(long)]
    pub bonferroni: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapFormat {
    Svg,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HeatmapArgs {
    #[arg(long)]
    #[serde(skip)]
    pub panel: PathBuf,
    #[arg(long, default_value = "age_group")]
    pub by: GroupKey,
    #[arg(long, value_enum, default_value = "svg")]
    pub format: HeatmapFormat,
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Also write per-replication statistics as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub lambdas_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// SHA-256 of each input file, keyed by file name.
    pub inputs: BTreeMap<String, String>,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RunManifest {
    fn new(command: &str, config: &impl Serialize, inputs: &[(&Path, &[u8])], seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            config: serde_json::to_value(config)?,
            inputs: inputs
                .iter()
                .map(|(p, bytes)| (file_name(p), sha256_hex(bytes)))
                .collect(),
            tool_version: TOOL_VERSION.into(),
            seed,
        })
    }

    fn comment_line(&self) -> Result<String> {
        Ok(format!("# manifest: {}\n", serde_json::to_string(self)?))
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedRow {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub malformed: Vec<MalformedRow>,
    pub dropped_season: usize,
    pub dropped_min_pa: usize,
    pub kept: usize,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub schema: SchemaKind,
    pub min_pa: u64,
    pub season: Option<i32>,
    pub strict: bool,
    pub ages: AgeGrouping,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            schema: SchemaKind::Raw14,
            min_pa: DEFAULT_MIN_TOTAL,
            season: None,
            strict: false,
            ages: AgeGrouping::default(),
        }
    }
}

const META_COLUMNS: [&str; 5] = ["player_id", "season", "age", "bat_hand", "pitch_hand"];

/// Parses a header-led CSV into a six-component panel. Malformed rows
/// are skipped and reported, or abort the read in strict mode.
pub fn read_panel_csv(input: impl Read, opts: &IngestOptions) -> Result<(Panel, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let count_names: &[&str] = match opts.schema {
        SchemaKind::Raw14 => &RAW14_COMPONENTS,
        SchemaKind::Six => &SIX_COMPONENTS,
    };
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("missing column {name:?}")))
    };
    let meta_idx = META_COLUMNS
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let count_idx = count_names
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let raw_schema = match opts.schema {
        SchemaKind::Raw14 => Some(ComponentSchema::raw14()),
        SchemaKind::Six => None,
    };

    let mut report = IngestReport::default();
    let mut rows = Vec::new();
    for record in reader.records() {
        report.rows_read += 1;
        let parsed = record.map_err(Error::from).and_then(|rec| {
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |message: String| Error::MalformedRow { line, message };
            let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("missing field {}", i + 1)));
            let meta = RowMeta {
                player_id: field(meta_idx[0])?.to_string(),
                season: field(meta_idx[1])?
                    .parse()
                    .map_err(|e| bad(format!("season: {e}")))?,
                age: field(meta_idx[2])?.parse().map_err(|e| bad(format!("age: {e}")))?,
                bat_hand: field(meta_idx[3])?.to_string(),
                pitch_hand: field(meta_idx[4])?.to_string(),
            };
            let counts = count_idx
                .iter()
                .zip(count_names)
                .map(|(&i, name)| {
                    field(i)?
                        .parse::<u64>()
                        .map_err(|e| bad(format!("{name}: {e}")))
                })
                .collect::<Result<Vec<u64>>>()?;
            let counts = match &raw_schema {
                Some(s) => aggregate_14_to_6(s, &OutcomeCounts(counts))?,
                None => OutcomeCounts(counts),
            };
            Ok(PanelRow {
                group: opts.ages.assign(meta.age).label().to_string(),
                meta,
                counts,
            })
        });
        match parsed {
            Ok(row) => rows.push(row),
            Err(e) if opts.strict => return Err(e),
            Err(e) => {
                let (line, message) = match e {
                    Error::MalformedRow { line, message } => (line, message),
                    Error::Csv(ref c) => (c.position().map_or(0, |p| p.line()), e.to_string()),
                    other => (0, other.to_string()),
                };
                log::warn!("skipping malformed row at line {line}: {message}");
                report.malformed.push(MalformedRow { line, message });
            }
        }
    }
    let mut panel = Panel::new(ComponentSchema::six(), rows)?;
    if let Some(season) = opts.season {
        let before = panel.len();
        panel = panel.filter_season(season);
        report.dropped_season = before - panel.len();
    }
    let (panel, dropped) = panel.filter_min_total(opts.min_pa);
    report.dropped_min_pa = dropped;
    report.kept = panel.len();
    Ok((panel, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelFile {
    pub format_version: u32,
    pub manifest: RunManifest,
    pub smoothing: f64,
    pub ingest: IngestReport,
    pub proportions: ProportionTable,
    pub panel: Panel,
}

/// Branch proportion on the edge above `node`, pooled and per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchAnnotation {
    pub node: String,
    pub parent: String,
    pub pooled: f64,
    pub groups: Vec<GroupShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub group: String,
    /// `None` when the group's own fit failed.
    pub share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub format_version: u32,
    pub manifest: RunManifest,
    pub criterion: Criterion,
    pub tree: TreeNodeSpec,
    pub n: usize,
    pub loglik: f64,
    pub score: f64,
    pub baseline_loglik: f64,
    pub baseline_score: f64,
    pub model: FittedModel,
    pub branches: Vec<BranchAnnotation>,
    pub trace: SearchTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFile {
    pub format_version: u32,
    pub manifest: RunManifest,
    pub group_by: GroupKey,
    pub result: OverallTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseFile {
    pub format_version: u32,
    pub manifest: RunManifest,
    pub group_by: GroupKey,
    pub pairs: Vec<PairwiseReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyFile {
    pub format_version: u32,
    pub manifest: RunManifest,
    pub config: StudyConfig,
    pub result: StudyResult,
}

/// A file to write and its contents.
pub type Artifact = (PathBuf, Vec<u8>);

/// Output of one command: files to write and the text for stdout.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub summary: String,
}

fn check_version(v: u32, what: &str) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Config(format!(
            "{what} has format_version {v}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

fn load_panel(path: &Path) -> Result<(PanelFile, Vec<u8>)> {
    let bytes = read_input(path)?;
    let file: PanelFile = serde_json::from_slice(&bytes)?;
    check_version(file.format_version, "panel")?;
    Ok((file, bytes))
}

fn smoothing_of(arg: Option<f64>, file: &PanelFile) -> f64 {
    arg.unwrap_or(file.smoothing)
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<Outcome> {
    let bytes = read_input(&args.input)?;
    let opts = IngestOptions {
        schema: args.schema,
        min_pa: args.min_pa,
        season: args.season,
        strict: args.strict,
        ages: AgeGrouping::new(args.young_max, args.experienced_min)?,
    };
    if !(args.smoothing >= 0.0 && args.smoothing.is_finite()) {
        return Err(Error::Config(format!("smoothing must be >= 0, got {}", args.smoothing)));
    }
    let (panel, ingest) = read_panel_csv(bytes.as_slice(), &opts)?;
    if panel.is_empty() {
        return Err(Error::InsufficientData("no rows left after filtering".into()));
    }
    let proportions = descriptive_proportions(&panel, GroupKey::AgeGroup)?;
    let mut summary = format!(
        "read {} rows: {} kept, {} malformed, {} outside season, {} below min-pa\n",
        ingest.rows_read,
        ingest.kept,
        ingest.malformed.len(),
        ingest.dropped_season,
        ingest.dropped_min_pa
    );
    for m in &ingest.malformed {
        let _ = writeln!(summary, "  line {}: {}", m.line, m.message);
    }
    summary.push_str(&report::proportion_table(&proportions));
    let file = PanelFile {
        format_version: FORMAT_VERSION,
        manifest: RunManifest::new("ingest", args, &[(&args.input, &bytes)], None)?,
        smoothing: args.smoothing,
        ingest,
        proportions,
        panel,
    };
    Ok(Outcome {
        artifacts: vec![(args.out.clone(), to_json(&file)?)],
        summary,
    })
}

fn branch_annotations(panel: &Panel, tree: &Tree, key: GroupKey, smoothing: f64) -> Result<Vec<BranchAnnotation>> {
    let pooled = ndd_fit(panel, tree, smoothing)?;
    let mut per_group = Vec::new();
    for g in panel.group_labels(key) {
        let fit = ndd_fit(&panel.subset(key, &g), tree, smoothing);
        if let Err(e) = &fit {
            log::warn!("no branch proportions for group {g:?}: {e}");
        }
        per_group.push((g, fit.ok()));
    }
    let mut out = Vec::new();
    for (layer_idx, &v) in tree.interior_nodes().iter().enumerate() {
        for (ci, &c) in tree.node(v).children.iter().enumerate() {
            out.push(BranchAnnotation {
                node: tree.node(c).name.clone(),
                parent: tree.node(v).name.clone(),
                pooled: pooled.layers[layer_idx].fit.params.mean[ci],
                groups: per_group
                    .iter()
                    .map(|(g, f)| GroupShare {
                        group: g.clone(),
                        share: f.as_ref().map(|f| f.layers[layer_idx].fit.params.mean[ci]),
                    })
                    .collect(),
            });
        }
    }
    Ok(out)
}

fn render_tree(tree: &Tree, branches: &[BranchAnnotation]) -> String {
    let by_node: BTreeMap<&str, &BranchAnnotation> = branches.iter().map(|b| (b.node.as_str(), b)).collect();
    let mut out = String::new();
    fn walk(tree: &Tree, id: usize, depth: usize, by_node: &BTreeMap<&str, &BranchAnnotation>, out: &mut String) {
        let node = tree.node(id);
        let _ = write!(out, "{}{}", "  ".repeat(depth), node.name);
        if let Some(b) = by_node.get(node.name.as_str()) {
            let groups: Vec<String> = b
                .groups
                .iter()
                .map(|g| format!("{} {}", g.group, g.share.map_or("-".to_string(), |p| format!("{p:.3}"))))
                .collect();
            let _ = write!(out, "  {:.3} ({})", b.pooled, groups.join(", "));
        }
        out.push('\n');
        for &c in &node.children {
            walk(tree, c, depth + 1, by_node, out);
        }
    }
    walk(tree, tree.root(), 0, &by_node, &mut out);
    out
}

pub fn cmd_treefit(args: &TreefitArgs) -> Result<Outcome> {
    let (file, bytes) = load_panel(&args.panel)?;
    let smoothing = smoothing_of(args.smoothing, &file);
    let config = SearchConfig {
        criterion: args.criterion,
        max_exhaustive_k: args.max_exhaustive_k,
        smoothing,
        fit: FitOptions::default(),
    };
    let found = find_tree(&file.panel, &config)?;
    let model = ndd_fit(&file.panel, &found.tree, smoothing)?.to_model()?;
    let branches = branch_annotations(&file.panel, &found.tree, args.group_by, smoothing)?;
    let mut resolved = serde_json::to_value(args)?;
    resolved["smoothing"] = serde_json::json!(smoothing);
    let manifest = RunManifest::new("treefit", &resolved, &[(&args.panel, &bytes)], None)?;
    let summary = format!(
        "{} = {:.3} (flat {:.3}), n = {}\n{}",
        args.criterion,
        found.score,
        found.baseline_score,
        found.n,
        render_tree(&found.tree, &branches)
    );
    let mut artifacts = Vec::new();
    if let Some(path) = &args.trace_csv {
        let mut csv = manifest.comment_line()?;
        csv.push_str(&found.trace.to_csv());
        artifacts.push((path.clone(), csv.into_bytes()));
    }
    let out = TreeFile {
        format_version: FORMAT_VERSION,
        manifest,
        criterion: args.criterion,
        tree: found.tree.to_spec(),
        n: found.n,
        loglik: found.loglik,
        score: found.score,
        baseline_loglik: found.baseline_loglik,
        baseline_score: found.baseline_score,
        model,
        branches,
        trace: found.trace,
    };
    artifacts.insert(0, (args.out.clone(), to_json(&out)?));
    Ok(Outcome { artifacts, summary })
}

/// Resolves `--tree`: `baseball`, a treefit output, or a bare tree spec.
/// Returns the tree and the bytes read, if any.
pub fn load_tree(arg: &str, schema: &ComponentSchema) -> Result<(Tree, Option<Vec<u8>>)> {
    if arg == "baseball" {
        return Ok((Tree::from_spec(&crate::baseball_tree_spec(SIX_COMPONENTS), schema)?, None));
    }
    let bytes = read_input(Path::new(arg))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    let spec_value = match value.get("tree") {
        Some(t) if value.get("format_version").is_some() => t.clone(),
        _ => value,
    };
    let spec: TreeNodeSpec = serde_json::from_value(spec_value)?;
    Ok((Tree::from_spec(&spec, schema)?, Some(bytes)))
}

struct TestInputs {
    panel: Panel,
    tree: Tree,
    smoothing: f64,
    manifest_inputs: Vec<(PathBuf, Vec<u8>)>,
}

fn test_inputs(args: &TestArgs) -> Result<TestInputs> {
    let (file, bytes) = load_panel(&args.panel)?;
    let smoothing = smoothing_of(args.smoothing, &file);
    let panel = match args.season {
        Some(s) => file.panel.filter_season(s),
        None => file.panel,
    };
    let (tree, tree_bytes) = load_tree(&args.tree, &panel.schema)?;
    let mut manifest_inputs = vec![(args.panel.clone(), bytes)];
    if let Some(b) = tree_bytes {
        manifest_inputs.push((PathBuf::from(&args.tree), b));
    }
    Ok(TestInputs {
        panel,
        tree,
        smoothing,
        manifest_inputs,
    })
}

fn manifest_for(command: &str, args: &impl Serialize, tree: &str, smoothing: f64, inputs: &TestInputs) -> Result<RunManifest> {
    let mut resolved = serde_json::to_value(args)?;
    resolved["smoothing"] = serde_json::json!(smoothing);
    resolved["tree"] = serde_json::json!(if tree == "baseball" { "baseball".to_string() } else { file_name(Path::new(tree)) });
    let refs: Vec<(&Path, &[u8])> = inputs
        .manifest_inputs
        .iter()
        .map(|(p, b)| (p.as_path(), b.as_slice()))
        .collect();
    RunManifest::new(command, &resolved, &refs, None)
}

pub fn cmd_test(args: &TestArgs) -> Result<Outcome> {
    let inputs = test_inputs(args)?;
    let result = overall_lrt(&inputs.panel, &inputs.tree, args.group_by, inputs.smoothing)?;
    let manifest = manifest_for("test", args, &args.tree, inputs.smoothing, &inputs)?;
    let mut artifacts = Vec::new();
    if let Some(path) = &args.csv {
        let mut csv = manifest.comment_line()?;
        csv.push_str(&report::overall_csv(&result));
        artifacts.push((path.clone(), csv.into_bytes()));
    }
    let summary = report::overall_table(&result);
    let file = TestFile {
        format_version: FORMAT_VERSION,
        manifest,
        group_by: args.group_by,
        result,
    };
    artifacts.insert(0, (args.out.clone(), to_json(&file)?));
    Ok(Outcome { artifacts, summary })
}

pub fn cmd_pairwise(args: &PairwiseArgs) -> Result<Outcome> {
    let t = &args.test;
    let inputs = test_inputs(t)?;
    let pairs = pairwise_tests(&inputs.panel, &inputs.tree, t.group_by, inputs.smoothing, args.bonferroni)?;
    let manifest = manifest_for("pairwise", args, &t.tree, inputs.smoothing, &inputs)?;
    let mut artifacts = Vec::new();
    if let Some(path) = &t.csv {
        let mut csv = manifest.comment_line()?;
        csv.push_str(&report::pairwise_csv(&pairs));
        artifacts.push((path.clone(), csv.into_bytes()));
    }
    let summary = report::pairwise_table(&pairs);
    let file = PairwiseFile {
        format_version: FORMAT_VERSION,
        manifest,
        group_by: t.group_by,
        pairs,
    };
    artifacts.insert(0, (t.out.clone(), to_json(&file)?));
    Ok(Outcome { artifacts, summary })
}

pub fn cmd_heatmap(args: &HeatmapArgs) -> Result<Outcome> {
    let (file, bytes) = load_panel(&args.panel)?;
    let smoothing = smoothing_of(args.smoothing, &file);
    let mut panels: Vec<(String, CorrelationMatrix)> = vec![("pooled".into(), pearson_correlation(&file.panel, None, smoothing)?)];
    let mut summary = String::new();
    for g in file.panel.group_labels(args.by) {
        match pearson_correlation(&file.panel, Some((args.by, &g)), smoothing) {
            Ok(m) => panels.push((g, m)),
            Err(e) => {
                let _ = writeln!(summary, "skipping group {g}: {e}");
            }
        }
    }
    for (name, m) in &panels {
        let undefined = m.undefined_components();
        if !undefined.is_empty() {
            let _ = writeln!(summary, "{name}: undefined correlations for {}", undefined.join(", "));
        }
    }
    let mut resolved = serde_json::to_value(args)?;
    resolved["smoothing"] = serde_json::json!(smoothing);
    let manifest = RunManifest::new("heatmap", &resolved, &[(&args.panel, &bytes)], None)?;
    let contents = match args.format {
        HeatmapFormat::Csv => {
            let mut s = manifest.comment_line()?;
            s.push_str(&report::heatmap_csv(&panels));
            s
        }
        HeatmapFormat::Svg => report::heatmap_svg(&panels, &serde_json::to_string(&manifest)?),
    };
    let _ = writeln!(summary, "{} matrices", panels.len());
    Ok(Outcome {
        artifacts: vec![(args.out.clone(), contents.into_bytes())],
        summary,
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Outcome> {
    let bytes = read_input(&args.config)?;
    let config: StudyConfig = serde_json::from_slice(&bytes)?;
    config.validate()?;
    let result = run_study(&config)?;
    let manifest = RunManifest::new("simulate", &config, &[(&args.config, &bytes)], Some(config.seed))?;
    let summary = format!(
        "rejection rate {:.4} (MC s.e. {:.4}) over {} replications, {} failed, v = {}\n",
        result.rejection_rate,
        result.mc_se,
        result.replications,
        result.failures,
        result.v
    );
    let mut artifacts = Vec::new();
    if let Some(path) = &args.lambdas_csv {
        let mut csv = manifest.comment_line()?;
        csv.push_str(&result.lambdas_csv());
        artifacts.push((path.clone(), csv.into_bytes()));
    }
    let file = StudyFile {
        format_version: FORMAT_VERSION,
        manifest,
        config,
        result,
    };
    artifacts.insert(0, (args.out.clone(), to_json(&file)?));
    Ok(Outcome { artifacts, summary })
}

pub fn execute(command: &Command) -> Result<Outcome> {
    match command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Treefit(a) => cmd_treefit(a),
        Command::Test(a) => cmd_test(a),
        Command::Pairwise(a) => cmd_pairwise(a),
        Command::Heatmap(a) => cmd_heatmap(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Runs a parsed command line: computes everything first, then writes
/// each artifact atomically. Returns the summary text.
pub fn run(cli: &Cli) -> Result<String> {
    let work = || -> Result<String> {
        let outcome = execute(&cli.command)?;
        for (path, bytes) in &outcome.artifacts {
            write_atomic(path, bytes)?;
        }
        Ok(outcome.summary)
    };
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}
