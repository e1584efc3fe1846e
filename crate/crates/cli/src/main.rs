use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hrgg::census::{census, TreeSpec};
use hrgg::experiments::{run_experiment, ExperimentConfig, Mode};
use hrgg::graph::{build_euclidean_graph, build_hyperbolic_graph, Graph};
use hrgg::sampling::{sample_euclidean_cloud, sample_point_cloud, CloudMetadata, PointCloud};
use hrgg::theory::{a_gamma, expected_subtree_asymptotic, expected_subtree_full, regime_classify, variance_orders};
use hrgg::{Error, ModelParams, RadiusRule, RngStream};
use serde_json::json;

#[derive(Parser)]
#[command(name = "hrgg", version, about = "Hyperbolic random geometric graphs and their sub-tree counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Poisson point cloud; writes CSV plus a `.json` metadata sidecar.
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the graph of a point cloud and write it as an edge list.
    Build {
        /// Point CSV written by `sample`; its sidecar must sit next to it.
        #[arg(long, conflicts_with = "euclidean_n")]
        points: Option<PathBuf>,
        /// Keep only points of depth at most gamma R before building.
        #[arg(long, requires = "points")]
        gamma: Option<f64>,
        /// Sample a Euclidean ball cloud with this intensity instead.
        #[arg(long)]
        euclidean_n: Option<f64>,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        ball_radius: f64,
        /// Euclidean connection radius.
        #[arg(long, default_value_t = 0.1)]
        s: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count labelled copies of a tree.
    Census {
        /// Edge list written by `build`.
        #[arg(long, required_unless_present = "points", conflicts_with = "points")]
        graph: Option<PathBuf>,
        /// Point CSV; the graph is built on the fly and depths are available for `--gamma`.
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        tree: String,
        #[arg(long, requires = "points")]
        gamma: Option<f64>,
    },
    /// Evaluate the asymptotic formulas and regime flags.
    Theory {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        tree: String,
    },
    /// Run a Monte Carlo experiment.
    Experiment {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma separated intensities.
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<f64>>,
        #[arg(long)]
        tree: Option<String>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

/// Model parameters from `--config` JSON, overridden by individual flags.
#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    n: Option<f64>,
    /// `thermo:NU`, `log:C` or `explicit:R`.
    #[arg(long)]
    radius_rule: Option<RadiusRule>,
    #[arg(long)]
    gamma: Option<f64>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelParams> {
        let mut p = match &self.config {
            Some(path) => serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?,
            None => ModelParams::new(2, 1.0, 1.0, 1000.0, RadiusRule::Thermodynamic { nu: 1.0 })?,
        };
        p.d = self.d.unwrap_or(p.d);
        p.alpha = self.alpha.unwrap_or(p.alpha);
        p.zeta = self.zeta.unwrap_or(p.zeta);
        p.n = self.n.unwrap_or(p.n);
        p.radius_rule = self.radius_rule.unwrap_or(p.radius_rule);
        p.gamma = self.gamma.unwrap_or(p.gamma);
        p.validate()?;
        Ok(p)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// `edge`, `star:K`, `path:K`, inline JSON, or a path to a JSON file.
fn parse_tree(spec: &str) -> Result<TreeSpec> {
    let spec = spec.trim();
    if spec == "edge" {
        return Ok(TreeSpec::edge());
    }
    if let Some((kind, k)) = spec.split_once(':') {
        if let Ok(k) = k.parse::<usize>() {
            match kind {
                "star" => return Ok(TreeSpec::star(k)?),
                "path" => return Ok(TreeSpec::path(k)?),
                _ => {}
            }
        }
    }
    if spec.starts_with('{') {
        return Ok(TreeSpec::from_json_str(spec)?);
    }
    Ok(TreeSpec::from_json_str(&read(Path::new(spec))?)?)
}

fn sidecar(points: &Path) -> PathBuf {
    let mut s = points.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn load_cloud(points: &Path) -> Result<PointCloud> {
    let meta_path = sidecar(points);
    let meta: CloudMetadata =
        serde_json::from_str(&read(&meta_path)?).with_context(|| format!("parsing {}", meta_path.display()))?;
    let file = File::open(points).with_context(|| format!("opening {}", points.display()))?;
    Ok(PointCloud::read_csv(&meta, BufReader::new(file))?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample { model, seed, out } => {
            let cloud = sample_point_cloud(&model.resolve()?, seed)?;
            let mut w = create(&out)?;
            cloud.write_csv(&mut w)?;
            w.flush()?;
            fs::write(sidecar(&out), serde_json::to_string_pretty(&cloud.metadata())?)?;
            println!("{} points, R = {}", cloud.len(), cloud.radius);
        }
        Command::Build { points, gamma, euclidean_n, d, ball_radius, s, seed, out } => {
            let g: Graph = match (points, euclidean_n) {
                (Some(points), _) => {
                    let mut cloud = load_cloud(&points)?;
                    if let Some(gamma) = gamma {
                        cloud = cloud.restrict(gamma)?;
                    }
                    build_hyperbolic_graph(&cloud)
                }
                (None, Some(n)) => {
                    let cloud = sample_euclidean_cloud(n, ball_radius, d, &mut RngStream::new(seed, 0));
                    build_euclidean_graph(&cloud, s)?
                }
                (None, None) => bail!("pass --points or --euclidean-n"),
            };
            let mut w = create(&out)?;
            g.write_edge_list(&mut w)?;
            w.flush()?;
            println!("{} vertices, {} edges", g.num_vertices(), g.num_edges());
        }
        Command::Census { graph, points, tree, gamma } => {
            let tree = parse_tree(&tree)?;
            let g = match (graph, points) {
                (Some(path), _) => {
                    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
                    Graph::read_edge_list(BufReader::new(file))?
                }
                (None, Some(points)) => build_hyperbolic_graph(&load_cloud(&points)?),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let res = census(&g, &tree, gamma)?;
            println!("{}", json!({
                "count": res.count.to_string(),
                "tree": serde_json::from_str::<serde_json::Value>(&tree.to_json_string())?,
                "gamma": res.gamma,
                "vertices": g.num_vertices(),
                "edges": g.num_edges(),
                "elapsed_secs": res.elapsed_secs,
            }));
        }
        Command::Theory { model, tree } => {
            let params = model.resolve()?;
            let tree = parse_tree(&tree)?;
            let radius = params.radius();
            let a: Vec<f64> = (1..=tree.max_degree()).map(|p| a_gamma(p, &params, radius)).collect();
            let report = regime_classify(&tree, &params);
            // the full count has a limit constant only when 2 alpha / zeta exceeds every degree
            let full = if params.gamma >= 1.0 { Some(expected_subtree_full(&tree, &params, radius)?) } else { None };
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "R": radius,
                    "a_gamma": a,
                    "expected_subtree_asymptotic": expected_subtree_asymptotic(&tree, &params, radius).ok(),
                    "expected_subtree_full": full,
                    "variance_orders": variance_orders(&tree, &params, radius).ok(),
                    "regime": report,
                }))?
            );
        }
        Command::Experiment { config, mode, replicates, seed, n_grid, tree, out_dir } => {
            let mut cfg: ExperimentConfig =
                serde_json::from_str(&read(&config)?).with_context(|| format!("parsing {}", config.display()))?;
            if let Some(mode) = mode {
                cfg.mode = serde_json::from_value::<Mode>(json!(mode)).with_context(|| format!("unknown mode `{mode}`"))?;
            }
            cfg.replicates = replicates.unwrap_or(cfg.replicates);
            cfg.master_seed = seed.unwrap_or(cfg.master_seed);
            if let Some(grid) = n_grid {
                cfg.n_grid = grid;
            }
            if let Some(tree) = tree {
                cfg.tree = parse_tree(&tree)?;
            }
            let res = run_experiment(&cfg)?;
            fs::create_dir_all(&out_dir)?;
            let mut w = create(&out_dir.join("results.csv"))?;
            res.write_csv(&mut w)?;
            w.flush()?;
            fs::write(out_dir.join("results.json"), res.to_json()?)?;
            if res.clt.is_some() {
                let mut w = create(&out_dir.join("standardized.csv"))?;
                res.write_standardized_csv(&mut w)?;
                w.flush()?;
            }
            for warning in &res.warnings {
                eprintln!("warning: {warning}");
            }
            for r in &res.records {
                println!("n = {:<10} mean = {:<14.6} var = {:<14.6} ratio = {:?}", r.n, r.mc_mean, r.mc_variance, r.ratio);
            }
            if let Some(fit) = res.fitted_exponent {
                println!("fitted exponent {:.4} +- {:.4}", fit.slope, fit.slope_stderr);
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Regime(_)) => 2,
        Some(Error::CountOverflow) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
