use std::fs::{self, File};
use std::io::BufWriter;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};

use lf2l::datasets::{generate_synthetic, write_csv, write_schema, Encoder};
use lf2l::error::{Error, Result};
use lf2l::eval::{aggregate_report, read_samples_csv, Method, Metric, MetricReport};
use lf2l::fed::{encode_params, join, serve, FedClient, FedServer, ServeOptions, Transport};
use lf2l::harness::{
    client_schemas, grouping_for, load_clients, load_config, prepare_client, run_experiment,
    seed_fed_config, write_artifacts, write_json, DataSource, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "lf2l",
    version,
    about = "Loss-fusion federated learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method over the seed sweep and write the report.
    Run {
        /// Experiment config (JSON); defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds, e.g. `1,2,3`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Shorthand for seeds `1..=N`.
        #[arg(long, conflicts_with = "seeds")]
        num_seeds: Option<u64>,
        #[arg(long)]
        train_frac: Option<f64>,
        #[arg(long)]
        beta_cb: Option<f64>,
        #[arg(long, value_parser = parse_transport)]
        transport: Option<Transport>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Federated server for one seed of an experiment config.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1:7070")]
        bind: SocketAddr,
        /// Where to write the final global model.
        #[arg(long)]
        out: PathBuf,
        /// Seconds to wait for every client to register.
        #[arg(long)]
        accept_timeout: Option<u64>,
    },
    /// Federated client for one seed of an experiment config.
    Join {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Client id as named by the data source (`small`/`large` for synthetic data).
        #[arg(long)]
        client: String,
        #[arg(long, default_value = "127.0.0.1:7070")]
        connect: SocketAddr,
        /// Seconds to keep retrying the initial connection.
        #[arg(long, default_value_t = 10)]
        connect_timeout: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic clients as CSV files plus schemas.
    Gen {
        /// Config whose synthetic data source to use; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
    },
    /// Recompute aggregates and comparisons from a samples CSV.
    Report {
        #[arg(long)]
        samples: PathBuf,
        /// Defaults to `report.json` next to the samples file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_transport(s: &str) -> std::result::Result<Transport, String> {
    match s {
        "inproc" => Ok(Transport::Inproc),
        "tcp" => Ok(Transport::Tcp),
        _ => Err(format!("unknown transport `{s}` (inproc|tcp)")),
    }
}

fn config_or_default(path: Option<&Path>) -> Result<ExperimentConfig> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), load_config)
}

fn print_report(report: &MetricReport) {
    println!(
        "{:<8} {:<12} {:>17} {:>17}",
        "client", "method", "AUROC (SD)", "AUPRC (SD)"
    );
    for a in &report.aggregates {
        println!(
            "{:<8} {:<12} {:>8.4} ({:.4}) {:>8.4} ({:.4})",
            a.client_id, a.method, a.auroc_mean, a.auroc_sd, a.auprc_mean, a.auprc_sd
        );
    }
    for c in report
        .comparisons
        .iter()
        .filter(|c| c.metric == Metric::Auroc)
    {
        println!(
            "{:<8} lf2l vs {:<12} AUROC diff {:+.4}  t {:+.3}  p {:.3e}",
            c.client_id,
            c.baseline.to_string(),
            c.mean_method - c.mean_baseline,
            c.test.t,
            c.test.p
        );
    }
}

fn run(mut cfg: ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let output = run_experiment(&cfg)?;
    cfg.run_id = Some(cfg.effective_run_id());
    let art = write_artifacts(&cfg, &output)?;
    print_report(&output.report);
    println!(
        "{} seeds in {:.1}s; artifacts in {}",
        cfg.seeds.len(),
        started.elapsed().as_secs_f64(),
        art.dir.display()
    );
    Ok(())
}

fn write_model(path: &Path, params: &lf2l::nn::ModelParams) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_params(params))?;
    Ok(())
}

fn serve_cmd(
    cfg: &ExperimentConfig,
    seed: u64,
    bind: SocketAddr,
    out: &Path,
    accept_timeout: Option<u64>,
) -> Result<()> {
    cfg.validate()?;
    let schemas = client_schemas(&cfg.data)?;
    let grouping = grouping_for(&schemas)?;
    let layout = Encoder::layout(&grouping.global_schema)?;
    let fed_cfg = seed_fed_config(cfg, seed, schemas.len());
    let initial = fed_cfg.init_global(layout.len())?;
    let server = FedServer::new(fed_cfg, initial, Some(layout))?;
    let listener =
        TcpListener::bind(bind).map_err(|e| Error::Protocol(format!("cannot bind {bind}: {e}")))?;
    eprintln!("serving on {bind}, waiting for {} clients", schemas.len());
    let opts = ServeOptions {
        accept_timeout: accept_timeout.map(Duration::from_secs),
        ..ServeOptions::default()
    };
    let outcome = serve(listener, server, &opts)?;
    write_model(out, &outcome.global)?;
    eprintln!(
        "{} rounds done; model written to {}",
        outcome.history.len(),
        out.display()
    );
    Ok(())
}

fn connect_with_retry(addr: SocketAddr, timeout: Duration) -> Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(_) if Instant::now() < deadline => {
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => {
                return Err(Error::Protocol(format!(
                    "cannot reach server at {addr}: {e}"
                )))
            }
        }
    }
}

fn join_cmd(
    cfg: &ExperimentConfig,
    seed: u64,
    client: &str,
    addr: SocketAddr,
    timeout: u64,
    out: Option<&Path>,
) -> Result<()> {
    cfg.validate()?;
    let schemas = client_schemas(&cfg.data)?;
    let grouping = grouping_for(&schemas)?;
    let clients = load_clients(&cfg.data)?;
    let (_, ds) = clients
        .iter()
        .find(|(id, _)| id == client)
        .ok_or_else(|| Error::Config(format!("no client `{client}` in the data source")))?;
    let prepared = prepare_client(cfg, client, ds, &grouping, seed)?;
    let fed_cfg = seed_fed_config(cfg, seed, schemas.len());
    let fed_client = FedClient::new(
        prepared.fed,
        fed_cfg.client_train(client),
        fed_cfg.local_epochs,
    )?;
    let stream = connect_with_retry(addr, Duration::from_secs(timeout))?;
    let final_model = join(stream, fed_client)?;
    if let Some(path) = out {
        write_model(path, &final_model)?;
    }
    eprintln!("client {client}: done");
    Ok(())
}

fn gen_cmd(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let DataSource::Synthetic(spec) = &cfg.data else {
        return Err(Error::Config("gen needs a synthetic data source".into()));
    };
    spec.validate()?;
    let (small, large) = generate_synthetic(spec)?;
    fs::create_dir_all(out_dir)?;
    for (name, ds) in [("small", &small), ("large", &large)] {
        write_csv(
            ds,
            "label",
            BufWriter::new(File::create(out_dir.join(format!("{name}.csv")))?),
        )?;
        write_schema(
            &ds.schema,
            "label",
            BufWriter::new(File::create(out_dir.join(format!("{name}.schema.json")))?),
        )?;
        let [neg, pos] = ds.class_counts();
        println!("{name}: {} rows, {pos} positive, {neg} negative", ds.len());
    }
    Ok(())
}

fn report_cmd(samples: &Path, out: Option<&Path>) -> Result<()> {
    let parsed = read_samples_csv(File::open(samples)?)?;
    let report = aggregate_report(&parsed)?;
    let out = out.map_or_else(|| samples.with_file_name("report.json"), Path::to_path_buf);
    write_json(&out, &report)?;
    print_report(&report);
    let methods: Vec<String> = Method::ALL.iter().map(|m| m.to_string()).collect();
    eprintln!(
        "report over {} seeds ({}) written to {}",
        report.seeds.len(),
        methods.join(", "),
        out.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seeds,
            num_seeds,
            train_frac,
            beta_cb,
            transport,
            out_dir,
            run_id,
        } => {
            let mut cfg = config_or_default(config.as_deref())?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(n) = num_seeds {
                cfg.seeds = (1..=n).collect();
            }
            if let Some(v) = train_frac {
                cfg.train_frac = v;
            }
            if let Some(v) = beta_cb {
                cfg.beta_cb = v;
            }
            if let Some(v) = transport {
                cfg.transport = v;
            }
            if let Some(v) = out_dir {
                cfg.out_dir = v;
            }
            if run_id.is_some() {
                cfg.run_id = run_id;
            }
            run(cfg)
        }
        Command::Serve {
            config,
            seed,
            bind,
            out,
            accept_timeout,
        } => serve_cmd(
            &config_or_default(config.as_deref())?,
            seed,
            bind,
            &out,
            accept_timeout,
        ),
        Command::Join {
            config,
            seed,
            client,
            connect,
            connect_timeout,
            out,
        } => join_cmd(
            &config_or_default(config.as_deref())?,
            seed,
            &client,
            connect,
            connect_timeout,
            out.as_deref(),
        ),
        Command::Gen { config, out_dir } => {
            gen_cmd(&config_or_default(config.as_deref())?, &out_dir)
        }
        Command::Report { samples, out } => report_cmd(&samples, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
