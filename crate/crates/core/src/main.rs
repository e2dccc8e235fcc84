use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use jsdlfi::asymptotics::moment_report;
use jsdlfi::divergence::bound_suite;
use jsdlfi::harness::{
    prepare, run_confset, run_coverage, run_nfds_ess_study, to_json_report, write_confset_csv, ExperimentConfig,
};
use jsdlfi::inference::{hypothesis_test, SimSize, TestInputs};
use jsdlfi::surrogate::{bolfi_run, surrogate_expected_jsd, surrogate_minimizer, BoConfig, GpConfig};
use jsdlfi::{CategoricalPmf, EmpiricalCounts, Error, MixingWeight, ModelSpec, Result, RngStream};

#[derive(Parser)]
#[command(name = "jsdlfi", version, about = "Likelihood-free inference with the Jensen-Shannon divergence")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads for replicate-parallel commands.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate counts: config {"model": ..., "theta": [...], "n": N}.
    Simulate,
    /// Divergences and bounds between the proportions of two count files.
    Jsd {
        #[arg(long)]
        p: PathBuf,
        #[arg(long)]
        q: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        weight: f64,
    },
    /// Moments of the JSD statistic: config {"p_hat", "p_theta", "n", "weight"}.
    Moments,
    /// Test statistic and decisions: config {"expected_jsd", "n_obs", "n_sim", "k", ...}.
    Teststat,
    /// Confidence set over the configured grid for an observation file.
    Confset {
        #[arg(long)]
        observed: PathBuf,
    },
    /// Coverage of the generating parameter.
    Coverage,
    /// Fit a GP surrogate by Bayesian optimization.
    Bolfi,
    /// Paired coverage with raw sizes and with the ESS substitution.
    NfdsEss,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    model: ModelSpec,
    theta: Vec<f64>,
    n: u64,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentsConfig {
    p_hat: CategoricalPmf,
    p_theta: CategoricalPmf,
    n: u64,
    #[serde(default)]
    weight: MixingWeight,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TeststatConfig {
    expected_jsd: Vec<f64>,
    n_obs: Vec<f64>,
    n_sim: f64,
    #[serde(default)]
    ess: Option<Vec<f64>>,
    k: usize,
    #[serde(default)]
    weight: MixingWeight,
    #[serde(default = "default_alphas")]
    alphas: Vec<f64>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.01, 0.05, 0.1, 0.5]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BolfiConfig {
    model: ModelSpec,
    /// Observed counts per epoch; generated from `theta` and `n_obs` when absent.
    #[serde(default)]
    observed: Option<Vec<EmpiricalCounts>>,
    #[serde(default)]
    theta: Option<Vec<f64>>,
    #[serde(default)]
    n_obs: Option<u64>,
    #[serde(default)]
    bo: BoConfig,
    #[serde(default)]
    gp: GpConfig,
    #[serde(default)]
    weight: MixingWeight,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize)]
struct SimulateOutput {
    /// One entry per epoch.
    counts: Vec<EmpiricalCounts>,
}

#[derive(Serialize)]
struct BolfiOutput<'a> {
    minimizer: Vec<f64>,
    expected_jsd_at_minimizer: f64,
    surrogate: &'a jsdlfi::surrogate::GpSurrogate,
}

fn read_config<T: for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T> {
    let path = path.ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Count file: JSON (`[..]`, `[[..], ..]` or `{"counts": [..]}`), or CSV
/// with one epoch per row.
fn read_counts(path: &Path) -> Result<Vec<EmpiricalCounts>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let bad = |e: String| Error::Config(format!("{}: {e}", path.display()));
    if text.trim_start().starts_with(['[', '{']) {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let nested = v.as_array().is_some_and(|a| a.first().is_some_and(|x| x.is_array() || x.is_object()));
        return if nested {
            serde_json::from_value(v).map_err(|e| bad(e.to_string()))
        } else {
            Ok(vec![serde_json::from_value(v).map_err(|e| bad(e.to_string()))?])
        };
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    rdr.records()
        .map(|r| {
            let r = r?;
            let counts = r.iter().map(|x| x.parse::<u64>().map_err(|e| bad(format!("'{x}': {e}")))).collect::<Result<_>>()?;
            EmpiricalCounts::new(counts)
        })
        .collect()
}

fn counts_csv(counts: &[EmpiricalCounts]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let k = counts.first().map_or(0, |c| c.k());
    let mut header = vec!["epoch".to_string()];
    header.extend((1..=k).map(|i| format!("count_{i}")));
    w.write_record(&header)?;
    for (e, c) in counts.iter().enumerate() {
        let mut rec = vec![(e + 1).to_string()];
        rec.extend(c.counts().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf-8"))
}

fn key_value_csv(pairs: &[(&str, String)]) -> String {
    let mut s = String::from("quantity,value\n");
    for (k, v) in pairs {
        s.push_str(&format!("{k},{v}\n"));
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn run(cli: &Cli) -> Result<String> {
    let cfg_path = cli.config.as_deref();
    let json = cli.format == Format::Json;
    match &cli.command {
        Command::Simulate => {
            let c: SimulateConfig = read_config(cfg_path)?;
            let model = c.model.build()?;
            let stream = RngStream::new(cli.seed.unwrap_or(c.seed), 0);
            let counts = model.simulate(&c.theta, c.n, &mut stream.rng())?;
            if json {
                to_json_report("simulate", &SimulateOutput { counts })
            } else {
                counts_csv(&counts)
            }
        }
        Command::Jsd { p, q, weight } => {
            let w = MixingWeight::new(*weight)?;
            let (p, q) = (read_counts(p)?, read_counts(q)?);
            let (p, q) = match (p.as_slice(), q.as_slice()) {
                ([p], [q]) if p.k() == q.k() => (p.to_pmf(), q.to_pmf()),
                _ => return Err(Error::Config("jsd needs one count vector per file with equal category counts".into())),
            };
            let b = bound_suite(&p, &q, w);
            if json {
                to_json_report("jsd", &b)
            } else {
                Ok(key_value_csv(&[
                    ("jsd", b.jsd.to_string()),
                    ("kl", b.kl.to_string()),
                    ("tv", b.tv.to_string()),
                    ("entropy_gap", b.entropy_gap.to_string()),
                    ("entropy_gap_bound", opt(b.entropy_gap_bound)),
                    ("jsd_tv_bound", opt(b.jsd_tv_bound)),
                    ("reverse_pinsker", opt(b.reverse_pinsker)),
                ]))
            }
        }
        Command::Moments => {
            let c: MomentsConfig = read_config(cfg_path)?;
            let r = moment_report(&c.p_hat, &c.p_theta, c.n, c.weight)?;
            if json {
                to_json_report("moments", &r)
            } else {
                Ok(key_value_csv(&[
                    ("n", r.n.to_string()),
                    ("jsd", r.jsd.to_string()),
                    ("exact_expectation", r.exact_expectation.to_string()),
                    ("voronovskaya_expectation", r.voronovskaya_expectation.to_string()),
                    ("vf_remainder", r.vf_remainder.to_string()),
                    ("mse", r.mse.to_string()),
                    ("variance", r.variance.to_string()),
                ]))
            }
        }
        Command::Teststat => {
            let c: TeststatConfig = read_config(cfg_path)?;
            if c.k < 2 || c.n_sim <= 0.0 || c.n_obs.iter().any(|&n| n <= 0.0) {
                return Err(Error::Config("need k >= 2 and positive sample sizes".into()));
            }
            if let Some(e) = &c.ess {
                if e.iter().any(|&v| v.is_nan() || v <= 0.0) {
                    return Err(Error::Config("ESS values must be positive".into()));
                }
            }
            let inputs = TestInputs {
                expected_jsd: &c.expected_jsd,
                n_obs: &c.n_obs,
                n_sim: c.n_sim,
                ess: c.ess.as_deref(),
                k: c.k,
                w: c.weight,
            };
            let r = hypothesis_test(&inputs, &c.alphas)?;
            if json {
                to_json_report("teststat", &r)
            } else {
                let mut s = String::from("t_stat,dof,p_value,alpha,accepted\n");
                for d in &r.decisions {
                    s.push_str(&format!("{},{},{},{},{}\n", r.t_stat, r.dof, r.p_value, d.alpha, d.accepted));
                }
                Ok(s)
            }
        }
        Command::Confset { observed } => {
            let mut c: ExperimentConfig = read_config(cfg_path)?;
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            let set = run_confset(&c, read_counts(observed)?, cli.workers)?;
            if json {
                to_json_report("confset", &set)
            } else {
                let mut buf = Vec::new();
                write_confset_csv(&set, &mut buf)?;
                Ok(String::from_utf8(buf).expect("utf-8"))
            }
        }
        Command::Coverage => {
            let mut c: ExperimentConfig = read_config(cfg_path)?;
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            let table = run_coverage(&c, cli.workers)?;
            if table.failures > 0 {
                log::warn!("{} replicates failed and were excluded", table.failures);
            }
            if json {
                to_json_report("coverage", &table)
            } else {
                table.to_csv_string()
            }
        }
        Command::Bolfi => {
            let c: BolfiConfig = read_config(cfg_path)?;
            let model = c.model.build()?;
            let seed = cli.seed.unwrap_or(c.seed);
            let observed = match (c.observed, &c.theta, c.n_obs) {
                (Some(o), _, _) => o,
                (None, Some(theta), Some(n)) => model.simulate(theta, n, &mut RngStream::new(seed, 0).for_purpose(1).rng())?,
                _ => return Err(Error::Config("bolfi needs either observed counts or theta with n_obs".into())),
            };
            let (model, observed) = prepare(model, observed, None)?;
            let s = bolfi_run(model.as_ref(), &observed, &c.bo, &c.gp, c.weight, RngStream::new(seed, 0).for_purpose(2))?;
            let minimizer = surrogate_minimizer(&s, &mut RngStream::new(seed, 0).for_purpose(3).rng());
            let out = BolfiOutput { expected_jsd_at_minimizer: surrogate_expected_jsd(&s, &minimizer), minimizer, surrogate: &s };
            if json {
                to_json_report("bolfi", &out)
            } else {
                let mut w = csv::Writer::from_writer(Vec::new());
                let d = s.bounds().len();
                let mut header: Vec<String> = (1..=d).map(|i| format!("theta_{i}")).collect();
                header.push("normalized_jsd".into());
                w.write_record(&header)?;
                for (x, y) in s.inputs().iter().zip(s.targets()) {
                    let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                    rec.push(y.to_string());
                    w.write_record(&rec)?;
                }
                Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf-8"))
            }
        }
        Command::NfdsEss => {
            let mut c: ExperimentConfig = read_config(cfg_path)?;
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            if !matches!(c.model, ModelSpec::NfdsLite(_)) {
                return Err(Error::Config("nfds-ess needs an nfds_lite model".into()));
            }
            if c.sim_size != SimSize::NObs {
                log::info!("simulated size rule {:?} differs from n_o", c.sim_size);
            }
            let study = run_nfds_ess_study(&c, cli.workers)?;
            if json {
                to_json_report("nfds_ess", &study)
            } else {
                let mut buf = Vec::new();
                study.write_csv(&mut buf)?;
                Ok(String::from_utf8(buf).expect("utf-8"))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = run(&cli).and_then(|text| {
        match &cli.out {
            Some(path) => fs::write(path, text)?,
            None => io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
