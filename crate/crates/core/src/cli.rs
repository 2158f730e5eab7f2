//! The `parisi` command line.

use crate::chain::ChainOptions;
use crate::desk_oracle;
use crate::error::{config, Error};
use crate::functional;
use crate::mixture::MixtureSpec;
use crate::optimizer::{self, OptimOptions};
use crate::order_param::{FiniteTempStepParam, StepOrderParam};
use crate::verify;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use std::io::Write;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_EVAL: i32 = 3;
pub const EXIT_EXPERIMENT: i32 = 4;

#[derive(Debug, Parser, Serialize)]
#[command(name = "parisi", version, about = "Evaluate and minimize Parisi functionals of mixed p-spin models")]
pub struct Cli {
    /// Mixture as a JSON file or inline JSON, e.g. '{"coeffs":{"2":0.5},"h":0.0}'. Defaults to SK without field.
    #[arg(long, global = true)]
    pub mixture: Option<String>,
    /// Gauss-Legendre nodes per panel.
    #[arg(long, global = true, env = "PARISI_DEFAULT_ORDER")]
    pub order: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file; gets a header line with the version and this configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Emit JSON instead of text or CSV.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Value of the functional with its breakdown.
    Eval(EvalArgs),
    /// Tail-block identity suite.
    Verify(VerifyArgs),
    /// Search for a perturbation near 1 that lowers the functional.
    Perturb(PerturbArgs),
    /// Minimize over order parameters with k plateaus.
    Minimize(MinimizeArgs),
    /// Minimize for k = 1..kmax, seeding each k from a perturbation of the previous optimum.
    Escalate(EscalateArgs),
    /// Finite-temperature optima for increasing beta against the zero-temperature optimum.
    BetaSweep(BetaSweepArgs),
    /// Exhaustive ground states of sampled finite systems.
    Oracle(OracleArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Zero-temperature order parameter "q0:m0,q1:m1,...".
    #[arg(long, conflicts_with = "alpha")]
    pub gamma: Option<String>,
    /// Finite-temperature order parameter "q0:z0,...,qn:1".
    #[arg(long, requires = "beta")]
    pub alpha: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Presets to run (sk, pure3, wide); all when omitted. "singular" runs the singularity probes on sk.
    #[arg(long)]
    pub preset: Vec<String>,
    /// `b - t` for the singularity probes.
    #[arg(long)]
    pub b_minus_t: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbArgs {
    #[arg(long)]
    pub gamma: String,
    /// Candidate top values; defaults to doublings of the last plateau.
    #[arg(long, value_delimiter = ',')]
    pub m_next: Vec<f64>,
    /// Number of q points `1 - (1 - q_n) 2^-j`.
    #[arg(long, default_value_t = 16)]
    pub q_levels: u32,
}

#[derive(Debug, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 20_000)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tolerance: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct MinimizeArgs {
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Minimize the finite-temperature functional at this beta.
    #[arg(long)]
    pub beta: Option<f64>,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EscalateArgs {
    #[arg(long, default_value_t = 4)]
    pub kmax: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct BetaSweepArgs {
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    pub betas: Vec<f64>,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct OracleArgs {
    /// System sizes.
    #[arg(long = "N", value_delimiter = ',', default_value = "8,12,16,20")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
}

/// What a command produced.
#[derive(Debug, Default)]
struct Output {
    text: Vec<String>,
    csv: Vec<String>,
    json: Value,
}

struct Failure {
    code: i32,
    message: String,
    output: Option<Output>,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), output: None }
    }
}

fn config_failure(e: Error) -> Failure {
    Failure::new(EXIT_CONFIG, e.to_string())
}

fn eval_failure(e: Error) -> Failure {
    let code = if matches!(e, Error::Config(_)) { EXIT_CONFIG } else { EXIT_EVAL };
    Failure::new(code, e.to_string())
}

fn load_mixture(arg: Option<&str>) -> Result<MixtureSpec, Error> {
    let Some(arg) = arg else {
        return Ok(MixtureSpec::sk(0.0));
    };
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| config(format!("cannot read mixture {arg}: {e}")))?
    };
    MixtureSpec::from_json(&text)
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn optim_options(a: &OptimArgs, seed: u64) -> OptimOptions {
    OptimOptions { budget: a.budget, tolerance: a.tolerance, restarts: a.restarts, seed }
}

fn cmd_eval(a: &EvalArgs, spec: &MixtureSpec, chain: &ChainOptions) -> Result<Output, Failure> {
    if let Some(alpha) = &a.alpha {
        let beta = a.beta.ok_or_else(|| Failure::new(EXIT_CONFIG, "--alpha needs --beta"))?;
        let alpha = FiniteTempStepParam::parse(alpha, beta).map_err(config_failure)?;
        let psi = functional::psi_finite(&alpha, spec, chain).map_err(eval_failure)?.psi();
        let value = functional::parisi_finite(&alpha, spec, chain).map_err(eval_failure)?;
        let entropy = std::f64::consts::LN_2 / beta;
        let correction = entropy + psi - value;
        return Ok(Output {
            text: vec![format!("P_beta = {value}"), format!("  ln2/beta = {entropy}"), format!("  psi = {psi}"), format!("  correction = {correction}")],
            csv: vec!["P_beta,entropy,psi,correction".into(), [value, entropy, psi, correction].map(num).join(",")],
            json: json!({"alpha": alpha, "value": value, "entropy": entropy, "psi": psi, "correction": correction}),
        });
    }
    let gamma = a.gamma.as_deref().unwrap_or("0:0");
    let gamma = StepOrderParam::parse(gamma).map_err(config_failure)?;
    let psi = functional::psi_zero(&gamma, spec, chain).map_err(eval_failure)?.psi();
    let value = functional::parisi_zero(&gamma, spec, chain).map_err(eval_failure)?;
    let correction = psi - value;
    Ok(Output {
        text: vec![format!("P = {value}"), format!("  psi = {psi}"), format!("  correction = {correction}")],
        csv: vec!["P,psi,correction".into(), [value, psi, correction].map(num).join(",")],
        json: json!({"gamma": gamma, "value": value, "psi": psi, "correction": correction}),
    })
}

fn cmd_verify(a: &VerifyArgs, chain: &ChainOptions) -> Result<Output, Failure> {
    let mut names: Vec<&str> = a.preset.iter().map(String::as_str).collect();
    let singular = names.contains(&"singular") || a.b_minus_t.is_some();
    names.retain(|n| *n != "singular");
    if names.is_empty() {
        names = verify::PRESETS.iter().map(|p| p.0).collect();
    }
    for n in &names {
        verify::preset(n).map_err(config_failure)?;
    }
    let gap = singular.then(|| a.b_minus_t.unwrap_or(1e-5));
    let checks = verify::identity_suite(&names, gap, chain).map_err(eval_failure)?;
    let text = checks
        .iter()
        .map(|c| format!("{} {}: {:.3e} (threshold {:.1e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold))
        .collect();
    let mut csv = vec!["check,value,threshold,pass".to_string()];
    csv.extend(checks.iter().map(|c| format!("{},{},{},{}", c.name.replace(',', ";"), num(c.value), num(c.threshold), c.pass)));
    let out = Output { text, csv, json: json!({"checks": checks}) };
    if checks.iter().all(|c| c.pass) {
        Ok(out)
    } else {
        Err(Failure { code: EXIT_VERIFY, message: "some checks failed".into(), output: Some(out) })
    }
}

fn cmd_perturb(a: &PerturbArgs, spec: &MixtureSpec, chain: &ChainOptions) -> Result<Output, Failure> {
    let base = StepOrderParam::parse(&a.gamma).map_err(config_failure)?;
    let m_grid = if a.m_next.is_empty() { functional::default_m_grid(&base) } else { a.m_next.clone() };
    let q_grid = functional::default_q_grid(&base, a.q_levels);
    let rep = functional::perturbation_search(&base, spec, chain, &m_grid, &q_grid).map_err(eval_failure)?;
    let text = vec![
        format!("P(base) = {}", rep.p_base),
        format!("m_next = {}", rep.m_next),
        format!("eta = {}", rep.eta.map_or("none".into(), |e| e.to_string())),
        format!("success = {}", rep.success),
    ];
    let out = Output { text, csv: rep.to_csv_rows(), json: serde_json::to_value(&rep).expect("serializable") };
    if rep.success {
        Ok(out)
    } else {
        Err(Failure { code: EXIT_EXPERIMENT, message: "no perturbation lowered the functional".into(), output: Some(out) })
    }
}

fn cmd_minimize(a: &MinimizeArgs, spec: &MixtureSpec, chain: &ChainOptions, seed: u64) -> Result<Output, Failure> {
    let opts = optim_options(&a.optim, seed);
    let (param, json, r) = match a.beta {
        Some(beta) => {
            let r = optimizer::minimize_finite(a.k, beta, spec, chain, &opts, None).map_err(eval_failure)?;
            (r.param.to_string(), serde_json::to_value(&r).expect("serializable"), (r.value, r.evaluations, r.converged))
        }
        None => {
            let r = optimizer::minimize_zero(a.k, spec, chain, &opts, None).map_err(eval_failure)?;
            (r.param.to_string(), serde_json::to_value(&r).expect("serializable"), (r.value, r.evaluations, r.converged))
        }
    };
    Ok(Output {
        text: vec![format!("k = {}", a.k), format!("param = {param}"), format!("value = {}", r.0), format!("evaluations = {}, converged = {}", r.1, r.2)],
        csv: vec!["k,value,evaluations,converged,param".into(), format!("{},{},{},{},\"{param}\"", a.k, num(r.0), r.1, r.2)],
        json,
    })
}

fn cmd_escalate(a: &EscalateArgs, spec: &MixtureSpec, chain: &ChainOptions, seed: u64) -> Result<Output, Failure> {
    let steps = optimizer::escalate(spec, chain, a.kmax, &optim_options(&a.optim, seed)).map_err(eval_failure)?;
    let mut text = Vec::new();
    let mut csv = vec!["k,value,warm_start_value,evaluations,converged,param".to_string()];
    for s in &steps {
        let r = &s.result;
        let warm = s.warm_start.as_ref().map(|w| w.1);
        text.push(format!("k={} value={} param={}", r.k, r.value, r.param));
        csv.push(format!(
            "{},{},{},{},{},\"{}\"",
            r.k,
            num(r.value),
            warm.map_or(String::new(), num),
            r.evaluations,
            r.converged,
            r.param
        ));
    }
    let out = Output { text, csv, json: serde_json::to_value(&steps).expect("serializable") };
    if steps.windows(2).all(|w| w[1].result.value < w[0].result.value) {
        Ok(out)
    } else {
        Err(Failure { code: EXIT_EXPERIMENT, message: "values are not strictly decreasing in k".into(), output: Some(out) })
    }
}

fn cmd_beta_sweep(a: &BetaSweepArgs, spec: &MixtureSpec, chain: &ChainOptions, seed: u64) -> Result<Output, Failure> {
    let sweep = optimizer::beta_sweep(spec, chain, a.k, &a.betas, &optim_options(&a.optim, seed)).map_err(eval_failure)?;
    let text = sweep
        .rows
        .iter()
        .map(|r| format!("beta={} P_beta={} gap={:.3e} l1={:.4}", r.beta, r.finite.value, r.gap, r.l1))
        .collect();
    Ok(Output { text, csv: sweep.to_csv_rows(), json: serde_json::to_value(&sweep).expect("serializable") })
}

fn cmd_oracle(a: &OracleArgs, spec: &MixtureSpec, seed: u64) -> Result<Output, Failure> {
    let rows = desk_oracle::gse_trend(spec, &a.n, a.samples, seed).map_err(eval_failure)?;
    let csv = desk_oracle::trend_csv_rows(&rows);
    Ok(Output { text: csv.clone(), csv, json: serde_json::to_value(&rows).expect("serializable") })
}

fn dispatch(cli: &Cli) -> Result<Output, Failure> {
    let spec = load_mixture(cli.mixture.as_deref()).map_err(config_failure)?;
    let mut chain = ChainOptions::default();
    if let Some(order) = cli.order {
        if order < 2 {
            return Err(Failure::new(EXIT_CONFIG, "--order must be at least 2"));
        }
        chain.order = order;
    }
    match &cli.command {
        Command::Eval(a) => cmd_eval(a, &spec, &chain),
        Command::Verify(a) => cmd_verify(a, &chain),
        Command::Perturb(a) => cmd_perturb(a, &spec, &chain),
        Command::Minimize(a) => cmd_minimize(a, &spec, &chain, cli.seed),
        Command::Escalate(a) => cmd_escalate(a, &spec, &chain, cli.seed),
        Command::BetaSweep(a) => cmd_beta_sweep(a, &spec, &chain, cli.seed),
        Command::Oracle(a) => cmd_oracle(a, &spec, cli.seed),
    }
}

/// `# parisi <version> config=<json>`.
pub fn header(cli: &Cli) -> String {
    format!("# parisi {} config={}", env!("CARGO_PKG_VERSION"), serde_json::to_string(cli).expect("serializable"))
}

fn emit(cli: &Cli, out: &Output) -> std::io::Result<()> {
    let stdout = std::io::stdout();
    let mut so = stdout.lock();
    if cli.json {
        writeln!(so, "{}", out.json)?;
    } else {
        for line in &out.text {
            writeln!(so, "{line}")?;
        }
    }
    if let Some(path) = &cli.out {
        let mut body = vec![header(cli)];
        if cli.json {
            body.push(out.json.to_string());
        } else {
            body.extend(out.csv.iter().cloned());
        }
        std::fs::write(path, body.join("\n") + "\n")?;
    }
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return EXIT_CONFIG;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let (code, output) = match dispatch(&cli) {
        Ok(out) => (EXIT_OK, Some(out)),
        Err(f) => {
            eprintln!("error: {}", f.message);
            (f.code, f.output)
        }
    };
    if let Some(out) = output {
        if let Err(e) = emit(&cli, &out) {
            eprintln!("error: {e}");
            return EXIT_EVAL;
        }
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_commands() {
        let cli = Cli::try_parse_from(["parisi", "eval", "--gamma", "0:0.5", "--json"]).unwrap();
        assert!(cli.json);
        assert!(matches!(cli.command, Command::Eval(_)));
        let cli = Cli::try_parse_from(["parisi", "oracle", "--N", "8,12", "--samples", "3", "--seed", "7"]).unwrap();
        match cli.command {
            Command::Oracle(a) => assert_eq!(a.n, vec![8, 12]),
            _ => panic!(),
        }
        assert!(Cli::try_parse_from(["parisi", "frobnicate"]).is_err());
    }

    #[test]
    fn header_echoes_config() {
        let cli = Cli::try_parse_from(["parisi", "--seed", "9", "minimize", "--k", "2"]).unwrap();
        let h = header(&cli);
        assert!(h.starts_with(&format!("# parisi {} config={{", env!("CARGO_PKG_VERSION"))));
        let cfg: Value = serde_json::from_str(h.split_once("config=").unwrap().1).unwrap();
        assert_eq!(cfg["seed"], 9);
        assert_eq!(cfg["command"]["Minimize"]["k"], 2);
    }

    #[test]
    fn inline_and_default_mixtures() {
        assert_eq!(load_mixture(None).unwrap(), MixtureSpec::sk(0.0));
        let m = load_mixture(Some(r#"{"coeffs":{"3":1.0},"h":0.5}"#)).unwrap();
        assert_eq!(m, MixtureSpec::pure(3, 0.5).unwrap());
        assert!(load_mixture(Some("/nonexistent/mix.json")).is_err());
    }
}
