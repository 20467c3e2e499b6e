//! Subcommand implementations.

use crate::config::{
    self, Algorithms, ClosenessFile, CoeffsFile, ExpectFile, ExpectMethod, Format, NoiseScaleFile,
    PointFile, RegimeFile, SweepFile, VerifyFile,
};
use crate::output::{csv_text, emit, json_text};
use crate::{Cli, CliError, Command};
use batchbias::advisor::{b_simple, b_simple_trace, recommend};
use batchbias::assemble::{assemble_with_horizon, AssembledCorrection, Horizon};
use batchbias::coeffs::{constants, BetaPair};
use batchbias::memoryless::closeness_scaling;
use batchbias::moments::{bruteforce_expected_correction, Expectation};
use batchbias::optim::{run_epochs, Algorithm, HyperParams};
use batchbias::problem::{PartitionSpec, PerSampleProblem};
use batchbias::sweep::run_sweep;
use batchbias::verify::{run_verify, VerifyConfig};
use batchbias::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.only.is_some() && !matches!(cli.command, Command::Verify) {
        return Err(CliError::Usage("--only applies to `verify` only".into()));
    }
    let cfg = cli.config.as_deref();
    match &cli.command {
        Command::Verify => verify(cli, config::load(cfg)?),
        Command::Coeffs => coeffs(cli, config::load(cfg)?),
        Command::Regime {
            n,
            b,
            b_simple,
            estimate_from,
        } => {
            let file: RegimeFile = config::load(cfg)?;
            regime(cli, file, *n, *b, *b_simple, estimate_from.as_deref())
        }
        Command::Closeness => closeness(cli, config::load(cfg)?),
        Command::Expect => expect(cli, config::load(cfg)?),
        Command::Sweep => sweep(cli, config::load(cfg)?),
        Command::NoiseScale => noise_scale(cli, config::load(cfg)?),
    }
}

fn required_seed(cli: &Cli, file_seed: Option<u64>, command: &str) -> Result<u64, CliError> {
    cli.seed.or(file_seed).ok_or_else(|| {
        CliError::Usage(format!(
            "`{command}` is stochastic; pass --seed or set `seed` in the config"
        ))
    })
}

fn vector(values: &[f64], dim: usize, what: &str) -> Result<Vector, CliError> {
    if values.len() != dim {
        return Err(CliError::Usage(format!(
            "{what} has {} entries, the problem has dimension {dim}",
            values.len()
        )));
    }
    Ok(Vector::from_column_slice(values))
}

fn write_rows<R: Serialize, J: Serialize>(
    cli: &Cli,
    default: Format,
    rows: &[R],
    json: &J,
) -> Result<(), CliError> {
    let text = match cli.format.unwrap_or(default) {
        Format::Csv => csv_text(rows)?,
        Format::Json => json_text(json)?,
    };
    emit(cli.out.as_deref(), &text)?;
    Ok(())
}

fn verify(cli: &Cli, file: VerifyFile) -> Result<(), CliError> {
    if cli.format == Some(Format::Csv) {
        return Err(CliError::Usage("`verify` writes its report as JSON".into()));
    }
    let cfg = VerifyConfig {
        seed: cli
            .seed
            .or(file.seed)
            .unwrap_or(VerifyConfig::default().seed),
        only: cli.only.clone().or(file.only),
        c1_offset: file.c1_offset,
    };
    let report = run_verify(&cfg);
    for suite in &report.suites {
        println!(
            "{} {}",
            if suite.passed() { "PASS" } else { "FAIL" },
            suite.suite.name()
        );
        for c in &suite.checks {
            println!(
                "  {} {}: {}",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
    }
    if let Some(out) = &cli.out {
        emit(Some(out), &json_text(&report)?)?;
    }
    match report.first_failure() {
        None => Ok(()),
        Some(first) => {
            let ce = serde_json::json!({
                "suite": first.suite,
                "check": first.name,
                "detail": first.detail,
                "counterexample": first.counterexample,
            });
            println!("first counterexample: {ce}");
            Err(CliError::Failed(format!(
                "verification failed: {}/{}",
                first.suite.name(),
                first.name
            )))
        }
    }
}

#[derive(Serialize)]
struct CoeffRow {
    beta1: f64,
    beta2: f64,
    c1: f64,
    c2: f64,
    c3: f64,
    c4: f64,
    c5: f64,
    fb: f64,
}

fn coeffs(cli: &Cli, file: CoeffsFile) -> Result<(), CliError> {
    if file.beta1.is_empty() || file.beta2.is_empty() {
        return Err(CliError::Usage("both β grids must be nonempty".into()));
    }
    let mut rows = Vec::new();
    for &a in &file.beta1 {
        for &b in &file.beta2 {
            let c = constants(BetaPair::new(a, b)?)?;
            // `+ 0.0` turns negative zeros into zeros.
            rows.push(CoeffRow {
                beta1: a,
                beta2: b,
                c1: c.c1 + 0.0,
                c2: c.c2 + 0.0,
                c3: c.c3 + 0.0,
                c4: c.c4 + 0.0,
                c5: c.c5 + 0.0,
                fb: c.fb + 0.0,
            });
        }
    }
    write_rows(
        cli,
        Format::Csv,
        &rows,
        &serde_json::json!({ "rows": rows }),
    )
}

fn point(file: &PointFile) -> Result<(Box<dyn PerSampleProblem>, Vector), CliError> {
    let problem = file.problem.build()?;
    let theta = match &file.theta {
        Some(t) => vector(t, problem.dim(), "theta")?,
        None => Vector::zeros(problem.dim()),
    };
    Ok((problem, theta))
}

fn regime(
    cli: &Cli,
    file: RegimeFile,
    n: Option<usize>,
    b: Option<usize>,
    bs: Option<f64>,
    estimate_from: Option<&std::path::Path>,
) -> Result<(), CliError> {
    if cli.format == Some(Format::Csv) {
        return Err(CliError::Usage("`regime` writes JSON".into()));
    }
    let b = b
        .or(file.b)
        .ok_or_else(|| CliError::Usage("--b is required".into()))?;
    let (n, bs, estimate) = match estimate_from {
        Some(path) => {
            let pf: PointFile = config::load_file(path)?;
            let (problem, theta) = point(&pf)?;
            let est = b_simple(&problem, &theta)?;
            let n_samples = problem.n_samples();
            if let Some(n) = n.filter(|n| *n != n_samples) {
                return Err(CliError::Usage(format!(
                    "--n {n} contradicts the problem's {n_samples} samples"
                )));
            }
            (n_samples, est.b_simple, Some(est))
        }
        None => {
            let n = n
                .or(file.n)
                .ok_or_else(|| CliError::Usage("--n is required".into()))?;
            let bs = bs
                .or(file.b_simple)
                .ok_or_else(|| CliError::Usage("pass --b-simple or --estimate-from".into()))?;
            (n, bs, None)
        }
    };
    let advice = recommend(n, b, bs)?;
    let body =
        serde_json::json!({ "advice": advice, "lambda": advice.lambda, "estimate": estimate });
    emit(cli.out.as_deref(), &json_text(&body)?)?;
    Ok(())
}

#[derive(Serialize)]
struct ClosenessRow {
    algorithm: Algorithm,
    eta: f64,
    steps: usize,
    max_error: f64,
    fitted_exponent: Option<f64>,
    divergence: Option<String>,
}

fn closeness(cli: &Cli, file: ClosenessFile) -> Result<(), CliError> {
    let problem = file.problem.build()?;
    let theta0 = vector(&file.theta0, problem.dim(), "theta0")?;
    let n = problem.n_samples();
    if file.batch_size == 0 || n % file.batch_size != 0 {
        return Err(CliError::Usage(format!(
            "batch_size {} must divide N = {n}",
            file.batch_size
        )));
    }
    let part = PartitionSpec::identity(n / file.batch_size, file.batch_size)?;
    let algos: Vec<(Algorithm, HyperParams)> = match file.algorithm {
        Algorithms::Adam => vec![(
            Algorithm::Adam,
            HyperParams::adam(0.0, file.beta1, file.beta2, file.eps),
        )],
        Algorithms::Sgdm => vec![(Algorithm::Sgdm, HyperParams::sgdm(0.0, file.momentum))],
        Algorithms::Both => vec![
            (Algorithm::Sgdm, HyperParams::sgdm(0.0, file.momentum)),
            (
                Algorithm::Adam,
                HyperParams::adam(0.0, file.beta1, file.beta2, file.eps),
            ),
        ],
    };
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (algo, hp) in algos {
        let rep = closeness_scaling(&problem, &part, &hp, &theta0, algo, &file.eta, file.horizon)?;
        for r in &rep.runs {
            rows.push(ClosenessRow {
                algorithm: algo,
                eta: r.eta,
                steps: r.steps,
                max_error: r.max_inf_error,
                fitted_exponent: rep.fitted_exponent,
                divergence: r.divergence.clone(),
            });
        }
        reports.push(rep);
    }
    write_rows(
        cli,
        Format::Csv,
        &rows,
        &serde_json::json!({ "reports": reports }),
    )
}

#[derive(Serialize)]
struct ExpectRow {
    coordinate: usize,
    bruteforce: f64,
    epoch: f64,
    asymptotic: f64,
    fb_term: f64,
    mbn1: f64,
    mbn2: f64,
    mbn3: f64,
    mbn4: f64,
    mbn5: f64,
}

fn expect(cli: &Cli, file: ExpectFile) -> Result<(), CliError> {
    let problem = file.problem.build()?;
    let theta = vector(&file.theta, problem.dim(), "theta")?;
    let n = problem.n_samples();
    if file.batch_size == 0 || n % file.batch_size != 0 {
        return Err(CliError::Usage(format!(
            "batch_size {} must divide N = {n}",
            file.batch_size
        )));
    }
    let (m, b) = (n / file.batch_size, file.batch_size);
    let method = match file.method {
        ExpectMethod::Exact => Expectation::Exact,
        ExpectMethod::MonteCarlo => Expectation::MonteCarlo {
            samples: file.samples,
            seed: required_seed(cli, file.seed, "expect")?,
        },
    };
    let hp = HyperParams::adam(0.0, file.beta1, file.beta2, file.eps);
    let betas = BetaPair::new(file.beta1, file.beta2)?;
    let brute = bruteforce_expected_correction(&problem, m, b, &theta, &hp, method)?;
    let epoch: AssembledCorrection =
        assemble_with_horizon(&problem, &theta, betas, m, b, Horizon::Epoch)?;
    let asym: AssembledCorrection =
        assemble_with_horizon(&problem, &theta, betas, m, b, Horizon::Asymptotic)?;
    let rows: Vec<ExpectRow> = (0..theta.len())
        .map(|j| {
            let e = &epoch.coordinates[j];
            ExpectRow {
                coordinate: j,
                bruteforce: brute[j],
                epoch: e.expected_correction,
                asymptotic: asym.coordinates[j].expected_correction,
                fb_term: e.fb_term,
                mbn1: e.mbn1,
                mbn2: e.mbn2,
                mbn3: e.mbn3,
                mbn4: e.mbn4,
                mbn5: e.mbn5,
            }
        })
        .collect();
    let body = serde_json::json!({
        "problem": file.problem,
        "theta": file.theta,
        "m": m,
        "b": b,
        "method": method,
        "bruteforce": brute.as_slice(),
        "closed_form": { "epoch": epoch, "asymptotic": asym },
    });
    write_rows(cli, Format::Json, &rows, &body)
}

fn sweep(cli: &Cli, file: SweepFile) -> Result<(), CliError> {
    let seed = required_seed(cli, file.seed, "sweep")?;
    let cfg = file.into_config(seed);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let report = run_sweep(&cfg)?;
    for s in &report.slopes {
        eprintln!(
            "batch size {}: slope of best validation loss {:?}",
            s.batch_size, s.slope
        );
    }
    eprintln!(
        "sign reversal between smallest and largest batch: {:?}",
        report.sign_reversal
    );
    write_rows(cli, Format::Csv, &report.records, &report)
}

#[derive(Serialize)]
struct TraceRow {
    epoch: usize,
    b_simple: Option<f64>,
    trace_sigma: Option<f64>,
    grad_norm_sq: Option<f64>,
    flagged: bool,
}

fn noise_scale(cli: &Cli, file: NoiseScaleFile) -> Result<(), CliError> {
    let seed = required_seed(cli, file.seed, "noise-scale")?;
    let problem = file.problem.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta0 = Vector::from_fn(problem.dim(), |_, _| rng.random_range(-0.5..0.5));
    let hp = HyperParams::adam(file.eta, file.beta1, file.beta2, file.eps);
    let traj = run_epochs(
        &problem,
        &hp,
        &theta0,
        Algorithm::Adam,
        file.batch_size,
        file.epochs,
        seed,
    )?;
    let trace = b_simple_trace(&problem, &traj, file.every.max(1))?;
    let rows: Vec<TraceRow> = trace
        .iter()
        .map(|e| TraceRow {
            epoch: e.index,
            b_simple: e.estimate.as_ref().map(|x| x.b_simple),
            trace_sigma: e.estimate.as_ref().map(|x| x.trace_sigma),
            grad_norm_sq: e.estimate.as_ref().map(|x| x.grad_norm_sq),
            flagged: e.flagged,
        })
        .collect();
    write_rows(
        cli,
        Format::Csv,
        &rows,
        &serde_json::json!({ "trace": rows }),
    )
}
