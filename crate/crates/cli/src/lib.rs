//! `qbc` command dispatch. Reports go to stdout as JSON (CSV for scans),
//! diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 parse/validation/analysis failure, 2 usage.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use qbc_core::alice::{
    alice_average, alice_lower_bound, procrustes_cheat, z_matrix_bounds, AverageMode,
};
use qbc_core::bob::bob_optimal_probability;
use qbc_core::channel::{apply_channel, dilate, validate_family};
use qbc_core::game::{brute_force_oracle, minimax_solve, tradeoff_scan, ScanConfig};
use qbc_core::io::{parse_protocol, ParseOptions, ScanFile};
use qbc_core::numerics::{
    max_abs_diff, random::ginibre, ComplexMatrix, ComplexVector, RandomSeed,
    VALIDATION_TOL,
};
use qbc_core::protocol::{family_by_name, CommitmentProtocol};
use qbc_core::report::{analyze, AnalysisConfig, VERSION};
use qbc_core::{alice, Error};

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(name = "qbc", version, about = "Binding and concealment analysis of quantum bit commitment protocols")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a protocol file.
    Validate(ProtocolArgs),
    /// Full report: concealment, binding, bounds and flags.
    Analyze(AnalyzeArgs),
    /// Alice's post-commitment cheat: Procrustes unitary, minimax and average values.
    Alice(AnalyzeArgs),
    /// Bob's entangled discrimination of the two modulations.
    Bob(SearchArgs),
    /// Minimax game between Alice's cheat and Bob's anonymous state.
    Game(GameArgs),
    /// Concealment/binding tradeoff along a built-in protocol family.
    Scan(ScanArgs),
    /// Stinespring dilation of each bit's family.
    Dilate(DilateArgs),
    /// Monte Carlo check of the Haar second-moment identity.
    HaarCheck(HaarArgs),
}

#[derive(Debug, Args)]
struct ProtocolArgs {
    file: PathBuf,
    /// Keep trace-decreasing families as given instead of adding abort outcomes.
    #[arg(long)]
    no_complete: bool,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    ClosedForm,
    MonteCarlo,
}

impl From<ModeArg> for AverageMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::ClosedForm => AverageMode::ClosedForm,
            ModeArg::MonteCarlo => AverageMode::MonteCarlo,
        }
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Haar-average mode; by default the closed form when it applies.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

impl AnalyzeArgs {
    fn config(&self) -> AnalysisConfig {
        AnalysisConfig {
            seed: RandomSeed(self.search.seed),
            restarts: self.search.restarts,
            tol: self.search.tol,
            samples: self.samples,
            mode: self.mode.map(Into::into),
        }
    }
}

#[derive(Debug, Args)]
struct GameArgs {
    #[command(flatten)]
    search: SearchArgs,
    /// Also run the exhaustive grid oracle with this step (qubit protocols only).
    #[arg(long)]
    grid: Option<f64>,
}

#[derive(Debug, Args)]
struct ScanArgs {
    /// Built-in family: rotation or dephasing.
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    family: Option<String>,
    /// Comma-separated parameter values.
    #[arg(long, value_delimiter = ',', requires = "family")]
    params: Vec<f64>,
    /// Scan file with `family` and `parameters`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Emit `parameter,epsilon,alice_minimax,alice_average` rows instead of JSON.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args)]
struct DilateArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Include the isometry matrices in the output.
    #[arg(long)]
    matrices: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Debug, Args)]
struct HaarArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Number of random operator pairs to test.
    #[arg(long, default_value_t = 5)]
    pairs: usize,
}

/// Failure that maps to exit code 1.
#[derive(Debug)]
struct Failure(String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = std::result::Result<String, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(sink, "{text}");
            return if code == 0 { 0 } else { 2 };
        }
    };
    match dispatch(cli.command) {
        Ok(text) => {
            let _ = writeln!(out, "{text}");
            0
        }
        Err(Failure(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Validate(a) => validate(&a),
        Command::Analyze(a) => {
            let p = load(&a.search.protocol)?;
            Ok(analyze(&p, &a.config())?.to_json())
        }
        Command::Alice(a) => alice_cmd(&a),
        Command::Bob(a) => bob_cmd(&a),
        Command::Game(a) => game_cmd(&a),
        Command::Scan(a) => scan_cmd(&a),
        Command::Dilate(a) => dilate_cmd(&a),
        Command::HaarCheck(a) => haar_cmd(&a),
    }
}

fn load(a: &ProtocolArgs) -> Result<CommitmentProtocol, Failure> {
    parse_protocol(&a.file, ParseOptions { complete: !a.no_complete })
        .map_err(|e| Failure(format!("{}: {e}", display(&a.file))))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output always serializes")
}

fn matrix_json(m: &ComplexMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn vector_json(v: &ComplexVector) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn validate(a: &ProtocolArgs) -> Outcome {
    let p = load(a)?;
    let mut bits = Vec::new();
    for bit in 0..2 {
        let f = p.family(bit);
        let report = validate_family(f, VALIDATION_TOL)?;
        bits.push(json!({
            "operators": f.cardinality(),
            "abort_operators": f.abort_count(),
            "trace_preserving": report.tp,
            "deficit_norm": report.deficit_norm,
        }));
    }
    Ok(pretty(&json!({
        "protocol": p.name(),
        "valid": true,
        "dim_in": p.dim_in(),
        "dim_out": p.dim_out(),
        "priors": p.priors(),
        "bit0": bits[0],
        "bit1": bits[1],
        "aborting": p.is_aborting(),
        "completed": p.is_completed(),
        "rank_depends_on_b": p.rank_depends_on_bit(),
        "perfectly_concealing": p.is_perfectly_concealing(VALIDATION_TOL),
    })))
}

fn alice_cmd(a: &AnalyzeArgs) -> Outcome {
    let p = load(&a.search.protocol)?;
    let cfg = a.config();
    let procrustes = procrustes_cheat(p.family(0), p.family(1))?;
    let lower = alice_lower_bound(&p, &procrustes.v)?;
    let game = minimax_solve(&p, &cfg.game())?;
    let average = alice_average(&p, &game.v_star, &cfg.average())?;
    let z = z_matrix_bounds(&p).ok();
    Ok(pretty(&json!({
        "protocol": p.name(),
        "procrustes": {
            "residual": procrustes.residual,
            "cross_gram_trace_norm": procrustes.cross_gram_trace_norm,
            "unique": procrustes.unique,
            "lower_bound": lower,
            "v": matrix_json(procrustes.v.matrix()),
        },
        "minimax": {
            "value": game.alice_value,
            "lower_bound": game.lower_bound,
            "converged": game.converged,
            "v": matrix_json(game.v_star.matrix()),
            "phi": vector_json(game.phi_star.amplitudes()),
        },
        "average": {
            "value": average.value,
            "mode": average.mode,
            "standard_error": average.standard_error,
            "lower": z.map(|z| z.lower),
            "upper": z.map(|z| z.upper),
            "z_trace_norm": z.map(|z| z.z_trace_norm),
        },
        "provenance": {"seed": cfg.seed.0, "samples": cfg.samples, "version": VERSION},
    })))
}

fn bob_cmd(a: &SearchArgs) -> Outcome {
    let p = load(&a.protocol)?;
    let cfg = qbc_core::bob::CbConfig {
        restarts: a.restarts,
        seed: RandomSeed(a.seed),
        tol: a.tol,
        ..Default::default()
    };
    let r = bob_optimal_probability(&p, &cfg)?;
    Ok(pretty(&json!({
        "protocol": p.name(),
        "cb_lower": r.cb_lower,
        "p_opt_lower": r.p_opt_lower,
        "product_lower": r.product_lower,
        "advantage_upper": r.gap_upper_bound,
        "ancilla_dim": r.ancilla_dim,
        "witness_state": vector_json(r.witness_state.amplitudes()),
        "provenance": {"seed": r.seed.0, "restarts": r.restarts, "iterations": r.iterations, "version": VERSION},
    })))
}

fn game_cmd(a: &GameArgs) -> Outcome {
    let p = load(&a.search.protocol)?;
    let cfg = qbc_core::game::MinimaxConfig { seed: RandomSeed(a.search.seed), ..Default::default() };
    let r = minimax_solve(&p, &cfg)?;
    let oracle = match a.grid {
        Some(step) => {
            let o = brute_force_oracle(&p, step)?;
            Some(json!({
                "step": step,
                "alice_value": o.alice_value,
                "v": matrix_json(o.v.matrix()),
                "phi": vector_json(o.phi.amplitudes()),
            }))
        }
        None => None,
    };
    Ok(pretty(&json!({
        "protocol": p.name(),
        "alice_value": r.alice_value,
        "lower_bound": r.lower_bound,
        "set_upper": r.set_upper,
        "converged": r.converged,
        "v_star": matrix_json(r.v_star.matrix()),
        "phi_star": vector_json(r.phi_star.amplitudes()),
        "oracle": oracle,
        "provenance": {
            "seed": r.seed.0,
            "restarts": r.restarts,
            "worst_states": r.worst_states,
            "iterations": r.iterations,
            "version": VERSION,
        },
    })))
}

fn scan_cmd(a: &ScanArgs) -> Outcome {
    let (name, params) = match (&a.config, &a.family) {
        (Some(path), _) => {
            let s = ScanFile::from_path(path).map_err(|e| Failure(format!("{}: {e}", display(path))))?;
            (s.family, s.parameters)
        }
        (None, Some(f)) => (f.clone(), a.params.clone()),
        (None, None) => unreachable!("clap requires --family or --config"),
    };
    if params.is_empty() {
        return Err(Failure("no scan parameters given".into()));
    }
    let family = family_by_name(&name).ok_or_else(|| Failure(format!("unknown protocol family `{name}`")))?;
    let analysis = AnalysisConfig {
        seed: RandomSeed(a.seed),
        restarts: a.restarts,
        tol: a.tol,
        samples: a.samples,
        mode: a.mode.map(Into::into),
    };
    let cfg = ScanConfig { cb: analysis.cb(), game: analysis.game(), average: analysis.average() };
    let result = tradeoff_scan(family.as_ref(), &params, &cfg, None);
    if a.csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["parameter", "epsilon", "alice_minimax", "alice_average"])
            .map_err(|e| Failure(e.to_string()))?;
        for pt in &result.points {
            w.serialize((pt.parameter, pt.epsilon, pt.alice_minimax, pt.alice_average))
                .map_err(|e| Failure(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Failure(e.to_string()))?;
        let text = String::from_utf8(bytes).expect("csv output is utf-8");
        return Ok(text.trim_end().to_string());
    }
    Ok(pretty(&json!({
        "family": name,
        "points": result.points,
        "skipped": result.skipped,
        "provenance": {"seed": a.seed, "restarts": a.restarts, "version": VERSION},
    })))
}

fn dilate_cmd(a: &DilateArgs) -> Outcome {
    let p = load(&a.protocol)?;
    let mut rng = RandomSeed(a.seed).rng();
    let mut bits = Vec::new();
    for bit in 0..2 {
        let f = p.family(bit);
        let d = dilate(f)?;
        // compare against the Kraus form on random mixed inputs
        let mut channel_residual: f64 = 0.0;
        for _ in 0..8 {
            let g = ginibre(p.dim_in(), p.dim_in(), &mut rng);
            let rho = &g * g.adjoint();
            let rho = &rho / qbc_core::numerics::trace(&rho);
            channel_residual = channel_residual.max(max_abs_diff(&d.apply(&rho), &apply_channel(f, &rho)?));
        }
        let (u, dim_a, dim_f_padded) = d.unitary_extension();
        let mut entry = json!({
            "dim_in": d.dim_in,
            "dim_out": d.dim_out,
            "dim_f": d.dim_f,
            "abort_outcomes": f.abort_count(),
            "isometry_residual": d.isometry_residual(),
            "channel_residual": channel_residual,
            "unitary_dim_a": dim_a,
            "unitary_dim_f": dim_f_padded,
            "unitary_residual": qbc_core::numerics::unitarity_residual(&u),
        });
        if a.matrices {
            entry["isometry"] = json!(matrix_json(&d.isometry));
        }
        bits.push(entry);
    }
    Ok(pretty(&json!({"protocol": p.name(), "bit0": bits[0], "bit1": bits[1]})))
}

fn haar_cmd(a: &HaarArgs) -> Outcome {
    if a.dim == 0 || a.dim > 64 {
        return Err(Failure(format!("--dim must be between 1 and 64, got {}", a.dim)));
    }
    if a.samples < 2 {
        return Err(Failure("--samples must be at least 2".into()));
    }
    let seed = RandomSeed(a.seed);
    let mut rng = seed.rng();
    let mut checks = Vec::new();
    let mut worst: f64 = 0.0;
    // identity pair: exact value 1
    let id = qbc_core::numerics::identity(a.dim);
    let exact_identity = alice::haar_pair_integral(&id, &id)?;
    for k in 0..a.pairs {
        let x = ginibre(a.dim, a.dim, &mut rng);
        let y = ginibre(a.dim, a.dim, &mut rng);
        let exact = alice::haar_pair_integral(&x, &y)?;
        let (mean, se) = alice::haar_pair_monte_carlo(&x, &y, a.samples, seed.derive(k as u64))?;
        let z_re = if se.re > 0.0 { (mean.re - exact.re).abs() / se.re } else { 0.0 };
        let z_im = if se.im > 0.0 { (mean.im - exact.im).abs() / se.im } else { 0.0 };
        worst = worst.max(z_re).max(z_im);
        checks.push(json!({
            "closed_form": [exact.re, exact.im],
            "monte_carlo": [mean.re, mean.im],
            "standard_error": [se.re, se.im],
            "deviation_se": z_re.max(z_im),
        }));
    }
    let pass = worst <= 5.0 && (exact_identity.re - 1.0).abs() < 1e-12;
    let text = pretty(&json!({
        "dim": a.dim,
        "samples": a.samples,
        "identity_pair": exact_identity.re,
        "pairs": checks,
        "max_deviation_se": worst,
        "pass": pass,
        "provenance": {"seed": a.seed, "version": VERSION},
    }));
    if pass {
        Ok(text)
    } else {
        Err(Failure(format!("Monte Carlo deviates from the closed form by {worst:.2} standard errors\n{text}")))
    }
}
