use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use exactnet_core::bn::normalize_bn;
use exactnet_core::growth::{depth_growth_experiment, growth_csv, GrowthActivation, DEFAULT_WIDTH};
use exactnet_core::instance_file::{
    instance_bits, parse_instance, parse_theta, serialize_instance, serialize_theta,
};
use exactnet_core::lambda::{solve_lambda, verify_product_identity};
use exactnet_core::network::{LossSpec, VertexVector, Wrt};
use exactnet_core::pac::{simulate_lower_bound, Learner, SimReport};
use exactnet_core::pwl::{gd_step, verify_witness, EncodingBound, WitnessVerdict};
use exactnet_core::reduction::{
    compile_backprop, compile_erm, compile_hinge_posslp, decide_at_theta_star_with_budget, A0Mode,
    BackpropAnswer, BackpropVariant, Decision, GadgetReport, Gap,
};
use exactnet_core::slp::DEFAULT_MAX_BITS;
use exactnet_core::{Error, Instance, Rational, RationalPoly, SignClass, Slp, Theta};

// a closed pipe (e.g. `| head`) is not an error worth reporting
macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

const EXIT_NO: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_BUDGET: u8 = 3;

/// Exact straight-line programs, gadget compilers and network gradients.
#[derive(Parser)]
#[command(name = "exactnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate and query straight-line programs.
    #[command(subcommand)]
    Slp(SlpCmd),
    /// Product-identity coefficients for a polynomial activation.
    #[command(subcommand)]
    Lambda(LambdaCmd),
    /// Compile a program into a training or gradient instance.
    #[command(subcommand)]
    Compile(CompileCmd),
    /// Forward pass and gradient coordinates of an instance.
    #[command(subcommand)]
    Net(NetCmd),
    /// Decide instances and check witnesses.
    #[command(subcommand)]
    Verify(VerifyCmd),
    /// Exact gradient steps.
    #[command(subcommand)]
    Pwl(PwlCmd),
    /// Sample-complexity simulation for rounded multipliers.
    #[command(subcommand)]
    Pac(PacCmd),
    /// Bit-length growth experiments.
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Args)]
struct Budget {
    /// Abort once any intermediate value exceeds this many bits.
    #[arg(long, default_value_t = DEFAULT_MAX_BITS)]
    max_bits: u64,
}

#[derive(Subcommand)]
enum SlpCmd {
    /// Print the output value and bit-length statistics.
    Eval {
        file: PathBuf,
        #[command(flatten)]
        budget: Budget,
        /// Also print every gate value.
        #[arg(long)]
        all: bool,
    },
    /// Bit `j` of the integer part of |n_P|; exit 0 when set, 1 when clear.
    Bit {
        file: PathBuf,
        #[arg(long)]
        j: u64,
        #[command(flatten)]
        budget: Budget,
    },
    /// Sign of the output.
    Sign {
        file: PathBuf,
        #[command(flatten)]
        budget: Budget,
    },
    /// Rewrite a constant-1 program so every gate stays in [-1, 1].
    Normalize {
        file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LambdaCmd {
    /// Print λ_j, the common denominator D and λ'_j = D·λ_j.
    Solve {
        /// Coefficients c0,c1,...,cμ.
        #[arg(long, allow_hyphen_values = true)]
        poly: RationalPoly,
    },
    /// Check the product identity at random rational points.
    Verify {
        #[arg(long, allow_hyphen_values = true)]
        poly: RationalPoly,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LossKind {
    Bit01,
    Hinge,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantKind {
    Sign,
    Bit,
}

#[derive(Subcommand)]
enum CompileCmd {
    /// Training instance whose optimum encodes a bit (or the sign) of n_P.
    Erm {
        file: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        sigma: RationalPoly,
        /// Queried bit (bit01 loss only).
        #[arg(long, default_value_t = 0)]
        j: u64,
        /// Loss values a < b at θ* for YES and NO programs; the hinge loss needs a = 0.
        #[arg(long, num_args = 2, value_names = ["A", "B"], default_values_t = [0, 1])]
        gap: Vec<u64>,
        #[arg(long, value_enum, default_value_t = LossKind::Bit01)]
        loss: LossKind,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Instance whose gradient at θ* is B·a₀·n_P.
    Backprop {
        file: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        sigma: RationalPoly,
        #[arg(long, value_enum)]
        variant: VariantKind,
        #[arg(long, default_value_t = 0)]
        j: u64,
        /// Sample copies B; for the sign variant also the promise gap.
        #[arg(long)]
        copies: Option<u64>,
        /// Compile the bounded-norm normalization instead (bit variant only).
        #[arg(long)]
        bn: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum NetCmd {
    /// Evaluate every vertex; without --input the first main sample is used.
    Eval {
        instance: PathBuf,
        /// Source value as name=value; repeatable.
        #[arg(long = "input", value_parser = parse_assignment, allow_hyphen_values = true)]
        inputs: Vec<(String, Rational)>,
        /// Parameters file; defaults to θ*.
        #[arg(long)]
        theta: Option<PathBuf>,
        #[command(flatten)]
        budget: Budget,
    },
    /// One partial derivative of the total loss.
    Grad {
        instance: PathBuf,
        #[arg(long)]
        edge: String,
        #[arg(long, default_value = "weight")]
        wrt: Wrt,
        #[arg(long)]
        theta: Option<PathBuf>,
        #[command(flatten)]
        budget: Budget,
    },
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Accept iff |enc θ| ≤ C₁·|I|^C₂ and the total loss is at most γ.
    Erm {
        instance: PathBuf,
        #[arg(long)]
        theta: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        gamma: Rational,
        #[arg(long, num_args = 2, value_names = ["C1", "C2"])]
        enc_bound: Option<Vec<u64>>,
        #[command(flatten)]
        budget: Budget,
    },
    /// Answer the question an instance encodes by evaluating at θ*.
    Decide {
        instance: PathBuf,
        #[command(flatten)]
        budget: Budget,
    },
}

#[derive(Subcommand)]
enum PwlCmd {
    /// One exact step θ − η·∇J(θ) under the instance's loss.
    Step {
        instance: PathBuf,
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        eta: Rational,
        /// Write the updated parameters here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LearnerKind {
    Min,
    Random,
}

#[derive(Subcommand)]
enum PacCmd {
    /// Failure rate of consistent learners against the adversarial pair.
    Simulate {
        /// Precision values; comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        q: Vec<u64>,
        /// Sample sizes; comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        m: Vec<u64>,
        #[arg(long, default_value_t = 20_000)]
        trials: u64,
        #[arg(long, value_enum, default_value_t = LearnerKind::Min)]
        learner: LearnerKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Confidence parameter for the reported sample bound.
        #[arg(long, default_value_t = 0.25)]
        delta: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// First-layer gradient bit-length for depths 0..=D.
    DepthGrowth {
        #[arg(long, value_parser = parse_growth_activation)]
        activation: GrowthActivation,
        #[arg(long)]
        max_depth: usize,
        #[arg(long, default_value_t = 0)]
        min_depth: usize,
        #[arg(long, default_value_t = DEFAULT_WIDTH)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Record wall-clock time; otherwise runtime_ms is 0 and output is reproducible.
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        budget: Budget,
    },
}

fn parse_assignment(s: &str) -> Result<(String, Rational), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got {s:?}"))?;
    let value = value.parse::<Rational>().map_err(|e| e.to_string())?;
    Ok((name.to_string(), value))
}

fn parse_growth_activation(s: &str) -> Result<GrowthActivation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn emit(output: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
        }
        None => {
            outln!("{text}");
            Ok(())
        }
    }
}

fn load_instance(path: &Path) -> anyhow::Result<Instance> {
    parse_instance(&read(path)?).with_context(|| format!("invalid instance {}", path.display()))
}

fn load_theta(inst: &Instance, path: Option<&Path>) -> anyhow::Result<Theta> {
    match path {
        Some(p) => parse_theta(inst.network(), &read(p)?)
            .with_context(|| format!("invalid parameters {}", p.display())),
        None => Ok(inst.theta_star().clone()),
    }
}

fn sign_word(s: SignClass) -> &'static str {
    match s {
        SignClass::Negative => "negative",
        SignClass::Zero => "zero",
        SignClass::Positive => "positive",
    }
}

fn print_report(r: &GadgetReport) {
    eprintln!(
        "gates: {} add, {} sub, {} mul; mu = {}",
        r.add_gates, r.sub_gates, r.mul_gates, r.mu
    );
    eprintln!(
        "network: {} vertices (expected {}), {} edges (expected {})",
        r.vertices, r.expected_vertices, r.edges, r.expected_edges
    );
    eprintln!(
        "samples: {} auxiliary, {} main; max θ* bit-length {}",
        r.aux_samples,
        r.main_samples,
        r.max_theta_bit_length.get()
    );
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Slp(cmd) => slp(cmd),
        Command::Lambda(cmd) => lambda(cmd),
        Command::Compile(cmd) => compile(cmd),
        Command::Net(cmd) => net(cmd),
        Command::Verify(cmd) => verify(cmd),
        Command::Pwl(cmd) => pwl(cmd),
        Command::Pac(cmd) => pac(cmd),
        Command::Bench(cmd) => bench(cmd),
    }
}

fn slp(cmd: SlpCmd) -> anyhow::Result<u8> {
    let load = |file: &Path| -> anyhow::Result<Slp> {
        Slp::parse(&read(file)?).with_context(|| format!("invalid program {}", file.display()))
    };
    match cmd {
        SlpCmd::Eval { file, budget, all } => {
            let p = load(&file)?;
            let report = p.eval(budget.max_bits)?;
            if all {
                for (i, (v, b)) in report.values.iter().zip(&report.bit_lengths).enumerate() {
                    outln!("a{i} = {v} ({} bits)", b.get());
                }
            }
            outln!("value: {}", report.value);
            outln!("bits: {}", report.value.bit_length().get());
            outln!("max_bits: {}", report.max_bit_length.get());
            Ok(0)
        }
        SlpCmd::Bit { file, j, budget } => {
            let b = load(&file)?.bit(j, budget.max_bits)?;
            outln!("{b}");
            Ok(if b == 1 { 0 } else { EXIT_NO })
        }
        SlpCmd::Sign { file, budget } => {
            outln!("{}", sign_word(load(&file)?.sign(budget.max_bits)?));
            Ok(0)
        }
        SlpCmd::Normalize { file, output } => {
            let bn = normalize_bn(&load(&file)?)?;
            eprintln!(
                "gates: {}; output scale 2^-{}",
                bn.gate_count, bn.scale_exponent
            );
            emit(output.as_deref(), bn.program.to_string().trim_end())?;
            Ok(0)
        }
    }
}

fn lambda(cmd: LambdaCmd) -> anyhow::Result<u8> {
    match cmd {
        LambdaCmd::Solve { poly } => {
            let lam = solve_lambda(&poly)?;
            for (j, (l, li)) in lam.lambdas.iter().zip(&lam.integer_lambdas).enumerate() {
                outln!("lambda_{j} = {l}    lambda'_{j} = {li}");
            }
            outln!("D = {}", lam.common_denominator);
            Ok(0)
        }
        LambdaCmd::Verify { poly, trials, seed } => {
            let lam = solve_lambda(&poly)?;
            let report = verify_product_identity(&poly, &lam, trials, seed);
            match report.failure {
                None => {
                    outln!("identity holds at {trials} points");
                    Ok(0)
                }
                Some(c) => {
                    outln!(
                        "counterexample: x = {}, y = {}: {} ≠ {}",
                        c.x,
                        c.y,
                        c.lhs,
                        c.expected
                    );
                    Ok(EXIT_NO)
                }
            }
        }
    }
}

fn compile(cmd: CompileCmd) -> anyhow::Result<u8> {
    let load = |file: &Path| -> anyhow::Result<Slp> {
        Slp::parse(&read(file)?).with_context(|| format!("invalid program {}", file.display()))
    };
    match cmd {
        CompileCmd::Erm {
            file,
            sigma,
            j,
            gap,
            loss,
            output,
        } => {
            let p = load(&file)?;
            let inst = match loss {
                LossKind::Bit01 => compile_erm(&p, &sigma, j, Gap::new(gap[0], gap[1])?)?,
                LossKind::Hinge => {
                    if gap[0] != 0 {
                        bail!("the hinge instance has gap (0, B); got a = {}", gap[0]);
                    }
                    compile_hinge_posslp(&p, &sigma, gap[1])?
                }
            };
            print_report(&inst.report());
            emit(output.as_deref(), &serialize_instance(&Instance::Erm(inst)))?;
            Ok(0)
        }
        CompileCmd::Backprop {
            file,
            sigma,
            variant,
            j,
            copies,
            bn,
            output,
        } => {
            let p = load(&file)?;
            let variant = match variant {
                VariantKind::Sign => BackpropVariant::Sign {
                    promise: copies.unwrap_or(1),
                },
                VariantKind::Bit => BackpropVariant::Bit { j },
            };
            let mode = if bn {
                A0Mode::BoundedNorm
            } else {
                A0Mode::Unit
            };
            let inst = compile_backprop(&p, &sigma, variant, copies, mode)?;
            print_report(&inst.report());
            emit(
                output.as_deref(),
                &serialize_instance(&Instance::Backprop(inst)),
            )?;
            Ok(0)
        }
    }
}

fn net(cmd: NetCmd) -> anyhow::Result<u8> {
    match cmd {
        NetCmd::Eval {
            instance,
            inputs,
            theta,
            budget,
        } => {
            let inst = load_instance(&instance)?;
            let theta = load_theta(&inst, theta.as_deref())?;
            let net = inst.network();
            let x = if inputs.is_empty() {
                inst.dataset()
                    .iter()
                    .find(|s| s.flag == exactnet_core::SampleFlag::Main)
                    .map(|s| s.input.clone())
                    .unwrap_or_default()
            } else {
                let mut x = VertexVector::new();
                for (name, value) in inputs {
                    x.set(net.require_vertex(&name)?, value);
                }
                x
            };
            let trace = net.forward(&theta, &x, budget.max_bits)?;
            for (v, value) in net.vertices().iter().zip(&trace.values) {
                outln!("{} {value}", v.name);
            }
            eprintln!("max bit-length: {}", trace.max_bit_length.get());
            Ok(0)
        }
        NetCmd::Grad {
            instance,
            edge,
            wrt,
            theta,
            budget,
        } => {
            let inst = load_instance(&instance)?;
            let theta = load_theta(&inst, theta.as_deref())?;
            let net = inst.network();
            let e = net.require_edge(&edge)?;
            let g =
                net.grad_coordinate(&theta, inst.dataset(), inst.loss(), e, wrt, budget.max_bits)?;
            outln!("{}", g.value);
            if g.at_kink {
                eprintln!(
                    "warning: a sample sits on a kink; the value uses the subgradient convention"
                );
            }
            Ok(0)
        }
    }
}

fn verify(cmd: VerifyCmd) -> anyhow::Result<u8> {
    match cmd {
        VerifyCmd::Erm {
            instance,
            theta,
            gamma,
            enc_bound,
            budget,
        } => {
            let Instance::Erm(inst) = load_instance(&instance)? else {
                bail!("verify erm needs a training instance");
            };
            let theta = parse_theta(&inst.network, &read(&theta)?)
                .with_context(|| format!("invalid parameters {}", theta.display()))?;
            let bound = enc_bound.map_or_else(EncodingBound::default, |c| EncodingBound {
                c1: c[0],
                c2: c[1] as u32,
            });
            let verdict = verify_witness(&inst, &theta, &gamma, bound, budget.max_bits)?;
            Ok(match verdict {
                WitnessVerdict::Accept { loss } => {
                    outln!("ACCEPT (loss {loss} ≤ {gamma})");
                    0
                }
                WitnessVerdict::RejectLoss { loss } => {
                    outln!("REJECT (loss {loss} > {gamma})");
                    EXIT_NO
                }
                WitnessVerdict::RejectEncoding {
                    encoding_bits,
                    limit,
                } => {
                    outln!("REJECT (parameters take {encoding_bits} bits, limit {limit})");
                    EXIT_NO
                }
            })
        }
        VerifyCmd::Decide { instance, budget } => match load_instance(&instance)? {
            Instance::Erm(inst) => {
                eprintln!("|I| = {} bits", instance_bits(&Instance::Erm(inst.clone())));
                let d = decide_at_theta_star_with_budget(&inst, budget.max_bits)?;
                outln!("{d}");
                Ok(if d == Decision::Yes { 0 } else { EXIT_NO })
            }
            Instance::Backprop(inst) => {
                eprintln!("gradient: {}", inst.gradient(budget.max_bits)?);
                let a = inst.answer(budget.max_bits)?;
                outln!("{a}");
                Ok(if a == BackpropAnswer::Yes { 0 } else { EXIT_NO })
            }
        },
    }
}

fn pwl(cmd: PwlCmd) -> anyhow::Result<u8> {
    let PwlCmd::Step {
        instance,
        theta,
        eta,
        output,
    } = cmd;
    let inst = load_instance(&instance)?;
    let theta = load_theta(&inst, theta.as_deref())?;
    let spec: &LossSpec = inst.loss();
    let report = gd_step(inst.network(), &theta, inst.dataset(), spec, &eta)?;
    eprintln!("loss: {}", report.loss);
    eprintln!(
        "ops: {}; max bit-length: {}; N = {}",
        report.ops,
        report.max_bit_length.get(),
        report.instance_size
    );
    if report.discontinuous {
        eprintln!("warning: a discontinuous activation is present; derivatives at jumps follow the breakpoint rule");
    }
    if report.kink_samples > 0 {
        eprintln!(
            "warning: {} samples sit on a loss kink",
            report.kink_samples
        );
    }
    emit(
        output.as_deref(),
        &serialize_theta(inst.network(), &report.theta),
    )?;
    Ok(0)
}

fn pac(cmd: PacCmd) -> anyhow::Result<u8> {
    let PacCmd::Simulate {
        q,
        m,
        trials,
        learner,
        seed,
        delta,
        csv,
    } = cmd;
    let learner = match learner {
        LearnerKind::Min => Learner::MinC,
        LearnerKind::Random => Learner::Random,
    };
    let mut out = String::from(SimReport::CSV_HEADER);
    out.push('\n');
    let mut below = false;
    for &qq in &q {
        for &mm in &m {
            let r = simulate_lower_bound(qq, mm, trials, learner, seed, delta)?;
            below |= !r.meets_floor();
            out.push_str(&r.csv_row());
            out.push('\n');
        }
    }
    match csv {
        Some(path) => {
            fs::write(&path, &out).with_context(|| format!("cannot write {}", path.display()))?
        }
        None => out!("{out}"),
    }
    if below {
        eprintln!("warning: some empirical rate is more than 3σ below the floor");
    }
    Ok(0)
}

fn bench(cmd: BenchCmd) -> anyhow::Result<u8> {
    let BenchCmd::DepthGrowth {
        activation,
        max_depth,
        min_depth,
        width,
        seed,
        csv,
        timing,
        budget,
    } = cmd;
    if min_depth > max_depth {
        bail!("--min-depth exceeds --max-depth");
    }
    let rows = depth_growth_experiment(
        min_depth..=max_depth,
        width,
        activation,
        seed,
        budget.max_bits,
        timing,
    )?;
    let text = growth_csv(&rows);
    match csv {
        Some(path) => {
            fs::write(&path, &text).with_context(|| format!("cannot write {}", path.display()))?
        }
        None => out!("{text}"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let budget = err
                .chain()
                .any(|e| e.downcast_ref::<Error>().is_some_and(Error::is_bit_budget));
            ExitCode::from(if budget { EXIT_BUDGET } else { EXIT_USAGE })
        }
    }
}
