//! The `openbook` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use openbook_core::dirichlet::{
    solve_dirichlet, Analysis, Fixture, FrequencyVariant, HalfBallGrid, QFunction, SolveOptions,
};
use openbook_core::excess::{
    excess_report, fit_open_book, prune, PruneAction, PruneEvaluator, ReportOptions,
};
use openbook_core::geometry::{book_angle, OpenBook};
use openbook_core::math;
use openbook_core::measures::{
    density, sample_open_book, DensityFlavor, DiscreteCurrent, SampleLayout,
};
use openbook_core::transport::{
    strong_excess_against, strong_excess_noise_floor, unbalanced_plan, wasserstein2_eps,
};

use crate::config::Params;
use crate::decay::{decay_loop, noise_floor, CurrentSource};
use crate::decomposition::decomposition_check;
use crate::error::{LabError, Result};
use crate::fixtures::{blowup_current, bridge, concat, rotating_book, BlowupFamily};
use crate::formats::{self, num, opt, BookFile, Table};
use crate::holder::{decay_exponent, normal_map_holder};
use crate::manifest::{write_record_stream, Manifest};
use crate::profiles::{nonconcentration_profile, remainder_profile};
use crate::whitney::{whitney_classify, CubeClass};

const RADII_GRAMMAR: &str = "a:b:n (n log-spaced radii from a to b, 0 < a ≤ b, n ≥ 1)";

#[derive(Parser, Debug)]
#[command(
    name = "openbook",
    version,
    about = "Open-book excess, transport and frequency experiments"
)]
pub struct Cli {
    /// JSON parameter schedule.
    #[arg(long, global = true, value_name = "FILE")]
    pub params: Option<PathBuf>,
    /// Treat violations of `θ_N ≪ ε_i ≪ γ` as errors.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a current or tabulate a Q-valued fixture.
    Gen(GenArgs),
    /// Density ratios over a radius ladder.
    Density(DensityArgs),
    /// Excesses against a cone, and the profiles built on them.
    Excess(ExcessArgs),
    /// Balanced or unbalanced transport between two currents.
    Transport(TransportArgs),
    /// Merge close sheets until the stop rule holds.
    Prune(PruneArgs),
    /// Frequency, doubling, height decay and identities of a Q-valued function.
    Frequency(FrequencyArgs),
    /// Sheetwise Dirichlet problem on the half ball.
    Solve(SolveArgs),
    /// The iterative excess-decay loop.
    Decay(DecayArgs),
    /// Whitney cube classification.
    Whitney(WhitneyArgs),
    /// Invariant checks on a current, a cone and a parameter file.
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Layout {
    Stratified,
    Shells,
}

impl From<Layout> for SampleLayout {
    fn from(l: Layout) -> Self {
        match l {
            Layout::Stratified => SampleLayout::Stratified,
            Layout::Shells => SampleLayout::Shells,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Family {
    TwoSheets,
    Multiplicity,
    ThreeSheets,
}

impl From<Family> for BlowupFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::TwoSheets => BlowupFamily::TwoSheets,
            Family::Multiplicity => BlowupFamily::Multiplicity,
            Family::ThreeSheets => BlowupFamily::ThreeSheets,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Book to sample (planar shorthand or full form).
    #[arg(long, value_name = "FILE", conflicts_with_all = ["family", "qfixture"])]
    pub book: Option<PathBuf>,
    /// Blowup-sequence family: a graph over its own book.
    #[arg(long, value_enum)]
    pub family: Option<Family>,
    #[arg(long, default_value_t = 0.05)]
    pub amplitude: f64,
    /// Rotate the sheet normals at this rate along the first spine axis (planar books).
    #[arg(long, value_name = "OMEGA", requires = "book")]
    pub rotating: Option<f64>,
    /// Add a handle of this mass between sheets 0 and 1.
    #[arg(long, value_name = "MASS")]
    pub bridge: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub bridge_count: usize,
    /// Q-valued fixture (JSON) to tabulate on a half-ball grid instead.
    #[arg(long, value_name = "FILE")]
    pub qfixture: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    #[arg(long, value_enum, default_value = "stratified")]
    pub layout: Layout,
    /// Grid spacing, as a number or `1/k`.
    #[arg(long, value_parser = parse_h)]
    pub h: Option<f64>,
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Ball {
    /// `0` for the origin, or comma-separated coordinates.
    #[arg(long, default_value = "0")]
    pub center: String,
    #[arg(long, conflicts_with = "radii")]
    pub radius: Option<f64>,
    #[arg(long, value_parser = parse_radii, value_name = "a:b:n")]
    pub radii: Option<Radii>,
}

impl Ball {
    fn radii(&self, default: &[f64]) -> Vec<f64> {
        match (&self.radii, self.radius) {
            (Some(r), _) => r.0.clone(),
            (None, Some(r)) => vec![r],
            _ => default.to_vec(),
        }
    }
}

#[derive(Args, Debug)]
pub struct DensityArgs {
    #[arg(short = 'i', long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub ball: Ball,
    #[arg(long, value_enum)]
    pub flavor: Option<Flavor>,
    /// Add the monotonicity remainder `∫_{B_r}|q^⊥|²/|q|^{m+2}` as a column.
    #[arg(long)]
    pub remainder: bool,
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Flavor {
    Interior,
    Boundary,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum ExcessMode {
    Report,
    Nonconcentration,
    Remainder,
    Holder,
}

#[derive(Args, Debug)]
pub struct ExcessArgs {
    #[arg(short = 'i', long)]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub cone: PathBuf,
    #[command(flatten)]
    pub ball: Ball,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lp_eps: Option<f64>,
    /// Refit the cone over the given cone's spine at each radius.
    #[arg(long)]
    pub fit: bool,
    #[arg(long, value_enum, default_value = "report")]
    pub mode: ExcessMode,
    /// σ ladder for the non-concentration profile.
    #[arg(long, value_parser = parse_radii, value_name = "a:b:n")]
    pub sigma: Option<Radii>,
    /// Boundary points (JSON list) for the Hölder table.
    #[arg(long, value_name = "FILE")]
    pub points: Option<PathBuf>,
    /// Hölder exponent; `log 2 / |log η|` by default.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TransportArgs {
    #[arg(short = 'i', long)]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub target: PathBuf,
    /// Spine for the unbalanced distance; balanced W₂ without it.
    #[arg(long, value_name = "FILE")]
    pub cone: Option<PathBuf>,
    #[arg(long)]
    pub lp_eps: Option<f64>,
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PruneArgs {
    #[arg(short = 'i', long)]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub cone: PathBuf,
    #[command(flatten)]
    pub ball: Ball,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drive the stop rule with the L² excess instead of 𝔼.
    #[arg(long)]
    pub l2: bool,
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum FrequencyMode {
    Sharp,
    Smoothed,
    Doubling,
    HeightDecay,
    Identities,
}

#[derive(Args, Debug)]
pub struct FrequencyArgs {
    /// Q-valued function file written by `gen --qfixture` or `solve`.
    #[arg(short = 'i', long, conflicts_with = "fixture")]
    pub input: Option<PathBuf>,
    /// Closed-form fixture (JSON), tabulated at spacing `--h`.
    #[arg(long, value_name = "FILE", requires = "h")]
    pub fixture: Option<PathBuf>,
    #[arg(long, value_parser = parse_h)]
    pub h: Option<f64>,
    #[command(flatten)]
    pub ball: Ball,
    #[arg(long, value_enum, default_value = "sharp")]
    pub mode: FrequencyMode,
    /// Exponent for the height-decay inequality; the fixture's homogeneity by default.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fail on ambiguous sheet matching between grid neighbours.
    #[arg(long)]
    pub strict_matching: bool,
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Fixture (JSON) whose values on the unit sphere are the boundary data.
    #[arg(long, value_name = "FILE")]
    pub fixture: PathBuf,
    /// Sheet multiplicities grouping the fixture's atoms, e.g. `1,1`; one sheet per atom by default.
    #[arg(long, value_delimiter = ',')]
    pub sheets: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_h)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iter: usize,
    /// Solution file.
    #[arg(short = 'o', long)]
    pub output: PathBuf,
    /// Solver statistics (CSV); stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DecayArgs {
    /// Fixed current, restricted to each ball.
    #[arg(short = 'i', long, conflicts_with_all = ["family", "manifest"])]
    pub input: Option<PathBuf>,
    /// Starting cone; the family's book by default.
    #[arg(long, value_name = "FILE")]
    pub cone: Option<PathBuf>,
    /// Resample this blowup family at every scale.
    #[arg(long, value_enum, conflicts_with = "manifest")]
    pub family: Option<Family>,
    #[arg(long, default_value_t = 0.05)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "0")]
    pub center: String,
    #[arg(long, default_value_t = 0.5)]
    pub radius: f64,
    /// Batch manifest; `-o` names the output directory.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct WhitneyArgs {
    #[arg(short = 'i', long)]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub cone: PathBuf,
    /// Boundary sample points (JSON list).
    #[arg(long, value_name = "FILE")]
    pub gamma: Option<PathBuf>,
    #[arg(long)]
    pub max_generation: Option<u32>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(short = 'i', long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub cone: Option<PathBuf>,
    #[arg(long, default_value = "0")]
    pub center: String,
    #[arg(long, default_value_t = 0.9)]
    pub radius: f64,
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

/// A log-spaced radius ladder.
#[derive(Clone, Debug, PartialEq)]
pub struct Radii(pub Vec<f64>);

/// `a:b:n`
pub fn parse_radii(s: &str) -> std::result::Result<Radii, String> {
    let bad = || format!("expected {RADII_GRAMMAR}, got {s:?}");
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts.as_slice() else {
        return Err(bad());
    };
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if !(a > 0.0 && a <= b && b.is_finite()) || n == 0 || (n > 1 && a == b) {
        return Err(bad());
    }
    Ok(Radii(math::log_spaced(a, b, n)))
}

/// A spacing given as a number or `1/k`.
pub fn parse_h(s: &str) -> std::result::Result<f64, String> {
    let bad = || format!("expected a spacing such as 0.015625 or 1/64, got {s:?}");
    let h = match s.split_once('/') {
        Some((p, q)) => {
            p.trim().parse::<f64>().map_err(|_| bad())?
                / q.trim().parse::<f64>().map_err(|_| bad())?
        }
        None => s.trim().parse::<f64>().map_err(|_| bad())?,
    };
    if h > 0.0 && h <= 0.5 {
        Ok(h)
    } else {
        Err(bad())
    }
}

/// `0` for the origin of `R^dim`, or exactly `dim` comma-separated coordinates.
pub fn parse_center(s: &str, dim: usize) -> Result<Vec<f64>> {
    let bad = || {
        LabError::Config(format!(
            "--center: expected 0 or {dim} comma-separated coordinates, got {s:?}"
        ))
    };
    if s.trim() == "0" {
        return Ok(vec![0.0; dim]);
    }
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    if v.len() != dim {
        return Err(bad());
    }
    Ok(v)
}

fn require_seed(seed: Option<u64>, cmd: &str) -> Result<u64> {
    seed.ok_or_else(|| LabError::Config(format!("--seed is required for {cmd}")))
}

enum Status {
    Ok,
    /// An asserted invariant failed.
    Failed,
}

struct Ctx {
    params: Params,
}

/// Parses `argv` and runs the subcommand; returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(stderr, "{}", e.render());
            return code;
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(Status::Ok) => 0,
        Ok(Status::Failed) => 1,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if usage_error(&e) {
                2
            } else {
                1
            }
        }
    }
}

fn usage_error(e: &LabError) -> bool {
    use openbook_core::Error as E;
    e.is_usage()
        || matches!(
            e,
            LabError::Core(
                E::InvalidParameter(_)
                    | E::MismatchedDimension { .. }
                    | E::InvalidBook(_)
                    | E::InvalidSpine(_)
                    | E::MismatchedQ(..)
                    | E::MismatchedSpine
                    | E::TooFewSamples(_)
                    | E::MissingTangents
            )
        )
}

fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<Status> {
    let params = match &cli.params {
        Some(p) => Params::load(p)?,
        None => Params::default(),
    };
    // check reports ordering violations itself
    if cli.strict && !matches!(cli.command, Command::Check(_)) {
        params.validate_strict()?;
    }
    let ctx = Ctx { params };
    match &cli.command {
        Command::Gen(a) => gen(&ctx, a, stdout),
        Command::Density(a) => density_cmd(&ctx, a, stdout),
        Command::Excess(a) => excess_cmd(&ctx, a, stdout),
        Command::Transport(a) => transport_cmd(&ctx, a, stdout),
        Command::Prune(a) => prune_cmd(&ctx, a, stdout),
        Command::Frequency(a) => frequency_cmd(&ctx, a, stdout),
        Command::Solve(a) => solve_cmd(a, stdout),
        Command::Decay(a) => decay_cmd(&ctx, a, stdout, stderr),
        Command::Whitney(a) => whitney_cmd(&ctx, a, stdout),
        Command::Check(a) => check_cmd(&ctx, cli.strict, a, stdout),
    }
}

fn emit(output: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, bytes).map_err(|e| LabError::io(p, e)),
        None => stdout
            .write_all(bytes)
            .map_err(|e| LabError::io("<stdout>", e)),
    }
}

fn emit_table(output: Option<&Path>, table: &Table, stdout: &mut dyn Write) -> Result<()> {
    emit(output, table.to_string()?.as_bytes(), stdout)
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" ")
}

fn load_fixture(path: &Path) -> Result<Fixture> {
    formats::read_json(path)
}

fn gen(_ctx: &Ctx, a: &GenArgs, stdout: &mut dyn Write) -> Result<Status> {
    if let Some(path) = &a.qfixture {
        let h =
            a.h.ok_or_else(|| LabError::Config("--h is required with --qfixture".into()))?;
        let f = load_fixture(path)?;
        let m = if matches!(f, Fixture::Branch { .. }) {
            3
        } else {
            2
        };
        let grid = HalfBallGrid::new(m, h)?;
        let u = QFunction::from_fixture(&grid, &f)?;
        let mut buf = Vec::new();
        formats::write_qfunction(&mut buf, &u)?;
        emit(a.output.as_deref(), &buf, stdout)?;
        return Ok(Status::Ok);
    }
    let seed = require_seed(a.seed, "gen")?;
    let layout = SampleLayout::from(a.layout);
    let (book, mut t) = match (&a.book, a.family) {
        (Some(path), None) => {
            let file: BookFile = formats::read_json(path)?;
            let book = file.build()?;
            let t = match (a.rotating, &file) {
                (Some(omega), BookFile::Planar { planar }) => rotating_book(
                    planar.m,
                    planar.n,
                    &planar.sheets,
                    omega,
                    a.radius,
                    a.count,
                    seed,
                )?,
                (Some(_), BookFile::Full(_)) => {
                    return Err(LabError::Config("--rotating needs a planar book".into()));
                }
                (None, _) => sample_open_book(&book, a.radius, a.count, seed, layout)?,
            };
            (book, t)
        }
        (None, Some(f)) => {
            let f = BlowupFamily::from(f);
            (
                f.book(),
                blowup_current(f, a.amplitude, a.radius, a.count, seed, layout)?,
            )
        }
        _ => {
            return Err(LabError::Config(
                "gen needs one of --book, --family or --qfixture".into(),
            ))
        }
    };
    if let Some(mass) = a.bridge {
        if book.n_sheets() < 2 {
            return Err(LabError::Config(
                "--bridge needs at least two sheets".into(),
            ));
        }
        let h = bridge(&book, 0, 1, mass, a.radius, a.bridge_count, seed)?;
        t = concat(&t, &h);
    }
    let mut buf = Vec::new();
    formats::write_current(&mut buf, &t)?;
    emit(a.output.as_deref(), &buf, stdout)?;
    Ok(Status::Ok)
}

fn density_cmd(ctx: &Ctx, a: &DensityArgs, stdout: &mut dyn Write) -> Result<Status> {
    let t = formats::load_current(&a.input)?;
    let p = parse_center(&a.ball.center, t.dim())?;
    let radii = a.ball.radii(&math::log_spaced(0.1, 1.0, 16));
    let mut dp = ctx.params.density();
    if let Some(f) = a.flavor {
        dp.flavor = match f {
            Flavor::Interior => DensityFlavor::Interior,
            Flavor::Boundary => DensityFlavor::Boundary,
        };
    }
    let rem = if a.remainder {
        Some(remainder_profile(&t, &book_for_remainder(&t)?, &p, &radii)?)
    } else {
        None
    };
    let mut header = vec!["r", "density", "count", "sparse"];
    if rem.is_some() {
        header.push("remainder");
    }
    header.extend(["resolution", "noise_floor"]);
    let mut table = Table::new(&header);
    let unit = math::unit_ball_volume(t.m);
    for (k, &r) in radii.iter().enumerate() {
        let d = density(&t, &p, r, &dp)?;
        // standard error of the ball mass, as a density
        let var: f64 = t
            .points
            .iter()
            .zip(&t.weights)
            .filter(|(x, _)| math::dist_sq(x, &p) < r * r)
            .map(|(_, w)| w * w)
            .sum();
        let mut row = vec![
            num(r),
            num(d.value),
            d.count.to_string(),
            d.sparse.to_string(),
        ];
        if let Some(rem) = &rem {
            row.push(num(rem.values[k]));
        }
        row.push(t.len().to_string());
        row.push(num(var.sqrt() / (unit * r.powi(t.m as i32))));
        table.push(row);
    }
    emit_table(a.output.as_deref(), &table, stdout)?;
    Ok(Status::Ok)
}

/// The remainder integral only uses the spine for its exclusion zone: the standard one.
fn book_for_remainder(t: &DiscreteCurrent) -> Result<OpenBook> {
    Ok(OpenBook::planar(t.m, t.dim() - t.m, &[(0.0, 1)])?)
}

fn exact_sample(c: &OpenBook, p: &[f64], r: f64, t: &DiscreteCurrent) -> Result<DiscreteCurrent> {
    let radius = r + math::dist(p, c.spine().origin());
    Ok(sample_open_book(
        c,
        radius,
        t.len().max(100),
        t.seed.unwrap_or(0),
        SampleLayout::Stratified,
    )?)
}

fn excess_cmd(ctx: &Ctx, a: &ExcessArgs, stdout: &mut dyn Write) -> Result<Status> {
    let t = formats::load_current(&a.input)?;
    let cone = formats::load_book(&a.cone)?;
    let p = parse_center(&a.ball.center, t.dim())?;
    let eps = a.lp_eps.unwrap_or(ctx.params.lp_eps);
    let table = match a.mode {
        ExcessMode::Report => {
            let seed = require_seed(a.seed, "excess")?;
            let radii = a.ball.radii(&[1.0]);
            let mut table = Table::new(&[
                "r",
                "sheets",
                "q",
                "alpha",
                "l2",
                "reverse_l2",
                "reverse_bias",
                "strong",
                "amended",
                "resolution",
                "noise_floor",
            ]);
            for &r in &radii {
                let c = if a.fit {
                    fit_open_book(&t, cone.spine(), &p, r, &ctx.params.fit(Some(cone.q())))?
                } else {
                    cone.clone()
                };
                let opts = ReportOptions {
                    strong: None,
                    reverse: ctx.params.cone_sampling(seed),
                    kappa: ctx.params.kappa,
                    a_gamma: ctx.params.a_gamma,
                    a_sigma: ctx.params.a_sigma,
                    ..ReportOptions::default()
                };
                let rep = excess_report(&t, &c, &p, r, &opts)?;
                let inside = t.ball_mass(&p, r).1;
                let count = ctx.params.cone_count.unwrap_or(4 * inside).max(100);
                let sample = sample_open_book(
                    &c,
                    r + math::dist(&p, c.spine().origin()),
                    count,
                    seed,
                    ctx.params.layout,
                )?;
                let strong = strong_excess_against(&t, &sample, &c, &p, r, eps)?.value;
                let amended = openbook_core::excess::amended_excess(
                    strong,
                    ctx.params.kappa,
                    ctx.params.a_gamma,
                    ctx.params.a_sigma,
                    r,
                );
                let floor = strong_excess_noise_floor(
                    &c,
                    &p,
                    r,
                    inside.max(100),
                    (seed, seed ^ 0x9e37_79b9),
                )?;
                table.push(vec![
                    num(r),
                    c.n_sheets().to_string(),
                    c.q().to_string(),
                    num(book_angle(&c)),
                    num(rep.l2),
                    num(rep.reverse_l2),
                    num(rep.reverse_bias),
                    num(strong),
                    num(amended),
                    t.len().to_string(),
                    num(floor),
                ]);
            }
            table
        }
        ExcessMode::Nonconcentration => {
            let r = a.ball.radii(&[1.0])[0];
            let sigma = a
                .sigma
                .clone()
                .map(|s| s.0)
                .unwrap_or_else(|| math::log_spaced(0.05, 1.0, 8));
            let prof = nonconcentration_profile(&t, &cone, &p, r, &sigma)?;
            let base =
                nonconcentration_profile(&exact_sample(&cone, &p, r, &t)?, &cone, &p, r, &sigma)?;
            let mut table = Table::new(&[
                "r",
                "sigma",
                "value",
                "total",
                "slope",
                "resolution",
                "noise_floor",
            ]);
            for k in 0..sigma.len() {
                table.push(vec![
                    num(r),
                    num(sigma[k]),
                    num(prof.values[k]),
                    num(prof.total),
                    opt(prof.slope),
                    t.len().to_string(),
                    num(base.values[k]),
                ]);
            }
            table
        }
        ExcessMode::Remainder => {
            let radii = a.ball.radii(&math::log_spaced(0.1, 1.0, 8));
            let rmax = radii.iter().copied().fold(0.0, f64::max);
            let prof = remainder_profile(&t, &cone, &p, &radii)?;
            let base = remainder_profile(&exact_sample(&cone, &p, rmax, &t)?, &cone, &p, &radii)?;
            let l2 = openbook_core::excess::l2_excess(&t, &cone, &p, rmax)?;
            let mut table = Table::new(&[
                "r",
                "remainder",
                "excluded",
                "l2",
                "ratio",
                "resolution",
                "noise_floor",
            ]);
            for k in 0..radii.len() {
                table.push(vec![
                    num(radii[k]),
                    num(prof.values[k]),
                    prof.excluded[k].to_string(),
                    num(l2),
                    num(prof.values[k] / l2),
                    t.len().to_string(),
                    num(base.values[k]),
                ]);
            }
            table
        }
        ExcessMode::Holder => {
            let path = a
                .points
                .as_ref()
                .ok_or_else(|| LabError::Config("--points is required for --mode holder".into()))?;
            let points = formats::load_points(path)?;
            let radii = a.ball.radii(&[0.8, 0.6, 0.4]);
            let alpha = a.alpha.unwrap_or_else(|| decay_exponent(ctx.params.eta));
            let fit = ctx.params.fit(Some(cone.q()));
            let tab = normal_map_holder(&t, cone.spine(), &points, &radii, &fit, alpha)?;
            let rmax = radii.iter().copied().fold(0.0, f64::max);
            let reach = rmax
                + points
                    .iter()
                    .map(|q| math::dist(q, cone.spine().origin()))
                    .fold(0.0, f64::max);
            let base = normal_map_holder(
                &exact_sample(&cone, cone.spine().origin(), reach, &t)?,
                cone.spine(),
                &points,
                &radii,
                &fit,
                alpha,
            )?;
            let mut table = Table::new(&[
                "i",
                "j",
                "distance",
                "g",
                "ratio",
                "alpha",
                "resolution",
                "noise_floor",
            ]);
            for row in &tab.rows {
                let floor = base
                    .rows
                    .iter()
                    .find(|b| b.i == row.i && b.j == row.j)
                    .map(|b| b.g);
                table.push(vec![
                    row.i.to_string(),
                    row.j.to_string(),
                    num(row.distance),
                    num(row.g),
                    num(row.ratio),
                    num(alpha),
                    t.len().to_string(),
                    opt(floor),
                ]);
            }
            table
        }
    };
    emit_table(a.output.as_deref(), &table, stdout)?;
    Ok(Status::Ok)
}

fn transport_cmd(ctx: &Ctx, a: &TransportArgs, stdout: &mut dyn Write) -> Result<Status> {
    let s = formats::load_current(&a.input)?;
    let t = formats::load_current(&a.target)?;
    let eps = a.lp_eps.unwrap_or(ctx.params.lp_eps);
    let (mu1, mu2) = (s.measure(), t.measure());
    let mut table = Table::new(&[
        "kind",
        "distance",
        "transport",
        "source_leftover",
        "target_leftover",
        "marginal_error",
        "pairs",
        "resolution",
        "noise_floor",
    ]);
    let resolution = format!("{}x{}", s.len(), t.len());
    let floor = eps * mu1.total_mass().max(mu2.total_mass());
    match &a.cone {
        None => {
            let (d, plan) = wasserstein2_eps(&mu1, &mu2, eps)?;
            table.push(vec![
                "w2".into(),
                num(d),
                num(d),
                num(0.0),
                num(0.0),
                num(plan.marginal_error(&mu1, &mu2)),
                plan.pairs.len().to_string(),
                resolution,
                num(floor),
            ]);
        }
        Some(path) => {
            let c = formats::load_book(path)?;
            let (plan, split) = unbalanced_plan(&mu1, &mu2, c.spine(), 1.0, eps)?;
            table.push(vec![
                "unbalanced".into(),
                num(split.total()),
                num(split.transport),
                num(split.source_leftover),
                num(split.target_leftover),
                num(plan.marginal_error(&mu1, &mu2)),
                plan.pairs.len().to_string(),
                resolution,
                num(floor),
            ]);
        }
    }
    emit_table(a.output.as_deref(), &table, stdout)?;
    Ok(Status::Ok)
}

fn prune_cmd(ctx: &Ctx, a: &PruneArgs, stdout: &mut dyn Write) -> Result<Status> {
    let t = formats::load_current(&a.input)?;
    let cone = formats::load_book(&a.cone)?;
    let p = parse_center(&a.ball.center, t.dim())?;
    let r = a.ball.radii(&[1.0])[0];
    let seed = require_seed(a.seed, "prune")?;
    let evaluator = if a.l2 {
        PruneEvaluator::L2
    } else {
        PruneEvaluator::Strong(ctx.params.cone_sampling(seed))
    };
    let eps = ctx.params.epsilon_schedule(cone.n_sheets());
    let trace = prune(&t, &cone, &p, r, &eps, &evaluator)?;
    let inside = t.ball_mass(&p, r).1;
    let floor = if a.l2 {
        0.0
    } else {
        strong_excess_noise_floor(&cone, &p, r, inside.max(100), (seed, seed ^ 0x9e37_79b9))?
    };
    let mut buf = Vec::new();
    for (k, s) in trace.steps.iter().enumerate() {
        let v = serde_json::json!({
            "step": k,
            "sheets": s.cone.n_sheets(),
            "q": s.cone.q(),
            "excess": s.excess,
            "alpha": s.alpha,
            "epsilon": s.epsilon,
            "action": s.action,
            "cone": s.cone,
            "resolution": t.len(),
            "noise_floor": floor,
        });
        serde_json::to_writer(&mut buf, &v)?;
        buf.push(b'\n');
    }
    let q_conserved =
        trace.steps.iter().all(|s| s.cone.q() == cone.q()) && trace.final_cone.q() == cone.q();
    let stopped = trace
        .steps
        .last()
        .is_some_and(|s| s.action == PruneAction::Stop)
        || trace.final_sheets == 1;
    let ok = q_conserved && stopped && (trace.stop_rule_holds || trace.final_sheets == 1);
    let v = serde_json::json!({
        "evaluator": trace.evaluator,
        "final_sheets": trace.final_sheets,
        "final_cone": trace.final_cone,
        "partition": trace.partition,
        "inflation": trace.inflation,
        "stop_rule_holds": trace.stop_rule_holds,
        "q_conserved": q_conserved,
        "resolution": t.len(),
        "noise_floor": floor,
    });
    serde_json::to_writer(&mut buf, &v)?;
    buf.push(b'\n');
    emit(a.output.as_deref(), &buf, stdout)?;
    Ok(if ok { Status::Ok } else { Status::Failed })
}

fn frequency_cmd(_ctx: &Ctx, a: &FrequencyArgs, stdout: &mut dyn Write) -> Result<Status> {
    let (u, homogeneity) = match (&a.input, &a.fixture) {
        (Some(path), None) => (formats::load_qfunction(path)?, None),
        (None, Some(path)) => {
            let f = load_fixture(path)?;
            let m = if matches!(f, Fixture::Branch { .. }) {
                3
            } else {
                2
            };
            let grid = HalfBallGrid::new(m, a.h.expect("clap requires --h"))?;
            (QFunction::from_fixture(&grid, &f)?, f.homogeneity())
        }
        _ => return Err(LabError::Config("frequency needs -i or --fixture".into())),
    };
    let m = u.grid.m();
    let h = u.grid.h();
    let x = parse_center(&a.ball.center, m)?;
    let radii = a.ball.radii(&math::log_spaced(0.2, 0.9, 8));
    let an = Analysis::new(&u, a.strict_matching)?;
    let (res, floor) = (num(h), num(h * h));
    let table = match a.mode {
        FrequencyMode::Sharp | FrequencyMode::Smoothed => {
            let variant = if a.mode == FrequencyMode::Sharp {
                FrequencyVariant::Sharp
            } else {
                FrequencyVariant::Smoothed
            };
            let prof = an.profile(&x, &radii, variant)?;
            let mut table =
                Table::new(&["r", "d", "h", "i", "defect", "resolution", "noise_floor"]);
            for k in 0..radii.len() {
                table.push(vec![
                    num(radii[k]),
                    num(prof.d[k]),
                    num(prof.h[k]),
                    num(prof.i[k]),
                    num(prof.defect),
                    res.clone(),
                    floor.clone(),
                ]);
            }
            table
        }
        FrequencyMode::Doubling => {
            let mut table = Table::new(&[
                "r",
                "t",
                "i_r",
                "i_t",
                "height_lower",
                "height_upper",
                "energy_lower",
                "energy_upper",
                "min_slack",
                "resolution",
                "noise_floor",
            ]);
            for w in radii.windows(2) {
                let d = an.doubling(&x, w[0], w[1])?;
                table.push(vec![
                    num(d.r),
                    num(d.t),
                    num(d.i_r),
                    num(d.i_t),
                    num(d.height_lower),
                    num(d.height_upper),
                    num(d.energy_lower),
                    num(d.energy_upper),
                    num(d.min_slack()),
                    res.clone(),
                    floor.clone(),
                ]);
            }
            table
        }
        FrequencyMode::HeightDecay => {
            let alpha = match a.alpha.or(homogeneity) {
                Some(al) => al,
                None => an.sharp(&x, radii[0])?.2,
            };
            let mut table = Table::new(&["r", "alpha", "slack", "resolution", "noise_floor"]);
            for &r in &radii {
                table.push(vec![
                    num(r),
                    num(alpha),
                    num(an.height_decay(&x, r, alpha)?),
                    res.clone(),
                    floor.clone(),
                ]);
            }
            table
        }
        FrequencyMode::Identities => {
            let mut table = Table::new(&[
                "r",
                "lhs1",
                "rhs1",
                "err1",
                "lhs2",
                "rhs2",
                "err2",
                "resolution",
                "noise_floor",
            ]);
            for &r in &radii {
                let id = an.identities(&x, r)?;
                table.push(vec![
                    num(r),
                    num(id.lhs1),
                    num(id.rhs1),
                    num(id.err1),
                    num(id.lhs2),
                    num(id.rhs2),
                    num(id.err2),
                    res.clone(),
                    floor.clone(),
                ]);
            }
            table
        }
    };
    emit_table(a.output.as_deref(), &table, stdout)?;
    Ok(Status::Ok)
}

fn solve_cmd(a: &SolveArgs, stdout: &mut dyn Write) -> Result<Status> {
    let f = load_fixture(&a.fixture)?;
    let m = if matches!(f, Fixture::Branch { .. }) {
        3
    } else {
        2
    };
    let grid = HalfBallGrid::new(m, a.h)?;
    let sheets = a.sheets.clone().unwrap_or_else(|| vec![1; f.q()]);
    let opts = SolveOptions {
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let (u, stats) = solve_dirichlet(&grid, f.n(), |y| f.eval(y), &sheets, &opts)?;
    formats::save_qfunction(&a.output, &u)?;
    let mut table = Table::new(&[
        "unknowns",
        "iterations",
        "residual",
        "resolution",
        "noise_floor",
    ]);
    table.push(vec![
        stats.unknowns.to_string(),
        stats.iterations.to_string(),
        num(stats.residual),
        num(a.h),
        num(a.h * a.h),
    ]);
    emit_table(a.stats.as_deref(), &table, stdout)?;
    Ok(Status::Ok)
}

fn decay_cmd(
    ctx: &Ctx,
    a: &DecayArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<Status> {
    if let Some(path) = &a.manifest {
        let dir = a.output.as_ref().ok_or_else(|| {
            LabError::Config("-o names the output directory for --manifest".into())
        })?;
        let m = Manifest::load(path)?;
        for w in m.validate()? {
            let _ = writeln!(stderr, "warning: {w}");
        }
        let results = m.run(dir)?;
        return Ok(if results.iter().all(|r| r.passed()) {
            Status::Ok
        } else {
            Status::Failed
        });
    }
    let seed = require_seed(a.seed, "decay")?;
    for w in ctx.params.validate()? {
        let _ = writeln!(stderr, "warning: {w}");
    }
    let (source, cone, resolution) = match (&a.input, a.family) {
        (Some(path), None) => {
            let cone_path = a
                .cone
                .as_ref()
                .ok_or_else(|| LabError::Config("--cone is required with -i".into()))?;
            let t = formats::load_current(path)?;
            let n = t.len();
            (CurrentSource::Fixed(t), formats::load_book(cone_path)?, n)
        }
        (None, Some(f)) => {
            let f = BlowupFamily::from(f);
            let cone = match &a.cone {
                Some(p) => formats::load_book(p)?,
                None => f.book(),
            };
            let src = CurrentSource::Graph {
                book: f.book(),
                graph: f.graph(a.amplitude),
                count: a.count,
                seed,
                layout: ctx.params.layout,
            };
            (src, cone, a.count)
        }
        _ => {
            return Err(LabError::Config(
                "decay needs one of -i, --family or --manifest".into(),
            ))
        }
    };
    let p = parse_center(&a.center, cone.ambient_dim())?;
    let mut params = ctx.params.decay(seed);
    if let Some(s) = a.steps {
        params.steps = s;
    }
    let summary = decay_loop(&source, &cone, &p, a.radius, &params)?;
    let floor = noise_floor(&source, &cone, &p, a.radius, &params.cone)?;
    let mut buf = Vec::new();
    write_record_stream(&mut buf, &summary, resolution, floor)?;
    emit(a.output.as_deref(), &buf, stdout)?;
    if !summary.q_conserved {
        let _ = writeln!(stderr, "multiplicity conservation failed");
    }
    if !summary.ratios_in_range {
        let _ = writeln!(stderr, "radius ratio left [eta, 1/2]");
    }
    Ok(if summary.q_conserved && summary.ratios_in_range {
        Status::Ok
    } else {
        Status::Failed
    })
}

fn whitney_cmd(ctx: &Ctx, a: &WhitneyArgs, stdout: &mut dyn Write) -> Result<Status> {
    let t = formats::load_current(&a.input)?;
    let cone = formats::load_book(&a.cone)?;
    let gamma = match &a.gamma {
        Some(p) => formats::load_points(p)?,
        None => Vec::new(),
    };
    let mut wp = ctx.params.whitney();
    if let Some(g) = a.max_generation {
        wp.max_generation = g;
    }
    if let Some(tau) = a.tau {
        wp.tau = tau;
    }
    let rep = whitney_classify(&t, &cone, &gamma, &wp)?;
    let reach = 4.0 + math::norm(cone.spine().origin());
    let base = whitney_classify(
        &exact_sample(&cone, cone.spine().origin(), reach, &t)?,
        &cone,
        &gamma,
        &wp,
    )?;
    let mut table = Table::new(&[
        "generation",
        "index",
        "center",
        "side",
        "class",
        "k",
        "local_excess",
        "density_ratio",
        "gamma_hit",
        "samples",
        "sparse",
        "resolution",
        "noise_floor",
    ]);
    for (q, b) in rep.cubes.iter().zip(&base.cubes) {
        let (class, k) = match q.class {
            CubeClass::Interior => ("interior", None),
            CubeClass::BoundaryStopping => ("boundary_stopping", None),
            CubeClass::Outer => ("outer", None),
            CubeClass::Central(k) => ("central", Some(k)),
            CubeClass::Inner => ("inner", None),
            CubeClass::Excluded => ("excluded", None),
        };
        table.push(vec![
            q.generation.to_string(),
            q.index
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(" "),
            fmt_vec(&q.center),
            num(q.side),
            class.into(),
            k.map_or_else(String::new, |k| k.to_string()),
            num(q.local_excess),
            num(q.density_ratio),
            q.gamma_hit.to_string(),
            q.samples.to_string(),
            q.sparse.to_string(),
            t.len().to_string(),
            num(b.local_excess),
        ]);
    }
    emit_table(a.output.as_deref(), &table, stdout)?;
    Ok(if rep.max_overlap <= rep.overlap_bound {
        Status::Ok
    } else {
        Status::Failed
    })
}

fn check_cmd(ctx: &Ctx, strict: bool, a: &CheckArgs, stdout: &mut dyn Write) -> Result<Status> {
    let mut lines: Vec<String> = Vec::new();
    let mut failed = false;
    fn line(lines: &mut Vec<String>, failed: &mut bool, ok: bool, name: &str, detail: String) {
        *failed |= !ok;
        lines.push(format!(
            "{} {name}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        ));
    }
    macro_rules! report {
        ($ok:expr, $name:expr, $detail:expr $(,)?) => {
            line(&mut lines, &mut failed, $ok, $name, $detail)
        };
    }
    let warnings = ctx.params.validate()?;
    if warnings.is_empty() {
        report!(true, "params", "θ, ε and γ are ordered".into());
    } else if strict {
        report!(false, "params", warnings.join("; "));
    } else {
        for w in &warnings {
            lines.push(format!("WARN params: {w}"));
        }
    }
    let cone = match &a.cone {
        Some(p) => Some(formats::load_book(p)?),
        None => None,
    };
    if let Some(path) = &a.input {
        let t = formats::load_current(path)?;
        let p = parse_center(&a.center, t.dim())?;
        match t.validate() {
            Ok(()) => report!(
                true,
                "current",
                format!("{} samples, m = {}, dimension {}", t.len(), t.m, t.dim())
            ),
            Err(e) => report!(false, "current", e.to_string()),
        }
        let radii = math::log_spaced(0.1 * a.radius, a.radius, 16);
        let prof = openbook_core::measures::density_profile(&t, &p, &radii, &ctx.params.density())?;
        let tol = ctx.params.tolerance("density_defect", 0.005);
        // a ball of k samples resolves density steps of 1/k only, so radii below 2/tol samples are skipped
        let resolved: Vec<f64> = prof
            .values
            .iter()
            .zip(&prof.counts)
            .filter(|(_, &k)| k as f64 * tol >= 2.0)
            .map(|(v, _)| *v)
            .collect();
        let defect = resolved
            .windows(2)
            .map(|w| (w[0] - w[1]).max(0.0))
            .fold(0.0, f64::max);
        report!(
            defect <= tol * prof.mean(),
            "density_monotonicity",
            format!(
                "defect {} vs {} of mean {} over {} of {} radii",
                num(defect),
                num(tol),
                num(prof.mean()),
                resolved.len(),
                radii.len()
            ),
        );
        if t.tangents.is_some() {
            let rem = remainder_profile(&t, &book_for_remainder(&t)?, &p, &radii)?;
            let ok = rem.values.iter().all(|v| v.is_finite())
                && rem.values.windows(2).all(|w| w[0] <= w[1]);
            report!(
                ok,
                "remainder",
                format!(
                    "monotone and finite up to {}",
                    num(*rem.values.last().unwrap_or(&0.0))
                )
            );
        }
        if let Some(c) = &cone {
            let d = decomposition_check(&t, c, &p, a.radius)?;
            let mults: Vec<String> = d
                .pieces
                .iter()
                .map(|s| format!("{}/{}", s.multiplicity, s.expected))
                .collect();
            report!(
                d.pass,
                "decomposition",
                format!(
                    "margin {} of {}, multiplicities {}, {} bridge samples",
                    num(d.margin),
                    num(d.opening),
                    mults.join(" "),
                    d.bridges.len()
                ),
            );
            for b in d.bridges.iter().take(10) {
                lines.push(format!(
                    "  bridge {} at [{}] near sheet {} margin {}",
                    b.index,
                    fmt_vec(&b.point),
                    b.sheet,
                    num(b.margin)
                ));
            }
        }
    } else if let Some(c) = &cone {
        report!(
            true,
            "cone",
            format!(
                "{} sheets, Q = {}, alpha {}",
                c.n_sheets(),
                c.q(),
                num(book_angle(c))
            )
        );
    }
    let mut text = lines.join("\n");
    text.push('\n');
    emit(a.output.as_deref(), text.as_bytes(), stdout)?;
    Ok(if failed { Status::Failed } else { Status::Ok })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radii_grammar() {
        let r = parse_radii("0.1:1.0:16").unwrap().0;
        assert_eq!(r.len(), 16);
        assert!((r[0] - 0.1).abs() < 1e-15 && (r[15] - 1.0).abs() < 1e-12);
        assert_eq!(parse_radii("0.5:0.5:1").unwrap().0, vec![0.5]);
        for bad in [
            "0.1:1.0",
            "0:1:4",
            "1:0.5:3",
            "a:b:c",
            "0.1:1:0",
            "0.5:0.5:3",
        ] {
            assert!(parse_radii(bad).unwrap_err().contains("a:b:n"), "{bad}");
        }
    }

    #[test]
    fn spacing_and_center() {
        assert_eq!(parse_h("1/64").unwrap(), 1.0 / 64.0);
        assert_eq!(parse_h("0.25").unwrap(), 0.25);
        assert!(parse_h("2").is_err());
        assert_eq!(parse_center("0", 3).unwrap(), vec![0.0; 3]);
        assert_eq!(parse_center("1,2", 2).unwrap(), vec![1.0, 2.0]);
        assert!(parse_center("1,2", 3).is_err());
    }

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("openbook").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_two() {
        let (code, _, err) = run_str(&["density", "-i", "x.jsonl", "--radii", "1:2"]);
        assert_eq!(code, 2);
        assert!(err.contains("--radii") && err.contains("a:b:n"), "{err}");
        let (code, _, err) = run_str(&["gen", "--family", "two-sheets", "--count", "200"]);
        assert_eq!(code, 2);
        assert!(err.contains("--seed"), "{err}");
        assert_eq!(run_str(&["frobnicate"]).0, 2);
    }
}
