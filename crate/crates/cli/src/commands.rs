use std::path::PathBuf;

use anyhow::{anyhow, bail, ensure, Context, Result};
use nlgqkd::entropy::{constrained_affine_bound, guessing_entropy, tangent_of_curve, BoundCurve, BoundKind};
use nlgqkd::games::{
    apply_depolarizing, chsh_honest_strategy, msg_expected_win, classical_value, classical_value_tripartite, msg_honest_strategy, qber,
    quantum_win_prob, GameSpec, QuantumStrategy,
};
use nlgqkd::keyrate::{
    completeness_gamma, optimize_finite_rate, positivity_region, source_asymptotic_rate, BoundSource,
    OptimizerOptions, ProtocolParams, RateFrame, SecurityBudget,
};
use nlgqkd::protocol::{
    monte_carlo_completeness, monte_carlo_correctness, run_protocol, stream_rng, ErrorCorrection, Flag,
    HonestDevices, LinearCode, RunSetup, Stream,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::write_rows;
use crate::{BoundsArgs, Command, GameValueArgs, KeyrateArgs, Outcome, RegionArgs, SimulateArgs};

/// Tripartite value used for the magic square affine bound.
const MSG_OMEGA3: f64 = 8.00077 / 9.0;

pub fn dispatch(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::GameValue(a) => game_value(a),
        Command::Keyrate(a) => keyrate(a),
        Command::Region(a) => region(a),
        Command::Simulate(a) => simulate(a),
        Command::Bounds(a) => bounds(a),
    }
}

struct Game {
    spec: GameSpec,
    honest: Option<QuantumStrategy>,
    omega3: Option<f64>,
    /// Closed-form honest winning probability under per-pair noise.
    win: Option<fn(f64) -> f64>,
}

fn load_game(id: &str) -> Result<Game> {
    Ok(match id {
        "msg" => Game {
            spec: GameSpec::magic_square(),
            honest: Some(msg_honest_strategy()),
            omega3: Some(MSG_OMEGA3),
            win: Some(msg_expected_win),
        },
        "chsh" => Game { spec: GameSpec::chsh(), honest: Some(chsh_honest_strategy()), omega3: None, win: None },
        other => {
            let path = other
                .strip_prefix("custom:")
                .ok_or_else(|| anyhow!("unknown game {other:?}; use msg, chsh or custom:<path>"))?;
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read game file {path}"))?;
            Game { spec: GameSpec::from_json(&text)?, honest: None, omega3: None, win: None }
        }
    })
}

fn noisy(strat: &QuantumStrategy, q: f64, global: bool) -> Result<QuantumStrategy> {
    let per_pair = !global && strat.pairs.is_some();
    Ok(apply_depolarizing(strat, q, per_pair)?)
}

fn honest_win(game: &Game, q: f64) -> Result<f64> {
    if let Some(w) = game.win {
        ensure!((0.0..=0.5).contains(&q), "noise {q} outside [0, 1/2]");
        return Ok(w(q));
    }
    let strat = game.honest.as_ref().ok_or_else(|| anyhow!("game {} has no honest strategy", game.spec.name))?;
    Ok(quantum_win_prob(&game.spec, &noisy(strat, q, false)?)?)
}

#[derive(Serialize)]
struct GameValueRow {
    game: String,
    q: f64,
    classical: String,
    classical_value: f64,
    tripartite_classical: String,
    quantum: Option<f64>,
    qber: Option<f64>,
}

fn game_value(a: &GameValueArgs) -> Result<Outcome> {
    let game = load_game(&a.game)?;
    let c2 = classical_value(&game.spec)?;
    let c3 = classical_value_tripartite(&game.spec)?;
    let mut rows = Vec::new();
    for &q in &a.q {
        let (quantum, err) = match &game.honest {
            Some(s) => {
                let s = noisy(s, q, a.global_noise)?;
                (Some(quantum_win_prob(&game.spec, &s)?), Some(qber(&game.spec, &s)?))
            }
            None => (None, None),
        };
        rows.push(GameValueRow {
            game: game.spec.name.clone(),
            q,
            classical: c2.value.to_string(),
            classical_value: c2.value.as_f64(),
            tripartite_classical: c3.value.to_string(),
            quantum,
            qber: err,
        });
    }
    write_rows(a.output.out.as_deref(), a.output.format, a, &rows)?;
    Ok(Outcome::Done)
}

fn bound_source(spec: &str, game: &Game, omega2: Option<f64>, omega3: Option<f64>) -> Result<BoundSource> {
    if spec == "affine" {
        let omega3 = omega3
            .or(game.omega3)
            .ok_or_else(|| anyhow!("--omega3 is required for the affine bound of game {}", game.spec.name))?;
        let omega2 = match omega2 {
            Some(w) => w,
            None => honest_win(game, 0.0)?,
        };
        ensure!(omega3 <= omega2, "omega3 = {omega3} exceeds omega2 = {omega2}");
        return Ok(BoundSource::Affine { omega2: omega2.min(1.0), omega3 });
    }
    let path = spec
        .strip_prefix("table:")
        .ok_or_else(|| anyhow!("unknown bound {spec:?}; use affine or table:<path>"))?;
    Ok(BoundSource::from_curve(BoundCurve::from_path(path).with_context(|| format!("bound table {path}"))?))
}

#[derive(Serialize)]
struct KeyrateRow {
    q: f64,
    n: String,
    omega_exp: f64,
    rate: f64,
    l_key: Option<u64>,
    raw: Option<f64>,
    d1: Option<f64>,
    d0: Option<f64>,
    beta: Option<f64>,
    eps_s: Option<f64>,
    gamma: Option<f64>,
    delta_tol: Option<f64>,
    feasible: bool,
}

fn block_size(n: f64) -> Result<u64> {
    ensure!(n >= 1.0 && n.fract() == 0.0 && n < u64::MAX as f64, "block size {n} is not a positive integer");
    Ok(n as u64)
}

fn keyrate(a: &KeyrateArgs) -> Result<Outcome> {
    let game = load_game(&a.game)?;
    let source = bound_source(&a.bound, &game, a.omega2, a.omega3)?;
    let ns = a.n.iter().map(|&n| block_size(n)).collect::<Result<Vec<_>>>()?;
    let opts = OptimizerOptions { eps_points: a.eps_points, exhaustive: a.exhaustive, ..Default::default() };
    let omegas = a.q.iter().map(|&q| honest_win(&game, q)).collect::<Result<Vec<_>>>()?;

    let cases: Vec<(usize, u64)> = (0..a.q.len()).flat_map(|i| ns.iter().map(move |&n| (i, n))).collect();
    let finite = cases
        .par_iter()
        .map(|&(i, n)| {
            let frame = RateFrame {
                n,
                omega_exp: omegas[i],
                eps_sec: a.eps_sec,
                eps_corr: a.eps_corr,
                eps_com_pe: a.eps_com,
                eps_com_ec: a.eps_com,
                xi: a.xi,
                delta_tol: a.delta_tol,
                gamma: a.gamma,
                conservative: a.conservative,
            };
            let r = optimize_finite_rate(&source, &frame, &opts)?;
            Ok(KeyrateRow {
                q: a.q[i],
                n: n.to_string(),
                omega_exp: omegas[i],
                rate: r.rate,
                l_key: Some(r.l_key),
                raw: Some(r.raw),
                d1: Some(r.d1),
                d0: Some(r.d0),
                beta: Some(r.beta),
                eps_s: Some(r.eps_s),
                gamma: Some(r.gamma),
                delta_tol: Some(r.delta_tol),
                feasible: r.feasible,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let any_feasible = finite.iter().any(|r| r.feasible);
    let mut rows = Vec::with_capacity(finite.len() + a.q.len());
    let mut finite = finite.into_iter();
    for (i, &q) in a.q.iter().enumerate() {
        rows.extend(finite.by_ref().take(ns.len()));
        let rate = source_asymptotic_rate(&source, omegas[i], a.xi)?;
        rows.push(KeyrateRow {
            q,
            n: "inf".into(),
            omega_exp: omegas[i],
            rate,
            l_key: None,
            raw: None,
            d1: None,
            d0: None,
            beta: None,
            eps_s: None,
            gamma: None,
            delta_tol: None,
            feasible: rate > 0.0,
        });
    }
    write_rows(a.output.out.as_deref(), a.output.format, a, &rows)?;
    if !ns.is_empty() && !any_feasible {
        return Ok(Outcome::Infeasible("no block size gives a positive key length".into()));
    }
    Ok(Outcome::Done)
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![lo],
        _ => (0..steps).map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64).collect(),
    }
}

fn region(a: &RegionArgs) -> Result<Outcome> {
    ensure!(a.omega2_min <= a.omega2_max && a.omega3_min <= a.omega3_max, "empty grid range");
    ensure!(a.omega2_min >= 0.0 && a.omega2_max <= 1.0 && a.omega3_min >= 0.0 && a.omega3_max <= 1.0, "grid outside [0, 1]");
    let mut cells = positivity_region(
        &linspace(a.omega2_min, a.omega2_max, a.steps),
        &linspace(a.omega3_min, a.omega3_max, a.steps),
        a.xi,
    )?;
    for c in &a.cell {
        let (w2, w3) = c.split_once(':').ok_or_else(|| anyhow!("cell {c:?} is not omega2:omega3"))?;
        let (w2, w3): (f64, f64) = (w2.trim().parse()?, w3.trim().parse()?);
        ensure!(w3 <= w2, "cell {c:?} has omega3 > omega2");
        cells.extend(positivity_region(&[w2], &[w3], a.xi)?);
    }
    write_rows(a.output.out.as_deref(), a.output.format, a, &cells)?;
    Ok(Outcome::Done)
}

#[derive(Serialize, Default)]
struct SimRow {
    mode: &'static str,
    n: u64,
    q: f64,
    omega_exp: Option<f64>,
    gamma: Option<f64>,
    delta_tol: Option<f64>,
    l_ec: Option<u32>,
    l_key: Option<usize>,
    trials: Option<usize>,
    pe_aborts: Option<usize>,
    ec_aborts: Option<usize>,
    abort_rate: Option<f64>,
    abort_ci_lo: Option<f64>,
    abort_ci_hi: Option<f64>,
    pe_abort_rate: Option<f64>,
    pe_abort_ci_lo: Option<f64>,
    pe_abort_ci_hi: Option<f64>,
    key_mismatches: Option<usize>,
    hash_passes: Option<usize>,
    pass_rate: Option<f64>,
    hash_bound: Option<f64>,
    sigma: Option<f64>,
    within_bound: Option<bool>,
    f_pe: Option<Flag>,
    f_ec: Option<Flag>,
    losses: Option<usize>,
    loss_threshold: Option<f64>,
    syndrome_bits: Option<f64>,
    keys_match: Option<bool>,
}

fn simulate(a: &SimulateArgs) -> Result<Outcome> {
    let game = load_game(&a.game)?;
    let budget = SecurityBudget::pedagogical(a.eps_sec, a.eps_sec / 4.0, a.eps_corr, a.eps_com, a.eps_com);
    let l_ec = nlgqkd::keyrate::min_lec_for_correctness(a.eps_corr)?;

    if a.force_mismatch {
        let trials = if a.trials == 0 { 100_000 } else { a.trials };
        let r = monte_carlo_correctness(a.n as usize, l_ec as usize, trials, true, a.seed)?;
        let row = SimRow {
            mode: "correctness",
            n: a.n,
            q: a.q,
            l_ec: Some(l_ec),
            trials: Some(trials),
            hash_passes: Some(r.passes),
            pass_rate: Some(r.pass_rate),
            hash_bound: Some(r.bound),
            sigma: Some(r.sigma),
            within_bound: Some(r.within_bound),
            ..Default::default()
        };
        write_rows(a.output.out.as_deref(), a.output.format, a, &[row])?;
        return Ok(Outcome::Done);
    }

    let strat = noisy(
        game.honest.as_ref().ok_or_else(|| anyhow!("game {} has no honest devices to simulate", game.spec.name))?,
        a.q,
        false,
    )?;
    let omega_exp = honest_win(&game, a.q)?;
    let delta_tol = a.delta_tol.unwrap_or_else(|| (a.n as f64).powf(-1.0 / 3.0));
    let gamma = match a.gamma {
        Some(g) => g,
        None => completeness_gamma(omega_exp, delta_tol, a.n, a.eps_com)?.min(1.0),
    };
    let params = ProtocolParams::with_gamma(a.n, gamma, delta_tol, omega_exp, &budget, a.xi)?;
    let ec = match a.ec.as_str() {
        "parametric" => ErrorCorrection::Parametric,
        "code" => {
            let mut rng = stream_rng(a.seed, Stream::Code);
            ErrorCorrection::Code(LinearCode::for_error_rate(a.block, 1.0 - omega_exp, a.eps_com, &mut rng)?)
        }
        other => bail!("unknown error correction {other:?}; use parametric or code"),
    };
    let secure = secure_key_length(&game, a, omega_exp)?;
    let l_key = match a.key_len {
        Some(l) => {
            if l as u64 > secure {
                eprintln!("warning: key length {l} exceeds the secure bound {secure} for these parameters");
            }
            l
        }
        None => secure as usize,
    };
    let setup = RunSetup { params, ec, l_key };
    let devices = HonestDevices::new(&game.spec, &strat)?;
    let base = SimRow {
        n: a.n,
        q: a.q,
        omega_exp: Some(omega_exp),
        gamma: Some(gamma),
        delta_tol: Some(delta_tol),
        l_ec: Some(params.l_ec),
        l_key: Some(l_key),
        ..Default::default()
    };

    let row = if a.trials > 0 {
        let r = monte_carlo_completeness(&game.spec, |_| devices.clone(), &setup, a.trials, a.seed)?;
        SimRow {
            mode: "completeness",
            trials: Some(r.trials),
            pe_aborts: Some(r.pe_aborts),
            ec_aborts: Some(r.ec_aborts),
            abort_rate: Some(r.abort_rate),
            abort_ci_lo: Some(r.abort_ci.0),
            abort_ci_hi: Some(r.abort_ci.1),
            pe_abort_rate: Some(r.pe_abort_rate),
            pe_abort_ci_lo: Some(r.pe_abort_ci.0),
            pe_abort_ci_hi: Some(r.pe_abort_ci.1),
            key_mismatches: Some(r.key_mismatches),
            ..base
        }
    } else {
        let tr = run_protocol(&game.spec, &mut devices.clone(), &setup, a.seed)?;
        if let Some(path) = &a.transcript {
            std::fs::write(path, tr.to_json() + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        }
        SimRow {
            mode: "single",
            f_pe: Some(tr.public.f_pe),
            f_ec: tr.public.f_ec,
            losses: Some(tr.public.losses),
            loss_threshold: Some(tr.public.loss_threshold),
            syndrome_bits: Some(tr.public.syndrome_bits),
            keys_match: tr.keys_match(),
            ..base
        }
    };
    write_rows(a.output.out.as_deref(), a.output.format, a, &[row])?;
    Ok(Outcome::Done)
}

/// Optimised finite key length for the simulated parameters; 0 when the game
/// has no affine bound to draw on.
fn secure_key_length(game: &Game, a: &SimulateArgs, omega_exp: f64) -> Result<u64> {
    let Some(omega3) = game.omega3 else { return Ok(0) };
    let source = BoundSource::Affine { omega2: honest_win(game, 0.0)?.min(1.0), omega3 };
    let frame = RateFrame {
        n: a.n,
        omega_exp,
        eps_sec: a.eps_sec,
        eps_corr: a.eps_corr,
        eps_com_pe: a.eps_com,
        eps_com_ec: a.eps_com,
        xi: a.xi,
        delta_tol: a.delta_tol,
        gamma: a.gamma,
        conservative: false,
    };
    Ok(optimize_finite_rate(&source, &frame, &OptimizerOptions::default())?.l_key)
}

#[derive(Serialize)]
struct BoundRow {
    kind: &'static str,
    x: f64,
    value: f64,
    entropy: Option<f64>,
    tangent: Option<f64>,
}

fn bounds(a: &BoundsArgs) -> Result<Outcome> {
    ensure!(a.table != PathBuf::new(), "--table is required");
    let curve = BoundCurve::from_path(&a.table).with_context(|| format!("bound table {}", a.table.display()))?;
    let tangent = match a.beta {
        None => None,
        Some(beta) => Some(match curve.kind() {
            BoundKind::TripartiteWinUpper => constrained_affine_bound(beta, &curve)?,
            BoundKind::VnLower => tangent_of_curve(&curve, beta)?,
        }),
    };
    let entropy = |x: f64, h: f64| match curve.kind() {
        BoundKind::TripartiteWinUpper => guessing_entropy(x, h),
        BoundKind::VnLower => h,
    };
    let (lo, hi) = curve.domain();
    let mut rows = Vec::new();
    for x in linspace(lo, hi, a.samples.max(2)) {
        let x = x.clamp(lo, hi);
        let h = curve.eval(x)?;
        rows.push(BoundRow { kind: "sample", x, value: h, entropy: Some(entropy(x, h)), tangent: tangent.map(|t| t.eval(x)) });
    }
    for &(x, y) in curve.points() {
        rows.push(BoundRow { kind: "point", x, value: y, entropy: None, tangent: None });
    }
    if let (Some(beta), Some(t)) = (a.beta, tangent) {
        let h = curve.eval(beta)?;
        rows.push(BoundRow { kind: "touch", x: beta, value: h, entropy: Some(entropy(beta, h)), tangent: Some(t.eval(beta)) });
    }
    write_rows(a.output.out.as_deref(), a.output.format, a, &rows)?;
    Ok(Outcome::Done)
}
