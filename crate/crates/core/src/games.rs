//! Two-party games with matching-bit predicates, their tripartite extensions,
//! and the classical / quantum strategies evaluated on them.

use std::fmt;

use num_complex::Complex64;
use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qmath::{self, kron, kron_all, CMatrix, QState, QmathError, STRUCT_TOL};

/// Upper limit on the number of deterministic strategies a brute-force search may visit.
pub const SEARCH_CAP: u128 = 10_000_000;

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid game: {0}")]
    InvalidSpec(String),
    #[error("search space of {size} strategies exceeds the cap of {cap}")]
    SearchTooLarge { size: u128, cap: u128 },
    #[error("strategy does not match the game: {0}")]
    StrategyMismatch(String),
    #[error("{party} measurement for input {input} is not a valid POVM (deviation {deviation:e})")]
    BadPovm { party: char, input: usize, deviation: f64 },
    #[error("noise parameter {0} outside [0, 1/2]")]
    NoiseOutOfRange(f64),
    #[error("per-pair depolarizing needs a state declared as a product of pairs")]
    NoPairs,
    #[error(transparent)]
    Qmath(#[from] QmathError),
    #[error("malformed game document: {0}")]
    Json(#[from] serde_json::Error),
}

/// A game whose predicate is `[sk_a(x,y,a) = sk_b(x,y,b)]` under a product input distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct GameSpec {
    pub name: String,
    pub x_alphabet: Vec<String>,
    pub y_alphabet: Vec<String>,
    pub a_alphabet: Vec<String>,
    pub b_alphabet: Vec<String>,
    pub pi_x: Vec<f64>,
    pub pi_y: Vec<f64>,
    /// `sk_a[x][y][a]`
    pub sk_a: Vec<Vec<Vec<u8>>>,
    /// `sk_b[x][y][b]`
    pub sk_b: Vec<Vec<Vec<u8>>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PiDoc {
    Marginals { x: Vec<f64>, y: Vec<f64> },
    Joint(Vec<Vec<f64>>),
}

#[derive(Debug, Serialize, Deserialize)]
struct GameDoc {
    name: String,
    x_alphabet: Vec<String>,
    y_alphabet: Vec<String>,
    a_alphabet: Vec<String>,
    b_alphabet: Vec<String>,
    pi: PiDoc,
    sk_a: Vec<Vec<Vec<u8>>>,
    sk_b: Vec<Vec<Vec<u8>>>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<(), GameError> {
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(GameError::InvalidSpec(format!("{what} has entries outside [0, 1]")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(GameError::InvalidSpec(format!("{what} sums to {s}")));
    }
    Ok(())
}

fn check_alphabet(labels: &[String], what: &str) -> Result<(), GameError> {
    if labels.is_empty() {
        return Err(GameError::InvalidSpec(format!("{what} is empty")));
    }
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(GameError::InvalidSpec(format!("{what} repeats label {l:?}")));
        }
    }
    Ok(())
}

impl GameSpec {
    pub fn validate(&self) -> Result<(), GameError> {
        check_alphabet(&self.x_alphabet, "x alphabet")?;
        check_alphabet(&self.y_alphabet, "y alphabet")?;
        check_alphabet(&self.a_alphabet, "a alphabet")?;
        check_alphabet(&self.b_alphabet, "b alphabet")?;
        if self.pi_x.len() != self.nx() || self.pi_y.len() != self.ny() {
            return Err(GameError::InvalidSpec("marginal lengths do not match the input alphabets".into()));
        }
        check_distribution(&self.pi_x, "pi_x")?;
        check_distribution(&self.pi_y, "pi_y")?;
        for (map, nout, who) in [(&self.sk_a, self.na(), "sk_a"), (&self.sk_b, self.nb(), "sk_b")] {
            let shape_ok = map.len() == self.nx()
                && map.iter().all(|row| {
                    row.len() == self.ny() && row.iter().all(|outs| outs.len() == nout && outs.iter().all(|&v| v <= 1))
                });
            if !shape_ok {
                return Err(GameError::InvalidSpec(format!("{who} must be a [x][y][output] array of bits")));
            }
        }
        Ok(())
    }

    /// Parse the JSON game document. `pi` may be given as marginals
    /// `{"x": [...], "y": [...]}` or as a joint matrix, which must factorise.
    pub fn from_json(text: &str) -> Result<Self, GameError> {
        let doc: GameDoc = serde_json::from_str(text)?;
        let (pi_x, pi_y) = match doc.pi {
            PiDoc::Marginals { x, y } => (x, y),
            PiDoc::Joint(m) => factorise(&m)?,
        };
        let g = GameSpec {
            name: doc.name,
            x_alphabet: doc.x_alphabet,
            y_alphabet: doc.y_alphabet,
            a_alphabet: doc.a_alphabet,
            b_alphabet: doc.b_alphabet,
            pi_x,
            pi_y,
            sk_a: doc.sk_a,
            sk_b: doc.sk_b,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        let doc = GameDoc {
            name: self.name.clone(),
            x_alphabet: self.x_alphabet.clone(),
            y_alphabet: self.y_alphabet.clone(),
            a_alphabet: self.a_alphabet.clone(),
            b_alphabet: self.b_alphabet.clone(),
            pi: PiDoc::Marginals { x: self.pi_x.clone(), y: self.pi_y.clone() },
            sk_a: self.sk_a.clone(),
            sk_b: self.sk_b.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("game document serialises")
    }

    /// The 3x3 magic square game with row/column parity alphabets.
    pub fn magic_square() -> Self {
        let a: Vec<String> = ["000", "011", "101", "110"].iter().map(|s| s.to_string()).collect();
        let b: Vec<String> = ["001", "010", "100", "111"].iter().map(|s| s.to_string()).collect();
        let bit = |label: &str, k: usize| label.as_bytes()[k] - b'0';
        let sk_a = (0..3).map(|_| (0..3).map(|y| a.iter().map(|l| bit(l, y)).collect()).collect()).collect();
        let sk_b = (0..3).map(|x| (0..3).map(|_| b.iter().map(|l| bit(l, x)).collect()).collect()).collect();
        let inputs: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        GameSpec {
            name: "msg".into(),
            x_alphabet: inputs.clone(),
            y_alphabet: inputs,
            a_alphabet: a,
            b_alphabet: b,
            pi_x: vec![1.0 / 3.0; 3],
            pi_y: vec![1.0 / 3.0; 3],
            sk_a,
            sk_b,
        }
    }

    /// CHSH: win iff `a = b xor (x and y)`.
    pub fn chsh() -> Self {
        let bits: Vec<String> = vec!["0".into(), "1".into()];
        let sk_a = (0..2).map(|_| (0..2).map(|_| vec![0, 1]).collect()).collect();
        let sk_b = (0..2u8)
            .map(|x| (0..2u8).map(|y| (0..2u8).map(|b| b ^ (x & y)).collect()).collect())
            .collect();
        GameSpec {
            name: "chsh".into(),
            x_alphabet: bits.clone(),
            y_alphabet: bits.clone(),
            a_alphabet: bits.clone(),
            b_alphabet: bits,
            pi_x: vec![0.5; 2],
            pi_y: vec![0.5; 2],
            sk_a,
            sk_b,
        }
    }

    pub fn nx(&self) -> usize {
        self.x_alphabet.len()
    }
    pub fn ny(&self) -> usize {
        self.y_alphabet.len()
    }
    pub fn na(&self) -> usize {
        self.a_alphabet.len()
    }
    pub fn nb(&self) -> usize {
        self.b_alphabet.len()
    }

    pub fn pi(&self, x: usize, y: usize) -> f64 {
        self.pi_x[x] * self.pi_y[y]
    }

    pub fn predicate(&self, x: usize, y: usize, a: usize, b: usize) -> bool {
        self.sk_a[x][y][a] == self.sk_b[x][y][b]
    }

    /// Tripartite predicate: the bipartite one plus the guesser matching Alice's key bit.
    pub fn predicate3(&self, x: usize, y: usize, a: usize, b: usize, c: u8) -> bool {
        self.predicate(x, y, a, b) && self.sk_a[x][y][a] == c
    }

    pub fn is_uniform(&self) -> bool {
        let flat = |p: &[f64]| p.iter().all(|&v| (v - p[0]).abs() <= PROB_TOL);
        flat(&self.pi_x) && flat(&self.pi_y)
    }
}

fn factorise(m: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), GameError> {
    if m.is_empty() || m.iter().any(|r| r.len() != m[0].len()) {
        return Err(GameError::InvalidSpec("joint pi must be a rectangular matrix".into()));
    }
    let px: Vec<f64> = m.iter().map(|r| r.iter().sum()).collect();
    let py: Vec<f64> = (0..m[0].len()).map(|j| m.iter().map(|r| r[j]).sum()).collect();
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if (v - px[i] * py[j]).abs() > PROB_TOL {
                return Err(GameError::InvalidSpec(format!(
                    "pi is not a product distribution at ({i}, {j})"
                )));
            }
        }
    }
    Ok((px, py))
}

/// A game value: exact when the input distribution is uniform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GameValue {
    Exact(Ratio<u64>),
    Approx(f64),
}

impl GameValue {
    pub fn as_f64(&self) -> f64 {
        match *self {
            GameValue::Exact(r) => *r.numer() as f64 / *r.denom() as f64,
            GameValue::Approx(v) => v,
        }
    }
}

impl fmt::Display for GameValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GameValue::Exact(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            GameValue::Approx(v) => write!(f, "{v}"),
        }
    }
}

/// One deterministic strategy. `table_c` is indexed by `x * |Y| + y`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeterministicStrategy {
    pub table_a: Vec<usize>,
    pub table_b: Vec<usize>,
    pub table_c: Option<Vec<u8>>,
}

impl DeterministicStrategy {
    pub fn win_prob(&self, game: &GameSpec) -> f64 {
        let mut w = 0.0;
        for x in 0..game.nx() {
            for y in 0..game.ny() {
                let (a, b) = (self.table_a[x], self.table_b[y]);
                let won = match &self.table_c {
                    Some(c) => game.predicate3(x, y, a, b, c[x * game.ny() + y]),
                    None => game.predicate(x, y, a, b),
                };
                if won {
                    w += game.pi(x, y);
                }
            }
        }
        w
    }
}

/// A shared-randomness mixture of deterministic strategies.
#[derive(Clone, Debug)]
pub struct ClassicalStrategy {
    components: Vec<(f64, DeterministicStrategy)>,
}

impl ClassicalStrategy {
    pub fn new(game: &GameSpec, components: Vec<(f64, DeterministicStrategy)>) -> Result<Self, GameError> {
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if components.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > PROB_TOL {
            return Err(GameError::StrategyMismatch("mixture weights must be a distribution".into()));
        }
        for (_, s) in &components {
            let ok = s.table_a.len() == game.nx()
                && s.table_b.len() == game.ny()
                && s.table_a.iter().all(|&a| a < game.na())
                && s.table_b.iter().all(|&b| b < game.nb())
                && s.table_c.as_ref().is_none_or(|c| c.len() == game.nx() * game.ny() && c.iter().all(|&v| v <= 1));
            if !ok {
                return Err(GameError::StrategyMismatch("table outside the declared alphabets".into()));
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[(f64, DeterministicStrategy)] {
        &self.components
    }

    pub fn win_prob(&self, game: &GameSpec) -> f64 {
        self.components.iter().map(|(w, s)| w * s.win_prob(game)).sum()
    }
}

#[derive(Clone, Debug)]
pub struct ClassicalValue {
    pub value: GameValue,
    /// First optimal strategy in lexicographic enumeration order.
    pub best: DeterministicStrategy,
}

/// All functions `inputs -> outputs`, lexicographic with the first input most significant.
fn all_tables(inputs: usize, outputs: usize) -> Vec<Vec<usize>> {
    let count = outputs.pow(inputs as u32);
    (0..count)
        .map(|mut idx| {
            let mut t = vec![0; inputs];
            for slot in t.iter_mut().rev() {
                *slot = idx % outputs;
                idx /= outputs;
            }
            t
        })
        .collect()
}

fn search_size(game: &GameSpec, tripartite: bool) -> Result<u128, GameError> {
    let pow = |base: usize, e: usize| -> Option<u128> { (base as u128).checked_pow(e as u32) };
    let mut size = pow(game.na(), game.nx())
        .zip(pow(game.nb(), game.ny()))
        .and_then(|(a, b)| a.checked_mul(b));
    if tripartite {
        size = size.and_then(|s| pow(2, game.nx() * game.ny()).and_then(|c| s.checked_mul(c)));
    }
    let size = size.unwrap_or(u128::MAX);
    if size > SEARCH_CAP {
        return Err(GameError::SearchTooLarge { size, cap: SEARCH_CAP });
    }
    Ok(size)
}

#[derive(Clone, Copy, Debug)]
enum Score {
    Count(u64),
    Weight(f64),
}

impl Score {
    fn beats(self, other: Score) -> bool {
        match (self, other) {
            (Score::Count(a), Score::Count(b)) => a > b,
            (Score::Weight(a), Score::Weight(b)) => a > b,
            _ => unreachable!("mixed score kinds"),
        }
    }
}

fn brute_force(game: &GameSpec, tripartite: bool) -> Result<ClassicalValue, GameError> {
    game.validate()?;
    search_size(game, tripartite)?;
    let (nx, ny) = (game.nx(), game.ny());
    let uniform = game.is_uniform();
    let ta = all_tables(nx, game.na());
    let tb = all_tables(ny, game.nb());
    let tc: Vec<Vec<usize>> = if tripartite { all_tables(nx * ny, 2) } else { vec![Vec::new()] };

    let score = |a: &[usize], b: &[usize], c: &[usize]| -> Score {
        let mut wins = 0u64;
        let mut weight = 0.0;
        for x in 0..nx {
            for y in 0..ny {
                let won = if tripartite {
                    game.predicate3(x, y, a[x], b[y], c[x * ny + y] as u8)
                } else {
                    game.predicate(x, y, a[x], b[y])
                };
                if won {
                    wins += 1;
                    weight += game.pi(x, y);
                }
            }
        }
        if uniform {
            Score::Count(wins)
        } else {
            Score::Weight(weight)
        }
    };

    // Each Alice table is scanned independently; the reduction keeps the
    // highest score and, on ties, the smallest (ia, ib, ic) index triple.
    let best = (0..ta.len())
        .into_par_iter()
        .map(|ia| {
            let mut best: Option<(Score, usize, usize, usize)> = None;
            for (ib, b) in tb.iter().enumerate() {
                for (ic, c) in tc.iter().enumerate() {
                    let s = score(&ta[ia], b, c);
                    if best.is_none_or(|(bs, ..)| s.beats(bs)) {
                        best = Some((s, ia, ib, ic));
                    }
                }
            }
            best.expect("non-empty table set")
        })
        .reduce_with(|l, r| {
            if r.0.beats(l.0) || (!l.0.beats(r.0) && (r.1, r.2, r.3) < (l.1, l.2, l.3)) {
                r
            } else {
                l
            }
        })
        .expect("non-empty table set");

    let (s, ia, ib, ic) = best;
    let value = match s {
        Score::Count(w) => GameValue::Exact(Ratio::new(w, (nx * ny) as u64)),
        Score::Weight(v) => GameValue::Approx(v),
    };
    let table_c = tripartite.then(|| tc[ic].iter().map(|&v| v as u8).collect());
    Ok(ClassicalValue {
        value,
        best: DeterministicStrategy { table_a: ta[ia].clone(), table_b: tb[ib].clone(), table_c },
    })
}

/// Optimal classical winning probability by exhaustive search over deterministic tables.
pub fn classical_value(game: &GameSpec) -> Result<ClassicalValue, GameError> {
    brute_force(game, false)
}

/// Optimal classical winning probability of the tripartite extension.
pub fn classical_value_tripartite(game: &GameSpec) -> Result<ClassicalValue, GameError> {
    brute_force(game, true)
}

/// A quantum strategy. The first `a_subsystems` factors of the state belong to Alice.
#[derive(Clone, Debug)]
pub struct QuantumStrategy {
    pub state: QState,
    pub a_subsystems: usize,
    /// `povms_a[x][a]`
    pub povms_a: Vec<Vec<CMatrix>>,
    /// `povms_b[y][b]`
    pub povms_b: Vec<Vec<CMatrix>>,
    /// Subsystem pairs the state is declared to factor into, if any.
    pub pairs: Option<Vec<(usize, usize)>>,
}

fn povm_deviation(povm: &[CMatrix], dim: usize) -> f64 {
    if povm.iter().any(|e| e.rows() != dim || e.cols() != dim) {
        return f64::INFINITY;
    }
    let mut sum = CMatrix::zeros(dim, dim);
    for e in povm {
        if !e.is_psd(STRUCT_TOL) {
            return f64::INFINITY;
        }
        sum = &sum + e;
    }
    sum.max_abs_diff(&CMatrix::identity(dim))
}

impl QuantumStrategy {
    pub fn new(
        state: QState,
        a_subsystems: usize,
        povms_a: Vec<Vec<CMatrix>>,
        povms_b: Vec<Vec<CMatrix>>,
        pairs: Option<Vec<(usize, usize)>>,
    ) -> Result<Self, GameError> {
        let s = Self { state, a_subsystems, povms_a, povms_b, pairs };
        s.check()?;
        Ok(s)
    }

    pub fn dim_a(&self) -> usize {
        self.state.dims()[..self.a_subsystems].iter().product()
    }

    pub fn dim_b(&self) -> usize {
        self.state.dims()[self.a_subsystems..].iter().product()
    }

    fn check(&self) -> Result<(), GameError> {
        if self.a_subsystems == 0 || self.a_subsystems >= self.state.dims().len() {
            return Err(GameError::StrategyMismatch("both parties need at least one subsystem".into()));
        }
        for (party, povms, dim) in [('A', &self.povms_a, self.dim_a()), ('B', &self.povms_b, self.dim_b())] {
            for (input, povm) in povms.iter().enumerate() {
                let deviation = povm_deviation(povm, dim);
                if deviation > STRUCT_TOL {
                    return Err(GameError::BadPovm { party, input, deviation });
                }
            }
        }
        if let Some(pairs) = &self.pairs {
            let n = self.state.dims().len();
            if pairs.iter().any(|&(i, j)| i >= n || j >= n || i == j) {
                return Err(GameError::StrategyMismatch("pair index out of range".into()));
            }
        }
        Ok(())
    }

    fn check_against(&self, game: &GameSpec) -> Result<(), GameError> {
        let shape = |povms: &[Vec<CMatrix>], ni: usize, no: usize| povms.len() == ni && povms.iter().all(|p| p.len() == no);
        if !shape(&self.povms_a, game.nx(), game.na()) || !shape(&self.povms_b, game.ny(), game.nb()) {
            return Err(GameError::StrategyMismatch("measurement labels do not match the game alphabets".into()));
        }
        Ok(())
    }

    /// `Pr[a, b | x, y]`, flattened as `a * |B| + b`.
    pub fn joint_distribution(&self, x: usize, y: usize) -> Result<Vec<f64>, GameError> {
        let pa = &self.povms_a[x];
        let pb = &self.povms_b[y];
        let mut out = Vec::with_capacity(pa.len() * pb.len());
        for p in pa {
            for q in pb {
                out.push(qmath::expectation(&self.state, &kron(p, q))?.clamp(0.0, 1.0));
            }
        }
        Ok(out)
    }
}

pub fn quantum_win_prob(game: &GameSpec, strat: &QuantumStrategy) -> Result<f64, GameError> {
    strat.check_against(game)?;
    let mut w = 0.0;
    for x in 0..game.nx() {
        for y in 0..game.ny() {
            let dist = strat.joint_distribution(x, y)?;
            for a in 0..game.na() {
                for b in 0..game.nb() {
                    if game.predicate(x, y, a, b) {
                        w += game.pi(x, y) * dist[a * game.nb() + b];
                    }
                }
            }
        }
    }
    Ok(w.clamp(0.0, 1.0))
}

pub fn qber(game: &GameSpec, strat: &QuantumStrategy) -> Result<f64, GameError> {
    Ok(1.0 - quantum_win_prob(game, strat)?)
}

/// Observables of the magic square as Pauli words on the two qubits of one party,
/// with a sign; row `x`, column `y`.
const MSG_OBSERVABLES: [[(f64, &str); 3]; 3] = [
    [(1.0, "IZ"), (1.0, "ZI"), (1.0, "ZZ")],
    [(1.0, "XI"), (1.0, "IX"), (1.0, "XX")],
    [(-1.0, "XZ"), (-1.0, "ZX"), (1.0, "YY")],
];

fn msg_observable(x: usize, y: usize) -> CMatrix {
    let (sign, word) = MSG_OBSERVABLES[x][y];
    qmath::pauli_word(word).expect("valid Pauli word").scale(sign)
}

/// Product of the spectral projectors selected by `bits` for three commuting observables.
fn parity_effect(observables: [CMatrix; 3], bits: &str) -> CMatrix {
    let mut effect = CMatrix::identity(4);
    for (obs, bit) in observables.iter().zip(bits.bytes()) {
        let projs = qmath::eig_projectors(obs).expect("magic square observables are involutions");
        let idx = usize::from(bit == b'1');
        effect = &effect * &projs[idx].1;
    }
    effect
}

/// The honest magic square strategy on two Bell pairs, subsystems ordered A1 A2 B1 B2.
pub fn msg_honest_strategy() -> QuantumStrategy {
    let game = GameSpec::magic_square();
    let mut amp = vec![Complex64::new(0.0, 0.0); 16];
    for k in 0..4 {
        amp[k * 4 + k] = Complex64::new(0.5, 0.0);
    }
    let state = QState::pure(&amp, vec![2, 2, 2, 2]).expect("normalised state");
    let povms_a = (0..3)
        .map(|x| {
            game.a_alphabet
                .iter()
                .map(|a| parity_effect([0, 1, 2].map(|y| msg_observable(x, y)), a))
                .collect()
        })
        .collect();
    let povms_b = (0..3)
        .map(|y| {
            game.b_alphabet
                .iter()
                .map(|b| parity_effect([0, 1, 2].map(|x| msg_observable(x, y)), b))
                .collect()
        })
        .collect();
    QuantumStrategy::new(state, 2, povms_a, povms_b, Some(vec![(0, 2), (1, 3)]))
        .expect("honest magic square strategy is well formed")
}

/// Optimal CHSH measurements on |Phi+>: A = Z, X and B = (Z +- X)/sqrt 2.
pub fn chsh_honest_strategy() -> QuantumStrategy {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let amp = [Complex64::new(s, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(s, 0.0)];
    let state = QState::pure(&amp, vec![2, 2]).expect("normalised state");
    let z = qmath::pauli("Z").expect("Z");
    let x = qmath::pauli("X").expect("X");
    let b0 = (&z + &x).scale(s);
    let b1 = (&z - &x).scale(s);
    let pvm = |o: &CMatrix| -> Vec<CMatrix> {
        qmath::eig_projectors(o).expect("involution").into_iter().map(|(_, p)| p).collect()
    };
    QuantumStrategy::new(state, 1, vec![pvm(&z), pvm(&x)], vec![pvm(&b0), pvm(&b1)], Some(vec![(0, 1)]))
        .expect("honest CHSH strategy is well formed")
}

/// Depolarizing noise with parameter `q`: each declared pair (or the whole state)
/// goes to `(1 - 2q) rho + 2q tau`.
pub fn apply_depolarizing(strat: &QuantumStrategy, q: f64, per_pair: bool) -> Result<QuantumStrategy, GameError> {
    if !(0.0..=0.5).contains(&q) {
        return Err(GameError::NoiseOutOfRange(q));
    }
    let mut state = strat.state.clone();
    if per_pair {
        let pairs = strat.pairs.as_ref().ok_or(GameError::NoPairs)?;
        for &(i, j) in pairs {
            state = state.depolarize(&[i, j], 2.0 * q)?;
        }
    } else {
        let all: Vec<usize> = (0..state.dims().len()).collect();
        state = state.depolarize(&all, 2.0 * q)?;
    }
    Ok(QuantumStrategy { state, ..strat.clone() })
}

/// Closed-form honest magic square winning probability under per-pair depolarizing noise.
pub fn msg_expected_win(q: f64) -> f64 {
    1.0 - (2.0 / 9.0) * q * (7.0 - 5.0 * q)
}

/// Builds the tripartite operator `Pi^{xy}` for every input pair in two ways, the
/// direct sum over Charlie's bit and the form obtained after substituting the
/// completeness relations, and returns the largest entrywise difference.
///
/// `f0[x * |Y| + y]` is Charlie's effect for outcome 0; outcome 1 is its complement.
/// The reduced form averages over the key-1 outcomes of Alice and the key-0
/// outcomes of Bob, which for the magic square are two labels each.
pub fn verify_pi_simplification(game: &GameSpec, strat: &QuantumStrategy, f0: &[CMatrix]) -> Result<f64, GameError> {
    strat.check_against(game)?;
    if f0.len() != game.nx() * game.ny() {
        return Err(GameError::StrategyMismatch(format!("expected {} third-party effects", game.nx() * game.ny())));
    }
    let dc = f0[0].rows();
    let id_c = CMatrix::identity(dc);
    let id_a = CMatrix::identity(strat.dim_a());
    let id_b = CMatrix::identity(strat.dim_b());
    let mut worst: f64 = 0.0;
    for x in 0..game.nx() {
        for y in 0..game.ny() {
            let f = &f0[x * game.ny() + y];
            if f.rows() != dc || !f.is_psd(STRUCT_TOL) || !(&id_c - f).is_psd(STRUCT_TOL) {
                return Err(GameError::BadPovm { party: 'C', input: x * game.ny() + y, deviation: f64::INFINITY });
            }
            let f1 = &id_c - f;
            let sum_a = |c: u8| -> (CMatrix, usize) {
                let mut m = CMatrix::zeros(strat.dim_a(), strat.dim_a());
                let mut k = 0;
                for a in (0..game.na()).filter(|&a| game.sk_a[x][y][a] == c) {
                    m = &m + &strat.povms_a[x][a];
                    k += 1;
                }
                (m, k)
            };
            let sum_b = |c: u8| -> (CMatrix, usize) {
                let mut m = CMatrix::zeros(strat.dim_b(), strat.dim_b());
                let mut k = 0;
                for b in (0..game.nb()).filter(|&b| game.sk_b[x][y][b] == c) {
                    m = &m + &strat.povms_b[y][b];
                    k += 1;
                }
                (m, k)
            };
            let (p0, _) = sum_a(0);
            let (p1, _) = sum_a(1);
            let (q0, _) = sum_b(0);
            let (q1, _) = sum_b(1);
            let direct = &kron_all(&[f, &p0, &q0]) + &kron_all(&[&f1, &p1, &q1]);

            let a1: Vec<usize> = (0..game.na()).filter(|&a| game.sk_a[x][y][a] == 1).collect();
            let b0: Vec<usize> = (0..game.nb()).filter(|&b| game.sk_b[x][y][b] == 0).collect();
            if a1.is_empty() || b0.is_empty() {
                return Err(GameError::StrategyMismatch("both key values must be reachable".into()));
            }
            let wa = 1.0 / a1.len() as f64;
            let wb = 1.0 / b0.len() as f64;
            let dim = dc * strat.dim_a() * strat.dim_b();
            let mut reduced = CMatrix::zeros(dim, dim);
            for &a in &a1 {
                for &b in &b0 {
                    let pa = &strat.povms_a[x][a];
                    let qb = &strat.povms_b[y][b];
                    let t1 = kron_all(&[f, &id_a, qb]).scale(wa);
                    let t2 = kron_all(&[&f1, pa, &id_b]).scale(wb);
                    let t3 = kron_all(&[&id_c, pa, qb]);
                    reduced = &(&(&reduced + &t1) + &t2) - &t3;
                }
            }
            worst = worst.max(direct.max_abs_diff(&reduced));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msg_alphabets_have_parities() {
        let g = GameSpec::magic_square();
        let parity = |s: &str| s.bytes().filter(|&b| b == b'1').count() % 2;
        assert!(g.a_alphabet.iter().all(|a| parity(a) == 0));
        assert!(g.b_alphabet.iter().all(|b| parity(b) == 1));
    }

    #[test]
    fn msg_predicate_matches_definition() {
        let g = GameSpec::magic_square();
        for x in 0..3 {
            for y in 0..3 {
                for (ai, a) in g.a_alphabet.iter().enumerate() {
                    for (bi, b) in g.b_alphabet.iter().enumerate() {
                        let expect = a.as_bytes()[y] == b.as_bytes()[x];
                        assert_eq!(g.predicate(x, y, ai, bi), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn tables_are_lexicographic() {
        let t = all_tables(2, 3);
        assert_eq!(t.len(), 9);
        assert_eq!(t[0], vec![0, 0]);
        assert_eq!(t[1], vec![0, 1]);
        assert_eq!(t[8], vec![2, 2]);
    }

    #[test]
    fn search_cap_is_enforced() {
        let mut g = GameSpec::magic_square();
        let labels: Vec<String> = (0..20).map(|i| i.to_string()).collect();
        g.x_alphabet = labels.clone();
        g.pi_x = vec![0.05; 20];
        g.sk_a = vec![g.sk_a[0].clone(); 20];
        g.sk_b = vec![g.sk_b[0].clone(); 20];
        assert!(matches!(classical_value(&g), Err(GameError::SearchTooLarge { .. })));
    }

    #[test]
    fn joint_pi_must_factorise() {
        let mut doc: serde_json::Value = serde_json::from_str(&GameSpec::chsh().to_json()).unwrap();
        doc["pi"] = serde_json::json!([[0.25, 0.25], [0.25, 0.25]]);
        assert!(GameSpec::from_json(&doc.to_string()).is_ok());
        doc["pi"] = serde_json::json!([[0.5, 0.0], [0.0, 0.5]]);
        assert!(matches!(GameSpec::from_json(&doc.to_string()), Err(GameError::InvalidSpec(_))));
    }

    #[test]
    fn json_round_trip() {
        let g = GameSpec::magic_square();
        assert_eq!(GameSpec::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn noise_range_checked() {
        let s = msg_honest_strategy();
        assert!(matches!(apply_depolarizing(&s, 0.6, true), Err(GameError::NoiseOutOfRange(_))));
        assert!(matches!(apply_depolarizing(&s, -0.1, false), Err(GameError::NoiseOutOfRange(_))));
    }
}
