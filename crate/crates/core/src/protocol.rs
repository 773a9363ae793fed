//! Executable model of the sequential protocol: devices, sifting, parameter
//! estimation, one-way error correction with hash verification, and Toeplitz
//! privacy amplification. Also Monte Carlo harnesses for completeness and
//! correctness.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::games::{GameError, GameSpec, QuantumStrategy};
use crate::keyrate::ProtocolParams;

/// Longest block a [`LinearCode`] handles; one block is one machine word.
pub const MAX_BLOCK: usize = 64;
/// Rounds simulated by a single run before we refuse.
pub const MAX_ROUNDS: u64 = 100_000_000;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bit length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid code: {0}")]
    InvalidCode(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("device output {output} outside alphabet of size {size}")]
    BadOutput { output: usize, size: usize },
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Named random streams derived from one seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Inputs = 1,
    Devices = 2,
    Hashes = 3,
    Code = 4,
    Trials = 5,
    Errors = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Fixed-length bit vector, packed little-endian into `u64` words. Bits past
/// `len` are always zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    len: usize,
    words: Vec<u64>,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        Self { len, words: vec![0; len.div_ceil(64)] }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut s = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            s.set(i, b);
        }
        s
    }

    pub fn random(len: usize, rng: &mut impl Rng) -> Self {
        let mut s = Self { len, words: (0..len.div_ceil(64)).map(|_| rng.gen()).collect() };
        s.mask_tail();
        s
    }

    fn mask_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(w) = self.words.last_mut() {
                *w &= (1u64 << r) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        let m = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    pub fn flip(&mut self, i: usize) {
        let v = self.get(i);
        self.set(i, !v);
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString, ProtocolError> {
        if self.len != other.len {
            return Err(ProtocolError::LengthMismatch { expected: self.len, found: other.len });
        }
        Ok(BitString { len: self.len, words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect() })
    }

    /// Bits `start..start + len` as a word, `len <= 64`, zero-padded past the end.
    pub fn block(&self, start: usize, len: usize) -> u64 {
        debug_assert!(len <= 64);
        if len == 0 || start >= self.len {
            return 0;
        }
        let raw = self.window(start);
        let keep = len.min(self.len - start);
        if keep == 64 {
            raw
        } else {
            raw & ((1u64 << keep) - 1)
        }
    }

    /// 64 bits starting at `off`; bits beyond the end read as zero.
    fn window(&self, off: usize) -> u64 {
        let (k, s) = (off / 64, off % 64);
        let lo = self.words.get(k).copied().unwrap_or(0);
        if s == 0 {
            return lo;
        }
        let hi = self.words.get(k + 1).copied().unwrap_or(0);
        (lo >> s) | (hi << (64 - s))
    }

    pub fn set_block(&mut self, start: usize, len: usize, value: u64) {
        for j in 0..len.min(self.len.saturating_sub(start)) {
            self.set(start + j, (value >> j) & 1 == 1);
        }
    }

    pub fn select(&self, idx: impl IntoIterator<Item = usize>) -> BitString {
        let bits: Vec<bool> = idx.into_iter().map(|i| self.get(i)).collect();
        BitString::from_bits(&bits)
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    /// Hex of the bytes holding bits 0..len, bit `i` at position `i % 8` of byte `i / 8`.
    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).take(self.len.div_ceil(8)).collect();
        hex::encode(bytes)
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

/// Toeplitz matrix over GF(2), `output_len x input_len`, defined by its first
/// column and row packed into `input_len + output_len - 1` seed bits.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToeplitzHash {
    seed: BitString,
    #[serde(skip)]
    reversed: BitString,
    input_len: usize,
    output_len: usize,
}

impl ToeplitzHash {
    pub fn new(seed: BitString, input_len: usize, output_len: usize) -> Result<Self, ProtocolError> {
        let expected = (input_len + output_len).saturating_sub(1);
        if seed.len() != expected {
            return Err(ProtocolError::LengthMismatch { expected, found: seed.len() });
        }
        // Reverse the seed so each output bit is one contiguous window.
        let rev = BitString::from_bits(&seed.bits().collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>());
        Ok(Self { seed, reversed: rev, input_len, output_len })
    }

    pub fn random(input_len: usize, output_len: usize, rng: &mut impl Rng) -> Self {
        let seed = BitString::random((input_len + output_len).saturating_sub(1), rng);
        Self::new(seed, input_len, output_len).expect("seed sized from the lengths")
    }

    pub fn seed(&self) -> &BitString {
        &self.seed
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn hash(&self, input: &BitString) -> Result<BitString, ProtocolError> {
        if input.len() != self.input_len {
            return Err(ProtocolError::LengthMismatch { expected: self.input_len, found: input.len() });
        }
        let mut out = BitString::zeros(self.output_len);
        if self.input_len == 0 {
            return Ok(out);
        }
        for i in 0..self.output_len {
            let off = self.output_len - 1 - i;
            let parity = input
                .words
                .iter()
                .enumerate()
                .fold(0u32, |acc, (w, &x)| acc ^ (self.reversed.window(off + 64 * w) & x).count_ones());
            out.set(i, parity & 1 == 1);
        }
        Ok(out)
    }
}

/// Binary linear code applied blockwise: the input is split into blocks of
/// `block_len` bits (the last zero-padded) and each block gets a syndrome of
/// `rows.len()` bits. Decoding searches error patterns up to `radius` by
/// minimum weight.
#[derive(Clone, Debug)]
pub struct LinearCode {
    block_len: usize,
    rows: Vec<u64>,
    radius: usize,
    leaders: HashMap<u64, u64>,
}

impl LinearCode {
    pub fn new(block_len: usize, rows: Vec<u64>, radius: usize) -> Result<Self, ProtocolError> {
        if block_len == 0 || block_len > MAX_BLOCK {
            return Err(ProtocolError::InvalidCode(format!("block length {block_len} outside 1..={MAX_BLOCK}")));
        }
        if rows.len() > 64 {
            return Err(ProtocolError::InvalidCode("more than 64 parity checks per block".into()));
        }
        if radius > block_len || radius > 4 {
            return Err(ProtocolError::InvalidCode(format!("decoder radius {radius} too large")));
        }
        let mask = if block_len == 64 { u64::MAX } else { (1u64 << block_len) - 1 };
        if rows.iter().any(|r| r & !mask != 0) {
            return Err(ProtocolError::InvalidCode("parity row wider than the block".into()));
        }
        let mut code = Self { block_len, rows, radius, leaders: HashMap::new() };
        code.leaders = code.coset_leaders();
        Ok(code)
    }

    /// Parity checks drawn uniformly at random.
    pub fn random(block_len: usize, checks: usize, radius: usize, rng: &mut impl Rng) -> Result<Self, ProtocolError> {
        let mask = if block_len >= 64 { u64::MAX } else { (1u64 << block_len) - 1 };
        let rows = (0..checks).map(|_| rng.gen::<u64>() & mask).collect();
        Self::new(block_len, rows, radius)
    }

    /// Random code sized for a binary symmetric channel with crossover `q`:
    /// the radius covers all but `eps/2` of the error mass and the syndrome is
    /// long enough that a random code confuses a correctable pattern with
    /// probability at most `eps/2`.
    pub fn for_error_rate(block_len: usize, q: f64, eps: f64, rng: &mut impl Rng) -> Result<Self, ProtocolError> {
        let (radius, checks) = code_size(block_len, q, eps)?;
        Self::random(block_len, checks, radius, rng)
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn checks(&self) -> usize {
        self.rows.len()
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn rows(&self) -> &[u64] {
        &self.rows
    }

    fn blocks(&self, n: usize) -> usize {
        n.div_ceil(self.block_len)
    }

    /// Syndrome length for an `n`-bit string.
    pub fn syndrome_len(&self, n: usize) -> usize {
        self.blocks(n) * self.checks()
    }

    pub fn block_syndrome(&self, block: u64) -> u64 {
        self.rows
            .iter()
            .enumerate()
            .fold(0, |acc, (k, r)| acc | (((r & block).count_ones() as u64) & 1) << k)
    }

    /// Minimum-weight pattern for each reachable syndrome; ties go to the
    /// first pattern in weight-then-lexicographic order.
    fn coset_leaders(&self) -> HashMap<u64, u64> {
        let mut table = HashMap::new();
        for w in 0..=self.radius {
            for e in patterns_of_weight(self.block_len, w) {
                table.entry(self.block_syndrome(e)).or_insert(e);
            }
        }
        table
    }

    pub fn synd(&self, s: &BitString) -> BitString {
        let m = self.checks();
        let mut z = BitString::zeros(self.syndrome_len(s.len()));
        for blk in 0..self.blocks(s.len()) {
            let syn = self.block_syndrome(s.block(blk * self.block_len, self.block_len));
            z.set_block(blk * m, m, syn);
        }
        z
    }

    /// Bob's guess of Alice's string from his own and her syndrome. Blocks with
    /// no pattern inside the radius are left unchanged.
    pub fn corr(&self, s_b: &BitString, z: &BitString) -> Result<BitString, ProtocolError> {
        let expected = self.syndrome_len(s_b.len());
        if z.len() != expected {
            return Err(ProtocolError::LengthMismatch { expected, found: z.len() });
        }
        let m = self.checks();
        let mut out = s_b.clone();
        for blk in 0..self.blocks(s_b.len()) {
            let start = blk * self.block_len;
            let mine = s_b.block(start, self.block_len);
            let diff = self.block_syndrome(mine) ^ z.block(blk * m, m);
            if let Some(&e) = self.leaders.get(&diff) {
                out.set_block(start, self.block_len, mine ^ e);
            }
        }
        Ok(out)
    }
}

/// All `n`-bit words of weight `w` in increasing numeric order of their
/// reversed bit pattern (lexicographic on bit positions).
pub fn patterns_of_weight(n: usize, w: usize) -> Vec<u64> {
    fn rec(n: usize, w: usize, from: usize, acc: u64, out: &mut Vec<u64>) {
        if w == 0 {
            out.push(acc);
            return;
        }
        for i in from..=n - w {
            rec(n, w - 1, i + 1, acc | 1 << i, out);
        }
    }
    let mut out = Vec::new();
    if w <= n {
        rec(n, w, 0, 0, &mut out);
    }
    out
}

fn ln_choose(n: usize, k: usize) -> f64 {
    (1..=k).map(|i| ((n + 1 - i) as f64 / i as f64).ln()).sum()
}

/// `(radius, checks)` per block for [`LinearCode::for_error_rate`].
pub fn code_size(block_len: usize, q: f64, eps: f64) -> Result<(usize, usize), ProtocolError> {
    if !(0.0..=0.5).contains(&q) || !(eps > 0.0 && eps < 1.0) {
        return Err(ProtocolError::Config(format!("code sizing needs q in [0, 1/2] and eps in (0, 1), got {q}, {eps}")));
    }
    let pmf = |k: usize| {
        if q == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        (ln_choose(block_len, k) + k as f64 * q.ln() + (block_len - k) as f64 * (1.0 - q).ln()).exp()
    };
    let mut radius = 0;
    let mut mass = pmf(0);
    while 1.0 - mass > eps / 2.0 && radius < block_len.min(4) {
        radius += 1;
        mass += pmf(radius);
    }
    let volume: f64 = (0..=radius).map(|k| ln_choose(block_len, k).exp()).sum();
    let checks = (volume.log2().ceil() + (2.0 / eps).log2().ceil()) as usize;
    Ok((radius, checks.min(block_len)))
}

/// How Bob obtains his guess of Alice's raw key.
#[derive(Clone, Debug)]
pub enum ErrorCorrection {
    /// Run a real code and ship its syndrome.
    Code(LinearCode),
    /// Charge `lambda_ec` bits but hand Bob Alice's string, as in the key-rate
    /// analysis. The verification hash still runs.
    Parametric,
}

/// A jointly sampled pair of devices. Quantum correlations make the two
/// outputs dependent, so the pair is sampled together; an implementation may
/// carry state across rounds.
pub trait DevicePair {
    fn play(&mut self, round: usize, x: usize, y: usize, rng: &mut ChaCha8Rng) -> (usize, usize);
}

/// Memoryless devices sampling from the strategy's output distribution.
#[derive(Clone, Debug)]
pub struct HonestDevices {
    nb: usize,
    tables: Vec<WeightedIndex<f64>>,
    ny: usize,
}

impl HonestDevices {
    pub fn new(game: &GameSpec, strategy: &QuantumStrategy) -> Result<Self, ProtocolError> {
        let mut tables = Vec::with_capacity(game.nx() * game.ny());
        for x in 0..game.nx() {
            for y in 0..game.ny() {
                let p = strategy.joint_distribution(x, y)?;
                if p.len() != game.na() * game.nb() {
                    return Err(ProtocolError::Config("strategy outcome count does not match the game".into()));
                }
                tables.push(WeightedIndex::new(&p).map_err(|e| ProtocolError::Config(e.to_string()))?);
            }
        }
        Ok(Self { nb: game.nb(), tables, ny: game.ny() })
    }
}

impl DevicePair for HonestDevices {
    fn play(&mut self, _round: usize, x: usize, y: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let k = self.tables[x * self.ny + y].sample(rng);
        (k / self.nb, k % self.nb)
    }
}

/// Deterministic answer tables, `a = table_a[x]` and `b = table_b[y]`.
#[derive(Clone, Debug)]
pub struct TableDevices {
    pub table_a: Vec<usize>,
    pub table_b: Vec<usize>,
}

impl DevicePair for TableDevices {
    fn play(&mut self, _round: usize, x: usize, y: usize, _rng: &mut ChaCha8Rng) -> (usize, usize) {
        (self.table_a[x], self.table_b[y])
    }
}

/// Settings of one simulated run beyond the protocol parameters.
#[derive(Clone, Debug)]
pub struct RunSetup {
    pub params: ProtocolParams,
    pub ec: ErrorCorrection,
    /// Output length of privacy amplification.
    pub l_key: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    Pass,
    Abort,
}

fn ser_tests<S: Serializer>(c: &[Option<bool>], s: S) -> Result<S::Ok, S::Error> {
    let text: String = c
        .iter()
        .map(|v| match v {
            None => '-',
            Some(true) => '1',
            Some(false) => '0',
        })
        .collect();
    s.serialize_str(&text)
}

fn ser_symbols<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
    let text: String = v.iter().map(|&d| char::from_digit(d as u32, 36).unwrap_or('?')).collect();
    s.serialize_str(&text)
}

/// Everything sent over the public channel.
#[derive(Clone, Debug, Serialize)]
pub struct PublicRecord {
    #[serde(serialize_with = "ser_symbols")]
    pub x: Vec<u8>,
    #[serde(serialize_with = "ser_symbols")]
    pub y: Vec<u8>,
    pub t: BitString,
    /// Alice's sifted bits on test rounds, in round order.
    pub s_a_test: BitString,
    /// Per-round test outcome: `1` win, `0` loss, `-` generation round.
    #[serde(serialize_with = "ser_tests")]
    pub c: Vec<Option<bool>>,
    pub losses: usize,
    pub loss_threshold: f64,
    pub f_pe: Flag,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_ec: Option<Flag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub syndrome: Option<BitString>,
    pub syndrome_bits: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ec_hash_seed: Option<BitString>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_a: Option<BitString>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pa_seed: Option<BitString>,
}

/// Local data of the two parties.
#[derive(Clone, Debug, Serialize)]
pub struct PrivateRecord {
    #[serde(serialize_with = "ser_symbols")]
    pub a: Vec<u8>,
    #[serde(serialize_with = "ser_symbols")]
    pub b: Vec<u8>,
    pub s_a: BitString,
    pub s_b: BitString,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_b_hat: Option<BitString>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_b: Option<BitString>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_a: Option<BitString>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_b: Option<BitString>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Transcript {
    pub seed: u64,
    pub n: usize,
    pub game: String,
    pub l_key: usize,
    pub public: PublicRecord,
    pub private: PrivateRecord,
}

impl Transcript {
    pub fn aborted(&self) -> bool {
        self.public.f_pe == Flag::Abort || self.public.f_ec == Some(Flag::Abort)
    }

    pub fn keys_match(&self) -> Option<bool> {
        match (&self.private.k_a, &self.private.k_b) {
            (Some(a), Some(b)) => Some(a == b),
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }
}

/// Loss count at which parameter estimation still passes.
pub fn pe_threshold(params: &ProtocolParams) -> f64 {
    (1.0 - params.omega_exp + params.delta_tol) * params.gamma * params.n as f64
}

/// Run the protocol once. The run is fully determined by `seed`.
pub fn run_protocol(
    game: &GameSpec,
    devices: &mut dyn DevicePair,
    setup: &RunSetup,
    seed: u64,
) -> Result<Transcript, ProtocolError> {
    game.validate()?;
    let p = &setup.params;
    p.validate().map_err(|e| ProtocolError::Config(e.to_string()))?;
    if p.n > MAX_ROUNDS {
        return Err(ProtocolError::Config(format!("n = {} exceeds the simulation cap {MAX_ROUNDS}", p.n)));
    }
    let n = p.n as usize;
    if let ErrorCorrection::Code(code) = &setup.ec {
        if code.block_len() > n {
            return Err(ProtocolError::Config("code block longer than the raw key".into()));
        }
    }
    if setup.l_key > n {
        return Err(ProtocolError::Config(format!("key length {} exceeds n = {n}", setup.l_key)));
    }

    let mut inputs = stream_rng(seed, Stream::Inputs);
    let mut dev_rng = stream_rng(seed, Stream::Devices);
    let mut hash_rng = stream_rng(seed, Stream::Hashes);
    let px = WeightedIndex::new(&game.pi_x).map_err(|e| ProtocolError::Config(e.to_string()))?;
    let py = WeightedIndex::new(&game.pi_y).map_err(|e| ProtocolError::Config(e.to_string()))?;

    let (mut xs, mut ys, mut as_, mut bs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut t = BitString::zeros(n);
    let mut s_a = BitString::zeros(n);
    let mut s_b = BitString::zeros(n);
    for i in 0..n {
        let x = px.sample(&mut inputs);
        let y = py.sample(&mut inputs);
        let test = inputs.gen_bool(p.gamma);
        let (a, b) = devices.play(i, x, y, &mut dev_rng);
        if a >= game.na() {
            return Err(ProtocolError::BadOutput { output: a, size: game.na() });
        }
        if b >= game.nb() {
            return Err(ProtocolError::BadOutput { output: b, size: game.nb() });
        }
        t.set(i, test);
        s_a.set(i, game.sk_a[x][y][a] == 1);
        s_b.set(i, game.sk_b[x][y][b] == 1);
        xs.push(x as u8);
        ys.push(y as u8);
        as_.push(a as u8);
        bs.push(b as u8);
    }

    // Parameter estimation on Bob's side from Alice's announced test bits.
    let tested: Vec<usize> = (0..n).filter(|&i| t.get(i)).collect();
    let s_a_test = s_a.select(tested.iter().copied());
    let c: Vec<Option<bool>> = (0..n).map(|i| t.get(i).then(|| s_a.get(i) == s_b.get(i))).collect();
    let losses = c.iter().filter(|v| **v == Some(false)).count();
    let loss_threshold = pe_threshold(p);
    let f_pe = if losses as f64 <= loss_threshold { Flag::Pass } else { Flag::Abort };

    let mut public = PublicRecord {
        x: xs,
        y: ys,
        t,
        s_a_test,
        c,
        losses,
        loss_threshold,
        f_pe,
        f_ec: None,
        syndrome: None,
        syndrome_bits: 0.0,
        ec_hash_seed: None,
        h_a: None,
        pa_seed: None,
    };
    let mut private = PrivateRecord { a: as_, b: bs, s_a, s_b, s_b_hat: None, h_b: None, k_a: None, k_b: None };

    if f_pe == Flag::Pass {
        let (s_b_hat, syndrome, bits) = match &setup.ec {
            ErrorCorrection::Code(code) => {
                let z = code.synd(&private.s_a);
                let guess = code.corr(&private.s_b, &z)?;
                let bits = z.len() as f64;
                (guess, Some(z), bits)
            }
            ErrorCorrection::Parametric => (private.s_a.clone(), None, p.lambda_ec),
        };
        let ec_hash = ToeplitzHash::random(n, p.l_ec as usize, &mut hash_rng);
        let h_a = ec_hash.hash(&private.s_a)?;
        let h_b = ec_hash.hash(&s_b_hat)?;
        let f_ec = if h_a == h_b { Flag::Pass } else { Flag::Abort };
        public.f_ec = Some(f_ec);
        public.syndrome = syndrome;
        public.syndrome_bits = bits;
        public.ec_hash_seed = Some(ec_hash.seed().clone());
        public.h_a = Some(h_a);
        private.h_b = Some(h_b);
        if f_ec == Flag::Pass {
            let pa = ToeplitzHash::random(n, setup.l_key, &mut hash_rng);
            private.k_a = Some(pa.hash(&private.s_a)?);
            private.k_b = Some(pa.hash(&s_b_hat)?);
            public.pa_seed = Some(pa.seed().clone());
        }
        private.s_b_hat = Some(s_b_hat);
    }

    Ok(Transcript { seed, n, game: game.name.clone(), l_key: setup.l_key, public, private })
}

/// Per-trial seeds derived from one master seed.
pub fn trial_seeds(seed: u64, trials: usize) -> Vec<u64> {
    let mut rng = stream_rng(seed, Stream::Trials);
    (0..trials).map(|_| rng.next_u64()).collect()
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompletenessReport {
    pub trials: usize,
    pub pe_aborts: usize,
    /// Trials that passed estimation and then failed the verification hash.
    pub ec_aborts: usize,
    pub abort_rate: f64,
    pub abort_ci: (f64, f64),
    pub pe_abort_rate: f64,
    pub pe_abort_ci: (f64, f64),
    /// Non-aborted trials whose keys differ.
    pub key_mismatches: usize,
}

/// Run `trials` independent protocol instances in parallel. `make_devices`
/// receives the trial index.
pub fn monte_carlo_completeness<D, F>(
    game: &GameSpec,
    make_devices: F,
    setup: &RunSetup,
    trials: usize,
    seed: u64,
) -> Result<CompletenessReport, ProtocolError>
where
    D: DevicePair,
    F: Fn(usize) -> D + Sync,
{
    let seeds = trial_seeds(seed, trials);
    let outcomes = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &s)| {
            let mut dev = make_devices(k);
            let tr = run_protocol(game, &mut dev, setup, s)?;
            Ok((tr.public.f_pe, tr.public.f_ec, tr.keys_match()))
        })
        .collect::<Result<Vec<_>, ProtocolError>>()?;
    let pe_aborts = outcomes.iter().filter(|o| o.0 == Flag::Abort).count();
    let ec_aborts = outcomes.iter().filter(|o| o.1 == Some(Flag::Abort)).count();
    let key_mismatches = outcomes.iter().filter(|o| o.2 == Some(false)).count();
    let aborts = pe_aborts + ec_aborts;
    let n = trials.max(1) as f64;
    Ok(CompletenessReport {
        trials,
        pe_aborts,
        ec_aborts,
        abort_rate: aborts as f64 / n,
        abort_ci: wilson_interval(aborts, trials),
        pe_abort_rate: pe_aborts as f64 / n,
        pe_abort_ci: wilson_interval(pe_aborts, trials),
        key_mismatches,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrectnessReport {
    pub trials: usize,
    pub passes: usize,
    pub pass_rate: f64,
    /// Collision bound 2^-l_ec of the hash family.
    pub bound: f64,
    /// Binomial standard deviation of the pass rate at the bound.
    pub sigma: f64,
    pub within_bound: bool,
}

/// Hash-verification pass frequency when Bob's guess is forced to differ from
/// Alice's string (`force_mismatch`), or equals it otherwise.
pub fn monte_carlo_correctness(
    input_len: usize,
    l_ec: usize,
    trials: usize,
    force_mismatch: bool,
    seed: u64,
) -> Result<CorrectnessReport, ProtocolError> {
    if force_mismatch && input_len == 0 {
        return Err(ProtocolError::Config("cannot force a mismatch on empty strings".into()));
    }
    let passes: usize = trial_seeds(seed, trials)
        .par_iter()
        .map(|&s| {
            let mut rng = stream_rng(s, Stream::Errors);
            let s_a = BitString::random(input_len, &mut rng);
            let mut s_b = s_a.clone();
            if force_mismatch {
                loop {
                    let e = BitString::random(input_len, &mut rng);
                    if e.weight() > 0 {
                        s_b = s_a.xor(&e).expect("same length");
                        break;
                    }
                }
            }
            let h = ToeplitzHash::random(input_len, l_ec, &mut rng);
            usize::from(h.hash(&s_a).expect("sized") == h.hash(&s_b).expect("sized"))
        })
        .sum();
    let bound = 2f64.powi(-(l_ec as i32));
    let sigma = (bound * (1.0 - bound) / trials.max(1) as f64).sqrt();
    let pass_rate = passes as f64 / trials.max(1) as f64;
    Ok(CorrectnessReport {
        trials,
        passes,
        pass_rate,
        bound,
        sigma,
        within_bound: !force_mismatch || pass_rate <= bound + 3.0 * sigma,
    })
}
