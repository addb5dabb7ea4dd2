//! Unitary DFT and the partial DFT / DFT-RP sensing operators.
//!
//! The sensing operator is `A = S F R` with `R` a permutation, `F` the
//! unitary `n`-point DFT and `S` a selection of `m` reordered rows. Only the
//! index vectors are stored; application costs one FFT.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};
use crate::matrix::{ComplexMatrix, C64};

/// Largest dimension [`SensingOperator::materialize`] accepts.
pub const MAX_MATERIALIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Unitary DFT of a fixed length (scale `1/sqrt(n)` in both directions).
#[derive(Clone)]
pub struct UnitaryDft {
    n: usize,
    scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for UnitaryDft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UnitaryDft").field("n", &self.n).finish()
    }
}

impl UnitaryDft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            scale: 1.0 / (n.max(1) as f64).sqrt(),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn process_in_place(&self, buf: &mut [C64], direction: Direction) -> Result<()> {
        check_len("dft input", self.n, buf.len())?;
        match direction {
            Direction::Forward => self.forward.process(buf),
            Direction::Inverse => self.inverse.process(buf),
        }
        for v in buf.iter_mut() {
            *v *= self.scale;
        }
        Ok(())
    }

    pub fn apply(&self, v: &[C64], direction: Direction) -> Result<Vec<C64>> {
        let mut buf = v.to_vec();
        self.process_in_place(&mut buf, direction)?;
        Ok(buf)
    }
}

/// Unitary DFT of `v` at its own length.
pub fn dft(v: &[C64], direction: Direction) -> Vec<C64> {
    let mut buf = v.to_vec();
    UnitaryDft::new(v.len())
        .process_in_place(&mut buf, direction)
        .expect("length matches plan");
    buf
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SensingKind {
    /// Partial DFT: random row subset, no permutation.
    Dft,
    /// Partial DFT with a random column permutation.
    DftRp,
}

impl fmt::Display for SensingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensingKind::Dft => "DFT",
            SensingKind::DftRp => "DFT_RP",
        })
    }
}

impl FromStr for SensingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "DFT" => Ok(SensingKind::Dft),
            "DFT_RP" => Ok(SensingKind::DftRp),
            other => Err(Error::invalid(format!("unknown sensing kind `{other}`"))),
        }
    }
}

/// Implicit `m x n` operator `A = S F R` with orthonormal rows.
#[derive(Clone)]
pub struct SensingOperator {
    n: usize,
    m: usize,
    kind: SensingKind,
    seed: u64,
    row_selection: Vec<usize>,
    permutation: Vec<usize>,
    dft: UnitaryDft,
}

impl fmt::Debug for SensingOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SensingOperator")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("kind", &self.kind)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl PartialEq for SensingOperator {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.m == other.m
            && self.kind == other.kind
            && self.seed == other.seed
            && self.row_selection == other.row_selection
            && self.permutation == other.permutation
    }
}

/// Draws a sensing operator. The row subset is drawn before the permutation,
/// so `Dft` and `DftRp` operators with the same seed select the same rows.
pub fn make_sensing_operator(
    n: usize,
    m: usize,
    kind: SensingKind,
    seed: u64,
) -> Result<SensingOperator> {
    if n == 0 || m == 0 || m > n {
        return Err(Error::invalid(format!(
            "sensing operator needs 1 <= m <= n, got m={m}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    rows.truncate(m);
    let mut permutation: Vec<usize> = (0..n).collect();
    if kind == SensingKind::DftRp {
        permutation.shuffle(&mut rng);
    }
    SensingOperator::from_parts(n, m, kind, seed, rows, permutation)
}

impl SensingOperator {
    /// Assembles an operator from explicit index vectors, validating them.
    pub fn from_parts(
        n: usize,
        m: usize,
        kind: SensingKind,
        seed: u64,
        row_selection: Vec<usize>,
        permutation: Vec<usize>,
    ) -> Result<Self> {
        if n == 0 || m == 0 || m > n {
            return Err(Error::invalid(format!(
                "sensing operator needs 1 <= m <= n, got m={m}, n={n}"
            )));
        }
        check_len("row selection", m, row_selection.len())?;
        check_len("permutation", n, permutation.len())?;
        let mut seen = vec![false; n];
        for &r in &row_selection {
            if r >= n || std::mem::replace(&mut seen[r], true) {
                return Err(Error::invalid("row selection must hold distinct indices < n"));
            }
        }
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("permutation is not a bijection on 0..n"));
            }
        }
        if kind == SensingKind::Dft && permutation.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(Error::invalid("DFT operators use the identity permutation"));
        }
        Ok(Self {
            n,
            m,
            kind,
            seed,
            row_selection,
            permutation,
            dft: UnitaryDft::new(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> SensingKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row_selection(&self) -> &[usize] {
        &self.row_selection
    }

    /// `(R x)[i] = x[permutation[i]]`.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Undersampling ratio `m / n`.
    pub fn ratio(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    /// `y = A x`: permute, FFT, select.
    pub fn apply_forward(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len("forward operand", self.n, x.len())?;
        let mut buf: Vec<C64> = self.permutation.iter().map(|&i| x[i]).collect();
        self.dft.process_in_place(&mut buf, Direction::Forward)?;
        Ok(self.row_selection.iter().map(|&r| buf[r]).collect())
    }

    /// `x = A^H y`: scatter, inverse FFT, un-permute.
    pub fn apply_adjoint(&self, y: &[C64]) -> Result<Vec<C64>> {
        check_len("adjoint operand", self.m, y.len())?;
        let mut buf = vec![C64::new(0.0, 0.0); self.n];
        for (&r, v) in self.row_selection.iter().zip(y) {
            buf[r] = *v;
        }
        self.dft.process_in_place(&mut buf, Direction::Inverse)?;
        let mut out = vec![C64::new(0.0, 0.0); self.n];
        for (i, &p) in self.permutation.iter().enumerate() {
            out[p] = buf[i];
        }
        Ok(out)
    }

    /// Dense `m x n` matrix of the operator. Test-oracle use only.
    pub fn materialize(&self) -> Result<ComplexMatrix> {
        if self.n > MAX_MATERIALIZE {
            return Err(Error::invalid(format!(
                "refusing to materialize an operator with n={} > {MAX_MATERIALIZE}",
                self.n
            )));
        }
        let mut columns = Vec::with_capacity(self.n);
        for k in 0..self.n {
            let mut e = vec![C64::new(0.0, 0.0); self.n];
            e[k] = C64::new(1.0, 0.0);
            columns.push(self.apply_forward(&e)?);
        }
        ComplexMatrix::from_columns(self.m, &columns)
    }

    /// Line-oriented `key=value` record that replays the operator exactly.
    pub fn to_descriptor(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "n={}\nm={}\nkind={}\nseed={}\nrow_selection={}\npermutation={}\n",
            self.n,
            self.m,
            self.kind,
            self.seed,
            join(&self.row_selection),
            join(&self.permutation)
        )
    }

    pub fn parse_descriptor(text: &str) -> Result<Self> {
        let mut n = None;
        let mut m = None;
        let mut kind = None;
        let mut seed = None;
        let mut rows = None;
        let mut perm = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, "expected key=value"))?;
            let value = value.trim();
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|e| Error::parse(line_no, format!("{key}: {e}")))
            };
            let list = |v: &str| -> Result<Vec<usize>> {
                if v.is_empty() {
                    return Ok(Vec::new());
                }
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|e| Error::parse(line_no, format!("{key}: {e}")))
                    })
                    .collect()
            };
            match key.trim() {
                "n" => n = Some(num(value)? as usize),
                "m" => m = Some(num(value)? as usize),
                "kind" => kind = Some(value.parse::<SensingKind>()?),
                "seed" => seed = Some(num(value)?),
                "row_selection" => rows = Some(list(value)?),
                "permutation" => perm = Some(list(value)?),
                other => return Err(Error::parse(line_no, format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::parse(0, format!("missing key `{k}`"));
        Self::from_parts(
            n.ok_or_else(|| missing("n"))?,
            m.ok_or_else(|| missing("m"))?,
            kind.ok_or_else(|| missing("kind"))?,
            seed.ok_or_else(|| missing("seed"))?,
            rows.ok_or_else(|| missing("row_selection"))?,
            perm.ok_or_else(|| missing("permutation"))?,
        )
    }
}
