//! Versioned plain-text model format.
//!
//! ```text
//! nocnn-model 1
//! scalar f64
//! n 4
//! m 2
//! stages 2
//! stage 1 k 2 c 3
//! weights 3 2 <6 words>
//! biases 3 <3 words>
//! beta 3 <3 words>
//! stage 2 k 2 c 5
//! weights 5 2 <10 words>
//! biases 5 <5 words>
//! head 2 5 <10 words>
//! end
//! ```
//!
//! Every value is the IEEE-754 binary64 bit pattern of the parameter as 16
//! lowercase hex digits, so a round trip is bit-exact. `f32` parameters are
//! widened exactly. The last stage carries no `beta` line; the head plays
//! that role.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{BetaVector, ConvKernelBank};
use crate::network::CascadeNet;
use crate::numerics::DenseArray;
use crate::scalar::Scalar;

pub const MAGIC: &str = "nocnn-model";
pub const VERSION: u32 = 1;

fn push_values<T: Scalar>(out: &mut String, label: &str, dims: &[usize], values: &[T]) {
    out.push_str(label);
    for d in dims {
        let _ = write!(out, " {d}");
    }
    for v in values {
        let _ = write!(out, " {:016x}", v.to_f64_exact().to_bits());
    }
    out.push('\n');
}

pub fn to_text<T: Scalar>(net: &CascadeNet<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "scalar {}", T::NAME);
    let _ = writeln!(out, "n {}", net.n());
    let _ = writeln!(out, "m {}", net.m());
    let _ = writeln!(out, "stages {}", net.stage_count());
    for (i, bank) in net.banks().iter().enumerate() {
        let _ = writeln!(out, "stage {} k {} c {}", i + 1, bank.k(), bank.q());
        push_values(&mut out, "weights", &[bank.q(), bank.k()], bank.weights().data());
        push_values(&mut out, "biases", &[bank.q()], bank.biases());
        if let Some(beta) = net.betas().get(i) {
            push_values(&mut out, "beta", &[beta.q()], beta.values());
        }
    }
    let head = net.head();
    push_values(&mut out, "head", &[head.rows(), head.cols()], head.data());
    out.push_str("end\n");
    out
}

struct Reader<'a> {
    lines: std::str::SplitInclusive<'a, char>,
    line_no: usize,
    line_start: usize,
    next_start: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.split_inclusive('\n'),
            line_no: 0,
            line_start: 0,
            next_start: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.line_start as u64, format!("line {}: {}", self.line_no, msg.into()))
    }

    fn next_tokens(&mut self, keyword: &str) -> Result<Vec<&'a str>> {
        let line = self
            .lines
            .next()
            .ok_or_else(|| Error::format(self.next_start as u64, format!("missing `{keyword}` line")))?;
        self.line_no += 1;
        self.line_start = self.next_start;
        self.next_start += line.len();
        let mut tokens = line.split_ascii_whitespace();
        match tokens.next() {
            Some(k) if k == keyword => Ok(tokens.collect()),
            other => Err(self.err(format!("expected `{keyword}`, found {other:?}"))),
        }
    }

    fn usize_field(&mut self, keyword: &str) -> Result<usize> {
        let t = self.next_tokens(keyword)?;
        match t.as_slice() {
            [v] => v.parse().map_err(|_| self.err(format!("bad integer {v:?}"))),
            _ => Err(self.err(format!("`{keyword}` takes one value"))),
        }
    }

    fn values<T: Scalar>(&mut self, keyword: &str, dims: usize) -> Result<(Vec<usize>, Vec<T>)> {
        let t = self.next_tokens(keyword)?;
        if t.len() < dims {
            return Err(self.err(format!("`{keyword}` needs {dims} extents")));
        }
        let shape: Vec<usize> = t[..dims]
            .iter()
            .map(|v| v.parse().map_err(|_| self.err(format!("bad extent {v:?}"))))
            .collect::<Result<_>>()?;
        let expected: usize = shape.iter().product();
        let words = &t[dims..];
        if words.len() != expected {
            return Err(self.err(format!(
                "`{keyword}` {shape:?} needs {expected} values, found {}",
                words.len()
            )));
        }
        let values = words
            .iter()
            .map(|w| {
                if w.len() != 16 {
                    return Err(self.err(format!("value word {w:?} is not 16 hex digits")));
                }
                u64::from_str_radix(w, 16)
                    .map(|bits| T::from_f64_lossy(f64::from_bits(bits)))
                    .map_err(|_| self.err(format!("bad value word {w:?}")))
            })
            .collect::<Result<_>>()?;
        Ok((shape, values))
    }
}

pub fn from_text<T: Scalar>(text: &str) -> Result<CascadeNet<T>> {
    let mut r = Reader::new(text);
    let header = r.next_tokens(MAGIC)?;
    if header != [VERSION.to_string().as_str()] {
        return Err(r.err(format!("unsupported version {header:?}")));
    }
    let scalar = r.next_tokens("scalar")?;
    if scalar != [T::NAME] {
        return Err(r.err(format!("model stores {scalar:?}, reader expects {}", T::NAME)));
    }
    let n = r.usize_field("n")?;
    let m = r.usize_field("m")?;
    let stages = r.usize_field("stages")?;
    if stages == 0 {
        return Err(r.err("a model needs at least one stage"));
    }
    let mut banks = Vec::with_capacity(stages);
    let mut betas = Vec::with_capacity(stages - 1);
    for i in 0..stages {
        let t = r.next_tokens("stage")?;
        let expected = [(i + 1).to_string()];
        if t.len() != 5 || t[0] != expected[0] || t[1] != "k" || t[3] != "c" {
            return Err(r.err(format!("malformed stage header {t:?}")));
        }
        let (shape, w) = r.values::<T>("weights", 2)?;
        let (_, b) = r.values::<T>("biases", 1)?;
        let bank = ConvKernelBank::new(DenseArray::new(shape, w)?, b)
            .map_err(|e| e.context(&format!("stage {}", i + 1)))?;
        if t[2] != bank.k().to_string() || t[4] != bank.q().to_string() {
            return Err(r.err(format!("stage header {t:?} disagrees with weight shape")));
        }
        banks.push(bank);
        if i + 1 < stages {
            let (_, beta) = r.values::<T>("beta", 1)?;
            betas.push(BetaVector::new(beta)?);
        }
    }
    let (shape, head) = r.values::<T>("head", 2)?;
    r.next_tokens("end")?;
    let net = CascadeNet::from_parts(n, banks, betas, DenseArray::new(shape, head)?)?;
    if net.m() != m {
        return Err(Error::format(0, format!("header m = {m}, head has {} rows", net.m())));
    }
    Ok(net)
}

pub fn save<T: Scalar>(net: &CascadeNet<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(net))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<CascadeNet<T>> {
    from_text(&std::fs::read_to_string(path)?)
}
