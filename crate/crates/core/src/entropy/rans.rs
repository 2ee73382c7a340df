//! Byte-oriented range ANS with 16-bit probabilities and a 32-bit state.
//!
//! The encoder runs over symbols in reverse and the decoder forward. The
//! encoder starts from state `RANS_L`; a well-formed stream therefore ends
//! with the decoder back at `RANS_L` with every byte consumed, which is
//! checked in [`RansDecoder::finish`].

use super::EntropyError;

pub const PROB_BITS: u32 = 16;
pub const PROB_SCALE: u32 = 1 << PROB_BITS;
const RANS_L: u32 = 1 << 23;

/// Integer frequencies over a contiguous symbol range `[lo, lo + n)`,
/// summing to exactly `PROB_SCALE`, every symbol at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    lo: i32,
    cum: Vec<u32>,
}

impl FrequencyTable {
    pub fn from_frequencies(lo: i32, freqs: &[u32]) -> Result<Self, EntropyError> {
        if freqs.is_empty() || freqs.contains(&0) {
            return Err(EntropyError::Model("frequencies must be non-empty and positive".into()));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        cum.push(0u32);
        let mut acc = 0u32;
        for &f in freqs {
            acc = acc
                .checked_add(f)
                .ok_or_else(|| EntropyError::Model("frequency overflow".into()))?;
            cum.push(acc);
        }
        if acc != PROB_SCALE {
            return Err(EntropyError::Model(format!("frequencies sum to {acc}, expected {PROB_SCALE}")));
        }
        Ok(FrequencyTable { lo, cum })
    }

    /// Quantises `probs` (indexed from symbol `lo`) to integer frequencies.
    ///
    /// Each symbol first receives one quantum. The remaining
    /// `PROB_SCALE - n` quanta are split proportionally by flooring, and
    /// the leftover goes one quantum each to the largest fractional parts,
    /// ties broken towards the lower symbol.
    pub fn from_probabilities(lo: i32, probs: &[f64]) -> Result<Self, EntropyError> {
        let n = probs.len();
        if n == 0 || n > PROB_SCALE as usize {
            return Err(EntropyError::Model(format!("alphabet of {n} symbols")));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(EntropyError::Model("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(EntropyError::Model("probabilities sum to zero".into()));
        }
        let spare = (PROB_SCALE as usize - n) as f64;
        let mut freqs = Vec::with_capacity(n);
        let mut remainders = Vec::with_capacity(n);
        let mut assigned = 0u64;
        for (i, &p) in probs.iter().enumerate() {
            let raw = p / total * spare;
            let base = raw.floor();
            freqs.push(1 + base as u32);
            assigned += base as u64;
            remainders.push((raw - base, i));
        }
        let left = (spare as u64).saturating_sub(assigned) as usize;
        if left > 0 {
            let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            if left < n {
                remainders.select_nth_unstable_by(left - 1, order);
            }
            for &(_, i) in &remainders[..left.min(n)] {
                freqs[i] += 1;
            }
        }
        Self::from_frequencies(lo, &freqs)
    }

    pub fn lo(&self) -> i32 {
        self.lo
    }

    pub fn hi(&self) -> i32 {
        self.lo + self.len() as i32 - 1
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, symbol: i32) -> bool {
        symbol >= self.lo && symbol <= self.hi()
    }

    /// `(start, freq)` of a symbol.
    pub fn range(&self, symbol: i32) -> Result<(u32, u32), EntropyError> {
        if !self.contains(symbol) {
            return Err(EntropyError::SymbolOutOfRange { symbol, lo: self.lo, hi: self.hi() });
        }
        let i = (symbol - self.lo) as usize;
        Ok((self.cum[i], self.cum[i + 1] - self.cum[i]))
    }

    pub fn frequency(&self, symbol: i32) -> Option<u32> {
        self.range(symbol).ok().map(|(_, f)| f)
    }

    pub fn probability(&self, symbol: i32) -> Option<f64> {
        self.frequency(symbol).map(|f| f as f64 / PROB_SCALE as f64)
    }

    /// Information content of a symbol under this table, in bits.
    pub fn bits(&self, symbol: i32) -> Result<f64, EntropyError> {
        let (_, f) = self.range(symbol)?;
        Ok(PROB_BITS as f64 - (f as f64).log2())
    }

    /// Symbol whose interval contains the cumulative value `c < PROB_SCALE`.
    fn lookup(&self, c: u32) -> (i32, u32, u32) {
        let i = self.cum.partition_point(|&v| v <= c) - 1;
        (self.lo + i as i32, self.cum[i], self.cum[i + 1] - self.cum[i])
    }
}

/// Accumulates `(start, freq)` pairs and emits them as one rANS stream.
#[derive(Debug, Default)]
pub struct RansEncoder {
    pending: Vec<(u32, u32)>,
}

impl RansEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, table: &FrequencyTable, symbol: i32) -> Result<(), EntropyError> {
        self.pending.push(table.range(symbol)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        let mut state = RANS_L;
        let mut out = Vec::with_capacity(self.pending.len() / 2 + 8);
        for &(start, freq) in self.pending.iter().rev() {
            let x_max = ((RANS_L >> PROB_BITS) << 8) * freq;
            while state >= x_max {
                out.push(state as u8);
                state >>= 8;
            }
            state = ((state / freq) << PROB_BITS) + (state % freq) + start;
        }
        out.extend_from_slice(&state.to_le_bytes());
        out.reverse();
        out
    }
}

/// Sequential decoder; models may be chosen after each decoded symbol.
#[derive(Debug)]
pub struct RansDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    state: u32,
}

impl<'a> RansDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self, EntropyError> {
        if data.len() < 4 {
            return Err(EntropyError::Truncated);
        }
        let state = u32::from_be_bytes([data[0], data[1], data[2], data[3]]);
        if state < RANS_L {
            return Err(EntropyError::Corrupt("initial coder state out of range".into()));
        }
        Ok(RansDecoder { data, pos: 4, state })
    }

    pub fn decode(&mut self, table: &FrequencyTable) -> Result<i32, EntropyError> {
        let c = self.state & (PROB_SCALE - 1);
        let (symbol, start, freq) = table.lookup(c);
        self.state = freq * (self.state >> PROB_BITS) + c - start;
        while self.state < RANS_L {
            let &b = self.data.get(self.pos).ok_or(EntropyError::Truncated)?;
            self.state = (self.state << 8) | b as u32;
            self.pos += 1;
        }
        Ok(symbol)
    }

    /// Verifies that the stream was consumed exactly.
    pub fn finish(self) -> Result<(), EntropyError> {
        if self.pos != self.data.len() {
            return Err(EntropyError::Corrupt(format!("{} trailing bytes", self.data.len() - self.pos)));
        }
        if self.state != RANS_L {
            return Err(EntropyError::Corrupt("final coder state mismatch".into()));
        }
        Ok(())
    }
}

/// Encodes `symbols[i]` under `tables[i]`. An empty input yields just the
/// 4-byte final state.
pub fn encode<'t>(
    symbols: &[i32],
    tables: impl IntoIterator<Item = &'t FrequencyTable>,
) -> Result<Vec<u8>, EntropyError> {
    let mut enc = RansEncoder::new();
    let mut tables = tables.into_iter();
    for &s in symbols {
        let t = tables.next().ok_or_else(|| EntropyError::Model("fewer models than symbols".into()))?;
        enc.push(t, s)?;
    }
    Ok(enc.finish())
}

pub fn decode<'t>(
    bytes: &[u8],
    tables: impl IntoIterator<Item = &'t FrequencyTable>,
) -> Result<Vec<i32>, EntropyError> {
    let mut dec = RansDecoder::new(bytes)?;
    let out = tables.into_iter().map(|t| dec.decode(t)).collect::<Result<Vec<_>, _>>()?;
    dec.finish()?;
    Ok(out)
}

/// Sum of information content, using exactly the coder's frequencies.
pub fn rate_estimate<'t>(
    symbols: &[i32],
    tables: impl IntoIterator<Item = &'t FrequencyTable>,
) -> Result<f64, EntropyError> {
    symbols.iter().zip(tables).map(|(&s, t)| t.bits(s)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantisation_sums_exactly_and_floors_at_one() {
        let t = FrequencyTable::from_probabilities(-2, &[1e-12, 0.25, 0.5, 0.25, 0.0]).unwrap();
        let sum: u32 = (-2..=2).map(|s| t.frequency(s).unwrap()).sum();
        assert_eq!(sum, PROB_SCALE);
        assert_eq!(t.frequency(-2), Some(1));
        assert_eq!(t.frequency(2), Some(1));
    }

    #[test]
    fn half_probability_costs_one_bit() {
        let t = FrequencyTable::from_frequencies(0, &[PROB_SCALE / 2, PROB_SCALE / 2]).unwrap();
        assert_eq!(t.bits(0).unwrap(), 1.0);
        let one = FrequencyTable::from_probabilities(3, &[1.0]).unwrap();
        assert_eq!(one.bits(3).unwrap(), 0.0);
    }

    #[test]
    fn empty_round_trip() {
        let bytes = encode(&[], std::iter::empty()).unwrap();
        assert_eq!(bytes.len(), 4);
        assert!(decode(&bytes, std::iter::empty()).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_symbol_rejected() {
        let t = FrequencyTable::from_probabilities(0, &[0.5, 0.5]).unwrap();
        assert!(matches!(encode(&[2], [&t]), Err(EntropyError::SymbolOutOfRange { .. })));
    }

    #[test]
    fn small_round_trip_and_truncation() {
        let t = FrequencyTable::from_probabilities(-1, &[0.2, 0.7, 0.1]).unwrap();
        let syms: Vec<i32> = (0..500).map(|i| (i * 7 % 3) - 1).collect();
        let bytes = encode(&syms, std::iter::repeat_n(&t, syms.len())).unwrap();
        assert_eq!(decode(&bytes, std::iter::repeat_n(&t, syms.len())).unwrap(), syms);
        assert!(decode(&bytes[..bytes.len() - 1], std::iter::repeat_n(&t, syms.len())).is_err());
        assert!(decode(&bytes[..3], std::iter::repeat_n(&t, syms.len())).is_err());
    }
}
