use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HistogramError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Frequency of each photon count; `freq[k]` readouts produced `k` photons.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Histogram {
    freq: Vec<u64>,
}

impl Histogram {
    pub fn from_frequencies(mut freq: Vec<u64>) -> Self {
        while freq.last() == Some(&0) {
            freq.pop();
        }
        Self { freq }
    }

    pub fn from_samples<I: IntoIterator<Item = u32>>(samples: I) -> Self {
        let mut freq = Vec::new();
        for s in samples {
            let k = s as usize;
            if k >= freq.len() {
                freq.resize(k + 1, 0);
            }
            freq[k] += 1;
        }
        Self::from_frequencies(freq)
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.freq
    }

    /// `(k, n_k)` pairs with non-zero frequency.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.freq
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(k, &n)| (k as u64, n))
    }

    pub fn total(&self) -> u64 {
        self.freq.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        let n = self.total() as f64;
        self.iter().map(|(k, c)| k as f64 * c as f64).sum::<f64>() / n
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let n = self.total() as f64;
        let m = self.mean();
        self.iter().map(|(k, c)| c as f64 * (k as f64 - m).powi(2)).sum::<f64>() / (n - 1.0)
    }

    /// Factorial moment E[X(X-1)...(X-r+1)].
    pub fn factorial_moment(&self, r: u32) -> f64 {
        let n = self.total() as f64;
        self.iter()
            .map(|(k, c)| {
                let falling: f64 = (0..r).map(|j| k as f64 - f64::from(j)).product();
                c as f64 * falling
            })
            .sum::<f64>()
            / n
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "count,frequency")?;
        for (k, n) in self.freq.iter().enumerate() {
            writeln!(w, "{k},{n}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, HistogramError> {
        let mut freq = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("count")) {
                continue;
            }
            let parse_err = |reason: String| HistogramError::Parse { line: i + 1, reason };
            let (k, n) = line
                .split_once(',')
                .ok_or_else(|| parse_err("expected `count,frequency`".into()))?;
            let k: usize = k.trim().parse().map_err(|e| parse_err(format!("count: {e}")))?;
            let n: u64 = n.trim().parse().map_err(|e| parse_err(format!("frequency: {e}")))?;
            if k >= freq.len() {
                freq.resize(k + 1, 0);
            }
            freq[k] += n;
        }
        Ok(Self::from_frequencies(freq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_from_samples() {
        let h = Histogram::from_samples([0, 1, 1, 2, 6]);
        assert_eq!(h.total(), 5);
        assert!((h.mean() - 2.0).abs() < 1e-15);
        assert!((h.variance() - 5.5).abs() < 1e-12);
        // E[X(X-1)] = (0 + 0 + 0 + 2 + 30) / 5
        assert!((h.factorial_moment(2) - 6.4).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let h = Histogram::from_samples([0, 3, 3, 7]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(Histogram::read_csv(&buf[..]).unwrap(), h);
        let bad = b"count,frequency\n1;2\n";
        match Histogram::read_csv(&bad[..]) {
            Err(HistogramError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
